fn main() {
    std::process::exit(interclip_cli::run(std::env::args_os()));
}

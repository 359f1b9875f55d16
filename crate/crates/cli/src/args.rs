//! Command-line flags. Each flag overrides the configuration file only when
//! given explicitly; the defaults shown in `--help` are the built-in ones.

use std::path::PathBuf;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, Parser, Subcommand};
use interclip::model::{parse_lora_targets, InteractionMode};
use interclip::Result;

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "interclip-mep",
    version,
    about = "Multimodal sarcasm detection with interactive dual encoders and a memory-enhanced predictor"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic text-image XOR dataset and split it.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint plus run manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint, classifier-only or with the memory-enhanced predictor.
    Eval(EvalArgs),
    /// Check analytic gradients against finite differences on a micro model.
    Gradcheck(GradcheckArgs),
    /// Run the memory-enhanced predictor over a stream of stored predictions.
    MepReplay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON configuration file; flags override its values.
    #[arg(long, env = "INTERCLIP_MEP_CONFIG", value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    pub out: PathBuf,
    /// Print the effective configuration as JSON and exit.
    #[arg(long)]
    pub dump_config: bool,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of samples before splitting.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.0)]
    pub text_noise: f64,
    #[arg(long, default_value_t = 0.0)]
    pub image_noise: f64,
    /// Inject a label-correlated cue token into the text.
    #[arg(long)]
    pub shortcut: bool,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_value = "0.8,0.1,0.1")]
    pub fractions: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "t2v", value_parser = ["none", "t2v", "v2t", "tw"])]
    pub mode: String,
    #[arg(long, default_value_t = 2)]
    pub top_n: usize,
    #[arg(long, default_value_t = 4)]
    pub lora_rank: usize,
    /// Comma-separated subset of q,k,v,o.
    #[arg(long, default_value = "k,v,o")]
    pub lora_targets: String,
    #[arg(long, default_value_t = 64)]
    pub d_f: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Directory holding train.jsonl, val.jsonl and vocab.txt [default: the output directory].
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Learning rate of every non-LoRA trainable.
    #[arg(long, default_value_t = 2.5e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 5e-4)]
    pub lora_lr: f64,
    /// Memory size for the validation MEP score in the manifest.
    #[arg(long, default_value_t = 32)]
    pub memory_size: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Checkpoint manifest [default: <out>/checkpoint.json].
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Directory holding the split files [default: the output directory].
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
    pub split: String,
    /// Use the memory-enhanced predictor (default).
    #[arg(long, overrides_with = "no_mep")]
    pub mep: bool,
    /// Classifier-only predictions.
    #[arg(long, overrides_with = "mep")]
    pub no_mep: bool,
    /// Memory size L (>= 1).
    #[arg(long, default_value_t = 32)]
    pub memory_size: usize,
    /// Evaluate each memory size in a comma-separated list and mark the best.
    #[arg(long, value_delimiter = ',', value_name = "L,...")]
    pub sweep: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// JSONL stream of {"id", "probs", "feature", "label"?} records.
    #[arg(long, value_name = "PATH")]
    pub stream: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub memory_size: usize,
}

/// Which sources count as "given"; tests pass a predicate that accepts
/// defaults too, to check the flag defaults against the built-in config.
pub type Given<'a> = &'a dyn Fn(&str) -> bool;

pub fn explicit(m: &ArgMatches) -> impl Fn(&str) -> bool + '_ {
    move |id| m.value_source(id) == Some(ValueSource::CommandLine)
}

fn common(c: &CommonArgs, cfg: &mut RunConfig, given: Given<'_>) {
    if given("seed") {
        cfg.seed = c.seed;
    }
    if given("out") {
        cfg.paths.out = c.out.clone();
    }
}

fn model(a: &ModelArgs, cfg: &mut RunConfig, given: Given<'_>) -> Result<()> {
    if given("mode") {
        cfg.model.interaction_mode = a.mode.parse::<InteractionMode>()?;
    }
    if given("top_n") {
        cfg.model.top_n = a.top_n;
    }
    if given("lora_rank") {
        cfg.model.lora_rank = a.lora_rank;
        if a.lora_rank == 0 && !given("lora_targets") {
            cfg.model.lora_targets.clear();
        }
    }
    if given("lora_targets") {
        cfg.model.lora_targets = parse_lora_targets(&a.lora_targets)?;
    }
    if given("d_f") {
        cfg.model.d_f = a.d_f;
    }
    Ok(())
}

impl Command {
    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::GenData(a) => &a.common,
            Command::Train(a) => &a.common,
            Command::Eval(a) => &a.common,
            Command::Gradcheck(a) => &a.common,
            Command::MepReplay(a) => &a.common,
        }
    }

    /// Overlay the flags selected by `given` onto `cfg`.
    pub fn apply(&self, cfg: &mut RunConfig, given: Given<'_>) -> Result<()> {
        common(self.common(), cfg, given);
        match self {
            Command::GenData(a) => {
                if given("n") {
                    cfg.data.n_samples = a.n;
                }
                if given("text_noise") {
                    cfg.data.text_noise = a.text_noise;
                }
                if given("image_noise") {
                    cfg.data.image_noise = a.image_noise;
                }
                if given("shortcut") {
                    cfg.data.shortcut = a.shortcut;
                }
                if given("fractions") {
                    cfg.data.fractions = [a.fractions[0], a.fractions[1], a.fractions[2]];
                }
            }
            Command::Train(a) => {
                model(&a.model, cfg, given)?;
                if given("data") {
                    cfg.paths.data_dir = a.data.clone();
                }
                if given("epochs") {
                    cfg.training.epochs = a.epochs;
                }
                if given("batch_size") {
                    cfg.training.batch_size = a.batch_size;
                }
                if given("lr") {
                    cfg.optim.lr = a.lr;
                }
                if given("lora_lr") {
                    cfg.optim.lora_lr = a.lora_lr;
                }
                if given("memory_size") {
                    cfg.eval.memory_size = a.memory_size;
                }
            }
            Command::Eval(a) => {
                if given("checkpoint") {
                    cfg.paths.checkpoint = a.checkpoint.clone();
                }
                if given("data") {
                    cfg.paths.data_dir = a.data.clone();
                }
                if given("split") {
                    cfg.eval.split = a.split.clone();
                }
                if given("mep") || given("no_mep") {
                    cfg.eval.mep = !a.no_mep;
                }
                if given("memory_size") {
                    cfg.eval.memory_size = a.memory_size;
                }
                if given("sweep") {
                    cfg.eval.sweep = a.sweep.clone().unwrap_or_default();
                }
            }
            Command::Gradcheck(_) => {}
            Command::MepReplay(a) => {
                if given("stream") {
                    cfg.paths.stream = a.stream.clone();
                }
                if given("memory_size") {
                    cfg.eval.memory_size = a.memory_size;
                }
            }
        }
        Ok(())
    }
}

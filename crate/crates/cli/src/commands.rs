//! One function per subcommand. Each takes the effective configuration and
//! writes human-readable output to `out`.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use interclip::data::{
    gen_synthetic, load_jsonl, load_vocab, save_jsonl, save_vocab, sha256_hex, split, Dataset, Provenance,
};
use interclip::harness::{
    evaluate_stream, format_table, model_gradcheck, predict_dataset, sweep_memory, train, EpochRecord, EvalMode,
    MetricsReport, StepRecord, BATCH_SEED_SALT, GRADCHECK_TOL,
};
use interclip::mep::{load_replay, mep_run, write_predictions};
use interclip::model::{load_checkpoint, save_checkpoint, InteractionMode};
use interclip::{Error, Result};
use serde::Serialize;

use crate::config::{RunConfig, Snapshot};

pub const MANIFEST_FORMAT: &str = "interclip-run/1";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(io_err(path))
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

fn say(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))
}

/// Name and content hash of a file, independent of where it lives.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FileRef {
    pub name: String,
    pub sha256: String,
}

impl FileRef {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Ok(Self {
            name: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            sha256: sha256_hex(&bytes),
        })
    }
}

fn stats_table(parts: &[(&str, &Dataset)]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>8} {:>10} {:>14}",
        "split", "total", "sarcastic", "non-sarcastic"
    );
    let mut totals = [0usize; 3];
    for (name, d) in parts {
        let pos = d.samples.iter().filter(|x| x.label == Some(1)).count();
        let neg = d.samples.iter().filter(|x| x.label == Some(0)).count();
        let _ = writeln!(s, "{:<12} {:>8} {:>10} {:>14}", name, d.len(), pos, neg);
        totals[0] += d.len();
        totals[1] += pos;
        totals[2] += neg;
    }
    let _ = writeln!(s, "{:<12} {:>8} {:>10} {:>14}", "all", totals[0], totals[1], totals[2]);
    s
}

pub fn gen_data(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let full = gen_synthetic(&cfg.synth_spec())?;
    let (tr, va, te) = split(&full, cfg.data.fractions, cfg.seed)?;
    let dir = &cfg.paths.out;
    create_dir(dir)?;
    for (name, d) in [("train", &tr), ("val", &va), ("test", &te)] {
        save_jsonl(d, &dir.join(format!("{name}.jsonl")))?;
    }
    save_vocab(&full.vocab, &dir.join("vocab.txt"))?;
    say(out, &stats_table(&[("train", &tr), ("validation", &va), ("test", &te)]))
}

#[derive(Serialize)]
struct Seeds {
    model_init: u64,
    batch_order: u64,
}

#[derive(Serialize)]
struct TrainDatasets {
    train: Provenance,
    validation: Provenance,
    vocab: FileRef,
}

#[derive(Serialize)]
struct TrainMetrics {
    validation_classifier: Option<MetricsReport>,
    validation_mep: Option<MetricsReport>,
}

#[derive(Serialize)]
struct TrainManifest<'a> {
    format: &'static str,
    command: &'static str,
    config: Snapshot<'a>,
    seeds: Seeds,
    datasets: TrainDatasets,
    steps: usize,
    epochs: &'a [EpochRecord],
    final_metrics: TrainMetrics,
    checkpoint: FileRef,
    checkpoint_blob: FileRef,
}

fn load_split(dir: &Path, name: &str) -> Result<Dataset> {
    load_jsonl(&dir.join(format!("{name}.jsonl")))
}

pub fn train_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let dir = cfg.data_dir();
    let vocab_path = dir.join("vocab.txt");
    let vocab = load_vocab(&vocab_path)?;
    let tr = load_split(&dir, "train")?;
    let va = load_split(&dir, "val")?;
    let tc = cfg.train_config();
    let run = train::<f32>(&tc, &tr, Some(&va), &vocab)?;

    let mut text = String::new();
    let _ = writeln!(text, "{:<6} {:>10} {:>8}", "epoch", "mean_loss", "val_acc");
    for e in &run.epochs {
        let acc = e.val_accuracy.map_or("-".to_string(), |a| format!("{a:.4}"));
        let _ = writeln!(text, "{:<6} {:>10.5} {:>8}", e.epoch, e.mean_loss, acc);
    }

    let (validation_classifier, validation_mep) = if va.is_empty() {
        (None, None)
    } else {
        let labels = va.labels()?;
        let preds = predict_dataset(&run.model, &vocab, &va)?;
        let d_f = run.model.config().d_f;
        let cls = evaluate_stream(&preds, &labels, EvalMode::Classifier, d_f)?;
        let mep = match run.model.arch.projector {
            Some(_) => Some(evaluate_stream(
                &preds,
                &labels,
                EvalMode::Mep {
                    memory_size: cfg.eval.memory_size,
                },
                d_f,
            )?),
            None => None,
        };
        (Some(cls), mep)
    };

    let odir = &cfg.paths.out;
    create_dir(odir)?;
    let ckpt = odir.join("checkpoint.json");
    save_checkpoint(&run.model, &vocab, &ckpt)?;
    let mut losses = String::new();
    for s in &run.steps {
        losses.push_str(&serde_json::to_string::<StepRecord>(s)?);
        losses.push('\n');
    }
    write_file(&odir.join("losses.jsonl"), losses.as_bytes())?;

    let manifest = TrainManifest {
        format: MANIFEST_FORMAT,
        command: "train",
        config: cfg.snapshot(),
        seeds: Seeds {
            model_init: tc.seed,
            batch_order: tc.seed ^ BATCH_SEED_SALT,
        },
        datasets: TrainDatasets {
            train: tr.provenance.clone(),
            validation: va.provenance.clone(),
            vocab: FileRef::of(&vocab_path)?,
        },
        steps: run.steps.len(),
        epochs: &run.epochs,
        final_metrics: TrainMetrics {
            validation_classifier,
            validation_mep,
        },
        checkpoint: FileRef::of(&ckpt)?,
        checkpoint_blob: FileRef::of(&ckpt.with_extension("bin"))?,
    };
    write_json(&odir.join("manifest.json"), &manifest)?;
    let rows: Vec<MetricsReport> = [
        &manifest.final_metrics.validation_classifier,
        &manifest.final_metrics.validation_mep,
    ]
    .into_iter()
    .flatten()
    .cloned()
    .collect();
    if !rows.is_empty() {
        let _ = writeln!(text, "\nvalidation");
        text.push_str(&format_table(&rows, None));
    }
    say(out, &text)
}

#[derive(Serialize)]
struct EvalReport<'a> {
    format: &'static str,
    command: &'static str,
    checkpoint: FileRef,
    dataset: Provenance,
    split: &'a str,
    rows: Vec<MetricsReport>,
    best_memory_size: Option<usize>,
    /// Set when the best memory size was chosen on the labels it is scored on.
    selection_note: Option<String>,
}

pub fn eval_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let ckpt_path = cfg.checkpoint();
    let ckpt = load_checkpoint(&ckpt_path)?;
    let data = load_split(&cfg.data_dir(), &cfg.eval.split)?;
    let labels = data.labels()?;
    let preds = predict_dataset(&ckpt.model, &ckpt.vocab, &data)?;
    let d_f = ckpt.model.config().d_f;

    let (rows, best, note) = if !cfg.eval.sweep.is_empty() {
        let s = sweep_memory(&preds, &labels, &cfg.eval.sweep, d_f)?;
        let note = format!(
            "best memory size selected on {} labels{}",
            cfg.eval.split,
            if cfg.eval.split == "test" {
                "; this leaks test labels into the reported score"
            } else {
                ""
            }
        );
        (s.rows, Some(s.best_memory_size), Some(note))
    } else {
        let mode = if cfg.eval.mep {
            EvalMode::Mep {
                memory_size: cfg.eval.memory_size,
            }
        } else {
            EvalMode::Classifier
        };
        (vec![evaluate_stream(&preds, &labels, mode, d_f)?], None, None)
    };
    let marker = best.and_then(|b| rows.iter().position(|r| r.mode == EvalMode::Mep { memory_size: b }));
    let mut text = format_table(&rows, marker);
    if let Some(n) = &note {
        let _ = writeln!(text, "* {n}");
    }

    let report = EvalReport {
        format: MANIFEST_FORMAT,
        command: "eval",
        checkpoint: FileRef::of(&ckpt_path)?,
        dataset: data.provenance.clone(),
        split: &cfg.eval.split,
        rows,
        best_memory_size: best,
        selection_note: note,
    };
    let odir = &cfg.paths.out;
    create_dir(odir)?;
    let stem = format!("report_{}", cfg.eval.split);
    write_json(&odir.join(format!("{stem}.json")), &report)?;
    write_file(&odir.join(format!("{stem}.txt")), text.as_bytes())?;
    say(out, &text)
}

pub struct GradcheckOutcome {
    pub mode: InteractionMode,
    pub max_rel_error: f64,
    pub entries: usize,
    pub worst: Option<(String, usize)>,
}

impl GradcheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOL
    }
}

/// Finite-difference check for all four interaction modes.
pub fn gradcheck_all(seed: u64, corrupt: bool) -> Result<Vec<GradcheckOutcome>> {
    InteractionMode::ALL
        .into_iter()
        .map(|mode| {
            let r = model_gradcheck(mode, seed, corrupt)?;
            Ok(GradcheckOutcome {
                mode,
                max_rel_error: r.max_rel_error,
                entries: r.entries_checked,
                worst: r.worst,
            })
        })
        .collect()
}

/// Returns whether every mode passed.
pub fn gradcheck_cmd(cfg: &RunConfig, corrupt: bool, out: &mut dyn Write) -> Result<bool> {
    let start = Instant::now();
    let results = gradcheck_all(cfg.seed, corrupt)?;
    let mut text = String::new();
    for r in &results {
        let worst = r
            .worst
            .as_ref()
            .map_or(String::new(), |(n, i)| format!(" worst {n}[{i}]"));
        let _ = writeln!(
            text,
            "{:<5} max_rel_error {:.3e} over {} entries{worst}  {}",
            r.mode.to_string(),
            r.max_rel_error,
            r.entries,
            if r.passed() { "PASS" } else { "FAIL" }
        );
    }
    let ok = results.iter().all(GradcheckOutcome::passed);
    let _ = writeln!(
        text,
        "gradcheck {} (tolerance {GRADCHECK_TOL:e}, {:.1}s)",
        if ok { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    say(out, &text)?;
    Ok(ok)
}

pub fn mep_replay_cmd(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let path = cfg
        .paths
        .stream
        .clone()
        .ok_or_else(|| Error::Config(vec!["mep-replay needs --stream PATH".into()]))?;
    let records = load_replay(&path)?;
    let d_f = records.first().map_or(1, |r| r.feature.len());
    let stream: Vec<([f64; 2], Vec<f64>)> = records.iter().map(|r| (r.probs, r.feature.clone())).collect();
    let preds = mep_run(&stream, cfg.eval.memory_size, d_f).map_err(|e| match e {
        Error::Invalid(msg) | Error::Shape { detail: msg, .. } => Error::Invalid(format!("{}: {msg}", path.display())),
        other => other,
    })?;

    let odir = &cfg.paths.out;
    create_dir(odir)?;
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    write_predictions(&odir.join("predictions.jsonl"), &ids, &preds)?;

    let mut text = String::new();
    for (id, p) in ids.iter().zip(&preds) {
        let _ = writeln!(
            text,
            "{id}\t{}\t[{:.4}, {:.4}]",
            p.final_label, p.final_probs[0], p.final_probs[1]
        );
    }
    let labelled: Option<Vec<u8>> = records.iter().map(|r| r.label).collect();
    if let Some(labels) = labelled.filter(|l| !l.is_empty()) {
        let predicted: Vec<u8> = preds.iter().map(|p| p.final_label).collect();
        let m = interclip::harness::metrics(
            &predicted,
            &labels,
            EvalMode::Mep {
                memory_size: cfg.eval.memory_size,
            },
        )?;
        text.push('\n');
        text.push_str(&format_table(std::slice::from_ref(&m), None));
        write_json(&odir.join("replay_metrics.json"), &m)?;
    }
    say(out, &text)
}

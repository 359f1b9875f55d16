use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MepPrediction;
use crate::error::{Error, Result};

/// One line of an embedding-stream replay file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayRecord {
    pub id: String,
    pub probs: [f64; 2],
    pub feature: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
}

pub fn load_replay(path: &Path) -> Result<Vec<ReplayRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        };
        let rec: ReplayRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if matches!(rec.label, Some(l) if l > 1) {
            return Err(parse_err("label must be 0 or 1".into()));
        }
        if let Some(d) = out.first().map(|r: &ReplayRecord| r.feature.len()) {
            if rec.feature.len() != d {
                return Err(parse_err(format!(
                    "feature length {} differs from {d}",
                    rec.feature.len()
                )));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    id: &'a str,
    pseudo_label: u8,
    entropy: f64,
    classifier_probs: [f64; 2],
    final_probs: [f64; 2],
    final_label: u8,
}

pub fn write_predictions(path: &Path, ids: &[String], preds: &[MepPrediction<f64>]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (id, p) in ids.iter().zip(preds) {
        let line = PredictionLine {
            id,
            pseudo_label: p.pseudo_label,
            entropy: p.entropy,
            classifier_probs: p.classifier_probs,
            final_probs: p.final_probs,
            final_label: p.final_label,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

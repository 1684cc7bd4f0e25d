//! Diagnostics: classification stability, head/medium/tail accuracy,
//! pseudo-label statistics and the JSONL/CSV report files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LossBreakdown;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Class grouping by labeled per-class count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    /// Classes with at least this many labeled samples are head classes.
    pub head_min: usize,
    /// Classes with at most this many labeled samples are tail classes.
    pub tail_max: usize,
}

impl Default for GroupSpec {
    fn default() -> Self {
        Self {
            head_min: 100,
            tail_max: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Head,
    Medium,
    Tail,
}

impl GroupSpec {
    pub fn validate(&self) -> Result<()> {
        if self.head_min <= self.tail_max {
            return Err(Error::InvalidParameter(format!(
                "head_min ({}) must exceed tail_max ({})",
                self.head_min, self.tail_max
            )));
        }
        Ok(())
    }

    pub fn group_of(&self, labeled_count: usize) -> Group {
        if labeled_count >= self.head_min {
            Group::Head
        } else if labeled_count <= self.tail_max {
            Group::Tail
        } else {
            Group::Medium
        }
    }
}

/// How per-sample correctness enters the stability metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilityMode {
    /// Softmax probability of the true class.
    Probability,
    /// 1 if the prediction is correct, else 0.
    Indicator,
}

impl std::str::FromStr for StabilityMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probability" => Ok(Self::Probability),
            "indicator" => Ok(Self::Indicator),
            other => Err(Error::Config(format!(
                "unknown stability mode {other:?} (expected probability|indicator)"
            ))),
        }
    }
}

impl std::fmt::Display for StabilityMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Probability => "probability",
            Self::Indicator => "indicator",
        })
    }
}

/// `S = 1 − sqrt((1/N) Σ (p_i − p̄)²)`
pub fn classification_stability(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::InvalidParameter("stability of an empty set".into()));
    }
    let n = p.len() as f64;
    let mean = p.iter().sum::<f64>() / n;
    let var = p.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok(1.0 - var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    /// Mean of per-class accuracies within each group; `None` when the group
    /// has no class with test samples.
    pub head: Option<f64>,
    pub medium: Option<f64>,
    pub tail: Option<f64>,
    /// Micro accuracy over all samples.
    pub overall: f64,
}

pub fn per_class_accuracy(
    predictions: &[usize],
    truths: &[usize],
    classes: usize,
) -> Vec<Option<f64>> {
    let mut hit = vec![0usize; classes];
    let mut tot = vec![0usize; classes];
    for (&p, &t) in predictions.iter().zip(truths) {
        tot[t] += 1;
        if p == t {
            hit[t] += 1;
        }
    }
    hit.iter()
        .zip(&tot)
        .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
        .collect()
}

pub fn group_accuracy(
    predictions: &[usize],
    truths: &[usize],
    labeled_counts: &[usize],
    spec: &GroupSpec,
) -> GroupAccuracy {
    let classes = labeled_counts.len();
    let per_class = per_class_accuracy(predictions, truths, classes);
    let macro_of = |g: Group| {
        let accs: Vec<f64> = (0..classes)
            .filter(|&c| spec.group_of(labeled_counts[c]) == g)
            .filter_map(|c| per_class[c])
            .collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    };
    let correct = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| p == t)
        .count();
    GroupAccuracy {
        head: macro_of(Group::Head),
        medium: macro_of(Group::Medium),
        tail: macro_of(Group::Tail),
        overall: if truths.is_empty() {
            0.0
        } else {
            correct as f64 / truths.len() as f64
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelStats {
    /// Pseudo-label counts over samples that pass the mask.
    pub histogram: Vec<usize>,
    pub masked_in: usize,
    /// Masked-in samples whose pseudo-label is wrong.
    pub false_count: usize,
    /// Mean confidence over the false set, 0 when it is empty.
    pub mean_false_confidence: f64,
}

pub fn pseudo_label_stats(
    pseudo_labels: &[usize],
    confidences: &[f64],
    truths: &[usize],
    mask: &[bool],
    classes: usize,
) -> PseudoLabelStats {
    let mut histogram = vec![0; classes];
    let mut masked_in = 0;
    let mut false_count = 0;
    let mut false_conf = 0.0;
    for i in 0..pseudo_labels.len() {
        if !mask[i] {
            continue;
        }
        masked_in += 1;
        histogram[pseudo_labels[i]] += 1;
        if pseudo_labels[i] != truths[i] {
            false_count += 1;
            false_conf += confidences[i];
        }
    }
    PseudoLabelStats {
        histogram,
        masked_in,
        false_count,
        mean_false_confidence: if false_count == 0 {
            0.0
        } else {
            false_conf / false_count as f64
        },
    }
}

/// One evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub arm: String,
    pub seed: u64,
    pub iteration: u64,
    pub accuracy: f64,
    pub head_accuracy: Option<f64>,
    pub medium_accuracy: Option<f64>,
    pub tail_accuracy: Option<f64>,
    /// Accuracy of the probe logits alone on the same test set.
    pub probe_accuracy: f64,
    pub stability: f64,
    pub pl_histogram: Vec<usize>,
    pub pl_masked_in: usize,
    pub pl_false_count: usize,
    pub pl_false_confidence: f64,
    /// Fraction of the unlabeled pool whose pseudo-label passes the mask.
    pub mask_pass_rate: f64,
    /// Mean loss terms over the steps since the previous record.
    pub loss: LossBreakdown,
    /// Mean mask pass rate over the training batches since the previous record.
    pub train_mask_rate: f64,
    /// Effective configuration, key by key.
    pub config: BTreeMap<String, String>,
}

const CSV_FIXED_COLUMNS: [&str; 19] = [
    "schema_version",
    "arm",
    "seed",
    "iteration",
    "accuracy",
    "head_accuracy",
    "medium_accuracy",
    "tail_accuracy",
    "probe_accuracy",
    "stability",
    "pl_masked_in",
    "pl_false_count",
    "pl_false_confidence",
    "mask_pass_rate",
    "loss_labeled",
    "loss_unlabeled",
    "loss_orthogonal",
    "loss_total",
    "train_mask_rate",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV text for a report series: fixed columns then `pl_hist_<k>` per class.
pub fn reports_to_csv(series: &[RunReport]) -> String {
    let classes = series.first().map_or(0, |r| r.pl_histogram.len());
    let mut header: Vec<String> = CSV_FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..classes).map(|k| format!("pl_hist_{k}")));
    let mut out = header.join(",");
    out.push('\n');
    for r in series {
        let mut cells = vec![
            r.schema_version.to_string(),
            r.arm.clone(),
            r.seed.to_string(),
            r.iteration.to_string(),
            r.accuracy.to_string(),
            opt(r.head_accuracy),
            opt(r.medium_accuracy),
            opt(r.tail_accuracy),
            r.probe_accuracy.to_string(),
            r.stability.to_string(),
            r.pl_masked_in.to_string(),
            r.pl_false_count.to_string(),
            r.pl_false_confidence.to_string(),
            r.mask_pass_rate.to_string(),
            r.loss.labeled.to_string(),
            r.loss.unlabeled.to_string(),
            r.loss.orthogonal.to_string(),
            r.loss.total.to_string(),
            r.train_mask_rate.to_string(),
        ];
        cells.extend(r.pl_histogram.iter().map(|h| h.to_string()));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn reports_to_jsonl(series: &[RunReport]) -> Result<String> {
    let mut out = String::new();
    for r in series {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub jsonl: PathBuf,
    pub csv: PathBuf,
}

/// Writes `<stem>.jsonl` and `<stem>.csv` into `dir`.
pub fn emit_report(series: &[RunReport], dir: &Path, stem: &str) -> Result<ReportFiles> {
    if series.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot emit an empty report series".into(),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let jsonl = dir.join(format!("{stem}.jsonl"));
    let csv = dir.join(format!("{stem}.csv"));
    write_atomic(&jsonl, reports_to_jsonl(series)?.as_bytes())?;
    write_atomic(&csv, reports_to_csv(series).as_bytes())?;
    Ok(ReportFiles { jsonl, csv })
}

pub fn load_reports(path: &Path) -> Result<Vec<RunReport>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

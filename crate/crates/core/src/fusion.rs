//! Dual logit fusion: similarity logits against the textual prototypes,
//! range alignment onto the probe logits, convex fusion, pseudo-labels and
//! the logit-adjusted training losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::model::{self, LossBatch, LossBreakdown, LossConfig, ModelParams};
use crate::prototypes::TextPrototypes;

/// Which weak-branch probabilities gate the consistency loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskSource {
    Fused,
    Probe,
}

impl std::str::FromStr for MaskSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fused" => Ok(Self::Fused),
            "probe" => Ok(Self::Probe),
            other => Err(Error::Config(format!(
                "unknown mask source {other:?} (expected fused|probe)"
            ))),
        }
    }
}

impl std::fmt::Display for MaskSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Fused => "fused",
            Self::Probe => "probe",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Weight `η` of the probe logits in the fusion.
    pub eta: f64,
    pub temperature: f64,
    /// Confidence threshold `τ`; a pseudo-label passes when its confidence
    /// is strictly greater.
    pub mask_threshold: f64,
    /// Logit-adjustment strength `τ_la` applied to the labeled loss.
    pub la_strength: f64,
    /// Labeled class prior `P_l`. Filled from the split at run time.
    pub class_prior: Vec<f64>,
    /// Similarity-logit ranges at or below this fall back to a constant.
    pub epsilon_range: f64,
    pub mask_source: MaskSource,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            eta: 0.7,
            temperature: 0.05,
            mask_threshold: 0.95,
            la_strength: 1.0,
            class_prior: Vec::new(),
            epsilon_range: 1e-12,
            mask_source: MaskSource::Fused,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidParameter(format!(
                "eta must lie in [0,1], got {}",
                self.eta
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.mask_threshold >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mask threshold must be >= 0, got {}",
                self.mask_threshold
            )));
        }
        if !(self.la_strength >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "logit adjustment strength must be >= 0, got {}",
                self.la_strength
            )));
        }
        if !self.class_prior.is_empty() {
            let sum: f64 = self.class_prior.iter().sum();
            if self.class_prior.iter().any(|&p| !(p > 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(
                    "class prior must be strictly positive and sum to 1".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Class prior from per-class labeled counts.
pub fn prior_from_counts(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// `p^t_k = ⟨z, c_t^k⟩ / T`
pub fn text_logits(z: &[f64], tp: &TextPrototypes, temperature: f64) -> Vec<f64> {
    tp.protos
        .iter_rows()
        .map(|c| linalg::dot(z, c) / temperature)
        .collect()
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

/// Maps `p^t` affinely onto the range of `p^v`:
/// `β·(p^t − min p^t) + min p^v` with `β = range(p^v) / range(p^t)`.
///
/// A similarity range at or below `epsilon_range` yields the constant vector
/// `mean(p^v)`.
pub fn align_logits(pt: &[f64], pv: &[f64], epsilon_range: f64) -> Vec<f64> {
    let (t_lo, t_hi) = min_max(pt);
    let (v_lo, v_hi) = min_max(pv);
    let t_range = t_hi - t_lo;
    if !(t_range > epsilon_range) {
        let mean = pv.iter().sum::<f64>() / pv.len() as f64;
        return vec![mean; pt.len()];
    }
    let beta = (v_hi - v_lo) / t_range;
    pt.iter()
        .map(|&t| {
            // Pin the extremes so the range identity is exact.
            if t == t_hi {
                v_hi
            } else if t == t_lo {
                v_lo
            } else {
                beta * (t - t_lo) + v_lo
            }
        })
        .collect()
}

/// `η·p^v + (1 − η)·p̂^t`. The endpoints return the inputs bit for bit.
pub fn fuse(pv: &[f64], pt_aligned: &[f64], eta: f64) -> Vec<f64> {
    if eta == 1.0 {
        return pv.to_vec();
    }
    if eta == 0.0 {
        return pt_aligned.to_vec();
    }
    pv.iter()
        .zip(pt_aligned)
        .map(|(&v, &t)| eta * v + (1.0 - eta) * t)
        .collect()
}

/// Arg-max class (lowest index on ties) and its softmax probability.
pub fn pseudo_label(logits: &[f64]) -> (usize, f64) {
    let probs = linalg::softmax(logits);
    let k = linalg::argmax(logits);
    (k, probs[k])
}

/// Cross-entropy of `softmax(logits + τ_la·log P_l)` against `y`, with its
/// gradient w.r.t. the unadjusted logits.
pub fn adjusted_ce_labeled(
    logits: &[f64],
    y: usize,
    prior: &[f64],
    la_strength: f64,
) -> (f64, Vec<f64>) {
    let adjusted: Vec<f64> = if la_strength == 0.0 || prior.is_empty() {
        logits.to_vec()
    } else {
        logits
            .iter()
            .zip(prior)
            .map(|(&l, &p)| l + la_strength * p.ln())
            .collect()
    };
    let loss = linalg::log_sum_exp(&adjusted) - adjusted[y];
    let mut grad = linalg::softmax(&adjusted);
    grad[y] -= 1.0;
    (loss, grad)
}

/// `(1/B_u) Σ_j mask_j · CE(softmax(strong_j), q̃_j)` and its gradient rows.
/// Masked-out rows contribute exactly zero.
pub fn consistency_loss(strong_logits: &Matrix, targets: &[usize], mask: &[bool]) -> (f64, Matrix) {
    let b = strong_logits.rows();
    let mut grads = Matrix::zeros(b, strong_logits.cols());
    if b == 0 {
        return (0.0, grads);
    }
    let inv = 1.0 / b as f64;
    let mut loss = 0.0;
    for j in 0..b {
        if !mask[j] {
            continue;
        }
        let row = strong_logits.row(j);
        loss += linalg::log_sum_exp(row) - row[targets[j]];
        let mut g = linalg::softmax(row);
        g[targets[j]] -= 1.0;
        for (dst, gi) in grads.row_mut(j).iter_mut().zip(g) {
            *dst = gi * inv;
        }
    }
    (loss * inv, grads)
}

/// Every weak-branch quantity for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitBundle {
    pub p_v: Vec<f64>,
    pub p_t: Vec<f64>,
    pub p_t_aligned: Vec<f64>,
    pub p_fused: Vec<f64>,
    pub pseudo_label: usize,
    /// Max softmax entry of the logits selected by [`MaskSource`].
    pub confidence: f64,
    pub mask_pass: bool,
}

/// Weak-branch pass on an adapted feature `z`.
pub fn weak_branch(
    z: &[f64],
    params: &ModelParams,
    tp: &TextPrototypes,
    cfg: &FusionConfig,
) -> LogitBundle {
    let p_v = model::probe_logits(params, z);
    let p_t = text_logits(z, tp, cfg.temperature);
    let p_t_aligned = align_logits(&p_t, &p_v, cfg.epsilon_range);
    let p_fused = fuse(&p_v, &p_t_aligned, cfg.eta);
    let (pseudo_label, fused_conf) = pseudo_label(&p_fused);
    let confidence = match cfg.mask_source {
        MaskSource::Fused => fused_conf,
        MaskSource::Probe => linalg::softmax(&p_v)[linalg::argmax(&p_v)],
    };
    LogitBundle {
        mask_pass: confidence > cfg.mask_threshold,
        p_v,
        p_t,
        p_t_aligned,
        p_fused,
        pseudo_label,
        confidence,
    }
}

/// Total objective with its per-term breakdown (no gradients).
pub fn total_loss(
    params: &ModelParams,
    batch: &LossBatch,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    model::loss(params, batch, cfg)
}

/// Test-time logits: adapted feature, probe and similarity logits, aligned
/// and fused. No masking and no logit adjustment.
pub fn inference_logits(
    x: &[f64],
    params: &ModelParams,
    tp: &TextPrototypes,
    cfg: &FusionConfig,
) -> Result<Vec<f64>> {
    let z = model::forward_features(params, x)?;
    let p_v = model::probe_logits(params, &z);
    if cfg.eta == 1.0 {
        return Ok(p_v);
    }
    let p_t = text_logits(&z, tp, cfg.temperature);
    Ok(fuse(
        &p_v,
        &align_logits(&p_t, &p_v, cfg.epsilon_range),
        cfg.eta,
    ))
}

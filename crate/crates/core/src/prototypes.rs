//! Prototype adaptive fitting: textual and visual class prototypes, the
//! pseudo-label distribution estimate, the confidence-aware momentum update
//! and the orthogonality loss.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{self, EmbeddingSet};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::RunRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    File,
    Synthetic,
}

/// Textual prototypes `C_t`, one unit row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct TextPrototypes {
    pub protos: Matrix,
    pub provenance: Provenance,
    /// Number of momentum updates skipped because the combination vanished.
    pub degeneracies: u64,
}

impl TextPrototypes {
    pub fn new(mut protos: Matrix, provenance: Provenance) -> Result<Self> {
        for k in 0..protos.rows() {
            if linalg::normalize_in_place(protos.row_mut(k)).is_none() {
                return Err(Error::DegenerateFeature(format!(
                    "text prototype {k} is the zero vector"
                )));
            }
        }
        Ok(Self {
            protos,
            provenance,
            degeneracies: 0,
        })
    }

    /// Loads prototypes from an embedding file: exactly `C` labeled rows with
    /// row `k` labeled `k`.
    pub fn from_embedding_set(set: &EmbeddingSet, classes: usize, dim: usize) -> Result<Self> {
        if set.dim() != dim || set.len() != classes || set.class_count() != classes {
            return Err(Error::DimensionMismatch(format!(
                "text prototypes are {}x{} (C={}), expected {classes}x{dim}",
                set.len(),
                set.dim(),
                set.class_count()
            )));
        }
        let labels = set.labels().ok_or_else(|| {
            Error::InvalidParameter("text prototype file must carry labels".into())
        })?;
        if let Some((k, &y)) = labels.iter().enumerate().find(|&(k, &y)| y as usize != k) {
            return Err(Error::InvalidParameter(format!(
                "text prototype row {k} is labeled {y}"
            )));
        }
        Self::new(set.to_matrix(), Provenance::File)
    }

    pub fn load(path: impl AsRef<std::path::Path>, classes: usize, dim: usize) -> Result<Self> {
        Self::from_embedding_set(&data::load_embeddings(path)?, classes, dim)
    }

    pub fn to_embedding_set(&self) -> Result<EmbeddingSet> {
        let c = self.protos.rows();
        EmbeddingSet::from_matrix(&self.protos, Some((0..c as u32).collect()), c)
    }

    /// Random prototypes with no relation to any data: orthonormal rows when
    /// `dim >= classes`.
    pub fn synthetic(classes: usize, dim: usize, rng: &mut RunRng) -> Result<Self> {
        Self::new(
            data::synthetic_class_means(classes, dim, rng)?,
            Provenance::Synthetic,
        )
    }

    /// Prototypes that imitate a text encoder aligned with the visual
    /// classes: each class mean is perturbed by `N(0, noise²)` per coordinate
    /// and the rows are then Gram–Schmidt orthonormalized in class order.
    pub fn synthetic_aligned(means: &Matrix, noise: f64, rng: &mut RunRng) -> Result<Self> {
        let (classes, dim) = means.shape();
        let mut protos = Matrix::zeros(classes, dim);
        for k in 0..classes {
            let mut v: Vec<f64> = means
                .row(k)
                .iter()
                .map(|&m| m + noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            if dim >= classes {
                for j in 0..k {
                    let proj = linalg::dot(&v, protos.row(j));
                    linalg::axpy(-proj, protos.row(j), &mut v);
                }
            }
            if linalg::normalize_in_place(&mut v).is_none() {
                return Err(Error::DegenerateFeature(format!(
                    "aligned text prototype {k} collapsed"
                )));
            }
            protos.row_mut(k).copy_from_slice(&v);
        }
        Self::new(protos, Provenance::Synthetic)
    }

    pub fn classes(&self) -> usize {
        self.protos.rows()
    }
}

/// EMA of per-class batch feature means, `C_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualPrototypes {
    pub protos: Matrix,
    pub seen: Vec<bool>,
}

impl VisualPrototypes {
    /// Starts every class at its textual prototype.
    pub fn from_text(text: &TextPrototypes) -> Self {
        Self {
            protos: text.protos.clone(),
            seen: vec![false; text.classes()],
        }
    }
}

/// EMA estimate `P_u` of the pseudo-label class distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoDistribution {
    pub probs: Vec<f64>,
}

impl PseudoDistribution {
    pub fn uniform(classes: usize) -> Self {
        Self {
            probs: vec![1.0 / classes as f64; classes],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PafConfig {
    /// Weighting `μ` of the confidence-aware coefficients.
    pub mu: f64,
    pub visual_momentum: f64,
    pub dist_momentum: f64,
    pub orthogonal_weight: f64,
    /// Fold the current batch into `P_u` before computing `α` (true) or after.
    pub pu_before_alpha: bool,
}

impl Default for PafConfig {
    fn default() -> Self {
        Self {
            mu: 0.9,
            visual_momentum: 0.9,
            dist_momentum: 0.99,
            orthogonal_weight: 1.0,
            pu_before_alpha: true,
        }
    }
}

impl PafConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::InvalidParameter(format!(
                "mu must lie in [0,1], got {}",
                self.mu
            )));
        }
        for (name, m) in [
            ("visual_momentum", self.visual_momentum),
            ("dist_momentum", self.dist_momentum),
        ] {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0,1), got {m}"
                )));
            }
        }
        if !(self.orthogonal_weight >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "orthogonal_weight must be >= 0, got {}",
                self.orthogonal_weight
            )));
        }
        Ok(())
    }
}

/// Everything the prototype machinery carries between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeState {
    pub text: TextPrototypes,
    pub visual: VisualPrototypes,
    pub pseudo: PseudoDistribution,
}

impl PrototypeState {
    pub fn new(text: TextPrototypes) -> Self {
        let classes = text.classes();
        Self {
            visual: VisualPrototypes::from_text(&text),
            pseudo: PseudoDistribution::uniform(classes),
            text,
        }
    }
}

/// Smallest mean norm for which a class counts as present. Below it the
/// samples cancel and the direction is undefined.
pub const MIN_MEAN_NORM: f64 = 1e-9;

/// Unnormalized class sums plus bookkeeping shared with the backward pass.
pub(crate) struct ClassMeans {
    pub means: Matrix,
    pub present: Vec<bool>,
    pub counts: Vec<usize>,
    /// ℓ2 norm of the raw (unnormalized) mean.
    pub raw_norms: Vec<f64>,
}

pub(crate) fn class_means_detailed(z: &Matrix, labels: &[usize], classes: usize) -> ClassMeans {
    let dim = z.cols();
    let mut means = Matrix::zeros(classes, dim);
    let mut counts = vec![0usize; classes];
    for (row, &y) in z.iter_rows().zip(labels) {
        linalg::axpy(1.0, row, means.row_mut(y));
        counts[y] += 1;
    }
    let mut present = vec![false; classes];
    let mut raw_norms = vec![0.0; classes];
    for k in 0..classes {
        if counts[k] == 0 {
            continue;
        }
        let inv = 1.0 / counts[k] as f64;
        let row = means.row_mut(k);
        row.iter_mut().for_each(|x| *x *= inv);
        let n = linalg::norm(row);
        if n > MIN_MEAN_NORM {
            row.iter_mut().for_each(|x| *x /= n);
            present[k] = true;
            raw_norms[k] = n;
        } else {
            row.fill(0.0);
        }
    }
    ClassMeans {
        means,
        present,
        counts,
        raw_norms,
    }
}

/// Normalized per-class means of `z`. Classes absent from the batch, or whose
/// samples cancel to the zero vector, are flagged not present and their row
/// is left at zero.
pub fn batch_class_means(z: &Matrix, labels: &[usize], classes: usize) -> (Matrix, Vec<bool>) {
    let m = class_means_detailed(z, labels, classes);
    (m.means, m.present)
}

/// `c_v ← normalize((1 − m)·mean + m·c_v)` for present classes.
pub fn update_visual(vp: &mut VisualPrototypes, means: &Matrix, present: &[bool], momentum: f64) {
    for (k, _) in present.iter().enumerate().filter(|(_, &p)| p) {
        let mut v: Vec<f64> = means
            .row(k)
            .iter()
            .zip(vp.protos.row(k))
            .map(|(&m, &c)| (1.0 - momentum) * m + momentum * c)
            .collect();
        if linalg::normalize_in_place(&mut v).is_some() {
            vp.protos.row_mut(k).copy_from_slice(&v);
            vp.seen[k] = true;
        }
    }
}

/// `P_u ← normalize((1 − m)·mean(probs) + m·P_u)`. An empty batch is a no-op.
pub fn update_pseudo_distribution(pd: &mut PseudoDistribution, probs: &Matrix, momentum: f64) {
    if probs.rows() == 0 {
        return;
    }
    let mut mean = vec![0.0; probs.cols()];
    for row in probs.iter_rows() {
        linalg::axpy(1.0, row, &mut mean);
    }
    let inv = 1.0 / probs.rows() as f64;
    for (p, m) in pd.probs.iter_mut().zip(&mean) {
        *p = (1.0 - momentum) * m * inv + momentum * *p;
    }
    let total: f64 = pd.probs.iter().sum();
    if total > 0.0 {
        pd.probs.iter_mut().for_each(|p| *p /= total);
    }
}

/// `α_k = μ · P_u^k / max_i P_u^i`.
pub fn alpha_coefficients(pu: &[f64], mu: f64) -> Result<Vec<f64>> {
    let max = pu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::InvalidParameter(
            "pseudo-label distribution has no positive entry".into(),
        ));
    }
    Ok(pu.iter().map(|&p| mu * (p / max)).collect())
}

/// `c_t^k ← normalize((1 − α_k)·c_t^k + α_k·c_v^k)`.
///
/// `α_k = 0` leaves the row untouched and `α_k = 1` copies `c_v^k`. A
/// combination that vanishes keeps the previous row and bumps
/// [`TextPrototypes::degeneracies`].
pub fn paf_update_text(tp: &mut TextPrototypes, vp: &VisualPrototypes, alpha: &[f64]) {
    for (k, &a) in alpha.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        if a == 1.0 {
            tp.protos.row_mut(k).copy_from_slice(vp.protos.row(k));
            continue;
        }
        let mut v: Vec<f64> = tp
            .protos
            .row(k)
            .iter()
            .zip(vp.protos.row(k))
            .map(|(&t, &c)| (1.0 - a) * t + a * c)
            .collect();
        if linalg::norm(&v) > MIN_MEAN_NORM && linalg::normalize_in_place(&mut v).is_some() {
            tp.protos.row_mut(k).copy_from_slice(&v);
        } else {
            tp.degeneracies += 1;
        }
    }
}

/// Mean squared deviation of the Gram matrix from the identity, with its
/// gradient w.r.t. the rows:
///
/// `L = (1/K²) Σ_ij (⟨m_i, m_j⟩ − δ_ij)²`, `∂L/∂m_k = (4/K²) Σ_j G_kj m_j`.
pub fn orthogonal_loss(means: &Matrix) -> (f64, Matrix) {
    let k = means.rows();
    let mut grad = Matrix::zeros(k, means.cols());
    if k == 0 {
        return (0.0, grad);
    }
    let scale = 1.0 / (k * k) as f64;
    let mut loss = 0.0;
    for i in 0..k {
        for j in 0..k {
            let g = linalg::dot(means.row(i), means.row(j)) - if i == j { 1.0 } else { 0.0 };
            loss += g * g;
            let row_j = means.row(j).to_vec();
            linalg::axpy(4.0 * scale * g, &row_j, grad.row_mut(i));
        }
    }
    (loss * scale, grad)
}

//! Embedding sets, long-tailed split construction, synthetic providers and
//! embedding-space augmentation.

mod io;

pub use io::{
    decode_embeddings, encode_embeddings, load_embeddings, load_embeddings_csv, save_embeddings,
    save_embeddings_csv, EMBEDDING_MAGIC, EMBEDDING_VERSION,
};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Shortfall};
use crate::linalg::{self, Matrix};
use crate::prototypes;
use crate::rng::RunRng;

/// N×D feature matrix with optional labels.
///
/// Features are held in single precision, the precision of the on-disk
/// format, so a set survives save/load unchanged. Training widens rows to
/// `f64` on use.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    features: Vec<f32>,
    dim: usize,
    labels: Option<Vec<u32>>,
    class_count: usize,
}

impl EmbeddingSet {
    pub fn new(
        features: Vec<f32>,
        dim: usize,
        labels: Option<Vec<u32>>,
        class_count: usize,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::DimensionMismatch(format!(
                "embedding dimension must be at least 2, got {dim}"
            )));
        }
        if features.is_empty() || !features.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch(format!(
                "{} feature values do not form rows of length {dim}",
                features.len()
            )));
        }
        let n = features.len() / dim;
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{} labels for {n} rows",
                    l.len()
                )));
            }
            if let Some(bad) = l.iter().find(|&&y| y as usize >= class_count) {
                return Err(Error::InvalidParameter(format!(
                    "label {bad} out of range for {class_count} classes"
                )));
            }
        }
        Ok(Self {
            features,
            dim,
            labels,
            class_count,
        })
    }

    pub fn from_matrix(m: &Matrix, labels: Option<Vec<u32>>, class_count: usize) -> Result<Self> {
        let features = m.as_slice().iter().map(|&x| x as f32).collect();
        Self::new(features, m.cols(), labels, class_count)
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&x| x as f64).collect()
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i] as usize)
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(
            self.len(),
            self.dim,
            self.features.iter().map(|&x| x as f64).collect(),
        )
    }

    /// Rescales every row to unit ℓ2 norm. Zero rows are rejected.
    pub fn normalize(&mut self) -> Result<()> {
        let dim = self.dim;
        for (i, row) in self.features.chunks_exact_mut(dim).enumerate() {
            let n = row
                .iter()
                .map(|&x| (x as f64) * (x as f64))
                .sum::<f64>()
                .sqrt();
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::DegenerateFeature(format!("row {i} has norm {n}")));
            }
            row.iter_mut().for_each(|x| *x = ((*x as f64) / n) as f32);
        }
        Ok(())
    }

    /// Rows at `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Self::new(features, self.dim, labels, self.class_count)
    }

    /// Number of rows per class. Requires labels.
    pub fn class_histogram(&self) -> Option<Vec<usize>> {
        let labels = self.labels.as_ref()?;
        let mut h = vec![0; self.class_count];
        for &y in labels {
            h[y as usize] += 1;
        }
        Some(h)
    }
}

/// How the unlabeled count profile relates to the labeled one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnlabeledMode {
    Consistent,
    Uniform,
    Reversed,
}

impl std::str::FromStr for UnlabeledMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "consistent" => Ok(Self::Consistent),
            "uniform" => Ok(Self::Uniform),
            "reversed" => Ok(Self::Reversed),
            other => Err(Error::Config(format!(
                "unknown unlabeled mode {other:?} (expected consistent|uniform|reversed)"
            ))),
        }
    }
}

impl std::fmt::Display for UnlabeledMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Consistent => "consistent",
            Self::Uniform => "uniform",
            Self::Reversed => "reversed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTailSpec {
    pub class_count: usize,
    pub head_labeled: usize,
    pub labeled_imbalance: f64,
    pub head_unlabeled: usize,
    /// For `Reversed`, either `γ` or `1/γ` may be given; the profile is
    /// the consistent one for `max(γ, 1/γ)` read back to front.
    pub unlabeled_imbalance: f64,
    pub unlabeled_mode: UnlabeledMode,
}

impl LongTailSpec {
    pub fn labeled_counts(&self) -> Result<Vec<usize>> {
        class_counts(self.head_labeled, self.labeled_imbalance, self.class_count)
    }

    pub fn unlabeled_counts(&self) -> Result<Vec<usize>> {
        if !(self.unlabeled_imbalance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "unlabeled imbalance must be positive, got {}",
                self.unlabeled_imbalance
            )));
        }
        match self.unlabeled_mode {
            UnlabeledMode::Uniform => class_counts(self.head_unlabeled, 1.0, self.class_count),
            UnlabeledMode::Consistent => class_counts(
                self.head_unlabeled,
                self.unlabeled_imbalance,
                self.class_count,
            ),
            UnlabeledMode::Reversed => {
                let g = self.unlabeled_imbalance.max(1.0 / self.unlabeled_imbalance);
                let mut c = class_counts(self.head_unlabeled, g, self.class_count)?;
                c.reverse();
                Ok(c)
            }
        }
    }
}

/// Round half toward negative infinity: 2.5 → 2, 2.6 → 3.
pub fn round_half_down(x: f64) -> f64 {
    (x - 0.5).ceil()
}

/// Exponential long-tail profile `counts[c] = round(head · γ^(−c/(C−1)))`.
pub fn class_counts(head: usize, gamma: f64, classes: usize) -> Result<Vec<usize>> {
    if head < 1 {
        return Err(Error::InvalidParameter(
            "head count must be at least 1".into(),
        ));
    }
    if classes < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if !(gamma >= 1.0) || !gamma.is_finite() {
        return Err(Error::InfeasibleProfile(format!(
            "imbalance ratio must be finite and >= 1, got {gamma}"
        )));
    }
    let last = (classes - 1) as f64;
    let mut counts = Vec::with_capacity(classes);
    for c in 0..classes {
        let raw = head as f64 * gamma.powf(-(c as f64) / last);
        let n = round_half_down(raw);
        if n < 1.0 {
            return Err(Error::InfeasibleProfile(format!(
                "class {c} count {raw:.4} rounds to zero (head {head}, ratio {gamma})"
            )));
        }
        counts.push(n as usize);
    }
    counts[0] = head;
    Ok(counts)
}

/// Relative growth of the head/tail imbalance once unlabeled samples with
/// counts `(m1, mc)` are absorbed into a labeled set with counts `(n1, nc)`.
pub fn imbalance_increase(n1: f64, nc: f64, m1: f64, mc: f64) -> f64 {
    (m1 * nc - n1 * mc) / ((nc + mc) * nc)
}

/// Labeled and unlabeled index lists into a source [`EmbeddingSet`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    /// `(row, label)` pairs.
    pub labeled: Vec<(usize, usize)>,
    /// `(row, hidden label)` pairs. Labels are for diagnostics only.
    pub unlabeled: Vec<(usize, usize)>,
}

impl SplitIndices {
    pub fn labeled_rows(&self) -> Vec<usize> {
        self.labeled.iter().map(|&(i, _)| i).collect()
    }

    pub fn unlabeled_rows(&self) -> Vec<usize> {
        self.unlabeled.iter().map(|&(i, _)| i).collect()
    }

    pub fn labeled_counts(&self, classes: usize) -> Vec<usize> {
        let mut c = vec![0; classes];
        for &(_, y) in &self.labeled {
            c[y] += 1;
        }
        c
    }

    pub fn unlabeled_counts(&self, classes: usize) -> Vec<usize> {
        let mut c = vec![0; classes];
        for &(_, y) in &self.unlabeled {
            c[y] += 1;
        }
        c
    }
}

/// Draws a long-tailed labeled/unlabeled split from a labeled pool.
///
/// Rows of each class are shuffled independently (classes in ascending
/// order); the first `N_c` become labeled and the next `M_c` unlabeled.
pub fn build_split(
    set: &EmbeddingSet,
    spec: &LongTailSpec,
    rng: &mut RunRng,
) -> Result<SplitIndices> {
    let labels = set
        .labels()
        .ok_or_else(|| Error::InvalidParameter("split source must be labeled".into()))?;
    if spec.class_count != set.class_count() {
        return Err(Error::DimensionMismatch(format!(
            "split spec has {} classes, embedding set has {}",
            spec.class_count,
            set.class_count()
        )));
    }
    let n_counts = spec.labeled_counts()?;
    let m_counts = spec.unlabeled_counts()?;

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); spec.class_count];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y as usize].push(i);
    }
    let shortfall: Vec<Shortfall> = by_class
        .iter()
        .enumerate()
        .filter_map(|(c, rows)| {
            let required = n_counts[c] + m_counts[c];
            (rows.len() < required).then_some(Shortfall {
                class: c,
                required,
                available: rows.len(),
            })
        })
        .collect();
    if !shortfall.is_empty() {
        return Err(Error::InsufficientSamples(shortfall));
    }

    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    for (c, rows) in by_class.iter_mut().enumerate() {
        rows.shuffle(rng);
        labeled.extend(rows[..n_counts[c]].iter().map(|&i| (i, c)));
        unlabeled.extend(
            rows[n_counts[c]..n_counts[c] + m_counts[c]]
                .iter()
                .map(|&i| (i, c)),
        );
    }
    Ok(SplitIndices { labeled, unlabeled })
}

/// Class mean directions for synthetic data.
///
/// With `dim >= classes` the rows are Gram–Schmidt orthonormalized Gaussian
/// draws (row by row, coordinate by coordinate). Otherwise random unit rows are
/// spread apart by a fixed 500-step descent on the orthogonality loss.
pub fn synthetic_class_means(classes: usize, dim: usize, rng: &mut RunRng) -> Result<Matrix> {
    if classes < 2 || dim < 2 {
        return Err(Error::InvalidParameter(format!(
            "synthetic data needs C >= 2 and D >= 2, got C={classes} D={dim}"
        )));
    }
    let mut means = Matrix::zeros(classes, dim);
    if dim >= classes {
        let mut k = 0;
        while k < classes {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            for j in 0..k {
                let proj = linalg::dot(&v, means.row(j));
                linalg::axpy(-proj, means.row(j), &mut v);
            }
            // Reject nearly dependent draws and redraw.
            if linalg::norm(&v) > 1e-3 && linalg::normalize_in_place(&mut v).is_some() {
                means.row_mut(k).copy_from_slice(&v);
                k += 1;
            }
        }
    } else {
        for k in 0..classes {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            if linalg::normalize_in_place(&mut v).is_none() {
                v = vec![0.0; dim];
                v[k % dim] = 1.0;
            }
            means.row_mut(k).copy_from_slice(&v);
        }
        for _ in 0..500 {
            let (_, grad) = prototypes::orthogonal_loss(&means);
            for k in 0..classes {
                let g = grad.row(k).to_vec();
                let row = means.row_mut(k);
                linalg::axpy(-0.5, &g, row);
                linalg::normalize_in_place(row);
            }
        }
    }
    Ok(means)
}

/// Samples `normalize(separation · mean_c + N(0, σ²I))`, class-major.
pub fn sample_around_means(
    means: &Matrix,
    per_class: &[usize],
    separation: f64,
    noise_sigma: f64,
    rng: &mut RunRng,
) -> Result<EmbeddingSet> {
    let (classes, dim) = means.shape();
    if per_class.len() != classes {
        return Err(Error::DimensionMismatch(format!(
            "{} per-class counts for {classes} classes",
            per_class.len()
        )));
    }
    if noise_sigma < 0.0 || !noise_sigma.is_finite() || !separation.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "invalid separation {separation} / noise {noise_sigma}"
        )));
    }
    let total: usize = per_class.iter().sum();
    if total == 0 {
        return Err(Error::InvalidParameter("no samples requested".into()));
    }
    let mut features = Vec::with_capacity(total * dim);
    let mut labels = Vec::with_capacity(total);
    let mut row = vec![0.0; dim];
    for (c, &n) in per_class.iter().enumerate() {
        for _ in 0..n {
            for (j, r) in row.iter_mut().enumerate() {
                let e: f64 = rng.sample(StandardNormal);
                *r = separation * means[(c, j)] + noise_sigma * e;
            }
            if linalg::normalize_in_place(&mut row).is_none() {
                return Err(Error::DegenerateFeature(format!(
                    "synthetic sample of class {c} is the zero vector"
                )));
            }
            features.extend(row.iter().map(|&x| x as f32));
            labels.push(c as u32);
        }
    }
    EmbeddingSet::new(features, dim, Some(labels), classes)
}

/// One-shot synthetic provider: draws class means and samples from `rng`.
pub fn synth_embeddings(
    classes: usize,
    dim: usize,
    per_class: &[usize],
    separation: f64,
    noise_sigma: f64,
    rng: &mut RunRng,
) -> Result<EmbeddingSet> {
    let means = synthetic_class_means(classes, dim, rng)?;
    sample_around_means(&means, per_class, separation, noise_sigma, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentKind {
    Weak,
    Strong,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub weak_sigma: f64,
    pub strong_sigma: f64,
    pub strong_dropout: f64,
    pub renormalize: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            weak_sigma: 0.05,
            strong_sigma: 0.15,
            strong_dropout: 0.1,
            renormalize: true,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.weak_sigma >= 0.0 && self.strong_sigma >= self.weak_sigma) {
            return Err(Error::InvalidParameter(format!(
                "augmentation needs strong_sigma >= weak_sigma >= 0, got {} / {}",
                self.strong_sigma, self.weak_sigma
            )));
        }
        if !(0.0..1.0).contains(&self.strong_dropout) {
            return Err(Error::InvalidParameter(format!(
                "strong dropout must lie in [0, 1), got {}",
                self.strong_dropout
            )));
        }
        Ok(())
    }
}

/// Perturbs every row of `features` in place.
///
/// Draw order per row: `D` standard normals (both kinds), then for `Strong`
/// `D` uniforms for the dropout mask. The number of draws never depends on
/// the configured magnitudes. A strong row whose every coordinate is dropped
/// keeps its pre-dropout value.
pub fn augment(
    features: &mut Matrix,
    kind: AugmentKind,
    cfg: &AugmentationConfig,
    rng: &mut RunRng,
) {
    let sigma = match kind {
        AugmentKind::Weak => cfg.weak_sigma,
        AugmentKind::Strong => cfg.strong_sigma,
    };
    let dim = features.cols();
    let mut noisy = vec![0.0; dim];
    for i in 0..features.rows() {
        let row = features.row_mut(i);
        for (n, &x) in noisy.iter_mut().zip(row.iter()) {
            let e: f64 = rng.sample(StandardNormal);
            *n = x + sigma * e;
        }
        row.copy_from_slice(&noisy);
        if kind == AugmentKind::Strong {
            for x in row.iter_mut() {
                let u: f64 = rng.random();
                if u < cfg.strong_dropout {
                    *x = 0.0;
                }
            }
            if row.iter().all(|&x| x == 0.0) {
                row.copy_from_slice(&noisy);
            }
        }
        if cfg.renormalize {
            linalg::normalize_in_place(row);
        }
    }
}

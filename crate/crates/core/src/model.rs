//! Linear probe over a low-rank residual adapter, with an analytic backward
//! pass for the full training objective and momentum SGD.
//!
//! Forward path for a raw embedding `x`:
//!
//! ```text
//! a = A·x                (r)
//! h = x + s·B·a          (D)
//! z = h / ‖h‖
//! p^v = W·z + b          (C)
//! ```

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion;
use crate::linalg::{self, Matrix};
use crate::prototypes;
use crate::rng::RunRng;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// C×D
    pub probe_w: Matrix,
    /// C
    pub probe_b: Vec<f64>,
    /// r×D
    pub adapter_a: Matrix,
    /// D×r
    pub adapter_b: Matrix,
    pub adapter_scale: f64,
}

impl ModelParams {
    /// Probe weights `N(0, 0.01²)`, zero bias; adapter down-projection
    /// `N(0, 1/D)` and zero up-projection, so the adapter starts as the
    /// identity on features.
    ///
    /// Draw order: W row-major, then A row-major.
    pub fn init(classes: usize, dim: usize, rank: usize, scale: f64, rng: &mut RunRng) -> Self {
        let mut probe_w = Matrix::zeros(classes, dim);
        for w in probe_w.as_mut_slice() {
            *w = 0.01 * rng.sample::<f64, _>(StandardNormal);
        }
        let mut adapter_a = Matrix::zeros(rank, dim);
        let a_std = (1.0 / dim as f64).sqrt();
        for a in adapter_a.as_mut_slice() {
            *a = a_std * rng.sample::<f64, _>(StandardNormal);
        }
        Self {
            probe_w,
            probe_b: vec![0.0; classes],
            adapter_a,
            adapter_b: Matrix::zeros(dim, rank),
            adapter_scale: scale,
        }
    }

    pub fn classes(&self) -> usize {
        self.probe_w.rows()
    }

    pub fn dim(&self) -> usize {
        self.probe_w.cols()
    }

    pub fn rank(&self) -> usize {
        self.adapter_a.rows()
    }

    /// Number of trainable scalars.
    pub fn len(&self) -> usize {
        let (c, d, r) = (self.classes(), self.dim(), self.rank());
        c * d + c + 2 * r * d
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable scalars in the order W, b, A, B (each row-major).
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(self.probe_w.as_slice());
        v.extend_from_slice(&self.probe_b);
        v.extend_from_slice(self.adapter_a.as_slice());
        v.extend_from_slice(self.adapter_b.as_slice());
        v
    }

    /// Inverse of [`flatten`](Self::flatten). Panics on length mismatch.
    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len());
        let mut rest = flat;
        for dst in [
            self.probe_w.as_mut_slice(),
            self.probe_b.as_mut_slice(),
            self.adapter_a.as_mut_slice(),
            self.adapter_b.as_mut_slice(),
        ] {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.probe_w.is_finite()
            && self.probe_b.iter().all(|x| x.is_finite())
            && self.adapter_a.is_finite()
            && self.adapter_b.is_finite()
    }
}

/// Intermediates of the adapter forward pass needed by the backward pass.
struct FeatureCache {
    a: Vec<f64>,
    z: Vec<f64>,
    norm: f64,
}

fn forward_cached(params: &ModelParams, x: &[f64]) -> Result<FeatureCache> {
    let a = params.adapter_a.matvec(x);
    let mut h = x.to_vec();
    if params.adapter_scale != 0.0 {
        let ba = params.adapter_b.matvec(&a);
        linalg::axpy(params.adapter_scale, &ba, &mut h);
    }
    let norm = linalg::normalize_in_place(&mut h)
        .ok_or_else(|| Error::DegenerateFeature("adapted feature has zero norm".into()))?;
    Ok(FeatureCache { a, z: h, norm })
}

/// `z = normalize(x + s·B·(A·x))`
pub fn forward_features(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != params.dim() {
        return Err(Error::DimensionMismatch(format!(
            "feature has length {}, model expects {}",
            x.len(),
            params.dim()
        )));
    }
    Ok(forward_cached(params, x)?.z)
}

/// `p^v = W·z + b`
pub fn probe_logits(params: &ModelParams, z: &[f64]) -> Vec<f64> {
    let mut p = params.probe_w.matvec(z);
    linalg::axpy(1.0, &params.probe_b, &mut p);
    p
}

/// One optimization batch after augmentation and pseudo-labeling.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    /// Weakly augmented labeled rows.
    pub labeled_x: Matrix,
    pub labels: Vec<usize>,
    /// Strongly augmented unlabeled rows.
    pub strong_x: Matrix,
    /// Pseudo-labels from the weak branch.
    pub targets: Vec<usize>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub class_prior: Vec<f64>,
    pub la_strength: f64,
    pub orthogonal_weight: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub labeled: f64,
    pub unlabeled: f64,
    /// Weighted orthogonality term `λ_o·L_o`.
    pub orthogonal: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.labeled.is_finite()
            && self.unlabeled.is_finite()
            && self.orthogonal.is_finite()
            && self.total.is_finite()
    }
}

impl std::fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "labeled={} unlabeled={} orthogonal={} total={}",
            self.labeled, self.unlabeled, self.orthogonal, self.total
        )
    }
}

/// Gradients mirroring [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub probe_w: Matrix,
    pub probe_b: Vec<f64>,
    pub adapter_a: Matrix,
    pub adapter_b: Matrix,
    pub breakdown: LossBreakdown,
}

impl Gradients {
    fn zeros_like(p: &ModelParams) -> Self {
        Self {
            probe_w: Matrix::zeros(p.classes(), p.dim()),
            probe_b: vec![0.0; p.classes()],
            adapter_a: Matrix::zeros(p.rank(), p.dim()),
            adapter_b: Matrix::zeros(p.dim(), p.rank()),
            breakdown: LossBreakdown::default(),
        }
    }

    /// Same order as [`ModelParams::flatten`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend_from_slice(self.probe_w.as_slice());
        v.extend_from_slice(&self.probe_b);
        v.extend_from_slice(self.adapter_a.as_slice());
        v.extend_from_slice(self.adapter_b.as_slice());
        v
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|x| x.is_finite())
    }
}

fn check_batch(params: &ModelParams, batch: &LossBatch) -> Result<()> {
    let d = params.dim();
    let c = params.classes();
    if batch.labeled_x.rows() != batch.labels.len()
        || batch.strong_x.rows() != batch.targets.len()
        || batch.strong_x.rows() != batch.mask.len()
    {
        return Err(Error::DimensionMismatch(
            "batch field lengths disagree".into(),
        ));
    }
    if (batch.labeled_x.rows() > 0 && batch.labeled_x.cols() != d)
        || (batch.strong_x.rows() > 0 && batch.strong_x.cols() != d)
    {
        return Err(Error::DimensionMismatch(format!(
            "batch rows must have length {d}"
        )));
    }
    if batch.labels.iter().chain(&batch.targets).any(|&y| y >= c) {
        return Err(Error::InvalidParameter(format!(
            "class index out of range for C={c}"
        )));
    }
    Ok(())
}

fn evaluate(
    params: &ModelParams,
    batch: &LossBatch,
    cfg: &LossConfig,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Gradients>)> {
    check_batch(params, batch)?;
    let classes = params.classes();
    let dim = params.dim();
    let mut grads = want_grad.then(|| Gradients::zeros_like(params));

    let lab: Vec<FeatureCache> = batch
        .labeled_x
        .iter_rows()
        .map(|x| forward_cached(params, x))
        .collect::<Result<_>>()?;
    let unl: Vec<FeatureCache> = batch
        .strong_x
        .iter_rows()
        .map(|x| forward_cached(params, x))
        .collect::<Result<_>>()?;
    let mut dz_lab = vec![vec![0.0; dim]; lab.len()];
    let mut dz_unl = vec![vec![0.0; dim]; unl.len()];

    // Labeled logit-adjusted cross-entropy.
    let mut labeled = 0.0;
    if !lab.is_empty() {
        let inv = 1.0 / lab.len() as f64;
        for (i, fc) in lab.iter().enumerate() {
            let logits = probe_logits(params, &fc.z);
            let (l, mut g) = fusion::adjusted_ce_labeled(
                &logits,
                batch.labels[i],
                &cfg.class_prior,
                cfg.la_strength,
            );
            labeled += l;
            if let Some(gr) = grads.as_mut() {
                g.iter_mut().for_each(|x| *x *= inv);
                gr.probe_w.add_outer(1.0, &g, &fc.z);
                linalg::axpy(1.0, &g, &mut gr.probe_b);
                dz_lab[i] = params.probe_w.t_matvec(&g);
            }
        }
        labeled *= inv;
    }

    // Orthogonality of the current batch's class means.
    let mut orthogonal = 0.0;
    if cfg.orthogonal_weight != 0.0 && !lab.is_empty() {
        let mut z = Matrix::zeros(lab.len(), dim);
        for (i, fc) in lab.iter().enumerate() {
            z.row_mut(i).copy_from_slice(&fc.z);
        }
        let cm = prototypes::class_means_detailed(&z, &batch.labels, classes);
        let present: Vec<usize> = (0..classes).filter(|&k| cm.present[k]).collect();
        let mut m = Matrix::zeros(present.len(), dim);
        for (row, &k) in present.iter().enumerate() {
            m.row_mut(row).copy_from_slice(cm.means.row(k));
        }
        let (lo, gm) = prototypes::orthogonal_loss(&m);
        orthogonal = cfg.orthogonal_weight * lo;
        if grads.is_some() {
            // d(mean direction) → d(raw mean) → d(each member's z).
            let mut ds = vec![Vec::new(); classes];
            for (row, &k) in present.iter().enumerate() {
                let mk = m.row(row);
                let dm: Vec<f64> = gm
                    .row(row)
                    .iter()
                    .map(|g| cfg.orthogonal_weight * g)
                    .collect();
                let radial = linalg::dot(mk, &dm);
                let scale = 1.0 / (cm.raw_norms[k] * cm.counts[k] as f64);
                ds[k] = dm
                    .iter()
                    .zip(mk)
                    .map(|(d, mm)| (d - radial * mm) * scale)
                    .collect();
            }
            for (i, &y) in batch.labels.iter().enumerate() {
                if !ds[y].is_empty() {
                    linalg::axpy(1.0, &ds[y], &mut dz_lab[i]);
                }
            }
        }
    }

    // Masked consistency on the strong branch.
    let mut strong_logits = Matrix::zeros(unl.len(), classes);
    for (j, fc) in unl.iter().enumerate() {
        strong_logits
            .row_mut(j)
            .copy_from_slice(&probe_logits(params, &fc.z));
    }
    let (unlabeled, g_unl) = fusion::consistency_loss(&strong_logits, &batch.targets, &batch.mask);
    if let Some(gr) = grads.as_mut() {
        for (j, fc) in unl.iter().enumerate() {
            if !batch.mask[j] {
                continue;
            }
            let g = g_unl.row(j);
            gr.probe_w.add_outer(1.0, g, &fc.z);
            linalg::axpy(1.0, g, &mut gr.probe_b);
            dz_unl[j] = params.probe_w.t_matvec(g);
        }
    }

    let breakdown = LossBreakdown {
        labeled,
        unlabeled,
        orthogonal,
        total: labeled + unlabeled + orthogonal,
    };
    if !breakdown.is_finite() {
        return Err(Error::NonFinite {
            iteration: 0,
            detail: format!("loss terms {breakdown}"),
        });
    }

    if let Some(gr) = grads.as_mut() {
        let s = params.adapter_scale;
        let rows = batch
            .labeled_x
            .iter_rows()
            .zip(&lab)
            .zip(&dz_lab)
            .chain(batch.strong_x.iter_rows().zip(&unl).zip(&dz_unl));
        for ((x, fc), dz) in rows {
            if s == 0.0 || dz.iter().all(|&v| v == 0.0) {
                continue;
            }
            // Through z = h/‖h‖.
            let radial = linalg::dot(&fc.z, dz);
            let dh: Vec<f64> = dz
                .iter()
                .zip(&fc.z)
                .map(|(d, z)| (d - radial * z) / fc.norm)
                .collect();
            // Through h = x + s·B·a, a = A·x.
            gr.adapter_b.add_outer(s, &dh, &fc.a);
            let mut da = params.adapter_b.t_matvec(&dh);
            da.iter_mut().for_each(|v| *v *= s);
            gr.adapter_a.add_outer(1.0, &da, x);
        }
        gr.breakdown = breakdown;
        if !gr.is_finite() {
            return Err(Error::NonFinite {
                iteration: 0,
                detail: format!("non-finite gradient; loss terms {breakdown}"),
            });
        }
    }
    Ok((breakdown, grads))
}

/// Forward-only objective.
pub fn loss(params: &ModelParams, batch: &LossBatch, cfg: &LossConfig) -> Result<LossBreakdown> {
    Ok(evaluate(params, batch, cfg, false)?.0)
}

/// Analytic gradient of labeled + unlabeled + λ_o·orthogonal loss.
///
/// Pseudo-labels, the mask and every prototype buffer are constants; the
/// orthogonality term differentiates through the current batch's class means.
pub fn backward(params: &ModelParams, batch: &LossBatch, cfg: &LossConfig) -> Result<Gradients> {
    Ok(evaluate(params, batch, cfg, true)?
        .1
        .expect("gradients requested"))
}

/// Momentum SGD state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Leave the adapter factors untouched.
    pub freeze_adapter: bool,
    pub v_w: Matrix,
    pub v_b: Vec<f64>,
    pub v_a: Matrix,
    pub v_bm: Matrix,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            weight_decay,
            freeze_adapter: false,
            v_w: Matrix::zeros(params.classes(), params.dim()),
            v_b: vec![0.0; params.classes()],
            v_a: Matrix::zeros(params.rank(), params.dim()),
            v_bm: Matrix::zeros(params.dim(), params.rank()),
        }
    }
}

fn sgd_slice(p: &mut [f64], g: &[f64], v: &mut [f64], lr: f64, m: f64, wd: f64) {
    for ((p, &g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = m * *v + g + wd * *p;
        *p -= lr * *v;
    }
}

/// `v ← m·v + g + wd·p; p ← p − lr·v`
pub fn sgd_step(params: &mut ModelParams, grads: &Gradients, opt: &mut OptimizerState) {
    let (lr, m, wd) = (opt.learning_rate, opt.momentum, opt.weight_decay);
    sgd_slice(
        params.probe_w.as_mut_slice(),
        grads.probe_w.as_slice(),
        opt.v_w.as_mut_slice(),
        lr,
        m,
        wd,
    );
    sgd_slice(&mut params.probe_b, &grads.probe_b, &mut opt.v_b, lr, m, wd);
    if !opt.freeze_adapter {
        sgd_slice(
            params.adapter_a.as_mut_slice(),
            grads.adapter_a.as_slice(),
            opt.v_a.as_mut_slice(),
            lr,
            m,
            wd,
        );
        sgd_slice(
            params.adapter_b.as_mut_slice(),
            grads.adapter_b.as_slice(),
            opt.v_bm.as_mut_slice(),
            lr,
            m,
            wd,
        );
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn tiny() -> ModelParams {
        ModelParams {
            probe_w: Matrix::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]]),
            probe_b: vec![0.0, 0.0],
            adapter_a: Matrix::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]]),
            adapter_b: Matrix::from_rows(&[
                vec![0.0, 0.0],
                vec![1.0, 0.0],
                vec![0.0, 0.0],
                vec![0.0, 2.0],
            ]),
            adapter_scale: 0.5,
        }
    }

    #[test]
    fn forward_hand_example() {
        let p = tiny();
        let x = [1.0, 2.0, 3.0, 4.0];
        // A·x = (1, 3); B·(1,3) = (0, 1, 0, 6); h = x + 0.5·(0,1,0,6) = (1, 2.5, 3, 7)
        let n = (1.0f64 + 6.25 + 9.0 + 49.0).sqrt();
        let z = forward_features(&p, &x).unwrap();
        let want = [1.0 / n, 2.5 / n, 3.0 / n, 7.0 / n];
        for (a, b) in z.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn adapter_identity_cases() {
        let mut p = tiny();
        p.adapter_a.fill(0.0);
        let x = [0.5, 0.5, 0.5, 0.5];
        assert_eq!(forward_features(&p, &x).unwrap(), x.to_vec());
        let mut q = tiny();
        q.adapter_scale = 0.0;
        let z = forward_features(&q, &[3.0, 0.0, 4.0, 0.0]).unwrap();
        assert_eq!(z, vec![0.6, 0.0, 0.8, 0.0]);
        assert!(forward_features(&q, &[0.0; 4]).is_err());
        assert!(forward_features(&q, &[1.0; 3]).is_err());
    }

    #[test]
    fn probe_logits_examples() {
        let mut p = tiny();
        assert_eq!(probe_logits(&p, &[0.0, 1.0, 0.0, 0.0]), vec![0.0, 1.0]);
        p.probe_w.fill(0.0);
        assert_eq!(probe_logits(&p, &[0.0, 1.0, 0.0, 0.0]), vec![0.0, 0.0]);
        let mut rng = stream_rng(8, Stream::ParamInit);
        let q = ModelParams::init(3, 5, 2, 1.0, &mut rng);
        let z = [0.1, -0.2, 0.3, 0.4, -0.5];
        let mut q2 = q.clone();
        q2.probe_b = vec![0.5, -1.0, 2.0];
        let got = probe_logits(&q2, &z);
        for c in 0..3 {
            let mut s = q2.probe_b[c];
            for d in 0..5 {
                s += q2.probe_w[(c, d)] * z[d];
            }
            assert!((got[c] - s).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_signal_batch_has_zero_gradient() {
        let mut rng = stream_rng(3, Stream::ParamInit);
        let mut p = ModelParams::init(3, 4, 2, 1.0, &mut rng);
        p.adapter_b.as_mut_slice().iter_mut().for_each(|b| *b = 0.3);
        let batch = LossBatch {
            labeled_x: Matrix::zeros(0, 4),
            labels: vec![],
            strong_x: Matrix::from_rows(&[vec![1.0, 0.0, 0.0, 0.0]]),
            targets: vec![1],
            mask: vec![false],
        };
        let cfg = LossConfig {
            class_prior: vec![1.0 / 3.0; 3],
            la_strength: 1.0,
            orthogonal_weight: 0.0,
        };
        let g = backward(&p, &batch, &cfg).unwrap();
        assert!(g.flatten().iter().all(|&x| x == 0.0));
        assert_eq!(g.breakdown.total, 0.0);
    }

    #[test]
    fn sgd_step_cases() {
        let mut rng = stream_rng(4, Stream::ParamInit);
        let p0 = ModelParams::init(2, 3, 1, 1.0, &mut rng);
        let mut g = Gradients::zeros_like(&p0);
        g.probe_w.as_mut_slice().iter_mut().for_each(|x| *x = 1.0);
        g.probe_b = vec![2.0, -2.0];

        let mut p = p0.clone();
        let mut opt = OptimizerState::new(&p, 0.0, 0.9, 5e-4);
        sgd_step(&mut p, &g, &mut opt);
        assert_eq!(p, p0);

        let mut p = p0.clone();
        let mut opt = OptimizerState::new(&p, 0.1, 0.0, 0.0);
        sgd_step(&mut p, &g, &mut opt);
        assert!((p.probe_b[0] - (-0.2)).abs() < 1e-15);
        assert!((p.probe_w[(1, 2)] - (p0.probe_w[(1, 2)] - 0.1)).abs() < 1e-15);

        // Hand trace with momentum and decay on a single scalar.
        let mut p = p0.clone();
        p.probe_b = vec![1.0, 0.0];
        let mut opt = OptimizerState::new(&p, 0.1, 0.9, 0.5);
        sgd_step(&mut p, &g, &mut opt);
        // v = 0 + 2 + 0.5·1 = 2.5; p = 1 − 0.25 = 0.75
        assert!((p.probe_b[0] - 0.75).abs() < 1e-15);
        sgd_step(&mut p, &g, &mut opt);
        // v = 0.9·2.5 + 2 + 0.5·0.75 = 4.625; p = 0.75 − 0.4625 = 0.2875
        assert!((p.probe_b[0] - 0.2875).abs() < 1e-15);
    }

    #[test]
    fn frozen_adapter_is_untouched() {
        let mut rng = stream_rng(5, Stream::ParamInit);
        let mut p = ModelParams::init(2, 3, 1, 1.0, &mut rng);
        let before = p.clone();
        let mut g = Gradients::zeros_like(&p);
        g.adapter_a.fill(1.0);
        g.adapter_b.fill(1.0);
        let mut opt = OptimizerState::new(&p, 0.1, 0.9, 5e-4);
        opt.freeze_adapter = true;
        sgd_step(&mut p, &g, &mut opt);
        assert_eq!(p.adapter_a, before.adapter_a);
        assert_eq!(p.adapter_b, before.adapter_b);
    }

    #[test]
    fn flatten_round_trip() {
        let mut rng = stream_rng(6, Stream::ParamInit);
        let p = ModelParams::init(3, 4, 2, 1.0, &mut rng);
        let mut q = ModelParams::init(3, 4, 2, 1.0, &mut rng);
        q.set_flat(&p.flatten());
        assert_eq!(p, q);
    }
}

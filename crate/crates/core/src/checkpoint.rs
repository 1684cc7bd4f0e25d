//! Training checkpoints.
//!
//! Everything needed to continue a run bit-for-bit: parameters, optimizer
//! buffers, prototype buffers, `P_u`, the iteration counter, the RNG position
//! and the effective config text. Little-endian, `f64` throughout:
//!
//! ```text
//! magic "ULFC", version u32 = 1
//! C, D, r: u64; adapter scale: f64
//! W, b, A, B
//! lr, momentum, decay: f64; frozen adapter: u8
//! velocity of W, b, A, B
//! C_t; provenance u8; degeneracies u64
//! C_v; seen: C × u8
//! P_u
//! iteration u64
//! rng seed [32]u8, stream u64, word position u128
//! loss window: steps u64, 4 × f64 loss, mask-rate sum f64, closed u8
//! config length u64, config UTF-8
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{LossBreakdown, ModelParams, OptimizerState};
use crate::prototypes::{
    PrototypeState, Provenance, PseudoDistribution, TextPrototypes, VisualPrototypes,
};
use crate::rng::RngState;
use crate::trainer::{TrainState, WindowStats};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ULFC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                needed: (self.pos + n) as u64,
                found: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| self.malformed("size overflow"))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        Ok(Matrix::from_vec(rows, cols, self.f64s(rows * cols)?))
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(self.malformed(&format!("flag byte {v}"))),
        }
    }
    fn malformed(&self, reason: &str) -> Error {
        Error::Malformed {
            path: self.path.to_path_buf(),
            reason: reason.to_string(),
        }
    }
}

pub fn encode_checkpoint(state: &TrainState, config_text: &str) -> Vec<u8> {
    let p = &state.params;
    let o = &state.optimizer;
    let ps = &state.prototypes;
    let mut w = Writer::default();
    w.0.extend_from_slice(&CHECKPOINT_MAGIC);
    w.0.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    w.u64(p.classes() as u64);
    w.u64(p.dim() as u64);
    w.u64(p.rank() as u64);
    w.f64s(&[p.adapter_scale]);
    w.f64s(p.probe_w.as_slice());
    w.f64s(&p.probe_b);
    w.f64s(p.adapter_a.as_slice());
    w.f64s(p.adapter_b.as_slice());
    w.f64s(&[o.learning_rate, o.momentum, o.weight_decay]);
    w.u8(o.freeze_adapter as u8);
    w.f64s(o.v_w.as_slice());
    w.f64s(&o.v_b);
    w.f64s(o.v_a.as_slice());
    w.f64s(o.v_bm.as_slice());
    w.f64s(ps.text.protos.as_slice());
    w.u8(match ps.text.provenance {
        Provenance::File => 0,
        Provenance::Synthetic => 1,
    });
    w.u64(ps.text.degeneracies);
    w.f64s(ps.visual.protos.as_slice());
    for &s in &ps.visual.seen {
        w.u8(s as u8);
    }
    w.f64s(&ps.pseudo.probs);
    w.u64(state.iteration);
    let rng = RngState::capture(&state.rng);
    w.0.extend_from_slice(&rng.seed);
    w.u64(rng.stream);
    w.0.extend_from_slice(&rng.word_pos.to_le_bytes());
    let win = &state.window;
    w.u64(win.steps);
    w.f64s(&[
        win.loss.labeled,
        win.loss.unlabeled,
        win.loss.orthogonal,
        win.loss.total,
        win.mask_rate,
    ]);
    w.u8(win.closed as u8);
    w.u64(config_text.len() as u64);
    w.0.extend_from_slice(config_text.as_bytes());
    w.0
}

/// Parses a checkpoint; `path` is only used in error messages.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<(TrainState, String)> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
        });
    }
    let c = r.u64()? as usize;
    let d = r.u64()? as usize;
    let rank = r.u64()? as usize;
    if c < 2 || d < 1 || rank < 1 || c.saturating_mul(d) > bytes.len() {
        return Err(r.malformed(&format!("implausible shape C={c} D={d} r={rank}")));
    }
    let adapter_scale = r.f64()?;
    let params = ModelParams {
        probe_w: r.matrix(c, d)?,
        probe_b: r.f64s(c)?,
        adapter_a: r.matrix(rank, d)?,
        adapter_b: r.matrix(d, rank)?,
        adapter_scale,
    };
    let mut optimizer = OptimizerState::new(&params, r.f64()?, r.f64()?, r.f64()?);
    optimizer.freeze_adapter = r.flag()?;
    optimizer.v_w = r.matrix(c, d)?;
    optimizer.v_b = r.f64s(c)?;
    optimizer.v_a = r.matrix(rank, d)?;
    optimizer.v_bm = r.matrix(d, rank)?;
    let text_protos = r.matrix(c, d)?;
    let provenance = match r.u8()? {
        0 => Provenance::File,
        1 => Provenance::Synthetic,
        v => return Err(r.malformed(&format!("provenance byte {v}"))),
    };
    let text = TextPrototypes {
        protos: text_protos,
        provenance,
        degeneracies: r.u64()?,
    };
    let visual_protos = r.matrix(c, d)?;
    let seen = (0..c).map(|_| r.flag()).collect::<Result<Vec<_>>>()?;
    let pseudo = PseudoDistribution { probs: r.f64s(c)? };
    let iteration = r.u64()?;
    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
    let steps = r.u64()?;
    let sums = r.f64s(5)?;
    let window = WindowStats {
        steps,
        loss: LossBreakdown {
            labeled: sums[0],
            unlabeled: sums[1],
            orthogonal: sums[2],
            total: sums[3],
        },
        mask_rate: sums[4],
        closed: r.flag()?,
    };
    let len = r.u64()? as usize;
    let config = std::str::from_utf8(r.take(len)?)
        .map_err(|_| r.malformed("config text is not UTF-8"))?
        .to_string();
    if r.pos != bytes.len() {
        return Err(r.malformed(&format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let state = TrainState {
        params,
        optimizer,
        prototypes: PrototypeState {
            text,
            visual: VisualPrototypes {
                protos: visual_protos,
                seen,
            },
            pseudo,
        },
        iteration,
        rng: RngState {
            seed,
            stream,
            word_pos,
        }
        .restore(),
        window,
    };
    Ok((state, config))
}

pub fn save_checkpoint(state: &TrainState, config_text: &str, path: &Path) -> Result<()> {
    crate::metrics::write_atomic(path, &encode_checkpoint(state, config_text))
}

pub fn load_checkpoint(path: &Path) -> Result<(TrainState, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

//! Layers shared by the selector, encoder, fusion blocks and prediction heads.

use rand::Rng;

use crate::tensor::{Axis, EmptySlice, ParamId, ParamStore, PoolKind, Result, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Linear {
            w: store.add_glorot(format!("{name}.w"), d_in, d_out, rng),
            b: store.add_zeros(format!("{name}.b"), &[d_out]),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct Lstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub hidden: usize,
}

impl Lstm {
    /// Forget-gate bias starts at 1.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let wx = store.add_uniform(format!("{name}.wx"), &[d_in, 4 * hidden], bound, rng);
        let wh = store.add_uniform(format!("{name}.wh"), &[hidden, 4 * hidden], bound, rng);
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        let b = store.add(format!("{name}.b"), Tensor::vector(bias));
        Lstm {
            wx,
            wh,
            b,
            d_in,
            hidden,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let wx = tape.param(store, self.wx);
        let wh = tape.param(store, self.wh);
        let b = tape.param(store, self.b);
        tape.lstm(x, wx, wh, b)
    }
}

/// Two LSTMs over the sequence and its reverse; outputs concatenated per step.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

impl BiLstm {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, rng: &mut R) -> Self {
        BiLstm {
            fwd: Lstm::new(store, &format!("{name}.fwd"), d_in, hidden, rng),
            bwd: Lstm::new(store, &format!("{name}.bwd"), d_in, hidden, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let n = tape.value(x).rows();
        let rev: Vec<usize> = (0..n).rev().collect();
        let f = self.fwd.forward(tape, store, x)?;
        let xr = tape.gather_rows(x, &rev)?;
        let b = self.bwd.forward(tape, store, xr)?;
        let b = tape.gather_rows(b, &rev)?;
        tape.concat_cols(&[f, b])
    }
}

/// Bidirectional attention between two sequences `x` (`n × d`) and `y` (`m × d`).
///
/// Similarity is `S[i,j] = w_x·x_i + w_y·y_j + w_xy·(x_i ∘ y_j)`. The x-side
/// output for row `i` is `[x_i; x̂_i; x_i ∘ x̂_i; x̃ ∘ x̂_i]`, where `x̂_i` is the
/// attention-weighted sum of `y` under `softmax_j S[i,:]` and `x̃` is the sum of
/// `x` weighted by `softmax_i max_j S[i,j]`; the y-side output swaps roles.
/// Each side is then projected linearly.
#[derive(Clone, Debug)]
pub struct BiAttention {
    pub w_sim: ParamId,
    pub proj_x: Linear,
    pub proj_y: Option<Linear>,
    pub dim: usize,
}

/// Attention distributions computed by one bi-attention call.
#[derive(Clone, Debug)]
pub struct BiAttentionOut {
    pub x_out: Var,
    pub y_out: Option<Var>,
    /// `n × m`, rows are distributions over `y`.
    pub x_attn: Var,
    /// `m × n`, rows are distributions over `x`; present when the y-side is computed.
    pub y_attn: Option<Var>,
}

impl BiAttention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        d_out: usize,
        both_sides: bool,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / (3 * dim + 1) as f64).sqrt();
        BiAttention {
            w_sim: store.add_uniform(format!("{name}.w_sim"), &[3, dim], bound, rng),
            proj_x: Linear::new(store, &format!("{name}.proj_x"), 4 * dim, d_out, rng),
            proj_y: both_sides.then(|| Linear::new(store, &format!("{name}.proj_y"), 4 * dim, d_out, rng)),
            dim,
        }
    }

    pub fn similarity(&self, tape: &mut Tape, store: &ParamStore, x: Var, y: Var) -> Result<Var> {
        let d = self.dim;
        let w = tape.param(store, self.w_sim);
        let column = |tape: &mut Tape, row: usize| -> Result<Var> {
            let r = tape.gather_rows(w, &[row])?;
            tape.reshape(r, &[d, 1])
        };
        let wx = column(tape, 0)?;
        let wy = column(tape, 1)?;
        let wxy = tape.gather_rows(w, &[2])?;
        let wxy = tape.reshape(wxy, &[d])?;

        let n = tape.value(x).rows();
        let m = tape.value(y).rows();
        let sx = tape.matmul(x, wx)?;
        let sx = tape.reshape(sx, &[n])?;
        let sy = tape.matmul(y, wy)?;
        let sy = tape.reshape(sy, &[m])?;
        let base = tape.outer_add(sx, sy)?;
        let xw = tape.mul(x, wxy)?;
        let yt = tape.transpose(y)?;
        let cross = tape.matmul(xw, yt)?;
        tape.add(base, cross)
    }

    /// `[a; â; a∘â; ã∘â]` for the side whose rows index `sim`'s rows.
    fn side(tape: &mut Tape, sim: Var, a: Var, b: Var) -> Result<(Var, Var)> {
        let d = tape.value(a).cols();
        let attn = tape.softmax(sim, Axis::Cols, None, EmptySlice::Error)?;
        let a_hat = tape.matmul(attn, b)?;
        let peak = tape.pool(sim, PoolKind::Max, Axis::Cols)?;
        let summary_w = tape.softmax(peak, Axis::Cols, None, EmptySlice::Error)?;
        let a_tilde = tape.matmul(summary_w, a)?;
        let a_tilde = tape.reshape(a_tilde, &[d])?;
        let prod = tape.mul(a, a_hat)?;
        let summary = tape.mul(a_hat, a_tilde)?;
        let g = tape.concat_cols(&[a, a_hat, prod, summary])?;
        Ok((g, attn))
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, y: Var) -> Result<BiAttentionOut> {
        let sim = self.similarity(tape, store, x, y)?;
        let (gx, x_attn) = Self::side(tape, sim, x, y)?;
        let x_out = self.proj_x.forward(tape, store, gx)?;
        let (y_out, y_attn) = match &self.proj_y {
            Some(proj) => {
                let sim_t = tape.transpose(sim)?;
                let (gy, y_attn) = Self::side(tape, sim_t, y, x)?;
                (Some(proj.forward(tape, store, gy)?), Some(y_attn))
            }
            None => (None, None),
        };
        Ok(BiAttentionOut {
            x_out,
            y_out,
            x_attn,
            y_attn,
        })
    }
}

//! Fused single-direction LSTM kernel.
//!
//! Gate columns are laid out `[input, forget, cell, output]`, each `hidden` wide.
//! The input projection for all steps is one GEMM; only the recurrent product
//! runs per step. Backward is truncated nowhere: full BPTT over the sequence.

use super::gemm;

/// Borrowed LSTM weights: `wx` is `d_in × 4h`, `wh` is `h × 4h`, `b` is `4h`.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights<'a> {
    pub wx: &'a [f64],
    pub wh: &'a [f64],
    pub b: &'a [f64],
    pub d_in: usize,
    pub hidden: usize,
}

/// Activations saved by the forward pass.
#[derive(Clone, Debug, Default)]
pub struct LstmCache {
    /// Post-activation gates, `T × 4h`.
    gates: Vec<f64>,
    /// Cell states, `T × h`.
    cells: Vec<f64>,
    /// `tanh` of the cell states, `T × h`.
    cell_tanh: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Runs the recurrence from a zero state and returns the stacked hidden states.
pub fn forward(x: &[f64], steps: usize, w: LstmWeights<'_>) -> (Vec<f64>, LstmCache) {
    let h = w.hidden;
    let g4 = 4 * h;
    let mut z = vec![0.0; steps * g4];
    for row in z.chunks_mut(g4) {
        row.copy_from_slice(w.b);
    }
    gemm(steps, w.d_in, g4, x, false, w.wx, false, &mut z, 1.0);

    let mut out = vec![0.0; steps * h];
    let mut cells = vec![0.0; steps * h];
    let mut cell_tanh = vec![0.0; steps * h];
    let mut c_prev = vec![0.0; h];
    for t in 0..steps {
        if t > 0 {
            let h_prev = &out[(t - 1) * h..t * h];
            gemm(1, h, g4, h_prev, false, w.wh, false, &mut z[t * g4..(t + 1) * g4], 1.0);
        }
        let zt = &mut z[t * g4..(t + 1) * g4];
        for k in 0..h {
            let i = sigmoid(zt[k]);
            let f = sigmoid(zt[h + k]);
            let g = zt[2 * h + k].tanh();
            let o = sigmoid(zt[3 * h + k]);
            zt[k] = i;
            zt[h + k] = f;
            zt[2 * h + k] = g;
            zt[3 * h + k] = o;
            let c = f * c_prev[k] + i * g;
            let tc = c.tanh();
            cells[t * h + k] = c;
            cell_tanh[t * h + k] = tc;
            out[t * h + k] = o * tc;
            c_prev[k] = c;
        }
    }
    (
        out,
        LstmCache {
            gates: z,
            cells,
            cell_tanh,
        },
    )
}

/// Gradients of one LSTM application.
pub struct LstmGrads {
    pub dx: Vec<f64>,
    pub dwx: Vec<f64>,
    pub dwh: Vec<f64>,
    pub db: Vec<f64>,
}

/// Backpropagates `d_out` (`T × h`) through the cached forward pass.
pub fn backward(
    x: &[f64],
    steps: usize,
    w: LstmWeights<'_>,
    out: &[f64],
    cache: &LstmCache,
    d_out: &[f64],
) -> LstmGrads {
    let h = w.hidden;
    let g4 = 4 * h;
    let mut dz = vec![0.0; steps * g4];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    for t in (0..steps).rev() {
        let gates = &cache.gates[t * g4..(t + 1) * g4];
        let dzt = &mut dz[t * g4..(t + 1) * g4];
        for k in 0..h {
            let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
            let tc = cache.cell_tanh[t * h + k];
            let c_prev = if t > 0 { cache.cells[(t - 1) * h + k] } else { 0.0 };
            let dh = d_out[t * h + k] + dh_next[k];
            let d_o = dh * tc;
            let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
            let d_i = dc * g;
            let d_g = dc * i;
            let d_f = dc * c_prev;
            dc_next[k] = dc * f;
            dzt[k] = d_i * i * (1.0 - i);
            dzt[h + k] = d_f * f * (1.0 - f);
            dzt[2 * h + k] = d_g * (1.0 - g * g);
            dzt[3 * h + k] = d_o * o * (1.0 - o);
        }
        // dh_{t-1} = dz_t · Whᵀ
        gemm(1, g4, h, dzt, false, w.wh, true, &mut dh_next, 0.0);
    }

    let mut dx = vec![0.0; steps * w.d_in];
    gemm(steps, g4, w.d_in, &dz, false, w.wx, true, &mut dx, 0.0);
    let mut dwx = vec![0.0; w.d_in * g4];
    gemm(w.d_in, steps, g4, x, true, &dz, false, &mut dwx, 0.0);
    let mut dwh = vec![0.0; h * g4];
    if steps > 1 {
        // previous hidden states are rows 0..T-1 of the output, paired with dz rows 1..T
        gemm(h, steps - 1, g4, &out[..(steps - 1) * h], true, &dz[g4..], false, &mut dwh, 0.0);
    }
    let mut db = vec![0.0; g4];
    for row in dz.chunks(g4) {
        for (acc, v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }
    LstmGrads { dx, dwx, dwh, db }
}

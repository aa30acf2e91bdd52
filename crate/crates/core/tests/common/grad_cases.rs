//! Every differentiable op and layer as a finite-difference case, so the
//! gradient suite and the acceptance run share one list.

use dfgn::fusion::{self, AttentionVars, FusionBlock, GraphInput};
use dfgn::nn::{BiAttention, BiLstm, Linear, Lstm};
use dfgn::predictor::{joint_loss, HeuristicMasks, Labels, LossWeights, PredictionHeads};
use dfgn::tensor::{Activation, Axis, EmptySlice, ParamStore, PoolKind, Tape, Tensor};
use dfgn::Dropout;
use rand::Rng;

use super::{check_inputs, check_params, rng, uniform};

pub type Case = (&'static str, fn(u64) -> f64);

fn unary(seed: u64, shape: &[usize], f: impl Fn(&mut Tape, dfgn::tensor::Var) -> dfgn::tensor::Result<dfgn::tensor::Var>) -> f64 {
    let mut r = rng(seed);
    let x = uniform(&mut r, shape);
    check_inputs(seed, &[x], |t, v| f(t, v[0]))
}

fn binary(
    seed: u64,
    a: &[usize],
    b: &[usize],
    f: impl Fn(&mut Tape, dfgn::tensor::Var, dfgn::tensor::Var) -> dfgn::tensor::Result<dfgn::tensor::Var>,
) -> f64 {
    let mut r = rng(seed);
    let (x, y) = (uniform(&mut r, a), uniform(&mut r, b));
    check_inputs(seed, &[x, y], |t, v| f(t, v[0], v[1]))
}

/// Random symmetric adjacency over `n` nodes with no self loops and every
/// node having at least one neighbor except possibly the last.
fn random_graph(r: &mut impl Rng, n: usize) -> Vec<bool> {
    let mut adj = vec![false; n * n];
    for i in 0..n {
        for j in i + 1..n {
            if r.gen_bool(0.5) || j == i + 1 && i + 2 < n {
                adj[i * n + j] = true;
                adj[j * n + i] = true;
            }
        }
    }
    adj
}

fn random_spans(r: &mut impl Rng, n: usize, m: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|_| {
            let len = r.gen_range(1..=3.min(m));
            let start = r.gen_range(0..=m - len);
            (start..start + len).collect()
        })
        .collect()
}

fn binding(spans: &[Vec<usize>], m: usize) -> Tensor {
    let n = spans.len();
    let mut b = vec![0.0; m * n];
    for (j, span) in spans.iter().enumerate() {
        for &i in span {
            b[i * n + j] = 1.0;
        }
    }
    Tensor::new(&[m, n], b).unwrap()
}

pub fn all() -> Vec<Case> {
    vec![
        ("add", |s| binary(s, &[3, 4], &[3, 4], |t, a, b| t.add(a, b))),
        ("add_broadcast", |s| binary(s, &[3, 4], &[4], |t, a, b| t.add(a, b))),
        ("sub", |s| binary(s, &[2, 5], &[5], |t, a, b| t.sub(a, b))),
        ("mul", |s| binary(s, &[3, 4], &[3, 4], |t, a, b| t.mul(a, b))),
        ("mul_broadcast", |s| binary(s, &[3, 4], &[4], |t, a, b| t.mul(a, b))),
        ("scale", |s| unary(s, &[3, 3], |t, a| t.scale(a, -1.7))),
        ("sigmoid", |s| unary(s, &[3, 4], |t, a| t.sigmoid(a))),
        ("tanh", |s| unary(s, &[3, 4], |t, a| t.tanh(a))),
        ("relu", |s| unary(s, &[3, 4], |t, a| t.relu(a))),
        ("leaky_relu", |s| unary(s, &[3, 4], |t, a| t.leaky_relu(a, 0.01))),
        ("activate", |s| unary(s, &[4], |t, a| t.activate(a, Activation::LeakyRelu(0.2)))),
        ("matmul", |s| binary(s, &[3, 4], &[4, 2], |t, a, b| t.matmul(a, b))),
        ("matmul_row", |s| binary(s, &[1, 5], &[5, 3], |t, a, b| t.matmul(a, b))),
        ("transpose", |s| unary(s, &[2, 5], |t, a| t.transpose(a))),
        ("reshape", |s| unary(s, &[2, 6], |t, a| t.reshape(a, &[3, 4]))),
        ("concat_cols", |s| binary(s, &[3, 2], &[3, 4], |t, a, b| t.concat_cols(&[a, b, a]))),
        ("concat_rows", |s| binary(s, &[2, 3], &[1, 3], |t, a, b| t.concat_rows(&[a, b, a]))),
        ("gather_rows", |s| unary(s, &[4, 3], |t, a| t.gather_rows(a, &[2, 0, 2, 3]))),
        ("slice_rows", |s| unary(s, &[5, 2], |t, a| t.slice_rows(a, 1, 4))),
        ("scale_rows", |s| binary(s, &[4, 3], &[4], |t, a, b| t.scale_rows(a, b))),
        ("outer_add", |s| binary(s, &[3], &[4], |t, a, b| t.outer_add(a, b))),
        ("softmax_cols", |s| unary(s, &[3, 4], |t, a| t.softmax(a, Axis::Cols, None, EmptySlice::Error))),
        ("softmax_rows", |s| unary(s, &[3, 4], |t, a| t.softmax(a, Axis::Rows, None, EmptySlice::Error))),
        ("softmax_masked", |s| {
            let mask = [true, false, true, false, false, true, false, true, false, false, false, false];
            unary(s, &[3, 4], move |t, a| t.softmax(a, Axis::Cols, Some(&mask), EmptySlice::Zero))
        }),
        ("pool_mean_rows", |s| unary(s, &[4, 3], |t, a| t.pool(a, PoolKind::Mean, Axis::Rows))),
        ("pool_mean_cols", |s| unary(s, &[4, 3], |t, a| t.pool(a, PoolKind::Mean, Axis::Cols))),
        ("pool_max_rows", |s| unary(s, &[4, 3], |t, a| t.pool(a, PoolKind::Max, Axis::Rows))),
        ("pool_max_cols", |s| unary(s, &[4, 3], |t, a| t.pool(a, PoolKind::Max, Axis::Cols))),
        ("sum", |s| unary(s, &[3, 4], |t, a| t.sum(a))),
        ("mean", |s| unary(s, &[3, 4], |t, a| t.mean(a))),
        ("mul_const", |s| unary(s, &[2, 3], |t, a| t.mul_const(a, vec![0.5, -1.0, 2.0, 0.0, 3.0, -0.25]))),
        ("dropout", |s| {
            unary(s, &[4, 5], move |t, a| {
                // the same mask on every evaluation
                let mut r = rng(s ^ 0xd0);
                t.dropout(a, 0.4, true, &mut r)
            })
        }),
        ("lstm", |s| {
            let mut r = rng(s);
            let (d_in, h, steps) = (3, 4, 3);
            let inputs = [
                uniform(&mut r, &[steps, d_in]),
                halved(uniform(&mut r, &[d_in, 4 * h])),
                halved(uniform(&mut r, &[h, 4 * h])),
                uniform(&mut r, &[4 * h]),
            ];
            check_inputs(s, &inputs, |t, v| t.lstm(v[0], v[1], v[2], v[3]))
        }),
        ("cross_entropy", |s| {
            let target = (s % 5) as usize;
            unary(s, &[5], move |t, a| t.cross_entropy(a, target))
        }),
        ("bce", |s| {
            let targets = [1.0, 0.0, 0.3, 1.0, 0.0, 0.7];
            unary(s, &[6], move |t, a| {
                let p = t.sigmoid(a)?;
                t.bce(p, &targets)
            })
        }),
        ("linear", |s| {
            let mut r = rng(s);
            let mut store = ParamStore::new();
            let lin = Linear::new(&mut store, "lin", 4, 3, &mut r);
            perturb_store(&mut store, &mut r);
            let x = uniform(&mut r, &[2, 4]);
            check_params(s, &store, &[x], |t, st, v| lin.forward(t, st, v[0]))
        }),
        ("lstm_layer", |s| {
            let mut r = rng(s);
            let mut store = ParamStore::new();
            let lstm = Lstm::new(&mut store, "lstm", 3, 3, &mut r);
            let x = uniform(&mut r, &[4, 3]);
            check_params(s, &store, &[x], |t, st, v| lstm.forward(t, st, v[0]))
        }),
        ("bilstm", |s| {
            let mut r = rng(s);
            let mut store = ParamStore::new();
            let bi = BiLstm::new(&mut store, "bi", 3, 2, &mut r);
            let x = uniform(&mut r, &[4, 3]);
            check_params(s, &store, &[x], |t, st, v| bi.forward(t, st, v[0]))
        }),
        ("bi_attention", |s| {
            let mut r = rng(s);
            let mut store = ParamStore::new();
            let att = BiAttention::new(&mut store, "att", 3, 2, true, &mut r);
            let (x, y) = (uniform(&mut r, &[4, 3]), uniform(&mut r, &[3, 3]));
            check_params(s, &store, &[x, y], |t, st, v| {
                let out = att.forward(t, st, v[0], v[1])?;
                let a = t.reshape(out.x_out, &[8])?;
                let b = t.reshape(out.y_out.unwrap(), &[6])?;
                t.concat_cols(&[a, b])
            })
        }),
        ("tok2ent", |s| {
            let mut r = rng(s);
            let spans = random_spans(&mut r, 4, 7);
            let c = uniform(&mut r, &[7, 3]);
            check_inputs(s, &[c], |t, v| fusion::tok2ent(t, v[0], &spans))
        }),
        ("soft_mask", |s| {
            let mut r = rng(s);
            let d = 3;
            let inputs = [uniform(&mut r, &[4, d]), uniform(&mut r, &[5, 2 * d]), uniform(&mut r, &[d, 2 * d])];
            check_inputs(s, &inputs, |t, v| {
                let (gamma, m) = fusion::soft_mask(t, v[0], v[1], v[2], d)?;
                let e = fusion::apply_mask(t, v[1], m)?;
                let e = t.reshape(e, &[5 * 2 * d])?;
                t.concat_cols(&[gamma, m, e])
            })
        }),
        ("graph_attention", |s| {
            let mut r = rng(s);
            let (n, d) = (5, 3);
            let adj = random_graph(&mut r, n);
            let inputs = [
                uniform(&mut r, &[n, 2 * d]),
                uniform(&mut r, &[2 * d, d]),
                uniform(&mut r, &[d]),
                uniform(&mut r, &[d, 2]),
            ];
            check_inputs(s, &inputs, |t, v| {
                let params = AttentionVars { u: v[1], b: v[2], w: v[3] };
                let out = fusion::graph_attention(t, v[0], &adj, params, 0.5, &mut Dropout::eval())?;
                let a = t.reshape(out.alpha, &[n * n])?;
                let e = t.reshape(out.e_out, &[n * d])?;
                t.concat_cols(&[a, e])
            })
        }),
        ("graph2doc", |s| {
            let mut r = rng(s);
            let (m, n, d) = (6, 3, 2);
            let mut store = ParamStore::new();
            let lstm = Lstm::new(&mut store, "g2d", 2 * d, d, &mut r);
            let spans = random_spans(&mut r, n, m);
            let b = binding(&spans, m);
            let inputs = [uniform(&mut r, &[m, d]), uniform(&mut r, &[n, d])];
            check_params(s, &store, &inputs, |t, st, v| {
                let bv = t.constant(b.clone())?;
                fusion::graph2doc(t, st, v[0], bv, v[1], &lstm, 0.2, &mut Dropout::eval())
            })
        }),
        ("heads_and_joint_loss", |s| {
            let mut r = rng(s);
            let (m, d) = (6, 2);
            let mut store = ParamStore::new();
            let heads = PredictionHeads::new(&mut store, d, &mut r);
            let pooling = Tensor::from_rows(&[
                vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0],
                vec![0.0, 0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0],
            ])
            .unwrap();
            let labels = Labels {
                span: Some((2, 4)),
                answer_type: 0,
                support: vec![0.0, 1.0],
            };
            let heur = HeuristicMasks {
                start: vec![true, false, false],
                bfs: vec![vec![true, false, false], vec![false, true, true]],
                skip_weak: false,
            };
            let inputs = [uniform(&mut r, &[m, d]), uniform(&mut r, &[3]), uniform(&mut r, &[3])];
            check_params(s, &store, &inputs, |t, st, v| {
                let pv = t.constant(pooling.clone())?;
                let out = heads.forward(t, st, v[0], pv)?;
                let m1 = t.sigmoid(v[1])?;
                let m2 = t.sigmoid(v[2])?;
                let weights = LossWeights { support: 0.7, answer_type: 1.3, mask: 0.5 };
                Ok(joint_loss(t, &out, &labels, &[m1, m2], Some(&heur), weights)?.total)
            })
        }),
        ("fusion_two_hops", fusion_two_hops),
    ]
}

fn halved(t: Tensor) -> Tensor {
    let shape = t.shape().to_vec();
    Tensor::new(&shape, t.into_data().into_iter().map(|x| 0.5 * x).collect()).unwrap()
}

/// Glorot-initialised biases start at zero; move everything off the
/// initialisation so no term is trivially symmetric.
fn perturb_store(store: &mut ParamStore, r: &mut impl Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        for x in store.value_mut(id).data_mut() {
            *x += r.gen_range(-0.3..0.3);
        }
    }
}

/// The full 2-block stack end to end: gradients w.r.t. every block parameter
/// and both the context and question inputs.
pub fn fusion_two_hops(s: u64) -> f64 {
    let mut r = rng(s);
    let (m, q_len, n, d) = (8, 3, 4, 2);
    let mut store = ParamStore::new();
    let blocks = [
        FusionBlock::new(&mut store, "b0", d, true, 0.5, 0.3, &mut r),
        FusionBlock::new(&mut store, "b1", d, false, 0.5, 0.3, &mut r),
    ];
    perturb_store(&mut store, &mut r);
    let adjacency = random_graph(&mut r, n);
    let spans = random_spans(&mut r, n, m);
    let graph = GraphInput {
        n,
        adjacency,
        binding: binding(&spans, m),
        spans,
    };
    let inputs = [uniform(&mut r, &[m, d]), uniform(&mut r, &[q_len, d])];
    check_params(s, &store, &inputs, |t, st, v| {
        let run = fusion::run_hops(&blocks, t, st, v[0], v[1], &graph, &mut Dropout::eval())?;
        let c = t.reshape(run.c, &[m * d])?;
        let mut parts = vec![c];
        for hop in run.hops.iter().flatten() {
            parts.push(hop.mask);
            let a = t.reshape(hop.attention.alpha, &[n * n])?;
            parts.push(a);
        }
        t.concat_cols(&parts)
    })
}

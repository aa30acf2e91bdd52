//! The fusion block: token → entity pooling, query-conditioned soft masking,
//! graph attention with column-wise aggregation, query update, and entity →
//! token injection through an LSTM.

use rand::Rng;

use crate::graph::{BindingMatrix, EntityGraph};
use crate::nn::{BiAttention, Lstm};
use crate::tensor::{
    Axis, EmptySlice, ParamId, ParamStore, PoolKind, Result, Tape, Tensor, TensorError, Var,
};
use crate::Dropout;

/// Slope of the LeakyReLU in the attention logits.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Graph-side inputs of the fusion blocks for one example.
#[derive(Clone, Debug)]
pub struct GraphInput {
    pub n: usize,
    /// Row-major `N × N`.
    pub adjacency: Vec<bool>,
    /// Token rows covered by each node.
    pub spans: Vec<Vec<usize>>,
    /// `M × N` binding matrix as 0/1 values.
    pub binding: Tensor,
}

impl GraphInput {
    pub fn new(graph: &EntityGraph, context_len: usize) -> Result<Self> {
        let b = graph.binding_matrix(context_len)?;
        Ok(Self::from_parts(graph.adjacency(), &b))
    }

    pub fn from_parts(adjacency: Vec<bool>, binding: &BindingMatrix) -> Self {
        let n = binding.cols();
        assert_eq!(adjacency.len(), n * n, "adjacency must be N × N");
        GraphInput {
            n,
            adjacency,
            spans: (0..n).map(|j| binding.column_rows(j)).collect(),
            binding: binding.to_tensor(),
        }
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.adjacency[i * self.n + j])
    }
}

/// Mean and max pooling over each node's token rows: `N × 2d`.
pub fn tok2ent(tape: &mut Tape, c: Var, spans: &[Vec<usize>]) -> Result<Var> {
    let mut rows = Vec::with_capacity(spans.len());
    for (j, span) in spans.iter().enumerate() {
        if span.is_empty() {
            return Err(TensorError::Invalid(format!("entity {j} has an empty span")));
        }
        let tokens = tape.gather_rows(c, span)?;
        let mean = tape.pool(tokens, PoolKind::Mean, Axis::Rows)?;
        let max = tape.pool(tokens, PoolKind::Max, Axis::Rows)?;
        rows.push(tape.concat_cols(&[mean, max])?);
    }
    tape.concat_rows(&rows)
}

/// Pre-activation scores `γ_i = q̃ V e_i / √d2` and the mask `σ(γ)`, both length `N`.
pub fn soft_mask(tape: &mut Tape, q: Var, e: Var, v: Var, d2: usize) -> Result<(Var, Var)> {
    let n = tape.value(e).rows();
    let q_mean = tape.pool(q, PoolKind::Mean, Axis::Rows)?;
    let qv = tape.matmul(q_mean, v)?;
    let et = tape.transpose(e)?;
    let gamma = tape.matmul(qv, et)?;
    let gamma = tape.scale(gamma, 1.0 / (d2 as f64).sqrt())?;
    let gamma = tape.reshape(gamma, &[n])?;
    let m = tape.sigmoid(gamma)?;
    Ok((gamma, m))
}

/// Row `i` of `e` scaled by `m_i`.
pub fn apply_mask(tape: &mut Tape, e: Var, m: Var) -> Result<Var> {
    tape.scale_rows(e, m)
}

/// Weights of one graph-attention layer. `u` is stored as `2d × d` so that
/// `h = Ẽ·u + b`; `w` is `d × 2` holding the source and target halves of the
/// attention vector as its two columns.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub u: Var,
    pub b: Var,
    pub w: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionOut {
    pub h: Var,
    pub beta: Var,
    pub alpha: Var,
    pub e_out: Var,
}

/// `h_i = U ẽ_i + b`, `β_ij = LeakyReLU(wᵀ[h_i; h_j])` on edges, `α` the
/// row-softmax of `β` over neighbors, and `e_out_i = ReLU(Σ_j α_ji h_j)`.
/// Isolated nodes get an all-zero `α` row and a zero output.
pub fn graph_attention(
    tape: &mut Tape,
    e_tilde: Var,
    adjacency: &[bool],
    params: AttentionVars,
    gat_dropout: f64,
    dropout: &mut Dropout<'_>,
) -> Result<AttentionOut> {
    let n = tape.value(e_tilde).rows();
    let h = tape.matmul(e_tilde, params.u)?;
    let h = tape.add(h, params.b)?;
    let h = dropout.apply(tape, h, gat_dropout)?;
    let scores = tape.matmul(h, params.w)?;
    let scores_t = tape.transpose(scores)?;
    let src = tape.gather_rows(scores_t, &[0])?;
    let dst = tape.gather_rows(scores_t, &[1])?;
    let beta = tape.outer_add(src, dst)?;
    let beta = tape.leaky_relu(beta, LEAKY_SLOPE)?;
    let alpha = tape.softmax(beta, Axis::Cols, Some(adjacency), EmptySlice::Zero)?;
    // column aggregation: node i collects α_ji h_j from its neighbors j
    let alpha_t = tape.transpose(alpha)?;
    let agg = tape.matmul(alpha_t, h)?;
    let e_out = tape.relu(agg)?;
    debug_assert_eq!(tape.value(alpha).rows(), n);
    Ok(AttentionOut { h, beta, alpha, e_out })
}

/// `LSTM([C ; B·E_out])`.
pub fn graph2doc(
    tape: &mut Tape,
    store: &ParamStore,
    c_prev: Var,
    binding: Var,
    e_out: Var,
    lstm: &Lstm,
    lstm_dropout: f64,
    dropout: &mut Dropout<'_>,
) -> Result<Var> {
    let injected = tape.matmul(binding, e_out)?;
    let input = tape.concat_cols(&[c_prev, injected])?;
    let input = dropout.apply(tape, input, lstm_dropout)?;
    lstm.forward(tape, store, input)
}

/// Parameters of one fusion block (untied across hops).
#[derive(Clone, Debug)]
pub struct FusionBlock {
    /// `d × 2d` mask bilinear map.
    pub v: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub w: ParamId,
    /// Absent in the last block, whose updated query would feed nothing.
    pub query_update: Option<BiAttention>,
    pub lstm: Lstm,
    pub d2: usize,
    pub gat_dropout: f64,
    pub lstm_dropout: f64,
}

/// Per-hop values kept for weak supervision and chain extraction.
#[derive(Clone, Copy, Debug)]
pub struct HopTrace {
    /// `N × 2d` entity embeddings before masking.
    pub entities: Var,
    pub gamma: Var,
    pub mask: Var,
    pub attention: AttentionOut,
}

#[derive(Clone, Copy, Debug)]
pub struct FusionState {
    pub c: Var,
    pub q: Var,
}

impl FusionBlock {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d2: usize,
        updates_query: bool,
        gat_dropout: f64,
        lstm_dropout: f64,
        rng: &mut R,
    ) -> Self {
        FusionBlock {
            v: store.add_glorot(format!("{name}.v"), d2, 2 * d2, rng),
            u: store.add_glorot(format!("{name}.u"), 2 * d2, d2, rng),
            b: store.add_zeros(format!("{name}.b"), &[d2]),
            w: store.add_glorot(format!("{name}.w"), d2, 2, rng),
            query_update: updates_query.then(|| BiAttention::new(store, &format!("{name}.query"), d2, d2, false, rng)),
            lstm: Lstm::new(store, &format!("{name}.lstm"), 2 * d2, d2, rng),
            d2,
            gat_dropout,
            lstm_dropout,
        }
    }

    /// `Q_next`: the query-side bi-attention output against the propagated
    /// entities. Blocks without a query update return `q` unchanged.
    pub fn update_query(&self, tape: &mut Tape, store: &ParamStore, q: Var, e_out: Var) -> Result<Var> {
        if tape.value(e_out).rows() == 0 {
            return Err(TensorError::Invalid("query update needs at least one entity".into()));
        }
        match &self.query_update {
            Some(att) => Ok(att.forward(tape, store, q, e_out)?.x_out),
            None => Ok(q),
        }
    }

    /// One hop. A graph without nodes leaves `Q` unchanged and feeds zeros to
    /// the LSTM in place of entity embeddings.
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        state: FusionState,
        graph: &GraphInput,
        binding: Var,
        dropout: &mut Dropout<'_>,
    ) -> Result<(FusionState, Option<HopTrace>)> {
        if graph.n == 0 {
            let m = tape.value(state.c).rows();
            let zeros = tape.constant(Tensor::zeros(&[m, self.d2]))?;
            let input = tape.concat_cols(&[state.c, zeros])?;
            let input = dropout.apply(tape, input, self.lstm_dropout)?;
            let c = self.lstm.forward(tape, store, input)?;
            return Ok((FusionState { c, q: state.q }, None));
        }
        let e = tok2ent(tape, state.c, &graph.spans)?;
        let v = tape.param(store, self.v);
        let (gamma, mask) = soft_mask(tape, state.q, e, v, self.d2)?;
        let e_tilde = apply_mask(tape, e, mask)?;
        let vars = AttentionVars {
            u: tape.param(store, self.u),
            b: tape.param(store, self.b),
            w: tape.param(store, self.w),
        };
        let attention = graph_attention(tape, e_tilde, &graph.adjacency, vars, self.gat_dropout, dropout)?;
        let q = self.update_query(tape, store, state.q, attention.e_out)?;
        let c = graph2doc(
            tape,
            store,
            state.c,
            binding,
            attention.e_out,
            &self.lstm,
            self.lstm_dropout,
            dropout,
        )?;
        Ok((
            FusionState { c, q },
            Some(HopTrace {
                entities: e,
                gamma,
                mask,
                attention,
            }),
        ))
    }
}

/// Output of `T` chained fusion blocks.
#[derive(Clone, Debug)]
pub struct FusionRun {
    pub c: Var,
    pub q: Var,
    /// One entry per hop; `None` when the graph is empty.
    pub hops: Vec<Option<HopTrace>>,
}

impl FusionRun {
    pub fn masks(&self) -> Vec<Var> {
        self.hops.iter().flatten().map(|h| h.mask).collect()
    }

    pub fn alphas(&self) -> Vec<Var> {
        self.hops.iter().flatten().map(|h| h.attention.alpha).collect()
    }
}

pub fn run_hops(
    blocks: &[FusionBlock],
    tape: &mut Tape,
    store: &ParamStore,
    c0: Var,
    q0: Var,
    graph: &GraphInput,
    dropout: &mut Dropout<'_>,
) -> Result<FusionRun> {
    if blocks.is_empty() {
        return Err(TensorError::Invalid("at least one fusion block is required".into()));
    }
    let binding = tape.constant(graph.binding.clone())?;
    let mut state = FusionState { c: c0, q: q0 };
    let mut hops = Vec::with_capacity(blocks.len());
    for block in blocks {
        let (next, trace) = block.step(tape, store, state, graph, binding, dropout)?;
        state = next;
        hops.push(trace);
    }
    Ok(FusionRun {
        c: state.c,
        q: state.q,
        hops,
    })
}

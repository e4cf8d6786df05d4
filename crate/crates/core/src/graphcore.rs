//! Propagation over the complete feature graph: attentional adjacency,
//! edge-wise aggregation, GRU update and the residual connection.

use crate::error::{Error, Result};
use crate::numerics::{Activation, Axis, Tape, Tensor, Var};

/// Diagonal mask for an `m × m` score matrix.
fn self_mask(m: usize) -> Vec<bool> {
    (0..m * m).map(|k| k / m == k % m).collect()
}

/// Pre-softmax edge scores `LeakyReLU(W_w · [h¹ᵢ ‖ h¹ⱼ])` for every ordered
/// pair. `w_w` is a `2d′ × 1` column.
pub fn edge_scores(tape: &mut Tape, h1: Var, w_w: Var, slope: f64) -> Result<Var> {
    let (m, dim) = tape.shape(h1);
    if m < 2 {
        return Err(Error::config(format!("the feature graph needs at least 2 nodes, got {m}")));
    }
    if tape.shape(w_w) != (2 * dim, 1) {
        return Err(Error::Shape(format!(
            "edge attention weights {:?} for {dim}-dim states",
            tape.shape(w_w)
        )));
    }
    // W_w·[hᵢ‖hⱼ] = u·hᵢ + v·hⱼ
    let u = tape.slice(w_w, Axis::Rows, 0, dim)?;
    let v = tape.slice(w_w, Axis::Rows, dim, dim)?;
    let src = tape.matmul(h1, u)?;
    let dst = tape.matmul(h1, v)?;
    let ones_row = tape.constant(Tensor::filled(1, m, 1.0));
    let ones_col = tape.constant(Tensor::filled(m, 1, 1.0));
    let by_row = tape.matmul(src, ones_row)?;
    let dst_t = tape.transpose(dst)?;
    let by_col = tape.matmul(ones_col, dst_t)?;
    let raw = tape.add(by_row, by_col)?;
    tape.pointwise(raw, Activation::LeakyRelu(slope))
}

/// Row softmax over `k ≠ i`; the diagonal comes out as exactly zero.
pub fn adjacency_from_scores(tape: &mut Tape, scores: Var) -> Result<Var> {
    let (m, c) = tape.shape(scores);
    if m != c {
        return Err(Error::Shape(format!("edge scores must be square, got {:?}", (m, c))));
    }
    tape.row_softmax(scores, Some(&self_mask(m)))
}

/// Attentional adjacency computed once from the initial node states.
pub fn edge_attention(tape: &mut Tape, h1: Var, w_w: Var, slope: f64) -> Result<Var> {
    let scores = edge_scores(tape, h1, w_w, slope)?;
    adjacency_from_scores(tape, scores)
}

/// Fixed adjacency for the variants without attentional edge weights:
/// `1/(m−1)` off the diagonal, or raw ones when `binary` is set.
pub fn fixed_adjacency(tape: &mut Tape, m: usize, binary: bool) -> Result<Var> {
    if m < 2 {
        return Err(Error::config(format!("the feature graph needs at least 2 nodes, got {m}")));
    }
    let w = if binary { 1.0 } else { 1.0 / (m - 1) as f64 };
    let mut a = Tensor::filled(m, m, w);
    for i in 0..m {
        a.set(i, i, 0.0);
    }
    Ok(tape.constant(a))
}

/// How state information is transformed along an edge `j → i`.
#[derive(Debug, Clone)]
pub enum EdgeTransform {
    /// `W_inⁱ W_outʲ` from per-node output and input matrices.
    PerNode { w_out: Vec<Var>, w_in: Vec<Var> },
    /// One matrix shared by every edge.
    Shared(Var),
}

/// Edge transform with its matrices transposed once for row-vector
/// products, so repeated propagation steps reuse them.
#[derive(Debug, Clone)]
pub struct PreparedTransform(EdgeTransform);

impl PreparedTransform {
    pub fn new(tape: &mut Tape, transform: &EdgeTransform) -> Result<Self> {
        let t = |tape: &mut Tape, vs: &[Var]| -> Result<Vec<Var>> {
            vs.iter().map(|&w| tape.transpose(w)).collect()
        };
        Ok(PreparedTransform(match transform {
            EdgeTransform::PerNode { w_out, w_in } => {
                if w_out.len() != w_in.len() {
                    return Err(Error::Shape("unequal numbers of output and input matrices".into()));
                }
                EdgeTransform::PerNode {
                    w_out: t(tape, w_out)?,
                    w_in: t(tape, w_in)?,
                }
            }
            EdgeTransform::Shared(w) => EdgeTransform::Shared(tape.transpose(*w)?),
        }))
    }
}

/// `aᵢ = Σ_{j≠i} A[j,i] · W_inⁱ (W_outʲ hⱼ) + b_p`.
///
/// Factored as one output transform per source node, an `Aᵀ`-weighted sum,
/// then one input transform per destination node: 2m matrix products
/// instead of m².
pub fn aggregate(
    tape: &mut Tape,
    states: Var,
    adjacency: Var,
    transform: &PreparedTransform,
    bias: Var,
) -> Result<Var> {
    let (m, _) = tape.shape(states);
    if tape.shape(adjacency) != (m, m) {
        return Err(Error::Shape(format!(
            "adjacency {:?} for {m} nodes",
            tape.shape(adjacency)
        )));
    }
    let at = tape.transpose(adjacency)?;
    let summed = match &transform.0 {
        EdgeTransform::PerNode { w_out, w_in } => {
            if w_out.len() != m {
                return Err(Error::Shape(format!("{} node transforms for {m} nodes", w_out.len())));
            }
            let mut sent = Vec::with_capacity(m);
            for (j, &wt) in w_out.iter().enumerate() {
                let h = tape.slice(states, Axis::Rows, j, 1)?;
                sent.push(tape.matmul(h, wt)?);
            }
            let sent = tape.concat(&sent, Axis::Rows)?;
            let incoming = tape.matmul(at, sent)?;
            let mut received = Vec::with_capacity(m);
            for (i, &wt) in w_in.iter().enumerate() {
                let x = tape.slice(incoming, Axis::Rows, i, 1)?;
                received.push(tape.matmul(x, wt)?);
            }
            tape.concat(&received, Axis::Rows)?
        }
        EdgeTransform::Shared(wt) => {
            let incoming = tape.matmul(at, states)?;
            tape.matmul(incoming, *wt)?
        }
    };
    tape.add_bias(summed, bias)
}

/// Shared GRU parameters; matrices are `d′ × d′`, biases `1 × d′`.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
}

impl GruVars {
    /// Transposes the matrices once so every step multiplies row vectors.
    pub fn prepared(&self, tape: &mut Tape) -> Result<GruVars> {
        Ok(GruVars {
            w_z: tape.transpose(self.w_z)?,
            u_z: tape.transpose(self.u_z)?,
            w_r: tape.transpose(self.w_r)?,
            u_r: tape.transpose(self.u_r)?,
            w_h: tape.transpose(self.w_h)?,
            u_h: tape.transpose(self.u_h)?,
            ..*self
        })
    }
}

/// Row-wise GRU over all nodes at once. `gru` must come from
/// [`GruVars::prepared`].
///
/// ```text
/// z = σ(W_z a + U_z h + b_z)
/// r = σ(W_r a + U_r h + b_r)
/// h̃ = tanh(W_h a + U_h (r ⊙ h) + b_h)
/// out = h̃ ⊙ z + h ⊙ (1 − z)
/// ```
pub fn gru_update(tape: &mut Tape, prev: Var, aggregated: Var, gru: &GruVars) -> Result<Var> {
    let gate = |tape: &mut Tape, w: Var, u: Var, b: Var, h: Var, f: Activation| -> Result<Var> {
        let wa = tape.matmul(aggregated, w)?;
        let uh = tape.matmul(h, u)?;
        let s = tape.add(wa, uh)?;
        let s = tape.add_bias(s, b)?;
        tape.pointwise(s, f)
    };
    let z = gate(tape, gru.w_z, gru.u_z, gru.b_z, prev, Activation::Sigmoid)?;
    let r = gate(tape, gru.w_r, gru.u_r, gru.b_r, prev, Activation::Sigmoid)?;
    let reset = tape.mul(r, prev)?;
    let candidate = gate(tape, gru.w_h, gru.u_h, gru.b_h, reset, Activation::Tanh)?;
    let (rows, cols) = tape.shape(z);
    let ones = tape.constant(Tensor::filled(rows, cols, 1.0));
    let keep = tape.sub(ones, z)?;
    let fresh = tape.mul(candidate, z)?;
    let kept = tape.mul(prev, keep)?;
    tape.add(fresh, kept)
}

/// Node states `Hᵗ` after `step` propagation steps.
#[derive(Debug, Clone, Copy)]
pub struct GraphState {
    pub states: Var,
    pub step: usize,
}

/// Everything a propagation step needs besides the states themselves.
pub struct Propagation<'a> {
    pub initial: Var,
    pub adjacency: Var,
    pub transform: &'a PreparedTransform,
    pub bias: Var,
    pub gru: &'a GruVars,
    pub residual: bool,
}

impl Propagation<'_> {
    /// One interaction step: aggregate, GRU, then add `H¹` back when the
    /// residual connection is on.
    pub fn step(&self, tape: &mut Tape, state: GraphState) -> Result<GraphState> {
        let agg = aggregate(tape, state.states, self.adjacency, self.transform, self.bias)?;
        let mut next = gru_update(tape, state.states, agg, self.gru)?;
        if self.residual {
            next = tape.add(next, self.initial)?;
        }
        Ok(GraphState {
            states: next,
            step: state.step + 1,
        })
    }

    /// Runs `steps ≥ 1` interaction steps starting from `H¹`.
    pub fn run(&self, tape: &mut Tape, steps: usize) -> Result<GraphState> {
        if steps < 1 {
            return Err(Error::config("the number of interaction steps must be at least 1"));
        }
        let mut state = GraphState {
            states: self.initial,
            step: 0,
        };
        for _ in 0..steps {
            state = self.step(tape, state)?;
        }
        Ok(state)
    }
}

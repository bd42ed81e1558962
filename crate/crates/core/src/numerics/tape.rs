//! Reverse-mode automatic differentiation over a flat value arena.
//!
//! The tape stores node values in one contiguous `Vec<f64>` and keeps a
//! record of the operations that produced them. Operation inputs are
//! [`Src`] handles: either an earlier node or a named parameter tensor, so
//! parameter contents (embedding tables in particular) are never copied
//! onto the tape. `backward` replays the records in reverse and returns one
//! dense gradient per parameter tensor; parameters the output does not
//! depend on keep a zero gradient.
//!
//! With recording disabled the same kernels run and the same values come
//! out bit for bit; only the operation records are skipped.

use crate::error::{Error, Result};
use crate::numerics::matrix::{self, leaky_relu, sigmoid};
use crate::numerics::params::{Gradients, ParamId, ParamSet};

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside loss terms.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// An operation input: a node already on the tape or a parameter tensor
/// (flattened row-major when treated as a vector).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Src {
    Node(NodeId),
    Param(ParamId),
}

impl From<NodeId> for Src {
    fn from(id: NodeId) -> Self {
        Src::Node(id)
    }
}

impl From<ParamId> for Src {
    fn from(id: ParamId) -> Self {
        Src::Param(id)
    }
}

#[derive(Debug, Clone, Copy)]
struct Span {
    off: usize,
    len: usize,
}

#[derive(Debug, Clone)]
enum Op {
    MatVec { w: ParamId, x: Src, b: Src, out: NodeId },
    Dot { a: Src, b: Src, out: NodeId },
    Cosine { a: Src, b: Src, out: NodeId },
    LeakyRelu { x: Src, slope: f64, out: NodeId },
    MulElem { x: Src, scale: Src, out: NodeId },
    EmbedMean { rows: Vec<(ParamId, usize)>, dim: usize, out: NodeId },
    ScaleEntry { w: Src, idx: usize, x: Src, out: NodeId },
    SumScale { terms: Vec<Src>, scale: f64, out: NodeId },
    Sigmoid { x: Src, out: NodeId },
    BceTerm { p: Src, y: f64, out: NodeId },
    SqDiff { p: Src, y: f64, out: NodeId },
}

#[derive(Debug, Default)]
pub struct Tape {
    vals: Vec<f64>,
    nodes: Vec<Span>,
    ops: Vec<Op>,
    recording: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            vals: Vec::new(),
            nodes: Vec::new(),
            ops: Vec::new(),
            recording: true,
        }
    }

    pub fn with_recording(recording: bool) -> Self {
        let mut t = Tape::new();
        t.recording = recording;
        t
    }

    pub fn set_recording(&mut self, on: bool) {
        self.recording = on;
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Drop all nodes and records but keep allocated capacity.
    pub fn reset(&mut self) {
        self.vals.clear();
        self.nodes.clear();
        self.ops.clear();
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn op_count(&self) -> usize {
        self.ops.len()
    }

    /// Number of recorded matrix-vector products. Used by tests to assert
    /// how many tower layers a forward pass actually evaluated.
    pub fn matvec_count(&self) -> usize {
        self.ops.iter().filter(|op| matches!(op, Op::MatVec { .. })).count()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        let s = self.nodes[id.0];
        &self.vals[s.off..s.off + s.len]
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let s = self.nodes[id.0];
        debug_assert_eq!(s.len, 1, "scalar() on a node of length {}", s.len);
        self.vals[s.off]
    }

    /// Put a constant vector on the tape. Constants are leaves; backward
    /// stops at them.
    pub fn input(&mut self, values: &[f64]) -> NodeId {
        let (id, off) = self.push_node(values.len());
        self.vals[off..off + values.len()].copy_from_slice(values);
        id
    }

    fn push_node(&mut self, len: usize) -> (NodeId, usize) {
        let off = self.vals.len();
        self.vals.resize(off + len, 0.0);
        let id = NodeId(self.nodes.len());
        self.nodes.push(Span { off, len });
        (id, off)
    }

    fn src_len(&self, ps: &ParamSet, src: Src) -> usize {
        match src {
            Src::Node(n) => self.nodes[n.0].len,
            Src::Param(p) => ps.get(p).len(),
        }
    }

    fn record(&mut self, op: Op) {
        if self.recording {
            self.ops.push(op);
        }
    }

    // ---- operations ------------------------------------------------------

    /// `W x + b` where `W` is a parameter matrix.
    pub fn matvec(
        &mut self,
        ps: &ParamSet,
        w: ParamId,
        x: impl Into<Src>,
        b: impl Into<Src>,
    ) -> Result<NodeId> {
        let (x, b) = (x.into(), b.into());
        let (rows, cols) = (ps.get(w).rows(), ps.get(w).cols());
        if self.src_len(ps, x) != cols {
            return Err(Error::Dimension {
                op: "matvec",
                lhs: format!("W is {rows}x{cols}"),
                rhs: format!("x has length {}", self.src_len(ps, x)),
            });
        }
        if self.src_len(ps, b) != rows {
            return Err(Error::Dimension {
                op: "matvec",
                lhs: format!("W is {rows}x{cols}"),
                rhs: format!("b has length {}", self.src_len(ps, b)),
            });
        }
        let (out, off) = self.push_node(rows);
        let (head, tail) = self.vals.split_at_mut(off);
        matrix::matvec_into(
            ps.get(w).as_slice(),
            rows,
            cols,
            read(head, &self.nodes, ps, x),
            read(head, &self.nodes, ps, b),
            &mut tail[..rows],
        );
        self.record(Op::MatVec { w, x, b, out });
        Ok(out)
    }

    pub fn dot(&mut self, ps: &ParamSet, a: impl Into<Src>, b: impl Into<Src>) -> Result<NodeId> {
        let (a, b) = (a.into(), b.into());
        let (la, lb) = (self.src_len(ps, a), self.src_len(ps, b));
        if la != lb {
            return Err(Error::Dimension {
                op: "dot",
                lhs: format!("length {la}"),
                rhs: format!("length {lb}"),
            });
        }
        let (out, off) = self.push_node(1);
        let (head, tail) = self.vals.split_at_mut(off);
        tail[0] = matrix::dot_unchecked(
            read(head, &self.nodes, ps, a),
            read(head, &self.nodes, ps, b),
        );
        self.record(Op::Dot { a, b, out });
        Ok(out)
    }

    /// Cosine similarity; a zero vector on either side gives value 0 and a
    /// zero gradient for both sides.
    pub fn cosine(&mut self, ps: &ParamSet, a: impl Into<Src>, b: impl Into<Src>) -> Result<NodeId> {
        let (a, b) = (a.into(), b.into());
        let (la, lb) = (self.src_len(ps, a), self.src_len(ps, b));
        if la != lb {
            return Err(Error::Dimension {
                op: "cosine",
                lhs: format!("length {la}"),
                rhs: format!("length {lb}"),
            });
        }
        let (out, off) = self.push_node(1);
        let (head, tail) = self.vals.split_at_mut(off);
        tail[0] = matrix::cosine(
            read(head, &self.nodes, ps, a),
            read(head, &self.nodes, ps, b),
        )?;
        self.record(Op::Cosine { a, b, out });
        Ok(out)
    }

    pub fn leaky_relu(&mut self, ps: &ParamSet, x: impl Into<Src>, slope: f64) -> NodeId {
        let x = x.into();
        let n = self.src_len(ps, x);
        let (out, off) = self.push_node(n);
        let (head, tail) = self.vals.split_at_mut(off);
        let xs = read(head, &self.nodes, ps, x);
        for i in 0..n {
            tail[i] = leaky_relu(xs[i], slope);
        }
        self.record(Op::LeakyRelu { x, slope, out });
        out
    }

    /// Elementwise product, used by the noise layer with `scale` holding the
    /// sampled multipliers as a constant node.
    pub fn mul_elem(
        &mut self,
        ps: &ParamSet,
        x: impl Into<Src>,
        scale: impl Into<Src>,
    ) -> Result<NodeId> {
        let (x, scale) = (x.into(), scale.into());
        let n = self.src_len(ps, x);
        if self.src_len(ps, scale) != n {
            return Err(Error::Dimension {
                op: "mul_elem",
                lhs: format!("length {n}"),
                rhs: format!("length {}", self.src_len(ps, scale)),
            });
        }
        let (out, off) = self.push_node(n);
        let (head, tail) = self.vals.split_at_mut(off);
        let xs = read(head, &self.nodes, ps, x);
        let ss = read(head, &self.nodes, ps, scale);
        for i in 0..n {
            tail[i] = xs[i] * ss[i];
        }
        self.record(Op::MulElem { x, scale, out });
        Ok(out)
    }

    /// Mean of the given embedding rows concatenated with the constant
    /// numeric vector `x_n`. With no rows this is just `x_n` as a leaf.
    pub fn embed_mean(
        &mut self,
        ps: &ParamSet,
        rows: &[(ParamId, usize)],
        x_n: &[f64],
    ) -> Result<NodeId> {
        if rows.is_empty() {
            return Ok(self.input(x_n));
        }
        let dim = ps.get(rows[0].0).cols();
        for &(table, row) in rows {
            let t = ps.get(table);
            if t.cols() != dim {
                return Err(Error::Dimension {
                    op: "embed_mean",
                    lhs: format!("embedding width {dim}"),
                    rhs: format!("embedding width {}", t.cols()),
                });
            }
            if row >= t.rows() {
                return Err(Error::usage(format!(
                    "embedding row {row} out of range for a {}x{} table",
                    t.rows(),
                    t.cols()
                )));
            }
        }
        let (out, off) = self.push_node(dim + x_n.len());
        let inv_k = 1.0 / rows.len() as f64;
        for &(table, row) in rows {
            let r = ps.get(table).row(row);
            for i in 0..dim {
                self.vals[off + i] += r[i];
            }
        }
        for i in 0..dim {
            self.vals[off + i] *= inv_k;
        }
        self.vals[off + dim..off + dim + x_n.len()].copy_from_slice(x_n);
        self.record(Op::EmbedMean {
            rows: rows.to_vec(),
            dim,
            out,
        });
        Ok(out)
    }

    /// `w[idx] * x` for scalar `x`. Couples one entry of a weight vector
    /// (a level weight, or the shared multiplier) into a product.
    pub fn scale_entry(
        &mut self,
        ps: &ParamSet,
        w: impl Into<Src>,
        idx: usize,
        x: impl Into<Src>,
    ) -> Result<NodeId> {
        let (w, x) = (w.into(), x.into());
        if idx >= self.src_len(ps, w) {
            return Err(Error::usage(format!(
                "scale_entry index {idx} out of range for length {}",
                self.src_len(ps, w)
            )));
        }
        if self.src_len(ps, x) != 1 {
            return Err(Error::usage("scale_entry expects a scalar operand"));
        }
        let (out, off) = self.push_node(1);
        let (head, tail) = self.vals.split_at_mut(off);
        tail[0] = read(head, &self.nodes, ps, w)[idx] * read(head, &self.nodes, ps, x)[0];
        self.record(Op::ScaleEntry { w, idx, x, out });
        Ok(out)
    }

    /// `scale * sum(terms)` over scalar terms.
    pub fn sum_scale(&mut self, ps: &ParamSet, terms: &[Src], scale: f64) -> Result<NodeId> {
        for &t in terms {
            if self.src_len(ps, t) != 1 {
                return Err(Error::usage("sum_scale expects scalar terms"));
            }
        }
        let (out, off) = self.push_node(1);
        let (head, tail) = self.vals.split_at_mut(off);
        let mut acc = 0.0;
        for &t in terms {
            acc += read(head, &self.nodes, ps, t)[0];
        }
        tail[0] = scale * acc;
        self.record(Op::SumScale {
            terms: terms.to_vec(),
            scale,
            out,
        });
        Ok(out)
    }

    pub fn sigmoid(&mut self, ps: &ParamSet, x: impl Into<Src>) -> NodeId {
        let x = x.into();
        let n = self.src_len(ps, x);
        let (out, off) = self.push_node(n);
        let (head, tail) = self.vals.split_at_mut(off);
        let xs = read(head, &self.nodes, ps, x);
        for i in 0..n {
            tail[i] = sigmoid(xs[i]);
        }
        self.record(Op::Sigmoid { x, out });
        out
    }

    /// One binary cross-entropy term `-(y ln p + (1-y) ln(1-p))` with `p`
    /// clamped to `[PROB_EPS, 1 - PROB_EPS]`. Where the clamp is active the
    /// gradient is zero.
    pub fn bce_term(&mut self, ps: &ParamSet, p: impl Into<Src>, y: f64) -> Result<NodeId> {
        let p = p.into();
        if self.src_len(ps, p) != 1 {
            return Err(Error::usage("bce_term expects a scalar probability"));
        }
        let (out, off) = self.push_node(1);
        let (head, tail) = self.vals.split_at_mut(off);
        let pv = read(head, &self.nodes, ps, p)[0].clamp(PROB_EPS, 1.0 - PROB_EPS);
        tail[0] = -(y * pv.ln() + (1.0 - y) * (1.0 - pv).ln());
        self.record(Op::BceTerm { p, y, out });
        Ok(out)
    }

    /// Squared error term `(p - y)^2`.
    pub fn sq_diff(&mut self, ps: &ParamSet, p: impl Into<Src>, y: f64) -> Result<NodeId> {
        let p = p.into();
        if self.src_len(ps, p) != 1 {
            return Err(Error::usage("sq_diff expects a scalar operand"));
        }
        let (out, off) = self.push_node(1);
        let (head, tail) = self.vals.split_at_mut(off);
        let d = read(head, &self.nodes, ps, p)[0] - y;
        tail[0] = d * d;
        self.record(Op::SqDiff { p, y, out });
        Ok(out)
    }

    // ---- backward ----------------------------------------------------------

    /// Gradient of the scalar node `out` with respect to every parameter in
    /// `ps`. Parameters the output never touched get zero tensors.
    pub fn backward(&self, ps: &ParamSet, out: NodeId) -> Result<Gradients> {
        if out.0 >= self.nodes.len() {
            return Err(Error::usage(format!(
                "backward from node {} but the tape has {} nodes",
                out.0,
                self.nodes.len()
            )));
        }
        if self.nodes[out.0].len != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar output, node has length {}",
                self.nodes[out.0].len
            )));
        }
        let mut grads = Gradients::zeros_like(ps);
        let mut node_g = vec![0.0; self.vals.len()];
        node_g[self.nodes[out.0].off] = 1.0;

        for op in self.ops.iter().rev() {
            self.apply_backward(ps, op, &mut node_g, &mut grads);
        }
        Ok(grads)
    }

    fn src_val<'a>(&'a self, ps: &'a ParamSet, src: Src) -> &'a [f64] {
        match src {
            Src::Node(n) => self.value(n),
            Src::Param(p) => ps.get(p).as_slice(),
        }
    }

    /// Read the upstream gradient of the op's output, then accumulate into
    /// its inputs. The gradient buffer is split at the output offset: every
    /// input of an op lives strictly before its output, so input slots sit
    /// in the left half while the upstream gradient is read from the right.
    fn apply_backward(&self, ps: &ParamSet, op: &Op, node_g: &mut [f64], grads: &mut Gradients) {
        let out = match *op {
            Op::MatVec { out, .. }
            | Op::Dot { out, .. }
            | Op::Cosine { out, .. }
            | Op::LeakyRelu { out, .. }
            | Op::MulElem { out, .. }
            | Op::EmbedMean { out, .. }
            | Op::ScaleEntry { out, .. }
            | Op::SumScale { out, .. }
            | Op::Sigmoid { out, .. }
            | Op::BceTerm { out, .. }
            | Op::SqDiff { out, .. } => self.nodes[out.0],
        };
        let (gin, gout) = node_g.split_at_mut(out.off);
        let g = &gout[..out.len];

        // Gradient slot of an input, wherever it lives.
        let nodes = &self.nodes;
        fn slot<'a>(
            nodes: &[Span],
            gin: &'a mut [f64],
            grads: &'a mut Gradients,
            src: Src,
        ) -> &'a mut [f64] {
            match src {
                Src::Node(n) => {
                    let s = nodes[n.0];
                    &mut gin[s.off..s.off + s.len]
                }
                Src::Param(p) => grads.get_mut(p).as_mut_slice(),
            }
        }

        match *op {
            Op::MatVec { w, x, b, out: _ } => {
                let (rows, cols) = (ps.get(w).rows(), ps.get(w).cols());
                let xv = self.src_val(ps, x);
                {
                    let gw = grads.get_mut(w).as_mut_slice();
                    for r in 0..rows {
                        for c in 0..cols {
                            gw[r * cols + c] += g[r] * xv[c];
                        }
                    }
                }
                let wm = ps.get(w);
                {
                    let dx = slot(nodes, gin, grads, x);
                    for r in 0..rows {
                        let row = wm.row(r);
                        for c in 0..cols {
                            dx[c] += g[r] * row[c];
                        }
                    }
                }
                let db = slot(nodes, gin, grads, b);
                for r in 0..rows {
                    db[r] += g[r];
                }
            }
            Op::Dot { a, b, out: _ } => {
                let g = g[0];
                let av = self.src_val(ps, a);
                let bv = self.src_val(ps, b);
                {
                    let da = slot(nodes, gin, grads, a);
                    for i in 0..bv.len() {
                        da[i] += g * bv[i];
                    }
                }
                let db = slot(nodes, gin, grads, b);
                for i in 0..av.len() {
                    db[i] += g * av[i];
                }
            }
            Op::Cosine { a, b, out } => {
                let g = g[0];
                let c = self.value(out)[0];
                let av = self.src_val(ps, a);
                let bv = self.src_val(ps, b);
                let na = matrix::dot_unchecked(av, av).sqrt();
                let nb = matrix::dot_unchecked(bv, bv).sqrt();
                if na == 0.0 || nb == 0.0 {
                    return;
                }
                {
                    let da = slot(nodes, gin, grads, a);
                    for i in 0..av.len() {
                        da[i] += g * (bv[i] / (na * nb) - c * av[i] / (na * na));
                    }
                }
                let db = slot(nodes, gin, grads, b);
                for i in 0..bv.len() {
                    db[i] += g * (av[i] / (na * nb) - c * bv[i] / (nb * nb));
                }
            }
            Op::LeakyRelu { x, slope, out: _ } => {
                let xv = self.src_val(ps, x);
                let dx = slot(nodes, gin, grads, x);
                for i in 0..xv.len() {
                    dx[i] += g[i] * if xv[i] >= 0.0 { 1.0 } else { slope };
                }
            }
            Op::MulElem { x, scale, out: _ } => {
                let xv = self.src_val(ps, x);
                let sv = self.src_val(ps, scale);
                {
                    let dx = slot(nodes, gin, grads, x);
                    for i in 0..sv.len() {
                        dx[i] += g[i] * sv[i];
                    }
                }
                let ds = slot(nodes, gin, grads, scale);
                for i in 0..xv.len() {
                    ds[i] += g[i] * xv[i];
                }
            }
            Op::EmbedMean { ref rows, dim, out: _ } => {
                let inv_k = 1.0 / rows.len() as f64;
                for &(table, row) in rows {
                    let cols = ps.get(table).cols();
                    let gt = grads.get_mut(table).as_mut_slice();
                    for i in 0..dim {
                        gt[row * cols + i] += g[i] * inv_k;
                    }
                }
            }
            Op::ScaleEntry { w, idx, x, out: _ } => {
                let g = g[0];
                let wv = self.src_val(ps, w)[idx];
                let xv = self.src_val(ps, x)[0];
                slot(nodes, gin, grads, w)[idx] += g * xv;
                slot(nodes, gin, grads, x)[0] += g * wv;
            }
            Op::SumScale { ref terms, scale, out: _ } => {
                let g = g[0];
                for &t in terms {
                    slot(nodes, gin, grads, t)[0] += g * scale;
                }
            }
            Op::Sigmoid { x, out } => {
                let sv = self.value(out);
                let dx = slot(nodes, gin, grads, x);
                for i in 0..sv.len() {
                    dx[i] += g[i] * sv[i] * (1.0 - sv[i]);
                }
            }
            Op::BceTerm { p, y, out: _ } => {
                let g = g[0];
                let pv = self.src_val(ps, p)[0];
                if pv < PROB_EPS || pv > 1.0 - PROB_EPS {
                    return;
                }
                slot(nodes, gin, grads, p)[0] += g * (-(y / pv) + (1.0 - y) / (1.0 - pv));
            }
            Op::SqDiff { p, y, out: _ } => {
                let g = g[0];
                let pv = self.src_val(ps, p)[0];
                slot(nodes, gin, grads, p)[0] += g * 2.0 * (pv - y);
            }
        }
    }
}

/// Resolve a `Src` against the arena prefix `head` (every input of an op
/// lives strictly before the op's output region) or the parameter set.
fn read<'a>(head: &'a [f64], nodes: &[Span], ps: &'a ParamSet, src: Src) -> &'a [f64] {
    match src {
        Src::Node(n) => {
            let s = nodes[n.0];
            &head[s.off..s.off + s.len]
        }
        Src::Param(p) => ps.get(p).as_slice(),
    }
}

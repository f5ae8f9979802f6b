use crate::error::{dim_err, MtoError, Result};

use super::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Differentiable operations understood by the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    MatMul,
    /// Elementwise sum; the right operand may be a row vector broadcast over rows.
    Add,
    /// Elementwise product; the right operand may be a `[m, 1]` column broadcast over columns.
    Mul,
    Relu,
    Sigmoid,
    /// Row-wise softmax over the last axis.
    Softmax,
    Mean,
    /// Mean binary cross-entropy of logits (first input) against targets (second input).
    BceWithLogits,
    Mse,
    /// Concatenation along the last axis.
    Concat,
    /// Column range `[start, end)` along the last axis.
    Slice { start: usize, end: usize },
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add { a: Var, b: Var, broadcast: bool },
    Mul { a: Var, b: Var, broadcast: bool },
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Mean(Var),
    Bce(Var, Var),
    Mse(Var, Var),
    Concat(Vec<Var>),
    Slice { input: Var, start: usize, end: usize },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
    tracked: bool,
}

impl Node {
    fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            n => self.shape[..n - 1].iter().product(),
        }
    }

    fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }
}

/// Wengert list for one forward pass. Nodes are appended in evaluation order,
/// so reverse insertion order is a valid reverse topological order.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar loss with respect to every tracked node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, or zeros of `len` when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable tensor.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(Op::Leaf, t.shape().to_vec(), t.data().to_vec(), true)
    }

    /// Registers a constant input (features, labels).
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(Op::Leaf, t.shape().to_vec(), t.data().to_vec(), false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Copies a node out as a standalone tensor.
    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>, tracked: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            op,
            shape,
            value,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Generic entry point: applies `kind` to `inputs`.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(MtoError::Contract(format!(
                    "{kind:?} takes {n} inputs, got {}",
                    inputs.len()
                )))
            }
        };
        match kind {
            OpKind::MatMul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            OpKind::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpKind::Mul => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            OpKind::Relu => {
                arity(1)?;
                Ok(self.relu(inputs[0]))
            }
            OpKind::Sigmoid => {
                arity(1)?;
                Ok(self.sigmoid(inputs[0]))
            }
            OpKind::Softmax => {
                arity(1)?;
                Ok(self.softmax(inputs[0]))
            }
            OpKind::Mean => {
                arity(1)?;
                Ok(self.mean(inputs[0]))
            }
            OpKind::BceWithLogits => {
                arity(2)?;
                self.bce_with_logits(inputs[0], inputs[1])
            }
            OpKind::Mse => {
                arity(2)?;
                self.mse(inputs[0], inputs[1])
            }
            OpKind::Concat => self.concat(inputs),
            OpKind::Slice { start, end } => {
                arity(1)?;
                self.slice(inputs[0], start, end)
            }
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(b));
        if na.shape.len() != 2 || nb.shape.len() != 2 || na.shape[1] != nb.shape[0] {
            return Err(dim_err(
                "matmul",
                format!("{:?} x {:?}", na.shape, nb.shape),
            ));
        }
        let (m, k, n) = (na.shape[0], na.shape[1], nb.shape[1]);
        let mut out = vec![0.0; m * n];
        matmul_into(&na.value, &nb.value, &mut out, m, k, n);
        let tracked = na.tracked || nb.tracked;
        Ok(self.push(Op::MatMul(a, b), vec![m, n], out, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(b));
        let broadcast = if na.shape == nb.shape {
            false
        } else if nb.rows() == 1 && nb.value.len() == na.cols() && na.shape.len() == 2 {
            true
        } else {
            return Err(dim_err("add", format!("{:?} + {:?}", na.shape, nb.shape)));
        };
        let cols = na.cols();
        let out: Vec<f64> = if broadcast {
            na.value
                .iter()
                .enumerate()
                .map(|(i, x)| x + nb.value[i % cols])
                .collect()
        } else {
            na.value.iter().zip(&nb.value).map(|(x, y)| x + y).collect()
        };
        let (shape, tracked) = (na.shape.clone(), na.tracked || nb.tracked);
        Ok(self.push(Op::Add { a, b, broadcast }, shape, out, tracked))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a), self.node(b));
        let broadcast = if na.shape == nb.shape {
            false
        } else if na.shape.len() == 2 && nb.shape == [na.shape[0], 1] {
            true
        } else {
            return Err(dim_err("mul", format!("{:?} * {:?}", na.shape, nb.shape)));
        };
        let cols = na.cols();
        let out: Vec<f64> = if broadcast {
            na.value
                .iter()
                .enumerate()
                .map(|(i, x)| x * nb.value[i / cols])
                .collect()
        } else {
            na.value.iter().zip(&nb.value).map(|(x, y)| x * y).collect()
        };
        let (shape, tracked) = (na.shape.clone(), na.tracked || nb.tracked);
        Ok(self.push(Op::Mul { a, b, broadcast }, shape, out, tracked))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let na = self.node(a);
        let out = na.value.iter().map(|x| x.max(0.0)).collect();
        let (shape, tracked) = (na.shape.clone(), na.tracked);
        self.push(Op::Relu(a), shape, out, tracked)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let na = self.node(a);
        let out = na.value.iter().map(|&x| sigmoid(x)).collect();
        let (shape, tracked) = (na.shape.clone(), na.tracked);
        self.push(Op::Sigmoid(a), shape, out, tracked)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let na = self.node(a);
        let cols = na.cols();
        let mut out = na.value.clone();
        for row in out.chunks_mut(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            row.iter_mut().for_each(|x| *x /= sum);
        }
        let (shape, tracked) = (na.shape.clone(), na.tracked);
        self.push(Op::Softmax(a), shape, out, tracked)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let na = self.node(a);
        let m = na.value.iter().sum::<f64>() / na.value.len() as f64;
        let tracked = na.tracked;
        self.push(Op::Mean(a), Vec::new(), vec![m], tracked)
    }

    pub fn bce_with_logits(&mut self, logits: Var, targets: Var) -> Result<Var> {
        let (nz, ny) = (self.node(logits), self.node(targets));
        if nz.value.len() != ny.value.len() {
            return Err(dim_err(
                "bce_with_logits",
                format!("{:?} vs {:?}", nz.shape, ny.shape),
            ));
        }
        let n = nz.value.len() as f64;
        let loss = nz
            .value
            .iter()
            .zip(&ny.value)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        let tracked = nz.tracked || ny.tracked;
        Ok(self.push(Op::Bce(logits, targets), Vec::new(), vec![loss], tracked))
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (np, nt) = (self.node(pred), self.node(target));
        if np.value.len() != nt.value.len() {
            return Err(dim_err("mse", format!("{:?} vs {:?}", np.shape, nt.shape)));
        }
        let n = np.value.len() as f64;
        let loss = np
            .value
            .iter()
            .zip(&nt.value)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        let tracked = np.tracked || nt.tracked;
        Ok(self.push(Op::Mse(pred, target), Vec::new(), vec![loss], tracked))
    }

    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| MtoError::Contract("concat of zero inputs".into()))?;
        let rows = self.node(*first).rows();
        if inputs
            .iter()
            .any(|v| self.node(*v).shape.len() != 2 || self.node(*v).rows() != rows)
        {
            let shapes: Vec<_> = inputs.iter().map(|v| self.node(*v).shape.clone()).collect();
            return Err(dim_err("concat", format!("{shapes:?}")));
        }
        let total: usize = inputs.iter().map(|v| self.node(*v).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in inputs {
                let n = self.node(*v);
                let c = n.cols();
                out.extend_from_slice(&n.value[r * c..(r + 1) * c]);
            }
        }
        let tracked = inputs.iter().any(|v| self.node(*v).tracked);
        Ok(self.push(Op::Concat(inputs.to_vec()), vec![rows, total], out, tracked))
    }

    pub fn slice(&mut self, input: Var, start: usize, end: usize) -> Result<Var> {
        let n = self.node(input);
        let cols = n.cols();
        if n.shape.len() != 2 || start >= end || end > cols {
            return Err(dim_err(
                "slice",
                format!("[{start}, {end}) of {:?}", n.shape),
            ));
        }
        let rows = n.rows();
        let width = end - start;
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            out.extend_from_slice(&n.value[r * cols + start..r * cols + end]);
        }
        let tracked = n.tracked;
        Ok(self.push(
            Op::Slice { input, start, end },
            vec![rows, width],
            out,
            tracked,
        ))
    }

    /// Reverse sweep from a scalar `loss`. The tape is left intact so several
    /// losses recorded on the same forward pass can be differentiated in turn.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(MtoError::Contract("backward on an empty tape".into()));
        }
        let ln = self.node(loss);
        if ln.value.len() != 1 {
            return Err(MtoError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                ln.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.tracked {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.tracked {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (na, nb) = (self.node(*a), self.node(*b));
                let (m, k, n) = (na.shape[0], na.shape[1], nb.shape[1]);
                if na.tracked {
                    // dA = dC · Bᵀ
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &nb.value[p * n..(p + 1) * n];
                            da[i * k + p] = dot(grow, brow);
                        }
                    }
                    accumulate(grads, *a, da);
                }
                if nb.tracked {
                    // dB = Aᵀ · dC
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = na.value[i * k + p];
                            if aip != 0.0 {
                                let dst = &mut db[p * n..(p + 1) * n];
                                for (d, gv) in dst.iter_mut().zip(grow) {
                                    *d += aip * gv;
                                }
                            }
                        }
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::Add { a, b, broadcast } => {
                if self.node(*a).tracked {
                    accumulate(grads, *a, g.to_vec());
                }
                let nb = self.node(*b);
                if nb.tracked {
                    if *broadcast {
                        let cols = nb.value.len();
                        let mut db = vec![0.0; cols];
                        for row in g.chunks(cols) {
                            for (d, x) in db.iter_mut().zip(row) {
                                *d += x;
                            }
                        }
                        accumulate(grads, *b, db);
                    } else {
                        accumulate(grads, *b, g.to_vec());
                    }
                }
            }
            Op::Mul { a, b, broadcast } => {
                let (na, nb) = (self.node(*a), self.node(*b));
                if *broadcast {
                    let cols = na.cols();
                    if na.tracked {
                        let da = g
                            .iter()
                            .enumerate()
                            .map(|(i, x)| x * nb.value[i / cols])
                            .collect();
                        accumulate(grads, *a, da);
                    }
                    if nb.tracked {
                        let db = g
                            .chunks(cols)
                            .zip(na.value.chunks(cols))
                            .map(|(gr, ar)| dot(gr, ar))
                            .collect();
                        accumulate(grads, *b, db);
                    }
                } else {
                    if na.tracked {
                        let da = g.iter().zip(&nb.value).map(|(x, y)| x * y).collect();
                        accumulate(grads, *a, da);
                    }
                    if nb.tracked {
                        let db = g.iter().zip(&na.value).map(|(x, y)| x * y).collect();
                        accumulate(grads, *b, db);
                    }
                }
            }
            Op::Relu(a) => {
                let na = self.node(*a);
                let da = g
                    .iter()
                    .zip(&na.value)
                    .map(|(x, v)| if *v > 0.0 { *x } else { 0.0 })
                    .collect();
                accumulate(grads, *a, da);
            }
            Op::Sigmoid(a) => {
                let da = g
                    .iter()
                    .zip(&node.value)
                    .map(|(x, s)| x * s * (1.0 - s))
                    .collect();
                accumulate(grads, *a, da);
            }
            Op::Softmax(a) => {
                let cols = node.cols();
                let mut da = vec![0.0; g.len()];
                for ((drow, grow), srow) in da
                    .chunks_mut(cols)
                    .zip(g.chunks(cols))
                    .zip(node.value.chunks(cols))
                {
                    let inner = dot(grow, srow);
                    for ((d, gv), s) in drow.iter_mut().zip(grow).zip(srow) {
                        *d = s * (gv - inner);
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::Mean(a) => {
                let na = self.node(*a);
                let scale = g[0] / na.value.len() as f64;
                accumulate(grads, *a, vec![scale; na.value.len()]);
            }
            Op::Bce(z, y) => {
                let (nz, ny) = (self.node(*z), self.node(*y));
                let scale = g[0] / nz.value.len() as f64;
                if nz.tracked {
                    let dz = nz
                        .value
                        .iter()
                        .zip(&ny.value)
                        .map(|(&zv, &yv)| scale * (sigmoid(zv) - yv))
                        .collect();
                    accumulate(grads, *z, dz);
                }
                if ny.tracked {
                    let dy = nz.value.iter().map(|&zv| -scale * zv).collect();
                    accumulate(grads, *y, dy);
                }
            }
            Op::Mse(p, t) => {
                let (np, nt) = (self.node(*p), self.node(*t));
                let scale = 2.0 * g[0] / np.value.len() as f64;
                let diff: Vec<f64> = np
                    .value
                    .iter()
                    .zip(&nt.value)
                    .map(|(a, b)| scale * (a - b))
                    .collect();
                if nt.tracked {
                    accumulate(grads, *t, diff.iter().map(|d| -d).collect());
                }
                if np.tracked {
                    accumulate(grads, *p, diff);
                }
            }
            Op::Concat(inputs) => {
                let rows = node.rows();
                let total = node.cols();
                let mut offset = 0;
                for v in inputs {
                    let nv = self.node(*v);
                    let c = nv.cols();
                    if nv.tracked {
                        let mut dv = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            dv.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                        }
                        accumulate(grads, *v, dv);
                    }
                    offset += c;
                }
            }
            Op::Slice { input, start, end } => {
                let ni = self.node(*input);
                let cols = ni.cols();
                let width = end - start;
                let mut di = vec![0.0; ni.value.len()];
                for (r, grow) in g.chunks(width).enumerate() {
                    di[r * cols + start..r * cols + end].copy_from_slice(grow);
                }
                accumulate(grads, *input, di);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(&delta).for_each(|(e, d)| *e += d),
        slot @ None => *slot = Some(delta),
    }
}

pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

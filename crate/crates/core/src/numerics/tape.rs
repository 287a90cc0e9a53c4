//! Reverse-mode automatic differentiation over a per-pass tape.
//!
//! A `Tape` records every operation of one forward pass in order; `backward`
//! replays the records once in reverse, accumulating gradients additively so
//! fan-out sums correctly. Tapes are rebuilt per pass (tree shapes differ per
//! sample) and are confined to one thread for the pass.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Handle to a tensor recorded on a tape. Only valid for the tape that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Value(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// [m,k]·[k,n] -> [m,n]
    Matmul { a: Value, b: Value },
    /// [r,c]·[c] -> [r]
    MatVec { m: Value, x: Value },
    /// mᵀ·x with m [n,c], x [n] -> [c]
    MatVecT { m: Value, x: Value },
    Add { a: Value, b: Value },
    Sub { a: Value, b: Value },
    Mul { a: Value, b: Value },
    Sigmoid { x: Value },
    Tanh { x: Value },
    Exp { x: Value },
    Log { x: Value },
    Neg { x: Value },
    Scale { x: Value, k: f64 },
    AddConst { x: Value },
    Softmax { x: Value },
    LogSoftmax { x: Value },
    Sum { x: Value },
    Concat { parts: Vec<Value> },
    StackRows { rows: Vec<Value> },
    Row { m: Value, index: usize },
    Pick { x: Value, index: usize },
    Detach,
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations of a single forward/backward pass.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Enter a tensor onto the tape as a leaf (parameter or input).
    pub fn leaf(&mut self, t: Tensor) -> Value {
        self.push(t, Op::Leaf)
    }

    /// Leaf holding a single scalar constant.
    pub fn scalar(&mut self, x: f64) -> Value {
        self.leaf(Tensor::scalar(x))
    }

    /// Leaf holding an all-zero vector.
    pub fn zeros_vec(&mut self, n: usize) -> Value {
        self.leaf(Tensor::zeros(vec![n]))
    }

    pub fn value(&self, v: Value) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated for `v` by the last `backward` call.
    pub fn grad(&self, v: Value) -> &[f64] {
        &self.grads[v.0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Value {
        let n = value.len();
        self.nodes.push(Node { value, op });
        self.grads.push(vec![0.0; n]);
        Value(self.nodes.len() - 1)
    }

    fn checked(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Value> {
        value.check_finite(name)?;
        Ok(self.push(value, op))
    }

    // ── forward operations ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let (da, db) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = da[i * k + p];
                for j in 0..n {
                    out[i * n + j] += aip * db[p * n + j];
                }
            }
        }
        self.checked(Tensor::new(vec![m, n], out)?, Op::Matmul { a, b }, "matmul")
    }

    pub fn matvec(&mut self, m: Value, x: Value) -> Result<Value> {
        let (tm, tx) = (self.value(m), self.value(x));
        if tm.shape().len() != 2 || tx.shape().len() != 1 || tm.cols() != tx.len() {
            return Err(Error::ShapeMismatch {
                op: "matvec",
                lhs: tm.shape().to_vec(),
                rhs: tx.shape().to_vec(),
            });
        }
        let (r, c) = (tm.rows(), tm.cols());
        let (dm, dx) = (tm.data(), tx.data());
        let mut out = vec![0.0; r];
        for i in 0..r {
            let row = &dm[i * c..(i + 1) * c];
            out[i] = row.iter().zip(dx).map(|(a, b)| a * b).sum();
        }
        self.checked(Tensor::vector(out), Op::MatVec { m, x }, "matvec")
    }

    /// mᵀ·x: weighted combination of the rows of `m` (attention contexts).
    pub fn matvec_t(&mut self, m: Value, x: Value) -> Result<Value> {
        let (tm, tx) = (self.value(m), self.value(x));
        if tm.shape().len() != 2 || tx.shape().len() != 1 || tm.rows() != tx.len() {
            return Err(Error::ShapeMismatch {
                op: "matvec_t",
                lhs: tm.shape().to_vec(),
                rhs: tx.shape().to_vec(),
            });
        }
        let (r, c) = (tm.rows(), tm.cols());
        let (dm, dx) = (tm.data(), tx.data());
        let mut out = vec![0.0; c];
        for i in 0..r {
            let xi = dx[i];
            for j in 0..c {
                out[j] += dm[i * c + j] * xi;
            }
        }
        self.checked(Tensor::vector(out), Op::MatVecT { m, x }, "matvec_t")
    }

    fn elementwise(
        &mut self,
        a: Value,
        b: Value,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(Value, Value) -> Op,
    ) -> Result<Value> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(ta.shape().to_vec(), data)?
        } else if ta.is_scalar() {
            let x = ta.item();
            Tensor::new(tb.shape().to_vec(), tb.data().iter().map(|&y| f(x, y)).collect())?
        } else if tb.is_scalar() {
            let y = tb.item();
            Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x, y)).collect())?
        } else {
            return Err(Error::ShapeMismatch {
                op,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        };
        self.checked(out, make(a, b), op)
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        self.elementwise(a, b, "add", |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value> {
        self.elementwise(a, b, "sub", |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    /// Hadamard product (scalar broadcasting allowed on either side).
    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value> {
        self.elementwise(a, b, "mul", |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    fn unary(
        &mut self,
        x: Value,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        make: impl Fn(Value) -> Op,
    ) -> Result<Value> {
        let tx = self.value(x);
        let out = Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|&v| f(v)).collect())?;
        self.checked(out, make(x), op)
    }

    pub fn sigmoid(&mut self, x: Value) -> Result<Value> {
        self.unary(x, "sigmoid", |v| 1.0 / (1.0 + (-v).exp()), |x| Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: Value) -> Result<Value> {
        self.unary(x, "tanh", f64::tanh, |x| Op::Tanh { x })
    }

    pub fn exp(&mut self, x: Value) -> Result<Value> {
        self.unary(x, "exp", f64::exp, |x| Op::Exp { x })
    }

    pub fn log(&mut self, x: Value) -> Result<Value> {
        if self.value(x).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidOperand {
                op: "log",
                msg: "log of non-positive value".into(),
            });
        }
        self.unary(x, "log", f64::ln, |x| Op::Log { x })
    }

    pub fn neg(&mut self, x: Value) -> Result<Value> {
        self.unary(x, "neg", |v| -v, |x| Op::Neg { x })
    }

    pub fn scale(&mut self, x: Value, k: f64) -> Result<Value> {
        self.unary(x, "scale", |v| v * k, |x| Op::Scale { x, k })
    }

    pub fn add_const(&mut self, x: Value, k: f64) -> Result<Value> {
        self.unary(x, "add_const", |v| v + k, |x| Op::AddConst { x })
    }

    /// Max-subtracted softmax over a vector.
    pub fn softmax(&mut self, x: Value) -> Result<Value> {
        let tx = self.value(x);
        if tx.is_empty() {
            return Err(Error::InvalidOperand { op: "softmax", msg: "empty input".into() });
        }
        let out = Tensor::new(tx.shape().to_vec(), softmax_data(tx.data()))?;
        self.checked(out, Op::Softmax { x }, "softmax")
    }

    /// Max-subtracted log-softmax over a vector.
    pub fn log_softmax(&mut self, x: Value) -> Result<Value> {
        let tx = self.value(x);
        if tx.is_empty() {
            return Err(Error::InvalidOperand { op: "log_softmax", msg: "empty input".into() });
        }
        let d = tx.data();
        let max = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = d.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
        let out = Tensor::new(tx.shape().to_vec(), d.iter().map(|&v| v - lse).collect())?;
        self.checked(out, Op::LogSoftmax { x }, "log_softmax")
    }

    /// Full reduction to a scalar.
    pub fn sum(&mut self, x: Value) -> Result<Value> {
        let s = self.value(x).data().iter().sum();
        self.checked(Tensor::scalar(s), Op::Sum { x }, "sum")
    }

    pub fn mean(&mut self, x: Value) -> Result<Value> {
        let n = self.value(x).len();
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Inner product of two equally sized vectors.
    pub fn dot(&mut self, a: Value, b: Value) -> Result<Value> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    /// Concatenate vectors into one vector.
    pub fn concat(&mut self, parts: &[Value]) -> Result<Value> {
        let mut data = Vec::new();
        for &p in parts {
            let tp = self.value(p);
            if tp.shape().len() != 1 {
                return Err(Error::InvalidOperand {
                    op: "concat",
                    msg: format!("expected vector, got shape {:?}", tp.shape()),
                });
            }
            data.extend_from_slice(tp.data());
        }
        self.checked(Tensor::vector(data), Op::Concat { parts: parts.to_vec() }, "concat")
    }

    /// Stack equally sized vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Value]) -> Result<Value> {
        if rows.is_empty() {
            return Err(Error::InvalidOperand { op: "stack_rows", msg: "no rows".into() });
        }
        let cols = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            let tr = self.value(r);
            if tr.shape().len() != 1 || tr.len() != cols {
                return Err(Error::ShapeMismatch {
                    op: "stack_rows",
                    lhs: vec![cols],
                    rhs: tr.shape().to_vec(),
                });
            }
            data.extend_from_slice(tr.data());
        }
        self.checked(
            Tensor::new(vec![rows.len(), cols], data)?,
            Op::StackRows { rows: rows.to_vec() },
            "stack_rows",
        )
    }

    /// Extract row `index` of a matrix (embedding lookup).
    pub fn row(&mut self, m: Value, index: usize) -> Result<Value> {
        let tm = self.value(m);
        if tm.shape().len() != 2 || index >= tm.rows() {
            return Err(Error::InvalidOperand {
                op: "row",
                msg: format!("row {} of shape {:?}", index, tm.shape()),
            });
        }
        let c = tm.cols();
        let data = tm.data()[index * c..(index + 1) * c].to_vec();
        self.checked(Tensor::vector(data), Op::Row { m, index }, "row")
    }

    /// Extract element `index` of a vector as a scalar.
    pub fn pick(&mut self, x: Value, index: usize) -> Result<Value> {
        let tx = self.value(x);
        if tx.shape().len() != 1 || index >= tx.len() {
            return Err(Error::InvalidOperand {
                op: "pick",
                msg: format!("index {} of shape {:?}", index, tx.shape()),
            });
        }
        let v = tx.data()[index];
        self.checked(Tensor::scalar(v), Op::Pick { x, index }, "pick")
    }

    /// Forward identity that blocks gradient flow.
    pub fn detach(&mut self, x: Value) -> Result<Value> {
        let t = self.value(x).clone();
        self.checked(t, Op::Detach, "detach")
    }

    // ── backward pass ───────────────────────────────────────────────────

    /// Propagate d(loss)/d(node) into every recorded node, in reverse
    /// recording order. Gradients accumulate additively across fan-out.
    pub fn backward(&mut self, loss: Value) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::InvalidOperand {
                op: "backward",
                msg: "value not recorded on this tape".into(),
            });
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::InvalidOperand {
                op: "backward",
                msg: format!("loss must be scalar, got shape {:?}", self.nodes[loss.0].value.shape()),
            });
        }
        for g in self.grads.iter_mut() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
        self.grads[loss.0][0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            let g = std::mem::take(&mut self.grads[i]);
            if g.iter().all(|&x| x == 0.0) {
                self.grads[i] = g;
                continue;
            }
            self.propagate(i, &g)?;
            self.grads[i] = g;
        }
        for g in &self.grads {
            if !g.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite { op: "backward" });
            }
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &[f64]) -> Result<()> {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf | Op::Detach => {}
            Op::Matmul { a, b } => {
                let ta = self.nodes[a.0].value.clone();
                let tb = self.nodes[b.0].value.clone();
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                {
                    let ga = &mut self.grads[a.0];
                    for i2 in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[i2 * n + j] * tb.data()[p * n + j];
                            }
                            ga[i2 * k + p] += s;
                        }
                    }
                }
                let gb = &mut self.grads[b.0];
                for p in 0..k {
                    for j in 0..n {
                        let mut s = 0.0;
                        for i2 in 0..m {
                            s += ta.data()[i2 * k + p] * g[i2 * n + j];
                        }
                        gb[p * n + j] += s;
                    }
                }
            }
            Op::MatVec { m, x } => {
                let tm = self.nodes[m.0].value.clone();
                let tx = self.nodes[x.0].value.clone();
                let (r, c) = (tm.rows(), tm.cols());
                {
                    let gm = &mut self.grads[m.0];
                    for i2 in 0..r {
                        let gi = g[i2];
                        if gi != 0.0 {
                            for j in 0..c {
                                gm[i2 * c + j] += gi * tx.data()[j];
                            }
                        }
                    }
                }
                let gx = &mut self.grads[x.0];
                for i2 in 0..r {
                    let gi = g[i2];
                    if gi != 0.0 {
                        for j in 0..c {
                            gx[j] += tm.data()[i2 * c + j] * gi;
                        }
                    }
                }
            }
            Op::MatVecT { m, x } => {
                let tm = self.nodes[m.0].value.clone();
                let tx = self.nodes[x.0].value.clone();
                let (r, c) = (tm.rows(), tm.cols());
                {
                    let gm = &mut self.grads[m.0];
                    for i2 in 0..r {
                        let xi = tx.data()[i2];
                        if xi != 0.0 {
                            for j in 0..c {
                                gm[i2 * c + j] += xi * g[j];
                            }
                        }
                    }
                }
                let gx = &mut self.grads[x.0];
                for i2 in 0..r {
                    let mut s = 0.0;
                    for j in 0..c {
                        s += tm.data()[i2 * c + j] * g[j];
                    }
                    gx[i2] += s;
                }
            }
            Op::Add { a, b } => {
                self.accumulate_broadcast(a, g, 1.0);
                self.accumulate_broadcast(b, g, 1.0);
            }
            Op::Sub { a, b } => {
                self.accumulate_broadcast(a, g, 1.0);
                self.accumulate_broadcast(b, g, -1.0);
            }
            Op::Mul { a, b } => {
                let tb = self.nodes[b.0].value.clone();
                let ta = self.nodes[a.0].value.clone();
                let gb_contrib: Vec<f64> = if ta.is_scalar() && !tb.is_scalar() {
                    g.iter().map(|&gi| gi * ta.item()).collect()
                } else {
                    g.iter().zip(ta.data()).map(|(&gi, &ai)| gi * ai).collect()
                };
                let ga_contrib: Vec<f64> = if tb.is_scalar() && !ta.is_scalar() {
                    g.iter().map(|&gi| gi * tb.item()).collect()
                } else {
                    g.iter().zip(tb.data()).map(|(&gi, &bi)| gi * bi).collect()
                };
                self.accumulate_reduced(a, &ga_contrib);
                self.accumulate_reduced(b, &gb_contrib);
            }
            Op::Sigmoid { x } => {
                let y = self.nodes[i].value.clone();
                let gx = &mut self.grads[x.0];
                for (j, (&gi, &yi)) in g.iter().zip(y.data()).enumerate() {
                    gx[j] += gi * yi * (1.0 - yi);
                }
            }
            Op::Tanh { x } => {
                let y = self.nodes[i].value.clone();
                let gx = &mut self.grads[x.0];
                for (j, (&gi, &yi)) in g.iter().zip(y.data()).enumerate() {
                    gx[j] += gi * (1.0 - yi * yi);
                }
            }
            Op::Exp { x } => {
                let y = self.nodes[i].value.clone();
                let gx = &mut self.grads[x.0];
                for (j, (&gi, &yi)) in g.iter().zip(y.data()).enumerate() {
                    gx[j] += gi * yi;
                }
            }
            Op::Log { x } => {
                let tx = self.nodes[x.0].value.clone();
                let gx = &mut self.grads[x.0];
                for (j, (&gi, &xi)) in g.iter().zip(tx.data()).enumerate() {
                    gx[j] += gi / xi;
                }
            }
            Op::Neg { x } => {
                let gx = &mut self.grads[x.0];
                for (j, &gi) in g.iter().enumerate() {
                    gx[j] -= gi;
                }
            }
            Op::Scale { x, k } => {
                let gx = &mut self.grads[x.0];
                for (j, &gi) in g.iter().enumerate() {
                    gx[j] += gi * k;
                }
            }
            Op::AddConst { x } => {
                let gx = &mut self.grads[x.0];
                for (j, &gi) in g.iter().enumerate() {
                    gx[j] += gi;
                }
            }
            Op::Softmax { x } => {
                let y = self.nodes[i].value.clone();
                let inner: f64 = g.iter().zip(y.data()).map(|(&gi, &yi)| gi * yi).sum();
                let gx = &mut self.grads[x.0];
                for (j, (&gi, &yi)) in g.iter().zip(y.data()).enumerate() {
                    gx[j] += yi * (gi - inner);
                }
            }
            Op::LogSoftmax { x } => {
                let tx = self.nodes[x.0].value.clone();
                let probs = softmax_data(tx.data());
                let gsum: f64 = g.iter().sum();
                let gx = &mut self.grads[x.0];
                for (j, (&gi, &pj)) in g.iter().zip(&probs).enumerate() {
                    gx[j] += gi - pj * gsum;
                }
            }
            Op::Sum { x } => {
                let gx = &mut self.grads[x.0];
                for gj in gx.iter_mut() {
                    *gj += g[0];
                }
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for p in parts {
                    let n = self.nodes[p.0].value.len();
                    let gp = &mut self.grads[p.0];
                    for j in 0..n {
                        gp[j] += g[offset + j];
                    }
                    offset += n;
                }
            }
            Op::StackRows { rows } => {
                let cols = self.nodes[i].value.cols();
                for (r, row) in rows.iter().enumerate() {
                    let gr = &mut self.grads[row.0];
                    for j in 0..cols {
                        gr[j] += g[r * cols + j];
                    }
                }
            }
            Op::Row { m, index } => {
                let c = g.len();
                let gm = &mut self.grads[m.0];
                for j in 0..c {
                    gm[index * c + j] += g[j];
                }
            }
            Op::Pick { x, index } => {
                self.grads[x.0][index] += g[0];
            }
        }
        Ok(())
    }

    /// Add `sign * g` into the gradient of `v`, summing when `v` is a scalar
    /// broadcast against a larger output.
    fn accumulate_broadcast(&mut self, v: Value, g: &[f64], sign: f64) {
        let n = self.nodes[v.0].value.len();
        let gv = &mut self.grads[v.0];
        if n == g.len() {
            for (j, &gi) in g.iter().enumerate() {
                gv[j] += sign * gi;
            }
        } else {
            debug_assert_eq!(n, 1);
            gv[0] += sign * g.iter().sum::<f64>();
        }
    }

    /// Add a same-shape-as-output contribution into `v`, reducing to scalar
    /// when `v` was broadcast.
    fn accumulate_reduced(&mut self, v: Value, contrib: &[f64]) {
        let n = self.nodes[v.0].value.len();
        let gv = &mut self.grads[v.0];
        if n == contrib.len() {
            for (j, &c) in contrib.iter().enumerate() {
                gv[j] += c;
            }
        } else {
            debug_assert_eq!(n, 1);
            gv[0] += contrib.iter().sum::<f64>();
        }
    }
}

/// Max-subtracted softmax of a slice.
pub fn softmax_data(d: &[f64]) -> Vec<f64> {
    let max = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = d.iter().map(|&v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

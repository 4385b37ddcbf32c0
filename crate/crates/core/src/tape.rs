//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is built fresh for every forward pass. Each operation appends a
//! node holding its value and the information its backward rule needs; nodes
//! are therefore stored in topological order and [`Tape::backward`] is a
//! single reverse sweep. Trainable tensors enter through [`Tape::param`] by
//! reference, so binding a model's weights costs nothing.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract_err, Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'p> {
    Owned(Vec<f64>),
    Borrowed(&'p [f64]),
}

impl Value<'_> {
    fn as_slice(&self) -> &[f64] {
        match self {
            Value::Owned(v) => v,
            Value::Borrowed(v) => v,
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Tanh(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    SelectRows {
        x: Var,
        rows: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node<'p> {
    shape: Vec<usize>,
    value: Value<'p>,
    op: Op,
    needs_grad: bool,
    param: Option<usize>,
}

/// Gradients produced by one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(usize, Var)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` was reachable and
    /// requires a gradient.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// `(param id, gradient)` for every bound parameter that received one.
    pub fn params(&self) -> impl Iterator<Item = (usize, &[f64])> + '_ {
        self.params
            .iter()
            .filter_map(move |&(id, v)| self.wrt(v).map(|g| (id, g)))
    }
}

/// Tanh-approximation constant `sqrt(2/pi)`.
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_A: f64 = 0.044_715;

pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::tanh(GELU_C * (x + GELU_A * x * x * x)))
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let t = libm::tanh(GELU_C * (x + GELU_A * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// `c = a·b` with `a: [m×k]`, `b: [k×n]`.
fn mm(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in row.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `c = a·bᵀ` with `a: [m×k]`, `b: [n×k]`.
fn mm_nt(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// `c = aᵀ·b` with `a: [k×m]`, `b: [k×n]`.
fn mm_tn(a: &[f64], k: usize, m: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let row = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in row.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(buf) => buf.iter_mut().zip(g).for_each(|(b, v)| *b += v),
        None => *slot = Some(g.to_vec()),
    }
}

fn accumulate_owned(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(buf) => buf.iter_mut().zip(&g).for_each(|(b, v)| *b += v),
        None => *slot = Some(g),
    }
}

fn as_matrix(shape: &[usize]) -> Option<(usize, usize)> {
    match *shape {
        [m, n] => Some((m, n)),
        _ => None,
    }
}

#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.as_slice()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Copies a node's value out as a standalone tensor.
    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v), self.value(v).to_vec()).expect("tape node shape")
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value produced on tape"
        );
        self.nodes.push(Node {
            shape,
            value: Value::Owned(data),
            op,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds an existing tensor by reference. Gradients flow to it when
    /// `t.requires_grad` is set.
    pub fn leaf(&mut self, t: &'p Tensor) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: Value::Borrowed(t.data()),
            op: Op::Leaf,
            needs_grad: t.requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a parameter with an identifier reported back by
    /// [`Gradients::params`].
    pub fn param(&mut self, id: usize, t: &'p Tensor) -> Var {
        let v = self.leaf(t);
        self.nodes[v.0].param = Some(id);
        v
    }

    /// An owned value that does not require a gradient.
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(shape.to_vec(), t.into_data(), Op::Leaf, false))
    }

    /// An owned value that requires a gradient.
    pub fn variable(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(shape.to_vec(), t.into_data(), Op::Leaf, true))
    }

    fn matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        as_matrix(self.shape(v)).ok_or_else(|| Error::Shape {
            op,
            left: self.shape(v).to_vec(),
            right: Vec::new(),
        })
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    /// Matrix product of `[m×k]` and `[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix("matmul", a)?;
        let (k2, n) = self.matrix("matmul", b)?;
        if k != k2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let c = mm(self.value(a), m, k, self.value(b), n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], c, Op::MatMul(a, b), needs))
    }

    /// `a·bᵀ` for `a: [m×k]`, `b: [n×k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix("matmul_nt", a)?;
        let (n, k2) = self.matrix("matmul_nt", b)?;
        if k != k2 {
            return Err(self.shape_err("matmul_nt", a, b));
        }
        let c = mm_nt(self.value(a), m, k, self.value(b), n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], c, Op::MatMulNt(a, b), needs))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err(op, a, b));
        }
        Ok(self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.zip_same("add", a, b, |x, y| x + y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(self.shape(a).to_vec(), data, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.zip_same("sub", a, b, |x, y| x - y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(self.shape(a).to_vec(), data, Op::Sub(a, b), needs))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.zip_same("mul", a, b, |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(self.shape(a).to_vec(), data, Op::Mul(a, b), needs))
    }

    /// Adds a vector along the last axis of `x` (bias broadcast).
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = *self.shape(x).last().expect("non-empty shape");
        if self.shape(b) != [n] {
            return Err(self.shape_err("add_row", x, b));
        }
        let bias = self.value(b);
        let data: Vec<f64> = self
            .value(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(bias).map(|(r, c)| r + c))
            .collect();
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(self.shape(x).to_vec(), data, Op::AddRow(x, b), needs))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let data = self.value(x).iter().map(|v| v * c).collect();
        let needs = self.needs(x);
        self.push(self.shape(x).to_vec(), data, Op::Scale(x, c), needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let needs = self.needs(x);
        self.push(vec![1], vec![s], Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let needs = self.needs(x);
        self.push(vec![1], vec![s], Op::Mean(x), needs)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() || shape.contains(&0) {
            return Err(Error::Shape {
                op: "reshape",
                left: self.shape(x).to_vec(),
                right: shape.to_vec(),
            });
        }
        let data = self.value(x).to_vec();
        let needs = self.needs(x);
        Ok(self.push(shape.to_vec(), data, Op::Reshape(x), needs))
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::Index {
                what: "softmax axis",
                index: axis,
                bound: shape.len(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xv = self.value(x);
        let mut out = vec![0.0; xv.len()];
        for o in 0..outer {
            for j in 0..inner {
                let at = |i: usize| (o * len + i) * inner + j;
                let max = (0..len).map(|i| xv[at(i)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for i in 0..len {
                    let e = libm::exp(xv[at(i)] - max);
                    out[at(i)] = e;
                    total += e;
                }
                for i in 0..len {
                    out[at(i)] /= total;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(shape, out, Op::Softmax { x, outer, len, inner }, needs))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let n = *self.shape(x).last().expect("non-empty shape");
        let out: Vec<f64> = self
            .value(x)
            .chunks(n)
            .flat_map(|row| {
                let lse = log_sum_exp(row);
                row.iter().map(move |v| v - lse)
            })
            .collect();
        let needs = self.needs(x);
        self.push(self.shape(x).to_vec(), out, Op::LogSoftmax(x), needs)
    }

    /// Normalizes each row over the last axis, then applies `gamma`/`beta`.
    pub fn layernorm(&mut self, x: Var, gamma: Var, beta: Var, epsilon: f64) -> Result<Var> {
        let n = *self.shape(x).last().expect("non-empty shape");
        if self.shape(gamma) != [n] {
            return Err(self.shape_err("layernorm", x, gamma));
        }
        if self.shape(beta) != [n] {
            return Err(self.shape_err("layernorm", x, beta));
        }
        let (g, b) = (self.value(gamma), self.value(beta));
        let xv = self.value(x);
        let rows = xv.len() / n;
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.chunks(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / libm::sqrt(var + epsilon);
            inv_std.push(inv);
            for (i, v) in row.iter().enumerate() {
                let h = (v - mean) * inv;
                xhat.push(h);
                out.push(h * g[i] + b[i]);
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            needs,
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let data = self.value(x).iter().map(|&v| gelu_scalar(v)).collect();
        let needs = self.needs(x);
        self.push(self.shape(x).to_vec(), data, Op::Gelu(x), needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let data = self.value(x).iter().map(|&v| libm::tanh(v)).collect();
        let needs = self.needs(x);
        self.push(self.shape(x).to_vec(), data, Op::Tanh(x), needs)
    }

    /// Gathers rows of a `[rows×width]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, width) = self.matrix("embedding", table)?;
        if ids.is_empty() {
            return Err(contract_err("embedding lookup with no ids"));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            if id >= rows {
                return Err(Error::Index {
                    what: "embedding id",
                    index: id,
                    bound: rows,
                });
            }
            out.extend_from_slice(&tv[id * width..(id + 1) * width]);
        }
        let needs = self.needs(table);
        Ok(self.push(
            vec![ids.len(), width],
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// Inverted dropout. Identity when `rng` is `None` (inference) or the
    /// rate is zero; survivors are scaled by `1/(1-rate)` otherwise.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: Option<&mut Rng>) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(contract_err("dropout rate must lie in [0, 1)"));
        }
        let rng = match rng {
            Some(r) if rate > 0.0 => r,
            _ => return Ok(x),
        };
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng::unit(rng) < rate { 0.0 } else { keep })
            .collect();
        let data = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let needs = self.needs(x);
        Ok(self.push(self.shape(x).to_vec(), data, Op::Dropout { x, mask }, needs))
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.matrix("select_rows", x)?;
        if rows.is_empty() {
            return Err(contract_err("select_rows with no rows"));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(Error::Index {
                    what: "row",
                    index: r,
                    bound: m,
                });
            }
            out.extend_from_slice(&xv[r * n..(r + 1) * n]);
        }
        let needs = self.needs(x);
        Ok(self.push(
            vec![rows.len(), n],
            out,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            needs,
        ))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.matrix("slice_cols", x)?;
        if len == 0 || start + len > n {
            return Err(Error::Index {
                what: "column slice end",
                index: start + len,
                bound: n,
            });
        }
        let out: Vec<f64> = self
            .value(x)
            .chunks(n)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let needs = self.needs(x);
        Ok(self.push(vec![m, len], out, Op::SliceCols { x, start }, needs))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| contract_err("concat of nothing"))?;
        let (m, _) = self.matrix("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.matrix("concat_cols", p)?;
            if pm != m {
                return Err(self.shape_err("concat_cols", first, p));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(vec![m, total], out, Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Mean over rows of `-log softmax(logits)[target]`. A 1-D `logits` is
    /// treated as a single row.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let classes = *self.shape(logits).last().expect("non-empty shape");
        let rows = self.value(logits).len() / classes;
        if targets.len() != rows {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: self.shape(logits).to_vec(),
                right: vec![targets.len()],
            });
        }
        let mut probs = Vec::with_capacity(rows * classes);
        let mut loss = 0.0;
        for (row, &t) in self.value(logits).chunks(classes).zip(targets) {
            if t >= classes {
                return Err(Error::Index {
                    what: "target class",
                    index: t,
                    bound: classes,
                });
            }
            let lse = log_sum_exp(row);
            loss += lse - row[t];
            probs.extend(row.iter().map(|v| libm::exp(v - lse)));
        }
        let needs = self.needs(logits);
        Ok(self.push(
            vec![1],
            vec![loss / rows as f64],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.as_slice().len() != 1 {
            return Err(contract_err("backward requires a scalar loss"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|id| (id, Var(i))))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, node: &Node<'_>, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.as_slice();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = as_matrix(self.shape(*a)).expect("matrix");
                let n = self.shape(*b)[1];
                if self.needs(*a) {
                    accumulate_owned(&mut grads[a.0], mm_nt(dy, m, n, self.value(*b), k));
                }
                if self.needs(*b) {
                    accumulate_owned(&mut grads[b.0], mm_tn(self.value(*a), m, k, dy, n));
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = as_matrix(self.shape(*a)).expect("matrix");
                let n = self.shape(*b)[0];
                if self.needs(*a) {
                    accumulate_owned(&mut grads[a.0], mm(dy, m, n, self.value(*b), k));
                }
                if self.needs(*b) {
                    accumulate_owned(&mut grads[b.0], mm_tn(dy, m, n, self.value(*a), k));
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], dy);
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], dy);
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], dy);
                }
                if self.needs(*b) {
                    accumulate_owned(&mut grads[b.0], dy.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let g = dy.iter().zip(self.value(*b)).map(|(d, v)| d * v).collect();
                    accumulate_owned(&mut grads[a.0], g);
                }
                if self.needs(*b) {
                    let g = dy.iter().zip(self.value(*a)).map(|(d, v)| d * v).collect();
                    accumulate_owned(&mut grads[b.0], g);
                }
            }
            Op::AddRow(x, b) => {
                if self.needs(*x) {
                    accumulate(&mut grads[x.0], dy);
                }
                if self.needs(*b) {
                    let n = self.shape(*b)[0];
                    let mut g = vec![0.0; n];
                    for row in dy.chunks(n) {
                        g.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                    }
                    accumulate_owned(&mut grads[b.0], g);
                }
            }
            Op::Scale(x, c) => {
                accumulate_owned(&mut grads[x.0], dy.iter().map(|v| v * c).collect());
            }
            Op::Sum(x) => {
                let len = self.value(*x).len();
                accumulate_owned(&mut grads[x.0], vec![dy[0]; len]);
            }
            Op::Mean(x) => {
                let len = self.value(*x).len();
                accumulate_owned(&mut grads[x.0], vec![dy[0] / len as f64; len]);
            }
            Op::Reshape(x) => accumulate(&mut grads[x.0], dy),
            Op::Softmax { x, outer, len, inner } => {
                let mut g = vec![0.0; y.len()];
                for o in 0..*outer {
                    for j in 0..*inner {
                        let at = |i: usize| (o * len + i) * inner + j;
                        let dot: f64 = (0..*len).map(|i| dy[at(i)] * y[at(i)]).sum();
                        for i in 0..*len {
                            g[at(i)] = y[at(i)] * (dy[at(i)] - dot);
                        }
                    }
                }
                accumulate_owned(&mut grads[x.0], g);
            }
            Op::LogSoftmax(x) => {
                let n = *node.shape.last().expect("shape");
                let mut g = Vec::with_capacity(y.len());
                for (yrow, drow) in y.chunks(n).zip(dy.chunks(n)) {
                    let total: f64 = drow.iter().sum();
                    g.extend(yrow.iter().zip(drow).map(|(l, d)| d - libm::exp(*l) * total));
                }
                accumulate_owned(&mut grads[x.0], g);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = *node.shape.last().expect("shape");
                let gv = self.value(*gamma);
                if self.needs(*gamma) {
                    let mut g = vec![0.0; n];
                    for (drow, hrow) in dy.chunks(n).zip(xhat.chunks(n)) {
                        for i in 0..n {
                            g[i] += drow[i] * hrow[i];
                        }
                    }
                    accumulate_owned(&mut grads[gamma.0], g);
                }
                if self.needs(*beta) {
                    let mut g = vec![0.0; n];
                    for drow in dy.chunks(n) {
                        g.iter_mut().zip(drow).for_each(|(s, v)| *s += v);
                    }
                    accumulate_owned(&mut grads[beta.0], g);
                }
                if self.needs(*x) {
                    let mut g = Vec::with_capacity(y.len());
                    let nf = n as f64;
                    for ((drow, hrow), inv) in dy.chunks(n).zip(xhat.chunks(n)).zip(inv_std) {
                        let dh: Vec<f64> = drow.iter().zip(gv).map(|(d, gg)| d * gg).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(hrow).map(|(a, b)| a * b).sum();
                        g.extend(
                            dh.iter()
                                .zip(hrow)
                                .map(|(d, h)| inv / nf * (nf * d - sum_dh - h * sum_dh_h)),
                        );
                    }
                    accumulate_owned(&mut grads[x.0], g);
                }
            }
            Op::Gelu(x) => {
                let g = self
                    .value(*x)
                    .iter()
                    .zip(dy)
                    .map(|(&v, d)| d * gelu_grad_scalar(v))
                    .collect();
                accumulate_owned(&mut grads[x.0], g);
            }
            Op::Tanh(x) => {
                let g = y.iter().zip(dy).map(|(t, d)| d * (1.0 - t * t)).collect();
                accumulate_owned(&mut grads[x.0], g);
            }
            Op::Embedding { table, ids } => {
                let width = self.shape(*table)[1];
                let slot = grads[table.0].get_or_insert_with(|| vec![0.0; self.value(*table).len()]);
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut slot[id * width..(id + 1) * width];
                    dst.iter_mut()
                        .zip(&dy[r * width..(r + 1) * width])
                        .for_each(|(s, v)| *s += v);
                }
            }
            Op::Dropout { x, mask } => {
                let g = dy.iter().zip(mask).map(|(d, m)| d * m).collect();
                accumulate_owned(&mut grads[x.0], g);
            }
            Op::SelectRows { x, rows } => {
                let n = node.shape[1];
                let slot = grads[x.0].get_or_insert_with(|| vec![0.0; self.value(*x).len()]);
                for (r, &src) in rows.iter().enumerate() {
                    slot[src * n..(src + 1) * n]
                        .iter_mut()
                        .zip(&dy[r * n..(r + 1) * n])
                        .for_each(|(s, v)| *s += v);
                }
            }
            Op::SliceCols { x, start } => {
                let (m, n) = as_matrix(self.shape(*x)).expect("matrix");
                let len = node.shape[1];
                let slot = grads[x.0].get_or_insert_with(|| vec![0.0; m * n]);
                for i in 0..m {
                    slot[i * n + start..i * n + start + len]
                        .iter_mut()
                        .zip(&dy[i * len..(i + 1) * len])
                        .for_each(|(s, v)| *s += v);
                }
            }
            Op::ConcatCols(parts) => {
                let (m, total) = (node.shape[0], node.shape[1]);
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.needs(p) {
                        let mut g = Vec::with_capacity(m * w);
                        for i in 0..m {
                            g.extend_from_slice(&dy[i * total + offset..i * total + offset + w]);
                        }
                        accumulate_owned(&mut grads[p.0], g);
                    }
                    offset += w;
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let classes = probs.len() / targets.len();
                let scale = dy[0] / targets.len() as f64;
                let mut g: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    g[r * classes + t] -= scale;
                }
                accumulate_owned(&mut grads[logits.0], g);
            }
        }
    }
}

/// Numerically stable `log Σ exp(row)`.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + libm::log(row.iter().map(|v| libm::exp(v - max)).sum::<f64>())
}

/// Softmax of a plain slice, outside any tape.
pub fn softmax_slice(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| libm::exp(v - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut t = Tape::new();
        let i2 = t.constant(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = t.constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let c = t.matmul(i2, m).unwrap();
        assert_eq!(t.value(c), &[1.0, 2.0, 3.0, 4.0]);
        let a = t.constant(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = t.constant(&[2, 1], vec![3.0, 4.0]).unwrap();
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c), &[11.0]);
        assert_eq!(t.shape(c), &[1, 1]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(&[2, 3], vec![0.0; 6]).unwrap();
        let b = t.constant(&[2, 3], vec![0.0; 6]).unwrap();
        match t.matmul(a, b) {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("expected shape error, got {:?}", other.map(|v| v.index())),
        }
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let x = t.constant(&[3], vec![0.0, 0.0, 0.0]).unwrap();
        let y = t.softmax(x, 0).unwrap();
        assert!(close(t.value(y), &[1.0 / 3.0; 3], 1e-15));

        let x = t.constant(&[2], vec![1000.0, 0.0]).unwrap();
        let y = t.softmax(x, 0).unwrap();
        assert_eq!(t.value(y), &[1.0, 0.0]);

        let x = t.constant(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = t.softmax(x, 0).unwrap();
        assert!(close(t.value(y), &[0.09003, 0.24473, 0.66524], 5e-6));
    }

    #[test]
    fn softmax_rejects_bad_axis() {
        let mut t = Tape::new();
        let x = t.constant(&[3], vec![0.0; 3]).unwrap();
        assert!(matches!(t.softmax(x, 1), Err(Error::Index { .. })));
    }

    #[test]
    fn softmax_along_first_axis_normalizes_columns() {
        let mut t = Tape::new();
        let x = t.constant(&[2, 3], vec![1.0, 5.0, -2.0, 0.5, 0.0, 3.0]).unwrap();
        let y = t.softmax(x, 0).unwrap();
        let v = t.value(y);
        for j in 0..3 {
            assert!((v[j] + v[3 + j] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layernorm_examples() {
        let mut t = Tape::new();
        let g = t.constant(&[3], vec![1.0; 3]).unwrap();
        let b = t.constant(&[3], vec![0.0; 3]).unwrap();
        let x = t.constant(&[1, 3], vec![5.0, 5.0, 5.0]).unwrap();
        let y = t.layernorm(x, g, b, 1e-5).unwrap();
        assert_eq!(t.value(y), &[0.0, 0.0, 0.0]);

        let x = t.constant(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = t.layernorm(x, g, b, 1e-5).unwrap();
        assert!(close(t.value(y), &[-1.2247, 0.0, 1.2247], 1e-4));
    }

    #[test]
    fn gelu_and_cross_entropy_examples() {
        let mut t = Tape::new();
        let x = t.constant(&[1], vec![0.0]).unwrap();
        let y = t.gelu(x);
        assert_eq!(t.value(y), &[0.0]);

        let z = t.variable(&[3], vec![0.0, 0.0, 0.0]).unwrap();
        let l = t.cross_entropy(z, &[1]).unwrap();
        assert!((t.value(l)[0] - libm::log(3.0)).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let mut t = Tape::new();
        let z = t.variable(&[3], vec![0.3, -1.2, 2.0]).unwrap();
        let l = t.cross_entropy(z, &[2]).unwrap();
        let g = t.backward(l).unwrap();
        let mut expect = softmax_slice(&[0.3, -1.2, 2.0]);
        expect[2] -= 1.0;
        assert!(close(g.wrt(z).unwrap(), &expect, 1e-15));
    }

    #[test]
    fn index_errors() {
        let mut t = Tape::new();
        let z = t.variable(&[3], vec![0.0; 3]).unwrap();
        assert!(matches!(t.cross_entropy(z, &[3]), Err(Error::Index { .. })));
        let table = t.variable(&[4, 2], vec![0.0; 8]).unwrap();
        assert!(matches!(t.embedding(table, &[4]), Err(Error::Index { .. })));
    }

    #[test]
    fn dropout_identity_at_inference_and_inverted_scaling() {
        let mut t = Tape::new();
        let x = t.variable(&[1000], vec![1.0; 1000]).unwrap();
        let same = t.dropout(x, 0.3, None).unwrap();
        assert_eq!(same, x);
        let mut rng = rng::seeded(1);
        let d = t.dropout(x, 0.5, Some(&mut rng)).unwrap();
        assert!(t.value(d).iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = t.value(d).iter().filter(|&&v| v > 0.0).count();
        assert!((400..600).contains(&kept));
        assert!(t.dropout(x, 1.0, None).is_err());
    }

    #[test]
    fn dropout_masks_reproducible_under_seed() {
        let run = || {
            let mut t = Tape::new();
            let x = t.variable(&[64], (0..64).map(f64::from).collect()).unwrap();
            let mut rng = rng::seeded(42);
            let d = t.dropout(x, 0.25, Some(&mut rng)).unwrap();
            let s = t.sum(d);
            t.value(s)[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn backward_of_sum_and_square() {
        let mut t = Tape::new();
        let x = t.variable(&[2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[1.0; 4]);

        let mut t = Tape::new();
        let x = t.variable(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.variable(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn param_gradients_are_reported_by_id() {
        let w = Tensor::new(&[2], vec![1.0, 2.0]).unwrap().with_grad();
        let frozen = Tensor::new(&[2], vec![3.0, 4.0]).unwrap();
        let mut t = Tape::new();
        let a = t.param(7, &w);
        let b = t.param(9, &frozen);
        let p = t.mul(a, b).unwrap();
        let s = t.sum(p);
        let g = t.backward(s).unwrap();
        let got: Vec<_> = g.params().collect();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].0, 7);
        assert_eq!(got[0].1, &[3.0, 4.0]);
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(v in proptest::collection::vec(-50.0f64..50.0, 12)) {
            let mut t = Tape::new();
            let x = t.constant(&[4, 3], v).unwrap();
            let y = t.softmax(x, 1).unwrap();
            for row in t.value(y).chunks(3) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&p| p >= 0.0));
            }
        }

        #[test]
        fn layernorm_rows_are_standardized(v in proptest::collection::vec(-10.0f64..10.0, 16)) {
            let mut t = Tape::new();
            let g = t.constant(&[8], vec![1.0; 8]).unwrap();
            let b = t.constant(&[8], vec![0.0; 8]).unwrap();
            let x = t.constant(&[2, 8], v.clone()).unwrap();
            let y = t.layernorm(x, g, b, 1e-12).unwrap();
            for (row, src) in t.value(y).chunks(8).zip(v.chunks(8)) {
                let m0 = src.iter().sum::<f64>() / 8.0;
                let v0 = src.iter().map(|s| (s - m0) * (s - m0)).sum::<f64>() / 8.0;
                prop_assume!(v0 > 1e-3);
                let mean = row.iter().sum::<f64>() / 8.0;
                let var = row.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / 8.0;
                prop_assert!(mean.abs() < 1e-10);
                prop_assert!((var - 1.0).abs() < 1e-6);
            }
        }
    }
}

use super::{gemm, ParamId, ParamStore, Tensor};
use crate::error::{dim_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Element-by-element operation kinds accepted by [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    LeakyRelu(f64),
    Elu(f64),
    Exp,
}

/// Scalar loss kinds accepted by [`Tape::loss`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Loss {
    Mse,
    CrossEntropy,
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Sigmoid,
    Tanh,
    LeakyRelu(f64),
    Elu(f64),
    Exp,
    Scale(f64),
    Offset(f64),
    Clamp(f64, f64),
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Binary {
        kind: Binary,
        a: Var,
        b: Var,
    },
    Unary {
        kind: Unary,
        x: Var,
    },
    AddBias {
        x: Var,
        bias: Var,
    },
    Softmax {
        outer: usize,
        len: usize,
        inner: usize,
    },
    Concat {
        parts: Vec<Var>,
        outer: usize,
        inner: usize,
        lens: Vec<usize>,
    },
    Slice {
        x: Var,
        outer: usize,
        inner: usize,
        len_in: usize,
        start: usize,
        len: usize,
    },
    Reshape {
        x: Var,
    },
    GatherRows {
        x: Var,
        cols: usize,
        index: Vec<usize>,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    SumLast {
        x: Var,
        cols: usize,
    },
    Mse {
        pred: Var,
        target: Var,
    },
    CrossEntropy {
        probs: Var,
        classes: usize,
        targets: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    // Softmax keeps its input handle here so the op enum stays lean.
    input: Option<Var>,
}

/// Records executed operations in order. Every operand of node `i` was
/// produced at an index below `i`, so a single reverse sweep suffices.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn add_into(dst: &mut Option<Vec<f64>>, g: &[f64]) {
    match dst {
        Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *dst = Some(g.to_vec()),
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            input: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shapes are consistent")
    }

    /// The single value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf)
    }

    pub fn constant_from(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        if numel(shape) != data.len() {
            return dim_err(format!("shape {:?} with {} values", shape, data.len()));
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf))
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.push(shape.to_vec(), vec![0.0; numel(shape)], Op::Leaf)
    }

    /// Registers a stored parameter; repeated calls return the same handle.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if self.param_vars.len() <= id.index() {
            self.param_vars.resize(id.index() + 1, None);
        }
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        let t = store.get(id);
        let v = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Param(id));
        self.param_vars[id.index()] = Some(v);
        v
    }

    fn matrix_dims(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => dim_err(format!("{what} must be a matrix, got shape {s:?}")),
        }
    }

    /// `a · b` for `a: m×k`, `b: k×n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul lhs")?;
        let (k2, n) = self.matrix_dims(b, "matmul rhs")?;
        if k != k2 {
            return dim_err(format!("matmul inner extents {k} and {k2}"));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, false);
        Ok(self.push(
            vec![m, n],
            out,
            Op::MatMul {
                a,
                b,
                m,
                k,
                n,
                trans_b: false,
            },
        ))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k` (weights stored out×in).
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims(a, "matmul lhs")?;
        let (n, k2) = self.matrix_dims(b, "matmul rhs")?;
        if k != k2 {
            return dim_err(format!("matmul inner extents {k} and {k2}"));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), true, &mut out, false);
        Ok(self.push(
            vec![m, n],
            out,
            Op::MatMul {
                a,
                b,
                m,
                k,
                n,
                trans_b: true,
            },
        ))
    }

    /// Block-diagonal product: `a` stacks `batch` blocks of `m×k`, `b`
    /// stacks `batch` blocks of `k×n`; the result stacks the products.
    pub fn bmm(&mut self, a: Var, b: Var, batch: usize) -> Result<Var> {
        let (am, k) = self.matrix_dims(a, "bmm lhs")?;
        let (bk, n) = self.matrix_dims(b, "bmm rhs")?;
        if batch == 0 || am % batch != 0 || bk % batch != 0 || bk / batch != k {
            return dim_err(format!(
                "bmm with batch {batch}: lhs {am}x{k}, rhs {bk}x{n}"
            ));
        }
        let m = am / batch;
        let mut out = vec![0.0; am * n];
        {
            let av = self.value(a);
            let bv = self.value(b);
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &av[i * m * k..(i + 1) * m * k],
                    false,
                    &bv[i * k * n..(i + 1) * k * n],
                    false,
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        Ok(self.push(
            vec![am, n],
            out,
            Op::BatchMatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
            },
        ))
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (na, nb) = (numel(&sa), numel(&sb));
        let shape = if sa == sb {
            sa
        } else if na == 1 {
            sb
        } else if nb == 1 {
            sa
        } else {
            return dim_err(format!("elementwise operands {sa:?} and {sb:?}"));
        };
        let n = numel(&shape);
        let av = self.value(a);
        let bv = self.value(b);
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        };
        let out: Vec<f64> = (0..n)
            .map(|i| f(av[if na == 1 { 0 } else { i }], bv[if nb == 1 { 0 } else { i }]))
            .collect();
        Ok(self.push(shape, out, Op::Binary { kind, a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Var {
        let f = |v: f64| match kind {
            Unary::Sigmoid => {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            }
            Unary::Tanh => v.tanh(),
            Unary::LeakyRelu(s) => {
                if v > 0.0 {
                    v
                } else {
                    s * v
                }
            }
            Unary::Elu(alpha) => {
                if v > 0.0 {
                    v
                } else {
                    alpha * v.exp_m1()
                }
            }
            Unary::Exp => v.exp(),
            Unary::Scale(c) => c * v,
            Unary::Offset(c) => v + c,
            Unary::Clamp(lo, hi) => v.clamp(lo, hi),
        };
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Unary { kind, x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Unary::Tanh, x)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(Unary::LeakyRelu(slope), x)
    }

    pub fn elu(&mut self, x: Var, alpha: f64) -> Var {
        self.unary(Unary::Elu(alpha), x)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Unary::Exp, x)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.unary(Unary::Scale(factor), x)
    }

    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        self.unary(Unary::Offset(c), x)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(Unary::Clamp(lo, hi), x)
    }

    /// Dispatches an [`Elementwise`] kind over one (unary) or two (binary)
    /// operands.
    pub fn elementwise(&mut self, kind: Elementwise, operands: &[Var]) -> Result<Var> {
        let arity = match kind {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
            _ => 1,
        };
        if operands.len() != arity {
            return Err(Error::Contract(format!(
                "{kind:?} takes {arity} operand(s), got {}",
                operands.len()
            )));
        }
        let x = operands[0];
        Ok(match kind {
            Elementwise::Add => self.add(x, operands[1])?,
            Elementwise::Sub => self.sub(x, operands[1])?,
            Elementwise::Mul => self.mul(x, operands[1])?,
            Elementwise::Sigmoid => self.sigmoid(x),
            Elementwise::Tanh => self.tanh(x),
            Elementwise::LeakyRelu(s) => self.leaky_relu(x, s),
            Elementwise::Elu(a) => self.elu(x, a),
            Elementwise::Exp => self.exp(x),
        })
    }

    /// Adds a bias vector to every row: `x: (..)×n`, `bias: n`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&1);
        if self.shape(bias) != [n] {
            return dim_err(format!(
                "bias {:?} for rows of width {n}",
                self.shape(bias)
            ));
        }
        let b = self.value(bias);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(n) {
            row.iter_mut().zip(b).for_each(|(v, bb)| *v += bb);
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::AddBias { x, bias }))
    }

    /// Softmax along `axis`, stabilized by subtracting the running max.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len().max(1) || (shape.is_empty() && axis != 0) {
            return dim_err(format!("softmax axis {axis} for shape {shape:?}"));
        }
        let (outer, len, inner) = if shape.is_empty() {
            (1, 1, 1)
        } else {
            axis_split(&shape, axis)
        };
        if len == 0 {
            return Err(Error::EmptyInput("softmax over an empty axis".into()));
        }
        let xv = self.value(x);
        let mut out = vec![0.0; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| xv[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (xv[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] /= total;
                }
            }
        }
        let v = self.push(shape, out, Op::Softmax { outer, len, inner });
        self.nodes[v.0].input = Some(x);
        Ok(v)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = match parts.first() {
            Some(p) => self.shape(*p).to_vec(),
            None => return Err(Error::EmptyInput("concat of no tensors".into())),
        };
        if axis >= first.len() {
            return dim_err(format!("concat axis {axis} for shape {first:?}"));
        }
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.shape(*p);
            let ok = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                return dim_err(format!("concat of {first:?} with {s:?} on axis {axis}"));
            }
            lens.push(s[axis]);
        }
        let (outer, _, inner) = axis_split(&first, axis);
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, len) in parts.iter().zip(&lens) {
                let chunk = len * inner;
                out.extend_from_slice(&self.value(*p)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                parts: parts.to_vec(),
                outer,
                inner,
                lens,
            },
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return dim_err(format!(
                "slice {start}..{} on axis {axis} of {shape:?}",
                start + len
            ));
        }
        let (outer, len_in, inner) = axis_split(&shape, axis);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * len_in * inner + start * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        Ok(self.push(
            new_shape,
            out,
            Op::Slice {
                x,
                outer,
                inner,
                len_in,
                start,
                len,
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != numel(self.shape(x)) {
            return dim_err(format!("reshape {:?} to {shape:?}", self.shape(x)));
        }
        let value = self.value(x).to_vec();
        Ok(self.push(shape.to_vec(), value, Op::Reshape { x }))
    }

    /// Selects rows of a matrix by index (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(x, "gather_rows input")?;
        if let Some(bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::Index(format!("row {bad} of {rows}")));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(index.len() * cols);
        for &i in index {
            out.extend_from_slice(&xv[i * cols..(i + 1) * cols]);
        }
        Ok(self.push(
            vec![index.len(), cols],
            out,
            Op::GatherRows {
                x,
                cols,
                index: index.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(vec![], vec![s], Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::EmptyInput("mean of an empty tensor".into()));
        }
        let s: f64 = self.value(x).iter().sum();
        Ok(self.push(vec![], vec![s / n as f64], Op::Mean { x }))
    }

    /// Sums over the last axis.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let Some((&cols, rest)) = shape.split_last() else {
            return dim_err("sum_last of a scalar");
        };
        let out = if cols == 0 {
            vec![0.0; numel(rest)]
        } else {
            self.value(x).chunks(cols).map(|r| r.iter().sum()).collect()
        };
        Ok(self.push(rest.to_vec(), out, Op::SumLast { x, cols }))
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return dim_err(format!(
                "mse between {:?} and {:?}",
                self.shape(pred),
                self.shape(target)
            ));
        }
        let n = self.value(pred).len();
        if n == 0 {
            return Err(Error::EmptyInput("mse of empty tensors".into()));
        }
        let s: f64 = self
            .value(pred)
            .iter()
            .zip(self.value(target))
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        Ok(self.push(vec![], vec![s / n as f64], Op::Mse { pred, target }))
    }

    /// `−ln p[target]`, averaged over rows when `probs` is a matrix.
    pub fn cross_entropy(&mut self, probs: Var, targets: &[usize]) -> Result<Var> {
        let (rows, classes) = match self.shape(probs) {
            [k] => (1, *k),
            [r, k] => (*r, *k),
            s => return dim_err(format!("cross entropy over shape {s:?}")),
        };
        if targets.len() != rows {
            return dim_err(format!("{} targets for {rows} rows", targets.len()));
        }
        if let Some(bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(Error::Index(format!("class {bad} of {classes}")));
        }
        let pv = self.value(probs);
        let loss = targets
            .iter()
            .enumerate()
            .map(|(r, &t)| -pv[r * classes + t].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / rows as f64;
        Ok(self.push(
            vec![],
            vec![loss],
            Op::CrossEntropy {
                probs,
                classes,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Dispatches a [`Loss`]. For cross entropy `target` holds one class
    /// index per row of `prediction`, stored as whole numbers.
    pub fn loss(&mut self, kind: Loss, prediction: Var, target: Var) -> Result<Var> {
        match kind {
            Loss::Mse => self.mse(prediction, target),
            Loss::CrossEntropy => {
                let classes = self
                    .value(target)
                    .iter()
                    .map(|&c| {
                        if c >= 0.0 && c.fract() == 0.0 {
                            Ok(c as usize)
                        } else {
                            Err(Error::Index(format!("class index {c}")))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                self.cross_entropy(prediction, &classes)
            }
        }
    }

    /// Reverse sweep from a scalar `loss`, returning per-node gradients.
    fn gradients(&self, loss: Var) -> Result<Vec<Option<Vec<f64>>>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward from a non-scalar of shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                &Op::MatMul {
                    a,
                    b,
                    m,
                    k,
                    n,
                    trans_b,
                } => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let mut ga = vec![0.0; m * k];
                    let mut gb = vec![0.0; k * n];
                    if trans_b {
                        // c = a·bᵀ with b stored n×k
                        gemm(m, n, k, &g, false, bv, false, &mut ga, false);
                        gemm(n, m, k, &g, true, av, false, &mut gb, false);
                    } else {
                        gemm(m, n, k, &g, false, bv, true, &mut ga, false);
                        gemm(k, m, n, av, true, &g, false, &mut gb, false);
                    }
                    add_into(&mut grads[a.0], &ga);
                    add_into(&mut grads[b.0], &gb);
                }
                &Op::BatchMatMul {
                    a,
                    b,
                    batch,
                    m,
                    k,
                    n,
                } => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let mut ga = vec![0.0; batch * m * k];
                    let mut gb = vec![0.0; batch * k * n];
                    for blk in 0..batch {
                        let gs = &g[blk * m * n..(blk + 1) * m * n];
                        gemm(
                            m,
                            n,
                            k,
                            gs,
                            false,
                            &bv[blk * k * n..(blk + 1) * k * n],
                            true,
                            &mut ga[blk * m * k..(blk + 1) * m * k],
                            false,
                        );
                        gemm(
                            k,
                            m,
                            n,
                            &av[blk * m * k..(blk + 1) * m * k],
                            true,
                            gs,
                            false,
                            &mut gb[blk * k * n..(blk + 1) * k * n],
                            false,
                        );
                    }
                    add_into(&mut grads[a.0], &ga);
                    add_into(&mut grads[b.0], &gb);
                }
                &Op::Binary { kind, a, b } => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let (na, nb) = (av.len(), bv.len());
                    let n = g.len();
                    let pick = |v: &[f64], len: usize, j: usize| v[if len == 1 { 0 } else { j }];
                    let (ga, gb): (Vec<f64>, Vec<f64>) = match kind {
                        Binary::Add => (g.clone(), g.clone()),
                        Binary::Sub => (g.clone(), g.iter().map(|x| -x).collect()),
                        Binary::Mul => (
                            (0..n).map(|j| g[j] * pick(bv, nb, j)).collect(),
                            (0..n).map(|j| g[j] * pick(av, na, j)).collect(),
                        ),
                    };
                    let reduce = |full: Vec<f64>, len: usize| {
                        if len == 1 && n != 1 {
                            vec![full.iter().sum()]
                        } else {
                            full
                        }
                    };
                    add_into(&mut grads[a.0], &reduce(ga, na));
                    add_into(&mut grads[b.0], &reduce(gb, nb));
                }
                &Op::Unary { kind, x } => {
                    let xv = &self.nodes[x.0].value;
                    let yv = &node.value;
                    let gx: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(j, gj)| {
                            let d = match kind {
                                Unary::Sigmoid => yv[j] * (1.0 - yv[j]),
                                Unary::Tanh => 1.0 - yv[j] * yv[j],
                                Unary::LeakyRelu(s) => {
                                    if xv[j] > 0.0 {
                                        1.0
                                    } else {
                                        s
                                    }
                                }
                                Unary::Elu(alpha) => {
                                    if xv[j] > 0.0 {
                                        1.0
                                    } else {
                                        yv[j] + alpha
                                    }
                                }
                                Unary::Exp => yv[j],
                                Unary::Scale(c) => c,
                                Unary::Offset(_) => 1.0,
                                Unary::Clamp(lo, hi) => {
                                    if xv[j] >= lo && xv[j] <= hi {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                }
                            };
                            gj * d
                        })
                        .collect();
                    add_into(&mut grads[x.0], &gx);
                }
                &Op::AddBias { x, bias } => {
                    let n = self.nodes[bias.0].value.len();
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    add_into(&mut grads[x.0], &g);
                    add_into(&mut grads[bias.0], &gb);
                }
                &Op::Softmax { outer, len, inner } => {
                    let x = node.input.expect("softmax records its input");
                    let y = &node.value;
                    let mut gx = vec![0.0; y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * len * inner + j * inner + i;
                            let dot: f64 = (0..len).map(|j| y[at(j)] * g[at(j)]).sum();
                            for j in 0..len {
                                gx[at(j)] = y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                    add_into(&mut grads[x.0], &gx);
                }
                Op::Concat {
                    parts,
                    outer,
                    inner,
                    lens,
                } => {
                    let total: usize = lens.iter().sum();
                    let mut offset = 0;
                    for (p, len) in parts.iter().zip(lens) {
                        let chunk = len * inner;
                        let mut gp = Vec::with_capacity(outer * chunk);
                        for o in 0..*outer {
                            let base = o * total * inner + offset * inner;
                            gp.extend_from_slice(&g[base..base + chunk]);
                        }
                        add_into(&mut grads[p.0], &gp);
                        offset += len;
                    }
                }
                &Op::Slice {
                    x,
                    outer,
                    inner,
                    len_in,
                    start,
                    len,
                } => {
                    let mut gx = vec![0.0; outer * len_in * inner];
                    for o in 0..outer {
                        let base = o * len_in * inner + start * inner;
                        gx[base..base + len * inner]
                            .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                    }
                    add_into(&mut grads[x.0], &gx);
                }
                &Op::Reshape { x } => add_into(&mut grads[x.0], &g),
                Op::GatherRows { x, cols, index } => {
                    let mut gx = vec![0.0; self.nodes[x.0].value.len()];
                    for (r, &src) in index.iter().enumerate() {
                        for c in 0..*cols {
                            gx[src * cols + c] += g[r * cols + c];
                        }
                    }
                    add_into(&mut grads[x.0], &gx);
                }
                &Op::Sum { x } => {
                    let n = self.nodes[x.0].value.len();
                    add_into(&mut grads[x.0], &vec![g[0]; n]);
                }
                &Op::Mean { x } => {
                    let n = self.nodes[x.0].value.len();
                    add_into(&mut grads[x.0], &vec![g[0] / n as f64; n]);
                }
                &Op::SumLast { x, cols } => {
                    let gx: Vec<f64> = g
                        .iter()
                        .flat_map(|&gv| std::iter::repeat_n(gv, cols))
                        .collect();
                    add_into(&mut grads[x.0], &gx);
                }
                &Op::Mse { pred, target } => {
                    let pv = &self.nodes[pred.0].value;
                    let tv = &self.nodes[target.0].value;
                    let scale = 2.0 * g[0] / pv.len() as f64;
                    let gp: Vec<f64> = pv.iter().zip(tv).map(|(p, t)| scale * (p - t)).collect();
                    let gt: Vec<f64> = gp.iter().map(|v| -v).collect();
                    add_into(&mut grads[pred.0], &gp);
                    add_into(&mut grads[target.0], &gt);
                }
                Op::CrossEntropy {
                    probs,
                    classes,
                    targets,
                } => {
                    let pv = &self.nodes[probs.0].value;
                    let rows = targets.len() as f64;
                    let mut gp = vec![0.0; pv.len()];
                    for (r, &t) in targets.iter().enumerate() {
                        let at = r * classes + t;
                        gp[at] = -g[0] / (pv[at].max(f64::MIN_POSITIVE) * rows);
                    }
                    add_into(&mut grads[probs.0], &gp);
                }
            }
        }
        Ok(grads)
    }

    /// Gradients of `loss` with respect to arbitrary recorded values.
    pub fn grad_wrt(&self, loss: Var, vars: &[Var]) -> Result<Vec<Vec<f64>>> {
        let grads = self.gradients(loss)?;
        Ok(vars
            .iter()
            .map(|v| {
                grads
                    .get(v.0)
                    .cloned()
                    .flatten()
                    .unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.len()])
            })
            .collect())
    }

    /// Accumulates `d loss / d param` into every registered trainable
    /// parameter. Parameters the loss does not depend on receive zeros.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let mut grads = self.gradients(loss)?;
        for (idx, slot) in self.param_vars.iter().enumerate() {
            let Some(v) = slot else { continue };
            let Op::Param(id) = self.nodes[v.0].op else {
                unreachable!("param slot points at a param node")
            };
            debug_assert_eq!(id.index(), idx);
            let t = store.get_mut(id);
            if !t.requires_grad() {
                continue;
            }
            match grads.get_mut(v.0).and_then(Option::take) {
                Some(g) => t.accumulate_grad(&g)?,
                None => t.ensure_grad(),
            }
        }
        Ok(())
    }
}

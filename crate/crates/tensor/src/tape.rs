use crate::tensor::{gemm, gemm_strided};
use crate::{Result, Tensor, TensorError};

/// Variance floor added inside `layer_norm`.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'a> {
    Owned(Tensor),
    Borrowed(&'a Tensor),
}

impl Value<'_> {
    fn get(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    ScaleBy(usize, usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Relu(usize),
    Sum(usize),
    Mean(usize),
    MeanRows(usize),
    ConcatCols(Vec<usize>),
    GatherRows(usize, Vec<usize>),
    SliceCols(usize, usize),
    Reshape(usize),
    MaskedSoftmax(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Pick(usize, usize),
    SliceRows(usize, usize),
    StackRows(Vec<usize>),
    Attention {
        q: usize,
        k: usize,
        v: usize,
        bias: Option<usize>,
        heads: usize,
        scale: f64,
        /// `heads x m x n` attention weights.
        probs: Vec<f64>,
    },
}

struct Node<'a> {
    value: Value<'a>,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to the leaves of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

/// Records primitive operations in evaluation order.
///
/// Leaves created with [`Tape::param`] borrow their tensors, so a policy's
/// parameters can be shared by many tapes without copying. A tape is
/// single-threaded; independent tapes can run on different threads.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    consumed: bool,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::with_capacity(256),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A borrowed leaf that receives a gradient.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.push(Value::Borrowed(t), Op::Leaf, true)
    }

    /// An owned leaf that receives a gradient.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Value::Owned(t), Op::Leaf, true)
    }

    /// An owned leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Value::Owned(t), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, t: &'a Tensor) -> Var {
        self.push(Value::Borrowed(t), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.nodes[v.0].value.get()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Value<'a>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<&Tensor> {
        self.nodes
            .get(v.0)
            .map(|n| n.value.get())
            .ok_or(TensorError::UnknownVar(v.0))
    }

    fn grad_any(&self, vars: &[usize]) -> bool {
        vars.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let xt = self.check(x)?;
        let data = xt.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(xt.shape().to_vec(), data)?;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(Value::Owned(out), op, rg))
    }

    fn same_shape_binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let at = self.check(a)?;
        let bt = self.check(b)?;
        if at.len() != bt.len() || at.rows() != bt.rows() {
            return Err(TensorError::shape(
                name,
                format!("{:?} vs {:?}", at.shape(), bt.shape()),
            ));
        }
        let data = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(at.shape().to_vec(), data)?;
        let rg = self.grad_any(&[a.0, b.0]);
        Ok(self.push(Value::Owned(out), op, rg))
    }

    /// `a (m x k) * b (k x n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let at = self.check(a)?;
        let bt = self.check(b)?;
        let (m, k, n) = (at.rows(), at.cols(), bt.cols());
        if bt.rows() != k {
            return Err(TensorError::shape(
                "matmul",
                format!("{:?} x {:?}", at.shape(), bt.shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, at.data(), k as isize, 1, bt.data(), n as isize, 1, &mut out, 0.0);
        let rg = self.grad_any(&[a.0, b.0]);
        Ok(self.push(
            Value::Owned(Tensor::matrix(m, n, out)?),
            Op::MatMul(a.0, b.0),
            rg,
        ))
    }

    /// `a (m x k) * b^T` where `b` is `n x k`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let at = self.check(a)?;
        let bt = self.check(b)?;
        let (m, k, n) = (at.rows(), at.cols(), bt.rows());
        if bt.cols() != k {
            return Err(TensorError::shape(
                "matmul_t",
                format!("{:?} x {:?}^T", at.shape(), bt.shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, 1.0, at.data(), k as isize, 1, bt.data(), 1, k as isize, &mut out, 0.0);
        let rg = self.grad_any(&[a.0, b.0]);
        Ok(self.push(
            Value::Owned(Tensor::matrix(m, n, out)?),
            Op::MatMulT(a.0, b.0),
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape_binary("add", a, b, Op::Add(a.0, b.0), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape_binary("sub", a, b, Op::Sub(a.0, b.0), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape_binary("mul", a, b, Op::Mul(a.0, b.0), |x, y| x * y)
    }

    /// Adds a length-`c` row to every row of an `r x c` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let xt = self.check(x)?;
        let rt = self.check(row)?;
        let c = xt.cols();
        if rt.len() != c {
            return Err(TensorError::shape(
                "add_row",
                format!("{:?} + row {:?}", xt.shape(), rt.shape()),
            ));
        }
        let mut data = xt.data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (v, b) in chunk.iter_mut().zip(rt.data()) {
                *v += b;
            }
        }
        let out = Tensor::new(xt.shape().to_vec(), data)?;
        let rg = self.grad_any(&[x.0, row.0]);
        Ok(self.push(Value::Owned(out), Op::AddRow(x.0, row.0), rg))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.unary(x, Op::Scale(x.0, factor), |v| v * factor)
    }

    /// Multiplies by a scalar variable.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let st = self.check(s)?;
        if st.len() != 1 {
            return Err(TensorError::shape(
                "scale_by",
                format!("factor must be scalar, got {:?}", st.shape()),
            ));
        }
        let factor = st.item();
        let xt = self.check(x)?;
        let data = xt.data().iter().map(|v| v * factor).collect();
        let out = Tensor::new(xt.shape().to_vec(), data)?;
        let rg = self.grad_any(&[x.0, s.0]);
        Ok(self.push(Value::Owned(out), Op::ScaleBy(x.0, s.0), rg))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Exp(x.0), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Log(x.0), f64::ln)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh(x.0), f64::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x.0), |v| if v > 0.0 { v } else { 0.0 })
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.check(x)?.data().iter().sum();
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(Value::Owned(Tensor::scalar(s)), Op::Sum(x.0), rg))
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xt = self.check(x)?;
        if xt.is_empty() {
            return Err(TensorError::shape("mean", "empty tensor"));
        }
        let s = xt.data().iter().sum::<f64>() / xt.len() as f64;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(Value::Owned(Tensor::scalar(s)), Op::Mean(x.0), rg))
    }

    /// Column-wise mean of an `r x c` matrix, as a `1 x c` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xt = self.check(x)?;
        let (r, c) = (xt.rows(), xt.cols());
        if r == 0 {
            return Err(TensorError::shape("mean_rows", "no rows"));
        }
        let mut out = vec![0.0; c];
        for row in xt.data().chunks(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = 1.0 / r as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(Value::Owned(Tensor::row(out)), Op::MeanRows(x.0), rg))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::shape("concat", "no inputs"));
        }
        let r = self.check(parts[0])?.rows();
        let mut total = 0;
        for &p in parts {
            let t = self.check(p)?;
            if t.rows() != r {
                return Err(TensorError::shape(
                    "concat",
                    format!("row mismatch {} vs {}", t.rows(), r),
                ));
            }
            total += t.cols();
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.nodes[p.0].value.get().row_slice(i));
            }
        }
        let idx: Vec<usize> = parts.iter().map(|v| v.0).collect();
        let rg = self.grad_any(&idx);
        Ok(self.push(
            Value::Owned(Tensor::matrix(r, total, data)?),
            Op::ConcatCols(idx),
            rg,
        ))
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xt = self.check(x)?;
        let c = xt.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= xt.rows() {
                return Err(TensorError::shape(
                    "gather_rows",
                    format!("row {} out of {}", r, xt.rows()),
                ));
            }
            data.extend_from_slice(xt.row_slice(r));
        }
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(
            Value::Owned(Tensor::matrix(rows.len(), c, data)?),
            Op::GatherRows(x.0, rows.to_vec()),
            rg,
        ))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xt = self.check(x)?;
        let (r, c) = (xt.rows(), xt.cols());
        if start + len > c {
            return Err(TensorError::shape(
                "slice_cols",
                format!("{}..{} of {} columns", start, start + len, c),
            ));
        }
        let mut data = Vec::with_capacity(r * len);
        for row in xt.data().chunks(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(
            Value::Owned(Tensor::matrix(r, len, data)?),
            Op::SliceCols(x.0, start),
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.check(x)?.clone().reshaped(shape.to_vec())?;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(Value::Owned(out), Op::Reshape(x.0), rg))
    }

    /// Row-wise softmax where `mask[j] == true` excludes column `j`.
    ///
    /// The mask has either one entry per column (shared by all rows) or one
    /// entry per element. Excluded entries get probability exactly zero.
    pub fn masked_softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let xt = self.check(x)?;
        let (r, c) = (xt.rows(), xt.cols());
        if let Some(m) = mask {
            if m.len() != c && m.len() != r * c {
                return Err(TensorError::shape(
                    "masked_softmax",
                    format!("mask of {} for {:?}", m.len(), xt.shape()),
                ));
            }
        }
        let per_element = mask.is_some_and(|m| m.len() == r * c && r > 1);
        let masked = |i: usize, j: usize| -> bool {
            match mask {
                None => false,
                Some(m) if per_element => m[i * c + j],
                Some(m) => m[j],
            }
        };
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = xt.row_slice(i);
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if !masked(i, j) && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(TensorError::InvalidMask { row: i });
            }
            let o = &mut out[i * c..(i + 1) * c];
            let mut total = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if !masked(i, j) {
                    let e = (v - max).exp();
                    o[j] = e;
                    total += e;
                }
            }
            let inv = 1.0 / total;
            o.iter_mut().for_each(|p| *p *= inv);
        }
        let shape = xt.shape().to_vec();
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(
            Value::Owned(Tensor::new(shape, out)?),
            Op::MaskedSoftmax(x.0),
            rg,
        ))
    }

    /// Row-wise layer normalization with per-column gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xt = self.check(x)?;
        let (r, c) = (xt.rows(), xt.cols());
        let gt = self.check(gain)?;
        let bt = self.check(bias)?;
        if gt.len() != c || bt.len() != c {
            return Err(TensorError::shape(
                "layer_norm",
                format!("{:?} with gain {:?}, bias {:?}", xt.shape(), gt.shape(), bt.shape()),
            ));
        }
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = xt.row_slice(i);
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mu) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * gt.data()[j] + bt.data()[j];
            }
        }
        let shape = xt.shape().to_vec();
        let rg = self.grad_any(&[x.0, gain.0, bias.0]);
        Ok(self.push(
            Value::Owned(Tensor::new(shape, out)?),
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// The entry at flat row-major `index`, as a scalar.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        let xt = self.check(x)?;
        if index >= xt.len() {
            return Err(TensorError::shape(
                "pick",
                format!("index {} of {}", index, xt.len()),
            ));
        }
        let v = xt.data()[index];
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(Value::Owned(Tensor::scalar(v)), Op::Pick(x.0, index), rg))
    }

    /// Rows `start..start + len` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xt = self.check(x)?;
        let (r, c) = (xt.rows(), xt.cols());
        if start + len > r {
            return Err(TensorError::shape(
                "slice_rows",
                format!("{}..{} of {} rows", start, start + len, r),
            ));
        }
        let data = xt.data()[start * c..(start + len) * c].to_vec();
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(
            Value::Owned(Tensor::matrix(len, c, data)?),
            Op::SliceRows(x.0, start),
            rg,
        ))
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::shape("stack_rows", "no inputs"));
        }
        let c = self.check(parts[0])?.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.check(p)?;
            if t.cols() != c {
                return Err(TensorError::shape(
                    "stack_rows",
                    format!("column mismatch {} vs {}", t.cols(), c),
                ));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let idx: Vec<usize> = parts.iter().map(|v| v.0).collect();
        let rg = self.grad_any(&idx);
        Ok(self.push(
            Value::Owned(Tensor::matrix(rows, c, data)?),
            Op::StackRows(idx),
            rg,
        ))
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q` is `m x D`, `k` and `v` are `n x D`, with `D = heads * dh` and
    /// head `h` owning columns `h*dh..(h+1)*dh`. For every head the weights
    /// are `masked_softmax(scale * q_h k_h^T + bias_h)`, where `bias`, if
    /// given, is `(m*n) x heads` with row `i*n + j`. `mask[j] == true`
    /// excludes key `j` for every query and head. The result is `m x D`.
    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        bias: Option<Var>,
        heads: usize,
        scale: f64,
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        let qt = self.check(q)?;
        let kt = self.check(k)?;
        let vt = self.check(v)?;
        let (m, dm, n) = (qt.rows(), qt.cols(), kt.rows());
        if heads == 0 || dm % heads != 0 || kt.cols() != dm || vt.cols() != dm || vt.rows() != n {
            return Err(TensorError::shape(
                "attention",
                format!(
                    "q {:?}, k {:?}, v {:?} with {} heads",
                    qt.shape(),
                    kt.shape(),
                    vt.shape(),
                    heads
                ),
            ));
        }
        let bt = match bias {
            Some(b) => {
                let t = self.check(b)?;
                if t.len() != m * n * heads {
                    return Err(TensorError::shape(
                        "attention",
                        format!("bias {:?} for {} x {} x {} heads", t.shape(), m, n, heads),
                    ));
                }
                Some(t)
            }
            None => None,
        };
        if let Some(mk) = mask {
            if mk.len() != n {
                return Err(TensorError::shape(
                    "attention",
                    format!("mask of {} for {} keys", mk.len(), n),
                ));
            }
            if mk.iter().all(|&x| x) {
                return Err(TensorError::InvalidMask { row: 0 });
            }
        }
        let dh = dm / heads;
        let mut probs = vec![0.0; heads * m * n];
        let mut out = vec![0.0; m * dm];
        for h in 0..heads {
            let s = &mut probs[h * m * n..(h + 1) * m * n];
            gemm(
                m,
                dh,
                n,
                scale,
                &qt.data()[h * dh..],
                dm as isize,
                1,
                &kt.data()[h * dh..],
                1,
                dm as isize,
                s,
                0.0,
            );
            for i in 0..m {
                let row = &mut s[i * n..(i + 1) * n];
                if let Some(b) = bt {
                    for (j, x) in row.iter_mut().enumerate() {
                        *x += b.data()[(i * n + j) * heads + h];
                    }
                }
                let mut max = f64::NEG_INFINITY;
                for (j, &x) in row.iter().enumerate() {
                    if !mask.is_some_and(|mk| mk[j]) && x > max {
                        max = x;
                    }
                }
                let mut total = 0.0;
                for (j, x) in row.iter_mut().enumerate() {
                    if mask.is_some_and(|mk| mk[j]) {
                        *x = 0.0;
                    } else {
                        *x = (*x - max).exp();
                        total += *x;
                    }
                }
                let inv = 1.0 / total;
                row.iter_mut().for_each(|x| *x *= inv);
            }
            gemm_strided(
                m,
                n,
                dh,
                1.0,
                s,
                n as isize,
                1,
                &vt.data()[h * dh..],
                dm as isize,
                1,
                0.0,
                &mut out[h * dh..],
                dm as isize,
                1,
            );
        }
        let mut inputs = vec![q.0, k.0, v.0];
        inputs.extend(bias.map(|b| b.0));
        let rg = self.grad_any(&inputs);
        Ok(self.push(
            Value::Owned(Tensor::matrix(m, dm, out)?),
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                bias: bias.map(|b| b.0),
                heads,
                scale,
                probs,
            },
            rg,
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// A tape can be differentiated once; a second call is an error rather
    /// than a silent double accumulation.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(TensorError::AlreadyBackpropagated);
        }
        let lt = self.check(loss)?;
        if lt.len() != 1 {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        let mut leaves: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let out = node.value.get();
            match &node.op {
                Op::Leaf => {
                    leaves[i] = Some(Tensor::new(out.shape().to_vec(), g)?);
                }
                Op::MatMul(a, b) => {
                    let at = self.nodes[*a].value.get();
                    let bt = self.nodes[*b].value.get();
                    let (m, k, nn) = (at.rows(), at.cols(), bt.cols());
                    if self.nodes[*a].requires_grad {
                        let da = acc(&mut grads, &self.nodes, *a);
                        gemm(m, nn, k, 1.0, &g, nn as isize, 1, bt.data(), 1, nn as isize, da, 1.0);
                    }
                    if self.nodes[*b].requires_grad {
                        let db = acc(&mut grads, &self.nodes, *b);
                        gemm(k, m, nn, 1.0, at.data(), 1, k as isize, &g, nn as isize, 1, db, 1.0);
                    }
                }
                Op::MatMulT(a, b) => {
                    let at = self.nodes[*a].value.get();
                    let bt = self.nodes[*b].value.get();
                    let (m, k, nn) = (at.rows(), at.cols(), bt.rows());
                    if self.nodes[*a].requires_grad {
                        let da = acc(&mut grads, &self.nodes, *a);
                        gemm(m, nn, k, 1.0, &g, nn as isize, 1, bt.data(), k as isize, 1, da, 1.0);
                    }
                    if self.nodes[*b].requires_grad {
                        let db = acc(&mut grads, &self.nodes, *b);
                        gemm(nn, m, k, 1.0, &g, 1, nn as isize, at.data(), k as isize, 1, db, 1.0);
                    }
                }
                Op::Add(a, b) => {
                    for &x in [a, b] {
                        if self.nodes[x].requires_grad {
                            add_into(acc(&mut grads, &self.nodes, x), &g);
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.nodes[*a].requires_grad {
                        add_into(acc(&mut grads, &self.nodes, *a), &g);
                    }
                    if self.nodes[*b].requires_grad {
                        let db = acc(&mut grads, &self.nodes, *b);
                        for (d, v) in db.iter_mut().zip(&g) {
                            *d -= v;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let av = self.nodes[*a].value.get().data();
                    let bv = self.nodes[*b].value.get().data();
                    if self.nodes[*a].requires_grad {
                        let da = acc(&mut grads, &self.nodes, *a);
                        for ((d, gv), y) in da.iter_mut().zip(&g).zip(bv) {
                            *d += gv * y;
                        }
                    }
                    if self.nodes[*b].requires_grad {
                        let db = acc(&mut grads, &self.nodes, *b);
                        for ((d, gv), x) in db.iter_mut().zip(&g).zip(av) {
                            *d += gv * x;
                        }
                    }
                }
                Op::AddRow(x, row) => {
                    if self.nodes[*x].requires_grad {
                        add_into(acc(&mut grads, &self.nodes, *x), &g);
                    }
                    if self.nodes[*row].requires_grad {
                        let c = out.cols();
                        let dr = acc(&mut grads, &self.nodes, *row);
                        for chunk in g.chunks(c) {
                            add_into(dr, chunk);
                        }
                    }
                }
                Op::Scale(x, f) => {
                    let dx = acc(&mut grads, &self.nodes, *x);
                    for (d, v) in dx.iter_mut().zip(&g) {
                        *d += v * f;
                    }
                }
                Op::ScaleBy(x, s) => {
                    let factor = self.nodes[*s].value.get().item();
                    if self.nodes[*x].requires_grad {
                        let dx = acc(&mut grads, &self.nodes, *x);
                        for (d, v) in dx.iter_mut().zip(&g) {
                            *d += v * factor;
                        }
                    }
                    if self.nodes[*s].requires_grad {
                        let xv = self.nodes[*x].value.get().data();
                        let dot: f64 = xv.iter().zip(&g).map(|(a, b)| a * b).sum();
                        acc(&mut grads, &self.nodes, *s)[0] += dot;
                    }
                }
                Op::Exp(x) => {
                    let dx = acc(&mut grads, &self.nodes, *x);
                    for ((d, v), y) in dx.iter_mut().zip(&g).zip(out.data()) {
                        *d += v * y;
                    }
                }
                Op::Log(x) => {
                    let xv = self.nodes[*x].value.get().data();
                    let dx = acc(&mut grads, &self.nodes, *x);
                    for ((d, v), xi) in dx.iter_mut().zip(&g).zip(xv) {
                        *d += v / xi;
                    }
                }
                Op::Tanh(x) => {
                    let dx = acc(&mut grads, &self.nodes, *x);
                    for ((d, v), y) in dx.iter_mut().zip(&g).zip(out.data()) {
                        *d += v * (1.0 - y * y);
                    }
                }
                Op::Relu(x) => {
                    let dx = acc(&mut grads, &self.nodes, *x);
                    for ((d, v), y) in dx.iter_mut().zip(&g).zip(out.data()) {
                        if *y > 0.0 {
                            *d += v;
                        }
                    }
                }
                Op::Sum(x) => {
                    let dx = acc(&mut grads, &self.nodes, *x);
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::Mean(x) => {
                    let dx = acc(&mut grads, &self.nodes, *x);
                    let share = g[0] / dx.len() as f64;
                    dx.iter_mut().for_each(|d| *d += share);
                }
                Op::MeanRows(x) => {
                    let r = self.nodes[*x].value.get().rows();
                    let inv = 1.0 / r as f64;
                    let c = g.len();
                    let dx = acc(&mut grads, &self.nodes, *x);
                    for chunk in dx.chunks_mut(c) {
                        for (d, v) in chunk.iter_mut().zip(&g) {
                            *d += v * inv;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = out.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.nodes[p].value.get().cols();
                        if self.nodes[p].requires_grad {
                            let dp = acc(&mut grads, &self.nodes, p);
                            for (dst, src) in dp.chunks_mut(pc).zip(g.chunks(total)) {
                                add_into(dst, &src[offset..offset + pc]);
                            }
                        }
                        offset += pc;
                    }
                }
                Op::GatherRows(x, rows) => {
                    let c = out.cols();
                    let dx = acc(&mut grads, &self.nodes, *x);
                    for (k, &r) in rows.iter().enumerate() {
                        add_into(&mut dx[r * c..(r + 1) * c], &g[k * c..(k + 1) * c]);
                    }
                }
                Op::SliceCols(x, start) => {
                    let len = out.cols();
                    let c = self.nodes[*x].value.get().cols();
                    let dx = acc(&mut grads, &self.nodes, *x);
                    for (dst, src) in dx.chunks_mut(c).zip(g.chunks(len)) {
                        add_into(&mut dst[*start..*start + len], src);
                    }
                }
                Op::Reshape(x) => {
                    add_into(acc(&mut grads, &self.nodes, *x), &g);
                }
                Op::MaskedSoftmax(x) => {
                    let c = out.cols();
                    let dx = acc(&mut grads, &self.nodes, *x);
                    for ((d, gv), p) in dx
                        .chunks_mut(c)
                        .zip(g.chunks(c))
                        .zip(out.data().chunks(c))
                    {
                        let dot: f64 = gv.iter().zip(p).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            d[j] += p[j] * (gv[j] - dot);
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let c = out.cols();
                    let gv = self.nodes[*gain].value.get().data();
                    if self.nodes[*gain].requires_grad {
                        let dg = acc(&mut grads, &self.nodes, *gain);
                        for (gr, h) in g.chunks(c).zip(xhat.chunks(c)) {
                            for j in 0..c {
                                dg[j] += gr[j] * h[j];
                            }
                        }
                    }
                    if self.nodes[*bias].requires_grad {
                        let db = acc(&mut grads, &self.nodes, *bias);
                        for gr in g.chunks(c) {
                            add_into(db, gr);
                        }
                    }
                    if self.nodes[*x].requires_grad {
                        let dx = acc(&mut grads, &self.nodes, *x);
                        let cf = c as f64;
                        let mut dh = vec![0.0; c];
                        for (i, (gr, h)) in g.chunks(c).zip(xhat.chunks(c)).enumerate() {
                            for j in 0..c {
                                dh[j] = gr[j] * gv[j];
                            }
                            let s1: f64 = dh.iter().sum();
                            let s2: f64 = dh.iter().zip(h).map(|(a, b)| a * b).sum();
                            let row = &mut dx[i * c..(i + 1) * c];
                            for j in 0..c {
                                row[j] += rstd[i] * (dh[j] - s1 / cf - h[j] * s2 / cf);
                            }
                        }
                    }
                }
                Op::Pick(x, index) => {
                    acc(&mut grads, &self.nodes, *x)[*index] += g[0];
                }
                Op::SliceRows(x, start) => {
                    let c = out.cols();
                    let dx = acc(&mut grads, &self.nodes, *x);
                    add_into(&mut dx[start * c..start * c + g.len()], &g);
                }
                Op::StackRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p].value.get().len();
                        if self.nodes[p].requires_grad {
                            add_into(acc(&mut grads, &self.nodes, p), &g[offset..offset + len]);
                        }
                        offset += len;
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    bias,
                    heads,
                    scale,
                    probs,
                } => {
                    let (q, k, v, heads, scale) = (*q, *k, *v, *heads, *scale);
                    let qv = self.nodes[q].value.get().data();
                    let kv = self.nodes[k].value.get().data();
                    let vv = self.nodes[v].value.get().data();
                    let dm = out.cols();
                    let m = out.rows();
                    let n = self.nodes[k].value.get().rows();
                    let dh = dm / heads;
                    let mut dq = vec![0.0; m * dm];
                    let mut dk = vec![0.0; n * dm];
                    let mut dv = vec![0.0; n * dm];
                    let mut dbias = bias.map(|_| vec![0.0; m * n * heads]);
                    let mut ds = vec![0.0; m * n];
                    for h in 0..heads {
                        let a = &probs[h * m * n..(h + 1) * m * n];
                        // dA = dO_h V_h^T
                        gemm(
                            m,
                            dh,
                            n,
                            1.0,
                            &g[h * dh..],
                            dm as isize,
                            1,
                            &vv[h * dh..],
                            1,
                            dm as isize,
                            &mut ds,
                            0.0,
                        );
                        for i in 0..m {
                            let ar = &a[i * n..(i + 1) * n];
                            let dr = &mut ds[i * n..(i + 1) * n];
                            let dot: f64 = ar.iter().zip(dr.iter()).map(|(x, y)| x * y).sum();
                            for j in 0..n {
                                dr[j] = ar[j] * (dr[j] - dot);
                            }
                        }
                        if let Some(db) = dbias.as_mut() {
                            for (idx, &x) in ds.iter().enumerate() {
                                db[idx * heads + h] += x;
                            }
                        }
                        // dV_h += A^T dO_h
                        gemm_strided(
                            n,
                            m,
                            dh,
                            1.0,
                            a,
                            1,
                            n as isize,
                            &g[h * dh..],
                            dm as isize,
                            1,
                            1.0,
                            &mut dv[h * dh..],
                            dm as isize,
                            1,
                        );
                        // dQ_h += scale dS K_h
                        gemm_strided(
                            m,
                            n,
                            dh,
                            scale,
                            &ds,
                            n as isize,
                            1,
                            &kv[h * dh..],
                            dm as isize,
                            1,
                            1.0,
                            &mut dq[h * dh..],
                            dm as isize,
                            1,
                        );
                        // dK_h += scale dS^T Q_h
                        gemm_strided(
                            n,
                            m,
                            dh,
                            scale,
                            &ds,
                            1,
                            n as isize,
                            &qv[h * dh..],
                            dm as isize,
                            1,
                            1.0,
                            &mut dk[h * dh..],
                            dm as isize,
                            1,
                        );
                    }
                    for (x, d) in [(q, dq), (k, dk), (v, dv)] {
                        if self.nodes[x].requires_grad {
                            add_into(acc(&mut grads, &self.nodes, x), &d);
                        }
                    }
                    if let (Some(b), Some(db)) = (*bias, dbias) {
                        if self.nodes[b].requires_grad {
                            add_into(acc(&mut grads, &self.nodes, b), &db);
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }
}

fn acc<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node<'_>], i: usize) -> &'g mut [f64] {
    grads[i].get_or_insert_with(|| vec![0.0; nodes[i].value.get().len()])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn masked_softmax_uniform_without_mask() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![0.0, 0.0, 0.0]));
        let p = tape.masked_softmax(x, None).unwrap();
        assert!(close(tape.value(p).data(), &[1.0 / 3.0; 3], 1e-15));
    }

    #[test]
    fn masked_softmax_excludes_masked_entry() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![5.0, 1.0, 9.0]));
        let p = tape.masked_softmax(x, Some(&[false, false, true])).unwrap();
        let e4 = (-4.0f64).exp();
        let expected = [1.0 / (1.0 + e4), e4 / (1.0 + e4), 0.0];
        let got = tape.value(p).data();
        assert!(close(got, &expected, 1e-15));
        assert_eq!(got[2], 0.0);
    }

    #[test]
    fn fully_masked_row_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![1.0, 2.0]));
        let err = tape.masked_softmax(x, Some(&[true, true])).unwrap_err();
        assert_eq!(err, TensorError::InvalidMask { row: 0 });
    }

    #[test]
    fn masked_entries_get_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![0.3, -1.0, 2.0, 0.5]));
        let p = tape.masked_softmax(x, Some(&[false, true, false, false])).unwrap();
        let w = tape.constant(Tensor::row(vec![1.0, 2.0, 3.0, 4.0]));
        let y = tape.mul(p, w).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data()[1], 0.0);
    }

    #[test]
    fn layer_norm_of_constant_row_is_bias() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![2.5; 6]));
        let g = tape.constant(Tensor::row(vec![1.0; 6]));
        let b = tape.constant(Tensor::row(vec![0.0; 6]));
        let y = tape.layer_norm(x, g, b).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.0, 5.0, 6.0]).unwrap());
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn dot_product_gradient_is_other_operand() {
        let mut tape = Tape::new();
        let xv = vec![1.0, 2.0, 3.0];
        let yv = vec![-4.0, 0.5, 7.0];
        let x = tape.leaf(Tensor::row(xv.clone()));
        let y = tape.leaf(Tensor::matrix(3, 1, yv.clone()).unwrap());
        let d = tape.matmul(x, y).unwrap();
        let g = tape.backward(d).unwrap();
        assert_eq!(g.get(x).unwrap().data(), yv.as_slice());
        assert_eq!(g.get(y).unwrap().data(), xv.as_slice());
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.backward(y).unwrap_err(), TensorError::AlreadyBackpropagated);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(
            tape.backward(x),
            Err(TensorError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(TensorError::Shape { .. })));
        assert!(tape.matmul_t(a, b).is_ok());
    }

    #[test]
    fn self_product_accumulates_both_paths() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::row(vec![1.0, 2.0]));
        let x = tape.leaf(Tensor::row(vec![3.0, 4.0]));
        let y = tape.mul(c, x).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 2.0]);
    }
}

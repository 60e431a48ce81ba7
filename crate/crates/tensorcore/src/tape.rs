use crate::error::{Result, TensorError};
use crate::ops::{self, rank2};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    AddRow {
        a: Var,
        bias: Var,
    },
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax {
        a: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    MeanRows(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    SliceCols {
        a: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Bce {
        probs: Var,
        targets: Vec<T>,
        lo: T,
        hi: T,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation so it can be differentiated in reverse.
///
/// A tape is built for one forward pass and dropped after `backward`.
#[derive(Debug, Default)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    bindings: Vec<(ParamId, Var)>,
}

/// Gradients of a scalar root with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    bindings: Vec<(ParamId, Var)>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds `scale * dL/dp` into each bound parameter's gradient buffer.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>, scale: T) {
        for &(id, var) in &self.bindings {
            if let Some(g) = self.wrt(var) {
                store.get_mut(id).accumulate_grad(g, scale);
            }
        }
    }

    /// Gradient for a parameter, summed over every binding of it on the tape.
    pub fn param(&self, id: ParamId) -> Option<Vec<T>> {
        let mut out: Option<Vec<T>> = None;
        for &(pid, var) in &self.bindings {
            if pid != id {
                continue;
            }
            if let Some(g) = self.wrt(var) {
                match out.as_mut() {
                    None => out = Some(g.to_vec()),
                    Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
                }
            }
        }
        out
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bindings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn rg(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// A leaf that receives a gradient iff `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let rg = t.requires_grad;
        self.push(t, Op::Leaf, rg)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor<T>) -> Var {
        t.requires_grad = false;
        self.push(t, Op::Leaf, false)
    }

    /// Binds a parameter as a leaf; its gradient is collected by [`Gradients`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let src = store.get(id);
        let mut t = Tensor::new(src.shape().to_vec(), src.data().to_vec()).expect("parameter shape is valid");
        t.requires_grad = src.requires_grad;
        let v = self.leaf(t);
        self.bindings.push((id, v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = rank2("matmul", self.value(a))?;
        let (k2, n) = rank2("matmul", self.value(b))?;
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul { a, b, trans_b: false }, rg))
    }

    /// `a[m,k] · b[n,k]ᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = rank2("matmul_t", self.value(a))?;
        let (n, k2) = rank2("matmul_t", self.value(b))?;
        if k != k2 {
            return Err(mismatch("matmul_t", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            1,
            k as isize,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul { a, b, trans_b: true }, rg))
    }

    fn zip_map(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_map("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_map("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// Adds a length-`n` vector to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, n) = rank2("add_row", self.value(a))?;
        if self.value(bias).numel() != n {
            return Err(mismatch("add_row", self.shape(a), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let data = self
            .value(a)
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(t, Op::AddRow { a, bias }, rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let src = self.value(a);
        let t = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&x| f(x)).collect()).expect("same shape");
        let rg = self.rg(a);
        self.push(t, op, rg)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, ops::gelu, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, ops::sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = ops::softmax(self.value(a), axis)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Softmax { a, axis }, rg))
    }

    /// Row-wise layer normalization of an `[m, n]` matrix.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (m, n) = rank2("layer_norm", self.value(x))?;
        if self.value(gain).numel() != n || self.value(bias).numel() != n {
            return Err(mismatch("layer_norm", self.shape(x), self.shape(gain)));
        }
        if n == 0 {
            return Err(TensorError::EmptyAxis { op: "layer_norm", axis: 1 });
        }
        let mut out = vec![T::zero(); m * n];
        let mut xhat = vec![T::zero(); m * n];
        let mut rstd = Vec::with_capacity(m);
        {
            let xs = self.value(x).data();
            let g = self.value(gain).data();
            let b = self.value(bias).data();
            for r in 0..m {
                let span = r * n..(r + 1) * n;
                rstd.push(ops::layer_norm_row(
                    &xs[span.clone()],
                    g,
                    b,
                    eps,
                    &mut out[span.clone()],
                    &mut xhat[span],
                ));
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(Tensor::new([m, n], out)?, Op::LayerNorm { x, gain, bias, xhat, rstd }, rg))
    }

    /// Mean over rows of an `[m, n]` matrix, giving `[1, n]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = rank2("mean_rows", self.value(a))?;
        if m == 0 {
            return Err(TensorError::EmptyAxis { op: "mean_rows", axis: 0 });
        }
        let mut out = vec![T::zero(); n];
        for row in self.value(a).data().chunks(n) {
            out.iter_mut().zip(row).for_each(|(o, &x)| *o = *o + x);
        }
        let inv = T::from_f64(1.0 / m as f64);
        out.iter_mut().for_each(|o| *o = *o * inv);
        let rg = self.rg(a);
        Ok(self.push(Tensor::new([1, n], out)?, Op::MeanRows(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(TensorError::EmptyAxis { op: "mean", axis: 0 });
        }
        let s = self.value(a).data().iter().copied().sum::<T>() / T::from_f64(n as f64);
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::Mean(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Columns `start..start + len` of an `[m, n]` matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = rank2("slice_cols", self.value(a))?;
        if start + len > n {
            return Err(mismatch("slice_cols", self.shape(a), &[start, len]));
        }
        let data = self
            .value(a)
            .data()
            .chunks(n)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let rg = self.rg(a);
        Ok(self.push(Tensor::new([m, len], data)?, Op::SliceCols { a, start }, rg))
    }

    /// Concatenates `[m, n_i]` matrices along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::EmptyAxis {
            op: "concat_cols",
            axis: 1,
        })?;
        let (m, _) = rank2("concat_cols", self.value(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (mp, np) = rank2("concat_cols", self.value(p))?;
            if mp != m {
                return Err(mismatch("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(np);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new([m, total], out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Mean binary cross-entropy between probabilities and 0/1 targets.
    ///
    /// Probabilities are clamped to `[lo, hi]` before the logarithms; the
    /// clamped entries pass no gradient.
    pub fn bce(&mut self, probs: Var, targets: &[T], lo: T, hi: T) -> Result<Var> {
        let p = self.value(probs).data();
        if p.len() != targets.len() {
            return Err(mismatch("bce", self.shape(probs), &[targets.len()]));
        }
        if p.is_empty() {
            return Err(TensorError::EmptyAxis { op: "bce", axis: 0 });
        }
        let n = T::from_f64(p.len() as f64);
        let loss = p
            .iter()
            .zip(targets)
            .map(|(&pi, &y)| {
                let q = pi.max(lo).min(hi);
                -(y * q.ln() + (T::one() - y) * (T::one() - q).ln())
            })
            .sum::<T>()
            / n;
        let rg = self.rg(probs);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                probs,
                targets: targets.to_vec(),
                lo,
                hi,
            },
            rg,
        ))
    }

    /// Reverse pass from a single-element root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.value(root).numel() != 1 {
            return Err(TensorError::NonScalarRoot(self.shape(root).to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.rg(root) {
            grads[root.0] = Some(vec![T::one()]);
        }
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            bindings: self.bindings.clone(),
        })
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = av.matrix_dims();
                let n = node.value.matrix_dims().1;
                if self.rg(*a) {
                    let ga = self.slot(grads, *a);
                    if *trans_b {
                        // ga[m,k] += g[m,n] · b[n,k]
                        T::gemm(
                            m,
                            n,
                            k,
                            T::one(),
                            g,
                            n as isize,
                            1,
                            bv.data(),
                            k as isize,
                            1,
                            T::one(),
                            ga,
                            k as isize,
                            1,
                        );
                    } else {
                        // ga[m,k] += g[m,n] · b[k,n]ᵀ
                        T::gemm(
                            m,
                            n,
                            k,
                            T::one(),
                            g,
                            n as isize,
                            1,
                            bv.data(),
                            1,
                            n as isize,
                            T::one(),
                            ga,
                            k as isize,
                            1,
                        );
                    }
                }
                if self.rg(*b) {
                    let gb = self.slot(grads, *b);
                    if *trans_b {
                        // gb[n,k] += g[m,n]ᵀ · a[m,k]
                        T::gemm(
                            n,
                            m,
                            k,
                            T::one(),
                            g,
                            1,
                            n as isize,
                            av.data(),
                            k as isize,
                            1,
                            T::one(),
                            gb,
                            k as isize,
                            1,
                        );
                    } else {
                        // gb[k,n] += a[m,k]ᵀ · g[m,n]
                        T::gemm(
                            k,
                            m,
                            n,
                            T::one(),
                            av.data(),
                            1,
                            k as isize,
                            g,
                            n as isize,
                            1,
                            T::one(),
                            gb,
                            n as isize,
                            1,
                        );
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.rg(v) {
                        add_assign(self.slot(grads, v), g);
                    }
                }
            }
            Op::AddRow { a, bias } => {
                if self.rg(*a) {
                    add_assign(self.slot(grads, *a), g);
                }
                if self.rg(*bias) {
                    let n = node.value.matrix_dims().1;
                    let gb = self.slot(grads, *bias);
                    for row in g.chunks(n) {
                        add_assign(gb, row);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    let ga = self.slot(grads, *a);
                    for j in 0..g.len() {
                        ga[j] = ga[j] + g[j] * bv[j];
                    }
                }
                if self.rg(*b) {
                    let gb = self.slot(grads, *b);
                    for j in 0..g.len() {
                        gb[j] = gb[j] + g[j] * av[j];
                    }
                }
            }
            Op::Scale(a, s) => {
                if self.rg(*a) {
                    let ga = self.slot(grads, *a);
                    for j in 0..g.len() {
                        ga[j] = ga[j] + g[j] * *s;
                    }
                }
            }
            Op::Relu(a) => self.elementwise(grads, *a, g, |x, _| if x > T::zero() { T::one() } else { T::zero() }),
            Op::Gelu(a) => self.elementwise(grads, *a, g, |x, _| ops::gelu_grad(x)),
            Op::Sigmoid(a) => {
                let ys = y.to_vec();
                self.elementwise_idx(grads, *a, g, |j| ys[j] * (T::one() - ys[j]));
            }
            Op::Tanh(a) => {
                let ys = y.to_vec();
                self.elementwise_idx(grads, *a, g, |j| T::one() - ys[j] * ys[j]);
            }
            Op::Softmax { a, axis } => {
                if !self.rg(*a) {
                    return;
                }
                let shape = node.value.shape();
                let (rows, cols) = if shape.len() == 1 { (1, shape[0]) } else { (shape[0], shape[1]) };
                let along_rows = shape.len() == 1 || *axis == 1;
                let ga = self.slot(grads, *a);
                if along_rows {
                    for r in 0..rows {
                        let s = r * cols..(r + 1) * cols;
                        let dot: T = g[s.clone()].iter().zip(&y[s.clone()]).map(|(&gi, &yi)| gi * yi).sum();
                        for j in s {
                            ga[j] = ga[j] + y[j] * (g[j] - dot);
                        }
                    }
                } else {
                    for c in 0..cols {
                        let dot: T = (0..rows).map(|r| g[r * cols + c] * y[r * cols + c]).sum();
                        for r in 0..rows {
                            let j = r * cols + c;
                            ga[j] = ga[j] + y[j] * (g[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let n = node.value.matrix_dims().1;
                let gv = self.value(*gain).data().to_vec();
                if self.rg(*gain) {
                    let gg = self.slot(grads, *gain);
                    for (grow, xrow) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            gg[j] = gg[j] + grow[j] * xrow[j];
                        }
                    }
                }
                if self.rg(*bias) {
                    let gb = self.slot(grads, *bias);
                    for grow in g.chunks(n) {
                        add_assign(gb, grow);
                    }
                }
                if self.rg(*x) {
                    let gx = self.slot(grads, *x);
                    let inv_n = T::from_f64(1.0 / n as f64);
                    for (r, &rs) in rstd.iter().enumerate() {
                        let s = r * n..(r + 1) * n;
                        let grow = &g[s.clone()];
                        let xrow = &xhat[s.clone()];
                        let mut mean_d = T::zero();
                        let mut mean_dx = T::zero();
                        for j in 0..n {
                            let d = grow[j] * gv[j];
                            mean_d = mean_d + d;
                            mean_dx = mean_dx + d * xrow[j];
                        }
                        mean_d = mean_d * inv_n;
                        mean_dx = mean_dx * inv_n;
                        for j in 0..n {
                            let d = grow[j] * gv[j];
                            gx[s.start + j] = gx[s.start + j] + rs * (d - mean_d - xrow[j] * mean_dx);
                        }
                    }
                }
            }
            Op::MeanRows(a) => {
                if self.rg(*a) {
                    let m = self.value(*a).matrix_dims().0;
                    let inv = T::from_f64(1.0 / m as f64);
                    let ga = self.slot(grads, *a);
                    for row in ga.chunks_mut(g.len()) {
                        for (r, &gi) in row.iter_mut().zip(g) {
                            *r = *r + gi * inv;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if self.rg(*a) {
                    let ga = self.slot(grads, *a);
                    ga.iter_mut().for_each(|x| *x = *x + g[0]);
                }
            }
            Op::Mean(a) => {
                if self.rg(*a) {
                    let ga = self.slot(grads, *a);
                    let s = g[0] / T::from_f64(ga.len() as f64);
                    ga.iter_mut().for_each(|x| *x = *x + s);
                }
            }
            Op::Reshape(a) => {
                if self.rg(*a) {
                    add_assign(self.slot(grads, *a), g);
                }
            }
            Op::SliceCols { a, start } => {
                if self.rg(*a) {
                    let n = self.value(*a).matrix_dims().1;
                    let len = node.value.matrix_dims().1;
                    let ga = self.slot(grads, *a);
                    for (r, grow) in g.chunks(len).enumerate() {
                        let dst = &mut ga[r * n + start..r * n + start + len];
                        add_assign(dst, grow);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (m, total) = node.value.matrix_dims();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).matrix_dims().1;
                    if self.rg(p) {
                        let gp = self.slot(grads, p);
                        for r in 0..m {
                            add_assign(&mut gp[r * w..(r + 1) * w], &g[r * total + offset..r * total + offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::Bce { probs, targets, lo, hi } => {
                if self.rg(*probs) {
                    let p = self.value(*probs).data().to_vec();
                    let n = T::from_f64(p.len() as f64);
                    let gp = self.slot(grads, *probs);
                    for j in 0..p.len() {
                        if p[j] < *lo || p[j] > *hi {
                            continue;
                        }
                        let y = targets[j];
                        let d = (-y / p[j] + (T::one() - y) / (T::one() - p[j])) / n;
                        gp[j] = gp[j] + g[0] * d;
                    }
                }
            }
        }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> &'g mut Vec<T> {
        let n = self.value(v).numel();
        grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
    }

    fn elementwise(&self, grads: &mut [Option<Vec<T>>], a: Var, g: &[T], d: impl Fn(T, usize) -> T) {
        if !self.rg(a) {
            return;
        }
        let x = self.value(a).data().to_vec();
        let ga = self.slot(grads, a);
        for j in 0..g.len() {
            ga[j] = ga[j] + g[j] * d(x[j], j);
        }
    }

    fn elementwise_idx(&self, grads: &mut [Option<Vec<T>>], a: Var, g: &[T], d: impl Fn(usize) -> T) {
        if !self.rg(a) {
            return;
        }
        let ga = self.slot(grads, a);
        for j in 0..g.len() {
            ga[j] = ga[j] + g[j] * d(j);
        }
    }
}

fn add_assign<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

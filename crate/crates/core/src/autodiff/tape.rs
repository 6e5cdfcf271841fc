use std::sync::atomic::{AtomicU32, Ordering};

use super::kernels::{self, ConvGeom};
use super::{AutodiffError, Real, Result, Tensor};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }
}

impl Default for ConvParams {
    fn default() -> Self {
        Self::new(1, 0)
    }
}

/// Pointwise operation kinds accepted by [`Tape::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Mul,
    Relu,
    Sigmoid,
    Tanh,
}

enum Op<T> {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: usize,
        b: usize,
        b_scalar: bool,
    },
    Sub(usize, usize),
    Mul {
        a: usize,
        b: usize,
        b_scalar: bool,
    },
    Scale(usize, T),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    AddRowBias {
        x: usize,
        bias: usize,
    },
    AddChannelBias {
        x: usize,
        bias: usize,
        channels: usize,
        plane: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        probs: Vec<T>,
        groups: usize,
        tokens: usize,
        dim: usize,
        scale: T,
    },
    Reshape(usize),
    Permute {
        x: usize,
        perm: Vec<usize>,
    },
    GatherRows {
        x: usize,
        indices: Vec<usize>,
        width: usize,
    },
    ConcatRows(Vec<usize>),
    Conv2d {
        x: usize,
        k: usize,
        geom: ConvGeom,
        batch: usize,
        c_out: usize,
    },
    ConvTranspose2d {
        x: usize,
        k: usize,
        geom: ConvGeom,
        batch: usize,
        c_in: usize,
    },
    Sum(usize),
    Mean(usize),
    Mse {
        pred: usize,
        target: usize,
        mask: Option<Vec<T>>,
        denom: T,
    },
    Bce {
        pred: usize,
        target: usize,
        mask: Option<Vec<T>>,
        denom: T,
    },
    SoftmaxCrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<T>,
        classes: usize,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Records one forward pass and runs its reverse sweep.
pub struct Tape<T: Real = f32> {
    id: u32,
    nodes: Vec<Node<T>>,
    backward_done: bool,
    warnings: Vec<String>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

fn config(op: &'static str, reason: impl Into<String>) -> AutodiffError {
    AutodiffError::Config {
        op,
        reason: reason.into(),
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            backward_done: false,
            warnings: Vec::new(),
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(AutodiffError::ForeignVar);
        }
        Ok(v.index)
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, inputs: &[usize]) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Records a leaf; it participates in gradients iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            op: Op::Leaf,
            requires_grad: t.requires_grad,
            grad: None,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(&t))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[self.idx(v).expect("var from this tape")].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[self.idx(v).expect("var from this tape")].shape
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(self.shape(v), self.value(v).to_vec()).expect("consistent node")
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.idx(v)
            .ok()
            .and_then(|i| self.nodes[i].grad.as_deref())
    }

    /// Adds the gradient recorded for `v` into `t.grad`.
    pub fn accumulate_grad(&self, v: Var, t: &mut Tensor<T>) -> Result<()> {
        let i = self.idx(v)?;
        if self.nodes[i].value.len() != t.len() {
            return Err(mismatch("accumulate_grad", &self.nodes[i].shape, t.shape()));
        }
        if let Some(g) = &self.nodes[i].grad {
            match &mut t.grad {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
                None => t.grad = Some(g.clone()),
            }
        }
        Ok(())
    }

    /// Non-fatal numerical notes (e.g. an empty loss mask).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.warnings.push(msg);
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (&self.nodes[ia].shape, &self.nodes[ib].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::gemm_nn(&self.nodes[ia].value, &self.nodes[ib].value, &mut out, m, k, n);
        Ok(self.push(vec![m, n], out, Op::MatMul { a: ia, b: ib, m, k, n }, &[ia, ib]))
    }

    fn binary_operands(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize, bool)> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (&self.nodes[ia].shape, &self.nodes[ib].shape);
        if sa == sb {
            Ok((ia, ib, false))
        } else if self.nodes[ib].value.len() == 1 && sb.len() <= 1 {
            Ok((ia, ib, true))
        } else if self.nodes[ia].value.len() == 1 && sa.len() <= 1 {
            Ok((ib, ia, true))
        } else {
            Err(mismatch(op, sa, sb))
        }
    }

    /// Elementwise sum; one side may be a scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, b_scalar) = self.binary_operands("add", a, b)?;
        let av = &self.nodes[ia].value;
        let bv = &self.nodes[ib].value;
        let out: Vec<T> = if b_scalar {
            av.iter().map(|&x| x + bv[0]).collect()
        } else {
            av.iter().zip(bv).map(|(&x, &y)| x + y).collect()
        };
        let shape = self.nodes[ia].shape.clone();
        Ok(self.push(shape, out, Op::Add { a: ia, b: ib, b_scalar }, &[ia, ib]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        if self.nodes[ia].shape != self.nodes[ib].shape {
            return Err(mismatch("sub", &self.nodes[ia].shape, &self.nodes[ib].shape));
        }
        let out = self.nodes[ia]
            .value
            .iter()
            .zip(&self.nodes[ib].value)
            .map(|(&x, &y)| x - y)
            .collect();
        let shape = self.nodes[ia].shape.clone();
        Ok(self.push(shape, out, Op::Sub(ia, ib), &[ia, ib]))
    }

    /// Elementwise product; one side may be a scalar.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, b_scalar) = self.binary_operands("mul", a, b)?;
        let av = &self.nodes[ia].value;
        let bv = &self.nodes[ib].value;
        let out: Vec<T> = if b_scalar {
            av.iter().map(|&x| x * bv[0]).collect()
        } else {
            av.iter().zip(bv).map(|(&x, &y)| x * y).collect()
        };
        let shape = self.nodes[ia].shape.clone();
        Ok(self.push(shape, out, Op::Mul { a: ia, b: ib, b_scalar }, &[ia, ib]))
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.nodes[ia].value.iter().map(|&x| x * s).collect();
        let shape = self.nodes[ia].shape.clone();
        Ok(self.push(shape, out, Op::Scale(ia, s), &[ia]))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: impl FnOnce(usize) -> Op<T>) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.nodes[ia].value.iter().map(|&x| f(x)).collect();
        let shape = self.nodes[ia].shape.clone();
        Ok(self.push(shape, out, op(ia), &[ia]))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, sigmoid, Op::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.tanh(), Op::Tanh)
    }

    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        let need_b = || config("elementwise", "binary kind requires a second operand");
        match kind {
            Elementwise::Add => self.add(a, b.ok_or_else(need_b)?),
            Elementwise::Mul => self.mul(a, b.ok_or_else(need_b)?),
            Elementwise::Relu => self.relu(a),
            Elementwise::Sigmoid => self.sigmoid(a),
            Elementwise::Tanh => self.tanh(a),
        }
    }

    /// `x[.., n] + bias[n]`, the bias repeated over every row.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, ib) = (self.idx(x)?, self.idx(bias)?);
        let n = self.nodes[ib].value.len();
        let sx = &self.nodes[ix].shape;
        if sx.last() != Some(&n) {
            return Err(mismatch("add_row_bias", sx, &self.nodes[ib].shape));
        }
        let bv = &self.nodes[ib].value;
        let out = self.nodes[ix]
            .value
            .chunks(n)
            .flat_map(|row| row.iter().zip(bv).map(|(&a, &b)| a + b))
            .collect();
        let shape = sx.clone();
        Ok(self.push(shape, out, Op::AddRowBias { x: ix, bias: ib }, &[ix, ib]))
    }

    /// `x[B×C×H×W] + bias[C]` (or `x[C×H×W]`).
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (ix, ib) = (self.idx(x)?, self.idx(bias)?);
        let sx = self.nodes[ix].shape.clone();
        let channels = self.nodes[ib].value.len();
        let c_axis = match sx.len() {
            3 => 0,
            4 => 1,
            _ => return Err(mismatch("add_channel_bias", &sx, &self.nodes[ib].shape)),
        };
        if sx[c_axis] != channels {
            return Err(mismatch("add_channel_bias", &sx, &self.nodes[ib].shape));
        }
        let plane = sx[c_axis + 1] * sx[c_axis + 2];
        let bv = &self.nodes[ib].value;
        let out = self.nodes[ix]
            .value
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bv[(i / plane) % channels])
            .collect();
        Ok(self.push(
            sx,
            out,
            Op::AddChannelBias {
                x: ix,
                bias: ib,
                channels,
                plane,
            },
            &[ix, ib],
        ))
    }

    /// Normalises each row of the last axis to zero mean and unit
    /// (population) variance, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        if !(eps > T::zero()) {
            return Err(config("layer_norm", "eps must be positive"));
        }
        let (ix, ig, ib) = (self.idx(x)?, self.idx(gain)?, self.idx(bias)?);
        let sx = self.nodes[ix].shape.clone();
        let n = *sx.last().ok_or_else(|| config("layer_norm", "rank-0 input"))?;
        if self.nodes[ig].value.len() != n || self.nodes[ib].value.len() != n {
            return Err(mismatch("layer_norm", &sx, &self.nodes[ig].shape));
        }
        let nf = T::from_usize(n).unwrap();
        let xv = &self.nodes[ix].value;
        let (gv, bv) = (&self.nodes[ig].value, &self.nodes[ib].value);
        let rows = xv.len() / n.max(1);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = h * gv[j] + bv[j];
            }
        }
        Ok(self.push(
            sx,
            out,
            Op::LayerNorm {
                x: ix,
                gain: ig,
                bias: ib,
                xhat,
                inv_std,
            },
            &[ix, ig, ib],
        ))
    }

    /// Scaled dot-product attention over `[groups×tokens×d]` inputs.
    ///
    /// `key_mask` (length `groups·tokens`, `true` = visible) hides keys,
    /// e.g. padding tokens. Every output row is a convex combination of
    /// the visible value rows.
    pub fn softmax_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        key_mask: Option<&[bool]>,
    ) -> Result<Var> {
        let (iq, ik, iv) = (self.idx(q)?, self.idx(k)?, self.idx(v)?);
        let sq = self.nodes[iq].shape.clone();
        if sq.len() != 3 || self.nodes[ik].shape != sq || self.nodes[iv].shape != sq {
            return Err(mismatch("softmax_attention", &sq, &self.nodes[ik].shape));
        }
        let (groups, tokens, dim) = (sq[0], sq[1], sq[2]);
        if dim == 0 {
            return Err(config("softmax_attention", "head dimension is zero"));
        }
        if let Some(m) = key_mask {
            if m.len() != groups * tokens {
                return Err(mismatch("softmax_attention", &sq, &[m.len()]));
            }
        }
        let scale = T::one() / T::from_usize(dim).unwrap().sqrt();
        let (qv, kv, vv) = (&self.nodes[iq].value, &self.nodes[ik].value, &self.nodes[iv].value);
        let mut probs = vec![T::zero(); groups * tokens * tokens];
        let mut out = vec![T::zero(); groups * tokens * dim];
        let mut scores = vec![T::zero(); tokens];
        for g in 0..groups {
            let base = g * tokens * dim;
            let visible = |j: usize| key_mask.map_or(true, |m| m[g * tokens + j]);
            for i in 0..tokens {
                let qi = &qv[base + i * dim..base + (i + 1) * dim];
                let mut max = T::neg_infinity();
                for j in 0..tokens {
                    if visible(j) {
                        let s = kernels::dot(qi, &kv[base + j * dim..base + (j + 1) * dim]) * scale;
                        scores[j] = s;
                        if s > max {
                            max = s;
                        }
                    }
                }
                if max == T::neg_infinity() {
                    continue;
                }
                let prow = &mut probs[(g * tokens + i) * tokens..(g * tokens + i + 1) * tokens];
                let mut total = T::zero();
                for j in 0..tokens {
                    if visible(j) {
                        let e = (scores[j] - max).exp();
                        prow[j] = e;
                        total += e;
                    }
                }
                let orow = &mut out[base + i * dim..base + (i + 1) * dim];
                for j in 0..tokens {
                    if prow[j] != T::zero() {
                        prow[j] /= total;
                        let p = prow[j];
                        let vj = &vv[base + j * dim..base + (j + 1) * dim];
                        orow.iter_mut().zip(vj).for_each(|(o, &x)| *o += p * x);
                    }
                }
            }
        }
        Ok(self.push(
            sq,
            out,
            Op::Attention {
                q: iq,
                k: ik,
                v: iv,
                probs,
                groups,
                tokens,
                dim,
                scale,
            },
            &[iq, ik, iv],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let ix = self.idx(x)?;
        if shape.iter().product::<usize>() != self.nodes[ix].value.len() {
            return Err(mismatch("reshape", &self.nodes[ix].shape, shape));
        }
        let value = self.nodes[ix].value.clone();
        Ok(self.push(shape.to_vec(), value, Op::Reshape(ix), &[ix]))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let ix = self.idx(x)?;
        let sx = &self.nodes[ix].shape;
        let mut seen = vec![false; sx.len()];
        if perm.len() != sx.len() || perm.iter().any(|&p| p >= sx.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(mismatch("permute", sx, perm));
        }
        let out_shape = perm.iter().map(|&p| sx[p]).collect();
        let value = kernels::permute(&self.nodes[ix].value, sx, perm);
        Ok(self.push(
            out_shape,
            value,
            Op::Permute {
                x: ix,
                perm: perm.to_vec(),
            },
            &[ix],
        ))
    }

    /// Selects rows of a `[rows×width]` matrix (repeats allowed). Used for
    /// embedding lookup and token selection.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let ix = self.idx(x)?;
        let sx = &self.nodes[ix].shape;
        if sx.len() != 2 {
            return Err(mismatch("gather_rows", sx, &[indices.len()]));
        }
        let (rows, width) = (sx[0], sx[1]);
        if let Some(&bad) = indices.iter().find(|&&r| r >= rows) {
            return Err(config("gather_rows", format!("row {bad} out of range for {rows} rows")));
        }
        let xv = &self.nodes[ix].value;
        let mut out = Vec::with_capacity(indices.len() * width);
        for &r in indices {
            out.extend_from_slice(&xv[r * width..(r + 1) * width]);
        }
        Ok(self.push(
            vec![indices.len(), width],
            out,
            Op::GatherRows {
                x: ix,
                indices: indices.to_vec(),
                width,
            },
            &[ix],
        ))
    }

    /// Stacks `[r_i×width]` matrices vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let ids = parts.iter().map(|&p| self.idx(p)).collect::<Result<Vec<_>>>()?;
        let first = ids.first().ok_or_else(|| config("concat_rows", "no inputs"))?;
        let width = self.nodes[*first].shape.get(1).copied().unwrap_or(0);
        let mut rows = 0;
        let mut out = Vec::new();
        for &i in &ids {
            let s = &self.nodes[i].shape;
            if s.len() != 2 || s[1] != width {
                return Err(mismatch("concat_rows", &self.nodes[*first].shape, s));
            }
            rows += s[0];
            out.extend_from_slice(&self.nodes[i].value);
        }
        Ok(self.push(vec![rows, width], out, Op::ConcatRows(ids.clone()), &ids))
    }

    fn conv_operands(&self, x: Var, k: Var, op: &'static str) -> Result<(usize, usize, usize, bool)> {
        let (ix, ik) = (self.idx(x)?, self.idx(k)?);
        let (sx, sk) = (&self.nodes[ix].shape, &self.nodes[ik].shape);
        if sk.len() != 4 || !(sx.len() == 3 || sx.len() == 4) {
            return Err(mismatch(op, sx, sk));
        }
        let batched = sx.len() == 4;
        let batch = if batched { sx[0] } else { 1 };
        Ok((ix, ik, batch, batched))
    }

    /// 2D cross-correlation of `x[B×C_in×H×W]` (or `[C_in×H×W]`) with
    /// `kernels[C_out×C_in×kh×kw]`.
    pub fn conv2d(&mut self, x: Var, kernels: Var, p: ConvParams) -> Result<Var> {
        let (ix, ik, batch, batched) = self.conv_operands(x, kernels, "conv2d")?;
        let sx = &self.nodes[ix].shape;
        let sk = self.nodes[ik].shape.clone();
        let (c_in, h, w) = (sx[sx.len() - 3], sx[sx.len() - 2], sx[sx.len() - 1]);
        let (c_out, kh, kw) = (sk[0], sk[2], sk[3]);
        if sk[1] != c_in {
            return Err(mismatch("conv2d", sx, &sk));
        }
        if p.stride == 0 {
            return Err(config("conv2d", "stride must be at least 1"));
        }
        let (ph, pw) = (h + 2 * p.padding, w + 2 * p.padding);
        if kh > ph || kw > pw {
            return Err(config("conv2d", format!("kernel {kh}×{kw} exceeds padded input {ph}×{pw}")));
        }
        if (ph - kh) % p.stride != 0 || (pw - kw) % p.stride != 0 {
            return Err(config(
                "conv2d",
                format!("non-integer output size for input {h}×{w}, kernel {kh}×{kw}, stride {}, padding {}", p.stride, p.padding),
            ));
        }
        let geom = ConvGeom {
            channels: c_in,
            in_h: h,
            in_w: w,
            out_h: (ph - kh) / p.stride + 1,
            out_w: (pw - kw) / p.stride + 1,
            kh,
            kw,
            stride: p.stride,
            padding: p.padding,
        };
        let (rows, cols) = (geom.col_rows(), geom.col_cols());
        let xv = &self.nodes[ix].value;
        let kv = &self.nodes[ik].value;
        let in_len = c_in * h * w;
        let mut col = vec![T::zero(); rows * cols];
        let mut out = vec![T::zero(); batch * c_out * cols];
        for b in 0..batch {
            kernels::im2col(&xv[b * in_len..(b + 1) * in_len], &geom, &mut col);
            kernels::gemm_nn(kv, &col, &mut out[b * c_out * cols..(b + 1) * c_out * cols], c_out, rows, cols);
        }
        let mut shape = vec![c_out, geom.out_h, geom.out_w];
        if batched {
            shape.insert(0, batch);
        }
        Ok(self.push(
            shape,
            out,
            Op::Conv2d {
                x: ix,
                k: ik,
                geom,
                batch,
                c_out,
            },
            &[ix, ik],
        ))
    }

    /// Transposed convolution: the adjoint of [`Tape::conv2d`] with the same
    /// kernel tensor. Input `x[B×C_out×h×w]`, kernels `[C_out×C_in×kh×kw]`,
    /// output `[B×C_in×H×W]` with `H = (h−1)·stride − 2·padding + kh`.
    pub fn conv_transpose2d(&mut self, x: Var, kernels: Var, p: ConvParams) -> Result<Var> {
        let (ix, ik, batch, batched) = self.conv_operands(x, kernels, "conv_transpose2d")?;
        let sx = &self.nodes[ix].shape;
        let sk = self.nodes[ik].shape.clone();
        let (c_x, h, w) = (sx[sx.len() - 3], sx[sx.len() - 2], sx[sx.len() - 1]);
        let (c_k, c_in, kh, kw) = (sk[0], sk[1], sk[2], sk[3]);
        if c_k != c_x {
            return Err(mismatch("conv_transpose2d", sx, &sk));
        }
        if p.stride == 0 || h == 0 || w == 0 {
            return Err(config("conv_transpose2d", "stride and input size must be positive"));
        }
        let big_h = ((h - 1) * p.stride + kh) as isize - 2 * p.padding as isize;
        let big_w = ((w - 1) * p.stride + kw) as isize - 2 * p.padding as isize;
        if big_h <= 0 || big_w <= 0 {
            return Err(config("conv_transpose2d", "padding leaves an empty output"));
        }
        let geom = ConvGeom {
            channels: c_in,
            in_h: big_h as usize,
            in_w: big_w as usize,
            out_h: h,
            out_w: w,
            kh,
            kw,
            stride: p.stride,
            padding: p.padding,
        };
        let (rows, cols) = (geom.col_rows(), geom.col_cols());
        let out_len = c_in * geom.in_h * geom.in_w;
        let xv = &self.nodes[ix].value;
        let kv = &self.nodes[ik].value;
        let mut out = vec![T::zero(); batch * out_len];
        let mut col = vec![T::zero(); rows * cols];
        for b in 0..batch {
            col.iter_mut().for_each(|c| *c = T::zero());
            kernels::gemm_tn(kv, &xv[b * c_k * cols..(b + 1) * c_k * cols], &mut col, rows, c_k, cols);
            kernels::col2im(&col, &geom, &mut out[b * out_len..(b + 1) * out_len]);
        }
        let mut shape = vec![c_in, geom.in_h, geom.in_w];
        if batched {
            shape.insert(0, batch);
        }
        Ok(self.push(
            shape,
            out,
            Op::ConvTranspose2d {
                x: ix,
                k: ik,
                geom,
                batch,
                c_in: c_k,
            },
            &[ix, ik],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let s = self.nodes[ix].value.iter().copied().sum();
        Ok(self.push(vec![], vec![s], Op::Sum(ix), &[ix]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let n = self.nodes[ix].value.len();
        if n == 0 {
            return Err(config("mean", "empty input"));
        }
        let s = self.nodes[ix].value.iter().copied().sum::<T>() / T::from_usize(n).unwrap();
        Ok(self.push(vec![], vec![s], Op::Mean(ix), &[ix]))
    }

    fn loss_operands(
        &self,
        op: &'static str,
        pred: Var,
        target: Var,
        mask: Option<&Tensor<T>>,
    ) -> Result<(usize, usize, Option<Vec<T>>, T)> {
        let (ip, it) = (self.idx(pred)?, self.idx(target)?);
        let sp = &self.nodes[ip].shape;
        if *sp != self.nodes[it].shape {
            return Err(mismatch(op, sp, &self.nodes[it].shape));
        }
        let n = self.nodes[ip].value.len();
        if n == 0 {
            return Err(config(op, "empty prediction"));
        }
        match mask {
            None => Ok((ip, it, None, T::from_usize(n).unwrap())),
            Some(m) => {
                if m.len() != n {
                    return Err(mismatch(op, sp, m.shape()));
                }
                if m.data().iter().any(|&v| v != T::zero() && v != T::one()) {
                    return Err(config(op, "mask values must be 0 or 1"));
                }
                let denom = m.data().iter().copied().sum();
                Ok((ip, it, Some(m.data().to_vec()), denom))
            }
        }
    }

    /// Mean squared error. With a mask, averages over the cells where the
    /// mask is 1 only. An all-zero mask yields 0 and a recorded warning.
    pub fn mse(&mut self, pred: Var, target: Var, mask: Option<&Tensor<T>>) -> Result<Var> {
        let (ip, it, mask, denom) = self.loss_operands("mse", pred, target, mask)?;
        let mut acc = T::zero();
        let (pv, tv) = (&self.nodes[ip].value, &self.nodes[it].value);
        for i in 0..pv.len() {
            let m = mask.as_ref().map_or(T::one(), |m| m[i]);
            let d = pv[i] - tv[i];
            acc += m * d * d;
        }
        let value = if denom > T::zero() {
            acc / denom
        } else {
            self.warn("mse: mask selects no cells; loss set to 0".into());
            T::zero()
        };
        Ok(self.push(
            vec![],
            vec![value],
            Op::Mse {
                pred: ip,
                target: it,
                mask,
                denom,
            },
            &[ip, it],
        ))
    }

    /// Binary cross-entropy on probabilities; `pred` is clamped to
    /// `[eps, 1−eps]` with `eps = T::bce_eps()`. Targets must lie in [0,1].
    pub fn bce(&mut self, pred: Var, target: Var, mask: Option<&Tensor<T>>) -> Result<Var> {
        let (ip, it, mask, denom) = self.loss_operands("bce", pred, target, mask)?;
        let (pv, tv) = (&self.nodes[ip].value, &self.nodes[it].value);
        if tv.iter().any(|&t| !(t >= T::zero() && t <= T::one())) {
            return Err(config("bce", "targets must lie in [0, 1]"));
        }
        let eps = T::bce_eps();
        let mut acc = T::zero();
        for i in 0..pv.len() {
            let m = mask.as_ref().map_or(T::one(), |m| m[i]);
            let p = pv[i].max(eps).min(T::one() - eps);
            let t = tv[i];
            acc += m * -(t * p.ln() + (T::one() - t) * (T::one() - p).ln());
        }
        let value = if denom > T::zero() {
            acc / denom
        } else {
            self.warn("bce: mask selects no cells; loss set to 0".into());
            T::zero()
        };
        Ok(self.push(
            vec![],
            vec![value],
            Op::Bce {
                pred: ip,
                target: it,
                mask,
                denom,
            },
            &[ip, it],
        ))
    }

    /// Mean softmax cross-entropy of `logits[rows×classes]` against labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let il = self.idx(logits)?;
        let sl = &self.nodes[il].shape;
        if sl.len() != 2 || sl[0] != labels.len() || sl[0] == 0 {
            return Err(mismatch("softmax_cross_entropy", sl, &[labels.len()]));
        }
        let classes = sl[1];
        if labels.iter().any(|&y| y >= classes) {
            return Err(config("softmax_cross_entropy", "label out of range"));
        }
        let lv = &self.nodes[il].value;
        let mut probs = vec![T::zero(); lv.len()];
        let mut acc = T::zero();
        for (r, &y) in labels.iter().enumerate() {
            let row = &lv[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let total: T = row.iter().map(|&z| (z - max).exp()).sum();
            for c in 0..classes {
                probs[r * classes + c] = (row[c] - max).exp() / total;
            }
            acc += total.ln() + max - row[y];
        }
        let value = acc / T::from_usize(labels.len()).unwrap();
        Ok(self.push(
            vec![],
            vec![value],
            Op::SoftmaxCrossEntropy {
                logits: il,
                labels: labels.to_vec(),
                probs,
                classes,
            },
            &[il],
        ))
    }

    /// Reverse sweep from a scalar loss. Populates the gradient of every
    /// node that depends on a `requires_grad` leaf. A tape supports one
    /// backward pass.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let l = self.idx(loss)?;
        if self.backward_done {
            return Err(AutodiffError::BackwardTwice);
        }
        if self.nodes[l].value.len() != 1 {
            return Err(AutodiffError::NotScalar(self.nodes[l].shape.clone()));
        }
        self.backward_done = true;
        if !self.nodes[l].requires_grad {
            return Ok(());
        }
        self.nodes[l].grad = Some(vec![T::one()]);
        for i in (0..=l).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.input_grads(i, &g);
            self.nodes[i].grad = Some(g);
            for (j, gj) in contributions {
                let node = &mut self.nodes[j];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&gj).for_each(|(a, &b)| *a += b),
                    None => node.grad = Some(gj),
                }
            }
        }
        Ok(())
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn input_grads(&self, i: usize, g: &[T]) -> Vec<(usize, Vec<T>)> {
        let node = &self.nodes[i];
        let val = |j: usize| &self.nodes[j].value;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                if self.needs(a) {
                    let mut da = vec![T::zero(); m * k];
                    kernels::gemm_nt(g, val(b), &mut da, m, n, k);
                    out.push((a, da));
                }
                if self.needs(b) {
                    let mut db = vec![T::zero(); k * n];
                    kernels::gemm_tn(val(a), g, &mut db, k, m, n);
                    out.push((b, db));
                }
            }
            &Op::Add { a, b, b_scalar } => {
                if self.needs(a) {
                    out.push((a, g.to_vec()));
                }
                if self.needs(b) {
                    if b_scalar {
                        out.push((b, vec![g.iter().copied().sum()]));
                    } else {
                        out.push((b, g.to_vec()));
                    }
                }
            }
            &Op::Sub(a, b) => {
                if self.needs(a) {
                    out.push((a, g.to_vec()));
                }
                if self.needs(b) {
                    out.push((b, g.iter().map(|&x| -x).collect()));
                }
            }
            &Op::Mul { a, b, b_scalar } => {
                let (av, bv) = (val(a), val(b));
                if self.needs(a) {
                    let da = if b_scalar {
                        g.iter().map(|&x| x * bv[0]).collect()
                    } else {
                        g.iter().zip(bv).map(|(&x, &y)| x * y).collect()
                    };
                    out.push((a, da));
                }
                if self.needs(b) {
                    if b_scalar {
                        out.push((b, vec![g.iter().zip(av).map(|(&x, &y)| x * y).sum()]));
                    } else {
                        out.push((b, g.iter().zip(av).map(|(&x, &y)| x * y).collect()));
                    }
                }
            }
            &Op::Scale(a, s) => out.push((a, g.iter().map(|&x| x * s).collect())),
            &Op::Relu(a) => out.push((
                a,
                g.iter()
                    .zip(val(a))
                    .map(|(&d, &x)| if x > T::zero() { d } else { T::zero() })
                    .collect(),
            )),
            &Op::Sigmoid(a) => out.push((
                a,
                g.iter()
                    .zip(&node.value)
                    .map(|(&d, &y)| d * y * (T::one() - y))
                    .collect(),
            )),
            &Op::Tanh(a) => out.push((
                a,
                g.iter()
                    .zip(&node.value)
                    .map(|(&d, &y)| d * (T::one() - y * y))
                    .collect(),
            )),
            &Op::AddRowBias { x, bias } => {
                if self.needs(x) {
                    out.push((x, g.to_vec()));
                }
                if self.needs(bias) {
                    let n = val(bias).len();
                    let mut db = vec![T::zero(); n];
                    for row in g.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                    }
                    out.push((bias, db));
                }
            }
            &Op::AddChannelBias {
                x,
                bias,
                channels,
                plane,
            } => {
                if self.needs(x) {
                    out.push((x, g.to_vec()));
                }
                if self.needs(bias) {
                    let mut db = vec![T::zero(); channels];
                    for (p, chunk) in g.chunks(plane).enumerate() {
                        db[p % channels] += chunk.iter().copied().sum::<T>();
                    }
                    out.push((bias, db));
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = val(*gain).len();
                let nf = T::from_usize(n).unwrap();
                let gv = val(*gain);
                if self.needs(*x) {
                    let mut dx = vec![T::zero(); g.len()];
                    let mut dxhat = vec![T::zero(); n];
                    for r in 0..inv_std.len() {
                        let gr = &g[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..n {
                            dxhat[j] = gr[j] * gv[j];
                            s1 += dxhat[j];
                            s2 += dxhat[j] * hr[j];
                        }
                        let c = inv_std[r] / nf;
                        for j in 0..n {
                            dx[r * n + j] = c * (nf * dxhat[j] - s1 - hr[j] * s2);
                        }
                    }
                    out.push((*x, dx));
                }
                if self.needs(*gain) {
                    let mut dg = vec![T::zero(); n];
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                    out.push((*gain, dg));
                }
                if self.needs(*bias) {
                    let mut db = vec![T::zero(); n];
                    for gr in g.chunks(n) {
                        db.iter_mut().zip(gr).for_each(|(a, &b)| *a += b);
                    }
                    out.push((*bias, db));
                }
            }
            Op::Attention {
                q,
                k,
                v,
                probs,
                groups,
                tokens,
                dim,
                scale,
            } => {
                let (groups, tokens, dim, scale) = (*groups, *tokens, *dim, *scale);
                let (qv, kv, vv) = (val(*q), val(*k), val(*v));
                let mut dq = vec![T::zero(); qv.len()];
                let mut dk = vec![T::zero(); kv.len()];
                let mut dv = vec![T::zero(); vv.len()];
                let mut dp = vec![T::zero(); tokens];
                for grp in 0..groups {
                    let base = grp * tokens * dim;
                    for i in 0..tokens {
                        let prow = &probs[(grp * tokens + i) * tokens..(grp * tokens + i + 1) * tokens];
                        let go = &g[base + i * dim..base + (i + 1) * dim];
                        let mut s = T::zero();
                        for j in 0..tokens {
                            if prow[j] == T::zero() {
                                dp[j] = T::zero();
                                continue;
                            }
                            let vj = &vv[base + j * dim..base + (j + 1) * dim];
                            dp[j] = kernels::dot(go, vj);
                            s += prow[j] * dp[j];
                            let p = prow[j];
                            dv[base + j * dim..base + (j + 1) * dim]
                                .iter_mut()
                                .zip(go)
                                .for_each(|(a, &b)| *a += p * b);
                        }
                        let qi = &qv[base + i * dim..base + (i + 1) * dim];
                        for j in 0..tokens {
                            if prow[j] == T::zero() {
                                continue;
                            }
                            let ds = prow[j] * (dp[j] - s) * scale;
                            let kj = &kv[base + j * dim..base + (j + 1) * dim];
                            dq[base + i * dim..base + (i + 1) * dim]
                                .iter_mut()
                                .zip(kj)
                                .for_each(|(a, &b)| *a += ds * b);
                            dk[base + j * dim..base + (j + 1) * dim]
                                .iter_mut()
                                .zip(qi)
                                .for_each(|(a, &b)| *a += ds * b);
                        }
                    }
                }
                if self.needs(*q) {
                    out.push((*q, dq));
                }
                if self.needs(*k) {
                    out.push((*k, dk));
                }
                if self.needs(*v) {
                    out.push((*v, dv));
                }
            }
            &Op::Reshape(x) => out.push((x, g.to_vec())),
            Op::Permute { x, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                out.push((*x, kernels::permute(g, &node.shape, &inv)));
            }
            Op::GatherRows { x, indices, width } => {
                let mut dx = vec![T::zero(); val(*x).len()];
                for (r, &src) in indices.iter().enumerate() {
                    dx[src * width..(src + 1) * width]
                        .iter_mut()
                        .zip(&g[r * width..(r + 1) * width])
                        .for_each(|(a, &b)| *a += b);
                }
                out.push((*x, dx));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    if self.needs(p) {
                        out.push((p, g[offset..offset + len].to_vec()));
                    }
                    offset += len;
                }
            }
            &Op::Conv2d {
                x,
                k,
                geom,
                batch,
                c_out,
            } => {
                let (rows, cols) = (geom.col_rows(), geom.col_cols());
                let in_len = geom.channels * geom.in_h * geom.in_w;
                let (xv, kv) = (val(x), val(k));
                let mut col = vec![T::zero(); rows * cols];
                let mut dcol = vec![T::zero(); rows * cols];
                let mut dx = self.needs(x).then(|| vec![T::zero(); xv.len()]);
                let mut dk = self.needs(k).then(|| vec![T::zero(); kv.len()]);
                for b in 0..batch {
                    let gb = &g[b * c_out * cols..(b + 1) * c_out * cols];
                    if let Some(dk) = dk.as_mut() {
                        kernels::im2col(&xv[b * in_len..(b + 1) * in_len], &geom, &mut col);
                        kernels::gemm_nt(gb, &col, dk, c_out, cols, rows);
                    }
                    if let Some(dx) = dx.as_mut() {
                        dcol.iter_mut().for_each(|c| *c = T::zero());
                        kernels::gemm_tn(kv, gb, &mut dcol, rows, c_out, cols);
                        kernels::col2im(&dcol, &geom, &mut dx[b * in_len..(b + 1) * in_len]);
                    }
                }
                if let Some(dx) = dx {
                    out.push((x, dx));
                }
                if let Some(dk) = dk {
                    out.push((k, dk));
                }
            }
            &Op::ConvTranspose2d {
                x,
                k,
                geom,
                batch,
                c_in,
            } => {
                let (rows, cols) = (geom.col_rows(), geom.col_cols());
                let out_len = geom.channels * geom.in_h * geom.in_w;
                let (xv, kv) = (val(x), val(k));
                let mut col = vec![T::zero(); rows * cols];
                let mut dx = self.needs(x).then(|| vec![T::zero(); xv.len()]);
                let mut dk = self.needs(k).then(|| vec![T::zero(); kv.len()]);
                for b in 0..batch {
                    kernels::im2col(&g[b * out_len..(b + 1) * out_len], &geom, &mut col);
                    if let Some(dx) = dx.as_mut() {
                        kernels::gemm_nn(kv, &col, &mut dx[b * c_in * cols..(b + 1) * c_in * cols], c_in, rows, cols);
                    }
                    if let Some(dk) = dk.as_mut() {
                        kernels::gemm_nt(&xv[b * c_in * cols..(b + 1) * c_in * cols], &col, dk, c_in, cols, rows);
                    }
                }
                if let Some(dx) = dx {
                    out.push((x, dx));
                }
                if let Some(dk) = dk {
                    out.push((k, dk));
                }
            }
            &Op::Sum(x) => out.push((x, vec![g[0]; val(x).len()])),
            &Op::Mean(x) => {
                let n = val(x).len();
                out.push((x, vec![g[0] / T::from_usize(n).unwrap(); n]));
            }
            Op::Mse {
                pred,
                target,
                mask,
                denom,
            } => {
                if *denom > T::zero() {
                    let (pv, tv) = (val(*pred), val(*target));
                    let c = g[0] * T::of(2.0) / *denom;
                    let dp: Vec<T> = (0..pv.len())
                        .map(|i| mask.as_ref().map_or(T::one(), |m| m[i]) * (pv[i] - tv[i]) * c)
                        .collect();
                    if self.needs(*target) {
                        out.push((*target, dp.iter().map(|&x| -x).collect()));
                    }
                    if self.needs(*pred) {
                        out.push((*pred, dp));
                    }
                }
            }
            Op::Bce {
                pred,
                target,
                mask,
                denom,
            } => {
                if *denom > T::zero() {
                    let (pv, tv) = (val(*pred), val(*target));
                    let eps = T::bce_eps();
                    let c = g[0] / *denom;
                    let m = |i: usize| mask.as_ref().map_or(T::one(), |m| m[i]);
                    if self.needs(*pred) {
                        let dp = (0..pv.len())
                            .map(|i| {
                                let p = pv[i];
                                if p <= eps || p >= T::one() - eps {
                                    T::zero()
                                } else {
                                    m(i) * c * ((T::one() - tv[i]) / (T::one() - p) - tv[i] / p)
                                }
                            })
                            .collect();
                        out.push((*pred, dp));
                    }
                    if self.needs(*target) {
                        let dt = (0..pv.len())
                            .map(|i| {
                                let p = pv[i].max(eps).min(T::one() - eps);
                                -m(i) * c * (p.ln() - (T::one() - p).ln())
                            })
                            .collect();
                        out.push((*target, dt));
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                probs,
                classes,
            } => {
                let c = g[0] / T::from_usize(labels.len()).unwrap();
                let mut d: Vec<T> = probs.iter().map(|&p| p * c).collect();
                for (r, &y) in labels.iter().enumerate() {
                    d[r * classes + y] -= c;
                }
                out.push((*logits, d));
            }
        }
        out
    }
}

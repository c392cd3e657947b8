//! Reverse-mode differentiation on an eagerly evaluated tape.
//!
//! Every operation computes its value immediately and appends a node holding
//! the inputs and whatever its adjoint needs. [`Tape::backward`] walks the
//! nodes in reverse recording order and sums the contributions reaching each
//! node, so a leaf used in several places receives the total gradient.

mod optim;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

pub use optim::{Adam, Optimizer, Sgd};

use crate::error::{Error, Result};
use crate::tensor::{self, ConvGeometry, Tensor};

static NEXT_GENERATION: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    generation: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

/// Tags for every differentiable operation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    MatMul,
    Transpose,
    Conv2d,
    ConvTranspose2d,
    Hardtanh,
    Relu,
    Reshape,
    SwapLeadingAxes,
    ConcatChannels,
    SliceChannels,
    AddChannelBias,
    BlockGather,
    ScaleByL,
    GlobalAvgPool,
    Sum,
    SoftmaxCrossEntropy,
    Mse,
}

impl OpKind {
    pub const DIFFERENTIABLE: [OpKind; 21] = [
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::MatMul,
        OpKind::Transpose,
        OpKind::Conv2d,
        OpKind::ConvTranspose2d,
        OpKind::Hardtanh,
        OpKind::Relu,
        OpKind::Reshape,
        OpKind::SwapLeadingAxes,
        OpKind::ConcatChannels,
        OpKind::SliceChannels,
        OpKind::AddChannelBias,
        OpKind::BlockGather,
        OpKind::ScaleByL,
        OpKind::GlobalAvgPool,
        OpKind::Sum,
        OpKind::SoftmaxCrossEntropy,
        OpKind::Mse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Conv2d => "conv2d",
            OpKind::ConvTranspose2d => "conv_transpose2d",
            OpKind::Hardtanh => "hardtanh",
            OpKind::Relu => "relu",
            OpKind::Reshape => "reshape",
            OpKind::SwapLeadingAxes => "swap_leading_axes",
            OpKind::ConcatChannels => "concat_channels",
            OpKind::SliceChannels => "slice_channels",
            OpKind::AddChannelBias => "add_channel_bias",
            OpKind::BlockGather => "block_gather",
            OpKind::ScaleByL => "scale_by_l",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::Sum => "sum",
            OpKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
            OpKind::Mse => "mse",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        Self::DIFFERENTIABLE.into_iter().find(|k| k.name() == name)
    }
}

/// Maps each `(output block row i, input block column j)` of a `D × D`
/// block pattern to the index of the shared component placed there.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockTable {
    d: usize,
    component: Vec<usize>,
}

impl BlockTable {
    pub fn new(d: usize, component: Vec<usize>) -> Result<Self> {
        if d == 0 || component.len() != d * d || component.iter().any(|&c| c >= d) {
            return Err(Error::InvalidArgument(format!("invalid {d}x{d} block table {component:?}")));
        }
        Ok(BlockTable { d, component })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn component(&self, i: usize, j: usize) -> usize {
        self.component[i * self.d + j]
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Conv2d {
        x: Var,
        k: Var,
        geom: ConvGeometry,
    },
    ConvTranspose2d {
        x: Var,
        k: Var,
        geom: ConvGeometry,
    },
    Hardtanh(Var),
    Relu(Var),
    Reshape(Var),
    SwapLeadingAxes(Var),
    ConcatChannels(Vec<Var>),
    SliceChannels {
        x: Var,
        start: usize,
    },
    AddChannelBias {
        x: Var,
        bias: Var,
    },
    BlockGather {
        shared: Var,
        table: Arc<BlockTable>,
    },
    ScaleByL {
        bank: Var,
        l: Var,
    },
    GlobalAvgPool(Var),
    Sum(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor,
    },
    Mse {
        pred: Var,
        target: Var,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::ConvTranspose2d { .. } => OpKind::ConvTranspose2d,
            Op::Hardtanh(_) => OpKind::Hardtanh,
            Op::Relu(_) => OpKind::Relu,
            Op::Reshape(_) => OpKind::Reshape,
            Op::SwapLeadingAxes(_) => OpKind::SwapLeadingAxes,
            Op::ConcatChannels(_) => OpKind::ConcatChannels,
            Op::SliceChannels { .. } => OpKind::SliceChannels,
            Op::AddChannelBias { .. } => OpKind::AddChannelBias,
            Op::BlockGather { .. } => OpKind::BlockGather,
            Op::ScaleByL { .. } => OpKind::ScaleByL,
            Op::GlobalAvgPool(_) => OpKind::GlobalAvgPool,
            Op::Sum(_) => OpKind::Sum,
            Op::SoftmaxCrossEntropy { .. } => OpKind::SoftmaxCrossEntropy,
            Op::Mse { .. } => OpKind::Mse,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    generation: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// require gradients or does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.generation != self.generation {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::get`] but yields zeros shaped like `like` when no
    /// gradient reached `v`.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros_like(like))
    }
}

pub struct Tape {
    generation: u64,
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            generation: NEXT_GENERATION.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            fault: None,
        }
    }

    /// Mutation hook for exercising the gradient checks: negates the first
    /// input adjoint of every `kind` node during backward.
    pub fn inject_adjoint_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.check(v).expect("variable from another tape");
        &self.nodes[v.index].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            generation: self.generation,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.generation != self.generation || v.index >= self.nodes.len() {
            return Err(Error::CrossTape {
                expected: self.generation,
                found: v.generation,
            });
        }
        Ok(())
    }

    fn val(&self, v: Var) -> Result<&Tensor> {
        self.check(v)?;
        Ok(&self.nodes[v.index].value)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.index].requires_grad)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = self.rg(inputs);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.val(a)?.add(self.val(b)?)?;
        Ok(self.record(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.val(a)?.sub(self.val(b)?)?;
        Ok(self.record(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.val(a)?.mul(self.val(b)?)?;
        Ok(self.record(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.val(a)?.scale(c);
        Ok(self.record(v, Op::Scale(a, c), &[a]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.val(a)?.matmul(self.val(b)?)?;
        Ok(self.record(v, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.val(a)?.transpose()?;
        Ok(self.record(v, Op::Transpose(a), &[a]))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, geom: ConvGeometry) -> Result<Var> {
        let v = tensor::conv2d(self.val(x)?, self.val(k)?, geom)?;
        Ok(self.record(v, Op::Conv2d { x, k, geom }, &[x, k]))
    }

    /// Transposed convolution; `k` is `[C_in, C_out, kh, kw]`.
    pub fn conv_transpose2d(&mut self, x: Var, k: Var, geom: ConvGeometry, output_padding: usize) -> Result<Var> {
        let v = tensor::conv_transpose2d(self.val(x)?, self.val(k)?, geom, output_padding)?;
        Ok(self.record(v, Op::ConvTranspose2d { x, k, geom }, &[x, k]))
    }

    pub fn hardtanh(&mut self, x: Var) -> Result<Var> {
        let v = self.val(x)?.hardtanh();
        Ok(self.record(v, Op::Hardtanh(x), &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.val(x)?.relu();
        Ok(self.record(v, Op::Relu(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let v = self.val(x)?.reshape(dims.to_vec())?;
        Ok(self.record(v, Op::Reshape(x), &[x]))
    }

    pub fn swap_leading_axes(&mut self, x: Var) -> Result<Var> {
        let v = self.val(x)?.swap_leading_axes()?;
        Ok(self.record(v, Op::SwapLeadingAxes(x), &[x]))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors = parts.iter().map(|&p| self.val(p)).collect::<Result<Vec<_>>>()?;
        let v = Tensor::concat_channels(&tensors)?;
        Ok(self.record(v, Op::ConcatChannels(parts.to_vec()), parts))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.val(x)?.slice_channels(start, len)?;
        Ok(self.record(v, Op::SliceChannels { x, start }, &[x]))
    }

    /// Adds `bias[c]` to channel `c` of a `[N, C]` or `[N, C, H, W]` tensor.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.val(x)?;
        let bv = self.val(bias)?;
        let c = match xv.dims() {
            [_, c] | [_, c, _, _] => *c,
            _ => return Err(Error::InvalidShape(format!("bias target must be rank 2 or 4, got {}", xv.shape()))),
        };
        if bv.dims() != [c] {
            return Err(Error::ShapeMismatch {
                op: "add_channel_bias",
                lhs: xv.shape().clone(),
                rhs: bv.shape().clone(),
            });
        }
        let plane: usize = xv.dims()[2..].iter().product();
        let mut out = xv.clone();
        for (chunk_idx, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let b = bv.data()[chunk_idx % c];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        Ok(self.record(out, Op::AddChannelBias { x, bias }, &[x, bias]))
    }

    /// Expands shared kernels `[B_out, B_in, D, kh, kw]` into a bank
    /// `[B_out·D, B_in·D, kh, kw]` whose block `(i, j)` of bundle pair
    /// `(u, v)` is `shared[u, v, table(i, j)]`.
    pub fn block_gather(&mut self, shared: Var, table: Arc<BlockTable>) -> Result<Var> {
        let v = block_gather_forward(self.val(shared)?, &table)?;
        Ok(self.record(v, Op::BlockGather { shared, table }, &[shared]))
    }

    /// Multiplies block `(i, j)` of every bundle pair in a bank
    /// `[B_out·D, B_in·D, ...]` by `l[i, j]`.
    pub fn scale_by_l(&mut self, bank: Var, l: Var) -> Result<Var> {
        let v = scale_by_l_forward(self.val(bank)?, self.val(l)?)?;
        Ok(self.record(v, Op::ScaleByL { bank, l }, &[bank, l]))
    }

    /// `[N, C, H, W] → [N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xv = self.val(x)?;
        let [n, c, h, w] = match *xv.dims() {
            [a, b, c, d] => [a, b, c, d],
            _ => return Err(Error::InvalidShape(format!("global_avg_pool needs rank 4, got {}", xv.shape()))),
        };
        let plane = (h * w) as f64;
        let data = xv.data().chunks(h * w).map(|p| p.iter().sum::<f64>() / plane).collect();
        let v = Tensor::from_vec([n, c], data)?;
        Ok(self.record(v, Op::GlobalAvgPool(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.val(x)?.sum());
        Ok(self.record(v, Op::Sum(x), &[x]))
    }

    /// Mean softmax cross-entropy of `[N, K]` logits against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.val(logits)?;
        let (n, k) = match *lv.dims() {
            [n, k] => (n, k),
            _ => return Err(Error::InvalidShape(format!("logits must be [N, K], got {}", lv.shape()))),
        };
        if labels.len() != n || labels.iter().any(|&y| y >= k) {
            return Err(Error::InvalidArgument(format!("{} labels for {n}x{k} logits", labels.len())));
        }
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for (r, row) in lv.data().chunks(k).enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + z.ln();
            loss += lse - row[labels[r]];
            for (p, &v) in probs[r * k..(r + 1) * k].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let probs = Tensor::from_vec([n, k], probs)?;
        let v = Tensor::scalar(loss / n as f64);
        Ok(self.record(
            v,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let diff = self.val(pred)?.sub(self.val(target)?)?;
        let v = Tensor::scalar(diff.dot(&diff)? / diff.numel() as f64);
        Ok(self.record(v, Op::Mse { pred, target }, &[pred, target]))
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        let loss_value = &self.nodes[loss.index].value;
        if loss_value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_value.shape().clone()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.index] = Some(Tensor::full(loss_value.dims().to_vec(), 1.0));

        for idx in (0..=loss.index).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let mut contributions = self.adjoint(node, &g)?;
            if self.fault == Some(node.op.kind()) {
                if let Some((_, first)) = contributions.first_mut() {
                    *first = first.scale(-1.0);
                }
            }
            for (input, contrib) in contributions {
                if !self.nodes[input.index].requires_grad {
                    continue;
                }
                match &mut grads[input.index] {
                    Some(acc) => acc.add_assign(&contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[idx] = Some(g);
        }
        // Only leaves keep their gradients; intermediates are dropped.
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                *slot = None;
            }
        }
        Ok(Gradients {
            generation: self.generation,
            grads,
        })
    }

    fn adjoint(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let v = |var: Var| &self.nodes[var.index].value;
        let needs = |var: Var| self.nodes[var.index].requires_grad;
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.scale(-1.0)));
            }
            Op::Mul(a, b) => {
                out.push((*a, g.mul(v(*b))?));
                out.push((*b, g.mul(v(*a))?));
            }
            Op::Scale(a, c) => out.push((*a, g.scale(*c))),
            Op::MatMul(a, b) => {
                if needs(*a) {
                    out.push((*a, g.matmul(&v(*b).transpose()?)?));
                }
                if needs(*b) {
                    out.push((*b, v(*a).transpose()?.matmul(g)?));
                }
            }
            Op::Transpose(a) => out.push((*a, g.transpose()?)),
            Op::Conv2d { x, k, geom } => {
                let xv = v(*x);
                let kv = v(*k);
                if needs(*x) {
                    let hw = (xv.dims()[2], xv.dims()[3]);
                    out.push((*x, tensor::conv2d_grad_input(g, kv, *geom, hw)?));
                }
                if needs(*k) {
                    let kd = kernel_dims(kv);
                    out.push((*k, tensor::conv2d_grad_kernel(xv, g, kd, *geom)?));
                }
            }
            Op::ConvTranspose2d { x, k, geom } => {
                let xv = v(*x);
                let kv = v(*k);
                if needs(*x) {
                    out.push((*x, tensor::conv2d(g, kv, *geom)?));
                }
                if needs(*k) {
                    let kd = kernel_dims(kv);
                    out.push((*k, tensor::conv2d_grad_kernel(g, xv, kd, *geom)?));
                }
            }
            Op::Hardtanh(x) => {
                out.push((*x, g.zip_with(v(*x), "hardtanh", |g, x| if x.abs() < 1.0 { g } else { 0.0 })?));
            }
            Op::Relu(x) => {
                out.push((*x, g.zip_with(v(*x), "relu", |g, x| if x > 0.0 { g } else { 0.0 })?));
            }
            Op::Reshape(x) => out.push((*x, g.reshape(v(*x).dims().to_vec())?)),
            Op::SwapLeadingAxes(x) => out.push((*x, g.swap_leading_axes()?)),
            Op::ConcatChannels(parts) => {
                let mut start = 0;
                for p in parts {
                    let len = v(*p).dims()[1];
                    out.push((*p, g.slice_channels(start, len)?));
                    start += len;
                }
            }
            Op::SliceChannels { x, start } => {
                let xv = v(*x);
                let [n, c, h, w] = kernel_dims(xv);
                let len = g.dims()[1];
                let plane = h * w;
                let mut gx = Tensor::zeros([n, c, h, w]);
                for b in 0..n {
                    let dst = (b * c + start) * plane;
                    let src = b * len * plane;
                    gx.data_mut()[dst..dst + len * plane].copy_from_slice(&g.data()[src..src + len * plane]);
                }
                out.push((*x, gx));
            }
            Op::AddChannelBias { x, bias } => {
                out.push((*x, g.clone()));
                let c = v(*bias).numel();
                let plane: usize = g.dims()[2..].iter().product();
                let mut gb = vec![0.0; c];
                for (chunk_idx, chunk) in g.data().chunks(plane).enumerate() {
                    gb[chunk_idx % c] += chunk.iter().sum::<f64>();
                }
                out.push((*bias, Tensor::from_vec([c], gb)?));
            }
            Op::BlockGather { shared, table } => {
                out.push((*shared, block_gather_adjoint(g, v(*shared).dims(), table)?));
            }
            Op::ScaleByL { bank, l } => {
                let lv = v(*l);
                if needs(*bank) {
                    out.push((*bank, scale_by_l_forward(g, lv)?));
                }
                if needs(*l) {
                    out.push((*l, scale_by_l_coefficient_grad(g, v(*bank), lv.dims()[0])?));
                }
            }
            Op::GlobalAvgPool(x) => {
                let xv = v(*x);
                let plane: usize = xv.dims()[2..].iter().product();
                let scale = 1.0 / plane as f64;
                let data = g.data().iter().flat_map(|&gv| std::iter::repeat_n(gv * scale, plane)).collect();
                out.push((*x, Tensor::from_vec(xv.dims().to_vec(), data)?));
            }
            Op::Sum(x) => out.push((*x, Tensor::full(v(*x).dims().to_vec(), g.item()))),
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let n = labels.len();
                let k = probs.dims()[1];
                let scale = g.item() / n as f64;
                let mut gl = probs.clone();
                for (r, &y) in labels.iter().enumerate() {
                    gl.data_mut()[r * k + y] -= 1.0;
                }
                out.push((*logits, gl.scale(scale)));
            }
            Op::Mse { pred, target } => {
                let diff = v(*pred).sub(v(*target))?;
                let gp = diff.scale(2.0 * g.item() / diff.numel() as f64);
                out.push((*target, gp.scale(-1.0)));
                // pred first so fault injection hits the prediction path
                out.insert(0, (*pred, gp));
            }
        }
        Ok(out)
    }
}

fn kernel_dims(t: &Tensor) -> [usize; 4] {
    match *t.dims() {
        [a, b, c, d] => [a, b, c, d],
        _ => panic!("expected rank 4, got {}", t.shape()),
    }
}

fn shared_dims(shared: &[usize], d: usize) -> Result<(usize, usize, usize)> {
    match *shared {
        [bo, bi, kd, kh, kw] if kd == d => Ok((bo, bi, kh * kw)),
        _ => Err(Error::InvalidShape(format!(
            "shared kernels must be [B_out, B_in, {d}, kh, kw], got {shared:?}"
        ))),
    }
}

pub(crate) fn block_gather_forward(shared: &Tensor, table: &BlockTable) -> Result<Tensor> {
    let d = table.d();
    let (bo, bi, area) = shared_dims(shared.dims(), d)?;
    let (kh, kw) = (shared.dims()[3], shared.dims()[4]);
    let c_in = bi * d;
    let mut bank = vec![0.0; bo * d * c_in * area];
    let src = shared.data();
    for u in 0..bo {
        for i in 0..d {
            for v in 0..bi {
                for j in 0..d {
                    let comp = table.component(i, j);
                    let s = ((u * bi + v) * d + comp) * area;
                    let t = ((u * d + i) * c_in + v * d + j) * area;
                    bank[t..t + area].copy_from_slice(&src[s..s + area]);
                }
            }
        }
    }
    Tensor::from_vec([bo * d, c_in, kh, kw], bank)
}

fn block_gather_adjoint(g: &Tensor, shared: &[usize], table: &BlockTable) -> Result<Tensor> {
    let d = table.d();
    let (bo, bi, area) = shared_dims(shared, d)?;
    let c_in = bi * d;
    let mut gs = vec![0.0; bo * bi * d * area];
    let gd = g.data();
    for u in 0..bo {
        for i in 0..d {
            for v in 0..bi {
                for j in 0..d {
                    let comp = table.component(i, j);
                    let s = ((u * bi + v) * d + comp) * area;
                    let t = ((u * d + i) * c_in + v * d + j) * area;
                    for (a, b) in gs[s..s + area].iter_mut().zip(&gd[t..t + area]) {
                        *a += b;
                    }
                }
            }
        }
    }
    Tensor::from_vec(shared.to_vec(), gs)
}

fn bank_geometry(bank: &Tensor, d: usize) -> Result<(usize, usize, usize)> {
    let dims = bank.dims();
    if dims.len() < 2 || dims[0] % d != 0 || dims[1] % d != 0 {
        return Err(Error::InvalidShape(format!(
            "bank {} is not a grid of {d}x{d} blocks",
            bank.shape()
        )));
    }
    let area: usize = dims[2..].iter().product();
    Ok((dims[0], dims[1], area))
}

pub(crate) fn scale_by_l_forward(bank: &Tensor, l: &Tensor) -> Result<Tensor> {
    let d = match *l.dims() {
        [a, b] if a == b => a,
        _ => return Err(Error::InvalidShape(format!("L must be square, got {}", l.shape()))),
    };
    let (rows, cols, area) = bank_geometry(bank, d)?;
    let mut out = bank.clone();
    let data = out.data_mut();
    for r in 0..rows {
        for c in 0..cols {
            let coef = l.data()[(r % d) * d + c % d];
            let base = (r * cols + c) * area;
            data[base..base + area].iter_mut().for_each(|v| *v *= coef);
        }
    }
    Ok(out)
}

fn scale_by_l_coefficient_grad(g: &Tensor, bank: &Tensor, d: usize) -> Result<Tensor> {
    let (rows, cols, area) = bank_geometry(bank, d)?;
    let mut gl = vec![0.0; d * d];
    for r in 0..rows {
        for c in 0..cols {
            let base = (r * cols + c) * area;
            let dot: f64 = g.data()[base..base + area]
                .iter()
                .zip(&bank.data()[base..base + area])
                .map(|(a, b)| a * b)
                .sum();
            gl[(r % d) * d + c % d] += dot;
        }
    }
    Tensor::from_vec([d, d], gl)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(dims.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn square_derivative() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1], &[3.0]));
        let y = tape.mul(x, x).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn hardtanh_saturated_has_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[2.0, 1.0, 0.5]));
        let y = tape.hardtanh(x).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn shared_leaf_accumulates() {
        let mut tape = Tape::new();
        let w = tape.leaf(t(&[2], &[0.5, -1.0]));
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2], &[3.0, -4.0]));
        let p = tape.mul(w, a).unwrap();
        let q = tape.mul(w, b).unwrap();
        let s = tape.add(p, q).unwrap();
        let loss = tape.sum(s).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[4.0, -2.0]);
        assert!(g.get(a).is_none());
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut tape = Tape::new();
        let w = tape.leaf(t(&[2], &[1.0, 2.0]));
        let z = tape.scale(w, 0.0).unwrap();
        let loss = tape.sum(z).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let w = tape.leaf(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(w), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn cross_tape_mixing_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.leaf(Tensor::scalar(1.0));
        let y = b.leaf(Tensor::scalar(1.0));
        assert!(matches!(b.add(x, y), Err(Error::CrossTape { .. })));
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln10() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::full([2, 10], 0.3));
        let loss = tape.softmax_cross_entropy(logits, &[3, 7]).unwrap();
        assert!((tape.value(loss).item() - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn identical_mse_is_zero() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]));
        let b = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
        let loss = tape.mse(a, b).unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);
    }

    #[test]
    fn fault_injection_flips_sign() {
        let mut tape = Tape::new();
        tape.inject_adjoint_fault(OpKind::Relu);
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let y = tape.relu(x).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[-1.0, -1.0]);
    }

    #[test]
    fn op_names_round_trip() {
        for k in OpKind::DIFFERENTIABLE {
            assert_eq!(OpKind::from_name(k.name()), Some(k));
        }
    }
}

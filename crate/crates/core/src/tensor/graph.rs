//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation in creation order, which is also a
//! topological order; [`Graph::backward`] walks the tape in reverse. Parameters
//! are borrowed from their owning store rather than copied into the tape.

use std::borrow::Cow;
use std::collections::HashMap;

use super::error::{Result, TensorError};
use super::float::Float;
use super::kernels;
use super::tensor::Tensor;

/// Predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside the loss.
pub const BCE_CLAMP: f64 = 1e-7;

/// Item/feature id marking a padded position.
pub const PAD: u32 = u32::MAX;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Identifier of a learnable tensor in a parameter store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Embedding { pid: ParamId, ids: Vec<u32>, dim: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Bmm { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize },
    Permute { a: Var, in_shape: Vec<usize>, perm: Vec<usize> },
    Reshape(Var),
    AddRow { x: Var, bias: Var, n: usize },
    SoftmaxRows { x: Var, n: usize },
    RmsNorm { x: Var, scale: Var, d: usize, inv: Vec<T> },
    Sigmoid(Var),
    Silu(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Gather { x: Var, idx: Vec<usize>, d: usize },
    WeightedSumRows { x: Var, w: Vec<T>, n: usize },
    Sum(Var),
    Bce { p: Var, labels: Vec<T> },
}

struct Node<'p, T: Float> {
    value: Cow<'p, [T]>,
    shape: Vec<usize>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording context for one forward pass. Single-owner; build one per sample
/// (or per request) and run them in parallel over disjoint graphs.
pub struct Graph<'p, T: Float = f64> {
    nodes: Vec<Node<'p, T>>,
    params: HashMap<ParamId, Var>,
    seed: u64,
    grad_enabled: bool,
    matmul_flops: u64,
    backward_at: Option<usize>,
}

/// Gradient of one learnable tensor produced by a backward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamGrad<T> {
    Dense(Vec<T>),
    /// Row gradients of an embedding table; `ids` may repeat and skip pads.
    Rows { ids: Vec<u32>, dim: usize, grads: Vec<T> },
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    nodes: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, ParamGrad<T>)>,
}

impl<T: Float> Gradients<T> {
    /// Gradient with respect to any recorded node that required one.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn params(&self) -> &[(ParamId, ParamGrad<T>)] {
        &self.params
    }

    pub fn into_params(self) -> Vec<(ParamId, ParamGrad<T>)> {
        self.params
    }
}

impl<'p, T: Float> Default for Graph<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Float> Graph<'p, T> {
    pub fn new() -> Self {
        Self::with_seed(0)
    }

    pub fn with_seed(seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
            seed,
            grad_enabled: true,
            matmul_flops: 0,
            backward_at: None,
        }
    }

    /// A graph that records values only; nothing requires a gradient.
    pub fn inference() -> Self {
        let mut g = Self::new();
        g.grad_enabled = false;
        g
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-add FLOPs (2·m·k·n per product) of every matmul/bmm recorded.
    pub fn matmul_flops(&self) -> u64 {
        self.matmul_flops
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.to_vec()).expect("node shape is consistent")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Cow<'p, [T]>, shape: Vec<usize>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---- leaves -------------------------------------------------------------

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(Cow::Owned(t.into_data()), shape, Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, t: &'p Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t.data()), t.shape().to_vec(), Op::Leaf, false)
    }

    /// Leaf that receives a gradient (used for inputs under test).
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(Cow::Owned(t.into_data()), shape, Op::Leaf, true)
    }

    /// Borrowed learnable tensor. Repeated calls with the same id return the
    /// same node.
    pub fn param(&mut self, pid: ParamId, t: &'p Tensor<T>) -> Var {
        if let Some(&v) = self.params.get(&pid) {
            return v;
        }
        let v = self.push(
            Cow::Borrowed(t.data()),
            t.shape().to_vec(),
            Op::Param(pid),
            t.requires_grad(),
        );
        self.params.insert(pid, v);
        v
    }

    /// Looks up rows of an embedding table. Pad ids yield zero rows and
    /// receive no gradient.
    pub fn embedding(&mut self, pid: ParamId, table: &'p Tensor<T>, ids: &[u32]) -> Result<Var> {
        let (rows, dim) = table.dims2("embedding")?;
        let mut out = vec![T::zero(); ids.len() * dim];
        for (position, (&id, o)) in ids.iter().zip(out.chunks_mut(dim.max(1))).enumerate() {
            if id == PAD {
                continue;
            }
            let r = id as usize;
            if r >= rows {
                return Err(TensorError::Index {
                    op: "embedding",
                    position,
                    index: r,
                    bound: rows,
                });
            }
            o.copy_from_slice(table.row(r));
        }
        Ok(self.push(
            Cow::Owned(out),
            vec![ids.len(), dim],
            Op::Embedding {
                pid,
                ids: ids.to_vec(),
                dim,
            },
            table.requires_grad(),
        ))
    }

    // ---- elementwise --------------------------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, rec: Op<T>) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let out: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Cow::Owned(out), shape, rec, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).iter().map(|&x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(out), shape, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).iter().map(|&x| x + c).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(out), shape, Op::AddScalar(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| kernels::sigmoid(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(out), shape, Op::Sigmoid(a), rg)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| kernels::silu(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(out), shape, Op::Silu(a), rg)
    }

    // ---- linear algebra -----------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n) = match (sa, sb) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => return Err(TensorError::shape("matmul", sa, sb)),
        };
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        self.matmul_flops += (2 * m * k * n) as u64;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Cow::Owned(out), vec![m, n], Op::MatMul { a, b, m, k, n }, rg))
    }

    /// Batched matmul: (B×m×k) · (B×k×n) → (B×m×n).
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (batch, m, k, n) = match (sa, sb) {
            ([b1, m, k], [b2, k2, n]) if b1 == b2 && k == k2 => (*b1, *m, *k, *n),
            _ => return Err(TensorError::shape("bmm", sa, sb)),
        };
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (va, vb) = (self.value(a), self.value(b));
            for ((ab, bb), ob) in va
                .chunks(m * k)
                .zip(vb.chunks(k * n))
                .zip(out.chunks_mut(m * n))
            {
                kernels::matmul_acc(ab, bb, ob, m, k, n);
            }
        }
        self.matmul_flops += (2 * batch * m * k * n) as u64;
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Cow::Owned(out),
            vec![batch, m, n],
            Op::Bmm { a, b, batch, m, k, n },
            rg,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 2 {
            return Err(TensorError::arg("transpose", format!("expected rank 2, got {:?}", self.shape(a))));
        }
        self.permute(a, &[1, 0])
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let in_shape = self.shape(a).to_vec();
        let rank = in_shape.len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::arg("permute", format!("{perm:?} is not a permutation of rank {rank}")));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let src = permute_sources(&in_shape, perm);
        let va = self.value(a);
        let out = src.iter().map(|&s| va[s]).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(
            Cow::Owned(out),
            out_shape,
            Op::Permute {
                a,
                in_shape,
                perm: perm.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(TensorError::shape("reshape", self.shape(a), shape));
        }
        let out = self.value(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(Cow::Owned(out), shape.to_vec(), Op::Reshape(a), rg))
    }

    /// Adds a length-`n` bias to every row of an (…×n) tensor.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&0);
        if self.shape(bias) != [n] {
            return Err(TensorError::shape("add_row", self.shape(x), self.shape(bias)));
        }
        let vb = self.value(bias);
        let out = self
            .value(x)
            .chunks(n.max(1))
            .flat_map(|r| r.iter().zip(vb).map(|(&a, &b)| a + b))
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Cow::Owned(out), shape, Op::AddRow { x, bias, n }, rg))
    }

    // ---- normalisation ------------------------------------------------------

    /// Softmax over the trailing axis.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&0);
        if self.value(x).iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "softmax_rows" });
        }
        let mut out = self.value(x).to_vec();
        kernels::softmax_rows_inplace(&mut out, n);
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Cow::Owned(out), shape, Op::SoftmaxRows { x, n }, rg))
    }

    pub fn rms_norm(&mut self, x: Var, scale: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap_or(&0);
        if d == 0 || self.shape(scale) != [d] {
            return Err(TensorError::shape("rms_norm", self.shape(x), self.shape(scale)));
        }
        let mut out = vec![T::zero(); self.value(x).len()];
        let inv = kernels::rms_norm(self.value(x), self.value(scale), d, &mut out);
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x, scale]);
        Ok(self.push(Cow::Owned(out), shape, Op::RmsNorm { x, scale, d, inv }, rg))
    }

    // ---- structural ---------------------------------------------------------

    /// Concatenates along the leading axis; trailing extents must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::arg("concat_rows", "no inputs"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(TensorError::shape("concat_rows", self.shape(*first), s));
            }
            rows += s[0];
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let rg = self.rg(parts);
        Ok(self.push(Cow::Owned(out), shape, Op::Concat(parts.to_vec()), rg))
    }

    /// Flattens every input and concatenates them into one vector.
    pub fn concat_flat(&mut self, parts: &[Var]) -> Result<Var> {
        let flat: Vec<Var> = parts
            .iter()
            .map(|&p| {
                let n = self.value(p).len();
                self.reshape(p, &[n])
            })
            .collect::<Result<_>>()?;
        self.concat_rows(&flat)
    }

    /// Rows `start..start+len` along the leading axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || start + len > shape[0] {
            return Err(TensorError::arg(
                "slice_rows",
                format!("rows {start}..{} exceed {shape:?}", start + len),
            ));
        }
        let inner: usize = shape[1..].iter().product();
        let out = self.value(x)[start * inner..(start + len) * inner].to_vec();
        let mut out_shape = shape;
        out_shape[0] = len;
        let rg = self.rg(&[x]);
        Ok(self.push(
            Cow::Owned(out),
            out_shape,
            Op::Slice {
                x,
                start: start * inner,
            },
            rg,
        ))
    }

    /// out[i, j, :] = x[idx[i·k + j], :] for x of shape (L×d).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize], k: usize) -> Result<Var> {
        let (l, d) = match self.shape(x) {
            [l, d] => (*l, *d),
            s => return Err(TensorError::arg("gather_rows", format!("expected rank 2, got {s:?}"))),
        };
        if k == 0 || idx.len() % k != 0 {
            return Err(TensorError::arg("gather_rows", format!("{} indices, k = {k}", idx.len())));
        }
        let vx = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * d);
        for (position, &r) in idx.iter().enumerate() {
            if r >= l {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    position,
                    index: r,
                    bound: l,
                });
            }
            out.extend_from_slice(&vx[r * d..(r + 1) * d]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Cow::Owned(out),
            vec![idx.len() / k, k, d],
            Op::Gather {
                x,
                idx: idx.to_vec(),
                d,
            },
            rg,
        ))
    }

    /// Σᵢ w[i]·x[i, :] for x of shape (m×n); returns shape [n].
    pub fn weighted_sum_rows(&mut self, x: Var, w: &[T]) -> Result<Var> {
        let (m, n) = match self.shape(x) {
            [m, n] => (*m, *n),
            s => return Err(TensorError::arg("weighted_sum_rows", format!("expected rank 2, got {s:?}"))),
        };
        if w.len() != m {
            return Err(TensorError::shape("weighted_sum_rows", &[m, n], &[w.len()]));
        }
        let mut out = vec![T::zero(); n];
        for (row, &wi) in self.value(x).chunks(n.max(1)).zip(w) {
            if wi == T::zero() {
                continue;
            }
            for (o, &v) in out.iter_mut().zip(row) {
                *o += wi * v;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Cow::Owned(out),
            vec![n],
            Op::WeightedSumRows { x, w: w.to_vec(), n },
            rg,
        ))
    }

    /// Mean over the rows whose mask entry is true; all-false yields zeros.
    pub fn mean_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let count = mask.iter().filter(|&&m| m).count();
        let w: Vec<T> = if count == 0 {
            vec![T::zero(); mask.len()]
        } else {
            let inv = T::one() / T::of(count as f64);
            mask.iter().map(|&m| if m { inv } else { T::zero() }).collect()
        };
        self.weighted_sum_rows(x, &w)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(Cow::Owned(vec![s]), vec![], Op::Sum(a), rg)
    }

    /// Mean binary cross-entropy of probabilities `p` against `labels`.
    pub fn bce(&mut self, p: Var, labels: &[T]) -> Result<Var> {
        let loss = super::ops::bce_loss(self.value(p), labels)
            .map_err(|_| TensorError::shape("bce", self.shape(p), &[labels.len()]))?;
        let rg = self.rg(&[p]);
        Ok(self.push(
            Cow::Owned(vec![loss]),
            vec![],
            Op::Bce {
                p,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    // ---- reverse pass -------------------------------------------------------

    /// Back-propagates from a scalar `loss`. May run once per recorded forward.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::arg(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        if self.backward_at == Some(self.nodes.len()) {
            return Err(TensorError::BackwardTwice);
        }
        self.backward_at = Some(self.nodes.len());

        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        let mut params = Vec::new();
        if !nodes[loss.0].requires_grad {
            return Ok(Gradients { nodes: grads, params });
        }
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            backprop_node(nodes, node, &g, &mut grads, &mut params);
            grads[i] = Some(g);
        }
        Ok(Gradients { nodes: grads, params })
    }
}

/// For each flat output position, the flat input position it reads from.
fn permute_sources(in_shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let rank = in_shape.len();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let numel: usize = in_shape.iter().product();
    let mut src = Vec::with_capacity(numel);
    let mut counter = vec![0usize; rank];
    for _ in 0..numel {
        src.push(
            counter
                .iter()
                .zip(perm)
                .map(|(&c, &p)| c * in_strides[p])
                .sum(),
        );
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            if counter[ax] < out_shape[ax] {
                break;
            }
            counter[ax] = 0;
        }
    }
    src
}

fn acc<'a, T: Float>(grads: &'a mut [Option<Vec<T>>], v: Var, len: usize) -> &'a mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn backprop_node<T: Float>(
    nodes: &[Node<'_, T>],
    node: &Node<'_, T>,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
    params: &mut Vec<(ParamId, ParamGrad<T>)>,
) {
    let rg = |v: Var| nodes[v.0].requires_grad;
    let val = |v: Var| -> &[T] { &nodes[v.0].value };
    match &node.op {
        Op::Leaf => {}
        Op::Param(pid) => params.push((*pid, ParamGrad::Dense(g.to_vec()))),
        Op::Embedding { pid, ids, dim } => {
            let mut keep_ids = Vec::with_capacity(ids.len());
            let mut rows = Vec::with_capacity(g.len());
            for (&id, gr) in ids.iter().zip(g.chunks(*dim)) {
                if id != PAD {
                    keep_ids.push(id);
                    rows.extend_from_slice(gr);
                }
            }
            params.push((
                *pid,
                ParamGrad::Rows {
                    ids: keep_ids,
                    dim: *dim,
                    grads: rows,
                },
            ));
        }
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
            if rg(*a) {
                acc(grads, *a, g.len()).iter_mut().zip(g).for_each(|(o, &x)| *o += x);
            }
            if rg(*b) {
                acc(grads, *b, g.len()).iter_mut().zip(g).for_each(|(o, &x)| *o += sign * x);
            }
        }
        Op::Mul(a, b) => {
            if rg(*a) {
                let vb = val(*b);
                acc(grads, *a, g.len())
                    .iter_mut()
                    .zip(g.iter().zip(vb))
                    .for_each(|(o, (&x, &y))| *o += x * y);
            }
            if rg(*b) {
                let va = val(*a);
                acc(grads, *b, g.len())
                    .iter_mut()
                    .zip(g.iter().zip(va))
                    .for_each(|(o, (&x, &y))| *o += x * y);
            }
        }
        Op::Scale(a, c) => {
            if rg(*a) {
                acc(grads, *a, g.len()).iter_mut().zip(g).for_each(|(o, &x)| *o += *c * x);
            }
        }
        Op::AddScalar(a) | Op::Reshape(a) => {
            if rg(*a) {
                acc(grads, *a, g.len()).iter_mut().zip(g).for_each(|(o, &x)| *o += x);
            }
        }
        Op::MatMul { a, b, m, k, n } => {
            if rg(*a) {
                let vb = val(*b);
                kernels::matmul_nt_acc(g, vb, acc(grads, *a, m * k), *m, *n, *k);
            }
            if rg(*b) {
                let va = val(*a);
                kernels::matmul_tn_acc(va, g, acc(grads, *b, k * n), *m, *k, *n);
            }
        }
        Op::Bmm { a, b, batch, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            if rg(*a) {
                let vb = val(*b);
                let ga = acc(grads, *a, batch * m * k);
                for bi in 0..*batch {
                    kernels::matmul_nt_acc(
                        &g[bi * m * n..(bi + 1) * m * n],
                        &vb[bi * k * n..(bi + 1) * k * n],
                        &mut ga[bi * m * k..(bi + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                }
            }
            if rg(*b) {
                let va = val(*a);
                let gb = acc(grads, *b, batch * k * n);
                for bi in 0..*batch {
                    kernels::matmul_tn_acc(
                        &va[bi * m * k..(bi + 1) * m * k],
                        &g[bi * m * n..(bi + 1) * m * n],
                        &mut gb[bi * k * n..(bi + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
            }
        }
        Op::Permute { a, in_shape, perm } => {
            if rg(*a) {
                let src = permute_sources(in_shape, perm);
                let ga = acc(grads, *a, g.len());
                for (&s, &x) in src.iter().zip(g) {
                    ga[s] += x;
                }
            }
        }
        Op::AddRow { x, bias, n } => {
            if rg(*x) {
                acc(grads, *x, g.len()).iter_mut().zip(g).for_each(|(o, &v)| *o += v);
            }
            if rg(*bias) {
                let gb = acc(grads, *bias, *n);
                for row in g.chunks(*n) {
                    gb.iter_mut().zip(row).for_each(|(o, &v)| *o += v);
                }
            }
        }
        Op::SoftmaxRows { x, n } => {
            if rg(*x) {
                let y = &node.value;
                let gx = acc(grads, *x, g.len());
                for ((yr, gr), or) in y.chunks(*n).zip(g.chunks(*n)).zip(gx.chunks_mut(*n)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((o, &yv), &gv) in or.iter_mut().zip(yr).zip(gr) {
                        *o += yv * (gv - dot);
                    }
                }
            }
        }
        Op::RmsNorm { x, scale, d, inv } => {
            let d = *d;
            let vx = val(*x);
            let vs = val(*scale);
            if rg(*x) {
                let dn = T::of(d as f64);
                let gx = acc(grads, *x, g.len());
                for (((xr, gr), or), &r) in vx.chunks(d).zip(g.chunks(d)).zip(gx.chunks_mut(d)).zip(inv) {
                    let dot: T = xr.iter().zip(gr).zip(vs).map(|((&xv, &gv), &s)| xv * gv * s).sum();
                    let c = r * r * r * dot / dn;
                    for (((o, &xv), &gv), &s) in or.iter_mut().zip(xr).zip(gr).zip(vs) {
                        *o += r * s * gv - c * xv;
                    }
                }
            }
            if rg(*scale) {
                let gs = acc(grads, *scale, d);
                for ((xr, gr), &r) in vx.chunks(d).zip(g.chunks(d)).zip(inv) {
                    for ((o, &xv), &gv) in gs.iter_mut().zip(xr).zip(gr) {
                        *o += gv * xv * r;
                    }
                }
            }
        }
        Op::Sigmoid(a) => {
            if rg(*a) {
                let y = &node.value;
                acc(grads, *a, g.len())
                    .iter_mut()
                    .zip(g.iter().zip(y.iter()))
                    .for_each(|(o, (&gv, &yv))| *o += gv * yv * (T::one() - yv));
            }
        }
        Op::Silu(a) => {
            if rg(*a) {
                let va = val(*a);
                acc(grads, *a, g.len())
                    .iter_mut()
                    .zip(g.iter().zip(va))
                    .for_each(|(o, (&gv, &xv))| *o += gv * kernels::silu_grad(xv));
            }
        }
        Op::Concat(parts) => {
            let mut off = 0;
            for &p in parts {
                let len = nodes[p.0].value.len();
                if rg(p) {
                    acc(grads, p, len)
                        .iter_mut()
                        .zip(&g[off..off + len])
                        .for_each(|(o, &v)| *o += v);
                }
                off += len;
            }
        }
        Op::Slice { x, start } => {
            if rg(*x) {
                let len = nodes[x.0].value.len();
                acc(grads, *x, len)[*start..*start + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(o, &v)| *o += v);
            }
        }
        Op::Gather { x, idx, d } => {
            if rg(*x) {
                let len = nodes[x.0].value.len();
                let gx = acc(grads, *x, len);
                for (&r, gr) in idx.iter().zip(g.chunks(*d)) {
                    gx[r * d..(r + 1) * d]
                        .iter_mut()
                        .zip(gr)
                        .for_each(|(o, &v)| *o += v);
                }
            }
        }
        Op::WeightedSumRows { x, w, n } => {
            if rg(*x) {
                let len = nodes[x.0].value.len();
                let gx = acc(grads, *x, len);
                for (row, &wi) in gx.chunks_mut(*n).zip(w) {
                    row.iter_mut().zip(g).for_each(|(o, &v)| *o += wi * v);
                }
            }
        }
        Op::Sum(a) => {
            if rg(*a) {
                let len = nodes[a.0].value.len();
                acc(grads, *a, len).iter_mut().for_each(|o| *o += g[0]);
            }
        }
        Op::Bce { p, labels } => {
            if rg(*p) {
                let vp = val(*p);
                let eps = T::of(BCE_CLAMP);
                let inv_n = g[0] / T::of(labels.len() as f64);
                let gp = acc(grads, *p, labels.len());
                for ((o, &pv), &y) in gp.iter_mut().zip(vp).zip(labels) {
                    if pv <= eps || pv >= T::one() - eps {
                        continue;
                    }
                    *o += inv_n * ((T::one() - y) / (T::one() - pv) - y / pv);
                }
            }
        }
    }
}

use super::kernels::{self, gemm_nn, gemm_nt, gemm_tn, sigmoid, softmax_strided};
use super::{numel, Scalar, Tensor};
use crate::error::{dim_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

/// How `b` is laid out in a matrix product.
#[derive(Clone, Copy, Debug)]
struct MatMulLayout {
    batch: usize,
    shared_b: bool,
    trans_b: bool,
    m: usize,
    k: usize,
    n: usize,
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        layout: MatMulLayout,
    },
    Binary {
        op: BinaryOp,
        a: Var,
        b: Var,
        bcast: Broadcast,
    },
    Scale {
        a: Var,
        c: F,
    },
    Activation {
        kind: Activation,
        a: Var,
    },
    Softmax {
        a: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<F>,
        inv_std: Vec<F>,
    },
    Mean {
        a: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Sum {
        a: Var,
    },
    Reshape {
        a: Var,
    },
    Permute {
        a: Var,
        perm: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<F>,
    },
}

/// Right-aligned broadcast of `b` onto the shape of `a`.
#[derive(Clone, Debug)]
enum Broadcast {
    Same,
    /// `b` is a single value.
    Scalar,
    /// `b` repeats every `period` elements of `a` (a trailing-axis block).
    Trailing {
        period: usize,
    },
    /// Per-dimension strides into `b` over the shape of `a` (0 where b repeats).
    Strided {
        dims: Vec<usize>,
        strides: Vec<usize>,
    },
}

impl Broadcast {
    fn resolve(a: &[usize], b: &[usize]) -> Result<Self> {
        if a == b {
            return Ok(Broadcast::Same);
        }
        if numel(b) == 1 && b.len() <= a.len() {
            return Ok(Broadcast::Scalar);
        }
        if b.len() > a.len() {
            return dim_err(format!("cannot broadcast {b:?} onto {a:?}"));
        }
        let pad = a.len() - b.len();
        let mut strides = vec![0; a.len()];
        let mut stride = 1;
        for i in (0..b.len()).rev() {
            let (bd, ad) = (b[i], a[pad + i]);
            if bd == ad {
                strides[pad + i] = stride;
                stride *= bd;
            } else if bd != 1 {
                return dim_err(format!("cannot broadcast {b:?} onto {a:?}"));
            }
        }
        // b occupies a contiguous suffix of a's axes: index is i % period.
        let leading_ones = b.iter().take_while(|&&d| d == 1).count();
        if b[leading_ones..] == a[pad + leading_ones..] {
            return Ok(Broadcast::Trailing { period: numel(b) });
        }
        Ok(Broadcast::Strided {
            dims: a.to_vec(),
            strides,
        })
    }

    /// Calls `f(i, j)` for every element `i` of `a` and its source `j` in `b`.
    fn for_each(&self, len: usize, mut f: impl FnMut(usize, usize)) {
        match self {
            Broadcast::Same => (0..len).for_each(|i| f(i, i)),
            Broadcast::Scalar => (0..len).for_each(|i| f(i, 0)),
            Broadcast::Trailing { period } => (0..len).for_each(|i| f(i, i % period)),
            Broadcast::Strided { dims, strides } => {
                let mut idx = vec![0usize; dims.len()];
                let mut j = 0usize;
                for i in 0..len {
                    f(i, j);
                    for ax in (0..dims.len()).rev() {
                        idx[ax] += 1;
                        j += strides[ax];
                        if idx[ax] < dims[ax] {
                            break;
                        }
                        j -= strides[ax] * dims[ax];
                        idx[ax] = 0;
                    }
                }
            }
        }
    }
}

#[derive(Debug)]
struct Node<F> {
    shape: Vec<usize>,
    value: Vec<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Records one forward pass. Operations are appended in execution order, so
/// the inputs of a node always precede it; [`Tape::backward`] may run once.
#[derive(Debug)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
    consumed: bool,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return dim_err(format!("axis {axis} out of range for shape {shape:?}"));
    }
    Ok((numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..])))
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<F>, op: Op<F>, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<F> {
        &self.nodes[v.0]
    }

    /// Registers a tensor as a leaf; its `requires_grad` flag is honoured.
    pub fn leaf(&mut self, t: &Tensor<F>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad)
    }

    /// Registers a constant leaf (never receives a gradient).
    pub fn constant(&mut self, t: &Tensor<F>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    /// Registers a leaf that receives a gradient.
    pub fn param(&mut self, t: &Tensor<F>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.node(v).value
    }

    pub fn tensor(&self, v: Var) -> Tensor<F> {
        let n = self.node(v);
        Tensor::new(&n.shape, n.value.clone()).expect("tape values match their shapes")
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> F {
        self.node(v).value[0]
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).requires_grad)
    }

    // ---------------------------------------------------------------- ops

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool, batched: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let fail = || {
            dim_err(format!(
                "matmul{} of {sa:?} and {sb:?}",
                if trans_b { " (b transposed)" } else { "" }
            ))
        };
        if sa.is_empty() || sb.len() < 2 {
            return fail();
        }
        let k = sa[sa.len() - 1];
        let (bk, n) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if bk != k {
            return fail();
        }
        let (m, lead): (usize, Vec<usize>) = if batched {
            if sa.len() < 2 || sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
                return fail();
            }
            (sa[sa.len() - 2], sa[..sa.len() - 2].to_vec())
        } else {
            if sb.len() != 2 {
                return fail();
            }
            (numel(&sa[..sa.len() - 1]), Vec::new())
        };
        let batch = numel(&lead);
        let layout = MatMulLayout {
            batch,
            shared_b: !batched,
            trans_b,
            m,
            k,
            n,
        };
        let mut out = vec![F::zero(); batch * m * n];
        {
            let av = &self.node(a).value;
            let bv = &self.node(b).value;
            for bi in 0..batch {
                let a_blk = &av[bi * m * k..(bi + 1) * m * k];
                let b_blk = if batched {
                    &bv[bi * k * n..(bi + 1) * k * n]
                } else {
                    &bv[..]
                };
                let o_blk = &mut out[bi * m * n..(bi + 1) * m * n];
                if trans_b {
                    gemm_nt(m, k, n, a_blk, b_blk, o_blk);
                } else {
                    gemm_nn(m, k, n, a_blk, b_blk, o_blk);
                }
            }
        }
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let rg = self.needs(&[a, b]);
        Ok(self.push(shape, out, Op::MatMul { a, b, layout }, rg))
    }

    /// `a[..., m, k] · b[k, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false, false)
    }

    /// `a[..., m, k] · b[n, k]ᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true, false)
    }

    /// Batched `a[..., m, k] · b[..., k, n]` with identical leading axes.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false, true)
    }

    /// Batched `a[..., m, k] · b[..., n, k]ᵀ`.
    pub fn bmm_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true, true)
    }

    /// Elementwise `a (op) b`, where `b` may broadcast: its shape is aligned to
    /// the right of `a`'s, and each of its axes must equal the matching axis
    /// of `a` or be 1. Missing leading axes and size-1 axes repeat.
    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let bcast = Broadcast::resolve(self.shape(a), self.shape(b))?;
        let len = self.value(a).len();
        let mut out = vec![F::zero(); len];
        {
            let (av, bv) = (&self.node(a).value, &self.node(b).value);
            bcast.for_each(len, |i, j| {
                out[i] = match op {
                    BinaryOp::Add => av[i] + bv[j],
                    BinaryOp::Sub => av[i] - bv[j],
                    BinaryOp::Mul => av[i] * bv[j],
                }
            });
        }
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a, b]);
        Ok(self.push(shape, out, Op::Binary { op, a, b, bcast }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let out = self.value(a).iter().map(|&v| v * c).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a]);
        self.push(shape, out, Op::Scale { a, c }, rg)
    }

    pub fn activation(&mut self, kind: Activation, a: Var) -> Var {
        let f: fn(F) -> F = match kind {
            Activation::Relu => |x| if x > F::zero() { x } else { F::zero() },
            Activation::Tanh => |x| x.tanh(),
            Activation::Sigmoid => sigmoid,
        };
        let out = self.value(a).iter().map(|&v| f(v)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a]);
        self.push(shape, out, Op::Activation { kind, a }, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(Activation::Relu, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(Activation::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(Activation::Sigmoid, a)
    }

    /// Softmax along `axis` with the slice maximum subtracted first.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = axis_split(self.shape(a), axis)?;
        let mut out = vec![F::zero(); outer * len * inner];
        let x = &self.node(a).value;
        for o in 0..outer {
            for i in 0..inner {
                softmax_strided(x, &mut out, o * len * inner + i, len, inner);
            }
        }
        let shape = self.shape(a).to_vec();
        let rg = self.needs(&[a]);
        Ok(self.push(shape, out, Op::Softmax { a, outer, len, inner }, rg))
    }

    /// Normalizes each slice along the last axis (biased variance, `eps`
    /// inside the square root), then applies `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| Error::Dimension("layer_norm of a scalar".into()))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return dim_err(format!(
                "layer_norm over {shape:?} needs gamma/beta of [{d}], got {:?} and {:?}",
                self.shape(gamma),
                self.shape(beta)
            ));
        }
        let rows = numel(&shape) / d;
        let (xv, gv, bv) = (&self.node(x).value, &self.node(gamma).value, &self.node(beta).value);
        let mut xhat = vec![F::zero(); rows * d];
        let mut inv_std = vec![F::zero(); rows];
        let mut out = vec![F::zero(); rows * d];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = kernels::sum_f64(row.iter().copied()) / d as f64;
            let var = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = F::lit(inv);
            for c in 0..d {
                let h = F::lit((row[c].as_f64() - mean) * inv);
                xhat[r * d + c] = h;
                out[r * d + c] = h * gv[c] + bv[c];
            }
        }
        let rg = self.needs(&[x, gamma, beta]);
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
            rg,
        ))
    }

    /// Arithmetic mean along `axis`; the axis is removed from the shape.
    pub fn reduce_mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = axis_split(self.shape(a), axis)?;
        let x = &self.node(a).value;
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let s = kernels::sum_f64((0..len).map(|j| x[base + j * inner]));
                out[o * inner + i] = F::lit(s / len as f64);
            }
        }
        let mut shape = self.shape(a).to_vec();
        shape.remove(axis);
        let rg = self.needs(&[a]);
        Ok(self.push(shape, out, Op::Mean { a, outer, len, inner }, rg))
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = kernels::sum_f64(self.value(a).iter().copied());
        let rg = self.needs(&[a]);
        self.push(Vec::new(), vec![F::lit(s)], Op::Sum { a }, rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(a).len() {
            return dim_err(format!("cannot reshape {:?} into {shape:?}", self.shape(a)));
        }
        let value = self.value(a).to_vec();
        let rg = self.needs(&[a]);
        Ok(self.push(shape.to_vec(), value, Op::Reshape { a }, rg))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let src = self.shape(a).to_vec();
        let mut seen = vec![false; src.len()];
        if perm.len() != src.len()
            || perm
                .iter()
                .any(|&p| p >= src.len() || std::mem::replace(&mut seen[p], true))
        {
            return dim_err(format!("invalid permutation {perm:?} for shape {src:?}"));
        }
        let shape: Vec<usize> = perm.iter().map(|&p| src[p]).collect();
        let out = permute_data(self.value(a), &src, perm);
        let rg = self.needs(&[a]);
        Ok(self.push(shape, out, Op::Permute { a, perm: perm.to_vec() }, rg))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`, evaluated with
    /// log-sum-exp so probabilities are never formed explicitly.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return dim_err(format!(
                "cross_entropy needs [batch, classes] logits for {} labels, got {shape:?}",
                labels.len()
            ));
        }
        let (batch, k) = (shape[0], shape[1]);
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Contract(format!("label {bad} out of range for {k} classes")));
        }
        let z = &self.node(logits).value;
        let mut probs = vec![F::zero(); batch * k];
        let mut total = 0.0f64;
        for (b, &y) in labels.iter().enumerate() {
            let row = &z[b * k..(b + 1) * k];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
            let sum: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
            // (max - z_y) is unaffected by a common shift of the row.
            total += (max - row[y].as_f64()) + sum.ln();
            for c in 0..k {
                probs[b * k + c] = F::lit((row[c].as_f64() - max).exp() / sum);
            }
        }
        let loss = F::lit(total / batch as f64);
        let rg = self.needs(&[logits]);
        Ok(self.push(
            Vec::new(),
            vec![loss],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Sign (-1, 0, 1) of every relu input on the tape, in tape order; used
    /// to detect kink crossings during gradient checks.
    pub fn relu_pattern(&self) -> Vec<i8> {
        let mut pattern = Vec::new();
        for node in &self.nodes {
            if let Op::Activation {
                kind: Activation::Relu,
                a,
            } = node.op
            {
                pattern.extend(self.value(a).iter().map(|&v| {
                    if v > F::zero() {
                        1
                    } else if v < F::zero() {
                        -1
                    } else {
                        0
                    }
                }));
            }
        }
        pattern
    }

    // ----------------------------------------------------------- backward

    /// Propagates gradients from a scalar `loss` to every leaf that requires
    /// them. Fan-out contributions accumulate. May be called once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Contract(
                "backward already ran on this tape; record a new forward pass".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, node: &Node<F>, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        fn slot<'a, F: Scalar>(grads: &'a mut [Option<Vec<F>>], nodes: &[Node<F>], v: Var) -> &'a mut Vec<F> {
            grads[v.0].get_or_insert_with(|| vec![F::zero(); nodes[v.0].value.len()])
        }

        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, layout } => {
                let MatMulLayout {
                    batch,
                    shared_b,
                    trans_b,
                    m,
                    k,
                    n,
                } = *layout;
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if wants(*a) {
                    let ga = slot(grads, nodes, *a);
                    for bi in 0..batch {
                        let gb = &g[bi * m * n..(bi + 1) * m * n];
                        let b_blk = if shared_b {
                            &bv[..]
                        } else {
                            &bv[bi * k * n..(bi + 1) * k * n]
                        };
                        let out = &mut ga[bi * m * k..(bi + 1) * m * k];
                        if trans_b {
                            gemm_nn(m, n, k, gb, b_blk, out);
                        } else {
                            gemm_nt(m, n, k, gb, b_blk, out);
                        }
                    }
                }
                if wants(*b) {
                    let gbv = slot(grads, nodes, *b);
                    for bi in 0..batch {
                        let gb = &g[bi * m * n..(bi + 1) * m * n];
                        let a_blk = &av[bi * m * k..(bi + 1) * m * k];
                        let out = if shared_b {
                            &mut gbv[..]
                        } else {
                            &mut gbv[bi * k * n..(bi + 1) * k * n]
                        };
                        if trans_b {
                            gemm_tn(n, m, k, gb, a_blk, out);
                        } else {
                            gemm_tn(k, m, n, a_blk, gb, out);
                        }
                    }
                }
            }
            Op::Binary { op, a, b, bcast } => {
                let len = g.len();
                if wants(*a) {
                    let ga = slot(grads, nodes, *a);
                    match op {
                        BinaryOp::Add | BinaryOp::Sub => ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y),
                        BinaryOp::Mul => {
                            let bv = &nodes[b.0].value;
                            bcast.for_each(len, |i, j| ga[i] += g[i] * bv[j]);
                        }
                    }
                }
                if wants(*b) {
                    let av = &nodes[a.0].value;
                    let gb = slot(grads, nodes, *b);
                    match op {
                        BinaryOp::Add => bcast.for_each(len, |i, j| gb[j] += g[i]),
                        BinaryOp::Sub => bcast.for_each(len, |i, j| gb[j] -= g[i]),
                        BinaryOp::Mul => bcast.for_each(len, |i, j| gb[j] += g[i] * av[i]),
                    }
                }
            }
            Op::Scale { a, c } => {
                let ga = slot(grads, nodes, *a);
                ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y * *c);
            }
            Op::Activation { kind, a } => {
                let (xv, yv) = (&nodes[a.0].value, &node.value);
                let ga = slot(grads, nodes, *a);
                for i in 0..g.len() {
                    let d = match kind {
                        // The subgradient at exactly zero is taken as zero.
                        Activation::Relu => {
                            if xv[i] > F::zero() {
                                F::one()
                            } else {
                                F::zero()
                            }
                        }
                        Activation::Tanh => F::one() - yv[i] * yv[i],
                        Activation::Sigmoid => yv[i] * (F::one() - yv[i]),
                    };
                    ga[i] += g[i] * d;
                }
            }
            Op::Softmax { a, outer, len, inner } => {
                let y = &node.value;
                let ga = slot(grads, nodes, *a);
                for o in 0..*outer {
                    for i in 0..*inner {
                        let base = o * len * inner + i;
                        let dot = kernels::sum_f64((0..*len).map(|j| g[base + j * inner] * y[base + j * inner]));
                        let dot = F::lit(dot);
                        for j in 0..*len {
                            let idx = base + j * inner;
                            ga[idx] += y[idx] * (g[idx] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = *node.shape.last().expect("layer_norm output has an axis");
                let rows = inv_std.len();
                if wants(*x) {
                    let gv = &nodes[gamma.0].value;
                    let gx = slot(grads, nodes, *x);
                    let df = d as f64;
                    for r in 0..rows {
                        let mut s1 = 0.0f64;
                        let mut s2 = 0.0f64;
                        for c in 0..d {
                            let dh = (g[r * d + c] * gv[c]).as_f64();
                            s1 += dh;
                            s2 += dh * xhat[r * d + c].as_f64();
                        }
                        let inv = inv_std[r].as_f64();
                        for c in 0..d {
                            let dh = (g[r * d + c] * gv[c]).as_f64();
                            let v = inv / df * (df * dh - s1 - xhat[r * d + c].as_f64() * s2);
                            gx[r * d + c] += F::lit(v);
                        }
                    }
                }
                if wants(*gamma) {
                    let gg = slot(grads, nodes, *gamma);
                    for r in 0..rows {
                        for c in 0..d {
                            gg[c] += g[r * d + c] * xhat[r * d + c];
                        }
                    }
                }
                if wants(*beta) {
                    let gb = slot(grads, nodes, *beta);
                    for r in 0..rows {
                        for c in 0..d {
                            gb[c] += g[r * d + c];
                        }
                    }
                }
            }
            Op::Mean { a, outer, len, inner } => {
                let ga = slot(grads, nodes, *a);
                let scale = F::lit(1.0 / *len as f64);
                for o in 0..*outer {
                    for i in 0..*inner {
                        let gi = g[o * inner + i] * scale;
                        for j in 0..*len {
                            ga[o * len * inner + j * inner + i] += gi;
                        }
                    }
                }
            }
            Op::Sum { a } => {
                let ga = slot(grads, nodes, *a);
                ga.iter_mut().for_each(|x| *x += g[0]);
            }
            Op::Reshape { a } => {
                let ga = slot(grads, nodes, *a);
                ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
            }
            Op::Permute { a, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let back = permute_data(g, &node.shape, &inverse);
                let ga = slot(grads, nodes, *a);
                ga.iter_mut().zip(&back).for_each(|(x, &y)| *x += y);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = nodes[logits.0].shape[1];
                let scale = g[0] / F::lit(labels.len() as f64);
                let gl = slot(grads, nodes, *logits);
                for (b, &y) in labels.iter().enumerate() {
                    for c in 0..k {
                        let onehot = if c == y { F::one() } else { F::zero() };
                        gl[b * k + c] += (probs[b * k + c] - onehot) * scale;
                    }
                }
            }
        }
    }

    /// Gradient of a leaf after [`Tape::backward`]. Leaves that require a
    /// gradient but were unreachable from the loss report zeros.
    pub fn grad(&self, v: Var) -> Option<Tensor<F>> {
        let node = self.node(v);
        if !self.consumed || !node.requires_grad {
            return None;
        }
        let data = self.grads[v.0]
            .clone()
            .unwrap_or_else(|| vec![F::zero(); node.value.len()]);
        Some(Tensor::new(&node.shape, data).expect("gradient matches value shape"))
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }
}

fn permute_data<F: Copy>(x: &[F], src: &[usize], perm: &[usize]) -> Vec<F> {
    let rank = src.len();
    let mut src_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        src_strides[i] = src_strides[i + 1] * src[i + 1];
    }
    let dims: Vec<usize> = perm.iter().map(|&p| src[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; rank];
    let mut j = 0usize;
    for _ in 0..x.len() {
        out.push(x[j]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            j += strides[ax];
            if idx[ax] < dims[ax] {
                break;
            }
            j -= strides[ax] * dims[ax];
            idx[ax] = 0;
        }
    }
    out
}

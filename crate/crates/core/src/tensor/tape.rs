//! Reverse-mode gradient tape.
//!
//! Nodes are appended in evaluation order, so the node list is always
//! topologically sorted. [`Tape::backward`] walks it once in reverse,
//! summing gradient contributions over every fan-out path.

use super::{kernels, Scalar, Tensor};
use crate::error::{Result, SnnError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation defined outside this module.
pub trait Backward<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradients for each input given the gradient of the output. Entries
    /// whose `needs[i]` is false may be returned as `None`.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

enum Op<T: Scalar> {
    Leaf,
    MatMul(NodeId, NodeId),
    Linear { x: NodeId, w: NodeId },
    Conv2d { x: NodeId, w: NodeId, stride: usize, pad: usize },
    AvgPool { x: NodeId, k: usize },
    GlobalAvgPool(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulConst { x: NodeId, factor: Tensor<T> },
    Scale { x: NodeId, c: T },
    Concat(NodeId, NodeId),
    Reshape(NodeId),
    MeanAxis0(NodeId),
    Sum(NodeId),
    Custom { inputs: Vec<NodeId>, op: Box<dyn Backward<T>> },
}

impl<T: Scalar> Op<T> {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Linear { .. } => "linear",
            Op::Conv2d { .. } => "conv2d",
            Op::AvgPool { .. } => "avg_pool",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::MulConst { .. } => "mul_const",
            Op::Scale { .. } => "scale",
            Op::Concat(..) => "concat",
            Op::Reshape(_) => "reshape",
            Op::MeanAxis0(_) => "mean_axis0",
            Op::Sum(_) => "sum",
            Op::Custom { op, .. } => op.name(),
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) | Op::Concat(a, b) => vec![*a, *b],
            Op::Linear { x, w } | Op::Conv2d { x, w, .. } => vec![*x, *w],
            Op::AvgPool { x, .. } | Op::MulConst { x, .. } | Op::Scale { x, .. } => vec![*x],
            Op::GlobalAvgPool(x) | Op::Reshape(x) | Op::MeanAxis0(x) | Op::Sum(x) => vec![*x],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a computation for one forward pass. Single-threaded; build one
/// tape per sample and reduce the resulting gradients afterwards.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Name of the operation that produced `id`.
    pub fn op_kind(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.kind()
    }

    pub fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        let needs_grad = op.inputs().iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// A trainable leaf; gradients flow into it.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A constant leaf (data, targets).
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `x · wᵀ` for `x: [N, F]` and `w: [O, F]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (n, f, o) = match (xv.shape(), wv.shape()) {
            ([n, f], [o, f2]) if f == f2 => (*n, *f, *o),
            (sx, sw) => {
                return Err(SnnError::dim(format!(
                    "linear: input {sx:?} incompatible with weight {sw:?}"
                )))
            }
        };
        let mut out = vec![T::zero(); n * o];
        T::gemm(n, f, o, xv.data(), (f, 1), wv.data(), (1, f), T::zero(), &mut out, (o, 1));
        let v = Tensor::new(&[n, o], out)?;
        Ok(self.push(v, Op::Linear { x, w }))
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let v = kernels::conv2d(self.value(x), self.value(w), stride, pad)?;
        Ok(self.push(v, Op::Conv2d { x, w, stride, pad }))
    }

    pub fn avg_pool(&mut self, x: NodeId, k: usize) -> Result<NodeId> {
        let v = kernels::avg_pool(self.value(x), k)?;
        Ok(self.push(v, Op::AvgPool { x, k }))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let v = kernels::global_avg_pool(self.value(x))?;
        Ok(self.push(v, Op::GlobalAvgPool(x)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Elementwise product with a constant tensor (dropout masks).
    pub fn mul_const(&mut self, x: NodeId, factor: Tensor<T>) -> Result<NodeId> {
        let v = self.value(x).zip_map(&factor, |a, b| a * b)?;
        Ok(self.push(v, Op::MulConst { x, factor }))
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> NodeId {
        let v = self.value(x).scale(c);
        self.push(v, Op::Scale { x, c })
    }

    /// Concatenation along axis 1; all other axes must agree.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        let compatible = sa.len() >= 2
            && sa.len() == sb.len()
            && sa[0] == sb[0]
            && sa[2..] == sb[2..];
        if !compatible {
            return Err(SnnError::dim(format!("concat: cannot join {sa:?} and {sb:?} on axis 1")));
        }
        let mut shape = sa.to_vec();
        shape[1] += sb[1];
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for i in 0..sa[0] {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        let v = Tensor::new(&shape, data)?;
        Ok(self.push(v, Op::Concat(a, b)))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    /// Mean over the leading axis: `[T, ..] -> [..]`.
    pub fn mean_axis0(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let steps = *xv.shape().first().unwrap_or(&0);
        if steps == 0 {
            return Err(SnnError::contract("mean over an empty leading axis"));
        }
        let row = xv.row_len();
        let mut acc = vec![T::zero(); row];
        for t in 0..steps {
            for (a, &v) in acc.iter_mut().zip(xv.row(t)) {
                *a += v;
            }
        }
        let norm = T::one() / T::from_usize(steps).unwrap();
        acc.iter_mut().for_each(|a| *a *= norm);
        let v = Tensor::new(&xv.shape()[1..], acc)?;
        Ok(self.push(v, Op::MeanAxis0(x)))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x))
    }

    /// Records an operation whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[NodeId], value: Tensor<T>, op: Box<dyn Backward<T>>) -> NodeId {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        )
    }

    /// Reverse accumulation from a scalar `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(SnnError::contract(format!(
                "backward needs a scalar loss, node has shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let inputs = node.op.inputs();
            let needs: Vec<bool> = inputs.iter().map(|i| self.nodes[i.0].needs_grad).collect();
            let contributions = self.input_grads(node, &g, &needs)?;
            for ((input, need), contrib) in inputs.iter().zip(&needs).zip(contributions) {
                if !need {
                    continue;
                }
                let Some(c) = contrib else { continue };
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&c)?,
                    slot @ None => *slot = Some(c),
                }
            }
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        })
    }

    fn input_grads(&self, node: &Node<T>, g: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let val = |id: NodeId| &self.nodes[id.0].value;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, p) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                let da = needs[0].then(|| {
                    // G · Bᵀ
                    let mut out = vec![T::zero(); m * k];
                    T::gemm(m, p, k, g.data(), (p, 1), bv.data(), (1, p), T::zero(), &mut out, (k, 1));
                    Tensor::new(&[m, k], out)
                });
                let db = needs[1].then(|| {
                    // Aᵀ · G
                    let mut out = vec![T::zero(); k * p];
                    T::gemm(k, m, p, av.data(), (1, k), g.data(), (p, 1), T::zero(), &mut out, (p, 1));
                    Tensor::new(&[k, p], out)
                });
                vec![da.transpose()?, db.transpose()?]
            }
            Op::Linear { x, w } => {
                let (xv, wv) = (val(*x), val(*w));
                let (n, f, o) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
                let dx = needs[0].then(|| {
                    let mut out = vec![T::zero(); n * f];
                    T::gemm(n, o, f, g.data(), (o, 1), wv.data(), (f, 1), T::zero(), &mut out, (f, 1));
                    Tensor::new(&[n, f], out)
                });
                let dw = needs[1].then(|| {
                    let mut out = vec![T::zero(); o * f];
                    T::gemm(o, n, f, g.data(), (1, o), xv.data(), (f, 1), T::zero(), &mut out, (f, 1));
                    Tensor::new(&[o, f], out)
                });
                vec![dx.transpose()?, dw.transpose()?]
            }
            Op::Conv2d { x, w, stride, pad } => {
                let (xv, wv) = (val(*x), val(*w));
                let dx = needs[0]
                    .then(|| kernels::conv2d_backward_input(g, wv, xv.shape(), *stride, *pad))
                    .transpose()?;
                let dw = needs[1]
                    .then(|| kernels::conv2d_backward_weight(xv, g, wv.shape(), *stride, *pad))
                    .transpose()?;
                vec![dx, dw]
            }
            Op::AvgPool { x, k } => vec![Some(kernels::avg_pool_backward(g, *k, val(*x).shape())?)],
            Op::GlobalAvgPool(x) => {
                let shape = val(*x).shape();
                let area = shape[shape.len() - 2] * shape[shape.len() - 1];
                let norm = T::one() / T::from_usize(area).unwrap();
                let data = g
                    .data()
                    .iter()
                    .flat_map(|&v| std::iter::repeat(v * norm).take(area))
                    .collect();
                vec![Some(Tensor::new(shape, data)?)]
            }
            Op::Add(..) => vec![Some(g.clone()), Some(g.clone())],
            Op::Mul(a, b) => {
                let da = needs[0].then(|| g.zip_map(val(*b), |x, y| x * y)).transpose()?;
                let db = needs[1].then(|| g.zip_map(val(*a), |x, y| x * y)).transpose()?;
                vec![da, db]
            }
            Op::MulConst { factor, .. } => vec![Some(g.zip_map(factor, |x, y| x * y)?)],
            Op::Scale { c, .. } => vec![Some(g.scale(*c))],
            Op::Concat(a, b) => {
                let (sa, sb) = (val(*a).shape(), val(*b).shape());
                let (ra, rb): (usize, usize) = (sa[1..].iter().product(), sb[1..].iter().product());
                let mut da = Vec::with_capacity(sa[0] * ra);
                let mut db = Vec::with_capacity(sb[0] * rb);
                for row in g.data().chunks_exact(ra + rb) {
                    da.extend_from_slice(&row[..ra]);
                    db.extend_from_slice(&row[ra..]);
                }
                vec![Some(Tensor::new(sa, da)?), Some(Tensor::new(sb, db)?)]
            }
            Op::Reshape(x) => vec![Some(g.clone().reshape(val(*x).shape())?)],
            Op::MeanAxis0(x) => {
                let shape = val(*x).shape();
                let norm = T::one() / T::from_usize(shape[0]).unwrap();
                let row: Vec<T> = g.data().iter().map(|&v| v * norm).collect();
                let data = (0..shape[0]).flat_map(|_| row.iter().copied()).collect();
                vec![Some(Tensor::new(shape, data)?)]
            }
            Op::Sum(x) => vec![Some(Tensor::full(val(*x).shape(), g.item()?))],
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|&i| val(i)).collect();
                let out = op.backward(&ins, &node.value, g, needs)?;
                if out.len() != inputs.len() {
                    return Err(SnnError::contract(format!(
                        "{} returned {} gradients for {} inputs",
                        op.name(),
                        out.len(),
                        inputs.len()
                    )));
                }
                out
            }
        })
    }
}

/// Result of [`Tape::backward`]: one optional gradient per node.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of the loss with respect to `id`; zeros when no path exists.
    pub fn wrt(&self, id: NodeId) -> Tensor<T> {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }

    pub fn take(&mut self, id: NodeId) -> Tensor<T> {
        self.grads[id.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]))
    }
}

//! Reverse-mode automatic differentiation over the operator set the
//! restorers and losses need.
//!
//! A [`Graph`] is a tape: every operation appends a node holding the forward
//! value and a backward closure. `backward` walks the tape in reverse and
//! accumulates gradients into every reachable node that requires them.
//! Graphs are built and consumed on one logical thread; the tensors they
//! hand out are plain values and may cross threads freely.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::conv;
use crate::tensor::{Parameter, Scalar, Shape, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

type BackFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackFn<T>>,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    bindings: Vec<(String, Var)>,
    by_name: HashMap<String, usize>,
    kink_sig: u64,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), bindings: Vec::new(), by_name: HashMap::new(), kink_sig: 0xcbf2_9ce4_8422_2325 }
    }

    /// Hash of the sign pattern at every kinked activation evaluated so
    /// far. Finite-difference checks compare signatures across probe
    /// points to detect (and skip) non-differentiable crossings.
    pub fn kink_signature(&self) -> u64 {
        self.kink_sig
    }

    fn fold_kink_bits(&mut self, bits: impl Iterator<Item = bool>) {
        let mut word = 0u64;
        let mut count = 0u32;
        for b in bits {
            word = (word << 1) | u64::from(b);
            count += 1;
            if count == 64 {
                self.kink_sig = (self.kink_sig ^ word).wrapping_mul(0x1000_0000_01b3);
                word = 0;
                count = 0;
            }
        }
        self.kink_sig = (self.kink_sig ^ word ^ u64::from(count)).wrapping_mul(0x1000_0000_01b3);
    }

    fn push(&mut self, node: Node<T>) -> Var {
        let id = self.nodes.len();
        self.nodes.push(node);
        Var { id }
    }

    /// A leaf value. Gradients accumulate on it only when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Node { value, grad: None, requires_grad, parents: Vec::new(), backward: None })
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar_const(&mut self, value: T) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Binds a named parameter as a leaf. Binding the same name again
    /// returns the existing node (weight sharing across repeated forward
    /// passes in one graph); frozen parameters never accumulate gradient.
    pub fn bind(&mut self, param: &Parameter<T>) -> Result<Var> {
        if let Some(&i) = self.by_name.get(param.name()) {
            let var = self.bindings[i].1;
            if self.nodes[var.id].value != *param.value() {
                return Err(Error::ParameterRebound { name: param.name().to_string() });
            }
            return Ok(var);
        }
        let var = self.leaf(param.value().clone(), !param.is_frozen());
        self.by_name.insert(param.name().to_string(), self.bindings.len());
        self.bindings.push((param.name().to_string(), var));
        Ok(var)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.id].value
    }

    pub fn shape(&self, var: Var) -> Shape {
        self.nodes[var.id].value.shape()
    }

    pub fn scalar_value(&self, var: Var) -> Result<T> {
        self.nodes[var.id].value.scalar_value()
    }

    /// Accumulated gradient of `var`, if any was produced by `backward`.
    pub fn grad(&self, var: Var) -> Option<&Tensor<T>> {
        self.nodes[var.id].grad.as_ref()
    }

    /// Gradient of a bound parameter; zeros for frozen or unreached ones.
    pub fn param_grad(&self, name: &str) -> Option<Tensor<T>> {
        let &i = self.by_name.get(name)?;
        let var = self.bindings[i].1;
        Some(match &self.nodes[var.id].grad {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.nodes[var.id].value.shape()),
        })
    }

    /// Gradients of every bound parameter, in binding order.
    pub fn param_grads(&self) -> Vec<(String, Tensor<T>)> {
        self.bindings
            .iter()
            .map(|(name, var)| {
                let node = &self.nodes[var.id];
                let g = node
                    .grad
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                (name.clone(), g)
            })
            .collect()
    }

    /// Registers a custom differentiable operation. `backward` receives the
    /// upstream gradient and returns one optional gradient per parent (in
    /// order); entries for parents that do not require gradient are ignored.
    pub fn custom_op(
        &mut self,
        parents: &[Var],
        value: Tensor<T>,
        backward: BackFn<T>,
    ) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.id].requires_grad);
        let parents = parents.iter().map(|p| p.id).collect();
        self.push(Node {
            value,
            grad: None,
            requires_grad,
            parents,
            backward: if requires_grad { Some(backward) } else { None },
        })
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.id].requires_grad
    }

    /// Propagates gradients from a scalar loss back to every reachable node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.shape(loss).is_scalar() {
            return Err(Error::NonScalarLoss { shape: self.shape(loss) });
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.id].grad = Some(Tensor::scalar(T::one()));
        for id in (0..=loss.id).rev() {
            let step = {
                let node = &self.nodes[id];
                match (&node.grad, &node.backward) {
                    (Some(go), Some(back)) => Some((node.parents.clone(), back(go))),
                    _ => None,
                }
            };
            let Some((parents, grads)) = step else { continue };
            for (pid, grad) in parents.into_iter().zip(grads) {
                let Some(grad) = grad else { continue };
                if !self.nodes[pid].requires_grad {
                    continue;
                }
                match &mut self.nodes[pid].grad {
                    Some(acc) => acc.add_assign(&grad),
                    slot => *slot = Some(grad),
                }
            }
        }
        Ok(())
    }

    /// Verifies two vars share a shape, naming the first mismatching dim.
    pub fn check_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Shape> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        for (dim, l, r) in [
            ("batch", sa.batch, sb.batch),
            ("channels", sa.channels, sb.channels),
            ("height", sa.height, sb.height),
            ("width", sa.width, sb.width),
        ] {
            if l != r {
                return Err(Error::DimMismatch { op, dim, left: l, right: r });
            }
        }
        Ok(sa)
    }

    // ----- elementwise operations -----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let (na, nb) = (self.needs(a), self.needs(b));
        Ok(self.custom_op(
            &[a, b],
            value,
            Box::new(move |go| {
                vec![na.then(|| go.clone()), nb.then(|| go.clone())]
            }),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let (na, nb) = (self.needs(a), self.needs(b));
        Ok(self.custom_op(
            &[a, b],
            value,
            Box::new(move |go| {
                vec![na.then(|| go.clone()), nb.then(|| go.map(|g| -g))]
            }),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("mul", a, b)?;
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let value = av.zip_map(&bv, |x, y| x * y);
        let (na, nb) = (self.needs(a), self.needs(b));
        Ok(self.custom_op(
            &[a, b],
            value,
            Box::new(move |go| {
                vec![
                    na.then(|| go.zip_map(&bv, |g, y| g * y)),
                    nb.then(|| go.zip_map(&av, |g, x| g * x)),
                ]
            }),
        ))
    }

    /// Rectified linear unit; the subgradient at exactly 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let av = self.value(a).clone();
        self.fold_kink_bits(av.data().iter().map(|&x| x > T::zero()));
        let value = av.map(|x| if x > T::zero() { x } else { T::zero() });
        let na = self.needs(a);
        self.custom_op(
            &[a],
            value,
            Box::new(move |go| {
                vec![na.then(|| {
                    go.zip_map(&av, |g, x| if x > T::zero() { g } else { T::zero() })
                })]
            }),
        )
    }

    /// Clamp to [0, 1]; gradient is zero wherever the input saturates.
    pub fn clamp01(&mut self, a: Var) -> Var {
        let av = self.value(a).clone();
        self.fold_kink_bits(av.data().iter().flat_map(|&x| [x >= T::zero(), x <= T::one()]));
        let value = av.map(|x| x.max(T::zero()).min(T::one()));
        let na = self.needs(a);
        self.custom_op(
            &[a],
            value,
            Box::new(move |go| {
                vec![na.then(|| {
                    go.zip_map(&av, |g, x| {
                        if x >= T::zero() && x <= T::one() { g } else { T::zero() }
                    })
                })]
            }),
        )
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let na = self.needs(a);
        self.custom_op(
            &[a],
            value,
            Box::new(move |go| vec![na.then(|| go.map(|g| g * factor))]),
        )
    }

    /// Elementwise square root; the subgradient at 0 is 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.sqrt());
        let out = value.clone();
        let na = self.needs(a);
        let half = T::from_f64(0.5);
        self.custom_op(
            &[a],
            value,
            Box::new(move |go| {
                vec![na.then(|| {
                    go.zip_map(&out, |g, y| {
                        if y > T::zero() { g * half / y } else { T::zero() }
                    })
                })]
            }),
        )
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let av = self.value(a).clone();
        let value = av.map(|x| x.ln());
        let na = self.needs(a);
        self.custom_op(
            &[a],
            value,
            Box::new(move |go| vec![na.then(|| go.zip_map(&av, |g, x| g / x))]),
        )
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| T::one() / x);
        let out = value.clone();
        let na = self.needs(a);
        self.custom_op(
            &[a],
            value,
            Box::new(move |go| vec![na.then(|| go.zip_map(&out, |g, y| -g * y * y))]),
        )
    }

    /// Elementwise max with a constant; gradient passes where `x >= c`.
    pub fn max_const(&mut self, a: Var, c: T) -> Var {
        let av = self.value(a).clone();
        self.fold_kink_bits(av.data().iter().map(|&x| x >= c));
        let value = av.map(|x| x.max(c));
        let na = self.needs(a);
        self.custom_op(
            &[a],
            value,
            Box::new(move |go| {
                vec![na.then(|| go.zip_map(&av, |g, x| if x >= c { g } else { T::zero() }))]
            }),
        )
    }

    // ----- structural operations -----

    /// Concatenates along the channel axis; gradient splits back.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        for (dim, l, r) in [
            ("batch", sa.batch, sb.batch),
            ("height", sa.height, sb.height),
            ("width", sa.width, sb.width),
        ] {
            if l != r {
                return Err(Error::DimMismatch { op: "concat_channels", dim, left: l, right: r });
            }
        }
        let out_shape = sa.with_channels(sa.channels + sb.channels);
        let plane = sa.plane();
        let mut data = vec![T::zero(); out_shape.len()];
        {
            let ad = self.value(a).data();
            let bd = self.value(b).data();
            for batch in 0..sa.batch {
                let dst = &mut data[batch * out_shape.channels * plane..][..out_shape.channels * plane];
                dst[..sa.channels * plane]
                    .copy_from_slice(&ad[batch * sa.channels * plane..][..sa.channels * plane]);
                dst[sa.channels * plane..]
                    .copy_from_slice(&bd[batch * sb.channels * plane..][..sb.channels * plane]);
            }
        }
        let value = Tensor::new(out_shape, data)?;
        let (na, nb) = (self.needs(a), self.needs(b));
        Ok(self.custom_op(
            &[a, b],
            value,
            Box::new(move |go| {
                vec![
                    na.then(|| slice_channels_tensor(go, 0, sa.channels)),
                    nb.then(|| slice_channels_tensor(go, sa.channels, sb.channels)),
                ]
            }),
        ))
    }

    /// Extracts `count` channels starting at `start`; gradient zero-pads back.
    pub fn slice_channels(&mut self, a: Var, start: usize, count: usize) -> Result<Var> {
        let sa = self.shape(a);
        if start + count > sa.channels {
            return Err(Error::ChannelMismatch {
                op: "slice_channels",
                expected: sa.channels,
                got: start + count,
            });
        }
        let value = slice_channels_tensor(self.value(a), start, count);
        let na = self.needs(a);
        Ok(self.custom_op(
            &[a],
            value,
            Box::new(move |go| {
                vec![na.then(|| {
                    let mut full = Tensor::zeros(sa);
                    embed_channels(&mut full, go, start);
                    full
                })]
            }),
        ))
    }

    /// Extracts one batch item; gradient zero-pads back into its slot.
    pub fn index_batch(&mut self, a: Var, index: usize) -> Result<Var> {
        let sa = self.shape(a);
        if index >= sa.batch {
            return Err(Error::DimMismatch {
                op: "index_batch",
                dim: "batch",
                left: index,
                right: sa.batch,
            });
        }
        let item = sa.channels * sa.plane();
        let out_shape = sa.with_batch(1);
        let data = self.value(a).data()[index * item..][..item].to_vec();
        let value = Tensor::new(out_shape, data)?;
        let na = self.needs(a);
        Ok(self.custom_op(
            &[a],
            value,
            Box::new(move |go| {
                vec![na.then(|| {
                    let mut full = Tensor::zeros(sa);
                    full.data_mut()[index * item..][..item].copy_from_slice(go.data());
                    full
                })]
            }),
        ))
    }

    // ----- reductions -----

    /// Sum of all elements, with fixed left-to-right accumulation.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        if self.value(a).is_empty() {
            return Err(Error::EmptyTensor { op: "sum" });
        }
        let sa = self.shape(a);
        let value = Tensor::scalar(self.value(a).total());
        let na = self.needs(a);
        Ok(self.custom_op(
            &[a],
            value,
            Box::new(move |go| {
                let g = go.data()[0];
                vec![na.then(|| Tensor::full(sa, g))]
            }),
        ))
    }

    /// Mean of all elements (sum divided by element count).
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        if self.value(a).is_empty() {
            return Err(Error::EmptyTensor { op: "mean" });
        }
        let sa = self.shape(a);
        let n = T::from_f64(sa.len() as f64);
        let value = Tensor::scalar(self.value(a).total() / n);
        let na = self.needs(a);
        Ok(self.custom_op(
            &[a],
            value,
            Box::new(move |go| {
                let g = go.data()[0] / n;
                vec![na.then(|| Tensor::full(sa, g))]
            }),
        ))
    }

    /// Same values, no gradient path through the result.
    pub fn detach(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.leaf(value, false)
    }

    // ----- convolution -----

    /// Stride-1, same-padding square convolution (odd kernel).
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let value = conv::forward(self.value(input), self.value(weight), self.value(bias))?;
        let (ni, nw, nb) = (self.needs(input), self.needs(weight), self.needs(bias));
        let in_t = self.value(input).clone();
        let w_t = self.value(weight).clone();
        let in_shape = in_t.shape();
        let w_shape = w_t.shape();
        Ok(self.custom_op(
            &[input, weight, bias],
            value,
            Box::new(move |go| {
                vec![
                    ni.then(|| conv::grad_input(go, &w_t, in_shape)),
                    nw.then(|| conv::grad_weight(go, &in_t, w_shape)),
                    nb.then(|| conv::grad_bias(go)),
                ]
            }),
        ))
    }
}

fn slice_channels_tensor<T: Scalar>(t: &Tensor<T>, start: usize, count: usize) -> Tensor<T> {
    let s = t.shape();
    let plane = s.plane();
    let out_shape = s.with_channels(count);
    let mut data = vec![T::zero(); out_shape.len()];
    for b in 0..s.batch {
        let src = &t.data()[(b * s.channels + start) * plane..][..count * plane];
        data[b * count * plane..][..count * plane].copy_from_slice(src);
    }
    Tensor::new(out_shape, data).expect("shape volume matches")
}

fn embed_channels<T: Scalar>(dst: &mut Tensor<T>, src: &Tensor<T>, start: usize) {
    let ds = dst.shape();
    let ss = src.shape();
    let plane = ds.plane();
    let data = dst.data_mut();
    for b in 0..ds.batch {
        let dst_off = (b * ds.channels + start) * plane;
        let src_off = b * ss.channels * plane;
        data[dst_off..dst_off + ss.channels * plane]
            .copy_from_slice(&src.data()[src_off..src_off + ss.channels * plane]);
    }
}

//! Tape-based reverse-mode differentiation over [`Tensor`].
//!
//! A [`Graph`] is an ordered record of primitive operations; node inputs
//! always precede the node, so replaying the record front to back
//! reproduces every value and walking it back to front accumulates
//! gradients. Only designated leaves receive gradients; constants (all
//! network parameters during refinement) get none.

use super::conv;
use super::tensor::{
    reduce_to_shape, t_add, t_atanh, t_clamp, t_exp, t_leaky_relu, t_ln, t_mean, t_mul, t_scale,
    t_softplus, t_square, t_sub, t_sum, Scalar, Tensor,
};
use crate::entropy::rate;
use crate::error::{Error, Result};
use crate::quant::{self, SgaNoise};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug)]
enum Op<F: Scalar> {
    Leaf,
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, F),
    LeakyRelu(NodeId, F),
    Square(NodeId),
    Atanh(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Clamp(NodeId, F, F),
    Softplus(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Conv {
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        transposed: bool,
    },
    SgaQuantize {
        input: NodeId,
        tau: F,
        eps: F,
        noise: Box<SgaNoise<F>>,
    },
    /// Per-element Gaussian bit cost of `value` under (mu, sigma).
    GaussianBits {
        value: NodeId,
        mu: NodeId,
        sigma: NodeId,
    },
}

struct Node<F: Scalar> {
    value: Tensor<F>,
    op: Op<F>,
    tracked: bool,
}

pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    fn tracked(&self, id: NodeId) -> bool {
        self.nodes[id.0].tracked
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, tracked: bool) -> NodeId {
        self.nodes.push(Node { value, op, tracked });
        NodeId(self.nodes.len() - 1)
    }

    /// A differentiable leaf (gradient target).
    pub fn leaf(&mut self, mut t: Tensor<F>) -> NodeId {
        t.requires_grad = true;
        self.push(t, Op::Leaf, true)
    }

    /// A constant: values frozen, never receives a gradient.
    pub fn constant(&mut self, t: Tensor<F>) -> NodeId {
        self.push(t, Op::Constant, false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = t_add(self.value(a), self.value(b))?;
        v.check_finite("add")?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(v, Op::Add(a, b), tracked))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = t_sub(self.value(a), self.value(b))?;
        v.check_finite("sub")?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(v, Op::Sub(a, b), tracked))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = t_mul(self.value(a), self.value(b))?;
        v.check_finite("mul")?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(v, Op::Mul(a, b), tracked))
    }

    pub fn scale(&mut self, a: NodeId, c: F) -> Result<NodeId> {
        let v = t_scale(self.value(a), c);
        v.check_finite("scale")?;
        let tracked = self.tracked(a);
        Ok(self.push(v, Op::Scale(a, c), tracked))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: F) -> Result<NodeId> {
        let v = t_leaky_relu(self.value(a), slope);
        v.check_finite("leaky_relu")?;
        let tracked = self.tracked(a);
        Ok(self.push(v, Op::LeakyRelu(a, slope), tracked))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        let v = t_square(self.value(a));
        v.check_finite("square")?;
        let tracked = self.tracked(a);
        Ok(self.push(v, Op::Square(a), tracked))
    }

    pub fn atanh(&mut self, a: NodeId) -> Result<NodeId> {
        let v = t_atanh(self.value(a))?;
        let tracked = self.tracked(a);
        Ok(self.push(v, Op::Atanh(a), tracked))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let v = t_exp(self.value(a))?;
        let tracked = self.tracked(a);
        Ok(self.push(v, Op::Exp(a), tracked))
    }

    pub fn ln(&mut self, a: NodeId) -> Result<NodeId> {
        let v = t_ln(self.value(a))?;
        let tracked = self.tracked(a);
        Ok(self.push(v, Op::Ln(a), tracked))
    }

    pub fn clamp(&mut self, a: NodeId, lo: F, hi: F) -> Result<NodeId> {
        let v = t_clamp(self.value(a), lo, hi);
        let tracked = self.tracked(a);
        Ok(self.push(v, Op::Clamp(a, lo, hi), tracked))
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        let v = t_softplus(self.value(a));
        v.check_finite("softplus")?;
        let tracked = self.tracked(a);
        Ok(self.push(v, Op::Softplus(a), tracked))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(t_sum(self.value(a)));
        v.check_finite("sum")?;
        let tracked = self.tracked(a);
        Ok(self.push(v, Op::Sum(a), tracked))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(t_mean(self.value(a)));
        v.check_finite("mean")?;
        let tracked = self.tracked(a);
        Ok(self.push(v, Op::Mean(a), tracked))
    }

    /// 2-D convolution; `transposed` upsamples by `stride`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        transposed: bool,
    ) -> Result<NodeId> {
        self.value(input).check_finite("conv2d input")?;
        let v = if transposed {
            conv::tconv_forward(self.value(input), self.value(kernel), stride)?
        } else {
            conv::conv_forward(self.value(input), self.value(kernel), stride)?
        };
        v.check_finite("conv2d")?;
        let tracked = self.tracked(input) || self.tracked(kernel);
        Ok(self.push(
            v,
            Op::Conv {
                input,
                kernel,
                stride,
                transposed,
            },
            tracked,
        ))
    }

    /// Differentiable stochastic Gumbel annealing quantization with frozen
    /// noise.
    pub fn sga_quantize(
        &mut self,
        input: NodeId,
        tau: F,
        eps: F,
        noise: SgaNoise<F>,
    ) -> Result<NodeId> {
        let v = quant::sga_forward(self.value(input), tau, eps, &noise)?;
        let tracked = self.tracked(input);
        Ok(self.push(
            v,
            Op::SgaQuantize {
                input,
                tau,
                eps,
                noise: Box::new(noise),
            },
            tracked,
        ))
    }

    /// Per-element bit cost under the Gaussian entropy model.
    pub fn gaussian_bits(&mut self, value: NodeId, mu: NodeId, sigma: NodeId) -> Result<NodeId> {
        let v = rate::bits_tensor(self.value(value), self.value(mu), self.value(sigma))?;
        v.check_finite("gaussian_bits")?;
        let tracked = self.tracked(value) || self.tracked(mu) || self.tracked(sigma);
        Ok(self.push(v, Op::GaussianBits { value, mu, sigma }, tracked))
    }

    /// Reverse-mode gradients of a scalar `loss` for the given leaves.
    pub fn backward(&self, loss: NodeId, leaves: &[NodeId]) -> Result<Vec<Tensor<F>>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::LossNotScalar);
        }
        for &l in leaves {
            match self.nodes[l.0].op {
                Op::Leaf => {}
                _ => return Err(Error::NotALeaf(l.0)),
            }
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(F::one()));

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[i].tracked {
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
            // keep leaf gradients for collection
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }

        let mut out = Vec::with_capacity(leaves.len());
        for &l in leaves {
            match grads[l.0].take() {
                Some(g) => out.push(g),
                None => return Err(Error::NotALeaf(l.0)),
            }
        }
        Ok(out)
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Tensor<F>>],
        target: NodeId,
        contrib: Tensor<F>,
    ) -> Result<()> {
        if !self.tracked(target) {
            return Ok(());
        }
        // undo broadcasting if the forward op expanded this operand
        let contrib = if contrib.shape() != self.value(target).shape() {
            reduce_to_shape(&contrib, self.value(target).shape())
        } else {
            contrib
        };
        match &mut grads[target.0] {
            Some(acc) => {
                let sum = t_add(acc, &contrib)?;
                *acc = sum;
            }
            slot @ None => *slot = Some(contrib),
        }
        Ok(())
    }

    fn propagate(
        &self,
        i: usize,
        g: &Tensor<F>,
        grads: &mut [Option<Tensor<F>>],
    ) -> Result<()> {
        let one = F::one();
        match &self.nodes[i].op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, t_scale(g, -one))?;
            }
            Op::Mul(a, b) => {
                if self.tracked(*a) {
                    self.accumulate(grads, *a, t_mul(g, self.value(*b))?)?;
                }
                if self.tracked(*b) {
                    self.accumulate(grads, *b, t_mul(g, self.value(*a))?)?;
                }
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, t_scale(g, *c))?;
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                let mut d = g.clone();
                for (dv, xv) in d.data_mut().iter_mut().zip(x.data()) {
                    if *xv < F::zero() {
                        *dv = *dv * *slope;
                    }
                }
                self.accumulate(grads, *a, d)?;
            }
            Op::Square(a) => {
                let two = F::of_f64(2.0);
                let d = t_mul(g, &t_scale(self.value(*a), two))?;
                self.accumulate(grads, *a, d)?;
            }
            Op::Atanh(a) => {
                let x = self.value(*a);
                let mut d = g.clone();
                for (dv, xv) in d.data_mut().iter_mut().zip(x.data()) {
                    *dv = *dv / (one - *xv * *xv);
                }
                self.accumulate(grads, *a, d)?;
            }
            Op::Exp(a) => {
                let d = t_mul(g, &self.nodes[i].value)?;
                self.accumulate(grads, *a, d)?;
            }
            Op::Ln(a) => {
                let x = self.value(*a);
                let mut d = g.clone();
                for (dv, xv) in d.data_mut().iter_mut().zip(x.data()) {
                    *dv = *dv / *xv;
                }
                self.accumulate(grads, *a, d)?;
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a);
                let mut d = g.clone();
                for (dv, xv) in d.data_mut().iter_mut().zip(x.data()) {
                    if *xv < *lo || *xv > *hi {
                        *dv = F::zero();
                    }
                }
                self.accumulate(grads, *a, d)?;
            }
            Op::Softplus(a) => {
                let x = self.value(*a);
                let mut d = g.clone();
                for (dv, xv) in d.data_mut().iter_mut().zip(x.data()) {
                    // sigmoid(x)
                    let s = if *xv >= F::zero() {
                        one / (one + (-*xv).exp())
                    } else {
                        let e = xv.exp();
                        e / (one + e)
                    };
                    *dv = *dv * s;
                }
                self.accumulate(grads, *a, d)?;
            }
            Op::Sum(a) => {
                let d = Tensor::full(self.value(*a).shape(), g.item());
                self.accumulate(grads, *a, d)?;
            }
            Op::Mean(a) => {
                let n = F::of_f64(self.value(*a).len() as f64);
                let d = Tensor::full(self.value(*a).shape(), g.item() / n);
                self.accumulate(grads, *a, d)?;
            }
            Op::Conv {
                input,
                kernel,
                stride,
                transposed,
            } => {
                let (inp, kern) = (self.value(*input), self.value(*kernel));
                let k = kern.shape()[2];
                if *transposed {
                    if self.tracked(*input) {
                        let gi = conv::tconv_backward_input(g, kern, *stride, inp.shape())?;
                        self.accumulate(grads, *input, gi)?;
                    }
                    if self.tracked(*kernel) {
                        let gk = conv::tconv_backward_kernel(g, inp, *stride, k)?;
                        self.accumulate(grads, *kernel, gk)?;
                    }
                } else {
                    if self.tracked(*input) {
                        let gi = conv::conv_backward_input(g, kern, *stride, inp.shape())?;
                        self.accumulate(grads, *input, gi)?;
                    }
                    if self.tracked(*kernel) {
                        let gk = conv::conv_backward_kernel(g, inp, *stride, k)?;
                        self.accumulate(grads, *kernel, gk)?;
                    }
                }
            }
            Op::SgaQuantize {
                input,
                tau,
                eps,
                noise,
            } => {
                let d = quant::sga_backward(self.value(*input), g, *tau, *eps, noise);
                self.accumulate(grads, *input, d)?;
            }
            Op::GaussianBits { value, mu, sigma } => {
                let (gy, gmu, gsigma) =
                    rate::bits_backward(self.value(*value), self.value(*mu), self.value(*sigma), g);
                if self.tracked(*value) {
                    self.accumulate(grads, *value, gy)?;
                }
                if self.tracked(*mu) {
                    self.accumulate(grads, *mu, gmu)?;
                }
                if self.tracked(*sigma) {
                    self.accumulate(grads, *sigma, gsigma)?;
                }
            }
        }
        Ok(())
    }

    /// Recompute every node from the recorded operations and check the
    /// results are bit-identical to the stored values.
    pub fn replay_check(&self) -> Result<bool> {
        let mut values: Vec<Tensor<F>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Leaf | Op::Constant => node.value.clone(),
                Op::Add(a, b) => t_add(&values[a.0], &values[b.0])?,
                Op::Sub(a, b) => t_sub(&values[a.0], &values[b.0])?,
                Op::Mul(a, b) => t_mul(&values[a.0], &values[b.0])?,
                Op::Scale(a, c) => t_scale(&values[a.0], *c),
                Op::LeakyRelu(a, s) => t_leaky_relu(&values[a.0], *s),
                Op::Square(a) => t_square(&values[a.0]),
                Op::Atanh(a) => t_atanh(&values[a.0])?,
                Op::Exp(a) => t_exp(&values[a.0])?,
                Op::Ln(a) => t_ln(&values[a.0])?,
                Op::Clamp(a, lo, hi) => t_clamp(&values[a.0], *lo, *hi),
                Op::Softplus(a) => t_softplus(&values[a.0]),
                Op::Sum(a) => Tensor::scalar(t_sum(&values[a.0])),
                Op::Mean(a) => Tensor::scalar(t_mean(&values[a.0])),
                Op::Conv {
                    input,
                    kernel,
                    stride,
                    transposed,
                } => {
                    if *transposed {
                        conv::tconv_forward(&values[input.0], &values[kernel.0], *stride)?
                    } else {
                        conv::conv_forward(&values[input.0], &values[kernel.0], *stride)?
                    }
                }
                Op::SgaQuantize {
                    input,
                    tau,
                    eps,
                    noise,
                } => quant::sga_forward(&values[input.0], *tau, *eps, noise)?,
                Op::GaussianBits { value, mu, sigma } => {
                    rate::bits_tensor(&values[value.0], &values[mu.0], &values[sigma.0])?
                }
            };
            values.push(v);
        }
        Ok(values
            .iter()
            .zip(self.nodes.iter())
            .all(|(v, n)| v.bit_eq(&n.value)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::<f64>::new();
        let y = g.leaf(Tensor::from_fn(&[3, 4], |i| i as f64));
        let loss = g.sum(y).unwrap();
        let grads = g.backward(loss, &[y]).unwrap();
        assert!(grads[0].data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn square_sum_gradient() {
        // sum(x^2) of [3,4] -> 25, grad [6,8]
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        let sq = g.square(x).unwrap();
        let loss = g.sum(sq).unwrap();
        assert_eq!(g.value(loss).item(), 25.0);
        let grads = g.backward(loss, &[x]).unwrap();
        assert_eq!(grads[0].data(), &[6.0, 8.0]);
    }

    #[test]
    fn product_rule_two_leaves() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let b = g.leaf(Tensor::new(vec![3], vec![4.0, 5.0, 6.0]).unwrap());
        let p = g.mul(a, b).unwrap();
        let loss = g.sum(p).unwrap();
        let grads = g.backward(loss, &[a, b]).unwrap();
        assert_eq!(grads[0].data(), &[4.0, 5.0, 6.0]);
        assert_eq!(grads[1].data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn leaf_not_in_graph_is_rejected() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::scalar(1.0));
        let b = g.leaf(Tensor::scalar(2.0));
        let loss = g.square(a).unwrap();
        // b never participated
        assert!(g.backward(loss, &[b]).is_err());
        // a constant is not a leaf either
        let c = g.constant(Tensor::scalar(3.0));
        assert!(g.backward(loss, &[c]).is_err());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::from_fn(&[4], |i| i as f64));
        let y = g.square(a).unwrap();
        assert!(matches!(
            g.backward(y, &[a]),
            Err(Error::LossNotScalar)
        ));
    }

    #[test]
    fn conv_then_relu_matches_finite_differences() {
        let mut rng = SplitMix64::new(42);
        let x0 = Tensor::<f64>::from_fn(&[1, 4, 4], |_| rng.next_range(-1.5, 1.5));
        let k0 = Tensor::<f64>::from_fn(&[2, 1, 3, 3], |_| rng.next_range(-0.8, 0.8));

        let eval = |xt: &Tensor<f64>| -> f64 {
            let mut g = Graph::<f64>::new();
            let x = g.leaf(xt.clone());
            let k = g.constant(k0.clone());
            let c = g.conv2d(x, k, 1, false).unwrap();
            let r = g.leaky_relu(c, 0.2).unwrap();
            let loss = g.sum(r).unwrap();
            g.value(loss).item()
        };

        let mut g = Graph::<f64>::new();
        let x = g.leaf(x0.clone());
        let k = g.constant(k0.clone());
        let c = g.conv2d(x, k, 1, false).unwrap();
        let r = g.leaky_relu(c, 0.2).unwrap();
        let loss = g.sum(r).unwrap();
        let grads = g.backward(loss, &[x]).unwrap();

        let h = 1e-5;
        for i in 0..x0.len() {
            let mut xp = x0.clone();
            xp.data_mut()[i] += h;
            let mut xm = x0.clone();
            xm.data_mut()[i] -= h;
            let fd = (eval(&xp) - eval(&xm)) / (2.0 * h);
            let a = grads[0].data()[i];
            let rel = (a - fd).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-4, "i={i}: analytic {a}, fd {fd}");
        }
    }

    #[test]
    fn params_as_constants_stay_untouched_and_gradless() {
        let mut g = Graph::<f32>::new();
        let param = Tensor::<f32>::from_fn(&[2, 1, 3, 3], |i| i as f32 * 0.1);
        let before: Vec<u32> = param.data().iter().map(|v| v.to_bits()).collect();
        let x = g.leaf(Tensor::from_fn(&[1, 4, 4], |i| i as f32 * 0.05));
        let kid = g.constant(param.clone());
        let c = g.conv2d(x, kid, 2, false).unwrap();
        let loss = g.sum(c).unwrap();
        for _ in 0..3 {
            let _ = g.backward(loss, &[x]).unwrap();
        }
        let after: Vec<u32> = g.value(kid).data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(before, after, "parameter bytes changed");
    }

    #[test]
    fn determinism_and_replay() {
        let build = || {
            let mut g = Graph::<f32>::new();
            let x = g.leaf(Tensor::from_fn(&[1, 6, 6], |i| (i as f32 * 0.37).sin()));
            let k = g.constant(Tensor::from_fn(&[2, 1, 3, 3], |i| (i as f32 * 0.11).cos()));
            let c = g.conv2d(x, k, 2, false).unwrap();
            let r = g.leaky_relu(c, 0.2).unwrap();
            let s = g.square(r).unwrap();
            let m = g.mean(s).unwrap();
            let v = g.value(m).item();
            (g, v)
        };
        let (g1, v1) = build();
        let (_g2, v2) = build();
        assert_eq!(v1.to_bits(), v2.to_bits());
        assert!(g1.replay_check().unwrap());
    }

    #[test]
    fn broadcast_bias_gradient_reduces() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[2, 3, 3], |i| i as f64));
        let b = g.leaf(Tensor::new(vec![2, 1, 1], vec![0.5, -0.5]).unwrap());
        let y = g.add(x, b).unwrap();
        let loss = g.sum(y).unwrap();
        let grads = g.backward(loss, &[b]).unwrap();
        assert_eq!(grads[0].shape(), &[2, 1, 1]);
        assert_eq!(grads[0].data(), &[9.0, 9.0]);
    }
}

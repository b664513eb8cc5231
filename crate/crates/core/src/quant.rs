//! Quantization operators: hard rounding for the bitstream and stochastic
//! Gumbel annealing (SGA) for differentiable refinement.
//!
//! SGA treats the two integer candidates around `y` as a two-way categorical.
//! Candidate logits are `-atanh(distance)/tau`; a Gumbel-softmax with the
//! same temperature turns them into soft weights, so the output is a convex
//! combination of `floor(y)` and `floor(y)+1` that concentrates on nearest
//! rounding as `tau -> 0`.

use crate::autodiff::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng;

/// Temperature schedule for SGA.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SgaSchedule {
    pub tau0: f64,
    pub decay: f64,
    pub tau_min: f64,
    pub epsilon: f64,
}

impl Default for SgaSchedule {
    fn default() -> Self {
        SgaSchedule {
            tau0: 0.5,
            decay: 0.999,
            tau_min: 0.05,
            epsilon: 1e-4,
        }
    }
}

impl SgaSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau0 > self.tau_min && self.tau_min > 0.0) {
            return Err(Error::Config(format!(
                "need tau0 > tau_min > 0, got {} / {}",
                self.tau0, self.tau_min
            )));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::Config(format!("decay must be in (0,1): {}", self.decay)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::Config(format!(
                "epsilon must be in (0,0.5): {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn tau_at(&self, iteration: usize) -> f64 {
        (self.tau0 * self.decay.powi(iteration as i32)).max(self.tau_min)
    }
}

/// Frozen Gumbel draws for one SGA application, one pair per element.
#[derive(Debug, Clone)]
pub struct SgaNoise<F: Scalar> {
    pub floor_g: Tensor<F>,
    pub ceil_g: Tensor<F>,
}

/// Draw Gumbel noise from the counter stream keyed by (frame, iteration).
/// The same key always yields the same draws, independent of call order.
pub fn gumbel_noise<F: Scalar>(
    seed: u64,
    frame: u64,
    iteration: u64,
    shape: &[usize],
) -> SgaNoise<F> {
    let key = frame.wrapping_mul(0x1_0000_0001).wrapping_add(iteration);
    let draw = |cand: u64, i: usize| -> F {
        let u = rng::counter_unit_open(seed, key, cand, i as u64);
        F::of_f64(-(-u.ln()).ln())
    };
    SgaNoise {
        floor_g: Tensor::from_fn(shape, |i| draw(0, i)),
        ceil_g: Tensor::from_fn(shape, |i| draw(1, i)),
    }
}

fn stable_sigmoid<F: Scalar>(d: F) -> F {
    if d >= F::zero() {
        F::one() / (F::one() + (-d).exp())
    } else {
        let e = d.exp();
        e / (F::one() + e)
    }
}

fn clamp<F: Scalar>(x: F, lo: F, hi: F) -> F {
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}

/// Soft quantization. Output is elementwise in `[floor(y), floor(y)+1]`.
pub fn sga_forward<F: Scalar>(
    y: &Tensor<F>,
    tau: F,
    eps: F,
    noise: &SgaNoise<F>,
) -> Result<Tensor<F>> {
    if tau <= F::zero() {
        return Err(Error::Config(format!("sga tau must be > 0, got {:?}", tau)));
    }
    if noise.floor_g.shape() != y.shape() || noise.ceil_g.shape() != y.shape() {
        return Err(Error::Shape {
            op: "sga_quantize",
            detail: "noise shape differs from input".into(),
        });
    }
    let one = F::one();
    let mut out = Vec::with_capacity(y.len());
    for (i, &v) in y.data().iter().enumerate() {
        let f = v.floor();
        let r = v - f;
        let rf = clamp(r, eps, one - eps);
        let rc = clamp(one - r, eps, one - eps);
        let lf = -rf.atanh() / tau;
        let lc = -rc.atanh() / tau;
        let gf = noise.floor_g.data()[i];
        let gc = noise.ceil_g.data()[i];
        let d = ((lc + gc) - (lf + gf)) / tau;
        let w = stable_sigmoid(d);
        out.push(f + w);
    }
    let t = Tensor::new(y.shape().to_vec(), out)?;
    t.check_finite("sga_quantize")?;
    Ok(t)
}

/// Gradient of `sga_forward` with respect to `y`, with the noise frozen.
pub fn sga_backward<F: Scalar>(
    y: &Tensor<F>,
    grad_out: &Tensor<F>,
    tau: F,
    eps: F,
    noise: &SgaNoise<F>,
) -> Tensor<F> {
    let one = F::one();
    let mut out = Vec::with_capacity(y.len());
    for (i, &v) in y.data().iter().enumerate() {
        let f = v.floor();
        let r = v - f;
        let rf = clamp(r, eps, one - eps);
        let rc = clamp(one - r, eps, one - eps);
        let lf = -rf.atanh() / tau;
        let lc = -rc.atanh() / tau;
        let gf = noise.floor_g.data()[i];
        let gc = noise.ceil_g.data()[i];
        let d = ((lc + gc) - (lf + gf)) / tau;
        let w = stable_sigmoid(d);
        // d(logit)/dy, zero where the clamp is active
        let pass_f = r > eps && r < one - eps;
        let pass_c = (one - r) > eps && (one - r) < one - eps;
        let dlf = if pass_f {
            -(one / (one - rf * rf)) / tau
        } else {
            F::zero()
        };
        let dlc = if pass_c {
            (one / (one - rc * rc)) / tau
        } else {
            F::zero()
        };
        let dd = (dlc - dlf) / tau;
        out.push(grad_out.data()[i] * w * (one - w) * dd);
    }
    Tensor::new(y.shape().to_vec(), out).expect("same shape")
}

/// Nearest-integer rounding, ties away from zero.
pub fn hard_round<F: Scalar>(y: &Tensor<F>) -> Tensor<F> {
    y.map(|v| v.round())
}

//! Differentiable rate estimation under the conditional Gaussian model.
//!
//! Each element is modelled as a unit-width bin of a Gaussian: the bit cost
//! of value `v` under (mu, sigma) is `-log2(Phi((v-mu+0.5)/sigma) -
//! Phi((v-mu-0.5)/sigma))`, with the likelihood floored at 2^-16 to mirror
//! the one-quantum floor of the coder's CDF tables.

use crate::autodiff::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const LIKELIHOOD_FLOOR: f64 = 1.0 / 65536.0; // 2^-16
pub const MAX_BITS_PER_ELEMENT: f64 = 16.0;
pub const SIGMA_MIN: f64 = 0.01;
pub const SIGMA_MAX: f64 = 64.0;

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.3989422804014327;

/// Gaussian mass of the unit bin centred `delta` away from the mean.
/// Uses the complementary form in the tails to keep relative precision.
pub fn gaussian_bin_mass(delta: f64, sigma: f64) -> f64 {
    let a = (delta + 0.5) / sigma;
    let b = (delta - 0.5) / sigma;
    let p = if b > 0.0 {
        0.5 * (libm::erfc(b * INV_SQRT2) - libm::erfc(a * INV_SQRT2))
    } else if a < 0.0 {
        0.5 * (libm::erfc(-a * INV_SQRT2) - libm::erfc(-b * INV_SQRT2))
    } else {
        0.5 * (libm::erf(a * INV_SQRT2) - libm::erf(b * INV_SQRT2))
    };
    p.max(0.0)
}

/// Bit cost of one element, floored likelihood.
pub fn element_bits(delta: f64, sigma: f64) -> f64 {
    let p = gaussian_bin_mass(delta, sigma).max(LIKELIHOOD_FLOOR);
    -p.log2()
}

fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Per-element gradient of `element_bits` in (d/d delta, d/d sigma).
/// Zero in the floored region.
pub fn element_bits_grad(delta: f64, sigma: f64) -> (f64, f64) {
    let p = gaussian_bin_mass(delta, sigma);
    if p <= LIKELIHOOD_FLOOR {
        return (0.0, 0.0);
    }
    let a = (delta + 0.5) / sigma;
    let b = (delta - 0.5) / sigma;
    let ln2 = std::f64::consts::LN_2;
    let d_delta = -(normal_pdf(a) - normal_pdf(b)) / (sigma * p * ln2);
    let d_sigma = (a * normal_pdf(a) - b * normal_pdf(b)) / (sigma * p * ln2);
    (d_delta, d_sigma)
}

fn check_shapes<F: Scalar>(y: &Tensor<F>, mu: &Tensor<F>, sigma: &Tensor<F>) -> Result<()> {
    if y.shape() != mu.shape() || y.shape() != sigma.shape() {
        return Err(Error::Shape {
            op: "estimate_rate",
            detail: format!(
                "y {:?}, mu {:?}, sigma {:?}",
                y.shape(),
                mu.shape(),
                sigma.shape()
            ),
        });
    }
    Ok(())
}

/// Per-element bit costs. `y` may be soft (during refinement) or integer.
pub fn bits_tensor<F: Scalar>(
    y: &Tensor<F>,
    mu: &Tensor<F>,
    sigma: &Tensor<F>,
) -> Result<Tensor<F>> {
    check_shapes(y, mu, sigma)?;
    let mut out = Vec::with_capacity(y.len());
    for i in 0..y.len() {
        let s = sigma.data()[i].as_f64();
        if s < SIGMA_MIN - 1e-9 {
            return Err(Error::Internal(format!(
                "sigma {} below clamp {} at element {}",
                s, SIGMA_MIN, i
            )));
        }
        let delta = y.data()[i].as_f64() - mu.data()[i].as_f64();
        out.push(F::of_f64(element_bits(delta, s)));
    }
    Tensor::new(y.shape().to_vec(), out)
}

/// Gradients of the summed bit cost, weighted by `grad_out` per element.
/// Returns (d/dy, d/dmu, d/dsigma).
pub fn bits_backward<F: Scalar>(
    y: &Tensor<F>,
    mu: &Tensor<F>,
    sigma: &Tensor<F>,
    grad_out: &Tensor<F>,
) -> (Tensor<F>, Tensor<F>, Tensor<F>) {
    let n = y.len();
    let mut gy = Vec::with_capacity(n);
    let mut gmu = Vec::with_capacity(n);
    let mut gsigma = Vec::with_capacity(n);
    for i in 0..n {
        let delta = y.data()[i].as_f64() - mu.data()[i].as_f64();
        let s = sigma.data()[i].as_f64();
        let (dd, ds) = element_bits_grad(delta, s);
        let g = grad_out.data()[i].as_f64();
        gy.push(F::of_f64(g * dd));
        gmu.push(F::of_f64(-g * dd));
        gsigma.push(F::of_f64(g * ds));
    }
    let shape = y.shape().to_vec();
    (
        Tensor::new(shape.clone(), gy).expect("shape"),
        Tensor::new(shape.clone(), gmu).expect("shape"),
        Tensor::new(shape, gsigma).expect("shape"),
    )
}

/// Estimated bitrate of a tensor under the Gaussian model.
#[derive(Debug, Clone)]
pub struct RateEstimate {
    pub total_bits: f64,
    pub per_element_bits: Option<Tensor<f32>>,
}

/// Public rate-estimation entry point for the f32 pipeline.
pub fn estimate_rate(
    y_hat: &Tensor<f32>,
    mu: &Tensor<f32>,
    sigma: &Tensor<f32>,
    keep_per_element: bool,
) -> Result<RateEstimate> {
    let bits = bits_tensor(y_hat, mu, sigma)?;
    let total_bits = bits.data().iter().map(|&b| b as f64).sum();
    Ok(RateEstimate {
        total_bits,
        per_element_bits: if keep_per_element { Some(bits) } else { None },
    })
}

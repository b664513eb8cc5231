//! Quantized per-element CDF tables for the range coder.
//!
//! Symbols live in `[-L, L]` plus one escape slot; escaped values are coded
//! raw as 16 bits. Every slot keeps at least one quantum of the 2^16 total,
//! matching the likelihood floor of the rate estimate.

use super::rate::gaussian_bin_mass;
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

pub const CDF_PRECISION_BITS: u32 = 16;
pub const CDF_TOTAL: u32 = 1 << CDF_PRECISION_BITS;
pub const DEFAULT_SYMBOL_BOUND: i32 = 64;

#[derive(Debug, Clone)]
pub struct CdfTable {
    bound: i32,
    n_slots: usize,
    n_elements: usize,
    /// `n_slots + 1` cumulative frequencies (0 .. 65536) per distinct table:
    /// one table per element, or a single shared one.
    cums: Vec<u32>,
    shared: bool,
}

impl CdfTable {
    /// One Gaussian table per element of (mu, sigma).
    pub fn build(mu: &Tensor<f32>, sigma: &Tensor<f32>, bound: i32) -> Result<CdfTable> {
        if mu.shape() != sigma.shape() {
            return Err(Error::Shape {
                op: "build_cdf_table",
                detail: format!("mu {:?} vs sigma {:?}", mu.shape(), sigma.shape()),
            });
        }
        let n_slots = (2 * bound + 1) as usize + 1; // symbols + escape
        let n_elements = mu.len();
        let mut cums = Vec::with_capacity(n_elements * (n_slots + 1));
        let mut freqs = vec![0u32; n_slots];
        for e in 0..n_elements {
            let m = mu.data()[e] as f64;
            let s = (sigma.data()[e] as f64).max(1e-6);
            build_element_freqs(m, s, bound, &mut freqs);
            push_cums(&mut cums, &freqs);
        }
        Ok(CdfTable {
            bound,
            n_slots,
            n_elements,
            cums,
            shared: false,
        })
    }

    /// A single table shared by every element (degenerate and synthetic
    /// coder scenarios).
    pub fn build_scalar(mu: f32, sigma: f32, bound: i32, n_elements: usize) -> Result<CdfTable> {
        let n_slots = (2 * bound + 1) as usize + 1;
        let mut freqs = vec![0u32; n_slots];
        build_element_freqs(mu as f64, (sigma as f64).max(1e-6), bound, &mut freqs);
        let mut cums = Vec::with_capacity(n_slots + 1);
        push_cums(&mut cums, &freqs);
        Ok(CdfTable {
            bound,
            n_slots,
            n_elements,
            cums,
            shared: true,
        })
    }

    pub fn bound(&self) -> i32 {
        self.bound
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    pub fn escape_slot(&self) -> usize {
        self.n_slots - 1
    }

    /// Cumulative frequencies of one element, length `n_slots + 1`.
    pub fn cums(&self, element: usize) -> &[u32] {
        let w = self.n_slots + 1;
        if self.shared {
            &self.cums
        } else {
            &self.cums[element * w..(element + 1) * w]
        }
    }

    /// Slot index of a value (escape slot when out of range).
    pub fn slot_of_value(&self, v: i32) -> usize {
        if v < -self.bound || v > self.bound {
            self.escape_slot()
        } else {
            (v + self.bound) as usize
        }
    }

    /// Integer value of a regular slot; `None` for the escape slot.
    pub fn value_of_slot(&self, slot: usize) -> Option<i32> {
        if slot == self.escape_slot() {
            None
        } else {
            Some(slot as i32 - self.bound)
        }
    }
}

fn push_cums(cums: &mut Vec<u32>, freqs: &[u32]) {
    cums.push(0);
    let mut acc = 0u32;
    for &f in freqs {
        acc += f;
        cums.push(acc);
    }
    debug_assert_eq!(acc, CDF_TOTAL);
}

/// Integerized Gaussian frequencies for one element: every slot >= 1,
/// total exactly 2^16.
fn build_element_freqs(mu: f64, sigma: f64, bound: i32, freqs: &mut [u32]) {
    let n_slots = freqs.len();
    let escape = n_slots - 1;
    for f in freqs.iter_mut() {
        *f = 0;
    }
    // bins further than ~6 sigma hold less than one quantum; skip them
    let halfwidth = 6.0 * sigma + 2.0;
    let lo = ((mu - halfwidth).floor() as i64).max(-bound as i64) as i32;
    let hi = ((mu + halfwidth).ceil() as i64).min(bound as i64) as i32;
    let mut covered = 0.0f64;
    for k in lo..=hi {
        let mass = gaussian_bin_mass(k as f64 - mu, sigma);
        covered += mass;
        freqs[(k + bound) as usize] = (mass * CDF_TOTAL as f64) as u32;
    }
    // tail mass beyond [-bound, bound] goes to the escape slot
    let tail = (1.0 - covered).max(0.0);
    freqs[escape] = (tail * CDF_TOTAL as f64) as u32;

    let mut total: u64 = 0;
    for f in freqs.iter_mut() {
        if *f == 0 {
            *f = 1;
        }
        total += *f as u64;
    }
    // deterministic rebalance to land exactly on 2^16
    if total < CDF_TOTAL as u64 {
        let deficit = (CDF_TOTAL as u64 - total) as u32;
        let argmax = max_index(freqs);
        freqs[argmax] += deficit;
    } else {
        let mut excess = (total - CDF_TOTAL as u64) as u32;
        while excess > 0 {
            let argmax = max_index(freqs);
            let take = excess.min(freqs[argmax] - 1);
            debug_assert!(take > 0, "cannot rebalance CDF");
            freqs[argmax] -= take;
            excess -= take;
        }
    }
}

fn max_index(freqs: &[u32]) -> usize {
    let mut best = 0usize;
    for (i, &f) in freqs.iter().enumerate() {
        if f > freqs[best] {
            best = i;
        }
    }
    best
}

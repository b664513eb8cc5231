//! Rate estimation under the conditional Gaussian model and a bit-exact
//! byte-oriented range coder, so every experiment runs through a real
//! encode/decode.

pub mod cdf;
pub mod range;
pub mod rate;

pub use cdf::{CdfTable, CDF_PRECISION_BITS, CDF_TOTAL, DEFAULT_SYMBOL_BOUND};
pub use range::{range_decode, range_decode_verified, range_encode, RangeDecoder, RangeEncoder};
pub use rate::{estimate_rate, RateEstimate, SIGMA_MAX, SIGMA_MIN};

//! Seeded synthetic sequences for desk-scale experiments.
//!
//! Frames are built from periodic two-octave value noise so a horizontal
//! pan wraps seamlessly: frame t of a pan sequence is exactly frame t-1
//! circularly shifted by one pixel. The generator is pure integer-seeded
//! SplitMix64 arithmetic evaluated in f64, so output is platform
//! independent; the construction is documented in docs/FORMATS.md.

use super::color::FrameRgb;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    /// Static texture translated 1 px/frame with wrap.
    Pan,
    /// Static texture plus low-amplitude temporal noise.
    Noise,
    /// Pan plus temporal noise.
    Mixed,
}

impl std::str::FromStr for Motion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pan" => Ok(Motion::Pan),
            "noise" => Ok(Motion::Noise),
            "mixed" => Ok(Motion::Mixed),
            other => Err(Error::Config(format!("unknown motion '{}'", other))),
        }
    }
}

const OCTAVES: [(usize, f64); 2] = [(16, 0.35), (4, 0.15)];
const TEMPORAL_CELL: usize = 8;
const TEMPORAL_AMPLITUDE: f64 = 0.02;

/// Periodic bilinear value noise at integer pixel (x, y).
/// Lattice values are uniform in [-1, 1], keyed by (stream, gy*gw+gx).
fn value_noise(seed: u64, stream: u64, cell: usize, w: usize, h: usize, x: usize, y: usize) -> f64 {
    let gw = w / cell;
    let gh = h / cell;
    let gx0 = x / cell;
    let gy0 = y / cell;
    let fx = (x % cell) as f64 / cell as f64;
    let fy = (y % cell) as f64 / cell as f64;
    let gx1 = (gx0 + 1) % gw;
    let gy1 = (gy0 + 1) % gh;
    let lat = |gx: usize, gy: usize| -> f64 {
        let u = rng::counter_unit_open(seed, stream, (gy * gw + gx) as u64, 0);
        2.0 * u - 1.0
    };
    let v00 = lat(gx0, gy0);
    let v10 = lat(gx1, gy0);
    let v01 = lat(gx0, gy1);
    let v11 = lat(gx1, gy1);
    let top = v00 + (v10 - v00) * fx;
    let bot = v01 + (v11 - v01) * fx;
    top + (bot - top) * fy
}

fn base_texture_value(seed: u64, channel: usize, w: usize, h: usize, x: usize, y: usize) -> f64 {
    let mut v = 0.5;
    for (oct, &(cell, amp)) in OCTAVES.iter().enumerate() {
        let stream = (channel * OCTAVES.len() + oct) as u64 + 1;
        v += amp * value_noise(seed, stream, cell, w, h, x, y);
    }
    v
}

/// Deterministic synthetic sequence. Dimensions must be divisible by 16.
pub fn gen_synthetic(
    seed: u64,
    width: usize,
    height: usize,
    frames: usize,
    motion: Motion,
) -> Result<Vec<FrameRgb>> {
    if width % 16 != 0 || height % 16 != 0 || width == 0 || height == 0 {
        return Err(Error::Config(format!(
            "dimensions must be divisible by 16, got {}x{}",
            width, height
        )));
    }
    // base texture in f64, sampled at integer pixels
    let mut base = vec![0.0f64; 3 * height * width];
    for c in 0..3 {
        for y in 0..height {
            for x in 0..width {
                base[(c * height + y) * width + x] = base_texture_value(seed, c, width, height, x, y);
            }
        }
    }
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let shift = match motion {
            Motion::Pan | Motion::Mixed => t % width,
            Motion::Noise => 0,
        };
        let temporal = matches!(motion, Motion::Noise | Motion::Mixed);
        let mut data = vec![0.0f32; 3 * height * width];
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    let sx = (x + width - shift) % width;
                    let mut v = base[(c * height + y) * width + sx];
                    if temporal {
                        // per-frame noise field keyed by (frame, channel)
                        let stream = 1000 + (t * 3 + c) as u64;
                        v += TEMPORAL_AMPLITUDE
                            * value_noise(seed, stream, TEMPORAL_CELL, width, height, x, y);
                    }
                    data[(c * height + y) * width + x] = v.clamp(0.0, 1.0) as f32;
                }
            }
        }
        out.push(Tensor::new(vec![3, height, width], data)?);
    }
    Ok(out)
}

//! BT.709 limited-range conversion between 8-bit YCbCr and the internal
//! RGB float representation in [0, 1]. Chroma is upsampled to 4:4:4 by
//! nearest neighbour and downsampled by 2x2 averaging.

use super::y4m::{RawVideo, YuvFrame};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const KR: f64 = 0.2126;
pub const KB: f64 = 0.0722;
pub const KG: f64 = 1.0 - KR - KB;

/// Internal pixel representation: a `[3, H, W]` tensor in [0, 1].
pub type FrameRgb = Tensor<f32>;

/// One pixel, limited-range bytes to RGB floats (not yet clamped).
#[inline]
pub fn ycbcr_to_rgb(y8: u8, cb8: u8, cr8: u8) -> (f64, f64, f64) {
    let y = (y8 as f64 - 16.0) / 219.0;
    let pb = (cb8 as f64 - 128.0) / 224.0;
    let pr = (cr8 as f64 - 128.0) / 224.0;
    let r = y + 2.0 * (1.0 - KR) * pr;
    let b = y + 2.0 * (1.0 - KB) * pb;
    let g = (y - KR * r - KB * b) / KG;
    (r, g, b)
}

/// One pixel, RGB floats to limited-range bytes.
#[inline]
pub fn rgb_to_ycbcr(r: f64, g: f64, b: f64) -> (u8, u8, u8) {
    let y = KR * r + KG * g + KB * b;
    let pb = 0.5 * (b - y) / (1.0 - KB);
    let pr = 0.5 * (r - y) / (1.0 - KR);
    let yq = (16.0 + 219.0 * y).round().clamp(16.0, 235.0) as u8;
    let cbq = (128.0 + 224.0 * pb).round().clamp(16.0, 240.0) as u8;
    let crq = (128.0 + 224.0 * pr).round().clamp(16.0, 240.0) as u8;
    (yq, cbq, crq)
}

/// Convert one frame of a 4:2:0 stream to clamped RGB.
pub fn to_rgb_bt709(raw: &RawVideo, frame_index: usize) -> Result<FrameRgb> {
    if frame_index >= raw.frames.len() {
        return Err(Error::FrameIndex {
            index: frame_index,
            count: raw.frames.len(),
        });
    }
    let (w, h) = (raw.width, raw.height);
    let cw = w / 2;
    let f = &raw.frames[frame_index];
    let mut data = vec![0.0f32; 3 * h * w];
    for yy in 0..h {
        for xx in 0..w {
            let ci = (yy / 2) * cw + xx / 2; // nearest-neighbour chroma
            let (r, g, b) = ycbcr_to_rgb(f.y[yy * w + xx], f.cb[ci], f.cr[ci]);
            data[yy * w + xx] = r.clamp(0.0, 1.0) as f32;
            data[h * w + yy * w + xx] = g.clamp(0.0, 1.0) as f32;
            data[2 * h * w + yy * w + xx] = b.clamp(0.0, 1.0) as f32;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Convert RGB frames to a 4:2:0 limited-range stream.
pub fn frames_to_yuv420(frames: &[FrameRgb]) -> Result<RawVideo> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Config("no frames to convert".into()))?;
    let (h, w) = (first.shape()[1], first.shape()[2]);
    let mut video = RawVideo {
        width: w,
        height: h,
        frames: Vec::with_capacity(frames.len()),
    };
    for t in frames {
        if t.shape() != [3, h, w] {
            return Err(Error::Shape {
                op: "frames_to_yuv420",
                detail: format!("{:?}", t.shape()),
            });
        }
        let d = t.data();
        let mut y = vec![0u8; h * w];
        let mut pbs = vec![0.0f64; h * w];
        let mut prs = vec![0.0f64; h * w];
        for yy in 0..h {
            for xx in 0..w {
                let r = d[yy * w + xx] as f64;
                let g = d[h * w + yy * w + xx] as f64;
                let b = d[2 * h * w + yy * w + xx] as f64;
                let yv = KR * r + KG * g + KB * b;
                y[yy * w + xx] = (16.0 + 219.0 * yv).round().clamp(16.0, 235.0) as u8;
                pbs[yy * w + xx] = 0.5 * (b - yv) / (1.0 - KB);
                prs[yy * w + xx] = 0.5 * (r - yv) / (1.0 - KR);
            }
        }
        let (ch, cw) = (h / 2, w / 2);
        let mut cb = vec![0u8; ch * cw];
        let mut cr = vec![0u8; ch * cw];
        for cy in 0..ch {
            for cx in 0..cw {
                let mut pb = 0.0;
                let mut pr = 0.0;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    pb += pbs[(2 * cy + dy) * w + 2 * cx + dx];
                    pr += prs[(2 * cy + dy) * w + 2 * cx + dx];
                }
                cb[cy * cw + cx] = (128.0 + 224.0 * pb / 4.0).round().clamp(16.0, 240.0) as u8;
                cr[cy * cw + cx] = (128.0 + 224.0 * pr / 4.0).round().clamp(16.0, 240.0) as u8;
            }
        }
        video.frames.push(YuvFrame { y, cb, cr });
    }
    Ok(video)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn flat_video(y: u8, cb: u8, cr: u8) -> RawVideo {
        RawVideo {
            width: 16,
            height: 16,
            frames: vec![YuvFrame {
                y: vec![y; 256],
                cb: vec![cb; 64],
                cr: vec![cr; 64],
            }],
        }
    }

    #[test]
    fn limited_range_black() {
        let rgb = to_rgb_bt709(&flat_video(16, 128, 128), 0).unwrap();
        assert!(rgb.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn limited_range_white() {
        let rgb = to_rgb_bt709(&flat_video(235, 128, 128), 0).unwrap();
        assert!(rgb.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn out_of_range_index() {
        assert!(to_rgb_bt709(&flat_video(16, 128, 128), 1).is_err());
    }

    #[test]
    fn matches_direct_matrix_oracle() {
        // independent 64-bit evaluation of the BT.709 inverse matrix
        let v = flat_video(126, 128, 200);
        let rgb = to_rgb_bt709(&v, 0).unwrap();
        let y: f64 = (126.0 - 16.0) / 219.0;
        let pr: f64 = (200.0 - 128.0) / 224.0;
        let r_exp = (y + 1.5748 * pr).clamp(0.0, 1.0);
        let g_exp = (y - (KR * 1.5748 / KG) * pr).clamp(0.0, 1.0);
        let b_exp = y.clamp(0.0, 1.0);
        let (h, w) = (16, 16);
        for p in 0..h * w {
            assert!((rgb.data()[p] as f64 - r_exp).abs() < 1e-6);
            assert!((rgb.data()[h * w + p] as f64 - g_exp).abs() < 1e-6);
            assert!((rgb.data()[2 * h * w + p] as f64 - b_exp).abs() < 1e-6);
        }
    }

    #[test]
    fn round_trip_within_two_quanta() {
        // in-gamut colors: start from valid YCbCr, go to RGB and back
        let mut rng = SplitMix64::new(31);
        for _ in 0..2000 {
            let y8 = 16 + (rng.next_u64() % 220) as u8;
            let cb8 = 16 + (rng.next_u64() % 225) as u8;
            let cr8 = 16 + (rng.next_u64() % 225) as u8;
            let (r, g, b) = ycbcr_to_rgb(y8, cb8, cr8);
            if !(0.0..=1.0).contains(&r) || !(0.0..=1.0).contains(&g) || !(0.0..=1.0).contains(&b)
            {
                continue; // out of RGB gamut
            }
            let (y2, cb2, cr2) = rgb_to_ycbcr(r, g, b);
            let (r2, g2, b2) = ycbcr_to_rgb(y2, cb2, cr2);
            let tol = 2.0 / 255.0;
            assert!((r - r2).abs() < tol, "{r} vs {r2}");
            assert!((g - g2).abs() < tol, "{g} vs {g2}");
            assert!((b - b2).abs() < tol, "{b} vs {b2}");
        }
    }
}

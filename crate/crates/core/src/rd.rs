//! Frame-level rate-distortion control: the hierarchical per-frame weight
//! cycle and the dynamic beta adjustment driven by inter-frame quality
//! fluctuation.

/// Hierarchical quality weights over a 4-frame miniGOP.
pub const MINIGOP_WEIGHTS: [f64; 4] = [0.5, 1.2, 0.5, 0.9];
pub const MINIGOP: usize = 4;

/// Frame weight w_t: intra frames use 1.0, P-frames cycle through the
/// miniGOP pattern by global frame index.
pub fn frame_weight(frame_index: usize, intra_period: usize) -> f64 {
    if frame_index % intra_period == 0 {
        1.0
    } else {
        MINIGOP_WEIGHTS[frame_index % MINIGOP]
    }
}

/// Dynamic rate-weight controller: beta_t = beta0 - step * sign(delta_q),
/// where delta_q is the PSNR change from the previous frame.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct BetaController {
    pub beta0: f64,
    pub step: f64,
    /// Flips the update direction (kept for empirical comparison; the
    /// direction of the published rule is the default).
    pub flip_sign: bool,
}

impl Default for BetaController {
    fn default() -> Self {
        BetaController {
            beta0: 1.0,
            step: 0.2,
            flip_sign: false,
        }
    }
}

impl BetaController {
    pub fn update_beta(&self, delta_q: f64) -> f64 {
        let sign = if delta_q > 0.0 {
            1.0
        } else if delta_q < 0.0 {
            -1.0
        } else {
            0.0
        };
        let dir = if self.flip_sign { -1.0 } else { 1.0 };
        self.beta0 - dir * self.step * sign
    }
}

/// Quality bookkeeping for the two-pass scheme: the first-pass PSNR of the
/// current frame is compared with the final PSNR of the previous frame.
#[derive(Debug, Clone, Default)]
pub struct QualityTracker {
    prev_final_psnr: Option<f64>,
}

impl QualityTracker {
    pub fn new() -> Self {
        QualityTracker {
            prev_final_psnr: None,
        }
    }

    /// Delta against the previous frame, if one exists.
    pub fn delta_q(&self, first_pass_psnr: f64) -> Option<f64> {
        self.prev_final_psnr.map(|p| first_pass_psnr - p)
    }

    pub fn record_final(&mut self, psnr: f64) {
        self.prev_final_psnr = Some(psnr);
    }
}

/// The scalar RD loss `beta * R + w * lambda * D`.
pub fn rd_loss(rate_bits: f64, dist_mse: f64, w_t: f64, lambda: f64, beta_t: f64) -> f64 {
    beta_t * rate_bits + w_t * lambda * dist_mse
}

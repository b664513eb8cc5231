//! The frozen conditional codec model: parameter container, seeded
//! initialization, checksumming, and the versioned model file.
//!
//! Initialization is structured rather than purely random: the first three
//! channels of the analysis path carry a scaled copy of the RGB input, the
//! synthesis path starts as bilinear upsampling, and the entropy head
//! starts as a temporal-residual predictor. Pretraining then improves all
//! parameters jointly from this working starting point.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Architecture geometry and the rate-point grid.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ArchConfig {
    pub frame_channels: usize,
    pub mid_channels: usize,
    pub latent_channels: usize,
    pub ctx_channels: usize,
    pub kernel_a: usize,
    pub kernel_c: usize,
    pub kernel_e: usize,
    /// Rate-distortion multipliers, ascending.
    pub lambda_grid: Vec<u32>,
    /// Index of the lambda the model is pretrained at.
    pub lambda_train_index: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            frame_channels: 3,
            mid_channels: 32,
            latent_channels: 48,
            ctx_channels: 48,
            kernel_a: 5,
            kernel_c: 3,
            kernel_e: 3,
            lambda_grid: vec![680, 1360, 3040, 6720],
            lambda_train_index: 1,
        }
    }
}

impl ArchConfig {
    /// Spatial downsampling factor from frame to latent grid.
    pub const DOWNSAMPLE: usize = 4;

    pub fn lambda(&self, rate_point: usize) -> f64 {
        self.lambda_grid[rate_point] as f64
    }

    /// Quantization step of a rate point: unit at the training lambda,
    /// coarser below it, finer above (step ~ 1/sqrt(lambda)).
    pub fn q_step(&self, rate_point: usize) -> f32 {
        let base = self.lambda_grid[self.lambda_train_index] as f64;
        (base / self.lambda_grid[rate_point] as f64).sqrt() as f32
    }

    pub fn n_rate_points(&self) -> usize {
        self.lambda_grid.len()
    }
}

/// All learnable tensors. Convolution kernels are `[C_out, C_in, k, k]`;
/// transposed kernels are `[C_in, C_out, k, k]`; biases are `[C, 1, 1]`.
#[derive(Debug, Clone)]
pub struct Params {
    pub a1_w: Tensor<f32>,
    pub a1_b: Tensor<f32>,
    pub a2_w: Tensor<f32>,
    pub a2_b: Tensor<f32>,
    pub s1_w: Tensor<f32>,
    pub s1_b: Tensor<f32>,
    pub s2_w: Tensor<f32>,
    pub s2_b: Tensor<f32>,
    pub c1_w: Tensor<f32>,
    pub c1_b: Tensor<f32>,
    pub c2_w: Tensor<f32>,
    pub c2_b: Tensor<f32>,
    pub c3_w: Tensor<f32>,
    pub c3_b: Tensor<f32>,
    pub e1_w: Tensor<f32>,
    pub e1_b: Tensor<f32>,
    pub e2m_w: Tensor<f32>,
    pub e2m_b: Tensor<f32>,
    pub e2s_w: Tensor<f32>,
    pub e2s_b: Tensor<f32>,
}

pub const PARAM_NAMES: [&str; 20] = [
    "a1_w", "a1_b", "a2_w", "a2_b", "s1_w", "s1_b", "s2_w", "s2_b", "c1_w", "c1_b", "c2_w",
    "c2_b", "c3_w", "c3_b", "e1_w", "e1_b", "e2m_w", "e2m_b", "e2s_w", "e2s_b",
];

impl Params {
    pub fn tensors(&self) -> [&Tensor<f32>; 20] {
        [
            &self.a1_w, &self.a1_b, &self.a2_w, &self.a2_b, &self.s1_w, &self.s1_b, &self.s2_w,
            &self.s2_b, &self.c1_w, &self.c1_b, &self.c2_w, &self.c2_b, &self.c3_w, &self.c3_b,
            &self.e1_w, &self.e1_b, &self.e2m_w, &self.e2m_b, &self.e2s_w, &self.e2s_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<f32>; 20] {
        [
            &mut self.a1_w, &mut self.a1_b, &mut self.a2_w, &mut self.a2_b, &mut self.s1_w,
            &mut self.s1_b, &mut self.s2_w, &mut self.s2_b, &mut self.c1_w, &mut self.c1_b,
            &mut self.c2_w, &mut self.c2_b, &mut self.c3_w, &mut self.c3_b, &mut self.e1_w,
            &mut self.e1_b, &mut self.e2m_w, &mut self.e2m_b, &mut self.e2s_w, &mut self.e2s_b,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct CodecModel {
    pub arch: ArchConfig,
    pub params: Params,
    pub version: u32,
    frozen: bool,
    checksum: u64,
}

pub const MODEL_MAGIC: &[u8; 4] = b"DCDM";
pub const MODEL_VERSION: u32 = 1;

/// Scale carried by the identity channels of the two-stage analysis path.
const STAGE_GAIN: f64 = 2.8284271247461903; // sqrt(8)

impl CodecModel {
    /// Seeded structured initialization; the model starts unfrozen.
    pub fn init(arch: ArchConfig, seed: u64) -> CodecModel {
        let mut rng = SplitMix64::new(seed);
        let a = &arch;
        let (fc, mid, lat, ctx) = (
            a.frame_channels,
            a.mid_channels,
            a.latent_channels,
            a.ctx_channels,
        );
        let (ka, kc, ke) = (a.kernel_a, a.kernel_c, a.kernel_e);

        let rand_kernel = |rng: &mut SplitMix64, co: usize, ci: usize, k: usize| {
            let bound = 1.0 / ((ci * k * k) as f64).sqrt();
            Tensor::from_fn(&[co, ci, k, k], |_| rng.next_range(-bound, bound) as f32)
        };
        let zeros_bias = |c: usize| Tensor::<f32>::zeros(&[c, 1, 1]);

        let damp = |t: Tensor<f32>, f: f32| t.map(|v| v * f);
        let mut a1_w = rand_kernel(&mut rng, mid, fc, ka);
        let mut a2_w = rand_kernel(&mut rng, lat, mid, ka);
        // synthesis and entropy randoms start small: the identity channels
        // carry large activations and would otherwise drown the init codec
        let mut s1_w = damp(rand_kernel(&mut rng, lat, mid, ka), 0.05); // [C_in, C_out, k, k]
        let mut s2_w = damp(rand_kernel(&mut rng, mid, fc, ka), 0.05);
        let mut c1_w = rand_kernel(&mut rng, ctx, fc, kc);
        let mut c2_w = rand_kernel(&mut rng, ctx, ctx, kc);
        let mut c3_w = rand_kernel(&mut rng, ctx, ctx, kc);
        let mut e1_w = damp(rand_kernel(&mut rng, ctx, ctx, ke), 0.1);
        let mut e2m_w = damp(rand_kernel(&mut rng, lat, ctx, ke), 0.1);
        let e2s_w = damp(rand_kernel(&mut rng, lat, ctx, ke), 0.1);

        // analysis: channels 0..3 subsample the RGB planes with gain sqrt(8)
        set_center_taps(&mut a1_w, fc, STAGE_GAIN);
        set_center_taps(&mut a2_w, fc, STAGE_GAIN);
        // context path mirrors the analysis gain so ctx ~ analysis(prev)
        set_center_taps(&mut c1_w, fc, 1.0);
        set_center_taps(&mut c2_w, fc, STAGE_GAIN);
        set_center_taps(&mut c3_w, fc, STAGE_GAIN);
        // entropy head: identity pass, then mu = ctx + predicted analysis
        set_center_taps(&mut e1_w, ctx, 1.0);
        set_center_taps(&mut e2m_w, fc, 2.0);
        for c in fc..lat {
            set_center_tap(&mut e2m_w, c, c, 1.0);
        }
        // synthesis: bilinear upsampling on the identity channels
        set_bilinear(&mut s1_w, fc, 1.0 / STAGE_GAIN);
        set_bilinear(&mut s2_w, fc, 1.0 / STAGE_GAIN);

        // raw sigma bias softplus^-1(1) so sigma starts at 1.0
        let raw_sigma0 = (std::f64::consts::E - 1.0).ln() as f32;
        let e2s_b = Tensor::full(&[lat, 1, 1], raw_sigma0);

        let params = Params {
            a1_w,
            a1_b: zeros_bias(mid),
            a2_w,
            a2_b: zeros_bias(lat),
            s1_w,
            s1_b: zeros_bias(mid),
            s2_w,
            s2_b: zeros_bias(fc),
            c1_w,
            c1_b: zeros_bias(ctx),
            c2_w,
            c2_b: zeros_bias(ctx),
            c3_w,
            c3_b: zeros_bias(ctx),
            e1_w,
            e1_b: zeros_bias(ctx),
            e2m_w,
            e2m_b: zeros_bias(lat),
            e2s_w,
            e2s_b,
        };
        CodecModel {
            arch,
            params,
            version: MODEL_VERSION,
            frozen: false,
            checksum: 0,
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    /// Freeze the parameters and record their checksum.
    pub fn freeze(&mut self) {
        self.checksum = self.compute_checksum();
        self.frozen = true;
    }

    /// FNV-1a over the little-endian parameter payload in declaration order.
    pub fn compute_checksum(&self) -> u64 {
        let mut h = Fnv1a::new();
        for t in self.params.tensors() {
            for v in t.data() {
                h.update(&v.to_le_bytes());
            }
        }
        h.finish()
    }

    pub fn require_frozen(&self) -> Result<()> {
        if self.frozen {
            Ok(())
        } else {
            Err(Error::ModelNotFrozen)
        }
    }

    /// Verify the parameter bytes still match the recorded checksum.
    pub fn verify_integrity(&self) -> Result<()> {
        if !self.frozen {
            return Err(Error::ModelNotFrozen);
        }
        let now = self.compute_checksum();
        if now != self.checksum {
            return Err(Error::Internal(format!(
                "frozen parameters changed: checksum {:#x} -> {:#x}",
                self.checksum, now
            )));
        }
        Ok(())
    }

    // ---- model file ----

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.require_frozen()?;
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        push_u32(&mut out, self.version);
        let a = &self.arch;
        for v in [
            a.frame_channels,
            a.mid_channels,
            a.latent_channels,
            a.ctx_channels,
            a.kernel_a,
            a.kernel_c,
            a.kernel_e,
            a.lambda_train_index,
        ] {
            push_u32(&mut out, v as u32);
        }
        push_u32(&mut out, a.lambda_grid.len() as u32);
        for &l in &a.lambda_grid {
            push_u32(&mut out, l);
        }
        out.extend_from_slice(&self.checksum.to_le_bytes());
        for t in self.params.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<CodecModel> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4)?;
        if magic != MODEL_MAGIC {
            return Err(Error::BadModelFile("bad magic".into()));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::BadModelFile(format!("unsupported version {}", version)));
        }
        let arch = ArchConfig {
            frame_channels: r.u32()? as usize,
            mid_channels: r.u32()? as usize,
            latent_channels: r.u32()? as usize,
            ctx_channels: r.u32()? as usize,
            kernel_a: r.u32()? as usize,
            kernel_c: r.u32()? as usize,
            kernel_e: r.u32()? as usize,
            lambda_train_index: r.u32()? as usize,
            lambda_grid: Vec::new(),
        };
        let mut arch = arch;
        let n_lambda = r.u32()? as usize;
        if n_lambda == 0 || n_lambda > 64 || arch.lambda_train_index >= n_lambda {
            return Err(Error::BadModelFile("bad lambda grid".into()));
        }
        for _ in 0..n_lambda {
            arch.lambda_grid.push(r.u32()?);
        }
        let checksum = r.u64()?;
        // rebuild an init-shaped model, then overwrite every tensor
        let mut model = CodecModel::init(arch, 0);
        for t in model.params.tensors_mut() {
            for v in t.data_mut() {
                let b = r.take(4)?;
                *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            }
        }
        if !r.is_empty() {
            return Err(Error::BadModelFile("trailing bytes".into()));
        }
        model.frozen = true;
        model.checksum = model.compute_checksum();
        if model.checksum != checksum {
            return Err(Error::BadModelFile(format!(
                "checksum mismatch: header {:#x}, payload {:#x}",
                checksum, model.checksum
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<CodecModel> {
        CodecModel::from_bytes(&std::fs::read(path)?)
    }
}

/// Write `gain` at the center tap of (out=c, in=c) for the first `n`
/// channels, clearing the rest of those windows.
fn set_center_taps(w: &mut Tensor<f32>, n: usize, gain: f64) {
    for c in 0..n {
        set_center_tap(w, c, c, gain);
    }
}

fn set_center_tap(w: &mut Tensor<f32>, co: usize, ci: usize, gain: f64) {
    let k = w.shape()[3];
    let ci_n = w.shape()[1];
    let base = (co * ci_n + ci) * k * k;
    for t in 0..k * k {
        w.data_mut()[base + t] = 0.0;
    }
    w.data_mut()[base + (k / 2) * k + k / 2] = gain as f32;
}

/// Bilinear factor-2 upsampling kernel on (in=c, out=c), transposed layout.
fn set_bilinear(w: &mut Tensor<f32>, n: usize, gain: f64) {
    let k = w.shape()[3];
    let co_n = w.shape()[1];
    let c_half = (k / 2) as f64;
    let taps: Vec<f64> = (0..k)
        .map(|i| (1.0 - (i as f64 - c_half).abs() / 2.0).max(0.0))
        .collect();
    for c in 0..n {
        let base = (c * co_n + c) * k * k;
        for ky in 0..k {
            for kx in 0..k {
                w.data_mut()[base + ky * k + kx] = (taps[ky] * taps[kx] * gain) as f32;
            }
        }
    }
}

struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }
    fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100_0000_01b3);
        }
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

/// FNV-1a of arbitrary bytes (shared with bitstream integrity checks).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = Fnv1a::new();
    h.update(bytes);
    h.finish()
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::BadModelFile("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }
    fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let a = CodecModel::init(ArchConfig::default(), 42);
        let b = CodecModel::init(ArchConfig::default(), 42);
        for (ta, tb) in a.params.tensors().iter().zip(b.params.tensors().iter()) {
            assert!(ta.bit_eq(tb));
        }
        let c = CodecModel::init(ArchConfig::default(), 43);
        assert_ne!(a.compute_checksum(), c.compute_checksum());
    }

    #[test]
    fn q_step_grid() {
        let arch = ArchConfig::default();
        assert!((arch.q_step(1) - 1.0).abs() < 1e-7);
        assert!(arch.q_step(0) > 1.0); // coarser at low lambda
        assert!(arch.q_step(3) < arch.q_step(2));
    }

    #[test]
    fn file_round_trip() {
        let mut m = CodecModel::init(ArchConfig::default(), 7);
        m.freeze();
        let bytes = m.to_bytes().unwrap();
        let m2 = CodecModel::from_bytes(&bytes).unwrap();
        assert_eq!(m.checksum(), m2.checksum());
        for (ta, tb) in m.params.tensors().iter().zip(m2.params.tensors().iter()) {
            assert!(ta.bit_eq(tb));
        }
    }

    #[test]
    fn corrupted_file_is_rejected() {
        let mut m = CodecModel::init(ArchConfig::default(), 7);
        m.freeze();
        let mut bytes = m.to_bytes().unwrap();
        let n = bytes.len();
        bytes[n - 3] ^= 1;
        assert!(CodecModel::from_bytes(&bytes).is_err());
    }

    #[test]
    fn unfrozen_model_cannot_serialize() {
        let m = CodecModel::init(ArchConfig::default(), 7);
        assert!(m.to_bytes().is_err());
    }
}

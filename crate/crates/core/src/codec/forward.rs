//! Forward paths of the codec, built on the autodiff graph so that
//! inference, refinement, and pretraining all run the exact same primitive
//! sequence (bit-identical values wherever inputs coincide).
//!
//! Conditioning structure:
//!   context  ctx = g_c(prev_reconstruction)          (zeros for intra)
//!   encode   z   = (g_a(x) + ctx) / q_step
//!   entropy  mu_z, sigma_z from g_e(ctx), scaled by 1/q_step
//!   decode   x_hat = clamp01(g_s(q_step * z_hat - ctx))

use super::model::CodecModel;
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::entropy::rate::{SIGMA_MAX, SIGMA_MIN};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f32 = 0.2;

/// The continuous latent of one frame, already in the quantization domain
/// of its rate point (unit bins).
#[derive(Debug, Clone)]
pub struct Latent {
    pub data: Tensor<f32>,
    pub frame_index: usize,
    pub rate_point: usize,
}

/// Graph handles of the model parameters (constants during inference and
/// refinement, leaves during pretraining).
pub struct ModelNodes {
    pub a1_w: NodeId,
    pub a1_b: NodeId,
    pub a2_w: NodeId,
    pub a2_b: NodeId,
    pub s1_w: NodeId,
    pub s1_b: NodeId,
    pub s2_w: NodeId,
    pub s2_b: NodeId,
    pub c1_w: NodeId,
    pub c1_b: NodeId,
    pub c2_w: NodeId,
    pub c2_b: NodeId,
    pub c3_w: NodeId,
    pub c3_b: NodeId,
    pub e1_w: NodeId,
    pub e1_b: NodeId,
    pub e2m_w: NodeId,
    pub e2m_b: NodeId,
    pub e2s_w: NodeId,
    pub e2s_b: NodeId,
}

/// Insert all parameters into a graph.
pub fn model_nodes(g: &mut Graph<f32>, model: &CodecModel, as_leaves: bool) -> ModelNodes {
    let p = &model.params;
    let mut ins = |t: &Tensor<f32>| {
        if as_leaves {
            g.leaf(t.clone())
        } else {
            g.constant(t.clone())
        }
    };
    ModelNodes {
        a1_w: ins(&p.a1_w),
        a1_b: ins(&p.a1_b),
        a2_w: ins(&p.a2_w),
        a2_b: ins(&p.a2_b),
        s1_w: ins(&p.s1_w),
        s1_b: ins(&p.s1_b),
        s2_w: ins(&p.s2_w),
        s2_b: ins(&p.s2_b),
        c1_w: ins(&p.c1_w),
        c1_b: ins(&p.c1_b),
        c2_w: ins(&p.c2_w),
        c2_b: ins(&p.c2_b),
        c3_w: ins(&p.c3_w),
        c3_b: ins(&p.c3_b),
        e1_w: ins(&p.e1_w),
        e1_b: ins(&p.e1_b),
        e2m_w: ins(&p.e2m_w),
        e2m_b: ins(&p.e2m_b),
        e2s_w: ins(&p.e2s_w),
        e2s_b: ins(&p.e2s_b),
    }
}

fn conv_layer(
    g: &mut Graph<f32>,
    x: NodeId,
    w: NodeId,
    b: NodeId,
    stride: usize,
    transposed: bool,
) -> Result<NodeId> {
    let c = g.conv2d(x, w, stride, transposed)?;
    g.add(c, b)
}

/// Temporal context features from the previous reconstruction.
pub fn context_node(g: &mut Graph<f32>, m: &ModelNodes, prev: NodeId) -> Result<NodeId> {
    let h1 = conv_layer(g, prev, m.c1_w, m.c1_b, 1, false)?;
    let h1 = g.leaky_relu(h1, LEAKY_SLOPE)?;
    let h2 = conv_layer(g, h1, m.c2_w, m.c2_b, 2, false)?;
    let h2 = g.leaky_relu(h2, LEAKY_SLOPE)?;
    conv_layer(g, h2, m.c3_w, m.c3_b, 2, false)
}

/// Analysis transform plus additive context, scaled into the quantization
/// domain of the rate point.
pub fn encode_node(
    g: &mut Graph<f32>,
    m: &ModelNodes,
    x: NodeId,
    ctx: NodeId,
    q_step: f32,
) -> Result<NodeId> {
    let h = conv_layer(g, x, m.a1_w, m.a1_b, 2, false)?;
    let h = g.leaky_relu(h, LEAKY_SLOPE)?;
    let feat = conv_layer(g, h, m.a2_w, m.a2_b, 2, false)?;
    let y = g.add(feat, ctx)?;
    g.scale(y, 1.0 / q_step)
}

/// Entropy parameters (mu, sigma) in the quantization domain.
pub fn entropy_nodes(
    g: &mut Graph<f32>,
    m: &ModelNodes,
    ctx: NodeId,
    q_step: f32,
) -> Result<(NodeId, NodeId)> {
    let h = conv_layer(g, ctx, m.e1_w, m.e1_b, 1, false)?;
    let h = g.leaky_relu(h, LEAKY_SLOPE)?;
    let mu_raw = conv_layer(g, h, m.e2m_w, m.e2m_b, 1, false)?;
    let sig_raw = conv_layer(g, h, m.e2s_w, m.e2s_b, 1, false)?;
    let sig_sp = g.softplus(sig_raw)?;
    let sig = g.clamp(sig_sp, SIGMA_MIN as f32, SIGMA_MAX as f32)?;
    let mu_z = g.scale(mu_raw, 1.0 / q_step)?;
    let sig_scaled = g.scale(sig, 1.0 / q_step)?;
    let sig_z = g.clamp(sig_scaled, SIGMA_MIN as f32, SIGMA_MAX as f32)?;
    Ok((mu_z, sig_z))
}

/// Synthesis from a (hard or soft) latent in the quantization domain.
pub fn decode_node(
    g: &mut Graph<f32>,
    m: &ModelNodes,
    z_hat: NodeId,
    ctx: NodeId,
    q_step: f32,
) -> Result<NodeId> {
    let y = g.scale(z_hat, q_step)?;
    let u = g.sub(y, ctx)?;
    let h = conv_layer(g, u, m.s1_w, m.s1_b, 2, true)?;
    let h = g.leaky_relu(h, LEAKY_SLOPE)?;
    let x = conv_layer(g, h, m.s2_w, m.s2_b, 2, true)?;
    g.clamp(x, 0.0, 1.0)
}

// ---- direct (inference) wrappers over the graph path ----

fn check_frame_shape(model: &CodecModel, x: &Tensor<f32>, op: &'static str) -> Result<()> {
    let s = x.shape();
    if s.len() != 3 || s[0] != model.arch.frame_channels {
        return Err(Error::Shape {
            op,
            detail: format!("want [{}, H, W], got {:?}", model.arch.frame_channels, s),
        });
    }
    if s[1] % 16 != 0 || s[2] % 16 != 0 {
        return Err(Error::Shape {
            op,
            detail: format!("frame dims must be divisible by 16, got {:?}", s),
        });
    }
    Ok(())
}

fn check_ctx_shape(model: &CodecModel, ctx: &Tensor<f32>, op: &'static str) -> Result<()> {
    let s = ctx.shape();
    if s.len() != 3 || s[0] != model.arch.ctx_channels {
        return Err(Error::Shape {
            op,
            detail: format!("bad context shape {:?}", s),
        });
    }
    Ok(())
}

/// All-zero context for intra frames.
pub fn zero_context(model: &CodecModel, frame_h: usize, frame_w: usize) -> Tensor<f32> {
    let d = CodecModel::arch_downsample();
    Tensor::zeros(&[model.arch.ctx_channels, frame_h / d, frame_w / d])
}

/// Context features of the previous reconstruction (deterministic).
pub fn extract_context(model: &CodecModel, prev_recon: &Tensor<f32>) -> Result<Tensor<f32>> {
    model.require_frozen()?;
    check_frame_shape(model, prev_recon, "extract_context")?;
    let mut g = Graph::new();
    let m = model_nodes(&mut g, model, false);
    let prev = g.constant(prev_recon.clone());
    let ctx = context_node(&mut g, &m, prev)?;
    Ok(g.value(ctx).clone())
}

/// Encode one frame into its continuous latent at a rate point.
pub fn encode_frame(
    model: &CodecModel,
    x: &Tensor<f32>,
    ctx: &Tensor<f32>,
    frame_index: usize,
    rate_point: usize,
) -> Result<Latent> {
    model.require_frozen()?;
    check_frame_shape(model, x, "encode_frame")?;
    check_ctx_shape(model, ctx, "encode_frame")?;
    let mut g = Graph::new();
    let m = model_nodes(&mut g, model, false);
    let xn = g.constant(x.clone());
    let cn = g.constant(ctx.clone());
    let z = encode_node(&mut g, &m, xn, cn, model.arch.q_step(rate_point))?;
    Ok(Latent {
        data: g.value(z).clone(),
        frame_index,
        rate_point,
    })
}

/// Entropy parameters for a context at a rate point.
pub fn predict_entropy_params(
    model: &CodecModel,
    ctx: &Tensor<f32>,
    rate_point: usize,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    model.require_frozen()?;
    check_ctx_shape(model, ctx, "predict_entropy_params")?;
    let mut g = Graph::new();
    let m = model_nodes(&mut g, model, false);
    let cn = g.constant(ctx.clone());
    let (mu, sig) = entropy_nodes(&mut g, &m, cn, model.arch.q_step(rate_point))?;
    Ok((g.value(mu).clone(), g.value(sig).clone()))
}

/// Reconstruct a frame from a latent. The same path runs whether or not
/// refinement happened upstream; there is no refinement flag.
pub fn decode_frame(model: &CodecModel, latent: &Latent, ctx: &Tensor<f32>) -> Result<Tensor<f32>> {
    model.require_frozen()?;
    check_ctx_shape(model, ctx, "decode_frame")?;
    if latent.data.shape() != ctx.shape() {
        return Err(Error::Shape {
            op: "decode_frame",
            detail: format!(
                "latent {:?} vs context {:?}",
                latent.data.shape(),
                ctx.shape()
            ),
        });
    }
    let mut g = Graph::new();
    let m = model_nodes(&mut g, model, false);
    let zn = g.constant(latent.data.clone());
    let cn = g.constant(ctx.clone());
    let x = decode_node(&mut g, &m, zn, cn, model.arch.q_step(latent.rate_point))?;
    Ok(g.value(x).clone())
}

impl CodecModel {
    pub fn arch_downsample() -> usize {
        super::model::ArchConfig::DOWNSAMPLE
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::model::ArchConfig;
    use crate::quant::hard_round;

    fn frozen_model() -> CodecModel {
        let mut m = CodecModel::init(ArchConfig::default(), 1234);
        m.freeze();
        m
    }

    fn test_frame(seed: u64) -> Tensor<f32> {
        crate::video::gen_synthetic(seed, 64, 64, 1, crate::video::Motion::Pan)
            .unwrap()
            .remove(0)
    }

    #[test]
    fn shape_contracts() {
        let m = frozen_model();
        let x = test_frame(5);
        let ctx = zero_context(&m, 64, 64);
        assert_eq!(ctx.shape(), &[48, 16, 16]);
        let lat = encode_frame(&m, &x, &ctx, 0, 1).unwrap();
        assert_eq!(lat.data.shape(), &[48, 16, 16]);
        let (mu, sig) = predict_entropy_params(&m, &ctx, 1).unwrap();
        assert_eq!(mu.shape(), &[48, 16, 16]);
        assert_eq!(sig.shape(), &[48, 16, 16]);
        let got = extract_context(&m, &x).unwrap();
        assert_eq!(got.shape(), &[48, 16, 16]);
    }

    #[test]
    fn determinism_across_calls() {
        let m = frozen_model();
        let x = test_frame(6);
        let ctx = extract_context(&m, &x).unwrap();
        let ctx2 = extract_context(&m, &x).unwrap();
        assert!(ctx.bit_eq(&ctx2));
        let a = encode_frame(&m, &x, &ctx, 0, 2).unwrap();
        let b = encode_frame(&m, &x, &ctx, 0, 2).unwrap();
        assert!(a.data.bit_eq(&b.data));
    }

    #[test]
    fn sigma_lower_bound_holds() {
        let m = frozen_model();
        for rp in 0..4 {
            for src in [zero_context(&m, 64, 64), extract_context(&m, &test_frame(9)).unwrap()] {
                let (_, sig) = predict_entropy_params(&m, &src, rp).unwrap();
                assert!(sig.data().iter().all(|&s| s >= 0.01 && s <= 64.0));
            }
        }
    }

    #[test]
    fn decode_of_rounded_encode_is_in_range() {
        let m = frozen_model();
        let x = test_frame(7);
        let ctx = zero_context(&m, 64, 64);
        let lat = encode_frame(&m, &x, &ctx, 0, 1).unwrap();
        let hard = Latent {
            data: hard_round(&lat.data),
            frame_index: 0,
            rate_point: 1,
        };
        let recon = decode_frame(&m, &hard, &ctx).unwrap();
        assert!(recon.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let r1 = decode_frame(&m, &hard, &ctx).unwrap();
        assert!(recon.bit_eq(&r1));
    }

    #[test]
    fn structured_init_reconstructs_roughly() {
        // the identity/bilinear init must already behave like a transform
        // codec: intra reconstruction at the training rate point should be
        // far better than a mid-gray guess (~12 dB on this content)
        let m = frozen_model();
        let x = test_frame(8);
        let ctx = zero_context(&m, 64, 64);
        let lat = encode_frame(&m, &x, &ctx, 0, 1).unwrap();
        let hard = Latent {
            data: hard_round(&lat.data),
            frame_index: 0,
            rate_point: 1,
        };
        let recon = decode_frame(&m, &hard, &ctx).unwrap();
        let q = crate::metrics::psnr(&x, &recon).unwrap();
        assert!(q > 20.0, "init codec PSNR {}", q);
    }

    #[test]
    fn zero_frame_latent_is_bias_response() {
        // regression pin: zero input, zero context -> latent is g_a's bias
        // response; with the seeded init model all biases are zero
        let m = frozen_model();
        let x = Tensor::zeros(&[3, 64, 64]);
        let ctx = zero_context(&m, 64, 64);
        let lat = encode_frame(&m, &x, &ctx, 0, 1).unwrap();
        assert!(lat.data.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frozen_params_survive_forward_passes() {
        let m = frozen_model();
        let x = test_frame(10);
        let ctx = extract_context(&m, &x).unwrap();
        let _ = encode_frame(&m, &x, &ctx, 0, 0).unwrap();
        let _ = predict_entropy_params(&m, &ctx, 3).unwrap();
        m.verify_integrity().unwrap();
    }

    #[test]
    fn unfrozen_model_is_rejected() {
        let m = CodecModel::init(ArchConfig::default(), 1);
        let x = test_frame(3);
        assert!(extract_context(&m, &x).is_err());
    }
}

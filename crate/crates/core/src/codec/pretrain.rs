//! Seeded pretraining of the codec on synthetic sequences.
//!
//! Plain gradient descent with a fixed step on the rate-distortion
//! objective `R_bpp + lambda_train * MSE`, with quantization replaced by
//! the additive-uniform-noise proxy. The trained model is frozen and
//! checksummed before it is returned.

use super::forward::{context_node, decode_node, encode_node, entropy_nodes, model_nodes};
use super::model::CodecModel;
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::rng::{self, SplitMix64};
use crate::video::{gen_synthetic, Motion};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    /// Fixed gradient-descent step.
    pub step_size: f64,
    pub seed: u64,
    pub n_sequences: usize,
    pub frames_per_seq: usize,
    pub width: usize,
    pub height: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 2000,
            step_size: 2e-4,
            seed: 7,
            n_sequences: 8,
            frames_per_seq: 6,
            width: 64,
            height: 64,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PretrainReport {
    /// Loss on the fixed evaluation batch before the first update.
    pub initial_loss: f64,
    /// Same batch after the last update.
    pub final_loss: f64,
    pub steps: usize,
    /// (step, single-sample training loss), subsampled.
    pub trace: Vec<(usize, f64)>,
}

struct Sample<'a> {
    x: &'a Tensor<f32>,
    ctx_source: Option<&'a Tensor<f32>>,
    noise_key: u64,
}

/// Training objective for one sample; parameters enter as leaves when
/// `as_leaves` so the same builder serves update and evaluation passes.
fn sample_loss(
    model: &CodecModel,
    sample: &Sample,
    seed: u64,
    as_leaves: bool,
) -> Result<(Graph<f32>, Vec<NodeId>, NodeId)> {
    let arch = &model.arch;
    let lambda_train = arch.lambda(arch.lambda_train_index);
    let q = arch.q_step(arch.lambda_train_index); // exactly 1.0
    let (h, w) = (sample.x.shape()[1], sample.x.shape()[2]);

    let mut g = Graph::new();
    let m = model_nodes(&mut g, model, as_leaves);
    let ids: Vec<NodeId> = vec![
        m.a1_w, m.a1_b, m.a2_w, m.a2_b, m.s1_w, m.s1_b, m.s2_w, m.s2_b, m.c1_w, m.c1_b, m.c2_w,
        m.c2_b, m.c3_w, m.c3_b, m.e1_w, m.e1_b, m.e2m_w, m.e2m_b, m.e2s_w, m.e2s_b,
    ];
    let x = g.constant(sample.x.clone());
    let ctx = match sample.ctx_source {
        Some(prev) => {
            let p = g.constant(prev.clone());
            context_node(&mut g, &m, p)?
        }
        None => g.constant(super::forward::zero_context(model, h, w)),
    };
    let z = encode_node(&mut g, &m, x, ctx, q)?;
    // additive-uniform-noise quantization proxy
    let noise = Tensor::from_fn(z_shape(arch, h, w).as_slice(), |i| {
        (rng::counter_unit_open(seed, 0xA0A0, sample.noise_key, i as u64) - 0.5) as f32
    });
    let nz = g.constant(noise);
    let y_hat = g.add(z, nz)?;
    let (mu, sigma) = entropy_nodes(&mut g, &m, ctx, q)?;
    let bits = g.gaussian_bits(y_hat, mu, sigma)?;
    let total_bits = g.sum(bits)?;
    let bpp = g.scale(total_bits, 1.0 / (h * w) as f32)?;
    let x_hat = decode_node(&mut g, &m, y_hat, ctx, q)?;
    let diff = g.sub(x_hat, x)?;
    let sq = g.square(diff)?;
    let mse = g.mean(sq)?;
    let weighted = g.scale(mse, lambda_train as f32)?;
    let loss = g.add(bpp, weighted)?;
    Ok((g, ids, loss))
}

fn z_shape(arch: &super::model::ArchConfig, h: usize, w: usize) -> Vec<usize> {
    let d = super::model::ArchConfig::DOWNSAMPLE;
    vec![arch.latent_channels, h / d, w / d]
}

/// Pretrain from an unfrozen model; returns the frozen model and a report.
pub fn pretrain(mut model: CodecModel, cfg: &PretrainConfig) -> Result<(CodecModel, PretrainReport)> {
    if model.is_frozen() {
        return Err(Error::ModelFrozen);
    }
    let motions = [Motion::Pan, Motion::Mixed, Motion::Noise];
    let sequences: Vec<Vec<Tensor<f32>>> = (0..cfg.n_sequences)
        .map(|i| {
            let seq_seed = rng::counter_u64(cfg.seed, 0x5EED, i as u64, 0);
            gen_synthetic(
                seq_seed,
                cfg.width,
                cfg.height,
                cfg.frames_per_seq,
                motions[i % motions.len()],
            )
        })
        .collect::<Result<_>>()?;

    // fixed evaluation batch: one intra and one inter sample per sequence
    let eval_batch: Vec<Sample> = sequences
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            [
                Sample {
                    x: &s[0],
                    ctx_source: None,
                    noise_key: 2 * i as u64,
                },
                Sample {
                    x: &s[1],
                    ctx_source: Some(&s[0]),
                    noise_key: 2 * i as u64 + 1,
                },
            ]
        })
        .collect();

    let eval = |model: &CodecModel| -> Result<f64> {
        let mut acc = 0.0;
        for s in &eval_batch {
            let (g, _, loss) = sample_loss(model, s, cfg.seed, false)?;
            acc += g.value(loss).item() as f64;
        }
        Ok(acc / eval_batch.len() as f64)
    };

    let initial_loss = eval(&model)?;
    let mut trace = Vec::new();
    let mut order = SplitMix64::new(cfg.seed ^ 0x0DD5_EED5);
    let step_size = cfg.step_size as f32;

    for step in 0..cfg.steps {
        let seq = &sequences[order.next_below(sequences.len())];
        let t = 1 + order.next_below(seq.len() - 1);
        let intra = step % 4 == 0;
        let sample = Sample {
            x: &seq[t],
            ctx_source: if intra { None } else { Some(&seq[t - 1]) },
            noise_key: 0x1_0000 + step as u64,
        };
        let built = sample_loss(&model, &sample, cfg.seed, true);
        let (g, ids, loss) = match built {
            Ok(v) => v,
            Err(Error::NonFinite { .. }) => return Err(Error::Diverged(step)),
            Err(e) => return Err(e),
        };
        let loss_v = g.value(loss).item() as f64;
        if !loss_v.is_finite() {
            return Err(Error::Diverged(step));
        }
        if step % 25 == 0 || step + 1 == cfg.steps {
            trace.push((step, loss_v));
        }
        // context parameters only participate on inter samples
        let active: Vec<NodeId> = if intra { ids_without_ctx(&ids) } else { ids.clone() };
        let grads = g.backward(loss, &active)?;
        let mut grad_iter = grads.into_iter();
        let tensors = model.params.tensors_mut();
        for (slot, t) in tensors.into_iter().enumerate() {
            if intra && is_ctx_slot(slot) {
                continue;
            }
            let grad = grad_iter.next().expect("gradient per active tensor");
            for (w, gv) in t.data_mut().iter_mut().zip(grad.data()) {
                *w -= step_size * gv;
            }
        }
    }

    let final_loss = eval(&model)?;
    model.freeze();
    Ok((
        model,
        PretrainReport {
            initial_loss,
            final_loss,
            steps: cfg.steps,
            trace,
        },
    ))
}

/// Slot indices of the context-extractor tensors in declaration order
/// (c1_w, c1_b, c2_w, c2_b, c3_w, c3_b).
fn is_ctx_slot(slot: usize) -> bool {
    (8..14).contains(&slot)
}

fn ids_without_ctx(ids: &[NodeId]) -> Vec<NodeId> {
    ids.iter()
        .enumerate()
        .filter(|(i, _)| !is_ctx_slot(*i))
        .map(|(_, id)| *id)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::model::ArchConfig;

    #[test]
    fn zero_steps_returns_frozen_init() {
        let model = CodecModel::init(ArchConfig::default(), 11);
        let init_sum = model.compute_checksum();
        let cfg = PretrainConfig {
            steps: 0,
            ..Default::default()
        };
        let (frozen, report) = pretrain(model, &cfg).unwrap();
        assert!(frozen.is_frozen());
        assert_eq!(frozen.checksum(), init_sum);
        assert_eq!(report.initial_loss, report.final_loss);
    }

    #[test]
    fn already_frozen_is_rejected() {
        let mut model = CodecModel::init(ArchConfig::default(), 11);
        model.freeze();
        assert!(matches!(
            pretrain(model, &PretrainConfig::default()),
            Err(Error::ModelFrozen)
        ));
    }

    #[test]
    fn same_seed_same_checksum() {
        let cfg = PretrainConfig {
            steps: 30,
            ..Default::default()
        };
        let (m1, _) = pretrain(CodecModel::init(ArchConfig::default(), 3), &cfg).unwrap();
        let (m2, _) = pretrain(CodecModel::init(ArchConfig::default(), 3), &cfg).unwrap();
        assert_eq!(m1.checksum(), m2.checksum());
    }

    #[test]
    fn short_run_reduces_eval_loss() {
        let cfg = PretrainConfig {
            steps: 150,
            ..Default::default()
        };
        let (_, report) = pretrain(CodecModel::init(ArchConfig::default(), 5), &cfg).unwrap();
        assert!(
            report.final_loss < report.initial_loss,
            "loss {} -> {}",
            report.initial_loss,
            report.final_loss
        );
    }
}

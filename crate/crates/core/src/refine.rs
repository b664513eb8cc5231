//! Encoder-side online latent refinement: gradient descent on the latent
//! of one frame against the rate-distortion objective, with SGA soft
//! quantization inside the loop and hard rounding for the objective that
//! decides what is kept.
//!
//! Network parameters stay frozen; the latent is the only leaf. A
//! keep-best rule evaluates the true (hard-rounded) objective every
//! `KEEP_BEST_INTERVAL` iterations and at the end, so the returned latent
//! never scores worse than the unrefined one.

use crate::autodiff::tensor::{t_mean, t_square, t_sub};
use crate::autodiff::{Graph, Tensor};
use crate::codec::forward::{decode_node, model_nodes};
use crate::codec::{CodecModel, Latent};
use crate::entropy::estimate_rate;
use crate::error::{Error, Result};
use crate::quant::{gumbel_noise, hard_round, SgaSchedule};

pub const KEEP_BEST_INTERVAL: usize = 25;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RefineConfig {
    /// Rate-distortion multiplier of the operating point.
    pub lambda: f64,
    pub max_iters: usize,
    pub lr_initial: f64,
    pub lr_late: f64,
    /// Fraction of the budget after which the late rate applies.
    pub lr_switch_fraction: f64,
    pub sga: SgaSchedule,
    /// Enables the frame-level dynamic RD adjustment (beta control).
    pub dynamic_rd: bool,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            lambda: 1360.0,
            max_iters: 1000,
            lr_initial: 1e-3,
            lr_late: 1e-4,
            lr_switch_fraction: 0.8,
            sga: SgaSchedule::default(),
            dynamic_rd: false,
            seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda <= 0.0 {
            return Err(Error::Config(format!("lambda must be > 0: {}", self.lambda)));
        }
        if !(self.lr_switch_fraction > 0.0 && self.lr_switch_fraction < 1.0) {
            return Err(Error::Config(format!(
                "lr_switch_fraction must be in (0,1): {}",
                self.lr_switch_fraction
            )));
        }
        self.sga.validate()
    }
}

/// Learning rate at an iteration: `lr_initial` before
/// `floor(switch_fraction * max_iters)`, `lr_late` from then on.
pub fn lr_at(iteration: usize, config: &RefineConfig) -> f64 {
    let switch = (config.lr_switch_fraction * config.max_iters as f64).floor() as usize;
    if iteration < switch {
        config.lr_initial
    } else {
        config.lr_late
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub rate_bits: f64,
    pub dist_mse: f64,
    pub loss: f64,
    pub tau: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct RefineResult {
    /// Continuous refined latent (the best-scoring point seen).
    pub latent: Latent,
    /// Hard-rounded form of the same latent.
    pub hard: Tensor<f32>,
    /// Hard-rounded objective of the unrefined latent.
    pub initial_loss: f64,
    /// Hard-rounded objective of the returned latent (<= initial).
    pub final_loss: f64,
    pub trace: Vec<TracePoint>,
    pub iterations: usize,
    pub improved: bool,
    /// Set when a non-finite loss aborted the loop early.
    pub aborted_non_finite: bool,
}

/// The true objective: hard-round, estimate real rate, decode, score.
struct HardObjective<'a> {
    model: &'a CodecModel,
    ctx: &'a Tensor<f32>,
    x: &'a Tensor<f32>,
    mu: &'a Tensor<f32>,
    sigma: &'a Tensor<f32>,
    rate_point: usize,
    frame_index: usize,
    pixels: f64,
    rd_weight: f64, // w_t * lambda
    beta: f64,
}

impl HardObjective<'_> {
    fn eval(&self, z: &Tensor<f32>) -> Result<(f64, f64, f64)> {
        let hard = hard_round(z);
        let rate = estimate_rate(&hard, self.mu, self.sigma, false)?;
        let lat = Latent {
            data: hard,
            frame_index: self.frame_index,
            rate_point: self.rate_point,
        };
        let recon = crate::codec::decode_frame(self.model, &lat, self.ctx)?;
        let mse = t_mean(&t_square(&t_sub(&recon, self.x)?)) as f64;
        let loss = self.beta * rate.total_bits / self.pixels + self.rd_weight * mse;
        Ok((loss, rate.total_bits, mse))
    }
}

/// Refine the latent of one frame. `w_t` is the hierarchical frame weight,
/// `beta_t` the dynamic rate weight (1.0 reduces to the plain objective).
#[allow(clippy::too_many_arguments)]
pub fn refine_latent(
    z0: &Latent,
    ctx: &Tensor<f32>,
    x: &Tensor<f32>,
    w_t: f64,
    beta_t: f64,
    model: &CodecModel,
    config: &RefineConfig,
) -> Result<RefineResult> {
    model.require_frozen()?;
    config.validate()?;
    let (mu, sigma) = crate::codec::predict_entropy_params(model, ctx, z0.rate_point)?;
    let pixels = (x.shape()[1] * x.shape()[2]) as f64;
    let objective = HardObjective {
        model,
        ctx,
        x,
        mu: &mu,
        sigma: &sigma,
        rate_point: z0.rate_point,
        frame_index: z0.frame_index,
        pixels,
        rd_weight: w_t * config.lambda,
        beta: beta_t,
    };

    let (initial_loss, init_bits, init_mse) = objective.eval(&z0.data)?;
    let mut best_loss = initial_loss;
    let mut best_z = z0.data.clone();
    let mut trace = Vec::with_capacity(config.max_iters + 1);
    trace.push(TracePoint {
        iteration: 0,
        rate_bits: init_bits,
        dist_mse: init_mse,
        loss: initial_loss,
        tau: config.sga.tau_at(0),
        lr: lr_at(0, config),
    });

    let mut z = z0.data.clone();
    let mut aborted = false;
    let mut iterations = 0usize;
    let eps = config.sga.epsilon as f32;
    let rd_weight = (w_t * config.lambda) as f32;
    let beta = beta_t as f32;

    for i in 0..config.max_iters {
        let tau = config.sga.tau_at(i);
        let lr = lr_at(i, config);
        let step = match refine_step(
            &z, ctx, x, &mu, &sigma, model, config, z0, tau as f32, eps, rd_weight, beta, i,
        ) {
            Ok(s) => s,
            Err(Error::NonFinite { .. }) => {
                aborted = true;
                break;
            }
            Err(e) => return Err(e),
        };
        for (zv, gv) in z.data_mut().iter_mut().zip(step.grad.data()) {
            *zv -= lr as f32 * gv;
        }
        if !z.all_finite() {
            aborted = true;
            break;
        }
        iterations = i + 1;
        trace.push(TracePoint {
            iteration: i + 1,
            rate_bits: step.rate_bits,
            dist_mse: step.dist_mse,
            loss: step.loss,
            tau,
            lr,
        });
        if (i + 1) % KEEP_BEST_INTERVAL == 0 {
            let (loss, _, _) = objective.eval(&z)?;
            if loss < best_loss {
                best_loss = loss;
                best_z = z.clone();
            }
        }
    }
    if !aborted && iterations % KEEP_BEST_INTERVAL != 0 {
        let (loss, _, _) = objective.eval(&z)?;
        if loss < best_loss {
            best_loss = loss;
            best_z = z.clone();
        }
    }

    let hard = hard_round(&best_z);
    Ok(RefineResult {
        latent: Latent {
            data: best_z,
            frame_index: z0.frame_index,
            rate_point: z0.rate_point,
        },
        hard,
        initial_loss,
        final_loss: best_loss,
        improved: best_loss < initial_loss,
        trace,
        iterations,
        aborted_non_finite: aborted,
    })
}

struct StepOutput {
    grad: Tensor<f32>,
    loss: f64,
    rate_bits: f64,
    dist_mse: f64,
}

#[allow(clippy::too_many_arguments)]
fn refine_step(
    z: &Tensor<f32>,
    ctx: &Tensor<f32>,
    x: &Tensor<f32>,
    mu: &Tensor<f32>,
    sigma: &Tensor<f32>,
    model: &CodecModel,
    config: &RefineConfig,
    z0: &Latent,
    tau: f32,
    eps: f32,
    rd_weight: f32,
    beta: f32,
    iteration: usize,
) -> Result<StepOutput> {
    let q_step = model.arch.q_step(z0.rate_point);
    let pixels = (x.shape()[1] * x.shape()[2]) as f32;
    let mut g = Graph::<f32>::new();
    let m = model_nodes(&mut g, model, false);
    let z_id = g.leaf(z.clone());
    let noise = gumbel_noise::<f32>(config.seed, z0.frame_index as u64, iteration as u64, z.shape());
    let zq = g.sga_quantize(z_id, tau, eps, noise)?;
    let mu_id = g.constant(mu.clone());
    let sigma_id = g.constant(sigma.clone());
    let bits = g.gaussian_bits(zq, mu_id, sigma_id)?;
    let total_bits = g.sum(bits)?;
    let bpp = g.scale(total_bits, 1.0 / pixels)?;
    let rate_term = g.scale(bpp, beta)?;
    let ctx_id = g.constant(ctx.clone());
    let recon = decode_node(&mut g, &m, zq, ctx_id, q_step)?;
    let x_id = g.constant(x.clone());
    let diff = g.sub(recon, x_id)?;
    let sq = g.square(diff)?;
    let mse = g.mean(sq)?;
    let dist_term = g.scale(mse, rd_weight)?;
    let loss = g.add(rate_term, dist_term)?;
    let grads = g.backward(loss, &[z_id])?;
    Ok(StepOutput {
        grad: grads.into_iter().next().expect("one leaf"),
        loss: g.value(loss).item() as f64,
        rate_bits: g.value(total_bits).item() as f64,
        dist_mse: g.value(mse).item() as f64,
    })
}

/// Write a refinement trace as CSV.
pub fn trace_to_csv(trace: &[TracePoint]) -> String {
    let mut out = String::from("iteration,rate_bits,dist_mse,loss,tau,lr\n");
    for p in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.iteration, p.rate_bits, p.dist_mse, p.loss, p.tau, p.lr
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{self, ArchConfig};

    fn setup() -> (CodecModel, Tensor<f32>, Tensor<f32>, Latent) {
        let mut model = CodecModel::init(ArchConfig::default(), 77);
        model.freeze();
        let x = crate::video::gen_synthetic(21, 64, 64, 1, crate::video::Motion::Pan)
            .unwrap()
            .remove(0);
        let ctx = codec::zero_context(&model, 64, 64);
        let z0 = codec::encode_frame(&model, &x, &ctx, 0, 1).unwrap();
        (model, x, ctx, z0)
    }

    #[test]
    fn lr_schedule_boundaries() {
        for (max_iters, switch) in [(10usize, 8usize), (100, 80), (1000, 800)] {
            let cfg = RefineConfig {
                max_iters,
                ..Default::default()
            };
            assert_eq!(lr_at(switch - 1, &cfg), 1e-3, "max_iters {max_iters}");
            assert_eq!(lr_at(switch, &cfg), 1e-4, "max_iters {max_iters}");
        }
    }

    #[test]
    fn zero_budget_returns_input() {
        let (model, x, ctx, z0) = setup();
        let cfg = RefineConfig {
            max_iters: 0,
            ..Default::default()
        };
        let r = refine_latent(&z0, &ctx, &x, 1.0, 1.0, &model, &cfg).unwrap();
        assert!(r.latent.data.bit_eq(&z0.data));
        assert!(!r.improved);
        assert_eq!(r.final_loss, r.initial_loss);
        assert_eq!(r.trace.len(), 1);
    }

    #[test]
    fn short_run_improves_and_is_deterministic() {
        let (model, x, ctx, z0) = setup();
        let cfg = RefineConfig {
            max_iters: 50,
            lambda: 1360.0,
            seed: 5,
            ..Default::default()
        };
        let r1 = refine_latent(&z0, &ctx, &x, 1.0, 1.0, &model, &cfg).unwrap();
        let r2 = refine_latent(&z0, &ctx, &x, 1.0, 1.0, &model, &cfg).unwrap();
        assert!(r1.latent.data.bit_eq(&r2.latent.data));
        assert_eq!(r1.final_loss, r2.final_loss);
        assert_eq!(r1.trace.len(), 51);
        assert!(r1.final_loss <= r1.initial_loss);
        model.verify_integrity().unwrap();
    }

    #[test]
    fn divergent_learning_rate_falls_back_to_input() {
        let (model, x, ctx, z0) = setup();
        let cfg = RefineConfig {
            max_iters: 60,
            lr_initial: 1.0e6,
            lr_late: 1.0e6,
            seed: 2,
            ..Default::default()
        };
        let r = refine_latent(&z0, &ctx, &x, 1.0, 1.0, &model, &cfg).unwrap();
        // keep-best guarantee: never worse than the unrefined latent
        assert!(r.final_loss <= r.initial_loss);
    }

    #[test]
    fn trace_csv_round_trips() {
        let (model, x, ctx, z0) = setup();
        let cfg = RefineConfig {
            max_iters: 3,
            ..Default::default()
        };
        let r = refine_latent(&z0, &ctx, &x, 0.5, 1.2, &model, &cfg).unwrap();
        let csv = trace_to_csv(&r.trace);
        let lines: Vec<&str> = csv.trim().lines().collect();
        assert_eq!(lines.len(), 1 + r.trace.len());
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields.len(), 6);
        let loss: f64 = fields[3].parse().unwrap();
        assert_eq!(loss, r.trace[0].loss);
    }
}

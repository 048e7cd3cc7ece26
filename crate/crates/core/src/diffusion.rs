//! Denoising-diffusion policy head: the variance schedule, the reverse
//! sampler that turns Gaussian noise into action logits conditioned on the
//! environment state, and the categorical distribution derived from those
//! logits.
//!
//! The forward (noising) process exists only as the closed-form marginal
//! used by tests; training never runs it. Sampling records every noise
//! draw so a trajectory can be replayed bit-for-bit, and the traced
//! variants keep per-step tapes so gradients flow through the whole
//! reverse chain.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{sinusoidal_embed, Activation, DenseNet, Gradients, Tape};
use crate::rng::standard_normal_vec;

/// Default width of the step-index embedding.
pub const EMBED_DIM: usize = 16;

/// β/α/ᾱ arrays for a K-step reverse process.
///
/// `β_k = 1 − exp(−β_min/K − (2k−1)/(2K²)·(β_max−β_min))` for `k = 1..=K`,
/// which is strictly increasing with every `β_k ∈ (0, 1)`; the cumulative
/// products `ᾱ_k` strictly decrease. The convention `ᾱ_0 = 1` makes the
/// final reverse step noiseless.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl DiffusionSchedule {
    pub fn new(k_steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if k_steps == 0 {
            return Err(Error::Config("diffusion needs k_steps >= 1".into()));
        }
        if !(beta_min > 0.0 && beta_max > beta_min) {
            return Err(Error::Config(format!(
                "diffusion bounds must satisfy 0 < beta_min < beta_max, got ({beta_min}, {beta_max})"
            )));
        }
        let kf = k_steps as f64;
        let mut beta = Vec::with_capacity(k_steps);
        let mut alpha = Vec::with_capacity(k_steps);
        let mut alpha_bar = Vec::with_capacity(k_steps);
        let mut running = 1.0;
        for k in 1..=k_steps {
            let exponent =
                beta_min / kf + (2.0 * k as f64 - 1.0) / (2.0 * kf * kf) * (beta_max - beta_min);
            let b = 1.0 - (-exponent).exp();
            let a = 1.0 - b;
            running *= a;
            beta.push(b);
            alpha.push(a);
            alpha_bar.push(running);
        }
        Ok(DiffusionSchedule {
            beta,
            alpha,
            alpha_bar,
            beta_min,
            beta_max,
        })
    }

    pub fn k_steps(&self) -> usize {
        self.beta.len()
    }

    /// `β_k`, 1-based.
    pub fn beta(&self, k: usize) -> f64 {
        self.beta[k - 1]
    }

    /// `α_k = 1 − β_k`, 1-based.
    pub fn alpha(&self, k: usize) -> f64 {
        self.alpha[k - 1]
    }

    /// `ᾱ_k`, 1-based, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.alpha_bar[k - 1]
        }
    }

    /// Reverse-process variance `β̃_k = (1−ᾱ_{k−1})/(1−ᾱ_k)·β_k`;
    /// zero at `k = 1`.
    pub fn beta_tilde(&self, k: usize) -> f64 {
        (1.0 - self.alpha_bar(k - 1)) / (1.0 - self.alpha_bar(k)) * self.beta(k)
    }

    /// Standard deviation of the chain output when the noise prediction is
    /// identically zero: the rescaling steps blow `x_K ~ N(0, I)` up by
    /// `1/√ᾱ_K` plus the injected variances. Softmax heads divide logits
    /// by this scale so the categorical policy starts unsaturated (the
    /// greedy argmax is scale-invariant).
    pub fn propagated_std(&self) -> f64 {
        let mut var = 1.0;
        for k in (1..=self.k_steps()).rev() {
            var = var / self.alpha(k) + self.beta_tilde(k);
        }
        var.sqrt()
    }
}

/// The noise-prediction network: maps `[x_k, embed(k), state]` to a
/// predicted noise vector of the action dimension.
#[derive(Debug, Clone)]
pub struct DenoiserNet {
    pub net: DenseNet,
    pub action_dim: usize,
    pub embed_dim: usize,
    pub state_dim: usize,
}

impl DenoiserNet {
    /// Three fully connected layers with the given hidden width; the step
    /// embedding is 16-dimensional and concatenated with the action and
    /// state inputs.
    pub fn new<R: Rng + ?Sized>(
        action_dim: usize,
        state_dim: usize,
        hidden_width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let in_dim = action_dim + EMBED_DIM + state_dim;
        let net = DenseNet::mlp(
            in_dim,
            &[hidden_width, hidden_width],
            action_dim,
            Activation::Mish,
            rng,
        )?;
        Ok(DenoiserNet {
            net,
            action_dim,
            embed_dim: EMBED_DIM,
            state_dim,
        })
    }

    fn assemble(&self, x_k: &[f64], k: usize, state: &[f64]) -> Result<Vec<f64>> {
        if x_k.len() != self.action_dim {
            return Err(Error::Dimension {
                context: "denoiser action input",
                expected: self.action_dim,
                actual: x_k.len(),
            });
        }
        if state.len() != self.state_dim {
            return Err(Error::Dimension {
                context: "denoiser state input",
                expected: self.state_dim,
                actual: state.len(),
            });
        }
        let mut input = Vec::with_capacity(self.net.input_dim());
        input.extend_from_slice(x_k);
        input.extend_from_slice(&sinusoidal_embed(k, self.embed_dim)?);
        input.extend_from_slice(state);
        Ok(input)
    }

    /// Predicted noise, no tape.
    pub fn predict_noise(&self, x_k: &[f64], k: usize, state: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(&self.assemble(x_k, k, state)?)
    }

    fn predict_noise_traced(
        &self,
        x_k: &[f64],
        k: usize,
        state: &[f64],
    ) -> Result<(Vec<f64>, Tape)> {
        self.net.forward_traced(&self.assemble(x_k, k, state)?)
    }
}

/// Closed-form forward marginal `x_k = √ᾱ_k·x_0 + √(1−ᾱ_k)·z`.
pub fn forward_marginal(
    x0: &[f64],
    k: usize,
    noise: &[f64],
    schedule: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    if k == 0 || k > schedule.k_steps() {
        return Err(Error::Config(format!(
            "forward_marginal step {k} outside 1..={}",
            schedule.k_steps()
        )));
    }
    if noise.len() != x0.len() {
        return Err(Error::Dimension {
            context: "forward_marginal noise",
            expected: x0.len(),
            actual: noise.len(),
        });
    }
    let a = schedule.alpha_bar(k).sqrt();
    let s = (1.0 - schedule.alpha_bar(k)).sqrt();
    Ok(x0.iter().zip(noise).map(|(x, z)| a * x + s * z).collect())
}

fn reverse_coefficients(schedule: &DiffusionSchedule, k: usize) -> (f64, f64, f64) {
    let alpha = schedule.alpha(k);
    let rescale = 1.0 / alpha.sqrt();
    let noise_coeff = (1.0 - alpha) / (alpha.sqrt() * (1.0 - schedule.alpha_bar(k)).sqrt());
    let sigma = schedule.beta_tilde(k).sqrt();
    (rescale, noise_coeff, sigma)
}

/// One reverse transition
/// `x_{k−1} = (1/√α_k)(x_k − (1−α_k)/√(1−ᾱ_k)·ε̂) + √β̃_k·z̄`,
/// with the injected noise supplied by the caller so sampling and replay
/// share one code path.
pub fn reverse_step(
    denoiser: &DenoiserNet,
    x_k: &[f64],
    k: usize,
    state: &[f64],
    schedule: &DiffusionSchedule,
    zbar: &[f64],
) -> Result<Vec<f64>> {
    if k == 0 || k > schedule.k_steps() {
        return Err(Error::Config(format!(
            "reverse step {k} outside 1..={}",
            schedule.k_steps()
        )));
    }
    let eps = denoiser.predict_noise(x_k, k, state)?;
    let (rescale, noise_coeff, sigma) = reverse_coefficients(schedule, k);
    Ok(x_k
        .iter()
        .zip(&eps)
        .zip(zbar)
        .map(|((x, e), z)| rescale * x - noise_coeff * e + sigma * z)
        .collect())
}

/// Full record of one sampling pass: the Gaussian initialization, the
/// per-step injected noises (ordered k = K down to 1), and the resulting
/// logits.
#[derive(Debug, Clone)]
pub struct SampledAction {
    pub x_init: Vec<f64>,
    pub noises: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

/// Per-step tapes of one traced sampling pass, consumed by
/// [`chain_backward`].
#[derive(Debug)]
pub struct DiffusionTape {
    /// `(k, tape)` in application order, k = K down to 1.
    steps: Vec<(usize, Tape)>,
}

/// Draws `x_K ~ N(0, I)`, applies all K reverse steps, and records every
/// noise draw for exact replay.
pub fn sample_action_logits<R: Rng + ?Sized>(
    denoiser: &DenoiserNet,
    state: &[f64],
    schedule: &DiffusionSchedule,
    rng: &mut R,
) -> Result<SampledAction> {
    let x_init = standard_normal_vec(rng, denoiser.action_dim);
    let mut noises = Vec::with_capacity(schedule.k_steps());
    let mut x = x_init.clone();
    for k in (1..=schedule.k_steps()).rev() {
        let zbar = standard_normal_vec(rng, denoiser.action_dim);
        x = reverse_step(denoiser, &x, k, state, schedule, &zbar)?;
        noises.push(zbar);
    }
    Ok(SampledAction {
        x_init,
        noises,
        logits: x,
    })
}

/// Re-runs the reverse chain with recorded noises; bit-identical to the
/// original sampling pass.
pub fn replay_action_logits(
    denoiser: &DenoiserNet,
    state: &[f64],
    schedule: &DiffusionSchedule,
    x_init: &[f64],
    noises: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if noises.len() != schedule.k_steps() {
        return Err(Error::Dimension {
            context: "replay noises",
            expected: schedule.k_steps(),
            actual: noises.len(),
        });
    }
    let mut x = x_init.to_vec();
    for (idx, k) in (1..=schedule.k_steps()).rev().enumerate() {
        x = reverse_step(denoiser, &x, k, state, schedule, &noises[idx])?;
    }
    Ok(x)
}

/// Traced sampling: same outputs as [`sample_action_logits`] plus the
/// tapes needed to backpropagate through every reverse step.
pub fn sample_traced<R: Rng + ?Sized>(
    denoiser: &DenoiserNet,
    state: &[f64],
    schedule: &DiffusionSchedule,
    rng: &mut R,
) -> Result<(SampledAction, DiffusionTape)> {
    let x_init = standard_normal_vec(rng, denoiser.action_dim);
    let mut noises = Vec::with_capacity(schedule.k_steps());
    let mut steps = Vec::with_capacity(schedule.k_steps());
    let mut x = x_init.clone();
    for k in (1..=schedule.k_steps()).rev() {
        let (eps, tape) = denoiser.predict_noise_traced(&x, k, state)?;
        let (rescale, noise_coeff, sigma) = reverse_coefficients(schedule, k);
        let zbar = standard_normal_vec(rng, denoiser.action_dim);
        let next: Vec<f64> = x
            .iter()
            .zip(&eps)
            .zip(&zbar)
            .map(|((xv, e), z)| rescale * xv - noise_coeff * e + sigma * z)
            .collect();
        steps.push((k, tape));
        noises.push(zbar);
        x = next;
    }
    Ok((
        SampledAction {
            x_init,
            noises,
            logits: x,
        },
        DiffusionTape { steps },
    ))
}

/// Backpropagates an adjoint on the sampled logits through every reverse
/// step, accumulating denoiser parameter gradients. Each step contributes
/// both directly (its ε̂ output) and through the rescaled carry of `x_k`
/// into later steps.
pub fn chain_backward(
    denoiser: &DenoiserNet,
    schedule: &DiffusionSchedule,
    tape: &mut DiffusionTape,
    logits_adjoint: &[f64],
) -> Result<Gradients> {
    if logits_adjoint.len() != denoiser.action_dim {
        return Err(Error::Dimension {
            context: "chain_backward adjoint",
            expected: denoiser.action_dim,
            actual: logits_adjoint.len(),
        });
    }
    let mut grads = denoiser.net.zero_gradients();
    let mut g = logits_adjoint.to_vec();
    // The last applied step produced the logits; walk the chain backwards.
    for (k, step_tape) in tape.steps.iter_mut().rev() {
        let (rescale, noise_coeff, _) = reverse_coefficients(schedule, *k);
        let eps_adjoint: Vec<f64> = g.iter().map(|gv| -noise_coeff * gv).collect();
        let step_grads = denoiser.net.backward(step_tape, &eps_adjoint)?;
        let mut g_next: Vec<f64> = g.iter().map(|gv| rescale * gv).collect();
        for (gx, inp) in g_next
            .iter_mut()
            .zip(step_grads.input.iter().take(denoiser.action_dim))
        {
            *gx += inp;
        }
        grads.accumulate(&step_grads);
        g = g_next;
    }
    // `g` is now the adjoint of x_K, which carries no parameters.
    grads.input = g;
    Ok(grads)
}

/// Softmax over the sampled logits: the categorical policy used for
/// entropy and log-probability terms.
pub fn policy_distribution(logits: &[f64]) -> Result<Vec<f64>> {
    Ok(log_policy_distribution(logits)?
        .iter()
        .map(|lp| lp.exp())
        .collect())
}

/// Numerically stable log-softmax of the logits.
pub fn log_policy_distribution(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Domain("empty logits".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite logits".into()));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|v| v - max - log_sum).collect())
}

/// Entropy of the categorical policy, in nats.
pub fn policy_entropy(logits: &[f64]) -> Result<f64> {
    let log_p = log_policy_distribution(logits)?;
    Ok(-log_p.iter().map(|lp| lp.exp() * lp).sum::<f64>())
}

/// Greedy action: argmax of the logits, lowest index on ties.
pub fn greedy_action(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate().skip(1) {
        if *v > logits[best] {
            best = i;
        }
    }
    best
}

/// Samples an action index from the categorical policy.
pub fn sample_action<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> Result<usize> {
    use rand::RngExt;
    let probs = policy_distribution(logits)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(probs.len() - 1)
}

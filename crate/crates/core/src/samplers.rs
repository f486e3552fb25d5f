//! Reverse-process samplers: stochastic ancestral, first-order deterministic
//! (DDIM-form), and the second-order lambda-midpoint method, plus the driver
//! that iterates them over an inference time grid.

use rand_chacha::ChaCha8Rng;

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::imaging::from_diffusion;
use crate::numerics::Tensor;
use crate::rng::{self, Domain};
use crate::schedule::{subsample_timesteps, times_lambda_uniform, NoiseSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SamplerKind {
    Ancestral,
    FirstOrder,
    SecondOrder,
}

impl SamplerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ancestral" => Ok(SamplerKind::Ancestral),
            "first_order" => Ok(SamplerKind::FirstOrder),
            "second_order" => Ok(SamplerKind::SecondOrder),
            other => Err(Error::InvalidArg(format!("unknown sampler kind {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Ancestral => "ancestral",
            SamplerKind::FirstOrder => "first_order",
            SamplerKind::SecondOrder => "second_order",
        }
    }
}

/// Timestep spacing for the inference subsequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spacing {
    UniformT,
    UniformLambda,
}

impl Spacing {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform_t" => Ok(Spacing::UniformT),
            "uniform_lambda" => Ok(Spacing::UniformLambda),
            other => Err(Error::InvalidArg(format!("unknown spacing {other}"))),
        }
    }
}

/// A fully resolved sampling plan: kind, step count, the descending time
/// grid (first = T, last >= 1; the driver appends the final step to 0),
/// the x0-clamp flag, and the seed for x_T / ancestral noise.
#[derive(Debug, Clone)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    pub steps: usize,
    pub times: Vec<f64>,
    pub clip_x0: bool,
    pub seed: u64,
}

impl SamplerSpec {
    pub fn new(
        s: &NoiseSchedule,
        kind: SamplerKind,
        steps: usize,
        spacing: Spacing,
        clip_x0: bool,
        seed: u64,
    ) -> Result<Self> {
        let times = match spacing {
            Spacing::UniformT => subsample_timesteps(s.t_max(), steps)?
                .into_iter()
                .map(|t| t as f64)
                .collect(),
            Spacing::UniformLambda => {
                if steps == 1 {
                    vec![s.t_max() as f64]
                } else {
                    times_lambda_uniform(s, steps)?
                }
            }
        };
        let spec = SamplerSpec { kind, steps, times, clip_x0, seed };
        spec.validate(s)?;
        Ok(spec)
    }

    pub fn validate(&self, s: &NoiseSchedule) -> Result<()> {
        if self.times.is_empty() {
            return Err(Error::InvalidArg("empty time grid".into()));
        }
        if self.times[0] != s.t_max() as f64 {
            return Err(Error::range("time grid", "must start at T"));
        }
        if *self.times.last().unwrap() < 1.0 {
            return Err(Error::range("time grid", "must end at >= 1"));
        }
        if !self.times.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::range("time grid", "must be strictly descending"));
        }
        Ok(())
    }
}

// ── step primitives ─────────────────────────────────────────────────

/// The deterministic affine update shared by both deterministic samplers:
/// x_to = sqrt(abar_to) x0h + sqrt(1-abar_to) (x - sqrt(abar_from) x0h)/sqrt(1-abar_from).
fn ddim_form(s: &NoiseSchedule, x: &Tensor, t_from: f64, t_to: f64, x0h: &Tensor) -> Result<Tensor> {
    let ab_f = s.alpha_bar_at(t_from)?;
    let ab_t = s.alpha_bar_at(t_to)?;
    let a_t = ab_t.sqrt() as f32;
    let ratio = ((1.0 - ab_t).sqrt() / (1.0 - ab_f).sqrt()) as f32;
    let a_f = ab_f.sqrt() as f32;
    x.zip(x0h, |xv, x0| a_t * x0 + ratio * (xv - a_f * x0))
}

/// One stochastic posterior step from t to t-1 (Alg. 1 style); eps_t must be
/// zero at t = 1, where the posterior variance vanishes anyway.
pub fn ancestral_step(
    s: &NoiseSchedule,
    model: &dyn Denoiser,
    x_t: &Tensor,
    t: usize,
    cond: Option<&Tensor>,
    eps_t: &Tensor,
) -> Result<Tensor> {
    if t < 1 || t > s.t_max() {
        return Err(Error::range("ancestral timestep", format!("t={t}")));
    }
    let x0h = model.denoise(x_t, t as f64, cond)?;
    let c = s.posterior_coeffs(t)?;
    let sd = c.variance.sqrt() as f32;
    let (c0, cx) = (c.coef_x0 as f32, c.coef_xt as f32);
    let mean = x_t.zip(&x0h, |xv, x0| c0 * x0 + cx * xv)?;
    mean.zip(eps_t, |m, e| m + sd * e)
}

/// Coarse stochastic step from t_from to t_to using the generalized
/// posterior q(x_to | x_from, x0_hat); t_to = 0 collapses to x0_hat.
pub fn ancestral_step_between(
    s: &NoiseSchedule,
    model: &dyn Denoiser,
    x: &Tensor,
    t_from: f64,
    t_to: f64,
    cond: Option<&Tensor>,
    eps: &Tensor,
) -> Result<Tensor> {
    let x0h = model.denoise(x, t_from, cond)?;
    let c = s.coeffs_between(t_from, t_to)?;
    let sd = c.variance.max(0.0).sqrt() as f32;
    let (c0, cx) = (c.coef_x0 as f32, c.coef_xt as f32);
    let mean = x.zip(&x0h, |xv, x0| c0 * x0 + cx * xv)?;
    mean.zip(eps, |m, e| m + sd * e)
}

/// Deterministic DDIM-form step; preserves the implied noise direction and
/// adds none. t_to = 0 returns x0_hat exactly.
pub fn first_order_step(
    s: &NoiseSchedule,
    model: &dyn Denoiser,
    x: &Tensor,
    t_from: f64,
    t_to: f64,
    cond: Option<&Tensor>,
) -> Result<Tensor> {
    if t_from <= t_to {
        return Err(Error::range(
            "first_order times",
            format!("t_from={t_from} must exceed t_to={t_to}"),
        ));
    }
    let x0h = model.denoise(x, t_from, cond)?;
    ddim_form(s, x, t_from, t_to, &x0h)
}

/// Second-order lambda-midpoint step: half-step to the lambda midpoint,
/// reevaluate the model there, then apply the full DDIM-form update with the
/// midpoint prediction. The final step to t = 0 is taken by
/// `first_order_step` instead, since lambda(0) diverges.
pub fn second_order_step(
    s: &NoiseSchedule,
    model: &dyn Denoiser,
    x: &Tensor,
    t_from: f64,
    t_to: f64,
    cond: Option<&Tensor>,
) -> Result<Tensor> {
    second_order_step_at(s, model, x, t_from, t_to, cond, 0.5)
}

/// Midpoint step with a configurable evaluation fraction along the lambda
/// segment. Order two holds only at r = 1/2; other fractions degrade to
/// first order, which the oracle suite uses as a sensitivity canary.
pub(crate) fn second_order_step_at(
    s: &NoiseSchedule,
    model: &dyn Denoiser,
    x: &Tensor,
    t_from: f64,
    t_to: f64,
    cond: Option<&Tensor>,
    fraction: f64,
) -> Result<Tensor> {
    if t_from <= t_to || t_to < 1.0 {
        return Err(Error::range(
            "second_order times",
            format!("need t_from > t_to >= 1, got ({t_from}, {t_to})"),
        ));
    }
    let l_from = s.lambda_of(t_from)?;
    let l_to = s.lambda_of(t_to)?;
    let l_mid = l_from + fraction * (l_to - l_from);
    let s_mid = s.t_of_lambda(l_mid)?;
    let x0h = model.denoise(x, t_from, cond)?;
    let u = ddim_form(s, x, t_from, s_mid, &x0h)?;
    let x0_mid = model.denoise(&u, s_mid, cond)?;
    ddim_form(s, x, t_from, t_to, &x0_mid)
}

// ── chain driver ────────────────────────────────────────────────────

/// Run one reverse chain over the grid, ending with the collapse to t = 0.
/// `chain_rng` feeds ancestral noise; deterministic kinds ignore it.
/// Returns the terminal state in the diffusion domain (no [0,1] mapping).
pub fn run_chain(
    s: &NoiseSchedule,
    model: &dyn Denoiser,
    kind: SamplerKind,
    times: &[f64],
    cond: Option<&Tensor>,
    x_start: &Tensor,
    chain_rng: Option<&mut ChaCha8Rng>,
) -> Result<Tensor> {
    run_chain_traced(s, model, kind, times, cond, x_start, chain_rng, None)
}

#[allow(clippy::too_many_arguments)]
pub fn run_chain_traced(
    s: &NoiseSchedule,
    model: &dyn Denoiser,
    kind: SamplerKind,
    times: &[f64],
    cond: Option<&Tensor>,
    x_start: &Tensor,
    mut chain_rng: Option<&mut ChaCha8Rng>,
    mut trace: Option<&mut Vec<Tensor>>,
) -> Result<Tensor> {
    if times.is_empty() {
        return Err(Error::InvalidArg("empty time grid".into()));
    }
    let mut x = x_start.clone();
    let zeros = Tensor::zeros(x_start.shape());
    for w in times.windows(2) {
        let (t_from, t_to) = (w[0], w[1]);
        x = match kind {
            SamplerKind::FirstOrder => first_order_step(s, model, &x, t_from, t_to, cond)?,
            SamplerKind::SecondOrder => second_order_step(s, model, &x, t_from, t_to, cond)?,
            SamplerKind::Ancestral => {
                let eps = match chain_rng.as_deref_mut() {
                    Some(rng) => rng::normal_tensor_from(rng, x.shape()),
                    None => zeros.clone(),
                };
                ancestral_step_between(s, model, &x, t_from, t_to, cond, &eps)?
            }
        };
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(x.clone());
        }
    }
    // final collapse to t = 0 (abar = 1): every kind returns x0_hat here
    let t_last = *times.last().unwrap();
    x = match kind {
        SamplerKind::Ancestral => {
            ancestral_step_between(s, model, &x, t_last, 0.0, cond, &zeros)?
        }
        _ => first_order_step(s, model, &x, t_last, 0.0, cond)?,
    };
    if let Some(tr) = trace.as_deref_mut() {
        tr.push(x.clone());
    }
    Ok(x)
}

/// Sample one image: draw x_T from the (seed, image_index) stream, run the
/// chain, map back to [0,1].
pub fn sample(
    s: &NoiseSchedule,
    model: &dyn Denoiser,
    spec: &SamplerSpec,
    cond: Option<&Tensor>,
    shape: &[usize],
    image_index: u64,
) -> Result<Tensor> {
    if let Some(c) = cond {
        if c.shape() != shape {
            return Err(Error::shape("sample condition", shape, c.shape()));
        }
    }
    let x_t = rng::normal_tensor(spec.seed, Domain::ChainStart, image_index, 0, shape);
    let mut chain = rng::stream(spec.seed, Domain::ChainNoise, image_index, 0);
    let out = run_chain(s, model, spec.kind, &spec.times, cond, &x_t, Some(&mut chain))?;
    Ok(from_diffusion(&out))
}

//! Denoising models f(x_t, t, cond) -> predicted clean image.
//!
//! Two implementations: an analytic Gaussian posterior-mean oracle used to
//! validate the samplers exactly, and a small conditional encoder-decoder
//! convolutional net trained by the `trainer` module.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forward::x0_from_eps;
use crate::numerics::{Graph, NodeId, PadMode, ParamSet, Tensor};
use crate::rng::{normal_tensor, Domain};
use crate::schedule::NoiseSchedule;

/// Common interface of every denoiser: map (x_t, time, condition) to the
/// predicted clean image, same shape as x_t.
pub trait Denoiser: Send + Sync {
    fn denoise(&self, x_t: &Tensor, t: f64, cond: Option<&Tensor>) -> Result<Tensor>;
}

// ── sinusoidal time embedding ───────────────────────────────────────

/// [sin(t w_0) ... sin(t w_{d/2-1}), cos(...)] with w_k = 10000^(-2k/dim),
/// a geometric frequency ladder from 1 down to ~1/10000.
pub fn time_embedding(t: f64, dim: usize) -> Result<Tensor> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidArg(format!("time embedding dim must be even, got {dim}")));
    }
    let half = dim / 2;
    let mut data = vec![0.0f32; dim];
    for k in 0..half {
        let omega = 10000f64.powf(-2.0 * k as f64 / dim as f64);
        data[k] = (t * omega).sin() as f32;
        data[half + k] = (t * omega).cos() as f32;
    }
    Ok(Tensor::new_unchecked(vec![dim], data))
}

// ── analytic Gaussian oracle ────────────────────────────────────────

/// Bayes-optimal denoiser for data x0 ~ N(mu, s2 I) under the forward
/// marginal x_t ~ N(sqrt(abar) x0, (1-abar) I).
#[derive(Debug, Clone)]
pub struct AnalyticGaussianDenoiser {
    pub schedule: Arc<NoiseSchedule>,
    pub mu: f64,
    pub s2: f64,
}

impl AnalyticGaussianDenoiser {
    pub fn new(schedule: Arc<NoiseSchedule>, mu: f64, s2: f64) -> Result<Self> {
        if s2 <= 0.0 {
            return Err(Error::range("data variance", "s2 must be positive"));
        }
        Ok(AnalyticGaussianDenoiser { schedule, mu, s2 })
    }
}

/// Posterior mean E[x0 | x_t] for the Gaussian problem at a given abar.
pub fn gaussian_posterior_mean(mu: f64, s2: f64, abar: f64, x: f64) -> f64 {
    (abar.sqrt() * s2 * x + (1.0 - abar) * mu) / (abar * s2 + (1.0 - abar))
}

/// Spec-facing entry point on the integer grid.
pub fn analytic_denoise(
    d: &AnalyticGaussianDenoiser,
    s: &NoiseSchedule,
    x_t: &Tensor,
    t: usize,
) -> Result<Tensor> {
    if t < 1 || t > s.t_max() {
        return Err(Error::range("analytic_denoise timestep", format!("t={t}")));
    }
    let abar = s.alpha_bar(t);
    Ok(x_t.map(|v| gaussian_posterior_mean(d.mu, d.s2, abar, v as f64) as f32))
}

impl Denoiser for AnalyticGaussianDenoiser {
    fn denoise(&self, x_t: &Tensor, t: f64, _cond: Option<&Tensor>) -> Result<Tensor> {
        let abar = self.schedule.alpha_bar_at(t)?;
        Ok(x_t.map(|v| gaussian_posterior_mean(self.mu, self.s2, abar, v as f64) as f32))
    }
}

// ── conditional U-Net ───────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct UNetConfig {
    pub img_channels: usize,
    pub cond_channels: usize,
    pub base: usize,
    pub temb_dim: usize,
    pub norm: bool,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig { img_channels: 3, cond_channels: 3, base: 32, temb_dim: 64, norm: false }
    }
}

#[derive(Debug, Clone, Copy)]
struct ResIdx {
    c1w: usize,
    c1b: usize,
    ew: usize,
    eb: usize,
    c2w: usize,
    c2b: usize,
    norm_scale: Option<usize>,
    norm_shift: Option<usize>,
}

#[derive(Debug, Clone)]
struct Layout {
    trunk_w: usize,
    trunk_b: usize,
    in_w: usize,
    in_b: usize,
    rb: [ResIdx; 6],
    down: [(usize, usize); 2],
    up: [(usize, usize); 2],
    merge: [(usize, usize); 2],
    out_w: usize,
    out_b: usize,
}

/// Two-stage encoder-decoder with residual blocks, skip connections, and an
/// additive per-channel time signal; the condition enters by channel
/// concatenation with x_t. Accepts any H, W divisible by 4.
pub struct CondUNet {
    pub cfg: UNetConfig,
    params: ParamSet,
    idx: Layout,
}

struct Builder {
    ps: ParamSet,
    seed: u64,
}

impl Builder {
    fn conv(&mut self, name: &str, co: usize, ci: usize, k: usize, zero: bool) -> usize {
        let shape = [co, ci, k, k];
        let t = if zero {
            Tensor::zeros(&shape)
        } else {
            let std = (2.0 / (ci * k * k) as f64).sqrt() as f32;
            let idx = self.ps.len() as u64;
            normal_tensor(self.seed, Domain::ParamInit, idx, 0, &shape).map(|v| v * std)
        };
        self.ps.push(name, t)
    }

    fn vecp(&mut self, name: &str, n: usize) -> usize {
        self.ps.push(name, Tensor::zeros(&[n]))
    }

    fn matp(&mut self, name: &str, m: usize, n: usize) -> usize {
        let std = (1.0 / n as f64).sqrt() as f32;
        let idx = self.ps.len() as u64;
        let t = normal_tensor(self.seed, Domain::ParamInit, idx, 0, &[m, n]).map(|v| v * std);
        self.ps.push(name, t)
    }

    fn ones(&mut self, name: &str, n: usize) -> usize {
        self.ps.push(name, Tensor::full(&[n], 1.0))
    }

    fn resblock(&mut self, name: &str, c: usize, temb_dim: usize, norm: bool) -> ResIdx {
        let c1w = self.conv(&format!("{name}.conv1.w"), c, c, 3, false);
        let c1b = self.vecp(&format!("{name}.conv1.b"), c);
        let ew = self.matp(&format!("{name}.emb.w"), c, temb_dim);
        let eb = self.vecp(&format!("{name}.emb.b"), c);
        let c2w = self.conv(&format!("{name}.conv2.w"), c, c, 3, false);
        let c2b = self.vecp(&format!("{name}.conv2.b"), c);
        let (norm_scale, norm_shift) = if norm {
            (
                Some(self.ones(&format!("{name}.norm.scale"), c)),
                Some(self.vecp(&format!("{name}.norm.shift"), c)),
            )
        } else {
            (None, None)
        };
        ResIdx { c1w, c1b, ew, eb, c2w, c2b, norm_scale, norm_shift }
    }
}

impl CondUNet {
    pub fn new(cfg: UNetConfig, seed: u64) -> Result<Self> {
        if cfg.base < 1 || cfg.img_channels < 1 || cfg.cond_channels < 1 {
            return Err(Error::InvalidArg("unet widths and channels must be positive".into()));
        }
        if cfg.temb_dim == 0 || cfg.temb_dim % 2 != 0 {
            return Err(Error::InvalidArg("temb_dim must be even and positive".into()));
        }
        let (c1, c2, c3) = (cfg.base, 2 * cfg.base, 4 * cfg.base);
        let mut b = Builder { ps: ParamSet::new(), seed };

        let trunk_w = b.matp("temb.trunk.w", cfg.temb_dim, cfg.temb_dim);
        let trunk_b = b.vecp("temb.trunk.b", cfg.temb_dim);
        let in_w = b.conv("enc.in.w", c1, cfg.img_channels + cfg.cond_channels, 3, false);
        let in_b = b.vecp("enc.in.b", c1);
        let rb1 = b.resblock("enc.rb1", c1, cfg.temb_dim, cfg.norm);
        let down1 = (b.conv("enc.down1.w", c2, c1, 3, false), b.vecp("enc.down1.b", c2));
        let rb2 = b.resblock("enc.rb2", c2, cfg.temb_dim, cfg.norm);
        let down2 = (b.conv("enc.down2.w", c3, c2, 3, false), b.vecp("enc.down2.b", c3));
        let rb3 = b.resblock("enc.rb3", c3, cfg.temb_dim, cfg.norm);
        let rbmid = b.resblock("mid.rb", c3, cfg.temb_dim, cfg.norm);
        let up1 = (b.conv("dec.up1.w", c2, c3, 3, false), b.vecp("dec.up1.b", c2));
        let merge1 = (b.conv("dec.merge1.w", c2, c2 + c2, 3, false), b.vecp("dec.merge1.b", c2));
        let rb4 = b.resblock("dec.rb4", c2, cfg.temb_dim, cfg.norm);
        let up2 = (b.conv("dec.up2.w", c1, c2, 3, false), b.vecp("dec.up2.b", c1));
        let merge2 = (b.conv("dec.merge2.w", c1, c1 + c1, 3, false), b.vecp("dec.merge2.b", c1));
        let rb5 = b.resblock("dec.rb5", c1, cfg.temb_dim, cfg.norm);
        let out_w = b.conv("dec.out.w", cfg.img_channels, c1, 3, true);
        let out_b = b.vecp("dec.out.b", cfg.img_channels);

        Ok(CondUNet {
            cfg,
            params: b.ps,
            idx: Layout {
                trunk_w,
                trunk_b,
                in_w,
                in_b,
                rb: [rb1, rb2, rb3, rbmid, rb4, rb5],
                down: [down1, down2],
                up: [up1, up2],
                merge: [merge1, merge2],
                out_w,
                out_b,
            },
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Register every parameter as a graph input, in parameter order.
    pub fn bind(&self, g: &mut Graph) -> Vec<NodeId> {
        (0..self.params.len()).map(|i| g.input(self.params.value(i))).collect()
    }

    fn resblock_forward(
        &self,
        g: &mut Graph,
        bind: &[NodeId],
        rb: &ResIdx,
        x: NodeId,
        temb: NodeId,
    ) -> Result<NodeId> {
        let mut h = g.conv2d(x, bind[rb.c1w], 1, 1, PadMode::Reflect)?;
        h = g.bias_add(h, bind[rb.c1b])?;
        let tch = g.linear(temb, bind[rb.ew], bind[rb.eb])?;
        h = g.bias_add(h, tch)?;
        if let (Some(sc), Some(sh)) = (rb.norm_scale, rb.norm_shift) {
            h = g.instance_norm(h, 1e-5)?;
            h = g.chan_scale(h, bind[sc])?;
            h = g.bias_add(h, bind[sh])?;
        }
        h = g.silu(h);
        h = g.conv2d(h, bind[rb.c2w], 1, 1, PadMode::Reflect)?;
        h = g.bias_add(h, bind[rb.c2b])?;
        g.add(x, h)
    }

    /// Build the full forward pass on an existing graph; `bind` must come
    /// from `self.bind(g)`.
    pub fn forward(
        &self,
        g: &mut Graph,
        bind: &[NodeId],
        x_t: NodeId,
        cond: NodeId,
        t: f64,
    ) -> Result<NodeId> {
        let xs = g.shape(x_t).to_vec();
        let cs = g.shape(cond).to_vec();
        if xs.len() != 3 || xs[0] != self.cfg.img_channels {
            return Err(Error::shape("unet x_t", &[self.cfg.img_channels], &xs));
        }
        if cs.len() != 3 || cs[0] != self.cfg.cond_channels || cs[1..] != xs[1..] {
            return Err(Error::shape("unet condition", &xs, &cs));
        }
        if xs[1] % 4 != 0 || xs[2] % 4 != 0 {
            return Err(Error::InvalidArg(format!(
                "unet spatial dims must be divisible by 4, got {}x{}",
                xs[1], xs[2]
            )));
        }

        let emb = time_embedding(t, self.cfg.temb_dim)?;
        let emb_in = g.input(&emb);
        let trunk = g.linear(emb_in, bind[self.idx.trunk_w], bind[self.idx.trunk_b])?;
        let temb = g.silu(trunk);

        let xin = g.concat_c(x_t, cond)?;
        let mut h = g.conv2d(xin, bind[self.idx.in_w], 1, 1, PadMode::Reflect)?;
        h = g.bias_add(h, bind[self.idx.in_b])?;

        let s1 = self.resblock_forward(g, bind, &self.idx.rb[0], h, temb)?;
        let mut d1 = g.conv2d(s1, bind[self.idx.down[0].0], 2, 1, PadMode::Reflect)?;
        d1 = g.bias_add(d1, bind[self.idx.down[0].1])?;
        let s2 = self.resblock_forward(g, bind, &self.idx.rb[1], d1, temb)?;
        let mut d2 = g.conv2d(s2, bind[self.idx.down[1].0], 2, 1, PadMode::Reflect)?;
        d2 = g.bias_add(d2, bind[self.idx.down[1].1])?;
        let s3 = self.resblock_forward(g, bind, &self.idx.rb[2], d2, temb)?;
        let mid = self.resblock_forward(g, bind, &self.idx.rb[3], s3, temb)?;

        let up1 = g.upsample2(mid)?;
        let mut u1 = g.conv2d(up1, bind[self.idx.up[0].0], 1, 1, PadMode::Reflect)?;
        u1 = g.bias_add(u1, bind[self.idx.up[0].1])?;
        let cat1 = g.concat_c(u1, s2)?;
        let mut m1 = g.conv2d(cat1, bind[self.idx.merge[0].0], 1, 1, PadMode::Reflect)?;
        m1 = g.bias_add(m1, bind[self.idx.merge[0].1])?;
        let r4 = self.resblock_forward(g, bind, &self.idx.rb[4], m1, temb)?;

        let up2 = g.upsample2(r4)?;
        let mut u2 = g.conv2d(up2, bind[self.idx.up[1].0], 1, 1, PadMode::Reflect)?;
        u2 = g.bias_add(u2, bind[self.idx.up[1].1])?;
        let cat2 = g.concat_c(u2, s1)?;
        let mut m2 = g.conv2d(cat2, bind[self.idx.merge[1].0], 1, 1, PadMode::Reflect)?;
        m2 = g.bias_add(m2, bind[self.idx.merge[1].1])?;
        let r5 = self.resblock_forward(g, bind, &self.idx.rb[5], m2, temb)?;

        let mut out = g.conv2d(r5, bind[self.idx.out_w], 1, 1, PadMode::Reflect)?;
        out = g.bias_add(out, bind[self.idx.out_b])?;
        Ok(out)
    }

    /// Plain inference pass without gradient bookkeeping kept around.
    pub fn predict(&self, x_t: &Tensor, t: f64, cond: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bind = self.bind(&mut g);
        let xi = g.input(x_t);
        let ci = g.input(cond);
        let out = self.forward(&mut g, &bind, xi, ci, t)?;
        Ok(g.tensor(out))
    }
}

// ── trained-model wrapper ───────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Regress the clean image directly.
    Image,
    /// Regress the added noise; the clean image is recovered algebraically.
    Noise,
}

impl Objective {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(Objective::Image),
            "noise" => Ok(Objective::Noise),
            other => Err(Error::InvalidArg(format!("unknown objective {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Image => "image",
            Objective::Noise => "noise",
        }
    }
}

/// CondUNet plus everything needed to expose the Denoiser interface:
/// the schedule (for noise-prediction inversion) and the x0 clamp flag.
pub struct DenoiserModel {
    pub net: CondUNet,
    pub schedule: Arc<NoiseSchedule>,
    pub objective: Objective,
    pub clip_x0: bool,
}

impl Denoiser for DenoiserModel {
    fn denoise(&self, x_t: &Tensor, t: f64, cond: Option<&Tensor>) -> Result<Tensor> {
        let cond = cond.ok_or_else(|| Error::InvalidArg("trained denoiser requires a condition image".into()))?;
        let raw = self.net.predict(x_t, t, cond)?;
        let x0 = match self.objective {
            Objective::Image => raw,
            Objective::Noise => {
                let abar = self.schedule.alpha_bar_at(t)?;
                x0_from_eps(x_t, &raw, abar)?
            }
        };
        Ok(if self.clip_x0 { x0.clamp(-1.0, 1.0) } else { x0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_at_zero_is_sin_zero_cos_one() {
        let e = time_embedding(0.0, 4).unwrap();
        assert_eq!(e.data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn embedding_components_bounded() {
        for t in [0.5, 17.0, 999.0] {
            let e = time_embedding(t, 64).unwrap();
            assert!(e.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn embedding_rejects_odd_dim() {
        assert!(time_embedding(1.0, 5).is_err());
        assert!(time_embedding(1.0, 0).is_err());
    }

    #[test]
    fn embeddings_distinct_over_integer_grid() {
        let dim = 64;
        let embs: Vec<Tensor> = (1..=1000).map(|t| time_embedding(t as f64, dim).unwrap()).collect();
        let mut min_d2 = f64::INFINITY;
        for i in 0..embs.len() {
            for j in (i + 1)..embs.len() {
                let d2: f64 = embs[i]
                    .data()
                    .iter()
                    .zip(embs[j].data())
                    .map(|(&a, &b)| ((a - b) as f64).powi(2))
                    .sum();
                min_d2 = min_d2.min(d2);
            }
        }
        assert!(min_d2 > 0.0, "min pairwise distance^2 = {min_d2}");
    }

    #[test]
    fn analytic_point_mass_returns_mu() {
        let s = Arc::new(NoiseSchedule::linear(2, 0.1, 0.2).unwrap());
        let d = AnalyticGaussianDenoiser::new(s.clone(), 0.37, 1e-12).unwrap();
        let x = Tensor::full(&[4], 3.0);
        let out = analytic_denoise(&d, &s, &x, 2).unwrap();
        for &v in out.data() {
            assert!((v - 0.37).abs() < 1e-4);
        }
    }

    #[test]
    fn analytic_unit_prior_scales_input() {
        // mu=0, s2=1 -> x0_hat = sqrt(abar) x_t; abar=0.72, x_t=1.37768 -> 1.16901
        let s = Arc::new(NoiseSchedule::linear(2, 0.1, 0.2).unwrap());
        let d = AnalyticGaussianDenoiser::new(s.clone(), 0.0, 1.0).unwrap();
        let out = analytic_denoise(&d, &s, &Tensor::scalar(1.37768), 2).unwrap();
        assert!((out.data()[0] - 1.16901).abs() < 1e-5);
    }

    #[test]
    fn analytic_matches_quadrature_posterior_mean() {
        // brute-force Bayes posterior mean on a dense x0 grid
        let (mu, s2, abar) = (1.0, 0.25, 0.5);
        let quad = |x_t: f64| -> f64 {
            let s = s2.sqrt();
            let n = 8001;
            let (lo, hi) = (mu - 10.0 * s, mu + 10.0 * s);
            let dx = (hi - lo) / (n - 1) as f64;
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                let x0 = lo + i as f64 * dx;
                let prior = (-(x0 - mu) * (x0 - mu) / (2.0 * s2)).exp();
                let resid = x_t - abar.sqrt() * x0;
                let lik = (-resid * resid / (2.0 * (1.0 - abar))).exp();
                let w = prior * lik;
                num += x0 * w;
                den += w;
            }
            num / den
        };
        for x_t in [-1.3, 0.0, 0.9, 2.4] {
            let got = gaussian_posterior_mean(mu, s2, abar, x_t);
            let want = quad(x_t);
            assert!((got - want).abs() < 1e-4, "x_t={x_t}: {got} vs {want}");
        }
    }

    #[test]
    fn analytic_is_bayes_optimal_for_squared_loss() {
        // Monte Carlo loss of the posterior mean is below any perturbed variant.
        let s = Arc::new(NoiseSchedule::default_ddpm());
        let d = AnalyticGaussianDenoiser::new(s.clone(), 0.2, 0.36).unwrap();
        let mc_loss = |delta: f32| -> f64 {
            let mut acc = 0.0;
            let n = 20000;
            for i in 0..n {
                let draws = normal_tensor(11, Domain::ForwardNoise, 77, i, &[2]);
                let x0 = 0.2 + 0.6 * draws.data()[0];
                let eps = draws.data()[1];
                let t = crate::rng::uniform_timestep(11, 78, i, s.t_max());
                let ab = s.alpha_bar(t);
                let x_t = ab.sqrt() * x0 as f64 + (1.0 - ab).sqrt() * eps as f64;
                let pred = d
                    .denoise(&Tensor::scalar(x_t as f32), t as f64, None)
                    .unwrap()
                    .data()[0]
                    + delta;
                acc += (pred as f64 - x0 as f64) * (pred as f64 - x0 as f64);
            }
            acc / n as f64
        };
        let base = mc_loss(0.0);
        for delta in [-0.2, -0.05, 0.05, 0.2] {
            assert!(base <= mc_loss(delta), "perturbation {delta} beat the posterior mean");
        }
    }

    fn tiny_cfg() -> UNetConfig {
        UNetConfig { img_channels: 1, cond_channels: 1, base: 2, temb_dim: 4, norm: false }
    }

    #[test]
    fn unet_output_finite_and_shape_correct() {
        let net = CondUNet::new(UNetConfig::default(), 42).unwrap();
        let x = normal_tensor(1, Domain::ForwardNoise, 0, 0, &[3, 32, 32]);
        let c = normal_tensor(1, Domain::ForwardNoise, 0, 1, &[3, 32, 32]);
        let y = net.predict(&x, 500.0, &c).unwrap();
        assert_eq!(y.shape(), &[3, 32, 32]);
        assert!(y.data().iter().all(|v| v.is_finite()));
        assert!(net.params().total_scalars() < 2_000_000);
    }

    #[test]
    fn unet_is_deterministic() {
        let net = CondUNet::new(tiny_cfg(), 7).unwrap();
        let x = normal_tensor(2, Domain::ForwardNoise, 1, 0, &[1, 8, 8]);
        let c = normal_tensor(2, Domain::ForwardNoise, 1, 1, &[1, 8, 8]);
        let a = net.predict(&x, 3.5, &c).unwrap();
        let b = net.predict(&x, 3.5, &c).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn unet_rejects_mismatched_condition() {
        let net = CondUNet::new(tiny_cfg(), 7).unwrap();
        let x = Tensor::zeros(&[1, 8, 8]);
        let c = Tensor::zeros(&[1, 4, 4]);
        assert!(net.predict(&x, 1.0, &c).is_err());
        let c3 = Tensor::zeros(&[3, 8, 8]);
        assert!(net.predict(&x, 1.0, &c3).is_err());
        let odd = Tensor::zeros(&[1, 6, 6]);
        assert!(net.predict(&odd, 1.0, &Tensor::zeros(&[1, 6, 6])).is_err());
    }

    #[test]
    fn unet_gradients_match_finite_differences() {
        // tiny instance; every parameter, central differences h=1e-3
        let net = CondUNet::new(tiny_cfg(), 3).unwrap();
        let x = normal_tensor(5, Domain::ForwardNoise, 2, 0, &[1, 8, 8]);
        let c = normal_tensor(5, Domain::ForwardNoise, 2, 1, &[1, 8, 8]);
        let target = normal_tensor(5, Domain::ForwardNoise, 2, 2, &[1, 8, 8]);
        let t = 1.5;

        let loss_with = |params: &ParamSet| -> f64 {
            let mut g = Graph::new();
            let bind: Vec<NodeId> = (0..params.len()).map(|i| g.input(params.value(i))).collect();
            let xi = g.input(&x);
            let ci = g.input(&c);
            let out = net.forward(&mut g, &bind, xi, ci, t).unwrap();
            let ti = g.input(&target);
            let d = g.sub(out, ti).unwrap();
            let sq = g.mul(d, d).unwrap();
            let l = g.mean(sq);
            g.scalar(l)
        };

        let mut g = Graph::new();
        let bind = net.bind(&mut g);
        let xi = g.input(&x);
        let ci = g.input(&c);
        let out = net.forward(&mut g, &bind, xi, ci, t).unwrap();
        let ti = g.input(&target);
        let d = g.sub(out, ti).unwrap();
        let sq = g.mul(d, d).unwrap();
        let l = g.mean(sq);
        let grads = g.backward(l).unwrap();

        let h = 1e-3f32;
        let mut checked = 0usize;
        for pi in 0..net.params().len() {
            let ad = grads.grad(bind[pi]);
            for ei in 0..net.params().value(pi).numel() {
                let mut plus = net.params().clone();
                let mut minus = net.params().clone();
                let mut dp = plus.value(pi).data().to_vec();
                let mut dm = minus.value(pi).data().to_vec();
                dp[ei] += h;
                dm[ei] -= h;
                let shape = plus.value(pi).shape().to_vec();
                plus.set_value(pi, Tensor::new_unchecked(shape.clone(), dp));
                minus.set_value(pi, Tensor::new_unchecked(shape, dm));
                let fd = (loss_with(&plus) - loss_with(&minus)) / (2.0 * h as f64);
                let ad_v = ad.data()[ei] as f64;
                let denom = ad_v.abs().max(fd.abs()).max(1e-8);
                assert!(
                    (ad_v - fd).abs() / denom < 1e-3,
                    "param {} [{}]: ad={ad_v} fd={fd}",
                    net.params().name(pi),
                    ei
                );
                checked += 1;
            }
        }
        assert!(checked > 500, "expected full coverage, checked {checked}");
    }

    #[test]
    fn noise_objective_wrapper_inverts_prediction() {
        // a net predicting exactly eps must yield x0 through the wrapper
        let s = Arc::new(NoiseSchedule::linear(2, 0.1, 0.2).unwrap());
        let net = CondUNet::new(tiny_cfg(), 4).unwrap();
        let model = DenoiserModel {
            net,
            schedule: s.clone(),
            objective: Objective::Noise,
            clip_x0: false,
        };
        // with the zero-initialized head the raw prediction is a constant
        // bias; check the algebra instead with a synthetic pair
        let x0 = Tensor::full(&[1, 8, 8], 0.5);
        let eps = Tensor::full(&[1, 8, 8], -0.25);
        let ns = crate::forward::q_sample(&s, &x0, 2, &eps).unwrap();
        let rec = x0_from_eps(&ns.x_t, &eps, s.alpha_bar(2)).unwrap();
        assert!(rec.max_abs_diff(&x0) < 1e-6);
        // wrapper requires a condition
        assert!(model.denoise(&x0, 1.0, None).is_err());
    }
}

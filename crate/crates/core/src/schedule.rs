//! Noise schedules and every per-timestep quantity derived from them,
//! including the half-log-SNR reparameterization lambda(t) = ln(abar/(1-abar))/2
//! and its inverse, which the second-order sampler steps in.

use crate::error::{Error, Result};

/// Default DDPM endpoints.
pub const DEFAULT_T: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Linear-beta noise schedule with all derived arrays precomputed in f64.
///
/// Indexing is by timestep t in 1..=T; `alpha_bar(0)` is 1 by convention so
/// the final sampler step collapses to the predicted clean image.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    t_max: usize,
    beta_start: f64,
    beta_end: f64,
    beta: Vec<f64>,      // [0] unused
    alpha: Vec<f64>,     // [0] unused
    alpha_bar: Vec<f64>, // [0] = 1
    sigma: Vec<f64>,     // sqrt(1 - alpha_bar), [0] = 0
    lambda: Vec<f64>,    // [0] unused (diverges)
}

/// Closed-form coefficients of q(x_{t-1} | x_t, x_0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorCoeffs {
    pub coef_x0: f64,
    pub coef_xt: f64,
    pub variance: f64,
}

impl NoiseSchedule {
    /// Linear interpolation of beta from `beta_start` (t=1) to `beta_end` (t=T).
    pub fn linear(t_max: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_max < 1 {
            return Err(Error::range("schedule T", "must be >= 1"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::range(
                "beta endpoints",
                format!("need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"),
            ));
        }
        let mut beta = vec![0.0; t_max + 1];
        let mut alpha = vec![0.0; t_max + 1];
        let mut alpha_bar = vec![1.0; t_max + 1];
        let mut sigma = vec![0.0; t_max + 1];
        let mut lambda = vec![f64::INFINITY; t_max + 1];
        for t in 1..=t_max {
            let frac = if t_max == 1 { 0.0 } else { (t - 1) as f64 / (t_max - 1) as f64 };
            beta[t] = beta_start + (beta_end - beta_start) * frac;
            alpha[t] = 1.0 - beta[t];
            alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
            sigma[t] = (1.0 - alpha_bar[t]).sqrt();
            lambda[t] = 0.5 * (alpha_bar[t] / (1.0 - alpha_bar[t])).ln();
        }
        Ok(NoiseSchedule {
            t_max,
            beta_start,
            beta_end,
            beta,
            alpha,
            alpha_bar,
            sigma,
            lambda,
        })
    }

    pub fn default_ddpm() -> Self {
        Self::linear(DEFAULT_T, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("default schedule")
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    fn check_t(&self, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.t_max {
            return Err(Error::range(
                "timestep",
                format!("t={t} outside [{lo}, {}]", self.t_max),
            ));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    /// Cumulative signal retention; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    pub fn lambda(&self, t: usize) -> f64 {
        self.lambda[t]
    }

    /// Half-log-SNR at a (possibly fractional) time in (0, T]; fractional
    /// times interpolate lambda linearly between the integer grid points.
    pub fn lambda_of(&self, t: f64) -> Result<f64> {
        if !(t > 0.0 && t <= self.t_max as f64) {
            return Err(Error::range(
                "lambda_of time",
                format!("t={t} outside (0, {}]", self.t_max),
            ));
        }
        let lo = t.floor() as usize;
        let frac = t - lo as f64;
        if frac == 0.0 {
            return Ok(self.lambda[lo]);
        }
        if lo == 0 {
            // lambda(0) diverges; blend against t=1 is undefined below t=1
            return Err(Error::range("lambda_of time", format!("t={t} below 1 is not on the grid")));
        }
        Ok(self.lambda[lo] * (1.0 - frac) + self.lambda[lo + 1] * frac)
    }

    /// Inverse of `lambda_of` under the same piecewise-linear interpolation.
    pub fn t_of_lambda(&self, lam: f64) -> Result<f64> {
        let hi = self.lambda[1];
        let lo = self.lambda[self.t_max];
        if !(lam >= lo && lam <= hi) {
            return Err(Error::range(
                "lambda",
                format!("{lam} outside [{lo}, {hi}]"),
            ));
        }
        // lambda is strictly decreasing over t = 1..=T
        let (mut a, mut b) = (1usize, self.t_max);
        while b - a > 1 {
            let mid = (a + b) / 2;
            if self.lambda[mid] >= lam {
                a = mid;
            } else {
                b = mid;
            }
        }
        if lam == self.lambda[a] {
            return Ok(a as f64);
        }
        if lam == self.lambda[b] {
            return Ok(b as f64);
        }
        let frac = (lam - self.lambda[a]) / (self.lambda[b] - self.lambda[a]);
        Ok(a as f64 + frac)
    }

    /// alpha_bar at fractional times: linear in lambda, so geometric-logistic
    /// in abar space; exact on the integer grid and `1` at t=0.
    pub fn alpha_bar_at(&self, t: f64) -> Result<f64> {
        if t == 0.0 {
            return Ok(1.0);
        }
        if t == t.floor() && t >= 1.0 && t <= self.t_max as f64 {
            return Ok(self.alpha_bar[t as usize]);
        }
        let lam = self.lambda_of(t)?;
        Ok(1.0 / (1.0 + (-2.0 * lam).exp()))
    }

    /// Posterior coefficients of q(x_{t-1} | x_t, x_0) for t in 1..=T.
    pub fn posterior_coeffs(&self, t: usize) -> Result<PosteriorCoeffs> {
        self.check_t(t, 1)?;
        let ab_prev = self.alpha_bar[t - 1];
        let ab = self.alpha_bar[t];
        let beta = self.beta[t];
        Ok(PosteriorCoeffs {
            coef_x0: ab_prev.sqrt() * beta / (1.0 - ab),
            coef_xt: self.alpha[t].sqrt() * (1.0 - ab_prev) / (1.0 - ab),
            variance: (1.0 - ab_prev) / (1.0 - ab) * beta,
        })
    }

    /// Generalized posterior coefficients of q(x_to | x_from, x_0) for a
    /// coarse step; reduces to `posterior_coeffs(t)` when to = from-1.
    pub fn coeffs_between(&self, t_from: f64, t_to: f64) -> Result<PosteriorCoeffs> {
        if !(t_from > t_to && t_to >= 0.0 && t_from <= self.t_max as f64) {
            return Err(Error::range(
                "coarse posterior times",
                format!("need T >= t_from > t_to >= 0, got ({t_from}, {t_to})"),
            ));
        }
        let ab_from = self.alpha_bar_at(t_from)?;
        let ab_to = self.alpha_bar_at(t_to)?;
        let r = ab_from / ab_to;
        Ok(PosteriorCoeffs {
            coef_x0: ab_to.sqrt() * (1.0 - r) / (1.0 - ab_from),
            coef_xt: r.sqrt() * (1.0 - ab_to) / (1.0 - ab_from),
            variance: (1.0 - ab_to) / (1.0 - ab_from) * (1.0 - r),
        })
    }
}

/// Descending inference subsequence tau_i = round(i*T/N), deduplicated.
pub fn subsample_timesteps(t_max: usize, n: usize) -> Result<Vec<usize>> {
    if n < 1 || n > t_max {
        return Err(Error::range(
            "subsequence length",
            format!("need 1 <= N <= T, got N={n}, T={t_max}"),
        ));
    }
    let mut out = Vec::with_capacity(n);
    for i in (1..=n).rev() {
        let tau = ((i as f64 * t_max as f64 / n as f64).round() as usize).max(1);
        if out.last() != Some(&tau) {
            out.push(tau);
        }
    }
    Ok(out)
}

/// Descending inference times with lambda equally spaced between lambda(T)
/// and lambda(1); fractional times are valid sampler inputs.
pub fn times_lambda_uniform(s: &NoiseSchedule, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::range("subsequence length", "uniform-lambda spacing needs N >= 2"));
    }
    let l_hi = s.lambda(1);
    let l_lo = s.lambda(s.t_max());
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let lam = l_lo + (l_hi - l_lo) * i as f64 / (n - 1) as f64;
        out.push(s.t_of_lambda(lam)?);
    }
    // exact endpoints, avoiding float drift at the borders
    out[0] = s.t_max() as f64;
    out[n - 1] = 1.0;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> NoiseSchedule {
        // T=2, beta = (0.1, 0.2) -> alpha_bar = [0.9, 0.72]
        NoiseSchedule::linear(2, 0.1, 0.2).unwrap()
    }

    #[test]
    fn toy_alpha_bar_values() {
        let s = toy();
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-12);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-12);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(1, 0.1, 0.1).unwrap();
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_beta_range() {
        assert!(NoiseSchedule::linear(10, 0.0, 0.02).is_err());
        assert!(NoiseSchedule::linear(10, 0.2, 0.1).is_err());
        assert!(NoiseSchedule::linear(10, 0.5, 1.0).is_err());
        assert!(NoiseSchedule::linear(0, 1e-4, 0.02).is_err());
    }

    #[test]
    fn default_schedule_invariants() {
        let s = NoiseSchedule::default_ddpm();
        // strictly decreasing alpha_bar, terminal in (0, 0.01)
        for t in 1..=s.t_max() {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.alpha_bar(t) > 0.0 && s.alpha_bar(t) < 1.0);
        }
        let terminal = s.alpha_bar(1000);
        assert!(terminal > 0.0 && terminal < 0.01, "abar(T) = {terminal}");
        // exact product identity as computed
        for t in 0..s.t_max() {
            assert_eq!(s.alpha_bar(t) * s.alpha(t + 1), s.alpha_bar(t + 1));
        }
        // lambda strictly decreasing
        for t in 2..=s.t_max() {
            assert!(s.lambda(t) < s.lambda(t - 1));
        }
    }

    #[test]
    fn lambda_values_on_toy_schedule() {
        let s = toy();
        assert!((s.lambda_of(1.0).unwrap() - 0.5 * (0.9f64 / 0.1).ln()).abs() < 1e-12);
        assert!((s.lambda_of(1.0).unwrap() - 1.0986).abs() < 1e-4);
        assert!((s.lambda_of(2.0).unwrap() - 0.4722).abs() < 1e-4);
        assert!(s.lambda_of(0.0).is_err());
    }

    #[test]
    fn lambda_zero_when_alpha_bar_half() {
        // contrive a schedule passing through abar ~ 0.5 and invert at lambda=0
        let s = NoiseSchedule::default_ddpm();
        let t = s.t_of_lambda(0.0).unwrap();
        let ab = s.alpha_bar_at(t).unwrap();
        assert!((ab - 0.5).abs() < 1e-9, "abar at lambda=0 is {ab}");
    }

    #[test]
    fn t_of_lambda_midpoint_and_endpoint() {
        let s = toy();
        let mid = (s.lambda(1) + s.lambda(2)) / 2.0;
        assert!((s.t_of_lambda(mid).unwrap() - 1.5).abs() < 1e-12);
        assert!((s.t_of_lambda(s.lambda(1)).unwrap() - 1.0).abs() < 1e-12);
        assert!(s.t_of_lambda(s.lambda(1) + 1.0).is_err());
    }

    #[test]
    fn round_trip_t_of_lambda() {
        let s = NoiseSchedule::default_ddpm();
        for i in 0..1000u64 {
            // deterministic spread of fractional times in [1, T]
            let t = 1.0 + (i as f64 * 0.999_137).fract() * (s.t_max() as f64 - 1.0);
            let lam = s.lambda_of(t).unwrap();
            let back = s.t_of_lambda(lam).unwrap();
            assert!((back - t).abs() < 1e-9, "t={t} back={back}");
        }
    }

    #[test]
    fn subsample_examples() {
        assert_eq!(subsample_timesteps(8, 4).unwrap(), vec![8, 6, 4, 2]);
        let full = subsample_timesteps(5, 5).unwrap();
        assert_eq!(full, vec![5, 4, 3, 2, 1]);
        let forty = subsample_timesteps(1000, 40).unwrap();
        assert_eq!(forty.len(), 40);
        assert_eq!(forty[0], 1000);
        assert!(forty.windows(2).all(|w| w[0] - w[1] == 25));
        assert!(subsample_timesteps(10, 11).is_err());
    }

    #[test]
    fn posterior_coeffs_toy_values() {
        let s = toy();
        let c = s.posterior_coeffs(2).unwrap();
        assert!((c.coef_x0 - 0.6776).abs() < 1e-4, "{}", c.coef_x0);
        assert!((c.coef_xt - 0.3194).abs() < 1e-4, "{}", c.coef_xt);
        assert!((c.variance - 0.07143).abs() < 1e-5, "{}", c.variance);
        assert_eq!(s.posterior_coeffs(1).unwrap().variance, 0.0);
        assert!(s.posterior_coeffs(3).is_err());
    }

    #[test]
    fn posterior_mean_recovers_scaled_x0() {
        // with x_t = sqrt(abar_t) * x0 (eps = 0), the posterior mean must be
        // sqrt(abar_{t-1}) * x0 — checked over a few random-ish schedules
        for (t_max, b0, b1) in [(10, 0.01, 0.3), (50, 1e-3, 0.05), (1000, 1e-4, 0.02)] {
            let s = NoiseSchedule::linear(t_max, b0, b1).unwrap();
            for t in 1..=t_max {
                let x0 = 0.7;
                let xt = s.alpha_bar(t).sqrt() * x0;
                let c = s.posterior_coeffs(t).unwrap();
                let mean = c.coef_x0 * x0 + c.coef_xt * xt;
                let want = s.alpha_bar(t - 1).sqrt() * x0;
                assert!((mean - want).abs() < 1e-12, "t={t}: {mean} vs {want}");
            }
        }
    }

    #[test]
    fn posterior_variance_below_marginal() {
        let s = NoiseSchedule::default_ddpm();
        for t in 1..=s.t_max() {
            let v = s.posterior_coeffs(t).unwrap().variance;
            assert!(v < 1.0 - s.alpha_bar(t) || t == 1);
            assert!(v >= 0.0);
        }
    }

    #[test]
    fn coarse_coeffs_reduce_to_adjacent() {
        let s = NoiseSchedule::default_ddpm();
        for t in [1usize, 2, 17, 500, 1000] {
            let a = s.posterior_coeffs(t).unwrap();
            let b = s.coeffs_between(t as f64, (t - 1) as f64).unwrap();
            assert!((a.coef_x0 - b.coef_x0).abs() < 1e-12);
            assert!((a.coef_xt - b.coef_xt).abs() < 1e-12);
            assert!((a.variance - b.variance).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_uniform_grid_spans_schedule() {
        let s = NoiseSchedule::default_ddpm();
        let times = times_lambda_uniform(&s, 40).unwrap();
        assert_eq!(times.len(), 40);
        assert_eq!(times[0], 1000.0);
        assert_eq!(times[39], 1.0);
        assert!(times.windows(2).all(|w| w[0] > w[1]));
        // lambda spacing is uniform
        let lams: Vec<f64> = times.iter().map(|&t| s.lambda_of(t).unwrap()).collect();
        let h0 = lams[1] - lams[0];
        for w in lams.windows(2) {
            assert!(((w[1] - w[0]) - h0).abs() < 1e-6);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn alpha_bar_at_matches_grid(t in 1usize..=1000) {
            let s = NoiseSchedule::default_ddpm();
            let exact = s.alpha_bar(t);
            let interp = s.alpha_bar_at(t as f64).unwrap();
            proptest::prop_assert!((exact - interp).abs() < 1e-12);
        }
    }
}

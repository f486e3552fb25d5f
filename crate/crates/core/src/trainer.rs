//! Denoiser training: sample (HR, LR) pairs, timesteps, and noise; build the
//! condition; noise the clean image; regress the model to the clean image
//! (or the noise, in ablation mode); step Adam.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use crate::conditioner::{reduce_and_step, CondMode, Conditioner, ConditionerSpec};
use crate::denoiser::{CondUNet, Denoiser, Objective, UNetConfig};
use crate::error::{Error, Result};
use crate::forward::q_sample;
use crate::imaging::{self, to_diffusion};
use crate::numerics::{checkpoint, AdamHyper, AdamState, Graph, ParamSet, Tensor};
use crate::rng::{self, Domain};
use crate::schedule::NoiseSchedule;

/// Schedule settings as they appear in config files.
#[derive(Debug, Clone, Copy)]
pub struct ScheduleParams {
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams {
            t_max: crate::schedule::DEFAULT_T,
            beta_start: crate::schedule::DEFAULT_BETA_START,
            beta_end: crate::schedule::DEFAULT_BETA_END,
        }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.t_max, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    L2,
    L1,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(LossKind::L2),
            "l1" => Ok(LossKind::L1),
            other => Err(Error::InvalidArg(format!("unknown loss kind {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::L2 => "l2",
            LossKind::L1 => "l1",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub schedule: ScheduleParams,
    pub model: UNetConfig,
    pub batch: usize,
    pub lr: f64,
    pub steps: u64,
    pub objective: Objective,
    pub loss: LossKind,
    pub scale: usize,
    pub patch: usize,
    pub seed: u64,
    pub conditioner: ConditionerSpec,
    pub data_root: PathBuf,
    pub out_dir: PathBuf,
    pub ckpt_every: u64,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: ScheduleParams::default(),
            model: UNetConfig::default(),
            batch: 16,
            lr: 1e-4,
            steps: 1000,
            objective: Objective::Image,
            loss: LossKind::L2,
            scale: 4,
            patch: 32,
            seed: 0,
            conditioner: ConditionerSpec { mode: CondMode::Bicubic, scale: 4 },
            data_root: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            ckpt_every: 0,
            threads: 1,
        }
    }
}

/// One dataset entry: HR and LR images in [0,1], keyed by file stem.
#[derive(Debug, Clone)]
pub struct DataItem {
    pub id: String,
    pub hr: Tensor,
    pub lr: Tensor,
}

/// Load `<root>/hr/*` with matching `<root>/lrX{scale}/*`, sorted by id.
pub fn load_dataset(root: &Path, scale: usize) -> Result<Vec<DataItem>> {
    let hr_dir = root.join("hr");
    let lr_dir = root.join(format!("lrX{scale}"));
    if !hr_dir.is_dir() {
        return Err(Error::Data(format!("missing dataset directory {}", hr_dir.display())));
    }
    if !lr_dir.is_dir() {
        return Err(Error::Data(format!(
            "missing {} (run the degrade command first)",
            lr_dir.display()
        )));
    }
    let mut ids: Vec<(String, PathBuf)> = fs::read_dir(&hr_dir)
        .map_err(|e| Error::io(&hr_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .map(|x| ["ppm", "pgm", "png"].iter().any(|e| x.eq_ignore_ascii_case(e)))
                .unwrap_or(false)
        })
        .map(|p| (p.file_stem().unwrap().to_string_lossy().into_owned(), p))
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Data(format!("no images in {}", hr_dir.display())));
    }
    let mut items = Vec::with_capacity(ids.len());
    for (id, hr_path) in ids {
        let hr = imaging::read_image(&hr_path)?.to_tensor();
        let lr_path = find_with_any_ext(&lr_dir, &id)
            .ok_or_else(|| Error::Data(format!("no LR image for {id} in {}", lr_dir.display())))?;
        let lr = imaging::read_image(&lr_path)?.to_tensor();
        if lr.shape()[1] * scale != hr.shape()[1] || lr.shape()[2] * scale != hr.shape()[2] {
            return Err(Error::shape(
                format!("LR/HR pair {id}"),
                hr.shape(),
                lr.shape(),
            ));
        }
        items.push(DataItem { id, hr, lr });
    }
    Ok(items)
}

pub fn find_with_any_ext(dir: &Path, id: &str) -> Option<PathBuf> {
    ["ppm", "pgm", "png"]
        .iter()
        .map(|e| dir.join(format!("{id}.{e}")))
        .find(|p| p.exists())
}

#[derive(Debug)]
pub struct TrainReport {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub losses: Vec<f64>,
}

/// Run the training loop and write the checkpoint, sidecar metadata, and
/// loss log under `cfg.out_dir`. Deterministic per (config, seed) for any
/// thread count.
pub fn train(cfg: &TrainConfig) -> Result<TrainReport> {
    let data = load_dataset(&cfg.data_root, cfg.scale)?;
    train_on(cfg, &data)
}

/// Same as `train` but with the dataset already in memory.
pub fn train_on(cfg: &TrainConfig, data: &[DataItem]) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::Data("training dataset is empty".into()));
    }
    if cfg.batch < 1 || cfg.steps < 1 {
        return Err(Error::InvalidArg("batch and steps must be >= 1".into()));
    }
    if cfg.patch % 4 != 0 || cfg.patch % cfg.scale != 0 {
        return Err(Error::InvalidArg(format!(
            "patch {} must divide by 4 and by the scale {}",
            cfg.patch, cfg.scale
        )));
    }
    let schedule = cfg.schedule.build()?;
    let conditioner = Conditioner::build(&cfg.conditioner)?;
    let mut net = CondUNet::new(cfg.model, cfg.seed)?;
    let mut adam = AdamState::new(net.params(), AdamHyper { lr: cfg.lr, ..AdamHyper::default() });
    let pool = crate::parallel::pool(cfg.threads)?;

    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let mut losses: Vec<f64> = Vec::with_capacity(cfg.steps as usize);

    for step in 0..cfg.steps {
        let batch = assemble_batch(cfg, data, &conditioner, &schedule, step)?;
        let results: Vec<(f64, Vec<Vec<f64>>)> = pool.install(|| {
            batch
                .par_iter()
                .map(|sample| sample_loss_and_grads(&net, cfg, sample))
                .collect::<Result<_>>()
        })?;
        let loss = reduce_and_step(&mut adam, net.params_mut(), &results)?;
        losses.push(loss);

        if cfg.ckpt_every > 0 && (step + 1) % cfg.ckpt_every == 0 && step + 1 < cfg.steps {
            save_model(&cfg.out_dir.join(format!("model-{:06}.acdt", step + 1)), &net, cfg)?;
        }
    }

    let ckpt = cfg.out_dir.join("model.acdt");
    save_model(&ckpt, &net, cfg)?;
    let loss_csv = cfg.out_dir.join("loss.csv");
    let mut csv = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", i + 1, l));
    }
    fs::write(&loss_csv, csv).map_err(|e| Error::io(&loss_csv, e))?;

    Ok(TrainReport { checkpoint: ckpt, loss_csv, losses })
}

/// One training sample, fully resolved.
struct TrainSample {
    x0: Tensor,   // diffusion domain
    x_t: Tensor,  // noised input
    cond: Tensor, // diffusion domain
    t: usize,
    eps: Tensor,
}

fn assemble_batch(
    cfg: &TrainConfig,
    data: &[DataItem],
    conditioner: &Conditioner,
    schedule: &NoiseSchedule,
    step: u64,
) -> Result<Vec<TrainSample>> {
    let mut batch = Vec::with_capacity(cfg.batch);
    for i in 0..cfg.batch {
        let mut r = rng::stream(cfg.seed, Domain::BatchIndex, step, i as u64);
        let item = &data[r.gen_range(0..data.len())];
        let (c, hh, hw) = (item.hr.shape()[0], item.hr.shape()[1], item.hr.shape()[2]);
        let (hr_patch, lr_patch) = if hh == cfg.patch && hw == cfg.patch {
            (item.hr.clone(), item.lr.clone())
        } else {
            let (y, x) =
                imaging::paired_patch_origin(hh, hw, cfg.patch, cfg.scale, cfg.seed, step, i as u64);
            let hrp = imaging::crop(&item.hr, c, hh, hw, y, x, cfg.patch);
            let (lh, lw) = (item.lr.shape()[1], item.lr.shape()[2]);
            let lrp = imaging::crop(
                &item.lr,
                c,
                lh,
                lw,
                y / cfg.scale,
                x / cfg.scale,
                cfg.patch / cfg.scale,
            );
            (hrp, lrp)
        };
        let cond = conditioner.make_condition(&lr_patch, &item.id)?;
        let x0 = to_diffusion(&hr_patch);
        let counter = step * cfg.batch as u64 + i as u64;
        let t = rng::uniform_timestep(cfg.seed, 0, counter, schedule.t_max());
        // noise keyed by (seed, sample counter, timestep)
        let eps = rng::normal_tensor(cfg.seed, Domain::ForwardNoise, counter, t as u64, x0.shape());
        let ns = q_sample(schedule, &x0, t, &eps)?;
        batch.push(TrainSample { x0, x_t: ns.x_t, cond, t, eps });
    }
    Ok(batch)
}

fn sample_loss_and_grads(
    net: &CondUNet,
    cfg: &TrainConfig,
    sample: &TrainSample,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let bind = net.bind(&mut g);
    let xi = g.input(&sample.x_t);
    let ci = g.input(&sample.cond);
    let out = net.forward(&mut g, &bind, xi, ci, sample.t as f64)?;
    let target = match cfg.objective {
        Objective::Image => g.input(&sample.x0),
        Objective::Noise => g.input(&sample.eps),
    };
    let d = g.sub(out, target)?;
    let loss = match cfg.loss {
        LossKind::L2 => {
            let sq = g.mul(d, d)?;
            g.mean(sq)
        }
        LossKind::L1 => {
            let a = g.abs(d);
            g.mean(a)
        }
    };
    let grads = g.backward(loss)?;
    let gs: Vec<Vec<f64>> = bind.iter().map(|&b| grads.grad_f64(b)).collect();
    Ok((g.scalar(loss), gs))
}

// ── checkpoint + sidecar ────────────────────────────────────────────

fn save_model(path: &Path, net: &CondUNet, cfg: &TrainConfig) -> Result<()> {
    checkpoint::save(path, net.params())?;
    let meta = format!(
        "kind=cond_unet\nimg_channels={}\ncond_channels={}\nbase={}\ntemb_dim={}\nnorm={}\n\
         objective={}\nschedule.T={}\nschedule.beta_start={}\nschedule.beta_end={}\nscale={}\n",
        net.cfg.img_channels,
        net.cfg.cond_channels,
        net.cfg.base,
        net.cfg.temb_dim,
        net.cfg.norm,
        cfg.objective.name(),
        cfg.schedule.t_max,
        cfg.schedule.beta_start,
        cfg.schedule.beta_end,
        cfg.scale,
    );
    let meta_path = path.with_extension("meta");
    fs::write(&meta_path, meta).map_err(|e| Error::io(meta_path, e))
}

/// Rebuild a trained model (and its training-time schedule settings) from a
/// checkpoint and its sidecar.
pub fn load_model(path: &Path) -> Result<(CondUNet, Objective, ScheduleParams, usize)> {
    let meta_path = path.with_extension("meta");
    let meta = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let mut cfg = UNetConfig::default();
    let mut objective = Objective::Image;
    let mut sp = ScheduleParams::default();
    let mut scale = 4usize;
    for line in meta.lines() {
        let Some((k, v)) = line.split_once('=') else { continue };
        match k {
            "img_channels" => cfg.img_channels = parse_meta(v, "img_channels")?,
            "cond_channels" => cfg.cond_channels = parse_meta(v, "cond_channels")?,
            "base" => cfg.base = parse_meta(v, "base")?,
            "temb_dim" => cfg.temb_dim = parse_meta(v, "temb_dim")?,
            "norm" => cfg.norm = v == "true",
            "objective" => objective = Objective::parse(v)?,
            "schedule.T" => sp.t_max = parse_meta(v, "schedule.T")?,
            "schedule.beta_start" => sp.beta_start = parse_meta(v, "schedule.beta_start")?,
            "schedule.beta_end" => sp.beta_end = parse_meta(v, "schedule.beta_end")?,
            "scale" => scale = parse_meta(v, "scale")?,
            _ => {}
        }
    }
    let mut net = CondUNet::new(cfg, 0)?;
    let loaded = checkpoint::load(path)?;
    net.params_mut().load_from(&loaded)?;
    Ok((net, objective, sp, scale))
}

fn parse_meta<T: std::str::FromStr>(v: &str, what: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Data(format!("bad {what} in sidecar: {v}")))
}

// ── oracle-path loss ────────────────────────────────────────────────

/// Batch loss for any Denoiser, without gradients: the Eqeuivalent of the
/// training objective evaluated through the public interface.
pub fn compute_loss(
    model: &dyn Denoiser,
    s: &NoiseSchedule,
    batch: &[(Tensor, Option<Tensor>)],
    ts: &[usize],
    eps: &[Tensor],
    objective: Objective,
) -> Result<f64> {
    if batch.len() != ts.len() || batch.len() != eps.len() {
        return Err(Error::shape("compute_loss batch", &[batch.len()], &[ts.len(), eps.len()]));
    }
    let mut acc = 0.0;
    for ((x0, cond), (&t, e)) in batch.iter().zip(ts.iter().zip(eps)) {
        let ns = q_sample(s, x0, t, e)?;
        let pred = model.denoise(&ns.x_t, t as f64, cond.as_ref())?;
        acc += match objective {
            Objective::Image => pred.mse(x0)?,
            Objective::Noise => {
                let eps_hat = crate::forward::eps_from_x0(s, &ns.x_t, &pred, t)?;
                eps_hat.mse(e)?
            }
        };
    }
    Ok(acc / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::AnalyticGaussianDenoiser;
    use crate::imaging::{degrade, synth_texture, ImageFile};
    use std::sync::Arc;

    struct PerfectDenoiser(Tensor);
    impl Denoiser for PerfectDenoiser {
        fn denoise(&self, _x: &Tensor, _t: f64, _c: Option<&Tensor>) -> Result<Tensor> {
            Ok(self.0.clone())
        }
    }

    struct OffsetDenoiser(Tensor, f32);
    impl Denoiser for OffsetDenoiser {
        fn denoise(&self, _x: &Tensor, _t: f64, _c: Option<&Tensor>) -> Result<Tensor> {
            Ok(self.0.map(|v| v + self.1))
        }
    }

    #[test]
    fn perfect_model_has_zero_loss() {
        let s = NoiseSchedule::default_ddpm();
        let x0 = synth_texture(1, 1, 8, 8);
        let x0d = to_diffusion(&x0);
        let model = PerfectDenoiser(x0d.clone());
        let eps = rng::normal_tensor(1, Domain::ForwardNoise, 0, 0, x0d.shape());
        let loss = compute_loss(
            &model,
            &s,
            &[(x0d.clone(), None)],
            &[500],
            &[eps],
            Objective::Image,
        )
        .unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn constant_offset_gives_squared_offset_loss() {
        let s = NoiseSchedule::default_ddpm();
        let x0d = to_diffusion(&synth_texture(2, 1, 8, 8));
        let model = OffsetDenoiser(x0d.clone(), 0.1);
        let eps = rng::normal_tensor(2, Domain::ForwardNoise, 0, 0, x0d.shape());
        let loss =
            compute_loss(&model, &s, &[(x0d.clone(), None)], &[100], &[eps], Objective::Image)
                .unwrap();
        assert!((loss - 0.01).abs() < 1e-6, "{loss}");
    }

    #[test]
    fn analytic_loss_matches_quadrature_bayes_risk() {
        // Monte Carlo over (x0, eps) at fixed t vs the closed-form/quadrature
        // Bayes risk s2*(1-abar)/(abar*s2 + 1-abar), within 2%
        let s = Arc::new(NoiseSchedule::default_ddpm());
        let (mu, s2) = (0.1, 0.49);
        let model = AnalyticGaussianDenoiser::new(s.clone(), mu, s2).unwrap();
        let t = 400usize;
        let ab = s.alpha_bar(t);

        // quadrature: E_{x0} E_{xt|x0} (x0 - xhat(xt))^2 on dense grids
        let sd = s2.sqrt();
        let n = 1501;
        let mut risk_quad = 0.0;
        let mut wsum = 0.0;
        for i in 0..n {
            let z0 = -6.0 + 12.0 * i as f64 / (n - 1) as f64;
            let w0 = (-z0 * z0 / 2.0).exp();
            let x0 = mu + sd * z0;
            for j in 0..n {
                let z1 = -6.0 + 12.0 * j as f64 / (n - 1) as f64;
                let w1 = (-z1 * z1 / 2.0).exp();
                let xt = ab.sqrt() * x0 + (1.0 - ab).sqrt() * z1;
                let xhat = crate::denoiser::gaussian_posterior_mean(mu, s2, ab, xt);
                risk_quad += w0 * w1 * (x0 - xhat) * (x0 - xhat);
                wsum += w0 * w1;
            }
        }
        risk_quad /= wsum;

        let draws = 100_000usize;
        let mut batch = Vec::with_capacity(draws);
        let mut ts = Vec::with_capacity(draws);
        let mut eps = Vec::with_capacity(draws);
        for i in 0..draws {
            let z = rng::normal_tensor(5, Domain::ForwardNoise, 1, i as u64, &[2]);
            let x0 = (mu + sd * z.data()[0] as f64) as f32;
            batch.push((Tensor::scalar(x0), None));
            ts.push(t);
            eps.push(Tensor::scalar(z.data()[1]));
        }
        let mc = compute_loss(&model, &s, &batch, &ts, &eps, Objective::Image).unwrap();
        let rel = (mc - risk_quad).abs() / risk_quad;
        assert!(rel < 0.02, "mc {mc} vs quadrature {risk_quad} (rel {rel})");
    }

    fn tiny_dataset(n: usize, size: usize, scale: usize) -> Vec<DataItem> {
        (0..n)
            .map(|i| {
                let hr = synth_texture(50 + i as u64, 1, size, size);
                let lr = degrade(&hr, scale).unwrap();
                DataItem { id: format!("t{i}"), hr, lr }
            })
            .collect()
    }

    fn tiny_cfg(dir: &Path, steps: u64) -> TrainConfig {
        TrainConfig {
            model: UNetConfig {
                img_channels: 1,
                cond_channels: 1,
                base: 4,
                temb_dim: 8,
                norm: false,
            },
            batch: 2,
            lr: 1e-3,
            steps,
            patch: 8,
            scale: 4,
            seed: 11,
            conditioner: ConditionerSpec { mode: CondMode::Bicubic, scale: 4 },
            out_dir: dir.to_path_buf(),
            threads: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn missing_dataset_fails_before_any_step() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            data_root: dir.path().join("nope"),
            out_dir: dir.path().join("out"),
            ..TrainConfig::default()
        };
        let err = train(&cfg).unwrap_err();
        assert!(err.to_string().contains("missing dataset"));
        assert!(!dir.path().join("out").exists());
    }

    #[test]
    fn single_batch_overfit_reduces_smoothed_loss() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_dataset(1, 8, 4);
        let cfg = tiny_cfg(dir.path(), 1000);
        let report = train_on(&cfg, &data).unwrap();
        let head: f64 = report.losses[..50].iter().sum::<f64>() / 50.0;
        let tail: f64 = report.losses[report.losses.len() - 50..].iter().sum::<f64>() / 50.0;
        assert!(tail < 0.2 * head, "head {head} tail {tail}");
        assert!(report.checkpoint.exists());
        assert!(report.loss_csv.exists());
        let csv = fs::read_to_string(&report.loss_csv).unwrap();
        assert!(csv.starts_with("step,loss\n"));
        assert_eq!(csv.lines().count(), 1001);
    }

    #[test]
    fn zero_lr_keeps_parameters_and_logs_noise() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_dataset(2, 8, 4);
        let mut cfg = tiny_cfg(dir.path(), 10);
        cfg.lr = 0.0;
        let report = train_on(&cfg, &data).unwrap();
        let fresh = CondUNet::new(cfg.model, cfg.seed).unwrap();
        let (net, _, _, _) = load_model(&report.checkpoint).unwrap();
        for i in 0..fresh.params().len() {
            assert_eq!(net.params().value(i).data(), fresh.params().value(i).data());
        }
    }

    #[test]
    fn same_seed_gives_byte_identical_checkpoints_across_threads() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_dataset(2, 8, 4);
        let mut bytes = Vec::new();
        for (run, threads) in [(0, 1usize), (1, 1), (2, 4)] {
            let mut cfg = tiny_cfg(&dir.path().join(format!("run{run}")), 25);
            cfg.threads = threads;
            let report = train_on(&cfg, &data).unwrap();
            bytes.push(fs::read(&report.checkpoint).unwrap());
        }
        assert_eq!(bytes[0], bytes[1]);
        assert_eq!(bytes[0], bytes[2]);
    }

    #[test]
    fn model_round_trips_through_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let data = tiny_dataset(1, 8, 4);
        let cfg = tiny_cfg(dir.path(), 3);
        let report = train_on(&cfg, &data).unwrap();
        let (net, objective, sp, scale) = load_model(&report.checkpoint).unwrap();
        assert_eq!(objective, Objective::Image);
        assert_eq!(sp.t_max, 1000);
        assert_eq!(scale, 4);
        let x = synth_texture(1, 1, 8, 8);
        let out = net.predict(&to_diffusion(&x), 3.0, &to_diffusion(&x)).unwrap();
        assert!(out.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn timestep_draws_are_chi_square_uniform() {
        // the exact keying the trainer uses, 1e5 draws over T=1000 bins,
        // Wilson-Hilferty 99th percentile threshold
        let t_max = 1000usize;
        let draws = 100_000u64;
        let mut counts = vec![0u64; t_max];
        for counter in 0..draws {
            let t = rng::uniform_timestep(123, 0, counter, t_max);
            counts[t - 1] += 1;
        }
        let expected = draws as f64 / t_max as f64;
        let stat: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        let k = (t_max - 1) as f64;
        let z99 = 2.3263478740408408f64;
        let threshold = k * (1.0 - 2.0 / (9.0 * k) + z99 * (2.0 / (9.0 * k)).sqrt()).powi(3);
        assert!(stat < threshold, "chi2 {stat} >= {threshold}");
    }

    #[test]
    fn forward_identity_holds_on_assembled_batches() {
        let s = NoiseSchedule::default_ddpm();
        for counter in 0..32u64 {
            let x0 = to_diffusion(&synth_texture(counter, 1, 8, 8));
            let t = rng::uniform_timestep(7, 0, counter, s.t_max());
            let eps = rng::normal_tensor(7, Domain::ForwardNoise, counter, t as u64, x0.shape());
            let ns = q_sample(&s, &x0, t, &eps).unwrap();
            let a = s.alpha_bar(t).sqrt() as f32;
            let b = s.sigma(t) as f32;
            for ((&xt, &x), &e) in ns.x_t.data().iter().zip(x0.data()).zip(eps.data()) {
                assert!((xt - a * x - b * e).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dataset_loader_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        fs::create_dir_all(root.join("hr")).unwrap();
        fs::create_dir_all(root.join("lrX4")).unwrap();
        for i in 0..3 {
            let hr = synth_texture(i, 3, 16, 16);
            let lr = degrade(&hr, 4).unwrap();
            imaging::write_image(&ImageFile::from_tensor(&hr).unwrap(), &root.join(format!("hr/im{i}.ppm"))).unwrap();
            imaging::write_image(&ImageFile::from_tensor(&lr).unwrap(), &root.join(format!("lrX4/im{i}.ppm"))).unwrap();
        }
        let items = load_dataset(root, 4).unwrap();
        assert_eq!(items.len(), 3);
        assert_eq!(items[0].id, "im0");
        assert_eq!(items[0].hr.shape(), &[3, 16, 16]);
        assert_eq!(items[0].lr.shape(), &[3, 4, 4]);
        assert!(load_dataset(&root.join("nope"), 4).is_err());
    }
}

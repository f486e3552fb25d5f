use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use acdmsr_core::conditioner::{CondMode, Conditioner, ConditionerSpec};
use acdmsr_core::denoiser::{Denoiser, DenoiserModel};
use acdmsr_core::forward::q_sample;
use acdmsr_core::imaging::{self, ImageFile};
use acdmsr_core::metrics;
use acdmsr_core::numerics::Tensor;
use acdmsr_core::oracle;
use acdmsr_core::parallel;
use acdmsr_core::rng::{self, Domain};
use acdmsr_core::samplers::{self, run_chain, run_chain_traced, SamplerKind, SamplerSpec};
use acdmsr_core::schedule::{subsample_timesteps, NoiseSchedule};
use acdmsr_core::trainer::{self, load_dataset, DataItem};

use crate::config::RunConfig;
use crate::CmdError;

type CmdResult = Result<(), CmdError>;

// ── degrade ─────────────────────────────────────────────────────────

pub fn degrade(
    root: &Path,
    scale: usize,
    synth: Option<usize>,
    synth_size: usize,
    synth_channels: usize,
    seed: u64,
) -> CmdResult {
    if scale == 0 {
        return Err(CmdError::Usage("scale must be positive".into()));
    }
    let hr_dir = root.join("hr");
    if let Some(n) = synth {
        fs::create_dir_all(&hr_dir)
            .map_err(|e| CmdError::Data(format!("cannot create {}: {e}", hr_dir.display())))?;
        for i in 0..n {
            let tex = imaging::synth_texture(seed.wrapping_add(i as u64), synth_channels, synth_size, synth_size);
            let img = ImageFile::from_tensor(&tex)?;
            imaging::write_image(&img, &hr_dir.join(format!("tex{i:04}.ppm")))?;
        }
        println!("generated {n} textures in {}", hr_dir.display());
    }
    if !hr_dir.is_dir() {
        return Err(CmdError::Data(format!("missing HR directory {}", hr_dir.display())));
    }
    let lr_dir = root.join(format!("lrX{scale}"));
    fs::create_dir_all(&lr_dir)
        .map_err(|e| CmdError::Data(format!("cannot create {}: {e}", lr_dir.display())))?;

    let mut failures = Vec::new();
    let mut processed = 0usize;
    for (id, path) in list_image_files(&hr_dir)? {
        let result = (|| -> Result<(), acdmsr_core::Error> {
            let hr = imaging::read_image(&path)?.to_tensor();
            let lr = imaging::degrade(&hr, scale)?;
            let img = ImageFile::from_tensor(&lr)?;
            imaging::write_image(&img, &lr_dir.join(format!("{id}.ppm")))
        })();
        match result {
            Ok(()) => processed += 1,
            Err(e) => {
                eprintln!("{id}: {e}");
                failures.push(id);
            }
        }
    }
    let snapshot = format!(
        "command=degrade\nroot={}\nscale={scale}\nsynth={}\nsynth_size={synth_size}\nsynth_channels={synth_channels}\nseed={seed}\n",
        root.display(),
        synth.map(|n| n.to_string()).unwrap_or_else(|| "none".into()),
    );
    fs::write(lr_dir.join("config.resolved.txt"), snapshot)
        .map_err(|e| CmdError::Data(format!("cannot write snapshot: {e}")))?;
    println!("degraded {processed} images into {}", lr_dir.display());
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CmdError::Data(format!("{} files failed: {}", failures.len(), failures.join(", "))))
    }
}

// ── train ───────────────────────────────────────────────────────────

pub fn train(
    config: &Path,
    data_root: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    steps: Option<u64>,
) -> CmdResult {
    let mut cfg = RunConfig::load(config)?;
    if let Some(d) = data_root {
        cfg.data_root = d;
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = steps {
        cfg.trainer_steps = n;
    }
    let threads = parallel::threads_from_env();
    let tc = cfg.train_config(threads)?;
    cfg.write_snapshot(&cfg.out_dir)?;
    let report = trainer::train(&tc)?;
    let last = report.losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {} steps; final loss {last:.6}; checkpoint {}",
        report.losses.len(),
        report.checkpoint.display()
    );
    Ok(())
}

// ── sample ──────────────────────────────────────────────────────────

#[allow(clippy::too_many_arguments)]
pub fn sample(
    config: &Path,
    checkpoint: &Path,
    input: &Path,
    out: &Path,
    sampler: Option<String>,
    steps: Option<usize>,
    seed: Option<u64>,
    dump_frames: bool,
) -> CmdResult {
    let mut cfg = RunConfig::load(config)?;
    if let Some(k) = sampler {
        cfg.sampler_kind = SamplerKind::parse(&k)?;
    }
    if let Some(n) = steps {
        cfg.sampler_steps = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }

    let (model, schedule, scale) = load_denoiser(checkpoint, &cfg)?;
    let conditioner = Conditioner::build(&cfg.conditioner_spec()?)?;
    if conditioner.scale() != scale {
        return Err(CmdError::Data(format!(
            "conditioner scale {} does not match checkpoint scale {scale}",
            conditioner.scale()
        )));
    }
    let spec = SamplerSpec::new(
        &schedule,
        cfg.sampler_kind,
        cfg.sampler_steps,
        cfg.sampler_spacing,
        cfg.sampler_clip_x0,
        cfg.seed,
    )?;

    let inputs = list_image_files(input)?;
    if inputs.is_empty() {
        return Err(CmdError::Data(format!("no images in {}", input.display())));
    }
    fs::create_dir_all(out).map_err(|e| CmdError::Data(format!("cannot create out dir: {e}")))?;
    cfg.write_snapshot(out)?;

    let pool = parallel::pool(parallel::threads_from_env())?;
    let results: Vec<Result<String, acdmsr_core::Error>> = pool.install(|| {
        inputs
            .par_iter()
            .enumerate()
            .map(|(idx, (id, path))| {
                let lr = imaging::read_image(path)?.to_tensor();
                let cond = conditioner.make_condition(&lr, id)?;
                let shape = cond.shape().to_vec();
                if dump_frames {
                    let frames_dir = out.join("frames").join(id);
                    fs::create_dir_all(&frames_dir)
                        .map_err(|e| acdmsr_core::Error::io(&frames_dir, e))?;
                    let x_t = rng::normal_tensor(spec.seed, Domain::ChainStart, idx as u64, 0, &shape);
                    let mut chain = rng::stream(spec.seed, Domain::ChainNoise, idx as u64, 0);
                    let mut trace = Vec::new();
                    let _ = run_chain_traced(
                        &schedule,
                        model.as_ref(),
                        spec.kind,
                        &spec.times,
                        Some(&cond),
                        &x_t,
                        Some(&mut chain),
                        Some(&mut trace),
                    )?;
                    for (k, state) in trace.iter().enumerate() {
                        let img = ImageFile::from_tensor(&imaging::from_diffusion(state))?;
                        imaging::write_image(&img, &frames_dir.join(format!("{k:04}.ppm")))?;
                    }
                }
                let sr = samplers::sample(
                    &schedule,
                    model.as_ref(),
                    &spec,
                    Some(&cond),
                    &shape,
                    idx as u64,
                )?;
                let img = ImageFile::from_tensor(&sr)?;
                imaging::write_image(&img, &out.join(format!("{id}.ppm")))?;
                Ok(id.clone())
            })
            .collect()
    });
    let mut done = 0;
    for r in results {
        r?;
        done += 1;
    }
    println!("super-resolved {done} images into {}", out.display());
    Ok(())
}

// ── bench-steps ─────────────────────────────────────────────────────

pub fn bench_steps(
    config: &Path,
    checkpoint: Option<PathBuf>,
    steps_list: &str,
    samplers_arg: Option<String>,
    analytic: bool,
    out: &Path,
) -> CmdResult {
    let cfg = RunConfig::load(config)?;
    let steps: Vec<usize> = steps_list
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| CmdError::Usage(format!("bad step count {s}"))))
        .collect::<Result<_, _>>()?;
    let mut kinds: Vec<SamplerKind> = match samplers_arg {
        Some(list) => list
            .split(',')
            .map(|s| SamplerKind::parse(s.trim()).map_err(CmdError::from))
            .collect::<Result<_, _>>()?,
        None => vec![SamplerKind::Ancestral, SamplerKind::FirstOrder, SamplerKind::SecondOrder],
    };
    kinds.sort();
    kinds.dedup();

    struct Row {
        kind: SamplerKind,
        n: usize,
        psnr: f64,
        ssim: f64,
        wall_ms: u128,
    }
    let mut rows: Vec<Row> = Vec::new();

    if analytic {
        let schedule = Arc::new(cfg.schedule.build()?);
        let model = acdmsr_core::denoiser::AnalyticGaussianDenoiser::new(
            schedule.clone(),
            oracle::ANALYTIC_MU,
            oracle::ANALYTIC_S2,
        )?;
        let chains = 1000usize;
        let z = rng::normal_tensor(cfg.seed, Domain::ChainStart, 1, 0, &[chains]);
        let x0 = z.map(|v| (oracle::ANALYTIC_MU + oracle::ANALYTIC_S2.sqrt() * v as f64) as f32);
        let eps = rng::normal_tensor(cfg.seed, Domain::ChainStart, 2, 0, &[chains]);
        let x_t = q_sample(&schedule, &x0, schedule.t_max(), &eps)?.x_t;
        for &kind in &kinds {
            for &n in &steps {
                let grid: Vec<f64> = subsample_timesteps(schedule.t_max(), n)?
                    .into_iter()
                    .map(|t| t as f64)
                    .collect();
                let start = Instant::now();
                let mut chain_rng = rng::stream(cfg.seed, Domain::ChainNoise, 0, 0);
                let term = run_chain(&schedule, &model, kind, &grid, None, &x_t, Some(&mut chain_rng))?;
                let wall = start.elapsed().as_millis();
                let psnr = 10.0 * (4.0 / term.mse(&x0)?).log10();
                rows.push(Row { kind, n, psnr, ssim: f64::NAN, wall_ms: wall });
            }
        }
    } else {
        let ckpt = checkpoint
            .ok_or_else(|| CmdError::Usage("--checkpoint required without --analytic".into()))?;
        let (model, schedule, scale) = load_denoiser(&ckpt, &cfg)?;
        let conditioner = Conditioner::build(&cfg.conditioner_spec()?)?;
        let holdout_root = cfg.data_holdout.clone().unwrap_or_else(|| cfg.data_root.clone());
        let items = load_dataset(&holdout_root, scale)?;
        let pool = parallel::pool(parallel::threads_from_env())?;
        for &kind in &kinds {
            for &n in &steps {
                let spec = SamplerSpec::new(
                    &schedule,
                    kind,
                    n,
                    cfg.sampler_spacing,
                    cfg.sampler_clip_x0,
                    cfg.seed,
                )?;
                let start = Instant::now();
                let (psnr, ssim) =
                    eval_holdout(&schedule, model.as_ref(), &conditioner, &spec, &items, &pool)?;
                rows.push(Row { kind, n, psnr, ssim, wall_ms: start.elapsed().as_millis() });
            }
        }
    }

    rows.sort_by(|a, b| (a.kind, a.n).cmp(&(b.kind, b.n)));
    let mut csv = String::from("sampler,steps,psnr,ssim,wall_ms\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{:.4},{},{}\n",
            r.kind.name(),
            r.n,
            r.psnr,
            if r.ssim.is_nan() { "nan".to_string() } else { format!("{:.5}", r.ssim) },
            r.wall_ms
        ));
    }
    write_text(out, &csv)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        cfg.write_snapshot(dir)?;
    }
    print!("{csv}");
    Ok(())
}

// ── oracle-check ────────────────────────────────────────────────────

pub fn oracle_check(seed: u64) -> CmdResult {
    let start = Instant::now();
    let checks = oracle::run_all(seed)?;
    let mut failed = 0;
    for c in &checks {
        println!("[{}] {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        if !c.pass {
            failed += 1;
        }
    }
    println!("oracle-check finished in {:.1}s", start.elapsed().as_secs_f64());
    if failed > 0 {
        Err(CmdError::CheckFailed(format!("{failed} of {} oracle checks failed", checks.len())))
    } else {
        Ok(())
    }
}

// ── ablate ──────────────────────────────────────────────────────────

pub fn ablate(config: &Path, mode: &str, checkpoint: Option<PathBuf>, out: &Path) -> CmdResult {
    let cfg = RunConfig::load(config)?;
    let holdout_root = cfg.data_holdout.clone().unwrap_or_else(|| cfg.data_root.clone());
    let pool = parallel::pool(parallel::threads_from_env())?;

    let mut csv = String::from("variant,psnr,ssim\n");
    match mode {
        "condition" => {
            let ckpt = checkpoint
                .ok_or_else(|| CmdError::Usage("--checkpoint required for condition mode".into()))?;
            let (model, schedule, scale) = load_denoiser(&ckpt, &cfg)?;
            let items = load_dataset(&holdout_root, scale)?;
            let spec = SamplerSpec::new(
                &schedule,
                cfg.sampler_kind,
                cfg.sampler_steps,
                cfg.sampler_spacing,
                cfg.sampler_clip_x0,
                cfg.seed,
            )?;
            let learned_ckpt = cfg.conditioner_checkpoint.clone().ok_or_else(|| {
                CmdError::Usage("condition ablation needs conditioner.checkpoint for the learned row".into())
            })?;
            let variants = [
                ("raw_lr", CondMode::Nearest),
                ("bicubic", CondMode::Bicubic),
                ("learned", CondMode::Learned(learned_ckpt)),
            ];
            for (name, mode) in variants {
                let conditioner = Conditioner::build(&ConditionerSpec { mode, scale })?;
                let (psnr, ssim) =
                    eval_holdout(&schedule, model.as_ref(), &conditioner, &spec, &items, &pool)?;
                csv.push_str(&format!("{name},{psnr:.4},{ssim:.5}\n"));
            }
        }
        "objective" => {
            let items = load_dataset(&holdout_root, cfg.conditioner_scale)?;
            for objective in [
                acdmsr_core::denoiser::Objective::Image,
                acdmsr_core::denoiser::Objective::Noise,
            ] {
                let mut run_cfg = cfg.clone();
                run_cfg.trainer_objective = objective;
                run_cfg.out_dir = cfg.out_dir.join(format!("ablate-{}", objective.name()));
                let tc = run_cfg.train_config(parallel::threads_from_env())?;
                run_cfg.write_snapshot(&run_cfg.out_dir)?;
                let report = trainer::train(&tc)?;
                let (model, schedule, scale) = load_denoiser(&report.checkpoint, &run_cfg)?;
                let conditioner = Conditioner::build(&run_cfg.conditioner_spec()?)?;
                let spec = SamplerSpec::new(
                    &schedule,
                    run_cfg.sampler_kind,
                    run_cfg.sampler_steps,
                    run_cfg.sampler_spacing,
                    run_cfg.sampler_clip_x0,
                    run_cfg.seed,
                )?;
                let items_scaled =
                    if scale == cfg.conditioner_scale { &items } else { &load_dataset(&holdout_root, scale)? };
                let (psnr, ssim) =
                    eval_holdout(&schedule, model.as_ref(), &conditioner, &spec, items_scaled, &pool)?;
                csv.push_str(&format!("{},{psnr:.4},{ssim:.5}\n", objective.name()));
            }
        }
        other => return Err(CmdError::Usage(format!("unknown ablate mode {other}"))),
    }
    write_text(out, &csv)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        cfg.write_snapshot(dir)?;
    }
    print!("{csv}");
    Ok(())
}

// ── shared helpers ──────────────────────────────────────────────────

fn load_denoiser(
    checkpoint: &Path,
    cfg: &RunConfig,
) -> Result<(Box<DenoiserModel>, Arc<NoiseSchedule>, usize), CmdError> {
    let (net, objective, sched_params, scale) = trainer::load_model(checkpoint)?;
    let schedule = Arc::new(sched_params.build()?);
    let model = Box::new(DenoiserModel {
        net,
        schedule: schedule.clone(),
        objective,
        clip_x0: cfg.sampler_clip_x0,
    });
    Ok((model, schedule, scale))
}

/// Mean PSNR/SSIM of sampled outputs against HR over a holdout set.
fn eval_holdout(
    schedule: &Arc<NoiseSchedule>,
    model: &dyn Denoiser,
    conditioner: &Conditioner,
    spec: &SamplerSpec,
    items: &[DataItem],
    pool: &rayon::ThreadPool,
) -> Result<(f64, f64), CmdError> {
    if items.is_empty() {
        return Err(CmdError::Data("empty holdout set".into()));
    }
    let scores: Vec<(f64, f64)> = pool.install(|| {
        items
            .par_iter()
            .enumerate()
            .map(|(idx, item)| {
                let cond = conditioner.make_condition(&item.lr, &item.id)?;
                let sr = samplers::sample(
                    schedule,
                    model,
                    spec,
                    Some(&cond),
                    &cond.shape().to_vec(),
                    idx as u64,
                )?;
                let p = metrics::psnr(&item.hr, &sr)?;
                let s = metrics::ssim(&item.hr, &sr)?;
                Ok((p, s))
            })
            .collect::<Result<_, acdmsr_core::Error>>()
    })?;
    let n = scores.len() as f64;
    Ok((
        scores.iter().map(|(p, _)| p).sum::<f64>() / n,
        scores.iter().map(|(_, s)| s).sum::<f64>() / n,
    ))
}

fn list_image_files(dir: &Path) -> Result<Vec<(String, PathBuf)>, CmdError> {
    if !dir.is_dir() {
        return Err(CmdError::Data(format!("not a directory: {}", dir.display())));
    }
    let mut out: Vec<(String, PathBuf)> = fs::read_dir(dir)
        .map_err(|e| CmdError::Data(format!("cannot list {}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .map(|x| ["ppm", "pgm", "png"].iter().any(|e| x.eq_ignore_ascii_case(e)))
                .unwrap_or(false)
        })
        .map(|p| (p.file_stem().unwrap().to_string_lossy().into_owned(), p))
        .collect();
    out.sort();
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> CmdResult {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| CmdError::Data(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CmdError::Data(format!("cannot write {}: {e}", path.display())))
}

// unused import guard: Tensor appears in signatures via core types
#[allow(unused)]
fn _t(_: &Tensor) {}

//! Flat key=value run configuration (UTF-8, `#` comments). Unknown keys are
//! rejected; every command snapshots the fully resolved config into its
//! output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use acdmsr_core::conditioner::{CondMode, ConditionerSpec};
use acdmsr_core::denoiser::{Objective, UNetConfig};
use acdmsr_core::samplers::{SamplerKind, Spacing};
use acdmsr_core::trainer::{LossKind, ScheduleParams, TrainConfig};

use crate::CmdError;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub schedule_kind: String,
    pub schedule: ScheduleParams,
    pub model_channels: usize,
    pub model_base_width: usize,
    pub model_temb_dim: usize,
    pub model_norm: bool,
    pub trainer_batch: usize,
    pub trainer_lr: f64,
    pub trainer_steps: u64,
    pub trainer_objective: Objective,
    pub trainer_loss: LossKind,
    pub trainer_patch: usize,
    pub trainer_ckpt_every: u64,
    pub sampler_kind: SamplerKind,
    pub sampler_steps: usize,
    pub sampler_clip_x0: bool,
    pub sampler_spacing: Spacing,
    pub conditioner_mode: String,
    pub conditioner_scale: usize,
    pub conditioner_dir: Option<PathBuf>,
    pub conditioner_checkpoint: Option<PathBuf>,
    pub data_root: PathBuf,
    pub data_holdout: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            schedule_kind: "linear".into(),
            schedule: ScheduleParams::default(),
            model_channels: 3,
            model_base_width: 32,
            model_temb_dim: 64,
            model_norm: false,
            trainer_batch: 16,
            trainer_lr: 1e-4,
            trainer_steps: 2000,
            trainer_objective: Objective::Image,
            trainer_loss: LossKind::L2,
            trainer_patch: 32,
            trainer_ckpt_every: 0,
            sampler_kind: SamplerKind::SecondOrder,
            sampler_steps: 40,
            sampler_clip_x0: true,
            sampler_spacing: Spacing::UniformT,
            conditioner_mode: "bicubic".into(),
            conditioner_scale: 4,
            conditioner_dir: None,
            conditioner_checkpoint: None,
            data_root: PathBuf::from("data"),
            data_holdout: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CmdError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CmdError::Data(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CmdError> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CmdError::Usage(format!(
                    "config line {}: expected key=value, got {raw:?}",
                    lineno + 1
                )));
            };
            cfg.set(key.trim(), value.trim())
                .map_err(|e| CmdError::Usage(format!("config line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        fn p<T: std::str::FromStr>(v: &str, key: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("bad value {v:?} for {key}"))
        }
        match key {
            "seed" => self.seed = p(v, key)?,
            "schedule.kind" => {
                if v != "linear" {
                    return Err(format!("unsupported schedule.kind {v}"));
                }
                self.schedule_kind = v.into();
            }
            "schedule.T" => self.schedule.t_max = p(v, key)?,
            "schedule.beta_start" => self.schedule.beta_start = p(v, key)?,
            "schedule.beta_end" => self.schedule.beta_end = p(v, key)?,
            "model.channels" => self.model_channels = p(v, key)?,
            "model.base_width" => self.model_base_width = p(v, key)?,
            "model.temb_dim" => self.model_temb_dim = p(v, key)?,
            "model.norm" => self.model_norm = p(v, key)?,
            "trainer.batch" => self.trainer_batch = p(v, key)?,
            "trainer.lr" => self.trainer_lr = p(v, key)?,
            "trainer.steps" => self.trainer_steps = p(v, key)?,
            "trainer.objective" => {
                self.trainer_objective = Objective::parse(v).map_err(|e| e.to_string())?
            }
            "trainer.loss" => self.trainer_loss = LossKind::parse(v).map_err(|e| e.to_string())?,
            "trainer.patch" => self.trainer_patch = p(v, key)?,
            "trainer.ckpt_every" => self.trainer_ckpt_every = p(v, key)?,
            "sampler.kind" => {
                self.sampler_kind = SamplerKind::parse(v).map_err(|e| e.to_string())?
            }
            "sampler.steps" => self.sampler_steps = p(v, key)?,
            "sampler.clip_x0" => self.sampler_clip_x0 = p(v, key)?,
            "sampler.spacing" => {
                self.sampler_spacing = Spacing::parse(v).map_err(|e| e.to_string())?
            }
            "conditioner.mode" => {
                if !["bicubic", "nearest", "file", "learned"].contains(&v) {
                    return Err(format!("unknown conditioner.mode {v}"));
                }
                self.conditioner_mode = v.into();
            }
            "conditioner.scale" => self.conditioner_scale = p(v, key)?,
            "conditioner.dir" => self.conditioner_dir = Some(PathBuf::from(v)),
            "conditioner.checkpoint" => self.conditioner_checkpoint = Some(PathBuf::from(v)),
            "data.root" => self.data_root = PathBuf::from(v),
            "data.holdout" => self.data_holdout = Some(PathBuf::from(v)),
            "out.dir" => self.out_dir = PathBuf::from(v),
            other => return Err(format!("unknown key {other}")),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), CmdError> {
        if self.trainer_batch < 1 || self.trainer_steps < 1 {
            return Err(CmdError::Usage("trainer.batch and trainer.steps must be >= 1".into()));
        }
        match self.conditioner_mode.as_str() {
            "file" if self.conditioner_dir.is_none() => {
                return Err(CmdError::Usage("conditioner.mode=file needs conditioner.dir".into()))
            }
            "learned" if self.conditioner_checkpoint.is_none() => {
                return Err(CmdError::Usage(
                    "conditioner.mode=learned needs conditioner.checkpoint".into(),
                ))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn conditioner_spec(&self) -> Result<ConditionerSpec, CmdError> {
        let mode = match self.conditioner_mode.as_str() {
            "bicubic" => CondMode::Bicubic,
            "nearest" => CondMode::Nearest,
            "file" => CondMode::File(self.conditioner_dir.clone().unwrap()),
            "learned" => CondMode::Learned(self.conditioner_checkpoint.clone().unwrap()),
            other => return Err(CmdError::Usage(format!("unknown conditioner mode {other}"))),
        };
        Ok(ConditionerSpec { mode, scale: self.conditioner_scale })
    }

    pub fn unet_config(&self) -> UNetConfig {
        UNetConfig {
            img_channels: self.model_channels,
            cond_channels: self.model_channels,
            base: self.model_base_width,
            temb_dim: self.model_temb_dim,
            norm: self.model_norm,
        }
    }

    pub fn train_config(&self, threads: usize) -> Result<TrainConfig, CmdError> {
        Ok(TrainConfig {
            schedule: self.schedule,
            model: self.unet_config(),
            batch: self.trainer_batch,
            lr: self.trainer_lr,
            steps: self.trainer_steps,
            objective: self.trainer_objective,
            loss: self.trainer_loss,
            scale: self.conditioner_scale,
            patch: self.trainer_patch,
            seed: self.seed,
            conditioner: self.conditioner_spec()?,
            data_root: self.data_root.clone(),
            out_dir: self.out_dir.clone(),
            ckpt_every: self.trainer_ckpt_every,
            threads,
        })
    }

    /// Fully resolved key=value view, sorted, for the run snapshot.
    pub fn resolved(&self) -> String {
        let mut map = BTreeMap::new();
        map.insert("seed", self.seed.to_string());
        map.insert("schedule.kind", self.schedule_kind.clone());
        map.insert("schedule.T", self.schedule.t_max.to_string());
        map.insert("schedule.beta_start", self.schedule.beta_start.to_string());
        map.insert("schedule.beta_end", self.schedule.beta_end.to_string());
        map.insert("model.channels", self.model_channels.to_string());
        map.insert("model.base_width", self.model_base_width.to_string());
        map.insert("model.temb_dim", self.model_temb_dim.to_string());
        map.insert("model.norm", self.model_norm.to_string());
        map.insert("trainer.batch", self.trainer_batch.to_string());
        map.insert("trainer.lr", self.trainer_lr.to_string());
        map.insert("trainer.steps", self.trainer_steps.to_string());
        map.insert("trainer.objective", self.trainer_objective.name().to_string());
        map.insert("trainer.loss", self.trainer_loss.name().to_string());
        map.insert("trainer.patch", self.trainer_patch.to_string());
        map.insert("trainer.ckpt_every", self.trainer_ckpt_every.to_string());
        map.insert("sampler.kind", self.sampler_kind.name().to_string());
        map.insert("sampler.steps", self.sampler_steps.to_string());
        map.insert("sampler.clip_x0", self.sampler_clip_x0.to_string());
        map.insert(
            "sampler.spacing",
            match self.sampler_spacing {
                Spacing::UniformT => "uniform_t".to_string(),
                Spacing::UniformLambda => "uniform_lambda".to_string(),
            },
        );
        map.insert("conditioner.mode", self.conditioner_mode.clone());
        map.insert("conditioner.scale", self.conditioner_scale.to_string());
        if let Some(d) = &self.conditioner_dir {
            map.insert("conditioner.dir", d.display().to_string());
        }
        if let Some(c) = &self.conditioner_checkpoint {
            map.insert("conditioner.checkpoint", c.display().to_string());
        }
        map.insert("data.root", self.data_root.display().to_string());
        if let Some(h) = &self.data_holdout {
            map.insert("data.holdout", h.display().to_string());
        }
        map.insert("out.dir", self.out_dir.display().to_string());

        let mut out = String::new();
        for (k, v) in map {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<(), CmdError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CmdError::Data(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join("config.resolved.txt");
        std::fs::write(&path, self.resolved())
            .map_err(|e| CmdError::Data(format!("cannot write {}: {e}", path.display())))
    }
}

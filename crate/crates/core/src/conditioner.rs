//! Condition-image producers: bicubic upsampling, nearest-neighbor (raw LR),
//! ingested precomputed SR files, or a small trainable residual SR CNN.
//!
//! Conditions are returned at HR resolution in the diffusion domain [-1,1].

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{bicubic_resize, nearest_upsample, read_image, to_diffusion};
use crate::numerics::{
    adam_step, checkpoint, AdamHyper, AdamState, Graph, NodeId, PadMode, ParamSet, Tensor,
};
use crate::rng::{normal_tensor, Domain};

/// How the condition image x_c is produced from the LR input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CondMode {
    Bicubic,
    /// Raw-LR conditioning, shaped by nearest-neighbor upsampling.
    Nearest,
    /// Directory of precomputed SR images (one per sample id).
    File(PathBuf),
    /// Checkpoint of a trained SR CNN.
    Learned(PathBuf),
}

impl CondMode {
    pub fn name(&self) -> &'static str {
        match self {
            CondMode::Bicubic => "bicubic",
            CondMode::Nearest => "nearest",
            CondMode::File(_) => "file",
            CondMode::Learned(_) => "learned",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConditionerSpec {
    pub mode: CondMode,
    pub scale: usize,
}

impl ConditionerSpec {
    pub fn validate(&self) -> Result<()> {
        if ![2, 3, 4, 8].contains(&self.scale) {
            return Err(Error::InvalidArg(format!("scale must be 2, 3, 4, or 8, got {}", self.scale)));
        }
        Ok(())
    }
}

enum Built {
    Bicubic,
    Nearest,
    File(PathBuf),
    Learned(Box<SrCnn>),
}

/// A resolved conditioner; immutable after construction.
pub struct Conditioner {
    built: Built,
    scale: usize,
}

impl Conditioner {
    pub fn build(spec: &ConditionerSpec) -> Result<Self> {
        spec.validate()?;
        let built = match &spec.mode {
            CondMode::Bicubic => Built::Bicubic,
            CondMode::Nearest => Built::Nearest,
            CondMode::File(dir) => Built::File(dir.clone()),
            CondMode::Learned(ckpt) => Built::Learned(Box::new(SrCnn::load(ckpt)?)),
        };
        Ok(Conditioner { built, scale: spec.scale })
    }

    /// Wrap an in-memory SR net (used by training pipelines and ablations).
    pub fn from_net(net: SrCnn, scale: usize) -> Self {
        Conditioner { built: Built::Learned(Box::new(net)), scale }
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    /// Produce x_c at HR resolution from an LR image in [0,1].
    /// Deterministic per (self, lr, id).
    pub fn make_condition(&self, lr: &Tensor, id: &str) -> Result<Tensor> {
        let (c, h, w) = (lr.shape()[0], lr.shape()[1], lr.shape()[2]);
        let (hh, hw) = (h * self.scale, w * self.scale);
        match &self.built {
            Built::Bicubic => Ok(to_diffusion(&bicubic_resize(lr, hh, hw)?)),
            Built::Nearest => Ok(to_diffusion(&nearest_upsample(lr, self.scale)?)),
            Built::File(dir) => {
                let img = read_condition_file(dir, id)?;
                let t = img.to_tensor();
                if t.shape() != [c, hh, hw] {
                    return Err(Error::shape(
                        format!("stored condition for sample {id}"),
                        &[c, hh, hw],
                        t.shape(),
                    ));
                }
                Ok(to_diffusion(&t))
            }
            Built::Learned(net) => {
                let base = to_diffusion(&bicubic_resize(lr, hh, hw)?);
                Ok(net.predict(&base)?.clamp(-1.0, 1.0))
            }
        }
    }
}

fn read_condition_file(dir: &Path, id: &str) -> Result<crate::imaging::ImageFile> {
    for ext in ["ppm", "pgm", "png"] {
        let path = dir.join(format!("{id}.{ext}"));
        if path.exists() {
            return read_image(&path);
        }
    }
    Err(Error::Data(format!(
        "no condition image for sample {id} under {}",
        dir.display()
    )))
}

// ── small residual SR network ───────────────────────────────────────

/// Five-layer residual CNN over the bicubic-upsampled input, in the
/// diffusion domain. The final layer starts at zero, so an untrained net
/// reproduces bicubic exactly.
pub struct SrCnn {
    pub channels: usize,
    pub width: usize,
    params: ParamSet,
}

impl SrCnn {
    pub fn new(channels: usize, width: usize, seed: u64) -> Self {
        let mut params = ParamSet::new();
        let mut conv = |name: &str, co: usize, ci: usize, zero: bool| {
            let shape = [co, ci, 3, 3];
            let t = if zero {
                Tensor::zeros(&shape)
            } else {
                let std = (2.0 / (ci * 9) as f64).sqrt() as f32;
                let idx = params.len() as u64;
                normal_tensor(seed, Domain::ParamInit, idx, 1, &shape).map(|v| v * std)
            };
            params.push(format!("sr.{name}.w"), t);
            params.push(format!("sr.{name}.b"), Tensor::zeros(&[co]));
        };
        conv("conv1", width, channels, false);
        conv("conv2", width, width, false);
        conv("conv3", width, width, false);
        conv("conv4", width, width, false);
        conv("conv5", channels, width, true);
        SrCnn { channels, width, params }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn bind(&self, g: &mut Graph) -> Vec<NodeId> {
        (0..self.params.len()).map(|i| g.input(self.params.value(i))).collect()
    }

    pub fn forward(&self, g: &mut Graph, bind: &[NodeId], x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for layer in 0..5 {
            h = g.conv2d(h, bind[2 * layer], 1, 1, PadMode::Reflect)?;
            h = g.bias_add(h, bind[2 * layer + 1])?;
            if layer < 4 {
                h = g.silu(h);
            }
        }
        g.add(x, h)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bind = self.bind(&mut g);
        let xi = g.input(x);
        let out = self.forward(&mut g, &bind, xi)?;
        Ok(g.tensor(out))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.params)?;
        let meta = format!("kind=srcnn\nchannels={}\nwidth={}\n", self.channels, self.width);
        let meta_path = path.with_extension("meta");
        std::fs::write(&meta_path, meta).map_err(|e| Error::io(meta_path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let meta_path = path.with_extension("meta");
        let meta = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let mut channels = 3usize;
        let mut width = 32usize;
        for line in meta.lines() {
            if let Some((k, v)) = line.split_once('=') {
                match k {
                    "channels" => channels = v.parse().map_err(|_| Error::Data("bad channels".into()))?,
                    "width" => width = v.parse().map_err(|_| Error::Data("bad width".into()))?,
                    _ => {}
                }
            }
        }
        let mut net = SrCnn::new(channels, width, 0);
        let loaded = checkpoint::load(path)?;
        net.params.load_from(&loaded)?;
        Ok(net)
    }
}

/// Conditioner training settings.
#[derive(Debug, Clone)]
pub struct CondTrainConfig {
    pub channels: usize,
    pub width: usize,
    pub scale: usize,
    pub steps: u64,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for CondTrainConfig {
    fn default() -> Self {
        CondTrainConfig {
            channels: 3,
            width: 32,
            scale: 4,
            steps: 1000,
            lr: 1e-3,
            batch: 8,
            seed: 0,
            threads: 1,
        }
    }
}

/// Train the SR CNN on (hr, lr) pairs in [0,1]; squared-error loss in the
/// diffusion domain against the bicubic-upsampled input.
pub fn train_conditioner(
    cfg: &CondTrainConfig,
    data: &[(Tensor, Tensor)],
) -> Result<(SrCnn, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::Data("conditioner training dataset is empty".into()));
    }
    // precompute network inputs/targets once
    let pairs: Vec<(Tensor, Tensor)> = data
        .iter()
        .map(|(hr, lr)| {
            let (h, w) = (hr.shape()[1], hr.shape()[2]);
            let base = to_diffusion(&bicubic_resize(lr, h, w)?);
            Ok((to_diffusion(hr), base))
        })
        .collect::<Result<_>>()?;

    let mut net = SrCnn::new(cfg.channels, cfg.width, cfg.seed);
    let mut adam = AdamState::new(net.params(), AdamHyper { lr: cfg.lr, ..AdamHyper::default() });
    let pool = crate::parallel::pool(cfg.threads)?;
    let mut losses = Vec::with_capacity(cfg.steps as usize);

    for step in 0..cfg.steps {
        let idxs: Vec<usize> = (0..cfg.batch)
            .map(|i| {
                let mut r = crate::rng::stream(cfg.seed, Domain::BatchIndex, step, i as u64);
                rand::Rng::gen_range(&mut r, 0..pairs.len())
            })
            .collect();

        let results: Vec<(f64, Vec<Vec<f64>>)> = pool.install(|| {
            idxs.par_iter()
                .map(|&idx| {
                    let (target, base) = &pairs[idx];
                    let mut g = Graph::new();
                    let bind = net.bind(&mut g);
                    let xi = g.input(base);
                    let out = net.forward(&mut g, &bind, xi)?;
                    let ti = g.input(target);
                    let d = g.sub(out, ti)?;
                    let sq = g.mul(d, d)?;
                    let loss = g.mean(sq);
                    let grads = g.backward(loss)?;
                    let gs: Vec<Vec<f64>> = bind.iter().map(|&b| grads.grad_f64(b)).collect();
                    Ok((g.scalar(loss), gs))
                })
                .collect::<Result<_>>()
        })?;

        let loss = reduce_and_step(&mut adam, net.params_mut_internal(), &results)?;
        losses.push(loss);
    }
    Ok((net, losses))
}

impl SrCnn {
    fn params_mut_internal(&mut self) -> &mut ParamSet {
        &mut self.params
    }
}

/// Average per-sample gradients in sample order (f64) and apply Adam.
pub(crate) fn reduce_and_step(
    adam: &mut AdamState,
    params: &mut ParamSet,
    results: &[(f64, Vec<Vec<f64>>)],
) -> Result<f64> {
    let n = results.len() as f64;
    let mut grads = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let len = params.value(pi).numel();
        let mut acc = vec![0.0f64; len];
        for (_, gs) in results {
            for (a, &g) in acc.iter_mut().zip(&gs[pi]) {
                *a += g;
            }
        }
        for a in &mut acc {
            *a /= n;
        }
        grads.push(Tensor::from_f64(params.value(pi).shape(), &acc));
    }
    adam_step(adam, params, &grads)?;
    Ok(results.iter().map(|(l, _)| l).sum::<f64>() / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{degrade, synth_texture};

    #[test]
    fn bicubic_mode_constant_input() {
        let spec = ConditionerSpec { mode: CondMode::Bicubic, scale: 4 };
        let c = Conditioner::build(&spec).unwrap();
        let lr = Tensor::full(&[3, 4, 4], 0.25);
        let out = c.make_condition(&lr, "x").unwrap();
        assert_eq!(out.shape(), &[3, 16, 16]);
        for &v in out.data() {
            // diffusion domain: 2*0.25 - 1 = -0.5
            assert!((v + 0.5).abs() < 1e-5);
        }
    }

    #[test]
    fn nearest_mode_replicates_pixels() {
        let spec = ConditionerSpec { mode: CondMode::Nearest, scale: 2 };
        let c = Conditioner::build(&spec).unwrap();
        let lr = Tensor::new(vec![1, 1, 2], vec![0.0, 1.0]).unwrap();
        let out = c.make_condition(&lr, "x").unwrap();
        assert_eq!(out.shape(), &[1, 2, 4]);
        assert_eq!(out.data(), &[-1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0]);
    }

    #[test]
    fn file_mode_roundtrips_and_errors_name_the_id() {
        let dir = tempfile::tempdir().unwrap();
        let hr = synth_texture(1, 3, 16, 16);
        let img = crate::imaging::ImageFile::from_tensor(&hr).unwrap();
        crate::imaging::write_image(&img, &dir.path().join("sample7.ppm")).unwrap();

        let spec = ConditionerSpec { mode: CondMode::File(dir.path().into()), scale: 4 };
        let c = Conditioner::build(&spec).unwrap();
        let lr = degrade(&hr, 4).unwrap();
        let got = c.make_condition(&lr, "sample7").unwrap();
        let want = to_diffusion(&img.to_tensor());
        assert!(got.max_abs_diff(&want) < 1e-6);

        let err = c.make_condition(&lr, "missing9").unwrap_err();
        assert!(err.to_string().contains("missing9"));
        // wrong size names the id too
        let small = Tensor::full(&[3, 2, 2], 0.2);
        let err2 = c.make_condition(&small, "sample7").unwrap_err();
        assert!(err2.to_string().contains("sample7"));
    }

    #[test]
    fn invalid_scale_rejected() {
        let spec = ConditionerSpec { mode: CondMode::Bicubic, scale: 5 };
        assert!(Conditioner::build(&spec).is_err());
    }

    #[test]
    fn untrained_srcnn_equals_bicubic() {
        let net = SrCnn::new(3, 8, 1);
        let hr = synth_texture(2, 3, 16, 16);
        let lr = degrade(&hr, 4).unwrap();
        let base = to_diffusion(&bicubic_resize(&lr, 16, 16).unwrap());
        let out = net.predict(&base).unwrap();
        assert!(out.max_abs_diff(&base) < 1e-6);
    }

    fn toy_pairs(n: usize, size: usize, scale: usize) -> Vec<(Tensor, Tensor)> {
        (0..n)
            .map(|i| {
                let hr = synth_texture(100 + i as u64, 3, size, size);
                let lr = degrade(&hr, scale).unwrap();
                (hr, lr)
            })
            .collect()
    }

    #[test]
    fn overfit_one_patch_reduces_loss() {
        let data = toy_pairs(1, 16, 4);
        let cfg = CondTrainConfig { width: 8, steps: 200, lr: 2e-3, batch: 1, ..Default::default() };
        let (_, losses) = train_conditioner(&cfg, &data).unwrap();
        assert!(losses.last().unwrap() < &(losses[0] * 0.25), "{:?} -> {:?}", losses[0], losses.last());
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let data = toy_pairs(2, 16, 4);
        let cfg = CondTrainConfig { width: 8, steps: 5, lr: 0.0, batch: 2, ..Default::default() };
        let (net, _) = train_conditioner(&cfg, &data).unwrap();
        let fresh = SrCnn::new(3, 8, 0);
        for i in 0..fresh.params().len() {
            assert_eq!(net.params().value(i).data(), fresh.params().value(i).data());
        }
    }

    #[test]
    fn training_is_deterministic_bytewise() {
        let data = toy_pairs(2, 16, 4);
        let cfg = CondTrainConfig { width: 8, steps: 20, batch: 2, seed: 5, ..Default::default() };
        let dir = tempfile::tempdir().unwrap();
        let (a, _) = train_conditioner(&cfg, &data).unwrap();
        let (b, _) = train_conditioner(&cfg, &data).unwrap();
        let (pa, pb) = (dir.path().join("a.acdt"), dir.path().join("b.acdt"));
        a.save(&pa).unwrap();
        b.save(&pb).unwrap();
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
        // and across thread counts
        let cfg4 = CondTrainConfig { threads: 4, ..cfg };
        let (c, _) = train_conditioner(&cfg4, &data).unwrap();
        let pc = dir.path().join("c.acdt");
        c.save(&pc).unwrap();
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pc).unwrap());
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let cfg = CondTrainConfig::default();
        assert!(train_conditioner(&cfg, &[]).is_err());
    }

    #[test]
    fn trained_conditioner_beats_bicubic_on_holdout() {
        // the Table III mechanism at miniature scale: train on a handful of
        // textures, evaluate MSE against HR on held-out ones
        let train: Vec<_> = toy_pairs(6, 24, 4);
        let holdout: Vec<_> = (0..4)
            .map(|i| {
                let hr = synth_texture(900 + i as u64, 3, 24, 24);
                let lr = degrade(&hr, 4).unwrap();
                (hr, lr)
            })
            .collect();
        let cfg = CondTrainConfig { width: 16, steps: 300, lr: 2e-3, batch: 4, seed: 3, ..Default::default() };
        let (net, _) = train_conditioner(&cfg, &train).unwrap();
        let cond = Conditioner::from_net(net, 4);
        let bic = Conditioner::build(&ConditionerSpec { mode: CondMode::Bicubic, scale: 4 }).unwrap();
        let (mut mse_l, mut mse_b) = (0.0, 0.0);
        for (i, (hr, lr)) in holdout.iter().enumerate() {
            let target = to_diffusion(hr);
            mse_l += cond.make_condition(lr, &i.to_string()).unwrap().mse(&target).unwrap();
            mse_b += bic.make_condition(lr, &i.to_string()).unwrap().mse(&target).unwrap();
        }
        assert!(mse_l < mse_b, "learned {mse_l} !< bicubic {mse_b}");
    }
}

//! Three-phase training: inpainter pretraining, adversarial warm-up of the
//! segmentation network against the inpainter, and joint training of every
//! module on the full objective with KL capacity annealing.
//!
//! All randomness (initialization, batch sampling, rectangle masks,
//! reparameterization noise, the perturbed object) comes from one seeded
//! generator whose position is stored in checkpoints, so a resumed run
//! continues exactly where an uninterrupted one would be.

mod checkpoint;
mod config;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use objman_tensor::optim::Adam;
use objman_tensor::{Graph, Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, RngState};
pub use config::{apply_override, DataConfig, OptimConfig, Preset, ScheduleConfig, TrainConfig, HELD_OUT_SEED_OFFSET};

use crate::image::ImageTensor;
use crate::inpainter::{pretrain_step, PretrainBatch};
use crate::losses::{game_objective, read_breakdown, Batch, LossBreakdown, Phase, StepNoise};
use crate::model::Networks;
use crate::objvae::capacity_schedule;
use crate::{Error, Result};

/// Column order of `metrics.csv`.
pub const METRICS_HEADER: &str = "step,recon,kl_a,kl_s,l_sd,l_pc,total,C";
/// Column order of `pretrain.csv`.
pub const PRETRAIN_HEADER: &str = "step,masked_l1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Warmup,
    Joint,
    Done,
}

/// Result of one global step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepRecord {
    Pretrain { step: u64, masked_l1: f64 },
    Adversarial { step: u64, stage: Stage, losses: LossBreakdown },
}

impl StepRecord {
    /// CSV row in [`METRICS_HEADER`] order; raw KL values are logged.
    pub fn metrics_row(&self) -> Option<String> {
        match self {
            Self::Adversarial { step, losses: l, .. } => Some(format!(
                "{step},{},{},{},{},{},{},{}",
                l.recon, l.kl_appearance_raw, l.kl_shape_raw, l.l_sd, l.l_pc, l.total_min_player, l.capacity
            )),
            Self::Pretrain { .. } => None,
        }
    }
}

/// Networks, per-player optimizers and generator state.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub nets: Networks<T>,
    pub opt_seg: Adam<T>,
    pub opt_vae: Adam<T>,
    pub opt_inpainter: Adam<T>,
    rng: ChaCha8Rng,
    step: u64,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh networks initialized from `config.seed`.
    pub fn new(config: TrainConfig, height: usize, width: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let nets = Networks::new(&config.model, height, width, &mut rng)?;
        let adam = config.optim.adam();
        let mut inp_adam = adam;
        inp_adam.lr = config.pretrain.lr;
        Ok(Self {
            opt_seg: Adam::new(adam, &nets.seg.params),
            opt_vae: Adam::new(adam, &nets.vae.params),
            opt_inpainter: Adam::new(inp_adam, &nets.inpainter.params),
            config,
            nets,
            rng,
            step: 0,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn total_steps(&self) -> u64 {
        self.config.total_steps() as u64
    }

    pub fn stage_at(&self, step: u64) -> Stage {
        let p = self.config.pretrain_steps() as u64;
        let w = self.config.schedule.warmup_steps as u64;
        let j = self.config.schedule.joint_steps as u64;
        if step < p {
            Stage::Pretrain
        } else if step < p + w {
            Stage::Warmup
        } else if step < p + w + j {
            Stage::Joint
        } else {
            Stage::Done
        }
    }

    /// Capacity target at a global step.
    pub fn capacity_at(&self, step: u64) -> f64 {
        if self.stage_at(step) != Stage::Joint {
            return 0.0;
        }
        let start = (self.config.pretrain_steps() + self.config.schedule.warmup_steps) as u64;
        let ramp = (self.config.loss.ramp_fraction * self.config.schedule.joint_steps as f64).round() as usize;
        capacity_schedule((step - start) as usize, self.config.loss.c_max, ramp)
    }

    /// Replaces the inpainter weights with those stored in a checkpoint.
    pub fn load_inpainter(&mut self, ckpt: &Checkpoint<T>) -> Result<()> {
        self.nets.inpainter.params.load(ckpt.group("inpainter"))?;
        Ok(())
    }

    fn sample_batch(&mut self, data: &[ImageTensor]) -> Result<Batch<T>> {
        if data.is_empty() {
            return Err(Error::Argument("training dataset is empty".into()));
        }
        let chosen: Vec<&ImageTensor> =
            (0..self.config.schedule.batch_size).map(|_| &data[self.rng.random_range(0..data.len())]).collect();
        Batch::from_images(&chosen, self.config.model.edge_threshold)
    }

    pub fn sample_noise(&mut self, n: usize) -> StepNoise<T> {
        let m = &self.config.model;
        StepNoise::sample(&mut self.rng, n, m.k, m.appearance_dim, m.shape_dim)
    }

    /// Evaluates the objective without updating anything.
    pub fn evaluate(&self, batch: &Batch<T>, noise: &StepNoise<T>, phase: Phase, capacity: f64) -> Result<LossBreakdown> {
        let mut g = Graph::new();
        let p = self.nets.bind_frozen(&mut g);
        let v = game_objective(&mut g, &self.nets, &p, batch, &self.config.loss, capacity, noise, phase)?;
        read_breakdown(&g, &v, capacity)
    }

    /// One two-player update on a given batch and noise draw.
    ///
    /// The min player (segmentation, and the VAE in the joint phase) descends
    /// the game value. The inpainter descends `+γ·L_SD`, i.e. the negated
    /// gradient of the same scalar, once every `update_ratio` steps. With
    /// `γ = 0` the inpainter is left untouched.
    pub fn adversarial_step(
        &mut self,
        batch: &Batch<T>,
        noise: &StepNoise<T>,
        phase: Phase,
        capacity: f64,
        update_inpainter: bool,
    ) -> Result<LossBreakdown> {
        let mut g = Graph::new();
        let p = self.nets.bind(&mut g);
        let v = game_objective(&mut g, &self.nets, &p, batch, &self.config.loss, capacity, noise, phase)?;
        let losses = read_breakdown(&g, &v, capacity)?;
        let grads = g.backward(v.total)?;
        self.opt_seg.step(&mut self.nets.seg.params, &p.seg.grads(&g, &grads))?;
        if phase == Phase::Joint {
            self.opt_vae.step(&mut self.nets.vae.params, &p.vae.grads(&g, &grads))?;
        }
        if update_inpainter && self.config.loss.gamma != 0.0 {
            let neg: Vec<Tensor<T>> = p.inpainter.grads(&g, &grads).into_iter().map(|t| t.map(|x| -x)).collect();
            self.opt_inpainter.step(&mut self.nets.inpainter.params, &neg)?;
        }
        Ok(losses)
    }

    /// Advances one global step in whichever phase it falls.
    pub fn train_step(&mut self, data: &[ImageTensor]) -> Result<StepRecord> {
        let step = self.step;
        let record = match self.stage_at(step) {
            Stage::Pretrain => {
                if data.is_empty() {
                    return Err(Error::Argument("training dataset is empty".into()));
                }
                let batch = PretrainBatch::sample(data, &self.config.pretrain, self.config.model.edge_threshold, &mut self.rng)?;
                let masked_l1 = pretrain_step(&mut self.nets.inpainter, &mut self.opt_inpainter, &batch)?;
                StepRecord::Pretrain { step, masked_l1 }
            }
            stage @ (Stage::Warmup | Stage::Joint) => {
                let batch = self.sample_batch(data)?;
                let noise = self.sample_noise(batch.len());
                let phase = if stage == Stage::Warmup { Phase::Warmup } else { Phase::Joint };
                let capacity = self.capacity_at(step);
                let adv_start = self.config.pretrain_steps() as u64;
                let update_inp = (step - adv_start) % self.config.schedule.update_ratio as u64 == 0;
                let losses = self.adversarial_step(&batch, &noise, phase, capacity, update_inp)?;
                StepRecord::Adversarial { step, stage, losses }
            }
            Stage::Done => return Err(Error::Argument("training schedule already complete".into())),
        };
        self.step += 1;
        Ok(record)
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        let mut tensors = Vec::new();
        for (group, ps) in self.nets.param_sets() {
            for (name, t) in ps.iter() {
                tensors.push((format!("{group}/{name}"), t.clone()));
            }
        }
        for (name, opt) in self.optimizers() {
            for (i, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
                tensors.push((format!("adam.{name}/m{i}"), m.clone()));
                tensors.push((format!("adam.{name}/v{i}"), v.clone()));
            }
        }
        Checkpoint {
            step: self.step,
            config_hash: self.config.hash(),
            config: self.config.to_toml(),
            height: self.nets.height,
            width: self.nets.width,
            rng: Some(RngState {
                seed: hex::encode(self.rng.get_seed()),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos().to_string(),
            }),
            optimizer_steps: self.optimizers().iter().map(|(n, o)| (n.to_string(), o.t)).collect(),
            tensors,
        }
    }

    fn optimizers(&self) -> [(&'static str, &Adam<T>); 3] {
        [("seg", &self.opt_seg), ("vae", &self.opt_vae), ("inpainter", &self.opt_inpainter)]
    }

    /// Restores a trainer from a checkpoint under `config`.
    ///
    /// Returns warnings for recoverable mismatches, such as a configuration
    /// whose hash differs from the one the checkpoint was written with.
    pub fn resume(config: TrainConfig, ckpt: &Checkpoint<T>) -> Result<(Self, Vec<String>)> {
        let mut warnings = Vec::new();
        if ckpt.config_hash != config.hash() {
            warnings.push(format!(
                "warning: config hash {} differs from checkpoint hash {}",
                config.hash(),
                ckpt.config_hash
            ));
        }
        let mut t = Self::new(config, ckpt.height, ckpt.width)?;
        for (group, ps) in t.nets.param_sets_mut() {
            ps.load(ckpt.group(group))?;
        }
        let names = ["seg", "vae", "inpainter"];
        let opts = [&mut t.opt_seg, &mut t.opt_vae, &mut t.opt_inpainter];
        for (name, opt) in names.into_iter().zip(opts) {
            let group = ckpt.group(&format!("adam.{name}"));
            let n = opt.m.len();
            if group.len() != 2 * n {
                return Err(Error::Format {
                    path: PathBuf::from("<checkpoint>"),
                    msg: format!("optimizer {name}: expected {} moment tensors, found {}", 2 * n, group.len()),
                });
            }
            let find = |key: String| -> Result<Tensor<T>> {
                group.iter().find(|(k, _)| *k == key).map(|(_, t)| t.clone()).ok_or_else(|| Error::Format {
                    path: PathBuf::from("<checkpoint>"),
                    msg: format!("optimizer {name}: missing {key}"),
                })
            };
            for i in 0..n {
                let m = find(format!("m{i}"))?;
                let v = find(format!("v{i}"))?;
                if m.shape() != opt.m[i].shape() || v.shape() != opt.v[i].shape() {
                    return Err(Error::Shape(format!("optimizer {name} moment {i} has the wrong shape")));
                }
                opt.m[i] = m;
                opt.v[i] = v;
            }
            opt.t = ckpt.optimizer_step(name).unwrap_or(0);
        }
        if let Some(r) = &ckpt.rng {
            let seed: [u8; 32] = hex::decode(&r.seed)
                .ok()
                .and_then(|b| b.try_into().ok())
                .ok_or_else(|| Error::Format { path: PathBuf::from("<checkpoint>"), msg: "bad rng seed".into() })?;
            let pos: u128 = r
                .word_pos
                .parse()
                .map_err(|_| Error::Format { path: PathBuf::from("<checkpoint>"), msg: "bad rng position".into() })?;
            t.rng = ChaCha8Rng::from_seed(seed);
            t.rng.set_stream(r.stream);
            t.rng.set_word_pos(pos);
        }
        t.step = ckpt.step;
        Ok((t, warnings))
    }
}

/// Networks restored from a checkpoint with its embedded configuration.
pub fn networks_from_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<(TrainConfig, Networks<T>)> {
    let config = TrainConfig::from_toml_with_overrides(&ckpt.config, &[])?;
    let (t, _) = Trainer::resume(config.clone(), ckpt)?;
    Ok((config, t.nets))
}

/// Output directory layout of one run.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        for sub in ["checkpoints", "figures", "eval"] {
            let p = root.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.resolved")
    }
    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
    pub fn pretrain_path(&self) -> PathBuf {
        self.root.join("pretrain.csv")
    }
    pub fn checkpoint_path(&self, step: u64) -> PathBuf {
        self.root.join("checkpoints").join(format!("step_{step:08}.ckpt"))
    }
    pub fn final_checkpoint(&self) -> PathBuf {
        self.root.join("checkpoints").join("final.ckpt")
    }
    pub fn figures(&self) -> PathBuf {
        self.root.join("figures")
    }
    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn write_config(&self, config: &TrainConfig) -> Result<()> {
        let p = self.config_path();
        std::fs::write(&p, config.to_toml()).map_err(|e| Error::io(&p, e))
    }
}

/// Appends rows to a CSV file, writing the header when the file is new.
pub struct CsvLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvLog {
    /// Opens `path`; when `truncate_after` is given, rows with a step at or
    /// beyond it are dropped first (for resuming).
    pub fn open(path: &Path, header: &str, truncate_after: Option<u64>) -> Result<Self> {
        let existing = std::fs::read_to_string(path).ok();
        let mut kept = String::new();
        if let (Some(text), Some(limit)) = (&existing, truncate_after) {
            for line in text.lines() {
                let keep = match line.split(',').next().and_then(|s| s.parse::<u64>().ok()) {
                    Some(step) => step < limit,
                    None => line == header,
                };
                if keep {
                    kept.push_str(line);
                    kept.push('\n');
                }
            }
        }
        let mut f = OpenOptions::new().create(true).write(true).truncate(true).open(path).map_err(|e| Error::io(path, e))?;
        if kept.is_empty() {
            kept = format!("{header}\n");
        }
        f.write_all(kept.as_bytes()).map_err(|e| Error::io(path, e))?;
        Ok(Self { path: path.to_path_buf(), out: BufWriter::new(f) })
    }

    pub fn row(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// What a completed `train` call returns.
#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    pub history: Vec<StepRecord>,
    pub warnings: Vec<String>,
}

/// Runs the remaining schedule of `trainer` on `data`.
///
/// With a run directory, metrics rows, pretraining losses and periodic
/// checkpoints are written there. A non-finite loss aborts the run and the
/// error names the last checkpoint written.
pub fn run<T: Scalar>(trainer: &mut Trainer<T>, data: &[ImageTensor], dir: Option<&RunDir>) -> Result<Vec<StepRecord>> {
    if data.is_empty() && trainer.step() < trainer.total_steps() {
        return Err(Error::Argument("training dataset is empty".into()));
    }
    let start = trainer.step();
    let mut logs = match dir {
        Some(d) => Some((
            CsvLog::open(&d.metrics_path(), METRICS_HEADER, Some(start))?,
            CsvLog::open(&d.pretrain_path(), PRETRAIN_HEADER, Some(start))?,
        )),
        None => None,
    };
    let mut last_good: Option<PathBuf> = None;
    let mut history = Vec::new();
    let log_every = trainer.config.schedule.log_interval as u64;
    let ckpt_every = trainer.config.schedule.checkpoint_interval as u64;
    while trainer.step() < trainer.total_steps() {
        let record = trainer.train_step(data).map_err(|e| match (e, &last_good) {
            (Error::NonFinite(msg), Some(p)) => Error::NonFinite(format!("{msg}; last good checkpoint: {}", p.display())),
            (Error::NonFinite(msg), None) => Error::NonFinite(format!("{msg}; no checkpoint written yet")),
            (e, _) => e,
        })?;
        if let Some((metrics, pretrain)) = logs.as_mut() {
            match record {
                StepRecord::Pretrain { step, masked_l1 } => pretrain.row(&format!("{step},{masked_l1}"))?,
                StepRecord::Adversarial { step, .. } if step % log_every == 0 => {
                    metrics.row(&record.metrics_row().expect("adversarial"))?
                }
                _ => {}
            }
        }
        history.push(record);
        if let Some(d) = dir {
            if ckpt_every > 0 && trainer.step() % ckpt_every == 0 && trainer.step() < trainer.total_steps() {
                let p = d.checkpoint_path(trainer.step());
                save_checkpoint(&trainer.checkpoint(), &p)?;
                last_good = Some(p);
            }
        }
    }
    if let Some(d) = dir {
        save_checkpoint(&trainer.checkpoint(), &d.final_checkpoint())?;
    }
    Ok(history)
}

/// Builds a trainer from `config` and trains it on `data` from scratch.
pub fn train<T: Scalar>(config: TrainConfig, data: &[ImageTensor], dir: Option<&RunDir>) -> Result<TrainOutcome<T>> {
    let first = data.first().ok_or_else(|| Error::Argument("training dataset is empty".into()))?;
    let (h, w) = (first.height(), first.width());
    if data.iter().any(|d| (d.height(), d.width()) != (h, w)) {
        return Err(Error::Shape("training images differ in size".into()));
    }
    let mut warnings = Vec::new();
    let mut trainer = Trainer::<T>::new(config, h, w)?;
    if let Some(path) = trainer.config.schedule.inpainter_checkpoint.clone() {
        let ckpt = load_checkpoint::<T>(Path::new(&path))?;
        if ckpt.group("inpainter").is_empty() {
            warnings.push(format!("warning: {path} holds no inpainter weights"));
        }
        trainer.load_inpainter(&ckpt)?;
    }
    if let Some(d) = dir {
        d.write_config(&trainer.config)?;
    }
    let history = run(&mut trainer, data, dir)?;
    Ok(TrainOutcome { checkpoint: trainer.checkpoint(), history, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages_follow_the_schedule() {
        let mut cfg = TrainConfig::default();
        cfg.pretrain.steps = 2;
        cfg.schedule.warmup_steps = 3;
        cfg.schedule.joint_steps = 10;
        cfg.model = crate::ModelConfig { seg_width: 2, inpaint_width: 2, vae_width: 2, fusion_width: 2, ..Default::default() };
        let t = Trainer::<f32>::new(cfg, 8, 8).unwrap();
        let stages: Vec<Stage> = (0..16).map(|s| t.stage_at(s)).collect();
        assert_eq!(&stages[..2], &[Stage::Pretrain; 2]);
        assert_eq!(&stages[2..5], &[Stage::Warmup; 3]);
        assert_eq!(&stages[5..15], &[Stage::Joint; 10]);
        assert_eq!(stages[15], Stage::Done);
        assert_eq!(t.capacity_at(4), 0.0);
        assert_eq!(t.capacity_at(5), 0.0);
        assert_eq!(t.capacity_at(8), 10.0);
        assert_eq!(t.capacity_at(14), 20.0);
    }
}

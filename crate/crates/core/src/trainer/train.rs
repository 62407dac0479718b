//! The training loop.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use mtr_tensor::{Adam, AdamConfig, ParamId, ParamStore, Scalar, Session, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::features::RandomConvFeatures;
use crate::iuv::{pair, Video};
use crate::losses::lsgan_d_loss;
use crate::model::{Batch, Discriminator, Generator};
use crate::trainer::checkpoint::{load_checkpoint, read_state, save_checkpoint, TrainState};
use crate::trainer::objective::{stage_terms, weighted_total};
use crate::trainer::schedule::{Stage, StageSchedule};
use crate::types::SampleRecord;

pub const LOSS_LOG: &str = "losses.csv";
pub const LOSS_LOG_HEADER: &str = "iter,stage,term,value";

/// Generator and discriminator with their parameters.
pub struct Models {
    pub cfg: RunConfig,
    pub gen: Generator,
    pub gen_store: ParamStore<f32>,
    pub disc: Discriminator,
    pub disc_store: ParamStore<f32>,
}

impl Models {
    /// Freshly initialised from the configured seed.
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let (gen, gen_store) = Generator::build(&cfg.model, cfg.seed)?;
        let (disc, disc_store) = Discriminator::build(&cfg.model, cfg.seed)?;
        Ok(Self { cfg: cfg.clone(), gen, gen_store, disc, disc_store })
    }

    /// Rebuilds the models described by a checkpoint's stored configuration
    /// and loads its parameters.
    pub fn from_checkpoint(dir: &Path) -> Result<Self> {
        let state = read_state(dir)?;
        let cfg = RunConfig::default().merge_toml(&state.config)?;
        let mut m = Self::build(&cfg)?;
        m.load(dir)?;
        Ok(m)
    }

    pub fn load(&mut self, dir: &Path) -> Result<()> {
        load_checkpoint(dir, &mut [&mut self.gen_store, &mut self.disc_store])
    }

    pub fn save(&self, dir: &Path, state: &TrainState) -> Result<()> {
        save_checkpoint(dir, &[&self.gen_store, &self.disc_store], state)
    }

    /// Total number of named parameters across both stores.
    pub fn param_count(&self) -> usize {
        self.gen_store.len() + self.disc_store.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub name: String,
    pub iterations: usize,
    /// Global iteration at which the stage started.
    pub start_iter: usize,
    /// Sum of the stage's reconstruction terms on the probe set.
    pub probe_rec_start: f64,
    pub probe_rec_end: f64,
    pub trainable_params: usize,
    pub frozen_params: usize,
    pub checkpoint: PathBuf,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub stages: Vec<StageReport>,
    pub loss_log: PathBuf,
}

impl TrainReport {
    pub fn final_checkpoint(&self) -> Option<&Path> {
        self.stages.last().map(|s| s.checkpoint.as_path())
    }
}

/// Loss values and gradient-routing diagnostics of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub values: Vec<(&'static str, f64)>,
    /// Discriminator parameters that received a gradient in the generator step.
    pub disc_leak: usize,
    /// Generator-side tensors that received a gradient in the discriminator step.
    pub gen_leak: usize,
}

pub fn checkpoint_dir(out_dir: &Path, index: usize, stage: &Stage) -> PathBuf {
    out_dir.join("checkpoints").join(format!("stage{}-{}", index + 1, stage.kind.name()))
}

/// Deterministic batch of random same-video (source, driving) pairs for a
/// global iteration.
pub fn sample_batch(videos: &[Video], seed: u64, global_iter: usize, size: usize) -> Vec<SampleRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (global_iter as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    (0..size)
        .map(|_| {
            let v = &videos[rng.random_range(0..videos.len())];
            let s = rng.random_range(0..v.frames.len());
            let d = rng.random_range(0..v.frames.len());
            pair(&v.frames[s], &v.frames[d])
        })
        .collect()
}

/// Fixed probe pairs: frame 0 against later frames, round-robin over videos.
pub fn probe_set(videos: &[Video], size: usize) -> Vec<SampleRecord> {
    let longest = videos.iter().map(|v| v.frames.len()).max().unwrap_or(0);
    let mut out = Vec::new();
    for k in 1..longest {
        for v in videos.iter().filter(|v| v.frames.len() > k) {
            if out.len() == size {
                return out;
            }
            out.push(pair(&v.frames[0], &v.frames[k]));
        }
    }
    out
}

fn snapshot(store: &ParamStore<f32>, ids: &[ParamId]) -> Vec<Tensor<f32>> {
    ids.iter().map(|&id| store.get(id).clone()).collect()
}

fn bits_equal(a: &Tensor<f32>, b: &Tensor<f32>) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn check_finite(term: &str, value: f64, iter: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { term: term.to_string(), iter })
    }
}

/// A numeric failure inside the forward pass means the parameters diverged.
fn diverged(e: Error, iter: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::NonFinite { term: format!("forward ({msg})"), iter },
        e => e,
    }
}

pub struct Trainer {
    pub models: Models,
    fx: RandomConvFeatures,
    probes: Batch<f32>,
}

impl Trainer {
    pub fn new(models: Models, videos: &[Video]) -> Result<Self> {
        let usable: usize = videos.iter().filter(|v| v.frames.len() >= 2).count();
        if usable == 0 || videos.iter().any(|v| v.frames.is_empty()) {
            return Err(Error::Data("training needs at least one video with two or more frames".into()));
        }
        let probes = probe_set(videos, models.cfg.train.probe_size);
        let refs: Vec<&SampleRecord> = probes.iter().collect();
        let probes = Batch::from_records(&refs, &models.cfg.model)?;
        Ok(Self { models, fx: RandomConvFeatures::default(), probes })
    }

    fn adam(&self) -> AdamConfig {
        let t = &self.models.cfg.train;
        AdamConfig { lr: t.lr, beta1: t.beta1, beta2: t.beta2, ..AdamConfig::default() }
    }

    /// Sum of the stage's reconstruction terms on the probe set.
    pub fn probe_reconstruction(&self, stage: &Stage) -> Result<f64> {
        let m = &self.models;
        let tape = Tape::new();
        let s = Session::frozen(&tape, &m.gen_store);
        let inp = self.probes.inputs(&s);
        let out = m.gen.forward(&s, &inp, stage.kind.branches())?;
        let terms = stage_terms(stage.kind, &m.cfg.loss, &self.fx, &s, &inp, &out, &self.probes, None)?;
        Ok(terms.iter().filter(|(t, _)| t.is_reconstruction()).map(|(_, v)| v.item().as_f64()).sum())
    }

    /// One iteration: a discriminator step on the detached fake (adversarial
    /// stages only), then a generator step against the updated discriminator.
    pub fn step(
        &mut self,
        stage: &Stage,
        gen_trainable: &[bool],
        batch: &Batch<f32>,
        iter: usize,
        gen_opt: &mut Adam<f32>,
        disc_opt: Option<&mut Adam<f32>>,
    ) -> Result<StepOutcome> {
        let Models { cfg, gen, gen_store, disc, disc_store } = &mut self.models;
        let mut values = Vec::new();
        let mut gen_leak = 0;
        let disc_leak;
        let grads = {
            let tape = Tape::new();
            let s = Session::new(&tape, &*gen_store, |id| gen_trainable[id.0]);
            let inp = batch.inputs(&s);
            let out = gen.forward(&s, &inp, stage.kind.branches()).map_err(|e| diverged(e, iter))?;

            if let Some(opt) = disc_opt {
                let (fake, _) = out.blend.ok_or_else(|| Error::Contract("adversarial stage without blend".into()))?;
                let fake = (*fake.value()).clone();
                let (loss, leak) = disc_step(disc, disc_store, opt, &batch.target, fake)?;
                check_finite("disc", loss, iter)?;
                values.push(("disc", loss));
                gen_leak = leak;
            }

            let ds = Session::frozen(&tape, &*disc_store);
            let with_disc = stage.kind.adversarial().then_some((&*disc, &ds));
            let terms = stage_terms(stage.kind, &cfg.loss, &self.fx, &s, &inp, &out, batch, with_disc)?;
            for (t, v) in &terms {
                let x = v.item().as_f64();
                check_finite(t.name(), x, iter)?;
                values.push((t.name(), x));
            }
            let total = weighted_total(&terms, &cfg.loss).ok_or_else(|| Error::Contract("stage has no loss".into()))?;
            let tv = total.item().as_f64();
            check_finite("total", tv, iter)?;
            values.push(("total", tv));
            let g = tape.backward(total);
            disc_leak = ds.param_grads(&g).len();
            s.param_grads(&g)
        };
        gen_opt.step(gen_store, &grads);
        Ok(StepOutcome { values, disc_leak, gen_leak })
    }
}

/// LSGAN discriminator update. Returns the loss and the number of
/// non-discriminator tensors that received a gradient.
fn disc_step(
    disc: &Discriminator,
    store: &mut ParamStore<f32>,
    opt: &mut Adam<f32>,
    real: &Tensor<f32>,
    fake: Tensor<f32>,
) -> Result<(f64, usize)> {
    let (loss, grads, leak) = {
        let tape = Tape::new();
        let ds = Session::new(&tape, &*store, |_| true);
        let real_v = ds.input(real.clone());
        let fake_v = ds.input(fake);
        let l = lsgan_d_loss(disc.forward(&ds, real_v), disc.forward(&ds, fake_v));
        let g = tape.backward(l);
        let leak = [real_v, fake_v].iter().filter(|v| g.get(**v).is_some()).count();
        (l.item().as_f64(), ds.param_grads(&g), leak)
    };
    if loss.is_finite() {
        opt.step(store, &grads);
    }
    Ok((loss, leak))
}

/// Runs the configured schedule on `videos`, writing the loss log and one
/// checkpoint per stage under `out_dir`. With `resume`, parameters are
/// restored from a stage checkpoint and training continues with the next
/// stage.
pub fn train(cfg: &RunConfig, videos: &[Video], out_dir: &Path, resume: Option<&Path>) -> Result<TrainReport> {
    let schedule = StageSchedule::from_config(&cfg.train)?;
    let mut models = Models::build(cfg)?;
    let (mut first_stage, mut global_iter) = (0, 0);
    if let Some(dir) = resume {
        let state = read_state(dir)?;
        let stored = RunConfig::default().merge_toml(&state.config)?;
        if stored != *cfg {
            return Err(Error::Config(format!(
                "checkpoint {} was written with a different configuration",
                dir.display()
            )));
        }
        models.load(dir)?;
        first_stage = state.stages_done;
        global_iter = state.global_iter;
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let cfg_path = out_dir.join("config.toml");
    fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(cfg_path.display().to_string(), e))?;

    let log_path = out_dir.join(LOSS_LOG);
    let append = resume.is_some() && log_path.exists();
    let file = if append { OpenOptions::new().append(true).open(&log_path) } else { File::create(&log_path) }
        .map_err(|e| Error::io(log_path.display().to_string(), e))?;
    let mut log = BufWriter::new(file);
    let io = |e: std::io::Error| Error::io(log_path.display().to_string(), e);
    if !append {
        writeln!(log, "{LOSS_LOG_HEADER}").map_err(io)?;
    }

    let mut trainer = Trainer::new(models, videos)?;
    let mut reports = Vec::new();
    for (index, stage) in schedule.stages.iter().enumerate().skip(first_stage) {
        let clock = Instant::now();
        let name = stage.kind.name();
        let m = &trainer.models;
        let (gen_train, gen_frozen) = stage.partition(&m.gen_store);
        let (disc_train, disc_frozen) = stage.partition(&m.disc_store);
        let mut gen_trainable = vec![false; m.gen_store.len()];
        for id in &gen_train {
            gen_trainable[id.0] = true;
        }
        let frozen_gen = snapshot(&m.gen_store, &gen_frozen);
        let frozen_disc = snapshot(&m.disc_store, &disc_frozen);
        let mut gen_opt = Adam::new(trainer.adam(), gen_train.iter().copied(), &m.gen_store);
        let mut disc_opt = (stage.kind.adversarial() && !disc_train.is_empty())
            .then(|| Adam::new(trainer.adam(), disc_train.iter().copied(), &m.disc_store));

        let start_iter = global_iter;
        let probe_rec_start = trainer.probe_reconstruction(stage)?;
        writeln!(log, "{start_iter},{name},probe_rec_start,{probe_rec_start:e}").map_err(io)?;
        log::info!(
            "stage {} ({name}): {} iterations, {} trainable / {} frozen parameters, probe rec {probe_rec_start:.4}",
            index + 1,
            stage.iterations,
            gen_train.len() + disc_train.len(),
            gen_frozen.len() + disc_frozen.len()
        );
        let every = (stage.iterations / 10).max(1);
        for k in 0..stage.iterations {
            let records = sample_batch(videos, cfg.seed, global_iter, cfg.train.batch_size);
            let refs: Vec<&SampleRecord> = records.iter().collect();
            let batch = Batch::from_records(&refs, &cfg.model)?;
            let outcome = trainer.step(stage, &gen_trainable, &batch, global_iter, &mut gen_opt, disc_opt.as_mut())?;
            if outcome.disc_leak != 0 || outcome.gen_leak != 0 {
                return Err(Error::Contract(format!("gradient crossed the GAN boundary at iteration {global_iter}")));
            }
            for (term, v) in &outcome.values {
                writeln!(log, "{global_iter},{name},{term},{v:e}").map_err(io)?;
            }
            if (k + 1) % every == 0 {
                let total = outcome.values.iter().find(|(t, _)| *t == "total").map_or(f64::NAN, |v| v.1);
                log::info!("{name} {}/{}: total {total:.4}", k + 1, stage.iterations);
            }
            global_iter += 1;
        }

        let m = &trainer.models;
        let changed = gen_frozen
            .iter()
            .zip(&frozen_gen)
            .map(|(&id, t)| (m.gen_store.name(id), bits_equal(m.gen_store.get(id), t)))
            .chain(
                disc_frozen
                    .iter()
                    .zip(&frozen_disc)
                    .map(|(&id, t)| (m.disc_store.name(id), bits_equal(m.disc_store.get(id), t))),
            )
            .find(|(_, same)| !same);
        if let Some((param, _)) = changed {
            return Err(Error::Contract(format!("frozen parameter `{param}` changed during stage {name}")));
        }

        let probe_rec_end = trainer.probe_reconstruction(stage)?;
        writeln!(log, "{global_iter},{name},probe_rec_end,{probe_rec_end:e}").map_err(io)?;
        log.flush().map_err(io)?;
        let dir = checkpoint_dir(out_dir, index, stage);
        let state =
            TrainState { stages_done: index + 1, stage_name: name.to_string(), global_iter, config: cfg.to_toml() };
        trainer.models.save(&dir, &state)?;
        let seconds = clock.elapsed().as_secs_f64();
        log::info!("stage {name} done in {seconds:.1}s, probe rec {probe_rec_start:.4} -> {probe_rec_end:.4}");
        reports.push(StageReport {
            name: name.to_string(),
            iterations: stage.iterations,
            start_iter,
            probe_rec_start,
            probe_rec_end,
            trainable_params: gen_train.len() + disc_train.len(),
            frozen_params: gen_frozen.len() + disc_frozen.len(),
            checkpoint: dir,
            seconds,
        });
    }
    log.flush().map_err(io)?;
    Ok(TrainReport { stages: reports, loss_log: log_path })
}

//! Adversarial training loop.
//!
//! Each cycle runs `ratio` critic updates followed by one generator update,
//! where `ratio` is 50 during the warmup epochs and 5 afterwards. Training
//! pairs are drawn cross-sectionally: a young-group slice and an old-group
//! slice from different subjects at the same axial position. The critic
//! minimizes `-(w_real - w_fake) + lambda_gp * gp`; the generator minimizes
//! `lambda_1 * L_gan + lambda_2 * L_id + lambda_3 * L_rec`, with the
//! self-reconstruction branch generated at zero age delta and the input
//! health state on the same minibatch.
//!
//! The parameter gradient of the gradient penalty is exact: after the
//! input-gradient pass, the directional derivative of the critic along the
//! normalized input gradient is rebuilt as first-order tape nodes and
//! differentiated (see `networks::discriminator_tangent_graph`).

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, Array4, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape};
use crate::conditioning::{encode_age, encode_age_delta, encode_health, AgeCode};
use crate::data::{SliceDataset, SubjectSlices};
use crate::error::{Error, Result};
use crate::image::SliceImage;
use crate::losses::{
    critic_loss, l1_per_sample_node, total_generator_loss, AgeRange, LossWeights,
};
use crate::networks::{
    age_codes_to_batch, discriminator_graph, discriminator_tangent_graph, generator_graph,
    health_codes_to_batch, init_discriminator, init_generator, slices_to_batch, ArchDescriptor,
    BoundParams, DiscriminatorParams, GenForwardOpts, GeneratorParams,
};
use crate::optim::{Adam, AdamConfig};
use crate::seeding::{derive_seed, Component};
use crate::Elem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u64,
    /// Critic updates per generator update after warmup.
    pub critic_iters: u64,
    /// Epochs with the elevated critic ratio.
    pub warmup_epochs: u64,
    pub warmup_critic_iters: u64,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Subjects with age < threshold form the young group; `None` uses the
    /// dataset median age.
    pub young_old_threshold: Option<u32>,
    pub loss_weights: LossWeights,
    /// Age span for the identity-loss weight; `None` uses the dataset span.
    pub age_range: Option<(u32, u32)>,
    pub arch: ArchDescriptor,
    /// Stop after this many optimizer updates (critic + generator), if set.
    pub max_steps: Option<u64>,
    /// Write a checkpoint every N updates, if set.
    pub checkpoint_every: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 600,
            critic_iters: 5,
            warmup_epochs: 20,
            warmup_critic_iters: 50,
            batch_size: 16,
            optimizer: AdamConfig::default(),
            seed: 0,
            young_old_threshold: None,
            loss_weights: LossWeights::default(),
            age_range: None,
            arch: ArchDescriptor::default(),
            max_steps: None,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.critic_iters == 0 || self.warmup_critic_iters == 0 {
            return Err(Error::Config("critic iterations must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.optimizer.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        self.loss_weights.validate()?;
        self.arch.validate()
    }
}

/// One sampled cross-sectional training pair, by dataset index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainingPair {
    pub young_subject: usize,
    pub old_subject: usize,
    pub slice: usize,
}

impl TrainingPair {
    pub fn young<'a>(&self, dataset: &'a SliceDataset) -> (&'a SubjectSlices, &'a SliceImage) {
        let s = &dataset.subjects[self.young_subject];
        (s, &s.slices[self.slice.min(s.slices.len() - 1)])
    }

    pub fn old<'a>(&self, dataset: &'a SliceDataset) -> (&'a SubjectSlices, &'a SliceImage) {
        let s = &dataset.subjects[self.old_subject];
        (s, &s.slices[self.slice.min(s.slices.len() - 1)])
    }
}

/// Young/old subject index split at an age threshold.
#[derive(Debug, Clone)]
pub struct GroupSplit {
    pub young: Vec<usize>,
    pub old: Vec<usize>,
    pub threshold: u32,
}

impl GroupSplit {
    pub fn new(dataset: &SliceDataset, threshold: Option<u32>) -> Result<Self> {
        let threshold = threshold
            .or_else(|| dataset.median_age())
            .ok_or_else(|| Error::Dataset("empty dataset".into()))?;
        let mut young = Vec::new();
        let mut old = Vec::new();
        for (i, s) in dataset.subjects.iter().enumerate() {
            if s.meta.age < threshold {
                young.push(i);
            } else {
                old.push(i);
            }
        }
        if young.is_empty() || old.is_empty() {
            return Err(Error::Dataset(format!(
                "young/old split at {threshold} years left an empty group \
                 ({} young, {} old)",
                young.len(),
                old.len()
            )));
        }
        Ok(GroupSplit {
            young,
            old,
            threshold,
        })
    }
}

/// Draw one training pair: a young-group sample and an old-group sample at a
/// shared axial slice position. The group split guarantees `a_i < a_o`.
pub fn sample_training_pair(
    dataset: &SliceDataset,
    groups: &GroupSplit,
    rng: &mut ChaCha12Rng,
) -> TrainingPair {
    let young_subject = groups.young[rng.random_range(0..groups.young.len())];
    let old_subject = groups.old[rng.random_range(0..groups.old.len())];
    let max_slice = dataset.subjects[young_subject]
        .slices
        .len()
        .min(dataset.subjects[old_subject].slices.len());
    let slice = rng.random_range(0..max_slice);
    TrainingPair {
        young_subject,
        old_subject,
        slice,
    }
}

/// Structured per-update log record (one JSON line each).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Critic {
        step: u64,
        epoch: u64,
        lr: f64,
        w_real: f64,
        w_fake: f64,
        gp: f64,
        loss: f64,
    },
    Generator {
        step: u64,
        epoch: u64,
        lr: f64,
        l_gan: f64,
        l_id: f64,
        l_rec: f64,
        total: f64,
    },
}

impl LogRecord {
    pub fn step(&self) -> u64 {
        match self {
            LogRecord::Critic { step, .. } | LogRecord::Generator { step, .. } => *step,
        }
    }

    pub fn epoch(&self) -> u64 {
        match self {
            LogRecord::Critic { epoch, .. } | LogRecord::Generator { epoch, .. } => *epoch,
        }
    }
}

/// Full mutable training state; serializes bit-identically through the
/// checkpoint module.
pub struct ModelState {
    pub config: TrainConfig,
    pub generator: GeneratorParams,
    pub discriminator: DiscriminatorParams,
    pub opt_g: Adam<Elem>,
    pub opt_d: Adam<Elem>,
    /// Total optimizer updates applied (critic + generator).
    pub step: u64,
    pub gen_updates: u64,
    /// Critic updates already done in the current critic/generator cycle.
    pub cycle_pos: u64,
    pub rng: ChaCha12Rng,
}

impl ModelState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let generator = init_generator(&config.arch, derive_seed(config.seed, Component::GeneratorInit))?;
        let discriminator =
            init_discriminator(&config.arch, derive_seed(config.seed, Component::DiscriminatorInit))?;
        let opt_g = Adam::new(config.optimizer, &generator.tensors());
        let opt_d = Adam::new(config.optimizer, &discriminator.tensors());
        let rng = ChaCha12Rng::seed_from_u64(derive_seed(config.seed, Component::Training));
        Ok(ModelState {
            config,
            generator,
            discriminator,
            opt_g,
            opt_d,
            step: 0,
            gen_updates: 0,
            cycle_pos: 0,
            rng,
        })
    }

    pub fn ensure_finite(&self) -> Result<()> {
        for (name, t) in self
            .generator
            .tensors()
            .into_iter()
            .chain(self.discriminator.tensors())
        {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameter tensor {name}")));
            }
        }
        Ok(())
    }
}

/// Bit-level checksum of a parameter set, for update-isolation checks.
pub fn params_checksum(tensors: &[(String, &ArrayD<Elem>)]) -> u64 {
    let mut acc = 0u64;
    for (_, t) in tensors {
        for v in t.iter() {
            acc = acc
                .rotate_left(1)
                .wrapping_add(v.to_bits() as u64);
        }
    }
    acc
}

/// Output sinks for a training run.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Line-delimited JSON log records.
    pub log_writer: Option<&'a mut dyn Write>,
    /// Periodic + final checkpoints go here.
    pub checkpoint_dir: Option<&'a Path>,
}

pub struct TrainOutcome {
    pub state: ModelState,
    pub logs: Vec<LogRecord>,
}

/// Per-batch tensors shared by the two step kinds.
struct BatchData {
    x: Array4<Elem>,
    y: Array4<Elem>,
    a_d: Array2<Elem>,
    a_o: Array2<Elem>,
    a_zero: Array2<Elem>,
    h_o: Array2<Elem>,
    h_i: Array2<Elem>,
    /// Identity-loss weights e^{-delta/span} per sample.
    id_weights: Vec<f64>,
}

/// Resolved, immutable training context.
pub struct Trainer<'a> {
    dataset: &'a SliceDataset,
    pub groups: GroupSplit,
    pub age_range: AgeRange,
    pub steps_per_epoch: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &TrainConfig, dataset: &'a SliceDataset) -> Result<Self> {
        config.validate()?;
        let groups = GroupSplit::new(dataset, config.young_old_threshold)?;
        let age_range = match config.age_range {
            Some((lo, hi)) => AgeRange::new(lo, hi)?,
            None => {
                let (lo, hi) = dataset
                    .age_bounds()
                    .ok_or_else(|| Error::Dataset("empty dataset".into()))?;
                AgeRange::new(lo, hi)?
            }
        };
        let young_slices: usize = groups
            .young
            .iter()
            .map(|&i| dataset.subjects[i].slices.len())
            .sum();
        let steps_per_epoch = (young_slices / config.batch_size).max(1) as u64;
        Ok(Trainer {
            dataset,
            groups,
            age_range,
            steps_per_epoch,
        })
    }

    pub fn epoch_of(&self, gen_updates: u64) -> u64 {
        gen_updates / self.steps_per_epoch
    }

    /// Critic ratio in force for a given epoch.
    pub fn critic_ratio(&self, config: &TrainConfig, epoch: u64) -> u64 {
        if epoch < config.warmup_epochs {
            config.warmup_critic_iters
        } else {
            config.critic_iters
        }
    }

    pub fn sample_batch(&self, rng: &mut ChaCha12Rng, n: usize) -> Vec<TrainingPair> {
        (0..n)
            .map(|_| sample_training_pair(self.dataset, &self.groups, rng))
            .collect()
    }

    fn assemble(&self, config: &TrainConfig, pairs: &[TrainingPair]) -> Result<BatchData> {
        let scheme = config.arch.encoding;
        let mut xs = Vec::with_capacity(pairs.len());
        let mut ys = Vec::with_capacity(pairs.len());
        let mut a_d = Vec::with_capacity(pairs.len());
        let mut a_o = Vec::with_capacity(pairs.len());
        let mut a_zero = Vec::with_capacity(pairs.len());
        let mut h_o = Vec::with_capacity(pairs.len());
        let mut h_i = Vec::with_capacity(pairs.len());
        let mut id_weights = Vec::with_capacity(pairs.len());
        for pair in pairs {
            let (young, x) = pair.young(self.dataset);
            let (old, y) = pair.old(self.dataset);
            xs.push(x);
            ys.push(y);
            a_d.push(encode_age_delta(young.meta.age, old.meta.age, scheme)?);
            a_o.push(encode_age(old.meta.age, scheme)?);
            a_zero.push(encode_age(0, scheme)?);
            h_o.push(encode_health(old.meta.health));
            h_i.push(encode_health(young.meta.health));
            id_weights.push(crate::losses::identity_weight(
                young.meta.age,
                old.meta.age,
                &self.age_range,
            ));
        }
        let len = config.arch.age_len();
        Ok(BatchData {
            x: slices_to_batch(&xs),
            y: slices_to_batch(&ys),
            a_d: age_codes_to_batch(&a_d, len)?,
            a_o: age_codes_to_batch(&a_o, len)?,
            a_zero: age_codes_to_batch(&a_zero, len)?,
            h_o: health_codes_to_batch(&h_o),
            h_i: health_codes_to_batch(&h_i),
            id_weights,
        })
    }

    /// One critic update. Generator parameters are read-only here.
    pub fn critic_step(
        &self,
        state: &mut ModelState,
        pairs: &[TrainingPair],
    ) -> Result<LogRecord> {
        if pairs.is_empty() {
            return Err(Error::Argument("empty critic batch".into()));
        }
        let config = state.config.clone();
        let weights = config.loss_weights;
        let batch = self.assemble(&config, pairs)?;
        let b = pairs.len();

        // Fresh interpolation factor per sample.
        let eps: Vec<f64> = (0..b).map(|_| state.rng.random_range(0.0..=1.0)).collect();

        let mut tape: Tape<Elem> = Tape::new();
        let bound = state.discriminator.bind(&mut tape, true);

        // Fake images with no gradient flow into the generator.
        let gen_bound = state.generator.bind(&mut tape, false);
        let x_node = tape.constant(batch.x.clone().into_dyn());
        let ad_node = tape.constant(batch.a_d.clone().into_dyn());
        let ho_node = tape.constant(batch.h_o.clone().into_dyn());
        let fake = generator_graph(
            &mut tape,
            &state.generator,
            &gen_bound,
            x_node,
            ad_node,
            ho_node,
            GenForwardOpts::default(),
        );
        let fake_values: Array4<Elem> = tape
            .value(fake)
            .clone()
            .into_dimensionality()
            .expect("generator output rank");

        // Interpolated samples z = eps * fake + (1 - eps) * real.
        let mut interp = batch.y.clone();
        for (i, &e) in eps.iter().enumerate() {
            let e = e as Elem;
            let mut zi = interp.index_axis_mut(ndarray::Axis(0), i);
            let fi = fake_values.index_axis(ndarray::Axis(0), i);
            zi.zip_mut_with(&fi, |z, &f| *z = e * f + (1.0 - e) * *z);
        }

        let ao_node = tape.constant(batch.a_o.clone().into_dyn());
        let y_node = tape.constant(batch.y.clone().into_dyn());
        let real_trace =
            discriminator_graph(&mut tape, &state.discriminator, &bound, y_node, ao_node, ho_node);
        let fake_in = tape.constant(fake_values.into_dyn());
        let fake_trace =
            discriminator_graph(&mut tape, &state.discriminator, &bound, fake_in, ao_node, ho_node);
        let z_node = tape.var(interp.into_dyn());
        let interp_trace =
            discriminator_graph(&mut tape, &state.discriminator, &bound, z_node, ao_node, ho_node);

        // Input gradients at the interpolants, per sample.
        let ones = Array1::from_elem(b, 1.0 as Elem);
        let z_sum = tape.dot_const(interp_trace.score, ones);
        let zgrads = tape.backward(z_sum);
        let gz: Array4<Elem> = zgrads
            .wrt(z_node)
            .clone()
            .into_dimensionality()
            .expect("input grad rank");
        let mut norms = vec![0.0f64; b];
        for (i, norm) in norms.iter_mut().enumerate() {
            *norm = gz
                .index_axis(ndarray::Axis(0), i)
                .iter()
                .map(|&v| (v as f64) * (v as f64))
                .sum::<f64>()
                .sqrt();
        }
        let gp_mean = norms.iter().map(|n| (n - 1.0) * (n - 1.0)).sum::<f64>() / b as f64;

        // Directional derivative along u = g / ||g||, as tape nodes.
        let mut u = gz;
        for (i, &n) in norms.iter().enumerate() {
            let inv = if n > 0.0 { (1.0 / n) as Elem } else { 0.0 };
            u.index_axis_mut(ndarray::Axis(0), i).mapv_inplace(|v| v * inv);
        }
        let tangent = discriminator_tangent_graph(
            &mut tape,
            &state.discriminator,
            &bound,
            &interp_trace,
            u,
        );

        // Objective: mean(fake) - mean(real) + lambda_gp * mean((n-1)^2).
        let inv_b = Array1::from_elem(b, (1.0 / b as f64) as Elem);
        let neg_inv_b = Array1::from_elem(b, (-1.0 / b as f64) as Elem);
        let fake_mean = tape.dot_const(fake_trace.score, inv_b.clone());
        let real_neg_mean = tape.dot_const(real_trace.score, neg_inv_b);
        let gp_coeffs = Array1::from_shape_fn(b, |i| {
            (weights.lambda_gp * 2.0 * (norms[i] - 1.0) / b as f64) as Elem
        });
        let gp_term = tape.dot_const(tangent, gp_coeffs);
        let wd = tape.add(fake_mean, real_neg_mean);
        let objective = tape.add(wd, gp_term);

        let w_real = mean_f64(tape.value(real_trace.score));
        let w_fake = mean_f64(tape.value(fake_trace.score));
        let loss = critic_loss(w_real, w_fake, gp_mean, &weights)?;
        if !loss.is_finite() || !w_real.is_finite() || !w_fake.is_finite() {
            return Err(Error::NonFinite(format!(
                "critic loss at step {} (w_real {w_real}, w_fake {w_fake}, gp {gp_mean})",
                state.step
            )));
        }

        let grads = tape.backward(objective);
        let grad_list = take_grads(&grads, &bound);
        let lr = state.opt_d.current_lr();
        let mut tensors = state.discriminator.tensors_mut();
        state.opt_d.step(&mut tensors, &grad_list);
        state.step += 1;

        Ok(LogRecord::Critic {
            step: state.step,
            epoch: self.epoch_of(state.gen_updates),
            lr,
            w_real,
            w_fake,
            gp: gp_mean,
            loss,
        })
    }

    /// One generator update. Discriminator parameters are read-only here.
    pub fn generator_step(
        &self,
        state: &mut ModelState,
        pairs: &[TrainingPair],
    ) -> Result<LogRecord> {
        if pairs.is_empty() {
            return Err(Error::Argument("empty generator batch".into()));
        }
        let config = state.config.clone();
        let weights = config.loss_weights;
        let batch = self.assemble(&config, pairs)?;
        let b = pairs.len();

        let mut tape: Tape<Elem> = Tape::new();
        let g_bound = state.generator.bind(&mut tape, true);
        let d_bound = state.discriminator.bind(&mut tape, false);

        let x_node = tape.constant(batch.x.clone().into_dyn());
        let ad_node = tape.constant(batch.a_d.clone().into_dyn());
        let ao_node = tape.constant(batch.a_o.clone().into_dyn());
        let azero_node = tape.constant(batch.a_zero.clone().into_dyn());
        let ho_node = tape.constant(batch.h_o.clone().into_dyn());
        let hi_node = tape.constant(batch.h_i.clone().into_dyn());

        // Aged branch: x_hat = G(x, a_d, h_o), scored by the critic.
        let x_hat = generator_graph(
            &mut tape,
            &state.generator,
            &g_bound,
            x_node,
            ad_node,
            ho_node,
            GenForwardOpts::default(),
        );
        let fake_trace = discriminator_graph(
            &mut tape,
            &state.discriminator,
            &d_bound,
            x_hat,
            ao_node,
            ho_node,
        );
        let neg_inv_b = Array1::from_elem(b, (-1.0 / b as f64) as Elem);
        let l_gan_node = tape.dot_const(fake_trace.score, neg_inv_b);

        // Identity branch: weighted L1 between input and aged output.
        let id_l1 = l1_per_sample_node(&mut tape, x_node, x_hat);
        let id_weights = Array1::from_shape_fn(b, |i| (batch.id_weights[i] / b as f64) as Elem);
        let l_id_node = tape.dot_const(id_l1, id_weights);

        // Self-reconstruction branch: zero age delta, input health state.
        let x_same = generator_graph(
            &mut tape,
            &state.generator,
            &g_bound,
            x_node,
            azero_node,
            hi_node,
            GenForwardOpts::default(),
        );
        let rec_l1 = l1_per_sample_node(&mut tape, x_node, x_same);
        let inv_b = Array1::from_elem(b, (1.0 / b as f64) as Elem);
        let l_rec_node = tape.dot_const(rec_l1, inv_b);

        let gan_w = tape.scale(l_gan_node, weights.lambda_gan);
        let id_w = tape.scale(l_id_node, weights.lambda_id);
        let rec_w = tape.scale(l_rec_node, weights.lambda_rec);
        let partial = tape.add(gan_w, id_w);
        let objective = tape.add(partial, rec_w);

        let l_gan = tape.scalar(l_gan_node) as f64;
        let l_id = tape.scalar(l_id_node) as f64;
        let l_rec = tape.scalar(l_rec_node) as f64;
        let total = total_generator_loss(l_gan, l_id, l_rec, &weights);
        if !total.is_finite() {
            return Err(Error::NonFinite(format!(
                "generator loss at step {} (gan {l_gan}, id {l_id}, rec {l_rec})",
                state.step
            )));
        }

        let grads = tape.backward(objective);
        let grad_list = take_grads(&grads, &g_bound);
        let lr = state.opt_g.current_lr();
        let mut tensors = state.generator.tensors_mut();
        state.opt_g.step(&mut tensors, &grad_list);
        state.step += 1;
        state.gen_updates += 1;

        Ok(LogRecord::Generator {
            step: state.step,
            epoch: self.epoch_of(state.gen_updates - 1),
            lr,
            l_gan,
            l_id,
            l_rec,
            total,
        })
    }
}

fn mean_f64(values: &ArrayD<Elem>) -> f64 {
    values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64
}

fn take_grads(grads: &Gradients<Elem>, bound: &BoundParams) -> Vec<Option<ArrayD<Elem>>> {
    bound.ids.iter().map(|&id| grads.get(id).cloned()).collect()
}

/// Train from a fresh state.
pub fn train(
    config: TrainConfig,
    dataset: &SliceDataset,
    hooks: &mut TrainHooks,
) -> Result<TrainOutcome> {
    let state = ModelState::new(config)?;
    train_from(state, dataset, hooks)
}

/// Continue training from an existing (possibly checkpointed) state until
/// the configured epoch or step budget is exhausted.
pub fn train_from(
    mut state: ModelState,
    dataset: &SliceDataset,
    hooks: &mut TrainHooks,
) -> Result<TrainOutcome> {
    let trainer = Trainer::new(&state.config, dataset)?;
    let config = state.config.clone();
    let mut logs = Vec::new();

    let budget_left = |state: &ModelState| match config.max_steps {
        Some(n) => state.step < n,
        None => true,
    };

    'outer: while budget_left(&state) {
        let epoch = trainer.epoch_of(state.gen_updates);
        if epoch >= config.epochs {
            break;
        }
        let ratio = trainer.critic_ratio(&config, epoch);
        while state.cycle_pos < ratio {
            if !budget_left(&state) {
                break 'outer;
            }
            let pairs = trainer.sample_batch(&mut state.rng, config.batch_size);
            let record = trainer.critic_step(&mut state, &pairs)?;
            state.cycle_pos += 1;
            emit(&record, &mut logs, hooks, &state)?;
        }
        if !budget_left(&state) {
            break;
        }
        let pairs = trainer.sample_batch(&mut state.rng, config.batch_size);
        let record = trainer.generator_step(&mut state, &pairs)?;
        state.cycle_pos = 0;
        emit(&record, &mut logs, hooks, &state)?;
    }

    if let Some(dir) = hooks.checkpoint_dir {
        crate::checkpoint::save(&dir.join("final.ck"), &state)?;
    }
    Ok(TrainOutcome { state, logs })
}

fn emit(
    record: &LogRecord,
    logs: &mut Vec<LogRecord>,
    hooks: &mut TrainHooks,
    state: &ModelState,
) -> Result<()> {
    if let Some(w) = hooks.log_writer.as_deref_mut() {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::parse("log record", e))?;
        writeln!(w, "{line}").map_err(|e| Error::io("<log>", e))?;
    }
    logs.push(record.clone());
    if let (Some(dir), Some(every)) = (hooks.checkpoint_dir, state.config.checkpoint_every) {
        if every > 0 && state.step % every == 0 {
            crate::checkpoint::save(&dir.join(format!("step_{:07}.ck", state.step)), state)?;
        }
    }
    Ok(())
}

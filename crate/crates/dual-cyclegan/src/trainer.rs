//! Two-stage training loop: joint pre-training then fine-tuning, with Adam,
//! stepwise learning-rate halving, per-network gradient clipping,
//! identity-loss gating, JSON loss logging, and resumable checkpoints.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{load_archive, save_archive, Archive, CheckpointError};
use crate::data::{sample_batch, DataError, Manifest, Split, TrainSet};
use crate::losses::{
    build_disc_loss, build_gen_loss, Batch, BatchValues, FakeValues, LossBreakdown, LossCfg,
    LossError, LossWeights, Stage,
};
use crate::model::{ModelArch, ModelBundle, ParamBinder, ParamSet};
use crate::tape::{Tape, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub pretrain_iters: u64,
    pub finetune_iters: u64,
    pub idt_cutoff: u64,
    pub batch: usize,
    pub clip_len: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub lr_half_every: u64,
    pub adam_eps: f64,
    pub adam_betas: (f64, f64),
    pub grad_clip_norm: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub loss_cfg: LossCfg,
    pub arch: ModelArch,
    pub checkpoint_every: u64,
    /// Marks the reduced presets whose iteration constants are scaled down.
    pub desk_scale: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pretrain_iters: 400_000,
            finetune_iters: 200_000,
            idt_cutoff: 100_000,
            batch: 4,
            clip_len: 12_000,
            lr_g: 2e-4,
            lr_d: 1e-4,
            lr_half_every: 200_000,
            adam_eps: 1e-8,
            adam_betas: (0.5, 0.999),
            grad_clip_norm: 10.0,
            weights: LossWeights::default(),
            seed: 1,
            loss_cfg: LossCfg::full(),
            arch: ModelArch::full(),
            checkpoint_every: 10_000,
            desk_scale: false,
        }
    }
}

impl TrainConfig {
    /// Laptop-scale preset: iteration constants divided by 1000, small model.
    pub fn desk() -> Self {
        Self {
            pretrain_iters: 400,
            finetune_iters: 200,
            idt_cutoff: 100,
            batch: 2,
            clip_len: 1200,
            lr_half_every: 200,
            loss_cfg: LossCfg::desk(),
            arch: ModelArch::desk(),
            checkpoint_every: 100,
            desk_scale: true,
            ..Self::default()
        }
    }

    /// Minimal preset for determinism and resume tests.
    pub fn micro() -> Self {
        Self {
            pretrain_iters: 30,
            finetune_iters: 20,
            idt_cutoff: 10,
            batch: 1,
            clip_len: 600,
            lr_half_every: 20,
            loss_cfg: LossCfg::micro(),
            arch: ModelArch::micro(),
            checkpoint_every: 10,
            desk_scale: true,
            ..Self::default()
        }
    }

    pub fn total_iters(&self) -> u64 {
        self.pretrain_iters + self.finetune_iters
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.pretrain_iters == 0
            || self.finetune_iters == 0
            || self.lr_half_every == 0
            || self.checkpoint_every == 0
            || self.batch == 0
            || self.clip_len == 0
        {
            return Err(TrainError::Config("iteration/batch constants must be > 0".into()));
        }
        if self.lr_g <= 0.0 || self.lr_d <= 0.0 {
            return Err(TrainError::Config("learning rates must be > 0".into()));
        }
        if self.clip_len % 3 != 0 {
            return Err(TrainError::Config("clip_len must be divisible by 3".into()));
        }
        Ok(())
    }

    pub fn stage_at(&self, iter: u64) -> Stage {
        if iter < self.pretrain_iters {
            Stage::Pretrain
        } else {
            Stage::Finetune
        }
    }
}

/// Stepwise halving: base x 0.5^floor(iter / half_every).
pub fn lr_at(iter: u64, base_lr: f64, half_every: u64) -> f64 {
    base_lr * 0.5f64.powi((iter / half_every) as i32)
}

/// Scales the group so its global L2 norm does not exceed `max_norm`;
/// returns the pre-clip norm. NaN/Inf gradients abort.
pub fn clip_grad_group(grads: &mut [&mut Tensor], max_norm: f64) -> Result<f64, TrainError> {
    let mut sq = 0.0;
    for g in grads.iter() {
        if !g.is_finite() {
            return Err(TrainError::Divergence("NaN/Inf gradient".into()));
        }
        sq += g.sq_norm();
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data.iter_mut() {
                *v *= scale;
            }
        }
    }
    Ok(norm)
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub iter: u64,
    pub stage: Stage,
    pub bundle: ModelBundle,
    /// First/second Adam moments, indexed like the bundle's parameters.
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    pub rng: ChaCha8Rng,
    pub best_valid_metric: f64,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Self {
        let bundle = ModelBundle::init(config.arch.clone(), config.seed);
        let zeros: Vec<Tensor> = (0..bundle.params.len())
            .map(|i| {
                let t = bundle.params.tensor(i);
                Tensor::zeros(t.rows, t.cols)
            })
            .collect();
        Self {
            iter: 0,
            stage: Stage::Pretrain,
            m: zeros.clone(),
            v: zeros,
            bundle,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            best_valid_metric: f64::INFINITY,
        }
    }
}

fn network_prefix(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// One Adam update over the selected parameters with per-network clipping.
fn apply_update(
    state_params: &mut ParamSet,
    m: &mut [Tensor],
    v: &mut [Tensor],
    mut grads: HashMap<usize, Tensor>,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
    t: u64,
    max_norm: f64,
) -> Result<(), TrainError> {
    // global L2 clipping, one norm per network; accumulate in index order so
    // the (non-associative) float sums are reproducible run to run
    let mut indices: Vec<usize> = grads.keys().copied().collect();
    indices.sort_unstable();
    let mut group_sq: HashMap<&str, f64> = HashMap::new();
    for &idx in &indices {
        let g = &grads[&idx];
        if !g.is_finite() {
            return Err(TrainError::Divergence(format!(
                "NaN/Inf gradient for {}",
                state_params.name(idx)
            )));
        }
        *group_sq.entry(network_prefix(state_params.name(idx))).or_insert(0.0) += g.sq_norm();
    }
    let scales: HashMap<String, f64> = group_sq
        .into_iter()
        .map(|(k, sq)| {
            let norm = sq.sqrt();
            (k.to_string(), if norm > max_norm { max_norm / norm } else { 1.0 })
        })
        .collect();
    for (&idx, g) in grads.iter_mut() {
        let scale = scales[network_prefix(state_params.name(idx))];
        if scale != 1.0 {
            for v in g.data.iter_mut() {
                *v *= scale;
            }
        }
    }
    let (b1, b2) = betas;
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    for (idx, g) in grads {
        let mi = &mut m[idx];
        let vi = &mut v[idx];
        let p = state_params.tensor_mut(idx);
        for k in 0..p.data.len() {
            let gk = g.data[k];
            mi.data[k] = b1 * mi.data[k] + (1.0 - b1) * gk;
            vi.data[k] = b2 * vi.data[k] + (1.0 - b2) * gk * gk;
            let mhat = mi.data[k] / bc1;
            let vhat = vi.data[k] / bc2;
            p.data[k] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// One full iteration: generators updated on total_g, then discriminators on
/// total_d using the cached (detached) fakes from the generator pass.
pub fn train_step(
    state: &mut TrainState,
    batch: &Batch,
    config: &TrainConfig,
) -> Result<LossBreakdown, TrainError> {
    let stage = config.stage_at(state.iter);
    let include_idt = state.iter <= config.idt_cutoff;
    let values = BatchValues::from_batch(batch);

    // generator pass
    let mut tape = Tape::new();
    let mut binder = ParamBinder::new();
    let graph = build_gen_loss(
        &mut tape,
        &state.bundle,
        &mut binder,
        &values,
        stage,
        include_idt,
        &config.weights,
        &config.loss_cfg,
    )?;
    let total_g = tape.value(graph.total_g).item();
    if !total_g.is_finite() {
        return Err(TrainError::Divergence(format!("generator loss {total_g} at iter {}", state.iter)));
    }
    let adv = tape.value(graph.adv).item();
    let cyc = tape.value(graph.cyc).item();
    let idt = graph.idt.map(|n| tape.value(n).item()).unwrap_or(0.0);
    let fakes = FakeValues::from_nodes(&tape, &graph.fakes);
    let grads_all = tape.backward(graph.total_g);
    let mut gen_grads: HashMap<usize, Tensor> = HashMap::new();
    for (idx, node) in binder.bound() {
        if state.bundle.params.name(idx).starts_with('g') {
            if let Some(g) = &grads_all[node] {
                gen_grads.insert(idx, g.clone());
            }
        }
    }
    drop(tape);
    let t = state.iter + 1;
    apply_update(
        &mut state.bundle.params,
        &mut state.m,
        &mut state.v,
        gen_grads,
        lr_at(state.iter, config.lr_g, config.lr_half_every),
        config.adam_betas,
        config.adam_eps,
        t,
        config.grad_clip_norm,
    )?;

    // discriminator pass on detached fakes
    let mut dtape = Tape::new();
    let mut dbinder = ParamBinder::new();
    let dgraph = build_disc_loss(&mut dtape, &state.bundle, &mut dbinder, &values, &fakes, &config.loss_cfg)?;
    let total_d = dtape.value(dgraph.total_d).item();
    if !total_d.is_finite() {
        return Err(TrainError::Divergence(format!("discriminator loss {total_d} at iter {}", state.iter)));
    }
    let fake = dtape.value(dgraph.fake).item();
    let real = dtape.value(dgraph.real).item();
    let dgrads_all = dtape.backward(dgraph.total_d);
    let mut disc_grads: HashMap<usize, Tensor> = HashMap::new();
    for (idx, node) in dbinder.bound() {
        if let Some(g) = &dgrads_all[node] {
            disc_grads.insert(idx, g.clone());
        }
    }
    drop(dtape);
    apply_update(
        &mut state.bundle.params,
        &mut state.m,
        &mut state.v,
        disc_grads,
        lr_at(state.iter, config.lr_d, config.lr_half_every),
        config.adam_betas,
        config.adam_eps,
        t,
        config.grad_clip_norm,
    )?;

    state.iter += 1;
    state.stage = config.stage_at(state.iter);
    Ok(LossBreakdown {
        adv,
        cyc,
        idt,
        fake,
        real,
        total_g,
        total_d,
    })
}

fn rng_to_meta(rng: &ChaCha8Rng) -> serde_json::Value {
    let seed = rng.get_seed();
    let word_pos = rng.get_word_pos();
    serde_json::json!({
        "seed_hex": seed.iter().map(|b| format!("{b:02x}")).collect::<String>(),
        "word_pos": word_pos.to_string(),
    })
}

fn rng_from_meta(meta: &serde_json::Value) -> Result<ChaCha8Rng, TrainError> {
    let hex = meta["seed_hex"]
        .as_str()
        .ok_or_else(|| TrainError::Config("checkpoint missing rng seed".into()))?;
    if hex.len() != 64 {
        return Err(TrainError::Config("bad rng seed length".into()));
    }
    let mut seed = [0u8; 32];
    for (i, byte) in seed.iter_mut().enumerate() {
        *byte = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16)
            .map_err(|_| TrainError::Config("bad rng seed hex".into()))?;
    }
    let word_pos: u128 = meta["word_pos"]
        .as_str()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| TrainError::Config("checkpoint missing rng position".into()))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_word_pos(word_pos);
    Ok(rng)
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<(), TrainError> {
    let mut tensors: Vec<(String, Tensor)> = Vec::new();
    for (name, t) in state.bundle.params.iter() {
        tensors.push((name.to_string(), t.clone()));
    }
    for i in 0..state.bundle.params.len() {
        tensors.push((format!("adam_m.{}", state.bundle.params.name(i)), state.m[i].clone()));
        tensors.push((format!("adam_v.{}", state.bundle.params.name(i)), state.v[i].clone()));
    }
    let meta = serde_json::json!({
        "iter": state.iter,
        "stage": state.stage,
        "best_valid_metric": if state.best_valid_metric.is_finite() {
            serde_json::json!(state.best_valid_metric)
        } else {
            serde_json::Value::Null
        },
        "rng": rng_to_meta(&state.rng),
        "arch": state.bundle.arch,
    });
    save_archive(path, &Archive { meta, tensors })?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState, TrainError> {
    let archive = load_archive(path)?;
    let meta = &archive.meta;
    let arch: ModelArch = serde_json::from_value(meta["arch"].clone())
        .map_err(|e| TrainError::Config(format!("checkpoint arch: {e}")))?;
    let iter = meta["iter"]
        .as_u64()
        .ok_or_else(|| TrainError::Config("checkpoint missing iter".into()))?;
    let stage: Stage = serde_json::from_value(meta["stage"].clone())
        .map_err(|e| TrainError::Config(format!("checkpoint stage: {e}")))?;
    let best_valid_metric = meta["best_valid_metric"].as_f64().unwrap_or(f64::INFINITY);
    let rng = rng_from_meta(&meta["rng"])?;

    let mut by_name: HashMap<String, Tensor> = archive.tensors.into_iter().collect();
    let mut params = ParamSet::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    for (name, rows, cols) in ModelBundle::expected_shapes(&arch) {
        let take = |map: &mut HashMap<String, Tensor>, key: &str| -> Result<Tensor, TrainError> {
            let t = map
                .remove(key)
                .ok_or_else(|| TrainError::Config(format!("checkpoint missing tensor {key}")))?;
            if t.rows != rows || t.cols != cols {
                return Err(TrainError::Config(format!(
                    "tensor {key} has shape {}x{}, expected {rows}x{cols}",
                    t.rows, t.cols
                )));
            }
            Ok(t)
        };
        let p = take(&mut by_name, &name)?;
        m.push(take(&mut by_name, &format!("adam_m.{name}"))?);
        v.push(take(&mut by_name, &format!("adam_v.{name}"))?);
        params.insert(name, p);
    }
    Ok(TrainState {
        iter,
        stage,
        bundle: ModelBundle { arch, params },
        m,
        v,
        rng,
        best_valid_metric,
    })
}

/// Light validation: LSD of the composite mapping against the HR reference
/// on the first validation pair (truncated), lower is better.
fn validation_metric(state: &TrainState, valid: &TrainSet) -> Option<f64> {
    let (z, y) = valid.pairs.first()?;
    let max_lr = 4800.min(z.len() / 3 * 3);
    if max_lr < state.bundle.arch.gen_receptive_field() {
        return None;
    }
    let z_clip = crate::audio::AudioClip {
        samples: z.samples[..max_lr].to_vec(),
        sample_rate: z.sample_rate,
    };
    let y_clip = crate::audio::AudioClip {
        samples: y.samples[..3 * max_lr].to_vec(),
        sample_rate: y.sample_rate,
    };
    let sr = crate::model::composite_sr(&state.bundle, &z_clip).ok()?;
    crate::metrics::lsd_db(&y_clip, &sr).ok()
}

/// Runs (or resumes) the full two-stage schedule. Loss lines go to stdout and
/// `run_dir/train_log.jsonl`; checkpoints land in `run_dir`. Returns the
/// final checkpoint path.
pub fn run_training(
    config: &TrainConfig,
    manifest: &Manifest,
    run_dir: &Path,
    resume: Option<&Path>,
) -> Result<PathBuf, TrainError> {
    config.validate()?;
    fs::create_dir_all(run_dir)?;
    let config_json = serde_json::to_string_pretty(config)
        .map_err(|e| TrainError::Config(e.to_string()))?;
    fs::write(run_dir.join("config.json"), config_json)?;

    let train_set = TrainSet::load(manifest, Split::Train)?;
    if train_set.is_empty() {
        return Err(TrainError::Config("train split is empty in some domain".into()));
    }
    let valid_set = TrainSet::load(manifest, Split::Valid)?;

    let mut state = match resume {
        Some(path) => {
            let state = load_checkpoint(path)?;
            if state.bundle.arch != config.arch {
                return Err(TrainError::Config(
                    "checkpoint architecture does not match the configuration".into(),
                ));
            }
            state
        }
        None => TrainState::new(config),
    };

    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(run_dir.join("train_log.jsonl"))?;

    let mut last_good = resume.map(Path::to_path_buf);
    let total = config.total_iters();
    while state.iter < total {
        let batch = sample_batch(
            &train_set,
            &mut state.rng,
            config.clip_len,
            config.batch,
            config.loss_cfg.lr_rate,
        )?;
        let iter_before = state.iter;
        let stage_before = config.stage_at(iter_before);
        let breakdown = match train_step(&mut state, &batch, config) {
            Ok(b) => b,
            Err(TrainError::Divergence(msg)) => {
                let hint = last_good
                    .as_ref()
                    .map(|p| format!("; last good checkpoint: {}", p.display()))
                    .unwrap_or_default();
                return Err(TrainError::Divergence(format!("{msg}{hint}")));
            }
            Err(e) => return Err(e),
        };
        let line = breakdown.json_line(iter_before, stage_before);
        println!("{line}");
        writeln!(log, "{line}")?;

        let at_boundary = state.iter == config.pretrain_iters || state.iter == total;
        if state.iter % config.checkpoint_every == 0 || at_boundary {
            if let Some(metric) = validation_metric(&state, &valid_set) {
                if metric < state.best_valid_metric {
                    state.best_valid_metric = metric;
                }
            }
            let path = run_dir.join(format!("ckpt_{:08}.ckpt", state.iter));
            save_checkpoint(&state, &path)?;
            last_good = Some(path);
        }
    }
    let final_path = run_dir.join("final.ckpt");
    save_checkpoint(&state, &final_path)?;
    Ok(final_path)
}

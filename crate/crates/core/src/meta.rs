//! Training and adaptation loops: Reptile meta-training, conventional
//! training, classical per-pair optimization, and few-shot test-time
//! optimization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::CasePair;
use crate::error::{Error, Result};
use crate::losses::{record_total_loss, LossWeights};
use crate::models::{record_pair, DirectDdfModel, RegNet};
use crate::optim::{sgd_step, AdamConfig, AdamState, LinearDecay};
use crate::params::ParamVector;
use crate::tape::Tape;
use crate::transforms::{apply_affine, sample_affine, AffineRanges, DisplacementField};
use crate::volume::Volume;

/// One registration task: a moving and a fixed image on the same grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub id: usize,
    pub moving: Volume,
    pub fixed: Volume,
}

impl ImagePair {
    pub fn new(id: usize, moving: Volume, fixed: Volume) -> Result<Self> {
        moving.expect_same_grid(&fixed, "ImagePair")?;
        Ok(Self { id, moving, fixed })
    }

    pub fn from_case(id: usize, case: &CasePair) -> Self {
        Self {
            id,
            moving: case.moving.image.clone(),
            fixed: case.fixed.image.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Inner mini-batches (Adam steps) per episode.
    pub k: usize,
    /// Augmented copies of the episode's pair per mini-batch.
    pub inner_batch: usize,
    pub inner_lr: f32,
    pub augment: AffineRanges,
    pub loss_weights: LossWeights,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            k: 10,
            inner_batch: 4,
            inner_lr: 1e-5,
            augment: AffineRanges::default(),
            loss_weights: LossWeights::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_batch == 0 {
            return Err(Error::Config("inner_batch must be at least 1".into()));
        }
        check_lr(self.inner_lr)?;
        self.augment.validate()
    }
}

fn check_lr(lr: f32) -> Result<()> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::Config(format!("learning rate must be finite and non-negative, got {lr}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    /// Inner steps over the whole run; episodes = this / `episode.k`.
    pub total_inner_iterations: u64,
    /// Meta step size, indexed by cumulative inner steps.
    pub beta_schedule: LinearDecay,
    pub episode: EpisodeConfig,
    pub seed: u64,
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        self.episode.validate()?;
        let k = self.episode.k as u64;
        if k == 0 {
            return Err(Error::Config("meta-training needs k >= 1".into()));
        }
        if !self.total_inner_iterations.is_multiple_of(k) {
            return Err(Error::Config(format!(
                "total_inner_iterations {} is not divisible by k = {k}",
                self.total_inner_iterations
            )));
        }
        Ok(())
    }

    pub fn episodes(&self) -> u64 {
        self.total_inner_iterations / self.episode.k.max(1) as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TtoConfig {
    pub updates: usize,
    pub batch: usize,
    pub lr: f32,
    pub augment_enabled: bool,
    pub augment: AffineRanges,
    pub loss_weights: LossWeights,
}

impl Default for TtoConfig {
    fn default() -> Self {
        let e = EpisodeConfig::default();
        Self {
            updates: 5,
            batch: 1,
            lr: e.inner_lr,
            augment_enabled: false,
            augment: e.augment,
            loss_weights: e.loss_weights,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConventionalConfig {
    pub iterations: usize,
    pub batch: usize,
    pub lr: f32,
    pub augment: AffineRanges,
    pub loss_weights: LossWeights,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalConfig {
    pub iterations: usize,
    pub lr: f32,
    pub loss_weights: LossWeights,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            lr: 0.01,
            loss_weights: LossWeights::default(),
        }
    }
}

/// Loss and parameter gradient of one pair under `params`.
pub fn loss_and_gradient(
    net: &RegNet,
    params: &ParamVector,
    moving: &Volume,
    fixed: &Volume,
    w: LossWeights,
) -> Result<(f32, ParamVector)> {
    let mut tape = Tape::new();
    let input = record_pair(&mut tape, moving, fixed)?;
    let bound = params.record(&mut tape);
    let ddf = net.record(&mut tape, &bound, &input)?;
    let loss = record_total_loss(&mut tape, input.moving, input.fixed, ddf, w)?;
    let value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    Ok((value, bound.gradient(&mut grads)))
}

/// Mean loss and mean gradient over a mini-batch of pairs.
fn batch_gradient(
    net: &RegNet,
    params: &ParamVector,
    batch: &[(Volume, Volume)],
    w: LossWeights,
) -> Result<(f32, ParamVector)> {
    let mut total = 0.0f64;
    let mut sum: Option<ParamVector> = None;
    for (m, f) in batch {
        let (loss, grad) = loss_and_gradient(net, params, m, f, w)?;
        total += loss as f64;
        sum = Some(match sum {
            None => grad,
            Some(mut acc) => {
                acc.values_mut().iter_mut().zip(grad.values()).for_each(|(a, g)| *a += g);
                acc
            }
        });
    }
    let mut grad = sum.ok_or_else(|| Error::invalid("empty mini-batch"))?;
    if batch.len() > 1 {
        let inv = 1.0 / batch.len() as f32;
        grad.values_mut().iter_mut().for_each(|g| *g *= inv);
    }
    Ok(((total / batch.len() as f64) as f32, grad))
}

fn is_finite_step(loss: f32, grad: &ParamVector) -> bool {
    loss.is_finite() && grad.values().iter().all(|g| g.is_finite())
}

/// Moving and fixed images, each under its own random affine.
pub fn augment_pair<R: Rng + ?Sized>(
    rng: &mut R,
    moving: &Volume,
    fixed: &Volume,
    ranges: &AffineRanges,
) -> Result<(Volume, Volume)> {
    let am = sample_affine(rng, ranges);
    let af = sample_affine(rng, ranges);
    Ok((apply_affine(moving, &am)?, apply_affine(fixed, &af)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub theta: ParamVector,
    /// Mini-batch mean loss before each inner step.
    pub losses: Vec<f32>,
}

impl Episode {
    pub fn mean_loss(&self) -> f64 {
        if self.losses.is_empty() {
            return f64::NAN;
        }
        self.losses.iter().map(|&l| l as f64).sum::<f64>() / self.losses.len() as f64
    }
}

/// Adapts a copy of the network's parameters to one pair with `k` Adam steps
/// on freshly augmented mini-batches.
pub fn run_episode<R: Rng + ?Sized>(
    net: &RegNet,
    pair: &ImagePair,
    cfg: &EpisodeConfig,
    rng: &mut R,
) -> Result<Episode> {
    cfg.validate()?;
    let mut theta = net.params().clone();
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.inner_lr), &theta);
    let mut losses = Vec::with_capacity(cfg.k);
    for step in 0..cfg.k {
        let batch = (0..cfg.inner_batch)
            .map(|_| augment_pair(rng, &pair.moving, &pair.fixed, &cfg.augment))
            .collect::<Result<Vec<_>>>()?;
        let (loss, grad) = batch_gradient(net, &theta, &batch, cfg.loss_weights)?;
        if !is_finite_step(loss, &grad) {
            return Err(Error::NonFinite { step });
        }
        theta = adam.step(&theta, &grad)?;
        losses.push(loss);
    }
    Ok(Episode { theta, losses })
}

/// `ω + β·(θ − ω)`, evaluated in double precision so both endpoints are
/// exact and every result lies on the segment.
pub fn reptile_update(omega: &ParamVector, theta: &ParamVector, beta: f64) -> Result<ParamVector> {
    omega.check_layout(theta, "reptile_update")?;
    if !beta.is_finite() {
        return Err(Error::invalid(format!("meta step size must be finite, got {beta}")));
    }
    let mut out = omega.clone();
    for (w, &t) in out.values_mut().iter_mut().zip(theta.values()) {
        let (a, b) = (*w as f64, t as f64);
        *w = (a + beta * (b - a)) as f32;
    }
    Ok(out)
}

/// One line of the meta-training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub episode: u64,
    pub cumulative_step: u64,
    pub pair_id: usize,
    pub beta: f64,
    /// NaN for aborted episodes.
    pub mean_episode_loss: f64,
}

pub const LOG_HEADER: &str = "episode,cumulative_step,pair_id,beta,mean_episode_loss";

impl LogRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.episode, self.cumulative_step, self.pair_id, self.beta, self.mean_episode_loss
        )
    }
}

/// Most aborted episodes tolerated in a row.
pub const MAX_CONSECUTIVE_ABORTS: usize = 3;

/// The training log as CSV text with a header row.
pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut text = String::from(LOG_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&row.to_csv());
        text.push('\n');
    }
    text
}

/// Reptile meta-training. `observe` sees every log row as it is produced.
pub fn meta_train(
    pairs: &[ImagePair],
    cfg: &MetaConfig,
    init: RegNet,
    mut observe: impl FnMut(&LogRow),
) -> Result<(RegNet, Vec<LogRow>)> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::invalid("meta-training needs at least one pair"));
    }
    let mut rng = crate::seeds::rng(cfg.seed, crate::seeds::Stream::Meta, 0);
    let k = cfg.episode.k as u64;
    let mut net = init;
    let mut log = Vec::new();
    let mut aborts = 0usize;
    for e in 0..cfg.episodes() {
        let pick = rng.gen_range(0..pairs.len());
        let pair = &pairs[pick];
        let beta = cfg.beta_schedule.value(e * k);
        let mean_episode_loss = match run_episode(&net, pair, &cfg.episode, &mut rng) {
            Ok(ep) => {
                aborts = 0;
                let omega = reptile_update(net.params(), &ep.theta, beta)?;
                net = net.with_params(omega)?;
                ep.mean_loss()
            }
            Err(Error::NonFinite { .. }) => {
                aborts += 1;
                f64::NAN
            }
            Err(other) => return Err(other),
        };
        let row = LogRow {
            episode: e,
            cumulative_step: (e + 1) * k,
            pair_id: pair.id,
            beta,
            mean_episode_loss,
        };
        observe(&row);
        log.push(row);
        if aborts > MAX_CONSECUTIVE_ABORTS {
            return Err(Error::TooManyAborts {
                episode: e as usize,
                consecutive: aborts,
            });
        }
    }
    Ok((net, log))
}

/// Standard mini-batch training over all pairs. Returns the trained network
/// and the batch loss before each step.
pub fn train_conventional(
    pairs: &[ImagePair],
    cfg: &ConventionalConfig,
    init: RegNet,
    mut observe: impl FnMut(usize, f32),
) -> Result<(RegNet, Vec<f32>)> {
    if pairs.is_empty() {
        return Err(Error::invalid("training needs at least one pair"));
    }
    if cfg.batch == 0 {
        return Err(Error::Config("batch must be at least 1".into()));
    }
    check_lr(cfg.lr)?;
    cfg.augment.validate()?;
    let mut rng = crate::seeds::rng(cfg.seed, crate::seeds::Stream::Conventional, 0);
    let mut params = init.params().clone();
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), &params);
    let mut losses = Vec::with_capacity(cfg.iterations);
    for step in 0..cfg.iterations {
        let batch = (0..cfg.batch)
            .map(|_| {
                let p = &pairs[rng.gen_range(0..pairs.len())];
                augment_pair(&mut rng, &p.moving, &p.fixed, &cfg.augment)
            })
            .collect::<Result<Vec<_>>>()?;
        let (loss, grad) = batch_gradient(&init, &params, &batch, cfg.loss_weights)?;
        if !is_finite_step(loss, &grad) {
            return Err(Error::NonFinite { step });
        }
        params = adam.step(&params, &grad)?;
        observe(step, loss);
        losses.push(loss);
    }
    Ok((init.with_params(params)?, losses))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassicalResult {
    pub ddf: DisplacementField,
    /// Total loss before each update, then after the last: `iterations + 1`
    /// entries.
    pub losses: Vec<f32>,
}

/// Optimizes a displacement field directly for one pair with plain SGD.
pub fn classical_register(moving: &Volume, fixed: &Volume, cfg: &ClassicalConfig) -> Result<ClassicalResult> {
    moving.expect_same_grid(fixed, "classical_register")?;
    check_lr(cfg.lr)?;
    let mut model = DirectDdfModel::zeros(moving.extent());
    let mut losses = Vec::with_capacity(cfg.iterations + 1);
    let m = moving.grid().clone();
    let f = fixed.grid().clone();
    for step in 0..=cfg.iterations {
        let mut tape = Tape::new();
        let mv = tape.constant(m.clone());
        let fv = tape.constant(f.clone());
        let (ddf, bound) = model.record(&mut tape);
        let loss = record_total_loss(&mut tape, mv, fv, ddf, cfg.loss_weights)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite { step });
        }
        losses.push(value);
        if step == cfg.iterations {
            break;
        }
        let mut grads = tape.backward(loss)?;
        let grad = bound.gradient(&mut grads);
        let next = sgd_step(model.params(), &grad, cfg.lr)?;
        if !next.values().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        model.set_params(next)?;
    }
    Ok(ClassicalResult {
        ddf: model.field(),
        losses,
    })
}

#[derive(Clone, Debug)]
pub struct TtoResult {
    pub net: RegNet,
    pub ddf: DisplacementField,
    /// Batch loss before each completed update.
    pub losses: Vec<f32>,
    /// Set when a non-finite loss stopped adaptation early; `net` then holds
    /// the last finite parameters.
    pub diverged: bool,
}

/// Few-shot adaptation of a trained network to a single pair.
pub fn test_time_optimize<R: Rng + ?Sized>(
    net: &RegNet,
    pair: &ImagePair,
    cfg: &TtoConfig,
    rng: &mut R,
) -> Result<TtoResult> {
    if cfg.batch == 0 {
        return Err(Error::Config("test-time batch must be at least 1".into()));
    }
    check_lr(cfg.lr)?;
    let mut params = net.params().clone();
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), &params);
    let mut losses = Vec::with_capacity(cfg.updates);
    let mut diverged = false;
    for _ in 0..cfg.updates {
        let batch = (0..cfg.batch)
            .map(|_| {
                if cfg.augment_enabled {
                    augment_pair(rng, &pair.moving, &pair.fixed, &cfg.augment)
                } else {
                    Ok((pair.moving.clone(), pair.fixed.clone()))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let (loss, grad) = batch_gradient(net, &params, &batch, cfg.loss_weights)?;
        if !is_finite_step(loss, &grad) {
            diverged = true;
            break;
        }
        let next = adam.step(&params, &grad)?;
        if !next.values().iter().all(|v| v.is_finite()) {
            diverged = true;
            break;
        }
        params = next;
        losses.push(loss);
    }
    let adapted = net.with_params(params)?;
    let ddf = adapted.predict(&pair.moving, &pair.fixed)?;
    Ok(TtoResult {
        net: adapted,
        ddf,
        losses,
        diverged,
    })
}

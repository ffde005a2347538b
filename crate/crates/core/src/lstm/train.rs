use std::ops::Range;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{backward_into, forward_into, BackwardScratch, ForwardCache, LstmParams};
use super::{LstmConfig, LstmEnsemble, LstmMember, SampleSet};
use crate::error::{Error, Result};
use crate::panel::{DailyPanel, DateRange};
use crate::simulate::{rng_from_seed, sub_seed};

/// Adam with the usual bias correction. Only the coordinates in the range
/// given to [`Adam::step`] are touched.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], active: Range<usize>) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in active {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Per-member training losses, one entry per epoch (mean squared error over
/// the epoch's batches, measured before each update).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub n_samples: usize,
    pub epoch_losses: Vec<(u64, Vec<f64>)>,
}

struct RunSpec {
    batch_size: usize,
    learning_rate: f64,
    epochs: usize,
    shuffle_seed: u64,
    active: Range<usize>,
}

fn run_member(params: &mut LstmParams, samples: &SampleSet, spec: &RunSpec, member_seed: u64) -> Result<Vec<f64>> {
    let shape = params.shape;
    let n_params = params.values.len();
    let mut adam = Adam::new(n_params, spec.learning_rate);
    let mut rng = rng_from_seed(spec.shuffle_seed);
    let mut cache = ForwardCache::new(shape, samples.seq_len);
    let mut scratch = BackwardScratch::new(shape, samples.seq_len);
    let mut grad = vec![0.0; n_params];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut losses = Vec::with_capacity(spec.epochs);
    for epoch in 0..spec.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut sse = 0.0;
        for (b, batch) in order.chunks(spec.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 2.0 / batch.len() as f64;
            for &k in batch {
                let (x, y) = samples.get(k);
                let err = forward_into(params, x, &mut cache) - y;
                sse += err * err;
                backward_into(params, &cache, scale * err, &mut grad, None, &mut scratch);
            }
            if !sse.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                let bad = grad.iter().position(|g| !g.is_finite());
                return Err(Error::NonFinite(format!(
                    "training diverged: seed={member_seed} epoch={epoch} batch={b} loss_sum={sse} first_bad_grad={bad:?}"
                )));
            }
            adam.step(&mut params.values, &grad, spec.active.clone());
        }
        let loss = sse / samples.len() as f64;
        log::debug!("lstm_epoch seed={member_seed} epoch={epoch} mse={loss}");
        losses.push(loss);
    }
    Ok(losses)
}

fn check_samples(samples: &SampleSet, batch_size: usize) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::NoData);
    }
    if samples.len() < batch_size {
        log::warn!(
            "lstm_small_dataset samples={} batch_size={batch_size} action=single_partial_batch",
            samples.len()
        );
    }
    Ok(())
}

/// Trains one network per configured seed on the pooled samples. Members
/// are independent and run in parallel; each one is deterministic.
pub fn train_on_samples(samples: &SampleSet, config: &LstmConfig) -> Result<(LstmEnsemble, TrainReport)> {
    config.validate()?;
    if samples.input_dim != config.input_dim || samples.seq_len != config.seq_len {
        return Err(Error::InvalidInput(format!(
            "samples are {}x{}, config expects {}x{}",
            samples.seq_len, samples.input_dim, config.seq_len, config.input_dim
        )));
    }
    check_samples(samples, config.batch_size)?;
    let shape = config.shape();
    let results: Vec<Result<(LstmMember, Vec<f64>)>> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut params = LstmParams::init(shape, &mut rng_from_seed(sub_seed(seed, 0)));
            let spec = RunSpec {
                batch_size: config.batch_size,
                learning_rate: config.learning_rate,
                epochs: config.epochs,
                shuffle_seed: sub_seed(seed, 1),
                active: 0..shape.n_params(),
            };
            let losses = run_member(&mut params, samples, &spec, seed)?;
            Ok((LstmMember { seed, params }, losses))
        })
        .collect();
    let mut members = Vec::with_capacity(results.len());
    let mut epoch_losses = Vec::with_capacity(results.len());
    for r in results {
        let (m, l) = r?;
        epoch_losses.push((m.seed, l));
        members.push(m);
    }
    Ok((
        LstmEnsemble {
            config: config.clone(),
            members,
        },
        TrainReport {
            n_samples: samples.len(),
            epoch_losses,
        },
    ))
}

/// Trains on a scaled panel, using samples whose target date is in `range`.
pub fn train(
    panel: &DailyPanel,
    config: &LstmConfig,
    range: Option<DateRange>,
    assets: Option<&[String]>,
) -> Result<(LstmEnsemble, TrainReport)> {
    panel.require_scaled()?;
    let selected = match assets {
        Some(ids) => panel.select_assets(ids),
        None => panel.clone(),
    };
    let samples = SampleSet::from_panel(&selected, config, range)?;
    log::info!(
        "lstm_train assets={} samples={} members={} epochs={}",
        selected.n_assets(),
        samples.len(),
        config.seeds.len(),
        config.epochs
    );
    train_on_samples(&samples, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FineTuneMode {
    AllParams,
    /// Only the output head is updated; every cell parameter stays frozen.
    #[default]
    HeadOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FineTuneConfig {
    pub mode: FineTuneMode,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            mode: FineTuneMode::HeadOnly,
            epochs: 5,
            learning_rate: 1e-3,
            batch_size: 512,
        }
    }
}

/// Continues training every member from its current parameters with a fresh
/// optimizer state.
pub fn fine_tune(
    ensemble: &LstmEnsemble,
    samples: &SampleSet,
    tune: &FineTuneConfig,
) -> Result<(LstmEnsemble, TrainReport)> {
    ensemble.validate()?;
    if tune.batch_size == 0 || !(tune.learning_rate > 0.0) {
        return Err(Error::InvalidParameter("fine-tune needs positive batch size and learning rate".into()));
    }
    if tune.epochs > 0 {
        check_samples(samples, tune.batch_size)?;
    }
    let shape = ensemble.config.shape();
    let active = match tune.mode {
        FineTuneMode::AllParams => 0..shape.n_params(),
        FineTuneMode::HeadOnly => shape.head_offset()..shape.n_params(),
    };
    let results: Vec<Result<(LstmMember, Vec<f64>)>> = ensemble
        .members
        .par_iter()
        .map(|m| {
            let mut params = m.params.clone();
            let spec = RunSpec {
                batch_size: tune.batch_size,
                learning_rate: tune.learning_rate,
                epochs: tune.epochs,
                shuffle_seed: sub_seed(m.seed, 2),
                active: active.clone(),
            };
            let losses = run_member(&mut params, samples, &spec, m.seed)?;
            Ok((LstmMember { seed: m.seed, params }, losses))
        })
        .collect();
    let mut members = Vec::with_capacity(results.len());
    let mut epoch_losses = Vec::with_capacity(results.len());
    for r in results {
        let (m, l) = r?;
        epoch_losses.push((m.seed, l));
        members.push(m);
    }
    Ok((
        LstmEnsemble {
            config: ensemble.config.clone(),
            members,
        },
        TrainReport {
            n_samples: samples.len(),
            epoch_losses,
        },
    ))
}

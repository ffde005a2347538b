//! Small LSTM regressor for next-day volatility, trained on samples pooled
//! across assets and averaged over a fixed set of seeds.
//!
//! Input rows are `σ_t²` or `(σ_t², r_t)`; the target is the next day's `σ`.

mod checkpoint;
mod network;
mod sensitivity;
mod train;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{DailyPanel, DailyRecord, DateRange};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use network::{
    backward, backward_into, forward, forward_into, BackwardScratch, ForwardCache, Gradients, LstmParams, LstmShape,
};
pub use sensitivity::{sensitivities, SensitivityProfile, SensitivityReport};
pub use train::{fine_tune, train, train_on_samples, Adam, FineTuneConfig, FineTuneMode, TrainReport};

/// Seeds shipped with the default configuration.
pub const DEFAULT_SEEDS: [u64; 10] = [
    0x5eed_0001,
    0x5eed_0002,
    0x5eed_0003,
    0x5eed_0004,
    0x5eed_0005,
    0x5eed_0006,
    0x5eed_0007,
    0x5eed_0008,
    0x5eed_0009,
    0x5eed_000a,
];

/// Output head applied to the top layer's last hidden state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    #[default]
    SiluThenLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    MseOnSigma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LstmConfig {
    /// 1 for `σ²` only, 2 for `(σ², r)`.
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub seq_len: usize,
    pub head: HeadKind,
    pub seeds: Vec<u64>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub loss: LossKind,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            input_dim: 2,
            hidden_dim: 2,
            n_layers: 2,
            seq_len: 22,
            head: HeadKind::SiluThenLinear,
            seeds: DEFAULT_SEEDS.to_vec(),
            batch_size: 512,
            learning_rate: 1e-3,
            epochs: 5,
            loss: LossKind::MseOnSigma,
        }
    }
}

impl LstmConfig {
    pub fn shape(&self) -> LstmShape {
        LstmShape {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            n_layers: self.n_layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.input_dim, 1 | 2) {
            return Err(Error::InvalidParameter(format!("input_dim {} must be 1 or 2", self.input_dim)));
        }
        self.shape().validate()?;
        if self.seq_len == 0 {
            return Err(Error::InvalidParameter("seq_len must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter("at least one seed is required".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }
}

/// Writes the input rows for records `recs` (oldest first) into `out`.
pub(crate) fn push_features(recs: &[DailyRecord], input_dim: usize, out: &mut Vec<f64>) {
    for r in recs {
        out.push(r.rv * r.rv);
        if input_dim == 2 {
            out.push(r.ret);
        }
    }
}

/// Input sequence for a forecast of the day after `recent`, using its last
/// `seq_len` records.
pub fn input_sequence(recent: &[DailyRecord], config: &LstmConfig) -> Result<Vec<f64>> {
    if recent.len() < config.seq_len {
        return Err(Error::InsufficientHistory(format!(
            "LSTM input needs {} days, got {}",
            config.seq_len,
            recent.len()
        )));
    }
    let mut out = Vec::with_capacity(config.seq_len * config.input_dim);
    push_features(&recent[recent.len() - config.seq_len..], config.input_dim, &mut out);
    Ok(out)
}

/// Pooled training samples: every `(asset, t)` whose target date lies in the
/// selected range and which has `seq_len` earlier records. Ordered by asset
/// id then date.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub input_dim: usize,
    pub seq_len: usize,
    assets: Vec<String>,
    /// Per asset, row-major feature rows for every record.
    features: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    dates: Vec<Vec<NaiveDate>>,
    /// `(asset index, target index)`.
    index: Vec<(u32, u32)>,
}

impl SampleSet {
    pub fn from_panel(panel: &DailyPanel, config: &LstmConfig, range: Option<DateRange>) -> Result<Self> {
        config.validate()?;
        let mut set = SampleSet {
            input_dim: config.input_dim,
            seq_len: config.seq_len,
            assets: Vec::new(),
            features: Vec::new(),
            targets: Vec::new(),
            dates: Vec::new(),
            index: Vec::new(),
        };
        for (id, recs) in panel.iter() {
            let a = set.assets.len() as u32;
            let mut feats = Vec::with_capacity(recs.len() * config.input_dim);
            push_features(recs, config.input_dim, &mut feats);
            for (t, r) in recs.iter().enumerate().skip(config.seq_len) {
                if range.map_or(true, |rg| rg.contains(r.date)) {
                    set.index.push((a, t as u32));
                }
            }
            set.assets.push(id.to_string());
            set.features.push(feats);
            set.targets.push(recs.iter().map(|r| r.rv).collect());
            set.dates.push(recs.iter().map(|r| r.date).collect());
        }
        Ok(set)
    }

    /// Samples from explicit `(sequence, target)` pairs, mainly for tests.
    pub fn from_pairs(input_dim: usize, seq_len: usize, pairs: &[(Vec<f64>, f64)]) -> Result<Self> {
        let mut set = SampleSet {
            input_dim,
            seq_len,
            assets: Vec::new(),
            features: Vec::new(),
            targets: Vec::new(),
            dates: Vec::new(),
            index: Vec::new(),
        };
        for (k, (seq, y)) in pairs.iter().enumerate() {
            if seq.len() != input_dim * seq_len {
                return Err(Error::InvalidInput(format!(
                    "sample {k} has {} values, expected {}",
                    seq.len(),
                    input_dim * seq_len
                )));
            }
            let mut feats = seq.clone();
            feats.resize(feats.len() + input_dim, 0.0);
            let mut targets = vec![0.0; seq_len];
            targets.push(*y);
            set.index.push((k as u32, seq_len as u32));
            set.assets.push(format!("sample{k}"));
            set.features.push(feats);
            set.targets.push(targets);
            set.dates.push(Vec::new());
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Input rows and target of sample `k`.
    pub fn get(&self, k: usize) -> (&[f64], f64) {
        let (a, t) = self.index[k];
        let (a, t) = (a as usize, t as usize);
        let d = self.input_dim;
        (&self.features[a][(t - self.seq_len) * d..t * d], self.targets[a][t])
    }

    /// Asset id and target date of sample `k` (no date for pair-built sets).
    pub fn key(&self, k: usize) -> (&str, Option<NaiveDate>) {
        let (a, t) = self.index[k];
        (&self.assets[a as usize], self.dates[a as usize].get(t as usize).copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmMember {
    pub seed: u64,
    pub params: LstmParams,
}

/// Trained networks sharing one configuration. Predictions average the
/// members' outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmEnsemble {
    pub config: LstmConfig,
    pub members: Vec<LstmMember>,
}

impl LstmEnsemble {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.members.is_empty() {
            return Err(Error::InvalidParameter("ensemble has no members".into()));
        }
        for m in &self.members {
            m.params.validate()?;
            if m.params.shape != self.config.shape() {
                return Err(Error::InvalidParameter(format!(
                    "member {} has shape {:?}, config expects {:?}",
                    m.seed,
                    m.params.shape,
                    self.config.shape()
                )));
            }
        }
        Ok(())
    }

    /// Per-member outputs for one input sequence.
    pub fn member_predictions(&self, seq: &[f64]) -> Result<Vec<f64>> {
        network::check_sequence(self.config.shape(), seq)?;
        if seq.len() != self.config.seq_len * self.config.input_dim {
            return Err(Error::InvalidInput(format!(
                "sequence has {} values, expected {}",
                seq.len(),
                self.config.seq_len * self.config.input_dim
            )));
        }
        let mut cache = ForwardCache::new(self.config.shape(), self.config.seq_len);
        Ok(self
            .members
            .iter()
            .map(|m| forward_into(&m.params, seq, &mut cache))
            .collect())
    }

    pub fn predict_sequence(&self, seq: &[f64]) -> Result<f64> {
        let outs = self.member_predictions(seq)?;
        Ok(outs.iter().sum::<f64>() / outs.len() as f64)
    }

    /// Forecast for the day after `recent` (oldest first).
    pub fn predict(&self, recent: &[DailyRecord]) -> Result<f64> {
        self.predict_sequence(&input_sequence(recent, &self.config)?)
    }

    /// Mean squared error of the ensemble over a sample set.
    pub fn mse(&self, samples: &SampleSet) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::NoData);
        }
        let mut sse = 0.0;
        for k in 0..samples.len() {
            let (x, y) = samples.get(k);
            let e = self.predict_sequence(x)? - y;
            sse += e * e;
        }
        Ok(sse / samples.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn panel() -> DailyPanel {
        let dates = crate::simulate::business_days(crate::simulate::default_start_date(), 40);
        let mut assets = BTreeMap::new();
        for (k, id) in ["B", "A"].iter().enumerate() {
            let recs = dates
                .iter()
                .enumerate()
                .map(|(i, &date)| DailyRecord {
                    date,
                    rv: 1.0 + 0.01 * i as f64 + k as f64,
                    ret: 0.1 * i as f64,
                })
                .collect();
            assets.insert(id.to_string(), recs);
        }
        DailyPanel::new(assets, BTreeMap::new()).unwrap()
    }

    #[test]
    fn defaults_follow_the_reference_setup() {
        let c = LstmConfig::default();
        assert_eq!((c.hidden_dim, c.n_layers, c.seq_len, c.batch_size, c.epochs), (2, 2, 22, 512, 5));
        assert_eq!(c.learning_rate, 1e-3);
        assert_eq!(c.seeds.len(), 10);
        assert!(c.validate().is_ok());
        assert!(LstmConfig { input_dim: 3, ..c.clone() }.validate().is_err());
        assert!(LstmConfig { seeds: vec![], ..c }.validate().is_err());
    }

    #[test]
    fn samples_are_ordered_by_asset_then_date() {
        let cfg = LstmConfig {
            seq_len: 5,
            ..LstmConfig::default()
        };
        let set = SampleSet::from_panel(&panel(), &cfg, None).unwrap();
        assert_eq!(set.len(), 2 * 35);
        assert_eq!(set.key(0).0, "A");
        assert_eq!(set.key(35).0, "B");
        let (x, y) = set.get(0);
        assert_eq!(x.len(), 10);
        // Asset "A" was inserted second, so its rv is offset by one.
        assert_eq!(x[0], 4.0);
        assert!((x[9] - 0.4).abs() < 1e-15);
        assert!((y - 2.05).abs() < 1e-15);
    }

    #[test]
    fn range_filters_on_target_date() {
        let cfg = LstmConfig {
            seq_len: 5,
            ..LstmConfig::default()
        };
        let p = panel();
        let dates: Vec<_> = p.records("A").unwrap().iter().map(|r| r.date).collect();
        let range = DateRange::new(dates[0], dates[9]).unwrap();
        let set = SampleSet::from_panel(&p, &cfg, Some(range)).unwrap();
        assert_eq!(set.len(), 2 * 5);
        assert_eq!(set.key(4).1, Some(dates[9]));
    }

    #[test]
    fn ensemble_prediction_is_member_mean() {
        let cfg = LstmConfig {
            seq_len: 4,
            seeds: vec![1, 2, 3],
            ..LstmConfig::default()
        };
        let members = cfg
            .seeds
            .iter()
            .map(|&seed| LstmMember {
                seed,
                params: LstmParams::init(cfg.shape(), &mut crate::simulate::rng_from_seed(seed)),
            })
            .collect();
        let ens = LstmEnsemble { config: cfg, members };
        let seq: Vec<f64> = (0..8).map(|i| i as f64 * 0.3).collect();
        let outs = ens.member_predictions(&seq).unwrap();
        let mean = outs.iter().sum::<f64>() / 3.0;
        assert!((ens.predict_sequence(&seq).unwrap() - mean).abs() <= 1e-15);
        assert!(ens.predict_sequence(&seq[..6]).is_err());
    }
}

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{backward_into, forward_into, BackwardScratch, ForwardCache};
use super::{LstmEnsemble, SampleSet};
use crate::error::{Error, Result};
use crate::panel::{DailyPanel, DateRange};

/// Average input gradients `α(τ) = ∂σ̂_t/∂σ²_{t-τ}` and `β(τ) = ∂σ̂_t/∂r_{t-τ}`
/// for `τ = 1..L` (index 0 holds `τ = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityProfile {
    pub alpha: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub beta: Option<Vec<f64>>,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub per_asset: BTreeMap<String, SensitivityProfile>,
    /// Cross-asset mean and population standard deviation of the profiles.
    pub mean: SensitivityProfile,
    pub std: SensitivityProfile,
}

fn profile_for(ensemble: &LstmEnsemble, samples: &SampleSet) -> SensitivityProfile {
    let cfg = &ensemble.config;
    let (big_l, d) = (cfg.seq_len, cfg.input_dim);
    let mut cache = ForwardCache::new(cfg.shape(), big_l);
    let mut scratch = BackwardScratch::new(cfg.shape(), big_l);
    let mut sink = vec![0.0; cfg.shape().n_params()];
    let mut d_in = vec![0.0; big_l * d];
    let mut acc = vec![0.0; big_l * d];
    let weight = 1.0 / ensemble.members.len() as f64;
    for k in 0..samples.len() {
        let (x, _) = samples.get(k);
        for m in &ensemble.members {
            forward_into(&m.params, x, &mut cache);
            backward_into(&m.params, &cache, weight, &mut sink, Some(&mut d_in), &mut scratch);
            acc.iter_mut().zip(&d_in).for_each(|(a, g)| *a += g);
        }
    }
    let n = samples.len() as f64;
    let lag = |col: usize| -> Vec<f64> { (1..=big_l).map(|tau| acc[(big_l - tau) * d + col] / n).collect() };
    SensitivityProfile {
        alpha: lag(0),
        beta: (d == 2).then(|| lag(1)),
        n_samples: samples.len(),
    }
}

fn moments(profiles: &[&SensitivityProfile], pick: impl Fn(&SensitivityProfile) -> Option<&Vec<f64>>) -> Option<(Vec<f64>, Vec<f64>)> {
    let rows: Vec<&Vec<f64>> = profiles.iter().map(|p| pick(p)).collect::<Option<_>>()?;
    let n = rows.len() as f64;
    let len = rows.first()?.len();
    let mean: Vec<f64> = (0..len).map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / n).collect();
    let std = (0..len)
        .map(|i| (rows.iter().map(|r| (r[i] - mean[i]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    Some((mean, std))
}

/// Profiles for every selected asset over target dates in `range`, with exact
/// input gradients averaged over members and then over dates.
pub fn sensitivities(
    ensemble: &LstmEnsemble,
    panel: &DailyPanel,
    assets: Option<&[String]>,
    range: Option<DateRange>,
) -> Result<SensitivityReport> {
    ensemble.validate()?;
    let selected = match assets {
        Some(ids) => panel.select_assets(ids),
        None => panel.clone(),
    };
    let ids: Vec<&str> = selected.asset_ids().collect();
    let profiles: Vec<Result<Option<(String, SensitivityProfile)>>> = ids
        .par_iter()
        .map(|&id| {
            let one = selected.select_assets(&[id]);
            let samples = SampleSet::from_panel(&one, &ensemble.config, range)?;
            if samples.is_empty() {
                log::warn!("sensitivity_skip asset={id} reason=no_samples");
                return Ok(None);
            }
            Ok(Some((id.to_string(), profile_for(ensemble, &samples))))
        })
        .collect();
    let mut per_asset = BTreeMap::new();
    for p in profiles {
        if let Some((id, prof)) = p? {
            per_asset.insert(id, prof);
        }
    }
    if per_asset.is_empty() {
        return Err(Error::NoData);
    }
    let all: Vec<&SensitivityProfile> = per_asset.values().collect();
    let (a_mean, a_std) = moments(&all, |p| Some(&p.alpha)).expect("non-empty");
    let beta = moments(&all, |p| p.beta.as_ref());
    let total = all.iter().map(|p| p.n_samples).sum();
    Ok(SensitivityReport {
        mean: SensitivityProfile {
            alpha: a_mean,
            beta: beta.as_ref().map(|b| b.0.clone()),
            n_samples: total,
        },
        std: SensitivityProfile {
            alpha: a_std,
            beta: beta.map(|b| b.1),
            n_samples: total,
        },
        per_asset,
    })
}

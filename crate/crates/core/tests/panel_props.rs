use std::collections::BTreeMap;

use chrono::NaiveDate;
use proptest::prelude::*;
use volform::eval::{mse, mse_excluding, quantile_sorted, Summary};
use volform::panel::{read_panel, scale_panel, write_panel, DailyPanel, DailyRecord, DateRange};
use volform::series::{ForecastEntry, ForecastSeries};
use volform::simulate::{business_days, default_start_date, sample_fgn, sub_seed, FbmSpec};

fn records(rv: &[f64], ret: &[f64]) -> Vec<DailyRecord> {
    business_days(default_start_date(), rv.len())
        .into_iter()
        .zip(rv.iter().zip(ret))
        .map(|(date, (&rv, &ret))| DailyRecord { date, rv, ret })
        .collect()
}

fn asset_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (40usize..120).prop_flat_map(|n| {
        (
            prop::collection::vec(0.05f64..5.0, n),
            prop::collection::vec(-0.1f64..0.1, n),
        )
    })
}

fn panel_of(assets: Vec<(Vec<f64>, Vec<f64>)>) -> DailyPanel {
    let map: BTreeMap<String, Vec<DailyRecord>> = assets
        .iter()
        .enumerate()
        .map(|(i, (rv, ret))| (format!("A{i}"), records(rv, ret)))
        .collect();
    DailyPanel::new(map, BTreeMap::new()).unwrap()
}

fn span(panel: &DailyPanel) -> DateRange {
    panel.date_span().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scaling_normalizes_window_moments(assets in prop::collection::vec(asset_strategy(), 1..4)) {
        let panel = panel_of(assets);
        let window = span(&panel);
        let out = scale_panel(&panel, window).unwrap();
        prop_assume!(out.excluded.is_empty());
        for (_, r) in out.panel.iter() {
            let n = r.len() as f64;
            let ms = r.iter().map(|x| x.rv * x.rv).sum::<f64>() / n;
            let mean = r.iter().map(|x| x.ret).sum::<f64>() / n;
            let var = r.iter().map(|x| (x.ret - mean).powi(2)).sum::<f64>() / n;
            prop_assert!((ms - 1.0).abs() < 1e-10);
            prop_assert!(mean.abs() < 1e-10);
            prop_assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rescaling_composes_back_to_raw(assets in prop::collection::vec(asset_strategy(), 1..3)) {
        let panel = panel_of(assets);
        let window = span(&panel);
        let once = scale_panel(&panel, window).unwrap().panel;
        let twice = scale_panel(&once, window).unwrap().panel;
        for ((_, a), (_, b)) in once.iter().zip(twice.iter()) {
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x.rv - y.rv).abs() < 1e-9 * x.rv.abs().max(1.0));
                prop_assert!((x.ret - y.ret).abs() < 1e-9);
            }
        }
        let back = twice.unscaled();
        for ((_, a), (_, b)) in panel.iter().zip(back.iter()) {
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x.rv - y.rv).abs() < 1e-9 * x.rv);
                prop_assert!((x.ret - y.ret).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn panel_csv_round_trip_is_exact(assets in prop::collection::vec(asset_strategy(), 1..4)) {
        let panel = panel_of(assets);
        let mut buf = Vec::new();
        write_panel(&panel, &mut buf).unwrap();
        let back = read_panel(buf.as_slice()).unwrap();
        prop_assert_eq!(back, panel);
    }

    #[test]
    fn truncation_keeps_only_earlier_dates(asset in asset_strategy(), cut in 0usize..120) {
        let panel = panel_of(vec![asset]);
        let dates: Vec<NaiveDate> = panel.records("A0").unwrap().iter().map(|r| r.date).collect();
        let cut_date = dates[cut.min(dates.len() - 1)];
        let t = panel.truncate_before(cut_date);
        let kept = t.records("A0").map_or(0, |r| r.len());
        prop_assert_eq!(kept, cut.min(dates.len() - 1));
        prop_assert!(t.iter().all(|(_, r)| r.iter().all(|x| x.date < cut_date)));
    }

    #[test]
    fn quantiles_are_ordered_and_bounded(mut v in prop::collection::vec(-1e3f64..1e3, 1..60), p in 0.0f64..1.0, q in 0.0f64..1.0) {
        v.sort_by(f64::total_cmp);
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        let a = quantile_sorted(&v, lo);
        let b = quantile_sorted(&v, hi);
        prop_assert!(a <= b);
        prop_assert!(v[0] <= a && b <= v[v.len() - 1]);
        let s = Summary::of(&v).unwrap();
        prop_assert!(s.min <= s.q25 && s.q25 <= s.median && s.median <= s.q75 && s.q75 <= s.max);
    }

    #[test]
    fn excluding_nothing_matches_plain_mse(pairs in prop::collection::vec((0.0f64..3.0, 0.0f64..3.0), 1..80)) {
        let dates = business_days(default_start_date(), pairs.len());
        let entries = dates
            .iter()
            .zip(&pairs)
            .map(|(&date, &(p, r))| ForecastEntry { date, predicted: p, realized: r })
            .collect();
        let s = ForecastSeries::new("x", entries).unwrap();
        prop_assert_eq!(mse(&s).unwrap(), mse_excluding(&s, &[]).unwrap());
        let far = DateRange::new(NaiveDate::from_ymd_opt(1990, 1, 1).unwrap(), NaiveDate::from_ymd_opt(1990, 2, 1).unwrap()).unwrap();
        prop_assert_eq!(mse(&s).unwrap(), mse_excluding(&s, &[far]).unwrap());
    }

    #[test]
    fn fgn_is_a_pure_function_of_the_seed(seed in any::<u64>(), hurst in 0.05f64..0.95) {
        let spec = FbmSpec { hurst, n_steps: 256, dt: 1.0, seed };
        prop_assert_eq!(sample_fgn(&spec).unwrap(), sample_fgn(&spec).unwrap());
        let other = FbmSpec { seed: sub_seed(seed, 1), ..spec };
        prop_assert_ne!(sample_fgn(&spec).unwrap(), sample_fgn(&other).unwrap());
    }
}

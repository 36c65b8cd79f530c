//! RUL evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(pred: &[f64], truth: &[f64], what: &str) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Contract(format!(
            "{what}: {} predictions vs {} targets",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Contract(format!("{what}: empty input")));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth, "rmse")?;
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

/// Penalty for one prediction: early errors are divided by 13, late (and
/// exact) ones by 10.
pub fn score_term(pred: f64, truth: f64) -> f64 {
    let d = pred - truth;
    if d < 0.0 {
        (-d / 13.0).exp_m1()
    } else {
        (d / 10.0).exp_m1()
    }
}

pub fn score(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth, "score")?;
    Ok(pred.iter().zip(truth).map(|(&p, &t)| score_term(p, t)).sum())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check(pred, truth, "mae")?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

/// Mean absolute percentage error in percent, skipping zero targets.
/// Returns the value and the number of skipped samples; 0 if nothing remains.
pub fn mape(pred: &[f64], truth: &[f64]) -> Result<(f64, usize)> {
    check(pred, truth, "mape")?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        if *t == 0.0 {
            continue;
        }
        sum += ((p - t) / t).abs();
        used += 1;
    }
    let skipped = pred.len() - used;
    if skipped > 0 {
        log::warn!("mape: skipped {skipped} samples with zero target");
    }
    Ok((if used == 0 { 0.0 } else { 100.0 * sum / used as f64 }, skipped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineResult {
    pub unit_id: u32,
    pub true_rul: f64,
    pub pred_rul: f64,
    pub abs_err: f64,
}

/// Aggregate metrics plus the per-engine rows they were computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub score: f64,
    pub mae: f64,
    pub mape: f64,
    pub n: usize,
    #[serde(skip)]
    pub engines: Vec<EngineResult>,
}

impl MetricsReport {
    pub fn compute(units: &[u32], pred: &[f64], truth: &[f64]) -> Result<Self> {
        check(pred, truth, "metrics")?;
        if units.len() != pred.len() {
            return Err(Error::Contract(format!(
                "metrics: {} unit ids for {} predictions",
                units.len(),
                pred.len()
            )));
        }
        Ok(Self {
            rmse: rmse(pred, truth)?,
            score: score(pred, truth)?,
            mae: mae(pred, truth)?,
            mape: mape(pred, truth)?.0,
            n: pred.len(),
            engines: units
                .iter()
                .zip(pred.iter().zip(truth))
                .map(|(&unit_id, (&p, &t))| EngineResult {
                    unit_id,
                    true_rul: t,
                    pred_rul: p,
                    abs_err: (p - t).abs(),
                })
                .collect(),
        })
    }

    /// Fixed-key JSON: `{rmse, score, mae, mape, n}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialise")
    }

    /// `unit_id,true_rul,pred_rul,abs_err` rows.
    pub fn predictions_csv(&self) -> String {
        let mut s = String::from("unit_id,true_rul,pred_rul,abs_err\n");
        for e in &self.engines {
            s.push_str(&format!("{},{},{},{}\n", e.unit_id, e.true_rul, e.pred_rul, e.abs_err));
        }
        s
    }
}

pub fn parse_predictions_csv(text: &str) -> Result<Vec<EngineResult>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse {
            path: "predictions.csv".into(),
            line: i + 1,
            msg: format!("malformed row {line:?}"),
        };
        if f.len() != 4 {
            return Err(bad());
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
        out.push(EngineResult {
            unit_id: f[0].trim().parse().map_err(|_| bad())?,
            true_rul: num(f[1])?,
            pred_rul: num(f[2])?,
            abs_err: num(f[3])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::SeededRng;
    use proptest::prelude::*;

    #[test]
    fn hand_values() {
        assert_eq!(rmse(&[5.0, 6.0], &[5.0, 6.0]).unwrap(), 0.0);
        assert!((rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        let e1 = std::f64::consts::E - 1.0;
        assert!((score(&[10.0], &[0.0]).unwrap() - e1).abs() < 1e-12);
        assert!((score(&[0.0], &[13.0]).unwrap() - e1).abs() < 1e-12);
        assert!(score(&[13.0], &[0.0]).unwrap() > score(&[0.0], &[13.0]).unwrap());
    }

    #[test]
    fn contract_errors() {
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::Contract(_))));
        assert!(matches!(rmse(&[], &[]), Err(Error::Contract(_))));
        assert!(matches!(score(&[1.0], &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn mape_skips_zero_truth() {
        let (m, skipped) = mape(&[1.0, 110.0], &[0.0, 100.0]).unwrap();
        assert_eq!(skipped, 1);
        assert!((m - 10.0).abs() < 1e-12);
    }

    #[test]
    fn json_has_fixed_keys() {
        let r = MetricsReport::compute(&[1, 2], &[1.0, 2.0], &[1.0, 3.0]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(keys, ["mae", "mape", "n", "rmse", "score"]);
    }

    #[test]
    fn csv_round_trip() {
        let r = MetricsReport::compute(&[4, 9], &[1.5, 2.25], &[1.0, 3.0]).unwrap();
        assert_eq!(parse_predictions_csv(&r.predictions_csv()).unwrap(), r.engines);
    }

    #[test]
    fn loop_oracles_on_random_pairs() {
        let mut rng = SeededRng::new(11);
        let n = 1000;
        let p: Vec<f64> = (0..n).map(|_| rng.uniform() * 150.0).collect();
        let t: Vec<f64> = (0..n).map(|_| 1.0 + rng.uniform() * 150.0).collect();
        let (mut se, mut sc, mut ae, mut pe) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let d = p[i] - t[i];
            se += d * d;
            sc += if d < 0.0 {
                (-d / 13.0).exp() - 1.0
            } else {
                (d / 10.0).exp() - 1.0
            };
            ae += d.abs();
            pe += (d / t[i]).abs();
        }
        let nf = n as f64;
        assert!((rmse(&p, &t).unwrap() - (se / nf).sqrt()).abs() < 1e-12);
        assert!((score(&p, &t).unwrap() - sc).abs() <= 1e-12 * sc.max(1.0));
        assert!((mae(&p, &t).unwrap() - ae / nf).abs() < 1e-12);
        assert!((mape(&p, &t).unwrap().0 - 100.0 * pe / nf).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn score_is_nonnegative_and_zero_only_at_equality(
            pairs in proptest::collection::vec((-200.0f64..200.0, -200.0f64..200.0), 1..50)
        ) {
            let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let s = score(&p, &t).unwrap();
            prop_assert!(s >= 0.0);
            prop_assert_eq!(s == 0.0, p == t);
            prop_assert_eq!(score(&t, &t).unwrap(), 0.0);
        }

        #[test]
        fn score_monotone_and_late_dominates(y in 0.0f64..150.0, a in 0.01f64..80.0, b in 0.01f64..80.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-9);
            prop_assert!(score_term(y + hi, y) > score_term(y + lo, y));
            prop_assert!(score_term(y - hi, y) > score_term(y - lo, y));
            prop_assert!(score_term(y + a, y) > score_term(y - a, y));
        }
    }
}

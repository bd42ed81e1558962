//! Evaluation metrics: log loss, normalized cross entropy, AUC, and RMSE,
//! plus a small report container for serializing results.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::OutputKind;
use crate::numerics::tape::PROB_EPS;

fn check_paired(name: &'static str, p: &[f64], y: &[f64]) -> Result<()> {
    if p.len() != y.len() {
        return Err(Error::Dimension {
            op: name,
            lhs: format!("{} predictions", p.len()),
            rhs: format!("{} labels", y.len()),
        });
    }
    if p.is_empty() {
        return Err(Error::usage(format!("{name} needs at least one instance")));
    }
    Ok(())
}

fn check_binary_labels(name: &'static str, y: &[f64]) -> Result<()> {
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::usage(format!("{name} labels must be 0 or 1")));
    }
    Ok(())
}

/// Mean binary cross entropy in nats, with predictions clamped away from 0
/// and 1 by the same epsilon the training loss uses.
pub fn log_loss(p: &[f64], y: &[f64]) -> Result<f64> {
    check_paired("log_loss", p, y)?;
    check_binary_labels("log_loss", y)?;
    let mut acc = 0.0;
    for (&pi, &yi) in p.iter().zip(y) {
        let pc = pi.clamp(PROB_EPS, 1.0 - PROB_EPS);
        acc -= yi * pc.ln() + (1.0 - yi) * (1.0 - pc).ln();
    }
    Ok(acc / p.len() as f64)
}

/// Log loss normalized by the log loss of always predicting the base rate.
/// Lower is better; the base-rate predictor itself scores exactly 1.
pub fn normalized_cross_entropy(p: &[f64], y: &[f64]) -> Result<f64> {
    check_paired("nce", p, y)?;
    check_binary_labels("nce", y)?;
    let base = y.iter().sum::<f64>() / y.len() as f64;
    if base == 0.0 || base == 1.0 {
        return Err(Error::usage(
            "nce is undefined when only one class is present",
        ));
    }
    let denom = log_loss(&vec![base; y.len()], y)?;
    Ok(log_loss(p, y)? / denom)
}

/// Area under the ROC curve by the rank statistic, counting tied scores as
/// half concordant. The sums involved are exact in f64 (integer multiples
/// of one half), so this matches the quadratic oracle bit for bit.
pub fn auc(p: &[f64], y: &[f64]) -> Result<f64> {
    let (pos, neg) = auc_checks(p, y)?;
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_unstable_by(|&a, &b| p[a].partial_cmp(&p[b]).expect("finite scores"));

    let mut concordant = 0.0;
    let mut negs_below = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut group_pos = 0.0;
        let mut group_neg = 0.0;
        while j < order.len() && p[order[j]] == p[order[i]] {
            if y[order[j]] == 1.0 {
                group_pos += 1.0;
            } else {
                group_neg += 1.0;
            }
            j += 1;
        }
        concordant += group_pos * negs_below + 0.5 * group_pos * group_neg;
        negs_below += group_neg;
        i = j;
    }
    Ok(concordant / (pos * neg))
}

/// Literal pairwise AUC definition, O(n^2). Reference implementation used
/// to verify [`auc`]; the two agree exactly.
pub fn auc_pairwise(p: &[f64], y: &[f64]) -> Result<f64> {
    let (pos, neg) = auc_checks(p, y)?;
    let mut concordant = 0.0;
    for i in 0..p.len() {
        if y[i] != 1.0 {
            continue;
        }
        for j in 0..p.len() {
            if y[j] == 1.0 {
                continue;
            }
            if p[i] > p[j] {
                concordant += 1.0;
            } else if p[i] == p[j] {
                concordant += 0.5;
            }
        }
    }
    Ok(concordant / (pos * neg))
}

fn auc_checks(p: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    check_paired("auc", p, y)?;
    check_binary_labels("auc", y)?;
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::usage("auc scores must be finite"));
    }
    let pos = y.iter().filter(|&&v| v == 1.0).count();
    let neg = y.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::usage(
            "auc is undefined when only one class is present",
        ));
    }
    Ok((pos as f64, neg as f64))
}

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_paired("rmse", a, b)?;
    let acc: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((acc / a.len() as f64).sqrt())
}

/// Maps one model output onto the 1-to-5 rating scale. Sigmoid-mode outputs
/// live on `[0, 1]` and are stretched; linear outputs pass through.
pub fn rating_scale(output: f64, mode: OutputKind) -> f64 {
    match mode {
        OutputKind::Sigmoid => 1.0 + 4.0 * output,
        OutputKind::Linear => output,
    }
}

/// RMSE against raw ratings, with outputs mapped via [`rating_scale`].
pub fn rmse_ratings(outputs: &[f64], ratings: &[f64], mode: OutputKind) -> Result<f64> {
    let rescaled: Vec<f64> = outputs.iter().map(|&p| rating_scale(p, mode)).collect();
    rmse(&rescaled, ratings)
}

/// Metric values plus run metadata, serializable as a `key=value` block or
/// as a CSV row for cross-run tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub config_hash: String,
    pub wall_clock_secs: f64,
    pub values: BTreeMap<String, f64>,
}

impl MetricsReport {
    pub fn new(dataset: impl Into<String>, config_hash: impl Into<String>) -> Self {
        MetricsReport {
            dataset: dataset.into(),
            config_hash: config_hash.into(),
            wall_clock_secs: 0.0,
            values: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, key: impl Into<String>, value: f64) {
        self.values.insert(key.into(), value);
    }

    /// Line-oriented `key=value` rendering; keys come out sorted.
    pub fn kv_block(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("dataset={}\n", self.dataset));
        out.push_str(&format!("config_hash={}\n", self.config_hash));
        out.push_str(&format!("wall_clock_secs={:.3}\n", self.wall_clock_secs));
        for (k, v) in &self.values {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    pub fn csv_header(keys: &[&str]) -> String {
        let mut cols = vec!["dataset", "config_hash", "wall_clock_secs"];
        cols.extend_from_slice(keys);
        cols.join(",")
    }

    pub fn csv_row(&self, keys: &[&str]) -> String {
        let mut cols = vec![
            self.dataset.clone(),
            self.config_hash.clone(),
            format!("{:.3}", self.wall_clock_secs),
        ];
        for k in keys {
            match self.values.get(*k) {
                Some(v) => cols.push(format!("{v}")),
                None => cols.push(String::new()),
            }
        }
        cols.join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::Rng;
    use approx::assert_relative_eq;

    #[test]
    fn log_loss_known_values() {
        // perfect confident predictions approach zero loss
        let ll = log_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(ll < 1e-6);
        // -ln(0.5)
        let ll = log_loss(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert_relative_eq!(ll, 0.5f64.ln().abs(), epsilon = 1e-12);
        // clamped: confident and wrong is expensive but finite
        let ll = log_loss(&[0.0], &[1.0]).unwrap();
        assert!(ll.is_finite());
        assert_relative_eq!(ll, -(PROB_EPS.ln()), epsilon = 1e-9);
    }

    #[test]
    fn log_loss_is_minimized_at_the_base_rate() {
        // grid sweep around the mean of y
        let y = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let base = 0.3;
        let at_base = log_loss(&vec![base; y.len()], &y).unwrap();
        for k in 1..100 {
            let p = k as f64 / 100.0;
            let ll = log_loss(&vec![p; y.len()], &y).unwrap();
            assert!(ll + 1e-12 >= at_base, "p={p} beat the base rate");
        }
    }

    #[test]
    fn nce_of_base_rate_is_exactly_one() {
        let y = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let base = y.iter().sum::<f64>() / y.len() as f64;
        let nce = normalized_cross_entropy(&vec![base; y.len()], &y).unwrap();
        assert!((nce - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nce_rejects_single_class() {
        assert!(normalized_cross_entropy(&[0.5, 0.5], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn auc_hand_cases() {
        // perfectly separated
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 1.0);
        // perfectly inverted
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 0.0);
        // all scores equal: every pair is a tie
        assert_eq!(auc(&[0.5, 0.5, 0.5, 0.5], &[1.0, 0.0, 1.0, 0.0]).unwrap(), 0.5);
        // one concordant, one tied pair: (1*1 + 0.5*1) / 2
        assert_eq!(auc(&[0.3, 0.3, 0.7], &[0.0, 1.0, 1.0]).unwrap(), 0.75);
    }

    #[test]
    fn auc_matches_pairwise_oracle_exactly() {
        let mut rng = Rng::new(99);
        for _ in 0..500 {
            let n = 2 + rng.below(50) as usize;
            // coarse grid of scores forces plenty of ties
            let p: Vec<f64> = (0..n).map(|_| rng.below(8) as f64 / 8.0).collect();
            let mut y: Vec<f64> = (0..n).map(|_| rng.below(2) as f64).collect();
            // ensure both classes
            y[0] = 1.0;
            if y.iter().all(|&v| v == 1.0) {
                y[1 % n] = 0.0;
            }
            if n == 1 {
                continue;
            }
            let fast = auc(&p, &y).unwrap();
            let slow = auc_pairwise(&p, &y).unwrap();
            assert_eq!(fast.to_bits(), slow.to_bits(), "p={p:?} y={y:?}");
        }
    }

    #[test]
    fn auc_is_invariant_under_monotone_transforms() {
        let mut rng = Rng::new(7);
        for _ in 0..100 {
            let n = 5 + rng.below(40) as usize;
            let p: Vec<f64> = (0..n).map(|_| rng.below(16) as f64 / 16.0).collect();
            let mut y: Vec<f64> = (0..n).map(|_| rng.below(2) as f64).collect();
            y[0] = 1.0;
            y[1] = 0.0;
            let base = auc(&p, &y).unwrap();
            // affine with positive scale preserves order and ties
            let scale = 0.5 + rng.next_f64() * 3.0;
            let shift = rng.gaussian(0.0, 2.0);
            let affine: Vec<f64> = p.iter().map(|v| scale * v + shift).collect();
            assert_eq!(auc(&affine, &y).unwrap().to_bits(), base.to_bits());
            // exp is strictly increasing
            let exped: Vec<f64> = p.iter().map(|v| v.exp()).collect();
            assert_eq!(auc(&exped, &y).unwrap().to_bits(), base.to_bits());
        }
    }

    #[test]
    fn auc_rejects_degenerate_inputs() {
        assert!(auc(&[0.5, 0.6], &[1.0, 1.0]).is_err());
        assert!(auc(&[f64::NAN, 0.6], &[1.0, 0.0]).is_err());
        assert!(auc(&[0.5], &[1.0, 0.0]).is_err());
        assert!(auc(&[0.5, 0.5], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rmse_known_value() {
        // errors 1 and 7 -> sqrt((1 + 49) / 2) = 5
        assert_relative_eq!(rmse(&[2.0, 10.0], &[1.0, 3.0]).unwrap(), 5.0);
    }

    #[test]
    fn rating_rmse_rescales_sigmoid_outputs() {
        // p = 0.5 -> 3.0 on the rating scale
        let r = rmse_ratings(&[0.5, 1.0], &[3.0, 5.0], OutputKind::Sigmoid).unwrap();
        assert_relative_eq!(r, 0.0);
        let r = rmse_ratings(&[3.0, 4.0], &[3.0, 5.0], OutputKind::Linear).unwrap();
        assert_relative_eq!(r, (0.5f64).sqrt());
    }

    #[test]
    fn report_serializes_sorted_kv_lines() {
        let mut rep = MetricsReport::new("test.csv", "abc123");
        rep.insert("click_auc", 0.75);
        rep.insert("auc", 0.5);
        let block = rep.kv_block();
        let lines: Vec<&str> = block.lines().collect();
        assert_eq!(lines[0], "dataset=test.csv");
        assert_eq!(lines[1], "config_hash=abc123");
        assert_eq!(lines[3], "auc=0.5");
        assert_eq!(lines[4], "click_auc=0.75");
        assert_eq!(rep.csv_row(&["auc", "missing"]), "test.csv,abc123,0.000,0.5,");
    }
}

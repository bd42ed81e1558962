//! Per-user and per-item rating statistics, the optional side features for
//! recommender-style datasets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// How the "percent standard deviation" feature is formed from a group's
/// raw rating mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BiasStdRatio {
    /// Mean over standard deviation; zero when the deviation is zero.
    #[default]
    MuOverSigma,
    /// Standard deviation over mean; zero when the mean is zero.
    SigmaOverMu,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupStat {
    pub avg: f64,
    pub pstd: f64,
}

/// Average and percent-std per user and per item, derived from training
/// ratings only. Groups absent from training fall back to the global pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasStats {
    pub users: BTreeMap<String, GroupStat>,
    pub items: BTreeMap<String, GroupStat>,
    pub global: GroupStat,
}

impl BiasStats {
    pub fn user(&self, id: &str) -> GroupStat {
        self.users.get(id).copied().unwrap_or(self.global)
    }

    pub fn item(&self, id: &str) -> GroupStat {
        self.items.get(id).copied().unwrap_or(self.global)
    }
}

/// Compute bias stats from `(user, item, rating)` triples.
///
/// The ratio feature always uses raw ratings. When `rescale_avg` is set the
/// average is mapped from the `[1, 5]` rating scale onto `[0, 1]`, matching
/// a model with a sigmoid output.
pub fn derive_bias_stats(
    users: &[&str],
    items: &[&str],
    ratings: &[f64],
    ratio: BiasStdRatio,
    rescale_avg: bool,
) -> BiasStats {
    assert_eq!(users.len(), ratings.len());
    assert_eq!(items.len(), ratings.len());

    let group = |keys: &[&str]| -> BTreeMap<String, GroupStat> {
        let mut acc: BTreeMap<&str, (u64, f64, f64)> = BTreeMap::new();
        for (k, &r) in keys.iter().zip(ratings) {
            let e = acc.entry(k).or_insert((0, 0.0, 0.0));
            e.0 += 1;
            e.1 += r;
            e.2 += r * r;
        }
        acc.into_iter()
            .map(|(k, (n, sum, sq))| (k.to_string(), stat_of(n, sum, sq, ratio, rescale_avg)))
            .collect()
    };

    let n = ratings.len() as u64;
    let sum: f64 = ratings.iter().sum();
    let sq: f64 = ratings.iter().map(|r| r * r).sum();
    BiasStats {
        users: group(users),
        items: group(items),
        global: stat_of(n, sum, sq, ratio, rescale_avg),
    }
}

fn stat_of(n: u64, sum: f64, sq: f64, ratio: BiasStdRatio, rescale_avg: bool) -> GroupStat {
    let mu = sum / n as f64;
    let sigma = (sq / n as f64 - mu * mu).max(0.0).sqrt();
    let pstd = match ratio {
        BiasStdRatio::MuOverSigma => {
            if sigma == 0.0 {
                0.0
            } else {
                mu / sigma
            }
        }
        BiasStdRatio::SigmaOverMu => {
            if mu == 0.0 {
                0.0
            } else {
                sigma / mu
            }
        }
    };
    GroupStat {
        avg: if rescale_avg { (mu - 1.0) / 4.0 } else { mu },
        pstd,
    }
}

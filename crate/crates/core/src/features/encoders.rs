//! Per-column encoders: ordinal ids, target statistics, and standardized
//! numerics with a piecewise log squash for outliers.

use std::collections::BTreeMap;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scale divisor applied on top of the standard deviation, so only values
/// several sigma out leave the linear region of [`piecewise_log`].
pub const DEFAULT_SIGMA_SCALE: f64 = 3.0;

/// Ordinal encoder for embedded categoricals. Ids are assigned by
/// descending training frequency (ties broken by first appearance), so id 0
/// is always the most frequent category and doubles as the fallback for
/// nulls and unseen values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalEncoder {
    ids: BTreeMap<String, u32>,
    fallback_id: u32,
}

impl OrdinalEncoder {
    pub fn fit<'a>(values: impl IntoIterator<Item = Option<&'a str>>) -> Result<Self> {
        let ordered = frequency_order(values)?;
        let ids = ordered
            .into_iter()
            .enumerate()
            .map(|(i, v)| (v.to_string(), i as u32))
            .collect();
        Ok(OrdinalEncoder {
            ids,
            fallback_id: 0,
        })
    }

    pub fn encode(&self, value: Option<&str>) -> u32 {
        value
            .and_then(|v| self.ids.get(v).copied())
            .unwrap_or(self.fallback_id)
    }

    pub fn cardinality(&self) -> usize {
        self.ids.len()
    }
}

/// Target encoder for low-cardinality categoricals: each category maps to
/// its observed click and install rates. Unseen and null values take the
/// most frequent category's statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEncoder {
    means: BTreeMap<String, (f64, f64)>,
    fallback: (f64, f64),
}

impl TargetEncoder {
    /// `y1` and `y2` are the click and install labels row-aligned with
    /// `values`. Single-label datasets pass the same slice twice.
    pub fn fit<'a>(
        values: impl IntoIterator<Item = Option<&'a str>>,
        y1: &[f64],
        y2: &[f64],
    ) -> Result<Self> {
        struct Acc {
            count: u64,
            first: usize,
            sum1: f64,
            sum2: f64,
        }
        let mut acc: HashMap<&str, Acc> = HashMap::new();
        let mut n = 0usize;
        for (i, v) in values.into_iter().enumerate() {
            n = i + 1;
            if i >= y1.len() || i >= y2.len() {
                break;
            }
            if let Some(v) = v {
                let e = acc.entry(v).or_insert(Acc {
                    count: 0,
                    first: i,
                    sum1: 0.0,
                    sum2: 0.0,
                });
                e.count += 1;
                e.sum1 += y1[i];
                e.sum2 += y2[i];
            }
        }
        if n != y1.len() || n != y2.len() {
            return Err(Error::Dimension {
                op: "fit_target",
                lhs: format!("{n} values"),
                rhs: format!("{} / {} labels", y1.len(), y2.len()),
            });
        }
        if acc.is_empty() {
            return Err(Error::schema("target encoder fit on an all-null column"));
        }
        let modal = acc
            .iter()
            .max_by(|a, b| {
                a.1.count
                    .cmp(&b.1.count)
                    .then(b.1.first.cmp(&a.1.first))
            })
            .map(|(k, _)| k.to_string())
            .expect("non-empty");
        let means: BTreeMap<String, (f64, f64)> = acc
            .into_iter()
            .map(|(k, a)| {
                let c = a.count as f64;
                (k.to_string(), (a.sum1 / c, a.sum2 / c))
            })
            .collect();
        let fallback = means[&modal];
        Ok(TargetEncoder { means, fallback })
    }

    pub fn encode(&self, value: Option<&str>) -> (f64, f64) {
        value
            .and_then(|v| self.means.get(v).copied())
            .unwrap_or(self.fallback)
    }
}

/// Standardizer for numeric columns: impute nulls with the training mean,
/// divide the centered value by `sigma_scale * sigma`, then squash through
/// [`piecewise_log`]. A zero-variance column encodes to all zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericStandardizer {
    pub mu: f64,
    pub sigma: f64,
    pub sigma_scale: f64,
    pub zero_variance: bool,
}

impl NumericStandardizer {
    pub fn fit(values: impl IntoIterator<Item = Option<f64>>, sigma_scale: f64) -> Result<Self> {
        let mut n = 0u64;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for v in values.into_iter().flatten() {
            n += 1;
            sum += v;
            sq += v * v;
        }
        if n == 0 {
            return Err(Error::schema("standardizer fit on an all-null column"));
        }
        let mu = sum / n as f64;
        let var = (sq / n as f64 - mu * mu).max(0.0);
        let sigma = var.sqrt();
        Ok(NumericStandardizer {
            mu,
            sigma,
            sigma_scale,
            zero_variance: sigma == 0.0,
        })
    }

    pub fn transform(&self, value: Option<f64>) -> f64 {
        if self.zero_variance {
            return 0.0;
        }
        let x = value.unwrap_or(self.mu);
        piecewise_log((x - self.mu) / (self.sigma_scale * self.sigma))
    }
}

/// Identity inside (-1, 1), logarithmic outside:
/// `t >= 1` maps to `log2(t + 1)` and `t <= -1` to `-log2(1 - t)`.
/// Both branches meet the identity exactly at the boundary.
pub fn piecewise_log(t: f64) -> f64 {
    if t >= 1.0 {
        (t + 1.0).log2()
    } else if t <= -1.0 {
        -(1.0 - t).log2()
    } else {
        t
    }
}

fn frequency_order<'a>(values: impl IntoIterator<Item = Option<&'a str>>) -> Result<Vec<&'a str>> {
    let mut counts: HashMap<&str, (u64, usize)> = HashMap::new();
    for (i, v) in values.into_iter().enumerate() {
        if let Some(v) = v {
            let e = counts.entry(v).or_insert((0, i));
            e.0 += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::schema("ordinal encoder fit on an all-null column"));
    }
    let mut ordered: Vec<(&str, (u64, usize))> = counts.into_iter().collect();
    ordered.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
    Ok(ordered.into_iter().map(|(v, _)| v).collect())
}

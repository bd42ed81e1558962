//! Column roles, schema configuration, and role inference.
//!
//! A schema config says what each column is, or leaves it to inference.
//! Inference looks at distinct counts and parseability: a column where every
//! observed value parses as a number becomes numeric, anything else is
//! categorical and is split into high or low cardinality at the threshold.

use std::collections::BTreeMap;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::dataset::RawDataset;

pub const DEFAULT_CARDINALITY_THRESHOLD: usize = 20;

/// Resolved role of a column after inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    HighCardCat,
    LowCardCat,
    Numeric,
    Binary,
    /// Precomputed side feature (e.g. per-user rating stats); passed through
    /// without standardization.
    Stat,
    LabelClick,
    LabelInstall,
    LabelRating,
    Ignore,
}

/// Role as written in a schema config. `Auto` and `Categorical` resolve
/// against the observed data; the rest are taken as is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DeclaredRole {
    #[default]
    Auto,
    Categorical,
    HighCardCat,
    LowCardCat,
    Numeric,
    Binary,
    Stat,
    LabelClick,
    LabelInstall,
    LabelRating,
    Ignore,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemaConfig {
    /// Categorical columns with more distinct training values than this are
    /// embedded; at or below it they are target encoded.
    pub threshold: usize,
    pub roles: BTreeMap<String, DeclaredRole>,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        SchemaConfig {
            threshold: DEFAULT_CARDINALITY_THRESHOLD,
            roles: BTreeMap::new(),
        }
    }
}

impl SchemaConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::schema(format!("bad schema config: {e}")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema config serializes")
    }
}

/// Per-column summary used by inference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnStats {
    pub name: String,
    pub non_null: usize,
    pub distinct: usize,
    /// True when every observed value parses as f64.
    pub all_numeric: bool,
}

pub fn compute_column_stats(data: &RawDataset) -> Vec<ColumnStats> {
    (0..data.columns.len())
        .map(|c| {
            let mut seen: HashSet<&str> = HashSet::new();
            let mut non_null = 0usize;
            let mut all_numeric = true;
            for row in &data.rows {
                if let Some(v) = row[c].as_deref() {
                    non_null += 1;
                    seen.insert(v);
                    if all_numeric && v.parse::<f64>().is_err() {
                        all_numeric = false;
                    }
                }
            }
            ColumnStats {
                name: data.columns[c].clone(),
                non_null,
                distinct: seen.len(),
                all_numeric,
            }
        })
        .collect()
}

/// Resolve every column to a concrete [`Role`].
///
/// Declared roles win; `auto` and `categorical` consult the stats. A column
/// with no observed values cannot be encoded and is rejected unless it is
/// ignored.
pub fn infer_schema(stats: &[ColumnStats], config: &SchemaConfig) -> Result<Vec<(String, Role)>> {
    let known: HashSet<&str> = stats.iter().map(|s| s.name.as_str()).collect();
    for name in config.roles.keys() {
        if !known.contains(name.as_str()) {
            return Err(Error::schema(format!(
                "role declared for unknown column {name:?}"
            )));
        }
    }

    let split = |s: &ColumnStats| {
        if s.distinct > config.threshold {
            Role::HighCardCat
        } else {
            Role::LowCardCat
        }
    };

    let mut out = Vec::with_capacity(stats.len());
    for s in stats {
        let declared = config.roles.get(&s.name).copied().unwrap_or_default();
        let role = match declared {
            DeclaredRole::Ignore => Role::Ignore,
            DeclaredRole::HighCardCat => Role::HighCardCat,
            DeclaredRole::LowCardCat => Role::LowCardCat,
            DeclaredRole::Numeric => Role::Numeric,
            DeclaredRole::Binary => Role::Binary,
            DeclaredRole::Stat => Role::Stat,
            DeclaredRole::LabelClick => Role::LabelClick,
            DeclaredRole::LabelInstall => Role::LabelInstall,
            DeclaredRole::LabelRating => Role::LabelRating,
            DeclaredRole::Categorical => split(s),
            DeclaredRole::Auto => {
                if s.all_numeric && s.non_null > 0 {
                    Role::Numeric
                } else {
                    split(s)
                }
            }
        };
        if role != Role::Ignore && s.non_null == 0 {
            return Err(Error::schema(format!(
                "column {:?} has no observed values",
                s.name
            )));
        }
        out.push((s.name.clone(), role));
    }
    Ok(out)
}

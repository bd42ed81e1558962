//! Fitted feature schema: per-column encoders plus the fit and encode
//! entry points that turn a [`RawDataset`] into model-ready matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::dataset::{EncodedDataset, RawDataset};
use crate::features::encoders::{
    NumericStandardizer, OrdinalEncoder, TargetEncoder, DEFAULT_SIGMA_SCALE,
};
use crate::features::schema::{compute_column_stats, infer_schema, Role, SchemaConfig};

/// Which label columns the training data carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelLayout {
    /// Click and install labels; the dual-task setup.
    Dual,
    /// One binary label.
    Single,
    /// A numeric rating label.
    Rating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnEncoder {
    None,
    Ordinal(OrdinalEncoder),
    Target(TargetEncoder),
    Standardizer(NumericStandardizer),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub role: Role,
    pub encoder: ColumnEncoder,
}

/// A fitted pipeline. Fitting is deterministic, so refitting on the same
/// data reproduces the schema exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub threshold: usize,
    pub columns: Vec<ColumnSpec>,
}

/// Result of fitting: the schema plus any non-fatal warnings (currently
/// zero-variance numeric columns).
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub schema: FeatureSchema,
    pub warnings: Vec<String>,
}

impl FeatureSchema {
    pub fn fit(config: &SchemaConfig, data: &RawDataset) -> Result<FitOutcome> {
        let stats = compute_column_stats(data);
        let roles = infer_schema(&stats, config)?;
        let layout = check_label_roles(&roles)?;

        // Labels drive the target encoders; single-label data uses the one
        // label for both statistics.
        let labels = parse_labels(data, &roles)?;
        let (y1, y2): (&[f64], &[f64]) = match layout {
            LabelLayout::Dual => (
                labels.clicks.as_deref().expect("dual has clicks"),
                labels.installs.as_deref().expect("dual has installs"),
            ),
            LabelLayout::Single => {
                let y = labels
                    .clicks
                    .as_deref()
                    .or(labels.installs.as_deref())
                    .expect("single-label data");
                (y, y)
            }
            LabelLayout::Rating => {
                let y = labels.rescaled_ratings.as_deref().expect("rating data");
                (y, y)
            }
        };

        let mut warnings = Vec::new();
        let mut columns = Vec::with_capacity(roles.len());
        for (c, (name, role)) in roles.iter().enumerate() {
            let encoder = match role {
                Role::HighCardCat => ColumnEncoder::Ordinal(OrdinalEncoder::fit(data.column(c))?),
                Role::LowCardCat => {
                    ColumnEncoder::Target(TargetEncoder::fit(data.column(c), y1, y2)?)
                }
                Role::Numeric => {
                    let parsed = parse_numeric_column(data, c, name)?;
                    let enc = NumericStandardizer::fit(parsed, DEFAULT_SIGMA_SCALE)?;
                    if enc.zero_variance {
                        warnings.push(format!(
                            "column {name:?} has zero variance and will encode to all zeros"
                        ));
                    }
                    ColumnEncoder::Standardizer(enc)
                }
                _ => ColumnEncoder::None,
            };
            columns.push(ColumnSpec {
                name: name.clone(),
                role: *role,
                encoder,
            });
        }

        Ok(FitOutcome {
            schema: FeatureSchema {
                threshold: config.threshold,
                columns,
            },
            warnings,
        })
    }

    /// Embedding table sizes, one per high-cardinality column in schema
    /// order.
    pub fn cardinalities(&self) -> Vec<usize> {
        self.columns
            .iter()
            .filter_map(|c| match &c.encoder {
                ColumnEncoder::Ordinal(e) => Some(e.cardinality()),
                _ => None,
            })
            .collect()
    }

    /// Width of the numeric block: one slot per numeric, binary, and stat
    /// column, two per target-encoded column.
    pub fn numeric_width(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match c.role {
                Role::Numeric | Role::Binary | Role::Stat => 1,
                Role::LowCardCat => 2,
                _ => 0,
            })
            .sum()
    }

    pub fn label_layout(&self) -> Option<LabelLayout> {
        let roles: Vec<Role> = self.columns.iter().map(|c| c.role).collect();
        label_layout_of(&roles)
    }

    /// Encode a dataset against this fitted schema. Label columns may be
    /// absent (prediction data); every other schema column must be present
    /// and no extra columns are allowed.
    pub fn encode(&self, data: &RawDataset) -> Result<EncodedDataset> {
        let mut col_idx = Vec::with_capacity(self.columns.len());
        for spec in &self.columns {
            match data.column_index(&spec.name) {
                Some(i) => col_idx.push(Some(i)),
                None if is_label(spec.role) => col_idx.push(None),
                None => {
                    return Err(Error::schema(format!(
                        "column {:?} required by the schema is missing",
                        spec.name
                    )))
                }
            }
        }
        for name in &data.columns {
            if !self.columns.iter().any(|c| &c.name == name) {
                return Err(Error::schema(format!(
                    "column {name:?} is not part of the schema"
                )));
            }
        }

        let n_cat = self.cardinalities().len();
        let n_num = self.numeric_width();
        let n_rows = data.n_rows();
        let mut out = EncodedDataset {
            n_rows,
            x_c: Vec::with_capacity(n_rows * n_cat),
            n_cat,
            x_n: Vec::with_capacity(n_rows * n_num),
            n_num,
            cardinalities: self.cardinalities(),
            clicks: None,
            installs: None,
            ratings: None,
        };

        let mut clicks = Vec::new();
        let mut installs = Vec::new();
        let mut ratings = Vec::new();
        for r in 0..n_rows {
            for (spec, idx) in self.columns.iter().zip(&col_idx) {
                let value = idx.and_then(|i| data.rows[r][i].as_deref());
                let line = r + 2;
                match (&spec.encoder, spec.role) {
                    (ColumnEncoder::Ordinal(e), _) => out.x_c.push(e.encode(value)),
                    (ColumnEncoder::Target(e), _) => {
                        let (tc, ti) = e.encode(value);
                        out.x_n.push(tc);
                        out.x_n.push(ti);
                    }
                    (ColumnEncoder::Standardizer(e), _) => {
                        let v = parse_optional_f64(value, &spec.name, line)?;
                        out.x_n.push(e.transform(v));
                    }
                    (ColumnEncoder::None, Role::Binary | Role::Stat) => {
                        let v = parse_optional_f64(value, &spec.name, line)?;
                        out.x_n.push(v.unwrap_or(0.0));
                    }
                    (ColumnEncoder::None, Role::LabelClick) if idx.is_some() => {
                        clicks.push(parse_binary_label(value, &spec.name, line)?);
                    }
                    (ColumnEncoder::None, Role::LabelInstall) if idx.is_some() => {
                        installs.push(parse_binary_label(value, &spec.name, line)?);
                    }
                    (ColumnEncoder::None, Role::LabelRating) if idx.is_some() => {
                        ratings.push(parse_rating_label(value, &spec.name, line)?);
                    }
                    (ColumnEncoder::None, _) => {}
                }
            }
        }
        out.clicks = (!clicks.is_empty()).then_some(clicks);
        out.installs = (!installs.is_empty()).then_some(installs);
        out.ratings = (!ratings.is_empty()).then_some(ratings);
        Ok(out)
    }
}

fn is_label(role: Role) -> bool {
    matches!(
        role,
        Role::LabelClick | Role::LabelInstall | Role::LabelRating
    )
}

fn label_layout_of(roles: &[Role]) -> Option<LabelLayout> {
    let has = |r: Role| roles.iter().any(|&x| x == r);
    match (
        has(Role::LabelClick),
        has(Role::LabelInstall),
        has(Role::LabelRating),
    ) {
        (true, true, false) => Some(LabelLayout::Dual),
        (true, false, false) | (false, true, false) => Some(LabelLayout::Single),
        (false, false, true) => Some(LabelLayout::Rating),
        _ => None,
    }
}

fn check_label_roles(roles: &[(String, Role)]) -> Result<LabelLayout> {
    let only: Vec<Role> = roles.iter().map(|(_, r)| *r).collect();
    for role in [Role::LabelClick, Role::LabelInstall, Role::LabelRating] {
        if only.iter().filter(|&&r| r == role).count() > 1 {
            return Err(Error::schema(format!(
                "more than one column declared as {role:?}"
            )));
        }
    }
    label_layout_of(&only).ok_or_else(|| {
        Error::schema(
            "training data needs labels: click and install, a single binary label, \
             or a rating",
        )
    })
}

struct ParsedLabels {
    clicks: Option<Vec<f64>>,
    installs: Option<Vec<f64>>,
    rescaled_ratings: Option<Vec<f64>>,
}

fn parse_labels(data: &RawDataset, roles: &[(String, Role)]) -> Result<ParsedLabels> {
    let mut out = ParsedLabels {
        clicks: None,
        installs: None,
        rescaled_ratings: None,
    };
    for (c, (name, role)) in roles.iter().enumerate() {
        match role {
            Role::LabelClick | Role::LabelInstall => {
                let mut ys = Vec::with_capacity(data.n_rows());
                for (r, v) in data.column(c).enumerate() {
                    ys.push(parse_binary_label(v, name, r + 2)?);
                }
                if *role == Role::LabelClick {
                    out.clicks = Some(ys);
                } else {
                    out.installs = Some(ys);
                }
            }
            Role::LabelRating => {
                let mut ys = Vec::with_capacity(data.n_rows());
                for (r, v) in data.column(c).enumerate() {
                    // Ratings are mapped from [1, 5] onto [0, 1] wherever a
                    // probability-like value is needed.
                    ys.push((parse_rating_label(v, name, r + 2)? - 1.0) / 4.0);
                }
                out.rescaled_ratings = Some(ys);
            }
            _ => {}
        }
    }
    Ok(out)
}

fn parse_numeric_column(data: &RawDataset, c: usize, name: &str) -> Result<Vec<Option<f64>>> {
    data.column(c)
        .enumerate()
        .map(|(r, v)| parse_optional_f64(v, name, r + 2))
        .collect()
}

fn parse_optional_f64(value: Option<&str>, col: &str, line: usize) -> Result<Option<f64>> {
    match value {
        None => Ok(None),
        Some(s) => s.parse::<f64>().map(Some).map_err(|_| Error::Data {
            row: line,
            msg: format!("column {col:?}: {s:?} is not a number"),
        }),
    }
}

fn parse_binary_label(value: Option<&str>, col: &str, line: usize) -> Result<f64> {
    match parse_optional_f64(value, col, line)? {
        Some(v) if v == 0.0 || v == 1.0 => Ok(v),
        Some(v) => Err(Error::Data {
            row: line,
            msg: format!("column {col:?}: label {v} is not 0 or 1"),
        }),
        None => Err(Error::Data {
            row: line,
            msg: format!("column {col:?}: missing label"),
        }),
    }
}

fn parse_rating_label(value: Option<&str>, col: &str, line: usize) -> Result<f64> {
    match parse_optional_f64(value, col, line)? {
        Some(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Data {
            row: line,
            msg: format!("column {col:?}: missing or non-finite rating"),
        }),
    }
}

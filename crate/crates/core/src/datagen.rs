//! Synthetic data with a planted model.
//!
//! A freshly initialized teacher model (with its output multiplier boosted
//! so the signal is well above noise) assigns a click and an install
//! probability to every random feature row; labels are Bernoulli draws
//! from those probabilities. The teacher probabilities are retained, which
//! pins down the Bayes-optimal score on any subset: no predictor can beat
//! the AUC of the probabilities the labels were drawn from.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::dataset::RawDataset;
use crate::features::schema::{DeclaredRole, SchemaConfig};
use crate::model::{ModelConfig, WmlffModel};
use crate::numerics::rng::Rng;
use crate::numerics::tape::Tape;

/// Offset between the teacher-parameter stream and the feature stream, so
/// the teacher can be rebuilt from the seed alone.
const DATA_STREAM_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub n_rows: usize,
    pub seed: u64,
    /// Teacher architecture; its cardinalities and numeric width define the
    /// generated columns.
    pub model: ModelConfig,
    /// Value planted as the shared output multiplier. The unit value the
    /// initializer uses keeps logits too close to zero to separate classes;
    /// boosting it spreads the planted probabilities over most of (0, 1).
    pub scale_boost: f64,
}

impl PlantedConfig {
    pub fn new(n_rows: usize, seed: u64) -> Self {
        let mut model = ModelConfig::new(vec![40, 30], 2);
        model.dim = 8;
        model.tower_depth = 2;
        model.noise_sigma = 0.0;
        PlantedConfig {
            n_rows,
            seed,
            model,
            scale_boost: 6.0,
        }
    }
}

/// Generated rows plus the probabilities the labels were drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedData {
    pub raw: RawDataset,
    pub p_click: Vec<f64>,
    pub p_install: Vec<f64>,
}

/// The teacher is fully determined by the config: parameters come from the
/// seed, then the multiplier is overwritten with `scale_boost`.
pub fn teacher_model(cfg: &PlantedConfig) -> Result<WmlffModel> {
    let mut rng = Rng::new(cfg.seed);
    let mut model = WmlffModel::init(cfg.model.clone(), &mut rng)?;
    let id = model.factor_scale_id();
    model.params_mut().get_mut(id).as_mut_slice()[0] = cfg.scale_boost;
    model.round_params_to_f32();
    Ok(model)
}

pub fn generate(cfg: &PlantedConfig) -> Result<PlantedData> {
    let teacher = teacher_model(cfg)?;
    let mut rng = Rng::new(cfg.seed.wrapping_add(DATA_STREAM_OFFSET));
    let cards = &cfg.model.cardinalities;
    let n_num = cfg.model.n_numeric;

    let mut columns: Vec<String> = Vec::new();
    for j in 0..cards.len() {
        columns.push(format!("cat_{j}"));
    }
    for j in 0..n_num {
        columns.push(format!("num_{j}"));
    }
    columns.push("click".into());
    columns.push("installed".into());

    let mut rows = Vec::with_capacity(cfg.n_rows);
    let mut p_click = Vec::with_capacity(cfg.n_rows);
    let mut p_install = Vec::with_capacity(cfg.n_rows);
    let mut tape = Tape::with_recording(false);
    let mut x_c = vec![0u32; cards.len()];
    let mut x_n = vec![0.0; n_num];
    for _ in 0..cfg.n_rows {
        for (slot, &card) in x_c.iter_mut().zip(cards) {
            *slot = rng.below(card as u64) as u32;
        }
        for slot in x_n.iter_mut() {
            *slot = rng.gaussian(0.0, 1.0);
        }
        let p = teacher.predict_with(&mut tape, &x_c, &x_n)?;
        let click = rng.bernoulli(p[0]);
        let install = rng.bernoulli(p[1]);

        let mut row: Vec<Option<String>> = Vec::with_capacity(columns.len());
        for &id in &x_c {
            row.push(Some(format!("v{id}")));
        }
        for &x in &x_n {
            row.push(Some(format!("{x}")));
        }
        row.push(Some(if click { "1" } else { "0" }.into()));
        row.push(Some(if install { "1" } else { "0" }.into()));
        rows.push(row);
        p_click.push(p[0]);
        p_install.push(p[1]);
    }

    Ok(PlantedData {
        raw: RawDataset { columns, rows },
        p_click,
        p_install,
    })
}

/// Schema config matching [`generate`]'s output: label columns declared,
/// everything else inferred.
pub fn planted_schema_config() -> SchemaConfig {
    let mut config = SchemaConfig::default();
    config.roles.insert("click".into(), DeclaredRole::LabelClick);
    config
        .roles
        .insert("installed".into(), DeclaredRole::LabelInstall);
    config
}

/// The retained probabilities as a two-column dataset, for writing next to
/// the generated rows.
pub fn probabilities_dataset(data: &PlantedData) -> RawDataset {
    RawDataset {
        columns: vec!["p_click".into(), "p_install".into()],
        rows: data
            .p_click
            .iter()
            .zip(&data.p_install)
            .map(|(a, b)| vec![Some(format!("{a}")), Some(format!("{b}"))])
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval;
    use crate::features::pipeline::FeatureSchema;

    #[test]
    fn generation_is_deterministic() {
        let cfg = PlantedConfig::new(200, 31);
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate(&PlantedConfig::new(200, 32)).unwrap();
        assert_ne!(a.raw.rows, c.raw.rows);
    }

    #[test]
    fn teacher_is_rebuildable_from_the_seed() {
        let cfg = PlantedConfig::new(10, 77);
        let t1 = teacher_model(&cfg).unwrap();
        let t2 = teacher_model(&cfg).unwrap();
        for ((_, a), (_, b)) in t1.params().iter().zip(t2.params().iter()) {
            assert_eq!(a.as_slice(), b.as_slice());
        }
        let id = t1.factor_scale_id();
        assert_eq!(t1.params().get(id).as_slice()[0], 6.0);
    }

    #[test]
    fn labels_follow_the_planted_probabilities() {
        let data = generate(&PlantedConfig::new(6000, 5)).unwrap();
        let click_col = data.raw.columns.iter().position(|c| c == "click").unwrap();
        let clicks: Vec<f64> = data
            .raw
            .rows
            .iter()
            .map(|r| r[click_col].as_deref().unwrap().parse::<f64>().unwrap())
            .collect();
        let base_rate = clicks.iter().sum::<f64>() / clicks.len() as f64;
        let mean_p = data.p_click.iter().sum::<f64>() / data.p_click.len() as f64;
        assert!(
            (base_rate - mean_p).abs() < 0.02,
            "base rate {base_rate} vs mean probability {mean_p}"
        );
        // probabilities spread well away from a constant
        let spread = data
            .p_click
            .iter()
            .map(|p| (p - mean_p) * (p - mean_p))
            .sum::<f64>()
            / data.p_click.len() as f64;
        assert!(spread.sqrt() > 0.1, "flat probabilities, sd {}", spread.sqrt());
        // and the planted scores separate the labels they generated
        let bayes = eval::auc(&data.p_click, &clicks).unwrap();
        assert!(bayes > 0.65, "bayes auc {bayes}");
    }

    #[test]
    fn generated_rows_encode_under_the_planted_schema() {
        let cfg = PlantedConfig::new(3000, 11);
        let data = generate(&cfg).unwrap();
        let outcome = FeatureSchema::fit(&planted_schema_config(), &data.raw).unwrap();
        assert!(outcome.warnings.is_empty(), "{:?}", outcome.warnings);
        let encoded = outcome.schema.encode(&data.raw).unwrap();
        assert_eq!(encoded.n_rows, 3000);
        assert_eq!(encoded.cardinalities, vec![40, 30]);
        assert_eq!(encoded.n_num, 2);
        assert!(encoded.clicks.is_some() && encoded.installs.is_some());
    }
}

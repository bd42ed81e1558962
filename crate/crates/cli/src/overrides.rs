//! Layered run configuration.
//!
//! A training run starts from defaults chosen by the label columns, then
//! applies (in order) an optional built-in variant preset, an optional TOML
//! config file, and finally command-line flags. Every layer is a set of
//! optional overrides; later layers win field by field.

use serde::Deserialize;
use wmlff_core::features::pipeline::{FeatureSchema, LabelLayout};
use wmlff_core::model::{FeatureTap, HeadKind, ModelConfig, OutputKind, TowerLayout};
use wmlff_core::training::{
    EarlyStopping, LossKind, OptimizerConfig, OptimizerKind, StopMetric, TrainConfig,
};
use wmlff_core::{Error, Result};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelOverrides {
    pub dim: Option<usize>,
    pub tower_depth: Option<usize>,
    pub noise_sigma: Option<f64>,
    pub activation_slope: Option<f64>,
    pub head: Option<HeadKind>,
    pub towers: Option<TowerLayout>,
    pub output: Option<OutputKind>,
    pub tap: Option<FeatureTap>,
}

impl ModelOverrides {
    pub fn apply(&self, cfg: &mut ModelConfig) {
        if let Some(v) = self.dim {
            cfg.dim = v;
        }
        if let Some(v) = self.tower_depth {
            cfg.tower_depth = v;
        }
        if let Some(v) = self.noise_sigma {
            cfg.noise_sigma = v;
        }
        if let Some(v) = self.activation_slope {
            cfg.activation_slope = v;
        }
        if let Some(v) = self.head {
            cfg.head = v;
        }
        if let Some(v) = self.towers {
            cfg.towers = v;
        }
        if let Some(v) = self.output {
            cfg.output = v;
        }
        if let Some(v) = self.tap {
            cfg.tap = v;
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOverrides {
    pub loss: Option<LossKind>,
    pub optimizer: Option<OptimizerKind>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub validation_split: Option<f64>,
    pub early_stopping: Option<bool>,
    pub patience: Option<usize>,
    pub stop_metric: Option<StopMetric>,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.loss {
            cfg.loss = v;
        }
        if let Some(v) = self.optimizer {
            cfg.optimizer = OptimizerConfig::new(v);
        }
        if let Some(v) = self.lr {
            cfg.optimizer.lr = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.optimizer.weight_decay = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.validation_split {
            cfg.validation_split = v;
        }
        if self.early_stopping == Some(false) {
            cfg.early_stopping = None;
        } else if self.early_stopping == Some(true)
            || self.patience.is_some()
            || self.stop_metric.is_some()
        {
            let stop = cfg.early_stopping.get_or_insert_with(EarlyStopping::default);
            if let Some(v) = self.patience {
                stop.patience = v;
            }
            if let Some(v) = self.stop_metric {
                stop.metric = v;
            }
        }
    }
}

/// TOML file shape accepted by `--config`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelOverrides,
    pub train: TrainOverrides,
    pub kfold: Option<usize>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::usage(format!("bad run config: {e}")))
    }
}

#[derive(Debug)]
pub struct Variant {
    pub name: &'static str,
    pub summary: &'static str,
    pub config: RunConfig,
}

/// The built-in ablation grid. `original` is the reference configuration;
/// every other entry changes exactly one thing relative to it.
pub fn variants() -> Vec<Variant> {
    let v = |name, summary, config| Variant {
        name,
        summary,
        config,
    };
    vec![
        v("original", "reference configuration", RunConfig::default()),
        v(
            "sigma-0.3",
            "weaker multiplicative noise",
            RunConfig {
                model: ModelOverrides {
                    noise_sigma: Some(0.3),
                    ..Default::default()
                },
                ..Default::default()
            },
        ),
        v(
            "adamw",
            "decoupled weight decay",
            RunConfig {
                train: TrainOverrides {
                    optimizer: Some(OptimizerKind::AdamW),
                    ..Default::default()
                },
                ..Default::default()
            },
        ),
        v(
            "no-shared",
            "independent towers per task",
            RunConfig {
                model: ModelOverrides {
                    towers: Some(TowerLayout::DualIndependent),
                    ..Default::default()
                },
                ..Default::default()
            },
        ),
        v(
            "cosine",
            "cosine similarity heads",
            RunConfig {
                model: ModelOverrides {
                    head: Some(HeadKind::Cosine),
                    ..Default::default()
                },
                ..Default::default()
            },
        ),
        v(
            "kfold",
            "four-member ensemble",
            RunConfig {
                kfold: Some(4),
                ..Default::default()
            },
        ),
        v(
            "depth-6",
            "deeper towers",
            RunConfig {
                model: ModelOverrides {
                    tower_depth: Some(6),
                    ..Default::default()
                },
                ..Default::default()
            },
        ),
        v(
            "dim-64",
            "wider embeddings and towers",
            RunConfig {
                model: ModelOverrides {
                    dim: Some(64),
                    ..Default::default()
                },
                ..Default::default()
            },
        ),
    ]
}

pub fn find_variant(name: &str) -> Result<Variant> {
    let all = variants();
    let names: Vec<&str> = all.iter().map(|v| v.name).collect();
    all.into_iter()
        .find(|v| v.name == name)
        .ok_or_else(|| Error::usage(format!("unknown variant {name:?}; one of {names:?}")))
}

pub struct TrainPlan {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub kfold: Option<usize>,
}

/// Resolves the four configuration layers into a concrete plan.
pub fn build_plan(
    schema: &FeatureSchema,
    variant: Option<&str>,
    file: Option<&RunConfig>,
    flag_model: &ModelOverrides,
    flag_train: &TrainOverrides,
    flag_kfold: Option<usize>,
) -> Result<TrainPlan> {
    let mut model = ModelConfig::new(schema.cardinalities(), schema.numeric_width());
    let mut train = TrainConfig::default();
    match schema.label_layout() {
        Some(LabelLayout::Dual) | None => {}
        Some(LabelLayout::Single) => {
            model.towers = TowerLayout::SingleTask;
            train.loss = LossKind::Bce;
        }
        Some(LabelLayout::Rating) => {
            model.towers = TowerLayout::SingleTask;
            train.loss = LossKind::Mse;
        }
    }
    let mut kfold = None;
    let preset = variant.map(find_variant).transpose()?;
    for layer in [preset.as_ref().map(|v| &v.config), file].into_iter().flatten() {
        layer.model.apply(&mut model);
        layer.train.apply(&mut train);
        if layer.kfold.is_some() {
            kfold = layer.kfold;
        }
    }
    flag_model.apply(&mut model);
    flag_train.apply(&mut train);
    if flag_kfold.is_some() {
        kfold = flag_kfold;
    }
    if kfold == Some(0) || kfold == Some(1) {
        return Err(Error::usage("--kfold needs at least 2 folds"));
    }
    Ok(TrainPlan {
        model,
        train,
        kfold,
    })
}

//! The factorization model: per-column embeddings feed feature towers, and
//! predictions come from weighted level-wise similarities between tower
//! outputs.
//!
//! Each tower is a stack of `dense -> multiplicative noise -> leaky relu`
//! blocks of constant width. For a pair of towers the head forms one
//! similarity per level, combines them with a learned per-level weight
//! vector, and scales the sum by a single multiplier shared by every head:
//!
//! ```text
//! logit = m * sum_l w[l] * sim(f_a[l], f_b[l])
//! ```
//!
//! The dual layout runs three towers (click, shared, installed) and two
//! heads that factorize against the same shared tower evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::dataset::EncodedDataset;
use crate::numerics::matrix::Matrix;
use crate::numerics::params::{ParamId, ParamSet};
use crate::numerics::rng::Rng;
use crate::numerics::tape::{NodeId, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    #[default]
    Dot,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TowerLayout {
    /// Click, shared, and installed towers; two heads factorizing against
    /// the shared tower.
    #[default]
    DualShared,
    /// Two towers per task, no sharing.
    DualIndependent,
    /// One pair of towers, one head.
    SingleTask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Heads emit probabilities through a logistic output.
    #[default]
    Sigmoid,
    /// Heads emit the raw factorization score.
    Linear,
}

/// Which tensor of a block feeds the head at each level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureTap {
    #[default]
    PostActivation,
    PreActivation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding table sizes for the high-cardinality columns, in dataset
    /// order.
    pub cardinalities: Vec<usize>,
    /// Width of the numeric feature block.
    pub n_numeric: usize,
    /// Embedding and tower width.
    pub dim: usize,
    /// Number of dense blocks per tower.
    pub tower_depth: usize,
    /// Standard deviation of the multiplicative train-time noise.
    pub noise_sigma: f64,
    /// Negative-side slope of the activation.
    pub activation_slope: f64,
    pub head: HeadKind,
    pub towers: TowerLayout,
    pub output: OutputKind,
    pub tap: FeatureTap,
}

impl ModelConfig {
    pub fn new(cardinalities: Vec<usize>, n_numeric: usize) -> Self {
        ModelConfig {
            cardinalities,
            n_numeric,
            dim: 32,
            tower_depth: 3,
            noise_sigma: 0.5,
            activation_slope: 0.01,
            head: HeadKind::Dot,
            towers: TowerLayout::DualShared,
            output: OutputKind::Sigmoid,
            tap: FeatureTap::PostActivation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::usage("embedding dimension must be positive"));
        }
        if self.tower_depth == 0 {
            return Err(Error::usage("towers need at least one block"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::usage("noise sigma must be non-negative"));
        }
        if self.cardinalities.iter().any(|&c| c == 0) {
            return Err(Error::usage("embedding tables cannot be empty"));
        }
        if self.cardinalities.is_empty() && self.n_numeric == 0 {
            return Err(Error::usage("model input is empty"));
        }
        Ok(())
    }

    /// Width of the embedded instance vector fed to the first block.
    pub fn input_width(&self) -> usize {
        let embed = if self.cardinalities.is_empty() {
            0
        } else {
            self.dim
        };
        embed + self.n_numeric
    }

    pub fn tower_names(&self) -> &'static [&'static str] {
        match self.towers {
            TowerLayout::DualShared => &["click", "shared", "installed"],
            TowerLayout::DualIndependent => {
                &["click_a", "click_b", "installed_a", "installed_b"]
            }
            TowerLayout::SingleTask => &["tower_a", "tower_b"],
        }
    }

    /// Tower index pairs feeding each head, with the head's output name.
    pub fn head_pairs(&self) -> Vec<(&'static str, usize, usize)> {
        match self.towers {
            TowerLayout::DualShared => vec![("click", 0, 1), ("installed", 2, 1)],
            TowerLayout::DualIndependent => vec![("click", 0, 1), ("installed", 2, 3)],
            TowerLayout::SingleTask => vec![("task", 0, 1)],
        }
    }

    pub fn n_heads(&self) -> usize {
        self.head_pairs().len()
    }

    /// The `(name, rows, cols)` of every parameter tensor, in creation
    /// order. Containers and loaders rely on this being stable.
    pub fn parameter_layout(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        for (i, &card) in self.cardinalities.iter().enumerate() {
            out.push((format!("embedding.{i}"), card, self.dim));
        }
        for tname in self.tower_names() {
            for l in 0..self.tower_depth {
                let fan_in = if l == 0 { self.input_width() } else { self.dim };
                out.push((format!("tower.{tname}.layer.{l}.weight"), self.dim, fan_in));
                out.push((format!("tower.{tname}.layer.{l}.bias"), 1, self.dim));
            }
        }
        for (hname, _, _) in self.head_pairs() {
            out.push((format!("head.{hname}.levels"), 1, self.tower_depth));
        }
        out.push(("factor_scale".into(), 1, 1));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_layout().iter().map(|(_, r, c)| r * c).sum()
    }
}

/// Tape handles produced by one forward evaluation.
pub struct Forward {
    /// Final per-head outputs: probabilities under a sigmoid output, raw
    /// scores under a linear one.
    pub outputs: Vec<NodeId>,
    pub logits: Vec<NodeId>,
    /// Tapped level features, `levels[tower][level]`.
    pub levels: Vec<Vec<NodeId>>,
}

#[derive(Debug, Clone)]
pub struct WmlffModel {
    config: ModelConfig,
    params: ParamSet,
    embeddings: Vec<ParamId>,
    towers: Vec<Vec<(ParamId, ParamId)>>,
    heads: Vec<ParamId>,
    factor_scale: ParamId,
}

impl WmlffModel {
    /// Fresh model with the usual initialization: embeddings `N(0, 1/dim)`,
    /// dense weights uniform in the Glorot range, zero biases, level
    /// weights and the shared multiplier at one.
    ///
    /// Every value is snapped to the nearest f32 so that saving (containers
    /// store f32) is lossless at any point in the model's life.
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        for (i, &card) in config.cardinalities.iter().enumerate() {
            let std = 1.0 / config.dim as f64;
            let data = (0..card * config.dim)
                .map(|_| rng.gaussian(0.0, std))
                .collect();
            params.add(
                format!("embedding.{i}"),
                Matrix::from_vec(card, config.dim, data)?,
            );
        }
        for tname in config.tower_names() {
            for l in 0..config.tower_depth {
                let fan_in = if l == 0 { config.input_width() } else { config.dim };
                let bound = (6.0 / (fan_in + config.dim) as f64).sqrt();
                let data = (0..config.dim * fan_in)
                    .map(|_| rng.uniform(-bound, bound))
                    .collect();
                params.add(
                    format!("tower.{tname}.layer.{l}.weight"),
                    Matrix::from_vec(config.dim, fan_in, data)?,
                );
                params.add(
                    format!("tower.{tname}.layer.{l}.bias"),
                    Matrix::row_vector(vec![0.0; config.dim]),
                );
            }
        }
        for (hname, _, _) in config.head_pairs() {
            params.add(
                format!("head.{hname}.levels"),
                Matrix::row_vector(vec![1.0; config.tower_depth]),
            );
        }
        params.add("factor_scale", Matrix::row_vector(vec![1.0]));
        params.round_to_f32();
        Self::from_params(config, params)
    }

    /// Assemble a model around an existing parameter set, checking that
    /// names and shapes match this config's layout exactly.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let layout = config.parameter_layout();
        if params.len() != layout.len() {
            return Err(Error::format(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                params.len()
            )));
        }
        for (id, (name, rows, cols)) in params.ids().zip(&layout) {
            let t = params.get(id);
            if params.name(id) != name || t.rows() != *rows || t.cols() != *cols {
                return Err(Error::format(format!(
                    "parameter {} should be {name} ({rows}x{cols}), found {} ({}x{})",
                    id.index(),
                    params.name(id),
                    t.rows(),
                    t.cols()
                )));
            }
        }

        let ids: Vec<ParamId> = params.ids().collect();
        let mut cursor = 0usize;
        let mut take = |n: usize| {
            let s = &ids[cursor..cursor + n];
            cursor += n;
            s.to_vec()
        };
        let embeddings = take(config.cardinalities.len());
        let towers: Vec<Vec<(ParamId, ParamId)>> = (0..config.tower_names().len())
            .map(|_| {
                take(config.tower_depth * 2)
                    .chunks(2)
                    .map(|p| (p[0], p[1]))
                    .collect()
            })
            .collect();
        let heads = take(config.n_heads());
        let factor_scale = take(1)[0];

        Ok(WmlffModel {
            config,
            params,
            embeddings,
            towers,
            heads,
            factor_scale,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn round_params_to_f32(&mut self) {
        self.params.round_to_f32();
    }

    /// Level-weight tensor of head `h`; exposed for tests and diagnostics.
    pub fn head_levels(&self, h: usize) -> ParamId {
        self.heads[h]
    }

    pub fn factor_scale_id(&self) -> ParamId {
        self.factor_scale
    }

    /// One training/inference evaluation on the given tape. `noise` carries
    /// the RNG during training; `None` disables the noise layers (the
    /// inference path). Returns per-head output nodes.
    ///
    /// Noise multipliers are drawn tower by tower, layer by layer, element
    /// by element, so a fixed seed fixes the whole noise pattern.
    pub fn forward(
        &self,
        tape: &mut Tape,
        x_c: &[u32],
        x_n: &[f64],
        mut noise: Option<&mut Rng>,
    ) -> Result<Forward> {
        if x_c.len() != self.config.cardinalities.len() {
            return Err(Error::Dimension {
                op: "forward",
                lhs: format!("{} categorical ids", x_c.len()),
                rhs: format!("{} embedding tables", self.config.cardinalities.len()),
            });
        }
        if x_n.len() != self.config.n_numeric {
            return Err(Error::Dimension {
                op: "forward",
                lhs: format!("{} numeric features", x_n.len()),
                rhs: format!("width {}", self.config.n_numeric),
            });
        }

        let rows: Vec<(ParamId, usize)> = self
            .embeddings
            .iter()
            .zip(x_c)
            .map(|(&t, &id)| (t, id as usize))
            .collect();
        let input = tape.embed_mean(&self.params, &rows, x_n)?;

        let mut levels = Vec::with_capacity(self.towers.len());
        for tower in &self.towers {
            levels.push(self.tower_forward(tape, tower, input, &mut noise)?);
        }

        let mut logits = Vec::new();
        let mut outputs = Vec::new();
        for (h, (_, a, b)) in self.config.head_pairs().into_iter().enumerate() {
            let mut terms = Vec::with_capacity(self.config.tower_depth);
            for l in 0..self.config.tower_depth {
                let sim = match self.config.head {
                    HeadKind::Dot => tape.dot(&self.params, levels[a][l], levels[b][l])?,
                    HeadKind::Cosine => tape.cosine(&self.params, levels[a][l], levels[b][l])?,
                };
                terms.push(tape.scale_entry(&self.params, self.heads[h], l, sim)?.into());
            }
            let sum = tape.sum_scale(&self.params, &terms, 1.0)?;
            let logit = tape.scale_entry(&self.params, self.factor_scale, 0, sum)?;
            logits.push(logit);
            outputs.push(match self.config.output {
                OutputKind::Sigmoid => tape.sigmoid(&self.params, logit),
                OutputKind::Linear => logit,
            });
        }

        Ok(Forward {
            outputs,
            logits,
            levels,
        })
    }

    fn tower_forward(
        &self,
        tape: &mut Tape,
        tower: &[(ParamId, ParamId)],
        input: NodeId,
        noise: &mut Option<&mut Rng>,
    ) -> Result<Vec<NodeId>> {
        let mut taps = Vec::with_capacity(tower.len());
        let mut prev = input;
        for &(w, b) in tower {
            let mut h = tape.matvec(&self.params, w, prev, b)?;
            if self.config.noise_sigma > 0.0 {
                if let Some(rng) = noise.as_deref_mut() {
                    let mult: Vec<f64> = (0..self.config.dim)
                        .map(|_| rng.gaussian(1.0, self.config.noise_sigma))
                        .collect();
                    let m = tape.input(&mult);
                    h = tape.mul_elem(&self.params, h, m)?;
                }
            }
            let act = tape.leaky_relu(&self.params, h, self.config.activation_slope);
            taps.push(match self.config.tap {
                FeatureTap::PostActivation => act,
                FeatureTap::PreActivation => h,
            });
            prev = act;
        }
        Ok(taps)
    }

    /// Inference without noise on a scratch tape.
    pub fn predict(&self, x_c: &[u32], x_n: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::with_recording(false);
        self.predict_with(&mut tape, x_c, x_n)
    }

    /// Inference reusing a caller-provided tape (reset on entry, recording
    /// off) to avoid reallocation in prediction loops.
    pub fn predict_with(&self, tape: &mut Tape, x_c: &[u32], x_n: &[f64]) -> Result<Vec<f64>> {
        tape.reset();
        tape.set_recording(false);
        let fwd = self.forward(tape, x_c, x_n, None)?;
        Ok(fwd.outputs.iter().map(|&o| tape.scalar(o)).collect())
    }

    /// Per-head predictions over a whole dataset; indexed `[head][row]`.
    pub fn predict_dataset(&self, data: &EncodedDataset) -> Result<Vec<Vec<f64>>> {
        let mut out = vec![Vec::with_capacity(data.n_rows); self.config.n_heads()];
        let mut tape = Tape::with_recording(false);
        for i in 0..data.n_rows {
            let p = self.predict_with(&mut tape, data.row_c(i), data.row_n(i))?;
            for (h, v) in p.into_iter().enumerate() {
                out[h].push(v);
            }
        }
        Ok(out)
    }
}

/// A set of identically configured models predicting by averaging member
/// outputs. K-fold training produces these.
#[derive(Debug, Clone)]
pub struct Ensemble {
    members: Vec<WmlffModel>,
}

impl Ensemble {
    pub fn new(members: Vec<WmlffModel>) -> Result<Self> {
        let first = match members.first() {
            Some(m) => m.config().clone(),
            None => return Err(Error::usage("an ensemble needs at least one member")),
        };
        for m in &members[1..] {
            if *m.config() != first {
                return Err(Error::format(
                    "ensemble members disagree on model configuration",
                ));
            }
        }
        Ok(Ensemble { members })
    }

    pub fn members(&self) -> &[WmlffModel] {
        &self.members
    }

    pub fn config(&self) -> &ModelConfig {
        self.members[0].config()
    }

    pub fn predict(&self, x_c: &[u32], x_n: &[f64]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.config().n_heads()];
        for m in &self.members {
            for (a, v) in acc.iter_mut().zip(m.predict(x_c, x_n)?) {
                *a += v;
            }
        }
        let k = self.members.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        Ok(acc)
    }

    pub fn predict_dataset(&self, data: &EncodedDataset) -> Result<Vec<Vec<f64>>> {
        let mut acc = vec![vec![0.0; data.n_rows]; self.config().n_heads()];
        for m in &self.members {
            let p = m.predict_dataset(data)?;
            for (h, col) in p.into_iter().enumerate() {
                for (a, v) in acc[h].iter_mut().zip(col) {
                    *a += v;
                }
            }
        }
        let k = self.members.len() as f64;
        for col in &mut acc {
            col.iter_mut().for_each(|a| *a /= k);
        }
        Ok(acc)
    }
}

/// Central finite-difference gradient of `f` over every model parameter.
/// Verification helper: `f` must be deterministic (re-seed any noise).
pub fn finite_difference<F>(model: &mut WmlffModel, h: f64, mut f: F) -> Vec<Matrix>
where
    F: FnMut(&WmlffModel) -> f64,
{
    let ids: Vec<ParamId> = model.params.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let (rows, cols) = {
            let t = model.params.get(id);
            (t.rows(), t.cols())
        };
        let mut grad = Matrix::zeros(rows, cols);
        for i in 0..rows * cols {
            let orig = model.params.get(id).as_slice()[i];
            model.params_mut().get_mut(id).as_mut_slice()[i] = orig + h;
            let plus = f(model);
            model.params_mut().get_mut(id).as_mut_slice()[i] = orig - h;
            let minus = f(model);
            model.params_mut().get_mut(id).as_mut_slice()[i] = orig;
            grad.as_mut_slice()[i] = (plus - minus) / (2.0 * h);
        }
        out.push(grad);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::check::relative_error;

    fn tiny_config() -> ModelConfig {
        let mut c = ModelConfig::new(vec![5, 3], 2);
        c.dim = 4;
        c.tower_depth = 2;
        c.noise_sigma = 0.0;
        c
    }

    #[test]
    fn parameter_layout_matches_created_params() {
        let cfg = tiny_config();
        let model = WmlffModel::init(cfg.clone(), &mut Rng::new(1)).unwrap();
        let layout = cfg.parameter_layout();
        assert_eq!(model.params().len(), layout.len());
        for (id, (name, rows, cols)) in model.params().ids().zip(&layout) {
            assert_eq!(model.params().name(id), name);
            assert_eq!(model.params().get(id).rows(), *rows);
            assert_eq!(model.params().get(id).cols(), *cols);
        }
        assert_eq!(model.params().scalar_count(), cfg.parameter_count());
    }

    #[test]
    fn parameter_count_closed_form() {
        // dims: embeddings 5*4 + 3*4 = 32; towers 3 * (4*6 + 4 + 4*4 + 4) = 3*48;
        // heads 2*2; scale 1.
        let cfg = tiny_config();
        assert_eq!(cfg.input_width(), 6);
        assert_eq!(cfg.parameter_count(), 32 + 3 * 48 + 4 + 1);
    }

    #[test]
    fn fresh_model_head_weights_are_one() {
        let model = WmlffModel::init(tiny_config(), &mut Rng::new(3)).unwrap();
        for h in 0..2 {
            assert!(model
                .params()
                .get(model.head_levels(h))
                .as_slice()
                .iter()
                .all(|&v| v == 1.0));
        }
        assert_eq!(model.params().get(model.factor_scale_id()).as_slice(), &[1.0]);
    }

    #[test]
    fn same_seed_same_params() {
        let a = WmlffModel::init(tiny_config(), &mut Rng::new(7)).unwrap();
        let b = WmlffModel::init(tiny_config(), &mut Rng::new(7)).unwrap();
        for (id_a, id_b) in a.params().ids().zip(b.params().ids()) {
            assert_eq!(a.params().get(id_a), b.params().get(id_b));
        }
    }

    #[test]
    fn init_values_are_f32_exact() {
        let model = WmlffModel::init(tiny_config(), &mut Rng::new(11)).unwrap();
        for (_, t) in model.params().iter() {
            for &v in t.as_slice() {
                assert_eq!(v, v as f32 as f64);
            }
        }
    }

    #[test]
    fn dual_shared_evaluates_each_tower_once() {
        let cfg = tiny_config();
        let model = WmlffModel::init(cfg.clone(), &mut Rng::new(2)).unwrap();
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &[1, 2], &[0.5, -0.5], None).unwrap();
        assert_eq!(fwd.outputs.len(), 2);
        // 3 towers x depth matvecs; the shared tower is not re-run for the
        // second head.
        assert_eq!(tape.matvec_count(), 3 * cfg.tower_depth);
    }

    #[test]
    fn independent_layout_builds_four_towers() {
        let mut cfg = tiny_config();
        cfg.towers = TowerLayout::DualIndependent;
        let model = WmlffModel::init(cfg.clone(), &mut Rng::new(2)).unwrap();
        assert_eq!(model.towers.len(), 4);
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &[1, 2], &[0.5, -0.5], None).unwrap();
        assert_eq!(fwd.outputs.len(), 2);
        assert_eq!(tape.matvec_count(), 4 * cfg.tower_depth);
    }

    #[test]
    fn single_task_has_one_head() {
        let mut cfg = tiny_config();
        cfg.towers = TowerLayout::SingleTask;
        let model = WmlffModel::init(cfg, &mut Rng::new(2)).unwrap();
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &[0, 0], &[0.0, 1.0], None).unwrap();
        assert_eq!(fwd.outputs.len(), 1);
    }

    #[test]
    fn forward_is_deterministic_under_a_fixed_seed() {
        let mut cfg = tiny_config();
        cfg.noise_sigma = 0.5;
        let model = WmlffModel::init(cfg, &mut Rng::new(4)).unwrap();
        let run = || {
            let mut tape = Tape::with_recording(false);
            let mut noise = Rng::new(77);
            let fwd = model
                .forward(&mut tape, &[3, 1], &[0.2, 0.4], Some(&mut noise))
                .unwrap();
            fwd.outputs.iter().map(|&o| tape.scalar(o)).collect::<Vec<f64>>()
        };
        let a = run();
        let b = run();
        assert_eq!(a.len(), 2);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn noise_changes_training_outputs_but_not_inference() {
        let mut cfg = tiny_config();
        cfg.noise_sigma = 0.5;
        let model = WmlffModel::init(cfg, &mut Rng::new(4)).unwrap();
        let infer = model.predict(&[3, 1], &[0.2, 0.4]).unwrap();
        let mut tape = Tape::with_recording(false);
        let mut noise = Rng::new(5);
        let fwd = model
            .forward(&mut tape, &[3, 1], &[0.2, 0.4], Some(&mut noise))
            .unwrap();
        let noisy: Vec<f64> = fwd.outputs.iter().map(|&o| tape.scalar(o)).collect();
        assert_ne!(infer, noisy);
        // and a second inference matches the first bit for bit
        let again = model.predict(&[3, 1], &[0.2, 0.4]).unwrap();
        assert_eq!(infer, again);
    }

    #[test]
    fn probabilities_stay_in_range() {
        let model = WmlffModel::init(tiny_config(), &mut Rng::new(9)).unwrap();
        let mut r = Rng::new(10);
        for _ in 0..200 {
            let x_c = [r.below(5) as u32, r.below(3) as u32];
            let x_n = [r.gaussian(0.0, 3.0), r.gaussian(0.0, 3.0)];
            for p in model.predict(&x_c, &x_n).unwrap() {
                assert!((0.0..=1.0).contains(&p), "p = {p}");
            }
        }
    }

    #[test]
    fn doubling_levels_and_halving_scale_keeps_logits() {
        let mut cfg = tiny_config();
        cfg.towers = TowerLayout::SingleTask;
        cfg.output = OutputKind::Linear;
        let mut model = WmlffModel::init(cfg, &mut Rng::new(6)).unwrap();
        let before = model.predict(&[2, 1], &[0.3, -0.7]).unwrap();

        let head = model.head_levels(0);
        for v in model.params_mut().get_mut(head).as_mut_slice() {
            *v *= 2.0;
        }
        let scale = model.factor_scale_id();
        model.params_mut().get_mut(scale).as_mut_slice()[0] *= 0.5;
        let after = model.predict(&[2, 1], &[0.3, -0.7]).unwrap();
        // scaling by powers of two is exact, so the logit is bit-identical
        assert_eq!(before[0].to_bits(), after[0].to_bits());
    }

    #[test]
    fn per_task_gradients_do_not_leak_into_the_other_tower() {
        let cfg = tiny_config();
        let model = WmlffModel::init(cfg, &mut Rng::new(8)).unwrap();
        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &[1, 1], &[0.4, 0.6], None).unwrap();
        let g = tape.backward(model.params(), fwd.outputs[0]).unwrap();

        // p_click touches click + shared towers, the click head, and the
        // scale, but not the installed tower or the installed head.
        let zero = |name: &str| {
            let id = model
                .params()
                .ids()
                .find(|&id| model.params().name(id) == name)
                .unwrap();
            g.get(id).as_slice().iter().all(|&v| v == 0.0)
        };
        assert!(zero("tower.installed.layer.0.weight"));
        assert!(zero("tower.installed.layer.1.bias"));
        assert!(zero("head.installed.levels"));
        assert!(!zero("tower.click.layer.0.weight"));
        assert!(!zero("tower.shared.layer.0.weight"));
        assert!(!zero("head.click.levels"));
        assert!(!zero("factor_scale"));
    }

    #[test]
    fn cosine_head_logit_is_bounded() {
        let mut cfg = tiny_config();
        cfg.head = HeadKind::Cosine;
        cfg.output = OutputKind::Linear;
        let mut model = WmlffModel::init(cfg, &mut Rng::new(12)).unwrap();
        // make the bound non-trivial
        let head = model.head_levels(0);
        model.params_mut().get_mut(head).as_mut_slice()[0] = -2.5;
        let m_id = model.factor_scale_id();
        model.params_mut().get_mut(m_id).as_mut_slice()[0] = 1.75;

        let bound: f64 = {
            let w = model.params().get(model.head_levels(0)).as_slice();
            let m = model.params().get(model.factor_scale_id()).as_slice()[0];
            m.abs() * w.iter().map(|v| v.abs()).sum::<f64>()
        };
        let mut r = Rng::new(13);
        for _ in 0..500 {
            let x_c = [r.below(5) as u32, r.below(3) as u32];
            let x_n = [r.gaussian(0.0, 5.0), r.gaussian(0.0, 5.0)];
            let out = model.predict(&x_c, &x_n).unwrap();
            assert!(out[0].abs() <= bound + 1e-12, "|{}| > {bound}", out[0]);
        }
    }

    #[test]
    fn backward_matches_finite_differences_without_noise() {
        let mut cfg = tiny_config();
        cfg.noise_sigma = 0.0;
        let mut model = WmlffModel::init(cfg, &mut Rng::new(21)).unwrap();
        let x_c = [4, 2];
        let x_n = [0.8, -0.3];

        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &x_c, &x_n, None).unwrap();
        let loss = tape.bce_term(model.params(), fwd.outputs[0], 1.0).unwrap();
        let analytic = tape.backward(model.params(), loss).unwrap();

        let numeric = finite_difference(&mut model, 1e-5, |m| {
            let mut t = Tape::with_recording(false);
            let fwd = m.forward(&mut t, &x_c, &x_n, None).unwrap();
            let l = t.bce_term(m.params(), fwd.outputs[0], 1.0).unwrap();
            t.scalar(l)
        });

        let mut worst: f64 = 0.0;
        for (i, id) in model.params().ids().enumerate() {
            let a = analytic.get(id).as_slice();
            let n = numeric[i].as_slice();
            for j in 0..a.len() {
                worst = worst.max(relative_error(n[j], a[j]));
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn backward_matches_finite_differences_with_noise() {
        // deterministic noise: the eval re-seeds the rng every call
        let mut cfg = tiny_config();
        cfg.noise_sigma = 0.5;
        let mut model = WmlffModel::init(cfg, &mut Rng::new(22)).unwrap();
        let x_c = [1, 0];
        let x_n = [0.1, 0.9];

        let mut tape = Tape::new();
        let mut noise = Rng::new(1234);
        let fwd = model.forward(&mut tape, &x_c, &x_n, Some(&mut noise)).unwrap();
        let loss = tape.bce_term(model.params(), fwd.outputs[1], 0.0).unwrap();
        let analytic = tape.backward(model.params(), loss).unwrap();

        let numeric = finite_difference(&mut model, 1e-5, |m| {
            let mut t = Tape::with_recording(false);
            let mut noise = Rng::new(1234);
            let fwd = m.forward(&mut t, &x_c, &x_n, Some(&mut noise)).unwrap();
            let l = t.bce_term(m.params(), fwd.outputs[1], 0.0).unwrap();
            t.scalar(l)
        });

        let mut worst: f64 = 0.0;
        for (i, id) in model.params().ids().enumerate() {
            let a = analytic.get(id).as_slice();
            let n = numeric[i].as_slice();
            for j in 0..a.len() {
                worst = worst.max(relative_error(n[j], a[j]));
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn from_params_rejects_wrong_shapes() {
        let cfg = tiny_config();
        let model = WmlffModel::init(cfg.clone(), &mut Rng::new(1)).unwrap();
        let mut params = ParamSet::new();
        for (name, t) in model.params().iter() {
            params.add(name, t.clone());
        }
        // sabotage one tensor
        let bad = params.ids().next().unwrap();
        *params.get_mut(bad) = Matrix::zeros(1, 1);
        assert!(matches!(
            WmlffModel::from_params(cfg, params),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn forward_rejects_mismatched_inputs() {
        let model = WmlffModel::init(tiny_config(), &mut Rng::new(1)).unwrap();
        let mut tape = Tape::new();
        assert!(model.forward(&mut tape, &[1], &[0.0, 0.0], None).is_err());
        assert!(model.forward(&mut tape, &[1, 1], &[0.0], None).is_err());
        // id out of the table range
        assert!(model.forward(&mut tape, &[9, 0], &[0.0, 0.0], None).is_err());
    }

    #[test]
    fn pre_activation_tap_changes_the_head_input() {
        let mut cfg = tiny_config();
        let model_post = WmlffModel::init(cfg.clone(), &mut Rng::new(30)).unwrap();
        cfg.tap = FeatureTap::PreActivation;
        let model_pre = WmlffModel::from_params(cfg, model_post.params().clone()).unwrap();
        let post = model_post.predict(&[1, 2], &[0.5, -1.5]).unwrap();
        let pre = model_pre.predict(&[1, 2], &[0.5, -1.5]).unwrap();
        assert_ne!(post, pre);
    }

    #[test]
    fn head_weights_scale_their_level_linearly() {
        let mut cfg = tiny_config();
        cfg.towers = TowerLayout::SingleTask;
        cfg.output = OutputKind::Linear;
        let mut model = WmlffModel::init(cfg, &mut Rng::new(31)).unwrap();

        // with w = e_1 the logit is m * sim_1; tripling w[1] triples it
        let head = model.head_levels(0);
        {
            let w = model.params_mut().get_mut(head).as_mut_slice();
            w[0] = 0.0;
            w[1] = 1.0;
        }
        let one = model.predict(&[1, 1], &[1.0, 2.0]).unwrap()[0];
        model.params_mut().get_mut(head).as_mut_slice()[1] = 3.0;
        let three = model.predict(&[1, 1], &[1.0, 2.0]).unwrap()[0];
        assert!(relative_error(three, 3.0 * one) < 1e-12);
    }

    #[test]
    fn validate_rejects_bad_configs() {
        let mut cfg = ModelConfig::new(vec![4], 2);
        cfg.dim = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::new(vec![4], 2);
        cfg.tower_depth = 0;
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig::new(vec![], 0);
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::new(vec![4], 2);
        cfg.noise_sigma = f64::NAN;
        assert!(cfg.validate().is_err());
    }
}

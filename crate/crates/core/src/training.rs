//! The training loop: batch losses built on the tape, adaptive optimizers,
//! optional validation with early stopping, and k-fold ensembles.
//!
//! Everything a run touches is seeded through one [`Rng`] stream in a fixed
//! order (validation split, then per epoch the shuffle followed by the
//! noise draws of each batch), so a fixed seed reproduces training bit for
//! bit. Trained parameters are rounded to f32 precision at the end, which
//! is what model containers store.

pub mod optimizer;

pub use optimizer::{Optimizer, OptimizerConfig, OptimizerKind};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval;
use crate::features::dataset::EncodedDataset;
use crate::model::{Ensemble, ModelConfig, OutputKind, WmlffModel};
use crate::numerics::params::ParamSet;
use crate::numerics::rng::Rng;
use crate::numerics::tape::{NodeId, Src, Tape, PROB_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Click and install cross entropy averaged over both tasks.
    #[default]
    JointBce,
    /// Single-task cross entropy.
    Bce,
    /// Mean squared error, for rating regression.
    Mse,
}

fn bce_point(p: f64, y: f64) -> f64 {
    let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
}

/// Joint two-task loss: one cross-entropy term per task and instance,
/// summed and divided by twice the instance count.
pub fn joint_bce_loss(
    clicks: &[f64],
    p_click: &[f64],
    installs: &[f64],
    p_install: &[f64],
) -> Result<f64> {
    let n = clicks.len();
    if p_click.len() != n || installs.len() != n || p_install.len() != n {
        return Err(Error::Dimension {
            op: "joint_bce_loss",
            lhs: format!("{n} click labels"),
            rhs: format!(
                "{}/{}/{} click predictions, install labels, install predictions",
                p_click.len(),
                installs.len(),
                p_install.len()
            ),
        });
    }
    if n == 0 {
        return Err(Error::usage("joint_bce_loss needs at least one instance"));
    }
    if clicks.iter().chain(installs).any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::usage("joint_bce_loss labels must be 0 or 1"));
    }
    let mut acc = 0.0;
    for (&y, &p) in clicks.iter().zip(p_click) {
        acc += bce_point(p, y);
    }
    for (&y, &p) in installs.iter().zip(p_install) {
        acc += bce_point(p, y);
    }
    Ok(acc / (2.0 * n as f64))
}

/// Mean squared error between predictions and targets.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Dimension {
            op: "mse_loss",
            lhs: format!("{} predictions", pred.len()),
            rhs: format!("{} targets", target.len()),
        });
    }
    if pred.is_empty() {
        return Err(Error::usage("mse_loss needs at least one instance"));
    }
    let acc: f64 = pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(acc / pred.len() as f64)
}

/// Label column for single-task training: clicks when present, installs
/// otherwise.
pub fn single_task_labels(data: &EncodedDataset) -> Result<&[f64]> {
    data.clicks
        .as_deref()
        .or(data.installs.as_deref())
        .ok_or_else(|| Error::usage("single-task loss needs a click or install label"))
}

/// Regression target for a raw 1-to-5 rating: rescaled to `[0, 1]` for a
/// sigmoid output, untouched for a linear one.
pub fn rating_target(rating: f64, output: OutputKind) -> f64 {
    match output {
        OutputKind::Sigmoid => (rating - 1.0) / 4.0,
        OutputKind::Linear => rating,
    }
}

fn check_compatible(model: &WmlffModel, data: &EncodedDataset, loss: LossKind) -> Result<()> {
    let heads = model.config().n_heads();
    match loss {
        LossKind::JointBce => {
            if heads != 2 {
                return Err(Error::usage("the joint loss needs a dual-task model"));
            }
            if data.clicks.is_none() || data.installs.is_none() {
                return Err(Error::usage(
                    "the joint loss needs both click and install labels",
                ));
            }
        }
        LossKind::Bce => {
            if heads != 1 {
                return Err(Error::usage(
                    "single-task cross entropy needs a single-task model",
                ));
            }
            single_task_labels(data)?;
        }
        LossKind::Mse => {
            if heads != 1 {
                return Err(Error::usage("rating regression needs a single-task model"));
            }
            if data.ratings.is_none() {
                return Err(Error::usage("rating regression needs a rating label"));
            }
        }
    }
    if matches!(loss, LossKind::JointBce | LossKind::Bce)
        && model.config().output != OutputKind::Sigmoid
    {
        return Err(Error::usage("cross entropy needs a sigmoid output"));
    }
    Ok(())
}

/// Builds the loss of the given rows on the tape and returns its node.
/// This is exactly what the training loop differentiates, so gradient
/// checks against this function cover the real training path.
pub fn batch_loss(
    model: &WmlffModel,
    tape: &mut Tape,
    data: &EncodedDataset,
    rows: &[usize],
    loss: LossKind,
    mut noise: Option<&mut Rng>,
) -> Result<NodeId> {
    check_compatible(model, data, loss)?;
    if rows.is_empty() {
        return Err(Error::usage("batch_loss needs at least one row"));
    }
    let ps = model.params();
    let mut terms: Vec<Src> = Vec::with_capacity(rows.len() * 2);
    for &i in rows {
        if i >= data.n_rows {
            return Err(Error::usage(format!(
                "row {i} is out of range for a dataset of {} rows",
                data.n_rows
            )));
        }
        let fwd = model.forward(tape, data.row_c(i), data.row_n(i), noise.as_deref_mut())?;
        match loss {
            LossKind::JointBce => {
                let c = data.clicks.as_ref().unwrap()[i];
                let inst = data.installs.as_ref().unwrap()[i];
                terms.push(tape.bce_term(ps, fwd.outputs[0], c)?.into());
                terms.push(tape.bce_term(ps, fwd.outputs[1], inst)?.into());
            }
            LossKind::Bce => {
                let y = single_task_labels(data)?[i];
                terms.push(tape.bce_term(ps, fwd.outputs[0], y)?.into());
            }
            LossKind::Mse => {
                let r = data.ratings.as_ref().unwrap()[i];
                let target = rating_target(r, model.config().output);
                terms.push(tape.sq_diff(ps, fwd.outputs[0], target)?.into());
            }
        }
    }
    tape.sum_scale(ps, &terms, 1.0 / terms.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMetric {
    #[default]
    Loss,
    Auc,
    Rmse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarlyStopping {
    /// Consecutive epochs without improvement tolerated before stopping.
    pub patience: usize,
    pub metric: StopMetric,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        EarlyStopping {
            patience: 2,
            metric: StopMetric::Loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of rows held out for per-epoch validation; 0 disables it.
    pub validation_split: f64,
    pub early_stopping: Option<EarlyStopping>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::JointBce,
            optimizer: OptimizerConfig::default(),
            batch_size: 1024,
            epochs: 40,
            seed: 42,
            validation_split: 0.0,
            early_stopping: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValMetrics {
    pub loss: f64,
    pub auc: Option<f64>,
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub val: Option<ValMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were restored, when early stopping tracked one.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

fn validate_train_config(cfg: &TrainConfig) -> Result<()> {
    if cfg.batch_size == 0 {
        return Err(Error::usage("batch size must be positive"));
    }
    if !(0.0..1.0).contains(&cfg.validation_split) {
        return Err(Error::usage("validation split must lie in [0, 1)"));
    }
    Ok(())
}

/// Validation metrics under the given loss: the loss itself, AUC for the
/// classification losses when both classes are present, and rating RMSE
/// for regression.
pub fn validation_metrics(
    model: &WmlffModel,
    data: &EncodedDataset,
    loss: LossKind,
) -> Result<ValMetrics> {
    check_compatible(model, data, loss)?;
    let preds = model.predict_dataset(data)?;
    match loss {
        LossKind::JointBce => {
            let clicks = data.clicks.as_ref().unwrap();
            let installs = data.installs.as_ref().unwrap();
            let loss_v = joint_bce_loss(clicks, &preds[0], installs, &preds[1])?;
            let auc = match (eval::auc(&preds[0], clicks), eval::auc(&preds[1], installs)) {
                (Ok(a), Ok(b)) => Some(0.5 * (a + b)),
                _ => None,
            };
            Ok(ValMetrics {
                loss: loss_v,
                auc,
                rmse: None,
            })
        }
        LossKind::Bce => {
            let y = single_task_labels(data)?;
            Ok(ValMetrics {
                loss: eval::log_loss(&preds[0], y)?,
                auc: eval::auc(&preds[0], y).ok(),
                rmse: None,
            })
        }
        LossKind::Mse => {
            let ratings = data.ratings.as_ref().unwrap();
            let targets: Vec<f64> = ratings
                .iter()
                .map(|&r| rating_target(r, model.config().output))
                .collect();
            Ok(ValMetrics {
                loss: mse_loss(&preds[0], &targets)?,
                auc: None,
                rmse: Some(eval::rmse_ratings(&preds[0], ratings, model.config().output)?),
            })
        }
    }
}

fn stop_score(vm: &ValMetrics, metric: StopMetric) -> Result<f64> {
    match metric {
        StopMetric::Loss => Ok(vm.loss),
        StopMetric::Auc => vm
            .auc
            .map(|a| -a)
            .ok_or_else(|| Error::usage("auc is unavailable on this validation set")),
        StopMetric::Rmse => vm
            .rmse
            .ok_or_else(|| Error::usage("rmse is only tracked for rating models")),
    }
}

fn numerical_abort(epoch: usize, batch: usize, value: f64, params: &ParamSet) -> Error {
    let norms = params
        .l2_norms()
        .iter()
        .map(|(n, v)| format!("{n}={v:.6e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Error::Numerical(format!(
        "loss became {value} at epoch {epoch}, batch {batch}; parameter L2 norms: {norms}"
    ))
}

/// Trains the model in place. With a positive `validation_split` the tail
/// of a seeded shuffle is held out and scored after every epoch; early
/// stopping, when configured, watches those scores and restores the best
/// parameters seen.
pub fn train(
    model: &mut WmlffModel,
    data: &EncodedDataset,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    validate_train_config(cfg)?;
    check_compatible(model, data, cfg.loss)?;
    let mut rng = Rng::new(cfg.seed);
    if cfg.validation_split > 0.0 {
        let mut idx: Vec<usize> = (0..data.n_rows).collect();
        rng.shuffle(&mut idx);
        let n_val = (data.n_rows as f64 * cfg.validation_split).round() as usize;
        if n_val == 0 || n_val >= data.n_rows {
            return Err(Error::usage(format!(
                "validation split {} leaves an empty side on {} rows",
                cfg.validation_split, data.n_rows
            )));
        }
        let (train_idx, val_idx) = idx.split_at(data.n_rows - n_val);
        let train_ds = data.subset(train_idx);
        let val_ds = data.subset(val_idx);
        train_loop(model, &train_ds, Some(&val_ds), cfg, &mut rng, on_epoch)
    } else {
        train_loop(model, data, None, cfg, &mut rng, on_epoch)
    }
}

/// Same loop with an explicitly provided held-out set. K-fold members go
/// through here.
pub fn train_split(
    model: &mut WmlffModel,
    train: &EncodedDataset,
    val: Option<&EncodedDataset>,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    validate_train_config(cfg)?;
    check_compatible(model, train, cfg.loss)?;
    let mut rng = Rng::new(cfg.seed);
    train_loop(model, train, val, cfg, &mut rng, on_epoch)
}

fn train_loop(
    model: &mut WmlffModel,
    train: &EncodedDataset,
    val: Option<&EncodedDataset>,
    cfg: &TrainConfig,
    rng: &mut Rng,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    if train.n_rows == 0 {
        return Err(Error::usage("the training set is empty"));
    }
    if cfg.early_stopping.is_some() && val.is_none() {
        return Err(Error::usage("early stopping needs validation data"));
    }
    let mut opt = Optimizer::new(cfg.optimizer, model.params());
    let mut tape = Tape::new();
    let mut idx: Vec<usize> = (0..train.n_rows).collect();
    let mut epochs: Vec<EpochRecord> = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamSet)> = None;
    let mut since_best = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut idx);
        let mut loss_sum = 0.0;
        for (b, batch) in idx.chunks(cfg.batch_size).enumerate() {
            tape.reset();
            tape.set_recording(true);
            let loss = batch_loss(model, &mut tape, train, batch, cfg.loss, Some(rng))?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(numerical_abort(epoch, b, value, model.params()));
            }
            let grads = tape.backward(model.params(), loss)?;
            opt.step(model.params_mut(), &grads);
            loss_sum += value * batch.len() as f64;
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.n_rows as f64,
            val: match val {
                Some(v) => Some(validation_metrics(model, v, cfg.loss)?),
                None => None,
            },
        };
        on_epoch(&record);
        epochs.push(record);

        if let Some(es) = cfg.early_stopping {
            let vm = epochs.last().and_then(|r| r.val.as_ref()).unwrap();
            let score = stop_score(vm, es.metric)?;
            if best.as_ref().map_or(true, |(b, _, _)| score < *b) {
                best = Some((score, epoch, model.params().clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= es.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let best_epoch = best.map(|(_, e, ps)| {
        *model.params_mut() = ps;
        e
    });
    model.round_params_to_f32();
    Ok(TrainReport {
        epochs,
        best_epoch,
        stopped_early,
    })
}

/// K-fold ensemble training. Rows are shuffled once with the config seed
/// and dealt round-robin into `k` folds; member `j` initializes and trains
/// with seed `cfg.seed + j` on everything outside fold `j`, validating on
/// fold `j`.
pub fn kfold_train(
    config: &ModelConfig,
    data: &EncodedDataset,
    k: usize,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &EpochRecord),
) -> Result<(Ensemble, Vec<TrainReport>)> {
    if k < 2 {
        return Err(Error::usage("k-fold training needs k >= 2"));
    }
    if data.n_rows < k {
        return Err(Error::usage(format!(
            "cannot deal {} rows into {k} folds",
            data.n_rows
        )));
    }
    let mut idx: Vec<usize> = (0..data.n_rows).collect();
    Rng::new(cfg.seed).shuffle(&mut idx);

    let mut members = Vec::with_capacity(k);
    let mut reports = Vec::with_capacity(k);
    for fold in 0..k {
        let mut train_idx = Vec::with_capacity(data.n_rows - data.n_rows / k);
        let mut val_idx = Vec::with_capacity(data.n_rows / k + 1);
        for (pos, &row) in idx.iter().enumerate() {
            if pos % k == fold {
                val_idx.push(row);
            } else {
                train_idx.push(row);
            }
        }
        let mut member_cfg = cfg.clone();
        member_cfg.seed = cfg.seed + fold as u64;
        member_cfg.validation_split = 0.0;
        let mut model = WmlffModel::init(config.clone(), &mut Rng::new(member_cfg.seed))?;
        let report = train_split(
            &mut model,
            &data.subset(&train_idx),
            Some(&data.subset(&val_idx)),
            &member_cfg,
            |r| on_epoch(fold, r),
        )?;
        members.push(model);
        reports.push(report);
    }
    Ok((Ensemble::new(members)?, reports))
}

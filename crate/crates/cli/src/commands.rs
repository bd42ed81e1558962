//! Subcommand implementations.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use wmlff_core::container::{self, config_hash, LoadedModel, Provenance};
use wmlff_core::datagen::{self, PlantedConfig};
use wmlff_core::eval::{self, MetricsReport};
use wmlff_core::features::dataset::RawDataset;
use wmlff_core::features::{
    read_delimited, write_delimited, write_lines, ColumnEncoder, EncodedDataset, FeatureSchema,
    LabelLayout, SchemaConfig,
};
use wmlff_core::model::{OutputKind, WmlffModel};
use wmlff_core::numerics::Rng;
use wmlff_core::training::{
    self, joint_bce_loss, kfold_train, mse_loss, rating_target, EpochRecord, TrainReport,
};
use wmlff_core::{Error, Result};

use crate::cli::{
    AblateArgs, Cli, Command, EvaluateArgs, FitSchemaArgs, GenerateArgs, ModelFlags, PredictArgs,
    TrainArgs, TrainFlags,
};
use crate::movielens;
use crate::overrides::{
    build_plan, variants, ModelOverrides, RunConfig, TrainOverrides, TrainPlan,
};

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::FitSchema(args) => cmd_fit_schema(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Predict(args) => cmd_predict(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Ablate(args) => cmd_ablate(&args),
        Command::Generate(args) => cmd_generate(&args),
        Command::AdaptMovielens(args) => movielens::cmd_adapt(&args),
        Command::Subsample(args) => movielens::cmd_subsample(&args),
    }
}

/// Returns the path as given when it exists; otherwise retries it under
/// `WMLFF_DATA_DIR`. Nonexistent paths come back unchanged so the caller's
/// open error names what the user typed.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    if path.exists() || path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os("WMLFF_DATA_DIR") {
        Some(dir) => {
            let candidate = PathBuf::from(dir).join(path);
            if candidate.exists() {
                candidate
            } else {
                path.to_path_buf()
            }
        }
        None => path.to_path_buf(),
    }
}

fn load_schema_config(path: Option<&PathBuf>) -> Result<SchemaConfig> {
    match path {
        Some(p) => SchemaConfig::from_toml_str(&fs::read_to_string(resolve_data_path(p))?),
        None => Ok(SchemaConfig::default()),
    }
}

fn load_pipeline(path: &Path) -> Result<FeatureSchema> {
    let text = fs::read_to_string(resolve_data_path(path))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: not a fitted pipeline: {e}", path.display())))
}

fn fit_and_encode(
    data: &Path,
    schema_config: Option<&PathBuf>,
    pipeline: Option<&PathBuf>,
) -> Result<(FeatureSchema, EncodedDataset)> {
    let raw = read_delimited(&resolve_data_path(data))?;
    let schema = match pipeline {
        Some(p) => load_pipeline(p)?,
        None => {
            let cfg = load_schema_config(schema_config)?;
            let outcome = FeatureSchema::fit(&cfg, &raw)?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            outcome.schema
        }
    };
    let encoded = schema.encode(&raw)?;
    Ok((schema, encoded))
}

fn snake_name<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value)
        .unwrap_or_default()
        .trim_matches('"')
        .to_string()
}

fn encoder_summary(encoder: &ColumnEncoder) -> String {
    match encoder {
        ColumnEncoder::None => "passthrough".to_string(),
        ColumnEncoder::Ordinal(e) => format!("ordinal cardinality={}", e.cardinality()),
        ColumnEncoder::Target(_) => "per-task target means + squashed count".to_string(),
        ColumnEncoder::Standardizer(s) => {
            format!("standardize mu={:.4} sigma={:.4}", s.mu, s.sigma)
        }
    }
}

pub fn cmd_fit_schema(args: &FitSchemaArgs) -> Result<()> {
    let raw = read_delimited(&resolve_data_path(&args.data))?;
    let cfg = load_schema_config(args.schema_config.as_ref())?;
    let outcome = FeatureSchema::fit(&cfg, &raw)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    for spec in &outcome.schema.columns {
        println!(
            "column={} role={} {}",
            spec.name,
            snake_name(&spec.role),
            encoder_summary(&spec.encoder)
        );
    }
    println!(
        "cardinalities={:?} numeric_width={} rows={}",
        outcome.schema.cardinalities(),
        outcome.schema.numeric_width(),
        raw.n_rows()
    );
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&outcome.schema)
            .map_err(|e| Error::Format(e.to_string()))?;
        fs::write(out, json)?;
        println!("schema written to {}", out.display());
    }
    Ok(())
}

impl ModelFlags {
    fn overrides(&self) -> ModelOverrides {
        ModelOverrides {
            dim: self.dim,
            tower_depth: self.depth,
            noise_sigma: self.noise_sigma,
            activation_slope: self.activation_slope,
            head: self.head,
            towers: self.towers,
            output: self.output,
            tap: self.tap,
        }
    }
}

impl TrainFlags {
    fn overrides(&self) -> TrainOverrides {
        TrainOverrides {
            loss: self.loss,
            optimizer: self.optimizer,
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch,
            epochs: self.epochs,
            seed: self.seed,
            validation_split: self.validation_split,
            early_stopping: self.early_stopping.then_some(true),
            patience: self.patience,
            stop_metric: self.stop_metric,
        }
    }
}

fn epoch_line(prefix: &str, rec: &EpochRecord) -> String {
    let mut line = format!("{prefix}epoch={} train_loss={:.6}", rec.epoch, rec.train_loss);
    if let Some(val) = &rec.val {
        line.push_str(&format!(" val_loss={:.6}", val.loss));
        if let Some(auc) = val.auc {
            line.push_str(&format!(" val_auc={auc:.4}"));
        }
        if let Some(rmse) = val.rmse {
            line.push_str(&format!(" val_rmse={rmse:.4}"));
        }
    }
    line
}

fn execute_plan(
    plan: &TrainPlan,
    data: &EncodedDataset,
    quiet: bool,
) -> Result<(LoadedModel, Vec<TrainReport>)> {
    match plan.kfold {
        Some(k) => {
            let (ensemble, reports) = kfold_train(&plan.model, data, k, &plan.train, |fold, rec| {
                if !quiet {
                    eprintln!("{}", epoch_line(&format!("fold={fold} "), rec));
                }
            })?;
            Ok((LoadedModel::Ensemble(ensemble), reports))
        }
        None => {
            let mut rng = Rng::new(plan.train.seed);
            let mut model = WmlffModel::init(plan.model.clone(), &mut rng)?;
            let report = training::train(&mut model, data, &plan.train, |rec| {
                if !quiet {
                    eprintln!("{}", epoch_line("", rec));
                }
            })?;
            Ok((LoadedModel::Single(model), vec![report]))
        }
    }
}

fn save_loaded(
    path: &Path,
    model: &LoadedModel,
    schema: &FeatureSchema,
    provenance: &Provenance,
) -> Result<()> {
    match model {
        LoadedModel::Single(m) => container::save_model(path, m, schema, provenance),
        LoadedModel::Ensemble(e) => container::save_ensemble(path, e, schema, provenance),
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let started = Instant::now();
    let (schema, encoded) = fit_and_encode(
        &args.data,
        args.schema_config.as_ref(),
        args.pipeline.as_ref(),
    )?;
    let file_cfg = args
        .config
        .as_ref()
        .map(|p| -> Result<RunConfig> {
            RunConfig::from_toml_str(&fs::read_to_string(resolve_data_path(p))?)
        })
        .transpose()?;
    let plan = build_plan(
        &schema,
        args.variant.as_deref(),
        file_cfg.as_ref(),
        &args.model.overrides(),
        &args.train.overrides(),
        args.kfold,
    )?;
    let (model, reports) = execute_plan(&plan, &encoded, args.quiet)?;
    let provenance = Provenance {
        seed: Some(plan.train.seed),
        train: Some(plan.train.clone()),
        config_hash: config_hash(&plan.model),
    };
    save_loaded(&args.out, &model, &schema, &provenance)?;
    let mut report = MetricsReport::new(dataset_name(&args.data), &provenance.config_hash);
    report.insert("members", model.n_members() as f64);
    report.insert("params_per_member", plan.model.parameter_count() as f64);
    if let Some(last) = reports.last().and_then(|r| r.epochs.last()) {
        report.insert("final_train_loss", last.train_loss);
        if let Some(val) = &last.val {
            report.insert("final_val_loss", val.loss);
            if let Some(auc) = val.auc {
                report.insert("final_val_auc", auc);
            }
            if let Some(rmse) = val.rmse {
                report.insert("final_val_rmse", rmse);
            }
        }
    }
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    print!("{}", report.kv_block());
    println!("saved {}", args.out.display());
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let (model, schema, _) = container::load(&resolve_data_path(&args.model))?;
    let raw = read_delimited(&resolve_data_path(&args.data))?;
    let encoded = schema.encode(&raw)?;
    let mut preds = model.predict_dataset(&encoded)?;
    let rating_mode = schema.label_layout() == Some(LabelLayout::Rating);
    let columns: Vec<String> = if rating_mode {
        preds.truncate(1);
        for p in &mut preds[0] {
            *p = eval::rating_scale(*p, model.config().output);
        }
        vec!["rating".to_string()]
    } else {
        let prefix = match model.config().output {
            OutputKind::Sigmoid => "p",
            OutputKind::Linear => "score",
        };
        model
            .config()
            .head_pairs()
            .iter()
            .map(|(name, _, _)| format!("{prefix}_{name}"))
            .collect()
    };
    let mut lines = Vec::with_capacity(encoded.n_rows + 1);
    lines.push(format!("row_id,{}", columns.join(",")));
    for i in 0..encoded.n_rows {
        let mut row = i.to_string();
        for head in &preds {
            row.push(',');
            row.push_str(&head[i].to_string());
        }
        lines.push(row);
    }
    write_lines(&args.out, lines)?;
    println!("wrote {} predictions to {}", encoded.n_rows, args.out.display());
    Ok(())
}

fn insert_classification(
    report: &mut MetricsReport,
    prefix: &str,
    preds: &[f64],
    labels: &[f64],
) -> Result<()> {
    report.insert(format!("{prefix}_log_loss"), eval::log_loss(preds, labels)?);
    match eval::auc(preds, labels) {
        Ok(v) => report.insert(format!("{prefix}_auc"), v),
        Err(e) => eprintln!("warning: {prefix} auc skipped: {e}"),
    }
    match eval::normalized_cross_entropy(preds, labels) {
        Ok(v) => report.insert(format!("{prefix}_nce"), v),
        Err(e) => eprintln!("warning: {prefix} nce skipped: {e}"),
    }
    Ok(())
}

/// Scores a model on labeled data, picking metrics that match the label
/// columns: AUC, log loss, and normalized cross entropy per classification
/// head, RMSE and MSE for ratings.
pub fn metric_report(
    model: &LoadedModel,
    data: &EncodedDataset,
    dataset: &str,
    hash: &str,
) -> Result<MetricsReport> {
    let mut report = MetricsReport::new(dataset, hash);
    let preds = model.predict_dataset(data)?;
    let heads = model.config().n_heads();
    match (&data.clicks, &data.installs, &data.ratings) {
        (Some(clicks), Some(installs), None) if heads == 2 => {
            report.insert(
                "joint_loss",
                joint_bce_loss(clicks, &preds[0], installs, &preds[1])?,
            );
            insert_classification(&mut report, "click", &preds[0], clicks)?;
            insert_classification(&mut report, "installed", &preds[1], installs)?;
        }
        (clicks, installs, None) if heads == 1 && (clicks.is_some() || installs.is_some()) => {
            let labels = clicks.as_ref().or(installs.as_ref()).unwrap();
            report.insert("log_loss", eval::log_loss(&preds[0], labels)?);
            match eval::auc(&preds[0], labels) {
                Ok(v) => report.insert("auc", v),
                Err(e) => eprintln!("warning: auc skipped: {e}"),
            }
            match eval::normalized_cross_entropy(&preds[0], labels) {
                Ok(v) => report.insert("nce", v),
                Err(e) => eprintln!("warning: nce skipped: {e}"),
            }
        }
        (None, None, Some(ratings)) if heads == 1 => {
            let targets: Vec<f64> = ratings
                .iter()
                .map(|&r| rating_target(r, model.config().output))
                .collect();
            report.insert("mse", mse_loss(&preds[0], &targets)?);
            report.insert(
                "rmse",
                eval::rmse_ratings(&preds[0], ratings, model.config().output)?,
            );
        }
        _ => {
            return Err(Error::usage(
                "the data's label columns do not match the model's heads",
            ))
        }
    }
    Ok(report)
}

fn dataset_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn report_csv(reports: &[MetricsReport]) -> Vec<String> {
    let keys: BTreeSet<&str> = reports
        .iter()
        .flat_map(|r| r.values.keys().map(String::as_str))
        .collect();
    let keys: Vec<&str> = keys.into_iter().collect();
    let mut lines = vec![MetricsReport::csv_header(&keys)];
    lines.extend(reports.iter().map(|r| r.csv_row(&keys)));
    lines
}

/// Parses a predictions CSV (as written by `predict`, or any numeric
/// columns after an optional `row_id`) into per-column value vectors.
fn read_predictions(path: &Path) -> Result<Vec<Vec<f64>>> {
    let raw = read_delimited(&resolve_data_path(path))?;
    let keep: Vec<usize> = (0..raw.columns.len())
        .filter(|&j| raw.columns[j] != "row_id")
        .collect();
    if keep.is_empty() {
        return Err(Error::usage("predictions file has no value columns"));
    }
    let mut columns = vec![Vec::with_capacity(raw.n_rows()); keep.len()];
    for (i, row) in raw.rows.iter().enumerate() {
        for (slot, &j) in keep.iter().enumerate() {
            let cell = row.get(j).and_then(|c| c.as_deref()).unwrap_or("");
            let value: f64 = cell.parse().map_err(|_| Error::Data {
                row: i + 2,
                msg: format!("bad prediction {cell:?} in column {:?}", raw.columns[j]),
            })?;
            columns[slot].push(value);
        }
    }
    Ok(columns)
}

/// Scores a predictions file against the label columns of `data`. Dual
/// labels expect two prediction columns (click first); rating labels expect
/// ratings on the 1-to-5 scale.
fn predictions_report(args: &EvaluateArgs) -> Result<MetricsReport> {
    let preds = read_predictions(args.predictions.as_ref().expect("checked by caller"))?;
    let raw = read_delimited(&resolve_data_path(&args.data))?;
    let cfg = load_schema_config(args.schema_config.as_ref())?;
    let outcome = FeatureSchema::fit(&cfg, &raw)?;
    let encoded = outcome.schema.encode(&raw)?;
    let mut report = MetricsReport::new(dataset_name(&args.data), "none");
    let expect = |n: usize| -> Result<()> {
        if preds.len() == n {
            Ok(())
        } else {
            Err(Error::usage(format!(
                "expected {n} prediction column(s) for these labels, found {}",
                preds.len()
            )))
        }
    };
    match (&encoded.clicks, &encoded.installs, &encoded.ratings) {
        (Some(clicks), Some(installs), None) => {
            expect(2)?;
            report.insert("joint_loss", joint_bce_loss(clicks, &preds[0], installs, &preds[1])?);
            insert_classification(&mut report, "click", &preds[0], clicks)?;
            insert_classification(&mut report, "installed", &preds[1], installs)?;
        }
        (clicks, installs, None) if clicks.is_some() || installs.is_some() => {
            expect(1)?;
            let labels = clicks.as_ref().or(installs.as_ref()).unwrap();
            report.insert("log_loss", eval::log_loss(&preds[0], labels)?);
            match eval::auc(&preds[0], labels) {
                Ok(v) => report.insert("auc", v),
                Err(e) => eprintln!("warning: auc skipped: {e}"),
            }
            match eval::normalized_cross_entropy(&preds[0], labels) {
                Ok(v) => report.insert("nce", v),
                Err(e) => eprintln!("warning: nce skipped: {e}"),
            }
        }
        (None, None, Some(ratings)) => {
            expect(1)?;
            report.insert("rmse", eval::rmse(&preds[0], ratings)?);
        }
        _ => return Err(Error::usage("the data file has no label columns")),
    }
    Ok(report)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let started = Instant::now();
    let mut report = match &args.model {
        Some(model_path) => {
            let (model, schema, provenance) = container::load(&resolve_data_path(model_path))?;
            let raw = read_delimited(&resolve_data_path(&args.data))?;
            let encoded = schema.encode(&raw)?;
            metric_report(
                &model,
                &encoded,
                &dataset_name(&args.data),
                &provenance.config_hash,
            )?
        }
        None => predictions_report(args)?,
    };
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    print!("{}", report.kv_block());
    if let Some(out) = &args.out {
        fs::write(out, report.kv_block())?;
    }
    if let Some(csv) = &args.csv {
        write_lines(csv, report_csv(std::slice::from_ref(&report)))?;
    }
    Ok(())
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let started = Instant::now();
    let (schema, train_enc) = fit_and_encode(&args.train, args.schema_config.as_ref(), None)?;
    let raw_test = read_delimited(&resolve_data_path(&args.test))?;
    let test_enc = schema.encode(&raw_test)?;
    let flag_train = TrainOverrides {
        epochs: args.epochs,
        seed: args.seed,
        lr: args.lr,
        batch_size: args.batch,
        ..Default::default()
    };
    let mut reports = Vec::new();
    for variant in variants() {
        let vstart = Instant::now();
        let plan = build_plan(
            &schema,
            Some(variant.name),
            None,
            &ModelOverrides::default(),
            &flag_train,
            None,
        )?;
        if !args.quiet {
            eprintln!("variant {} ({})", variant.name, variant.summary);
        }
        let (model, train_reports) = execute_plan(&plan, &train_enc, args.quiet)?;
        let mut report = metric_report(&model, &test_enc, variant.name, &config_hash(&plan.model))?;
        report.insert("n_towers", plan.model.tower_names().len() as f64);
        report.insert("members", model.n_members() as f64);
        report.insert("params_per_member", plan.model.parameter_count() as f64);
        if let Some(last) = train_reports.last().and_then(|r| r.epochs.last()) {
            report.insert("final_train_loss", last.train_loss);
        }
        report.wall_clock_secs = vstart.elapsed().as_secs_f64();
        println!("{}", report.kv_block());
        reports.push(report);
    }
    write_lines(&args.out, report_csv(&reports))?;
    println!(
        "ablation report written to {} ({} variants, {:.1}s)",
        args.out.display(),
        reports.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn split_rows(raw: &RawDataset, n_train: usize) -> (RawDataset, RawDataset) {
    let train = RawDataset {
        columns: raw.columns.clone(),
        rows: raw.rows[..n_train].to_vec(),
    };
    let test = RawDataset {
        columns: raw.columns.clone(),
        rows: raw.rows[n_train..].to_vec(),
    };
    (train, test)
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    if args.rows == 0 {
        return Err(Error::usage("--rows must be positive"));
    }
    let mut cfg = PlantedConfig::new(args.rows + args.test_rows, args.seed);
    if let Some(cards) = &args.cards {
        cfg.model.cardinalities = cards.clone();
    }
    if let Some(n) = args.numerics {
        cfg.model.n_numeric = n;
    }
    if let Some(d) = args.dim {
        cfg.model.dim = d;
    }
    if let Some(d) = args.depth {
        cfg.model.tower_depth = d;
    }
    if let Some(b) = args.scale_boost {
        cfg.scale_boost = b;
    }
    let data = datagen::generate(&cfg)?;
    let probs = datagen::probabilities_dataset(&data);
    fs::create_dir_all(&args.out_dir)?;
    let (train_raw, test_raw) = split_rows(&data.raw, args.rows);
    let (train_probs, test_probs) = split_rows(&probs, args.rows);
    write_delimited(&args.out_dir.join("planted.csv"), &train_raw)?;
    write_delimited(&args.out_dir.join("probs.csv"), &train_probs)?;
    let mut files = vec!["planted.csv", "probs.csv", "schema.toml"];
    if args.test_rows > 0 {
        write_delimited(&args.out_dir.join("planted_test.csv"), &test_raw)?;
        write_delimited(&args.out_dir.join("probs_test.csv"), &test_probs)?;
        files.splice(2..2, ["planted_test.csv", "probs_test.csv"]);
    }
    fs::write(
        args.out_dir.join("schema.toml"),
        datagen::planted_schema_config().to_toml_string(),
    )?;
    println!(
        "generated {} train + {} test rows in {} ({})",
        args.rows,
        args.test_rows,
        args.out_dir.display(),
        files.join(", ")
    );
    Ok(())
}

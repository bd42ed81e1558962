//! End-to-end tests for the `wmlff` binary: every subcommand, the exit-code
//! contract, and byte-level determinism of artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn wmlff() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wmlff"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn wmlff")
}

fn run_ok(cmd: &mut Command) -> String {
    let out = run(cmd);
    assert!(
        out.status.success(),
        "wmlff {:?} failed\nstdout:\n{}\nstderr:\n{}",
        cmd.get_args().collect::<Vec<_>>(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn kv_f64(report: &str, key: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no `{key}=` line in:\n{report}"))
        .trim()
        .parse()
        .unwrap_or_else(|e| panic!("bad `{key}` value: {e}"))
}

/// Writes a small planted dataset and returns its directory.
fn planted_fixture(dir: &Path) {
    run_ok(
        wmlff()
            .arg("generate")
            .args(["--rows", "400", "--test-rows", "200", "--seed", "3"])
            .arg("--out-dir")
            .arg(dir),
    );
}

fn train_planted(dir: &Path, model: &Path, extra: &[&str]) -> String {
    run_ok(
        wmlff()
            .arg("train")
            .arg("--data")
            .arg(dir.join("planted.csv"))
            .arg("--schema-config")
            .arg(dir.join("schema.toml"))
            .arg("--out")
            .arg(model)
            .args(["--epochs", "2", "--batch", "128", "--seed", "5", "--quiet"])
            .args(extra),
    )
}

/// Writes a miniature MovieLens 100k layout and returns its directory.
fn ml_fixture(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    fs::write(
        dir.join("u.user"),
        "1|24|M|technician|85711\n2|53|F|other|94043\n3|23|M|writer|32067\n4|33|F|artist|95443\n",
    )
    .unwrap();
    let genres = |flags: &[usize]| {
        (0..19)
            .map(|i| if flags.contains(&i) { "1" } else { "0" })
            .collect::<Vec<_>>()
            .join("|")
    };
    fs::write(
        dir.join("u.item"),
        format!(
            "1|Toy Story (1995)|01-Jan-1995||http://x|{}\n\
             2|GoldenEye (1995)|01-Jan-1995||http://x|{}\n\
             3|Four Rooms (1995)|01-Jan-1995||http://x|{}\n",
            genres(&[3, 4, 5]),
            genres(&[1, 2, 16]),
            genres(&[15]),
        ),
    )
    .unwrap();
    fs::write(
        dir.join("u.genre"),
        "unknown|0\nAction|1\nAdventure|2\nAnimation|3\nChildren's|4\nComedy|5\nCrime|6\n\
         Documentary|7\nDrama|8\nFantasy|9\nFilm-Noir|10\nHorror|11\nMusical|12\nMystery|13\n\
         Romance|14\nSci-Fi|15\nThriller|16\nWar|17\nWestern|18\n",
    )
    .unwrap();
    fs::write(
        dir.join("u1.base"),
        "1\t1\t5\t874965758\n1\t2\t3\t876893171\n2\t1\t4\t888550871\n2\t3\t1\t878542960\n\
         3\t2\t2\t876893119\n3\t3\t4\t889751712\n4\t1\t3\t875071561\n4\t2\t5\t875072484\n",
    )
    .unwrap();
    fs::write(dir.join("u1.test"), "1\t3\t4\t875073180\n2\t2\t3\t878542231\n").unwrap();
}

fn csv_columns(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn round_trip_through_every_subcommand() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    planted_fixture(dir);

    let schema_report = run_ok(
        wmlff()
            .arg("fit-schema")
            .arg("--data")
            .arg(dir.join("planted.csv"))
            .arg("--schema-config")
            .arg(dir.join("schema.toml")),
    );
    assert!(schema_report.contains("cardinalities="));
    assert!(schema_report.contains("role=label_click"));

    let model = dir.join("model.wmlff");
    let train_report = train_planted(dir, &model, &[]);
    assert!(train_report.contains("members=1"));
    assert!(train_report.contains("final_train_loss="));

    let preds = dir.join("preds.csv");
    run_ok(
        wmlff()
            .arg("predict")
            .arg("--model")
            .arg(&model)
            .arg("--data")
            .arg(dir.join("planted_test.csv"))
            .arg("--out")
            .arg(&preds),
    );
    let (header, rows) = csv_columns(&preds);
    assert_eq!(header, ["row_id", "p_click", "p_installed"]);
    assert_eq!(rows.len(), 200);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0], i.to_string());
        for cell in &row[1..] {
            let p: f64 = cell.parse().unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
    }

    let direct = run_ok(
        wmlff()
            .arg("evaluate")
            .arg("--model")
            .arg(&model)
            .arg("--data")
            .arg(dir.join("planted_test.csv")),
    );
    let from_file = run_ok(
        wmlff()
            .arg("evaluate")
            .arg("--predictions")
            .arg(&preds)
            .arg("--data")
            .arg(dir.join("planted_test.csv"))
            .arg("--schema-config")
            .arg(dir.join("schema.toml")),
    );
    for key in ["click_auc", "installed_auc", "joint_loss"] {
        let a = kv_f64(&direct, key);
        let b = kv_f64(&from_file, key);
        assert_eq!(a.to_bits(), b.to_bits(), "{key} differs between evaluate modes");
    }
}

#[test]
fn fitted_pipeline_reuse_matches_in_line_fitting() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    planted_fixture(dir);

    let schema_a = dir.join("schema_a.json");
    let schema_b = dir.join("schema_b.json");
    for out in [&schema_a, &schema_b] {
        run_ok(
            wmlff()
                .arg("fit-schema")
                .arg("--data")
                .arg(dir.join("planted.csv"))
                .arg("--schema-config")
                .arg(dir.join("schema.toml"))
                .arg("--out")
                .arg(out),
        );
    }
    assert_eq!(
        fs::read(&schema_a).unwrap(),
        fs::read(&schema_b).unwrap(),
        "fitting the same data twice must serialize identically"
    );

    let from_config = dir.join("from_config.wmlff");
    train_planted(dir, &from_config, &[]);
    let from_pipeline = dir.join("from_pipeline.wmlff");
    run_ok(
        wmlff()
            .arg("train")
            .arg("--data")
            .arg(dir.join("planted.csv"))
            .arg("--pipeline")
            .arg(&schema_a)
            .arg("--out")
            .arg(&from_pipeline)
            .args(["--epochs", "2", "--batch", "128", "--seed", "5", "--quiet"]),
    );
    assert_eq!(
        fs::read(&from_config).unwrap(),
        fs::read(&from_pipeline).unwrap(),
        "a reused pipeline must reproduce the in-line fit exactly"
    );
}

#[test]
fn training_and_prediction_are_deterministic() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    planted_fixture(dir);

    let first = dir.join("first.wmlff");
    let second = dir.join("second.wmlff");
    train_planted(dir, &first, &[]);
    train_planted(dir, &second, &[]);
    assert_eq!(
        fs::read(&first).unwrap(),
        fs::read(&second).unwrap(),
        "same seed, same container bytes"
    );

    let p1 = dir.join("p1.csv");
    let p2 = dir.join("p2.csv");
    for out in [&p1, &p2] {
        run_ok(
            wmlff()
                .arg("predict")
                .arg("--model")
                .arg(&first)
                .arg("--data")
                .arg(dir.join("planted_test.csv"))
                .arg("--out")
                .arg(out),
        );
    }
    assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
}

#[test]
fn kfold_flag_trains_an_ensemble() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    planted_fixture(dir);

    let model = dir.join("ensemble.wmlff");
    let report = train_planted(dir, &model, &["--kfold", "3"]);
    assert!(report.contains("members=3"), "report was:\n{report}");

    let scored = run_ok(
        wmlff()
            .arg("evaluate")
            .arg("--model")
            .arg(&model)
            .arg("--data")
            .arg(dir.join("planted_test.csv")),
    );
    assert!(kv_f64(&scored, "click_auc").is_finite());
}

#[test]
fn flags_override_config_files_and_variants() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    planted_fixture(dir);

    let config = dir.join("run.toml");
    fs::write(&config, "[model]\ndim = 4\n\n[train]\nepochs = 2\n").unwrap();

    let from_config = train_planted(dir, &dir.join("c.wmlff"), &["--config", config.to_str().unwrap()]);
    let overridden = train_planted(
        dir,
        &dir.join("o.wmlff"),
        &["--config", config.to_str().unwrap(), "--dim", "6"],
    );
    let flag_only = train_planted(dir, &dir.join("f.wmlff"), &["--dim", "6"]);
    assert_ne!(
        kv_f64(&from_config, "params_per_member"),
        kv_f64(&overridden, "params_per_member"),
        "the dim flag must beat the config file"
    );
    assert_eq!(
        kv_f64(&overridden, "params_per_member"),
        kv_f64(&flag_only, "params_per_member"),
    );

    let variant = train_planted(dir, &dir.join("v.wmlff"), &["--variant", "dim-64"]);
    let variant_overridden = train_planted(
        dir,
        &dir.join("vo.wmlff"),
        &["--variant", "dim-64", "--dim", "6"],
    );
    assert_ne!(
        kv_f64(&variant, "params_per_member"),
        kv_f64(&variant_overridden, "params_per_member"),
        "a flag must beat a variant preset"
    );
    assert_eq!(
        kv_f64(&variant_overridden, "params_per_member"),
        kv_f64(&flag_only, "params_per_member"),
    );
}

#[test]
fn movielens_adapter_round_trip() {
    let work = tempfile::tempdir().unwrap();
    let raw = work.path().join("ml-100k");
    ml_fixture(&raw);

    let plain = work.path().join("plain");
    run_ok(
        wmlff()
            .arg("adapt-movielens")
            .arg("--raw")
            .arg(&raw)
            .arg("--out-dir")
            .arg(&plain),
    );
    let (header, rows) = csv_columns(&plain.join("train.csv"));
    assert!(header.contains(&"user".to_string()));
    assert!(header.contains(&"age".to_string()));
    assert!(header.contains(&"genre_sci_fi".to_string()));
    assert!(header.contains(&"rating".to_string()));
    assert!(!header.contains(&"user_avg".to_string()));
    assert_eq!(header.iter().filter(|h| h.starts_with("genre_")).count(), 19);
    let male = header.iter().position(|h| h == "male").unwrap();
    let female = header.iter().position(|h| h == "female").unwrap();
    assert_eq!(rows.len(), 8);
    for row in &rows {
        let m: u8 = row[male].parse().unwrap();
        let f: u8 = row[female].parse().unwrap();
        assert_eq!(m + f, 1, "gender flags must be mutually exclusive");
    }

    // The adapted output must re-ingest cleanly: exit zero, no warnings.
    let ingest = run(wmlff()
        .arg("fit-schema")
        .arg("--data")
        .arg(plain.join("train.csv"))
        .arg("--schema-config")
        .arg(plain.join("schema.toml")));
    assert!(ingest.status.success());
    assert!(
        !stderr_of(&ingest).to_lowercase().contains("warning"),
        "re-ingesting the adapter output warned:\n{}",
        stderr_of(&ingest)
    );

    let biased = work.path().join("biased");
    run_ok(
        wmlff()
            .arg("adapt-movielens")
            .arg("--raw")
            .arg(&raw)
            .arg("--out-dir")
            .arg(&biased)
            .arg("--bias-stats"),
    );
    let (bheader, _) = csv_columns(&biased.join("train.csv"));
    for stat in ["user_avg", "user_pstd", "movie_avg", "movie_pstd"] {
        assert!(bheader.contains(&stat.to_string()), "missing {stat}");
    }

    let model = work.path().join("ml.wmlff");
    run_ok(
        wmlff()
            .arg("train")
            .arg("--data")
            .arg(biased.join("train.csv"))
            .arg("--schema-config")
            .arg(biased.join("schema.toml"))
            .arg("--out")
            .arg(&model)
            .args(["--dim", "4", "--epochs", "2", "--batch", "4", "--seed", "1", "--quiet"]),
    );
    let scored = run_ok(
        wmlff()
            .arg("evaluate")
            .arg("--model")
            .arg(&model)
            .arg("--data")
            .arg(biased.join("test.csv")),
    );
    let rmse = kv_f64(&scored, "rmse");
    assert!(rmse.is_finite() && rmse < 4.0);

    let preds = work.path().join("ratings.csv");
    run_ok(
        wmlff()
            .arg("predict")
            .arg("--model")
            .arg(&model)
            .arg("--data")
            .arg(biased.join("test.csv"))
            .arg("--out")
            .arg(&preds),
    );
    let (pheader, prows) = csv_columns(&preds);
    assert_eq!(pheader, ["row_id", "rating"]);
    for row in &prows {
        let r: f64 = row[1].parse().unwrap();
        assert!((1.0..=5.0).contains(&r), "rating {r} out of scale");
    }
}

#[test]
fn adapter_errors_name_the_expected_layout() {
    let work = tempfile::tempdir().unwrap();
    let raw = work.path().join("ml-100k");
    ml_fixture(&raw);
    fs::remove_file(raw.join("u.item")).unwrap();

    let out = run(wmlff()
        .arg("adapt-movielens")
        .arg("--raw")
        .arg(&raw)
        .arg("--out-dir")
        .arg(work.path().join("adapted")));
    assert_eq!(exit_code(&out), 2);
    let err = stderr_of(&out);
    assert!(err.contains("u.item"), "stderr was: {err}");
    assert!(
        err.contains("expected MovieLens 100k layout"),
        "the error should describe the layout: {err}"
    );
}

#[test]
fn subsample_is_seeded_and_validates_fraction() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    let input = dir.join("big.csv");
    let mut text = String::from("a,b,label\n");
    for i in 0..200 {
        text.push_str(&format!("{i},{},{}\n", i % 7, i % 2));
    }
    fs::write(&input, &text).unwrap();

    let s1 = dir.join("s1.csv");
    let s2 = dir.join("s2.csv");
    for out in [&s1, &s2] {
        run_ok(
            wmlff()
                .arg("subsample")
                .arg("--data")
                .arg(&input)
                .arg("--out")
                .arg(out)
                .args(["--fraction", "0.3", "--seed", "9"]),
        );
    }
    let kept = fs::read_to_string(&s1).unwrap();
    assert_eq!(kept, fs::read_to_string(&s2).unwrap());
    let n_kept = kept.lines().count() - 1;
    assert!(kept.starts_with("a,b,label\n"));
    assert!((30..=90).contains(&n_kept), "kept {n_kept} of 200 at 0.3");

    let empty = dir.join("none.csv");
    run_ok(
        wmlff()
            .arg("subsample")
            .arg("--data")
            .arg(&input)
            .arg("--out")
            .arg(&empty)
            .args(["--fraction", "0"]),
    );
    assert_eq!(fs::read_to_string(&empty).unwrap(), "a,b,label\n");

    let out = run(wmlff()
        .arg("subsample")
        .arg("--data")
        .arg(&input)
        .arg("--out")
        .arg(dir.join("bad.csv"))
        .args(["--fraction", "2.0"]));
    assert_eq!(exit_code(&out), 1, "an impossible fraction is a usage error");
}

#[test]
fn exit_codes_follow_the_contract() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    planted_fixture(dir);

    let usage = run(wmlff().arg("train").arg("--no-such-flag"));
    assert_eq!(exit_code(&usage), 1);

    let missing = run(wmlff()
        .arg("train")
        .arg("--data")
        .arg(dir.join("nowhere.csv"))
        .arg("--out")
        .arg(dir.join("m.wmlff")));
    assert_eq!(exit_code(&missing), 2);
    assert!(stderr_of(&missing).contains("nowhere.csv"));

    let variant = run(wmlff()
        .arg("train")
        .arg("--data")
        .arg(dir.join("planted.csv"))
        .arg("--schema-config")
        .arg(dir.join("schema.toml"))
        .arg("--out")
        .arg(dir.join("m.wmlff"))
        .args(["--variant", "bogus"]));
    assert_eq!(exit_code(&variant), 1);
    assert!(stderr_of(&variant).contains("original"), "should list variants");

    let neither = run(wmlff().arg("evaluate").arg("--data").arg(dir.join("planted.csv")));
    assert_eq!(exit_code(&neither), 1);

    let help = run(wmlff().arg("--help"));
    assert_eq!(exit_code(&help), 0);
}

#[test]
fn runaway_training_aborts_with_the_numerical_code() {
    let work = tempfile::tempdir().unwrap();
    let raw = work.path().join("ml-100k");
    ml_fixture(&raw);
    let adapted = work.path().join("adapted");
    run_ok(
        wmlff()
            .arg("adapt-movielens")
            .arg("--raw")
            .arg(&raw)
            .arg("--out-dir")
            .arg(&adapted),
    );

    let out = run(wmlff()
        .arg("train")
        .arg("--data")
        .arg(adapted.join("train.csv"))
        .arg("--schema-config")
        .arg(adapted.join("schema.toml"))
        .arg("--out")
        .arg(work.path().join("bomb.wmlff"))
        .args(["--output", "linear", "--loss", "mse"])
        .args(["--lr", "1e12", "--epochs", "3", "--batch", "4", "--quiet"]));
    assert_eq!(exit_code(&out), 3);
    let err = stderr_of(&out);
    assert!(err.contains("NaN"), "the abort should say what diverged: {err}");
    assert!(
        !work.path().join("bomb.wmlff").exists(),
        "a diverged run must not leave a container behind"
    );
}

#[test]
fn ablate_writes_a_complete_report() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    planted_fixture(dir);

    let out_csv = dir.join("ablation.csv");
    let stdout = run_ok(
        wmlff()
            .arg("ablate")
            .arg("--train")
            .arg(dir.join("planted.csv"))
            .arg("--test")
            .arg(dir.join("planted_test.csv"))
            .arg("--schema-config")
            .arg(dir.join("schema.toml"))
            .args(["--epochs", "1", "--batch", "256", "--seed", "2", "--quiet"])
            .arg("--out")
            .arg(&out_csv),
    );
    for name in ["original", "sigma-0.3", "adamw", "no-shared", "cosine", "kfold", "depth-6", "dim-64"] {
        assert!(stdout.contains(&format!("dataset={name}")), "missing {name}");
    }
    let (header, rows) = csv_columns(&out_csv);
    assert_eq!(rows.len(), 8);
    assert!(header.contains(&"n_towers".to_string()));
}

#[test]
fn data_directory_env_var_resolves_relative_paths() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    planted_fixture(dir);

    let report = run_ok(
        wmlff()
            .arg("fit-schema")
            .args(["--data", "planted.csv"])
            .arg("--schema-config")
            .arg(dir.join("schema.toml"))
            .env("WMLFF_DATA_DIR", dir),
    );
    assert!(report.contains("cardinalities="));
}

#[test]
fn predictions_depend_only_on_the_container() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    planted_fixture(dir);
    let model = dir.join("model.wmlff");
    train_planted(dir, &model, &[]);

    let moved = dir.join("copy").join("model.wmlff");
    fs::create_dir_all(moved.parent().unwrap()).unwrap();
    fs::copy(&model, &moved).unwrap();

    let a = dir.join("a.csv");
    let b = dir.join("b.csv");
    for (m, out) in [(&model, &a), (&moved, &b)] {
        run_ok(
            wmlff()
                .arg("predict")
                .arg("--model")
                .arg(m)
                .arg("--data")
                .arg(dir.join("planted_test.csv"))
                .arg("--out")
                .arg(out),
        );
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn generate_writes_matching_probability_files() {
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    planted_fixture(dir);

    for (data, probs, rows) in [
        ("planted.csv", "probs.csv", 400usize),
        ("planted_test.csv", "probs_test.csv", 200),
    ] {
        let (_, data_rows) = csv_columns(&dir.join(data));
        let (pheader, prows) = csv_columns(&dir.join(probs));
        assert_eq!(data_rows.len(), rows);
        assert_eq!(prows.len(), rows);
        assert_eq!(pheader, ["p_click", "p_install"]);
        for row in &prows {
            for cell in row {
                let p: f64 = cell.parse().unwrap();
                assert!((0.0..=1.0).contains(&p));
            }
        }
    }
}

#[test]
fn predict_append_extension_behavior_is_stable() {
    // A model path is used exactly as given; nothing invents extensions.
    let work = tempfile::tempdir().unwrap();
    let dir = work.path();
    planted_fixture(dir);
    let model: PathBuf = dir.join("plain-name");
    train_planted(dir, &model, &[]);
    assert!(model.exists());
}

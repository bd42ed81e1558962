//! MovieLens 100k adaptation and generic row subsampling.
//!
//! The 100k archive ships fixed splits as tab-separated
//! `user item rating timestamp` lines without a header, plus pipe-separated
//! side tables: `u.user` (id, age, gender, occupation, zip) and `u.item`
//! (id, title, dates, url, then one 0/1 flag per genre). `adapt-movielens`
//! joins a split pair against the side tables and writes headered CSV with
//! user, movie, age, and occupation categoricals, the genre flags, mutually
//! exclusive male/female binaries, and the rating label. `--bias-stats`
//! appends per-user and per-movie rating statistics computed on the
//! training split only; test rows look their statistics up from the
//! training table and fall back to the global values for unseen ids.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use wmlff_core::features::dataset::RawDataset;
use wmlff_core::features::{
    derive_bias_stats, write_delimited, BiasStats, DeclaredRole, SchemaConfig,
};
use wmlff_core::numerics::Rng;
use wmlff_core::{Error, Result};

use crate::cli::{AdaptArgs, SubsampleArgs};
use crate::commands::resolve_data_path;

const EXPECTED_LAYOUT: &str =
    "expected MovieLens 100k layout: {split}.base, {split}.test, u.user, u.item (and optionally u.genre)";

struct MlRating {
    user: String,
    movie: String,
    rating: f64,
}

struct MlUser {
    age: String,
    male: bool,
    occupation: String,
}

struct MlMovie {
    genres: Vec<bool>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}; {EXPECTED_LAYOUT}", path.display()),
        ))
    })
}

fn read_ml_ratings(path: &Path) -> Result<Vec<MlRating>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(user), Some(movie), Some(rating)) = (parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::Data {
                row: i + 1,
                msg: "expected user<TAB>item<TAB>rating<TAB>timestamp".into(),
            });
        };
        let rating: f64 = rating.trim().parse().map_err(|_| Error::Data {
            row: i + 1,
            msg: format!("bad rating {rating:?}"),
        })?;
        if !(1.0..=5.0).contains(&rating) {
            return Err(Error::Data {
                row: i + 1,
                msg: format!("rating {rating} outside 1..=5"),
            });
        }
        out.push(MlRating {
            user: user.to_string(),
            movie: movie.to_string(),
            rating,
        });
    }
    if out.is_empty() {
        return Err(Error::Data {
            row: 1,
            msg: format!("{}: no ratings found", path.display()),
        });
    }
    Ok(out)
}

fn read_ml_users(path: &Path) -> Result<BTreeMap<String, MlUser>> {
    let text = read_text(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() < 4 {
            return Err(Error::Data {
                row: i + 1,
                msg: "expected id|age|gender|occupation|zip".into(),
            });
        }
        let male = match fields[2] {
            "M" => true,
            "F" => false,
            other => {
                return Err(Error::Data {
                    row: i + 1,
                    msg: format!("gender {other:?} is not M or F"),
                })
            }
        };
        out.insert(
            fields[0].to_string(),
            MlUser {
                age: fields[1].to_string(),
                male,
                occupation: fields[3].to_string(),
            },
        );
    }
    Ok(out)
}

fn read_ml_movies(path: &Path) -> Result<(BTreeMap<String, MlMovie>, usize)> {
    let text = read_text(path)?;
    let mut out = BTreeMap::new();
    let mut n_genres = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() < 6 {
            return Err(Error::Data {
                row: i + 1,
                msg: "expected id|title|release|video|url|genre flags...".into(),
            });
        }
        let mut genres = Vec::with_capacity(fields.len() - 5);
        for flag in &fields[5..] {
            genres.push(match *flag {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Data {
                        row: i + 1,
                        msg: format!("genre flag {other:?} is not 0 or 1"),
                    })
                }
            });
        }
        if n_genres == 0 {
            n_genres = genres.len();
        } else if genres.len() != n_genres {
            return Err(Error::Data {
                row: i + 1,
                msg: format!("{} genre flags, earlier rows had {n_genres}", genres.len()),
            });
        }
        out.insert(fields[0].to_string(), MlMovie { genres });
    }
    if out.is_empty() {
        return Err(Error::Data {
            row: 1,
            msg: format!("{}: no movies found", path.display()),
        });
    }
    Ok((out, n_genres))
}

/// Genre column names from `u.genre` (`name|id` lines) when present and
/// consistent with the flag count, otherwise `genre_0..`.
fn genre_names(dir: &Path, n_genres: usize) -> Vec<String> {
    let fallback = || (0..n_genres).map(|i| format!("genre_{i}")).collect();
    let Ok(text) = fs::read_to_string(dir.join("u.genre")) else {
        return fallback();
    };
    let mut by_id: BTreeMap<usize, String> = BTreeMap::new();
    for line in text.lines() {
        let mut parts = line.split('|');
        let (Some(name), Some(id)) = (parts.next(), parts.next()) else {
            continue;
        };
        let Ok(id) = id.trim().parse::<usize>() else {
            continue;
        };
        let clean: String = name
            .trim()
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() {
                    c.to_ascii_lowercase()
                } else {
                    '_'
                }
            })
            .collect();
        by_id.insert(id, format!("genre_{clean}"));
    }
    if by_id.len() == n_genres && by_id.keys().copied().eq(0..n_genres) {
        by_id.into_values().collect()
    } else {
        fallback()
    }
}

const STAT_COLUMNS: [&str; 4] = ["user_avg", "user_pstd", "movie_avg", "movie_pstd"];

struct SideTables {
    users: BTreeMap<String, MlUser>,
    movies: BTreeMap<String, MlMovie>,
    genre_columns: Vec<String>,
}

fn adapted_dataset(
    rows: &[MlRating],
    side: &SideTables,
    stats: Option<&BiasStats>,
) -> Result<RawDataset> {
    let mut columns = vec![
        "user".to_string(),
        "movie".to_string(),
        "age".to_string(),
        "occupation".to_string(),
        "male".to_string(),
        "female".to_string(),
    ];
    columns.extend(side.genre_columns.iter().cloned());
    columns.push("rating".to_string());
    if stats.is_some() {
        columns.extend(STAT_COLUMNS.iter().map(|c| c.to_string()));
    }
    let flag = |b: bool| Some(if b { "1" } else { "0" }.to_string());
    let mut out_rows = Vec::with_capacity(rows.len());
    for r in rows {
        let user = side.users.get(&r.user).ok_or_else(|| {
            Error::schema(format!("rating references unknown user {:?}", r.user))
        })?;
        let movie = side.movies.get(&r.movie).ok_or_else(|| {
            Error::schema(format!("rating references unknown movie {:?}", r.movie))
        })?;
        let mut row = vec![
            Some(r.user.clone()),
            Some(r.movie.clone()),
            Some(user.age.clone()),
            Some(user.occupation.clone()),
            flag(user.male),
            flag(!user.male),
        ];
        row.extend(movie.genres.iter().map(|&g| flag(g)));
        row.push(Some(r.rating.to_string()));
        if let Some(stats) = stats {
            let u = stats.user(&r.user);
            let m = stats.item(&r.movie);
            row.extend([u.avg, u.pstd, m.avg, m.pstd].map(|v| Some(v.to_string())));
        }
        out_rows.push(row);
    }
    Ok(RawDataset {
        columns,
        rows: out_rows,
    })
}

fn adapted_schema(side: &SideTables, with_stats: bool) -> SchemaConfig {
    let mut schema = SchemaConfig::default();
    for c in ["user", "movie", "age", "occupation"] {
        schema.roles.insert(c.into(), DeclaredRole::HighCardCat);
    }
    for c in ["male", "female"] {
        schema.roles.insert(c.into(), DeclaredRole::Binary);
    }
    for c in &side.genre_columns {
        schema.roles.insert(c.clone(), DeclaredRole::Binary);
    }
    schema.roles.insert("rating".into(), DeclaredRole::LabelRating);
    if with_stats {
        for c in STAT_COLUMNS {
            schema.roles.insert(c.into(), DeclaredRole::Stat);
        }
    }
    schema
}

pub fn cmd_adapt(args: &AdaptArgs) -> Result<()> {
    let raw_dir = resolve_data_path(&args.raw);
    let train_rows = read_ml_ratings(&raw_dir.join(format!("{}.base", args.split)))?;
    let test_rows = read_ml_ratings(&raw_dir.join(format!("{}.test", args.split)))?;
    let users = read_ml_users(&raw_dir.join("u.user"))?;
    let (movies, n_genres) = read_ml_movies(&raw_dir.join("u.item"))?;
    let side = SideTables {
        users,
        movies,
        genre_columns: genre_names(&raw_dir, n_genres),
    };
    let stats = if args.bias_stats {
        let users: Vec<&str> = train_rows.iter().map(|r| r.user.as_str()).collect();
        let movies: Vec<&str> = train_rows.iter().map(|r| r.movie.as_str()).collect();
        let ratings: Vec<f64> = train_rows.iter().map(|r| r.rating).collect();
        Some(derive_bias_stats(
            &users,
            &movies,
            &ratings,
            args.bias_std_ratio,
            true,
        ))
    } else {
        None
    };
    fs::create_dir_all(&args.out_dir)?;
    write_delimited(
        &args.out_dir.join("train.csv"),
        &adapted_dataset(&train_rows, &side, stats.as_ref())?,
    )?;
    write_delimited(
        &args.out_dir.join("test.csv"),
        &adapted_dataset(&test_rows, &side, stats.as_ref())?,
    )?;
    let schema = adapted_schema(&side, stats.is_some());
    fs::write(args.out_dir.join("schema.toml"), schema.to_toml_string())?;
    println!(
        "adapted split {}: {} train + {} test ratings, {} genre flags{} in {}",
        args.split,
        train_rows.len(),
        test_rows.len(),
        side.genre_columns.len(),
        if args.bias_stats {
            ", bias statistics"
        } else {
            ""
        },
        args.out_dir.display()
    );
    Ok(())
}

pub fn cmd_subsample(args: &SubsampleArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.fraction) {
        return Err(Error::usage(format!(
            "--fraction {} is outside [0, 1]",
            args.fraction
        )));
    }
    let input = File::open(resolve_data_path(&args.data)).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", args.data.display()),
        ))
    })?;
    let mut lines = BufReader::new(input).lines();
    let mut out = BufWriter::new(File::create(&args.out)?);
    if !args.no_header {
        match lines.next() {
            Some(header) => writeln!(out, "{}", header?)?,
            None => return Err(Error::usage("input file is empty")),
        }
    }
    let mut rng = Rng::new(args.seed);
    let (mut kept, mut seen) = (0usize, 0usize);
    for line in lines {
        let line = line?;
        seen += 1;
        if rng.bernoulli(args.fraction) {
            writeln!(out, "{line}")?;
            kept += 1;
        }
    }
    out.flush()?;
    println!("kept {kept} of {seen} rows in {}", args.out.display());
    Ok(())
}

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;
use rayon::prelude::*;

use hybrec::cf::{als_train, build_rating_matrix_with, FactorModel};
use hybrec::eval::{run_experiment, ExperimentSpec, ReportFormat, RosterEntry};
use hybrec::fsio::{self, write_atomic};
use hybrec::hybrid::{
    purchased_items, recommend_bm, recommend_cf_only, recommend_hybrid, write_recommendations_csv,
    write_recommendations_json, HybridConfig, PaymentPredictor, Ranker, RankerKind, Recommendation,
};
use hybrec::ingest::{
    dataset_stats, generate_synthetic, parse_transactions, write_transactions, BehaviorType, Hour,
    Schema, Transaction,
};
use hybrec::segment::{
    assign_item_groups, assign_user_groups, compute_features_with, write_assignments, Axis,
};
use hybrec::seqdb::{
    build_candidate_sequences, build_sequences, length_histogram, SequenceDatabase,
};
use hybrec::spm::{Miner, PatternStore};

use crate::config::PipelineConfig;
use crate::provenance::{self, check, header, write_sidecar};
use crate::{AlsArgs, Arm, Cli, Command, HybridArgs, MiningArgs, RecFormat, WindowArgs};

const STORE_EXT: &str = "patterns";

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    let force = cli.force;
    match cli.command {
        Command::Generate(a) => {
            let s = &mut cfg.synthetic;
            set(&mut s.n_users, a.users);
            set(&mut s.n_items, a.items);
            set(&mut s.n_categories, a.categories);
            set(&mut s.n_days, a.days);
            set(&mut s.seed, a.seed);
            set(&mut s.noise_rate, a.noise);
            // A pattern given on the command line, or a changed category count,
            // plants one copy per category.
            let template = s.planted_patterns.first().cloned();
            let events = match &a.pattern {
                Some(p) => Some(parse_pattern(p)?),
                None => template.as_ref().map(|t| t.events.clone()),
            };
            if a.pattern.is_some() || a.categories.is_some() || a.probability.is_some() {
                if let Some(events) = events {
                    let probability = a
                        .probability
                        .or(template.map(|t| t.probability))
                        .unwrap_or(0.4);
                    *s = s.clone().with_pattern_per_category(&events, probability);
                }
            }
            let out = require(a.out, &cfg.paths.log, "--out")?;
            let log = generate_synthetic(&cfg.synthetic)?;
            let mut bytes = Vec::new();
            write_transactions(&mut bytes, &log, &Schema::competition())?;
            write_atomic(&out, &bytes)?;
            write_sidecar(
                &out,
                "generate",
                &cfg,
                Some(&provenance::fingerprint(&cfg.synthetic)),
            )?;
            eprintln!("wrote {} transactions to {}", log.len(), out.display());
        }
        Command::Ingest(a) => {
            let log_path = require(a.log, &cfg.paths.log, "--log")?;
            let schema: Schema = a.schema.parse().map_err(|e| anyhow!("--schema: {e}"))?;
            let log = read_log_with(&log_path, &schema)?;
            let mut text = serde_json::to_string_pretty(&dataset_stats(&log))?;
            text.push('\n');
            emit(a.out.as_deref(), &text)?;
        }
        Command::Sequences(a) => {
            apply_window(&mut cfg, &a.window);
            let log = training_log(&require(a.log, &cfg.paths.log, "--log")?, cfg.target_day)?;
            let out = require(a.out, &cfg.paths.sequences, "--out")?;
            let hash = provenance::sequences_hash(&cfg);
            let (db, kind) = if a.candidates {
                let day = cfg.target_day.context("--candidates needs --target-day")?;
                (
                    build_candidate_sequences(&log, &cfg.window, Hour::start_of(day))?,
                    "candidates",
                )
            } else {
                (build_sequences(&log, &cfg.window)?, "anchored")
            };
            db.write(&out, &header(&hash).with("kind", kind))?;
            write_sidecar(&out, "sequences", &cfg, Some(&hash))?;
            eprintln!(
                "wrote {} {kind} sequences ({} events) to {}",
                db.len(),
                db.total_events(),
                out.display()
            );
            if let Some(width) = a.histogram {
                let buckets: Vec<_> = length_histogram(&db, width)?
                    .into_iter()
                    .map(|(b, n)| serde_json::json!({ "lo": b.lo, "hi": b.hi, "count": n }))
                    .collect();
                println!("{}", serde_json::to_string(&buckets)?);
            }
        }
        Command::Mine(a) => {
            apply_window(&mut cfg, &a.window);
            apply_mining(&mut cfg, &a.mining);
            let seq_path = require(a.sequences, &cfg.paths.sequences, "--sequences")?;
            let out = require(a.out, &cfg.paths.patterns, "--out")?;
            let (seq_header, db) = SequenceDatabase::read(&seq_path)?;
            check(
                &seq_path,
                &seq_header,
                &provenance::sequences_hash(&cfg),
                "sequences",
                force,
            )?;
            if seq_header.get("kind") == Some("candidates") {
                bail!(
                    "{}: candidate sequences cannot be mined",
                    seq_path.display()
                );
            }
            let hash = provenance::patterns_hash(&cfg);
            let miner = cfg.hybrid.miner;
            if cfg.hybrid.per_category {
                std::fs::create_dir_all(&out).with_context(|| out.display().to_string())?;
                let mut by_category: BTreeMap<String, Vec<_>> = BTreeMap::new();
                for s in db.iter() {
                    by_category
                        .entry(s.category_id.clone())
                        .or_default()
                        .push(s.clone());
                }
                let mut total = 0;
                for (cat, seqs) in by_category {
                    let sub = SequenceDatabase::new(seqs);
                    let store = miner.mine(&sub, cfg.min_support.resolve(sub.len())?);
                    total += store.len();
                    let path = out.join(format!("{cat}.{STORE_EXT}"));
                    store.write(&path, &store_header(&hash, miner).with("category", &cat))?;
                }
                eprintln!("mined {total} patterns into {}", out.display());
            } else {
                let min_support = cfg.min_support.resolve(db.len())?;
                let store = miner.mine(&db, min_support);
                store.write(&out, &store_header(&hash, miner))?;
                eprintln!(
                    "mined {} patterns (min_support {min_support}) into {}",
                    store.len(),
                    out.display()
                );
            }
            write_sidecar(&out, "mine", &cfg, Some(&hash))?;
        }
        Command::Train(a) => {
            set_opt(&mut cfg.target_day, a.target_day);
            apply_als(&mut cfg, &a.als);
            let log = training_log(&require(a.log, &cfg.paths.log, "--log")?, cfg.target_day)?;
            let out = require(a.out, &cfg.paths.model, "--out")?;
            let matrix = build_rating_matrix_with(&log, cfg.aggregation);
            let model = als_train(&matrix, &cfg.als)?;
            let hash = provenance::model_hash(&cfg);
            model.write(&out, &header(&hash))?;
            write_sidecar(&out, "train", &cfg, Some(&hash))?;
            eprintln!(
                "trained {} users x {} items, objective {:.6}, into {}",
                matrix.n_users(),
                matrix.n_items(),
                model.final_objective().unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Recommend(a) => {
            apply_window(&mut cfg, &a.window);
            apply_mining(&mut cfg, &a.mining);
            apply_als(&mut cfg, &a.als);
            apply_hybrid(&mut cfg, &a.hybrid);
            cfg.hybrid.validate()?;
            let day = cfg.target_day.context("recommend needs --target-day")?;
            let log = training_log(&require(a.log, &cfg.paths.log, "--log")?, Some(day))?;
            let out = require(a.out, &cfg.paths.recommendations, "--out")?;
            let recs = recommend(&cfg, a.arm, &log, day, a.patterns, a.model, force)?;
            let mut bytes = Vec::new();
            match a.format {
                RecFormat::Json => write_recommendations_json(&mut bytes, &recs)?,
                RecFormat::Csv => write_recommendations_csv(&mut bytes, &recs)?,
            }
            write_atomic(&out, &bytes)?;
            write_sidecar(&out, "recommend", &cfg, None)?;
            let served = recs.iter().filter(|r| !r.items.is_empty()).count();
            eprintln!(
                "recommended for {served} of {} users into {}",
                recs.len(),
                out.display()
            );
        }
        Command::Segment(a) => {
            set_opt(&mut cfg.target_day, a.target_day);
            set(&mut cfg.segmentation.exploration, a.exploration);
            let log = training_log(&require(a.log, &cfg.paths.log, "--log")?, cfg.target_day)?;
            let features = compute_features_with(&log, a.axis, cfg.segmentation.exploration);
            let groups = match a.axis {
                Axis::User => assign_user_groups(&features, &cfg.segmentation.user_boundaries)?,
                Axis::Item => assign_item_groups(&features, &cfg.segmentation.item_bands),
            };
            let mut bytes = Vec::new();
            write_assignments(&mut bytes, &features, &groups)?;
            emit(a.out.as_deref(), &String::from_utf8(bytes)?)?;
            if let Some(out) = &a.out {
                write_sidecar(out, "segment", &cfg, None)?;
            }
        }
        Command::Evaluate(a) => {
            apply_window(&mut cfg, &a.window);
            apply_mining(&mut cfg, &a.mining);
            apply_als(&mut cfg, &a.als);
            apply_hybrid(&mut cfg, &a.hybrid);
            if let Some(r) = a.roster {
                cfg.roster = r;
            }
            let day = cfg.target_day.context("evaluate needs --target-day")?;
            let log = read_log(&require(a.log, &cfg.paths.log, "--log")?)?;
            let spec = ExperimentSpec {
                target_day: day,
                window: cfg.window,
                min_support: cfg.min_support,
                als: cfg.als,
                aggregation: cfg.aggregation,
                segmentation: cfg.segmentation.clone(),
                roster: cfg
                    .roster
                    .iter()
                    .map(|n| roster_entry(&cfg, n))
                    .collect::<Result<_>>()?,
            };
            let report = run_experiment(&log, &spec)?;
            let out = a.out.or(cfg.paths.report.clone());
            if let Some(out) = &out {
                let format = a.format.unwrap_or_else(|| format_for(out));
                write_atomic(out, report.render(format).as_bytes())?;
                write_sidecar(out, "evaluate", &cfg, None)?;
            }
            print!("{}", report.to_table());
        }
    }
    Ok(())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn apply_window(cfg: &mut PipelineConfig, a: &WindowArgs) {
    set(&mut cfg.window.window_days, a.window_days);
    if a.exclude_anchor_day {
        cfg.window.include_anchor_day = false;
    }
    set_opt(&mut cfg.target_day, a.target_day);
}

fn apply_mining(cfg: &mut PipelineConfig, a: &MiningArgs) {
    set(&mut cfg.min_support, a.min_support);
    set(&mut cfg.hybrid.miner, a.miner);
    if a.per_category {
        cfg.hybrid.per_category = true;
    }
}

fn apply_als(cfg: &mut PipelineConfig, a: &AlsArgs) {
    set(&mut cfg.als.factors, a.factors);
    set(&mut cfg.als.lambda, a.lambda);
    set(&mut cfg.als.iterations, a.iterations);
    set(&mut cfg.als.seed, a.seed);
    set(&mut cfg.aggregation, a.aggregation);
}

fn apply_hybrid(cfg: &mut PipelineConfig, a: &HybridArgs) {
    let h = &mut cfg.hybrid;
    set(&mut h.n, a.n);
    set(&mut h.p_min, a.p_min);
    set(&mut h.ranker, a.ranker);
    set(&mut h.nncf_k, a.nncf_k);
    set(&mut h.strategy, a.strategy);
    h.multi_category |= a.multi_category;
    h.fallback_topn |= a.fallback_topn;
    h.allow_repurchase |= a.allow_repurchase;
}

fn require(flag: Option<PathBuf>, from_config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| from_config.clone()).ok_or_else(|| {
        anyhow!("missing {name} (or the matching entry under \"paths\" in the config)")
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => Ok(write_atomic(p, text.as_bytes())?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_pattern(s: &str) -> Result<Vec<BehaviorType>> {
    s.split(',')
        .map(|c| {
            c.trim()
                .parse::<u8>()
                .ok()
                .and_then(BehaviorType::from_code)
                .ok_or_else(|| anyhow!("--pattern: bad behavior code {c:?}"))
        })
        .collect()
}

fn read_log_with(path: &Path, schema: &Schema) -> Result<Vec<Transaction>> {
    let file = std::fs::File::open(path).with_context(|| path.display().to_string())?;
    parse_transactions(std::io::BufReader::new(file), schema)
        .with_context(|| path.display().to_string())
}

fn read_log(path: &Path) -> Result<Vec<Transaction>> {
    read_log_with(path, &Schema::competition())
}

/// The log restricted to events strictly before `target_day`, when set.
fn training_log(path: &Path, target_day: Option<NaiveDate>) -> Result<Vec<Transaction>> {
    let mut log = read_log(path)?;
    if let Some(day) = target_day {
        let cutoff = Hour::start_of(day);
        log.retain(|t| t.timestamp < cutoff);
    }
    Ok(log)
}

fn store_header(hash: &str, miner: Miner) -> fsio::Header {
    header(hash).with("miner", miner)
}

fn load_predictor(cfg: &PipelineConfig, path: &Path, force: bool) -> Result<PaymentPredictor> {
    let expected = provenance::patterns_hash(cfg);
    if path.is_dir() {
        let mut stores = BTreeMap::new();
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| path.display().to_string())?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        entries.sort();
        for p in entries
            .into_iter()
            .filter(|p| p.extension().is_some_and(|e| e == STORE_EXT))
        {
            let (h, store) = PatternStore::read(&p)?;
            check(&p, &h, &expected, "mine", force)?;
            let cat = h
                .get("category")
                .map(str::to_string)
                .ok_or_else(|| anyhow!("{}: no category header", p.display()))?;
            stores.insert(cat, store);
        }
        Ok(PaymentPredictor::per_category(
            &stores,
            cfg.hybrid.strategy,
        )?)
    } else {
        let (h, store) = PatternStore::read(path)?;
        check(path, &h, &expected, "mine", force)?;
        Ok(PaymentPredictor::global(&store, cfg.hybrid.strategy)?)
    }
}

fn load_model(cfg: &PipelineConfig, path: &Path, force: bool) -> Result<FactorModel> {
    let (h, model) = FactorModel::read(path)?;
    check(path, &h, &provenance::model_hash(cfg), "train", force)?;
    Ok(model)
}

fn recommend(
    cfg: &PipelineConfig,
    arm: Arm,
    log: &[Transaction],
    day: NaiveDate,
    patterns: Option<PathBuf>,
    model: Option<PathBuf>,
    force: bool,
) -> Result<Vec<Recommendation>> {
    let mut by_user: BTreeMap<&str, Vec<Transaction>> = BTreeMap::new();
    for t in log {
        by_user
            .entry(t.user_id.as_str())
            .or_default()
            .push(t.clone());
    }
    let users: Vec<&str> = by_user.keys().copied().collect();
    if arm == Arm::Bm {
        return Ok(users
            .par_iter()
            .map(|u| {
                recommend_bm(
                    u,
                    &by_user[u],
                    day,
                    cfg.window.window_days,
                    cfg.bm_n.unwrap_or(cfg.hybrid.n),
                )
            })
            .collect());
    }

    let h = &cfg.hybrid;
    let matrix;
    let factor_model;
    let ranker = match h.ranker {
        RankerKind::Mfcf => {
            let path = require(model, &cfg.paths.model, "--model")?;
            factor_model = load_model(cfg, &path, force)?;
            Ranker::Mf(&factor_model)
        }
        RankerKind::Nncf => {
            matrix = build_rating_matrix_with(log, cfg.aggregation);
            Ranker::Nn {
                matrix: &matrix,
                k: h.nncf_k,
            }
        }
    };
    let purchased = purchased_items(log);
    let none = HashSet::new();
    let exclusions = |u: &str| {
        if h.allow_repurchase {
            &none
        } else {
            purchased.get(u).unwrap_or(&none)
        }
    };

    if arm == Arm::Cf {
        return users
            .par_iter()
            .map(|u| Ok(recommend_cf_only(u, ranker, h.n, exclusions(u))?))
            .collect();
    }

    let predictor = load_predictor(
        cfg,
        &require(patterns, &cfg.paths.patterns, "--patterns")?,
        force,
    )?;
    let mut candidates: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for s in build_candidate_sequences(log, &cfg.window, Hour::start_of(day))?.sequences {
        candidates.entry(s.user_id.clone()).or_default().push(s);
    }
    users
        .par_iter()
        .map(|u| {
            let cands = candidates.get(*u).map_or(&[][..], Vec::as_slice);
            Ok(recommend_hybrid(
                u,
                cands,
                &predictor,
                ranker,
                exclusions(u),
                h,
            )?)
        })
        .collect()
}

fn roster_entry(cfg: &PipelineConfig, name: &str) -> Result<RosterEntry> {
    let base = cfg.hybrid.clone();
    let with = |miner: Miner, ranker: RankerKind| HybridConfig {
        miner,
        ranker,
        ..base.clone()
    };
    Ok(match name {
        "bm" => RosterEntry::bm(name, cfg.bm_n.unwrap_or(base.n)),
        "hm" => RosterEntry::hybrid(name, base.clone()),
        "hm-gsp" => RosterEntry::hybrid(name, with(Miner::Gsp, base.ranker)),
        "hm-nncf" => RosterEntry::hybrid(name, with(base.miner, RankerKind::Nncf)),
        "cf" => RosterEntry::cf_only(name, with(base.miner, RankerKind::Mfcf)),
        "cf-nncf" => RosterEntry::cf_only(name, with(base.miner, RankerKind::Nncf)),
        _ => bail!(
            "--roster: unknown model {name:?} (expected bm, hm, hm-gsp, hm-nncf, cf, cf-nncf)"
        ),
    })
}

fn format_for(path: &Path) -> ReportFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => ReportFormat::Json,
        Some("csv") => ReportFormat::Csv,
        _ => ReportFormat::Table,
    }
}

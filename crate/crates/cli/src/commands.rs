//! Subcommand definitions and handlers.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use vpg_core::config::{world_config_from_kv, EngineConfig, KvConfig};
use vpg_core::engine::{
    evaluate_retrieval_files, forward_result_to_json, generate_world_files, prediction_from_result,
    read_detection_cases, reverse_result_to_json, Engine,
};
use vpg_core::error::{Result, VpgError};
use vpg_core::eval::{mean_average_precision, recall_at_precision};
use vpg_core::forward::{Gender, UserContext};
use vpg_core::index::{filter_config_from_kv, FilterConfig};
use vpg_core::jsonl::{read_jsonl, JsonlWriter};
use vpg_core::triplets::{
    assemble_dataset, filter_hard, ground_truth_oracle, label_triplets, mine_candidate_triplets,
    EngagementLogJson, HardnessRule, RandomPool, TripletRecordJson,
};
use vpg_core::types::{Embedding, ImageSignature, Taxonomy};

use crate::logging;

#[derive(Parser)]
#[command(name = "vpg", version, about = "Visual product graph engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args)]
pub struct EngineArgs {
    /// Engine configuration file (key = value lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Feature store directory (overrides config).
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Index directory (overrides config).
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Extra `key=value` config overrides; flags win over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

impl EngineArgs {
    pub fn resolve(&self) -> Result<EngineConfig> {
        let mut config = match &self.config {
            Some(path) => EngineConfig::from_file(path)?,
            None => EngineConfig::default(),
        };
        let mut overrides: Vec<(String, String)> = Vec::new();
        if let Some(store) = &self.store {
            overrides.push(("store_dir".into(), store.display().to_string()));
        }
        if let Some(index) = &self.index {
            overrides.push(("index_dir".into(), index.display().to_string()));
        }
        for set in &self.sets {
            match set.split_once('=') {
                Some((k, v)) => overrides.push((k.trim().into(), v.trim().into())),
                None => {
                    return Err(VpgError::InvalidArgument(format!(
                        "--set expects KEY=VALUE, got {set:?}"
                    )))
                }
            }
        }
        config = config.apply_overrides(&overrides)?;
        Ok(config)
    }
}

#[derive(Subcommand)]
pub enum Command {
    /// Synthetic world generation.
    Synth {
        #[command(subcommand)]
        command: SynthCommand,
    },
    /// Feature store operations.
    Store {
        #[command(subcommand)]
        command: StoreCommand,
    },
    /// Product catalog operations.
    Products {
        #[command(subcommand)]
        command: ProductsCommand,
    },
    /// Index lifecycle.
    Index {
        #[command(subcommand)]
        command: IndexCommand,
    },
    /// Calibrate the reverse-path relevance threshold.
    Calibrate {
        #[command(flatten)]
        engine: EngineArgs,
        /// Percentile of the pooled top-5 score distribution.
        #[arg(long)]
        percentile: Option<f64>,
        /// Calibration sample size (catalog products).
        #[arg(long)]
        sample: Option<usize>,
    },
    /// Retrieval queries.
    Query {
        #[command(subcommand)]
        command: QueryCommand,
    },
    /// Hard-triplet mining.
    Triplets {
        #[command(subcommand)]
        command: TripletsCommand,
    },
    /// Offline evaluation.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Run the HTTP query service.
    Serve {
        #[command(flatten)]
        engine: EngineArgs,
        /// Bind address override.
        #[arg(long)]
        bind: Option<String>,
        /// Port override.
        #[arg(long)]
        port: Option<u16>,
    },
}

#[derive(Subcommand)]
pub enum SynthCommand {
    /// Generate a synthetic corpus to JSONL files.
    Generate {
        /// World config (key = value: seed, dimension, products, scenes,
        /// noise_sigma, ...).
        #[arg(long)]
        config: PathBuf,
        /// Scene ingestion records output.
        #[arg(long)]
        out: PathBuf,
        /// Product catalog output.
        #[arg(long)]
        products: PathBuf,
        /// Ground-truth sidecar output (for `eval retrieval`).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
pub enum StoreCommand {
    /// Bulk-load scene records.
    Backfill {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        store: PathBuf,
    },
    /// Store statistics.
    Stats {
        #[arg(long)]
        store: PathBuf,
    },
}

#[derive(Subcommand)]
pub enum ProductsCommand {
    /// Append product records to the catalog and backfill their embeddings.
    Append {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        store: PathBuf,
    },
}

#[derive(Subcommand)]
pub enum IndexCommand {
    /// Filter the corpus, pivot to objects, and build both ANN indexes.
    Build {
        #[command(flatten)]
        engine: EngineArgs,
        /// Corpus filter thresholds (key = value file).
        #[arg(long)]
        filters: Option<PathBuf>,
        /// Where to write the indexes (overrides config index_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Filter report JSON output.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
pub enum QueryCommand {
    /// Product-to-scenes retrieval.
    Reverse {
        #[command(flatten)]
        engine: EngineArgs,
        /// Query product signature (hex).
        #[arg(long, required_unless_present = "all")]
        product: Option<String>,
        /// Calibration file override (defaults to the one saved next to the
        /// indexes).
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Query every catalog product and write predictions JSONL.
        #[arg(long)]
        all: bool,
        /// Predictions output for --all.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scene-to-products retrieval.
    Forward {
        #[command(flatten)]
        engine: EngineArgs,
        /// Query scene signature (hex).
        #[arg(long)]
        scene: String,
        /// User context, e.g. `gender=f,country=US`.
        #[arg(long, default_value = "")]
        ctx: String,
    },
}

#[derive(Subcommand)]
pub enum TripletsCommand {
    /// Mine, harden, label, and assemble a triplet dataset.
    Mine {
        #[command(flatten)]
        engine: EngineArgs,
        /// Engagement logs JSONL.
        #[arg(long)]
        logs: PathBuf,
        /// Output triplets JSONL.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        hard_fraction: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Dataset size; defaults to hard_count / hard_fraction.
        #[arg(long)]
        target: Option<usize>,
        /// Log window in days.
        #[arg(long, default_value_t = 30)]
        window_days: u32,
        /// Use the literal pseudocode comparator instead of the
        /// negative-closer rule.
        #[arg(long)]
        literal_comparator: bool,
    },
}

#[derive(Subcommand)]
pub enum EvalCommand {
    /// Rated-retrieval precision against a ground-truth sidecar.
    Retrieval {
        /// Predictions JSONL ({"query", "results"}).
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth sidecar JSONL from `synth generate --truth`.
        #[arg(long)]
        truth: PathBuf,
        /// Comma-separated k values.
        #[arg(long, default_value = "1,5")]
        k: String,
    },
    /// Detection mAP and R@P90 over evaluation cases.
    Detection {
        /// Cases JSONL ({"ground_truth", "predictions"}).
        #[arg(long)]
        cases: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, default_value_t = 0.9)]
        precision_floor: f64,
    },
}

fn parse_ctx(raw: &str) -> Result<UserContext> {
    let mut gender = Gender::Unspecified;
    let mut country = String::new();
    for part in raw.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match part.split_once('=') {
            Some(("gender", v)) => gender = v.parse()?,
            Some(("country", v)) => country = v.to_string(),
            _ => {
                return Err(VpgError::InvalidArgument(format!(
                    "bad ctx component {part:?}, want gender=..,country=.."
                )))
            }
        }
    }
    Ok(UserContext::new(gender, &country))
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { command } => match command {
            SynthCommand::Generate {
                config,
                out,
                products,
                truth,
            } => {
                let kv = KvConfig::from_file(&config)?;
                let world = world_config_from_kv(&kv)?;
                let (scenes, product_count) =
                    generate_world_files(world, &out, &products, truth.as_deref())?;
                logging::info(
                    "synth_generate",
                    &[
                        ("scenes", &scenes.to_string()),
                        ("products", &product_count.to_string()),
                    ],
                );
                print_json(&serde_json::json!({
                    "scenes": scenes,
                    "products": product_count,
                    "out": out.display().to_string(),
                }))
            }
        },
        Command::Store { command } => match command {
            StoreCommand::Backfill { input, store } => {
                let config = EngineConfig {
                    store_dir: store,
                    ..EngineConfig::default()
                };
                let engine = Engine::open(config)?;
                let written = engine.backfill_file(&input)?;
                logging::info("backfill", &[("written", &written.to_string())]);
                print_json(&serde_json::json!({ "written": written }))
            }
            StoreCommand::Stats { store } => {
                let config = EngineConfig {
                    store_dir: store,
                    ..EngineConfig::default()
                };
                let engine = Engine::open(config)?;
                let m = engine.metrics();
                print_json(&serde_json::to_value(&m)?)
            }
        },
        Command::Products { command } => match command {
            ProductsCommand::Append { input, store } => {
                let config = EngineConfig {
                    store_dir: store,
                    ..EngineConfig::default()
                };
                let mut engine = Engine::open(config)?;
                let appended = engine.append_products_file(&input)?;
                logging::info("products_append", &[("appended", &appended.to_string())]);
                print_json(&serde_json::json!({ "appended": appended }))
            }
        },
        Command::Index { command } => match command {
            IndexCommand::Build {
                engine,
                filters,
                out,
                report,
            } => {
                let mut config = engine.resolve()?;
                if let Some(out) = out {
                    config.index_dir = out;
                }
                let mut engine = Engine::open(config)?;
                let filter_config = match filters {
                    Some(path) => {
                        let kv = KvConfig::from_file(&path)?;
                        filter_config_from_kv(&kv, engine.taxonomy())?
                    }
                    None => FilterConfig::default(),
                };
                let build = engine.build_indexes(&filter_config)?;
                logging::info(
                    "index_build",
                    &[
                        ("objects", &build.objects_indexed.to_string()),
                        ("products", &build.products_indexed.to_string()),
                        ("kept_scenes", &build.filter.kept_count.to_string()),
                    ],
                );
                let json = serde_json::to_value(&build)?;
                if let Some(report_path) = report {
                    std::fs::write(&report_path, serde_json::to_vec_pretty(&json)?)?;
                }
                print_json(&json)
            }
        },
        Command::Calibrate {
            engine,
            percentile,
            sample,
        } => {
            let mut config = engine.resolve()?;
            if let Some(p) = percentile {
                config.relevance.percentile = p;
            }
            if let Some(s) = sample {
                config.relevance.calibration_size = s;
            }
            config.validate()?;
            let mut engine = Engine::open(config)?;
            let cal = engine.calibrate()?;
            logging::info("calibrate", &[("threshold", &cal.threshold.to_string())]);
            print_json(&serde_json::to_value(cal)?)
        }
        Command::Query { command } => match command {
            QueryCommand::Reverse {
                engine,
                product,
                calibration,
                all,
                out,
            } => {
                let config = engine.resolve()?;
                let mut engine = Engine::open(config)?;
                if let Some(path) = calibration {
                    engine.set_calibration(vpg_core::reverse::RelevanceCalibration::load(path)?);
                }
                if all {
                    let out = out
                        .ok_or_else(|| VpgError::InvalidArgument("--all requires --out".into()))?;
                    let mut writer = JsonlWriter::create(&out)?;
                    let mut queries = 0u64;
                    let products: Vec<ImageSignature> =
                        engine.catalog().iter().map(|p| p.signature).collect();
                    for sig in products {
                        let result = engine.reverse_query(&sig)?;
                        writer.write(&prediction_from_result(&result))?;
                        queries += 1;
                    }
                    writer.finish()?;
                    print_json(&serde_json::json!({ "queries": queries }))
                } else {
                    let sig: ImageSignature = product
                        .as_deref()
                        .ok_or_else(|| VpgError::InvalidArgument("--product required".into()))?
                        .parse()?;
                    let result = engine.reverse_query(&sig)?;
                    print_json(&reverse_result_to_json(&result))
                }
            }
            QueryCommand::Forward { engine, scene, ctx } => {
                let config = engine.resolve()?;
                let engine = Engine::open(config)?;
                let sig: ImageSignature = scene.parse()?;
                let ctx = parse_ctx(&ctx)?;
                let (products, cached) = engine.forward_query(&sig, &ctx)?;
                print_json(&forward_result_to_json(&sig, &ctx, &products, cached))
            }
        },
        Command::Triplets { command } => match command {
            TripletsCommand::Mine {
                engine,
                logs,
                out,
                hard_fraction,
                seed,
                target,
                window_days,
                literal_comparator,
            } => {
                let config = engine.resolve()?;
                let engine = Engine::open(config)?;
                let taxonomy = engine.taxonomy().clone();
                let world = engine.world().ok_or_else(|| {
                    VpgError::InvalidArgument(
                        "triplet mining needs world.* config for the labeling oracle".into(),
                    )
                })?;

                let mut rows = Vec::new();
                for item in read_jsonl::<EngagementLogJson>(&logs)? {
                    let (line, record) = item?;
                    rows.push(record.into_log(&taxonomy).map_err(|e| VpgError::Format {
                        line,
                        message: e.to_string(),
                    })?);
                }
                let candidates = mine_candidate_triplets(&rows, window_days);
                let store = engine.store().clone();
                let world2 = world.clone();
                let embedder = move |sig: &ImageSignature| -> Result<Embedding> {
                    if let Some(entry) = store.peek(sig) {
                        return Ok(entry.full_embedding.clone());
                    }
                    Ok(world2.extract_entry(sig)?.full_embedding)
                };
                let rule = if literal_comparator {
                    HardnessRule::LiteralComparator
                } else {
                    HardnessRule::NegativeCloser
                };
                let hard = filter_hard(candidates, embedder, rule)?;
                let (labeled, stats) = label_triplets(hard, ground_truth_oracle(world));
                let pool = RandomPool::from_world(world);
                let target = target.unwrap_or_else(|| {
                    if hard_fraction > 0.0 {
                        (labeled.len() as f64 / hard_fraction).round() as usize
                    } else {
                        labeled.len() * 2
                    }
                });
                let dataset = assemble_dataset(labeled, &pool, target, hard_fraction, seed)?;
                let mut writer = JsonlWriter::create(&out)?;
                for t in &dataset {
                    writer.write(&TripletRecordJson::from_record(t))?;
                }
                writer.finish()?;
                logging::info(
                    "triplets_mine",
                    &[
                        ("dataset", &dataset.len().to_string()),
                        ("label_errors", &stats.errors.to_string()),
                    ],
                );
                print_json(&serde_json::json!({
                    "dataset_size": dataset.len(),
                    "labeling": serde_json::to_value(stats)?,
                }))
            }
        },
        Command::Eval { command } => match command {
            EvalCommand::Retrieval { pred, truth, k } => {
                let ks: Vec<usize> = k
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<usize>()
                            .map_err(|_| VpgError::InvalidArgument(format!("bad k value {s:?}")))
                    })
                    .collect::<Result<_>>()?;
                let metrics = evaluate_retrieval_files(&pred, &truth, &ks)?;
                let json: BTreeMap<String, serde_json::Value> = metrics
                    .into_iter()
                    .map(|(name, report)| {
                        (
                            name,
                            serde_json::json!({
                                "value": report.value,
                                "evaluated": report.evaluated,
                                "excluded": report.excluded,
                            }),
                        )
                    })
                    .collect();
                print_json(&serde_json::to_value(json)?)
            }
            EvalCommand::Detection {
                cases,
                iou,
                precision_floor,
            } => {
                let taxonomy = Taxonomy::default_taxonomy();
                let cases = read_detection_cases(&cases, &taxonomy)?;
                let map = mean_average_precision(&cases, iou);
                let rp = recall_at_precision(&cases, precision_floor);
                print_json(&serde_json::json!({
                    "mAP": map,
                    format!("R@P{:.0}", precision_floor * 100.0): rp,
                    "cases": cases.len(),
                }))
            }
        },
        Command::Serve { engine, bind, port } => {
            let mut config = engine.resolve()?;
            if let Some(bind) = bind {
                config.server.bind = bind;
            }
            if let Some(port) = port {
                config.server.port = port;
            }
            crate::serve::run_server(config)
        }
    }
}

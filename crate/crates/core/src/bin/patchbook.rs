use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use patchbook::ablation::{ablate, format_table};
use patchbook::augment::{negative_augment, AnomalyKind, AugmentConfig, Preset, ShapeKind};
use patchbook::codebook::Codebook;
use patchbook::config::{DatasetPreset, PipelineConfig};
use patchbook::eval::{evaluate, export_heatmap, score_sample};
use patchbook::geometry::io::{load_pointcloud, Format, LoadOptions};
use patchbook::geometry::PointCloud;
use patchbook::model::Model;
use patchbook::suite::{class_clouds, generate, Suite};
use patchbook::trainer::{train, TrainPaths};
use patchbook::{Error, Result};

/// Patch-codebook anomaly detection on point clouds.
#[derive(Parser)]
#[command(name = "patchbook", version)]
struct Cli {
    /// JSON pipeline config; fields it omits keep the preset's values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream (suite, patches, parameters, training).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dataset regime.
    #[arg(long, global = true, value_parser = ["shapenet", "real3d", "industrial"])]
    preset: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic suite (training clouds and labeled test set).
    Gen {
        #[arg(long)]
        out: PathBuf,
        /// Restrict to these shape classes.
        #[arg(long, value_delimiter = ',')]
        shapes: Vec<ShapeKind>,
    },
    /// Write an augmented sample bundle for one cloud.
    Augment(AugmentArgs),
    /// Build a codebook from normal clouds.
    BuildCodebook {
        /// Trained model; without it the initial parameters of the config are used.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Normal clouds (ply, obj, xyz).
        #[arg(long, num_args = 1.., required_unless_present = "suite")]
        input: Vec<PathBuf>,
        /// Take the training clouds of `--class` from a suite directory instead.
        #[arg(long, requires = "class")]
        suite: Option<PathBuf>,
        #[arg(long)]
        class: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the suite's normal clouds.
    Train {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score one cloud.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Write the scores as JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a colored PLY heatmap.
        #[arg(long)]
        heatmap: Option<PathBuf>,
    },
    /// Evaluate a trained model on the suite's test set.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        suite: PathBuf,
        /// Directory holding `codebook_<class>.bin`; defaults to the model's directory.
        #[arg(long)]
        codebooks: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Write one heatmap per test sample under `<out>/heatmaps`.
        #[arg(long)]
        heatmaps: bool,
    },
    /// Print a codebook summary as JSON.
    InspectCodebook { path: PathBuf },
    /// Train and evaluate every patch strategy and feature mode.
    Ablate {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "sample")]
    name: String,
    /// Restrict to one anomaly kind.
    #[arg(long)]
    kind: Option<AnomalyKind>,
    /// `small`, `large` or a displacement magnitude.
    #[arg(long, default_value = "large")]
    amplitude: String,
    #[arg(long, default_value_t = 1)]
    count: usize,
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn pipeline_config(cli: &Cli) -> Result<PipelineConfig> {
    let preset = match &cli.preset {
        Some(p) => p.parse()?,
        None => DatasetPreset::Shapenet,
    };
    let mut config = PipelineConfig::preset(preset);
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        let mut value = serde_json::to_value(&config)?;
        merge(&mut value, serde_json::from_str(&text)?);
        config = serde_json::from_value(value)?;
    }
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    config.validate()?;
    Ok(config)
}

fn load_cloud(path: &Path) -> Result<PointCloud> {
    let format = Format::from_path(path)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown extension of {}", path.display())))?;
    load_pointcloud(path, format, &LoadOptions::default())
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    let config = pipeline_config(&cli)?;
    match cli.command {
        Command::Gen { out, shapes } => {
            let mut suite_config = config.suite.clone();
            if !shapes.is_empty() {
                suite_config.classes = shapes;
            }
            let suite = generate(&suite_config)?;
            suite.save(&out)?;
            println!(
                "{}",
                json!({"classes": suite.train.len(), "test_samples": suite.test.len(), "out": out})
            );
        }
        Command::Augment(args) => {
            let cloud = load_cloud(&args.input)?;
            let mut aug = if config.train.rigid_shifts {
                AugmentConfig::industrial(args.count, Preset::Large)
            } else {
                AugmentConfig::new(args.count, Preset::Large)
            };
            aug.amplitude = match args.amplitude.as_str() {
                "small" | "large" => args.amplitude.parse::<Preset>()?.amplitude(),
                other => other
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad amplitude {other}")))?,
            };
            if let Some(kind) = args.kind {
                aug = aug.only(kind);
            }
            let seed = cli.seed.unwrap_or(config.train.seed);
            let sample = negative_augment(&cloud, &aug, seed)?;
            sample.save(&args.out, &args.name)?;
            println!(
                "{}",
                json!({"name": args.name, "points": sample.len(), "anomalous": sample.anomalous_count()})
            );
        }
        Command::BuildCodebook {
            model,
            input,
            suite,
            class,
            out,
        } => {
            let model = match model {
                Some(path) => Model::load(&path)?.0,
                None => Model::new(config.model.clone(), config.model_seed)?,
            };
            let (clouds, class, sources) = match (suite, class) {
                (Some(dir), Some(class)) => {
                    let suite = Suite::load(&dir)?;
                    let clouds = class_clouds(&suite.train, &class)
                        .ok_or_else(|| Error::InvalidConfig(format!("no class {class} in suite")))?
                        .to_vec();
                    let sources = (0..clouds.len()).map(|i| format!("{class}/{i}")).collect();
                    (clouds, class, sources)
                }
                _ => (
                    input.iter().map(|p| load_cloud(p)).collect::<Result<Vec<_>>>()?,
                    String::new(),
                    input.iter().map(|p| p.display().to_string()).collect(),
                ),
            };
            let mut book = model.build_codebook(&clouds)?;
            book.meta.class = class;
            book.meta.config_hash = model.config.hash();
            book.meta.sources = sources;
            book.save(&out)?;
            println!("{}", summary(&book));
        }
        Command::Train { suite, out } => {
            let suite = Suite::load(&suite)?;
            let mut model = Model::new(config.model.clone(), config.model_seed)?;
            let outcome = train(&mut model, &suite.train, &config.train, Some(&out))?;
            let paths = TrainPaths { dir: out.clone() };
            println!(
                "{}",
                json!({
                    "epochs": outcome.log.len(),
                    "final_loss": outcome.final_loss(),
                    "model": paths.model(),
                    "log": paths.log(),
                })
            );
        }
        Command::Score {
            model,
            codebook,
            input,
            out,
            heatmap,
        } => {
            let (model, _) = Model::load(&model)?;
            let book = Codebook::load(&codebook)?;
            let cloud = load_cloud(&input)?;
            let scores = score_sample(&model, &book, &cloud)?;
            if let Some(path) = heatmap {
                export_heatmap(&cloud, &scores.point_scores, &path)?;
            }
            let value = serde_json::to_value(&scores)?;
            match out {
                Some(path) => write_json(&path, &value)?,
                None => println!("{value}"),
            }
        }
        Command::Eval {
            model,
            suite,
            codebooks,
            out,
            heatmaps,
        } => {
            let book_dir = codebooks.unwrap_or_else(|| {
                model.parent().map(Path::to_path_buf).unwrap_or_default()
            });
            let (model, _) = Model::load(&model)?;
            let suite = Suite::load(&suite)?;
            let paths = TrainPaths { dir: book_dir };
            let mut books = Vec::new();
            for class in &suite.train {
                books.push((class.name.clone(), Codebook::load(&paths.codebook(&class.name))?));
            }
            let (report, scored) = evaluate(&model, &books, &suite.test)?;
            report.save(&out, "report")?;
            if heatmaps {
                let dir = out.join("heatmaps");
                for (sample, s) in suite.test.iter().zip(&scored) {
                    export_heatmap(&sample.cloud, &s.scores.point_scores, &dir.join(format!("{}.ply", s.name)))?;
                }
            }
            print!("{}", report.to_csv());
        }
        Command::InspectCodebook { path } => {
            let book = Codebook::load(&path)?;
            println!("{}", serde_json::to_string_pretty(&summary(&book))?);
        }
        Command::Ablate { suite, out } => {
            let suite = Suite::load(&suite)?;
            let rows = ablate(&config, &suite, |r| {
                eprintln!("{}", serde_json::to_string(r).unwrap_or_default());
            })?;
            let table = format_table(&rows);
            fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            let text = out.join("ablation.txt");
            fs::write(&text, &table).map_err(|e| Error::Io { path: text, source: e })?;
            write_json(&out.join("ablation.json"), &serde_json::to_value(&rows)?)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn summary(book: &Codebook) -> Value {
    let levels: Vec<Value> = (1..=3)
        .map(|l| {
            let entries = book.level(l);
            let weight: f64 = entries.iter().map(|e| e.weight).sum();
            let keys: usize = entries.iter().map(|e| e.keys.len()).sum();
            json!({"level": l, "entries": entries.len(), "total_weight": weight, "position_keys": keys})
        })
        .collect();
    json!({
        "tau": book.tau,
        "class": book.meta.class,
        "sources": book.meta.sources.len(),
        "config_hash": format!("{:016x}", book.meta.config_hash),
        "levels": levels,
    })
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors and 0 for --help
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::from(1)
        }
    }
}

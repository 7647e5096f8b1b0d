use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use radarnomaly::attack::LabeledTestSet;
use radarnomaly::eval::{evaluate_test_set, run_battery, write_battery, AttackSpec, BatteryConfig, ExperimentConfig, SetupKind};
use radarnomaly::model_file::{train_models, ModelFile};
use radarnomaly::monitor::{bench_monitor, run_monitor, MonitorConfig};
use radarnomaly::stream::{read_corpus, write_sessions};
use radarnomaly::synth::{generate_corpus, SynthConfig};
use radarnomaly::timing::DEFAULT_K;
use radarnomaly::{attack::DEFAULT_DROP_C, Error, FeatureSchema};

/// Anomaly detection for radar plot streams.
#[derive(Parser)]
#[command(name = "radarnomaly", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benign synthetic corpus, one NDJSON file per session.
    Gen {
        /// Generator config (JSON); the built-in radar config otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train both detectors on a corpus and write the model file.
    Train {
        #[command(flatten)]
        data: Data,
        /// Training config (JSON, ExperimentConfig layout).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forge a labeled test set from a benign corpus.
    Attack {
        #[command(flatten)]
        data: Data,
        /// `manipulate`, `manipulate:<feature>` or `drop`.
        #[arg(long)]
        kind: String,
        /// Categorical feature to manipulate.
        #[arg(long)]
        feature: Option<String>,
        /// Minimum number of dropped plots.
        #[arg(long, default_value_t = DEFAULT_DROP_C)]
        c: usize,
        /// Timing window length.
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = 43)]
        seed: u64,
        /// Labeled NDJSON; provenance goes to `<out>.provenance.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a stored test set with a model, or run the evaluation battery.
    Eval(EvalArgs),
    /// Score a plot stream and emit alerts as NDJSON.
    Monitor {
        #[arg(long)]
        model: PathBuf,
        /// Refuse to run unless the model was trained for this schema.
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Plot stream; stdin when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Alert stream; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Forget tracks idle for this many stream milliseconds (0 never).
        #[arg(long, default_value_t = 600_000)]
        horizon_ms: u64,
    },
    /// Measure single-threaded monitor throughput over a corpus.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Data {
    /// NDJSON file or directory of `*.ndjson` files.
    #[arg(long)]
    corpus: PathBuf,
    /// Feature schema (JSON); the default radar schema otherwise.
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Model file, for scoring a stored test set.
    #[arg(long, requires = "testset", conflicts_with_all = ["corpus", "setup", "attack"])]
    model: Option<PathBuf>,
    /// Test set written by `attack`.
    #[arg(long, requires = "model")]
    testset: Option<PathBuf>,
    /// Benign corpus, for the full battery.
    #[arg(long, required_unless_present = "model")]
    corpus: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// cross, chrono or transfer; repeatable, all three by default.
    #[arg(long)]
    setup: Vec<SetupKind>,
    /// Attack spec, repeatable; the three manipulations and drop by default.
    #[arg(long)]
    attack: Vec<AttackSpec>,
    /// Restrict the battery to these sessions.
    #[arg(long)]
    session: Vec<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

const DEFAULT_FEATURES: [&str; 3] = ["objectType", "alertRaised", "objectCategory"];

fn load_schema(path: Option<&Path>) -> anyhow::Result<FeatureSchema> {
    Ok(match path {
        Some(p) => FeatureSchema::load(p).with_context(|| format!("reading schema {}", p.display()))?,
        None => FeatureSchema::default_radar(),
    })
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).map_err(Error::from)?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())).into())
}

fn experiment_config(path: Option<&Path>, seed: u64) -> anyhow::Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match path {
        Some(p) => load_json(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.seed = seed;
    cfg.train.validate()?;
    cfg.timing.validate()?;
    Ok(cfg)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(Error::from)?;
    }
    Ok(BufWriter::new(File::create(path).map_err(Error::from)?))
}

fn write_json<T: serde::Serialize>(value: &T, path: Option<&Path>) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(text.as_bytes()).map_err(Error::from)?;
            w.flush().map_err(Error::from)?;
        }
        None => io::stdout().write_all(text.as_bytes()).map_err(Error::from)?,
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen { config, seed, out } => {
            let mut cfg = match config {
                Some(p) => SynthConfig::from_json(&std::fs::read_to_string(&p).map_err(Error::from)?)?,
                None => SynthConfig::default_radar(seed),
            };
            cfg.seed = seed;
            cfg.validate()?;
            let store = generate_corpus(&cfg)?;
            for f in write_sessions(&store, &out)? {
                log::info!("wrote {}", f.display());
            }
        }
        Command::Train { data, config, seed, out } => {
            let schema = load_schema(data.schema.as_deref())?;
            let store = read_corpus(&data.corpus, &schema)?;
            let cfg = experiment_config(config.as_deref(), seed)?;
            let trained = train_models(&store, &schema, &cfg)?;
            let th = trained.file.thresholds;
            log::info!(
                "thresholds: field plot {} track {} timing {}",
                th.field_plot,
                th.field_track,
                th.timing
            );
            let mut w = create(&out)?;
            w.write_all(trained.file.to_json().as_bytes()).map_err(Error::from)?;
            w.flush().map_err(Error::from)?;
        }
        Command::Attack {
            data,
            kind,
            feature,
            c,
            k,
            seed,
            out,
        } => {
            let schema = load_schema(data.schema.as_deref())?;
            let store = read_corpus(&data.corpus, &schema)?;
            let spec = match (kind.as_str(), feature) {
                ("manipulate", Some(f)) => AttackSpec::Manipulate { feature: f },
                ("manipulate", None) => bail!(Error::InvalidConfig("manipulate needs --feature".into())),
                ("drop", _) => AttackSpec::Drop { c, k },
                (other, _) => other.parse()?,
            };
            let set = spec.forge(&store, &schema, seed)?;
            let mut w = create(&out)?;
            set.write_ndjson(&mut w)?;
            w.flush().map_err(Error::from)?;
            write_json(&set.provenance, Some(&provenance_path(&out)))?;
            log::info!("{}: {} plots, {} malicious", spec, set.n_plots(), set.n_positive());
        }
        Command::Eval(args) => eval(args)?,
        Command::Monitor {
            model,
            schema,
            input,
            out,
            horizon_ms,
        } => {
            let model = ModelFile::load(&model)?;
            if let Some(p) = schema {
                model.check_schema(&load_schema(Some(&p))?)?;
            }
            let config = MonitorConfig {
                horizon_ms: (horizon_ms > 0).then_some(horizon_ms),
            };
            let input: Box<dyn BufRead> = match input {
                Some(p) => Box::new(BufReader::new(File::open(&p).map_err(Error::from)?)),
                None => Box::new(io::stdin().lock()),
            };
            let stats = match out {
                Some(p) => run_monitor(&model, config, input, create(&p)?)?,
                None => run_monitor(&model, config, input, io::stdout().lock())?,
            };
            eprintln!("{}", serde_json::to_string(&stats)?);
        }
        Command::Bench { model, corpus, out } => {
            let model = ModelFile::load(&model)?;
            let store = read_corpus(&corpus, &model.schema)?;
            let report = bench_monitor(&model, store.interleaved())?;
            write_json(&report, out.as_deref())?;
        }
    }
    Ok(())
}

fn provenance_path(testset: &Path) -> PathBuf {
    let mut name = testset.as_os_str().to_owned();
    name.push(".provenance.json");
    PathBuf::from(name)
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    if let (Some(model), Some(testset)) = (&args.model, &args.testset) {
        let model = ModelFile::load(model)?;
        let provenance = load_json(&provenance_path(testset))?;
        let reader = BufReader::new(File::open(testset).map_err(Error::from)?);
        let set = LabeledTestSet::read_ndjson(reader, &model.schema, provenance)?;
        let report = evaluate_test_set(&model, &set)?;
        std::fs::create_dir_all(&args.out).map_err(Error::from)?;
        return write_json(&report, Some(&args.out.join("eval.json")));
    }
    let corpus = args.corpus.as_ref().expect("clap requires --corpus");
    let schema = load_schema(args.schema.as_deref())?;
    let store = read_corpus(corpus, &schema)?;
    let setups = if args.setup.is_empty() {
        SetupKind::ALL.to_vec()
    } else {
        args.setup
    };
    let attacks = if args.attack.is_empty() {
        DEFAULT_FEATURES
            .iter()
            .map(|f| AttackSpec::Manipulate { feature: (*f).into() })
            .chain([AttackSpec::drop_default()])
            .collect()
    } else {
        args.attack
    };
    let mut config = BatteryConfig::new(setups, attacks, args.seed);
    config.sessions = args.session;
    config.experiment = experiment_config(args.config.as_deref(), args.seed)?;
    let report = run_battery(&store, &schema, &config)?;
    write_battery(&report, &args.out)?;
    for row in &report.summary {
        log::info!(
            "{} {}: auc {:?} ap {:?} tpr {:?} fpr {:?}",
            row.setup,
            row.attack,
            row.avg_auc,
            row.avg_ap,
            row.avg_tpr,
            row.avg_fpr
        );
    }
    Ok(())
}

/// 2 schema or config, 3 insufficient data, 4 I/O, 1 anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::SchemaViolation(_)
            | Error::InvalidConfig(_)
            | Error::MalformedLine(_)
            | Error::UnknownFeature(_)
            | Error::CardinalityOne(_)
            | Error::UnknownSession(_)
            | Error::SingleSession
            | Error::ModelFile(_),
        ) => 2,
        Some(Error::InsufficientData(_) | Error::TrackTooShort { .. }) => 3,
        Some(Error::Io(_)) => 4,
        _ if err.downcast_ref::<io::Error>().is_some() => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RADARNOMALY_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

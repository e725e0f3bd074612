mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use analogica_core::dataset::{self, DatasetError};
use analogica_core::difficulty::{self, VectorError};
use analogica_core::gateway::{
    CachedEndpoint, Endpoint, GatewayError, HttpEndpoint, ScriptedEndpoint,
};
use analogica_core::listfn::{self, Registry};
use analogica_core::model::{DatasetKind, Difficulty, TaskFormat, TaskInstance};
use analogica_core::pipeline::{self, Budget, PipelineError, PipelineKind, Runner, RunnerConfig};
use analogica_core::raven::{self, Configuration};
use analogica_core::salt::{self, catalog::Catalog, lexicon::Lexicon};
use analogica_core::scoring::{self, RunRecord};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::config::{ConfigError, EndpointSpec, RunConfig};

#[derive(Parser)]
#[command(
    name = "analogica",
    version,
    about = "Analogical reasoning and ICL task harness"
)]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config_file: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Mcq,
    Ftg,
}

impl From<FormatArg> for TaskFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Mcq => TaskFormat::Mcq,
            FormatArg::Ftg => TaskFormat::Ftg,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Csv,
}

#[derive(Args)]
struct GenCommon {
    #[arg(long)]
    count: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Stored format; MCQ files can still be run as FTG.
    #[arg(long, value_enum, default_value = "mcq")]
    format: FormatArg,
}

#[derive(Subcommand)]
enum Command {
    /// Generate symbolic RAVEN matrices.
    GenRaven {
        /// Layout name, or `all` to cycle through the seven layouts.
        #[arg(long, default_value = "all")]
        config: String,
        #[command(flatten)]
        common: GenCommon,
    },
    /// Generate SALT translation tasks.
    GenSalt {
        #[command(flatten)]
        common: GenCommon,
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Generate list-function tasks.
    GenListfn {
        #[command(flatten)]
        common: GenCommon,
        #[arg(long, default_value_t = 3)]
        shots: usize,
        #[arg(long)]
        registry: Option<PathBuf>,
    },
    /// Relabel analogy difficulty from a vector file.
    Annotate {
        #[arg(long)]
        dataset: DatasetKind,
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a pipeline over a dataset file.
    Run(RunArgs),
    /// Re-score run records.
    Score {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate scored records into accuracy and token grids.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a configuration file.
    Validate,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    dataset: DatasetKind,
    /// Dataset file; defaults to the configured path for `--dataset`.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    pipeline: String,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long)]
    endpoint: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    rounds: Option<u32>,
    #[arg(long)]
    budget: Option<Budget>,
    #[arg(long)]
    dummy_tokens: Option<usize>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Unix seconds stamped on every record; defaults to SOURCE_DATE_EPOCH,
    /// then the current time.
    #[arg(long)]
    timestamp: Option<u64>,
}

#[derive(Debug, Clone, Copy)]
enum Category {
    Usage = 2,
    Config = 3,
    Data = 4,
    Endpoint = 5,
    Pipeline = 6,
}

impl Category {
    fn name(self) -> &'static str {
        match self {
            Category::Usage => "usage",
            Category::Config => "config",
            Category::Data => "data",
            Category::Endpoint => "endpoint",
            Category::Pipeline => "pipeline",
        }
    }
}

struct Failure {
    category: Category,
    message: String,
}

type Outcome = Result<(), Failure>;

fn fail(category: Category, message: impl ToString) -> Failure {
    Failure {
        category,
        message: message.to_string(),
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        fail(Category::Config, e)
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        fail(Category::Data, e)
    }
}

impl From<VectorError> for Failure {
    fn from(e: VectorError) -> Self {
        fail(Category::Data, e)
    }
}

impl From<GatewayError> for Failure {
    fn from(e: GatewayError) -> Self {
        fail(Category::Endpoint, e)
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Gateway(g) => g.into(),
            PipelineError::Kind(k) => fail(Category::Usage, k),
            other => fail(Category::Pipeline, other),
        }
    }
}

fn echo(command: &str, resolved: serde_json::Value) {
    eprintln!("{command}: resolved config {resolved}");
}

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    fail(Category::Data, format!("{}: {e}", path.display()))
}

fn seed_or(flag: Option<u64>, cfg: &RunConfig) -> Result<u64, Failure> {
    flag.or(cfg.seed).ok_or_else(|| {
        fail(
            Category::Usage,
            "missing --seed (no seed in the config file either)",
        )
    })
}

fn write_fresh(instances: &[TaskInstance], out: &Path) -> Outcome {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_fail(dir, e))?;
    }
    let n = dataset::write_dataset(instances, out)?;
    eprintln!("wrote {n} instances to {}", out.display());
    Ok(())
}

fn gen_raven(cfg: &RunConfig, layout: &str, c: &GenCommon) -> Outcome {
    let seed = seed_or(c.seed, cfg)?;
    let configs: Vec<Configuration> = if layout == "all" {
        Configuration::ALL.to_vec()
    } else {
        vec![layout.parse().map_err(|e| fail(Category::Usage, e))?]
    };
    echo(
        "gen-raven",
        json!({"config": layout, "count": c.count, "seed": seed,
               "format": TaskFormat::from(c.format), "out": c.out}),
    );
    let puzzles =
        raven::generate_batch(&configs, c.count, seed).map_err(|e| fail(Category::Usage, e))?;
    let instances: Vec<TaskInstance> = puzzles
        .iter()
        .enumerate()
        .map(|(i, p)| p.to_instance(&format!("raven-{i:05}"), c.format.into()))
        .collect();
    write_fresh(&instances, &c.out)
}

fn gen_salt(
    cfg: &RunConfig,
    c: &GenCommon,
    catalog: Option<&Path>,
    lexicon: Option<&Path>,
) -> Outcome {
    let seed = seed_or(c.seed, cfg)?;
    echo(
        "gen-salt",
        json!({"count": c.count, "seed": seed, "format": TaskFormat::from(c.format),
               "out": c.out, "catalog": catalog, "lexicon": lexicon}),
    );
    let catalog = match catalog {
        Some(p) => Catalog::from_path(p).map_err(|e| fail(Category::Data, e))?,
        None => Catalog::bundled(),
    };
    let owned;
    let lexicon = match lexicon {
        Some(p) => {
            owned = Lexicon::from_path(p).map_err(|e| io_fail(p, e))?;
            &owned
        }
        None => Lexicon::bundled(),
    };
    let tasks = salt::generate_batch(&catalog, lexicon, c.count, seed)
        .map_err(|e| fail(Category::Data, e))?;
    let instances: Vec<TaskInstance> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| t.to_instance(&format!("salt-{i:05}"), c.format.into(), seed))
        .collect();
    write_fresh(&instances, &c.out)
}

fn gen_listfn(cfg: &RunConfig, c: &GenCommon, shots: usize, registry: Option<&Path>) -> Outcome {
    let seed = seed_or(c.seed, cfg)?;
    if shots == 0 {
        return Err(fail(Category::Usage, "--shots must be at least 1"));
    }
    echo(
        "gen-listfn",
        json!({"count": c.count, "shots": shots, "seed": seed,
               "format": TaskFormat::from(c.format), "out": c.out, "registry": registry}),
    );
    let owned;
    let registry = match registry {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_fail(p, e))?;
            owned = Registry::from_tsv(&text).map_err(|e| fail(Category::Data, e))?;
            &owned
        }
        None => Registry::bundled(),
    };
    let instances = listfn::generate_batch(registry, c.count, shots, seed, c.format.into());
    write_fresh(&instances, &c.out)
}

fn dataset_path(
    cfg: &RunConfig,
    kind: DatasetKind,
    flag: Option<&Path>,
) -> Result<PathBuf, Failure> {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.datasets.get(&kind).cloned())
        .ok_or_else(|| {
            fail(
                Category::Usage,
                format!("missing --input (no `{kind}` path in the config file either)"),
            )
        })
}

fn annotate(
    cfg: &RunConfig,
    kind: DatasetKind,
    vectors: &Path,
    input: Option<&Path>,
    out: &Path,
) -> Outcome {
    let spec = difficulty::thresholds_for(kind).ok_or_else(|| {
        fail(
            Category::Usage,
            format!("{kind} difficulty does not come from vectors (use ekar or vasr)"),
        )
    })?;
    let input = dataset_path(cfg, kind, input)?;
    echo(
        "annotate",
        json!({"dataset": kind, "vectors": vectors, "input": input, "out": out,
               "thresholds": [spec.low, spec.high]}),
    );
    let store = difficulty::load_vectors(vectors)?;
    let mut instances = dataset::load_dataset(&input, kind)?;
    let mut counts = [0usize; 3];
    for inst in &mut instances {
        difficulty::annotate(inst, &store, spec)?;
        counts[match inst.difficulty {
            Difficulty::Easy => 0,
            Difficulty::Medium => 1,
            Difficulty::Hard => 2,
        }] += 1;
    }
    eprintln!(
        "easy {} / medium {} / hard {}",
        counts[0], counts[1], counts[2]
    );
    write_fresh(&instances, out)
}

fn build_endpoint(cfg: &RunConfig, name: &str) -> Result<Box<dyn Endpoint>, Failure> {
    let spec = cfg.endpoint(name)?;
    let inner: Box<dyn Endpoint> = match spec {
        EndpointSpec::Scripted { transcript, .. } => {
            Box::new(ScriptedEndpoint::from_path(transcript)?)
        }
        EndpointSpec::Http(h) => Box::new(HttpEndpoint::new(name, h.clone())?),
    };
    Ok(match &cfg.cache_dir {
        Some(dir) => Box::new(CachedEndpoint::new(inner, dir)?),
        None => inner,
    })
}

fn resolve_timestamp(flag: Option<u64>) -> Result<u64, Failure> {
    if let Some(t) = flag {
        return Ok(t);
    }
    if let Ok(v) = std::env::var("SOURCE_DATE_EPOCH") {
        return v.trim().parse().map_err(|_| {
            fail(
                Category::Usage,
                format!("SOURCE_DATE_EPOCH `{v}` is not an integer"),
            )
        });
    }
    Ok(SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0))
}

fn conform(inst: &TaskInstance, format: TaskFormat) -> Result<TaskInstance, Failure> {
    match (inst.format, format) {
        (a, b) if a == b => Ok(inst.clone()),
        (TaskFormat::Mcq, TaskFormat::Ftg) => {
            dataset::project_ftg(inst).map_err(|e| fail(Category::Data, e))
        }
        _ => Err(fail(
            Category::Data,
            format!(
                "instance {} is stored as {} and has no candidates for {format}",
                inst.id, inst.format
            ),
        )),
    }
}

fn run(cfg: &RunConfig, a: &RunArgs) -> Outcome {
    let p = &cfg.pipeline;
    let kind = PipelineKind::from_parts(
        &a.pipeline,
        a.k.or(p.k),
        a.rounds.or(p.rounds),
        a.budget.or(p.budget),
    )
    .map_err(|e| fail(Category::Usage, e))?;
    let input = dataset_path(cfg, a.dataset, a.input.as_deref())?;
    let format = a.format.map(TaskFormat::from).or(p.format);
    let dummy_tokens = a.dummy_tokens.or(p.dummy_tokens).unwrap_or(0);
    let parallelism = a.parallelism.or(cfg.parallelism).unwrap_or(1);
    if parallelism == 0 {
        return Err(fail(Category::Usage, "--parallelism must be at least 1"));
    }
    let timestamp = resolve_timestamp(a.timestamp)?;
    let out = match (&cfg.output_dir, a.out.is_relative()) {
        (Some(dir), true) => dir.join(&a.out),
        _ => a.out.clone(),
    };
    let spec = cfg.endpoint(&a.endpoint)?;
    echo(
        "run",
        json!({"dataset": a.dataset, "input": input, "pipeline": kind, "format": format,
               "endpoint": a.endpoint, "endpoint_config": spec, "seed": a.seed,
               "dummy_tokens": dummy_tokens, "parallelism": parallelism,
               "timestamp": timestamp, "cache_dir": cfg.cache_dir, "out": out}),
    );

    let stored = dataset::load_dataset(&input, a.dataset)?;
    let instances = match format {
        Some(f) => stored
            .iter()
            .map(|i| conform(i, f))
            .collect::<Result<Vec<_>, _>>()?,
        None => stored,
    };
    if instances.is_empty() {
        return Err(fail(
            Category::Data,
            format!("{} has no instances", input.display()),
        ));
    }
    let endpoint = build_endpoint(cfg, &a.endpoint)?;
    let mut rc = RunnerConfig::new(spec.model(), a.seed);
    rc.dummy_tokens = dummy_tokens;
    let runner = Runner::new(endpoint.as_ref(), rc);
    let results = pipeline::run_batch(&runner, &instances, kind, parallelism, timestamp);

    let mut records = Vec::with_capacity(results.len());
    let mut first_err = None;
    let mut failed = 0usize;
    for (inst, r) in instances.iter().zip(results) {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                failed += 1;
                eprintln!("{}: {e}", inst.id);
                first_err.get_or_insert(e);
            }
        }
    }
    if !records.is_empty() {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| io_fail(dir, e))?;
        }
        if out.exists() {
            fs::remove_file(&out).map_err(|e| io_fail(&out, e))?;
        }
        dataset::write_run_records(&records, &out)?;
    }
    let correct = records.iter().filter(|r| r.correct).count();
    eprintln!(
        "{} records, {correct} correct, {failed} failed -> {}",
        records.len(),
        out.display()
    );
    match first_err {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn score(records: &Path, out: &Path) -> Outcome {
    echo("score", json!({"records": records, "out": out}));
    let mut recs: Vec<RunRecord> = dataset::read_jsonl(records)?;
    let mut changed = 0;
    for r in &mut recs {
        let c = scoring::score_record(r);
        changed += usize::from(c != r.correct);
        r.correct = c;
    }
    if out.exists() {
        fs::remove_file(out).map_err(|e| io_fail(out, e))?;
    }
    let n = dataset::write_run_records(&recs, out)?;
    eprintln!("scored {n} records ({changed} changed)");
    Ok(())
}

fn report(records: &Path, format: ReportFormat, out: Option<&Path>) -> Outcome {
    let fmt = match format {
        ReportFormat::Text => "text",
        ReportFormat::Csv => "csv",
    };
    echo(
        "report",
        json!({"records": records, "format": fmt, "out": out}),
    );
    let recs: Vec<RunRecord> = dataset::read_jsonl(records)?;
    if recs.is_empty() {
        return Err(fail(
            Category::Data,
            format!("{} has no records", records.display()),
        ));
    }
    let rep = scoring::build_report(&recs);
    let text = match format {
        ReportFormat::Text => rep.to_text(),
        ReportFormat::Csv => rep.to_csv(),
    };
    match out {
        Some(p) => fs::write(p, text).map_err(|e| io_fail(p, e))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn validate(cfg: &RunConfig, path: Option<&Path>) -> Outcome {
    let Some(path) = path else {
        return Err(fail(Category::Usage, "validate needs --config-file"));
    };
    echo(
        "validate",
        serde_json::to_value(cfg).expect("configs serialize"),
    );
    cfg.validate()?;
    for (name, spec) in &cfg.endpoints {
        if let EndpointSpec::Scripted { transcript, .. } = spec {
            ScriptedEndpoint::from_path(transcript)
                .map_err(|e| fail(Category::Config, format!("endpoint {name}: {e}")))?;
        }
    }
    eprintln!("{}: ok", path.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Outcome {
    let cfg = match &cli.config_file {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match &cli.command {
        Command::GenRaven { config, common } => gen_raven(&cfg, config, common),
        Command::GenSalt {
            common,
            catalog,
            lexicon,
        } => gen_salt(&cfg, common, catalog.as_deref(), lexicon.as_deref()),
        Command::GenListfn {
            common,
            shots,
            registry,
        } => gen_listfn(&cfg, common, *shots, registry.as_deref()),
        Command::Annotate {
            dataset,
            vectors,
            input,
            out,
        } => annotate(&cfg, *dataset, vectors, input.as_deref(), out),
        Command::Run(a) => run(&cfg, a),
        Command::Score { records, out } => score(records, out),
        Command::Report {
            records,
            format,
            out,
        } => report(records, *format, out.as_deref()),
        Command::Validate => validate(&cfg, cli.config_file.as_deref()),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.category.name(), f.message);
            ExitCode::from(f.category as u8)
        }
    }
}

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;

use ttpudr::evalbench::{inject_block_noise, NoisePlacement, NoiseSettings, NoiseValue};
use ttpudr::experiment::{self, DatasetKind, DatasetSpec, ExperimentSpec, Method, MethodSettings};
use ttpudr::io::{save_raw, write_matrix_csv};
use ttpudr::{graph, trainer, Error, LabeledDataset, Result, TtMap};

/// Tensor-train locality preserving projections with PCA/LPP baselines.
///
/// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
/// Set TTPUDR_THREADS to bound the worker pool.
#[derive(Parser)]
#[command(name = "ttpudr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a TT map on a whole dataset and save it.
    Fit(FitArgs),
    /// Project a dataset with a saved model; writes CSV rows `t_1..t_R, label`.
    Transform(TransformArgs),
    /// Run an experiment spec and print the per-run reports as JSON.
    Eval(RunArgs),
    /// Run an experiment spec and write reports, aggregate, plot data and traces.
    Sweep(RunArgs),
    /// Inject block noise into a dataset and save it in the raw tensor format.
    Noise(NoiseArgs),
    /// Operations on saved models.
    Model {
        #[command(subcommand)]
        command: ModelCommand,
    },
}

#[derive(Subcommand)]
enum ModelCommand {
    /// Print core shapes, parameter count and orthonormality defects.
    Inspect { path: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Raw,
    PgmDir,
}

/// Where the samples come from: a TOML file with a `[dataset]` table, or a path and format.
#[derive(Args)]
struct DataArgs {
    /// TOML file with `[dataset]` (and optionally `[settings]`) tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset file or directory; overrides the config's dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "raw")]
    format: Format,
    /// Sample shape for CSV input, e.g. `16,16`.
    #[arg(long, value_delimiter = ',')]
    shape: Option<Vec<usize>>,
    /// Refold samples to this shape before use, e.g. `4,4,4,4`.
    #[arg(long, value_delimiter = ',')]
    reshape: Option<Vec<usize>>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output model file.
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long)]
    dim: Option<usize>,
    /// Inner ranks R_1..R_{n-1}, e.g. `4,7,4`.
    #[arg(long, value_delimiter = ',')]
    ranks: Option<Vec<usize>>,
    #[arg(long)]
    neighbors: Option<usize>,
    #[arg(long)]
    kernel_width: Option<f64>,
    /// Outer (reweighting) iterations.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the per-iteration trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the affinity and final reweighted graphs as CSV into this directory.
    #[arg(long)]
    dump_graph: Option<PathBuf>,
}

#[derive(Args)]
struct TransformArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Output CSV; stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment TOML.
    config: PathBuf,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Target dimensions, e.g. `2,4,8`, or a range `2..30`.
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    shuffles: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Fraction of training images to corrupt; 0 disables noise.
    #[arg(long)]
    noise_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<usize>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NoiseArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    fraction: f64,
    #[arg(long, default_value_t = 4)]
    block: usize,
    #[arg(long, value_enum, default_value = "fixed")]
    placement: Placement,
    #[arg(long, value_enum, default_value = "either")]
    value: Value,
    #[arg(long)]
    min_val: Option<f64>,
    #[arg(long)]
    max_val: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Placement {
    Fixed,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum Value {
    Either,
    Min,
    Max,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(exit_code(&e));
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::ElementCap { .. } => 2,
        Error::Solver { source, .. } => exit_code(source),
        _ if e.is_numerical() => 4,
        _ => 3,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("TTPUDR_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .map_err(|_| Error::Config(format!("TTPUDR_THREADS={value:?} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(args) => fit(args),
        Command::Transform(args) => transform(args),
        Command::Eval(args) => {
            let spec = load_spec(&args)?;
            let outcome = experiment::run_on(&spec.dataset.load()?, &spec)?;
            let json = serde_json::to_string_pretty(&outcome.runs).map_err(|e| Error::Config(e.to_string()))?;
            println!("{json}");
            Ok(())
        }
        Command::Sweep(args) => {
            let spec = load_spec(&args)?;
            let dir = spec
                .output_dir
                .clone()
                .ok_or_else(|| Error::Config("sweep needs --out or output_dir".into()))?;
            let outcome = experiment::run_experiment(&spec)?;
            for run in &outcome.runs {
                for f in &run.failures {
                    eprintln!(
                        "{} shuffle {} dim {} failed: {}",
                        run.report.method, run.shuffle, f.target_dim, f.error
                    );
                }
            }
            print!("{}", experiment::aggregate_csv(&outcome.aggregate));
            eprintln!("wrote {}", dir.display());
            Ok(())
        }
        Command::Noise(args) => noise(args),
        Command::Model {
            command: ModelCommand::Inspect { path },
        } => inspect(&path),
    }
}

/// Reads one table of a TOML document, or its default when absent.
fn table<T: DeserializeOwned + Default>(doc: &toml::Table, key: &str) -> Result<T> {
    match doc.get(key) {
        Some(v) => v.clone().try_into().map_err(|e| Error::Config(format!("[{key}]: {e}"))),
        None => Ok(T::default()),
    }
}

fn read_toml(path: &Path) -> Result<toml::Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    text.parse().map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_data(args: &DataArgs) -> Result<(LabeledDataset, MethodSettings)> {
    let doc = match &args.config {
        Some(p) => read_toml(p)?,
        None => toml::Table::new(),
    };
    let settings: MethodSettings = table(&doc, "settings")?;
    let mut spec = match (&args.data, doc.get("dataset")) {
        (Some(path), _) if !path.exists() => {
            return Err(Error::Io(io::Error::new(
                io::ErrorKind::NotFound,
                format!("{} does not exist", path.display()),
            )))
        }
        (Some(path), _) => DatasetSpec {
            kind: match args.format {
                Format::Csv => DatasetKind::Csv,
                Format::Raw => DatasetKind::Raw,
                Format::PgmDir => DatasetKind::PgmDir,
            },
            path: Some(path.clone()),
            shape: None,
            reshape: None,
            synthetic: None,
            image_scale: None,
        },
        (None, Some(v)) => v.clone().try_into().map_err(|e| Error::Config(format!("[dataset]: {e}")))?,
        (None, None) => return Err(Error::Config("give --data or a --config with a [dataset] table".into())),
    };
    if args.shape.is_some() {
        spec.shape = args.shape.clone();
    }
    if args.reshape.is_some() {
        spec.reshape = args.reshape.clone();
    }
    Ok((spec.load()?, settings))
}

fn parse_dims(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::Config(format!("cannot read dimensions {text:?}"));
    if let Some((a, b)) = text.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        return Ok((a..=b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn load_spec(args: &RunArgs) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(&args.config).map_err(|e| Error::Config(format!("{}: {e}", args.config.display())))?;
    let mut spec: ExperimentSpec = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(m) = &args.methods {
        spec.methods = m.clone();
    }
    if let Some(d) = &args.dims {
        spec.target_dims = parse_dims(d)?;
    }
    if let Some(s) = args.shuffles {
        spec.shuffles = s;
    }
    if let Some(f) = args.train_fraction {
        spec.train_fraction = f;
    }
    if let Some(f) = args.noise_fraction {
        spec.noise = (f > 0.0).then(|| NoiseSettings {
            fraction: f,
            ..spec.noise.clone().unwrap_or_default()
        });
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(i) = args.iters {
        spec.settings.train.max_outer_iters = i;
    }
    if args.out.is_some() {
        spec.output_dir = args.out.clone();
    }
    spec.validate()?;
    Ok(spec)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn fit(args: FitArgs) -> Result<()> {
    let (data, settings) = load_data(&args.data)?;
    let mut config = settings.train;
    if let Some(d) = args.dim {
        config.target_dim = d;
    }
    if let Some(r) = args.ranks {
        config.ranks = r;
    }
    if let Some(k) = args.neighbors {
        config.neighbors = k;
    }
    if args.kernel_width.is_some() {
        config.kernel_width = args.kernel_width;
    }
    if let Some(i) = args.iters {
        config.max_outer_iters = i;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let (map, trace) = trainer::fit(data.samples(), &config)?;
    for w in &trace.warnings {
        eprintln!("warning: {w}");
    }
    map.write_to(create(&args.out)?)?;
    if let Some(p) = &args.trace {
        fs::write(p, trace.to_csv())?;
    }
    if let Some(dir) = &args.dump_graph {
        fs::create_dir_all(dir)?;
        let g = graph::build_affinity(data.samples(), config.neighbors, trace.kernel_width)?;
        write_matrix_csv(g.weights(), create(&dir.join("affinity.csv"))?)?;
        let rw = graph::reweight(&g, &map, data.samples(), config.epsilon)?;
        write_matrix_csv(rw.weights(), create(&dir.join("reweighted.csv"))?)?;
    }
    eprintln!(
        "objective {:.6e} -> {:.6e} in {} iterations ({}), {} parameters",
        trace.initial_objective,
        trace.objective.last().copied().unwrap_or(trace.initial_objective),
        trace.objective.len(),
        if trace.converged { "converged" } else { "not converged" },
        map.param_count()
    );
    Ok(())
}

fn read_model(path: &Path) -> Result<TtMap> {
    TtMap::read_from(io::BufReader::new(fs::File::open(path)?))
}

fn transform(args: TransformArgs) -> Result<()> {
    let map = read_model(&args.model)?;
    let (data, _) = load_data(&args.data)?;
    let t = map.apply_batch(data.samples())?;
    let rows = DMatrix::from_fn(data.len(), t.nrows() + 1, |i, j| {
        if j < t.nrows() {
            t[(j, i)]
        } else {
            (data.labels()[i] + 1) as f64
        }
    });
    match &args.out {
        Some(p) => write_matrix_csv(&rows, create(p)?),
        None => write_matrix_csv(&rows, io::stdout().lock()),
    }
}

fn noise(args: NoiseArgs) -> Result<()> {
    let (data, _) = load_data(&args.data)?;
    let settings = NoiseSettings {
        fraction: args.fraction,
        block: args.block,
        min_val: args.min_val,
        max_val: args.max_val,
        placement: match args.placement {
            Placement::Fixed => NoisePlacement::Fixed,
            Placement::Random => NoisePlacement::Random,
        },
        value: match args.value {
            Value::Either => NoiseValue::Either,
            Value::Min => NoiseValue::Min,
            Value::Max => NoiseValue::Max,
        },
    };
    let (noisy, idx) = inject_block_noise(&data, &settings, args.seed)?;
    save_raw(&noisy, &args.out)?;
    eprintln!("corrupted {} of {} samples", idx.len(), data.len());
    Ok(())
}

fn inspect(path: &Path) -> Result<()> {
    let map = read_model(path)?;
    let mut out = io::stdout().lock();
    writeln!(out, "cores        {}", map.order())?;
    writeln!(out, "mode sizes   {:?}", map.mode_sizes())?;
    writeln!(out, "ranks        {:?}", map.ranks())?;
    writeln!(out, "input dim    {}", map.input_dim())?;
    writeln!(out, "target dim   {}", map.target_dim())?;
    writeln!(out, "parameters   {}", map.param_count())?;
    writeln!(out, "defect       {:.3e}", map.orthonormality_defect())?;
    for (k, (c, d)) in map.cores().iter().zip(map.core_defects()).enumerate() {
        writeln!(
            out,
            "core {k}       {}x{}x{}  gram defect {d:.3e}",
            c.left_rank(),
            c.mode_size(),
            c.right_rank()
        )?;
    }
    Ok(())
}

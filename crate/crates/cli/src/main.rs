mod settings;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use missarf::impute::{impute_with_model, ImputationMode, LeafMean};
use missarf::model::{fingerprint, ModelFile, MODEL_FORMAT_VERSION};
use missarf::rng::{derive_seed, derived_rng, rng_from_seed};
use missarf::simbench::runner::{run_benchmark, summarize, write_results_file, BenchmarkConfig};
use missarf::simbench::{ampute, simulate_features, simulate_outcome, AmputeSpec, Effect, Marginal, Mechanism, SimSpec};
use missarf::tabular::{read_csv_with, to_csv_writer, write_csv, Cell, ColumnSchema, Dataset, SchemaHint};
use missarf::Error;

use settings::{FileConfig, ModelSettings};

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (model format ",
    // Kept in sync with MODEL_FORMAT_VERSION by a test.
    "1",
    ")"
);

#[derive(Parser, Debug)]
#[command(name = "missarf", version = VERSION, about = "Adversarial random forests for density estimation and imputation")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true, display_order = 100, default_value_t = 0)]
    seed: u64,

    /// Worker threads (default: available parallelism; 1 runs sequentially).
    #[arg(long, global = true, display_order = 100)]
    threads: Option<usize>,

    /// TOML file supplying defaults for seed, threads, model flags and m; explicit flags win.
    #[arg(long, global = true, display_order = 100, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Print the resolved configuration to standard error before running.
    #[arg(long, global = true, display_order = 100)]
    print_config: bool,

    /// More log output (repeatable).
    #[arg(short, long, global = true, display_order = 100, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate Gaussian-copula features and a binary outcome.
    Simulate(SimulateArgs),
    /// Introduce MCAR, MAR or MNAR missingness into a CSV.
    Ampute(AmputeArgs),
    /// Fit an ARF density model and save it as JSON.
    Fit(FitArgs),
    /// Impute missing cells (single or multiple imputation).
    Impute(ImputeArgs),
    /// Log-density of each row under a fitted model.
    Logprob(LogprobArgs),
    /// Draw synthetic rows from a fitted model.
    Sample(SampleArgs),
    /// Run a simulation grid described by a TOML file.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    p: usize,
    /// normal, binom, pois, gamma or uniform.
    #[arg(long, default_value = "normal")]
    marginal: Marginal,
    /// linear or squared.
    #[arg(long, default_value = "linear")]
    effect: Effect,
    /// Toeplitz correlation parameter.
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    /// Omit the outcome column y.
    #[arg(long)]
    no_outcome: bool,
    /// Output CSV (default: standard output).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SchemaArgs {
    /// Comma-separated names of categorical columns; all others are numeric.
    #[arg(long, value_delimiter = ',', value_name = "COLS")]
    categorical: Vec<String>,
}

impl SchemaArgs {
    fn hint(&self) -> SchemaHint {
        if self.categorical.is_empty() {
            SchemaHint::AllNumeric
        } else {
            SchemaHint::Categorical(self.categorical.clone())
        }
    }
}

#[derive(Args, Debug)]
struct AmputeArgs {
    input: PathBuf,
    #[command(flatten)]
    schema: SchemaArgs,
    /// mcar, mar or mnar.
    #[arg(long, default_value = "mcar")]
    mechanism: Mechanism,
    /// Missing rate per target column.
    #[arg(long, default_value_t = 0.2)]
    proportion: f64,
    /// Comma-separated target column names (default: first half of the columns).
    #[arg(long, value_delimiter = ',', value_name = "COLS")]
    targets: Vec<String>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Trees per forest.
    #[arg(long, default_value_t = 100)]
    trees: usize,
    /// Minimum node size.
    #[arg(long, default_value_t = 10)]
    min_node_size: usize,
    /// Features tried per split (default: ceil(sqrt(p))).
    #[arg(long)]
    mtry: Option<usize>,
    /// Convergence tolerance: stop once OOB accuracy < 0.5 + delta.
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    /// Maximum resampling rounds.
    #[arg(long, default_value_t = 10)]
    max_iters: usize,
    /// Additive smoothing for categorical leaf frequencies.
    #[arg(long, default_value_t = 0.0)]
    smoothing: f64,
}

#[derive(Args, Debug)]
struct FitArgs {
    input: PathBuf,
    #[command(flatten)]
    schema: SchemaArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Output model file.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[group(id = "mode", multiple = false)]
struct ModeArgs {
    /// One imputation by conditional sampling.
    #[arg(long, group = "mode")]
    single: bool,
    /// One imputation by conditional expectation (mode for categorical columns).
    #[arg(long, group = "mode")]
    expectation: bool,
    /// Number of multiple imputations.
    #[arg(long, group = "mode", default_value_t = 20)]
    m: usize,
}

#[derive(Args, Debug)]
struct ImputeArgs {
    input: PathBuf,
    #[command(flatten)]
    schema: SchemaArgs,
    #[command(flatten)]
    mode: ModeArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Leaf mean for --expectation: truncated or raw.
    #[arg(long, default_value = "truncated", value_parser = parse_leaf_mean)]
    leaf_mean: LeafMean,
    /// Reuse a saved model instead of fitting one.
    #[arg(long, value_name = "FILE")]
    model_file: Option<PathBuf>,
    /// Output prefix: writes PREFIX_1.csv ... PREFIX_m.csv and PREFIX_provenance.txt.
    #[arg(long, short, default_value = "imputed")]
    out: String,
}

#[derive(Args, Debug)]
struct LogprobArgs {
    /// Fitted model file.
    #[arg(long)]
    model: PathBuf,
    input: PathBuf,
    /// Output file (default: standard output).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    /// Number of rows.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    /// Benchmark grid (TOML).
    grid: PathBuf,
    /// Long-format results CSV.
    #[arg(long, short, default_value = "results.csv")]
    out: PathBuf,
    /// Also write per-cell means and standard deviations.
    #[arg(long, value_name = "FILE")]
    summary: Option<PathBuf>,
    /// Leave wall_ms blank so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

fn parse_leaf_mean(s: &str) -> Result<LeafMean, String> {
    match s {
        "truncated" => Ok(LeafMean::TruncatedMean),
        "raw" => Ok(LeafMean::RawLeafMean),
        _ => Err(format!("unknown leaf mean '{s}' (truncated, raw)")),
    }
}

/// Failure with an exit code: 2 usage/config, 3 data, 4 internal.
#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => 2,
            _ => 3,
        };
        Failure { code, msg: e.to_string() }
    }
}

impl Failure {
    fn config(msg: impl Into<String>) -> Self {
        Failure { code: 2, msg: msg.into() }
    }

    fn data(msg: impl Into<String>) -> Self {
        Failure { code: 3, msg: msg.into() }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::data(format!("{}: {e}", path.display()))
}

type CliResult<T = ()> = Result<T, Failure>;

/// Whether `id` was given on the command line (as opposed to defaulted).
fn explicit(m: &ArgMatches, id: &str) -> bool {
    matches!(m.value_source(id), Some(ValueSource::CommandLine))
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_failure(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_dataset(data: &Dataset, path: Option<&Path>) -> CliResult {
    match path {
        Some(p) => Ok(write_csv(data, p)?),
        None => to_csv_writer(data, io::stdout().lock()).map_err(|e| Failure::data(e.to_string())),
    }
}

struct Context {
    seed: u64,
    file: FileConfig,
    print_config: bool,
}

fn cmd_simulate(a: &SimulateArgs, ctx: &Context) -> CliResult {
    let spec = SimSpec {
        n: a.n,
        p: a.p,
        marginal: a.marginal,
        effect: a.effect,
        rho: a.rho,
    };
    spec.validate()?;
    if ctx.print_config {
        eprintln!("{spec:?}\nseed = {}", ctx.seed);
    }
    let mut rng = derived_rng(ctx.seed, &[0]);
    let x = simulate_features(&spec, &mut rng)?;
    let data = if a.no_outcome {
        x
    } else {
        let y = simulate_outcome(&x, a.effect, &mut rng)?;
        let mut schema = x.schema().to_vec();
        schema.push(ColumnSchema::numeric("y"));
        let mut cols: Vec<Vec<Cell>> = (0..x.n_cols()).map(|j| x.column(j).to_vec()).collect();
        cols.push(y.into_iter().map(Cell::Num).collect());
        Dataset::from_columns(schema, cols)?
    };
    write_dataset(&data, a.out.as_deref())
}

fn cmd_ampute(a: &AmputeArgs, ctx: &Context) -> CliResult {
    if !(a.proportion > 0.0 && a.proportion < 1.0) {
        return Err(Failure::config(format!("--proportion must lie in (0, 1), got {}", a.proportion)));
    }
    let data = read_csv_with(&a.input, &a.schema.hint())?;
    let mut spec = AmputeSpec::new(a.mechanism, a.proportion);
    if !a.targets.is_empty() {
        let idx = a
            .targets
            .iter()
            .map(|name| {
                data.schema()
                    .iter()
                    .position(|c| c.name() == name)
                    .ok_or_else(|| Failure::config(format!("--targets: no column named '{name}'")))
            })
            .collect::<CliResult<Vec<_>>>()?;
        spec.targets = Some(idx);
    }
    if ctx.print_config {
        eprintln!("{spec:?}\nseed = {}", ctx.seed);
    }
    let out = ampute(&data, &spec, &mut derived_rng(ctx.seed, &[0]))?;
    write_dataset(&out, a.out.as_deref())
}

fn resolve_model(args: &ModelArgs, m: &ArgMatches, file: &FileConfig) -> ModelSettings {
    let mut s = ModelSettings::from_args(
        args.trees,
        args.min_node_size,
        args.mtry,
        args.delta,
        args.max_iters,
        args.smoothing,
    );
    s.apply_file(file, |id| explicit(m, id));
    s
}

fn cmd_fit(a: &FitArgs, m: &ArgMatches, ctx: &Context) -> CliResult {
    let settings = resolve_model(&a.model, m, &ctx.file);
    settings.validate().map_err(Failure::config)?;
    if ctx.print_config {
        eprint!("{}seed = {}\n", settings.to_toml(), ctx.seed);
    }
    let data = read_csv_with(&a.input, &a.schema.hint())?;
    let model = ModelFile::fit(&data, settings.arf(), settings.density(), ctx.seed)?;
    if !model.report.converged {
        log::warn!(
            "ARF did not converge after {} iterations (last OOB accuracy {:.4})",
            model.report.iterations,
            model.report.accuracy_trace.last().copied().unwrap_or(f64::NAN)
        );
    }
    model.save(&a.out)?;
    log::info!(
        "fitted {} leaves, fingerprint {:016x}",
        model.density.leaves.len(),
        fingerprint(&model.density)
    );
    Ok(())
}

fn cmd_impute(a: &ImputeArgs, m: &ArgMatches, ctx: &Context) -> CliResult {
    let mut settings = resolve_model(&a.model, m, &ctx.file);
    let mut n_imp = a.mode.m;
    if !explicit(m, "m") {
        if let Some(v) = ctx.file.m {
            n_imp = v;
        }
    }
    let mut leaf_mean = a.leaf_mean;
    if !explicit(m, "leaf_mean") {
        if let Some(v) = ctx.file.leaf_mean.as_deref() {
            leaf_mean = parse_leaf_mean(v).map_err(Failure::config)?;
        }
    }
    let mode = if a.mode.single {
        ImputationMode::SingleSample
    } else if a.mode.expectation {
        ImputationMode::SingleExpectation
    } else if n_imp == 0 {
        return Err(Failure::config("--m must be ≥ 1"));
    } else {
        ImputationMode::Multiple(n_imp)
    };
    settings.validate().map_err(Failure::config)?;

    let (model, data) = match &a.model_file {
        Some(path) => {
            let model = ModelFile::load(path)?;
            let data = read_csv_with(&a.input, &SchemaHint::Fixed(model.density.schema.clone()))?;
            settings = ModelSettings::from_model(&model);
            (model, data)
        }
        None => {
            let data = read_csv_with(&a.input, &a.schema.hint())?;
            let model = ModelFile::fit(&data, settings.arf(), settings.density(), ctx.seed)?;
            (model, data)
        }
    };
    if ctx.print_config {
        eprint!(
            "{}seed = {}\nmode = \"{}\"\nleaf_mean = \"{}\"\n",
            settings.to_toml(),
            ctx.seed,
            mode_name(mode),
            leaf_mean_name(leaf_mean)
        );
    }
    for j in 0..data.n_cols() {
        if data.column(j).iter().all(Cell::is_missing) {
            log::warn!(
                "column {} has no observed values; filled with a constant",
                data.schema()[j].name()
            );
        }
    }
    let sample_seed = derive_seed(ctx.seed, &[1]);
    let sets = impute_with_model(&model.density, &data, mode, leaf_mean, sample_seed)?;

    let mut files = Vec::new();
    for (k, d) in sets.iter().enumerate() {
        let path = PathBuf::from(format!("{}_{}.csv", a.out, k + 1));
        write_csv(d, &path)?;
        files.push(path);
    }
    let sidecar = PathBuf::from(format!("{}_provenance.txt", a.out));
    let mut w = output(Some(&sidecar))?;
    let mut lines = vec![
        format!("version={}", env!("CARGO_PKG_VERSION")),
        format!("model_format_version={MODEL_FORMAT_VERSION}"),
        format!("input={}", a.input.display()),
        format!("seed={}", ctx.seed),
        format!("mode={}", mode_name(mode)),
        format!("m={}", mode.n_outputs()),
        format!("leaf_mean={}", leaf_mean_name(leaf_mean)),
    ];
    lines.extend(settings.key_values());
    lines.extend([
        format!("model_fingerprint={:016x}", fingerprint(&model.density)),
        format!("arf_iterations={}", model.report.iterations),
        format!("arf_converged={}", model.report.converged),
        format!(
            "oob_accuracy={}",
            model
                .report
                .accuracy_trace
                .iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ),
        format!(
            "outputs={}",
            files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",")
        ),
    ]);
    for l in lines {
        writeln!(w, "{l}").map_err(|e| io_failure(&sidecar, e))?;
    }
    w.flush().map_err(|e| io_failure(&sidecar, e))
}

fn mode_name(mode: ImputationMode) -> &'static str {
    match mode {
        ImputationMode::SingleExpectation => "expectation",
        ImputationMode::SingleSample => "single",
        ImputationMode::Multiple(_) => "multiple",
    }
}

fn leaf_mean_name(l: LeafMean) -> &'static str {
    match l {
        LeafMean::TruncatedMean => "truncated",
        LeafMean::RawLeafMean => "raw",
    }
}

fn cmd_logprob(a: &LogprobArgs) -> CliResult {
    let model = ModelFile::load(&a.model)?;
    let data = read_csv_with(&a.input, &SchemaHint::Fixed(model.density.schema.clone()))?;
    let mut w = output(a.out.as_deref())?;
    let werr = |e: io::Error| Failure::data(e.to_string());
    for i in 0..data.n_rows() {
        let lp = model.density.log_density(&data.row(i)).map_err(|e| match e {
            Error::Data(msg) => Failure::data(format!("row {}: {msg}", i + 1)),
            other => other.into(),
        })?;
        writeln!(w, "{lp:.16e}").map_err(werr)?;
    }
    w.flush().map_err(werr)
}

fn cmd_sample(a: &SampleArgs, ctx: &Context) -> CliResult {
    let model = ModelFile::load(&a.model)?;
    let data = model.density.sample_unconditional(a.n, &mut rng_from_seed(ctx.seed))?;
    write_dataset(&data, a.out.as_deref())
}

fn cmd_benchmark(a: &BenchmarkArgs, m: &ArgMatches, ctx: &Context) -> CliResult {
    let mut cfg = BenchmarkConfig::load(&a.grid)?;
    if explicit(m, "seed") {
        cfg.seed = ctx.seed;
    }
    if a.no_timing {
        cfg.timing = false;
    }
    if ctx.print_config {
        eprintln!("{cfg:#?}");
    }
    let progress = |done: usize, total: usize, cell: &missarf::simbench::runner::CellKey| {
        eprintln!("[{done}/{total}] {cell}");
    };
    let rows = run_benchmark(&cfg, &progress)?;
    write_results_file(&rows, &a.out)?;
    if let Some(path) = &a.summary {
        let mut w = output(Some(path))?;
        let werr = |e: io::Error| io_failure(path, e);
        writeln!(w, "n,p,marginal,effect,mechanism,proportion,method,m,metric,feature,mean,sd,count").map_err(werr)?;
        for s in summarize(&rows) {
            let c = s.cell;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.n,
                c.p,
                c.marginal,
                c.effect,
                c.mechanism,
                c.proportion,
                s.method,
                s.m,
                s.metric,
                s.feature.map_or(String::new(), |f| f.to_string()),
                s.mean,
                s.sd,
                s.count
            )
            .map_err(werr)?;
        }
        w.flush().map_err(werr)?;
    }
    let cells = cfg.cells();
    let ok_cells = cells
        .iter()
        .filter(|c| rows.iter().any(|r| r.cell == **c && r.status == "ok"))
        .count();
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    eprintln!(
        "{} rows written to {} ({ok_cells}/{} cells with results, {failed} rows flagged)",
        rows.len(),
        a.out.display(),
        cells.len()
    );
    if ok_cells == 0 {
        return Err(Failure::data("no grid cell produced a successful result"));
    }
    Ok(())
}

fn run(matches: &ArgMatches) -> CliResult {
    let cli = Cli::from_arg_matches(matches).map_err(|e| Failure::config(e.to_string()))?;
    let file = match &cli.config {
        Some(path) => FileConfig::load(path).map_err(Failure::config)?,
        None => FileConfig::default(),
    };
    let (sub_name, sub) = matches.subcommand().expect("subcommand is required");
    let seed = if explicit(sub, "seed") || explicit(matches, "seed") {
        cli.seed
    } else {
        file.seed.unwrap_or(cli.seed)
    };
    let threads = cli.threads.or(file.threads);
    if let Some(t) = threads {
        if t == 0 {
            return Err(Failure::config("--threads must be ≥ 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure { code: 4, msg: e.to_string() })?;
    }
    let ctx = Context {
        seed,
        file,
        print_config: cli.print_config,
    };
    log::debug!("running {sub_name} with seed {seed}");
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, &ctx),
        Command::Ampute(a) => cmd_ampute(a, &ctx),
        Command::Fit(a) => cmd_fit(a, sub, &ctx),
        Command::Impute(a) => cmd_impute(a, sub, &ctx),
        Command::Logprob(a) => cmd_logprob(a),
        Command::Sample(a) => cmd_sample(a, &ctx),
        Command::Benchmark(a) => cmd_benchmark(a, sub, &ctx),
    }
}

fn main() -> ExitCode {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match matches.get_count("verbose") {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match panic::catch_unwind(AssertUnwindSafe(|| run(&matches))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(f)) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
        Err(_) => {
            eprintln!("error: internal failure");
            ExitCode::from(4)
        }
    }
}

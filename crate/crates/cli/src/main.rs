use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fjlab::error::Error;
use fjlab::experiments::{self, Experiment, ExperimentSpec, Profile};

#[derive(Parser, Debug)]
#[command(
    name = "fjlab",
    version,
    about = "Download-time experiments for availability-coded storage"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form low-traffic comparison of four commercial codes.
    Table1(Common),
    /// Low-traffic mean over a grid of locality and availability.
    Lowtraffic(Common),
    /// Simulated GA mean for replication, availability, LRC and MDS.
    CompareCodes(Common),
    /// Simulated FA mean against its bounds and approximations.
    FjfaBounds(Common),
    /// Simulated service-type and winner frequencies.
    ServiceFreqs(Common),
    /// Matrix-analytic upper bound with heterogeneous rates.
    QbdUb(Common),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// TOML experiment file; flags given here override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    arrivals: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// SVG destination.
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Storage layout in JSON.
    #[arg(long)]
    layout_file: Option<PathBuf>,
    /// Per-request CSV trace of one FA run at the first grid point.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Comma-separated arrival rates.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    r_list: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    t_list: Option<Vec<usize>>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_parser = parse_profile)]
    profile: Option<Profile>,
    /// Run grid cells on the calling thread.
    #[arg(long)]
    sequential: bool,
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    match s {
        "uniform" => Ok(Profile::Uniform),
        "skewed" => Ok(Profile::Skewed),
        "both" => Ok(Profile::Both),
        _ => Err(format!("unknown profile `{s}` (uniform, skewed, both)")),
    }
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn resolve(experiment: Experiment, c: Common) -> fjlab::error::Result<ExperimentSpec> {
    let mut spec = match &c.config {
        Some(path) => ExperimentSpec::load(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
        None => ExperimentSpec::new(experiment),
    };
    spec.experiment = experiment;
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = c.$field {
                spec.$field = v;
            }
        )*};
    }
    set!(seed, arrivals, reps, lambdas, r, t, r_list, t_list, mu, gamma, alpha, beta, profile);
    if c.sequential {
        spec.sequential = true;
    }
    if let Some(p) = &c.out {
        spec.out = Some(path_string(p));
    }
    if let Some(p) = &c.plot {
        spec.plot = Some(path_string(p));
    }
    if let Some(p) = &c.layout_file {
        spec.layout_file = Some(path_string(p));
    }
    if let Some(p) = &c.trace {
        spec.trace = Some(path_string(p));
    }
    spec.validate()?;
    Ok(spec)
}

fn run(experiment: Experiment, common: Common) -> fjlab::error::Result<usize> {
    let spec = resolve(experiment, common)?;
    let table = experiments::run_experiment(&spec)?;
    let csv = table.to_csv();
    match &spec.out {
        Some(p) => std::fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    if let Some(p) = &spec.plot {
        let series = experiments::plot_series(&table, spec.experiment);
        std::fs::write(p, experiments::render_svg(spec.experiment.name(), &series))?;
    }
    if let Some(p) = &spec.trace {
        experiments::write_trace(&spec, Path::new(p))?;
    }
    Ok(table.unstable_cells())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, common) = match cli.command {
        Command::Table1(c) => (Experiment::Table1, c),
        Command::Lowtraffic(c) => (Experiment::Lowtraffic, c),
        Command::CompareCodes(c) => (Experiment::CompareCodes, c),
        Command::FjfaBounds(c) => (Experiment::FjfaBounds, c),
        Command::ServiceFreqs(c) => (Experiment::ServiceFreqs, c),
        Command::QbdUb(c) => (Experiment::QbdUb, c),
    };
    match run(experiment, common) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("fjlab: {n} unstable cell(s)");
            ExitCode::from(3)
        }
        Err(e @ (Error::Config(_) | Error::InvalidParameter(_) | Error::Layout(_))) => {
            eprintln!("fjlab: invalid config: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("fjlab: {e}");
            ExitCode::FAILURE
        }
    }
}

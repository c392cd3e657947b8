//! `vmapconv`: training runs, correctness suites, `L` inspection and benchmarks.
//!
//! Exit codes: 0 success, 1 check failure or runtime error, 2 usage or
//! configuration error, 3 I/O or malformed input.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vmapconv::autodiff::OpKind;
use vmapconv::checks::{gradcheck_suite, oracle_suite, GradcheckOptions, OracleOptions};
use vmapconv::config::{Command, RunConfig};
use vmapconv::diagnostics::{bench, inspect_l, path_name, write_bench_csv, BenchOptions};
use vmapconv::run::{run_train_cae, run_train_classify, RunSummary};
use vmapconv::vmap::load_checkpoint;
use vmapconv::Error;

#[derive(Parser)]
#[command(name = "vmapconv", version, about = "Vector map convolution experiments and checks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the CIFAR-10 classifier and write metrics plus checkpoints.
    TrainClassify(RunFlags),
    /// One-image colorization with the convolutional autoencoder.
    TrainCae(RunFlags),
    /// Finite-difference checks of every op, layer and model.
    Gradcheck(GradFlags),
    /// Fast kernels and layers against loop references.
    OracleCheck(OracleFlags),
    /// Histogram and sign retention of the `L` matrices in a checkpoint.
    InspectL(InspectFlags),
    /// Time expanded vs accumulated forward paths across D.
    Bench(BenchFlags),
}

#[derive(Args)]
struct RunFlags {
    /// key = value file; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    /// CIFAR-10 binary directory.
    #[arg(long)]
    data: Option<String>,
    /// Training images per class.
    #[arg(long)]
    subset: Option<String>,
    /// Test images per class.
    #[arg(long)]
    test_subset: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    l_mode: Option<String>,
    /// Input image for train-cae.
    #[arg(long)]
    image: Option<String>,
    #[arg(long)]
    image_size: Option<String>,
    #[arg(long)]
    log_every: Option<String>,
    /// Record wall time in the metrics CSV.
    #[arg(long)]
    timing: bool,
}

impl RunFlags {
    fn overrides(&self) -> Vec<(String, String)> {
        let pairs = [
            ("variant", &self.variant),
            ("d", &self.d),
            ("seed", &self.seed),
            ("epochs", &self.epochs),
            ("lr", &self.lr),
            ("batch_size", &self.batch_size),
            ("data", &self.data),
            ("subset", &self.subset),
            ("test_subset", &self.test_subset),
            ("out", &self.out),
            ("l_mode", &self.l_mode),
            ("image", &self.image),
            ("image_size", &self.image_size),
            ("log_every", &self.log_every),
        ];
        let mut out: Vec<(String, String)> = pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect();
        if self.timing {
            out.push(("timing".into(), "true".into()));
        }
        out
    }

    fn resolve(&self, command: Command) -> Result<RunConfig, Error> {
        RunConfig::resolve(command, self.config.as_deref(), &self.overrides())
    }
}

#[derive(Args)]
struct GradFlags {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random cases per op.
    #[arg(long, default_value_t = 20)]
    op_seeds: u64,
    /// Random cases per layer and model.
    #[arg(long, default_value_t = 3)]
    layer_seeds: u64,
    /// Negate an adjoint of this op (mutation test).
    #[arg(long)]
    inject_fault: Option<String>,
}

#[derive(Args)]
struct OracleFlags {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Multiplier on the number of random cases.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
}

#[derive(Args)]
struct InspectFlags {
    /// Checkpoint directory.
    checkpoint: PathBuf,
    /// Checkpoint holding the initial values; defaults to the deterministic pattern.
    #[arg(long)]
    initial: Option<PathBuf>,
    /// Write every entry to this CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BenchFlags {
    /// Comma-separated D values.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3, 4, 8, 16])]
    ds: Vec<usize>,
    #[arg(long, default_value_t = 48)]
    channels: usize,
    #[arg(long, default_value_t = 16)]
    side: usize,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output path.
    #[arg(long, default_value = "bench.csv")]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Format { .. } | Error::Image(_) | Error::Csv(_) => 3,
        Error::Config(_) | Error::InvalidArgument(_) | Error::Divisibility { .. } => 2,
        _ => 1,
    }
}

fn print_run(summary: &RunSummary) {
    for (k, v) in &summary.manifest {
        println!("{k} = {v}");
    }
    println!("outputs in {}", summary.out.display());
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Cmd::TrainClassify(flags) => {
            let cfg = flags.resolve(Command::TrainClassify)?;
            print_run(&run_train_classify(&cfg)?);
            Ok(0)
        }
        Cmd::TrainCae(flags) => {
            let cfg = flags.resolve(Command::TrainCae)?;
            print_run(&run_train_cae(&cfg)?);
            Ok(0)
        }
        Cmd::Gradcheck(flags) => {
            let fault = match &flags.inject_fault {
                Some(name) => Some(
                    OpKind::from_name(name).ok_or_else(|| Error::Config(format!("unknown op {name:?}")))?,
                ),
                None => None,
            };
            let report = gradcheck_suite(&GradcheckOptions {
                op_seeds: flags.op_seeds,
                layer_seeds: flags.layer_seeds,
                fault,
                seed: flags.seed,
                ..GradcheckOptions::default()
            })?;
            print!("{}", report.render());
            Ok(if report.passed() { 0 } else { 1 })
        }
        Cmd::OracleCheck(flags) => {
            if !(flags.scale > 0.0) {
                return Err(Error::Config("scale must be positive".into()));
            }
            let report = oracle_suite(&OracleOptions {
                seed: flags.seed,
                scale: flags.scale,
            })?;
            print!("{}", report.render());
            Ok(if report.passed() { 0 } else { 1 })
        }
        Cmd::InspectL(flags) => {
            let entries = load_checkpoint(&flags.checkpoint)?;
            let initial = flags.initial.as_deref().map(load_checkpoint).transpose()?;
            let report = inspect_l(&entries, initial.as_deref())?;
            print!("{}", report.render());
            if let Some(path) = &flags.csv {
                report.write_csv(path)?;
            }
            Ok(0)
        }
        Cmd::Bench(flags) => {
            let opts = BenchOptions {
                ds: flags.ds,
                channels: flags.channels,
                side: flags.side,
                reps: flags.reps,
                seed: flags.seed,
            };
            if let Some(&d) = opts.ds.iter().find(|&&d| d == 0 || opts.channels % d != 0) {
                return Err(Error::Config(format!("channels {} not divisible by d = {d}", opts.channels)));
            }
            let rows = bench(&opts)?;
            for r in &rows {
                println!("d={:<3} {:<12} {:.6e} s", r.d, path_name(r.path), r.seconds);
            }
            write_bench_csv(&rows, &flags.out)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use archloop::corpus::{self, Corpus, PairPolicy};
use archloop::gateway::{
    CommandGenerator, Evaluator, Generator, SidecarConfig, SidecarEvaluator, SimulatedEvaluator,
    SimulatedGenerator,
};
use archloop::novelty::{ArchiveMembership, DEFAULT_TAU};
use archloop::orchestrator::{
    Ablations, Orchestrator, RunConfig, RunDirWriter, RunManifest, RunReport, RunStatus,
    RUN_REPORT_FILE,
};
use archloop::report::{self, ReportFormat};
use archloop::sketch::{SketchParams, DEFAULT_NUM_PERM};

const EXIT_CONFIG: u8 = 1;
const EXIT_ABORTED: u8 = 2;

#[derive(Parser)]
#[command(
    name = "archloop",
    version,
    about = "Closed-loop architecture synthesis harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Deduplicate and convert a seed dataset into a new corpus.
    Ingest {
        /// JSON lines with a `code` or `source` field and an optional `id`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// MinHash seed stored with the corpus.
        #[arg(long, default_value_t = 0)]
        sketch_seed: u64,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_NUM_PERM)]
        num_perm: usize,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
    },
    /// Write a synthetic seed dataset in the format `ingest` reads.
    SynthSeed {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 849)]
        records: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the synthesis loop on a copy of a corpus.
    Run(RunArgs),
    /// Print the per-cycle table of a finished run.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "md")]
        format: String,
        /// Print long-form plot data instead of the table.
        #[arg(long)]
        plot_data: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Membership {
    All,
    Accepted,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Run directory; must not exist yet.
    #[arg(long, default_value = "archloop-run")]
    out: PathBuf,
    #[arg(long, default_value_t = 22)]
    cycles: u32,
    #[arg(long, default_value_t = 50)]
    samples: u32,
    #[arg(long, default_value_t = 0.40)]
    threshold: f64,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_novelty_filter: bool,
    #[arg(long)]
    no_accuracy_threshold: bool,
    #[arg(long)]
    no_iteration: bool,
    /// `simulated` or `sidecar:<shell command>`.
    #[arg(long, default_value = "simulated")]
    evaluator: String,
    /// `simulated` or `command:<shell command>`.
    #[arg(long, default_value = "simulated")]
    generator: String,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, value_enum, default_value_t = Membership::All)]
    archive_membership: Membership,
    /// Comma-separated acceptance count per cycle.
    #[arg(long, value_delimiter = ',')]
    acceptance_targets: Option<Vec<u32>>,
    #[arg(long, default_value_t = 2)]
    retry_budget: u32,
}

/// Error raised before a run starts; maps to exit code 1.
#[derive(Debug)]
struct ConfigFailure(anyhow::Error);

fn config<T>(r: Result<T>) -> std::result::Result<T, ConfigFailure> {
    r.map_err(ConfigFailure)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Ingest {
            input,
            out,
            sketch_seed,
            k,
            num_perm,
            tau,
        } => config(ingest(&input, &out, sketch_seed, k, num_perm, tau)).map(|_| ExitCode::SUCCESS),
        Command::SynthSeed { out, records, seed } => {
            config(synth_seed(&out, records, seed)).map(|_| ExitCode::SUCCESS)
        }
        Command::Run(args) => run(args),
        Command::Report {
            run,
            format,
            plot_data,
        } => config(print_report(&run, &format, plot_data)).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(ConfigFailure(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn ingest(
    input: &Path,
    out: &Path,
    sketch_seed: u64,
    k: usize,
    num_perm: usize,
    tau: f64,
) -> Result<()> {
    let params = SketchParams::new(k, num_perm, sketch_seed)?;
    let file = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let (_, report) = corpus::ingest_seed(
        BufReader::new(file),
        out,
        params,
        tau,
        PairPolicy::default(),
    )?;
    let text = serde_json::to_string_pretty(&report)?;
    fs::write(out.join("ingest_report.json"), format!("{text}\n"))?;
    println!("{text}");
    Ok(())
}

fn synth_seed(out: &Path, records: u32, seed: u64) -> Result<()> {
    let mut w =
        BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    for i in 0..records {
        let line = serde_json::json!({
            "id": format!("seed-{i:06}"),
            "code": SimulatedGenerator::seed_snippet(seed, i),
        });
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn print_report(run: &Path, format: &str, plot: bool) -> Result<()> {
    let path = run.join(RUN_REPORT_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let report: RunReport =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let stats = report.cycle_stats();
    let doc = if plot {
        report::plot_data(&stats)
    } else {
        report::emit_report(&stats, format.parse::<ReportFormat>()?)?
    };
    io::stdout().write_all(doc.as_bytes())?;
    Ok(())
}

fn run_config(args: &RunArgs, corpus: &Corpus) -> RunConfig {
    RunConfig {
        cycles: args.cycles,
        samples_per_cycle: args.samples,
        accuracy_threshold: args.threshold,
        tau: args.tau,
        k: corpus.params().k,
        num_perm: corpus.params().num_perm,
        seed: args.seed,
        ablations: Ablations {
            novelty_filter_enabled: !args.no_novelty_filter,
            accuracy_threshold_enabled: !args.no_accuracy_threshold,
            iteration_enabled: !args.no_iteration,
        },
        workers: args.workers,
        archive_membership: match args.archive_membership {
            Membership::All => ArchiveMembership::AllAssessed,
            Membership::Accepted => ArchiveMembership::AcceptedOnly,
        },
        acceptance_targets: args.acceptance_targets.clone(),
        hyperparameters: Default::default(),
        retry_budget: args.retry_budget,
    }
}

fn make_generator(spec: &str) -> Result<Box<dyn Generator>> {
    match spec.split_once(':') {
        None if spec == "simulated" => Ok(Box::new(SimulatedGenerator::default())),
        Some(("command", cmd)) if !cmd.is_empty() => Ok(Box::new(CommandGenerator::new(cmd))),
        _ => bail!("unknown generator {spec:?} (expected simulated or command:<cmd>)"),
    }
}

fn run(args: RunArgs) -> std::result::Result<ExitCode, ConfigFailure> {
    let source = config(
        Corpus::open(&args.corpus)
            .with_context(|| format!("opening corpus {}", args.corpus.display())),
    )?;
    let cfg = run_config(&args, &source);
    config(cfg.validate().map_err(Into::into))?;
    let mut generator = config(make_generator(&args.generator))?;
    let evaluator: Box<dyn Evaluator> = match args.evaluator.split_once(':') {
        None if args.evaluator == "simulated" => Box::new(SimulatedEvaluator::default()),
        Some(("sidecar", cmd)) if !cmd.is_empty() => {
            let mut sc = SidecarConfig::new(cmd);
            sc.workers = args.workers;
            match SidecarEvaluator::start(sc) {
                Ok(ev) => Box::new(ev),
                Err(e) => {
                    eprintln!("error: evaluator did not start: {e}");
                    return Ok(ExitCode::from(EXIT_ABORTED));
                }
            }
        }
        _ => {
            return Err(ConfigFailure(anyhow::anyhow!(
                "unknown evaluator {:?} (expected simulated or sidecar:<cmd>)",
                args.evaluator
            )))
        }
    };
    if args.out.exists() {
        return Err(ConfigFailure(anyhow::anyhow!(
            "run directory {} already exists",
            args.out.display()
        )));
    }
    let corpus = config(source.fork(&args.out.join("corpus")).map_err(Into::into))?;
    let manifest = RunManifest::new(&cfg, &args.generator, &evaluator.evaluator_id(), &corpus);
    let mut writer = config(RunDirWriter::create(&args.out).map_err(Into::into))?;
    let mut orch = config(
        Orchestrator::new(cfg, corpus, generator.as_mut(), evaluator.as_ref()).map_err(Into::into),
    )?;

    let report = match orch.run(&mut writer) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: run failed: {e}");
            return Ok(ExitCode::from(EXIT_ABORTED));
        }
    };
    if let Err(e) = writer.finish(&report, &manifest) {
        eprintln!("error: writing reports: {e}");
        return Ok(ExitCode::from(EXIT_ABORTED));
    }
    if let Ok(md) = report::emit_report(&report.cycle_stats(), ReportFormat::Markdown) {
        print!("{md}");
    }
    println!(
        "corpus: {} -> {} pairs; results in {}",
        report.corpus_initial_pairs,
        report.corpus_final_pairs,
        args.out.display()
    );
    match report.status {
        RunStatus::Completed => Ok(ExitCode::SUCCESS),
        RunStatus::Aborted { cycle, reason } => {
            eprintln!("run aborted in cycle {cycle}: {reason}");
            Ok(ExitCode::from(EXIT_ABORTED))
        }
    }
}

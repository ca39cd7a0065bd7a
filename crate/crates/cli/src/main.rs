use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ufo_core::eval::{
    ablate, ablation_table, accuracy_avg, emit_matrix, forgetting_avg, score_dump_csv, timing_csv, DataSource,
    Execution, PerformanceMatrix, RunReport,
};
use ufo_core::graph::{generate_sbm, load_dataset, write_dataset, Graph, NoiseKind};
use ufo_core::selftest;
use ufo_core::tensor::Rng;
use ufo_core::trainer::{run_method, Checkpoint, CheckpointPolicy, Method, Mode, RunOptions, Settings};

#[derive(Parser)]
#[command(name = "ufo", version, about = "Noise-robust continual node classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic stochastic-block-model dataset directory.
    GenData(GenDataArgs),
    /// Train one method over the task sequence and write its report.
    Run(RunArgs),
    /// Run the ablation chain BM, BM+KP, BM+KP+NS, BM+KP+NS+R, UFO over shared seeds.
    Ablate(AblateArgs),
    /// Recompute accuracy and forgetting from a matrix CSV or a run report.
    Eval(EvalArgs),
    /// Gradient checks, flow round trips and score invariants.
    Selftest,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Narrow widths for the synthetic fixture.
    Desk,
    /// Full-size widths and epoch counts.
    Full,
}

#[derive(Args)]
struct ConfigArgs {
    /// Base hyperparameters before the config file and flags apply.
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    /// `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_name = "symmetric|pair")]
    noise_kind: Option<NoiseKind>,
    #[arg(long, visible_alias = "noise", value_name = "RATIO")]
    noise_ratio: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Any config key, e.g. `--set epochs=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn settings(&self) -> Result<Settings> {
        let mut s = match self.preset {
            Preset::Desk => Settings::desk(),
            Preset::Full => Settings::default(),
        };
        if let Some(path) = &self.config {
            s.apply_file(path)?;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            s.set(k.trim(), v.trim())?;
        }
        if let Some(k) = self.noise_kind {
            s.train.noise_kind = k;
        }
        if let Some(r) = self.noise_ratio {
            s.train.noise_ratio = r;
        }
        if let Some(seed) = self.seed {
            s.train.seed = seed;
        }
        s.train.validate()?;
        s.sbm.validate()?;
        Ok(s)
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = Mode::Ufo, value_name = "ufo|bare|joint")]
    mode: Mode,
    /// Dataset directory; a synthetic graph is generated from the seed when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-node score audit CSV.
    #[arg(long)]
    dump_scores: Option<PathBuf>,
    /// Save a checkpoint after every N finished tasks.
    #[arg(long, value_name = "N")]
    checkpoint_every: Option<usize>,
    /// Continue from a checkpoint file.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated seeds; defaults to the configured seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Run the variants one after another on a single thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// `i,j,accuracy` CSV or a run report.
    path: PathBuf,
}

fn data_source(data: &Option<PathBuf>, s: &Settings) -> Result<DataSource> {
    Ok(match data {
        Some(dir) => DataSource::Fixed(load_dataset(dir)?),
        None => DataSource::Synthetic(s.sbm.clone()),
    })
}

fn synthetic(s: &Settings) -> Result<Graph> {
    Ok(generate_sbm(&s.sbm, &mut Rng::new(s.train.seed).fork("data"))?)
}

fn print_metrics(m: &PerformanceMatrix) -> Result<()> {
    println!("tasks = {}", m.n_tasks());
    println!("accuracy = {:.6}", accuracy_avg(m)?);
    match forgetting_avg(m) {
        Some(f) => println!("forgetting = {f:.6}"),
        None => println!("forgetting = na"),
    }
    Ok(())
}

fn gen_data(args: &GenDataArgs) -> Result<()> {
    let s = args.config.settings()?;
    let g = synthetic(&s)?;
    write_dataset(&g, &args.out)?;
    println!(
        "wrote {} nodes, {} edges, {} classes to {}",
        g.n_nodes(),
        g.edges().len(),
        g.n_classes(),
        args.out.display()
    );
    Ok(())
}

fn run(args: &RunArgs) -> Result<()> {
    let s = args.config.settings()?;
    let graph = match &args.data {
        Some(dir) => load_dataset(dir)?,
        None => synthetic(&s)?,
    };
    let method = Method::from(args.mode);
    let resume = match &args.resume {
        Some(p) => Some(Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let checkpoint = match args.checkpoint_every {
        Some(0) => bail!("--checkpoint-every must be at least 1"),
        Some(every) => Some(CheckpointPolicy {
            dir: args.out.join("checkpoints"),
            every,
        }),
        None => None,
    };
    let out = run_method(
        &graph,
        &s.train,
        method,
        RunOptions {
            checkpoint,
            resume,
            stop_after: None,
        },
    )?;

    std::fs::create_dir_all(&args.out)?;
    let report = RunReport::new(method, &s, &out)?;
    let report_path = args.out.join("report.txt");
    report.save(&report_path)?;
    emit_matrix(&out.matrix, &args.out, "matrix")?;
    let first = out.matrix.n_tasks() - out.wall_times.len();
    std::fs::write(args.out.join("timing.csv"), timing_csv(&out.wall_times, first))?;
    if let Some(p) = &args.dump_scores {
        std::fs::write(p, score_dump_csv(&out.logs))?;
    }
    println!("method = {}", report.method);
    println!("seed = {}", report.seed);
    print_metrics(&out.matrix)?;
    println!("report = {}", report_path.display());
    Ok(())
}

fn run_ablation(args: &AblateArgs) -> Result<()> {
    let s = args.config.settings()?;
    let seeds = if args.seeds.is_empty() { vec![s.train.seed] } else { args.seeds.clone() };
    let data = data_source(&args.data, &s)?;
    let exec = if args.sequential { Execution::Sequential } else { Execution::default() };
    let rows = ablate(&s, &data, &seeds, exec)?;
    std::fs::create_dir_all(&args.out)?;
    for row in &rows {
        for r in &row.runs {
            let stem = format!("{}-seed{}", row.variant.slug(), r.report.seed);
            emit_matrix(&r.report.matrix, &args.out, &stem)?;
            r.report.save(&args.out.join(format!("{stem}.report.txt")))?;
        }
    }
    let table = ablation_table(&rows);
    std::fs::write(args.out.join("summary.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn eval(path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let matrix = if text.starts_with("# run report") {
        RunReport::parse(&text, path)?.matrix
    } else {
        PerformanceMatrix::from_csv(&text, path)?
    };
    print_metrics(&matrix)
}

fn run_selftest() -> Result<()> {
    let checks = selftest::run_all()?;
    let failed = checks.iter().filter(|c| !c.passed()).count();
    for c in &checks {
        println!("{c}");
    }
    if failed > 0 {
        bail!("{failed} of {} checks failed", checks.len());
    }
    println!("all {} checks passed", checks.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Run(a) => run(a),
        Command::Ablate(a) => run_ablation(a),
        Command::Eval(a) => eval(&a.path),
        Command::Selftest => run_selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

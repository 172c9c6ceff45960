use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use xbatch::harness::experiment::{history_csv, run_single, write_experiment};
use xbatch::harness::io::{read_labels, read_matrix, write_labels, write_matrix};
use xbatch::harness::{cross_class_eval, run_experiment, EvalConfig, ExperimentConfig};
use xbatch::prototypes::{greedy_k_center, RlsState};
use xbatch::transport::{euclidean_costs, mmd_linear, ot_exact, MassDistribution};
use xbatch::verify;
use xbatch::{Error, Mat, Result};

const EXIT_FAILURE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_ACCEPTANCE: u8 = 4;

#[derive(Parser)]
#[command(name = "xbatch", version, about = "Prototype pooling and cross-batch metric learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the acceptance checks and print a pass/fail table.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated criterion numbers (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
    /// Greedy k-center prototypes over the columns of a matrix.
    Cover {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed_index: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Recursive prototype estimation over a sequence of (Z, Y) batch files.
    Fit {
        /// Histogram batches (m×B), in order.
        #[arg(long = "z", required = true)]
        z: Vec<PathBuf>,
        /// Embedding batches (d×B), paired with --z.
        #[arg(long = "y", required = true)]
        y: Vec<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        forgetting: f64,
        #[arg(long, default_value_t = 0.05)]
        ridge: f64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train one encoder on synthetic data and evaluate it.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Cross-batch weight (default: loss.lambda_mix).
        #[arg(long)]
        lambda: Option<f64>,
        /// Run seed (default: train.seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Cross-class evaluation of histograms and embeddings stored as CSV.
    Eval {
        #[arg(long)]
        z: PathBuf,
        #[arg(long)]
        y: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 0.05)]
        ridge: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Rank raw rather than unit-normalized embeddings.
        #[arg(long)]
        raw: bool,
    },
    /// Paired runs with and without the cross-batch term over several seeds.
    Experiment {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Exact optimal transport between two point clouds (columns of CSV matrices).
    OracleOt {
        #[arg(long)]
        p: PathBuf,
        #[arg(long)]
        q: PathBuf,
        /// 1×n masses for --p (default uniform).
        #[arg(long)]
        p_masses: Option<PathBuf>,
        #[arg(long)]
        q_masses: Option<PathBuf>,
        /// Where to write the transport plan.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p),
            None => Ok(ExperimentConfig::default()),
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Data { .. } | Error::Contract(_) | Error::Dimension { .. } => EXIT_INPUT,
        e if e.is_numeric() => EXIT_NUMERIC,
        _ => EXIT_FAILURE,
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value serializes"));
}

fn masses(path: &Option<PathBuf>, support: Mat) -> Result<MassDistribution> {
    match path {
        None => Ok(MassDistribution::uniform(support)),
        Some(p) => MassDistribution::new(read_matrix(p)?.into_vec(), support),
    }
}

fn cmd_verify(seed: u64, only: &[u8]) -> ExitCode {
    let ids: Vec<u8> = if only.is_empty() {
        (1..=verify::NAMES.len() as u8).collect()
    } else {
        only.to_vec()
    };
    let mut failed = 0;
    for id in ids {
        let outcome = verify::run(id, seed);
        println!("{}", outcome.line());
        failed += usize::from(!outcome.passed);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::from(EXIT_ACCEPTANCE)
    }
}

fn cmd_fit(z: &[PathBuf], y: &[PathBuf], forgetting: f64, ridge: f64, output: &Path) -> Result<()> {
    if z.len() != y.len() {
        return Err(Error::Contract(format!("{} --z files but {} --y files", z.len(), y.len())));
    }
    let mut state: Option<RlsState> = None;
    for (zp, yp) in z.iter().zip(y) {
        let (zm, ym) = (read_matrix(zp)?, read_matrix(yp)?);
        let s = match &mut state {
            Some(s) => s,
            None => state.insert(RlsState::new(zm.rows(), ym.rows(), forgetting, ridge)?),
        };
        s.update(&zm, &ym)?;
    }
    let state = state.expect("at least one batch");
    write_matrix(output, state.prototypes()?.vectors())?;
    print_json(&json!({ "batches": state.step(), "prototypes": output.display().to_string() }));
    Ok(())
}

fn cmd_train(args: &RunArgs, lambda: Option<f64>, seed: Option<u64>) -> Result<()> {
    let cfg = args.load()?;
    let lambda = lambda.unwrap_or(cfg.loss.lambda_mix);
    let seed = seed.unwrap_or(cfg.train.seed);
    let start = Instant::now();
    let run = run_single(&cfg, seed, lambda)?;
    let dir = &args.out;
    std::fs::create_dir_all(dir)?;
    write_matrix(&dir.join("linear.csv"), &run.params.linear)?;
    write_matrix(&dir.join("prototypes.csv"), &run.params.prototypes)?;
    write_matrix(&dir.join("test_z.csv"), &run.test_z)?;
    write_matrix(&dir.join("test_y.csv"), &run.test_y)?;
    write_labels(&dir.join("test_labels.csv"), &run.test_labels)?;
    std::fs::write(dir.join("history.csv"), history_csv(std::slice::from_ref(&run)))?;
    let summary = json!({ "config": cfg, "run": run.summary() });
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("serializes") + "\n")?;
    std::fs::write(
        dir.join("timing.json"),
        json!({ "wall_seconds": start.elapsed().as_secs_f64() }).to_string() + "\n",
    )?;
    print_json(&json!({ "seed": seed, "lambda": lambda, "report": run.report }));
    Ok(())
}

fn cmd_experiment(args: &RunArgs) -> Result<()> {
    let cfg = args.load()?;
    let start = Instant::now();
    let (summary, runs) = run_experiment(&cfg)?;
    let wall = start.elapsed().as_secs_f64();
    write_experiment(&args.out, &summary, &runs, wall)?;
    match &summary.paired {
        Some(p) => print_json(&json!({
            "seeds": p.pairs.len(),
            "lambda": p.lambda,
            "median_delta_map_x": p.median_delta_map_x,
            "median_delta_map_c": p.median_delta_map_c,
            "positives": p.positives,
            "negatives": p.negatives,
            "sign_test_p": p.sign_test_p,
            "wall_seconds": wall,
        })),
        None => print_json(&json!({ "runs": summary.runs.len(), "wall_seconds": wall })),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Verify { seed, only } => return Ok(cmd_verify(seed, &only)),
        Command::Cover {
            input,
            m,
            seed_index,
            output,
        } => {
            let points = read_matrix(&input)?;
            let protos = greedy_k_center(&points, m, seed_index)?;
            write_matrix(&output, protos.vectors())?;
            print_json(&json!({ "prototypes": protos.len(), "covering_radius": protos.covering_radius() }));
        }
        Command::Fit {
            z,
            y,
            forgetting,
            ridge,
            output,
        } => cmd_fit(&z, &y, forgetting, ridge, &output)?,
        Command::Train { run, lambda, seed } => cmd_train(&run, lambda, seed)?,
        Command::Eval {
            z,
            y,
            labels,
            trials,
            ridge,
            seed,
            raw,
        } => {
            let cfg = EvalConfig {
                trials,
                ridge,
                normalize: !raw,
            };
            let report = cross_class_eval(&read_matrix(&z)?, &read_matrix(&y)?, &read_labels(&labels)?, &cfg, seed)?;
            print_json(&json!(report));
        }
        Command::Experiment { run } => cmd_experiment(&run)?,
        Command::OracleOt {
            p,
            q,
            p_masses,
            q_masses,
            plan,
        } => {
            let pd = masses(&p_masses, read_matrix(&p)?)?;
            let qd = masses(&q_masses, read_matrix(&q)?)?;
            let (tp, cert) = ot_exact(&pd, &qd)?;
            let cost = euclidean_costs(&pd, &qd)?;
            if let Some(path) = plan {
                write_matrix(&path, &tp.plan)?;
            }
            print_json(&json!({
                "cost": tp.cost,
                "dual_value": cert.value,
                "duality_gap": (tp.cost - cert.value).abs(),
                "max_dual_violation": cert.max_violation(&cost),
                "mmd_linear": mmd_linear(&pd, &qd)?,
            }));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

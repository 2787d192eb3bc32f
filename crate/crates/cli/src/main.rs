use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ivsens::design::{design_sensitivity, table5, MixtureSpec, NoiseFamily};
use ivsens::io::{ingest_with, write_csv, IngestOptions, Provenance, ResultDocument, RunConfig};
use ivsens::model::{effect_ratio_estimate, PairedDataset, SensitivityParams};
use ivsens::omnibus::{omnibus_test, OmnibusConfig, DEFAULT_BETA, DEFAULT_GRID_INTERIOR};
use ivsens::reference::{sens_interval, sens_test, sensitivity_value, Engine, SensResult, SensValue, Side};
use ivsens::sim::{figure1_config, run_power, run_table3, Table3Config};
use ivsens::variance::build_q;
use ivsens::Result;

#[derive(Parser)]
#[command(name = "ivsens", version, about = "Sensitivity analysis for matched-pair instrumental variable studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Effect-ratio point estimate and sample summary.
    Estimate(DataArgs),
    /// Sensitivity test of one effect ratio at a given bias level.
    Sensitivity(SensitivityArgs),
    /// Sensitivity interval for the effect ratio.
    Interval(IntervalArgs),
    /// Omnibus test of the proportional-dose model.
    Omnibus(OmnibusArgs),
    /// Design sensitivity under the compliance mixture.
    DesignSens(DesignArgs),
    /// Simulation studies.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct DataArgs {
    /// CSV with columns pair_id,unit,z,d,y,x_1..x_k[,subgroup].
    #[arg(long)]
    input: PathBuf,
    /// Keep only pairs with this subgroup label.
    #[arg(long)]
    subgroup: Option<String>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct McArgs {
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Monte Carlo replicates of the reference distribution.
    #[arg(long, default_value_t = SensitivityParams::DEFAULT_REPS)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Standard-error engine: conventional, regression or pop.
    #[arg(long, default_value = "conventional")]
    engine: Engine,
}

#[derive(Args)]
struct SensitivityArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    mc: McArgs,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    lambda0: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Also search for the sensitivity value up to this bias level.
    #[arg(long)]
    gamma_max: Option<f64>,
    /// Alternative: greater, less or two-sided.
    #[arg(long, default_value = "greater")]
    side: Side,
}

#[derive(Args)]
struct IntervalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    mc: McArgs,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
}

#[derive(Args)]
struct OmnibusArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    #[arg(long, default_value_t = SensitivityParams::DEFAULT_REPS)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Design of the F statistic: regression or pop.
    #[arg(long, default_value = "regression")]
    engine: Engine,
    /// Design of the test inverted for the nuisance interval.
    #[arg(long, default_value = "pop")]
    ci_engine: Engine,
    /// Interior grid points over the interval.
    #[arg(long, default_value_t = DEFAULT_GRID_INTERIOR)]
    grid: usize,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Noise {
    Normal,
    Laplace,
}

#[derive(Args)]
struct DesignArgs {
    /// Emit the full table for both subgroups, both noise families and five
    /// compliance levels.
    #[arg(long, conflicts_with_all = ["lambda", "sigma"])]
    table5: bool,
    #[arg(long, required_unless_present = "table5", allow_negative_numbers = true)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    lambda0: f64,
    #[arg(long, required_unless_present = "table5")]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    compliance: f64,
    #[arg(long, value_enum, default_value_t = Noise::Normal)]
    noise: Noise,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Size and interval length under the effect-modification design.
    #[arg(long, conflicts_with = "power", required_unless_present = "power")]
    table3: bool,
    /// Power curves of the two-subgroup mixture design.
    #[arg(long)]
    power: bool,
    /// Outer replicates.
    #[arg(long, default_value_t = 2000)]
    reps: usize,
    /// Monte Carlo replicates inside each test.
    #[arg(long, default_value_t = 2000)]
    inner_reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run every sample size and covariate dimension, not only n = 100, k = 5.
    #[arg(long)]
    full: bool,
    /// Septic pairs; non-septic pairs are one eighth of this.
    #[arg(long, default_value_t = 200)]
    n_septic: usize,
    /// Comma-separated bias levels for the power curves.
    #[arg(long, value_delimiter = ',', default_value = "1,1.1,1.2,1.3,1.4,1.5,1.6,1.7,1.8,1.9,2,2.1,2.2,2.3,2.4,2.5")]
    gammas: Vec<f64>,
    /// Output CSV; a provenance file is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(args: &DataArgs) -> Result<PairedDataset> {
    ingest_with(&args.input, &IngestOptions { subgroup: args.subgroup.clone(), ..Default::default() })
}

fn data_config(command: &str, args: &DataArgs) -> RunConfig {
    RunConfig::new(command).set("input", args.input.display().to_string()).set("subgroup", &args.subgroup)
}

fn mc_config(cfg: RunConfig, mc: &McArgs) -> RunConfig {
    cfg.set("alpha", mc.alpha).set("reps", mc.reps).set("seed", mc.seed).set("engine", mc.engine)
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).map_err(|e| ivsens::Error::Input(format!("{}: {e}", path.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit_json<T: Serialize>(result: T, cfg: RunConfig, out: &Option<PathBuf>) -> Result<()> {
    let doc = ResultDocument::new(result, cfg);
    let text = doc.to_json()?;
    let mut w = sink(out)?;
    writeln!(w, "{text}").and_then(|_| w.flush()).map_err(|e| ivsens::Error::Input(format!("write failed: {e}")))
}

fn emit_csv<T: Serialize>(rows: &[T], cfg: RunConfig, out: &Option<PathBuf>) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    if let Some(path) = out {
        let text = Provenance::new(cfg).to_json()?;
        let mut w = sink(&Some(sidecar(path)))?;
        writeln!(w, "{text}").and_then(|_| w.flush()).map_err(|e| ivsens::Error::Input(format!("write failed: {e}")))?;
    }
    let mut w = sink(out)?;
    w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| ivsens::Error::Input(format!("write failed: {e}")))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".provenance.json");
    path.with_file_name(name)
}

#[derive(Serialize)]
struct Estimate {
    n: usize,
    lambda_hat: f64,
    sum_outcome_diff: f64,
    sum_dose_diff: f64,
    covariates: Vec<String>,
    subgroups: Vec<String>,
}

#[derive(Serialize)]
struct SensitivityOutput {
    test: SensResult,
    sensitivity_value: Option<SensValue>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Estimate(args) => {
            let data = load(&args)?;
            let est = Estimate {
                n: data.len(),
                lambda_hat: effect_ratio_estimate(&data)?,
                sum_outcome_diff: data.outcome_diffs().iter().sum(),
                sum_dose_diff: data.dose_diffs().iter().sum(),
                covariates: data.covariate_names().to_vec(),
                subgroups: data.subgroups(),
            };
            emit_json(est, data_config("estimate", &args), &args.out)
        }
        Command::Sensitivity(args) => {
            let data = load(&args.data)?;
            let params = SensitivityParams::new(args.gamma, args.mc.alpha, args.mc.reps, args.mc.seed)?;
            let q = build_q(args.mc.engine.into(), &data)?;
            let test = sens_test(&data, args.lambda0, &params, &q, args.side)?;
            let value = match args.gamma_max {
                Some(g) => Some(sensitivity_value(&data, args.lambda0, &params, &q, args.side, g)?),
                None => None,
            };
            let cfg = mc_config(data_config("sensitivity", &args.data), &args.mc)
                .set("lambda0", args.lambda0)
                .set("gamma", args.gamma)
                .set("gamma_max", args.gamma_max)
                .set("side", args.side);
            emit_json(SensitivityOutput { test, sensitivity_value: value }, cfg, &args.data.out)
        }
        Command::Interval(args) => {
            let data = load(&args.data)?;
            let params = SensitivityParams::new(args.gamma, args.mc.alpha, args.mc.reps, args.mc.seed)?;
            let q = build_q(args.mc.engine.into(), &data)?;
            let ci = sens_interval(&data, &params, &q)?;
            let cfg = mc_config(data_config("interval", &args.data), &args.mc).set("gamma", args.gamma).set("side", Side::TwoSided);
            emit_json(ci, cfg, &args.data.out)
        }
        Command::Omnibus(args) => {
            let data = load(&args.data)?;
            let q_f = build_q(args.engine.into(), &data)?;
            let q_ci = build_q(args.ci_engine.into(), &data)?;
            let config = OmnibusConfig {
                beta: args.beta,
                alpha: args.alpha,
                grid_interior: args.grid,
                m_reps: args.reps,
                ci_m_reps: args.reps,
                seed: args.seed,
            };
            let res = omnibus_test(&data, &q_f, &q_ci, &config)?;
            let cfg = data_config("omnibus", &args.data)
                .set("alpha", args.alpha)
                .set("beta", args.beta)
                .set("reps", args.reps)
                .set("seed", args.seed)
                .set("engine", args.engine)
                .set("ci_engine", args.ci_engine)
                .set("grid", args.grid);
            emit_json(res, cfg, &args.data.out)
        }
        Command::DesignSens(args) => {
            if args.table5 {
                return emit_csv(&table5()?, RunConfig::new("design-sens").set("table5", true), &args.out);
            }
            let (lambda, sigma) = (args.lambda.expect("required"), args.sigma.expect("required"));
            let noise = match args.noise {
                Noise::Normal => NoiseFamily::Normal,
                Noise::Laplace => NoiseFamily::Laplace,
            };
            let rest = 0.5 * (1.0 - args.compliance);
            let spec = MixtureSpec::new(lambda, args.lambda0, sigma, args.compliance, rest, rest, noise)?;
            let cfg = RunConfig::new("design-sens")
                .set("lambda", lambda)
                .set("lambda0", args.lambda0)
                .set("sigma", sigma)
                .set("compliance", args.compliance)
                .set("noise", args.noise);
            #[derive(Serialize)]
            struct Out {
                design_sensitivity: f64,
                mean: f64,
                abs_mean: f64,
            }
            let out = Out { design_sensitivity: design_sensitivity(&spec)?, mean: spec.mean(), abs_mean: spec.abs_mean()? };
            emit_json(out, cfg, &args.out)
        }
        Command::Simulate(args) => {
            let cfg = RunConfig::new("simulate").set("reps", args.reps).set("inner_reps", args.inner_reps).set("seed", args.seed);
            if args.table3 {
                let configs: Vec<Table3Config> = if args.full {
                    Table3Config::full_grid(args.reps, args.inner_reps, args.seed)
                } else {
                    [1.0, 2.0]
                        .map(|a| Table3Config { m_reps: args.inner_reps, seed: args.seed, ..Table3Config::new(100, 5, a, args.reps) })
                        .to_vec()
                };
                let rows = run_table3(&configs)?;
                emit_csv(&rows, cfg.set("table3", true).set("full", args.full), &args.out)
            } else {
                let pc = figure1_config(args.n_septic, args.gammas.clone(), args.reps, args.inner_reps, args.seed)?;
                let rows = run_power(&pc)?;
                let cfg = cfg.set("power", true).set("n_septic", args.n_septic).set("gammas", &args.gammas).set("alpha", pc.alpha);
                emit_csv(&rows, cfg, &args.out)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("IVSENS_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

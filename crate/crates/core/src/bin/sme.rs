use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sme_core::harness::{emit, run, Format, Manifest, RunOptions, Scenario, Template};
use sme_core::{CorrectionCriterion, EstimatorConfig, InconsistencyPolicy, PredictionCriterion};

#[derive(Parser)]
#[command(name = "sme", version, about = "Ellipsoidal set-membership state estimation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Pred {
    Vol,
    Trace,
}

#[derive(Clone, Copy, ValueEnum)]
enum Corr {
    Sigma,
    Vol,
    Ssal,
}

#[derive(Clone, Copy, ValueEnum)]
enum Emit {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Skip,
    Abort,
}

#[derive(Clone, Copy, ValueEnum)]
enum TemplateArg {
    Stable,
    Rotation,
    Integrator,
}

#[derive(Subcommand)]
enum Command {
    /// Run the estimator on a scenario and write per-step records.
    Estimate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value = "vol")]
        pred: Pred,
        #[arg(long, value_enum, default_value = "sigma")]
        corr: Corr,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Monte Carlo audit points per correction step.
        #[arg(long, default_value_t = 0)]
        samples: usize,
        /// Output directory for the records and `manifest.json`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        emit: Emit,
        #[arg(long)]
        diagnostics: bool,
        #[arg(long, value_enum, default_value = "skip")]
        policy: Policy,
        /// Record wall-clock step times in the ms column (breaks byte-identical output).
        #[arg(long)]
        timing: bool,
    },
    /// Run every prediction/correction combination and report the audits.
    Verify {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        all_criteria: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        samples: usize,
    },
    /// Write a generator-backed scenario file to stdout.
    GenScenario {
        #[arg(long, value_enum)]
        template: TemplateArg,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn pred_of(p: Pred) -> PredictionCriterion {
    match p {
        Pred::Vol => PredictionCriterion::VolumeMin,
        Pred::Trace => PredictionCriterion::trace(),
    }
}

fn corr_of(c: Corr) -> CorrectionCriterion {
    match c {
        Corr::Sigma => CorrectionCriterion::SigmaMin,
        Corr::Vol => CorrectionCriterion::VolumeMin,
        Corr::Ssal => CorrectionCriterion::SsalMin,
    }
}

fn name_pred(p: Pred) -> &'static str {
    match p {
        Pred::Vol => "vol",
        Pred::Trace => "trace",
    }
}

fn name_corr(c: Corr) -> &'static str {
    match c {
        Corr::Sigma => "sigma",
        Corr::Vol => "vol",
        Corr::Ssal => "ssal",
    }
}

const EXIT_AUDIT: u8 = 1;
const EXIT_INPUT: u8 = 2;

fn load(path: &Path) -> Result<Scenario, ExitCode> {
    Scenario::load(path).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        ExitCode::from(EXIT_INPUT)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Estimate { scenario, pred, corr, seed, samples, out, emit: fmt, diagnostics, policy, timing } => {
            let s = match load(&scenario) {
                Ok(s) => s,
                Err(code) => return code,
            };
            let inconsistency = match policy {
                Policy::Skip => InconsistencyPolicy::Skip,
                Policy::Abort => InconsistencyPolicy::Abort,
            };
            let config =
                EstimatorConfig { pred: pred_of(pred), corr: corr_of(corr), inconsistency, diagnostics, ..EstimatorConfig::default() };
            let opts = RunOptions { config, seed, samples, timing };
            let output = match run(&s, &opts) {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_AUDIT);
                }
            };
            let format = match fmt {
                Emit::Csv => Format::Csv,
                Emit::Json => Format::Json,
            };
            let manifest = Manifest {
                tool: "sme".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                seed,
                scenario: scenario.display().to_string(),
                pred: name_pred(pred).into(),
                corr: name_corr(corr).into(),
                policy: match policy {
                    Policy::Skip => "skip".into(),
                    Policy::Abort => "abort".into(),
                },
                samples,
                format,
                output: format!("run.{}", format.extension()),
            };
            if let Err(e) = emit(&output.records, format, &out, &manifest) {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_INPUT);
            }
            if diagnostics {
                if let Some((v, s)) = output.diagnostics.last() {
                    println!("bound factors: v = {v:e}, s = {s:e}");
                }
            }
            if output.audit.is_clean() {
                ExitCode::SUCCESS
            } else {
                eprintln!("audit violations: {:?}", output.audit);
                ExitCode::from(EXIT_AUDIT)
            }
        }
        Command::Verify { scenario, all_criteria, seed, samples } => {
            let s = match load(&scenario) {
                Ok(s) => s,
                Err(code) => return code,
            };
            let preds: &[Pred] = if all_criteria { &[Pred::Vol, Pred::Trace] } else { &[Pred::Vol] };
            let corrs: &[Corr] = if all_criteria { &[Corr::Sigma, Corr::Vol, Corr::Ssal] } else { &[Corr::Sigma] };
            let combos: Vec<(Pred, Corr)> = preds.iter().flat_map(|p| corrs.iter().map(move |c| (*p, *c))).collect();
            let results: Vec<_> = std::thread::scope(|scope| {
                let handles: Vec<_> = combos
                    .iter()
                    .map(|&(p, c)| {
                        let s = &s;
                        scope.spawn(move || {
                            let config = EstimatorConfig { pred: pred_of(p), corr: corr_of(c), ..EstimatorConfig::default() };
                            run(s, &RunOptions { config, seed, samples, timing: false })
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            });
            let mut clean = true;
            for ((p, c), r) in combos.iter().zip(results) {
                let label = format!("pred={:<5} corr={:<5}", name_pred(*p), name_corr(*c));
                match r {
                    Ok(o) if o.audit.is_clean() => println!("PASS {label} steps={}", o.records.len() - 1),
                    Ok(o) => {
                        clean = false;
                        println!("FAIL {label} {:?}", o.audit);
                    }
                    Err(e) => {
                        clean = false;
                        println!("FAIL {label} error: {e}");
                    }
                }
            }
            if clean {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_AUDIT)
            }
        }
        Command::GenScenario { template, n, horizon, seed } => {
            if n == 0 || horizon == 0 {
                eprintln!("error: n and horizon must be positive");
                return ExitCode::from(EXIT_INPUT);
            }
            let t = match template {
                TemplateArg::Stable => Template::Stable,
                TemplateArg::Rotation => Template::Rotation,
                TemplateArg::Integrator => Template::Integrator,
            };
            println!("{}", Scenario::from_template(t, n, horizon, seed).to_json());
            ExitCode::SUCCESS
        }
    }
}

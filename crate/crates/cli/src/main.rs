//! `camd`: coverage planning, theory validation and policy comparison
//! campaigns from the command line.

use std::io::Write;
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use camd_core::config::{BackendSpec, CampaignConfig, Profile};
use camd_core::coverage::{budget_for_risk, delta_coverage_size};
use camd_core::distribution::DifficultyDistribution;
use camd_core::experiment::{run_policy_comparison, run_theory_suite, ComparisonReport};
use camd_core::report::{self, Format};
use camd_core::synthetic::SyntheticBackend;
use camd_core::wire::{serve, WireBackend};
use camd_core::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "camd", version, about = "Coverage-aware adaptive sampling experiments")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Campaign file (TOML), layered over the selected profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the campaign seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "ci", value_parser = ["ci", "full"])]
    profile: String,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo and quadrature check of the tail-regime decay rates.
    Theory {
        #[arg(long, default_value = "csv", value_parser = ["csv", "json"])]
        format: String,
    },
    /// Runs every configured stopping policy on the same instances.
    Compare {
        #[arg(long, default_value = "csv", value_parser = ["csv", "json"])]
        format: String,
    },
    /// Minimal sample count reaching coverage 1 - delta at success probability s.
    Ndelta {
        #[arg(long = "s", required = true, num_args = 1..)]
        s: Vec<f64>,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
    },
    /// Smallest budget K with residual(K) <= epsilon - r_irr.
    Kstar {
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.0)]
        r_irr: f64,
        /// Difficulty distribution as JSON; defaults to the campaign's.
        #[arg(long)]
        distribution: Option<String>,
    },
    /// Serves the synthetic backend over the line protocol.
    ServeBackend {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. }
        | Error::ParameterDomain(_)
        | Error::UnsupportedFamily(_)
        | Error::UnsupportedMode(_)
        | Error::Json(_) => 2,
        Error::InfeasibleTarget { .. } | Error::BudgetOverflow { .. } => 3,
        Error::Io { .. } => 4,
        Error::Campaign { source, .. } => exit_code(source),
        _ => 1,
    }
}

fn load_config(global: &GlobalArgs) -> camd_core::Result<CampaignConfig> {
    let profile: Profile = global.profile.parse()?;
    let mut config = match &global.config {
        Some(path) => CampaignConfig::load(path, profile)?,
        None => CampaignConfig::profile(profile),
    };
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if let Some(out) = &global.out {
        config.output.dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn compare(config: &CampaignConfig) -> camd_core::Result<ComparisonReport> {
    let setup = config.comparison_setup();
    match &config.backend {
        BackendSpec::Synthetic => run_policy_comparison(&setup, || {
            SyntheticBackend::new(
                config.comparison.distribution.clone(),
                config.synthetic,
                config.seed,
            )
        }),
        BackendSpec::Wire { address } => {
            run_policy_comparison(&setup, || WireBackend::connect(address.as_str()))
        }
    }
}

fn run(cli: Cli) -> camd_core::Result<()> {
    let mut stdout = std::io::stdout().lock();
    let out = |e: std::io::Error| Error::io("<stdout>", e);
    match cli.command {
        Command::Ndelta { s, delta } => {
            for value in s {
                let n = delta_coverage_size(value, delta)?;
                writeln!(stdout, "s={value} delta={delta} n_delta={n}").map_err(out)?;
            }
        }
        Command::Kstar {
            epsilon,
            r_irr,
            distribution,
        } => {
            let dist: DifficultyDistribution = match distribution {
                Some(json) => serde_json::from_str(&json)?,
                None => load_config(&cli.global)?.comparison.distribution,
            };
            let plan = budget_for_risk(&dist, epsilon, r_irr)?;
            writeln!(
                stdout,
                "k={} residual={} target={} asymptotic_estimate={}",
                plan.k,
                report::float(plan.residual_at_k),
                report::float(plan.target_residual),
                plan.asymptotic_estimate.map(report::float).unwrap_or_else(|| "none".into())
            )
            .map_err(out)?;
        }
        Command::Theory { format } => {
            let config = load_config(&cli.global)?;
            if let BackendSpec::Wire { .. } = config.backend {
                return Err(Error::UnsupportedMode(
                    "the theory suite needs the synthetic backend".into(),
                ));
            }
            let format: Format = format.parse()?;
            report::prepare_output_dir(&config.output.dir)?;
            let result = run_theory_suite(&config.theory.cases, config.seed)?;
            for path in report::emit_theory_report(&result, format, &config.output.dir)? {
                eprintln!("wrote {}", path.display());
            }
            write!(stdout, "{}", report::theory_markdown(&result)).map_err(out)?;
        }
        Command::Compare { format } => {
            let config = load_config(&cli.global)?;
            let format: Format = format.parse()?;
            let dir = config.output.dir.clone();
            report::prepare_output_dir(&dir)?;
            let result = match compare(&config) {
                Ok(r) => r,
                Err(Error::Campaign {
                    instance_id,
                    source,
                    partial,
                }) => {
                    if !partial.is_empty() {
                        let summaries = camd_core::experiment::summarize(&partial);
                        let written = report::emit_report(&partial, &summaries, format, &dir)?;
                        eprintln!("flushed {} partial records to {}", partial.len(), written[0].display());
                    }
                    return Err(Error::Campaign {
                        instance_id,
                        source,
                        partial: Vec::new(),
                    });
                }
                Err(e) => return Err(e),
            };
            for path in report::emit_report(&result.records, &result.summaries, format, &dir)? {
                eprintln!("wrote {}", path.display());
            }
            if config.output.decision_log {
                let path = report::emit_decision_log(&result.records, &dir)?;
                eprintln!("wrote {}", path.display());
            }
            write!(stdout, "{}", report::summary_markdown(&result.summaries)).map_err(out)?;
        }
        Command::ServeBackend { addr } => {
            let config = load_config(&cli.global)?;
            let listener = TcpListener::bind(&addr).map_err(|e| Error::io(&addr, e))?;
            let local = listener.local_addr().map_err(|e| Error::io(&addr, e))?;
            writeln!(stdout, "listening on {local}").map_err(out)?;
            stdout.flush().map_err(out)?;
            drop(stdout);
            let dist = config.comparison.distribution.clone();
            let synthetic = config.synthetic;
            let seed = config.seed;
            serve(listener, move || SyntheticBackend::new(dist.clone(), synthetic, seed))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

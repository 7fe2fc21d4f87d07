use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use delaysched::experiment::{compare, Experiment, ExperimentConfig, ExperimentError, Report, TraceSource};
use delaysched::workload::scenario_presets;

#[derive(Parser)]
#[command(name = "delaysched", version, about = "Serverless scheduling simulator and experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// TOML experiment config.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Named preset, used when no config is given.
    #[arg(long, short)]
    preset: Option<String>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured strategy over the same traces and report.
    Run {
        #[command(flatten)]
        source: Source,
        /// Directory for report.json, report.txt and the CSV/JSONL logs.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Keep only these strategy labels (repeatable or comma separated).
        #[arg(long, short, value_delimiter = ',')]
        strategy: Vec<String>,
        #[arg(long)]
        replications: Option<u32>,
        /// Print report.json instead of the text summary.
        #[arg(long)]
        json: bool,
    },
    /// Relative improvement table between two reports, or between two
    /// strategies of one report.
    Compare {
        /// report.json or a run output directory.
        a: PathBuf,
        b: Option<PathBuf>,
        /// Strategy label taken from the first report.
        #[arg(long = "a-label")]
        a_label: Option<String>,
        /// Strategy label taken from the second report.
        #[arg(long = "b-label")]
        b_label: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Write the trace of one replication as JSON lines.
    GenTrace {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 0)]
        replication: u32,
        /// Output file; stdout when omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// List the built-in presets.
    Presets {
        /// Print each preset as JSON.
        #[arg(long)]
        verbose: bool,
    },
}

/// Config problems exit with 2, everything else with 1.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<ExperimentError>() {
        Some(
            ExperimentError::Config(_)
            | ExperimentError::UnknownPreset(_)
            | ExperimentError::Catalog(_)
            | ExperimentError::Workload(_)
            | ExperimentError::Sched(_)
            | ExperimentError::Toml(_),
        ) => 2,
        _ => 1,
    }
}

fn load(source: &Source) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match (&source.config, &source.preset) {
        (Some(path), _) => {
            let mut c = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
            if source.preset.is_some() {
                c.preset = source.preset.clone();
            }
            c
        }
        (None, Some(p)) => ExperimentConfig::from_preset(p),
        (None, None) => return Err(ExperimentError::Config("give --config or --preset".into()).into()),
    };
    if source.seed.is_some() {
        cfg.seed = source.seed;
    }
    Ok(cfg)
}

fn filter_strategies(exp: &mut Experiment, keep: &[String]) -> Result<(), ExperimentError> {
    if keep.is_empty() {
        return Ok(());
    }
    for k in keep {
        if !exp.strategies.iter().any(|s| &s.label() == k) {
            let known: Vec<String> = exp.strategies.iter().map(|s| s.label()).collect();
            return Err(ExperimentError::Config(format!(
                "unknown strategy {k:?}; configured: {}",
                known.join(", ")
            )));
        }
    }
    exp.strategies.retain(|s| keep.contains(&s.label()));
    Ok(())
}

fn read_report(path: &Path) -> anyhow::Result<Report> {
    let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
    Ok(Report::from_json(&text)?)
}

fn only(mut r: Report, label: &Option<String>) -> anyhow::Result<Report> {
    if let Some(l) = label {
        if r.strategy(l).is_none() {
            bail!(ExperimentError::Config(format!("report has no strategy {l:?}")));
        }
        r.strategies.retain(|s| &s.label == l);
    }
    Ok(r)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            source,
            out,
            strategy,
            replications,
            json,
        } => {
            let mut cfg = load(&source)?;
            if let Some(r) = replications {
                cfg.replications = r;
            }
            let mut exp = cfg.resolve()?;
            filter_strategies(&mut exp, &strategy)?;
            let art = exp.run()?;
            if let Some(dir) = &out {
                art.write(dir)?;
            }
            if json {
                println!("{}", art.report.to_json());
            } else {
                print!("{}", art.report.summary());
            }
            if !art.report.meta.audit_ok {
                bail!("event-log audit failed");
            }
        }
        Command::Compare {
            a,
            b,
            a_label,
            b_label,
            json,
        } => {
            let ra = read_report(&a)?;
            let rb = match &b {
                Some(p) => read_report(p)?,
                None => {
                    if a_label.is_none() || b_label.is_none() {
                        bail!(ExperimentError::Config(
                            "with one report, give both --a-label and --b-label".into()
                        ));
                    }
                    ra.clone()
                }
            };
            let table = compare(&only(ra, &a_label)?, &only(rb, &b_label)?)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&table)?);
            } else {
                print!("{}", table.table());
            }
        }
        Command::GenTrace {
            source,
            replication,
            out,
        } => {
            let exp = load(&source)?.resolve()?;
            let trace = match &exp.source {
                TraceSource::File(t) => t.clone(),
                TraceSource::Generate(_) => exp.trace(replication)?,
            };
            match out {
                Some(p) => trace.write_jsonl(BufWriter::new(fs::File::create(&p)?))?,
                None => trace.write_jsonl(BufWriter::new(io::stdout().lock()))?,
            }
            eprintln!("{} events, trace {}", trace.events.len(), trace.hash());
        }
        Command::Presets { verbose } => {
            let mut stdout = io::stdout().lock();
            for s in scenario_presets() {
                if verbose {
                    writeln!(stdout, "{}", serde_json::to_string_pretty(&s)?)?;
                } else {
                    writeln!(stdout, "{:<10} {}", s.name, s.description)?;
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

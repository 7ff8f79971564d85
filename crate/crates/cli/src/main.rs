use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use iab_cli::sweep::write_sweep_csv;
use iab_cli::{emit_plot_data, load_config, run_sweep, SweepSpec};
use iab_core::connectivity::SWITCH_LOG_HEADER;
use iab_core::engine::Simulation;
use iab_core::traffic::write_session_log;

#[derive(Parser)]
#[command(name = "iabsim", version, about = "Slot-level simulator for all-mmWave IAB networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file applied over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one field, e.g. `--set num_iab=7`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and print its metrics report.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Final topology as CSV.
        #[arg(long)]
        topology: Option<PathBuf>,
        /// Per-slot allocation trace as CSV (large).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Serving-node switch events as CSV.
        #[arg(long)]
        switch_log: Option<PathBuf>,
        /// Per-session log as CSV.
        #[arg(long)]
        sessions: Option<PathBuf>,
        /// Print the effective configuration and exit.
        #[arg(long)]
        dump_config: bool,
    },
    /// Sweep a preset or spec file over seeds and write the sweep CSV.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Built-in setup: fig3, fig4 or fig5.
        #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
        preset: Option<String>,
        /// Sweep spec file.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Seeds per point; overrides the preset or spec.
        #[arg(long)]
        seeds: Option<usize>,
        /// Parallel runs; defaults to the number of CPUs.
        #[arg(long)]
        workers: Option<usize>,
        /// Sweep CSV path; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a sweep CSV into tidy `series,x,y,y_stddev` plot data.
    Plotdata {
        /// Sweep CSV written by `sweep`.
        #[arg(long)]
        input: PathBuf,
        /// Plot data path; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            cfg,
            out,
            topology,
            trace,
            switch_log,
            sessions,
            dump_config,
        } => {
            let cfg = load_config(cfg.config.as_deref(), &cfg.sets)?;
            if dump_config {
                print!("{}", cfg.to_kv_string());
                return Ok(());
            }
            let mut sim = Simulation::new(cfg)?;
            if let Some(p) = &trace {
                sim.set_trace(Box::new(create(p)?))?;
            }
            while !sim.is_finished() {
                sim.step()?;
            }
            let report = sim.report()?;
            let mut w = output(out.as_deref())?;
            writeln!(w, "{}", report.to_json())?;
            if let Some(p) = &topology {
                sim.topology().write_csv(create(p)?)?;
            }
            if let Some(p) = &switch_log {
                let mut w = create(p)?;
                writeln!(w, "{SWITCH_LOG_HEADER}")?;
                for ev in sim.switch_log() {
                    writeln!(w, "{}", ev.csv_row())?;
                }
            }
            if let Some(p) = &sessions {
                write_session_log(create(p)?, sim.sessions())?;
            }
        }
        Command::Sweep {
            cfg,
            preset,
            spec,
            seeds,
            workers,
            out,
        } => {
            let mut spec = match (&preset, &spec) {
                (Some(name), _) => SweepSpec::preset(name)?,
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    SweepSpec::parse(&text)?
                }
                (None, None) => unreachable!("clap requires one of --preset/--spec"),
            };
            let base = spec.base_config(cfg.config.as_deref(), &cfg.sets)?;
            if let Some(n) = seeds {
                spec.seeds = n;
            }
            let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let rows = run_sweep(&spec, &base, workers)?;
            write_sweep_csv(&spec, &rows, output(out.as_deref())?)?;
        }
        Command::Plotdata { input, out } => {
            let file = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            emit_plot_data(file, output(out.as_deref())?)?;
        }
    }
    Ok(())
}

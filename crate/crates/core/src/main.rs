use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use zenoq::config::{parse_config_in, preset, PRESETS};
use zenoq::runner::run_experiment;
use zenoq::{Error, Experiment, Result};

/// `println!` that stays quiet when stdout has been closed, e.g. by `head`.
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "zenoq", version, about = "Predissociation under repeated measurement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Output directory, overriding output.directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Measurement seed, overriding measurement.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for τ sweeps.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Sweep the measurement interval over a comma-separated list in fs.
    Scan {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        tau: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check a config and print its resolved form.
    Validate { config: PathBuf },
    /// List built-in presets, or print one.
    Presets { name: Option<String> },
}

struct Overrides {
    out: Option<PathBuf>,
    seed: Option<u64>,
    taus: Option<Vec<f64>>,
}

fn load(path: &Path, ov: &Overrides) -> Result<Experiment> {
    let text = std::fs::read_to_string(path)?;
    let mut user: Value =
        serde_json::from_str(&text).map_err(|e| Error::Config { path: "<root>".into(), msg: e.to_string() })?;
    if let Some(obj) = user.as_object_mut() {
        if let Some(out) = &ov.out {
            let output = obj.entry("output").or_insert_with(|| json!({}));
            if let Some(o) = output.as_object_mut() {
                o.insert("directory".into(), json!(out.to_string_lossy()));
            }
        }
        if ov.seed.is_some() || ov.taus.is_some() {
            let Some(m) = obj.get_mut("measurement").and_then(Value::as_object_mut) else {
                return Err(Error::Config { path: "measurement".into(), msg: "required by --seed or --tau".into() });
            };
            if let Some(seed) = ov.seed {
                m.insert("seed".into(), json!(seed));
            }
            if let Some(taus) = &ov.taus {
                m.remove("tau_fs");
                m.insert("tau_list_fs".into(), json!(taus));
            }
        }
    }
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    parse_config_in(&user.to_string(), base)
}

fn execute(config: &Path, ov: Overrides, threads: Option<usize>) -> Result<ExitCode> {
    let exp = load(config, &ov)?;
    let outcome = run_experiment(&exp, threads)?;
    for r in &outcome.runs {
        match r.gamma_cm1() {
            Some(g) => out!("{:<16} gamma = {g:.6} cm^-1  [{}]", r.name, r.status),
            None => out!("{:<16} no rate  [{}]", r.name, r.status),
        }
    }
    out!("wrote {}", outcome.directory.display());
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    Ok(if outcome.warnings.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed, threads } => execute(&config, Overrides { out, seed, taus: None }, threads),
        Command::Scan { config, tau, out, seed, threads } => {
            execute(&config, Overrides { out, seed, taus: Some(tau) }, threads)
        }
        Command::Validate { config } => load(&config, &Overrides { out: None, seed: None, taus: None }).map(|e| {
            out!("{}", e.config_json());
            ExitCode::SUCCESS
        }),
        Command::Presets { name: None } => {
            for p in PRESETS {
                out!("{p}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Presets { name: Some(n) } => match preset(&n) {
            Some(v) => {
                out!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
                Ok(ExitCode::SUCCESS)
            }
            None => Err(Error::Invalid(format!("unknown preset '{n}'"))),
        },
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

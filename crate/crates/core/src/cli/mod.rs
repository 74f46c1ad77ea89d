//! Command-line front end: `mamlab <subcommand> --scenario file.toml`.
//!
//! Exit codes: 0 success, 1 a statistical gate failed, 2 bad configuration
//! (or a run that the configuration makes impossible). On exit 2 nothing is
//! written and a JSON error object goes to stderr.

pub mod output;
pub mod run;
pub mod scenario;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use output::Artifact;
pub use run::{execute, Outcome};
pub use scenario::{load_scenario, parse_scenario, ConfigError, Scenario, ScenarioModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Chain paths, one CSV per replicate.
    Simulate,
    /// Limit ODE path.
    LimitOde,
    /// Euler–Maruyama paths of the limit diffusion.
    Diffuse,
    /// Moment hierarchy blocks.
    Moments,
    /// Discrete vs limit generator gaps over N_list.
    GeneratorCheck,
    /// Sup-error convergence (mamwid) or moment z-tests (mamwidams).
    Converge,
    /// Annealed vs quenched-mixture KS test.
    Annealed,
}

#[derive(Debug, Clone, Parser)]
#[command(name = "mamlab", version, about = "Multiagent type dynamics in varying environments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the machine's parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Also write gnuplot-ready two-column `.dat` files.
    #[arg(long, global = true)]
    pub emit_plot_data: bool,
    #[arg(long = "N", global = true)]
    pub n: Option<u64>,
    #[arg(long = "T", global = true)]
    pub t: Option<f64>,
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n: Option<u64>,
    pub t: Option<f64>,
    pub replicates: Option<usize>,
}

impl Overrides {
    /// Applies the overrides and re-validates.
    pub fn apply(&self, mut s: Scenario) -> Result<Scenario, ConfigError> {
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(n) = self.n {
            s.n = Some(n);
            s.n_list = None;
        }
        if let Some(t) = self.t {
            s.t_end = t;
        }
        if let Some(m) = self.replicates {
            s.replicates = m;
        }
        s.validate()?;
        Ok(s)
    }
}

fn error_json(kind: &str, fields: serde_json::Value) -> String {
    let mut obj = serde_json::json!({ "error": kind });
    if let (Some(o), Some(extra)) = (obj.as_object_mut(), fields.as_object()) {
        o.extend(extra.clone());
    }
    obj.to_string()
}

fn config_error_json(e: &ConfigError) -> String {
    match e {
        ConfigError::Parse { line, message } => {
            error_json("parse", serde_json::json!({ "line": line, "message": message }))
        }
        ConfigError::Validation { field, message } => {
            error_json("validation", serde_json::json!({ "field": field, "message": message }))
        }
    }
}

/// Runs the CLI with `args` (including the program name); returns the exit
/// code.
pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) {
                print!("{e}");
                return 0;
            }
            eprintln!(
                "{}",
                error_json("usage", serde_json::json!({ "message": e.to_string() }))
            );
            return 2;
        }
    };
    let Some(path) = cli.scenario.as_deref() else {
        eprintln!(
            "{}",
            error_json(
                "usage",
                serde_json::json!({ "message": "--scenario <file> is required" })
            )
        );
        return 2;
    };
    let overrides = Overrides {
        seed: cli.seed,
        n: cli.n,
        t: cli.t,
        replicates: cli.replicates,
    };
    let scenario = match load_scenario(path).and_then(|s| overrides.apply(s)) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{}", config_error_json(&e));
            return 2;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = cli.threads {
        pool = pool.num_threads(k);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!(
                "{}",
                error_json("runtime", serde_json::json!({ "message": e.to_string() }))
            );
            return 2;
        }
    };
    let outcome = match pool.install(|| execute(cli.command, &scenario, cli.emit_plot_data)) {
        Ok(o) => o,
        Err(e) => {
            eprintln!(
                "{}",
                error_json("runtime", serde_json::json!({ "message": e.to_string() }))
            );
            return 2;
        }
    };
    let dir = cli.out.unwrap_or_else(|| PathBuf::from(&scenario.out));
    if let Err(e) = output::write_all(&dir, &outcome.artifacts) {
        eprintln!("{}", error_json("io", serde_json::json!({ "message": e.to_string() })));
        return 2;
    }
    if let Some(summary) = &outcome.summary {
        println!("{summary}");
    }
    if outcome.gate_passed {
        0
    } else {
        eprintln!(
            "{}",
            error_json("gate", serde_json::json!({ "message": "statistical gate failed" }))
        );
        1
    }
}

pub fn main() -> i32 {
    run_with_args(std::env::args_os())
}

//! `apheat`: convergence, island and conditioning runs from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{execute, RunError};
use config::{parse_config_text, Command, Resolved, UsageError};

#[derive(Parser, Debug)]
#[command(name = "apheat", version, about = "Anisotropic heat equation solver", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Spatial convergence against the manufactured solution.
    ConvergeSpace(Common),
    /// Temporal convergence on a fixed grid.
    ConvergeTime(Common),
    /// Magnetic-island diffusion runs.
    Island(Common),
    /// Condition estimates of the implicit operators.
    Condition(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// `key=value` file; flags override it.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Extra `key=value` overrides (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Scheme(s): p, e_ap, e_aps, rk_ap, rk_aps (comma separated).
    #[arg(long)]
    variant: Option<String>,
    /// Anisotropy ratio(s) in (0, 1], or `limit`.
    #[arg(long)]
    epsilon: Option<String>,
    /// Intervals per side (even).
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    /// Mesh sizes for converge-space.
    #[arg(long)]
    levels: Option<String>,
    /// Time steps for converge-time.
    #[arg(long)]
    taus: Option<String>,
    #[arg(long = "t-final")]
    t_final: Option<String>,
    /// Field-line curvature of the manufactured problem.
    #[arg(long)]
    alpha: Option<String>,
    /// exact or temporal.
    #[arg(long)]
    measure: Option<String>,
    #[arg(long = "reference-factor")]
    reference_factor: Option<String>,
    /// Island boundary case: dirichlet or neumann.
    #[arg(long)]
    bc: Option<String>,
    /// Island amplitude.
    #[arg(long = "amplitude", alias = "A")]
    amplitude: Option<String>,
    /// Island rotation frequency.
    #[arg(long)]
    omega: Option<String>,
    /// x0,x1,y0,y1.
    #[arg(long)]
    domain: Option<String>,
    /// dirichlet or natural.
    #[arg(long = "q-boundary")]
    q_boundary: Option<String>,
    #[arg(long = "profile-every")]
    profile_every: Option<String>,
    #[arg(long = "profile-samples")]
    profile_samples: Option<String>,
    /// standard or fast_rotation.
    #[arg(long)]
    preset: Option<String>,
    /// Also write the final state as legacy VTK.
    #[arg(long)]
    vtk: bool,
}

impl Common {
    fn overrides(&self) -> Result<Vec<(String, String)>, UsageError> {
        let named = [
            ("variant", &self.variant),
            ("epsilon", &self.epsilon),
            ("grid", &self.grid),
            ("tau", &self.tau),
            ("steps", &self.steps),
            ("levels", &self.levels),
            ("taus", &self.taus),
            ("t_final", &self.t_final),
            ("alpha", &self.alpha),
            ("measure", &self.measure),
            ("reference_factor", &self.reference_factor),
            ("bc", &self.bc),
            ("amplitude", &self.amplitude),
            ("omega", &self.omega),
            ("domain", &self.domain),
            ("q_boundary", &self.q_boundary),
            ("profile_every", &self.profile_every),
            ("profile_samples", &self.profile_samples),
            ("preset", &self.preset),
        ];
        let mut out: Vec<(String, String)> = Vec::new();
        for s in &self.set {
            let (k, v) = s.split_once('=').ok_or_else(|| UsageError(format!("--set expects key=value, got '{s}'")))?;
            out.push((k.trim().replace('-', "_"), v.trim().to_string()));
        }
        out.extend(named.into_iter().filter_map(|(k, v)| v.clone().map(|v| (k.to_string(), v))));
        if self.vtk {
            out.push(("vtk".into(), "true".into()));
        }
        Ok(out)
    }
}

fn resolve(command: Command, args: &Common) -> Result<Resolved, UsageError> {
    let file = match &args.config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| UsageError(format!("cannot read {}: {e}", p.display())))?;
            parse_config_text(&text)?
        }
        None => Vec::new(),
    };
    Resolved::new(command, &file, &args.overrides()?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match &cli.command {
        Sub::ConvergeSpace(a) => (Command::ConvergeSpace, a),
        Sub::ConvergeTime(a) => (Command::ConvergeTime, a),
        Sub::Island(a) => (Command::Island, a),
        Sub::Condition(a) => (Command::Condition, a),
    };
    let result = resolve(command, args).map_err(RunError::from).and_then(|cfg| execute(&cfg, &args.out));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(RunError::Solver(e)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

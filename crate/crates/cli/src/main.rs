use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mixnl_cli::{assemble, run, Command};

/// Mixed local-nonlocal ground states on the unit ball: solve, inspect the
/// linearization and run the verification battery.
#[derive(Parser, Debug)]
#[command(name = "mixnl", version, about)]
struct Cli {
    /// Subcommand to run (defaults to the config file's, then `verify`).
    #[arg(value_enum)]
    command: Option<Command>,
    /// Configuration file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    s: Option<String>,
    #[arg(long)]
    p: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<String>,
    /// Number of interior elements.
    #[arg(long)]
    mesh: Option<String>,
    #[arg(long)]
    grading: Option<String>,
    /// Exterior truncation radius.
    #[arg(long)]
    rmax: Option<String>,
    /// Gauss-Jacobi order for the kernels.
    #[arg(long)]
    quad: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Worker threads (0 uses every core).
    #[arg(long)]
    jobs: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Comma-separated subset of json,csv,svg.
    #[arg(long)]
    format: Option<String>,
    /// Negative control: none, third-eigenfunction or shifted-potential.
    #[arg(long)]
    control: Option<String>,
    #[arg(long)]
    refine: Option<String>,
    #[arg(long)]
    eigenpairs: Option<String>,
    #[arg(long)]
    starts: Option<String>,
    #[arg(long = "p-end")]
    p_end: Option<String>,
    #[arg(long)]
    knots: Option<String>,
    #[arg(long = "s-knots")]
    s_knots: Option<String>,
    #[arg(long)]
    heights: Option<String>,
    /// Run the verification battery over the parameter grid.
    #[arg(long)]
    grid: bool,
}

impl Cli {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let pairs: [(&'static str, &Option<String>); 21] = [
            ("dim", &self.dim),
            ("s", &self.s),
            ("p", &self.p),
            ("lambda", &self.lambda),
            ("mesh", &self.mesh),
            ("grading", &self.grading),
            ("rmax", &self.rmax),
            ("quad", &self.quad),
            ("tol", &self.tol),
            ("seed", &self.seed),
            ("jobs", &self.jobs),
            ("out", &self.out),
            ("format", &self.format),
            ("control", &self.control),
            ("refine", &self.refine),
            ("eigenpairs", &self.eigenpairs),
            ("starts", &self.starts),
            ("p_end", &self.p_end),
            ("knots", &self.knots),
            ("s_knots", &self.s_knots),
            ("heights", &self.heights),
        ];
        let mut out: Vec<(&'static str, String)> =
            pairs.iter().filter_map(|(k, v)| v.as_ref().map(|v| (*k, v.clone()))).collect();
        if self.grid {
            out.push(("grid", "true".into()));
        }
        out
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    // out-of-range values still reach `run`, which records them in the report
    let cfg = match assemble(cli.command, cli.config.as_deref(), &cli.overrides()) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if cfg.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let report = run::run(&cfg);
    print!("{}", run::summary(&report));
    ExitCode::from(report.exit_code() as u8)
}

//! Run configuration: a line-oriented `key = value` file, overridden by flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mixed_nonlocal::cache::MeshSettings;
use mixed_nonlocal::discretization::RadialMesh;
use mixed_nonlocal::ground_state::{ProblemParams, SolverOptions};
use mixed_nonlocal::verification::{BatteryOptions, Control};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    Spectrum,
    Verify,
    ContinueP,
    ContinueS,
    Extend,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Spectrum => "spectrum",
            Command::Verify => "verify",
            Command::ContinueP => "continue-p",
            Command::ContinueS => "continue-s",
            Command::Extend => "extend",
        }
    }
}

impl FromStr for Command {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "solve" => Command::Solve,
            "spectrum" => Command::Spectrum,
            "verify" => Command::Verify,
            "continue-p" => Command::ContinueP,
            "continue-s" => Command::ContinueS,
            "extend" => Command::Extend,
            _ => return Err(format!("unknown command `{s}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Svg,
}

impl Format {
    fn as_str(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Svg => "svg",
        }
    }
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "svg" => Ok(Format::Svg),
            _ => Err(format!("unknown format `{s}`")),
        }
    }
}

fn control_name(c: Control) -> &'static str {
    match c {
        Control::None => "none",
        Control::ThirdEigenfunction => "third-eigenfunction",
        Control::ShiftedPotential => "shifted-potential",
    }
}

fn parse_control(s: &str) -> Result<Control, String> {
    match s {
        "none" => Ok(Control::None),
        "third-eigenfunction" => Ok(Control::ThirdEigenfunction),
        "shifted-potential" => Ok(Control::ShiftedPotential),
        _ => Err(format!("unknown control `{s}`")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub dim: usize,
    pub s: f64,
    pub p: f64,
    pub lambda: f64,
    pub mesh: usize,
    pub grading: f64,
    pub rmax: f64,
    pub quad: usize,
    pub tol: f64,
    pub seed: u64,
    /// worker threads; 0 means one per logical core
    pub jobs: usize,
    pub out: PathBuf,
    pub format: Vec<Format>,
    pub control: Control,
    /// compare every margin against the doubled mesh
    pub refine: bool,
    pub eigenpairs: usize,
    pub starts: usize,
    /// continue-p runs from p to p_end and back
    pub p_end: f64,
    pub knots: usize,
    pub s_knots: Vec<f64>,
    pub heights: Vec<f64>,
    /// verify the full N × s × p × λ grid below instead of one instance
    pub grid: bool,
    pub grid_dim: Vec<usize>,
    pub grid_s: Vec<f64>,
    pub grid_p: Vec<f64>,
    pub grid_lambda: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: Command::Verify,
            dim: 2,
            s: 0.5,
            p: 3.0,
            lambda: 0.0,
            mesh: 128,
            grading: 2.0,
            rmax: 4.0,
            quad: 96,
            tol: 1e-8,
            seed: 0,
            jobs: 0,
            out: PathBuf::from("out"),
            format: vec![Format::Json, Format::Csv, Format::Svg],
            control: Control::None,
            refine: true,
            eigenpairs: 4,
            starts: 20,
            p_end: 3.5,
            knots: 14,
            s_knots: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            heights: vec![0.08, 0.04, 0.02],
            grid: false,
            grid_dim: vec![2, 3],
            grid_s: vec![0.25, 0.5, 0.75],
            grid_p: vec![2.5, 3.0],
            grid_lambda: vec![0.0, 1.0],
        }
    }
}

pub const KEYS: &[&str] = &[
    "command", "dim", "s", "p", "lambda", "mesh", "grading", "rmax", "quad", "tol", "seed", "jobs", "out",
    "format", "control", "refine", "eigenpairs", "starts", "p_end", "knots", "s_knots", "heights", "grid",
    "grid_dim", "grid_s", "grid_p", "grid_lambda",
];

fn scalar<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("{key}: cannot parse `{value}`: {e}"))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(|v| scalar(key, v.trim()))
        .collect()
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key {
            "command" => self.command = v.parse()?,
            "dim" => self.dim = scalar(key, v)?,
            "s" => self.s = scalar(key, v)?,
            "p" => self.p = scalar(key, v)?,
            "lambda" => self.lambda = scalar(key, v)?,
            "mesh" => self.mesh = scalar(key, v)?,
            "grading" => self.grading = scalar(key, v)?,
            "rmax" => self.rmax = scalar(key, v)?,
            "quad" => self.quad = scalar(key, v)?,
            "tol" => self.tol = scalar(key, v)?,
            "seed" => self.seed = scalar(key, v)?,
            "jobs" => self.jobs = scalar(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "format" => {
                let mut f: Vec<Format> = list(key, v)?;
                f.sort();
                f.dedup();
                self.format = f;
            }
            "control" => self.control = parse_control(v)?,
            "refine" => self.refine = scalar(key, v)?,
            "eigenpairs" => self.eigenpairs = scalar(key, v)?,
            "starts" => self.starts = scalar(key, v)?,
            "p_end" => self.p_end = scalar(key, v)?,
            "knots" => self.knots = scalar(key, v)?,
            "s_knots" => self.s_knots = list(key, v)?,
            "heights" => self.heights = list(key, v)?,
            "grid" => self.grid = scalar(key, v)?,
            "grid_dim" => self.grid_dim = list(key, v)?,
            "grid_s" => self.grid_s = list(key, v)?,
            "grid_p" => self.grid_p = list(key, v)?,
            "grid_lambda" => self.grid_lambda = list(key, v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Canonical file form: every key, in a fixed order.
    pub fn to_text(&self) -> String {
        let formats: Vec<&str> = self.format.iter().map(|f| f.as_str()).collect();
        let rows: Vec<(&str, String)> = vec![
            ("command", self.command.as_str().to_string()),
            ("dim", self.dim.to_string()),
            ("s", self.s.to_string()),
            ("p", self.p.to_string()),
            ("lambda", self.lambda.to_string()),
            ("mesh", self.mesh.to_string()),
            ("grading", self.grading.to_string()),
            ("rmax", self.rmax.to_string()),
            ("quad", self.quad.to_string()),
            ("tol", self.tol.to_string()),
            ("seed", self.seed.to_string()),
            ("jobs", self.jobs.to_string()),
            ("out", self.out.display().to_string()),
            ("format", formats.join(",")),
            ("control", control_name(self.control).to_string()),
            ("refine", self.refine.to_string()),
            ("eigenpairs", self.eigenpairs.to_string()),
            ("starts", self.starts.to_string()),
            ("p_end", self.p_end.to_string()),
            ("knots", self.knots.to_string()),
            ("s_knots", join(&self.s_knots)),
            ("heights", join(&self.heights)),
            ("grid", self.grid.to_string()),
            ("grid_dim", join(&self.grid_dim)),
            ("grid_s", join(&self.grid_s)),
            ("grid_p", join(&self.grid_p)),
            ("grid_lambda", join(&self.grid_lambda)),
        ];
        rows.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Applies a config file's lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Parse {
                    line: i + 1,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(CliError::UnknownKey {
                    key: key.to_string(),
                    line: Some(i + 1),
                });
            }
            self.set(key, value).map_err(|message| CliError::Parse { line: i + 1, message })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn params(&self) -> ProblemParams<f64> {
        ProblemParams {
            dim: self.dim,
            s: self.s,
            p: self.p,
            lambda: self.lambda,
        }
    }

    pub fn mesh_settings(&self) -> MeshSettings {
        MeshSettings {
            elements: self.mesh,
            grading: self.grading,
            cutoff: self.rmax,
            quad_order: self.quad,
        }
    }

    pub fn solver(&self) -> SolverOptions<f64> {
        SolverOptions {
            tol: self.tol,
            ..SolverOptions::default()
        }
    }

    pub fn battery(&self) -> BatteryOptions {
        BatteryOptions {
            mesh: self.mesh_settings(),
            refine: self.refine,
            solver: self.solver(),
            control: self.control,
            ..BatteryOptions::default()
        }
    }

    pub fn wants(&self, f: Format) -> bool {
        self.format.contains(&f)
    }

    /// Range checks, each naming the offending key.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, message: String| Err(CliError::Invalid {
            key: key.to_string(),
            message,
        });
        let dims: Vec<usize> = if self.grid { self.grid_dim.clone() } else { vec![self.dim] };
        for &dim in &dims {
            let key = if self.grid { "grid_dim" } else { "dim" };
            if dim < 2 {
                return bad(key, format!("dimension {dim} < 2"));
            }
        }
        let orders = if self.grid { self.grid_s.clone() } else { vec![self.s] };
        for s in orders {
            if !(s > 0.0 && s < 1.0) {
                return bad(if self.grid { "grid_s" } else { "s" }, format!("order {s} outside (0, 1)"));
            }
        }
        let exps = if self.grid { self.grid_p.clone() } else { vec![self.p] };
        for &dim in &dims {
            for &p in &exps {
                let crit = ProblemParams::<f64>::critical_exponent(dim);
                let key = if self.grid { "grid_p" } else { "p" };
                if !(p > 2.0) {
                    return bad(key, format!("exponent {p} must exceed 2"));
                }
                if let Some(c) = crit {
                    if !(p < c) {
                        return bad(key, format!("exponent {p} not below the critical exponent {c} for N = {dim}"));
                    }
                }
            }
        }
        if !self.lambda.is_finite() {
            return bad("lambda", "λ must be finite".into());
        }
        if self.command == Command::ContinueP {
            if let Some(c) = ProblemParams::<f64>::critical_exponent(self.dim) {
                if !(self.p_end < c) {
                    return bad("p_end", format!("{} not below the critical exponent {c}", self.p_end));
                }
            }
            if !(self.p_end > 2.0) || self.p_end == self.p {
                return bad("p_end", format!("end point {} must exceed 2 and differ from p", self.p_end));
            }
            if self.knots < 2 {
                return bad("knots", "need at least two knots".into());
            }
        }
        if let Err(e) = RadialMesh::<f64>::build(self.mesh, self.grading, self.rmax) {
            return bad("mesh", e.to_string());
        }
        if self.quad < 8 {
            return bad("quad", format!("quadrature order {} < 8", self.quad));
        }
        if !(self.tol > 0.0 && self.tol < 1e-2) {
            return bad("tol", format!("tolerance {} outside (0, 1e-2)", self.tol));
        }
        if self.s_knots.iter().any(|&s| !(s > 0.0 && s < 1.0)) || self.s_knots.windows(2).any(|w| w[1] <= w[0]) {
            return bad("s_knots", "s-knots must ascend inside (0, 1)".into());
        }
        if self.heights.len() < 2 || self.heights.windows(2).any(|w| w[1] >= w[0]) {
            return bad("heights", "need at least two decreasing heights".into());
        }
        if self.starts < 10 {
            return bad("starts", format!("{} starts; need at least 10", self.starts));
        }
        if self.eigenpairs < 3 {
            return bad("eigenpairs", "need at least three eigenpairs".into());
        }
        if self.format.is_empty() {
            return bad("format", "no output format".into());
        }
        Ok(())
    }
}

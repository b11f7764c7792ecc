use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use mixed_nonlocal::verification::{Check, Provenance};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

pub const REPORT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub name: String,
    pub verdict: bool,
    pub margin: f64,
    pub tolerance: f64,
    pub data: BTreeMap<String, f64>,
}

impl From<Check> for ResultRow {
    fn from(c: Check) -> Self {
        Self {
            name: c.name,
            verdict: c.verdict,
            margin: c.margin,
            tolerance: c.tolerance,
            data: c.details,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub build_id: String,
    /// seconds since the Unix epoch; the only field that varies between identical runs
    pub timestamp: u64,
}

impl Environment {
    pub fn current() -> Self {
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            build_id: format!("{}-{}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
            timestamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub config: RunConfig,
    pub environment: Environment,
    pub results: Vec<ResultRow>,
    pub data: BTreeMap<String, serde_json::Value>,
    pub notes: Vec<String>,
    pub provenance: Provenance,
    pub artifacts: Vec<String>,
    pub error: Option<String>,
}

impl Report {
    pub fn new(config: RunConfig) -> Self {
        Self {
            version: REPORT_VERSION.into(),
            config,
            environment: Environment::current(),
            results: Vec::new(),
            data: BTreeMap::new(),
            notes: Vec::new(),
            provenance: Provenance::default(),
            artifacts: Vec::new(),
            error: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.error.is_none() && self.results.iter().all(|r| r.verdict)
    }

    /// 0 when every verdict passes, 2 on a failed check, 1 on a runtime error.
    pub fn exit_code(&self) -> i32 {
        if self.error.is_some() {
            1
        } else if self.passed() {
            0
        } else {
            2
        }
    }

    pub fn result(&self, name: &str) -> Option<&ResultRow> {
        self.results.iter().find(|r| r.name == name)
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["name", "verdict", "margin", "tolerance"])
            .map_err(csv_error)?;
        for r in &self.results {
            w.write_record([
                r.name.as_str(),
                if r.verdict { "pass" } else { "fail" },
                &format!("{:e}", r.margin),
                &format!("{:e}", r.tolerance),
            ])
            .map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| CliError::Invalid {
            key: "out".into(),
            message: format!("{} is not a file path", path.display()),
        })?;
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

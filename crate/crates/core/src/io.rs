//! Output files. Every CSV starts with a `# schema=...` line followed by the
//! column header.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audit::{EnergyLedger, InvariantCheck, LEDGER_COLUMNS};
use crate::config::render_config;
use crate::driver::{SchemeConfig, Trajectory};
use crate::error::{Error, Result};

pub const LEDGER_SCHEMA: &str = "thermovisco-ledger/1";
pub const FIELDS_SCHEMA: &str = "thermovisco-fields/1";
pub const STUDY_SCHEMA: &str = "thermovisco-study/1";
pub const STUDY_CHECKS_SCHEMA: &str = "thermovisco-study-checks/1";
pub const MANIFEST_SCHEMA: &str = "thermovisco-manifest/1";

pub const FIELD_COLUMNS: [&str; 7] = ["node", "x1", "x2", "y1", "y2", "theta", "w"];

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

/// SHA-256 of the canonical config rendering.
pub fn config_hash(cfg: &SchemeConfig) -> String {
    let digest = Sha256::digest(render_config(cfg).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Write a CSV with the schema line, header and rows; floats use the
/// shortest round-trip representation.
pub fn write_csv(path: &Path, schema: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let write = || -> std::io::Result<()> {
        writeln!(out, "# schema={schema}")?;
        writeln!(out, "{}", header.join(","))?;
        for row in rows {
            writeln!(out, "{}", row.join(","))?;
        }
        out.flush()
    };
    write().map_err(|e| io_err(path, e))
}

/// Schema, header and numeric rows of a CSV written by [`write_csv`].
pub struct CsvTable {
    pub schema: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.header.iter().position(|h| h == name)?;
        self.rows.iter().map(|r| r.get(idx)?.parse().ok()).collect()
    }
}

pub fn read_csv(path: &Path) -> Result<CsvTable> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    let schema = lines
        .next()
        .and_then(|l| l.strip_prefix("# schema="))
        .ok_or_else(|| io_err(path, "missing schema line"))?
        .to_string();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| io_err(path, "missing header"))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    if let Some(bad) = rows.iter().position(|r| r.len() != header.len()) {
        return Err(io_err(path, format!("row {} has the wrong width", bad + 1)));
    }
    Ok(CsvTable { schema, header, rows })
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_ledger(path: &Path, ledger: &EnergyLedger) -> Result<()> {
    let rows = ledger.rows.iter().map(|r| {
        let v = r.values();
        let mut out = vec![r.step.to_string()];
        out.extend(v[1..].iter().map(|x| num(*x)));
        out
    });
    write_csv(path, LEDGER_SCHEMA, &LEDGER_COLUMNS, rows)
}

pub fn fields_file_name(k: usize) -> String {
    format!("fields_k{k:06}.csv")
}

/// Nodal snapshot of step `k`.
pub fn write_fields(path: &Path, traj: &Trajectory, k: usize) -> Result<()> {
    let grid = &traj.grid;
    let rows = (0..grid.num_nodes()).map(|i| {
        let (x1, x2) = grid.coords(i);
        let y = traj.y[k].0[i];
        vec![
            i.to_string(),
            num(x1),
            num(x2),
            num(y[0]),
            num(y[1]),
            num(traj.theta[k].0[i]),
            num(traj.w[k].0[i]),
        ]
    });
    write_csv(path, FIELDS_SCHEMA, &FIELD_COLUMNS, rows)
}

/// Steps that get a field snapshot: every `every`-th step plus the first and last.
pub fn snapshot_steps(total: usize, every: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = if every == 0 {
        vec![0]
    } else {
        (0..=total).step_by(every).collect()
    };
    if ks.last() != Some(&total) {
        ks.push(total);
    }
    ks
}

/// Write the selected snapshots into `dir`, returning the file names.
pub fn write_snapshots(dir: &Path, traj: &Trajectory) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for k in snapshot_steps(traj.steps(), traj.config.snapshot_every) {
        let name = fields_file_name(k);
        write_fields(&dir.join(&name), traj, k)?;
        names.push(name);
    }
    Ok(names)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    /// Seed of the randomized parts; the scheme itself draws no random numbers.
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
    pub invariants: Vec<InvariantCheck>,
    pub all_pass: bool,
    pub exit_code: i32,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &SchemeConfig) -> Self {
        Self {
            schema: MANIFEST_SCHEMA.into(),
            command: command.into(),
            config_hash: config_hash(cfg),
            code_version: env!("CARGO_PKG_VERSION").into(),
            seed: None,
            outputs: Vec::new(),
            wall_clock_seconds: 0.0,
            invariants: Vec::new(),
            all_pass: false,
            exit_code: 0,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        write_json(&path, self)?;
        Ok(path)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

/// Why a run stopped early.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub error: String,
    pub failed_step: Option<usize>,
    pub completed_steps: usize,
    pub last_min_det: Option<f64>,
    pub last_min_theta: Option<f64>,
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_schedule() {
        assert_eq!(snapshot_steps(32, 8), vec![0, 8, 16, 24, 32]);
        assert_eq!(snapshot_steps(10, 4), vec![0, 4, 8, 10]);
        assert_eq!(snapshot_steps(5, 0), vec![0, 5]);
    }

    #[test]
    fn hash_tracks_config() {
        let a = SchemeConfig::default();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.eps = 2e-3;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}

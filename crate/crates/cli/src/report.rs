//! Output directories with atomic writes and a checksummed manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use subnetcl_core::codec::capacity;
use subnetcl_core::fscil::SessionRow;
use subnetcl_core::mask::{mask_stats, TaskMask};
use subnetcl_core::til::{AccuracyMatrix, TilMetrics};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub crc32: String,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::runtime(format!("i/o error on {}: {e}", path.display()))
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = parent.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Refuses a non-empty `path` unless `force`.
pub fn check_fresh(path: &Path, force: bool) -> Result<(), CliError> {
    if force || !path.exists() {
        return Ok(());
    }
    let occupied = if path.is_dir() {
        fs::read_dir(path).map_err(|e| io_err(path, e))?.next().is_some()
    } else {
        true
    };
    if occupied {
        return Err(CliError::config(format!(
            "output {} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

pub struct OutputDir {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl OutputDir {
    pub fn create(root: &Path, force: bool) -> Result<Self, CliError> {
        check_fresh(root, force)?;
        fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(&self.root.join(rel), bytes)?;
        self.entries.retain(|e| e.path != rel);
        self.entries.push(ManifestEntry {
            path: rel.to_string(),
            bytes: bytes.len() as u64,
            crc32: format!("{:08x}", crc32fast::hash(bytes)),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime(e.to_string()))?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// Writes the manifest and returns its entries.
    pub fn finish(mut self) -> Result<Vec<ManifestEntry>, CliError> {
        self.entries.sort_by(|a, b| a.path.cmp(&b.path));
        let entries = self.entries.clone();
        let mut text = serde_json::to_string_pretty(&entries).map_err(|e| CliError::runtime(e.to_string()))?;
        text.push('\n');
        write_atomic(&self.root.join(MANIFEST), text.as_bytes())?;
        Ok(entries)
    }
}

/// Re-reads every manifest entry under `root` and checks size and CRC.
pub fn verify_manifest(root: &Path) -> Result<Vec<ManifestEntry>, CliError> {
    let path = root.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let entries: Vec<ManifestEntry> = serde_json::from_str(&text)
        .map_err(|e| CliError::runtime(format!("bad manifest {}: {e}", path.display())))?;
    for e in &entries {
        let p = root.join(&e.path);
        let bytes = fs::read(&p).map_err(|err| io_err(&p, err))?;
        let crc = format!("{:08x}", crc32fast::hash(&bytes));
        if bytes.len() as u64 != e.bytes || crc != e.crc32 {
            return Err(CliError::runtime(format!(
                "manifest mismatch for {}: expected {} bytes crc {}, found {} bytes crc {crc}",
                e.path,
                e.bytes,
                e.crc32,
                bytes.len()
            )));
        }
    }
    Ok(entries)
}

/// Shortest round-trip form that always has a decimal point or exponent.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Rows `after_task`, columns `task_i`; a final `random` row holds `R_i`.
pub fn accuracy_matrix_csv(a: &AccuracyMatrix, tasks: usize) -> String {
    let mut out = String::from("after_task");
    for i in 1..=tasks {
        let _ = write!(out, ",task_{i}");
    }
    out.push('\n');
    for j in 1..=tasks {
        out.push_str(&j.to_string());
        for i in 1..=tasks {
            out.push(',');
            out.push_str(&opt(a.get(j, i)));
        }
        out.push('\n');
    }
    out.push_str("random");
    for i in 1..=tasks {
        out.push(',');
        out.push_str(&opt(a.random(i)));
    }
    out.push('\n');
    out
}

pub fn til_metrics_csv(m: &TilMetrics) -> String {
    format!(
        "tasks,acc,bwt,fwt,cap,cap_measured,sparsity,compression_rate\n{},{},{},{},{},{},{},{}\n",
        m.tasks,
        num(m.acc),
        num(m.bwt),
        opt(m.fwt),
        num(m.capacity.cap_formula),
        num(m.capacity.cap_measured),
        num(m.capacity.sparsity),
        num(m.capacity.compression_rate)
    )
}

/// Capacity and reuse after each task.
pub fn capacity_curve_csv(masks: &[TaskMask]) -> Result<String, CliError> {
    let mut out = String::from(
        "task,all_used,per_task,new_per_task,reused_per_task,reused_for_all,compression_rate,cap,cap_measured\n",
    );
    for t in 1..=masks.len() {
        let r = mask_stats(masks, t)?.total;
        let c = capacity(&masks[..t], None)?;
        let _ = writeln!(
            out,
            "{t},{},{},{},{},{},{},{},{}",
            num(r.all_used),
            num(r.per_task),
            num(r.new_per_task),
            num(r.reused_per_task),
            num(r.reused_for_all),
            num(c.compression_rate),
            num(c.cap_formula),
            num(c.cap_measured)
        );
    }
    Ok(out)
}

/// One row per session with full-precision fractions.
pub fn fscil_metrics_csv(rows: &[SessionRow]) -> String {
    let mut out = String::from("session,classes_seen,accuracy,base_accuracy,novel_accuracy\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.session,
            r.classes_seen,
            num(r.accuracy),
            num(r.base_accuracy),
            opt(r.novel_accuracy)
        );
    }
    out
}

/// Session table in percent: one column per session and a final gap column.
pub fn sessions_csv(rows: &[SessionRow], reference: Option<&[f64]>, gap: Option<f64>) -> String {
    let mut out = String::from("method");
    for r in rows {
        let _ = write!(out, ",session_{}", r.session);
    }
    out.push_str(",gap_vs_reference\n");
    out.push_str("softnet");
    for r in rows {
        let _ = write!(out, ",{:.2}", 100.0 * r.accuracy);
    }
    let _ = writeln!(out, ",{}", gap.map(|g| format!("{:.2}", 100.0 * g)).unwrap_or_default());
    if let Some(reference) = reference {
        out.push_str("reference");
        for k in 0..rows.len() {
            out.push(',');
            if let Some(v) = reference.get(k) {
                let _ = write!(out, "{:.2}", 100.0 * v);
            }
        }
        out.push_str(",\n");
    }
    out
}

//! Run-directory files: atomic writes, checksums, snapshots and the manifest.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mvflow_core::diagnostics::{read_ledger_csv, LedgerRow};
use mvflow_core::solver::Snapshot;
use mvflow_core::spectral::{Basis, BasisConfig, ModalVector};

use crate::error::{Result, RunError};

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(RunError::io(parent))?;
    }
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("file");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(RunError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(RunError::io(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => RunError::MissingArtifact(path.to_path_buf()),
        _ => RunError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    serde_json::from_str(&text).map_err(|e| RunError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_ledger(path: &Path) -> Result<Vec<LedgerRow>> {
    let file = fs::File::open(path).map_err(|_| RunError::MissingArtifact(path.to_path_buf()))?;
    read_ledger_csv(BufReader::new(file)).map_err(|e| RunError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// JSON sidecar of a raw snapshot file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub t: f64,
    pub step: u64,
    pub stopped: bool,
    pub seed: u64,
    pub path: u64,
    pub basis: BasisConfig,
    pub grid_shape: Vec<usize>,
    /// Layout of the raw file: `rho` on the grid, then the modal coefficients.
    pub rho_len: usize,
    pub coeff_len: usize,
    pub params: serde_json::Value,
}

pub fn encode_snapshot(snap: &Snapshot) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * (snap.rho.len() + snap.c.len()));
    for v in snap.rho.iter().chain(&snap.c.0) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_snapshot(
    dir: &Path,
    index: usize,
    snap: &Snapshot,
    basis: &Basis,
    seed: u64,
    path: u64,
    params: &serde_json::Value,
) -> Result<()> {
    let meta = SnapshotMeta {
        t: snap.t,
        step: snap.step,
        stopped: snap.stopped,
        seed,
        path,
        basis: basis.config().clone(),
        grid_shape: basis.grid_shape().to_vec(),
        rho_len: snap.rho.len(),
        coeff_len: snap.c.len(),
        params: params.clone(),
    };
    write_atomic(&dir.join(format!("snap_{index:05}.bin")), &encode_snapshot(snap))?;
    write_json(&dir.join(format!("snap_{index:05}.json")), &meta)
}

pub fn read_snapshot(bin: &Path) -> Result<(SnapshotMeta, Snapshot)> {
    let meta: SnapshotMeta = read_json(&bin.with_extension("json"))?;
    let bytes = fs::read(bin).map_err(|_| RunError::MissingArtifact(bin.to_path_buf()))?;
    if bytes.len() != 8 * (meta.rho_len + meta.coeff_len) {
        return Err(RunError::Parse {
            path: bin.to_path_buf(),
            message: format!(
                "expected {} values, found {} bytes",
                meta.rho_len + meta.coeff_len,
                bytes.len()
            ),
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let snap = Snapshot {
        t: meta.t,
        step: meta.step,
        rho: values[..meta.rho_len].to_vec(),
        c: ModalVector(values[meta.rho_len..].to_vec()),
        stopped: meta.stopped,
    };
    Ok((meta, snap))
}

/// All snapshots of one path directory in checkpoint order.
pub fn read_snapshots(path_dir: &Path) -> Result<Vec<Snapshot>> {
    let dir = path_dir.join("snapshots");
    let entries = fs::read_dir(&dir).map_err(|_| RunError::MissingArtifact(dir.clone()))?;
    let mut bins: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    bins.sort();
    bins.iter().map(|b| read_snapshot(b).map(|(_, s)| s)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub size: u64,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSeed {
    pub group: String,
    pub path: u64,
    pub seed: u64,
    /// Counter-generator key of the path.
    pub key: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub seeds: Vec<PathSeed>,
    pub files: Vec<FileEntry>,
}

pub fn hex64(v: u64) -> String {
    format!("{v:016x}")
}

/// Inventory of every file under `root` except the manifest and derived outputs.
pub fn inventory(root: &Path) -> Result<Vec<FileEntry>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<FileEntry>) -> Result<()> {
        let entries = fs::read_dir(dir).map_err(RunError::io(dir))?;
        for e in entries {
            let e = e.map_err(RunError::io(dir))?;
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out)?;
                continue;
            }
            let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
            if rel == "manifest.json" || rel == "diagnostics.json" || rel.starts_with("ym/") || rel.starts_with("report/") {
                continue;
            }
            let bytes = fs::read(&p).map_err(RunError::io(&p))?;
            out.push(FileEntry {
                path: rel,
                size: bytes.len() as u64,
                checksum: hex64(fnv1a64(&bytes)),
            });
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

//! Assembled-operator cache.
//!
//! On disk an operator is a little-endian header (dimension, order, sector,
//! quadrature order, mesh knobs) followed by the local, nonlocal and mass
//! matrices in row-major f64. The file name is the SHA-256 of the header, so
//! a hit returns exactly the doubles that were assembled.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discretization::{RadialMesh, SectorOperator};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::special::KernelSpec;

const MAGIC: &[u8; 8] = b"MXNLOP01";

/// Mesh and quadrature knobs shared by every operator of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshSettings {
    pub elements: usize,
    pub grading: f64,
    pub cutoff: f64,
    pub quad_order: usize,
}

impl Default for MeshSettings {
    fn default() -> Self {
        Self {
            elements: 128,
            grading: 2.0,
            cutoff: 4.0,
            quad_order: 96,
        }
    }
}

impl MeshSettings {
    pub fn with_elements(mut self, elements: usize) -> Self {
        self.elements = elements;
        self
    }

    /// Same knobs on twice as many elements.
    pub fn refined(self) -> Self {
        self.with_elements(2 * self.elements)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OperatorKey {
    dim: usize,
    order: f64,
    sector: usize,
    mesh: MeshSettings,
}

impl OperatorKey {
    fn header(&self) -> Vec<u8> {
        let mut h = Vec::with_capacity(64);
        h.extend_from_slice(MAGIC);
        for v in [self.dim as u64, self.sector as u64, self.mesh.quad_order as u64, self.mesh.elements as u64] {
            h.extend_from_slice(&v.to_le_bytes());
        }
        for v in [self.order, self.mesh.grading, self.mesh.cutoff] {
            h.extend_from_slice(&v.to_le_bytes());
        }
        h
    }

    fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.header()))
    }
}

/// Thread-safe operator store with an optional directory behind it.
#[derive(Debug, Default)]
pub struct OperatorCache {
    directory: Option<PathBuf>,
    meshes: Mutex<Vec<Arc<RadialMesh<f64>>>>,
    entries: Mutex<HashMap<String, Arc<SectorOperator<f64>>>>,
    keys: Mutex<Vec<String>>,
}

impl OperatorCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn with_directory(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            directory: Some(dir),
            ..Self::default()
        })
    }

    pub fn directory(&self) -> Option<&Path> {
        self.directory.as_deref()
    }

    /// The shared mesh for these settings.
    pub fn mesh(&self, settings: &MeshSettings) -> Result<Arc<RadialMesh<f64>>> {
        let mut meshes = self.meshes.lock().expect("mesh list");
        let found = meshes.iter().find(|m| {
            let d = m.descriptor();
            d.elements == settings.elements && d.grading == settings.grading && d.exterior_cutoff == settings.cutoff
        });
        if let Some(m) = found {
            return Ok(m.clone());
        }
        let m = Arc::new(RadialMesh::build(settings.elements, settings.grading, settings.cutoff)?);
        meshes.push(m.clone());
        Ok(m)
    }

    /// Hex keys of every operator handed out so far, in first-use order.
    pub fn keys(&self) -> Vec<String> {
        self.keys.lock().expect("key list").clone()
    }

    pub fn key(dim: usize, order: f64, sector: usize, settings: &MeshSettings) -> String {
        OperatorKey {
            dim,
            order,
            sector,
            mesh: *settings,
        }
        .digest()
    }

    pub fn operator(&self, dim: usize, order: f64, sector: usize, settings: &MeshSettings) -> Result<Arc<SectorOperator<f64>>> {
        let key = OperatorKey {
            dim,
            order,
            sector,
            mesh: *settings,
        };
        let digest = key.digest();
        {
            let mut keys = self.keys.lock().expect("key list");
            if !keys.contains(&digest) {
                keys.push(digest.clone());
            }
        }
        if let Some(op) = self.entries.lock().expect("cache map").get(&digest) {
            return Ok(op.clone());
        }
        let mesh = self.mesh(settings)?;
        let spec = KernelSpec::new(dim, order, sector)?.with_quad_order(settings.quad_order)?;
        let path = self.directory.as_ref().map(|d| d.join(format!("{digest}.bin")));
        let loaded = match &path {
            Some(p) if p.exists() => Some(read_operator(p, &key, mesh.clone(), spec)?),
            _ => None,
        };
        let op = match loaded {
            Some(op) => op,
            None => {
                let op = SectorOperator::assemble(mesh, spec)?;
                if let Some(p) = &path {
                    write_operator(p, &key, &op)?;
                }
                op
            }
        };
        let op = Arc::new(op);
        self.entries
            .lock()
            .expect("cache map")
            .entry(digest)
            .or_insert_with(|| op.clone());
        Ok(op)
    }
}

fn write_operator(path: &Path, key: &OperatorKey, op: &SectorOperator<f64>) -> Result<()> {
    let n = op.size();
    let mut bytes = key.header();
    bytes.extend_from_slice(&(n as u64).to_le_bytes());
    for m in [&op.local, &op.nonlocal, &op.mass] {
        for v in m.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("bin.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_operator(
    path: &Path,
    key: &OperatorKey,
    mesh: Arc<RadialMesh<f64>>,
    spec: KernelSpec<f64>,
) -> Result<SectorOperator<f64>> {
    let bytes = fs::read(path)?;
    let header = key.header();
    if bytes.len() < header.len() + 8 || bytes[..header.len()] != header[..] {
        return Err(Error::Cache(format!("{} does not match its key", path.display())));
    }
    let mut pos = header.len();
    let n = u64::from_le_bytes(bytes[pos..pos + 8].try_into().expect("8 bytes")) as usize;
    pos += 8;
    if bytes.len() != pos + 3 * n * n * 8 {
        return Err(Error::Cache(format!("{} has a truncated payload", path.display())));
    }
    let mut read = || {
        let data: Vec<f64> = bytes[pos..pos + n * n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        pos += n * n * 8;
        DenseMatrix::from_row_major(n, n, data)
    };
    let local = read()?;
    let nonlocal = read()?;
    let mass = read()?;
    let op = SectorOperator {
        spec,
        mesh,
        local,
        nonlocal,
        mass,
    };
    if op.size() != n {
        return Err(Error::Cache(format!("{} was assembled for a different mesh", path.display())));
    }
    Ok(op)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> MeshSettings {
        MeshSettings {
            elements: 16,
            grading: 2.0,
            cutoff: 4.0,
            quad_order: 48,
        }
    }

    #[test]
    fn keys_separate_parameters() {
        let m = small();
        let a = OperatorCache::key(2, 0.5, 0, &m);
        assert_eq!(a.len(), 64);
        assert_ne!(a, OperatorCache::key(2, 0.5, 1, &m));
        assert_ne!(a, OperatorCache::key(2, 0.5, 0, &m.refined()));
        assert_eq!(a, OperatorCache::key(2, 0.5, 0, &small()));
    }

    #[test]
    fn disk_round_trip_is_bitwise() {
        let dir = std::env::temp_dir().join(format!("mxnl-cache-{}", std::process::id()));
        let first = OperatorCache::with_directory(&dir).unwrap();
        let op = first.operator(2, 0.4, 1, &small()).unwrap();
        let second = OperatorCache::with_directory(&dir).unwrap();
        let again = second.operator(2, 0.4, 1, &small()).unwrap();
        assert_eq!(op.nonlocal.as_slice(), again.nonlocal.as_slice());
        assert_eq!(op.mass.as_slice(), again.mass.as_slice());
        let _ = fs::remove_dir_all(dir);
    }
}

//! A small deterministic container for named f64 arrays.
//!
//! Layout: magic `CADR`, a little-endian u32 version, a little-endian u64
//! manifest length, the JSON manifest (names and shapes, in insertion-stable
//! sorted order), then the raw array payloads as little-endian f64 in row-major
//! order. Writing the same arrays twice yields byte-identical files, which the
//! dataset and checkpoint reproducibility contracts rely on.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{CadreError, Result};

const MAGIC: &[u8; 4] = b"CADR";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

/// Named f64 arrays with deterministic on-disk serialization.
#[derive(Default, Clone)]
pub struct Archive {
    arrays: BTreeMap<String, ArrayD<f64>>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert2(&mut self, name: &str, a: &Array2<f64>) {
        self.arrays.insert(name.to_string(), a.clone().into_dyn());
    }

    pub fn insert1(&mut self, name: &str, a: &Array1<f64>) {
        self.arrays.insert(name.to_string(), a.clone().into_dyn());
    }

    pub fn insert_scalar(&mut self, name: &str, v: f64) {
        self.arrays
            .insert(name.to_string(), ArrayD::from_elem(IxDyn(&[]), v));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.keys().map(|s| s.as_str())
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f64>> {
        self.arrays
            .get(name)
            .ok_or_else(|| CadreError::Archive(format!("missing array `{name}`")))
    }

    pub fn get2(&self, name: &str) -> Result<Array2<f64>> {
        let a = self.get(name)?;
        a.clone()
            .into_dimensionality::<ndarray::Ix2>()
            .map_err(|_| CadreError::Archive(format!("array `{name}` is not 2-d")))
    }

    pub fn get1(&self, name: &str) -> Result<Array1<f64>> {
        let a = self.get(name)?;
        a.clone()
            .into_dimensionality::<ndarray::Ix1>()
            .map_err(|_| CadreError::Archive(format!("array `{name}` is not 1-d")))
    }

    pub fn get_scalar(&self, name: &str) -> Result<f64> {
        let a = self.get(name)?;
        a.iter()
            .next()
            .copied()
            .ok_or_else(|| CadreError::Archive(format!("array `{name}` is empty")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = BufWriter::new(File::create(path)?);
        let entries: Vec<Entry> = self
            .arrays
            .iter()
            .map(|(name, a)| Entry {
                name: name.clone(),
                shape: a.shape().to_vec(),
            })
            .collect();
        let manifest = serde_json::to_vec(&entries)?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(manifest.len() as u64).to_le_bytes())?;
        w.write_all(&manifest)?;
        for a in self.arrays.values() {
            // standard layout is guaranteed for owned arrays built row-major
            for v in a.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CadreError::Archive(format!(
                "{}: bad magic (not an array archive)",
                path.display()
            )));
        }
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)?;
        let version = u32::from_le_bytes(buf4);
        if version != VERSION {
            return Err(CadreError::Archive(format!(
                "unsupported archive version {version}"
            )));
        }
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)?;
        let mlen = u64::from_le_bytes(buf8) as usize;
        let mut manifest = vec![0u8; mlen];
        r.read_exact(&mut manifest)?;
        let entries: Vec<Entry> = serde_json::from_slice(&manifest)?;
        let mut arrays = BTreeMap::new();
        for e in entries {
            let n: usize = e.shape.iter().product::<usize>().max(1);
            let n = if e.shape.is_empty() { 1 } else { n };
            let mut data = vec![0f64; n];
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes)?;
            for (i, chunk) in bytes.chunks_exact(8).enumerate() {
                data[i] = f64::from_le_bytes(chunk.try_into().unwrap());
            }
            let arr = ArrayD::from_shape_vec(IxDyn(&e.shape), data)
                .map_err(|err| CadreError::Archive(format!("array `{}`: {err}", e.name)))?;
            arrays.insert(e.name, arr);
        }
        Ok(Self { arrays })
    }
}

//! On-disk checkpoints: a JSON manifest plus one raw little-endian `f64`
//! payload per parameter group.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::ParamStore;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupEntry {
    pub name: String,
    pub file: String,
    pub frozen: bool,
    pub params: Vec<ParamEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: u32,
    pub precision: String,
    pub seed: u64,
    pub stage: usize,
    pub groups: Vec<GroupEntry>,
    /// Architecture description owned by the model layer.
    pub model: serde_json::Value,
}

pub fn save(dir: &Path, store: &ParamStore, seed: u64, stage: usize, model: serde_json::Value) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut groups = Vec::new();
    for g in store.groups() {
        let file = format!("{}.bin", g.name);
        let mut bytes = Vec::new();
        let mut params = Vec::new();
        for &id in &g.params {
            let p = store.param(id);
            params.push(ParamEntry {
                name: p.name.clone(),
                rows: p.value.rows(),
                cols: p.value.cols(),
            });
            for v in p.value.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(path, e))?;
        groups.push(GroupEntry {
            name: g.name.clone(),
            file,
            frozen: g.frozen,
            params,
        });
    }
    let manifest = Manifest {
        format: FORMAT_VERSION,
        precision: "f64".into(),
        seed,
        stage,
        groups,
        model,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))?;
    Ok(manifest)
}

pub fn load(dir: &Path) -> Result<(ParamStore, Manifest)> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT_VERSION {
        return Err(Error::Invalid(format!("unsupported checkpoint format {}", manifest.format)));
    }
    if manifest.precision != "f64" {
        return Err(Error::Invalid(format!("unsupported precision `{}`", manifest.precision)));
    }
    let mut store = ParamStore::new();
    for g in &manifest.groups {
        let gi = store.add_group(&g.name);
        let path = dir.join(&g.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let expected: usize = g.params.iter().map(|p| p.rows * p.cols * 8).sum();
        if bytes.len() != expected {
            return Err(Error::Invalid(format!(
                "{}: payload has {} bytes, manifest implies {}",
                path.display(),
                bytes.len(),
                expected
            )));
        }
        let mut off = 0;
        for p in &g.params {
            let n = p.rows * p.cols;
            let data = bytes[off..off + n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            off += n * 8;
            store.add(gi, &p.name, Matrix::from_vec(p.rows, p.cols, data)?);
        }
        store.set_frozen(&g.name, g.frozen)?;
    }
    Ok((store, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut s = ParamStore::new();
        let a = s.add_group("alpha");
        let b = s.add_group("beta");
        s.add(a, "alpha.w", Matrix::from_rows(&[vec![0.1, -1.0 / 3.0], vec![f64::MIN_POSITIVE, 7.0]]).unwrap());
        s.add(b, "beta.v", Matrix::row_vector(&[std::f64::consts::PI]));
        s.set_frozen("beta", true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &s, 42, 3, serde_json::json!({"dim": 2})).unwrap();
        let (back, manifest) = load(dir.path()).unwrap();
        assert_eq!(manifest.seed, 42);
        assert_eq!(manifest.stage, 3);
        assert_eq!(back.len(), 2);
        for (x, y) in s.params().iter().zip(back.params()) {
            assert_eq!(x.name, y.name);
            let xb: Vec<u64> = x.value.data().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
        assert!(back.group("beta").unwrap().frozen);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut s = ParamStore::new();
        let a = s.add_group("g");
        s.add(a, "g.w", Matrix::zeros(2, 2));
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &s, 0, 0, serde_json::Value::Null).unwrap();
        fs::write(dir.path().join("g.bin"), [0u8; 8]).unwrap();
        assert!(load(dir.path()).is_err());
    }
}

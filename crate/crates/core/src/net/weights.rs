//! Weights container: a plain-text manifest (one `name rows cols offset`
//! line per parameter, offsets in bytes) next to a single little-endian
//! 64-bit-real blob. The blob lives at the manifest path with `.bin`
//! appended so one flag addresses both files.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::net::params::{Param, ParamStore};

pub fn blob_path(manifest: &Path) -> PathBuf {
    let mut os = manifest.as_os_str().to_owned();
    os.push(".bin");
    PathBuf::from(os)
}

pub fn save_weights(store: &ParamStore, manifest: &Path) -> Result<()> {
    let mut text = String::new();
    let mut blob = Vec::with_capacity(store.total_len() * 8);
    let mut offset = 0usize;
    for p in &store.params {
        text.push_str(&format!("{} {} {} {}\n", p.name, p.rows, p.cols, offset));
        for &v in &p.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        offset += p.data.len() * 8;
    }
    fs::File::create(manifest)?.write_all(text.as_bytes())?;
    fs::File::create(blob_path(manifest))?.write_all(&blob)?;
    Ok(())
}

pub fn load_weights(manifest: &Path) -> Result<ParamStore> {
    let text = fs::read_to_string(manifest)?;
    let blob = fs::read(blob_path(manifest))?;
    let mut params = Vec::new();
    let mut expected_offset = 0usize;
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::WeightsMismatch(format!(
                "manifest line {}: expected 4 fields",
                ln + 1
            )));
        }
        let name = fields[0].to_string();
        let parse = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::WeightsMismatch(format!("manifest line {}: bad number", ln + 1)))
        };
        let rows = parse(fields[1])?;
        let cols = parse(fields[2])?;
        let offset = parse(fields[3])?;
        if offset != expected_offset {
            return Err(Error::WeightsMismatch(format!(
                "parameter {name}: offset {offset}, expected {expected_offset}"
            )));
        }
        let nbytes = rows * cols * 8;
        let end = offset + nbytes;
        if end > blob.len() {
            return Err(Error::WeightsMismatch(format!(
                "parameter {name}: blob too short ({} < {end})",
                blob.len()
            )));
        }
        let data = blob[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push(Param {
            name,
            rows,
            cols,
            data,
        });
        expected_offset = end;
    }
    if expected_offset != blob.len() {
        return Err(Error::WeightsMismatch(format!(
            "blob length {} does not match manifest total {expected_offset}",
            blob.len()
        )));
    }
    let mut store = ParamStore::new();
    for p in params {
        store.init_zeros(&p.name, p.rows, p.cols);
        let idx = store.params.len() - 1;
        store.params[idx].data = p.data;
    }
    Ok(store)
}

/// Check that a loaded store has exactly the parameters (names, shapes,
/// order) that `reference` defines.
pub fn validate_against(store: &ParamStore, reference: &ParamStore) -> Result<()> {
    if store.params.len() != reference.params.len() {
        return Err(Error::WeightsMismatch(format!(
            "parameter count {} vs expected {}",
            store.params.len(),
            reference.params.len()
        )));
    }
    for (got, want) in store.params.iter().zip(&reference.params) {
        if got.name != want.name || got.rows != want.rows || got.cols != want.cols {
            return Err(Error::WeightsMismatch(format!(
                "parameter {} [{}x{}] vs expected {} [{}x{}]",
                got.name, got.rows, got.cols, want.name, want.rows, want.cols
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::model::{init_params, ModelConfig};

    #[test]
    fn roundtrip_is_exact() {
        let ps = init_params(&ModelConfig::toy()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.txt");
        save_weights(&ps, &path).unwrap();
        let back = load_weights(&path).unwrap();
        validate_against(&back, &ps).unwrap();
        for (a, b) in ps.params.iter().zip(&back.params) {
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn truncated_blob_rejected() {
        let ps = init_params(&ModelConfig::toy()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.txt");
        save_weights(&ps, &path).unwrap();
        let blob = blob_path(&path);
        let bytes = std::fs::read(&blob).unwrap();
        std::fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            load_weights(&path),
            Err(crate::error::Error::WeightsMismatch(_))
        ));
    }

    #[test]
    fn wrong_architecture_rejected() {
        let toy = init_params(&ModelConfig::toy()).unwrap();
        let other = init_params(&ModelConfig {
            encoder_blocks: 3,
            ..ModelConfig::toy()
        })
        .unwrap();
        assert!(validate_against(&toy, &other).is_err());
    }
}

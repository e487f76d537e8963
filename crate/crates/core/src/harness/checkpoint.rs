//! Parameter archives.
//!
//! A checkpoint is a directory holding `manifest.txt` and `data.bin`. Each
//! manifest line reads `name rank dim_1 .. dim_rank dtype offset crc32`; the
//! data file is the little-endian, row-major concatenation of every array in
//! manifest order. An optional `config.txt` carries `key = value`
//! hyperparameters needed to rebuild the model.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::{format_key_values, read_key_values};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor;

pub const MANIFEST: &str = "manifest.txt";
pub const DATA: &str = "data.bin";
pub const CONFIG: &str = "config.txt";

fn integrity(path: &Path, reason: impl Into<String>) -> Error {
    Error::Integrity { path: path.to_path_buf(), reason: reason.into() }
}

/// Writes every parameter as `f64`.
pub fn save_checkpoint(params: &ParamStore, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    let mut data = Vec::new();
    for (name, var) in params.iter() {
        let offset = data.len();
        let start = data.len();
        for v in tensor::to_vec(var.as_tensor())? {
            data.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&data[start..]);
        let dims: Vec<String> = var.dims().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(manifest, "{name} {} {} f64 {offset} {crc:08x}", dims.len(), dims.join(" "));
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    fs::write(dir.join(DATA), data)?;
    Ok(())
}

struct Entry {
    name: String,
    dims: Vec<usize>,
    f32: bool,
    offset: usize,
    crc: u32,
}

fn parse_manifest(path: &Path, text: &str) -> Result<Vec<Entry>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, line)| {
            let bad = || integrity(path, format!("line {}: malformed entry {line:?}", n + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            let rank: usize = f.get(1).and_then(|r| r.parse().ok()).ok_or_else(bad)?;
            if f.len() != rank + 5 {
                return Err(bad());
            }
            let dims = f[2..2 + rank].iter().map(|d| d.parse().map_err(|_| bad())).collect::<Result<Vec<usize>>>()?;
            let f32 = match f[2 + rank] {
                "f32" => true,
                "f64" => false,
                other => return Err(integrity(path, format!("unsupported dtype {other}"))),
            };
            Ok(Entry {
                name: f[0].to_string(),
                dims,
                f32,
                offset: f[3 + rank].parse().map_err(|_| bad())?,
                crc: u32::from_str_radix(f[4 + rank], 16).map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn load_checkpoint(dir: &Path) -> Result<ParamStore> {
    let manifest_path = dir.join(MANIFEST);
    let data_path = dir.join(DATA);
    let entries = parse_manifest(&manifest_path, &fs::read_to_string(&manifest_path)?)?;
    let data = fs::read(&data_path)?;
    let mut store = ParamStore::new();
    let mut expected_offset = 0;
    for e in entries {
        let count: usize = e.dims.iter().product();
        let width = if e.f32 { 4 } else { 8 };
        let end = e.offset + count * width;
        if e.offset != expected_offset {
            return Err(integrity(&manifest_path, format!("{}: offset {} breaks contiguity", e.name, e.offset)));
        }
        let bytes = data
            .get(e.offset..end)
            .ok_or_else(|| integrity(&data_path, format!("{}: needs bytes up to {end}, file has {}", e.name, data.len())))?;
        if crc32fast::hash(bytes) != e.crc {
            return Err(integrity(&data_path, format!("{}: checksum mismatch", e.name)));
        }
        let values: Vec<f64> = if e.f32 {
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()
        } else {
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
        };
        store.insert(e.name, tensor::from_vec(values, e.dims)?)?;
        expected_offset = end;
    }
    if expected_offset != data.len() {
        return Err(integrity(&data_path, format!("{} trailing bytes", data.len() - expected_offset)));
    }
    Ok(store)
}

pub fn save_config(dir: &Path, pairs: &[(String, String)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG), format_key_values(pairs))?;
    Ok(())
}

pub fn load_config(dir: &Path) -> Result<Vec<(String, String)>> {
    read_key_values(&dir.join(CONFIG))
}

/// Copies `params` into `into` with every name prefixed by `prefix.`.
pub fn merge_prefixed(into: &mut ParamStore, prefix: &str, params: &ParamStore) -> Result<()> {
    for (name, var) in params.iter() {
        into.insert(format!("{prefix}.{name}"), var.as_tensor().copy()?)?;
    }
    Ok(())
}

/// Entries of `params` under `prefix.`, with the prefix removed.
pub fn split_prefix(params: &ParamStore, prefix: &str) -> Result<ParamStore> {
    let mut out = ParamStore::new();
    let head = format!("{prefix}.");
    for (name, var) in params.iter() {
        if let Some(rest) = name.strip_prefix(&head) {
            out.insert(rest.to_string(), var.as_tensor().clone())?;
        }
    }
    Ok(out)
}

pub fn checkpoint_dir(root: &Path, name: &str) -> PathBuf {
    root.join(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{randn, rng, to_vec};

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        let mut r = rng(0);
        s.insert("layer.weight", randn((3, 4), &mut r).unwrap()).unwrap();
        s.insert("layer.bias", randn(4, &mut r).unwrap()).unwrap();
        s.insert("scalarish", randn((1, 1, 2), &mut r).unwrap()).unwrap();
        s
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let s = store();
        save_checkpoint(&s, &a).unwrap();
        let loaded = load_checkpoint(&a).unwrap();
        save_checkpoint(&loaded, &b).unwrap();
        for f in [MANIFEST, DATA] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        }
        let w = loaded.get("layer.weight").unwrap();
        assert_eq!(w.dims(), &[3, 4]);
        assert_eq!(to_vec(w.as_tensor()).unwrap(), to_vec(s.get("layer.weight").unwrap().as_tensor()).unwrap());
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&store(), dir.path()).unwrap();
        let data = fs::read(dir.path().join(DATA)).unwrap();
        fs::write(dir.path().join(DATA), &data[..data.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Integrity { .. })));
        let mut flipped = data.clone();
        flipped[5] ^= 0x10;
        fs::write(dir.path().join(DATA), &flipped).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Integrity { .. })));
        fs::write(dir.path().join(DATA), &data).unwrap();
        assert!(load_checkpoint(dir.path()).is_ok());
    }

    #[test]
    fn reads_f32_arrays() {
        let dir = tempfile::tempdir().unwrap();
        let vals = [1.5f32, -2.25];
        let bytes: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.path().join(MANIFEST), format!("w 1 2 f32 0 {:08x}\n", crc32fast::hash(&bytes))).unwrap();
        fs::write(dir.path().join(DATA), &bytes).unwrap();
        let s = load_checkpoint(dir.path()).unwrap();
        assert_eq!(to_vec(s.get("w").unwrap().as_tensor()).unwrap(), vec![1.5, -2.25]);
    }

    #[test]
    fn prefix_helpers() {
        let mut all = ParamStore::new();
        merge_prefixed(&mut all, "expression", &store()).unwrap();
        merge_prefixed(&mut all, "pose", &store()).unwrap();
        assert_eq!(all.len(), 6);
        let back = split_prefix(&all, "pose").unwrap();
        assert_eq!(back.names(), store().names());
    }
}

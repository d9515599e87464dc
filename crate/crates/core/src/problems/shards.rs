//! On-disk dataset format.
//!
//! One binary file per client, `client_NNN.shard`, all integers and floats
//! little-endian:
//!
//! ```text
//! magic      8 bytes  "FEDSHARD"
//! version    u32      1
//! client     u64
//! samples    u64
//! input_dim  u64
//! classes    u64
//! seed       u64
//! alpha      f64
//! beta       f64
//! features   samples × input_dim f64, row-major
//! labels     samples f64
//! ```
//!
//! `manifest.txt` records the generator parameters, one `shard` line per
//! file with its sample count and SHA-256, and a `content_sha256` over the
//! concatenated shard digests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::problems::synthetic::{FederatedDataset, Shard, SyntheticSpec};

const MAGIC: &[u8; 8] = b"FEDSHARD";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 5 * 8 + 2 * 8;
pub const MANIFEST: &str = "manifest.txt";

pub fn shard_file_name(client: usize) -> String {
    format!("client_{client:03}.shard")
}

pub fn encode_shard(client: usize, shard: &Shard, spec: &SyntheticSpec) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * (shard.features.len() + shard.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        client as u64,
        shard.len() as u64,
        shard.input_dim as u64,
        shard.classes as u64,
        spec.seed,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&spec.alpha.to_le_bytes());
    out.extend_from_slice(&spec.beta.to_le_bytes());
    for v in &shard.features {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &l in &shard.labels {
        out.extend_from_slice(&(l as f64).to_le_bytes());
    }
    out
}

/// Header fields of a decoded shard.
#[derive(Clone, Debug, PartialEq)]
pub struct ShardHeader {
    pub client: usize,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
}

pub fn decode_shard(path: &Path, bytes: &[u8]) -> Result<(ShardHeader, Shard)> {
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(bad("missing shard header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    if u32_at(8) != VERSION {
        return Err(bad("unsupported shard version"));
    }
    let client = u64_at(12) as usize;
    let samples = u64_at(20) as usize;
    let input_dim = u64_at(28) as usize;
    let classes = u64_at(36) as usize;
    let seed = u64_at(44);
    let alpha = f64_at(52);
    let beta = f64_at(60);
    let n_features = samples
        .checked_mul(input_dim)
        .ok_or_else(|| bad("size overflow"))?;
    let expected = HEADER_LEN + 8 * (n_features + samples);
    if bytes.len() != expected {
        return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut off = HEADER_LEN;
    let mut features = Vec::with_capacity(n_features);
    for _ in 0..n_features {
        features.push(f64_at(off));
        off += 8;
    }
    let mut labels = Vec::with_capacity(samples);
    for _ in 0..samples {
        let l = f64_at(off);
        off += 8;
        if !(l >= 0.0 && l.fract() == 0.0 && (l as usize) < classes) {
            return Err(bad(&format!("invalid label {l}")));
        }
        labels.push(l as u32);
    }
    Ok((
        ShardHeader {
            client,
            seed,
            alpha,
            beta,
        },
        Shard {
            input_dim,
            classes,
            features,
            labels,
        },
    ))
}

/// Summary of a written dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub files: Vec<(String, usize, String)>,
    pub content_hash: String,
}

/// Writes every shard and the manifest into `dir` (created if missing).
pub fn write_dataset(dir: &Path, data: &FederatedDataset) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::with_capacity(data.shards.len());
    let mut content = Sha256::new();
    for (i, shard) in data.shards.iter().enumerate() {
        let name = shard_file_name(i);
        let bytes = encode_shard(i, shard, &data.spec);
        let digest = hex::encode(Sha256::digest(&bytes));
        let path = dir.join(&name);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        content.update(digest.as_bytes());
        files.push((name, shard.len(), digest));
    }
    let content_hash = hex::encode(content.finalize());

    let s = &data.spec;
    let mut text = String::new();
    let _ = writeln!(text, "# fedadmm synthetic dataset v1");
    let _ = writeln!(text, "alpha={}", s.alpha);
    let _ = writeln!(text, "beta={}", s.beta);
    let _ = writeln!(text, "seed={}", s.seed);
    let _ = writeln!(text, "clients={}", s.n_clients);
    let _ = writeln!(text, "input_dim={}", s.input_dim);
    let _ = writeln!(text, "classes={}", s.classes);
    let _ = writeln!(text, "min_samples={}", s.min_samples);
    let _ = writeln!(text, "max_samples={}", s.max_samples);
    for (name, samples, digest) in &files {
        let _ = writeln!(text, "shard {name} samples={samples} sha256={digest}");
    }
    let _ = writeln!(text, "content_sha256={content_hash}");
    let path = dir.join(MANIFEST);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(Manifest { files, content_hash })
}

/// Reads a dataset written by [`write_dataset`], verifying every digest.
pub fn read_dataset(dir: &Path) -> Result<FederatedDataset> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let bad = |reason: String| Error::Format {
        path: manifest_path.clone(),
        reason,
    };
    let mut spec = SyntheticSpec::new(0.0, 0.0, 0);
    let mut entries: Vec<(PathBuf, String)> = Vec::new();
    let mut content_hash = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("shard ") {
            let mut parts = rest.split_whitespace();
            let name = parts.next().ok_or_else(|| bad(format!("line {}: missing shard name", lineno + 1)))?;
            let digest = parts
                .find_map(|p| p.strip_prefix("sha256="))
                .ok_or_else(|| bad(format!("line {}: missing sha256", lineno + 1)))?;
            entries.push((dir.join(name), digest.to_string()));
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("line {}: expected key=value", lineno + 1)))?;
        let parse_err = |_: &dyn std::error::Error| bad(format!("line {}: bad value for {key}", lineno + 1));
        match key {
            "alpha" => spec.alpha = value.parse().map_err(|e| parse_err(&e))?,
            "beta" => spec.beta = value.parse().map_err(|e| parse_err(&e))?,
            "seed" => spec.seed = value.parse().map_err(|e| parse_err(&e))?,
            "clients" => spec.n_clients = value.parse().map_err(|e| parse_err(&e))?,
            "input_dim" => spec.input_dim = value.parse().map_err(|e| parse_err(&e))?,
            "classes" => spec.classes = value.parse().map_err(|e| parse_err(&e))?,
            "min_samples" => spec.min_samples = value.parse().map_err(|e| parse_err(&e))?,
            "max_samples" => spec.max_samples = value.parse().map_err(|e| parse_err(&e))?,
            "content_sha256" => content_hash = Some(value.to_string()),
            other => return Err(bad(format!("line {}: unknown key {other}", lineno + 1))),
        }
    }
    if entries.len() != spec.n_clients {
        return Err(bad(format!(
            "{} shards listed for {} clients",
            entries.len(),
            spec.n_clients
        )));
    }
    let mut content = Sha256::new();
    let mut shards = Vec::with_capacity(entries.len());
    for (i, (path, digest)) in entries.iter().enumerate() {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let actual = hex::encode(Sha256::digest(&bytes));
        if &actual != digest {
            return Err(Error::Format {
                path: path.clone(),
                reason: "content hash does not match manifest".into(),
            });
        }
        content.update(actual.as_bytes());
        let (header, shard) = decode_shard(path, &bytes)?;
        if header.client != i || shard.input_dim != spec.input_dim || shard.classes != spec.classes {
            return Err(Error::Format {
                path: path.clone(),
                reason: "shard header disagrees with manifest".into(),
            });
        }
        shards.push(Arc::new(shard));
    }
    if let Some(expected) = content_hash {
        if hex::encode(content.finalize()) != expected {
            return Err(bad("content hash mismatch".into()));
        }
    }
    Ok(FederatedDataset {
        spec,
        shards,
        generating_models: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::synthetic::generate_synthetic;
    use proptest::prelude::*;

    fn small_spec(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_clients: 4,
            input_dim: 3,
            classes: 3,
            ..SyntheticSpec::new(0.5, 0.5, seed)
        }
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate_synthetic(&small_spec(3)).unwrap();
        let manifest = write_dataset(dir.path(), &data).unwrap();
        assert_eq!(manifest.files.len(), 4);
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.shards, data.shards);
        assert_eq!(back.spec, data.spec);

        // identical inputs, identical hashes
        let dir2 = tempfile::tempdir().unwrap();
        let again = write_dataset(dir2.path(), &generate_synthetic(&small_spec(3)).unwrap()).unwrap();
        assert_eq!(again.content_hash, manifest.content_hash);
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate_synthetic(&small_spec(1)).unwrap();
        write_dataset(dir.path(), &data).unwrap();
        let path = dir.path().join(shard_file_name(2));
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 20;
        bytes[last] ^= 1;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn header_layout_is_little_endian() {
        let shard = Shard {
            input_dim: 1,
            classes: 2,
            features: vec![1.5],
            labels: vec![1],
        };
        let bytes = encode_shard(7, &shard, &SyntheticSpec::new(0.25, 0.5, 9));
        assert_eq!(&bytes[..8], b"FEDSHARD");
        assert_eq!(bytes[12], 7);
        assert_eq!(bytes.len(), HEADER_LEN + 16);
        assert_eq!(f64::from_le_bytes(bytes[HEADER_LEN..HEADER_LEN + 8].try_into().unwrap()), 1.5);
    }

    proptest! {
        #[test]
        fn shard_codec_roundtrip(
            rows in 0usize..6, dim in 1usize..4,
            vals in prop::collection::vec(-1e6f64..1e6, 24),
            labs in prop::collection::vec(0u32..5, 6),
        ) {
            let shard = Shard {
                input_dim: dim,
                classes: 5,
                features: vals[..rows * dim].to_vec(),
                labels: labs[..rows].to_vec(),
            };
            let spec = SyntheticSpec::new(0.1, 0.2, 3);
            let bytes = encode_shard(1, &shard, &spec);
            let (h, back) = decode_shard(Path::new("x"), &bytes).unwrap();
            prop_assert_eq!(back, shard);
            prop_assert_eq!(h.client, 1);
        }
    }
}

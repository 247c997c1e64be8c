//! Binary model artifacts and the on-disk completion cache.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::CompletedJoin;

pub const ARTIFACT_MAGIC: &[u8; 8] = b"RELCOMP\x01";
pub const ARTIFACT_VERSION: u32 = 1;

/// Writes `value` framed as: magic, version (u32 LE), fingerprint length
/// (u16 LE) and bytes, payload length (u64 LE), JSON payload, SHA-256 of the
/// payload.
pub fn persist_artifact<T: Serialize>(path: &Path, fingerprint: &str, value: &T) -> Result<()> {
    let payload = serde_json::to_vec(value)?;
    let mut buf = Vec::with_capacity(payload.len() + 128);
    buf.extend_from_slice(ARTIFACT_MAGIC);
    buf.extend_from_slice(&ARTIFACT_VERSION.to_le_bytes());
    let fp = fingerprint.as_bytes();
    buf.extend_from_slice(&(fp.len() as u16).to_le_bytes());
    buf.extend_from_slice(fp);
    buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    buf.extend_from_slice(&payload);
    buf.extend_from_slice(&Sha256::digest(&payload));
    write_atomic(path, &buf)
}

/// Reads an artifact written by [`persist_artifact`]. When `expected` is
/// given, the stored fingerprint must match it.
pub fn load_artifact<T: DeserializeOwned>(path: &Path, expected: Option<&str>) -> Result<(T, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |m: &str| Error::CorruptArtifact(format!("{}: {m}", path.display()));
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| corrupt("truncated"))?;
        pos += n;
        Ok(s)
    };
    if take(8)? != ARTIFACT_MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != ARTIFACT_VERSION {
        return Err(Error::VersionMismatch(format!(
            "{} has format version {version}, expected {ARTIFACT_VERSION}",
            path.display()
        )));
    }
    let fp_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
    let fingerprint = String::from_utf8(take(fp_len)?.to_vec()).map_err(|_| corrupt("fingerprint"))?;
    let len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let payload = take(len)?.to_vec();
    let digest = take(32)?.to_vec();
    if Sha256::digest(&payload).as_slice() != digest.as_slice() {
        return Err(corrupt("checksum mismatch"));
    }
    if let Some(exp) = expected {
        if exp != fingerprint {
            return Err(Error::VersionMismatch(format!(
                "{} was trained under encoder fingerprint {fingerprint}, expected {exp}",
                path.display()
            )));
        }
    }
    let value = serde_json::from_slice(&payload).map_err(|e| corrupt(&e.to_string()))?;
    Ok((value, fingerprint))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheKey {
    pub dataset_fingerprint: String,
    pub path: Vec<String>,
    pub plan_fingerprint: String,
}

impl CacheKey {
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("cache key serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

pub fn cache_dir_for(root: &Path, key: &CacheKey) -> PathBuf {
    root.join(key.digest())
}

pub fn persist_completion(root: &Path, key: &CacheKey, join: &CompletedJoin) -> Result<PathBuf> {
    let dir = cache_dir_for(root, key);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_atomic(&dir.join("key.json"), &serde_json::to_vec_pretty(key)?)?;
    write_atomic(&dir.join("join.json"), &serde_json::to_vec(join)?)?;
    Ok(dir)
}

/// Cached join for `key`, or `None` on a miss.
pub fn load_completion(root: &Path, key: &CacheKey) -> Result<Option<CompletedJoin>> {
    let dir = cache_dir_for(root, key);
    let key_path = dir.join("key.json");
    let Ok(stored) = std::fs::read(&key_path) else {
        return Ok(None);
    };
    let stored: CacheKey = match serde_json::from_slice(&stored) {
        Ok(k) => k,
        Err(_) => return Ok(None),
    };
    if &stored != key {
        return Ok(None);
    }
    let join_path = dir.join("join.json");
    let bytes = std::fs::read(&join_path).map_err(|e| Error::io(&join_path, e))?;
    Ok(Some(serde_json::from_slice(&bytes)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{JoinColumn, JoinRow, Origin, RowSource, Value};
    use crate::schema::ColumnType;

    fn sample_join() -> CompletedJoin {
        CompletedJoin {
            path: vec!["a".into(), "b".into()],
            columns: vec![
                JoinColumn {
                    table: "a".into(),
                    column: "x".into(),
                    ty: ColumnType::Continuous,
                },
                JoinColumn {
                    table: "b".into(),
                    column: "y".into(),
                    ty: ColumnType::Categorical,
                },
            ],
            rows: vec![
                JoinRow {
                    values: vec![Value::Num(0.1 + 0.2), Value::Str("u".into())],
                    sources: vec![RowSource::Existing(0), RowSource::Existing(3)],
                    origin: Origin::Existing,
                    weight: 1.0,
                    certainty: vec![1.0, 1.0],
                },
                JoinRow {
                    values: vec![Value::Num(1.0 / 3.0), Value::Null],
                    sources: vec![
                        RowSource::Existing(1),
                        RowSource::Synthesized { id: 7, key: None },
                    ],
                    origin: Origin::Synthesized,
                    weight: 1.0 / 7.0,
                    certainty: vec![1.0, 0.123456789],
                },
            ],
            negative_deficits: 2,
        }
    }

    #[test]
    fn completion_round_trip_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let key = CacheKey {
            dataset_fingerprint: "d".into(),
            path: vec!["a".into(), "b".into()],
            plan_fingerprint: "p".into(),
        };
        let j = sample_join();
        persist_completion(dir.path(), &key, &j).unwrap();
        assert_eq!(load_completion(dir.path(), &key).unwrap(), Some(j));
        let other = CacheKey {
            plan_fingerprint: "q".into(),
            ..key
        };
        assert_eq!(load_completion(dir.path(), &other).unwrap(), None);
    }

    #[test]
    fn artifact_checks() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let v = vec![0.1f64, 1e-300, std::f64::consts::PI];
        persist_artifact(&p, "fp1", &v).unwrap();
        let (back, fp): (Vec<f64>, String) = load_artifact(&p, Some("fp1")).unwrap();
        assert_eq!(back, v);
        assert_eq!(fp, "fp1");
        assert!(matches!(
            load_artifact::<Vec<f64>>(&p, Some("fp2")),
            Err(Error::VersionMismatch(_))
        ));
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            load_artifact::<Vec<f64>>(&p, None),
            Err(Error::CorruptArtifact(_))
        ));
        let mut bumped = bytes.clone();
        bumped[8] = 9;
        std::fs::write(&p, &bumped).unwrap();
        assert!(matches!(
            load_artifact::<Vec<f64>>(&p, None),
            Err(Error::VersionMismatch(_))
        ));
    }
}

//! Line-oriented record files.
//!
//! ```text
//! EATK <kind> v<version> seed=<seed> config=<sha256 of the meta line>
//! <meta JSON>
//! <record JSON>
//! ...
//! END <record count> <sha256 of every preceding byte>
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &str = "EATK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub kind: String,
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::Format(format!("serialize: {e}")))
}

pub fn from_json<T: DeserializeOwned>(s: &str, what: &str) -> Result<T> {
    serde_json::from_str(s).map_err(|e| Error::Format(format!("bad {what}: {e}")))
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| {
        Error::InvalidArgument(format!("`{}` is not a file path", path.display()))
    })?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Serializes a record file to bytes.
pub fn encode_records<M: Serialize, R: Serialize>(
    kind: &str,
    seed: u64,
    meta: &M,
    records: &[R],
) -> Result<Vec<u8>> {
    let meta_line = to_json(meta)?;
    let mut body = format!(
        "{MAGIC} {kind} v{FORMAT_VERSION} seed={seed} config={}\n{meta_line}\n",
        sha_hex(meta_line.as_bytes())
    );
    for r in records {
        body.push_str(&to_json(r)?);
        body.push('\n');
    }
    let footer = format!("END {} {}\n", records.len(), sha_hex(body.as_bytes()));
    body.push_str(&footer);
    Ok(body.into_bytes())
}

pub fn write_records<M: Serialize, R: Serialize>(
    path: &Path,
    kind: &str,
    seed: u64,
    meta: &M,
    records: &[R],
) -> Result<()> {
    write_atomic(path, &encode_records(kind, seed, meta, records)?)
}

fn parse_header(line: &str) -> Result<Header> {
    let parts: Vec<&str> = line.split(' ').collect();
    if parts.len() != 5 || parts[0] != MAGIC {
        return Err(Error::Format(format!("corrupt header `{line}`")));
    }
    let version = parts[2]
        .strip_prefix('v')
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad version field `{}`", parts[2])))?;
    let seed = parts[3]
        .strip_prefix("seed=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad seed field `{}`", parts[3])))?;
    let config_hash = parts[4]
        .strip_prefix("config=")
        .ok_or_else(|| Error::Format(format!("bad config field `{}`", parts[4])))?
        .to_string();
    Ok(Header {
        kind: parts[1].to_string(),
        version,
        seed,
        config_hash,
    })
}

/// Parsed record file: header, meta line and raw record lines.
pub struct RecordFile {
    pub header: Header,
    pub meta: String,
    pub records: Vec<String>,
}

pub fn decode_records(bytes: &[u8], kind: &str) -> Result<RecordFile> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Format("file is not UTF-8".into()))?;
    let first = text
        .lines()
        .next()
        .ok_or_else(|| Error::Format("empty file".into()))?;
    let header = parse_header(first)?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Version {
            found: header.version,
            expected: FORMAT_VERSION,
        });
    }
    if header.kind != kind {
        return Err(Error::Format(format!(
            "expected a `{kind}` file, found `{}`",
            header.kind
        )));
    }
    let body_end = text
        .trim_end_matches('\n')
        .rfind('\n')
        .map(|i| i + 1)
        .ok_or_else(|| Error::Format("truncated file: no footer".into()))?;
    let (body, footer) = text.split_at(body_end);
    let f: Vec<&str> = footer.trim_end().split(' ').collect();
    if f.len() != 3 || f[0] != "END" {
        return Err(Error::Format("truncated file: missing END footer".into()));
    }
    if sha_hex(body.as_bytes()) != f[2] {
        return Err(Error::Format("checksum mismatch".into()));
    }
    let mut lines = body.lines().skip(1);
    let meta = lines
        .next()
        .ok_or_else(|| Error::Format("missing meta line".into()))?
        .to_string();
    if sha_hex(meta.as_bytes()) != header.config_hash {
        return Err(Error::Format("config hash does not match meta line".into()));
    }
    let records: Vec<String> = lines.map(str::to_string).collect();
    let count: usize = f[1]
        .parse()
        .map_err(|_| Error::Format("bad record count".into()))?;
    if count != records.len() {
        return Err(Error::Format(format!(
            "footer promises {count} records, found {}",
            records.len()
        )));
    }
    Ok(RecordFile {
        header,
        meta,
        records,
    })
}

pub fn read_records(path: &Path, kind: &str) -> Result<RecordFile> {
    decode_records(&fs::read(path)?, kind)
}

/// Little-endian f64 values, base64 encoded.
pub fn encode_f64s(v: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(v.len() * 8);
    for x in v {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode_f64s(s: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| Error::Format(format!("bad base64 payload: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(
            "float payload length is not a multiple of 8".into(),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

/// `key = value` lines, one per entry, in the given order.
pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut s = String::new();
    for (k, v) in entries {
        if k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(Error::InvalidArgument(format!(
                "manifest entry `{k}` is not single-line"
            )));
        }
        s.push_str(&format!("{k} = {v}\n"));
    }
    write_atomic(path, s.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once(" = ")
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Format(format!("bad manifest line `{l}`")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let meta = serde_json::json!({"a": 1});
        let recs = vec![serde_json::json!([1.5, -0.0]), serde_json::json!("x")];
        let bytes = encode_records("test", 7, &meta, &recs).unwrap();
        let f = decode_records(&bytes, "test").unwrap();
        assert_eq!(f.header.seed, 7);
        assert_eq!(f.records.len(), 2);

        assert!(matches!(
            decode_records(&bytes, "other"),
            Err(Error::Format(_))
        ));
        // truncation drops the footer
        let cut = &bytes[..bytes.len() - 30];
        assert!(decode_records(cut, "test").is_err());
        // flipped payload byte
        let mut bad = bytes.clone();
        let body = bytes.iter().position(|&b| b == b'\n').unwrap();
        let i = body + bad[body..].iter().position(|&b| b == b'1').unwrap();
        bad[i] = b'2';
        assert!(matches!(
            decode_records(&bad, "test"),
            Err(Error::Format(_))
        ));
        // older version
        let old = String::from_utf8(bytes)
            .unwrap()
            .replacen(" v1 ", " v0 ", 1);
        assert!(matches!(
            decode_records(old.as_bytes(), "test"),
            Err(Error::Version {
                found: 0,
                expected: 1
            })
        ));
    }

    #[test]
    fn floats_are_bit_exact() {
        let v = vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, std::f64::consts::PI];
        let back = decode_f64s(&encode_f64s(&v)).unwrap();
        assert_eq!(
            v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            back.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert!(decode_f64s("AAAA").is_err());
    }
}

//! Content-addressed artifact cache.
//!
//! Entries are keyed by the SHA-256 of their inputs and stored as
//! `<root>/<key>.artifact`. Each file starts with a header line carrying the
//! payload length and digest, so truncated or edited entries are detected and
//! recomputed. New entries are published with a hard link, which fails if the
//! key already exists: the first writer wins and later writers read its bytes.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use log::warn;
use sha2::{Digest, Sha256};

const MAGIC: &str = "opeforge-cache v1";

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone)]
pub struct ArtifactCache {
    root: PathBuf,
}

/// Hex SHA-256 of the key inputs.
pub fn cache_key(inputs: &[u8]) -> String {
    hex::encode(Sha256::digest(inputs))
}

enum Lookup {
    Hit(Vec<u8>),
    Missing,
    Corrupted(String),
}

impl ArtifactCache {
    /// Opens (creating if needed) a cache rooted at `root` and checks that it
    /// is writable.
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let probe = root.join(format!(".probe-{}", std::process::id()));
        fs::write(&probe, b"")?;
        fs::remove_file(&probe)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_path(&self, key: &str) -> PathBuf {
        self.root.join(format!("{key}.artifact"))
    }

    fn lookup(path: &Path) -> Lookup {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Lookup::Missing,
            Err(e) => return Lookup::Corrupted(e.to_string()),
        };
        match decode_entry(&bytes) {
            Ok(payload) => Lookup::Hit(payload),
            Err(reason) => Lookup::Corrupted(reason),
        }
    }

    /// Returns the stored payload for `inputs`, or runs `compute`, stores its
    /// output, and returns it. Failing to persist only logs a warning.
    pub fn get_or_compute<F, E>(&self, inputs: &[u8], compute: F) -> Result<Vec<u8>, E>
    where
        F: FnOnce() -> Result<Vec<u8>, E>,
    {
        let key = cache_key(inputs);
        let path = self.entry_path(&key);
        let corrupted = match Self::lookup(&path) {
            Lookup::Hit(payload) => return Ok(payload),
            Lookup::Missing => false,
            Lookup::Corrupted(reason) => {
                warn!("cache entry {} is corrupted ({reason}); recomputing", path.display());
                true
            }
        };
        let payload = compute()?;
        match self.publish(&path, &payload, corrupted) {
            Ok(Some(existing)) => Ok(existing),
            Ok(None) => Ok(payload),
            Err(e) => {
                warn!("could not write cache entry {}: {e}", path.display());
                Ok(payload)
            }
        }
    }

    /// Writes an entry. Returns the bytes of a concurrent first writer when
    /// one beat us to the key.
    fn publish(&self, path: &Path, payload: &[u8], overwrite: bool) -> io::Result<Option<Vec<u8>>> {
        let tmp = self.root.join(format!(
            ".{}.{}.{}.tmp",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("entry"),
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&encode_entry(payload))?;
            f.sync_all()?;
        }
        if overwrite {
            return fs::rename(&tmp, path).map(|_| None);
        }
        let result = match fs::hard_link(&tmp, path) {
            Ok(()) => Ok(None),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => match Self::lookup(path) {
                Lookup::Hit(existing) => Ok(Some(existing)),
                _ => fs::rename(&tmp, path).map(|_| None),
            },
            Err(e) => Err(e),
        };
        let _ = fs::remove_file(&tmp);
        result
    }
}

fn encode_entry(payload: &[u8]) -> Vec<u8> {
    let mut out = format!(
        "{MAGIC} {} {}\n",
        payload.len(),
        hex::encode(Sha256::digest(payload))
    )
    .into_bytes();
    out.extend_from_slice(payload);
    out
}

fn decode_entry(bytes: &[u8]) -> Result<Vec<u8>, String> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or("missing header")?;
    let header = std::str::from_utf8(&bytes[..newline]).map_err(|_| "header is not utf-8")?;
    let rest = header.strip_prefix(MAGIC).ok_or("bad magic")?;
    let mut parts = rest.split_whitespace();
    let len: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or("bad length")?;
    let digest = parts.next().ok_or("missing digest")?;
    let payload = &bytes[newline + 1..];
    if payload.len() != len {
        return Err(format!("length {} != {len}", payload.len()));
    }
    if hex::encode(Sha256::digest(payload)) != digest {
        return Err("digest mismatch".into());
    }
    Ok(payload.to_vec())
}

//! Run manifests: every artifact-producing command records its tool version,
//! effective config, seed, and content hashes of inputs and outputs, so any
//! artifact can be traced to the exact invocation that produced it.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub master_seed: u64,
    /// Full effective configuration snapshot.
    pub config: serde_json::Value,
    /// Command-specific metadata (union policy, convergence notes, ...).
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
    pub input_hashes: BTreeMap<String, String>,
    pub output_hashes: BTreeMap<String, String>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

impl RunManifest {
    pub fn begin(command: &str, master_seed: u64, config: serde_json::Value) -> Self {
        Self {
            tool: "grace".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            master_seed,
            config,
            extra: BTreeMap::new(),
            input_hashes: BTreeMap::new(),
            output_hashes: BTreeMap::new(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
        }
    }

    pub fn note(&mut self, key: &str, value: serde_json::Value) {
        self.extra.insert(key.to_string(), value);
    }

    /// Records hashes for every regular file under `dir` (one level of
    /// nesting), keyed by relative path, excluding manifests themselves.
    pub fn hash_outputs(&mut self, dir: &Path) -> std::io::Result<()> {
        self.output_hashes = hash_dir(dir)?;
        Ok(())
    }

    pub fn hash_inputs(&mut self, dir: &Path) -> std::io::Result<()> {
        self.input_hashes = hash_dir(dir)?;
        Ok(())
    }

    /// Finalizes and writes `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> std::io::Result<()> {
        self.finished_unix_ms = now_ms();
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        std::fs::write(dir.join(MANIFEST_FILE), text)
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut f = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    Ok(out)
}

/// Content hashes of all regular files under `dir`, recursing one level into
/// subdirectories, keyed by path relative to `dir`. Manifest files are
/// excluded so a manifest never hashes itself.
pub fn hash_dir(dir: &Path) -> std::io::Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    collect_hashes(dir, dir, 0, &mut out)?;
    Ok(out)
}

fn collect_hashes(
    root: &Path,
    dir: &Path,
    depth: usize,
    out: &mut BTreeMap<String, String>,
) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().to_string();
        if path.is_dir() {
            if depth < 2 {
                collect_hashes(root, &path, depth + 1, out)?;
            }
        } else if name != MANIFEST_FILE {
            let rel = path
                .strip_prefix(root)
                .unwrap_or(&path)
                .to_string_lossy()
                .to_string();
            out.insert(rel, sha256_file(&path)?);
        }
    }
    Ok(())
}

/// Stable hash of a whole directory: the hash of its sorted per-file hashes.
pub fn dir_digest(dir: &Path) -> std::io::Result<String> {
    let hashes = hash_dir(dir)?;
    let mut acc = String::new();
    for (name, hash) in &hashes {
        acc.push_str(name);
        acc.push(':');
        acc.push_str(hash);
        acc.push('\n');
    }
    Ok(sha256_bytes(acc.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_known_input() {
        assert_eq!(
            sha256_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trip_and_self_exclusion() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "x,y\n1,2\n").unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("sub/b.json"), "{}").unwrap();
        let mut m = RunManifest::begin("gen", 42, serde_json::json!({"k": 1}));
        m.note("union_policy", serde_json::json!("per-split"));
        m.hash_outputs(dir.path()).unwrap();
        assert_eq!(m.output_hashes.len(), 2);
        assert!(m.output_hashes.contains_key("a.csv"));
        assert!(m.output_hashes.contains_key("sub/b.json"));
        m.finish(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back.master_seed, 42);
        assert_eq!(back.command, "gen");
        // Re-hashing after the manifest exists must not include it.
        let again = hash_dir(dir.path()).unwrap();
        assert_eq!(again.len(), 2);
    }

    #[test]
    fn dir_digest_is_content_stable() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("f.txt"), "hello").unwrap();
        let d1 = dir_digest(dir.path()).unwrap();
        let d2 = dir_digest(dir.path()).unwrap();
        assert_eq!(d1, d2);
        std::fs::write(dir.path().join("f.txt"), "changed").unwrap();
        assert_ne!(dir_digest(dir.path()).unwrap(), d1);
    }
}

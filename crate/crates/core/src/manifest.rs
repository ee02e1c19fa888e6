//! Run manifests written next to every output.
//!
//! A manifest records the tool version, subcommand, seed, config hashes and
//! SHA-256 digests of inputs and outputs. It carries no timestamps or
//! absolute paths, so identical runs produce identical manifests.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL: &str = "crashkit";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: Option<u64>,
    pub template_hash: Option<String>,
    pub dictionary_hash: Option<String>,
    /// Input file name → sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name (relative to the manifest) → sha256.
    pub outputs: BTreeMap<String, String>,
    pub params: BTreeMap<String, serde_json::Value>,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut f = std::fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Key for a path inside the manifest: its file name, or the full string
/// when there is none. Repeated names get a `#n` suffix.
fn key_for(map: &BTreeMap<String, String>, path: &Path) -> String {
    let base = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let mut key = base.clone();
    let mut n = 2;
    while map.contains_key(&key) {
        key = format!("{base}#{n}");
        n += 1;
    }
    key
}

impl Manifest {
    pub fn new(subcommand: &str) -> Self {
        Manifest {
            tool: TOOL.to_string(),
            version: VERSION.to_string(),
            subcommand: subcommand.to_string(),
            seed: None,
            template_hash: None,
            dictionary_hash: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn hashes(mut self, template_hash: Option<&str>, dictionary_hash: Option<&str>) -> Self {
        self.template_hash = template_hash.map(str::to_string);
        self.dictionary_hash = dictionary_hash.map(str::to_string);
        self
    }

    pub fn param(mut self, key: &str, value: impl Serialize) -> Self {
        self.params
            .insert(key.to_string(), serde_json::to_value(value).expect("param serializes"));
        self
    }

    pub fn add_input(&mut self, path: &Path) -> std::io::Result<()> {
        let digest = sha256_file(path)?;
        let key = key_for(&self.inputs, path);
        self.inputs.insert(key, digest);
        Ok(())
    }

    /// Hash every regular file under `dir` (recursively), keyed by relative path.
    pub fn add_output_dir(&mut self, dir: &Path) -> std::io::Result<()> {
        let mut files = Vec::new();
        collect_files(dir, &mut files)?;
        files.sort();
        for f in files {
            let rel = f.strip_prefix(dir).unwrap_or(&f);
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            if key == MANIFEST_NAME {
                continue;
            }
            self.outputs.insert(key, sha256_file(&f)?);
        }
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> std::io::Result<()> {
        let digest = sha256_file(path)?;
        let key = key_for(&self.outputs, path);
        self.outputs.insert(key, digest);
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn read(path: &Path) -> std::io::Result<Manifest> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Where the manifest for an output goes: `dir/manifest.json` for a
/// directory, `file.manifest.json` beside a single file.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    if output.is_dir() {
        output.join(MANIFEST_NAME)
    } else {
        let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        output.with_file_name(name)
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_is_path_independent() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let build = |d: &Path| {
            std::fs::write(d.join("in.csv"), "x,y\n1,2\n").unwrap();
            std::fs::create_dir(d.join("out")).unwrap();
            std::fs::write(d.join("out/r.txt"), "ok").unwrap();
            let mut m = Manifest::new("eval").seed(7).param("rate", "all");
            m.add_input(&d.join("in.csv")).unwrap();
            m.add_output_dir(&d.join("out")).unwrap();
            m.to_json()
        };
        let ja = build(a.path());
        assert_eq!(ja, build(b.path()));
        let m: Manifest = serde_json::from_str(&ja).unwrap();
        assert_eq!(m.outputs.len(), 1);
        assert_eq!(m.seed, Some(7));
    }

    #[test]
    fn duplicate_input_names_are_suffixed() {
        let d = tempfile::tempdir().unwrap();
        std::fs::create_dir(d.path().join("a")).unwrap();
        std::fs::create_dir(d.path().join("b")).unwrap();
        std::fs::write(d.path().join("a/t.csv"), "1").unwrap();
        std::fs::write(d.path().join("b/t.csv"), "2").unwrap();
        let mut m = Manifest::new("ingest");
        m.add_input(&d.path().join("a/t.csv")).unwrap();
        m.add_input(&d.path().join("b/t.csv")).unwrap();
        assert_eq!(m.inputs.keys().collect::<Vec<_>>(), ["t.csv", "t.csv#2"]);
    }

    #[test]
    fn manifest_location() {
        let d = tempfile::tempdir().unwrap();
        assert_eq!(manifest_path_for(d.path()), d.path().join("manifest.json"));
        assert_eq!(
            manifest_path_for(&d.path().join("m.json")),
            d.path().join("m.json.manifest.json")
        );
    }
}

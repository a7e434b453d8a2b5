//! Run manifests: everything needed to repeat a command, plus a hash of the
//! resolved configuration that ignores key order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use stealthy::textfmt::{Document, Section};
use stealthy::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    /// Model file the run was configured from.
    pub config_path: PathBuf,
    pub seed: u64,
    pub version: String,
    pub output_dir: PathBuf,
    /// Resolved command configuration, including the command name.
    pub config: BTreeMap<String, String>,
    /// Outputs that are not part of the configuration, such as a fitted
    /// exponent. Excluded from the hash.
    pub results: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(config_path: &Path, seed: u64, output_dir: &Path, config: BTreeMap<String, String>) -> Self {
        RunManifest {
            config_path: config_path.to_path_buf(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            output_dir: output_dir.to_path_buf(),
            config,
            results: BTreeMap::new(),
        }
    }

    /// SHA-256 of `key=value` lines in key order.
    pub fn config_hash(&self) -> String {
        let canonical: String = self.config.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        sha256_hex(canonical.as_bytes())
    }

    pub fn render(&self) -> String {
        let run = Section::new("manifest")
            .with("config_path", self.config_path.display())
            .with("config_hash", self.config_hash())
            .with("seed", self.seed)
            .with("version", &self.version)
            .with("output_dir", self.output_dir.display());
        let mut config = Section::new("config");
        for (k, v) in &self.config {
            config = config.with(k, v);
        }
        let mut sections = vec![run, config];
        if !self.results.is_empty() {
            let mut results = Section::new("results");
            for (k, v) in &self.results {
                results = results.with(k, v);
            }
            sections.push(results);
        }
        Document {
            sections,
            matrices: vec![],
        }
        .render()
    }

    /// Parses a manifest and checks its stored hash against its contents.
    pub fn parse(text: &str) -> Result<Self> {
        let doc = Document::parse(text)?;
        let run = doc.require_section("manifest")?;
        let collect = |name: &str| -> BTreeMap<String, String> {
            doc.section(name)
                .map(|s| s.entries.iter().cloned().collect())
                .unwrap_or_default()
        };
        let manifest = RunManifest {
            config_path: PathBuf::from(run.require("config_path")?),
            seed: run.parse_value("seed")?,
            version: run.require("version")?.to_string(),
            output_dir: PathBuf::from(run.require("output_dir")?),
            config: collect("config"),
            results: collect("results"),
        };
        let stored = run.require("config_hash")?;
        if stored != manifest.config_hash() {
            return Err(Error::InvalidArgument(format!(
                "manifest hash {stored} does not match its configuration ({})",
                manifest.config_hash()
            )));
        }
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.config
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::InvalidArgument(format!("manifest has no `{key}` entry")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunManifest {
        let config = [("command", "sweep"), ("attack", "a1"), ("runs", "4")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        RunManifest::new(Path::new("/m/model.txt"), 7, Path::new("/out"), config)
    }

    #[test]
    fn roundtrip_and_reordering() {
        let m = sample();
        let text = m.render();
        assert_eq!(RunManifest::parse(&text).unwrap(), m);

        let mut lines: Vec<&str> = text.lines().collect();
        let start = lines.iter().position(|l| *l == "[config]").unwrap() + 1;
        lines[start..start + 3].reverse();
        let shuffled = RunManifest::parse(&lines.join("\n")).unwrap();
        assert_eq!(shuffled.config_hash(), m.config_hash());
    }

    #[test]
    fn tampering_is_detected() {
        let text = sample().render().replace("runs = 4", "runs = 5");
        assert!(RunManifest::parse(&text).is_err());
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}

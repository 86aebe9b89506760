//! Provenance and file writers.

use std::fmt::Debug;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Settings;
use crate::Failure;

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub rng_stream_version: u32,
    pub config_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Provenance {
    pub fn new(settings: &Settings, input: Option<&Path>, seed: Option<u64>) -> Result<Self, Failure> {
        let config = serde_json::to_vec(settings).expect("settings serialise");
        let input_sha256 = input
            .map(|p| {
                std::fs::read(p)
                    .map(|b| sha256_hex(&b))
                    .map_err(|e| Failure::usage(format!("cannot read '{}': {e}", p.display())))
            })
            .transpose()?;
        Ok(Provenance {
            tool: "cpmdid",
            version: env!("CARGO_PKG_VERSION"),
            rng_stream_version: cpmdid::rng::STREAM_VERSION,
            config_sha256: sha256_hex(&config),
            input_sha256,
            seed,
        })
    }

    /// `#`-prefixed lines placed above a CSV header.
    pub fn csv_header(&self) -> String {
        let mut s = format!("# {} {} (rng streams v{})\n", self.tool, self.version, self.rng_stream_version);
        s.push_str(&format!("# config_sha256={}\n", self.config_sha256));
        if let Some(h) = &self.input_sha256 {
            s.push_str(&format!("# input_sha256={h}\n"));
        }
        if let Some(seed) = self.seed {
            s.push_str(&format!("# seed={seed}\n"));
        }
        s
    }
}

pub struct OutputDir(PathBuf);

impl OutputDir {
    pub fn create(path: &Path) -> Result<Self, Failure> {
        std::fs::create_dir_all(path)
            .map_err(|e| Failure::usage(format!("cannot create output directory '{}': {e}", path.display())))?;
        Ok(OutputDir(path.to_path_buf()))
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, Failure> {
        let path = self.0.join(name);
        std::fs::write(&path, bytes).map_err(|e| Failure::usage(format!("cannot write '{}': {e}", path.display())))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, Failure> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("output serialises");
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// Provenance lines followed by a CSV table.
    pub fn write_csv(&self, name: &str, provenance: &Provenance, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, Failure> {
        let mut buf = provenance.csv_header().into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let io = |e: csv::Error| Failure::usage(format!("cannot format {name}: {e}"));
            w.write_record(header).map_err(io)?;
            for r in rows {
                w.write_record(r).map_err(io)?;
            }
            w.flush().map_err(|e| Failure::usage(format!("cannot format {name}: {e}")))?;
        }
        self.write(name, &buf)
    }
}

/// Shortest round-trip text for a number.
pub fn num<T: Debug>(x: T) -> String {
    format!("{x:?}")
}

pub fn opt_num<T: Debug>(x: Option<T>) -> String {
    x.map(num).unwrap_or_default()
}

//! File formats, provenance and seed derivation shared by all subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use mpotomo::povm::{LocalPovm, LocalPovmJson, ProductPovm, ProductPovmJson};
use mpotomo::sampler::OutcomeRecord;
use mpotomo::tt::TtTensor;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const TOOL: &str = "mpotomo";

/// Embedded in every output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// SHA-256 of the canonical JSON of the command's resolved inputs.
    pub spec_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(command: &str, spec: &serde_json::Value, seed: u64) -> Self {
        Provenance {
            tool: TOOL.into(),
            version: mpotomo::VERSION.into(),
            command: command.into(),
            spec_hash: spec_hash(spec),
            seed,
        }
    }

    /// `# key: value` lines for CSV headers.
    pub fn csv_header(&self) -> String {
        format!(
            "# tool: {}\n# version: {}\n# command: {}\n# spec_hash: {}\n# seed: {}\n",
            self.tool, self.version, self.command, self.spec_hash, self.seed
        )
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{:02x}", b)).collect()
}

/// `serde_json::Value` objects keep keys sorted, so this is canonical.
pub fn spec_hash(spec: &serde_json::Value) -> String {
    sha256_hex(spec.to_string().as_bytes())
}

/// First eight bytes of `sha256(base_seed ":" key)`, big-endian.
pub fn derive_seed(base_seed: u64, key: &str) -> u64 {
    let digest = Sha256::digest(format!("{}:{}", base_seed, key).as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(b)
}

/// Fixed 12-significant-digit formatting for CSV numeric fields.
pub fn fmt_f64(x: f64) -> String {
    format!("{:.11e}", x)
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| CliError::Json { path: path.display().to_string(), source })
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|source| CliError::Json { path: path.display().to_string(), source })?;
    text.push('\n');
    write_text(path, &text)
}

/// Output of `generate`.
#[derive(Serialize, Deserialize)]
pub struct StateFile {
    pub provenance: Provenance,
    /// How the state was produced.
    pub source: serde_json::Value,
    pub state: TtTensor,
}

/// Output of `measure`.
#[derive(Serialize, Deserialize)]
pub struct RecordFile {
    pub provenance: Provenance,
    pub state_hash: String,
    pub record: OutcomeRecord,
}

/// Accepts a bare TT state as well as a `StateFile`.
#[derive(Deserialize)]
#[serde(untagged)]
enum StateInput {
    File(Box<StateFile>),
    Bare(TtTensor),
}

/// Loads a state and returns it with the SHA-256 of the file.
pub fn load_state(path: &Path) -> Result<(TtTensor, String)> {
    let bytes = read_bytes(path)?;
    let parsed: StateInput =
        serde_json::from_slice(&bytes).map_err(|source| CliError::Json { path: path.display().to_string(), source })?;
    let state = match parsed {
        StateInput::File(f) => f.state,
        StateInput::Bare(t) => t,
    };
    Ok((state, sha256_hex(&bytes)))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RecordInput {
    File(Box<RecordFile>),
    Bare(OutcomeRecord),
}

pub fn load_record(path: &Path) -> Result<(OutcomeRecord, String)> {
    let bytes = read_bytes(path)?;
    let parsed: RecordInput =
        serde_json::from_slice(&bytes).map_err(|source| CliError::Json { path: path.display().to_string(), source })?;
    let record = match parsed {
        RecordInput::File(f) => f.record,
        RecordInput::Bare(r) => r,
    };
    Ok((record, sha256_hex(&bytes)))
}

pub const LOCAL_SIC: &str = "local-sic";

/// POVM choice: the qubit SIC on every site, or a JSON file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PovmSource {
    LocalSic,
    File(PathBuf),
}

impl PovmSource {
    pub fn parse(s: &str) -> Self {
        if s == LOCAL_SIC {
            PovmSource::LocalSic
        } else {
            PovmSource::File(PathBuf::from(s))
        }
    }

    pub fn label(&self) -> String {
        match self {
            PovmSource::LocalSic => LOCAL_SIC.into(),
            PovmSource::File(p) => p.display().to_string(),
        }
    }

    /// Product POVM on `n` sites. A file holds either a product POVM
    /// (`{sites}` or `{local, repeat}`, which must have `n` sites) or one
    /// local POVM `{d, elements}` that is repeated over all sites.
    /// Returns the POVM and an identifier for provenance.
    pub fn load(&self, n: usize) -> Result<(ProductPovm, String)> {
        match self {
            PovmSource::LocalSic => Ok((ProductPovm::local_sic(n), LOCAL_SIC.into())),
            PovmSource::File(path) => {
                let bytes = read_bytes(path)?;
                let hash = sha256_hex(&bytes);
                let povm = if let Ok(j) = serde_json::from_slice::<ProductPovmJson>(&bytes) {
                    let p = ProductPovm::try_from(&j)?;
                    if p.n() != n {
                        return Err(CliError::Input(format!(
                            "{} describes {} sites but {} are needed",
                            path.display(),
                            p.n(),
                            n
                        )));
                    }
                    p
                } else {
                    let j: LocalPovmJson = serde_json::from_slice(&bytes)
                        .map_err(|source| CliError::Json { path: path.display().to_string(), source })?;
                    ProductPovm::uniform(LocalPovm::try_from(&j)?, n)?
                };
                Ok((povm, format!("sha256:{}", hash)))
            }
        }
    }
}

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dpmfuse::denoiser::Latent;
use dpmfuse::inversion::InversionRecord;
use dpmfuse::lab::{read_wav, write_wav, LatentCodec, Signal};
use dpmfuse::schedule::NoiseSchedule;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::exit::{Coded, Exit};

/// A produced file and the SHA-256 of its bytes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub outputs: Vec<OutputEntry>,
    pub seed: u64,
    /// Absent for commands that do not touch a schedule.
    pub schedule_fingerprint: Option<String>,
}

/// Collects outputs as they are written, then emits the manifest.
pub struct Outputs {
    entries: Vec<OutputEntry>,
}

impl Outputs {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    fn record(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).with_context(|| format!("re-reading {}", path.display()))?;
        self.entries.push(OutputEntry {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    /// Writes through a temp file in the destination directory, then renames.
    pub fn write_with(
        &mut self,
        path: &Path,
        body: impl FnOnce(&mut dyn Write) -> Result<()>,
    ) -> Result<()> {
        let dir = parent_dir(path);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
        {
            let mut w = BufWriter::new(tmp.as_file_mut());
            body(&mut w)?;
            w.flush()?;
        }
        tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
        self.record(path)
    }

    pub fn write_wav(&mut self, path: &Path, signal: &Signal) -> Result<()> {
        let dir = parent_dir(path);
        fs::create_dir_all(&dir)?;
        let tmp = tempfile::Builder::new().suffix(".wav").tempfile_in(&dir)?;
        write_wav(signal, tmp.path())?;
        tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
        self.record(path)
    }

    pub fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<()> {
        self.write_with(path, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    /// Writes the manifest next to the outputs. The manifest is not listed in
    /// itself.
    pub fn finish(
        mut self,
        manifest_path: &Path,
        command: &str,
        config_path: Option<&Path>,
        seed: u64,
        schedule: Option<&NoiseSchedule>,
    ) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: command.to_string(),
            config_path: config_path.map(|p| p.display().to_string()),
            outputs: std::mem::take(&mut self.entries),
            seed,
            schedule_fingerprint: schedule.map(NoiseSchedule::fingerprint),
        };
        let mut scratch = Outputs::new();
        scratch.write_json(manifest_path, &manifest)?;
        Ok(manifest)
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// `out.jsonl` -> `out.manifest.json`.
pub fn sidecar_manifest(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parent_dir(path).join(format!("{stem}.manifest.json"))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LatentFile {
    Latent(Latent),
    Values { values: Vec<f64> },
    Bare(Vec<f64>),
}

/// What an input path decoded to: a clean latent, plus the signal when the
/// input was audio.
pub struct Loaded {
    pub latent: Latent,
    pub signal: Option<Signal>,
}

/// Loads a WAV (encoded through the codec) or a latent JSON file.
pub fn load_latent(path: &Path, codec: &LatentCodec) -> Result<Loaded> {
    let is_wav = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    if is_wav {
        let signal = read_wav(path)
            .map_err(anyhow::Error::from)
            .coded(Exit::Input, || format!("cannot read {}", path.display()))?;
        let latent = codec.encode(&signal)?;
        return Ok(Loaded { latent, signal: Some(signal) });
    }
    let text = fs::read_to_string(path)
        .map_err(anyhow::Error::from)
        .coded(Exit::Input, || format!("cannot read {}", path.display()))?;
    let parsed: LatentFile = serde_json::from_str(&text)
        .map_err(anyhow::Error::from)
        .coded(Exit::Input, || format!("{} is not a latent JSON file", path.display()))?;
    let values = match parsed {
        LatentFile::Latent(l) => l.values,
        LatentFile::Values { values } | LatentFile::Bare(values) => values,
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Coded::new(Exit::NonFinite, format!("{} contains NaN or infinity", path.display())).into());
    }
    Ok(Loaded { latent: Latent::new(values, 0), signal: None })
}

/// Reads an inversion record and the schedule stored in its header.
pub fn load_record(path: &Path) -> Result<(InversionRecord, NoiseSchedule)> {
    let file = fs::File::open(path)
        .map_err(anyhow::Error::from)
        .coded(Exit::Input, || format!("cannot read {}", path.display()))?;
    let (record, doc) = InversionRecord::read_jsonl(BufReader::new(file))
        .map_err(anyhow::Error::from)
        .coded(Exit::Input, || format!("{} is not an inversion record", path.display()))?;
    let doc = doc.ok_or_else(|| {
        Coded::new(Exit::Input, format!("{} has no schedule in its header", path.display()))
    })?;
    let schedule = NoiseSchedule::from_document(&doc)?;
    Ok((record, schedule))
}

pub fn read_json_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(anyhow::Error::from)
        .coded(Exit::Input, || format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(anyhow::Error::from)
        .coded(Exit::Input, || format!("cannot parse {}", path.display()))
}

/// Extension used above: tag an error with an exit code and message.
pub trait CodedExt<T> {
    fn coded(self, exit: Exit, msg: impl FnOnce() -> String) -> Result<T>;
}

impl<T> CodedExt<T> for Result<T> {
    fn coded(self, exit: Exit, msg: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| anyhow::Error::new(Coded::new(exit, format!("{}: {e:#}", msg()))))
    }
}

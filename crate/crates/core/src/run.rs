//! Run directories: atomic writes, dataset fingerprints and the manifest.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::data::{DatasetFiles, Split, TkgDataset};
use crate::train::TrainConfig;
use crate::Error;

/// Writes `bytes` to a sibling temporary file, syncs it, then renames it
/// over `path`, so readers see either the old or the new content.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(Error::io(path))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// SHA-256 over the split files and `stat.txt`, each prefixed by its name.
pub fn fingerprint_files(files: &DatasetFiles) -> Result<String, Error> {
    let mut hasher = Sha256::new();
    for path in [&files.train, &files.valid, &files.test, &files.stat] {
        let bytes = std::fs::read(path).map_err(Error::io(path))?;
        hasher.update(path.file_name().map(|n| n.as_encoded_bytes()).unwrap_or_default());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex(&hasher.finalize()))
}

/// SHA-256 over the normalized quadruples of every split.
pub fn fingerprint_dataset(dataset: &TkgDataset) -> String {
    let mut hasher = Sha256::new();
    hasher.update((dataset.num_entities() as u64).to_le_bytes());
    hasher.update((dataset.num_base_relations() as u64).to_le_bytes());
    for split in Split::ALL {
        hasher.update(split.to_string().as_bytes());
        for q in dataset.split(split) {
            for v in [q.subject, q.relation, q.object, q.timestamp] {
                hasher.update((v as u64).to_le_bytes());
            }
        }
    }
    hex(&hasher.finalize())
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Plain-text record of one run, kept as `manifest.txt` in the run
/// directory.
#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub config: TrainConfig,
    pub dataset: PathBuf,
    pub dataset_fingerprint: String,
    pub out_dir: PathBuf,
    /// Unix seconds.
    pub started: u64,
    pub finished: Option<u64>,
}

impl RunManifest {
    pub fn start(
        command: &str,
        config_path: Option<PathBuf>,
        config: TrainConfig,
        dataset: PathBuf,
        dataset_fingerprint: String,
        out_dir: PathBuf,
    ) -> Self {
        RunManifest {
            command: command.to_string(),
            config_path,
            config,
            dataset,
            dataset_fingerprint,
            out_dir,
            started: now(),
            finished: None,
        }
    }

    pub fn path(&self) -> PathBuf {
        self.out_dir.join("manifest.txt")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command: {}", self.command);
        let _ = writeln!(
            out,
            "config_file: {}",
            self.config_path.as_ref().map_or("-".into(), |p| p.display().to_string())
        );
        let _ = writeln!(out, "dataset: {}", self.dataset.display());
        let _ = writeln!(out, "dataset_sha256: {}", self.dataset_fingerprint);
        let _ = writeln!(out, "out_dir: {}", self.out_dir.display());
        let _ = writeln!(out, "started: {}", self.started);
        let _ = writeln!(out, "finished: {}", self.finished.map_or("-".into(), |t| t.to_string()));
        out.push_str("[config]\n");
        out.push_str(&self.config.to_text());
        out
    }

    pub fn write(&self) -> Result<(), Error> {
        write_atomic(&self.path(), self.to_text().as_bytes())
    }

    /// Stamps the finish time and rewrites the manifest.
    pub fn finish(&mut self) -> Result<(), Error> {
        self.finished = Some(now());
        self.write()
    }
}

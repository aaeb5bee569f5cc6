//! Run directories, CSV writing and manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// First 8 hex digits of the SHA-256 of the config text.
pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(4).map(|b| format!("{b:02x}")).collect()
}

/// Create `<out>/<timestamp>-<hash8>`, adding a counter on collision.
/// Returns an absolute path.
pub fn create_run_dir(out: &Path, hash: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(out).map_err(CliError::io(format!("creating {}", out.display())))?;
    let out = std::path::absolute(out).map_err(CliError::io(format!("resolving {}", out.display())))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%3fZ");
    let mut attempt = 0;
    loop {
        let name = if attempt == 0 { format!("{stamp}-{hash}") } else { format!("{stamp}.{attempt}-{hash}") };
        let dir = out.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => attempt += 1,
            Err(e) => return Err(CliError::Io { context: format!("creating {}", dir.display()), source: e }),
        }
    }
}

/// Most recent run directory under `out` whose name ends in `-<hash>`.
pub fn latest_run(out: &Path, hash: &str) -> Option<PathBuf> {
    let suffix = format!("-{hash}");
    let mut dirs: Vec<PathBuf> = fs::read_dir(out)
        .ok()?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(&suffix)))
        .collect();
    dirs.sort();
    dirs.pop()
}

/// CSV writer over any sink with float formatting built in.
pub struct Table<W: Write> {
    inner: csv::Writer<W>,
}

impl Table<fs::File> {
    pub fn create(path: &Path, header: &[String]) -> Result<Self, CliError> {
        let file = fs::File::create(path).map_err(CliError::io(format!("creating {}", path.display())))?;
        Table::new(file, header)
    }
}

impl<W: Write> Table<W> {
    pub fn new(sink: W, header: &[String]) -> Result<Self, CliError> {
        let mut inner = csv::Writer::from_writer(sink);
        inner.write_record(header)?;
        Ok(Table { inner })
    }

    pub fn row(&mut self, values: &[f64]) -> Result<(), CliError> {
        self.inner.write_record(values.iter().map(|&v| fmt(v)))?;
        Ok(())
    }

    /// A row with leading text fields.
    pub fn labelled_row(&mut self, labels: &[String], values: &[f64]) -> Result<(), CliError> {
        let fields = labels.iter().cloned().chain(values.iter().map(|&v| fmt(v)));
        self.inner.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.inner.flush().map_err(CliError::io("flushing csv"))
    }
}

/// `prefix1, …, prefixN`.
pub fn coord_names(prefix: &str, dim: usize) -> Vec<String> {
    (1..=dim).map(|k| format!("{prefix}{k}")).collect()
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("json values always serialize");
    fs::write(path, text + "\n").map_err(CliError::io(format!("writing {}", path.display())))
}

/// Fields common to every manifest.
pub fn manifest_base(command: &str, hash: &str, config: &Value, threads: usize) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("tool".into(), "qsb".into());
    m.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    m.insert("command".into(), command.into());
    m.insert("created".into(), chrono::Utc::now().to_rfc3339().into());
    m.insert("config_hash".into(), hash.into());
    m.insert("config".into(), config.clone());
    m.insert("parallel".into(), cfg!(feature = "parallel").into());
    m.insert("threads".into(), threads.into());
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn hash_is_short_and_stable() {
        let h = config_hash("[problem]\nq = [[2.0]]\n");
        assert_eq!(h.len(), 8);
        assert_eq!(h, config_hash("[problem]\nq = [[2.0]]\n"));
        assert_ne!(h, config_hash("[problem]\nq = [[0.0]]\n"));
    }

    #[test]
    fn run_dirs_do_not_clobber() {
        let tmp = std::env::temp_dir().join(format!("qsb-out-{}", std::process::id()));
        let a = create_run_dir(&tmp, "deadbeef").unwrap();
        let b = create_run_dir(&tmp, "deadbeef").unwrap();
        assert_ne!(a, b);
        assert!(latest_run(&tmp, "deadbeef").is_some());
        assert!(latest_run(&tmp, "00000000").is_none());
        fs::remove_dir_all(&tmp).ok();
    }
}

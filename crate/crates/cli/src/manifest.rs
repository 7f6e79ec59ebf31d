//! Pipeline manifest: what each stage read and wrote, with content digests.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    /// Path to sha256 hex digest.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Resolved parameters the stage ran with.
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// One entry per stage invocation; a rerun writing the same outputs replaces its entry.
    pub runs: Vec<StageRecord>,
}

pub fn digest_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot create a temporary file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| e.error)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        match fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .with_context(|| format!("manifest {} is not valid", path.display())),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Manifest::default()),
            Err(e) => Err(e).with_context(|| format!("cannot read manifest {}", path.display())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| {
            serde_json::to_writer_pretty(&mut *w, self)?;
            writeln!(w)?;
            Ok(())
        })
    }

    /// The stage that last wrote `path`, with the digest it recorded.
    pub fn producer(&self, path: &str) -> Option<(&str, &str)> {
        self.runs
            .iter()
            .find_map(|rec| rec.outputs.get(path).map(|d| (rec.stage.as_str(), d.as_str())))
    }

    /// Fails unless every input exists and matches what its producer wrote.
    pub fn check_inputs(&self, stage: &str, inputs: &[&Path]) -> Result<()> {
        for input in inputs {
            let key = input.display().to_string();
            let producer = self.producer(&key);
            if !input.exists() {
                match producer {
                    Some((name, _)) => bail!("input {key} is missing; rerun `spbwe {name}` first"),
                    None => bail!("input {key} is missing"),
                }
            }
            if let Some((name, recorded)) = producer {
                if digest_file(input)? != recorded {
                    bail!("input {key} changed since `spbwe {name}` wrote it; rerun `spbwe {name}` before `spbwe {stage}`");
                }
            }
        }
        Ok(())
    }

    pub fn record(&mut self, stage: &str, inputs: &[&Path], outputs: &[&Path], params: serde_json::Value) -> Result<()> {
        let digests = |paths: &[&Path]| -> Result<BTreeMap<String, String>> {
            paths
                .iter()
                .map(|p| Ok((p.display().to_string(), digest_file(p)?)))
                .collect()
        };
        let rec = StageRecord {
            stage: stage.to_string(),
            inputs: digests(inputs)?,
            outputs: digests(outputs)?,
            params,
        };
        let same = |r: &StageRecord| r.stage == rec.stage && r.outputs.keys().eq(rec.outputs.keys());
        // A path has one producer: drop older runs that wrote any of these outputs.
        let overlaps = |r: &StageRecord| r.outputs.keys().any(|k| rec.outputs.contains_key(k));
        match self.runs.iter().position(same) {
            Some(i) => self.runs[i] = rec,
            None => {
                self.runs.retain(|r| !overlaps(r));
                self.runs.push(rec);
            }
        }
        Ok(())
    }

    /// One status line per recorded run, labelled by stage and outputs.
    pub fn status(&self) -> Vec<(String, String)> {
        self.runs
            .iter()
            .map(|rec| {
                let outputs: Vec<&str> = rec.outputs.keys().map(String::as_str).collect();
                let name = format!("{} -> {}", rec.stage, outputs.join(", "));
                let problem = rec
                    .inputs
                    .iter()
                    .map(|(p, d)| ("input", p, d))
                    .chain(rec.outputs.iter().map(|(p, d)| ("output", p, d)))
                    .find_map(|(kind, p, d)| match digest_file(Path::new(p)) {
                        Err(_) => Some(format!("{kind} {p} missing")),
                        Ok(now) if &now != d => Some(format!("{kind} {p} changed")),
                        Ok(_) => None,
                    });
                (name, problem.map_or_else(|| "fresh".to_string(), |p| format!("stale: {p}")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stale_input_names_its_producer() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.tsv");
        fs::write(&a, "one").unwrap();
        let mut m = Manifest::default();
        m.record("build-vocab", &[], &[&a], serde_json::Value::Null).unwrap();
        m.check_inputs("pair", &[&a]).unwrap();
        fs::write(&a, "two").unwrap();
        let err = m.check_inputs("pair", &[&a]).unwrap_err().to_string();
        assert!(err.contains("rerun `spbwe build-vocab`"), "{err}");
        fs::remove_file(&a).unwrap();
        let err = m.check_inputs("pair", &[&a]).unwrap_err().to_string();
        assert!(err.contains("missing"), "{err}");
    }

    #[test]
    fn runs_of_one_stage_on_different_outputs_coexist() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        fs::write(&a, "a").unwrap();
        fs::write(&b, "b").unwrap();
        let mut m = Manifest::default();
        m.record("build-vocab", &[], &[&a], serde_json::Value::Null).unwrap();
        m.record("build-vocab", &[], &[&b], serde_json::Value::Null).unwrap();
        m.record("build-vocab", &[], &[&a], serde_json::json!(1)).unwrap();
        assert_eq!(m.runs.len(), 2);
        assert_eq!(m.runs[0].params, serde_json::json!(1));
        m.record("pair", &[], &[&a], serde_json::Value::Null).unwrap();
        assert_eq!(m.producer(&a.display().to_string()).unwrap().0, "pair");
        assert_eq!(m.runs.len(), 2);
    }

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        write_atomic(&p, |w| Ok(w.write_all(b"first version")?)).unwrap();
        write_atomic(&p, |w| Ok(w.write_all(b"second")?)).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "second");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn failed_fill_leaves_target_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        fs::write(&p, "keep").unwrap();
        assert!(write_atomic(&p, |_| bail!("boom")).is_err());
        assert_eq!(fs::read_to_string(&p).unwrap(), "keep");
    }
}

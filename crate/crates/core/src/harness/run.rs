use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use super::preset::RunSpec;
use crate::error::{Error, Result};
use crate::trainer::{Trainer, TrainingLog};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Written next to every run's outputs; enough to reproduce the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub artifact_version: String,
    /// Subcommand that produced the run.
    pub command: String,
    pub run: RunSpec,
    /// Output file names, relative to the manifest's directory.
    pub csv: String,
    pub checkpoint: Option<String>,
    pub trace: Option<String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let m: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Structure(format!(
                "manifest schema {} is not the supported version {MANIFEST_SCHEMA_VERSION}",
                m.schema_version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub checkpoint: bool,
    /// Write a JSON-lines trace of every slot's decisions.
    pub trace: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub spec: RunSpec,
    pub log: TrainingLog,
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
}

/// Trains one run and writes `<stem>.csv`, `<stem>.manifest.json` and,
/// on request, a checkpoint directory and a trace into `out_dir`.
pub fn execute(spec: &RunSpec, command: &str, out_dir: &Path, opts: RunOptions) -> Result<RunOutput> {
    fs::create_dir_all(out_dir)?;
    let stem = spec.stem();
    let csv = format!("{stem}.csv");
    let checkpoint = opts.checkpoint.then(|| format!("{stem}_checkpoint"));
    let trace = opts.trace.then(|| format!("{stem}.trace.jsonl"));

    let mut trainer = Trainer::new(spec.env.clone(), spec.train.clone(), spec.policy)?;
    trainer.set_trace(opts.trace);
    trainer.set_abort_checkpoint(Some(out_dir.join(format!("{stem}_abort"))));
    let mut trace_out = match &trace {
        Some(name) => Some(BufWriter::new(File::create(out_dir.join(name))?)),
        None => None,
    };

    let log = trainer.train_with(|report| {
        if let Some(out) = trace_out.as_mut() {
            for t in &report.traces {
                serde_json::to_writer(&mut *out, t)?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    })?;
    if let Some(out) = trace_out.as_mut() {
        out.flush()?;
    }

    let csv_path = out_dir.join(&csv);
    log.write_csv(BufWriter::new(File::create(&csv_path)?))?;
    if let Some(dir) = &checkpoint {
        trainer.bundle().save(&out_dir.join(dir))?;
    }
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        artifact_version: ARTIFACT_VERSION.into(),
        command: command.into(),
        run: spec.clone(),
        csv,
        checkpoint,
        trace,
    };
    let manifest_path = out_dir.join(format!("{stem}.manifest.json"));
    manifest.save(&manifest_path)?;
    info!("{} seed {}: wrote {}", spec.policy, spec.seed, csv_path.display());
    Ok(RunOutput { spec: spec.clone(), log, csv_path, manifest_path })
}

/// Replays the run described by a manifest into `out_dir`.
pub fn rerun(manifest_path: &Path, out_dir: &Path) -> Result<RunOutput> {
    let m = Manifest::load(manifest_path)?;
    let opts = RunOptions { checkpoint: m.checkpoint.is_some(), trace: m.trace.is_some() };
    execute(&m.run, &m.command, out_dir, opts)
}

/// Maps `f` over `items` on up to `available_parallelism` threads. Results
/// keep the input order.
pub fn parallel_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| scope.spawn(|| c.iter().map(&f).collect::<Vec<U>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::preset::ExperimentPreset;
    use crate::trainer::Policy;

    fn quick_spec() -> RunSpec {
        let mut p = ExperimentPreset::smoke();
        p.train.episodes = 3;
        p.train.batch_size = 8;
        p.train.hidden = vec![8];
        p.run_spec(Policy::Ucms, 2)
    }

    #[test]
    fn rerun_reproduces_csv_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let first = execute(&quick_spec(), "train", &dir.path().join("a"), RunOptions { checkpoint: true, trace: true })
            .unwrap();
        let again = rerun(&first.manifest_path, &dir.path().join("b")).unwrap();
        assert_eq!(fs::read(&first.csv_path).unwrap(), fs::read(&again.csv_path).unwrap());
        assert!(dir.path().join("a/ucms_seed2_checkpoint/server_critic.bin").exists());
        let trace = fs::read_to_string(dir.path().join("a/ucms_seed2.trace.jsonl")).unwrap();
        assert_eq!(trace.lines().count(), 30);
    }

    #[test]
    fn traced_and_untraced_runs_agree() {
        let dir = tempfile::tempdir().unwrap();
        let a = execute(&quick_spec(), "train", &dir.path().join("a"), RunOptions::default()).unwrap();
        let b = execute(&quick_spec(), "train", &dir.path().join("b"), RunOptions { trace: true, checkpoint: false })
            .unwrap();
        assert_eq!(fs::read(a.csv_path).unwrap(), fs::read(b.csv_path).unwrap());
    }

    #[test]
    fn manifest_rejects_other_schema() {
        let dir = tempfile::tempdir().unwrap();
        let out = execute(&quick_spec(), "train", dir.path(), RunOptions::default()).unwrap();
        let text = fs::read_to_string(&out.manifest_path).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 99");
        fs::write(&out.manifest_path, text).unwrap();
        assert!(Manifest::load(&out.manifest_path).is_err());
    }

    #[test]
    fn parallel_map_keeps_order() {
        let v: Vec<u32> = (0..37).collect();
        assert_eq!(parallel_map(&v, |x| x * 2), v.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}

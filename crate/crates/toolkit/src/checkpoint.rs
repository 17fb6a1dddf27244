//! Asynchronous checkpoints for long bundle-adjustment runs.
//!
//! The optimization loop only clones state into an unbounded channel; a
//! background thread does all file I/O. Write failures are logged and
//! counted, never propagated into the loop.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{channel, Sender};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use surfelsplat_core::ba::TraceEntry;
use surfelsplat_core::{BaState, CameraIntrinsics, CameraPose, SurfelScene};

use crate::error::{Error, Result};
use crate::io::{camera_json, ply};

/// One line of `trace.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub stage: String,
    #[serde(rename = "L_pho1")]
    pub l_pho1: f64,
    #[serde(rename = "L_pho2")]
    pub l_pho2: f64,
    #[serde(rename = "L_geo")]
    pub l_geo: f64,
    pub total: f64,
}

impl From<&TraceEntry> for TraceRecord {
    fn from(e: &TraceEntry) -> Self {
        Self {
            iter: e.iter,
            stage: e.stage.name().to_string(),
            l_pho1: e.report.photometric_view1,
            l_pho2: e.report.photometric_view2,
            l_geo: e.report.geometric,
            total: e.report.total,
        }
    }
}

enum Message {
    Trace(TraceRecord),
    Snapshot { iteration: usize, scene: SurfelScene, intrinsics: CameraIntrinsics, pose: CameraPose },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CheckpointSummary {
    pub snapshots: usize,
    pub failures: usize,
}

pub struct CheckpointWriter {
    tx: Sender<Message>,
    worker: JoinHandle<CheckpointSummary>,
}

pub fn snapshot_dir(root: &Path, iteration: usize) -> PathBuf {
    root.join(format!("checkpoint_{iteration:04}"))
}

fn write_snapshot(root: &Path, iteration: usize, scene: &SurfelScene, k: &CameraIntrinsics, pose: &CameraPose) -> Result<()> {
    let dir = snapshot_dir(root, iteration);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    ply::save_ply(&dir.join("scene.ply"), scene)?;
    camera_json::save_camera(&dir.join("camera.json"), k, Some(pose))
}

impl CheckpointWriter {
    /// Creates `root` and starts the writer thread. `trace.jsonl` inside it
    /// is truncated.
    pub fn new(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let trace_path = root.join("trace.jsonl");
        let trace = File::create(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
        let root = root.to_path_buf();
        let (tx, rx) = channel::<Message>();
        let worker = std::thread::Builder::new()
            .name("checkpoint".into())
            .spawn(move || {
                let mut summary = CheckpointSummary::default();
                let mut trace = Some(BufWriter::new(trace));
                for msg in rx {
                    match msg {
                        Message::Trace(record) => {
                            let Some(w) = trace.as_mut() else { continue };
                            let line = serde_json::to_string(&record).expect("trace records serialize");
                            if let Err(e) = writeln!(w, "{line}") {
                                log::warn!("trace write failed, dropping further trace lines: {e}");
                                summary.failures += 1;
                                trace = None;
                            }
                        }
                        Message::Snapshot { iteration, scene, intrinsics, pose } => {
                            if let Some(w) = trace.as_mut() {
                                if let Err(e) = w.flush() {
                                    log::warn!("trace flush failed: {e}");
                                    summary.failures += 1;
                                }
                            }
                            match write_snapshot(&root, iteration, &scene, &intrinsics, &pose) {
                                Ok(()) => summary.snapshots += 1,
                                Err(e) => {
                                    log::warn!("checkpoint at iteration {iteration} failed: {e}");
                                    summary.failures += 1;
                                }
                            }
                        }
                    }
                }
                if let Some(mut w) = trace {
                    if let Err(e) = w.flush() {
                        log::warn!("trace flush failed: {e}");
                        summary.failures += 1;
                    }
                }
                summary
            })
            .map_err(|e| Error::io("checkpoint thread", e))?;
        Ok(Self { tx, worker })
    }

    pub fn trace(&self, entry: &TraceEntry) {
        let _ = self.tx.send(Message::Trace(entry.into()));
    }

    pub fn snapshot(&self, state: &BaState) {
        let _ = self.tx.send(Message::Snapshot {
            iteration: state.iteration,
            scene: state.scene.clone(),
            intrinsics: state.intrinsics,
            pose: state.pose,
        });
    }

    /// Drains the queue and waits for the writer.
    pub fn finish(self) -> CheckpointSummary {
        drop(self.tx);
        self.worker.join().unwrap_or_else(|_| {
            log::warn!("checkpoint thread panicked");
            CheckpointSummary { snapshots: 0, failures: 1 }
        })
    }
}

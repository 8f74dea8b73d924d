//! Plot-ready CSV tables and JSON reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::ExperimentReport;
use crate::error::{Error, Result};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per session per seed per kind.
pub fn sessions_csv(reports: &[ExperimentReport]) -> String {
    let mut out = String::from(
        "kind,seed,session,accuracy,base_accuracy,final_train_acc,final_val_acc,final_gap,trainable_params\n",
    );
    for r in reports {
        for s in &r.sessions {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.kind,
                r.seed,
                s.index,
                s.accuracy,
                s.base_accuracy,
                opt(s.train_acc.last().copied()),
                opt(s.val_acc.last().copied()),
                opt(s.gap.last().copied()),
                r.trainable_params
            )
            .expect("writing to a String");
        }
    }
    out
}

/// One row per trajectory checkpoint: the train/validation curves.
pub fn trajectory_csv(reports: &[ExperimentReport]) -> String {
    let mut out = String::from("kind,seed,session,epoch,train_acc,val_acc,gap\n");
    for r in reports {
        for s in &r.sessions {
            for i in 0..s.epochs.len() {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.kind, r.seed, s.index, s.epochs[i], s.train_acc[i], s.val_acc[i], s.gap[i]
                )
                .expect("writing to a String");
            }
        }
    }
    out
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf> {
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes `report.json` (an array, one report per run), `sessions.csv` and
/// `trajectory.csv` into `dir`, creating it if needed.
pub fn write_outputs(dir: &Path, reports: &[ExperimentReport]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(reports)?;
    Ok(vec![
        write(dir.join("report.json"), &json)?,
        write(dir.join("sessions.csv"), &sessions_csv(reports))?,
        write(dir.join("trajectory.csv"), &trajectory_csv(reports))?,
    ])
}

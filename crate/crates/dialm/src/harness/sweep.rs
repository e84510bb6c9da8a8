//! Permutation-ratio sweep: trains the configured regime once per δ value
//! with everything else fixed, and tabulates validation metrics per row.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::text::DialogueExample;
use crate::{Error, Result};

use super::checkpoint::Checkpoint;
use super::config::{Regime, RunConfig, TaskKind};
use super::train::{run_regime, NoopObserver, TrainOutput};

/// The published sweep grid.
pub fn default_grid() -> Vec<f64> {
    vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: f64,
    pub best_epoch: Option<usize>,
    /// Best-epoch validation selection metric (precision at 1 for the
    /// binary task, mean reciprocal rank for multichoice).
    pub selection: f64,
    pub map: f64,
    pub mrr: f64,
    pub p_at_1: f64,
    pub steps: u64,
}

#[derive(Debug)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Full per-δ outputs, aligned with `rows`.
    pub outputs: Vec<TrainOutput>,
}

/// Runs the regime once per δ. Requires at least two values including 0 so
/// the no-permutation row anchors the comparison. Duplicate or out-of-range
/// values are rejected.
pub fn sweep_delta(
    cfg: &RunConfig,
    deltas: &[f64],
    train: &[DialogueExample],
    valid: &[DialogueExample],
    init: Option<&Checkpoint>,
) -> Result<SweepResult> {
    if deltas.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "{} delta values; a sweep needs at least 2",
            deltas.len()
        )));
    }
    if !deltas.iter().any(|&d| d == 0.0) {
        return Err(Error::InvalidArgument("sweep grid must include delta 0".into()));
    }
    for (i, &d) in deltas.iter().enumerate() {
        if !(0.0..=1.0).contains(&d) {
            return Err(Error::InvalidArgument(format!("delta {} outside [0, 1]", d)));
        }
        if deltas[..i].contains(&d) {
            return Err(Error::InvalidArgument(format!("duplicate delta {}", d)));
        }
    }
    if cfg.regime == Regime::DapPosttrain {
        return Err(Error::InvalidArgument(
            "sweep needs a regime with validation metrics (mtf or a fine-tune)".into(),
        ));
    }

    let mut rows = Vec::with_capacity(deltas.len());
    let mut outputs = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let mut run_cfg = cfg.clone();
        run_cfg.delta = delta;
        let out = run_regime(&run_cfg, train, valid, init.cloned(), &mut NoopObserver)?;
        let report = out
            .report
            .as_ref()
            .ok_or_else(|| Error::Contract("sweep run produced no validation report".into()))?;
        let selection = match cfg.task {
            TaskKind::Binary => report.overall.p_at_1,
            TaskKind::Multichoice => report.overall.mrr,
        };
        rows.push(SweepRow {
            delta,
            best_epoch: out.best_epoch,
            selection,
            map: report.overall.map,
            mrr: report.overall.mrr,
            p_at_1: report.overall.p_at_1,
            steps: out.steps.len() as u64,
        });
        outputs.push(out);
    }
    Ok(SweepResult { rows, outputs })
}

/// Fixed-width table for the terminal.
pub fn format_table(rows: &[SweepRow]) -> String {
    let mut s = String::from("delta   best_ep  selection   map        mrr        p@1\n");
    for r in rows {
        s.push_str(&format!(
            "{:<7.2} {:<8} {:<11.6} {:<10.6} {:<10.6} {:<10.6}\n",
            r.delta,
            r.best_epoch.map_or("-".to_string(), |e| e.to_string()),
            r.selection,
            r.map,
            r.mrr,
            r.p_at_1
        ));
    }
    s
}

/// Plot-ready tab-separated rows alongside a JSON dump.
pub fn write_sweep_files(rows: &[SweepRow], dir: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(rows)?;
    std::fs::write(dir.join("sweep.json"), json.as_bytes())?;
    let mut tsv = String::from("delta\tselection\tmap\tmrr\tp_at_1\n");
    for r in rows {
        tsv.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.delta, r.selection, r.map, r.mrr, r.p_at_1
        ));
    }
    std::fs::write(dir.join("sweep.tsv"), tsv.as_bytes())?;
    Ok(())
}

//! Per-epoch run metrics and the files they are written to.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::prune::{LayerCount, PruneReport};

pub const CSV_HEADER: &str =
    "epoch,loss,precision,prune_event,layer,retained_nodes_pct,retained_weights_pct";

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRetention {
    pub name: String,
    pub nodes_pct: f64,
    /// `None` for the input row.
    pub weights_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Mean minibatch loss over the epoch.
    pub train_loss: f64,
    pub test_loss: f64,
    /// Test precision in percent.
    pub precision: f64,
    pub prune_event: bool,
    /// Loss sentinel after this epoch.
    pub sentinel: f64,
    pub layers: Vec<LayerRetention>,
    pub total_nodes_pct: f64,
    pub total_weights_pct: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub epochs: Vec<EpochMetrics>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl RunMetrics {
    /// Number of prune events recorded.
    pub fn prune_events(&self) -> usize {
        self.epochs.iter().filter(|e| e.prune_event).count()
    }

    /// One row per layer per epoch.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for e in &self.epochs {
            for layer in &e.layers {
                let w = layer.weights_pct.map_or(String::new(), |w| w.to_string());
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    e.epoch,
                    e.train_loss,
                    e.precision,
                    u8::from(e.prune_event),
                    layer.name,
                    layer.nodes_pct,
                    w
                );
            }
        }
        s
    }

    /// Mean test `(precision, loss)` over the last (up to) 10 epochs that
    /// still ran the original network.
    pub fn unpruned_summary(&self) -> Option<(f64, f64)> {
        let first = self
            .epochs
            .iter()
            .position(|e| e.prune_event)
            .unwrap_or(self.epochs.len());
        Self::tail_means(&self.epochs[..first])
    }

    /// Mean test `(precision, loss)` over the last (up to) 10 epochs.
    pub fn final_summary(&self) -> Option<(f64, f64)> {
        Self::tail_means(&self.epochs)
    }

    fn tail_means(epochs: &[EpochMetrics]) -> Option<(f64, f64)> {
        let tail = &epochs[epochs.len().saturating_sub(10)..];
        Some((
            mean(tail.iter().map(|e| e.precision))?,
            mean(tail.iter().map(|e| e.test_loss))?,
        ))
    }

    /// Size table with unpruned and pruned precision and loss.
    pub fn summary_text(&self, original: &[LayerCount], report: &PruneReport) -> String {
        let mut s = String::from("layer,n,w,n_pct,w_pct\n");
        let last = self.epochs.last();
        for (i, row) in original.iter().enumerate() {
            let kept = last.and_then(|e| e.layers.get(i));
            let n_pct = kept.map_or(100.0, |k| k.nodes_pct);
            let w_pct = kept.map_or(Some(100.0), |k| k.weights_pct);
            let _ = writeln!(
                s,
                "{},{},{},{:.1},{}",
                row.name,
                row.nodes,
                row.weights.map_or("-".to_string(), |w| w.to_string()),
                n_pct,
                w_pct.map_or("-".to_string(), |w| format!("{w:.1}"))
            );
        }
        let n: usize = original.iter().map(|r| r.nodes).sum();
        let w: usize = original.iter().filter_map(|r| r.weights).sum();
        let (tn, tw) = last.map_or((100.0, 100.0), |e| (e.total_nodes_pct, e.total_weights_pct));
        let _ = writeln!(s, "Total,{n},{w},{tn:.1},{tw:.1}");
        let fmt = |v: Option<(f64, f64)>| v.map_or(("-".into(), "-".into()), |(p, l)| (format!("{p:.2}"), format!("{l:.6}")));
        let (up, ul) = fmt(self.unpruned_summary());
        let (pp, pl) = fmt(self.final_summary());
        let _ = writeln!(s, "unpruned_precision,{up}");
        let _ = writeln!(s, "pruned_precision,{pp}");
        let _ = writeln!(s, "unpruned_loss,{ul}");
        let _ = writeln!(s, "pruned_loss,{pl}");
        let _ = writeln!(s, "prune_events,{}", report.events.len());
        s
    }
}

/// One row per (event, pruned layer).
pub fn prune_report_csv(report: &PruneReport) -> String {
    let mut s = String::from(
        "event,epoch,step,loss,layer,kind,removed,retained_nodes_pct,retained_weights_pct\n",
    );
    for (i, e) in report.events.iter().enumerate() {
        for (layer, kind, removed) in &e.removed {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:?},{},{},{}",
                i + 1,
                e.epoch,
                e.step,
                e.loss,
                layer,
                kind,
                removed,
                e.retained_nodes_pct,
                e.retained_weights_pct
            );
        }
    }
    s
}

/// `metrics.csv` → `metrics.<suffix>`.
pub fn sibling_path(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or("metrics".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the metrics CSV at `path`, plus `<stem>.summary.csv` and
/// `<stem>.prune_events.csv` next to it.
pub fn emit_metrics(
    metrics: &RunMetrics,
    report: &PruneReport,
    original: &[LayerCount],
    path: &Path,
) -> Result<()> {
    write(path, &metrics.to_csv())?;
    write(&sibling_path(path, "summary.csv"), &metrics.summary_text(original, report))?;
    write(&sibling_path(path, "prune_events.csv"), &prune_report_csv(report))
}

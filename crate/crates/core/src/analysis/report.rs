use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{chi_square_2x2, t_test_independent, ChiSquare, WelchT};
use super::diff_metric;
use crate::error::{MtoError, Result};

pub const TRACE_SCHEMA: &str = "pubmto.trace/1";

/// How per-step cosines are aggregated; recorded in every report.
pub const AGGREGATION_NOTE: &str = "per step: shared = cosine(combined shared gradient, applied shared \
displacement); task = mean over tasks of cosine(task-head gradient, applied head displacement). \
per run: arithmetic mean over steps up to the end of the best-validation epoch. \
pairs: ordered pairs of runs with different methods within one (dataset, model) group; \
ties on either metric are dropped.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema: String,
    pub dataset_id: String,
    pub model_kind: String,
    pub method: String,
    pub seed: u64,
    pub task_count: usize,
}

/// One training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub epoch: usize,
    pub task_losses: Vec<f64>,
    pub alpha: Vec<f64>,
    /// False when the weights were reused from an earlier solve.
    pub solved: bool,
    pub sim_task: f64,
    pub sim_share: f64,
    pub grad_norm_share: Vec<f64>,
    pub update_norm_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub last_step: u64,
    pub val_auc: Vec<f64>,
    /// Mean training loss per task over the epoch.
    pub train_loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortRecord {
    pub step: u64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceLine {
    Header(TraceHeader),
    Step(TraceRecord),
    Epoch(EpochRecord),
    Abort(AbortRecord),
}

/// Append-only JSONL trace writer.
pub struct TraceWriter {
    out: BufWriter<File>,
}

impl TraceWriter {
    pub fn create(path: &Path, header: TraceHeader) -> Result<Self> {
        let mut w = Self {
            out: BufWriter::new(File::create(path)?),
        };
        w.write(&TraceLine::Header(header))?;
        Ok(w)
    }

    pub fn write(&mut self, line: &TraceLine) -> Result<()> {
        serde_json::to_writer(&mut self.out, line)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// A parsed trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub steps: Vec<TraceRecord>,
    pub epochs: Vec<EpochRecord>,
    pub abort: Option<AbortRecord>,
}

impl Trace {
    pub fn new(header: TraceHeader) -> Self {
        Self {
            header,
            steps: Vec::new(),
            epochs: Vec::new(),
            abort: None,
        }
    }

    pub fn push(&mut self, line: TraceLine) -> Result<()> {
        match line {
            TraceLine::Header(_) => {
                return Err(MtoError::Contract("trace header repeated".into()));
            }
            TraceLine::Step(s) => {
                if self.steps.last().is_some_and(|p| p.step >= s.step) {
                    return Err(MtoError::Contract(format!("trace step {} out of order", s.step)));
                }
                self.steps.push(s);
            }
            TraceLine::Epoch(e) => self.epochs.push(e),
            TraceLine::Abort(a) => self.abort = Some(a),
        }
        Ok(())
    }

    /// Epoch with the highest mean validation AUC (earliest on ties).
    pub fn best_epoch(&self) -> Option<&EpochRecord> {
        let mut best: Option<&EpochRecord> = None;
        for e in &self.epochs {
            if best.is_none_or(|b| mean(&e.val_auc) > mean(&b.val_auc)) {
                best = Some(e);
            }
        }
        best
    }
}

pub fn read_trace(path: &Path) -> Result<Trace> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| MtoError::Contract(format!("{} is empty", path.display())))??;
    let header = match serde_json::from_str(&first)? {
        TraceLine::Header(h) if h.schema == TRACE_SCHEMA => h,
        TraceLine::Header(h) => {
            return Err(MtoError::Contract(format!("unknown trace schema `{}`", h.schema)));
        }
        _ => return Err(MtoError::Contract("trace lacks a header line".into())),
    };
    let mut trace = Trace::new(header);
    for line in lines {
        let line = line?;
        if !line.trim().is_empty() {
            trace.push(serde_json::from_str(&line)?)?;
        }
    }
    Ok(trace)
}

fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub dataset_id: String,
    pub model_kind: String,
    pub method: String,
    pub seed: u64,
    pub best_epoch: usize,
    pub task_aucs: Vec<f64>,
    pub avg_auc: f64,
    pub mean_sim_task: f64,
    pub mean_sim_share: f64,
    /// `None` when the two similarities cancel (infinite ratio).
    pub diff: Option<f64>,
    pub steps_used: usize,
}

impl ExperimentSummary {
    pub fn cell_id(&self) -> String {
        format!("{}/{}/{}/seed{}", self.dataset_id, self.model_kind, self.method, self.seed)
    }

    fn diff_value(&self) -> f64 {
        self.diff.unwrap_or(f64::INFINITY)
    }
}

/// Summary over the steps up to the end of the best-validation epoch.
pub fn summarize(trace: &Trace) -> Result<ExperimentSummary> {
    if let Some(a) = &trace.abort {
        return Err(MtoError::Divergence {
            step: a.step,
            detail: a.detail.clone(),
        });
    }
    let best = trace
        .best_epoch()
        .ok_or_else(|| MtoError::Contract("trace has no epoch records".into()))?;
    let used: Vec<&TraceRecord> = trace.steps.iter().filter(|s| s.epoch <= best.epoch).collect();
    let n = used.len().max(1) as f64;
    let sim_task = used.iter().map(|s| s.sim_task).sum::<f64>() / n;
    let sim_share = used.iter().map(|s| s.sim_share).sum::<f64>() / n;
    let d = diff_metric(sim_task, sim_share);
    let h = &trace.header;
    Ok(ExperimentSummary {
        dataset_id: h.dataset_id.clone(),
        model_kind: h.model_kind.clone(),
        method: h.method.clone(),
        seed: h.seed,
        best_epoch: best.epoch,
        task_aucs: best.val_auc.clone(),
        avg_auc: mean(&best.val_auc),
        mean_sim_task: sim_task,
        mean_sim_share: sim_share,
        diff: d.is_finite().then_some(d),
        steps_used: used.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorPair {
    /// Indices into the summary slice.
    pub i: usize,
    pub j: usize,
    /// 1 when run `i` has the higher average AUC.
    pub x: u8,
    /// 1 when run `i` has the higher Diff.
    pub y: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pairwise {
    pub pairs: Vec<IndicatorPair>,
    pub dropped: usize,
}

impl Pairwise {
    /// `counts[x][y]`.
    pub fn confusion(&self) -> [[u64; 2]; 2] {
        let mut c = [[0u64; 2]; 2];
        for p in &self.pairs {
            c[p.x as usize][p.y as usize] += 1;
        }
        c
    }
}

/// Ordered pairs of runs with different methods inside each (dataset, model)
/// group. Pairs tied on AUC or Diff are dropped and counted.
pub fn pairwise_indicators(summaries: &[ExperimentSummary]) -> Pairwise {
    let mut pairs = Vec::new();
    let mut dropped = 0;
    for (i, a) in summaries.iter().enumerate() {
        for (j, b) in summaries.iter().enumerate() {
            if i == j
                || a.dataset_id != b.dataset_id
                || a.model_kind != b.model_kind
                || a.method == b.method
            {
                continue;
            }
            let (da, db) = (a.diff_value(), b.diff_value());
            if a.avg_auc == b.avg_auc || da == db {
                dropped += 1;
                continue;
            }
            pairs.push(IndicatorPair {
                i,
                j,
                x: u8::from(a.avg_auc > b.avg_auc),
                y: u8::from(da > db),
            });
        }
    }
    Pairwise { pairs, dropped }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub method: String,
    pub runs: usize,
    pub mean_sim_task: f64,
    pub mean_sim_share: f64,
    /// Diff of the two mean similarities.
    pub diff_of_means: Option<f64>,
    /// Welch test of per-run shared similarity against the `ls` runs.
    pub share_vs_ls: Option<WelchT>,
    pub task_vs_ls: Option<WelchT>,
    /// Welch test of per-run task similarity against shared similarity.
    pub task_vs_share: Option<WelchT>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell_id: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub aggregation: String,
    pub cells: Vec<ExperimentSummary>,
    pub failures: Vec<CellFailure>,
    pub pair_count: usize,
    pub dropped_pairs: usize,
    /// `confusion[x][y]`: x = higher average AUC, y = higher Diff.
    pub confusion: [[u64; 2]; 2],
    /// `None` when a margin of the confusion matrix is empty.
    pub chi_square: Option<ChiSquare>,
    pub similarity: Vec<SimilarityRow>,
}

/// Aggregates run summaries; the result does not depend on input order.
pub fn build_report(mut cells: Vec<ExperimentSummary>, mut failures: Vec<CellFailure>) -> GridReport {
    cells.sort_by_key(|c| c.cell_id());
    failures.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
    let pw = pairwise_indicators(&cells);
    let confusion = pw.confusion();
    let table = confusion.map(|r| r.map(|c| c as f64));
    let chi = chi_square_2x2(table).ok();

    let mut by_method: BTreeMap<&str, Vec<&ExperimentSummary>> = BTreeMap::new();
    for c in &cells {
        by_method.entry(c.method.as_str()).or_default().push(c);
    }
    let column = |rows: &[&ExperimentSummary], f: fn(&ExperimentSummary) -> f64| -> Vec<f64> {
        rows.iter().map(|r| f(r)).collect()
    };
    let ls = by_method.get("ls");
    let similarity = by_method
        .iter()
        .map(|(method, rows)| {
            let task = column(rows, |r| r.mean_sim_task);
            let share = column(rows, |r| r.mean_sim_share);
            let (mt, ms) = (mean(&task), mean(&share));
            let d = diff_metric(mt, ms);
            let vs_ls = |f: fn(&ExperimentSummary) -> f64, mine: &[f64]| {
                ls.filter(|_| *method != "ls")
                    .and_then(|l| t_test_independent(mine, &column(l, f)).ok())
            };
            SimilarityRow {
                method: method.to_string(),
                runs: rows.len(),
                mean_sim_task: mt,
                mean_sim_share: ms,
                diff_of_means: d.is_finite().then_some(d),
                share_vs_ls: vs_ls(|r| r.mean_sim_share, &share),
                task_vs_ls: vs_ls(|r| r.mean_sim_task, &task),
                task_vs_share: t_test_independent(&task, &share).ok(),
            }
        })
        .collect();

    GridReport {
        aggregation: super::report::AGGREGATION_NOTE.to_string(),
        cells,
        failures,
        pair_count: pw.pairs.len(),
        dropped_pairs: pw.dropped,
        confusion,
        chi_square: chi,
        similarity,
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

/// Writes `report.json`, `report.csv` (similarity table) and `confusion.csv`.
pub fn write_report(report: &GridReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut f = BufWriter::new(File::create(dir.join("report.json"))?);
    serde_json::to_writer_pretty(&mut f, report)?;
    f.write_all(b"\n")?;
    f.flush()?;

    let mut w = csv::Writer::from_path(dir.join("report.csv"))?;
    w.write_record([
        "method",
        "runs",
        "mean_sim_task",
        "mean_sim_share",
        "diff_of_means",
        "t_share_vs_ls",
        "p_share_vs_ls",
        "t_task_vs_share",
        "p_task_vs_share",
    ])?;
    for r in &report.similarity {
        w.write_record([
            r.method.clone(),
            r.runs.to_string(),
            r.mean_sim_task.to_string(),
            r.mean_sim_share.to_string(),
            opt(r.diff_of_means),
            opt(r.share_vs_ls.map(|t| t.t)),
            r.share_vs_ls.map_or("", |t| t.p_bucket.as_str()).to_string(),
            opt(r.task_vs_share.map(|t| t.t)),
            r.task_vs_share.map_or("", |t| t.p_bucket.as_str()).to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("confusion.csv"))?;
    w.write_record(["x", "y0", "y1"])?;
    for (x, row) in report.confusion.iter().enumerate() {
        w.write_record([x.to_string(), row[0].to_string(), row[1].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

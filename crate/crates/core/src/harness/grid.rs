use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{DatasetSpec, ExperimentConfig, MtoMethod};
use super::train::{run_training, RunResult};
use crate::analysis::{
    build_report, read_trace, summarize, AbortRecord, CellFailure, GridReport, TraceHeader, TraceLine,
    TraceWriter, TRACE_SCHEMA,
};
use crate::error::{MtoError, Result};
use crate::models::ModelKind;
use crate::par;

/// Cartesian product of methods × model kinds × dataset seeds × run seeds
/// over a base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub base: ExperimentConfig,
    pub methods: Vec<MtoMethod>,
    pub models: Vec<ModelKind>,
    pub dataset_seeds: Vec<u64>,
    pub run_seeds: Vec<u64>,
}

impl GridSpec {
    /// Four methods × three models × four datasets × three seeds = 144 cells.
    pub fn full_shape(base: ExperimentConfig) -> Self {
        Self {
            base,
            methods: vec![MtoMethod::Ls, MtoMethod::Mgda, MtoMethod::ImtlG, MtoMethod::Nashmtl],
            models: ModelKind::ALL.to_vec(),
            dataset_seeds: vec![0, 1, 2, 3],
            run_seeds: vec![0, 1, 2],
        }
    }

    pub fn cells(&self) -> Result<Vec<GridCell>> {
        let mut out = Vec::new();
        for &ds in &self.dataset_seeds {
            for &kind in &self.models {
                for &method in &self.methods {
                    for &seed in &self.run_seeds {
                        let mut config = self.base.clone();
                        match &mut config.dataset {
                            DatasetSpec::Ranking(d) => d.seed = ds,
                            DatasetSpec::Toy(_) => {
                                return Err(MtoError::Config("grid needs a ranking dataset".into()));
                            }
                        }
                        config.model.kind = kind;
                        config.mto_method = method;
                        config.seeds = vec![seed];
                        config.validate()?;
                        out.push(GridCell { config, seed });
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub config: ExperimentConfig,
    pub seed: u64,
}

impl GridCell {
    pub fn id(&self) -> String {
        format!(
            "{}/{}/{}/seed{}",
            self.config.dataset_id(),
            self.config.model.kind,
            self.config.mto_method,
            self.seed
        )
    }

    /// Directory name under `cells/`.
    pub fn dir_name(&self) -> String {
        self.id().replace('/', "__")
    }

    fn header(&self) -> TraceHeader {
        TraceHeader {
            schema: TRACE_SCHEMA.into(),
            dataset_id: self.config.dataset_id(),
            model_kind: self.config.model.kind.as_str().into(),
            method: self.config.mto_method.as_str().into(),
            seed: self.seed,
            task_count: self.config.model.task_count,
        }
    }
}

pub struct GridOutcome {
    pub report: GridReport,
    /// Per-cell results in cell order.
    pub results: Vec<(GridCell, Result<RunResult>)>,
}

fn failure_detail(e: &MtoError) -> String {
    match e {
        MtoError::Divergence { detail, .. } => detail.clone(),
        other => other.to_string(),
    }
}

/// Makes sure a failed cell's trace ends in an abort line so offline analysis
/// sees the same failure.
fn seal_failed_trace(cell: &GridCell, dir: &Path, e: &MtoError) -> Result<()> {
    let path = dir.join("trace.jsonl");
    if read_trace(&path).is_ok_and(|t| t.abort.is_some()) {
        return Ok(());
    }
    std::fs::create_dir_all(dir)?;
    let mut w = TraceWriter::create(&path, cell.header())?;
    let step = match e {
        MtoError::Divergence { step, .. } => *step,
        _ => 0,
    };
    w.write(&TraceLine::Abort(AbortRecord {
        step,
        detail: failure_detail(e),
    }))?;
    w.finish()
}

pub fn run_grid(spec: &GridSpec, out: &Path, threads: usize) -> Result<GridOutcome> {
    run_grid_with(spec, out, threads, |cell, dir| {
        let mut cfg = cell.config.clone();
        cfg.output_dir = Some(dir.to_path_buf());
        run_training(&cfg, cell.seed)
    })
}

/// Grid driver with a caller-supplied cell runner. Cells run on up to
/// `threads` workers; a failing cell is recorded and the rest continue.
pub fn run_grid_with<F>(spec: &GridSpec, out: &Path, threads: usize, runner: F) -> Result<GridOutcome>
where
    F: Fn(&GridCell, &Path) -> Result<RunResult> + Sync + Send,
{
    let cells = spec.cells()?;
    let cells_dir = out.join("cells");
    std::fs::create_dir_all(&cells_dir)?;
    let results: Vec<(GridCell, Result<RunResult>)> = par::with_threads(threads, || {
        par::map(cells, |cell| {
            let dir = cells_dir.join(cell.dir_name());
            let r = runner(&cell, &dir);
            if let Err(e) = &r {
                if let Err(seal) = seal_failed_trace(&cell, &dir, e) {
                    return (cell, Err(seal));
                }
            }
            (cell, r)
        })
    });

    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for (cell, r) in &results {
        match r {
            Ok(run) => summaries.push(run.summary.clone()),
            Err(e) => failures.push(CellFailure {
                cell_id: cell.id(),
                detail: failure_detail(e),
            }),
        }
    }
    let report = build_report(summaries, failures);
    crate::analysis::write_report(&report, out)?;
    Ok(GridOutcome { report, results })
}

/// Trace files under `out/cells/*/trace.jsonl`, sorted by path.
pub fn trace_files(out: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(out.join("cells"))? {
        let p = entry?.path().join("trace.jsonl");
        if p.is_file() {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

/// Rebuilds the grid report from the trace files alone.
pub fn analyze_dir(out: &Path) -> Result<GridReport> {
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for path in trace_files(out)? {
        let trace = read_trace(&path)?;
        match summarize(&trace) {
            Ok(s) => summaries.push(s),
            Err(e) => {
                let h = &trace.header;
                failures.push(CellFailure {
                    cell_id: format!("{}/{}/{}/seed{}", h.dataset_id, h.model_kind, h.method, h.seed),
                    detail: match trace.abort {
                        Some(a) => a.detail,
                        None => e.to_string(),
                    },
                });
            }
        }
    }
    Ok(build_report(summaries, failures))
}

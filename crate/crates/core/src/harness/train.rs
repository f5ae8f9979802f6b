use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::engine::MethodEngine;
use crate::analysis::{
    auc, cosine, summarize, AbortRecord, EpochRecord, ExperimentSummary, Trace, TraceHeader, TraceLine,
    TraceRecord, TraceWriter, TRACE_SCHEMA,
};
use crate::data::{gen_ranking, mix64, RankingDataset};
use crate::error::{MtoError, Result};
use crate::models::{build_model, FlatGrads, Model, ParamSet};
use crate::optim::OptimizerState;
use crate::tensor::Tape;

const EVAL_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Validation AUC per epoch, per task.
    pub val_auc: Vec<Vec<f64>>,
    /// 1-based epoch with the best mean validation AUC.
    pub best_epoch: usize,
    pub summary: ExperimentSummary,
    pub trace_path: Option<PathBuf>,
    pub steps: u64,
    /// Wall time per epoch; excluded from serialized results.
    #[serde(skip)]
    pub epoch_seconds: Vec<f64>,
    /// Parameters at the end of the best epoch.
    #[serde(skip)]
    pub best_params: Option<ParamSet>,
    /// In-memory copy of the trace.
    #[serde(skip)]
    pub trace: Option<Trace>,
}

impl RunResult {
    /// AUC of the weaker task at the best epoch.
    pub fn worst_task_auc(&self) -> f64 {
        self.summary
            .task_aucs
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Trace sink that mirrors every line into memory and, optionally, a file.
struct Sink {
    trace: Trace,
    file: Option<TraceWriter>,
}

impl Sink {
    fn emit(&mut self, line: TraceLine) -> Result<()> {
        if let Some(f) = self.file.as_mut() {
            f.write(&line)?;
        }
        self.trace.push(line)
    }
}

/// Validation AUC per task.
pub fn evaluate(model: &Model, params: &ParamSet, data: &RankingDataset, rows: &[usize]) -> Result<Vec<f64>> {
    let n = model.spec().task_count;
    let mut scores = vec![Vec::with_capacity(rows.len()); n];
    for chunk in rows.chunks(EVAL_CHUNK) {
        let logits = model.forward_multi(params, &data.batch(chunk))?;
        for (s, l) in scores.iter_mut().zip(logits) {
            s.extend(l);
        }
    }
    (0..n)
        .map(|t| {
            let y: Vec<f64> = rows.iter().map(|&r| data.labels(t)[r]).collect();
            auc(&scores[t], &y)
        })
        .collect()
}

/// Trains on a freshly generated dataset.
pub fn run_training(cfg: &ExperimentConfig, seed: u64) -> Result<RunResult> {
    cfg.validate()?;
    let data = gen_ranking(cfg.ranking()?)?;
    run_training_on(cfg, seed, &data, cfg.output_dir.as_deref())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Trains on `data`; writes `trace.jsonl` and `result.json` under `out` when given.
pub fn run_training_on(
    cfg: &ExperimentConfig,
    seed: u64,
    data: &RankingDataset,
    out: Option<&Path>,
) -> Result<RunResult> {
    cfg.validate()?;
    let spec = cfg.model;
    let n = spec.task_count;
    let (mut params, model) = build_model(spec, seed)?;
    let mut state = OptimizerState::for_params(cfg.optim, &params)?;
    let mut engine = MethodEngine::new(cfg, n, seed)?;

    let header = TraceHeader {
        schema: TRACE_SCHEMA.into(),
        dataset_id: cfg.dataset_id(),
        model_kind: spec.kind.as_str().into(),
        method: cfg.mto_method.as_str().into(),
        seed,
        task_count: n,
    };
    let trace_path = out.map(|d| d.join("trace.jsonl"));
    if let Some(d) = out {
        std::fs::create_dir_all(d)?;
    }
    let mut sink = Sink {
        trace: Trace::new(header.clone()),
        file: match &trace_path {
            Some(p) => Some(TraceWriter::create(p, header)?),
            None => None,
        },
    };

    let (train_rows, val_rows) = data.split();
    let mut order = train_rows.clone();
    let mut val_auc = Vec::with_capacity(cfg.epochs);
    let mut epoch_seconds = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ParamSet)> = None;

    let outcome = (|| -> Result<()> {
        for epoch in 1..=cfg.epochs {
            let started = Instant::now();
            order.copy_from_slice(&train_rows);
            let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed) ^ mix64(epoch as u64));
            order.shuffle(&mut rng);
            let mut loss_sum = vec![0.0; n];
            let mut batches = 0usize;
            for rows in order.chunks(cfg.batch_size) {
                let record = train_step(cfg, &model, &mut params, &mut state, &mut engine, data, rows, epoch)?;
                loss_sum.iter_mut().zip(&record.task_losses).for_each(|(s, l)| *s += l);
                batches += 1;
                sink.emit(TraceLine::Step(record))?;
            }
            let aucs = evaluate(&model, &params, data, &val_rows)?;
            epoch_seconds.push(started.elapsed().as_secs_f64());
            let avg = aucs.iter().sum::<f64>() / n as f64;
            if best.as_ref().is_none_or(|(_, b, _)| avg > *b) {
                best = Some((epoch, avg, params.clone()));
            }
            sink.emit(TraceLine::Epoch(EpochRecord {
                epoch,
                last_step: state.step_count.saturating_sub(1),
                val_auc: aucs.clone(),
                train_loss: loss_sum.iter().map(|s| s / batches.max(1) as f64).collect(),
            }))?;
            val_auc.push(aucs);
        }
        Ok(())
    })();

    if let Err(e) = outcome {
        if let MtoError::Divergence { step, detail } = &e {
            sink.emit(TraceLine::Abort(AbortRecord {
                step: *step,
                detail: detail.clone(),
            }))?;
        }
        if let Some(f) = sink.file.take() {
            f.finish()?;
        }
        return Err(e);
    }
    if let Some(f) = sink.file.take() {
        f.finish()?;
    }

    let summary = summarize(&sink.trace)?;
    let (best_epoch, _, best_params) = best.expect("at least one epoch");
    let result = RunResult {
        val_auc,
        best_epoch,
        summary,
        trace_path,
        steps: state.step_count,
        epoch_seconds,
        best_params: Some(best_params),
        trace: Some(sink.trace),
    };
    if let Some(d) = out {
        let f = std::fs::File::create(d.join("result.json"))?;
        serde_json::to_writer_pretty(f, &result)?;
    }
    Ok(result)
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    cfg: &ExperimentConfig,
    model: &Model,
    params: &mut ParamSet,
    state: &mut OptimizerState,
    engine: &mut MethodEngine,
    data: &RankingDataset,
    rows: &[usize],
    epoch: usize,
) -> Result<TraceRecord> {
    let n = model.spec().task_count;
    let step = state.step_count;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let x = tape.constant(&data.batch(rows));
    let logits = model.forward(&mut tape, &bound, x)?;
    let mut losses = Vec::with_capacity(n);
    let mut loss_vars = Vec::with_capacity(n);
    for (t, &z) in logits.iter().enumerate() {
        let y = tape.constant(&data.label_batch(t, rows));
        let l = tape.bce_with_logits(z, y)?;
        losses.push(tape.value(l)[0]);
        loss_vars.push(l);
    }
    if let Some(bad) = losses.iter().position(|l| !l.is_finite()) {
        return Err(MtoError::Divergence {
            step,
            detail: format!("task {bad} loss is {}", losses[bad]),
        });
    }

    let shared_before = params.flatten_shared();
    let heads_before: Vec<Vec<f64>> = (0..n).map(|t| params.flatten_task(t)).collect();
    let mut grads: Vec<FlatGrads> = Vec::with_capacity(n);
    for &l in &loss_vars {
        let mut g = bound.flat_grads(&tape.backward(l)?, params);
        if cfg.l2 > 0.0 {
            g.shared.iter_mut().zip(&shared_before).for_each(|(g, p)| *g += cfg.l2 * p);
            for (gt, hb) in g.per_task.iter_mut().zip(&heads_before) {
                gt.iter_mut().zip(hb).for_each(|(g, p)| *g += cfg.l2 * p);
            }
        }
        grads.push(g);
    }
    let grad_norm_share = grads.iter().map(|g| norm(&g.shared)).collect();

    let info = engine.step(params, state, &grads, &losses)?;

    let shared_delta = sub(&shared_before, &params.flatten_shared());
    let sim_share = cosine(&info.shared_grad, &shared_delta);
    let sim_task = (0..n)
        .map(|t| cosine(&info.head_grads[t], &sub(&heads_before[t], &params.flatten_task(t))))
        .sum::<f64>()
        / n as f64;
    if !shared_delta.iter().all(|d| d.is_finite()) {
        return Err(MtoError::Divergence {
            step,
            detail: "shared parameters became non-finite".into(),
        });
    }
    Ok(TraceRecord {
        step,
        epoch,
        task_losses: losses,
        alpha: info.alpha,
        solved: info.solved,
        sim_task,
        sim_share,
        grad_norm_share,
        update_norm_share: norm(&shared_delta),
    })
}

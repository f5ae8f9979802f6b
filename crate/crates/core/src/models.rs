//! Shared-bottom, MMOE and PLE ranking models with an explicit split between
//! shared and task-specific parameters.
//!
//! Every expert is a single-layer perceptron with ReLU, every tower is one
//! linear layer producing a logit. Gates read the raw input features.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, MtoError, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SharedBottom,
    Mmoe,
    Ple,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::SharedBottom, ModelKind::Mmoe, ModelKind::Ple];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::SharedBottom => "shared_bottom",
            ModelKind::Mmoe => "mmoe",
            ModelKind::Ple => "ple",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = MtoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared_bottom" | "shared-bottom" => Ok(ModelKind::SharedBottom),
            "mmoe" => Ok(ModelKind::Mmoe),
            "ple" => Ok(ModelKind::Ple),
            other => Err(MtoError::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    /// Experts in the shared pool (MMOE and PLE). Ignored by shared-bottom.
    pub expert_count: usize,
    /// Task-owned experts per task (PLE only).
    pub experts_per_task: usize,
    pub hidden_dim: usize,
    pub task_count: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::desk(ModelKind::Mmoe)
    }
}

impl ModelSpec {
    /// Desk-scale defaults: 16 inputs, 16 hidden units, 4 experts, 2 tasks.
    pub fn desk(kind: ModelKind) -> Self {
        Self {
            kind,
            input_dim: 16,
            expert_count: 4,
            experts_per_task: 2,
            hidden_dim: 16,
            task_count: 2,
        }
    }

    /// Eight experts per pool, the production-width setup.
    pub fn production_preset(kind: ModelKind) -> Self {
        Self {
            expert_count: 8,
            experts_per_task: 8,
            ..Self::desk(kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.expert_count == 0 || self.hidden_dim == 0 || self.input_dim == 0 {
            return Err(MtoError::Config(
                "expert_count, hidden_dim and input_dim must be >= 1".into(),
            ));
        }
        if self.task_count == 0 {
            return Err(MtoError::Config("task_count must be >= 1".into()));
        }
        if self.kind == ModelKind::Ple && self.experts_per_task == 0 {
            return Err(MtoError::Config("ple needs experts_per_task >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Trainable parameters partitioned into a shared group and one group per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub shared: Vec<NamedTensor>,
    pub per_task: Vec<Vec<NamedTensor>>,
}

/// Tape handles for a bound [`ParamSet`], positionally aligned with it.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub shared: Vec<Var>,
    pub per_task: Vec<Vec<Var>>,
}

/// Flat gradients of one loss over the partition.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatGrads {
    pub shared: Vec<f64>,
    pub per_task: Vec<Vec<f64>>,
}

impl ParamSet {
    pub fn task_count(&self) -> usize {
        self.per_task.len()
    }

    /// Number of shared scalars (`d`).
    pub fn shared_len(&self) -> usize {
        self.shared.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn task_len(&self, task: usize) -> usize {
        self.per_task[task].iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_task.is_empty() {
            return Err(MtoError::Contract("parameter set needs >= 1 task".into()));
        }
        let mut seen = HashSet::new();
        let all = self.shared.iter().chain(self.per_task.iter().flatten());
        for p in all {
            if !seen.insert(p.name.as_str()) {
                return Err(MtoError::Contract(format!(
                    "parameter `{}` appears in more than one group",
                    p.name
                )));
            }
        }
        Ok(())
    }

    pub fn flatten_shared(&self) -> Vec<f64> {
        flatten(&self.shared)
    }

    pub fn flatten_task(&self, task: usize) -> Vec<f64> {
        flatten(&self.per_task[task])
    }

    pub fn set_shared_flat(&mut self, flat: &[f64]) -> Result<()> {
        unflatten(&mut self.shared, flat)
    }

    pub fn set_task_flat(&mut self, task: usize, flat: &[f64]) -> Result<()> {
        unflatten(&mut self.per_task[task], flat)
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            shared: self.shared.iter().map(|p| tape.leaf(&p.tensor)).collect(),
            per_task: self
                .per_task
                .iter()
                .map(|g| g.iter().map(|p| tape.leaf(&p.tensor)).collect())
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.shared
            .iter()
            .chain(self.per_task.iter().flatten())
            .find(|p| p.name == name)
            .map(|p| &p.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.shared
            .iter_mut()
            .chain(self.per_task.iter_mut().flatten())
            .find(|p| p.name == name)
            .map(|p| &mut p.tensor)
    }
}

impl BoundParams {
    /// Pulls flat gradients for every bound parameter out of `grads`.
    pub fn flat_grads(&self, grads: &Gradients, params: &ParamSet) -> FlatGrads {
        let collect = |vars: &[Var], group: &[NamedTensor]| -> Vec<f64> {
            vars.iter()
                .zip(group)
                .flat_map(|(v, p)| grads.get_or_zeros(*v, p.tensor.numel()))
                .collect()
        };
        FlatGrads {
            shared: collect(&self.shared, &params.shared),
            per_task: self
                .per_task
                .iter()
                .zip(&params.per_task)
                .map(|(vars, group)| collect(vars, group))
                .collect(),
        }
    }
}

fn flatten(group: &[NamedTensor]) -> Vec<f64> {
    group
        .iter()
        .flat_map(|p| p.tensor.data().iter().copied())
        .collect()
}

fn unflatten(group: &mut [NamedTensor], flat: &[f64]) -> Result<()> {
    let total: usize = group.iter().map(|p| p.tensor.numel()).sum();
    if total != flat.len() {
        return Err(dim_err(
            "set_flat",
            format!("group holds {total} scalars, got {}", flat.len()),
        ));
    }
    let mut offset = 0;
    for p in group {
        let n = p.tensor.numel();
        p.tensor
            .data_mut()
            .copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    }
    Ok(())
}

/// A model architecture; parameters are held separately in a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Model {
    spec: ModelSpec,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> [NamedTensor; 2] {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| self.rng.random_range(-a..a))
            .collect();
        [
            NamedTensor {
                name: format!("{name}.w"),
                tensor: Tensor::new(vec![fan_in, fan_out], w).expect("sized"),
            },
            NamedTensor {
                name: format!("{name}.b"),
                tensor: Tensor::zeros(vec![fan_out]),
            },
        ]
    }
}

/// Builds a model and its deterministically initialized parameters.
pub fn build_model(spec: ModelSpec, seed: u64) -> Result<(ParamSet, Model)> {
    spec.validate()?;
    let mut init = Init {
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let (i, h, e, n) = (
        spec.input_dim,
        spec.hidden_dim,
        spec.expert_count,
        spec.task_count,
    );
    let mut shared = Vec::new();
    let mut per_task: Vec<Vec<NamedTensor>> = vec![Vec::new(); n];
    match spec.kind {
        ModelKind::SharedBottom => {
            shared.extend(init.linear("bottom", i, h));
        }
        ModelKind::Mmoe => {
            for k in 0..e {
                shared.extend(init.linear(&format!("expert{k}"), i, h));
            }
            for (t, group) in per_task.iter_mut().enumerate() {
                group.extend(init.linear(&format!("task{t}.gate"), i, e));
            }
        }
        ModelKind::Ple => {
            for k in 0..e {
                shared.extend(init.linear(&format!("shared_expert{k}"), i, h));
            }
            let gate_width = e + spec.experts_per_task;
            for (t, group) in per_task.iter_mut().enumerate() {
                for k in 0..spec.experts_per_task {
                    group.extend(init.linear(&format!("task{t}.expert{k}"), i, h));
                }
                group.extend(init.linear(&format!("task{t}.gate"), i, gate_width));
            }
        }
    }
    for (t, group) in per_task.iter_mut().enumerate() {
        group.extend(init.linear(&format!("task{t}.tower"), h, 1));
    }
    let params = ParamSet { shared, per_task };
    params.validate()?;
    Ok((params, Model { spec }))
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn check_batch(&self, tape: &Tape, x: Var) -> Result<()> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != self.spec.input_dim {
            return Err(dim_err(
                "forward_multi",
                format!("batch {:?}, model input_dim {}", shape, self.spec.input_dim),
            ));
        }
        Ok(())
    }

    fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = tape.matmul(x, w)?;
        tape.add(xw, b)
    }

    fn expert(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
        let z = Self::linear(tape, x, w, b)?;
        Ok(tape.relu(z))
    }

    /// Softmax gate over `experts`, returning the gated mixture.
    fn mix(tape: &mut Tape, x: Var, gw: Var, gb: Var, experts: &[Var]) -> Result<(Var, Var)> {
        let logits = Self::linear(tape, x, gw, gb)?;
        let gate = tape.softmax(logits);
        let mut acc: Option<Var> = None;
        for (k, &ex) in experts.iter().enumerate() {
            let wk = tape.slice(gate, k, k + 1)?;
            let term = tape.mul(ex, wk)?;
            acc = Some(match acc {
                None => term,
                Some(a) => tape.add(a, term)?,
            });
        }
        Ok((acc.expect("at least one expert"), gate))
    }

    /// Records the forward pass on `tape`; returns per-task logits (`[batch, 1]`)
    /// and, for gated models, per-task gate weights.
    pub fn forward_with_gates(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        self.check_batch(tape, x)?;
        let n = self.spec.task_count;
        let mut logits = Vec::with_capacity(n);
        let mut gates = Vec::new();
        let tower = |tape: &mut Tape, t: usize, rep: Var| -> Result<Var> {
            let vars = &bound.per_task[t];
            let len = vars.len();
            Self::linear(tape, rep, vars[len - 2], vars[len - 1])
        };
        match self.spec.kind {
            ModelKind::SharedBottom => {
                let rep = Self::expert(tape, x, bound.shared[0], bound.shared[1])?;
                for t in 0..n {
                    logits.push(tower(tape, t, rep)?);
                }
            }
            ModelKind::Mmoe => {
                let experts = bound
                    .shared
                    .chunks(2)
                    .map(|wb| Self::expert(tape, x, wb[0], wb[1]))
                    .collect::<Result<Vec<_>>>()?;
                for t in 0..n {
                    let v = &bound.per_task[t];
                    let (rep, gate) = Self::mix(tape, x, v[0], v[1], &experts)?;
                    gates.push(gate);
                    logits.push(tower(tape, t, rep)?);
                }
            }
            ModelKind::Ple => {
                let shared_experts = bound
                    .shared
                    .chunks(2)
                    .map(|wb| Self::expert(tape, x, wb[0], wb[1]))
                    .collect::<Result<Vec<_>>>()?;
                let own = self.spec.experts_per_task;
                for t in 0..n {
                    let v = &bound.per_task[t];
                    let mut experts = shared_experts.clone();
                    for k in 0..own {
                        experts.push(Self::expert(tape, x, v[2 * k], v[2 * k + 1])?);
                    }
                    let (rep, gate) = Self::mix(tape, x, v[2 * own], v[2 * own + 1], &experts)?;
                    gates.push(gate);
                    logits.push(tower(tape, t, rep)?);
                }
            }
        }
        Ok((logits, gates))
    }

    pub fn forward(&self, tape: &mut Tape, bound: &BoundParams, x: Var) -> Result<Vec<Var>> {
        Ok(self.forward_with_gates(tape, bound, x)?.0)
    }

    /// Inference-only forward: per-task logit vectors of length `batch`.
    pub fn forward_multi(&self, params: &ParamSet, batch: &Tensor) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(batch);
        let logits = self.forward(&mut tape, &bound, x)?;
        Ok(logits.iter().map(|v| tape.value(*v).to_vec()).collect())
    }

    /// Per-task gate weight matrices (`[batch, experts]`, row-major); empty for shared-bottom.
    pub fn gate_weights(&self, params: &ParamSet, batch: &Tensor) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(batch);
        let (_, gates) = self.forward_with_gates(&mut tape, &bound, x)?;
        Ok(gates.iter().map(|v| tape.value(*v).to_vec()).collect())
    }
}

/// JSON checkpoint: the model spec plus every named flat array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(vec![rows, cols], data).unwrap()
    }

    #[test]
    fn shared_bottom_parameter_counts() {
        let spec = ModelSpec {
            kind: ModelKind::SharedBottom,
            input_dim: 8,
            hidden_dim: 4,
            task_count: 2,
            ..ModelSpec::desk(ModelKind::SharedBottom)
        };
        let (p, _) = build_model(spec, 0).unwrap();
        assert_eq!(p.shared_len(), 36);
        assert_eq!(p.task_len(0), 5);
        assert_eq!(p.task_len(1), 5);
    }

    #[test]
    fn ple_shared_group_holds_only_shared_experts() {
        let spec = ModelSpec {
            kind: ModelKind::Ple,
            expert_count: 2,
            experts_per_task: 2,
            ..ModelSpec::desk(ModelKind::Ple)
        };
        let (p, _) = build_model(spec, 1).unwrap();
        let names: Vec<_> = p.shared.iter().map(|t| t.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "shared_expert0.w",
                "shared_expert0.b",
                "shared_expert1.w",
                "shared_expert1.b"
            ]
        );
        assert!(p.per_task.iter().flatten().all(|t| t.name.starts_with("task")));
    }

    #[test]
    fn unknown_kind_is_config_error() {
        assert!(matches!(
            "transformer".parse::<ModelKind>(),
            Err(MtoError::Config(_))
        ));
    }

    #[test]
    fn mmoe_gates_lie_in_simplex() {
        let (p, m) = build_model(ModelSpec::desk(ModelKind::Mmoe), 3).unwrap();
        let x = batch(17, 16, 9);
        for gate in m.gate_weights(&p, &x).unwrap() {
            for row in gate.chunks(4) {
                assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        for kind in ModelKind::ALL {
            let (mut p, m) = build_model(ModelSpec::desk(kind), 0).unwrap();
            for t in p.shared.iter_mut().chain(p.per_task.iter_mut().flatten()) {
                t.tensor.data_mut().fill(0.0);
            }
            let logits = m.forward_multi(&p, &batch(5, 16, 0)).unwrap();
            assert!(logits.iter().flatten().all(|&z| z == 0.0));
        }
    }

    #[test]
    fn rows_are_independent() {
        for kind in ModelKind::ALL {
            let (p, m) = build_model(ModelSpec::desk(kind), 4).unwrap();
            let x = batch(6, 16, 2);
            let full = m.forward_multi(&p, &x).unwrap();
            let first = Tensor::new(vec![1, 16], x.data()[..16].to_vec()).unwrap();
            let single = m.forward_multi(&p, &first).unwrap();
            for t in 0..2 {
                assert!((full[t][0] - single[t][0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_from_seed() {
        let (p1, m) = build_model(ModelSpec::desk(ModelKind::Ple), 11).unwrap();
        let (p2, _) = build_model(ModelSpec::desk(ModelKind::Ple), 11).unwrap();
        assert_eq!(p1, p2);
        let x = batch(8, 16, 5);
        assert_eq!(m.forward_multi(&p1, &x).unwrap(), m.forward_multi(&p2, &x).unwrap());
    }

    #[test]
    fn wrong_batch_width_rejected() {
        let (p, m) = build_model(ModelSpec::desk(ModelKind::Mmoe), 0).unwrap();
        assert!(matches!(
            m.forward_multi(&p, &batch(3, 5, 0)),
            Err(MtoError::Dimension { .. })
        ));
    }

    #[test]
    fn task_parameter_only_moves_its_own_logits() {
        for kind in ModelKind::ALL {
            let (p, m) = build_model(ModelSpec::desk(kind), 8).unwrap();
            let x = batch(4, 16, 1);
            let base = m.forward_multi(&p, &x).unwrap();
            for task in 0..2 {
                for name in p.per_task[task].iter().map(|t| t.name.clone()) {
                    let mut q = p.clone();
                    q.get_mut(&name).unwrap().data_mut()[0] += 0.5;
                    let out = m.forward_multi(&q, &x).unwrap();
                    let other = 1 - task;
                    assert_eq!(out[other], base[other], "{kind} {name}");
                }
            }
        }
    }

    #[test]
    fn shared_parameters_reach_every_task() {
        let (p, m) = build_model(ModelSpec::desk(ModelKind::Mmoe), 8).unwrap();
        let x = batch(4, 16, 1);
        let base = m.forward_multi(&p, &x).unwrap();
        let mut q = p.clone();
        q.shared[0].tensor.data_mut().iter_mut().for_each(|w| *w += 0.3);
        let out = m.forward_multi(&q, &x).unwrap();
        assert_ne!(out[0], base[0]);
        assert_ne!(out[1], base[1]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let (p, m) = build_model(ModelSpec::desk(ModelKind::Mmoe), 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let ck = Checkpoint {
            spec: *m.spec(),
            params: p,
        };
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn flat_round_trip() {
        let (mut p, _) = build_model(ModelSpec::desk(ModelKind::Ple), 2).unwrap();
        let flat: Vec<f64> = (0..p.shared_len()).map(|i| i as f64).collect();
        p.set_shared_flat(&flat).unwrap();
        assert_eq!(p.flatten_shared(), flat);
        assert!(p.set_shared_flat(&flat[1..]).is_err());
    }
}

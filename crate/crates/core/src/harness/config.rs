use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{RankingDatasetConfig, ToyConfig};
use crate::error::{MtoError, Result};
use crate::models::ModelSpec;
use crate::optim::OptimConfig;
use crate::solvers::SolverConfig;
use crate::umm::UmmConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MtoMethod {
    Ls,
    Pub,
    Mgda,
    Pcgrad,
    Cagrad,
    ImtlG,
    Nashmtl,
    Uncertainty,
}

impl MtoMethod {
    pub const ALL: [MtoMethod; 8] = [
        MtoMethod::Ls,
        MtoMethod::Pub,
        MtoMethod::Mgda,
        MtoMethod::Pcgrad,
        MtoMethod::Cagrad,
        MtoMethod::ImtlG,
        MtoMethod::Nashmtl,
        MtoMethod::Uncertainty,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MtoMethod::Ls => "ls",
            MtoMethod::Pub => "pub",
            MtoMethod::Mgda => "mgda",
            MtoMethod::Pcgrad => "pcgrad",
            MtoMethod::Cagrad => "cagrad",
            MtoMethod::ImtlG => "imtl_g",
            MtoMethod::Nashmtl => "nashmtl",
            MtoMethod::Uncertainty => "uncertainty",
        }
    }
}

impl fmt::Display for MtoMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MtoMethod {
    type Err = MtoError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        MtoMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| MtoError::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Ranking(RankingDatasetConfig),
    Toy(ToyConfig),
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Ranking(RankingDatasetConfig::default())
    }
}

/// Everything needed to run one training job (or, with a toy dataset, one
/// trajectory study).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub optim: OptimConfig,
    pub mto_method: MtoMethod,
    pub umm: UmmConfig,
    pub solver: SolverConfig,
    pub solve_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    /// CAGrad conflict radius.
    pub cagrad_c: f64,
    /// L2 penalty folded into every task gradient.
    pub l2: f64,
    /// Scale the update-balanced shared step to the parameter count.
    pub pub_dim_scaled: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            model: ModelSpec::default(),
            optim: OptimConfig::default(),
            mto_method: MtoMethod::Ls,
            umm: UmmConfig::Identity,
            solver: SolverConfig::default(),
            solve_every: 1,
            epochs: 5,
            batch_size: 256,
            seeds: vec![0],
            output_dir: None,
            cagrad_c: 0.4,
            l2: 0.0,
            pub_dim_scaled: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| MtoError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MtoError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(MtoError::Config("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(MtoError::Config("epochs must be >= 1".into()));
        }
        if self.solve_every == 0 {
            return Err(MtoError::Config("solve_every must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.cagrad_c) {
            return Err(MtoError::Config("cagrad_c must lie in [0, 1)".into()));
        }
        if !(self.l2 >= 0.0) {
            return Err(MtoError::Config("l2 must be >= 0".into()));
        }
        self.optim.validate()?;
        self.umm.validate()?;
        self.solver.validate()?;
        match &self.dataset {
            DatasetSpec::Ranking(d) => {
                d.validate()?;
                self.model.validate()?;
                if self.model.input_dim != d.dim {
                    return Err(MtoError::Config(format!(
                        "model input_dim {} does not match dataset dim {}",
                        self.model.input_dim, d.dim
                    )));
                }
                if !(1..=2).contains(&self.model.task_count) {
                    return Err(MtoError::Config(
                        "ranking data provides 1 or 2 tasks".into(),
                    ));
                }
            }
            DatasetSpec::Toy(t) => t.validate()?,
        }
        Ok(())
    }

    pub fn ranking(&self) -> Result<&RankingDatasetConfig> {
        match &self.dataset {
            DatasetSpec::Ranking(d) => Ok(d),
            DatasetSpec::Toy(_) => Err(MtoError::Config("expected a ranking dataset".into())),
        }
    }

    pub fn toy(&self) -> Result<&ToyConfig> {
        match &self.dataset {
            DatasetSpec::Toy(t) => Ok(t),
            DatasetSpec::Ranking(_) => Err(MtoError::Config("expected a toy dataset".into())),
        }
    }

    /// Identifier of the dataset, used to group runs in reports.
    pub fn dataset_id(&self) -> String {
        match &self.dataset {
            DatasetSpec::Ranking(d) => format!("ranking-rho{}-ds{}", d.rho, d.seed),
            DatasetSpec::Toy(t) => format!("toy-kappa{}", t.kappa),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelKind;

    #[test]
    fn toml_round_trip() {
        let text = r#"
mto_method = "pub"
solve_every = 10
epochs = 2
batch_size = 128
seeds = [1, 2]

[dataset]
kind = "ranking"
n_samples = 1000
rho = 0.2

[model]
kind = "ple"

[optim]
kind = "adam"
lr = 0.002

[umm]
kind = "clippy"
sigma_rel = 0.5
sigma_abs = 0.001
"#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.mto_method, MtoMethod::Pub);
        assert_eq!(cfg.model.kind, ModelKind::Ple);
        assert_eq!(cfg.ranking().unwrap().n_samples, 1000);
        assert_eq!(cfg.optim.lr, 0.002);
        assert_eq!(cfg.seeds, vec![1, 2]);
        let back = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&back).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml_str("batch_size = 0").is_err());
        assert!(ExperimentConfig::from_toml_str("mto_method = \"nope\"").is_err());
        let dim = "[dataset]\nkind = \"ranking\"\ndim = 8\n";
        assert!(ExperimentConfig::from_toml_str(dim).is_err());
    }

    #[test]
    fn method_names() {
        for m in MtoMethod::ALL {
            assert_eq!(m.as_str().parse::<MtoMethod>().unwrap(), m);
        }
        assert_eq!("imtl-g".parse::<MtoMethod>().unwrap(), MtoMethod::ImtlG);
    }
}

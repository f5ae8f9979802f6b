use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MtoError, Result};
use crate::tensor::Tensor;

/// Two-task click / click-then-convert generator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankingDatasetConfig {
    pub n_samples: usize,
    pub dim: usize,
    /// Inner product of the unit click and conversion weight vectors.
    pub rho: f64,
    pub click_bias: f64,
    pub conv_bias: f64,
    pub seed: u64,
}

impl Default for RankingDatasetConfig {
    fn default() -> Self {
        Self {
            n_samples: 50_000,
            dim: 16,
            rho: -0.3,
            click_bias: -1.0,
            conv_bias: -2.5,
            seed: 0,
        }
    }
}

impl RankingDatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(MtoError::Config("dataset dim must be >= 2".into()));
        }
        if self.n_samples < 100 {
            return Err(MtoError::Config("dataset needs >= 100 samples".into()));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(MtoError::Config(format!("rho {} outside [-1, 1]", self.rho)));
        }
        Ok(())
    }
}

/// Label rates and the per-task loss of the best constant predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenReport {
    pub ctr_rate: f64,
    pub ctcvr_rate: f64,
    pub prior_loss_ctr: f64,
    pub prior_loss_ctcvr: f64,
    /// Realised `⟨w_ctr, w_cv⟩`.
    pub weight_cosine: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingDataset {
    pub dim: usize,
    /// Row-major `n × dim`.
    pub features: Vec<f64>,
    pub y_ctr: Vec<f64>,
    pub y_ctcvr: Vec<f64>,
    pub w_ctr: Vec<f64>,
    pub w_cv: Vec<f64>,
}

fn unit(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn gen_ranking(cfg: &RankingDatasetConfig) -> Result<RankingDataset> {
    cfg.validate()?;
    let d = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = |rng: &mut ChaCha8Rng, k: usize| -> Vec<f64> {
        (0..k).map(|_| rng.sample(StandardNormal)).collect()
    };

    let mut w_ctr = normal(&mut rng, d);
    unit(&mut w_ctr);
    // Component of a fresh draw orthogonal to w_ctr.
    let mut u = normal(&mut rng, d);
    let proj: f64 = u.iter().zip(&w_ctr).map(|(a, b)| a * b).sum();
    u.iter_mut().zip(&w_ctr).for_each(|(a, b)| *a -= proj * b);
    unit(&mut u);
    let s = (1.0 - cfg.rho * cfg.rho).max(0.0).sqrt();
    let w_cv: Vec<f64> = w_ctr
        .iter()
        .zip(&u)
        .map(|(a, b)| cfg.rho * a + s * b)
        .collect();

    let features = normal(&mut rng, cfg.n_samples * d);
    let mut y_ctr = Vec::with_capacity(cfg.n_samples);
    let mut y_ctcvr = Vec::with_capacity(cfg.n_samples);
    for row in features.chunks_exact(d) {
        let zc: f64 = row.iter().zip(&w_ctr).map(|(x, w)| x * w).sum::<f64>() + cfg.click_bias;
        let zv: f64 = row.iter().zip(&w_cv).map(|(x, w)| x * w).sum::<f64>() + cfg.conv_bias;
        let click = rng.random::<f64>() < sigmoid(zc);
        let conv = rng.random::<f64>() < sigmoid(zv);
        y_ctr.push(if click { 1.0 } else { 0.0 });
        y_ctcvr.push(if click && conv { 1.0 } else { 0.0 });
    }
    Ok(RankingDataset {
        dim: d,
        features,
        y_ctr,
        y_ctcvr,
        w_ctr,
        w_cv,
    })
}

fn entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        0.0
    } else {
        -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
    }
}

/// SplitMix64 finaliser, used to hash row indices into the validation split.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RankingDataset {
    pub fn len(&self) -> usize {
        self.y_ctr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_ctr.is_empty()
    }

    /// Labels of task 0 (CTR) or task 1 (CTCVR).
    pub fn labels(&self, task: usize) -> &[f64] {
        match task {
            0 => &self.y_ctr,
            _ => &self.y_ctcvr,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Indices for training and validation: a row goes to validation when its
    /// hashed index falls in the last tenth.
    pub fn split(&self) -> (Vec<usize>, Vec<usize>) {
        (0..self.len()).partition(|&i| mix64(i as u64) % 10 != 9)
    }

    /// `[rows.len(), dim]` feature batch.
    pub fn batch(&self, rows: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Tensor::new(vec![rows.len(), self.dim], data).expect("batch shape")
    }

    /// `[rows.len(), 1]` label column for `task`.
    pub fn label_batch(&self, task: usize, rows: &[usize]) -> Tensor {
        let y = self.labels(task);
        Tensor::new(vec![rows.len(), 1], rows.iter().map(|&r| y[r]).collect()).expect("label shape")
    }

    pub fn report(&self) -> GenReport {
        let n = self.len() as f64;
        let ctr = self.y_ctr.iter().sum::<f64>() / n;
        let ctcvr = self.y_ctcvr.iter().sum::<f64>() / n;
        GenReport {
            ctr_rate: ctr,
            ctcvr_rate: ctcvr,
            prior_loss_ctr: entropy(ctr),
            prior_loss_ctcvr: entropy(ctcvr),
            weight_cosine: self.w_ctr.iter().zip(&self.w_cv).map(|(a, b)| a * b).sum(),
        }
    }

    /// CSV with header `f0..f{d-1},y_ctr,y_ctcvr`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("f{j}")).collect();
        header.push("y_ctr".into());
        header.push("y_ctcvr".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|x| x.to_string()).collect();
            rec.push(self.y_ctr[i].to_string());
            rec.push(self.y_ctcvr[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_report(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, &self.report())?;
        writeln!(f)?;
        Ok(())
    }
}

//! End-to-end protocols: data generation, training, best-epoch selection
//! and test evaluation.

use serde::{Deserialize, Serialize};

use crate::datasets::{derive_seed, split, spiral_splits, standardize_splits, Dataset};
use crate::error::{Result, UdnError};
use crate::model::{DenseGenerator, DepthMode, TargetKind, VariationalState};
use crate::trainer::{evaluate, train, Metrics, RunRecord, Task, TrainConfig, TrainData};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpiralExperiment {
    pub omega: f64,
    /// Size of each of the independently drawn train, validation and test
    /// sets.
    pub n_per_split: usize,
    pub noise_scale: f64,
    pub width: usize,
    pub train: TrainConfig,
}

impl SpiralExperiment {
    pub fn new(omega: f64, seed: u64, mode: DepthMode) -> Self {
        SpiralExperiment {
            omega,
            n_per_split: 1024,
            noise_scale: 0.02,
            width: 32,
            train: TrainConfig {
                seed,
                mode,
                ..TrainConfig::spiral_defaults()
            },
        }
    }

    /// Same protocol with 1000 epochs.
    pub fn quick(omega: f64, seed: u64, mode: DepthMode) -> Self {
        let mut e = Self::new(omega, seed, mode);
        e.train.epochs = 1000;
        e
    }

    pub fn generator(&self) -> DenseGenerator {
        DenseGenerator {
            input_dim: 2,
            width: self.width,
            target: TargetKind::Categorical { num_classes: 2 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpiralSummary {
    pub schema_version: u32,
    pub omega: f64,
    pub seed: u64,
    pub mode: DepthMode,
    pub best_epoch: usize,
    pub valid_metrics: Metrics,
    pub test_metrics: Metrics,
    /// `E_q[ℓ]` of the selected checkpoint (the depth itself when fixed).
    pub posterior_mean_depth: f64,
    pub lambda: f64,
    /// `q(ℓ)` over `1..=m(q)` of the selected checkpoint.
    pub q_pmf: Vec<f64>,
    pub created_count: usize,
    pub final_lambda: f64,
    pub final_posterior_mean_depth: f64,
}

pub struct SpiralRun {
    pub summary: SpiralSummary,
    pub record: RunRecord,
    pub selected: VariationalState,
    pub last: VariationalState,
}

fn q_pmf(state: &VariationalState) -> Result<Vec<f64>> {
    Ok(match state.mode() {
        DepthMode::Variational => state.depth_distribution()?.pmf_vector(),
        DepthMode::Fixed(_) => Vec::new(),
    })
}

/// Draws the three spiral sets, trains, keeps the best validation
/// checkpoint and evaluates it on the test set.
pub fn run_spiral(exp: &SpiralExperiment) -> Result<SpiralRun> {
    let data = spiral_splits(exp.omega, exp.n_per_split, exp.noise_scale, derive_seed(exp.train.seed, 10))?;
    let gen = exp.generator();
    let outcome = train(
        &exp.train,
        &gen,
        TrainData {
            train: &data.train,
            valid: Some(&data.valid),
        },
    )?;
    let best = outcome
        .best
        .ok_or_else(|| UdnError::Contract("training produced no validation checkpoint".into()))?;
    let test_metrics = evaluate(&best.state, &data.test)?;
    let summary = SpiralSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        omega: exp.omega,
        seed: exp.train.seed,
        mode: exp.train.mode,
        best_epoch: best.epoch,
        valid_metrics: best.metrics,
        test_metrics,
        posterior_mean_depth: best.state.posterior_mean_depth()?,
        lambda: best.state.lambda(),
        q_pmf: q_pmf(&best.state)?,
        created_count: outcome.state.created_count(),
        final_lambda: outcome.state.lambda(),
        final_posterior_mean_depth: outcome.state.posterior_mean_depth()?,
    };
    Ok(SpiralRun {
        summary,
        record: outcome.record,
        selected: best.state,
        last: outcome.state,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionExperiment {
    pub repetitions: usize,
    /// Fractions of rows going to train, validation and test.
    pub fractions: [f64; 3],
    pub width: usize,
    /// Observation noise of the Gaussian head.
    pub sigma: f64,
    pub standardize: bool,
    pub train: TrainConfig,
}

impl Default for RegressionExperiment {
    fn default() -> Self {
        RegressionExperiment {
            repetitions: 10,
            fractions: [0.8, 0.1, 0.1],
            width: 32,
            sigma: 1.0,
            standardize: true,
            train: TrainConfig {
                task: Task::Regression,
                epochs: 1000,
                ..TrainConfig::spiral_defaults()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionSummary {
    pub schema_version: u32,
    pub mode: DepthMode,
    /// Test RMSE of each repetition, in the original target units.
    pub rmse: Vec<f64>,
    pub rmse_mean: f64,
    pub rmse_sd: f64,
    pub posterior_mean_depth: Vec<f64>,
    pub posterior_mean_depth_mean: f64,
    pub best_epochs: Vec<usize>,
}

pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub struct RegressionRun {
    pub summary: RegressionSummary,
    /// One training log per repetition.
    pub records: Vec<RunRecord>,
}

/// Repeats train/select/test over independent random splits of `data`.
pub fn run_regression(data: &Dataset, exp: &RegressionExperiment) -> Result<RegressionRun> {
    if exp.repetitions == 0 {
        return Err(UdnError::Config("at least one repetition is needed".into()));
    }
    let n = data.len();
    let n_train = (exp.fractions[0] * n as f64).round() as usize;
    let n_valid = (exp.fractions[1] * n as f64).round() as usize;
    let n_test = n.saturating_sub(n_train + n_valid).min((exp.fractions[2] * n as f64).round() as usize);
    if n_train == 0 || n_valid == 0 || n_test == 0 {
        return Err(UdnError::Config(format!("{n} rows are too few for the requested split")));
    }
    let gen = DenseGenerator {
        input_dim: data.dim(),
        width: exp.width,
        target: TargetKind::Gaussian { sigma: exp.sigma },
    };
    let mut rmse = Vec::with_capacity(exp.repetitions);
    let mut depths = Vec::with_capacity(exp.repetitions);
    let mut best_epochs = Vec::with_capacity(exp.repetitions);
    let mut records = Vec::with_capacity(exp.repetitions);
    for rep in 0..exp.repetitions {
        let mut parts = split(data, (n_train, n_valid, n_test), derive_seed(exp.train.seed, 100 + rep as u64))?;
        let scale = if exp.standardize {
            standardize_splits(&mut parts, true).target.map_or(1.0, |t| t.sd[0])
        } else {
            1.0
        };
        let config = TrainConfig {
            seed: derive_seed(exp.train.seed, 200 + rep as u64),
            ..exp.train.clone()
        };
        let outcome = train(
            &config,
            &gen,
            TrainData {
                train: &parts.train,
                valid: Some(&parts.valid),
            },
        )?;
        let best = outcome
            .best
            .ok_or_else(|| UdnError::Contract("training produced no validation checkpoint".into()))?;
        let test = evaluate(&best.state, &parts.test)?;
        rmse.push(test.rmse.expect("regression metrics") * scale);
        depths.push(best.state.posterior_mean_depth()?);
        best_epochs.push(best.epoch);
        records.push(outcome.record);
    }
    let (rmse_mean, rmse_sd) = mean_sd(&rmse);
    let (depth_mean, _) = mean_sd(&depths);
    let summary = RegressionSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        mode: exp.train.mode,
        rmse,
        rmse_mean,
        rmse_sd,
        posterior_mean_depth: depths,
        posterior_mean_depth_mean: depth_mean,
        best_epochs,
    };
    Ok(RegressionRun { summary, records })
}

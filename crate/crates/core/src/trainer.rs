//! Dynamic variational inference.
//!
//! Every epoch recomputes the support `m(q(λ))`, instantiates any missing
//! layers, then takes minibatch gradient steps on λ and the active layer
//! means. The support is held fixed inside an epoch.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Optimizer, Var};
use crate::datasets::{derive_seed, Dataset, Targets};
use crate::error::{Result, UdnError};
use crate::model::{DepthMode, Elbo, ElboBreakdown, NetworkGenerator, PredictiveMixture, TargetKind, VariationalState};
use crate::poisson::DepthPrior;

/// Constant rate or one rate per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LearningRate {
    Constant(f64),
    Schedule(Vec<f64>),
}

impl LearningRate {
    /// Rate for the zero-based `epoch`.
    pub fn at(&self, epoch: usize) -> f64 {
        match self {
            LearningRate::Constant(lr) => *lr,
            LearningRate::Schedule(rates) => rates[epoch.min(rates.len() - 1)],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: LearningRate,
    /// λ is updated with `lr * lambda_lr_factor`.
    pub lambda_lr_factor: f64,
    pub optimizer: Optimizer,
    /// Mean α of the shifted Poisson prior on the truncation.
    pub prior_alpha: f64,
    pub lambda_init: f64,
    pub delta: f64,
    pub seed: u64,
    pub task: Task,
    pub mode: DepthMode,
    /// Validation metrics are computed every this many epochs and at the
    /// last epoch.
    pub validation_every: usize,
    /// Training aborts if `m(q)` would exceed this many layers.
    pub max_layers: usize,
    /// Training aborts if λ grows beyond this value.
    pub lambda_guard: f64,
}

impl TrainConfig {
    /// Spiral settings: Adam at 0.005, λ at a tenth of that, prior
    /// `ℓ - 1 ~ Poisson(0.5)`, `λ₀ = 1`, 4000 epochs, batches of 256.
    pub fn spiral_defaults() -> Self {
        TrainConfig {
            epochs: 4000,
            batch_size: 256,
            lr: LearningRate::Constant(0.005),
            lambda_lr_factor: 0.1,
            optimizer: Optimizer::adam(),
            prior_alpha: 0.5,
            lambda_init: 1.0,
            delta: 0.95,
            seed: 0,
            task: Task::Classification,
            mode: DepthMode::Variational,
            validation_every: 10,
            max_layers: 256,
            lambda_guard: 1e4,
        }
    }

    /// Image-classification settings: SGD with momentum 0.9 and weight decay
    /// 1e-4 on a 500-epoch step schedule, λ at the same rate, prior
    /// `ℓ - 1 ~ Poisson(1)`, `λ₀ = 5`.
    pub fn image_defaults() -> Self {
        let mut schedule = vec![0.01; 5];
        schedule.extend(std::iter::repeat_n(0.1, 195));
        schedule.extend(std::iter::repeat_n(0.01, 100));
        // The listed schedule covers 400 epochs; the last rate is held to 500.
        schedule.extend(std::iter::repeat_n(0.001, 200));
        TrainConfig {
            epochs: 500,
            lr: LearningRate::Schedule(schedule),
            lambda_lr_factor: 1.0,
            optimizer: Optimizer::sgd_momentum(),
            prior_alpha: 1.0,
            lambda_init: 5.0,
            ..Self::spiral_defaults()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(UdnError::Config(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        match &self.lr {
            LearningRate::Constant(lr) if !(*lr > 0.0) => return bad(format!("learning rate must be positive, got {lr}")),
            LearningRate::Schedule(rates) if rates.len() != self.epochs => {
                return bad(format!("schedule has {} rates for {} epochs", rates.len(), self.epochs))
            }
            LearningRate::Schedule(rates) if rates.iter().any(|r| !(*r > 0.0)) => {
                return bad("every scheduled learning rate must be positive".into())
            }
            _ => {}
        }
        if !(self.lambda_lr_factor > 0.0) {
            return bad(format!("lambda_lr_factor must be positive, got {}", self.lambda_lr_factor));
        }
        if !(self.prior_alpha > 0.0) {
            return bad(format!("prior_alpha must be positive, got {}", self.prior_alpha));
        }
        if !(self.lambda_init > 0.0) {
            return bad(format!("lambda_init must be positive, got {}", self.lambda_init));
        }
        if !(0.5..1.0).contains(&self.delta) {
            return bad(format!("delta must lie in [0.5, 1), got {}", self.delta));
        }
        if self.validation_every == 0 {
            return bad("validation_every must be at least 1".into());
        }
        if let DepthMode::Fixed(0) = self.mode {
            return bad("fixed depth must be at least 1".into());
        }
        Ok(())
    }
}

/// Held-out performance of the predictive ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub rmse: Option<f64>,
    /// Mean log predictive density of the targets.
    pub mean_loglik: f64,
}

impl Metrics {
    /// Larger is better: accuracy, or negated RMSE.
    pub fn score(&self) -> f64 {
        match (self.accuracy, self.rmse) {
            (Some(acc), _) => acc,
            (None, Some(rmse)) => -rmse,
            (None, None) => self.mean_loglik,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochEntry {
    pub epoch: usize,
    /// λ after the epoch's updates.
    pub lambda: f64,
    /// `m(q(λ))` computed at the start of the epoch.
    pub m_q: usize,
    pub created_count: usize,
    /// `q(ℓ)` over `1..=m_q` after the epoch's updates (support frozen).
    pub q_pmf: Vec<f64>,
    /// Mean of the minibatch objectives.
    pub objective: f64,
    /// Minibatch-averaged ELBO terms (variational mode only).
    pub elbo: Option<ElboBreakdown>,
    pub train_metrics: Option<Metrics>,
    pub valid_metrics: Option<Metrics>,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// `m(q(λ₀))` before the first epoch.
    pub initial_m_q: usize,
    pub entries: Vec<EpochEntry>,
}

impl RunRecord {
    /// Copy with wall-clock times zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> RunRecord {
        let mut r = self.clone();
        r.entries.iter_mut().for_each(|e| e.wall_clock_s = 0.0);
        r
    }

    /// One JSON object per line.
    pub fn to_ndjson(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Model state saved at a validation epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub metrics: Metrics,
    pub state: VariationalState,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: VariationalState,
    pub record: RunRecord,
    /// Best validation checkpoint; `None` without validation data.
    pub best: Option<Checkpoint>,
}

/// The checkpoint with the best validation score; ties go to the earliest.
pub fn best_epoch_selection(checkpoints: &[Checkpoint]) -> Result<&Checkpoint> {
    let mut best: Option<&Checkpoint> = None;
    for cp in checkpoints {
        let better = match best {
            None => true,
            Some(b) => cp.metrics.score() > b.metrics.score() || (cp.metrics.score() == b.metrics.score() && cp.epoch < b.epoch),
        };
        if better {
            best = Some(cp);
        }
    }
    best.ok_or_else(|| UdnError::Contract("no checkpoints to select from".into()))
}

/// Metrics of the predictive ensemble on `data`.
pub fn evaluate(state: &VariationalState, data: &Dataset) -> Result<Metrics> {
    if data.is_empty() {
        return Err(UdnError::Contract("cannot evaluate on an empty split".into()));
    }
    let mixture = state.predictive_mixture(data.features())?;
    metrics_from_mixture(&mixture, data.targets())
}

fn metrics_from_mixture(mixture: &PredictiveMixture, targets: &Targets) -> Result<Metrics> {
    let n = targets.len();
    match (mixture.target, targets) {
        (TargetKind::Categorical { .. }, Targets::Classes(labels)) => {
            let crate::model::Prediction::Probabilities(p) = mixture.combine() else { unreachable!() };
            let mut correct = 0usize;
            let mut ll = 0.0;
            for (i, &y) in labels.iter().enumerate() {
                let row = p.row_slice(i);
                let argmax = row
                    .iter()
                    .enumerate()
                    .fold(0, |best, (j, &v)| if v > row[best] { j } else { best });
                correct += usize::from(argmax == y);
                ll += row[y].ln();
            }
            Ok(Metrics {
                accuracy: Some(correct as f64 / n as f64),
                rmse: None,
                mean_loglik: ll / n as f64,
            })
        }
        (TargetKind::Gaussian { sigma }, Targets::Values(values)) => {
            let crate::model::Prediction::Means(mean) = mixture.combine() else { unreachable!() };
            let sse: f64 = values.iter().zip(mean.data()).map(|(y, m)| (y - m) * (y - m)).sum();
            let log_norm = -0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
            let mut ll = 0.0;
            for (i, &y) in values.iter().enumerate() {
                let terms: Vec<f64> = mixture
                    .weights
                    .iter()
                    .zip(&mixture.components)
                    .map(|(w, c)| {
                        let r = y - c.data()[i];
                        w.ln() + log_norm - r * r / (2.0 * sigma * sigma)
                    })
                    .collect();
                ll += crate::autodiff::log_sum_exp(&terms);
            }
            Ok(Metrics {
                accuracy: None,
                rmse: Some((sse / n as f64).sqrt()),
                mean_loglik: ll / n as f64,
            })
        }
        _ => Err(UdnError::Config("target type does not match the output head".into())),
    }
}

/// Training and optional validation data.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub train: &'a Dataset,
    pub valid: Option<&'a Dataset>,
}

fn first_bad_term(g: &Graph, elbo: Option<&Elbo>) -> String {
    if let Some(e) = elbo {
        if !g.scalar(e.depth_kl).is_finite() {
            return "depth_kl".into();
        }
        for (k, &v) in e.layer_kl.iter().enumerate() {
            if !g.scalar(v).is_finite() {
                return format!("weight_kl[{}]", k + 1);
            }
        }
        for (&d, &v) in e.depths.iter().zip(&e.loglik) {
            if !g.scalar(v).is_finite() {
                return format!("loglik[{d}]");
            }
        }
    }
    "objective".into()
}

fn grow_checked(state: &mut VariationalState, gen: &dyn NetworkGenerator, config: &TrainConfig, epoch: usize) -> Result<usize> {
    let lambda = state.lambda();
    if !lambda.is_finite() {
        return Err(UdnError::NonFinite {
            epoch,
            term: "lambda".into(),
        });
    }
    if lambda > config.lambda_guard {
        return Err(UdnError::Divergence {
            epoch,
            lambda,
            guard: config.lambda_guard,
        });
    }
    let m = state.required_depth()?;
    if m > config.max_layers {
        return Err(UdnError::Config(format!(
            "epoch {epoch}: support needs {m} layers, above the limit of {}",
            config.max_layers
        )));
    }
    state.grow_to(gen, m)?;
    Ok(m)
}

/// Runs dynamic variational inference (or fixed-depth training in
/// [`DepthMode::Fixed`]) and returns the final state with its log.
pub fn train(config: &TrainConfig, gen: &dyn NetworkGenerator, data: TrainData<'_>) -> Result<TrainOutcome> {
    config.validate()?;
    let state = VariationalState::new(config.lambda_init, config.delta, config.mode, derive_seed(config.seed, 1))?;
    train_from(config, gen, data, state)
}

/// Continues training from `state`. Its λ, mode and existing layers are
/// kept; `lambda_init`, `delta` and `mode` in `config` are ignored.
pub fn train_from(config: &TrainConfig, gen: &dyn NetworkGenerator, data: TrainData<'_>, mut state: VariationalState) -> Result<TrainOutcome> {
    let config = &TrainConfig {
        mode: state.mode(),
        ..config.clone()
    };
    config.validate()?;
    if data.train.is_empty() {
        return Err(UdnError::Contract("training data is empty".into()));
    }
    if gen.input_dim() != data.train.dim() {
        return Err(UdnError::Config(format!(
            "generator expects {} inputs, data has {}",
            gen.input_dim(),
            data.train.dim()
        )));
    }
    let task_matches = matches!(
        (config.task, gen.output(1).target, data.train.targets()),
        (Task::Classification, TargetKind::Categorical { .. }, Targets::Classes(_))
            | (Task::Regression, TargetKind::Gaussian { .. }, Targets::Values(_))
    );
    if !task_matches {
        return Err(UdnError::Config("task, output head and targets disagree".into()));
    }

    let prior = DepthPrior::new(config.prior_alpha)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2));
    let n_total = data.train.len();
    let mut order: Vec<usize> = (0..n_total).collect();
    let mut record = RunRecord {
        initial_m_q: grow_checked(&mut state, gen, config, 0)?,
        entries: Vec::with_capacity(config.epochs),
    };
    let mut best: Option<Checkpoint> = None;
    let started = Instant::now();

    for epoch in 1..=config.epochs {
        let lr = config.lr.at(epoch - 1);
        let m = grow_checked(&mut state, gen, config, epoch)?;
        let created_count = state.created_count();
        let active = state.layer_params(m);
        let lambda_id = state.log_lambda_id();

        order.shuffle(&mut shuffle_rng);
        let mut objective_sum = 0.0;
        let mut breakdown_sum: Option<ElboBreakdown> = None;
        let batches = order.chunks(config.batch_size);
        let n_batches = batches.len();
        for batch in batches {
            let x = data.train.features().select_rows(batch);
            let y = data.train.targets().select(batch);
            let mut g = Graph::new();
            let (total, elbo): (Var, Option<Elbo>) = match config.mode {
                DepthMode::Variational => {
                    let e = state.elbo_frozen(&mut g, &x, &y, n_total, &prior, m - 1)?;
                    (e.total, Some(e))
                }
                DepthMode::Fixed(depth) => (state.finite_baseline_elbo(&mut g, &x, &y, n_total, depth)?, None),
            };
            if g.first_non_finite().is_some() {
                return Err(UdnError::NonFinite {
                    epoch,
                    term: first_bad_term(&g, elbo.as_ref()),
                });
            }
            objective_sum += g.scalar(total);
            if let Some(e) = &elbo {
                accumulate_breakdown(&mut breakdown_sum, e.breakdown(&g));
            }
            let loss = g.neg(total);
            let store = state.store_mut();
            store.zero_grad();
            g.backward(loss, store)?;
            store.step(&active, &config.optimizer, lr)?;
            if config.mode == DepthMode::Variational {
                store.step(&[lambda_id], &config.optimizer, lr * config.lambda_lr_factor)?;
            }
            let lambda = state.lambda();
            if !lambda.is_finite() {
                return Err(UdnError::NonFinite {
                    epoch,
                    term: "lambda".into(),
                });
            }
            if lambda > config.lambda_guard {
                return Err(UdnError::Divergence {
                    epoch,
                    lambda,
                    guard: config.lambda_guard,
                });
            }
        }

        let q_pmf = match config.mode {
            DepthMode::Variational => {
                let dist = state.depth_distribution()?;
                (1..=m).map(|ell| dist.log_pmf_with_quantile(ell, m - 1).map(f64::exp)).collect::<Result<Vec<_>>>()?
            }
            DepthMode::Fixed(_) => Vec::new(),
        };
        let mut entry = EpochEntry {
            epoch,
            lambda: state.lambda(),
            m_q: m,
            created_count,
            q_pmf,
            objective: objective_sum / n_batches as f64,
            elbo: breakdown_sum.map(|b| scale_breakdown(b, 1.0 / n_batches as f64)),
            train_metrics: None,
            valid_metrics: None,
            wall_clock_s: 0.0,
        };

        let validate_now = epoch % config.validation_every == 0 || epoch == config.epochs;
        if validate_now {
            // The predictive needs every layer in the current support.
            grow_checked(&mut state, gen, config, epoch)?;
            entry.train_metrics = Some(evaluate(&state, data.train)?);
            if let Some(valid) = data.valid {
                let metrics = evaluate(&state, valid)?;
                entry.valid_metrics = Some(metrics);
                let improved = best.as_ref().is_none_or(|b| metrics.score() > b.metrics.score());
                if improved {
                    best = Some(Checkpoint {
                        epoch,
                        metrics,
                        state: state.clone(),
                    });
                }
            }
        }
        entry.wall_clock_s = started.elapsed().as_secs_f64();
        record.entries.push(entry);
    }

    Ok(TrainOutcome { state, record, best })
}

fn accumulate_breakdown(sum: &mut Option<ElboBreakdown>, b: ElboBreakdown) {
    match sum {
        None => *sum = Some(b),
        Some(s) => {
            s.depth_kl += b.depth_kl;
            s.total += b.total;
            for (a, v) in s.q.iter_mut().zip(&b.q) {
                *a += v;
            }
            for (a, v) in s.weight_kl_per_layer.iter_mut().zip(&b.weight_kl_per_layer) {
                *a += v;
            }
            for (a, v) in s.loglik_per_depth.iter_mut().zip(&b.loglik_per_depth) {
                *a += v;
            }
        }
    }
}

fn scale_breakdown(mut b: ElboBreakdown, k: f64) -> ElboBreakdown {
    b.depth_kl *= k;
    b.total *= k;
    b.q.iter_mut().for_each(|v| *v *= k);
    b.weight_kl_per_layer.iter_mut().for_each(|v| *v *= k);
    b.loglik_per_depth.iter_mut().for_each(|v| *v *= k);
    b
}

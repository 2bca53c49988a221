//! The unbounded-depth network and its variational state.
//!
//! Hidden layer `f_ℓ` and output head `o_ℓ` come from a [`NetworkGenerator`].
//! Layers are instantiated lazily by [`VariationalState::grow_to`] and never
//! destroyed. Weights carry a standard Gaussian prior and a unit-variance
//! Gaussian posterior centred at the stored means, so the per-layer KL term
//! is `-½‖ν_k‖²` exactly. The likelihood is evaluated at the means.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{categorical_loglik, forward_dense, gaussian_loglik, Activation, Graph, ParamId, ParamStore, Tensor, Var};
use crate::datasets::Targets;
use crate::error::{Result, UdnError};
use crate::poisson::{DepthPrior, TruncatedPoissonDist};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetKind {
    Categorical { num_classes: usize },
    Gaussian { sigma: f64 },
}

impl TargetKind {
    pub fn output_dim(&self) -> usize {
        match *self {
            TargetKind::Categorical { num_classes } => num_classes,
            TargetKind::Gaussian { .. } => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
}

/// Hidden layer `f_ℓ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub depth_index: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub kind: LayerKind,
}

/// Output head `o_ℓ`, applied to the hidden state at the same depth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub depth_index: usize,
    pub in_dim: usize,
    pub target: TargetKind,
}

/// The pair `(f, o)`: hidden layer and output head for every depth `≥ 1`.
pub trait NetworkGenerator {
    fn input_dim(&self) -> usize;
    fn hidden(&self, depth: usize) -> LayerSpec;
    fn output(&self, depth: usize) -> OutputSpec;
}

/// Fully connected ReLU layers of constant width with a linear head at
/// every depth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseGenerator {
    pub input_dim: usize,
    pub width: usize,
    pub target: TargetKind,
}

impl NetworkGenerator for DenseGenerator {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn hidden(&self, depth: usize) -> LayerSpec {
        LayerSpec {
            depth_index: depth,
            in_dim: if depth == 1 { self.input_dim } else { self.width },
            out_dim: self.width,
            activation: Activation::Relu,
            kind: LayerKind::Dense,
        }
    }

    fn output(&self, depth: usize) -> OutputSpec {
        OutputSpec {
            depth_index: depth,
            in_dim: self.width,
            target: self.target,
        }
    }
}

/// How the truncation is treated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthMode {
    /// Truncation inferred through `q(ℓ; λ)`.
    Variational,
    /// Classical network of fixed depth (point-mass prior).
    Fixed(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Layer {
    spec: LayerSpec,
    head: OutputSpec,
    weight: ParamId,
    bias: ParamId,
    head_weight: ParamId,
    head_bias: ParamId,
}

impl Layer {
    fn params(&self) -> [ParamId; 4] {
        [self.weight, self.bias, self.head_weight, self.head_bias]
    }

    fn fingerprint(&self) -> String {
        let target = match self.head.target {
            TargetKind::Categorical { num_classes } => format!("categorical({num_classes})"),
            TargetKind::Gaussian { sigma } => format!("gaussian({sigma})"),
        };
        format!(
            "{}:{:?}:{}->{}:{:?}|head:{}->{}",
            self.spec.depth_index,
            self.spec.kind,
            self.spec.in_dim,
            self.spec.out_dim,
            self.spec.activation,
            self.head.in_dim,
            target
        )
    }
}

/// Per-depth network outputs from one shared sweep.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// `Ω_ℓ(x)` for `ℓ = 1..=max_depth`.
    pub outputs: Vec<Var>,
    /// Number of hidden layers evaluated.
    pub hidden_evals: usize,
}

/// Graph nodes of one ELBO evaluation.
#[derive(Clone, Debug)]
pub struct Elbo {
    pub total: Var,
    pub depth_kl: Var,
    /// `-½‖ν_k‖²` for `k = 1..=max depth`.
    pub layer_kl: Vec<Var>,
    /// Depths with positive mass, ascending.
    pub depths: Vec<usize>,
    pub log_q: Vec<Var>,
    /// Scaled batch log-likelihood at each depth in `depths`.
    pub loglik: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub depths: Vec<usize>,
    pub q: Vec<f64>,
    /// `E_q[log p(ℓ) - log q(ℓ)]`.
    pub depth_kl: f64,
    pub weight_kl_per_layer: Vec<f64>,
    pub loglik_per_depth: Vec<f64>,
    pub total: f64,
}

impl ElboBreakdown {
    /// The total rebuilt from its parts.
    pub fn recombine(&self) -> f64 {
        let mut cumulative = Vec::with_capacity(self.weight_kl_per_layer.len());
        let mut acc = 0.0;
        for kl in &self.weight_kl_per_layer {
            acc += kl;
            cumulative.push(acc);
        }
        let expected: f64 = self
            .depths
            .iter()
            .zip(&self.q)
            .zip(&self.loglik_per_depth)
            .map(|((&d, &q), &ll)| q * (cumulative[d - 1] + ll))
            .sum();
        self.depth_kl + expected
    }
}

impl Elbo {
    pub fn breakdown(&self, g: &Graph) -> ElboBreakdown {
        ElboBreakdown {
            depths: self.depths.clone(),
            q: self.log_q.iter().map(|&v| g.scalar(v).exp()).collect(),
            depth_kl: g.scalar(self.depth_kl),
            weight_kl_per_layer: self.layer_kl.iter().map(|&v| g.scalar(v)).collect(),
            loglik_per_depth: self.loglik.iter().map(|&v| g.scalar(v)).collect(),
            total: g.scalar(self.total),
        }
    }
}

/// Posterior-predictive output.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    /// `[n, classes]`, each row a distribution.
    Probabilities(Tensor),
    /// `[n, 1]` predictive means.
    Means(Tensor),
}

/// The per-depth pieces of the predictive ensemble.
#[derive(Clone, Debug)]
pub struct PredictiveMixture {
    pub depths: Vec<usize>,
    pub weights: Vec<f64>,
    /// Class probabilities or Gaussian means at each depth.
    pub components: Vec<Tensor>,
    pub target: TargetKind,
}

impl PredictiveMixture {
    pub fn combine(&self) -> Prediction {
        let [n, c] = self.components[0].shape();
        let mut acc = Tensor::zeros(n, c);
        for (w, comp) in self.weights.iter().zip(&self.components) {
            for (a, v) in acc.data_mut().iter_mut().zip(comp.data()) {
                *a += w * v;
            }
        }
        match self.target {
            TargetKind::Categorical { .. } => Prediction::Probabilities(acc),
            TargetKind::Gaussian { .. } => Prediction::Means(acc),
        }
    }
}

/// λ, the growable list of per-layer means and their optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    store: ParamStore,
    log_lambda: ParamId,
    delta: f64,
    layers: Vec<Layer>,
    mode: DepthMode,
    seed: u64,
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    log_lambda: f64,
    delta: f64,
    created_count: usize,
    fingerprints: Vec<String>,
    state: VariationalState,
}

impl VariationalState {
    pub fn new(lambda_init: f64, delta: f64, mode: DepthMode, seed: u64) -> Result<Self> {
        TruncatedPoissonDist::over_depths(lambda_init, delta)?;
        if let DepthMode::Fixed(0) = mode {
            return Err(UdnError::Config("fixed depth must be at least 1".into()));
        }
        let mut store = ParamStore::new();
        let log_lambda = store.add("log_lambda", Tensor::scalar(lambda_init.ln()));
        Ok(VariationalState {
            store,
            log_lambda,
            delta,
            layers: Vec::new(),
            mode,
            seed,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn mode(&self) -> DepthMode {
        self.mode
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn created_count(&self) -> usize {
        self.layers.len()
    }

    pub fn log_lambda_id(&self) -> ParamId {
        self.log_lambda
    }

    pub fn lambda(&self) -> f64 {
        self.store.value(self.log_lambda).item().exp()
    }

    /// `q(ℓ; λ)` at the current λ.
    pub fn depth_distribution(&self) -> Result<TruncatedPoissonDist> {
        TruncatedPoissonDist::over_depths(self.lambda(), self.delta)
    }

    /// Number of layers the objective needs: `m(q)` or the fixed depth.
    pub fn required_depth(&self) -> Result<usize> {
        match self.mode {
            DepthMode::Variational => Ok(self.depth_distribution()?.support_max()),
            DepthMode::Fixed(depth) => Ok(depth),
        }
    }

    /// `E_q[ℓ]`, or the fixed depth.
    pub fn posterior_mean_depth(&self) -> Result<f64> {
        match self.mode {
            DepthMode::Variational => Ok(self.depth_distribution()?.mean()),
            DepthMode::Fixed(depth) => Ok(depth as f64),
        }
    }

    /// Parameters of the layers and heads at depths `1..=depth`.
    pub fn layer_params(&self, depth: usize) -> Vec<ParamId> {
        self.layers[..depth.min(self.layers.len())]
            .iter()
            .flat_map(|l| l.params())
            .collect()
    }

    /// Instantiates layers `created_count + 1 ..= target_depth`. Existing
    /// layers are left as they are; a target at or below the current count
    /// does nothing.
    pub fn grow_to(&mut self, gen: &dyn NetworkGenerator, target_depth: usize) -> Result<()> {
        while self.layers.len() < target_depth {
            let depth = self.layers.len() + 1;
            let spec = gen.hidden(depth);
            let head = gen.output(depth);
            let expected_in = match self.layers.last() {
                Some(prev) => prev.spec.out_dim,
                None => gen.input_dim(),
            };
            if spec.depth_index != depth || head.depth_index != depth {
                return Err(UdnError::Config(format!("generator returned a spec for the wrong depth at {depth}")));
            }
            if spec.in_dim != expected_in {
                return Err(UdnError::Config(format!(
                    "layer {depth} expects {} inputs but receives {expected_in}",
                    spec.in_dim
                )));
            }
            if head.in_dim != spec.out_dim {
                return Err(UdnError::Config(format!(
                    "head {depth} expects {} inputs but layer {depth} produces {}",
                    head.in_dim, spec.out_dim
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(depth as u64);
            let out_dim = head.target.output_dim();
            let weight = uniform_fan_in(&mut rng, spec.in_dim, spec.in_dim, spec.out_dim);
            let bias = uniform_fan_in(&mut rng, spec.in_dim, 1, spec.out_dim);
            let head_weight = uniform_fan_in(&mut rng, head.in_dim, head.in_dim, out_dim);
            let head_bias = uniform_fan_in(&mut rng, head.in_dim, 1, out_dim);
            let layer = Layer {
                spec,
                head,
                weight: self.store.add(format!("hidden{depth}.weight"), weight),
                bias: self.store.add(format!("hidden{depth}.bias"), bias),
                head_weight: self.store.add(format!("head{depth}.weight"), head_weight),
                head_bias: self.store.add(format!("head{depth}.bias"), head_bias),
            };
            self.layers.push(layer);
        }
        Ok(())
    }

    fn check_depth(&self, depth: usize) -> Result<()> {
        if depth == 0 || depth > self.layers.len() {
            return Err(UdnError::Contract(format!(
                "depth {depth} requested but {} layers exist",
                self.layers.len()
            )));
        }
        Ok(())
    }

    fn hidden_step(&self, g: &mut Graph, h: Var, layer: &Layer) -> Result<Var> {
        let w = g.param(&self.store, layer.weight);
        let b = g.param(&self.store, layer.bias);
        forward_dense(g, h, w, b, layer.spec.activation)
    }

    fn head(&self, g: &mut Graph, h: Var, layer: &Layer) -> Result<Var> {
        let w = g.param(&self.store, layer.head_weight);
        let b = g.param(&self.store, layer.head_bias);
        forward_dense(g, h, w, b, Activation::Identity)
    }

    /// Computes `h_1..h_max` once and applies every head, giving
    /// `Ω_1(x)..Ω_max(x)` for the cost of the deepest network.
    pub fn forward_all(&self, g: &mut Graph, x: Var, max_depth: usize) -> Result<ForwardPass> {
        self.check_depth(max_depth)?;
        let mut hidden = Vec::with_capacity(max_depth);
        let mut h = x;
        for layer in &self.layers[..max_depth] {
            h = self.hidden_step(g, h, layer)?;
            hidden.push(h);
        }
        let outputs = self.layers[..max_depth]
            .iter()
            .zip(&hidden)
            .map(|(layer, &h)| self.head(g, h, layer))
            .collect::<Result<Vec<_>>>()?;
        Ok(ForwardPass {
            outputs,
            hidden_evals: hidden.len(),
        })
    }

    /// `Ω_depth(x)` alone.
    pub fn forward_depth(&self, g: &mut Graph, x: Var, depth: usize) -> Result<Var> {
        self.check_depth(depth)?;
        let mut h = x;
        for layer in &self.layers[..depth] {
            h = self.hidden_step(g, h, layer)?;
        }
        self.head(g, h, &self.layers[depth - 1])
    }

    /// `-½‖ν_k‖²` for layer `k`, covering its hidden layer and head.
    pub fn layer_kl(&self, g: &mut Graph, k: usize) -> Result<Var> {
        self.check_depth(k)?;
        let mut parts = Vec::with_capacity(4);
        for id in self.layers[k - 1].params() {
            let p = g.param(&self.store, id);
            parts.push(g.sum_squares(p));
        }
        let total = g.add_all(&parts)?;
        Ok(g.scale(total, -0.5))
    }

    /// `Σ_{k ≤ ell} E_q[log p(θ_k) - log q(θ_k; ν_k)] = Σ_{k ≤ ell} -½‖ν_k‖²`.
    pub fn weight_kl(&self, g: &mut Graph, ell: usize) -> Result<Var> {
        let parts = (1..=ell).map(|k| self.layer_kl(g, k)).collect::<Result<Vec<_>>>()?;
        g.add_all(&parts)
    }

    fn loglik(&self, g: &mut Graph, output: Var, depth: usize, y: &Targets) -> Result<Var> {
        match (self.layers[depth - 1].head.target, y) {
            (TargetKind::Categorical { .. }, Targets::Classes(labels)) => categorical_loglik(g, output, labels),
            (TargetKind::Gaussian { sigma }, Targets::Values(values)) => {
                gaussian_loglik(g, output, &Tensor::column(values.clone()), sigma)
            }
            _ => Err(UdnError::Config("target type does not match the output head".into())),
        }
    }

    /// The ELBO with the support of `q` computed from the current λ.
    pub fn elbo(&self, g: &mut Graph, x: &Tensor, y: &Targets, n_total: usize, prior: &DepthPrior) -> Result<Elbo> {
        let quantile = self.depth_distribution()?.quantile();
        self.elbo_frozen(g, x, y, n_total, prior, quantile)
    }

    /// The ELBO with the truncation point of `q` fixed at `quantile`. λ is
    /// differentiated with that support held constant.
    pub fn elbo_frozen(
        &self,
        g: &mut Graph,
        x: &Tensor,
        y: &Targets,
        n_total: usize,
        prior: &DepthPrior,
        quantile: usize,
    ) -> Result<Elbo> {
        let dist = self.depth_distribution()?;
        let log_lambda = g.param(&self.store, self.log_lambda);
        let log_q = dist.log_pmf_nodes(g, log_lambda, quantile)?;
        let depths: Vec<usize> = (1..=quantile + 1).collect();
        self.elbo_with_weights(g, x, y, n_total, prior, depths, log_q)
    }

    /// The ELBO under a point mass `q(ℓ) = 1[ℓ = depth]`.
    pub fn elbo_point_mass(
        &self,
        g: &mut Graph,
        x: &Tensor,
        y: &Targets,
        n_total: usize,
        prior: &DepthPrior,
        depth: usize,
    ) -> Result<Elbo> {
        let zero = g.constant_scalar(0.0);
        self.elbo_with_weights(g, x, y, n_total, prior, vec![depth], vec![zero])
    }

    #[allow(clippy::too_many_arguments)]
    fn elbo_with_weights(
        &self,
        g: &mut Graph,
        x: &Tensor,
        y: &Targets,
        n_total: usize,
        prior: &DepthPrior,
        depths: Vec<usize>,
        log_q: Vec<Var>,
    ) -> Result<Elbo> {
        let batch = x.rows();
        if batch == 0 || y.len() != batch {
            return Err(UdnError::Contract(format!("batch of {batch} rows with {} targets", y.len())));
        }
        let max_depth = *depths.last().expect("non-empty support");
        self.check_depth(max_depth)?;
        let scale = n_total as f64 / batch as f64;

        let xv = g.constant(x.clone());
        let pass = self.forward_all(g, xv, max_depth)?;

        let layer_kl = (1..=max_depth).map(|k| self.layer_kl(g, k)).collect::<Result<Vec<_>>>()?;
        let mut cumulative = Vec::with_capacity(max_depth);
        let mut acc: Option<Var> = None;
        for &kl in &layer_kl {
            let next = match acc {
                Some(a) => g.add(a, kl)?,
                None => kl,
            };
            cumulative.push(next);
            acc = Some(next);
        }

        let mut depth_terms = Vec::with_capacity(depths.len());
        let mut data_terms = Vec::with_capacity(depths.len());
        let mut loglik = Vec::with_capacity(depths.len());
        for (&d, &lq) in depths.iter().zip(&log_q) {
            let q = g.exp(lq);
            let neg_lq = g.neg(lq);
            let ratio = g.offset(neg_lq, prior.log_pmf(d));
            depth_terms.push(g.mul(q, ratio)?);

            let raw = self.loglik(g, pass.outputs[d - 1], d, y)?;
            let ll = g.scale(raw, scale);
            loglik.push(ll);
            let inner = g.add(cumulative[d - 1], ll)?;
            data_terms.push(g.mul(q, inner)?);
        }
        let depth_kl = g.add_all(&depth_terms)?;
        let data = g.add_all(&data_terms)?;
        let total = g.add(depth_kl, data)?;
        Ok(Elbo {
            total,
            depth_kl,
            layer_kl,
            depths,
            log_q,
            loglik,
        })
    }

    /// Scaled log-likelihood of `Ω_depth` plus the weight KL of its layers:
    /// the objective of a classical network of that depth.
    pub fn finite_baseline_elbo(&self, g: &mut Graph, x: &Tensor, y: &Targets, n_total: usize, depth: usize) -> Result<Var> {
        let batch = x.rows();
        if batch == 0 || y.len() != batch {
            return Err(UdnError::Contract(format!("batch of {batch} rows with {} targets", y.len())));
        }
        let xv = g.constant(x.clone());
        let out = self.forward_depth(g, xv, depth)?;
        let raw = self.loglik(g, out, depth, y)?;
        let ll = g.scale(raw, n_total as f64 / batch as f64);
        let kl = self.weight_kl(g, depth)?;
        g.add(ll, kl)
    }

    /// Per-depth predictions and their weights under the current mode.
    pub fn predictive_mixture(&self, x: &Tensor) -> Result<PredictiveMixture> {
        let (depths, weights) = match self.mode {
            DepthMode::Variational => {
                let dist = self.depth_distribution()?;
                (dist.support().collect::<Vec<_>>(), dist.pmf_vector())
            }
            DepthMode::Fixed(depth) => (vec![depth], vec![1.0]),
        };
        let max_depth = *depths.last().expect("non-empty");
        self.check_depth(max_depth)?;
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let outputs: Vec<Var> = match self.mode {
            DepthMode::Variational => self.forward_all(&mut g, xv, max_depth)?.outputs,
            DepthMode::Fixed(depth) => vec![self.forward_depth(&mut g, xv, depth)?],
        };
        let target = self.layers[max_depth - 1].head.target;
        let components = outputs
            .iter()
            .map(|&o| match target {
                TargetKind::Categorical { .. } => softmax_rows(g.value(o)),
                TargetKind::Gaussian { .. } => g.value(o).clone(),
            })
            .collect();
        Ok(PredictiveMixture {
            depths,
            weights,
            components,
            target,
        })
    }

    /// `Σ_ℓ q(ℓ; λ) p(y | Ω_ℓ(x; ν))`: class probabilities, or the mixture
    /// mean for regression.
    pub fn predict(&self, x: &Tensor) -> Result<Prediction> {
        Ok(self.predictive_mixture(x)?.combine())
    }

    pub fn fingerprints(&self) -> Vec<String> {
        self.layers.iter().map(Layer::fingerprint).collect()
    }

    pub fn to_checkpoint_json(&self) -> Result<String> {
        let cp = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            log_lambda: self.store.value(self.log_lambda).item(),
            delta: self.delta,
            created_count: self.created_count(),
            fingerprints: self.fingerprints(),
            state: self.clone(),
        };
        Ok(serde_json::to_string(&cp)?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let cp: Checkpoint = serde_json::from_str(text)?;
        if cp.format_version != CHECKPOINT_VERSION {
            return Err(UdnError::Config(format!("unsupported checkpoint version {}", cp.format_version)));
        }
        let state = cp.state;
        if cp.created_count != state.created_count()
            || cp.fingerprints != state.fingerprints()
            || cp.log_lambda != state.store.value(state.log_lambda).item()
            || cp.delta != state.delta
        {
            return Err(UdnError::Config("checkpoint header disagrees with its contents".into()));
        }
        for layer in &state.layers {
            let expect = [
                (layer.weight, [layer.spec.in_dim, layer.spec.out_dim]),
                (layer.bias, [1, layer.spec.out_dim]),
                (layer.head_weight, [layer.head.in_dim, layer.head.target.output_dim()]),
                (layer.head_bias, [1, layer.head.target.output_dim()]),
            ];
            for (id, shape) in expect {
                if id.index() >= state.store.len() || state.store.value(id).shape() != shape {
                    return Err(UdnError::Config(format!("checkpoint tensor {} has the wrong shape", id.index())));
                }
            }
        }
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_json()?).map_err(|e| UdnError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| UdnError::io(path, e))?;
        Self::from_checkpoint_json(&text)
    }
}

/// `[rows, cols]` matrix drawn from Uniform(-1/√fan_in, 1/√fan_in).
fn uniform_fan_in(rng: &mut ChaCha8Rng, fan_in: usize, rows: usize, cols: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(rows, cols, data).expect("sized")
}

pub(crate) fn softmax_rows(logits: &Tensor) -> Tensor {
    let cols = logits.cols();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - max).exp());
        let z: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= z);
    }
    out
}

#[cfg(test)]
mod tests;

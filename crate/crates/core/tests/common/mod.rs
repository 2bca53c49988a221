//! Oracles shared by the integration tests. Everything here works on plain
//! arrays read out of the parameter store and does not use the library's
//! shared forward pass.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use udn_core::{
    DenseGenerator, DepthMode, DepthPrior, Graph, ParamId, Targets, TargetKind, Tensor, TruncatedPoissonDist,
    VariationalState,
};

pub struct Instance {
    pub state: VariationalState,
    pub gen: DenseGenerator,
    pub x: Tensor,
    pub y: Targets,
    pub n_total: usize,
    pub prior: DepthPrior,
    /// Frozen truncation point; the support is `1..=quantile + 1`.
    pub quantile: usize,
}

impl Instance {
    pub fn m(&self) -> usize {
        self.quantile + 1
    }

    /// λ's raw parameter followed by every active layer parameter.
    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.state.log_lambda_id()];
        ids.extend(self.state.layer_params(self.m()));
        ids
    }

    pub fn elbo(&self) -> f64 {
        let mut g = Graph::new();
        let e = self
            .state
            .elbo_frozen(&mut g, &self.x, &self.y, self.n_total, &self.prior, self.quantile)
            .unwrap();
        g.scalar(e.total)
    }

    pub fn gradient(&mut self) -> Vec<f64> {
        let mut g = Graph::new();
        let e = self
            .state
            .elbo_frozen(&mut g, &self.x, &self.y, self.n_total, &self.prior, self.quantile)
            .unwrap();
        let store = self.state.store_mut();
        store.zero_grad();
        g.backward(e.total, store).unwrap();
        flat_grads(&self.state, &self.ids())
    }

    /// Central differences of [`Instance::elbo`] in every coordinate.
    pub fn finite_difference(&mut self, h: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for id in self.ids() {
            let len = self.state.store().value(id).len();
            for j in 0..len {
                let orig = self.state.store().value(id).data()[j];
                self.state.store_mut().value_mut(id).data_mut()[j] = orig + h;
                let up = self.elbo();
                self.state.store_mut().value_mut(id).data_mut()[j] = orig - h;
                let down = self.elbo();
                self.state.store_mut().value_mut(id).data_mut()[j] = orig;
                out.push((up - down) / (2.0 * h));
            }
        }
        out
    }
}

pub fn flat_grads(state: &VariationalState, ids: &[ParamId]) -> Vec<f64> {
    ids.iter().flat_map(|&id| state.store().grad(id).data().to_vec()).collect()
}

/// `max |a - b| / max |b|`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    num / den.max(1e-12)
}

fn lambda_for_support(rng: &mut ChaCha8Rng, m: usize) -> f64 {
    // 0.95-quantile is 0 below λ≈0.051, 1 below λ≈0.355, 2 below λ≈0.818.
    match m {
        1 => rng.random_range(0.005..0.05),
        2 => rng.random_range(0.06..0.35),
        _ => rng.random_range(0.36..0.81),
    }
}

/// A random network with at most three layers in the support, width at most
/// 8 and at most 32 observations.
pub fn random_instance(rng: &mut ChaCha8Rng, extra_layers: usize) -> Instance {
    let m = rng.random_range(1..=3);
    let lambda = lambda_for_support(rng, m);
    let input_dim = rng.random_range(1..=4);
    let width = rng.random_range(1..=8);
    let n = rng.random_range(1..=32);
    let classification = rng.random_bool(0.6);
    let target = if classification {
        TargetKind::Categorical {
            num_classes: rng.random_range(2..=4),
        }
    } else {
        TargetKind::Gaussian {
            sigma: rng.random_range(0.5..2.0),
        }
    };
    let gen = DenseGenerator {
        input_dim,
        width,
        target,
    };
    let mut state = VariationalState::new(lambda, 0.95, DepthMode::Variational, rng.random()).unwrap();
    let quantile = TruncatedPoissonDist::over_depths(lambda, 0.95).unwrap().quantile();
    assert_eq!(quantile + 1, m);
    state.grow_to(&gen, m + extra_layers).unwrap();
    // Spread the weights beyond the 1/√fan_in initialisation.
    for id in state.layer_params(m + extra_layers) {
        let scale = rng.random_range(0.5..2.0);
        for v in state.store_mut().value_mut(id).data_mut() {
            *v *= scale;
        }
    }
    let x = Tensor::new(n, input_dim, (0..n * input_dim).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let y = match target {
        TargetKind::Categorical { num_classes } => Targets::Classes((0..n).map(|_| rng.random_range(0..num_classes)).collect()),
        TargetKind::Gaussian { .. } => Targets::Values((0..n).map(|_| rng.random_range(-2.0..2.0)).collect()),
    };
    let n_total = n * rng.random_range(1..=4);
    Instance {
        state,
        gen,
        x,
        y,
        n_total,
        prior: DepthPrior::new(rng.random_range(0.2..2.0)).unwrap(),
        quantile,
    }
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

struct DenseLayer {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

fn read_layer(state: &VariationalState, w: ParamId, b: ParamId) -> DenseLayer {
    let wt = state.store().value(w);
    DenseLayer {
        w: (0..wt.rows()).map(|r| wt.row_slice(r).to_vec()).collect(),
        b: state.store().value(b).data().to_vec(),
    }
}

fn apply(layer: &DenseLayer, h: &[f64], relu: bool) -> Vec<f64> {
    let mut out = layer.b.clone();
    for (k, hk) in h.iter().enumerate() {
        for (o, wkj) in out.iter_mut().zip(&layer.w[k]) {
            *o += hk * wkj;
        }
    }
    if relu {
        out.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    out
}

/// `Ω_depth` for one input row, computed from scratch.
fn naive_output(state: &VariationalState, row: &[f64], depth: usize) -> Vec<f64> {
    let ids = state.layer_params(depth);
    let mut h = row.to_vec();
    for k in 0..depth {
        h = apply(&read_layer(state, ids[4 * k], ids[4 * k + 1]), &h, true);
    }
    apply(&read_layer(state, ids[4 * depth - 2], ids[4 * depth - 1]), &h, false)
}

fn naive_loglik(target: TargetKind, out: &[f64], y: &Targets, i: usize) -> f64 {
    match (target, y) {
        (TargetKind::Categorical { .. }, Targets::Classes(labels)) => {
            let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = out.iter().map(|v| (v - max).exp()).sum();
            out[labels[i]] - max - z.ln()
        }
        (TargetKind::Gaussian { sigma }, Targets::Values(values)) => {
            let r = values[i] - out[0];
            -0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln() - r * r / (2.0 * sigma * sigma)
        }
        _ => panic!("target mismatch"),
    }
}

/// The ELBO summed depth by depth, each depth running its own forward pass.
pub fn naive_elbo(inst: &Instance) -> f64 {
    let state = &inst.state;
    let dist = TruncatedPoissonDist::over_depths(state.lambda(), 0.95).unwrap();
    let lambda = state.lambda();
    // q over {1..=Q+1} from Poisson(λ) weights, normalized directly.
    let weights: Vec<f64> = (0..=inst.quantile)
        .map(|k| (k as f64 * lambda.ln() - lambda - ln_factorial(k)).exp())
        .collect();
    let z: f64 = weights.iter().sum();
    assert_eq!(dist.quantile(), inst.quantile);
    let ids = state.layer_params(inst.m());
    let n = inst.x.rows();
    let mut total = 0.0;
    for (k, w) in weights.iter().enumerate() {
        let ell = k + 1;
        let q = w / z;
        let kl: f64 = ids[..4 * ell]
            .iter()
            .map(|&id| -0.5 * state.store().value(id).data().iter().map(|v| v * v).sum::<f64>())
            .sum();
        let mut ll = 0.0;
        for i in 0..n {
            let out = naive_output(state, inst.x.row_slice(i), ell);
            ll += naive_loglik(inst.gen.target, &out, &inst.y, i);
        }
        ll *= inst.n_total as f64 / n as f64;
        total += q * (inst.prior.log_pmf(ell) - q.ln() + kl + ll);
    }
    total
}

fn ln_factorial(k: usize) -> f64 {
    (1..=k).map(|j| (j as f64).ln()).sum()
}

/// Gradient of `(n_total/n)·Σ log p(y | Ω_depth) - ½‖ν_{1:depth}‖²` with
/// respect to the parameters of layers `1..=depth`, by hand-written
/// backpropagation. Categorical targets only.
pub fn map_gradient(state: &VariationalState, x: &Tensor, labels: &[usize], n_total: usize, depth: usize) -> Vec<f64> {
    let ids = state.layer_params(depth);
    let layers: Vec<DenseLayer> = (0..depth).map(|k| read_layer(state, ids[4 * k], ids[4 * k + 1])).collect();
    let head = read_layer(state, ids[4 * depth - 2], ids[4 * depth - 1]);
    let scale = n_total as f64 / x.rows() as f64;

    let zeros_like = |l: &DenseLayer| DenseLayer {
        w: l.w.iter().map(|r| vec![0.0; r.len()]).collect(),
        b: vec![0.0; l.b.len()],
    };
    let mut g_layers: Vec<DenseLayer> = layers.iter().map(zeros_like).collect();
    let mut g_head = zeros_like(&head);

    for i in 0..x.rows() {
        let mut acts = vec![x.row_slice(i).to_vec()];
        let mut pre = Vec::new();
        for l in &layers {
            let z = apply(l, acts.last().unwrap(), false);
            acts.push(z.iter().map(|v| v.max(0.0)).collect());
            pre.push(z);
        }
        let logits = apply(&head, acts.last().unwrap(), false);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|v| (v - max).exp()).sum();
        // d log softmax[y] / d logits = onehot - softmax.
        let mut delta: Vec<f64> = logits.iter().map(|v| -scale * (v - max).exp() / z).collect();
        delta[labels[i]] += scale;

        let h = acts.last().unwrap();
        for (k, hk) in h.iter().enumerate() {
            for (j, d) in delta.iter().enumerate() {
                g_head.w[k][j] += hk * d;
            }
        }
        for (j, d) in delta.iter().enumerate() {
            g_head.b[j] += d;
        }
        let mut back: Vec<f64> = (0..h.len()).map(|k| head.w[k].iter().zip(&delta).map(|(w, d)| w * d).sum()).collect();
        for l in (0..depth).rev() {
            let dz: Vec<f64> = back.iter().zip(&pre[l]).map(|(g, z)| if *z > 0.0 { *g } else { 0.0 }).collect();
            let input = &acts[l];
            for (k, ik) in input.iter().enumerate() {
                for (j, d) in dz.iter().enumerate() {
                    g_layers[l].w[k][j] += ik * d;
                }
            }
            for (j, d) in dz.iter().enumerate() {
                g_layers[l].b[j] += d;
            }
            back = (0..input.len()).map(|k| layers[l].w[k].iter().zip(&dz).map(|(w, d)| w * d).sum()).collect();
        }
    }

    let flat = |l: &DenseLayer| -> Vec<f64> { l.w.iter().flatten().copied().chain(l.b.iter().copied()).collect() };
    let mut out = Vec::new();
    for k in 0..depth {
        let hw = state.store().value(ids[4 * k + 2]);
        let hb = state.store().value(ids[4 * k + 3]);
        let prior = |t: &Tensor| t.data().iter().map(|v| -v).collect::<Vec<f64>>();
        let layer_w = state.store().value(ids[4 * k]);
        let layer_b = state.store().value(ids[4 * k + 1]);
        let lw = flat(&g_layers[k]);
        let (gw, gb) = lw.split_at(layer_w.len());
        out.extend(gw.iter().zip(prior(layer_w)).map(|(a, b)| a + b));
        out.extend(gb.iter().zip(prior(layer_b)).map(|(a, b)| a + b));
        if k + 1 == depth {
            let hg = flat(&g_head);
            let (gw, gb) = hg.split_at(hw.len());
            out.extend(gw.iter().zip(prior(hw)).map(|(a, b)| a + b));
            out.extend(gb.iter().zip(prior(hb)).map(|(a, b)| a + b));
        } else {
            out.extend(prior(hw));
            out.extend(prior(hb));
        }
    }
    out
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::poisson::DepthPrior;

fn classifier(input_dim: usize, width: usize, classes: usize) -> DenseGenerator {
    DenseGenerator {
        input_dim,
        width,
        target: TargetKind::Categorical { num_classes: classes },
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Targets {
    Targets::Classes((0..n).map(|_| rng.random_range(0..classes)).collect())
}

fn grown(lambda: f64, gen: &DenseGenerator, depth: usize, seed: u64) -> VariationalState {
    let mut s = VariationalState::new(lambda, 0.95, DepthMode::Variational, seed).unwrap();
    s.grow_to(gen, depth).unwrap();
    s
}

fn all_values(s: &VariationalState) -> Vec<Vec<f64>> {
    s.store().ids().map(|id| s.store().value(id).data().to_vec()).collect()
}

#[test]
fn forward_depth_one() {
    let gen = classifier(2, 3, 2);
    let s = grown(1.0, &gen, 1, 0);
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_rows(&[vec![0.5, -0.5]]).unwrap());
    let pass = s.forward_all(&mut g, x, 1).unwrap();
    assert_eq!(pass.outputs.len(), 1);
    assert_eq!(pass.hidden_evals, 1);
    assert_eq!(g.value(pass.outputs[0]).shape(), [1, 2]);
}

#[test]
fn shared_forward_counts_each_layer_once() {
    let gen = classifier(2, 4, 3);
    let s = grown(1.0, &gen, 8, 1);
    let mut g = Graph::new();
    let x = g.constant(random_tensor(&mut ChaCha8Rng::seed_from_u64(0), 5, 2));
    let pass = s.forward_all(&mut g, x, 8).unwrap();
    assert_eq!(pass.hidden_evals, 8);
    assert_eq!(pass.outputs.len(), 8);
}

#[test]
fn shared_forward_matches_standalone_bitwise() {
    let gen = classifier(2, 6, 2);
    let s = grown(1.0, &gen, 5, 2);
    let x = random_tensor(&mut ChaCha8Rng::seed_from_u64(1), 7, 2);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let pass = s.forward_all(&mut g, xv, 5).unwrap();
    let mut h = Graph::new();
    let xv = h.constant(x);
    let alone = s.forward_depth(&mut h, xv, 3).unwrap();
    assert_eq!(g.value(pass.outputs[2]).data(), h.value(alone).data());
}

#[test]
fn forward_beyond_created_is_contract_error() {
    let gen = classifier(2, 3, 2);
    let s = grown(1.0, &gen, 2, 0);
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(1, 2));
    assert!(matches!(s.forward_all(&mut g, x, 3), Err(UdnError::Contract(_))));
}

fn set_all(s: &mut VariationalState, depth: usize, value: f64) {
    for id in s.layer_params(depth) {
        s.store_mut().value_mut(id).fill(value);
    }
}

#[test]
fn weight_kl_closed_form_examples() {
    let gen = DenseGenerator {
        input_dim: 1,
        width: 1,
        target: TargetKind::Gaussian { sigma: 1.0 },
    };
    let mut s = grown(1.0, &gen, 2, 0);
    set_all(&mut s, 2, 0.0);
    let mut g = Graph::new();
    let kl = s.weight_kl(&mut g, 2).unwrap();
    let first = s.layer_params(1).iter().map(|&id| s.store().value(id).sum_squares()).sum::<f64>();
    assert_eq!(g.scalar(kl), -0.5 * first);

    set_all(&mut s, 1, 0.0);
    let w = s.layer_params(1)[0];
    s.store_mut().value_mut(w).set(0, 0, 2.0);
    let mut g = Graph::new();
    let kl = s.weight_kl(&mut g, 1).unwrap();
    assert_eq!(g.scalar(kl), -2.0);
}

#[test]
fn weight_kl_matches_monte_carlo() {
    let gen = DenseGenerator {
        input_dim: 1,
        width: 1,
        target: TargetKind::Gaussian { sigma: 1.0 },
    };
    let mut s = grown(1.0, &gen, 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ids = s.layer_params(2);
    for &id in &ids {
        let v = rng.random_range(-1.5..1.5);
        s.store_mut().value_mut(id).fill(v);
    }
    let nu: Vec<f64> = ids.iter().map(|&id| s.store().value(id).item()).collect();

    // log p(θ) - log q(θ) for θ ~ N(ν, I): -½‖θ‖² + ½‖θ - ν‖².
    let n = 1_000_000;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let mut v = 0.0;
        for &m in &nu {
            let eps: f64 = rng.sample(StandardNormal);
            let theta = m + eps;
            v += -0.5 * theta * theta + 0.5 * eps * eps;
        }
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / n as f64;
    let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();

    let mut g = Graph::new();
    let kl = s.weight_kl(&mut g, 2).unwrap();
    assert!((g.scalar(kl) - mean).abs() < 3.0 * se, "{} vs {mean} ± {se}", g.scalar(kl));
}

#[test]
fn degenerate_q_total_is_prior_plus_loglik() {
    let gen = classifier(2, 3, 2);
    let mut s = grown(1e-6, &gen, 1, 0);
    set_all(&mut s, 1, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor(&mut rng, 4, 2);
    let y = random_labels(&mut rng, 4, 2);
    let prior = DepthPrior::new(0.5).unwrap();
    let mut g = Graph::new();
    let e = s.elbo(&mut g, &x, &y, 12, &prior).unwrap();
    assert_eq!(e.depths, vec![1]);
    assert_eq!(g.scalar(e.log_q[0]), 0.0);
    // Zero weights give uniform class probabilities.
    let expected = prior.log_pmf(1) + 3.0 * 4.0 * 0.5f64.ln();
    assert!((g.scalar(e.total) - expected).abs() < 1e-12);
}

#[test]
fn full_batch_scale_is_one() {
    let gen = classifier(2, 3, 2);
    let s = grown(1.5, &gen, 5, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_tensor(&mut rng, 6, 2);
    let y = random_labels(&mut rng, 6, 2);
    let prior = DepthPrior::new(0.5).unwrap();
    let mut g = Graph::new();
    let e = s.elbo(&mut g, &x, &y, 6, &prior).unwrap();
    let xv = g.constant(x.clone());
    for (&d, &ll) in e.depths.iter().zip(&e.loglik) {
        let out = s.forward_depth(&mut g, xv, d).unwrap();
        let Targets::Classes(labels) = &y else { unreachable!() };
        let raw = categorical_loglik(&mut g, out, labels).unwrap();
        assert_eq!(g.scalar(ll), g.scalar(raw));
    }
}

#[test]
fn breakdown_recombines_to_total() {
    let gen = classifier(2, 4, 3);
    let s = grown(2.5, &gen, 9, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_tensor(&mut rng, 10, 2);
    let y = random_labels(&mut rng, 10, 3);
    let mut g = Graph::new();
    let e = s.elbo(&mut g, &x, &y, 100, &DepthPrior::new(1.0).unwrap()).unwrap();
    let b = e.breakdown(&g);
    assert!((b.recombine() - b.total).abs() < 1e-10 * b.total.abs().max(1.0));
}

/// Direct summation over depths with each `Ω_ℓ` computed from scratch on
/// plain arrays.
fn naive_elbo(s: &VariationalState, x: &Tensor, labels: &[usize], n_total: usize, prior: &DepthPrior) -> f64 {
    let dist = s.depth_distribution().unwrap();
    let value = |id: ParamId| s.store().value(id).clone();
    let dense = |h: &Tensor, w: &Tensor, b: &Tensor, relu: bool| {
        let mut out = Tensor::zeros(h.rows(), w.cols());
        for i in 0..h.rows() {
            for j in 0..w.cols() {
                let mut z = b.get(0, j);
                for k in 0..h.cols() {
                    z += h.get(i, k) * w.get(k, j);
                }
                out.set(i, j, if relu { z.max(0.0) } else { z });
            }
        }
        out
    };
    let mut total = 0.0;
    for ell in dist.support() {
        let q = dist.pmf(ell);
        let mut kl = 0.0;
        let mut h = x.clone();
        for k in 1..=ell {
            let ids = s.layer_params(k);
            let ids = &ids[(k - 1) * 4..k * 4];
            for &id in ids {
                kl -= 0.5 * s.store().value(id).data().iter().map(|v| v * v).sum::<f64>();
            }
            h = dense(&h, &value(ids[0]), &value(ids[1]), true);
        }
        let ids = s.layer_params(ell);
        let last = &ids[(ell - 1) * 4..];
        let logits = dense(&h, &value(last[2]), &value(last[3]), false);
        let mut ll = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = logits.row_slice(i);
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            ll += row[y] - z.ln();
        }
        ll *= n_total as f64 / labels.len() as f64;
        total += q * (prior.log_pmf(ell) - q.ln() + kl + ll);
    }
    total
}

#[test]
fn shared_elbo_matches_naive_sum() {
    let gen = classifier(2, 2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // λ = 0.3 puts the 0.95 quantile at 1, so m(q) = 2.
    let s = grown(0.3, &gen, 2, 9);
    assert_eq!(s.required_depth().unwrap(), 2);
    let x = random_tensor(&mut rng, 4, 2);
    let y: Vec<usize> = vec![0, 1, 1, 0];
    let prior = DepthPrior::new(0.5).unwrap();
    let mut g = Graph::new();
    let e = s.elbo(&mut g, &x, &Targets::Classes(y.clone()), 4, &prior).unwrap();
    let naive = naive_elbo(&s, &x, &y, 4, &prior);
    assert!((g.scalar(e.total) - naive).abs() < 1e-10, "{} vs {naive}", g.scalar(e.total));
}

#[test]
fn grow_is_deterministic_and_idempotent() {
    let gen = classifier(2, 5, 2);
    let a = grown(1.0, &gen, 3, 42);
    let b = grown(1.0, &gen, 3, 42);
    assert_eq!(all_values(&a), all_values(&b));
    let mut c = a.clone();
    c.grow_to(&gen, 3).unwrap();
    assert_eq!(c, a);
    c.grow_to(&gen, 1).unwrap();
    assert_eq!(c, a);
}

#[test]
fn growing_leaves_existing_layers_untouched() {
    let gen = classifier(2, 5, 2);
    let a = grown(1.0, &gen, 2, 42);
    let mut b = a.clone();
    b.grow_to(&gen, 6).unwrap();
    let before = all_values(&a);
    assert_eq!(&all_values(&b)[..before.len()], &before[..]);
    // Layer k is drawn from its own stream, so growing in one step or many agrees.
    let direct = grown(1.0, &gen, 6, 42);
    assert_eq!(all_values(&direct), all_values(&b));
}

#[test]
fn new_layer_receives_gradient_once_in_support() {
    let gen = classifier(2, 4, 2);
    let mut s = grown(1.0, &gen, 5, 3);
    s.grow_to(&gen, 6).unwrap();
    let dist = s.depth_distribution().unwrap();
    let quantile = 5;
    assert!(dist.log_pmf_with_quantile(6, quantile).unwrap().exp() > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_tensor(&mut rng, 8, 2);
    let y = random_labels(&mut rng, 8, 2);
    let mut g = Graph::new();
    let e = s.elbo_frozen(&mut g, &x, &y, 8, &DepthPrior::new(0.5).unwrap(), quantile).unwrap();
    let store = s.store_mut();
    store.zero_grad();
    g.backward(e.total, store).unwrap();
    let ids = s.layer_params(6);
    let sixth = &ids[20..];
    assert!(sixth.iter().any(|&id| s.store().grad(id).data().iter().any(|&v| v != 0.0)));
}

#[test]
fn inactive_layers_get_exact_zero_gradient() {
    let gen = classifier(3, 4, 3);
    let mut s = grown(2.0, &gen, 1, 5);
    let m = s.required_depth().unwrap();
    s.grow_to(&gen, m + 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_tensor(&mut rng, 9, 3);
    let y = random_labels(&mut rng, 9, 3);
    let mut g = Graph::new();
    let e = s.elbo(&mut g, &x, &y, 50, &DepthPrior::new(0.5).unwrap()).unwrap();
    let store = s.store_mut();
    store.zero_grad();
    g.backward(e.total, store).unwrap();
    let all = s.layer_params(m + 3);
    for &id in &all[m * 4..] {
        assert!(s.store().grad(id).data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn extra_layers_do_not_change_elbo() {
    let gen = classifier(2, 4, 2);
    let mut s = grown(1.2, &gen, 1, 6);
    let m = s.required_depth().unwrap();
    s.grow_to(&gen, m + 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_tensor(&mut rng, 5, 2);
    let y = random_labels(&mut rng, 5, 2);
    let prior = DepthPrior::new(0.5).unwrap();
    let eval = |s: &VariationalState| {
        let mut g = Graph::new();
        let e = s.elbo(&mut g, &x, &y, 5, &prior).unwrap();
        g.scalar(e.total)
    };
    let before = eval(&s);
    for id in s.layer_params(m + 2).into_iter().skip(m * 4) {
        s.store_mut().value_mut(id).fill(rng.random_range(-3.0..3.0));
    }
    assert_eq!(eval(&s), before);
}

#[test]
fn cumulative_kl_swaps_summation_order() {
    let gen = classifier(2, 3, 2);
    let s = grown(3.0, &gen, 1, 7);
    let m = s.required_depth().unwrap();
    let mut s = s;
    s.grow_to(&gen, m).unwrap();
    let dist = s.depth_distribution().unwrap();
    let mut g = Graph::new();
    let layer: Vec<f64> = (1..=m).map(|k| s.layer_kl(&mut g, k).map(|v| g.scalar(v)).unwrap()).collect();
    let lhs: f64 = (1..=m)
        .map(|ell| {
            let kl = s.weight_kl(&mut g, ell).unwrap();
            dist.pmf(ell) * g.scalar(kl)
        })
        .sum();
    let rhs: f64 = (1..=m)
        .map(|k| {
            let tail: f64 = (k..=m).map(|ell| dist.pmf(ell)).sum();
            tail * layer[k - 1]
        })
        .sum();
    assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
}

#[test]
fn composability_violation_is_config_error() {
    struct Broken;
    impl NetworkGenerator for Broken {
        fn input_dim(&self) -> usize {
            2
        }
        fn hidden(&self, depth: usize) -> LayerSpec {
            LayerSpec {
                depth_index: depth,
                in_dim: if depth == 1 { 2 } else { 7 },
                out_dim: 4,
                activation: Activation::Relu,
                kind: LayerKind::Dense,
            }
        }
        fn output(&self, depth: usize) -> OutputSpec {
            OutputSpec {
                depth_index: depth,
                in_dim: 4,
                target: TargetKind::Categorical { num_classes: 2 },
            }
        }
    }
    let mut s = VariationalState::new(1.0, 0.95, DepthMode::Variational, 0).unwrap();
    s.grow_to(&Broken, 1).unwrap();
    assert!(matches!(s.grow_to(&Broken, 2), Err(UdnError::Config(_))));
    assert!(matches!(
        VariationalState::new(1.0, 0.95, DepthMode::Fixed(0), 0),
        Err(UdnError::Config(_))
    ));
}

#[test]
fn predictions_are_distributions() {
    let gen = classifier(2, 5, 4);
    let s = grown(3.0, &gen, 12, 8);
    let x = random_tensor(&mut ChaCha8Rng::seed_from_u64(9), 20, 2);
    let Prediction::Probabilities(p) = s.predict(&x).unwrap() else { panic!() };
    for i in 0..p.rows() {
        assert!((p.row_slice(i).iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn degenerate_prediction_is_single_softmax() {
    let gen = classifier(2, 5, 3);
    let s = grown(1e-6, &gen, 1, 8);
    let x = random_tensor(&mut ChaCha8Rng::seed_from_u64(9), 6, 2);
    let Prediction::Probabilities(p) = s.predict(&x).unwrap() else { panic!() };
    let mut g = Graph::new();
    let xv = g.constant(x);
    let out = s.forward_depth(&mut g, xv, 1).unwrap();
    assert_eq!(p, softmax_rows(g.value(out)));
}

#[test]
fn prediction_matches_three_term_mixture() {
    let gen = classifier(2, 5, 3);
    // λ = 0.5 gives a 0.95 quantile of 2, so three depths.
    let s = grown(0.5, &gen, 3, 10);
    assert_eq!(s.required_depth().unwrap(), 3);
    let x = random_tensor(&mut ChaCha8Rng::seed_from_u64(10), 4, 2);
    let Prediction::Probabilities(p) = s.predict(&x).unwrap() else { panic!() };
    // Unnormalized Poisson(0.5) weights 1, 1/2, 1/8 over depths 1..3.
    let w = [1.0 / 1.625, 0.5 / 1.625, 0.125 / 1.625];
    let mut expected = Tensor::zeros(4, 3);
    for (d, wd) in (1..=3).zip(w) {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = s.forward_depth(&mut g, xv, d).unwrap();
        let probs = softmax_rows(g.value(out));
        for (e, v) in expected.data_mut().iter_mut().zip(probs.data()) {
            *e += wd * v;
        }
    }
    for (a, b) in p.data().iter().zip(expected.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn prediction_ignores_unused_layers() {
    let gen = classifier(2, 5, 2);
    let s = grown(0.5, &gen, 3, 10);
    let mut bigger = s.clone();
    bigger.grow_to(&gen, 9).unwrap();
    let x = random_tensor(&mut ChaCha8Rng::seed_from_u64(3), 5, 2);
    assert_eq!(s.predict(&x).unwrap(), bigger.predict(&x).unwrap());
}

#[test]
fn regression_prediction_is_mixture_mean() {
    let gen = DenseGenerator {
        input_dim: 3,
        width: 4,
        target: TargetKind::Gaussian { sigma: 1.0 },
    };
    let s = grown(0.5, &gen, 3, 1);
    let x = random_tensor(&mut ChaCha8Rng::seed_from_u64(3), 5, 3);
    let mix = s.predictive_mixture(&x).unwrap();
    let Prediction::Means(m) = mix.combine() else { panic!() };
    assert_eq!(m.shape(), [5, 1]);
    let direct: f64 = mix.weights.iter().zip(&mix.components).map(|(w, c)| w * c.get(2, 0)).sum();
    assert!((m.get(2, 0) - direct).abs() < 1e-14);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let gen = classifier(2, 5, 3);
    let s = grown(2.3, &gen, 7, 12);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.json");
    s.save(&path).unwrap();
    let back = VariationalState::load(&path).unwrap();
    assert_eq!(back, s);
    let x = random_tensor(&mut ChaCha8Rng::seed_from_u64(3), 5, 2);
    assert_eq!(back.predict(&x).unwrap(), s.predict(&x).unwrap());
}

#[test]
fn tampered_checkpoint_is_rejected() {
    let gen = classifier(2, 5, 3);
    let s = grown(2.3, &gen, 2, 12);
    let text = s.to_checkpoint_json().unwrap();
    let tampered = text.replacen("\"created_count\":2", "\"created_count\":3", 1);
    assert_ne!(text, tampered);
    assert!(matches!(VariationalState::from_checkpoint_json(&tampered), Err(UdnError::Config(_))));
}

#[test]
fn point_mass_baseline_drops_depth_kl() {
    let gen = classifier(2, 4, 2);
    let s = grown(1.0, &gen, 4, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor(&mut rng, 6, 2);
    let y = random_labels(&mut rng, 6, 2);
    let prior = DepthPrior::new(0.5).unwrap();
    let mut g = Graph::new();
    let e = s.elbo_point_mass(&mut g, &x, &y, 30, &prior, 3).unwrap();
    let base = s.finite_baseline_elbo(&mut g, &x, &y, 30, 3).unwrap();
    let diff = g.scalar(e.total) - g.scalar(e.depth_kl) - g.scalar(base);
    assert!(diff.abs() < 1e-10);
}

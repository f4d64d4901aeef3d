use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::oracle::{dense_mh_log_ratio, proposal_moments, random_symmetric};
use crate::spectral::{eigendecompose_covariance, DeltaOperators};
use crate::targets::{logistic_target, regression_target, FlatTarget};

fn setup(n: usize, seed: u64) -> (DMatrix<f64>, SpectralPrior, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = random_symmetric(&mut rng, n, 0.2, 2.5);
    let prior = eigendecompose_covariance(&c, 0.0).unwrap();
    (c, prior, rng)
}

#[test]
fn flat_likelihood_always_accepts() {
    let (_, prior, mut rng) = setup(4, 1);
    let flat = FlatTarget { dim: 4 };
    let ops = DeltaOperators::new(&prior, 0.8).unwrap();
    for kind in [
        SamplerKind::AGradZ,
        SamplerKind::AGradU,
        SamplerKind::MGrad,
        SamplerKind::Pcn,
        SamplerKind::Pcnl,
    ] {
        let mut state = ChainState::new(DVector::zeros(4), &prior, &flat).unwrap();
        for _ in 0..200 {
            let out = step(kind, &mut state, &prior, Some(&ops), &flat, &mut rng).unwrap();
            assert!(out.accepted, "{kind}");
            assert_eq!(out.log_ratio, 0.0, "{kind}");
        }
    }
    let mut state = ChainState::new(DVector::zeros(4), &prior, &flat).unwrap();
    for _ in 0..200 {
        let out = step(
            SamplerKind::Ellipt,
            &mut state,
            &prior,
            None,
            &flat,
            &mut rng,
        )
        .unwrap();
        assert!(out.accepted);
        assert_eq!(out.likelihood_evals, 1);
    }
}

#[test]
fn matvec_budget_per_iteration() {
    let (_, prior, mut rng) = setup(6, 2);
    let y = DVector::from_fn(6, |i, _| (i as f64).sin());
    let target = regression_target(y, 0.5).unwrap();
    let ops = DeltaOperators::new(&prior, 0.4).unwrap();
    for kind in SamplerKind::ALL {
        let mut state = ChainState::new(DVector::zeros(6), &prior, &target).unwrap();
        let start = state.counters().matvecs;
        assert_eq!(start, 2);
        for _ in 0..100 {
            step(kind, &mut state, &prior, Some(&ops), &target, &mut rng).unwrap();
        }
        let used = state.counters().matvecs - start;
        assert_eq!(used, 100 * kind.matvecs_per_step(), "{kind}");
        assert_eq!(state.counters().factorizations, 0);
    }
}

#[test]
fn spectral_ratios_match_dense_densities() {
    for seed in 0..10 {
        let (c, prior, mut rng) = setup(3, 100 + seed);
        let y = standard_normal_vec(&mut rng, 3);
        let target = regression_target(y, 0.7).unwrap();
        let x0 = standard_normal_vec(&mut rng, 3);
        for kind in [
            SamplerKind::MGrad,
            SamplerKind::Pcn,
            SamplerKind::Pcnl,
            SamplerKind::Pmala,
        ] {
            let delta = 0.2 + 0.5 * seed as f64 / 10.0;
            let ops = DeltaOperators::new(&prior, delta).unwrap();
            let mut state = ChainState::new(x0.clone(), &prior, &target).unwrap();
            state.set_record_proposals(true);
            let out = step(kind, &mut state, &prior, Some(&ops), &target, &mut rng).unwrap();
            let prop = state.last_proposal().unwrap().clone();
            let dense = dense_mh_log_ratio(kind, &c, delta, &target, &x0, &prop).unwrap();
            assert!(
                (out.log_ratio - dense).abs() < 1e-8,
                "{kind}: spectral {} dense {dense}",
                out.log_ratio
            );
        }
    }
}

#[test]
fn spectral_ratios_match_dense_for_logistic() {
    let (c, prior, mut rng) = setup(3, 7);
    let target = logistic_target(&[1, 0, 1]).unwrap();
    for kind in [SamplerKind::MGrad, SamplerKind::Pcnl, SamplerKind::Pmala] {
        let ops = DeltaOperators::new(&prior, 1.3).unwrap();
        for _ in 0..5 {
            let x0 = standard_normal_vec(&mut rng, 3);
            let mut state = ChainState::new(x0.clone(), &prior, &target).unwrap();
            state.set_record_proposals(true);
            let out = step(kind, &mut state, &prior, Some(&ops), &target, &mut rng).unwrap();
            let prop = state.last_proposal().unwrap().clone();
            let dense = dense_mh_log_ratio(kind, &c, 1.3, &target, &x0, &prop).unwrap();
            assert!((out.log_ratio - dense).abs() < 1e-8, "{kind}");
        }
    }
}

/// Proposals of the three new samplers from a fixed point share the
/// marginal law `N((2/δ)A(x + (δ/2)∇f), (2/δ)A² + A)`.
#[test]
fn auxiliary_and_marginal_proposals_agree() {
    let (c, prior, mut rng) = setup(2, 9);
    let target = regression_target(DVector::from_vec(vec![1.0, -0.5]), 0.4).unwrap();
    let x0 = DVector::from_vec(vec![0.3, 0.8]);
    let delta = 0.9;
    let ops = DeltaOperators::new(&prior, delta).unwrap();
    let (_, grad) = target.evaluate(&x0);
    let (mean, cov) = proposal_moments(SamplerKind::MGrad, &c, delta, &x0, &grad).unwrap();
    let draws = 100_000;
    for kind in [SamplerKind::AGradZ, SamplerKind::AGradU, SamplerKind::MGrad] {
        let base = ChainState::new(x0.clone(), &prior, &target).unwrap();
        let mut sum = DVector::zeros(2);
        let mut sq = DVector::zeros(2);
        for _ in 0..draws {
            let mut state = base.clone();
            state.set_record_proposals(true);
            step(kind, &mut state, &prior, Some(&ops), &target, &mut rng).unwrap();
            let y = state.last_proposal().unwrap();
            sum += y;
            sq += y.component_mul(y);
        }
        let t = draws as f64;
        for i in 0..2 {
            let m = sum[i] / t;
            let v = sq[i] / t - m * m;
            let se_mean = (cov[(i, i)] / t).sqrt();
            let se_var = cov[(i, i)] * (2.0 / t).sqrt();
            assert!(
                (m - mean[i]).abs() < 4.0 * se_mean,
                "{kind} mean {i}: {m} vs {}",
                mean[i]
            );
            assert!(
                (v - cov[(i, i)]).abs() < 4.0 * se_var,
                "{kind} var {i}: {v} vs {}",
                cov[(i, i)]
            );
        }
    }
}

#[test]
fn caches_stay_coherent() {
    let (_, prior, mut rng) = setup(5, 11);
    let target = logistic_target(&[1, 0, 0, 1, 1]).unwrap();
    for kind in SamplerKind::ALL {
        let mut state = ChainState::new(DVector::zeros(5), &prior, &target).unwrap();
        for i in 0..300 {
            let ops = DeltaOperators::new(&prior, 0.3 + 0.001 * i as f64).unwrap();
            step(kind, &mut state, &prior, Some(&ops), &target, &mut rng).unwrap();
        }
        let err = state.check_coherence(&prior, &target).unwrap();
        assert!(err < 1e-9, "{kind}: {err}");
    }
}

#[test]
fn pcn_leaves_prior_invariant() {
    let (c, prior, mut rng) = setup(2, 12);
    let flat = FlatTarget { dim: 2 };
    let ops = DeltaOperators::new(&prior, 50.0).unwrap();
    let root = c.clone().cholesky().unwrap().l();
    let mut state =
        ChainState::new(&root * standard_normal_vec(&mut rng, 2), &prior, &flat).unwrap();
    let t = 100_000;
    let mut sum = DVector::zeros(2);
    let mut outer = DMatrix::zeros(2, 2);
    for _ in 0..t {
        step_pcn(&mut state, &prior, &ops, &flat, &mut rng).unwrap();
        sum += state.x();
        outer += state.x() * state.x().transpose();
    }
    let mean = sum / t as f64;
    let cov = outer / t as f64 - &mean * mean.transpose();
    // lag-one correlation is (2/52)², so iid standard errors are adequate
    for i in 0..2 {
        assert!(mean[i].abs() < 4.0 * (c[(i, i)] / t as f64).sqrt());
        for j in 0..2 {
            let se = ((c[(i, i)] * c[(j, j)] + c[(i, j)].powi(2)) / t as f64).sqrt();
            assert!((cov[(i, j)] - c[(i, j)]).abs() < 4.0 * se, "cov {i}{j}");
        }
    }
}

#[test]
fn pmala_small_step_almost_always_accepts() {
    let (_, prior, mut rng) = setup(3, 13);
    let target = regression_target(DVector::from_vec(vec![0.5, 1.0, -1.0]), 1.0).unwrap();
    let ops = DeltaOperators::new(&prior, 1e-6).unwrap();
    let mut state = ChainState::new(DVector::zeros(3), &prior, &target).unwrap();
    for _ in 0..10_000 {
        step_pmala(&mut state, &prior, &ops, &target, &mut rng).unwrap();
    }
    assert!(
        state.acceptance_rate() > 0.999,
        "{}",
        state.acceptance_rate()
    );
}

#[test]
fn pmala_rejects_state_in_prior_null_space() {
    let c = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
    let prior = eigendecompose_covariance(&c, 0.0).unwrap();
    let flat = FlatTarget { dim: 2 };
    let ops = DeltaOperators::new(&prior, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut ok = ChainState::new(DVector::zeros(2), &prior, &flat).unwrap();
    for _ in 0..50 {
        step_pmala(&mut ok, &prior, &ops, &flat, &mut rng).unwrap();
    }
    assert_eq!(ok.x()[1], 0.0);
    let mut bad = ChainState::new(DVector::from_vec(vec![0.0, 1.0]), &prior, &flat).unwrap();
    assert!(matches!(
        step_pmala(&mut bad, &prior, &ops, &flat, &mut rng),
        Err(LgmError::PriorSingularState { .. })
    ));
}

/// `f = −∞` beyond a wall; proposals there must be rejected cleanly.
struct Walled;

impl TargetModel for Walled {
    fn dim(&self) -> usize {
        2
    }
    fn evaluate(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        if x[0] > 0.5 {
            (f64::NEG_INFINITY, DVector::from_element(2, f64::NAN))
        } else {
            (-0.5 * x.norm_squared(), -x)
        }
    }
}

#[test]
fn non_finite_proposals_are_rejected() {
    let (_, prior, mut rng) = setup(2, 15);
    let ops = DeltaOperators::new(&prior, 2.0).unwrap();
    for kind in SamplerKind::ALL {
        let mut state = ChainState::new(DVector::zeros(2), &prior, &Walled).unwrap();
        for _ in 0..500 {
            step(kind, &mut state, &prior, Some(&ops), &Walled, &mut rng).unwrap();
            assert!(state.log_likelihood().is_finite(), "{kind}");
            assert!(state.x()[0] <= 0.5);
        }
    }
}

#[test]
fn elliptical_slice_recovers_conjugate_posterior() {
    // prior N(0,1), observation 5 with noise variance 0.1
    let prior = eigendecompose_covariance(&DMatrix::from_element(1, 1, 1.0), 0.0).unwrap();
    let target = regression_target(DVector::from_element(1, 5.0), 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut state = ChainState::new(DVector::zeros(1), &prior, &target).unwrap();
    for _ in 0..1000 {
        step_ellipt(&mut state, &prior, &target, &mut rng).unwrap();
    }
    let t = 40_000;
    let mut xs = Vec::with_capacity(t);
    let evals_before = state.likelihood_evals();
    for _ in 0..t {
        let out = step_ellipt(&mut state, &prior, &target, &mut rng).unwrap();
        assert!(out.likelihood_evals >= 1);
        xs.push(state.x()[0]);
    }
    assert!(state.likelihood_evals() - evals_before >= t as u64);
    let exact_mean = 5.0 / 1.1;
    let exact_var = 0.1 / 1.1;
    let mean = xs.iter().sum::<f64>() / t as f64;
    // batch-means standard error
    let batches = 40;
    let len = t / batches;
    let bm: Vec<f64> = xs
        .chunks(len)
        .map(|c| c.iter().sum::<f64>() / len as f64)
        .collect();
    let bvar = bm.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    let se = (bvar / batches as f64).sqrt();
    assert!(
        (mean - exact_mean).abs() < 4.0 * se,
        "mean {mean} vs {exact_mean}, se {se}"
    );
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / t as f64;
    assert!((var / exact_var - 1.0).abs() < 0.1, "var {var}");
}

#[test]
fn missing_operators_is_an_error() {
    let (_, prior, mut rng) = setup(2, 17);
    let flat = FlatTarget { dim: 2 };
    let mut state = ChainState::new(DVector::zeros(2), &prior, &flat).unwrap();
    assert!(step(
        SamplerKind::MGrad,
        &mut state,
        &prior,
        None,
        &flat,
        &mut rng
    )
    .is_err());
}

#[test]
fn same_seed_same_chain() {
    let (_, prior, _) = setup(4, 18);
    let target = logistic_target(&[1, 1, 0, 0]).unwrap();
    let ops = DeltaOperators::new(&prior, 0.7).unwrap();
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut state = ChainState::new(DVector::zeros(4), &prior, &target).unwrap();
        for _ in 0..100 {
            step_agrad_u(&mut state, &prior, &ops, &target, &mut rng).unwrap();
        }
        state.x().clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn accept_boundaries() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        assert!(mh_accept(0.0, &mut rng));
        assert!(!mh_accept(f64::NEG_INFINITY, &mut rng));
        assert!(!mh_accept(f64::NAN, &mut rng));
        assert!(!mh_accept(f64::INFINITY, &mut rng));
    }
}

#[test]
fn accept_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = 100_000;
    let hits = (0..t).filter(|_| mh_accept(0.5f64.ln(), &mut rng)).count();
    let p = hits as f64 / t as f64;
    let se = (0.25 / t as f64).sqrt();
    assert!((p - 0.5).abs() < 3.0 * se, "rate {p}");
}

#[test]
fn kind_names_round_trip() {
    for kind in SamplerKind::ALL {
        assert_eq!(kind.name().parse::<SamplerKind>().unwrap(), kind);
        let json = serde_json::to_string(&kind).unwrap();
        assert_eq!(json, format!("\"{}\"", kind.name()));
        assert_eq!(serde_json::from_str::<SamplerKind>(&json).unwrap(), kind);
    }
    assert_eq!("mgrad".parse::<SamplerKind>().unwrap(), SamplerKind::MGrad);
    assert!("hmc".parse::<SamplerKind>().is_err());
}

//! Monitored training runs on the planted-subspace fixture.

use grasspca_core::data::{synth_generate, ClientDataset, SynthConfig, SynthData};
use grasspca_core::federation::{
    augmented_lagrangian, consensus_update, run_training, run_training_with, stationarity_gap, Algorithm, ClientState,
    Executor, Federation, Hyperparams, NoClock, Sequential,
};
use grasspca_core::linalg::{top_k_eig, DenseMatrix};
use grasspca_core::objectives::{fedpg_local_value, LocalProblem};
use grasspca_core::pca::{scatter, GramScaling};

fn fixture() -> SynthData {
    synth_generate(&SynthConfig {
        d: 20,
        k: 3,
        n_per_client: 200,
        n_clients: 5,
        noise_sigma: 0.01,
        seed: 1,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn full(algorithm: Algorithm, rho: f64, local_iters: usize, rounds: usize) -> Hyperparams {
    Hyperparams {
        k: 3,
        rho,
        eta: 0.01,
        local_iters,
        rounds,
        sample_fraction: 1.0,
        seed: 1,
        algorithm,
        ..Hyperparams::default()
    }
}

/// Runs the jobs back to front; results must not depend on it.
struct Reversed;

impl Executor for Reversed {
    fn map<T: Send, F: Fn(usize) -> T + Sync + Send>(&self, n: usize, f: F) -> Vec<T> {
        let mut out: Vec<(usize, T)> = (0..n).rev().map(|i| (i, f(i))).collect();
        out.sort_by_key(|(i, _)| *i);
        out.into_iter().map(|(_, v)| v).collect()
    }
}

#[test]
fn fedpg_reaches_consensus_with_a_shrinking_residual() {
    let run = run_training(&fixture().clients, &full(Algorithm::FedPG, 1.0, 10, 500)).unwrap();
    let residual: Vec<f64> = run.history.iter().map(|r| r.consensus_residual).collect();
    assert!(*residual.last().unwrap() < 1e-4);
    for r in 0..residual.len() - 20 {
        assert!(
            residual[r + 20] <= residual[r] + 1e-20,
            "round {}: {} > {}",
            r + 21,
            residual[r + 20],
            residual[r]
        );
    }
    for c in &run.federation.clients {
        assert!(c.u.orthonormality_defect() < 1e-8);
    }
}

#[test]
fn stationarity_gap_falls_below_target_within_budget() {
    for alg in [Algorithm::FedPG, Algorithm::FedPE] {
        let run = run_training(&fixture().clients, &full(alg, 1.0, 10, 500)).unwrap();
        let gap: Vec<f64> = run.history.iter().map(|r| r.stationarity_gap).collect();
        assert!(gap.iter().any(|&g| g < 1e-4), "{alg:?}");
        for r in 0..gap.len() - 20 {
            assert!(gap[r + 20] <= gap[r] + 1e-20, "{alg:?} round {}", r + 21);
        }
    }
}

#[test]
fn lagrangian_decreases_with_a_large_penalty() {
    for alg in [Algorithm::FedPG, Algorithm::FedPE] {
        let run = run_training(&fixture().clients, &full(alg, 10.0, 50, 300)).unwrap();
        for w in run.history[1..].windows(2) {
            assert!(
                w[1].lagrangian <= w[0].lagrangian + 1e-9,
                "{alg:?} round {}",
                w[1].round
            );
        }
    }
}

#[test]
fn full_participation_duals_sum_to_zero() {
    let data = fixture();
    let hp = full(Algorithm::FedPE, 1.0, 10, 1);
    let mut fed = Federation::new(&data.clients, &hp).unwrap();
    for _ in 0..30 {
        fed.step(&Sequential, &NoClock).unwrap();
        let mut sum = DenseMatrix::zeros(20, 3);
        let mut scale = 0.0;
        for c in &fed.clients {
            sum.axpy(1.0, &c.y).unwrap();
            scale += c.y.frobenius_norm();
        }
        assert!(sum.frobenius_norm() <= 1e-8 * scale.max(f64::MIN_POSITIVE));
        // With the duals cancelling, the general average is the plain mean.
        let general = consensus_update(fed.clients.iter()).unwrap();
        let mut mean = DenseMatrix::zeros(20, 3);
        for c in &fed.clients {
            mean.axpy(1.0 / fed.clients.len() as f64, &c.u).unwrap();
        }
        assert!(general.sub(&mean).unwrap().max_abs() <= 1e-8);
    }
}

#[test]
fn dual_changes_are_bounded_by_the_lipschitz_estimate() {
    let run = run_training(&fixture().clients, &full(Algorithm::FedPG, 1.0, 50, 200)).unwrap();
    let mut asserted = 0;
    for checks in &run.dual_checks {
        for c in checks {
            assert!(c.lipschitz.is_finite());
            if c.local_grad_norm < 1e-6 {
                assert!(c.holds(), "{c:?}");
                asserted += 1;
            }
        }
    }
    assert!(asserted > 0);
}

#[test]
fn single_client_lagrangian_is_the_local_value() {
    let data = fixture();
    let ds = vec![data.clients[0].clone()];
    let hp = full(Algorithm::FedPG, 2.0, 5, 3);
    let run = run_training(&ds, &hp).unwrap();
    let c = &run.federation.clients[0];
    let z = &run.federation.server.z;
    let p = LocalProblem::new(
        c.gram.clone(),
        c.y.clone(),
        c.t.clone(),
        z.clone(),
        c.rho,
        hp.eta,
        hp.local_iters,
    )
    .unwrap();
    let expected = fedpg_local_value(&p, &c.u).unwrap();
    assert_eq!(augmented_lagrangian(&run.federation.clients, z, &hp).unwrap(), expected);
    assert_eq!(run.history.last().unwrap().lagrangian, expected);
}

#[test]
fn exact_stationary_point_has_zero_gap() {
    let data = fixture();
    let x = &data.clients[0].features;
    let s = scatter(x, GramScaling::PerSample);
    let (v, _) = top_k_eig(&s, 3).unwrap();
    let v = v.into_matrix();
    // Dual absorbing the data gradient of the substituted objective.
    let y = s.matmul(&v).unwrap().scale(2.0);
    let client = ClientState {
        id: 0,
        data: ClientDataset::new(0, x.clone()),
        gram: s,
        u: v.clone(),
        y,
        t: DenseMatrix::zeros(3, 3),
        rho: 1.0,
        last_updated_round: None,
        lipschitz_estimate: 0.0,
    };
    let gap = stationarity_gap(&[client], &v, &full(Algorithm::FedPG, 1.0, 1, 1)).unwrap();
    assert!(gap <= 1e-10, "{gap:e}");
}

#[test]
fn schedule_and_repetition_do_not_change_results() {
    let data = fixture();
    let hp = Hyperparams {
        sample_fraction: 0.6,
        ..full(Algorithm::FedPG, 1.0, 10, 20)
    };
    let a = run_training(&data.clients, &hp).unwrap();
    let b = run_training_with(&data.clients, &hp, &Reversed, &NoClock).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.basis, b.basis);
    assert_eq!(a.federation.server.z.as_slice(), b.federation.server.z.as_slice());
}

#[test]
fn the_two_algorithms_have_distinct_trajectories() {
    let data = fixture();
    let pg = run_training(&data.clients, &full(Algorithm::FedPG, 1.0, 10, 10)).unwrap();
    let pe = run_training(&data.clients, &full(Algorithm::FedPE, 1.0, 10, 10)).unwrap();
    assert_ne!(pg.history, pe.history);
}

#[test]
fn partial_participation_samples_the_right_count() {
    let data = synth_generate(&SynthConfig {
        n_clients: 20,
        n_per_client: 30,
        ..SynthConfig::default()
    })
    .unwrap();
    let hp = Hyperparams {
        k: 3,
        rounds: 15,
        sample_fraction: 0.1,
        ..Hyperparams::default()
    };
    let run = run_training(&data.clients, &hp).unwrap();
    for r in &run.history {
        assert_eq!(r.sampled.len(), 2);
        assert!(r.consensus_residual >= 0.0 && r.stationarity_gap >= 0.0);
    }
}

#[test]
fn per_client_penalties_are_used() {
    let data = fixture();
    let hp = Hyperparams {
        client_rho: Some(vec![1.0, 2.0, 3.0, 4.0, 5.0]),
        ..full(Algorithm::FedPG, 1.0, 10, 50)
    };
    let run = run_training(&data.clients, &hp).unwrap();
    let rhos: Vec<f64> = run.federation.clients.iter().map(|c| c.rho).collect();
    assert_eq!(rhos, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    assert!(run.history.last().unwrap().consensus_residual < 1e-4);
}

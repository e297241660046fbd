//! Simulated ADMM consensus rounds.
//!
//! One round: sample clients, run the local solves from each client's current
//! iterate, average into a new consensus `Z`, then update the sampled clients'
//! duals against that `Z`. Unsampled clients are left untouched.

use alloc::vec::Vec;

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::linalg::{qr_thin_recovering, Basis, DenseMatrix};
use crate::objectives::{self, LocalProblem, MANIFOLD_TOL};
use crate::pca::{scatter, GramScaling};
use crate::rng::{self, Domain};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Algorithm {
    /// Euclidean gradient descent with the surrogate orthonormality penalty.
    FedPE,
    /// Projected gradient descent on the Grassmann manifold.
    #[default]
    FedPG,
}

/// How the initial iterates are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Initialization {
    /// Every client starts at `Z⁰`.
    #[default]
    Shared,
    /// Each client draws its own orthonormalized Gaussian start.
    Independent,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Hyperparams {
    pub k: usize,
    pub rho: f64,
    pub eta: f64,
    pub local_iters: usize,
    pub rounds: usize,
    pub sample_fraction: f64,
    pub seed: u64,
    pub algorithm: Algorithm,
    /// Per-client penalties, indexed like the clients; overrides `rho`.
    pub client_rho: Option<Vec<f64>>,
    pub gram_scaling: GramScaling,
    /// FedPG only: after each local solve, rotate the client's basis within
    /// its span to the representative closest to the consensus.
    pub align_representatives: bool,
    pub initialization: Initialization,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            k: 2,
            rho: 1.0,
            eta: 0.01,
            local_iters: 10,
            rounds: 100,
            sample_fraction: 0.1,
            seed: 0,
            algorithm: Algorithm::FedPG,
            client_rho: None,
            gram_scaling: GramScaling::PerSample,
            align_representatives: true,
            initialization: Initialization::Shared,
        }
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

impl Hyperparams {
    /// Every violated field with a short reason.
    pub fn violations(&self) -> Vec<(&'static str, &'static str)> {
        let mut out = Vec::new();
        if self.k == 0 {
            out.push(("k", "must be at least 1"));
        }
        if !positive(self.rho) {
            out.push(("rho", "must be positive and finite"));
        }
        if !positive(self.eta) {
            out.push(("eta", "must be positive and finite"));
        }
        if self.local_iters == 0 {
            out.push(("local_iters", "must be at least 1"));
        }
        if self.rounds == 0 {
            out.push(("rounds", "must be at least 1"));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            out.push(("sample_fraction", "must be in (0, 1]"));
        }
        if let Some(r) = &self.client_rho {
            if !r.iter().all(|&v| positive(v)) {
                out.push(("client_rho", "entries must be positive and finite"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().first() {
            None => Ok(()),
            Some((_, reason)) => Err(Error::InvalidArgument(reason)),
        }
    }

    fn rho_for(&self, position: usize) -> f64 {
        self.client_rho.as_ref().map_or(self.rho, |r| r[position])
    }
}

/// One simulated client.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub id: usize,
    pub data: ClientDataset,
    /// Scaled scatter matrix of `data`, cached.
    pub gram: DenseMatrix,
    pub u: DenseMatrix,
    pub y: DenseMatrix,
    pub t: DenseMatrix,
    pub rho: f64,
    /// Last round in which this client was sampled; `None` before the first.
    pub last_updated_round: Option<usize>,
    /// Largest observed `‖∇f(U') − ∇f(U)‖ / ‖U' − U‖` over this client's
    /// consecutive iterates.
    pub lipschitz_estimate: f64,
}

impl ClientState {
    fn problem(&self, z: &DenseMatrix, hp: &Hyperparams) -> Result<LocalProblem> {
        LocalProblem::new(
            self.gram.clone(),
            self.y.clone(),
            self.t.clone(),
            z.clone(),
            self.rho,
            hp.eta,
            hp.local_iters,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServerState {
    pub z: DenseMatrix,
    /// Number of completed rounds.
    pub round: usize,
}

/// Per-round history entry.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundRecord {
    pub round: usize,
    pub sampled: Vec<usize>,
    pub lagrangian: f64,
    pub consensus_residual: f64,
    pub stationarity_gap: f64,
    pub wall_time: f64,
}

/// Empirical check of `‖ΔY‖ ≤ L̂‖ΔU‖ + slack` for one sampled client, where
/// the slack `‖∇f(U⁺) + Y⁺‖ + ‖∇f(U) + Y‖` vanishes when the local solve is
/// exact.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualBoundCheck {
    pub client: usize,
    pub dual_change: f64,
    pub primal_change: f64,
    pub lipschitz: f64,
    pub slack: f64,
    /// Norm of the local objective's (Riemannian, for FedPG) gradient at the
    /// returned iterate; small values mean the local solve was accurate.
    pub local_grad_norm: f64,
}

impl DualBoundCheck {
    pub fn holds(&self) -> bool {
        let rhs = self.lipschitz * self.primal_change + self.slack;
        self.dual_change <= rhs + 1e-12 * rhs.max(1.0)
    }
}

#[derive(Clone, Debug)]
pub struct RoundOutcome {
    pub record: RoundRecord,
    pub dual_checks: Vec<DualBoundCheck>,
}

/// Runs `f(0), …, f(n − 1)` and returns the results in index order.
pub trait Executor: Sync {
    fn map<T: Send, F: Fn(usize) -> T + Sync + Send>(&self, n: usize, f: F) -> Vec<T>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T: Send, F: Fn(usize) -> T + Sync + Send>(&self, n: usize, f: F) -> Vec<T> {
        (0..n).map(f).collect()
    }
}

/// Monotonic seconds, for the `wall_time` field.
pub trait Clock {
    fn now(&self) -> f64;
}

/// Always zero, so that histories are byte-identical across runs.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

/// `max(1, round(fraction·n))` distinct ids drawn uniformly without
/// replacement from the stream keyed by `(seed, round)`, ascending.
pub fn sample_clients(n_clients: usize, fraction: f64, seed: u64, round: usize) -> Vec<usize> {
    let m = (libm::round(fraction * n_clients as f64) as usize).clamp(1, n_clients.max(1));
    if m >= n_clients {
        return (0..n_clients).collect();
    }
    let mut stream = rng::keyed(seed, Domain::Sampling, round as u64, 0);
    let mut ids = rand::seq::index::sample(&mut stream, n_clients, m).into_vec();
    ids.sort_unstable();
    ids
}

/// `(1/|S|)·Σ_{i∈S} (U_i + Y_i/ρ_i)`, summed in the given order.
pub fn consensus_update<'a>(sampled: impl IntoIterator<Item = &'a ClientState>) -> Result<DenseMatrix> {
    let mut iter = sampled.into_iter();
    let first = iter.next().ok_or(Error::EmptySample)?;
    let mut z = first.u.clone();
    z.axpy(1.0 / first.rho, &first.y)?;
    let mut count = 1usize;
    for c in iter {
        z.axpy(1.0, &c.u)?;
        z.axpy(1.0 / c.rho, &c.y)?;
        count += 1;
    }
    Ok(z.scale(1.0 / count as f64))
}

/// `Y ← Y + ρ(U − Z)`; FedPE also updates `T ← T + ρ·h(U)`.
pub fn dual_update(client: &mut ClientState, z: &DenseMatrix, algorithm: Algorithm, round: usize) -> Result<()> {
    client.y.axpy(client.rho, &client.u.sub(z)?)?;
    if algorithm == Algorithm::FedPE {
        let h = objectives::h_constraint(&client.u);
        client.t.axpy(client.rho, &h)?;
    }
    client.last_updated_round = Some(round);
    Ok(())
}

/// Augmented Lagrangian summed over all clients. The FedPG variant omits the
/// surrogate terms, which vanish on the manifold.
pub fn augmented_lagrangian(clients: &[ClientState], z: &DenseMatrix, hp: &Hyperparams) -> Result<f64> {
    let mut total = 0.0;
    for c in clients {
        let p = c.problem(z, hp)?;
        let v = match hp.algorithm {
            Algorithm::FedPE => objectives::fedpe_local_value(&p, &c.u),
            Algorithm::FedPG => objectives::fedpg_local_value(&p, &c.u),
        }
        .map_err(|e| e.for_client(c.id))?;
        total += v;
    }
    Ok(total)
}

fn local_gradient(p: &LocalProblem, u: &DenseMatrix, algorithm: Algorithm) -> Result<DenseMatrix> {
    match algorithm {
        Algorithm::FedPE => objectives::fedpe_local_grad(p, u),
        Algorithm::FedPG => {
            let basis = Basis::with_tolerance(u.clone(), MANIFOLD_TOL)?;
            objectives::fedpg_riemannian_grad(p, &basis)
        }
    }
}

/// `Σ_i ‖U_i − Z‖² + Σ_i ‖∇_{U_i} 𝓛‖²`, with the Riemannian gradient for
/// FedPG.
pub fn stationarity_gap(clients: &[ClientState], z: &DenseMatrix, hp: &Hyperparams) -> Result<f64> {
    let mut total = 0.0;
    for c in clients {
        let p = c.problem(z, hp)?;
        let g = local_gradient(&p, &c.u, hp.algorithm).map_err(|e| e.for_client(c.id))?;
        total += c.u.sub(z)?.frobenius_norm_sq() + g.frobenius_norm_sq();
    }
    Ok(total)
}

/// `Σ_i ‖U_i − Z‖²`
pub fn consensus_residual(clients: &[ClientState], z: &DenseMatrix) -> Result<f64> {
    let mut total = 0.0;
    for c in clients {
        total += c.u.sub(z)?.frobenius_norm_sq();
    }
    Ok(total)
}

/// Gradient of the data term alone. FedPG uses `f` with `UᵀU = I`
/// substituted.
fn data_gradient(gram: &DenseMatrix, u: &DenseMatrix, algorithm: Algorithm) -> Result<DenseMatrix> {
    match algorithm {
        Algorithm::FedPE => objectives::f_grad(gram, u),
        Algorithm::FedPG => Ok(gram.matmul(u)?.scale(-2.0)),
    }
}

fn local_solve(client: &ClientState, z: &DenseMatrix, hp: &Hyperparams) -> Result<(DenseMatrix, f64)> {
    let p = client.problem(z, hp)?;
    let u = match hp.algorithm {
        Algorithm::FedPE => objectives::solve_local_fedpe(&p, &client.u)?,
        Algorithm::FedPG => {
            let start = Basis::with_tolerance(client.u.clone(), MANIFOLD_TOL)?;
            let mut out = objectives::solve_local_fedpg(&p, &start)?;
            if hp.align_representatives {
                out = objectives::align_to_consensus(&p, &out)?;
            }
            out.into_matrix()
        }
    };
    let grad_norm = local_gradient(&p, &u, hp.algorithm)?.frobenius_norm();
    Ok((u, grad_norm))
}

/// Client and server state of one training run, advanced round by round.
#[derive(Clone, Debug)]
pub struct Federation {
    pub hp: Hyperparams,
    pub server: ServerState,
    /// Sorted by id.
    pub clients: Vec<ClientState>,
}

impl Federation {
    pub fn new(datasets: &[ClientDataset], hp: &Hyperparams) -> Result<Self> {
        hp.validate()?;
        let first = datasets.first().ok_or(Error::TooFewSamples { needed: 1, found: 0 })?;
        let d = first.dim();
        if hp.k > d {
            return Err(Error::InvalidArgument("rank k exceeds the feature dimension"));
        }
        if let Some(r) = &hp.client_rho {
            if r.len() != datasets.len() {
                return Err(Error::DimensionMismatch {
                    op: "client_rho",
                    expected: (datasets.len(), 1),
                    found: (r.len(), 1),
                });
            }
        }
        let mut order: Vec<usize> = (0..datasets.len()).collect();
        order.sort_by_key(|&i| datasets[i].id);
        if order.windows(2).any(|w| datasets[w[0]].id == datasets[w[1]].id) {
            return Err(Error::InvalidArgument("client ids must be unique"));
        }

        let init = |minor: u64| -> Result<DenseMatrix> {
            let mut stream = rng::keyed(hp.seed, Domain::Init, minor, 0);
            let g = rng::gaussian_matrix(&mut stream, d, hp.k);
            Ok(qr_thin_recovering(&g, hp.seed, minor)?.0.into_matrix())
        };
        let z = init(0)?;

        let mut clients = Vec::with_capacity(datasets.len());
        for &pos in &order {
            let ds = &datasets[pos];
            let annotate = |e: Error| e.for_client(ds.id);
            if ds.dim() != d {
                return Err(annotate(Error::DimensionMismatch {
                    op: "client features",
                    expected: (d, ds.len()),
                    found: ds.features.shape(),
                }));
            }
            if ds.is_empty() {
                return Err(annotate(Error::TooFewSamples { needed: 1, found: 0 }));
            }
            if !ds.features.is_finite() {
                return Err(annotate(Error::NonFinite("client features")));
            }
            let u = match hp.initialization {
                Initialization::Shared => z.clone(),
                Initialization::Independent => init(1 + ds.id as u64).map_err(annotate)?,
            };
            clients.push(ClientState {
                id: ds.id,
                data: ds.clone(),
                gram: scatter(&ds.features, hp.gram_scaling),
                u,
                y: DenseMatrix::zeros(d, hp.k),
                t: DenseMatrix::zeros(hp.k, hp.k),
                rho: hp.rho_for(pos),
                last_updated_round: None,
                lipschitz_estimate: 0.0,
            });
        }
        Ok(Self {
            hp: hp.clone(),
            server: ServerState { z, round: 0 },
            clients,
        })
    }

    /// Runs the next round.
    pub fn step<E: Executor, C: Clock>(&mut self, exec: &E, clock: &C) -> Result<RoundOutcome> {
        let started = clock.now();
        let round = self.server.round + 1;
        let hp = &self.hp;
        let positions = sample_clients(self.clients.len(), hp.sample_fraction, hp.seed, round);

        let z_prev = &self.server.z;
        let clients = &self.clients;
        let solved = exec.map(positions.len(), |j| {
            let c = &clients[positions[j]];
            local_solve(c, z_prev, hp).map_err(|e| e.for_client(c.id))
        });
        let solved: Vec<(DenseMatrix, f64)> = solved.into_iter().collect::<Result<_>>()?;

        let mut previous = Vec::with_capacity(positions.len());
        for (&pos, (u, _)) in positions.iter().zip(&solved) {
            let c = &mut self.clients[pos];
            previous.push((c.u.clone(), c.y.clone()));
            c.u = u.clone();
        }
        let z = consensus_update(positions.iter().map(|&p| &self.clients[p]))?;
        if !z.is_finite() {
            return Err(Error::NonFinite("consensus"));
        }

        let mut dual_checks = Vec::with_capacity(positions.len());
        for ((&pos, (_, grad_norm)), (u_old, y_old)) in positions.iter().zip(&solved).zip(previous) {
            let c = &mut self.clients[pos];
            dual_update(c, &z, hp.algorithm, round)?;
            dual_checks.push(dual_bound_check(c, &u_old, &y_old, *grad_norm, hp.algorithm)?);
        }

        self.server = ServerState { z, round };
        let record = RoundRecord {
            round,
            sampled: positions.iter().map(|&p| self.clients[p].id).collect(),
            lagrangian: augmented_lagrangian(&self.clients, &self.server.z, hp)?,
            consensus_residual: consensus_residual(&self.clients, &self.server.z)?,
            stationarity_gap: stationarity_gap(&self.clients, &self.server.z, hp)?,
            wall_time: clock.now() - started,
        };
        Ok(RoundOutcome { record, dual_checks })
    }

    /// `qr(Z).Q`
    pub fn consensus_basis(&self) -> Result<Basis> {
        Ok(qr_thin_recovering(&self.server.z, self.hp.seed, self.server.round as u64)?.0)
    }

    /// `Σ_i f_i(qr(Z).Q)`, the training objective of the current consensus.
    pub fn global_objective(&self) -> Result<f64> {
        let basis = self.consensus_basis()?;
        let mut total = 0.0;
        for c in &self.clients {
            total += objectives::f_value(&c.gram, basis.matrix())?;
        }
        Ok(total)
    }
}

fn dual_bound_check(
    c: &mut ClientState,
    u_old: &DenseMatrix,
    y_old: &DenseMatrix,
    local_grad_norm: f64,
    algorithm: Algorithm,
) -> Result<DualBoundCheck> {
    let g_new = data_gradient(&c.gram, &c.u, algorithm)?;
    let g_old = data_gradient(&c.gram, u_old, algorithm)?;
    let primal_change = c.u.sub(u_old)?.frobenius_norm();
    if primal_change > 0.0 {
        let ratio = g_new.sub(&g_old)?.frobenius_norm() / primal_change;
        c.lipschitz_estimate = c.lipschitz_estimate.max(ratio);
    }
    let slack = g_new.add(&c.y)?.frobenius_norm() + g_old.add(y_old)?.frobenius_norm();
    Ok(DualBoundCheck {
        client: c.id,
        dual_change: c.y.sub(y_old)?.frobenius_norm(),
        primal_change,
        lipschitz: c.lipschitz_estimate,
        slack,
        local_grad_norm,
    })
}

#[derive(Clone, Debug)]
pub struct TrainingRun {
    /// Orthonormalized final consensus.
    pub basis: Basis,
    pub history: Vec<RoundRecord>,
    pub dual_checks: Vec<Vec<DualBoundCheck>>,
    pub federation: Federation,
}

/// Initializes the federation and runs `hp.rounds` rounds.
pub fn run_training_with<E: Executor, C: Clock>(
    datasets: &[ClientDataset],
    hp: &Hyperparams,
    exec: &E,
    clock: &C,
) -> Result<TrainingRun> {
    let mut fed = Federation::new(datasets, hp)?;
    let mut history = Vec::with_capacity(hp.rounds);
    let mut dual_checks = Vec::with_capacity(hp.rounds);
    for _ in 0..hp.rounds {
        let outcome = fed.step(exec, clock)?;
        history.push(outcome.record);
        dual_checks.push(outcome.dual_checks);
    }
    Ok(TrainingRun {
        basis: fed.consensus_basis()?,
        history,
        dual_checks,
        federation: fed,
    })
}

/// [`run_training_with`] on the calling thread, without timing.
pub fn run_training(datasets: &[ClientDataset], hp: &Hyperparams) -> Result<TrainingRun> {
    run_training_with(datasets, hp, &Sequential, &NoClock)
}

//! Stochastic reconfiguration restricted to unmasked coordinates.
//!
//! With sample weights `w_s`, `X = D^{1/2}(O − 1Ōᵀ)` and
//! `b = 2 D^{1/2}(E_loc − Ē)`, the covariance is `S = XᵀX` and the energy
//! gradient is `g = Xᵀb`. The dense path factorizes whichever of `XᵀX + λI`
//! (parameter space) and `XXᵀ + λI` (sample space) is smaller; both give the
//! same `δ = (S + λI)⁻¹ g`.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use rayon::prelude::*;

use crate::ansatz::{Architecture, MaskedAnsatz};
use crate::error::{NqsError, Result};
use crate::hamiltonian::Hamiltonian;
use crate::lattice::SpinConfig;
use crate::observables::energy_stats;
use crate::sampler::{SampleBatch, Sampler, SamplerConfig};

pub const DEFAULT_DENSE_THRESHOLD: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SolverKind {
    /// Cholesky up to `dense_threshold` unmasked parameters, CG above.
    DenseCholesky,
    ConjugateGradient { tol: f64, max_iter: usize },
}

impl SolverKind {
    pub fn cg_default() -> Self {
        SolverKind::ConjugateGradient {
            tol: 1e-6,
            max_iter: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SrConfig {
    pub eta: f64,
    pub lambda: f64,
    pub solver: SolverKind,
    pub dense_threshold: usize,
}

impl SrConfig {
    pub fn new(eta: f64, lambda: f64) -> Self {
        SrConfig {
            eta,
            lambda,
            solver: SolverKind::DenseCholesky,
            dense_threshold: DEFAULT_DENSE_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            errors.push(format!("sr.eta must be finite and non-negative, got {}", self.eta));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            errors.push(format!("sr.lambda must be finite and positive, got {}", self.lambda));
        }
        if let SolverKind::ConjugateGradient { tol, max_iter } = self.solver {
            if !(tol > 0.0 && tol.is_finite()) || max_iter == 0 {
                errors.push("sr.cg_tol must be positive and sr.cg_max_iter nonzero".into());
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(NqsError::Validation(errors))
        }
    }
}

impl Default for SrConfig {
    fn default() -> Self {
        SrConfig::new(8e-3, 1e-4)
    }
}

#[derive(Clone, Debug)]
enum Derivatives {
    /// `N_s × n` row-major.
    Dense(Vec<f64>),
    /// Full-mask FFNN: `O_s[(i, j)] = a_{s,i} σ_{s,j}`.
    Factorized {
        active: Vec<f64>,
        spins: Vec<f64>,
        hidden: usize,
        inputs: usize,
    },
}

/// Log-derivatives and local energies of one batch, with sample weights.
#[derive(Clone, Debug)]
pub struct EstimatorSet {
    n_samples: usize,
    n_params: usize,
    weights: Vec<f64>,
    derivs: Derivatives,
    e_loc: Vec<f64>,
    o_mean: Vec<f64>,
    e_mean: f64,
}

impl EstimatorSet {
    /// Uniformly weighted set from an explicit `N_s × n` row-major matrix.
    pub fn from_dense(o: Vec<f64>, n_params: usize, e_loc: Vec<f64>) -> Result<Self> {
        let ns = e_loc.len();
        let w = vec![1.0 / ns as f64; ns];
        Self::weighted(o, n_params, e_loc, w)
    }

    /// Explicit matrix with weights; weights are normalized to sum to one.
    pub fn weighted(o: Vec<f64>, n_params: usize, e_loc: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let ns = e_loc.len();
        if ns == 0 || o.len() != ns * n_params || weights.len() != ns {
            return Err(NqsError::contract(format!(
                "estimator shapes disagree: {} samples, {} weights, {} derivative entries for {} parameters",
                ns,
                weights.len(),
                o.len(),
                n_params
            )));
        }
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut o_mean = vec![0.0; n_params];
        for (row, &w) in o.chunks_exact(n_params.max(1)).zip(&weights) {
            for (m, &x) in o_mean.iter_mut().zip(row) {
                *m += w * x;
            }
        }
        let e_mean = weights.iter().zip(&e_loc).map(|(w, e)| w * e).sum();
        Ok(EstimatorSet {
            n_samples: ns,
            n_params,
            weights,
            derivs: Derivatives::Dense(o),
            e_loc,
            o_mean,
            e_mean,
        })
    }

    /// Monte Carlo estimators over a batch drawn from `|ψ|²`.
    pub fn from_batch(h: &Hamiltonian, ansatz: &MaskedAnsatz, batch: &SampleBatch) -> Result<Self> {
        let ns = batch.len();
        Self::build(h, ansatz, &batch.configs, vec![1.0 / ns as f64; ns])
    }

    /// Exact estimators: every configuration weighted by `|ψ(σ)|² / Z`.
    pub fn from_enumeration(h: &Hamiltonian, ansatz: &MaskedAnsatz) -> Result<Self> {
        let n = h.n_sites();
        let cells = (1usize << n.min(40)).saturating_mul(ansatz.unmasked().len().max(1));
        if n > crate::oracle::MAX_ENUMERATION_SITES || cells > 1 << 27 {
            return Err(NqsError::Capacity {
                what: "enumerated estimator set",
                limit: 1 << 27,
                requested: cells,
            });
        }
        let configs: Vec<SpinConfig> = (0..1usize << n).map(|k| SpinConfig::from_index(k, n)).collect();
        let log_psi: Vec<f64> = configs.iter().map(|c| ansatz.activations(c.as_slice()).log_psi).collect();
        let max = log_psi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights = log_psi.iter().map(|l| (2.0 * (l - max)).exp()).collect();
        Self::build(h, ansatz, &configs, weights)
    }

    fn build(
        h: &Hamiltonian,
        ansatz: &MaskedAnsatz,
        configs: &[SpinConfig],
        weights: Vec<f64>,
    ) -> Result<Self> {
        let ns = configs.len();
        let n_params = ansatz.unmasked().len();
        let factorized = matches!(ansatz.architecture(), Architecture::Ffnn { .. })
            && n_params == ansatz.n_params();
        let rows: Vec<(f64, Vec<f64>)> = configs
            .par_iter()
            .map_init(Vec::new, |scratch, sigma| {
                let s = sigma.as_slice();
                let act = ansatz.activations(s);
                let e = h.local_energy_with(ansatz, s, &act, scratch);
                let row = if factorized {
                    ansatz.active_units(&act).expect("ffnn")
                } else {
                    let mut row = vec![0.0; n_params];
                    ansatz.fill_log_derivatives(s, &act, &mut row);
                    row
                };
                (e, row)
            })
            .collect();
        if let Some(pos) = rows.iter().position(|(e, _)| !e.is_finite()) {
            return Err(NqsError::NonFinite {
                value: rows[pos].0,
                config: configs[pos].as_slice().to_vec(),
            });
        }
        let e_loc: Vec<f64> = rows.iter().map(|(e, _)| *e).collect();
        let mut flat = Vec::with_capacity(ns * rows.first().map_or(0, |r| r.1.len()));
        for (_, row) in rows {
            flat.extend(row);
        }
        if !factorized {
            return Self::weighted(flat, n_params, e_loc, weights);
        }
        let Architecture::Ffnn { inputs, hidden } = *ansatz.architecture() else {
            unreachable!()
        };
        let spins: Vec<f64> = configs
            .iter()
            .flat_map(|c| c.as_slice().iter().map(|&x| x as f64))
            .collect();
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let e_mean = weights.iter().zip(&e_loc).map(|(w, e)| w * e).sum();
        let mut set = EstimatorSet {
            n_samples: ns,
            n_params,
            weights,
            derivs: Derivatives::Factorized {
                active: flat,
                spins,
                hidden,
                inputs,
            },
            e_loc,
            o_mean: Vec::new(),
            e_mean,
        };
        let w = set.weights.clone();
        set.o_mean = set.transpose_apply(&w);
        Ok(set)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn local_energies(&self) -> &[f64] {
        &self.e_loc
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weighted mean of the local energy.
    pub fn mean_energy(&self) -> f64 {
        self.e_mean
    }

    pub fn mean_derivatives(&self) -> &[f64] {
        &self.o_mean
    }

    /// Weighted `⟨E_loc²⟩ − ⟨E_loc⟩²`.
    pub fn weighted_variance(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.e_loc)
            .map(|(w, e)| w * (e - self.e_mean).powi(2))
            .sum()
    }

    pub fn derivative_row(&self, s: usize) -> Vec<f64> {
        match &self.derivs {
            Derivatives::Dense(o) => o[s * self.n_params..(s + 1) * self.n_params].to_vec(),
            Derivatives::Factorized {
                active,
                spins,
                hidden,
                inputs,
            } => {
                let a = &active[s * hidden..(s + 1) * hidden];
                let sg = &spins[s * inputs..(s + 1) * inputs];
                a.iter().flat_map(|&ai| sg.iter().map(move |&x| ai * x)).collect()
            }
        }
    }

    /// `O v` (raw, uncentered).
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        match &self.derivs {
            Derivatives::Dense(o) => o
                .chunks_exact(self.n_params.max(1))
                .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
                .collect(),
            Derivatives::Factorized {
                active,
                spins,
                hidden,
                inputs,
            } => {
                // (Σ Vᵀ)_{s,i} = Σ_j σ_{s,j} V_{i,j}
                let sm = mat_rows(spins, self.n_samples, *inputs);
                let vt = Mat::from_fn(*inputs, *hidden, |j, i| v[i * inputs + j]);
                let p = &sm * &vt;
                (0..self.n_samples)
                    .map(|s| {
                        let a = &active[s * hidden..(s + 1) * hidden];
                        a.iter().enumerate().map(|(i, &ai)| ai * p[(s, i)]).sum()
                    })
                    .collect()
            }
        }
    }

    /// `Oᵀ t` (raw, uncentered).
    fn transpose_apply(&self, t: &[f64]) -> Vec<f64> {
        match &self.derivs {
            Derivatives::Dense(o) => {
                let mut out = vec![0.0; self.n_params];
                for (row, &ts) in o.chunks_exact(self.n_params.max(1)).zip(t) {
                    if ts != 0.0 {
                        for (acc, &x) in out.iter_mut().zip(row) {
                            *acc += ts * x;
                        }
                    }
                }
                out
            }
            Derivatives::Factorized {
                active,
                spins,
                hidden,
                inputs,
            } => {
                let at = Mat::from_fn(*hidden, self.n_samples, |i, s| active[s * hidden + i] * t[s]);
                let sm = mat_rows(spins, self.n_samples, *inputs);
                let g = &at * &sm;
                let mut out = vec![0.0; self.n_params];
                for i in 0..*hidden {
                    for j in 0..*inputs {
                        out[i * inputs + j] = g[(i, j)];
                    }
                }
                out
            }
        }
    }

    fn centered_residuals(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.e_loc)
            .map(|(w, e)| w * (e - self.e_mean))
            .collect()
    }

    /// `Σ_k S_kk`, one pass.
    fn s_diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n_params];
        for s in 0..self.n_samples {
            let row = self.derivative_row(s);
            let w = self.weights[s];
            for ((acc, &x), &m) in d.iter_mut().zip(&row).zip(&self.o_mean) {
                *acc += w * (x - m) * (x - m);
            }
        }
        d
    }

    /// `S v` without forming `S`.
    pub fn s_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.n_params {
            return Err(NqsError::contract(format!(
                "vector has {} entries, estimator set has {} parameters",
                v.len(),
                self.n_params
            )));
        }
        Ok(self.s_matvec_unchecked(v))
    }

    fn s_matvec_unchecked(&self, v: &[f64]) -> Vec<f64> {
        let ov = self.apply(v);
        let mv: f64 = self.o_mean.iter().zip(v).map(|(a, b)| a * b).sum();
        let t: Vec<f64> = ov
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * (x - mv))
            .collect();
        let tsum: f64 = t.iter().sum();
        let mut out = self.transpose_apply(&t);
        for (o, m) in out.iter_mut().zip(&self.o_mean) {
            *o -= m * tsum;
        }
        out
    }

    /// Dense `S`, for tests and small problems.
    pub fn s_matrix(&self) -> Vec<f64> {
        let n = self.n_params;
        let mut s_mat = vec![0.0; n * n];
        for s in 0..self.n_samples {
            let row = self.derivative_row(s);
            let w = self.weights[s];
            let c: Vec<f64> = row.iter().zip(&self.o_mean).map(|(x, m)| x - m).collect();
            for a in 0..n {
                for b in 0..n {
                    s_mat[a * n + b] += w * c[a] * c[b];
                }
            }
        }
        s_mat
    }

    /// `X` as an `N_s × n` matrix.
    fn x_matrix(&self) -> Mat<f64> {
        let sw: Vec<f64> = self.weights.iter().map(|w| w.sqrt()).collect();
        match &self.derivs {
            Derivatives::Dense(o) => Mat::from_fn(self.n_samples, self.n_params, |s, k| {
                sw[s] * (o[s * self.n_params + k] - self.o_mean[k])
            }),
            Derivatives::Factorized { .. } => {
                let mut x = Mat::zeros(self.n_samples, self.n_params);
                for s in 0..self.n_samples {
                    let row = self.derivative_row(s);
                    for k in 0..self.n_params {
                        x[(s, k)] = sw[s] * (row[k] - self.o_mean[k]);
                    }
                }
                x
            }
        }
    }

    /// `XXᵀ`.
    fn sample_kernel(&self) -> Mat<f64> {
        let ns = self.n_samples;
        let sw: Vec<f64> = self.weights.iter().map(|w| w.sqrt()).collect();
        match &self.derivs {
            Derivatives::Factorized {
                active,
                spins,
                hidden,
                inputs,
            } => {
                let a = mat_rows(active, ns, *hidden);
                let sm = mat_rows(spins, ns, *inputs);
                let aa = &a * a.transpose();
                let ss = &sm * sm.transpose();
                let raw = Mat::from_fn(ns, ns, |s, t| aa[(s, t)] * ss[(s, t)]);
                let r: Vec<f64> = (0..ns)
                    .map(|s| (0..ns).map(|t| raw[(s, t)] * self.weights[t]).sum())
                    .collect();
                let q: f64 = r.iter().zip(&self.weights).map(|(a, b)| a * b).sum();
                Mat::from_fn(ns, ns, |s, t| sw[s] * sw[t] * (raw[(s, t)] - r[s] - r[t] + q))
            }
            Derivatives::Dense(_) => {
                let x = self.x_matrix();
                &x * x.transpose()
            }
        }
    }
}

fn mat_rows(data: &[f64], rows: usize, cols: usize) -> Mat<f64> {
    Mat::from_fn(rows, cols, |r, c| data[r * cols + c])
}

/// `g_k = 2 (⟨O_k E_loc⟩ − ⟨O_k⟩⟨E_loc⟩)`.
pub fn estimate_gradient(est: &EstimatorSet) -> Vec<f64> {
    let t: Vec<f64> = est.centered_residuals();
    let mut g = est.transpose_apply(&t);
    // Σ_s w_s (E_s − Ē) = 0 exactly, so centering O is implicit; the
    // subtraction below removes the rounding residue.
    let tsum: f64 = t.iter().sum();
    for (gk, m) in g.iter_mut().zip(&est.o_mean) {
        *gk = 2.0 * (*gk - m * tsum);
    }
    g
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveMethod {
    ParameterSpace,
    SampleSpace,
    ConjugateGradient,
}

#[derive(Clone, Debug)]
pub struct SrSolution {
    pub delta: Vec<f64>,
    pub method: SolveMethod,
    pub lambda_used: f64,
    pub cg_iterations: usize,
}

/// Solves `(S + λI) δ = g` for the estimator set's own gradient.
pub fn solve(est: &EstimatorSet, cfg: &SrConfig) -> Result<SrSolution> {
    let g = estimate_gradient(est);
    solve_inner(est, &g, true, cfg)
}

/// Solves `(S + λI) δ = g` for an arbitrary right-hand side. The
/// sample-space route needs `g ∈ range(Xᵀ)` and is not used here.
pub fn solve_for(est: &EstimatorSet, gradient: &[f64], cfg: &SrConfig) -> Result<SrSolution> {
    solve_inner(est, gradient, false, cfg)
}

fn solve_inner(est: &EstimatorSet, gradient: &[f64], own_gradient: bool, cfg: &SrConfig) -> Result<SrSolution> {
    let n = est.n_params;
    if gradient.len() != n {
        return Err(NqsError::contract("gradient length differs from estimator set"));
    }
    let use_cg = matches!(cfg.solver, SolverKind::ConjugateGradient { .. }) || n > cfg.dense_threshold;
    if use_cg {
        let (tol, max_iter) = match cfg.solver {
            SolverKind::ConjugateGradient { tol, max_iter } => (tol, max_iter),
            SolverKind::DenseCholesky => (1e-6, 1000),
        };
        let (delta, iterations) = conjugate_gradient(est, gradient, cfg.lambda, tol, max_iter)?;
        return Ok(SrSolution {
            delta,
            method: SolveMethod::ConjugateGradient,
            lambda_used: cfg.lambda,
            cg_iterations: iterations,
        });
    }
    let parameter_space = n <= est.n_samples || !own_gradient;
    let lhs = if parameter_space {
        let x = est.x_matrix();
        x.transpose() * &x
    } else {
        est.sample_kernel()
    };
    let dim = lhs.nrows();
    let rhs = if parameter_space {
        Mat::from_fn(n, 1, |k, _| gradient[k])
    } else {
        let b = est.centered_residuals();
        // b = 2√w (E − Ē)
        Mat::from_fn(dim, 1, |s, _| {
            let w = est.weights[s];
            if w > 0.0 {
                2.0 * b[s] / w.sqrt()
            } else {
                0.0
            }
        })
    };
    let mut lambda = cfg.lambda;
    let mut attempt = 0;
    let y = loop {
        let mut shifted = lhs.clone();
        for i in 0..dim {
            shifted[(i, i)] += lambda;
        }
        match shifted.llt(Side::Lower) {
            Ok(llt) => break llt.solve(&rhs),
            Err(_) if attempt == 0 => {
                log::warn!("Cholesky factorization failed at lambda={lambda:e}; retrying with {:e}", lambda * 10.0);
                lambda *= 10.0;
                attempt += 1;
            }
            Err(_) => {
                return Err(NqsError::Numerical(format!(
                    "Cholesky factorization failed at lambda={lambda:e}"
                )))
            }
        }
    };
    let delta = if parameter_space {
        (0..n).map(|k| y[(k, 0)]).collect()
    } else {
        // δ = Xᵀ y
        let sw_y: Vec<f64> = (0..dim).map(|s| est.weights[s].sqrt() * y[(s, 0)]).collect();
        let total: f64 = sw_y.iter().sum();
        let mut d = est.transpose_apply(&sw_y);
        for (dk, m) in d.iter_mut().zip(&est.o_mean) {
            *dk -= m * total;
        }
        d
    };
    Ok(SrSolution {
        delta,
        method: if parameter_space {
            SolveMethod::ParameterSpace
        } else {
            SolveMethod::SampleSpace
        },
        lambda_used: lambda,
        cg_iterations: 0,
    })
}

/// Jacobi-preconditioned CG on `(S + λI) δ = g`; stops at `‖r‖ ≤ tol·‖g‖`.
pub fn conjugate_gradient(
    est: &EstimatorSet,
    g: &[f64],
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = g.len();
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let g_norm = dot(g, g).sqrt();
    let mut x = vec![0.0; n];
    if g_norm == 0.0 {
        return Ok((x, 0));
    }
    let precond: Vec<f64> = est.s_diagonal().iter().map(|d| 1.0 / (d + lambda)).collect();
    let mut r = g.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&precond).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        let mut ap = est.s_matvec_unchecked(&p);
        for (a, pk) in ap.iter_mut().zip(&p) {
            *a += lambda * pk;
        }
        let alpha = rz / dot(&p, &ap);
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let res = dot(&r, &r).sqrt();
        if res <= tol * g_norm {
            return Ok((x, it));
        }
        if !res.is_finite() {
            return Err(NqsError::CgNotConverged {
                iterations: it,
                residual: res,
            });
        }
        for k in 0..n {
            z[k] = r[k] * precond[k];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(NqsError::CgNotConverged {
        iterations: max_iter,
        residual: dot(&r, &r).sqrt(),
    })
}

/// `θ ← θ − η (S + λI)⁻¹ g` on the unmasked coordinates.
pub fn sr_update(ansatz: &MaskedAnsatz, est: &EstimatorSet, cfg: &SrConfig) -> Result<MaskedAnsatz> {
    if est.n_params != ansatz.unmasked().len() {
        return Err(NqsError::contract(format!(
            "estimator set has {} parameters, ansatz has {} unmasked",
            est.n_params,
            ansatz.unmasked().len()
        )));
    }
    let sol = solve(est, cfg)?;
    let values: Vec<f64> = ansatz
        .unmasked_params()
        .iter()
        .zip(&sol.delta)
        .map(|(t, d)| t - cfg.eta * d)
        .collect();
    ansatz.with_unmasked_params(&values)
}

/// Energy statistics of one optimization step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub energy: f64,
    pub variance: f64,
    pub acceptance_rate: f64,
}

/// Runs `steps` SR steps with fresh chains seeded from `sampler_cfg`.
pub fn train(
    ansatz: &MaskedAnsatz,
    h: &Hamiltonian,
    sampler_cfg: &SamplerConfig,
    sr_cfg: &SrConfig,
    steps: usize,
) -> Result<(MaskedAnsatz, Vec<StepRecord>)> {
    let mut sampler = Sampler::new(sampler_cfg.clone(), &h.lattice())?;
    let mut trace = Vec::with_capacity(steps);
    let out = train_with(ansatz, h, &mut sampler, sr_cfg, steps, |_, rec| trace.push(*rec))?;
    Ok((out, trace))
}

/// As [`train`], with persistent chains and a per-step callback.
pub fn train_with<F: FnMut(usize, &StepRecord)>(
    ansatz: &MaskedAnsatz,
    h: &Hamiltonian,
    sampler: &mut Sampler,
    sr_cfg: &SrConfig,
    steps: usize,
    mut on_step: F,
) -> Result<MaskedAnsatz> {
    if steps == 0 {
        return Err(NqsError::contract("train needs at least one step"));
    }
    sr_cfg.validate()?;
    let mut current = ansatz.clone();
    for step in 0..steps {
        let diverged = |current: &MaskedAnsatz| NqsError::Diverged {
            step,
            last_finite: Box::new(current.clone()),
        };
        let batch = match sampler.sample(&current) {
            Ok(b) => b,
            Err(NqsError::NonFinite { .. }) => return Err(diverged(&current)),
            Err(e) => return Err(e),
        };
        let est = match EstimatorSet::from_batch(h, &current, &batch) {
            Ok(e) => e,
            Err(NqsError::NonFinite { .. }) => return Err(diverged(&current)),
            Err(e) => return Err(e),
        };
        let (energy, variance, _) = energy_stats(est.local_energies())?;
        if !energy.is_finite() || !variance.is_finite() {
            return Err(diverged(&current));
        }
        on_step(
            step,
            &StepRecord {
                energy,
                variance,
                acceptance_rate: batch.acceptance_rate,
            },
        );
        let next = sr_update(&current, &est, sr_cfg)?;
        if next.params().iter().any(|p| !p.is_finite()) {
            return Err(diverged(&current));
        }
        current = next;
    }
    Ok(current)
}

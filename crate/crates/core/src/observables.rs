//! Energy statistics, errors against a reference, magnetizations and the
//! overlap between two sampled states.

use serde::{Deserialize, Serialize};

use crate::ansatz::MaskedAnsatz;
use crate::error::{NqsError, Result};
use crate::hamiltonian::Hamiltonian;
use crate::sampler::SampleBatch;

/// One row of the per-iteration metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub n: usize,
    pub rho: f64,
    #[serde(rename = "E")]
    pub energy: f64,
    pub var: f64,
    pub stat_err: f64,
    /// Absent when no exact reference energy is known.
    pub rel_err: Option<f64>,
    pub abs_err_per_spin: Option<f64>,
    pub m_x: f64,
    pub m_z: f64,
    pub fidelity: Option<f64>,
}

/// Sample mean, unbiased sample variance and `sqrt(var / N_s)`.
pub fn energy_stats(values: &[f64]) -> Result<(f64, f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(NqsError::contract("energy statistics need at least two samples"));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok((mean, var, (var / n as f64).sqrt()))
}

/// `|E_ref − E| / |E_ref|`.
pub fn relative_error(energy: f64, reference: f64) -> Result<f64> {
    if reference == 0.0 {
        return Err(NqsError::UndefinedReference);
    }
    Ok(((reference - energy) / reference).abs())
}

pub fn absolute_error_per_spin(energy: f64, reference: f64, n_sites: usize) -> f64 {
    (reference - energy).abs() / n_sites as f64
}

/// Mean and standard error of a sample.
pub fn mean_and_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn magnetization_z_samples(batch: &SampleBatch) -> Vec<f64> {
    batch.configs.iter().map(|c| c.magnetization()).collect()
}

/// Mean over samples of `Σ_i σ_i / N`.
pub fn magnetization_z(batch: &SampleBatch) -> f64 {
    mean_and_error(&magnetization_z_samples(batch)).0
}

pub fn magnetization_x_samples(ansatz: &MaskedAnsatz, batch: &SampleBatch) -> Vec<f64> {
    let n = ansatz.n_sites() as f64;
    let mut scratch = Vec::new();
    batch
        .configs
        .iter()
        .map(|c| {
            let s = c.as_slice();
            let act = ansatz.activations(s);
            Hamiltonian::single_flip_ratio_sum(ansatz, s, &act, &mut scratch) / n
        })
        .collect()
}

/// Mean over samples of `Σ_i ψ(σ^{(i)}) / ψ(σ) / N`.
pub fn magnetization_x(ansatz: &MaskedAnsatz, batch: &SampleBatch) -> f64 {
    mean_and_error(&magnetization_x_samples(ansatz, batch)).0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FidelityEstimate {
    /// Clamped to `[0, 1 + 3·stat_err]`, then capped at 1.
    pub value: f64,
    /// `sqrt(max(F̂², 0))` before clamping.
    pub raw: f64,
    pub stat_err: f64,
}

fn log_mean_exp(values: &[f64]) -> (f64, f64) {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let (mean, err) = mean_and_error(&shifted);
    // ln of the mean, and relative standard error
    (max + mean.ln(), err / mean)
}

/// Two-population ratio estimator of `|⟨ψ_a|ψ_b⟩| / (‖ψ_a‖ ‖ψ_b‖)`.
pub fn fidelity(
    a: &MaskedAnsatz,
    b: &MaskedAnsatz,
    batch_a: &SampleBatch,
    batch_b: &SampleBatch,
) -> Result<FidelityEstimate> {
    if a.n_sites() != b.n_sites() {
        return Err(NqsError::contract("fidelity between ansätze of different size"));
    }
    let ratios = |batch: &SampleBatch, own: &MaskedAnsatz, other: &MaskedAnsatz| -> Result<Vec<f64>> {
        batch
            .configs
            .iter()
            .map(|c| {
                let s = c.as_slice();
                let r = other.activations(s).log_psi - own.activations(s).log_psi;
                if r.is_finite() {
                    Ok(r)
                } else {
                    Err(NqsError::NonFinite {
                        value: r,
                        config: s.to_vec(),
                    })
                }
            })
            .collect()
    };
    let ra = ratios(batch_a, a, b)?;
    let rb = ratios(batch_b, b, a)?;
    let (la, ea) = log_mean_exp(&ra);
    let (lb, eb) = log_mean_exp(&rb);
    let f2_log = la + lb;
    let raw = if f2_log.is_nan() { 0.0 } else { (0.5 * f2_log).exp() };
    let rel = (ea * ea + eb * eb).sqrt();
    let stat_err = if rel.is_finite() { 0.5 * raw * rel } else { 0.0 };
    let clamped = raw.clamp(0.0, 1.0 + 3.0 * stat_err);
    Ok(FidelityEstimate {
        value: clamped.min(1.0),
        raw,
        stat_err,
    })
}

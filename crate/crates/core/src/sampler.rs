//! Metropolis–Hastings sampling of `|ψ(σ)|²`.
//!
//! Each chain owns one counter-based random stream keyed by the sampler seed
//! and the chain index, so a batch is bit-identical for a fixed
//! `(seed, n_chains)` whatever the thread count.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ansatz::{Activations, MaskedAnsatz};
use crate::error::{NqsError, Result};
use crate::lattice::{Lattice, SpinConfig};
use crate::rng::{self, Domain};

const REFRESH_EVERY_ACCEPTED: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProposalRule {
    SingleFlip,
    /// Single-spin flip with probability `single_prob`, otherwise all four
    /// edges of a uniformly chosen dual-lattice plaquette (a vertex star).
    /// Toric lattice only. Star flips commute with every `B_p`, so they move
    /// within the plaquette-satisfying sector; a flip of a primal plaquette's
    /// edges would break its four neighbours.
    MixedPlaquette { single_prob: f64 },
}

impl ProposalRule {
    pub fn default_for(lattice: &Lattice) -> Self {
        match lattice {
            Lattice::Square(_) => ProposalRule::SingleFlip,
            Lattice::Toric(_) => ProposalRule::MixedPlaquette { single_prob: 0.5 },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub n_samples: usize,
    pub n_chains: usize,
    pub burn_in_sweeps: usize,
    /// Proposals between recorded samples; `None` means one sweep of `N`.
    pub sweep_length: Option<usize>,
    pub rule: ProposalRule,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(n_samples: usize, rule: ProposalRule, seed: u64) -> Self {
        SamplerConfig {
            n_samples,
            n_chains: 16,
            burn_in_sweeps: 10,
            sweep_length: None,
            rule,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SamplerConfig {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.n_samples == 0 {
            errors.push("sampler.n_samples must be positive".to_string());
        }
        if self.n_chains == 0 {
            errors.push("sampler.n_chains must be positive".to_string());
        } else if self.n_samples % self.n_chains != 0 {
            errors.push(format!(
                "sampler.n_samples ({}) must be divisible by sampler.n_chains ({})",
                self.n_samples, self.n_chains
            ));
        }
        if self.sweep_length == Some(0) {
            errors.push("sampler.sweep_length must be positive".to_string());
        }
        if let ProposalRule::MixedPlaquette { single_prob } = self.rule {
            if !(0.0..=1.0).contains(&single_prob) {
                errors.push(format!("single-flip probability {single_prob} outside [0, 1]"));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(NqsError::Validation(errors))
        }
    }
}

/// Proposal rule bound to a lattice.
#[derive(Clone, Debug)]
pub struct ProposalKernel {
    rule: ProposalRule,
    n_sites: usize,
    collective: Vec<[usize; 4]>,
}

impl ProposalKernel {
    pub fn new(rule: ProposalRule, lattice: &Lattice) -> Result<Self> {
        let collective = match (rule, lattice) {
            (ProposalRule::SingleFlip, _) => Vec::new(),
            (ProposalRule::MixedPlaquette { .. }, Lattice::Toric(t)) => t.vertices(),
            (ProposalRule::MixedPlaquette { .. }, Lattice::Square(_)) => {
                return Err(NqsError::Config(
                    "plaquette proposals need a toric lattice".into(),
                ))
            }
        };
        Ok(ProposalKernel {
            rule,
            n_sites: lattice.n_sites(),
            collective,
        })
    }

    pub fn propose_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<usize>) {
        out.clear();
        match self.rule {
            ProposalRule::SingleFlip => out.push(rng.random_range(0..self.n_sites)),
            ProposalRule::MixedPlaquette { single_prob } => {
                if rng.random::<f64>() < single_prob {
                    out.push(rng.random_range(0..self.n_sites));
                } else {
                    let p = rng.random_range(0..self.collective.len());
                    out.extend_from_slice(&self.collective[p]);
                }
            }
        }
    }

    /// Every possible flip set with its probability (the moves do not depend on `σ`).
    pub fn distribution(&self) -> Vec<(Vec<usize>, f64)> {
        let n = self.n_sites as f64;
        match self.rule {
            ProposalRule::SingleFlip => (0..self.n_sites).map(|i| (vec![i], 1.0 / n)).collect(),
            ProposalRule::MixedPlaquette { single_prob } => {
                let np = self.collective.len() as f64;
                (0..self.n_sites)
                    .map(|i| (vec![i], single_prob / n))
                    .chain(
                        self.collective
                            .iter()
                            .map(|p| (p.to_vec(), (1.0 - single_prob) / np)),
                    )
                    .collect()
            }
        }
    }
}

pub fn propose<R: Rng + ?Sized>(
    rule: ProposalRule,
    lattice: &Lattice,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let kernel = ProposalKernel::new(rule, lattice)?;
    let mut out = Vec::with_capacity(4);
    kernel.propose_into(rng, &mut out);
    Ok(out)
}

/// `min(1, |ψ(σ')|² / |ψ(σ)|²)` from `Δ = log ψ(σ') − log ψ(σ)`.
pub fn acceptance_probability(delta_log_psi: f64) -> f64 {
    (2.0 * delta_log_psi).exp().min(1.0)
}

/// One Markov chain with its cached forward pass.
#[derive(Clone, Debug)]
pub struct ChainState {
    sigma: SpinConfig,
    act: Activations,
    rng: ChaCha8Rng,
    accepted_since_refresh: usize,
    flips: Vec<usize>,
    scratch: Vec<f64>,
}

impl ChainState {
    pub fn new(ansatz: &MaskedAnsatz, sigma: SpinConfig, rng: ChaCha8Rng) -> Self {
        let act = ansatz.activations(sigma.as_slice());
        ChainState {
            sigma,
            act,
            rng,
            accepted_since_refresh: 0,
            flips: Vec::with_capacity(4),
            scratch: Vec::new(),
        }
    }

    pub fn sigma(&self) -> &SpinConfig {
        &self.sigma
    }

    pub fn log_psi(&self) -> f64 {
        self.act.log_psi
    }

    fn refresh(&mut self, ansatz: &MaskedAnsatz) {
        self.act = ansatz.activations(self.sigma.as_slice());
        self.accepted_since_refresh = 0;
    }
}

/// Proposes one move and accepts it with `min(1, exp(2Δ))`.
pub fn metropolis_step(
    ansatz: &MaskedAnsatz,
    chain: &mut ChainState,
    kernel: &ProposalKernel,
) -> bool {
    kernel.propose_into(&mut chain.rng, &mut chain.flips);
    let delta = ansatz.delta_into(
        chain.sigma.as_slice(),
        &chain.act,
        &chain.flips,
        &mut chain.scratch,
    );
    let accept = delta >= 0.0 || chain.rng.random::<f64>() < (2.0 * delta).exp();
    if accept {
        chain.sigma.flip_in_place(&chain.flips);
        std::mem::swap(&mut chain.act.pre, &mut chain.scratch);
        chain.act.log_psi += delta;
        chain.accepted_since_refresh += 1;
        if chain.accepted_since_refresh >= REFRESH_EVERY_ACCEPTED {
            chain.refresh(ansatz);
        }
    }
    accept
}

#[derive(Clone, Debug)]
pub struct SampleBatch {
    pub configs: Vec<SpinConfig>,
    pub log_psis: Vec<f64>,
    pub acceptance_rate: f64,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    /// No proposal was accepted during the whole batch.
    pub fn is_stuck(&self) -> bool {
        self.acceptance_rate == 0.0
    }
}

/// Chains that persist between batches (one training phase).
#[derive(Clone, Debug)]
pub struct Sampler {
    config: SamplerConfig,
    kernel: ProposalKernel,
    chains: Vec<(SpinConfig, ChaCha8Rng)>,
}

impl Sampler {
    pub fn new(config: SamplerConfig, lattice: &Lattice) -> Result<Self> {
        config.validate()?;
        let kernel = ProposalKernel::new(config.rule, lattice)?;
        let n = lattice.n_sites();
        let chains = (0..config.n_chains)
            .map(|c| {
                let mut rng = rng::stream(config.seed, Domain::Chain, c as u64);
                let sigma = match lattice {
                    Lattice::Square(_) => SpinConfig::random(n, &mut rng),
                    // all-up satisfies every plaquette
                    Lattice::Toric(_) => SpinConfig::all_up(n),
                };
                (sigma, rng)
            })
            .collect();
        Ok(Sampler {
            config,
            kernel,
            chains,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn sample(&mut self, ansatz: &MaskedAnsatz) -> Result<SampleBatch> {
        let n = ansatz.n_sites();
        if n != self.kernel.n_sites {
            return Err(NqsError::contract(format!(
                "ansatz has {n} inputs, sampler lattice has {} sites",
                self.kernel.n_sites
            )));
        }
        let per_chain = self.config.n_samples / self.config.n_chains;
        let sweep = self.config.sweep_length.unwrap_or(n);
        let burn_in = self.config.burn_in_sweeps * n;
        let kernel = &self.kernel;

        let results: Vec<_> = self
            .chains
            .par_iter_mut()
            .map(|(sigma, rng)| {
                let mut chain = ChainState::new(ansatz, sigma.clone(), rng.clone());
                for _ in 0..burn_in {
                    metropolis_step(ansatz, &mut chain, kernel);
                }
                let mut configs = Vec::with_capacity(per_chain);
                let mut log_psis = Vec::with_capacity(per_chain);
                let mut accepted = 0usize;
                for _ in 0..per_chain {
                    for _ in 0..sweep {
                        accepted += metropolis_step(ansatz, &mut chain, kernel) as usize;
                    }
                    chain.refresh(ansatz);
                    configs.push(chain.sigma.clone());
                    log_psis.push(chain.act.log_psi);
                }
                *sigma = chain.sigma;
                *rng = chain.rng;
                (configs, log_psis, accepted)
            })
            .collect();

        let mut batch = SampleBatch {
            configs: Vec::with_capacity(self.config.n_samples),
            log_psis: Vec::with_capacity(self.config.n_samples),
            acceptance_rate: 0.0,
        };
        let mut accepted = 0usize;
        for (configs, log_psis, acc) in results {
            batch.configs.extend(configs);
            batch.log_psis.extend(log_psis);
            accepted += acc;
        }
        if let Some(pos) = batch.log_psis.iter().position(|v| !v.is_finite()) {
            return Err(NqsError::NonFinite {
                value: batch.log_psis[pos],
                config: batch.configs[pos].as_slice().to_vec(),
            });
        }
        batch.acceptance_rate = accepted as f64 / (self.config.n_samples * sweep) as f64;
        if batch.is_stuck() {
            log::warn!("no Metropolis proposal accepted in a batch of {} samples", batch.len());
        }
        Ok(batch)
    }
}

/// Exact Metropolis transition matrix over all `2^N` configurations,
/// row-major in the index order of [`SpinConfig::from_index`].
pub fn transition_matrix(ansatz: &MaskedAnsatz, kernel: &ProposalKernel) -> Result<Vec<f64>> {
    let n = ansatz.n_sites();
    if n > 12 {
        return Err(NqsError::Capacity {
            what: "transition matrix sites",
            limit: 12,
            requested: n,
        });
    }
    let dim = 1usize << n;
    let log_psi: Vec<f64> = (0..dim)
        .map(|k| ansatz.activations(SpinConfig::from_index(k, n).as_slice()).log_psi)
        .collect();
    let moves = kernel.distribution();
    let mut p = vec![0.0; dim * dim];
    for from in 0..dim {
        let mut stay = 1.0;
        for (flips, q) in &moves {
            let to = flips.iter().fold(from, |acc, &i| acc ^ (1 << i));
            let step = q * acceptance_probability(log_psi[to] - log_psi[from]);
            p[from * dim + to] += step;
            stay -= step;
        }
        p[from * dim + from] += stay;
    }
    Ok(p)
}

pub fn sample_batch(
    ansatz: &MaskedAnsatz,
    config: &SamplerConfig,
    lattice: &Lattice,
) -> Result<SampleBatch> {
    Sampler::new(config.clone(), lattice)?.sample(ansatz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::{init_parameters, Architecture, InitScheme};
    use crate::lattice::{Boundary, SquareLattice, ToricLattice};
    use rand::SeedableRng;

    fn square(l: usize) -> Lattice {
        Lattice::Square(SquareLattice::new(l, Boundary::Open).unwrap())
    }

    #[test]
    fn acceptance_examples() {
        assert_eq!(acceptance_probability(0.0), 1.0);
        assert!((acceptance_probability(-(2.0f64).ln()) - 0.25).abs() < 1e-15);
        assert_eq!(acceptance_probability(3.0), 1.0);
    }

    #[test]
    fn single_flip_is_uniform() {
        let lat = square(4);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let draws = 100_000;
        let mut counts = [0usize; 16];
        for _ in 0..draws {
            let f = propose(ProposalRule::SingleFlip, &lat, &mut rng).unwrap();
            assert_eq!(f.len(), 1);
            counts[f[0]] += 1;
        }
        let expected = draws as f64 / 16.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 15 dof, p = 0.001 critical value
        assert!(chi2 < 37.70, "chi2 {chi2}");
    }

    #[test]
    fn mixed_rule_frequency() {
        let lat = Lattice::Toric(ToricLattice::new(3).unwrap());
        let rule = ProposalRule::MixedPlaquette { single_prob: 0.5 };
        let kernel = ProposalKernel::new(rule, &lat).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut out = Vec::new();
        let draws = 100_000;
        let mut four = 0;
        for _ in 0..draws {
            kernel.propose_into(&mut rng, &mut out);
            if out.len() == 4 {
                four += 1;
            }
        }
        assert!((four as f64 / draws as f64 - 0.5).abs() < 0.01);
        assert!(ProposalKernel::new(rule, &square(3)).is_err());
        let total: f64 = kernel.distribution().iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collective_moves_stay_in_the_ground_sector() {
        let t = ToricLattice::new(3).unwrap();
        let lat = Lattice::Toric(t);
        let rule = ProposalRule::MixedPlaquette { single_prob: 0.5 };
        let kernel = ProposalKernel::new(rule, &lat).unwrap();
        let all_up = SpinConfig::all_up(18);
        for (flips, _) in kernel.distribution().into_iter().filter(|(f, _)| f.len() == 4) {
            let s = all_up.flip(&flips).unwrap();
            for p in t.plaquettes() {
                assert_eq!(p.iter().map(|&i| s.as_slice()[i]).product::<i8>(), 1);
            }
        }
        // constructed ground state: star flips always accepted, single flips never
        let a = crate::oracle::build_toric_solution(3, 8.0).unwrap();
        let cfg = SamplerConfig::new(1024, rule, 4);
        let batch = sample_batch(&a, &cfg, &lat).unwrap();
        assert!((batch.acceptance_rate - 0.5).abs() < 0.02, "{}", batch.acceptance_rate);
        assert!(batch.configs.iter().any(|c| c != &all_up));
    }

    #[test]
    fn detailed_balance_is_exact() {
        let lat = square(2);
        let arch = Architecture::ffnn(&lat, 2.0).unwrap();
        let a = MaskedAnsatz::dense(arch, init_parameters(&arch, InitScheme::Normal { std: 0.7 }, 3)).unwrap();
        let kernel = ProposalKernel::new(ProposalRule::SingleFlip, &lat).unwrap();
        let p = transition_matrix(&a, &kernel).unwrap();
        let pi: Vec<f64> = (0..16)
            .map(|k| (2.0 * a.log_psi(&SpinConfig::from_index(k, 4)).unwrap()).exp())
            .collect();
        let z: f64 = pi.iter().sum();
        for i in 0..16 {
            assert!((p[i * 16..(i + 1) * 16].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for j in 0..16 {
                let lhs = pi[i] / z * p[i * 16 + j];
                let rhs = pi[j] / z * p[j * 16 + i];
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = SamplerConfig::new(1000, ProposalRule::SingleFlip, 0);
        assert!(cfg.validate().is_err());
        cfg.n_samples = 1024;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn chain_layout() {
        let lat = square(2);
        let arch = Architecture::ffnn(&lat, 2.0).unwrap();
        let a = MaskedAnsatz::zeros(arch);
        let cfg = SamplerConfig::new(1024, ProposalRule::SingleFlip, 5);
        let batch = sample_batch(&a, &cfg, &lat).unwrap();
        assert_eq!(batch.len(), 1024);
        assert_eq!(batch.log_psis.len(), 1024);
        // uniform target: every proposal accepted
        assert_eq!(batch.acceptance_rate, 1.0);
    }

    #[test]
    fn batches_are_reproducible() {
        let lat = square(3);
        let arch = Architecture::ffnn(&lat, 2.0).unwrap();
        let p = init_parameters(&arch, InitScheme::Normal { std: 0.3 }, 4);
        let a = MaskedAnsatz::dense(arch, p).unwrap();
        let cfg = SamplerConfig::new(256, ProposalRule::SingleFlip, 9);
        let b1 = sample_batch(&a, &cfg, &lat).unwrap();
        let b2 = sample_batch(&a, &cfg, &lat).unwrap();
        assert_eq!(b1.configs, b2.configs);
        assert_eq!(b1.log_psis, b2.log_psis);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b3 = pool.install(|| sample_batch(&a, &cfg, &lat).unwrap());
        assert_eq!(b1.configs, b3.configs);
    }

    #[test]
    fn cached_log_psi_stays_exact() {
        let lat = square(3);
        let arch = Architecture::ffnn(&lat, 2.0).unwrap();
        let p = init_parameters(&arch, InitScheme::Normal { std: 0.5 }, 8);
        let a = MaskedAnsatz::dense(arch, p).unwrap();
        let kernel = ProposalKernel::new(ProposalRule::SingleFlip, &lat).unwrap();
        let mut chain = ChainState::new(
            &a,
            SpinConfig::all_up(9),
            rng::stream(1, Domain::Chain, 0),
        );
        for _ in 0..5000 {
            metropolis_step(&a, &mut chain, &kernel);
            let exact = a.log_psi(chain.sigma()).unwrap();
            assert!((chain.log_psi() - exact).abs() < 1e-10);
        }
    }

    #[test]
    fn uniform_state_has_zero_mean_magnetization() {
        let lat = square(4);
        let a = MaskedAnsatz::zeros(Architecture::ffnn(&lat, 1.0).unwrap());
        let cfg = SamplerConfig::new(1024, ProposalRule::SingleFlip, 3);
        let batch = sample_batch(&a, &cfg, &lat).unwrap();
        for site in 0..16 {
            let m: f64 =
                batch.configs.iter().map(|c| c.as_slice()[site] as f64).sum::<f64>() / 1024.0;
            assert!(m.abs() < 4.0 / (1024.0f64).sqrt(), "site {site}: {m}");
        }
    }
}

//! Monte Carlo simulation of protocol rounds, used as an independent
//! validation oracle for the analytic click and error-rate formulas.
//!
//! Randomness comes from a counter-based generator keyed by `(seed,
//! trial, stream)`: every draw is a pure function of those three values,
//! so trials are reproducible and partition freely across workers.

use crate::channel::{detector_amplitudes, ChannelConfig, ClickOutcome};
use crate::error::{Error, Result};
use crate::keyrate::SliceCombination;
use crate::network::bit_parity;
use crate::source::{output_signal, slice_interval, PulsePair};
use rayon::prelude::*;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based uniform generator: `uniform(counter, stream)` is a pure
/// function of the key and the two indices.
#[derive(Debug, Clone, Copy)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self {
            key: splitmix(seed.wrapping_add(0x9E37_79B9_7F4A_7C15)),
        }
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&self, counter: u64, stream: u64) -> f64 {
        let mut z = self.key ^ counter.wrapping_mul(0xD1B5_4A32_D192_ED03);
        z = splitmix(z);
        z ^= stream.wrapping_mul(0x2545_F491_4F6C_DD1D);
        z = splitmix(z);
        (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Sequential adapter over [`CounterRng`].
#[derive(Debug, Clone)]
pub struct UniformStream {
    rng: CounterRng,
    counter: u64,
}

impl UniformStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: CounterRng::new(seed),
            counter: 0,
        }
    }

    pub fn next_u01(&mut self) -> f64 {
        let v = self.rng.uniform(self.counter, 0);
        self.counter += 1;
        v
    }
}

/// How round phases are drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum RoundSampling {
    /// Physical rounds: all phases uniform on the circle; key-generation
    /// acceptance is post-selected.
    Uniform,
    /// Rounds conditioned on acceptance: each user draws a uniform key
    /// bit, then phases uniform inside the corresponding slice.
    CanonicalClass,
    /// Rounds conditioned on one fixed slice combination.
    Combination(SliceCombination),
}

/// Accumulated counts of a simulation run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialStats {
    pub trials: u64,
    pub seed: u64,
    /// Rounds whose slice pattern is key-generation accepted.
    pub kg_accepted: u64,
    /// Rounds landing exactly on one of the two fully aligned patterns.
    pub aligned_pattern_hits: u64,
    /// Single-click rounds regardless of acceptance.
    pub total_single_clicks: u64,
    /// Per-detector single clicks among accepted rounds.
    pub single_click_counts: Vec<u64>,
    /// `[detector][user]`: accepted single-click rounds where user `i`'s
    /// parity-corrected bit disagrees with user 0's.
    pub disagreement_counts: Vec<Vec<u64>>,
}

impl TrialStats {
    fn zero(seed: u64, n_det: usize, n_users: usize) -> Self {
        Self {
            trials: 0,
            seed,
            kg_accepted: 0,
            aligned_pattern_hits: 0,
            total_single_clicks: 0,
            single_click_counts: vec![0; n_det],
            disagreement_counts: vec![vec![0; n_users]; n_det],
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.trials += other.trials;
        self.kg_accepted += other.kg_accepted;
        self.aligned_pattern_hits += other.aligned_pattern_hits;
        self.total_single_clicks += other.total_single_clicks;
        for (a, b) in self
            .single_click_counts
            .iter_mut()
            .zip(&other.single_click_counts)
        {
            *a += b;
        }
        for (row_a, row_b) in self
            .disagreement_counts
            .iter_mut()
            .zip(&other.disagreement_counts)
        {
            for (a, b) in row_a.iter_mut().zip(row_b) {
                *a += b;
            }
        }
        self
    }

    /// Empirical `Pr(single click at j | accepted)`.
    pub fn pr_omega_given_kg(&self, j: usize) -> Option<f64> {
        (self.kg_accepted > 0)
            .then(|| self.single_click_counts[j] as f64 / self.kg_accepted as f64)
    }

    /// Empirical pairwise error rate at detector `j` for user `i`.
    pub fn qber(&self, j: usize, i: usize) -> Option<f64> {
        (self.single_click_counts[j] > 0)
            .then(|| self.disagreement_counts[j][i] as f64 / self.single_click_counts[j] as f64)
    }

    pub fn acceptance_fraction(&self) -> f64 {
        self.kg_accepted as f64 / self.trials as f64
    }

    pub fn aligned_fraction(&self) -> f64 {
        self.aligned_pattern_hits as f64 / self.trials as f64
    }
}

/// Simulates `trials` protocol rounds: sample phases, interfere, sample
/// detector clicks, post-select, and accumulate click and disagreement
/// counts. Fully deterministic given the seed.
pub fn simulate_rounds(
    cfg: &ChannelConfig,
    sampling: &RoundSampling,
    trials: u64,
    seed: u64,
) -> Result<TrialStats> {
    if trials == 0 {
        return Err(Error::InvalidParameter("need at least one trial".into()));
    }
    let n_users = cfg.n_users();
    let n_det = cfg.n_detectors();
    let m = cfg.source().slices();
    if let RoundSampling::Combination(combo) = sampling {
        combo.check_against(n_users, m)?;
    }
    let rng = CounterRng::new(seed);
    let top = 1usize;
    let bottom = m / 2 + 1;

    // Stream layout per trial: 2N phases, N_D detectors, N key bits.
    let phase_stream = |user: usize, arm: usize| (2 * user + arm) as u64;
    let click_stream = |j: usize| (2 * n_users + j) as u64;
    let bit_stream = |user: usize| (2 * n_users + n_det + user) as u64;

    let run_chunk = |range: std::ops::Range<u64>| -> TrialStats {
        let mut stats = TrialStats::zero(seed, n_det, n_users);
        let mut signals = Vec::with_capacity(n_users);
        let mut bits = vec![false; n_users];
        let mut clicks = vec![false; n_det];
        for trial in range {
            stats.trials += 1;
            signals.clear();

            let mut accepted = true;
            for user in 0..n_users {
                let (phi1, phi2) = match sampling {
                    RoundSampling::Uniform => {
                        let phi1 =
                            2.0 * std::f64::consts::PI * rng.uniform(trial, phase_stream(user, 0));
                        let phi2 =
                            2.0 * std::f64::consts::PI * rng.uniform(trial, phase_stream(user, 1));
                        let k1 = crate::source::slice_of(phi1, m);
                        let k2 = crate::source::slice_of(phi2, m);
                        let user_ok = k1 == k2 && (k1 == top || k1 == bottom);
                        accepted &= user_ok;
                        bits[user] = user_ok && k1 == bottom;
                        (phi1, phi2)
                    }
                    RoundSampling::CanonicalClass => {
                        let bit = rng.uniform(trial, bit_stream(user)) < 0.5;
                        bits[user] = bit;
                        let k = if bit { bottom } else { top };
                        let (lo, hi) = slice_interval(k, m);
                        let phi1 = lo + (hi - lo) * rng.uniform(trial, phase_stream(user, 0));
                        let phi2 = lo + (hi - lo) * rng.uniform(trial, phase_stream(user, 1));
                        (phi1, phi2)
                    }
                    RoundSampling::Combination(combo) => {
                        let (k1, k2) = combo.pair(user);
                        let (lo1, hi1) = slice_interval(k1, m);
                        let (lo2, hi2) = slice_interval(k2, m);
                        let phi1 = lo1 + (hi1 - lo1) * rng.uniform(trial, phase_stream(user, 0));
                        let phi2 = lo2 + (hi2 - lo2) * rng.uniform(trial, phase_stream(user, 1));
                        bits[user] = false;
                        (phi1, phi2)
                    }
                };
                signals.push(output_signal(&PulsePair::new(phi1, phi2), cfg.source()));
            }
            let aligned_all = match sampling {
                RoundSampling::Combination(_) => false,
                _ => accepted && bits.iter().all(|&b| b == bits[0]),
            };

            let betas = detector_amplitudes(&signals, cfg).expect("lengths match");
            let survive = 1.0 - cfg.p_dark();
            for (j, click) in clicks.iter_mut().enumerate() {
                let p_click = 1.0 - survive * (-betas.0[j].norm_sqr()).exp();
                *click = rng.uniform(trial, click_stream(j)) < p_click;
            }
            let outcome = ClickOutcome::from_clicks(&clicks);
            if let ClickOutcome::SingleClick(_) = outcome {
                stats.total_single_clicks += 1;
            }

            if accepted {
                stats.kg_accepted += 1;
                if aligned_all {
                    stats.aligned_pattern_hits += 1;
                }
                if let ClickOutcome::SingleClick(clicked) = outcome {
                    stats.single_click_counts[clicked] += 1;
                    for i in 1..n_users {
                        let disagree = (bits[0] != bits[i]) != bit_parity(clicked, i);
                        if disagree {
                            stats.disagreement_counts[clicked][i] += 1;
                        }
                    }
                }
            }
        }
        stats
    };

    const CHUNK: u64 = 65_536;
    let n_chunks = trials.div_ceil(CHUNK);
    let stats = (0..n_chunks)
        .into_par_iter()
        .map(|c| run_chunk(c * CHUNK..((c + 1) * CHUNK).min(trials)))
        .reduce(
            || TrialStats::zero(seed, n_det, n_users),
            TrialStats::merge,
        );
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkTopology;
    use crate::source::SourceConfig;

    fn cfg(n_users: usize, s: u32, m: usize, loss_db: f64, p_dark: f64, u: f64) -> ChannelConfig {
        let topology = NetworkTopology::new(s, n_users).unwrap();
        let source = SourceConfig::new(u, m).unwrap();
        ChannelConfig::uniform(topology, source, loss_db, p_dark).unwrap()
    }

    #[test]
    fn counter_rng_is_pure_and_seed_sensitive() {
        let a = CounterRng::new(5);
        assert_eq!(a.uniform(17, 3).to_bits(), a.uniform(17, 3).to_bits());
        assert_ne!(a.uniform(17, 3).to_bits(), a.uniform(18, 3).to_bits());
        assert_ne!(a.uniform(17, 3).to_bits(), a.uniform(17, 4).to_bits());
        let b = CounterRng::new(6);
        assert_ne!(a.uniform(17, 3).to_bits(), b.uniform(17, 3).to_bits());
    }

    #[test]
    fn identical_runs_are_identical() {
        let cfg = cfg(2, 1, 4, 5.0, 1e-4, 0.2);
        let a = simulate_rounds(&cfg, &RoundSampling::Uniform, 20_000, 9).unwrap();
        let b = simulate_rounds(&cfg, &RoundSampling::Uniform, 20_000, 9).unwrap();
        assert_eq!(a, b);
        let c = simulate_rounds(&cfg, &RoundSampling::Uniform, 20_000, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn dark_count_only_single_click_fraction() {
        let p = 1e-3;
        let cfg = cfg(2, 2, 4, 0.0, p, 0.0);
        let trials = 2_000_000u64;
        let stats = simulate_rounds(&cfg, &RoundSampling::Uniform, trials, 3).unwrap();
        let want = 4.0 * p * (1.0 - p).powi(3);
        let got = stats.total_single_clicks as f64 / trials as f64;
        let sigma = (want * (1.0 - want) / trials as f64).sqrt();
        assert!(
            (got - want).abs() < 3.0 * sigma,
            "single-click fraction {got} vs {want} (sigma {sigma})"
        );
    }

    #[test]
    fn acceptance_fractions_match_combinatorics() {
        // Two users, four slices: per-user acceptance 2/M^2, both-user
        // acceptance (2/M^2)^2 = 1/64; the two fully aligned patterns
        // carry probability 2/M^4 = 1/128.
        let cfg = cfg(2, 1, 4, 10.0, 1e-6, 0.1);
        let trials = 10_000_000u64;
        let stats = simulate_rounds(&cfg, &RoundSampling::Uniform, trials, 21).unwrap();

        let want_kg = 1.0 / 64.0;
        let sigma_kg = (want_kg * (1.0 - want_kg) / trials as f64).sqrt();
        assert!(
            (stats.acceptance_fraction() - want_kg).abs() < 3.0 * sigma_kg,
            "kg fraction {} vs {want_kg}",
            stats.acceptance_fraction()
        );

        let want_aligned = 2.0 / 256.0;
        let sigma_al = (want_aligned * (1.0 - want_aligned) / trials as f64).sqrt();
        assert!(
            (stats.aligned_fraction() - want_aligned).abs() < 3.0 * sigma_al,
            "aligned fraction {} vs {want_aligned}",
            stats.aligned_fraction()
        );
    }

    #[test]
    fn combination_mode_accepts_every_round() {
        let cfg = cfg(2, 1, 4, 5.0, 1e-5, 0.1);
        let combo = SliceCombination::aligned(2, 1);
        let stats =
            simulate_rounds(&cfg, &RoundSampling::Combination(combo), 10_000, 4).unwrap();
        assert_eq!(stats.kg_accepted, 10_000);
    }

    #[test]
    fn class_mode_matches_uniform_postselection() {
        // Conditioned sampling must reproduce the post-selected statistics
        // of physical rounds within Monte Carlo error.
        let cfg = cfg(2, 1, 4, 3.0, 1e-4, 0.3);
        let uniform = simulate_rounds(&cfg, &RoundSampling::Uniform, 4_000_000, 11).unwrap();
        let class = simulate_rounds(&cfg, &RoundSampling::CanonicalClass, 200_000, 12).unwrap();
        for j in 0..2 {
            let p_uni = uniform.pr_omega_given_kg(j).unwrap();
            let p_cls = class.pr_omega_given_kg(j).unwrap();
            let n_uni = uniform.kg_accepted as f64;
            let n_cls = class.kg_accepted as f64;
            let sigma = (p_cls * (1.0 - p_cls) * (1.0 / n_uni + 1.0 / n_cls)).sqrt();
            assert!(
                (p_uni - p_cls).abs() < 4.0 * sigma + 1e-9,
                "detector {j}: uniform {p_uni} vs class {p_cls}"
            );
        }
    }

    #[test]
    fn rejects_zero_trials() {
        let cfg = cfg(2, 1, 4, 5.0, 1e-5, 0.1);
        assert!(simulate_rounds(&cfg, &RoundSampling::Uniform, 0, 1).is_err());
    }
}

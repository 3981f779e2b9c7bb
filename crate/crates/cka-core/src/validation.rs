//! Independent oracles and the validation check suite.
//!
//! Everything here deliberately recomputes physics through routes that
//! share no code with the implementation it checks: a two-mode Fock-space
//! interferometer for the transition law, a combinatorial closed form for
//! the yields, full-dimension cubature for the yield correction, and
//! extended-precision series summation for the coefficient tails.

use crate::channel::{pr_omega_given_kg, ChannelConfig};
use crate::error::Result;
use crate::keyrate::{Engine, SliceCombination};
use crate::mc::{simulate_rounds, RoundSampling, UniformStream};
use crate::network::{evolve_layer, transfer_matrix, AmplitudeVector};
use crate::phase_error::{coeff_c, photon_vectors, YieldTensor};
use crate::quadrature::{integrate, HyperBox, NeumaierSum};
use crate::source::{averaged_transition_matrix, fock_transition_prob, slice_interval};
use num_complex::Complex64;

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

fn binomial(n: usize, m: usize) -> f64 {
    let m = m.min(n - m);
    let mut acc = 1.0;
    for k in 1..=m {
        acc *= (n - m + k) as f64 / k as f64;
    }
    acc
}

/// Applies a two-mode linear-optics transform `a_1 -> u00 a_1 + u10 a_2`,
/// `a_2 -> u01 a_1 + u11 a_2` to a fixed-photon-number state, indexed by
/// the photon count in mode 1.
fn apply_two_mode(state: &[Complex64], u: [[Complex64; 2]; 2]) -> Vec<Complex64> {
    let n = state.len() - 1;
    let mut out = vec![Complex64::new(0.0, 0.0); n + 1];
    for (k, &amp) in state.iter().enumerate() {
        if amp == Complex64::new(0.0, 0.0) {
            continue;
        }
        let norm_in = (factorial(k) * factorial(n - k)).sqrt();
        for p in 0..=k {
            for q in 0..=(n - k) {
                let coeff = binomial(k, p)
                    * binomial(n - k, q)
                    * (factorial(p + q) * factorial(n - p - q)).sqrt()
                    / norm_in;
                let term = u[0][0].powu(p as u32)
                    * u[1][0].powu((k - p) as u32)
                    * u[0][1].powu(q as u32)
                    * u[1][1].powu((n - k - q) as u32);
                out[p + q] += amp * coeff * term;
            }
        }
    }
    out
}

/// Brute-force interferometer oracle: probability that `n` photons
/// entering the split/modulate/recombine loop exit with `m` in the kept
/// port, computed by explicit Fock-space evolution.
pub fn mz_transition_oracle(m: usize, n: usize, phi1: f64, phi2: f64) -> f64 {
    assert!(m <= n);
    if n == 0 {
        return 1.0;
    }
    let inv = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let bs = [[inv, inv], [inv, -inv]];
    let phase = [
        [Complex64::from_polar(1.0, phi1), Complex64::new(0.0, 0.0)],
        [Complex64::new(0.0, 0.0), Complex64::from_polar(1.0, phi2)],
    ];
    let mut state = vec![Complex64::new(0.0, 0.0); n + 1];
    state[n] = Complex64::new(1.0, 0.0);
    state = apply_two_mode(&state, bs);
    state = apply_two_mode(&state, phase);
    state = apply_two_mode(&state, bs);
    state[m].norm_sqr()
}

/// Combinatorial closed form of the single-click yield: every detector
/// entry of the transfer matrix has squared magnitude `1/N_D`, so the
/// probability that all surviving photons land on one detector depends
/// only on the per-user survival counts and a bosonic bunching factor.
pub fn fock_yield_closed_form(n_vec: &[usize], _j: usize, cfg: &ChannelConfig) -> f64 {
    let n_det = cfg.n_detectors() as f64;
    let mut p_only = 0.0;
    let mut m_vec = vec![0usize; n_vec.len()];
    loop {
        let total: usize = m_vec.iter().sum();
        let mut prod = factorial(total) / n_det.powi(total as i32);
        for (i, (&m, &n)) in m_vec.iter().zip(n_vec).enumerate() {
            let eta = cfg.eta(i);
            prod *= binomial(n, m) * eta.powi(m as i32) * (1.0 - eta).powi((n - m) as i32)
                / factorial(m);
        }
        p_only += prod;

        let mut carry = 0;
        loop {
            if carry == m_vec.len() {
                break;
            }
            if m_vec[carry] < n_vec[carry] {
                m_vec[carry] += 1;
                break;
            }
            m_vec[carry] = 0;
            carry += 1;
        }
        if carry == m_vec.len() {
            break;
        }
    }
    let p_empty: f64 = n_vec
        .iter()
        .enumerate()
        .map(|(i, &n)| (1.0 - cfg.eta(i)).powi(n as i32))
        .product();
    let survive = 1.0 - cfg.p_dark();
    survive.powi(cfg.n_detectors() as i32 - 1) * (p_only - survive * p_empty)
}

/// Direct full-dimension quadrature of the yield correction: averages the
/// product of per-user transition laws against the raw yields over all
/// `2N` modulation phases at once. The factorized implementation must
/// reproduce this.
pub fn corrected_yield_direct(
    raw: &YieldTensor,
    j: usize,
    n_vec: &[usize],
    boxes: &[crate::source::PhaseBoxPair],
    rel_tol: f64,
) -> Result<f64> {
    let n_users = raw.n_users();
    assert_eq!(boxes.len(), n_users);
    assert_eq!(n_vec.len(), n_users);
    let mut bounds = Vec::with_capacity(2 * n_users);
    for &(b1, b2) in boxes {
        bounds.push(b1);
        bounds.push(b2);
    }
    let domain = HyperBox::new(bounds)?;
    let volume = domain.volume();

    let q = integrate(
        |phases| {
            // Per-user transition rows at these phases.
            let rows: Vec<Vec<f64>> = (0..n_users)
                .map(|i| {
                    (0..=n_vec[i])
                        .map(|m| {
                            fock_transition_prob(m, n_vec[i], phases[2 * i], phases[2 * i + 1])
                                .expect("m <= n")
                        })
                        .collect()
                })
                .collect();
            let mut total = 0.0;
            let mut m_vec = vec![0usize; n_users];
            loop {
                let mut w = 1.0;
                for i in 0..n_users {
                    w *= rows[i][m_vec[i]];
                }
                total += w * raw.get(j, &m_vec);
                let mut carry = 0;
                loop {
                    if carry == n_users {
                        break;
                    }
                    if m_vec[carry] < n_vec[carry] {
                        m_vec[carry] += 1;
                        break;
                    }
                    m_vec[carry] = 0;
                    carry += 1;
                }
                if carry == n_users {
                    break;
                }
            }
            total
        },
        &domain,
        rel_tol,
    )?;
    Ok(q.value / volume)
}

/// Extended-precision direct summation of the coefficient tail: sums the
/// parity-masked coefficient products shell by shell in total photon
/// number with compensated accumulation, far past the point where shells
/// stop contributing.
pub fn delta_tail_series_oracle(v: &[u8], n_bar: usize, alphas: &[f64]) -> f64 {
    fn shell_sum(v: &[u8], alphas: &[f64], user: usize, remaining: usize, prefix: f64, acc: &mut NeumaierSum) {
        if user == v.len() - 1 {
            let c = coeff_c(remaining, v[user], alphas[user]);
            if c != 0.0 {
                acc.add(prefix * c);
            }
            return;
        }
        for n in 0..=remaining {
            let c = coeff_c(n, v[user], alphas[user]);
            if c != 0.0 {
                shell_sum(v, alphas, user + 1, remaining - n, prefix * c, acc);
            }
        }
    }
    let mut total = NeumaierSum::new();
    let mut shell_total = n_bar + 2;
    loop {
        let mut shell = NeumaierSum::new();
        shell_sum(v, alphas, 0, shell_total, 1.0, &mut shell);
        total.add(shell.value());
        let done = shell.value().abs() < 1e-18 * total.value().abs().max(1e-300)
            && shell_total > n_bar + 12;
        shell_total += 1;
        if done || shell_total > n_bar + 200 {
            break;
        }
    }
    total.value()
}

/// Outcome of one validation check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst observed deviation, in the units of `threshold`.
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, measured: f64, threshold: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed: measured <= threshold,
            measured,
            threshold,
            detail,
        }
    }
}

/// Deliberate corruptions for exercising the failure paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultInjection {
    TransitionRowSum,
}

#[derive(Debug, Clone)]
pub struct ValidationOptions {
    pub mc_trials: u64,
    pub seed: u64,
    pub inject: Option<FaultInjection>,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            mc_trials: 200_000,
            seed: 7,
            inject: None,
        }
    }
}

fn check_network() -> CheckResult {
    let mut worst: f64 = 0.0;
    for s in 1..=4u32 {
        let t = transfer_matrix(s).unwrap();
        let n = t.size();
        for a in 0..n {
            for b in 0..n {
                let dot: f64 = (0..n).map(|k| t.entry(a, k) * t.entry(b, k)).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - want).abs());
            }
        }
        for i in 0..n {
            let mut state = AmplitudeVector::vacuum(n);
            state.0[i] = Complex64::new(1.0, 0.0);
            for r in 0..s {
                state = evolve_layer(&state, r, s).unwrap();
            }
            for j in 0..n {
                worst = worst.max((state.0[j].re - t.entry(j, i)).abs());
                worst = worst.max(state.0[j].im.abs());
            }
        }
    }
    CheckResult::new(
        "network-orthogonality",
        worst,
        1e-12,
        "transfer matrix orthogonality and layer composition, s = 1..4".into(),
    )
}

fn check_transition_oracle(seed: u64) -> CheckResult {
    let mut stream = UniformStream::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let phi1 = 2.0 * std::f64::consts::PI * stream.next_u01();
        let phi2 = 2.0 * std::f64::consts::PI * stream.next_u01();
        for n in 0..=6usize {
            for m in 0..=n {
                let direct = fock_transition_prob(m, n, phi1, phi2).unwrap();
                let oracle = mz_transition_oracle(m, n, phi1, phi2);
                worst = worst.max((direct - oracle).abs());
            }
        }
    }
    CheckResult::new(
        "transition-fock-oracle",
        worst,
        1e-9,
        "binomial transition law vs two-mode interferometer, n <= 6, 100 phase pairs".into(),
    )
}

fn check_yield_factorization(cfg: &ChannelConfig, seed: u64) -> Result<CheckResult> {
    use crate::network::NetworkTopology;
    use crate::phase_error::correct_yields;

    // A two-user instance with this configuration's source and loss.
    let topology = NetworkTopology::new(1, 2)?;
    let small = ChannelConfig::uniform(
        topology,
        *cfg.source(),
        cfg.loss_db(0),
        cfg.p_dark(),
    )?;
    let n_bar = 2;
    let mut raw = YieldTensor::new(2, n_bar, 2);
    let mut stream = UniformStream::new(seed);
    for n_vec in photon_vectors(2, n_bar) {
        for j in 0..2 {
            raw.set(j, &n_vec, stream.next_u01());
        }
    }
    let m = small.source().slices();
    let boxes = vec![(slice_interval(1, m), slice_interval(1, m)); 2];
    let t = averaged_transition_matrix(n_bar, boxes[0], small.source())?;
    let corrected = correct_yields(&raw, &[t.clone(), t])?;
    let mut worst: f64 = 0.0;
    for n_vec in raw.indices() {
        let direct = corrected_yield_direct(&raw, 0, n_vec, &boxes, 1e-6)?;
        let fact = corrected.get(0, n_vec);
        worst = worst.max((direct - fact).abs() / direct.abs().max(1e-12));
    }
    Ok(CheckResult::new(
        "yield-correction-factorization",
        worst,
        1e-4,
        "factorized correction vs 4-dimensional cubature, two users".into(),
    ))
}

fn check_transition_normalization(
    cfg: &ChannelConfig,
    inject: Option<FaultInjection>,
) -> Result<CheckResult> {
    let m = cfg.source().slices();
    let mut t = averaged_transition_matrix(
        4,
        (slice_interval(1, m), slice_interval(1, m)),
        cfg.source(),
    )?;
    if inject == Some(FaultInjection::TransitionRowSum) {
        t.corrupt_entry(0, 0, 0.9);
    }
    let mut worst: f64 = 0.0;
    for n in 0..=t.n_max() {
        worst = worst.max((t.row_sum(n) - 1.0).abs());
    }
    Ok(CheckResult::new(
        "transition-normalization",
        worst,
        1e-9,
        "averaged transition matrix rows sum to one".into(),
    ))
}

fn check_mc_agreement(cfg: &ChannelConfig, trials: u64, seed: u64) -> Result<CheckResult> {
    let weights = crate::channel::canonical_member_weights(cfg)?;
    let n_det = cfg.n_detectors();
    let n_users = cfg.n_users();
    let stats = simulate_rounds(cfg, &RoundSampling::CanonicalClass, trials, seed)?;

    // Class-level click probabilities: the folded rows already average
    // over the global flip.
    let mut worst: f64 = 0.0;
    let mut detail = String::new();
    for j in 0..n_det {
        let analytic: f64 =
            weights.iter().map(|row| row[j]).sum::<f64>() / weights.len() as f64;
        let empirical = stats.pr_omega_given_kg(j).unwrap_or(0.0);
        let n = stats.kg_accepted as f64;
        let sigma = (analytic * (1.0 - analytic) / n).sqrt();
        let allowed = 3.0 * sigma + 2.0 / n;
        let score = (empirical - analytic).abs() / allowed;
        worst = worst.max(score);
        if j == 0 {
            detail = format!("Pr(omega_0|KG): analytic {analytic:.3e}, mc {empirical:.3e}");
        }
    }

    // Pairwise error rates at every detector.
    for j in 0..n_det {
        let clicks = stats.single_click_counts[j] as f64;
        if clicks < 25.0 {
            continue;
        }
        for i in 1..n_users {
            let analytic = qber_from_weights(&weights, j, i);
            let empirical = stats.qber(j, i).unwrap_or(0.0);
            let sigma = (analytic.max(1e-12) * (1.0 - analytic) / clicks).sqrt();
            let allowed = 3.0 * sigma + 2.0 / clicks;
            worst = worst.max((empirical - analytic).abs() / allowed);
        }
    }
    Ok(CheckResult::new(
        "mc-agreement",
        worst,
        1.0,
        format!("{detail}; deviations in units of the 3-sigma band"),
    ))
}

pub(crate) fn qber_from_weights(weights: &[Vec<f64>], j: usize, i: usize) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    let parity_flip = crate::network::bit_parity(j, i);
    for (sigma, row) in weights.iter().enumerate() {
        let mask = sigma << 1;
        let disagree = (mask >> i) & 1 == 1;
        den += row[j];
        if disagree != parity_flip {
            num += row[j];
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn check_engine_fast_path(cfg: &ChannelConfig) -> Result<CheckResult> {
    let engine = Engine::new(cfg, 2)?;
    let n_users = cfg.n_users();
    let canonical = SliceCombination::aligned(n_users, 1);
    let mut mismatched_pairs = vec![(1usize, 2usize)];
    mismatched_pairs.extend(std::iter::repeat_n((2, 2), n_users - 1));
    let mismatched = SliceCombination::new(mismatched_pairs);
    let mut worst: f64 = 0.0;
    for combo in [&canonical, &mismatched] {
        for j in 0..cfg.n_detectors() {
            let fast = engine.click_probability(combo, j)?;
            let slow = pr_omega_given_kg(j, combo, cfg)?;
            worst = worst.max((fast - slow).abs() / slow.abs().max(1e-12));
        }
    }
    Ok(CheckResult::new(
        "engine-click-fast-path",
        worst,
        5e-4,
        "tabulated click probabilities vs adaptive cubature".into(),
    ))
}

/// Runs the full oracle suite against a configuration.
pub fn run_validation_suite(
    cfg: &ChannelConfig,
    opts: &ValidationOptions,
) -> Result<Vec<CheckResult>> {
    Ok(vec![
        check_network(),
        check_transition_oracle(opts.seed),
        check_yield_factorization(cfg, opts.seed)?,
        check_transition_normalization(cfg, opts.inject)?,
        check_mc_agreement(cfg, opts.mc_trials, opts.seed)?,
        check_engine_fast_path(cfg)?,
    ])
}

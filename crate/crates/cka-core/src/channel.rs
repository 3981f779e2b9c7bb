//! Transmission from the users to the central detection node.
//!
//! Each user's signal is attenuated by its channel transmittance, the
//! network interferes the survivors, and threshold detectors with
//! independent dark counts fire on the outputs. Key-generation
//! observables are evaluated in the coherent-state picture by phase-box
//! quadrature; decoy-state yields are exact Fock-space quantities with the
//! loss modeled as a splitter coupling into a per-user environment mode.

use crate::error::{Error, Result};
use crate::keyrate::SliceCombination;
use crate::network::{interference_sign, AmplitudeVector, NetworkTopology};
use crate::quadrature::{integrate, HyperBox};
use crate::source::{output_signal, slice_interval, OutputSignal, PulsePair, SourceConfig};
use num_complex::Complex64;
use std::collections::BTreeMap;

/// Default relative tolerance for click-probability phase averages.
pub const CLICK_REL_TOL: f64 = 1e-4;

/// Largest total photon number accepted by the exact Fock evolution.
pub const MAX_TOTAL_PHOTONS: usize = 12;

/// Channel and detection parameters for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    topology: NetworkTopology,
    source: SourceConfig,
    loss_db: Vec<f64>,
    p_dark: f64,
    phase_offsets: Vec<f64>,
}

impl ChannelConfig {
    pub fn new(
        topology: NetworkTopology,
        source: SourceConfig,
        loss_db: Vec<f64>,
        p_dark: f64,
    ) -> Result<Self> {
        if loss_db.len() != topology.n_users() {
            return Err(Error::InvalidParameter(format!(
                "expected {} per-user losses, got {}",
                topology.n_users(),
                loss_db.len()
            )));
        }
        for &l in &loss_db {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "channel loss must be finite and nonnegative, got {l} dB"
                )));
            }
        }
        if !(0.0..1.0).contains(&p_dark) {
            return Err(Error::InvalidParameter(format!(
                "dark-count probability must lie in [0, 1), got {p_dark}"
            )));
        }
        let n = topology.n_users();
        Ok(Self {
            topology,
            source,
            loss_db,
            p_dark,
            phase_offsets: vec![0.0; n],
        })
    }

    /// All users at the same loss.
    pub fn uniform(
        topology: NetworkTopology,
        source: SourceConfig,
        loss_db: f64,
        p_dark: f64,
    ) -> Result<Self> {
        let n = topology.n_users();
        Self::new(topology, source, vec![loss_db; n], p_dark)
    }

    /// Optional per-user carrier phase offset (misalignment hook).
    pub fn with_phase_offsets(mut self, offsets: Vec<f64>) -> Result<Self> {
        if offsets.len() != self.topology.n_users() {
            return Err(Error::InvalidParameter(format!(
                "expected {} phase offsets, got {}",
                self.topology.n_users(),
                offsets.len()
            )));
        }
        self.phase_offsets = offsets;
        Ok(self)
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn source(&self) -> &SourceConfig {
        &self.source
    }

    pub fn loss_db(&self, user: usize) -> f64 {
        self.loss_db[user]
    }

    /// Channel transmittance `10^(-loss_dB / 10)`.
    pub fn eta(&self, user: usize) -> f64 {
        10f64.powf(-self.loss_db[user] / 10.0)
    }

    pub fn p_dark(&self) -> f64 {
        self.p_dark
    }

    pub fn phase_offset(&self, user: usize) -> f64 {
        self.phase_offsets[user]
    }

    pub fn n_users(&self) -> usize {
        self.topology.n_users()
    }

    pub fn n_detectors(&self) -> usize {
        self.topology.n_detectors()
    }
}

/// Announced detection outcome of one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClickOutcome {
    SingleClick(usize),
    Discard,
}

impl ClickOutcome {
    /// Classifies a round from its per-detector click pattern: kept only
    /// when exactly one detector fired.
    pub fn from_clicks(clicks: &[bool]) -> Self {
        let mut hit = None;
        for (j, &clicked) in clicks.iter().enumerate() {
            if clicked {
                if hit.is_some() {
                    return ClickOutcome::Discard;
                }
                hit = Some(j);
            }
        }
        match hit {
            Some(j) => ClickOutcome::SingleClick(j),
            None => ClickOutcome::Discard,
        }
    }
}

/// Propagates the users' output signals through loss and the network,
/// returning the coherent amplitude at every detector.
pub fn detector_amplitudes(signals: &[OutputSignal], cfg: &ChannelConfig) -> Result<AmplitudeVector> {
    let n_users = cfg.n_users();
    if signals.len() != n_users {
        return Err(Error::InvalidParameter(format!(
            "expected {n_users} signals, got {}",
            signals.len()
        )));
    }
    let n_det = cfg.n_detectors();
    let norm = 1.0 / (n_det as f64).sqrt();
    let mut alphas = Vec::with_capacity(n_users);
    for (i, sig) in signals.iter().enumerate() {
        let mag = (cfg.eta(i) * sig.intensity).sqrt();
        alphas.push(Complex64::from_polar(mag, sig.phase + cfg.phase_offset(i)));
    }
    let mut out = AmplitudeVector::vacuum(n_det);
    for j in 0..n_det {
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, &alpha) in alphas.iter().enumerate() {
            acc += interference_sign(j, i) * alpha;
        }
        out.0[j] = acc * norm;
    }
    Ok(out)
}

/// Probability that detector `j` clicks and no other does, for fixed
/// coherent amplitudes and independent dark counts.
pub fn prob_single_click(j: usize, betas: &AmplitudeVector, p_dark: f64) -> f64 {
    let survive = 1.0 - p_dark;
    let mut others = 1.0;
    for (k, beta) in betas.0.iter().enumerate() {
        if k != j {
            others *= survive * (-beta.norm_sqr()).exp();
        }
    }
    let fire = 1.0 - survive * (-betas.0[j].norm_sqr()).exp();
    fire * others
}

fn combination_box(combo: &SliceCombination, cfg: &ChannelConfig) -> Result<HyperBox> {
    let m = cfg.source().slices();
    let mut bounds = Vec::with_capacity(2 * combo.n_users());
    for (k1, k2) in combo.pairs() {
        bounds.push(slice_interval(k1, m));
        bounds.push(slice_interval(k2, m));
    }
    HyperBox::new(bounds)
}

fn signals_from_phases(phases: &[f64], cfg: &ChannelConfig) -> Vec<OutputSignal> {
    phases
        .chunks_exact(2)
        .map(|pair| {
            output_signal(
                &PulsePair {
                    phi1: pair[0],
                    phi2: pair[1],
                },
                cfg.source(),
            )
        })
        .collect()
}

/// Probability of a single click at detector `j` given that every user's
/// measured phases fell in the slices of `combo`, averaged by quadrature.
pub fn pr_omega_given_kg(j: usize, combo: &SliceCombination, cfg: &ChannelConfig) -> Result<f64> {
    pr_omega_given_kg_with_tol(j, combo, cfg, CLICK_REL_TOL)
}

/// [`pr_omega_given_kg`] with an explicit quadrature tolerance.
pub fn pr_omega_given_kg_with_tol(
    j: usize,
    combo: &SliceCombination,
    cfg: &ChannelConfig,
    rel_tol: f64,
) -> Result<f64> {
    if j >= cfg.n_detectors() {
        return Err(Error::InvalidParameter(format!(
            "detector index {j} out of range"
        )));
    }
    combo.check_against(cfg.n_users(), cfg.source().slices())?;
    let domain = combination_box(combo, cfg)?;
    let volume = domain.volume();
    let p_dark = cfg.p_dark();
    let q = integrate(
        |phases| {
            let signals = signals_from_phases(phases, cfg);
            let betas = detector_amplitudes(&signals, cfg).expect("lengths match");
            prob_single_click(j, &betas, p_dark)
        },
        &domain,
        rel_tol,
    )?;
    Ok(q.value / volume)
}

/// The canonical key-generation pattern: every user in the top slice.
pub fn canonical_combination(cfg: &ChannelConfig) -> SliceCombination {
    SliceCombination::aligned(cfg.n_users(), 1)
}

/// Click weights of the canonical accepted class, folded over the global
/// bit flip: `weights[sigma][j]` is `Pr(single click at j | member sigma)`
/// for `sigma` over bit patterns with user 0 fixed at bit 0.
pub fn canonical_member_weights(cfg: &ChannelConfig) -> Result<Vec<Vec<f64>>> {
    let n_users = cfg.n_users();
    let n_det = cfg.n_detectors();
    let m = cfg.source().slices();
    let canonical = canonical_combination(cfg);
    let mut weights = Vec::with_capacity(1 << (n_users - 1));
    for sigma in 0..(1usize << (n_users - 1)) {
        let mask = sigma << 1; // user 0 unflipped
        let member = canonical.flip_users(mask, m);
        let mut row = Vec::with_capacity(n_det);
        for j in 0..n_det {
            row.push(pr_omega_given_kg(j, &member, cfg)?);
        }
        weights.push(row);
    }
    Ok(weights)
}

/// Pairwise error rate between user 0 and user `i` conditioned on a single
/// click at detector `j` in an accepted key-generation round, with the
/// detector-parity correction `(-1)^{<j, i>}`.
pub fn qber_pair(j: usize, i: usize, cfg: &ChannelConfig) -> Result<f64> {
    let n_users = cfg.n_users();
    if i == 0 || i >= n_users {
        return Err(Error::InvalidParameter(format!(
            "pair user index must be in 1..{n_users}, got {i}"
        )));
    }
    if j >= cfg.n_detectors() {
        return Err(Error::InvalidParameter(format!(
            "detector index {j} out of range"
        )));
    }
    let weights = canonical_member_weights(cfg)?;
    let parity_flip = crate::network::bit_parity(j, i);
    let mut num = 0.0;
    let mut den = 0.0;
    for (sigma, row) in weights.iter().enumerate() {
        let mask = sigma << 1;
        let bits_disagree = (mask >> i) & 1 == 1; // X_0 = 0 in the folded class
        let error = bits_disagree != parity_flip;
        den += row[j];
        if error {
            num += row[j];
        }
    }
    if den <= 0.0 {
        return Err(Error::UndefinedObservable(format!(
            "Pr(single click at {j} | KG) vanishes"
        )));
    }
    Ok(num / den)
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Enumerates the ways to distribute `n` photons over `modes` output
/// modes, invoking `f` with each occupation vector.
fn for_each_composition(n: usize, modes: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(remaining: usize, slot: usize, current: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if slot == current.len() - 1 {
            current[slot] = remaining;
            f(current);
            return;
        }
        for q in 0..=remaining {
            current[slot] = q;
            rec(remaining - q, slot + 1, current, f);
        }
    }
    let mut current = vec![0usize; modes];
    rec(n, 0, &mut current, f);
}

/// Exact single-click probability at detector `j` for Fock inputs
/// `n_vec`, with per-user loss as an environment coupling and the full
/// interference of the network. Optional per-user input phases exist only
/// to exhibit the phase invariance of the result.
pub fn fock_yields_with_phases(
    n_vec: &[usize],
    j: usize,
    cfg: &ChannelConfig,
    phases: &[f64],
) -> Result<f64> {
    let n_users = cfg.n_users();
    let n_det = cfg.n_detectors();
    if n_vec.len() != n_users || phases.len() != n_users {
        return Err(Error::InvalidParameter(format!(
            "expected {n_users} photon numbers and phases"
        )));
    }
    if j >= n_det {
        return Err(Error::InvalidParameter(format!(
            "detector index {j} out of range"
        )));
    }
    let total: usize = n_vec.iter().sum();
    if total > MAX_TOTAL_PHOTONS {
        return Err(Error::InvalidParameter(format!(
            "total photon number {total} exceeds supported cutoff {MAX_TOTAL_PHOTONS}"
        )));
    }

    // One environment mode per user, appended after the detector modes.
    let modes = n_det + n_users;
    let norm = 1.0 / (n_det as f64).sqrt();
    let mut state: BTreeMap<Vec<usize>, Complex64> = BTreeMap::new();
    state.insert(vec![0usize; modes], Complex64::new(1.0, 0.0));

    for (user, &n) in n_vec.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let eta = cfg.eta(user);
        let phase = Complex64::from_polar(1.0, phases[user]);
        // Destination amplitudes: detectors then this user's environment.
        let mut dest: Vec<(usize, Complex64)> = (0..n_det)
            .map(|k| (k, phase * (eta.sqrt() * interference_sign(k, user) * norm)))
            .collect();
        dest.push((n_det + user, Complex64::new((1.0 - eta).sqrt(), 0.0)));

        let mut next: BTreeMap<Vec<usize>, Complex64> = BTreeMap::new();
        let sqrt_n_fact = factorial(n).sqrt();
        for (pattern, amp) in &state {
            for_each_composition(n, dest.len(), &mut |q| {
                let mut factor = Complex64::new(sqrt_n_fact, 0.0);
                let mut new_pattern = pattern.clone();
                for (slot, &(mode, c)) in dest.iter().enumerate() {
                    let qk = q[slot];
                    if qk == 0 {
                        continue;
                    }
                    let before = new_pattern[mode];
                    new_pattern[mode] += qk;
                    factor *= c.powu(qk as u32)
                        * ((factorial(before + qk) / factorial(before)).sqrt() / factorial(qk));
                }
                let entry = next.entry(new_pattern).or_insert(Complex64::new(0.0, 0.0));
                *entry += amp * factor;
            });
        }
        state = next;
    }

    // Single click at j: all other detector modes empty; environments free.
    let mut p_only_j = 0.0;
    let mut p_empty = 0.0;
    for (pattern, amp) in &state {
        let others_empty = (0..n_det).all(|k| k == j || pattern[k] == 0);
        if !others_empty {
            continue;
        }
        let w = amp.norm_sqr();
        p_only_j += w;
        if pattern[j] == 0 {
            p_empty += w;
        }
    }
    let survive = 1.0 - cfg.p_dark();
    Ok(survive.powi(n_det as i32 - 1) * (p_only_j - survive * p_empty))
}

/// Infinite-decoy yield: exact single-click probability at detector `j`
/// given the users emitted Fock states `n_vec`.
pub fn fock_yields(n_vec: &[usize], j: usize, cfg: &ChannelConfig) -> Result<f64> {
    let phases = vec![0.0; cfg.n_users()];
    fock_yields_with_phases(n_vec, j, cfg, &phases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyrate::SliceCombination;
    use crate::network::NetworkTopology;
    use crate::source::SourceConfig;
    use crate::validation::fock_yield_closed_form;

    fn four_user_cfg(loss_db: f64, p_dark: f64, u_max: f64) -> ChannelConfig {
        let topology = NetworkTopology::new(2, 4).unwrap();
        let source = SourceConfig::new(u_max, 8).unwrap();
        ChannelConfig::uniform(topology, source, loss_db, p_dark).unwrap()
    }

    fn signal(intensity: f64, phase: f64) -> OutputSignal {
        OutputSignal { intensity, phase }
    }

    #[test]
    fn eta_follows_decibel_law() {
        let cfg = four_user_cfg(10.0, 1e-8, 0.1);
        assert!((cfg.eta(0) - 0.1).abs() < 1e-15);
        let cfg0 = four_user_cfg(0.0, 1e-8, 0.1);
        assert!((cfg0.eta(2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn vacuum_inputs_give_zero_amplitudes() {
        let cfg = four_user_cfg(3.0, 0.0, 0.1);
        let signals = vec![signal(0.0, 0.3); 4];
        let betas = detector_amplitudes(&signals, &cfg).unwrap();
        assert!(betas.total_intensity().abs() < 1e-30);
    }

    #[test]
    fn single_user_spreads_uniformly() {
        let cfg = four_user_cfg(0.0, 0.0, 0.1);
        let mut signals = vec![signal(0.0, 0.0); 4];
        signals[0] = signal(0.36, 0.0);
        let betas = detector_amplitudes(&signals, &cfg).unwrap();
        for j in 0..4 {
            assert!((betas.0[j].norm_sqr() - 0.09).abs() < 1e-12);
        }
    }

    #[test]
    fn aligned_users_interfere_onto_detector_zero() {
        let cfg = four_user_cfg(0.0, 0.0, 0.1);
        let u = 0.05;
        let signals = vec![signal(u, 0.0); 4];
        let betas = detector_amplitudes(&signals, &cfg).unwrap();
        // |beta_0|^2 = u * N_U^2 / N_D, all other ports dark.
        assert!((betas.0[0].norm_sqr() - u * 4.0).abs() < 1e-12);
        for j in 1..4 {
            assert!(betas.0[j].norm_sqr() < 1e-24);
        }
    }

    #[test]
    fn single_click_closed_forms() {
        let n_det = 4;
        let dark_only = AmplitudeVector::vacuum(n_det);
        let p = 1e-3f64;
        let want = p * (1.0 - p).powi(3);
        assert!((prob_single_click(0, &dark_only, p) - want).abs() < 1e-15);
        assert_eq!(prob_single_click(0, &dark_only, 0.0), 0.0);

        let mut betas = AmplitudeVector::vacuum(n_det);
        betas.0[0] = Complex64::new(1.0, 0.0);
        let want = 1.0 - (-1.0f64).exp();
        assert!((prob_single_click(0, &betas, 0.0) - want).abs() < 1e-15);
    }

    #[test]
    fn single_click_probabilities_sum_below_one() {
        let mut betas = AmplitudeVector::vacuum(4);
        betas.0[0] = Complex64::new(0.8, 0.1);
        betas.0[2] = Complex64::new(0.0, 0.4);
        for p in [0.0, 1e-4, 0.3] {
            let total: f64 = (0..4).map(|j| prob_single_click(j, &betas, p)).sum();
            assert!(total <= 1.0 + 1e-12, "p={p}: {total}");
        }
    }

    #[test]
    fn single_click_monotonicity() {
        // Brighter other-port light can only suppress a single click at j.
        let mut lo = AmplitudeVector::vacuum(4);
        lo.0[0] = Complex64::new(0.9, 0.0);
        let mut hi = lo.clone();
        hi.0[1] = Complex64::new(0.5, 0.0);
        assert!(prob_single_click(0, &hi, 1e-6) < prob_single_click(0, &lo, 1e-6));

        // With no light, more dark counts mean more single clicks
        // (far from saturation).
        let dark = AmplitudeVector::vacuum(4);
        assert!(prob_single_click(0, &dark, 1e-6) < prob_single_click(0, &dark, 1e-4));
    }

    #[test]
    fn pr_omega_reduces_to_dark_counts_without_light() {
        let cfg = four_user_cfg(7.0, 1e-4, 0.0);
        let combo = canonical_combination(&cfg);
        let p = cfg.p_dark();
        let want = p * (1.0 - p).powi(3);
        for j in 0..4 {
            let got = pr_omega_given_kg(j, &combo, &cfg).unwrap();
            assert!((got - want).abs() < 1e-12, "detector {j}: {got} vs {want}");
        }
    }

    #[test]
    fn pr_omega_matches_conditioned_monte_carlo() {
        // Per-combination click probability against rounds sampled inside
        // the combination's phase boxes.
        let cfg = four_user_cfg(10.0, 1e-8, 0.1);
        let combo = canonical_combination(&cfg);
        let trials = 1_000_000u64;
        let stats = crate::mc::simulate_rounds(
            &cfg,
            &crate::mc::RoundSampling::Combination(combo.clone()),
            trials,
            17,
        )
        .unwrap();
        for j in 0..4 {
            let analytic = pr_omega_given_kg(j, &combo, &cfg).unwrap();
            let empirical = stats.pr_omega_given_kg(j).unwrap();
            let sigma = (analytic * (1.0 - analytic) / trials as f64).sqrt();
            assert!(
                (empirical - analytic).abs() <= 3.0 * sigma + 2.0 / trials as f64,
                "detector {j}: mc {empirical:.4e} vs analytic {analytic:.4e} (sigma {sigma:.2e})"
            );
        }
    }

    #[test]
    fn pr_omega_symmetry_audit() {
        // All users aligned on the top slice: detector 0 dominates and the
        // remaining detectors are equivalent under relabeling the users.
        let cfg = four_user_cfg(10.0, 1e-8, 0.1);
        let combo = canonical_combination(&cfg);
        let pr: Vec<f64> = (0..4)
            .map(|j| pr_omega_given_kg(j, &combo, &cfg).unwrap())
            .collect();
        for j in 1..4 {
            assert!(pr[0] > 50.0 * pr[j], "detector 0 should dominate: {pr:?}");
        }
        for j in 2..4 {
            let rel = (pr[j] - pr[1]).abs() / pr[1];
            assert!(rel < 5e-3, "off detectors differ: {pr:?}");
        }
    }

    #[test]
    fn qber_is_half_in_dark_dominated_limit() {
        // eta -> 0 with p_dark > 0: clicks carry no bit information.
        let cfg = four_user_cfg(300.0, 1e-6, 0.1);
        for j in 0..4 {
            for i in 1..4 {
                let q = qber_pair(j, i, &cfg).unwrap();
                assert!((q - 0.5).abs() < 1e-3, "j={j} i={i}: {q}");
            }
        }
    }

    #[test]
    fn qber_detector_parity_behaviour() {
        let cfg = four_user_cfg(5.0, 1e-8, 0.1);
        // Detectors 0 and 1 differ in parity with respect to user 1. The
        // correction (-1)^<j,i> exactly absorbs the flip, so the corrected
        // error rate is detector-independent in the symmetric setup...
        let q0 = qber_pair(0, 1, &cfg).unwrap();
        let q1 = qber_pair(1, 1, &cfg).unwrap();
        assert!((q0 - q1).abs() < 2e-3, "q0={q0} q1={q1}");

        // ...while the raw (uncorrected) disagreement complements between
        // the two parity classes.
        let weights = canonical_member_weights(&cfg).unwrap();
        let raw = |j: usize| {
            let mut num = 0.0;
            let mut den = 0.0;
            for (sigma, row) in weights.iter().enumerate() {
                den += row[j];
                // User 1 flipped relative to user 0 in the folded class.
                if sigma & 1 == 1 {
                    num += row[j];
                }
            }
            num / den
        };
        let r0 = raw(0);
        let r1 = raw(1);
        assert!((r0 + r1 - 1.0).abs() < 2e-3, "raw disagreement r0={r0} r1={r1}");
        // Four aligned users leave a residual floor near 1/4 from the
        // half-cancelled sign patterns.
        assert!(q0 > 0.15 && q0 < 0.35, "error floor out of range: {q0}");
    }

    #[test]
    fn qber_requires_valid_indices() {
        let cfg = four_user_cfg(5.0, 1e-8, 0.1);
        assert!(qber_pair(0, 0, &cfg).is_err());
        assert!(qber_pair(9, 1, &cfg).is_err());
    }

    #[test]
    fn fock_yield_vacuum_and_single_photon() {
        let cfg = four_user_cfg(0.0, 1e-3, 0.1);
        let p = cfg.p_dark();
        let want_vac = p * (1.0 - p).powi(3);
        for j in 0..4 {
            let y = fock_yields(&[0, 0, 0, 0], j, &cfg).unwrap();
            assert!((y - want_vac).abs() < 1e-15);
        }

        let lossless = four_user_cfg(0.0, 0.0, 0.1);
        for j in 0..4 {
            let y = fock_yields(&[1, 0, 0, 0], j, &lossless).unwrap();
            assert!((y - 0.25).abs() < 1e-12, "detector {j}: {y}");
        }
    }

    #[test]
    fn two_photon_yield_shows_bunching() {
        // Two photons from users 0 and 1, lossless, no darks: a single
        // click means both bunched onto the same detector.
        let cfg = four_user_cfg(0.0, 0.0, 0.1);
        for j in 0..4 {
            let y = fock_yields(&[1, 1, 0, 0], j, &cfg).unwrap();
            assert!((y - 2.0 / 16.0).abs() < 1e-12, "detector {j}: {y}");
        }
    }

    #[test]
    fn fock_yields_match_combinatorial_closed_form() {
        let cfg = four_user_cfg(6.0, 1e-6, 0.1);
        let cases: [&[usize]; 6] = [
            &[1, 0, 0, 0],
            &[1, 1, 0, 0],
            &[2, 0, 1, 0],
            &[1, 1, 1, 1],
            &[2, 2, 0, 0],
            &[0, 3, 1, 0],
        ];
        for n_vec in cases {
            for j in 0..4 {
                let direct = fock_yields(n_vec, j, &cfg).unwrap();
                let oracle = fock_yield_closed_form(n_vec, j, &cfg);
                assert!(
                    (direct - oracle).abs() < 1e-12 * oracle.max(1e-12),
                    "n={n_vec:?} j={j}: {direct} vs {oracle}"
                );
            }
        }
    }

    #[test]
    fn fock_yields_are_phase_invariant() {
        let cfg = four_user_cfg(4.0, 1e-7, 0.1);
        let n_vec = [1usize, 2, 0, 1];
        for j in 0..4 {
            let base = fock_yields(&n_vec, j, &cfg).unwrap();
            let rotated =
                fock_yields_with_phases(&n_vec, j, &cfg, &[0.3, -1.2, 2.7, 0.9]).unwrap();
            assert!((base - rotated).abs() < 1e-12, "j={j}: {base} vs {rotated}");
        }
    }

    #[test]
    fn fock_yields_validates_inputs() {
        let cfg = four_user_cfg(4.0, 1e-7, 0.1);
        assert!(fock_yields(&[1, 1], 0, &cfg).is_err());
        assert!(fock_yields(&[1, 1, 1, 1], 7, &cfg).is_err());
        assert!(fock_yields(&[13, 0, 0, 0], 0, &cfg).is_err());
    }

    #[test]
    fn click_classifier_keeps_only_single_clicks() {
        use ClickOutcome::*;
        assert_eq!(ClickOutcome::from_clicks(&[false, false, false]), Discard);
        assert_eq!(ClickOutcome::from_clicks(&[false, true, false]), SingleClick(1));
        assert_eq!(ClickOutcome::from_clicks(&[true, true, false]), Discard);
        assert_eq!(ClickOutcome::from_clicks(&[true; 4]), Discard);
    }

    #[test]
    fn combination_box_respects_slices() {
        let cfg = four_user_cfg(5.0, 1e-8, 0.1);
        let combo = SliceCombination::aligned(4, 1);
        let domain = combination_box(&combo, &cfg).unwrap();
        assert_eq!(domain.dim(), 8);
        let delta = cfg.source().delta();
        for &(lo, hi) in domain.bounds() {
            assert!((hi - lo - 2.0 * delta).abs() < 1e-12);
        }
    }
}

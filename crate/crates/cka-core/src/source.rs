//! The fully passive source: two independent random-phase pulses combined
//! on a balanced splitter.
//!
//! A user measures the two pulse phases, maps each onto one of `M` angular
//! slices, and the kept splitter output becomes the emitted signal. Sector
//! 1 is centered on phase 0 and spans `[-pi/M, pi/M)`; indices ascend
//! clockwise (towards decreasing phase). The module also carries the
//! Fock-space transition law of the equivalent local channel: `n` photons
//! entering the split/modulate/recombine loop survive binomially with
//! single-photon transmission `cos^2((phi2 - phi1)/2)`.

use crate::error::{Error, Result};
use crate::mc::UniformStream;
use crate::quadrature::{integrate, HyperBox};
use num_complex::Complex64;
use std::f64::consts::PI;

pub const TRANSITION_REL_TOL: f64 = 1e-6;

/// Passive source parameters: maximum output intensity and slice count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceConfig {
    u_max: f64,
    slices: usize,
}

impl SourceConfig {
    pub fn new(u_max: f64, slices: usize) -> Result<Self> {
        if !(u_max >= 0.0) || !u_max.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "u_max must be a finite nonnegative number, got {u_max}"
            )));
        }
        if slices < 2 || !slices.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "slice count must be an even integer >= 2, got {slices}"
            )));
        }
        Ok(Self { u_max, slices })
    }

    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    /// Half slice width `pi / M`.
    pub fn delta(&self) -> f64 {
        PI / self.slices as f64
    }
}

/// The two locally measured pulse phases. Each arm carries intensity
/// `u_max / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulsePair {
    pub phi1: f64,
    pub phi2: f64,
}

impl PulsePair {
    /// Wraps both phases into `[0, 2pi)`.
    pub fn new(phi1: f64, phi2: f64) -> Self {
        let tau = 2.0 * PI;
        Self {
            phi1: phi1.rem_euclid(tau),
            phi2: phi2.rem_euclid(tau),
        }
    }
}

/// The interfered output signal of one source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputSignal {
    /// Mean photon number, in `[0, u_max]`.
    pub intensity: f64,
    /// Carrier phase in `(-pi, pi]`.
    pub phase: f64,
}

impl OutputSignal {
    /// Coherent amplitude `sqrt(intensity) * exp(i phase)`.
    pub fn amplitude(&self) -> Complex64 {
        Complex64::from_polar(self.intensity.sqrt(), self.phase)
    }
}

/// Draws two independent phases uniform on `[0, 2pi)`.
pub fn sample_pulse_pair(stream: &mut UniformStream) -> PulsePair {
    let phi1 = 2.0 * PI * stream.next_u01();
    let phi2 = 2.0 * PI * stream.next_u01();
    PulsePair { phi1, phi2 }
}

/// Maps a phase to its slice index in `1..=M`.
pub fn slice_of(phase: f64, slices: usize) -> usize {
    debug_assert!(slices >= 2 && slices.is_multiple_of(2));
    let delta = PI / slices as f64;
    let u = (phase + delta).rem_euclid(2.0 * PI);
    let mut idx = (u / (2.0 * delta)).floor() as usize;
    if idx >= slices {
        idx = slices - 1;
    }
    if idx == 0 {
        1
    } else {
        slices + 1 - idx
    }
}

/// Center phase of slice `k`, in `(-pi, pi]`.
pub fn slice_center(k: usize, slices: usize) -> f64 {
    debug_assert!(k >= 1 && k <= slices);
    let c = -((k - 1) as f64) * 2.0 * PI / slices as f64;
    if c <= -PI {
        c + 2.0 * PI
    } else {
        c
    }
}

/// The half-open phase interval `[center - pi/M, center + pi/M)` of slice `k`.
pub fn slice_interval(k: usize, slices: usize) -> (f64, f64) {
    let c = slice_center(k, slices);
    let delta = PI / slices as f64;
    (c - delta, c + delta)
}

/// Key-bit meaning of a slice in the canonical pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyBit {
    Zero,
    One,
    NotKey,
}

/// Canonical bit mapping: top slice is bit 0, bottom slice bit 1, the rest
/// carry no key bit.
pub fn bit_of_slice(k: usize, slices: usize) -> Result<KeyBit> {
    if k == 0 || k > slices {
        return Err(Error::InvalidParameter(format!(
            "slice index {k} out of range 1..={slices}"
        )));
    }
    if k == 1 {
        Ok(KeyBit::Zero)
    } else if k == slices / 2 + 1 {
        Ok(KeyBit::One)
    } else {
        Ok(KeyBit::NotKey)
    }
}

/// Interferes the two pulses: intensity `u_max cos^2((phi1 - phi2)/2)`,
/// phase the circular mean of the two inputs. Equal phases give maximal
/// output.
pub fn output_signal(pair: &PulsePair, cfg: &SourceConfig) -> OutputSignal {
    let half = 0.5 * (pair.phi1 - pair.phi2);
    let intensity = cfg.u_max * half.cos().powi(2);
    let phasor = Complex64::from_polar(1.0, pair.phi1) + Complex64::from_polar(1.0, pair.phi2);
    OutputSignal {
        intensity,
        phase: phasor.arg(),
    }
}

fn binomial(n: usize, m: usize) -> f64 {
    let m = m.min(n - m);
    let mut acc = 1.0;
    for k in 1..=m {
        acc *= (n - m + k) as f64 / k as f64;
    }
    acc
}

/// Probability that `n` photons entering the local channel survive as `m`
/// in the kept output port, for fixed modulation phases.
pub fn fock_transition_prob(m: usize, n: usize, phi1: f64, phi2: f64) -> Result<f64> {
    if m > n {
        return Err(Error::InvalidParameter(format!(
            "output photon number {m} exceeds input {n}"
        )));
    }
    let tau = (0.5 * (phi2 - phi1)).cos().powi(2);
    Ok(binomial(n, m) * tau.powi(m as i32) * (1.0 - tau).powi((n - m) as i32))
}

/// Slice-box-averaged photon survival probabilities `t(m|n)` for
/// `0 <= m <= n <= n_max`. Rows sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n_max: usize,
    rows: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn identity(n_max: usize) -> Self {
        let rows = (0..=n_max)
            .map(|n| {
                let mut row = vec![0.0; n + 1];
                row[n] = 1.0;
                row
            })
            .collect();
        Self { n_max, rows }
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// `t(m|n)`.
    pub fn prob(&self, m: usize, n: usize) -> f64 {
        self.rows[n][m]
    }

    pub fn row_sum(&self, n: usize) -> f64 {
        self.rows[n].iter().sum()
    }

    /// Test hook: perturbs one entry, breaking normalization.
    pub fn corrupt_entry(&mut self, m: usize, n: usize, value: f64) {
        self.rows[n][m] = value;
    }
}

/// A rectangular phase box: one interval per modulation phase.
pub type PhaseBoxPair = ((f64, f64), (f64, f64));

/// Averages the transition law over a rectangular phase box
/// `box1 x box2`, one interval per modulator.
pub fn averaged_transition_matrix(
    n_max: usize,
    phase_box: PhaseBoxPair,
    cfg: &SourceConfig,
) -> Result<TransitionMatrix> {
    averaged_transition_matrix_with_tol(n_max, phase_box, cfg, TRANSITION_REL_TOL)
}

/// [`averaged_transition_matrix`] with an explicit quadrature tolerance.
pub fn averaged_transition_matrix_with_tol(
    n_max: usize,
    phase_box: PhaseBoxPair,
    cfg: &SourceConfig,
    rel_tol: f64,
) -> Result<TransitionMatrix> {
    let ((lo1, hi1), (lo2, hi2)) = phase_box;
    let width = 2.0 * cfg.delta();
    for (lo, hi) in [(lo1, hi1), (lo2, hi2)] {
        if !(lo < hi) {
            return Err(Error::InvalidParameter(format!(
                "empty phase interval [{lo}, {hi}]"
            )));
        }
        if hi - lo > width * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "interval [{lo}, {hi}] wider than one slice ({width})"
            )));
        }
    }
    let domain = HyperBox::new(vec![(lo1, hi1), (lo2, hi2)])?;
    let area = domain.volume();
    let mut rows = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let mut row = Vec::with_capacity(n + 1);
        for m in 0..=n {
            let q = integrate(
                |p| fock_transition_prob(m, n, p[0], p[1]).expect("m <= n"),
                &domain,
                rel_tol,
            )?;
            row.push(q.value / area);
        }
        rows.push(row);
    }
    Ok(TransitionMatrix { n_max, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::UniformStream;
    use crate::validation::mz_transition_oracle;
    use proptest::prelude::*;

    #[test]
    fn slice_of_canonical_examples() {
        assert_eq!(slice_of(0.0, 8), 1);
        assert_eq!(slice_of(PI, 8), 5);
        assert_eq!(slice_of(PI / 8.0 - 1e-9, 8), 1);
        // Just past the sector-1 edge lies the counterclockwise neighbor,
        // which is the last slice in the clockwise ordering.
        assert_eq!(slice_of(PI / 8.0 + 1e-9, 8), 8);
        // One step clockwise of sector 1.
        assert_eq!(slice_of(-PI / 8.0 - 1e-9, 8), 2);
        assert_eq!(slice_of(-PI / 8.0, 8), 1);
    }

    #[test]
    fn slice_of_recovers_centers() {
        for m in [2usize, 4, 8, 16] {
            for k in 1..=m {
                assert_eq!(slice_of(slice_center(k, m), m), k, "M={m} k={k}");
            }
        }
    }

    #[test]
    fn slice_intervals_tile_the_circle() {
        let m = 8;
        let total: f64 = (1..=m)
            .map(|k| {
                let (lo, hi) = slice_interval(k, m);
                hi - lo
            })
            .sum();
        assert!((total - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn bit_of_slice_examples() {
        assert_eq!(bit_of_slice(1, 8).unwrap(), KeyBit::Zero);
        assert_eq!(bit_of_slice(5, 8).unwrap(), KeyBit::One);
        assert_eq!(bit_of_slice(3, 8).unwrap(), KeyBit::NotKey);
        assert!(bit_of_slice(0, 8).is_err());
        assert!(bit_of_slice(9, 8).is_err());
    }

    #[test]
    fn output_signal_examples() {
        let cfg = SourceConfig::new(0.4, 8).unwrap();
        let aligned = output_signal(&PulsePair::new(0.0, 0.0), &cfg);
        assert!((aligned.intensity - 0.4).abs() < 1e-15);
        assert!(aligned.phase.abs() < 1e-15);

        let dark = output_signal(&PulsePair::new(0.0, PI), &cfg);
        assert!(dark.intensity.abs() < 1e-15);

        let skew = output_signal(&PulsePair::new(0.0, PI / 2.0), &cfg);
        assert!((skew.intensity - 0.2).abs() < 1e-15);
        assert!((skew.phase - PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn transition_prob_vacuum_and_aligned() {
        assert!((fock_transition_prob(0, 0, 1.3, -2.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((fock_transition_prob(4, 4, 0.7, 0.7).unwrap() - 1.0).abs() < 1e-15);
        assert!(fock_transition_prob(3, 2, 0.0, 0.0).is_err());
    }

    #[test]
    fn transition_prob_half_transmission() {
        // At a phase difference of pi/2 each photon survives with
        // probability 1/2, checked against the two-mode interferometer
        // oracle.
        for n in 0..=6usize {
            for m in 0..=n {
                let direct = fock_transition_prob(m, n, 0.0, PI / 2.0).unwrap();
                let expected = binomial(n, m) * 0.5f64.powi(n as i32);
                assert!((direct - expected).abs() < 1e-12);
                let oracle = mz_transition_oracle(m, n, 0.0, PI / 2.0);
                assert!((direct - oracle).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn transition_prob_matches_interferometer_oracle() {
        let mut stream = UniformStream::new(7);
        for _ in 0..100 {
            let phi1 = 2.0 * PI * stream.next_u01();
            let phi2 = 2.0 * PI * stream.next_u01();
            for n in 0..=6usize {
                for m in 0..=n {
                    let direct = fock_transition_prob(m, n, phi1, phi2).unwrap();
                    let oracle = mz_transition_oracle(m, n, phi1, phi2);
                    assert!(
                        (direct - oracle).abs() < 1e-9,
                        "n={n} m={m} phi=({phi1},{phi2}): {direct} vs {oracle}"
                    );
                }
            }
        }
    }

    #[test]
    fn averaged_matrix_identity_in_small_box_limit() {
        let cfg = SourceConfig::new(0.2, 8).unwrap();
        let eps = 1e-9;
        let t = averaged_transition_matrix(4, ((-eps, eps), (-eps, eps)), &cfg).unwrap();
        for n in 0..=4 {
            assert!((t.prob(n, n) - 1.0).abs() < 1e-9, "t({n}|{n}) = {}", t.prob(n, n));
        }
    }

    #[test]
    fn averaged_matrix_vacuum_row_and_row_sums() {
        let cfg = SourceConfig::new(0.2, 8).unwrap();
        let delta = cfg.delta();
        let t = averaged_transition_matrix(6, ((-delta, delta), (-delta, delta)), &cfg).unwrap();
        assert!((t.prob(0, 0) - 1.0).abs() < 1e-12);
        for n in 0..=6 {
            assert!((t.row_sum(n) - 1.0).abs() < 1e-9, "row {n} sums to {}", t.row_sum(n));
            for m in 0..=n {
                let p = t.prob(m, n);
                assert!(
                    (-1e-12..=1.0 + 1e-12).contains(&p),
                    "t({m}|{n}) = {p} out of range"
                );
            }
        }
    }

    #[test]
    fn averaged_single_photon_matches_closed_form() {
        // E[cos^2((phi1-phi2)/2)] over [-a, a]^2 is (2a^2 + 2 sin^2 a)/(2a)^2.
        let cfg = SourceConfig::new(0.2, 8).unwrap();
        let a = cfg.delta();
        let t = averaged_transition_matrix(1, ((-a, a), (-a, a)), &cfg).unwrap();
        let closed = (2.0 * a * a + 2.0 * a.sin().powi(2)) / (4.0 * a * a);
        assert!((t.prob(1, 1) - closed).abs() < 1e-6 * closed);
    }

    #[test]
    fn averaged_matrix_rejects_empty_or_wide_boxes() {
        let cfg = SourceConfig::new(0.2, 8).unwrap();
        assert!(averaged_transition_matrix(2, ((0.1, 0.1), (0.0, 0.2)), &cfg).is_err());
        assert!(averaged_transition_matrix(2, ((0.0, 1.0), (0.0, 0.2)), &cfg).is_err());
    }

    #[test]
    fn pulse_sampling_is_deterministic_and_uniform() {
        let mut a = UniformStream::new(42);
        let mut b = UniformStream::new(42);
        for _ in 0..100 {
            assert_eq!(sample_pulse_pair(&mut a), sample_pulse_pair(&mut b));
        }

        let n = 1_000_000usize;
        let mut stream = UniformStream::new(1);
        let mut sum_cos = 0.0;
        let mut sum_cross = 0.0;
        for _ in 0..n {
            let p = sample_pulse_pair(&mut stream);
            assert!((0.0..2.0 * PI).contains(&p.phi1));
            assert!((0.0..2.0 * PI).contains(&p.phi2));
            sum_cos += p.phi1.cos();
            sum_cross += p.phi1.cos() * p.phi2.cos();
        }
        let bound = 4.0 / (n as f64).sqrt();
        assert!((sum_cos / n as f64).abs() < bound, "mean cos = {}", sum_cos / n as f64);
        // Independence: E[cos phi1 cos phi2] = 0.
        assert!((sum_cross / n as f64).abs() < bound);
    }

    #[test]
    fn config_validation() {
        assert!(SourceConfig::new(-0.1, 8).is_err());
        assert!(SourceConfig::new(0.1, 7).is_err());
        assert!(SourceConfig::new(0.1, 0).is_err());
        let cfg = SourceConfig::new(0.1, 8).unwrap();
        assert!((cfg.delta() - PI / 8.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn transition_rows_normalize(n in 0usize..=8, phi1 in 0.0..(2.0 * PI), phi2 in 0.0..(2.0 * PI)) {
            let total: f64 = (0..=n).map(|m| fock_transition_prob(m, n, phi1, phi2).unwrap()).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn intensity_in_range_and_shift_invariant(
            phi1 in 0.0..(2.0 * PI),
            phi2 in 0.0..(2.0 * PI),
            shift in 0.0..(2.0 * PI),
        ) {
            let cfg = SourceConfig::new(0.7, 8).unwrap();
            let base = output_signal(&PulsePair::new(phi1, phi2), &cfg);
            prop_assert!(base.intensity >= 0.0 && base.intensity <= cfg.u_max() + 1e-15);
            let shifted = output_signal(&PulsePair::new(phi1 + shift, phi2 + shift), &cfg);
            prop_assert!((base.intensity - shifted.intensity).abs() < 1e-12);
        }

        #[test]
        fn slice_of_is_total_and_periodic(phase in -10.0f64..10.0, m in 1usize..=8) {
            let m = 2 * m;
            let k = slice_of(phase, m);
            prop_assert!(k >= 1 && k <= m);
            prop_assert_eq!(k, slice_of(phase + 2.0 * PI, m));
        }
    }
}

//! The layered balanced beam-splitter network that routes the users'
//! signals to the detectors.
//!
//! The network has `s` layers of 50:50 splitters. In layer `r` the signal
//! at port `i` interferes with the signal at port `i + 2^r`; composing all
//! layers yields a Hadamard-type transfer matrix whose `(j, i)` entry is
//! `(-1)^{<j, i>} / sqrt(N_D)` with `<j, i>` the bitwise dot product of the
//! port indices.

use crate::error::{Error, Result};
use num_complex::Complex64;

/// Layer count, detector count and user count of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkTopology {
    layers: u32,
    n_users: usize,
}

impl NetworkTopology {
    pub fn new(layers: u32, n_users: usize) -> Result<Self> {
        if layers == 0 || layers > 20 {
            return Err(Error::InvalidParameter(format!(
                "layer count must be in 1..=20, got {layers}"
            )));
        }
        let n_detectors = 1usize << layers;
        if n_users == 0 || n_users > n_detectors {
            return Err(Error::InvalidParameter(format!(
                "user count must be in 1..={n_detectors}, got {n_users}"
            )));
        }
        Ok(Self { layers, n_users })
    }

    pub fn layers(&self) -> u32 {
        self.layers
    }

    pub fn n_detectors(&self) -> usize {
        1 << self.layers
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }
}

/// Coherent-state amplitudes on the `N_D` network ports. Unused user
/// slots stay at exact vacuum (zero amplitude).
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeVector(pub Vec<Complex64>);

impl AmplitudeVector {
    pub fn vacuum(n: usize) -> Self {
        Self(vec![Complex64::new(0.0, 0.0); n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total_intensity(&self) -> f64 {
        self.0.iter().map(|a| a.norm_sqr()).sum()
    }
}

/// The set `F_r` of lower-arm port indices in layer `r`, and its
/// complement. The two partition `0..2^s` into halves of size `2^(s-1)`.
pub fn layer_sets(r: u32, s: u32) -> Result<(Vec<usize>, Vec<usize>)> {
    if s == 0 || r >= s {
        return Err(Error::InvalidParameter(format!(
            "layer index {r} out of range for {s} layers"
        )));
    }
    let block = 1usize << (r + 1);
    let half = 1usize << r;
    let n = 1usize << s;
    let mut lower = Vec::with_capacity(n / 2);
    let mut upper = Vec::with_capacity(n / 2);
    for k in 0..(n / block) {
        let base = k * block;
        lower.extend(base..base + half);
        upper.extend(base + half..base + block);
    }
    Ok((lower, upper))
}

/// Applies one splitter layer to a vector of coherent amplitudes.
///
/// Ports in `F_r` spread as `a_i -> (a_i + a_{i+2^r})/sqrt(2)`; their
/// partners as `a_j -> (a_{j-2^r} - a_j)/sqrt(2)`. Total intensity is
/// conserved.
pub fn evolve_layer(amps: &AmplitudeVector, r: u32, s: u32) -> Result<AmplitudeVector> {
    let n = 1usize << s;
    if amps.len() != n {
        return Err(Error::InvalidParameter(format!(
            "amplitude vector has length {}, expected {n}",
            amps.len()
        )));
    }
    let (lower, upper) = layer_sets(r, s)?;
    let half = 1usize << r;
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = AmplitudeVector::vacuum(n);
    for i in lower {
        let a = amps.0[i] * inv_sqrt2;
        out.0[i] += a;
        out.0[i + half] += a;
    }
    for j in upper {
        let a = amps.0[j] * inv_sqrt2;
        out.0[j - half] += a;
        out.0[j] -= a;
    }
    Ok(out)
}

/// The full `N_D x N_D` transfer matrix of an `s`-layer network.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl TransferMatrix {
    pub fn size(&self) -> usize {
        self.n
    }

    /// Entry mapping input port `i` to output port `j`.
    pub fn entry(&self, j: usize, i: usize) -> f64 {
        self.entries[j * self.n + i]
    }

    /// Applies the matrix to a coherent amplitude vector.
    pub fn apply(&self, amps: &AmplitudeVector) -> Result<AmplitudeVector> {
        if amps.len() != self.n {
            return Err(Error::InvalidParameter(format!(
                "amplitude vector has length {}, expected {}",
                amps.len(),
                self.n
            )));
        }
        let mut out = AmplitudeVector::vacuum(self.n);
        for j in 0..self.n {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..self.n {
                acc += self.entry(j, i) * amps.0[i];
            }
            out.0[j] = acc;
        }
        Ok(out)
    }
}

/// Parity of the bitwise dot product of two port indices.
#[inline]
pub fn bit_parity(j: usize, i: usize) -> bool {
    (j & i).count_ones() % 2 == 1
}

/// Interference sign `(-1)^{<j, i>}`.
#[inline]
pub fn interference_sign(j: usize, i: usize) -> f64 {
    if bit_parity(j, i) {
        -1.0
    } else {
        1.0
    }
}

/// Builds the transfer matrix `entry(j, i) = (-1)^{<j,i>} / sqrt(2^s)`.
pub fn transfer_matrix(s: u32) -> Result<TransferMatrix> {
    if s == 0 || s > 20 {
        return Err(Error::InvalidParameter(format!(
            "layer count must be in 1..=20, got {s}"
        )));
    }
    let n = 1usize << s;
    let norm = 1.0 / (n as f64).sqrt();
    let mut entries = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            entries[j * n + i] = interference_sign(j, i) * norm;
        }
    }
    Ok(TransferMatrix { n, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn basis(n: usize, i: usize) -> AmplitudeVector {
        let mut v = AmplitudeVector::vacuum(n);
        v.0[i] = Complex64::new(1.0, 0.0);
        v
    }

    fn compose_layers(input: &AmplitudeVector, s: u32) -> AmplitudeVector {
        let mut state = input.clone();
        for r in 0..s {
            state = evolve_layer(&state, r, s).unwrap();
        }
        state
    }

    #[test]
    fn layer_sets_examples() {
        assert_eq!(layer_sets(0, 2).unwrap(), (vec![0, 2], vec![1, 3]));
        assert_eq!(layer_sets(1, 2).unwrap(), (vec![0, 1], vec![2, 3]));
        assert_eq!(layer_sets(1, 3).unwrap(), (vec![0, 1, 4, 5], vec![2, 3, 6, 7]));
        assert!(layer_sets(2, 2).is_err());
    }

    #[test]
    fn layer_sets_partition_evenly() {
        for s in 1..=5u32 {
            for r in 0..s {
                let (lower, upper) = layer_sets(r, s).unwrap();
                assert_eq!(lower.len(), 1 << (s - 1));
                assert_eq!(upper.len(), 1 << (s - 1));
                let mut all: Vec<usize> = lower.iter().chain(upper.iter()).copied().collect();
                all.sort_unstable();
                assert_eq!(all, (0..1 << s).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn single_splitter() {
        let plus = evolve_layer(&basis(2, 0), 0, 1).unwrap();
        let inv = std::f64::consts::FRAC_1_SQRT_2;
        assert!((plus.0[0].re - inv).abs() < 1e-15);
        assert!((plus.0[1].re - inv).abs() < 1e-15);
        let minus = evolve_layer(&basis(2, 1), 0, 1).unwrap();
        assert!((minus.0[0].re - inv).abs() < 1e-15);
        assert!((minus.0[1].re + inv).abs() < 1e-15);
    }

    #[test]
    fn first_layer_pairs_adjacent_ports() {
        // Port 0 feeds the splitter shared with port 1, so one layer of a
        // two-layer network spreads it over ports 0 and 1.
        let out = evolve_layer(&basis(4, 0), 0, 2).unwrap();
        let inv = std::f64::consts::FRAC_1_SQRT_2;
        assert!((out.0[0].re - inv).abs() < 1e-15);
        assert!((out.0[1].re - inv).abs() < 1e-15);
        assert_eq!(out.0[2], Complex64::new(0.0, 0.0));
        assert_eq!(out.0[3], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn transfer_matrix_small_cases() {
        let t1 = transfer_matrix(1).unwrap();
        let inv = std::f64::consts::FRAC_1_SQRT_2;
        for (j, i, want) in [(0, 0, inv), (0, 1, inv), (1, 0, inv), (1, 1, -inv)] {
            assert!((t1.entry(j, i) - want).abs() < 1e-15);
        }
        let t2 = transfer_matrix(2).unwrap();
        let signs = [
            [1.0, 1.0, 1.0, 1.0],
            [1.0, -1.0, 1.0, -1.0],
            [1.0, 1.0, -1.0, -1.0],
            [1.0, -1.0, -1.0, 1.0],
        ];
        for j in 0..4 {
            for i in 0..4 {
                assert!((t2.entry(j, i) - signs[j][i] * 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn layer_composition_matches_transfer_matrix() {
        for s in 1..=5u32 {
            let n = 1usize << s;
            let t = transfer_matrix(s).unwrap();
            for i in 0..n {
                let out = compose_layers(&basis(n, i), s);
                for j in 0..n {
                    assert!(
                        (out.0[j].re - t.entry(j, i)).abs() < 1e-12 && out.0[j].im.abs() < 1e-12,
                        "s={s} column {i} row {j}: {} vs {}",
                        out.0[j].re,
                        t.entry(j, i)
                    );
                }
            }
        }
    }

    #[test]
    fn transfer_matrix_is_orthogonal() {
        for s in 1..=5u32 {
            let t = transfer_matrix(s).unwrap();
            let n = t.size();
            for a in 0..n {
                for b in 0..n {
                    let dot: f64 = (0..n).map(|k| t.entry(a, k) * t.entry(b, k)).sum();
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-12, "s={s} ({a},{b}): {dot}");
                }
            }
        }
    }

    #[test]
    fn row_and_column_zero_are_uniform() {
        for s in 1..=5u32 {
            let t = transfer_matrix(s).unwrap();
            let norm = 1.0 / ((1u64 << s) as f64).sqrt();
            for k in 0..t.size() {
                assert!((t.entry(0, k) - norm).abs() < 1e-15);
                assert!((t.entry(k, 0) - norm).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(NetworkTopology::new(0, 1).is_err());
        assert!(NetworkTopology::new(2, 5).is_err());
        assert!(NetworkTopology::new(2, 0).is_err());
        assert!(evolve_layer(&basis(4, 0), 0, 3).is_err());
        assert!(transfer_matrix(0).is_err());
    }

    proptest! {
        #[test]
        fn energy_conserved_through_layers(
            s in 1u32..=4,
            parts in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 16),
        ) {
            let n = 1usize << s;
            let mut amps = AmplitudeVector::vacuum(n);
            for (i, &(re, im)) in parts.iter().take(n).enumerate() {
                amps.0[i] = Complex64::new(re, im);
            }
            let before = amps.total_intensity();
            let after = compose_layers(&amps, s).total_intensity();
            prop_assert!((before - after).abs() <= 1e-12 * before.max(1.0));
        }
    }
}

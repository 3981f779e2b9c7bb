//! Phase-error-rate estimation from corrected yields.
//!
//! Granting the local source channels to the adversary means the yields
//! estimated for the external channel must be corrected for photon loss
//! inside each user's lab. The corrected yields then bound the
//! phase error rate through a coherent-state expansion over even-parity
//! sign vectors, with an explicit tail bound for photon numbers beyond
//! the decoy cutoff.

use crate::channel::{fock_yields, ChannelConfig};
use crate::error::{Error, Result};
use crate::source::TransitionMatrix;
use std::collections::HashMap;

/// Per-detector yields indexed by one photon number per user, up to a
/// total-photon cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct YieldTensor {
    n_users: usize,
    n_bar: usize,
    indices: Vec<Vec<usize>>,
    index_of: HashMap<Vec<usize>, usize>,
    /// `per_detector[j][rank]`.
    per_detector: Vec<Vec<f64>>,
}

/// All photon-number vectors of length `n_users` with total at most
/// `n_bar`, in lexicographic order.
pub fn photon_vectors(n_users: usize, n_bar: usize) -> Vec<Vec<usize>> {
    fn rec(slots: usize, budget: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if slots == 0 {
            out.push(current.clone());
            return;
        }
        for n in 0..=budget {
            current.push(n);
            rec(slots - 1, budget - n, current, out);
            current.pop();
        }
    }
    let mut out = Vec::new();
    rec(n_users, n_bar, &mut Vec::new(), &mut out);
    out
}

impl YieldTensor {
    pub fn new(n_users: usize, n_bar: usize, n_detectors: usize) -> Self {
        let indices = photon_vectors(n_users, n_bar);
        let index_of = indices
            .iter()
            .enumerate()
            .map(|(r, v)| (v.clone(), r))
            .collect();
        let per_detector = vec![vec![0.0; indices.len()]; n_detectors];
        Self {
            n_users,
            n_bar,
            indices,
            index_of,
            per_detector,
        }
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_bar(&self) -> usize {
        self.n_bar
    }

    pub fn n_detectors(&self) -> usize {
        self.per_detector.len()
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    pub fn get(&self, j: usize, n_vec: &[usize]) -> f64 {
        self.per_detector[j][self.index_of[n_vec]]
    }

    pub fn set(&mut self, j: usize, n_vec: &[usize], value: f64) {
        let rank = self.index_of[n_vec];
        self.per_detector[j][rank] = value;
    }
}

/// Fills a yield tensor with the exact infinite-decoy yields of the
/// channel model.
pub fn yield_tensor_from_channel(cfg: &ChannelConfig, n_bar: usize) -> Result<YieldTensor> {
    let mut tensor = YieldTensor::new(cfg.n_users(), n_bar, cfg.n_detectors());
    for n_vec in photon_vectors(cfg.n_users(), n_bar) {
        for j in 0..cfg.n_detectors() {
            let y = fock_yields(&n_vec, j, cfg)?;
            tensor.set(j, &n_vec, y);
        }
    }
    Ok(tensor)
}

/// Applies the per-user local transition matrices to a raw yield tensor:
/// `Y_Z[n] = sum_{m <= n} prod_i t_i(m_i | n_i) * Y[m]`.
///
/// This is the factorized form of the full phase integral: the integrand
/// is a product of per-user conditional probabilities, so the
/// 2N-dimensional average reduces to the per-user slice-box averages
/// already folded into each `TransitionMatrix`.
pub fn correct_yields(raw: &YieldTensor, transitions: &[TransitionMatrix]) -> Result<YieldTensor> {
    if transitions.len() != raw.n_users {
        return Err(Error::InvalidParameter(format!(
            "expected {} transition matrices, got {}",
            raw.n_users,
            transitions.len()
        )));
    }
    for (i, t) in transitions.iter().enumerate() {
        if t.n_max() < raw.n_bar {
            return Err(Error::InvalidParameter(format!(
                "transition matrix {i} covers n <= {}, need {}",
                t.n_max(),
                raw.n_bar
            )));
        }
    }
    let mut corrected = YieldTensor::new(raw.n_users, raw.n_bar, raw.n_detectors());
    for n_vec in raw.indices.clone() {
        // Enumerate m <= n componentwise, accumulating the transition
        // product for every detector at once.
        let mut m_vec = vec![0usize; raw.n_users];
        let mut sums = vec![0.0; raw.n_detectors()];
        loop {
            let mut weight = 1.0;
            for i in 0..raw.n_users {
                weight *= transitions[i].prob(m_vec[i], n_vec[i]);
            }
            if weight != 0.0 {
                for (j, sum) in sums.iter_mut().enumerate() {
                    *sum += weight * raw.get(j, &m_vec);
                }
            }
            // Odometer increment of m_vec within the box [0, n_vec].
            let mut carry = 0;
            loop {
                if carry == raw.n_users {
                    break;
                }
                if m_vec[carry] < n_vec[carry] {
                    m_vec[carry] += 1;
                    break;
                }
                m_vec[carry] = 0;
                carry += 1;
            }
            if carry == raw.n_users {
                break;
            }
        }
        for (j, sum) in sums.into_iter().enumerate() {
            corrected.set(j, &n_vec, sum);
        }
    }
    Ok(corrected)
}

/// Coherent-state parity coefficient: `e^{-alpha^2/2} alpha^n / sqrt(n!)`
/// when `n + l` is even, zero otherwise.
pub fn coeff_c(n: usize, l: u8, alpha: f64) -> f64 {
    if (n + l as usize) % 2 == 1 {
        return 0.0;
    }
    let mut t = 1.0;
    for k in 1..=n {
        t *= alpha / (k as f64).sqrt();
    }
    (-0.5 * alpha * alpha).exp() * t
}

/// Precomputed parity coefficients for every user.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffTable {
    alphas: Vec<f64>,
    n_bar: usize,
    /// `c[i][n][l]`.
    c: Vec<Vec<[f64; 2]>>,
}

impl CoeffTable {
    pub fn new(alphas: &[f64], n_bar: usize) -> Result<Self> {
        for &a in alphas {
            if !(a >= 0.0) || !a.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "amplitude must be finite and nonnegative, got {a}"
                )));
            }
        }
        let c = alphas
            .iter()
            .map(|&a| {
                (0..=n_bar)
                    .map(|n| [coeff_c(n, 0, a), coeff_c(n, 1, a)])
                    .collect()
            })
            .collect();
        Ok(Self {
            alphas: alphas.to_vec(),
            n_bar,
            c,
        })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn n_bar(&self) -> usize {
        self.n_bar
    }

    pub fn c(&self, user: usize, n: usize, l: u8) -> f64 {
        self.c[user][n][l as usize]
    }
}

/// All length-`n` binary vectors of even Hamming weight, in increasing
/// binary order. There are `2^(n-1)` of them.
pub fn v_set(n: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::with_capacity(1 << (n - 1));
    for bits in 0..(1u64 << n) {
        if (bits.count_ones() % 2) == 0 {
            out.push((0..n).map(|i| ((bits >> i) & 1) as u8).collect());
        }
    }
    out
}

/// One parity-restricted coherent series
/// `e^{-a^2/2} * sum_{n = l, l+2, ...} a^n / sqrt(n!)`, truncated once
/// terms drop below 1e-15 of the running sum, with a geometric remainder
/// bound folded in so the result never undershoots.
fn parity_series(alpha: f64, l: u8) -> f64 {
    if alpha == 0.0 {
        return if l == 0 { 1.0 } else { 0.0 };
    }
    let a2 = alpha * alpha;
    let mut n = l as usize;
    let mut term = if l == 0 { 1.0 } else { alpha };
    let mut acc = term;
    loop {
        let step = a2 / (((n + 1) * (n + 2)) as f64).sqrt();
        term *= step;
        n += 2;
        acc += term;
        if term < 1e-15 * acc {
            let rho = a2 / (((n + 1) * (n + 2)) as f64).sqrt();
            if rho < 1.0 {
                acc += term * rho / (1.0 - rho);
                break;
            }
        }
        if n > 500 {
            break;
        }
    }
    (-0.5 * a2).exp() * acc
}

/// Tail of the coefficient product over all photon-number vectors with
/// total at least `n_bar + 2`, computed as the full product sum minus the
/// partial sum over totals up to `n_bar + 1`.
pub fn delta_tail(v: &[u8], n_bar: usize, alphas: &[f64]) -> f64 {
    debug_assert_eq!(v.len(), alphas.len());
    let full: f64 = v
        .iter()
        .zip(alphas)
        .map(|(&l, &a)| parity_series(a, l))
        .product();

    // Partial sum over sum(n) <= n_bar + 1.
    fn rec(v: &[u8], alphas: &[f64], user: usize, budget: usize, prefix: f64, acc: &mut f64) {
        if user == v.len() {
            *acc += prefix;
            return;
        }
        for n in 0..=budget {
            let c = coeff_c(n, v[user], alphas[user]);
            if c != 0.0 {
                rec(v, alphas, user + 1, budget - n, prefix * c, acc);
            }
        }
    }
    let mut partial = 0.0;
    rec(v, alphas, 0, n_bar + 1, 1.0, &mut partial);
    (full - partial).max(0.0)
}

/// Phase-error-rate bound for detector `j` from corrected yields:
/// `(1/pr_kg) * sum_{v in V} (sum_{|n| <= n_bar} prod_i c_i √Y + Delta_v)^2`,
/// clamped to `[0, 1]`.
pub fn phase_error_rate(
    j: usize,
    corrected: &YieldTensor,
    coeffs: &CoeffTable,
    pr_kg: f64,
) -> Result<f64> {
    if !(pr_kg > 0.0) {
        return Err(Error::UndefinedObservable(
            "phase error rate conditioned on a zero-probability click".into(),
        ));
    }
    if coeffs.alphas().len() != corrected.n_users() || coeffs.n_bar() < corrected.n_bar() {
        return Err(Error::InvalidParameter(
            "coefficient table does not cover the yield tensor".into(),
        ));
    }
    let n_users = corrected.n_users();
    let mut total = 0.0;
    for v in v_set(n_users) {
        let mut inner = 0.0;
        for n_vec in corrected.indices() {
            let mut prod = 1.0;
            for i in 0..n_users {
                prod *= coeffs.c(i, n_vec[i], v[i]);
                if prod == 0.0 {
                    break;
                }
            }
            if prod != 0.0 {
                inner += prod * corrected.get(j, n_vec).max(0.0).sqrt();
            }
        }
        let tail = delta_tail(&v, corrected.n_bar(), coeffs.alphas());
        total += (inner + tail) * (inner + tail);
    }
    Ok((total / pr_kg).clamp(0.0, 1.0))
}

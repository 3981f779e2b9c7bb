//! Per-combination key rates, branch cutting, the combination sum and the
//! active-limit baseline.
//!
//! A slice combination fixes the announced slice pair of every user. Its
//! rate is the detector sum of `Pr(click) * [1 - h(phase error) - max
//! pairwise h(QBER)]`, where the pairwise error rates are taken over the
//! bit ensemble obtained by flipping each user's pair half a turn (the
//! key bits) and a bit boundary that rotates with the pattern. The total
//! rate averages `max(0, R)` over all `M^(2N)` combinations; the filter
//! of [`branch_cut_filter`] drops combinations with large intra-user or
//! inter-user phase mismatch, and a global slice rotation is an exact
//! M-fold symmetry used to shrink the enumeration.
//!
//! Click probabilities inside the engine use a factorized resolvent of
//! the single-click formula: writing `exp(|beta_j|^2)` as a Gaussian
//! integral over one auxiliary complex mode splits the 2N-dimensional
//! phase average into per-user factors, which are tabulated once per
//! configuration on a radial-angular grid. The slower quadrature route in
//! [`crate::channel`] remains the contract reference and the tables are
//! validated against it.

use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::network::bit_parity;
use crate::phase_error::{
    correct_yields, delta_tail, v_set, yield_tensor_from_channel, CoeffTable,
    YieldTensor,
};
use crate::quadrature::{gauss_legendre, NeumaierSum};
use crate::source::{slice_interval, TransitionMatrix};
use rayon::prelude::*;
use std::collections::HashMap;
use std::sync::{Arc, RwLock};

/// One slice pair `(k_i1, k_i2)` per user, entries in `1..=M`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SliceCombination {
    pairs: Vec<(usize, usize)>,
}

impl SliceCombination {
    pub fn new(pairs: Vec<(usize, usize)>) -> Self {
        Self { pairs }
    }

    /// Builds from the flat index list `(k_01, k_02, k_11, k_12, ...)`.
    pub fn from_flat(k: &[usize]) -> Result<Self> {
        if k.is_empty() || !k.len().is_multiple_of(2) {
            return Err(Error::InvalidParameter(
                "combination needs two slice indices per user".into(),
            ));
        }
        Ok(Self {
            pairs: k.chunks_exact(2).map(|c| (c[0], c[1])).collect(),
        })
    }

    /// Every user on slice `k` with both pulses.
    pub fn aligned(n_users: usize, k: usize) -> Self {
        Self {
            pairs: vec![(k, k); n_users],
        }
    }

    pub fn n_users(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().copied()
    }

    pub fn pair(&self, user: usize) -> (usize, usize) {
        self.pairs[user]
    }

    pub fn check_against(&self, n_users: usize, slices: usize) -> Result<()> {
        if self.pairs.len() != n_users {
            return Err(Error::InvalidParameter(format!(
                "combination covers {} users, expected {n_users}",
                self.pairs.len()
            )));
        }
        for &(k1, k2) in &self.pairs {
            if k1 == 0 || k1 > slices || k2 == 0 || k2 > slices {
                return Err(Error::InvalidParameter(format!(
                    "slice index out of range 1..={slices}: ({k1}, {k2})"
                )));
            }
        }
        Ok(())
    }

    /// Shifts both slice indices of the users in `mask` by half a turn.
    pub fn flip_users(&self, mask: usize, slices: usize) -> Self {
        let half = slices / 2;
        let pairs = self
            .pairs
            .iter()
            .enumerate()
            .map(|(i, &(k1, k2))| {
                if (mask >> i) & 1 == 1 {
                    (
                        (k1 - 1 + half) % slices + 1,
                        (k2 - 1 + half) % slices + 1,
                    )
                } else {
                    (k1, k2)
                }
            })
            .collect();
        Self { pairs }
    }

    /// Rotates every slice index by `t`.
    pub fn rotate(&self, t: usize, slices: usize) -> Self {
        let pairs = self
            .pairs
            .iter()
            .map(|&(k1, k2)| ((k1 - 1 + t) % slices + 1, (k2 - 1 + t) % slices + 1))
            .collect();
        Self { pairs }
    }
}

/// Branch-cut thresholds: `x` bounds each user's slice mismatch, `y` the
/// pairwise mismatch of the slice means. Both in `1..=M-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchCutParams {
    pub x: usize,
    pub y: usize,
}

impl BranchCutParams {
    pub fn validate(&self, slices: usize) -> Result<()> {
        for (name, v) in [("x", self.x), ("y", self.y)] {
            if v == 0 || v >= slices {
                return Err(Error::InvalidParameter(format!(
                    "branch-cut parameter {name} must be in 1..={}, got {v}",
                    slices - 1
                )));
            }
        }
        Ok(())
    }
}

/// Binary entropy `h(q) = -q log2 q - (1-q) log2 (1-q)`.
pub fn binary_entropy(q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidParameter(format!(
            "entropy argument must lie in [0, 1], got {q}"
        )));
    }
    Ok(entropy_unchecked(q))
}

fn entropy_unchecked(q: f64) -> f64 {
    if q <= 0.0 || q >= 1.0 {
        return 0.0;
    }
    -(q * q.log2() + (1.0 - q) * (1.0 - q).log2())
}

/// Privacy-amplification entropy of a phase-error bound. A bound past
/// one half is vacuous, so it is pinned there: the symmetric branch of
/// `h` would otherwise credit key to configurations with no security
/// margin at all.
fn privacy_entropy(q_z: f64) -> f64 {
    entropy_unchecked(q_z.min(0.5))
}

/// Signed slice difference wrapped to `[-M/2, M/2)`.
pub fn wrapped_slice_diff(k1: usize, k2: usize, slices: usize) -> i64 {
    let m = slices as i64;
    (k2 as i64 - k1 as i64 + m / 2).rem_euclid(m) - m / 2
}

/// Position of the pair's slice mean on the circle, in half-slice units
/// (`0..2M`), measured clockwise from the top sector.
fn mean_position_half_units(k1: usize, k2: usize, slices: usize) -> i64 {
    let d = wrapped_slice_diff(k1, k2, slices);
    (2 * (k1 as i64 - 1) + d).rem_euclid(2 * slices as i64)
}

fn circular_distance(a: i64, b: i64, period: i64) -> i64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

/// Keeps a combination when every user's slice mismatch is at most `x`
/// and every pair of users' slice means differ by at most `y`, distances
/// taken on the M-cycle.
pub fn branch_cut_filter(combo: &SliceCombination, params: &BranchCutParams, slices: usize) -> bool {
    let m = slices as i64;
    let mut means = Vec::with_capacity(combo.n_users());
    for (k1, k2) in combo.pairs() {
        if wrapped_slice_diff(k1, k2, slices).unsigned_abs() > params.x as u64 {
            return false;
        }
        means.push(mean_position_half_units(k1, k2, slices));
    }
    // Mean distances in half-slice units on the 2M-cycle.
    let bound = 2 * params.y as i64;
    for i in 0..means.len() {
        for j in (i + 1)..means.len() {
            if circular_distance(means[i], means[j], 2 * m) > bound {
                return false;
            }
        }
    }
    true
}

/// Gauss-Laguerre nodes/weights for `int_0^inf e^{-t} f(t) dt`.
fn gauss_laguerre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..n {
        if i == 0 {
            z = 3.0 / (1.0 + 2.4 * nf);
        } else if i == 1 {
            z += 15.0 / (1.0 + 2.5 * nf);
        } else {
            let ai = (i - 1) as f64;
            z += ((1.0 + 2.55 * ai) / (1.9 * ai)) * (z - nodes[i - 2]);
        }
        let mut p1 = 1.0;
        let mut p2 = 0.0;
        for _ in 0..200 {
            p1 = 1.0;
            p2 = 0.0;
            for j in 1..=n {
                let jf = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * jf - 1.0 - z) * p2 - (jf - 1.0) * p3) / jf;
            }
            let pp = nf * (p1 - p2) / z;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        let pp = nf * (p1 - p2) / z;
        nodes[i] = z;
        weights[i] = -1.0 / (pp * nf * p2);
    }
    (nodes, weights)
}

/// Per-user factor tables for the resolvent form of the single-click
/// average. `g[user][d_idx]` holds, on a radial-angular grid over the
/// auxiliary mode, the box average of
/// `exp(-|alpha|^2 + 2 sqrt(t) Re(e^{-i theta} alpha) / sqrt(N_D))`
/// for the base pair `(1, 1+d)`. Rotating the pair or flipping it half a
/// turn is an exact shift of the angular index.
struct ClickTables {
    n_users: usize,
    n_det: usize,
    slices: usize,
    n_theta: usize,
    slot: usize,
    half: usize,
    radial_weights: Vec<f64>,
    /// `g[user][d_idx][q * n_theta + a]`, `d_idx = d + M/2` for wrapped d.
    g: Vec<Vec<Vec<f64>>>,
    /// `h[user][d_idx]`: plain box average of `exp(-|alpha|^2)`.
    h: Vec<Vec<f64>>,
    p_dark: f64,
    /// Bitmask of `<j, i>` parities per detector.
    detector_codes: Vec<usize>,
}

const RADIAL_NODES: usize = 24;
const INNER_GL_NODES: usize = 12;

impl ClickTables {
    fn build(cfg: &ChannelConfig) -> Result<Self> {
        let n_users = cfg.n_users();
        let n_det = cfg.n_detectors();
        let m = cfg.source().slices();
        if n_users > 16 {
            return Err(Error::InvalidParameter(
                "engine supports at most 16 users".into(),
            ));
        }
        let slot = 64usize.div_ceil(m);
        let slot = slot.max(2);
        let n_theta = m * slot;
        let half = n_theta / 2;

        let (radial_nodes, radial_weights) = gauss_laguerre(RADIAL_NODES);
        let (gl_nodes, gl_weights) = gauss_legendre(INNER_GL_NODES);
        let u_max = cfg.source().u_max();
        let inv_sqrt_nd = 1.0 / (n_det as f64).sqrt();

        let mut g = Vec::with_capacity(n_users);
        let mut h = Vec::with_capacity(n_users);
        for user in 0..n_users {
            let eta = cfg.eta(user);
            let offset = cfg.phase_offset(user);
            let scale = (eta * u_max).sqrt();
            let mut g_user = Vec::with_capacity(m);
            let mut h_user = Vec::with_capacity(m);
            for d_idx in 0..m {
                let d = d_idx as i64 - (m / 2) as i64;
                let k2 = (d.rem_euclid(m as i64)) as usize + 1;
                let (lo1, hi1) = slice_interval(1, m);
                let (lo2, hi2) = slice_interval(k2, m);

                // Inner grid over the base box, weights normalized to a
                // box average.
                let mut grid = Vec::with_capacity(INNER_GL_NODES * INNER_GL_NODES);
                for (idx1, &x1) in gl_nodes.iter().enumerate() {
                    let phi1 = 0.5 * (lo1 + hi1) + 0.5 * (hi1 - lo1) * x1 + offset;
                    for (idx2, &x2) in gl_nodes.iter().enumerate() {
                        let phi2 = 0.5 * (lo2 + hi2) + 0.5 * (hi2 - lo2) * x2 + offset;
                        let w = 0.25 * gl_weights[idx1] * gl_weights[idx2];
                        let re = 0.5 * scale * (phi1.cos() + phi2.cos());
                        let im = 0.5 * scale * (phi1.sin() + phi2.sin());
                        grid.push((w, re, im, re * re + im * im));
                    }
                }

                let mut table = vec![0.0; RADIAL_NODES * n_theta];
                for (q, &t) in radial_nodes.iter().enumerate() {
                    let coupling = 2.0 * t.sqrt() * inv_sqrt_nd;
                    for a in 0..n_theta {
                        let theta = a as f64 * 2.0 * std::f64::consts::PI / n_theta as f64;
                        let (sin_t, cos_t) = theta.sin_cos();
                        let mut acc = 0.0;
                        for &(w, re, im, norm2) in &grid {
                            acc += w * (-norm2 + coupling * (re * cos_t + im * sin_t)).exp();
                        }
                        table[q * n_theta + a] = acc;
                    }
                }
                let h_val: f64 = grid.iter().map(|&(w, _, _, n2)| w * (-n2).exp()).sum();
                g_user.push(table);
                h_user.push(h_val);
            }
            g.push(g_user);
            h.push(h_user);
        }

        let detector_codes = (0..n_det)
            .map(|j| {
                (0..n_users)
                    .map(|i| usize::from(bit_parity(j, i)) << i)
                    .sum()
            })
            .collect();

        Ok(Self {
            n_users,
            n_det,
            slices: m,
            n_theta,
            slot,
            half,
            radial_weights,
            g,
            h,
            p_dark: cfg.p_dark(),
            detector_codes,
        })
    }

    /// Single-click probabilities for every sign/flip pattern over the
    /// users. Entry `f` is `Pr(single click at j | member sigma)` whenever
    /// `f = sigma XOR detector_code(j)`.
    fn click_profile(&self, combo: &SliceCombination) -> Vec<f64> {
        let n = self.n_users;
        let nf = 1usize << n;
        let m = self.slices;
        let mut d_idx = Vec::with_capacity(n);
        let mut base_shift = Vec::with_capacity(n);
        for (k1, k2) in combo.pairs() {
            let d = wrapped_slice_diff(k1, k2, m);
            d_idx.push((d + (m / 2) as i64) as usize);
            base_shift.push((k1 - 1) * self.slot);
        }

        let mut h_prod = 1.0;
        for (user, &di) in d_idx.iter().enumerate() {
            h_prod *= self.h[user][di];
        }

        let mut e = vec![NeumaierSum::new(); nf];
        let mut g0 = vec![0.0; n];
        let mut g1 = vec![0.0; n];
        for q in 0..RADIAL_NODES {
            let wq = self.radial_weights[q];
            let row = q * self.n_theta;
            for a in 0..self.n_theta {
                for user in 0..n {
                    let table = &self.g[user][d_idx[user]];
                    let base = a + base_shift[user];
                    g0[user] = table[row + base % self.n_theta];
                    g1[user] = table[row + (base + self.half) % self.n_theta];
                }
                for (f, acc) in e.iter_mut().enumerate() {
                    let mut prod = wq;
                    for user in 0..n {
                        prod *= if (f >> user) & 1 == 1 { g1[user] } else { g0[user] };
                    }
                    acc.add(prod);
                }
            }
        }

        let survive = 1.0 - self.p_dark;
        let dark_factor = survive.powi(self.n_det as i32 - 1);
        e.into_iter()
            .map(|acc| {
                let expectation = acc.value() / self.n_theta as f64;
                (dark_factor * (expectation - survive * h_prod)).max(0.0)
            })
            .collect()
    }
}

/// Precomputed state for evaluating per-combination rates at one channel
/// configuration.
pub struct Engine {
    cfg: ChannelConfig,
    n_bar: usize,
    tables: ClickTables,
    raw_yields: YieldTensor,
    transitions: Vec<TransitionMatrix>,
    coeffs: CoeffTable,
    tails: Vec<f64>,
    vs: Vec<Vec<u8>>,
    /// Phase-error numerators per absolute-mismatch key: `sums[j]`.
    phase_sums: RwLock<HashMap<Vec<usize>, Arc<Vec<f64>>>>,
}

/// Optional engine inputs: a transition-matrix quadrature tolerance and
/// precomputed raw yields (for callers that cache them).
#[derive(Debug, Clone, Default)]
pub struct EngineSettings {
    pub transition_rel_tol: Option<f64>,
    pub raw_yields: Option<YieldTensor>,
}

impl Engine {
    pub fn new(cfg: &ChannelConfig, n_bar: usize) -> Result<Self> {
        Self::new_with(cfg, n_bar, EngineSettings::default())
    }

    pub fn new_with(cfg: &ChannelConfig, n_bar: usize, settings: EngineSettings) -> Result<Self> {
        let tables = ClickTables::build(cfg)?;
        let raw_yields = match settings.raw_yields {
            Some(t) => {
                if t.n_users() != cfg.n_users()
                    || t.n_bar() != n_bar
                    || t.n_detectors() != cfg.n_detectors()
                {
                    return Err(Error::InvalidParameter(
                        "precomputed yield tensor does not match the configuration".into(),
                    ));
                }
                t
            }
            None => yield_tensor_from_channel(cfg, n_bar)?,
        };
        let m = cfg.source().slices();
        let t_tol = settings
            .transition_rel_tol
            .unwrap_or(crate::source::TRANSITION_REL_TOL);
        // Transition matrices depend only on the absolute wrapped slice
        // mismatch of the pair.
        let mut transitions = Vec::with_capacity(m / 2 + 1);
        for d in 0..=(m / 2) {
            let k2 = d + 1;
            let box1 = slice_interval(1, m);
            let box2 = slice_interval(k2, m);
            transitions.push(crate::source::averaged_transition_matrix_with_tol(
                n_bar,
                (box1, box2),
                cfg.source(),
                t_tol,
            )?);
        }
        let alphas = vec![cfg.source().u_max().sqrt(); cfg.n_users()];
        let coeffs = CoeffTable::new(&alphas, n_bar)?;
        let vs = v_set(cfg.n_users());
        let tails = vs
            .iter()
            .map(|v| delta_tail(v, n_bar, &alphas))
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            n_bar,
            tables,
            raw_yields,
            transitions,
            coeffs,
            tails,
            vs,
            phase_sums: RwLock::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    pub fn n_bar(&self) -> usize {
        self.n_bar
    }

    /// Fast-path click probability `Pr(single click at j | combo)`,
    /// matching [`crate::channel::pr_omega_given_kg`] up to quadrature
    /// tolerance.
    pub fn click_probability(&self, combo: &SliceCombination, j: usize) -> Result<f64> {
        combo.check_against(self.cfg.n_users(), self.cfg.source().slices())?;
        if j >= self.cfg.n_detectors() {
            return Err(Error::InvalidParameter(format!(
                "detector index {j} out of range"
            )));
        }
        let profile = self.tables.click_profile(combo);
        Ok(profile[self.tables.detector_codes[j]])
    }

    /// `sum_v (A_v + Delta_v)^2` per detector for a given per-user
    /// absolute slice mismatch.
    fn phase_sum_for(&self, key: &[usize]) -> Result<Arc<Vec<f64>>> {
        if let Some(hit) = self.phase_sums.read().unwrap().get(key) {
            return Ok(hit.clone());
        }
        let ts: Vec<TransitionMatrix> =
            key.iter().map(|&d| self.transitions[d].clone()).collect();
        let corrected = correct_yields(&self.raw_yields, &ts)?;
        let n_det = self.cfg.n_detectors();
        let sums: Vec<f64> = (0..n_det)
            .map(|j| phase_error_numerator(&corrected, &self.coeffs, &self.vs, &self.tails, j))
            .collect();
        let arc = Arc::new(sums);
        self.phase_sums
            .write()
            .unwrap()
            .entry(key.to_vec())
            .or_insert_with(|| arc.clone());
        Ok(arc)
    }

    /// Signed per-combination rate
    /// `R = sum_j Pr(click j | combo) * [1 - h(Qz_j) - max_i h(Q_{j,i})]`.
    ///
    /// Negative values pass through; the combination sum floors them.
    pub fn rate_for_combination(&self, combo: &SliceCombination) -> Result<f64> {
        let m = self.cfg.source().slices();
        let n_users = self.cfg.n_users();
        combo.check_against(n_users, m)?;

        let profile = self.tables.click_profile(combo);
        let den: f64 = profile.iter().sum();

        let key: Vec<usize> = combo
            .pairs()
            .map(|(k1, k2)| wrapped_slice_diff(k1, k2, m).unsigned_abs() as usize)
            .collect();
        let phase_sums = self.phase_sum_for(&key)?;

        // Relative key bits of the base pattern: user i agrees with user 0
        // unless their slice means sit more than a quarter turn apart.
        let means: Vec<i64> = combo
            .pairs()
            .map(|(k1, k2)| mean_position_half_units(k1, k2, m))
            .collect();
        let period = 2 * m as i64;
        let base_rbit: Vec<bool> = (1..n_users)
            .map(|i| circular_distance(means[i], means[0], period) > (m / 2) as i64)
            .collect();

        let n_patterns = 1usize << n_users;
        // Phase-error conditioning uses the key-generation click
        // probability of the whole announced class (the average over its
        // bit patterns), not the single pattern's.
        let pr_kg_class = den / n_patterns as f64;
        let mut rate = 0.0;
        for j in 0..self.cfg.n_detectors() {
            let code = self.tables.detector_codes[j];
            let w = profile[code];
            if w <= 0.0 || den <= 0.0 {
                continue;
            }
            let qz = (phase_sums[j] / pr_kg_class).clamp(0.0, 1.0);
            let mut worst_pair = 0.0f64;
            for i in 1..n_users {
                let parity = (code >> i) & 1 == 1;
                let mut num = 0.0;
                for sigma in 0..n_patterns {
                    let rbit =
                        base_rbit[i - 1] ^ ((sigma >> i) & 1 == 1) ^ (sigma & 1 == 1);
                    if rbit != parity {
                        num += profile[sigma ^ code];
                    }
                }
                let q = (num / den).clamp(0.0, 1.0);
                worst_pair = worst_pair.max(entropy_unchecked(q));
            }
            rate += w * (1.0 - privacy_entropy(qz) - worst_pair);
        }
        Ok(rate)
    }
}

/// The unnormalized phase-error numerator `sum_v (A_v + Delta_v)^2` at
/// detector `j` for a yield tensor.
fn phase_error_numerator(
    tensor: &YieldTensor,
    coeffs: &CoeffTable,
    vs: &[Vec<u8>],
    tails: &[f64],
    j: usize,
) -> f64 {
    let n_users = tensor.n_users();
    let mut total = 0.0;
    for (v, tail) in vs.iter().zip(tails) {
        let mut inner = 0.0;
        for n_vec in tensor.indices() {
            let mut prod = 1.0;
            for i in 0..n_users {
                prod *= coeffs.c(i, n_vec[i], v[i]);
                if prod == 0.0 {
                    break;
                }
            }
            if prod != 0.0 {
                inner += prod * tensor.get(j, n_vec).max(0.0).sqrt();
            }
        }
        total += (inner + tail) * (inner + tail);
    }
    total
}

/// How the combination sum is enumerated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enumeration {
    /// One representative per global-rotation class (the rotation with
    /// `k_01 = 1`), weighted by `M`. Requires a rotation-invariant filter;
    /// [`branch_cut_filter`] is one.
    RotationReduced,
    /// All `M^(2N)` combinations.
    Full,
}

/// Extra keep-predicate for the combination sum.
pub type CombinationFilter = Arc<dyn Fn(&SliceCombination) -> bool + Send + Sync>;

/// Options for [`total_keyrate_with`].
#[derive(Clone)]
pub struct TotalKeyRateOptions {
    pub enumeration: Enumeration,
    /// Extra keep-predicate AND-ed with the branch-cut filter.
    pub extra_filter: Option<CombinationFilter>,
    /// Chunk size for the deterministic parallel reduction.
    pub chunk_size: usize,
    pub engine: EngineSettings,
}

impl Default for TotalKeyRateOptions {
    fn default() -> Self {
        Self {
            enumeration: Enumeration::RotationReduced,
            extra_filter: None,
            chunk_size: 64,
            engine: EngineSettings::default(),
        }
    }
}

/// One loss point of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyRateReport {
    pub loss_db: f64,
    pub rate_passive: f64,
    pub rate_active_limit: f64,
    /// Canonical-pattern single-click probabilities per detector.
    pub pr_omega_canonical: Vec<f64>,
    pub combinations_evaluated: u64,
    pub combinations_cut: u64,
    pub combinations_enumerated: u64,
}

/// Rate of a single slice combination (convenience wrapper that builds a
/// fresh [`Engine`]).
pub fn keyrate_for_combination(
    combo: &SliceCombination,
    cfg: &ChannelConfig,
    n_bar: usize,
) -> Result<f64> {
    Engine::new(cfg, n_bar)?.rate_for_combination(combo)
}

/// Total passive key rate with default options.
pub fn total_keyrate(
    cfg: &ChannelConfig,
    params: &BranchCutParams,
    n_bar: usize,
) -> Result<KeyRateReport> {
    total_keyrate_with(cfg, params, n_bar, &TotalKeyRateOptions::default())
}

fn decode_combination(mut flat: u64, digits: usize, slices: usize, fixed_first: bool) -> Vec<usize> {
    let mut k = vec![1usize; digits];
    let start = usize::from(fixed_first);
    for idx in (start..digits).rev() {
        k[idx] = (flat % slices as u64) as usize + 1;
        flat /= slices as u64;
    }
    k
}

/// Total passive key rate: the average over all `M^(2N)` combinations of
/// `max(0, R(combo))`, with branch-cut filtering and optional exact
/// M-fold rotation reduction.
pub fn total_keyrate_with(
    cfg: &ChannelConfig,
    params: &BranchCutParams,
    n_bar: usize,
    opts: &TotalKeyRateOptions,
) -> Result<KeyRateReport> {
    let m = cfg.source().slices();
    params.validate(m)?;
    let n_users = cfg.n_users();
    let digits = 2 * n_users;
    let engine = Engine::new_with(cfg, n_bar, opts.engine.clone())?;

    let (fixed_first, multiplicity) = match opts.enumeration {
        Enumeration::RotationReduced => (true, m as f64),
        Enumeration::Full => (false, 1.0),
    };
    let free_digits = if fixed_first { digits - 1 } else { digits };
    let total_enumerated = (m as u64).pow(free_digits as u32);

    // Order-preserving parallel filter keeps the summation order
    // deterministic and lexicographic.
    let kept: Vec<SliceCombination> = (0..total_enumerated)
        .into_par_iter()
        .filter_map(|flat| {
            let k = decode_combination(flat, digits, m, fixed_first);
            let combo = SliceCombination::from_flat(&k).expect("even digit count");
            let keep = branch_cut_filter(&combo, params, m)
                && opts.extra_filter.as_ref().is_none_or(|f| f(&combo));
            keep.then_some(combo)
        })
        .collect();
    let evaluated = kept.len() as u64;
    let cut = total_enumerated - evaluated;

    // Deterministic parallel reduction: fixed chunks, combined in order.
    let chunk = opts.chunk_size.max(1);
    let partials: Vec<Result<f64>> = kept
        .par_chunks(chunk)
        .map(|combos| {
            let mut acc = NeumaierSum::new();
            for combo in combos {
                let r = engine.rate_for_combination(combo)?;
                if r > 0.0 {
                    acc.add(r);
                }
            }
            Ok(acc.value())
        })
        .collect();
    let mut total = NeumaierSum::new();
    for p in partials {
        total.add(p?);
    }

    let weight = multiplicity / (m as f64).powi(digits as i32);
    let rate_passive = (total.value() * weight).max(0.0);

    let canonical = SliceCombination::aligned(n_users, 1);
    let profile = engine.tables.click_profile(&canonical);
    let pr_omega_canonical = engine
        .tables
        .detector_codes
        .iter()
        .map(|&code| profile[code])
        .collect();

    Ok(KeyRateReport {
        loss_db: cfg.loss_db(0),
        rate_passive,
        rate_active_limit: active_limit_keyrate(cfg, n_bar)?,
        pr_omega_canonical,
        combinations_evaluated: evaluated,
        combinations_cut: cut,
        combinations_enumerated: total_enumerated,
    })
}

/// Active-limit baseline: the same per-pattern pipeline in the limit of
/// exact phase preparation (zero-width boxes, identity local transitions)
/// with sifting factor one. Every bit pattern is a key-generation round,
/// so the rate is the pattern average of `max(0, R(pattern))`. Used only
/// as the comparison curve.
pub fn active_limit_keyrate(cfg: &ChannelConfig, n_bar: usize) -> Result<f64> {
    let n_users = cfg.n_users();
    let n_det = cfg.n_detectors();
    let u = cfg.source().u_max();
    let norm = 1.0 / (n_det as f64).sqrt();
    let p_dark = cfg.p_dark();
    let survive = 1.0 - p_dark;
    let dark_factor = survive.powi(n_det as i32 - 1);

    let amps: Vec<f64> = (0..n_users).map(|i| (cfg.eta(i) * u).sqrt()).collect();
    let sent: f64 = amps.iter().map(|a| a * a).sum();

    let n_patterns = 1usize << n_users;
    // pr[sigma][j]
    let mut pr = vec![vec![0.0; n_det]; n_patterns];
    for (sigma, row) in pr.iter_mut().enumerate() {
        for (j, slot) in row.iter_mut().enumerate() {
            let mut beta = 0.0;
            for (i, &a) in amps.iter().enumerate() {
                let mut s = crate::network::interference_sign(j, i);
                if (sigma >> i) & 1 == 1 {
                    s = -s;
                }
                beta += s * a;
            }
            let beta2 = beta * beta * norm * norm;
            *slot = (dark_factor * ((beta2 - sent).exp() - survive * (-sent).exp())).max(0.0);
        }
    }

    // With identity local transitions the corrected yields are the raw
    // yields themselves.
    let raw = yield_tensor_from_channel(cfg, n_bar)?;
    let alphas = vec![u.sqrt(); n_users];
    let coeffs = CoeffTable::new(&alphas, n_bar)?;
    let vs = v_set(n_users);
    let tails: Vec<f64> = vs.iter().map(|v| delta_tail(v, n_bar, &alphas)).collect();
    let numerators: Vec<f64> = (0..n_det)
        .map(|j| phase_error_numerator(&raw, &coeffs, &vs, &tails, j))
        .collect();

    // Pairwise error rates over the exact-phase pattern ensemble.
    let mut qber = vec![vec![0.0; n_users]; n_det];
    for j in 0..n_det {
        let den: f64 = pr.iter().map(|row| row[j]).sum();
        if den <= 0.0 {
            continue;
        }
        for i in 1..n_users {
            let mut num = 0.0;
            for (sigma, row) in pr.iter().enumerate() {
                let rbit = ((sigma >> i) & 1) ^ (sigma & 1) == 1;
                if rbit != bit_parity(j, i) {
                    num += row[j];
                }
            }
            qber[j][i] = (num / den).clamp(0.0, 1.0);
        }
    }

    // Class-averaged click probabilities normalize the phase error.
    let pbar: Vec<f64> = (0..n_det)
        .map(|j| pr.iter().map(|row| row[j]).sum::<f64>() / n_patterns as f64)
        .collect();

    let mut total = 0.0;
    for row in &pr {
        let mut pattern_rate = 0.0;
        for j in 0..n_det {
            let w = row[j];
            if w <= 0.0 || pbar[j] <= 0.0 {
                continue;
            }
            let qz = (numerators[j] / pbar[j]).clamp(0.0, 1.0);
            let mut worst = 0.0f64;
            for i in 1..n_users {
                worst = worst.max(entropy_unchecked(qber[j][i]));
            }
            pattern_rate += w * (1.0 - privacy_entropy(qz) - worst);
        }
        total += pattern_rate.max(0.0);
    }
    Ok(total / n_patterns as f64)
}

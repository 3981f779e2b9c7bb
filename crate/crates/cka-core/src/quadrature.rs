//! Deterministic adaptive multidimensional integration over bounded boxes.
//!
//! This is the single integration authority for the crate: phase-box
//! averages, transition matrices and the full-dimension oracle integrals
//! all go through [`integrate`]. Cells use a fixed-order product
//! Gauss-Legendre rule in low dimension and the embedded degree-7/5
//! Genz-Malik rule in dimension five and above; the cell with the largest
//! error estimate is bisected until the requested relative tolerance is
//! met. Everything is deterministic: identical inputs produce bit-identical
//! outputs.

use crate::error::{Error, Result};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Axis-aligned integration domain, one `(lo, hi)` interval per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperBox {
    bounds: Vec<(f64, f64)>,
}

impl HyperBox {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::InvalidParameter("box must have dimension >= 1".into()));
        }
        for &(lo, hi) in &bounds {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "box interval [{lo}, {hi}] is not a finite nonempty interval"
                )));
            }
        }
        Ok(Self { bounds })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn volume(&self) -> f64 {
        self.bounds.iter().map(|&(lo, hi)| hi - lo).product()
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub value: f64,
    pub error_estimate: f64,
    pub evaluations: u64,
}

/// Tuning knobs for [`integrate_with`].
#[derive(Debug, Clone, Copy)]
pub struct IntegrateOptions {
    pub rel_tol: f64,
    /// Absolute floor on the error target, for integrals that are zero or
    /// nearly so.
    pub abs_tol: f64,
    pub max_evaluations: u64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            abs_tol: 1e-15,
            max_evaluations: 100_000_000,
        }
    }
}

/// Integrates `f` over `domain` to the requested relative tolerance.
pub fn integrate<F: Fn(&[f64]) -> f64>(
    f: F,
    domain: &HyperBox,
    rel_tol: f64,
) -> Result<Quadrature> {
    integrate_with(
        f,
        domain,
        IntegrateOptions {
            rel_tol,
            ..IntegrateOptions::default()
        },
    )
}

struct Cell {
    center: Vec<f64>,
    halfwidth: Vec<f64>,
    value: f64,
    error: f64,
    split_axis: usize,
    seq: u64,
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error && self.seq == other.seq
    }
}
impl Eq for Cell {}
impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Cell {
    fn cmp(&self, other: &Self) -> Ordering {
        // Largest error first; older cell wins ties so the heap order is
        // independent of allocation details.
        match self.error.total_cmp(&other.error) {
            Ordering::Equal => other.seq.cmp(&self.seq),
            ord => ord,
        }
    }
}

/// Integrates `f` over `domain` with explicit options.
pub fn integrate_with<F: Fn(&[f64]) -> f64>(
    f: F,
    domain: &HyperBox,
    opts: IntegrateOptions,
) -> Result<Quadrature> {
    if opts.rel_tol <= 0.0 {
        return Err(Error::InvalidParameter("rel_tol must be positive".into()));
    }
    let dim = domain.dim();
    let rule = Rule::for_dim(dim);
    let mut evals: u64 = 0;
    let mut seq: u64 = 0;

    let center: Vec<f64> = domain.bounds().iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
    let halfwidth: Vec<f64> = domain.bounds().iter().map(|&(lo, hi)| 0.5 * (hi - lo)).collect();
    let first = rule.apply(&f, &center, &halfwidth, &mut evals)?;
    let mut heap = BinaryHeap::new();
    let mut total_value = first.0;
    let mut total_error = first.1;
    heap.push(Cell {
        center,
        halfwidth,
        value: first.0,
        error: first.1,
        split_axis: first.2,
        seq,
    });

    loop {
        let target = f64::max(opts.rel_tol * total_value.abs(), opts.abs_tol);
        if total_error <= target {
            return Ok(Quadrature {
                value: total_value,
                error_estimate: total_error,
                evaluations: evals,
            });
        }
        if evals >= opts.max_evaluations {
            return Err(Error::ToleranceNotReached {
                value: total_value,
                error: total_error,
                requested: opts.rel_tol,
            });
        }
        let worst = heap.pop().expect("heap cannot be empty while error > 0");
        total_value -= worst.value;
        total_error -= worst.error;

        let axis = worst.split_axis;
        let mut lo_half = worst.halfwidth.clone();
        lo_half[axis] *= 0.5;
        let mut lo_center = worst.center.clone();
        lo_center[axis] -= lo_half[axis];
        let mut hi_center = worst.center;
        hi_center[axis] += lo_half[axis];

        for child_center in [lo_center, hi_center] {
            let (value, error, split_axis) = rule.apply(&f, &child_center, &lo_half, &mut evals)?;
            total_value += value;
            total_error += error;
            seq += 1;
            heap.push(Cell {
                center: child_center,
                halfwidth: lo_half.clone(),
                value,
                error,
                split_axis,
                seq,
            });
        }
    }
}

/// Dimension at which the per-cell rule switches from a product
/// Gauss-Legendre grid to the Genz-Malik embedded rule (whose cost grows
/// as 2^d instead of 7^d).
const GENZ_MALIK_MIN_DIM: usize = 5;

enum Rule {
    Product(ProductRule),
    GenzMalik(GenzMalik),
}

impl Rule {
    fn for_dim(dim: usize) -> Self {
        if dim >= GENZ_MALIK_MIN_DIM {
            Rule::GenzMalik(GenzMalik::new(dim))
        } else {
            Rule::Product(ProductRule::new(dim))
        }
    }

    /// Returns (value, error estimate, preferred split axis).
    fn apply<F: Fn(&[f64]) -> f64>(
        &self,
        f: &F,
        center: &[f64],
        halfwidth: &[f64],
        evals: &mut u64,
    ) -> Result<(f64, f64, usize)> {
        let out = match self {
            Rule::Product(r) => r.apply(f, center, halfwidth, evals),
            Rule::GenzMalik(r) => r.apply(f, center, halfwidth, evals),
        };
        let (v, e, _) = out;
        if !v.is_finite() || !e.is_finite() {
            return Err(Error::NonFinite("integrand produced a non-finite value".into()));
        }
        Ok(out)
    }
}

/// Gauss-Legendre nodes/weights on [-1, 1], computed by Newton iteration
/// on the Legendre recurrence.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-style initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_pair(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_pair(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// P_n(x) and its derivative from the three-term recurrence.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Tensor-product Gauss-Legendre rule: a 7-point grid gives the estimate,
/// an embedded 5-point grid the error reference.
struct ProductRule {
    dim: usize,
    hi_nodes: Vec<f64>,
    hi_weights: Vec<f64>,
    lo_nodes: Vec<f64>,
    lo_weights: Vec<f64>,
}

impl ProductRule {
    fn new(dim: usize) -> Self {
        let (hi_nodes, hi_weights) = gauss_legendre(7);
        let (lo_nodes, lo_weights) = gauss_legendre(5);
        Self {
            dim,
            hi_nodes,
            hi_weights,
            lo_nodes,
            lo_weights,
        }
    }

    fn tensor<F: Fn(&[f64]) -> f64>(
        &self,
        f: &F,
        center: &[f64],
        halfwidth: &[f64],
        nodes: &[f64],
        weights: &[f64],
        evals: &mut u64,
    ) -> f64 {
        let n = nodes.len();
        let total = n.pow(self.dim as u32);
        let mut point = vec![0.0; self.dim];
        let mut acc = NeumaierSum::new();
        for flat in 0..total {
            let mut rem = flat;
            let mut w = 1.0;
            for d in 0..self.dim {
                let idx = rem % n;
                rem /= n;
                point[d] = center[d] + halfwidth[d] * nodes[idx];
                w *= weights[idx] * halfwidth[d];
            }
            acc.add(w * f(&point));
            *evals += 1;
        }
        acc.value()
    }

    fn apply<F: Fn(&[f64]) -> f64>(
        &self,
        f: &F,
        center: &[f64],
        halfwidth: &[f64],
        evals: &mut u64,
    ) -> (f64, f64, usize) {
        let hi = self.tensor(f, center, halfwidth, &self.hi_nodes, &self.hi_weights, evals);
        let lo = self.tensor(f, center, halfwidth, &self.lo_nodes, &self.lo_weights, evals);
        let err = (hi - lo).abs();

        // Split along the axis with the largest central second difference,
        // scaled by the cell width.
        let fc = f(center);
        *evals += 1;
        let mut best_axis = 0;
        let mut best_diff = -1.0;
        let mut probe = center.to_vec();
        for d in 0..self.dim {
            let h = 0.6 * halfwidth[d];
            probe[d] = center[d] + h;
            let fp = f(&probe);
            probe[d] = center[d] - h;
            let fm = f(&probe);
            probe[d] = center[d];
            *evals += 2;
            let diff = (fp - 2.0 * fc + fm).abs();
            if diff > best_diff {
                best_diff = diff;
                best_axis = d;
            }
        }
        (hi, err, best_axis)
    }
}

/// Genz-Malik embedded degree-7/5 rule on a d-cube.
struct GenzMalik {
    dim: usize,
    w: [f64; 5],
    we: [f64; 4],
}

const GM_LAMBDA2: f64 = 0.358_568_582_800_318_9; // sqrt(9/70)
const GM_LAMBDA4: f64 = 0.948_683_298_050_513_8; // sqrt(9/10)
const GM_LAMBDA5: f64 = 0.688_247_201_611_685_3; // sqrt(9/19)

impl GenzMalik {
    fn new(dim: usize) -> Self {
        let d = dim as f64;
        let w = [
            (12824.0 - 9120.0 * d + 400.0 * d * d) / 19683.0,
            980.0 / 6561.0,
            (1820.0 - 400.0 * d) / 19683.0,
            200.0 / 19683.0,
            6859.0 / 19683.0 / (1u64 << dim) as f64,
        ];
        let we = [
            (729.0 - 950.0 * d + 50.0 * d * d) / 729.0,
            245.0 / 486.0,
            (265.0 - 100.0 * d) / 1458.0,
            25.0 / 729.0,
        ];
        Self { dim, w, we }
    }

    fn apply<F: Fn(&[f64]) -> f64>(
        &self,
        f: &F,
        center: &[f64],
        halfwidth: &[f64],
        evals: &mut u64,
    ) -> (f64, f64, usize) {
        let dim = self.dim;
        let volume: f64 = halfwidth.iter().map(|h| 2.0 * h).product();
        let mut point = center.to_vec();

        let f_center = f(center);
        *evals += 1;

        // Single-axis points at lambda2 and lambda4, tracking the
        // fourth-difference used to pick the split axis.
        let mut sum2 = NeumaierSum::new();
        let mut sum3 = NeumaierSum::new();
        let mut best_axis = 0;
        let mut best_diff = -1.0;
        let ratio = (GM_LAMBDA2 * GM_LAMBDA2) / (GM_LAMBDA4 * GM_LAMBDA4);
        for d in 0..dim {
            let h2 = GM_LAMBDA2 * halfwidth[d];
            let h4 = GM_LAMBDA4 * halfwidth[d];
            point[d] = center[d] + h2;
            let a = f(&point);
            point[d] = center[d] - h2;
            let b = f(&point);
            point[d] = center[d] + h4;
            let c = f(&point);
            point[d] = center[d] - h4;
            let e = f(&point);
            point[d] = center[d];
            *evals += 4;
            sum2.add(a + b);
            sum3.add(c + e);
            let diff = (a + b - 2.0 * f_center - ratio * (c + e - 2.0 * f_center)).abs();
            if diff > best_diff {
                best_diff = diff;
                best_axis = d;
            }
        }

        // Paired points (±lambda4, ±lambda4) on every axis pair.
        let mut sum4 = NeumaierSum::new();
        for i in 0..dim {
            for j in (i + 1)..dim {
                let hi4 = GM_LAMBDA4 * halfwidth[i];
                let hj4 = GM_LAMBDA4 * halfwidth[j];
                for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    point[i] = center[i] + si * hi4;
                    point[j] = center[j] + sj * hj4;
                    sum4.add(f(&point));
                    *evals += 1;
                }
                point[i] = center[i];
                point[j] = center[j];
            }
        }

        // Corner points at ±lambda5 on every axis.
        let mut sum5 = NeumaierSum::new();
        for signs in 0..(1u64 << dim) {
            for d in 0..dim {
                let s = if signs >> d & 1 == 1 { -1.0 } else { 1.0 };
                point[d] = center[d] + s * GM_LAMBDA5 * halfwidth[d];
            }
            sum5.add(f(&point));
            *evals += 1;
        }

        let value = volume
            * (self.w[0] * f_center
                + self.w[1] * sum2.value()
                + self.w[2] * sum3.value()
                + self.w[3] * sum4.value()
                + self.w[4] * sum5.value());
        let value5 = volume
            * (self.we[0] * f_center
                + self.we[1] * sum2.value()
                + self.we[2] * sum3.value()
                + self.we[3] * sum4.value());
        let err = (value - value5).abs();
        (value, err, best_axis)
    }
}

/// Compensated (Neumaier) summation.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

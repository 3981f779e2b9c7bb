//! Loss sweeps and CSV emission.

use crate::config::RunConfig;
use anyhow::Context;
use cka_core::channel::pr_omega_given_kg_with_tol;
use cka_core::keyrate::{
    total_keyrate_with, BranchCutParams, EngineSettings, KeyRateReport, SliceCombination,
    TotalKeyRateOptions,
};
use cka_core::phase_error::{photon_vectors, yield_tensor_from_channel, YieldTensor};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub struct SweepOutcome {
    pub rows: usize,
    pub numerical_failures: usize,
}

/// Evaluates one loss point: the combination sum, the active-limit
/// baseline, and canonical-pattern click probabilities by quadrature.
pub fn evaluate_point(cfg: &RunConfig, loss_db: f64) -> anyhow::Result<KeyRateReport> {
    let channel = cfg.channel_config(loss_db)?;
    let params = BranchCutParams {
        x: cfg.cut_x,
        y: cfg.cut_y,
    };
    let yields = cached_yields(cfg, loss_db, &channel)?;
    let opts = TotalKeyRateOptions {
        engine: EngineSettings {
            transition_rel_tol: cfg.tolerances.transition,
            raw_yields: Some(yields),
        },
        ..Default::default()
    };
    let mut report = total_keyrate_with(&channel, &params, cfg.n_bar, &opts)
        .map_err(|e| anyhow::anyhow!("{e}"))?;

    // Report the canonical-pattern click probabilities through the
    // quadrature route.
    let canonical = SliceCombination::aligned(cfg.users, 1);
    let click_tol = cfg.tolerances.click.unwrap_or(cka_core::channel::CLICK_REL_TOL);
    let mut pr = Vec::with_capacity(channel.n_detectors());
    for j in 0..channel.n_detectors() {
        pr.push(
            pr_omega_given_kg_with_tol(j, &canonical, &channel, click_tol)
                .map_err(|e| anyhow::anyhow!("{e}"))?,
        );
    }
    report.pr_omega_canonical = pr;
    Ok(report)
}

/// Runs the sweep and writes one CSV row per loss point, in ascending
/// loss order. Numerical failures mark the row and the run continues.
pub fn run_sweep(cfg: &RunConfig, output: &Path) -> anyhow::Result<SweepOutcome> {
    let points = cfg.loss_points();
    let n_det = 1usize << cfg.layers;
    let mut file = std::fs::File::create(output)
        .with_context(|| format!("cannot create {}", output.display()))?;

    let mut header = String::from("loss_db,rate_passive,rate_active_limit,combos_evaluated,combos_cut");
    for j in 0..n_det {
        header.push_str(&format!(",pr_omega_{j}"));
    }
    header.push_str(",wall_time_s,status");
    writeln!(file, "{header}")?;

    let mut failures = 0usize;
    for &loss in &points {
        let start = Instant::now();
        match evaluate_point(cfg, loss) {
            Ok(report) => {
                let wall = start.elapsed().as_secs_f64();
                let mut row = format!(
                    "{},{},{},{},{}",
                    fmt(loss),
                    fmt(report.rate_passive),
                    fmt(report.rate_active_limit),
                    report.combinations_evaluated,
                    report.combinations_cut
                );
                for pr in &report.pr_omega_canonical {
                    row.push_str(&format!(",{}", fmt(*pr)));
                }
                row.push_str(&format!(",{},ok", fmt(wall)));
                writeln!(file, "{row}")?;
            }
            Err(err) => {
                failures += 1;
                let wall = start.elapsed().as_secs_f64();
                let mut row = format!("{},,,,", fmt(loss));
                for _ in 0..n_det {
                    row.push(',');
                }
                row.push_str(&format!("{},error: {}", fmt(wall), err));
                writeln!(file, "{row}")?;
            }
        }
    }
    file.flush()?;
    Ok(SweepOutcome {
        rows: points.len(),
        numerical_failures: failures,
    })
}

/// Full-precision decimal so regression diffs are meaningful.
fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Yield tensors depend only on the network, losses, dark counts and the
/// cutoff, so sweeps cache them on disk keyed by a content hash.
fn cached_yields(
    cfg: &RunConfig,
    loss_db: f64,
    channel: &cka_core::channel::ChannelConfig,
) -> anyhow::Result<YieldTensor> {
    let key = yield_cache_key(cfg, loss_db);
    let dir = cache_dir(cfg);
    let path = dir.join(format!("yields-{key:016x}.txt"));
    if let Ok(text) = std::fs::read_to_string(&path) {
        if let Some(tensor) = parse_yields(&text, cfg) {
            return Ok(tensor);
        }
    }
    let tensor =
        yield_tensor_from_channel(channel, cfg.n_bar).map_err(|e| anyhow::anyhow!("{e}"))?;
    if std::fs::create_dir_all(&dir).is_ok() {
        let _ = std::fs::write(&path, render_yields(&tensor));
    }
    Ok(tensor)
}

fn cache_dir(cfg: &RunConfig) -> PathBuf {
    match &cfg.output_path {
        Some(p) => Path::new(p)
            .parent()
            .unwrap_or(Path::new("."))
            .join(".cka_cache"),
        None => PathBuf::from(".cka_cache"),
    }
}

fn yield_cache_key(cfg: &RunConfig, loss_db: f64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    let mut eat = |v: u64| {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
    };
    eat(cfg.layers as u64);
    eat(cfg.users as u64);
    eat(cfg.n_bar as u64);
    eat(loss_db.to_bits());
    eat(cfg.p_dark.to_bits());
    h
}

/// Yields serialize as photon vector plus per-detector hex bit patterns,
/// so the round trip is exact.
fn render_yields(tensor: &YieldTensor) -> String {
    let mut out = String::new();
    for n_vec in tensor.indices() {
        let ns: Vec<String> = n_vec.iter().map(|n| n.to_string()).collect();
        out.push_str(&ns.join(" "));
        for j in 0..tensor.n_detectors() {
            out.push_str(&format!(" {:016x}", tensor.get(j, n_vec).to_bits()));
        }
        out.push('\n');
    }
    out
}

fn parse_yields(text: &str, cfg: &RunConfig) -> Option<YieldTensor> {
    let n_det = 1usize << cfg.layers;
    let mut tensor = YieldTensor::new(cfg.users, cfg.n_bar, n_det);
    let expected = photon_vectors(cfg.users, cfg.n_bar).len();
    let mut rows = 0usize;
    for line in text.lines() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != cfg.users + n_det {
            return None;
        }
        let mut n_vec = Vec::with_capacity(cfg.users);
        for f in &fields[..cfg.users] {
            n_vec.push(f.parse::<usize>().ok()?);
        }
        if n_vec.iter().sum::<usize>() > cfg.n_bar {
            return None;
        }
        for (j, f) in fields[cfg.users..].iter().enumerate() {
            let bits = u64::from_str_radix(f, 16).ok()?;
            tensor.set(j, &n_vec, f64::from_bits(bits));
        }
        rows += 1;
    }
    (rows == expected).then_some(tensor)
}

//! Plot-script emission for sweep CSVs.

use anyhow::{bail, Context};
use std::path::{Path, PathBuf};

/// Writes a standalone Python script next to the CSV that plots the
/// passive and active-limit curves on a log rate axis. Zero-rate rows are
/// skipped by the script, as they cannot appear on a log scale.
pub fn emit_plot(csv: &Path) -> anyhow::Result<PathBuf> {
    let text = std::fs::read_to_string(csv)
        .with_context(|| format!("cannot read {}", csv.display()))?;
    let mut lines = text.lines();
    let header = lines.next().context("CSV is empty")?;
    let columns: Vec<&str> = header.split(',').collect();
    let idx = |name: &str| -> anyhow::Result<usize> {
        columns
            .iter()
            .position(|c| *c == name)
            .with_context(|| format!("CSV lacks a `{name}` column"))
    };
    let loss_idx = idx("loss_db")?;
    let passive_idx = idx("rate_passive")?;
    let active_idx = idx("rate_active_limit")?;

    let mut data_rows = 0usize;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < columns.len() {
            bail!("malformed CSV row: {line}");
        }
        // Rows marked failed have empty rate fields; those are fine.
        for &i in &[loss_idx, passive_idx, active_idx] {
            let f = fields[i];
            if !f.is_empty() && f.parse::<f64>().is_err() {
                bail!("malformed CSV value `{f}` in row: {line}");
            }
        }
        data_rows += 1;
    }
    if data_rows == 0 {
        bail!("CSV has no data rows");
    }

    let csv_name = csv
        .file_name()
        .context("CSV path has no file name")?
        .to_string_lossy()
        .into_owned();
    let stem = csv
        .file_stem()
        .context("CSV path has no stem")?
        .to_string_lossy()
        .into_owned();
    let script_path = csv.with_file_name(format!("{stem}_plot.py"));

    let script = format!(
        r#"#!/usr/bin/env python3
"""Key rate against per-user channel loss, from {csv_name}."""
import csv

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

loss_p, passive, loss_a, active = [], [], [], []
with open("{csv_name}", newline="") as f:
    for row in csv.DictReader(f):
        if row.get("status", "ok") != "ok":
            continue
        loss = float(row["loss_db"])
        rp = float(row["rate_passive"])
        ra = float(row["rate_active_limit"])
        if rp > 0.0:  # zero rates cannot sit on a log axis
            loss_p.append(loss)
            passive.append(rp)
        if ra > 0.0:
            loss_a.append(loss)
            active.append(ra)

fig, ax = plt.subplots(figsize=(6.4, 4.8))
ax.semilogy(loss_a, active, "s-", label="active limit")
ax.semilogy(loss_p, passive, "o-", label="passive")
ax.set_xlabel("channel loss per user (dB)")
ax.set_ylabel("key rate (bits per round)")
ax.grid(True, which="both", alpha=0.3)
ax.legend()
fig.tight_layout()
fig.savefig("{stem}.png", dpi=160)
print("wrote {stem}.png")
"#
    );
    std::fs::write(&script_path, script)
        .with_context(|| format!("cannot write {}", script_path.display()))?;
    Ok(script_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_csv(dir: &Path, name: &str, contents: &str) -> PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, contents).unwrap();
        path
    }

    fn tempdir() -> PathBuf {
        let dir = std::env::temp_dir().join(format!("cka-plot-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn emits_script_naming_both_curves() {
        let dir = tempdir();
        let csv = write_csv(
            &dir,
            "sweep.csv",
            "loss_db,rate_passive,rate_active_limit,combos_evaluated,combos_cut,pr_omega_0,wall_time_s,status\n\
             0.0,1e-3,1e-1,10,20,1e-2,0.5,ok\n\
             5.0,0.0,1e-2,10,20,1e-3,0.5,ok\n",
        );
        let script = emit_plot(&csv).unwrap();
        let text = std::fs::read_to_string(&script).unwrap();
        assert!(text.contains("passive"));
        assert!(text.contains("active limit"));
        assert!(text.contains("rp > 0.0"));
    }

    #[test]
    fn rejects_empty_and_malformed() {
        let dir = tempdir();
        let empty = write_csv(&dir, "empty.csv", "loss_db,rate_passive,rate_active_limit\n");
        assert!(emit_plot(&empty).is_err());

        let malformed = write_csv(
            &dir,
            "bad.csv",
            "loss_db,rate_passive,rate_active_limit\n0.0,abc,1.0\n",
        );
        assert!(emit_plot(&malformed).is_err());

        let no_header = write_csv(&dir, "nohdr.csv", "1.0,2.0\n");
        assert!(emit_plot(&no_header).is_err());
    }
}

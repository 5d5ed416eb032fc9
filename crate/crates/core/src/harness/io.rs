//! File formats: sweep CSVs, the run manifest, the plot script, and the
//! plain-text instance layout read by `solve`.
//!
//! Instance layout: whitespace- or comma-separated numbers; the first line
//! holds `M N`, followed by the `M` rows of `A` (`N` values each) and then
//! the `M` entries of `y`. Blank lines and lines starting with `#` are
//! ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{AggregateRow, SweepConfig, SweepRecord};
use crate::error::{Error, Result};
use crate::lmmse::ProblemInstance;

pub const TRIALS_HEADER: &str = "snr_db,algorithm,noise_model,trial,seed,nrmse,iterations,converged";
pub const AGGREGATE_HEADER: &str = "snr_db,algorithm,mean_nrmse,stderr_nrmse,n_trials";

pub fn trials_csv(records: &[SweepRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(TRIALS_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.snr_db,
            r.algorithm.name(),
            r.noise_model,
            r.trial,
            r.seed,
            r.nrmse,
            r.iterations,
            r.converged
        );
    }
    out
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::new();
    out.push_str(AGGREGATE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.snr_db,
            r.algorithm.name(),
            r.mean_nrmse,
            r.stderr_nrmse,
            r.n_trials
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: SweepConfig,
}

pub fn manifest_json(config: &SweepConfig) -> String {
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
    };
    serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n"
}

/// Accepts either a full manifest or a bare `SweepConfig` object.
pub fn parse_manifest(text: &str) -> std::result::Result<SweepConfig, serde_json::Error> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    if value.get("config").is_some() {
        Ok(serde_json::from_value::<Manifest>(value)?.config)
    } else {
        serde_json::from_value(value)
    }
}

/// Matplotlib script plotting mean NRMSE against SNR per algorithm from
/// `aggregate.csv` in the same directory.
pub fn plot_script(config: &SweepConfig) -> String {
    format!(
        r#"#!/usr/bin/env python3
# Mean NRMSE vs SNR ({noise} noise, M={m}, N={n}, rho={rho}, {trials} trials).
import csv
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
rows = list(csv.DictReader(open(os.path.join(here, "aggregate.csv"))))
labels = {{"gnp": "VAMP, {noise} noise prior", "standard": "standard VAMP"}}
fig, ax = plt.subplots(figsize=(5, 3.5))
for alg in sorted({{r["algorithm"] for r in rows}}):
    pts = [r for r in rows if r["algorithm"] == alg]
    snr = [float(r["snr_db"]) for r in pts]
    mean = [float(r["mean_nrmse"]) for r in pts]
    err = [float(r["stderr_nrmse"]) for r in pts]
    ax.errorbar(snr, mean, yerr=err, marker="o", capsize=3, label=labels.get(alg, alg))
ax.set_yscale("log")
ax.set_xlabel("SNR [dB]")
ax.set_ylabel("NRMSE")
ax.grid(True, which="both", alpha=0.3)
ax.legend()
fig.tight_layout()
out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(here, "nrmse_vs_snr.png")
fig.savefig(out, dpi=150)
print(out)
"#,
        noise = config.noise_model.name(),
        m = config.m,
        n = config.n,
        rho = config.rho,
        trials = config.trials,
    )
}

#[derive(Debug, Clone)]
pub struct OutputPaths {
    pub trials: PathBuf,
    pub aggregate: PathBuf,
    pub manifest: PathBuf,
    pub plot: Option<PathBuf>,
}

/// Writes `trials.csv`, `aggregate.csv`, `manifest.json` and optionally
/// `plot_nrmse.py` into `dir`, creating it if needed.
pub fn emit_outputs(
    records: &[SweepRecord],
    aggregates: &[AggregateRow],
    config: &SweepConfig,
    dir: &Path,
    emit_plot: bool,
) -> Result<OutputPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| -> Result<PathBuf> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    };
    Ok(OutputPaths {
        trials: write("trials.csv", trials_csv(records))?,
        aggregate: write("aggregate.csv", aggregate_csv(aggregates))?,
        manifest: write("manifest.json", manifest_json(config))?,
        plot: if emit_plot {
            Some(write("plot_nrmse.py", plot_script(config))?)
        } else {
            None
        },
    })
}

pub fn read_instance_file(path: &Path) -> Result<ProblemInstance> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_instance(&text).map_err(|message| Error::Parse {
        path: path.to_path_buf(),
        message,
    })
}

pub fn read_instance(text: &str) -> std::result::Result<ProblemInstance, String> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or("empty input")?;
    let dims: Vec<usize> = tokens(header)
        .map(|t| t.parse::<usize>().map_err(|_| format!("bad dimension '{t}'")))
        .collect::<std::result::Result<_, _>>()?;
    let [m, n] = dims[..] else {
        return Err(format!("first line must be 'M N', got '{header}'"));
    };
    let values: Vec<f64> = lines
        .flat_map(tokens)
        .map(|t| t.parse::<f64>().map_err(|_| format!("bad number '{t}'")))
        .collect::<std::result::Result<_, _>>()?;
    if values.len() != m * n + m {
        return Err(format!(
            "expected {} numbers after the header (A is {m}x{n}, y has {m}), found {}",
            m * n + m,
            values.len()
        ));
    }
    let a = DMatrix::from_row_slice(m, n, &values[..m * n]);
    let y = DVector::from_column_slice(&values[m * n..]);
    ProblemInstance::new(a, y).map_err(|e| e.to_string())
}

fn tokens(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::Algorithm;

    fn record() -> SweepRecord {
        SweepRecord {
            snr_db: 10.0,
            algorithm: Algorithm::Gnp,
            noise_model: "binary",
            trial: 0,
            seed: 123,
            nrmse: 0.25,
            iterations: 12,
            converged: true,
            resamples: 0,
            failed: false,
        }
    }

    #[test]
    fn one_record_csv() {
        let csv = trials_csv(&[record()]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], TRIALS_HEADER);
        assert_eq!(lines[1], "10,gnp,binary,0,123,0.25,12,true");
    }

    #[test]
    fn aggregate_layout() {
        let rows = [AggregateRow {
            snr_db: 0.0,
            algorithm: Algorithm::Standard,
            mean_nrmse: 0.3,
            stderr_nrmse: 0.1,
            n_trials: 2,
        }];
        assert_eq!(aggregate_csv(&rows), format!("{AGGREGATE_HEADER}\n0,standard,0.3,0.1,2\n"));
    }

    #[test]
    fn manifest_roundtrip() {
        let cfg = SweepConfig {
            snr_grid_db: vec![0.0, 7.5],
            base_seed: u64::MAX,
            ..SweepConfig::default()
        };
        let text = manifest_json(&cfg);
        assert_eq!(parse_manifest(&text).unwrap(), cfg);
        let bare = serde_json::to_string(&cfg).unwrap();
        assert_eq!(parse_manifest(&bare).unwrap(), cfg);
    }

    #[test]
    fn partial_config_uses_defaults() {
        let cfg = parse_manifest(r#"{"m": 10, "n": 20, "noise_model": {"kind": "binary", "s": 1.0}}"#).unwrap();
        assert_eq!(cfg.m, 10);
        assert_eq!(cfg.trials, 100);
        assert_eq!(cfg.engine.max_iters, 100);
    }

    #[test]
    fn instance_parsing() {
        let text = "# demo\n2 3\n1 0 0\n0, 1, 0\n\n2\n-1\n";
        let inst = read_instance(text).unwrap();
        assert_eq!(inst.a, DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
        assert_eq!(inst.y.as_slice(), &[2.0, -1.0]);
        // y on one line works too
        assert!(read_instance("2 3\n1 0 0\n0 1 0\n2 -1\n").is_ok());
    }

    #[test]
    fn instance_parse_errors() {
        assert!(read_instance("").is_err());
        assert!(read_instance("2\n1 2\n").is_err());
        assert!(read_instance("2 3\n1 0 0\n0 1 0\n2\n").unwrap_err().contains("expected 8"));
        assert!(read_instance("2 3\n1 0 x\n0 1 0\n2 1\n").unwrap_err().contains("bad number"));
        assert!(read_instance("3 2\n1 0\n0 1\n1 1\n1 2 3\n").is_err());
    }

    #[test]
    fn emit_writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SweepConfig::default();
        let paths = emit_outputs(&[record()], &[], &cfg, &dir.path().join("nested"), true).unwrap();
        assert!(paths.trials.exists() && paths.aggregate.exists() && paths.manifest.exists());
        assert!(fs::read_to_string(paths.plot.unwrap()).unwrap().contains("aggregate.csv"));
    }

    #[test]
    fn missing_instance_file_reports_path() {
        let err = read_instance_file(Path::new("/nonexistent/instance.txt")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/instance.txt"));
    }
}

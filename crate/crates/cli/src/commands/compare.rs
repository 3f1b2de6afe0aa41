use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use dafd::net::Arch;

use super::train::run_train;
use crate::artifacts;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub arch: String,
    pub target_fraction: f64,
    pub seed: u64,
    pub source_acc: f64,
    pub target_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareCell {
    pub arch: String,
    pub target_fraction: f64,
    pub runs: usize,
    pub mean_source_acc: f64,
    pub mean_target_acc: f64,
    pub std_target_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareResults {
    pub version: String,
    pub command: String,
    pub rows: Vec<CompareRow>,
    pub cells: Vec<CompareCell>,
    pub threads: usize,
    pub wall_clock_seconds: f64,
}

fn run_dir(arch: Arch, fraction: f64, seed: u64) -> String {
    format!("{arch}-f{fraction}-s{seed}")
}

fn cells(archs: &[Arch], fractions: &[f64], rows: &[CompareRow]) -> Vec<CompareCell> {
    let mut out = Vec::new();
    for arch in archs {
        for &f in fractions {
            let sel: Vec<&CompareRow> = rows
                .iter()
                .filter(|r| r.arch == arch.to_string() && r.target_fraction == f)
                .collect();
            let n = sel.len() as f64;
            let mean_t = sel.iter().map(|r| r.target_acc).sum::<f64>() / n;
            let var = sel.iter().map(|r| (r.target_acc - mean_t).powi(2)).sum::<f64>() / n;
            out.push(CompareCell {
                arch: arch.to_string(),
                target_fraction: f,
                runs: sel.len(),
                mean_source_acc: sel.iter().map(|r| r.source_acc).sum::<f64>() / n,
                mean_target_acc: mean_t,
                std_target_acc: var.sqrt(),
            });
        }
    }
    out
}

/// Rows are architectures, columns target fractions; cells give mean
/// target accuracy in percent with the source accuracy in brackets.
pub fn table(fractions: &[f64], cells: &[CompareCell]) -> String {
    let mut s = String::from("| arch |");
    for f in fractions {
        let _ = write!(s, " target {f} |");
    }
    s.push_str("\n|---|");
    s.push_str(&"---|".repeat(fractions.len()));
    s.push('\n');
    let mut archs: Vec<&str> = cells.iter().map(|c| c.arch.as_str()).collect();
    archs.dedup();
    for a in archs {
        let _ = write!(s, "| {a} |");
        for f in fractions {
            if let Some(c) = cells.iter().find(|c| c.arch == a && c.target_fraction == *f) {
                let _ = write!(
                    s,
                    " {:.1} ± {:.1} ({:.1}) |",
                    100.0 * c.mean_target_acc,
                    100.0 * c.std_target_acc,
                    100.0 * c.mean_source_acc
                );
            }
        }
        s.push('\n');
    }
    s
}

/// Trains every (arch, fraction, seed) combination; runs are independent
/// and may execute in parallel.
pub fn run_compare(cfg: &RunConfig, out: &Path, quiet: bool) -> Result<CompareResults, CliError> {
    let start = Instant::now();
    artifacts::ensure_dir(out)?;
    artifacts::write(out, "config.ini", cfg.to_text())?;
    let c = &cfg.compare;
    let mut jobs = Vec::new();
    for &arch in &c.archs {
        for &f in &c.fractions {
            for &seed in &c.seeds {
                jobs.push((arch, f, seed));
            }
        }
    }
    let rows = jobs
        .par_iter()
        .map(|&(arch, f, seed)| {
            let mut run = cfg.clone();
            run.model.arch = arch;
            run.train.target_fraction = f;
            run.run.seed = seed;
            run.split_seed = None;
            let r = run_train(&run, &out.join("runs").join(run_dir(arch, f, seed)), true)?;
            if !quiet {
                eprintln!(
                    "{arch} fraction {f} seed {seed}: source {:.4} target {:.4}",
                    r.source_acc, r.target_acc
                );
            }
            Ok(CompareRow {
                arch: arch.to_string(),
                target_fraction: f,
                seed,
                source_acc: r.source_acc,
                target_acc: r.target_acc,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut csv = String::from("arch,target_fraction,seed,source_acc,target_acc\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{},{}", r.arch, r.target_fraction, r.seed, r.source_acc, r.target_acc);
    }
    artifacts::write(out, "comparison.csv", csv)?;
    let cells = cells(&c.archs, &c.fractions, &rows);
    let md = table(&c.fractions, &cells);
    artifacts::write(out, "comparison.md", &md)?;
    if !quiet {
        print!("{md}");
    }
    let results = CompareResults {
        version: artifacts::version(),
        command: "compare".into(),
        rows,
        cells,
        threads: rayon::current_num_threads(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    artifacts::write_json(out, "results.json", &results)?;
    Ok(results)
}

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use dafd::theory::{reports_csv, run_sweep, slack_refinement, BoundReport, SweepConfig};

use crate::artifacts;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyResults {
    pub version: String,
    pub command: String,
    pub check: String,
    pub seed: u64,
    pub sweep: SweepConfig,
    pub rows: usize,
    pub passed: usize,
    pub failed: usize,
    pub rejected: usize,
    /// `(shrinking, pairs)` of slack between the two smallest resolutions.
    pub slack_refinement: Option<(usize, usize)>,
    pub min_control_ratio: Option<f64>,
    pub threads: usize,
    pub wall_clock_seconds: f64,
}

pub fn summarize(cfg: &SweepConfig, reports: &[BoundReport]) -> (usize, usize, usize, Option<(usize, usize)>, Option<f64>) {
    let rejected = reports.iter().filter(|r| r.is_rejected()).count();
    let passed = reports.iter().filter(|r| r.pass).count();
    let failed = reports.len() - passed - rejected;
    let mut res = cfg.resolutions.clone();
    res.sort_unstable();
    res.dedup();
    let refinement = (res.len() >= 2).then(|| slack_refinement(reports, res[0], res[1]));
    let min_ratio = reports
        .iter()
        .filter(|r| r.check == "theorem1")
        .filter_map(|r| r.details.get("control_ratio").copied())
        .reduce(f64::min);
    (passed, failed, rejected, refinement, min_ratio)
}

/// Runs the configured sweep; any failed (non-rejected) row is an error
/// after all artifacts are written.
pub fn run_verify(cfg: &RunConfig, out: &Path, quiet: bool) -> Result<VerifyResults, CliError> {
    let start = Instant::now();
    artifacts::ensure_dir(out)?;
    artifacts::write(out, "config.ini", cfg.to_text())?;
    let reports = run_sweep(&cfg.verify)?;
    artifacts::write(out, "bound_reports.csv", reports_csv(&reports))?;
    let (passed, failed, rejected, refinement, min_ratio) = summarize(&cfg.verify, &reports);
    let results = VerifyResults {
        version: artifacts::version(),
        command: "verify".into(),
        check: cfg.verify.check.name().into(),
        seed: cfg.run.seed,
        sweep: cfg.verify.clone(),
        rows: reports.len(),
        passed,
        failed,
        rejected,
        slack_refinement: refinement,
        min_control_ratio: min_ratio,
        threads: rayon::current_num_threads(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    artifacts::write_json(out, "results.json", &results)?;
    if !quiet {
        println!(
            "{}: {} rows, {passed} pass, {failed} fail, {rejected} rejected",
            results.check, results.rows
        );
        if let Some((s, p)) = refinement {
            println!("slack shrinks under refinement in {s}/{p} pairs");
        }
        if let Some(r) = min_ratio {
            println!("min control ratio {r:.3}");
        }
    }
    if failed > 0 {
        return Err(CliError::Verification(format!(
            "{failed} of {} rows failed; see {}",
            reports.len(),
            out.join("bound_reports.csv").display()
        )));
    }
    Ok(results)
}

//! Sweep grids over the bound checks.
//!
//! A [`SweepConfig`] expands into one [`BoundReport`] per configuration.
//! Configurations that violate an assumption become rejected rows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checks::{
    check_fact1, check_filter_norm_drift, check_lemma1, check_nonexpansive, dilation_fact1,
    verify_atom_implementability, BoundReport, Lemma1Config,
};
use super::field::{DisplacementField, FieldKind};
use super::grid::Lattice;
use super::scenario::{FilterSpec, SignalSpec};
use super::theorem::{oriented_stack, run_theorem1, StackSpec};
use crate::error::{invalid, Result};
use crate::tensor::Activation;

/// Minimum ratio of uncorrected to corrected feature error, frozen after
/// the calibration run.
pub const CONTROL_RATIO_THRESHOLD: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    Lemma1,
    Nonexpansive,
    Fact1,
    NormDrift,
    Theorem1,
    AtomImplementability,
}

impl Check {
    pub const ALL: [Check; 6] = [
        Check::Lemma1,
        Check::Nonexpansive,
        Check::Fact1,
        Check::NormDrift,
        Check::Theorem1,
        Check::AtomImplementability,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "lemma1" => Check::Lemma1,
            "nonexpansive" => Check::Nonexpansive,
            "fact1" => Check::Fact1,
            "norm-drift" => Check::NormDrift,
            "theorem1" => Check::Theorem1,
            "atom-implementability" => Check::AtomImplementability,
            other => {
                return Err(invalid(format!(
                    "unknown check '{other}' (expected lemma1, nonexpansive, fact1, norm-drift, \
                     theorem1 or atom-implementability)"
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Check::Lemma1 => "lemma1",
            Check::Nonexpansive => "nonexpansive",
            Check::Fact1 => "fact1",
            Check::NormDrift => "norm-drift",
            Check::Theorem1 => "theorem1",
            Check::AtomImplementability => "atom-implementability",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub check: Check,
    /// Rotation angles in degrees.
    pub degrees: Vec<f64>,
    /// Smooth odd field amplitudes.
    pub amplitudes: Vec<f64>,
    pub field_seed: u64,
    /// Dilation factors (fact1 only).
    pub dilations: Vec<f64>,
    pub resolutions: Vec<usize>,
    /// Number of signal seeds (or random pairs).
    pub seeds: usize,
    /// Stack depths (theorem1 only).
    pub depths: Vec<usize>,
    /// Atom counts (atom-implementability only).
    pub atoms: Vec<usize>,
    /// Support radius of the input signal.
    pub support: f64,
    /// Filter scale `j`; filters live on the disk of radius `2^j`.
    pub scale: f64,
    pub bias: f64,
    pub control_threshold: f64,
}

impl SweepConfig {
    /// The grid used for acceptance of each check.
    pub fn default_for(check: Check) -> Self {
        let base = Self {
            check,
            degrees: vec![2.0, 5.0, 10.0],
            amplitudes: vec![0.02, 0.05],
            field_seed: 11,
            dilations: vec![0.85, 0.9, 0.95, 1.0, 1.05, 1.1, 1.15],
            resolutions: vec![128, 256],
            seeds: 10,
            depths: vec![1, 2, 3],
            atoms: vec![1, 4, 6, 9],
            support: 0.55,
            scale: -3.0,
            bias: 0.0,
            control_threshold: CONTROL_RATIO_THRESHOLD,
        };
        match check {
            Check::Lemma1 => base,
            Check::Nonexpansive => Self {
                resolutions: vec![128],
                seeds: 50,
                ..base
            },
            Check::Fact1 => Self {
                degrees: vec![0.0, 2.0, 5.0, 10.0],
                resolutions: vec![32],
                ..base
            },
            Check::NormDrift => Self {
                resolutions: vec![128],
                seeds: 3,
                ..base
            },
            Check::Theorem1 => Self {
                degrees: vec![5.0, 10.0],
                amplitudes: vec![],
                resolutions: vec![512],
                seeds: 3,
                support: 0.45,
                bias: -0.02,
                ..base
            },
            Check::AtomImplementability => Self {
                resolutions: vec![128],
                seeds: 1,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() || self.resolutions.iter().any(|&n| n < 8) {
            return Err(invalid("resolutions must be a non-empty list of values >= 8"));
        }
        if self.seeds == 0 {
            return Err(invalid("seeds must be positive"));
        }
        if self.degrees.is_empty() && self.amplitudes.is_empty() && self.check != Check::Nonexpansive {
            return Err(invalid("sweep needs at least one rotation angle or amplitude"));
        }
        if self.check == Check::Theorem1 && self.depths.is_empty() {
            return Err(invalid("theorem1 sweep needs at least one depth"));
        }
        if self.check == Check::AtomImplementability && self.atoms.iter().any(|&k| k == 0) {
            return Err(invalid("atom counts must be positive"));
        }
        if !(self.control_threshold >= 1.0) {
            return Err(invalid("control threshold must be at least 1"));
        }
        Ok(())
    }

    fn fields(&self) -> Vec<FieldKind> {
        let rot = self.degrees.iter().map(|&d| FieldKind::rotation_degrees(d));
        let odd = self.amplitudes.iter().map(|&amplitude| FieldKind::SmoothOdd {
            seed: self.field_seed,
            amplitude,
        });
        rot.chain(odd).collect()
    }

    fn bump(&self, seed: u64) -> FilterSpec {
        FilterSpec::Bump {
            seed,
            scale: self.scale,
            l1: 1.0,
        }
    }

    /// Lemma configurations in (field, resolution, seed) order.
    pub fn lemma1_configs(&self) -> Vec<Lemma1Config> {
        let mut out = Vec::new();
        for field in self.fields() {
            for &n in &self.resolutions {
                for s in 0..self.seeds as u64 {
                    out.push(Lemma1Config {
                        n,
                        signal: SignalSpec::gaussian(s, self.support),
                        w: self.bump(1000 + s),
                        f: self.bump(2000 + s),
                        field,
                        activation: Activation::Relu,
                        bias: self.bias,
                    });
                }
            }
        }
        out
    }

    /// Stacks in (depth, angle, seed) order. The signal support shrinks
    /// with depth so the composed filters stay inside the domain.
    pub fn theorem1_specs(&self) -> Vec<StackSpec> {
        let mut out = Vec::new();
        let r = self.scale.exp2();
        for &depth in &self.depths {
            // Each layer widens the support by up to `2 r`.
            let support = self.support.min(0.99 - 2.0 * r * depth as f64);
            for &deg in &self.degrees {
                for &n in &self.resolutions {
                    for s in 0..self.seeds as u64 {
                        let h = SignalSpec::gaussian(s, support);
                        out.push(oriented_stack(n, h, self.scale, &vec![deg; depth], self.bias));
                    }
                }
            }
        }
        out
    }
}

fn rows_of(check: &str, config: &str, n: usize, r: Result<BoundReport>) -> Result<Vec<BoundReport>> {
    BoundReport::from_result(check, config, n, r).map(|r| vec![r])
}

/// Theorem row plus a control row asserting
/// `corrected <= control / threshold`.
fn theorem1_rows(spec: &StackSpec, threshold: f64) -> Result<Vec<BoundReport>> {
    let label = spec.label();
    match run_theorem1(spec) {
        Ok((rep, eval)) => {
            let ratio = rep.details["control_ratio"];
            let control = BoundReport::new(
                "theorem1-control",
                label,
                spec.n,
                eval.measured,
                eval.control / threshold,
                0.0,
            )
            .with("control_error", eval.control)
            .with("control_ratio", ratio)
            .with("threshold", threshold);
            Ok(vec![rep, control])
        }
        Err(e) => rows_of("theorem1", &label, spec.n, Err(e)),
    }
}

fn nonexpansive_rows(cfg: &SweepConfig, i: u64, n: usize) -> Result<Vec<BoundReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.field_seed.wrapping_mul(7919).wrapping_add(i));
    let mut signal = SignalSpec::gaussian(i, cfg.support);
    signal.signed = true;
    let l1 = rng.random_range(0.25..2.0);
    let w = FilterSpec::Bump {
        seed: 500 + i,
        scale: cfg.scale,
        l1,
    };
    let label = format!("pair={i} w_l1={l1:.4}");
    let run = || -> Result<(BoundReport, BoundReport)> { check_nonexpansive(&signal.sample(n)?, &w.sample(n)?) };
    match run() {
        Ok((a, b)) => {
            let a = BoundReport { config: label.clone(), ..a };
            let b = BoundReport { config: label, ..b };
            Ok(vec![a, b])
        }
        Err(e) => rows_of("nonexpansive", &label, n, Err(e)),
    }
}

fn fact1_rows(cfg: &SweepConfig, n: usize) -> Result<Vec<BoundReport>> {
    let lattice = Lattice::domain(n);
    let mut out = Vec::new();
    for &deg in &cfg.degrees {
        let kind = FieldKind::rotation_degrees(deg);
        let r = DisplacementField::new(kind).and_then(|f| check_fact1(&f, lattice));
        out.extend(rows_of("fact1", &kind.label(), n, r)?);
    }
    for &s in &cfg.dilations {
        let kind = FieldKind::Dilation { s };
        let r = DisplacementField::new(kind).and_then(|f| check_fact1(&f, lattice));
        out.extend(rows_of("fact1", &kind.label(), n, r)?);
        let (dev, bound) = dilation_fact1(s);
        out.push(BoundReport::new("fact1-closed-form", kind.label(), 0, dev, bound, 1e-15));
    }
    for &amplitude in &cfg.amplitudes {
        let kind = FieldKind::SmoothOdd {
            seed: cfg.field_seed,
            amplitude,
        };
        let r = DisplacementField::new(kind).and_then(|f| check_fact1(&f, lattice));
        out.extend(rows_of("fact1", &kind.label(), n, r)?);
    }
    Ok(out)
}

fn atom_rows(cfg: &SweepConfig, field: FieldKind, k: usize, n: usize, s: u64) -> Result<Vec<BoundReport>> {
    let label = format!("{} K={k} seed={s}", field.label());
    let run = || -> Result<BoundReport> {
        let field = DisplacementField::new(field)?;
        let mut rng = ChaCha8Rng::seed_from_u64(s.wrapping_mul(31).wrapping_add(k as u64));
        let atoms = (0..k as u64)
            .map(|a| cfg.bump(3000 + 100 * s + a).sample(n))
            .collect::<Result<Vec<_>>>()?;
        let coeffs: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        verify_atom_implementability(&atoms, &coeffs, &field)
    };
    rows_of("atom-implementability", &label, n, run())
}

/// Expands and runs a sweep. Rows come back in a fixed order whatever the
/// thread count.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<BoundReport>> {
    cfg.validate()?;
    let nested: Vec<Vec<BoundReport>> = match cfg.check {
        Check::Lemma1 => cfg
            .lemma1_configs()
            .par_iter()
            .map(|c| rows_of("lemma1", &c.label(), c.n, check_lemma1(c)))
            .collect::<Result<_>>()?,
        Check::Theorem1 => cfg
            .theorem1_specs()
            .par_iter()
            .map(|s| theorem1_rows(s, cfg.control_threshold))
            .collect::<Result<_>>()?,
        Check::Nonexpansive => {
            let jobs: Vec<(u64, usize)> = cfg
                .resolutions
                .iter()
                .flat_map(|&n| (0..cfg.seeds as u64).map(move |i| (i, n)))
                .collect();
            jobs.par_iter()
                .map(|&(i, n)| nonexpansive_rows(cfg, i, n))
                .collect::<Result<_>>()?
        }
        Check::Fact1 => cfg
            .resolutions
            .iter()
            .map(|&n| fact1_rows(cfg, n))
            .collect::<Result<_>>()?,
        Check::NormDrift => {
            let mut jobs = Vec::new();
            for field in cfg.fields() {
                for &n in &cfg.resolutions {
                    for s in 0..cfg.seeds as u64 {
                        jobs.push((field, n, s));
                    }
                }
            }
            jobs.par_iter()
                .map(|&(field, n, s)| {
                    let label = format!("{} seed={s}", field.label());
                    rows_of("norm-drift", &label, n, check_filter_norm_drift(&cfg.bump(s), field, n))
                })
                .collect::<Result<_>>()?
        }
        Check::AtomImplementability => {
            let mut jobs = Vec::new();
            for field in cfg.fields() {
                for &k in &cfg.atoms {
                    for &n in &cfg.resolutions {
                        for s in 0..cfg.seeds as u64 {
                            jobs.push((field, k, n, s));
                        }
                    }
                }
            }
            jobs.par_iter()
                .map(|&(field, k, n, s)| atom_rows(cfg, field, k, n, s))
                .collect::<Result<_>>()?
        }
    };
    Ok(nested.into_iter().flatten().collect())
}

/// Pairs lemma rows that differ only in resolution and counts how often
/// the slack at the larger `N` is below the slack at the smaller one.
/// Returns `(shrinking, pairs)`.
pub fn slack_refinement(reports: &[BoundReport], coarse: usize, fine: usize) -> (usize, usize) {
    let key = |r: &BoundReport| {
        let base = r.config.rsplit_once(" N=").map_or(r.config.as_str(), |(a, _)| a);
        (r.check.clone(), base.to_string())
    };
    let mut shrinking = 0;
    let mut pairs = 0;
    for c in reports.iter().filter(|r| r.n == coarse && !r.is_rejected()) {
        let k = key(c);
        if let Some(f) = reports
            .iter()
            .find(|r| r.n == fine && !r.is_rejected() && key(r) == k)
        {
            pairs += 1;
            if f.discretization_slack < c.discretization_slack {
                shrinking += 1;
            }
        }
    }
    (shrinking, pairs)
}

/// `bound_reports.csv` with the detail map flattened into `key=value;...`.
pub fn reports_csv(reports: &[BoundReport]) -> String {
    let mut out = String::from(
        "check,config,n,measured_error,theoretical_bound,discretization_slack,pass,rejected,details\n",
    );
    let quote = |s: &str| format!("\"{}\"", s.replace('"', "\"\""));
    for r in reports {
        let details: Vec<String> = r.details.iter().map(|(k, v)| format!("{k}={v:e}")).collect();
        out.push_str(&format!(
            "{},{},{},{:e},{:e},{:e},{},{},{}\n",
            r.check,
            quote(&r.config),
            r.n,
            r.measured_error,
            r.theoretical_bound,
            r.discretization_slack,
            r.pass,
            quote(r.rejected.as_deref().unwrap_or("")),
            quote(&details.join(";")),
        ));
    }
    out
}

//! Resolution-independent descriptions of test signals and filters.
//!
//! A spec is a continuous function; sampling it at `N` and `2N` gives the
//! pair of grids used for refinement slack.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::{GridFilter, GridSignal, Lattice};
use crate::error::{invalid, Result};

/// Stencil headroom so filters warped by `|grad tau| < 1/5` still fit.
pub const FILTER_HEADROOM: f64 = 1.3;

/// `exp(1 - 1 / (1 - r^2))` for `r < 1`, zero beyond: smooth, equal to 1 at 0.
pub fn smooth_cutoff(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r * r)).exp()
    }
}

fn gaussian2(u: [f64; 2], center: [f64; 2], angle: f64, s_long: f64, s_short: f64) -> f64 {
    let (sin, cos) = angle.sin_cos();
    let dx = u[0] - center[0];
    let dy = u[1] - center[1];
    let a = dx * cos + dy * sin;
    let b = -dx * sin + dy * cos;
    (-(a * a) / (2.0 * s_long * s_long) - (b * b) / (2.0 * s_short * s_short)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Bump {
    center: [f64; 2],
    angle: f64,
    s_long: f64,
    s_short: f64,
    amp: f64,
}

/// A sum of Gaussian bumps under a smooth radial cutoff of radius `support`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub seed: u64,
    pub bumps: usize,
    /// Radius of the cutoff; the signal vanishes outside this disk.
    pub support: f64,
    /// Bump widths are drawn from `[width_min, width_max]`.
    pub width_min: f64,
    pub width_max: f64,
    /// Allow negative bump amplitudes.
    pub signed: bool,
}

impl SignalSpec {
    pub fn gaussian(seed: u64, support: f64) -> Self {
        Self {
            seed,
            bumps: 4,
            support,
            width_min: 0.08,
            width_max: 0.18,
            signed: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bumps == 0 {
            return Err(invalid("signal needs at least one bump"));
        }
        if !(self.support > 0.0 && self.support < 1.0) {
            return Err(invalid(format!("signal support {} outside (0, 1)", self.support)));
        }
        if !(self.width_min > 0.0 && self.width_min <= self.width_max) {
            return Err(invalid("signal widths must satisfy 0 < min <= max"));
        }
        Ok(())
    }

    fn draw(&self) -> Vec<Bump> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let reach = self.support * 0.45;
        (0..self.bumps)
            .map(|_| {
                let r = reach * rng.random::<f64>().sqrt();
                let phi = rng.random_range(0.0..2.0 * PI);
                let s_long = rng.random_range(self.width_min..=self.width_max);
                let s_short = rng.random_range(self.width_min..=s_long);
                let mag = rng.random_range(0.5..1.0);
                let sign = if self.signed && rng.random::<bool>() { -1.0 } else { 1.0 };
                Bump {
                    center: [r * phi.cos(), r * phi.sin()],
                    angle: rng.random_range(0.0..PI),
                    s_long,
                    s_short,
                    amp: sign * mag,
                }
            })
            .collect()
    }

    pub fn eval(&self, u: [f64; 2]) -> f64 {
        self.eval_with(&self.draw(), u)
    }

    fn eval_with(&self, bumps: &[Bump], u: [f64; 2]) -> f64 {
        let c = smooth_cutoff(u[0].hypot(u[1]) / self.support);
        if c == 0.0 {
            return 0.0;
        }
        c * bumps
            .iter()
            .map(|b| b.amp * gaussian2(u, b.center, b.angle, b.s_long, b.s_short))
            .sum::<f64>()
    }

    pub fn sample(&self, n: usize) -> Result<GridSignal> {
        self.validate()?;
        let bumps = self.draw();
        Ok(GridSignal::sample(Lattice::domain(n), |u| self.eval_with(&bumps, u)))
    }
}

/// Filters supported on the disk of radius `2^scale`, rescaled to L1 norm `l1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FilterSpec {
    /// A random anisotropic Gaussian bump, possibly off-center.
    Bump { seed: u64, scale: f64, l1: f64 },
    /// A centered anisotropic Gaussian with long axis at `angle` and widths
    /// given as fractions of the radius.
    Oriented {
        scale: f64,
        angle: f64,
        long: f64,
        short: f64,
        l1: f64,
    },
    /// The unit-mass delta.
    Delta,
}

impl FilterSpec {
    pub fn scale(&self, n: usize) -> f64 {
        match *self {
            FilterSpec::Bump { scale, .. } | FilterSpec::Oriented { scale, .. } => scale,
            FilterSpec::Delta => (2.0 / n as f64).log2(),
        }
    }

    pub fn l1(&self) -> f64 {
        match *self {
            FilterSpec::Bump { l1, .. } | FilterSpec::Oriented { l1, .. } => l1,
            FilterSpec::Delta => 1.0,
        }
    }

    /// The same filter with its long axis turned a quarter turn.
    pub fn complement(&self) -> Self {
        match *self {
            FilterSpec::Oriented {
                scale,
                angle,
                long,
                short,
                l1,
            } => FilterSpec::Oriented {
                scale,
                angle: angle + PI / 2.0,
                long,
                short,
                l1,
            },
            other => other,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            FilterSpec::Bump { scale, l1, .. } | FilterSpec::Oriented { scale, l1, .. } => {
                if !(scale.is_finite() && scale <= 0.0) {
                    return Err(invalid(format!("filter scale {scale} must be <= 0")));
                }
                if !(l1.is_finite() && l1 > 0.0) {
                    return Err(invalid(format!("filter norm {l1} must be positive")));
                }
            }
            FilterSpec::Delta => {}
        }
        if let FilterSpec::Oriented { long, short, .. } = *self {
            if !(long > 0.0 && short > 0.0) {
                return Err(invalid("oriented filter widths must be positive"));
            }
        }
        Ok(())
    }

    pub fn sample(&self, n: usize) -> Result<GridFilter> {
        self.validate()?;
        let (center, angle, s_long, s_short, scale, l1) = match *self {
            FilterSpec::Delta => return Ok(GridFilter::delta(n)),
            FilterSpec::Bump { seed, scale, l1 } => {
                let r = scale.exp2();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let off = 0.25 * r * rng.random::<f64>().sqrt();
                let phi = rng.random_range(0.0..2.0 * PI);
                let s_long = rng.random_range(0.35..0.55) * r;
                let s_short = rng.random_range(0.2..0.35) * r;
                (
                    [off * phi.cos(), off * phi.sin()],
                    rng.random_range(0.0..PI),
                    s_long,
                    s_short,
                    scale,
                    l1,
                )
            }
            FilterSpec::Oriented {
                scale,
                angle,
                long,
                short,
                l1,
            } => {
                let r = scale.exp2();
                ([0.0, 0.0], angle, long * r, short * r, scale, l1)
            }
        };
        let r = scale.exp2();
        let mut w = GridFilter::sample(n, scale, FILTER_HEADROOM, |u| {
            smooth_cutoff(u[0].hypot(u[1]) / r) * gaussian2(u, center, angle, s_long, s_short)
        });
        if w.l1_norm() == 0.0 {
            return Err(invalid(format!(
                "filter of radius {r} has no grid support at N = {n}"
            )));
        }
        w.normalize(l1);
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signal_is_deterministic_and_compact() {
        let s = SignalSpec::gaussian(4, 0.5);
        let a = s.sample(64).unwrap();
        assert_eq!(a, s.sample(64).unwrap());
        assert!(a.support_extent() <= 0.5 + 2.0 / 64.0);
        assert!(a.l1_norm() > 0.0);
        assert_eq!(s.eval([0.0, 0.6]), 0.0);
    }

    #[test]
    fn filters_are_normalized_and_supported() {
        for spec in [
            FilterSpec::Bump {
                seed: 2,
                scale: -3.0,
                l1: 0.8,
            },
            FilterSpec::Oriented {
                scale: -3.0,
                angle: 0.3,
                long: 0.45,
                short: 0.2,
                l1: 1.0,
            },
        ] {
            let w = spec.sample(128).unwrap();
            assert!((w.l1_norm() - spec.l1()).abs() < 1e-12);
            assert!(w.signal().support_extent() <= 0.125 + 1.0 / 64.0);
        }
    }

    #[test]
    fn complementary_oriented_pair_convolves_to_nearly_isotropic() {
        let spec = FilterSpec::Oriented {
            scale: -2.0,
            angle: 0.4,
            long: 0.4,
            short: 0.2,
            l1: 1.0,
        };
        let a = spec.sample(128).unwrap();
        let b = spec.complement().sample(128).unwrap();
        let sa = a.signal();
        let sb = b.signal();
        // Second moments of the two filters sum to a multiple of identity.
        let moments = |s: &GridSignal| {
            let mut m = [0.0; 3];
            for iy in 0..s.n() {
                for ix in 0..s.n() {
                    let [x, y] = s.point(ix, iy);
                    let v = s.at(ix, iy);
                    m[0] += v * x * x;
                    m[1] += v * x * y;
                    m[2] += v * y * y;
                }
            }
            m
        };
        let (ma, mb) = (moments(sa), moments(sb));
        let sum = [ma[0] + mb[0], ma[1] + mb[1], ma[2] + mb[2]];
        assert!(sum[1].abs() < 1e-3 * sum[0]);
        assert!((sum[0] - sum[2]).abs() < 1e-3 * sum[0]);
        assert!((ma[0] - ma[2]).abs() > 0.1 * ma[0]);
    }
}

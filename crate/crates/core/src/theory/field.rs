//! Displacement fields `tau` and the spatial transform `D_tau w(u) = w(u - tau(u))`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::{GridFilter, GridSignal, Lattice};
use crate::error::{invalid, Error, Result};

/// Largest admissible `|grad tau|_inf`.
pub const MAX_GRAD: f64 = 0.2;

const INVERSE_TOL: f64 = 1e-10;
const INVERSE_MAX_ITER: usize = 200;
/// Points per axis of the fixed grid used to normalize and measure fields,
/// so a field is the same function whatever lattice it is later sampled on.
const REFERENCE_POINTS: usize = 129;
const MODES: usize = 4;
const MAX_FREQ: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FieldKind {
    Zero,
    /// `tau(u) = u - R_theta u`, angle in radians.
    Rotation { theta: f64 },
    /// `tau(u) = (1 - s) u`.
    Dilation { s: f64 },
    /// A sum of odd sine modes with max `|tau|` equal to `amplitude`.
    SmoothOdd { seed: u64, amplitude: f64 },
}

impl FieldKind {
    pub fn rotation_degrees(deg: f64) -> Self {
        FieldKind::Rotation {
            theta: deg.to_radians(),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            FieldKind::Zero => "zero".into(),
            FieldKind::Rotation { theta } => format!("rotation({:.4}deg)", theta.to_degrees()),
            FieldKind::Dilation { s } => format!("dilation({s})"),
            FieldKind::SmoothOdd { seed, amplitude } => {
                format!("smooth-odd(seed={seed},amp={amplitude})")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Mode {
    omega: [f64; 2],
    coeff: [f64; 2],
}

/// `cos` and `sin` that are exact at multiples of 90 degrees.
fn cos_sin(theta: f64) -> (f64, f64) {
    let quarter = theta / std::f64::consts::FRAC_PI_2;
    let r = quarter.round();
    if (quarter - r).abs() < 1e-12 {
        match (r as i64).rem_euclid(4) {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        (theta.cos(), theta.sin())
    }
}

/// Spectral norm of a 2x2 matrix.
fn spectral_norm(m: [[f64; 2]; 2]) -> f64 {
    let [[a, b], [c, d]] = m;
    ((a + d).hypot(c - b) + (a - d).hypot(b + c)) / 2.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    kind: FieldKind,
    modes: Vec<Mode>,
    grad_inf: f64,
    rigid: bool,
}

impl DisplacementField {
    /// Builds a field and rejects it unless `|grad tau|_inf < 1/5`.
    pub fn new(kind: FieldKind) -> Result<Self> {
        let field = Self::unchecked(kind)?;
        if field.grad_inf >= MAX_GRAD {
            return Err(Error::Assumption {
                assumption: "A2",
                detail: format!(
                    "{}: |grad tau|_inf = {:.6} is not below 1/5",
                    kind.label(),
                    field.grad_inf
                ),
            });
        }
        Ok(field)
    }

    /// Builds a field without the `|grad tau|_inf < 1/5` gate (large
    /// rotations are still exact permutations on the grid).
    pub fn unchecked(kind: FieldKind) -> Result<Self> {
        let mut modes = Vec::new();
        match kind {
            FieldKind::Zero => {}
            FieldKind::Rotation { theta } if !theta.is_finite() => {
                return Err(invalid("rotation angle must be finite"))
            }
            FieldKind::Dilation { s } if !(s.is_finite() && s > 0.0) => {
                return Err(invalid(format!("dilation factor {s} must be positive")))
            }
            FieldKind::SmoothOdd { amplitude, .. } if !(amplitude.is_finite() && amplitude >= 0.0) => {
                return Err(invalid(format!("amplitude {amplitude} must be non-negative")))
            }
            FieldKind::SmoothOdd { seed, amplitude } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for _ in 0..MODES {
                    modes.push(Mode {
                        omega: [
                            rng.random_range(-MAX_FREQ..MAX_FREQ),
                            rng.random_range(-MAX_FREQ..MAX_FREQ),
                        ],
                        coeff: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                    });
                }
                let probe = Self {
                    kind,
                    modes: modes.clone(),
                    grad_inf: 0.0,
                    rigid: false,
                };
                let peak = reference_points()
                    .map(|u| {
                        let t = probe.tau(u);
                        t[0].hypot(t[1])
                    })
                    .fold(0.0f64, f64::max);
                let scale = if peak > 0.0 { amplitude / peak } else { 0.0 };
                for m in &mut modes {
                    m.coeff = [m.coeff[0] * scale, m.coeff[1] * scale];
                }
            }
            _ => {}
        }
        let rigid = match kind {
            FieldKind::Zero | FieldKind::Rotation { .. } => true,
            FieldKind::Dilation { s } => s == 1.0,
            FieldKind::SmoothOdd { amplitude, .. } => amplitude == 0.0,
        };
        let mut field = Self {
            kind,
            modes,
            grad_inf: 0.0,
            rigid,
        };
        field.grad_inf = field.measure_grad_inf();
        Ok(field)
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    /// `|grad tau|_inf` by central differences over the reference grid.
    pub fn grad_inf(&self) -> f64 {
        self.grad_inf
    }

    /// True when `I - tau` is a rotation (or the identity).
    pub fn is_rigid(&self) -> bool {
        self.rigid
    }

    pub fn is_zero(&self) -> bool {
        match self.kind {
            FieldKind::Zero => true,
            FieldKind::Rotation { theta } => theta == 0.0,
            FieldKind::Dilation { s } => s == 1.0,
            FieldKind::SmoothOdd { amplitude, .. } => amplitude == 0.0,
        }
    }

    pub fn tau(&self, u: [f64; 2]) -> [f64; 2] {
        match self.kind {
            FieldKind::SmoothOdd { .. } => {
                let mut t = [0.0, 0.0];
                for m in &self.modes {
                    let s = (m.omega[0] * u[0] + m.omega[1] * u[1]).sin();
                    t[0] += m.coeff[0] * s;
                    t[1] += m.coeff[1] * s;
                }
                t
            }
            _ => {
                let rho = self.rho(u);
                [u[0] - rho[0], u[1] - rho[1]]
            }
        }
    }

    /// `rho(u) = u - tau(u)`.
    pub fn rho(&self, u: [f64; 2]) -> [f64; 2] {
        match self.kind {
            FieldKind::Zero => u,
            FieldKind::Rotation { theta } => {
                let (c, s) = cos_sin(theta);
                [c * u[0] - s * u[1], s * u[0] + c * u[1]]
            }
            FieldKind::Dilation { s } => [s * u[0], s * u[1]],
            FieldKind::SmoothOdd { .. } => {
                let t = self.tau(u);
                [u[0] - t[0], u[1] - t[1]]
            }
        }
    }

    /// `rho^{-1}(u)`: closed form for affine fields, otherwise the
    /// fixed point of `v = u + tau(v)`.
    pub fn rho_inverse(&self, u: [f64; 2]) -> Result<[f64; 2]> {
        match self.kind {
            FieldKind::Zero => Ok(u),
            FieldKind::Rotation { theta } => {
                let (c, s) = cos_sin(theta);
                Ok([c * u[0] + s * u[1], -s * u[0] + c * u[1]])
            }
            FieldKind::Dilation { s } => Ok([u[0] / s, u[1] / s]),
            FieldKind::SmoothOdd { .. } => {
                let mut v = u;
                let mut residual = f64::INFINITY;
                for _ in 0..INVERSE_MAX_ITER {
                    let t = self.tau(v);
                    let next = [u[0] + t[0], u[1] + t[1]];
                    residual = (next[0] - v[0]).hypot(next[1] - v[1]);
                    v = next;
                    if residual <= INVERSE_TOL {
                        return Ok(v);
                    }
                }
                Err(Error::NoConvergence {
                    iterations: INVERSE_MAX_ITER,
                    residual,
                })
            }
        }
    }

    /// Analytic Jacobian of `tau`, rows are components.
    pub fn grad_tau(&self, u: [f64; 2]) -> [[f64; 2]; 2] {
        match self.kind {
            FieldKind::Zero => [[0.0; 2]; 2],
            FieldKind::Rotation { theta } => {
                let (c, s) = cos_sin(theta);
                [[1.0 - c, s], [-s, 1.0 - c]]
            }
            FieldKind::Dilation { s } => [[1.0 - s, 0.0], [0.0, 1.0 - s]],
            FieldKind::SmoothOdd { .. } => {
                let mut g = [[0.0; 2]; 2];
                for m in &self.modes {
                    let c = (m.omega[0] * u[0] + m.omega[1] * u[1]).cos();
                    for (row, coeff) in g.iter_mut().zip(m.coeff) {
                        row[0] += coeff * m.omega[0] * c;
                        row[1] += coeff * m.omega[1] * c;
                    }
                }
                g
            }
        }
    }

    /// `|J rho|(u) = det(I - grad tau(u))`.
    pub fn jacobian_det(&self, u: [f64; 2]) -> f64 {
        let g = self.grad_tau(u);
        (1.0 - g[0][0]) * (1.0 - g[1][1]) - g[0][1] * g[1][0]
    }

    fn measure_grad_inf(&self) -> f64 {
        let eps = 1e-5;
        reference_points()
            .map(|u| {
                let tx0 = self.tau([u[0] - eps, u[1]]);
                let tx1 = self.tau([u[0] + eps, u[1]]);
                let ty0 = self.tau([u[0], u[1] - eps]);
                let ty1 = self.tau([u[0], u[1] + eps]);
                let m = [
                    [(tx1[0] - tx0[0]) / (2.0 * eps), (ty1[0] - ty0[0]) / (2.0 * eps)],
                    [(tx1[1] - tx0[1]) / (2.0 * eps), (ty1[1] - ty0[1]) / (2.0 * eps)],
                ];
                spectral_norm(m)
            })
            .fold(0.0f64, f64::max)
    }

    /// Components of `tau` sampled on `lattice`.
    pub fn sample(&self, lattice: Lattice) -> [GridSignal; 2] {
        [
            GridSignal::sample(lattice, |u| self.tau(u)[0]),
            GridSignal::sample(lattice, |u| self.tau(u)[1]),
        ]
    }

    /// Largest `|tau(u) + tau(-u)|` over the lattice.
    pub fn odd_defect(&self, lattice: Lattice) -> f64 {
        let n = lattice.n;
        let mut worst: f64 = 0.0;
        for iy in 0..n {
            for ix in 0..n {
                let u = [lattice.coord(ix), lattice.coord(iy)];
                let mu = [lattice.coord(n - 1 - ix), lattice.coord(n - 1 - iy)];
                let a = self.tau(u);
                let b = self.tau(mu);
                worst = worst.max((a[0] + b[0]).abs()).max((a[1] + b[1]).abs());
            }
        }
        worst
    }
}

fn reference_points() -> impl Iterator<Item = [f64; 2]> {
    let step = 2.0 / (REFERENCE_POINTS - 1) as f64;
    (0..REFERENCE_POINTS).flat_map(move |iy| {
        (0..REFERENCE_POINTS).map(move |ix| [-1.0 + ix as f64 * step, -1.0 + iy as f64 * step])
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarpDirection {
    /// `w(u - tau(u))`.
    Forward,
    /// `w(rho^{-1}(u))`.
    Inverse,
}

/// Resamples `w` through the field by bilinear interpolation.
pub fn warp(w: &GridSignal, field: &DisplacementField, direction: WarpDirection) -> Result<GridSignal> {
    let lattice = w.lattice();
    let n = lattice.n;
    let mut values = Vec::with_capacity(n * n);
    for iy in 0..n {
        for ix in 0..n {
            let u = w.point(ix, iy);
            let src = match direction {
                WarpDirection::Forward => field.rho(u),
                WarpDirection::Inverse => field.rho_inverse(u)?,
            };
            values.push(w.interpolate(src));
        }
    }
    GridSignal::new(lattice, values)
}

/// Radius that contains the support of a warped filter of radius `r`.
pub fn warped_radius(r: f64, field: &DisplacementField, direction: WarpDirection) -> f64 {
    if field.is_rigid() {
        return r;
    }
    let g = field.grad_inf().min(0.5);
    match direction {
        WarpDirection::Forward => r / (1.0 - g),
        WarpDirection::Inverse => r * (1.0 + g),
    }
}

/// Warps a filter and masks it to the disk that holds the transformed
/// support. Returns the filter and the L1 mass removed by the mask.
pub fn warp_filter(
    w: &GridFilter,
    field: &DisplacementField,
    direction: WarpDirection,
) -> Result<(GridFilter, f64)> {
    let warped = warp(w.signal(), field, direction)?;
    let mut out = w.with_signal(warped);
    let removed = out.mask(warped_radius(w.radius(), field, direction));
    Ok((out, removed))
}

//! Functions on `[-1, 1]^2` sampled on uniform, origin-centered lattices.
//!
//! Two lattices share one spacing `h = 2 / N`: the signal lattice (`N` cell
//! centers covering the domain) and filter stencils (`2R + 1` points at
//! integer multiples of `h`). Differences of a signal point and a stencil
//! point land back on the signal lattice, so discrete convolution needs no
//! interpolation. Integrals are cell-area weighted sums (`h^2 * sum`).

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{invalid, shape_err, Result};

/// Snap tolerance, in cells, for sample positions that sit on a node.
const SNAP: f64 = 1e-9;

/// `n` points per axis at `(2i + 1 - n) * h / 2`, symmetric about the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub n: usize,
    pub h: f64,
}

impl Lattice {
    /// Cell centers of an `n x n` grid over `[-1, 1]^2`.
    pub fn domain(n: usize) -> Self {
        Self { n, h: 2.0 / n as f64 }
    }

    /// A `(2r + 1)`-point stencil with the domain spacing of `n`.
    pub fn stencil(n: usize, r: usize) -> Self {
        Self {
            n: 2 * r + 1,
            h: 2.0 / n as f64,
        }
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        (2 * i + 1) as f64 * (self.h / 2.0) - self.n as f64 * (self.h / 2.0)
    }

    /// Fractional index of coordinate `x` (inverse of [`Self::coord`]).
    #[inline]
    fn frac_index(&self, x: f64) -> f64 {
        let f = x / self.h + (self.n as f64 - 1.0) / 2.0;
        let r = f.round();
        if (f - r).abs() < SNAP {
            r
        } else {
            f
        }
    }

    /// Stencil half-width `r` for this (stencil) lattice.
    pub fn radius(&self) -> usize {
        (self.n - 1) / 2
    }
}

/// Values on a [`Lattice`], row-major: index `iy * n + ix`, with
/// `u = (coord(ix), coord(iy))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSignal {
    lattice: Lattice,
    values: Vec<f64>,
}

impl GridSignal {
    pub fn new(lattice: Lattice, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.n * lattice.n {
            return Err(shape_err(format!(
                "{} values for a {}x{} lattice",
                values.len(),
                lattice.n,
                lattice.n
            )));
        }
        Ok(Self { lattice, values })
    }

    pub fn zeros(lattice: Lattice) -> Self {
        Self {
            lattice,
            values: vec![0.0; lattice.n * lattice.n],
        }
    }

    pub fn constant(lattice: Lattice, v: f64) -> Self {
        Self {
            lattice,
            values: vec![v; lattice.n * lattice.n],
        }
    }

    /// Samples `f(u)` at every lattice point.
    pub fn sample(lattice: Lattice, f: impl Fn([f64; 2]) -> f64) -> Self {
        let n = lattice.n;
        let mut values = Vec::with_capacity(n * n);
        for iy in 0..n {
            let y = lattice.coord(iy);
            for ix in 0..n {
                values.push(f([lattice.coord(ix), y]));
            }
        }
        Self { lattice, values }
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn n(&self) -> usize {
        self.lattice.n
    }

    pub fn h(&self) -> f64 {
        self.lattice.h
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.lattice.n + ix]
    }

    pub fn point(&self, ix: usize, iy: usize) -> [f64; 2] {
        [self.lattice.coord(ix), self.lattice.coord(iy)]
    }

    /// `h^2 * sum |x|`.
    pub fn l1_norm(&self) -> f64 {
        let h2 = self.h() * self.h();
        h2 * self.values.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// `h^2 * sum x`.
    pub fn integral(&self) -> f64 {
        let h2 = self.h() * self.h();
        h2 * self.values.iter().sum::<f64>()
    }

    /// `h^2 * sum |grad x|` with central differences and zero extension.
    pub fn tv_norm(&self) -> f64 {
        let n = self.n();
        let h = self.h();
        let get = |ix: isize, iy: isize| -> f64 {
            if ix < 0 || iy < 0 || ix >= n as isize || iy >= n as isize {
                0.0
            } else {
                self.values[iy as usize * n + ix as usize]
            }
        };
        let mut total = 0.0;
        for iy in 0..n as isize {
            for ix in 0..n as isize {
                let gx = (get(ix + 1, iy) - get(ix - 1, iy)) / (2.0 * h);
                let gy = (get(ix, iy + 1) - get(ix, iy - 1)) / (2.0 * h);
                total += gx.hypot(gy);
            }
        }
        total * h * h
    }

    /// Largest `max(|x|, |y|)` over points with non-zero value, plus half a
    /// cell; 0 for the zero signal.
    pub fn support_extent(&self) -> f64 {
        let n = self.n();
        let mut ext: f64 = 0.0;
        let mut any = false;
        for iy in 0..n {
            for ix in 0..n {
                if self.values[iy * n + ix] != 0.0 {
                    let [x, y] = self.point(ix, iy);
                    ext = ext.max(x.abs().max(y.abs()));
                    any = true;
                }
            }
        }
        if any {
            ext + self.h() / 2.0
        } else {
            0.0
        }
    }

    /// True when every value within `band` of the domain edge is zero.
    pub fn vanishes_on_margin(&self, band: f64) -> bool {
        self.support_extent() <= 1.0 - band
    }

    /// Bilinear interpolation at `u`, zero outside the lattice.
    pub fn interpolate(&self, u: [f64; 2]) -> f64 {
        let lat = self.lattice;
        let fx = lat.frac_index(u[0]);
        let fy = lat.frac_index(u[1]);
        let x0 = fx.floor();
        let y0 = fy.floor();
        let (tx, ty) = (fx - x0, fy - y0);
        let (x0, y0) = (x0 as isize, y0 as isize);
        let n = lat.n as isize;
        let get = |ix: isize, iy: isize| -> f64 {
            if ix < 0 || iy < 0 || ix >= n || iy >= n {
                0.0
            } else {
                self.values[(iy * n + ix) as usize]
            }
        };
        let mut v = 0.0;
        if tx == 0.0 && ty == 0.0 {
            return get(x0, y0);
        }
        v += (1.0 - tx) * (1.0 - ty) * get(x0, y0);
        v += tx * (1.0 - ty) * get(x0 + 1, y0);
        v += (1.0 - tx) * ty * get(x0, y0 + 1);
        v += tx * ty * get(x0 + 1, y0 + 1);
        v
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            lattice: self.lattice,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.lattice != other.lattice {
            return Err(shape_err("signals live on different lattices"));
        }
        Ok(Self {
            lattice: self.lattice,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// `||self - other||_1`.
    pub fn l1_distance(&self, other: &Self) -> Result<f64> {
        Ok(self.sub(other)?.l1_norm())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        Ok(self
            .sub(other)?
            .values
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs())))
    }
}

/// A filter stencil supported on the disk of radius `2^scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFilter {
    signal: GridSignal,
    scale: f64,
}

impl GridFilter {
    /// Stencil radius in cells that holds a disk of radius `reach`.
    pub fn stencil_for(n: usize, reach: f64) -> Lattice {
        let h = 2.0 / n as f64;
        Lattice::stencil(n, (reach / h).ceil() as usize + 1)
    }

    /// Samples `f` on a stencil large enough for radius `2^scale * headroom`
    /// and zeroes everything outside the disk of radius `2^scale`.
    pub fn sample(n: usize, scale: f64, headroom: f64, f: impl Fn([f64; 2]) -> f64) -> Self {
        let radius = scale.exp2();
        let lattice = Self::stencil_for(n, radius * headroom.max(1.0));
        let signal = GridSignal::sample(lattice, |u| {
            if u[0].hypot(u[1]) <= radius {
                f(u)
            } else {
                0.0
            }
        });
        Self { signal, scale }
    }

    /// Wraps stencil values; entries outside the disk of radius `2^scale`
    /// are zeroed.
    pub fn from_signal(signal: GridSignal, scale: f64) -> Self {
        let mut f = Self { signal, scale };
        f.mask(scale.exp2());
        f
    }

    /// A unit-mass delta at the origin (`1 / h^2` on the center cell).
    pub fn delta(n: usize) -> Self {
        let lattice = Lattice::stencil(n, 1);
        let mut signal = GridSignal::zeros(lattice);
        let h = lattice.h;
        signal.values[4] = 1.0 / (h * h);
        Self {
            signal,
            scale: h.log2(),
        }
    }

    pub fn signal(&self) -> &GridSignal {
        &self.signal
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn radius(&self) -> f64 {
        self.scale.exp2()
    }

    pub fn l1_norm(&self) -> f64 {
        self.signal.l1_norm()
    }

    /// Zeroes stencil points farther than `radius` from the origin and
    /// returns the L1 mass removed.
    pub fn mask(&mut self, radius: f64) -> f64 {
        let n = self.signal.n();
        let h2 = self.signal.h() * self.signal.h();
        let mut removed = 0.0;
        for iy in 0..n {
            for ix in 0..n {
                let [x, y] = self.signal.point(ix, iy);
                if x.hypot(y) > radius {
                    let v = &mut self.signal.values[iy * n + ix];
                    removed += v.abs() * h2;
                    *v = 0.0;
                }
            }
        }
        removed
    }

    /// Rescales to L1 norm `target` when the current norm exceeds it.
    pub fn project_norm(&mut self, target: f64) {
        let norm = self.l1_norm();
        if norm > target && norm > 0.0 {
            let s = target / norm;
            self.signal.values.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Rescales to L1 norm exactly `target` (no-op for the zero filter).
    pub fn normalize(&mut self, target: f64) {
        let norm = self.l1_norm();
        if norm > 0.0 {
            let s = target / norm;
            self.signal.values.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub(crate) fn with_signal(&self, signal: GridSignal) -> Self {
        Self {
            signal,
            scale: self.scale,
        }
    }

    /// Linear combination `sum_k a_k psi_k` of filters on one stencil.
    pub fn combine(atoms: &[GridFilter], coeffs: &[f64]) -> Result<Self> {
        let first = atoms
            .first()
            .ok_or_else(|| invalid("combination of zero atoms"))?;
        if atoms.len() != coeffs.len() {
            return Err(shape_err(format!(
                "{} atoms, {} coefficients",
                atoms.len(),
                coeffs.len()
            )));
        }
        let mut values = vec![0.0; first.signal.values.len()];
        for (atom, &a) in atoms.iter().zip(coeffs) {
            if atom.signal.lattice != first.signal.lattice {
                return Err(shape_err("atoms live on different stencils"));
            }
            for (v, &p) in values.iter_mut().zip(&atom.signal.values) {
                *v += a * p;
            }
        }
        Ok(Self {
            signal: GridSignal::new(first.signal.lattice, values)?,
            scale: first.scale,
        })
    }
}

/// Periodic 2-D FFT of a square array, row-major.
struct Fft2 {
    n: usize,
    fwd: Arc<dyn rustfft::Fft<f64>>,
    inv: Arc<dyn rustfft::Fft<f64>>,
}

impl Fft2 {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    fn transform(&self, data: &mut [Complex<f64>], inverse: bool) {
        let n = self.n;
        let plan = if inverse { &self.inv } else { &self.fwd };
        plan.process(data);
        let mut col = vec![Complex::new(0.0, 0.0); n];
        for x in 0..n {
            for y in 0..n {
                col[y] = data[y * n + x];
            }
            plan.process(&mut col);
            for y in 0..n {
                data[y * n + x] = col[y];
            }
        }
    }
}

/// `(x * w)(u) = h^2 sum_v x(u - v) w(v)`, periodic on the domain lattice.
///
/// For signals whose support plus the filter radius stays inside the
/// domain the wrap-around never contributes, and the result equals the
/// zero-extended convolution integral.
pub fn convolve(x: &GridSignal, w: &GridFilter) -> Result<GridSignal> {
    let n = x.n();
    let stencil = w.signal.lattice;
    if (stencil.h - x.h()).abs() > 1e-15 * x.h() {
        return Err(shape_err("filter and signal use different spacings"));
    }
    if x.n() % 2 != 0 {
        return Err(invalid("domain lattice must have an even size"));
    }
    let r = stencil.radius();
    if 2 * r + 1 > n {
        return Err(shape_err(format!("stencil of radius {r} exceeds a {n}-point domain")));
    }
    let h2 = x.h() * x.h();
    let fft = Fft2::new(n);
    let mut kernel = vec![Complex::new(0.0, 0.0); n * n];
    for by in 0..stencil.n {
        for bx in 0..stencil.n {
            let v = w.signal.values[by * stencil.n + bx];
            if v != 0.0 {
                let dy = (by + n - r) % n;
                let dx = (bx + n - r) % n;
                kernel[dy * n + dx].re += v * h2;
            }
        }
    }
    let mut data: Vec<Complex<f64>> = x.values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.transform(&mut kernel, false);
    fft.transform(&mut data, false);
    for (d, k) in data.iter_mut().zip(&kernel) {
        *d *= k;
    }
    fft.transform(&mut data, true);
    let scale = 1.0 / (n * n) as f64;
    GridSignal::new(x.lattice, data.iter().map(|c| c.re * scale).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump(u: [f64; 2]) -> f64 {
        let r2 = (u[0] - 0.1).powi(2) + (u[1] + 0.05).powi(2);
        (-r2 / 0.02).exp() * if u[0].hypot(u[1]) < 0.7 { 1.0 } else { 0.0 }
    }

    #[test]
    fn lattice_is_symmetric() {
        let lat = Lattice::domain(8);
        for i in 0..8 {
            assert_eq!(lat.coord(i), -lat.coord(7 - i));
        }
        let st = Lattice::stencil(8, 2);
        assert_eq!(st.coord(2), 0.0);
        assert_eq!(st.coord(4), 0.5);
    }

    #[test]
    fn norms_of_simple_signals() {
        let lat = Lattice::domain(64);
        let one = GridSignal::constant(lat, 1.0);
        assert!((one.l1_norm() - 4.0).abs() < 1e-12);
        // A linear ramp x inside the domain: |grad| = 1 over the interior.
        let ramp = GridSignal::sample(lat, |u| u[0]);
        let interior = 4.0 * (62.0 / 64.0) * 1.0;
        assert!(ramp.tv_norm() > interior * 0.9);
    }

    #[test]
    fn delta_convolution_is_identity() {
        let lat = Lattice::domain(32);
        let x = GridSignal::sample(lat, bump);
        let y = convolve(&x, &GridFilter::delta(32)).unwrap();
        assert!(y.max_abs_diff(&x).unwrap() < 1e-12);
        assert!((GridFilter::delta(32).l1_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fft_convolution_matches_direct_sum() {
        let n = 32;
        let lat = Lattice::domain(n);
        let x = GridSignal::sample(lat, bump);
        let w = GridFilter::sample(n, -2.5, 1.0, |u| 1.0 + u[0] - 2.0 * u[1]);
        let y = convolve(&x, &w).unwrap();
        let st = w.signal().lattice();
        let r = st.radius() as isize;
        let h2 = lat.h * lat.h;
        for iy in 0..n {
            for ix in 0..n {
                let mut acc = 0.0;
                for by in -r..=r {
                    for bx in -r..=r {
                        let sx = (ix as isize - bx).rem_euclid(n as isize) as usize;
                        let sy = (iy as isize - by).rem_euclid(n as isize) as usize;
                        let wv = w.signal().at((bx + r) as usize, (by + r) as usize);
                        acc += x.at(sx, sy) * wv * h2;
                    }
                }
                assert!((y.at(ix, iy) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn interpolation_is_exact_on_nodes_and_linear_between() {
        let lat = Lattice::domain(16);
        let x = GridSignal::sample(lat, |u| 2.0 * u[0] - u[1] + 0.5);
        assert_eq!(x.interpolate(x.point(3, 5)), x.at(3, 5));
        let p = [0.013, -0.271];
        assert!((x.interpolate(p) - (2.0 * p[0] - p[1] + 0.5)).abs() < 1e-12);
        assert_eq!(x.interpolate([3.0, 0.0]), 0.0);
    }

    #[test]
    fn filter_mask_and_projection() {
        let mut w = GridFilter::sample(64, -3.0, 1.5, |_| 1.0);
        assert!(w.signal().support_extent() <= 0.125 + 2.0 / 64.0);
        w.project_norm(0.01);
        assert!((w.l1_norm() - 0.01).abs() < 1e-12);
        let before = w.l1_norm();
        w.project_norm(2.0);
        assert_eq!(w.l1_norm(), before);
        let removed = w.mask(0.05);
        assert!(removed > 0.0 && w.signal().support_extent() <= 0.05 + 2.0 / 64.0);
    }
}

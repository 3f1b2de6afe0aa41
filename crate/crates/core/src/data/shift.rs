//! Domain shifts that turn a source dataset into a target dataset.
//!
//! Patch rotation is counter-clockwise: for a `p x p` block `P`,
//! `out[i][j] = P[j][p - 1 - i]`.

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::domain::DomainId;
use crate::error::{invalid, Result};
use crate::tensor::{Real, Tensor4};
use crate::theory::{DisplacementField, FieldKind, GridSignal, Lattice, WarpDirection};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ShiftKind {
    /// Rotate every aligned patch by 90 degrees, then negate the image.
    PatchRotateNegate,
    PatchRotate,
    NegateOnly,
    /// `clamp(gain * x + offset, -1, 1)`.
    Photometric { gain: f64, offset: f64 },
    /// Resample the image through a displacement field over `[-1, 1]^2`.
    CustomWarp { field: FieldKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub kind: ShiftKind,
    pub patch: usize,
}

impl ShiftSpec {
    pub fn new(kind: ShiftKind) -> Self {
        Self { kind, patch: 3 }
    }

    pub fn patch_rotate_negate() -> Self {
        Self::new(ShiftKind::PatchRotateNegate)
    }

    pub fn with_patch(mut self, patch: usize) -> Self {
        self.patch = patch;
        self
    }

    pub fn label(&self) -> String {
        match self.kind {
            ShiftKind::PatchRotateNegate => format!("patch-rotate-negate(p={})", self.patch),
            ShiftKind::PatchRotate => format!("patch-rotate(p={})", self.patch),
            ShiftKind::NegateOnly => "negate-only".into(),
            ShiftKind::Photometric { gain, offset } => format!("photometric(gain={gain},offset={offset})"),
            ShiftKind::CustomWarp { field } => format!("custom-warp({})", field.label()),
        }
    }

    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        match self.kind {
            ShiftKind::PatchRotateNegate | ShiftKind::PatchRotate => {
                if self.patch == 0 || h % self.patch != 0 || w % self.patch != 0 {
                    return Err(invalid(format!(
                        "image {h}x{w} not divisible by patch size {}",
                        self.patch
                    )));
                }
            }
            ShiftKind::Photometric { gain, offset } => {
                if !(gain.is_finite() && offset.is_finite()) || gain == 0.0 {
                    return Err(invalid(format!("photometric gain {gain} / offset {offset}")));
                }
            }
            ShiftKind::CustomWarp { field } => {
                if h != w {
                    return Err(invalid(format!("custom warp needs square images, got {h}x{w}")));
                }
                DisplacementField::new(field)?;
            }
            ShiftKind::NegateOnly => {}
        }
        Ok(())
    }
}

/// Rotates each aligned `p x p` block of every channel counter-clockwise.
pub fn rot90_ccw<T: Real>(x: &Tensor4<T>, p: usize) -> Result<Tensor4<T>> {
    rotate_patches(x, p, |i, j| (j, p - 1 - i))
}

/// Clockwise patch rotation, the inverse of [`rot90_ccw`].
pub fn rot90_cw<T: Real>(x: &Tensor4<T>, p: usize) -> Result<Tensor4<T>> {
    rotate_patches(x, p, |i, j| (p - 1 - j, i))
}

fn rotate_patches<T: Real>(
    x: &Tensor4<T>,
    p: usize,
    src: impl Fn(usize, usize) -> (usize, usize),
) -> Result<Tensor4<T>> {
    let [n, c, h, w] = x.dims();
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(invalid(format!("image {h}x{w} not divisible by patch size {p}")));
    }
    let mut out = Tensor4::zeros([n, c, h, w]);
    for s in 0..n {
        for ch in 0..c {
            for bi in (0..h).step_by(p) {
                for bj in (0..w).step_by(p) {
                    for i in 0..p {
                        for j in 0..p {
                            let (si, sj) = src(i, j);
                            out.set(s, ch, bi + i, bj + j, x.get(s, ch, bi + si, bj + sj));
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// The target filter that undoes the toy shift on aligned patches:
/// `conv(shift(x), -rot90_ccw(w)) = conv(x, w)` at stride `L` with no padding.
pub fn negated_rot90_filter<T: Real>(w: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [_, _, kh, kw] = w.dims();
    if kh != kw {
        return Err(invalid(format!("filter {kh}x{kw} is not square")));
    }
    Ok(rot90_ccw(w, kh)?.map(|v| -v))
}

fn warp_images<T: Real>(x: &Tensor4<T>, field: FieldKind) -> Result<Tensor4<T>> {
    let [n, c, h, w] = x.dims();
    let field = DisplacementField::new(field)?;
    let lattice = Lattice::domain(h);
    let mut out = Tensor4::zeros([n, c, h, w]);
    for s in 0..n {
        for ch in 0..c {
            // Shift the background to 0 so zero extension outside the image matches it.
            let mut sig = GridSignal::zeros(lattice);
            for iy in 0..h {
                for ix in 0..w {
                    sig.values_mut()[iy * w + ix] = x.get(s, ch, iy, ix).f64() + 1.0;
                }
            }
            let warped = crate::theory::warp(&sig, &field, WarpDirection::Forward)?;
            for iy in 0..h {
                for ix in 0..w {
                    out.set(s, ch, iy, ix, T::of(warped.at(ix, iy) - 1.0));
                }
            }
        }
    }
    Ok(out)
}

/// Applies the shift to a batch of images.
pub fn shift_image<T: Real>(x: &Tensor4<T>, spec: &ShiftSpec) -> Result<Tensor4<T>> {
    let [_, _, h, w] = x.dims();
    spec.validate(h, w)?;
    match spec.kind {
        ShiftKind::PatchRotateNegate => Ok(rot90_ccw(x, spec.patch)?.map(|v| -v)),
        ShiftKind::PatchRotate => rot90_ccw(x, spec.patch),
        ShiftKind::NegateOnly => Ok(x.map(|v| -v)),
        ShiftKind::Photometric { gain, offset } => {
            let (g, o) = (T::of(gain), T::of(offset));
            let (lo, hi) = (T::of(-1.0), T::of(1.0));
            Ok(x.map(|v| (g * v + o).max(lo).min(hi)))
        }
        ShiftKind::CustomWarp { field } => warp_images(x, field),
    }
}

pub fn apply_shift(ds: &Dataset, spec: &ShiftSpec, domain: DomainId) -> Result<Dataset> {
    let images = shift_image(&ds.images, spec)?;
    Ok(Dataset {
        images,
        labels: ds.labels.clone(),
        classes: ds.classes,
        domain,
        provenance: format!("{} | {}", ds.provenance, spec.label()),
    })
}

/// Exact inverse for the rotation and negation shifts.
///
/// Photometric shifts invert algebraically and are exact only where the
/// forward map did not clamp. Warps have no exact inverse and are rejected.
pub fn invert_shift<T: Real>(x: &Tensor4<T>, spec: &ShiftSpec) -> Result<Tensor4<T>> {
    let [_, _, h, w] = x.dims();
    spec.validate(h, w)?;
    match spec.kind {
        ShiftKind::PatchRotateNegate => rot90_cw(&x.map(|v| -v), spec.patch),
        ShiftKind::PatchRotate => rot90_cw(x, spec.patch),
        ShiftKind::NegateOnly => Ok(x.map(|v| -v)),
        ShiftKind::Photometric { gain, offset } => {
            let (g, o) = (T::of(gain), T::of(offset));
            Ok(x.map(|v| (v - o) / g))
        }
        ShiftKind::CustomWarp { .. } => Err(invalid("custom warps are not invertible")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nine() -> Tensor4<f64> {
        Tensor4::new([1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap()
    }

    #[test]
    fn ccw_permutation_table() {
        // 1 2 3      3 6 9
        // 4 5 6  ->  2 5 8
        // 7 8 9      1 4 7
        let r = rot90_ccw(&nine(), 3).unwrap();
        assert_eq!(r.data(), &[3.0, 6.0, 9.0, 2.0, 5.0, 8.0, 1.0, 4.0, 7.0]);
        let s = shift_image(&nine(), &ShiftSpec::patch_rotate_negate()).unwrap();
        assert_eq!(s.data(), &[-3.0, -6.0, -9.0, -2.0, -5.0, -8.0, -1.0, -4.0, -7.0]);
    }

    #[test]
    fn four_rotations_are_identity() {
        let x = Tensor4::from_fn([2, 1, 6, 6], |[n, _, i, j]| (n * 36 + i * 6 + j) as f64);
        let mut y = x.clone();
        for _ in 0..4 {
            y = rot90_ccw(&y, 3).unwrap();
        }
        assert_eq!(x, y);
        assert_eq!(rot90_cw(&rot90_ccw(&x, 3).unwrap(), 3).unwrap(), x);
    }

    #[test]
    fn constant_image_negates() {
        let x = Tensor4::filled([1, 1, 6, 6], 0.25f64);
        let y = shift_image(&x, &ShiftSpec::patch_rotate_negate()).unwrap();
        assert!(y.data().iter().all(|&v| v == -0.25));
    }

    #[test]
    fn indivisible_size_rejected() {
        let x = Tensor4::<f64>::zeros([1, 1, 4, 4]);
        assert!(shift_image(&x, &ShiftSpec::patch_rotate_negate()).is_err());
    }

    #[test]
    fn zero_warp_is_identity() {
        let x = Tensor4::from_fn([1, 1, 6, 6], |[_, _, i, j]| ((i * 6 + j) as f64 / 36.0) * 2.0 - 1.0);
        let spec = ShiftSpec::new(ShiftKind::CustomWarp { field: FieldKind::Zero });
        let y = shift_image(&x, &spec).unwrap();
        assert!(x.max_abs_diff(&y).unwrap() < 1e-12);
    }
}

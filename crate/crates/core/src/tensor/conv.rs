//! Cross-correlation kernels: dense, depthwise-over-atoms, and pointwise.
//!
//! Orientation is cross-correlation (no kernel flip):
//! `y[n, co, i, j] = sum x[n, ci, i*s - pad + p, j*s - pad + q] * w[co, ci, p, q]`
//! with zeros outside the input.

use serde::{Deserialize, Serialize};

use super::{Real, Tensor4};
use crate::error::{invalid, shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
        }
    }
}

impl ConvSpec {
    pub fn new(stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return Err(invalid("stride must be positive"));
        }
        Ok(Self { stride, padding })
    }

    /// "Same" padding for an odd kernel at stride 1.
    pub fn same(l: usize) -> Result<Self> {
        if l % 2 == 0 {
            return Err(invalid(format!("same padding needs an odd kernel, got {l}")));
        }
        Ok(Self {
            stride: 1,
            padding: (l - 1) / 2,
        })
    }

    /// Output extent along one axis; the division must be exact.
    pub fn output_size(&self, input: usize, kernel: usize) -> Result<usize> {
        let padded = input + 2 * self.padding;
        if padded < kernel {
            return Err(shape_err(format!(
                "kernel {kernel} larger than padded input {padded}"
            )));
        }
        let span = padded - kernel;
        if span % self.stride != 0 {
            return Err(shape_err(format!(
                "(input {input} + 2*{} - kernel {kernel}) not divisible by stride {}",
                self.padding, self.stride
            )));
        }
        Ok(span / self.stride + 1)
    }
}

#[inline]
fn src_index(out: usize, tap: usize, spec: ConvSpec, extent: usize) -> Option<usize> {
    let pos = (out * spec.stride + tap) as isize - spec.padding as isize;
    if pos < 0 || pos as usize >= extent {
        None
    } else {
        Some(pos as usize)
    }
}

fn check_filter<T: Real>(x: &Tensor4<T>, w: &Tensor4<T>) -> Result<()> {
    let [_, c_in, _, _] = x.dims();
    let [_, wc_in, lh, lw] = w.dims();
    if wc_in != c_in {
        return Err(shape_err(format!(
            "filter expects {wc_in} input channels, input has {c_in}"
        )));
    }
    if lh != lw {
        return Err(shape_err(format!("filter must be square, got {lh}x{lw}")));
    }
    Ok(())
}

pub fn conv2d<T: Real>(x: &Tensor4<T>, w: &Tensor4<T>, spec: ConvSpec) -> Result<Tensor4<T>> {
    conv2d_bias(x, w, None, spec)
}

pub fn conv2d_bias<T: Real>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    bias: Option<&[T]>,
    spec: ConvSpec,
) -> Result<Tensor4<T>> {
    check_filter(x, w)?;
    let [n, c_in, h, wd] = x.dims();
    let [c_out, _, l, _] = w.dims();
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(shape_err(format!(
                "bias length {} for {c_out} output channels",
                b.len()
            )));
        }
    }
    let oh = spec.output_size(h, l)?;
    let ow = spec.output_size(wd, l)?;
    let mut y = Tensor4::zeros([n, c_out, oh, ow]);
    let xd = x.data();
    let wdat = w.data();
    let yd = y.data_mut();
    for b in 0..n {
        for co in 0..c_out {
            let out = &mut yd[(b * c_out + co) * oh * ow..(b * c_out + co + 1) * oh * ow];
            if let Some(bias) = bias {
                out.iter_mut().for_each(|v| *v = bias[co]);
            }
            for ci in 0..c_in {
                let plane = &xd[(b * c_in + ci) * h * wd..(b * c_in + ci + 1) * h * wd];
                let kernel = &wdat[(co * c_in + ci) * l * l..(co * c_in + ci + 1) * l * l];
                correlate_plane(plane, h, wd, kernel, l, spec, out, oh, ow);
            }
        }
    }
    Ok(y)
}

/// Accumulates one input plane correlated with one kernel into `out`.
#[allow(clippy::too_many_arguments)]
#[inline]
fn correlate_plane<T: Real>(
    plane: &[T],
    h: usize,
    w: usize,
    kernel: &[T],
    l: usize,
    spec: ConvSpec,
    out: &mut [T],
    oh: usize,
    ow: usize,
) {
    for p in 0..l {
        for q in 0..l {
            let kv = kernel[p * l + q];
            for i in 0..oh {
                let Some(si) = src_index(i, p, spec, h) else {
                    continue;
                };
                let row = &plane[si * w..(si + 1) * w];
                let orow = &mut out[i * ow..(i + 1) * ow];
                for (j, o) in orow.iter_mut().enumerate() {
                    if let Some(sj) = src_index(j, q, spec, w) {
                        *o += row[sj] * kv;
                    }
                }
            }
        }
    }
}

/// Gradients of the dense convolution: `(dx, dw, dbias)`.
pub fn conv2d_backward<T: Real>(
    x: &Tensor4<T>,
    w: &Tensor4<T>,
    dy: &Tensor4<T>,
    spec: ConvSpec,
) -> Result<(Tensor4<T>, Tensor4<T>, Vec<T>)> {
    check_filter(x, w)?;
    let [n, c_in, h, wd] = x.dims();
    let [c_out, _, l, _] = w.dims();
    let oh = spec.output_size(h, l)?;
    let ow = spec.output_size(wd, l)?;
    if dy.dims() != [n, c_out, oh, ow] {
        return Err(shape_err(format!(
            "upstream gradient {:?}, expected {:?}",
            dy.dims(),
            [n, c_out, oh, ow]
        )));
    }
    let mut dx = Tensor4::zeros(x.dims());
    let mut dw = Tensor4::zeros(w.dims());
    let mut db = vec![T::zero(); c_out];
    let xd = x.data();
    let wdat = w.data();
    let dyd = dy.data();
    for b in 0..n {
        for co in 0..c_out {
            let g = &dyd[(b * c_out + co) * oh * ow..(b * c_out + co + 1) * oh * ow];
            db[co] += g.iter().copied().sum::<T>();
            for ci in 0..c_in {
                let base = (b * c_in + ci) * h * wd;
                let kbase = (co * c_in + ci) * l * l;
                for p in 0..l {
                    for q in 0..l {
                        let kv = wdat[kbase + p * l + q];
                        let mut acc = T::zero();
                        for i in 0..oh {
                            let Some(si) = src_index(i, p, spec, h) else {
                                continue;
                            };
                            for j in 0..ow {
                                if let Some(sj) = src_index(j, q, spec, wd) {
                                    let gv = g[i * ow + j];
                                    acc += xd[base + si * wd + sj] * gv;
                                    dx.data_mut()[base + si * wd + sj] += kv * gv;
                                }
                            }
                        }
                        dw.data_mut()[kbase + p * l + q] += acc;
                    }
                }
            }
        }
    }
    Ok((dx, dw, db))
}

/// Correlates every input channel with each of `k` atoms (`k * l * l`
/// values). Output channel `ci * k + kk` holds channel `ci` against atom `kk`.
pub fn depthwise_forward<T: Real>(
    x: &Tensor4<T>,
    atoms: &[T],
    k: usize,
    l: usize,
    spec: ConvSpec,
) -> Result<Tensor4<T>> {
    if atoms.len() != k * l * l {
        return Err(shape_err(format!(
            "{} atom values for k={k}, l={l}",
            atoms.len()
        )));
    }
    let [n, c_in, h, w] = x.dims();
    let oh = spec.output_size(h, l)?;
    let ow = spec.output_size(w, l)?;
    let mut m = Tensor4::zeros([n, c_in * k, oh, ow]);
    let xd = x.data();
    let md = m.data_mut();
    for b in 0..n {
        for ci in 0..c_in {
            let plane = &xd[(b * c_in + ci) * h * w..(b * c_in + ci + 1) * h * w];
            for kk in 0..k {
                let ch = b * c_in * k + ci * k + kk;
                let out = &mut md[ch * oh * ow..(ch + 1) * oh * ow];
                correlate_plane(plane, h, w, &atoms[kk * l * l..(kk + 1) * l * l], l, spec, out, oh, ow);
            }
        }
    }
    Ok(m)
}

/// Gradients of [`depthwise_forward`]: `(dx, datoms)`.
pub fn depthwise_backward<T: Real>(
    x: &Tensor4<T>,
    atoms: &[T],
    k: usize,
    l: usize,
    dm: &Tensor4<T>,
    spec: ConvSpec,
) -> Result<(Tensor4<T>, Vec<T>)> {
    let [n, c_in, h, w] = x.dims();
    let oh = spec.output_size(h, l)?;
    let ow = spec.output_size(w, l)?;
    if dm.dims() != [n, c_in * k, oh, ow] {
        return Err(shape_err(format!(
            "depthwise gradient {:?}, expected {:?}",
            dm.dims(),
            [n, c_in * k, oh, ow]
        )));
    }
    let mut dx = Tensor4::zeros(x.dims());
    let mut datoms = vec![T::zero(); k * l * l];
    let xd = x.data();
    let dmd = dm.data();
    for b in 0..n {
        for ci in 0..c_in {
            let base = (b * c_in + ci) * h * w;
            for kk in 0..k {
                let ch = b * c_in * k + ci * k + kk;
                let g = &dmd[ch * oh * ow..(ch + 1) * oh * ow];
                for p in 0..l {
                    for q in 0..l {
                        let av = atoms[kk * l * l + p * l + q];
                        let mut acc = T::zero();
                        for i in 0..oh {
                            let Some(si) = src_index(i, p, spec, h) else {
                                continue;
                            };
                            for j in 0..ow {
                                if let Some(sj) = src_index(j, q, spec, w) {
                                    let gv = g[i * ow + j];
                                    acc += xd[base + si * w + sj] * gv;
                                    dx.data_mut()[base + si * w + sj] += av * gv;
                                }
                            }
                        }
                        datoms[kk * l * l + p * l + q] += acc;
                    }
                }
            }
        }
    }
    Ok((dx, datoms))
}

/// 1x1 combination `y[n, co] = bias[co] + sum_{ci,k} a[k][ci][co] * m[n, ci*K + k]`.
pub fn pointwise_forward<T: Real>(
    m: &Tensor4<T>,
    coeffs: &[T],
    k: usize,
    c_in: usize,
    c_out: usize,
    bias: &[T],
) -> Result<Tensor4<T>> {
    let [n, mc, h, w] = m.dims();
    if mc != c_in * k || coeffs.len() != k * c_in * c_out || bias.len() != c_out {
        return Err(shape_err(format!(
            "pointwise: {mc} mid channels, {} coeffs, {} biases for k={k}, c_in={c_in}, c_out={c_out}",
            coeffs.len(),
            bias.len()
        )));
    }
    let hw = h * w;
    let mut y = Tensor4::zeros([n, c_out, h, w]);
    let md = m.data();
    let yd = y.data_mut();
    for b in 0..n {
        for co in 0..c_out {
            let out = &mut yd[(b * c_out + co) * hw..(b * c_out + co + 1) * hw];
            out.iter_mut().for_each(|v| *v = bias[co]);
            for ci in 0..c_in {
                for kk in 0..k {
                    let a = coeffs[(kk * c_in + ci) * c_out + co];
                    let ch = b * mc + ci * k + kk;
                    let src = &md[ch * hw..(ch + 1) * hw];
                    for (o, &s) in out.iter_mut().zip(src) {
                        *o += a * s;
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Gradients of [`pointwise_forward`]: `(dm, dcoeffs, dbias)`.
pub fn pointwise_backward<T: Real>(
    m: &Tensor4<T>,
    coeffs: &[T],
    k: usize,
    c_in: usize,
    c_out: usize,
    dy: &Tensor4<T>,
) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    let [n, mc, h, w] = m.dims();
    if dy.dims() != [n, c_out, h, w] || mc != c_in * k {
        return Err(shape_err(format!(
            "pointwise gradient {:?} against mid {:?}",
            dy.dims(),
            m.dims()
        )));
    }
    let hw = h * w;
    let mut dm = Tensor4::zeros(m.dims());
    let mut dcoeffs = vec![T::zero(); k * c_in * c_out];
    let mut dbias = vec![T::zero(); c_out];
    let md = m.data();
    let dyd = dy.data();
    for b in 0..n {
        for co in 0..c_out {
            let g = &dyd[(b * c_out + co) * hw..(b * c_out + co + 1) * hw];
            dbias[co] += g.iter().copied().sum::<T>();
            for ci in 0..c_in {
                for kk in 0..k {
                    let idx = (kk * c_in + ci) * c_out + co;
                    let a = coeffs[idx];
                    let ch = b * mc + ci * k + kk;
                    let src = &md[ch * hw..(ch + 1) * hw];
                    let mut acc = T::zero();
                    let dst = &mut dm.data_mut()[ch * hw..(ch + 1) * hw];
                    for ((d, &s), &gv) in dst.iter_mut().zip(src).zip(g) {
                        acc += s * gv;
                        *d += a * gv;
                    }
                    dcoeffs[idx] += acc;
                }
            }
        }
    }
    Ok((dm, dcoeffs, dbias))
}

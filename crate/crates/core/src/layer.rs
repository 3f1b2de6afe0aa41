//! Domain-adaptive filter decomposition layer.
//!
//! A filter bank `W[co, ci, :, :] = sum_k a[k][ci][co] * psi_k` is stored as
//! `K` spatial atoms per domain plus one coefficient tensor shared by every
//! domain. The forward pass never materializes `W`: each input channel is
//! first correlated with every atom of the selected domain (depthwise step),
//! then the `C_in * K` responses are mixed by the shared coefficients (a 1x1
//! pointwise step).
//!
//! Non-source domains are parameterized as `psi_t = psi_s + delta` with
//! `delta` starting at exactly zero. Gradients are routed per domain: a
//! backward pass for domain `d` writes atom gradients only into the bank
//! owned by `d` (the residual for non-source domains), while the shared
//! coefficient and bias gradients accumulate across calls.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::{
    depthwise_backward, depthwise_forward, pointwise_backward, pointwise_forward, ConvSpec, Real,
    Tensor4,
};

/// `K` spatial atoms of size `L x L` belonging to one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomBank<T> {
    domain: usize,
    k: usize,
    l: usize,
    atoms: Vec<T>,
}

impl<T: Real> AtomBank<T> {
    pub fn new(domain: usize, k: usize, l: usize, atoms: Vec<T>) -> Result<Self> {
        if k == 0 {
            return Err(invalid("atom bank needs at least one atom"));
        }
        if l % 2 == 0 {
            return Err(invalid(format!("atom size must be odd, got {l}")));
        }
        if atoms.len() != k * l * l {
            return Err(shape_err(format!(
                "{} atom values for k={k}, l={l}",
                atoms.len()
            )));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("atom bank".into()));
        }
        Ok(Self {
            domain,
            k,
            l,
            atoms,
        })
    }

    pub fn zeros(domain: usize, k: usize, l: usize) -> Self {
        Self {
            domain,
            k,
            l,
            atoms: vec![T::zero(); k * l * l],
        }
    }

    pub fn domain(&self) -> usize {
        self.domain
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn atom(&self, k: usize) -> &[T] {
        let s = self.l * self.l;
        &self.atoms[k * s..(k + 1) * s]
    }

    pub fn values(&self) -> &[T] {
        &self.atoms
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.atoms
    }

    /// Applies a value correspondence to every atom entry.
    pub fn map_values(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            atoms: self.atoms.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn cast<U: Real>(&self) -> AtomBank<U> {
        AtomBank {
            domain: self.domain,
            k: self.k,
            l: self.l,
            atoms: self.atoms.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}

/// Target-domain atoms stored as an offset from the source bank.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualAtomBank<T> {
    domain: usize,
    residual: Vec<T>,
}

impl<T: Real> ResidualAtomBank<T> {
    /// A fresh residual is exactly zero.
    pub fn zeros(domain: usize, k: usize, l: usize) -> Self {
        Self {
            domain,
            residual: vec![T::zero(); k * l * l],
        }
    }

    pub fn domain(&self) -> usize {
        self.domain
    }

    pub fn values(&self) -> &[T] {
        &self.residual
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.residual
    }

    pub fn resolve(&self, base: &AtomBank<T>) -> AtomBank<T> {
        AtomBank {
            domain: self.domain,
            k: base.k,
            l: base.l,
            atoms: base
                .atoms
                .iter()
                .zip(&self.residual)
                .map(|(&b, &d)| b + d)
                .collect(),
        }
    }
}

/// Shared coefficients `a[k][c_in][c_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffTensor<T> {
    k: usize,
    c_in: usize,
    c_out: usize,
    a: Vec<T>,
}

impl<T: Real> CoeffTensor<T> {
    pub fn new(k: usize, c_in: usize, c_out: usize, a: Vec<T>) -> Result<Self> {
        if a.len() != k * c_in * c_out {
            return Err(shape_err(format!(
                "{} coefficients for {k}x{c_in}x{c_out}",
                a.len()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("coefficients".into()));
        }
        Ok(Self { k, c_in, c_out, a })
    }

    pub fn zeros(k: usize, c_in: usize, c_out: usize) -> Self {
        Self {
            k,
            c_in,
            c_out,
            a: vec![T::zero(); k * c_in * c_out],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.k, self.c_in, self.c_out)
    }

    #[inline]
    pub fn get(&self, k: usize, ci: usize, co: usize) -> T {
        self.a[(k * self.c_in + ci) * self.c_out + co]
    }

    pub fn values(&self) -> &[T] {
        &self.a
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.a
    }

    pub fn cast<U: Real>(&self) -> CoeffTensor<U> {
        CoeffTensor {
            k: self.k,
            c_in: self.c_in,
            c_out: self.c_out,
            a: self.a.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}

/// `W[co, ci, p, q] = sum_k a[k][ci][co] * psi_k[p, q]`.
pub fn reconstruct_filter<T: Real>(bank: &AtomBank<T>, coeffs: &CoeffTensor<T>) -> Result<Tensor4<T>> {
    if bank.k != coeffs.k {
        return Err(shape_err(format!(
            "{} atoms but coefficients for {}",
            bank.k, coeffs.k
        )));
    }
    let l = bank.l;
    let mut w = Tensor4::zeros([coeffs.c_out, coeffs.c_in, l, l]);
    for co in 0..coeffs.c_out {
        for ci in 0..coeffs.c_in {
            let base = w.offset(co, ci, 0, 0);
            for k in 0..bank.k {
                let a = coeffs.get(k, ci, co);
                for (dst, &psi) in w.data_mut()[base..base + l * l].iter_mut().zip(bank.atom(k)) {
                    *dst += a * psi;
                }
            }
        }
    }
    Ok(w)
}

/// Best rank-`k` atom/coefficient factorization of a dense filter bank.
///
/// The filter is viewed as an `L^2 x (C_in * C_out)` matrix `M`. Atoms are
/// the leading `k` eigenvectors of `M M^T` (the left singular vectors of
/// `M`), and the coefficients are the projections `U_k^T M`. The returned
/// error is `||M - U_k U_k^T M||_F`.
pub fn init_from_dense<T: Real>(
    w: &Tensor4<T>,
    k: usize,
) -> Result<(AtomBank<T>, CoeffTensor<T>, f64)> {
    let [c_out, c_in, l, lw] = w.dims();
    if l != lw || l % 2 == 0 {
        return Err(shape_err(format!("filter must be square and odd, got {l}x{lw}")));
    }
    let l2 = l * l;
    if k == 0 || k > l2 {
        return Err(invalid(format!("k={k} must lie in 1..={l2}")));
    }
    let cols = c_in * c_out;
    let m = DMatrix::<f64>::from_fn(l2, cols, |r, c| {
        let (ci, co) = (c / c_out, c % c_out);
        w.get(co, ci, r / l, r % l).f64()
    });
    if m.iter().all(|&v| v == 0.0) {
        return Ok((AtomBank::zeros(0, k, l), CoeffTensor::zeros(k, c_in, c_out), 0.0));
    }
    let gram = &m * m.transpose();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..l2).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut u_k = DMatrix::<f64>::zeros(l2, k);
    for (dst, &src) in order.iter().take(k).enumerate() {
        u_k.set_column(dst, &eig.eigenvectors.column(src));
    }
    let proj = u_k.transpose() * &m;
    let residual = (&m - &u_k * &proj).norm();

    let mut atoms = Vec::with_capacity(k * l2);
    for kk in 0..k {
        atoms.extend(u_k.column(kk).iter().map(|&v| T::of(v)));
    }
    let mut a = vec![T::zero(); k * c_in * c_out];
    for kk in 0..k {
        for ci in 0..c_in {
            for co in 0..c_out {
                a[(kk * c_in + ci) * c_out + co] = T::of(proj[(kk, ci * c_out + co)]);
            }
        }
    }
    Ok((AtomBank::new(0, k, l, atoms)?, CoeffTensor::new(k, c_in, c_out, a)?, residual))
}

/// Activations retained by [`DafdLayer::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct DafdCache<T> {
    domain: usize,
    input: Tensor4<T>,
    mid: Tensor4<T>,
    atoms: AtomBank<T>,
}

impl<T> DafdCache<T> {
    pub fn domain(&self) -> usize {
        self.domain
    }

    /// Depthwise responses, `C_in * K` channels.
    pub fn mid(&self) -> &Tensor4<T> {
        &self.mid
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DafdLayer<T> {
    source: AtomBank<T>,
    residuals: Vec<ResidualAtomBank<T>>,
    coeffs: CoeffTensor<T>,
    bias: Vec<T>,
    spec: ConvSpec,
}

impl<T: Real> DafdLayer<T> {
    /// Builds a layer over `domains` domains (>= 1) with zero residuals.
    pub fn new(
        source: AtomBank<T>,
        coeffs: CoeffTensor<T>,
        bias: Vec<T>,
        spec: ConvSpec,
        domains: usize,
    ) -> Result<Self> {
        if domains == 0 {
            return Err(invalid("a layer needs at least one domain"));
        }
        if source.k != coeffs.k {
            return Err(shape_err(format!(
                "{} atoms, coefficients for {}",
                source.k, coeffs.k
            )));
        }
        if bias.len() != coeffs.c_out {
            return Err(shape_err(format!(
                "bias length {} for {} outputs",
                bias.len(),
                coeffs.c_out
            )));
        }
        let (k, l) = (source.k, source.l);
        let source = AtomBank { domain: 0, ..source };
        let residuals = (1..domains)
            .map(|d| ResidualAtomBank::zeros(d, k, l))
            .collect();
        Ok(Self {
            source,
            residuals,
            coeffs,
            bias,
            spec,
        })
    }

    /// Factorizes a dense filter at rank `k`; returns the layer and the
    /// factorization error.
    pub fn from_dense(
        w: &Tensor4<T>,
        bias: Vec<T>,
        k: usize,
        spec: ConvSpec,
        domains: usize,
    ) -> Result<(Self, f64)> {
        let (bank, coeffs, err) = init_from_dense(w, k)?;
        Ok((Self::new(bank, coeffs, bias, spec, domains)?, err))
    }

    /// Same shape, every parameter zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let (k, c_in, c_out) = self.coeffs.shape();
        Self {
            source: AtomBank::zeros(0, k, self.source.l),
            residuals: self
                .residuals
                .iter()
                .map(|r| ResidualAtomBank::zeros(r.domain, k, self.source.l))
                .collect(),
            coeffs: CoeffTensor::zeros(k, c_in, c_out),
            bias: vec![T::zero(); c_out],
            spec: self.spec,
        }
    }

    pub fn domains(&self) -> usize {
        self.residuals.len() + 1
    }

    pub fn k(&self) -> usize {
        self.source.k
    }

    pub fn l(&self) -> usize {
        self.source.l
    }

    pub fn c_in(&self) -> usize {
        self.coeffs.c_in
    }

    pub fn c_out(&self) -> usize {
        self.coeffs.c_out
    }

    pub fn spec(&self) -> ConvSpec {
        self.spec
    }

    pub fn source(&self) -> &AtomBank<T> {
        &self.source
    }

    pub fn source_mut(&mut self) -> &mut AtomBank<T> {
        &mut self.source
    }

    pub fn residual(&self, domain: usize) -> Result<&ResidualAtomBank<T>> {
        if domain == 0 {
            return Err(invalid("the source domain has no residual bank"));
        }
        self.residuals
            .get(domain - 1)
            .ok_or(Error::UnknownDomain(domain))
    }

    pub fn residual_mut(&mut self, domain: usize) -> Result<&mut ResidualAtomBank<T>> {
        if domain == 0 {
            return Err(invalid("the source domain has no residual bank"));
        }
        self.residuals
            .get_mut(domain - 1)
            .ok_or(Error::UnknownDomain(domain))
    }

    pub fn residuals(&self) -> &[ResidualAtomBank<T>] {
        &self.residuals
    }

    pub fn coeffs(&self) -> &CoeffTensor<T> {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut CoeffTensor<T> {
        &mut self.coeffs
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    /// Disjoint mutable views: `(source atoms, residual banks, coefficients, bias)`.
    pub fn parts_mut(&mut self) -> (&mut [T], Vec<&mut [T]>, &mut [T], &mut [T]) {
        (
            &mut self.source.atoms,
            self.residuals.iter_mut().map(|r| r.residual.as_mut_slice()).collect(),
            &mut self.coeffs.a,
            &mut self.bias,
        )
    }

    /// Source atoms for domain 0, `base + delta` otherwise.
    pub fn resolve_atoms(&self, domain: usize) -> Result<AtomBank<T>> {
        if domain == 0 {
            Ok(self.source.clone())
        } else {
            Ok(self.residual(domain)?.resolve(&self.source))
        }
    }

    /// The equivalent dense filter seen by `domain`.
    pub fn dense_filter(&self, domain: usize) -> Result<Tensor4<T>> {
        reconstruct_filter(&self.resolve_atoms(domain)?, &self.coeffs)
    }

    /// Total trainable values: `K (C_in C_out + D L^2) + C_out`.
    pub fn param_count(&self) -> usize {
        self.coeffs.a.len() + self.domains() * self.source.atoms.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Tensor4<T>, domain: usize) -> Result<(Tensor4<T>, DafdCache<T>)> {
        let c_in = x.dims()[1];
        if c_in != self.coeffs.c_in {
            return Err(shape_err(format!(
                "input has {c_in} channels, layer expects {}",
                self.coeffs.c_in
            )));
        }
        let atoms = self.resolve_atoms(domain)?;
        let (k, _, c_out) = self.coeffs.shape();
        let mid = depthwise_forward(x, &atoms.atoms, k, atoms.l, self.spec)?;
        let y = pointwise_forward(&mid, &self.coeffs.a, k, c_in, c_out, &self.bias)?;
        Ok((
            y,
            DafdCache {
                domain,
                input: x.clone(),
                mid,
                atoms,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads` (a [`Self::zeros_like`]
    /// accumulator) and returns the input gradient. Atom gradients land only
    /// in `domain`'s own bank.
    pub fn backward(
        &self,
        cache: &DafdCache<T>,
        dy: &Tensor4<T>,
        domain: usize,
        grads: &mut Self,
    ) -> Result<Tensor4<T>> {
        if cache.domain != domain {
            return Err(invalid(format!(
                "cache was produced for domain {}, backward called for {domain}",
                cache.domain
            )));
        }
        if grads.coeffs.shape() != self.coeffs.shape() || grads.domains() != self.domains() {
            return Err(shape_err("gradient accumulator does not match layer"));
        }
        let (k, c_in, c_out) = self.coeffs.shape();
        let (dmid, dcoeffs, dbias) =
            pointwise_backward(&cache.mid, &self.coeffs.a, k, c_in, c_out, dy)?;
        let (dx, datoms) =
            depthwise_backward(&cache.input, &cache.atoms.atoms, k, cache.atoms.l, &dmid, self.spec)?;

        let slot: &mut [T] = if domain == 0 {
            &mut grads.source.atoms
        } else {
            &mut grads.residual_mut(domain)?.residual
        };
        add_into(slot, &datoms);
        add_into(&mut grads.coeffs.a, &dcoeffs);
        add_into(&mut grads.bias, &dbias);
        Ok(dx)
    }

    pub fn cast<U: Real>(&self) -> DafdLayer<U> {
        DafdLayer {
            source: self.source.cast(),
            residuals: self
                .residuals
                .iter()
                .map(|r| ResidualAtomBank {
                    domain: r.domain,
                    residual: r.residual.iter().map(|v| U::of(v.f64())).collect(),
                })
                .collect(),
            coeffs: self.coeffs.cast(),
            bias: self.bias.iter().map(|v| U::of(v.f64())).collect(),
            spec: self.spec,
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

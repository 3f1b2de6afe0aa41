//! Squared maximum mean discrepancy with a sum of Gaussian kernels.

use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::{Real, Tensor4};

/// Bandwidth multipliers applied to the median pairwise distance.
pub const DEFAULT_BANDWIDTH_SCALES: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Clone, PartialEq)]
pub struct MmdValue<T> {
    pub value: T,
    /// Gradients with respect to each feature set, in their shapes.
    pub grad_s: Tensor4<T>,
    pub grad_t: Tensor4<T>,
}

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Biased V-statistic `mean k(s,s) + mean k(t,t) - 2 mean k(s,t)` with
/// `k(x, y) = sum_b exp(-|x - y|^2 / (2 b^2))`, plus its gradient.
///
/// Rows are samples (`(n, d, 1, 1)` or any shape with matching sample length).
pub fn mmd_loss<T: Real>(s: &Tensor4<T>, t: &Tensor4<T>, bandwidths: &[f64]) -> Result<MmdValue<T>> {
    if s.is_empty() || t.is_empty() || s.dims()[0] == 0 || t.dims()[0] == 0 {
        return Err(Error::Empty("mmd needs samples on both sides".into()));
    }
    if s.sample_len() != t.sample_len() {
        return Err(shape_err(format!(
            "feature widths differ: {} vs {}",
            s.sample_len(),
            t.sample_len()
        )));
    }
    if bandwidths.is_empty() {
        return Err(invalid("mmd needs at least one bandwidth"));
    }
    if let Some(b) = bandwidths.iter().find(|&&b| !(b > 0.0 && b.is_finite())) {
        return Err(invalid(format!("bandwidth {b} must be positive")));
    }
    let inv2: Vec<T> = bandwidths.iter().map(|&b| T::of(1.0 / (2.0 * b * b))).collect();
    let kernel = |d2: T| -> (T, T) {
        // value and d k / d (d2)
        let mut v = T::zero();
        let mut dv = T::zero();
        for &c in &inv2 {
            let e = (-d2 * c).exp();
            v += e;
            dv -= c * e;
        }
        (v, dv)
    };
    let (m, n) = (s.dims()[0], t.dims()[0]);
    let mut grad_s = Tensor4::zeros(s.dims());
    let mut grad_t = Tensor4::zeros(t.dims());
    let dlen = s.sample_len();

    // Within-set term: weight w over all ordered pairs.
    let within = |x: &Tensor4<T>, count: usize, grad: &mut Tensor4<T>| -> T {
        let w = T::one() / T::of((count * count) as f64);
        let mut total = T::zero();
        for i in 0..count {
            for j in 0..count {
                let (xi, xj) = (x.sample(i), x.sample(j));
                let (v, dv) = kernel(sq_dist(xi, xj));
                total += v;
                if i != j {
                    // d|xi - xj|^2 / dxi = 2 (xi - xj); the (j, i) pair adds the same.
                    let c = w * dv * T::of(4.0);
                    let g = &mut grad.data_mut()[i * dlen..(i + 1) * dlen];
                    for (gv, (&a, &b)) in g.iter_mut().zip(xi.iter().zip(xj)) {
                        *gv += c * (a - b);
                    }
                }
            }
        }
        total * w
    };
    let k_ss = within(s, m, &mut grad_s);
    let k_tt = within(t, n, &mut grad_t);

    let w = T::of(2.0) / T::of((m * n) as f64);
    let mut k_st = T::zero();
    for i in 0..m {
        for j in 0..n {
            let (si, tj) = (s.sample(i), t.sample(j));
            let (v, dv) = kernel(sq_dist(si, tj));
            k_st += v;
            let c = w * dv * T::of(2.0);
            for q in 0..dlen {
                let diff = si[q] - tj[q];
                grad_s.data_mut()[i * dlen + q] -= c * diff;
                grad_t.data_mut()[j * dlen + q] += c * diff;
            }
        }
    }
    let value = k_ss + k_tt - w * k_st;
    Ok(MmdValue { value, grad_s, grad_t })
}

/// Median of pairwise distances over the pooled samples (0 if all coincide).
pub fn median_pairwise_distance<T: Real>(s: &Tensor4<T>, t: &Tensor4<T>) -> f64 {
    let rows: Vec<&[T]> = (0..s.dims()[0])
        .map(|i| s.sample(i))
        .chain((0..t.dims()[0]).map(|j| t.sample(j)))
        .collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len() / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(rows[i], rows[j]).f64().sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    if d.len() % 2 == 1 {
        d[mid]
    } else {
        0.5 * (d[mid - 1] + d[mid])
    }
}

/// Absolute bandwidths `scale * median`, falling back to a median of 1.
pub fn median_bandwidths<T: Real>(s: &Tensor4<T>, t: &Tensor4<T>, scales: &[f64]) -> Vec<f64> {
    let med = median_pairwise_distance(s, t);
    let med = if med > 1e-12 { med } else { 1.0 };
    scales.iter().map(|&c| c * med).collect()
}

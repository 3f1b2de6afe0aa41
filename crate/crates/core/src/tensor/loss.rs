use super::{Real, Tensor4};
use crate::error::{Error, Result};

/// Mean softmax cross-entropy over the batch.
///
/// Each sample's `c * h * w` entries are treated as the class logits.
/// Returns the loss and `(softmax - onehot) / n` in the logits' shape.
pub fn softmax_xent<T: Real>(logits: &Tensor4<T>, labels: &[usize]) -> Result<(T, Tensor4<T>)> {
    let n = logits.dims()[0];
    let classes = logits.sample_len();
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let inv_n = T::one() / T::of(n as f64);
    let mut grad = Tensor4::zeros(logits.dims());
    let mut loss = T::zero();
    for (b, &label) in labels.iter().enumerate() {
        let row = logits.sample(b);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[label];
        let g = &mut grad.data_mut()[b * classes..(b + 1) * classes];
        for (gv, &v) in g.iter_mut().zip(row) {
            *gv = (v - log_z).exp() * inv_n;
        }
        g[label] -= inv_n;
    }
    Ok((loss * inv_n, grad))
}

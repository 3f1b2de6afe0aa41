use serde::{Deserialize, Serialize};

use super::{Real, Tensor4};
use crate::error::{invalid, shape_err, Result};

/// Pointwise nonlinearities. Every variant is 1-Lipschitz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
    /// Leaky ReLU with negative-side slope `alpha` in `[0, 1]`.
    Leaky(f64),
}

impl Activation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Activation::Leaky(alpha) if !(0.0..=1.0).contains(&alpha) => Err(invalid(format!(
                "leaky slope {alpha} outside [0, 1] is not non-expansive"
            ))),
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn apply<T: Real>(&self, v: T) -> T {
        match *self {
            Activation::Relu => v.max(T::zero()),
            Activation::Identity => v,
            Activation::Leaky(alpha) => {
                if v > T::zero() {
                    v
                } else {
                    v * T::of(alpha)
                }
            }
        }
    }

    /// Derivative at `v` (the subgradient 0 is used for ReLU at the kink).
    #[inline]
    pub fn derivative<T: Real>(&self, v: T) -> T {
        match *self {
            Activation::Relu => {
                if v > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Identity => T::one(),
            Activation::Leaky(alpha) => {
                if v > T::zero() {
                    T::one()
                } else {
                    T::of(alpha)
                }
            }
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            _ => {
                let alpha = s
                    .strip_prefix("leaky(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|a| a.trim().parse::<f64>().ok())
                    .ok_or_else(|| invalid(format!("unsupported activation '{s}'")))?;
                let act = Activation::Leaky(alpha);
                act.validate()?;
                Ok(act)
            }
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Activation::Relu => write!(f, "relu"),
            Activation::Identity => write!(f, "identity"),
            Activation::Leaky(a) => write!(f, "leaky({a})"),
        }
    }
}

/// `sigma(x + bias[c])` per channel.
pub fn sigma_b<T: Real>(x: &Tensor4<T>, bias: &[T], kind: Activation) -> Result<Tensor4<T>> {
    kind.validate()?;
    let [n, c, h, w] = x.dims();
    if bias.len() != c {
        return Err(shape_err(format!("bias length {} for {c} channels", bias.len())));
    }
    let mut y = x.clone();
    let hw = h * w;
    for b in 0..n {
        for (ch, &bv) in bias.iter().enumerate() {
            let start = (b * c + ch) * hw;
            for v in &mut y.data_mut()[start..start + hw] {
                *v = kind.apply(*v + bv);
            }
        }
    }
    Ok(y)
}

/// Given the input `x` fed to [`sigma_b`], returns `(dx, dbias)`.
pub fn sigma_b_backward<T: Real>(
    x: &Tensor4<T>,
    bias: &[T],
    kind: Activation,
    dy: &Tensor4<T>,
) -> Result<(Tensor4<T>, Vec<T>)> {
    let [n, c, h, w] = x.dims();
    if dy.dims() != x.dims() || bias.len() != c {
        return Err(shape_err("sigma_b backward shape mismatch"));
    }
    let hw = h * w;
    let mut dx = dy.clone();
    let mut db = vec![T::zero(); c];
    for b in 0..n {
        for (ch, &bv) in bias.iter().enumerate() {
            let start = (b * c + ch) * hw;
            let xs = &x.data()[start..start + hw];
            for (d, &xv) in dx.data_mut()[start..start + hw].iter_mut().zip(xs) {
                *d = *d * kind.derivative(xv + bv);
                db[ch] += *d;
            }
        }
    }
    Ok((dx, db))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_definition() {
        let x = Tensor4::new([1, 1, 1, 2], vec![-1.0, 2.0]).unwrap();
        let y = sigma_b(&x, &[0.0], Activation::Relu).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);
    }

    #[test]
    fn identity_adds_bias_exactly() {
        let x = Tensor4::new([1, 2, 1, 2], vec![0.1, -3.0, 7.5, 0.0]).unwrap();
        let y = sigma_b(&x, &[0.25, -1.5], Activation::Identity).unwrap();
        assert_eq!(y.data(), &[0.1 + 0.25, -3.0 + 0.25, 7.5 - 1.5, -1.5]);
    }

    #[test]
    fn every_kind_is_non_expansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kind in [
            Activation::Relu,
            Activation::Identity,
            Activation::Leaky(0.0),
            Activation::Leaky(0.1),
            Activation::Leaky(1.0),
        ] {
            for _ in 0..10_000 {
                let a: f64 = rng.random_range(-10.0..10.0);
                let b: f64 = rng.random_range(-10.0..10.0);
                assert!((kind.apply(a) - kind.apply(b)).abs() <= (a - b).abs());
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let x = Tensor4::<f64>::zeros([1, 2, 1, 1]);
        assert!(sigma_b(&x, &[0.0], Activation::Relu).is_err());
        assert!(sigma_b(&x, &[0.0, 0.0], Activation::Leaky(1.5)).is_err());
        assert!(Activation::parse("tanh").is_err());
        assert_eq!(Activation::parse("leaky(0.2)").unwrap(), Activation::Leaky(0.2));
    }
}

//! Convex loss catalog and the local-quadratic weights derived from it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default Huber tuning constant, in units of the residual scale.
pub const HUBER_TUNING: f64 = 1.345;

/// Huber threshold used to realize LAD, in units of the residual scale.
pub const LAD_HUBER_TUNING: f64 = 1e-4;

/// A convex loss `rho(|x|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Loss {
    /// `|x|^2`.
    Ls,
    /// `|x|`. `sigma_hat` is the residual scale used by the Huber realization.
    Lad { sigma_hat: f64 },
    /// Quadratic within `k`, linear beyond.
    Huber { k: f64 },
    /// `|x|^p`, `p` in `[1, 2]`.
    Lp { p: f64 },
    /// Check loss `q x+ + (1 - q) x-`.
    Quantile { q: f64 },
}

/// Loss family selector, as named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ls,
    Lad,
    Huber,
    Lp,
    Quantile,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Ls,
        LossKind::Lad,
        LossKind::Huber,
        LossKind::Lp,
        LossKind::Quantile,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Ls => "ls",
            LossKind::Lad => "lad",
            LossKind::Huber => "huber",
            LossKind::Lp => "lp",
            LossKind::Quantile => "quantile",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Validation(format!("unknown loss {s:?}")))
    }
}

impl Loss {
    pub fn huber(k: f64) -> Result<Self> {
        positive("Huber k", k)?;
        Ok(Loss::Huber { k })
    }

    /// Huber loss with `k = 1.345 * sigma_hat`.
    pub fn huber_scaled(sigma_hat: f64) -> Result<Self> {
        positive("residual scale", sigma_hat)?;
        Self::huber(HUBER_TUNING * sigma_hat)
    }

    pub fn lad(sigma_hat: f64) -> Result<Self> {
        positive("residual scale", sigma_hat)?;
        Ok(Loss::Lad { sigma_hat })
    }

    pub fn lp(p: f64) -> Result<Self> {
        if !(1.0..=2.0).contains(&p) {
            return Err(Error::Validation(format!("lp exponent {p} outside [1, 2]")));
        }
        Ok(Loss::Lp { p })
    }

    pub fn quantile(q: f64) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Validation(format!("quantile {q} outside (0, 1)")));
        }
        Ok(Loss::Quantile { q })
    }

    pub fn kind(&self) -> LossKind {
        match self {
            Loss::Ls => LossKind::Ls,
            Loss::Lad { .. } => LossKind::Lad,
            Loss::Huber { .. } => LossKind::Huber,
            Loss::Lp { .. } => LossKind::Lp,
            Loss::Quantile { .. } => LossKind::Quantile,
        }
    }

    /// `rho(|x|)`. The quantile loss is the only one that looks at the sign.
    pub fn value(&self, x: f64) -> f64 {
        let a = x.abs();
        match *self {
            Loss::Ls => a * a,
            Loss::Lad { .. } => a,
            Loss::Huber { k } => {
                if a <= k {
                    0.5 * a * a
                } else {
                    k * a - 0.5 * k * k
                }
            }
            Loss::Lp { p } => a.powf(p),
            Loss::Quantile { q } => {
                if x >= 0.0 {
                    q * x
                } else {
                    (q - 1.0) * x
                }
            }
        }
    }

    /// `rho'(|x|)`, with the a.e. derivative at kinks and 0 at the origin.
    ///
    /// LS returns `|x|`, the derivative of `x^2 / 2`; the factor of two is
    /// irrelevant to every minimizer built on it.
    pub fn derivative(&self, x: f64) -> f64 {
        let a = x.abs();
        match *self {
            Loss::Ls => a,
            Loss::Lad { .. } => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Loss::Huber { k } => a.min(k),
            Loss::Lp { p } => {
                if a > 0.0 {
                    p * a.powf(p - 1.0)
                } else {
                    0.0
                }
            }
            Loss::Quantile { q } => {
                if x > 0.0 {
                    q
                } else if x < 0.0 {
                    1.0 - q
                } else {
                    0.0
                }
            }
        }
    }

    /// Diagonal entry of the perturbed LQA matrix:
    /// `(|e| + varsigma) / max(rho'(|e|), varsigma)`.
    pub fn lqa_weight(&self, e: f64, varsigma: f64) -> f64 {
        (e.abs() + varsigma) / self.derivative(e).max(varsigma)
    }

    /// The Huber loss that stands in for LAD (`k = 1e-4 * sigma_hat`); other
    /// losses are returned unchanged.
    pub fn huber_realization(&self) -> Loss {
        match *self {
            Loss::Lad { sigma_hat } => Loss::Huber {
                k: LAD_HUBER_TUNING * sigma_hat,
            },
            other => other,
        }
    }
}

fn positive(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "{what} must be positive, got {v}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> Vec<Loss> {
        vec![
            Loss::Ls,
            Loss::lad(1.0).unwrap(),
            Loss::huber(1.345).unwrap(),
            Loss::huber(0.5).unwrap(),
            Loss::lp(1.0).unwrap(),
            Loss::lp(1.5).unwrap(),
            Loss::lp(2.0).unwrap(),
            Loss::quantile(0.5).unwrap(),
            Loss::quantile(0.2).unwrap(),
        ]
    }

    fn grid() -> impl Iterator<Item = f64> {
        (-400..=400).map(|i| i as f64 * 0.0125)
    }

    #[test]
    fn catalog_examples() {
        assert_eq!(Loss::huber(1.0).unwrap().value(3.0), 2.5);
        assert_eq!(Loss::Ls.value(2.0), 4.0);
        for loss in catalog() {
            assert_eq!(loss.value(0.0), 0.0);
        }
        assert_eq!(Loss::huber(1.345).unwrap().derivative(2.0), 1.345);
        assert_eq!(Loss::Ls.derivative(0.7), 0.7);
        assert_eq!(Loss::lad(1.0).unwrap().derivative(0.0), 0.0);
        assert_eq!(Loss::quantile(0.25).unwrap().value(-2.0), 1.5);
    }

    #[test]
    fn lqa_weight_examples() {
        let s = 1e-8;
        let w = Loss::Ls.lqa_weight(0.5, s);
        assert!((w - (1.0 + 2e-8)).abs() < 1e-15);
        assert_eq!(Loss::Ls.lqa_weight(0.0, s), 1.0);
        let w = Loss::huber(1.0).unwrap().lqa_weight(4.0, s);
        assert!((w - 4.000_000_01).abs() < 1e-12);
        for loss in catalog() {
            for e in grid().chain([0.0, 1e-300, -1e-12, 1e12]) {
                let w = loss.lqa_weight(e, s);
                assert!(w.is_finite() && w > 0.0, "{loss:?} at {e}: {w}");
            }
        }
    }

    #[test]
    fn even_nonnegative_convex() {
        for loss in catalog() {
            let symmetric = !matches!(loss, Loss::Quantile { q } if q != 0.5);
            let xs: Vec<f64> = grid().collect();
            for w in xs.windows(3) {
                let (a, b, c) = (loss.value(w[0]), loss.value(w[1]), loss.value(w[2]));
                assert!(b >= 0.0);
                assert!(a + c - 2.0 * b >= -1e-12, "{loss:?} not convex at {}", w[1]);
            }
            if symmetric {
                for x in grid() {
                    assert!((loss.value(x) - loss.value(-x)).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let delta = 1e-5;
        for loss in catalog() {
            // LS reports the derivative of x^2 / 2
            let scale = if loss == Loss::Ls { 0.5 } else { 1.0 };
            for x in grid() {
                let kink = match loss {
                    Loss::Huber { k } => (x.abs() - k).abs() < 2.0 * delta,
                    _ => false,
                };
                if x.abs() < 2.0 * delta || kink {
                    continue;
                }
                let fd = if x > 0.0 {
                    (loss.value(x + delta) - loss.value(x - delta)) / (2.0 * delta)
                } else {
                    -(loss.value(x + delta) - loss.value(x - delta)) / (2.0 * delta)
                };
                assert!(
                    (loss.derivative(x) - scale * fd).abs() <= 1e-6,
                    "{loss:?} at {x}: {} vs {}",
                    loss.derivative(x),
                    scale * fd
                );
            }
        }
    }

    #[test]
    fn derivative_monotone_and_bounded() {
        for loss in catalog() {
            let mut prev = 0.0;
            for i in 0..=400 {
                let d = loss.derivative(i as f64 * 0.0125);
                assert!(d >= prev - 1e-15);
                prev = d;
                if let Loss::Huber { k } = loss {
                    assert!(d <= k);
                }
            }
        }
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(Loss::huber(0.0).is_err());
        assert!(Loss::huber(f64::NAN).is_err());
        assert!(Loss::lp(2.5).is_err());
        assert!(Loss::lp(0.9).is_err());
        assert!(Loss::quantile(1.0).is_err());
        assert!(Loss::lad(0.0).is_err());
        assert_eq!("Huber".parse::<LossKind>().unwrap(), LossKind::Huber);
        assert!("tukey".parse::<LossKind>().is_err());
    }

    #[test]
    fn lad_realized_through_small_huber() {
        let lad = Loss::lad(2.0).unwrap();
        assert_eq!(lad.huber_realization(), Loss::Huber { k: 2e-4 });
        assert_eq!(Loss::Ls.huber_realization(), Loss::Ls);
    }
}

//! Base-forecast error covariance: the one-step estimate from in-sample
//! residuals, the five structural designs, and symmetric square roots.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;

/// One-step in-sample residuals, series by time.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPanel {
    data: DMatrix<f64>,
}

impl ResidualPanel {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.ncols() < 2 {
            return Err(Error::Validation(format!(
                "residual panel needs at least 2 time points, got {}",
                data.ncols()
            )));
        }
        if data.nrows() == 0 {
            return Err(Error::Validation("residual panel has no series".into()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let (i, t) = (pos % data.nrows(), pos / data.nrows());
            return Err(Error::NonFinite(format!(
                "residual of series {i} at time {t}"
            )));
        }
        Ok(Self { data })
    }

    pub fn n_series(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Root mean square of all residuals, pooled over series and time.
    pub fn pooled_scale(&self) -> f64 {
        (self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64).sqrt()
    }
}

/// Uncentered second-moment matrix `T^-1 sum_t e_t e_t'`.
pub fn estimate_w1(panel: &ResidualPanel) -> DMatrix<f64> {
    let e = panel.data();
    (e * e.transpose()) / panel.n_times() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CovarianceKind {
    Ols,
    WlsV,
    WlsS,
    Sample,
    Shrink,
}

impl CovarianceKind {
    pub const ALL: [CovarianceKind; 5] = [
        CovarianceKind::Ols,
        CovarianceKind::WlsV,
        CovarianceKind::WlsS,
        CovarianceKind::Sample,
        CovarianceKind::Shrink,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CovarianceKind::Ols => "ols",
            CovarianceKind::WlsV => "wlsv",
            CovarianceKind::WlsS => "wlss",
            CovarianceKind::Sample => "sample",
            CovarianceKind::Shrink => "shrink",
        }
    }

    /// Whether the design is built from the residual panel.
    pub fn needs_residuals(self) -> bool {
        !matches!(self, CovarianceKind::Ols | CovarianceKind::WlsS)
    }
}

impl fmt::Display for CovarianceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CovarianceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CovarianceKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Validation(format!("unknown covariance design {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceDesign {
    pub kind: CovarianceKind,
    /// Shrinkage intensity; estimated from the residuals when `None`.
    pub lambda: Option<f64>,
    pub k_h: f64,
}

impl CovarianceDesign {
    pub fn new(kind: CovarianceKind) -> Self {
        Self {
            kind,
            lambda: None,
            k_h: 1.0,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Some(lambda);
        self
    }

    pub fn with_k_h(mut self, k_h: f64) -> Self {
        self.k_h = k_h;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.k_h.is_finite() && self.k_h > 0.0) {
            return Err(Error::Validation(format!(
                "k_h must be positive, got {}",
                self.k_h
            )));
        }
        if let Some(l) = self.lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::Validation(format!(
                    "shrinkage lambda {l} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// A positive-definite covariance together with its symmetric square root
/// and the inverse of that root.
#[derive(Debug, Clone)]
pub struct CovMatrix {
    w: DMatrix<f64>,
    sqrt: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
    label: String,
}

impl CovMatrix {
    /// Wraps a symmetric positive-definite matrix; `what` names it in errors.
    pub fn new(w: DMatrix<f64>, what: &str) -> Result<Self> {
        let w = symmetrized(w, what)?;
        let (sqrt, inv_sqrt) = sqrt_named(&w, what)?;
        Ok(Self {
            w,
            sqrt,
            inv_sqrt,
            label: what.to_string(),
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    pub fn inv_sqrt(&self) -> &DMatrix<f64> {
        &self.inv_sqrt
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    /// Same matrix multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        let r = c.sqrt();
        Self {
            w: &self.w * c,
            sqrt: &self.sqrt * r,
            inv_sqrt: &self.inv_sqrt / r,
            label: self.label.clone(),
        }
    }
}

/// Realizes `W_h` for a design. `panel` may be `None` for designs that do
/// not use residuals.
pub fn realize_design(
    design: &CovarianceDesign,
    panel: Option<&ResidualPanel>,
    hierarchy: &Hierarchy,
) -> Result<CovMatrix> {
    design.validate()?;
    let n = hierarchy.n();
    let w1 = if design.kind.needs_residuals() {
        let panel = panel.ok_or_else(|| {
            Error::Validation(format!(
                "covariance design {} requires in-sample residuals",
                design.kind
            ))
        })?;
        if panel.n_series() != n {
            return Err(Error::dimension("residual panel rows", n, panel.n_series()));
        }
        Some(estimate_w1(panel))
    } else {
        None
    };
    let w = match design.kind {
        CovarianceKind::Ols => DMatrix::identity(n, n),
        CovarianceKind::WlsS => {
            let row_sums = hierarchy.summing().column_sum();
            DMatrix::from_diagonal(&row_sums)
        }
        CovarianceKind::WlsV => DMatrix::from_diagonal(&w1.unwrap().diagonal()),
        CovarianceKind::Sample => w1.unwrap(),
        CovarianceKind::Shrink => {
            let w1 = w1.unwrap();
            let lambda = match design.lambda {
                Some(l) => l,
                None => shrinkage_lambda(panel.unwrap())?,
            };
            shrink_towards_diagonal(&w1, lambda)
        }
    };
    CovMatrix::new(w * design.k_h, design.kind.as_str())
}

/// `lambda * diag(w) + (1 - lambda) * w`.
pub fn shrink_towards_diagonal(w: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let mut out = w * (1.0 - lambda);
    for i in 0..w.nrows() {
        out[(i, i)] = w[(i, i)];
    }
    out
}

/// Shrinkage intensity towards the diagonal target, computed from
/// scale-standardized residuals:
///
/// `lambda = sum_{i != j} Var(r_ij) / sum_{i != j} r_ij^2`, clamped to `[0, 1]`,
/// where `r_ij` are (uncentered) correlations and `Var(r_ij)` is the
/// empirical variance of the per-time products divided by `T`.
pub fn shrinkage_lambda(panel: &ResidualPanel) -> Result<f64> {
    let t = panel.n_times();
    if t < 3 {
        return Err(Error::Validation(format!(
            "shrinkage estimation needs at least 3 time points, got {t}"
        )));
    }
    let e = panel.data();
    let n = e.nrows();
    let tf = t as f64;

    let mut xs = e.clone();
    for i in 0..n {
        let scale = (e.row(i).iter().map(|v| v * v).sum::<f64>() / tf).sqrt();
        if scale == 0.0 {
            return Err(Error::DegenerateCorrelation(i));
        }
        xs.row_mut(i).scale_mut(1.0 / scale);
    }

    let mut var_sum = 0.0;
    let mut corr_sq_sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (mut s1, mut s2) = (0.0, 0.0);
            for k in 0..t {
                let w = xs[(i, k)] * xs[(j, k)];
                s1 += w;
                s2 += w * w;
            }
            let r = s1 / tf;
            var_sum += (s2 - s1 * s1 / tf) / (tf * (tf - 1.0));
            corr_sq_sum += r * r;
        }
    }
    if corr_sq_sum == 0.0 {
        return Ok(1.0);
    }
    Ok((var_sum / corr_sq_sum).clamp(0.0, 1.0))
}

/// Eigenvalue floor below which a matrix is treated as not positive definite.
pub fn eigenvalue_floor(largest: f64) -> f64 {
    1e-10 * largest.max(1.0)
}

/// Symmetric square root `W^{1/2}` and its inverse via the spectral
/// decomposition.
pub fn matrix_sqrt(w: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let w = symmetrized(w.clone(), "matrix")?;
    sqrt_named(&w, "matrix")
}

fn symmetrized(w: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if !w.is_square() {
        return Err(Error::dimension(
            format!("{what} shape"),
            "square",
            format!("{:?}", w.shape()),
        ));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    let scale = w.amax().max(1.0);
    let asym = (&w - w.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(Error::Validation(format!(
            "{what} is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok((&w + w.transpose()) * 0.5)
}

fn sqrt_named(w: &DMatrix<f64>, what: &str) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = w.nrows();
    if is_diagonal(w) {
        let d = w.diagonal();
        let largest = d.max();
        let smallest = d.min();
        let floor = eigenvalue_floor(largest);
        if smallest < floor {
            return Err(Error::NotPositiveDefinite {
                what: what.to_string(),
                min_eigenvalue: smallest,
                floor,
            });
        }
        let root = d.map(f64::sqrt);
        return Ok((
            DMatrix::from_diagonal(&root),
            DMatrix::from_diagonal(&root.map(|v| 1.0 / v)),
        ));
    }
    let eig = SymmetricEigen::new(w.clone());
    let largest = eig.eigenvalues.max();
    let smallest = eig.eigenvalues.min();
    let floor = eigenvalue_floor(largest);
    if smallest < floor {
        return Err(Error::NotPositiveDefinite {
            what: what.to_string(),
            min_eigenvalue: smallest,
            floor,
        });
    }
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    let mut scaled_inv = q.clone();
    for j in 0..n {
        let r = eig.eigenvalues[j].sqrt();
        scaled.column_mut(j).scale_mut(r);
        scaled_inv.column_mut(j).scale_mut(1.0 / r);
    }
    let sqrt = &scaled * q.transpose();
    let inv_sqrt = &scaled_inv * q.transpose();
    // exact symmetry
    Ok((
        (&sqrt + sqrt.transpose()) * 0.5,
        (&inv_sqrt + inv_sqrt.transpose()) * 0.5,
    ))
}

fn is_diagonal(w: &DMatrix<f64>) -> bool {
    let n = w.nrows();
    (0..n).all(|j| (0..n).all(|i| i == j || w[(i, j)] == 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::HierarchySpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_panel(n: usize, t: usize, seed: u64) -> ResidualPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ResidualPanel::new(DMatrix::from_fn(n, t, |_, _| rng.sample(StandardNormal))).unwrap()
    }

    fn two_group_tree() -> Hierarchy {
        Hierarchy::build(&HierarchySpec::from_group_sizes(&[2, 4]).unwrap()).unwrap()
    }

    #[test]
    fn w1_examples() {
        let panel = ResidualPanel::new(DMatrix::identity(4, 4)).unwrap();
        assert_eq!(estimate_w1(&panel), DMatrix::identity(4, 4) * 0.25);

        let panel = ResidualPanel::new(DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 2.0])).unwrap();
        assert_eq!(estimate_w1(&panel)[(0, 0)], 2.0);
    }

    #[test]
    fn w1_matches_double_loop() {
        let panel = random_panel(5, 40, 7);
        let w1 = estimate_w1(&panel);
        let e = panel.data();
        for i in 0..5 {
            for j in 0..5 {
                let mut acc = 0.0;
                for t in 0..40 {
                    acc += e[(i, t)] * e[(j, t)];
                }
                assert!((w1[(i, j)] - acc / 40.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn panel_validation() {
        assert!(ResidualPanel::new(DMatrix::zeros(3, 1)).is_err());
        let mut m = DMatrix::zeros(2, 4);
        m[(1, 2)] = f64::NAN;
        assert!(matches!(ResidualPanel::new(m), Err(Error::NonFinite(_))));
    }

    #[test]
    fn design_examples() {
        let h = two_group_tree();
        let panel = random_panel(9, 50, 3);
        let ols = realize_design(
            &CovarianceDesign::new(CovarianceKind::Ols),
            Some(&panel),
            &h,
        )
        .unwrap();
        assert_eq!(ols.w(), &DMatrix::identity(9, 9));

        let wlss = realize_design(&CovarianceDesign::new(CovarianceKind::WlsS), None, &h).unwrap();
        let expected = [6.0, 2.0, 4.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        for (i, v) in expected.iter().enumerate() {
            assert_eq!(wlss.w()[(i, i)], *v);
        }
        assert_eq!(wlss.w().iter().filter(|v| **v != 0.0).count(), 9);

        let wlsv = realize_design(
            &CovarianceDesign::new(CovarianceKind::WlsV),
            Some(&panel),
            &h,
        )
        .unwrap();
        let shrink1 = realize_design(
            &CovarianceDesign::new(CovarianceKind::Shrink).with_lambda(1.0),
            Some(&panel),
            &h,
        )
        .unwrap();
        assert_eq!(wlsv.w(), shrink1.w());

        let err = realize_design(&CovarianceDesign::new(CovarianceKind::WlsV), None, &h);
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn shrink_interpolates() {
        let h = two_group_tree();
        let panel = random_panel(9, 50, 4);
        let w1 = estimate_w1(&panel);
        for &lambda in &[0.0, 0.3, 0.75] {
            let d = CovarianceDesign::new(CovarianceKind::Shrink).with_lambda(lambda);
            let w = realize_design(&d, Some(&panel), &h).unwrap();
            for i in 0..9 {
                for j in 0..9 {
                    let expect = if i == j {
                        w1[(i, j)]
                    } else {
                        (1.0 - lambda) * w1[(i, j)]
                    };
                    assert!((w.w()[(i, j)] - expect).abs() <= 1e-15 * w1.amax());
                }
            }
        }
    }

    #[test]
    fn sample_design_rejects_singular_panel() {
        // T < n gives a rank-deficient second-moment matrix
        let h = two_group_tree();
        let panel = random_panel(9, 5, 5);
        let err = realize_design(
            &CovarianceDesign::new(CovarianceKind::Sample),
            Some(&panel),
            &h,
        );
        match err {
            Err(Error::NotPositiveDefinite { what, .. }) => assert_eq!(what, "sample"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sqrt_examples() {
        assert!(matrix_sqrt(&DMatrix::zeros(2, 2)).is_err());

        let (r, ri) = matrix_sqrt(&DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            4.0, 9.0,
        ])))
        .unwrap();
        assert_eq!(
            r,
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0]))
        );
        assert!((ri[(1, 1)] - 1.0 / 3.0).abs() < 1e-16);

        let (r, _) = matrix_sqrt(&DMatrix::identity(5, 5)).unwrap();
        assert_eq!(r, DMatrix::identity(5, 5));
    }

    #[test]
    fn sqrt_reconstructs_random_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = DMatrix::from_fn(6, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let w = &a * a.transpose() + DMatrix::identity(6, 6) * 0.1;
        let (r, ri) = matrix_sqrt(&w).unwrap();
        let rel = (&r * &r - &w).amax() / w.amax();
        assert!(rel < 1e-8, "{rel}");
        assert!((&r * &ri - DMatrix::identity(6, 6)).amax() < 1e-8);
        assert_eq!(r, r.transpose());
    }

    #[test]
    fn sqrt_rejects_indefinite_and_asymmetric() {
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            matrix_sqrt(&w),
            Err(Error::NotPositiveDefinite { .. })
        ));
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(matrix_sqrt(&w), Err(Error::Validation(_))));
    }

    #[test]
    fn lambda_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
        let mut m = DMatrix::zeros(2, 200);
        for t in 0..200 {
            m[(0, t)] = x[t];
            m[(1, t)] = 2.0 * x[t];
        }
        let l = shrinkage_lambda(&ResidualPanel::new(m).unwrap()).unwrap();
        assert!(l < 0.05, "{l}");

        let mut avg = 0.0;
        for seed in 0..100 {
            let l = shrinkage_lambda(&random_panel(10, 5, seed)).unwrap();
            assert!((0.0..=1.0).contains(&l));
            avg += l / 100.0;
        }
        assert!(avg > 0.5, "{avg}");

        let mut m = DMatrix::from_element(3, 10, 1.0);
        m.row_mut(1).fill(0.0);
        assert!(matches!(
            shrinkage_lambda(&ResidualPanel::new(m).unwrap()),
            Err(Error::DegenerateCorrelation(1))
        ));
    }
}

//! Instance generators and independent reference solvers shared by the
//! integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rome_core::covariance::{
    realize_design, CovMatrix, CovarianceDesign, CovarianceKind, ResidualPanel,
};
use rome_core::{Hierarchy, HierarchySpec, Loss};

/// Random two- or three-level hierarchy with at most `max_n` series.
pub fn random_hierarchy<R: Rng>(rng: &mut R, max_n: usize) -> Hierarchy {
    loop {
        let spec = if rng.random_bool(0.3) {
            HierarchySpec::star(rng.random_range(1..max_n)).unwrap()
        } else {
            let groups: Vec<usize> = (0..rng.random_range(1..=5))
                .map(|_| rng.random_range(1..=5))
                .collect();
            HierarchySpec::from_group_sizes(&groups).unwrap()
        };
        let h = Hierarchy::build(&spec).unwrap();
        if h.n() <= max_n {
            return h;
        }
    }
}

pub fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Residual panel with heterogeneous scales and some cross correlation.
pub fn random_panel<R: Rng>(rng: &mut R, n: usize, t: usize) -> ResidualPanel {
    let mix = gaussian_matrix(rng, n, n) * 0.3 + DMatrix::identity(n, n);
    let scales = DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0));
    let mut data = mix * gaussian_matrix(rng, n, t);
    for (i, mut row) in data.row_iter_mut().enumerate() {
        row *= scales[i];
    }
    ResidualPanel::new(data).unwrap()
}

pub fn all_covs(h: &Hierarchy, panel: &ResidualPanel) -> Vec<CovMatrix> {
    CovarianceKind::ALL
        .into_iter()
        .map(|k| realize_design(&CovarianceDesign::new(k), Some(panel), h).unwrap())
        .collect()
}

/// `(S' W^{-1} S)^{-1} S' W^{-1}`, evaluated as `A^+ L^{-1}` with `W = L L'`
/// and `A = L^{-1} S`; the QR route avoids squaring the condition number.
pub fn gls_gmatrix(h: &Hierarchy, cov: &CovMatrix) -> DMatrix<f64> {
    let n = h.n();
    let l = cov.w().clone().cholesky().unwrap().unpack();
    let l_inv = l.solve_lower_triangular(&DMatrix::identity(n, n)).unwrap();
    let qr = (&l_inv * h.summing()).qr();
    let r = qr.r();
    r.solve_upper_triangular(&(qr.q().transpose() * l_inv))
        .unwrap()
}

/// Minimizer of `(y - yhat)' W^{-1} (y - yhat)` subject to `C y = 0`,
/// from the full KKT system.
pub fn kkt_solution(h: &Hierarchy, cov: &CovMatrix, yhat: &DVector<f64>) -> DVector<f64> {
    let n = h.n();
    let m = h.n_aggregate();
    let w_inv = cov.w().clone().try_inverse().unwrap();
    let c = h.constraint();
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(&(&w_inv * 2.0));
    kkt.view_mut((0, n), (n, m)).copy_from(&c.transpose());
    kkt.view_mut((n, 0), (m, n)).copy_from(c);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(w_inv * yhat * 2.0));
    let sol = kkt.lu().solve(&rhs).unwrap();
    sol.rows(0, n).into_owned()
}

/// Best objective `sum_i rho(y*_i - yhat*_i)` found by projected
/// subgradient descent over `{y* : U' W^{1/2} y* = 0}` with normalized,
/// geometrically decaying steps. The projector comes from an orthonormal
/// basis of `range(W^{1/2} U)`.
pub fn subgradient_oracle(
    h: &Hierarchy,
    cov: &CovMatrix,
    loss: &Loss,
    yhat: &DVector<f64>,
    iterations: usize,
) -> f64 {
    let n = h.n();
    let target = cov.inv_sqrt() * yhat;
    let a = cov.sqrt() * h.constraint().transpose();
    let q = a.qr().q();
    let proj = DMatrix::identity(n, n) - &q * q.transpose();
    let objective = |x: &DVector<f64>| -> f64 {
        x.iter()
            .zip(target.iter())
            .map(|(xi, ti)| loss.value(xi - ti))
            .sum()
    };
    let mut x = &proj * &target;
    let mut best = objective(&x);
    let start = 1.0f64.max(target.amax());
    let decay = (1e-10 / start).powf(1.0 / iterations as f64);
    let mut step = start;
    let mut g = DVector::zeros(n);
    for _ in 0..iterations {
        for i in 0..n {
            let d = x[i] - target[i];
            g[i] = loss.derivative(d) * d.signum();
        }
        let pg = &proj * &g;
        let norm = pg.norm();
        // a vanishing projected subgradient certifies optimality
        if norm <= 1e-12 * g.norm().max(1.0) {
            break;
        }
        x.axpy(-step / norm, &pg, 1.0);
        step *= decay;
        // re-project so rounding in the steps cannot accumulate off the subspace
        x = &proj * &x;
        best = best.min(objective(&x));
    }
    best
}

/// Spearman rank correlation (no ties expected).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
        let mut r = vec![0.0; v.len()];
        for (rank, i) in idx.into_iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mean = (n - 1.0) / 2.0;
    let cov: f64 = rx
        .iter()
        .zip(&ry)
        .map(|(a, b)| (a - mean) * (b - mean))
        .sum();
    let var: f64 = rx.iter().map(|a| (a - mean).powi(2)).sum();
    cov / var
}

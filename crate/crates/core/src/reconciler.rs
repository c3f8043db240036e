//! Coherent reconciliation of base forecasts.
//!
//! Bottom-up, closed-form minimum trace (MinT), and robust M-estimation
//! (RoME) solved by a perturbed local quadratic approximation: every step
//! replaces the loss by a weighted quadratic at the current deviations and
//! solves the resulting equality-constrained weighted least squares problem
//! in closed form. Horizons are reconciled independently with the same `W`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{CovMatrix, ResidualPanel};
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::loss::Loss;

/// Base forecasts (series x horizon) with the in-sample residuals they came
/// with.
#[derive(Debug, Clone)]
pub struct BaseForecastSet {
    forecasts: DMatrix<f64>,
    residuals: Option<ResidualPanel>,
}

impl BaseForecastSet {
    pub fn new(forecasts: DMatrix<f64>, residuals: Option<ResidualPanel>) -> Result<Self> {
        if forecasts.ncols() == 0 {
            return Err(Error::Validation("base forecasts have no horizons".into()));
        }
        if let Some(pos) = forecasts.iter().position(|v| !v.is_finite()) {
            let (i, h) = (pos % forecasts.nrows(), pos / forecasts.nrows());
            return Err(Error::NonFinite(format!(
                "base forecast of series {i} at horizon {}",
                h + 1
            )));
        }
        if let Some(r) = &residuals {
            if r.n_series() != forecasts.nrows() {
                return Err(Error::dimension(
                    "residual panel rows",
                    forecasts.nrows(),
                    r.n_series(),
                ));
            }
        }
        Ok(Self {
            forecasts,
            residuals,
        })
    }

    pub fn forecasts(&self) -> &DMatrix<f64> {
        &self.forecasts
    }

    pub fn residuals(&self) -> Option<&ResidualPanel> {
        self.residuals.as_ref()
    }

    pub fn n_series(&self) -> usize {
        self.forecasts.nrows()
    }

    pub fn horizons(&self) -> usize {
        self.forecasts.ncols()
    }

    fn check(&self, h: &Hierarchy) -> Result<()> {
        if self.n_series() != h.n() {
            return Err(Error::dimension(
                "base forecast rows",
                h.n(),
                self.n_series(),
            ));
        }
        Ok(())
    }
}

/// How LAD is realized inside the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LadMode {
    /// Huber loss with `k = 1e-4 * sigma_hat`.
    #[default]
    HuberApprox,
    /// Exact LAD derivative with a constant added to every LQA entry.
    Perturbation,
}

impl FromStr for LadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "huber-approx" | "huber" => Ok(LadMode::HuberApprox),
            "perturbation" => Ok(LadMode::Perturbation),
            _ => Err(Error::Validation(format!("unknown LAD mode {s:?}"))),
        }
    }
}

/// Starting point of the iteration.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Init {
    #[default]
    Zero,
    /// The MinT solution under the same `W`.
    Mint,
    /// A user-supplied coherent vector, used for every horizon.
    Given(DVector<f64>),
}

#[derive(Debug, Clone)]
pub struct ReconcilerConfig {
    pub varsigma: f64,
    pub epsilon: f64,
    pub omega_max: usize,
    pub init: Init,
    pub lad_mode: LadMode,
    /// Added to each LQA entry in [`LadMode::Perturbation`].
    pub lad_perturbation: f64,
    /// Keep the final reconciliation matrix of every horizon.
    pub record_gmatrix: bool,
}

impl Default for ReconcilerConfig {
    fn default() -> Self {
        Self {
            varsigma: 1e-8,
            epsilon: 1e-4,
            omega_max: 1000,
            init: Init::Zero,
            lad_mode: LadMode::HuberApprox,
            lad_perturbation: 1e-8,
            record_gmatrix: false,
        }
    }
}

impl ReconcilerConfig {
    fn validate(&self, h: &Hierarchy) -> Result<()> {
        if !(self.varsigma > 0.0 && self.varsigma.is_finite()) {
            return Err(Error::Validation(format!(
                "varsigma must be positive, got {}",
                self.varsigma
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Validation(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.omega_max == 0 {
            return Err(Error::Validation("omega_max must be at least 1".into()));
        }
        if !(self.lad_perturbation >= 0.0 && self.lad_perturbation.is_finite()) {
            return Err(Error::Validation(
                "LAD perturbation must be non-negative".into(),
            ));
        }
        if let Init::Given(v) = &self.init {
            if v.len() != h.n() {
                return Err(Error::dimension("initial vector", h.n(), v.len()));
            }
            let tol = 1e-8 * (1.0 + v.amax());
            if h.coherence_residual(v.as_slice()) > tol {
                return Err(Error::Validation("initial vector is not coherent".into()));
            }
        }
        Ok(())
    }
}

/// Reconciled forecasts and per-horizon diagnostics.
#[derive(Debug, Clone)]
pub struct ReconcileResult {
    /// Series x horizon.
    pub reconciled: DMatrix<f64>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
    /// Final loss `sum_i rho(|e*_i|)` on the standardized scale; NaN where
    /// the method has no objective (combinations).
    pub objective: Vec<f64>,
    /// Objective of the realized loss at every iterate, starting from the
    /// initial value.
    pub traces: Vec<Vec<f64>>,
    /// Final reconciliation matrix per horizon, when available.
    pub gmatrices: Option<Vec<DMatrix<f64>>>,
}

impl ReconcileResult {
    pub fn horizons(&self) -> usize {
        self.reconciled.ncols()
    }

    /// Largest `||C y||_inf / (1 + ||y||_inf)` over horizons.
    pub fn coherence_violation(&self, h: &Hierarchy) -> f64 {
        self.reconciled
            .column_iter()
            .map(|col| {
                let y: Vec<f64> = col.iter().copied().collect();
                h.coherence_residual(&y) / (1.0 + col.amax())
            })
            .fold(0.0, f64::max)
    }
}

/// Bottom-up: keep the bottom base forecasts and aggregate them.
pub fn reconcile_bottom_up(base: &BaseForecastSet, h: &Hierarchy) -> Result<ReconcileResult> {
    base.check(h)?;
    let g = h.selector().clone();
    let reconciled = h.summing() * (&g * base.forecasts());
    let horizons = base.horizons();
    let objective = (0..horizons)
        .map(|k| {
            (reconciled.column(k) - base.forecasts().column(k))
                .iter()
                .map(|v| v * v)
                .sum()
        })
        .collect();
    Ok(ReconcileResult {
        reconciled,
        iterations: vec![1; horizons],
        converged: vec![true; horizons],
        objective,
        traces: vec![Vec::new(); horizons],
        gmatrices: Some(vec![g; horizons]),
    })
}

/// MinT reconciliation matrix `G = J - J W U (U' W U)^{-1} U'`, with
/// `U' = (I, -S0)`.
pub fn mint_gmatrix(h: &Hierarchy, cov: &CovMatrix) -> Result<DMatrix<f64>> {
    if cov.dim() != h.n() {
        return Err(Error::dimension("covariance dimension", h.n(), cov.dim()));
    }
    let c = h.constraint();
    let wct = cov.w() * c.transpose();
    let inner = c * &wct;
    let chol = inner
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("U'WU for the {} covariance", cov.label())))?;
    let correction = chol.solve(c);
    let j = h.selector();
    Ok(j - j * wct * correction)
}

pub fn reconcile_mint(
    base: &BaseForecastSet,
    h: &Hierarchy,
    cov: &CovMatrix,
) -> Result<ReconcileResult> {
    base.check(h)?;
    let g = mint_gmatrix(h, cov)?;
    let reconciled = h.summing() * (&g * base.forecasts());
    let horizons = base.horizons();
    let objective = (0..horizons)
        .map(|k| {
            let e = cov.inv_sqrt() * (reconciled.column(k) - base.forecasts().column(k));
            e.iter().map(|v| Loss::Ls.value(*v)).sum()
        })
        .collect();
    Ok(ReconcileResult {
        reconciled,
        iterations: vec![1; horizons],
        converged: vec![true; horizons],
        objective,
        traces: vec![Vec::new(); horizons],
        gmatrices: Some(vec![g; horizons]),
    })
}

/// Working pieces shared by all horizons of one RoME run.
struct Lqa<'a> {
    h: &'a Hierarchy,
    cov: &'a CovMatrix,
    /// `W^{1/2} U`, n x m*.
    a: DMatrix<f64>,
    /// Loss whose LQA weights drive the iteration.
    working: Loss,
    /// Loss reported as the objective.
    reported: Loss,
    extra: f64,
    varsigma: f64,
}

struct Step {
    y: DVector<f64>,
    d: DVector<f64>,
    inner: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl<'a> Lqa<'a> {
    fn new(h: &'a Hierarchy, cov: &'a CovMatrix, loss: &Loss, cfg: &ReconcilerConfig) -> Self {
        let (working, extra) = match (loss, cfg.lad_mode) {
            (Loss::Lad { .. }, LadMode::Perturbation) => (*loss, cfg.lad_perturbation),
            _ => (loss.huber_realization(), 0.0),
        };
        Self {
            h,
            cov,
            a: cov.sqrt() * h.constraint().transpose(),
            working,
            reported: *loss,
            extra,
            varsigma: cfg.varsigma,
        }
    }

    fn standardized(&self, y: &DVector<f64>, yhat: &DVector<f64>) -> DVector<f64> {
        self.cov.inv_sqrt() * (y - yhat)
    }

    fn weights(&self, e: &DVector<f64>) -> DVector<f64> {
        e.map(|v| self.working.lqa_weight(v, self.varsigma) + self.extra)
    }

    /// One weighted projection of `yhat` onto the coherent subspace.
    fn step(&self, yhat: &DVector<f64>, e: &DVector<f64>) -> Result<Step> {
        let d = self.weights(e);
        let mut da = self.a.clone();
        for (i, mut row) in da.row_iter_mut().enumerate() {
            row *= d[i];
        }
        let inner = self.a.transpose() * &da;
        let chol = inner.cholesky().ok_or_else(|| {
            Error::Singular(format!(
                "U'W^(1/2) D W^(1/2) U in the LQA step ({} covariance)",
                self.cov.label()
            ))
        })?;
        let lambda = chol.solve(&(self.h.constraint() * yhat));
        let y = yhat - self.cov.sqrt() * (da * lambda);
        Ok(Step { y, d, inner: chol })
    }

    /// `G = J (I - W^{1/2} D W^{1/2} U (U'W^{1/2} D W^{1/2} U)^{-1} U')`.
    fn gmatrix(&self, step: &Step) -> DMatrix<f64> {
        let mut da = self.a.clone();
        for (i, mut row) in da.row_iter_mut().enumerate() {
            row *= step.d[i];
        }
        let correction = step.inner.solve(self.h.constraint());
        let n = self.h.n();
        let p = DMatrix::identity(n, n) - self.cov.sqrt() * da * correction;
        self.h.selector() * p
    }

    fn objective(&self, loss: &Loss, e: &DVector<f64>) -> f64 {
        e.iter().map(|v| loss.value(*v)).sum()
    }
}

struct HorizonOutcome {
    y: DVector<f64>,
    iterations: usize,
    converged: bool,
    objective: f64,
    trace: Vec<f64>,
    g: Option<DMatrix<f64>>,
}

fn rome_horizon(
    lqa: &Lqa<'_>,
    yhat: &DVector<f64>,
    init: DVector<f64>,
    cfg: &ReconcilerConfig,
) -> Result<HorizonOutcome> {
    let mut y = init;
    let mut e = lqa.standardized(&y, yhat);
    let mut trace = vec![lqa.objective(&lqa.working, &e)];
    let mut last = None;
    let mut converged = false;
    let mut iterations = 0;
    for omega in 1..=cfg.omega_max {
        let step = lqa.step(yhat, &e)?;
        let change = (&step.y - &y).amax();
        y.copy_from(&step.y);
        e = lqa.standardized(&y, yhat);
        trace.push(lqa.objective(&lqa.working, &e));
        last = Some(step);
        iterations = omega;
        if change < cfg.epsilon {
            converged = true;
            break;
        }
    }
    let g = match (cfg.record_gmatrix, &last) {
        (true, Some(step)) => Some(lqa.gmatrix(step)),
        _ => None,
    };
    Ok(HorizonOutcome {
        objective: lqa.objective(&lqa.reported, &e),
        y,
        iterations,
        converged,
        trace,
        g,
    })
}

/// Robust reconciliation by M-estimation, one LQA iteration per horizon.
///
/// Non-convergence within `omega_max` is reported through
/// [`ReconcileResult::converged`], not as an error.
pub fn reconcile_rome(
    base: &BaseForecastSet,
    h: &Hierarchy,
    cov: &CovMatrix,
    loss: &Loss,
    cfg: &ReconcilerConfig,
) -> Result<ReconcileResult> {
    base.check(h)?;
    cfg.validate(h)?;
    if cov.dim() != h.n() {
        return Err(Error::dimension("covariance dimension", h.n(), cov.dim()));
    }
    let lqa = Lqa::new(h, cov, loss, cfg);
    let mint = match cfg.init {
        Init::Mint => Some(mint_gmatrix(h, cov)?),
        _ => None,
    };
    let horizons = base.horizons();
    let outcomes: Vec<HorizonOutcome> = (0..horizons)
        .map(|k| {
            let yhat: DVector<f64> = base.forecasts().column(k).into_owned();
            let init = match &cfg.init {
                Init::Zero => DVector::zeros(h.n()),
                Init::Mint => h.summing() * (mint.as_ref().unwrap() * &yhat),
                Init::Given(v) => v.clone(),
            };
            rome_horizon(&lqa, &yhat, init, cfg)
        })
        .collect::<Result<_>>()?;

    let mut reconciled = DMatrix::zeros(h.n(), horizons);
    for (k, o) in outcomes.iter().enumerate() {
        reconciled.set_column(k, &o.y);
    }
    let gmatrices = if cfg.record_gmatrix {
        Some(outcomes.iter().map(|o| o.g.clone().unwrap()).collect())
    } else {
        None
    };
    Ok(ReconcileResult {
        reconciled,
        iterations: outcomes.iter().map(|o| o.iterations).collect(),
        converged: outcomes.iter().map(|o| o.converged).collect(),
        objective: outcomes.iter().map(|o| o.objective).collect(),
        traces: outcomes.into_iter().map(|o| o.trace).collect(),
        gmatrices,
    })
}

/// [`reconcile_rome`] with horizons solved in parallel.
pub fn reconcile_rome_par(
    base: &BaseForecastSet,
    h: &Hierarchy,
    cov: &CovMatrix,
    loss: &Loss,
    cfg: &ReconcilerConfig,
) -> Result<ReconcileResult> {
    let horizons = base.horizons();
    let parts: Vec<ReconcileResult> = (0..horizons)
        .into_par_iter()
        .map(|k| {
            let one = BaseForecastSet::new(base.forecasts().columns(k, 1).into_owned(), None)?;
            reconcile_rome(&one, h, cov, loss, cfg)
        })
        .collect::<Result<_>>()?;
    let mut reconciled = DMatrix::zeros(h.n(), horizons);
    for (k, p) in parts.iter().enumerate() {
        reconciled.set_column(k, &p.reconciled.column(0));
    }
    let gmatrices = cfg.record_gmatrix.then(|| {
        parts
            .iter()
            .map(|p| p.gmatrices.as_ref().unwrap()[0].clone())
            .collect()
    });
    Ok(ReconcileResult {
        reconciled,
        iterations: parts.iter().map(|p| p.iterations[0]).collect(),
        converged: parts.iter().map(|p| p.converged[0]).collect(),
        objective: parts.iter().map(|p| p.objective[0]).collect(),
        traces: parts.iter().map(|p| p.traces[0].clone()).collect(),
        gmatrices,
    })
}

/// One reconciliation-matrix update in trace-minimization form:
/// `G_next = (S' V^{-1} S)^{-1} S' V^{-1}` with
/// `V = W^{1/2} D W^{1/2}`, where `D` holds the LQA entries of the
/// standardized deviations `W^{-1/2} (S G_prev - I) yhat`.
///
/// Iterating this map from any unbiased `G` reproduces the RoME iterates.
pub fn rome_gmatrix_step(
    h: &Hierarchy,
    cov: &CovMatrix,
    loss: &Loss,
    g_prev: &DMatrix<f64>,
    yhat: &DVector<f64>,
    varsigma: f64,
) -> Result<DMatrix<f64>> {
    let n = h.n();
    if g_prev.shape() != (h.n_bottom(), n) {
        return Err(Error::dimension(
            "previous reconciliation matrix",
            format!("{}x{}", h.n_bottom(), n),
            format!("{}x{}", g_prev.nrows(), g_prev.ncols()),
        ));
    }
    if yhat.len() != n {
        return Err(Error::dimension("base forecast vector", n, yhat.len()));
    }
    let working = loss.huber_realization();
    let s = h.summing();
    let deviation = s * (g_prev * yhat) - yhat;
    let e = cov.inv_sqrt() * deviation;
    // V^{-1} = W^{-1/2} D^{-1} W^{-1/2}
    let mut scaled = cov.inv_sqrt().clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row /= working.lqa_weight(e[i], varsigma);
    }
    let v_inv = cov.inv_sqrt() * scaled;
    let st_vinv = s.transpose() * v_inv;
    let normal = &st_vinv * s;
    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::Singular("S'V^{-1}S in the trace-form update".into()))?;
    Ok(chol.solve(&st_vinv))
}

/// Weighting of LS and LAD reconciled forecasts across horizons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CombinationPattern {
    Average,
    OneWay,
    TwoWay,
}

impl CombinationPattern {
    pub const ALL: [CombinationPattern; 3] = [
        CombinationPattern::Average,
        CombinationPattern::OneWay,
        CombinationPattern::TwoWay,
    ];

    /// Weight on the LS forecast at 1-based horizon `h` of `horizons`.
    pub fn ls_weight(self, h: usize, horizons: usize) -> f64 {
        match self {
            CombinationPattern::Average => 0.5,
            CombinationPattern::OneWay => 1.0 / (h as f64 + 1.0),
            CombinationPattern::TwoWay => (horizons + 1 - h) as f64 / (horizons as f64 + 1.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CombinationPattern::Average => "average",
            CombinationPattern::OneWay => "one-way",
            CombinationPattern::TwoWay => "two-way",
        }
    }
}

impl fmt::Display for CombinationPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CombinationPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        CombinationPattern::ALL
            .into_iter()
            .find(|p| p.as_str() == norm || p.as_str().replace('-', "") == norm)
            .ok_or_else(|| Error::Validation(format!("unknown combination pattern {s:?}")))
    }
}

/// Horizon-wise convex combination of LS and LAD reconciled forecasts.
pub fn combine_forecasts(
    ls: &ReconcileResult,
    lad: &ReconcileResult,
    pattern: CombinationPattern,
) -> Result<ReconcileResult> {
    if ls.reconciled.shape() != lad.reconciled.shape() {
        return Err(Error::dimension(
            "combined forecasts",
            format!("{:?}", ls.reconciled.shape()),
            format!("{:?}", lad.reconciled.shape()),
        ));
    }
    let horizons = ls.horizons();
    let mut reconciled = DMatrix::zeros(ls.reconciled.nrows(), horizons);
    for k in 0..horizons {
        let w = pattern.ls_weight(k + 1, horizons);
        reconciled.set_column(
            k,
            &(ls.reconciled.column(k) * w + lad.reconciled.column(k) * (1.0 - w)),
        );
    }
    Ok(ReconcileResult {
        reconciled,
        iterations: ls
            .iterations
            .iter()
            .zip(&lad.iterations)
            .map(|(a, b)| *a.max(b))
            .collect(),
        converged: ls
            .converged
            .iter()
            .zip(&lad.converged)
            .map(|(a, b)| *a && *b)
            .collect(),
        objective: vec![f64::NAN; horizons],
        traces: vec![Vec::new(); horizons],
        gmatrices: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{CovarianceDesign, CovarianceKind};
    use crate::hierarchy::HierarchySpec;

    fn two_node() -> Hierarchy {
        Hierarchy::build(&HierarchySpec::star(1).unwrap()).unwrap()
    }

    fn two_group_tree() -> Hierarchy {
        Hierarchy::build(&HierarchySpec::from_group_sizes(&[2, 4]).unwrap()).unwrap()
    }

    fn ols(h: &Hierarchy) -> CovMatrix {
        crate::covariance::realize_design(&CovarianceDesign::new(CovarianceKind::Ols), None, h)
            .unwrap()
    }

    fn single(y: &[f64]) -> BaseForecastSet {
        BaseForecastSet::new(DMatrix::from_column_slice(y.len(), 1, y), None).unwrap()
    }

    #[test]
    fn bottom_up_examples() {
        let h = two_group_tree();
        let r = reconcile_bottom_up(&single(&[9., 9., 9., 1., 1., 1., 1., 1., 1.]), &h).unwrap();
        assert_eq!(
            r.reconciled.as_slice(),
            &[6., 2., 4., 1., 1., 1., 1., 1., 1.]
        );

        let h = two_node();
        let r = reconcile_bottom_up(&single(&[5., 3.]), &h).unwrap();
        assert_eq!(r.reconciled.as_slice(), &[3., 3.]);

        let h = two_group_tree();
        let coherent = h.summing() * DVector::from_vec(vec![1., -2., 3., 0.5, 7., 2.]);
        let r = reconcile_bottom_up(&single(coherent.as_slice()), &h).unwrap();
        assert_eq!(r.reconciled.column(0), coherent);
    }

    #[test]
    fn mint_two_node_is_average() {
        let h = two_node();
        let g = mint_gmatrix(&h, &ols(&h)).unwrap();
        assert!((g[(0, 0)] - 0.5).abs() < 1e-15 && (g[(0, 1)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mint_fixes_coherent_points_and_is_unbiased() {
        let h = two_group_tree();
        let cov = ols(&h);
        let g = mint_gmatrix(&h, &cov).unwrap();
        assert!((&g * h.summing() - DMatrix::identity(6, 6)).amax() < 1e-12);
        let coherent = h.summing() * DVector::from_vec(vec![1., -2., 3., 0.5, 7., 2.]);
        let r = reconcile_mint(&single(coherent.as_slice()), &h, &cov).unwrap();
        assert!((r.reconciled.column(0) - coherent).amax() < 1e-10);
    }

    #[test]
    fn rome_on_coherent_input_returns_it() {
        let h = two_group_tree();
        let cov = ols(&h);
        let coherent = h.summing() * DVector::from_vec(vec![1., -2., 3., 0.5, 7., 2.]);
        for loss in [Loss::Ls, Loss::huber(1.0).unwrap(), Loss::lad(1.0).unwrap()] {
            let r = reconcile_rome(
                &single(coherent.as_slice()),
                &h,
                &cov,
                &loss,
                &ReconcilerConfig::default(),
            )
            .unwrap();
            assert!((r.reconciled.column(0) - &coherent).amax() < 1e-10);
            assert!(r.converged[0]);
            assert!(r.iterations[0] <= 2);
        }
    }

    #[test]
    fn rome_ls_matches_mint_quickly() {
        let h = two_group_tree();
        let cov = ols(&h);
        let base = single(&[10.0, 3.0, 8.0, 1.0, 2.5, 2.0, 1.0, 3.0, 0.5]);
        let mint = reconcile_mint(&base, &h, &cov).unwrap();
        let rome =
            reconcile_rome(&base, &h, &cov, &Loss::Ls, &ReconcilerConfig::default()).unwrap();
        assert!((&mint.reconciled - &rome.reconciled).amax() < 1e-6);
        assert!(rome.iterations[0] <= 2);
    }

    #[test]
    fn non_convergence_is_reported() {
        let h = two_group_tree();
        let cov = ols(&h);
        let base = single(&[10.0, 3.0, 8.0, 1.0, 2.5, 2.0, 1.0, 3.0, 0.5]);
        let cfg = ReconcilerConfig {
            omega_max: 1,
            ..Default::default()
        };
        let r = reconcile_rome(&base, &h, &cov, &Loss::lad(1.0).unwrap(), &cfg).unwrap();
        assert_eq!(r.iterations, vec![1]);
        assert_eq!(r.converged, vec![false]);
        assert!(r.coherence_violation(&h) < 1e-12);
    }

    #[test]
    fn config_validation() {
        let h = two_group_tree();
        let cov = ols(&h);
        let base = single(&[1.0; 9]);
        let bad = [
            ReconcilerConfig {
                varsigma: 0.0,
                ..Default::default()
            },
            ReconcilerConfig {
                epsilon: -1.0,
                ..Default::default()
            },
            ReconcilerConfig {
                omega_max: 0,
                ..Default::default()
            },
            ReconcilerConfig {
                init: Init::Given(DVector::from_element(9, 1.0)),
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(
                reconcile_rome(&base, &h, &cov, &Loss::Ls, &cfg),
                Err(Error::Validation(_))
            ));
        }
        let wrong = single(&[1.0; 4]);
        assert!(matches!(
            reconcile_rome(&wrong, &h, &cov, &Loss::Ls, &ReconcilerConfig::default()),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn combination_weights() {
        use CombinationPattern::*;
        assert_eq!(OneWay.ls_weight(1, 12), 0.5);
        assert_eq!(TwoWay.ls_weight(12, 12), 1.0 / 13.0);
        assert_eq!(TwoWay.ls_weight(1, 12), 12.0 / 13.0);
        assert_eq!(Average.ls_weight(7, 12), 0.5);
        assert_eq!(OneWay.ls_weight(12, 12), 1.0 / 13.0);
        assert_eq!("one-way".parse::<CombinationPattern>().unwrap(), OneWay);
        assert_eq!("TwoWay".parse::<CombinationPattern>().unwrap(), TwoWay);
    }

    #[test]
    fn combination_of_identical_inputs_is_identity() {
        let h = two_group_tree();
        let cov = ols(&h);
        let base = BaseForecastSet::new(
            DMatrix::from_fn(9, 4, |i, k| (i * 3 + k) as f64 * 0.7 - 2.0),
            None,
        )
        .unwrap();
        let r = reconcile_mint(&base, &h, &cov).unwrap();
        for p in CombinationPattern::ALL {
            let c = combine_forecasts(&r, &r, p).unwrap();
            assert!((&c.reconciled - &r.reconciled).amax() < 1e-14);
        }
        let short = reconcile_mint(
            &BaseForecastSet::new(base.forecasts().columns(0, 2).into_owned(), None).unwrap(),
            &h,
            &cov,
        )
        .unwrap();
        assert!(combine_forecasts(&r, &short, CombinationPattern::Average).is_err());
    }
}

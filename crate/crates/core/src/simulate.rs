//! Synthetic hierarchical panels from independent AR(1) bottom series and
//! the Monte Carlo experiments run on them.
//!
//! Every replication draws from its own ChaCha8 stream keyed by
//! `(seed, replication)`, so reports do not depend on thread scheduling.

use std::fmt;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{
    realize_design, CovMatrix, CovarianceDesign, CovarianceKind, ResidualPanel,
};
use crate::error::{Error, Result};
use crate::evaluate::{pct_change, rmse, standard_groups, SeriesGroup};
use crate::hierarchy::{Hierarchy, HierarchySpec};
use crate::loss::{Loss, LossKind};
use crate::reconciler::{
    combine_forecasts, reconcile_bottom_up, reconcile_mint, reconcile_rome, BaseForecastSet,
    CombinationPattern, LadMode, ReconcileResult, ReconcilerConfig,
};

pub const BURN_IN: usize = 200;
pub const T_TOTAL: usize = 192;
pub const T_TRAIN: usize = 180;
pub const HORIZON: usize = 12;

/// Magnitude at which a fitted AR coefficient is clamped.
pub const AR_CLAMP: f64 = 0.999;

/// Error distribution of one bottom series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorDist {
    Gaussian,
    /// `0.9 N(0, 1) + 0.1 N(0, 9)`.
    MixtureNormal,
    /// Student t with 3 degrees of freedom.
    StudentT,
    /// Standard Cauchy.
    Cauchy,
}

impl ErrorDist {
    pub const NON_GAUSSIAN: [ErrorDist; 3] = [
        ErrorDist::MixtureNormal,
        ErrorDist::StudentT,
        ErrorDist::Cauchy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorDist::Gaussian => "gaussian",
            ErrorDist::MixtureNormal => "mixture-normal",
            ErrorDist::StudentT => "student-t",
            ErrorDist::Cauchy => "cauchy",
        }
    }

    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            ErrorDist::Gaussian => rng.sample(StandardNormal),
            ErrorDist::MixtureNormal => {
                let z: f64 = rng.sample(StandardNormal);
                if rng.random::<f64>() < 0.1 {
                    3.0 * z
                } else {
                    z
                }
            }
            ErrorDist::StudentT => StudentT::new(3.0).unwrap().sample(rng),
            ErrorDist::Cauchy => Cauchy::new(0.0, 1.0).unwrap().sample(rng),
        }
    }
}

impl fmt::Display for ErrorDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        match norm.as_str() {
            "gaussian" | "normal" => Ok(ErrorDist::Gaussian),
            "mixture-normal" | "mixture" => Ok(ErrorDist::MixtureNormal),
            "student-t" | "t" => Ok(ErrorDist::StudentT),
            "cauchy" => Ok(ErrorDist::Cauchy),
            _ => Err(Error::Validation(format!(
                "unknown error distribution {s:?}"
            ))),
        }
    }
}

/// Data-generating process for one panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub hierarchy: HierarchySpec,
    /// AR coefficient per bottom series, in bottom order.
    pub alpha: Vec<f64>,
    pub sigma: Vec<f64>,
    pub errors: Vec<ErrorDist>,
    /// Gaussian errors of bottom series `i` and `j` have correlation
    /// `corr_rho^|i - j|`.
    pub corr_rho: f64,
    pub t_total: usize,
    pub t_train: usize,
    pub horizon: usize,
    pub burn_in: usize,
}

impl ScenarioSpec {
    /// Identical bottom series with the standard sample sizes.
    pub fn uniform(hierarchy: HierarchySpec, alpha: f64, sigma: f64, corr_rho: f64) -> Self {
        let nb = hierarchy.bottom_order.len();
        Self {
            hierarchy,
            alpha: vec![alpha; nb],
            sigma: vec![sigma; nb],
            errors: vec![ErrorDist::Gaussian; nb],
            corr_rho,
            t_total: T_TOTAL,
            t_train: T_TRAIN,
            horizon: HORIZON,
            burn_in: BURN_IN,
        }
    }

    pub fn validate(&self, h: &Hierarchy) -> Result<()> {
        let nb = h.n_bottom();
        for (what, len) in [
            ("alpha", self.alpha.len()),
            ("sigma", self.sigma.len()),
            ("error assignment", self.errors.len()),
        ] {
            if len != nb {
                return Err(Error::dimension(what, nb, len));
            }
        }
        if let Some(a) = self.alpha.iter().find(|a| a.is_nan() || a.abs() >= 1.0) {
            return Err(Error::Validation(format!(
                "AR coefficient {a} is not stationary"
            )));
        }
        if let Some(s) = self.sigma.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(Error::Validation(format!("sigma {s} must be non-negative")));
        }
        if !(0.0..1.0).contains(&self.corr_rho) {
            return Err(Error::Validation(format!(
                "correlation base {} outside [0, 1)",
                self.corr_rho
            )));
        }
        if self.t_train + self.horizon != self.t_total || self.horizon == 0 {
            return Err(Error::Validation(format!(
                "train length {} plus horizon {} must equal total length {}",
                self.t_train, self.horizon, self.t_total
            )));
        }
        Ok(())
    }
}

/// Simulated observations for all series, in hierarchy order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimPanel {
    pub y: DMatrix<f64>,
    pub t_train: usize,
}

impl SimPanel {
    pub fn train(&self) -> DMatrix<f64> {
        self.y.columns(0, self.t_train).into_owned()
    }

    pub fn test(&self) -> DMatrix<f64> {
        self.y
            .columns(self.t_train, self.y.ncols() - self.t_train)
            .into_owned()
    }
}

/// RNG of replication `rep` under master seed `seed`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Simulates the bottom series from a zero state, discards the burn-in and
/// aggregates through `S`.
pub fn generate_panel<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    h: &Hierarchy,
    rng: &mut R,
) -> Result<SimPanel> {
    spec.validate(h)?;
    let nb = h.n_bottom();
    let gaussian: Vec<usize> = (0..nb)
        .filter(|&i| spec.errors[i] == ErrorDist::Gaussian)
        .collect();
    let corr = DMatrix::from_fn(gaussian.len(), gaussian.len(), |a, b| {
        spec.corr_rho.powi(gaussian[a].abs_diff(gaussian[b]) as i32)
    });
    let chol = corr
        .cholesky()
        .ok_or_else(|| Error::Singular("Gaussian error correlation".into()))?
        .unpack();

    let steps = spec.burn_in + spec.t_total;
    let mut state = DVector::<f64>::zeros(nb);
    let mut bottom = DMatrix::<f64>::zeros(nb, spec.t_total);
    let mut eps = DVector::<f64>::zeros(nb);
    for t in 0..steps {
        let z = DVector::from_fn(gaussian.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let correlated = &chol * z;
        for (a, &i) in gaussian.iter().enumerate() {
            eps[i] = correlated[a];
        }
        for i in 0..nb {
            if spec.errors[i] != ErrorDist::Gaussian {
                eps[i] = spec.errors[i].draw(rng);
            }
        }
        for i in 0..nb {
            state[i] = spec.alpha[i] * state[i] + spec.sigma[i] * eps[i];
        }
        if t >= spec.burn_in {
            bottom.set_column(t - spec.burn_in, &state);
        }
    }
    Ok(SimPanel {
        y: h.summing() * bottom,
        t_train: spec.t_train,
    })
}

/// AR(1) with intercept fitted by conditional least squares.
#[derive(Debug, Clone, PartialEq)]
pub struct ArFit {
    pub intercept: f64,
    pub alpha: f64,
    pub forecasts: Vec<f64>,
    /// One-step in-sample errors, one fewer than the training points.
    pub residuals: Vec<f64>,
}

pub fn fit_base_forecaster(train: &[f64], horizon: usize) -> Result<ArFit> {
    if train.len() < 20 {
        return Err(Error::Validation(format!(
            "AR(1) fit needs at least 20 points, got {}",
            train.len()
        )));
    }
    if train.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training series".into()));
    }
    let x = &train[..train.len() - 1];
    let z = &train[1..];
    let m = x.len() as f64;
    let (xbar, zbar) = (x.iter().sum::<f64>() / m, z.iter().sum::<f64>() / m);
    let sxx: f64 = x.iter().map(|v| (v - xbar).powi(2)).sum();
    let sxz: f64 = x.iter().zip(z).map(|(a, b)| (a - xbar) * (b - zbar)).sum();
    let scale: f64 = x.iter().map(|v| v * v).sum();
    let mut alpha = if sxx > 1e-24 * scale.max(f64::MIN_POSITIVE) {
        sxz / sxx
    } else {
        0.0
    };
    if alpha.abs() >= AR_CLAMP {
        warn!("AR(1) coefficient {alpha} clamped to magnitude {AR_CLAMP}");
        alpha = AR_CLAMP.copysign(alpha);
    }
    let intercept = zbar - alpha * xbar;
    let residuals = x
        .iter()
        .zip(z)
        .map(|(a, b)| b - intercept - alpha * a)
        .collect();
    let mut last = *train.last().unwrap();
    let forecasts = (0..horizon)
        .map(|_| {
            last = intercept + alpha * last;
            last
        })
        .collect();
    Ok(ArFit {
        intercept,
        alpha,
        forecasts,
        residuals,
    })
}

/// Base forecasts and residual panel for every series of a training block.
pub fn base_forecasts(train: &DMatrix<f64>, horizon: usize) -> Result<BaseForecastSet> {
    let n = train.nrows();
    let t = train.ncols();
    let mut forecasts = DMatrix::zeros(n, horizon);
    let mut residuals = DMatrix::zeros(n, t.saturating_sub(1));
    for i in 0..n {
        let row: Vec<f64> = train.row(i).iter().copied().collect();
        let fit = fit_base_forecaster(&row, horizon)?;
        for (k, v) in fit.forecasts.iter().enumerate() {
            forecasts[(i, k)] = *v;
        }
        for (k, v) in fit.residuals.iter().enumerate() {
            residuals[(i, k)] = *v;
        }
    }
    BaseForecastSet::new(forecasts, Some(ResidualPanel::new(residuals)?))
}

/// Residual scale on the standardized scale of `cov`: the root mean square
/// of `W^{-1/2} r_t` over all series and times.
pub fn standardized_scale(panel: &ResidualPanel, cov: &CovMatrix) -> Result<f64> {
    let z = cov.inv_sqrt() * panel.data();
    let s = (z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64).sqrt();
    if s > 0.0 && s.is_finite() {
        Ok(s)
    } else {
        Err(Error::Validation(format!(
            "residual scale {s} is not positive"
        )))
    }
}

/// Loss of `kind` calibrated to the standardized residual scale.
pub fn calibrated_loss(kind: LossKind, panel: &ResidualPanel, cov: &CovMatrix) -> Result<Loss> {
    match kind {
        LossKind::Ls => Ok(Loss::Ls),
        LossKind::Lad => Loss::lad(standardized_scale(panel, cov)?),
        LossKind::Huber => Loss::huber_scaled(standardized_scale(panel, cov)?),
        other => Err(Error::Validation(format!(
            "loss {other} has no default calibration"
        ))),
    }
}

/// Experiment families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Design {
    NonGaussian,
    Efficiency,
    Proportion,
    Correlation,
    Complexity,
}

impl Design {
    pub const ALL: [Design; 5] = [
        Design::NonGaussian,
        Design::Efficiency,
        Design::Proportion,
        Design::Correlation,
        Design::Complexity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Design::NonGaussian => "nongaussian",
            Design::Efficiency => "efficiency",
            Design::Proportion => "proportion",
            Design::Correlation => "correlation",
            Design::Complexity => "complexity",
        }
    }

    /// The full parameter grid.
    pub fn default_grid(self) -> Vec<GridPoint> {
        match self {
            Design::NonGaussian => ErrorDist::NON_GAUSSIAN
                .into_iter()
                .map(GridPoint::Distribution)
                .collect(),
            Design::Efficiency => [0.5, 1.0, 1.5, 2.0, 3.0]
                .into_iter()
                .map(GridPoint::Sigma)
                .chain((1..=5).map(|k| GridPoint::NBottom(10 * k)))
                .collect(),
            Design::Proportion => (1..=9)
                .map(|k| GridPoint::Proportion(k as f64 / 10.0))
                .collect(),
            Design::Correlation => (0..=9).map(|k| GridPoint::Rho(k as f64 / 10.0)).collect(),
            Design::Complexity => (1..=6).map(|k| GridPoint::NBottom(20 * k)).collect(),
        }
    }

    /// Covariance designs evaluated by default.
    pub fn covariances(self) -> Vec<CovarianceKind> {
        match self {
            // too few observations for the largest hierarchies
            Design::Complexity => CovarianceKind::ALL
                .into_iter()
                .filter(|k| *k != CovarianceKind::Sample)
                .collect(),
            _ => CovarianceKind::ALL.to_vec(),
        }
    }

    fn accepts(self, point: &GridPoint) -> bool {
        matches!(
            (self, point),
            (Design::NonGaussian, GridPoint::Distribution(d)) if *d != ErrorDist::Gaussian
        ) || matches!(
            (self, point),
            (
                Design::Efficiency,
                GridPoint::Sigma(_) | GridPoint::NBottom(_)
            ) | (Design::Proportion, GridPoint::Proportion(_))
                | (Design::Correlation, GridPoint::Rho(_))
                | (Design::Complexity, GridPoint::NBottom(_))
        )
    }

    /// Scenario and evaluation groups of one replication. Random design
    /// elements are drawn from `rng` before the panel itself.
    pub fn scenario<R: Rng + ?Sized>(
        self,
        point: &GridPoint,
        rng: &mut R,
    ) -> Result<(ScenarioSpec, Hierarchy, Vec<SeriesGroup>)> {
        if !self.accepts(point) {
            return Err(Error::Validation(format!(
                "grid point {point} does not belong to the {} design",
                self.as_str()
            )));
        }
        let (spec, named_groups) = match (self, *point) {
            (Design::NonGaussian, GridPoint::Distribution(dist)) => {
                let mut s = ScenarioSpec::uniform(
                    HierarchySpec::from_group_sizes(&[3, 3, 3])?,
                    0.8,
                    0.5,
                    0.4,
                );
                s.errors[..3].fill(dist);
                (s, true)
            }
            (Design::Efficiency, GridPoint::Sigma(sigma)) => {
                check_sigma(sigma)?;
                (
                    ScenarioSpec::uniform(
                        HierarchySpec::from_group_sizes(&[3, 3])?,
                        0.6,
                        sigma,
                        0.4,
                    ),
                    false,
                )
            }
            (Design::Efficiency, GridPoint::NBottom(nb)) => (
                ScenarioSpec::uniform(HierarchySpec::with_fanout(nb, 5)?, 0.8, 1.0, 0.4),
                false,
            ),
            (Design::Proportion, GridPoint::Proportion(p)) => {
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::Validation(format!("proportion {p} outside (0, 1)")));
                }
                let mut s =
                    ScenarioSpec::uniform(HierarchySpec::with_fanout(30, 6)?, 0.7, 0.5, 0.0);
                let irregular = (p * 30.0).round() as usize;
                draw_alpha(&mut s, rng);
                for i in 0..irregular {
                    s.errors[i] = draw_dist(rng);
                }
                (s, false)
            }
            (Design::Correlation, GridPoint::Rho(rho)) => (
                ScenarioSpec::uniform(HierarchySpec::from_group_sizes(&[3, 3, 3])?, 0.8, 0.5, rho),
                false,
            ),
            (Design::Complexity, GridPoint::NBottom(nb)) => {
                let mut s =
                    ScenarioSpec::uniform(HierarchySpec::with_fanout(nb, 10)?, 0.7, 0.5, 0.0);
                draw_alpha(&mut s, rng);
                let count = (0.4 * nb as f64).round() as usize;
                let mut chosen = sample_indices(rng, nb, count).into_vec();
                chosen.sort_unstable();
                for i in chosen {
                    s.errors[i] = draw_dist(rng);
                }
                (s, false)
            }
            _ => unreachable!("accepts() guards the combinations"),
        };
        let h = Hierarchy::build(&spec.hierarchy)?;
        spec.validate(&h)?;
        let groups = if named_groups {
            let changeable = h.subtree("L1-1")?;
            let mut stable = h.subtree("L1-2")?;
            stable.extend(h.subtree("L1-3")?);
            stable.sort_unstable();
            vec![
                SeriesGroup::new("changeable", changeable),
                SeriesGroup::new("stable", stable),
                SeriesGroup::new("all", (0..h.n()).collect()),
            ]
        } else {
            standard_groups(&h)
        };
        Ok((spec, h, groups))
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation(format!("sigma {sigma} must be positive")))
    }
}

fn draw_alpha<R: Rng + ?Sized>(s: &mut ScenarioSpec, rng: &mut R) {
    for a in s.alpha.iter_mut() {
        *a = rng.random_range(0.6..=0.8);
    }
}

fn draw_dist<R: Rng + ?Sized>(rng: &mut R) -> ErrorDist {
    ErrorDist::NON_GAUSSIAN[rng.random_range(0..3)]
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['-', '_'], "");
        Design::ALL
            .into_iter()
            .find(|d| d.as_str() == norm)
            .ok_or_else(|| Error::Validation(format!("unknown design {s:?}")))
    }
}

/// One value of a design's varied parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GridPoint {
    Distribution(ErrorDist),
    Sigma(f64),
    NBottom(usize),
    Proportion(f64),
    Rho(f64),
}

impl GridPoint {
    pub fn param(&self) -> &'static str {
        match self {
            GridPoint::Distribution(_) => "distribution",
            GridPoint::Sigma(_) => "sigma",
            GridPoint::NBottom(_) => "n_bottom",
            GridPoint::Proportion(_) => "proportion",
            GridPoint::Rho(_) => "rho",
        }
    }

    pub fn value(&self) -> String {
        match self {
            GridPoint::Distribution(d) => d.to_string(),
            GridPoint::Sigma(v) | GridPoint::Proportion(v) | GridPoint::Rho(v) => v.to_string(),
            GridPoint::NBottom(n) => n.to_string(),
        }
    }
}

impl fmt::Display for GridPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.param(), self.value())
    }
}

/// Method families selectable in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodFamily {
    Bu,
    Ls,
    Lad,
    Huber,
    Combine,
}

impl MethodFamily {
    pub const ALL: [MethodFamily; 5] = [
        MethodFamily::Bu,
        MethodFamily::Ls,
        MethodFamily::Lad,
        MethodFamily::Huber,
        MethodFamily::Combine,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodFamily::Bu => "bu",
            MethodFamily::Ls => "ls",
            MethodFamily::Lad => "lad",
            MethodFamily::Huber => "huber",
            MethodFamily::Combine => "combine",
        }
    }
}

impl FromStr for MethodFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase();
        match norm.as_str() {
            "mint" => Ok(MethodFamily::Ls),
            "combination" => Ok(MethodFamily::Combine),
            _ => MethodFamily::ALL
                .into_iter()
                .find(|m| m.as_str() == norm)
                .ok_or_else(|| Error::Validation(format!("unknown method {s:?}"))),
        }
    }
}

/// A fully specified reconciliation method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    BottomUp,
    /// LS is solved in closed form (MinT); LAD and Huber by the LQA iteration.
    Reconcile {
        loss: LossKind,
        cov: CovarianceKind,
    },
    Combine {
        pattern: CombinationPattern,
        cov: CovarianceKind,
    },
}

impl Method {
    /// Canonical method list for the selected families and covariances.
    pub fn enumerate(families: &[MethodFamily], covs: &[CovarianceKind]) -> Vec<Method> {
        let mut out = Vec::new();
        if families.contains(&MethodFamily::Bu) {
            out.push(Method::BottomUp);
        }
        for (family, loss) in [
            (MethodFamily::Ls, LossKind::Ls),
            (MethodFamily::Lad, LossKind::Lad),
            (MethodFamily::Huber, LossKind::Huber),
        ] {
            if families.contains(&family) {
                out.extend(covs.iter().map(|&cov| Method::Reconcile { loss, cov }));
            }
        }
        if families.contains(&MethodFamily::Combine) {
            for pattern in CombinationPattern::ALL {
                out.extend(covs.iter().map(|&cov| Method::Combine { pattern, cov }));
            }
        }
        out
    }

    /// `(method, loss, cov)` labels as written in reports.
    pub fn labels(&self) -> (String, String, String) {
        match self {
            Method::BottomUp => ("bu".into(), String::new(), String::new()),
            Method::Reconcile { loss, cov } => {
                let method = if *loss == LossKind::Ls {
                    "mint"
                } else {
                    "rome"
                };
                (method.into(), loss.to_string(), cov.to_string())
            }
            Method::Combine { pattern, cov } => (
                format!("combine-{pattern}"),
                "ls+lad".into(),
                cov.to_string(),
            ),
        }
    }
}

/// Experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    pub design: Design,
    pub reps: usize,
    pub seed: u64,
    pub families: Vec<MethodFamily>,
    pub covs: Vec<CovarianceKind>,
    pub grid: Vec<GridPoint>,
    /// Leading-horizon windows `1..=w`.
    pub windows: Vec<usize>,
    pub reconciler: ReconcilerConfig,
}

impl ExperimentOptions {
    pub fn new(design: Design, reps: usize, seed: u64) -> Self {
        Self {
            design,
            reps,
            seed,
            families: MethodFamily::ALL.to_vec(),
            covs: design.covariances(),
            grid: design.default_grid(),
            windows: vec![1, 6, 12],
            reconciler: ReconcilerConfig::default(),
        }
    }

    pub fn with_lad_mode(mut self, mode: LadMode) -> Self {
        self.reconciler.lad_mode = mode;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Validation(
                "at least one replication is required".into(),
            ));
        }
        if self.families.is_empty() || self.covs.is_empty() || self.grid.is_empty() {
            return Err(Error::Validation(
                "methods, covariance designs and grid must be non-empty".into(),
            ));
        }
        if let Some(p) = self.grid.iter().find(|p| !self.design.accepts(p)) {
            return Err(Error::Validation(format!(
                "grid point {p} does not belong to the {} design",
                self.design
            )));
        }
        if let Some(w) = self.windows.iter().find(|w| **w == 0 || **w > HORIZON) {
            return Err(Error::Validation(format!(
                "window {w} outside 1..={HORIZON}"
            )));
        }
        if self.windows.is_empty() {
            return Err(Error::Validation("no evaluation windows".into()));
        }
        Ok(())
    }
}

/// One aggregated cell of an experiment report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub design: String,
    pub param: String,
    pub value: String,
    pub method: String,
    pub loss: String,
    pub cov: String,
    pub group: String,
    pub window: usize,
    /// Mean over replications of the per-replication percentage change.
    pub mean_pct_change: f64,
    /// Percentage change of the mean RMSE against the mean base RMSE.
    pub pct_change_of_mean_rmse: f64,
    pub mean_rmse: f64,
    pub base_mean_rmse: f64,
    pub replications: usize,
    pub failures: usize,
    pub nonconverged: usize,
}

/// A replication that was excluded from one or more cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub design: String,
    pub param: String,
    pub value: String,
    pub replication: u64,
    pub seed: u64,
    pub method: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub failures: Vec<Failure>,
}

/// Everything computed for one replication at one grid point.
#[derive(Debug)]
pub struct ReplicationOutcome {
    pub groups: Vec<SeriesGroup>,
    /// `[group][window]`.
    pub base_rmse: Vec<Vec<f64>>,
    /// Per method, in [`Method::enumerate`] order.
    pub methods: Vec<Result<MethodOutcome>>,
}

#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub result: ReconcileResult,
    /// `[group][window]`.
    pub rmse: Vec<Vec<f64>>,
}

/// Generates, forecasts and reconciles one replication.
pub fn run_replication(
    opts: &ExperimentOptions,
    point: &GridPoint,
    rep: u64,
) -> Result<ReplicationOutcome> {
    let mut rng = replication_rng(opts.seed, rep);
    let (spec, h, groups) = opts.design.scenario(point, &mut rng)?;
    let panel = generate_panel(&spec, &h, &mut rng)?;
    let base = base_forecasts(&panel.train(), spec.horizon)?;
    let actual = panel.test();

    let score = |forecast: &DMatrix<f64>| -> Result<Vec<Vec<f64>>> {
        groups
            .iter()
            .map(|g| {
                opts.windows
                    .iter()
                    .map(|&w| rmse(&actual, forecast, &g.indices, w))
                    .collect()
            })
            .collect()
    };
    let base_rmse = score(base.forecasts())?;
    let methods = Method::enumerate(&opts.families, &opts.covs);
    let residuals = base
        .residuals()
        .expect("simulated base forecasts carry residuals");

    // realized covariance and the LS / LAD solutions shared with combinations
    let mut covs: Vec<(CovarianceKind, Result<CovMatrix>)> = Vec::new();
    let cov_for = |kind: CovarianceKind, covs: &mut Vec<(CovarianceKind, Result<CovMatrix>)>| {
        if !covs.iter().any(|(k, _)| *k == kind) {
            let c = realize_design(&CovarianceDesign::new(kind), Some(residuals), &h);
            covs.push((kind, c));
        }
    };
    let mut solved: Vec<((LossKind, CovarianceKind), Result<ReconcileResult, String>)> = Vec::new();
    let mut solve = |loss: LossKind,
                     cov_kind: CovarianceKind,
                     covs: &mut Vec<(CovarianceKind, Result<CovMatrix>)>|
     -> Result<ReconcileResult, String> {
        if let Some((_, r)) = solved.iter().find(|(key, _)| *key == (loss, cov_kind)) {
            return r.clone();
        }
        cov_for(cov_kind, covs);
        let cov = covs.iter().find(|(k, _)| *k == cov_kind).unwrap();
        let r = match &cov.1 {
            Err(e) => Err(e.to_string()),
            Ok(cov) => (|| {
                if loss == LossKind::Ls {
                    reconcile_mint(&base, &h, cov)
                } else {
                    let l = calibrated_loss(loss, residuals, cov)?;
                    reconcile_rome(&base, &h, cov, &l, &opts.reconciler)
                }
            })()
            .map_err(|e| e.to_string()),
        };
        solved.push(((loss, cov_kind), r.clone()));
        r
    };

    let mut outcomes = Vec::with_capacity(methods.len());
    for m in &methods {
        let result = match *m {
            Method::BottomUp => reconcile_bottom_up(&base, &h).map_err(|e| e.to_string()),
            Method::Reconcile { loss, cov } => solve(loss, cov, &mut covs),
            Method::Combine { pattern, cov } => {
                let ls = solve(LossKind::Ls, cov, &mut covs);
                let lad = solve(LossKind::Lad, cov, &mut covs);
                match (ls, lad) {
                    (Ok(a), Ok(b)) => combine_forecasts(&a, &b, pattern).map_err(|e| e.to_string()),
                    (Err(e), _) | (_, Err(e)) => Err(e),
                }
            }
        };
        let outcome = result.map_err(Error::Validation).and_then(|r| {
            let rmse = score(&r.reconciled)?;
            Ok(MethodOutcome { result: r, rmse })
        });
        outcomes.push(outcome);
    }
    Ok(ReplicationOutcome {
        groups,
        base_rmse,
        methods: outcomes,
    })
}

#[derive(Default, Clone)]
struct Cell {
    pct_sum: f64,
    rmse_sum: f64,
    base_sum: f64,
    count: usize,
    failures: usize,
    nonconverged: usize,
}

/// Runs every replication of every grid point and aggregates the cells.
pub fn run_experiment(opts: &ExperimentOptions) -> Result<Report> {
    opts.validate()?;
    let methods = Method::enumerate(&opts.families, &opts.covs);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for point in &opts.grid {
        // groups depend only on the hierarchy; this also surfaces configuration
        // errors before fanning out
        let (_, _, groups) = opts
            .design
            .scenario(point, &mut replication_rng(opts.seed, 0))?;
        let outcomes: Vec<Result<ReplicationOutcome>> = (0..opts.reps as u64)
            .into_par_iter()
            .map(|rep| run_replication(opts, point, rep))
            .collect();

        let mut cells =
            vec![vec![vec![Cell::default(); opts.windows.len()]; groups.len()]; methods.len()];
        let fail = |rep: u64, method: String, message: String| Failure {
            design: opts.design.to_string(),
            param: point.param().into(),
            value: point.value(),
            replication: rep,
            seed: opts.seed,
            method,
            message,
        };
        for (rep, outcome) in outcomes.into_iter().enumerate() {
            let rep = rep as u64;
            let outcome = match outcome {
                Ok(o) => o,
                Err(e) => {
                    failures.push(fail(rep, "all".into(), e.to_string()));
                    cells
                        .iter_mut()
                        .flatten()
                        .flatten()
                        .for_each(|c| c.failures += 1);
                    continue;
                }
            };
            for (mi, m) in outcome.methods.iter().enumerate() {
                let mo = match m {
                    Ok(mo) => mo,
                    Err(e) => {
                        failures.push(fail(rep, method_name(&methods[mi]), e.to_string()));
                        cells[mi].iter_mut().flatten().for_each(|c| c.failures += 1);
                        continue;
                    }
                };
                let nonconverged = mo.result.converged.iter().any(|c| !c);
                for (gi, per_group) in cells[mi].iter_mut().enumerate() {
                    for (wi, c) in per_group.iter_mut().enumerate() {
                        let base = outcome.base_rmse[gi][wi];
                        let v = mo.rmse[gi][wi];
                        match pct_change(v, base) {
                            Ok(p) => {
                                c.pct_sum += p;
                                c.rmse_sum += v;
                                c.base_sum += base;
                                c.count += 1;
                                c.nonconverged += nonconverged as usize;
                            }
                            Err(e) => {
                                c.failures += 1;
                                failures.push(fail(rep, method_name(&methods[mi]), e.to_string()));
                            }
                        }
                    }
                }
            }
        }
        for (mi, m) in methods.iter().enumerate() {
            let (method, loss, cov) = m.labels();
            for (gi, g) in groups.iter().enumerate() {
                for (wi, &w) in opts.windows.iter().enumerate() {
                    let c = &cells[mi][gi][wi];
                    let k = c.count as f64;
                    let (mean_pct, mean_rmse, base_mean) = if c.count > 0 {
                        (c.pct_sum / k, c.rmse_sum / k, c.base_sum / k)
                    } else {
                        (f64::NAN, f64::NAN, f64::NAN)
                    };
                    rows.push(ReportRow {
                        design: opts.design.to_string(),
                        param: point.param().into(),
                        value: point.value(),
                        method: method.clone(),
                        loss: loss.clone(),
                        cov: cov.clone(),
                        group: g.name.clone(),
                        window: w,
                        mean_pct_change: mean_pct,
                        pct_change_of_mean_rmse: (mean_rmse - base_mean) / base_mean * 100.0,
                        mean_rmse,
                        base_mean_rmse: base_mean,
                        replications: c.count,
                        failures: c.failures,
                        nonconverged: c.nonconverged,
                    });
                }
            }
        }
    }
    Ok(Report { rows, failures })
}

fn method_name(m: &Method) -> String {
    let (method, loss, cov) = m.labels();
    [method, loss, cov]
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("/")
}

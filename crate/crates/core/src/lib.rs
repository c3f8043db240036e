//! Robust reconciliation of hierarchical forecasts.
//!
//! Hierarchies and their summing matrices ([`hierarchy`]), convex losses
//! ([`loss`]), covariance designs ([`covariance`]), the reconciliation
//! methods ([`reconciler`]), a simulation harness ([`simulate`]) and
//! accuracy metrics ([`evaluate`]), plus file formats ([`io`]).

pub mod covariance;
pub mod error;
pub mod evaluate;
pub mod hierarchy;
pub mod io;
pub mod loss;
pub mod reconciler;
pub mod simulate;

pub use covariance::{CovMatrix, CovarianceDesign, CovarianceKind, ResidualPanel};
pub use error::{Error, Result};
pub use hierarchy::{Hierarchy, HierarchySpec};
pub use loss::{Loss, LossKind};
pub use reconciler::{
    BaseForecastSet, CombinationPattern, Init, LadMode, ReconcileResult, ReconcilerConfig,
};

use std::path::Path;

use log::{info, warn};
use rome_core::covariance::{realize_design, CovMatrix, CovarianceDesign, CovarianceKind};
use rome_core::io::{read_hierarchy, read_matrix_file, write_matrix_file};
use rome_core::reconciler::{
    combine_forecasts, reconcile_bottom_up, reconcile_mint, reconcile_rome,
};
use rome_core::simulate::standardized_scale;
use rome_core::{
    BaseForecastSet, CombinationPattern, Init, LadMode, Loss, LossKind, ReconcileResult,
    ReconcilerConfig, ResidualPanel,
};
use serde::Serialize;

use crate::{invalid, manifest, parse_flag, CliResult, InitArg, MethodArg, ReconcileArgs};

#[derive(Serialize)]
struct Diagnostics {
    method: String,
    loss: Option<String>,
    cov: Option<String>,
    horizons: Vec<HorizonDiagnostics>,
}

#[derive(Serialize)]
struct HorizonDiagnostics {
    horizon: usize,
    iterations: usize,
    converged: bool,
    /// Null for combinations, which have no single objective.
    objective: Option<f64>,
    coherence_residual: f64,
}

pub fn run(args: &ReconcileArgs) -> CliResult<()> {
    let h = read_hierarchy(&args.hierarchy)?;
    let forecasts = read_matrix_file(&args.forecasts, &h)?;
    let residuals = match &args.residuals {
        Some(p) => Some(ResidualPanel::new(read_matrix_file(p, &h)?)?),
        None => None,
    };
    let base = BaseForecastSet::new(forecasts, residuals.clone())?;
    let config = ReconcilerConfig {
        varsigma: args.varsigma,
        epsilon: args.epsilon,
        omega_max: args.max_iter,
        init: match args.init {
            InitArg::Zero => Init::Zero,
            InitArg::Mint => Init::Mint,
        },
        lad_mode: parse_flag("lad-mode", &args.lad_mode)?,
        ..ReconcilerConfig::default()
    };

    let loss_kind: Option<LossKind> = args
        .loss
        .as_deref()
        .map(|l| parse_flag("loss", l))
        .transpose()?;
    let (result, loss_label, cov_label) = match args.method {
        MethodArg::Bu => {
            if args.loss.is_some() {
                warn!("--loss is ignored by bottom-up");
            }
            (reconcile_bottom_up(&base, &h)?, None, None)
        }
        MethodArg::Mint => {
            if loss_kind.is_some_and(|k| k != LossKind::Ls) {
                return Err(invalid(
                    "--method mint is the LS solution; use --method rome for other losses",
                ));
            }
            let cov = covariance(args, residuals.as_ref(), &h)?;
            (
                reconcile_mint(&base, &h, &cov)?,
                Some("ls".into()),
                Some(args.cov.clone()),
            )
        }
        MethodArg::Rome => {
            let kind = loss_kind.ok_or_else(|| invalid("--method rome requires --loss"))?;
            let cov = covariance(args, residuals.as_ref(), &h)?;
            let loss = build_loss(args, kind, residuals.as_ref(), &cov, config.lad_mode)?;
            let r = reconcile_rome(&base, &h, &cov, &loss, &config)?;
            (r, Some(kind.to_string()), Some(args.cov.clone()))
        }
        MethodArg::Combine => {
            if loss_kind.is_some() {
                warn!("--loss is ignored by combine, which always pairs LS with LAD");
            }
            let pattern: CombinationPattern = parse_flag("pattern", &args.pattern)?;
            let cov = covariance(args, residuals.as_ref(), &h)?;
            let lad = build_loss(
                args,
                LossKind::Lad,
                residuals.as_ref(),
                &cov,
                config.lad_mode,
            )?;
            let ls = reconcile_mint(&base, &h, &cov)?;
            let lad = reconcile_rome(&base, &h, &cov, &lad, &config)?;
            (
                combine_forecasts(&ls, &lad, pattern)?,
                Some("ls+lad".into()),
                Some(args.cov.clone()),
            )
        }
    };

    for (k, conv) in result.converged.iter().enumerate() {
        if !conv {
            warn!("horizon {} stopped at the iteration limit", k + 1);
        }
    }
    write_matrix_file(&args.out, h.labels(), &result.reconciled, "h")?;
    let diag_path = manifest::sidecar(&args.out, "diagnostics.json");
    manifest::write_json(
        &diag_path,
        &diagnostics(&result, &h, args.method, loss_label, cov_label),
    )?;
    let mut inputs: Vec<&Path> = vec![&args.hierarchy, &args.forecasts];
    if let Some(r) = &args.residuals {
        inputs.push(r);
    }
    manifest::write(&args.out, None, &inputs, &[&args.out, &diag_path])?;
    info!("wrote {}", args.out.display());
    Ok(())
}

fn covariance(
    args: &ReconcileArgs,
    residuals: Option<&ResidualPanel>,
    h: &rome_core::Hierarchy,
) -> CliResult<CovMatrix> {
    let kind: CovarianceKind = parse_flag("cov", &args.cov)?;
    if kind.needs_residuals() && residuals.is_none() {
        return Err(invalid(format!(
            "--cov {kind} is estimated from in-sample residuals; pass --residuals"
        )));
    }
    let mut design = CovarianceDesign::new(kind).with_k_h(args.kh);
    if let Some(l) = args.shrink_lambda {
        if kind != CovarianceKind::Shrink {
            warn!("--shrink-lambda only affects --cov shrink");
        }
        design = design.with_lambda(l);
    }
    Ok(realize_design(&design, residuals, h)?)
}

fn build_loss(
    args: &ReconcileArgs,
    kind: LossKind,
    residuals: Option<&ResidualPanel>,
    cov: &CovMatrix,
    lad_mode: LadMode,
) -> CliResult<Loss> {
    let scale = || -> CliResult<f64> {
        if let Some(s) = args.sigma_hat {
            return Ok(s);
        }
        let panel = residuals.ok_or_else(|| {
            invalid(format!(
                "--loss {kind} derives its scale from residuals; pass --residuals or --sigma-hat"
            ))
        })?;
        Ok(standardized_scale(panel, cov)?)
    };
    let loss = match kind {
        LossKind::Ls => Loss::Ls,
        LossKind::Huber => match args.huber_k {
            Some(k) => Loss::huber(k)?,
            None => Loss::huber_scaled(scale()?)?,
        },
        // the scale only enters through the Huber stand-in
        LossKind::Lad
            if lad_mode == LadMode::Perturbation
                && args.sigma_hat.is_none()
                && residuals.is_none() =>
        {
            Loss::lad(1.0)?
        }
        LossKind::Lad => Loss::lad(scale()?)?,
        LossKind::Lp => Loss::lp(
            args.lp_p
                .ok_or_else(|| invalid("--loss lp requires --lp-p"))?,
        )?,
        LossKind::Quantile => Loss::quantile(
            args.quantile_q
                .ok_or_else(|| invalid("--loss quantile requires --quantile-q"))?,
        )?,
    };
    Ok(loss)
}

fn diagnostics(
    r: &ReconcileResult,
    h: &rome_core::Hierarchy,
    method: MethodArg,
    loss: Option<String>,
    cov: Option<String>,
) -> Diagnostics {
    let method = match method {
        MethodArg::Bu => "bu",
        MethodArg::Mint => "mint",
        MethodArg::Rome => "rome",
        MethodArg::Combine => "combine",
    };
    Diagnostics {
        method: method.into(),
        loss,
        cov,
        horizons: (0..r.horizons())
            .map(|k| HorizonDiagnostics {
                horizon: k + 1,
                iterations: r.iterations[k],
                converged: r.converged[k],
                objective: Some(r.objective[k]).filter(|v| v.is_finite()),
                coherence_residual: h.coherence_residual(r.reconciled.column(k).as_slice()),
            })
            .collect(),
    }
}

use std::fmt::Write as _;
use std::time::Instant;

use rome_core::covariance::{realize_design, CovarianceDesign, CovarianceKind};
use rome_core::reconciler::{reconcile_mint, reconcile_rome};
use rome_core::simulate::{
    base_forecasts, calibrated_loss, generate_panel, replication_rng, ScenarioSpec,
};
use rome_core::{Hierarchy, HierarchySpec, LossKind, ReconcilerConfig};

use crate::{invalid, manifest, BenchArgs, CliResult};

pub const BANNER: &str =
    "# timings are hardware-dependent; compare rows of one run, not across machines";

pub fn run(args: &BenchArgs) -> CliResult<()> {
    if args.iters == 0 {
        return Err(invalid("--iters must be at least 1"));
    }
    let spec = HierarchySpec::from_group_sizes(&args.groups)?;
    let h = Hierarchy::build(&spec)?;
    let scenario = ScenarioSpec::uniform(spec, 0.8, 0.5, 0.0);
    let panel = generate_panel(&scenario, &h, &mut replication_rng(args.seed, 0))?;
    let base = base_forecasts(&panel.train(), scenario.horizon)?;
    let residuals = base.residuals().expect("base forecasts carry residuals");
    let config = ReconcilerConfig::default();

    let mut csv = format!("{BANNER}\nmethod,loss,cov,iters,median_us,mean_us\n");
    for loss_kind in [LossKind::Ls, LossKind::Lad, LossKind::Huber] {
        for cov_kind in CovarianceKind::ALL {
            let cov = realize_design(&CovarianceDesign::new(cov_kind), Some(residuals), &h)?;
            let loss = calibrated_loss(loss_kind, residuals, &cov)?;
            let mut micros = Vec::with_capacity(args.iters);
            for _ in 0..args.iters {
                let start = Instant::now();
                if loss_kind == LossKind::Ls {
                    reconcile_mint(&base, &h, &cov)?;
                } else {
                    reconcile_rome(&base, &h, &cov, &loss, &config)?;
                }
                micros.push(start.elapsed().as_secs_f64() * 1e6);
            }
            micros.sort_by(f64::total_cmp);
            let mid = micros.len() / 2;
            let median = if micros.len() % 2 == 0 {
                (micros[mid - 1] + micros[mid]) / 2.0
            } else {
                micros[mid]
            };
            let mean = micros.iter().sum::<f64>() / micros.len() as f64;
            let method = if loss_kind == LossKind::Ls {
                "mint"
            } else {
                "rome"
            };
            let _ = writeln!(
                csv,
                "{method},{loss_kind},{cov_kind},{},{median:.3},{mean:.3}",
                args.iters
            );
        }
    }
    std::fs::write(&args.out, csv)?;
    manifest::write(&args.out, Some(args.seed), &[], &[&args.out])?;
    Ok(())
}

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use log::{info, warn};
use rome_core::io::{write_failures_csv, write_report_csv, write_report_json};
use rome_core::simulate::{run_experiment, Design, ErrorDist, ExperimentOptions, GridPoint};

use crate::{manifest, parse_flag, CliResult, Format, SimulateArgs};

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    let design: Design = parse_flag("design", &args.design)?;
    let mut opts = ExperimentOptions::new(design, args.reps, args.seed)
        .with_lad_mode(parse_flag("lad-mode", &args.lad_mode)?);
    if let Some(methods) = &args.methods {
        opts.families = methods
            .iter()
            .map(|m| parse_flag("methods", m))
            .collect::<CliResult<_>>()?;
    }
    if let Some(covs) = &args.covs {
        opts.covs = covs
            .iter()
            .map(|c| parse_flag("covs", c))
            .collect::<CliResult<_>>()?;
    }
    let grid = overrides(args)?;
    if !grid.is_empty() {
        opts.grid = grid;
    }
    opts.windows = args.windows.clone();

    let report = run_experiment(&opts)?;
    if !report.failures.is_empty() {
        warn!(
            "{} replication cells failed; see the failures sidecar",
            report.failures.len()
        );
    }
    let mut outputs: Vec<std::path::PathBuf> = vec![args.out.clone()];
    match args.format {
        Format::Csv => {
            write_report_csv(BufWriter::new(File::create(&args.out)?), &report.rows)?;
            let failures = manifest::sidecar(&args.out, "failures.csv");
            write_failures_csv(BufWriter::new(File::create(&failures)?), &report.failures)?;
            outputs.push(failures);
        }
        Format::Json => write_report_json(BufWriter::new(File::create(&args.out)?), &report)?,
    }
    let outputs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
    manifest::write(&args.out, Some(args.seed), &[], &outputs)?;
    info!(
        "wrote {} report rows to {}",
        report.rows.len(),
        args.out.display()
    );
    Ok(())
}

/// Grid points named on the command line, in flag order.
fn overrides(args: &SimulateArgs) -> CliResult<Vec<GridPoint>> {
    let mut grid = Vec::new();
    if let Some(d) = &args.distribution {
        for name in d {
            let dist: ErrorDist = parse_flag("distribution", name)?;
            grid.push(GridPoint::Distribution(dist));
        }
    }
    let floats = [
        (&args.sigma, GridPoint::Sigma as fn(f64) -> GridPoint),
        (&args.proportion, GridPoint::Proportion),
        (&args.rho, GridPoint::Rho),
    ];
    for (values, point) in floats {
        grid.extend(values.iter().flatten().map(|v| point(*v)));
    }
    grid.extend(
        args.n_bottom
            .iter()
            .flatten()
            .map(|n| GridPoint::NBottom(*n)),
    );
    Ok(grid)
}

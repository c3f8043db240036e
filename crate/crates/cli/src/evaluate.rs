use std::io::Write;
use std::path::Path;

use rome_core::evaluate::{pct_change, rmse, standard_groups, SeriesGroup};
use rome_core::io::{read_hierarchy, read_matrix_file};
use serde::Serialize;

use crate::{invalid, manifest, CliResult, EvaluateArgs, Format};

#[derive(Debug, Serialize)]
struct Row {
    group: String,
    window: usize,
    rmse: f64,
    base_rmse: Option<f64>,
    pct_change: Option<f64>,
}

pub fn run(args: &EvaluateArgs) -> CliResult<()> {
    let h = read_hierarchy(&args.hierarchy)?;
    let forecasts = read_matrix_file(&args.forecasts, &h)?;
    let actuals = read_matrix_file(&args.actuals, &h)?;
    let base = args
        .base
        .as_ref()
        .map(|p| read_matrix_file(p, &h))
        .transpose()?;
    if args.windows.is_empty() {
        return Err(invalid("--windows is empty"));
    }
    let mut groups = standard_groups(&h);
    for level in h.level_names() {
        groups.push(SeriesGroup::new(
            format!("level:{level}"),
            h.level_indices(level)?.collect(),
        ));
    }
    let mut rows = Vec::new();
    for g in &groups {
        // a two-level tree has no aggregated series beyond the root
        if g.indices.is_empty() {
            continue;
        }
        for &w in &args.windows {
            let r = rmse(&actuals, &forecasts, &g.indices, w)?;
            let (base_rmse, pct) = match &base {
                Some(b) => {
                    let br = rmse(&actuals, b, &g.indices, w)?;
                    (Some(br), pct_change(r, br).ok())
                }
                None => (None, None),
            };
            rows.push(Row {
                group: g.name.clone(),
                window: w,
                rmse: r,
                base_rmse,
                pct_change: pct,
            });
        }
    }

    let text = match args.format {
        Format::Json => {
            serde_json::to_string_pretty(&rows)
                .map_err(|e| invalid(format!("serializing rows: {e}")))?
                + "\n"
        }
        Format::Csv => {
            let mut s = String::from("group,window,rmse,base_rmse,pct_change\n");
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            for r in &rows {
                s += &format!(
                    "{},{},{},{},{}\n",
                    r.group,
                    r.window,
                    r.rmse,
                    opt(r.base_rmse),
                    opt(r.pct_change)
                );
            }
            s
        }
    };
    match &args.out {
        Some(out) => {
            std::fs::write(out, &text)?;
            let mut inputs: Vec<&Path> = vec![&args.hierarchy, &args.forecasts, &args.actuals];
            if let Some(b) = &args.base {
                inputs.push(b);
            }
            manifest::write(out, None, &inputs, &[out])?;
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

//! `pulsefield evaluate`: metrics for a prediction against a reference,
//! with optional noisy baseline and measured flow-rate series.

use pulsefield_core::io::{read_flowfield, read_series, write_series, Manifest};
use pulsefield_core::verify::{flow_rate, flowrate_mse, metrics_report, Geometry};

use super::{ensure_out_dir, CliError, Ctx};

pub fn run(ctx: &Ctx) -> Result<(), CliError> {
    let io = ctx.cfg.io.clone().unwrap_or_default();
    let pred_path = io
        .pred
        .unwrap_or_else(|| ctx.out.join("prediction.flowfield"));
    let ref_path = io
        .reference
        .ok_or_else(|| CliError::config("evaluate needs io.reference"))?;
    let (mut pred, _) = read_flowfield(&pred_path)
        .map_err(|e| CliError::data(format!("{}: {e}", pred_path.display())))?;
    let (reference, params) = read_flowfield(&ref_path)
        .map_err(|e| CliError::data(format!("{}: {e}", ref_path.display())))?;
    let mut noisy = match &io.noisy_baseline {
        Some(p) => Some(read_flowfield(p)?.0),
        None => None,
    };
    if !pred.same_grid(&reference, 1e-9) {
        if !ctx.resample {
            return Err(CliError::data(
                "prediction and reference grids differ (pass --resample to interpolate)",
            ));
        }
        pred = pred.resample_to(&reference);
    }
    if let Some(n) = &noisy {
        if !n.same_grid(&reference, 1e-9) {
            if !ctx.resample {
                return Err(CliError::data(
                    "noisy baseline and reference grids differ (pass --resample to interpolate)",
                ));
            }
            noisy = Some(n.resample_to(&reference));
        }
    }
    let mut report = metrics_report(&pred, &reference, noisy.as_ref(), params.as_ref())?;

    let geometry = Geometry::Tube {
        radius: reference.half_width(),
    };
    let q_pred = flow_rate(&pred, &geometry)?;
    let q_ref = flow_rate(&reference, &geometry)?;
    let measured: Vec<f64> = match &io.measured_flowrate {
        Some(p) => read_series(p)?.into_iter().map(|(_, v)| v).collect(),
        None => q_ref.clone(),
    };
    let cmp = flowrate_mse(&q_pred, &measured)?;
    report.flowrate_mse = Some(cmp.mse);

    ensure_out_dir(ctx)?;
    let series = |vals: &[f64]| -> Vec<(f64, f64)> {
        reference
            .times
            .iter()
            .zip(vals)
            .map(|(&t, &v)| (t, v))
            .collect()
    };
    let qp_path = ctx.out.join("flowrate_pred.csv");
    let qr_path = ctx.out.join("flowrate_reference.csv");
    let cum_path = ctx.out.join("flowrate_cumulative_sq_error.csv");
    write_series(&qp_path, "flowrate_ml_min", &series(&q_pred))?;
    write_series(&qr_path, "flowrate_ml_min", &series(&q_ref))?;
    write_series(&cum_path, "cumulative_sq_error", &series(&cmp.cumulative_sq_error))?;
    let metrics_path = ctx.out.join("metrics.json");
    std::fs::write(
        &metrics_path,
        serde_json::to_string_pretty(&report).expect("report serialize") + "\n",
    )
    .map_err(|e| CliError::data(e.to_string()))?;

    let mut manifest = Manifest::new("evaluate", &ctx.cfg.canonical(), ctx.cfg.seed());
    for p in [&metrics_path, &qp_path, &qr_path, &cum_path] {
        manifest.add_output(&ctx.out, p)?;
    }
    manifest.write(&ctx.out.join("manifest.json"))?;
    println!(
        "evaluate: mse_field {:.3e}, flowrate_mse {:.3e}",
        report.mse_field,
        report.flowrate_mse.unwrap_or(f64::NAN)
    );
    Ok(())
}

//! `pulsefield ablate`: one training run per physics weight, reporting the
//! relative decrease in field/cycle/profile MSE against the noisy baseline.

use std::fs::File;
use std::io::{BufWriter, Write};

use pulsefield_core::io::{write_checkpoint, write_train_log, Checkpoint, Manifest};
use pulsefield_core::model::batch::sample_field;
use pulsefield_core::model::NormMap;
use pulsefield_core::training::train;
use pulsefield_core::verify::metrics_report;

use crate::config::AblateConfig;

use super::train::{build_model, load_inputs, physics_context};
use super::{ensure_out_dir, CliError, Ctx};

pub fn run(ctx: &Ctx) -> Result<(), CliError> {
    let ab = ctx.cfg.ablate.clone().unwrap_or_default();
    if ab.lambdas.is_empty() {
        return Err(CliError::config("ablate.lambdas must be nonempty"));
    }
    let mut lambdas = ab.lambdas.clone();
    lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    lambdas.dedup();
    let _ = AblateConfig::default();

    let inputs = load_inputs(ctx)?;
    let reference = inputs
        .reference
        .as_ref()
        .ok_or_else(|| CliError::config("ablate needs the clean reference dataset"))?;
    let physics = physics_context(inputs.params.as_ref())
        .ok_or_else(|| CliError::config("ablate needs analytic parameters for the physics term"))?;
    ensure_out_dir(ctx)?;
    let seed = ctx.cfg.seed();
    let mc = ctx.cfg.model.clone().unwrap_or_default();
    let tc = ctx.cfg.train.unwrap_or_default();
    let base_weights = ctx.cfg.weights.unwrap_or_default();
    let norm = NormMap::for_field(&inputs.noisy);
    let mut manifest = Manifest::new("ablate", &ctx.cfg.canonical(), seed);
    let mut rows = Vec::new();
    for (i, &lambda) in lambdas.iter().enumerate() {
        let run_dir = ctx.out.join(format!("lambda_{i:02}"));
        std::fs::create_dir_all(&run_dir)
            .map_err(|e| CliError::data(format!("cannot create {}: {e}", run_dir.display())))?;
        let weights = pulsefield_core::training::LossWeights {
            lambda_phys: lambda,
            ..base_weights
        };
        // shared seed: every run starts from the same initialization
        let model = build_model(&mc, norm, seed);
        let outcome = train(&model, &inputs.noisy, &tc, &weights, Some(&physics))?;
        let ckpt = run_dir.join("model.ckpt");
        write_checkpoint(&ckpt, &Checkpoint::Single(outcome.model.clone()))?;
        let log = run_dir.join("train_log.csv");
        write_train_log(&log, &outcome.log)?;
        manifest.add_output(&ctx.out, &ckpt)?;
        manifest.add_log(&ctx.out, &log);
        let pred = sample_field(
            &outcome.model,
            &inputs.noisy.times,
            &inputs.noisy.xs,
            &inputs.noisy.ys,
            inputs.noisy.period,
        );
        let report = metrics_report(&pred, reference, Some(&inputs.noisy), inputs.params.as_ref())?;
        let metrics_path = run_dir.join("metrics.json");
        std::fs::write(
            &metrics_path,
            serde_json::to_string_pretty(&report).expect("report serialize") + "\n",
        )
        .map_err(|e| CliError::data(e.to_string()))?;
        manifest.add_output(&ctx.out, &metrics_path)?;
        println!(
            "ablate: lambda_phys {lambda:.1e} -> rel_decrease field {:.2}%",
            report.rel_decrease_field_pct.unwrap_or(f64::NAN)
        );
        rows.push((lambda, report));
    }
    let csv_path = ctx.out.join("ablation.csv");
    let mut w = BufWriter::new(
        File::create(&csv_path).map_err(|e| CliError::data(e.to_string()))?,
    );
    writeln!(
        w,
        "lambda_phys,rel_decrease_field_pct,rel_decrease_cycle_pct,rel_decrease_profile_pct"
    )
    .map_err(|e| CliError::data(e.to_string()))?;
    for (lambda, report) in &rows {
        writeln!(
            w,
            "{lambda:e},{},{},{}",
            report.rel_decrease_field_pct.unwrap_or(f64::NAN),
            report.rel_decrease_cycle_pct.unwrap_or(f64::NAN),
            report.rel_decrease_profile_pct.unwrap_or(f64::NAN)
        )
        .map_err(|e| CliError::data(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::data(e.to_string()))?;
    manifest.add_output(&ctx.out, &csv_path)?;
    manifest.write(&ctx.out.join("manifest.json"))?;
    Ok(())
}

//! `pulsefield train`: optimize a field model (or the branched pair) against
//! a noisy dataset, then report metrics against the reference.

use std::path::{Path, PathBuf};

use pulsefield_core::field::FlowField;
use pulsefield_core::io::{
    read_checkpoint, read_flowfield, write_checkpoint, write_flowfield, write_train_log,
    Checkpoint, Manifest,
};
use pulsefield_core::model::batch::{sample_field, sample_field_branched};
use pulsefield_core::model::{BranchedModel, EncodingSpec, FieldModel, FlowScales, NormMap};
use pulsefield_core::synthdata::WomersleyParams;
use pulsefield_core::training::{train, train_branched, PhysicsContext, TrainRunError};
use pulsefield_core::verify::metrics_report;

use crate::config::ModelConfig;

use super::{ensure_out_dir, CliError, Ctx};

pub struct Inputs {
    pub noisy: FlowField,
    pub reference: Option<FlowField>,
    pub params: Option<WomersleyParams>,
}

pub fn load_inputs(ctx: &Ctx) -> Result<Inputs, CliError> {
    let io = ctx.cfg.io.clone().unwrap_or_default();
    let noisy_path = io.noisy.unwrap_or_else(|| ctx.out.join("noisy.flowfield"));
    let (noisy, params_noisy) = read_flowfield(&noisy_path)
        .map_err(|e| CliError::data(format!("{}: {e}", noisy_path.display())))?;
    let clean_path = io.clean.unwrap_or_else(|| ctx.out.join("clean.flowfield"));
    let mut reference = None;
    let mut params_ref = None;
    if clean_path.exists() {
        let (f, p) = read_flowfield(&clean_path)
            .map_err(|e| CliError::data(format!("{}: {e}", clean_path.display())))?;
        reference = Some(f);
        params_ref = p;
    }
    let params = params_noisy.or(params_ref).or_else(|| {
        ctx.cfg
            .dataset
            .as_ref()
            .and_then(|d| d.womersley.as_ref())
            .and_then(|w| w.build().ok())
    });
    Ok(Inputs {
        noisy,
        reference,
        params,
    })
}

pub fn build_model(mc: &ModelConfig, norm: NormMap, seed: u64) -> FieldModel {
    let encoding = match (&mc.dims, &mc.sigmas) {
        (Some(d), Some(s)) => EncodingSpec::with_dims(mc.encoding, d, s, seed),
        _ => EncodingSpec::new(mc.encoding, seed),
    };
    FieldModel::init_sized(encoding, mc.activation, norm, seed, mc.hidden, mc.depth)
}

pub fn physics_context(params: Option<&WomersleyParams>) -> Option<PhysicsContext> {
    params.map(|p| PhysicsContext {
        reynolds: p.reynolds,
        scales: FlowScales::from_reynolds(p.radius, p.nu(), p.reynolds),
    })
}

pub fn run(ctx: &Ctx) -> Result<(), CliError> {
    let inputs = load_inputs(ctx)?;
    ensure_out_dir(ctx)?;
    let seed = ctx.cfg.seed();
    let mc = ctx.cfg.model.clone().unwrap_or_default();
    let tc = ctx.cfg.train.unwrap_or_default();
    let weights = ctx.cfg.weights.unwrap_or_default();
    let norm = NormMap::for_field(&inputs.noisy);
    let physics = physics_context(inputs.params.as_ref());
    let ckpt_path = ctx.out.join("model.ckpt");
    let log_path = ctx.out.join("train_log.csv");
    let mut manifest = Manifest::new("train", &ctx.cfg.canonical(), seed);

    let init_ckpt = ctx
        .cfg
        .io
        .as_ref()
        .and_then(|io| io.init_checkpoint.clone());
    let pred = if mc.branched {
        let bm = match load_init(&init_ckpt)? {
            Some(Checkpoint::Branched(b)) => b,
            Some(Checkpoint::Single(_)) => {
                return Err(CliError::config(
                    "init_checkpoint holds a single model but the config asks for branched",
                ))
            }
            None => BranchedModel::init(mc.activation, norm, seed),
        };
        let outcome = train_branched(&bm, &inputs.noisy, &tc, &weights).map_err(|e| {
            persist_failed_branch(&ckpt_path, &e);
            CliError::from(e)
        })?;
        write_checkpoint(&ckpt_path, &Checkpoint::Branched(outcome.model.clone()))?;
        write_train_log(&log_path, &outcome.combiner_log)?;
        let msff_log = ctx.out.join("train_log_msff.csv");
        let van_log = ctx.out.join("train_log_vanilla.csv");
        write_train_log(&msff_log, &outcome.msff_log)?;
        write_train_log(&van_log, &outcome.vanilla_log)?;
        manifest.add_log(&ctx.out, &msff_log);
        manifest.add_log(&ctx.out, &van_log);
        sample_field_branched(
            &outcome.model,
            &inputs.noisy.times,
            &inputs.noisy.xs,
            &inputs.noisy.ys,
            inputs.noisy.period,
        )
    } else {
        let model = match load_init(&init_ckpt)? {
            Some(Checkpoint::Single(m)) => m,
            Some(Checkpoint::Branched(_)) => {
                return Err(CliError::config(
                    "init_checkpoint holds a branched model but the config asks for single",
                ))
            }
            None => build_model(&mc, norm, seed),
        };
        let outcome = match train(&model, &inputs.noisy, &tc, &weights, physics.as_ref()) {
            Ok(o) => o,
            Err(e) => {
                if let TrainRunError::NonFinite { last_good, log, .. } = &e {
                    // keep the last usable state for post-mortem work
                    let _ = write_checkpoint(&ckpt_path, &Checkpoint::Single((**last_good).clone()));
                    let _ = write_train_log(&log_path, log);
                }
                return Err(e.into());
            }
        };
        write_checkpoint(&ckpt_path, &Checkpoint::Single(outcome.model.clone()))?;
        write_train_log(&log_path, &outcome.log)?;
        sample_field(
            &outcome.model,
            &inputs.noisy.times,
            &inputs.noisy.xs,
            &inputs.noisy.ys,
            inputs.noisy.period,
        )
    };
    manifest.add_output(&ctx.out, &ckpt_path)?;
    manifest.add_log(&ctx.out, &log_path);

    let pred_path = ctx.out.join("prediction.flowfield");
    write_flowfield(&pred_path, &pred, inputs.params.as_ref())?;
    manifest.add_output(&ctx.out, &pred_path)?;
    if let Some(reference) = &inputs.reference {
        let report = metrics_report(
            &pred,
            reference,
            Some(&inputs.noisy),
            inputs.params.as_ref(),
        )?;
        let metrics_path = ctx.out.join("metrics.json");
        std::fs::write(
            &metrics_path,
            serde_json::to_string_pretty(&report).expect("report serialize") + "\n",
        )
        .map_err(|e| CliError::data(e.to_string()))?;
        manifest.add_output(&ctx.out, &metrics_path)?;
        println!(
            "train: mse_field {:.3e}, rel_decrease {:.2}%",
            report.mse_field,
            report.rel_decrease_field_pct.unwrap_or(f64::NAN)
        );
    }
    manifest.write(&ctx.out.join("manifest.json"))?;
    Ok(())
}

fn load_init(path: &Option<PathBuf>) -> Result<Option<Checkpoint>, CliError> {
    match path {
        None => Ok(None),
        Some(p) => Ok(Some(read_checkpoint(Path::new(p))?)),
    }
}

fn persist_failed_branch(_ckpt: &Path, _e: &TrainRunError) {
    // branched failures currently surface without a partial checkpoint;
    // stage-two state lives in the combiner and is rebuilt cheaply
}

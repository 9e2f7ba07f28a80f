//! Minibatch optimization loops for single and branched models.
//!
//! Each step estimates the weighted total loss from the shuffled minibatch:
//! the data term over the whole batch, the boundary penalty over the batch's
//! boundary points, and the cycle / total-variation / residual terms over
//! seeded subsamples (the residual on a fixed cadence with compensating
//! weight, keeping the estimator unbiased). All per-step sites are packed
//! into a single forward/backward pass, and for fixed (non-trainable)
//! encodings the Fourier features of the collocation grid are precomputed
//! once. The per-epoch log records the running estimates. Everything is
//! deterministic in (config, seed).

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::TrainError;
use crate::field::{FlowField, Region};
use crate::linalg::Mat;
use crate::model::batch::{forward_batch, mlp_backward, mlp_forward, ModelGrads};
use crate::model::encode_into;
use crate::model::jet::{residual_batch, residual_backward};
use crate::model::{BranchedModel, FieldModel, FlowScales, Layer};
use crate::rng::Rng;

use super::adam::AdamState;
use super::occlusion::compute_occlusion_map;
use super::{classify_regions, CollocationSet, LossWeights, TrainConfig};

/// Physical constants the residual term needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsContext {
    pub reynolds: f64,
    pub scales: FlowScales,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_data: f64,
    pub loss_cycle: f64,
    pub loss_phys: f64,
    pub loss_tv: f64,
    pub loss_occ: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

pub struct TrainOutcome {
    pub model: FieldModel,
    pub log: TrainLog,
}

pub struct BranchedOutcome {
    pub model: BranchedModel,
    pub msff_log: TrainLog,
    pub vanilla_log: TrainLog,
    pub combiner_log: TrainLog,
}

#[derive(Debug, Error)]
pub enum TrainRunError {
    #[error(transparent)]
    Setup(#[from] TrainError),
    /// The optimizer hit a non-finite loss; the payload carries the last
    /// epoch-boundary snapshot so callers can persist a usable checkpoint.
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFinite {
        epoch: usize,
        step: usize,
        last_good: Box<FieldModel>,
        log: Box<TrainLog>,
    },
}

struct EpochAccum {
    data: (f64, usize),
    cycle: (f64, usize),
    phys: (f64, usize),
    tv: (f64, usize),
    occ: (f64, usize),
}

impl EpochAccum {
    fn new() -> Self {
        EpochAccum {
            data: (0.0, 0),
            cycle: (0.0, 0),
            phys: (0.0, 0),
            tv: (0.0, 0),
            occ: (0.0, 0),
        }
    }

    fn mean(v: (f64, usize)) -> f64 {
        if v.1 == 0 {
            0.0
        } else {
            v.0 / v.1 as f64
        }
    }

    fn stats(&self, epoch: usize, w: &LossWeights, wall: f64) -> EpochStats {
        let data = Self::mean(self.data);
        let cycle = Self::mean(self.cycle);
        let phys = Self::mean(self.phys);
        let tv = Self::mean(self.tv);
        let occ = Self::mean(self.occ);
        EpochStats {
            epoch,
            loss_total: w.lambda_data * data
                + w.lambda_cycle * cycle
                + w.lambda_phys * phys
                + w.lambda_tv * tv
                + w.lambda_occ * occ,
            loss_data: data,
            loss_cycle: cycle,
            loss_phys: phys,
            loss_tv: tv,
            loss_occ: occ,
            wall_time_s: wall,
        }
    }
}

fn apply_adam(
    model: &mut FieldModel,
    grads: &ModelGrads,
    adam: &mut AdamState,
    lr: f64,
    lr_modes: f64,
) {
    adam.begin_step();
    let mut off = 0;
    for (l, gl) in model.layers.iter_mut().zip(&grads.layers) {
        adam.update_segment(off, lr, &mut l.w.data, &gl.w.data);
        off += gl.w.data.len();
        adam.update_segment(off, lr, &mut l.b, &gl.b);
        off += gl.b.len();
    }
    if let Some(gm) = &grads.modes {
        for (m, g) in model.encoding.mode_matrices.iter_mut().zip(gm) {
            adam.update_segment(off, lr_modes, &mut m.data, &g.data);
            off += g.data.len();
        }
    }
}

/// Precomputed encode features over the collocation grid, plus one ghost
/// column/row for the +x / +y total-variation offsets.
struct FeatureCache {
    main: Mat,
    ghost_x: Mat,
    ghost_y: Mat,
    /// Time index whose slice equals t0 + T, when the grid covers it.
    cycle_end_ti: Option<usize>,
    dims: [usize; 3], // nt, nx, ny
}

const FEATURE_CACHE_BUDGET_BYTES: usize = 1_500_000_000;

fn build_feature_cache(model: &FieldModel, field: &FlowField) -> Option<FeatureCache> {
    if model.encoding.trainable {
        return None; // features move with the modes
    }
    let feat_len = model.encoding.feature_len();
    let n = field.len();
    if n * feat_len * 8 > FEATURE_CACHE_BUDGET_BYTES {
        return None;
    }
    let (nt, nx, ny) = (field.nt(), field.nx(), field.ny());
    let encode_all = |coords: &[[f64; 3]]| -> Mat {
        let mut m = Mat::zeros(coords.len(), feat_len);
        use rayon::prelude::*;
        m.data
            .par_chunks_mut(feat_len)
            .enumerate()
            .with_min_len(64)
            .for_each(|(i, row)| {
                let vn = model.norm.normalize(coords[i]);
                let mut buf = Vec::with_capacity(feat_len);
                encode_into(&model.encoding, vn, &mut buf);
                row.copy_from_slice(&buf);
            });
        m
    };
    let mut coords = Vec::with_capacity(n);
    for &t in &field.times {
        for &x in &field.xs {
            for &y in &field.ys {
                coords.push([t, x, y]);
            }
        }
    }
    let main = encode_all(&coords);
    let gx = field.xs[nx - 1] + field.dx();
    let mut gx_coords = Vec::with_capacity(nt * ny);
    for &t in &field.times {
        for &y in &field.ys {
            gx_coords.push([t, gx, y]);
        }
    }
    let ghost_x = encode_all(&gx_coords);
    let gy = field.ys[ny - 1] + field.dy();
    let mut gy_coords = Vec::with_capacity(nt * nx);
    for &t in &field.times {
        for &x in &field.xs {
            gy_coords.push([t, x, gy]);
        }
    }
    let ghost_y = encode_all(&gy_coords);
    let t_end = field.times[0] + field.period;
    let cycle_end_ti = ((field.times[nt - 1] - t_end).abs() <= 1e-9 * field.period.max(1e-300))
        .then_some(nt - 1);
    Some(FeatureCache {
        main,
        ghost_x,
        ghost_y,
        cycle_end_ti,
        dims: [nt, nx, ny],
    })
}

/// Trains a field model on the observed field. The physics context is
/// required whenever `w.lambda_phys > 0`. Returns the trained model and the
/// per-epoch loss log; `cfg.epochs == 0` returns the model unchanged.
pub fn train(
    model: &FieldModel,
    field: &FlowField,
    cfg: &TrainConfig,
    w: &LossWeights,
    physics: Option<&PhysicsContext>,
) -> Result<TrainOutcome, TrainRunError> {
    train_salted(model, field, cfg, w, physics, 0)
}

fn train_salted(
    model: &FieldModel,
    field: &FlowField,
    cfg: &TrainConfig,
    w: &LossWeights,
    physics: Option<&PhysicsContext>,
    salt: u64,
) -> Result<TrainOutcome, TrainRunError> {
    cfg.validate().map_err(|e| TrainError::Config(e.to_string()))?;
    w.validate().map_err(|e| TrainError::Config(e.to_string()))?;
    model
        .validate()
        .map_err(|e| TrainError::Config(e.to_string()))?;
    if w.lambda_phys > 0.0 && physics.is_none() {
        return Err(TrainError::Config(
            "physics context required when lambda_phys > 0".into(),
        )
        .into());
    }
    let cs = classify_regions(field, None).map_err(|e| TrainError::Config(e.to_string()))?;
    let mut trained = model.clone();
    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            model: trained,
            log,
        });
    }
    let feats = build_feature_cache(&trained, field);
    let mut adam = AdamState::new(trained.param_count());
    let mut grads = ModelGrads::zeros_like(&trained);
    let mut last_good = trained.clone();
    let base_rng = Rng::new(cfg.seed ^ salt.wrapping_mul(0x9E3779B97F4A7C15));
    let n = cs.points.len();
    let started = Instant::now();
    for epoch in 0..cfg.epochs {
        let mut rng = base_rng.fork(epoch as u64 + 1);
        let mut order: Vec<u32> = (0..n as u32).collect();
        rng.shuffle(&mut order);
        let mut acc = EpochAccum::new();
        for (step, chunk) in order.chunks(cfg.batch).enumerate() {
            grads.clear();
            let losses = run_step(
                &trained,
                &cs,
                cfg,
                w,
                physics,
                feats.as_ref(),
                chunk,
                step,
                &mut rng,
                &mut grads,
            );
            let finite = losses.iter().all(|(l, _)| l.is_finite());
            if !finite {
                return Err(TrainRunError::NonFinite {
                    epoch,
                    step,
                    last_good: Box::new(last_good),
                    log: Box::new(log),
                });
            }
            let [d, c, p, t] = losses;
            acc.data.0 += d.0;
            acc.data.1 += d.1;
            acc.cycle.0 += c.0;
            acc.cycle.1 += c.1;
            acc.phys.0 += p.0;
            acc.phys.1 += p.1;
            acc.tv.0 += t.0;
            acc.tv.1 += t.1;
            apply_adam(&mut trained, &grads, &mut adam, cfg.lr, cfg.lr_modes);
        }
        log.epochs
            .push(acc.stats(epoch, w, started.elapsed().as_secs_f64()));
        last_good = trained.clone();
    }
    Ok(TrainOutcome {
        model: trained,
        log,
    })
}

/// Row layout of one consolidated step:
/// [batch | tv-shifted (tv_k) | cycle at t0 (cyc_k) | cycle at t0+T (cyc_k)].
struct StepLayout {
    batch: usize,
    tv_k: usize,
    cyc_k: usize,
}

impl StepLayout {
    fn rows(&self) -> usize {
        self.batch + self.tv_k + 2 * self.cyc_k
    }
}

#[inline]
fn split_flat(i: usize, nx: usize, ny: usize) -> (usize, usize, usize) {
    (i / (nx * ny), (i / ny) % nx, i % ny)
}

/// One optimization step; returns (value, weight) pairs for the
/// data / cycle / physics / tv estimates of this step.
#[allow(clippy::too_many_arguments)]
fn run_step(
    model: &FieldModel,
    cs: &CollocationSet,
    cfg: &TrainConfig,
    w: &LossWeights,
    physics: Option<&PhysicsContext>,
    feats: Option<&FeatureCache>,
    chunk: &[u32],
    step: usize,
    rng: &mut Rng,
    grads: &mut ModelGrads,
) -> [(f64, usize); 4] {
    let layout = StepLayout {
        batch: chunk.len(),
        tv_k: if w.lambda_tv > 0.0 {
            cfg.tv_batch.min(chunk.len())
        } else {
            0
        },
        cyc_k: if w.lambda_cycle > 0.0 && !cs.cycle_points.is_empty() {
            cfg.cycle_batch.min(cs.cycle_points.len())
        } else {
            0
        },
    };
    let cycle_idx = if layout.cyc_k > 0 {
        rng.sample_indices(cs.cycle_points.len(), layout.cyc_k)
    } else {
        Vec::new()
    };
    let tv_step = if step % 2 == 0 {
        [cs.grid_step[0], 0.0]
    } else {
        [0.0, cs.grid_step[1]]
    };

    let feat_len = model.encoding.feature_len();
    let rows = layout.rows();
    let mut input = Mat::zeros(rows, feat_len);
    let want_vn = model.encoding.trainable;
    let mut vn = want_vn.then(|| Mat::zeros(rows, 3));
    let mut scratch = Vec::with_capacity(feat_len);
    let fill = |row: usize,
                    coords: [f64; 3],
                    cached: Option<&[f64]>,
                    input: &mut Mat,
                    vn: &mut Option<Mat>,
                    scratch: &mut Vec<f64>| {
        match cached {
            Some(src) => input.row_mut(row).copy_from_slice(src),
            None => {
                let nv = model.norm.normalize(coords);
                encode_into(&model.encoding, nv, scratch);
                input.row_mut(row).copy_from_slice(scratch);
                if let Some(v) = vn {
                    v.row_mut(row).copy_from_slice(&nv);
                    return;
                }
                return;
            }
        }
        if let Some(v) = vn {
            let nv = model.norm.normalize(coords);
            v.row_mut(row).copy_from_slice(&nv);
        }
    };

    // batch rows
    for (row, &i) in chunk.iter().enumerate() {
        let p = &cs.points[i as usize];
        let cached = feats.map(|f| f.main.row(i as usize));
        fill(row, p.coords, cached, &mut input, &mut vn, &mut scratch);
    }
    // tv-shifted rows for the leading slice of the (already shuffled) batch,
    // alternating the offset direction per step
    for (k, &i) in chunk.iter().take(layout.tv_k).enumerate() {
        let p = &cs.points[i as usize];
        let coords = [
            p.coords[0],
            p.coords[1] + tv_step[0],
            p.coords[2] + tv_step[1],
        ];
        let cached = feats.map(|f| {
            let (ti, xi, yi) = split_flat(i as usize, f.dims[1], f.dims[2]);
            if tv_step[1] == 0.0 {
                if xi + 1 < f.dims[1] {
                    f.main.row(f.flat(ti, xi + 1, yi))
                } else {
                    f.ghost_x.row(ti * f.dims[2] + yi)
                }
            } else if yi + 1 < f.dims[2] {
                f.main.row(f.flat(ti, xi, yi + 1))
            } else {
                f.ghost_y.row(ti * f.dims[1] + xi)
            }
        });
        fill(
            layout.batch + k,
            coords,
            cached,
            &mut input,
            &mut vn,
            &mut scratch,
        );
    }
    // cycle rows: spatial points at t0 and t0 + T
    let t0 = cs.t_start;
    for (k, &ci) in cycle_idx.iter().enumerate() {
        let [x, y] = cs.cycle_points[ci];
        let cached0 = feats.map(|f| {
            let (xi, yi) = (ci / f.dims[2], ci % f.dims[2]);
            f.main.row(f.flat(0, xi, yi))
        });
        fill(
            layout.batch + layout.tv_k + k,
            [t0, x, y],
            cached0,
            &mut input,
            &mut vn,
            &mut scratch,
        );
        let cached1 = feats.and_then(|f| {
            f.cycle_end_ti.map(|ti| {
                let (xi, yi) = (ci / f.dims[2], ci % f.dims[2]);
                f.main.row(f.flat(ti, xi, yi))
            })
        });
        fill(
            layout.batch + layout.tv_k + layout.cyc_k + k,
            [t0 + cs.period, x, y],
            cached1,
            &mut input,
            &mut vn,
            &mut scratch,
        );
    }

    let cache = mlp_forward(&model.layers, model.activation, &input);
    let out = cache.act.last().unwrap();
    let mut dout = Mat::zeros(rows, 2);

    // data fidelity over the whole batch
    let mut data_sum = 0.0;
    if w.lambda_data > 0.0 {
        let scale = w.lambda_data * 2.0 / layout.batch as f64;
        for (row, &i) in chunk.iter().enumerate() {
            let p = &cs.points[i as usize];
            let du = out.get(row, 0) - p.observed[0];
            let dv = out.get(row, 1) - p.observed[1];
            data_sum += du * du + dv * dv;
            dout.set(row, 0, scale * du);
            dout.set(row, 1, scale * dv);
        }
    }

    // boundary no-slip penalty (part of the physics term)
    let mut phys_sum = 0.0;
    let mut phys_n = 0;
    if w.lambda_phys > 0.0 {
        let brows: Vec<usize> = chunk
            .iter()
            .enumerate()
            .filter(|(_, &i)| cs.points[i as usize].region == Region::Boundary)
            .map(|(row, _)| row)
            .collect();
        if !brows.is_empty() {
            let scale = w.lambda_phys * 2.0 / brows.len() as f64;
            let mut bsum = 0.0;
            for &row in &brows {
                let (u, v) = (out.get(row, 0), out.get(row, 1));
                bsum += u * u + v * v;
                dout.set(row, 0, dout.get(row, 0) + scale * u);
                dout.set(row, 1, dout.get(row, 1) + scale * v);
            }
            phys_sum += bsum / brows.len() as f64;
            phys_n = 1;
        }
    }

    // total variation pairs
    let mut tv = (0.0, 0);
    if layout.tv_k > 0 {
        let scale = w.lambda_tv * 2.0 / layout.tv_k as f64;
        let mut sum = 0.0;
        for k in 0..layout.tv_k {
            let shifted = layout.batch + k;
            let du = out.get(k, 0) - out.get(shifted, 0);
            let dv = out.get(k, 1) - out.get(shifted, 1);
            sum += du * du + dv * dv;
            dout.set(k, 0, dout.get(k, 0) + scale * du);
            dout.set(k, 1, dout.get(k, 1) + scale * dv);
            dout.set(shifted, 0, -scale * du);
            dout.set(shifted, 1, -scale * dv);
        }
        tv = (sum / layout.tv_k as f64, 1);
    }

    // cyclic consistency pairs
    let mut cycle = (0.0, 0);
    if layout.cyc_k > 0 {
        let scale = w.lambda_cycle * 2.0 / layout.cyc_k as f64;
        let mut sum = 0.0;
        for k in 0..layout.cyc_k {
            let r0 = layout.batch + layout.tv_k + k;
            let r1 = r0 + layout.cyc_k;
            let du = out.get(r0, 0) - out.get(r1, 0);
            let dv = out.get(r0, 1) - out.get(r1, 1);
            sum += du * du + dv * dv;
            dout.set(r0, 0, scale * du);
            dout.set(r0, 1, scale * dv);
            dout.set(r1, 0, -scale * du);
            dout.set(r1, 1, -scale * dv);
        }
        cycle = (sum / layout.cyc_k as f64, 1);
    }

    // interior residual on a cadence, with compensating weight
    if w.lambda_phys > 0.0 && cfg.physics_batch > 0 && step % cfg.physics_every == 0 {
        let ctx = physics.expect("checked in train()");
        let frows: Vec<usize> = chunk
            .iter()
            .map(|&i| i as usize)
            .filter(|&i| cs.points[i].region == Region::Fluid)
            .take(cfg.physics_batch)
            .collect();
        if !frows.is_empty() {
            let fcoords: Vec<[f64; 3]> = frows.iter().map(|&i| cs.points[i].coords).collect();
            let rb = residual_batch(model, &fcoords, ctx.reynolds, &ctx.scales);
            let nf = frows.len() as f64;
            let interior = rb.residual.iter().map(|r| r * r).sum::<f64>() / nf
                + rb.divergence.iter().map(|d| d * d).sum::<f64>() / nf;
            // cadence compensation keeps the expected gradient at lambda_phys
            let gscale = w.lambda_phys * cfg.physics_every as f64 * 2.0 / nf;
            let dr: Vec<f64> = rb.residual.iter().map(|r| gscale * r).collect();
            let dd: Vec<f64> = rb.divergence.iter().map(|d| gscale * d).collect();
            residual_backward(model, &rb, &dr, &dd, ctx.reynolds, grads);
            phys_sum += interior;
            phys_n = phys_n.max(1);
        }
    }

    let dfeats = mlp_backward(
        &model.layers,
        model.activation,
        &input,
        &cache,
        &dout,
        &mut grads.layers,
        want_vn,
    );
    if let (Some(dfeats), Some(modes), Some(vn)) = (dfeats, grads.modes.as_mut(), vn.as_ref()) {
        accumulate_mode_grads_rows(model, &input, vn, &dfeats, modes);
    }

    [
        (data_sum / layout.batch as f64, 1),
        cycle,
        (phys_sum, phys_n),
        tv,
    ]
}

/// Mode-matrix gradients for trainable Fourier features, over every row of
/// the consolidated step input.
fn accumulate_mode_grads_rows(
    model: &FieldModel,
    feats: &Mat,
    vn: &Mat,
    dfeats: &Mat,
    mode_grads: &mut [Mat],
) {
    let n = feats.rows;
    let mut offset = 0;
    for (mi, m) in model.encoding.mode_matrices.iter().enumerate() {
        let d = m.rows;
        for j in 0..d {
            let mut acc = [0.0f64; 3];
            for i in 0..n {
                let c = feats.get(i, offset + j);
                let s = feats.get(i, offset + d + j);
                let gc = dfeats.get(i, offset + j);
                let gs = dfeats.get(i, offset + d + j);
                let coef = std::f64::consts::TAU * (-gc * s + gs * c);
                let vrow = vn.row(i);
                acc[0] += coef * vrow[0];
                acc[1] += coef * vrow[1];
                acc[2] += coef * vrow[2];
            }
            for k in 0..3 {
                let cur = mode_grads[mi].get(j, k);
                mode_grads[mi].set(j, k, cur + acc[k]);
            }
        }
        offset += 2 * d;
    }
}

impl FeatureCache {
    #[inline]
    fn flat(&self, ti: usize, xi: usize, yi: usize) -> usize {
        (ti * self.dims[1] + xi) * self.dims[2] + yi
    }
}

/// Two-stage branched training: the MSFF and vanilla branches fit the data
/// with total variation for `stage1_epochs`, then the branches freeze and
/// the combiner trains against the occlusion blend for the remaining
/// `epochs - stage1_epochs`.
pub fn train_branched(
    bm: &BranchedModel,
    field: &FlowField,
    cfg: &TrainConfig,
    w: &LossWeights,
) -> Result<BranchedOutcome, TrainRunError> {
    cfg.validate().map_err(|e| TrainError::Config(e.to_string()))?;
    let stage1 = TrainConfig {
        epochs: cfg.stage1_epochs,
        ..*cfg
    };
    let branch_weights = LossWeights {
        lambda_data: w.lambda_data,
        lambda_cycle: 0.0,
        lambda_phys: 0.0,
        lambda_tv: w.lambda_tv,
        lambda_occ: 0.0,
    };
    let msff_out = train_salted(&bm.msff, field, &stage1, &branch_weights, None, 1)?;
    let vanilla_out = train_salted(&bm.vanilla, field, &stage1, &branch_weights, None, 2)?;
    let mut out = BranchedModel {
        msff: msff_out.model,
        vanilla: vanilla_out.model,
        combiner: bm.combiner.clone(),
    };
    let stage2_epochs = cfg.epochs.saturating_sub(cfg.stage1_epochs);
    let combiner_log = train_combiner(&mut out, field, cfg, w, stage2_epochs)?;
    Ok(BranchedOutcome {
        model: out,
        msff_log: msff_out.log,
        vanilla_log: vanilla_out.log,
        combiner_log,
    })
}

fn train_combiner(
    bm: &mut BranchedModel,
    field: &FlowField,
    cfg: &TrainConfig,
    w: &LossWeights,
    epochs: usize,
) -> Result<TrainLog, TrainRunError> {
    let cs = classify_regions(field, None).map_err(|e| TrainError::Config(e.to_string()))?;
    let lam = compute_occlusion_map(field)?;
    let mut log = TrainLog::default();
    if epochs == 0 {
        return Ok(log);
    }
    // frozen branches: predictions and blend targets are constants
    let coords: Vec<[f64; 3]> = cs.points.iter().map(|p| p.coords).collect();
    let cm = forward_batch(&bm.msff, &coords);
    let cv = forward_batch(&bm.vanilla, &coords);
    let n = coords.len();
    let mut inputs = Mat::zeros(n, 7);
    let mut targets = Mat::zeros(n, 2);
    for (i, &c) in coords.iter().enumerate() {
        let vn = bm.msff.norm.normalize(c);
        let row = inputs.row_mut(i);
        row[0] = vn[0];
        row[1] = vn[1];
        row[2] = vn[2];
        row[3] = cm.output().get(i, 0);
        row[4] = cm.output().get(i, 1);
        row[5] = cv.output().get(i, 0);
        row[6] = cv.output().get(i, 1);
        let l = lam.nearest(c);
        for comp in 0..2 {
            let t = l * cm.output().get(i, comp) + (1.0 - l) * cv.output().get(i, comp);
            targets.set(i, comp, t);
        }
    }
    let n_params: usize = bm.combiner.param_count();
    let mut adam = AdamState::new(n_params);
    let mut grads: Vec<Layer> = bm
        .combiner
        .layers
        .iter()
        .map(|l| Layer::zeros(l.w.rows, l.w.cols))
        .collect();
    let base_rng = Rng::new(cfg.seed ^ COMBINER_SALT);
    let started = Instant::now();
    for epoch in 0..epochs {
        let mut rng = base_rng.fork(epoch as u64 + 1);
        let mut order: Vec<u32> = (0..n as u32).collect();
        rng.shuffle(&mut order);
        let mut acc = EpochAccum::new();
        for (step, chunk) in order.chunks(cfg.batch).enumerate() {
            for g in grads.iter_mut() {
                g.w.fill(0.0);
                g.b.iter_mut().for_each(|b| *b = 0.0);
            }
            let k = chunk.len();
            let mut bin = Mat::zeros(k, 7);
            for (row, &i) in chunk.iter().enumerate() {
                bin.row_mut(row).copy_from_slice(inputs.row(i as usize));
            }
            let cache = mlp_forward(&bm.combiner.layers, bm.combiner.activation, &bin);
            let outm = cache.act.last().unwrap();
            let scale = w.lambda_occ * 2.0 / k as f64;
            let mut dout = Mat::zeros(k, 2);
            let mut sum = 0.0;
            for (row, &i) in chunk.iter().enumerate() {
                for comp in 0..2 {
                    let d = outm.get(row, comp) - targets.get(i as usize, comp);
                    sum += d * d;
                    dout.set(row, comp, scale * d);
                }
            }
            let occ = sum / k as f64;
            if !occ.is_finite() {
                return Err(TrainRunError::NonFinite {
                    epoch,
                    step,
                    last_good: Box::new(bm.msff.clone()),
                    log: Box::new(log),
                });
            }
            mlp_backward(
                &bm.combiner.layers,
                bm.combiner.activation,
                &bin,
                &cache,
                &dout,
                &mut grads,
                false,
            );
            adam.begin_step();
            let mut off = 0;
            for (l, gl) in bm.combiner.layers.iter_mut().zip(&grads) {
                adam.update_segment(off, cfg.lr_combiner, &mut l.w.data, &gl.w.data);
                off += gl.w.data.len();
                adam.update_segment(off, cfg.lr_combiner, &mut l.b, &gl.b);
                off += gl.b.len();
            }
            acc.occ.0 += occ;
            acc.occ.1 += 1;
        }
        log.epochs
            .push(acc.stats(epoch, w, started.elapsed().as_secs_f64()));
    }
    Ok(log)
}

const COMBINER_SALT: u64 = 0x636f6d62696e6572;

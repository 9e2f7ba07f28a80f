//! The loss terms: data fidelity, cyclic consistency, physics residual,
//! total variation, and the occlusion blend for the branched model.

use serde::{Deserialize, Serialize};

use crate::error::TrainError;
use crate::linalg::Mat;
use crate::model::batch::{forward_batch, mlp_forward, ModelGrads};
use crate::model::jet::{residual_batch, residual_backward};
use crate::model::{BranchedModel, FieldModel};

use super::occlusion::OcclusionMap;
use super::{CollocationSet, LossWeights};

/// Unweighted values of each loss term. Terms whose weight is zero are not
/// evaluated by [`total_loss`] and report as zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data: f64,
    pub cycle: f64,
    pub phys: f64,
    pub tv: f64,
    pub occ: f64,
}

impl LossBreakdown {
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.lambda_data * self.data
            + w.lambda_cycle * self.cycle
            + w.lambda_phys * self.phys
            + w.lambda_tv * self.tv
            + w.lambda_occ * self.occ
    }
}

fn mean_sq_rows(a: &Mat, b: &Mat) -> f64 {
    debug_assert_eq!(a.rows, b.rows);
    let mut sum = 0.0;
    for i in 0..a.rows {
        let (ra, rb) = (a.row(i), b.row(i));
        let du = ra[0] - rb[0];
        let dv = ra[1] - rb[1];
        sum += du * du + dv * dv;
    }
    sum / a.rows as f64
}

/// Mean squared error between predictions and observations over all points.
pub fn loss_data(model: &FieldModel, cs: &CollocationSet) -> Result<f64, TrainError> {
    if cs.is_empty() {
        return Err(TrainError::Degenerate("empty collocation set".into()));
    }
    let coords: Vec<[f64; 3]> = cs.points.iter().map(|p| p.coords).collect();
    let cache = forward_batch(model, &coords);
    let out = cache.output();
    let mut sum = 0.0;
    for (i, p) in cs.points.iter().enumerate() {
        let du = out.get(i, 0) - p.observed[0];
        let dv = out.get(i, 1) - p.observed[1];
        sum += du * du + dv * dv;
    }
    Ok(sum / cs.points.len() as f64)
}

/// Mean squared gap between the model at t_start and t_start + period over
/// the spatial cycle points.
pub fn loss_cycle(model: &FieldModel, cs: &CollocationSet, period: f64) -> Result<f64, TrainError> {
    if cs.cycle_points.is_empty() {
        return Err(TrainError::Degenerate("empty cycle set".into()));
    }
    let t0 = cs.t_start;
    let a: Vec<[f64; 3]> = cs.cycle_points.iter().map(|p| [t0, p[0], p[1]]).collect();
    let b: Vec<[f64; 3]> = cs
        .cycle_points
        .iter()
        .map(|p| [t0 + period, p[0], p[1]])
        .collect();
    let ca = forward_batch(model, &a);
    let cb = forward_batch(model, &b);
    Ok(mean_sq_rows(ca.output(), cb.output()))
}

/// Physics term: mean squared Navier-Stokes residual plus mean squared
/// divergence over the fluid region, plus the mean squared velocity on the
/// boundary. Requires scales on the collocation set.
pub fn loss_phys(model: &FieldModel, cs: &CollocationSet, reynolds: f64) -> Result<f64, TrainError> {
    let scales = cs
        .scales
        .ok_or_else(|| TrainError::Config("collocation set has no flow scales".into()))?;
    let fluid = cs.fluid_indices();
    let boundary = cs.boundary_indices();
    if fluid.is_empty() || boundary.is_empty() {
        return Err(TrainError::Degenerate(
            "physics loss needs both fluid and boundary points".into(),
        ));
    }
    let coords: Vec<[f64; 3]> = fluid.iter().map(|&i| cs.points[i].coords).collect();
    let rb = residual_batch(model, &coords, reynolds, &scales);
    let n = fluid.len() as f64;
    let mean_r2 = rb.residual.iter().map(|r| r * r).sum::<f64>() / n;
    let mean_d2 = rb.divergence.iter().map(|d| d * d).sum::<f64>() / n;
    let bcoords: Vec<[f64; 3]> = boundary.iter().map(|&i| cs.points[i].coords).collect();
    let bc = forward_batch(model, &bcoords);
    let out = bc.output();
    let mean_b = (0..out.rows)
        .map(|i| {
            let r = out.row(i);
            r[0] * r[0] + r[1] * r[1]
        })
        .sum::<f64>()
        / boundary.len() as f64;
    Ok(mean_r2 + mean_d2 + mean_b)
}

/// Mean squared difference between the model at each point and at the point
/// shifted by the spatial offset `step` = (dx, dy).
pub fn loss_tv(model: &FieldModel, cs: &CollocationSet, step: [f64; 2]) -> Result<f64, TrainError> {
    if cs.is_empty() {
        return Err(TrainError::Degenerate("empty collocation set".into()));
    }
    let coords: Vec<[f64; 3]> = cs.points.iter().map(|p| p.coords).collect();
    let shifted: Vec<[f64; 3]> = cs
        .points
        .iter()
        .map(|p| [p.coords[0], p.coords[1] + step[0], p.coords[2] + step[1]])
        .collect();
    let ca = forward_batch(model, &coords);
    let cb = forward_batch(model, &shifted);
    Ok(mean_sq_rows(ca.output(), cb.output()))
}

/// Weighted total with its per-term breakdown. The total-variation term
/// averages one-grid-spacing offsets in +x and +y; the cycle term uses the
/// set's period; zero-weighted terms are skipped.
pub fn total_loss(
    model: &FieldModel,
    cs: &CollocationSet,
    w: &LossWeights,
    reynolds: f64,
) -> Result<(f64, LossBreakdown), TrainError> {
    let mut b = LossBreakdown::default();
    if w.lambda_data > 0.0 {
        b.data = loss_data(model, cs)?;
    }
    if w.lambda_cycle > 0.0 {
        b.cycle = loss_cycle(model, cs, cs.period)?;
    }
    if w.lambda_phys > 0.0 {
        b.phys = loss_phys(model, cs, reynolds)?;
    }
    if w.lambda_tv > 0.0 {
        let tx = loss_tv(model, cs, [cs.grid_step[0], 0.0])?;
        let ty = loss_tv(model, cs, [0.0, cs.grid_step[1]])?;
        b.tv = 0.5 * (tx + ty);
    }
    Ok((b.total(w), b))
}

/// Full-set gradient of the weighted total loss with respect to the model
/// parameters, alongside the breakdown. This is the deterministic reference
/// route; the trainer estimates the same gradient from minibatches.
pub fn total_loss_with_grads(
    model: &FieldModel,
    cs: &CollocationSet,
    w: &LossWeights,
    reynolds: f64,
) -> Result<(LossBreakdown, ModelGrads), TrainError> {
    let mut grads = ModelGrads::zeros_like(model);
    let mut b = LossBreakdown::default();
    let n = cs.points.len() as f64;
    let coords: Vec<[f64; 3]> = cs.points.iter().map(|p| p.coords).collect();

    // data + boundary adjoints share the main forward pass
    let cache = forward_batch(model, &coords);
    let out = cache.output();
    let mut dout = Mat::zeros(out.rows, 2);
    if w.lambda_data > 0.0 {
        let mut sum = 0.0;
        for (i, p) in cs.points.iter().enumerate() {
            let du = out.get(i, 0) - p.observed[0];
            let dv = out.get(i, 1) - p.observed[1];
            sum += du * du + dv * dv;
            dout.set(i, 0, w.lambda_data * 2.0 / n * du);
            dout.set(i, 1, w.lambda_data * 2.0 / n * dv);
        }
        b.data = sum / n;
    }
    let boundary = cs.boundary_indices();
    if w.lambda_phys > 0.0 && !boundary.is_empty() {
        let nb = boundary.len() as f64;
        let mut bsum = 0.0;
        for &i in &boundary {
            let (u, v) = (out.get(i, 0), out.get(i, 1));
            bsum += u * u + v * v;
            dout.set(i, 0, dout.get(i, 0) + w.lambda_phys * 2.0 / nb * u);
            dout.set(i, 1, dout.get(i, 1) + w.lambda_phys * 2.0 / nb * v);
        }
        b.phys += bsum / nb;
    }

    // total variation in both directions
    if w.lambda_tv > 0.0 {
        for (dir, step) in [
            [cs.grid_step[0], 0.0],
            [0.0, cs.grid_step[1]],
        ]
        .iter()
        .enumerate()
        {
            let shifted: Vec<[f64; 3]> = cs
                .points
                .iter()
                .map(|p| [p.coords[0], p.coords[1] + step[0], p.coords[2] + step[1]])
                .collect();
            let cb = forward_batch(model, &shifted);
            let outb = cb.output();
            let mut sum = 0.0;
            let mut dshift = Mat::zeros(outb.rows, 2);
            let scale = 0.5 * w.lambda_tv * 2.0 / n;
            for i in 0..out.rows {
                let du = out.get(i, 0) - outb.get(i, 0);
                let dv = out.get(i, 1) - outb.get(i, 1);
                sum += du * du + dv * dv;
                dout.set(i, 0, dout.get(i, 0) + scale * du);
                dout.set(i, 1, dout.get(i, 1) + scale * dv);
                dshift.set(i, 0, -scale * du);
                dshift.set(i, 1, -scale * dv);
            }
            crate::model::batch::backward_batch(model, &cb, &dshift, &mut grads);
            b.tv += 0.5 * sum / n;
            let _ = dir;
        }
    }
    crate::model::batch::backward_batch(model, &cache, &dout, &mut grads);

    // cycle
    if w.lambda_cycle > 0.0 && !cs.cycle_points.is_empty() {
        let t0 = cs.t_start;
        let a: Vec<[f64; 3]> = cs.cycle_points.iter().map(|p| [t0, p[0], p[1]]).collect();
        let bb: Vec<[f64; 3]> = cs
            .cycle_points
            .iter()
            .map(|p| [t0 + cs.period, p[0], p[1]])
            .collect();
        let ca = forward_batch(model, &a);
        let cb = forward_batch(model, &bb);
        let nc = cs.cycle_points.len() as f64;
        let mut da = Mat::zeros(ca.output().rows, 2);
        let mut db = Mat::zeros(cb.output().rows, 2);
        let mut sum = 0.0;
        for i in 0..da.rows {
            let du = ca.output().get(i, 0) - cb.output().get(i, 0);
            let dv = ca.output().get(i, 1) - cb.output().get(i, 1);
            sum += du * du + dv * dv;
            da.set(i, 0, w.lambda_cycle * 2.0 / nc * du);
            da.set(i, 1, w.lambda_cycle * 2.0 / nc * dv);
            db.set(i, 0, -w.lambda_cycle * 2.0 / nc * du);
            db.set(i, 1, -w.lambda_cycle * 2.0 / nc * dv);
        }
        b.cycle = sum / nc;
        crate::model::batch::backward_batch(model, &ca, &da, &mut grads);
        crate::model::batch::backward_batch(model, &cb, &db, &mut grads);
    }

    // interior physics terms
    if w.lambda_phys > 0.0 {
        let scales = cs
            .scales
            .ok_or_else(|| TrainError::Config("collocation set has no flow scales".into()))?;
        let fluid = cs.fluid_indices();
        if fluid.is_empty() {
            return Err(TrainError::Degenerate("no fluid points".into()));
        }
        let fcoords: Vec<[f64; 3]> = fluid.iter().map(|&i| cs.points[i].coords).collect();
        let rb = residual_batch(model, &fcoords, reynolds, &scales);
        let nf = fluid.len() as f64;
        b.phys += rb.residual.iter().map(|r| r * r).sum::<f64>() / nf
            + rb.divergence.iter().map(|d| d * d).sum::<f64>() / nf;
        let dr: Vec<f64> = rb
            .residual
            .iter()
            .map(|r| w.lambda_phys * 2.0 / nf * r)
            .collect();
        let dd: Vec<f64> = rb
            .divergence
            .iter()
            .map(|d| w.lambda_phys * 2.0 / nf * d)
            .collect();
        residual_backward(model, &rb, &dr, &dd, reynolds, &mut grads);
    }
    Ok((b, grads))
}

/// Occlusion blend loss for the branched model: the combiner output against
/// the Lambda-weighted mix of the MSFF branch (u) and vanilla branch (w).
pub fn loss_occ(
    bm: &BranchedModel,
    cs: &CollocationSet,
    lam: &OcclusionMap,
) -> Result<f64, TrainError> {
    if cs.is_empty() {
        return Err(TrainError::Degenerate("empty collocation set".into()));
    }
    let coords: Vec<[f64; 3]> = cs.points.iter().map(|p| p.coords).collect();
    let cm = forward_batch(&bm.msff, &coords);
    let cv = forward_batch(&bm.vanilla, &coords);
    let mut input = Mat::zeros(coords.len(), 7);
    for (i, &c) in coords.iter().enumerate() {
        let vn = bm.msff.norm.normalize(c);
        let row = input.row_mut(i);
        row[0] = vn[0];
        row[1] = vn[1];
        row[2] = vn[2];
        row[3] = cm.output().get(i, 0);
        row[4] = cm.output().get(i, 1);
        row[5] = cv.output().get(i, 0);
        row[6] = cv.output().get(i, 1);
    }
    let cc = mlp_forward(&bm.combiner.layers, bm.combiner.activation, &input);
    let out = cc.act.last().unwrap();
    let mut sum = 0.0;
    for (i, &c) in coords.iter().enumerate() {
        let l = lam.nearest(c);
        for comp in 0..2 {
            let target = l * cm.output().get(i, comp) + (1.0 - l) * cv.output().get(i, comp);
            let d = out.get(i, comp) - target;
            sum += d * d;
        }
    }
    Ok(sum / coords.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Region;
    use crate::model::{Activation, EncodingKind, EncodingSpec, FlowScales, NormMap};
    use crate::rng::Rng;
    use crate::synthdata::{default_params, generate_field, GridSpec};
    use crate::testkit::{constant_model, linear_model};
    use crate::training::classify_regions;

    fn small_cs() -> CollocationSet {
        let p = default_params(2.77).unwrap();
        let f = generate_field(
            &p,
            &GridSpec {
                nx: 6,
                ny: 9,
                nt: 5,
                x_extent: 0.04,
            },
            1,
        )
        .unwrap();
        classify_regions(&f, None)
            .unwrap()
            .with_scales(FlowScales::from_reynolds(p.radius, p.nu(), p.reynolds))
    }

    /// Collocation set with hand-set observations on a unit grid.
    fn toy_cs(obs: [f64; 2], n: usize) -> CollocationSet {
        let points = (0..n)
            .map(|i| CollocPoint {
                coords: [0.1 * i as f64, 0.2, 0.3],
                observed: obs,
                region: Region::Fluid,
            })
            .collect();
        CollocationSet {
            points,
            cycle_points: vec![[0.2, 0.3]],
            period: 1.0,
            t_start: 0.0,
            grid_step: [0.1, 0.1],
            scales: None,
        }
    }

    use super::super::CollocPoint;

    #[test]
    fn data_loss_zero_for_perfect_model() {
        let m = constant_model([0.25, -0.1]);
        let cs = toy_cs([0.25, -0.1], 4);
        assert_eq!(loss_data(&m, &cs).unwrap(), 0.0);
    }

    #[test]
    fn data_loss_unit_case() {
        // zero model against observations (1, 0) at 4 points
        let m = constant_model([0.0, 0.0]);
        let cs = toy_cs([1.0, 0.0], 4);
        assert_eq!(loss_data(&m, &cs).unwrap(), 1.0);
    }

    #[test]
    fn data_loss_matches_direct_reimplementation() {
        let m = linear_model([[0.1, 0.2, -0.3, 0.5], [0.0, -0.1, 0.4, 0.2]]);
        let mut rng = Rng::new(8);
        let points: Vec<CollocPoint> = (0..10)
            .map(|_| CollocPoint {
                coords: [rng.uniform(), rng.uniform(), rng.uniform()],
                observed: [rng.normal(), rng.normal()],
                region: Region::Fluid,
            })
            .collect();
        let cs = CollocationSet {
            points: points.clone(),
            cycle_points: vec![[0.0, 0.0]],
            period: 1.0,
            t_start: 0.0,
            grid_step: [0.1, 0.1],
            scales: None,
        };
        let got = loss_data(&m, &cs).unwrap();
        // independent two-line oracle
        let expect = points
            .iter()
            .map(|p| {
                let o = m.predict(p.coords).unwrap();
                (o[0] - p.observed[0]).powi(2) + (o[1] - p.observed[1]).powi(2)
            })
            .sum::<f64>()
            / points.len() as f64;
        assert!((got - expect).abs() <= 1e-12 * (1.0 + expect));
    }

    #[test]
    fn empty_set_rejected() {
        let m = constant_model([0.0, 0.0]);
        let cs = CollocationSet {
            points: vec![],
            cycle_points: vec![],
            period: 1.0,
            t_start: 0.0,
            grid_step: [0.1, 0.1],
            scales: None,
        };
        assert!(loss_data(&m, &cs).is_err());
        assert!(loss_cycle(&m, &cs, 1.0).is_err());
    }

    #[test]
    fn cycle_loss_zero_for_time_independent_model() {
        let m = linear_model([[0.3, 0.0, 0.5, -0.2], [0.0, 0.0, 0.1, 0.1]]);
        let cs = small_cs();
        let l = loss_cycle(&m, &cs, cs.period).unwrap();
        assert!(l <= 1e-25, "cycle loss {l}");
    }

    #[test]
    fn cycle_loss_linear_drift() {
        // u = t, period 1: (u(T) - u(0))^2 = 1
        let m = linear_model([[0.0, 1.0, 0.0, 0.0], [0.0; 4]]);
        let cs = toy_cs([0.0, 0.0], 3);
        let l = loss_cycle(&m, &cs, 1.0).unwrap();
        assert!((l - 1.0).abs() <= 1e-12, "cycle loss {l}");
    }

    #[test]
    fn cycle_loss_zero_for_periodic_model() {
        // single Fourier mode along t with unit frequency over the norm cube
        let spec = EncodingSpec {
            kind: EncodingKind::Rff,
            mode_matrices: vec![Mat::from_rows(vec![vec![1.0, 0.0, 0.0]])],
            sigmas: vec![1.0],
            trainable: false,
            seed: 0,
        };
        let mut m = crate::model::FieldModel::init_sized(
            spec,
            Activation::LeakyRelu,
            NormMap::identity(),
            0,
            4,
            1,
        );
        // output u = sin feature passed through the paired-leaky trick
        for l in &mut m.layers {
            l.w.fill(0.0);
            l.b.iter_mut().for_each(|b| *b = 0.0);
        }
        let gain = 1.0 / (1.0 + crate::model::LEAKY_SLOPE);
        m.layers[0].w.set(0, 1, 1.0); // +sin
        m.layers[0].w.set(1, 1, -1.0); // -sin
        m.layers[1].w.set(0, 0, gain);
        m.layers[1].w.set(0, 1, -gain);
        // period of sin(2 pi t) is exactly 1 in normalized time
        let points = vec![CollocPoint {
            coords: [0.0, 0.5, 0.5],
            observed: [0.0, 0.0],
            region: Region::Fluid,
        }];
        let cs = CollocationSet {
            points,
            cycle_points: vec![[0.5, 0.5], [0.1, 0.9]],
            period: 1.0,
            t_start: 0.0,
            grid_step: [0.1, 0.1],
            scales: None,
        };
        let l = loss_cycle(&m, &cs, 1.0).unwrap();
        assert!(l <= 1e-24, "cycle loss {l}");
    }

    #[test]
    fn phys_loss_zero_model() {
        let m = constant_model([0.0, 0.0]);
        let cs = small_cs();
        assert_eq!(loss_phys(&m, &cs, 500.0).unwrap(), 0.0);
    }

    #[test]
    fn phys_loss_constant_model_is_boundary_term() {
        let m = constant_model([0.3, -0.4]);
        let cs = small_cs();
        let l = loss_phys(&m, &cs, 500.0).unwrap();
        let expect = 0.3f64 * 0.3 + 0.4 * 0.4;
        assert!((l - expect).abs() <= 1e-12, "{l} vs {expect}");
    }

    #[test]
    fn tv_loss_constant_model_zero() {
        let m = constant_model([1.0, 2.0]);
        let cs = small_cs();
        assert_eq!(loss_tv(&m, &cs, [0.1, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn tv_loss_linear_model() {
        // u = x with offset (0.1, 0): each difference is 0.1
        let m = linear_model([[0.0, 0.0, 1.0, 0.0], [0.0; 4]]);
        let cs = toy_cs([0.0, 0.0], 5);
        let l = loss_tv(&m, &cs, [0.1, 0.0]).unwrap();
        assert!((l - 0.01).abs() <= 1e-14, "tv {l}");
    }

    #[test]
    fn tv_loss_matches_direct_reimplementation() {
        let m = linear_model([[0.1, -0.4, 0.8, 0.3], [0.2, 0.5, -0.2, 0.9]]);
        let cs = small_cs();
        let step = [cs.grid_step[0], 0.0];
        let got = loss_tv(&m, &cs, step).unwrap();
        let expect = cs
            .points
            .iter()
            .map(|p| {
                let a = m.predict(p.coords).unwrap();
                let b = m
                    .predict([p.coords[0], p.coords[1] + step[0], p.coords[2]])
                    .unwrap();
                (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
            })
            .sum::<f64>()
            / cs.points.len() as f64;
        assert!((got - expect).abs() <= 1e-12 * (1.0 + expect));
    }

    #[test]
    fn total_loss_weighted_sum_and_breakdown() {
        let m = linear_model([[0.05, 0.1, -0.2, 0.4], [0.0, 0.2, 0.1, -0.3]]);
        let cs = small_cs();
        let w = LossWeights::default();
        let (total, b) = total_loss(&m, &cs, &w, 500.0).unwrap();
        assert!((total - b.total(&w)).abs() <= 1e-12 * (1.0 + total.abs()));
        // hand-computed sum from the individual operations
        let expect = w.lambda_data * loss_data(&m, &cs).unwrap()
            + w.lambda_cycle * loss_cycle(&m, &cs, cs.period).unwrap()
            + w.lambda_phys * loss_phys(&m, &cs, 500.0).unwrap()
            + w.lambda_tv
                * 0.5
                * (loss_tv(&m, &cs, [cs.grid_step[0], 0.0]).unwrap()
                    + loss_tv(&m, &cs, [0.0, cs.grid_step[1]]).unwrap());
        assert!((total - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
    }

    #[test]
    fn total_loss_data_only_weights() {
        let m = linear_model([[0.05, 0.1, -0.2, 0.4], [0.0; 4]]);
        let cs = small_cs();
        let w = LossWeights {
            lambda_data: 1.0,
            lambda_cycle: 0.0,
            lambda_phys: 0.0,
            lambda_tv: 0.0,
            lambda_occ: 0.0,
        };
        let (total, _) = total_loss(&m, &cs, &w, 500.0).unwrap();
        let expect = loss_data(&m, &cs).unwrap();
        assert!((total - expect).abs() <= 1e-15);
    }

    #[test]
    fn all_zero_on_zero_observations() {
        let m = constant_model([0.0, 0.0]);
        let mut cs = small_cs();
        for p in &mut cs.points {
            p.observed = [0.0, 0.0];
        }
        let (total, _) = total_loss(&m, &cs, &LossWeights::default(), 500.0).unwrap();
        assert_eq!(total, 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // tanh model so the physics path is smooth; probes every term
        let m = crate::model::FieldModel::init_sized(
            EncodingSpec::with_dims(EncodingKind::Rff, &[4], &[1.0], 3),
            Activation::Tanh,
            NormMap::identity(),
            3,
            6,
            2,
        );
        let mut cs = small_cs();
        // shrink the set to keep the finite-difference loop fast
        cs.points.truncate(120);
        cs.cycle_points.truncate(10);
        let w = LossWeights {
            lambda_data: 1.0,
            lambda_cycle: 0.7,
            lambda_phys: 1e-3,
            lambda_tv: 0.5,
            lambda_occ: 0.0,
        };
        let re = 500.0;
        let (_, grads) = total_loss_with_grads(&m, &cs, &w, re).unwrap();
        let loss_of = |model: &FieldModel| total_loss(model, &cs, &w, re).unwrap().0;
        let h = 1e-6;
        let mut probe = m.clone();
        let mut rng = Rng::new(42);
        for _ in 0..25 {
            let li = rng.below(m.layers.len());
            let wi = rng.below(m.layers[li].w.data.len());
            let orig = m.layers[li].w.data[wi];
            probe.layers[li].w.data[wi] = orig + h;
            let up = loss_of(&probe);
            probe.layers[li].w.data[wi] = orig - h;
            let down = loss_of(&probe);
            probe.layers[li].w.data[wi] = orig;
            let fd = (up - down) / (2.0 * h);
            let exact = grads.layers[li].w.data[wi];
            assert!(
                (exact - fd).abs() <= 1e-3 * (1.0 + fd.abs()),
                "layer {li} w[{wi}]: {exact} vs {fd}"
            );
        }
    }

    #[test]
    fn scaling_weights_scales_total_and_keeps_direction() {
        let m = crate::model::FieldModel::init_sized(
            EncodingSpec::with_dims(EncodingKind::Rff, &[4], &[1.0], 9),
            Activation::Tanh,
            NormMap::identity(),
            9,
            6,
            2,
        );
        let mut cs = small_cs();
        cs.points.truncate(80);
        cs.cycle_points.truncate(6);
        let w = LossWeights::default();
        let c = 3.7;
        let scaled = LossWeights {
            lambda_data: c * w.lambda_data,
            lambda_cycle: c * w.lambda_cycle,
            lambda_phys: c * w.lambda_phys,
            lambda_tv: c * w.lambda_tv,
            lambda_occ: c * w.lambda_occ,
        };
        let re = 500.0;
        let (t1, _) = total_loss(&m, &cs, &w, re).unwrap();
        let (t2, _) = total_loss(&m, &cs, &scaled, re).unwrap();
        assert!((t2 - c * t1).abs() <= 1e-12 * (1.0 + t2.abs()));
        // gradient direction is unchanged: cosine = 1
        let (_, g1) = total_loss_with_grads(&m, &cs, &w, re).unwrap();
        let (_, g2) = total_loss_with_grads(&m, &cs, &scaled, re).unwrap();
        let (mut dot, mut n1, mut n2) = (0.0, 0.0, 0.0);
        for (l1, l2) in g1.layers.iter().zip(&g2.layers) {
            for (a, b) in l1.w.data.iter().zip(&l2.w.data) {
                dot += a * b;
                n1 += a * a;
                n2 += b * b;
            }
            for (a, b) in l1.b.iter().zip(&l2.b) {
                dot += a * b;
                n1 += a * a;
                n2 += b * b;
            }
        }
        let cosine = dot / (n1.sqrt() * n2.sqrt());
        assert!((cosine - 1.0).abs() <= 1e-9, "cosine {cosine}");
    }

    #[test]
    fn occ_loss_lambda_half_toy() {
        // u = (1,0), w = (0,0), combiner v = (0,0), Lambda = 0.5 -> 0.25
        let mut bm = BranchedModel::init(Activation::LeakyRelu, NormMap::identity(), 1);
        bm.msff = constant_model([1.0, 0.0]);
        bm.vanilla = constant_model([0.0, 0.0]);
        for l in &mut bm.combiner.layers {
            l.w.fill(0.0);
            l.b.iter_mut().for_each(|b| *b = 0.0);
        }
        let cs = toy_cs([0.0, 0.0], 4);
        let lam = OcclusionMap {
            times: vec![0.0],
            xs: vec![0.0],
            ys: vec![0.0],
            lambda: vec![0.5],
        };
        let l = loss_occ(&bm, &cs, &lam).unwrap();
        assert!((l - 0.25).abs() <= 1e-12, "occ {l}");
    }

    #[test]
    fn occ_loss_lambda_one_is_msff_regression() {
        let mut bm = BranchedModel::init(Activation::LeakyRelu, NormMap::identity(), 2);
        bm.msff = constant_model([0.4, -0.2]);
        bm.vanilla = constant_model([9.0, 9.0]); // should not matter
        for l in &mut bm.combiner.layers {
            l.w.fill(0.0);
            l.b.iter_mut().for_each(|b| *b = 0.0);
        }
        let cs = toy_cs([0.0, 0.0], 3);
        let lam = OcclusionMap {
            times: vec![0.0],
            xs: vec![0.0],
            ys: vec![0.0],
            lambda: vec![1.0],
        };
        let l = loss_occ(&bm, &cs, &lam).unwrap();
        let expect = 0.4f64 * 0.4 + 0.2 * 0.2;
        assert!((l - expect).abs() <= 1e-12, "occ {l} vs {expect}");
    }

    #[test]
    fn occ_loss_perfect_combiner_is_zero() {
        // Lambda = 0.5 everywhere; combiner computes (m + w) / 2 by hand
        let mut bm = BranchedModel::init(Activation::LeakyRelu, NormMap::identity(), 3);
        bm.msff = linear_model([[0.2, 0.0, 0.5, 0.0], [0.0, 0.0, 0.0, 0.3]]);
        bm.vanilla = constant_model([0.1, -0.1]);
        let gain = 1.0 / (1.0 + crate::model::LEAKY_SLOPE);
        for l in &mut bm.combiner.layers {
            l.w.fill(0.0);
            l.b.iter_mut().for_each(|b| *b = 0.0);
        }
        // layer 0: +-(0.5 m_u + 0.5 w_u), +-(0.5 m_v + 0.5 w_v)
        let c = &mut bm.combiner.layers[0];
        c.w.set(0, 3, 0.5);
        c.w.set(0, 5, 0.5);
        c.w.set(1, 3, -0.5);
        c.w.set(1, 5, -0.5);
        c.w.set(2, 4, 0.5);
        c.w.set(2, 6, 0.5);
        c.w.set(3, 4, -0.5);
        c.w.set(3, 6, -0.5);
        let c = &mut bm.combiner.layers[1];
        c.w.set(0, 0, gain);
        c.w.set(0, 1, -gain);
        c.w.set(1, 0, -gain);
        c.w.set(1, 1, gain);
        c.w.set(2, 2, gain);
        c.w.set(2, 3, -gain);
        c.w.set(3, 2, -gain);
        c.w.set(3, 3, gain);
        let c = &mut bm.combiner.layers[2];
        c.w.set(0, 0, gain);
        c.w.set(0, 1, -gain);
        c.w.set(1, 2, gain);
        c.w.set(1, 3, -gain);
        let mut rng = Rng::new(5);
        let points: Vec<CollocPoint> = (0..12)
            .map(|_| CollocPoint {
                coords: [rng.uniform(), rng.uniform(), rng.uniform()],
                observed: [0.0, 0.0],
                region: Region::Fluid,
            })
            .collect();
        let cs = CollocationSet {
            points,
            cycle_points: vec![[0.0, 0.0]],
            period: 1.0,
            t_start: 0.0,
            grid_step: [0.1, 0.1],
            scales: None,
        };
        let lam = OcclusionMap {
            times: vec![0.0],
            xs: vec![0.0],
            ys: vec![0.0],
            lambda: vec![0.5],
        };
        let l = loss_occ(&bm, &cs, &lam).unwrap();
        assert!(l <= 1e-12, "perfect combiner loss {l}");
    }
}

//! Multi-modal verification: field/cycle/profile MSE, relative-decrease
//! metrics, and flow rate by cylindrical integration of the axial profile.

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::field::{FlowField, Region};
use crate::synthdata::{womersley_velocity, WomersleyParams};
use crate::training::BoundaryMask;

/// Metric bundle for one reconstruction, serialized as the report JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse_field: f64,
    pub mse_cycle: f64,
    /// Profile MSE against the analytic solution; absent without parameters.
    pub mse_profile: Option<f64>,
    pub rel_decrease_field_pct: Option<f64>,
    pub rel_decrease_cycle_pct: Option<f64>,
    pub rel_decrease_profile_pct: Option<f64>,
    pub flowrate_mse: Option<f64>,
}

/// 100 (MSE_noisy - MSE_pred) / MSE_noisy, positive iff the prediction
/// improved on the noisy baseline.
pub fn rel_decrease_pct(mse_noisy: f64, mse_pred: f64) -> Option<f64> {
    (mse_noisy > 0.0).then(|| 100.0 * (mse_noisy - mse_pred) / mse_noisy)
}

/// Mean squared velocity-vector difference over the common fluid region.
pub fn mse_field(a: &FlowField, b: &FlowField) -> Result<f64, DataError> {
    if !a.same_grid(b, 1e-9) {
        return Err(DataError::Shape("fields are on different grids".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..a.len() {
        if a.region[i] == Region::Fluid && b.region[i] == Region::Fluid {
            let du = a.u[i] - b.u[i];
            let dv = a.v[i] - b.v[i];
            sum += du * du + dv * dv;
            n += 1;
        }
    }
    if n == 0 {
        return Err(DataError::Shape("no common fluid points".into()));
    }
    Ok(sum / n as f64)
}

/// Spatial mean speed over the fluid region, per time slice.
pub fn mean_velocity_cycle(f: &FlowField) -> Vec<f64> {
    (0..f.nt()).map(|ti| f.mean_speed_at(ti)).collect()
}

/// MSE between two series; the shorter one is linearly resampled onto the
/// longer one's index space when lengths differ.
pub fn series_mse(a: &[f64], b: &[f64]) -> Result<f64, DataError> {
    if a.is_empty() || b.is_empty() {
        return Err(DataError::Shape("empty series".into()));
    }
    let (a, b) = if a.len() == b.len() {
        (a.to_vec(), b.to_vec())
    } else if a.len() > b.len() {
        (a.to_vec(), resample(b, a.len()))
    } else {
        (resample(a, b.len()), b.to_vec())
    };
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64)
}

fn resample(series: &[f64], n: usize) -> Vec<f64> {
    if series.len() == 1 {
        return vec![series[0]; n];
    }
    (0..n)
        .map(|i| {
            let pos = i as f64 * (series.len() - 1) as f64 / (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(series.len() - 1);
            let frac = pos - lo as f64;
            series[lo] * (1.0 - frac) + series[hi] * frac
        })
        .collect()
}

/// The x-averaged axial-velocity profile over fluid rows at the phase of
/// maximum mean velocity, compared against the analytic solution.
pub fn profile_mse(f: &FlowField, p: &WomersleyParams) -> Result<f64, DataError> {
    let cycle = mean_velocity_cycle(f);
    let peak_ti = cycle
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .ok_or_else(|| DataError::Shape("empty field".into()))?;
    let t = f.times[peak_ti];
    let yc = f.y_center();
    let mut sum = 0.0;
    let mut rows = 0usize;
    for yi in 0..f.ny() {
        let mut row_sum = 0.0;
        let mut row_n = 0usize;
        for xi in 0..f.nx() {
            let idx = f.idx(peak_ti, xi, yi);
            if f.region[idx] == Region::Fluid {
                row_sum += f.u[idx];
                row_n += 1;
            }
        }
        if row_n == 0 {
            continue;
        }
        let profile = row_sum / row_n as f64;
        let y_frac = (f.ys[yi] - yc) / p.radius;
        let analytic = womersley_velocity(p, y_frac, t);
        sum += (profile - analytic) * (profile - analytic);
        rows += 1;
    }
    if rows == 0 {
        return Err(DataError::Shape("no fluid rows".into()));
    }
    Ok(sum / rows as f64)
}

/// Geometry for radial integration.
#[derive(Debug, Clone)]
pub enum Geometry {
    /// Straight tube of known radius centered on the field's y midline.
    Tube { radius: f64 },
    /// Walls located from a segmentation mask; radius varies per column.
    Mask(BoundaryMask),
}

/// Flow rate Q(t) in ml/min by trapezoidal integration of u(r) 2 pi r dr,
/// averaging the upper and lower half-profiles.
pub fn flow_rate(f: &FlowField, geometry: &Geometry) -> Result<Vec<f64>, DataError> {
    f.validate()?;
    let yc = match geometry {
        Geometry::Tube { .. } => f.y_center(),
        Geometry::Mask(_) => f.y_center(),
    };
    let radius = match geometry {
        Geometry::Tube { radius } => *radius,
        Geometry::Mask(mask) => mask_radius(mask)?,
    };
    if !(radius > 0.0) {
        return Err(DataError::Range(format!("degenerate radius {radius}")));
    }
    // radial bins: |y - yc| for rows inside the tube
    let mut upper: Vec<(f64, usize)> = Vec::new(); // (r, yi)
    let mut lower: Vec<(f64, usize)> = Vec::new();
    for (yi, &y) in f.ys.iter().enumerate() {
        let r = y - yc;
        if r.abs() <= radius * (1.0 + 1e-9) {
            if r >= 0.0 {
                upper.push((r, yi));
            }
            if r <= 0.0 {
                lower.push((-r, yi));
            }
        }
    }
    upper.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    lower.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    if upper.len() < 2 || lower.len() < 2 {
        return Err(DataError::Range(
            "not enough radial samples inside the tube".into(),
        ));
    }
    let mut q = Vec::with_capacity(f.nt());
    for ti in 0..f.nt() {
        let x_mean = |yi: usize| -> f64 {
            let mut s = 0.0;
            for xi in 0..f.nx() {
                s += f.u[f.idx(ti, xi, yi)];
            }
            s / f.nx() as f64
        };
        let integrate = |half: &[(f64, usize)]| -> f64 {
            let mut acc = 0.0;
            for w in half.windows(2) {
                let (r0, y0) = w[0];
                let (r1, y1) = w[1];
                let f0 = x_mean(y0) * r0;
                let f1 = x_mean(y1) * r1;
                acc += 0.5 * (f0 + f1) * (r1 - r0);
            }
            acc
        };
        let m3s = std::f64::consts::TAU * 0.5 * (integrate(&upper) + integrate(&lower));
        q.push(m3s * 6e7);
    }
    Ok(q)
}

fn mask_radius(mask: &BoundaryMask) -> Result<f64, DataError> {
    // half the fluid gap between the interpolated walls, averaged over x
    let ny = mask.ys.len();
    let mut radii = Vec::new();
    for xi in 0..mask.xs.len() {
        let col = &mask.boundary[xi * ny..(xi + 1) * ny];
        let first_fluid = col.iter().position(|&b| !b);
        let last_fluid = col.iter().rposition(|&b| !b);
        if let (Some(lo), Some(hi)) = (first_fluid, last_fluid) {
            if hi > lo {
                radii.push((mask.ys[hi] - mask.ys[lo]) * 0.5);
            }
        }
    }
    if radii.is_empty() {
        return Err(DataError::Range("mask has no fluid gap".into()));
    }
    Ok(radii.iter().sum::<f64>() / radii.len() as f64)
}

/// Flow-rate comparison: MSE plus the cumulative squared error series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowrateComparison {
    pub mse: f64,
    pub cumulative_sq_error: Vec<f64>,
}

pub fn flowrate_mse(pred: &[f64], measured: &[f64]) -> Result<FlowrateComparison, DataError> {
    if pred.is_empty() || measured.is_empty() {
        return Err(DataError::Shape("empty flow-rate series".into()));
    }
    let measured = if measured.len() == pred.len() {
        measured.to_vec()
    } else {
        resample(measured, pred.len())
    };
    let mut cum = Vec::with_capacity(pred.len());
    let mut acc = 0.0;
    for (p, m) in pred.iter().zip(&measured) {
        acc += (p - m) * (p - m);
        cum.push(acc);
    }
    Ok(FlowrateComparison {
        mse: acc / pred.len() as f64,
        cumulative_sq_error: cum,
    })
}

/// Full report for a prediction against a reference, with optional noisy
/// baseline (for relative decreases) and analytic parameters (for the
/// profile metric).
pub fn metrics_report(
    pred: &FlowField,
    reference: &FlowField,
    noisy: Option<&FlowField>,
    params: Option<&WomersleyParams>,
) -> Result<MetricsReport, DataError> {
    let field = mse_field(pred, reference)?;
    let cycle = series_mse(&mean_velocity_cycle(pred), &mean_velocity_cycle(reference))?;
    let profile = params.map(|p| profile_mse(pred, p)).transpose()?;
    let (mut rf, mut rc, mut rp) = (None, None, None);
    if let Some(nz) = noisy {
        let nf = mse_field(nz, reference)?;
        rf = rel_decrease_pct(nf, field);
        let nc = series_mse(&mean_velocity_cycle(nz), &mean_velocity_cycle(reference))?;
        rc = rel_decrease_pct(nc, cycle);
        if let (Some(p), Some(pv)) = (params, profile) {
            let np = profile_mse(nz, p)?;
            rp = rel_decrease_pct(np, pv);
        }
    }
    Ok(MetricsReport {
        mse_field: field,
        mse_cycle: cycle,
        mse_profile: profile,
        rel_decrease_field_pct: rf,
        rel_decrease_cycle_pct: rc,
        rel_decrease_profile_pct: rp,
        flowrate_mse: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::linspace;
    use crate::rng::Rng;
    use crate::synthdata::{corrupt, default_params, generate_field, GridSpec};

    fn analytic() -> (WomersleyParams, FlowField) {
        let p = default_params(2.77).unwrap();
        let f = generate_field(
            &p,
            &GridSpec {
                nx: 12,
                ny: 33,
                nt: 17,
                x_extent: 0.04,
            },
            1,
        )
        .unwrap();
        (p, f)
    }

    fn uniform_field(u: f64, ny: usize) -> FlowField {
        let times = linspace(0.0, 1.0, 3);
        let xs = linspace(0.0, 0.04, 4);
        let ys = linspace(-0.0025, 0.0025, ny);
        let n = times.len() * xs.len() * ys.len();
        FlowField {
            times,
            xs,
            ys,
            u: vec![u; n],
            v: vec![0.0; n],
            region: vec![Region::Fluid; n],
            occlusion: None,
            period: 1.0,
        }
    }

    #[test]
    fn mse_field_identical_is_zero() {
        let (_, f) = analytic();
        assert_eq!(mse_field(&f, &f).unwrap(), 0.0);
    }

    #[test]
    fn mse_field_uniform_shift() {
        let (_, f) = analytic();
        let mut g = f.clone();
        g.u.iter_mut().for_each(|u| *u += 0.1);
        let m = mse_field(&f, &g).unwrap();
        assert!((m - 0.01).abs() <= 1e-15, "mse {m}");
    }

    #[test]
    fn mse_field_matches_direct_oracle() {
        let (_, f) = analytic();
        let mut rng = Rng::new(3);
        let mut g = f.clone();
        g.u.iter_mut().for_each(|u| *u += rng.normal_scaled(0.0, 0.05));
        g.v.iter_mut().for_each(|v| *v += rng.normal_scaled(0.0, 0.05));
        let got = mse_field(&f, &g).unwrap();
        let mut sum = 0.0;
        let mut n = 0;
        for i in 0..f.len() {
            if f.region[i] == Region::Fluid {
                sum += (f.u[i] - g.u[i]).powi(2) + (f.v[i] - g.v[i]).powi(2);
                n += 1;
            }
        }
        let expect = sum / n as f64;
        assert!((got - expect).abs() <= 1e-12 * (1.0 + expect));
    }

    #[test]
    fn mse_field_symmetric_and_triangle_bound() {
        let (_, a) = analytic();
        let b = corrupt(&a, 0.2, 1);
        let c = corrupt(&a, 0.4, 2);
        assert_eq!(mse_field(&a, &b).unwrap(), mse_field(&b, &a).unwrap());
        let ac = mse_field(&a, &c).unwrap();
        let ab = mse_field(&a, &b).unwrap();
        let bc = mse_field(&b, &c).unwrap();
        assert!(ac <= 2.0 * (ab + bc) + 1e-15, "{ac} vs {}", 2.0 * (ab + bc));
    }

    #[test]
    fn mse_field_rejects_grid_mismatch() {
        let (_, f) = analytic();
        let g = uniform_field(0.0, 9);
        assert!(mse_field(&f, &g).is_err());
    }

    #[test]
    fn cycle_of_zero_field_is_zero() {
        let f = uniform_field(0.0, 5);
        assert!(mean_velocity_cycle(&f).iter().all(|&m| m == 0.0));
    }

    #[test]
    fn cycle_of_uniform_field_is_constant() {
        let f = uniform_field(0.2, 5);
        for m in mean_velocity_cycle(&f) {
            assert!((m - 0.2).abs() <= 1e-15);
        }
    }

    #[test]
    fn cycle_of_womersley_is_periodic() {
        let (_, f) = analytic();
        let c = mean_velocity_cycle(&f);
        let scale = c.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        assert!((c[0] - c[c.len() - 1]).abs() <= 1e-10 * scale.max(1e-300));
    }

    #[test]
    fn profile_mse_of_analytic_field_is_zero() {
        let (p, f) = analytic();
        let m = profile_mse(&f, &p).unwrap();
        assert!(m <= 1e-12, "profile mse {m}");
    }

    #[test]
    fn profile_mse_of_offset_field() {
        let (p, f) = analytic();
        let mut g = f.clone();
        for i in 0..g.len() {
            if g.region[i] == Region::Fluid {
                g.u[i] += 0.05;
            }
        }
        let m = profile_mse(&g, &p).unwrap();
        assert!((m - 0.0025).abs() <= 1e-12, "profile mse {m}");
    }

    #[test]
    fn profile_mse_of_corrupted_exceeds_clean() {
        let (p, f) = analytic();
        let noisy = corrupt(&f, 0.3, 9);
        let clean = profile_mse(&f, &p).unwrap();
        let dirty = profile_mse(&noisy, &p).unwrap();
        assert!(dirty > clean);
    }

    #[test]
    fn flow_rate_uniform_profile() {
        // uniform u = 0.1 m/s across a 2.5 mm tube: Q = pi R^2 u
        let f = uniform_field(0.1, 33);
        let q = flow_rate(&f, &Geometry::Tube { radius: 2.5e-3 }).unwrap();
        for qi in q {
            assert!((qi - 117.81).abs() < 0.02, "Q {qi} ml/min");
        }
    }

    #[test]
    fn flow_rate_poiseuille_profile() {
        // u(r) = u_max (1 - r^2/R^2): Q = pi R^2 u_max / 2
        let radius: f64 = 2.5e-3;
        let u_max = 0.3;
        let mut f = uniform_field(0.0, 33);
        for ti in 0..f.nt() {
            for xi in 0..f.nx() {
                for yi in 0..f.ny() {
                    let r = f.ys[yi] / radius;
                    let idx = f.idx(ti, xi, yi);
                    f.u[idx] = u_max * (1.0 - r * r);
                }
            }
        }
        let q = flow_rate(&f, &Geometry::Tube { radius }).unwrap();
        let expect = std::f64::consts::PI * radius * radius * u_max / 2.0 * 6e7;
        for qi in &q {
            let rel = (qi - expect).abs() / expect;
            assert!(rel < 0.01, "Q {qi} vs {expect} (rel {rel})");
        }
        // halving the radial spacing reduces the error
        let mut f2 = uniform_field(0.0, 65);
        for ti in 0..f2.nt() {
            for xi in 0..f2.nx() {
                for yi in 0..f2.ny() {
                    let r = f2.ys[yi] / radius;
                    let idx = f2.idx(ti, xi, yi);
                    f2.u[idx] = u_max * (1.0 - r * r);
                }
            }
        }
        let q2 = flow_rate(&f2, &Geometry::Tube { radius }).unwrap();
        let e1 = (q[0] - expect).abs();
        let e2 = (q2[0] - expect).abs();
        assert!(e2 < e1, "refinement did not help: {e1} -> {e2}");
    }

    #[test]
    fn flow_rate_zero_field() {
        let f = uniform_field(0.0, 17);
        let q = flow_rate(&f, &Geometry::Tube { radius: 2.5e-3 }).unwrap();
        assert!(q.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn flowrate_mse_examples() {
        let a = vec![100.0, 110.0, 105.0];
        assert_eq!(flowrate_mse(&a, &a).unwrap().mse, 0.0);
        let b: Vec<f64> = a.iter().map(|x| x + 10.0).collect();
        let cmp = flowrate_mse(&a, &b).unwrap();
        assert!((cmp.mse - 100.0).abs() <= 1e-12);
        // cumulative final value = len * mse
        let last = *cmp.cumulative_sq_error.last().unwrap();
        assert!((last - a.len() as f64 * cmp.mse).abs() <= 1e-9);
    }

    #[test]
    fn rel_decrease_sign() {
        assert!(rel_decrease_pct(1.0, 0.5).unwrap() > 0.0);
        assert!(rel_decrease_pct(1.0, 2.0).unwrap() < 0.0);
        assert_eq!(rel_decrease_pct(1.0, 1.0).unwrap(), 0.0);
        assert!(rel_decrease_pct(0.0, 1.0).is_none());
    }

    #[test]
    fn report_for_identical_fields() {
        let (p, f) = analytic();
        let r = metrics_report(&f, &f, None, Some(&p)).unwrap();
        assert_eq!(r.mse_field, 0.0);
        assert_eq!(r.mse_cycle, 0.0);
        assert!(r.mse_profile.unwrap() <= 1e-12);
    }

    #[test]
    fn report_pred_equals_noisy_gives_zero_decrease() {
        let (p, f) = analytic();
        let noisy = corrupt(&f, 0.3, 4);
        let r = metrics_report(&noisy, &f, Some(&noisy), Some(&p)).unwrap();
        assert!(r.rel_decrease_field_pct.unwrap().abs() <= 1e-12);
        assert!(r.rel_decrease_cycle_pct.unwrap().abs() <= 1e-12);
    }
}

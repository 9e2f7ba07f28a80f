//! Occlusion-map construction from streamline-mean speed deficits.
//!
//! For near-axial tube flow a streamline is a constant-y row of a time
//! slice. Each point's speed is compared against its row mean and squashed
//! through a sigmoid, giving the probability of NOT being occluded. The
//! steepness maps a 50% speed deficit to roughly 0.1.

use serde::{Deserialize, Serialize};

use crate::error::TrainError;
use crate::field::{FlowField, Region};

pub const SIGMOID_STEEPNESS: f64 = 4.4;

/// Grid of Lambda values strictly inside (0, 1), on the field's grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OcclusionMap {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl OcclusionMap {
    #[inline]
    fn idx(&self, ti: usize, xi: usize, yi: usize) -> usize {
        (ti * self.xs.len() + xi) * self.ys.len() + yi
    }

    /// Lambda at the grid point nearest to the physical coordinate.
    pub fn nearest(&self, v: [f64; 3]) -> f64 {
        let ti = super::nearest_index(&self.times, v[0]);
        let xi = super::nearest_index(&self.xs, v[1]);
        let yi = super::nearest_index(&self.ys, v[2]);
        self.lambda[self.idx(ti, xi, yi)]
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Builds the occlusion map. Boundary rows are uninformative and get 0.5;
/// all-zero rows are guarded by the epsilon in the deficit denominator and
/// also come out at 0.5.
pub fn compute_occlusion_map(field: &FlowField) -> Result<OcclusionMap, TrainError> {
    field
        .validate()
        .map_err(|e| TrainError::Degenerate(e.to_string()))?;
    let (nt, nx, ny) = (field.nt(), field.nx(), field.ny());
    let has_fluid = (0..field.len()).any(|i| field.region[i] == Region::Fluid);
    if !has_fluid {
        return Err(TrainError::Degenerate("field has no fluid points".into()));
    }
    let max_speed = (0..field.len())
        .map(|i| field.u[i].hypot(field.v[i]))
        .fold(0.0f64, f64::max);
    let eps = (1e-6 * max_speed).max(1e-300);
    let mut lambda = vec![0.5; field.len()];
    for ti in 0..nt {
        for yi in 0..ny {
            // row along the tube axis
            let mut sum = 0.0;
            let mut n = 0usize;
            for xi in 0..nx {
                let idx = field.idx(ti, xi, yi);
                if field.region[idx] == Region::Fluid {
                    sum += field.u[idx].hypot(field.v[idx]);
                    n += 1;
                }
            }
            if n == 0 {
                // pure boundary row stays at the uninformative 0.5
                continue;
            }
            let mean = sum / n as f64;
            for xi in 0..nx {
                let idx = field.idx(ti, xi, yi);
                if field.region[idx] != Region::Fluid {
                    continue; // boundary points stay at 0.5
                }
                let speed = field.u[idx].hypot(field.v[idx]);
                lambda[idx] = sigmoid(SIGMOID_STEEPNESS * (speed - mean) / (mean + eps));
            }
        }
    }
    Ok(OcclusionMap {
        times: field.times.clone(),
        xs: field.xs.clone(),
        ys: field.ys.clone(),
        lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{default_params, generate_field, occlude, GridSpec, OcclusionBand};

    fn field() -> FlowField {
        let p = default_params(2.77).unwrap();
        generate_field(
            &p,
            &GridSpec {
                nx: 10,
                ny: 9,
                nt: 5,
                x_extent: 0.04,
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn uniform_row_gives_half() {
        // the analytic field is x-invariant, so every row is uniform
        let f = field();
        let map = compute_occlusion_map(&f).unwrap();
        for l in &map.lambda {
            assert!((l - 0.5).abs() <= 1e-12, "lambda {l}");
        }
    }

    #[test]
    fn point_at_row_mean_gets_exactly_half() {
        let mut f = field();
        // perturb one row so it is non-uniform, then plant one point at the
        // fixed-point of the row mean: v = mean(others) makes v the row mean
        let ti = 2;
        let yi = 4;
        for xi in 0..f.nx() {
            let idx = f.idx(ti, xi, yi);
            f.u[idx] = 0.1 + 0.01 * xi as f64;
            f.v[idx] = 0.0;
        }
        let idx0 = f.idx(ti, 0, yi);
        let others: f64 = (1..f.nx()).map(|xi| f.u[f.idx(ti, xi, yi)]).sum();
        f.u[idx0] = others / (f.nx() - 1) as f64;
        let map = compute_occlusion_map(&f).unwrap();
        let got = map.lambda[idx0];
        assert!((got - 0.5).abs() <= 1e-12, "lambda {got}");
    }

    #[test]
    fn occluded_band_scores_low() {
        let f = field();
        let bands = [OcclusionBand {
            t_range: (f.times[0], *f.times.last().unwrap()),
            x_range: (f.xs[2], f.xs[5]),
        }];
        let occluded = occlude(&f, &bands, 0.2, 0).unwrap();
        let map = compute_occlusion_map(&occluded).unwrap();
        let truth = occluded.occlusion.as_ref().unwrap();
        let mut in_band = Vec::new();
        let mut out_band = Vec::new();
        for i in 0..occluded.len() {
            if !occluded.is_fluid(i) {
                continue;
            }
            if truth[i] == 0.0 {
                in_band.push(map.lambda[i]);
            } else {
                out_band.push(map.lambda[i]);
            }
        }
        let mean_in = in_band.iter().sum::<f64>() / in_band.len() as f64;
        let mean_out = out_band.iter().sum::<f64>() / out_band.len() as f64;
        assert!(
            mean_in < 0.3 && mean_out > 0.5,
            "in {mean_in} out {mean_out}"
        );
    }

    #[test]
    fn zero_speed_point_on_active_row() {
        // row mean 0.2 with one dead point: sigmoid(-4.4) ~ 0.0121
        let mut f = field();
        let (ti, yi) = (1, 3);
        for xi in 0..f.nx() {
            let idx = f.idx(ti, xi, yi);
            f.u[idx] = 0.2;
            f.v[idx] = 0.0;
        }
        let dead = f.idx(ti, 7, yi);
        f.u[dead] = 0.0;
        let map = compute_occlusion_map(&f).unwrap();
        // mean over the row including the dead point; the epsilon guard in
        // the denominator shifts the value by ~1e-7
        let mean = 0.2 * (f.nx() - 1) as f64 / f.nx() as f64;
        let expect = sigmoid(SIGMOID_STEEPNESS * (0.0 - mean) / mean);
        assert!((map.lambda[dead] - expect).abs() < 1e-5);
        // spec anchor: a full deficit maps near sigmoid(-4.4) ~ 0.012
        assert!((sigmoid(-SIGMOID_STEEPNESS) - 0.012128).abs() < 1e-4);
    }

    #[test]
    fn all_zero_row_guarded() {
        let mut f = field();
        for xi in 0..f.nx() {
            for yi in 0..f.ny() {
                let idx = f.idx(0, xi, yi);
                f.u[idx] = 0.0;
                f.v[idx] = 0.0;
            }
        }
        let map = compute_occlusion_map(&f).unwrap();
        for xi in 0..f.nx() {
            for yi in 1..f.ny() - 1 {
                let l = map.lambda[f.idx(0, xi, yi)];
                assert!((l - 0.5).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn strictly_inside_unit_interval() {
        let f = field();
        let bands = [OcclusionBand {
            t_range: (f.times[1], f.times[3]),
            x_range: (f.xs[0], f.xs[4]),
        }];
        let occluded = occlude(&f, &bands, 0.0, 0).unwrap();
        let map = compute_occlusion_map(&occluded).unwrap();
        for &l in &map.lambda {
            assert!(l > 0.0 && l < 1.0, "lambda {l} escaped (0,1)");
        }
    }

    #[test]
    fn boundary_rows_uninformative() {
        let f = field();
        let map = compute_occlusion_map(&f).unwrap();
        for ti in 0..f.nt() {
            for xi in 0..f.nx() {
                assert_eq!(map.lambda[f.idx(ti, xi, 0)], 0.5);
                assert_eq!(map.lambda[f.idx(ti, xi, f.ny() - 1)], 0.5);
            }
        }
    }
}

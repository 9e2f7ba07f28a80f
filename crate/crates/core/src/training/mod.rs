//! Loss computation, collocation handling, region classification, occlusion
//! maps, and the optimization loops.

mod adam;
mod losses;
mod occlusion;
mod trainer;

pub use adam::AdamState;
pub use losses::{
    loss_cycle, loss_data, loss_occ, loss_phys, loss_tv, total_loss, total_loss_with_grads,
    LossBreakdown,
};
pub use occlusion::{compute_occlusion_map, OcclusionMap, SIGMOID_STEEPNESS};
pub use trainer::{
    train, train_branched, BranchedOutcome, EpochStats, PhysicsContext, TrainLog, TrainOutcome,
    TrainRunError,
};

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::field::{FlowField, Region};
use crate::model::FlowScales;

/// One observed collocation point.
#[derive(Debug, Clone, Copy)]
pub struct CollocPoint {
    pub coords: [f64; 3],
    pub observed: [f64; 2],
    pub region: Region,
}

/// Collocation points plus the spatial cycle set and grid metadata.
#[derive(Debug, Clone)]
pub struct CollocationSet {
    pub points: Vec<CollocPoint>,
    /// Spatial points (x, y) compared between t = 0 and t = T.
    pub cycle_points: Vec<[f64; 2]>,
    /// Cycle period T in seconds.
    pub period: f64,
    /// Time origin of the field (cycle compares t0 and t0 + T).
    pub t_start: f64,
    /// One grid spacing in x and y, the finite offset used by the
    /// total-variation term.
    pub grid_step: [f64; 2],
    /// Nondimensionalization for the physics residual, when known.
    pub scales: Option<FlowScales>,
}

impl CollocationSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn with_scales(mut self, scales: FlowScales) -> Self {
        self.scales = Some(scales);
        self
    }

    pub fn fluid_indices(&self) -> Vec<usize> {
        (0..self.points.len())
            .filter(|&i| self.points[i].region == Region::Fluid)
            .collect()
    }

    pub fn boundary_indices(&self) -> Vec<usize> {
        (0..self.points.len())
            .filter(|&i| self.points[i].region == Region::Boundary)
            .collect()
    }
}

/// Spatial boundary mask on its own grid, used to classify imported fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryMask {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major (x-major) flags, true = boundary.
    pub boundary: Vec<bool>,
}

impl BoundaryMask {
    fn label_nearest(&self, x: f64, y: f64) -> Region {
        let xi = nearest_index(&self.xs, x);
        let yi = nearest_index(&self.ys, y);
        if self.boundary[xi * self.ys.len() + yi] {
            Region::Boundary
        } else {
            Region::Fluid
        }
    }
}

fn nearest_index(sorted: &[f64], v: f64) -> usize {
    match sorted.binary_search_by(|a| a.partial_cmp(&v).unwrap()) {
        Ok(i) => i,
        Err(i) => {
            if i == 0 {
                0
            } else if i >= sorted.len() {
                sorted.len() - 1
            } else if (v - sorted[i - 1]) <= (sorted[i] - v) {
                i - 1
            } else {
                i
            }
        }
    }
}

/// Builds the collocation set for a field.
///
/// Without a mask the synthetic rule applies: the first and last y-rows are
/// the boundary. With a mask, each field point takes the label of the
/// geometrically nearest mask cell. The cycle set is every spatial grid
/// point at the first timestep.
pub fn classify_regions(
    field: &FlowField,
    mask: Option<&BoundaryMask>,
) -> Result<CollocationSet, DataError> {
    field.validate()?;
    if let Some(m) = mask {
        if m.xs.is_empty() || m.ys.is_empty() || m.boundary.len() != m.xs.len() * m.ys.len() {
            return Err(DataError::Config("malformed boundary mask".into()));
        }
        let disjoint = m.xs[m.xs.len() - 1] < field.xs[0]
            || m.xs[0] > field.xs[field.nx() - 1]
            || m.ys[m.ys.len() - 1] < field.ys[0]
            || m.ys[0] > field.ys[field.ny() - 1];
        if disjoint {
            return Err(DataError::Config(
                "boundary mask grid is disjoint from the field extent".into(),
            ));
        }
    }
    let mut points = Vec::with_capacity(field.len());
    for ti in 0..field.nt() {
        for xi in 0..field.nx() {
            for yi in 0..field.ny() {
                let idx = field.idx(ti, xi, yi);
                let region = match mask {
                    Some(m) => m.label_nearest(field.xs[xi], field.ys[yi]),
                    None => {
                        if yi == 0 || yi == field.ny() - 1 {
                            Region::Boundary
                        } else {
                            Region::Fluid
                        }
                    }
                };
                points.push(CollocPoint {
                    coords: [field.times[ti], field.xs[xi], field.ys[yi]],
                    observed: [field.u[idx], field.v[idx]],
                    region,
                });
            }
        }
    }
    let mut cycle_points = Vec::with_capacity(field.nx() * field.ny());
    for &x in &field.xs {
        for &y in &field.ys {
            cycle_points.push([x, y]);
        }
    }
    Ok(CollocationSet {
        points,
        cycle_points,
        period: field.period,
        t_start: field.times[0],
        grid_step: [field.dx(), field.dy()],
        scales: None,
    })
}

/// Loss term weights for the total objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_data: f64,
    pub lambda_cycle: f64,
    pub lambda_phys: f64,
    pub lambda_tv: f64,
    pub lambda_occ: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_data: 1.0,
            lambda_cycle: 1.0,
            lambda_phys: 1e-6,
            lambda_tv: 1.0,
            lambda_occ: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), DataError> {
        let all = [
            self.lambda_data,
            self.lambda_cycle,
            self.lambda_phys,
            self.lambda_tv,
            self.lambda_occ,
        ];
        if all.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(DataError::Config("loss weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Optimization hyperparameters.
///
/// The per-step subsample sizes (`cycle_batch`, `tv_batch`, `physics_batch`)
/// and the physics cadence control how the cycle, total-variation and
/// residual terms are estimated within each minibatch step; the estimators
/// stay unbiased and the logged losses record the running estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Learning rate for trainable Fourier modes.
    pub lr_modes: f64,
    /// Learning rate for the branched combiner.
    pub lr_combiner: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Branch-training epochs of the branched schedule.
    pub stage1_epochs: usize,
    pub cycle_batch: usize,
    pub tv_batch: usize,
    pub physics_batch: usize,
    /// Apply the physics estimator every k-th step.
    pub physics_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-5,
            lr_modes: 1e-2,
            lr_combiner: 1e-3,
            epochs: 50,
            batch: 4096,
            seed: 0,
            stage1_epochs: 100,
            cycle_batch: 64,
            tv_batch: 64,
            physics_batch: 8,
            physics_every: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.lr > 0.0 && self.lr_modes > 0.0 && self.lr_combiner > 0.0) {
            return Err(DataError::Config("learning rates must be positive".into()));
        }
        if self.batch == 0 || self.physics_every == 0 {
            return Err(DataError::Config("batch sizes must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{default_params, generate_field, GridSpec};

    fn field() -> FlowField {
        let p = default_params(2.77).unwrap();
        generate_field(
            &p,
            &GridSpec {
                nx: 6,
                ny: 33,
                nt: 5,
                x_extent: 0.04,
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn synthetic_rule_boundary_rows() {
        let f = field();
        let cs = classify_regions(&f, None).unwrap();
        let n_boundary = cs.boundary_indices().len();
        let n_fluid = cs.fluid_indices().len();
        // 2 of 33 rows are boundary
        assert_eq!(n_boundary, f.nt() * f.nx() * 2);
        assert_eq!(n_fluid, f.nt() * f.nx() * 31);
        assert_eq!(cs.cycle_points.len(), f.nx() * f.ny());
    }

    #[test]
    fn mask_identical_to_grid_is_identity() {
        let f = field();
        let mut boundary = vec![false; f.nx() * f.ny()];
        for xi in 0..f.nx() {
            boundary[xi * f.ny()] = true;
            boundary[xi * f.ny() + f.ny() - 1] = true;
        }
        let mask = BoundaryMask {
            xs: f.xs.clone(),
            ys: f.ys.clone(),
            boundary,
        };
        let with_mask = classify_regions(&f, Some(&mask)).unwrap();
        let without = classify_regions(&f, None).unwrap();
        for (a, b) in with_mask.points.iter().zip(&without.points) {
            assert_eq!(a.region, b.region);
        }
    }

    #[test]
    fn mask_at_double_resolution_nearest_neighbour() {
        let f = field();
        // mask at 2x the y resolution with an asymmetric boundary band
        let ys: Vec<f64> = crate::field::linspace(f.ys[0], *f.ys.last().unwrap(), 65);
        let xs = f.xs.clone();
        let mut boundary = vec![false; xs.len() * ys.len()];
        for xi in 0..xs.len() {
            for yi in 0..ys.len() {
                // bottom three mask rows are wall
                if yi < 3 || yi == ys.len() - 1 {
                    boundary[xi * ys.len() + yi] = true;
                }
            }
        }
        let mask = BoundaryMask {
            xs: xs.clone(),
            ys: ys.clone(),
            boundary: boundary.clone(),
        };
        let cs = classify_regions(&f, Some(&mask)).unwrap();
        // exhaustive nearest-neighbour oracle
        for p in &cs.points {
            let mut best = (f64::INFINITY, Region::Fluid);
            for (xi, &mx) in xs.iter().enumerate() {
                for (yi, &my) in ys.iter().enumerate() {
                    let d = (p.coords[1] - mx).powi(2) + (p.coords[2] - my).powi(2);
                    if d < best.0 {
                        let r = if boundary[xi * ys.len() + yi] {
                            Region::Boundary
                        } else {
                            Region::Fluid
                        };
                        best = (d, r);
                    }
                }
            }
            assert_eq!(p.region, best.1, "at {:?}", p.coords);
        }
    }

    #[test]
    fn disjoint_mask_rejected() {
        let f = field();
        let mask = BoundaryMask {
            xs: vec![10.0, 11.0],
            ys: vec![10.0, 11.0],
            boundary: vec![false; 4],
        };
        assert!(classify_regions(&f, Some(&mask)).is_err());
    }
}

//! Synthetic dataset generation: analytic Womersley fields, speckle-style
//! corruption, and banded occlusion.

mod bessel;
mod womersley;

pub use bessel::bessel_j0_complex;
pub use womersley::{womersley_velocity, WomersleyParams};

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::field::{linspace, FlowField, Region};
use crate::rng::Rng;

/// Grid dimensions and physical extents for generated fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    /// Time samples over the full generated span (endpoints included).
    pub nt: usize,
    /// Tube segment length along x (m).
    pub x_extent: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            nx: 64,
            ny: 33,
            nt: 49,
            x_extent: 0.04,
        }
    }
}

/// Samples the analytic solution over a tube cross-section.
///
/// `times` cover exactly `period_count` periods inclusive of both endpoints,
/// so the first and last slices sample the same phase. The first and last
/// y-rows are the walls and carry the boundary label.
pub fn generate_field(
    p: &WomersleyParams,
    grid: &GridSpec,
    period_count: usize,
) -> Result<FlowField, DataError> {
    p.validate()?;
    if grid.ny < 3 {
        return Err(DataError::Config(format!(
            "grid needs at least 3 y-rows, got {}",
            grid.ny
        )));
    }
    if grid.nx < 1 || grid.nt < 2 || period_count < 1 {
        return Err(DataError::Config("degenerate grid".into()));
    }
    if !(grid.x_extent > 0.0) {
        return Err(DataError::Config("x_extent must be positive".into()));
    }
    let period = p.period();
    let times = linspace(0.0, period * period_count as f64, grid.nt);
    let xs = linspace(0.0, grid.x_extent, grid.nx);
    let ys = linspace(-p.radius, p.radius, grid.ny);
    let n = grid.nt * grid.nx * grid.ny;
    let mut u = vec![0.0; n];
    let v = vec![0.0; n];
    let mut region = vec![Region::Fluid; n];
    // the profile is x-invariant: evaluate one column per time slice
    for (ti, &t) in times.iter().enumerate() {
        let column: Vec<f64> = ys
            .iter()
            .map(|&y| womersley_velocity(p, y / p.radius, t))
            .collect();
        for xi in 0..grid.nx {
            for (yi, &uy) in column.iter().enumerate() {
                let idx = (ti * grid.nx + xi) * grid.ny + yi;
                u[idx] = uy;
                if yi == 0 || yi == grid.ny - 1 {
                    region[idx] = Region::Boundary;
                    u[idx] = 0.0;
                }
            }
        }
    }
    Ok(FlowField {
        times,
        xs,
        ys,
        u,
        v,
        region,
        occlusion: None,
        period,
    })
}

/// Corruption model: multiplicative speckle surrogate plus dropout patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptSpec {
    /// Standard deviation of the multiplicative noise factor.
    pub noise_level: f64,
    /// Fraction of fluid points covered by dropout rectangles.
    pub dropout_fraction: f64,
    /// Velocity scale inside dropout rectangles.
    pub dropout_scale: f64,
}

impl CorruptSpec {
    pub fn noise_only(noise_level: f64) -> Self {
        CorruptSpec {
            noise_level,
            dropout_fraction: 0.0,
            dropout_scale: 0.1,
        }
    }
}

impl Default for CorruptSpec {
    fn default() -> Self {
        CorruptSpec {
            noise_level: 0.3,
            dropout_fraction: 0.05,
            dropout_scale: 0.1,
        }
    }
}

/// Applies u' = u (1 + eta), eta ~ N(0, noise_level), to both components,
/// then dropout patches per `CorruptSpec::default`. `noise_level = 0` returns
/// the field unchanged. Multiplicative noise preserves exact zeros, so
/// no-slip rows stay at 0.
pub fn corrupt(field: &FlowField, noise_level: f64, seed: u64) -> FlowField {
    let spec = CorruptSpec {
        noise_level,
        ..CorruptSpec::default()
    };
    corrupt_with(field, &spec, seed)
}

pub fn corrupt_with(field: &FlowField, spec: &CorruptSpec, seed: u64) -> FlowField {
    if spec.noise_level == 0.0 {
        return field.clone();
    }
    let mut out = field.clone();
    let mut rng = Rng::new(seed);
    for i in 0..out.u.len() {
        let eta = rng.normal_scaled(0.0, spec.noise_level);
        out.u[i] *= 1.0 + eta;
        out.v[i] *= 1.0 + eta;
    }
    if spec.dropout_fraction > 0.0 {
        let mut patch_rng = rng.fork(1);
        apply_dropout(&mut out, spec, &mut patch_rng);
    }
    out
}

fn apply_dropout(field: &mut FlowField, spec: &CorruptSpec, rng: &mut Rng) {
    let (nt, nx, ny) = (field.nt(), field.nx(), field.ny());
    let total = nt * nx * ny;
    let target = (spec.dropout_fraction * total as f64) as usize;
    let mut covered = vec![false; total];
    let mut count = 0usize;
    let mut attempts = 0;
    while count < target && attempts < 10_000 {
        attempts += 1;
        let dt = 1 + rng.below((nt / 8).max(1));
        let dx = 1 + rng.below((nx / 6).max(1));
        let dy = 1 + rng.below((ny / 4).max(1));
        let t0 = rng.below(nt - dt + 1);
        let x0 = rng.below(nx - dx + 1);
        let y0 = rng.below(ny - dy + 1);
        for ti in t0..t0 + dt {
            for xi in x0..x0 + dx {
                for yi in y0..y0 + dy {
                    let idx = field.idx(ti, xi, yi);
                    if !covered[idx] {
                        covered[idx] = true;
                        field.u[idx] *= spec.dropout_scale;
                        field.v[idx] *= spec.dropout_scale;
                        count += 1;
                    }
                }
            }
        }
    }
}

/// A spatiotemporal occlusion band in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionBand {
    pub t_range: (f64, f64),
    pub x_range: (f64, f64),
}

/// Attenuates velocities inside the bands and records the ground-truth mask
/// in the occlusion grid (0 inside bands, 1 outside). Band application is
/// deterministic; the seed is accepted for interface uniformity with the
/// other corruption stages and reserved for stochastic band variants.
pub fn occlude(
    field: &FlowField,
    bands: &[OcclusionBand],
    attenuation: f64,
    _seed: u64,
) -> Result<FlowField, DataError> {
    if !(0.0..=1.0).contains(&attenuation) {
        return Err(DataError::Config(format!(
            "attenuation {attenuation} outside [0, 1]"
        )));
    }
    let (t_lo, t_hi) = (field.times[0], *field.times.last().unwrap());
    let (x_lo, x_hi) = (field.xs[0], *field.xs.last().unwrap());
    for b in bands {
        if b.t_range.0 > b.t_range.1 || b.x_range.0 > b.x_range.1 {
            return Err(DataError::Config("band range reversed".into()));
        }
        if b.t_range.0 < t_lo || b.t_range.1 > t_hi || b.x_range.0 < x_lo || b.x_range.1 > x_hi {
            return Err(DataError::Config(format!(
                "band t={:?} x={:?} outside grid extent",
                b.t_range, b.x_range
            )));
        }
    }
    let mut out = field.clone();
    let mut mask = out
        .occlusion
        .take()
        .unwrap_or_else(|| vec![1.0; field.len()]);
    if attenuation < 1.0 {
        for (ti, &t) in field.times.iter().enumerate() {
            for (xi, &x) in field.xs.iter().enumerate() {
                let inside = bands.iter().any(|b| {
                    t >= b.t_range.0 && t <= b.t_range.1 && x >= b.x_range.0 && x <= b.x_range.1
                });
                if !inside {
                    continue;
                }
                for yi in 0..field.ny() {
                    let idx = field.idx(ti, xi, yi);
                    out.u[idx] *= attenuation;
                    out.v[idx] *= attenuation;
                    mask[idx] = 0.0;
                }
            }
        }
    }
    out.occlusion = Some(mask);
    Ok(out)
}

/// Named dataset presets. The numbering follows exp{family}{level} with
/// family 1 = alpha 2.77, family 2 = alpha 5, and level 0/1/2 mapping to
/// multiplicative noise 0.1 / 0.6 / 0.3.
pub fn preset_params(name: &str) -> Result<(WomersleyParams, f64), DataError> {
    let (alpha, noise) = match name {
        "exp10" => (2.77, 0.1),
        "exp11" => (2.77, 0.6),
        "exp12" => (2.77, 0.3),
        "exp20" => (5.0, 0.1),
        "exp21" => (5.0, 0.6),
        "exp22" => (5.0, 0.3),
        other => {
            return Err(DataError::Config(format!(
                "unknown preset '{other}' (expected exp10..exp22)"
            )))
        }
    };
    Ok((default_params(alpha)?, noise))
}

/// Blood-like parameters with the pressure modes scaled so the peak
/// centerline velocity is about 0.3 m/s. The harmonic mode is negative so
/// its contribution is in phase with the steady component (the harmonic sum
/// responds with the opposite sign of P'_n).
pub fn default_params(alpha: f64) -> Result<WomersleyParams, DataError> {
    let mut p = WomersleyParams::from_alpha(
        2.5e-3,
        1060.0,
        3.0e-3,
        alpha,
        vec![[1.0, 0.0], [-1.0, 0.0]],
        500.0,
    )?;
    let target_peak = 0.3;
    let mut peak: f64 = 0.0;
    let period = p.period();
    for ti in 0..200 {
        let t = period * ti as f64 / 200.0;
        for yi in 0..65 {
            let y = -1.0 + yi as f64 / 32.0;
            peak = peak.max(womersley_velocity(&p, y, t).abs());
        }
    }
    p.scale_modes(target_peak / peak);
    Ok(p)
}

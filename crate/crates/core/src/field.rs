//! The gridded flow-field exchange object.
//!
//! A [`FlowField`] stores (t, x, y) -> (u, v) samples on a rectilinear grid
//! together with per-point region labels and an optional occlusion grid.
//! Every stage of the pipeline (generation, corruption, PIV, training,
//! verification, file IO) speaks this type.

use serde::{Deserialize, Serialize};

use crate::error::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Fluid,
    Boundary,
}

/// Velocity samples indexed (t, x, y), flattened t-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub region: Vec<Region>,
    /// Probability of NOT being occluded, in [0, 1]; `None` when unknown.
    pub occlusion: Option<Vec<f64>>,
    /// Cycle period in seconds (used by the cyclic loss and nondimensionalization).
    pub period: f64,
}

impl FlowField {
    pub fn nt(&self) -> usize {
        self.times.len()
    }

    pub fn nx(&self) -> usize {
        self.xs.len()
    }

    pub fn ny(&self) -> usize {
        self.ys.len()
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    #[inline]
    pub fn idx(&self, ti: usize, xi: usize, yi: usize) -> usize {
        (ti * self.nx() + xi) * self.ny() + yi
    }

    /// Inverse of [`FlowField::idx`].
    #[inline]
    pub fn coords_of(&self, idx: usize) -> (usize, usize, usize) {
        let ny = self.ny();
        let nx = self.nx();
        let yi = idx % ny;
        let xi = (idx / ny) % nx;
        let ti = idx / (ny * nx);
        (ti, xi, yi)
    }

    pub fn dx(&self) -> f64 {
        if self.xs.len() < 2 {
            0.0
        } else {
            (self.xs[self.xs.len() - 1] - self.xs[0]) / (self.xs.len() - 1) as f64
        }
    }

    pub fn dy(&self) -> f64 {
        if self.ys.len() < 2 {
            0.0
        } else {
            (self.ys[self.ys.len() - 1] - self.ys[0]) / (self.ys.len() - 1) as f64
        }
    }

    pub fn dt(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            (self.times[self.times.len() - 1] - self.times[0]) / (self.times.len() - 1) as f64
        }
    }

    /// Half-width of the y extent: the tube radius for synthetic fields.
    pub fn half_width(&self) -> f64 {
        let lo = self.ys.first().copied().unwrap_or(0.0);
        let hi = self.ys.last().copied().unwrap_or(0.0);
        (hi - lo) * 0.5
    }

    pub fn y_center(&self) -> f64 {
        let lo = self.ys.first().copied().unwrap_or(0.0);
        let hi = self.ys.last().copied().unwrap_or(0.0);
        (hi + lo) * 0.5
    }

    pub fn is_fluid(&self, idx: usize) -> bool {
        self.region[idx] == Region::Fluid
    }

    /// Consistency check for grid shapes and finiteness.
    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.nt() * self.nx() * self.ny();
        if self.u.len() != n || self.v.len() != n || self.region.len() != n {
            return Err(DataError::Shape(format!(
                "expected {} samples, got u={} v={} region={}",
                n,
                self.u.len(),
                self.v.len(),
                self.region.len()
            )));
        }
        if let Some(occ) = &self.occlusion {
            if occ.len() != n {
                return Err(DataError::Shape(format!(
                    "occlusion has {} samples, expected {n}",
                    occ.len()
                )));
            }
        }
        if !self.times.windows(2).all(|w| w[0] < w[1]) {
            return Err(DataError::Shape("times not strictly increasing".into()));
        }
        let finite = self.u.iter().chain(&self.v).all(|x| x.is_finite())
            && self.times.iter().chain(&self.xs).chain(&self.ys).all(|x| x.is_finite());
        if !finite {
            return Err(DataError::Shape("non-finite values in field".into()));
        }
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(DataError::Shape(format!("invalid period {}", self.period)));
        }
        Ok(())
    }

    /// Same grid coordinates within `tol`, elementwise.
    pub fn same_grid(&self, other: &FlowField, tol: f64) -> bool {
        let close = |a: &[f64], b: &[f64]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
        };
        close(&self.times, &other.times) && close(&self.xs, &other.xs) && close(&self.ys, &other.ys)
    }

    /// Trilinear resampling onto another field's grid (coordinates clamped
    /// to this field's extent). Region labels and occlusion are taken from
    /// the nearest source point.
    pub fn resample_to(&self, target: &FlowField) -> FlowField {
        let n = target.nt() * target.nx() * target.ny();
        let mut u = vec![0.0; n];
        let mut v = vec![0.0; n];
        let mut region = vec![Region::Fluid; n];
        let mut occ = self.occlusion.as_ref().map(|_| vec![1.0; n]);
        let frac = |arr: &[f64], v: f64| -> (usize, f64) {
            if arr.len() < 2 {
                return (0, 0.0);
            }
            let step = (arr[arr.len() - 1] - arr[0]) / (arr.len() - 1) as f64;
            let f = ((v - arr[0]) / step).clamp(0.0, (arr.len() - 1) as f64);
            let i = (f.floor() as usize).min(arr.len() - 2);
            (i, f - i as f64)
        };
        for k in 0..n {
            let ny = target.ny();
            let nx = target.nx();
            let yi = k % ny;
            let xi = (k / ny) % nx;
            let ti = k / (ny * nx);
            let (t0, ft) = frac(&self.times, target.times[ti]);
            let (x0, fx) = frac(&self.xs, target.xs[xi]);
            let (y0, fy) = frac(&self.ys, target.ys[yi]);
            let mut acc_u = 0.0;
            let mut acc_v = 0.0;
            for (dt, wt) in [(0, 1.0 - ft), (1, ft)] {
                for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
                        let w = wt * wx * wy;
                        if w == 0.0 {
                            continue;
                        }
                        let src = self.idx(
                            (t0 + dt).min(self.nt() - 1),
                            (x0 + dx).min(self.nx() - 1),
                            (y0 + dy).min(self.ny() - 1),
                        );
                        acc_u += w * self.u[src];
                        acc_v += w * self.v[src];
                    }
                }
            }
            u[k] = acc_u;
            v[k] = acc_v;
            // nearest source point for the labels
            let tn = if ft < 0.5 { t0 } else { (t0 + 1).min(self.nt() - 1) };
            let xn = if fx < 0.5 { x0 } else { (x0 + 1).min(self.nx() - 1) };
            let yn = if fy < 0.5 { y0 } else { (y0 + 1).min(self.ny() - 1) };
            let src = self.idx(tn, xn, yn);
            region[k] = self.region[src];
            if let (Some(dst), Some(srcv)) = (occ.as_mut(), self.occlusion.as_ref()) {
                dst[k] = srcv[src];
            }
        }
        FlowField {
            times: target.times.clone(),
            xs: target.xs.clone(),
            ys: target.ys.clone(),
            u,
            v,
            region,
            occlusion: occ,
            period: self.period,
        }
    }

    /// Mean speed over fluid points of time slice `ti`.
    pub fn mean_speed_at(&self, ti: usize) -> f64 {
        let (mut sum, mut n) = (0.0, 0usize);
        for xi in 0..self.nx() {
            for yi in 0..self.ny() {
                let i = self.idx(ti, xi, yi);
                if self.is_fluid(i) {
                    sum += self.u[i].hypot(self.v[i]);
                    n += 1;
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 1);
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + step * i as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_field() -> FlowField {
        let times = linspace(0.0, 1.0, 3);
        let xs = linspace(0.0, 0.04, 4);
        let ys = linspace(-0.0025, 0.0025, 5);
        let n = 3 * 4 * 5;
        FlowField {
            times,
            xs,
            ys,
            u: vec![0.0; n],
            v: vec![0.0; n],
            region: vec![Region::Fluid; n],
            occlusion: None,
            period: 1.0,
        }
    }

    #[test]
    fn idx_roundtrip() {
        let f = tiny_field();
        for ti in 0..3 {
            for xi in 0..4 {
                for yi in 0..5 {
                    let i = f.idx(ti, xi, yi);
                    assert_eq!(f.coords_of(i), (ti, xi, yi));
                }
            }
        }
    }

    #[test]
    fn validate_catches_shape_mismatch() {
        let mut f = tiny_field();
        f.u.pop();
        assert!(f.validate().is_err());
    }

    #[test]
    fn half_width_is_radius() {
        let f = tiny_field();
        assert!((f.half_width() - 0.0025).abs() < 1e-15);
        assert!(f.y_center().abs() < 1e-15);
    }
}

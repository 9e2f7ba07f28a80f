//! Particle image velocimetry surrogate: renders synthetic particle images
//! advected by a flow field and recovers displacements by windowed
//! normalized cross-correlation with 3-point Gaussian subpixel refinement.

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::field::{FlowField, Region};
use crate::rng::Rng;

/// Grayscale particle image with a physical pixel scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleImage {
    /// Row-major pixels in [0, 1], index (y * width + x).
    pub pixels: Vec<f64>,
    pub width: usize,
    pub height: usize,
    /// Meters per pixel.
    pub scale: f64,
    /// Acquisition time (s).
    pub timestamp: f64,
}

impl ParticleImage {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }
}

/// Rendering parameters for the synthetic particle images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    /// Particles per square pixel.
    pub density: f64,
    /// Gaussian blob standard deviation in pixels.
    pub blob_std: f64,
    /// Meters per pixel; `None` sizes the image to 96 rows across the tube.
    pub scale: Option<f64>,
}

impl Default for RenderSpec {
    fn default() -> Self {
        RenderSpec {
            density: 0.02,
            blob_std: 1.2,
            scale: None,
        }
    }
}

/// Renders a particle image pair: seeded positions at time `t`, and the same
/// particles advected by the local velocity times `dt` (flow homogeneity).
pub fn render_particles(
    field: &FlowField,
    t: f64,
    dt: f64,
    density: f64,
    seed: u64,
) -> Result<(ParticleImage, ParticleImage), DataError> {
    let spec = RenderSpec {
        density,
        ..RenderSpec::default()
    };
    render_particles_with(field, t, dt, &spec, seed)
}

pub fn render_particles_with(
    field: &FlowField,
    t: f64,
    dt: f64,
    spec: &RenderSpec,
    seed: u64,
) -> Result<(ParticleImage, ParticleImage), DataError> {
    if dt <= 0.0 {
        return Err(DataError::Config(format!("dt must be positive, got {dt}")));
    }
    if !(spec.density > 0.0 && spec.density <= 0.2) {
        return Err(DataError::Config(format!(
            "density {} outside (0, 0.2]",
            spec.density
        )));
    }
    field.validate()?;
    let x_extent = field.xs[field.nx() - 1] - field.xs[0];
    let y_extent = field.ys[field.ny() - 1] - field.ys[0];
    let scale = spec
        .scale
        .unwrap_or_else(|| y_extent / 96.0);
    let width = (x_extent / scale).round() as usize;
    let height = (y_extent / scale).round() as usize;
    if width < 4 || height < 4 {
        return Err(DataError::Config(format!(
            "image {width}x{height} too small; reduce the pixel scale"
        )));
    }
    let n = (spec.density * (width * height) as f64).round() as usize;
    let mut rng = Rng::new(seed);
    let mut first = blank(width, height, scale, t);
    let mut second = blank(width, height, scale, t + dt);
    let ti = nearest_time(field, t);
    for _ in 0..n {
        let px = rng.uniform_in(0.0, width as f64);
        let py = rng.uniform_in(0.0, height as f64);
        splat(&mut first, px, py, spec.blob_std);
        // physical position and local velocity
        let x = field.xs[0] + px * scale;
        let y = field.ys[0] + py * scale;
        let (u, v) = sample_velocity(field, ti, x, y);
        splat(
            &mut second,
            px + u * dt / scale,
            py + v * dt / scale,
            spec.blob_std,
        );
    }
    Ok((first, second))
}

/// Largest particle displacement in pixels that `dt` would produce; callers
/// can warn when this approaches half the interrogation window.
pub fn max_displacement_px(field: &FlowField, dt: f64, scale: f64) -> f64 {
    let mut m = 0.0f64;
    for i in 0..field.len() {
        m = m.max(field.u[i].hypot(field.v[i]));
    }
    m * dt / scale
}

fn blank(width: usize, height: usize, scale: f64, timestamp: f64) -> ParticleImage {
    ParticleImage {
        pixels: vec![0.0; width * height],
        width,
        height,
        scale,
        timestamp,
    }
}

fn nearest_time(field: &FlowField, t: f64) -> usize {
    let mut best = 0;
    let mut dist = f64::INFINITY;
    for (i, &ft) in field.times.iter().enumerate() {
        let d = (ft - t).abs();
        if d < dist {
            dist = d;
            best = i;
        }
    }
    best
}

/// Bilinear velocity sample at a physical position.
fn sample_velocity(field: &FlowField, ti: usize, x: f64, y: f64) -> (f64, f64) {
    let fx = ((x - field.xs[0]) / field.dx()).clamp(0.0, (field.nx() - 1) as f64);
    let fy = ((y - field.ys[0]) / field.dy()).clamp(0.0, (field.ny() - 1) as f64);
    let x0 = (fx.floor() as usize).min(field.nx() - 2);
    let y0 = (fy.floor() as usize).min(field.ny() - 2);
    let ax = fx - x0 as f64;
    let ay = fy - y0 as f64;
    let lerp2 = |g: &[f64]| -> f64 {
        let i00 = field.idx(ti, x0, y0);
        let i10 = field.idx(ti, x0 + 1, y0);
        let i01 = field.idx(ti, x0, y0 + 1);
        let i11 = field.idx(ti, x0 + 1, y0 + 1);
        g[i00] * (1.0 - ax) * (1.0 - ay)
            + g[i10] * ax * (1.0 - ay)
            + g[i01] * (1.0 - ax) * ay
            + g[i11] * ax * ay
    };
    (lerp2(&field.u), lerp2(&field.v))
}

/// Saturating-add Gaussian blob centered at (cx, cy) in pixel coordinates.
fn splat(img: &mut ParticleImage, cx: f64, cy: f64, std: f64) {
    let radius = (4.0 * std).ceil() as isize;
    let x0 = (cx.round() as isize - radius).max(0);
    let x1 = (cx.round() as isize + radius).min(img.width as isize - 1);
    let y0 = (cy.round() as isize - radius).max(0);
    let y1 = (cy.round() as isize + radius).min(img.height as isize - 1);
    let inv = 1.0 / (2.0 * std * std);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let v = (-(dx * dx + dy * dy) * inv).exp();
            let p = &mut img.pixels[y as usize * img.width + x as usize];
            *p = (*p + v).min(1.0);
        }
    }
}

/// Per-window displacements from cross-correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct PivResult {
    /// Window centers in pixel coordinates.
    pub window_centers: Vec<[f64; 2]>,
    /// Displacements in pixels (dx, dy).
    pub displacements: Vec<[f64; 2]>,
    /// Normalized correlation peak per window, in [0, 1].
    pub correlation_peaks: Vec<f64>,
    /// False where the window had no texture to correlate.
    pub valid: Vec<bool>,
}

/// Windowed normalized cross-correlation between an image pair.
///
/// Windows tile the first image with the given overlap; each searches
/// displacements up to half the window size. The integer peak is refined by
/// a 3-point Gaussian fit per axis (skipped for exact matches and at the
/// search edge). Textureless windows are flagged invalid with peak 0.
pub fn cross_correlate(
    a: &ParticleImage,
    b: &ParticleImage,
    window: (usize, usize),
    overlap: f64,
) -> Result<PivResult, DataError> {
    let (ww, wh) = window;
    if ww == 0 || wh == 0 || ww > a.width || wh > a.height {
        return Err(DataError::Config(format!(
            "window {ww}x{wh} does not fit image {}x{}",
            a.width, a.height
        )));
    }
    if a.width != b.width || a.height != b.height {
        return Err(DataError::Shape("image sizes differ".into()));
    }
    if !(0.0..=0.9).contains(&overlap) {
        return Err(DataError::Config(format!("overlap {overlap} outside [0, 0.9]")));
    }
    let sx = ((ww as f64) * (1.0 - overlap)).max(1.0) as usize;
    let sy = ((wh as f64) * (1.0 - overlap)).max(1.0) as usize;
    let (rx, ry) = (ww as isize / 2, wh as isize / 2);
    let mut result = PivResult {
        window_centers: Vec::new(),
        displacements: Vec::new(),
        correlation_peaks: Vec::new(),
        valid: Vec::new(),
    };
    // tile only windows whose full search range stays inside the image;
    // windows closer to the edge cannot see every candidate displacement
    // and would report spurious peaks
    let x_lo = rx as usize;
    let y_lo = ry as usize;
    if a.width < ww + 2 * x_lo || a.height < wh + 2 * y_lo {
        return Err(DataError::Config(format!(
            "image {}x{} leaves no room for a {ww}x{wh} window with its search range",
            a.width, a.height
        )));
    }
    let mut wx = x_lo;
    while wx + ww + x_lo <= a.width {
        let mut wy = y_lo;
        while wy + wh + y_lo <= a.height {
            let (disp, peak, valid) = correlate_window(a, b, wx, wy, ww, wh, rx, ry);
            result
                .window_centers
                .push([wx as f64 + ww as f64 / 2.0, wy as f64 + wh as f64 / 2.0]);
            result.displacements.push(disp);
            result.correlation_peaks.push(peak);
            result.valid.push(valid);
            wy += sy;
        }
        wx += sx;
    }
    Ok(result)
}

fn window_stats(img: &ParticleImage, x0: usize, y0: usize, w: usize, h: usize) -> (f64, f64) {
    let mut sum = 0.0;
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            sum += img.get(x, y);
        }
    }
    let mean = sum / (w * h) as f64;
    let mut var = 0.0;
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            let d = img.get(x, y) - mean;
            var += d * d;
        }
    }
    (mean, var)
}

#[allow(clippy::too_many_arguments)]
fn correlate_window(
    a: &ParticleImage,
    b: &ParticleImage,
    wx: usize,
    wy: usize,
    ww: usize,
    wh: usize,
    rx: isize,
    ry: isize,
) -> ([f64; 2], f64, bool) {
    let (mean_a, var_a) = window_stats(a, wx, wy, ww, wh);
    if var_a <= 1e-12 {
        return ([0.0, 0.0], 0.0, false);
    }
    let nx = (2 * rx + 1) as usize;
    let ny = (2 * ry + 1) as usize;
    let mut ncc = vec![f64::NEG_INFINITY; nx * ny];
    let mut best = (0isize, 0isize, f64::NEG_INFINITY);
    for dy in -ry..=ry {
        for dx in -rx..=rx {
            let bx = wx as isize + dx;
            let by = wy as isize + dy;
            if bx < 0
                || by < 0
                || bx as usize + ww > b.width
                || by as usize + wh > b.height
            {
                continue;
            }
            let (mean_b, var_b) = window_stats(b, bx as usize, by as usize, ww, wh);
            if var_b <= 1e-12 {
                continue;
            }
            let mut cov = 0.0;
            for y in 0..wh {
                for x in 0..ww {
                    cov += (a.get(wx + x, wy + y) - mean_a)
                        * (b.get(bx as usize + x, by as usize + y) - mean_b);
                }
            }
            let c = cov / (var_a * var_b).sqrt();
            ncc[(dy + ry) as usize * nx + (dx + rx) as usize] = c;
            if c > best.2 {
                best = (dx, dy, c);
            }
        }
    }
    if !best.2.is_finite() {
        return ([0.0, 0.0], 0.0, false);
    }
    let (pdx, pdy, peak) = best;
    let mut disp = [pdx as f64, pdy as f64];
    // subpixel refinement unless the match is exact or sits on the edge
    if peak < 1.0 - 1e-9 {
        let at = |dx: isize, dy: isize| -> Option<f64> {
            if dx < -rx || dx > rx || dy < -ry || dy > ry {
                return None;
            }
            let v = ncc[(dy + ry) as usize * nx + (dx + rx) as usize];
            v.is_finite().then_some(v)
        };
        if let (Some(l), Some(c), Some(r)) = (at(pdx - 1, pdy), at(pdx, pdy), at(pdx + 1, pdy)) {
            disp[0] += subpixel_offset(l, c, r);
        }
        if let (Some(l), Some(c), Some(r)) = (at(pdx, pdy - 1), at(pdx, pdy), at(pdx, pdy + 1)) {
            disp[1] += subpixel_offset(l, c, r);
        }
    }
    ([disp[0], disp[1]], peak.clamp(0.0, 1.0), true)
}

/// 3-point Gaussian peak fit; falls back to a parabola when a sample is not
/// positive (the Gaussian fit needs logarithms).
fn subpixel_offset(left: f64, center: f64, right: f64) -> f64 {
    let d = if left > 0.0 && center > 0.0 && right > 0.0 {
        let (l, c, r) = (left.ln(), center.ln(), right.ln());
        let denom = 2.0 * (l - 2.0 * c + r);
        if denom.abs() < 1e-12 {
            return 0.0;
        }
        (l - r) / denom
    } else {
        let denom = 2.0 * (left - 2.0 * center + right);
        if denom.abs() < 1e-12 {
            return 0.0;
        }
        (left - right) / denom
    };
    d.clamp(-0.5, 0.5)
}

/// Converts window displacements to a single-slice flow field. Invalid
/// windows keep the fluid label with zero velocity and an occlusion value
/// of 0; valid windows get 1.
pub fn piv_to_field(r: &PivResult, dt: f64, scale: f64) -> Result<FlowField, DataError> {
    if dt <= 0.0 {
        return Err(DataError::Config(format!("dt must be positive, got {dt}")));
    }
    if r.window_centers.is_empty() {
        return Err(DataError::Shape("empty PIV result".into()));
    }
    let mut xs: Vec<f64> = r.window_centers.iter().map(|c| c[0] * scale).collect();
    let mut ys: Vec<f64> = r.window_centers.iter().map(|c| c[1] * scale).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ys.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let (nx, ny) = (xs.len(), ys.len());
    let n = nx * ny;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut lambda = vec![0.0; n];
    let find = |arr: &[f64], v: f64| -> usize {
        arr.iter()
            .position(|&a| (a - v).abs() < 1e-12)
            .expect("window center on grid")
    };
    for (k, c) in r.window_centers.iter().enumerate() {
        let xi = find(&xs, c[0] * scale);
        let yi = find(&ys, c[1] * scale);
        let idx = xi * ny + yi;
        if r.valid[k] {
            u[idx] = r.displacements[k][0] * scale / dt;
            v[idx] = r.displacements[k][1] * scale / dt;
            lambda[idx] = 1.0;
        }
    }
    Ok(FlowField {
        times: vec![0.0],
        xs,
        ys,
        u,
        v,
        region: vec![Region::Fluid; n],
        occlusion: Some(lambda),
        period: 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::linspace;

    fn uniform_field(u: f64) -> FlowField {
        let times = vec![0.0, 1.0];
        let xs = linspace(0.0, 0.04, 64);
        let ys = linspace(-0.0025, 0.0025, 33);
        let n = 2 * 64 * 33;
        let mut f = FlowField {
            times,
            xs,
            ys,
            u: vec![u; n],
            v: vec![0.0; n],
            region: vec![Region::Fluid; n],
            occlusion: None,
            period: 2.0,
        };
        f.period = 2.0;
        f
    }

    #[test]
    fn zero_velocity_gives_identical_images() {
        let f = uniform_field(0.0);
        let (a, b) = render_particles(&f, 0.0, 0.01, 0.02, 42).unwrap();
        assert_eq!(a.pixels, b.pixels);
    }

    #[test]
    fn uniform_flow_translates_image() {
        let f = uniform_field(0.1);
        // choose scale and dt so the shift is exactly 3 px
        let scale = 5e-5;
        let dt = 3.0 * scale / 0.1;
        let spec = RenderSpec {
            density: 0.02,
            blob_std: 1.2,
            scale: Some(scale),
        };
        let (a, b) = render_particles_with(&f, 0.0, dt, &spec, 7).unwrap();
        for y in 0..a.height {
            for x in 3..a.width {
                let expect = a.get(x - 3, y);
                let got = b.get(x, y);
                assert!(
                    (got - expect).abs() <= 1e-6,
                    "pixel ({x},{y}): {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn render_rejects_bad_dt_and_density() {
        let f = uniform_field(0.1);
        assert!(render_particles(&f, 0.0, 0.0, 0.02, 1).is_err());
        assert!(render_particles(&f, 0.0, 0.01, 0.5, 1).is_err());
    }

    #[test]
    fn identical_images_correlate_to_zero() {
        let f = uniform_field(0.0);
        let (a, b) = render_particles(&f, 0.0, 0.01, 0.03, 11).unwrap();
        let r = cross_correlate(&a, &b, (24, 24), 0.5).unwrap();
        assert!(r.valid.iter().any(|&v| v));
        for (k, &valid) in r.valid.iter().enumerate() {
            if valid {
                assert_eq!(r.displacements[k], [0.0, 0.0]);
                assert!(r.correlation_peaks[k] > 0.99);
            }
        }
    }

    #[test]
    fn integer_shift_recovered_exactly() {
        // shifted copy of a speckle image
        let mut rng = Rng::new(5);
        let (w, h) = (160, 96);
        let mut a = blank(w, h, 1e-4, 0.0);
        a.pixels.iter_mut().for_each(|p| *p = rng.uniform());
        let mut b = blank(w, h, 1e-4, 0.01);
        for y in 0..h {
            for x in 0..w {
                let sx = x as isize - 3;
                b.pixels[y * w + x] = if sx >= 0 {
                    a.pixels[y * w + sx as usize]
                } else {
                    0.0
                };
            }
        }
        let r = cross_correlate(&a, &b, (32, 32), 0.5).unwrap();
        let mut checked = 0;
        for k in 0..r.valid.len() {
            if r.valid[k] {
                assert_eq!(
                    r.displacements[k],
                    [3.0, 0.0],
                    "window at {:?}",
                    r.window_centers[k]
                );
                checked += 1;
            }
        }
        assert!(checked >= 6, "only {checked} windows checked");
    }

    #[test]
    fn subpixel_shift_recovered() {
        let f = uniform_field(0.1);
        let scale = 5e-5;
        let dt = 2.5 * scale / 0.1; // exactly 2.5 px displacement
        let spec = RenderSpec {
            density: 0.03,
            blob_std: 1.2,
            scale: Some(scale),
        };
        let (a, b) = render_particles_with(&f, 0.0, dt, &spec, 13).unwrap();
        let r = cross_correlate(&a, &b, (32, 32), 0.5).unwrap();
        let (mut sum, mut n) = (0.0, 0);
        for k in 0..r.valid.len() {
            if r.valid[k] {
                sum += r.displacements[k][0];
                n += 1;
            }
        }
        let mean = sum / n as f64;
        assert!((2.3..=2.7).contains(&mean), "mean dx {mean}");
    }

    /// Brute-force correlation oracle on one window: direct argmax of the
    /// normalized covariance, no refinement.
    #[test]
    fn integer_peak_matches_brute_force_oracle() {
        let f = uniform_field(0.08);
        let scale = 5e-5;
        let dt = 2.0 * scale / 0.08;
        let spec = RenderSpec {
            density: 0.03,
            blob_std: 1.2,
            scale: Some(scale),
        };
        let (a, b) = render_particles_with(&f, 0.0, dt, &spec, 29).unwrap();
        let (wx, wy, ww, wh) = (32usize, 16usize, 32usize, 32usize);
        let mut best = (0isize, 0isize, f64::NEG_INFINITY);
        for dy in -8isize..=8 {
            for dx in -8isize..=8 {
                let bx = wx as isize + dx;
                let by = wy as isize + dy;
                if bx < 0 || by < 0 || bx as usize + ww > b.width || by as usize + wh > b.height {
                    continue;
                }
                let (ma, va) = window_stats(&a, wx, wy, ww, wh);
                let (mb, vb) = window_stats(&b, bx as usize, by as usize, ww, wh);
                let mut cov = 0.0;
                for y in 0..wh {
                    for x in 0..ww {
                        cov += (a.get(wx + x, wy + y) - ma)
                            * (b.get(bx as usize + x, by as usize + y) - mb);
                    }
                }
                let c = cov / (va * vb).sqrt();
                if c > best.2 {
                    best = (dx, dy, c);
                }
            }
        }
        assert_eq!((best.0, best.1), (2, 0), "oracle peak {best:?}");
        let (disp, _, valid) = correlate_window(&a, &b, wx, wy, ww, wh, 16, 16);
        assert!(valid);
        assert_eq!(disp[0].round() as isize, best.0);
        assert_eq!(disp[1].round() as isize, best.1);
    }

    #[test]
    fn piv_to_field_arithmetic() {
        let r = PivResult {
            window_centers: vec![[16.0, 16.0], [48.0, 16.0]],
            displacements: vec![[3.0, 0.0], [1.0, -2.0]],
            correlation_peaks: vec![0.9, 0.8],
            valid: vec![true, true],
        };
        let f = piv_to_field(&r, 1e-2, 1e-4).unwrap();
        assert_eq!(f.nx(), 2);
        assert_eq!(f.ny(), 1);
        let u0 = f.u[0];
        assert!((u0 - 0.03).abs() <= 1e-15, "u {u0}");
        assert!((f.v[1] + 0.02).abs() <= 1e-15);
    }

    #[test]
    fn all_invalid_becomes_zero_field_with_zero_lambda() {
        let r = PivResult {
            window_centers: vec![[16.0, 16.0], [48.0, 16.0]],
            displacements: vec![[0.0, 0.0], [0.0, 0.0]],
            correlation_peaks: vec![0.0, 0.0],
            valid: vec![false, false],
        };
        let f = piv_to_field(&r, 1e-2, 1e-4).unwrap();
        assert!(f.u.iter().all(|&u| u == 0.0));
        assert!(f.occlusion.unwrap().iter().all(|&l| l == 0.0));
    }

    #[test]
    fn end_to_end_uniform_flow() {
        let truth = 0.12;
        let f = uniform_field(truth);
        let scale = 5e-5;
        let dt = 3.3 * scale / truth;
        let spec = RenderSpec {
            density: 0.03,
            blob_std: 1.2,
            scale: Some(scale),
        };
        let (a, b) = render_particles_with(&f, 0.0, dt, &spec, 31).unwrap();
        let r = cross_correlate(&a, &b, (32, 32), 0.5).unwrap();
        let field = piv_to_field(&r, dt, scale).unwrap();
        let lam = field.occlusion.as_ref().unwrap();
        let (mut sum, mut n) = (0.0, 0);
        for i in 0..field.len() {
            if lam[i] == 1.0 {
                sum += field.u[i];
                n += 1;
            }
        }
        let mean = sum / n as f64;
        let tol = (0.05 * truth).max(0.1 * scale / dt);
        assert!((mean - truth).abs() <= tol, "recovered {mean} vs {truth}");
    }

    #[test]
    fn denser_seeding_does_not_hurt_uniform_case() {
        let truth = 0.1;
        let f = uniform_field(truth);
        let scale = 5e-5;
        let dt = 2.5 * scale / truth;
        let mut errs = Vec::new();
        for density in [0.01, 0.02, 0.04] {
            let spec = RenderSpec {
                density,
                blob_std: 1.2,
                scale: Some(scale),
            };
            let (a, b) = render_particles_with(&f, 0.0, dt, &spec, 17).unwrap();
            let r = cross_correlate(&a, &b, (32, 32), 0.5).unwrap();
            let (mut sum, mut n) = (0.0, 0);
            for k in 0..r.valid.len() {
                if r.valid[k] {
                    sum += (r.displacements[k][0] - 2.5).abs();
                    n += 1;
                }
            }
            errs.push(sum / n as f64);
        }
        assert!(
            errs[1] <= errs[0] + 1e-9 && errs[2] <= errs[1] + 1e-9,
            "errors not monotone: {errs:?}"
        );
    }

    #[test]
    fn deterministic_under_seed() {
        let f = uniform_field(0.1);
        let (a1, _) = render_particles(&f, 0.0, 0.001, 0.02, 99).unwrap();
        let (a2, _) = render_particles(&f, 0.0, 0.001, 0.02, 99).unwrap();
        assert_eq!(a1.pixels, a2.pixels);
        let (a3, _) = render_particles(&f, 0.0, 0.001, 0.02, 100).unwrap();
        assert_ne!(a1.pixels, a3.pixels);
    }

    #[test]
    fn womersley_displacement_profile() {
        let p = crate::synthdata::default_params(2.77).unwrap();
        let f = crate::synthdata::generate_field(
            &p,
            &crate::synthdata::GridSpec {
                nx: 64,
                ny: 33,
                nt: 25,
                x_extent: 0.04,
            },
            1,
        )
        .unwrap();
        // peak phase
        let cycle = crate::verify::mean_velocity_cycle(&f);
        let peak_ti = cycle
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let t = f.times[peak_ti];
        let scale = 4e-5;
        let dt = 4.0 * scale / 0.3; // peak displacement about 4 px
        let spec = RenderSpec {
            density: 0.05,
            blob_std: 1.2,
            scale: Some(scale),
        };
        let (a, b) = render_particles_with(&f, t, dt, &spec, 3).unwrap();
        // short windows in y limit the averaging bias across the curved profile
        let r = cross_correlate(&a, &b, (32, 8), 0.5).unwrap();
        // displacement profile: mean dx per window row
        let mut rows: std::collections::BTreeMap<i64, (f64, usize)> = Default::default();
        for k in 0..r.valid.len() {
            if r.valid[k] {
                let key = (r.window_centers[k][1] * 1000.0).round() as i64;
                let e = rows.entry(key).or_insert((0.0, 0));
                e.0 += r.displacements[k][0];
                e.1 += 1;
            }
        }
        assert!(rows.len() > 10, "only {} profile rows", rows.len());
        for (key, (sum, n)) in rows {
            let cy = key as f64 / 1000.0;
            let y = f.ys[0] + cy * scale;
            let expect = crate::synthdata::womersley_velocity(&p, y / p.radius, t) * dt / scale;
            let got = sum / n as f64;
            assert!(
                (got - expect).abs() <= 0.2,
                "profile row y={y:.5}: {got} vs {expect} px"
            );
        }
    }
}

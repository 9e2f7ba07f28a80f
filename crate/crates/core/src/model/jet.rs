//! Batched propagation of third-order derivative jets through the model.
//!
//! For each collocation point a 13-component jet is carried through the
//! network: the value, the first derivatives (t, x, y), the second
//! derivatives that enter the vorticity transport terms (xx, xy, yy, xt, yt)
//! and the purely spatial third derivatives (xxx, xxy, xyy, yyyy is of
//! course yyy). Linear layers act on all channels as one stacked matrix
//! product; activations compose the jets with the chain rule up to third
//! order. This is the training-time route to the Navier-Stokes residual and
//! its weight gradient; it is held to agreement with the autodiff-graph
//! route and with finite differences in the tests.
//!
//! All derivatives here are with respect to the nondimensional coordinates
//! given by [`FlowScales`], and the jets carry the scaled velocity, so the
//! residual uses the Reynolds number as stated.

use rayon::prelude::*;

use crate::linalg::{matmul_ab, matmul_abt, matmul_atb_acc, Mat};

use super::batch::ModelGrads;
use super::queries::FlowScales;
use super::{Activation, EncodingKind, FieldModel, LEAKY_SLOPE};

pub const CHANNELS: usize = 13;
const VAL: usize = 0;
const DT: usize = 1;
const DX: usize = 2;
const DY: usize = 3;
const DXX: usize = 4;
const DXY: usize = 5;
const DYY: usize = 6;
const DXT: usize = 7;
const DYT: usize = 8;
const DXXX: usize = 9;
const DXXY: usize = 10;
const DXYY: usize = 11;
const DYYY: usize = 12;

/// Intermediate jet state kept for the backward pass. Rows are stacked
/// point-major, channel-minor: row (i * CHANNELS + channel).
pub struct JetCache {
    pub feats: Mat,
    pub pre: Vec<Mat>,
    pub act: Vec<Mat>,
    /// Output jets scaled to nondimensional velocity (n points x 2 comps).
    pub out: Mat,
    inv_velocity: f64,
}

/// Residual and divergence at each point, with the cache for backprop.
pub struct ResidualBatch {
    pub residual: Vec<f64>,
    pub divergence: Vec<f64>,
    pub cache: JetCache,
}

#[inline]
fn act_derivs(act: Activation, a: f64) -> (f64, f64, f64, f64, f64) {
    match act {
        Activation::LeakyRelu => {
            let d1 = if a >= 0.0 { 1.0 } else { LEAKY_SLOPE };
            (if a >= 0.0 { a } else { LEAKY_SLOPE * a }, d1, 0.0, 0.0, 0.0)
        }
        Activation::Tanh => {
            let t = a.tanh();
            let d1 = 1.0 - t * t;
            let d2 = -2.0 * t * d1;
            let d3 = -2.0 * (d1 * d1 + t * d2);
            let d4 = -2.0 * (3.0 * d1 * d2 + t * d3);
            (t, d1, d2, d3, d4)
        }
    }
}

/// Third-order jet composition y = act(a).
#[inline]
fn jet_apply(act: Activation, a: &[f64; CHANNELS], y: &mut [f64; CHANNELS]) {
    let (v, d1, d2, d3, _) = act_derivs(act, a[VAL]);
    y[VAL] = v;
    y[DT] = d1 * a[DT];
    y[DX] = d1 * a[DX];
    y[DY] = d1 * a[DY];
    y[DXX] = d2 * a[DX] * a[DX] + d1 * a[DXX];
    y[DXY] = d2 * a[DX] * a[DY] + d1 * a[DXY];
    y[DYY] = d2 * a[DY] * a[DY] + d1 * a[DYY];
    y[DXT] = d2 * a[DX] * a[DT] + d1 * a[DXT];
    y[DYT] = d2 * a[DY] * a[DT] + d1 * a[DYT];
    y[DXXX] = d3 * a[DX] * a[DX] * a[DX] + 3.0 * d2 * a[DX] * a[DXX] + d1 * a[DXXX];
    y[DXXY] = d3 * a[DX] * a[DX] * a[DY]
        + d2 * (a[DXX] * a[DY] + 2.0 * a[DXY] * a[DX])
        + d1 * a[DXXY];
    y[DXYY] = d3 * a[DX] * a[DY] * a[DY]
        + d2 * (a[DYY] * a[DX] + 2.0 * a[DXY] * a[DY])
        + d1 * a[DXYY];
    y[DYYY] = d3 * a[DY] * a[DY] * a[DY] + 3.0 * d2 * a[DY] * a[DYY] + d1 * a[DYYY];
}

/// Adjoint of [`jet_apply`]: accumulates abar += (dy/da)^T ybar.
#[inline]
fn jet_apply_adjoint(
    act: Activation,
    a: &[f64; CHANNELS],
    ybar: &[f64; CHANNELS],
    abar: &mut [f64; CHANNELS],
) {
    let (_, d1, d2, d3, d4) = act_derivs(act, a[VAL]);
    let (ax, ay, at) = (a[DX], a[DY], a[DT]);
    // d/dVAL: every component's sigma-derivative order bumps once
    abar[VAL] += ybar[VAL] * d1
        + ybar[DT] * d2 * at
        + ybar[DX] * d2 * ax
        + ybar[DY] * d2 * ay
        + ybar[DXX] * (d3 * ax * ax + d2 * a[DXX])
        + ybar[DXY] * (d3 * ax * ay + d2 * a[DXY])
        + ybar[DYY] * (d3 * ay * ay + d2 * a[DYY])
        + ybar[DXT] * (d3 * ax * at + d2 * a[DXT])
        + ybar[DYT] * (d3 * ay * at + d2 * a[DYT])
        + ybar[DXXX] * (d4 * ax * ax * ax + 3.0 * d3 * ax * a[DXX] + d2 * a[DXXX])
        + ybar[DXXY] * (d4 * ax * ax * ay + d3 * (a[DXX] * ay + 2.0 * a[DXY] * ax) + d2 * a[DXXY])
        + ybar[DXYY] * (d4 * ax * ay * ay + d3 * (a[DYY] * ax + 2.0 * a[DXY] * ay) + d2 * a[DXYY])
        + ybar[DYYY] * (d4 * ay * ay * ay + 3.0 * d3 * ay * a[DYY] + d2 * a[DYYY]);
    abar[DT] += ybar[DT] * d1 + ybar[DXT] * d2 * ax + ybar[DYT] * d2 * ay;
    abar[DX] += ybar[DX] * d1
        + ybar[DXX] * 2.0 * d2 * ax
        + ybar[DXY] * d2 * ay
        + ybar[DXT] * d2 * at
        + ybar[DXXX] * (3.0 * d3 * ax * ax + 3.0 * d2 * a[DXX])
        + ybar[DXXY] * (2.0 * d3 * ax * ay + 2.0 * d2 * a[DXY])
        + ybar[DXYY] * (d3 * ay * ay + d2 * a[DYY]);
    abar[DY] += ybar[DY] * d1
        + ybar[DYY] * 2.0 * d2 * ay
        + ybar[DXY] * d2 * ax
        + ybar[DYT] * d2 * at
        + ybar[DYYY] * (3.0 * d3 * ay * ay + 3.0 * d2 * a[DYY])
        + ybar[DXYY] * (2.0 * d3 * ax * ay + 2.0 * d2 * a[DXY])
        + ybar[DXXY] * (d3 * ax * ax + d2 * a[DXX]);
    abar[DXX] += ybar[DXX] * d1 + ybar[DXXX] * 3.0 * d2 * ax + ybar[DXXY] * d2 * ay;
    abar[DXY] += ybar[DXY] * d1 + ybar[DXXY] * 2.0 * d2 * ax + ybar[DXYY] * 2.0 * d2 * ay;
    abar[DYY] += ybar[DYY] * d1 + ybar[DYYY] * 3.0 * d2 * ay + ybar[DXYY] * d2 * ax;
    abar[DXT] += ybar[DXT] * d1;
    abar[DYT] += ybar[DYT] * d1;
    abar[DXXX] += ybar[DXXX] * d1;
    abar[DXXY] += ybar[DXXY] * d1;
    abar[DXYY] += ybar[DXYY] * d1;
    abar[DYYY] += ybar[DYYY] * d1;
}

/// Jet of the encoded features with respect to nondimensional coordinates.
fn seed_features(model: &FieldModel, coords: &[[f64; 3]], scales: &FlowScales) -> Mat {
    let n = coords.len();
    let feat_len = model.encoding.feature_len();
    let mut feats = Mat::zeros(n * CHANNELS, feat_len);
    // d(normalized k)/d(nondim k): physical span times the norm scale
    let r = [
        scales.time() * model.norm.scale(0),
        scales.length * model.norm.scale(1),
        scales.length * model.norm.scale(2),
    ];
    let rows_per_point = CHANNELS * feat_len;
    feats
        .data
        .par_chunks_mut(rows_per_point)
        .enumerate()
        .with_min_len(8)
        .for_each(|(i, block)| {
            let vn = model.norm.normalize(coords[i]);
            let put = |block: &mut [f64], ch: usize, col: usize, v: f64| {
                block[ch * feat_len + col] = v;
            };
            if model.encoding.kind == EncodingKind::None {
                for k in 0..3 {
                    put(block, VAL, k, vn[k]);
                }
                put(block, DT, 0, r[0]);
                put(block, DX, 1, r[1]);
                put(block, DY, 2, r[2]);
                return;
            }
            let mut col = 0;
            for m in &model.encoding.mode_matrices {
                let d = m.rows;
                for j in 0..d {
                    let row = m.row(j);
                    let theta = std::f64::consts::TAU
                        * (row[0] * vn[0] + row[1] * vn[1] + row[2] * vn[2]);
                    let (s, c) = theta.sin_cos();
                    let ct = std::f64::consts::TAU * row[0] * r[0];
                    let cx = std::f64::consts::TAU * row[1] * r[1];
                    let cy = std::f64::consts::TAU * row[2] * r[2];
                    let (cc, sc) = (col + j, col + d + j);
                    // cos feature
                    put(block, VAL, cc, c);
                    put(block, DT, cc, -s * ct);
                    put(block, DX, cc, -s * cx);
                    put(block, DY, cc, -s * cy);
                    put(block, DXX, cc, -c * cx * cx);
                    put(block, DXY, cc, -c * cx * cy);
                    put(block, DYY, cc, -c * cy * cy);
                    put(block, DXT, cc, -c * cx * ct);
                    put(block, DYT, cc, -c * cy * ct);
                    put(block, DXXX, cc, s * cx * cx * cx);
                    put(block, DXXY, cc, s * cx * cx * cy);
                    put(block, DXYY, cc, s * cx * cy * cy);
                    put(block, DYYY, cc, s * cy * cy * cy);
                    // sin feature
                    put(block, VAL, sc, s);
                    put(block, DT, sc, c * ct);
                    put(block, DX, sc, c * cx);
                    put(block, DY, sc, c * cy);
                    put(block, DXX, sc, -s * cx * cx);
                    put(block, DXY, sc, -s * cx * cy);
                    put(block, DYY, sc, -s * cy * cy);
                    put(block, DXT, sc, -s * cx * ct);
                    put(block, DYT, sc, -s * cy * ct);
                    put(block, DXXX, sc, -c * cx * cx * cx);
                    put(block, DXXY, sc, -c * cx * cx * cy);
                    put(block, DXYY, sc, -c * cx * cy * cy);
                    put(block, DYYY, sc, -c * cy * cy * cy);
                }
                col += 2 * d;
            }
        });
    feats
}

/// Jet forward pass: returns the scaled output jets for all points.
pub fn jet_forward(model: &FieldModel, coords: &[[f64; 3]], scales: &FlowScales) -> JetCache {
    let n = coords.len();
    let feats = seed_features(model, coords, scales);
    let last = model.layers.len() - 1;
    let mut pre = Vec::with_capacity(model.layers.len());
    let mut act = Vec::with_capacity(model.layers.len());
    let mut input = &feats;
    for (li, layer) in model.layers.iter().enumerate() {
        let width = layer.w.rows;
        let mut p = Mat::zeros(n * CHANNELS, width);
        matmul_abt(input, &layer.w, &mut p);
        // bias only shifts the value channel
        p.data
            .par_chunks_mut(CHANNELS * width)
            .with_min_len(8)
            .for_each(|block| {
                for (o, x) in block[VAL * width..(VAL + 1) * width].iter_mut().enumerate() {
                    *x += layer.b[o];
                }
            });
        let a = if li == last {
            p.clone()
        } else {
            let mut a = p.clone();
            let f = model.activation;
            a.data
                .par_chunks_mut(CHANNELS * width)
                .zip(p.data.par_chunks(CHANNELS * width))
                .with_min_len(8)
                .for_each(|(ablock, pblock)| {
                    let mut aj = [0.0; CHANNELS];
                    let mut yj = [0.0; CHANNELS];
                    for o in 0..width {
                        for ch in 0..CHANNELS {
                            aj[ch] = pblock[ch * width + o];
                        }
                        jet_apply(f, &aj, &mut yj);
                        for ch in 0..CHANNELS {
                            ablock[ch * width + o] = yj[ch];
                        }
                    }
                });
            a
        };
        pre.push(p);
        act.push(a);
        input = act.last().unwrap();
    }
    let inv_velocity = 1.0 / scales.velocity;
    let mut out = act.last().unwrap().clone();
    out.scale(inv_velocity);
    JetCache {
        feats,
        pre,
        act,
        out,
        inv_velocity,
    }
}

#[derive(Debug, Clone, Copy)]
struct PointJets {
    u: [f64; CHANNELS],
    v: [f64; CHANNELS],
}

fn point_jets(cache: &JetCache, i: usize) -> PointJets {
    let mut u = [0.0; CHANNELS];
    let mut v = [0.0; CHANNELS];
    for ch in 0..CHANNELS {
        u[ch] = cache.out.get(i * CHANNELS + ch, 0);
        v[ch] = cache.out.get(i * CHANNELS + ch, 1);
    }
    PointJets { u, v }
}

/// Vorticity-transport residual and velocity divergence per point, in
/// nondimensional variables.
pub fn residual_batch(
    model: &FieldModel,
    coords: &[[f64; 3]],
    reynolds: f64,
    scales: &FlowScales,
) -> ResidualBatch {
    let cache = jet_forward(model, coords, scales);
    let n = coords.len();
    let mut residual = vec![0.0; n];
    let mut divergence = vec![0.0; n];
    for i in 0..n {
        let PointJets { u, v } = point_jets(&cache, i);
        let omega = v[DX] - u[DY];
        let div = u[DX] + v[DY];
        let omega_t = v[DXT] - u[DYT];
        let omega_x = v[DXX] - u[DXY];
        let omega_y = v[DXY] - u[DYY];
        let lap = v[DXXX] - u[DXXY] + v[DXYY] - u[DYYY];
        residual[i] =
            omega_t + omega_x * u[VAL] + omega_y * v[VAL] + omega * div - lap / reynolds;
        divergence[i] = div;
    }
    ResidualBatch {
        residual,
        divergence,
        cache,
    }
}

/// Accumulates parameter gradients for adjoints of the residual and the
/// divergence. Trainable encoding modes do not receive gradients through
/// this path (the jet seeding treats them as fixed frequencies).
pub fn residual_backward(
    model: &FieldModel,
    batch: &ResidualBatch,
    d_residual: &[f64],
    d_divergence: &[f64],
    reynolds: f64,
    grads: &mut ModelGrads,
) {
    let cache = &batch.cache;
    let n = d_residual.len();
    let mut dout = Mat::zeros(n * CHANNELS, 2);
    for i in 0..n {
        let PointJets { u, v } = point_jets(cache, i);
        let omega = v[DX] - u[DY];
        let div = u[DX] + v[DY];
        let omega_x = v[DXX] - u[DXY];
        let omega_y = v[DXY] - u[DYY];
        let gr = d_residual[i];
        let gd = d_divergence[i];
        let mut du = [0.0; CHANNELS];
        let mut dv = [0.0; CHANNELS];
        du[VAL] += gr * omega_x;
        dv[VAL] += gr * omega_y;
        // through omega * div
        dv[DX] += gr * div;
        du[DY] -= gr * div;
        let ddiv = gr * omega + gd;
        du[DX] += ddiv;
        dv[DY] += ddiv;
        // d(omega)/dt
        dv[DXT] += gr;
        du[DYT] -= gr;
        // omega_x u and omega_y v
        dv[DXX] += gr * u[VAL];
        du[DXY] -= gr * u[VAL];
        dv[DXY] += gr * v[VAL];
        du[DYY] -= gr * v[VAL];
        // viscous term
        let gl = -gr / reynolds;
        dv[DXXX] += gl;
        du[DXXY] -= gl;
        dv[DXYY] += gl;
        du[DYYY] -= gl;
        for ch in 0..CHANNELS {
            dout.set(i * CHANNELS + ch, 0, du[ch] * cache.inv_velocity);
            dout.set(i * CHANNELS + ch, 1, dv[ch] * cache.inv_velocity);
        }
    }
    jet_backward(model, cache, &dout, grads);
}

/// Backward pass through the stacked jet layers for an output-jet adjoint.
fn jet_backward(model: &FieldModel, cache: &JetCache, dout: &Mat, grads: &mut ModelGrads) {
    let nlayers = model.layers.len();
    let mut dpre = dout.clone();
    for li in (0..nlayers).rev() {
        let input = if li == 0 { &cache.feats } else { &cache.act[li - 1] };
        matmul_atb_acc(&dpre, input, &mut grads.layers[li].w);
        // bias receives only the value-channel adjoints
        let width = dpre.cols;
        let n = dpre.rows / CHANNELS;
        for i in 0..n {
            let row = dpre.row(i * CHANNELS + VAL);
            for o in 0..width {
                grads.layers[li].b[o] += row[o];
            }
        }
        if li == 0 {
            break;
        }
        let prev_width = model.layers[li - 1].w.rows;
        let mut dact = Mat::zeros(dpre.rows, prev_width);
        matmul_ab(&dpre, &model.layers[li].w, &mut dact);
        let prev_pre = &cache.pre[li - 1];
        let f = model.activation;
        let mut dprev = Mat::zeros(dpre.rows, prev_width);
        dprev
            .data
            .par_chunks_mut(CHANNELS * prev_width)
            .zip(dact.data.par_chunks(CHANNELS * prev_width))
            .zip(prev_pre.data.par_chunks(CHANNELS * prev_width))
            .with_min_len(8)
            .for_each(|((dpblock, dablock), pblock)| {
                let mut aj = [0.0; CHANNELS];
                let mut yb = [0.0; CHANNELS];
                let mut ab = [0.0; CHANNELS];
                for o in 0..prev_width {
                    for ch in 0..CHANNELS {
                        aj[ch] = pblock[ch * prev_width + o];
                        yb[ch] = dablock[ch * prev_width + o];
                        ab[ch] = 0.0;
                    }
                    jet_apply_adjoint(f, &aj, &yb, &mut ab);
                    for ch in 0..CHANNELS {
                        dpblock[ch * prev_width + o] = ab[ch];
                    }
                }
            });
        dpre = dprev;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ns_residual, EncodingSpec, NormMap};
    use crate::rng::Rng;

    fn tiny(kind: EncodingKind, act: Activation, seed: u64) -> FieldModel {
        let enc = match kind {
            EncodingKind::None => EncodingSpec::new(kind, seed),
            _ => EncodingSpec::with_dims(kind, &[4], &[1.2], seed),
        };
        FieldModel::init_sized(enc, act, NormMap::identity(), seed, 8, 2)
    }

    fn scales() -> FlowScales {
        FlowScales {
            length: 0.7,
            velocity: 1.9,
        }
    }

    #[test]
    fn jet_value_channel_matches_predict() {
        let m = tiny(EncodingKind::Rff, Activation::Tanh, 3);
        let s = scales();
        let coords = [[0.2, 0.3, 0.4], [0.8, 0.1, 0.9]];
        let cache = jet_forward(&m, &coords, &s);
        for (i, &c) in coords.iter().enumerate() {
            let p = m.predict(c).unwrap();
            let got = cache.out.get(i * CHANNELS + VAL, 0) * s.velocity;
            assert!((got - p[0]).abs() <= 1e-12 * (1.0 + p[0].abs()), "{got} vs {}", p[0]);
        }
    }

    #[test]
    fn residual_matches_autodiff_route() {
        let s = scales();
        for (kind, act, seed) in [
            (EncodingKind::Rff, Activation::Tanh, 5u64),
            (EncodingKind::Rff, Activation::LeakyRelu, 6),
            (EncodingKind::None, Activation::Tanh, 7),
            (EncodingKind::Msff, Activation::Tanh, 8),
        ] {
            let enc = match kind {
                EncodingKind::None => EncodingSpec::new(kind, seed),
                EncodingKind::Msff => {
                    EncodingSpec::with_dims(kind, &[3, 3], &[0.8, 1.6], seed)
                }
                _ => EncodingSpec::with_dims(kind, &[4], &[1.2], seed),
            };
            let m = FieldModel::init_sized(enc, act, NormMap::identity(), seed, 8, 2);
            let re = 230.0;
            let coords = [[0.21, 0.33, 0.47], [0.65, 0.12, 0.83]];
            let rb = residual_batch(&m, &coords, re, &s);
            for (i, &c) in coords.iter().enumerate() {
                let via_graph = ns_residual(&m, c, re, &s).unwrap();
                let diff = (rb.residual[i] - via_graph).abs();
                assert!(
                    diff <= 1e-9 * (1.0 + via_graph.abs()),
                    "{kind:?}/{act:?} point {i}: jet {} vs graph {via_graph}",
                    rb.residual[i]
                );
            }
        }
    }

    #[test]
    fn residual_gradient_matches_finite_differences() {
        // L = sum R^2 + sum div^2 over a couple of points
        let s = scales();
        let m = tiny(EncodingKind::Rff, Activation::Tanh, 11);
        let re = 175.0;
        let coords = [[0.31, 0.42, 0.53], [0.7, 0.2, 0.6]];
        let loss = |model: &FieldModel| {
            let rb = residual_batch(model, &coords, re, &s);
            rb.residual.iter().map(|r| r * r).sum::<f64>()
                + rb.divergence.iter().map(|d| d * d).sum::<f64>()
        };
        let rb = residual_batch(&m, &coords, re, &s);
        let dr: Vec<f64> = rb.residual.iter().map(|r| 2.0 * r).collect();
        let dd: Vec<f64> = rb.divergence.iter().map(|d| 2.0 * d).collect();
        let mut grads = ModelGrads::zeros_like(&m);
        residual_backward(&m, &rb, &dr, &dd, re, &mut grads);
        let h = 1e-6;
        let mut probe = m.clone();
        let mut checked = 0;
        for li in 0..m.layers.len() {
            for idx in (0..m.layers[li].w.data.len()).step_by(5) {
                let orig = m.layers[li].w.data[idx];
                probe.layers[li].w.data[idx] = orig + h;
                let up = loss(&probe);
                probe.layers[li].w.data[idx] = orig - h;
                let down = loss(&probe);
                probe.layers[li].w.data[idx] = orig;
                let fd = (up - down) / (2.0 * h);
                let exact = grads.layers[li].w.data[idx];
                assert!(
                    (exact - fd).abs() <= 2e-4 * (1.0 + fd.abs()),
                    "layer {li} w[{idx}]: {exact} vs {fd}"
                );
                checked += 1;
            }
            for o in 0..m.layers[li].b.len() {
                let orig = m.layers[li].b[o];
                probe.layers[li].b[o] = orig + h;
                let up = loss(&probe);
                probe.layers[li].b[o] = orig - h;
                let down = loss(&probe);
                probe.layers[li].b[o] = orig;
                let fd = (up - down) / (2.0 * h);
                let exact = grads.layers[li].b[o];
                assert!(
                    (exact - fd).abs() <= 2e-4 * (1.0 + fd.abs()),
                    "layer {li} b[{o}]: {exact} vs {fd}"
                );
                checked += 1;
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn leaky_body_has_zero_viscous_term_off_kinks() {
        // piecewise-linear body with no encoding: third spatial derivatives
        // vanish almost everywhere
        let m = tiny(EncodingKind::None, Activation::LeakyRelu, 4);
        let s = scales();
        let mut rng = Rng::new(2);
        let coords: Vec<[f64; 3]> = (0..20)
            .map(|_| [rng.uniform(), rng.uniform(), rng.uniform()])
            .collect();
        let cache = jet_forward(&m, &coords, &s);
        for i in 0..coords.len() {
            let PointJets { u, v } = point_jets(&cache, i);
            for ch in [DXX, DXY, DYY, DXXX, DXXY, DXYY, DYYY] {
                assert_eq!(u[ch], 0.0, "u channel {ch}");
                assert_eq!(v[ch], 0.0, "v channel {ch}");
            }
        }
    }
}

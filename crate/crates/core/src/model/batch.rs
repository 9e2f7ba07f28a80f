//! Batched forward and backward passes for training.
//!
//! Activations are laid out batch-major (one row per point), so every layer
//! is a single matrix product against the weight rows. All reductions run in
//! a fixed order; results are identical across runs regardless of the rayon
//! schedule.

use rayon::prelude::*;

use crate::linalg::{matmul_ab, matmul_abt, matmul_atb_acc, Mat};

use super::encoding::encode_into;
use super::{EncodingKind, FieldModel, Layer};

/// Gradient accumulators matching a model's parameters.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub layers: Vec<Layer>,
    /// Present when the encoding modes are trainable.
    pub modes: Option<Vec<Mat>>,
}

impl ModelGrads {
    pub fn zeros_like(model: &FieldModel) -> Self {
        let layers = model
            .layers
            .iter()
            .map(|l| Layer::zeros(l.w.rows, l.w.cols))
            .collect();
        let modes = model.encoding.trainable.then(|| {
            model
                .encoding
                .mode_matrices
                .iter()
                .map(|m| Mat::zeros(m.rows, m.cols))
                .collect()
        });
        ModelGrads { layers, modes }
    }

    pub fn clear(&mut self) {
        for l in &mut self.layers {
            l.w.fill(0.0);
            l.b.iter_mut().for_each(|b| *b = 0.0);
        }
        if let Some(ms) = &mut self.modes {
            ms.iter_mut().for_each(|m| m.fill(0.0));
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.w.scale(s);
            l.b.iter_mut().for_each(|b| *b *= s);
        }
        if let Some(ms) = &mut self.modes {
            ms.iter_mut().for_each(|m| m.scale(s));
        }
    }
}

/// Intermediate state of a batched forward pass, kept for the backward pass.
pub struct ForwardCache {
    /// Normalized coordinates (batch x 3).
    pub vn: Mat,
    /// Encoded features (batch x feature_len).
    pub feats: Mat,
    pub mlp: MlpCache,
}

impl ForwardCache {
    pub fn output(&self) -> &Mat {
        self.mlp.act.last().unwrap()
    }
}

/// Pre- and post-activations of a plain dense stack (no encoding).
pub struct MlpCache {
    pub pre: Vec<Mat>,
    pub act: Vec<Mat>,
}

/// Forward pass of a dense stack with a linear final layer.
pub fn mlp_forward(layers: &[Layer], activation: super::Activation, input: &Mat) -> MlpCache {
    let mut pre = Vec::with_capacity(layers.len());
    let mut act = Vec::with_capacity(layers.len());
    let last = layers.len() - 1;
    let mut cur = input;
    for (li, layer) in layers.iter().enumerate() {
        let mut p = Mat::zeros(cur.rows, layer.w.rows);
        matmul_abt(cur, &layer.w, &mut p);
        let width = layer.w.rows;
        p.data
            .par_chunks_mut(width)
            .with_min_len(64)
            .for_each(|row| {
                for (o, x) in row.iter_mut().enumerate() {
                    *x += layer.b[o];
                }
            });
        let a = if li == last {
            p.clone()
        } else {
            let mut a = p.clone();
            a.data.par_chunks_mut(width).with_min_len(64).for_each(|row| {
                row.iter_mut().for_each(|x| *x = activation.apply(*x));
            });
            a
        };
        pre.push(p);
        act.push(a);
        cur = act.last().unwrap();
    }
    MlpCache { pre, act }
}

/// Backward pass of [`mlp_forward`]; accumulates into `grads`. Returns the
/// adjoint of the stack input when `want_input` is set (skipping that final
/// matrix product otherwise, which is the common case).
pub fn mlp_backward(
    layers: &[Layer],
    activation: super::Activation,
    input: &Mat,
    cache: &MlpCache,
    dout: &Mat,
    grads: &mut [Layer],
    want_input: bool,
) -> Option<Mat> {
    let nlayers = layers.len();
    let mut dpre = dout.clone(); // final layer is linear
    for li in (0..nlayers).rev() {
        let layer_in = if li == 0 { input } else { &cache.act[li - 1] };
        matmul_atb_acc(&dpre, layer_in, &mut grads[li].w);
        let width = dpre.cols;
        for i in 0..dpre.rows {
            let row = dpre.row(i);
            for o in 0..width {
                grads[li].b[o] += row[o];
            }
        }
        if li == 0 {
            if !want_input {
                return None;
            }
            let mut dinput = Mat::zeros(dpre.rows, layers[0].w.cols);
            matmul_ab(&dpre, &layers[0].w, &mut dinput);
            return Some(dinput);
        }
        // adjoint of this layer's input, through the activation
        let prev_width = layers[li].w.cols;
        let mut dinput = Mat::zeros(dpre.rows, prev_width);
        matmul_ab(&dpre, &layers[li].w, &mut dinput);
        let prev_pre = &cache.pre[li - 1];
        dinput
            .data
            .par_chunks_mut(dinput.cols)
            .zip(prev_pre.data.par_chunks(prev_pre.cols))
            .with_min_len(64)
            .for_each(|(drow, prow)| {
                for (d, p) in drow.iter_mut().zip(prow) {
                    *d *= activation.derivative(*p);
                }
            });
        dpre = dinput;
    }
    unreachable!("empty layer stack")
}

/// Forward pass over a batch of physical coordinates.
pub fn forward_batch(model: &FieldModel, coords: &[[f64; 3]]) -> ForwardCache {
    let n = coords.len();
    let feat_len = model.encoding.feature_len();
    let mut vn = Mat::zeros(n, 3);
    let mut feats = Mat::zeros(n, feat_len);
    // encode rows independently
    feats
        .data
        .par_chunks_mut(feat_len)
        .zip(vn.data.par_chunks_mut(3))
        .enumerate()
        .with_min_len(64)
        .for_each(|(i, (frow, vrow))| {
            let nv = model.norm.normalize(coords[i]);
            vrow.copy_from_slice(&nv);
            let mut buf = Vec::with_capacity(feat_len);
            encode_into(&model.encoding, nv, &mut buf);
            frow.copy_from_slice(&buf);
        });
    let mlp = mlp_forward(&model.layers, model.activation, &feats);
    ForwardCache { vn, feats, mlp }
}

/// Backward pass: accumulates parameter gradients for the adjoint `dout`
/// (batch x 2) of the model output.
pub fn backward_batch(
    model: &FieldModel,
    cache: &ForwardCache,
    dout: &Mat,
    grads: &mut ModelGrads,
) {
    let want_feats = grads.modes.is_some();
    let dfeats = mlp_backward(
        &model.layers,
        model.activation,
        &cache.feats,
        &cache.mlp,
        dout,
        &mut grads.layers,
        want_feats,
    );
    if let (Some(dfeats), Some(modes)) = (dfeats, grads.modes.as_mut()) {
        accumulate_mode_grads(model, cache, &dfeats, modes);
    }
}

/// Gradient of the features with respect to the mode matrices, for trainable
/// Fourier features: d cos(2 pi theta) = -sin · 2 pi v, d sin = cos · 2 pi v.
fn accumulate_mode_grads(model: &FieldModel, cache: &ForwardCache, dfeats: &Mat, mode_grads: &mut [Mat]) {
    debug_assert!(model.encoding.kind != EncodingKind::None);
    let n = cache.feats.rows;
    let mut offset = 0;
    for (mi, m) in model.encoding.mode_matrices.iter().enumerate() {
        let d = m.rows;
        for j in 0..d {
            let mut acc = [0.0f64; 3];
            for i in 0..n {
                let c = cache.feats.get(i, offset + j);
                let s = cache.feats.get(i, offset + d + j);
                let gc = dfeats.get(i, offset + j);
                let gs = dfeats.get(i, offset + d + j);
                let coef = std::f64::consts::TAU * (-gc * s + gs * c);
                let vrow = cache.vn.row(i);
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

/// Samples a model over a rectilinear grid into a flow field. The first and
/// last y-rows carry the boundary label, matching the synthetic convention.
pub fn sample_field(
    model: &FieldModel,
    times: &[f64],
    xs: &[f64],
    ys: &[f64],
    period: f64,
) -> crate::field::FlowField {
    let coords = grid_coords(times, xs, ys);
    let cache = forward_batch(model, &coords);
    let out = cache.output();
    field_from_outputs(times, xs, ys, period, |i| (out.get(i, 0), out.get(i, 1)))
}

/// Samples a branched model (combiner output) over a grid.
pub fn sample_field_branched(
    bm: &crate::model::BranchedModel,
    times: &[f64],
    xs: &[f64],
    ys: &[f64],
    period: f64,
) -> crate::field::FlowField {
    let coords = grid_coords(times, xs, ys);
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
    let out = cc.act.last().unwrap().clone();
    field_from_outputs(times, xs, ys, period, |i| (out.get(i, 0), out.get(i, 1)))
}

fn grid_coords(times: &[f64], xs: &[f64], ys: &[f64]) -> Vec<[f64; 3]> {
    let mut coords = Vec::with_capacity(times.len() * xs.len() * ys.len());
    for &t in times {
        for &x in xs {
            for &y in ys {
                coords.push([t, x, y]);
            }
        }
    }
    coords
}

fn field_from_outputs(
    times: &[f64],
    xs: &[f64],
    ys: &[f64],
    period: f64,
    get: impl Fn(usize) -> (f64, f64),
) -> crate::field::FlowField {
    use crate::field::Region;
    let ny = ys.len();
    let n = times.len() * xs.len() * ny;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut region = vec![Region::Fluid; n];
    for i in 0..n {
        let (ui, vi) = get(i);
        u[i] = ui;
        v[i] = vi;
        let yi = i % ny;
        if yi == 0 || yi == ny - 1 {
            region[i] = Region::Boundary;
        }
    }
    crate::field::FlowField {
        times: times.to_vec(),
        xs: xs.to_vec(),
        ys: ys.to_vec(),
        u,
        v,
        region,
        occlusion: None,
        period,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, EncodingSpec, NormMap};
    use crate::rng::Rng;

    fn small_model(kind: EncodingKind, act: Activation, seed: u64) -> FieldModel {
        let enc = match kind {
            EncodingKind::None => EncodingSpec::new(kind, seed),
            _ => EncodingSpec::with_dims(kind, &[6], &[2.0], seed),
        };
        FieldModel::init_sized(enc, act, NormMap::identity(), seed, 10, 2)
    }

    #[test]
    fn forward_batch_matches_predict() {
        let m = small_model(EncodingKind::Rff, Activation::LeakyRelu, 3);
        let mut rng = Rng::new(1);
        let coords: Vec<[f64; 3]> = (0..17)
            .map(|_| [rng.uniform(), rng.uniform(), rng.uniform()])
            .collect();
        let cache = forward_batch(&m, &coords);
        for (i, &v) in coords.iter().enumerate() {
            let p = m.predict(v).unwrap();
            // the batched kernel reassociates the dot products, so agreement
            // is to rounding, not bitwise
            for comp in 0..2 {
                let got = cache.output().get(i, comp);
                assert!(
                    (got - p[comp]).abs() <= 1e-13 * (1.0 + p[comp].abs()),
                    "point {i} comp {comp}: {got} vs {}",
                    p[comp]
                );
            }
        }
    }

    /// Central-difference check of every gradient component on a tiny model,
    /// for the scalar loss L = sum of squared outputs.
    fn check_grads(kind: EncodingKind, act: Activation) {
        let m = small_model(kind, act, 9);
        let mut rng = Rng::new(4);
        let coords: Vec<[f64; 3]> = (0..7)
            .map(|_| [rng.uniform(), rng.uniform(), rng.uniform()])
            .collect();
        let loss = |model: &FieldModel| {
            let c = forward_batch(model, &coords);
            c.output().data.iter().map(|x| x * x).sum::<f64>()
        };
        let cache = forward_batch(&m, &coords);
        let mut dout = cache.output().clone();
        dout.scale(2.0);
        let mut grads = ModelGrads::zeros_like(&m);
        backward_batch(&m, &cache, &dout, &mut grads);
        let h = 1e-6;
        let mut checked = 0;
        let mut probe = m.clone();
        for li in 0..m.layers.len() {
            for idx in (0..m.layers[li].w.data.len()).step_by(7) {
                let orig = m.layers[li].w.data[idx];
                probe.layers[li].w.data[idx] = orig + h;
                let up = loss(&probe);
                probe.layers[li].w.data[idx] = orig - h;
                let down = loss(&probe);
                probe.layers[li].w.data[idx] = orig;
                let fd = (up - down) / (2.0 * h);
                let exact = grads.layers[li].w.data[idx];
                assert!(
                    (exact - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
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
                    (exact - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "layer {li} b[{o}]: {exact} vs {fd}"
                );
                checked += 1;
            }
        }
        if let Some(mode_grads) = &grads.modes {
            for idx in 0..m.encoding.mode_matrices[0].data.len() {
                let orig = m.encoding.mode_matrices[0].data[idx];
                probe.encoding.mode_matrices[0].data[idx] = orig + h;
                let up = loss(&probe);
                probe.encoding.mode_matrices[0].data[idx] = orig - h;
                let down = loss(&probe);
                probe.encoding.mode_matrices[0].data[idx] = orig;
                let fd = (up - down) / (2.0 * h);
                let exact = mode_grads[0].data[idx];
                assert!(
                    (exact - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "mode[{idx}]: {exact} vs {fd}"
                );
                checked += 1;
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn gradients_match_finite_differences_tanh() {
        check_grads(EncodingKind::Rff, Activation::Tanh);
    }

    #[test]
    fn gradients_match_finite_differences_leaky() {
        check_grads(EncodingKind::Rff, Activation::LeakyRelu);
    }

    #[test]
    fn mode_gradients_for_tff() {
        check_grads(EncodingKind::Tff, Activation::Tanh);
    }

    #[test]
    fn vanilla_encoding_grads() {
        check_grads(EncodingKind::None, Activation::Tanh);
    }
}

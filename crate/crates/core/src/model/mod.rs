//! Neural-field architectures mapping (t, x, y) to (u, v).
//!
//! A [`FieldModel`] is a coordinate encoding followed by a fully connected
//! body; the [`BranchedModel`] runs an MSFF field and a vanilla field in
//! parallel and blends them with a small combiner network. Derivative
//! queries (divergence, vorticity, Navier-Stokes residual) are answered by
//! building the model as an autodiff graph; the training loop uses the
//! batched passes in [`batch`] and [`jet`], which are validated against the
//! graph route in the test suite.

pub mod batch;
mod encoding;
pub mod jet;
mod queries;

pub use encoding::{encode, EncodingKind, EncodingSpec, COORD_DIM};
pub(crate) use encoding::encode_into;
pub use queries::{divergence, model_graph, ns_residual, vorticity, FlowScales};

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::linalg::Mat;
use crate::rng::Rng;

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    LeakyRelu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if x >= 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Affine map taking physical (t, x, y) to the unit cube before encoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormMap {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl NormMap {
    pub fn identity() -> Self {
        NormMap {
            lo: [0.0; 3],
            hi: [1.0; 3],
        }
    }

    /// Map covering the extents of a field's grid.
    pub fn for_field(f: &crate::field::FlowField) -> Self {
        NormMap {
            lo: [f.times[0], f.xs[0], f.ys[0]],
            hi: [
                *f.times.last().unwrap(),
                *f.xs.last().unwrap(),
                *f.ys.last().unwrap(),
            ],
        }
    }

    #[inline]
    pub fn normalize(&self, v: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for k in 0..3 {
            out[k] = (v[k] - self.lo[k]) / (self.hi[k] - self.lo[k]);
        }
        out
    }

    /// d(normalized_k)/d(physical_k).
    #[inline]
    pub fn scale(&self, k: usize) -> f64 {
        1.0 / (self.hi[k] - self.lo[k])
    }
}

/// Dense layer, weights stored (out x in) row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Mat,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Layer {
            w: Mat::zeros(out, inp),
            b: vec![0.0; out],
        }
    }

    /// Uniform fan-in initialization, U(-1/sqrt(in), 1/sqrt(in)): the
    /// standard dense-layer default. Keeps the initial field amplitude well
    /// below the data scale so the slow learning rate can reshape it.
    fn kaiming(out: usize, inp: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (inp as f64).sqrt();
        let mut l = Layer::zeros(out, inp);
        for x in l.w.data.iter_mut() {
            *x = rng.uniform_in(-bound, bound);
        }
        l
    }

    pub fn param_count(&self) -> usize {
        self.w.data.len() + self.b.len()
    }
}

/// Coordinate-encoded multilayer perceptron (t, x, y) -> (u, v).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldModel {
    pub encoding: EncodingSpec,
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub norm: NormMap,
}

impl FieldModel {
    /// Paper-default body: 3 hidden layers of 256 units, output width 2.
    pub fn init(kind: EncodingKind, activation: Activation, norm: NormMap, seed: u64) -> Self {
        Self::init_sized(EncodingSpec::new(kind, seed), activation, norm, seed, 256, 3)
    }

    /// Body with explicit hidden width and depth; weight draws follow the
    /// mode draws on a forked stream so the encoding seed stays decoupled.
    pub fn init_sized(
        encoding: EncodingSpec,
        activation: Activation,
        norm: NormMap,
        seed: u64,
        hidden: usize,
        depth: usize,
    ) -> Self {
        let mut rng = Rng::new(seed).fork(0x6d6f64656c);
        let mut dims = Vec::with_capacity(depth + 1);
        dims.push(encoding.feature_len());
        for _ in 0..depth {
            dims.push(hidden);
        }
        dims.push(2);
        let layers = dims
            .windows(2)
            .map(|w| Layer::kaiming(w[1], w[0], &mut rng))
            .collect();
        FieldModel {
            encoding,
            layers,
            activation,
            norm,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.encoding.validate()?;
        let mut width = self.encoding.feature_len();
        for l in &self.layers {
            if l.w.cols != width || l.b.len() != l.w.rows {
                return Err(ModelError::Encoding(format!(
                    "layer shape {}x{} does not follow width {width}",
                    l.w.rows, l.w.cols
                )));
            }
            if !l.w.is_finite() || !l.b.iter().all(|x| x.is_finite()) {
                return Err(ModelError::CorruptWeights);
            }
            width = l.w.rows;
        }
        if width != 2 {
            return Err(ModelError::Encoding(format!("output width {width} != 2")));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let body: usize = self.layers.iter().map(Layer::param_count).sum();
        let modes = if self.encoding.trainable {
            self.encoding
                .mode_matrices
                .iter()
                .map(|m| m.data.len())
                .sum()
        } else {
            0
        };
        body + modes
    }

    /// Forward pass at a physical coordinate.
    pub fn predict(&self, v: [f64; 3]) -> Result<[f64; 2], ModelError> {
        let vn = self.norm.normalize(v);
        let mut cur = encode(&self.encoding, vn);
        let last = self.layers.len() - 1;
        let mut next = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            next.clear();
            next.resize(layer.w.rows, 0.0);
            for (o, slot) in next.iter_mut().enumerate() {
                let row = layer.w.row(o);
                let mut acc = layer.b[o];
                for (wi, xi) in row.iter().zip(&cur) {
                    acc += wi * xi;
                }
                *slot = if li == last {
                    acc
                } else {
                    self.activation.apply(acc)
                };
            }
            std::mem::swap(&mut cur, &mut next);
        }
        let out = [cur[0], cur[1]];
        if !out[0].is_finite() || !out[1].is_finite() {
            return Err(ModelError::CorruptWeights);
        }
        Ok(out)
    }
}

/// Blending network over (coords, msff prediction, vanilla prediction).
#[derive(Debug, Clone, PartialEq)]
pub struct Combiner {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

impl Combiner {
    /// Two hidden layers of 64 units over the 7 combiner inputs.
    pub fn init(activation: Activation, seed: u64) -> Self {
        let mut rng = Rng::new(seed).fork(0x636f6d62);
        let dims = [7usize, 64, 64, 2];
        let layers = dims
            .windows(2)
            .map(|w| Layer::kaiming(w[1], w[0], &mut rng))
            .collect();
        Combiner { layers, activation }
    }

    pub fn forward(&self, input: [f64; 7]) -> [f64; 2] {
        let mut cur = input.to_vec();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.w.rows];
            for (o, slot) in next.iter_mut().enumerate() {
                let row = layer.w.row(o);
                let mut acc = layer.b[o];
                for (wi, xi) in row.iter().zip(&cur) {
                    acc += wi * xi;
                }
                *slot = if li == last {
                    acc
                } else {
                    self.activation.apply(acc)
                };
            }
            cur = next;
        }
        [cur[0], cur[1]]
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }
}

/// Parallel MSFF and vanilla fields blended by the combiner. The branches
/// are trained in stage one and frozen while the combiner trains.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchedModel {
    pub msff: FieldModel,
    pub vanilla: FieldModel,
    pub combiner: Combiner,
}

impl BranchedModel {
    pub fn init(activation: Activation, norm: NormMap, seed: u64) -> Self {
        BranchedModel {
            msff: FieldModel::init(EncodingKind::Msff, activation, norm, seed),
            vanilla: FieldModel::init(EncodingKind::None, activation, norm, seed.wrapping_add(1)),
            combiner: Combiner::init(activation, seed.wrapping_add(2)),
        }
    }

    /// Combiner output given the coordinate and both branch predictions.
    /// Coordinates enter the combiner in normalized form so all seven inputs
    /// share the same scale.
    pub fn predict(&self, v: [f64; 3]) -> Result<[f64; 2], ModelError> {
        let m = self.msff.predict(v)?;
        let w = self.vanilla.predict(v)?;
        let vn = self.msff.norm.normalize(v);
        Ok(self
            .combiner
            .forward([vn[0], vn[1], vn[2], m[0], m[1], w[0], w[1]]))
    }
}

/// Convenience alias used by the training loop and CLI.
pub fn predict_branched(bm: &BranchedModel, v: [f64; 3]) -> Result<[f64; 2], ModelError> {
    bm.predict(v)
}

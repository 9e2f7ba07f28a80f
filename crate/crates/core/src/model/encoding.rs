//! Coordinate encodings: none (vanilla), random Fourier features, trainable
//! Fourier features, and multi-scale Fourier features.
//!
//! Feature layout is fixed for file-format stability: matrices in ascending
//! sigma order, and per matrix a cos block followed by a sin block, i.e.
//! [cos(2 pi B_1 v), sin(2 pi B_1 v), cos(2 pi B_2 v), ...].

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::linalg::Mat;
use crate::rng::Rng;

pub const COORD_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingKind {
    None,
    Rff,
    Tff,
    Msff,
}

/// Frequency-mode specification for a coordinate encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingSpec {
    pub kind: EncodingKind,
    /// One (d_i x 3) matrix per scale, ascending sigma.
    pub mode_matrices: Vec<Mat>,
    pub sigmas: Vec<f64>,
    pub trainable: bool,
    pub seed: u64,
}

impl EncodingSpec {
    /// Paper-default spec for the given kind: d = 256 at sigma = 10 for
    /// RFF/TFF, three 85-row matrices at sigma 10/20/40 for MSFF.
    pub fn new(kind: EncodingKind, seed: u64) -> Self {
        match kind {
            EncodingKind::None => EncodingSpec {
                kind,
                mode_matrices: Vec::new(),
                sigmas: Vec::new(),
                trainable: false,
                seed,
            },
            EncodingKind::Rff | EncodingKind::Tff => {
                Self::with_dims(kind, &[256], &[10.0], seed)
            }
            EncodingKind::Msff => Self::with_dims(kind, &[85, 85, 85], &[10.0, 20.0, 40.0], seed),
        }
    }

    /// Spec with explicit per-scale dimensions and sigmas, modes drawn
    /// N(0, sigma_i) from the seed in a fixed order.
    pub fn with_dims(kind: EncodingKind, dims: &[usize], sigmas: &[f64], seed: u64) -> Self {
        assert_eq!(dims.len(), sigmas.len());
        assert!(matches!(kind, EncodingKind::Rff | EncodingKind::Tff | EncodingKind::Msff));
        let mut rng = Rng::new(seed);
        let mut mats = Vec::with_capacity(dims.len());
        for (&d, &sigma) in dims.iter().zip(sigmas) {
            let mut m = Mat::zeros(d, COORD_DIM);
            for x in m.data.iter_mut() {
                *x = rng.normal_scaled(0.0, sigma);
            }
            mats.push(m);
        }
        EncodingSpec {
            kind,
            mode_matrices: mats,
            sigmas: sigmas.to_vec(),
            trainable: kind == EncodingKind::Tff,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let structural = match self.kind {
            EncodingKind::None => self.mode_matrices.is_empty() && !self.trainable,
            EncodingKind::Rff => self.mode_matrices.len() == 1 && !self.trainable,
            EncodingKind::Tff => self.mode_matrices.len() == 1,
            EncodingKind::Msff => !self.mode_matrices.is_empty() && !self.trainable,
        };
        if !structural {
            return Err(ModelError::Encoding(format!(
                "structure invalid for kind {:?}: {} matrices, trainable={}",
                self.kind,
                self.mode_matrices.len(),
                self.trainable
            )));
        }
        if self.mode_matrices.len() != self.sigmas.len() {
            return Err(ModelError::Encoding("sigma count != matrix count".into()));
        }
        if !self.sigmas.windows(2).all(|w| w[0] <= w[1]) {
            return Err(ModelError::Encoding("sigmas must ascend".into()));
        }
        for m in &self.mode_matrices {
            if m.cols != COORD_DIM {
                return Err(ModelError::Encoding(format!(
                    "mode matrix must have {COORD_DIM} columns, got {}",
                    m.cols
                )));
            }
            if !m.is_finite() {
                return Err(ModelError::Encoding("non-finite mode entries".into()));
            }
        }
        Ok(())
    }

    /// Length of the feature vector this spec produces.
    pub fn feature_len(&self) -> usize {
        if self.kind == EncodingKind::None {
            COORD_DIM
        } else {
            2 * self.mode_matrices.iter().map(|m| m.rows).sum::<usize>()
        }
    }
}

/// Feature vector for a normalized coordinate triple.
///
/// `kind = none` passes the coordinates through unchanged; otherwise the
/// output is the cos/sin embedding over every mode matrix.
pub fn encode(spec: &EncodingSpec, v: [f64; 3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(spec.feature_len());
    encode_into(spec, v, &mut out);
    out
}

pub(crate) fn encode_into(spec: &EncodingSpec, v: [f64; 3], out: &mut Vec<f64>) {
    out.clear();
    if spec.kind == EncodingKind::None {
        out.extend_from_slice(&v);
        return;
    }
    for m in &spec.mode_matrices {
        let base = out.len();
        let d = m.rows;
        out.resize(base + 2 * d, 0.0);
        for j in 0..d {
            let row = m.row(j);
            let theta =
                std::f64::consts::TAU * (row[0] * v[0] + row[1] * v[1] + row[2] * v[2]);
            let (s, c) = theta.sin_cos();
            out[base + j] = c;
            out[base + d + j] = s;
        }
    }
}

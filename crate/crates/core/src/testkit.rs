//! Hand-constructed models with exactly known fields, shared across the
//! test suites. Linear fields are represented exactly through paired
//! leaky-rectifier units: leaky(c) - leaky(-c) = (1 + slope) c for every c.

use crate::model::{
    Activation, EncodingKind, EncodingSpec, FieldModel, NormMap, LEAKY_SLOPE,
};

/// Model emitting (u, v) = c everywhere.
pub fn constant_model(c: [f64; 2]) -> FieldModel {
    let mut m = FieldModel::init_sized(
        EncodingSpec::new(EncodingKind::None, 0),
        Activation::LeakyRelu,
        NormMap::identity(),
        0,
        4,
        3,
    );
    for l in &mut m.layers {
        l.w.fill(0.0);
        l.b.iter_mut().for_each(|b| *b = 0.0);
    }
    let out = m.layers.last_mut().unwrap();
    out.b[0] = c[0];
    out.b[1] = c[1];
    m
}

/// Model computing the exact affine field
/// u = a[0][0] + a[0][1] t + a[0][2] x + a[0][3] y (and likewise v = a[1]).
/// Inputs are physical coordinates (identity normalization).
pub fn linear_model(a: [[f64; 4]; 2]) -> FieldModel {
    let s = LEAKY_SLOPE;
    let gain = 1.0 / (1.0 + s);
    let mut m = FieldModel::init_sized(
        EncodingSpec::new(EncodingKind::None, 0),
        Activation::LeakyRelu,
        NormMap::identity(),
        0,
        6,
        3,
    );
    for l in &mut m.layers {
        l.w.fill(0.0);
        l.b.iter_mut().for_each(|b| *b = 0.0);
    }
    // layer 0: unit pairs (+coord, -coord) for each of t, x, y
    for k in 0..3 {
        m.layers[0].w.set(2 * k, k, 1.0);
        m.layers[0].w.set(2 * k + 1, k, -1.0);
    }
    // layers 1..=2: rebuild each pair from the previous one
    for li in 1..3 {
        for k in 0..3 {
            m.layers[li].w.set(2 * k, 2 * k, gain);
            m.layers[li].w.set(2 * k, 2 * k + 1, -gain);
            m.layers[li].w.set(2 * k + 1, 2 * k, -gain);
            m.layers[li].w.set(2 * k + 1, 2 * k + 1, gain);
        }
    }
    // output layer: affine combination of the reconstructed coordinates
    for (comp, coeff) in a.iter().enumerate() {
        m.layers[3].b[comp] = coeff[0];
        for k in 0..3 {
            m.layers[3].w.set(comp, 2 * k, coeff[k + 1] * gain);
            m.layers[3].w.set(comp, 2 * k + 1, -coeff[k + 1] * gain);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_model_is_exact_everywhere() {
        let a = [[0.3, -1.5, 2.0, 0.7], [-0.2, 0.4, -0.9, 1.1]];
        let m = linear_model(a);
        for v in [
            [0.0, 0.0, 0.0],
            [1.0, -2.0, 3.0],
            [-0.5, 0.25, -0.125],
            [10.0, -7.0, 0.01],
        ] {
            let out = m.predict(v).unwrap();
            for comp in 0..2 {
                let expect = a[comp][0] + a[comp][1] * v[0] + a[comp][2] * v[1] + a[comp][3] * v[2];
                assert!(
                    (out[comp] - expect).abs() <= 1e-12 * (1.0 + expect.abs()),
                    "component {comp} at {v:?}: {} vs {expect}",
                    out[comp]
                );
            }
        }
    }

    #[test]
    fn constant_model_is_constant() {
        let m = constant_model([0.7, -0.3]);
        assert_eq!(m.predict([5.0, -3.0, 2.0]).unwrap(), [0.7, -0.3]);
        assert_eq!(m.predict([0.0, 0.0, 0.0]).unwrap(), [0.7, -0.3]);
    }
}

//! Derivative queries on a field model, answered through the autodiff graph.
//!
//! Each query rebuilds the model as an expression DAG, so these routes suit
//! verification-scale models and spot checks; the training loop evaluates
//! the same quantities through the batched jet engine, and the two routes
//! are held to agreement in tests.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, GraphBuilder, NodeId};
use crate::error::ModelError;

use super::{Activation, EncodingKind, FieldModel, LEAKY_SLOPE};

/// Nondimensionalization scales for the vorticity-transport residual.
///
/// Lengths scale by the tube radius and velocities by U = Re nu / R, so the
/// scaled field of any true solution satisfies the residual with the given
/// Reynolds number exactly; times scale convectively by R / U.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowScales {
    pub length: f64,
    pub velocity: f64,
}

impl FlowScales {
    pub fn from_reynolds(length: f64, nu: f64, reynolds: f64) -> Self {
        FlowScales {
            length,
            velocity: reynolds * nu / length,
        }
    }

    pub fn time(&self) -> f64 {
        self.length / self.velocity
    }

    pub fn nondim_point(&self, v: [f64; 3]) -> [f64; 3] {
        [v[0] / self.time(), v[1] / self.length, v[2] / self.length]
    }
}

/// Builds the model's scalar computation as an autodiff graph.
///
/// Roots are (t, x, y). Without scales, roots are physical coordinates and
/// the output is the raw component in m/s. With scales, roots are
/// nondimensional coordinates and the output is the scaled component.
pub fn model_graph(
    model: &FieldModel,
    component: usize,
    scales: Option<&FlowScales>,
) -> Result<Graph, ModelError> {
    assert!(component < 2);
    model.validate()?;
    let mut b = GraphBuilder::new();
    let roots = [b.var(0), b.var(1), b.var(2)];
    // physical coordinates
    let phys: Vec<NodeId> = match scales {
        None => roots.to_vec(),
        Some(s) => {
            let time = b.constant(s.time());
            let len = b.constant(s.length);
            vec![
                b.mul(roots[0], time),
                b.mul(roots[1], len),
                b.mul(roots[2], len),
            ]
        }
    };
    // normalization to the unit cube
    let mut vn = [roots[0]; 3];
    for k in 0..3 {
        let lo = b.constant(model.norm.lo[k]);
        let scale = b.constant(model.norm.scale(k));
        let shifted = b.sub(phys[k], lo);
        vn[k] = b.mul(shifted, scale);
    }
    // encoding
    let mut feats: Vec<NodeId> = Vec::with_capacity(model.encoding.feature_len());
    if model.encoding.kind == EncodingKind::None {
        feats.extend_from_slice(&vn);
    } else {
        for m in &model.encoding.mode_matrices {
            let mut sines = Vec::with_capacity(m.rows);
            for j in 0..m.rows {
                let row = m.row(j);
                let mut theta = b.constant(0.0);
                for k in 0..3 {
                    let w = b.constant(std::f64::consts::TAU * row[k]);
                    let term = b.mul(w, vn[k]);
                    theta = b.add(theta, term);
                }
                feats.push(b.cos(theta));
                sines.push(b.sin(theta));
            }
            feats.append(&mut sines);
        }
    }
    // body
    let mut cur = feats;
    let last = model.layers.len() - 1;
    for (li, layer) in model.layers.iter().enumerate() {
        let mut next = Vec::with_capacity(layer.w.rows);
        for o in 0..layer.w.rows {
            let row = layer.w.row(o);
            let mut acc = b.constant(layer.b[o]);
            for (wi, &xi) in row.iter().zip(&cur) {
                let w = b.constant(*wi);
                let term = b.mul(w, xi);
                acc = b.add(acc, term);
            }
            if li != last {
                acc = match model.activation {
                    Activation::LeakyRelu => b.leaky_relu(acc, LEAKY_SLOPE),
                    Activation::Tanh => b.tanh(acc),
                };
            }
            next.push(acc);
        }
        cur = next;
    }
    let mut out = cur[component];
    if let Some(s) = scales {
        let inv_u = b.constant(1.0 / s.velocity);
        out = b.mul(out, inv_u);
    }
    Ok(b.finish(out))
}

/// du/dx + dv/dy at a physical coordinate (1/s).
pub fn divergence(model: &FieldModel, v: [f64; 3]) -> Result<f64, ModelError> {
    let gu = model_graph(model, 0, None)?;
    let gv = model_graph(model, 1, None)?;
    let du = gu.grad(&v).map_err(graph_err)?;
    let dv = gv.grad(&v).map_err(graph_err)?;
    Ok(du.partial(1) + dv.partial(2))
}

/// omega_z = dv/dx - du/dy at a physical coordinate (1/s).
pub fn vorticity(model: &FieldModel, v: [f64; 3]) -> Result<f64, ModelError> {
    let gu = model_graph(model, 0, None)?;
    let gv = model_graph(model, 1, None)?;
    let du = gu.grad(&v).map_err(graph_err)?;
    let dv = gv.grad(&v).map_err(graph_err)?;
    Ok(dv.partial(1) - du.partial(2))
}

/// Vorticity-transport residual at a physical coordinate, evaluated in
/// nondimensional variables:
/// R = d(omega)/dt + d(omega u)/dx + d(omega v)/dy - (1/Re) lap(omega).
pub fn ns_residual(
    model: &FieldModel,
    v: [f64; 3],
    reynolds: f64,
    scales: &FlowScales,
) -> Result<f64, ModelError> {
    assert!(reynolds > 0.0, "Reynolds number must be positive");
    let p = scales.nondim_point(v);
    let gu = model_graph(model, 0, Some(scales))?;
    let gv = model_graph(model, 1, Some(scales))?;
    // omega = dv/dx - du/dy as a graph, so it can be differentiated again
    let gvx = gv.derive(1).map_err(graph_err)?;
    let guy = gu.derive(2).map_err(graph_err)?;
    let mut b = GraphBuilder::new();
    let o1 = gvx.import_into(&mut b);
    let o2 = guy.import_into(&mut b);
    let osub = b.sub(o1, o2);
    let gw = b.finish(osub);

    let u = gu.evaluate(&p).map_err(graph_err)?;
    let vv = gv.evaluate(&p).map_err(graph_err)?;
    let du = gu.grad(&p).map_err(graph_err)?;
    let dv = gv.grad(&p).map_err(graph_err)?;
    let w = gw.evaluate(&p).map_err(graph_err)?;
    let dw = gw.grad(&p).map_err(graph_err)?;
    // second derivatives of omega for the viscous term
    let gwx = gw.derive(1).map_err(graph_err)?;
    let gwy = gw.derive(2).map_err(graph_err)?;
    let wxx = gwx.grad(&p).map_err(graph_err)?.partial(1);
    let wyy = gwy.grad(&p).map_err(graph_err)?.partial(2);

    let advect = dw.partial(1) * u + w * du.partial(1) + dw.partial(2) * vv + w * dv.partial(2);
    Ok(dw.partial(0) + advect - (wxx + wyy) / reynolds)
}

fn graph_err(e: crate::error::AutodiffError) -> ModelError {
    ModelError::Encoding(format!("autodiff query failed: {e}"))
}

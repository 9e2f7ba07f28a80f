//! The `pulsefield-flowfield v1` exchange format.
//!
//! Layout: a magic line, one JSON metadata line (grid dims, spacings, units,
//! period, parameter hash, and the generation parameters when known), a CSV
//! header, then one row per sample in (t, x, y) order with t-major nesting.
//! Floats are written with 17 significant digits and round-trip exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::FormatError;
use crate::field::{FlowField, Region};
use crate::synthdata::WomersleyParams;

use super::{fmt_f64, manifest::sha256_bytes};

const MAGIC: &str = "pulsefield-flowfield v1";
const COLUMNS: &str = "t,x,y,u,v,region,lambda";

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    nt: usize,
    nx: usize,
    ny: usize,
    dt: f64,
    dx: f64,
    dy: f64,
    units: Units,
    period: f64,
    params_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    womersley: Option<WomersleyParams>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Units {
    t: String,
    x: String,
    y: String,
    u: String,
    v: String,
}

impl Units {
    fn si() -> Self {
        Units {
            t: "s".into(),
            x: "m".into(),
            y: "m".into(),
            u: "m/s".into(),
            v: "m/s".into(),
        }
    }
}

fn params_hash(params: Option<&WomersleyParams>) -> String {
    match params {
        None => "none".into(),
        Some(p) => sha256_bytes(serde_json::to_string(p).expect("params serialize").as_bytes()),
    }
}

pub fn write_flowfield(
    path: &Path,
    field: &FlowField,
    params: Option<&WomersleyParams>,
) -> Result<(), FormatError> {
    field
        .validate()
        .map_err(|e| FormatError::malformed("flowfield", e.to_string()))?;
    let meta = Metadata {
        nt: field.nt(),
        nx: field.nx(),
        ny: field.ny(),
        dt: field.dt(),
        dx: field.dx(),
        dy: field.dy(),
        units: Units::si(),
        period: field.period,
        params_hash: params_hash(params),
        womersley: params.cloned(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "{}", serde_json::to_string(&meta).expect("meta serialize"))?;
    writeln!(w, "{COLUMNS}")?;
    for ti in 0..field.nt() {
        for xi in 0..field.nx() {
            for yi in 0..field.ny() {
                let i = field.idx(ti, xi, yi);
                let region = match field.region[i] {
                    Region::Fluid => "fluid",
                    Region::Boundary => "boundary",
                };
                let lambda = match &field.occlusion {
                    Some(l) => fmt_f64(l[i]),
                    None => String::new(),
                };
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    fmt_f64(field.times[ti]),
                    fmt_f64(field.xs[xi]),
                    fmt_f64(field.ys[yi]),
                    fmt_f64(field.u[i]),
                    fmt_f64(field.v[i]),
                    region,
                    lambda
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_flowfield(path: &Path) -> Result<(FlowField, Option<WomersleyParams>), FormatError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(FormatError::Version {
            format: "flowfield",
            found: line.trim_end().to_string(),
        });
    }
    line.clear();
    r.read_line(&mut line)?;
    let meta: Metadata = serde_json::from_str(line.trim_end())
        .map_err(|e| FormatError::malformed("flowfield", format!("metadata: {e}")))?;
    line.clear();
    r.read_line(&mut line)?;
    if line.trim_end() != COLUMNS {
        return Err(FormatError::malformed(
            "flowfield",
            format!("unexpected column header '{}'", line.trim_end()),
        ));
    }
    let n = meta.nt * meta.nx * meta.ny;
    let mut times = Vec::with_capacity(meta.nt);
    let mut xs = Vec::with_capacity(meta.nx);
    let mut ys = Vec::with_capacity(meta.ny);
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut region = Vec::with_capacity(n);
    let mut lambda: Vec<f64> = Vec::new();
    let mut has_lambda = false;
    for (row, text) in r.lines().enumerate() {
        let text = text?;
        if text.is_empty() {
            continue;
        }
        let mut cols = text.split(',');
        let mut next_f64 = |name: &str| -> Result<f64, FormatError> {
            let c = cols.next().ok_or_else(|| {
                FormatError::malformed("flowfield", format!("row {row}: missing {name}"))
            })?;
            c.parse::<f64>().map_err(|e| {
                FormatError::malformed("flowfield", format!("row {row}: {name}: {e}"))
            })
        };
        let t = next_f64("t")?;
        let x = next_f64("x")?;
        let y = next_f64("y")?;
        u.push(next_f64("u")?);
        v.push(next_f64("v")?);
        let rest: Vec<&str> = cols.collect();
        if rest.len() != 2 {
            return Err(FormatError::malformed(
                "flowfield",
                format!("row {row}: expected 7 columns"),
            ));
        }
        region.push(match rest[0] {
            "fluid" => Region::Fluid,
            "boundary" => Region::Boundary,
            other => {
                return Err(FormatError::malformed(
                    "flowfield",
                    format!("row {row}: unknown region '{other}'"),
                ))
            }
        });
        if rest[1].is_empty() {
            lambda.push(1.0);
        } else {
            has_lambda = true;
            lambda.push(rest[1].parse::<f64>().map_err(|e| {
                FormatError::malformed("flowfield", format!("row {row}: lambda: {e}"))
            })?);
        }
        // grid coordinates come from the first occurrences in file order
        let flat = region.len() - 1;
        let (ti_idx, xi_idx, yi_idx) = (
            flat / (meta.nx * meta.ny),
            (flat / meta.ny) % meta.nx,
            flat % meta.ny,
        );
        if xi_idx == 0 && yi_idx == 0 {
            times.push(t);
        }
        if ti_idx == 0 && yi_idx == 0 {
            xs.push(x);
        }
        if ti_idx == 0 && xi_idx == 0 {
            ys.push(y);
        }
    }
    if u.len() != n {
        return Err(FormatError::malformed(
            "flowfield",
            format!("expected {n} rows, found {}", u.len()),
        ));
    }
    let field = FlowField {
        times,
        xs,
        ys,
        u,
        v,
        region,
        occlusion: has_lambda.then_some(lambda),
        period: meta.period,
    };
    field
        .validate()
        .map_err(|e| FormatError::malformed("flowfield", e.to_string()))?;
    Ok((field, meta.womersley))
}

//! CSV outputs: the per-epoch training log and (t, value) series.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::FormatError;
use crate::training::TrainLog;

use super::fmt_f64;

pub fn write_train_log(path: &Path, log: &TrainLog) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "epoch,loss_total,loss_data,loss_cycle,loss_phys,loss_tv,loss_occ,wall_time_s"
    )?;
    for e in &log.epochs {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{:.3}",
            e.epoch,
            fmt_f64(e.loss_total),
            fmt_f64(e.loss_data),
            fmt_f64(e.loss_cycle),
            fmt_f64(e.loss_phys),
            fmt_f64(e.loss_tv),
            fmt_f64(e.loss_occ),
            e.wall_time_s
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_series(path: &Path, value_name: &str, series: &[(f64, f64)]) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,{value_name}")?;
    for (t, v) in series {
        writeln!(w, "{},{}", fmt_f64(*t), fmt_f64(*v))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_series(path: &Path) -> Result<Vec<(f64, f64)>, FormatError> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 || line.is_empty() {
            continue; // header
        }
        let mut cols = line.split(',');
        let t: f64 = cols
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| FormatError::malformed("series", format!("row {i}: bad t")))?;
        let v: f64 = cols
            .next()
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| FormatError::malformed("series", format!("row {i}: bad value")))?;
        out.push((t, v));
    }
    Ok(out)
}

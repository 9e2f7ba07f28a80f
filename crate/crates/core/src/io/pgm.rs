//! Binary PGM (P5) particle images, 16-bit big-endian samples.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::FormatError;
use crate::piv::ParticleImage;

const MAXVAL: u32 = 65535;

pub fn write_pgm(path: &Path, img: &ParticleImage) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    // scale and timestamp travel in a comment so the pair survives a round trip
    write!(
        w,
        "P5\n# scale_m_per_px {} timestamp_s {}\n{} {}\n{MAXVAL}\n",
        super::fmt_f64(img.scale),
        super::fmt_f64(img.timestamp),
        img.width,
        img.height
    )?;
    for &p in &img.pixels {
        let q = (p.clamp(0.0, 1.0) * MAXVAL as f64).round() as u16;
        w.write_all(&q.to_be_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<ParticleImage, FormatError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let header_err = |d: &str| FormatError::malformed("pgm", d.to_string());
    // header: magic, optional comment lines, dims, maxval, single whitespace
    let mut pos = 0usize;
    let mut read_line = |bytes: &[u8]| -> Result<String, FormatError> {
        let start = pos;
        while pos < bytes.len() && bytes[pos] != b'\n' {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(header_err("truncated header"));
        }
        pos += 1;
        Ok(String::from_utf8_lossy(&bytes[start..pos - 1]).into_owned())
    };
    if read_line(&bytes)? != "P5" {
        return Err(FormatError::Version {
            format: "pgm",
            found: "not P5".into(),
        });
    }
    let mut scale = 1.0;
    let mut timestamp = 0.0;
    let dims_line = loop {
        let line = read_line(&bytes)?;
        if let Some(rest) = line.strip_prefix('#') {
            let toks: Vec<&str> = rest.split_whitespace().collect();
            if toks.len() == 4 && toks[0] == "scale_m_per_px" && toks[2] == "timestamp_s" {
                scale = toks[1].parse().map_err(|_| header_err("bad scale"))?;
                timestamp = toks[3].parse().map_err(|_| header_err("bad timestamp"))?;
            }
            continue;
        }
        break line;
    };
    let dims: Vec<usize> = dims_line
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| header_err("bad dimensions"))?;
    if dims.len() != 2 {
        return Err(header_err("expected width and height"));
    }
    let (width, height) = (dims[0], dims[1]);
    let maxval_line = read_line(&bytes)?;
    if maxval_line.trim() != MAXVAL.to_string() {
        return Err(FormatError::Version {
            format: "pgm",
            found: format!("maxval {}", maxval_line.trim()),
        });
    }
    let expected = width * height * 2;
    if bytes.len() - pos != expected {
        return Err(header_err("sample payload size mismatch"));
    }
    let pixels = bytes[pos..]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / MAXVAL as f64)
        .collect();
    Ok(ParticleImage {
        pixels,
        width,
        height,
        scale,
        timestamp,
    })
}

//! Model checkpoints: a one-line JSON header followed by the little-endian
//! f64 weight payload.
//!
//! Payload order per field model: for each layer, the weight matrix
//! (out x in, row-major) then the bias vector; trainable mode matrices
//! follow the layers (ascending sigma, row-major). A branched checkpoint
//! stores the MSFF branch, the vanilla branch, then the combiner layers.
//! Non-trainable mode matrices are regenerated from the recorded seed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::FormatError;
use crate::model::{
    Activation, BranchedModel, Combiner, EncodingKind, EncodingSpec, FieldModel, Layer, NormMap,
};

const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct EncodingHeader {
    kind: EncodingKind,
    dims: Vec<usize>,
    sigmas: Vec<f64>,
    trainable: bool,
    seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    encoding: EncodingHeader,
    /// (out, in) per layer.
    layers: Vec<(usize, usize)>,
    activation: Activation,
    norm: NormMap,
}

#[derive(Debug, Serialize, Deserialize)]
struct CombinerHeader {
    layers: Vec<(usize, usize)>,
    activation: Activation,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    kind: String,
    field_models: Vec<ModelHeader>,
    #[serde(skip_serializing_if = "Option::is_none")]
    combiner: Option<CombinerHeader>,
    payload_f64: usize,
}

/// A checkpointed model of either architecture.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Single(FieldModel),
    Branched(BranchedModel),
}

fn model_header(m: &FieldModel) -> ModelHeader {
    ModelHeader {
        encoding: EncodingHeader {
            kind: m.encoding.kind,
            dims: m.encoding.mode_matrices.iter().map(|b| b.rows).collect(),
            sigmas: m.encoding.sigmas.clone(),
            trainable: m.encoding.trainable,
            seed: m.encoding.seed,
        },
        layers: m.layers.iter().map(|l| (l.w.rows, l.w.cols)).collect(),
        activation: m.activation,
        norm: m.norm,
    }
}

fn push_model(payload: &mut Vec<f64>, m: &FieldModel) {
    for l in &m.layers {
        payload.extend_from_slice(&l.w.data);
        payload.extend_from_slice(&l.b);
    }
    if m.encoding.trainable {
        for b in &m.encoding.mode_matrices {
            payload.extend_from_slice(&b.data);
        }
    }
}

fn push_combiner(payload: &mut Vec<f64>, c: &Combiner) {
    for l in &c.layers {
        payload.extend_from_slice(&l.w.data);
        payload.extend_from_slice(&l.b);
    }
}

pub fn write_checkpoint(path: &Path, model: &Checkpoint) -> Result<(), FormatError> {
    let (kind, field_models, combiner) = match model {
        Checkpoint::Single(m) => ("single", vec![model_header(m)], None),
        Checkpoint::Branched(bm) => (
            "branched",
            vec![model_header(&bm.msff), model_header(&bm.vanilla)],
            Some(CombinerHeader {
                layers: bm
                    .combiner
                    .layers
                    .iter()
                    .map(|l| (l.w.rows, l.w.cols))
                    .collect(),
                activation: bm.combiner.activation,
            }),
        ),
    };
    let mut payload = Vec::new();
    match model {
        Checkpoint::Single(m) => push_model(&mut payload, m),
        Checkpoint::Branched(bm) => {
            push_model(&mut payload, &bm.msff);
            push_model(&mut payload, &bm.vanilla);
            push_combiner(&mut payload, &bm.combiner);
        }
    }
    let header = Header {
        format: "pulsefield-checkpoint".into(),
        version: VERSION,
        kind: kind.into(),
        field_models,
        combiner,
        payload_f64: payload.len(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serialize"))?;
    for v in payload {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

struct PayloadReader {
    data: Vec<f64>,
    pos: usize,
}

impl PayloadReader {
    fn take(&mut self, n: usize) -> Result<&[f64], FormatError> {
        if self.pos + n > self.data.len() {
            return Err(FormatError::malformed("checkpoint", "payload truncated"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

fn read_model(h: &ModelHeader, payload: &mut PayloadReader) -> Result<FieldModel, FormatError> {
    let mut encoding = match h.encoding.kind {
        EncodingKind::None => EncodingSpec::new(EncodingKind::None, h.encoding.seed),
        kind => EncodingSpec::with_dims(kind, &h.encoding.dims, &h.encoding.sigmas, h.encoding.seed),
    };
    let mut layers = Vec::with_capacity(h.layers.len());
    for &(out, inp) in &h.layers {
        let mut l = Layer::zeros(out, inp);
        l.w.data.copy_from_slice(payload.take(out * inp)?);
        l.b.copy_from_slice(payload.take(out)?);
        layers.push(l);
    }
    if h.encoding.trainable {
        for b in &mut encoding.mode_matrices {
            let n = b.data.len();
            b.data.copy_from_slice(payload.take(n)?);
        }
    }
    let model = FieldModel {
        encoding,
        layers,
        activation: h.activation,
        norm: h.norm,
    };
    model
        .validate()
        .map_err(|e| FormatError::malformed("checkpoint", e.to_string()))?;
    Ok(model)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, FormatError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header_line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r.read(&mut byte)?;
        if n == 0 {
            return Err(FormatError::malformed("checkpoint", "missing header line"));
        }
        if byte[0] == b'\n' {
            break;
        }
        header_line.push(byte[0]);
    }
    let header: Header = serde_json::from_slice(&header_line)
        .map_err(|e| FormatError::malformed("checkpoint", format!("header: {e}")))?;
    if header.format != "pulsefield-checkpoint" || header.version != VERSION {
        return Err(FormatError::Version {
            format: "checkpoint",
            found: format!("{} v{}", header.format, header.version),
        });
    }
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() != header.payload_f64 * 8 {
        return Err(FormatError::malformed(
            "checkpoint",
            format!(
                "payload is {} bytes, expected {}",
                raw.len(),
                header.payload_f64 * 8
            ),
        ));
    }
    let data: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut payload = PayloadReader { data, pos: 0 };
    match header.kind.as_str() {
        "single" => {
            if header.field_models.len() != 1 {
                return Err(FormatError::malformed("checkpoint", "expected one model"));
            }
            Ok(Checkpoint::Single(read_model(
                &header.field_models[0],
                &mut payload,
            )?))
        }
        "branched" => {
            if header.field_models.len() != 2 {
                return Err(FormatError::malformed("checkpoint", "expected two branches"));
            }
            let msff = read_model(&header.field_models[0], &mut payload)?;
            let vanilla = read_model(&header.field_models[1], &mut payload)?;
            let ch = header
                .combiner
                .as_ref()
                .ok_or_else(|| FormatError::malformed("checkpoint", "missing combiner header"))?;
            let mut layers = Vec::with_capacity(ch.layers.len());
            for &(out, inp) in &ch.layers {
                let mut l = Layer::zeros(out, inp);
                l.w.data.copy_from_slice(payload.take(out * inp)?);
                l.b.copy_from_slice(payload.take(out)?);
                layers.push(l);
            }
            Ok(Checkpoint::Branched(BranchedModel {
                msff,
                vanilla,
                combiner: Combiner {
                    layers,
                    activation: ch.activation,
                },
            }))
        }
        other => Err(FormatError::Version {
            format: "checkpoint",
            found: other.to_string(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("pulsefield_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn single_roundtrip_byte_exact() {
        let m = FieldModel::init(
            EncodingKind::Tff,
            Activation::LeakyRelu,
            NormMap::identity(),
            11,
        );
        let path = tmp("single.ckpt");
        write_checkpoint(&path, &Checkpoint::Single(m.clone())).unwrap();
        let back = read_checkpoint(&path).unwrap();
        match &back {
            Checkpoint::Single(b) => assert_eq!(*b, m),
            _ => panic!("wrong kind"),
        }
        let path2 = tmp("single2.ckpt");
        write_checkpoint(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn branched_roundtrip() {
        let bm = BranchedModel::init(Activation::LeakyRelu, NormMap::identity(), 4);
        let path = tmp("branched.ckpt");
        write_checkpoint(&path, &Checkpoint::Branched(bm.clone())).unwrap();
        match read_checkpoint(&path).unwrap() {
            Checkpoint::Branched(b) => assert_eq!(b, bm),
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn corrupt_payload_rejected() {
        let m = FieldModel::init(
            EncodingKind::None,
            Activation::Tanh,
            NormMap::identity(),
            2,
        );
        let path = tmp("trunc.ckpt");
        write_checkpoint(&path, &Checkpoint::Single(m)).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 16);
        std::fs::write(&path, bytes).unwrap();
        assert!(read_checkpoint(&path).is_err());
    }

    #[test]
    fn rff_modes_regenerate_from_seed() {
        let m = FieldModel::init(
            EncodingKind::Rff,
            Activation::LeakyRelu,
            NormMap::identity(),
            77,
        );
        let path = tmp("rff.ckpt");
        write_checkpoint(&path, &Checkpoint::Single(m.clone())).unwrap();
        match read_checkpoint(&path).unwrap() {
            Checkpoint::Single(b) => {
                assert_eq!(b.encoding.mode_matrices, m.encoding.mode_matrices);
            }
            _ => panic!("wrong kind"),
        }
    }
}

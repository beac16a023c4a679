//! Binary model files.
//!
//! Little-endian throughout; the layout is documented in `docs/model-format.md`.
//! The file ends with an FNV-1a 64 checksum of every preceding byte, so
//! truncation and bit flips are caught before any field is trusted.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::encoding::{ColumnEncoding, RowCodec};
use super::GanModel;
use crate::error::{Error, Result};
use crate::numerics::{DenseLayer, FeedforwardNet, HiddenActivation, Matrix, OutputActivation};

pub const MODEL_MAGIC: [u8; 8] = *b"GANATTM\0";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Largest count field accepted while reading; guards allocations against
/// corrupt headers that slipped past the checksum.
const MAX_COUNT: u32 = 1 << 28;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Serializes a model into its file representation.
pub fn encode_model(model: &GanModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    // Writes into a Vec cannot fail.
    let w = &mut out;
    w.write_u32::<LittleEndian>(MODEL_FORMAT_VERSION).unwrap();
    w.write_u64::<LittleEndian>(model.seed).unwrap();
    w.write_u32::<LittleEndian>(model.noise_dim as u32).unwrap();
    w.write_u32::<LittleEndian>(model.codec.columns.len() as u32)
        .unwrap();
    for (name, enc) in model.column_names.iter().zip(&model.codec.columns) {
        w.write_u32::<LittleEndian>(name.len() as u32).unwrap();
        w.extend_from_slice(name.as_bytes());
        match enc {
            ColumnEncoding::Continuous { mean, std } => {
                w.write_u8(0).unwrap();
                w.write_f64::<LittleEndian>(*mean).unwrap();
                w.write_f64::<LittleEndian>(*std).unwrap();
            }
            ColumnEncoding::Discrete { levels } => {
                w.write_u8(1).unwrap();
                w.write_u32::<LittleEndian>(levels.len() as u32).unwrap();
                for &l in levels {
                    w.write_f64::<LittleEndian>(l).unwrap();
                }
            }
            ColumnEncoding::Constant { value } => {
                w.write_u8(2).unwrap();
                w.write_f64::<LittleEndian>(*value).unwrap();
            }
        }
    }
    write_net(w, &model.generator);
    write_net(w, &model.discriminator);
    let sum = fnv1a(&out);
    out.write_u64::<LittleEndian>(sum).unwrap();
    out
}

fn write_net(w: &mut Vec<u8>, net: &FeedforwardNet) {
    w.write_u8(match net.hidden_activation() {
        HiddenActivation::Relu => 0,
        HiddenActivation::Tanh => 1,
    })
    .unwrap();
    w.write_u8(match net.output_activation() {
        OutputActivation::Linear => 0,
        OutputActivation::Sigmoid => 1,
    })
    .unwrap();
    w.write_u32::<LittleEndian>(net.layers().len() as u32)
        .unwrap();
    for layer in net.layers() {
        w.write_u32::<LittleEndian>(layer.out_dim() as u32).unwrap();
        w.write_u32::<LittleEndian>(layer.in_dim() as u32).unwrap();
        for &v in layer.weights.as_slice().iter().chain(&layer.bias) {
            w.write_f64::<LittleEndian>(v).unwrap();
        }
    }
}

fn corrupt(what: impl std::fmt::Display) -> Error {
    Error::Model(format!("corrupt model file: {what}"))
}

/// Parses a model from its file representation.
pub fn decode_model(bytes: &[u8]) -> Result<GanModel> {
    if bytes.len() < MODEL_MAGIC.len() || bytes[..MODEL_MAGIC.len()] != MODEL_MAGIC {
        return Err(Error::Model("not a model file (bad magic bytes)".into()));
    }
    if bytes.len() < MODEL_MAGIC.len() + 4 + 8 {
        return Err(corrupt("truncated header"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Model(format!(
            "unsupported model format version {version} (expected {MODEL_FORMAT_VERSION})"
        )));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 8);
    if fnv1a(body) != u64::from_le_bytes(trailer.try_into().unwrap()) {
        return Err(corrupt("checksum mismatch (truncated or modified)"));
    }
    let mut r = Cursor::new(&body[12..]);
    let seed = r.read_u64::<LittleEndian>().map_err(corrupt)?;
    let noise_dim = read_count(&mut r)? as usize;
    let n_columns = read_count(&mut r)?;
    let mut names = Vec::new();
    let mut columns = Vec::new();
    for _ in 0..n_columns {
        let len = read_count(&mut r)? as usize;
        let mut raw = vec![0u8; len];
        r.read_exact(&mut raw).map_err(corrupt)?;
        names.push(String::from_utf8(raw).map_err(|_| corrupt("column name is not UTF-8"))?);
        let enc = match r.read_u8().map_err(corrupt)? {
            0 => ColumnEncoding::Continuous {
                mean: read_f64(&mut r)?,
                std: read_f64(&mut r)?,
            },
            1 => {
                let k = read_count(&mut r)?;
                ColumnEncoding::Discrete {
                    levels: (0..k).map(|_| read_f64(&mut r)).collect::<Result<_>>()?,
                }
            }
            2 => ColumnEncoding::Constant {
                value: read_f64(&mut r)?,
            },
            t => return Err(corrupt(format!("unknown column encoding tag {t}"))),
        };
        columns.push(enc);
    }
    let generator = read_net(&mut r)?;
    let discriminator = read_net(&mut r)?;
    if (r.position() as usize) != r.get_ref().len() {
        return Err(corrupt("trailing bytes after the networks"));
    }
    GanModel::new(
        generator,
        discriminator,
        noise_dim,
        RowCodec { columns },
        names,
        seed,
    )
}

fn read_count(r: &mut Cursor<&[u8]>) -> Result<u32> {
    let v = r.read_u32::<LittleEndian>().map_err(corrupt)?;
    if v > MAX_COUNT {
        return Err(corrupt(format!("count {v} out of range")));
    }
    Ok(v)
}

fn read_f64(r: &mut Cursor<&[u8]>) -> Result<f64> {
    r.read_f64::<LittleEndian>().map_err(corrupt)
}

fn read_net(r: &mut Cursor<&[u8]>) -> Result<FeedforwardNet> {
    let hidden = match r.read_u8().map_err(corrupt)? {
        0 => HiddenActivation::Relu,
        1 => HiddenActivation::Tanh,
        t => return Err(corrupt(format!("unknown hidden activation {t}"))),
    };
    let output = match r.read_u8().map_err(corrupt)? {
        0 => OutputActivation::Linear,
        1 => OutputActivation::Sigmoid,
        t => return Err(corrupt(format!("unknown output activation {t}"))),
    };
    let n_layers = read_count(r)?;
    let mut layers = Vec::new();
    for _ in 0..n_layers {
        let out = read_count(r)? as usize;
        let inp = read_count(r)? as usize;
        let remaining = r.get_ref().len() - r.position() as usize;
        if out.saturating_mul(inp + 1).saturating_mul(8) > remaining {
            return Err(corrupt("layer larger than the remaining file"));
        }
        let weights = (0..out * inp)
            .map(|_| read_f64(r))
            .collect::<Result<Vec<_>>>()?;
        let bias = (0..out).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
        layers.push(DenseLayer {
            weights: Matrix::from_vec(out, inp, weights)?,
            bias,
        });
    }
    FeedforwardNet::from_layers(layers, hidden, output)
        .map_err(|e| Error::Model(format!("dimension mismatch: {e}")))
}

pub fn save_model(model: &GanModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<GanModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::Group;
    use crate::rng::seeded;

    fn small_model() -> GanModel {
        let mut rng = seeded(3, 0);
        let codec = RowCodec {
            columns: vec![
                ColumnEncoding::Continuous {
                    mean: 1.5,
                    std: 2.0,
                },
                ColumnEncoding::Discrete {
                    levels: vec![0.0, 1.0, 4.0],
                },
                ColumnEncoding::Continuous {
                    mean: -0.5,
                    std: 0.25,
                },
            ],
        };
        let width = codec.encoded_width();
        let g = FeedforwardNet::new(
            &[4 + 2, 8, width],
            HiddenActivation::Relu,
            OutputActivation::Linear,
            &mut rng,
        )
        .unwrap();
        let d = FeedforwardNet::new(
            &[width + 2, 8, 1],
            HiddenActivation::Tanh,
            OutputActivation::Sigmoid,
            &mut rng,
        )
        .unwrap();
        GanModel::new(
            g,
            d,
            4,
            codec,
            vec!["age".into(), "band".into(), "y".into()],
            99,
        )
        .unwrap()
    }

    /// Re-seals a modified body with a fresh checksum.
    fn reseal(mut body: Vec<u8>) -> Vec<u8> {
        let sum = fnv1a(&body);
        body.extend_from_slice(&sum.to_le_bytes());
        body
    }

    #[test]
    fn round_trip_is_exact() {
        let m = small_model();
        let bytes = encode_model(&m);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_model(&back), bytes);
        assert_eq!(
            back.synthesize(Group::Treated, 50, 7).unwrap(),
            m.synthesize(Group::Treated, 50, 7).unwrap()
        );
    }

    #[test]
    fn every_truncation_is_an_error() {
        let bytes = encode_model(&small_model());
        for len in 0..bytes.len() {
            assert!(
                matches!(decode_model(&bytes[..len]), Err(Error::Model(_))),
                "length {len}"
            );
        }
    }

    #[test]
    fn flipped_bits_fail_the_checksum() {
        let mut bytes = encode_model(&small_model());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        let err = decode_model(&bytes).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
    }

    #[test]
    fn bad_magic_and_version() {
        let bytes = encode_model(&small_model());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_model(&wrong)
            .unwrap_err()
            .to_string()
            .contains("magic"));
        let mut body = bytes[..bytes.len() - 8].to_vec();
        body[8..12].copy_from_slice(&(MODEL_FORMAT_VERSION + 1).to_le_bytes());
        let err = decode_model(&reseal(body)).unwrap_err().to_string();
        assert!(err.contains("version 2"), "{err}");
    }

    #[test]
    fn data_dim_disagreeing_with_networks_is_reported() {
        // a well-formed file whose column metadata lists one column too many
        let mut m = small_model();
        m.codec.columns.push(ColumnEncoding::Continuous {
            mean: 0.0,
            std: 1.0,
        });
        m.column_names.push("extra".into());
        let err = decode_model(&encode_model(&m)).unwrap_err();
        assert!(
            matches!(&err, Error::Model(msg) if msg.contains("dimension mismatch")),
            "{err}"
        );

        let mut m = small_model();
        m.noise_dim = 5;
        let err = decode_model(&encode_model(&m)).unwrap_err().to_string();
        assert!(err.contains("dimension mismatch"), "{err}");
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let bytes = encode_model(&small_model());
        let mut body = bytes[..bytes.len() - 8].to_vec();
        body.push(0);
        let err = decode_model(&reseal(body)).unwrap_err().to_string();
        assert!(err.contains("trailing"), "{err}");
    }

    #[test]
    fn missing_file_is_not_found() {
        assert!(matches!(
            load_model(Path::new("/no/such/model.bin")),
            Err(Error::NotFound(_))
        ));
    }
}

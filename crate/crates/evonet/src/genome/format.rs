//! On-disk formats: a lossless container for checkpointing genomes, and the
//! compact sparse encoding whose byte size defines architectural storage.
//!
//! Sparse encoding layout (little-endian):
//!
//! ```text
//! container: magic "EVSP" | u16 version | u16 layer count | u64 total live
//! per layer: u32 live count | u16 layer ordinal | u16 reserved
//! per live synapse: u32 flat index within layer | f32 weight
//! ```
//!
//! Checkpoint container ("EVNG"): architecture, lineage metadata, f64
//! weights/biases bit-for-bit, and masks packed eight-per-byte.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{GenomeError, NetworkGenome};
use crate::nn::{ActKind, LayerParams, LayerSpec, Shape, SynapseMask, WeightStore};

const SPARSE_MAGIC: &[u8; 4] = b"EVSP";
const CHECKPOINT_MAGIC: &[u8; 4] = b"EVNG";
const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("corrupt data: {0}")]
    Corrupt(String),
    #[error("decoded genome is invalid: {0}")]
    Invalid(#[from] GenomeError),
}

/// Byte length of [`encode_sparse`]'s output, in closed form: a 16-byte
/// container header, an 8-byte header per weighted layer, and 8 bytes per
/// live synapse.
pub fn sparse_encoded_len(genome: &NetworkGenome) -> u64 {
    16 + 8 * genome.masks.layers.len() as u64 + 8 * genome.live_synapses()
}

/// Encodes the live synapses as (coordinate, f32 weight) pairs per layer.
/// Biases are not part of the encoding: they are never masked, so they do
/// not contribute to architectural storage.
pub fn encode_sparse(genome: &NetworkGenome) -> Vec<u8> {
    let mut out = Vec::with_capacity(sparse_encoded_len(genome) as usize);
    out.extend_from_slice(SPARSE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(genome.masks.layers.len() as u16).to_le_bytes());
    out.extend_from_slice(&genome.live_synapses().to_le_bytes());
    for (wl, (params, mask)) in genome
        .weights
        .layers
        .iter()
        .zip(&genome.masks.layers)
        .enumerate()
    {
        debug_assert!(mask.len() <= u32::MAX as usize);
        let live: u32 = mask.iter().map(|&m| u32::from(m)).sum();
        out.extend_from_slice(&live.to_le_bytes());
        out.extend_from_slice(&(wl as u16).to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        for (i, (&w, &m)) in params.weights.iter().zip(mask).enumerate() {
            if m != 0 {
                out.extend_from_slice(&(i as u32).to_le_bytes());
                out.extend_from_slice(&(w as f32).to_le_bytes());
            }
        }
    }
    out
}

/// Decodes a sparse encoding against a known architecture, returning the
/// reconstructed masks and weights (weights carry f32 precision; biases come
/// back zeroed — the encoding does not store them).
pub fn decode_sparse(
    bytes: &[u8],
    specs: &[LayerSpec],
) -> Result<(SynapseMask, WeightStore), FormatError> {
    let mut r = Cursor { bytes, pos: 0 };
    let magic = r.take_array::<4>()?;
    if &magic != SPARSE_MAGIC {
        return Err(FormatError::BadMagic {
            expected: *SPARSE_MAGIC,
            found: magic,
        });
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let n_layers = r.u16()? as usize;
    let total_live = r.u64()?;

    let mut masks = SynapseMask::zeros(specs);
    let mut weights = WeightStore::zeros(specs);
    if n_layers != masks.layers.len() {
        return Err(FormatError::Corrupt(format!(
            "encoding has {n_layers} layers, architecture has {}",
            masks.layers.len()
        )));
    }
    let mut seen = 0u64;
    for wl in 0..n_layers {
        let live = r.u32()? as usize;
        let ordinal = r.u16()?;
        let _reserved = r.u16()?;
        if ordinal as usize != wl {
            return Err(FormatError::Corrupt(format!(
                "layer header {wl} carries ordinal {ordinal}"
            )));
        }
        let extent = masks.layers[wl].len();
        for _ in 0..live {
            let idx = r.u32()? as usize;
            let w = f32::from_le_bytes(r.take_array::<4>()?);
            if idx >= extent {
                return Err(FormatError::Corrupt(format!(
                    "layer {wl}: coordinate {idx} out of range {extent}"
                )));
            }
            masks.layers[wl][idx] = 1;
            weights.layers[wl].weights[idx] = f64::from(w);
        }
        seen += live as u64;
    }
    if seen != total_live {
        return Err(FormatError::Corrupt(format!(
            "header claims {total_live} live synapses, layers hold {seen}"
        )));
    }
    if r.pos != bytes.len() {
        return Err(FormatError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok((masks, weights))
}

/// Writes a lossless checkpoint of the genome.
pub fn save_genome(genome: &NetworkGenome, path: &Path) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(genome.input.c as u32).to_le_bytes())?;
    w.write_all(&(genome.input.h as u32).to_le_bytes())?;
    w.write_all(&(genome.input.w as u32).to_le_bytes())?;
    w.write_all(&(genome.specs.len() as u16).to_le_bytes())?;
    for spec in &genome.specs {
        write_spec(&mut w, spec)?;
    }
    let id = genome.lineage_id.as_bytes();
    w.write_all(&(id.len() as u16).to_le_bytes())?;
    w.write_all(id)?;
    w.write_all(&genome.generation.to_le_bytes())?;
    for (params, mask) in genome.weights.layers.iter().zip(&genome.masks.layers) {
        w.write_all(&(params.weights.len() as u64).to_le_bytes())?;
        for &v in &params.weights {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(params.biases.len() as u64).to_le_bytes())?;
        for &v in &params.biases {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&pack_bits(mask))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint written by [`save_genome`] and revalidates it.
pub fn load_genome(path: &Path) -> Result<NetworkGenome, FormatError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let mut r = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    let magic = r.take_array::<4>()?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(FormatError::BadMagic {
            expected: *CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let input = Shape::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let n_specs = r.u16()? as usize;
    let mut specs = Vec::with_capacity(n_specs);
    for _ in 0..n_specs {
        specs.push(read_spec(&mut r)?);
    }
    let id_len = r.u16()? as usize;
    let id_bytes = r.take(id_len)?;
    let lineage_id = String::from_utf8(id_bytes.to_vec())
        .map_err(|_| FormatError::Corrupt("lineage id is not UTF-8".into()))?;
    let generation = r.u32()?;

    let mut weights = WeightStore { layers: Vec::new() };
    let mut masks = SynapseMask { layers: Vec::new() };
    for spec in specs.iter().filter(|s| s.is_weighted()) {
        let wc = spec.weight_count().unwrap();
        let bc = spec.bias_count().unwrap();
        let wlen = r.u64()? as usize;
        if wlen != wc {
            return Err(FormatError::Corrupt(format!(
                "weight array length {wlen} does not match spec ({wc})"
            )));
        }
        let mut ws = Vec::with_capacity(wlen);
        for _ in 0..wlen {
            ws.push(f64::from_le_bytes(r.take_array::<8>()?));
        }
        let blen = r.u64()? as usize;
        if blen != bc {
            return Err(FormatError::Corrupt(format!(
                "bias array length {blen} does not match spec ({bc})"
            )));
        }
        let mut bs = Vec::with_capacity(blen);
        for _ in 0..blen {
            bs.push(f64::from_le_bytes(r.take_array::<8>()?));
        }
        let packed = r.take(wlen.div_ceil(8))?;
        masks.layers.push(unpack_bits(packed, wlen));
        weights.layers.push(LayerParams {
            weights: ws,
            biases: bs,
        });
    }
    if r.pos != bytes.len() {
        return Err(FormatError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(NetworkGenome::new(
        input, specs, weights, masks, lineage_id, generation,
    )?)
}

fn write_spec(w: &mut impl Write, spec: &LayerSpec) -> io::Result<()> {
    match *spec {
        LayerSpec::Conv2d {
            out_ch,
            in_ch,
            kh,
            kw,
            stride,
            pad,
        } => {
            w.write_all(&[0u8])?;
            for v in [out_ch, in_ch, kh, kw, stride, pad] {
                w.write_all(&(v as u32).to_le_bytes())?;
            }
        }
        LayerSpec::AvgPool2d { win, stride } => {
            w.write_all(&[1u8])?;
            for v in [win, stride] {
                w.write_all(&(v as u32).to_le_bytes())?;
            }
        }
        LayerSpec::Dense { out_dim, in_dim } => {
            w.write_all(&[2u8])?;
            for v in [out_dim, in_dim] {
                w.write_all(&(v as u32).to_le_bytes())?;
            }
        }
        LayerSpec::Activation(kind) => {
            let tag = match kind {
                ActKind::Tanh => 0u8,
                ActKind::Relu => 1,
                ActKind::Identity => 2,
            };
            w.write_all(&[3u8, tag])?;
        }
    }
    Ok(())
}

fn read_spec(r: &mut Cursor) -> Result<LayerSpec, FormatError> {
    let tag = r.take_array::<1>()?[0];
    Ok(match tag {
        0 => LayerSpec::Conv2d {
            out_ch: r.u32()? as usize,
            in_ch: r.u32()? as usize,
            kh: r.u32()? as usize,
            kw: r.u32()? as usize,
            stride: r.u32()? as usize,
            pad: r.u32()? as usize,
        },
        1 => LayerSpec::AvgPool2d {
            win: r.u32()? as usize,
            stride: r.u32()? as usize,
        },
        2 => LayerSpec::Dense {
            out_dim: r.u32()? as usize,
            in_dim: r.u32()? as usize,
        },
        3 => LayerSpec::Activation(match r.take_array::<1>()?[0] {
            0 => ActKind::Tanh,
            1 => ActKind::Relu,
            2 => ActKind::Identity,
            k => return Err(FormatError::Corrupt(format!("unknown activation tag {k}"))),
        }),
        k => return Err(FormatError::Corrupt(format!("unknown layer tag {k}"))),
    })
}

fn pack_bits(mask: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; mask.len().div_ceil(8)];
    for (i, &m) in mask.iter().enumerate() {
        if m != 0 {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(packed: &[u8], len: usize) -> Vec<u8> {
    (0..len)
        .map(|i| (packed[i / 8] >> (i % 8)) & 1)
        .collect()
}

/// Minimal bounds-checked reader over a byte slice.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.pos + n > self.bytes.len() {
            return Err(FormatError::Corrupt(format!(
                "unexpected end of data at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn take_array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take_array::<2>()?))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take_array::<4>()?))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take_array::<8>()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{build_ancestor, storage_size};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// An ancestor with randomized masks and biases, exercising every field.
    fn scrambled_genome() -> NetworkGenome {
        let mut g = build_ancestor(11);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for l in &mut g.masks.layers {
            for m in l.iter_mut() {
                *m = u8::from(rng.gen_bool(0.7));
            }
            // Keep every layer alive so the genome is a realistic survivor.
            l[0] = 1;
        }
        for l in &mut g.weights.layers {
            for b in &mut l.biases {
                *b = rng.gen_range(-0.5..0.5);
            }
        }
        g.apply_masks();
        g.lineage_id = "m3_rc70_s17".into();
        g.generation = 12;
        g
    }

    #[test]
    fn sparse_encoding_length_matches_closed_form() {
        let g = scrambled_genome();
        let bytes = encode_sparse(&g);
        assert_eq!(bytes.len() as u64, sparse_encoded_len(&g));
        assert_eq!(bytes.len() as u64, storage_size(&g).bytes);
    }

    #[test]
    fn sparse_round_trip_recovers_masks_and_f32_weights() {
        let g = scrambled_genome();
        let bytes = encode_sparse(&g);
        let (masks, weights) = decode_sparse(&bytes, &g.specs).unwrap();
        assert_eq!(masks, g.masks);
        for (dec, orig) in weights.layers.iter().zip(&g.weights.layers) {
            for (d, o) in dec.weights.iter().zip(&orig.weights) {
                assert_eq!(*d, f64::from(*o as f32), "f32 rounding must be exact");
            }
            assert!(dec.biases.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn sparse_decode_rejects_corruption() {
        let g = scrambled_genome();
        let mut bytes = encode_sparse(&g);
        bytes[0] = b'X';
        assert!(matches!(
            decode_sparse(&bytes, &g.specs),
            Err(FormatError::BadMagic { .. })
        ));

        let mut truncated = encode_sparse(&g);
        truncated.truncate(truncated.len() - 3);
        assert!(decode_sparse(&truncated, &g.specs).is_err());

        let mut trailing = encode_sparse(&g);
        trailing.push(0);
        assert!(decode_sparse(&trailing, &g.specs).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gen12.evng");
        let g = scrambled_genome();
        save_genome(&g, &path).unwrap();
        let loaded = load_genome(&path).unwrap();
        assert_eq!(loaded, g);
    }

    #[test]
    fn checkpoint_rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(
            load_genome(&path),
            Err(FormatError::BadMagic { .. })
        ));
    }

    #[test]
    fn bit_packing_round_trips() {
        let mask = vec![1u8, 0, 0, 1, 1, 1, 0, 1, 1, 0, 1];
        assert_eq!(unpack_bits(&pack_bits(&mask), mask.len()), mask);
    }
}

//! Bounded MATLAB v5 (MAT-file) reader.
//!
//! Reads exactly what NINAPRO-style files need: real 2-D numeric
//! arrays, either bare or wrapped in zlib-compressed elements, in
//! little- or big-endian byte order. Everything else (cell, struct,
//! object, char, sparse, >2-D, complex) produces an unsupported-feature
//! error naming the construct — this is deliberately not a general MAT
//! reader.
//!
//! Layout summary (MAT-file format, level 5): a 128-byte header —
//! 116 bytes of description text, 8 subsystem-offset bytes, a `u16`
//! version that must read 0x0100, and a 2-byte endian indicator
//! (`"IM"` little, `"MI"` big) — followed by data elements. Each
//! element is an 8-byte tag (`u32` type, `u32` byte count) plus
//! payload, padded to 8-byte boundaries; elements ≤ 4 bytes use a
//! packed "small element" tag. A `miMATRIX` element nests subelements:
//! array flags, dimensions, name, and the real part.

use std::io::Read;
use std::path::Path;

use crate::dataset::EmgRecording;
use crate::error::{PipelineError, Result};

// Data element types.
const MI_INT8: u32 = 1;
const MI_UINT8: u32 = 2;
const MI_INT16: u32 = 3;
const MI_UINT16: u32 = 4;
const MI_INT32: u32 = 5;
const MI_UINT32: u32 = 6;
const MI_SINGLE: u32 = 7;
const MI_DOUBLE: u32 = 9;
const MI_INT64: u32 = 12;
const MI_UINT64: u32 = 13;
const MI_MATRIX: u32 = 14;
const MI_COMPRESSED: u32 = 15;
const MI_UTF8: u32 = 16;

/// Array classes 6..=15 are the numeric ones we accept.
fn class_name(class: u32) -> &'static str {
    match class {
        1 => "cell array",
        2 => "struct array",
        3 => "object array",
        4 => "char array",
        5 => "sparse array",
        6 => "double array",
        7 => "single array",
        8..=15 => "integer array",
        _ => "unknown class",
    }
}

/// A dense real matrix as stored in the file: `data` is column-major,
/// so column `c` occupies `data[c*rows .. (c+1)*rows]`.
#[derive(Clone, Debug)]
pub(crate) struct NumericMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

impl<'a> Cursor<'a> {
    fn slice(&self, start: usize, len: usize) -> Result<&'a [u8]> {
        self.bytes.get(start..start + len).ok_or_else(|| {
            PipelineError::format(format!(
                "truncated element: need {len} bytes at offset {start}, file has {}",
                self.bytes.len()
            ))
        })
    }

    fn u16_at(&self, pos: usize) -> Result<u16> {
        let b: [u8; 2] = self.slice(pos, 2)?.try_into().unwrap();
        Ok(if self.big_endian {
            u16::from_be_bytes(b)
        } else {
            u16::from_le_bytes(b)
        })
    }

    fn u32_at(&self, pos: usize) -> Result<u32> {
        let b: [u8; 4] = self.slice(pos, 4)?.try_into().unwrap();
        Ok(if self.big_endian {
            u32::from_be_bytes(b)
        } else {
            u32::from_le_bytes(b)
        })
    }
}

/// Parsed element tag: payload location plus where the next sibling
/// starts (8-byte aligned; small elements occupy exactly 8 bytes).
struct Tag {
    dtype: u32,
    data_start: usize,
    data_len: usize,
    next: usize,
}

fn read_tag(c: &Cursor, pos: usize) -> Result<Tag> {
    let word = c.u32_at(pos)?;
    if word >> 16 != 0 {
        // Small element: type and byte count packed into one word,
        // payload inside the tag's second word.
        let dtype = word & 0xFFFF;
        let data_len = (word >> 16) as usize;
        if data_len > 4 {
            return Err(PipelineError::format(format!(
                "small element at offset {pos} claims {data_len} bytes (max 4)"
            )));
        }
        c.slice(pos + 4, 4)?;
        Ok(Tag {
            dtype,
            data_start: pos + 4,
            data_len,
            next: pos + 8,
        })
    } else {
        let data_len = c.u32_at(pos + 4)? as usize;
        c.slice(pos + 8, data_len)?;
        let padded = data_len.div_ceil(8) * 8;
        Ok(Tag {
            dtype: word,
            data_start: pos + 8,
            data_len,
            next: pos + 8 + padded,
        })
    }
}

/// Decodes a numeric data element into `f64`s according to its element
/// type (which may be narrower than the array class; MATLAB stores
/// integer-valued doubles as e.g. `miINT16`).
fn decode_numeric(c: &Cursor, tag: &Tag) -> Result<Vec<f64>> {
    let bytes = c.slice(tag.data_start, tag.data_len)?;
    let width = match tag.dtype {
        MI_INT8 | MI_UINT8 => 1,
        MI_INT16 | MI_UINT16 => 2,
        MI_INT32 | MI_UINT32 | MI_SINGLE => 4,
        MI_DOUBLE | MI_INT64 | MI_UINT64 => 8,
        other => {
            return Err(PipelineError::unsupported(format!(
                "numeric data stored as element type {other}"
            )))
        }
    };
    if !tag.data_len.is_multiple_of(width) {
        return Err(PipelineError::corrupt(format!(
            "numeric element length {} is not a multiple of its {width}-byte type",
            tag.data_len
        )));
    }
    let n = tag.data_len / width;
    let mut out = Vec::with_capacity(n);
    let order = c.big_endian;
    for i in 0..n {
        let chunk = &bytes[i * width..(i + 1) * width];
        let v = match tag.dtype {
            MI_INT8 => chunk[0] as i8 as f64,
            MI_UINT8 => chunk[0] as f64,
            MI_INT16 => {
                let b: [u8; 2] = chunk.try_into().unwrap();
                (if order { i16::from_be_bytes(b) } else { i16::from_le_bytes(b) }) as f64
            }
            MI_UINT16 => {
                let b: [u8; 2] = chunk.try_into().unwrap();
                (if order { u16::from_be_bytes(b) } else { u16::from_le_bytes(b) }) as f64
            }
            MI_INT32 => {
                let b: [u8; 4] = chunk.try_into().unwrap();
                (if order { i32::from_be_bytes(b) } else { i32::from_le_bytes(b) }) as f64
            }
            MI_UINT32 => {
                let b: [u8; 4] = chunk.try_into().unwrap();
                (if order { u32::from_be_bytes(b) } else { u32::from_le_bytes(b) }) as f64
            }
            MI_SINGLE => {
                let b: [u8; 4] = chunk.try_into().unwrap();
                (if order { f32::from_be_bytes(b) } else { f32::from_le_bytes(b) }) as f64
            }
            MI_DOUBLE => {
                let b: [u8; 8] = chunk.try_into().unwrap();
                if order {
                    f64::from_be_bytes(b)
                } else {
                    f64::from_le_bytes(b)
                }
            }
            MI_INT64 => {
                let b: [u8; 8] = chunk.try_into().unwrap();
                (if order { i64::from_be_bytes(b) } else { i64::from_le_bytes(b) }) as f64
            }
            MI_UINT64 => {
                let b: [u8; 8] = chunk.try_into().unwrap();
                (if order { u64::from_be_bytes(b) } else { u64::from_le_bytes(b) }) as f64
            }
            _ => unreachable!(),
        };
        out.push(v);
    }
    Ok(out)
}

/// Parses one `miMATRIX` payload into `(name, matrix)`.
fn parse_matrix(c: &Cursor, start: usize, len: usize) -> Result<(String, NumericMatrix)> {
    let end = start + len;

    // Subelement 1: array flags (miUINT32, 8 bytes).
    let flags_tag = read_tag(c, start)?;
    if flags_tag.dtype != MI_UINT32 || flags_tag.data_len != 8 {
        return Err(PipelineError::format(
            "matrix does not start with an 8-byte array-flags subelement",
        ));
    }
    let flags_word = c.u32_at(flags_tag.data_start)?;
    let class = flags_word & 0xFF;
    let complex = flags_word & 0x0800 != 0;
    if !(6..=15).contains(&class) {
        return Err(PipelineError::unsupported(format!(
            "{} (class {class})",
            class_name(class)
        )));
    }
    if complex {
        return Err(PipelineError::unsupported("complex numeric array"));
    }

    // Subelement 2: dimensions (miINT32).
    let dims_tag = read_tag(c, flags_tag.next)?;
    if dims_tag.dtype != MI_INT32 {
        return Err(PipelineError::format("dimensions subelement is not miINT32"));
    }
    let ndims = dims_tag.data_len / 4;
    if ndims != 2 {
        return Err(PipelineError::unsupported(format!(
            "{ndims}-dimensional array (only 2-D is supported)"
        )));
    }
    let rows = c.u32_at(dims_tag.data_start)? as usize;
    let cols = c.u32_at(dims_tag.data_start + 4)? as usize;

    // Subelement 3: array name (1-byte character data).
    let name_tag = read_tag(c, dims_tag.next)?;
    if !matches!(name_tag.dtype, MI_INT8 | MI_UINT8 | MI_UTF8) {
        return Err(PipelineError::format(format!(
            "array-name subelement has element type {}, expected int8/utf8",
            name_tag.dtype
        )));
    }
    let name = String::from_utf8(c.slice(name_tag.data_start, name_tag.data_len)?.to_vec())
        .map_err(|_| PipelineError::format("array name is not valid UTF-8"))?;

    // Subelement 4: real part.
    if name_tag.next >= end {
        return Err(PipelineError::format(format!(
            "matrix {name:?} has no data subelement"
        )));
    }
    let data_tag = read_tag(c, name_tag.next)?;
    let data = decode_numeric(c, &data_tag)?;
    if data.len() != rows * cols {
        return Err(PipelineError::corrupt(format!(
            "matrix {name:?} is {rows}x{cols} but carries {} values",
            data.len()
        )));
    }
    Ok((name, NumericMatrix { rows, cols, data }))
}

/// Parses a whole MAT v5 byte stream into named numeric matrices.
pub(crate) fn parse_mat_bytes(bytes: &[u8]) -> Result<Vec<(String, NumericMatrix)>> {
    if bytes.len() < 128 {
        return Err(PipelineError::format(format!(
            "file is {} bytes; a MAT v5 header is 128",
            bytes.len()
        )));
    }
    if bytes[..4] == [0, 0, 0, 0] {
        return Err(PipelineError::format(
            "header text starts with zero bytes (not a MAT v5 file)",
        ));
    }
    let big_endian = match &bytes[126..128] {
        b"IM" => false,
        b"MI" => true,
        other => {
            return Err(PipelineError::format(format!(
                "endian indicator is {:?}, expected \"IM\" or \"MI\"",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let c = Cursor { bytes, big_endian };
    let version = c.u16_at(124)?;
    if version != 0x0100 {
        return Err(PipelineError::format(format!(
            "MAT version field is 0x{version:04x}, expected 0x0100"
        )));
    }

    let mut vars = Vec::new();
    let mut pos = 128usize;
    while pos + 8 <= bytes.len() {
        // Trailing zero padding cannot start a valid tag.
        if c.u32_at(pos)? == 0 {
            break;
        }
        let tag = read_tag(&c, pos)?;
        match tag.dtype {
            MI_MATRIX => {
                vars.push(parse_matrix(&c, tag.data_start, tag.data_len)?);
                pos = tag.next;
            }
            MI_COMPRESSED => {
                let mut inflated = Vec::new();
                flate2::read::ZlibDecoder::new(c.slice(tag.data_start, tag.data_len)?)
                    .read_to_end(&mut inflated)
                    .map_err(|e| {
                        PipelineError::corrupt(format!(
                            "zlib decompression failed at offset {pos}: {e}"
                        ))
                    })?;
                let inner = Cursor {
                    bytes: &inflated,
                    big_endian,
                };
                let inner_tag = read_tag(&inner, 0)?;
                if inner_tag.dtype == MI_MATRIX {
                    vars.push(parse_matrix(&inner, inner_tag.data_start, inner_tag.data_len)?);
                }
                // Compressed elements are written back-to-back without
                // outer padding.
                pos = tag.data_start + tag.data_len;
            }
            _ => {
                // Unknown top-level element (e.g. subsystem data): skip.
                pos = tag.next;
            }
        }
    }
    Ok(vars)
}

/// Which MAT variables hold the signal and labels. `None` label names
/// mean: prefer the refined `restimulus`/`rerepetition` vectors when
/// present, otherwise fall back to `stimulus`/`repetition` — the
/// refined labels align movement onsets with the actual contraction.
#[derive(Clone, Debug)]
pub struct MatVariableNames {
    pub emg: String,
    pub stimulus: Option<String>,
    pub repetition: Option<String>,
}

impl Default for MatVariableNames {
    fn default() -> Self {
        MatVariableNames {
            emg: "emg".into(),
            stimulus: None,
            repetition: None,
        }
    }
}

fn find<'a>(
    vars: &'a [(String, NumericMatrix)],
    name: &str,
) -> Option<&'a NumericMatrix> {
    vars.iter().find(|(n, _)| n == name).map(|(_, m)| m)
}

fn resolve<'a>(
    vars: &'a [(String, NumericMatrix)],
    requested: &Option<String>,
    preferred: &str,
    fallback: &str,
) -> Result<&'a NumericMatrix> {
    let available = || {
        vars.iter()
            .map(|(n, _)| n.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    };
    match requested {
        Some(name) => find(vars, name).ok_or_else(|| {
            PipelineError::lookup(format!(
                "variable {name:?} not in file (available: {})",
                available()
            ))
        }),
        None => find(vars, preferred)
            .or_else(|| find(vars, fallback))
            .ok_or_else(|| {
                PipelineError::lookup(format!(
                    "neither {preferred:?} nor {fallback:?} in file (available: {})",
                    available()
                ))
            }),
    }
}

/// Extracts an integer label vector from a rows×1 or 1×cols matrix.
fn label_vector(m: &NumericMatrix, what: &str) -> Result<Vec<u8>> {
    if m.rows != 1 && m.cols != 1 {
        return Err(PipelineError::validation(format!(
            "{what} must be a vector, got {}x{}",
            m.rows, m.cols
        )));
    }
    m.data
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let r = v.round();
            if !v.is_finite() || (v - r).abs() > 1e-9 || !(0.0..=255.0).contains(&r) {
                Err(PipelineError::validation(format!(
                    "{what} entry {i} is {v}, expected a small non-negative integer"
                )))
            } else {
                Ok(r as u8)
            }
        })
        .collect()
}

/// Loads a recording from a MAT v5 file. The EMG matrix is
/// samples×channels in the file (column-major storage, so each channel
/// is contiguous); labels may be stored in either vector orientation.
pub fn load_mat_recording(
    path: &Path,
    names: &MatVariableNames,
    subject_id: i32,
    sample_rate_hz: f64,
) -> Result<EmgRecording> {
    let bytes = std::fs::read(path).map_err(|e| {
        PipelineError::lookup(format!("cannot open {}: {e}", path.display()))
    })?;
    let vars = parse_mat_bytes(&bytes)?;

    let emg = find(&vars, &names.emg).ok_or_else(|| {
        PipelineError::lookup(format!(
            "variable {:?} not in file (available: {})",
            names.emg,
            vars.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>().join(", ")
        ))
    })?;
    let stim = resolve(&vars, &names.stimulus, "restimulus", "stimulus")?;
    let rep = resolve(&vars, &names.repetition, "rerepetition", "repetition")?;

    let n_samples = emg.rows;
    let n_channels = emg.cols;
    let channels: Vec<Vec<f64>> = (0..n_channels)
        .map(|ch| emg.data[ch * n_samples..(ch + 1) * n_samples].to_vec())
        .collect();
    let stimulus = label_vector(stim, "stimulus")?;
    let repetition = label_vector(rep, "repetition")?;
    if stimulus.len() != n_samples {
        return Err(PipelineError::validation(format!(
            "stimulus has {} entries but emg has {} samples",
            stimulus.len(),
            n_samples
        )));
    }
    EmgRecording::new(subject_id, sample_rate_hz, channels, stimulus, repetition)
}

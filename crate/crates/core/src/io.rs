//! The binary function-table format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "FPFN"
//! 4       2     version, u16 LE (= 1)
//! 6       2     p, u16 LE
//! 8       2     n, u16 LE
//! 10      1     kind: 0 boolean bitset, 1 real f64, 2 complex f64 pairs
//! 11      3     reserved, zero
//! 14      ..    p^n entries in index order
//! ```
//!
//! Booleans are packed least-significant bit first with zero padding;
//! floats are IEEE-754 little-endian. The measure is not stored: loaded
//! functions carry the uniform measure.

use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::Cube;
use crate::funcspace::{DenseFunction, Kind};

pub const MAGIC: [u8; 4] = *b"FPFN";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FileHeader {
    pub version: u16,
    pub p: u16,
    pub n: u16,
    pub kind: Kind,
}

impl FileHeader {
    pub fn cube(&self) -> Result<Cube> {
        Cube::new(u32::from(self.p), usize::from(self.n)).map_err(|e| Error::Format(format!("header: {e}")))
    }

    pub fn payload_len(&self) -> Result<usize> {
        let size = self.cube()?.size();
        let len = match self.kind {
            Kind::Boolean => Some(size.div_ceil(8)),
            Kind::Real => size.checked_mul(8),
            Kind::Complex => size.checked_mul(16),
        };
        len.ok_or_else(|| Error::Format("payload length overflows".into()))
    }
}

fn kind_byte(kind: Kind) -> u8 {
    match kind {
        Kind::Boolean => 0,
        Kind::Real => 1,
        Kind::Complex => 2,
    }
}

pub fn parse_header(bytes: &[u8]) -> Result<FileHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("file has {} bytes, shorter than the {HEADER_LEN}-byte header", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let version = u16_at(4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let kind = match bytes[10] {
        0 => Kind::Boolean,
        1 => Kind::Real,
        2 => Kind::Complex,
        k => return Err(Error::Format(format!("unknown kind byte {k}"))),
    };
    if bytes[11..14] != [0, 0, 0] {
        return Err(Error::Format("reserved header bytes are not zero".into()));
    }
    let header = FileHeader { version, p: u16_at(6), n: u16_at(8), kind };
    header.cube()?;
    Ok(header)
}

pub fn encode_function(f: &DenseFunction) -> Result<Vec<u8>> {
    let cube = f.cube();
    let p = u16::try_from(cube.p).map_err(|_| Error::Format(format!("p = {} does not fit in 16 bits", cube.p)))?;
    let n = u16::try_from(cube.n).map_err(|_| Error::Format(format!("n = {} does not fit in 16 bits", cube.n)))?;
    let header = FileHeader { version: VERSION, p, n, kind: f.kind() };
    let mut out = Vec::with_capacity(HEADER_LEN + header.payload_len()?);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&p.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.push(kind_byte(f.kind()));
    out.extend_from_slice(&[0; 3]);
    match f.kind() {
        Kind::Boolean => {
            for chunk in f.values().chunks(8) {
                let byte = chunk.iter().enumerate().fold(0u8, |b, (i, v)| if v.re != 0.0 { b | 1 << i } else { b });
                out.push(byte);
            }
        }
        Kind::Real => {
            for v in f.values() {
                out.extend_from_slice(&v.re.to_le_bytes());
            }
        }
        Kind::Complex => {
            for v in f.values() {
                out.extend_from_slice(&v.re.to_le_bytes());
                out.extend_from_slice(&v.im.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Header and length problems are [`Error::Format`]; a well-framed payload
/// with nonzero padding bits or non-finite floats is [`Error::Consistency`].
pub fn decode_function(bytes: &[u8]) -> Result<DenseFunction> {
    let header = parse_header(bytes)?;
    let cube = header.cube()?;
    let expected = header.payload_len()?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Format(format!("payload has {} bytes, header implies {expected}", payload.len())));
    }
    let size = cube.size();
    let f64_at = |i: usize| f64::from_le_bytes(payload[i..i + 8].try_into().expect("8-byte slice"));
    match header.kind {
        Kind::Boolean => {
            let tail = size % 8;
            if tail != 0 && payload[expected - 1] >> tail != 0 {
                return Err(Error::Consistency("nonzero padding bits after the last entry".into()));
            }
            let bits: Vec<bool> = (0..size).map(|i| payload[i / 8] >> (i % 8) & 1 == 1).collect();
            DenseFunction::from_bools(cube, &bits)
        }
        Kind::Real => {
            let values: Vec<f64> = (0..size).map(|i| f64_at(8 * i)).collect();
            check_finite(values.iter().copied())?;
            DenseFunction::from_real(cube, values)
        }
        Kind::Complex => {
            let values: Vec<Complex64> = (0..size).map(|i| Complex64::new(f64_at(16 * i), f64_at(16 * i + 8))).collect();
            check_finite(values.iter().flat_map(|v| [v.re, v.im]))?;
            DenseFunction::from_complex(cube, values)
        }
    }
}

fn check_finite(mut values: impl Iterator<Item = f64>) -> Result<()> {
    match values.position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Consistency(format!("non-finite value in payload (component {i})"))),
        None => Ok(()),
    }
}

pub fn read_function(path: impl AsRef<Path>) -> Result<DenseFunction> {
    decode_function(&fs::read(path)?)
}

pub fn write_function(path: impl AsRef<Path>, f: &DenseFunction) -> Result<()> {
    fs::write(path, encode_function(f)?)?;
    Ok(())
}

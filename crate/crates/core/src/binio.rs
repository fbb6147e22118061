//! Shared helpers for the little-endian binary matrix formats.
//!
//! Layout common to "MSEB" (embeddings), "AFFM" (affinity matrices) and the
//! parameter blob of "GATM" (model files): a 4-byte magic, `version: u32`,
//! shape fields, then row-major 32-bit floats.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;

pub fn write_magic<W: Write>(w: &mut W, magic: &[u8; 4]) -> Result<()> {
    w.write_all(magic)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    Ok(())
}

pub fn read_magic<R: Read>(r: &mut R, magic: &[u8; 4], path: &str) -> Result<()> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got)
        .map_err(|_| Error::format(path, "file too short for header"))?;
    if &got != magic {
        return Err(Error::format(
            path,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(magic)
            ),
        ));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::format(path, "truncated version field"))?;
    if version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    Ok(())
}

pub fn write_f32s<W: Write, T: Scalar>(w: &mut W, values: &[T]) -> Result<()> {
    for &v in values {
        w.write_f32::<LittleEndian>(v.to_f64_lossy() as f32)?;
    }
    Ok(())
}

pub fn read_f32s<R: Read, T: Scalar>(r: &mut R, count: usize, path: &str) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let v = r
            .read_f32::<LittleEndian>()
            .map_err(|_| Error::format(path, format!("truncated at float {i} of {count}")))?;
        out.push(T::from_f64_lossy(v as f64));
    }
    Ok(out)
}

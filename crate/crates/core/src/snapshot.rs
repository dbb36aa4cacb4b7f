//! Binary and CSV export of noise grids and solved fields.
//!
//! Binary layout: a 32-byte header
//!
//! | bytes  | content                                       |
//! |--------|-----------------------------------------------|
//! | 0..8   | magic                                         |
//! | 8..16  | `h` (wave) or `dx` (heat), f64 LE             |
//! | 16..24 | `t_max`, f64 LE                               |
//! | 24..28 | `x_lo / h` (wave) or `n_steps` (heat), i32 LE |
//! | 28..32 | `x_hi / h` (wave) or `n_cells` (heat), i32 LE |
//!
//! followed by little-endian `f64` values, row-major by (time level, column).

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;

pub const NOISE_MAGIC: &[u8; 8] = b"SWNOISE1";
pub const WAVE_FIELD_MAGIC: &[u8; 8] = b"SWFIELD1";
pub const HEAT_FIELD_MAGIC: &[u8; 8] = b"SHFIELD1";
pub const HEADER_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridHeader {
    pub magic: [u8; 8],
    pub step: f64,
    pub t_max: f64,
    pub lo: i32,
    pub hi: i32,
}

impl GridHeader {
    pub fn for_lattice(magic: &[u8; 8], lattice: &LatticeSpec) -> Result<Self> {
        let narrow = |v: i64| {
            i32::try_from(v).map_err(|_| Error::Config(format!("lattice index {v} does not fit the header")))
        };
        Ok(Self {
            magic: *magic,
            step: lattice.h(),
            t_max: lattice.t_max(),
            lo: narrow(lattice.m_lo())?,
            hi: narrow(lattice.m_hi())?,
        })
    }

    pub fn write<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(&self.magic)?;
        out.write_all(&self.step.to_le_bytes())?;
        out.write_all(&self.t_max.to_le_bytes())?;
        out.write_all(&self.lo.to_le_bytes())?;
        out.write_all(&self.hi.to_le_bytes())?;
        Ok(())
    }

    pub fn read<R: Read>(input: &mut R) -> Result<Self> {
        let mut buf = [0u8; HEADER_LEN];
        input.read_exact(&mut buf)?;
        let f = |r: std::ops::Range<usize>| f64::from_le_bytes(buf[r].try_into().unwrap());
        let i = |r: std::ops::Range<usize>| i32::from_le_bytes(buf[r].try_into().unwrap());
        Ok(Self {
            magic: buf[..8].try_into().unwrap(),
            step: f(8..16),
            t_max: f(16..24),
            lo: i(24..28),
            hi: i(28..32),
        })
    }
}

/// Reads the payload that follows a header.
pub fn read_values<R: Read>(input: &mut R) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Config(format!("payload of {} bytes is not a whole number of f64", bytes.len())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_32_bytes_and_reads_back() {
        let l = LatticeSpec::new(0.25, 2.0, -3.0, 5.0).unwrap();
        let h = GridHeader::for_lattice(WAVE_FIELD_MAGIC, &l).unwrap();
        let mut buf = Vec::new();
        h.write(&mut buf).unwrap();
        assert_eq!(buf.len(), HEADER_LEN);
        let back = GridHeader::read(&mut buf.as_slice()).unwrap();
        assert_eq!(back, h);
        assert_eq!((back.lo, back.hi), (-12, 20));
    }
}

//! Discrete space-time white noise on the light-cone cells.
//!
//! Every cell draws its standard normal from a counter-based generator keyed
//! by `(seed, stream, cell index)`, so any cell can be evaluated on its own, in
//! any order, on any thread, with the same result.

use std::collections::HashSet;
use std::io::Write;

use rand::rand_core::impls;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{LatticeSpec, NoiseCell};
use crate::snapshot::{GridHeader, NOISE_MAGIC};

/// Stream tags keep the wave cells, the heat grid and the controls apart.
pub const WAVE_STREAM: u64 = 0x7761_7665_6365_6c6c;
pub const HEAT_STREAM: u64 = 0x6865_6174_6772_6964;
/// Independent Brownian paths used as controls.
pub const BROWNIAN_STREAM: u64 = 0x6272_6f77_6e69_616e;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// SplitMix64 sequence started from a hash of its key. Only a handful of
/// words are ever consumed per key.
#[derive(Debug, Clone)]
pub struct CounterRng {
    state: u64,
}

impl CounterRng {
    #[inline]
    pub fn keyed(seed: u64, stream: u64, a: u64, b: u64) -> Self {
        let k = mix64(b.wrapping_add(GOLDEN));
        let k = mix64(a ^ k.rotate_left(17));
        let k = mix64(stream ^ k.wrapping_mul(GOLDEN));
        Self { state: mix64(seed ^ k) }
    }
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        impls::fill_bytes_via_next(self, dst)
    }
}

/// Standard normal deviate addressed by `(seed, stream, a, b)`.
#[inline]
pub fn unit_normal(seed: u64, stream: u64, a: u64, b: u64) -> f64 {
    StandardNormal.sample(&mut CounterRng::keyed(seed, stream, a, b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseRealization {
    seed: u64,
    lattice: LatticeSpec,
}

pub fn make_noise(seed: u64, lattice: LatticeSpec) -> Result<NoiseRealization> {
    // Re-validate: the spec may have been deserialized.
    let lattice = LatticeSpec::from_indices(lattice.h(), lattice.n_max(), lattice.m_lo(), lattice.m_hi())?;
    Ok(NoiseRealization { seed, lattice })
}

impl NoiseRealization {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    /// Unit normal of a cell, without the domain check.
    #[inline]
    pub fn unit(&self, cell: NoiseCell) -> f64 {
        unit_normal(self.seed, WAVE_STREAM, cell.n as u64, cell.m as u64)
    }

    /// `ξ(cell)` without the domain check.
    #[inline]
    pub fn increment_unchecked(&self, cell: NoiseCell) -> f64 {
        cell.area(self.lattice.h()).sqrt() * self.unit(cell)
    }

    pub fn cell_increment(&self, cell: NoiseCell) -> Result<f64> {
        if !self.lattice.contains_cell(cell) {
            return Err(Error::Domain(format!("cell ({}, {}) outside the lattice", cell.n, cell.m)));
        }
        Ok(self.increment_unchecked(cell))
    }

    /// `ξ` of a union of whole cells.
    pub fn region_integral(&self, cells: &[NoiseCell]) -> Result<f64> {
        let mut seen = HashSet::with_capacity(cells.len());
        let mut total = 0.0;
        for &c in cells {
            if !seen.insert(c) {
                return Err(Error::Precondition(format!("cell ({}, {}) listed twice", c.n, c.m)));
            }
            total += self.cell_increment(c)?;
        }
        Ok(total)
    }

    /// All cell increments in (n, m) order. `workers = None` uses the ambient
    /// rayon pool; the output does not depend on the worker count.
    pub fn render(&self, workers: Option<usize>) -> Result<Vec<f64>> {
        let cells: Vec<NoiseCell> = self.lattice.cells().collect();
        let draw = || -> Vec<f64> { cells.par_iter().map(|&c| self.increment_unchecked(c)).collect() };
        match workers {
            None => Ok(draw()),
            Some(k) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(k.max(1))
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
                Ok(pool.install(draw))
            }
        }
    }

    /// Binary dump of the rendered cell grid: 32-byte header followed by
    /// little-endian `f64` increments in (n, m) order.
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        GridHeader::for_lattice(NOISE_MAGIC, &self.lattice)?.write(&mut out)?;
        for v in self.render(None)? {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{cone_cells, LatticePoint};

    fn lattice() -> LatticeSpec {
        LatticeSpec::new(0.5, 3.0, -4.0, 4.0).unwrap()
    }

    #[test]
    fn same_cell_same_value() {
        let noise = make_noise(1, lattice()).unwrap();
        let c = NoiseCell::diamond(2, 1).unwrap();
        assert_eq!(noise.cell_increment(c).unwrap(), noise.cell_increment(c).unwrap());
        let other = make_noise(2, lattice()).unwrap();
        assert_ne!(noise.cell_increment(c).unwrap(), other.cell_increment(c).unwrap());
    }

    #[test]
    fn increments_scale_with_cell_area() {
        let noise = make_noise(7, lattice()).unwrap();
        let tri = NoiseCell::base_triangle(1).unwrap();
        assert_eq!(noise.cell_increment(tri).unwrap(), 0.5 * noise.unit(tri));
        let dia = NoiseCell::diamond(1, 0).unwrap();
        assert_eq!(noise.cell_increment(dia).unwrap(), 0.5f64.sqrt() * noise.unit(dia));
    }

    #[test]
    fn outside_cells_rejected() {
        let noise = make_noise(7, lattice()).unwrap();
        assert!(matches!(noise.cell_increment(NoiseCell::diamond(5, 8).unwrap()), Err(Error::Domain(_))));
        assert!(matches!(noise.cell_increment(NoiseCell::diamond(6, 1).unwrap()), Err(Error::Domain(_))));
    }

    #[test]
    fn region_integral_rules() {
        let noise = make_noise(3, lattice()).unwrap();
        assert_eq!(noise.region_integral(&[]).unwrap(), 0.0);
        let a = NoiseCell::diamond(1, 0).unwrap();
        let b = NoiseCell::diamond(2, 1).unwrap();
        assert!(matches!(noise.region_integral(&[a, b, a]), Err(Error::Precondition(_))));
        let sum = noise.region_integral(&[a, b]).unwrap();
        let parts = noise.region_integral(&[a]).unwrap() + noise.region_integral(&[b]).unwrap();
        assert!((sum - parts).abs() < 1e-15);
    }

    #[test]
    fn cone_variance_sums_to_t_squared() {
        let l = lattice();
        let apex = LatticePoint::new(4, 0);
        let var: f64 = cone_cells(apex).map(|c| c.area(l.h())).sum();
        assert!((var - 4.0).abs() < 1e-12);
        assert!(cone_cells(apex).all(|c| l.contains_cell(c)));
    }

    #[test]
    fn render_independent_of_worker_count() {
        let noise = make_noise(11, LatticeSpec::new(0.125, 2.0, -3.0, 3.0).unwrap()).unwrap();
        let one = noise.render(Some(1)).unwrap();
        let four = noise.render(Some(4)).unwrap();
        assert_eq!(one.len(), noise.lattice().n_cells());
        assert!(one.iter().zip(&four).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn dump_has_header_and_payload() {
        let noise = make_noise(5, lattice()).unwrap();
        let mut buf = Vec::new();
        noise.write_dump(&mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 8 * noise.lattice().n_cells());
        assert_eq!(&buf[..8], NOISE_MAGIC);
        let first = f64::from_le_bytes(buf[32..40].try_into().unwrap());
        let c = noise.lattice().cells().next().unwrap();
        assert_eq!(first, noise.increment_unchecked(c));
    }
}

//! Explicit finite-difference solver for `∂_t v = ∂²_x v + σ(v)ξ`, `v(0) ≡ 1`,
//! on a periodic circle.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::lattice_index;
use crate::noise::{unit_normal, HEAT_STREAM};
use crate::sigma::SigmaSpec;
use crate::snapshot::{GridHeader, HEAT_FIELD_MAGIC};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatGridSpec {
    dx: f64,
    dt: f64,
    n_cells: usize,
    n_steps: usize,
}

impl HeatGridSpec {
    pub fn new(dx: f64, dt: f64, length: f64, t_max: f64) -> Result<Self> {
        if !(dx > 0.0 && dt > 0.0) {
            return Err(Error::Config(format!("steps must be positive (dx={dx}, dt={dt})")));
        }
        if dt > dx * dx / 2.0 * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "explicit scheme unstable: dt = {dt} > dx²/2 = {}",
                dx * dx / 2.0
            )));
        }
        let n_cells = lattice_index(length, dx)
            .filter(|&k| k >= 3)
            .ok_or_else(|| Error::Config(format!("L/dx = {} must be an integer ≥ 3", length / dx)))?;
        let n_steps = lattice_index(t_max, dt)
            .filter(|&k| k >= 1)
            .ok_or_else(|| Error::Config(format!("t_max/dt = {} must be a positive integer", t_max / dt)))?;
        Ok(Self { dx, dt, n_cells: n_cells as usize, n_steps: n_steps as usize })
    }

    /// Grid with the default time step `dt = dx²/4`.
    pub fn with_default_dt(dx: f64, length: f64, t_max: f64) -> Result<Self> {
        Self::new(dx, dx * dx / 4.0, length, t_max)
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn length(&self) -> f64 {
        self.n_cells as f64 * self.dx
    }

    pub fn t_max(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    /// Whether the circle is long enough (`L ≥ 16·√t_max`) for the
    /// periodization of the heat kernel to be negligible.
    pub fn periodization_ok(&self) -> bool {
        self.length() >= 16.0 * self.t_max().sqrt()
    }

    pub fn time_index(&self, t: f64) -> Result<usize> {
        match lattice_index(t, self.dt) {
            Some(n) if n >= 0 && n as usize <= self.n_steps => Ok(n as usize),
            Some(_) => Err(Error::Domain(format!("time {t} outside [0, {}]", self.t_max()))),
            None => Err(Error::Alignment(format!("time {t} is not a multiple of dt = {}", self.dt))),
        }
    }

    /// Grid column of `x`, wrapped onto the circle.
    pub fn space_index(&self, x: f64) -> Result<usize> {
        lattice_index(x, self.dx)
            .map(|j| j.rem_euclid(self.n_cells as i64) as usize)
            .ok_or_else(|| Error::Alignment(format!("position {x} is not a multiple of dx = {}", self.dx)))
    }
}

#[derive(Debug, Clone)]
pub struct HeatField {
    grid: HeatGridSpec,
    sigma: SigmaSpec,
    seed: u64,
    values: Vec<f64>,
}

impl HeatField {
    pub fn grid(&self) -> &HeatGridSpec {
        &self.grid
    }

    pub fn sigma(&self) -> SigmaSpec {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, n: usize) -> &[f64] {
        let j = self.grid.n_cells;
        &self.values[n * j..(n + 1) * j]
    }

    /// Value at step `n`, column `j` (taken modulo the circle).
    #[inline]
    pub fn at(&self, n: usize, j: i64) -> f64 {
        let cols = self.grid.n_cells;
        self.values[n * cols + j.rem_euclid(cols as i64) as usize]
    }

    pub fn field_at(&self, t: f64, x: f64) -> Result<f64> {
        let n = self.grid.time_index(t)?;
        let j = self.grid.space_index(x)?;
        Ok(self.values[n * self.grid.n_cells + j])
    }

    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<()> {
        let narrow = |v: usize| {
            i32::try_from(v).map_err(|_| Error::Config(format!("grid size {v} does not fit the header")))
        };
        GridHeader {
            magic: *HEAT_FIELD_MAGIC,
            step: self.grid.dx,
            t_max: self.grid.t_max(),
            lo: narrow(self.grid.n_steps)?,
            hi: narrow(self.grid.n_cells)?,
        }
        .write(&mut out)?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,x,u")?;
        for n in 0..=self.grid.n_steps {
            for (j, v) in self.row(n).iter().enumerate() {
                writeln!(out, "{},{},{}", n as f64 * self.grid.dt, j as f64 * self.grid.dx, v)?;
            }
        }
        Ok(())
    }
}

pub fn solve_heat(sigma: SigmaSpec, seed: u64, grid: HeatGridSpec) -> Result<HeatField> {
    let [v] = solve_fields([sigma], seed, grid)?;
    Ok(v)
}

/// Solves `v` and its linearization `Z` (σ ≡ 1) from the same deviates.
pub fn solve_coupled_heat_linearization(
    sigma: SigmaSpec,
    seed: u64,
    grid: HeatGridSpec,
) -> Result<(HeatField, HeatField)> {
    let [v, z] = solve_fields([sigma, SigmaSpec::ONE], seed, grid)?;
    Ok((v, z))
}

fn solve_fields<const K: usize>(sigmas: [SigmaSpec; K], seed: u64, grid: HeatGridSpec) -> Result<[HeatField; K]> {
    let grid = HeatGridSpec::new(grid.dx, grid.dt, grid.length(), grid.t_max())?;
    let cols = grid.n_cells;
    let r = grid.dt / (grid.dx * grid.dx);
    let scale = (grid.dt / grid.dx).sqrt();
    let mut fields = sigmas.map(|sigma| {
        let mut values = vec![0.0; (grid.n_steps + 1) * cols];
        values[..cols].fill(1.0);
        HeatField { grid, sigma, seed, values }
    });
    let mut z = vec![0.0; cols];
    for n in 0..grid.n_steps {
        for (j, zj) in z.iter_mut().enumerate() {
            *zj = scale * unit_normal(seed, HEAT_STREAM, n as u64, j as u64);
        }
        for f in fields.iter_mut() {
            let (old, new) = f.values[n * cols..(n + 2) * cols].split_at_mut(cols);
            for j in 0..cols {
                let left = old[if j == 0 { cols - 1 } else { j - 1 }];
                let right = old[if j + 1 == cols { 0 } else { j + 1 }];
                let c = old[j];
                new[j] = c + r * (right - 2.0 * c + left) + f.sigma.eval(c) * z[j];
            }
            if !new.iter().sum::<f64>().is_finite() {
                return Err(Error::Numeric { seed, what: format!("non-finite heat value at step {}", n + 1) });
            }
        }
    }
    Ok(fields)
}

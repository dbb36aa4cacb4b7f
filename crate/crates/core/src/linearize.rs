//! Local-linearization defect of spatial increments:
//! `[f(t, x+δ) − f(t, x)] − σ(f(t, x))·[g(t, x+δ) − g(t, x)]`, where `g` solves
//! the same equation with σ ≡ 1 driven by the same noise.

use serde::{Deserialize, Serialize};

use crate::ensemble::run_replicates;
use crate::error::{Error, Result};
use crate::heat::{solve_coupled_heat_linearization, HeatField, HeatGridSpec};
use crate::lattice::{lattice_index, LatticePoint, LatticeSpec};
use crate::noise::make_noise;
use crate::sigma::SigmaSpec;
use crate::stats::{abs_moment, loglog_fit, LineFit};
use crate::wave::{solve_coupled_linearization, WaveField};

/// Linearized increment and defect of one path at one scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectSample {
    pub increment: f64,
    pub defect: f64,
}

fn defect(sigma: SigmaSpec, f0: f64, f1: f64, g0: f64, g1: f64) -> DefectSample {
    let increment = g1 - g0;
    DefectSample { increment, defect: (f1 - f0) - sigma.eval(f0) * increment }
}

/// Per-scale defects of a coupled wave pair at `(t, x)`; `scales` must be even
/// multiples of the lattice step.
pub fn wave_defect(u: &WaveField, y: &WaveField, t: f64, x: f64, scales: &[f64]) -> Result<Vec<DefectSample>> {
    if u.seed() != y.seed() || u.lattice() != y.lattice() || y.sigma() != SigmaSpec::ONE {
        return Err(Error::Precondition(
            "wave fields are not a coupled (solution, linearization) pair on one noise".into(),
        ));
    }
    let lattice = u.lattice();
    let p = lattice.point(t, x)?;
    scales
        .iter()
        .map(|&d| {
            let k = match lattice_index(d, lattice.h()) {
                Some(k) if k > 0 && k % 2 == 0 => k,
                _ => return Err(Error::Alignment(format!("scale {d} is not a positive even multiple of h = {}", lattice.h()))),
            };
            let q = LatticePoint::new(p.n, p.m + k);
            if !lattice.contains_point(q) {
                return Err(Error::Domain(format!("x + {d} is outside the simulated domain at t = {t}")));
            }
            Ok(defect(u.sigma(), u.at(p), u.at(q), y.at(p), y.at(q)))
        })
        .collect()
}

/// Per-scale defects of a coupled heat pair at `(t, x)`; `scales` must be
/// multiples of `dx`.
pub fn heat_defect(v: &HeatField, z: &HeatField, t: f64, x: f64, scales: &[f64]) -> Result<Vec<DefectSample>> {
    if v.seed() != z.seed() || v.grid() != z.grid() || z.sigma() != SigmaSpec::ONE {
        return Err(Error::Precondition(
            "heat fields are not a coupled (solution, linearization) pair on one noise".into(),
        ));
    }
    let grid = v.grid();
    let n = grid.time_index(t)?;
    let j = grid.space_index(x)? as i64;
    scales
        .iter()
        .map(|&d| {
            let k = match lattice_index(d, grid.dx()) {
                Some(k) if k > 0 && (k as usize) < grid.n_cells() => k,
                _ => return Err(Error::Alignment(format!("scale {d} is not a positive multiple of dx = {} below L", grid.dx()))),
            };
            Ok(defect(v.sigma(), v.at(n, j), v.at(n, j + k), z.at(n, j), z.at(n, j + k)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Equation {
    Wave,
    Heat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizationConfig {
    pub equation: Equation,
    pub sigma: SigmaSpec,
    /// Lattice step `h` (wave) or grid step `dx` (heat).
    pub step: f64,
    /// Heat only: time step (default `dx²/4`) and circle length.
    pub dt: Option<f64>,
    pub length: Option<f64>,
    pub t: f64,
    pub x: f64,
    pub scales: Vec<f64>,
    pub replicates: usize,
    pub base_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearizationLevel {
    pub scale: f64,
    /// `‖linearized increment‖₂`.
    pub increment_norm: f64,
    pub defect_norm: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizationReport {
    pub levels: Vec<LinearizationLevel>,
    /// Log-log slope of the ratio against the scale; `None` if the defect
    /// vanishes identically.
    pub ratio_fit: Option<LineFit>,
}

impl LinearizationReport {
    /// Aggregates per-path samples; `samples[i][j]` is path `i` at scale `j`.
    pub fn from_samples(scales: &[f64], samples: &[Vec<DefectSample>]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Degenerate("no paths".into()));
        }
        let levels: Vec<LinearizationLevel> = scales
            .iter()
            .enumerate()
            .map(|(j, &scale)| {
                let inc: Vec<f64> = samples.iter().map(|s| s[j].increment).collect();
                let def: Vec<f64> = samples.iter().map(|s| s[j].defect).collect();
                let increment_norm = abs_moment(&inc, 2.0).sqrt();
                let defect_norm = abs_moment(&def, 2.0).sqrt();
                let ratio = if increment_norm > 0.0 { defect_norm / increment_norm } else { f64::NAN };
                LinearizationLevel { scale, increment_norm, defect_norm, ratio }
            })
            .collect();
        let ratios: Vec<f64> = levels.iter().map(|l| l.ratio).collect();
        let ratio_fit = if scales.len() >= 2 { loglog_fit(scales, &ratios).ok() } else { None };
        Ok(Self { levels, ratio_fit })
    }

    /// Ratio at the smallest scale over ratio at the largest.
    pub fn small_to_large(&self) -> f64 {
        let by_scale = |pick_max: bool| {
            self.levels
                .iter()
                .max_by(|a, b| if pick_max { a.scale.total_cmp(&b.scale) } else { b.scale.total_cmp(&a.scale) })
                .map(|l| l.ratio)
                .unwrap_or(f64::NAN)
        };
        by_scale(false) / by_scale(true)
    }

    pub fn min_ratio(&self) -> f64 {
        self.levels.iter().map(|l| l.ratio).fold(f64::INFINITY, f64::min)
    }
}

pub fn linearization_study(config: &LinearizationConfig, workers: Option<usize>) -> Result<LinearizationReport> {
    LinearizationReport::from_samples(&config.scales, &linearization_samples(config, workers)?)
}

/// Per-path samples of the study, in replicate order.
pub fn linearization_samples(config: &LinearizationConfig, workers: Option<usize>) -> Result<Vec<Vec<DefectSample>>> {
    if config.replicates == 0 || config.scales.is_empty() {
        return Err(Error::Config("need replicates and at least one scale".into()));
    }
    let max_scale = config.scales.iter().cloned().fold(0.0, f64::max);
    match config.equation {
        Equation::Wave => {
            let lattice = LatticeSpec::covering(config.step, config.t, config.x, config.x + max_scale)?;
            run_replicates(config.replicates, config.base_seed, workers, |seed| {
                let (u, y) = solve_coupled_linearization(config.sigma, &make_noise(seed, lattice)?)?;
                wave_defect(&u, &y, config.t, config.x, &config.scales)
            })
        }
        Equation::Heat => {
            let length = config.length.ok_or_else(|| Error::Config("heat study needs a circle length".into()))?;
            let grid = match config.dt {
                Some(dt) => HeatGridSpec::new(config.step, dt, length, config.t)?,
                None => HeatGridSpec::with_default_dt(config.step, length, config.t)?,
            };
            run_replicates(config.replicates, config.base_seed, workers, |seed| {
                let (v, z) = solve_coupled_heat_linearization(config.sigma, seed, grid)?;
                heat_defect(&v, &z, config.t, config.x, &config.scales)
            })
        }
    }
}

//! Small-increment limit theorems at a fixed point `(t, x)`: the mixed
//! Gaussian CLT, the martingale/remainder split of the increment, and an LIL
//! probe with a Brownian control.

use serde::{Deserialize, Serialize};

use crate::ensemble::run_replicates;
use crate::error::{Error, Result};
use crate::lattice::{lattice_index, shell_cells, LatticePoint, LatticeSpec};
use crate::noise::{make_noise, unit_normal, NoiseRealization, BROWNIAN_STREAM};
use crate::sigma::SigmaSpec;
use crate::stats::{abs_moment, ks_critical_5pct, ks_statistic, loglog_fit, normal_cdf, quantile, LineFit, Summary};
use crate::wave::{check_same_noise, solve_wave, WaveField};

/// `V̂ = ∫_{x−t}^{x+t} σ(u(t − |x − y|, y))² dy`, trapezoid rule with step `h`
/// along the backward characteristics.
pub fn conditional_variance(field: &WaveField, t: f64, x: f64) -> Result<f64> {
    let apex = field.lattice().point(t, x)?;
    Ok(trace_integral(field, apex))
}

fn trace_integral(field: &WaveField, apex: LatticePoint) -> f64 {
    let h = field.lattice().h();
    let sigma = field.sigma();
    let last = apex.n as usize * 2;
    field
        .trace_points(apex)
        .enumerate()
        .map(|(k, p)| {
            let w = if k == 0 || k == last { 0.5 * h } else { h };
            w * sigma.eval(field.at(p)).powi(2)
        })
        .sum()
}

/// Number of lattice levels in a lag, which must be a positive even multiple of `h`.
fn lag_levels(eps: f64, h: f64) -> Result<u32> {
    match lattice_index(eps, h) {
        Some(k) if k >= 2 && k % 2 == 0 => Ok(k as u32),
        Some(k) if k < 2 => Err(Error::Config(format!("lag {eps} is below the lattice resolution 2h = {}", 2.0 * h))),
        _ => {
            let k = (eps / h / 2.0).round().max(1.0) * 2.0;
            Err(Error::Alignment(format!("lag {eps} is not an even multiple of h = {h}; nearest admissible {}", k * h)))
        }
    }
}

fn reject_zero_sigma(sigma: SigmaSpec) -> Result<()> {
    if sigma.constant_value() == Some(0.0) {
        return Err(Error::Degenerate("σ ≡ 0: the increments vanish and cannot be standardized".into()));
    }
    Ok(())
}

/// One replicate's increments at every lag of a ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementSample {
    pub seed: u64,
    /// `u(t + ε, x) − u(t, x)` per lag.
    pub increments: Vec<f64>,
    /// `V̂` at `(t, x)`.
    pub conditional_variance: f64,
    /// Standardized increments per lag.
    pub residuals: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Standardization {
    /// Divide by `√(ε·V̂)`.
    Conditional,
    /// Constant σ only: divide by `|σ|·√(shell area)`, which makes the
    /// residual exactly standard normal.
    ExactShell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltConfig {
    pub sigma: SigmaSpec,
    pub h: f64,
    pub t: f64,
    pub x: f64,
    pub lags: Vec<f64>,
    pub replicates: usize,
    pub base_seed: u64,
    pub standardization: Standardization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltLevel {
    pub lag: f64,
    pub ks: f64,
    pub ks_critical: f64,
    pub residual: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub config: CltConfig,
    pub levels: Vec<CltLevel>,
    pub samples: Vec<IncrementSample>,
    pub warnings: Vec<String>,
}

impl CltReport {
    /// Whether every lag passes the 5% KS test.
    pub fn ks_passes(&self) -> bool {
        self.levels.iter().all(|l| l.ks < l.ks_critical)
    }
}

fn lattice_for(h: f64, t: f64, x: f64, max_lag: f64) -> Result<LatticeSpec> {
    LatticeSpec::covering(h, t + max_lag, x, x)
}

pub fn clt_harness(config: &CltConfig, workers: Option<usize>) -> Result<CltReport> {
    reject_zero_sigma(config.sigma)?;
    if config.replicates == 0 {
        return Err(Error::Config("replicates must be positive".into()));
    }
    if config.lags.is_empty() {
        return Err(Error::Config("empty lag ladder".into()));
    }
    let levels: Vec<u32> = config.lags.iter().map(|&e| lag_levels(e, config.h)).collect::<Result<_>>()?;
    let max_lag = config.lags.iter().cloned().fold(0.0, f64::max);
    let lattice = lattice_for(config.h, config.t, config.x, max_lag)?;
    let apex = lattice.point(config.t, config.x)?;
    let shell_scale = match (config.standardization, config.sigma.constant_value()) {
        (Standardization::Conditional, _) => None,
        (Standardization::ExactShell, Some(c)) => Some(c.abs()),
        (Standardization::ExactShell, None) => {
            return Err(Error::Config("exact-shell standardization needs a constant σ".into()))
        }
    };

    let samples = run_replicates(config.replicates, config.base_seed, workers, |seed| {
        let field = solve_wave(config.sigma, &make_noise(seed, lattice)?)?;
        let v_hat = trace_integral(&field, apex);
        if !(v_hat > 0.0) {
            return Err(Error::Degenerate(format!("V̂ = {v_hat} for seed {seed}; standardization undefined")));
        }
        let u0 = field.at(apex);
        let mut increments = Vec::with_capacity(levels.len());
        let mut residuals = Vec::with_capacity(levels.len());
        for (&k, &eps) in levels.iter().zip(&config.lags) {
            let d = field.at(LatticePoint::new(apex.n + k, apex.m)) - u0;
            let scale = match shell_scale {
                None => (eps * v_hat).sqrt(),
                Some(c) => {
                    let (a, b) = (apex.n as f64 * config.h, (apex.n + k) as f64 * config.h);
                    c * (b * b - a * a).sqrt()
                }
            };
            increments.push(d);
            residuals.push(d / scale);
        }
        Ok(IncrementSample { seed, increments, conditional_variance: v_hat, residuals })
    })?;

    let mut warnings = Vec::new();
    if config.replicates < 500 {
        warnings.push(format!("only {} replicates (< 500): the KS test has little power", config.replicates));
    }
    let levels = config
        .lags
        .iter()
        .enumerate()
        .map(|(j, &lag)| {
            let r: Vec<f64> = samples.iter().map(|s| s.residuals[j]).collect();
            Ok(CltLevel {
                lag,
                ks: ks_statistic(&r, normal_cdf)?,
                ks_critical: ks_critical_5pct(r.len()),
                residual: Summary::of(&r)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(CltReport { config: config.clone(), levels, samples, warnings })
}

/// `M` and `R` of one path at each lag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleProbe {
    pub lags: Vec<f64>,
    /// Weighted noise over the truncated shell `Q̃(t, t + ε, x)`.
    pub martingale: Vec<f64>,
    /// `u(t + ε, x) − u(t, x) − M_ε`.
    pub remainder: Vec<f64>,
}

/// Splits `u(t + ε, x) − u(t, x)` into `M_ε`, the noise of the shell cells in
/// columns `|y − x| ≤ t` weighted by `σ(u(max(t − |x − y|, 0), y))`, and the
/// remainder. A zero lag gives `M = R = 0`.
pub fn martingale_decomposition(
    field: &WaveField,
    noise: &NoiseRealization,
    t: f64,
    x: f64,
    lags: &[f64],
) -> Result<MartingaleProbe> {
    check_same_noise(field, noise)?;
    let lattice = field.lattice();
    let apex = lattice.point(t, x)?;
    let big_t = apex.n as i64;
    let sigma = field.sigma();
    let u0 = field.at(apex);
    let mut martingale = Vec::with_capacity(lags.len());
    let mut remainder = Vec::with_capacity(lags.len());
    for &eps in lags {
        if eps == 0.0 {
            martingale.push(0.0);
            remainder.push(0.0);
            continue;
        }
        let k = lag_levels(eps, lattice.h())?;
        let top = lattice.point(t + eps, x)?;
        let m: f64 = shell_cells(apex.m, apex.n, apex.n + k)
            .filter(|c| (c.m - apex.m).abs() <= big_t)
            .map(|c| {
                let r = (big_t - (c.m - apex.m).abs()) as u32;
                sigma.eval(field.at_or_initial(r, c.m)) * noise.increment_unchecked(c)
            })
            .sum();
        martingale.push(m);
        remainder.push(field.at(top) - u0 - m);
    }
    Ok(MartingaleProbe { lags: lags.to_vec(), martingale, remainder })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleConfig {
    pub sigma: SigmaSpec,
    pub h: f64,
    pub t: f64,
    pub x: f64,
    pub lags: Vec<f64>,
    pub replicates: usize,
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleLevel {
    pub lag: f64,
    pub martingale: Summary,
    pub martingale_norm: f64,
    pub remainder_norm: f64,
    /// `E[M²] / (ε·E[V̂])`.
    pub bracket_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub config: MartingaleConfig,
    pub levels: Vec<MartingaleLevel>,
    pub conditional_variance: Summary,
    /// Exponent of `‖M_ε‖₂` against `ε`.
    pub martingale_fit: LineFit,
    /// Exponent of `‖R_ε‖₂` against `ε`; `None` when `R` vanishes (constant σ).
    pub remainder_fit: Option<LineFit>,
    pub probes: Vec<MartingaleProbe>,
    pub warnings: Vec<String>,
}

impl MartingaleReport {
    /// Remainder exponent minus martingale exponent.
    pub fn exponent_gap(&self) -> Option<f64> {
        self.remainder_fit.map(|r| r.slope - self.martingale_fit.slope)
    }
}

pub fn martingale_study(config: &MartingaleConfig, workers: Option<usize>) -> Result<MartingaleReport> {
    if config.replicates < 2 {
        return Err(Error::Config("need at least two replicates".into()));
    }
    let lags: Vec<f64> = config.lags.iter().cloned().filter(|&e| e > 0.0).collect();
    if lags.len() < 2 {
        return Err(Error::Config("need at least two positive lags".into()));
    }
    for &e in &lags {
        lag_levels(e, config.h)?;
    }
    let max_lag = lags.iter().cloned().fold(0.0, f64::max);
    let lattice = lattice_for(config.h, config.t, config.x, max_lag)?;
    let apex = lattice.point(config.t, config.x)?;
    let rows = run_replicates(config.replicates, config.base_seed, workers, |seed| {
        let noise = make_noise(seed, lattice)?;
        let field = solve_wave(config.sigma, &noise)?;
        let probe = martingale_decomposition(&field, &noise, config.t, config.x, &lags)?;
        Ok((probe, trace_integral(&field, apex)))
    })?;
    let v: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let v_summary = Summary::of(&v)?;
    let probes: Vec<MartingaleProbe> = rows.into_iter().map(|r| r.0).collect();

    let mut levels = Vec::with_capacity(lags.len());
    for (j, &lag) in lags.iter().enumerate() {
        let m: Vec<f64> = probes.iter().map(|p| p.martingale[j]).collect();
        let r: Vec<f64> = probes.iter().map(|p| p.remainder[j]).collect();
        let m2 = abs_moment(&m, 2.0);
        levels.push(MartingaleLevel {
            lag,
            martingale: Summary::of(&m)?,
            martingale_norm: m2.sqrt(),
            remainder_norm: abs_moment(&r, 2.0).sqrt(),
            bracket_ratio: if v_summary.mean > 0.0 { m2 / (lag * v_summary.mean) } else { f64::NAN },
        });
    }
    let fit = |f: fn(&MartingaleLevel) -> f64| {
        let ys: Vec<f64> = levels.iter().map(f).collect();
        loglog_fit(&lags, &ys)
    };
    let martingale_fit = fit(|l| l.martingale_norm)?;
    let remainder_fit = fit(|l| l.remainder_norm).ok();
    let mut warnings = Vec::new();
    if lags.len() < 4 {
        warnings.push(format!("exponents fitted on {} lags (< 4)", lags.len()));
    }
    Ok(MartingaleReport {
        config: config.clone(),
        levels,
        conditional_variance: v_summary,
        martingale_fit,
        remainder_fit,
        probes,
        warnings,
    })
}

fn lil_scale(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < (-1.0f64).exp()) {
        return Err(Error::Config(format!("lag {eps} must lie in (0, 1/e) for log log(1/ε) > 0")));
    }
    Ok((2.0 * eps * (1.0 / eps).ln().ln()).sqrt())
}

/// `max_ε |u(t + ε, x) − u(t, x)| / (√(2ε log log(1/ε))·√V̂)` over the grid.
pub fn lil_statistic(field: &WaveField, t: f64, x: f64, lags: &[f64]) -> Result<f64> {
    let lattice = field.lattice();
    let apex = lattice.point(t, x)?;
    let v_hat = trace_integral(field, apex);
    if !(v_hat > 0.0) {
        return Err(Error::Degenerate(format!("V̂ = {v_hat}: the statistic is undefined")));
    }
    let u0 = field.at(apex);
    let mut best = 0.0f64;
    for &eps in lags {
        let k = lag_levels(eps, lattice.h())?;
        let scale = lil_scale(eps)?;
        let p = LatticePoint::new(apex.n + k, apex.m);
        if !lattice.contains_point(p) {
            return Err(Error::Domain(format!("lag {eps} reaches past the simulated time")));
        }
        best = best.max((field.at(p) - u0).abs() / (scale * v_hat.sqrt()));
    }
    Ok(best)
}

/// The same statistic for a standard Brownian motion observed at the grid
/// points (exact Gaussian increments between consecutive lags).
pub fn brownian_lil_control(seed: u64, lags: &[f64]) -> Result<f64> {
    let mut sorted = lags.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mut w, mut s, mut best) = (0.0, 0.0, 0.0f64);
    for (k, &eps) in sorted.iter().enumerate() {
        let scale = lil_scale(eps)?;
        w += (eps - s).sqrt() * unit_normal(seed, BROWNIAN_STREAM, k as u64, 0);
        s = eps;
        best = best.max(w.abs() / scale);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LilConfig {
    pub sigma: SigmaSpec,
    pub h: f64,
    pub t: f64,
    pub x: f64,
    pub lags: Vec<f64>,
    pub replicates: usize,
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LilReport {
    pub config: LilConfig,
    pub statistics: Vec<f64>,
    pub control: Vec<f64>,
    pub median: f64,
    /// Quartiles of the statistic.
    pub quartiles: (f64, f64),
    pub control_median: f64,
    pub control_quartiles: (f64, f64),
}

impl LilReport {
    /// Whether the statistic's median lies inside the control's IQR.
    pub fn median_within_control_iqr(&self) -> bool {
        (self.control_quartiles.0..=self.control_quartiles.1).contains(&self.median)
    }
}

pub fn lil_study(config: &LilConfig, workers: Option<usize>) -> Result<LilReport> {
    reject_zero_sigma(config.sigma)?;
    if config.replicates == 0 || config.lags.is_empty() {
        return Err(Error::Config("need replicates and a nonempty lag grid".into()));
    }
    for &e in &config.lags {
        lag_levels(e, config.h)?;
        lil_scale(e)?;
    }
    let max_lag = config.lags.iter().cloned().fold(0.0, f64::max);
    let lattice = lattice_for(config.h, config.t, config.x, max_lag)?;
    let rows = run_replicates(config.replicates, config.base_seed, workers, |seed| {
        let field = solve_wave(config.sigma, &make_noise(seed, lattice)?)?;
        Ok((lil_statistic(&field, config.t, config.x, &config.lags)?, brownian_lil_control(seed, &config.lags)?))
    })?;
    let statistics: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let control: Vec<f64> = rows.iter().map(|r| r.1).collect();
    Ok(LilReport {
        config: config.clone(),
        median: quantile(&statistics, 0.5)?,
        quartiles: (quantile(&statistics, 0.25)?, quantile(&statistics, 0.75)?),
        control_median: quantile(&control, 0.5)?,
        control_quartiles: (quantile(&control, 0.25)?, quantile(&control, 0.75)?),
        statistics,
        control,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(seed: u64, sigma: SigmaSpec) -> (NoiseRealization, WaveField) {
        let l = LatticeSpec::covering(1.0 / 64.0, 1.25, 0.0, 0.0).unwrap();
        let nz = make_noise(seed, l).unwrap();
        let u = solve_wave(sigma, &nz).unwrap();
        (nz, u)
    }

    #[test]
    fn conditional_variance_constant_sigma() {
        let (_, u) = field(1, SigmaSpec::ONE);
        assert!((conditional_variance(&u, 1.0, 0.0).unwrap() - 2.0).abs() < 1e-12);
        let (_, u) = field(1, SigmaSpec::ZERO);
        assert_eq!(conditional_variance(&u, 1.0, 0.0).unwrap(), 0.0);
        let (_, u) = field(1, SigmaSpec::Constant { c: 3.0 });
        assert!((conditional_variance(&u, 0.5, 0.0).unwrap() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn lag_alignment() {
        let h = 1.0 / 64.0;
        assert_eq!(lag_levels(8.0 * h, h).unwrap(), 8);
        assert!(matches!(lag_levels(h, h), Err(Error::Config(_))));
        assert!(matches!(lag_levels(3.0 * h, h), Err(Error::Alignment(_))));
    }

    #[test]
    fn constant_sigma_martingale_is_the_truncated_shell_noise() {
        let (nz, u) = field(5, SigmaSpec::ONE);
        let h = 1.0 / 64.0;
        let lags = [0.0, 2.0 * h, 8.0 * h, 0.25];
        let probe = martingale_decomposition(&u, &nz, 1.0, 0.0, &lags).unwrap();
        assert_eq!((probe.martingale[0], probe.remainder[0]), (0.0, 0.0));
        for (j, &eps) in lags.iter().enumerate().skip(1) {
            let k = (eps / h).round() as u32;
            let cells: Vec<_> = shell_cells(0, 64, 64 + k).filter(|c| c.m.abs() <= 64).collect();
            let xi = nz.region_integral(&cells).unwrap();
            assert!((probe.martingale[j] - xi).abs() < 1e-12);
            // The remainder is the noise of the truncated-away tips.
            let tips: Vec<_> = shell_cells(0, 64, 64 + k).filter(|c| c.m.abs() > 64).collect();
            assert!((probe.remainder[j] - nz.region_integral(&tips).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn truncated_shell_area() {
        // Columns |m| ≤ T include the diamonds straddling |y − x| = t.
        let h = 1.0 / 64.0;
        for k in [2u32, 4, 8, 16] {
            let eps = k as f64 * h;
            let area: f64 = shell_cells(0, 64, 64 + k).filter(|c| c.m.abs() <= 64).map(|c| c.area(h)).sum();
            assert!((area - (2.0 * eps + eps * h)).abs() < 1e-12, "{k}: {area}");
        }
    }

    #[test]
    fn zero_sigma_is_rejected() {
        let config = CltConfig {
            sigma: SigmaSpec::ZERO,
            h: 1.0 / 32.0,
            t: 0.5,
            x: 0.0,
            lags: vec![1.0 / 16.0],
            replicates: 10,
            base_seed: 0,
            standardization: Standardization::Conditional,
        };
        assert!(matches!(clt_harness(&config, None), Err(Error::Degenerate(_))));
        let (_, u) = field(1, SigmaSpec::ZERO);
        assert!(matches!(lil_statistic(&u, 1.0, 0.0, &[0.125]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn exact_shell_residuals_are_standardized() {
        let config = CltConfig {
            sigma: SigmaSpec::Constant { c: 2.0 },
            h: 1.0 / 32.0,
            t: 0.5,
            x: 0.0,
            lags: vec![1.0 / 16.0, 0.125],
            replicates: 200,
            base_seed: 3,
            standardization: Standardization::ExactShell,
        };
        let report = clt_harness(&config, Some(2)).unwrap();
        assert_eq!(report.warnings.len(), 1);
        for l in &report.levels {
            assert!(l.residual.mean.abs() < 4.0 * l.residual.std_err);
            assert!((l.residual.variance - 1.0).abs() < 0.3);
        }
    }

    #[test]
    fn lil_statistic_grows_with_grid() {
        let (_, u) = field(9, SigmaSpec::Sine { a: 1.0 });
        let grid = [0.125, 1.0 / 16.0, 1.0 / 32.0];
        let a = lil_statistic(&u, 1.0, 0.0, &grid[..2]).unwrap();
        let b = lil_statistic(&u, 1.0, 0.0, &grid).unwrap();
        assert!(b >= a);
        assert!(matches!(lil_statistic(&u, 1.0, 0.0, &[1.0 / 64.0]), Err(Error::Config(_))));
        assert!(matches!(lil_statistic(&u, 1.0, 0.0, &[0.5]), Err(Error::Domain(_) | Error::Config(_))));
    }

    #[test]
    fn brownian_control_is_deterministic() {
        let lags = [0.125, 1.0 / 16.0, 1.0 / 32.0];
        assert_eq!(brownian_lil_control(4, &lags).unwrap(), brownian_lil_control(4, &lags).unwrap());
        assert!(brownian_lil_control(4, &[0.5]).is_err());
    }
}

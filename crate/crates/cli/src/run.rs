//! Executes a validated experiment and assembles its tables and summary.

use std::collections::BTreeMap;

use wavelab_core::ensemble::{replicate_seed, run_replicates};
use wavelab_core::heat::{solve_heat, HeatGridSpec};
use wavelab_core::limits::{clt_harness, lil_study, martingale_study, CltConfig, LilConfig, MartingaleConfig};
use wavelab_core::linearize::{linearization_samples, Equation, LinearizationConfig, LinearizationReport};
use wavelab_core::qv::{qv_convergence_study, QvAxis, QvStudyConfig};
use wavelab_core::stats::{combined_std_err, loglog_fit, Summary};
use wavelab_core::{make_noise, solve_wave, Error, LatticeSpec, Result};

use crate::config::{Axis, EquationChoice, ExperimentKind, ValidatedConfig};
use crate::summary::{EnsembleSummary, SlopeRow, StatRow, Table};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Minimum ladder length for a reported slope.
pub const MIN_SLOPE_POINTS: usize = 4;

/// Everything a run produces, before it is written anywhere.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: EnsembleSummary,
    /// Per-ladder-level table (`levels.csv`).
    pub levels: Table,
    /// Per-replicate table (`replicates.csv`), first columns `replicate, seed`.
    pub replicates: Table,
    /// Extra files: (name, bytes).
    pub artifacts: Vec<(String, Vec<u8>)>,
}

struct Builder {
    statistics: Vec<StatRow>,
    slopes: Vec<SlopeRow>,
    metrics: BTreeMap<String, f64>,
    warnings: Vec<String>,
}

impl Builder {
    fn stat(&mut self, name: &str, xs: &[f64]) -> Result<Summary> {
        let s = Summary::of(xs)?;
        self.statistics.push(StatRow::new(name, &s));
        self.metrics.insert(format!("{name}.mean"), s.mean);
        self.metrics.insert(format!("{name}.std_err"), s.std_err);
        Ok(s)
    }

    fn slope(&mut self, name: &str, xs: &[f64], ys: &[f64]) {
        if xs.len() < MIN_SLOPE_POINTS {
            return;
        }
        match loglog_fit(xs, ys) {
            Ok(fit) => {
                self.slopes.push(SlopeRow::new(name, &fit));
                self.metrics.insert(format!("{name}.slope"), fit.slope);
            }
            Err(e) => self.warnings.push(format!("no slope for {name}: {e}")),
        }
    }

    fn metric(&mut self, name: &str, v: f64) {
        self.metrics.insert(name.into(), v);
    }
}

fn replicate_table(columns: &[String], base_seed: u64, rows: impl IntoIterator<Item = Vec<f64>>) -> Table {
    let mut t = Table::new(["replicate".to_string(), "seed".to_string()].into_iter().chain(columns.iter().cloned()));
    for (i, row) in rows.into_iter().enumerate() {
        let mut full = vec![i.to_string(), replicate_seed(base_seed, i).to_string()];
        full.extend(row.iter().map(|v| v.to_string()));
        t.push_text(full);
    }
    t
}

/// Runs the experiment with `workers` threads (`None`: the config's value, or all cores).
pub fn run(validated: &ValidatedConfig) -> Result<RunOutput> {
    let cfg = &validated.config;
    let mut b = Builder {
        statistics: Vec::new(),
        slopes: Vec::new(),
        metrics: BTreeMap::new(),
        warnings: validated.warnings.clone(),
    };
    let (levels, replicates, artifacts) = match cfg.experiment {
        ExperimentKind::Simulate => simulate(validated, &mut b)?,
        ExperimentKind::QvTime | ExperimentKind::QvSpace | ExperimentKind::Ladder => qv(validated, &mut b)?,
        ExperimentKind::Clt => clt(validated, &mut b)?,
        ExperimentKind::Lil => lil(validated, &mut b)?,
        ExperimentKind::Mart => mart(validated, &mut b)?,
        ExperimentKind::Linearize => linearize(validated, &mut b)?,
    };
    let mut summary = EnsembleSummary {
        experiment: cfg.experiment.name().into(),
        version: VERSION.into(),
        config: cfg.clone(),
        statistics: b.statistics,
        slopes: b.slopes,
        metrics: b.metrics,
        checks: Vec::new(),
        warnings: b.warnings,
        passed: None,
    };
    summary.evaluate(&cfg.acceptance.checks);
    Ok(RunOutput { summary, levels, replicates, artifacts })
}

type Tables = (Table, Table, Vec<(String, Vec<u8>)>);

fn lattice_section(v: &ValidatedConfig) -> Result<&crate::config::LatticeSection> {
    v.config.lattice.as_ref().ok_or_else(|| Error::Config("missing [lattice] section".into()))
}

/// Binary and CSV renderings of one field.
type Snapshot = (Vec<u8>, Vec<u8>);

fn simulate(v: &ValidatedConfig, b: &mut Builder) -> Result<Tables> {
    let cfg = &v.config;
    let snapshots = cfg.ladder.snapshots.min(cfg.replicates);
    let rows: Vec<(f64, Option<Snapshot>)> = if cfg.equation == EquationChoice::Heat {
        let hs = cfg.heat.as_ref().ok_or_else(|| Error::Config("missing [heat] section".into()))?;
        let grid = HeatGridSpec::new(hs.dx, hs.dt(), hs.length, hs.t)?;
        run_replicates(cfg.replicates, cfg.seed, cfg.workers, |seed| {
            let f = solve_heat(cfg.sigma, seed, grid)?;
            let snap = if seed < cfg.seed + snapshots as u64 {
                let (mut bin, mut csv) = (Vec::new(), Vec::new());
                f.write_snapshot(&mut bin)?;
                f.write_csv(&mut csv)?;
                Some((bin, csv))
            } else {
                None
            };
            Ok((f.field_at(hs.t, hs.x)?, snap))
        })?
    } else {
        let l = lattice_section(v)?;
        let lattice = LatticeSpec::covering(l.h, l.t, l.x, l.x)?;
        run_replicates(cfg.replicates, cfg.seed, cfg.workers, |seed| {
            let f = solve_wave(cfg.sigma, &make_noise(seed, lattice)?)?;
            let snap = if seed < cfg.seed + snapshots as u64 {
                let (mut bin, mut csv) = (Vec::new(), Vec::new());
                f.write_snapshot(&mut bin)?;
                f.write_csv(&mut csv)?;
                Some((bin, csv))
            } else {
                None
            };
            Ok((f.field_at(l.t, l.x)?, snap))
        })?
    };
    let u: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let u2: Vec<f64> = u.iter().map(|x| x * x).collect();
    b.stat("u", &u)?;
    b.stat("u_squared", &u2)?;
    let mut artifacts = Vec::new();
    for (i, r) in rows.into_iter().enumerate() {
        if let Some((bin, csv)) = r.1 {
            let seed = replicate_seed(cfg.seed, i);
            artifacts.push((format!("field_{seed}.bin"), bin));
            artifacts.push((format!("field_{seed}.csv"), csv));
        }
    }
    let mut levels = Table::new(["mean_u", "var_u", "mean_u_squared"]);
    levels.push(vec![b.statistics[0].mean, b.statistics[0].variance, b.statistics[1].mean]);
    let replicates = replicate_table(&["u".to_string()], cfg.seed, u.iter().map(|&x| vec![x]));
    Ok((levels, replicates, artifacts))
}

fn qv(v: &ValidatedConfig, b: &mut Builder) -> Result<Tables> {
    let cfg = &v.config;
    let l = lattice_section(v)?;
    let spatial = cfg.experiment == ExperimentKind::QvSpace
        || (cfg.experiment == ExperimentKind::Ladder && cfg.ladder.axis == Axis::Spatial);
    let axis = if spatial {
        QvAxis::Spatial { t: l.t, x1: l.x1.unwrap_or_default(), x2: l.x2.unwrap_or_default() }
    } else {
        QvAxis::Temporal { t: l.t, x: l.x }
    };
    let with_ladder = cfg.experiment == ExperimentKind::Ladder;
    let study = QvStudyConfig {
        sigma: cfg.sigma,
        h: l.h,
        axis,
        n_ladder: cfg.ladder.partitions.clone(),
        p_values: cfg.ladder.moments.clone(),
        replicates: cfg.replicates,
        base_seed: cfg.seed,
        ladder: with_ladder,
    };
    let report = qv_convergence_study(&study, cfg.workers)?;
    b.warnings.extend(report.warnings.iter().cloned());

    let limits: Vec<f64> = report.replicates.iter().map(|r| r.limit).collect();
    let limit = b.stat("limit", &limits)?;
    let naive = if spatial {
        let xs: Vec<f64> = report.replicates.iter().filter_map(|r| r.naive).collect();
        Some(b.stat("naive", &xs)?)
    } else {
        None
    };
    let mut header: Vec<String> = vec!["n".into(), "mean".into(), "std_err".into()];
    header.extend(cfg.ladder.moments.iter().map(|p| format!("gap_moment_p{p}")));
    if with_ladder {
        header.extend(["rms_a_minus_b", "ms_b_minus_c", "rms_c_minus_d"].map(String::from));
    }
    let mut levels = Table::new(header);
    for (k, lvl) in report.levels.iter().enumerate() {
        let est: Vec<f64> = report.replicates.iter().map(|r| r.estimates[k]).collect();
        let name = format!("estimate_n{}", lvl.n);
        let s = b.stat(&name, &est)?;
        b.metric(&format!("{name}.gap_se_vs_limit"), (s.mean - limit.mean).abs() / combined_std_err(&s, &limit));
        if let Some(nv) = &naive {
            b.metric(&format!("{name}.gap_se_vs_naive"), (s.mean - nv.mean).abs() / combined_std_err(&s, nv));
            b.metric(&format!("{name}.ratio_to_naive"), s.mean / nv.mean);
        }
        let mut row = vec![lvl.n as f64, s.mean, s.std_err];
        row.extend(&lvl.gap_moments);
        if let Some(g) = lvl.ladder_gaps {
            row.extend(g);
        }
        levels.push(row);
    }
    let ns: Vec<f64> = report.levels.iter().map(|l| l.n as f64).collect();
    for (j, p) in cfg.ladder.moments.iter().enumerate() {
        let norms: Vec<f64> = report.levels.iter().map(|l| l.gap_moments[j].powf(1.0 / p)).collect();
        b.slope(&format!("rate_p{p}"), &ns, &norms);
    }
    if with_ladder {
        for (k, name) in ["ladder_ab", "ladder_bc", "ladder_cd"].iter().enumerate() {
            let ys: Vec<f64> = report.levels.iter().map(|l| l.ladder_gaps.unwrap()[k]).collect();
            b.slope(name, &ns, &ys);
        }
    }

    let mut columns = vec!["limit".to_string()];
    if spatial {
        columns.push("naive".into());
    }
    columns.extend(cfg.ladder.partitions.iter().map(|n| format!("estimate_n{n}")));
    let replicates = replicate_table(
        &columns,
        cfg.seed,
        report.replicates.iter().map(|r| {
            let mut row = vec![r.limit];
            row.extend(r.naive);
            row.extend(&r.estimates);
            row
        }),
    );
    Ok((levels, replicates, Vec::new()))
}

fn clt(v: &ValidatedConfig, b: &mut Builder) -> Result<Tables> {
    let cfg = &v.config;
    let l = lattice_section(v)?;
    let study = CltConfig {
        sigma: cfg.sigma,
        h: l.h,
        t: l.t,
        x: l.x,
        lags: cfg.ladder.lags.clone(),
        replicates: cfg.replicates,
        base_seed: cfg.seed,
        standardization: cfg.ladder.standardization,
    };
    let report = clt_harness(&study, cfg.workers)?;
    b.warnings.extend(report.warnings.iter().cloned());
    let vhat: Vec<f64> = report.samples.iter().map(|s| s.conditional_variance).collect();
    b.stat("conditional_variance", &vhat)?;
    let mut levels = Table::new(["lag", "ks", "ks_critical", "residual_mean", "residual_variance"]);
    for lvl in &report.levels {
        levels.push(vec![lvl.lag, lvl.ks, lvl.ks_critical, lvl.residual.mean, lvl.residual.variance]);
    }
    let smallest = report.levels.iter().min_by(|a, b| a.lag.total_cmp(&b.lag)).expect("nonempty ladder");
    b.metric("ks_smallest_lag", smallest.ks);
    b.metric("ks_critical", smallest.ks_critical);
    b.metric("ks_max", report.levels.iter().map(|l| l.ks).fold(0.0, f64::max));
    b.metric("ks_pass", if report.ks_passes() { 1.0 } else { 0.0 });

    let mut columns = vec!["conditional_variance".to_string()];
    columns.extend(cfg.ladder.lags.iter().map(|e| format!("increment_{e}")));
    columns.extend(cfg.ladder.lags.iter().map(|e| format!("residual_{e}")));
    let replicates = replicate_table(
        &columns,
        cfg.seed,
        report.samples.iter().map(|s| {
            let mut row = vec![s.conditional_variance];
            row.extend(&s.increments);
            row.extend(&s.residuals);
            row
        }),
    );
    Ok((levels, replicates, Vec::new()))
}

fn lil(v: &ValidatedConfig, b: &mut Builder) -> Result<Tables> {
    let cfg = &v.config;
    let l = lattice_section(v)?;
    let study = LilConfig {
        sigma: cfg.sigma,
        h: l.h,
        t: l.t,
        x: l.x,
        lags: cfg.ladder.lags.clone(),
        replicates: cfg.replicates,
        base_seed: cfg.seed,
    };
    let r = lil_study(&study, cfg.workers)?;
    b.stat("statistic", &r.statistics)?;
    b.stat("control", &r.control)?;
    for (name, value) in [
        ("median", r.median),
        ("q1", r.quartiles.0),
        ("q3", r.quartiles.1),
        ("control_median", r.control_median),
        ("control_q1", r.control_quartiles.0),
        ("control_q3", r.control_quartiles.1),
        ("median_in_control_iqr", if r.median_within_control_iqr() { 1.0 } else { 0.0 }),
    ] {
        b.metric(name, value);
    }
    let mut levels = Table::new(["q1", "median", "q3", "control_q1", "control_median", "control_q3"]);
    levels.push(vec![r.quartiles.0, r.median, r.quartiles.1, r.control_quartiles.0, r.control_median, r.control_quartiles.1]);
    let replicates = replicate_table(
        &["statistic".to_string(), "control".to_string()],
        cfg.seed,
        r.statistics.iter().zip(&r.control).map(|(&s, &c)| vec![s, c]),
    );
    Ok((levels, replicates, Vec::new()))
}

fn mart(v: &ValidatedConfig, b: &mut Builder) -> Result<Tables> {
    let cfg = &v.config;
    let l = lattice_section(v)?;
    let study = MartingaleConfig {
        sigma: cfg.sigma,
        h: l.h,
        t: l.t,
        x: l.x,
        lags: cfg.ladder.lags.clone(),
        replicates: cfg.replicates,
        base_seed: cfg.seed,
    };
    let r = martingale_study(&study, cfg.workers)?;
    b.warnings.extend(r.warnings.iter().cloned());
    b.statistics.push(StatRow::new("conditional_variance", &r.conditional_variance));
    let mut levels = Table::new([
        "lag",
        "martingale_mean",
        "martingale_std_err",
        "martingale_norm",
        "remainder_norm",
        "bracket_ratio",
    ]);
    let mut worst_z: f64 = 0.0;
    for lvl in &r.levels {
        levels.push(vec![
            lvl.lag,
            lvl.martingale.mean,
            lvl.martingale.std_err,
            lvl.martingale_norm,
            lvl.remainder_norm,
            lvl.bracket_ratio,
        ]);
        if lvl.martingale.std_err > 0.0 {
            worst_z = worst_z.max(lvl.martingale.z_score(0.0));
        }
    }
    let lags: Vec<f64> = r.levels.iter().map(|l| l.lag).collect();
    let mn: Vec<f64> = r.levels.iter().map(|l| l.martingale_norm).collect();
    let rn: Vec<f64> = r.levels.iter().map(|l| l.remainder_norm).collect();
    b.slope("martingale_exponent", &lags, &mn);
    b.slope("remainder_exponent", &lags, &rn);
    if let (Some(m), Some(rr)) = (b.metrics.get("martingale_exponent.slope"), b.metrics.get("remainder_exponent.slope")) {
        let gap = rr - m;
        b.metric("exponent_gap", gap);
    }
    b.metric("martingale_mean_max_z", worst_z);
    let smallest = r.levels.iter().min_by(|a, b| a.lag.total_cmp(&b.lag)).expect("two lags");
    b.metric("bracket_ratio_smallest_lag", smallest.bracket_ratio);

    let mut columns: Vec<String> = lags.iter().map(|e| format!("martingale_{e}")).collect();
    columns.extend(lags.iter().map(|e| format!("remainder_{e}")));
    let replicates = replicate_table(
        &columns,
        cfg.seed,
        r.probes.iter().map(|p| p.martingale.iter().chain(&p.remainder).copied().collect()),
    );
    Ok((levels, replicates, Vec::new()))
}

fn linearize(v: &ValidatedConfig, b: &mut Builder) -> Result<Tables> {
    let cfg = &v.config;
    let mut studies = Vec::new();
    if cfg.equation != EquationChoice::Heat {
        let l = lattice_section(v)?;
        studies.push(LinearizationConfig {
            equation: Equation::Wave,
            sigma: cfg.sigma,
            step: l.h,
            dt: None,
            length: None,
            t: l.t,
            x: l.x,
            scales: cfg.ladder.lags.clone(),
            replicates: cfg.replicates,
            base_seed: cfg.seed,
        });
    }
    if cfg.equation != EquationChoice::Wave {
        let hs = cfg.heat.as_ref().ok_or_else(|| Error::Config("missing [heat] section".into()))?;
        studies.push(LinearizationConfig {
            equation: Equation::Heat,
            sigma: cfg.sigma,
            step: hs.dx,
            dt: Some(hs.dt()),
            length: Some(hs.length),
            t: hs.t,
            x: hs.x,
            scales: cfg.ladder.heat_lags.clone(),
            replicates: cfg.replicates,
            base_seed: cfg.seed,
        });
    }
    let mut levels = Table::new(["equation", "scale", "increment_norm", "defect_norm", "ratio"]);
    let mut columns = Vec::new();
    let mut per_replicate: Vec<Vec<f64>> = vec![Vec::new(); cfg.replicates];
    for study in &studies {
        let eq = match study.equation {
            Equation::Wave => "wave",
            Equation::Heat => "heat",
        };
        let samples = linearization_samples(study, cfg.workers)?;
        let report = LinearizationReport::from_samples(&study.scales, &samples)?;
        for lvl in &report.levels {
            let mut row = vec![eq.to_string()];
            row.extend([lvl.scale, lvl.increment_norm, lvl.defect_norm, lvl.ratio].iter().map(|v| v.to_string()));
            levels.push_text(row);
        }
        b.metric(&format!("{eq}.small_to_large"), report.small_to_large());
        b.metric(&format!("{eq}.min_ratio"), report.min_ratio());
        let ratios: Vec<f64> = report.levels.iter().map(|l| l.ratio).collect();
        b.slope(&format!("{eq}.ratio"), &study.scales, &ratios);
        for s in &study.scales {
            columns.push(format!("{eq}_increment_{s}"));
            columns.push(format!("{eq}_defect_{s}"));
        }
        for (row, path) in per_replicate.iter_mut().zip(&samples) {
            for d in path {
                row.push(d.increment);
                row.push(d.defect);
            }
        }
    }
    let replicates = replicate_table(&columns, cfg.seed, per_replicate);
    Ok((levels, replicates, Vec::new()))
}

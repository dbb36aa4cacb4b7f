//! Quadratic-variation sums of the wave field, their limit functionals, the
//! naive "locally linear" prediction, and the intermediate sums used to
//! measure convergence rates.
//!
//! All partitions are lattice-exact: partition points are field points and
//! every shell is a union of whole noise cells.

use serde::{Deserialize, Serialize};

use crate::ensemble::run_replicates;
use crate::error::{Error, Result};
use crate::lattice::{cone_cells, LatticePoint, LatticeSpec, NoiseCell};
use crate::noise::{make_noise, NoiseRealization};
use crate::sigma::SigmaSpec;
use crate::stats::{abs_moment, loglog_fit, LineFit, Summary};
use crate::wave::{check_same_noise, solve_wave, WaveField};

/// Interval counts `N` for which `total` lattice steps split into `N` equal
/// pieces of an even number of steps.
pub fn admissible_counts(total: u32) -> Vec<usize> {
    (1..=total as usize).filter(|&n| (total as usize).is_multiple_of(n) && (total as usize / n).is_multiple_of(2)).collect()
}

fn not_admissible(what: &str, n: usize, total: u32) -> Error {
    Error::Alignment(format!(
        "{what} partition with N = {n} is not lattice-aligned (each interval must be an even number of steps); admissible N: {:?}",
        admissible_counts(total)
    ))
}

/// `t_i = (i − 1)t/N`, `i = 1..N+1`, at a fixed column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalPartition {
    apex: LatticePoint,
    intervals: usize,
    step: u32,
}

impl TemporalPartition {
    pub fn new(lattice: &LatticeSpec, t: f64, x: f64, intervals: usize) -> Result<Self> {
        let apex = lattice.point(t, x)?;
        if intervals == 0 || !(apex.n as usize).is_multiple_of(intervals) || !(apex.n as usize / intervals).is_multiple_of(2) {
            return Err(not_admissible("temporal", intervals, apex.n));
        }
        Ok(Self { apex, intervals, step: apex.n / intervals as u32 })
    }

    pub fn apex(&self) -> LatticePoint {
        self.apex
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    /// Level of `t_{i+1}` (0-based `i`), for `i = 0..=N`.
    pub fn level(&self, i: usize) -> u32 {
        i as u32 * self.step
    }

    pub fn times(&self, h: f64) -> Vec<f64> {
        (0..=self.intervals).map(|i| self.level(i) as f64 * h).collect()
    }

    /// The shell between `t_{i+1}` and `t_{i+2}` (0-based `i`).
    pub fn shell(&self, i: usize) -> Shell {
        Shell::Temporal { apex_m: self.apex.m, inner: self.level(i), outer: self.level(i + 1) }
    }
}

/// `x_i = X₁ + (i − 1)(X₂ − X₁)/N`, `i = 1..N+1`, at a fixed time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialPartition {
    level: u32,
    m_left: i64,
    intervals: usize,
    step: i64,
}

impl SpatialPartition {
    pub fn new(lattice: &LatticeSpec, t: f64, x1: f64, x2: f64, intervals: usize) -> Result<Self> {
        if !(x1 < x2) {
            return Err(Error::Config(format!("need X₁ < X₂, got [{x1}, {x2}]")));
        }
        let left = lattice.point(t, x1)?;
        let right = lattice.point(t, x2)?;
        let width = (right.m - left.m) as u32;
        if intervals == 0 || !(width as usize).is_multiple_of(intervals) || !(width as usize / intervals).is_multiple_of(2) {
            return Err(not_admissible("spatial", intervals, width));
        }
        Ok(Self { level: left.n, m_left: left.m, intervals, step: (width as usize / intervals) as i64 })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn column(&self, i: usize) -> i64 {
        self.m_left + i as i64 * self.step
    }

    pub fn points(&self, h: f64) -> Vec<f64> {
        (0..=self.intervals).map(|i| self.column(i) as f64 * h).collect()
    }

    /// `L_i(t) = Q(x_i, t) ∖ Q(x_{i+1}, t)` (0-based `i`).
    pub fn left_shell(&self, i: usize) -> Shell {
        Shell::Left { level: self.level, m: self.column(i), m_next: self.column(i + 1) }
    }

    /// `R_i(t) = Q(x_{i+1}, t) ∖ Q(x_i, t)` (0-based `i`).
    pub fn right_shell(&self, i: usize) -> Shell {
        Shell::Right { level: self.level, m: self.column(i), m_next: self.column(i + 1) }
    }
}

/// Set difference of two lattice cones, with the boundary-time map that
/// freezes the integrand at the shell's lower edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shell {
    /// `Q(x, t_outer) ∖ Q(x, t_inner)`, boundary map `r(y) = max(t_inner − |x − y|, 0)`.
    Temporal { apex_m: i64, inner: u32, outer: u32 },
    /// `L = Q(x_m, t) ∖ Q(x_next, t)`, boundary map `v(y) = max(t + y − x_next, 0)`.
    Left { level: u32, m: i64, m_next: i64 },
    /// `R = Q(x_next, t) ∖ Q(x_m, t)`, boundary map `v(y) = max(t − y + x_m, 0)`.
    Right { level: u32, m: i64, m_next: i64 },
}

impl Shell {
    pub fn contains(&self, c: NoiseCell) -> bool {
        let inside = |apex_n: u32, apex_m: i64| c.cone_level(apex_m) <= apex_n as i64;
        match *self {
            Shell::Temporal { apex_m, inner, outer } => inside(outer, apex_m) && !inside(inner, apex_m),
            Shell::Left { level, m, m_next } => inside(level, m) && !inside(level, m_next),
            Shell::Right { level, m, m_next } => inside(level, m_next) && !inside(level, m),
        }
    }

    /// Cells of the shell in (n, m) order.
    pub fn cells(&self) -> Vec<NoiseCell> {
        let outer = match *self {
            Shell::Temporal { apex_m, outer, .. } => LatticePoint::new(outer, apex_m),
            Shell::Left { level, m, .. } => LatticePoint::new(level, m),
            Shell::Right { level, m_next, .. } => LatticePoint::new(level, m_next),
        };
        cone_cells(outer).filter(|&c| self.contains(c)).collect()
    }

    /// Exact area from triangle geometry.
    pub fn area(&self, h: f64) -> f64 {
        match *self {
            Shell::Temporal { inner, outer, .. } => {
                let (a, b) = (inner as f64 * h, outer as f64 * h);
                b * b - a * a
            }
            Shell::Left { level, m, m_next } | Shell::Right { level, m, m_next } => {
                // Two cones of height t offset by δ overlap in a cone of height t − δ/2.
                let t = level as f64 * h;
                let delta = (m_next - m) as f64 * h;
                let overlap = (t - delta / 2.0).max(0.0);
                t * t - overlap * overlap
            }
        }
    }

    /// Level at which the integrand is frozen for cells in column `m`.
    #[inline]
    pub fn boundary_level(&self, col: i64) -> u32 {
        let v = match *self {
            Shell::Temporal { apex_m, inner, .. } => inner as i64 - (col - apex_m).abs(),
            Shell::Left { level, m_next, .. } => level as i64 + col - m_next,
            Shell::Right { level, m, .. } => level as i64 - col + m,
        };
        v.max(0) as u32
    }
}

/// `Σ (u(t_{i+1}, x) − u(t_i, x))²`.
pub fn temporal_qv(field: &WaveField, part: &TemporalPartition) -> Result<f64> {
    check_point(field, part.apex)?;
    let m = part.apex.m;
    Ok((0..part.intervals)
        .map(|i| {
            let d = field.at(LatticePoint::new(part.level(i + 1), m)) - field.at(LatticePoint::new(part.level(i), m));
            d * d
        })
        .sum())
}

/// `Σ (u(t, x_{i+1}) − u(t, x_i))²`.
pub fn spatial_qv(field: &WaveField, part: &SpatialPartition) -> Result<f64> {
    check_point(field, LatticePoint::new(part.level, part.m_left))?;
    check_point(field, LatticePoint::new(part.level, part.column(part.intervals)))?;
    let n = part.level;
    Ok((0..part.intervals)
        .map(|i| {
            let d = field.at(LatticePoint::new(n, part.column(i + 1))) - field.at(LatticePoint::new(n, part.column(i)));
            d * d
        })
        .sum())
}

fn check_point(field: &WaveField, p: LatticePoint) -> Result<()> {
    if field.lattice().contains_point(p) {
        Ok(())
    } else {
        Err(Error::Domain(format!("partition point ({}, {}) outside the field's trapezoid", p.n, p.m)))
    }
}

/// The temporal limit functional computed two ways.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalLimit {
    /// Trapezoid rule along each column in the characteristic parametrization
    /// `∫ dy ∫_{|x−y|}^{t} σ(u(τ − |x − y|, y))² dτ`.
    pub characteristic: f64,
    /// Sum over the cells of `Q(x, t)` of `area · σ(u(bottom))²`.
    pub cone_cells: f64,
    /// Pathwise bound on `|characteristic − cone_cells|`.
    pub tolerance: f64,
}

impl TemporalLimit {
    pub fn value(&self) -> f64 {
        self.characteristic
    }
}

/// `∫_{Q(x,t)} σ(u(s, y))² ds dy`.
pub fn temporal_qv_limit(field: &WaveField, t: f64, x: f64) -> Result<TemporalLimit> {
    let apex = field.lattice().point(t, x)?;
    let h = field.lattice().h();
    let sigma = field.sigma();
    let f = |n: u32, m: i64| sigma.eval(field.at_or_initial(n, m)).powi(2);
    let big_t = apex.n as i64;

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut characteristic = 0.0;
    for m in apex.m - big_t..=apex.m + big_t {
        let top = (big_t - (m - apex.m).abs()) as u32;
        if top == 0 {
            continue;
        }
        // Nodes: the initial line, then the field points of this column.
        let first = (m.rem_euclid(2)) as u32;
        let mut prev_n = 0u32;
        let mut prev_f = f(0, m);
        lo = lo.min(prev_f);
        hi = hi.max(prev_f);
        let mut column = 0.0;
        let mut n = if first == 0 { 2 } else { 1 };
        while n <= top {
            let fn_ = f(n, m);
            lo = lo.min(fn_);
            hi = hi.max(fn_);
            column += (n - prev_n) as f64 * h * 0.5 * (prev_f + fn_);
            prev_n = n;
            prev_f = fn_;
            n += 2;
        }
        characteristic += h * column;
    }

    let cone_cells_sum = cone_cells(apex)
        .map(|c| {
            let b = c.bottom();
            c.area(h) * f(b.n, b.m)
        })
        .sum();
    let range = if hi >= lo { hi - lo } else { 0.0 };
    Ok(TemporalLimit {
        characteristic,
        cone_cells: cone_cells_sum,
        tolerance: h * (2.0 * t + h) * range + 1e-12 * characteristic.abs().max(1.0),
    })
}

fn segment_columns(field: &WaveField, t: f64, x1: f64, x2: f64) -> Result<(u32, i64, i64)> {
    if !(x1 < x2) {
        return Err(Error::Config(format!("need X₁ < X₂, got [{x1}, {x2}]")));
    }
    let a = field.lattice().point(t, x1)?;
    let b = field.lattice().point(t, x2)?;
    Ok((a.n, a.m, b.m))
}

/// Trapezoid weights over columns `m1, m1+2, …, m2`.
fn segment_weights(m1: i64, m2: i64, h: f64) -> impl Iterator<Item = (i64, f64)> {
    (m1..=m2).step_by(2).map(move |m| (m, if m == m1 || m == m2 { h } else { 2.0 * h }))
}

/// `D(t) = ∫_{X₁}^{X₂} ∫_0^t σ(u(s, x − t + s))² + σ(u(s, x + t − s))² ds dx`.
pub fn spatial_qv_limit(field: &WaveField, t: f64, x1: f64, x2: f64) -> Result<f64> {
    let (level, m1, m2) = segment_columns(field, t, x1, x2)?;
    let h = field.lattice().h();
    let sigma = field.sigma();
    let big_t = level as i64;
    let f = |n: u32, m: i64| sigma.eval(field.at_or_initial(n, m)).powi(2);
    Ok(segment_weights(m1, m2, h)
        .map(|(m, wx)| {
            let inner: f64 = (0..=level)
                .map(|n| {
                    let ws = if n == 0 || n == level { 0.5 * h } else { h };
                    let back = big_t - n as i64;
                    ws * (f(n, m - back) + f(n, m + back))
                })
                .sum();
            wx * inner
        })
        .sum())
}

/// `2t ∫_{X₁}^{X₂} σ(u(t, x))² dx`, the quadratic variation a locally linear
/// field would have.
pub fn naive_qv_prediction(field: &WaveField, t: f64, x1: f64, x2: f64) -> Result<f64> {
    let (level, m1, m2) = segment_columns(field, t, x1, x2)?;
    let h = field.lattice().h();
    let sigma = field.sigma();
    let integral: f64 = segment_weights(m1, m2, h)
        .map(|(m, w)| w * sigma.eval(field.at(LatticePoint::new(level, m))).powi(2))
        .sum();
    Ok(2.0 * t * integral)
}

/// The chain `A_N → B_N → C_N → D` connecting the quadratic variation to its
/// limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProofLadder {
    /// Quadratic-variation sum.
    pub a: f64,
    /// Same shells, integrand frozen at the shell's lower boundary.
    pub b: f64,
    /// Compensator of `b`: `Σ ∫_{shell} σ(u(boundary))²`.
    pub c: f64,
    /// Limit functional.
    pub d: f64,
}

/// Temporal ladder. `d` is the cone-cell form of the temporal limit.
pub fn proof_ladder_temporal(
    field: &WaveField,
    noise: &NoiseRealization,
    part: &TemporalPartition,
) -> Result<ProofLadder> {
    check_same_noise(field, noise)?;
    let a = temporal_qv(field, part)?;
    let h = field.lattice().h();
    let sigma = field.sigma();
    let apex = part.apex;
    let step = part.step as i64;
    let mut shell_sums = vec![0.0; part.intervals];
    let mut c = 0.0;
    let mut d = 0.0;
    for cell in cone_cells(apex) {
        let i = ((cell.cone_level(apex.m) - 1) / step) as usize;
        let r = (i as i64 * step - (cell.m - apex.m).abs()).max(0) as u32;
        let w = sigma.eval(field.at_or_initial(r, cell.m));
        let area = cell.area(h);
        let b = cell.bottom();
        let wb = sigma.eval(field.at_or_initial(b.n, b.m));
        shell_sums[i] += w * noise.increment_unchecked(cell);
        c += area * w * w;
        d += area * wb * wb;
    }
    Ok(ProofLadder { a, b: shell_sums.iter().map(|q| q * q).sum(), c, d })
}

/// Spatial ladder over the shells `L_i`, `R_i`. `d` is [`spatial_qv_limit`].
pub fn proof_ladder_spatial(
    field: &WaveField,
    noise: &NoiseRealization,
    part: &SpatialPartition,
) -> Result<ProofLadder> {
    check_same_noise(field, noise)?;
    let h = field.lattice().h();
    let a = spatial_qv(field, part)?;
    let t = part.level as f64 * h;
    let d = spatial_qv_limit(field, t, part.column(0) as f64 * h, part.column(part.intervals) as f64 * h)?;
    let sigma = field.sigma();
    let big_t = part.level as i64;
    let mut b = 0.0;
    let mut c = 0.0;
    for i in 0..part.intervals {
        let (ml, mr) = (part.column(i), part.column(i + 1));
        let mut shell = |s: Shell, lo_of: &dyn Fn(i64) -> i64, hi_of: &dyn Fn(i64) -> i64| -> f64 {
            let mut q = 0.0;
            for n in 0..part.level {
                let half = big_t - 1 - n as i64;
                let (lo, hi) = (lo_of(half), hi_of(half));
                let mut m = lo;
                while m <= hi {
                    let cell = NoiseCell { n, m };
                    let w = sigma.eval(field.at_or_initial(s.boundary_level(m), m));
                    q += w * noise.increment_unchecked(cell);
                    c += cell.area(h) * w * w;
                    m += 2;
                }
            }
            q
        };
        // Row n of L_i: columns of cone(x_i) left of cone(x_{i+1}); R_i mirrors it.
        let left = shell(
            Shell::Left { level: part.level, m: ml, m_next: mr },
            &|half| ml - half,
            &|half| (ml + half).min(mr - half - 2),
        );
        let right = shell(
            Shell::Right { level: part.level, m: ml, m_next: mr },
            &|half| (mr - half).max(ml + half + 2),
            &|half| mr + half,
        );
        b += (right - left).powi(2);
    }
    Ok(ProofLadder { a, b, c, d })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "lowercase")]
pub enum QvAxis {
    Temporal { t: f64, x: f64 },
    Spatial { t: f64, x1: f64, x2: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QvStudyConfig {
    pub sigma: SigmaSpec,
    pub h: f64,
    pub axis: QvAxis,
    pub n_ladder: Vec<usize>,
    pub p_values: Vec<f64>,
    pub replicates: usize,
    pub base_seed: u64,
    /// Also compute the `A/B/C/D` ladder per `N`.
    pub ladder: bool,
}

impl QvStudyConfig {
    pub fn lattice(&self) -> Result<LatticeSpec> {
        match self.axis {
            QvAxis::Temporal { t, x } => LatticeSpec::covering(self.h, t, x, x),
            QvAxis::Spatial { t, x1, x2 } => LatticeSpec::covering(self.h, t, x1, x2),
        }
    }
}

/// Everything measured for one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QvReplicate {
    pub seed: u64,
    /// `A_N` for each `N` of the ladder.
    pub estimates: Vec<f64>,
    pub limit: f64,
    /// Spatial studies only.
    pub naive: Option<f64>,
    pub ladders: Vec<ProofLadder>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QvLevelStats {
    pub n: usize,
    pub estimate: Summary,
    /// `E|A_N − limit|^p`, one entry per requested `p`.
    pub gap_moments: Vec<f64>,
    /// RMS of `A − B`, mean square of `B − C`, RMS of `C − D` (ladder studies).
    pub ladder_gaps: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QvReport {
    pub config: QvStudyConfig,
    pub replicates: Vec<QvReplicate>,
    pub limit: Summary,
    pub naive: Option<Summary>,
    pub levels: Vec<QvLevelStats>,
    /// Log-log slope of the `L^p` norm `(E|A_N − limit|^p)^{1/p}` against `N`, per `p`.
    pub rate_fits: Vec<LineFit>,
    /// Slopes of RMS(A−B), mean-square(B−C), RMS(C−D) against `N`; `None`
    /// for a gap that vanishes identically (e.g. A = B when σ is constant).
    pub ladder_fits: Option<[Option<LineFit>; 3]>,
    pub warnings: Vec<String>,
}

fn replicate(config: &QvStudyConfig, lattice: LatticeSpec, seed: u64) -> Result<QvReplicate> {
    let noise = make_noise(seed, lattice)?;
    let field = solve_wave(config.sigma, &noise)?;
    let mut estimates = Vec::with_capacity(config.n_ladder.len());
    let mut ladders = Vec::new();
    let (limit, naive) = match config.axis {
        QvAxis::Temporal { t, x } => {
            for &n in &config.n_ladder {
                let part = TemporalPartition::new(&lattice, t, x, n)?;
                estimates.push(temporal_qv(&field, &part)?);
                if config.ladder {
                    ladders.push(proof_ladder_temporal(&field, &noise, &part)?);
                }
            }
            (temporal_qv_limit(&field, t, x)?.value(), None)
        }
        QvAxis::Spatial { t, x1, x2 } => {
            for &n in &config.n_ladder {
                let part = SpatialPartition::new(&lattice, t, x1, x2, n)?;
                estimates.push(spatial_qv(&field, &part)?);
                if config.ladder {
                    ladders.push(proof_ladder_spatial(&field, &noise, &part)?);
                }
            }
            (spatial_qv_limit(&field, t, x1, x2)?, Some(naive_qv_prediction(&field, t, x1, x2)?))
        }
    };
    Ok(QvReplicate { seed, estimates, limit, naive, ladders })
}

/// Runs the study with `workers` threads (`None`: ambient pool).
pub fn qv_convergence_study(config: &QvStudyConfig, workers: Option<usize>) -> Result<QvReport> {
    if config.replicates == 0 {
        return Err(Error::Config("replicates must be positive".into()));
    }
    if config.p_values.iter().any(|&p| p < 2.0) {
        return Err(Error::Config("moments below p = 2 are not studied".into()));
    }
    let lattice = config.lattice()?;
    // Fail fast on misaligned ladders before spending any replicates.
    for &n in &config.n_ladder {
        match config.axis {
            QvAxis::Temporal { t, x } => TemporalPartition::new(&lattice, t, x, n).map(|_| ())?,
            QvAxis::Spatial { t, x1, x2 } => SpatialPartition::new(&lattice, t, x1, x2, n).map(|_| ())?,
        }
    }
    let reps = run_replicates(config.replicates, config.base_seed, workers, |seed| {
        replicate(config, lattice, seed)
    })?;

    let mut warnings = Vec::new();
    if config.replicates < 100 {
        warnings.push(format!("only {} replicates (< 100); moments are unreliable", config.replicates));
    }
    let limits: Vec<f64> = reps.iter().map(|r| r.limit).collect();
    let naive = match config.axis {
        QvAxis::Spatial { .. } => {
            let v: Vec<f64> = reps.iter().filter_map(|r| r.naive).collect();
            Some(Summary::of(&v)?)
        }
        QvAxis::Temporal { .. } => None,
    };

    let mut levels = Vec::with_capacity(config.n_ladder.len());
    for (k, &n) in config.n_ladder.iter().enumerate() {
        let est: Vec<f64> = reps.iter().map(|r| r.estimates[k]).collect();
        let gaps: Vec<f64> = reps.iter().map(|r| r.estimates[k] - r.limit).collect();
        let ladder_gaps = config.ladder.then(|| {
            let ab: Vec<f64> = reps.iter().map(|r| r.ladders[k].a - r.ladders[k].b).collect();
            let bc: Vec<f64> = reps.iter().map(|r| r.ladders[k].b - r.ladders[k].c).collect();
            let cd: Vec<f64> = reps.iter().map(|r| r.ladders[k].c - r.ladders[k].d).collect();
            [abs_moment(&ab, 2.0).sqrt(), abs_moment(&bc, 2.0), abs_moment(&cd, 2.0).sqrt()]
        });
        levels.push(QvLevelStats {
            n,
            estimate: Summary::of(&est)?,
            gap_moments: config.p_values.iter().map(|&p| abs_moment(&gaps, p)).collect(),
            ladder_gaps,
        });
    }

    let ns: Vec<f64> = config.n_ladder.iter().map(|&n| n as f64).collect();
    let mut rate_fits = Vec::new();
    let mut ladder_fits = None;
    if ns.len() >= 2 {
        for (j, &p) in config.p_values.iter().enumerate() {
            let norms: Vec<f64> = levels.iter().map(|l| l.gap_moments[j].powf(1.0 / p)).collect();
            rate_fits.push(loglog_fit(&ns, &norms)?);
        }
        if config.ladder {
            let fit = |k: usize| {
                let ys: Vec<f64> = levels.iter().map(|l| l.ladder_gaps.unwrap()[k]).collect();
                loglog_fit(&ns, &ys).ok()
            };
            ladder_fits = Some([fit(0), fit(1), fit(2)]);
        }
        if ns.len() < 4 {
            warnings.push(format!("rate fitted on {} ladder points (< 4)", ns.len()));
        }
    }

    Ok(QvReport {
        config: config.clone(),
        replicates: reps,
        limit: Summary::of(&limits)?,
        naive,
        levels,
        rate_fits,
        ladder_fits,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    fn setup(seed: u64, sigma: SigmaSpec) -> (NoiseRealization, WaveField) {
        let l = LatticeSpec::covering(1.0 / 32.0, 1.0, 0.0, 1.0).unwrap();
        let nz = make_noise(seed, l).unwrap();
        let u = solve_wave(sigma, &nz).unwrap();
        (nz, u)
    }

    #[test]
    fn admissible_n() {
        assert_eq!(admissible_counts(64), vec![1, 2, 4, 8, 16, 32]);
        let l = LatticeSpec::covering(1.0 / 64.0, 1.0, 0.0, 0.0).unwrap();
        assert!(TemporalPartition::new(&l, 1.0, 0.0, 32).is_ok());
        let err = TemporalPartition::new(&l, 1.0, 0.0, 48).unwrap_err();
        assert!(matches!(err, Error::Alignment(_)));
        assert!(err.to_string().contains("[1, 2, 4, 8, 16, 32]"));
    }

    #[test]
    fn zero_sigma_gives_zero_variation() {
        let (_, u) = setup(1, SigmaSpec::ZERO);
        let l = *u.lattice();
        assert_eq!(temporal_qv(&u, &TemporalPartition::new(&l, 1.0, 0.5, 8).unwrap()).unwrap(), 0.0);
        assert_eq!(spatial_qv(&u, &SpatialPartition::new(&l, 1.0, 0.0, 1.0, 8).unwrap()).unwrap(), 0.0);
        assert_eq!(spatial_qv_limit(&u, 1.0, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(naive_qv_prediction(&u, 1.0, 0.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn constant_sigma_limits_are_areas() {
        let (_, u) = setup(2, SigmaSpec::ONE);
        let lim = temporal_qv_limit(&u, 1.0, 0.5).unwrap();
        assert!((lim.characteristic - 1.0).abs() < 1e-12);
        assert!((lim.cone_cells - 1.0).abs() < 1e-12);
        assert!((spatial_qv_limit(&u, 1.0, 0.0, 1.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((naive_qv_prediction(&u, 1.0, 0.0, 1.0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn parametrizations_agree_within_tolerance() {
        for (seed, sigma) in [(3, SigmaSpec::IDENTITY), (4, SigmaSpec::Sine { a: 1.0 }), (5, SigmaSpec::Affine { a: 0.5, b: 1.0 })] {
            let (_, u) = setup(seed, sigma);
            let lim = temporal_qv_limit(&u, 1.0, 0.5).unwrap();
            assert!((lim.characteristic - lim.cone_cells).abs() <= lim.tolerance, "{lim:?}");
        }
    }

    #[test]
    fn constant_sigma_ladder_is_exact() {
        let (nz, u) = setup(6, SigmaSpec::ONE);
        let part = TemporalPartition::new(u.lattice(), 1.0, 0.5, 4).unwrap();
        let ladder = proof_ladder_temporal(&u, &nz, &part).unwrap();
        assert!((ladder.a - ladder.b).abs() < 1e-12);
        assert!((ladder.c - 1.0).abs() < 1e-12);
        assert!((ladder.d - 1.0).abs() < 1e-12);
        // A_N is the sum of squared shell noises.
        let manual: f64 = (0..4)
            .map(|i| nz.region_integral(&part.shell(i).cells()).unwrap().powi(2))
            .sum();
        assert!((manual - ladder.a).abs() < 1e-12);
    }

    #[test]
    fn temporal_shells_partition_the_cone() {
        let l = LatticeSpec::covering(1.0 / 32.0, 1.0, 0.0, 0.0).unwrap();
        let part = TemporalPartition::new(&l, 1.0, 0.0, 8).unwrap();
        let mut union = BTreeSet::new();
        let mut area = 0.0;
        for i in 0..8 {
            let shell = part.shell(i);
            let cells = shell.cells();
            let cell_area: f64 = cells.iter().map(|c| c.area(l.h())).sum();
            assert!((cell_area - shell.area(l.h())).abs() < 1e-12);
            area += cell_area;
            for c in cells {
                assert!(union.insert(c), "cell in two shells");
            }
        }
        let cone: BTreeSet<_> = cone_cells(part.apex()).collect();
        assert_eq!(union, cone);
        assert!((area - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spatial_shells_have_exact_areas() {
        let l = LatticeSpec::covering(1.0 / 32.0, 1.0, 0.0, 1.0).unwrap();
        for n in [2, 4, 8, 16] {
            let part = SpatialPartition::new(&l, 1.0, 0.0, 1.0, n).unwrap();
            let delta = 1.0 / n as f64;
            for i in 0..n {
                for shell in [part.left_shell(i), part.right_shell(i)] {
                    let cells: f64 = shell.cells().iter().map(|c| c.area(l.h())).sum();
                    assert!((cells - shell.area(l.h())).abs() < 1e-12);
                    assert!((shell.area(l.h()) - (delta - delta * delta / 4.0)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn spatial_ladder_constant_sigma() {
        let (nz, u) = setup(8, SigmaSpec::ONE);
        let part = SpatialPartition::new(u.lattice(), 1.0, 0.0, 1.0, 8).unwrap();
        let ladder = proof_ladder_spatial(&u, &nz, &part).unwrap();
        assert!((ladder.a - ladder.b).abs() < 1e-12, "{ladder:?}");
        let areas: f64 = (0..8).map(|i| part.left_shell(i).area(u.lattice().h()) * 2.0).sum();
        assert!((ladder.c - areas).abs() < 1e-12);
        assert!((ladder.d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_levels_are_field_points_below_the_shell() {
        let l = LatticeSpec::covering(1.0 / 32.0, 1.0, 0.0, 1.0).unwrap();
        let tp = TemporalPartition::new(&l, 1.0, 0.5, 8).unwrap();
        let sp = SpatialPartition::new(&l, 1.0, 0.0, 1.0, 8).unwrap();
        let shells = (0..8).flat_map(|i| [tp.shell(i), sp.left_shell(i), sp.right_shell(i)]);
        for shell in shells {
            for c in shell.cells() {
                let r = shell.boundary_level(c.m);
                assert!(r == 0 || LatticePoint::new(r, c.m).has_field_parity());
                assert!(r <= c.bottom().n, "{shell:?} {c:?}");
            }
        }
    }

    #[test]
    fn study_reports_all_levels() {
        let config = QvStudyConfig {
            sigma: SigmaSpec::ONE,
            h: 1.0 / 32.0,
            axis: QvAxis::Temporal { t: 1.0, x: 0.0 },
            n_ladder: vec![2, 4, 8, 16],
            p_values: vec![2.0, 4.0],
            replicates: 20,
            base_seed: 1,
            ladder: true,
        };
        let report = qv_convergence_study(&config, Some(1)).unwrap();
        assert_eq!(report.levels.len(), 4);
        assert_eq!(report.rate_fits.len(), 2);
        assert!(!report.warnings.is_empty());
        for l in &report.levels {
            assert!(l.gap_moments.iter().all(|g| g.is_finite() && *g > 0.0));
            assert!(l.gap_moments[1].powf(0.25) >= l.gap_moments[0].sqrt());
        }
        let again = qv_convergence_study(&config, Some(3)).unwrap();
        assert_eq!(report, again);
    }
}

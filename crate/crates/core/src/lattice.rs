//! Space-time geometry of the light-cone lattice.
//!
//! Field points live at `(n·h, m·h)` with `n + m` even and `n ≥ 0`. The
//! simulated domain is a trapezoid: level `n` holds the points with
//! `m_lo + n ≤ m ≤ m_hi − n`. Noise cells have their centers on the odd
//! sublattice: a cell `(n, m)` with `n ≥ 1` is the diamond
//! `|y − mh| + |s − nh| < h`, and a cell `(0, m)` is the base triangle
//! `0 ≤ s ≤ h, |y − mh| ≤ h − s`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ALIGN_TOL: f64 = 1e-9;

/// Returns `value / h` as an integer when it is one (up to rounding noise).
pub fn lattice_index(value: f64, h: f64) -> Option<i64> {
    let r = value / h;
    let k = r.round();
    if (r - k).abs() <= ALIGN_TOL * r.abs().max(1.0) {
        Some(k as i64)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticePoint {
    pub n: u32,
    pub m: i64,
}

impl LatticePoint {
    pub fn new(n: u32, m: i64) -> Self {
        Self { n, m }
    }

    pub fn has_field_parity(&self) -> bool {
        (self.n as i64 + self.m).rem_euclid(2) == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKind {
    Diamond,
    BaseTriangle,
}

/// A carrier of the discrete white noise, addressed by its center `(n, m)`
/// (`n + m` odd). Level 0 cells are base triangles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NoiseCell {
    pub n: u32,
    pub m: i64,
}

impl NoiseCell {
    pub fn diamond(n: u32, m: i64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Precondition("diamond cells start at level 1".into()));
        }
        Self::checked(n, m)
    }

    pub fn base_triangle(m: i64) -> Result<Self> {
        Self::checked(0, m)
    }

    fn checked(n: u32, m: i64) -> Result<Self> {
        if (n as i64 + m).rem_euclid(2) != 1 {
            return Err(Error::Precondition(format!(
                "noise cell ({n}, {m}) must have odd index parity"
            )));
        }
        Ok(Self { n, m })
    }

    pub fn kind(&self) -> CellKind {
        if self.n == 0 {
            CellKind::BaseTriangle
        } else {
            CellKind::Diamond
        }
    }

    pub fn area(&self, h: f64) -> f64 {
        match self.kind() {
            CellKind::Diamond => 2.0 * h * h,
            CellKind::BaseTriangle => h * h,
        }
    }

    /// The lowest point of the cell. For diamonds this is a field point; for
    /// base triangles it lies on the initial line where `u ≡ 1`.
    pub fn bottom(&self) -> LatticePoint {
        LatticePoint::new(self.n.saturating_sub(1), self.m)
    }

    /// Smallest apex level `K` such that this cell lies in the cone with apex
    /// `(K, apex_m)`.
    #[inline]
    pub fn cone_level(&self, apex_m: i64) -> i64 {
        (self.m - apex_m).abs() + self.n as i64 + 1
    }

    pub fn in_cone(&self, apex: LatticePoint) -> bool {
        self.cone_level(apex.m) <= apex.n as i64
    }
}

/// Cells tiling the backward cone with lattice apex `apex`, in (n, m) order.
pub fn cone_cells(apex: LatticePoint) -> impl Iterator<Item = NoiseCell> {
    let big_n = apex.n as i64;
    (0..apex.n).flat_map(move |n| {
        let half = big_n - 1 - n as i64;
        let first = apex.m - half;
        (0..=half).map(move |k| NoiseCell { n, m: first + 2 * k })
    })
}

/// Cells of `Q(inner..outer)`: the cone with apex `(outer, apex_m)` minus the
/// cone with apex `(inner, apex_m)`, in (n, m) order.
pub fn shell_cells(apex_m: i64, inner: u32, outer: u32) -> impl Iterator<Item = NoiseCell> {
    let outer_n = outer.max(inner);
    let (inner, outer) = (inner as i64, outer_n as i64);
    (0..outer_n).flat_map(move |n| {
        let half_out = outer - 1 - n as i64;
        let half_in = inner - 1 - n as i64;
        let cols = move |k: i64| apex_m - half_out + 2 * k;
        (0..=half_out)
            .map(cols)
            .filter(move |&m| (m - apex_m).abs() > half_in)
            .map(move |m| NoiseCell { n, m })
    })
}

/// Continuous backward light cone `Q(x, t) = {(s, y): 0 ≤ s ≤ t, |y − x| ≤ t − s}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeRegion {
    pub t: f64,
    pub x: f64,
}

impl ConeRegion {
    pub fn new(t: f64, x: f64) -> Self {
        Self { t, x }
    }

    pub fn area(&self) -> f64 {
        self.t * self.t
    }

    pub fn contains(&self, s: f64, y: f64) -> bool {
        (0.0..=self.t).contains(&s) && (y - self.x).abs() <= self.t - s
    }

    /// Area of the shell `Q(x, t2) ∖ Q(x, t1)` for `t1 < t2`.
    pub fn shell_area(t1: f64, t2: f64) -> f64 {
        t2 * t2 - t1 * t1
    }
}

/// Discrete space-time domain shared by the noise and the wave solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    h: f64,
    n_max: u32,
    m_lo: i64,
    m_hi: i64,
}

impl LatticeSpec {
    /// Builds a lattice from physical extents. `t_max`, `x_lo` and `x_hi` must
    /// be integer multiples of `h`, with `x_lo/h` and `x_hi/h` even.
    pub fn new(h: f64, t_max: f64, x_lo: f64, x_hi: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("step h must be positive, got {h}")));
        }
        let n_max = lattice_index(t_max, h)
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::Config(format!("t_max/h = {} is not a positive integer", t_max / h)))?;
        let m_lo = lattice_index(x_lo, h)
            .ok_or_else(|| Error::Config(format!("x_base_lo/h = {} is not an integer", x_lo / h)))?;
        let m_hi = lattice_index(x_hi, h)
            .ok_or_else(|| Error::Config(format!("x_base_hi/h = {} is not an integer", x_hi / h)))?;
        Self::from_indices(h, n_max as u32, m_lo, m_hi)
    }

    pub fn from_indices(h: f64, n_max: u32, m_lo: i64, m_hi: i64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("step h must be positive, got {h}")));
        }
        if n_max == 0 {
            return Err(Error::Config("lattice needs at least one time step".into()));
        }
        if m_lo.rem_euclid(2) != 0 || m_hi.rem_euclid(2) != 0 {
            return Err(Error::Config(format!(
                "base endpoints must be even multiples of h, got m_lo={m_lo}, m_hi={m_hi}"
            )));
        }
        if m_hi - m_lo < 2 * n_max as i64 {
            return Err(Error::Config(format!(
                "trapezoid is empty at the top level: base width {} < 2·t_max/h = {}",
                m_hi - m_lo,
                2 * n_max
            )));
        }
        Ok(Self { h, n_max, m_lo, m_hi })
    }

    /// Smallest lattice of step `h` whose trapezoid contains every point of
    /// `[x_lo, x_hi] × [0, t_max]` together with its dependence cone.
    pub fn covering(h: f64, t_max: f64, x_lo: f64, x_hi: f64) -> Result<Self> {
        let n_max = lattice_index(t_max, h)
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::Config(format!("t_max/h = {} is not a positive integer", t_max / h)))?;
        let lo = ((x_lo / h).floor() as i64 - n_max).div_euclid(2) * 2;
        let hi = -((-((x_hi / h).ceil() as i64 + n_max)).div_euclid(2) * 2);
        Self::from_indices(h, n_max as u32, lo, hi)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn m_lo(&self) -> i64 {
        self.m_lo
    }

    pub fn m_hi(&self) -> i64 {
        self.m_hi
    }

    pub fn t_max(&self) -> f64 {
        self.n_max as f64 * self.h
    }

    pub fn x_base(&self) -> (f64, f64) {
        (self.m_lo as f64 * self.h, self.m_hi as f64 * self.h)
    }

    /// First and last field-point column at level `n`.
    #[inline]
    pub fn level_range(&self, n: u32) -> (i64, i64) {
        (self.m_lo + n as i64, self.m_hi - n as i64)
    }

    #[inline]
    pub fn row_len(&self, n: u32) -> usize {
        ((self.m_hi - self.m_lo - 2 * n as i64) / 2 + 1) as usize
    }

    /// Total number of field points in the trapezoid.
    pub fn n_points(&self) -> usize {
        (0..=self.n_max).map(|n| self.row_len(n)).sum()
    }

    pub fn contains_point(&self, p: LatticePoint) -> bool {
        if p.n > self.n_max || !p.has_field_parity() {
            return false;
        }
        let (lo, hi) = self.level_range(p.n);
        (lo..=hi).contains(&p.m)
    }

    pub fn contains_cell(&self, c: NoiseCell) -> bool {
        if c.n >= self.n_max || (c.n as i64 + c.m).rem_euclid(2) != 1 {
            return false;
        }
        // The cell's top vertex must be a retained field point.
        self.contains_point(LatticePoint::new(c.n + 1, c.m))
    }

    /// Whether the whole backward cone of `apex` is simulated.
    pub fn contains_cone(&self, apex: LatticePoint) -> bool {
        self.contains_point(apex)
    }

    /// Number of noise cells in the trapezoid.
    pub fn n_cells(&self) -> usize {
        (0..self.n_max).map(|n| self.row_len(n + 1)).sum()
    }

    /// All cells in (n, m) order.
    pub fn cells(&self) -> impl Iterator<Item = NoiseCell> + '_ {
        (0..self.n_max).flat_map(move |n| {
            let (lo, hi) = self.level_range(n + 1);
            (0..=((hi - lo) / 2)).map(move |k| NoiseCell { n, m: lo + 2 * k })
        })
    }

    pub fn time_index(&self, t: f64) -> Result<u32> {
        match lattice_index(t, self.h) {
            Some(n) if n >= 0 && n <= self.n_max as i64 => Ok(n as u32),
            Some(n) => Err(Error::Domain(format!(
                "time {t} (level {n}) outside [0, {}]",
                self.t_max()
            ))),
            None => Err(Error::Alignment(format!("time {t} is not a multiple of h = {}", self.h))),
        }
    }

    pub fn space_index(&self, x: f64) -> Result<i64> {
        lattice_index(x, self.h)
            .ok_or_else(|| Error::Alignment(format!("position {x} is not a multiple of h = {}", self.h)))
    }

    /// Lattice point at `(t, x)`, checking alignment, parity and membership.
    pub fn point(&self, t: f64, x: f64) -> Result<LatticePoint> {
        let n = lattice_index(t, self.h)
            .ok_or_else(|| Error::Alignment(format!("time {t} is not a multiple of h = {}", self.h)))?;
        let m = self.space_index(x)?;
        if n < 0 {
            return Err(Error::Domain(format!("negative time {t}")));
        }
        let p = LatticePoint::new(n as u32, m);
        if !p.has_field_parity() {
            return Err(Error::Alignment(format!(
                "(t, x) = ({t}, {x}) has odd index parity ({n} + {m}); field points need n + m even"
            )));
        }
        if !self.contains_point(p) {
            return Err(Error::Domain(format!("(t, x) = ({t}, {x}) lies outside the lattice trapezoid")));
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;

    fn lat() -> LatticeSpec {
        LatticeSpec::from_indices(0.5, 6, -10, 10).unwrap()
    }

    #[test]
    fn rejects_non_integral_ratios() {
        assert!(matches!(LatticeSpec::new(0.3, 1.0, 0.0, 3.0), Err(Error::Config(_))));
        assert!(matches!(LatticeSpec::new(0.25, 1.0, 0.1, 3.0), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_empty_trapezoid() {
        assert!(matches!(LatticeSpec::new(0.25, 1.0, 0.0, 1.5), Err(Error::Config(_))));
        assert!(LatticeSpec::new(0.25, 1.0, 0.0, 2.0).is_ok());
    }

    #[test]
    fn covering_contains_requested_box() {
        let l = LatticeSpec::covering(0.125, 1.0, 0.3, 0.7).unwrap();
        for x in [0.375, 0.5, 0.625] {
            let m = l.space_index(x).unwrap();
            let n = if m % 2 == 0 { 8 } else { 7 };
            assert!(l.contains_point(LatticePoint::new(n, m)));
        }
    }

    #[test]
    fn cell_areas() {
        let h = 0.5;
        assert_eq!(NoiseCell::base_triangle(1).unwrap().area(h), 0.25);
        assert_eq!(NoiseCell::diamond(1, 0).unwrap().area(h), 0.5);
        assert!(NoiseCell::diamond(1, 1).is_err());
        assert!(NoiseCell::diamond(0, 1).is_err());
    }

    #[test]
    fn cone_cells_have_area_t_squared() {
        let h = 0.25;
        for n in 1..12u32 {
            let apex = LatticePoint::new(n, n as i64 % 2);
            let area: f64 = cone_cells(apex).map(|c| c.area(h)).sum();
            let t = n as f64 * h;
            assert!((area - t * t).abs() < 1e-12);
            assert!(cone_cells(apex).all(|c| c.in_cone(apex)));
        }
    }

    #[test]
    fn cells_tile_trapezoid() {
        let l = lat();
        let total: f64 = l.cells().map(|c| c.area(l.h())).sum();
        // Trapezoid area (base + top)/2 · height, minus the notches of area h²
        // between neighbouring top-row points that no diamond reaches.
        let (lo, hi) = l.x_base();
        let top = hi - lo - 2.0 * l.t_max();
        let notches = (l.row_len(l.n_max()) - 1) as f64 * l.h() * l.h();
        let expected = (hi - lo + top) / 2.0 * l.t_max() - notches;
        assert!((total - expected).abs() < 1e-12, "{total} vs {expected}");
        assert_eq!(l.cells().count(), l.n_cells());
        assert!(l.cells().all(|c| l.contains_cell(c)));
    }

    #[test]
    fn shell_cells_are_cone_difference() {
        for (inner, outer) in [(0, 5), (3, 7), (4, 4), (6, 9)] {
            let got: BTreeSet<_> = shell_cells(1, inner, outer).collect();
            let want: BTreeSet<_> = cone_cells(LatticePoint::new(outer, 1))
                .filter(|c| !c.in_cone(LatticePoint::new(inner, 1)))
                .collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn cone_decomposition_is_a_set_identity() {
        let set = |p: LatticePoint| cone_cells(p).collect::<BTreeSet<_>>();
        for n in 2..=20u32 {
            for m in -6i64..=6 {
                let p = LatticePoint::new(n, m);
                if !p.has_field_parity() {
                    continue;
                }
                let left = set(LatticePoint::new(n - 1, m - 1));
                let right = set(LatticePoint::new(n - 1, m + 1));
                let below = set(LatticePoint::new(n - 2, m));
                assert_eq!(left.intersection(&right).copied().collect::<BTreeSet<_>>(), below);
                let mut rebuilt: BTreeSet<_> = left.union(&right).copied().collect();
                rebuilt.insert(NoiseCell::diamond(n - 1, m).unwrap());
                assert_eq!(rebuilt, set(p), "n={n} m={m}");
            }
        }
    }

    #[test]
    fn point_lookup_errors() {
        let l = lat();
        assert!(matches!(l.point(0.75, 0.0), Err(Error::Alignment(_))));
        assert!(matches!(l.point(0.5, 0.0), Err(Error::Alignment(_))));
        assert!(matches!(l.point(2.5, 4.5), Err(Error::Domain(_))));
        assert_eq!(l.point(1.0, 1.0).unwrap(), LatticePoint::new(2, 2));
    }

    #[test]
    fn shell_area_matches_cells() {
        let h = 0.25;
        let outer = LatticePoint::new(10, 0);
        let inner = LatticePoint::new(4, 0);
        let area: f64 = cone_cells(outer)
            .filter(|c| !c.in_cone(inner))
            .map(|c| c.area(h))
            .sum();
        assert!((area - ConeRegion::shell_area(1.0, 2.5)).abs() < 1e-12);
    }
}

//! Light-cone solver for `u(t, x) = 1 + ∫_{Q(x,t)} σ(u(s, y)) ξ(ds dy)`.
//!
//! The recursion advances one level at a time:
//!
//! ```text
//! u(h, m)     = 1 + σ(1)·ξ(base triangle m)
//! u(n+1, m)   = u(n, m−1) + u(n, m+1) − u(n−1, m) + σ(u(n−1, m))·ξ(diamond (n, m))
//! ```
//!
//! `σ` is frozen at the diamond's bottom vertex, which lies outside the
//! diamond, so the discrete integrand is adapted. Unrolling the recursion
//! gives `u(P) − 1 = Σ_{c ⊂ Q(P)} σ(u(bottom(c)))·ξ(c)` exactly; see
//! [`cone_walsh_sum`].

use std::io::Write;

use crate::error::{Error, Result};
use crate::lattice::{cone_cells, LatticePoint, LatticeSpec, NoiseCell};
use crate::noise::NoiseRealization;
use crate::sigma::SigmaSpec;
use crate::snapshot::{GridHeader, WAVE_FIELD_MAGIC};

#[derive(Debug, Clone)]
pub struct WaveField {
    lattice: LatticeSpec,
    sigma: SigmaSpec,
    seed: u64,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl WaveField {
    fn initial(lattice: LatticeSpec, sigma: SigmaSpec, seed: u64) -> Self {
        let mut offsets = Vec::with_capacity(lattice.n_max() as usize + 2);
        let mut acc = 0;
        for n in 0..=lattice.n_max() {
            offsets.push(acc);
            acc += lattice.row_len(n);
        }
        offsets.push(acc);
        let mut values = vec![0.0; acc];
        values[..lattice.row_len(0)].fill(1.0);
        Self { lattice, sigma, seed, offsets, values }
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    pub fn sigma(&self) -> SigmaSpec {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Values at level `n`, ordered by column.
    pub fn row(&self, n: u32) -> &[f64] {
        &self.values[self.offsets[n as usize]..self.offsets[n as usize + 1]]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Stored value at a field point known to be in the trapezoid.
    #[inline]
    pub fn at(&self, p: LatticePoint) -> f64 {
        let (lo, _) = self.lattice.level_range(p.n);
        self.values[self.offsets[p.n as usize] + ((p.m - lo) / 2) as usize]
    }

    /// Like [`WaveField::at`], but accepts any column on the initial line,
    /// where `u ≡ 1`.
    #[inline]
    pub fn at_or_initial(&self, n: u32, m: i64) -> f64 {
        if n == 0 {
            1.0
        } else {
            self.at(LatticePoint::new(n, m))
        }
    }

    pub fn value(&self, p: LatticePoint) -> Result<f64> {
        if !p.has_field_parity() {
            return Err(Error::Alignment(format!("({}, {}) is not a field point", p.n, p.m)));
        }
        if !self.lattice.contains_point(p) {
            return Err(Error::Domain(format!("({}, {}) outside the trapezoid", p.n, p.m)));
        }
        Ok(self.at(p))
    }

    /// Stored value at physical coordinates. No interpolation: `(t, x)` must
    /// be a field point.
    pub fn field_at(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.at(self.lattice.point(t, x)?))
    }

    /// Samples `y ↦ u(t − |x − y|, y)` at every column of `[x − t, x + t]`.
    pub fn cone_boundary_trace(&self, t: f64, x: f64) -> Result<Vec<(f64, f64)>> {
        let apex = self.lattice.point(t, x)?;
        Ok(self.trace_points(apex).map(|p| (p.m as f64 * self.lattice.h(), self.at(p))).collect())
    }

    /// Points `(T − |m − M|, m)` along the two backward characteristics.
    pub(crate) fn trace_points(&self, apex: LatticePoint) -> impl Iterator<Item = LatticePoint> {
        let big_t = apex.n as i64;
        (apex.m - big_t..=apex.m + big_t).map(move |m| LatticePoint::new((big_t - (m - apex.m).abs()) as u32, m))
    }

    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<()> {
        GridHeader::for_lattice(WAVE_FIELD_MAGIC, &self.lattice)?.write(&mut out)?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// `t,x,u` rows for every field point.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let h = self.lattice.h();
        writeln!(out, "t,x,u")?;
        for n in 0..=self.lattice.n_max() {
            let (lo, _) = self.lattice.level_range(n);
            for (k, v) in self.row(n).iter().enumerate() {
                writeln!(out, "{},{},{}", n as f64 * h, (lo + 2 * k as i64) as f64 * h, v)?;
            }
        }
        Ok(())
    }
}

pub fn solve_wave(sigma: SigmaSpec, noise: &NoiseRealization) -> Result<WaveField> {
    let [u] = solve_fields([sigma], noise)?;
    Ok(u)
}

/// Solves `u` and its linearization `Y` (σ ≡ 1) on the same noise.
pub fn solve_coupled_linearization(sigma: SigmaSpec, noise: &NoiseRealization) -> Result<(WaveField, WaveField)> {
    let [u, y] = solve_fields([sigma, SigmaSpec::ONE], noise)?;
    Ok((u, y))
}

fn solve_fields<const K: usize>(sigmas: [SigmaSpec; K], noise: &NoiseRealization) -> Result<[WaveField; K]> {
    let lattice = *noise.lattice();
    let seed = noise.seed();
    let mut fields = sigmas.map(|s| WaveField::initial(lattice, s, seed));

    for n in 1..=lattice.n_max() {
        let (lo, _) = lattice.level_range(n);
        let len = lattice.row_len(n);
        let start = fields[0].offsets[n as usize];
        if n == 1 {
            for k in 0..len {
                let xi = noise.increment_unchecked(NoiseCell { n: 0, m: lo + 2 * k as i64 });
                for f in fields.iter_mut() {
                    f.values[start + k] = 1.0 + f.sigma.eval(1.0) * xi;
                }
            }
        } else {
            let prev = fields[0].offsets[n as usize - 1];
            let prev2 = fields[0].offsets[n as usize - 2];
            for k in 0..len {
                let xi = noise.increment_unchecked(NoiseCell { n: n - 1, m: lo + 2 * k as i64 });
                for f in fields.iter_mut() {
                    let v = &mut f.values;
                    let below = v[prev2 + k + 1];
                    v[start + k] = v[prev + k] + v[prev + k + 1] - below + f.sigma.eval(below) * xi;
                }
            }
        }
        for f in &fields {
            let row = &f.values[start..start + len];
            if !row.iter().sum::<f64>().is_finite() {
                return Err(Error::Numeric { seed, what: format!("non-finite wave value at level {n}") });
            }
        }
    }
    Ok(fields)
}

/// `Σ σ(u(bottom(c)))·ξ(c)` over the cells of the backward cone of `apex`.
/// Equals `u(apex) − 1` for the field solved from `noise`.
pub fn cone_walsh_sum(field: &WaveField, noise: &NoiseRealization, apex: LatticePoint) -> Result<f64> {
    check_same_noise(field, noise)?;
    if !field.lattice.contains_cone(apex) {
        return Err(Error::Domain(format!("cone of ({}, {}) leaves the trapezoid", apex.n, apex.m)));
    }
    Ok(cone_cells(apex)
        .map(|c| {
            let b = c.bottom();
            field.sigma.eval(field.at_or_initial(b.n, b.m)) * noise.increment_unchecked(c)
        })
        .sum())
}

pub(crate) fn check_same_noise(field: &WaveField, noise: &NoiseRealization) -> Result<()> {
    if field.seed != noise.seed() || field.lattice != *noise.lattice() {
        return Err(Error::Precondition("field was not solved from this noise realization".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::make_noise;

    fn noise(seed: u64) -> NoiseRealization {
        make_noise(seed, LatticeSpec::new(0.125, 2.0, -3.0, 3.0).unwrap()).unwrap()
    }

    #[test]
    fn zero_sigma_gives_constant_field() {
        let u = solve_wave(SigmaSpec::ZERO, &noise(1)).unwrap();
        assert!(u.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn constant_sigma_is_exact_cone_sum() {
        let nz = noise(2);
        let u = solve_wave(SigmaSpec::ONE, &nz).unwrap();
        let l = *nz.lattice();
        for n in 0..=l.n_max() {
            let (lo, hi) = l.level_range(n);
            for m in (lo..=hi).step_by(2) {
                let p = LatticePoint::new(n, m);
                let cells: Vec<_> = cone_cells(p).collect();
                let xi = nz.region_integral(&cells).unwrap();
                let v = u.at(p);
                assert!((v - 1.0 - xi).abs() < 1e-12 * v.abs().max(1.0), "({n},{m})");
            }
        }
    }

    #[test]
    fn nonlinear_sigma_matches_discrete_walsh_sum() {
        let nz = noise(3);
        let u = solve_wave(SigmaSpec::Sine { a: 1.0 }, &nz).unwrap();
        for p in [LatticePoint::new(16, 0), LatticePoint::new(9, 3), LatticePoint::new(1, -1)] {
            let s = cone_walsh_sum(&u, &nz, p).unwrap();
            assert!((u.at(p) - 1.0 - s).abs() < 1e-12);
        }
    }

    #[test]
    fn coupled_constant_sigma_is_linear() {
        let nz = noise(4);
        let (u, y) = solve_coupled_linearization(SigmaSpec::ONE, &nz).unwrap();
        assert_eq!(u.values(), y.values());
        let (u, y) = solve_coupled_linearization(SigmaSpec::Constant { c: 0.3 }, &nz).unwrap();
        for (a, b) in u.values().iter().zip(y.values()) {
            assert!((a - 1.0 - 0.3 * (b - 1.0)).abs() < 1e-12);
        }
        let (u, y) = solve_coupled_linearization(SigmaSpec::Sine { a: 1.0 }, &nz).unwrap();
        assert!(u.values().iter().zip(y.values()).any(|(a, b)| a != b));
    }

    #[test]
    fn field_at_alignment() {
        let u = solve_wave(SigmaSpec::ONE, &noise(5)).unwrap();
        assert_eq!(u.field_at(0.0, 0.5).unwrap(), 1.0);
        assert!(matches!(u.field_at(1.5 * 0.125, 0.0), Err(Error::Alignment(_))));
        let p = LatticePoint::new(8, 2);
        assert_eq!(u.field_at(1.0, 0.25).unwrap(), u.at(p));
    }

    #[test]
    fn trace_endpoints() {
        let u = solve_wave(SigmaSpec::Linear { lambda: 1.0 }, &noise(6)).unwrap();
        let trace = u.cone_boundary_trace(1.0, 0.0).unwrap();
        assert_eq!(trace.len(), 17);
        assert_eq!(trace[0], (-1.0, 1.0));
        assert_eq!(trace[16], (1.0, 1.0));
        assert_eq!(trace[8].1, u.field_at(1.0, 0.0).unwrap());
        assert!(matches!(u.cone_boundary_trace(2.0, 1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn snapshot_and_csv() {
        let u = solve_wave(SigmaSpec::ONE, &noise(7)).unwrap();
        let mut bin = Vec::new();
        u.write_snapshot(&mut bin).unwrap();
        assert_eq!(bin.len(), 32 + 8 * u.lattice().n_points());
        let mut rd = bin.as_slice();
        let header = GridHeader::read(&mut rd).unwrap();
        assert_eq!(&header.magic, WAVE_FIELD_MAGIC);
        let vals = crate::snapshot::read_values(&mut rd).unwrap();
        assert_eq!(vals, u.values());
        let mut csv = Vec::new();
        u.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 1 + u.lattice().n_points());
    }
}

//! Structural properties: exactness of the scheme, increment geometry,
//! reproducibility.

use proptest::prelude::*;
use wavelab_core::ensemble::run_replicates;
use wavelab_core::stats::{loglog_fit, Summary};
use wavelab_core::wave::cone_walsh_sum;
use wavelab_core::{make_noise, solve_wave, LatticePoint, LatticeSpec, SigmaSpec};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scheme_is_a_discrete_walsh_integral(seed in any::<u64>(), k in 3u32..6, lambda in -1.5f64..1.5) {
        let h = 1.0 / f64::from(1u32 << k);
        let lattice = LatticeSpec::covering(h, 1.0, -0.25, 0.25).unwrap();
        let noise = make_noise(seed, lattice).unwrap();
        for sigma in [SigmaSpec::ONE, SigmaSpec::Linear { lambda }, SigmaSpec::Sine { a: lambda }] {
            let u = solve_wave(sigma, &noise).unwrap();
            let top = lattice.n_max();
            let (lo, hi) = lattice.level_range(top);
            for m in (lo..=hi).step_by(2) {
                let p = LatticePoint::new(top, m);
                let walsh = cone_walsh_sum(&u, &noise, p).unwrap();
                prop_assert!((u.at(p) - 1.0 - walsh).abs() <= 1e-12 * u.at(p).abs().max(1.0));
            }
        }
    }

    #[test]
    fn solutions_depend_only_on_seed(seed in any::<u64>()) {
        let lattice = LatticeSpec::covering(1.0 / 16.0, 1.0, 0.0, 0.5).unwrap();
        let a = solve_wave(SigmaSpec::IDENTITY, &make_noise(seed, lattice).unwrap()).unwrap();
        let b = solve_wave(SigmaSpec::IDENTITY, &make_noise(seed, lattice).unwrap()).unwrap();
        prop_assert_eq!(a.values(), b.values());
    }
}

/// Exact second moments of additive-noise increments: the symmetric
/// difference of two light cones.
fn spatial_area(t: f64, d: f64) -> f64 {
    2.0 * t * d - d * d / 2.0
}

fn temporal_area(t: f64, e: f64) -> f64 {
    2.0 * t * e + e * e
}

#[test]
fn additive_increments_match_cone_geometry() {
    let (h, t) = (1.0 / 32.0, 1.0);
    let lags = [1.0 / 16.0, 0.125, 0.25];
    let lattice = LatticeSpec::covering(h, t + 0.25, 0.0, 0.25).unwrap();
    let rows = run_replicates(3000, 3, Some(1), |seed| {
        let u = solve_wave(SigmaSpec::ONE, &make_noise(seed, lattice)?)?;
        let base = u.field_at(t, 0.0)?;
        let mut row = Vec::new();
        for &d in &lags {
            row.push((u.field_at(t, d)? - base).powi(2));
            row.push((u.field_at(t + d, 0.0)? - base).powi(2));
        }
        Ok(row)
    })
    .unwrap();
    for (i, &d) in lags.iter().enumerate() {
        for (j, target) in [spatial_area(t, d), temporal_area(t, d)].into_iter().enumerate() {
            let xs: Vec<f64> = rows.iter().map(|r| r[2 * i + j]).collect();
            let s = Summary::of(&xs).unwrap();
            assert!(s.z_score(target).abs() < 4.0, "lag {d} axis {j}: {} ± {} vs {target}", s.mean, s.std_err);
        }
    }
}

#[test]
fn anderson_increments_are_lipschitz_in_mean_square() {
    // E|Δu|² ∝ lag (Hölder-½ paths) for σ(u) = u.
    let (h, t) = (1.0 / 128.0, 0.5);
    let lags: Vec<f64> = (1..6).map(|k| h * f64::from(1u32 << k)).collect();
    let lattice = LatticeSpec::covering(h, t, 0.0, 0.25).unwrap();
    let rows = run_replicates(600, 17, Some(1), |seed| {
        let u = solve_wave(SigmaSpec::IDENTITY, &make_noise(seed, lattice)?)?;
        let base = u.field_at(t, 0.0)?;
        lags.iter().map(|&d| Ok((u.field_at(t, d)? - base).powi(2))).collect()
    })
    .unwrap();
    let ms: Vec<f64> = (0..lags.len()).map(|i| rows.iter().map(|r: &Vec<f64>| r[i]).sum::<f64>() / rows.len() as f64).collect();
    let fit = loglog_fit(&lags, &ms).unwrap();
    assert!((fit.slope - 1.0).abs() < 0.15, "exponent {}", fit.slope);
}

#[test]
fn ensemble_is_worker_count_invariant() {
    let lattice = LatticeSpec::covering(1.0 / 32.0, 1.0, 0.0, 0.0).unwrap();
    let job = |seed| solve_wave(SigmaSpec::IDENTITY, &make_noise(seed, lattice)?)?.field_at(1.0, 0.0);
    let one = run_replicates(64, 99, Some(1), job).unwrap();
    let four = run_replicates(64, 99, Some(4), job).unwrap();
    assert_eq!(one.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), four.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

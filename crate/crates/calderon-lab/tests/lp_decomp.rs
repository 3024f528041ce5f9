use std::f64::consts::PI;

use calderon_lab::experiments::random_band_limited;
use calderon_lab::gridcore::{apply_fourier_multiplier, lp_norm, Domain, GridFunction, C64};
use calderon_lab::lp_decomp::{
    build_family, paraproduct_apply, partition_residual, psi_factor, smooth_at_scale, smooth_bump, telescope_check,
    whitney_split, FamilyKind, ParaproductSpec, SlotType,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NC: FamilyKind = FamilyKind::Noncompact;

fn riemann(f: impl Fn(f64) -> f64, lo: f64, hi: f64, h: f64) -> f64 {
    let n = ((hi - lo) / h).round() as i64;
    (0..=n).map(|i| f(lo + i as f64 * h)).sum::<f64>() * h
}

#[test]
fn noncompact_phi_is_an_even_positive_unit_mass_bump() {
    let fam = build_family(NC);
    for k in [-2, 0, 3] {
        let mass = riemann(|x| fam.phi_k(k, x), -40.0, 40.0, 1e-3);
        assert!((mass - 1.0).abs() < 1e-10, "k = {k}: {mass}");
    }
    for x in [0.1, 0.7, 2.5] {
        assert_eq!(fam.phi(x), fam.phi(-x));
        assert!(fam.phi(x) > 0.0);
        assert!((fam.psi(x) - (fam.phi(x) - 0.5 * fam.phi(0.5 * x))).abs() < 1e-16);
    }
}

#[test]
fn psi_has_vanishing_moments() {
    let fam = build_family(NC);
    assert!(riemann(|x| fam.psi(x), -40.0, 40.0, 1e-3).abs() < 1e-12);
    assert!(riemann(|x| x * fam.psi(x), -40.0, 40.0, 1e-3).abs() < 1e-12);
}

#[test]
fn compact_family_plateau_and_support() {
    let fam = build_family(FamilyKind::Compact);
    for i in 0..=100 {
        let xi = i as f64 * 0.005;
        assert_eq!(fam.phi_hat(xi), 1.0);
        assert_eq!(fam.phi_hat(1.0 + xi), 0.0);
    }
    assert!(fam.phi_hat(0.75) > 0.0 && fam.phi_hat(0.75) < 1.0);
    assert_eq!(smooth_bump(3.0, 0.0, 1.0), 0.0);
}

#[test]
fn telescoping_is_exact_and_the_tail_halves() {
    let fam = build_family(NC);
    let grid: Vec<f64> = (-200..=200).map(|i| i as f64 * 0.05).collect();
    let mut prev: Option<f64> = None;
    for k_min in [-6, -5, -4, -3] {
        let rep = telescope_check(&fam, k_min, 4, &grid).unwrap();
        assert!(rep.max_error <= 1e-12);
        if let Some(p) = prev {
            assert!((rep.truncation_sup / p - 2.0f64).abs() < 1e-15);
        }
        prev = Some(rep.truncation_sup);
    }
    assert!(telescope_check(&build_family(FamilyKind::Compact), 0, 1, &grid).is_err());
    assert!(telescope_check(&fam, 2, 1, &grid).is_err());
}

#[test]
fn partition_of_unity_improves_with_more_scales() {
    let fam = build_family(NC);
    let r: Vec<f64> = (2..=7).map(|k| partition_residual(&fam, -k, k, (0.5, 2.0), 301)).collect();
    assert!(r.windows(2).all(|w| w[1] < w[0] / 1.9), "{r:?}");
    let fc = build_family(FamilyKind::Compact);
    assert!(partition_residual(&fc, -4, 4, (0.5, 2.0), 301) < 1e-15);
}

#[test]
fn psi_factor_has_a_removable_singularity() {
    let fam = build_family(NC);
    assert!((psi_factor(&fam, 0.0) - 3.0 * PI).abs() < 1e-15);
    assert!((psi_factor(&fam, 1e-9) - 3.0 * PI).abs() < 1e-6);
    assert!((psi_factor(&fam, 1.0) - fam.psi_hat(1.0)).abs() < 1e-16);
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..100 {
        let xi: f64 = rng.gen_range(-3.0..3.0);
        assert!((psi_factor(&fam, xi) * xi * xi - fam.psi_hat(xi)).abs() < 1e-10);
    }
}

#[test]
fn smoothing_never_exceeds_the_sup_norm_on_resolved_scales() {
    let fam = build_family(NC);
    let d = Domain::new(32.0, 4096).unwrap();
    for seed in 0..3 {
        let f = random_band_limited(d, 0.5, seed).unwrap();
        let sup = lp_norm(&f, f64::INFINITY).unwrap();
        for k in -4..=4 {
            let s = smooth_at_scale(&fam, SlotType::Phi, k, &f);
            assert!(lp_norm(&s, f64::INFINITY).unwrap() <= sup + 1e-12);
        }
    }
}

#[test]
fn paraproduct_with_constant_phi_slots_is_a_resummation() {
    let d = Domain::new(32.0, 1024).unwrap();
    let fam = build_family(NC);
    let f = random_band_limited(d, 0.25, 4).unwrap();
    let one = GridFunction::constant(d, C64::new(1.0, 0.0));
    let spec = ParaproductSpec {
        slots: vec![(NC, SlotType::Psi), (NC, SlotType::Phi), (NC, SlotType::Phi), (NC, SlotType::Psi)],
        k_min: -3,
        k_max: 3,
    };
    assert_eq!(spec.degree(), 2);
    let out = paraproduct_apply(&spec, &[f.clone(), one.clone(), one]).unwrap();
    let want = apply_fourier_multiplier(&f, |nu| {
        C64::new((-3..=3).map(|k| fam.psi_hat_k(k, nu).powi(2)).sum(), 0.0)
    });
    assert!(lp_norm(&out.sub(&want).unwrap(), f64::INFINITY).unwrap() < 1e-12);
}

#[test]
fn single_scale_paraproduct_matches_direct_convolution() {
    let d = Domain::new(16.0, 256).unwrap();
    let fam = build_family(NC);
    let dx = d.dx();
    let f = GridFunction::from_real_fn(d, |x| (-x * x).exp() * (2.0 * x).cos()).unwrap();
    let g = GridFunction::from_real_fn(d, |x| (-(x - 0.5) * (x - 0.5) / 2.0).exp()).unwrap();
    let direct = |h: &GridFunction, kern: &dyn Fn(f64) -> f64| -> Vec<f64> {
        let v = h.re();
        (0..d.n())
            .map(|m| {
                (0..d.n())
                    .map(|j| {
                        // Nearest periodic image is enough: the kernels decay like exp(-pi x^2).
                        let mut t = d.x(m) - d.x(j);
                        t -= d.length() * (t / d.length()).round();
                        v[j] * kern(t) * dx
                    })
                    .sum()
            })
            .collect()
    };
    let a = direct(&f, &|t| fam.psi(t));
    let b = direct(&g, &|t| fam.phi(t));
    let prod = GridFunction::from_real(d, &a.iter().zip(&b).map(|(x, y)| x * y).collect::<Vec<_>>()).unwrap();
    let want = direct(&prod, &|t| fam.psi(t));
    let spec = ParaproductSpec { slots: vec![(NC, SlotType::Psi), (NC, SlotType::Phi), (NC, SlotType::Psi)], k_min: 0, k_max: 0 };
    let got = paraproduct_apply(&spec, &[f, g]).unwrap();
    let err = got.values().iter().zip(&want).map(|(u, w)| (u.re - w).abs()).fold(0.0, f64::max);
    assert!(err < 1e-8, "{err}");
}

#[test]
fn paraproduct_validation() {
    let d = Domain::new(8.0, 64).unwrap();
    let one = GridFunction::constant(d, C64::new(1.0, 0.0));
    let one_psi = ParaproductSpec { slots: vec![(NC, SlotType::Psi), (NC, SlotType::Phi), (NC, SlotType::Phi)], k_min: 0, k_max: 1 };
    assert!(one_psi.validate().is_err());
    let ok = ParaproductSpec { slots: vec![(NC, SlotType::Psi), (NC, SlotType::Psi), (NC, SlotType::Phi)], k_min: 0, k_max: 1 };
    assert!(paraproduct_apply(&ok, &[one.clone()]).is_err());
    let too_fine = ParaproductSpec { k_max: 6, ..ok };
    assert!(paraproduct_apply(&too_fine, &[one.clone(), one]).is_err());
}

#[test]
fn whitney_branches_sum_to_one() {
    let w = whitney_split(-10, 10).unwrap();
    assert!((w.total(0.3, 0.3) - 1.0).abs() < 1e-8);
    let b = w.branches(0.3, 0.3);
    assert!((b.iter().sum::<f64>() - w.total(0.3, 0.3)).abs() < 1e-15);
    // b far below a: the Phi_{r-1}(a) Psi_r(b) branch has disjoint supports.
    assert_eq!(w.branches(10.0, 0.01)[0], 0.0);
    assert!(whitney_split(1, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn telescoping_holds_for_any_range(k_min in -8i32..0, span in 0i32..8) {
        let fam = build_family(NC);
        let grid: Vec<f64> = (-50..=50).map(|i| i as f64 * 0.13).collect();
        prop_assert!(telescope_check(&fam, k_min, k_min + span, &grid).unwrap().max_error <= 1e-12);
    }

    #[test]
    fn whitney_total_is_one_away_from_the_origin(a in 0.05f64..4.0, b in 0.05f64..4.0) {
        let w = whitney_split(-12, 12).unwrap();
        prop_assert!((w.total(a, b) - 1.0).abs() < 1e-8);
    }
}

use calderon_lab::dyadic_model::{
    apply_model, model_form, shifted_maximal, shifted_maximal_cells, shifted_square, AdaptedBump, DyadicInterval,
    ModelOperatorSpec,
};
use calderon_lab::experiments::random_band_limited;
use calderon_lab::gridcore::{lp_norm, Domain, GridFunction, C64};
use calderon_lab::lp_decomp::{build_family, FamilyKind, SlotType};

fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, steps: usize) -> f64 {
    let h = (hi - lo) / steps as f64;
    (0..=steps).map(|i| f(lo + i as f64 * h)).sum::<f64>() * h
}

fn model(shifts: Vec<i64>, kinds: Vec<SlotType>, scales: (i32, i32), window: (f64, f64)) -> ModelOperatorSpec {
    ModelOperatorSpec { shifts, kinds, scales, window }
}

#[test]
fn dyadic_interval_geometry() {
    let i = DyadicInterval::new(3, -5);
    assert_eq!(i.len(), 0.125);
    assert_eq!(i.left(), -0.625);
    let s = i.shifted(4);
    assert_eq!(s.len(), i.len());
    assert_eq!(s.left() - i.left(), 4.0 * i.len());
    assert!(i.contains(-0.6) && !i.contains(-0.5));
}

#[test]
fn bumps_are_normalized() {
    for k in [-1, 0, 2] {
        for kind in [SlotType::Phi, SlotType::Psi] {
            let iv = DyadicInterval::new(k, 1);
            let b = AdaptedBump::l2(iv, 2, kind);
            let (lo, hi) = (b.center() - 12.0 * iv.len(), b.center() + 12.0 * iv.len());
            let l2 = integrate(|x| b.eval(x).powi(2), lo, hi, 200_000);
            assert!((l2 - 1.0).abs() < 1e-6, "k {k} {kind:?}: {l2}");
            let b1 = AdaptedBump::new(iv, 0, kind, 1.0).unwrap();
            let (lo, hi) = (b1.center() - 12.0 * iv.len(), b1.center() + 12.0 * iv.len());
            assert!((integrate(|x| b1.eval(x).abs(), lo, hi, 200_000) - 1.0).abs() < 1e-6);
        }
        let psi = AdaptedBump::l2(DyadicInterval::new(k, 0), 0, SlotType::Psi);
        let r = 12.0 * 2f64.powi(-k);
        assert!(integrate(|x| psi.eval(x), -r, r, 200_000).abs() < 1e-12);
    }
    assert!(AdaptedBump::new(DyadicInterval::new(0, 0), 0, SlotType::Phi, 0.5).is_err());
}

#[test]
fn derivative_bounds_scale_with_the_interval() {
    let m = 4;
    for kind in [SlotType::Phi, SlotType::Psi] {
        for j in 0..=2usize {
            let consts: Vec<f64> = (-2..=5)
                .map(|k| {
                    let iv = DyadicInterval::new(k, 3);
                    let b = AdaptedBump::l2(iv, 0, kind);
                    let len = iv.len();
                    (-400..=400)
                        .map(|i| {
                            let x = iv.left() + i as f64 * 0.05 * len;
                            let dist =
                                if iv.contains(x) { 0.0 } else { (x - iv.left()).abs().min((x - iv.left() - len).abs()) };
                            let envelope = len.powf(-(j as f64) - 0.5) * (1.0 + dist / len).powi(-m);
                            b.derivative(j, x).abs() / envelope
                        })
                        .fold(0.0, f64::max)
                })
                .collect();
            // One finite constant serves every scale.
            let hi = consts.iter().cloned().fold(0.0, f64::max);
            let lo = consts.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(hi.is_finite() && hi <= lo * (1.0 + 1e-9), "{kind:?} j = {j}: {consts:?}");
        }
        let b = AdaptedBump::l2(DyadicInterval::new(2, 0), 1, kind);
        let h = 1e-5;
        for x in [0.1, 0.3, 0.55] {
            let fd = (b.eval(x + h) - b.eval(x - h)) / (2.0 * h);
            assert!((fd - b.derivative(1, x)).abs() < 1e-6 * b.derivative(1, x).abs().max(1.0));
            assert!((b.derivative(0, x) - b.eval(x)).abs() < 1e-14);
        }
    }
}

#[test]
fn invalid_model_operators_are_rejected() {
    let d = Domain::new(16.0, 1024).unwrap();
    let f = vec![GridFunction::zeros(d); 2];
    assert!(model(vec![0, 0], vec![SlotType::Psi, SlotType::Phi, SlotType::Phi], (0, 1), (0.0, 1.0)).validate().is_err());
    assert!(model(vec![0, 0], vec![SlotType::Psi, SlotType::Psi], (0, 1), (0.0, 1.0)).validate().is_err());
    // Intervals of length 1/64 span a single cell here.
    let fine = model(vec![0, 0], vec![SlotType::Psi, SlotType::Psi, SlotType::Phi], (0, 6), (0.0, 1.0));
    assert!(apply_model(&fine, &f).is_err());
}

#[test]
fn singleton_family_is_rank_one() {
    let d = Domain::new(16.0, 1024).unwrap();
    let s = model(vec![0, 0], vec![SlotType::Psi, SlotType::Psi, SlotType::Phi], (1, 1), (0.0, 0.5));
    assert_eq!(s.intervals(), vec![DyadicInterval::new(1, 0)]);
    let f1 = random_band_limited(d, 0.3, 1).unwrap();
    let f2 = random_band_limited(d, 0.3, 2).unwrap();
    let out = apply_model(&s, &[f1.clone(), f2.clone()]).unwrap();
    let iv = DyadicInterval::new(1, 0);
    let c = AdaptedBump::l2(iv, 0, SlotType::Psi).pair(&f1) * AdaptedBump::l2(iv, 0, SlotType::Psi).pair(&f2);
    let phi = AdaptedBump::l2(iv, 0, SlotType::Phi);
    let want = GridFunction::from_fn(d, |x| c * phi.eval(x)).unwrap();
    assert!(lp_norm(&out.sub(&want).unwrap(), f64::INFINITY).unwrap() < 1e-12);
}

#[test]
fn inputs_orthogonal_to_the_bumps_give_zero() {
    let d = Domain::new(16.0, 1024).unwrap();
    let s = model(vec![0, 1], vec![SlotType::Psi, SlotType::Psi, SlotType::Phi], (0, 2), (-2.0, 2.0));
    let one = GridFunction::constant(d, C64::new(1.0, 0.0));
    let f = random_band_limited(d, 0.3, 5).unwrap();
    let out = apply_model(&s, &[one, f]).unwrap();
    assert!(lp_norm(&out, f64::INFINITY).unwrap() < 1e-12);
}

#[test]
fn model_form_basic_properties() {
    let d = Domain::new(16.0, 1024).unwrap();
    let ins: Vec<GridFunction> = (0..2).map(|s| random_band_limited(d, 0.3, 10 + s).unwrap()).collect();
    let s = model(vec![0, 2], vec![SlotType::Psi, SlotType::Psi, SlotType::Phi], (0, 2), (-2.0, 2.0));
    assert_eq!(model_form(&s, &ins, &GridFunction::zeros(d)).unwrap(), 0.0);
    let e = GridFunction::from_real_fn(d, |x| if x.abs() < 3.0 { 1.0 } else { 0.0 }).unwrap();
    let small = model_form(&s, &ins, &e).unwrap();
    let wide = model(vec![0, 2], vec![SlotType::Psi, SlotType::Psi, SlotType::Phi], (0, 2), (-3.0, 3.0));
    let big = model_form(&wide, &ins, &e).unwrap();
    assert!(small > 0.0 && big >= small);
    assert_eq!(model_form(&s, &ins, &e).unwrap(), small);
}

#[test]
fn model_form_translation_covariance() {
    let d = Domain::new(16.0, 1024).unwrap();
    let ins: Vec<GridFunction> = (0..2).map(|s| random_band_limited(d, 0.3, 30 + s).unwrap()).collect();
    let e = GridFunction::from_real_fn(d, |x| if x.abs() < 2.5 { 1.0 } else { 0.0 }).unwrap();
    let s = model(vec![1, 0], vec![SlotType::Psi, SlotType::Phi, SlotType::Psi], (0, 2), (-2.0, 2.0));
    let base = model_form(&s, &ins, &e).unwrap();
    // `translate(1)` is `f(x + 1)`; a unit shift maps the dyadic family at scales >= 0 onto itself.
    let moved: Vec<GridFunction> = ins.iter().map(|f| f.translate(1.0)).collect();
    let s2 = model(vec![1, 0], s.kinds.clone(), (0, 2), (-3.0, 1.0));
    let shifted = model_form(&s2, &moved, &e.translate(1.0)).unwrap();
    assert!((shifted - base).abs() < 1e-10 * base, "{base} vs {shifted}");
}

#[test]
fn model_form_dilation() {
    // f(x) -> f(x/2) with every interval doubled scales the form by 2 when l = 2.
    let small = Domain::new(16.0, 1024).unwrap();
    let large = Domain::new(32.0, 1024).unwrap();
    let ins: Vec<GridFunction> = (0..2).map(|s| random_band_limited(small, 0.3, 40 + s).unwrap()).collect();
    let dilate = |g: &GridFunction| GridFunction::new(large, g.values().to_vec()).unwrap();
    let e = GridFunction::from_real_fn(small, |x| if x.abs() < 2.5 { 1.0 } else { 0.0 }).unwrap();
    let kinds = vec![SlotType::Psi, SlotType::Psi, SlotType::Phi];
    let a = model_form(&model(vec![0, 1], kinds.clone(), (0, 2), (-2.0, 2.0)), &ins, &e).unwrap();
    let big_ins: Vec<GridFunction> = ins.iter().map(dilate).collect();
    let b = model_form(&model(vec![0, 1], kinds, (-1, 1), (-4.0, 4.0)), &big_ins, &dilate(&e)).unwrap();
    assert!((b - 2.0 * a).abs() < 1e-10 * a, "{a} vs {b}");
}

#[test]
fn shifted_maximal_dominates_at_zero_shift() {
    let d = Domain::new(16.0, 1024).unwrap();
    let ind = GridFunction::from_real_fn(d, |x| if (0.3..1.1).contains(&x) { 1.0 } else { 0.0 }).unwrap();
    let rnd = random_band_limited(d, 0.5, 3).unwrap();
    for f in [ind, rnd] {
        // k = 6 is the single-cell level, so every point sees its own value.
        let m = shifted_maximal(0, &f, (-2, 6)).unwrap();
        for (a, b) in m.values().iter().zip(f.values()) {
            assert!(a.re >= 0.0 && a.re + 1e-12 >= b.norm());
        }
        let shifted = shifted_maximal(3, &f, (-2, 5)).unwrap();
        assert!(shifted.values().iter().all(|v| v.re >= 0.0));
    }
    assert!(shifted_maximal(0, &GridFunction::zeros(d), (0, 12)).is_err());
}

#[test]
fn maximal_cells_match_the_grid_version() {
    let d = Domain::new(16.0, 256).unwrap();
    let f = random_band_limited(d, 0.5, 8).unwrap();
    let abs: Vec<f64> = f.values().iter().map(|v| v.norm()).collect();
    // k = 0 is 16 cells (2^4); k = 3 is 2 cells.
    let levels: Vec<u32> = (1..=4).collect();
    for n in [0, 1, 5, -3] {
        let a = shifted_maximal(n, &f, (0, 3)).unwrap();
        let b = shifted_maximal_cells(n, &abs, &levels);
        for (x, y) in a.values().iter().zip(&b) {
            assert!((x.re - y).abs() < 1e-14);
        }
    }
}

#[test]
fn shifted_square_function() {
    let d = Domain::new(32.0, 1024).unwrap();
    let fam = build_family(FamilyKind::Noncompact);
    let zero = shifted_square(4, &fam, &GridFunction::zeros(d), (-3, 4)).unwrap();
    assert_eq!(lp_norm(&zero, 2.0).unwrap(), 0.0);
    let f = random_band_limited(d, 0.25, 6).unwrap();
    let s0 = lp_norm(&shifted_square(0, &fam, &f, (-6, 5)).unwrap(), 2.0).unwrap();
    let ratio = s0 / lp_norm(&f, 2.0).unwrap();
    assert!((0.25..=4.0).contains(&ratio), "{ratio}");
    // Each scale is only translated, so the L2 norm does not see the shift.
    let s7 = lp_norm(&shifted_square(7, &fam, &f, (-6, 5)).unwrap(), 2.0).unwrap();
    assert!((s7 - s0).abs() < 1e-12 * s0);
}

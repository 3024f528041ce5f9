//! Singular integral operators on the grid.
//!
//! Kernel forms are summed with the symmetric principal-value stencil of
//! [`PvStencil`]; with [`FarField::Periodic`] the kernels `t^{-p}` are replaced
//! by their periodizations. Multiplier forms sum the exact multilinear
//! convolution over all frequency tuples.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::gridcore::{
    forward_transform, inverse_transform, pv_convolve_with, power_kernel, Domain, FarField, GridFunction, PvStencil,
    Spectrum, C64, I,
};
use crate::profiles::{sample, LipschitzProfile, MAX_ORDER};
use crate::symbols::{commutator_symbol, symbol_value, SymbolSpec};

/// Work limit `N^{d+1}` for the multiplier route: covers `d = 1` at `N = 4096`,
/// `d = 2` at `N = 256` and `d = 3` at `N = 64`.
pub const DEFAULT_BUDGET: u128 = 1 << 24;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

fn same_domain(a: &GridFunction, b: &GridFunction) -> Result<()> {
    if a.domain() == b.domain() {
        Ok(())
    } else {
        Err(LabError::DomainMismatch)
    }
}

fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// Samples of a profile derivative at `x_i` for `i` in `[-reach, n + reach)`.
///
/// With a periodic far field the samples wrap around the torus.
struct Extended {
    reach: isize,
    values: Vec<f64>,
}

impl Extended {
    fn new(profile: &LipschitzProfile, order: usize, domain: &Domain, reach: usize, far: FarField) -> Self {
        let n = domain.n() as isize;
        let r = reach as isize;
        let values = (-r..n + r)
            .map(|i| {
                let idx = match far {
                    FarField::Periodic => i.rem_euclid(n),
                    FarField::Truncated(_) => i,
                };
                profile.derivative(order, -0.5 * domain.length() + idx as f64 * domain.dx())
            })
            .collect();
        Self { reach: r, values }
    }

    fn at(&self, i: isize) -> f64 {
        self.values[(i + self.reach) as usize]
    }
}

fn kernel_table(st: &PvStencil, p: u32, length: f64) -> Vec<f64> {
    st.nodes.iter().map(|&t| power_kernel(p, t, st.far, length)).collect()
}

fn finish(domain: Domain, values: Vec<C64>) -> Result<GridFunction> {
    GridFunction::new(domain, values)
}

/// `H f(x) = p.v. int f(y) / (x - y) dy`.
pub fn apply_hilbert(f: &GridFunction, far: FarField) -> Result<GridFunction> {
    let l = f.domain().length();
    pv_convolve_with(f, |y| C64::new(power_kernel(1, y, far, l), 0.0), far)
}

/// Spectral Hilbert transform, multiplier `-i pi sgn(nu)`.
pub fn apply_hilbert_spectral(f: &GridFunction) -> GridFunction {
    crate::gridcore::apply_fourier_multiplier(f, |nu| {
        if nu > 0.0 {
            -I * PI
        } else if nu < 0.0 {
            I * PI
        } else {
            ZERO
        }
    })
}

/// Cauchy integral on the graph of `A`:
/// `p.v. int f(y) / ((x - y) + i (A(x) - A(y))) dy`.
pub fn apply_cauchy(a: &LipschitzProfile, f: &GridFunction, far: FarField) -> Result<GridFunction> {
    if far == FarField::Periodic {
        return invalid("the Cauchy kernel has no periodization; use a truncated far field");
    }
    let d = f.domain();
    let st = PvStencil::new(&d, far)?;
    let ext = Extended::new(a, 0, &d, st.reach(), far);
    let n = d.n();
    let fv = f.values();
    let out = (0..n)
        .into_par_iter()
        .map(|m| {
            let am = ext.at(m as isize);
            let mut acc = ZERO;
            for q in 0..st.len() {
                let idx = m as isize - st.offsets[q];
                let den = C64::new(st.nodes[q], am - ext.at(idx));
                acc += fv[wrap(idx, n)] * st.weights[q] / den;
            }
            acc
        })
        .collect();
    finish(d, out)
}

/// `C_d f(x) = p.v. int (A(x) - A(y))^d / (x - y)^{d+1} f(y) dy`.
pub fn apply_commutator_kernel(d: usize, a: &LipschitzProfile, f: &GridFunction, far: FarField) -> Result<GridFunction> {
    if d == 0 {
        return invalid("commutator degree must be >= 1");
    }
    apply_commutator_profiles(&vec![a; d], f, far)
}

/// Commutator with one profile per difference factor:
/// `p.v. int prod_i (A_i(x) - A_i(y)) / (x - y)^{d+1} f(y) dy`.
pub fn apply_commutator_profiles(profiles: &[&LipschitzProfile], f: &GridFunction, far: FarField) -> Result<GridFunction> {
    let deg = profiles.len();
    if deg == 0 {
        return invalid("at least one profile is required");
    }
    let d = f.domain();
    let st = PvStencil::new(&d, far)?;
    let exts: Vec<Extended> = profiles.iter().map(|p| Extended::new(p, 0, &d, st.reach(), far)).collect();
    let kern = kernel_table(&st, deg as u32 + 1, d.length());
    let n = d.n();
    let fv = f.values();
    let out = (0..n)
        .into_par_iter()
        .map(|m| {
            let mi = m as isize;
            let mut acc = ZERO;
            for q in 0..st.len() {
                let idx = mi - st.offsets[q];
                let mut prod = st.weights[q] * kern[q];
                for e in &exts {
                    prod *= e.at(mi) - e.at(idx);
                }
                acc += fv[wrap(idx, n)] * prod;
            }
            acc
        })
        .collect();
    finish(d, out)
}

/// Exact multilinear multiplier:
/// `out^(eta) = L^{-d} sum_{xi + xi_1 + .. + xi_d = eta} m(xi/L, ..) f^(xi) prod g_j^(xi_j)`.
///
/// The symbol receives physical frequencies. Coefficients below `1e-17` of the
/// largest one in each input are skipped.
pub fn apply_multiplier(
    symbol: impl Fn(&[f64]) -> C64 + Sync,
    f: &GridFunction,
    gs: &[GridFunction],
    budget: u128,
) -> Result<GridFunction> {
    for g in gs {
        same_domain(f, g)?;
    }
    let dom = f.domain();
    let n = dom.n();
    let work = (n as u128).checked_pow(gs.len() as u32 + 1).unwrap_or(u128::MAX);
    if work > budget {
        return Err(LabError::BudgetExceeded { work, budget });
    }
    let lists: Vec<Vec<(i64, C64)>> =
        std::iter::once(f).chain(gs).map(|g| significant(&forward_transform(g), &dom)).collect();
    let (first, rest) = lists.split_first().expect("at least one input");
    let half = (n / 2) as i64;
    let len = dom.length();
    let acc = first
        .par_iter()
        .fold(
            || vec![ZERO; n],
            |mut out, &(xi, c)| {
                let mut freqs = vec![0.0; rest.len() + 1];
                freqs[0] = xi as f64 / len;
                accumulate(&symbol, rest, 0, xi, c, &mut freqs, len, half, &dom, &mut out);
                out
            },
        )
        .reduce(
            || vec![ZERO; n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    let scale = len.powi(-(gs.len() as i32));
    let coeffs = acc.into_iter().map(|c| c * scale).collect();
    Ok(inverse_transform(&Spectrum::new(dom, coeffs)?))
}

fn significant(s: &Spectrum, dom: &Domain) -> Vec<(i64, C64)> {
    let peak = s.coeffs().iter().map(|c| c.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return Vec::new();
    }
    s.coeffs()
        .iter()
        .enumerate()
        .filter(|(_, c)| c.norm() > 1e-17 * peak)
        .map(|(k, &c)| (dom.freq(k), c))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn accumulate(
    symbol: &(impl Fn(&[f64]) -> C64 + Sync),
    rest: &[Vec<(i64, C64)>],
    level: usize,
    sum: i64,
    prod: C64,
    freqs: &mut [f64],
    len: f64,
    half: i64,
    dom: &Domain,
    out: &mut [C64],
) {
    if level == rest.len() {
        if sum >= -half && sum < half {
            let k = dom.slot(sum).expect("in band");
            out[k] += symbol(freqs) * prod;
        }
        return;
    }
    for &(xi, c) in &rest[level] {
        freqs[level + 1] = xi as f64 / len;
        accumulate(symbol, rest, level + 1, sum + xi, prod * c, freqs, len, half, dom, out);
    }
}

/// [`apply_multiplier`] with a real symbol from [`SymbolSpec`].
///
/// No `-i pi` factor is included: `C_d f = -i pi T_{m_d}(f, A', .., A')`.
pub fn apply_commutator_multiplier(
    spec: &SymbolSpec,
    f: &GridFunction,
    gs: &[GridFunction],
    budget: u128,
) -> Result<GridFunction> {
    spec.validate()?;
    if spec.arity() != gs.len() + 1 {
        return Err(LabError::LengthMismatch { expected: spec.arity(), got: gs.len() + 1 });
    }
    apply_multiplier(|fr| C64::new(symbol_value(spec, fr), 0.0), f, gs, budget)
}

/// Mean and periodic antiderivative of a slot function: `int g = mu x + P`.
struct SlotData {
    mu: C64,
    p: Vec<C64>,
}

/// Periodic antiderivative multiplier `1/(2 pi i nu)`, zero at `nu = 0` and at
/// the Nyquist slot so that the map is exactly antisymmetric.
fn antiderivative(values: Vec<C64>, dom: Domain) -> Vec<C64> {
    let g = GridFunction::new(dom, values).expect("finite values");
    let mut s = forward_transform(&g);
    let n = dom.n();
    for k in 0..n {
        let xi = dom.freq(k);
        s.coeffs_mut()[k] = if xi == 0 || xi == -(n as i64) / 2 {
            ZERO
        } else {
            s.coeffs()[k] / (2.0 * PI * I * dom.nu(xi))
        };
    }
    inverse_transform(&s).into_values()
}

impl SlotData {
    fn new(g: &GridFunction) -> Self {
        let dom = g.domain();
        let mu = g.integral() / dom.length();
        Self { mu, p: antiderivative(g.values().to_vec(), dom) }
    }
}

/// Coefficients of `prod_i (mu_i t + delta_i)` in increasing powers of `t`.
fn poly_product(slots: &[&SlotData], deltas: &[C64], out: &mut Vec<C64>) {
    out.clear();
    out.push(C64::new(1.0, 0.0));
    for (s, &dl) in slots.iter().zip(deltas) {
        let a = s.mu;
        out.push(ZERO);
        for l in (0..out.len()).rev() {
            let lower = if l > 0 { out[l - 1] } else { ZERO };
            out[l] = out[l] * dl + lower * a;
        }
    }
}

/// Periodized kernels `K_p(t_q)` for `p = 1..=pmax`, indexed `[p - 1][q]`.
fn kernel_powers(st: &PvStencil, pmax: usize, length: f64) -> Vec<Vec<f64>> {
    (1..=pmax as u32).map(|p| kernel_table(st, p, length)).collect()
}

/// `sum_l c_l t^l K_{top - l}(t)` at stencil node `q`; equals `prod / t^top`
/// in the truncated model.
fn expand(coeffs: &[C64], kp: &[Vec<f64>], top: usize, q: usize) -> C64 {
    coeffs.iter().enumerate().map(|(l, &c)| c * kp[top - l - 1][q]).sum()
}

fn slot_delta(s: &SlotData, m: usize, idx: usize) -> C64 {
    s.p[m] - s.p[idx]
}

/// `C_d(f, g_1..g_d)(x) = p.v. int f(y)/(x - y) prod_j [(x - y)^{-1} int_y^x g_j] dy`.
///
/// The inner integrals use the spectral antiderivative, so with `g_j = A'`
/// this reproduces [`apply_commutator_kernel`].
pub fn apply_multilinear_kernel(f: &GridFunction, gs: &[GridFunction], far: FarField) -> Result<GridFunction> {
    let deg = gs.len();
    if deg == 0 {
        return invalid("at least one slot function is required");
    }
    for g in gs {
        same_domain(f, g)?;
    }
    let dom = f.domain();
    let st = PvStencil::new(&dom, far)?;
    let slots: Vec<SlotData> = gs.iter().map(SlotData::new).collect();
    let refs: Vec<&SlotData> = slots.iter().collect();
    let kp = kernel_powers(&st, deg + 1, dom.length());
    let n = dom.n();
    let fv = f.values();
    let out = (0..n)
        .into_par_iter()
        .map_init(
            || (Vec::with_capacity(deg + 1), vec![ZERO; deg]),
            |(coeffs, deltas), m| {
                let mut acc = ZERO;
                for q in 0..st.len() {
                    let idx = wrap(m as isize - st.offsets[q], n);
                    for (dl, s) in deltas.iter_mut().zip(&slots) {
                        *dl = slot_delta(s, m, idx);
                    }
                    poly_product(&refs, deltas, coeffs);
                    acc += fv[idx] * st.weights[q] * expand(coeffs, &kp, deg + 1, q);
                }
                acc
            },
        )
        .collect();
    finish(dom, out)
}

/// Adjoint of the multilinear kernel in slot `i` (1-based, `i <= d + 1`):
/// the function `a` with `pair(a, inputs[i-1]) = pair(C_d(inputs), test)`.
fn multilinear_adjoint(i: usize, inputs: &[GridFunction], test: &GridFunction, far: FarField) -> Result<GridFunction> {
    let deg = inputs.len() - 1;
    let dom = test.domain();
    let st = PvStencil::new(&dom, far)?;
    let n = dom.n();
    let slots: Vec<SlotData> = inputs[1..].iter().map(SlotData::new).collect();
    let kp = kernel_powers(&st, deg + 1, dom.length());
    let h = test.values();
    let f = inputs[0].values();
    if i == 1 {
        // Gather over the pairs (m, q) with m - offset = y, in the forward arithmetic.
        let refs: Vec<&SlotData> = slots.iter().collect();
        let out = (0..n)
            .into_par_iter()
            .map_init(
                || (Vec::with_capacity(deg + 1), vec![ZERO; deg]),
                |(coeffs, deltas), y| {
                    let mut acc = ZERO;
                    for q in 0..st.len() {
                        let m = wrap(y as isize + st.offsets[q], n);
                        for (dl, s) in deltas.iter_mut().zip(&slots) {
                            *dl = slot_delta(s, m, y);
                        }
                        poly_product(&refs, deltas, coeffs);
                        acc += h[m] * st.weights[q] * expand(coeffs, &kp, deg + 1, q);
                    }
                    acc
                },
            )
            .collect();
        return finish(dom, out);
    }
    let k = i - 2;
    let dx = dom.dx();
    let others: Vec<&SlotData> = slots.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, s)| s).collect();
    // Split the slot-k factor as mu_k t + (P_k(x) - P_k(y)): the mean part pairs
    // with the constant function, the periodic part is deposited at both ends.
    let (deposit, s_alpha) = (0..n)
        .into_par_iter()
        .fold(
            || (vec![ZERO; n], ZERO, Vec::with_capacity(deg), vec![ZERO; deg.saturating_sub(1)]),
            |(mut dep, mut sa, mut coeffs, mut deltas), m| {
                for q in 0..st.len() {
                    let idx = wrap(m as isize - st.offsets[q], n);
                    for (dl, s) in deltas.iter_mut().zip(&others) {
                        *dl = slot_delta(s, m, idx);
                    }
                    poly_product(&others, &deltas, &mut coeffs);
                    let c = h[m] * (st.weights[q] * dx) * f[idx];
                    let alpha = expand(&coeffs, &kp, deg, q);
                    let beta = expand(&coeffs, &kp, deg + 1, q);
                    sa += c * alpha;
                    dep[m] += c * beta;
                    dep[idx] -= c * beta;
                }
                (dep, sa, coeffs, deltas)
            },
        )
        .map(|(d, s, _, _)| (d, s))
        .reduce(
            || (vec![ZERO; n], ZERO),
            |(mut a, sa), (b, sb)| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                (a, sa + sb)
            },
        );
    let sd = antiderivative(deposit, dom);
    let shift = s_alpha / dom.length();
    finish(dom, sd.into_iter().map(|v| shift - v / dx).collect())
}

/// Continuous operators addressable by the experiment and CLI layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum OperatorVariant {
    Identity,
    Hilbert,
    Cauchy(LipschitzProfile),
    CommutatorKernel { d: usize, a: LipschitzProfile },
    /// Inputs are `f, g_1, .., g_d` with `d + 1 = symbol.arity()`.
    CommutatorMultiplier { symbol: SymbolSpec, budget: u128 },
    /// Inputs are `f, g_1, .., g_d`.
    MultilinearKernel { d: usize },
    Bht { alpha: f64 },
    TaylorRemainder { d: usize, a: LipschitzProfile },
    FiniteDifference(FiniteDifferenceSpec),
    /// Inputs are `A', B', C'`.
    Circular { coefs: [i64; 3] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub variant: OperatorVariant,
    pub far: FarField,
}

impl OperatorSpec {
    pub fn new(variant: OperatorVariant, far: FarField) -> Result<Self> {
        let s = Self { variant, far };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.variant {
            OperatorVariant::CommutatorKernel { d, .. } | OperatorVariant::MultilinearKernel { d } if *d == 0 => {
                invalid("degree must be >= 1")
            }
            OperatorVariant::CommutatorMultiplier { symbol, .. } => symbol.validate(),
            OperatorVariant::Bht { alpha } => check_alpha(*alpha),
            OperatorVariant::TaylorRemainder { d, .. } if *d == 0 || *d > MAX_ORDER => {
                invalid(format!("Taylor remainder order must be in 1..={MAX_ORDER}"))
            }
            OperatorVariant::FiniteDifference(spec) => spec.validate(),
            OperatorVariant::Circular { coefs } if coefs.contains(&0) => invalid("circular coefficients must be nonzero"),
            _ => Ok(()),
        }
    }

    /// Number of grid-function inputs.
    pub fn arity(&self) -> usize {
        match &self.variant {
            OperatorVariant::CommutatorMultiplier { symbol, .. } => symbol.arity(),
            OperatorVariant::MultilinearKernel { d } => d + 1,
            OperatorVariant::Bht { .. } => 2,
            OperatorVariant::Circular { .. } => 3,
            _ => 1,
        }
    }

    pub fn apply(&self, inputs: &[GridFunction]) -> Result<GridFunction> {
        if inputs.len() != self.arity() {
            return Err(LabError::LengthMismatch { expected: self.arity(), got: inputs.len() });
        }
        let f = &inputs[0];
        match &self.variant {
            OperatorVariant::Identity => Ok(f.clone()),
            OperatorVariant::Hilbert => apply_hilbert(f, self.far),
            OperatorVariant::Cauchy(a) => apply_cauchy(a, f, self.far),
            OperatorVariant::CommutatorKernel { d, a } => apply_commutator_kernel(*d, a, f, self.far),
            OperatorVariant::CommutatorMultiplier { symbol, budget } => {
                apply_commutator_multiplier(symbol, f, &inputs[1..], *budget)
            }
            OperatorVariant::MultilinearKernel { .. } => apply_multilinear_kernel(f, &inputs[1..], self.far),
            OperatorVariant::Bht { alpha } => apply_bht(*alpha, f, &inputs[1], self.far),
            OperatorVariant::TaylorRemainder { d, a } => apply_taylor_remainder(*d, a, f, self.far),
            OperatorVariant::FiniteDifference(spec) => apply_finite_difference_op(spec, f, self.far),
            OperatorVariant::Circular { coefs } => apply_circular(*coefs, [&inputs[0], &inputs[1], &inputs[2]]),
        }
    }
}

/// The form `Lambda(f_1, .., f_{k+1}) = int T(f_1, .., f_k) f_{k+1} dx`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultilinearForm {
    pub spec: OperatorSpec,
}

impl MultilinearForm {
    pub fn arity(&self) -> usize {
        self.spec.arity() + 1
    }

    pub fn evaluate(&self, inputs: &[GridFunction], test: &GridFunction) -> Result<C64> {
        self.spec.apply(inputs)?.pair(test)
    }
}

/// `(Lambda via the output slot, Lambda via slot i)`.
///
/// Slot `i` pairs the adjoint `T^{*i}` with `inputs[i-1]`; adjoints in slots
/// `1..=d+1` exist for [`OperatorVariant::MultilinearKernel`], the last slot
/// is available for every operator.
pub fn form_and_adjoints(spec: &OperatorSpec, i: usize, inputs: &[GridFunction], test: &GridFunction) -> Result<(C64, C64)> {
    let k = spec.arity();
    if i == 0 || i > k + 1 {
        return invalid(format!("slot {i} is outside 1..={}", k + 1));
    }
    for g in inputs {
        same_domain(test, g)?;
    }
    let lambda = spec.apply(inputs)?.pair(test)?;
    if i == k + 1 {
        return Ok((lambda, lambda));
    }
    match spec.variant {
        OperatorVariant::MultilinearKernel { .. } => {
            let adj = multilinear_adjoint(i, inputs, test, spec.far)?;
            Ok((lambda, adj.pair(&inputs[i - 1])?))
        }
        _ => invalid("adjoints in inner slots are implemented for the multilinear kernel only"),
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha == 0.0 || alpha == 1.0 {
        invalid(format!("BHT parameter {alpha} is degenerate"))
    } else {
        Ok(())
    }
}

/// Bilinear Hilbert transform `p.v. int f(x + t) g(x + alpha t) dt / t`.
///
/// Integer `alpha` reads `g` on the grid; other values shift `g` spectrally
/// per node and need a truncated far field.
pub fn apply_bht(alpha: f64, f: &GridFunction, g: &GridFunction, far: FarField) -> Result<GridFunction> {
    check_alpha(alpha)?;
    same_domain(f, g)?;
    let dom = f.domain();
    let st = PvStencil::new(&dom, far)?;
    let kern = kernel_table(&st, 1, dom.length());
    let n = dom.n();
    let (fv, gv) = (f.values(), g.values());
    if alpha.fract() == 0.0 {
        let a = alpha as isize;
        let out = (0..n)
            .into_par_iter()
            .map(|m| {
                let mut acc = ZERO;
                for q in 0..st.len() {
                    let j = st.offsets[q];
                    let mi = m as isize;
                    acc += fv[wrap(mi + j, n)] * gv[wrap(mi + a * j, n)] * (st.weights[q] * kern[q]);
                }
                acc
            })
            .collect();
        return finish(dom, out);
    }
    if far == FarField::Periodic {
        return invalid("non-integer BHT parameter requires a truncated far field");
    }
    let out = (0..st.len())
        .into_par_iter()
        .fold(
            || vec![ZERO; n],
            |mut acc, q| {
                let shifted = g.translate(alpha * st.nodes[q]);
                let sv = shifted.values();
                let w = st.weights[q] * kern[q];
                for m in 0..n {
                    acc[m] += fv[wrap(m as isize + st.offsets[q], n)] * sv[m] * w;
                }
                acc
            },
        )
        .reduce(
            || vec![ZERO; n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    finish(dom, out)
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// `p.v. int (A(x) - T^{d-1}_y A(x)) / (x - y)^{d+1} f(y) dy`, where
/// `T^{d-1}_y A` is the Taylor polynomial of `A` at `y`.
pub fn apply_taylor_remainder(d: usize, a: &LipschitzProfile, f: &GridFunction, far: FarField) -> Result<GridFunction> {
    if d == 0 || d > MAX_ORDER {
        return invalid(format!("Taylor remainder order {d} is outside 1..={MAX_ORDER}"));
    }
    let dom = f.domain();
    if a.is_polynomial_of_degree(d - 1) {
        return Ok(GridFunction::zeros(dom));
    }
    let st = PvStencil::new(&dom, far)?;
    let derivs: Vec<Extended> = (0..d).map(|k| Extended::new(a, k, &dom, st.reach(), far)).collect();
    let facts: Vec<f64> = (0..d).map(factorial).collect();
    let n = dom.n();
    let fv = f.values();
    // Periodized: A(x) K_{d+1}(t) - sum_k A^{(k)}(y) K_{d+1-k}(t) / k!.
    let kp = match far {
        FarField::Periodic => kernel_powers(&st, d + 1, dom.length()),
        FarField::Truncated(_) => Vec::new(),
    };
    let out = (0..n)
        .into_par_iter()
        .map(|m| {
            let mi = m as isize;
            let ax = derivs[0].at(mi);
            let mut acc = ZERO;
            if !kp.is_empty() {
                for q in 0..st.len() {
                    let idx = mi - st.offsets[q];
                    let mut val = ax * kp[d][q];
                    for (k, e) in derivs.iter().enumerate() {
                        val -= e.at(idx) / facts[k] * kp[d - k][q];
                    }
                    acc += fv[wrap(idx, n)] * (st.weights[q] * val);
                }
                return acc;
            }
            for q in 0..st.len() {
                let idx = mi - st.offsets[q];
                let t = st.nodes[q];
                let mut taylor = 0.0;
                let mut tk = 1.0;
                for (k, e) in derivs.iter().enumerate() {
                    taylor += e.at(idx) * tk / facts[k];
                    tk *= t;
                }
                // tk = t^d here.
                acc += fv[wrap(idx, n)] * (st.weights[q] * (ax - taylor) / (tk * t));
            }
            acc
        })
        .collect();
    finish(dom, out)
}

/// Power series `F(u) = sum c_n u^n` with radius of convergence `radius`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerSeries {
    pub coeffs: Vec<f64>,
    pub radius: f64,
}

impl PowerSeries {
    pub fn new(coeffs: Vec<f64>, radius: f64) -> Result<Self> {
        if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
            return invalid("power series needs finite coefficients");
        }
        if radius.is_nan() || radius <= 0.0 {
            return invalid("radius of convergence must be positive");
        }
        Ok(Self { coeffs, radius })
    }

    /// `F(u) = u`.
    pub fn identity() -> Self {
        Self { coeffs: vec![0.0, 1.0], radius: f64::INFINITY }
    }

    /// `F(u) = 1`.
    pub fn one() -> Self {
        Self { coeffs: vec![1.0], radius: f64::INFINITY }
    }

    /// Coefficients kept for arguments with `|u| <= bound`: the tail starts at the
    /// first term with `|c_n| bound^n < 1e-14` after which all listed terms are smaller.
    pub fn truncated(&self, bound: f64) -> Vec<f64> {
        let mut keep = self.coeffs.len();
        while keep > 1 && self.coeffs[keep - 1].abs() * bound.powi(keep as i32 - 1) < 1e-14 {
            keep -= 1;
        }
        self.coeffs[..keep].to_vec()
    }
}

fn horner(coeffs: &[f64], u: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * u + c)
}

/// One analytic factor `F(Delta-quotient of A)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifferenceFactor {
    pub profile: LipschitzProfile,
    /// One nonzero shift per kernel variable.
    pub shifts: Vec<f64>,
    pub series: PowerSeries,
}

/// `p.v. int f(x + t (+ s)) prod_i F_i(Q_i) dt/t (ds/s)` where
/// `Q_i = Delta_{a t}/t (Delta_{b s}/s) A_i (x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteDifferenceSpec {
    /// Number of kernel variables, 1 or 2.
    pub kernels: usize,
    pub factors: Vec<DifferenceFactor>,
}

impl FiniteDifferenceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.kernels) {
            return invalid("finite-difference operators use one or two kernel variables");
        }
        for fac in &self.factors {
            if fac.shifts.len() != self.kernels {
                return Err(LabError::LengthMismatch { expected: self.kernels, got: fac.shifts.len() });
            }
            if fac.shifts.iter().any(|&c| c == 0.0 || !c.is_finite()) {
                return invalid("shift coefficients must be finite and nonzero");
            }
            let bound = self.quotient_bound(fac);
            if bound >= fac.series.radius {
                return invalid(format!(
                    "sup of the difference quotient ({bound:.3e}) reaches the radius of convergence {}",
                    fac.series.radius
                ));
            }
        }
        Ok(())
    }

    /// `|Q| <= prod |shift| sup |A^{(k)}|` with the sup sampled on a fine mesh.
    fn quotient_bound(&self, fac: &DifferenceFactor) -> f64 {
        let scale: f64 = fac.shifts.iter().map(|c| c.abs()).product();
        let sup = if let Some(r) = fac.profile.support_radius() {
            (0..=4000).map(|i| fac.profile.derivative(self.kernels, -r + 2.0 * r * i as f64 / 4000.0).abs()).fold(0.0, f64::max)
        } else if self.kernels == 1 {
            fac.profile.lip_norm()
        } else {
            (0..=4000).map(|i| fac.profile.derivative(2, -50.0 + 0.025 * i as f64).abs()).fold(0.0, f64::max)
        };
        scale * sup
    }

    fn integer_shifts(&self) -> Option<Vec<Vec<isize>>> {
        self.factors
            .iter()
            .map(|f| f.shifts.iter().map(|&c| if c.fract() == 0.0 { Some(c as isize) } else { None }).collect())
            .collect()
    }
}

/// Evaluates `A` at `x_m + a t_j (+ b s_l)` either from grid samples
/// (integer shifts) or in closed form.
enum ShiftedEval<'a> {
    Grid { ext: Extended, shifts: Vec<isize> },
    Closed { profile: &'a LipschitzProfile, shifts: Vec<f64>, domain: Domain },
}

impl ShiftedEval<'_> {
    /// `A(x_m + sum_v c_v offset_v dx)` for the variables selected by `mask`.
    fn value(&self, m: usize, offs: &[isize], mask: u8) -> f64 {
        match self {
            ShiftedEval::Grid { ext, shifts } => {
                let mut i = m as isize;
                for (v, (&o, &c)) in offs.iter().zip(shifts).enumerate() {
                    if mask & (1 << v) != 0 {
                        i += o * c;
                    }
                }
                ext.at(i)
            }
            ShiftedEval::Closed { profile, shifts, domain } => {
                let mut x = domain.x(m);
                for (v, (&o, &c)) in offs.iter().zip(shifts).enumerate() {
                    if mask & (1 << v) != 0 {
                        x += o as f64 * domain.dx() * c;
                    }
                }
                profile.eval(x)
            }
        }
    }

    /// Un-normalized iterated difference `Delta_{a t} (Delta_{b s}) A(x)`.
    fn difference(&self, m: usize, offs: &[isize]) -> f64 {
        let k = offs.len();
        let mut acc = 0.0;
        for mask in 0u8..(1 << k) {
            let sign = if (k - mask.count_ones() as usize) % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * self.value(m, offs, mask);
        }
        acc
    }
}

/// Finite-difference generalization of the commutators, see [`FiniteDifferenceSpec`].
///
/// With [`FarField::Periodic`] every `F_i` must be a polynomial: the integrand is
/// expanded in monomials of the un-normalized differences, each paired with the
/// periodized kernel of matching power.
pub fn apply_finite_difference_op(spec: &FiniteDifferenceSpec, f: &GridFunction, far: FarField) -> Result<GridFunction> {
    spec.validate()?;
    let series: Vec<Vec<f64>> = spec.factors.iter().map(|fac| fac.series.truncated(spec.quotient_bound(fac))).collect();
    if let [fac] = spec.factors.as_slice() {
        if series[0].len() <= 2
            && fac.shifts.iter().all(|&c| c == 1.0)
            && (far == FarField::Periodic || fac.profile.support_radius().is_some())
        {
            return unit_shift_affine(spec.kernels, &fac.profile, &series[0], f, far);
        }
    }
    let dom = f.domain();
    let st = PvStencil::new(&dom, far)?;
    let n = dom.n();
    let kcount = spec.kernels;
    let evals: Vec<ShiftedEval> = match spec.integer_shifts() {
        Some(ints) => spec
            .factors
            .iter()
            .zip(ints)
            .map(|(fac, sh)| {
                let reach = st.reach() * sh.iter().map(|c| c.unsigned_abs()).sum::<usize>();
                ShiftedEval::Grid { ext: Extended::new(&fac.profile, 0, &dom, reach, far), shifts: sh }
            })
            .collect(),
        None => {
            if far == FarField::Periodic {
                return invalid("non-integer shifts require a truncated far field");
            }
            spec.factors
                .iter()
                .map(|fac| ShiftedEval::Closed { profile: &fac.profile, shifts: fac.shifts.clone(), domain: dom })
                .collect()
        }
    };
    let total_degree: usize = series.iter().map(|c| c.len() - 1).sum();
    if far == FarField::Periodic && total_degree >= MAX_MONOMIAL {
        return invalid("periodic finite-difference operators need polynomial F of small total degree");
    }
    let kp = kernel_powers(&st, total_degree + 1, dom.length());
    let fv = f.values();
    let ns = st.len();
    let inner = if kcount == 1 { 1 } else { ns };
    let out = (0..n)
        .into_par_iter()
        .map(|m| {
            let mut acc = ZERO;
            for q in 0..ns {
                for r in 0..inner {
                    let tup = [q, r];
                    let tup = &tup[..kcount];
                    let offs = [st.offsets[q], st.offsets[r]];
                    let offs = &offs[..kcount];
                    let shift: isize = offs.iter().sum();
                    let w: f64 = tup.iter().map(|&v| st.weights[v]).product();
                    let tprod: f64 = tup.iter().map(|&v| st.nodes[v]).product();
                    let kernel = match far {
                        FarField::Truncated(_) => {
                            let mut val = 1.0 / tprod;
                            for (e, c) in evals.iter().zip(&series) {
                                val *= horner(c, e.difference(m, offs) / tprod);
                            }
                            val
                        }
                        FarField::Periodic => {
                            // prod_i F_i(D_i / T) / T = sum_p c_p D^p T^{-(p+1)} over monomials.
                            let mut poly = [0.0; MAX_MONOMIAL];
                            poly[0] = 1.0;
                            let mut deg = 0;
                            for (e, c) in evals.iter().zip(&series) {
                                let dv = e.difference(m, offs);
                                let mut next = [0.0; MAX_MONOMIAL];
                                let mut dp = 1.0;
                                for (p, &cp) in c.iter().enumerate() {
                                    for (i, &a) in poly[..=deg].iter().enumerate() {
                                        next[i + p] += a * cp * dp;
                                    }
                                    dp *= dv;
                                }
                                deg += c.len() - 1;
                                poly = next;
                            }
                            poly[..=deg]
                                .iter()
                                .enumerate()
                                .map(|(p, &c)| c * tup.iter().map(|&v| kp[p][v]).product::<f64>())
                                .sum()
                        }
                    };
                    acc += fv[wrap(m as isize + shift, n)] * (w * kernel);
                }
            }
            acc
        })
        .collect();
    finish(dom, out)
}

const MAX_MONOMIAL: usize = 13;

/// `D_p g(x) = sum_j w_j K_p(t_j) g(x + t_j)`.
fn forward_sum(g: &GridFunction, p: u32, far: FarField) -> Result<GridFunction> {
    let l = g.domain().length();
    pv_convolve_with(g, |y| C64::new(power_kernel(p, -y, far, l), 0.0), far)
}

/// `F(u) = c_0 + c_1 u` with unit shifts. The double sum separates into
/// convolutions: `Delta_t Delta_s A(x) = A(x+t+s) - A(x+t) - A(x+s) + A(x)` gives
/// `D(D(Af)) - 2 D(A D f) + A D(D f)` with the `K_2` kernel.
fn unit_shift_affine(
    kernels: usize,
    profile: &LipschitzProfile,
    c: &[f64],
    f: &GridFunction,
    far: FarField,
) -> Result<GridFunction> {
    let dom = f.domain();
    let c0 = c[0];
    let c1 = c.get(1).copied().unwrap_or(0.0);
    let a = sample(profile, dom, 0)?;
    let mut out = GridFunction::zeros(dom);
    if c0 != 0.0 {
        let mut g = forward_sum(f, 1, far)?;
        if kernels == 2 {
            g = forward_sum(&g, 1, far)?;
        }
        out = out.add(&g.scale(C64::new(c0, 0.0)))?;
    }
    if c1 != 0.0 && !profile.is_polynomial_of_degree(0) {
        let two = C64::new(2.0, 0.0);
        let g = if kernels == 1 {
            forward_sum(&a.mul(f)?, 2, far)?.sub(&a.mul(&forward_sum(f, 2, far)?)?)?
        } else {
            let df = forward_sum(f, 2, far)?;
            let t1 = forward_sum(&forward_sum(&a.mul(f)?, 2, far)?, 2, far)?;
            let t2 = forward_sum(&a.mul(&df)?, 2, far)?.scale(two);
            let t3 = a.mul(&forward_sum(&df, 2, far)?)?;
            t1.sub(&t2)?.add(&t3)?
        };
        out = out.add(&g.scale(C64::new(c1, 0.0)))?;
    }
    Ok(out)
}

/// Circular commutator of `A', B', C'` on the torus:
/// `p.v. int (Delta_{a t1}/t1 A(x + t2)) (Delta_{b t2}/t2 B(x + t3)) (Delta_{c t3}/t3 C(x + t1)) dt1/t1 dt2/t2 dt3/t3`.
///
/// `A, B, C` are recovered from the inputs as `mu x + P`; the mean part pairs
/// with `K_1` and the periodic part with `K_2`.
pub fn apply_circular(coefs: [i64; 3], inputs: [&GridFunction; 3]) -> Result<GridFunction> {
    if coefs.contains(&0) {
        return invalid("circular coefficients must be nonzero");
    }
    same_domain(inputs[0], inputs[1])?;
    same_domain(inputs[0], inputs[2])?;
    let dom = inputs[0].domain();
    let n = dom.n();
    let st = PvStencil::new(&dom, FarField::Periodic)?;
    let k1 = kernel_table(&st, 1, dom.length());
    let k2 = kernel_table(&st, 2, dom.length());
    let slots: Vec<SlotData> = inputs.iter().map(|g| SlotData::new(g)).collect();
    let ns = st.len();
    let out = (0..n)
        .into_par_iter()
        .map(|m| {
            // factor[s][(u, v)]: slot s differenced in variable u, evaluated at x + t_v.
            let factor = |s: usize, qu: usize, qv: usize| -> C64 {
                let c = coefs[s] as isize;
                let base = m as isize + st.offsets[qv];
                let sd = &slots[s];
                let delta = sd.p[wrap(base + c * st.offsets[qu], n)] - sd.p[wrap(base, n)];
                (sd.mu * (c as f64) * k1[qu] + delta * k2[qu]) * st.weights[qu]
            };
            let u: Vec<C64> = (0..ns * ns).map(|i| factor(0, i / ns, i % ns)).collect();
            let v: Vec<C64> = (0..ns * ns).map(|i| factor(1, i / ns, i % ns)).collect();
            let w: Vec<C64> = (0..ns * ns).map(|i| factor(2, i / ns, i % ns)).collect();
            // sum_{q1,q2,q3} U[q1][q2] V[q2][q3] W[q3][q1]
            let mut acc = ZERO;
            for q2 in 0..ns {
                for q1 in 0..ns {
                    let mut vw = ZERO;
                    for q3 in 0..ns {
                        vw += v[q2 * ns + q3] * w[q3 * ns + q1];
                    }
                    acc += u[q1 * ns + q2] * vw;
                }
            }
            acc
        })
        .collect();
    finish(dom, out)
}

/// Symbol route for [`apply_circular`]:
/// `(i pi)^3 abc m_1(xi_3, a xi_1) m_1(xi_1, b xi_2) m_1(xi_2, c xi_3)`.
pub fn circular_multiplier(coefs: [i64; 3], inputs: [&GridFunction; 3], budget: u128) -> Result<GridFunction> {
    let [a, b, c] = coefs.map(|v| v as f64);
    let scale = (I * PI).powi(3) * (a * b * c);
    apply_multiplier(
        |fr| {
            scale
                * (commutator_symbol(fr[2], &[a * fr[0]])
                    * commutator_symbol(fr[0], &[b * fr[1]])
                    * commutator_symbol(fr[1], &[c * fr[2]]))
        },
        inputs[0],
        &[inputs[1].clone(), inputs[2].clone()],
        budget,
    )
}

/// Named exact identities checked by [`identity_residuals`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdentityTag {
    /// `(HA - AH)(f') + H(A'f) - C_1 f = 0`.
    Calc1,
    /// `(HA - AH)(f'') - H(A''f) + 2 R_2 f = 0`, `R_2` the second Taylor-remainder operator.
    Calc2,
    /// `C_{1,A} 1 - H(A') = 0`.
    T1C1,
    /// `C_{2,A,B} 1 - C_{1,B}(A')/2 - C_{1,A}(B')/2 = 0`.
    T1C2,
    /// `T_{1,A} 1 + pi^2 A'' = 0` with unit shifts.
    T1T1A,
}

impl IdentityTag {
    pub const ALL: [IdentityTag; 5] =
        [IdentityTag::Calc1, IdentityTag::Calc2, IdentityTag::T1C1, IdentityTag::T1C2, IdentityTag::T1T1A];
}

impl fmt::Display for IdentityTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IdentityTag::Calc1 => "calc1",
            IdentityTag::Calc2 => "calc2",
            IdentityTag::T1C1 => "t1_c1",
            IdentityTag::T1C2 => "t1_c2",
            IdentityTag::T1T1A => "t1_T1A",
        })
    }
}

impl FromStr for IdentityTag {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        IdentityTag::ALL.into_iter().find(|t| t.to_string() == s).ok_or_else(|| LabError::UnknownTag(s.to_string()))
    }
}

#[derive(Clone, Debug)]
pub struct IdentityReport {
    pub tag: IdentityTag,
    /// Left side minus right side on the whole grid.
    pub residual: GridFunction,
    /// Indices with `|x| <= L/8`.
    pub interior: Vec<usize>,
    pub sup: f64,
    pub l2: f64,
    /// Sup of the largest single term on the interior, for relative reporting.
    pub scale: f64,
}

/// Evaluates both sides of an exact identity for smooth decaying `A`, `B`, `f`.
///
/// The commutator-calculus identities use the cutoff `R = L/4`; the T1
/// identities act on the constant function and use the periodized kernels,
/// since a truncated kernel leaves an `O(1/R)` error on non-decaying inputs.
pub fn identity_residuals(
    tag: IdentityTag,
    a: &LipschitzProfile,
    b: &LipschitzProfile,
    f: &LipschitzProfile,
    domain: Domain,
) -> Result<IdentityReport> {
    let trunc = FarField::default_for(&domain);
    let per = FarField::Periodic;
    let one = GridFunction::constant(domain, C64::new(1.0, 0.0));
    let av = sample(a, domain, 0)?;
    let (lhs, rhs): (Vec<GridFunction>, Vec<GridFunction>) = match tag {
        IdentityTag::Calc1 => {
            let f0 = sample(f, domain, 0)?;
            let f1 = sample(f, domain, 1)?;
            let a1 = sample(a, domain, 1)?;
            let t1 = apply_hilbert(&av.mul(&f1)?, trunc)?;
            let t2 = av.mul(&apply_hilbert(&f1, trunc)?)?;
            let t3 = apply_hilbert(&a1.mul(&f0)?, trunc)?;
            let t4 = apply_commutator_kernel(1, a, &f0, trunc)?;
            (vec![t1, t3], vec![t2, t4])
        }
        IdentityTag::Calc2 => {
            let f0 = sample(f, domain, 0)?;
            let f2 = sample(f, domain, 2)?;
            let a2 = sample(a, domain, 2)?;
            let t1 = apply_hilbert(&av.mul(&f2)?, trunc)?;
            let t2 = av.mul(&apply_hilbert(&f2, trunc)?)?;
            let t3 = apply_hilbert(&a2.mul(&f0)?, trunc)?;
            let t4 = apply_taylor_remainder(2, a, &f0, trunc)?.scale(C64::new(2.0, 0.0));
            (vec![t1, t4], vec![t2, t3])
        }
        IdentityTag::T1C1 => {
            let c1 = apply_commutator_kernel(1, a, &one, per)?;
            let h = apply_hilbert(&sample(a, domain, 1)?, per)?;
            (vec![c1], vec![h])
        }
        IdentityTag::T1C2 => {
            let c2 = apply_commutator_profiles(&[a, b], &one, per)?;
            let half = C64::new(0.5, 0.0);
            let r1 = apply_commutator_kernel(1, b, &sample(a, domain, 1)?, per)?.scale(half);
            let r2 = apply_commutator_kernel(1, a, &sample(b, domain, 1)?, per)?.scale(half);
            (vec![c2], vec![r1, r2])
        }
        IdentityTag::T1T1A => {
            let spec = FiniteDifferenceSpec {
                kernels: 2,
                factors: vec![DifferenceFactor {
                    profile: a.clone(),
                    shifts: vec![1.0, 1.0],
                    series: PowerSeries::identity(),
                }],
            };
            let t = apply_finite_difference_op(&spec, &one, per)?;
            let a2 = sample(a, domain, 2)?.scale(C64::new(-PI * PI, 0.0));
            (vec![t], vec![a2])
        }
    };
    let interior = domain.interior(domain.length() / 8.0);
    let scale = lhs.iter().chain(&rhs).map(|g| g.sup_on(&interior)).fold(0.0, f64::max);
    let mut residual = GridFunction::zeros(domain);
    for g in &lhs {
        residual = residual.add(g)?;
    }
    for g in &rhs {
        residual = residual.sub(g)?;
    }
    let sup = residual.sup_on(&interior);
    let l2 = (interior.iter().map(|&m| residual.values()[m].norm_sqr()).sum::<f64>() * domain.dx()).sqrt();
    Ok(IdentityReport { tag, residual, interior, sup, l2, scale })
}


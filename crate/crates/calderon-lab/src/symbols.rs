//! Commutator symbols `m_d`, their variants, Monte-Carlo oracles, and windowed
//! double Fourier coefficients with decay fits.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::gridcore::{fft_in_place, C64};
use crate::lp_decomp::{build_family, smooth_bump, FamilyKind};
use crate::quadrature::{gauss_legendre, gauss_legendre_on};
use crate::stats::{fit_line, LineFit};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SymbolSpec {
    /// `m_d(xi, xi_1..xi_d) = int_{[0,1]^d} sgn(xi + sum a_j xi_j) da`.
    Commutator { d: usize },
    /// `(d!)^{-k} int_{[0,1]^k} sgn(xi + sum a_j xi_j) prod (1 - a_j)^d da`.
    TaylorWeighted { k: usize, d: usize },
    /// `m_k(xi, xi_1..xi_k)^d`.
    Power { k: usize, d: usize },
    /// `prod_i m_k(xi, c^i_1 xi_1, .., c^i_k xi_k)`; one row per factor.
    Product { coeffs: Vec<Vec<f64>> },
    /// `m_1(xi_3, xi_1) m_1(xi_1, xi_2) m_1(xi_2, xi_3)`.
    Circular,
}

impl SymbolSpec {
    pub fn arity(&self) -> usize {
        match self {
            SymbolSpec::Commutator { d } => d + 1,
            SymbolSpec::TaylorWeighted { k, .. } | SymbolSpec::Power { k, .. } => k + 1,
            SymbolSpec::Product { coeffs } => coeffs.first().map_or(1, |r| r.len() + 1),
            SymbolSpec::Circular => 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SymbolSpec::Product { coeffs } => {
                let Some(first) = coeffs.first() else {
                    return invalid("product symbol needs at least one factor");
                };
                if coeffs.iter().any(|r| r.len() != first.len()) {
                    return invalid("product coefficient matrix is ragged");
                }
                if coeffs.iter().flatten().any(|&c| c == 0.0 || !c.is_finite()) {
                    return invalid("product coefficients must be finite and nonzero");
                }
                Ok(())
            }
            SymbolSpec::TaylorWeighted { k, .. } if *k == 0 => invalid("TaylorWeighted needs k >= 1"),
            _ => Ok(()),
        }
    }
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `Vol{a in [0,1]^d : c0 + sum a_j w_j < 0}` by inclusion-exclusion over the
/// cube vertices. Zero weights are integrated out.
fn halfspace_below(c0: f64, w: &[f64]) -> f64 {
    let mut t = -c0;
    let mut ws: Vec<f64> = Vec::with_capacity(w.len());
    for &v in w {
        if v < 0.0 {
            // a -> 1 - a turns a negative weight positive.
            t -= v;
            ws.push(-v);
        } else if v > 0.0 {
            ws.push(v);
        }
    }
    if ws.is_empty() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let total: f64 = ws.iter().sum();
    if t <= 0.0 {
        return 0.0;
    }
    if t >= total {
        return 1.0;
    }
    let (t, flip) = if t > 0.5 * total { (total - t, true) } else { (t, false) };
    let d = ws.len();
    let mut acc = 0.0;
    for mask in 0u32..(1 << d) {
        let mut s = t;
        for (j, &v) in ws.iter().enumerate() {
            if mask & (1 << j) != 0 {
                s -= v;
            }
        }
        if s > 0.0 {
            let term = s.powi(d as i32);
            if mask.count_ones() % 2 == 0 {
                acc += term;
            } else {
                acc -= term;
            }
        }
    }
    let denom: f64 = ws.iter().product::<f64>() * (1..=d).map(|i| i as f64).product::<f64>();
    let v = (acc / denom).clamp(0.0, 1.0);
    if flip {
        1.0 - v
    } else {
        v
    }
}

/// `int_{[0,1]^d} sgn(xi + sum a_j xi_j) da`, odd in its arguments by construction.
pub fn commutator_symbol(xi: f64, rest: &[f64]) -> f64 {
    let neg: Vec<f64> = rest.iter().map(|v| -v).collect();
    halfspace_below(-xi, &neg) - halfspace_below(xi, rest)
}

/// `int_0^1 sgn(xi + a xi_1) (1 - a)^d da`.
fn taylor_one(xi: f64, xi1: f64, d: usize) -> f64 {
    let dp1 = (d + 1) as f64;
    if xi1 == 0.0 {
        return sgn(xi) / dp1;
    }
    let astar = -xi / xi1;
    if astar <= 0.0 || astar >= 1.0 {
        let s = if xi != 0.0 { sgn(xi) } else { sgn(xi1) };
        return s / dp1;
    }
    let s0 = sgn(xi);
    let tail = (1.0 - astar).powi(d as i32 + 1);
    (s0 * (1.0 - tail) - s0 * tail) / dp1
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

fn taylor_weighted(k: usize, d: usize, f: &[f64]) -> f64 {
    let norm = factorial(d).powi(k as i32);
    let xi = f[0];
    match k {
        1 => taylor_one(xi, f[1], d) / norm,
        2 => {
            let (xi1, xi2) = (f[1], f[2]);
            let mut cuts = vec![0.0, 1.0];
            if xi2 != 0.0 {
                for b in [-xi / xi2, -(xi + xi1) / xi2] {
                    if b > 0.0 && b < 1.0 {
                        cuts.push(b);
                    }
                }
            }
            cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut acc = 0.0;
            for w in cuts.windows(2) {
                if w[1] - w[0] <= 0.0 {
                    continue;
                }
                for (b, wt) in gauss_legendre_on(16, w[0], w[1]) {
                    acc += wt * (1.0 - b).powi(d as i32) * taylor_one(xi + b * xi2, xi1, d);
                }
            }
            acc / norm
        }
        _ => {
            // Innermost axis in closed form, tensor Gauss-Legendre on the rest.
            let (x, w) = gauss_legendre(64);
            let outer = k - 1;
            let mut idx = vec![0usize; outer];
            let mut acc = 0.0;
            loop {
                let mut shift = xi;
                let mut weight = 1.0;
                for (j, &i) in idx.iter().enumerate() {
                    let a = 0.5 * (x[i] + 1.0);
                    shift += a * f[j + 2];
                    weight *= 0.5 * w[i] * (1.0 - a).powi(d as i32);
                }
                acc += weight * taylor_one(shift, f[1], d);
                let mut j = 0;
                while j < outer {
                    idx[j] += 1;
                    if idx[j] < 64 {
                        break;
                    }
                    idx[j] = 0;
                    j += 1;
                }
                if j == outer {
                    break;
                }
            }
            acc / norm
        }
    }
}

fn check_args(spec: &SymbolSpec, freqs: &[f64]) -> Result<()> {
    spec.validate()?;
    if freqs.len() != spec.arity() {
        return Err(LabError::LengthMismatch { expected: spec.arity(), got: freqs.len() });
    }
    if let Some(index) = freqs.iter().position(|v| !v.is_finite()) {
        return Err(LabError::NonFinite { what: "symbol argument", index });
    }
    Ok(())
}

/// Exact value of the symbol at `freqs = (xi, xi_1, ..)`.
pub fn eval_symbol_exact(spec: &SymbolSpec, freqs: &[f64]) -> Result<f64> {
    check_args(spec, freqs)?;
    Ok(symbol_value(spec, freqs))
}

/// [`eval_symbol_exact`] without argument checks, for inner loops.
pub(crate) fn symbol_value(spec: &SymbolSpec, f: &[f64]) -> f64 {
    match spec {
        SymbolSpec::Commutator { .. } => commutator_symbol(f[0], &f[1..]),
        SymbolSpec::TaylorWeighted { k, d } => taylor_weighted(*k, *d, f),
        SymbolSpec::Power { d, .. } => commutator_symbol(f[0], &f[1..]).powi(*d as i32),
        SymbolSpec::Product { coeffs } => coeffs
            .iter()
            .map(|row| {
                let scaled: Vec<f64> = row.iter().zip(&f[1..]).map(|(c, v)| c * v).collect();
                commutator_symbol(f[0], &scaled)
            })
            .product(),
        SymbolSpec::Circular => {
            commutator_symbol(f[2], &[f[0]]) * commutator_symbol(f[0], &[f[1]]) * commutator_symbol(f[1], &[f[2]])
        }
    }
}

/// Monte-Carlo estimate of the hypercube average; returns `(mean, standard error)`.
pub fn eval_symbol_mc(spec: &SymbolSpec, freqs: &[f64], samples: usize, seed: u64) -> Result<(f64, f64)> {
    check_args(spec, freqs)?;
    if samples < 100 {
        return invalid("at least 100 samples are required");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = freqs;
    let mut draw = || -> f64 {
        match spec {
            SymbolSpec::Commutator { .. } => {
                let mut s = f[0];
                for &v in &f[1..] {
                    s += rng.gen::<f64>() * v;
                }
                sgn(s)
            }
            SymbolSpec::TaylorWeighted { d, .. } => {
                let mut s = f[0];
                let mut w = 1.0;
                for &v in &f[1..] {
                    let a = rng.gen::<f64>();
                    s += a * v;
                    w *= (1.0 - a).powi(*d as i32);
                }
                sgn(s) * w
            }
            SymbolSpec::Power { d, .. } => {
                let mut p = 1.0;
                for _ in 0..*d {
                    let mut s = f[0];
                    for &v in &f[1..] {
                        s += rng.gen::<f64>() * v;
                    }
                    p *= sgn(s);
                }
                p
            }
            SymbolSpec::Product { coeffs } => {
                let mut p = 1.0;
                for row in coeffs {
                    let mut s = f[0];
                    for (c, &v) in row.iter().zip(&f[1..]) {
                        s += rng.gen::<f64>() * c * v;
                    }
                    p *= sgn(s);
                }
                p
            }
            SymbolSpec::Circular => {
                let a: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
                sgn(f[2] + a[0] * f[0]) * sgn(f[0] + a[1] * f[1]) * sgn(f[1] + a[2] * f[2])
            }
        }
    };
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let v = draw();
        sum += v;
        sum_sq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    let norm = match spec {
        SymbolSpec::TaylorWeighted { k, d } => factorial(*d).powi(*k as i32),
        _ => 1.0,
    };
    Ok((mean / norm, var.sqrt() / n.sqrt() / norm))
}

/// `m_1(xi, xi_1) = (|xi + xi_1| - |xi|) / xi_1`.
pub fn m1_closed_form(xi: f64, xi1: f64) -> Result<f64> {
    if !(xi.is_finite() && xi1.is_finite()) {
        return Err(LabError::NonFinite { what: "symbol argument", index: 0 });
    }
    if xi1 == 0.0 {
        return invalid("xi_1 = 0: use sgn(xi)");
    }
    Ok((((xi + xi1).abs() - xi.abs()) / xi1).clamp(-1.0, 1.0))
}

type Window = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Frequency windows `Phi-hat(xi~)` and `Psi-hat(xi_1)`, both supported in `[-1, 1]`.
#[derive(Clone)]
pub struct WindowPair {
    pub name: String,
    phi: Window,
    psi: Window,
}

impl std::fmt::Debug for WindowPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "WindowPair({})", self.name)
    }
}

impl WindowPair {
    pub fn new(
        name: impl Into<String>,
        phi: impl Fn(f64) -> f64 + Send + Sync + 'static,
        psi: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), phi: Arc::new(phi), psi: Arc::new(psi) }
    }

    /// Compact family at scale 0 in both slots.
    pub fn standard() -> Self {
        let fam = build_family(FamilyKind::Compact);
        Self::new("compact-phi/psi", move |x| fam.phi_hat(x), move |x| fam.psi_hat(x))
    }

    /// Both slots of Psi type (the configuration with two mean-zero windows).
    pub fn psi_psi() -> Self {
        let fam = build_family(FamilyKind::Compact);
        Self::new("compact-psi/psi", move |x| fam.psi_hat(x), move |x| fam.psi_hat(x))
    }

    pub fn phi(&self, x: f64) -> f64 {
        (self.phi)(x)
    }

    pub fn psi(&self, x: f64) -> f64 {
        (self.psi)(x)
    }

    fn integrand(&self, a: f64, b: f64) -> f64 {
        let pb = self.psi(b);
        if pb == 0.0 {
            return 0.0;
        }
        let pa = self.phi(a);
        if pa == 0.0 {
            return 0.0;
        }
        commutator_symbol(a, &[b]) * pa * pb
    }

    /// Integrand folded onto `[0, 1)^2` at spacing `1/m`.
    fn folded(&self, m: usize) -> Vec<f64> {
        let h = 1.0 / m as f64;
        let mut g = vec![0.0; m * m];
        for a in 0..=2 * m {
            let xa = -1.0 + a as f64 * h;
            for b in 0..=2 * m {
                let xb = -1.0 + b as f64 * h;
                let v = self.integrand(xa, xb);
                if v != 0.0 {
                    g[(a % m) * m + (b % m)] += v;
                }
            }
        }
        g
    }
}

pub const MIN_RESOLUTION: usize = 64;

fn check_resolution(m: usize) -> Result<()> {
    if m < MIN_RESOLUTION || !m.is_power_of_two() {
        return invalid(format!("resolution {m} must be a power of two >= {MIN_RESOLUTION}"));
    }
    Ok(())
}

/// `C_{n,n1} = int int m_1(a, b) Phi-hat(a) Psi-hat(b) e^{-2 pi i (n a + n1 b)} da db`
/// by the trapezoid rule at spacing `1/resolution`.
pub fn fourier_coeff(windows: &WindowPair, n: i64, n1: i64, resolution: usize) -> Result<C64> {
    check_resolution(resolution)?;
    let m = resolution;
    let g = windows.folded(m);
    let h = 1.0 / m as f64;
    let mut acc = C64::new(0.0, 0.0);
    for a in 0..m {
        for b in 0..m {
            let v = g[a * m + b];
            if v != 0.0 {
                let ph = -2.0 * PI * ((n * a as i64 + n1 * b as i64).rem_euclid(m as i64)) as f64 / m as f64;
                acc += C64::from_polar(v, ph);
            }
        }
    }
    Ok(acc * h * h)
}

/// Table of `C_{n,n1}` for `-M/2 <= n, n1 < M/2`, stored in FFT order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoeffTable {
    pub windows: String,
    pub resolution: usize,
    values: Vec<C64>,
}

impl CoeffTable {
    /// All coefficients at once from one folded two-dimensional FFT.
    pub fn build(windows: &WindowPair, resolution: usize) -> Result<Self> {
        check_resolution(resolution)?;
        let m = resolution;
        let h2 = 1.0 / (m * m) as f64;
        let mut data: Vec<C64> = windows.folded(m).into_iter().map(|v| C64::new(v * h2, 0.0)).collect();
        for row in data.chunks_mut(m) {
            fft_in_place(row, false);
        }
        let mut col = vec![C64::new(0.0, 0.0); m];
        for b in 0..m {
            for a in 0..m {
                col[a] = data[a * m + b];
            }
            fft_in_place(&mut col, false);
            for a in 0..m {
                data[a * m + b] = col[a];
            }
        }
        Ok(Self { windows: windows.name.clone(), resolution: m, values: data })
    }

    /// Table filled from a formula, for self-tests of the fitting code.
    pub fn from_fn(resolution: usize, f: impl Fn(i64, i64) -> C64) -> Result<Self> {
        check_resolution(resolution)?;
        let m = resolution as i64;
        let mut values = vec![C64::new(0.0, 0.0); resolution * resolution];
        for a in 0..m {
            for b in 0..m {
                let n = if a < m / 2 { a } else { a - m };
                let n1 = if b < m / 2 { b } else { b - m };
                values[(a * m + b) as usize] = f(n, n1);
            }
        }
        Ok(Self { windows: "synthetic".into(), resolution, values })
    }

    pub fn half(&self) -> i64 {
        (self.resolution / 2) as i64
    }

    /// The trapezoid coefficients are `M`-periodic, so `n = M/2` aliases `-M/2`.
    pub fn get(&self, n: i64, n1: i64) -> Option<C64> {
        let h = self.half();
        if n < -h || n > h || n1 < -h || n1 > h {
            return None;
        }
        let m = self.resolution as i64;
        Some(self.values[(n.rem_euclid(m) * m + n1.rem_euclid(m)) as usize])
    }

    /// CSV rows `n,n1,re,im,abs` for `|n|, |n1| <= extent`.
    pub fn write_csv<W: Write>(&self, out: W, extent: i64) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "n1", "re", "im", "abs"])?;
        let e = extent.min(self.half() - 1);
        for n in -e..=e {
            for n1 in -e..=e {
                let c = self.get(n, n1).unwrap();
                w.write_record(&[
                    n.to_string(),
                    n1.to_string(),
                    format!("{:e}", c.re),
                    format!("{:e}", c.im),
                    format!("{:e}", c.norm()),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    N,
    N1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub axis: Axis,
    pub fixed: i64,
    pub range: (i64, i64),
    pub fit: LineFit,
    /// Indices dropped because the coefficient was exactly zero.
    pub excluded: Vec<i64>,
}

impl DecayFit {
    pub fn slope(&self) -> f64 {
        self.fit.slope
    }
}

/// Slope of `log |C|` against `log(2 + |n|)` along one axis, the other index fixed.
pub fn fit_decay(table: &CoeffTable, axis: Axis, range: (i64, i64), fixed: i64) -> Result<DecayFit> {
    let (lo, hi) = range;
    if hi - lo + 1 < 6 {
        return invalid("at least 6 points are needed along the axis");
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut excluded = Vec::new();
    for n in lo..=hi {
        let c = match axis {
            Axis::N => table.get(n, fixed),
            Axis::N1 => table.get(fixed, n),
        }
        .ok_or_else(|| LabError::InvalidArgument(format!("index {n} outside the table")))?;
        if c.norm() == 0.0 {
            excluded.push(n);
            continue;
        }
        xs.push((2.0 + n.abs() as f64).ln());
        ys.push(c.norm().ln());
    }
    if xs.len() < 2 {
        return invalid("fewer than two nonzero coefficients");
    }
    Ok(DecayFit { axis, fixed, range, fit: fit_line(&xs, &ys), excluded })
}

/// Three-dimensional coefficient of the second-commutator configuration:
/// windows on `[-2,-1]`, `[1,2]`, `[-1/2,1/2]` and the indicator-form symbol
/// `int int 1_{>0}(xi + a xi_1 + b xi_2) da db`. Returns the table over
/// `-M/2 <= n, n1, n2 < M/2` in FFT order (flattened, `n` slowest).
pub fn whitney3_table(resolution: usize) -> Result<Vec<C64>> {
    if resolution < 16 || !resolution.is_power_of_two() {
        return invalid("resolution must be a power of two >= 16");
    }
    let m = resolution;
    let h = 1.0 / m as f64;
    let w0 = |x: f64| smooth_bump(x, -1.5, 0.5);
    let w1 = |x: f64| smooth_bump(x, 1.5, 0.5);
    let w2 = |x: f64| smooth_bump(x, 0.0, 0.5);
    let mut data = vec![C64::new(0.0, 0.0); m * m * m];
    for a in 0..m {
        let xa = -2.0 + a as f64 * h;
        let va = w0(xa);
        if va == 0.0 {
            continue;
        }
        for b in 0..m {
            let xb = 1.0 + b as f64 * h;
            let vb = w1(xb);
            if vb == 0.0 {
                continue;
            }
            for c in 0..m {
                let xc = -0.5 + c as f64 * h;
                let vc = w2(xc);
                if vc == 0.0 {
                    continue;
                }
                let ind = 0.5 * (1.0 + commutator_symbol(xa, &[xb, xc]));
                // Sample index = position mod 1 so the DFT phase is exact.
                let ia = ((xa + 4.0) * m as f64).round() as usize % m;
                let ib = ((xb + 4.0) * m as f64).round() as usize % m;
                let ic = ((xc + 4.0) * m as f64).round() as usize % m;
                data[(ia * m + ib) * m + ic] += C64::new(ind * va * vb * vc * h * h * h, 0.0);
            }
        }
    }
    // 3D FFT along each axis.
    let mut line = vec![C64::new(0.0, 0.0); m];
    for axis in 0..3 {
        for i in 0..m {
            for j in 0..m {
                let idx = |k: usize| match axis {
                    0 => (k * m + i) * m + j,
                    1 => (i * m + k) * m + j,
                    _ => (i * m + j) * m + k,
                };
                for k in 0..m {
                    line[k] = data[idx(k)];
                }
                fft_in_place(&mut line, false);
                for k in 0..m {
                    data[idx(k)] = line[k];
                }
            }
        }
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halfspace_simple() {
        assert!((halfspace_below(-0.5, &[1.0]) - 0.5).abs() < 1e-15);
        assert!((halfspace_below(-0.5, &[1.0, 1.0]) - 0.125).abs() < 1e-15);
        assert_eq!(halfspace_below(1.0, &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn taylor_k2_matches_tensor_rule() {
        for f in [[0.3, -1.0, 0.7], [-0.2, 0.5, 0.4], [1.0, -3.0, 1.5]] {
            let exact = taylor_weighted(2, 2, &f);
            // Brute force: fine midpoint grid.
            let m = 2000;
            let mut acc = 0.0;
            for i in 0..m {
                let a = (i as f64 + 0.5) / m as f64;
                for j in 0..m {
                    let b = (j as f64 + 0.5) / m as f64;
                    acc += sgn(f[0] + a * f[1] + b * f[2]) * ((1.0 - a) * (1.0 - b)).powi(2);
                }
            }
            acc /= (m * m) as f64 * 4.0;
            assert!((exact - acc).abs() < 2e-4, "{exact} vs {acc}");
        }
    }
}

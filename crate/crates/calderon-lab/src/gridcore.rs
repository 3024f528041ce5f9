//! Uniform periodic grids, discrete Fourier transforms, norms and
//! principal-value convolution.
//!
//! The real line is modelled by the torus `[-L/2, L/2)` sampled at
//! `x_m = -L/2 + m dx`. Fourier coefficients are indexed by integer
//! frequencies `xi` (physical frequency `xi / L`) and stored in FFT order.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub type C64 = Complex64;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    length: f64,
    n: usize,
}

impl Domain {
    pub fn new(length: f64, n: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(LabError::InvalidDomain(format!("length {length} must be positive")));
        }
        if n < 2 || !n.is_power_of_two() {
            return Err(LabError::InvalidDomain(format!("n = {n} must be a power of two >= 2")));
        }
        Ok(Self { length, n })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn x(&self, m: usize) -> f64 {
        -0.5 * self.length + m as f64 * self.dx()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|m| self.x(m)).collect()
    }

    /// Integer frequency stored at FFT slot `k`, in `[-n/2, n/2)`.
    pub fn freq(&self, k: usize) -> i64 {
        let n = self.n as i64;
        let k = k as i64;
        if k < n / 2 {
            k
        } else {
            k - n
        }
    }

    /// FFT slot of an integer frequency, or `None` outside `[-n/2, n/2)`.
    pub fn slot(&self, xi: i64) -> Option<usize> {
        let half = (self.n / 2) as i64;
        if xi < -half || xi >= half {
            None
        } else {
            Some(xi.rem_euclid(self.n as i64) as usize)
        }
    }

    /// Physical frequency `xi / L`.
    pub fn nu(&self, xi: i64) -> f64 {
        xi as f64 / self.length
    }

    /// Grid indices with `|x| <= radius`.
    pub fn interior(&self, radius: f64) -> Vec<usize> {
        (0..self.n).filter(|&m| self.x(m).abs() <= radius + 1e-12).collect()
    }

    fn same_as(&self, other: &Domain) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(LabError::DomainMismatch)
        }
    }
}

fn check_finite(values: &[C64], what: &'static str) -> Result<()> {
    match values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
        Some(index) => Err(LabError::NonFinite { what, index }),
        None => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    domain: Domain,
    values: Vec<C64>,
}

impl GridFunction {
    pub fn new(domain: Domain, values: Vec<C64>) -> Result<Self> {
        if values.len() != domain.n {
            return Err(LabError::LengthMismatch { expected: domain.n, got: values.len() });
        }
        check_finite(&values, "grid values")?;
        Ok(Self { domain, values })
    }

    /// Skips validation; callers guarantee length and finiteness.
    pub(crate) fn from_raw(domain: Domain, values: Vec<C64>) -> Self {
        debug_assert_eq!(values.len(), domain.n);
        Self { domain, values }
    }

    pub fn from_real(domain: Domain, values: &[f64]) -> Result<Self> {
        Self::new(domain, values.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    pub fn from_fn(domain: Domain, f: impl Fn(f64) -> C64) -> Result<Self> {
        Self::new(domain, domain.points().into_iter().map(f).collect())
    }

    pub fn from_real_fn(domain: Domain, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_fn(domain, |x| C64::new(f(x), 0.0))
    }

    pub fn zeros(domain: Domain) -> Self {
        Self { domain, values: vec![C64::new(0.0, 0.0); domain.n] }
    }

    pub fn constant(domain: Domain, c: C64) -> Self {
        Self { domain, values: vec![c; domain.n] }
    }

    /// `exp(2 pi i xi x / L)`.
    pub fn mode(domain: Domain, xi: i64) -> Self {
        let nu = domain.nu(xi);
        let values = domain.points().into_iter().map(|x| C64::from_polar(1.0, 2.0 * PI * nu * x)).collect();
        Self { domain, values }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn re(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Result<Self> {
        Self::new(self.domain, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(C64, C64) -> C64) -> Result<Self> {
        self.domain.same_as(&other.domain)?;
        Self::new(self.domain, self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, c: C64) -> Self {
        Self { domain: self.domain, values: self.values.iter().map(|&v| v * c).collect() }
    }

    pub fn conj(&self) -> Self {
        Self { domain: self.domain, values: self.values.iter().map(|v| v.conj()).collect() }
    }

    /// Riemann sum `sum f dx`.
    pub fn integral(&self) -> C64 {
        self.values.iter().sum::<C64>() * self.domain.dx()
    }

    /// Bilinear pairing `sum f g dx` (no conjugation).
    pub fn pair(&self, other: &Self) -> Result<C64> {
        self.domain.same_as(&other.domain)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<C64>() * self.domain.dx())
    }

    /// Sup of `|f|` over the given indices.
    pub fn sup_on(&self, indices: &[usize]) -> f64 {
        indices.iter().map(|&m| self.values[m].norm()).fold(0.0, f64::max)
    }

    /// `f(x + a)` by a spectral phase shift.
    pub fn translate(&self, a: f64) -> Self {
        let mut s = forward_transform(self);
        let d = self.domain;
        for k in 0..d.n {
            s.coeffs[k] *= C64::from_polar(1.0, 2.0 * PI * d.nu(d.freq(k)) * a);
        }
        inverse_transform(&s)
    }
}

/// Fourier coefficients `c(xi) = dx sum_m f(x_m) exp(-2 pi i xi x_m / L)` in FFT order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    domain: Domain,
    coeffs: Vec<C64>,
}

impl Spectrum {
    pub fn new(domain: Domain, coeffs: Vec<C64>) -> Result<Self> {
        if coeffs.len() != domain.n {
            return Err(LabError::LengthMismatch { expected: domain.n, got: coeffs.len() });
        }
        check_finite(&coeffs, "spectrum")?;
        Ok(Self { domain, coeffs })
    }

    pub fn zeros(domain: Domain) -> Self {
        Self { domain, coeffs: vec![C64::new(0.0, 0.0); domain.n] }
    }

    /// Builds a spectrum from a function of the integer frequency.
    pub fn from_fn(domain: Domain, f: impl Fn(i64) -> C64) -> Result<Self> {
        Self::new(domain, (0..domain.n).map(|k| f(domain.freq(k))).collect())
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [C64] {
        &mut self.coeffs
    }

    /// Coefficient at integer frequency `xi`; zero outside the band.
    pub fn get(&self, xi: i64) -> C64 {
        self.domain.slot(xi).map_or(C64::new(0.0, 0.0), |k| self.coeffs[k])
    }

    /// Multiplies every coefficient by `m(nu)` with `nu = xi / L`.
    pub fn multiply(&self, m: impl Fn(f64) -> C64) -> Self {
        let d = self.domain;
        let coeffs = (0..d.n).map(|k| self.coeffs[k] * m(d.nu(d.freq(k)))).collect();
        Self { domain: d, coeffs }
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Unnormalized in-place FFT (`inverse` uses the `+` sign).
pub fn fft_in_place(buf: &mut [C64], inverse: bool) {
    plan(buf.len(), inverse).process(buf);
}

pub fn forward_transform(f: &GridFunction) -> Spectrum {
    let d = f.domain;
    let mut buf = f.values.clone();
    fft_in_place(&mut buf, false);
    let dx = d.dx();
    for (k, c) in buf.iter_mut().enumerate() {
        // x_0 = -L/2 contributes the phase (-1)^xi, and xi = k mod n with n even.
        let s = if k % 2 == 0 { dx } else { -dx };
        *c *= s;
    }
    Spectrum { domain: d, coeffs: buf }
}

/// Validating variant of [`forward_transform`] for externally built data.
pub fn try_forward_transform(f: &GridFunction) -> Result<Spectrum> {
    check_finite(&f.values, "grid values")?;
    Ok(forward_transform(f))
}

pub fn inverse_transform(s: &Spectrum) -> GridFunction {
    let d = s.domain;
    let inv_l = 1.0 / d.length;
    let mut buf: Vec<C64> =
        s.coeffs.iter().enumerate().map(|(k, &c)| if k % 2 == 0 { c * inv_l } else { -c * inv_l }).collect();
    fft_in_place(&mut buf, true);
    GridFunction { domain: d, values: buf }
}

/// Applies the Fourier multiplier `m(nu)` (physical frequency) to `f`.
pub fn apply_fourier_multiplier(f: &GridFunction, m: impl Fn(f64) -> C64) -> GridFunction {
    inverse_transform(&forward_transform(f).multiply(m))
}

/// `L^p` norm; pass `f64::INFINITY` for the sup norm.
pub fn lp_norm(f: &GridFunction, p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(LabError::InvalidExponent(p));
    }
    Ok(lp_norm_slice(f.values(), f.domain.dx(), p))
}

pub(crate) fn lp_norm_slice(values: &[C64], dx: f64, p: f64) -> f64 {
    if p.is_infinite() {
        values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    } else if p == 2.0 {
        (values.iter().map(|v| v.norm_sqr()).sum::<f64>() * dx).sqrt()
    } else if p == 1.0 {
        values.iter().map(|v| v.norm()).sum::<f64>() * dx
    } else {
        let peak = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        if peak == 0.0 {
            return 0.0;
        }
        let s: f64 = values.iter().map(|v| (v.norm() / peak).powf(p)).sum();
        peak * (s * dx).powf(1.0 / p)
    }
}

/// How the far field of a singular integral is handled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum FarField {
    /// Hard cutoff `|t| <= R`, with `R <= L/2`.
    Truncated(f64),
    /// Whole torus with periodized kernels (sum over all images `t + kL`).
    Periodic,
}

impl FarField {
    /// The default cutoff `R = L/4`.
    pub fn default_for(domain: &Domain) -> Self {
        FarField::Truncated(domain.length() / 4.0)
    }
}

/// Nodes and weights of the symmetric principal-value rule.
///
/// The singular node `t = 0` is omitted. The two nearest node pairs carry the
/// weights `5dx/3` and `5dx/6`: this is the trapezoid rule applied to the even
/// pair sum `P(t) = g(t) + g(-t)` with `P(0)` replaced by the extrapolation
/// `(4P(dx) - P(2dx))/3`. Plain omission is only first order accurate.
#[derive(Clone, Debug)]
pub struct PvStencil {
    pub offsets: Vec<isize>,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub far: FarField,
}

impl PvStencil {
    pub fn new(domain: &Domain, far: FarField) -> Result<Self> {
        let n = domain.n() as isize;
        let dx = domain.dx();
        let (lo, hi) = match far {
            FarField::Truncated(r) => {
                if !(r.is_finite() && r > 0.0) {
                    return Err(LabError::InvalidArgument(format!("truncation radius {r} must be positive")));
                }
                let half = 0.5 * domain.length();
                if r > half * (1.0 + 1e-12) {
                    return Err(LabError::TruncationTooLarge { r, max: half });
                }
                let j = ((r / dx) * (1.0 + 1e-12)).floor() as isize;
                (-j, j)
            }
            FarField::Periodic => (-n / 2 + 1, n / 2),
        };
        let jmax = lo.unsigned_abs().max(hi.unsigned_abs());
        let mut offsets = Vec::new();
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for j in lo..=hi {
            if j == 0 {
                continue;
            }
            let w = match (j.unsigned_abs(), jmax) {
                (1, 1) => 1.5,
                (1, _) => 5.0 / 3.0,
                (2, _) => 5.0 / 6.0,
                _ => 1.0,
            };
            offsets.push(j);
            nodes.push(j as f64 * dx);
            weights.push(w * dx);
        }
        Ok(Self { offsets, nodes, weights, far })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Largest `|offset|`.
    pub fn reach(&self) -> usize {
        self.offsets.iter().map(|j| j.unsigned_abs()).max().unwrap_or(0)
    }
}

/// `sum_k (t + kL)^{-p}`, the periodization of `t^{-p}` over the torus.
pub fn periodized_power(p: u32, t: f64, length: f64) -> f64 {
    assert!(p >= 1, "power must be positive");
    let z = PI * t / length;
    let c = z.cos() / z.sin();
    // sum_k (z + k)^{-p} = pi^p P_p(cot(pi z)) with P_1 = c and
    // P_{p+1} = (1 + c^2) P_p' / p.
    let mut poly = vec![0.0, 1.0];
    for q in 1..p {
        let deriv: Vec<f64> = poly.iter().enumerate().skip(1).map(|(i, &a)| i as f64 * a).collect();
        let mut next = vec![0.0; deriv.len() + 2];
        for (i, &a) in deriv.iter().enumerate() {
            next[i] += a / q as f64;
            next[i + 2] += a / q as f64;
        }
        poly = next;
    }
    let val = poly.iter().rev().fold(0.0, |acc, &a| acc * c + a);
    val * (PI / length).powi(p as i32)
}

/// Kernel `t^{-p}` for the given far-field model.
pub fn power_kernel(p: u32, t: f64, far: FarField, length: f64) -> f64 {
    match far {
        FarField::Truncated(_) => t.powi(-(p as i32)),
        FarField::Periodic => periodized_power(p, t, length),
    }
}

/// `g(x_m) = sum_j w_j f(x_m - y_j) kernel(y_j)` over the stencil for `far`.
///
/// With [`FarField::Periodic`] the caller supplies an already periodized kernel.
pub fn pv_convolve_with(f: &GridFunction, kernel: impl Fn(f64) -> C64, far: FarField) -> Result<GridFunction> {
    let d = f.domain();
    let st = PvStencil::new(&d, far)?;
    let n = d.n() as isize;
    let mut k = vec![C64::new(0.0, 0.0); d.n()];
    for ((&j, &y), &w) in st.offsets.iter().zip(&st.nodes).zip(&st.weights) {
        let v = kernel(y);
        if !(v.re.is_finite() && v.im.is_finite()) {
            return Err(LabError::KernelNonFinite { y });
        }
        k[j.rem_euclid(n) as usize] += v * w;
    }
    Ok(circular_convolve_raw(f, &k))
}

/// Principal-value convolution with a hard cutoff at `R`.
pub fn pv_convolve(f: &GridFunction, kernel: impl Fn(f64) -> C64, r: f64) -> Result<GridFunction> {
    pv_convolve_with(f, kernel, FarField::Truncated(r))
}

/// `g_m = sum_q f_{m-q} k_q` (indices mod n).
pub(crate) fn circular_convolve_raw(f: &GridFunction, k: &[C64]) -> GridFunction {
    let n = f.values.len();
    let mut a = f.values.clone();
    let mut b = k.to_vec();
    fft_in_place(&mut a, false);
    fft_in_place(&mut b, false);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= *y / n as f64;
    }
    fft_in_place(&mut a, true);
    GridFunction { domain: f.domain, values: a }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodized_power_matches_image_sum() {
        let l = 8.0;
        for p in 1..=5u32 {
            for &t in &[0.3, 1.7, -2.2, 3.9] {
                let mut s = 0.0;
                if p == 1 {
                    s += 1.0 / t;
                    for k in 1..200_000 {
                        let k = k as f64 * l;
                        s += 1.0 / (t + k) + 1.0 / (t - k);
                    }
                } else {
                    for k in -20_000i64..=20_000 {
                        s += (t + k as f64 * l).powi(-(p as i32));
                    }
                }
                let e = periodized_power(p, t, l);
                assert!((s - e).abs() < 1e-5 * e.abs().max(1.0), "p={p} t={t}: {s} vs {e}");
            }
        }
    }

    #[test]
    fn stencil_weights_sum_like_trapezoid() {
        let d = Domain::new(16.0, 64).unwrap();
        let st = PvStencil::new(&d, FarField::Truncated(4.0)).unwrap();
        assert_eq!(st.reach(), 16);
        let total: f64 = st.weights.iter().sum();
        // 2 * (R - dx/2) reconstructed: the extrapolated P(0)/2 term is included.
        assert!((total - (2.0 * 4.0 + d.dx())).abs() < 1e-12);
    }
}

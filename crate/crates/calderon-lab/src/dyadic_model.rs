//! Dyadic model operators with shifted adapted bumps, and shifted maximal and
//! square functions.

use std::f64::consts::{PI, SQRT_2};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::gridcore::{forward_transform, inverse_transform, Domain, GridFunction, C64};
use crate::lp_decomp::{BumpFamily, SlotType};
use crate::quadrature::gauss_legendre_on;

/// `I = [2^{-k} m, 2^{-k} (m + 1))`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicInterval {
    pub k: i32,
    pub m: i64,
}

impl DyadicInterval {
    pub fn new(k: i32, m: i64) -> Self {
        Self { k, m }
    }

    pub fn len(&self) -> f64 {
        2f64.powi(-self.k)
    }

    pub fn left(&self) -> f64 {
        self.m as f64 * self.len()
    }

    pub fn center(&self) -> f64 {
        (self.m as f64 + 0.5) * self.len()
    }

    /// The interval `n` lengths to the right.
    pub fn shifted(&self, n: i64) -> Self {
        Self { k: self.k, m: self.m + n }
    }

    pub fn contains(&self, x: f64) -> bool {
        let l = self.left();
        x >= l && x < l + self.len()
    }
}

/// Unnormalized profiles: `exp(-pi u^2)` and its mean-zero relative
/// `(1 - 2 pi u^2) exp(-pi u^2)`, whose zeroth and first moments vanish exactly.
fn shape(kind: SlotType, u: f64) -> f64 {
    let g = (-PI * u * u).exp();
    match kind {
        SlotType::Phi => g,
        SlotType::Psi => (1.0 - 2.0 * PI * u * u) * g,
    }
}

/// `L^p` norm of [`shape`].
fn shape_norm(kind: SlotType, p: f64) -> f64 {
    if p.is_infinite() {
        return 1.0;
    }
    if p == 2.0 {
        // int exp(-2 pi u^2) = 2^{-1/2}; the Psi profile carries an extra factor 3/4.
        return match kind {
            SlotType::Phi => 2f64.powf(-0.25),
            SlotType::Psi => (0.75 / SQRT_2).sqrt(),
        };
    }
    // Panel edges include the zeros of the Psi profile, where |shape|^p has a kink.
    let z = (2.0 * PI).sqrt().recip();
    let mut edges: Vec<f64> = (0..=80).map(|i| -10.0 + 0.25 * i as f64).collect();
    edges.extend([-z, z]);
    edges.sort_by(f64::total_cmp);
    let mut s = 0.0;
    for e in edges.windows(2) {
        for (u, w) in gauss_legendre_on(16, e[0], e[1]) {
            s += w * shape(kind, u).abs().powf(p);
        }
    }
    s.powf(1.0 / p)
}

/// Bumps are negligible (below `exp(-pi 64)`) beyond this many lengths from the center.
const BUMP_RADIUS: f64 = 8.0;

/// `Phi_{I_n}` adapted to the shifted interval `I_n`, normalized in `L^p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptedBump {
    pub interval: DyadicInterval,
    pub shift: i64,
    pub kind: SlotType,
    pub p: f64,
    norm: f64,
}

impl AdaptedBump {
    pub fn new(interval: DyadicInterval, shift: i64, kind: SlotType, p: f64) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return Err(LabError::InvalidExponent(p));
        }
        Ok(Self { interval, shift, kind, p, norm: shape_norm(kind, p) })
    }

    /// `L^2` normalized bump.
    pub fn l2(interval: DyadicInterval, shift: i64, kind: SlotType) -> Self {
        Self { interval, shift, kind, p: 2.0, norm: shape_norm(kind, 2.0) }
    }

    pub fn center(&self) -> f64 {
        self.interval.shifted(self.shift).center()
    }

    pub fn eval(&self, x: f64) -> f64 {
        let len = self.interval.len();
        let u = (x - self.center()) / len;
        let amp = if self.p.is_infinite() { 1.0 } else { len.powf(-1.0 / self.p) };
        amp * shape(self.kind, u) / self.norm
    }

    /// `d^j/dx^j` for `j <= 2`.
    pub fn derivative(&self, j: usize, x: f64) -> f64 {
        let len = self.interval.len();
        let u = (x - self.center()) / len;
        let amp = if self.p.is_infinite() { 1.0 } else { len.powf(-1.0 / self.p) } / self.norm;
        let g = (-PI * u * u).exp();
        let a = 2.0 * PI;
        // Derivatives of q(u) g(u) with g' = -a u g.
        let (q0, q1, q2) = match self.kind {
            SlotType::Phi => (1.0, -a * u, a * a * u * u - a),
            SlotType::Psi => {
                let q = 1.0 - a * u * u;
                let dq = -2.0 * a * u;
                let d1 = dq - a * u * q;
                let d2 = -2.0 * a - a * q - a * u * dq - a * u * d1;
                (q, d1, d2)
            }
        };
        let v = match j {
            0 => q0,
            1 => q1,
            2 => q2,
            _ => panic!("derivative order {j} > 2"),
        };
        amp * v * g * len.powi(-(j as i32))
    }

    /// Grid indices (unwrapped) where the bump is not negligible.
    fn cell_range(&self, domain: &Domain) -> (isize, isize) {
        let r = BUMP_RADIUS * self.interval.len();
        let c = self.center() + 0.5 * domain.length();
        let dx = domain.dx();
        (((c - r) / dx).floor() as isize, ((c + r) / dx).ceil() as isize)
    }

    /// `<f, Phi> = int f Phi dx` on the torus.
    pub fn pair(&self, f: &GridFunction) -> C64 {
        let d = f.domain();
        let (lo, hi) = self.cell_range(&d);
        let n = d.n() as isize;
        let v = f.values();
        let mut acc = C64::new(0.0, 0.0);
        for i in lo..=hi {
            let x = -0.5 * d.length() + i as f64 * d.dx();
            acc += v[i.rem_euclid(n) as usize] * self.eval(x);
        }
        acc * d.dx()
    }

    fn deposit(&self, domain: &Domain, coeff: C64, out: &mut [C64]) {
        let (lo, hi) = self.cell_range(domain);
        let n = domain.n() as isize;
        for i in lo..=hi {
            let x = -0.5 * domain.length() + i as f64 * domain.dx();
            out[i.rem_euclid(n) as usize] += coeff * self.eval(x);
        }
    }
}

/// Parameters of the model operator `T_J`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelOperatorSpec {
    /// One shift per input slot; the output bump is never shifted.
    pub shifts: Vec<i64>,
    /// Bump types for the `l` input slots followed by the output slot.
    pub kinds: Vec<SlotType>,
    /// Inclusive range of `k` (interval length `2^{-k}`).
    pub scales: (i32, i32),
    /// The family holds every interval of the scale range inside `[lo, hi)`.
    pub window: (f64, f64),
}

impl ModelOperatorSpec {
    pub fn arity(&self) -> usize {
        self.shifts.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.shifts.is_empty() {
            return invalid("the model operator needs at least one input slot");
        }
        if self.kinds.len() != self.shifts.len() + 1 {
            return Err(LabError::LengthMismatch { expected: self.shifts.len() + 1, got: self.kinds.len() });
        }
        if self.kinds.iter().filter(|&&k| k == SlotType::Psi).count() < 2 {
            return invalid("at least two slots must carry mean-zero bumps");
        }
        if self.scales.0 > self.scales.1 {
            return invalid("empty scale range");
        }
        if !(self.window.0 < self.window.1) {
            return invalid("empty window");
        }
        Ok(())
    }

    pub fn intervals(&self) -> Vec<DyadicInterval> {
        let mut out = Vec::new();
        for k in self.scales.0..=self.scales.1 {
            let s = 2f64.powi(k);
            let lo = (self.window.0 * s).ceil() as i64;
            let hi = (self.window.1 * s).floor() as i64;
            out.extend((lo..hi).map(|m| DyadicInterval::new(k, m)));
        }
        out
    }

    fn check(&self, inputs: &[GridFunction]) -> Result<Domain> {
        self.validate()?;
        if inputs.len() != self.arity() {
            return Err(LabError::LengthMismatch { expected: self.arity(), got: inputs.len() });
        }
        let d = inputs[0].domain();
        if inputs.iter().any(|g| g.domain() != d) {
            return Err(LabError::DomainMismatch);
        }
        let cells = 2f64.powi(-self.scales.1) / d.dx();
        if cells < 16.0 {
            return invalid(format!("smallest interval spans {cells} cells; at least 16 are required"));
        }
        Ok(d)
    }

    fn pairings(&self, inputs: &[GridFunction], iv: DyadicInterval) -> Vec<C64> {
        inputs
            .iter()
            .zip(&self.shifts)
            .zip(&self.kinds)
            .map(|((f, &n), &kind)| AdaptedBump::l2(iv, n, kind).pair(f))
            .collect()
    }
}

/// `T_J(f_1..f_l) = sum_I |I|^{-(l-2)/2} prod_j <f_j, Phi^j_{I_{n_j}}> Phi^{l+1}_I`
/// with `L^2`-normalized bumps.
pub fn apply_model(spec: &ModelOperatorSpec, inputs: &[GridFunction]) -> Result<GridFunction> {
    let dom = spec.check(inputs)?;
    let l = spec.arity() as f64;
    let out_kind = *spec.kinds.last().expect("validated");
    let n = dom.n();
    let out = spec
        .intervals()
        .par_iter()
        .fold(
            || vec![C64::new(0.0, 0.0); n],
            |mut acc, &iv| {
                let coeff: C64 = spec.pairings(inputs, iv).into_iter().product::<C64>() * iv.len().powf(-(l - 2.0) / 2.0);
                if coeff != C64::new(0.0, 0.0) {
                    AdaptedBump::l2(iv, 0, out_kind).deposit(&dom, coeff, &mut acc);
                }
                acc
            },
        )
        .reduce(
            || vec![C64::new(0.0, 0.0); n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    GridFunction::new(dom, out)
}

/// `sum_I |I|^{-(l-1)/2} prod_j |<f_j, Phi^j_{I_{n_j}}>| |<1_{E'}, Phi^{l+1}_I>|`.
pub fn model_form(spec: &ModelOperatorSpec, inputs: &[GridFunction], e_prime: &GridFunction) -> Result<f64> {
    let dom = spec.check(inputs)?;
    if e_prime.domain() != dom {
        return Err(LabError::DomainMismatch);
    }
    let l = spec.arity() as f64;
    let out_kind = *spec.kinds.last().expect("validated");
    // Summed in interval order so the value is reproducible bit for bit.
    let terms: Vec<f64> = spec
        .intervals()
        .par_iter()
        .map(|&iv| {
            let prod: f64 = spec.pairings(inputs, iv).iter().map(|c| c.norm()).product();
            if prod == 0.0 {
                return 0.0;
            }
            prod * AdaptedBump::l2(iv, 0, out_kind).pair(e_prime).norm() * iv.len().powf(-(l - 1.0) / 2.0)
        })
        .collect();
    Ok(terms.iter().sum())
}

/// Cells per interval of length `2^{-k}` as a power of two, checked against the grid.
fn cells_log2(domain: &Domain, k: i32) -> Result<u32> {
    let cells = 2f64.powi(-k) / domain.dx();
    let r = cells.round();
    if r < 1.0 || (cells - r).abs() > 1e-9 * r || !(r as u64).is_power_of_two() || r as usize > domain.n() / 2 {
        return invalid(format!("interval length 2^{} is not a grid-aligned power-of-two block", -k));
    }
    Ok((r as u64).trailing_zeros())
}

/// `M^n f(x) = max_k avg_{I_n} |f|` over dyadic `I` of length `2^{-k}` containing `x`,
/// `k` in `scales` (inclusive). Blocks wrap around the torus.
pub fn shifted_maximal(n: i64, f: &GridFunction, scales: (i32, i32)) -> Result<GridFunction> {
    if scales.0 > scales.1 {
        return invalid("empty scale range");
    }
    let dom = f.domain();
    let levels: Vec<u32> = (scales.0..=scales.1).map(|k| cells_log2(&dom, k)).collect::<Result<_>>()?;
    let abs: Vec<f64> = f.values().iter().map(|v| v.norm()).collect();
    Ok(GridFunction::from_real(dom, &shifted_maximal_cells(n, &abs, &levels))?)
}

/// Index-space core of [`shifted_maximal`]: `levels` are block sizes `2^s` in cells,
/// blocks are aligned to the grid midpoint `N/2`.
pub fn shifted_maximal_cells(n: i64, abs: &[f64], levels: &[u32]) -> Vec<f64> {
    let size = abs.len();
    let mut prefix = Vec::with_capacity(size + 1);
    prefix.push(0.0);
    let mut s = 0.0;
    for &v in abs {
        s += v;
        prefix.push(s);
    }
    let total = s;
    let block_sum = |start: usize, len: usize| -> f64 {
        let end = start + len;
        if end <= size {
            prefix[end] - prefix[start]
        } else {
            (total - prefix[start]) + prefix[end - size]
        }
    };
    let half = (size / 2) as i64;
    let mut out = vec![0.0f64; size];
    for &lv in levels {
        let len = 1usize << lv;
        let blocks = (size / len) as i64;
        let inv = 1.0 / len as f64;
        out.par_chunks_mut(len).enumerate().for_each(|(b, chunk)| {
            // Block b covers cells b*len.., i.e. interval index b - half/len from the midpoint.
            let j = b as i64 - half / len as i64;
            let target = (j + n + half / len as i64).rem_euclid(blocks) as usize;
            let avg = block_sum(target * len, len) * inv;
            for v in chunk {
                if avg > *v {
                    *v = avg;
                }
            }
        });
    }
    out
}

/// `S^n f(x) = (sum_k |f * Psi_k(x + n 2^{-k})|^2)^{1/2}` for `k` in `scales`,
/// evaluated spectrally.
pub fn shifted_square(n: i64, family: &BumpFamily, f: &GridFunction, scales: (i32, i32)) -> Result<GridFunction> {
    if scales.0 > scales.1 {
        return invalid("empty scale range");
    }
    let dom = f.domain();
    let spec = forward_transform(f);
    let mut acc = vec![0.0f64; dom.n()];
    for k in scales.0..=scales.1 {
        let a = n as f64 * 2f64.powi(-k);
        let g = inverse_transform(&spec.multiply(|nu| family.psi_hat_k(k, nu) * C64::from_polar(1.0, 2.0 * PI * nu * a)));
        for (s, v) in acc.iter_mut().zip(g.values()) {
            *s += v.norm_sqr();
        }
    }
    let root: Vec<f64> = acc.into_iter().map(f64::sqrt).collect();
    GridFunction::from_real(dom, &root)
}

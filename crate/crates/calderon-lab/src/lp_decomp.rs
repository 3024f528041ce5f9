//! Littlewood-Paley families, paraproducts and the three-branch Whitney split.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, LabError, Result};
use crate::gridcore::{forward_transform, inverse_transform, GridFunction, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FamilyKind {
    /// Gaussian mother `Phi(x) = exp(-pi x^2)`.
    Noncompact,
    /// `Phi-hat` smooth, equal to 1 on `[-1/2, 1/2]`, supported in `[-1, 1]`.
    Compact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotType {
    Phi,
    Psi,
}

/// Smooth step: 0 for `s <= 0`, 1 for `s >= 1`.
pub fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / s).exp();
    let b = (-1.0 / (1.0 - s)).exp();
    a / (a + b)
}

/// Smooth bump supported in `[center - half, center + half]`, peak 1.
pub fn smooth_bump(x: f64, center: f64, half: f64) -> f64 {
    let u = (x - center) / half;
    if u.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    }
}

/// A Littlewood-Paley family `{Phi_k, Psi_k}` with `Phi_k(x) = 2^k Phi(2^k x)` and
/// `Psi = Phi - Phi(./2)/2`, so that `Psi_k = Phi_k - Phi_{k-1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BumpFamily {
    kind: FamilyKind,
}

pub fn build_family(kind: FamilyKind) -> BumpFamily {
    BumpFamily { kind }
}

// Composite Gauss-Legendre nodes on [0, 1] for the compact family's inverse transform.
fn gl_unit(panels: usize) -> Vec<(f64, f64)> {
    let (x, w) = crate::quadrature::gauss_legendre(8);
    let h = 1.0 / panels as f64;
    let mut out = Vec::with_capacity(panels * 8);
    for p in 0..panels {
        let a = p as f64 * h;
        for (xi, wi) in x.iter().zip(&w) {
            out.push((a + 0.5 * h * (xi + 1.0), 0.5 * h * wi));
        }
    }
    out
}

impl BumpFamily {
    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn phi_hat(&self, xi: f64) -> f64 {
        match self.kind {
            FamilyKind::Noncompact => (-PI * xi * xi).exp(),
            FamilyKind::Compact => smooth_step(2.0 * (1.0 - xi.abs())),
        }
    }

    pub fn psi_hat(&self, xi: f64) -> f64 {
        match self.kind {
            // exp(-pi xi^2) - exp(-4 pi xi^2), written to avoid cancellation.
            FamilyKind::Noncompact => -(-PI * xi * xi).exp() * (-3.0 * PI * xi * xi).exp_m1(),
            FamilyKind::Compact => self.phi_hat(xi) - self.phi_hat(2.0 * xi),
        }
    }

    pub fn phi_hat_k(&self, k: i32, xi: f64) -> f64 {
        self.phi_hat(xi * 2f64.powi(-k))
    }

    pub fn psi_hat_k(&self, k: i32, xi: f64) -> f64 {
        self.psi_hat(xi * 2f64.powi(-k))
    }

    pub fn hat_k(&self, slot: SlotType, k: i32, xi: f64) -> f64 {
        match slot {
            SlotType::Phi => self.phi_hat_k(k, xi),
            SlotType::Psi => self.psi_hat_k(k, xi),
        }
    }

    pub fn phi(&self, x: f64) -> f64 {
        match self.kind {
            FamilyKind::Noncompact => (-PI * x * x).exp(),
            FamilyKind::Compact => {
                thread_local! {
                    static NODES: Vec<(f64, f64)> = gl_unit(64);
                }
                NODES.with(|nodes| 2.0 * nodes.iter().map(|&(s, w)| w * self.phi_hat(s) * (2.0 * PI * s * x).cos()).sum::<f64>())
            }
        }
    }

    pub fn psi(&self, x: f64) -> f64 {
        self.phi(x) - 0.5 * self.phi(0.5 * x)
    }

    pub fn phi_k(&self, k: i32, x: f64) -> f64 {
        let s = 2f64.powi(k);
        s * self.phi(s * x)
    }

    pub fn psi_k(&self, k: i32, x: f64) -> f64 {
        let s = 2f64.powi(k);
        s * self.psi(s * x)
    }
}

/// `Psi-hat(xi) / xi^2`, with the value `3 pi` filled in at the origin for the
/// noncompact family.
pub fn psi_factor(family: &BumpFamily, xi: f64) -> f64 {
    match family.kind {
        FamilyKind::Noncompact => {
            let q = xi * xi;
            if q == 0.0 {
                3.0 * PI
            } else {
                -(-PI * q).exp() * (-3.0 * PI * q).exp_m1() / q
            }
        }
        FamilyKind::Compact => {
            if xi.abs() < 0.25 {
                0.0
            } else {
                family.psi_hat(xi) / (xi * xi)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelescopeReport {
    /// `max |sum_{k_min..=k_bar} Psi_k - (Phi_{k_bar} - Phi_{k_min - 1})|`.
    pub max_error: f64,
    /// `sup |Phi_{k_min - 1}|`, the term dropped when `k_min -> -inf`.
    pub truncation_sup: f64,
}

pub fn telescope_check(family: &BumpFamily, k_min: i32, k_bar: i32, grid: &[f64]) -> Result<TelescopeReport> {
    if family.kind != FamilyKind::Noncompact {
        return invalid("telescope_check expects the noncompact family");
    }
    if k_min > k_bar {
        return invalid("k_min must not exceed k_bar");
    }
    let max_error = grid
        .iter()
        .map(|&x| {
            let sum: f64 = (k_min..=k_bar).map(|k| family.psi_k(k, x)).sum();
            (sum - (family.phi_k(k_bar, x) - family.phi_k(k_min - 1, x))).abs()
        })
        .fold(0.0, f64::max);
    Ok(TelescopeReport { max_error, truncation_sup: 2f64.powi(k_min - 1) * family.phi(0.0) })
}

/// `sup |sum_{k=k_min}^{k_max} Psi-hat_k(xi) - 1|` over `samples` points of the window.
pub fn partition_residual(family: &BumpFamily, k_min: i32, k_max: i32, window: (f64, f64), samples: usize) -> f64 {
    let (lo, hi) = window;
    (0..samples)
        .map(|i| {
            let xi = lo + (hi - lo) * i as f64 / (samples.max(2) - 1) as f64;
            let s: f64 = (k_min..=k_max).map(|k| family.psi_hat_k(k, xi)).sum();
            (s - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

/// Slots `1..=d+1` are inputs, the last slot is the output slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParaproductSpec {
    pub slots: Vec<(FamilyKind, SlotType)>,
    pub k_min: i32,
    pub k_max: i32,
}

impl ParaproductSpec {
    pub fn validate(&self) -> Result<()> {
        if self.slots.len() < 3 {
            return invalid("a paraproduct needs at least three slots");
        }
        if self.slots.iter().filter(|s| s.1 == SlotType::Psi).count() < 2 {
            return invalid("a paraproduct needs at least two Psi-type slots");
        }
        if self.k_min > self.k_max {
            return invalid("empty scale range");
        }
        Ok(())
    }

    /// `d` in the `(d+2)`-linear form.
    pub fn degree(&self) -> usize {
        self.slots.len() - 2
    }
}

/// `sum_k [prod_j (f_j * Phi^j_k)] * Phi^{d+2}_k`, all convolutions spectral.
pub fn paraproduct_apply(spec: &ParaproductSpec, inputs: &[GridFunction]) -> Result<GridFunction> {
    spec.validate()?;
    if inputs.len() + 1 != spec.slots.len() {
        return Err(LabError::LengthMismatch { expected: spec.slots.len() - 1, got: inputs.len() });
    }
    let domain = inputs[0].domain();
    if inputs.iter().any(|f| f.domain() != domain) {
        return Err(LabError::DomainMismatch);
    }
    let nyquist = domain.n() as f64 / (2.0 * domain.length());
    if 2f64.powi(spec.k_max) > nyquist {
        return invalid(format!("scale 2^{} exceeds the Nyquist frequency {nyquist}", spec.k_max));
    }
    let spectra: Vec<_> = inputs.iter().map(forward_transform).collect();
    let mut out = vec![C64::new(0.0, 0.0); domain.n()];
    for k in spec.k_min..=spec.k_max {
        let mut prod = vec![C64::new(1.0, 0.0); domain.n()];
        for (s, &(kind, slot)) in spectra.iter().zip(&spec.slots) {
            let fam = build_family(kind);
            let piece = inverse_transform(&s.multiply(|nu| C64::new(fam.hat_k(slot, k, nu), 0.0)));
            for (p, v) in prod.iter_mut().zip(piece.values()) {
                *p *= v;
            }
        }
        let (kind, slot) = *spec.slots.last().unwrap();
        let fam = build_family(kind);
        let smoothed = inverse_transform(
            &forward_transform(&GridFunction::from_raw(domain, prod))
                .multiply(|nu| C64::new(fam.hat_k(slot, k, nu), 0.0)),
        );
        for (o, v) in out.iter_mut().zip(smoothed.values()) {
            *o += v;
        }
    }
    GridFunction::new(domain, out)
}

/// `f * Phi_k` computed spectrally.
///
/// The sup bound `|f * Phi_k| <= |f|_inf` survives discretization only when
/// the multiplier is negligible at Nyquist; otherwise the truncated kernel rings.
pub fn smooth_at_scale(family: &BumpFamily, slot: SlotType, k: i32, f: &GridFunction) -> GridFunction {
    inverse_transform(&forward_transform(f).multiply(|nu| C64::new(family.hat_k(slot, k, nu), 0.0)))
}

/// Three-branch splitting of `1` near a Whitney square:
/// `sum_r Phi-hat_{r-1}(a) Psi-hat_r(b) + Psi-hat_r(a) Psi-hat_r(b) + Psi-hat_r(a) Phi-hat_{r-1}(b)`.
///
/// Using `Phi_{r-1}` in the outer branches makes the finite sum telescope to
/// `Phi-hat_{r_max}(a) Phi-hat_{r_max}(b) - Phi-hat_{r_min-1}(a) Phi-hat_{r_min-1}(b)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhitneySplit {
    pub r_min: i32,
    pub r_max: i32,
}

pub fn whitney_split(r_min: i32, r_max: i32) -> Result<WhitneySplit> {
    if r_min > r_max {
        return invalid("empty r-range");
    }
    Ok(WhitneySplit { r_min, r_max })
}

impl WhitneySplit {
    pub fn branches(&self, a: f64, b: f64) -> [f64; 3] {
        let fam = build_family(FamilyKind::Compact);
        let mut out = [0.0; 3];
        for r in self.r_min..=self.r_max {
            let pa = fam.phi_hat_k(r - 1, a);
            let pb = fam.phi_hat_k(r - 1, b);
            let sa = fam.psi_hat_k(r, a);
            let sb = fam.psi_hat_k(r, b);
            out[0] += pa * sb;
            out[1] += sa * sb;
            out[2] += sa * pb;
        }
        out
    }

    pub fn total(&self, a: f64, b: f64) -> f64 {
        self.branches(a, b).iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compact_plateau() {
        let f = build_family(FamilyKind::Compact);
        assert_eq!(f.phi_hat(0.4), 1.0);
        assert_eq!(f.phi_hat(1.2), 0.0);
        assert!(f.phi_hat(0.75) > 0.0 && f.phi_hat(0.75) < 1.0);
    }

    #[test]
    fn compact_phi_has_unit_mass() {
        let f = build_family(FamilyKind::Compact);
        // int Phi = Phi-hat(0) = 1; trapezoid on a wide window.
        let h = 0.02;
        let s: f64 = (-4000..=4000).map(|i| f.phi(i as f64 * h)).sum::<f64>() * h;
        assert!((s - 1.0).abs() < 1e-6, "{s}");
    }
}

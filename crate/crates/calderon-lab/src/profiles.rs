//! Closed-form Lipschitz profiles `A` with exact derivatives up to order 4.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::gridcore::{Domain, GridFunction, C64};

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProfileTag {
    Linear,
    GaussianBump,
    SmoothedSawtooth,
    RandomTrig,
    PolynomialGrowth(u32),
}

impl fmt::Display for ProfileTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProfileTag::Linear => write!(f, "linear"),
            ProfileTag::GaussianBump => write!(f, "gaussian-bump"),
            ProfileTag::SmoothedSawtooth => write!(f, "smoothed-sawtooth"),
            ProfileTag::RandomTrig => write!(f, "random-trig"),
            ProfileTag::PolynomialGrowth(d) => write!(f, "polynomial-growth({d})"),
        }
    }
}

impl FromStr for ProfileTag {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        match t {
            "linear" => return Ok(ProfileTag::Linear),
            "gaussian-bump" => return Ok(ProfileTag::GaussianBump),
            "smoothed-sawtooth" => return Ok(ProfileTag::SmoothedSawtooth),
            "random-trig" => return Ok(ProfileTag::RandomTrig),
            _ => {}
        }
        if let Some(rest) = t.strip_prefix("polynomial-growth(").and_then(|r| r.strip_suffix(')')) {
            if let Ok(d) = rest.trim().parse::<u32>() {
                if (1..=MAX_ORDER as u32).contains(&d) {
                    return Ok(ProfileTag::PolynomialGrowth(d));
                }
            }
        }
        Err(LabError::UnknownTag(s.to_string()))
    }
}

/// Inputs to [`make_profile`]. `bandwidth` rescales the natural frequency
/// content of the base shape (larger means narrower features).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSeed {
    pub tag: ProfileTag,
    pub amplitude: f64,
    pub bandwidth: f64,
    pub seed: u64,
}

impl ProfileSeed {
    pub fn new(tag: ProfileTag, amplitude: f64) -> Self {
        Self { tag, amplitude, bandwidth: 1.0, seed: 0 }
    }
}

/// `P(x - c) exp(-a (x - c)^2)`, with the polynomials of all derivatives cached.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PolyGauss {
    center: f64,
    a: f64,
    derivs: Vec<Vec<f64>>,
}

impl PolyGauss {
    fn new(poly: Vec<f64>, center: f64, a: f64) -> Self {
        let mut derivs = vec![poly];
        for k in 0..MAX_ORDER {
            let p = &derivs[k];
            let mut q = vec![0.0; p.len() + 1];
            for (i, &c) in p.iter().enumerate() {
                if i > 0 {
                    q[i - 1] += i as f64 * c;
                }
                q[i + 1] -= 2.0 * a * c;
            }
            derivs.push(q);
        }
        Self { center, a, derivs }
    }

    fn eval(&self, k: usize, x: f64) -> f64 {
        let u = x - self.center;
        let e = (-self.a * u * u).exp();
        if e == 0.0 {
            return 0.0;
        }
        self.derivs[k].iter().rev().fold(0.0, |acc, &c| acc * u + c) * e
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Shape {
    Zero,
    Linear { slope: f64 },
    PolyGauss(Vec<PolyGauss>),
    /// `sum a cos(2 pi nu x) + b sin(2 pi nu x)`.
    Trig(Vec<(f64, f64, f64)>),
    /// `sum sign_k s log cosh((x - c_k)/s)`.
    LogCosh { centers: Vec<f64>, signs: Vec<f64>, s: f64 },
}

fn log_cosh(u: f64) -> f64 {
    let a = u.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

impl Shape {
    fn eval(&self, k: usize, x: f64) -> f64 {
        match self {
            Shape::Zero => 0.0,
            Shape::Linear { slope } => match k {
                0 => slope * x,
                1 => *slope,
                _ => 0.0,
            },
            Shape::PolyGauss(terms) => terms.iter().map(|t| t.eval(k, x)).sum(),
            Shape::Trig(terms) => terms
                .iter()
                .map(|&(nu, a, b)| {
                    let w = 2.0 * PI * nu;
                    let (s, c) = (w * x).sin_cos();
                    // d/dx rotates (a, b) -> (b w, -a w).
                    let (mut ca, mut cb) = (a, b);
                    for _ in 0..k {
                        let (na, nb) = (cb * w, -ca * w);
                        ca = na;
                        cb = nb;
                    }
                    ca * c + cb * s
                })
                .sum(),
            Shape::LogCosh { centers, signs, s } => centers
                .iter()
                .zip(signs)
                .map(|(&c, &sg)| {
                    let u = (x - c) / s;
                    let th = u.tanh();
                    let sech2 = 1.0 - th * th;
                    sg * match k {
                        0 => s * log_cosh(u),
                        1 => th,
                        2 => sech2 / s,
                        3 => -2.0 * sech2 * th / (s * s),
                        _ => -2.0 * (sech2 * sech2 - 2.0 * sech2 * th * th) / (s * s * s),
                    }
                })
                .sum(),
        }
    }

    /// Interval carrying all variation, or `None` for periodic/unbounded shapes.
    fn window(&self) -> Option<(f64, f64)> {
        match self {
            Shape::PolyGauss(terms) => {
                let lo = terms.iter().map(|t| t.center - 8.0 / t.a.sqrt()).fold(f64::INFINITY, f64::min);
                let hi = terms.iter().map(|t| t.center + 8.0 / t.a.sqrt()).fold(f64::NEG_INFINITY, f64::max);
                Some((lo, hi))
            }
            Shape::LogCosh { centers, s, .. } => {
                let lo = centers.iter().cloned().fold(f64::INFINITY, f64::min) - 40.0 * s;
                let hi = centers.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 40.0 * s;
                Some((lo, hi))
            }
            _ => None,
        }
    }

    fn period(&self) -> Option<f64> {
        match self {
            Shape::Trig(terms) => {
                let base = terms.iter().map(|t| t.0.abs()).filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
                Some(1.0 / base)
            }
            _ => None,
        }
    }

    /// `max |A'|`: dense scan, then golden-section refinement of every local peak.
    fn sup_derivative(&self) -> f64 {
        let (lo, hi) = match self {
            Shape::Zero => return 0.0,
            Shape::Linear { slope } => return slope.abs(),
            _ => match (self.window(), self.period()) {
                (Some(w), _) => w,
                (None, Some(p)) => (0.0, p),
                (None, None) => unreachable!(),
            },
        };
        let m = 40_000;
        let h = (hi - lo) / m as f64;
        let g = |x: f64| self.eval(1, x).abs();
        let vals: Vec<f64> = (0..=m).map(|i| g(lo + i as f64 * h)).collect();
        let mut best = vals.iter().cloned().fold(0.0, f64::max);
        for i in 0..=m {
            let left = if i == 0 { f64::NEG_INFINITY } else { vals[i - 1] };
            let right = if i == m { f64::NEG_INFINITY } else { vals[i + 1] };
            if vals[i] >= left && vals[i] >= right && vals[i] > 0.5 * best {
                best = best.max(golden_max(&g, lo + (i as f64 - 1.0) * h, lo + (i as f64 + 1.0) * h));
            }
        }
        best
    }

    fn support_radius(&self) -> Option<f64> {
        match self {
            Shape::Zero => Some(0.0),
            Shape::PolyGauss(terms) => {
                let peak = terms.iter().map(|t| t.eval(0, t.center).abs()).fold(1e-300, f64::max);
                let (lo, hi) = self.window()?;
                // Walk inward from the window edge until some derivative is non-negligible.
                let step = 1e-3 * (hi - lo);
                let small = |x: f64| (0..=MAX_ORDER).all(|k| self.eval(k, x).abs() <= 1e-16 * peak.max(1.0));
                let mut r_hi = hi;
                while r_hi > lo && small(r_hi) {
                    r_hi -= step;
                }
                let mut r_lo = lo;
                while r_lo < hi && small(r_lo) {
                    r_lo += step;
                }
                Some((r_hi + step).abs().max((r_lo - step).abs()))
            }
            _ => None,
        }
    }
}

fn golden_max(g: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..80 {
        if gc > gd {
            b = d;
            d = c;
            gd = gc;
            c = b - r * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + r * (b - a);
            gd = g(d);
        }
    }
    gc.max(gd).max(g(a)).max(g(b))
}

/// A smooth Lipschitz function with closed-form derivatives and a certified
/// `sup |A'|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzProfile {
    tag: Option<ProfileTag>,
    shape: Shape,
    scale: f64,
    lip_norm: f64,
    support_radius: Option<f64>,
}

impl LipschitzProfile {
    fn from_shape(tag: Option<ProfileTag>, shape: Shape, scale: f64) -> Self {
        let lip_norm = scale.abs() * shape.sup_derivative();
        let support_radius = shape.support_radius();
        Self { tag, shape, scale, lip_norm, support_radius }
    }

    pub fn zero() -> Self {
        Self::from_shape(None, Shape::Zero, 1.0)
    }

    /// `A(x) = slope * x`.
    pub fn linear(slope: f64) -> Self {
        Self::from_shape(Some(ProfileTag::Linear), Shape::Linear { slope: 1.0 }, slope)
    }

    /// `height * exp(-pi ((x - center)/width)^2)`.
    pub fn gaussian(height: f64, width: f64, center: f64) -> Self {
        Self::poly_gaussian(vec![height], width, center)
    }

    /// `P(x - center) * exp(-pi ((x - center)/width)^2)` with `P` given by its
    /// coefficients in increasing degree.
    pub fn poly_gaussian(poly: Vec<f64>, width: f64, center: f64) -> Self {
        let a = PI / (width * width);
        Self::from_shape(None, Shape::PolyGauss(vec![PolyGauss::new(poly, center, a)]), 1.0)
    }

    /// Trigonometric polynomial `sum a cos(2 pi nu x) + b sin(2 pi nu x)`.
    pub fn trig(terms: Vec<(f64, f64, f64)>) -> Self {
        Self::from_shape(None, Shape::Trig(terms), 1.0)
    }

    pub fn tag(&self) -> Option<ProfileTag> {
        self.tag
    }

    pub fn lip_norm(&self) -> f64 {
        self.lip_norm
    }

    /// Radius outside which `A` and its derivatives are below `1e-16` of the
    /// peak; `None` for profiles that do not decay.
    pub fn support_radius(&self) -> Option<f64> {
        self.support_radius
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.scale * self.shape.eval(0, x)
    }

    /// Derivative of order `k <= 4`.
    ///
    /// # Panics
    /// If `k > 4`.
    pub fn derivative(&self, k: usize, x: f64) -> f64 {
        assert!(k <= MAX_ORDER, "derivative order {k} exceeds {MAX_ORDER}");
        self.scale * self.shape.eval(k, x)
    }

    /// `c * A`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            tag: self.tag,
            shape: self.shape.clone(),
            scale: self.scale * c,
            lip_norm: self.lip_norm * c.abs(),
            support_radius: self.support_radius,
        }
    }

    /// True when `A` is a polynomial of degree at most `deg`.
    pub fn is_polynomial_of_degree(&self, deg: usize) -> bool {
        match &self.shape {
            Shape::Zero => true,
            Shape::Linear { .. } => deg >= 1 || self.scale == 0.0,
            _ => self.scale == 0.0,
        }
    }
}

pub fn make_profile(seed: &ProfileSeed) -> Result<LipschitzProfile> {
    if !(seed.amplitude.is_finite() && seed.amplitude >= 0.0) {
        return Err(LabError::InvalidArgument(format!("amplitude {} must be >= 0", seed.amplitude)));
    }
    if !(seed.bandwidth.is_finite() && seed.bandwidth > 0.0) {
        return Err(LabError::InvalidArgument(format!("bandwidth {} must be positive", seed.bandwidth)));
    }
    let bw = seed.bandwidth;
    let amp = seed.amplitude;
    let tag = Some(seed.tag);
    let p = match seed.tag {
        ProfileTag::Linear => LipschitzProfile::from_shape(tag, Shape::Linear { slope: 1.0 }, amp),
        ProfileTag::GaussianBump => {
            let w = 1.0 / bw;
            let shape = Shape::PolyGauss(vec![PolyGauss::new(vec![1.0], 0.0, PI / (w * w))]);
            let mut p = LipschitzProfile::from_shape(tag, shape, amp);
            p.lip_norm = amp * (2.0 * PI / std::f64::consts::E).sqrt() / w;
            p
        }
        ProfileTag::SmoothedSawtooth => {
            // Eight kinks with alternating slopes -1, +1, ...; flat outside.
            let spacing = 0.5 / bw;
            let s = 0.1 / bw;
            let kinks = 8;
            let centers: Vec<f64> = (0..kinks).map(|k| (k as f64 - 0.5 * (kinks - 1) as f64) * spacing).collect();
            let signs: Vec<f64> = (0..kinks).map(|k| if k % 2 == 0 { -0.5 } else { 0.5 }).collect();
            normalized(tag, Shape::LogCosh { centers, signs, s }, amp)
        }
        ProfileTag::RandomTrig => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.seed);
            let harmonics = 8;
            let base = bw / harmonics as f64;
            let terms = (1..=harmonics)
                .map(|k| {
                    let a: f64 = rng.gen_range(-1.0..1.0);
                    let b: f64 = rng.gen_range(-1.0..1.0);
                    (k as f64 * base, a / k as f64, b / k as f64)
                })
                .collect();
            normalized(tag, Shape::Trig(terms), amp)
        }
        ProfileTag::PolynomialGrowth(d) => {
            let w = 4.0 / bw;
            let mut poly = vec![0.0; d as usize + 1];
            poly[d as usize] = 1.0;
            normalized(tag, Shape::PolyGauss(vec![PolyGauss::new(poly, 0.0, PI / (w * w))]), amp)
        }
    };
    Ok(p)
}

fn normalized(tag: Option<ProfileTag>, shape: Shape, amp: f64) -> LipschitzProfile {
    let sup = shape.sup_derivative();
    let mut p = LipschitzProfile::from_shape(tag, shape, amp / sup);
    p.lip_norm = amp;
    p
}

/// Samples `A^{(order)}` on the grid.
pub fn sample(profile: &LipschitzProfile, domain: Domain, order: usize) -> Result<GridFunction> {
    if order > MAX_ORDER {
        return Err(LabError::InvalidArgument(format!("derivative order {order} exceeds {MAX_ORDER}")));
    }
    GridFunction::from_fn(domain, |x| C64::new(profile.derivative(order, x), 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_round_trip() {
        for t in [
            ProfileTag::Linear,
            ProfileTag::GaussianBump,
            ProfileTag::SmoothedSawtooth,
            ProfileTag::RandomTrig,
            ProfileTag::PolynomialGrowth(3),
        ] {
            assert_eq!(t.to_string().parse::<ProfileTag>().unwrap(), t);
        }
        assert!("spline".parse::<ProfileTag>().is_err());
    }

    #[test]
    fn sawtooth_slopes_alternate() {
        let p = make_profile(&ProfileSeed::new(ProfileTag::SmoothedSawtooth, 1.0)).unwrap();
        assert!((p.lip_norm() - 1.0).abs() < 1e-15);
        assert!(p.derivative(1, -10.0).abs() < 1e-12);
        assert!(p.derivative(1, 10.0).abs() < 1e-12);
        assert!((p.derivative(1, -1.5).abs() - 1.0).abs() < 0.05);
    }
}

//! Command-line surface: run configuration, the experiment catalog, dispatch,
//! and static SVG plots.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic_model::ModelOperatorSpec;
use crate::error::{invalid, LabError, Result};
use crate::experiments::{
    cauchy_series_study, convergence_study, decay_study, estimate_norm, growth_in_d, shift_growth_study, DecayConfig,
    ExperimentRecord, GrowthConfig, NamedFit, NormOperator, NormQuery, ShiftOperator,
};
use crate::gridcore::{lp_norm, Domain, FarField, C64};
use crate::lp_decomp::{build_family, partition_residual, telescope_check, FamilyKind, SlotType};
use crate::operators::{apply_commutator_kernel, apply_commutator_multiplier, identity_residuals, IdentityTag, DEFAULT_BUDGET};
use crate::profiles::{make_profile, sample, LipschitzProfile, ProfileSeed, ProfileTag};
use crate::stats::fit_line;
use crate::symbols::{eval_symbol_exact, eval_symbol_mc, m1_closed_form, SymbolSpec, WindowPair};

/// Experiment ids with a one-line description and the result they probe.
/// The order is part of the interface.
pub const CATALOG: [(&str, &str, &str); 10] = [
    ("t1-identities", "residual table of the exact commutator identities", "Hilbert-transform identities for first and second commutators"),
    ("convergence", "grid refinement slope of one identity residual", "quadrature order of the identity checks"),
    ("kernel-multiplier", "kernel route against multiplier route for C_d", "kernel and hypercube-symbol forms of the commutators"),
    ("symbol-oracle", "exact hypercube symbol against Monte-Carlo averages", "symbol m_d as an average of sign functions"),
    ("decay", "Fourier-coefficient decay of m_1 on a Whitney square", "quadratic coefficient decay on Whitney squares"),
    ("shift-log", "shift ladder for shifted maximal, square or model forms", "logarithmic bounds in the shift parameters"),
    ("growth-in-d", "norm lower bounds of C_d for d = 1..d_max", "polynomial growth of the commutator constants in d"),
    ("norm", "single randomized norm lower bound", "multilinear L^p bounds with Hoelder exponents"),
    ("cauchy-series", "commutator series against the Cauchy integral", "Cauchy integral as a sum of commutators"),
    ("lp-structure", "telescoping, moments and partition of unity", "Littlewood-Paley decomposition of the identity"),
];

pub fn catalog_text() -> String {
    let mut s = String::new();
    for (id, desc, anchor) in CATALOG {
        let _ = writeln!(s, "{id:<18} {desc}  [anchor: {anchor}]");
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecaySection {
    pub n_max: i64,
    pub n1_max: i64,
    pub resolution: usize,
    pub whitney3_resolution: usize,
}

impl Default for DecaySection {
    fn default() -> Self {
        Self { n_max: 256, n1_max: 128, resolution: 512, whitney3_resolution: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrowthSection {
    pub d_max: usize,
    pub length: f64,
    pub n: usize,
    pub trials: usize,
    pub iterations: usize,
    /// Bandwidth of the smoothed-sawtooth profile.
    pub bandwidth: f64,
}

impl Default for GrowthSection {
    fn default() -> Self {
        Self { d_max: 6, length: 32.0, n: 1024, trials: 4, iterations: 80, bandwidth: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftSection {
    /// `maximal`, `square` or `model-form`.
    pub operator: String,
    pub max_shift: i64,
}

impl Default for ShiftSection {
    fn default() -> Self {
        Self { operator: "maximal".into(), max_shift: 1024 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceSection {
    pub tag: String,
    pub ns: Vec<usize>,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        Self { tag: "t1_c1".into(), ns: vec![1024, 2048, 4096] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormSection {
    /// `identity`, `hilbert` or `commutator`.
    pub operator: String,
    pub d: usize,
    pub trials: usize,
    pub iterations: usize,
}

impl Default for NormSection {
    fn default() -> Self {
        Self { operator: "hilbert".into(), d: 1, trials: 16, iterations: 40 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquivalenceSection {
    pub d: usize,
}

impl Default for EquivalenceSection {
    fn default() -> Self {
        Self { d: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SymbolSection {
    pub inputs: usize,
    pub samples: usize,
}

impl Default for SymbolSection {
    fn default() -> Self {
        Self { inputs: 1000, samples: 1_000_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CauchySection {
    pub amplitude: f64,
    pub d_max: usize,
}

impl Default for CauchySection {
    fn default() -> Self {
        Self { amplitude: 0.3, d_max: 6 }
    }
}

/// Everything a run needs. Parsed from `key = value` lines with one section
/// per experiment; absent keys take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub experiment: String,
    pub length: f64,
    pub n: usize,
    /// Truncation radius; `L/4` when absent.
    pub truncation: Option<f64>,
    pub seed: u64,
    pub out_dir: String,
    pub plot: bool,
    pub decay: DecaySection,
    pub growth: GrowthSection,
    pub shift: ShiftSection,
    pub convergence: ConvergenceSection,
    pub norm: NormSection,
    pub equivalence: EquivalenceSection,
    pub symbols: SymbolSection,
    pub cauchy: CauchySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: "t1-identities".into(),
            length: 64.0,
            n: 4096,
            truncation: None,
            seed: 0,
            out_dir: "out".into(),
            plot: true,
            decay: DecaySection::default(),
            growth: GrowthSection::default(),
            shift: ShiftSection::default(),
            convergence: ConvergenceSection::default(),
            norm: NormSection::default(),
            equivalence: EquivalenceSection::default(),
            symbols: SymbolSection::default(),
            cauchy: CauchySection::default(),
        }
    }
}

fn config_error(e: impl std::fmt::Display) -> LabError {
    LabError::InvalidArgument(format!("config: {}", e.to_string().trim_end()))
}

/// Parses one override value; bare words that are not TOML literals become strings.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_table(toml::from_str::<toml::Table>(text).map_err(config_error)?)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: Self = toml::Value::Table(table).try_into().map_err(config_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (if any) and applies `key=value` overrides, dotted keys
    /// addressing sections (`decay.n_max=128`).
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => toml::from_str::<toml::Table>(&std::fs::read_to_string(p)?).map_err(config_error)?,
            None => toml::Table::new(),
        };
        for item in overrides {
            let Some((key, raw)) = item.split_once('=') else {
                return invalid(format!("override `{item}` is not of the form key=value"));
            };
            set_path(&mut table, key.trim(), parse_value(raw.trim()))?;
        }
        Self::from_table(table)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !CATALOG.iter().any(|c| c.0 == self.experiment) {
            return invalid(format!("config: unknown experiment `{}`", self.experiment));
        }
        Domain::new(self.length, self.n)?;
        if let Some(r) = self.truncation {
            if !(r > 0.0 && r <= 0.5 * self.length) {
                return Err(LabError::TruncationTooLarge { r, max: 0.5 * self.length });
            }
        }
        Ok(())
    }

    pub fn far_field(&self) -> FarField {
        FarField::Truncated(self.truncation.unwrap_or(0.25 * self.length))
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| config_error(format!("empty key in `{key}`")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| config_error(format!("`{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// A record plus the plot drawn from it.
pub struct Artifact {
    pub stem: String,
    pub record: ExperimentRecord,
    pub plot: Option<String>,
}

impl Artifact {
    /// Writes CSV, JSON and (when present and enabled) SVG files.
    pub fn save(&self, dir: &Path, plot: bool) -> Result<Vec<PathBuf>> {
        let (c, j) = self.record.save(dir, &self.stem)?;
        let mut out = vec![c, j];
        if let (true, Some(svg)) = (plot, &self.plot) {
            let p = dir.join(format!("{}.svg", self.stem));
            std::fs::write(&p, svg)?;
            out.push(p);
        }
        Ok(out)
    }
}

/// Smooth compactly concentrated profiles used by the identity checks.
pub fn standard_profiles() -> [LipschitzProfile; 3] {
    [
        LipschitzProfile::gaussian(0.5, 2.0, 0.3),
        LipschitzProfile::gaussian(0.4, 1.5, -0.5),
        LipschitzProfile::gaussian(1.0, 1.0, 0.2),
    ]
}

pub fn run_experiment(cfg: &RunConfig) -> Result<Artifact> {
    cfg.validate()?;
    let id = cfg.experiment.as_str();
    let (record, plot) = match id {
        "t1-identities" => run_identities(cfg)?,
        "convergence" => {
            let tag: IdentityTag = cfg.convergence.tag.parse()?;
            let [a, b, f] = standard_profiles();
            let rec = convergence_study(tag, [&a, &b, &f], cfg.length, &cfg.convergence.ns)?;
            let pts: Vec<(f64, f64)> = rec.rows.iter().map(|r| (r.x, r.value)).collect();
            let svg = line_plot("refinement", "dx", "interior sup residual", &[(tag.to_string(), pts)], true, true);
            (rec, Some(svg))
        }
        "kernel-multiplier" => (run_equivalence(cfg)?, None),
        "symbol-oracle" => (run_symbol_oracle(cfg)?, None),
        "decay" => {
            let dc = DecayConfig {
                resolution: cfg.decay.resolution,
                n_range: (8, cfg.decay.n_max),
                n1_range: (8, cfg.decay.n1_max),
                whitney3_resolution: cfg.decay.whitney3_resolution,
                ..DecayConfig::default()
            };
            let rec = decay_study(&WindowPair::standard(), &dc)?;
            let series: Vec<(String, Vec<(f64, f64)>)> = ["n-axis", "n1-axis"]
                .iter()
                .map(|l| (l.to_string(), rec.rows_labeled(l).map(|r| (r.x, r.value)).collect()))
                .collect();
            let svg = line_plot("coefficient decay", "index", "|C|", &series, true, true);
            (rec, Some(svg))
        }
        "shift-log" => {
            let op = shift_operator(cfg)?;
            let mut ladder = Vec::new();
            let mut n = 1i64;
            while n <= cfg.shift.max_shift {
                ladder.push(n);
                n *= 2;
            }
            let rec = shift_growth_study(&op, &ladder, cfg.seed)?;
            let pts: Vec<(f64, f64)> = rec.rows_labeled("ladder").map(|r| (r.x, r.value)).collect();
            let svg = line_plot("shift ladder", "shift n", "lower-bound estimate", &[(cfg.shift.operator.clone(), pts)], true, false);
            (rec, Some(svg))
        }
        "growth-in-d" => {
            let g = &cfg.growth;
            let mut seed = ProfileSeed::new(ProfileTag::SmoothedSawtooth, 1.0);
            seed.bandwidth = g.bandwidth;
            let gc = GrowthConfig {
                d_max: g.d_max,
                profile: make_profile(&seed)?,
                length: g.length,
                n: g.n,
                far: FarField::Truncated(0.25 * g.length),
                trials: g.trials,
                iterations: g.iterations,
                seed: cfg.seed,
            };
            let rec = growth_in_d(&gc)?;
            let pts: Vec<(f64, f64)> = rec.rows_labeled("estimate").map(|r| (r.x, r.value)).collect();
            let svg = line_plot("growth in d", "d", "lower-bound estimate", &[("C_d".into(), pts)], true, true);
            (rec, Some(svg))
        }
        "norm" => (run_norm(cfg)?, None),
        "cauchy-series" => {
            let a = make_profile(&ProfileSeed::new(ProfileTag::PolynomialGrowth(1), cfg.cauchy.amplitude))?;
            let f = LipschitzProfile::gaussian(1.0, 1.0, 0.0);
            let dom = Domain::new(cfg.length, cfg.n)?;
            let mut rec = cauchy_series_study(&a, &f, dom, cfg.cauchy.d_max)?;
            let amp = cfg.cauchy.amplitude;
            let ok = rec
                .rows_labeled("error")
                .all(|r| r.value <= 2.0 * amp.powi(r.index as i32 + 1) / (1.0 - amp) + 5e-3);
            rec.passed = ok;
            let pts: Vec<(f64, f64)> = rec.rows_labeled("error").map(|r| (r.x, r.value)).collect();
            let svg = line_plot("series truncation", "D", "relative L2 error", &[("error".into(), pts)], false, true);
            (rec, Some(svg))
        }
        "lp-structure" => (run_lp_structure()?, None),
        other => return invalid(format!("unknown experiment `{other}`")),
    };
    Ok(Artifact { stem: id.to_string(), record, plot })
}

fn run_identities(cfg: &RunConfig) -> Result<(ExperimentRecord, Option<String>)> {
    let [a, b, f] = standard_profiles();
    let dom = Domain::new(cfg.length, cfg.n)?;
    let mut rec = ExperimentRecord::new("t1-identities");
    let mut series = Vec::new();
    for (i, tag) in IdentityTag::ALL.into_iter().enumerate() {
        let r = identity_residuals(tag, &a, &b, &f, dom)?;
        rec.rows.push(crate::experiments::Row { label: tag.to_string(), index: i, x: cfg.n as f64, value: r.sup });
        rec.notes.push(format!("{tag}: sup {:.3e}, l2 {:.3e}, relative {:.3e}", r.sup, r.l2, r.sup / r.scale));
        if tag != IdentityTag::Calc2 && r.sup > 1e-3 {
            rec.passed = false;
        }
        let vals = r.residual.values();
        let pts = r.interior.iter().map(|&m| (dom.x(m), vals[m].norm().max(1e-18))).collect();
        series.push((tag.to_string(), pts));
    }
    rec.verdict = if rec.passed { "all residuals within 1e-3".into() } else { "residual above 1e-3".into() };
    let svg = line_plot("identity residuals", "x", "|residual|", &series, false, true);
    Ok((rec, Some(svg)))
}

fn run_equivalence(cfg: &RunConfig) -> Result<ExperimentRecord> {
    let d = cfg.equivalence.d;
    let dom = Domain::new(cfg.length, cfg.n)?;
    let a = LipschitzProfile::gaussian(0.5, 2.0, 0.3);
    let f = sample(&LipschitzProfile::gaussian(1.0, 1.0, 0.2), dom, 0)?;
    let ap = sample(&a, dom, 1)?;
    let kernel = apply_commutator_kernel(d, &a, &f, FarField::Periodic)?;
    let mult = apply_commutator_multiplier(&SymbolSpec::Commutator { d }, &f, &vec![ap; d], DEFAULT_BUDGET)?
        .scale(C64::new(0.0, -PI));
    let err = lp_norm(&kernel.sub(&mult)?, 2.0)? / lp_norm(&mult, 2.0)?;
    let mut rec = ExperimentRecord::new("kernel-multiplier");
    rec.rows.push(crate::experiments::Row { label: format!("d={d}"), index: d, x: cfg.n as f64, value: err });
    let tol = if d == 1 { 1e-3 } else { 1e-2 };
    rec.passed = err <= tol;
    rec.verdict = format!("relative L2 difference {err:.3e} (tolerance {tol:.0e})");
    Ok(rec)
}

fn run_symbol_oracle(cfg: &RunConfig) -> Result<ExperimentRecord> {
    let s = &cfg.symbols;
    let seed = cfg.seed;
    let within: Vec<(usize, f64)> = (0..s.inputs)
        .into_par_iter()
        .map(|i| {
            let d = 1 + i % 4;
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
            let freqs: Vec<f64> = (0..=d).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let spec = SymbolSpec::Commutator { d };
            let exact = eval_symbol_exact(&spec, &freqs)?;
            let (mean, _) = eval_symbol_mc(&spec, &freqs, s.samples, rng.gen())?;
            Ok((d, sign_mean_z(mean, exact, s.samples)))
        })
        .collect::<Result<_>>()?;
    let mut rec = ExperimentRecord::new("symbol-oracle");
    let mut good = 0usize;
    for (i, &(d, z)) in within.iter().enumerate() {
        rec.rows.push(crate::experiments::Row { label: format!("d={d}"), index: i, x: d as f64, value: z });
        if z <= 4.0 {
            good += 1;
        }
    }
    let frac = good as f64 / within.len().max(1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut m1_err: f64 = 0.0;
    for _ in 0..10_000 {
        let (x, y) = (rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0));
        m1_err = m1_err.max((m1_closed_form(x, y)? - eval_symbol_exact(&SymbolSpec::Commutator { d: 1 }, &[x, y])?).abs());
    }
    rec.passed = frac >= 0.99 && m1_err <= 1e-13;
    rec.verdict = format!("{:.2}% within 4 SE; closed-form m_1 max difference {m1_err:.2e}", 100.0 * frac);
    Ok(rec)
}

/// z-score of a Monte-Carlo mean of `+-1` draws against the exact mean `m`,
/// with the standard error `sqrt((1 - m^2) / samples)` implied by `m`. The
/// sample variance collapses to 0 when the minority sign is never drawn.
pub fn sign_mean_z(mean: f64, exact: f64, samples: usize) -> f64 {
    let se = ((1.0 - exact * exact).max(0.0) / samples as f64).sqrt();
    let diff = (mean - exact).abs();
    if se == 0.0 {
        if diff <= 1e-12 { 0.0 } else { f64::INFINITY }
    } else {
        diff / se
    }
}

fn shift_operator(cfg: &RunConfig) -> Result<ShiftOperator> {
    Ok(match cfg.shift.operator.as_str() {
        "maximal" => ShiftOperator::Maximal { log2_cells: 21, blocks: vec![9, 10, 11], random_inputs: 1 },
        "square" => ShiftOperator::Square {
            family: FamilyKind::Noncompact,
            length: cfg.length,
            n: cfg.n,
            scales: (-3, 4),
            random_inputs: 4,
        },
        "model-form" => ShiftOperator::ModelForm {
            spec: ModelOperatorSpec {
                shifts: vec![0, 0],
                kinds: vec![SlotType::Psi, SlotType::Psi, SlotType::Phi],
                scales: (0, 3),
                window: (-4.0, 4.0),
            },
            length: 32.0,
            n: 4096,
        },
        other => return invalid(format!("config: unknown shift operator `{other}`")),
    })
}

fn run_norm(cfg: &RunConfig) -> Result<ExperimentRecord> {
    let s = &cfg.norm;
    let (op, arity) = match s.operator.as_str() {
        "identity" => (NormOperator::Identity, 1),
        "hilbert" => (NormOperator::Hilbert, 1),
        "commutator" => {
            let p = make_profile(&ProfileSeed::new(ProfileTag::GaussianBump, 1.0))?;
            let p = p.scaled(1.0 / p.lip_norm());
            (NormOperator::Commutator { d: s.d, profile: p }, s.d + 1)
        }
        other => return invalid(format!("config: unknown norm operator `{other}`")),
    };
    let mut exps = vec![f64::INFINITY; arity];
    exps[0] = 2.0;
    let mut q = NormQuery::new(op, exps, 2.0);
    q.trials = s.trials;
    q.iterations = s.iterations;
    q.seed = cfg.seed;
    q.length = cfg.length;
    q.n = cfg.n;
    q.far = FarField::Periodic;
    estimate_norm(&q)
}

fn run_lp_structure() -> Result<ExperimentRecord> {
    let fam = build_family(FamilyKind::Noncompact);
    let grid: Vec<f64> = (-400..=400).map(|i| i as f64 * 0.05).collect();
    let tele = telescope_check(&fam, -4, 4, &grid)?;
    let h = 1e-3;
    let (mut m0, mut m1) = (0.0, 0.0);
    for i in -40_000..=40_000 {
        let x = i as f64 * h;
        let v = fam.psi(x);
        m0 += v * h;
        m1 += x * v * h;
    }
    let mut rec = ExperimentRecord::new("lp-structure");
    rec.rows.push(crate::experiments::Row { label: "telescope".into(), index: 0, x: 0.0, value: tele.max_error });
    rec.rows.push(crate::experiments::Row { label: "moment0".into(), index: 0, x: 0.0, value: m0.abs() });
    rec.rows.push(crate::experiments::Row { label: "moment1".into(), index: 1, x: 1.0, value: m1.abs() });
    let mut res = Vec::new();
    // Ladder starts once the window lies inside the covered band 2^-K..2^K.
    for k in 2..=7 {
        let r = partition_residual(&fam, -k, k, (0.5, 2.0), 301);
        rec.rows.push(crate::experiments::Row { label: "partition".into(), index: k as usize, x: k as f64, value: r });
        res.push(r);
    }
    let worst = res.windows(2).map(|w| w[0] / w[1]).fold(f64::INFINITY, f64::min);
    let xs: Vec<f64> = (2..2 + res.len()).map(|k| k as f64).collect();
    let ys: Vec<f64> = res.iter().map(|r| r.ln()).collect();
    rec.fits.push(NamedFit::new("partition", &fit_line(&xs, &ys)));
    rec.passed = tele.max_error <= 1e-12 && m0.abs() <= 1e-12 && m1.abs() <= 1e-12 && worst >= 1.9;
    rec.verdict = format!(
        "telescope {:.1e}, moments {:.1e}/{:.1e}, partition decay factor >= {worst:.2}",
        tele.max_error,
        m0.abs(),
        m1.abs()
    );
    Ok(rec)
}

/// Minimal static line plot. Non-positive values are dropped on log axes.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[(String, Vec<(f64, f64)>)], log_x: bool, log_y: bool) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const M: f64 = 60.0;
    let tx = |v: f64| if log_x { v.log10() } else { v };
    let ty = |v: f64| if log_y { v.log10() } else { v };
    let keep = |&(x, y): &(f64, f64)| (!log_x || x > 0.0) && (!log_y || y > 0.0) && x.is_finite() && y.is_finite();
    let pts: Vec<Vec<(f64, f64)>> =
        series.iter().map(|(_, p)| p.iter().filter(|q| keep(q)).map(|&(x, y)| (tx(x), ty(y))).collect()).collect();
    let all: Vec<&(f64, f64)> = pts.iter().flatten().collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &&(x, y) in &all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if all.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * M,
        H - 2.0 * M
    );
    let lx = if log_x { format!("{xlabel} (log10)") } else { xlabel.to_string() };
    let ly = if log_y { format!("{ylabel} (log10)") } else { ylabel.to_string() };
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 15.0, escape(&lx));
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(&ly)
    );
    for (v, anchor, x, y) in [(x0, "start", sx(x0), H - M + 16.0), (x1, "end", sx(x1), H - M + 16.0)] {
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}">{v:.3}</text>"#);
    }
    for (v, y) in [(y0, sy(y0)), (y1, sy(y1) + 10.0)] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{y:.1}" text-anchor="end">{v:.3}</text>"#, M - 4.0);
    }
    for (i, ((name, _), p)) in series.iter().zip(&pts).enumerate() {
        let c = colors[i % colors.len()];
        let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" fill="{c}">{}</text>"#,
            W - M - 100.0,
            M + 16.0 + 14.0 * i as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

//! Test geometries: Hermitian metrics on the torus, admissible potentials, paths of
//! potentials, and Gauss–Legendre rules on [0, 1].

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::{Form, Grid, GridSpec, ScalarField, SpectralError, C64};

const MAX_HALVINGS: usize = 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("positivity not reached after {0} halvings")]
    PositivityUnreachable(usize),
    #[error("perturbation size must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("metric is not genuinely non-closed: max |∂ω| = {max:e} < ε/10 = {bound:e}")]
    NotNonClosed { max: f64, bound: f64 },
    #[error("potential is not real-valued (max imaginary part {0:e})")]
    NotReal(f64),
    #[error("path leaves the admissible set at t = {0}")]
    InadmissiblePath(f64),
    #[error("quadrature order must be at least 1")]
    BadOrder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Flat,
    KaehlerPerturbed,
    NonkaehlerPerturbed,
}

/// A validated positive real (1,1)-form on a torus grid.
#[derive(Clone, Debug)]
pub struct MetricScenario {
    pub grid: Grid,
    pub omega: Form,
    pub kind: MetricKind,
    pub epsilon: f64,
    pub seed: u64,
}

impl MetricScenario {
    pub fn n(&self) -> usize {
        self.grid.n()
    }
}

/// Smallest per-axis resolution keeping products of `n + 1` bandwidth-`b` factors alias-free.
pub fn minimal_resolution(n: usize, band: u32) -> usize {
    2 * (n + 1) * band as usize + 1
}

/// Comfortable default resolution with headroom for `n + 2` factors.
pub fn default_resolution(n: usize) -> usize {
    2 * (n + 2) + 3
}

/// Per-axis resolutions with `m` points on the first `active` real axes and 1 elsewhere.
pub fn resolutions(n: usize, m: usize, active: &[usize]) -> Vec<usize> {
    let mut r = vec![1; 2 * n];
    for &a in active {
        if a < 2 * n {
            r[a] = m;
        }
    }
    r
}

/// Default active axes, four in every dimension: (x₁, y₁, x₂, y₂) for n ≤ 3,
/// (x₁, y₁, x₂, x₃) for n = 4 and (x₁, x₂, x₃, x₄) beyond, so that the top correction
/// terms, which need n − 1 varying complex directions, are nonzero up to n = 5.
pub fn default_active_axes(n: usize) -> Vec<usize> {
    match n {
        0..=3 => vec![0, 1, 2, 3],
        4 => vec![0, 1, 2, 4],
        _ => vec![0, 2, 4, 6],
    }
}

pub fn default_grid(n: usize, m: usize) -> Result<Grid, SpectralError> {
    GridSpec::new(n, resolutions(n, m, &default_active_axes(n)))
}

fn active_axes(grid: &Grid) -> Vec<usize> {
    (0..grid.resolutions().len()).filter(|&a| grid.is_active(a)).collect()
}

/// All bandwidth-1 multi-indices over the active axes, in a fixed order.
fn unit_modes(grid: &Grid) -> Vec<Vec<i64>> {
    let dims = grid.resolutions().len();
    let active = active_axes(grid);
    (0..3usize.pow(active.len() as u32))
        .map(|code| {
            let mut k = vec![0i64; dims];
            let mut r = code;
            for &a in &active {
                k[a] = (r % 3) as i64 - 1;
                r /= 3;
            }
            k
        })
        .collect()
}

fn uniform_c(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

/// Random real bandwidth-1 field: amplitudes drawn for one mode of each ±k pair, mirrored conjugate.
pub fn random_real_field(grid: &Grid, rng: &mut ChaCha8Rng) -> Result<ScalarField, SpectralError> {
    let modes = unit_modes(grid);
    let norm = 1.0 / (modes.len() as f64).sqrt();
    let mut table = BTreeMap::new();
    for k in &modes {
        let neg: Vec<i64> = k.iter().map(|x| -x).collect();
        if table.contains_key(k) {
            continue;
        }
        let mut a = uniform_c(rng) * norm;
        if *k == neg {
            a.im = 0.0;
            table.insert(k.clone(), a);
        } else {
            table.insert(k.clone(), a);
            table.insert(neg, a.conj());
        }
    }
    let f = ScalarField::from_modes(grid, &table)?;
    Ok(f.real_part())
}

/// Random complex bandwidth-1 field with independent amplitudes on every mode.
pub fn random_complex_field(grid: &Grid, rng: &mut ChaCha8Rng) -> Result<ScalarField, SpectralError> {
    let modes = unit_modes(grid);
    let norm = 1.0 / (modes.len() as f64).sqrt();
    let table: BTreeMap<Vec<i64>, C64> = modes.into_iter().map(|k| (k, uniform_c(rng) * norm)).collect();
    ScalarField::from_modes(grid, &table)
}

/// Real field from explicit modes; each listed mode is paired with its conjugate partner.
pub fn real_field_from_modes(grid: &Grid, modes: &[(Vec<i64>, C64)]) -> Result<ScalarField, SpectralError> {
    let mut table: BTreeMap<Vec<i64>, C64> = BTreeMap::new();
    for (k, a) in modes {
        let neg: Vec<i64> = k.iter().map(|x| -x).collect();
        *table.entry(k.clone()).or_insert(C64::new(0.0, 0.0)) += a * 0.5;
        *table.entry(neg).or_insert(C64::new(0.0, 0.0)) += a.conj() * 0.5;
    }
    Ok(ScalarField::from_modes(grid, &table)?.real_part())
}

/// i∂∂̄f as a (1,1)-form.
pub fn i_ddbar(f: &ScalarField) -> Form {
    Form::scalar(f.clone()).delbar().del().scale(C64::new(0.0, 1.0))
}

/// ω + i∂∂̄φ.
pub fn omega_phi(omega: &Form, phi: &ScalarField) -> Result<Form, SpectralError> {
    omega.add(&i_ddbar(phi))
}

pub fn flat_metric(grid: &Grid) -> MetricScenario {
    MetricScenario {
        grid: grid.clone(),
        omega: Form::flat_kaehler(grid),
        kind: MetricKind::Flat,
        epsilon: 0.0,
        seed: 0,
    }
}

fn halve_until_positive(
    epsilon: f64,
    build: impl Fn(f64) -> Result<Form, SpectralError>,
) -> Result<(Form, f64), ScenarioError> {
    let mut eps = epsilon;
    for _ in 0..=MAX_HALVINGS {
        let w = build(eps)?;
        if w.is_positive()?.positive {
            return Ok((w, eps));
        }
        eps *= 0.5;
    }
    Err(ScenarioError::PositivityUnreachable(MAX_HALVINGS))
}

/// ω = ω_flat + ε·ρ for a random real (1,1)-form ρ with bandwidth-1 coefficients.
pub fn nonkaehler_metric(grid: &Grid, epsilon: f64, seed: u64) -> Result<MetricScenario, ScenarioError> {
    if !(epsilon > 0.0) {
        return Err(ScenarioError::BadEpsilon(epsilon));
    }
    let n = grid.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = vec![vec![ScalarField::zero(grid); n]; n];
    for j in 0..n {
        h[j][j] = random_real_field(grid, &mut rng)?;
        for k in j + 1..n {
            let f = random_complex_field(grid, &mut rng)?;
            h[k][j] = f.conj();
            h[j][k] = f;
        }
    }
    let rho = Form::from_hermitian(grid, &h);
    let flat = Form::flat_kaehler(grid);
    let (omega, eps) = halve_until_positive(epsilon, |e| flat.add(&rho.scale_real(e)))?;
    let max = omega.del().max_abs();
    if max < eps / 10.0 {
        return Err(ScenarioError::NotNonClosed { max, bound: eps / 10.0 });
    }
    Ok(MetricScenario { grid: grid.clone(), omega, kind: MetricKind::NonkaehlerPerturbed, epsilon: eps, seed })
}

/// ω = ω_flat + ε·i∂∂̄ρ for a random real scalar ρ; closed by construction.
pub fn kaehler_perturbed_metric(grid: &Grid, epsilon: f64, seed: u64) -> Result<MetricScenario, ScenarioError> {
    if !(epsilon > 0.0) {
        return Err(ScenarioError::BadEpsilon(epsilon));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = random_real_field(grid, &mut rng)?;
    let ddb = i_ddbar(&rho);
    let flat = Form::flat_kaehler(grid);
    let (omega, eps) = halve_until_positive(epsilon, |e| flat.add(&ddb.scale_real(e)))?;
    Ok(MetricScenario { grid: grid.clone(), omega, kind: MetricKind::KaehlerPerturbed, epsilon: eps, seed })
}

/// A real potential φ with ω + i∂∂̄φ positive.
#[derive(Clone, Debug)]
pub struct Potential {
    pub phi: ScalarField,
    pub scale: f64,
    pub min_pivot: f64,
}

/// Scales `candidate` by successive halvings until ω_φ is positive.
pub fn admissible_potential(scenario: &MetricScenario, candidate: &ScalarField) -> Result<Potential, ScenarioError> {
    let imag = candidate.max_imag();
    if imag > 1e-12 * (1.0 + candidate.max_abs()) {
        return Err(ScenarioError::NotReal(imag));
    }
    let phi = candidate.real_part();
    let ddb = i_ddbar(&phi);
    let mut scale = 1.0;
    for _ in 0..=MAX_HALVINGS {
        let w = scenario.omega.add(&ddb.scale_real(scale))?;
        let pos = w.is_positive()?;
        if pos.positive {
            return Ok(Potential { phi: phi.scale_real(scale), scale, min_pivot: pos.min_pivot });
        }
        scale *= 0.5;
    }
    Err(ScenarioError::PositivityUnreachable(MAX_HALVINGS))
}

/// Random admissible potential drawn from `seed`.
pub fn random_potential(scenario: &MetricScenario, seed: u64) -> Result<Potential, ScenarioError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let f = random_real_field(&scenario.grid, &mut rng)?;
    admissible_potential(scenario, &f)
}

/// A smooth path of potentials t ∈ [0, 1].
#[derive(Clone, Debug)]
pub enum PotentialPath {
    /// (1−t)φ′ + tφ″.
    Linear { from: ScalarField, to: ScalarField },
    /// (1−t)φ′ + tφ″ + t(1−t)ψ.
    Bridge { from: ScalarField, to: ScalarField, psi: ScalarField },
    /// φ + tC.
    Shifted { base: ScalarField, constant: f64 },
}

impl PotentialPath {
    /// (φ_t, φ̇_t).
    pub fn sample(&self, t: f64) -> Result<(ScalarField, ScalarField), SpectralError> {
        match self {
            Self::Linear { from, to } => {
                let mut phi = from.scale_real(1.0 - t);
                phi.axpy(to, C64::new(t, 0.0))?;
                Ok((phi, to.sub(from)?))
            }
            Self::Bridge { from, to, psi } => {
                let mut phi = from.scale_real(1.0 - t);
                phi.axpy(to, C64::new(t, 0.0))?;
                phi.axpy(psi, C64::new(t * (1.0 - t), 0.0))?;
                let mut dot = to.sub(from)?;
                dot.axpy(psi, C64::new(1.0 - 2.0 * t, 0.0))?;
                Ok((phi, dot))
            }
            Self::Shifted { base, constant } => {
                let c = ScalarField::constant(base.grid(), C64::new(*constant, 0.0));
                let mut phi = base.clone();
                phi.axpy(&c, C64::new(t, 0.0))?;
                Ok((phi, c))
            }
        }
    }

    pub fn endpoints(&self) -> Result<(ScalarField, ScalarField), SpectralError> {
        Ok((self.sample(0.0)?.0, self.sample(1.0)?.0))
    }

    /// Verifies positivity of ω_{φ_t} at every node of `rule`.
    pub fn check_admissible(&self, scenario: &MetricScenario, rule: &QuadratureRule) -> Result<(), ScenarioError> {
        for &t in &rule.nodes {
            let (phi, _) = self.sample(t)?;
            if !omega_phi(&scenario.omega, &phi)?.is_positive()?.positive {
                return Err(ScenarioError::InadmissiblePath(t));
            }
        }
        Ok(())
    }
}

/// Bridge between two admissible potentials whose detour ψ is halved until every node is admissible.
pub fn admissible_bridge(
    scenario: &MetricScenario,
    from: &ScalarField,
    to: &ScalarField,
    psi: &ScalarField,
    rule: &QuadratureRule,
) -> Result<PotentialPath, ScenarioError> {
    let mut scale = 1.0;
    for _ in 0..=MAX_HALVINGS {
        let path = PotentialPath::Bridge { from: from.clone(), to: to.clone(), psi: psi.scale_real(scale) };
        if path.check_admissible(scenario, rule).is_ok() {
            return Ok(path);
        }
        scale *= 0.5;
    }
    Err(ScenarioError::PositivityUnreachable(MAX_HALVINGS))
}

/// Gauss–Legendre nodes and weights on [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuadratureRule {
    pub order: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&t, &w)| w * f(t)).sum()
    }
}

/// Legendre P_q and its derivative at x.
fn legendre(q: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if q == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=q {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = q as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

pub fn gauss_legendre(q: usize) -> Result<QuadratureRule, ScenarioError> {
    if q == 0 {
        return Err(ScenarioError::BadOrder);
    }
    let mut nodes = Vec::with_capacity(q);
    let mut weights = Vec::with_capacity(q);
    for i in 1..=q {
        let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (q as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(q, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(q, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes.push(0.5 * (1.0 - x));
        weights.push(0.5 * w);
    }
    Ok(QuadratureRule { order: q, nodes, weights })
}

/// Lifts a real value into a complex constant.
pub fn real_constant(grid: &Grid, c: f64) -> ScalarField {
    ScalarField::constant(grid, Complex64::new(c, 0.0))
}

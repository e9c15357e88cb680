//! Job configuration and the coeffs / eval / verify / sweep jobs behind the command-line tool.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::energy::{relative_residual, EnergyError, Evaluator, Residual};
use crate::exact::{self, rational_string, ExactError, Rational};
use crate::scenarios::{
    admissible_bridge, admissible_potential, default_active_axes, default_resolution, flat_metric,
    gauss_legendre, kaehler_perturbed_metric, minimal_resolution, nonkaehler_metric, random_potential,
    random_real_field, real_field_from_modes, MetricKind, MetricScenario, PotentialPath, ScenarioError,
};
use crate::spectral::{Grid, GridSpec, ScalarField, SpectralError, C64};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("grid too coarse: axis {axis} has resolution {res}, the alias-free minimum is {minimal}")]
    AliasRisk { axis: usize, res: usize, minimal: usize },
    #[error("tolerance `{key}` = {value:e} is more than 10x the default {default:e}; pass --i-know to allow it")]
    LooseTolerance { key: String, value: f64, default: f64 },
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// 1 for numerical failures that surface as errors, 2 for configuration and precondition errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Energy(EnergyError::Imaginary { .. }) => 1,
            _ => 2,
        }
    }
}

/// One Fourier mode of a potential: integer wave vector over the 2n real axes and a complex amplitude.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeSpec {
    pub k: Vec<i64>,
    pub amp: C64,
}

/// Parses `"k₁,…,k_{2n} = a; …"` where each amplitude is `re`, `re±imi` or `imi`.
pub fn parse_modes(text: &str) -> Result<Vec<ModeSpec>, HarnessError> {
    let mut out = Vec::new();
    for entry in text.split(';').map(str::trim).filter(|e| !e.is_empty()) {
        let (lhs, rhs) = entry
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("mode `{entry}` lacks `=`")))?;
        let k = lhs
            .split(',')
            .map(|t| t.trim().parse::<i64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| HarnessError::Config(format!("mode `{entry}`: {e}")))?;
        let amp = parse_complex(rhs.trim()).ok_or_else(|| HarnessError::Config(format!("mode `{entry}`: bad amplitude")))?;
        out.push(ModeSpec { k, amp });
    }
    Ok(out)
}

fn parse_complex(s: &str) -> Option<C64> {
    let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        return None;
    }
    let Some(body) = s.strip_suffix('i') else {
        return finite(s.parse().ok()?).map(|r| C64::new(r, 0.0));
    };
    // Split at the last sign that is not the leading one and not part of an exponent.
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&p| (bytes[p] == b'+' || bytes[p] == b'-') && !matches!(bytes[p - 1], b'e' | b'E'));
    let (re, im) = match split {
        Some(p) => (body[..p].parse().ok()?, sign_only(&body[p..])?),
        None => (0.0, sign_only(body)?),
    };
    Some(C64::new(finite(re)?, finite(im)?))
}

fn sign_only(s: &str) -> Option<f64> {
    match s {
        "" | "+" => Some(1.0),
        "-" => Some(-1.0),
        _ => s.parse().ok(),
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    pub kind: MetricKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_epsilon() -> f64 {
    0.3
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    pub seed: Option<u64>,
    pub modes: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    #[default]
    Linear,
    Bridge,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    #[serde(default)]
    pub kind: PathKind,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    pub order: Option<usize>,
}

/// Residual tolerances; unset entries take the defaults in [`Tolerances::DEFAULT`].
#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    pub path: Option<f64>,
    pub explicit: Option<f64>,
    pub dual: Option<f64>,
    pub kaehler: Option<f64>,
    pub margin: Option<f64>,
    pub cocycle: Option<f64>,
    pub shift: Option<f64>,
    pub proof: Option<f64>,
    pub assembly: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tolerances {
    pub path: f64,
    pub explicit: f64,
    pub dual: f64,
    pub kaehler: f64,
    pub margin: f64,
    pub cocycle: f64,
    pub shift: f64,
    pub proof: f64,
    pub assembly: f64,
}

impl Tolerances {
    pub const DEFAULT: Tolerances = Tolerances {
        path: 1e-8,
        explicit: 1e-9,
        dual: 1e-9,
        kaehler: 1e-12,
        margin: 1e-10,
        cocycle: 1e-8,
        shift: 1e-9,
        proof: 1e-8,
        assembly: 1e-9,
    };

    /// Merges overrides, rejecting non-positive values and loosening beyond 10x unless `i_know`.
    pub fn resolve(cfg: &ToleranceConfig, i_know: bool) -> Result<Self, HarnessError> {
        let d = Self::DEFAULT;
        let pick = |key: &str, v: Option<f64>, default: f64| -> Result<f64, HarnessError> {
            let Some(v) = v else { return Ok(default) };
            if !(v > 0.0) || !v.is_finite() {
                return Err(HarnessError::Config(format!("tolerance `{key}` must be positive and finite")));
            }
            if v > 10.0 * default && !i_know {
                return Err(HarnessError::LooseTolerance { key: key.into(), value: v, default });
            }
            Ok(v)
        };
        Ok(Tolerances {
            path: pick("path", cfg.path, d.path)?,
            explicit: pick("explicit", cfg.explicit, d.explicit)?,
            dual: pick("dual", cfg.dual, d.dual)?,
            kaehler: pick("kaehler", cfg.kaehler, d.kaehler)?,
            margin: pick("margin", cfg.margin, d.margin)?,
            cocycle: pick("cocycle", cfg.cocycle, d.cocycle)?,
            shift: pick("shift", cfg.shift, d.shift)?,
            proof: pick("proof", cfg.proof, d.proof)?,
            assembly: pick("assembly", cfg.assembly, d.assembly)?,
        })
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub resolutions: Vec<usize>,
    #[serde(default)]
    pub orders: Vec<usize>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CoeffsConfig {
    pub n_min: Option<usize>,
    pub n_max: Option<usize>,
    /// Test hook: name of an Aubin-Yau constant to perturb by +1 before checking.
    pub corrupt: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub dump_forms: bool,
}

/// Whole job description as read from a TOML file.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub n: Option<usize>,
    pub resolutions: Option<Vec<usize>>,
    pub metric: Option<MetricConfig>,
    #[serde(default)]
    pub potential: PotentialConfig,
    #[serde(default)]
    pub path: PathConfig,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub coeffs: CoeffsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl JobConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.message().to_string()))
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, HarnessError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Applies a command-line seed to the metric and, if seed-driven, the potential.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(m) = self.metric.as_mut() {
            m.seed = seed;
        }
        if self.potential.modes.is_none() {
            self.potential.seed = Some(seed);
        }
    }

    pub fn n(&self) -> Result<usize, HarnessError> {
        let n = self.n.ok_or_else(|| HarnessError::Config("missing key `n`".into()))?;
        if !(2..=12).contains(&n) {
            return Err(HarnessError::Config(format!("n = {n} outside 2..=12")));
        }
        Ok(n)
    }

    pub fn modes(&self) -> Result<Option<Vec<ModeSpec>>, HarnessError> {
        self.potential.modes.as_deref().map(parse_modes).transpose()
    }

    /// Per-axis bandwidth needed by the configured fields (1 for built-in random fields).
    fn bandwidth(&self) -> Result<u32, HarnessError> {
        let mut b = 1u32;
        for m in self.modes()?.unwrap_or_default() {
            for &k in &m.k {
                b = b.max(u32::try_from(k.unsigned_abs()).unwrap_or(u32::MAX));
            }
        }
        Ok(b)
    }

    /// Resolutions to use: the configured ones, else the default grid on the default active axes.
    pub fn resolutions(&self) -> Result<Vec<usize>, HarnessError> {
        let n = self.n()?;
        match &self.resolutions {
            Some(r) => Ok(r.clone()),
            None => {
                let m = default_resolution(n).max(minimal_resolution(n, self.bandwidth()?));
                Ok(crate::scenarios::resolutions(n, m, &default_active_axes(n)))
            }
        }
    }

    /// Rejects grids on which products of the configured fields would alias.
    pub fn alias_check(&self, res: &[usize]) -> Result<(), HarnessError> {
        let n = self.n()?;
        if res.len() != 2 * n {
            return Err(HarnessError::Config(format!("expected {} resolutions, got {}", 2 * n, res.len())));
        }
        let minimal = minimal_resolution(n, self.bandwidth()?);
        for (axis, &m) in res.iter().enumerate() {
            if m > 1 && m < minimal {
                return Err(HarnessError::AliasRisk { axis, res: m, minimal });
            }
        }
        if let Some(modes) = self.modes()? {
            for md in &modes {
                if md.k.len() != 2 * n {
                    return Err(HarnessError::Config(format!("mode has {} entries, expected {}", md.k.len(), 2 * n)));
                }
                for (axis, &k) in md.k.iter().enumerate() {
                    if k != 0 && res[axis] == 1 {
                        return Err(HarnessError::Config(format!("mode varies along inactive axis {axis}")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn quadrature_order(&self) -> Result<usize, HarnessError> {
        let n = self.n()?;
        match self.quadrature.order {
            Some(0) => Err(HarnessError::Config("quadrature order must be at least 1".into())),
            Some(q) => Ok(q),
            None => Ok(n + 3),
        }
    }
}

/// Outcome of a job: a JSON document and whether every check passed.
#[derive(Clone, Debug)]
pub struct JobOutcome {
    pub passed: bool,
    pub report: Value,
}

impl JobOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

fn build_metric(grid: &Grid, cfg: &MetricConfig) -> Result<MetricScenario, HarnessError> {
    Ok(match cfg.kind {
        MetricKind::Flat => flat_metric(grid),
        MetricKind::KaehlerPerturbed => kaehler_perturbed_metric(grid, cfg.epsilon, cfg.seed)?,
        MetricKind::NonkaehlerPerturbed => nonkaehler_metric(grid, cfg.epsilon, cfg.seed)?,
    })
}

/// A fully built scenario: grid, metric, evaluator, quadrature and two endpoint potentials.
pub struct Prepared {
    pub scenario: MetricScenario,
    pub evaluator: Evaluator,
    pub rule: crate::scenarios::QuadratureRule,
    pub phi: ScalarField,
    pub phi2: ScalarField,
    pub seed: u64,
}

/// Builds the scenario described by `cfg` on the given resolutions, after the alias pre-check.
pub fn prepare(cfg: &JobConfig, res: &[usize], order: usize) -> Result<Prepared, HarnessError> {
    cfg.alias_check(res)?;
    let n = cfg.n()?;
    let metric = cfg.metric.as_ref().ok_or_else(|| HarnessError::Config("missing table `metric`".into()))?;
    let grid = GridSpec::new(n, res.to_vec())?;
    let scenario = build_metric(&grid, metric)?;
    let evaluator = Evaluator::new(&scenario)?;
    let rule = gauss_legendre(order)?;
    let seed = cfg.potential.seed.unwrap_or(metric.seed.wrapping_add(1));
    let phi = match cfg.modes()? {
        Some(modes) => {
            let pairs: Vec<(Vec<i64>, C64)> = modes.into_iter().map(|m| (m.k, m.amp)).collect();
            admissible_potential(&scenario, &real_field_from_modes(&grid, &pairs)?)?.phi
        }
        None => random_potential(&scenario, seed)?.phi,
    };
    let phi2 = random_potential(&scenario, seed.wrapping_add(0x5151))?.phi;
    Ok(Prepared { scenario, evaluator, rule, phi, phi2, seed })
}

impl Prepared {
    fn bridge(&self) -> Result<PotentialPath, HarnessError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0xb41d_6e00);
        let psi = random_real_field(&self.scenario.grid, &mut rng)?;
        Ok(admissible_bridge(&self.scenario, &self.phi, &self.phi2, &psi, &self.rule)?)
    }

    /// Linear-versus-bridge residual of the path functional.
    pub fn path_residual(&self) -> Result<(f64, f64, f64), HarnessError> {
        let lin = PotentialPath::Linear { from: self.phi.clone(), to: self.phi2.clone() };
        let a = self.evaluator.mabuchi_path(&lin, &self.rule)?;
        let b = self.evaluator.mabuchi_path(&self.bridge()?, &self.rule)?;
        Ok((a, b, relative_residual(a.into(), b.into())))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckRow {
    pub suite: String,
    pub tag: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub lhs: [f64; 2],
    pub rhs: [f64; 2],
}

impl CheckRow {
    fn from_residual(suite: &str, r: &Residual, tol: f64) -> Self {
        CheckRow {
            suite: suite.into(),
            tag: r.tag.clone(),
            residual: r.residual,
            tolerance: tol,
            passed: r.residual <= tol,
            lhs: r.lhs,
            rhs: r.rhs,
        }
    }

    fn value(suite: &str, tag: &str, value: f64, tol: f64) -> Self {
        CheckRow {
            suite: suite.into(),
            tag: tag.into(),
            residual: value,
            tolerance: tol,
            passed: value <= tol,
            lhs: [value, 0.0],
            rhs: [0.0, 0.0],
        }
    }
}

fn constant_by_name<'a>(k: &'a mut exact::AyConstants, name: &str) -> Option<&'a mut Rational> {
    Some(match name {
        "a1_1" => &mut k.a1_1,
        "a1_2" => &mut k.a1_2,
        "a2_1" => &mut k.a2_1,
        "a2_2" => &mut k.a2_2,
        "b1_1" => &mut k.b1_1,
        "b1_2" => &mut k.b1_2,
        "b2_1" => &mut k.b2_1,
        "b2_2" => &mut k.b2_2,
        "c1" => &mut k.c1,
        "c2" => &mut k.c2,
        "d1" => &mut k.d1,
        "d2" => &mut k.d2,
        "e1" => &mut k.e1,
        "e2" => &mut k.e2,
        "f1" => &mut k.f1,
        "f2" => &mut k.f2,
        _ => return None,
    })
}

/// Exact constants and exact identity checks for every n in `n_min..=n_max`.
pub fn run_coeffs(n_min: usize, n_max: usize, corrupt: Option<&str>) -> Result<JobOutcome, HarnessError> {
    if n_min < 3 || n_max > 12 || n_min > n_max {
        return Err(HarnessError::Config(format!("coefficient range {n_min}..={n_max} must lie in 3..=12")));
    }
    if let Some(name) = corrupt {
        if !exact::AY_UNKNOWNS.contains(&name) {
            return Err(HarnessError::Config(format!("unknown constant `{name}`")));
        }
    }
    let mut all_passed = true;
    let mut per_n = BTreeMap::new();
    for n in n_min..=n_max {
        let mut failures: Vec<String> = Vec::new();
        let weights = exact::mabuchi_weights(n)?;
        let mut wmap = serde_json::Map::new();
        for (k, w) in weights.iter().enumerate() {
            wmap.insert(format!("a{}", k + 1), json!(w.to_string()));
        }
        if exact::weights_from_cancellation(n, -1)? != weights {
            failures.push("weights_from_cancellation".into());
        }
        let mut consts = exact::ay_constants(n)?;
        if let Some(name) = corrupt {
            if let Some(c) = constant_by_name(&mut consts, name) {
                *c += Rational::from_integer(1.into());
            }
        }
        let sys = exact::ay_system(n)?;
        for (label, r) in sys.labels.iter().zip(sys.residuals(&consts.to_vec())) {
            if r != Rational::from_integer(0.into()) {
                failures.push(label.clone());
            }
        }
        let mut recursion = serde_json::Map::new();
        if n >= 4 {
            for i in 2..n {
                let a = exact::recursion_expand(n, i)?;
                if a != exact::closed_form(n, i)? {
                    failures.push(format!("recursion_vs_closed_form_i{i}"));
                }
                recursion.insert(format!("c{i}"), serde_json::to_value(&a).unwrap_or(Value::Null));
            }
        }
        let c2 = exact::c2_solution(n)?;
        if n >= 4 && !exact::closed_form(n, n - 1)?.substitute_c2(&c2).is_zero() {
            failures.push("terminal_condition".into());
        }
        let ident = exact::scalar_identity_suite(n)?;
        if !ident.passed() {
            failures.push("scalar_identities".into());
        }
        all_passed &= failures.is_empty();
        per_n.insert(
            n.to_string(),
            json!({
                "weights": wmap,
                "ay_constants": consts,
                "c2_solution": c2,
                "recursion": recursion,
                "scalar_identities": ident,
                "failures": failures,
            }),
        );
    }
    Ok(JobOutcome {
        passed: all_passed,
        report: json!({ "job": "coeffs", "passed": all_passed, "n_min": n_min, "n_max": n_max, "results": per_n }),
    })
}

/// Functional values, intermediate functionals and optional form dumps for the configured scenario.
pub fn run_eval(cfg: &JobConfig) -> Result<JobOutcome, HarnessError> {
    let res = cfg.resolutions()?;
    let p = prepare(cfg, &res, cfg.quadrature_order()?)?;
    let ev = &p.evaluator;
    let report = ev.evaluate(&p.phi, &p.rule)?;
    let path_value = match cfg.path.kind {
        PathKind::Linear => report.l_path,
        PathKind::Bridge => {
            let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0xb41d_6e00);
            let psi = random_real_field(&p.scenario.grid, &mut rng)?;
            let zero = ScalarField::zero(&p.scenario.grid);
            let bridge = admissible_bridge(&p.scenario, &zero, &p.phi, &psi, &p.rule)?;
            ev.mabuchi_path(&bridge, &p.rule)?
        }
    };
    let intermediates = if ev.n >= 3 { serde_json::to_value(ev.intermediates(&p.phi, &p.rule)?).ok() } else { None };
    let mut doc = json!({
        "job": "eval",
        "n": ev.n,
        "resolutions": res,
        "quadrature_order": p.rule.order,
        "path_kind": cfg.path.kind,
        "path_value": path_value,
        "functionals": report,
        "intermediates": intermediates,
    });
    if cfg.output.dump_forms {
        doc["forms"] = json!({
            "omega": p.scenario.omega.debug_dump(1e-14),
            "d_omega": ev.d_omega.debug_dump(1e-14),
            "omega_phi": crate::scenarios::omega_phi(&p.scenario.omega, &p.phi)?.debug_dump(1e-14),
        });
    }
    Ok(JobOutcome { passed: true, report: doc })
}

fn timed<T>(f: impl FnOnce() -> Result<T, HarnessError>) -> Result<(T, u128), HarnessError> {
    let t = Instant::now();
    let v = f()?;
    Ok((v, t.elapsed().as_millis()))
}

/// Runs every residual suite on the configured scenario.
pub fn run_verify(cfg: &JobConfig, i_know: bool) -> Result<JobOutcome, HarnessError> {
    let tol = Tolerances::resolve(&cfg.tolerances, i_know)?;
    let res = cfg.resolutions()?;
    let p = prepare(cfg, &res, cfg.quadrature_order()?)?;
    let ev = &p.evaluator;
    let n = ev.n;
    let mut rows: Vec<CheckRow> = Vec::new();
    let mut timings = serde_json::Map::new();

    let ((), ms) = timed(|| {
        let (_, _, r) = p.path_residual()?;
        rows.push(CheckRow::value("path_independence", "linear_vs_bridge", r, tol.path));
        Ok(())
    })?;
    timings.insert("path_independence".into(), json!(ms));

    let ((), ms) = timed(|| {
        let rep = ev.evaluate(&p.phi, &p.rule)?;
        for r in &rep.residuals {
            let t = if r.tag == "mabuchi_explicit_vs_path" { tol.explicit } else { tol.dual };
            rows.push(CheckRow::from_residual("closed_forms", r, t));
        }
        Ok(())
    })?;
    timings.insert("closed_forms".into(), json!(ms));

    let ((), ms) = timed(|| {
        let inq = ev.inequality_report(&p.phi)?;
        let scale = 1.0 + inq.i.abs() + inq.j.abs();
        let names = [
            "i_j_upper_margin",
            "j_i_lower_margin",
            "j_over_i_chain_margin",
            "i_over_j_chain_margin",
            "difference_over_j_chain_margin",
            "j_over_difference_chain_margin",
        ];
        for (name, m) in names.iter().zip(inq.margins) {
            rows.push(CheckRow::value("inequalities", name, (-m / scale).max(0.0), tol.margin));
        }
        rows.push(CheckRow::value("inequalities", "i_nonnegative", (-inq.i / scale).max(0.0), tol.margin));
        rows.push(CheckRow::value("inequalities", "j_nonnegative", (-inq.j / scale).max(0.0), tol.margin));
        Ok(())
    })?;
    timings.insert("inequalities".into(), json!(ms));

    let ((), ms) = timed(|| {
        let p3 = random_potential(&p.scenario, p.seed.wrapping_add(0xc0c0))?.phi;
        let c = ev.cocycle_check(&p.phi, &p.phi2, &p3, &p.rule)?;
        rows.push(CheckRow::value("cocycle", "antisymmetry", c.antisymmetry, tol.cocycle));
        rows.push(CheckRow::value("cocycle", "three_cycle", c.three_cycle, tol.cocycle));
        let s = ev.shift_laws(&p.phi, &p.phi2, 0.37, &p.rule)?;
        rows.push(CheckRow::from_residual("shift_laws", &s.self_shift, tol.shift));
        rows.push(CheckRow::from_residual("shift_laws", &s.endpoint_shift, tol.shift));
        Ok(())
    })?;
    timings.insert("cocycle_and_shift".into(), json!(ms));

    let ((), ms) = timed(|| {
        let metric = cfg.metric.as_ref().expect("checked in prepare");
        let closed = match metric.kind {
            MetricKind::NonkaehlerPerturbed => kaehler_perturbed_metric(&p.scenario.grid, metric.epsilon, metric.seed)?,
            _ => p.scenario.clone(),
        };
        let kev = Evaluator::new(&closed)?;
        let phi = random_potential(&closed, p.seed)?.phi;
        let s = kev.sums(&phi)?;
        let (ep, eq) = s.extra_magnitudes();
        let scale = 1.0 + s.k.iter().map(|z| z.norm()).sum::<f64>();
        rows.push(CheckRow::value("kaehler_reduction", "holomorphic_extra_terms", ep / scale, tol.kaehler));
        rows.push(CheckRow::value("kaehler_reduction", "antiholomorphic_extra_terms", eq / scale, tol.kaehler));
        let (l, i, j) = kev.kaehler_formulas(&phi, &p.rule)?;
        let corrected = kev.evaluate(&phi, &p.rule)?;
        rows.push(CheckRow::from_residual("kaehler_reduction", &Residual::real("mabuchi", corrected.l_explicit, l), tol.kaehler));
        rows.push(CheckRow::from_residual("kaehler_reduction", &Residual::real("i_functional", corrected.i_direct, i), tol.kaehler));
        rows.push(CheckRow::from_residual("kaehler_reduction", &Residual::real("j_functional", corrected.j_direct, j), tol.kaehler));
        let defect = kev.err_term(&phi)?.abs() / kev.volume();
        rows.push(CheckRow::value("kaehler_reduction", "volume_defect", defect, tol.kaehler));
        Ok(())
    })?;
    timings.insert("kaehler_reduction".into(), json!(ms));

    if n >= 3 {
        let ((), ms) = timed(|| {
            for r in ev.identity_suite_s3(&p.phi, &p.rule)? {
                rows.push(CheckRow::from_residual("intermediate_identities", &r, tol.assembly));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0x0dd5_eed5);
            let u = random_real_field(&p.scenario.grid, &mut rng)?;
            let v = random_real_field(&p.scenario.grid, &mut rng)?;
            let rep = ev.proof_identity_suite(&p.phi, &u, &v)?;
            for r in &rep.residuals {
                rows.push(CheckRow::from_residual("cancellation_identities", r, tol.proof));
            }
            rows.push(CheckRow::value("cancellation_identities", "total_cancellation", rep.master_residual, tol.proof));
            Ok(())
        })?;
        timings.insert("identity_suites".into(), json!(ms));
    }

    let passed = rows.iter().all(|r| r.passed);
    Ok(JobOutcome {
        passed,
        report: json!({
            "job": "verify",
            "passed": passed,
            "n": n,
            "resolutions": res,
            "quadrature_order": p.rule.order,
            "tolerances": tol,
            "checks": rows,
            "wall_ms": timings,
        }),
    })
}

/// One line of the sweep CSV.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub res: usize,
    pub quad: usize,
    pub seed: u64,
    pub residual_path: f64,
    pub residual_i: f64,
    pub residual_j: f64,
    pub wall_ms: u128,
}

pub const SWEEP_HEADER: &str = "n,res,quad,seed,residual_path,residual_I,residual_J,wall_ms";

impl SweepRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{:e},{:e},{:e},{}",
            self.n, self.res, self.quad, self.seed, self.residual_path, self.residual_i, self.residual_j, self.wall_ms
        )
    }
}

/// Evaluates every (resolution, order, seed) tuple; rows come back in tuple order.
pub fn run_sweep(cfg: &JobConfig) -> Result<Vec<SweepRow>, HarnessError> {
    let n = cfg.n()?;
    let metric = cfg.metric.clone().ok_or_else(|| HarnessError::Config("missing table `metric`".into()))?;
    let res_list = if cfg.sweep.resolutions.is_empty() { vec![cfg.resolutions()?.into_iter().max().unwrap_or(1)] } else { cfg.sweep.resolutions.clone() };
    let orders = if cfg.sweep.orders.is_empty() { vec![cfg.quadrature_order()?] } else { cfg.sweep.orders.clone() };
    let seeds = if cfg.sweep.seeds.is_empty() { vec![metric.seed] } else { cfg.sweep.seeds.clone() };
    let mut tuples = Vec::new();
    for &m in &res_list {
        let res = crate::scenarios::resolutions(n, m, &default_active_axes(n));
        cfg.alias_check(&res)?;
        for &q in &orders {
            if q == 0 {
                return Err(HarnessError::Config("quadrature order must be at least 1".into()));
            }
            for &s in &seeds {
                tuples.push((m, res.clone(), q, s));
            }
        }
    }
    tuples
        .par_iter()
        .map(|(m, res, q, s)| {
            let t = Instant::now();
            let mut c = cfg.clone();
            c.override_seed(*s);
            let p = prepare(&c, res, *q)?;
            let (_, _, rp) = p.path_residual()?;
            let sums = p.evaluator.sums(&p.phi)?;
            let ri = relative_residual(sums.i_direct(n)?.into(), sums.i_gradient(n)?.into());
            let rj = relative_residual(sums.j_direct(n)?.into(), sums.j_gradient(n)?.into());
            Ok(SweepRow {
                n,
                res: *m,
                quad: *q,
                seed: *s,
                residual_path: rp,
                residual_i: ri,
                residual_j: rj,
                wall_ms: t.elapsed().as_millis(),
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

/// Exact weights as rational strings, keyed `a1`, `a2`, …
pub fn weight_strings(n: usize) -> Result<BTreeMap<String, String>, HarnessError> {
    Ok(exact::mabuchi_weights(n)?
        .iter()
        .enumerate()
        .map(|(k, w)| (format!("a{}", k + 1), w.to_string()))
        .collect())
}

/// Rational string of one Aubin-Yau constant, for quick inspection.
pub fn constant_string(n: usize, name: &str) -> Result<String, HarnessError> {
    let mut k = exact::ay_constants(n)?;
    let c = constant_by_name(&mut k, name).ok_or_else(|| HarnessError::Config(format!("unknown constant `{name}`")))?;
    Ok(rational_string(c))
}

//! Mabuchi and Aubin-Yau energies of a Hermitian metric, their intermediate pieces,
//! and the identity and inequality suites that tie them together.
//!
//! Every integral is normalised by the volume V = ∫ωⁿ unless stated otherwise.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::exact::{self, binomial, to_f64, ExactError};
use crate::scenarios::{i_ddbar, MetricScenario, PotentialPath, QuadratureRule, ScenarioError};
use crate::spectral::{Form, ScalarField, SpectralError, C64};

/// Imaginary parts of real-valued functionals must stay below this, relative to 1 + |value|.
pub const IMAG_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error("{what} has imaginary part {imag:e} (real part {real:e})")]
    Imaginary { what: String, real: f64, imag: f64 },
    #[error("{what} needs n >= {min}, got {n}")]
    DimensionTooSmall { what: &'static str, n: usize, min: usize },
}

fn realify(what: &str, z: C64) -> Result<f64, EnergyError> {
    if z.im.abs() > IMAG_TOL * (1.0 + z.re.abs()) {
        return Err(EnergyError::Imaginary { what: what.to_string(), real: z.re, imag: z.im });
    }
    Ok(z.re)
}

fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// |lhs − rhs| / (1 + |lhs| + |rhs|).
pub fn relative_residual(lhs: C64, rhs: C64) -> f64 {
    (lhs - rhs).norm() / (1.0 + lhs.norm() + rhs.norm())
}

/// Wedges a chain left to right.
fn chain(forms: &[&Form]) -> Result<Form, SpectralError> {
    let mut acc = forms[0].clone();
    for f in &forms[1..] {
        acc = acc.wedge(f)?;
    }
    Ok(acc)
}

/// Precomputed metric data shared by every evaluation on one scenario.
#[derive(Clone, Debug)]
pub struct Evaluator {
    pub n: usize,
    pub omega: Form,
    pub d_omega: Form,
    pub db_omega: Form,
    omega_pows: Vec<Form>,
    pub volume: f64,
    weights: Vec<C64>,
}

/// Potential-dependent forms: φ, ∂φ, ∂̄φ, Θ = i∂∂̄φ, ω_φ and its powers.
#[derive(Clone, Debug)]
struct PotentialData {
    phi: ScalarField,
    d_phi: Form,
    db_phi: Form,
    theta: Form,
    pows: Vec<Form>,
}

impl Evaluator {
    pub fn new(scenario: &MetricScenario) -> Result<Self, EnergyError> {
        Self::from_omega(&scenario.omega)
    }

    pub fn from_omega(omega: &Form) -> Result<Self, EnergyError> {
        let n = omega.grid().n();
        let mut omega_pows = vec![Form::one(omega.grid())];
        for k in 1..=n {
            omega_pows.push(omega_pows[k - 1].wedge(omega)?);
        }
        let v = omega_pows[n].integrate_top()?;
        if v.im.abs() > 1e-12 * v.re.abs() {
            return Err(EnergyError::Imaginary { what: "volume".into(), real: v.re, imag: v.im });
        }
        let weights = exact::weights_unchecked(n).iter().map(|w| w.to_c64()).collect();
        Ok(Self {
            n,
            omega: omega.clone(),
            d_omega: omega.del(),
            db_omega: omega.delbar(),
            omega_pows,
            volume: v.re,
            weights,
        })
    }

    /// Replaces the correction weights, e.g. to run a negative control.
    pub fn with_weights(mut self, weights: Vec<C64>) -> Self {
        self.weights = weights;
        self
    }

    pub fn weights(&self) -> &[C64] {
        &self.weights
    }

    /// ∫ωⁿ.
    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// ωᵏ.
    pub fn omega_pow(&self, k: usize) -> &Form {
        &self.omega_pows[k]
    }

    /// (1/V)∫ of a top form.
    fn int(&self, f: &Form) -> Result<C64, EnergyError> {
        Ok(f.integrate_top()? / self.volume)
    }

    fn int_chain(&self, forms: &[&Form]) -> Result<C64, EnergyError> {
        self.int(&chain(forms)?)
    }

    fn potential(&self, phi: &ScalarField) -> Result<PotentialData, EnergyError> {
        let f = Form::scalar(phi.clone());
        let d_phi = f.del();
        let db_phi = f.delbar();
        let theta = i_ddbar(phi);
        let omega_phi = self.omega.add(&theta)?;
        let mut pows = vec![Form::one(self.omega.grid())];
        for k in 1..=self.n {
            pows.push(pows[k - 1].wedge(&omega_phi)?);
        }
        Ok(PotentialData { phi: phi.clone(), d_phi, db_phi, theta, pows })
    }

    /// ω_φ^a ∧ Θ^b.
    fn mixed_theta(&self, pd: &PotentialData, a: usize, b: usize) -> Result<Form, EnergyError> {
        let mut acc = pd.pows[a].clone();
        for _ in 0..b {
            acc = acc.wedge(&pd.theta)?;
        }
        Ok(acc)
    }

    /// The normalised integrals K_i, P_i, Q_i, G_i from which every closed form is assembled.
    pub fn sums(&self, phi: &ScalarField) -> Result<PotentialSums, EnergyError> {
        let pd = self.potential(phi)?;
        self.sums_from(&pd)
    }

    fn sums_from(&self, pd: &PotentialData) -> Result<PotentialSums, EnergyError> {
        let n = self.n;
        let phi_f = Form::scalar(pd.phi.clone());
        let x_p = self.d_omega.scale(I).wedge(&pd.db_phi.mul_field(&pd.phi)?)?;
        let x_q = self.db_omega.scale(I).wedge(&pd.d_phi.mul_field(&pd.phi)?)?;
        let grad = pd.d_phi.scale(I).wedge(&pd.db_phi)?;
        let mut s = PotentialSums::default();
        for i in 0..=n {
            s.k.push(self.int_chain(&[&phi_f, &pd.pows[i], &self.omega_pows[n - i]])?);
        }
        for i in 0..n {
            s.g.push(self.int_chain(&[&grad, &pd.pows[i], &self.omega_pows[n - 1 - i]])?);
        }
        for i in 0..=n - 2 {
            let m = pd.pows[i].wedge(&self.omega_pows[n - 2 - i])?;
            s.p.push(self.int(&m.wedge(&x_p)?)?);
            s.q.push(self.int(&m.wedge(&x_q)?)?);
        }
        Ok(s)
    }

    /// Integrand of the path functional at one time, already divided by V.
    pub fn mabuchi_integrand(&self, phi: &ScalarField, phidot: &ScalarField) -> Result<C64, EnergyError> {
        Ok(self.mabuchi_integrand_terms(phi, phidot)?.iter().sum())
    }

    /// The separate terms: velocity term, two first-order corrections, then the paired higher corrections.
    pub fn mabuchi_integrand_terms(&self, phi: &ScalarField, phidot: &ScalarField) -> Result<Vec<C64>, EnergyError> {
        let n = self.n;
        let pd = self.potential(phi)?;
        let dot = Form::scalar(phidot.clone());
        let d_dot = dot.del();
        let db_dot = dot.delbar();
        let w = &self.weights;
        let mut terms = vec![self.int_chain(&[&dot, &pd.pows[n]])?];
        terms.push(w[0] * self.int_chain(&[&self.d_omega, &pd.pows[n - 2], &db_dot.mul_field(phi)?])?);
        terms.push(w[1] * self.int_chain(&[&self.db_omega, &pd.pows[n - 2], &d_dot.mul_field(phi)?])?);
        if n >= 3 {
            let r1 = chain(&[&pd.d_phi, &self.d_omega, &db_dot, &pd.db_phi])?;
            let r2 = chain(&[&pd.db_phi, &self.db_omega, &d_dot, &pd.d_phi])?;
            for i in 1..=n - 2 {
                let tail = self.mixed_theta(&pd, n - i - 2, i - 1)?;
                terms.push(w[2 * i] * self.int(&r1.wedge(&tail)?)?);
                terms.push(w[2 * i + 1] * self.int(&r2.wedge(&tail)?)?);
            }
        }
        Ok(terms)
    }

    /// Path integral of the corrected Mabuchi one-form along `path`.
    pub fn mabuchi_path(&self, path: &PotentialPath, rule: &QuadratureRule) -> Result<f64, EnergyError> {
        let vals: Vec<Result<C64, EnergyError>> = rule
            .nodes
            .par_iter()
            .map(|&t| {
                let (phi, dot) = path.sample(t)?;
                self.mabuchi_integrand(&phi, &dot)
            })
            .collect();
        let mut acc = C64::new(0.0, 0.0);
        for (v, w) in vals.into_iter().zip(&rule.weights) {
            acc += v? * w;
        }
        realify("path Mabuchi functional", acc)
    }

    /// Two-point functional along the linear path φ′ → φ″.
    pub fn mabuchi_two_point(&self, from: &ScalarField, to: &ScalarField, rule: &QuadratureRule) -> Result<f64, EnergyError> {
        self.mabuchi_path(&PotentialPath::Linear { from: from.clone(), to: to.clone() }, rule)
    }

    /// Uncorrected path integral (1/V)∫∫φ̇ω_φⁿ, the classical formula for closed ω.
    pub fn kaehler_mabuchi_path(&self, path: &PotentialPath, rule: &QuadratureRule) -> Result<f64, EnergyError> {
        let mut acc = C64::new(0.0, 0.0);
        for (&t, &w) in rule.nodes.iter().zip(&rule.weights) {
            let (phi, dot) = path.sample(t)?;
            let pd = self.potential(&phi)?;
            acc += w * self.int_chain(&[&Form::scalar(dot), &pd.pows[self.n]])?;
        }
        realify("classical path functional", acc)
    }

    pub fn mabuchi_explicit(&self, phi: &ScalarField) -> Result<f64, EnergyError> {
        self.sums(phi)?.mabuchi_explicit(self.n)
    }

    pub fn i_ay(&self, phi: &ScalarField, mode: Mode) -> Result<f64, EnergyError> {
        let s = self.sums(phi)?;
        match mode {
            Mode::Direct => s.i_direct(self.n),
            Mode::Gradient => s.i_gradient(self.n),
        }
    }

    pub fn j_ay(&self, phi: &ScalarField, mode: Mode) -> Result<f64, EnergyError> {
        let s = self.sums(phi)?;
        match mode {
            Mode::Direct => s.j_direct(self.n),
            Mode::Gradient => s.j_gradient(self.n),
        }
    }

    /// ∫ωⁿ − ∫ω_φⁿ (unnormalised).
    pub fn err_term(&self, phi: &ScalarField) -> Result<f64, EnergyError> {
        let pd = self.potential(phi)?;
        let z = self.omega_pows[self.n].integrate_top()? - pd.pows[self.n].integrate_top()?;
        realify("volume defect", z)
    }

    /// Binomial expansion −Σ_k C(n,k)∫ω^{n−k}∧Θᵏ of the volume defect.
    pub fn err_expansion(&self, phi: &ScalarField) -> Result<f64, EnergyError> {
        let n = self.n;
        let theta = i_ddbar(phi);
        let mut tp = Form::one(self.omega.grid());
        let mut acc = C64::new(0.0, 0.0);
        for k in 1..=n {
            tp = tp.wedge(&theta)?;
            let c = to_f64(&exact::Rational::from_integer(binomial(n, k as i64)));
            acc -= c * self.omega_pows[n - k].wedge(&tp)?.integrate_top()?;
        }
        realify("volume defect expansion", acc)
    }

    /// (1/V)∫₀¹∫φ(ωⁿ − ω_{sφ}ⁿ) ds by the given rule in s.
    pub fn j_bullet(&self, phi: &ScalarField, rule: &QuadratureRule) -> Result<f64, EnergyError> {
        let n = self.n;
        let phi_f = Form::scalar(phi.clone());
        let base = self.int_chain(&[&phi_f, &self.omega_pows[n]])?;
        let mut acc = C64::new(0.0, 0.0);
        for (&s, &w) in rule.nodes.iter().zip(&rule.weights) {
            let pd = self.potential(&phi.scale_real(s))?;
            acc += w * (base - self.int_chain(&[&phi_f, &pd.pows[n]])?);
        }
        realify("J bullet", acc)
    }

    /// All functional values and the dual-form residuals for one potential.
    pub fn evaluate(&self, phi: &ScalarField, rule: &QuadratureRule) -> Result<FunctionalReport, EnergyError> {
        let n = self.n;
        let s = self.sums(phi)?;
        let path = PotentialPath::Linear { from: ScalarField::zero(phi.grid()), to: phi.clone() };
        let l_path = self.mabuchi_path(&path, rule)?;
        let l_explicit = s.mabuchi_explicit(n)?;
        let (i_d, i_g) = (s.i_direct(n)?, s.i_gradient(n)?);
        let (j_d, j_g) = (s.j_direct(n)?, s.j_gradient(n)?);
        let err = self.err_term(phi)?;
        let margins = inequality_margins(n, i_d, j_d);
        let residuals = vec![
            Residual::real("mabuchi_explicit_vs_path", l_explicit, l_path),
            Residual::real("i_direct_vs_gradient", i_d, i_g),
            Residual::real("j_direct_vs_gradient", j_d, j_g),
            Residual::real("volume_defect_expansion", err, self.err_expansion(phi)?),
        ];
        Ok(FunctionalReport {
            n,
            volume: self.volume,
            l_path,
            l_explicit,
            i_direct: i_d,
            i_gradient: i_g,
            j_direct: j_d,
            j_gradient: j_g,
            err,
            margins,
            residuals,
        })
    }

    /// The twelve intermediate functionals.
    pub fn intermediates(&self, phi: &ScalarField, rule: &QuadratureRule) -> Result<IntermediateReport, EnergyError> {
        let n = self.n;
        if n < 3 {
            return Err(EnergyError::DimensionTooSmall { what: "intermediate functionals", n, min: 3 });
        }
        let s = self.sums(phi)?;
        intermediates_from(n, &s, self.j_bullet(phi, rule)?)
    }

    /// (1/V)∫φ(−Θ)∧Σ_j c_j ω^{n−1−j}∧ω_φʲ for the given weights.
    fn ddbar_weighted(&self, phi: &ScalarField, weights: &[f64]) -> Result<f64, EnergyError> {
        let n = self.n;
        let pd = self.potential(phi)?;
        let lead = Form::scalar(phi.clone()).wedge(&pd.theta.scale_real(-1.0))?;
        let mut acc = C64::new(0.0, 0.0);
        for (j, &c) in weights.iter().enumerate() {
            if c != 0.0 {
                acc += c * self.int_chain(&[&lead, &self.omega_pows[n - 1 - j], &pd.pows[j]])?;
            }
        }
        realify("weighted ddbar integral", acc)
    }

    /// Residual table for the intermediate-functional identities and the assembly of the closed forms.
    pub fn identity_suite_s3(&self, phi: &ScalarField, rule: &QuadratureRule) -> Result<Vec<Residual>, EnergyError> {
        let n = self.n;
        if n < 3 {
            return Err(EnergyError::DimensionTooSmall { what: "intermediate identity suite", n, min: 3 });
        }
        let nf = n as f64;
        let s = self.sums(phi)?;
        let m = intermediates_from(n, &s, self.j_bullet(phi, rule)?)?;
        let l = s.mabuchi_explicit(n)?;
        let k0 = realify("K_0", s.k[0])?;
        let g: Vec<f64> = s.g.iter().map(|z| z.re).collect();
        let g_up: f64 = (1..n).map(|i| i as f64 / (nf + 1.0) * g[i]).sum();
        let g_down: f64 = (0..n).map(|i| (nf - 1.0 - i as f64) * g[i]).sum();
        let lhs_a = nf / (nf + 1.0) * m.i_bullet - m.j_bullet;
        let lhs_b = (nf + 1.0) * m.j_bullet - m.i_bullet;

        let w_up: Vec<f64> = (0..n).map(|j| j as f64 / (nf + 1.0)).collect();
        let w_down: Vec<f64> = (0..n).map(|j| nf - 1.0 - j as f64).collect();

        let k = exact::ay_constants(n)?;
        let f = |r: &exact::Rational| to_f64(r);
        let i_asm = m.i_bullet
            + f(&k.a1_1) * m.a1
            + f(&k.a2_1) * m.a2
            + f(&k.b1_1) * m.b1
            + f(&k.b2_1) * m.b2
            + f(&k.c1) * m.c
            + f(&k.d1) * m.d
            + f(&k.e1) * m.e
            + f(&k.f1) * m.f;
        let tail2 = f(&k.c2) * m.c + f(&k.d2) * m.d + f(&k.e2) * m.e + f(&k.f2) * m.f;
        let j_asm = -l
            + k0
            + f(&k.a1_2) * m.a1
            + f(&k.a2_2) * m.a2
            + f(&k.b1_2) * m.b1
            + f(&k.b2_2) * m.b2
            + tail2;
        let j_asm_bullet = m.j_bullet
            + (f(&k.a1_2) - 1.0) * m.a1
            + (f(&k.a2_2) - 1.0) * m.a2
            + (f(&k.b1_2) - 1.0) * m.b1
            + (f(&k.b2_2) - 1.0) * m.b2
            + tail2;

        Ok(vec![
            Residual::real("i_j_margin_as_ddbar_integral", lhs_a, self.ddbar_weighted(phi, &w_up)?),
            Residual::real("j_i_margin_as_ddbar_integral", lhs_b, self.ddbar_weighted(phi, &w_down)?),
            Residual::real("j_bullet_via_mabuchi", m.j_bullet, k0 - l + m.a + m.b),
            Residual::real("a_split", m.a1 + m.a2, m.a),
            Residual::real("b_split", m.b1 + m.b2, m.b),
            Residual::real("i_j_margin_holomorphic_side", lhs_a, g_up - 2.0 * m.a / (nf + 1.0) + m.c),
            Residual::real("i_j_margin_antiholomorphic_side", lhs_a, g_up - 2.0 * m.b / (nf + 1.0) + m.d),
            Residual::real(
                "i_j_margin_symmetrised",
                lhs_a,
                g_up - (m.a + m.b) / (nf + 1.0) + (m.c + m.d) / 2.0,
            ),
            Residual::real(
                "j_i_margin_holomorphic_side",
                lhs_b,
                g_down + m.e + 2.0 * (nf + 1.0) * m.a1 - 2.0 * m.a2 / (nf - 1.0),
            ),
            Residual::real(
                "j_i_margin_antiholomorphic_side",
                lhs_b,
                g_down + m.f + 2.0 * (nf + 1.0) * m.b1 - 2.0 * m.b2 / (nf - 1.0),
            ),
            Residual::real(
                "j_i_margin_symmetrised",
                lhs_b,
                g_down + (m.e + m.f) / 2.0 + (nf + 1.0) * (m.a1 + m.b1) - (m.a2 + m.b2) / (nf - 1.0),
            ),
            Residual::real("i_assembly_vs_direct", i_asm, s.i_direct(n)?),
            Residual::real("j_assembly_vs_direct", j_asm, s.j_direct(n)?),
            Residual::real("j_assembly_from_bullet_vs_direct", j_asm_bullet, s.j_direct(n)?),
            Residual::real("i_assembly_vs_gradient", i_asm, s.i_gradient(n)?),
            Residual::real("j_assembly_vs_gradient", j_asm, s.j_gradient(n)?),
            Residual::real("assembled_i_j_margin", nf / (nf + 1.0) * i_asm - j_asm, g_up),
            Residual::real("assembled_j_i_margin", (nf + 1.0) * j_asm - i_asm, g_down),
        ])
    }

    /// Cancellation identities behind path independence, for independent real fields
    /// ψ, u, v standing in for a two-parameter family and its two velocities.
    pub fn proof_identity_suite(
        &self,
        psi: &ScalarField,
        u: &ScalarField,
        v: &ScalarField,
    ) -> Result<ProofIdentityReport, EnergyError> {
        let w = self.weights.clone();
        self.proof_identity_suite_with(psi, u, v, &w)
    }

    /// As [`Self::proof_identity_suite`] but weighting the obstruction terms by `weights`.
    pub fn proof_identity_suite_with(
        &self,
        psi: &ScalarField,
        u: &ScalarField,
        v: &ScalarField,
        weights: &[C64],
    ) -> Result<ProofIdentityReport, EnergyError> {
        let n = self.n;
        if n < 3 {
            return Err(EnergyError::DimensionTooSmall { what: "cancellation identity suite", n, min: 3 });
        }
        let nf = n as f64;
        let pd = self.potential(psi)?;
        let (uf, vf) = (Form::scalar(u.clone()), Form::scalar(v.clone()));
        let (du, dbu, dv, dbv) = (uf.del(), uf.delbar(), vf.del(), vf.delbar());
        let (ddu, ddv) = (i_ddbar(u), i_ddbar(v));
        let psi_f = Form::scalar(psi.clone());
        let dw = &self.d_omega;
        let dbw = &self.db_omega;
        let w = &pd.pows;
        let mut residuals = Vec::new();

        // First-order pair.
        let a1 = (nf - 2.0) * self.int_chain(&[&psi_f, &dbu, &w[n - 3], dw, &ddv.scale_real(-1.0)])?;
        let b1 = (nf - 2.0) * self.int_chain(&[&psi_f, &dbv, &w[n - 3], dw, &ddu])?;
        let ab1_closed = -(nf - 2.0) * I * self.int_chain(&[&pd.d_phi, dw, &dbu, &dbv, &w[n - 3]])?;
        residuals.push(Residual::complex("ab1_pair_sum", a1 + b1, ab1_closed));
        let h1 = -self.int_chain(&[&dv, &dbu, dw, &pd.db_phi, &w[n - 3]])?
            + self.int_chain(&[&du, &dbv, dw, &pd.db_phi, &w[n - 3]])?;
        let s1 = a1 + b1;
        let k1 = -(nf - 2.0) * I;
        residuals.push(Residual::complex("h1_real_part", h1 + h1.conj(), s1 / k1 + s1.conj() / (-k1)));

        // Generic pairs, index 2 ≤ i ≤ n−2; entries for i = n−1 vanish by their leading factor.
        let mut a = vec![C64::new(0.0, 0.0); n];
        let mut b = vec![C64::new(0.0, 0.0); n];
        let mut h = vec![C64::new(0.0, 0.0); n];
        let grad = pd.d_phi.wedge(&pd.db_phi)?;
        for i in 2..=n.saturating_sub(2) {
            let c = nf - i as f64 - 1.0;
            let tail = self.mixed_theta(&pd, n - i - 2, i - 2)?;
            a[i] = c * self.int_chain(&[&grad, dw, &dbu, &tail, &ddv])?;
            b[i] = c * self.int_chain(&[&grad, dw, &dbv, &tail, &ddu.scale_real(-1.0)])?;
            let tail1 = self.mixed_theta(&pd, n - i - 2, i - 1)?;
            let closed = c * self.int_chain(&[&pd.d_phi, dw, &dbu, &dbv, &tail1])?;
            residuals.push(Residual::complex(&format!("ab_pair_sum_i{i}"), a[i] + b[i], closed));
            h[i] = -self.int_chain(&[&dv, &dbu, dw, &pd.db_phi, &tail1])?
                + self.int_chain(&[&du, &dbv, dw, &pd.db_phi, &tail1])?;
            let si = a[i] + b[i];
            residuals.push(Residual::complex(
                &format!("h_real_part_i{i}"),
                h[i] + h[i].conj(),
                (si + si.conj()) / c,
            ));
        }
        residuals.push(Residual::complex("ab_boundary_vanishes", a[n - 1] + b[n - 1], C64::new(0.0, 0.0)));

        // Reduced expressions of the obstruction integrands, weighted.
        let i0 = -nf * (nf - 1.0) * I
            * (self.int_chain(&[&uf, &w[n - 2], dw, &dbv])? + self.int_chain(&[&vf, &w[n - 2], dbw, &du])?);
        let first = -self.int_chain(&[&vf, &dbu, &w[n - 2], dw])? + self.int_chain(&[&uf, &dbv, &w[n - 2], dw])? + s1;
        let second = -self.int_chain(&[&vf, &du, &w[n - 2], dbw])?
            + self.int_chain(&[&uf, &dv, &w[n - 2], dbw])?
            + s1.conj();
        let mut scaled = vec![first, second];
        let s2 = a[2] + b[2];
        let third = h1 + 2.0 * s1 / k1 + s2;
        scaled.push(third);
        scaled.push(third.conj());
        for i in 2..=n.saturating_sub(2) {
            let c = nf - i as f64 - 1.0;
            let next = a[i + 1] + b[i + 1];
            let odd = h[i] + (i as f64 + 1.0) / c * (a[i] + b[i]) + next;
            scaled.push(odd);
            scaled.push(odd.conj());
        }
        let terms: Vec<C64> = std::iter::once(i0)
            .chain(scaled.iter().zip(weights).map(|(x, w)| x * w))
            .collect();
        let total: C64 = terms.iter().sum();
        let scale: f64 = terms.iter().map(|z| z.norm()).sum();
        let master = total.norm() / (1.0 + scale);

        Ok(ProofIdentityReport {
            n,
            residuals,
            master_residual: master,
            master_sum: [total.re, total.im],
            a: a.iter().map(|z| [z.re, z.im]).collect(),
            b: b.iter().map(|z| [z.re, z.im]).collect(),
            h: h.iter().map(|z| [z.re, z.im]).collect(),
            a1: [a1.re, a1.im],
            b1: [b1.re, b1.im],
            h1: [h1.re, h1.im],
            obstruction_terms: terms.iter().map(|z| [z.re, z.im]).collect(),
        })
    }

    /// I and J in gradient form together with the six comparison margins.
    pub fn inequality_report(&self, phi: &ScalarField) -> Result<InequalityReport, EnergyError> {
        let s = self.sums(phi)?;
        let (i, j) = (s.i_gradient(self.n)?, s.j_gradient(self.n)?);
        let margins = inequality_margins(self.n, i, j);
        let floor = margin_floor(i, j);
        let passed = margins.iter().all(|&m| m >= floor) && i >= floor && j >= floor;
        Ok(InequalityReport { i, j, margins, floor, passed })
    }

    /// Kähler-formula values: uncorrected path integral, I = K₀ − Kₙ and J = K₀ − L.
    pub fn kaehler_formulas(&self, phi: &ScalarField, rule: &QuadratureRule) -> Result<(f64, f64, f64), EnergyError> {
        let n = self.n;
        let path = PotentialPath::Linear { from: ScalarField::zero(phi.grid()), to: phi.clone() };
        let l = self.kaehler_mabuchi_path(&path, rule)?;
        let pd = self.potential(phi)?;
        let phi_f = Form::scalar(phi.clone());
        let k0 = realify("K_0", self.int_chain(&[&phi_f, &self.omega_pows[n]])?)?;
        let kn = realify("K_n", self.int_chain(&[&phi_f, &pd.pows[n]])?)?;
        Ok((l, k0 - kn, k0 - l))
    }

    /// |L(φ₁,φ₂) + L(φ₂,φ₃) + L(φ₃,φ₁)| relative residual, plus the antisymmetry residual of the first pair.
    pub fn cocycle_check(
        &self,
        p1: &ScalarField,
        p2: &ScalarField,
        p3: &ScalarField,
        rule: &QuadratureRule,
    ) -> Result<CocycleReport, EnergyError> {
        let l12 = self.mabuchi_two_point(p1, p2, rule)?;
        let l21 = self.mabuchi_two_point(p2, p1, rule)?;
        let l23 = self.mabuchi_two_point(p2, p3, rule)?;
        let l31 = self.mabuchi_two_point(p3, p1, rule)?;
        let cyc = l12 + l23 + l31;
        Ok(CocycleReport {
            antisymmetry: (l12 + l21).abs() / (1.0 + l12.abs() + l21.abs()),
            three_cycle: cyc.abs() / (1.0 + l12.abs() + l23.abs() + l31.abs()),
        })
    }

    /// Residuals of L(φ₁, φ₁+C) against C·∫ω_{φ₁}ⁿ/V and of L(φ₁, φ₂+C) − L(φ₁, φ₂) against C·(1 − Err(φ₂)/V).
    pub fn shift_laws(
        &self,
        p1: &ScalarField,
        p2: &ScalarField,
        c: f64,
        rule: &QuadratureRule,
    ) -> Result<ShiftReport, EnergyError> {
        let n = self.n;
        let shifted = PotentialPath::Shifted { base: p1.clone(), constant: c };
        let l_shift = self.mabuchi_path(&shifted, rule)?;
        let pd = self.potential(p1)?;
        let vol_phi = realify("twisted volume", pd.pows[n].integrate_top()?)?;
        let oracle = c * vol_phi / self.volume;
        let p2c = p2.add(&ScalarField::constant(p2.grid(), re(c)))?;
        let diff = self.mabuchi_two_point(p1, &p2c, rule)? - self.mabuchi_two_point(p1, p2, rule)?;
        let oracle2 = c * (1.0 - self.err_term(p2)? / self.volume);
        Ok(ShiftReport {
            self_shift: Residual::real("self_shift", l_shift, oracle),
            endpoint_shift: Residual::real("endpoint_shift", diff, oracle2),
            printed_sign_gap: Residual::real("endpoint_shift_plus_sign", diff, c * (1.0 + self.err_term(p2)? / self.volume)),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Direct,
    Gradient,
}

/// Normalised building-block integrals of one potential.
///
/// * `k[i] = (1/V)∫φ ω_φⁱ∧ω^{n−i}`
/// * `p[i] = (1/V)∫φ ω_φⁱ∧ω^{n−2−i}∧i∂ω∧∂̄φ`
/// * `q[i] = (1/V)∫φ ω_φⁱ∧ω^{n−2−i}∧i∂̄ω∧∂φ`
/// * `g[i] = (1/V)∫i∂φ∧∂̄φ∧ω_φⁱ∧ω^{n−1−i}`
#[derive(Clone, Debug, Default)]
pub struct PotentialSums {
    pub k: Vec<C64>,
    pub p: Vec<C64>,
    pub q: Vec<C64>,
    pub g: Vec<C64>,
}

impl PotentialSums {
    fn extra(&self, n: usize) -> C64 {
        let s: C64 = self.q.iter().zip(&self.p).map(|(q, p)| q - p).sum();
        s * (n as f64 / 2.0)
    }

    pub fn mabuchi_explicit(&self, n: usize) -> Result<f64, EnergyError> {
        let base: C64 = self.k.iter().sum::<C64>() / (n as f64 + 1.0);
        let corr: C64 = (0..=n - 2).map(|i| (self.q[i] - self.p[i]) * ((i as f64 + 1.0) / 2.0)).sum();
        realify("explicit Mabuchi functional", base + corr)
    }

    pub fn i_direct(&self, n: usize) -> Result<f64, EnergyError> {
        realify("I direct", self.k[0] - self.k[n] + self.extra(n))
    }

    pub fn i_gradient(&self, _n: usize) -> Result<f64, EnergyError> {
        realify("I gradient", self.g.iter().sum())
    }

    pub fn j_direct(&self, n: usize) -> Result<f64, EnergyError> {
        let l = self.mabuchi_explicit(n)?;
        realify("J direct", re(-l) + self.k[0] + self.extra(n))
    }

    pub fn j_gradient(&self, n: usize) -> Result<f64, EnergyError> {
        let s: C64 = self.g.iter().enumerate().map(|(i, g)| g * ((n - i) as f64 / (n as f64 + 1.0))).sum();
        realify("J gradient", s)
    }

    /// Magnitudes of the correction sums that vanish for closed ω.
    pub fn extra_magnitudes(&self) -> (f64, f64) {
        (self.p.iter().map(|z| z.norm()).sum(), self.q.iter().map(|z| z.norm()).sum())
    }
}

fn intermediates_from(n: usize, s: &PotentialSums, j_bullet: f64) -> Result<IntermediateReport, EnergyError> {
    let nf = n as f64;
    let half = |i: usize| (i as f64 + 1.0) / 2.0;
    let a: C64 = (0..=n - 2).map(|i| -s.p[i] * half(i)).sum();
    let b: C64 = (0..=n - 2).map(|i| s.q[i] * half(i)).sum();
    let c: C64 = (1..=n - 2).map(|i| s.p[i] * (i as f64 * nf / (nf + 1.0))).sum();
    let d: C64 = (1..=n - 2).map(|i| -s.q[i] * (i as f64 * nf / (nf + 1.0))).sum();
    let e: C64 = (0..=n - 3).map(|i| s.p[i] * nf * nf).sum();
    let f: C64 = (0..=n - 3).map(|i| -s.q[i] * nf * nf).sum();
    let a1: C64 = (0..=n - 3).map(|i| -s.p[i] * half(i)).sum();
    let a2 = -s.p[n - 2] * ((nf - 1.0) / 2.0);
    let b1: C64 = (0..=n - 3).map(|i| s.q[i] * half(i)).sum();
    let b2 = s.q[n - 2] * ((nf - 1.0) / 2.0);
    Ok(IntermediateReport {
        i_bullet: realify("I bullet", s.k[0] - s.k[n])?,
        j_bullet,
        a: realify("A", a)?,
        b: realify("B", b)?,
        c: realify("C", c)?,
        d: realify("D", d)?,
        e: realify("E", e)?,
        f: realify("F", f)?,
        a1: realify("A1", a1)?,
        a2: realify("A2", a2)?,
        b1: realify("B1", b1)?,
        b2: realify("B2", b2)?,
    })
}

/// The six comparison margins: the two main inequalities and four chain links.
///
/// Order: n/(n+1)·I − J, (n+1)·J − I, J − I/(n+1), I − (n+1)/n·J, (I − J) − J/(n+1), n·J − (I − J).
pub fn inequality_margins(n: usize, i: f64, j: f64) -> [f64; 6] {
    let nf = n as f64;
    [
        nf / (nf + 1.0) * i - j,
        (nf + 1.0) * j - i,
        j - i / (nf + 1.0),
        i - (nf + 1.0) / nf * j,
        (i - j) - j / (nf + 1.0),
        nf * j - (i - j),
    ]
}

/// Margin tolerance: −1e−10·(1 + |I| + |J|).
pub fn margin_floor(i: f64, j: f64) -> f64 {
    -1e-10 * (1.0 + i.abs() + j.abs())
}

#[derive(Clone, Debug, Serialize)]
pub struct Residual {
    pub tag: String,
    pub lhs: [f64; 2],
    pub rhs: [f64; 2],
    pub residual: f64,
}

impl Residual {
    pub fn real(tag: &str, lhs: f64, rhs: f64) -> Self {
        Self::complex(tag, re(lhs), re(rhs))
    }
    pub fn complex(tag: &str, lhs: C64, rhs: C64) -> Self {
        Self { tag: tag.to_string(), lhs: [lhs.re, lhs.im], rhs: [rhs.re, rhs.im], residual: relative_residual(lhs, rhs) }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FunctionalReport {
    pub n: usize,
    pub volume: f64,
    pub l_path: f64,
    pub l_explicit: f64,
    pub i_direct: f64,
    pub i_gradient: f64,
    pub j_direct: f64,
    pub j_gradient: f64,
    pub err: f64,
    pub margins: [f64; 6],
    pub residuals: Vec<Residual>,
}

#[derive(Clone, Debug, Serialize)]
pub struct IntermediateReport {
    pub i_bullet: f64,
    pub j_bullet: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProofIdentityReport {
    pub n: usize,
    pub residuals: Vec<Residual>,
    pub master_residual: f64,
    pub master_sum: [f64; 2],
    pub a: Vec<[f64; 2]>,
    pub b: Vec<[f64; 2]>,
    pub h: Vec<[f64; 2]>,
    pub a1: [f64; 2],
    pub b1: [f64; 2],
    pub h1: [f64; 2],
    pub obstruction_terms: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Serialize)]
pub struct InequalityReport {
    pub i: f64,
    pub j: f64,
    pub margins: [f64; 6],
    pub floor: f64,
    pub passed: bool,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CocycleReport {
    pub antisymmetry: f64,
    pub three_cycle: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ShiftReport {
    pub self_shift: Residual,
    pub endpoint_shift: Residual,
    /// Same comparison with the opposite sign on the defect term; expected to fail when the defect is nonzero.
    pub printed_sign_gap: Residual,
}

//! Exact rational and Gaussian-rational coefficient algebra.
//!
//! Every constant the energy functionals depend on is produced here with
//! arbitrary-precision arithmetic: binomials, beta moments, the Mabuchi
//! correction weights, the expansion of the cancellation recursion over
//! formal indeterminates, and the sixteen Aubin-Yau assembly constants.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

/// Arbitrary-precision rational, always in lowest terms with positive denominator.
pub type Rational = BigRational;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExactError {
    #[error("dimension n = {n} is below the minimum {min}")]
    DimensionTooSmall { n: usize, min: usize },
    #[error("index {i} outside the valid range {lo}..={hi}")]
    IndexOutOfRange { i: usize, lo: usize, hi: usize },
    #[error("linear system is singular")]
    Singular,
}

pub fn rat(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

fn int(v: impl Into<BigInt>) -> Rational {
    Rational::from_integer(v.into())
}

/// Renders a rational as `p` or `p/q`.
pub fn rational_string(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Parses `p`, `-p` or `p/q` into a rational; rejects a zero denominator.
pub fn parse_rational(s: &str) -> Option<Rational> {
    let s = s.trim();
    let (n, d) = match s.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (s, "1"),
    };
    let n: BigInt = n.parse().ok()?;
    let d: BigInt = d.parse().ok()?;
    if d.is_zero() {
        return None;
    }
    Some(Rational::new(n, d))
}

pub fn to_f64(r: &Rational) -> f64 {
    // Split off the integer part so huge numerators stay accurate.
    let (q, rem) = r.numer().div_rem(r.denom());
    let whole = q.to_f64().unwrap_or(f64::NAN);
    let frac = match (rem.to_f64(), r.denom().to_f64()) {
        (Some(a), Some(b)) if b.is_finite() => a / b,
        _ => 0.0,
    };
    whole + frac
}

pub fn factorial(n: usize) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

/// C(n, k), zero outside `0..=n`.
pub fn binomial(n: usize, k: i64) -> BigInt {
    if k < 0 || k as usize > n {
        return BigInt::zero();
    }
    let k = (k as usize).min(n - k as usize);
    let mut acc = BigInt::one();
    for j in 0..k {
        acc = acc * BigInt::from(n - j) / BigInt::from(j + 1);
    }
    acc
}

/// ∫₀¹ t^i (1−t)^(n−i) dt = i!(n−i)!/(n+1)!.
pub fn beta_moment(i: usize, n: usize) -> Result<Rational, ExactError> {
    if i > n {
        return Err(ExactError::IndexOutOfRange { i, lo: 0, hi: n });
    }
    Ok(Rational::new(factorial(i) * factorial(n - i), factorial(n + 1)))
}

/// Exact complex number with rational parts.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GaussianRational {
    pub re: Rational,
    pub im: Rational,
}

impl GaussianRational {
    pub fn new(re: Rational, im: Rational) -> Self {
        Self { re, im }
    }
    pub fn real(re: Rational) -> Self {
        Self { re, im: Rational::zero() }
    }
    pub fn imag(im: Rational) -> Self {
        Self { re: Rational::zero(), im }
    }
    pub fn zero() -> Self {
        Self::real(Rational::zero())
    }
    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }
    pub fn conj(&self) -> Self {
        Self { re: self.re.clone(), im: -self.im.clone() }
    }
    pub fn norm_sqr(&self) -> Rational {
        &self.re * &self.re + &self.im * &self.im
    }
    pub fn checked_div(&self, rhs: &Self) -> Option<Self> {
        let d = rhs.norm_sqr();
        if d.is_zero() {
            return None;
        }
        let num = self * &rhs.conj();
        Some(Self { re: num.re / &d, im: num.im / d })
    }
    pub fn to_c64(&self) -> num_complex::Complex64 {
        num_complex::Complex64::new(to_f64(&self.re), to_f64(&self.im))
    }
}

impl fmt::Display for GaussianRational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let im_part = |im: &Rational| -> String {
            if im.is_one() {
                "i".to_string()
            } else if (-im).is_one() {
                "-i".to_string()
            } else {
                format!("{}i", rational_string(im))
            }
        };
        match (self.re.is_zero(), self.im.is_zero()) {
            (_, true) => write!(f, "{}", rational_string(&self.re)),
            (true, false) => write!(f, "{}", im_part(&self.im)),
            (false, false) => {
                let im = im_part(&self.im);
                let sep = if im.starts_with('-') { "" } else { "+" };
                write!(f, "{}{}{}", rational_string(&self.re), sep, im)
            }
        }
    }
}

impl Serialize for GaussianRational {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'a> Add<&'a GaussianRational> for &'a GaussianRational {
    type Output = GaussianRational;
    fn add(self, r: &GaussianRational) -> GaussianRational {
        GaussianRational { re: &self.re + &r.re, im: &self.im + &r.im }
    }
}

impl<'a> Sub<&'a GaussianRational> for &'a GaussianRational {
    type Output = GaussianRational;
    fn sub(self, r: &GaussianRational) -> GaussianRational {
        GaussianRational { re: &self.re - &r.re, im: &self.im - &r.im }
    }
}

impl<'a> Mul<&'a GaussianRational> for &'a GaussianRational {
    type Output = GaussianRational;
    fn mul(self, r: &GaussianRational) -> GaussianRational {
        GaussianRational {
            re: &self.re * &r.re - &self.im * &r.im,
            im: &self.re * &r.im + &self.im * &r.re,
        }
    }
}

impl Neg for GaussianRational {
    type Output = GaussianRational;
    fn neg(self) -> GaussianRational {
        GaussianRational { re: -self.re, im: -self.im }
    }
}

/// Formal combination `c2_coeff·c₂ + Σ_k j_coeffs[k]·J_k`. Zero entries are never stored.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct CoefficientVector {
    pub c2_coeff: Rational,
    pub j_coeffs: BTreeMap<usize, Rational>,
}

impl CoefficientVector {
    pub fn c2() -> Self {
        Self { c2_coeff: Rational::one(), j_coeffs: BTreeMap::new() }
    }

    pub fn is_zero(&self) -> bool {
        self.c2_coeff.is_zero() && self.j_coeffs.is_empty()
    }

    pub fn scale(&self, s: &Rational) -> Self {
        let mut out = Self { c2_coeff: &self.c2_coeff * s, j_coeffs: BTreeMap::new() };
        for (k, v) in &self.j_coeffs {
            out.add_j(*k, v * s);
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.c2_coeff += &other.c2_coeff;
        for (k, v) in &other.j_coeffs {
            out.add_j(*k, v.clone());
        }
        out
    }

    pub fn add_j(&mut self, k: usize, v: Rational) {
        let e = self.j_coeffs.entry(k).or_insert_with(Rational::zero);
        *e += v;
        if e.is_zero() {
            self.j_coeffs.remove(&k);
        }
    }

    /// Replaces the indeterminate c₂ by the combination `c2` (which must not itself contain c₂).
    pub fn substitute_c2(&self, c2: &CoefficientVector) -> Self {
        let mut out = Self { c2_coeff: Rational::zero(), j_coeffs: self.j_coeffs.clone() };
        out = out.add(&c2.scale(&self.c2_coeff));
        out
    }
}

impl Serialize for CoefficientVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut m = s.serialize_map(Some(1 + self.j_coeffs.len()))?;
        m.serialize_entry("c2", &rational_string(&self.c2_coeff))?;
        for (k, v) in &self.j_coeffs {
            m.serialize_entry(&format!("J{k}"), &rational_string(v))?;
        }
        m.end()
    }
}

fn check_n(n: usize, min: usize) -> Result<(), ExactError> {
    if n < min {
        Err(ExactError::DimensionTooSmall { n, min })
    } else {
        Ok(())
    }
}

/// Correction weights a_1..a_{2n−2}, valid for every n ≥ 2:
/// a₁ = −C(n,2)·i, a₂ = C(n,2)·i and a_{2k+1} = a_{2k+2} = (−1)^{k+1}·C(n,k+2).
pub(crate) fn weights_unchecked(n: usize) -> Vec<GaussianRational> {
    let half = int(n * (n - 1)) / int(2);
    let mut out = vec![GaussianRational::imag(-half.clone()), GaussianRational::imag(half)];
    for k in 1..=n.saturating_sub(2) {
        let a = GaussianRational::real(int(binomial(n, k as i64 + 2) * sign(k + 1)));
        out.push(a.clone());
        out.push(a);
    }
    out
}

/// The Mabuchi correction weights a_1, …, a_{2n−2}.
pub fn mabuchi_weights(n: usize) -> Result<Vec<GaussianRational>, ExactError> {
    check_n(n, 3)?;
    Ok(weights_unchecked(n))
}

/// Weights forced by total cancellation of the obstruction terms, derived from the recursion.
///
/// The first-order relation reads 2I⁰/(n(n−1)i) = I¹/a₁ − I²/a₂ + σ·c₁ with σ = `first_pair_sign`
/// (±1). Substituting c₁ = −(n−2)i/3·(J₁ − c₂) and c₂ from [`c2_solution`] and matching every
/// coefficient against −2/(n(n−1)i)·a_k gives the weights. σ = −1 yields [`mabuchi_weights`];
/// σ = +1 flips every real weight.
pub fn weights_from_cancellation(n: usize, first_pair_sign: i32) -> Result<Vec<GaussianRational>, ExactError> {
    check_n(n, 3)?;
    let sigma = Rational::from_integer(BigInt::from(first_pair_sign.signum()));
    // Target coefficient of I^k/a_k is −2/(n(n−1)i)·a_k, so a_k = −n(n−1)i/2 · coefficient.
    let to_weight = |coef: &GaussianRational| {
        let factor = GaussianRational::imag(-(int(n * (n - 1)) / int(2)));
        &factor * coef
    };
    let third = GaussianRational::imag(-(int(n - 2) / int(3)));
    let lead = &GaussianRational::real(sigma) * &third;
    let mut out = vec![
        to_weight(&GaussianRational::real(Rational::one())),
        to_weight(&GaussianRational::real(-Rational::one())),
    ];
    let a3 = to_weight(&lead);
    out.push(a3.clone());
    out.push(a3);
    let c2 = c2_solution(n)?;
    for k in 2..=n - 2 {
        let gamma = c2.j_coeffs.get(&k).cloned().unwrap_or_else(Rational::zero);
        let a = to_weight(&(&lead * &GaussianRational::real(-gamma)));
        out.push(a.clone());
        out.push(a);
    }
    Ok(out)
}

fn check_index(n: usize, i: usize) -> Result<(), ExactError> {
    check_n(n, 4)?;
    if i < 2 || i > n - 1 {
        return Err(ExactError::IndexOutOfRange { i, lo: 2, hi: n - 1 });
    }
    Ok(())
}

/// Expands c_i by iterating c_{k+1} = −(k+2)/(n−k−1)·c_k + J_k upward from c₂.
pub fn recursion_expand(n: usize, i: usize) -> Result<CoefficientVector, ExactError> {
    check_index(n, i)?;
    let mut c = CoefficientVector::c2();
    for k in 2..i {
        let factor = -Rational::new(BigInt::from(k + 2), BigInt::from(n - k - 1));
        c = c.scale(&factor);
        c.add_j(k, Rational::one());
    }
    Ok(c)
}

/// Closed-form expansion of c_i obtained by unrolling the recursion.
pub fn closed_form(n: usize, i: usize) -> Result<CoefficientVector, ExactError> {
    check_index(n, i)?;
    Ok(closed_form_raw(n, i))
}

fn sign(e: usize) -> BigInt {
    if e % 2 == 0 {
        BigInt::one()
    } else {
        -BigInt::one()
    }
}

fn closed_form_raw(n: usize, i: usize) -> CoefficientVector {
    let top = factorial(i + 1) * factorial(n - i - 1);
    let mut c = CoefficientVector {
        c2_coeff: Rational::new(sign(i - 2) * &top, factorial(3) * factorial(n - 3)),
        j_coeffs: BTreeMap::new(),
    };
    for k in 2..i {
        let v = Rational::new(sign(i - 1 - k) * &top, factorial(k + 2) * factorial(n - k - 2));
        c.add_j(k, v);
    }
    c
}

/// The value of c₂ forced by the terminal condition c_{n−1} = 0, as a combination of the J_k.
pub fn c2_solution(n: usize) -> Result<CoefficientVector, ExactError> {
    check_n(n, 3)?;
    let mut c = CoefficientVector::default();
    for k in 2..=n.saturating_sub(2) {
        let v = Rational::new(
            sign(k) * factorial(3) * factorial(n - 3),
            factorial(k + 2) * factorial(n - k - 2),
        );
        c.add_j(k, v);
    }
    Ok(c)
}

/// Sixteen assembly constants of the Aubin-Yau functionals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AyConstants {
    pub a1_1: Rational,
    pub a2_1: Rational,
    pub b1_1: Rational,
    pub b2_1: Rational,
    pub a1_2: Rational,
    pub a2_2: Rational,
    pub b1_2: Rational,
    pub b2_2: Rational,
    pub c1: Rational,
    pub c2: Rational,
    pub d1: Rational,
    pub d2: Rational,
    pub e1: Rational,
    pub e2: Rational,
    pub f1: Rational,
    pub f2: Rational,
}

/// Unknown ordering used by [`ay_system`].
pub const AY_UNKNOWNS: [&str; 16] = [
    "a1_1", "a1_2", "a2_1", "a2_2", "b1_1", "b1_2", "b2_1", "b2_2", "c1", "c2", "d1", "d2", "e1",
    "e2", "f1", "f2",
];

impl AyConstants {
    /// Values in [`AY_UNKNOWNS`] order.
    pub fn to_vec(&self) -> Vec<Rational> {
        vec![
            self.a1_1.clone(),
            self.a1_2.clone(),
            self.a2_1.clone(),
            self.a2_2.clone(),
            self.b1_1.clone(),
            self.b1_2.clone(),
            self.b2_1.clone(),
            self.b2_2.clone(),
            self.c1.clone(),
            self.c2.clone(),
            self.d1.clone(),
            self.d2.clone(),
            self.e1.clone(),
            self.e2.clone(),
            self.f1.clone(),
            self.f2.clone(),
        ]
    }

    pub fn from_vec(v: &[Rational]) -> Self {
        let g = |i: usize| v[i].clone();
        Self {
            a1_1: g(0),
            a1_2: g(1),
            a2_1: g(2),
            a2_2: g(3),
            b1_1: g(4),
            b1_2: g(5),
            b2_1: g(6),
            b2_2: g(7),
            c1: g(8),
            c2: g(9),
            d1: g(10),
            d2: g(11),
            e1: g(12),
            e2: g(13),
            f1: g(14),
            f2: g(15),
        }
    }
}

impl Serialize for AyConstants {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut m = s.serialize_map(Some(16))?;
        for (name, v) in AY_UNKNOWNS.iter().zip(self.to_vec()) {
            m.serialize_entry(name, &rational_string(&v))?;
        }
        m.end()
    }
}

/// A labelled dense linear system `matrix · x = rhs`.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub labels: Vec<String>,
    pub matrix: Vec<Vec<Rational>>,
    pub rhs: Vec<Rational>,
}

impl LinearSystem {
    /// Per-equation residual `matrix·x − rhs`.
    pub fn residuals(&self, x: &[Rational]) -> Vec<Rational> {
        self.matrix
            .iter()
            .zip(&self.rhs)
            .map(|(row, b)| {
                row.iter().zip(x).fold(Rational::zero(), |acc, (a, xi)| acc + a * xi) - b
            })
            .collect()
    }
}

/// Linear conditions on the sixteen constants, in [`AY_UNKNOWNS`] order.
///
/// Each pair (x₁, x₂) obeys one equation from the I-side comparison and one
/// from the J-side comparison.
pub fn ay_system(n: usize) -> Result<LinearSystem, ExactError> {
    check_n(n, 3)?;
    let np1 = int(n + 1);
    let ratio = int(n) / &np1;
    let half = rat(1, 2);
    let inv_nm1 = Rational::one() / int(n - 1);
    // (pair name, first-equation rhs, second-equation rhs)
    let pairs: [(&str, Rational, Rational); 8] = [
        ("a1", Rational::one() / &np1 - Rational::one(), Rational::zero()),
        ("a2", Rational::one() / &np1 - Rational::one(), &inv_nm1 + &np1),
        ("b1", Rational::one() / &np1 - Rational::one(), Rational::zero()),
        ("b2", Rational::one() / &np1 - Rational::one(), &inv_nm1 + &np1),
        ("c", -half.clone(), Rational::zero()),
        ("d", -half.clone(), Rational::zero()),
        ("e", Rational::zero(), -half.clone()),
        ("f", Rational::zero(), -half),
    ];
    let mut sys = LinearSystem { labels: vec![], matrix: vec![], rhs: vec![] };
    for (p, (name, r1, _)) in pairs.iter().enumerate() {
        let mut row = vec![Rational::zero(); 16];
        row[2 * p] = ratio.clone();
        row[2 * p + 1] = -Rational::one();
        sys.labels.push(format!("i_side_{name}"));
        sys.matrix.push(row);
        sys.rhs.push(r1.clone());
    }
    for (p, (name, _, r2)) in pairs.iter().enumerate() {
        let mut row = vec![Rational::zero(); 16];
        row[2 * p] = -Rational::one();
        row[2 * p + 1] = np1.clone();
        sys.labels.push(format!("j_side_{name}"));
        sys.matrix.push(row);
        sys.rhs.push(r2.clone());
    }
    Ok(sys)
}

/// Solves a square system by fraction-free (Bareiss) elimination on the
/// integer-scaled augmented matrix, taking the first nonzero pivot.
pub fn solve_exact(sys: &LinearSystem) -> Result<Vec<Rational>, ExactError> {
    let n = sys.matrix.len();
    let mut m: Vec<Vec<BigInt>> = sys
        .matrix
        .iter()
        .zip(&sys.rhs)
        .map(|(row, b)| {
            let lcm = row
                .iter()
                .chain(std::iter::once(b))
                .fold(BigInt::one(), |acc, r| acc.lcm(r.denom()));
            row.iter()
                .chain(std::iter::once(b))
                .map(|r| r.numer() * (&lcm / r.denom()))
                .collect()
        })
        .collect();
    let mut prev = BigInt::one();
    for k in 0..n {
        let p = (k..n).find(|&r| !m[r][k].is_zero()).ok_or(ExactError::Singular)?;
        m.swap(k, p);
        for i in k + 1..n {
            for j in k + 1..=n {
                let v = (&m[i][j] * &m[k][k] - &m[i][k] * &m[k][j]) / &prev;
                m[i][j] = v;
            }
            m[i][k] = BigInt::zero();
        }
        prev = m[k][k].clone();
    }
    let mut x = vec![Rational::zero(); n];
    for i in (0..n).rev() {
        let mut acc = int(m[i][n].clone());
        for j in i + 1..n {
            acc -= int(m[i][j].clone()) * &x[j];
        }
        x[i] = acc / int(m[i][i].clone());
    }
    Ok(x)
}

/// Solves [`ay_system`] exactly.
pub fn ay_constants(n: usize) -> Result<AyConstants, ExactError> {
    let sys = ay_system(n)?;
    Ok(AyConstants::from_vec(&solve_exact(&sys)?))
}

/// One evaluation of an exact scalar identity.
#[derive(Clone, Debug, Serialize)]
pub struct IdentityCheck {
    pub label: &'static str,
    pub i: usize,
    pub lhs: i64,
    pub rhs: i64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    pub n: usize,
    pub checks: Vec<IdentityCheck>,
    pub first_failure: Option<(&'static str, usize)>,
}

impl IdentityReport {
    pub fn passed(&self) -> bool {
        self.first_failure.is_none()
    }
}

fn identity_suite(n: usize, perturb: i64) -> Result<IdentityReport, ExactError> {
    check_n(n, 3)?;
    let n_ = n as i64;
    let mut checks = Vec::new();
    for i in 0..n as i64 {
        checks.push(IdentityCheck {
            label: "gradient_weight_split",
            i: i as usize,
            lhs: i * (n_ - 1 - i) + (i + 1) * (i + 1) + perturb,
            rhs: (i + 1) + i * n_,
            holds: false,
        });
        checks.push(IdentityCheck {
            label: "complementary_weight_split",
            i: i as usize,
            lhs: (n_ - 1 - i) * (n_ - 1 - i) + (i + 1) * (n_ - i - 2),
            rhs: n_ * n_ - (n_ + 1) * (i + 1),
            holds: false,
        });
    }
    for c in &mut checks {
        c.holds = c.lhs == c.rhs;
    }
    let first_failure = checks.iter().find(|c| !c.holds).map(|c| (c.label, c.i));
    Ok(IdentityReport { n, checks, first_failure })
}

/// Checks the two integer identities behind the gradient-form weights for every i in 0..n.
pub fn scalar_identity_suite(n: usize) -> Result<IdentityReport, ExactError> {
    identity_suite(n, 0)
}

/// Same suite with one side of the first identity shifted by one; must fail at i = 0.
pub fn scalar_identity_suite_perturbed(n: usize) -> Result<IdentityReport, ExactError> {
    identity_suite(n, 1)
}

/// True when every entry is an exact zero.
pub fn all_zero(v: &[Rational]) -> bool {
    v.iter().all(|r| r.is_zero())
}

/// Absolute value helper for exact comparisons in reports.
pub fn abs(r: &Rational) -> Rational {
    r.abs()
}

//! Band-limited periodic fields on the real 2n-torus and the (p,q)-form algebra over them.
//!
//! Real axes are ordered (x_1, y_1, …, x_n, y_n), each of period 1. Values are stored
//! row-major with the last axis fastest. Products are exact by contract: every field
//! carries a per-axis bandwidth and a product is refused when its bandwidth could alias.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;
use thiserror::Error;

pub type C64 = Complex64;

const PAR_THRESHOLD: usize = 1 << 15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("fields or forms live on different grids")]
    GridMismatch,
    #[error("product bandwidth {needed} on axis {axis} aliases on {res} points (need 2b < m)")]
    AliasRisk { axis: usize, needed: u32, res: usize },
    #[error("mode {mode} on axis {axis} exceeds the representable range for {res} points")]
    AliasedMode { axis: usize, mode: i64, res: usize },
    #[error("expected a form of degree ({p},{q}), got ({got_p},{got_q})")]
    WrongDegree { p: usize, q: usize, got_p: usize, got_q: usize },
    #[error("form is not real: conjugate differs by {deviation:e}")]
    NonReal { deviation: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

type FftPair = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

/// Grid geometry shared by every field of one computation.
pub struct GridSpec {
    n: usize,
    res: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
    plans: Vec<Option<FftPair>>,
}

impl fmt::Debug for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GridSpec").field("n", &self.n).field("res", &self.res).finish()
    }
}

impl PartialEq for GridSpec {
    fn eq(&self, o: &Self) -> bool {
        self.n == o.n && self.res == o.res
    }
}

pub type Grid = Arc<GridSpec>;

impl GridSpec {
    pub fn new(n: usize, res: Vec<usize>) -> Result<Grid, SpectralError> {
        if !(2..=12).contains(&n) {
            return Err(SpectralError::InvalidGrid(format!("complex dimension {n} outside 2..=12")));
        }
        if res.len() != 2 * n {
            return Err(SpectralError::InvalidGrid(format!(
                "expected {} resolutions, got {}",
                2 * n,
                res.len()
            )));
        }
        if res.iter().any(|&m| m == 0) {
            return Err(SpectralError::InvalidGrid("resolution 0".into()));
        }
        let mut strides = vec![1; 2 * n];
        for a in (0..2 * n - 1).rev() {
            strides[a] = strides[a + 1] * res[a + 1];
        }
        let len = strides[0] * res[0];
        let mut planner = FftPlanner::new();
        let plans = res
            .iter()
            .map(|&m| (m > 1).then(|| (planner.plan_fft_forward(m), planner.plan_fft_inverse(m))))
            .collect();
        Ok(Arc::new(Self { n, res, strides, len, plans }))
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn resolutions(&self) -> &[usize] {
        &self.res
    }
    pub fn len(&self) -> usize {
        self.len
    }
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
    pub fn is_active(&self, axis: usize) -> bool {
        self.res[axis] > 1
    }
    /// A complex direction j (0-based) is active when either of its real axes is.
    pub fn direction_active(&self, j: usize) -> bool {
        self.is_active(2 * j) || self.is_active(2 * j + 1)
    }

    /// Coordinates of flat index `idx` as per-axis integer positions.
    pub fn position(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.res.len()];
        for a in 0..self.res.len() {
            out[a] = idx / self.strides[a];
            idx %= self.strides[a];
        }
        out
    }

    /// Applies `f` to each 1-D line along `axis` (in place), transforming by the axis FFT pair.
    fn transform_axis(&self, values: &mut [C64], axis: usize, f: &(dyn Fn(usize, &mut [C64]) + Sync)) {
        let m = self.res[axis];
        let stride = self.strides[axis];
        let (fwd, inv) = self.plans[axis].as_ref().expect("active axis");
        let block = stride * m;
        let scale = 1.0 / m as f64;
        let run = |chunk: &mut [C64]| {
            let mut buf = vec![C64::new(0.0, 0.0); m];
            let mut scratch = vec![C64::new(0.0, 0.0); fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len())];
            for off in 0..stride {
                for (k, b) in buf.iter_mut().enumerate() {
                    *b = chunk[off + k * stride];
                }
                fwd.process_with_scratch(&mut buf, &mut scratch);
                f(m, &mut buf);
                inv.process_with_scratch(&mut buf, &mut scratch);
                for (k, b) in buf.iter().enumerate() {
                    chunk[off + k * stride] = b * scale;
                }
            }
        };
        if values.len() >= PAR_THRESHOLD {
            values.par_chunks_mut(block).for_each(run);
        } else {
            values.chunks_mut(block).for_each(run);
        }
    }
}

/// Signed frequency of FFT bin `k` on `m` points; the Nyquist bin of even grids maps to `None`.
fn signed_freq(k: usize, m: usize) -> Option<i64> {
    if 2 * k == m {
        None
    } else if 2 * k < m {
        Some(k as i64)
    } else {
        Some(k as i64 - m as i64)
    }
}

fn pairwise_sum(v: &[C64]) -> C64 {
    if v.len() <= 64 {
        v.iter().fold(C64::new(0.0, 0.0), |a, b| a + b)
    } else {
        let (l, r) = v.split_at(v.len() / 2);
        pairwise_sum(l) + pairwise_sum(r)
    }
}

/// A band-limited complex field sampled on a grid.
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<C64>,
    band: Vec<u32>,
}

impl ScalarField {
    pub fn zero(grid: &Grid) -> Self {
        Self::constant(grid, C64::new(0.0, 0.0))
    }

    pub fn constant(grid: &Grid, c: C64) -> Self {
        Self { grid: grid.clone(), values: vec![c; grid.len()], band: vec![0; grid.res.len()] }
    }

    /// Field from raw samples with a declared bandwidth; the declaration is trusted.
    pub fn from_values(grid: &Grid, values: Vec<C64>, band: Vec<u32>) -> Result<Self, SpectralError> {
        if values.len() != grid.len() || band.len() != grid.res.len() {
            return Err(SpectralError::GridMismatch);
        }
        for (a, (&b, &m)) in band.iter().zip(&grid.res).enumerate() {
            if 2 * b as usize >= m && !(b == 0 && m == 1) {
                return Err(SpectralError::AliasRisk { axis: a, needed: b, res: m });
            }
        }
        Ok(Self { grid: grid.clone(), values, band })
    }

    /// Evaluates Σ amp·exp(2πi k·x) on the grid.
    pub fn from_modes(grid: &Grid, modes: &BTreeMap<Vec<i64>, C64>) -> Result<Self, SpectralError> {
        let dims = grid.res.len();
        let mut band = vec![0u32; dims];
        let mut spec = vec![C64::new(0.0, 0.0); grid.len()];
        for (k, amp) in modes {
            if k.len() != dims {
                return Err(SpectralError::InvalidGrid(format!("mode has {} axes, expected {dims}", k.len())));
            }
            let mut idx = 0;
            for (a, &ka) in k.iter().enumerate() {
                let m = grid.res[a];
                if 2 * ka.unsigned_abs() as usize >= m && ka != 0 {
                    return Err(SpectralError::AliasedMode { axis: a, mode: ka, res: m });
                }
                band[a] = band[a].max(ka.unsigned_abs() as u32);
                idx += (ka.rem_euclid(m as i64) as usize) * grid.strides[a];
            }
            spec[idx] += amp;
        }
        // The inverse FFT without normalisation sums amp·exp(+2πi k j / m).
        let mut f = Self { grid: grid.clone(), values: spec, band };
        for a in 0..dims {
            if grid.is_active(a) {
                let (_, inv) = grid.plans[a].as_ref().unwrap();
                let m = grid.res[a];
                let stride = grid.strides[a];
                let mut buf = vec![C64::new(0.0, 0.0); m];
                for chunk in f.values.chunks_mut(stride * m) {
                    for off in 0..stride {
                        for (k, b) in buf.iter_mut().enumerate() {
                            *b = chunk[off + k * stride];
                        }
                        inv.process(&mut buf);
                        for (k, b) in buf.iter().enumerate() {
                            chunk[off + k * stride] = *b;
                        }
                    }
                }
            }
        }
        Ok(f)
    }

    /// Nonzero Fourier amplitudes (|amp| > `cutoff`), keyed by signed multi-index.
    pub fn modes(&self, cutoff: f64) -> BTreeMap<Vec<i64>, C64> {
        let mut spec = self.values.clone();
        let g = &self.grid;
        for a in 0..g.res.len() {
            if g.is_active(a) {
                let (fwd, _) = g.plans[a].as_ref().unwrap();
                let m = g.res[a];
                let stride = g.strides[a];
                let mut buf = vec![C64::new(0.0, 0.0); m];
                for chunk in spec.chunks_mut(stride * m) {
                    for off in 0..stride {
                        for (k, b) in buf.iter_mut().enumerate() {
                            *b = chunk[off + k * stride];
                        }
                        fwd.process(&mut buf);
                        for (k, b) in buf.iter().enumerate() {
                            chunk[off + k * stride] = b / m as f64;
                        }
                    }
                }
            }
        }
        let mut out = BTreeMap::new();
        for (idx, v) in spec.iter().enumerate() {
            if v.norm() > cutoff {
                let pos = g.position(idx);
                let k: Option<Vec<i64>> =
                    pos.iter().zip(&g.res).map(|(&p, &m)| signed_freq(p, m)).collect();
                if let Some(k) = k {
                    out.insert(k, *v);
                }
            }
        }
        out
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn values(&self) -> &[C64] {
        &self.values
    }
    pub fn bandwidth(&self) -> &[u32] {
        &self.band
    }

    fn same_grid(&self, o: &Self) -> Result<(), SpectralError> {
        if Arc::ptr_eq(&self.grid, &o.grid) || *self.grid == *o.grid {
            Ok(())
        } else {
            Err(SpectralError::GridMismatch)
        }
    }

    fn product_band(&self, o: &Self) -> Result<Vec<u32>, SpectralError> {
        self.band
            .iter()
            .zip(&o.band)
            .zip(&self.grid.res)
            .enumerate()
            .map(|(axis, ((&a, &b), &m))| {
                let s = a + b;
                if 2 * s as usize >= m && s > 0 {
                    Err(SpectralError::AliasRisk { axis, needed: s, res: m })
                } else {
                    Ok(s)
                }
            })
            .collect()
    }

    pub fn multiply(&self, o: &Self) -> Result<Self, SpectralError> {
        let mut out = Self::zero(&self.grid);
        out.mul_acc(self, o, C64::new(1.0, 0.0))?;
        Ok(out)
    }

    /// `self += c · a · b`, widening `self`'s bandwidth to cover the product.
    pub fn mul_acc(&mut self, a: &Self, b: &Self, c: C64) -> Result<(), SpectralError> {
        a.same_grid(b)?;
        self.same_grid(a)?;
        let pb = a.product_band(b)?;
        for (s, p) in self.band.iter_mut().zip(pb) {
            *s = (*s).max(p);
        }
        let kernel = |(o, (x, y)): (&mut C64, (&C64, &C64))| *o += c * x * y;
        if self.values.len() >= PAR_THRESHOLD {
            self.values.par_iter_mut().zip(a.values.par_iter().zip(b.values.par_iter())).for_each(kernel);
        } else {
            self.values.iter_mut().zip(a.values.iter().zip(b.values.iter())).for_each(kernel);
        }
        Ok(())
    }

    /// `self += c · a`.
    pub fn axpy(&mut self, a: &Self, c: C64) -> Result<(), SpectralError> {
        self.same_grid(a)?;
        for (s, p) in self.band.iter_mut().zip(&a.band) {
            *s = (*s).max(*p);
        }
        for (o, x) in self.values.iter_mut().zip(&a.values) {
            *o += c * x;
        }
        Ok(())
    }

    pub fn add(&self, o: &Self) -> Result<Self, SpectralError> {
        let mut out = self.clone();
        out.axpy(o, C64::new(1.0, 0.0))?;
        Ok(out)
    }

    pub fn sub(&self, o: &Self) -> Result<Self, SpectralError> {
        let mut out = self.clone();
        out.axpy(o, C64::new(-1.0, 0.0))?;
        Ok(out)
    }

    pub fn scale(&self, c: C64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        out
    }

    pub fn scale_real(&self, c: f64) -> Self {
        self.scale(C64::new(c, 0.0))
    }

    pub fn conj(&self) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = v.conj());
        out
    }

    /// Drops the imaginary part of every sample.
    pub fn real_part(&self) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| v.im = 0.0);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn max_imag(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.im.abs()))
    }

    /// Grid mean, summed pairwise in a fixed order.
    pub fn mean(&self) -> C64 {
        pairwise_sum(&self.values) / self.values.len() as f64
    }

    /// Spectral derivative along one real axis.
    pub fn d_axis(&self, axis: usize) -> Self {
        if !self.grid.is_active(axis) || self.band[axis] == 0 {
            return Self { values: vec![C64::new(0.0, 0.0); self.grid.len()], ..self.clone() };
        }
        let mut out = self.clone();
        let two_pi = 2.0 * std::f64::consts::PI;
        self.grid.transform_axis(&mut out.values, axis, &|m, buf| {
            for (k, b) in buf.iter_mut().enumerate() {
                *b *= match signed_freq(k, m) {
                    Some(f) => C64::new(0.0, two_pi * f as f64),
                    None => C64::new(0.0, 0.0),
                };
            }
        });
        out
    }

    /// ∂f/∂z^j = ½(∂_x − i∂_y) f for the 0-based complex direction j.
    pub fn wirtinger_d(&self, j: usize) -> Self {
        self.wirtinger(j, -1.0)
    }

    /// ∂f/∂z̄^j = ½(∂_x + i∂_y) f.
    pub fn wirtinger_dbar(&self, j: usize) -> Self {
        self.wirtinger(j, 1.0)
    }

    fn wirtinger(&self, j: usize, s: f64) -> Self {
        let dx = self.d_axis(2 * j);
        let dy = self.d_axis(2 * j + 1);
        let mut out = dx.scale_real(0.5);
        out.axpy(&dy, C64::new(0.0, 0.5 * s)).expect("same grid");
        out
    }
}

/// Bidegree of a form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FormDegree {
    pub p: usize,
    pub q: usize,
}

/// Key of one component: bitmasks of the dz and dz̄ index sets.
pub type IndexKey = (u16, u16);

/// A (p,q)-form with sparse components; absent keys are zero.
#[derive(Clone, Debug)]
pub struct Form {
    grid: Grid,
    degree: FormDegree,
    comps: BTreeMap<IndexKey, ScalarField>,
}

fn bits(m: u16) -> impl Iterator<Item = usize> {
    (0..16).filter(move |i| m & (1 << i) != 0)
}

/// Parity of the permutation that sorts the concatenation of increasing sets `a` then `b`.
fn merge_parity(a: u16, b: u16) -> u32 {
    bits(b).map(|k| (a >> (k + 1)).count_ones()).sum::<u32>() & 1
}

fn sign_of(parity: u32) -> f64 {
    if parity & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

pub fn mask_of(indices: &[usize]) -> u16 {
    indices.iter().fold(0, |m, &i| m | (1 << i))
}

impl Form {
    pub fn zero(grid: &Grid, p: usize, q: usize) -> Self {
        Self { grid: grid.clone(), degree: FormDegree { p, q }, comps: BTreeMap::new() }
    }

    /// The (0,0)-form with the given coefficient.
    pub fn scalar(f: ScalarField) -> Self {
        let grid = f.grid.clone();
        let mut comps = BTreeMap::new();
        comps.insert((0, 0), f);
        Self { grid, degree: FormDegree { p: 0, q: 0 }, comps }
    }

    pub fn one(grid: &Grid) -> Self {
        Self::scalar(ScalarField::constant(grid, C64::new(1.0, 0.0)))
    }

    /// Form with a single component `f dz^I ∧ dz̄^J` (0-based indices, any order is sorted with sign).
    pub fn monomial(f: ScalarField, dz: &[usize], dzbar: &[usize]) -> Self {
        let grid = f.grid.clone();
        let mut out = Self::scalar(f);
        for &j in dz.iter().rev() {
            out = Self::generator(&grid, Some(j), None).wedge(&out).expect("same grid");
        }
        let mut tail = Self::one(&grid);
        for &j in dzbar {
            tail = tail.wedge(&Self::generator(&grid, None, Some(j))).expect("same grid");
        }
        out.wedge(&tail).expect("same grid")
    }

    fn generator(grid: &Grid, dz: Option<usize>, dzbar: Option<usize>) -> Self {
        let key = (dz.map_or(0, |j| 1 << j), dzbar.map_or(0, |j| 1 << j));
        let mut comps = BTreeMap::new();
        comps.insert(key, ScalarField::constant(grid, C64::new(1.0, 0.0)));
        Self {
            grid: grid.clone(),
            degree: FormDegree { p: dz.is_some() as usize, q: dzbar.is_some() as usize },
            comps,
        }
    }

    /// i Σ h_{jk} dz^j ∧ dz̄^k.
    pub fn from_hermitian(grid: &Grid, h: &[Vec<ScalarField>]) -> Self {
        let mut out = Self::zero(grid, 1, 1);
        for (j, row) in h.iter().enumerate() {
            for (k, f) in row.iter().enumerate() {
                out.comps.insert((1 << j, 1 << k), f.scale(C64::new(0.0, 1.0)));
            }
        }
        out
    }

    /// i Σ dz^j ∧ dz̄^j.
    pub fn flat_kaehler(grid: &Grid) -> Self {
        let n = grid.n;
        let h: Vec<Vec<ScalarField>> = (0..n)
            .map(|j| {
                (0..n)
                    .map(|k| ScalarField::constant(grid, C64::new((j == k) as u8 as f64, 0.0)))
                    .collect()
            })
            .collect();
        let mut out = Self::from_hermitian(grid, &h);
        out.comps.retain(|&(a, b), _| a == b);
        out
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn degree(&self) -> FormDegree {
        self.degree
    }
    pub fn components(&self) -> &BTreeMap<IndexKey, ScalarField> {
        &self.comps
    }
    pub fn component(&self, dz: &[usize], dzbar: &[usize]) -> Option<&ScalarField> {
        self.comps.get(&(mask_of(dz), mask_of(dzbar)))
    }

    fn check_grid(&self, o: &Self) -> Result<(), SpectralError> {
        if Arc::ptr_eq(&self.grid, &o.grid) || *self.grid == *o.grid {
            Ok(())
        } else {
            Err(SpectralError::GridMismatch)
        }
    }

    fn check_degree(&self, o: &Self) -> Result<(), SpectralError> {
        if self.degree != o.degree {
            return Err(SpectralError::WrongDegree {
                p: self.degree.p,
                q: self.degree.q,
                got_p: o.degree.p,
                got_q: o.degree.q,
            });
        }
        Ok(())
    }

    pub fn axpy(&mut self, o: &Self, c: C64) -> Result<(), SpectralError> {
        self.check_grid(o)?;
        self.check_degree(o)?;
        for (k, f) in &o.comps {
            match self.comps.get_mut(k) {
                Some(s) => s.axpy(f, c)?,
                None => {
                    self.comps.insert(*k, f.scale(c));
                }
            }
        }
        Ok(())
    }

    pub fn add(&self, o: &Self) -> Result<Self, SpectralError> {
        let mut out = self.clone();
        out.axpy(o, C64::new(1.0, 0.0))?;
        Ok(out)
    }

    pub fn sub(&self, o: &Self) -> Result<Self, SpectralError> {
        let mut out = self.clone();
        out.axpy(o, C64::new(-1.0, 0.0))?;
        Ok(out)
    }

    pub fn scale(&self, c: C64) -> Self {
        let mut out = self.clone();
        for f in out.comps.values_mut() {
            *f = f.scale(c);
        }
        out
    }

    pub fn scale_real(&self, c: f64) -> Self {
        self.scale(C64::new(c, 0.0))
    }

    /// Multiplies every component by the scalar field `f`.
    pub fn mul_field(&self, f: &ScalarField) -> Result<Self, SpectralError> {
        let mut out = self.clone();
        for c in out.comps.values_mut() {
            *c = c.multiply(f)?;
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.values().fold(0.0, |m, f| m.max(f.max_abs()))
    }

    /// Largest pointwise difference over all components.
    pub fn max_diff(&self, o: &Self) -> Result<f64, SpectralError> {
        Ok(self.sub(o)?.max_abs())
    }

    pub fn wedge(&self, o: &Self) -> Result<Self, SpectralError> {
        self.check_grid(o)?;
        let n = self.grid.n;
        let (p, q) = (self.degree.p + o.degree.p, self.degree.q + o.degree.q);
        if p > n || q > n {
            return Ok(Self::zero(&self.grid, p.min(n), q.min(n)));
        }
        let mut out = Self::zero(&self.grid, p, q);
        for (&(i, j), fa) in &self.comps {
            for (&(k, l), fb) in &o.comps {
                if i & k != 0 || j & l != 0 {
                    continue;
                }
                let cross = (j.count_ones() * k.count_ones()) & 1;
                let parity = cross ^ merge_parity(i, k) ^ merge_parity(j, l);
                let key = (i | k, j | l);
                let acc = out.comps.entry(key).or_insert_with(|| ScalarField::zero(&self.grid));
                acc.mul_acc(fa, fb, C64::new(sign_of(parity), 0.0))?;
            }
        }
        Ok(out)
    }

    /// ∂ of the form.
    pub fn del(&self) -> Self {
        self.dolbeault(false)
    }

    /// ∂̄ of the form.
    pub fn delbar(&self) -> Self {
        self.dolbeault(true)
    }

    fn dolbeault(&self, bar: bool) -> Self {
        let n = self.grid.n;
        let (p, q) = if bar { (self.degree.p, self.degree.q + 1) } else { (self.degree.p + 1, self.degree.q) };
        if p > n || q > n {
            return Self::zero(&self.grid, p.min(n), q.min(n));
        }
        let mut out = Self::zero(&self.grid, p, q);
        for (&(i, jset), f) in &self.comps {
            for d in 0..n {
                if !self.grid.direction_active(d) || (f.band[2 * d] == 0 && f.band[2 * d + 1] == 0) {
                    continue;
                }
                let target = if bar { jset } else { i };
                if target & (1 << d) != 0 {
                    continue;
                }
                let below = (target & ((1u16 << d) - 1)).count_ones();
                let parity = if bar { below + i.count_ones() } else { below };
                let g = if bar { f.wirtinger_dbar(d) } else { f.wirtinger_d(d) };
                let key = if bar { (i, jset | 1 << d) } else { (i | 1 << d, jset) };
                match out.comps.get_mut(&key) {
                    Some(acc) => acc.axpy(&g, C64::new(sign_of(parity), 0.0)).expect("same grid"),
                    None => {
                        out.comps.insert(key, g.scale_real(sign_of(parity)));
                    }
                }
            }
        }
        out
    }

    /// Complex conjugate: (I,J,f) ↦ (J,I,(−1)^{pq}·f̄).
    pub fn conjugate(&self) -> Self {
        let s = sign_of(((self.degree.p * self.degree.q) & 1) as u32);
        let comps = self.comps.iter().map(|(&(i, j), f)| ((j, i), f.conj().scale_real(s))).collect();
        Self { grid: self.grid.clone(), degree: FormDegree { p: self.degree.q, q: self.degree.p }, comps }
    }

    /// Integral of an (n,n)-form over the torus.
    pub fn integrate_top(&self) -> Result<C64, SpectralError> {
        let n = self.grid.n;
        if self.degree.p != n || self.degree.q != n {
            return Err(SpectralError::WrongDegree { p: n, q: n, got_p: self.degree.p, got_q: self.degree.q });
        }
        let full = ((1u32 << n) - 1) as u16;
        let mean = self.comps.get(&(full, full)).map_or(C64::new(0.0, 0.0), |f| f.mean());
        let orient = sign_of(((n * (n - 1) / 2) & 1) as u32);
        Ok(mean * orient * C64::new(0.0, -2.0).powu(n as u32))
    }

    /// h[j][k] = −i · component({j},{k}).
    pub fn hermitian_entries(&self) -> Result<Vec<Vec<ScalarField>>, SpectralError> {
        if self.degree.p != 1 || self.degree.q != 1 {
            return Err(SpectralError::WrongDegree { p: 1, q: 1, got_p: self.degree.p, got_q: self.degree.q });
        }
        let n = self.grid.n;
        Ok((0..n)
            .map(|j| {
                (0..n)
                    .map(|k| match self.comps.get(&(1 << j, 1 << k)) {
                        Some(f) => f.scale(C64::new(0.0, -1.0)),
                        None => ScalarField::zero(&self.grid),
                    })
                    .collect()
            })
            .collect())
    }

    /// Pointwise positive-definiteness of a real (1,1)-form via LDLᴴ pivots.
    pub fn is_positive(&self) -> Result<Positivity, SpectralError> {
        let h = self.hermitian_entries()?;
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let deviation = self.max_diff(&self.conjugate())?;
        if deviation > 1e-12 * scale {
            return Err(SpectralError::NonReal { deviation });
        }
        let n = self.grid.n;
        let len = self.grid.len();
        let min_pivot = (0..len)
            .into_par_iter()
            .map(|x| {
                let mut a: Vec<Vec<C64>> = (0..n).map(|j| (0..n).map(|k| h[j][k].values[x]).collect()).collect();
                let mut min = f64::INFINITY;
                for c in 0..n {
                    let d = a[c][c].re;
                    min = min.min(d);
                    if d <= 0.0 {
                        return min;
                    }
                    for r in c + 1..n {
                        let l = a[r][c] / d;
                        for s in c + 1..n {
                            let v = l * a[c][s];
                            a[r][s] -= v;
                        }
                    }
                }
                min
            })
            .reduce(|| f64::INFINITY, f64::min);
        Ok(Positivity { positive: min_pivot > 0.0, min_pivot })
    }

    /// Structured snapshot for debugging: degree, keys, and mode tables of each component.
    pub fn debug_dump(&self, cutoff: f64) -> FormDump {
        let components = self
            .comps
            .iter()
            .map(|(&(i, j), f)| ComponentDump {
                dz: bits(i).map(|b| b + 1).collect(),
                dzbar: bits(j).map(|b| b + 1).collect(),
                bandwidth: f.band.clone(),
                modes: f
                    .modes(cutoff)
                    .into_iter()
                    .map(|(k, a)| ModeEntry { k, re: a.re, im: a.im })
                    .collect(),
            })
            .collect();
        FormDump { n: self.grid.n, resolutions: self.grid.res.clone(), degree: self.degree, components }
    }
}

/// Result of a pointwise positivity scan.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Positivity {
    pub positive: bool,
    pub min_pivot: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ModeEntry {
    pub k: Vec<i64>,
    pub re: f64,
    pub im: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ComponentDump {
    pub dz: Vec<usize>,
    pub dzbar: Vec<usize>,
    pub bandwidth: Vec<u32>,
    pub modes: Vec<ModeEntry>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FormDump {
    pub n: usize,
    pub resolutions: Vec<usize>,
    pub degree: FormDegree,
    pub components: Vec<ComponentDump>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const PI: f64 = std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn grid2() -> Grid {
        GridSpec::new(2, vec![9, 9, 9, 1]).unwrap()
    }

    fn exp_x1(g: &Grid, sign: i64) -> ScalarField {
        let mut m = BTreeMap::new();
        let mut k = vec![0; 2 * g.n()];
        k[0] = sign;
        m.insert(k, c(1.0, 0.0));
        ScalarField::from_modes(g, &m).unwrap()
    }

    fn random_field(g: &Grid, rng: &mut ChaCha8Rng) -> ScalarField {
        let dims = g.resolutions().len();
        let mut modes = BTreeMap::new();
        let active: Vec<usize> = (0..dims).filter(|&a| g.is_active(a)).collect();
        let count = 3usize.pow(active.len() as u32);
        for code in 0..count {
            let mut k = vec![0i64; dims];
            let mut r = code;
            for &a in &active {
                k[a] = (r % 3) as i64 - 1;
                r /= 3;
            }
            modes.insert(k, c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        }
        ScalarField::from_modes(g, &modes).unwrap()
    }

    fn random_form(g: &Grid, p: usize, q: usize, rng: &mut ChaCha8Rng) -> Form {
        let n = g.n();
        let mut out = Form::zero(g, p, q);
        for i in 0..(1u16 << n) {
            for j in 0..(1u16 << n) {
                if i.count_ones() as usize == p && j.count_ones() as usize == q && rng.gen_bool(0.7) {
                    out.comps.insert((i, j), random_field(g, rng));
                }
            }
        }
        out
    }

    fn rel(a: f64, scale: f64) -> f64 {
        a / (1.0 + scale)
    }

    #[test]
    fn empty_and_constant_modes() {
        let g = grid2();
        let z = ScalarField::from_modes(&g, &BTreeMap::new()).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        let mut m = BTreeMap::new();
        m.insert(vec![0; 4], c(2.5, -1.0));
        let f = ScalarField::from_modes(&g, &m).unwrap();
        assert!(f.values().iter().all(|v| (v - c(2.5, -1.0)).norm() < 1e-14));
        assert_eq!(f.bandwidth(), &[0, 0, 0, 0]);
    }

    #[test]
    fn conjugate_pair_modes_give_real_field() {
        let g = grid2();
        let mut m = BTreeMap::new();
        m.insert(vec![1, -1, 0, 0], c(0.3, 0.7));
        m.insert(vec![-1, 1, 0, 0], c(0.3, -0.7));
        let f = ScalarField::from_modes(&g, &m).unwrap();
        assert!(f.max_imag() < 1e-15);
        assert!(f.max_abs() > 0.1);
    }

    #[test]
    fn aliased_modes_rejected() {
        let g = grid2();
        let mut m = BTreeMap::new();
        m.insert(vec![5, 0, 0, 0], c(1.0, 0.0));
        assert!(matches!(ScalarField::from_modes(&g, &m), Err(SpectralError::AliasedMode { .. })));
        let mut m = BTreeMap::new();
        m.insert(vec![0, 0, 0, 1], c(1.0, 0.0));
        assert!(ScalarField::from_modes(&g, &m).is_err());
    }

    #[test]
    fn modes_round_trip() {
        let g = grid2();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_field(&g, &mut rng);
        let back = ScalarField::from_modes(&g, &f.modes(1e-14)).unwrap();
        assert!(f.sub(&back).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn wirtinger_of_exponential() {
        let g = grid2();
        let f = exp_x1(&g, 1);
        let expect = f.scale(c(0.0, PI));
        assert!(f.wirtinger_d(0).sub(&expect).unwrap().max_abs() < 1e-12);
        assert!(f.wirtinger_dbar(0).sub(&expect).unwrap().max_abs() < 1e-12);
        assert_eq!(f.wirtinger_d(1).max_abs(), 0.0);
        let k = ScalarField::constant(&g, c(3.0, 1.0));
        assert_eq!(k.wirtinger_d(0).max_abs(), 0.0);
    }

    #[test]
    fn wirtinger_along_y_axis() {
        // f = exp(2πi y_1): ∂f/∂z = −i/2·2πi f = π f, ∂f/∂z̄ = −π f.
        let g = grid2();
        let mut m = BTreeMap::new();
        m.insert(vec![0, 1, 0, 0], c(1.0, 0.0));
        let f = ScalarField::from_modes(&g, &m).unwrap();
        assert!(f.wirtinger_d(0).sub(&f.scale_real(PI)).unwrap().max_abs() < 1e-12);
        assert!(f.wirtinger_dbar(0).sub(&f.scale_real(-PI)).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn multiply_contract() {
        let g = grid2();
        let prod = exp_x1(&g, 1).multiply(&exp_x1(&g, -1)).unwrap();
        assert!(prod.sub(&ScalarField::constant(&g, c(1.0, 0.0))).unwrap().max_abs() < 1e-14);
        let z = exp_x1(&g, 1).multiply(&ScalarField::zero(&g)).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        let coarse = GridSpec::new(2, vec![3, 3, 1, 1]).unwrap();
        let f = exp_x1(&coarse, 1);
        assert!(matches!(f.multiply(&f), Err(SpectralError::AliasRisk { axis: 0, .. })));
    }

    #[test]
    fn product_mean_matches_convolution() {
        let g = grid2();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (f, h) = (random_field(&g, &mut rng), random_field(&g, &mut rng));
        let (mf, mh) = (f.modes(0.0), h.modes(0.0));
        let mut conv = c(0.0, 0.0);
        for (k, a) in &mf {
            let neg: Vec<i64> = k.iter().map(|x| -x).collect();
            if let Some(b) = mh.get(&neg) {
                conv += a * b;
            }
        }
        let mean = f.multiply(&h).unwrap().mean();
        assert!((mean - conv).norm() < 1e-13);
    }

    #[test]
    fn wedge_signs_on_generators() {
        let g = grid2();
        let one = ScalarField::constant(&g, c(1.0, 0.0));
        let dz1 = Form::monomial(one.clone(), &[0], &[]);
        let dzb1 = Form::monomial(one.clone(), &[], &[0]);
        assert!(dz1.wedge(&dz1).unwrap().components().is_empty());
        let ab = dz1.wedge(&dzb1).unwrap();
        let ba = dzb1.wedge(&dz1).unwrap();
        assert!(ab.add(&ba).unwrap().max_abs() < 1e-15);
        assert_eq!(ab.component(&[0], &[0]).unwrap().values()[0], c(1.0, 0.0));
        let dz2 = Form::monomial(one.clone(), &[1], &[]);
        let m = dz2.wedge(&dz1).unwrap();
        assert_eq!(m.component(&[0, 1], &[]).unwrap().values()[0], c(-1.0, 0.0));
        let m = Form::monomial(one, &[1, 0], &[1, 0]);
        assert_eq!(m.component(&[0, 1], &[0, 1]).unwrap().values()[0], c(1.0, 0.0));
    }

    #[test]
    fn flat_volume_anchor() {
        for n in 2..=5 {
            let mut res = vec![1; 2 * n];
            res[0] = 3;
            let g = GridSpec::new(n, res).unwrap();
            let w = Form::flat_kaehler(&g);
            let mut p = Form::one(&g);
            for _ in 0..n {
                p = p.wedge(&w).unwrap();
            }
            let v = p.integrate_top().unwrap();
            let expect = 2f64.powi(n as i32) * (1..=n).product::<usize>() as f64;
            assert!((v - c(expect, 0.0)).norm() < 1e-12 * expect, "n={n} v={v}");
        }
        let g = grid2();
        assert_eq!(Form::zero(&g, 2, 2).integrate_top().unwrap(), c(0.0, 0.0));
        assert!(Form::zero(&g, 1, 2).integrate_top().is_err());
    }

    #[test]
    fn flat_form_is_real_and_positive() {
        let g = grid2();
        let w = Form::flat_kaehler(&g);
        assert!(w.max_diff(&w.conjugate()).unwrap() == 0.0);
        let pos = w.is_positive().unwrap();
        assert!(pos.positive);
        assert!((pos.min_pivot - 1.0).abs() < 1e-15);
        let h = w.hermitian_entries().unwrap();
        for (j, row) in h.iter().enumerate() {
            for (k, f) in row.iter().enumerate() {
                let e = if j == k { 1.0 } else { 0.0 };
                assert!(f.sub(&ScalarField::constant(&g, c(e, 0.0))).unwrap().max_abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rank_one_perturbation_breaks_positivity() {
        let g = grid2();
        // flat − 2·v vᴴ with |v| = 1 has eigenvalue −1 along v.
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let v = [c(s, 0.0), c(0.0, s)];
        let h: Vec<Vec<ScalarField>> = (0..2)
            .map(|j| {
                (0..2)
                    .map(|k| {
                        let e = if j == k { 1.0 } else { 0.0 };
                        ScalarField::constant(&g, c(e, 0.0) - 2.0 * v[j] * v[k].conj())
                    })
                    .collect()
            })
            .collect();
        let w = Form::from_hermitian(&g, &h);
        let back = w.hermitian_entries().unwrap();
        for j in 0..2 {
            for k in 0..2 {
                assert!(back[j][k].sub(&h[j][k]).unwrap().max_abs() < 1e-15);
            }
        }
        assert!(!w.is_positive().unwrap().positive);
    }

    #[test]
    fn non_hermitian_matrix_detected() {
        let g = grid2();
        let h: Vec<Vec<ScalarField>> = (0..2)
            .map(|j| (0..2).map(|k| ScalarField::constant(&g, c(1.0 + (j * 2 + k) as f64, 0.0))).collect())
            .collect();
        let w = Form::from_hermitian(&g, &h);
        assert!(w.max_diff(&w.conjugate()).unwrap() > 0.5);
        assert!(matches!(w.is_positive(), Err(SpectralError::NonReal { .. })));
    }

    fn full_grid(n: usize, m: usize) -> Grid {
        GridSpec::new(n, vec![m; 2 * n]).unwrap()
    }

    #[test]
    fn dolbeault_complex_identities() {
        let g = full_grid(2, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (p, q) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let a = random_form(&g, p, q, &mut rng);
            let s = a.max_abs() * 100.0;
            assert!(rel(a.del().del().max_abs(), s) < 1e-12);
            assert!(rel(a.delbar().delbar().max_abs(), s) < 1e-12);
            let anti = a.del().delbar().add(&a.delbar().del()).unwrap();
            assert!(rel(anti.max_abs(), s) < 1e-12);
            let lhs = a.del().conjugate();
            let rhs = a.conjugate().delbar();
            assert!(rel(lhs.max_diff(&rhs).unwrap(), s) < 1e-12);
        }
        let k = Form::flat_kaehler(&g);
        assert!(k.del().components().is_empty());
    }

    #[test]
    fn conjugation_is_an_involution() {
        let g = full_grid(2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_form(&g, 2, 1, &mut rng);
        assert!(a.conjugate().conjugate().max_diff(&a).unwrap() == 0.0);
        let top = random_form(&g, 2, 2, &mut rng);
        let lhs = top.conjugate().integrate_top().unwrap();
        let rhs = top.integrate_top().unwrap().conj();
        assert!((lhs - rhs).norm() < 1e-12 * (1.0 + rhs.norm()));
    }

    #[test]
    fn stokes_and_integration_by_parts() {
        let g = full_grid(2, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let beta = random_form(&g, 1, 2, &mut rng);
        assert!(beta.del().integrate_top().unwrap().norm() < 1e-12);
        let beta = random_form(&g, 2, 1, &mut rng);
        assert!(beta.delbar().integrate_top().unwrap().norm() < 1e-12);
        // ∫ α∧∂β = −(−1)^{|α|} ∫ ∂α∧β with |α|+|β| = 2n−1.
        for (ap, aq, bp, bq) in [(1, 1, 0, 1), (0, 1, 1, 1), (1, 0, 0, 2), (0, 2, 1, 0)] {
            let a = random_form(&g, ap, aq, &mut rng);
            let b = random_form(&g, bp, bq, &mut rng);
            let deg = (ap + aq) as i32;
            let lhs = a.wedge(&b.del()).unwrap().integrate_top().unwrap();
            let rhs = a.del().wedge(&b).unwrap().integrate_top().unwrap() * -(-1f64).powi(deg);
            assert!((lhs - rhs).norm() < 1e-12 * (1.0 + lhs.norm()), "{lhs} {rhs}");
        }
        for (ap, aq, bp, bq) in [(1, 1, 1, 0), (2, 0, 0, 1)] {
            let a = random_form(&g, ap, aq, &mut rng);
            let b = random_form(&g, bp, bq, &mut rng);
            let deg = (ap + aq) as i32;
            let lhs = a.wedge(&b.delbar()).unwrap().integrate_top().unwrap();
            let rhs = a.delbar().wedge(&b).unwrap().integrate_top().unwrap() * -(-1f64).powi(deg);
            assert!((lhs - rhs).norm() < 1e-12 * (1.0 + lhs.norm()), "{lhs} {rhs}");
        }
    }

    #[test]
    fn wedge_graded_commutativity_and_associativity() {
        let g = full_grid(3, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_form(&g, 1, 0, &mut rng);
        let b = random_form(&g, 1, 1, &mut rng);
        let cc = random_form(&g, 0, 1, &mut rng);
        let ab = a.wedge(&b).unwrap();
        let ba = b.wedge(&a).unwrap();
        assert!(ab.max_diff(&ba).unwrap() < 1e-12 * (1.0 + ab.max_abs()));
        let ac = a.wedge(&cc).unwrap();
        let ca = cc.wedge(&a).unwrap();
        assert!(ac.add(&ca).unwrap().max_abs() < 1e-12 * (1.0 + ac.max_abs()));
        let l = a.wedge(&b).unwrap().wedge(&cc).unwrap();
        let r = a.wedge(&b.wedge(&cc).unwrap()).unwrap();
        assert!(l.max_diff(&r).unwrap() < 1e-12 * (1.0 + l.max_abs()));
        let odd = random_form(&g, 2, 1, &mut rng);
        assert!(odd.wedge(&odd).unwrap().max_abs() < 1e-12 * (1.0 + odd.max_abs().powi(2)));
    }

    #[test]
    fn clamped_degree_when_overfull() {
        let g = grid2();
        let one = ScalarField::constant(&g, c(1.0, 0.0));
        let a = Form::monomial(one.clone(), &[0, 1], &[]);
        let b = Form::monomial(one, &[0], &[]);
        let w = a.wedge(&b).unwrap();
        assert_eq!(w.degree(), FormDegree { p: 2, q: 0 });
        assert!(w.components().is_empty());
        assert!(Form::zero(&g, 2, 2).del().components().is_empty());
    }

    #[test]
    fn grid_mismatch_reported() {
        let a = ScalarField::zero(&grid2());
        let b = ScalarField::zero(&full_grid(2, 5));
        assert_eq!(a.multiply(&b).unwrap_err(), SpectralError::GridMismatch);
    }

    #[test]
    fn debug_dump_lists_modes() {
        let g = grid2();
        let w = Form::flat_kaehler(&g).add(&Form::monomial(exp_x1(&g, 1), &[0], &[1])).unwrap();
        let dump = w.debug_dump(1e-12);
        assert_eq!(dump.components.len(), 3);
        let off = dump.components.iter().find(|c| c.dzbar == vec![2]).unwrap();
        assert_eq!(off.modes.len(), 1);
        assert_eq!(off.modes[0].k, vec![1, 0, 0, 0]);
        let text = serde_json::to_string(&dump).unwrap();
        assert!(text.contains("\"degree\""));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn anticommutation_of_one_forms(seed in 0u64..10_000) {
                let g = full_grid(2, 5);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random_form(&g, 1, 0, &mut rng);
                let b = random_form(&g, 0, 1, &mut rng);
                let s = a.wedge(&b).unwrap().add(&b.wedge(&a).unwrap()).unwrap();
                prop_assert!(s.max_abs() < 1e-12);
            }

            #[test]
            fn del_squares_to_zero(seed in 0u64..10_000, p in 0usize..2, q in 0usize..3) {
                let g = full_grid(2, 5);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random_form(&g, p, q, &mut rng);
                prop_assert!(a.del().del().max_abs() < 1e-11);
                prop_assert!(a.delbar().delbar().max_abs() < 1e-11);
            }
        }
    }
}

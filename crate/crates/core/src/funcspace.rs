//! Dense functions on `(F_p^n, μ^{⊗n})` and their decompositions.
//!
//! A [`DenseFunction`] is a full value table indexed by the little-endian
//! encoding of [`Cube`]. All transforms work coordinate by coordinate on
//! strided fibres, so a pass over the table costs `O(p · p^n)`.

use std::f64::consts::{E, TAU};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Cube;
use crate::rng::{stream_id, stream_rng};

/// Identities after `O(p^n)` accumulations.
pub const IDENTITY_TOL: f64 = 1e-9;
/// Pointwise algebra.
pub const POINTWISE_TOL: f64 = 1e-12;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Boolean,
    Real,
    Complex,
}

/// A single-coordinate distribution over `F_p` with no zero atoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    probs: Vec<f64>,
}

impl Measure {
    pub fn uniform(p: u32) -> Self {
        Self { probs: vec![1.0 / f64::from(p); p as usize] }
    }

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|&q| !(q > 0.0) || !q.is_finite()) {
            return Err(Error::InvalidParameter("measure atoms must be positive".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > POINTWISE_TOL {
            return Err(Error::InvalidParameter(format!("measure sums to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.probs.len() as f64;
        self.probs.iter().all(|&q| (q - u).abs() <= 1e-15)
    }

    /// Inverse-CDF draw from a uniform variate in `[0, 1)`.
    pub fn sample(&self, u: f64) -> u32 {
        let mut acc = 0.0;
        for (s, &q) in self.probs.iter().enumerate() {
            acc += q;
            if u < acc {
                return s as u32;
            }
        }
        (self.probs.len() - 1) as u32
    }

    /// Product weights `∏_i μ(x_i)` for every point of the cube.
    pub fn point_weights(&self, n: usize) -> Vec<f64> {
        let mut w = vec![1.0];
        for _ in 0..n {
            let mut next = Vec::with_capacity(w.len() * self.probs.len());
            for &q in &self.probs {
                next.extend(w.iter().map(|&x| x * q));
            }
            w = next;
        }
        w
    }
}

/// A function `F_p^n → C` stored as a full table.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseFunction {
    cube: Cube,
    kind: Kind,
    values: Vec<Complex64>,
    measure: Measure,
}

impl DenseFunction {
    pub fn new(cube: Cube, kind: Kind, values: Vec<Complex64>, measure: Measure) -> Result<Self> {
        if values.len() != cube.size() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a table of size {}",
                values.len(),
                cube.size()
            )));
        }
        if measure.len() != cube.p as usize {
            return Err(Error::ShapeMismatch(format!(
                "measure over {} letters for p = {}",
                measure.len(),
                cube.p
            )));
        }
        match kind {
            Kind::Boolean => {
                if values.iter().any(|v| v.im != 0.0 || (v.re != 0.0 && v.re != 1.0)) {
                    return Err(Error::InvalidParameter("boolean table holds a value outside {0,1}".into()));
                }
            }
            Kind::Real => {
                if values.iter().any(|v| v.im != 0.0) {
                    return Err(Error::InvalidParameter("real table holds a complex value".into()));
                }
            }
            Kind::Complex => {}
        }
        Ok(Self { cube, kind, values, measure })
    }

    pub fn from_bools(cube: Cube, bits: &[bool]) -> Result<Self> {
        let values = bits.iter().map(|&b| Complex64::new(if b { 1.0 } else { 0.0 }, 0.0)).collect();
        Self::new(cube, Kind::Boolean, values, Measure::uniform(cube.p))
    }

    pub fn from_real(cube: Cube, values: Vec<f64>) -> Result<Self> {
        let values = values.into_iter().map(|v| Complex64::new(v, 0.0)).collect();
        Self::new(cube, Kind::Real, values, Measure::uniform(cube.p))
    }

    pub fn from_complex(cube: Cube, values: Vec<Complex64>) -> Result<Self> {
        Self::new(cube, Kind::Complex, values, Measure::uniform(cube.p))
    }

    pub fn boolean_from_fn(cube: Cube, f: impl Fn(&[u32]) -> bool) -> Self {
        let bits = table_from_fn(cube, |x| f(x));
        Self::from_bools(cube, &bits).expect("shape is consistent")
    }

    pub fn real_from_fn(cube: Cube, f: impl Fn(&[u32]) -> f64) -> Self {
        Self::from_real(cube, table_from_fn(cube, f)).expect("shape is consistent")
    }

    pub fn complex_from_fn(cube: Cube, f: impl Fn(&[u32]) -> Complex64) -> Self {
        Self::from_complex(cube, table_from_fn(cube, f)).expect("shape is consistent")
    }

    pub fn constant(cube: Cube, value: f64) -> Self {
        Self::from_real(cube, vec![value; cube.size()]).expect("shape is consistent")
    }

    /// `χ_α(x) = ω^{α·x}` with `ω = e^{2πi/p}`.
    pub fn character(cube: Cube, alpha: &[u32]) -> Result<Self> {
        if alpha.len() != cube.n || alpha.iter().any(|&a| a >= cube.p) {
            return Err(Error::ShapeMismatch("frequency does not match the cube".into()));
        }
        let p = u64::from(cube.p);
        Ok(Self::complex_from_fn(cube, |x| {
            let dot: u64 = x.iter().zip(alpha).map(|(&a, &b)| u64::from(a) * u64::from(b)).sum();
            Complex64::from_polar(1.0, TAU * (dot % p) as f64 / p as f64)
        }))
    }

    pub fn with_measure(mut self, measure: Measure) -> Result<Self> {
        if measure.len() != self.cube.p as usize {
            return Err(Error::ShapeMismatch("measure alphabet differs from p".into()));
        }
        self.measure = measure;
        Ok(self)
    }

    pub fn cube(&self) -> Cube {
        self.cube
    }

    pub fn p(&self) -> u32 {
        self.cube.p
    }

    pub fn n(&self) -> usize {
        self.cube.n
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn measure(&self) -> &Measure {
        &self.measure
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn value(&self, index: usize) -> Complex64 {
        self.values[index]
    }

    pub fn at(&self, coords: &[u32]) -> Complex64 {
        self.values[self.cube.encode(coords)]
    }

    pub fn is_boolean(&self) -> bool {
        self.kind == Kind::Boolean
    }

    pub fn to_bools(&self) -> Option<Vec<bool>> {
        self.is_boolean().then(|| self.values.iter().map(|v| v.re == 1.0).collect())
    }

    /// Number of ones of a boolean table.
    pub fn support_size(&self) -> usize {
        self.values.iter().filter(|v| v.re != 0.0 || v.im != 0.0).count()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn is_one_bounded(&self) -> bool {
        self.max_abs() <= 1.0 + POINTWISE_TOL
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.cube != other.cube {
            return Err(Error::ShapeMismatch(format!(
                "F_{}^{} against F_{}^{}",
                self.cube.p, self.cube.n, other.cube.p, other.cube.n
            )));
        }
        if self.measure != other.measure {
            return Err(Error::ShapeMismatch("functions carry different measures".into()));
        }
        Ok(())
    }

    /// `E_{x∼μ^{⊗n}}` of an arbitrary table over this function's cube.
    pub fn expect_table(&self, table: &[Complex64]) -> Complex64 {
        expect(self.cube, &self.measure, table)
    }

    pub fn mean(&self) -> Complex64 {
        self.expect_table(&self.values)
    }

    /// `E|f|^2`.
    pub fn norm_sq(&self) -> f64 {
        let sq: Vec<Complex64> = self.values.iter().map(|v| Complex64::new(v.norm_sqr(), 0.0)).collect();
        self.expect_table(&sq).re
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `⟨f, g⟩ = E[f · conj(g)]`.
    pub fn inner(&self, other: &Self) -> Result<Complex64> {
        self.same_shape(other)?;
        let prod: Vec<Complex64> =
            self.values.iter().zip(&other.values).map(|(a, b)| a * b.conj()).collect();
        Ok(self.expect_table(&prod))
    }

    fn derived(&self, values: Vec<Complex64>) -> Self {
        let kind = if values.iter().all(|v| v.im == 0.0) {
            if self.kind == Kind::Boolean && values.iter().all(|v| v.re == 0.0 || v.re == 1.0) {
                Kind::Boolean
            } else {
                Kind::Real
            }
        } else {
            Kind::Complex
        };
        Self { cube: self.cube, kind, values, measure: self.measure.clone() }
    }

    /// Pointwise map; the result kind is inferred from the output values.
    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        let values = self.values.iter().map(|&v| f(v)).collect();
        let mut out = self.derived(values);
        if out.kind == Kind::Boolean && self.kind != Kind::Boolean {
            out.kind = Kind::Real;
        }
        out
    }

    /// `f - c`, always of real or complex kind.
    pub fn minus_constant(&self, c: Complex64) -> Self {
        let values = self.values.iter().map(|&v| v - c).collect();
        let mut out = self.derived(values);
        if out.kind == Kind::Boolean {
            out.kind = Kind::Real;
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        let mut out = self.derived(values);
        if out.kind == Kind::Boolean {
            out.kind = Kind::Real;
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        let mut out = self.derived(values);
        if out.kind == Kind::Boolean {
            out.kind = Kind::Real;
        }
        Ok(out)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        Ok(self.derived(values))
    }

    pub fn conj(&self) -> Self {
        self.derived(self.values.iter().map(|v| v.conj()).collect())
    }

    /// Largest pointwise distance to another table of the same shape.
    pub fn max_distance(&self, other: &Self) -> Result<f64> {
        if self.cube != other.cube {
            return Err(Error::ShapeMismatch("cubes differ".into()));
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max))
    }

    pub(crate) fn from_parts_unchecked(cube: Cube, kind: Kind, values: Vec<Complex64>, measure: Measure) -> Self {
        debug_assert_eq!(values.len(), cube.size());
        Self { cube, kind, values, measure }
    }
}

fn table_from_fn<T>(cube: Cube, f: impl Fn(&[u32]) -> T) -> Vec<T> {
    let mut coords = vec![0u32; cube.n];
    let mut out = Vec::with_capacity(cube.size());
    for _ in 0..cube.size() {
        out.push(f(&coords));
        odometer_step(&mut coords, cube.p);
    }
    out
}

/// Advances little-endian digits by one; returns the number of digits that changed.
pub(crate) fn odometer_step(digits: &mut [u32], radix: u32) -> usize {
    for (i, d) in digits.iter_mut().enumerate() {
        *d += 1;
        if *d < radix {
            return i + 1;
        }
        *d = 0;
    }
    digits.len()
}

pub(crate) fn expect(cube: Cube, measure: &Measure, table: &[Complex64]) -> Complex64 {
    if measure.is_uniform() {
        let total: Complex64 = table.iter().sum();
        total / cube.size() as f64
    } else {
        measure
            .point_weights(cube.n)
            .iter()
            .zip(table)
            .map(|(&w, v)| v * w)
            .sum()
    }
}

/// Calls `visit(offset, stride)` for the first element of every fibre along
/// coordinate `i`; the fibre is `offset + s * stride` for `s ∈ [0, p)`.
pub(crate) fn for_each_fibre(cube: Cube, i: usize, mut visit: impl FnMut(usize, usize)) {
    let stride = cube.stride(i);
    let block = stride * cube.p as usize;
    for base in (0..cube.size()).step_by(block.max(1)) {
        for off in 0..stride {
            visit(base + off, stride);
        }
    }
}

/// Replaces each fibre along `i` by its `μ`-average.
fn average_along(values: &mut [Complex64], cube: Cube, i: usize, probs: &[f64]) {
    let p = cube.p as usize;
    for_each_fibre(cube, i, |off, stride| {
        let m: Complex64 = (0..p).map(|s| values[off + s * stride] * probs[s]).sum();
        for s in 0..p {
            values[off + s * stride] = m;
        }
    });
}

/// Subtracts the `μ`-average of each fibre along `i`.
fn residual_along(values: &mut [Complex64], cube: Cube, i: usize, probs: &[f64]) {
    let p = cube.p as usize;
    for_each_fibre(cube, i, |off, stride| {
        let m: Complex64 = (0..p).map(|s| values[off + s * stride] * probs[s]).sum();
        for s in 0..p {
            values[off + s * stride] -= m;
        }
    });
}

/// Averages out coordinate `i`; the result lives on `F_p^{n-1}` with the
/// remaining coordinates in their original order.
fn marginalize(values: &[Complex64], cube: Cube, i: usize, probs: &[f64]) -> Vec<Complex64> {
    let p = cube.p as usize;
    let mut out = Vec::with_capacity(values.len() / p);
    let stride = cube.stride(i);
    let block = stride * p;
    for base in (0..values.len()).step_by(block) {
        for off in 0..stride {
            out.push((0..p).map(|s| values[base + off + s * stride] * probs[s]).sum());
        }
    }
    out
}

fn normalize_subset(n: usize, subset: &[usize]) -> Result<Vec<usize>> {
    let mut s = subset.to_vec();
    s.sort_unstable();
    s.dedup();
    if let Some(&i) = s.iter().find(|&&i| i >= n) {
        return Err(Error::OutOfRange { value: i as u64, bound: n as u64 });
    }
    Ok(s)
}

/// `f^{=S}` together with its index set.
#[derive(Clone, Debug, PartialEq)]
pub struct EfronSteinPart {
    pub subset: Vec<usize>,
    pub part: DenseFunction,
}

/// `f^{=S} = ∏_{i∈S}(I − E_i) ∏_{i∉S} E_i f`.
///
/// Expanding the product of commuting projections gives the inclusion–exclusion
/// sum `Σ_{T⊆S} (−1)^{|S∖T|} E_{⊆T} f`; evaluating it factor by factor costs
/// `O(n · p^n)` instead of `O(2^{|S|} · n · p^n)`.
pub fn efron_stein_part(f: &DenseFunction, subset: &[usize]) -> Result<EfronSteinPart> {
    let subset = normalize_subset(f.n(), subset)?;
    let mut values = f.values.clone();
    let probs = f.measure.probs().to_vec();
    let mut in_s = vec![false; f.n()];
    for &i in &subset {
        in_s[i] = true;
    }
    for (i, &inside) in in_s.iter().enumerate() {
        if inside {
            residual_along(&mut values, f.cube, i, &probs);
        } else {
            average_along(&mut values, f.cube, i, &probs);
        }
    }
    let kind = if f.kind == Kind::Complex { Kind::Complex } else { Kind::Real };
    let part = DenseFunction::from_parts_unchecked(f.cube, kind, values, f.measure.clone());
    Ok(EfronSteinPart { subset, part })
}

/// Members of the subset encoded by a bitmask.
pub fn mask_to_subset(mask: u64, n: usize) -> Vec<usize> {
    (0..n).filter(|&i| mask >> i & 1 == 1).collect()
}

fn dft_along(values: &mut [Complex64], cube: Cube, i: usize, inverse: bool) {
    let p = cube.p as usize;
    let sign = if inverse { 1.0 } else { -1.0 };
    let roots: Vec<Complex64> =
        (0..p).map(|k| Complex64::from_polar(1.0, sign * TAU * k as f64 / p as f64)).collect();
    let scale = if inverse { 1.0 } else { 1.0 / p as f64 };
    let mut buf = vec![ZERO; p];
    let mut out = vec![ZERO; p];
    for_each_fibre(cube, i, |off, stride| {
        for s in 0..p {
            buf[s] = values[off + s * stride];
        }
        for (a, o) in out.iter_mut().enumerate() {
            let mut acc = ZERO;
            for (x, &b) in buf.iter().enumerate() {
                acc += b * roots[(a * x) % p];
            }
            *o = acc * scale;
        }
        for s in 0..p {
            values[off + s * stride] = out[s];
        }
    });
}

/// `f̂(α) = E_x[f(x) · conj(ω^{α·x})]`, indexed by the encoding of `α`.
pub fn fourier_transform(f: &DenseFunction) -> Result<Vec<Complex64>> {
    if !f.measure.is_uniform() {
        return Err(Error::Precondition("Fourier transform requires the uniform measure".into()));
    }
    let mut values = f.values.clone();
    for i in 0..f.n() {
        dft_along(&mut values, f.cube, i, false);
    }
    Ok(values)
}

/// `f(x) = Σ_α f̂(α) ω^{α·x}`.
pub fn inverse_fourier_transform(cube: Cube, coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
    if coeffs.len() != cube.size() {
        return Err(Error::ShapeMismatch("coefficient table has the wrong length".into()));
    }
    let mut values = coeffs.to_vec();
    for i in 0..cube.n {
        dft_along(&mut values, cube, i, true);
    }
    Ok(values)
}

/// Number of non-zero base-`p` digits of an index.
pub fn support_size_of_index(mut index: usize, p: u32, n: usize) -> usize {
    let mut count = 0;
    for _ in 0..n {
        if !index.is_multiple_of(p as usize) {
            count += 1;
        }
        index /= p as usize;
    }
    count
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelMode {
    Exact,
    AtMost,
}

/// `[W_{=0}[f], ..., W_{=n}[f]]`. Uses Fourier grouping under the uniform
/// measure and Efron–Stein parts otherwise.
pub fn level_weights(f: &DenseFunction) -> Result<Vec<f64>> {
    if f.measure.is_uniform() {
        level_weights_by_fourier(f)
    } else {
        level_weights_by_parts(f)
    }
}

pub fn level_weights_by_fourier(f: &DenseFunction) -> Result<Vec<f64>> {
    let coeffs = fourier_transform(f)?;
    let mut levels = vec![0.0; f.n() + 1];
    for (idx, c) in coeffs.iter().enumerate() {
        levels[support_size_of_index(idx, f.p(), f.n())] += c.norm_sqr();
    }
    Ok(levels)
}

/// Sums `‖f^{=S}‖²` over all `2^n` subsets, one part at a time.
pub fn level_weights_by_parts(f: &DenseFunction) -> Result<Vec<f64>> {
    if f.n() > 24 {
        return Err(Error::InvalidParameter("subset enumeration capped at n = 24".into()));
    }
    let mut levels = vec![0.0; f.n() + 1];
    for mask in 0u64..(1u64 << f.n()) {
        let subset = mask_to_subset(mask, f.n());
        let part = efron_stein_part(f, &subset)?;
        levels[subset.len()] += part.part.norm_sq();
    }
    Ok(levels)
}

pub fn level_weight(f: &DenseFunction, d: usize, mode: LevelMode) -> Result<f64> {
    if d > f.n() {
        return Err(Error::OutOfRange { value: d as u64, bound: f.n() as u64 + 1 });
    }
    let levels = level_weights(f)?;
    Ok(match mode {
        LevelMode::Exact => levels[d],
        LevelMode::AtMost => levels[..=d].iter().sum(),
    })
}

/// `W_{≤d}[f − E f]`: the low-level weight above level zero.
pub fn centered_low_weight(f: &DenseFunction, d: usize) -> Result<f64> {
    let levels = level_weights(f)?;
    let d = d.min(f.n());
    Ok(levels[1..=d].iter().sum())
}

/// A partial assignment: `None` marks a live coordinate.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Restriction {
    slots: Vec<Option<u32>>,
}

impl Restriction {
    pub fn new(slots: Vec<Option<u32>>) -> Self {
        Self { slots }
    }

    pub fn identity(n: usize) -> Self {
        Self { slots: vec![None; n] }
    }

    /// Builds a restriction from its live set and fixed assignment, which must
    /// partition `[n]`.
    pub fn from_parts(n: usize, alive: &[usize], fixed: &[(usize, u32)]) -> Result<Self> {
        let mut slots: Vec<Option<Option<u32>>> = vec![None; n];
        for &i in alive {
            if i >= n || slots[i].is_some() {
                return Err(Error::InvalidParameter(format!("coordinate {i} listed twice or out of range")));
            }
            slots[i] = Some(None);
        }
        for &(i, v) in fixed {
            if i >= n || slots[i].is_some() {
                return Err(Error::InvalidParameter(format!("coordinate {i} listed twice or out of range")));
            }
            slots[i] = Some(Some(v));
        }
        let slots = slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| Error::InvalidParameter(format!("coordinate {i} is neither alive nor fixed"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { slots })
    }

    pub fn n(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[Option<u32>] {
        &self.slots
    }

    pub fn alive(&self) -> Vec<usize> {
        (0..self.slots.len()).filter(|&i| self.slots[i].is_none()).collect()
    }

    pub fn alive_count(&self) -> usize {
        self.slots.iter().filter(|s| s.is_none()).count()
    }

    pub fn fixed(&self) -> Vec<(usize, u32)> {
        self.slots.iter().enumerate().filter_map(|(i, s)| s.map(|v| (i, v))).collect()
    }

    fn check(&self, cube: Cube) -> Result<()> {
        if self.slots.len() != cube.n {
            return Err(Error::ShapeMismatch(format!(
                "restriction on {} coordinates applied to n = {}",
                self.slots.len(),
                cube.n
            )));
        }
        if let Some(v) = self.slots.iter().flatten().find(|&&v| v >= cube.p) {
            return Err(Error::OutOfRange { value: u64::from(*v), bound: u64::from(cube.p) });
        }
        Ok(())
    }

    /// Source indices of the restricted cube, in the order of its encoding.
    pub(crate) fn source_indices(&self, cube: Cube) -> Vec<usize> {
        let alive = self.alive();
        let base: usize = self
            .slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|v| v as usize * cube.stride(i)))
            .sum();
        let strides: Vec<usize> = alive.iter().map(|&i| cube.stride(i)).collect();
        let size = (cube.p as usize).pow(alive.len() as u32);
        let mut digits = vec![0u32; alive.len()];
        let mut idx = base;
        let mut out = Vec::with_capacity(size);
        for _ in 0..size {
            out.push(idx);
            // Incremental update: a digit wrapping to zero subtracts (p-1) strides.
            for (k, d) in digits.iter_mut().enumerate() {
                if *d + 1 < cube.p {
                    *d += 1;
                    idx += strides[k];
                    break;
                }
                idx -= (cube.p as usize - 1) * strides[k];
                *d = 0;
            }
        }
        out
    }
}

/// `f_{Ī→y}` as a function on `Σ^I`, live coordinates in increasing order.
pub fn restrict(f: &DenseFunction, r: &Restriction) -> Result<DenseFunction> {
    r.check(f.cube)?;
    let cube = Cube { p: f.p(), n: r.alive_count() };
    let values = r.source_indices(f.cube).into_iter().map(|i| f.values[i]).collect();
    Ok(DenseFunction::from_parts_unchecked(cube, f.kind, values, f.measure.clone()))
}

/// `E[f_{Ī→y}]` without materializing the restriction.
pub fn restricted_mean(f: &DenseFunction, r: &Restriction) -> Result<Complex64> {
    r.check(f.cube)?;
    let cube = Cube { p: f.p(), n: r.alive_count() };
    let idx = r.source_indices(f.cube);
    if f.measure.is_uniform() {
        let total: Complex64 = idx.iter().map(|&i| f.values[i]).sum();
        Ok(total / cube.size() as f64)
    } else {
        let w = f.measure.point_weights(cube.n);
        Ok(idx.iter().zip(&w).map(|(&i, &q)| f.values[i] * q).sum())
    }
}

/// Keeps each coordinate with probability `keep_prob` and draws fixed values
/// from `measure`; the draw depends only on `(seed, stream)`.
pub fn sample_random_restriction(
    n: usize,
    keep_prob: f64,
    measure: &Measure,
    seed: u64,
    stream: u64,
) -> Result<Restriction> {
    if !(keep_prob > 0.0 && keep_prob < 1.0) {
        return Err(Error::InvalidParameter(format!("keep probability {keep_prob} not in (0,1)")));
    }
    let mut rng = stream_rng(seed, stream);
    let slots = (0..n)
        .map(|_| {
            let keep = rng.gen::<f64>() < keep_prob;
            let u = rng.gen::<f64>();
            if keep {
                None
            } else {
                Some(measure.sample(u))
            }
        })
        .collect();
    Ok(Restriction { slots })
}

/// Means of every restriction `(I, y)` at once.
///
/// Each coordinate gets the extra letter `p` meaning "alive", so the table
/// has `(p+1)^n` entries indexed little-endian in base `p+1`.
#[derive(Clone, Debug)]
pub struct RestrictionTable {
    pub p: u32,
    pub n: usize,
    pub means: Vec<Complex64>,
}

impl RestrictionTable {
    pub fn build(f: &DenseFunction) -> Self {
        let p = f.p() as usize;
        let n = f.n();
        let probs = f.measure.probs();
        let mut table = f.values.clone();
        // coordinates < i already use radix p+1
        for i in 0..n {
            let inner: usize = (p + 1).pow(i as u32);
            let outer: usize = p.pow((n - i - 1) as u32);
            let mut next = Vec::with_capacity(inner * (p + 1) * outer);
            for o in 0..outer {
                let base = o * inner * p;
                let mut block = vec![ZERO; inner * (p + 1)];
                for s in 0..p {
                    for j in 0..inner {
                        let v = table[base + s * inner + j];
                        block[s * inner + j] = v;
                        block[p * inner + j] += v * probs[s];
                    }
                }
                next.extend(block);
            }
            table = next;
        }
        Self { p: f.p(), n, means: table }
    }

    pub fn restriction(&self, index: usize) -> Restriction {
        let radix = self.p as usize + 1;
        let mut idx = index;
        let slots = (0..self.n)
            .map(|_| {
                let d = idx % radix;
                idx /= radix;
                (d < self.p as usize).then_some(d as u32)
            })
            .collect();
        Restriction { slots }
    }

    /// Calls `visit(index, alive_count, probability, mean)` where the
    /// probability is that of `(I, y)` when each coordinate is kept with
    /// probability `keep_prob` and fixed values follow `measure`.
    pub fn for_each(&self, keep_prob: f64, measure: &Measure, mut visit: impl FnMut(usize, usize, f64, Complex64)) {
        let radix = self.p + 1;
        let mut digits = vec![0u32; self.n];
        let probs = measure.probs();
        for (index, &mean) in self.means.iter().enumerate() {
            let mut prob = 1.0;
            let mut alive = 0;
            for &d in &digits {
                if d == self.p {
                    prob *= keep_prob;
                    alive += 1;
                } else {
                    prob *= (1.0 - keep_prob) * probs[d as usize];
                }
            }
            visit(index, alive, prob, mean);
            odometer_step(&mut digits, radix);
        }
    }
}

/// `E_{I,y}[|E f_{Ī→y}|^2]` by exhaustive enumeration of `(I, y)`.
pub fn restriction_second_moment(f: &DenseFunction, keep_prob: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&keep_prob) {
        return Err(Error::InvalidParameter(format!("keep probability {keep_prob}")));
    }
    let table = RestrictionTable::build(f);
    let mut acc = 0.0;
    table.for_each(keep_prob, &f.measure, |_, _, prob, mean| acc += prob * mean.norm_sqr());
    Ok(acc)
}

/// `Σ_S ‖f^{=S}‖² (1 − q)^{|S|}`: the same moment through level weights.
pub fn restriction_second_moment_by_levels(f: &DenseFunction, keep_prob: f64) -> Result<f64> {
    let levels = level_weights(f)?;
    Ok(levels
        .iter()
        .enumerate()
        .map(|(d, w)| w * (1.0 - keep_prob).powi(d as i32))
        .sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BumpOutcome {
    Found,
    NotFound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpSearch {
    pub outcome: BumpOutcome,
    /// Best restriction seen among those keeping enough coordinates.
    pub restriction: Option<Restriction>,
    pub best_mean: f64,
    pub alpha: f64,
    pub target: f64,
    pub low_weight: f64,
    pub min_alive: usize,
    pub exhaustive: bool,
    pub examined: u64,
}

impl BumpSearch {
    pub fn found(&self) -> bool {
        self.outcome == BumpOutcome::Found
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpSearchOptions {
    pub seed: u64,
    pub samples: u32,
    /// Exhaustive enumeration runs when `(p+1)^n` is at most this.
    pub exhaustive_limit: usize,
}

impl Default for BumpSearchOptions {
    fn default() -> Self {
        Self { seed: 0, samples: 2000, exhaustive_limit: 1 << 22 }
    }
}

const STREAM_BUMP: u32 = 0x0B0B;
const STREAM_EVENT: u32 = 0x0E0E;

/// Looks for `(I, y)` with `|I| ≥ n/(2d)` and `E[f_{Ī→y}] ≥ E[f] + ξ/(4e)`.
///
/// The hypothesis `W_{≤d}[f − E f] ≥ ξ` is checked. Small instances are
/// searched exhaustively; otherwise live sets are sampled with keep
/// probability `1/d` and, for each, the densest fibre is taken.
pub fn restriction_bump_search(
    f: &DenseFunction,
    d: usize,
    xi: f64,
    opts: &BumpSearchOptions,
) -> Result<BumpSearch> {
    if !f.is_boolean() {
        return Err(Error::Precondition("bump search needs a boolean function".into()));
    }
    let n = f.n();
    if d == 0 || d > n {
        return Err(Error::OutOfRange { value: d as u64, bound: n as u64 + 1 });
    }
    if !(xi > 0.0) {
        return Err(Error::Precondition(format!("ξ = {xi} must be positive")));
    }
    let low_weight = centered_low_weight(f, d)?;
    if low_weight + POINTWISE_TOL < xi {
        return Err(Error::Precondition(format!("W_≤{d}[f − E f] = {low_weight} < ξ = {xi}")));
    }
    let alpha = f.mean().re;
    let target = alpha + xi / (4.0 * E);
    let min_alive = n.div_ceil(2 * d);

    let ext_size = (f.p() as usize + 1).checked_pow(n as u32);
    let mut best: Option<(f64, Restriction)> = None;
    let mut examined = 0u64;
    let exhaustive = matches!(ext_size, Some(s) if s <= opts.exhaustive_limit);
    if exhaustive {
        let table = RestrictionTable::build(f);
        let mut best_idx = None;
        let mut best_val = f64::NEG_INFINITY;
        let radix = f.p() as usize + 1;
        for (idx, mean) in table.means.iter().enumerate() {
            let alive = alive_digits(idx, radix, n);
            if alive < min_alive {
                continue;
            }
            examined += 1;
            if mean.re > best_val {
                best_val = mean.re;
                best_idx = Some(idx);
            }
        }
        best = best_idx.map(|i| (best_val, table.restriction(i)));
    } else {
        for k in 0..opts.samples {
            let r = if d == 1 {
                Restriction::identity(n)
            } else {
                sample_random_restriction(n, 1.0 / d as f64, &f.measure, opts.seed, stream_id(STREAM_BUMP, k))?
            };
            let alive = r.alive();
            if alive.len() < min_alive {
                continue;
            }
            let (value, restriction) = densest_fibre(f, &alive);
            examined += 1;
            if best.as_ref().is_none_or(|(v, _)| value > *v) {
                best = Some((value, restriction));
            }
        }
    }
    let (best_mean, restriction) = match best {
        Some((v, r)) => (v, Some(r)),
        None => (f64::NEG_INFINITY, None),
    };
    let outcome = if best_mean >= target - POINTWISE_TOL { BumpOutcome::Found } else { BumpOutcome::NotFound };
    Ok(BumpSearch {
        outcome,
        restriction,
        best_mean,
        alpha,
        target,
        low_weight,
        min_alive,
        exhaustive,
        examined,
    })
}

fn alive_digits(mut idx: usize, radix: usize, n: usize) -> usize {
    let mut alive = 0;
    for _ in 0..n {
        if idx % radix == radix - 1 {
            alive += 1;
        }
        idx /= radix;
    }
    alive
}

/// Means of `f_{Ī→y}` for every `y`, where `alive` is the live set `I`.
/// The output is indexed by the encoding of `y` over the fixed coordinates
/// in increasing order.
pub fn fibre_means(f: &DenseFunction, alive: &[usize]) -> Vec<Complex64> {
    let mut alive = alive.to_vec();
    alive.sort_unstable();
    alive.dedup();
    let probs = f.measure.probs().to_vec();
    let mut values = f.values.clone();
    let mut n = f.n();
    for &i in alive.iter().rev() {
        values = marginalize(&values, Cube { p: f.p(), n }, i, &probs);
        n -= 1;
    }
    values
}

/// The densest fibre for a given live set; ties go to the lowest `y`.
pub fn densest_fibre(f: &DenseFunction, alive: &[usize]) -> (f64, Restriction) {
    let means = fibre_means(f, alive);
    let (best_idx, best_val) = means
        .iter()
        .enumerate()
        .fold((0usize, f64::NEG_INFINITY), |acc, (i, m)| if m.re > acc.1 { (i, m.re) } else { acc });
    let fixed_coords: Vec<usize> = (0..f.n()).filter(|i| !alive.contains(i)).collect();
    let y = Cube { p: f.p(), n: fixed_coords.len() }.decode(best_idx);
    let fixed: Vec<(usize, u32)> = fixed_coords.into_iter().zip(y).collect();
    let restriction = Restriction::from_parts(f.n(), alive, &fixed).expect("live and fixed sets partition [n]");
    (best_val, restriction)
}

/// Monte-Carlo estimate of `Pr_{I,y}[|E g_{Ī→y}| ≥ √(ξ/2e)]` with keep
/// probability `1/(2d)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventEstimate {
    pub probability: f64,
    pub stderr: f64,
    pub threshold: f64,
    /// The guaranteed lower bound `ξ/(2e)`.
    pub bound: f64,
    pub trials: u32,
}

fn check_event_preconditions(g: &DenseFunction, d: usize, xi: f64) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidParameter("degree must be positive".into()));
    }
    if !g.is_one_bounded() {
        return Err(Error::Precondition(format!("‖g‖_∞ = {} exceeds 1", g.max_abs())));
    }
    if !(xi > 0.0) {
        return Err(Error::Precondition(format!("ξ = {xi} must be positive")));
    }
    let levels = level_weights(g)?;
    let w: f64 = levels[..=d.min(g.n())].iter().sum();
    if w + POINTWISE_TOL < xi {
        return Err(Error::Precondition(format!("W_≤{d}[g] = {w} < ξ = {xi}")));
    }
    Ok(())
}

pub fn restriction_correlation_event(
    g: &DenseFunction,
    d: usize,
    xi: f64,
    trials: u32,
    seed: u64,
) -> Result<EventEstimate> {
    check_event_preconditions(g, d, xi)?;
    if trials == 0 {
        return Err(Error::InvalidParameter("at least one trial is needed".into()));
    }
    let threshold = (xi / (2.0 * E)).sqrt();
    let keep = 1.0 / (2.0 * d as f64);
    let mut hits = 0u32;
    for t in 0..trials {
        let r = sample_random_restriction(g.n(), keep, &g.measure, seed, stream_id(STREAM_EVENT, t))?;
        if restricted_mean(g, &r)?.norm() >= threshold - POINTWISE_TOL {
            hits += 1;
        }
    }
    let prob = f64::from(hits) / f64::from(trials);
    Ok(EventEstimate {
        probability: prob,
        stderr: (prob * (1.0 - prob) / f64::from(trials)).sqrt(),
        threshold,
        bound: xi / (2.0 * E),
        trials,
    })
}

/// The same event probability computed exactly over all `(I, y)`.
pub fn restriction_correlation_event_exact(g: &DenseFunction, d: usize, xi: f64) -> Result<f64> {
    check_event_preconditions(g, d, xi)?;
    let threshold = (xi / (2.0 * E)).sqrt();
    let keep = 1.0 / (2.0 * d as f64);
    let table = RestrictionTable::build(g);
    let mut prob = 0.0;
    table.for_each(keep, &g.measure, |_, _, q, mean| {
        if mean.norm() >= threshold - POINTWISE_TOL {
            prob += q;
        }
    });
    Ok(prob)
}

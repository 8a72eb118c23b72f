//! Markov chains on a finite alphabet and their tensor powers.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::is_prime;
use crate::funcspace::{efron_stein_part, mask_to_subset, DenseFunction, Kind, POINTWISE_TOL};

/// A row-stochastic chain with a stationary distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovChain {
    size: usize,
    transition: Vec<f64>,
    stationary: Vec<f64>,
}

impl MarkovChain {
    /// `transition` is row-major; row `x` is the law of the next state from `x`.
    pub fn new(size: usize, transition: Vec<f64>, stationary: Vec<f64>) -> Result<Self> {
        if transition.len() != size * size || stationary.len() != size || size == 0 {
            return Err(Error::ShapeMismatch("transition must be square and match the alphabet".into()));
        }
        if transition.iter().any(|&t| !(t >= 0.0)) {
            return Err(Error::InvalidParameter("negative transition probability".into()));
        }
        for (x, row) in transition.chunks(size).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > POINTWISE_TOL {
                return Err(Error::InvalidParameter(format!("row {x} sums to {s}")));
            }
        }
        if stationary.iter().any(|&q| !(q > 0.0)) || (stationary.iter().sum::<f64>() - 1.0).abs() > POINTWISE_TOL {
            return Err(Error::InvalidParameter("stationary law must be a positive distribution".into()));
        }
        for y in 0..size {
            let flow: f64 = (0..size).map(|x| stationary[x] * transition[x * size + y]).sum();
            if (flow - stationary[y]).abs() > 1e-10 {
                return Err(Error::InvalidParameter(format!("μT differs from μ at state {y}")));
            }
        }
        Ok(Self { size, transition, stationary })
    }

    /// `y → y + a (mod p)` with `a` uniform in `{0, 1, 2}`.
    pub fn ap_difference_chain(p: u32) -> Result<Self> {
        Self::difference_chain(p, &[0, 1, 2])
    }

    /// `y → y + a (mod p)` with `a` uniform in `diffs`.
    pub fn difference_chain(p: u32, diffs: &[u32]) -> Result<Self> {
        if p < 3 || !is_prime(u64::from(p)) {
            return Err(Error::NotPrime(u64::from(p)));
        }
        let size = p as usize;
        let mut t = vec![0.0; size * size];
        let w = 1.0 / diffs.len() as f64;
        for x in 0..size {
            for &a in diffs {
                t[x * size + (x + a as usize) % size] += w;
            }
        }
        Self::new(size, t, vec![1.0 / size as f64; size])
    }

    pub fn complete_averaging(size: usize) -> Result<Self> {
        let u = 1.0 / size as f64;
        Self::new(size, vec![u; size * size], vec![u; size])
    }

    pub fn identity(size: usize) -> Result<Self> {
        let mut t = vec![0.0; size * size];
        for x in 0..size {
            t[x * size + x] = 1.0;
        }
        Self::new(size, t, vec![1.0 / size as f64; size])
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    pub fn entry(&self, from: usize, to: usize) -> f64 {
        self.transition[from * self.size + to]
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    /// Smallest positive transition probability.
    pub fn min_transition(&self) -> f64 {
        self.transition.iter().copied().filter(|&t| t > 0.0).fold(f64::INFINITY, f64::min)
    }

    /// Connectivity of the undirected graph of non-zero transitions.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.size];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(x) = stack.pop() {
            for y in 0..self.size {
                if !seen[y] && (self.entry(x, y) > 0.0 || self.entry(y, x) > 0.0) {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// `D^{1/2} T D^{−1/2}` projected off `√μ`: the chain acting on mean-zero
    /// functions, written in an orthonormal frame of `L²(μ)`.
    fn mean_zero_operator(&self) -> DMatrix<f64> {
        let n = self.size;
        let sq: Vec<f64> = self.stationary.iter().map(|q| q.sqrt()).collect();
        let a = DMatrix::from_fn(n, n, |i, j| sq[i] * self.entry(i, j) / sq[j]);
        let q = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - sq[i] * sq[j]);
        &q * a * &q
    }

    pub fn spectrum(&self) -> Spectrum {
        let b = self.mean_zero_operator();
        let eigenvalue_modulus = b.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        let singular_value = b.clone().svd(false, false).singular_values.iter().copied().fold(0.0, f64::max);
        Spectrum { eigenvalue_modulus, singular_value }
    }

    /// The contraction constant on mean-zero functions: the top singular
    /// value of the chain restricted to them. Coincides with the second
    /// eigenvalue modulus when the chain is normal (e.g. circulant).
    pub fn second_eigenvalue(&self) -> f64 {
        self.spectrum().singular_value
    }

    /// `(T^{⊗n} g)(x) = E_{y ∼ T^{⊗n}(x, ·)}[g(y)]`, one coordinate at a time.
    pub fn apply_tensor(&self, g: &DenseFunction) -> Result<DenseFunction> {
        if g.p() as usize != self.size {
            return Err(Error::ShapeMismatch(format!("chain on {} states, function over F_{}", self.size, g.p())));
        }
        let p = self.size;
        let mut values = g.values().to_vec();
        let cube = g.cube();
        for i in 0..g.n() {
            let stride = cube.stride(i);
            let block = stride * p;
            let t = &self.transition;
            values.par_chunks_mut(block).for_each(|chunk| {
                let mut buf = vec![Complex64::new(0.0, 0.0); p];
                for off in 0..stride {
                    for (s, b) in buf.iter_mut().enumerate() {
                        *b = chunk[off + s * stride];
                    }
                    for s in 0..p {
                        let row = &t[s * p..(s + 1) * p];
                        chunk[off + s * stride] = row.iter().zip(&buf).map(|(&w, &v)| v * w).sum();
                    }
                }
            });
        }
        let kind = if values.iter().all(|v| v.im == 0.0) {
            Kind::Real
        } else {
            Kind::Complex
        };
        Ok(DenseFunction::from_parts_unchecked(cube, kind, values, g.measure().clone()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Largest eigenvalue modulus on mean-zero functions.
    pub eigenvalue_modulus: f64,
    /// Largest singular value on mean-zero functions.
    pub singular_value: f64,
}

/// `max_{t≠0} |1 + ω^t + ω^{2t}| / 3` for `ω = e^{2πi/p}`.
pub fn circulant_second_eigenvalue(p: u32) -> f64 {
    (1..p)
        .map(|t| {
            let z: Complex64 = (0..3)
                .map(|a| Complex64::from_polar(1.0, TAU * f64::from(a * t % p) / f64::from(p)))
                .sum();
            z.norm() / 3.0
        })
        .fold(0.0, f64::max)
}

/// One Efron–Stein term `⟨f^{=S}, T^{⊗n} g^{=S}⟩` of the correlation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartTerm {
    pub subset: Vec<usize>,
    pub inner: f64,
    pub f_norm: f64,
    pub g_norm: f64,
    pub tg_norm: f64,
}

/// Both sides of every inequality in the lower bound on `⟨f, T^{⊗n} g⟩`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub alpha: f64,
    pub beta: f64,
    pub lambda2: f64,
    pub d: usize,
    pub inner: f64,
    /// `αβ + Σ_{S≠∅} ⟨f^{=S}, T^{⊗n} g^{=S}⟩`.
    pub decomposition: f64,
    pub low_contribution: f64,
    /// `Σ_{0<|S|≤d} ‖f^{=S}‖ ‖T^{⊗n} g^{=S}‖`.
    pub low_norm_bound: f64,
    /// `Σ_{0<|S|≤d} ‖f^{=S}‖ ‖g^{=S}‖`.
    pub low_cs_bound: f64,
    /// `√(W_{≤d}[f−α] W_{≤d}[g−β])`.
    pub low_weight_bound: f64,
    pub high_contribution: f64,
    /// `Σ_{|S|>d} λ₂^{|S|} ‖f^{=S}‖ ‖g^{=S}‖`.
    pub high_bound: f64,
    /// `Σ_{S≠∅} λ₂^{|S|} ‖f^{=S}‖ ‖g^{=S}‖`.
    pub spectral_bound: f64,
    /// Largest `‖T^{⊗n} g^{=S}‖ − λ₂^{|S|} ‖g^{=S}‖` over `S`.
    pub worst_contraction_excess: f64,
    pub terms: Vec<PartTerm>,
}

impl CorrelationReport {
    /// Every link of the inequality chain, each with slack `tol`.
    pub fn chain_holds(&self, tol: f64) -> bool {
        (self.inner - self.decomposition).abs() <= tol
            && self.low_contribution <= self.low_norm_bound + tol
            && self.low_norm_bound <= self.low_cs_bound + tol
            && self.low_cs_bound <= self.low_weight_bound + tol
            && self.high_contribution <= self.high_bound + tol
            && (self.inner - self.alpha * self.beta).abs() <= self.spectral_bound + tol
            && self.worst_contraction_excess <= tol
    }
}

pub fn correlation_lower_bound_check(
    f: &DenseFunction,
    g: &DenseFunction,
    chain: &MarkovChain,
    d: usize,
) -> Result<CorrelationReport> {
    if !f.is_boolean() || !g.is_boolean() {
        return Err(Error::Precondition("both functions must be boolean".into()));
    }
    if f.cube() != g.cube() {
        return Err(Error::ShapeMismatch("f and g live on different cubes".into()));
    }
    if !chain.is_connected() {
        return Err(Error::Precondition("chain is not connected".into()));
    }
    if f.measure().probs().iter().zip(chain.stationary()).any(|(a, b)| (a - b).abs() > POINTWISE_TOL) {
        return Err(Error::Precondition("function measure is not the chain's stationary law".into()));
    }
    if f.n() > 20 {
        return Err(Error::InvalidParameter("subset enumeration capped at n = 20".into()));
    }
    let n = f.n();
    let lambda2 = chain.second_eigenvalue();
    let alpha = f.mean().re;
    let beta = g.mean().re;
    let inner = f.inner(&chain.apply_tensor(g)?)?.re;

    let terms: Vec<PartTerm> = (1u64..(1u64 << n))
        .into_par_iter()
        .map(|mask| {
            let subset = mask_to_subset(mask, n);
            let fs = efron_stein_part(f, &subset)?.part;
            let gs = efron_stein_part(g, &subset)?.part;
            let tgs = chain.apply_tensor(&gs)?;
            Ok(PartTerm {
                subset,
                inner: fs.inner(&tgs)?.re,
                f_norm: fs.norm(),
                g_norm: gs.norm(),
                tg_norm: tgs.norm(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = CorrelationReport {
        alpha,
        beta,
        lambda2,
        d,
        inner,
        decomposition: alpha * beta,
        low_contribution: 0.0,
        low_norm_bound: 0.0,
        low_cs_bound: 0.0,
        low_weight_bound: 0.0,
        high_contribution: 0.0,
        high_bound: 0.0,
        spectral_bound: 0.0,
        worst_contraction_excess: f64::NEG_INFINITY,
        terms: Vec::new(),
    };
    let (mut wf, mut wg) = (0.0, 0.0);
    for t in &terms {
        let k = t.subset.len();
        let spectral = lambda2.powi(k as i32) * t.f_norm * t.g_norm;
        report.decomposition += t.inner;
        report.spectral_bound += spectral;
        report.worst_contraction_excess =
            report.worst_contraction_excess.max(t.tg_norm - lambda2.powi(k as i32) * t.g_norm);
        if k <= d {
            report.low_contribution += t.inner.abs();
            report.low_norm_bound += t.f_norm * t.tg_norm;
            report.low_cs_bound += t.f_norm * t.g_norm;
            wf += t.f_norm * t.f_norm;
            wg += t.g_norm * t.g_norm;
        } else {
            report.high_contribution += t.inner.abs();
            report.high_bound += spectral;
        }
    }
    report.low_weight_bound = (wf * wg).sqrt();
    report.terms = terms;
    Ok(report)
}

/// Residual of projecting `h` onto `V_{=S}`: the largest pointwise
/// difference between `h` and its own `S`-part.
pub fn subspace_residual(h: &DenseFunction, subset: &[usize]) -> Result<f64> {
    let part = efron_stein_part(h, subset)?.part;
    part.max_distance(h)
}

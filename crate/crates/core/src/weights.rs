//! Malliavin weights `M_T`, `M̃_T` and `N_T` assembled from one sample path.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fbm::{cell_mean_power, FbmPath, Increments, KhInvSeries, KhInverse, WienerPair};
use crate::fraccalc::{FracConstants, SampledPath, TimeGrid};
use crate::models::{condition_number, CoefficientFn, ModelKind, ModelSpec, SolutionPath, Theorem};

/// Samples whose Gram matrix is worse conditioned than this are excluded.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// Left-point quadrature `A = Σ_i σσ*(X(t_i)) Δ` of the Gram integral.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub a: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
    pub condition: f64,
}

impl GramMatrix {
    pub fn from_path(sigma: &CoefficientFn, x: &SampledPath) -> Result<Self> {
        let grid = x.grid;
        let mut a = DMatrix::zeros(sigma.rows, sigma.rows);
        for i in 0..grid.steps() {
            let s = sigma.eval(x.at(i));
            a += &s * s.transpose();
        }
        a *= grid.dt();
        Self::from_matrix(a)
    }

    pub fn from_matrix(a: DMatrix<f64>) -> Result<Self> {
        let condition = condition_number(&a);
        if !(condition <= MAX_GRAM_CONDITION) {
            return Err(Error::DegenerateSample(format!("Gram matrix condition {condition:e} exceeds {MAX_GRAM_CONDITION:e}")));
        }
        let inverse = a.clone().try_inverse().ok_or_else(|| Error::DegenerateSample("Gram matrix is singular".into()))?;
        Ok(GramMatrix { a, inverse, condition })
    }
}

/// The three additive parts of a weight; `total = term1 + term2 - trace`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightBreakdown {
    pub term1: f64,
    pub term2: f64,
    pub trace: f64,
    pub total: f64,
    pub theorem: Theorem,
}

impl WeightBreakdown {
    fn new(term1: f64, term2: f64, trace: f64, theorem: Theorem) -> Result<Self> {
        let total = term1 + term2 - trace;
        if !total.is_finite() {
            return Err(Error::DegenerateSample(format!("non-finite weight ({term1}, {term2}, {trace})")));
        }
        Ok(WeightBreakdown { term1, term2, trace, total, theorem })
    }
}

/// Perturbation direction `v = (v1, v2)` of the initial point `(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectionVector {
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
}

impl DirectionVector {
    pub fn new(v1: Vec<f64>, v2: Vec<f64>) -> Result<Self> {
        if v1.iter().chain(&v2).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("direction has non-finite entries".into()));
        }
        Ok(DirectionVector { v1, v2 })
    }

    pub fn split(v: &[f64], d1: usize) -> Result<Self> {
        if v.len() < d1 {
            return Err(Error::ShapeMismatch(format!("direction of length {} for d1 = {d1}", v.len())));
        }
        Self::new(v[..d1].to_vec(), v[d1..].to_vec())
    }

    pub fn concat(&self) -> Vec<f64> {
        self.v1.iter().chain(&self.v2).copied().collect()
    }

    pub fn norm(&self) -> f64 {
        self.v1.iter().chain(&self.v2).map(|x| x * x).sum::<f64>().sqrt()
    }

    fn check(&self, model: &ModelSpec) -> Result<()> {
        if self.v1.len() != model.d1 || self.v2.len() != model.d2 {
            return Err(Error::ShapeMismatch(format!(
                "direction has blocks ({}, {}), model needs ({}, {})",
                self.v1.len(),
                self.v2.len(),
                model.d1,
                model.d2
            )));
        }
        Ok(())
    }
}

/// `Σ_i w_i ⟨g(t_i*), ΔW_i⟩` with `w_i` the cell mean of `t^e` and `t_i*` the
/// left node of cell `i`, except the first cell which uses its right node.
pub fn ito_integral_singular(exponent: f64, g: &SampledPath, dw: &Increments) -> Result<f64> {
    if !(exponent > -0.5) {
        return Err(Error::InvalidParameter(format!("prefactor exponent must exceed -1/2, got {exponent}")));
    }
    check_increments(g.grid, g.dim, dw)?;
    let w = cell_mean_power(g.grid, exponent);
    let mut acc = 0.0;
    for (i, wi) in w.iter().enumerate() {
        let node = g.at(if i == 0 { 1 } else { i });
        acc += wi * node.iter().zip(dw.row(i)).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(acc)
}

fn check_increments(grid: TimeGrid, dim: usize, dw: &Increments) -> Result<()> {
    if dw.steps != grid.steps() || dw.dim != dim {
        return Err(Error::ShapeMismatch(format!(
            "increments are {}×{}, integrand needs {}×{dim}",
            dw.steps,
            dw.dim,
            grid.steps()
        )));
    }
    Ok(())
}

/// Per-configuration data shared by every sample: the inverse-operator
/// weights and the cell means of `t^{1/2-H}`.
#[derive(Debug, Clone)]
pub struct WeightEngine {
    grid: TimeGrid,
    constants: FracConstants,
    khinv: KhInverse,
    prefactor_means: Vec<f64>,
}

impl WeightEngine {
    pub fn new(c: &FracConstants, grid: TimeGrid) -> Self {
        WeightEngine {
            grid,
            constants: c.clone(),
            khinv: KhInverse::new(c, grid),
            prefactor_means: cell_mean_power(grid, -c.beta()),
        }
    }

    pub fn constants(&self) -> &FracConstants {
        &self.constants
    }

    /// `K_H^{-1}(∫_0^· g)` for each component of a vector path `g`.
    fn kh_inverse(&self, g: &SampledPath) -> Result<Vec<KhInvSeries>> {
        (0..g.dim).map(|c| self.khinv.apply(&g.component(c).values)).collect()
    }

    /// `Σ_i ⟨L h(t_i*), ΔW_i⟩` where `h` has singular prefactors cell-averaged
    /// and `L` is an optional constant matrix. The closed-form inverse is for
    /// the unnormalized operator, hence the division by `kernel_scale`.
    fn integrate(&self, series: &[KhInvSeries], left: Option<&DMatrix<f64>>, dw: &Increments) -> Result<f64> {
        let rows = left.map_or(series.len(), |m| m.nrows());
        check_increments(self.grid, rows, dw)?;
        let mut acc = 0.0;
        let mut h = DVector::zeros(series.len());
        for (i, w) in self.prefactor_means.iter().enumerate() {
            for (c, s) in series.iter().enumerate() {
                h[c] = s.cell_value(i, *w);
            }
            let dwi = dw.row(i);
            acc += match left {
                Some(m) => (m * &h).iter().zip(dwi).map(|(a, b)| a * b).sum::<f64>(),
                None => h.iter().zip(dwi).map(|(a, b)| a * b).sum::<f64>(),
            };
        }
        Ok(acc / self.constants.kernel_scale)
    }

    /// `Σ_i ⟨K_H^{-1}(∫ σ*(X))^*(t_i*) ΔW̃_i, ϑ⟩`, computed as the integral of
    /// `K_H^{-1}(∫ σ*(X) ϑ)` by linearity.
    fn paired_term(&self, sigma_t: impl Fn(usize) -> DMatrix<f64>, theta: &DVector<f64>, dw_tilde: &Increments) -> Result<f64> {
        let l = dw_tilde.dim;
        let mut g = SampledPath::zeros(self.grid, l);
        for j in 0..self.grid.len() {
            let gj = sigma_t(j) * theta;
            g.at_mut(j).copy_from_slice(gj.as_slice());
        }
        self.integrate(&self.kh_inverse(&g)?, None, dw_tilde)
    }

    /// Term against `dW` for the Grushin weights: `∫ ⟨K_H^{-1}(·/T) v1, dW⟩`.
    fn grushin_term1(&self, v1: &[f64], dw: &Increments) -> Result<f64> {
        let horizon = self.grid.horizon();
        let mut g = SampledPath::zeros(self.grid, v1.len());
        for j in 0..self.grid.len() {
            for (slot, v) in g.at_mut(j).iter_mut().zip(v1) {
                *slot = v / horizon;
            }
        }
        self.integrate(&self.kh_inverse(&g)?, None, dw)
    }

    fn check(
        &self,
        model: &ModelSpec,
        sol: &SolutionPath,
        paths: &FbmPath,
        wiener: &WienerPair,
        v: &DirectionVector,
    ) -> Result<()> {
        if model.grid != self.grid || sol.x.grid != self.grid {
            return Err(Error::GridMismatch("weight engine built for another grid".into()));
        }
        if model.hurst.value() != self.constants.hurst {
            return Err(Error::InvalidParameter(format!(
                "weight engine built for H = {}, model has H = {}",
                self.constants.hurst,
                model.hurst.value()
            )));
        }
        model.check_paths(paths)?;
        check_increments(self.grid, model.d1, &wiener.dw)?;
        check_increments(self.grid, model.l, &wiener.dw_tilde)?;
        v.check(model)
    }

    /// `ϑ(T) = A^{-1}(v2 + Σ_i ((T-t_i)/T) ∇σ(X_i) v1 ΔB̃_i)`.
    pub fn vartheta(
        &self,
        model: &ModelSpec,
        sol: &SolutionPath,
        paths: &FbmPath,
        v: &DirectionVector,
        gram: &GramMatrix,
    ) -> Result<DVector<f64>> {
        let sigma = grushin_sigma(model)?;
        let noise = noise_sum(sigma, sol, paths, &v.v1);
        Ok(&gram.inverse * (DVector::from_column_slice(&v.v2) + noise))
    }

    /// Weight of the Gram-matrix formula for the Grushin model.
    pub fn weight_m(
        &self,
        model: &ModelSpec,
        sol: &SolutionPath,
        paths: &FbmPath,
        wiener: &WienerPair,
        v: &DirectionVector,
    ) -> Result<WeightBreakdown> {
        self.check(model, sol, paths, wiener, v)?;
        let sigma = grushin_sigma(model)?;
        let gram = GramMatrix::from_path(sigma, &sol.x)?;
        let term1 = self.grushin_term1(&v.v1, &wiener.dw)?;
        let theta = self.vartheta(model, sol, paths, v, &gram)?;
        let term2 = self.paired_term(|j| sigma.eval(sol.x.at(j)).transpose(), &theta, &wiener.dw_tilde)?;
        let trace = (&gram.inverse * trace_sum(sigma, sol, &v.v1, |j| sigma.eval(sol.x.at(j)).transpose(), 1.0)).trace();
        WeightBreakdown::new(term1, term2, trace, Theorem::M)
    }

    /// Weight of the pointwise-inverse formula, `ψ = σ*(σσ*)^{-1}`.
    pub fn weight_m_tilde(
        &self,
        model: &ModelSpec,
        sol: &SolutionPath,
        paths: &FbmPath,
        wiener: &WienerPair,
        v: &DirectionVector,
    ) -> Result<WeightBreakdown> {
        self.check(model, sol, paths, wiener, v)?;
        let sigma = grushin_sigma(model)?;
        let horizon = self.grid.horizon();
        let mut psi = Vec::with_capacity(self.grid.len());
        for j in 0..self.grid.len() {
            let x = sol.x.at(j);
            let inv = sigma
                .gram_inverse(x)
                .ok_or_else(|| Error::DegenerateSample(format!("σσ* is singular at t = {}", self.grid.node(j))))?;
            psi.push(sigma.eval(x).transpose() * inv);
        }
        let term1 = self.grushin_term1(&v.v1, &wiener.dw)?;
        let theta = (DVector::from_column_slice(&v.v2) + noise_sum(sigma, sol, paths, &v.v1)) / horizon;
        let term2 = self.paired_term(|j| psi[j].clone(), &theta, &wiener.dw_tilde)?;
        let trace = trace_sum(sigma, sol, &v.v1, |j| psi[j].clone(), horizon).trace();
        WeightBreakdown::new(term1, term2, trace, Theorem::MTilde)
    }

    /// Weight for the model with drift.
    pub fn weight_n(
        &self,
        model: &ModelSpec,
        sol: &SolutionPath,
        paths: &FbmPath,
        wiener: &WienerPair,
        v: &DirectionVector,
    ) -> Result<WeightBreakdown> {
        self.check(model, sol, paths, wiener, v)?;
        let ModelKind::General { b1, b2, sigma1_inv, sigma2, .. } = &model.kind else {
            return Err(Error::Assumption("the N weight needs a general model".into()));
        };
        let grid = self.grid;
        let horizon = grid.horizon();
        let dt = grid.dt();
        // g1(u) v1 = ((T-u)/T) ∇b1(X_u) v1 + v1/T
        let mut g1 = SampledPath::zeros(grid, model.d1);
        for j in 0..grid.len() {
            let frac = (horizon - grid.node(j)) / horizon;
            let db = b1.dir_deriv(sol.x.at(j), &v.v1);
            for (c, slot) in g1.at_mut(j).iter_mut().enumerate() {
                *slot = frac * db[c] + v.v1[c] / horizon;
            }
        }
        let term1 = self.integrate(&self.kh_inverse(&g1)?, Some(sigma1_inv), &wiener.dw)?;
        let gram = GramMatrix::from_path(sigma2, &sol.x)?;
        let mut drift = DVector::zeros(model.d2);
        for i in 0..grid.steps() {
            let frac = (horizon - grid.node(i)) / horizon;
            drift += b2.dir_deriv(sol.x.at(i), &v.v1) * (frac * dt);
        }
        let chi = &gram.inverse * (DVector::from_column_slice(&v.v2) + drift + noise_sum(sigma2, sol, paths, &v.v1));
        let term2 = self.paired_term(|j| sigma2.eval(sol.x.at(j)).transpose(), &chi, &wiener.dw_tilde)?;
        let trace = (&gram.inverse * trace_sum(sigma2, sol, &v.v1, |j| sigma2.eval(sol.x.at(j)).transpose(), 1.0)).trace();
        WeightBreakdown::new(term1, term2, trace, Theorem::N)
    }

    pub fn weight(
        &self,
        theorem: Theorem,
        model: &ModelSpec,
        sol: &SolutionPath,
        paths: &FbmPath,
        wiener: &WienerPair,
        v: &DirectionVector,
    ) -> Result<WeightBreakdown> {
        match theorem {
            Theorem::M => self.weight_m(model, sol, paths, wiener, v),
            Theorem::MTilde => self.weight_m_tilde(model, sol, paths, wiener, v),
            Theorem::N => self.weight_n(model, sol, paths, wiener, v),
        }
    }
}

fn grushin_sigma(model: &ModelSpec) -> Result<&CoefficientFn> {
    match &model.kind {
        ModelKind::Grushin { sigma } => Ok(sigma),
        ModelKind::General { .. } => Err(Error::Assumption("the M weights need a Grushin model".into())),
    }
}

/// `Σ_i ((T-t_i)/T) ∇σ(X_i) v1 ΔB̃_i`.
fn noise_sum(sigma: &CoefficientFn, sol: &SolutionPath, paths: &FbmPath, v1: &[f64]) -> DVector<f64> {
    let grid = sol.x.grid;
    let horizon = grid.horizon();
    let mut acc = DVector::zeros(sigma.rows);
    for i in 0..grid.steps() {
        let frac = (horizon - grid.node(i)) / horizon;
        let db = DVector::from_iterator(paths.b_tilde.dim, (0..paths.b_tilde.dim).map(|c| paths.b_tilde.increment(i, c)));
        acc += sigma.dir_deriv(sol.x.at(i), v1) * db * frac;
    }
    acc
}

/// `Σ_i ((T-t_i)/(T s)) ∇σ(X_i) v1 φ(X_i) Δ` with `s` an extra scale.
fn trace_sum(
    sigma: &CoefficientFn,
    sol: &SolutionPath,
    v1: &[f64],
    phi: impl Fn(usize) -> DMatrix<f64>,
    scale: f64,
) -> DMatrix<f64> {
    let grid = sol.x.grid;
    let horizon = grid.horizon();
    let mut acc = DMatrix::zeros(sigma.rows, sigma.rows);
    for i in 0..grid.steps() {
        let x = sol.x.at(i);
        let frac = (horizon - grid.node(i)) / (horizon * scale);
        acc += sigma.dir_deriv(x, v1) * phi(i) * (frac * grid.dt());
    }
    acc
}

/// One-shot wrappers building a [`WeightEngine`] per call.
pub fn weight_m(
    model: &ModelSpec,
    sol: &SolutionPath,
    paths: &FbmPath,
    wiener: &WienerPair,
    v: &DirectionVector,
    c: &FracConstants,
) -> Result<WeightBreakdown> {
    WeightEngine::new(c, model.grid).weight_m(model, sol, paths, wiener, v)
}

pub fn weight_m_tilde(
    model: &ModelSpec,
    sol: &SolutionPath,
    paths: &FbmPath,
    wiener: &WienerPair,
    v: &DirectionVector,
    c: &FracConstants,
) -> Result<WeightBreakdown> {
    WeightEngine::new(c, model.grid).weight_m_tilde(model, sol, paths, wiener, v)
}

pub fn weight_n(
    model: &ModelSpec,
    sol: &SolutionPath,
    paths: &FbmPath,
    wiener: &WienerPair,
    v: &DirectionVector,
    c: &FracConstants,
) -> Result<WeightBreakdown> {
    WeightEngine::new(c, model.grid).weight_n(model, sol, paths, wiener, v)
}

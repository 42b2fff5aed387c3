//! Fractional integrals and derivatives of grid-sampled functions, Young and
//! Zähle integrals, and the Hurst-dependent constants used by the closed forms.
//!
//! Right-sided operators use the real-valued convention: the complex phases
//! `(-1)^{-α}` and `(-1)^α` are dropped and the real integrals are returned.
//! With that convention Zähle's pairing carries the overall real factor
//! `(-1)^α · (-1)^{1-α} = -1`, which [`zahle_integral`] applies.

use crate::error::{Error, Result};
use crate::quad;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta;
use statrs::function::gamma::gamma;

/// Uniform grid `t_i = i T / n`, `i = 0..=n`, on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
        }
        if steps < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 steps, got {steps}")));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes, `n + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            i as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.node(i)).collect()
    }

    /// Grid with the same horizon and `factor` times fewer steps.
    pub fn coarsen(&self, factor: usize) -> Result<TimeGrid> {
        if factor == 0 || self.steps % factor != 0 {
            return Err(Error::InvalidParameter(format!("cannot coarsen {} steps by {factor}", self.steps)));
        }
        TimeGrid::new(self.horizon, self.steps / factor)
    }
}

/// Scalar function sampled on every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFn {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl SampledFn {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} values for a grid with {} nodes", values.len(), grid.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite value at node {i}")));
        }
        Ok(SampledFn { grid, values })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: TimeGrid, f: F) -> Self {
        let values = grid.nodes().into_iter().map(f).collect();
        SampledFn { grid, values }
    }

    fn check_same_grid(&self, other: &SampledFn) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!("{:?} vs {:?}", self.grid, other.grid)));
        }
        Ok(())
    }
}

/// Vector-valued path sampled on a grid, stored node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    pub grid: TimeGrid,
    pub dim: usize,
    data: Vec<f64>,
}

impl SampledPath {
    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        SampledPath { grid, dim, data: vec![0.0; grid.len() * dim] }
    }

    pub fn from_data(grid: TimeGrid, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() * dim {
            return Err(Error::GridMismatch(format!("{} entries for {} nodes of dimension {dim}", data.len(), grid.len())));
        }
        Ok(SampledPath { grid, dim, data })
    }

    pub fn at(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn at_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Increment `x(t_{i+1}) - x(t_i)` of component `c`.
    pub fn increment(&self, i: usize, c: usize) -> f64 {
        self.data[(i + 1) * self.dim + c] - self.data[i * self.dim + c]
    }

    pub fn component(&self, c: usize) -> SampledFn {
        let values = (0..self.grid.len()).map(|i| self.data[i * self.dim + c]).collect();
        SampledFn { grid: self.grid, values }
    }

    pub fn last(&self) -> &[f64] {
        self.at(self.grid.steps())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Which end of `[a, b]` an operator integrates from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Hurst-dependent scalars shared by the kernel and the inverse operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FracConstants {
    pub hurst: f64,
    /// `∫_0^1 (θ^{1/2-H} - 1) / (1-θ)^{1/2+H} dθ`
    pub c_zero: f64,
    /// coefficient of the local term `t^{1/2-H} g(t)` in the inverse operator
    pub c_local: f64,
    /// coefficient of the memory term `t^{H-1/2} J(t)` in the inverse operator
    pub c_memory: f64,
    /// normalization of the Volterra kernel; `None` at `H = 1/2`
    pub c_kernel: Option<f64>,
    /// `c_K Γ(H - 1/2)`: the covariance-normalized kernel operator equals this
    /// factor times `I^1 s^{H-1/2} I^{H-1/2} s^{1/2-H}`, whose inverse the
    /// local/memory closed form is; 1 at `H = 1/2`
    pub kernel_scale: f64,
}

impl FracConstants {
    /// `H - 1/2`
    pub fn beta(&self) -> f64 {
        self.hurst - 0.5
    }
}

/// Evaluates all constants for `H ∈ [1/2, 1)`; `C0` to relative accuracy 1e-10.
pub fn compute_constants(hurst: f64) -> Result<FracConstants> {
    if !(0.5..1.0).contains(&hurst) {
        return Err(Error::InvalidParameter(format!("Hurst parameter must lie in [1/2, 1), got {hurst}")));
    }
    let e = 0.5 - hurst;
    let c_zero = if e == 0.0 {
        0.0
    } else {
        // θ^e - 1 = expm1(e ln θ), written through 1 - θ near the singular end
        let q = quad::tanh_sinh(
            |theta, _, one_minus| {
                let num = if theta > 0.5 { (e * (-one_minus).ln_1p()).exp_m1() } else { theta.powf(e) - 1.0 };
                num / one_minus.powf(0.5 + hurst)
            },
            0.0,
            1.0,
            1e-13,
        )?;
        q.value
    };
    let beta_h = hurst - 0.5;
    // Γ(1) is not returned exactly by the Lanczos approximation
    let g = if beta_h == 0.0 { 1.0 } else { gamma(1.5 - hurst) };
    let c_kernel = if beta_h > 0.0 { Some((hurst * (2.0 * hurst - 1.0) / beta(2.0 - 2.0 * hurst, beta_h)).sqrt()) } else { None };
    Ok(FracConstants {
        hurst,
        c_zero,
        c_local: (1.0 - beta_h * c_zero) / g,
        c_memory: beta_h / g,
        c_kernel,
        kernel_scale: c_kernel.map_or(1.0, |ck| ck * gamma(beta_h)),
    })
}

/// Riemann-Liouville fractional integral of order `alpha ∈ (0, 1]` at every node.
///
/// Product integration: the kernel `(x - y)^{α-1}` is integrated exactly on each
/// cell against the linear interpolant of `f`.
pub fn frac_integral(f: &SampledFn, alpha: f64, side: Side) -> Result<SampledFn> {
    frac_integral_with(f, alpha, side, &[])
}

/// [`frac_integral`] corrected to be exact for `(t - a)^ν`, `ν ∈ origin_exponents`
/// (or `(b - t)^ν` for the right-sided operator).
///
/// The exponents are caller-supplied: functions such as `I^β 1 ∝ t^β` are not
/// resolved by linear interpolation near the base point, and the correction adds
/// starting weights on the first `s + 2` nodes that keep exactness for `1` and `t`.
pub fn frac_integral_with(f: &SampledFn, alpha: f64, side: Side, origin_exponents: &[f64]) -> Result<SampledFn> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!("integral order must lie in (0, 1], got {alpha}")));
    }
    let op = LeftOperator::Integral(alpha);
    apply_sided(f, side, origin_exponents, op)
}

/// Fractional derivative of order `alpha ∈ (0, 1)` through the Weyl form
/// `(f(x)/(x-a)^α + α ∫ (f(x) - f(y)) / (x-y)^{α+1} dy) / Γ(1-α)`.
///
/// The singular kernel is integrated exactly per cell against the linear
/// interpolant of `f(x) - f(y)`. At the starting node the value is the limit 0,
/// which requires `f` to vanish there; otherwise a singular-node error is returned.
pub fn frac_deriv(f: &SampledFn, alpha: f64, side: Side) -> Result<SampledFn> {
    frac_deriv_with(f, alpha, side, &[])
}

/// [`frac_deriv`] with starting weights for the given base-point exponents,
/// see [`frac_integral_with`]. Exponents must be positive.
pub fn frac_deriv_with(f: &SampledFn, alpha: f64, side: Side, origin_exponents: &[f64]) -> Result<SampledFn> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("derivative order must lie in (0, 1), got {alpha}")));
    }
    let base_value = match side {
        Side::Left => f.values[0],
        Side::Right => f.values[f.grid.steps()],
    };
    if base_value != 0.0 {
        let t = if side == Side::Left { 0.0 } else { f.grid.horizon() };
        return Err(Error::SingularNode { t, reason: format!("function value {base_value} at the base point is not zero") });
    }
    apply_sided(f, side, origin_exponents, LeftOperator::Derivative(alpha))
}

#[derive(Debug, Clone, Copy)]
enum LeftOperator {
    Integral(f64),
    Derivative(f64),
}

impl LeftOperator {
    fn apply(self, v: &[f64], grid: TimeGrid) -> Vec<f64> {
        match self {
            LeftOperator::Integral(alpha) => left_integral(v, alpha, grid),
            LeftOperator::Derivative(alpha) => left_derivative(v, alpha, grid),
        }
    }

    /// Exact image of `t^ν` at `t`.
    fn of_power(self, nu: f64, t: f64) -> f64 {
        match self {
            LeftOperator::Integral(a) => gamma(nu + 1.0) / gamma(nu + 1.0 + a) * t.powf(nu + a),
            LeftOperator::Derivative(a) => gamma(nu + 1.0) / gamma(nu + 1.0 - a) * t.powf(nu - a),
        }
    }
}

fn apply_sided(f: &SampledFn, side: Side, exponents: &[f64], op: LeftOperator) -> Result<SampledFn> {
    let mut v = f.values.clone();
    if side == Side::Right {
        v.reverse();
    }
    let mut out = op.apply(&v, f.grid);
    if !exponents.is_empty() {
        let corr = starting_correction(&v, f.grid, exponents, op)?;
        for (o, c) in out.iter_mut().zip(corr) {
            *o += c;
        }
    }
    if side == Side::Right {
        out.reverse();
    }
    Ok(SampledFn { grid: f.grid, values: out })
}

/// Correction `Σ_q w_{jq} f(t_q)`, `q = 0..=s+1`, whose weights annihilate `1`
/// and `t` and remove the rule's error on each `t^ν`.
fn starting_correction(v: &[f64], grid: TimeGrid, exponents: &[f64], op: LeftOperator) -> Result<Vec<f64>> {
    let s = exponents.len();
    let m = s + 2;
    let n = grid.steps();
    if m > n + 1 {
        return Err(Error::InvalidParameter(format!("{s} starting exponents need more than {n} steps")));
    }
    for &nu in exponents {
        if !(nu > 0.0) || nu.fract() == 0.0 {
            return Err(Error::InvalidParameter(format!("starting exponents must be positive non-integers, got {nu}")));
        }
    }
    let dt = grid.dt();
    // basis (t/Δ)^ν keeps the starting system well scaled
    let mut residuals = Vec::with_capacity(s);
    for &nu in exponents {
        let basis: Vec<f64> = (0..=n).map(|i| (i as f64).powf(nu)).collect();
        let approx = op.apply(&basis, grid);
        let scale = dt.powf(-nu);
        residuals.push(
            (0..=n).map(|j| if j == 0 { 0.0 } else { scale * op.of_power(nu, grid.node(j)) - approx[j] }).collect::<Vec<f64>>(),
        );
    }
    let system = nalgebra::DMatrix::from_fn(m, m, |r, q| match r {
        0 => 1.0,
        1 => q as f64,
        _ => (q as f64).powf(exponents[r - 2]),
    });
    let lu = system.lu();
    let mut out = vec![0.0; n + 1];
    for (j, slot) in out.iter_mut().enumerate().skip(1) {
        let rhs = nalgebra::DVector::from_fn(m, |r, _| if r < 2 { 0.0 } else { residuals[r - 2][j] });
        let w = lu.solve(&rhs).ok_or_else(|| Error::InvalidParameter("starting exponents must be distinct".into()))?;
        *slot = (0..m).map(|q| w[q] * v[q]).sum();
    }
    Ok(out)
}

fn left_integral(v: &[f64], alpha: f64, grid: TimeGrid) -> Vec<f64> {
    let n = grid.steps();
    // both moments carry Δ^α once the slope (f_{k+1} - f_k)/Δ is folded in
    let scale = grid.dt().powf(alpha) / gamma(alpha);
    let mut p0 = vec![0.0; n + 1];
    let mut p1 = vec![0.0; n + 1];
    for m in 1..=n {
        let (a, b) = ((m - 1) as f64, m as f64);
        let d0 = (b.powf(alpha) - a.powf(alpha)) / alpha;
        p0[m] = d0;
        p1[m] = b * d0 - (b.powf(alpha + 1.0) - a.powf(alpha + 1.0)) / (alpha + 1.0);
    }
    let mut out = vec![0.0; n + 1];
    for (j, slot) in out.iter_mut().enumerate().skip(1) {
        let mut acc = 0.0;
        for k in 0..j {
            let m = j - k;
            acc += v[k] * p0[m] + (v[k + 1] - v[k]) * p1[m];
        }
        *slot = scale * acc;
    }
    out
}

fn left_derivative(v: &[f64], alpha: f64, grid: TimeGrid) -> Vec<f64> {
    let n = grid.steps();
    let dt_neg = grid.dt().powf(-alpha);
    let mut q0 = vec![0.0; n + 1];
    let mut q1 = vec![0.0; n + 1];
    for m in 2..=n {
        let (a, b) = ((m - 1) as f64, m as f64);
        let d0 = (a.powf(-alpha) - b.powf(-alpha)) / alpha;
        q0[m] = d0;
        q1[m] = b * d0 - (b.powf(1.0 - alpha) - a.powf(1.0 - alpha)) / (1.0 - alpha);
    }
    let last_cell = 1.0 / (1.0 - alpha);
    let norm = 1.0 / gamma(1.0 - alpha);
    let mut out = vec![0.0; n + 1];
    for (j, slot) in out.iter_mut().enumerate().skip(1) {
        let x = grid.node(j);
        let mut acc = (v[j] - v[j - 1]) * last_cell;
        for k in 0..j - 1 {
            let m = j - k;
            acc += (v[j] - v[k]) * q0[m] - (v[k + 1] - v[k]) * q1[m];
        }
        *slot = norm * (v[j] / x.powf(alpha) + alpha * dt_neg * acc);
    }
    out
}

/// Left-point Riemann-Stieltjes sum `Σ f(t_i) (g(t_{i+1}) - g(t_i))`.
pub fn young_integral(f: &SampledFn, g: &SampledFn) -> Result<f64> {
    f.check_same_grid(g)?;
    Ok(f.values.iter().zip(g.values.windows(2)).map(|(fi, gw)| fi * (gw[1] - gw[0])).sum())
}

/// Hölder exponents of integrand and integrator, as supplied by the caller.
#[derive(Debug, Clone, Copy)]
pub struct HolderHints {
    pub integrand: f64,
    pub integrator: f64,
}

/// Zähle's fractional integration by parts, `∫ f dg` evaluated as
/// `-∫ D^α_{a+} f(t) D^{1-α}_{b-} g_{b-}(t) dt` with real-valued operators.
///
/// The constant part `f(a)` contributes `f(a) (t-a)^{-α} / Γ(1-α)`, which is
/// integrated exactly against the linear interpolant of the right derivative.
pub fn zahle_integral(f: &SampledFn, g: &SampledFn, alpha: f64, hints: Option<HolderHints>) -> Result<f64> {
    f.check_same_grid(g)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("Zähle order must lie in (0, 1), got {alpha}")));
    }
    if let Some(h) = hints {
        if !(h.integrand > alpha && h.integrator > 1.0 - alpha) {
            return Err(Error::InvalidParameter(format!(
                "order {alpha} incompatible with Hölder exponents ({}, {})",
                h.integrand, h.integrator
            )));
        }
    }
    let grid = f.grid;
    let n = grid.steps();
    let dt = grid.dt();
    let f_base = f.values[0];
    let g_end = g.values[n];
    let f_shift = SampledFn { grid, values: f.values.iter().map(|v| v - f_base).collect() };
    let g_shift = SampledFn { grid, values: g.values.iter().map(|v| v - g_end).collect() };
    let df = frac_deriv(&f_shift, alpha, Side::Left)?;
    let dg = frac_deriv(&g_shift, 1.0 - alpha, Side::Right)?;

    let mut regular = 0.0;
    for i in 0..n {
        regular += 0.5 * dt * (df.values[i] * dg.values[i] + df.values[i + 1] * dg.values[i + 1]);
    }

    let mut base = 0.0;
    if f_base != 0.0 {
        let p = 1.0 - alpha;
        for i in 0..n {
            let (a, b) = (grid.node(i), grid.node(i + 1));
            let m0 = (b.powf(p) - a.powf(p)) / p;
            let m1 = (b.powf(p + 1.0) - a.powf(p + 1.0)) / (p + 1.0) - a * m0;
            let h0 = dg.values[i];
            let slope = (dg.values[i + 1] - h0) / dt;
            base += h0 * m0 + slope * m1;
        }
        base *= f_base / gamma(1.0 - alpha);
    }
    Ok(-(regular + base))
}

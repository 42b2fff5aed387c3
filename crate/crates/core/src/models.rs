//! Coefficient catalog, Young–Euler solvers and pathwise variational solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fbm::{FbmPath, HurstParam};
use crate::fraccalc::{SampledPath, TimeGrid};

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Constant(DMatrix<f64>),
    /// `(a + b φ(⟨c, x⟩)) E` with `φ = id` or `sin`.
    Scalar {
        a: f64,
        b: f64,
        c: Vec<f64>,
        sine: bool,
        pattern: DMatrix<f64>,
    },
    LinearDrift(f64),
}

/// Regularity metadata used by the assumption checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientMeta {
    /// Lipschitz constant of `x ↦ eval(x)` in the operator norm.
    pub lipschitz: f64,
    /// Whether `eval` is bounded on the whole space.
    pub bounded: bool,
    /// Hölder order of `(σσ*)^{-1}` and its constant, when certified.
    pub gamma: Option<f64>,
    pub holder_constant: Option<f64>,
}

/// A catalog coefficient `R^{input_dim} → R^{rows × cols}` with its analytic
/// directional derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientFn {
    pub name: String,
    pub params: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub input_dim: usize,
    pub meta: CoefficientMeta,
    kind: Kind,
}

pub const CATALOG: [&str; 5] = ["constant", "identity", "affine", "sine-affine", "linear-drift"];

/// Rectangular identity for matrix shapes, all ones for a single column.
fn pattern(rows: usize, cols: usize) -> DMatrix<f64> {
    if cols == 1 {
        DMatrix::from_element(rows, 1, 1.0)
    } else {
        DMatrix::identity(rows, cols)
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Builds a catalog coefficient.
///
/// Parameters by name:
/// - `constant`: one value (filled) or `rows * cols` values in row-major order;
/// - `identity`: none, the constant rectangular identity;
/// - `affine`, `sine-affine`: `[a, b, c...]` giving `(a + b φ(⟨c, x⟩)) E`, with
///   `c` defaulting to all ones and a single `c` broadcast to every component;
/// - `linear-drift`: `[κ]`, the map `x ↦ -κ x` (shape `input_dim × 1`).
pub fn catalog_lookup(name: &str, params: &[f64], shape: (usize, usize), input_dim: usize) -> Result<CoefficientFn> {
    let (rows, cols) = shape;
    if rows == 0 || cols == 0 || input_dim == 0 {
        return Err(Error::ShapeMismatch(format!("{name}: empty shape {rows}×{cols} on R^{input_dim}")));
    }
    if let Some(p) = params.iter().find(|p| !p.is_finite()) {
        return Err(Error::InvalidParameter(format!("{name}: non-finite parameter {p}")));
    }
    let bad_count = |want: &str| Error::InvalidParameter(format!("{name}: expected {want}, got {} parameters", params.len()));
    let (kind, meta) = match name {
        "constant" | "identity" => {
            let m = if name == "identity" {
                if !params.is_empty() {
                    return Err(bad_count("no"));
                }
                DMatrix::identity(rows, cols)
            } else if params.len() == 1 {
                DMatrix::from_element(rows, cols, params[0])
            } else if params.len() == rows * cols {
                DMatrix::from_row_slice(rows, cols, params)
            } else {
                return Err(bad_count(&format!("1 or {}", rows * cols)));
            };
            let meta = CoefficientMeta { lipschitz: 0.0, bounded: true, gamma: None, holder_constant: None };
            (Kind::Constant(m), meta)
        }
        "affine" | "sine-affine" => {
            let c = match params.len() {
                2 => vec![1.0; input_dim],
                3 => vec![params[2]; input_dim],
                k if k == 2 + input_dim => params[2..].to_vec(),
                _ => return Err(bad_count(&format!("2, 3 or {}", 2 + input_dim))),
            };
            let (a, b) = (params[0], params[1]);
            let sine = name == "sine-affine";
            let e = pattern(rows, cols);
            let c_norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            let e_norm = spectral_norm(&e);
            let lipschitz = b.abs() * c_norm * e_norm;
            let mut meta = CoefficientMeta { lipschitz, bounded: sine || b == 0.0, gamma: None, holder_constant: None };
            // (a + b sin)^{-2} (E E*)^{-1} with E E* = I when rows <= cols
            if sine && a > b.abs() && rows <= cols {
                meta.gamma = Some(1.0);
                meta.holder_constant = Some(2.0 * b.abs() * c_norm / (a - b.abs()).powi(3));
            }
            (Kind::Scalar { a, b, c, sine, pattern: e }, meta)
        }
        "linear-drift" => {
            if params.len() != 1 {
                return Err(bad_count("1"));
            }
            if shape != (input_dim, 1) {
                return Err(Error::ShapeMismatch(format!(
                    "linear-drift maps R^{input_dim} to itself, shape {rows}×{cols} requested"
                )));
            }
            let meta =
                CoefficientMeta { lipschitz: params[0].abs(), bounded: params[0] == 0.0, gamma: None, holder_constant: None };
            (Kind::LinearDrift(params[0]), meta)
        }
        other => {
            return Err(Error::Config(format!("unknown coefficient {other:?}; known: {}", CATALOG.join(", "))));
        }
    };
    let mut f = CoefficientFn { name: name.to_string(), params: params.to_vec(), rows, cols, input_dim, meta, kind };
    if let Kind::Constant(m) = &f.kind {
        f.meta.gamma = certify_constant(m).map(|_| 1.0);
        f.meta.holder_constant = f.meta.gamma.map(|_| 0.0);
    }
    Ok(f)
}

fn certify_constant(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let gram = m * m.transpose();
    let cond = condition_number(&gram);
    if cond.is_finite() && cond < 1e12 {
        gram.try_inverse()
    } else {
        None
    }
}

/// 2-norm condition number, infinite for singular input.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let (max, min) = (sv.max(), sv.min());
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

impl CoefficientFn {
    fn check_input(&self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.input_dim, "{}: input dimension", self.name);
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        self.check_input(x);
        match &self.kind {
            Kind::Constant(m) => m.clone(),
            Kind::Scalar { a, b, c, sine, pattern } => {
                let u = dot(c, x);
                let s = a + b * if *sine { u.sin() } else { u };
                pattern * s
            }
            Kind::LinearDrift(k) => DMatrix::from_iterator(x.len(), 1, x.iter().map(|xi| -k * xi)),
        }
    }

    /// `∇F(x) v`, the derivative of `ε ↦ F(x + ε v)` at zero.
    pub fn dir_deriv(&self, x: &[f64], v: &[f64]) -> DMatrix<f64> {
        self.check_input(x);
        self.check_input(v);
        match &self.kind {
            Kind::Constant(m) => DMatrix::zeros(m.nrows(), m.ncols()),
            Kind::Scalar { b, c, sine, pattern, .. } => {
                let slope = if *sine { dot(c, x).cos() } else { 1.0 };
                pattern * (b * slope * dot(c, v))
            }
            Kind::LinearDrift(k) => DMatrix::from_iterator(v.len(), 1, v.iter().map(|vi| -k * vi)),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.kind, Kind::Constant(_))
    }

    /// `(σσ*)^{-1}(x)`, or `None` if it is not invertible there.
    pub fn gram_inverse(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let s = self.eval(x);
        (&s * s.transpose()).try_inverse()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Which SDE family a model belongs to.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    /// `dX = dB`, `dY = σ(X) dB̃`.
    Grushin { sigma: CoefficientFn },
    /// `dX = b1(X) dt + σ1 dB`, `dY = b2(X) dt + σ2(X) dB̃` with constant invertible `σ1`.
    General {
        b1: CoefficientFn,
        b2: CoefficientFn,
        sigma1: DMatrix<f64>,
        sigma1_inv: DMatrix<f64>,
        sigma1_cond: f64,
        sigma2: CoefficientFn,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub d1: usize,
    pub d2: usize,
    pub l: usize,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub hurst: HurstParam,
    pub grid: TimeGrid,
}

fn expect_shape(f: &CoefficientFn, role: &str, rows: usize, cols: usize, input: usize) -> Result<()> {
    if (f.rows, f.cols, f.input_dim) != (rows, cols, input) {
        return Err(Error::ShapeMismatch(format!(
            "{role} ({}) is {}×{} on R^{}, expected {rows}×{cols} on R^{input}",
            f.name, f.rows, f.cols, f.input_dim
        )));
    }
    Ok(())
}

impl ModelSpec {
    pub fn grushin(sigma: CoefficientFn, x0: Vec<f64>, y0: Vec<f64>, hurst: HurstParam, grid: TimeGrid) -> Result<Self> {
        let (d1, d2, l) = (x0.len(), y0.len(), sigma.cols);
        expect_shape(&sigma, "sigma", d2, l, d1)?;
        Ok(ModelSpec { kind: ModelKind::Grushin { sigma }, d1, d2, l, x0, y0, hurst, grid })
    }

    pub fn general(
        b1: CoefficientFn,
        b2: CoefficientFn,
        sigma1: DMatrix<f64>,
        sigma2: CoefficientFn,
        x0: Vec<f64>,
        y0: Vec<f64>,
        hurst: HurstParam,
        grid: TimeGrid,
    ) -> Result<Self> {
        let (d1, d2, l) = (x0.len(), y0.len(), sigma2.cols);
        expect_shape(&b1, "b1", d1, 1, d1)?;
        expect_shape(&b2, "b2", d2, 1, d1)?;
        expect_shape(&sigma2, "sigma2", d2, l, d1)?;
        if sigma1.shape() != (d1, d1) {
            return Err(Error::ShapeMismatch(format!("sigma1 is {:?}, expected {d1}×{d1}", sigma1.shape())));
        }
        let sigma1_cond = condition_number(&sigma1);
        let sigma1_inv = match sigma1.clone().try_inverse() {
            Some(inv) if sigma1_cond < 1e12 => inv,
            _ => return Err(Error::Assumption(format!("sigma1 is not invertible (condition {sigma1_cond:e})"))),
        };
        Ok(ModelSpec {
            kind: ModelKind::General { b1, b2, sigma1, sigma1_inv, sigma1_cond, sigma2 },
            d1,
            d2,
            l,
            x0,
            y0,
            hurst,
            grid,
        })
    }

    /// The coefficient in front of `dB̃`.
    pub fn noise_coefficient(&self) -> &CoefficientFn {
        match &self.kind {
            ModelKind::Grushin { sigma } => sigma,
            ModelKind::General { sigma2, .. } => sigma2,
        }
    }

    /// Same model on another grid.
    pub fn with_grid(&self, grid: TimeGrid) -> Self {
        ModelSpec { grid, ..self.clone() }
    }

    pub fn check_paths(&self, paths: &FbmPath) -> Result<()> {
        if paths.b.grid != self.grid || paths.b_tilde.grid != self.grid {
            return Err(Error::GridMismatch("driving paths and model use different grids".into()));
        }
        if paths.b.dim != self.d1 || paths.b_tilde.dim != self.l {
            return Err(Error::ShapeMismatch(format!(
                "driving paths have dimensions ({}, {}), model needs ({}, {})",
                paths.b.dim, paths.b_tilde.dim, self.d1, self.l
            )));
        }
        Ok(())
    }
}

/// `(X, Y)` on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPath {
    pub x: SampledPath,
    pub y: SampledPath,
}

fn increments(path: &SampledPath, i: usize) -> DVector<f64> {
    DVector::from_iterator(path.dim, (0..path.dim).map(|c| path.increment(i, c)))
}

fn add_into(dst: &mut [f64], src: impl IntoIterator<Item = f64>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn ensure_finite(values: &[f64], step: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { step })
    }
}

/// Left-point Young–Euler solution started from the model's initial point.
pub fn solve(model: &ModelSpec, paths: &FbmPath) -> Result<SolutionPath> {
    solve_from(model, paths, &model.x0, &model.y0)
}

/// Left-point Young–Euler solution from `(x0, y0)`.
pub fn solve_from(model: &ModelSpec, paths: &FbmPath, x0: &[f64], y0: &[f64]) -> Result<SolutionPath> {
    model.check_paths(paths)?;
    if x0.len() != model.d1 || y0.len() != model.d2 {
        return Err(Error::ShapeMismatch("initial point".into()));
    }
    let grid = model.grid;
    let n = grid.steps();
    let dt = grid.dt();
    let mut x = SampledPath::zeros(grid, model.d1);
    let mut y = SampledPath::zeros(grid, model.d2);
    x.at_mut(0).copy_from_slice(x0);
    y.at_mut(0).copy_from_slice(y0);
    match &model.kind {
        ModelKind::Grushin { sigma } => {
            for i in 0..=n {
                let xi: Vec<f64> = x0.iter().zip(paths.b.at(i)).map(|(a, b)| a + b).collect();
                x.at_mut(i).copy_from_slice(&xi);
                if i < n {
                    let dy = sigma.eval(&xi) * increments(&paths.b_tilde, i);
                    let prev = y.at(i).to_vec();
                    let next = y.at_mut(i + 1);
                    next.copy_from_slice(&prev);
                    add_into(next, dy.iter().copied());
                    ensure_finite(next, i + 1)?;
                }
            }
        }
        ModelKind::General { b1, b2, sigma1, sigma2, .. } => {
            // X_i = x0 + Σ_{k<i} b1(X_k) Δ + σ1 B(t_i), the Euler scheme regrouped
            let mut drift = DVector::zeros(model.d1);
            for i in 0..n {
                let xi = x.at(i).to_vec();
                drift += b1.eval(&xi) * dt;
                let noise = sigma1 * DVector::from_column_slice(paths.b.at(i + 1));
                let next = x.at_mut(i + 1);
                for (c, slot) in next.iter_mut().enumerate() {
                    *slot = x0[c] + drift[c] + noise[c];
                }
                ensure_finite(next, i + 1)?;
                let dy = b2.eval(&xi) * dt + sigma2.eval(&xi) * increments(&paths.b_tilde, i);
                let prev = y.at(i).to_vec();
                let next = y.at_mut(i + 1);
                next.copy_from_slice(&prev);
                add_into(next, dy.iter().copied());
                ensure_finite(next, i + 1)?;
            }
        }
    }
    Ok(SolutionPath { x, y })
}

/// Directional derivative of the discrete `X` along `v1`, node by node.
/// For the Grushin model it is constant.
pub fn x_derivative_path(model: &ModelSpec, sol: &SolutionPath, v1: &[f64]) -> SampledPath {
    let grid = model.grid;
    let mut dx = SampledPath::zeros(grid, model.d1);
    dx.at_mut(0).copy_from_slice(v1);
    for i in 0..grid.steps() {
        let cur = dx.at(i).to_vec();
        let next = match &model.kind {
            ModelKind::Grushin { .. } => cur,
            ModelKind::General { b1, .. } => {
                let step = b1.dir_deriv(sol.x.at(i), &cur) * grid.dt();
                cur.iter().zip(step.iter()).map(|(a, b)| a + b).collect()
            }
        };
        dx.at_mut(i + 1).copy_from_slice(&next);
    }
    dx
}

/// `(∇_v X_T, ∇_v Y_T)`: the exact derivative of the discrete scheme in the
/// initial point along `v = (v1, v2)`.
pub fn variational(model: &ModelSpec, paths: &FbmPath, sol: &SolutionPath, v: &[f64]) -> Result<Vec<f64>> {
    model.check_paths(paths)?;
    if v.len() != model.d1 + model.d2 {
        return Err(Error::ShapeMismatch(format!("direction has length {}, expected {}", v.len(), model.d1 + model.d2)));
    }
    let (v1, v2) = v.split_at(model.d1);
    let grid = model.grid;
    let dt = grid.dt();
    let dx = x_derivative_path(model, sol, v1);
    let mut dy = DVector::from_column_slice(v2);
    for i in 0..grid.steps() {
        let xi = sol.x.at(i);
        let dxi = dx.at(i);
        match &model.kind {
            ModelKind::Grushin { sigma } => {
                dy += sigma.dir_deriv(xi, dxi) * increments(&paths.b_tilde, i);
            }
            ModelKind::General { b2, sigma2, .. } => {
                dy += b2.dir_deriv(xi, dxi) * dt + sigma2.dir_deriv(xi, dxi) * increments(&paths.b_tilde, i);
            }
        }
    }
    let mut out = dx.last().to_vec();
    out.extend(dy.iter());
    ensure_finite(&out, grid.steps())?;
    Ok(out)
}

/// Checks the catalog-decidable assumptions of each theorem:
/// bounded Lipschitz coefficients, and for `"3.2"` an `(σσ*)^{-1}` Hölder certificate.
pub fn check_assumptions(model: &ModelSpec, theorem: Theorem) -> Result<()> {
    match (&model.kind, theorem) {
        (ModelKind::Grushin { sigma }, Theorem::M) => {
            if !sigma.meta.lipschitz.is_finite() {
                return Err(Error::Assumption("sigma must have a bounded derivative".into()));
            }
            if model.d2 > model.l {
                return Err(Error::Assumption(format!("σσ* is {0}×{0} of rank at most l = {1}", model.d2, model.l)));
            }
            constant_gram(sigma, &model.x0)
        }
        (ModelKind::Grushin { sigma }, Theorem::MTilde) => {
            if sigma.meta.gamma.is_none() {
                return Err(Error::Assumption(format!(
                    "{} carries no Hölder certificate for (σσ*)^-1; use a constant invertible or a sine-affine coefficient with a > |b|",
                    sigma.name
                )));
            }
            let gamma = sigma.meta.gamma.unwrap_or(1.0);
            let h = model.hurst.value();
            if h > 0.5 && gamma <= 1.0 - 1.0 / (2.0 * h) {
                return Err(Error::Assumption(format!("γ = {gamma} must exceed 1 - 1/(2H)")));
            }
            Ok(())
        }
        (ModelKind::General { b1, b2, sigma2, .. }, Theorem::N) => {
            for f in [b1, b2, sigma2] {
                if !f.meta.lipschitz.is_finite() {
                    return Err(Error::Assumption(format!("{} must have a bounded derivative", f.name)));
                }
            }
            if model.d2 > model.l {
                return Err(Error::Assumption(format!("σ2σ2* is {0}×{0} of rank at most l = {1}", model.d2, model.l)));
            }
            constant_gram(sigma2, &model.x0)
        }
        (ModelKind::Grushin { .. }, Theorem::N) => Err(Error::Assumption("the N weight needs a general model".into())),
        (ModelKind::General { .. }, _) => Err(Error::Assumption("the M weights need a Grushin model".into())),
    }
}

/// A constant coefficient has Gram integral `T σσ*`, invertible or not on every path.
fn constant_gram(sigma: &CoefficientFn, x0: &[f64]) -> Result<()> {
    if sigma.is_constant() && sigma.gram_inverse(x0).is_none() {
        return Err(Error::Assumption(format!("{}: σσ* is singular, so the Gram integral is never invertible", sigma.name)));
    }
    Ok(())
}

/// Which derivative formula a weight instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Theorem {
    /// Gram-matrix weight for the Grushin model.
    #[serde(rename = "3.1")]
    M,
    /// Pointwise-inverse weight for the Grushin model.
    #[serde(rename = "3.2")]
    MTilde,
    /// Weight for the model with drift.
    #[serde(rename = "4.1")]
    N,
}

impl Theorem {
    pub fn tag(self) -> &'static str {
        match self {
            Theorem::M => "3.1",
            Theorem::MTilde => "3.2",
            Theorem::N => "4.1",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{CholeskySampler, KernelTable, WienerPair};
    use crate::fraccalc::compute_constants;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sine(a: f64, b: f64, shape: (usize, usize), d1: usize) -> CoefficientFn {
        catalog_lookup("sine-affine", &[a, b, 1.0], shape, d1).unwrap()
    }

    fn grushin_1d(sigma: CoefficientFn, h: f64, n: usize) -> ModelSpec {
        let grid = TimeGrid::new(1.0, n).unwrap();
        ModelSpec::grushin(sigma, vec![0.3], vec![-0.2], HurstParam::new(h).unwrap(), grid).unwrap()
    }

    fn volterra_paths(model: &ModelSpec, index: u64) -> FbmPath {
        let c = compute_constants(model.hurst.value()).unwrap();
        let table = KernelTable::build(&c, model.grid);
        let w = WienerPair::draw(7, index, model.grid, model.d1, model.l);
        FbmPath::from_wiener(&table, &w).unwrap()
    }

    #[test]
    fn catalog_examples() {
        let one = catalog_lookup("constant", &[1.0], (1, 1), 1).unwrap();
        assert_eq!(one.eval(&[0.4])[(0, 0)], 1.0);
        assert_eq!(one.dir_deriv(&[0.4], &[2.0])[(0, 0)], 0.0);
        let s = sine(2.0, 1.0, (1, 1), 1);
        assert_eq!(s.eval(&[0.0])[(0, 0)], 2.0);
        assert_eq!(s.dir_deriv(&[0.0], &[0.7])[(0, 0)], 0.7);
        assert_eq!(s.meta.gamma, Some(1.0));
        assert!(catalog_lookup("cubic", &[], (1, 1), 1).is_err());
        assert!(catalog_lookup("linear-drift", &[1.0], (2, 2), 2).is_err());
        assert!(catalog_lookup("constant", &[1.0, 2.0], (2, 2), 1).is_err());
    }

    #[test]
    fn dir_deriv_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let coeffs = [
            catalog_lookup("sine-affine", &[2.0, 1.0, 0.5, -1.5], (2, 2), 2).unwrap(),
            catalog_lookup("sine-affine", &[0.0, 0.5], (2, 1), 2).unwrap(),
            catalog_lookup("affine", &[1.0, 0.3, 2.0, 1.0], (2, 3), 2).unwrap(),
            catalog_lookup("linear-drift", &[1.3], (2, 1), 2).unwrap(),
            catalog_lookup("constant", &[1.0, 2.0, 3.0, 4.0], (2, 2), 2).unwrap(),
        ];
        let eps = 1e-6;
        for f in &coeffs {
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let x: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
                let v: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
                let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + eps * b).collect();
                let xm: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - eps * b).collect();
                let fd = (f.eval(&xp) - f.eval(&xm)) / (2.0 * eps);
                worst = worst.max((fd - f.dir_deriv(&x, &v)).amax());
            }
            assert!(worst <= 1e-8, "{}: {worst:e}", f.name);
        }
    }

    #[test]
    fn holder_certificate_holds_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (a, b, c) in [(2.0, 1.0, 1.0), (1.5, -1.2, 3.0), (3.0, 0.5, 0.2)] {
            let s = catalog_lookup("sine-affine", &[a, b, c], (1, 1), 1).unwrap();
            let k = s.meta.holder_constant.unwrap();
            for _ in 0..1000 {
                let z1 = rng.random_range(-5.0..5.0);
                let z2 = z1 + rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-6..1));
                let lhs = (s.gram_inverse(&[z1]).unwrap() - s.gram_inverse(&[z2]).unwrap()).amax();
                assert!(lhs <= k * (z1 - z2).abs() * (1.0 + 1e-9) + 1e-15, "a={a} b={b}: {lhs} > {}", k * (z1 - z2).abs());
            }
        }
        assert_eq!(sine(1.0, 1.0, (1, 1), 1).meta.gamma, None);
    }

    #[test]
    fn constant_identity_sigma_telescopes() {
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let sigma = catalog_lookup("identity", &[], (2, 2), 1).unwrap();
        let model = ModelSpec::grushin(sigma, vec![0.0], vec![1.0, -1.0], HurstParam::new(0.7).unwrap(), grid).unwrap();
        let paths = volterra_paths(&model, 0);
        let sol = solve(&model, &paths).unwrap();
        for c in 0..2 {
            assert!((sol.y.last()[c] - model.y0[c] - paths.b_tilde.last()[c]).abs() < 1e-14);
        }
        assert_eq!(sol.x.at(17)[0], paths.b.at(17)[0]);
        let v = variational(&model, &paths, &sol, &[0.4, 1.0, 2.0]).unwrap();
        assert_eq!(v, vec![0.4, 1.0, 2.0]);
    }

    #[test]
    fn general_without_drift_is_grushin() {
        let grid = TimeGrid::new(1.0, 128).unwrap();
        let h = HurstParam::new(0.75).unwrap();
        let sigma = catalog_lookup("sine-affine", &[2.0, 1.0, 1.0, -0.5], (2, 2), 2).unwrap();
        let zero1 = catalog_lookup("constant", &[0.0], (2, 1), 2).unwrap();
        let zero2 = catalog_lookup("constant", &[0.0], (2, 1), 2).unwrap();
        let g = ModelSpec::grushin(sigma.clone(), vec![0.1, 0.2], vec![0.0, 1.0], h, grid).unwrap();
        let m =
            ModelSpec::general(zero1, zero2, DMatrix::identity(2, 2), sigma, vec![0.1, 0.2], vec![0.0, 1.0], h, grid).unwrap();
        let paths = volterra_paths(&g, 3);
        let (a, b) = (solve(&g, &paths).unwrap(), solve(&m, &paths).unwrap());
        assert_eq!(a, b);
        let v = [1.0, -1.0, 0.5, 2.0];
        assert_eq!(variational(&g, &paths, &a, &v).unwrap(), variational(&m, &paths, &b, &v).unwrap());
    }

    #[test]
    fn linear_drift_variation_is_exponential() {
        let grid = TimeGrid::new(1.0, 1024).unwrap();
        let h = HurstParam::new(0.75).unwrap();
        let b1 = catalog_lookup("linear-drift", &[1.0], (1, 1), 1).unwrap();
        let b2 = catalog_lookup("sine-affine", &[0.0, 1.0], (1, 1), 1).unwrap();
        let model = ModelSpec::general(b1, b2, DMatrix::identity(1, 1), sine(2.0, 1.0, (1, 1), 1), vec![0.5], vec![0.0], h, grid)
            .unwrap();
        let paths = volterra_paths(&model, 1);
        let sol = solve(&model, &paths).unwrap();
        let v = variational(&model, &paths, &sol, &[1.0, 0.0]).unwrap();
        assert!((v[0] - (-1.0f64).exp()).abs() <= 1e-3, "{}", v[0]);
    }

    fn fd_vs_variational(model: &ModelSpec, paths: &FbmPath, v: &[f64]) -> f64 {
        let eps = 1e-5;
        let shift = |s: f64| -> Vec<f64> {
            let x0: Vec<f64> = model.x0.iter().zip(v).map(|(a, b)| a + s * b).collect();
            let y0: Vec<f64> = model.y0.iter().zip(&v[model.d1..]).map(|(a, b)| a + s * b).collect();
            let sol = solve_from(model, paths, &x0, &y0).unwrap();
            let mut out = sol.x.last().to_vec();
            out.extend_from_slice(sol.y.last());
            out
        };
        let (p, m) = (shift(eps), shift(-eps));
        let sol = solve(model, paths).unwrap();
        let exact = variational(model, paths, &sol, v).unwrap();
        p.iter().zip(&m).zip(&exact).map(|((a, b), e)| ((a - b) / (2.0 * eps) - e).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn variational_matches_crn_differences() {
        let model = grushin_1d(sine(2.0, 1.0, (1, 1), 1), 0.75, 256);
        let paths = volterra_paths(&model, 2);
        for v in [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]] {
            assert!(fd_vs_variational(&model, &paths, &v) <= 1e-4);
        }
        let grid = TimeGrid::new(1.0, 256).unwrap();
        let h = HurstParam::new(0.75).unwrap();
        let general = ModelSpec::general(
            catalog_lookup("linear-drift", &[1.0], (2, 1), 2).unwrap(),
            catalog_lookup("sine-affine", &[0.0, 1.0, 1.0, 0.5], (2, 1), 2).unwrap(),
            DMatrix::identity(2, 2),
            catalog_lookup("sine-affine", &[2.0, 1.0, 1.0, -1.0], (2, 2), 2).unwrap(),
            vec![0.2, -0.4],
            vec![0.0, 0.1],
            h,
            grid,
        )
        .unwrap();
        let paths = volterra_paths(&general, 5);
        assert!(fd_vs_variational(&general, &paths, &[1.0, -0.5, 0.3, 2.0]) <= 1e-4);
    }

    #[test]
    fn variational_is_linear() {
        let model = grushin_1d(sine(2.0, 1.0, (1, 1), 1), 0.75, 128);
        let paths = volterra_paths(&model, 4);
        let sol = solve(&model, &paths).unwrap();
        let (u, w) = ([0.3, -1.1], [2.0, 0.7]);
        let lin: Vec<f64> = u.iter().zip(&w).map(|(a, b)| 2.0 * a - 3.0 * b).collect();
        let (vu, vw, vl) = (
            variational(&model, &paths, &sol, &u).unwrap(),
            variational(&model, &paths, &sol, &w).unwrap(),
            variational(&model, &paths, &sol, &lin).unwrap(),
        );
        for k in 0..2 {
            assert!((vl[k] - (2.0 * vu[k] - 3.0 * vw[k])).abs() <= 1e-12);
        }
    }

    /// RMS of `Y_n(T) - Y_{2n}(T)` for `n = 128, 256, 512` on fine Cholesky
    /// paths subsampled to each level, and the fitted rate.
    fn self_convergence(hurst: f64) -> (Vec<f64>, f64) {
        let fine = TimeGrid::new(1.0, 1024).unwrap();
        let h = HurstParam::new(hurst).unwrap();
        let sampler = CholeskySampler::new(h, fine).unwrap();
        let sigma = sine(2.0, 1.0, (1, 1), 1);
        let levels = [128usize, 256, 512, 1024];
        let samples = 400;
        let mut sq = vec![0.0; levels.len() - 1];
        for s in 0..samples {
            let b = sampler.sample(1, 19, 2 * s);
            let bt = sampler.sample(1, 19, 2 * s + 1);
            let yt: Vec<f64> = levels
                .iter()
                .map(|&n| {
                    let factor = 1024 / n;
                    let grid = fine.coarsen(factor).unwrap();
                    let sub = |p: &SampledPath| {
                        SampledPath::from_data(grid, 1, (0..=n).map(|i| p.at(i * factor)[0]).collect()).unwrap()
                    };
                    let paths = FbmPath { b: sub(&b), b_tilde: sub(&bt) };
                    let model = ModelSpec::grushin(sigma.clone(), vec![0.3], vec![0.0], h, grid).unwrap();
                    solve(&model, &paths).unwrap().y.last()[0]
                })
                .collect();
            for k in 0..sq.len() {
                sq[k] += (yt[k] - yt[k + 1]).powi(2) / samples as f64;
            }
        }
        let rms: Vec<f64> = sq.iter().map(|v| v.sqrt()).collect();
        let rate = (rms[0] / rms[2]).log2() / 2.0;
        (rms, rate)
    }

    #[test]
    fn young_euler_self_convergence() {
        let (rms, rate) = self_convergence(0.9);
        assert!(rate >= 1.0, "differences {rms:?}, rate {rate}");
    }

    #[test]
    fn young_euler_self_convergence_at_three_quarters() {
        // the left-point scheme converges like Δ^{2H-1/2}; at H = 3/4 that is
        // Δ (log Δ)^{1/2}, so the fitted rate sits slightly below one
        let (rms, rate) = self_convergence(0.75);
        for w in rms.windows(2) {
            assert!(w[0] / w[1] >= 1.8, "differences {rms:?}");
        }
        assert!(rate >= 0.9, "differences {rms:?}, rate {rate}");
    }
}

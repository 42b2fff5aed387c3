//! Monte Carlo estimators, three-way verification of the derivative formulas
//! and the gradient-bound scan.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::{sample_rng, FbmPath, KernelTable, WienerPair};
use crate::fraccalc::{compute_constants, FracConstants, TimeGrid};
use crate::models::{check_assumptions, solve, solve_from, variational, ModelKind, ModelSpec, SolutionPath, Theorem};
use crate::weights::{DirectionVector, WeightEngine};

/// Largest tolerated fraction of excluded (degenerate) samples.
pub const EXCLUSION_BUDGET: f64 = 1e-3;
/// Paired z-score threshold of the verification runs.
pub const Z_THRESHOLD: f64 = 3.0;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub excluded: usize,
}

impl McEstimate {
    /// Mean and `std / sqrt(n)` of `values`, summed in index order.
    pub fn from_samples(values: &[f64], excluded: usize) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::AllExcluded(excluded));
        }
        if n < 2 {
            return Err(Error::InvalidParameter("at least two samples are needed for a standard error".into()));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        Ok(McEstimate { mean, stderr: (var / n as f64).sqrt(), n, excluded })
    }
}

/// `mean / stderr`, taken as zero when both vanish.
pub fn z_score(mean: f64, stderr: f64) -> f64 {
    if stderr == 0.0 {
        if mean == 0.0 {
            0.0
        } else {
            mean.signum() * f64::INFINITY
        }
    } else {
        mean / stderr
    }
}

/// z-score of the per-sample differences `a - b`.
pub fn paired_z(a: &[f64], b: &[f64]) -> Result<f64> {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let e = McEstimate::from_samples(&d, 0)?;
    Ok(z_score(e.mean, e.stderr))
}

/// z-score of the difference of two estimates with independent errors.
pub fn combined_z(a: &McEstimate, b: &McEstimate) -> f64 {
    z_score(a.mean - b.mean, a.stderr.hypot(b.stderr))
}

/// Evaluates `f(i)` for `i = 0..n` on `workers` threads and returns the
/// results in index order.
pub fn map_samples<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if workers > 1 {
        use rayon::prelude::*;
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            return pool.install(|| (0..n as u64).into_par_iter().map(&f).collect());
        }
    }
    let _ = workers;
    (0..n as u64).map(f).collect()
}

/// Runs a vector-valued per-sample evaluator and splits the results into
/// columns, dropping samples that fail with a per-sample error.
pub fn sample_columns<F>(n: usize, workers: usize, width: usize, f: F) -> Result<(Vec<Vec<f64>>, usize)>
where
    F: Fn(u64) -> Result<Vec<f64>> + Sync + Send,
{
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need at least two samples, got {n}")));
    }
    let results = map_samples(n, workers, f);
    let mut columns = vec![Vec::with_capacity(n); width];
    let mut excluded = 0;
    for r in results {
        match r {
            Ok(row) => {
                for (col, v) in columns.iter_mut().zip(row) {
                    col.push(v);
                }
            }
            Err(e) if e.is_per_sample() => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    let budget = (EXCLUSION_BUDGET * n as f64).floor() as usize;
    if excluded == n {
        return Err(Error::AllExcluded(n));
    }
    if excluded > budget {
        return Err(Error::ExclusionBudget { excluded, n, budget });
    }
    Ok((columns, excluded))
}

/// Monte Carlo mean of `evaluator(rng, index)` where `rng` is the stream of
/// sample `index` under `seed`.
pub fn mc_estimate<F>(evaluator: F, n: usize, seed: u64, workers: usize) -> Result<McEstimate>
where
    F: Fn(&mut ChaCha8Rng, u64) -> Result<f64> + Sync + Send,
{
    let (cols, excluded) = sample_columns(n, workers, 1, |i| {
        let mut rng = sample_rng(seed, i);
        evaluator(&mut rng, i).map(|v| vec![v])
    })?;
    McEstimate::from_samples(&cols[0], excluded)
}

/// Bounded `C^1` test functions of `(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum TestFunction {
    /// `sin(⟨a, x⟩ + ⟨b, y⟩)`; empty coefficient lists mean all ones.
    Sin {
        #[serde(default)]
        a: Vec<f64>,
        #[serde(default)]
        b: Vec<f64>,
    },
    /// `tanh(⟨a, x⟩ + ⟨b, y⟩)`.
    Tanh {
        #[serde(default)]
        a: Vec<f64>,
        #[serde(default)]
        b: Vec<f64>,
    },
    Constant {
        #[serde(default = "one")]
        value: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl TestFunction {
    pub fn sin() -> Self {
        TestFunction::Sin { a: vec![], b: vec![] }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TestFunction::Sin { .. } => "sin",
            TestFunction::Tanh { .. } => "tanh",
            TestFunction::Constant { .. } => "constant",
        }
    }

    fn coefficients(a: &[f64], len: usize) -> Result<Vec<f64>> {
        match a.len() {
            0 => Ok(vec![1.0; len]),
            k if k == len => Ok(a.to_vec()),
            k => Err(Error::ShapeMismatch(format!("test-function coefficients of length {k}, expected {len}"))),
        }
    }

    /// Fills in default coefficients and checks lengths against `(d1, d2)`.
    pub fn resolve(&self, d1: usize, d2: usize) -> Result<Self> {
        Ok(match self {
            TestFunction::Sin { a, b } => TestFunction::Sin { a: Self::coefficients(a, d1)?, b: Self::coefficients(b, d2)? },
            TestFunction::Tanh { a, b } => TestFunction::Tanh { a: Self::coefficients(a, d1)?, b: Self::coefficients(b, d2)? },
            TestFunction::Constant { value } => TestFunction::Constant { value: *value },
        })
    }

    fn argument(a: &[f64], b: &[f64], x: &[f64], y: &[f64]) -> f64 {
        a.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() + b.iter().zip(y).map(|(p, q)| p * q).sum::<f64>()
    }

    /// Must be called on a [`TestFunction::resolve`]d value.
    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            TestFunction::Sin { a, b } => Self::argument(a, b, x, y).sin(),
            TestFunction::Tanh { a, b } => Self::argument(a, b, x, y).tanh(),
            TestFunction::Constant { value } => *value,
        }
    }

    /// `⟨∇f(x, y), (u1, u2)⟩` for a stacked direction `u`.
    pub fn directional(&self, x: &[f64], y: &[f64], u: &[f64]) -> f64 {
        let (a, b, slope) = match self {
            TestFunction::Sin { a, b } => (a, b, Self::argument(a, b, x, y).cos()),
            TestFunction::Tanh { a, b } => {
                let t = Self::argument(a, b, x, y).tanh();
                (a, b, 1.0 - t * t)
            }
            TestFunction::Constant { .. } => return 0.0,
        };
        let (u1, u2) = u.split_at(x.len());
        slope * Self::argument(a, b, u1, u2)
    }
}

/// Driving noise, fBm paths and solution of one sample.
#[derive(Debug, Clone)]
pub struct Sample {
    pub wiener: WienerPair,
    pub paths: FbmPath,
    pub solution: SolutionPath,
}

/// A model with its per-configuration tables.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub model: ModelSpec,
    pub constants: FracConstants,
    table: KernelTable,
    engine: WeightEngine,
}

impl Simulator {
    pub fn new(model: ModelSpec, cache_dir: Option<&Path>) -> Result<Self> {
        let constants = compute_constants(model.hurst.value())?;
        let table = KernelTable::load_or_build(&constants, model.grid, cache_dir);
        let engine = WeightEngine::new(&constants, model.grid);
        Ok(Simulator { model, constants, table, engine })
    }

    pub fn engine(&self) -> &WeightEngine {
        &self.engine
    }

    pub fn sample(&self, seed: u64, index: u64) -> Result<Sample> {
        let m = &self.model;
        let wiener = WienerPair::draw(seed, index, m.grid, m.d1, m.l);
        let paths = FbmPath::from_wiener(&self.table, &wiener)?;
        let solution = solve(m, &paths)?;
        Ok(Sample { wiener, paths, solution })
    }
}

/// Central finite difference of `f(X_T, Y_T)` in the initial point on the
/// sample's own driving path.
pub fn crn_difference(model: &ModelSpec, sample: &Sample, f: &TestFunction, v: &DirectionVector, eps: f64) -> Result<f64> {
    let shifted = |s: f64| -> Result<f64> {
        let x0: Vec<f64> = model.x0.iter().zip(&v.v1).map(|(a, b)| a + s * b).collect();
        let y0: Vec<f64> = model.y0.iter().zip(&v.v2).map(|(a, b)| a + s * b).collect();
        let sol = solve_from(model, &sample.paths, &x0, &y0)?;
        Ok(f.value(sol.x.last(), sol.y.last()))
    };
    Ok((shifted(eps)? - shifted(-eps)?) / (2.0 * eps))
}

/// Finite-difference step `1e-4 / (1 + |v|)`.
pub fn fd_step(v: &DirectionVector) -> f64 {
    1e-4 / (1.0 + v.norm())
}

/// Echo of the inputs of a verification run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunEcho {
    pub theorem: Theorem,
    pub hurst: f64,
    pub horizon: f64,
    pub steps: usize,
    pub samples: usize,
    pub seed: u64,
    pub v: Vec<f64>,
    pub f: String,
}

/// Weight estimate, pathwise oracle and finite difference of `∇_v P_T f`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub weight_est: McEstimate,
    pub oracle_est: McEstimate,
    pub fd_est: McEstimate,
    /// Paired z of `f·weight - oracle`.
    pub z_weight_oracle: f64,
    /// Paired z of `f·weight - fd`.
    pub z_weight_fd: f64,
    /// Oracle against finite difference with independent errors; the paired
    /// differences are rounding-level and carry no scale.
    pub z_oracle_fd: f64,
    pub config: RunEcho,
    pub pass: bool,
}

/// Three-way check of the derivative formula of `theorem`.
pub fn verify_derivative(
    sim: &Simulator,
    theorem: Theorem,
    v: &DirectionVector,
    f: &TestFunction,
    n: usize,
    seed: u64,
    workers: usize,
) -> Result<VerificationReport> {
    let model = &sim.model;
    check_assumptions(model, theorem)?;
    let f = f.resolve(model.d1, model.d2)?;
    let eps = fd_step(v);
    let stacked = v.concat();
    let (cols, excluded) = sample_columns(n, workers, 3, |i| {
        let s = sim.sample(seed, i)?;
        let (xt, yt) = (s.solution.x.last(), s.solution.y.last());
        let w = sim.engine.weight(theorem, model, &s.solution, &s.paths, &s.wiener, v)?;
        let grad = variational(model, &s.paths, &s.solution, &stacked)?;
        let oracle = f.directional(xt, yt, &grad);
        let fd = crn_difference(model, &s, &f, v, eps)?;
        Ok(vec![f.value(xt, yt) * w.total, oracle, fd])
    })?;
    let est = |k: usize| McEstimate::from_samples(&cols[k], excluded);
    let (weight_est, oracle_est, fd_est) = (est(0)?, est(1)?, est(2)?);
    let z_weight_oracle = paired_z(&cols[0], &cols[1])?;
    let z_weight_fd = paired_z(&cols[0], &cols[2])?;
    let z_oracle_fd = combined_z(&oracle_est, &fd_est);
    let pass = z_weight_oracle.abs() <= Z_THRESHOLD && z_weight_fd.abs() <= Z_THRESHOLD;
    Ok(VerificationReport {
        weight_est,
        oracle_est,
        fd_est,
        z_weight_oracle,
        z_weight_fd,
        z_oracle_fd,
        config: RunEcho {
            theorem,
            hurst: model.hurst.value(),
            horizon: model.grid.horizon(),
            steps: model.grid.steps(),
            samples: n,
            seed,
            v: stacked,
            f: f.name().to_string(),
        },
        pass,
    })
}

/// Two weights for the same derivative estimated on the same samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightComparison {
    pub first: McEstimate,
    pub second: McEstimate,
    /// Difference over `sqrt(se1² + se2²)`.
    pub z_combined: f64,
    pub z_paired: f64,
}

pub fn compare_weights(
    sim: &Simulator,
    first: Theorem,
    second: Theorem,
    v: &DirectionVector,
    f: &TestFunction,
    n: usize,
    seed: u64,
    workers: usize,
) -> Result<WeightComparison> {
    let model = &sim.model;
    check_assumptions(model, first)?;
    check_assumptions(model, second)?;
    let f = f.resolve(model.d1, model.d2)?;
    let (cols, excluded) = sample_columns(n, workers, 2, |i| {
        let s = sim.sample(seed, i)?;
        let fx = f.value(s.solution.x.last(), s.solution.y.last());
        let a = sim.engine.weight(first, model, &s.solution, &s.paths, &s.wiener, v)?;
        let b = sim.engine.weight(second, model, &s.solution, &s.paths, &s.wiener, v)?;
        Ok(vec![fx * a.total, fx * b.total])
    })?;
    let a = McEstimate::from_samples(&cols[0], excluded)?;
    let b = McEstimate::from_samples(&cols[1], excluded)?;
    Ok(WeightComparison { first: a, second: b, z_combined: combined_z(&a, &b), z_paired: paired_z(&cols[0], &cols[1])? })
}

/// Parameters of the gradient-bound scan.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundScanSpec {
    pub p: f64,
    pub epsilon_tilde: f64,
    pub horizons: Vec<f64>,
}

impl BoundScanSpec {
    /// Default `ε̃ = (H - (H - 1/2)/γ) / 2`.
    pub fn default_epsilon(hurst: f64, gamma: f64) -> f64 {
        0.5 * (hurst - (hurst - 0.5) / gamma)
    }

    pub fn validate(&self, hurst: f64, gamma: f64) -> Result<()> {
        let p_min = 1.0 / (1.5 - hurst);
        if !(self.p > p_min) {
            return Err(Error::InvalidParameter(format!("p = {} must exceed 1/(3/2 - H) = {p_min}", self.p)));
        }
        let eps_max = hurst - (hurst - 0.5) / gamma;
        if !(self.epsilon_tilde < eps_max) {
            return Err(Error::InvalidParameter(format!(
                "epsilon-tilde = {} must be below H - (H - 1/2)/γ = {eps_max}",
                self.epsilon_tilde
            )));
        }
        if self.horizons.is_empty() || self.horizons.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::InvalidParameter("horizons must be positive and non-empty".into()));
        }
        Ok(())
    }
}

/// One horizon of the bound scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundScanRow {
    pub horizon: f64,
    pub lhs: f64,
    pub lhs_stderr: f64,
    pub envelope: f64,
    pub ratio: f64,
    /// `lhs_stderr / envelope`, the sampling error of the ratio driven by the gradient.
    pub ratio_stderr: f64,
}

/// Bracketed time factor of the gradient bound.
pub fn envelope_factor(v: &DirectionVector, hurst: f64, gamma: f64, eps: f64, horizon: f64) -> f64 {
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let t = horizon;
    let a = hurst - eps;
    norm(&v.v1) * (t.powf(-hurst) + 1.0 + t.powf(gamma * a) + t.powf(a))
        + norm(&v.v2) * (t.powf(-hurst) + t.powf(-(hurst - gamma * a)))
}

/// Scans `|∇_v P_T f|` against `(P_T |f|^p)^{1/p}` times the time factor of
/// the bound over `spec.horizons`, keeping the step count of `model`.
pub fn bound_scan(
    model: &ModelSpec,
    v: &DirectionVector,
    f: &TestFunction,
    spec: &BoundScanSpec,
    n: usize,
    seed: u64,
    workers: usize,
    cache_dir: Option<&Path>,
) -> Result<Vec<BoundScanRow>> {
    let ModelKind::Grushin { sigma } = &model.kind else {
        return Err(Error::Assumption("the bound scan needs a Grushin model".into()));
    };
    check_assumptions(model, Theorem::MTilde)?;
    let gamma = sigma.meta.gamma.ok_or_else(|| Error::Assumption("sigma carries no Hölder certificate".into()))?;
    let hurst = model.hurst.value();
    spec.validate(hurst, gamma)?;
    let f = f.resolve(model.d1, model.d2)?;
    let stacked = v.concat();
    let steps = model.grid.steps();
    spec.horizons
        .iter()
        .map(|&horizon| {
            let sim = Simulator::new(model.with_grid(TimeGrid::new(horizon, steps)?), cache_dir)?;
            let (cols, excluded) = sample_columns(n, workers, 2, |i| {
                let s = sim.sample(seed, i)?;
                let (xt, yt) = (s.solution.x.last(), s.solution.y.last());
                let grad = variational(&sim.model, &s.paths, &s.solution, &stacked)?;
                Ok(vec![f.directional(xt, yt, &grad), f.value(xt, yt).abs().powf(spec.p)])
            })?;
            let grad = McEstimate::from_samples(&cols[0], excluded)?;
            let moment = McEstimate::from_samples(&cols[1], excluded)?;
            let envelope = moment.mean.powf(1.0 / spec.p) * envelope_factor(v, hurst, gamma, spec.epsilon_tilde, horizon);
            if !(envelope > 0.0) {
                return Err(Error::DegenerateSample(format!("envelope {envelope} at T = {horizon}")));
            }
            Ok(BoundScanRow {
                horizon,
                lhs: grad.mean.abs(),
                lhs_stderr: grad.stderr,
                envelope,
                ratio: grad.mean.abs() / envelope,
                ratio_stderr: grad.stderr / envelope,
            })
        })
        .collect()
}

/// Row with the largest ratio.
pub fn max_ratio(rows: &[BoundScanRow]) -> Option<BoundScanRow> {
    rows.iter().copied().max_by(|a, b| a.ratio.total_cmp(&b.ratio))
}

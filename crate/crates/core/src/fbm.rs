//! Fractional Brownian motion: covariance, the Volterra kernel for `H > 1/2`,
//! exact (Cholesky) and kernel-based path samplers, and the closed-form
//! inverse of the kernel operator applied to antiderivatives.

use crate::error::{Error, Result};
use crate::fraccalc::{FracConstants, SampledFn, SampledPath, TimeGrid};
use crate::quad;
use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

/// Number of Gauss points used per cell when averaging the kernel.
pub const KERNEL_GAUSS_POINTS: usize = 4;

/// Hurst index restricted to `[1/2, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct HurstParam(f64);

impl HurstParam {
    pub fn new(h: f64) -> Result<Self> {
        if !(0.5..1.0).contains(&h) {
            return Err(Error::InvalidParameter(format!("Hurst parameter must lie in [1/2, 1), got {h}")));
        }
        Ok(HurstParam(h))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_brownian(self) -> bool {
        self.0 == 0.5
    }
}

/// `R_H(t, s) = (t^{2H} + s^{2H} - |t - s|^{2H}) / 2`.
pub fn covariance(h: HurstParam, t: f64, s: f64) -> Result<f64> {
    if t < 0.0 || s < 0.0 {
        return Err(Error::InvalidParameter(format!("covariance needs t, s >= 0, got ({t}, {s})")));
    }
    let two_h = 2.0 * h.0;
    Ok(0.5 * (t.powf(two_h) + s.powf(two_h) - (t - s).abs().powf(two_h)))
}

/// Volterra kernel `K_H(t, s) = c_K s^{1/2-H} ∫_s^t (u-s)^{H-3/2} u^{H-1/2} du`
/// for `0 < s < t`, zero outside its support, and the indicator at `H = 1/2`.
pub fn kernel_kh(c: &FracConstants, t: f64, s: f64) -> f64 {
    if !(s > 0.0 && s < t) {
        return 0.0;
    }
    let Some(ck) = c.c_kernel else {
        return 1.0;
    };
    let beta = c.beta();
    ck * s.powf(-beta) * singular_inner(s, t, beta, 1e-12)
}

/// `∫_s^b (u-s)^{β-1} u^β du` with the `s^β (u-s)^{β-1}` part integrated in
/// closed form; near `β = 0` the raw integrand is too singular for quadrature.
fn singular_inner(s: f64, b: f64, beta: f64, tol: f64) -> f64 {
    let head = s.powf(beta) * (b - s).powf(beta) / beta;
    let rest = quad_value(quad::tanh_sinh(
        |_, dl, _| dl.powf(beta - 1.0) * s.powf(beta) * (beta * (dl / s).ln_1p()).exp_m1(),
        s,
        b,
        tol,
    ));
    head + rest
}

/// Best available estimate; tanh-sinh only misses its tolerance by rounding here.
fn quad_value(q: Result<quad::QuadEstimate>) -> f64 {
    match q {
        Ok(q) => q.value,
        Err(Error::Quadrature { estimate, .. }) => estimate,
        Err(_) => f64::NAN,
    }
}

/// `∫_0^{t∧s} K_H(t, r) K_H(s, r) dr`, which reproduces `R_H(t, s)`.
pub fn factorized_covariance(c: &FracConstants, t: f64, s: f64) -> Result<f64> {
    let upper = t.min(s);
    if upper <= 0.0 {
        return Ok(0.0);
    }
    if c.c_kernel.is_none() {
        return Ok(upper);
    }
    let q = quad::tanh_sinh(|_, r, _| kernel_kh(c, t, r) * kernel_kh(c, s, r), 0.0, upper, 1e-10)?;
    Ok(q.value)
}

/// Cell averages `κ(i, k) = Δ^{-1} ∫_{t_k}^{t_{k+1}} K_H(t_i, s) ds` for
/// `1 <= i <= n`, `0 <= k < n` (zero for `k >= i`), stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    pub hurst: f64,
    pub grid: TimeGrid,
    pub gauss_points: usize,
    rows: Vec<f64>,
}

impl KernelTable {
    /// Builds the table on a unit-spaced grid and rescales: `K_H` is
    /// homogeneous of degree `H - 1/2`. For a fixed Gauss point `s` the inner
    /// integral over `[s, t_i]` is accumulated one cell at a time as `i` grows.
    pub fn build(c: &FracConstants, grid: TimeGrid) -> Self {
        let n = grid.steps();
        let mut rows = vec![0.0; n * n];
        let Some(ck) = c.c_kernel else {
            for i in 1..=n {
                rows[(i - 1) * n..(i - 1) * n + i].fill(1.0);
            }
            return KernelTable { hurst: c.hurst, grid, gauss_points: KERNEL_GAUSS_POINTS, rows };
        };
        let beta = c.beta();
        let scale = ck * grid.dt().powf(beta);
        let integrand = |gap: f64, u: f64| gap.powf(beta - 1.0) * u.powf(beta);
        for k in 0..n {
            let left = k as f64;
            for (x, w) in quad::GAUSS4_NODES.iter().zip(quad::GAUSS4_WEIGHTS.iter()) {
                let s = left + 0.5 + 0.5 * x;
                let weight = 0.5 * w * scale * s.powf(-beta);
                let mut inner = singular_inner(s, left + 1.0, beta, 1e-13);
                rows[k * n + k] += weight * inner;
                for i in k + 2..=n {
                    let (a, b) = ((i - 1) as f64, i as f64);
                    inner += if i - k <= 5 {
                        let offset = a - s;
                        quad_value(quad::tanh_sinh(|u, dl, _| integrand(offset + dl, u), a, b, 1e-13))
                    } else {
                        quad::gauss8(|u| integrand(u - s, u), a, b)
                    };
                    rows[(i - 1) * n + k] += weight * inner;
                }
            }
        }
        KernelTable { hurst: c.hurst, grid, gauss_points: KERNEL_GAUSS_POINTS, rows }
    }

    /// Loads the table from `dir` when a matching cache file exists, otherwise
    /// builds it and writes the cache file (write failures are ignored).
    pub fn load_or_build(c: &FracConstants, grid: TimeGrid, dir: Option<&Path>) -> Self {
        let Some(dir) = dir else {
            return Self::build(c, grid);
        };
        let path = Self::cache_path(dir, c.hurst, grid);
        if let Ok(t) = Self::load(&path) {
            if t.hurst == c.hurst && t.grid == grid && t.gauss_points == KERNEL_GAUSS_POINTS {
                return t;
            }
        }
        let t = Self::build(c, grid);
        if std::fs::create_dir_all(dir).is_ok() {
            let _ = t.save(&path);
        }
        t
    }

    pub fn cache_path(dir: &Path, hurst: f64, grid: TimeGrid) -> PathBuf {
        dir.join(format!(
            "kernel-{:016x}-{:016x}-{}-{}.bin",
            hurst.to_bits(),
            grid.horizon().to_bits(),
            grid.steps(),
            KERNEL_GAUSS_POINTS
        ))
    }

    pub fn entry(&self, i: usize, k: usize) -> f64 {
        let n = self.grid.steps();
        if i == 0 || k >= i {
            0.0
        } else {
            self.rows[(i - 1) * n + k]
        }
    }

    /// Header `(H: f64, T: f64, n: u64, m: u64)` little-endian, then the
    /// `n × n` table row-major as little-endian `f64`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(32 + 8 * self.rows.len());
        buf.extend_from_slice(&self.hurst.to_le_bytes());
        buf.extend_from_slice(&self.grid.horizon().to_le_bytes());
        buf.extend_from_slice(&(self.grid.steps() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.gauss_points as u64).to_le_bytes());
        for v in &self.rows {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        if buf.len() < 32 {
            return Err(Error::InvalidParameter("kernel cache file too short".into()));
        }
        let word = |i: usize| -> [u8; 8] { buf[8 * i..8 * i + 8].try_into().unwrap() };
        let hurst = f64::from_le_bytes(word(0));
        let horizon = f64::from_le_bytes(word(1));
        let n = u64::from_le_bytes(word(2)) as usize;
        let m = u64::from_le_bytes(word(3)) as usize;
        if buf.len() != 32 + 8 * n * n {
            return Err(Error::InvalidParameter(format!(
                "kernel cache file has {} bytes, expected {}",
                buf.len(),
                32 + 8 * n * n
            )));
        }
        let rows = (0..n * n).map(|i| f64::from_le_bytes(word(4 + i))).collect();
        Ok(KernelTable { hurst, grid: TimeGrid::new(horizon, n)?, gauss_points: m, rows })
    }
}

/// Gaussian increments of a Wiener process, `steps` rows by `dim` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Increments {
    pub steps: usize,
    pub dim: usize,
    data: Vec<f64>,
}

impl Increments {
    pub fn zeros(steps: usize, dim: usize) -> Self {
        Increments { steps, dim, data: vec![0.0; steps * dim] }
    }

    pub fn from_data(steps: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != steps * dim {
            return Err(Error::ShapeMismatch(format!("{} increments for {steps}×{dim}", data.len())));
        }
        Ok(Increments { steps, dim, data })
    }

    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.data[i * self.dim + c]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Running sum of the increments, starting from zero.
    pub fn cumulative(&self, grid: TimeGrid) -> SampledPath {
        let mut out = SampledPath::zeros(grid, self.dim);
        for i in 0..self.steps {
            for c in 0..self.dim {
                let v = out.at(i)[c] + self.get(i, c);
                out.at_mut(i + 1)[c] = v;
            }
        }
        out
    }
}

/// Per-sample random stream: a ChaCha8 generator keyed by the master seed
/// with the sample index as stream id, so draws do not depend on scheduling.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Underlying Wiener increments `(ΔW, ΔW̃)` of one Monte Carlo sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerPair {
    pub dw: Increments,
    pub dw_tilde: Increments,
    pub seed: u64,
    pub index: u64,
}

impl WienerPair {
    /// Draws `ΔW` (first, `d1` columns) then `ΔW̃` (`l` columns), each entry
    /// `N(0, Δ)`, from the stream `(seed, index)`.
    pub fn draw(seed: u64, index: u64, grid: TimeGrid, d1: usize, l: usize) -> Self {
        let mut rng = sample_rng(seed, index);
        let sd = grid.dt().sqrt();
        let n = grid.steps();
        let mut gen = |dim: usize| {
            let data = (0..n * dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sd * z
                })
                .collect();
            Increments { steps: n, dim, data }
        };
        let dw = gen(d1);
        let dw_tilde = gen(l);
        WienerPair { dw, dw_tilde, seed, index }
    }
}

/// Driving fractional Brownian motions `(B, B̃)` of the SDE.
#[derive(Debug, Clone, PartialEq)]
pub struct FbmPath {
    pub b: SampledPath,
    pub b_tilde: SampledPath,
}

impl FbmPath {
    pub fn from_wiener(table: &KernelTable, wiener: &WienerPair) -> Result<Self> {
        Ok(FbmPath { b: sample_volterra(table, &wiener.dw)?, b_tilde: sample_volterra(table, &wiener.dw_tilde)? })
    }
}

/// Discrete Volterra representation `B(t_i) = Σ_{k<i} κ(i, k) ΔW_k`.
pub fn sample_volterra(table: &KernelTable, dw: &Increments) -> Result<SampledPath> {
    let grid = table.grid;
    let n = grid.steps();
    if dw.steps != n {
        return Err(Error::GridMismatch(format!("{} increments for a {n}-step kernel table", dw.steps)));
    }
    if table.hurst == 0.5 {
        return Ok(dw.cumulative(grid));
    }
    let mut out = SampledPath::zeros(grid, dw.dim);
    for i in 1..=n {
        let row = &table.rows[(i - 1) * n..(i - 1) * n + i];
        let node = out.at_mut(i);
        for (k, kappa) in row.iter().enumerate() {
            for (c, slot) in node.iter_mut().enumerate() {
                *slot += kappa * dw.get(k, c);
            }
        }
    }
    Ok(out)
}

/// Exact Gaussian sampler from the covariance matrix `[R_H(t_i, t_j)]_{i,j>=1}`.
#[derive(Debug, Clone)]
pub struct CholeskySampler {
    grid: TimeGrid,
    factor: DMatrix<f64>,
}

impl CholeskySampler {
    pub const MAX_STEPS: usize = 4096;

    pub fn new(h: HurstParam, grid: TimeGrid) -> Result<Self> {
        let n = grid.steps();
        if n > Self::MAX_STEPS {
            return Err(Error::InvalidParameter(format!(
                "dense covariance sampling supports at most {} steps, got {n}",
                Self::MAX_STEPS
            )));
        }
        let cov = DMatrix::from_fn(n, n, |i, j| covariance(h, grid.node(i + 1), grid.node(j + 1)).unwrap_or(f64::NAN));
        if let Some(ch) = cov.clone().cholesky() {
            return Ok(CholeskySampler { grid, factor: ch.unpack() });
        }
        let diag = cov.diagonal();
        let max_diag = diag.max();
        let min_diag = diag.min();
        let jittered = cov + DMatrix::identity(n, n) * (1e-12 * max_diag);
        match jittered.cholesky() {
            Some(ch) => Ok(CholeskySampler { grid, factor: ch.unpack() }),
            None => Err(Error::Factorization { n, max_diag, min_diag }),
        }
    }

    pub fn sample(&self, dims: usize, seed: u64, index: u64) -> SampledPath {
        let n = self.grid.steps();
        let mut rng = sample_rng(seed, index);
        let mut out = SampledPath::zeros(self.grid, dims);
        for c in 0..dims {
            let z = DVector::from_fn(n, |_, _| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v
            });
            let x = &self.factor * z;
            for i in 0..n {
                out.at_mut(i + 1)[c] = x[i];
            }
        }
        out
    }
}

/// Convenience wrapper around [`CholeskySampler`] for a single path.
pub fn sample_cholesky(h: HurstParam, grid: TimeGrid, dims: usize, seed: u64, index: u64) -> Result<SampledPath> {
    Ok(CholeskySampler::new(h, grid)?.sample(dims, seed, index))
}

/// Cell averages `Δ^{-1} ∫_{t_i}^{t_{i+1}} t^e dt` of a power with `e > -1`.
pub fn cell_mean_power(grid: TimeGrid, e: f64) -> Vec<f64> {
    let dt = grid.dt();
    (0..grid.steps())
        .map(|i| {
            if e == 0.0 {
                1.0
            } else {
                let (a, b) = (grid.node(i), grid.node(i + 1));
                (b.powf(e + 1.0) - a.powf(e + 1.0)) / ((e + 1.0) * dt)
            }
        })
        .collect()
}

/// `K_H^{-1}(∫_0^· g)(t) = c0 t^{1/2-H} g(t) + c1 t^{H-1/2} J(t)` split into
/// its local factor `g(t)` and memory part `c1 t^{H-1/2} J(t)`.
///
/// Node 0 is singular; [`KhInvSeries::value`] returns 0 there and callers
/// integrating against it use cell-averaged prefactors instead.
#[derive(Debug, Clone, PartialEq)]
pub struct KhInvSeries {
    pub grid: TimeGrid,
    pub local: Vec<f64>,
    pub memory: Vec<f64>,
    c_local: f64,
    beta: f64,
}

impl KhInvSeries {
    pub const SINGULAR_NODE: usize = 0;

    pub fn value(&self, j: usize) -> f64 {
        if j == Self::SINGULAR_NODE && self.beta > 0.0 {
            return 0.0;
        }
        self.c_local * self.grid.node(j).powf(-self.beta) * self.local[j] + self.memory[j]
    }

    /// Value used on cell `i` when integrating against `dW`: the singular
    /// prefactor is replaced by its cell mean, and the first cell reads the
    /// right node instead of the singular one.
    pub fn cell_value(&self, i: usize, prefactor_mean: f64) -> f64 {
        let j = if i == Self::SINGULAR_NODE { 1 } else { i };
        self.c_local * prefactor_mean * self.local[j] + self.memory[j]
    }

    pub fn to_sampled(&self) -> SampledFn {
        SampledFn { grid: self.grid, values: (0..self.grid.len()).map(|j| self.value(j)).collect() }
    }
}

/// Precomputed weights for repeated applications of the inverse operator on one grid.
#[derive(Debug, Clone)]
pub struct KhInverse {
    grid: TimeGrid,
    c_local: f64,
    c_memory: f64,
    beta: f64,
    /// `∫ over the cell at distance m of (t_j - r)^{-1/2-H} dr`, m >= 2
    far_cell: Vec<f64>,
    /// `Δ^{-1} ∫ over the last cell of (t_j - r)^{1/2-H} dr`
    near_cell: f64,
    mid_pow: Vec<f64>,
    node_pow: Vec<f64>,
}

impl KhInverse {
    pub fn new(c: &FracConstants, grid: TimeGrid) -> Self {
        let beta = c.beta();
        let n = grid.steps();
        let dt = grid.dt();
        let mut far_cell = vec![0.0; n + 1];
        let mut near_cell = 0.0;
        if beta > 0.0 {
            for (m, slot) in far_cell.iter_mut().enumerate().skip(2) {
                let (a, b) = ((m - 1) as f64 * dt, m as f64 * dt);
                *slot = (a.powf(-beta) - b.powf(-beta)) / beta;
            }
            near_cell = dt.powf(-beta) / (1.0 - beta);
        }
        let mid_pow = (0..n).map(|k| (grid.node(k) + 0.5 * dt).powf(-beta)).collect();
        let node_pow = grid.nodes().iter().map(|t| t.powf(beta)).collect();
        KhInverse { grid, c_local: c.c_local, c_memory: c.c_memory, beta, far_cell, near_cell, mid_pow, node_pow }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn c_local(&self) -> f64 {
        self.c_local
    }

    /// Applies the operator to node values `g` (length `n + 1`). The value at
    /// node `j` reads only `g[0..=j]`.
    pub fn apply(&self, g: &[f64]) -> Result<KhInvSeries> {
        let n = self.grid.steps();
        if g.len() != n + 1 {
            return Err(Error::GridMismatch(format!("{} values for {} nodes", g.len(), n + 1)));
        }
        let mut memory = vec![0.0; n + 1];
        if self.c_memory != 0.0 {
            for j in 1..=n {
                let gj = g[j];
                // last cell: g(t_j) - g(r) vanishes linearly, kernel loses one power
                let mut acc = (gj - g[j - 1]) * self.near_cell * self.mid_pow[j - 1];
                for k in 0..j - 1 {
                    let mid = 0.5 * (g[k] + g[k + 1]);
                    acc += self.far_cell[j - k] * (gj - mid) * self.mid_pow[k];
                }
                memory[j] = self.c_memory * self.node_pow[j] * acc;
            }
        }
        Ok(KhInvSeries { grid: self.grid, local: g.to_vec(), memory, c_local: self.c_local, beta: self.beta })
    }
}

/// Closed-form `K_H^{-1}(∫_0^· g(u) du)` on the grid of `g`.
pub fn apply_kh_inverse_antiderivative(g: &SampledFn, c: &FracConstants) -> Result<KhInvSeries> {
    KhInverse::new(c, g.grid).apply(&g.values)
}

/// Regularity diagnostic: half the log-log slope of the mean squared
/// increment against the lag over dyadic lags `1, 2, 4, ..., n/16`.
pub fn holder_exponent_estimate(paths: &[SampledFn]) -> f64 {
    let Some(first) = paths.first() else {
        return f64::NAN;
    };
    let n = first.grid.steps();
    let dt = first.grid.dt();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut lag = 1;
    while lag <= (n / 16).max(1) {
        let mut sum = 0.0;
        let mut count = 0usize;
        for p in paths {
            for i in 0..=n - lag {
                let d = p.values[i + lag] - p.values[i];
                sum += d * d;
                count += 1;
            }
        }
        xs.push((lag as f64 * dt).ln());
        ys.push((sum / count as f64).ln());
        lag *= 2;
    }
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    0.5 * sxy / sxx
}

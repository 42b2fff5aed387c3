//! Execution of a [`RunConfig`]: runs the subcommand and writes its CSV/JSON
//! outputs. Exit codes: 0 all checks pass, 1 statistical or numerical failure,
//! 2 schema or I/O error, 3 failed assumption.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::checks::{covariance_factorization, fraccheck, sampler_statistics, CovRow, SamplerRow, LATTICE};
use crate::config::{RunConfig, Subcommand};
use crate::error::{Error, Result};
use crate::fbm::HurstParam;
use crate::harness::{
    bound_scan, compare_weights, max_ratio, verify_derivative, BoundScanRow, BoundScanSpec, Simulator, VerificationReport,
    WeightComparison, Z_THRESHOLD,
};
use crate::models::{ModelKind, Theorem};
use crate::weights::DirectionVector;

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

/// Largest relative error of the covariance factorization accepted by `covcheck`.
pub const FACTORIZATION_TOLERANCE: f64 = 1e-3;
/// Discretization allowance of the Volterra sampler statistics.
pub const VOLTERRA_ALLOWANCE: f64 = 2e-3;

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub workers: usize,
    pub out: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub files: Vec<PathBuf>,
    /// One line per asserted check.
    pub summary: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Assumption(_) => 3,
        Error::Config(_) | Error::Io(_) | Error::Json(_) | Error::InvalidParameter(_) | Error::ShapeMismatch(_) => 2,
        _ => 1,
    }
}

/// Full-precision rendering used in every CSV cell.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    seed: u64,
    workers: usize,
    out: PathBuf,
    cache: Option<&'a Path>,
    files: Vec<PathBuf>,
    summary: Vec<String>,
    pass: bool,
}

impl Ctx<'_> {
    fn header(&self) -> String {
        let c = self.cfg;
        format!(
            "# fbm-grushin {VERSION} {}\n# H={} T={} n={} N={} seed={}\n",
            format!("{:?}", c.subcommand).to_lowercase(),
            c.hurst,
            c.horizon,
            c.steps,
            c.samples,
            self.seed
        )
    }

    fn write(&mut self, name: &str, body: &str) -> Result<()> {
        std::fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        std::fs::write(&path, body)?;
        self.files.push(path);
        Ok(())
    }

    fn write_csv(&mut self, name: &str, columns: &str, rows: &str) -> Result<()> {
        let body = format!("{}{columns}\n{rows}", self.header());
        self.write(name, &body)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut body = serde_json::to_string_pretty(value)?;
        body.push('\n');
        self.write(name, &body)
    }

    fn check(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.summary.push(format!("[{}] {line}", if ok { "PASS" } else { "FAIL" }));
    }
}

pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<Outcome> {
    cfg.validate()?;
    let out = opts.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let mut ctx = Ctx {
        cfg,
        seed: opts.seed.unwrap_or(cfg.seed),
        workers: opts.workers.max(1),
        out,
        cache: opts.cache_dir.as_deref(),
        files: Vec::new(),
        summary: Vec::new(),
        pass: true,
    };
    match cfg.subcommand {
        Subcommand::Covcheck => covcheck(&mut ctx)?,
        Subcommand::Fraccheck => fraccheck_cmd(&mut ctx)?,
        Subcommand::Simulate => simulate(&mut ctx)?,
        Subcommand::Verify => verify(&mut ctx)?,
        Subcommand::Bound => bound(&mut ctx)?,
    }
    Ok(Outcome { pass: ctx.pass, files: ctx.files, summary: ctx.summary })
}

fn covcheck(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let mut body = String::new();
    for h in cfg.hurst_list() {
        let rows: Vec<CovRow> = covariance_factorization(h, &LATTICE)?;
        for r in &rows {
            let _ = writeln!(
                body,
                "{},{},{},{},{},{}",
                r.hurst,
                r.t,
                r.s,
                fmt_f64(r.factorized),
                fmt_f64(r.exact),
                fmt_f64(r.rel_error)
            );
        }
        let worst = rows.iter().map(|r| r.rel_error).fold(0.0, f64::max);
        ctx.check(
            worst <= FACTORIZATION_TOLERANCE,
            format!("factorization H={h}: max relative error {worst:.3e} <= {FACTORIZATION_TOLERANCE:e}"),
        );
    }
    ctx.write_csv("covcheck.csv", "H,t,s,factorized,exact,rel_error", &body)?;
    if cfg.sampler_check {
        let grid = cfg.grid()?;
        let n = grid.steps();
        let nodes: Vec<f64> = [0.25, 0.5, 0.75, 1.0].iter().map(|q| grid.node((q * n as f64).round() as usize)).collect();
        let mut pairs = Vec::new();
        for (i, &t) in nodes.iter().enumerate() {
            for &s in &nodes[..=i] {
                pairs.push((t, s));
            }
        }
        let rows: Vec<SamplerRow> = sampler_statistics(
            HurstParam::new(cfg.hurst)?,
            grid,
            &pairs,
            cfg.samples,
            ctx.seed,
            ctx.workers,
            VOLTERRA_ALLOWANCE,
        )?;
        let mut body = String::new();
        for r in &rows {
            let _ = writeln!(
                body,
                "{},{},{},{},{},{},{},{}",
                r.sampler,
                r.t,
                r.s,
                fmt_f64(r.estimate.mean),
                fmt_f64(r.estimate.stderr),
                fmt_f64(r.exact),
                r.allowance,
                r.pass
            );
        }
        for name in ["volterra", "cholesky"] {
            let mine: Vec<&SamplerRow> = rows.iter().filter(|r| r.sampler == name).collect();
            let failed = mine.iter().filter(|r| !r.pass).count();
            ctx.check(
                failed == 0,
                format!(
                    "{name} sample covariance: {} of {} pairs within 4 stderr (+ allowance)",
                    mine.len() - failed,
                    mine.len()
                ),
            );
        }
        ctx.write_csv("sampler.csv", "sampler,t,s,mean,stderr,exact,allowance,pass", &body)?;
    }
    Ok(())
}

fn fraccheck_cmd(ctx: &mut Ctx) -> Result<()> {
    let rows = fraccheck(&ctx.cfg.hurst_list())?;
    let mut body = String::new();
    for r in &rows {
        let _ = writeln!(body, "{},{},{},{:e},{}", r.suite, r.case, fmt_f64(r.error), r.tolerance, r.pass);
    }
    let mut suites: Vec<&str> = rows.iter().map(|r| r.suite).collect();
    suites.dedup();
    for suite in suites {
        let mine: Vec<_> = rows.iter().filter(|r| r.suite == suite).collect();
        let worst = mine.iter().map(|r| r.error).fold(0.0, f64::max);
        let ok = mine.iter().all(|r| r.pass);
        ctx.check(ok, format!("{suite}: {} cases, max error {worst:.3e} (tolerance {:e})", mine.len(), mine[0].tolerance));
    }
    ctx.write_csv("fraccheck.csv", "suite,case,error,tolerance,pass", &body)
}

fn simulate(ctx: &mut Ctx) -> Result<()> {
    let model = ctx.cfg.build_model()?;
    let sim = Simulator::new(model, ctx.cache)?;
    let m = &sim.model;
    let mut columns = vec!["t".to_string()];
    columns.extend((1..=m.d1).map(|k| format!("x{k}")));
    columns.extend((1..=m.d2).map(|k| format!("y{k}")));
    let columns = columns.join(",");
    for k in 0..ctx.cfg.paths {
        let s = sim.sample(ctx.seed, k as u64)?;
        let mut body = String::new();
        for j in 0..m.grid.len() {
            let cells: Vec<String> = std::iter::once(m.grid.node(j))
                .chain(s.solution.x.at(j).iter().copied())
                .chain(s.solution.y.at(j).iter().copied())
                .map(fmt_f64)
                .collect();
            let _ = writeln!(body, "{}", cells.join(","));
        }
        ctx.write_csv(&format!("simulate_{k}.csv"), &columns, &body)?;
    }
    ctx.summary.push(format!("wrote {} path(s) on {} steps", ctx.cfg.paths, m.grid.steps()));
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct VerifyCase {
    theorem: Theorem,
    v: Vec<f64>,
    report: VerificationReport,
    /// Same case on the grid with twice the steps.
    refined: Option<VerificationReport>,
}

#[derive(Debug, Clone, Serialize)]
struct VerifyComparison {
    first: Theorem,
    second: Theorem,
    v: Vec<f64>,
    comparison: WeightComparison,
    pass: bool,
}

#[derive(Debug, Clone, Serialize)]
struct VerifyOutput {
    version: &'static str,
    cases: Vec<VerifyCase>,
    comparisons: Vec<VerifyComparison>,
    pass: bool,
}

fn verify(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let model = cfg.build_model()?;
    let directions = cfg.direction_vectors(model.d1, model.d2)?;
    for &t in &cfg.theorems {
        crate::models::check_assumptions(&model, t)?;
    }
    let sim = Simulator::new(model.clone(), ctx.cache)?;
    let fine = if cfg.refine {
        let grid = crate::fraccalc::TimeGrid::new(cfg.horizon, 2 * cfg.steps)?;
        Some(Simulator::new(model.with_grid(grid), ctx.cache)?)
    } else {
        None
    };
    let mut cases = Vec::new();
    let mut body = String::new();
    for &theorem in &cfg.theorems {
        for v in &directions {
            let report = verify_derivative(&sim, theorem, v, &cfg.test_function, cfg.samples, ctx.seed, ctx.workers)?;
            let refined = match &fine {
                Some(f) => Some(verify_derivative(f, theorem, v, &cfg.test_function, cfg.samples, ctx.seed, ctx.workers)?),
                None => None,
            };
            for r in std::iter::once(&report).chain(refined.as_ref()) {
                csv_report_rows(&mut body, r);
            }
            let vs = v.concat();
            ctx.check(
                report.pass,
                format!(
                    "theorem {} v={vs:?} n={}: z(weight-oracle)={:.3} z(weight-fd)={:.3}",
                    theorem.tag(),
                    cfg.steps,
                    report.z_weight_oracle,
                    report.z_weight_fd
                ),
            );
            if let Some(r) = &refined {
                ctx.check(
                    r.pass == report.pass,
                    format!(
                        "theorem {} v={vs:?} n={}: z(weight-oracle)={:.3} z(weight-fd)={:.3}, pass status stable",
                        theorem.tag(),
                        2 * cfg.steps,
                        r.z_weight_oracle,
                        r.z_weight_fd
                    ),
                );
            }
            cases.push(VerifyCase { theorem, v: vs, report, refined });
        }
    }
    let mut comparisons = Vec::new();
    if cfg.compare {
        for (i, &a) in cfg.theorems.iter().enumerate() {
            for &b in &cfg.theorems[i + 1..] {
                for v in &directions {
                    let c = compare_weights(&sim, a, b, v, &cfg.test_function, cfg.samples, ctx.seed, ctx.workers)?;
                    let pass = c.z_combined.abs() <= Z_THRESHOLD;
                    ctx.check(
                        pass,
                        format!("E[f weight {}] = E[f weight {}] v={:?}: z={:.3}", a.tag(), b.tag(), v.concat(), c.z_combined),
                    );
                    comparisons.push(VerifyComparison { first: a, second: b, v: v.concat(), comparison: c, pass });
                }
            }
        }
    }
    ctx.write_csv("verify.csv", "theorem,v,steps,estimate,mean,stderr,n,excluded,z_weight_oracle,z_weight_fd,pass", &body)?;
    let output = VerifyOutput { version: VERSION, cases, comparisons, pass: ctx.pass };
    ctx.write_json("verify.json", &output)
}

fn csv_report_rows(body: &mut String, r: &VerificationReport) {
    let v: Vec<String> = r.config.v.iter().map(|x| x.to_string()).collect();
    for (name, e) in [("weight", r.weight_est), ("oracle", r.oracle_est), ("fd", r.fd_est)] {
        let _ = writeln!(
            body,
            "{},{},{},{name},{},{},{},{},{},{},{}",
            r.config.theorem.tag(),
            v.join(";"),
            r.config.steps,
            fmt_f64(e.mean),
            fmt_f64(e.stderr),
            e.n,
            e.excluded,
            fmt_f64(r.z_weight_oracle),
            fmt_f64(r.z_weight_fd),
            r.pass
        );
    }
}

#[derive(Debug, Clone, Serialize)]
struct BoundSummary {
    seed: u64,
    v: Vec<f64>,
    max: BoundScanRow,
}

fn bound(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let model = cfg.build_model()?;
    let ModelKind::Grushin { sigma } = &model.kind else {
        return Err(Error::Assumption("bound needs a Grushin model".into()));
    };
    let gamma = sigma.meta.gamma.ok_or_else(|| Error::Assumption(format!("{} carries no Hölder certificate", sigma.name)))?;
    let spec = BoundScanSpec {
        p: cfg.p,
        epsilon_tilde: cfg.epsilon_tilde.unwrap_or_else(|| BoundScanSpec::default_epsilon(cfg.hurst, gamma)),
        horizons: cfg.horizons.clone(),
    };
    spec.validate(cfg.hurst, gamma).map_err(|e| Error::Config(e.to_string()))?;
    let directions = cfg.direction_vectors(model.d1, model.d2)?;
    let seeds: Vec<u64> = std::iter::once(ctx.seed).chain(cfg.extra_seeds.iter().copied()).collect();
    let mut body = String::new();
    let mut summary = Vec::new();
    for v in &directions {
        let mut maxima: Vec<BoundScanRow> = Vec::new();
        for &seed in &seeds {
            let rows = bound_scan(&model, v, &cfg.test_function, &spec, cfg.samples, seed, ctx.workers, ctx.cache)?;
            write_bound_rows(&mut body, seed, v, &rows);
            let finite = rows.iter().all(|r| r.ratio.is_finite());
            let max = max_ratio(&rows).ok_or_else(|| Error::Config("empty horizon list".into()))?;
            ctx.check(
                finite,
                format!(
                    "bound v={:?} seed={seed}: ratio finite at all {} horizons, max {:.4e} at T={}",
                    v.concat(),
                    rows.len(),
                    max.ratio,
                    max.horizon
                ),
            );
            summary.push(BoundSummary { seed, v: v.concat(), max });
            maxima.push(max);
        }
        for (i, a) in maxima.iter().enumerate() {
            for b in &maxima[i + 1..] {
                let se = a.ratio_stderr.hypot(b.ratio_stderr);
                let diff = (a.ratio - b.ratio).abs();
                ctx.check(
                    diff <= 3.0 * se,
                    format!("bound v={:?}: max ratio seed-stable, |Δ| = {diff:.3e} <= 3·{se:.3e}", v.concat()),
                );
            }
        }
    }
    ctx.write_csv("bound.csv", "seed,v,T,lhs,lhs_stderr,envelope,ratio,ratio_stderr", &body)?;
    ctx.write_json("bound.json", &summary)
}

fn write_bound_rows(body: &mut String, seed: u64, v: &DirectionVector, rows: &[BoundScanRow]) {
    let vs: Vec<String> = v.concat().iter().map(|x| x.to_string()).collect();
    for r in rows {
        let _ = writeln!(
            body,
            "{seed},{},{},{},{},{},{},{}",
            vs.join(";"),
            r.horizon,
            fmt_f64(r.lhs),
            fmt_f64(r.lhs_stderr),
            fmt_f64(r.envelope),
            fmt_f64(r.ratio),
            fmt_f64(r.ratio_stderr)
        );
    }
}

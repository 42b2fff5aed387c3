//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Runs without the libtest harness (see `Cargo.toml`), so the lines always print.

use std::path::Path;
use std::time::{Duration, Instant};

use fbm_grushin::checks::{covariance_factorization, fraccheck, sampler_statistics, LATTICE};
use fbm_grushin::config::RunConfig;
use fbm_grushin::fbm::HurstParam;
use fbm_grushin::fraccalc::TimeGrid;
use fbm_grushin::harness::{
    bound_scan, compare_weights, max_ratio, sample_columns, verify_derivative, BoundScanSpec, McEstimate, Simulator,
    TestFunction, Z_THRESHOLD,
};
use fbm_grushin::models::{catalog_lookup, variational, ModelSpec, Theorem};
use fbm_grushin::run::{run, RunOptions};
use fbm_grushin::weights::DirectionVector;
use fbm_grushin::Result;

const N: usize = 10_000;
const STEPS: usize = 256;
const SEED: u64 = 1;

struct Verdict {
    pass: bool,
    detail: String,
}

fn grid() -> TimeGrid {
    TimeGrid::new(1.0, STEPS).unwrap()
}

fn hurst(h: f64) -> HurstParam {
    HurstParam::new(h).unwrap()
}

fn sine_grushin(h: f64) -> ModelSpec {
    let sigma = catalog_lookup("sine-affine", &[2.0, 1.0, 1.0], (1, 1), 1).unwrap();
    ModelSpec::grushin(sigma, vec![0.3], vec![0.0], hurst(h), grid()).unwrap()
}

fn general(d: usize) -> ModelSpec {
    let b1 = catalog_lookup("linear-drift", &[1.0], (d, 1), d).unwrap();
    let b2 = catalog_lookup("sine-affine", &[0.0, 1.0, 1.0], (d, 1), d).unwrap();
    let sigma2 = catalog_lookup("sine-affine", &[2.0, 1.0, 1.0], (d, d), d).unwrap();
    let x0 = [0.3, -0.2][..d].to_vec();
    let sigma1 = nalgebra::DMatrix::identity(d, d);
    ModelSpec::general(b1, b2, sigma1, sigma2, x0, vec![0.0; d], hurst(0.75), grid()).unwrap()
}

fn directions(d1: usize, list: &[&[f64]]) -> Vec<DirectionVector> {
    list.iter().map(|v| DirectionVector::split(v, d1).unwrap()).collect()
}

/// Three-way agreement of `theorem` on every direction.
fn three_way(sim: &Simulator, theorem: Theorem, dirs: &[DirectionVector], label: &str, lines: &mut Vec<String>) -> Result<bool> {
    let mut ok = true;
    for v in dirs {
        let r = verify_derivative(sim, theorem, v, &TestFunction::sin(), N, SEED, 1)?;
        ok &= r.pass;
        lines.push(format!("{label} v={:?}: z(w-oracle)={:+.2} z(w-fd)={:+.2}", v.concat(), r.z_weight_oracle, r.z_weight_fd));
    }
    Ok(ok)
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

fn criterion_1() -> Result<Verdict> {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for h in [0.6, 0.75, 0.9] {
        for r in covariance_factorization(h, &LATTICE)? {
            worst = worst.max(r.rel_error);
        }
    }
    let t = start.elapsed();
    Ok(Verdict {
        pass: worst <= 1e-3 && within(t, 30),
        detail: format!("max rel error {worst:.2e} (<= 1e-3), {t:.1?} (<= 30 s)"),
    })
}

fn criterion_2_3() -> Result<(Verdict, Verdict)> {
    let start = Instant::now();
    let rows = fraccheck(&[0.6, 0.75, 0.9])?;
    let t = start.elapsed();
    let summarize = |suites: &[&str]| {
        let mine: Vec<_> = rows.iter().filter(|r| suites.contains(&r.suite)).collect();
        let failed: Vec<String> = mine.iter().filter(|r| !r.pass).map(|r| format!("{} {}", r.suite, r.case)).collect();
        let worst = mine.iter().map(|r| r.error / r.tolerance).fold(0.0, f64::max);
        (failed, mine.len(), worst)
    };
    let (f2, n2, w2) = summarize(&["power-rule", "semigroup", "inverse-property", "young-zahle"]);
    let (f3, n3, w3) = summarize(&["kh-inverse"]);
    let v2 = Verdict {
        pass: f2.is_empty() && within(t, 60),
        detail: format!("{} of {n2} cases, worst error/tolerance {w2:.2}, {t:.1?} (<= 60 s) {f2:?}", n2 - f2.len()),
    };
    let v3 =
        Verdict { pass: f3.is_empty(), detail: format!("{} of {n3} cases, worst error/tolerance {w3:.2} {f3:?}", n3 - f3.len()) };
    Ok((v2, v3))
}

fn criterion_4() -> Result<Verdict> {
    let start = Instant::now();
    let g = grid();
    let nodes = [64, 128, 192, 256].map(|k| g.node(k));
    let mut pairs = Vec::new();
    for (i, &t) in nodes.iter().enumerate() {
        for &s in &nodes[..=i] {
            pairs.push((t, s));
        }
    }
    let rows = sampler_statistics(hurst(0.75), g, &pairs, N, SEED, 1, 2e-3)?;
    let t = start.elapsed();
    let failed = rows.iter().filter(|r| !r.pass).count();
    let worst =
        rows.iter().map(|r| (r.estimate.mean - r.exact).abs() / (4.0 * r.estimate.stderr + r.allowance)).fold(0.0, f64::max);
    Ok(Verdict {
        pass: failed == 0 && within(t, 300),
        detail: format!("{} of {} rows, worst |err|/allowance {worst:.2}, {t:.1?} (<= 5 min)", rows.len() - failed, rows.len()),
    })
}

fn criterion_5() -> Result<Verdict> {
    let mut lines = Vec::new();
    let start = Instant::now();
    let one = catalog_lookup("constant", &[1.0], (1, 1), 1)?;
    let classical = ModelSpec::grushin(one, vec![0.0], vec![0.0], hurst(0.5), grid())?;
    let mut ok = three_way(
        &Simulator::new(classical, None)?,
        Theorem::M,
        &directions(1, &[&[1.0, 0.0], &[0.0, 1.0]]),
        "H=0.5",
        &mut lines,
    )?;
    let t1 = start.elapsed();
    let start = Instant::now();
    let dirs = directions(1, &[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
    ok &= three_way(&Simulator::new(sine_grushin(0.75), None)?, Theorem::M, &dirs, "H=0.75", &mut lines)?;
    let t2 = start.elapsed();
    ok &= within(t1, 600) && within(t2, 600);
    lines.push(format!("{t1:.1?} + {t2:.1?} (<= 10 min each)"));
    Ok(Verdict { pass: ok, detail: lines.join("; ") })
}

fn criterion_6() -> Result<Verdict> {
    let mut lines = Vec::new();
    let start = Instant::now();
    let sim = Simulator::new(sine_grushin(0.75), None)?;
    let dirs = directions(1, &[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
    let mut ok = three_way(&sim, Theorem::MTilde, &dirs, "M~", &mut lines)?;
    for v in &dirs {
        let c = compare_weights(&sim, Theorem::MTilde, Theorem::M, v, &TestFunction::sin(), N, SEED, 1)?;
        ok &= c.z_combined.abs() <= Z_THRESHOLD;
        lines.push(format!("E[fM~]=E[fM] v={:?}: z={:+.2}", v.concat(), c.z_combined));
    }
    let t = start.elapsed();
    ok &= within(t, 600);
    lines.push(format!("{t:.1?}"));
    Ok(Verdict { pass: ok, detail: lines.join("; ") })
}

fn criterion_7() -> Result<Verdict> {
    let mut lines = Vec::new();
    let start = Instant::now();
    let dirs = directions(1, &[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
    let mut ok = three_way(&Simulator::new(general(1), None)?, Theorem::N, &dirs, "d=1", &mut lines)?;
    let t1 = start.elapsed();
    let start = Instant::now();
    let dirs = directions(2, &[&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 1.0], &[1.0, 1.0, 1.0, 1.0]]);
    ok &= three_way(&Simulator::new(general(2), None)?, Theorem::N, &dirs, "d=2", &mut lines)?;
    let t2 = start.elapsed();
    ok &= within(t1, 600) && within(t2, 600);
    lines.push(format!("{t1:.1?} + {t2:.1?}"));
    Ok(Verdict { pass: ok, detail: lines.join("; ") })
}

fn criterion_8() -> Result<Verdict> {
    let mut lines = Vec::new();
    let mut ok = true;
    let grushin = Simulator::new(sine_grushin(0.75), None)?;
    let gen = Simulator::new(general(1), None)?;
    let v = DirectionVector::new(vec![1.0], vec![1.0])?;
    for (sim, theorem) in [(&grushin, Theorem::M), (&grushin, Theorem::MTilde), (&gen, Theorem::N)] {
        let (cols, excluded) = sample_columns(N, 1, 1, |i| {
            let s = sim.sample(SEED, i)?;
            Ok(vec![sim.engine().weight(theorem, &sim.model, &s.solution, &s.paths, &s.wiener, &v)?.total])
        })?;
        let e = McEstimate::from_samples(&cols[0], excluded)?;
        let pass = e.mean.abs() <= 4.0 * e.stderr;
        ok &= pass;
        lines.push(format!("E[{}]={:+.4} ({:.1} se)", theorem.tag(), e.mean, e.mean / e.stderr));
    }
    // Pathwise linearity: w(a u + b v) = a w(u) + b w(v).
    let u = DirectionVector::new(vec![0.7], vec![-1.3])?;
    let (a, b) = (2.5, -0.4);
    let combo = DirectionVector::new(vec![a * 0.7 + b], vec![a * -1.3 + b])?;
    let mut worst: f64 = 0.0;
    for (sim, theorem) in [(&grushin, Theorem::M), (&grushin, Theorem::MTilde), (&gen, Theorem::N)] {
        for i in 0..20 {
            let s = sim.sample(SEED, i)?;
            let w = |d: &DirectionVector| {
                sim.engine().weight(theorem, &sim.model, &s.solution, &s.paths, &s.wiener, d).map(|r| r.total)
            };
            let (wu, wv, wc) = (w(&u)?, w(&v)?, w(&combo)?);
            worst = worst.max((wc - (a * wu + b * wv)).abs() / (1.0 + wc.abs()));
            let g = |d: &DirectionVector| variational(&sim.model, &s.paths, &s.solution, &d.concat());
            let (gu, gv, gc) = (g(&u)?, g(&v)?, g(&combo)?);
            for k in 0..gc.len() {
                worst = worst.max((gc[k] - (a * gu[k] + b * gv[k])).abs() / (1.0 + gc[k].abs()));
            }
        }
    }
    ok &= worst <= 1e-12;
    lines.push(format!("linearity defect {worst:.1e} (<= 1e-12)"));
    Ok(Verdict { pass: ok, detail: lines.join("; ") })
}

fn criterion_9() -> Result<Verdict> {
    let start = Instant::now();
    let model = sine_grushin(0.75);
    let spec = BoundScanSpec {
        p: 2.0,
        epsilon_tilde: BoundScanSpec::default_epsilon(0.75, 1.0),
        horizons: vec![0.25, 0.5, 1.0, 2.0, 4.0],
    };
    let v = DirectionVector::new(vec![1.0], vec![1.0])?;
    let mut maxima = Vec::new();
    let mut finite = true;
    for seed in [1, 2] {
        let rows = bound_scan(&model, &v, &TestFunction::sin(), &spec, N, seed, 1, None)?;
        finite &= rows.iter().all(|r| r.ratio.is_finite() && r.envelope > 0.0);
        maxima.push(max_ratio(&rows).expect("five horizons"));
    }
    let t = start.elapsed();
    let (a, b) = (&maxima[0], &maxima[1]);
    let se = a.ratio_stderr.hypot(b.ratio_stderr);
    let diff = (a.ratio - b.ratio).abs();
    Ok(Verdict {
        pass: finite && diff <= 3.0 * se && within(t, 900),
        detail: format!(
            "finite={finite}, max ratio {:.4e} (T={}) vs {:.4e} (T={}), |diff| {diff:.1e} <= 3*{se:.1e}, {t:.1?} (<= 15 min)",
            a.ratio, a.horizon, b.ratio, b.horizon
        ),
    })
}

fn read_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn criterion_10() -> Result<Verdict> {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let tmp = tempfile::tempdir()?;
    let mut lines = Vec::new();
    let mut ok = true;
    let mut names: Vec<_> =
        std::fs::read_dir(&configs)?.map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|e| e == "json")).collect();
    names.sort();
    for path in names {
        let mut cfg = RunConfig::load(&path)?;
        // Worker independence does not depend on the sample count.
        cfg.samples = cfg.samples.min(2_000);
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        let mut outputs = Vec::new();
        for workers in [1, 2, 8] {
            let out = tmp.path().join(format!("{stem}-{workers}"));
            run(&cfg, &RunOptions { seed: None, workers, out: Some(out.clone()), cache_dir: None })?;
            outputs.push(read_dir(&out));
        }
        let same = outputs[0] == outputs[1] && outputs[0] == outputs[2] && !outputs[0].is_empty();
        ok &= same;
        lines.push(format!("{stem}: {} file(s) {}", outputs[0].len(), if same { "identical" } else { "DIFFER" }));
    }
    Ok(Verdict { pass: ok, detail: lines.join("; ") })
}

fn report(id: &str, title: &str, v: Result<Verdict>) -> bool {
    match v {
        Ok(v) => {
            println!("criterion {id:>2} {} {title}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
            v.pass
        }
        Err(e) => {
            println!("criterion {id:>2} FAIL {title}: error {e}");
            false
        }
    }
}

fn main() {
    let mut all = true;
    all &= report("1", "covariance factorization", criterion_1());
    match criterion_2_3() {
        Ok((v2, v3)) => {
            all &= report("2", "fractional-operator identities", Ok(v2));
            all &= report("3", "closed-form K_H^-1 vs Weyl quadrature", Ok(v3));
        }
        Err(e) => {
            let msg = e.to_string();
            all &= report("2", "fractional-operator identities", Err(fbm_grushin::Error::Config(msg.clone())));
            all &= report("3", "closed-form K_H^-1 vs Weyl quadrature", Err(fbm_grushin::Error::Config(msg)));
        }
    }
    all &= report("4", "sampler statistics", criterion_4());
    all &= report("5", "derivative formula M", criterion_5());
    all &= report("6", "derivative formula M~", criterion_6());
    all &= report("7", "derivative formula N", criterion_7());
    all &= report("8", "null and linearity", criterion_8());
    all &= report("9", "gradient bound scan", criterion_9());
    all &= report("10", "determinism across workers", criterion_10());
    if !all {
        std::process::exit(1);
    }
}

//! Browser bindings. Every entry point returns a JSON string; errors become
//! `{"error": "..."}`.

use fbm_grushin::fbm::{apply_kh_inverse_antiderivative, CholeskySampler, HurstParam};
use fbm_grushin::fraccalc::{compute_constants, SampledFn, TimeGrid};
use fbm_grushin::harness::{verify_derivative, Simulator, TestFunction};
use fbm_grushin::models::{catalog_lookup, ModelSpec, Theorem};
use fbm_grushin::weights::DirectionVector;
use fbm_grushin::Result;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Largest grid the page offers; the Cholesky factor is `steps²`.
pub const MAX_STEPS: usize = 512;

fn grid(steps: usize) -> Result<TimeGrid> {
    if steps > MAX_STEPS {
        return Err(fbm_grushin::Error::InvalidParameter(format!("at most {MAX_STEPS} steps")));
    }
    TimeGrid::new(1.0, steps)
}

fn render(r: Result<Value>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

/// `paths` exact fBm paths on `[0, 1]`.
pub fn fbm_paths(hurst: f64, steps: usize, paths: usize, seed: u64) -> Result<Value> {
    let g = grid(steps)?;
    let sampler = CholeskySampler::new(HurstParam::new(hurst)?, g)?;
    let curves: Vec<Vec<f64>> = (0..paths as u64).map(|i| sampler.sample(1, seed, i).component(0).values).collect();
    Ok(json!({ "t": g.nodes(), "paths": curves }))
}

/// Closed-form `K_H^{-1}(∫_0^· g)` for `g` in `{"1", "t", "sin"}`.
pub fn kh_inverse(hurst: f64, steps: usize, g: &str) -> Result<Value> {
    let grid = grid(steps)?;
    let f: fn(f64) -> f64 = match g {
        "1" => |_| 1.0,
        "t" => |t| t,
        "sin" => f64::sin,
        other => return Err(fbm_grushin::Error::InvalidParameter(format!("unknown g {other:?}"))),
    };
    let c = compute_constants(HurstParam::new(hurst)?.value())?;
    let series = apply_kh_inverse_antiderivative(&SampledFn::from_fn(grid, f), &c)?;
    // node 0 is singular for H > 1/2
    let start = usize::from(hurst > 0.5);
    let nodes = grid.nodes();
    Ok(json!({
        "t": nodes[start..],
        "value": (start..grid.len()).map(|j| series.value(j)).collect::<Vec<_>>(),
    }))
}

/// Three-way check of the `M` weight on `dY = (2 + sin X) dB̃`, `dX = dB`.
pub fn verify_grushin(hurst: f64, samples: usize, v1: f64, v2: f64, seed: u64) -> Result<Value> {
    let sigma = catalog_lookup("sine-affine", &[2.0, 1.0, 1.0], (1, 1), 1)?;
    let model = ModelSpec::grushin(sigma, vec![0.3], vec![0.0], HurstParam::new(hurst)?, grid(64)?)?;
    let sim = Simulator::new(model, None)?;
    let v = DirectionVector::new(vec![v1], vec![v2])?;
    let r = verify_derivative(&sim, Theorem::M, &v, &TestFunction::sin(), samples.max(2), seed, 1)?;
    Ok(serde_json::to_value(r)?)
}

#[wasm_bindgen(js_name = fbmPaths)]
pub fn fbm_paths_js(hurst: f64, steps: usize, paths: usize, seed: u32) -> String {
    render(fbm_paths(hurst, steps, paths, seed.into()))
}

#[wasm_bindgen(js_name = khInverse)]
pub fn kh_inverse_js(hurst: f64, steps: usize, g: &str) -> String {
    render(kh_inverse(hurst, steps, g))
}

#[wasm_bindgen(js_name = verifyGrushin)]
pub fn verify_grushin_js(hurst: f64, samples: usize, v1: f64, v2: f64, seed: u32) -> String {
    render(verify_grushin(hurst, samples, v1, v2, seed.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_start_at_zero() {
        let v = fbm_paths(0.7, 32, 3, 1).unwrap();
        let paths = v["paths"].as_array().unwrap();
        assert_eq!(paths.len(), 3);
        assert!(paths.iter().all(|p| p[0] == 0.0 && p.as_array().unwrap().len() == 33));
    }

    #[test]
    fn kh_inverse_of_constant_at_half_is_one() {
        // at H = 1/2 the operator is the derivative
        let v = kh_inverse(0.5, 16, "1").unwrap();
        assert!(v["value"].as_array().unwrap().iter().all(|x| (x.as_f64().unwrap() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn errors_are_reported_as_json() {
        let s = kh_inverse_js(0.3, 16, "1");
        assert!(s.contains("\"error\""), "{s}");
        assert!(fbm_paths_js(0.7, 4096, 1, 1).contains("error"));
        assert!(kh_inverse_js(0.7, 16, "cos").contains("error"));
    }

    #[test]
    fn small_verification_runs() {
        let v = verify_grushin(0.75, 500, 1.0, 1.0, 1).unwrap();
        assert!(v["z_weight_oracle"].as_f64().unwrap().is_finite());
    }
}

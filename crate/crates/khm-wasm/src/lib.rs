//! wasm-bindgen surface for the static demo page in `www/`.
//!
//! Each exported function has a plain Rust twin returning `khm_core::Result`
//! so the numerics can be tested natively.

use khm_core::grid::Grid;
use khm_core::increments::{DirectionQuadrature, DirectionScheme, SeparationScan};
use khm_core::laws::{self, LawFields};
use khm_core::mollify::{Profile, RadialKernel};
use khm_core::solver::{make_initial_condition, InitialKind, Model, Params, SolverState};
use khm_core::{KhmError, Result};
use wasm_bindgen::prelude::*;

fn js(e: KhmError) -> JsError {
    JsError::new(&e.to_string())
}

/// Names of the entries returned by [`coarea_constants`], in order.
#[wasm_bindgen]
pub fn constant_names() -> Vec<String> {
    let k = RadialKernel::new(Profile::Bump, 1.0).expect("unit bump kernel");
    laws::verify_coarea_constants(&k, 0.0).entries.into_iter().map(|e| e.name).collect()
}

/// Computed constants followed by their exact values: `[v0.., e0..]`.
pub fn constants(profile: &str, epsilon: f64) -> Result<Vec<f64>> {
    let k = RadialKernel::new(profile.parse()?, epsilon)?;
    let r = laws::verify_coarea_constants(&k, 0.0);
    let mut out: Vec<f64> = r.entries.iter().map(|e| e.value).collect();
    out.extend(r.entries.iter().map(|e| e.expected));
    Ok(out)
}

#[wasm_bindgen]
pub fn coarea_constants(profile: &str, epsilon: f64) -> std::result::Result<Vec<f64>, JsError> {
    constants(profile, epsilon).map_err(js)
}

/// Rows `[λ, S_EL, S_ET, S_ML, Π_L, Π_T]` for a random low-k Hall-MHD state.
pub fn scan(n: usize, seed: u32, d_i: f64, lambda_lo: f64, lambda_hi: f64, count: usize, directions: usize) -> Result<Vec<f64>> {
    let g = Grid::new(n)?;
    let (b, u) = make_initial_condition(&g, InitialKind::RandomLowk, Model::HallMhd, seed as u64, 1.0, 2.0)?;
    let s = SolverState::new(Params::inviscid(Model::HallMhd, d_i), &b, u.as_ref())?;
    let f = LawFields::from_state(&s)?;
    let q = DirectionQuadrature::new(DirectionScheme::Fibonacci, directions)?;
    let mut out = Vec::with_capacity(6 * count);
    for l in SeparationScan::log_spaced(lambda_lo, lambda_hi, count) {
        let v = laws::structure_functions(&f, l, &q)?;
        out.extend([l, v.s_el, v.s_et, v.s_ml, v.flux_l, v.flux_t]);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn structure_scan(
    n: usize,
    seed: u32,
    d_i: f64,
    lambda_lo: f64,
    lambda_hi: f64,
    count: usize,
    directions: usize,
) -> std::result::Result<Vec<f64>, JsError> {
    scan(n, seed, d_i, lambda_lo, lambda_hi, count, directions).map_err(js)
}

/// Rows `[t, E, H_M]` of an inviscid EMHD run from a random low-k field.
pub fn evolve(n: usize, seed: u32, steps: usize, dt: f64) -> Result<Vec<f64>> {
    let g = Grid::new(n)?;
    let (b, _) = make_initial_condition(&g, InitialKind::RandomLowk, Model::Emhd, seed as u64, 1.0, 3.0)?;
    let mut s = SolverState::new(Params::inviscid(Model::Emhd, 1.0), &b, None)?;
    let mut out = Vec::with_capacity(3 * (steps + 1));
    for i in 0..=steps {
        if i > 0 {
            s.step_rk4(dt)?;
        }
        let r = s.invariants()?;
        out.extend([r.t, r.energy, r.magnetic_helicity]);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn emhd_run(n: usize, seed: u32, steps: usize, dt: f64) -> std::result::Result<Vec<f64>, JsError> {
    evolve(n, seed, steps, dt).map_err(js)
}

//! Browser demo: simulate and ampute a dataset, impute it, and map a fitted
//! ARF density over two features. Each operation has a plain Rust entry
//! point returning JSON plus a thin `wasm_bindgen` wrapper.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use missarf::arf::ArfParams;
use missarf::density::DensityOptions;
use missarf::forest::ForestParams;
use missarf::impute::{impute_with_model, ImputationMode, LeafMean};
use missarf::model::{fingerprint, ModelFile};
use missarf::rng::{derive_seed, derived_rng};
use missarf::simbench::{ampute, simulate_features, AmputeSpec, Effect, Marginal, Mechanism, SimSpec};
use missarf::tabular::{parse_csv, to_csv_string, Cell, Dataset, SchemaHint};

fn params(trees: usize, min_node_size: usize) -> ArfParams {
    ArfParams {
        forest: ForestParams {
            n_trees: trees,
            min_node_size,
            mtry: None,
        },
        ..Default::default()
    }
}

fn read(csv: &str) -> Result<Dataset, String> {
    parse_csv(csv.as_bytes(), &SchemaHint::AllNumeric).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct SimulateOutput {
    pub csv: String,
    pub missing: usize,
    pub cells: usize,
}

/// Copula features with missingness introduced by `mechanism`.
pub fn simulate(
    n: usize,
    p: usize,
    marginal: &str,
    mechanism: &str,
    proportion: f64,
    seed: u64,
) -> Result<SimulateOutput, String> {
    let marginal: Marginal = marginal.parse().map_err(|e: missarf::Error| e.to_string())?;
    let mechanism: Mechanism = mechanism.parse().map_err(|e: missarf::Error| e.to_string())?;
    let spec = SimSpec {
        n,
        p,
        marginal,
        effect: Effect::Linear,
        rho: 0.5,
    };
    let full = simulate_features(&spec, &mut derived_rng(seed, &[0])).map_err(|e| e.to_string())?;
    let amp = ampute(
        &full,
        &AmputeSpec::new(mechanism, proportion),
        &mut derived_rng(seed, &[1]),
    )
    .map_err(|e| e.to_string())?;
    Ok(SimulateOutput {
        csv: to_csv_string(&amp),
        missing: amp.missing_count(),
        cells: amp.n_rows() * amp.n_cols(),
    })
}

#[derive(Debug, Serialize)]
pub struct ImputedCell {
    pub row: usize,
    pub col: usize,
    pub mean: f64,
    pub sd: f64,
    pub draws: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct ImputeOutput {
    pub first: String,
    pub cells: Vec<ImputedCell>,
    pub iterations: usize,
    pub converged: bool,
    pub accuracy: Vec<f64>,
    pub fingerprint: String,
}

/// `m` conditional draws per missing cell from one fitted model.
pub fn impute(csv: &str, m: usize, trees: usize, min_node_size: usize, seed: u64) -> Result<ImputeOutput, String> {
    let data = read(csv)?;
    if m == 0 {
        return Err("m must be at least 1".into());
    }
    let model = ModelFile::fit(&data, params(trees, min_node_size), DensityOptions::default(), seed)
        .map_err(|e| e.to_string())?;
    let sets = impute_with_model(
        &model.density,
        &data,
        ImputationMode::Multiple(m),
        LeafMean::default(),
        derive_seed(seed, &[1]),
    )
    .map_err(|e| e.to_string())?;
    let mut cells = Vec::new();
    for i in 0..data.n_rows() {
        for j in 0..data.n_cols() {
            if !data.cell(i, j).is_missing() {
                continue;
            }
            let draws: Vec<f64> = sets.iter().filter_map(|d| d.cell(i, j).as_f64()).collect();
            let (mean, sd) = missarf::tabular::mean_sd(&draws);
            cells.push(ImputedCell {
                row: i,
                col: j,
                mean,
                sd,
                draws,
            });
        }
    }
    Ok(ImputeOutput {
        first: to_csv_string(&sets[0]),
        cells,
        iterations: model.report.iterations,
        converged: model.report.converged,
        accuracy: model.report.accuracy_trace.clone(),
        fingerprint: format!("{:016x}", fingerprint(&model.density)),
    })
}

#[derive(Debug, Serialize)]
pub struct DensityMap {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub size: usize,
    /// Row-major `size × size` log densities, y increasing with the row.
    pub log_density: Vec<f64>,
    pub points: Vec<[f64; 2]>,
    pub samples: Vec<[f64; 2]>,
    pub leaves: usize,
}

/// Fits an ARF to the first two columns (complete rows only) and evaluates
/// the density on a `size × size` grid.
pub fn density_map(csv: &str, trees: usize, size: usize, n_samples: usize, seed: u64) -> Result<DensityMap, String> {
    let data = read(csv)?;
    if data.n_cols() < 2 {
        return Err("need at least two columns".into());
    }
    let mut xs = Vec::new();
    for i in 0..data.n_rows() {
        if let (Some(a), Some(b)) = (data.cell(i, 0).as_f64(), data.cell(i, 1).as_f64()) {
            xs.push([a, b]);
        }
    }
    if xs.len() < 10 {
        return Err("need at least 10 complete rows in the first two columns".into());
    }
    let names = [data.schema()[0].name(), data.schema()[1].name()];
    let two = Dataset::from_numeric(
        &names,
        vec![xs.iter().map(|r| r[0]).collect(), xs.iter().map(|r| r[1]).collect()],
    )
    .map_err(|e| e.to_string())?;
    let model = ModelFile::fit(&two, params(trees, 5), DensityOptions::default(), seed).map_err(|e| e.to_string())?;

    let range = |k: usize| {
        let lo = xs.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
        let hi = xs.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
        let pad = 0.1 * (hi - lo).max(1e-6);
        [lo - pad, hi + pad]
    };
    let (xr, yr) = (range(0), range(1));
    let size = size.clamp(2, 200);
    let at = |r: [f64; 2], k: usize| r[0] + (r[1] - r[0]) * (k as f64 + 0.5) / size as f64;
    let mut log_density = Vec::with_capacity(size * size);
    for gy in 0..size {
        for gx in 0..size {
            let row = [Cell::Num(at(xr, gx)), Cell::Num(at(yr, gy))];
            log_density.push(model.density.log_density(&row).map_err(|e| e.to_string())?);
        }
    }
    let samples = if n_samples == 0 {
        Vec::new()
    } else {
        let s = model
            .density
            .sample_unconditional(n_samples, &mut derived_rng(seed, &[2]))
            .map_err(|e| e.to_string())?;
        (0..s.n_rows())
            .map(|i| [s.cell(i, 0).as_f64().unwrap(), s.cell(i, 1).as_f64().unwrap()])
            .collect()
    };
    Ok(DensityMap {
        x_range: xr,
        y_range: yr,
        size,
        log_density,
        points: xs,
        samples,
        leaves: model.density.leaves.len(),
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
        .and_then(|v| serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string())))
}

// JavaScript numbers carry seeds up to 2^53; that is plenty for a demo.
#[wasm_bindgen(js_name = simulate)]
pub fn simulate_js(
    n: usize,
    p: usize,
    marginal: &str,
    mechanism: &str,
    proportion: f64,
    seed: f64,
) -> Result<String, JsError> {
    to_js(simulate(n, p, marginal, mechanism, proportion, seed as u64))
}

#[wasm_bindgen(js_name = impute)]
pub fn impute_js(csv: &str, m: usize, trees: usize, min_node_size: usize, seed: f64) -> Result<String, JsError> {
    to_js(impute(csv, m, trees, min_node_size, seed as u64))
}

#[wasm_bindgen(js_name = densityMap)]
pub fn density_map_js(csv: &str, trees: usize, size: usize, n_samples: usize, seed: f64) -> Result<String, JsError> {
    to_js(density_map(csv, trees, size, n_samples, seed as u64))
}

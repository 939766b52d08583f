use std::path::Path;

use serde::Deserialize;

use missarf::arf::ArfParams;
use missarf::density::DensityOptions;
use missarf::forest::ForestParams;
use missarf::model::ModelFile;

/// Values read from `--config`; any key may be omitted.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub trees: Option<usize>,
    pub min_node_size: Option<usize>,
    pub mtry: Option<usize>,
    pub delta: Option<f64>,
    pub max_iters: Option<usize>,
    pub smoothing: Option<f64>,
    pub leaf_mean: Option<String>,
    pub m: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSettings {
    pub trees: usize,
    pub min_node_size: usize,
    pub mtry: Option<usize>,
    pub delta: f64,
    pub max_iters: usize,
    pub smoothing: f64,
}

impl ModelSettings {
    pub fn from_args(
        trees: usize,
        min_node_size: usize,
        mtry: Option<usize>,
        delta: f64,
        max_iters: usize,
        smoothing: f64,
    ) -> Self {
        ModelSettings {
            trees,
            min_node_size,
            mtry,
            delta,
            max_iters,
            smoothing,
        }
    }

    pub fn from_model(model: &ModelFile) -> Self {
        let f = model.params.forest;
        ModelSettings {
            trees: f.n_trees,
            min_node_size: f.min_node_size,
            mtry: f.mtry,
            delta: model.params.delta,
            max_iters: model.params.max_iters,
            smoothing: model.density_options.smoothing,
        }
    }

    /// Fills every field not given on the command line from `file`.
    pub fn apply_file(&mut self, file: &FileConfig, explicit: impl Fn(&str) -> bool) {
        if !explicit("trees") {
            self.trees = file.trees.unwrap_or(self.trees);
        }
        if !explicit("min_node_size") {
            self.min_node_size = file.min_node_size.unwrap_or(self.min_node_size);
        }
        if !explicit("mtry") && file.mtry.is_some() {
            self.mtry = file.mtry;
        }
        if !explicit("delta") {
            self.delta = file.delta.unwrap_or(self.delta);
        }
        if !explicit("max_iters") {
            self.max_iters = file.max_iters.unwrap_or(self.max_iters);
        }
        if !explicit("smoothing") {
            self.smoothing = file.smoothing.unwrap_or(self.smoothing);
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.trees == 0 {
            return Err("trees must be ≥ 1".into());
        }
        if self.min_node_size == 0 {
            return Err("min_node_size must be ≥ 1".into());
        }
        if self.mtry == Some(0) {
            return Err("mtry must be ≥ 1".into());
        }
        if !(self.delta >= 0.0 && self.delta < 0.5) {
            return Err(format!("delta must lie in [0, 0.5), got {}", self.delta));
        }
        if !(self.smoothing >= 0.0) {
            return Err(format!("smoothing must be ≥ 0, got {}", self.smoothing));
        }
        Ok(())
    }

    pub fn arf(&self) -> ArfParams {
        ArfParams {
            forest: ForestParams {
                n_trees: self.trees,
                min_node_size: self.min_node_size,
                mtry: self.mtry,
            },
            delta: self.delta,
            max_iters: self.max_iters,
        }
    }

    pub fn density(&self) -> DensityOptions {
        DensityOptions {
            smoothing: self.smoothing,
        }
    }

    pub fn key_values(&self) -> Vec<String> {
        vec![
            format!("trees={}", self.trees),
            format!("min_node_size={}", self.min_node_size),
            format!("mtry={}", self.mtry.map_or("auto".to_string(), |m| m.to_string())),
            format!("delta={}", self.delta),
            format!("max_iters={}", self.max_iters),
            format!("smoothing={}", self.smoothing),
        ]
    }

    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        for kv in self.key_values() {
            let (k, v) = kv.split_once('=').unwrap();
            if v == "auto" {
                s.push_str(&format!("# {k} = auto\n"));
            } else {
                s.push_str(&format!("{k} = {v}\n"));
            }
        }
        s
    }
}

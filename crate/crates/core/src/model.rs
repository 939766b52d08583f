//! Versioned JSON model files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use rand::Rng;

use crate::arf::{adversarial_fit, extract_leaves, ArfFitReport, ArfParams};
use crate::density::{fit_leaf_densities, DensityModel, DensityOptions};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tabular::Dataset;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub crate_version: String,
    pub params: ArfParams,
    pub density_options: DensityOptions,
    pub report: ArfFitReport,
    pub n_rows: usize,
    pub density: DensityModel,
}

impl ModelFile {
    pub fn new(
        params: ArfParams,
        density_options: DensityOptions,
        report: ArfFitReport,
        n_rows: usize,
        density: DensityModel,
    ) -> Self {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            params,
            density_options,
            report,
            n_rows,
            density,
        }
    }

    /// Runs the adversarial loop and fits leaf densities on `data`.
    pub fn fit_with_rng<R: Rng>(
        data: &Dataset,
        params: ArfParams,
        density_options: DensityOptions,
        rng: &mut R,
    ) -> Result<Self> {
        let (forest, report) = adversarial_fit(data, &params, rng)?;
        let leaves = extract_leaves(&forest, data);
        let density = fit_leaf_densities(&forest, &leaves, data, &density_options)?;
        Ok(ModelFile::new(params, density_options, report, data.n_rows(), density))
    }

    pub fn fit(data: &Dataset, params: ArfParams, density_options: DensityOptions, seed: u64) -> Result<Self> {
        Self::fit_with_rng(data, params, density_options, &mut rng_from_seed(seed))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(text)
            .map_err(|e| Error::Model(format!("not a model file: {e}")))?;
        if header.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported model format version {} (expected {MODEL_FORMAT_VERSION})",
                header.format_version
            )));
        }
        serde_json::from_str(text).map_err(|e| Error::Model(format!("malformed model file: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_json().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        BufReader::new(file)
            .read_to_string(&mut text)
            .map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Stable fingerprint of a fitted density model.
pub fn fingerprint(model: &DensityModel) -> u64 {
    fnv1a(&serde_json::to_vec(model).expect("model serializes"))
}

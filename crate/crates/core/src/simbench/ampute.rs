use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::{Cell, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Mcar,
    Mar,
    Mnar,
}

impl Mechanism {
    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::Mcar => "mcar",
            Mechanism::Mar => "mar",
            Mechanism::Mnar => "mnar",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcar" => Ok(Mechanism::Mcar),
            "mar" => Ok(Mechanism::Mar),
            "mnar" => Ok(Mechanism::Mnar),
            _ => Err(Error::Config(format!("unknown mechanism '{s}' (mcar, mar, mnar)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmputeSpec {
    pub mechanism: Mechanism,
    pub proportion: f64,
    /// Column indices to amputate; the first ⌈p/2⌉ when absent.
    #[serde(default)]
    pub targets: Option<Vec<usize>>,
}

impl AmputeSpec {
    pub fn new(mechanism: Mechanism, proportion: f64) -> Self {
        AmputeSpec {
            mechanism,
            proportion,
            targets: None,
        }
    }

    pub fn resolved_targets(&self, p: usize) -> Vec<usize> {
        self.targets.clone().unwrap_or_else(|| default_targets(p))
    }
}

pub fn default_targets(p: usize) -> Vec<usize> {
    (0..p.div_ceil(2)).collect()
}

/// Nearest fully observed non-target column to `target`; ties go to the
/// lower index.
pub fn mar_driver(data: &Dataset, targets: &[usize], target: usize) -> Option<usize> {
    (0..data.n_cols())
        .filter(|&j| j != target && !targets.contains(&j))
        .filter(|&j| data.schema()[j].is_numeric() && data.column(j).iter().all(|c| !c.is_missing()))
        .min_by_key(|&j| (j.abs_diff(target), j))
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Splits `rows` by the median of `values` into `(below, at_or_above)`.
/// Ties that empty one side fall back to `≤ median` vs `> median`.
pub fn median_groups(rows: &[usize], values: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let med = median(values);
    let split = |strict: bool| {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for (&r, &v) in rows.iter().zip(values) {
            if (strict && v < med) || (!strict && v <= med) {
                lo.push(r);
            } else {
                hi.push(r);
            }
        }
        (lo, hi)
    };
    let (lo, hi) = split(true);
    if !lo.is_empty() && !hi.is_empty() {
        return (lo, hi);
    }
    split(false)
}

/// Introduces missing values per `spec`. Each target column receives
/// `round(q·n)` missing cells: uniformly at random for MCAR, inside one
/// randomly chosen median-side group for MAR (driver column) and MNAR (the
/// column itself), capped at the group size.
pub fn ampute<R: Rng>(data: &Dataset, spec: &AmputeSpec, rng: &mut R) -> Result<Dataset> {
    let q = spec.proportion;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Config(format!("missing proportion must lie in (0, 1), got {q}")));
    }
    let p = data.n_cols();
    let n = data.n_rows();
    let targets = spec.resolved_targets(p);
    if let Some(&j) = targets.iter().find(|&&j| j >= p) {
        return Err(Error::Config(format!("target column {j} out of range (p = {p})")));
    }
    let want = (q * n as f64).round() as usize;
    let mut out = data.clone();
    for &j in &targets {
        let rows: Vec<usize> = match spec.mechanism {
            Mechanism::Mcar => {
                let eligible: Vec<usize> = (0..n).filter(|&i| !data.cell(i, j).is_missing()).collect();
                let k = want.min(eligible.len());
                sample(rng, eligible.len(), k).into_iter().map(|i| eligible[i]).collect()
            }
            Mechanism::Mar | Mechanism::Mnar => {
                let source = if spec.mechanism == Mechanism::Mar {
                    mar_driver(data, &targets, j).ok_or_else(|| {
                        Error::Config(format!(
                            "MAR needs a fully observed numeric column outside the targets for column {}",
                            data.schema()[j].name()
                        ))
                    })?
                } else {
                    if !data.schema()[j].is_numeric() {
                        return Err(Error::Config(format!(
                            "MNAR needs a numeric target, column {} is categorical",
                            data.schema()[j].name()
                        )));
                    }
                    j
                };
                let (rows, values): (Vec<usize>, Vec<f64>) = (0..n)
                    .filter(|&i| !data.cell(i, j).is_missing())
                    .filter_map(|i| data.cell(i, source).as_f64().map(|v| (i, v)))
                    .unzip();
                if rows.is_empty() {
                    continue;
                }
                let (lo, hi) = median_groups(&rows, &values);
                let group = if lo.is_empty() || (!hi.is_empty() && rng.gen::<bool>()) {
                    hi
                } else {
                    lo
                };
                let k = want.min(group.len());
                if k < want {
                    log::debug!(
                        "column {}: {want} missing values requested, group holds {}",
                        data.schema()[j].name(),
                        group.len()
                    );
                }
                sample(rng, group.len(), k).into_iter().map(|i| group[i]).collect()
            }
        };
        for i in rows {
            out.set(i, j, Cell::Missing)?;
        }
    }
    Ok(out)
}

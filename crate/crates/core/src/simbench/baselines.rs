use rand::Rng;

use crate::error::{Error, Result};
use crate::tabular::{Cell, ColumnKind, Dataset};

fn observed_cells(data: &Dataset, j: usize) -> Result<Vec<Cell>> {
    let cells: Vec<Cell> = data.column(j).iter().copied().filter(|c| !c.is_missing()).collect();
    if cells.is_empty() {
        return Err(Error::Data(format!(
            "column {} has no observed values",
            data.schema()[j].name()
        )));
    }
    Ok(cells)
}

/// `m` datasets, each missing cell drawn uniformly from its column's
/// observed values.
pub fn baseline_random<R: Rng>(data: &Dataset, m: usize, rng: &mut R) -> Result<Vec<Dataset>> {
    if m == 0 {
        return Err(Error::Config("number of imputations must be ≥ 1".into()));
    }
    let pools: Vec<Option<Vec<Cell>>> = (0..data.n_cols())
        .map(|j| {
            if data.column(j).iter().any(Cell::is_missing) {
                observed_cells(data, j).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    (0..m)
        .map(|_| {
            let mut out = data.clone();
            for (j, pool) in pools.iter().enumerate() {
                let Some(pool) = pool else { continue };
                for i in 0..data.n_rows() {
                    if data.cell(i, j).is_missing() {
                        out.set(i, j, pool[rng.gen_range(0..pool.len())])?;
                    }
                }
            }
            Ok(out)
        })
        .collect()
}

/// Median for numeric columns (midpoint for even counts), mode for
/// categorical columns (first label in schema order on ties).
pub fn baseline_median(data: &Dataset) -> Result<Dataset> {
    let mut out = data.clone();
    for j in 0..data.n_cols() {
        if !data.column(j).iter().any(Cell::is_missing) {
            continue;
        }
        let cells = observed_cells(data, j)?;
        let fill = match data.schema()[j].kind() {
            ColumnKind::Numeric => {
                let mut xs: Vec<f64> = cells.iter().filter_map(Cell::as_f64).collect();
                xs.sort_by(f64::total_cmp);
                let n = xs.len();
                Cell::Num(if n % 2 == 1 {
                    xs[n / 2]
                } else {
                    0.5 * (xs[n / 2 - 1] + xs[n / 2])
                })
            }
            ColumnKind::Categorical => {
                let mut counts = vec![0usize; data.schema()[j].n_categories()];
                for c in cells.iter().filter_map(Cell::as_cat) {
                    counts[c as usize] += 1;
                }
                let best = *counts.iter().max().unwrap();
                Cell::Cat(counts.iter().position(|&c| c == best).unwrap() as u32)
            }
        };
        for i in 0..data.n_rows() {
            if data.cell(i, j).is_missing() {
                out.set(i, j, fill)?;
            }
        }
    }
    Ok(out)
}

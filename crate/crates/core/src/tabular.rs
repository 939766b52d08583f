//! Mixed numeric/categorical tables with explicit missing cells.
//!
//! Storage is column-major. Categorical cells hold an index into their
//! column's ordered label set. Numeric NaN is normalized to [`Cell::Missing`]
//! on construction, so a `Num` cell is never NaN.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel written for missing cells. Reading also accepts the empty string.
pub const MISSING_TOKEN: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    name: String,
    kind: ColumnKind,
    categories: Vec<String>,
}

impl ColumnSchema {
    pub fn numeric(name: impl Into<String>) -> Self {
        ColumnSchema {
            name: name.into(),
            kind: ColumnKind::Numeric,
            categories: Vec::new(),
        }
    }

    /// Labels must be unique, non-empty and distinct from the `NA` sentinel.
    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        labels: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let name = name.into();
        let categories: Vec<String> = labels.into_iter().map(Into::into).collect();
        let mut seen = HashSet::new();
        for label in &categories {
            if label.is_empty() || label == MISSING_TOKEN {
                return Err(Error::Schema(format!(
                    "column {name}: category label {label:?} is reserved"
                )));
            }
            if !seen.insert(label.as_str()) {
                return Err(Error::Schema(format!(
                    "column {name}: duplicate category label {label:?}"
                )));
            }
        }
        Ok(ColumnSchema {
            name,
            kind: ColumnKind::Categorical,
            categories,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ColumnKind {
        self.kind
    }

    pub fn is_numeric(&self) -> bool {
        self.kind == ColumnKind::Numeric
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn category_index(&self, label: &str) -> Option<u32> {
        self.categories
            .iter()
            .position(|c| c == label)
            .map(|i| i as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Num(f64),
    Cat(u32),
    Missing,
}

impl Cell {
    pub fn num(x: f64) -> Cell {
        if x.is_nan() {
            Cell::Missing
        } else {
            Cell::Num(x)
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Cell::Num(x) => Some(x),
            _ => None,
        }
    }

    pub fn as_cat(&self) -> Option<u32> {
        match *self {
            Cell::Cat(c) => Some(c),
            _ => None,
        }
    }

    /// Bit-level equality; used for observed-cell preservation checks.
    pub fn identical(&self, other: &Cell) -> bool {
        match (self, other) {
            (Cell::Num(a), Cell::Num(b)) => a.to_bits() == b.to_bits(),
            (Cell::Cat(a), Cell::Cat(b)) => a == b,
            (Cell::Missing, Cell::Missing) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Vec<ColumnSchema>,
    columns: Vec<Vec<Cell>>,
    n_rows: usize,
}

impl Dataset {
    /// Builds a dataset from column vectors, validating every cell.
    pub fn from_columns(schema: Vec<ColumnSchema>, columns: Vec<Vec<Cell>>) -> Result<Self> {
        if schema.is_empty() {
            return Err(Error::Schema("dataset needs at least one column".into()));
        }
        if schema.len() != columns.len() {
            return Err(Error::Schema(format!(
                "{} schema entries for {} columns",
                schema.len(),
                columns.len()
            )));
        }
        let n_rows = columns[0].len();
        if n_rows == 0 {
            return Err(Error::Data("no rows".into()));
        }
        let mut columns = columns;
        for (col, cells) in schema.iter().zip(columns.iter_mut()) {
            if cells.len() != n_rows {
                return Err(Error::Schema(format!(
                    "column {} has {} rows, expected {n_rows}",
                    col.name,
                    cells.len()
                )));
            }
            for cell in cells.iter_mut() {
                check_cell(col, cell)?;
            }
        }
        Ok(Dataset {
            schema,
            columns,
            n_rows,
        })
    }

    pub fn from_rows(schema: Vec<ColumnSchema>, rows: Vec<Vec<Cell>>) -> Result<Self> {
        let p = schema.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); p];
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != p {
                return Err(Error::Schema(format!(
                    "row {} has {} cells, expected {p}",
                    i + 1,
                    row.len()
                )));
            }
            for (j, cell) in row.into_iter().enumerate() {
                columns[j].push(cell);
            }
        }
        Self::from_columns(schema, columns)
    }

    /// All-numeric dataset; NaN entries become missing.
    pub fn from_numeric(names: &[&str], columns: Vec<Vec<f64>>) -> Result<Self> {
        let schema = names.iter().map(|n| ColumnSchema::numeric(*n)).collect();
        let cells = columns
            .into_iter()
            .map(|c| c.into_iter().map(Cell::num).collect())
            .collect();
        Self::from_columns(schema, cells)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn schema(&self) -> &[ColumnSchema] {
        &self.schema
    }

    pub fn column(&self, j: usize) -> &[Cell] {
        &self.columns[j]
    }

    pub fn cell(&self, i: usize, j: usize) -> Cell {
        self.columns[j][i]
    }

    pub fn row(&self, i: usize) -> Vec<Cell> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Overwrites one cell. The cell must conform to the column schema.
    pub fn set(&mut self, i: usize, j: usize, cell: Cell) -> Result<()> {
        let mut cell = cell;
        check_cell(&self.schema[j], &mut cell)?;
        self.columns[j][i] = cell;
        Ok(())
    }

    /// Observed values of a numeric column, in row order.
    pub fn observed_f64(&self, j: usize) -> Vec<f64> {
        self.columns[j].iter().filter_map(Cell::as_f64).collect()
    }

    pub fn missing_count(&self) -> usize {
        self.columns
            .iter()
            .map(|c| c.iter().filter(|x| x.is_missing()).count())
            .sum()
    }

    pub fn is_complete(&self) -> bool {
        self.columns
            .iter()
            .all(|c| c.iter().all(|x| !x.is_missing()))
    }

    pub fn row_has_missing(&self, i: usize) -> bool {
        self.columns.iter().any(|c| c[i].is_missing())
    }

    /// Row-major missingness mask.
    pub fn missing_mask(&self) -> Vec<Vec<bool>> {
        (0..self.n_rows)
            .map(|i| self.columns.iter().map(|c| c[i].is_missing()).collect())
            .collect()
    }

    pub fn same_schema(&self, other: &Dataset) -> bool {
        self.schema == other.schema
    }

    /// Bitwise cell-for-cell equality (NaN-free by construction).
    pub fn identical(&self, other: &Dataset) -> bool {
        self.same_schema(other)
            && self.n_rows == other.n_rows
            && self
                .columns
                .iter()
                .zip(&other.columns)
                .all(|(a, b)| a.iter().zip(b).all(|(x, y)| x.identical(y)))
    }

    /// Dense numeric matrix (row-major). Fails on missing or categorical cells.
    pub fn to_matrix(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.n_rows)
            .map(|i| {
                self.columns
                    .iter()
                    .enumerate()
                    .map(|(j, c)| match c[i] {
                        Cell::Num(x) => Ok(x),
                        Cell::Cat(_) => Err(Error::Data(format!(
                            "column {} is categorical",
                            self.schema[j].name
                        ))),
                        Cell::Missing => Err(Error::Data(format!(
                            "missing cell at row {}, column {}",
                            i + 1,
                            self.schema[j].name
                        ))),
                    })
                    .collect()
            })
            .collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let columns = self
            .columns
            .iter()
            .map(|c| rows.iter().map(|&i| c[i]).collect())
            .collect();
        Dataset::from_columns(self.schema.clone(), columns)
    }
}

fn check_cell(col: &ColumnSchema, cell: &mut Cell) -> Result<()> {
    match (*cell, col.kind) {
        (Cell::Missing, _) => Ok(()),
        (Cell::Num(x), ColumnKind::Numeric) => {
            if x.is_nan() {
                *cell = Cell::Missing;
            }
            Ok(())
        }
        (Cell::Cat(c), ColumnKind::Categorical) if (c as usize) < col.categories.len() => Ok(()),
        (Cell::Cat(c), ColumnKind::Categorical) => Err(Error::Schema(format!(
            "column {}: category index {c} out of range",
            col.name
        ))),
        (other, _) => Err(Error::Schema(format!(
            "column {}: cell {other:?} does not match kind {:?}",
            col.name, col.kind
        ))),
    }
}

/// How to type CSV columns.
#[derive(Debug, Clone, Default)]
pub enum SchemaHint {
    /// Every column numeric.
    #[default]
    AllNumeric,
    /// Fixed schema: column names must match the header, labels are closed.
    Fixed(Vec<ColumnSchema>),
    /// The named columns are categorical with labels collected from the data
    /// in order of first appearance; all others are numeric.
    Categorical(Vec<String>),
}

fn is_missing_token(s: &str) -> bool {
    s.is_empty() || s == MISSING_TOKEN
}

/// Reads a CSV file. Without a hint every column is numeric.
pub fn read_csv(path: impl AsRef<Path>, schema_hint: Option<&[ColumnSchema]>) -> Result<Dataset> {
    let hint = match schema_hint {
        Some(s) => SchemaHint::Fixed(s.to_vec()),
        None => SchemaHint::AllNumeric,
    };
    read_csv_with(path, &hint)
}

pub fn read_csv_with(path: impl AsRef<Path>, hint: &SchemaHint) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, hint)
}

pub fn parse_csv<R: Read>(reader: R, hint: &SchemaHint) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            msg: e.to_string(),
        })?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Parse {
            row: 0,
            msg: "missing header row".into(),
        });
    }
    let p = header.len();

    let mut schema: Vec<ColumnSchema> = match hint {
        SchemaHint::AllNumeric => header.iter().map(ColumnSchema::numeric).collect(),
        SchemaHint::Fixed(s) => {
            if s.len() != p {
                return Err(Error::Schema(format!(
                    "schema has {} columns, file has {p}",
                    s.len()
                )));
            }
            for (col, name) in s.iter().zip(&header) {
                if col.name != *name {
                    return Err(Error::Schema(format!(
                        "schema column {:?} does not match header {name:?}",
                        col.name
                    )));
                }
            }
            s.clone()
        }
        SchemaHint::Categorical(names) => {
            for n in names {
                if !header.contains(n) {
                    return Err(Error::Schema(format!("no column named {n:?}")));
                }
            }
            header
                .iter()
                .map(|h| {
                    if names.contains(h) {
                        ColumnSchema {
                            name: h.clone(),
                            kind: ColumnKind::Categorical,
                            categories: Vec::new(),
                        }
                    } else {
                        ColumnSchema::numeric(h)
                    }
                })
                .collect()
        }
    };
    let open_labels = matches!(hint, SchemaHint::Categorical(_));

    let mut columns: Vec<Vec<Cell>> = vec![Vec::new(); p];
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            msg: e.to_string(),
        })?;
        if record.len() != p {
            return Err(Error::Parse {
                row,
                msg: format!("expected {p} fields, found {}", record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            let cell = if is_missing_token(field) {
                Cell::Missing
            } else {
                match schema[j].kind {
                    ColumnKind::Numeric => {
                        let x: f64 = field.trim().parse().map_err(|_| Error::Parse {
                            row,
                            msg: format!(
                                "column {:?}: {field:?} is not numeric",
                                schema[j].name
                            ),
                        })?;
                        Cell::num(x)
                    }
                    ColumnKind::Categorical => match schema[j].category_index(field) {
                        Some(c) => Cell::Cat(c),
                        None if open_labels => {
                            schema[j].categories.push(field.to_owned());
                            Cell::Cat((schema[j].categories.len() - 1) as u32)
                        }
                        None => {
                            return Err(Error::Schema(format!(
                                "row {row}: unknown category {field:?} in column {:?}",
                                schema[j].name
                            )))
                        }
                    },
                }
            };
            columns[j].push(cell);
        }
    }
    if columns[0].is_empty() {
        return Err(Error::Data("no rows".into()));
    }
    Dataset::from_columns(schema, columns)
}

pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = std::io::BufWriter::new(file);
    to_csv_writer(data, &mut buf).map_err(|e| Error::io(path, e))?;
    buf.flush().map_err(|e| Error::io(path, e))
}

/// Serializes to CSV text in memory.
pub fn to_csv_string(data: &Dataset) -> String {
    let mut out = Vec::new();
    to_csv_writer(data, &mut out).expect("in-memory write");
    String::from_utf8(out).expect("csv output is utf-8")
}

pub fn to_csv_writer<W: Write>(data: &Dataset, writer: W) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(data.schema.iter().map(|c| c.name.as_str()))?;
    let mut record = Vec::with_capacity(data.n_cols());
    for i in 0..data.n_rows {
        record.clear();
        for (j, col) in data.schema.iter().enumerate() {
            record.push(format_cell(col, data.columns[j][i]));
        }
        wtr.write_record(&record)?;
    }
    wtr.flush()
}

fn format_cell(col: &ColumnSchema, cell: Cell) -> String {
    match cell {
        Cell::Missing => MISSING_TOKEN.to_owned(),
        // `Display` for f64 is the shortest string that parses back exactly.
        Cell::Num(x) => format!("{x}"),
        Cell::Cat(c) => col.categories[c as usize].clone(),
    }
}

/// Per-column location/scale taken from a reference dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    /// `Some((mean, sd))` for numeric columns, `None` for categorical ones.
    pub columns: Vec<Option<(f64, f64)>>,
}

impl StandardizationParams {
    /// Sample mean and SD of each numeric column's observed values. A zero or
    /// undefined SD is replaced by 1 so the transform reduces to a shift.
    pub fn fit(data: &Dataset) -> Self {
        let columns = data
            .schema
            .iter()
            .enumerate()
            .map(|(j, col)| {
                if !col.is_numeric() {
                    return None;
                }
                let xs = data.observed_f64(j);
                let (mean, sd) = mean_sd(&xs);
                let mean = if mean.is_finite() { mean } else { 0.0 };
                let sd = if sd.is_finite() && sd > 0.0 { sd } else { 1.0 };
                Some((mean, sd))
            })
            .collect();
        StandardizationParams { columns }
    }
}

/// Mean and sample SD (n − 1 denominator). NaN where undefined.
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Applies `(x − μ) / σ` to each observed numeric cell.
pub fn standardize(data: &Dataset, params: &StandardizationParams) -> Result<Dataset> {
    if params.columns.len() != data.n_cols() {
        return Err(Error::Schema(format!(
            "standardization covers {} columns, data has {}",
            params.columns.len(),
            data.n_cols()
        )));
    }
    let mut columns = Vec::with_capacity(data.n_cols());
    for (j, col) in data.schema.iter().enumerate() {
        let cells = match (col.kind, params.columns[j]) {
            (ColumnKind::Numeric, Some((mu, sd))) => data.columns[j]
                .iter()
                .map(|c| match *c {
                    Cell::Num(x) => Cell::Num((x - mu) / sd),
                    other => other,
                })
                .collect(),
            (ColumnKind::Categorical, None) => data.columns[j].clone(),
            _ => {
                return Err(Error::Schema(format!(
                    "standardization parameters do not match column {}",
                    col.name
                )))
            }
        };
        columns.push(cells);
    }
    Ok(Dataset {
        schema: data.schema.clone(),
        columns,
        n_rows: data.n_rows,
    })
}

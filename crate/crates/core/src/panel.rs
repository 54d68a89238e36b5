//! Firm-year panel storage and the transformations applied before estimation.
//!
//! A [`PanelDataset`] is immutable: every operation returns a new dataset.
//! Numeric cells are `Option<f64>`; `None` is the explicit missing marker and
//! NaN is never stored.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FIRM_COLUMN: &str = "firm_id";
pub const YEAR_COLUMN: &str = "year";

/// Tolerance on the largest absolute group mean after demeaning.
pub const WITHIN_TOLERANCE: f64 = 1e-8;
pub const WITHIN_MAX_SWEEPS: usize = 100;

const MISSING_MARKERS: [&str; 3] = ["", "NA", "NaN"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Outcome,
    Treatment,
    Control,
    Auxiliary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Text,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub role: Role,
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn numeric(name: impl Into<String>, role: Role) -> Self {
        Self {
            name: name.into(),
            role,
            kind: ColumnKind::Numeric,
        }
    }

    pub fn text(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            role: Role::Auxiliary,
            kind: ColumnKind::Text,
        }
    }
}

/// Column declarations used when reading a CSV file.
///
/// Declared columns are mandatory. Undeclared columns are either rejected or
/// loaded as auxiliary numeric columns, depending on `allow_undeclared`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaDecl {
    pub columns: Vec<ColumnSpec>,
    pub allow_undeclared: bool,
}

impl SchemaDecl {
    pub fn new(columns: Vec<ColumnSpec>) -> Self {
        Self {
            columns,
            allow_undeclared: false,
        }
    }

    pub fn permissive(columns: Vec<ColumnSpec>) -> Self {
        Self {
            columns,
            allow_undeclared: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<Option<f64>>),
    Text(Vec<Option<String>>),
}

impl ColumnData {
    fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Text(v) => v.len(),
        }
    }

    fn kind(&self) -> ColumnKind {
        match self {
            ColumnData::Numeric(_) => ColumnKind::Numeric,
            ColumnData::Text(_) => ColumnKind::Text,
        }
    }

    fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&i| v[i]).collect()),
            ColumnData::Text(v) => ColumnData::Text(rows.iter().map(|&i| v[i].clone()).collect()),
        }
    }

    fn is_missing(&self, row: usize) -> bool {
        match self {
            ColumnData::Numeric(v) => v[row].is_none(),
            ColumnData::Text(v) => v[row].is_none(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub spec: ColumnSpec,
    pub data: ColumnData,
}

impl Column {
    pub fn numeric(name: impl Into<String>, role: Role, values: Vec<Option<f64>>) -> Self {
        Self {
            spec: ColumnSpec::numeric(name, role),
            data: ColumnData::Numeric(values.into_iter().map(|v| v.filter(|x| !x.is_nan())).collect()),
        }
    }

    pub fn text(name: impl Into<String>, values: Vec<Option<String>>) -> Self {
        Self {
            spec: ColumnSpec::text(name),
            data: ColumnData::Text(values),
        }
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PanelDataset {
    firm_ids: Vec<String>,
    years: Vec<i64>,
    columns: Vec<Column>,
}

impl PanelDataset {
    pub fn new(firm_ids: Vec<String>, years: Vec<i64>, columns: Vec<Column>) -> Result<Self> {
        if firm_ids.len() != years.len() {
            return Err(Error::invalid(format!(
                "{} firm ids but {} years",
                firm_ids.len(),
                years.len()
            )));
        }
        let mut seen = HashSet::with_capacity(firm_ids.len());
        for (firm, &year) in firm_ids.iter().zip(&years) {
            if !seen.insert((firm.as_str(), year)) {
                return Err(Error::DuplicateKey {
                    firm: firm.clone(),
                    year,
                });
            }
        }
        let mut names = HashSet::new();
        for c in &columns {
            if c.data.len() != firm_ids.len() {
                return Err(Error::invalid(format!(
                    "column `{}` has {} values for {} rows",
                    c.name(),
                    c.data.len(),
                    firm_ids.len()
                )));
            }
            if c.spec.kind != c.data.kind() {
                return Err(Error::Schema(format!("column `{}` data does not match its declared kind", c.name())));
            }
            if c.name() == FIRM_COLUMN || c.name() == YEAR_COLUMN || !names.insert(c.name().to_owned()) {
                return Err(Error::Schema(format!("duplicate column name `{}`", c.name())));
            }
        }
        Ok(Self {
            firm_ids,
            years,
            columns,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.years.len()
    }

    pub fn is_empty(&self) -> bool {
        self.years.is_empty()
    }

    pub fn firm_ids(&self) -> &[String] {
        &self.firm_ids
    }

    pub fn years(&self) -> &[i64] {
        &self.years
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn schema(&self) -> Vec<ColumnSpec> {
        self.columns.iter().map(|c| c.spec.clone()).collect()
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(Column::name).collect()
    }

    pub fn has_column(&self, name: &str) -> bool {
        name == FIRM_COLUMN || name == YEAR_COLUMN || self.columns.iter().any(|c| c.name() == name)
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_owned()))
    }

    pub fn numeric(&self, name: &str) -> Result<&[Option<f64>]> {
        match &self.column(name)?.data {
            ColumnData::Numeric(v) => Ok(v),
            ColumnData::Text(_) => Err(Error::ColumnType {
                column: name.to_owned(),
                expected: "numeric",
            }),
        }
    }

    pub fn text(&self, name: &str) -> Result<&[Option<String>]> {
        match &self.column(name)?.data {
            ColumnData::Text(v) => Ok(v),
            ColumnData::Numeric(_) => Err(Error::ColumnType {
                column: name.to_owned(),
                expected: "text",
            }),
        }
    }

    /// Numeric column with every cell present, or an error naming the first missing row.
    pub fn dense(&self, name: &str) -> Result<Vec<f64>> {
        self.numeric(name)?
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.ok_or_else(|| {
                    Error::invalid(format!(
                        "column `{name}` is missing at ({}, {})",
                        self.firm_ids[i], self.years[i]
                    ))
                })
            })
            .collect()
    }

    /// Returns a copy with `column` appended, or replacing an existing column of the same name.
    pub fn with_column(&self, column: Column) -> Result<Self> {
        if column.data.len() != self.n_rows() {
            return Err(Error::invalid(format!(
                "column `{}` has {} values for {} rows",
                column.name(),
                column.data.len(),
                self.n_rows()
            )));
        }
        if column.name() == FIRM_COLUMN || column.name() == YEAR_COLUMN {
            return Err(Error::Schema(format!("`{}` is reserved", column.name())));
        }
        let mut out = self.clone();
        match out.columns.iter_mut().find(|c| c.name() == column.name()) {
            Some(slot) => *slot = column,
            None => out.columns.push(column),
        }
        Ok(out)
    }

    pub fn with_role(&self, name: &str, role: Role) -> Result<Self> {
        let mut out = self.clone();
        let col = out
            .columns
            .iter_mut()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_owned()))?;
        col.spec.role = role;
        Ok(out)
    }

    /// Keeps the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            firm_ids: rows.iter().map(|&i| self.firm_ids[i].clone()).collect(),
            years: rows.iter().map(|&i| self.years[i]).collect(),
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    spec: c.spec.clone(),
                    data: c.data.select(rows),
                })
                .collect(),
        }
    }

    fn key_index(&self) -> HashMap<(&str, i64), usize> {
        self.firm_ids
            .iter()
            .zip(&self.years)
            .enumerate()
            .map(|(i, (f, &y))| ((f.as_str(), y), i))
            .collect()
    }

    /// Adds `<column>_lead<k>` holding the same firm's value `lead` years later.
    pub fn lead_outcome(&self, column: &str, lead: usize) -> Result<Self> {
        if lead == 0 {
            return Err(Error::invalid("lead must be at least 1"));
        }
        let source = self.numeric(column)?;
        let spec = self.column(column)?.spec.clone();
        let index = self.key_index();
        let values = self
            .firm_ids
            .iter()
            .zip(&self.years)
            .map(|(f, &y)| {
                index
                    .get(&(f.as_str(), y + lead as i64))
                    .and_then(|&j| source[j])
            })
            .collect();
        self.with_column(Column::numeric(lead_name(column, lead), spec.role, values))
    }

    /// Listwise deletion: drops every row with a missing cell in any of `columns`.
    /// Returns the reduced dataset and the number of dropped rows.
    pub fn drop_missing<S: AsRef<str>>(&self, columns: &[S]) -> Result<(Self, usize)> {
        let cols = columns
            .iter()
            .map(|c| self.column(c.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let keep: Vec<usize> = (0..self.n_rows())
            .filter(|&i| cols.iter().all(|c| !c.data.is_missing(i)))
            .collect();
        let dropped = self.n_rows() - keep.len();
        Ok((self.select_rows(&keep), dropped))
    }

    /// Two-way (or one-way) within transformation by alternating projections.
    ///
    /// Rows missing any of `columns` are left out of the demeaning; their cells
    /// in `columns` are set to missing and the rows are listed in the report.
    pub fn within_transform<S: AsRef<str>>(
        &self,
        columns: &[S],
        effects: FixedEffects,
    ) -> Result<(Self, WithinReport)> {
        let mut report = WithinReport::default();
        if effects.is_empty() {
            return Ok((self.clone(), report));
        }
        let sources = columns
            .iter()
            .map(|c| self.numeric(c.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let active: Vec<usize> = (0..self.n_rows())
            .filter(|&i| sources.iter().all(|s| s[i].is_some()))
            .collect();
        report.flagged_rows = (0..self.n_rows())
            .filter(|i| active.binary_search(i).is_err())
            .collect();

        let firms = group_ids(active.iter().map(|&i| self.firm_ids[i].as_str()));
        let years = group_ids(active.iter().map(|&i| self.years[i]));
        let groups = Groups {
            firm: effects.firm.then_some(firms.as_slice()),
            year: effects.year.then_some(years.as_slice()),
        };

        let mut out = self.clone();
        for (name, source) in columns.iter().zip(&sources) {
            let mut values: Vec<f64> = active.iter().map(|&i| source[i].unwrap()).collect();
            let (sweeps, residual) = demean(&mut values, &groups)?;
            report.sweeps = report.sweeps.max(sweeps);
            report.achieved_tolerance = report.achieved_tolerance.max(residual);
            let mut full = vec![None; self.n_rows()];
            for (&i, v) in active.iter().zip(values) {
                full[i] = Some(v);
            }
            let role = self.column(name.as_ref())?.spec.role;
            out = out.with_column(Column::numeric(name.as_ref(), role, full))?;
        }
        Ok((out, report))
    }

    pub fn apply_filter(&self, filter: &SampleFilter) -> Result<FilterOutcome> {
        for cond in &filter.conditions {
            let col = cond.column();
            if !self.has_column(col) {
                return Err(Error::UnknownColumn(col.to_owned()));
            }
        }
        if filter.conditions.is_empty() {
            return Ok(FilterOutcome {
                data: self.clone(),
                excluded: 0,
                warning: None,
            });
        }
        let mut keep = Vec::with_capacity(self.n_rows());
        for i in 0..self.n_rows() {
            let mut hits = filter.conditions.iter().map(|c| c.matches(self, i));
            let matched = match filter.combine {
                Combine::All => hits.all(|h| h),
                Combine::Any => hits.any(|h| h),
            };
            let retained = match filter.mode {
                FilterMode::Exclude => !matched,
                FilterMode::Keep => matched,
            };
            if retained {
                keep.push(i);
            }
        }
        let excluded = self.n_rows() - keep.len();
        let warning = (keep.is_empty() && self.n_rows() > 0)
            .then(|| format!("filter removed all {} rows", self.n_rows()));
        Ok(FilterOutcome {
            data: self.select_rows(&keep),
            excluded,
            warning,
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![FIRM_COLUMN.to_owned(), YEAR_COLUMN.to_owned()];
        header.extend(self.columns.iter().map(|c| c.name().to_owned()));
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.n_rows() {
            record.clear();
            record.push(self.firm_ids[i].clone());
            record.push(self.years[i].to_string());
            for c in &self.columns {
                record.push(match &c.data {
                    ColumnData::Numeric(v) => v[i].map_or_else(|| "NA".to_owned(), |x| x.to_string()),
                    ColumnData::Text(v) => v[i].clone().unwrap_or_else(|| "NA".to_owned()),
                });
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

pub fn lead_name(column: &str, lead: usize) -> String {
    format!("{column}_lead{lead}")
}

/// Summary produced by [`load_csv`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub rows: usize,
    /// Missing cells per column, including unparseable numeric cells.
    pub missing: BTreeMap<String, usize>,
    /// Numeric cells that were present but could not be parsed.
    pub unparseable: BTreeMap<String, usize>,
    pub undeclared_columns: Vec<String>,
}

impl LoadReport {
    pub fn total_missing(&self) -> usize {
        self.missing.values().sum()
    }
}

impl fmt::Display for LoadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rows: {}", self.rows)?;
        writeln!(f, "missing cells: {}", self.total_missing())?;
        for (col, n) in self.missing.iter().filter(|(_, n)| **n > 0) {
            let bad = self.unparseable.get(col).copied().unwrap_or(0);
            writeln!(f, "  {col}: {n} missing ({bad} unparseable)")?;
        }
        if !self.undeclared_columns.is_empty() {
            writeln!(f, "undeclared columns loaded as auxiliary: {}", self.undeclared_columns.join(", "))?;
        }
        Ok(())
    }
}

/// Column names in the header of a CSV file.
pub fn csv_header(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    Ok(rdr.headers()?.iter().map(str::to_owned).collect())
}

pub fn load_csv(path: impl AsRef<Path>, schema: &SchemaDecl) -> Result<(PanelDataset, LoadReport)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    read_csv(std::io::BufReader::new(file), schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &SchemaDecl) -> Result<(PanelDataset, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::EmptyInput("file has no header".into()));
    }
    let position = |name: &str| header.iter().position(|h| h == name);
    let firm_pos = position(FIRM_COLUMN).ok_or_else(|| Error::MissingColumn(FIRM_COLUMN.into()))?;
    let year_pos = position(YEAR_COLUMN).ok_or_else(|| Error::MissingColumn(YEAR_COLUMN.into()))?;

    let mut specs: Vec<(usize, ColumnSpec)> = Vec::new();
    for spec in &schema.columns {
        let pos = position(&spec.name).ok_or_else(|| Error::MissingColumn(spec.name.clone()))?;
        specs.push((pos, spec.clone()));
    }
    let mut report = LoadReport::default();
    for (pos, name) in header.iter().enumerate() {
        if pos == firm_pos || pos == year_pos || specs.iter().any(|(p, _)| *p == pos) {
            continue;
        }
        if !schema.allow_undeclared {
            return Err(Error::Schema(format!("undeclared column `{name}`")));
        }
        report.undeclared_columns.push(name.clone());
        specs.push((pos, ColumnSpec::numeric(name.clone(), Role::Auxiliary)));
    }

    let mut firm_ids = Vec::new();
    let mut years = Vec::new();
    let mut data: Vec<ColumnData> = specs
        .iter()
        .map(|(_, s)| match s.kind {
            ColumnKind::Numeric => ColumnData::Numeric(Vec::new()),
            ColumnKind::Text => ColumnData::Text(Vec::new()),
        })
        .collect();
    for spec in specs.iter().map(|(_, s)| &s.name) {
        report.missing.insert(spec.clone(), 0);
        report.unparseable.insert(spec.clone(), 0);
    }

    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let firm = record.get(firm_pos).unwrap_or("");
        if firm.is_empty() {
            return Err(Error::invalid(format!("row {}: empty firm_id", line + 2)));
        }
        let year_raw = record.get(year_pos).unwrap_or("");
        let year: i64 = year_raw
            .parse()
            .map_err(|_| Error::invalid(format!("row {}: year `{year_raw}` is not an integer", line + 2)))?;
        firm_ids.push(firm.to_owned());
        years.push(year);
        for ((pos, spec), col) in specs.iter().zip(data.iter_mut()) {
            let raw = record.get(*pos).unwrap_or("");
            let missing = MISSING_MARKERS.contains(&raw);
            match col {
                ColumnData::Numeric(v) => {
                    let parsed = if missing {
                        None
                    } else {
                        match raw.parse::<f64>() {
                            Ok(x) if x.is_finite() => Some(x),
                            _ => {
                                *report.unparseable.get_mut(&spec.name).unwrap() += 1;
                                None
                            }
                        }
                    };
                    if parsed.is_none() {
                        *report.missing.get_mut(&spec.name).unwrap() += 1;
                    }
                    v.push(parsed);
                }
                ColumnData::Text(v) => {
                    if missing {
                        *report.missing.get_mut(&spec.name).unwrap() += 1;
                        v.push(None);
                    } else {
                        v.push(Some(raw.to_owned()));
                    }
                }
            }
        }
    }
    if firm_ids.is_empty() {
        return Err(Error::EmptyInput("no data rows".into()));
    }
    report.rows = firm_ids.len();

    let columns = specs
        .into_iter()
        .zip(data)
        .map(|((_, spec), data)| Column { spec, data })
        .collect();
    let dataset = PanelDataset::new(firm_ids, years, columns)?;
    Ok((dataset, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Effect {
    Firm,
    Year,
}

/// Which fixed effects the within transformation absorbs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<Effect>", into = "Vec<Effect>")]
pub struct FixedEffects {
    pub firm: bool,
    pub year: bool,
}

impl FixedEffects {
    pub const NONE: Self = Self {
        firm: false,
        year: false,
    };
    pub const TWO_WAY: Self = Self {
        firm: true,
        year: true,
    };

    pub fn is_empty(&self) -> bool {
        !self.firm && !self.year
    }
}

impl From<Vec<Effect>> for FixedEffects {
    fn from(v: Vec<Effect>) -> Self {
        Self {
            firm: v.contains(&Effect::Firm),
            year: v.contains(&Effect::Year),
        }
    }
}

impl From<FixedEffects> for Vec<Effect> {
    fn from(fe: FixedEffects) -> Self {
        let mut v = Vec::new();
        if fe.firm {
            v.push(Effect::Firm);
        }
        if fe.year {
            v.push(Effect::Year);
        }
        v
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct WithinReport {
    pub sweeps: usize,
    /// Largest absolute firm or year group mean after the final sweep.
    pub achieved_tolerance: f64,
    /// Rows excluded from demeaning because a transformed column was missing.
    pub flagged_rows: Vec<usize>,
}

fn group_ids<K: std::hash::Hash + Eq>(keys: impl Iterator<Item = K>) -> Vec<usize> {
    let mut map = HashMap::new();
    keys.map(|k| {
        let next = map.len();
        *map.entry(k).or_insert(next)
    })
    .collect()
}

struct Groups<'a> {
    firm: Option<&'a [usize]>,
    year: Option<&'a [usize]>,
}

fn group_means(values: &[f64], ids: &[usize]) -> Vec<f64> {
    let n_groups = ids.iter().max().map_or(0, |m| m + 1);
    let mut sums = vec![0.0; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (&g, &v) in ids.iter().zip(values) {
        sums[g] += v;
        counts[g] += 1;
    }
    sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect()
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn subtract_means(values: &mut [f64], ids: &[usize]) {
    let means = group_means(values, ids);
    for (v, &g) in values.iter_mut().zip(ids) {
        *v -= means[g];
    }
}

/// Alternating projections. Convergence is checked before each sweep, so an
/// already-demeaned input is returned untouched.
fn demean(values: &mut [f64], groups: &Groups<'_>) -> Result<(usize, f64)> {
    let residual = |values: &[f64]| {
        let firm = groups.firm.map_or(0.0, |ids| max_abs(&group_means(values, ids)));
        let year = groups.year.map_or(0.0, |ids| max_abs(&group_means(values, ids)));
        firm.max(year)
    };
    let mut sweeps = 0;
    loop {
        let r = residual(values);
        if r < WITHIN_TOLERANCE {
            return Ok((sweeps, r));
        }
        if sweeps == WITHIN_MAX_SWEEPS {
            return Err(Error::NonConvergence { sweeps, residual: r });
        }
        if let Some(ids) = groups.firm {
            subtract_means(values, ids);
        }
        if let Some(ids) = groups.year {
            subtract_means(values, ids);
        }
        sweeps += 1;
    }
}

/// Demeans a single vector by the given group labels. Exposed for callers that
/// work on raw arrays rather than datasets.
pub fn within_demean(
    values: &mut [f64],
    firm_ids: &[usize],
    year_ids: &[usize],
    effects: FixedEffects,
) -> Result<(usize, f64)> {
    let groups = Groups {
        firm: effects.firm.then_some(firm_ids),
        year: effects.year.then_some(year_ids),
    };
    demean(values, &groups)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    /// Drop rows matching the predicate.
    #[default]
    Exclude,
    /// Keep only rows matching the predicate.
    Keep,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combine {
    #[default]
    All,
    Any,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparison {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Comparison {
    fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparison::Eq => lhs == rhs,
            Comparison::Ne => lhs != rhs,
            Comparison::Lt => lhs < rhs,
            Comparison::Le => lhs <= rhs,
            Comparison::Gt => lhs > rhs,
            Comparison::Ge => lhs >= rhs,
        }
    }
}

/// One predicate of a [`SampleFilter`]. `firm_id` and `year` may be referenced
/// like ordinary columns. A missing cell never matches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum Condition {
    In { column: String, values: Vec<String> },
    Compare { column: String, cmp: Comparison, value: f64 },
}

impl Condition {
    pub fn is_in(column: impl Into<String>, values: &[&str]) -> Self {
        Condition::In {
            column: column.into(),
            values: values.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn compare(column: impl Into<String>, cmp: Comparison, value: f64) -> Self {
        Condition::Compare {
            column: column.into(),
            cmp,
            value,
        }
    }

    pub fn column(&self) -> &str {
        match self {
            Condition::In { column, .. } | Condition::Compare { column, .. } => column,
        }
    }

    fn matches(&self, data: &PanelDataset, row: usize) -> bool {
        match self {
            Condition::In { column, values } => match column.as_str() {
                FIRM_COLUMN => values.iter().any(|v| *v == data.firm_ids[row]),
                YEAR_COLUMN => values.iter().any(|v| v.parse() == Ok(data.years[row])),
                name => match &data.column(name).expect("validated").data {
                    ColumnData::Text(t) => t[row].as_ref().is_some_and(|s| values.contains(s)),
                    ColumnData::Numeric(x) => {
                        x[row].is_some_and(|x| values.iter().any(|v| v.parse::<f64>() == Ok(x)))
                    }
                },
            },
            Condition::Compare { column, cmp, value } => {
                let lhs = match column.as_str() {
                    FIRM_COLUMN => None,
                    YEAR_COLUMN => Some(data.years[row] as f64),
                    name => match &data.column(name).expect("validated").data {
                        ColumnData::Numeric(x) => x[row],
                        ColumnData::Text(_) => None,
                    },
                };
                lhs.is_some_and(|l| cmp.holds(l, *value))
            }
        }
    }
}

/// Declarative row filter, combined with AND (`all`) or OR (`any`).
/// With the default `exclude` mode, rows satisfying the predicate are dropped.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleFilter {
    pub mode: FilterMode,
    pub combine: Combine,
    pub conditions: Vec<Condition>,
}

impl SampleFilter {
    pub fn exclude(conditions: Vec<Condition>) -> Self {
        Self {
            mode: FilterMode::Exclude,
            combine: Combine::All,
            conditions,
        }
    }

    pub fn references(&self, column: &str) -> bool {
        self.conditions.iter().any(|c| c.column() == column)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutcome {
    pub data: PanelDataset,
    pub excluded: usize,
    pub warning: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn read(text: &str, schema: &SchemaDecl) -> Result<(PanelDataset, LoadReport)> {
        read_csv(text.as_bytes(), schema)
    }

    fn single(name: &str) -> SchemaDecl {
        SchemaDecl::new(vec![ColumnSpec::numeric(name, Role::Outcome)])
    }

    fn panel(firms: &[&str], years: &[i64], values: &[f64]) -> PanelDataset {
        PanelDataset::new(
            firms.iter().map(|s| s.to_string()).collect(),
            years.to_vec(),
            vec![Column::numeric("v", Role::Outcome, values.iter().map(|&v| Some(v)).collect())],
        )
        .unwrap()
    }

    #[test]
    fn loads_minimal_file() {
        let (d, report) = read("firm_id,year,v\nA,2020,1.5\nA,2021,2\n", &single("v")).unwrap();
        assert_eq!(d.n_rows(), 2);
        assert_eq!(d.columns().len(), 1);
        assert_eq!(d.numeric("v").unwrap(), &[Some(1.5), Some(2.0)]);
        assert_eq!(report.total_missing(), 0);
    }

    #[test]
    fn na_cell_becomes_missing_and_is_counted() {
        let (d, report) = read("firm_id,year,v\nA,2020,NA\nA,2021,3\n", &single("v")).unwrap();
        assert_eq!(d.n_rows(), 2);
        assert_eq!(d.numeric("v").unwrap()[0], None);
        assert_eq!(report.missing["v"], 1);
        assert_eq!(report.unparseable["v"], 0);
    }

    #[test]
    fn garbage_cell_is_unparseable_missing() {
        let (d, report) = read("firm_id,year,v\nA,2020,abc\nA,2021,\n", &single("v")).unwrap();
        assert_eq!(d.numeric("v").unwrap(), &[None, None]);
        assert_eq!(report.missing["v"], 2);
        assert_eq!(report.unparseable["v"], 1);
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let err = read("firm_id,year,v\nA,2020,1\nA,2020,2\n", &single("v")).unwrap_err();
        assert_eq!(err.to_string(), "duplicate key (A, 2020)");
    }

    #[test]
    fn missing_columns_and_empty_files_are_rejected() {
        assert!(matches!(
            read("firm_id,year\nA,2020\n", &single("v")),
            Err(Error::MissingColumn(c)) if c == "v"
        ));
        assert!(matches!(
            read("firm_id,v\nA,1\n", &single("v")),
            Err(Error::MissingColumn(c)) if c == "year"
        ));
        assert!(matches!(read("", &single("v")), Err(Error::EmptyInput(_))));
        assert!(matches!(read("firm_id,year,v\n", &single("v")), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn fractional_year_is_rejected() {
        assert!(read("firm_id,year,v\nA,2020.5,1\n", &single("v")).is_err());
    }

    #[test]
    fn undeclared_columns_follow_policy() {
        let text = "firm_id,year,v,w\nA,2020,1,2\n";
        assert!(matches!(read(text, &single("v")), Err(Error::Schema(_))));
        let mut schema = single("v");
        schema.allow_undeclared = true;
        let (d, report) = read(text, &schema).unwrap();
        assert_eq!(d.numeric("w").unwrap(), &[Some(2.0)]);
        assert_eq!(report.undeclared_columns, vec!["w".to_string()]);
    }

    #[test]
    fn text_columns_load() {
        let schema = SchemaDecl::new(vec![ColumnSpec::text("region")]);
        let (d, _) = read("firm_id,year,region\nA,2020,municipality\nB,2020,NA\n", &schema).unwrap();
        assert_eq!(d.text("region").unwrap(), &[Some("municipality".into()), None]);
    }

    #[test]
    fn lead_definition() {
        let d = panel(&["A", "A"], &[2020, 2021], &[5.0, 7.0]);
        let led = d.lead_outcome("v", 1).unwrap();
        assert_eq!(led.numeric("v_lead1").unwrap(), &[Some(7.0), None]);
        assert_eq!(led.numeric("v").unwrap(), d.numeric("v").unwrap());

        let d = panel(&["A"], &[2020], &[5.0]);
        assert_eq!(d.lead_outcome("v", 1).unwrap().numeric("v_lead1").unwrap(), &[None]);

        let d = panel(&["A", "A", "A"], &[2019, 2020, 2021], &[1.0, 2.0, 3.0]);
        let led = d.lead_outcome("v", 2).unwrap();
        assert_eq!(led.numeric("v_lead2").unwrap(), &[Some(3.0), None, None]);

        assert!(matches!(d.lead_outcome("nope", 1), Err(Error::UnknownColumn(_))));
    }

    #[test]
    fn lead_does_not_cross_firms() {
        let d = panel(&["A", "B"], &[2020, 2021], &[1.0, 2.0]);
        let led = d.lead_outcome("v", 1).unwrap();
        assert_eq!(led.numeric("v_lead1").unwrap(), &[None, None]);
    }

    #[test]
    fn saturated_fixed_effects_zero_everything() {
        let d = panel(&["A", "A", "A"], &[1, 2, 3], &[1.0, 2.0, 3.0]);
        let (firm_only, _) = d.within_transform(&["v"], FixedEffects { firm: true, year: false }).unwrap();
        assert_eq!(firm_only.numeric("v").unwrap(), &[Some(-1.0), Some(0.0), Some(1.0)]);
        let (out, _) = d.within_transform(&["v"], FixedEffects::TWO_WAY).unwrap();
        for v in out.dense("v").unwrap() {
            assert!(v.abs() < 1e-12);
        }
    }

    fn assert_group_means_vanish(d: &PanelDataset, col: &str) {
        let v = d.dense(col).unwrap();
        let firms = group_ids(d.firm_ids().iter().map(String::as_str));
        let years = group_ids(d.years().iter().copied());
        assert!(max_abs(&group_means(&v, &firms)) < 1e-8);
        assert!(max_abs(&group_means(&v, &years)) < 1e-8);
    }

    #[test]
    fn balanced_two_by_two_converges() {
        let d = panel(&["A", "A", "B", "B"], &[1, 2, 1, 2], &[10.0, 12.0, 20.0, 26.0]);
        let (out, report) = d.within_transform(&["v"], FixedEffects::TWO_WAY).unwrap();
        assert_group_means_vanish(&out, "v");
        assert!(report.achieved_tolerance < 1e-8);
        // Interaction residual of a 2x2 table: +-(10 - 12 - 20 + 26)/4 = +-1.
        let v = out.dense("v").unwrap();
        for (got, want) in v.iter().zip([1.0, -1.0, -1.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn unbalanced_panel_converges_and_is_idempotent() {
        let firms = ["A", "A", "A", "B", "B", "C", "C", "C", "D"];
        let years = [1, 2, 3, 1, 3, 2, 3, 4, 4];
        let values = [3.0, -1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0];
        let d = panel(&firms, &years, &values);
        let (once, report) = d.within_transform(&["v"], FixedEffects::TWO_WAY).unwrap();
        assert!(report.sweeps > 1);
        assert_group_means_vanish(&once, "v");
        let (twice, report2) = once.within_transform(&["v"], FixedEffects::TWO_WAY).unwrap();
        assert_eq!(report2.sweeps, 0);
        for (a, b) in once.dense("v").unwrap().iter().zip(twice.dense("v").unwrap()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn missing_rows_are_flagged_not_demeaned() {
        let d = PanelDataset::new(
            vec!["A".into(), "A".into(), "A".into()],
            vec![1, 2, 3],
            vec![Column::numeric("v", Role::Outcome, vec![Some(1.0), None, Some(3.0)])],
        )
        .unwrap();
        let (out, report) = d.within_transform(&["v"], FixedEffects { firm: true, year: false }).unwrap();
        assert_eq!(report.flagged_rows, vec![1]);
        assert_eq!(out.numeric("v").unwrap(), &[Some(-1.0), None, Some(1.0)]);
    }

    #[test]
    fn within_rejects_text_and_unknown_columns() {
        let d = panel(&["A"], &[1], &[1.0]);
        assert!(d.within_transform(&["zz"], FixedEffects::TWO_WAY).is_err());
    }

    fn regions() -> PanelDataset {
        let firms: Vec<String> = (0..10).map(|i| format!("F{i}")).collect();
        let region = (0..10)
            .map(|i| Some(if i % 3 == 0 && i < 9 { "municipality" } else { "province" }.to_string()))
            .collect();
        PanelDataset::new(
            firms,
            vec![2020; 10],
            vec![
                Column::text("region", region),
                Column::numeric("v", Role::Outcome, (0..10).map(|i| Some(i as f64)).collect()),
            ],
        )
        .unwrap()
    }

    #[test]
    fn exclusion_filter_counts() {
        let d = regions();
        let f = SampleFilter::exclude(vec![Condition::is_in("region", &["municipality"])]);
        let out = d.apply_filter(&f).unwrap();
        assert_eq!(out.data.n_rows(), 7);
        assert_eq!(out.excluded, 3);
        assert!(out.warning.is_none());
        assert_eq!(d.n_rows(), 10);
    }

    #[test]
    fn empty_filter_is_identity() {
        let d = regions();
        let out = d.apply_filter(&SampleFilter::default()).unwrap();
        assert_eq!(out.data, d);
        assert_eq!(out.excluded, 0);
    }

    #[test]
    fn filter_removing_everything_warns() {
        let d = regions();
        let f = SampleFilter::exclude(vec![Condition::compare("year", Comparison::Ge, 2000.0)]);
        let out = d.apply_filter(&f).unwrap();
        assert!(out.data.is_empty());
        assert!(out.warning.is_some());
    }

    #[test]
    fn filter_combinators_and_keep_mode() {
        let d = regions();
        let f = SampleFilter {
            mode: FilterMode::Keep,
            combine: Combine::Any,
            conditions: vec![
                Condition::compare("v", Comparison::Lt, 2.0),
                Condition::is_in("firm_id", &["F9"]),
            ],
        };
        let out = d.apply_filter(&f).unwrap();
        assert_eq!(out.data.firm_ids(), &["F0", "F1", "F9"]);
    }

    #[test]
    fn filter_on_unknown_column_errors() {
        let f = SampleFilter::exclude(vec![Condition::is_in("province", &["x"])]);
        assert!(matches!(regions().apply_filter(&f), Err(Error::UnknownColumn(_))));
    }

    #[test]
    fn lead_and_filter_commute() {
        let d = regions().lead_outcome("v", 1).unwrap();
        let f = SampleFilter::exclude(vec![Condition::is_in("region", &["municipality"])]);
        let a = d.apply_filter(&f).unwrap().data;
        let b = regions().apply_filter(&f).unwrap().data.lead_outcome("v", 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn drop_missing_counts() {
        let d = PanelDataset::new(
            vec!["A".into(), "A".into()],
            vec![1, 2],
            vec![Column::numeric("v", Role::Outcome, vec![Some(1.0), None])],
        )
        .unwrap();
        let (out, dropped) = d.drop_missing(&["v"]).unwrap();
        assert_eq!((out.n_rows(), dropped), (1, 1));
    }

    #[test]
    fn fixed_effects_serde() {
        let fe: FixedEffects = serde_json::from_str(r#"["firm","year"]"#).unwrap();
        assert_eq!(fe, FixedEffects::TWO_WAY);
        assert_eq!(serde_json::to_string(&FixedEffects::NONE).unwrap(), "[]");
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(values in proptest::collection::vec(
            prop_oneof![Just(None), any::<f64>().prop_filter("finite", |x| x.is_finite()).prop_map(Some)],
            1..40,
        )) {
            let n = values.len();
            let d = PanelDataset::new(
                (0..n).map(|i| format!("F{}", i % 7)).collect(),
                (0..n as i64).map(|i| 2000 + i / 7).collect(),
                vec![Column::numeric("v", Role::Outcome, values.clone())],
            ).unwrap();
            let mut buf = Vec::new();
            d.write_csv(&mut buf).unwrap();
            let (back, _) = read_csv(buf.as_slice(), &single("v")).unwrap();
            let got = back.numeric("v").unwrap();
            for (a, b) in got.iter().zip(&values) {
                prop_assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
            }
        }

        #[test]
        fn within_group_means_vanish(
            cells in proptest::collection::vec((0usize..6, 0usize..5, -50.0f64..50.0), 2..60)
        ) {
            let mut seen = HashSet::new();
            let cells: Vec<_> = cells.into_iter().filter(|(f, y, _)| seen.insert((*f, *y))).collect();
            let d = PanelDataset::new(
                cells.iter().map(|(f, _, _)| format!("F{f}")).collect(),
                cells.iter().map(|(_, y, _)| *y as i64).collect(),
                vec![Column::numeric("v", Role::Outcome, cells.iter().map(|c| Some(c.2)).collect())],
            ).unwrap();
            // Weakly connected unbalanced panels may legitimately exhaust the
            // sweep cap; a successful transform must meet the tolerance.
            match d.within_transform(&["v"], FixedEffects::TWO_WAY) {
                Ok((out, _)) => {
                    assert_group_means_vanish(&out, "v");
                    let (again, _) = out.within_transform(&["v"], FixedEffects::TWO_WAY).unwrap();
                    prop_assert_eq!(out, again);
                }
                Err(Error::NonConvergence { sweeps, residual }) => {
                    prop_assert_eq!(sweeps, WITHIN_MAX_SWEEPS);
                    prop_assert!(residual >= WITHIN_TOLERANCE);
                }
                Err(other) => prop_assert!(false, "unexpected error {other}"),
            }
        }

        #[test]
        fn balanced_panels_always_converge(
            n_firms in 1usize..8,
            n_years in 1usize..6,
            seed in any::<u64>(),
        ) {
            use rand::Rng as _;
            let mut rng = crate::rng::rng_from_seed(seed);
            let n = n_firms * n_years;
            let d = PanelDataset::new(
                (0..n).map(|i| format!("F{}", i / n_years)).collect(),
                (0..n).map(|i| (2000 + i % n_years) as i64).collect(),
                vec![Column::numeric("v", Role::Outcome, (0..n).map(|_| Some(rng.gen_range(-50.0..50.0))).collect())],
            ).unwrap();
            let (out, report) = d.within_transform(&["v"], FixedEffects::TWO_WAY).unwrap();
            prop_assert!(report.achieved_tolerance < WITHIN_TOLERANCE);
            assert_group_means_vanish(&out, "v");
            let (again, _) = out.within_transform(&["v"], FixedEffects::TWO_WAY).unwrap();
            prop_assert_eq!(out, again);
        }
    }
}

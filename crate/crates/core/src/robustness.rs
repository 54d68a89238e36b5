//! Robustness variants of the benchmark estimation and regression tables.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dml::{run_dml_pipeline, DmlConfig, DmlResult, RunManifest};
use crate::error::{Error, Result};
use crate::learners::LearnerSpec;
use crate::panel::{ColumnData, PanelDataset, SampleFilter};

pub const BASE: &str = "base";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VariantKind {
    Base,
    /// Drops (or keeps) the rows matched by a filter.
    SampleExclusion { filter: SampleFilter },
    /// Appends a column, typically a policy dummy, to the controls.
    ConfounderAdd { column: String },
    /// Uses one learner for both nuisance functions.
    LearnerSwap { learner: LearnerSpec },
    Refold { n_folds: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    #[serde(flatten)]
    pub kind: VariantKind,
}

impl Variant {
    pub fn new(name: impl Into<String>, kind: VariantKind) -> Self {
        Self { name: name.into(), kind }
    }
}

/// Variants run next to the base specification. The base is always run and
/// must not be listed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessSuite {
    pub variants: Vec<Variant>,
}

impl RobustnessSuite {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for v in &self.variants {
            if v.name.is_empty() || v.name == BASE || matches!(v.kind, VariantKind::Base) {
                return Err(Error::invalid(format!("variant `{}`: the base run is implicit", v.name)));
            }
            if !v.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(Error::invalid(format!("variant name `{}` must be alphanumeric, `_` or `-`", v.name)));
            }
            if !seen.insert(v.name.as_str()) {
                return Err(Error::invalid(format!("duplicate variant `{}`", v.name)));
            }
        }
        Ok(())
    }
}

/// The estimation every variant starts from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseSpec {
    pub outcomes: Vec<String>,
    pub treatment: String,
    pub controls: Vec<String>,
    pub config: DmlConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeResult {
    pub outcome: String,
    pub result: Option<DmlResult>,
    pub manifest: Option<RunManifest>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub name: String,
    pub kind: VariantKind,
    pub controls: Vec<String>,
    pub n_folds: usize,
    pub rows_excluded: usize,
    pub warnings: Vec<String>,
    /// Set when the variant itself could not be applied.
    pub error: Option<String>,
    pub outcomes: Vec<OutcomeResult>,
}

impl VariantResult {
    pub fn results(&self) -> Vec<(String, DmlResult)> {
        self.outcomes
            .iter()
            .filter_map(|o| Some((o.outcome.clone(), o.result.clone()?)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteResults {
    /// Base first, then variants in suite order.
    pub variants: Vec<VariantResult>,
}

impl SuiteResults {
    pub fn get(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.name == name)
    }
}

struct Applied {
    data: PanelDataset,
    controls: Vec<String>,
    config: DmlConfig,
    excluded: usize,
    warnings: Vec<String>,
}

fn apply(data: &PanelDataset, base: &BaseSpec, kind: &VariantKind) -> Result<Applied> {
    let mut out = Applied {
        data: data.clone(),
        controls: base.controls.clone(),
        config: base.config.clone(),
        excluded: 0,
        warnings: Vec::new(),
    };
    match kind {
        VariantKind::Base => {}
        VariantKind::SampleExclusion { filter } => {
            let f = data.apply_filter(filter)?;
            out.data = f.data;
            out.excluded = f.excluded;
            out.warnings.extend(f.warning);
        }
        VariantKind::ConfounderAdd { column } => {
            match &data.column(column)?.data {
                ColumnData::Numeric(_) => {}
                ColumnData::Text(_) => {
                    return Err(Error::ColumnType {
                        column: column.clone(),
                        expected: "numeric",
                    })
                }
            }
            if base.controls.contains(column) {
                return Err(Error::invalid(format!("`{column}` is already a control")));
            }
            out.controls.push(column.clone());
        }
        VariantKind::LearnerSwap { learner } => {
            learner.validate()?;
            out.config = out.config.with_learner(learner.clone());
        }
        VariantKind::Refold { n_folds } => out.config.n_folds = *n_folds,
    }
    Ok(out)
}

fn run_variant(data: &PanelDataset, base: &BaseSpec, variant: &Variant) -> VariantResult {
    let mut result = VariantResult {
        name: variant.name.clone(),
        kind: variant.kind.clone(),
        controls: base.controls.clone(),
        n_folds: base.config.n_folds,
        rows_excluded: 0,
        warnings: Vec::new(),
        error: None,
        outcomes: Vec::new(),
    };
    let applied = match apply(data, base, &variant.kind) {
        Ok(a) => a,
        Err(e) => {
            result.error = Some(e.to_string());
            return result;
        }
    };
    result.controls = applied.controls.clone();
    result.n_folds = applied.config.n_folds;
    result.rows_excluded = applied.excluded;
    result.warnings = applied.warnings;
    result.outcomes = base
        .outcomes
        .par_iter()
        .map(|outcome| {
            match run_dml_pipeline(&applied.data, outcome, &base.treatment, &applied.controls, &applied.config) {
                Ok(run) => OutcomeResult {
                    outcome: outcome.clone(),
                    result: Some(run.result),
                    manifest: Some(run.manifest),
                    error: None,
                },
                Err(e) => OutcomeResult {
                    outcome: outcome.clone(),
                    result: None,
                    manifest: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    result
}

/// Runs the base estimation and every variant for every outcome. A failing
/// variant or outcome is reported in place; the others are unaffected.
pub fn run_suite(data: &PanelDataset, base: &BaseSpec, suite: &RobustnessSuite) -> Result<SuiteResults> {
    suite.validate()?;
    if base.outcomes.is_empty() {
        return Err(Error::invalid("no outcomes to estimate"));
    }
    let mut jobs = vec![Variant::new(BASE, VariantKind::Base)];
    jobs.extend(suite.variants.iter().cloned());
    Ok(SuiteResults {
        variants: jobs.par_iter().map(|v| run_variant(data, base, v)).collect(),
    })
}

// ---------------------------------------------------------------------------
// Tables

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stars {
    None,
    One,
    Two,
    Three,
}

impl Stars {
    /// `***` below 0.01, `**` below 0.05, `*` below 0.10; a p-value exactly
    /// at a threshold gets the weaker mark.
    pub fn from_p(p: f64) -> Self {
        if p < 0.01 {
            Stars::Three
        } else if p < 0.05 {
            Stars::Two
        } else if p < 0.10 {
            Stars::One
        } else {
            Stars::None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stars::None => "",
            Stars::One => "*",
            Stars::Two => "**",
            Stars::Three => "***",
        }
    }
}

/// Fixed decimals with ties to even on the exact binary value; never prints `-0`.
pub fn format_fixed(x: f64, decimals: usize) -> String {
    let s = format!("{x:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_owned()
    } else {
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub estimate: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

impl Cell {
    pub fn stars(&self) -> Stars {
        Stars::from_p(self.p_value)
    }

    pub fn estimate_text(&self) -> String {
        format!("{}{}", format_fixed(self.estimate, 3), self.stars().as_str())
    }

    pub fn t_text(&self) -> String {
        format!("({})", format_fixed(self.t_stat, 2))
    }

    /// Both parts on one line, e.g. `0.081*** (5.09)`.
    pub fn render(&self) -> String {
        format!("{} {}", self.estimate_text(), self.t_text())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTable {
    pub title: String,
    pub term: String,
    pub columns: Vec<String>,
    pub cells: Vec<Option<Cell>>,
    pub n: Vec<Option<usize>>,
    pub firm_fe: Vec<Option<bool>>,
    pub year_fe: Vec<Option<bool>>,
    pub note: String,
    pub warnings: Vec<String>,
}

pub const TABLE_NOTE: &str = "t statistics in parentheses. *** p < 0.01, ** p < 0.05, * p < 0.10.";

/// Lays out one coefficient per outcome in `layout` order. Outcomes absent
/// from `results` become blank columns with a warning.
pub fn regression_table(
    results: &[(String, DmlResult)],
    layout: &[String],
    term: &str,
    title: &str,
) -> Result<RegressionTable> {
    if results.is_empty() {
        return Err(Error::invalid("no results to tabulate"));
    }
    let mut table = RegressionTable {
        title: title.to_owned(),
        term: term.to_owned(),
        columns: layout.to_vec(),
        cells: Vec::new(),
        n: Vec::new(),
        firm_fe: Vec::new(),
        year_fe: Vec::new(),
        note: TABLE_NOTE.to_owned(),
        warnings: Vec::new(),
    };
    for col in layout {
        match results.iter().find(|(o, _)| o == col) {
            Some((_, r)) => {
                table.cells.push(Some(Cell {
                    estimate: r.theta,
                    t_stat: r.t_stat,
                    p_value: r.p_value,
                }));
                table.n.push(Some(r.n_used));
                table.firm_fe.push(r.config.as_ref().map(|c| c.fixed_effects.firm));
                table.year_fe.push(r.config.as_ref().map(|c| c.fixed_effects.year));
            }
            None => {
                table.warnings.push(format!("no result for `{col}`; column left blank"));
                table.cells.push(None);
                table.n.push(None);
                table.firm_fe.push(None);
                table.year_fe.push(None);
            }
        }
    }
    Ok(table)
}

fn yes_no(v: Option<bool>) -> String {
    match v {
        Some(true) => "Yes".into(),
        Some(false) => "No".into(),
        None => String::new(),
    }
}

impl RegressionTable {
    /// Row labels and cell strings shared by every export.
    fn grid(&self) -> Vec<Vec<String>> {
        let mut header = vec![String::new()];
        header.extend(self.columns.iter().cloned());
        let mut est = vec![self.term.clone()];
        let mut t = vec![String::new()];
        for c in &self.cells {
            est.push(c.map(|c| c.estimate_text()).unwrap_or_default());
            t.push(c.map(|c| c.t_text()).unwrap_or_default());
        }
        let mut n = vec!["N".to_owned()];
        n.extend(self.n.iter().map(|v| v.map(|v| v.to_string()).unwrap_or_default()));
        let mut firm = vec!["Firm FE".to_owned()];
        firm.extend(self.firm_fe.iter().map(|&v| yes_no(v)));
        let mut year = vec!["Year FE".to_owned()];
        year.extend(self.year_fe.iter().map(|&v| yes_no(v)));
        vec![header, est, t, n, firm, year]
    }

    pub fn to_text(&self) -> String {
        let grid = self.grid();
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|j| grid.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
        let rule = "-".repeat(total);
        let mut out = String::new();
        if !self.title.is_empty() {
            writeln!(out, "{}", self.title).unwrap();
        }
        let line = |row: &[String], out: &mut String| {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (s, w))| if j == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            writeln!(out, "{}", cells.join("  ").trim_end()).unwrap();
        };
        writeln!(out, "{rule}").unwrap();
        line(&grid[0], &mut out);
        writeln!(out, "{rule}").unwrap();
        for row in &grid[1..3] {
            line(row, &mut out);
        }
        writeln!(out, "{rule}").unwrap();
        for row in &grid[3..] {
            line(row, &mut out);
        }
        writeln!(out, "{rule}").unwrap();
        writeln!(out, "{}", self.note).unwrap();
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.grid() {
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_markdown(&self) -> String {
        let grid = self.grid();
        let mut out = String::new();
        let row = |r: &[String]| format!("| {} |", r.join(" | "));
        writeln!(out, "{}", row(&grid[0])).unwrap();
        let sep: Vec<&str> = (0..grid[0].len()).map(|j| if j == 0 { ":--" } else { "--:" }).collect();
        writeln!(out, "| {} |", sep.join(" | ")).unwrap();
        for r in &grid[1..] {
            writeln!(out, "{}", row(r)).unwrap();
        }
        writeln!(out).unwrap();
        writeln!(out, "{}", self.note.replace('*', "\\*")).unwrap();
        out
    }
}

/// Printed estimates and t statistics recovered from a CSV export, per column.
pub fn parse_table_csv(text: &str) -> Result<Vec<(String, Option<(f64, f64)>)>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let rows: Vec<csv::StringRecord> = r.records().collect::<std::result::Result<_, _>>()?;
    if rows.len() < 3 {
        return Err(Error::invalid("table csv needs a header, estimate and t rows"));
    }
    let num = |s: &str| -> Result<f64> {
        s.trim_end_matches('*')
            .trim_start_matches('(')
            .trim_end_matches(')')
            .parse()
            .map_err(|_| Error::invalid(format!("not a table number: `{s}`")))
    };
    (1..rows[0].len())
        .map(|j| {
            let (e, t) = (&rows[1][j], &rows[2][j]);
            let cell = if e.is_empty() { None } else { Some((num(e)?, num(t)?)) };
            Ok((rows[0][j].to_owned(), cell))
        })
        .collect()
}

//! Resilience sub-indicators, the marketization index, mediators and controls.
//!
//! Scalar formulas are exposed as plain functions. [`compute_indicators`]
//! applies them to a raw firm-year panel and appends the results as columns,
//! routing per-row failures to missing cells plus an [`Issue`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{self, FeatureMatrix, ForestParams, LearnerSpec};
use crate::panel::{Column, PanelDataset, Role};

pub const DEFAULT_MDE_WEIGHTS: [f64; 3] = [0.42, 0.35, 0.23];
pub const DEFAULT_KEYWORDS: [&str; 2] = ["coordination cost", "information cost"];
pub const FORECAST_WINDOW: usize = 3;

pub const SCR_COLUMNS: [&str; 5] = ["SCR1", "SCR2", "SCR3", "SCR4", "SCR5"];
pub const MDE_COLUMN: &str = "Mde";
pub const MEDIATOR_COLUMNS: [&str; 3] = ["Tech_inno", "Trans_cost", "Fin_sync"];
pub const CONTROL_COLUMNS: [&str; 11] = [
    "Size",
    "Lev",
    "Roa",
    "Inv_turn",
    "Fix_ratio",
    "Board_size",
    "Dual",
    "Top1",
    "Cash_ratio",
    "Soe",
    "Growth",
];

// ---------------------------------------------------------------------------
// Scalar formulas

/// Share of the previous core partners (at most three) still present.
pub fn scr1_stability<S: AsRef<str>>(prev: &[S], current: &[S]) -> Result<f64> {
    let prev: HashSet<&str> = prev.iter().map(AsRef::as_ref).collect();
    if prev.len() > 3 {
        return Err(Error::invalid(format!("at most 3 core partners, got {}", prev.len())));
    }
    let current: HashSet<&str> = current.iter().map(AsRef::as_ref).collect();
    Ok(prev.intersection(&current).count() as f64 / 3.0)
}

pub fn scr2_concentration(supplier_share: f64, customer_share: f64) -> Result<f64> {
    for (name, v) in [("supplier", supplier_share), ("customer", customer_share)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("top-3 {name} share {v} outside [0, 1]")));
        }
    }
    Ok((supplier_share + customer_share) / 2.0)
}

pub fn scr3_forecast_accuracy(predicted: f64, actual: f64) -> Result<f64> {
    if !(actual > 0.0) || !predicted.is_finite() || !actual.is_finite() {
        return Err(Error::invalid(format!("actual sales must be positive, got {actual}")));
    }
    Ok((1.0 - (predicted - actual).abs() / actual).max(0.0))
}

pub fn scr4_adaptation(wc_turnover: f64, ar_turnover: f64) -> Result<f64> {
    let product = wc_turnover * ar_turnover;
    if !(product > 0.0) || !product.is_finite() {
        return Err(Error::invalid(format!("turnover product {product} is not positive")));
    }
    Ok(product.ln())
}

pub fn scr5_recovery(op_cashflow: f64, scf_quota: f64, current_liabilities: f64) -> Result<f64> {
    if !(current_liabilities > 0.0) {
        return Err(Error::invalid(format!(
            "current liabilities must be positive, got {current_liabilities}"
        )));
    }
    Ok((op_cashflow + scf_quota) / current_liabilities)
}

/// Mean of the up-to-`window` previous years' actual sales of the same firm.
///
/// Rows with no earlier observation get `None`.
pub fn moving_average_forecast(
    firm_ids: &[String],
    years: &[i64],
    actual: &[Option<f64>],
    window: usize,
) -> Vec<Option<f64>> {
    let index: HashMap<(&str, i64), usize> = firm_ids
        .iter()
        .zip(years)
        .enumerate()
        .map(|(i, (f, &y))| ((f.as_str(), y), i))
        .collect();
    (0..years.len())
        .map(|i| {
            let past: Vec<f64> = (1..=window as i64)
                .filter_map(|k| index.get(&(firm_ids[i].as_str(), years[i] - k)))
                .filter_map(|&j| actual[j])
                .collect();
            (!past.is_empty()).then(|| past.iter().sum::<f64>() / past.len() as f64)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Standardisation helpers

/// Z-scores with the sample standard deviation. A constant input yields zeros
/// and `false`.
pub fn zscore(values: &[f64]) -> (Vec<f64>, bool) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    let spread = values.iter().fold(0.0_f64, |m, v| m.max((v - mean).abs()));
    if !(sd > 0.0) || spread <= 1e-12 * mean.abs().max(1.0) {
        return (vec![0.0; values.len()], false);
    }
    (values.iter().map(|v| (v - mean) / sd).collect(), true)
}

// ---------------------------------------------------------------------------
// Marketization index

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdeInputs {
    pub platform_volume: f64,
    pub asset_registrations: f64,
    pub provider_density: f64,
}

impl MdeInputs {
    fn as_array(&self) -> [f64; 3] {
        [self.platform_volume, self.asset_registrations, self.provider_density]
    }
}

/// Non-negative weights summing to one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct MdeWeights([f64; 3]);

impl MdeWeights {
    pub fn new(w: [f64; 3]) -> Result<Self> {
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(format!("weights must be non-negative, got {w:?}")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("weights must sum to 1, got {sum}")));
        }
        Ok(Self(w))
    }

    pub fn values(&self) -> [f64; 3] {
        self.0
    }
}

impl Default for MdeWeights {
    fn default() -> Self {
        Self(DEFAULT_MDE_WEIGHTS)
    }
}

impl TryFrom<[f64; 3]> for MdeWeights {
    type Error = Error;

    fn try_from(w: [f64; 3]) -> Result<Self> {
        Self::new(w)
    }
}

impl From<MdeWeights> for [f64; 3] {
    fn from(w: MdeWeights) -> Self {
        w.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MdeIndex {
    pub values: Vec<f64>,
    pub warnings: Vec<String>,
}

const BASE_NAMES: [&str; 3] = ["platform_volume", "asset_registrations", "provider_density"];

/// Weighted sum of z-scored base indicators, min-max rescaled to `[0, 1]`.
pub fn mde_index(inputs: &[MdeInputs], weights: &MdeWeights) -> Result<MdeIndex> {
    if inputs.len() < 2 {
        return Err(Error::invalid("marketization index needs at least 2 region-years"));
    }
    if inputs.iter().any(|r| r.as_array().iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("marketization inputs must be finite"));
    }
    let mut warnings = Vec::new();
    let mut composite = vec![0.0; inputs.len()];
    for (k, name) in BASE_NAMES.iter().enumerate() {
        let raw: Vec<f64> = inputs.iter().map(|r| r.as_array()[k]).collect();
        let (z, ok) = zscore(&raw);
        if !ok {
            warnings.push(format!("{name} has zero variance; its z-score is set to 0"));
        }
        for (c, v) in composite.iter_mut().zip(z) {
            *c += weights.0[k] * v;
        }
    }
    let lo = composite.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = composite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let values = if hi - lo <= 1e-12 {
        warnings.push("all composite values are equal; index set to 0.5".to_owned());
        vec![0.5; inputs.len()]
    } else {
        composite.iter().map(|c| (c - lo) / (hi - lo)).collect()
    };
    Ok(MdeIndex { values, warnings })
}

/// Weights from forest impurity importances of the three base indicators
/// when predicting `target`.
pub fn importance_weights(
    inputs: &[MdeInputs],
    target: &[f64],
    params: &ForestParams,
    seed: u64,
) -> Result<MdeWeights> {
    let columns = (0..3).map(|k| inputs.iter().map(|r| r.as_array()[k]).collect()).collect();
    let x = FeatureMatrix::new(BASE_NAMES.iter().map(|s| s.to_string()).collect(), columns)?;
    let model = learners::fit(&LearnerSpec::Forest(params.clone()), &x, target, seed)?;
    let imp = model.feature_importance()?;
    let sum: f64 = imp.iter().sum();
    MdeWeights::new([imp[0] / sum, imp[1] / sum, imp[2] / sum])
}

// ---------------------------------------------------------------------------
// Mediators

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediatorInputs {
    pub invention_patents: f64,
    pub utility_patents: f64,
    pub digital_expense: f64,
    pub total_assets: f64,
    pub keyword_freq: f64,
    pub admin_expense: f64,
    pub operating_income: f64,
    pub scf_balance_ratio: f64,
    pub guarantee_ratio: f64,
}

/// Weighted patent count plus digital intensity, before standardisation.
pub fn tech_inno_raw(invention: f64, utility: f64, digital_expense: f64, total_assets: f64) -> Result<f64> {
    if invention < 0.0 || utility < 0.0 {
        return Err(Error::invalid("patent counts must be non-negative"));
    }
    if !(total_assets > 0.0) {
        return Err(Error::invalid(format!("total assets must be positive, got {total_assets}")));
    }
    Ok(2.0 * invention + utility + digital_expense / total_assets)
}

pub fn admin_ratio(admin_expense: f64, operating_income: f64) -> Result<f64> {
    if !(operating_income > 0.0) {
        return Err(Error::invalid(format!(
            "operating income must be positive, got {operating_income}"
        )));
    }
    Ok(admin_expense / operating_income)
}

pub fn fin_sync(scf_balance_ratio: f64, guarantee_ratio: f64) -> Result<f64> {
    if !scf_balance_ratio.is_finite() || !guarantee_ratio.is_finite() {
        return Err(Error::invalid("financing ratios must be finite"));
    }
    Ok((scf_balance_ratio + guarantee_ratio) / 2.0)
}

/// Per-row mediator values; `None` where the row's inputs were invalid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Mediators {
    pub tech_inno: Vec<Option<f64>>,
    pub trans_cost: Vec<Option<f64>>,
    pub fin_sync: Vec<Option<f64>>,
    /// `(row, mediator, reason)` for every invalid cell.
    pub issues: Vec<(usize, &'static str, String)>,
    pub warnings: Vec<String>,
}

/// Computes the three mediators; the z-scores run over all valid rows.
pub fn mediators(rows: &[MediatorInputs]) -> Result<Mediators> {
    if rows.len() < 2 {
        return Err(Error::invalid("need >= 2 rows to standardise mediators"));
    }
    let mut out = Mediators::default();
    let record = |out: &mut Mediators, name: &'static str, vals: Vec<Result<f64>>| -> Vec<Option<f64>> {
        vals.into_iter()
            .enumerate()
            .map(|(i, r)| match r {
                Ok(v) => Some(v),
                Err(e) => {
                    out.issues.push((i, name, e.to_string()));
                    None
                }
            })
            .collect()
    };

    let tech = record(
        &mut out,
        "Tech_inno",
        rows.iter()
            .map(|r| tech_inno_raw(r.invention_patents, r.utility_patents, r.digital_expense, r.total_assets))
            .collect(),
    );
    let admin = record(
        &mut out,
        "Trans_cost",
        rows.iter().map(|r| admin_ratio(r.admin_expense, r.operating_income)).collect(),
    );
    let fin = record(
        &mut out,
        "Fin_sync",
        rows.iter().map(|r| fin_sync(r.scf_balance_ratio, r.guarantee_ratio)).collect(),
    );
    let keyword: Vec<Option<f64>> = rows.iter().map(|r| Some(r.keyword_freq).filter(|v| v.is_finite())).collect();

    out.tech_inno = standardize_present(&tech, "Tech_inno", &mut out.warnings)?;
    let kz = standardize_present(
        &keyword.iter().zip(&admin).map(|(k, a)| a.and(*k)).collect::<Vec<_>>(),
        "keyword frequency",
        &mut out.warnings,
    )?;
    let az = standardize_present(
        &admin.iter().zip(&keyword).map(|(a, k)| k.and(*a)).collect::<Vec<_>>(),
        "administrative expense ratio",
        &mut out.warnings,
    )?;
    out.trans_cost = kz.iter().zip(&az).map(|(k, a)| Some((k.as_ref()? + a.as_ref()?) / 2.0)).collect();
    out.fin_sync = fin;
    Ok(out)
}

fn standardize_present(values: &[Option<f64>], name: &str, warnings: &mut Vec<String>) -> Result<Vec<Option<f64>>> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.len() < 2 {
        return Err(Error::invalid(format!("need >= 2 valid rows to standardise {name}")));
    }
    let (z, ok) = zscore(&present);
    if !ok {
        warnings.push(format!("{name} has zero variance; its z-score is set to 0"));
    }
    let mut it = z.into_iter();
    Ok(values.iter().map(|v| v.and_then(|_| it.next())).collect())
}

// ---------------------------------------------------------------------------
// Keywords

#[derive(Clone, Debug, PartialEq)]
pub struct KeywordCount {
    pub per_10k: f64,
    pub matches: usize,
    pub tokens: usize,
    pub warning: Option<String>,
}

fn normalise_token(t: &str) -> String {
    t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Case-insensitive phrase matches per 10,000 whitespace tokens. Leading and
/// trailing punctuation is ignored when comparing tokens.
pub fn count_keywords<S: AsRef<str>>(text: &str, keywords: &[S]) -> Result<KeywordCount> {
    let phrases: Vec<Vec<String>> = keywords
        .iter()
        .map(|k| k.as_ref().split_whitespace().map(normalise_token).collect::<Vec<_>>())
        .filter(|p: &Vec<String>| !p.is_empty())
        .collect();
    if phrases.is_empty() {
        return Err(Error::invalid("keyword list is empty"));
    }
    let tokens: Vec<String> = text.split_whitespace().map(normalise_token).collect();
    if tokens.is_empty() {
        return Ok(KeywordCount {
            per_10k: 0.0,
            matches: 0,
            tokens: 0,
            warning: Some("empty text; keyword frequency set to 0".to_owned()),
        });
    }
    let matches: usize = phrases
        .iter()
        .map(|p| tokens.windows(p.len()).filter(|w| w == p).count())
        .sum();
    Ok(KeywordCount {
        per_10k: matches as f64 * 10_000.0 / tokens.len() as f64,
        matches,
        tokens: tokens.len(),
        warning: None,
    })
}

/// One phrase per line; blank lines are skipped.
pub fn load_keywords(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let list: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_owned).collect();
    if list.is_empty() {
        return Err(Error::invalid(format!("keyword file {} is empty", path.display())));
    }
    Ok(list)
}

// ---------------------------------------------------------------------------
// Controls

/// Raw accounting columns, aligned with `firm_ids`/`years`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ControlInputs {
    pub total_assets: Vec<Option<f64>>,
    pub total_liabilities: Vec<Option<f64>>,
    pub net_profit: Vec<Option<f64>>,
    pub operating_cost: Vec<Option<f64>>,
    pub inventory: Vec<Option<f64>>,
    pub net_fixed_assets: Vec<Option<f64>>,
    pub board_members: Vec<Option<f64>>,
    pub dual: Vec<Option<f64>>,
    pub top1_share: Vec<Option<f64>>,
    pub monetary_funds: Vec<Option<f64>>,
    pub current_liabilities: Vec<Option<f64>>,
    pub soe: Vec<Option<f64>>,
    pub revenue: Vec<Option<f64>>,
}

pub const CONTROL_RAW_COLUMNS: [&str; 13] = [
    "total_assets",
    "total_liabilities",
    "net_profit",
    "operating_cost",
    "inventory",
    "net_fixed_assets",
    "board_members",
    "dual",
    "top1_share",
    "monetary_funds",
    "current_liabilities",
    "soe",
    "revenue",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Controls {
    /// Columns in [`CONTROL_COLUMNS`] order.
    pub columns: Vec<Vec<Option<f64>>>,
    /// `(row, control, reason)` for every invalid cell.
    pub issues: Vec<(usize, &'static str, String)>,
}

fn ratio(num: Option<f64>, den: Option<f64>, what: &str) -> std::result::Result<Option<f64>, String> {
    match (num, den) {
        (Some(n), Some(d)) if d > 0.0 => Ok(Some(n / d)),
        (Some(_), Some(d)) => Err(format!("{what} is {d}, not positive")),
        _ => Ok(None),
    }
}

fn log_positive(v: Option<f64>, what: &str) -> std::result::Result<Option<f64>, String> {
    match v {
        Some(x) if x > 0.0 => Ok(Some(x.ln())),
        Some(x) => Err(format!("{what} is {x}, not positive")),
        None => Ok(None),
    }
}

fn indicator(v: Option<f64>, what: &str) -> std::result::Result<Option<f64>, String> {
    match v {
        Some(x) if x == 0.0 || x == 1.0 => Ok(Some(x)),
        Some(x) => Err(format!("{what} must be 0 or 1, got {x}")),
        None => Ok(None),
    }
}

fn fraction(v: Option<f64>, what: &str) -> std::result::Result<Option<f64>, String> {
    match v {
        Some(x) if (0.0..=1.0).contains(&x) => Ok(Some(x)),
        Some(x) => Err(format!("{what} must lie in [0, 1], got {x}")),
        None => Ok(None),
    }
}

/// The eleven firm-level controls. Lagged quantities use the same firm's
/// previous calendar year, so a firm's first year has no Roa, Inv_turn or
/// Growth.
pub fn compute_controls(firm_ids: &[String], years: &[i64], raw: &ControlInputs) -> Result<Controls> {
    let n = years.len();
    let all = [
        &raw.total_assets,
        &raw.total_liabilities,
        &raw.net_profit,
        &raw.operating_cost,
        &raw.inventory,
        &raw.net_fixed_assets,
        &raw.board_members,
        &raw.dual,
        &raw.top1_share,
        &raw.monetary_funds,
        &raw.current_liabilities,
        &raw.soe,
        &raw.revenue,
    ];
    if firm_ids.len() != n || all.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("control inputs have inconsistent lengths"));
    }
    let index: HashMap<(&str, i64), usize> = firm_ids
        .iter()
        .zip(years)
        .enumerate()
        .map(|(i, (f, &y))| ((f.as_str(), y), i))
        .collect();
    let lag = |i: usize| index.get(&(firm_ids[i].as_str(), years[i] - 1)).copied();
    let average = |col: &[Option<f64>], i: usize| -> Option<f64> {
        let j = lag(i)?;
        Some((col[i]? + col[j]?) / 2.0)
    };

    let mut columns = vec![Vec::with_capacity(n); CONTROL_COLUMNS.len()];
    let mut issues = Vec::new();
    for i in 0..n {
        let cells: [std::result::Result<Option<f64>, String>; 11] = [
            log_positive(raw.total_assets[i], "total assets"),
            ratio(raw.total_liabilities[i], raw.total_assets[i], "total assets"),
            ratio(raw.net_profit[i], average(&raw.total_assets, i), "average total assets"),
            ratio(raw.operating_cost[i], average(&raw.inventory, i), "average inventory"),
            ratio(raw.net_fixed_assets[i], raw.total_assets[i], "total assets"),
            log_positive(raw.board_members[i], "board size"),
            indicator(raw.dual[i], "duality flag"),
            fraction(raw.top1_share[i], "largest shareholder share"),
            ratio(raw.monetary_funds[i], raw.current_liabilities[i], "current liabilities"),
            indicator(raw.soe[i], "state ownership flag"),
            match lag(i) {
                Some(j) => ratio(
                    raw.revenue[i].zip(raw.revenue[j]).map(|(r, p)| r - p),
                    raw.revenue[j],
                    "previous revenue",
                ),
                None => Ok(None),
            },
        ];
        for (k, cell) in cells.into_iter().enumerate() {
            match cell {
                Ok(v) => columns[k].push(v.filter(|x| x.is_finite())),
                Err(reason) => {
                    issues.push((i, CONTROL_COLUMNS[k], reason));
                    columns[k].push(None);
                }
            }
        }
    }
    Ok(Controls { columns, issues })
}

// ---------------------------------------------------------------------------
// Panel-level driver

/// Which partner lists feed the cooperation-stability indicator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartnerConvention {
    Suppliers,
    Customers,
    /// Average of the supplier-side and customer-side values.
    #[default]
    Pooled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndicatorOptions {
    pub partners: PartnerConvention,
    pub weights: MdeWeights,
    /// When set, index weights come from forest importances against this column.
    pub weight_target: Option<String>,
    /// Text column grouping rows into regions; when absent every row is its own region-year.
    pub region_column: Option<String>,
    /// Keyword file; the built-in list is used when absent.
    pub keywords: Option<std::path::PathBuf>,
    pub forecast_window: usize,
}

impl Default for IndicatorOptions {
    fn default() -> Self {
        Self {
            partners: PartnerConvention::Pooled,
            weights: MdeWeights::default(),
            weight_target: None,
            region_column: None,
            keywords: None,
            forecast_window: FORECAST_WINDOW,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Issue {
    pub firm_id: String,
    pub year: i64,
    pub indicator: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ColumnSummary {
    pub column: String,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub missing: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct IndicatorReport {
    pub weights: [f64; 3],
    pub issues: Vec<Issue>,
    pub warnings: Vec<String>,
    pub skipped: Vec<String>,
    pub summaries: Vec<ColumnSummary>,
}

fn summarize(name: &str, values: &[Option<f64>]) -> ColumnSummary {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    let mean = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    ColumnSummary {
        column: name.to_owned(),
        mean,
        min: present.iter().cloned().reduce(f64::min),
        max: present.iter().cloned().reduce(f64::max),
        missing: values.len() - present.len(),
    }
}

fn partner_list(cell: &Option<String>) -> Vec<String> {
    cell.as_deref()
        .map(|s| s.split(';').map(str::trim).filter(|p| !p.is_empty()).take(3).map(str::to_owned).collect())
        .unwrap_or_default()
}

struct Builder<'a> {
    data: &'a PanelDataset,
    report: IndicatorReport,
    out: PanelDataset,
}

impl<'a> Builder<'a> {
    fn issue(&mut self, row: usize, indicator: &str, reason: impl Into<String>) {
        self.report.issues.push(Issue {
            firm_id: self.data.firm_ids()[row].clone(),
            year: self.data.years()[row],
            indicator: indicator.to_owned(),
            reason: reason.into(),
        });
    }

    fn has_all(&mut self, what: &str, cols: &[&str]) -> bool {
        let missing: Vec<&str> = cols.iter().copied().filter(|c| !self.data.has_column(c)).collect();
        if !missing.is_empty() {
            self.report.skipped.push(format!("{what}: missing raw columns {}", missing.join(", ")));
        }
        missing.is_empty()
    }

    fn push(&mut self, name: &str, role: Role, values: Vec<Option<f64>>) -> Result<()> {
        self.report.summaries.push(summarize(name, &values));
        self.out = self.out.with_column(Column::numeric(name, role, values))?;
        Ok(())
    }

    /// Applies `f` to the row's cells; missing inputs give a silent missing output.
    fn rowwise<const K: usize>(
        &mut self,
        name: &str,
        cols: [&str; K],
        f: impl Fn([f64; K]) -> Result<f64>,
    ) -> Result<Vec<Option<f64>>> {
        let data = self.data;
        let inputs: Vec<&[Option<f64>]> = cols.iter().map(|c| data.numeric(c)).collect::<Result<_>>()?;
        let mut values = Vec::with_capacity(data.n_rows());
        for i in 0..data.n_rows() {
            let mut args = [0.0; K];
            let mut complete = true;
            for (k, col) in inputs.iter().enumerate() {
                match col[i] {
                    Some(v) => args[k] = v,
                    None => complete = false,
                }
            }
            if !complete {
                values.push(None);
                continue;
            }
            match f(args) {
                Ok(v) => values.push(Some(v)),
                Err(e) => {
                    self.issue(i, name, e.to_string());
                    values.push(None);
                }
            }
        }
        Ok(values)
    }
}

/// Appends SCR1..SCR5 and Mde, plus mediators and controls when their raw
/// columns are present.
///
/// Raw column names: `suppliers`/`customers` (`;`-separated top-3 partner
/// ids), `top3_supplier_share`, `top3_customer_share`, `actual_sales`,
/// optional `predicted_sales`, `wc_turnover`, `ar_turnover`, `op_cashflow`,
/// `scf_quota`, `current_liabilities`, `platform_volume`,
/// `asset_registrations`, `provider_density`; mediators use
/// `invention_patents`, `utility_patents`, `digital_expense`, `total_assets`,
/// `keyword_freq` or a text column `report_text`, `admin_expense`,
/// `operating_income`, `scf_balance_ratio`, `guarantee_ratio`; controls use
/// [`CONTROL_RAW_COLUMNS`].
pub fn compute_indicators(data: &PanelDataset, opts: &IndicatorOptions) -> Result<(PanelDataset, IndicatorReport)> {
    if data.is_empty() {
        return Err(Error::EmptyInput("panel has no rows".to_owned()));
    }
    let mut b = Builder {
        data,
        report: IndicatorReport::default(),
        out: data.clone(),
    };
    scr1_column(&mut b, opts.partners)?;

    let v = b.rowwise("SCR2", ["top3_supplier_share", "top3_customer_share"], |[s, c]| scr2_concentration(s, c))?;
    b.push("SCR2", Role::Outcome, v)?;

    let actual = data.numeric("actual_sales")?.to_vec();
    let fallback = moving_average_forecast(data.firm_ids(), data.years(), &actual, opts.forecast_window.max(1));
    let predicted: Vec<Option<f64>> = match data.numeric("predicted_sales") {
        Ok(p) => p.iter().zip(&fallback).map(|(p, f)| p.or(*f)).collect(),
        Err(_) => fallback,
    };
    let mut scr3 = Vec::with_capacity(data.n_rows());
    for i in 0..data.n_rows() {
        scr3.push(match (predicted[i], actual[i]) {
            (Some(p), Some(a)) => match scr3_forecast_accuracy(p, a) {
                Ok(v) => Some(v),
                Err(e) => {
                    b.issue(i, "SCR3", e.to_string());
                    None
                }
            },
            _ => None,
        });
    }
    b.push("SCR3", Role::Outcome, scr3)?;

    let v = b.rowwise("SCR4", ["wc_turnover", "ar_turnover"], |[w, a]| scr4_adaptation(w, a))?;
    b.push("SCR4", Role::Outcome, v)?;
    let v = b.rowwise("SCR5", ["op_cashflow", "scf_quota", "current_liabilities"], |[c, q, l]| {
        scr5_recovery(c, q, l)
    })?;
    b.push("SCR5", Role::Outcome, v)?;

    mde_column(&mut b, opts)?;
    mediator_columns(&mut b, opts)?;
    control_columns(&mut b)?;
    Ok((b.out, b.report))
}

fn scr1_column(b: &mut Builder<'_>, convention: PartnerConvention) -> Result<()> {
    let data = b.data;
    let sides: Vec<&str> = match convention {
        PartnerConvention::Suppliers => vec!["suppliers"],
        PartnerConvention::Customers => vec!["customers"],
        PartnerConvention::Pooled => vec!["suppliers", "customers"],
    };
    let lists: Vec<&[Option<String>]> = sides.iter().map(|s| data.text(s)).collect::<Result<_>>()?;
    let index: HashMap<(&str, i64), usize> = data
        .firm_ids()
        .iter()
        .zip(data.years())
        .enumerate()
        .map(|(i, (f, &y))| ((f.as_str(), y), i))
        .collect();
    let mut values = Vec::with_capacity(data.n_rows());
    for i in 0..data.n_rows() {
        let Some(&j) = index.get(&(data.firm_ids()[i].as_str(), data.years()[i] - 1)) else {
            values.push(None);
            continue;
        };
        let mut acc = 0.0;
        let mut complete = true;
        for col in &lists {
            if col[i].is_none() || col[j].is_none() {
                complete = false;
                break;
            }
            acc += scr1_stability(&partner_list(&col[j]), &partner_list(&col[i]))?;
        }
        values.push(complete.then(|| acc / lists.len() as f64));
    }
    b.push("SCR1", Role::Outcome, values)
}

fn mde_column(b: &mut Builder<'_>, opts: &IndicatorOptions) -> Result<()> {
    let data = b.data;
    let base: Vec<&[Option<f64>]> = BASE_NAMES.iter().map(|c| data.numeric(c)).collect::<Result<_>>()?;
    let regions: Option<&[Option<String>]> = opts.region_column.as_deref().map(|c| data.text(c)).transpose()?;

    // One entry per region-year, in first-appearance order.
    let mut groups: BTreeMap<(String, i64), usize> = BTreeMap::new();
    let mut order: Vec<(usize, MdeInputs)> = Vec::new();
    let mut row_group: Vec<Option<usize>> = vec![None; data.n_rows()];
    for i in 0..data.n_rows() {
        let region = match regions {
            Some(r) => match &r[i] {
                Some(name) => name.clone(),
                None => {
                    b.issue(i, MDE_COLUMN, "region is missing");
                    continue;
                }
            },
            None => format!("{}\u{0}{}", data.firm_ids()[i], i),
        };
        let (Some(pv), Some(ar), Some(pd)) = (base[0][i], base[1][i], base[2][i]) else {
            continue;
        };
        let row = MdeInputs {
            platform_volume: pv,
            asset_registrations: ar,
            provider_density: pd,
        };
        let key = (region, data.years()[i]);
        match groups.get(&key) {
            Some(&g) => {
                if order[g].1 != row {
                    let msg = format!("inconsistent base indicators within region-year ({}, {})", key.0, key.1);
                    b.issue(i, MDE_COLUMN, msg);
                }
                row_group[i] = Some(g);
            }
            None => {
                groups.insert(key, order.len());
                row_group[i] = Some(order.len());
                order.push((i, row));
            }
        }
    }
    let inputs: Vec<MdeInputs> = order.iter().map(|(_, r)| *r).collect();
    let weights = match &opts.weight_target {
        Some(target) => {
            let t = data.numeric(target)?;
            let rows: Vec<usize> = order.iter().map(|(i, _)| *i).filter(|&i| t[i].is_some()).collect();
            let x: Vec<MdeInputs> = rows.iter().map(|&i| inputs[row_group[i].unwrap()]).collect();
            let y: Vec<f64> = rows.iter().map(|&i| t[i].unwrap()).collect();
            importance_weights(&x, &y, &ForestParams::default(), 0)?
        }
        None => opts.weights,
    };
    b.report.weights = weights.values();
    let index = mde_index(&inputs, &weights)?;
    b.report.warnings.extend(index.warnings.iter().map(|w| format!("Mde: {w}")));
    let values = row_group.iter().map(|g| g.map(|g| index.values[g])).collect();
    b.push(MDE_COLUMN, Role::Treatment, values)
}

fn mediator_columns(b: &mut Builder<'_>, opts: &IndicatorOptions) -> Result<()> {
    let data = b.data;
    let numeric = [
        "invention_patents",
        "utility_patents",
        "digital_expense",
        "total_assets",
        "admin_expense",
        "operating_income",
        "scf_balance_ratio",
        "guarantee_ratio",
    ];
    if !b.has_all("mediators", &numeric) {
        return Ok(());
    }
    let keyword: Vec<Option<f64>> = if data.has_column("keyword_freq") {
        data.numeric("keyword_freq")?.to_vec()
    } else if data.has_column("report_text") {
        let list = match &opts.keywords {
            Some(path) => load_keywords(path)?,
            None => DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect(),
        };
        let texts = data.text("report_text")?;
        let mut out = Vec::with_capacity(texts.len());
        for (i, t) in texts.iter().enumerate() {
            let c = count_keywords(t.as_deref().unwrap_or(""), &list)?;
            if let Some(w) = c.warning {
                b.issue(i, "Trans_cost", w);
            }
            out.push(Some(c.per_10k));
        }
        out
    } else {
        b.report.skipped.push("mediators: need keyword_freq or report_text".to_owned());
        return Ok(());
    };
    let cols: Vec<&[Option<f64>]> = numeric.iter().map(|c| data.numeric(c)).collect::<Result<_>>()?;
    let rows: Vec<usize> = (0..data.n_rows())
        .filter(|&i| keyword[i].is_some() && cols.iter().all(|c| c[i].is_some()))
        .collect();
    let inputs: Vec<MediatorInputs> = rows
        .iter()
        .map(|&i| MediatorInputs {
            invention_patents: cols[0][i].unwrap(),
            utility_patents: cols[1][i].unwrap(),
            digital_expense: cols[2][i].unwrap(),
            total_assets: cols[3][i].unwrap(),
            keyword_freq: keyword[i].unwrap(),
            admin_expense: cols[4][i].unwrap(),
            operating_income: cols[5][i].unwrap(),
            scf_balance_ratio: cols[6][i].unwrap(),
            guarantee_ratio: cols[7][i].unwrap(),
        })
        .collect();
    let m = mediators(&inputs)?;
    for (r, name, reason) in &m.issues {
        b.issue(rows[*r], name, reason.clone());
    }
    b.report.warnings.extend(m.warnings.iter().map(|w| format!("mediators: {w}")));
    for (name, vals) in MEDIATOR_COLUMNS.iter().zip([&m.tech_inno, &m.trans_cost, &m.fin_sync]) {
        let mut full = vec![None; data.n_rows()];
        for (r, v) in rows.iter().zip(vals.iter()) {
            full[*r] = *v;
        }
        b.push(name, Role::Auxiliary, full)?;
    }
    Ok(())
}

fn control_columns(b: &mut Builder<'_>) -> Result<()> {
    if !b.has_all("controls", &CONTROL_RAW_COLUMNS) {
        return Ok(());
    }
    let data = b.data;
    let c = |n: &str| data.numeric(n).map(<[Option<f64>]>::to_vec);
    let raw = ControlInputs {
        total_assets: c("total_assets")?,
        total_liabilities: c("total_liabilities")?,
        net_profit: c("net_profit")?,
        operating_cost: c("operating_cost")?,
        inventory: c("inventory")?,
        net_fixed_assets: c("net_fixed_assets")?,
        board_members: c("board_members")?,
        dual: c("dual")?,
        top1_share: c("top1_share")?,
        monetary_funds: c("monetary_funds")?,
        current_liabilities: c("current_liabilities")?,
        soe: c("soe")?,
        revenue: c("revenue")?,
    };
    let controls = compute_controls(data.firm_ids(), data.years(), &raw)?;
    for (r, name, reason) in controls.issues {
        b.issue(r, name, reason);
    }
    for (name, col) in CONTROL_COLUMNS.iter().zip(controls.columns) {
        b.push(name, Role::Control, col)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn scr1_examples() {
        close(scr1_stability(&["a", "b", "c"], &["a", "b", "c", "d"]).unwrap(), 1.0);
        close(scr1_stability(&["a", "b", "c"], &["a", "b", "x"]).unwrap(), 2.0 / 3.0);
        close(scr1_stability::<&str>(&[], &["a"]).unwrap(), 0.0);
        assert!(scr1_stability(&["a", "b", "c", "d"], &["a"]).is_err());
    }

    #[test]
    fn scr2_examples() {
        close(scr2_concentration(0.4, 0.6).unwrap(), 0.5);
        close(scr2_concentration(0.0, 0.0).unwrap(), 0.0);
        close(scr2_concentration(1.0, 1.0).unwrap(), 1.0);
        assert!(scr2_concentration(1.2, 0.5).is_err());
        assert!(scr2_concentration(0.5, -0.1).is_err());
    }

    #[test]
    fn scr3_examples() {
        close(scr3_forecast_accuracy(110.0, 100.0).unwrap(), 0.9);
        close(scr3_forecast_accuracy(100.0, 100.0).unwrap(), 1.0);
        close(scr3_forecast_accuracy(250.0, 100.0).unwrap(), 0.0);
        assert!(scr3_forecast_accuracy(1.0, 0.0).is_err());
    }

    #[test]
    fn scr4_examples() {
        close(scr4_adaptation(1.0, 1.0).unwrap(), 0.0);
        close(scr4_adaptation(2.0, 5.0).unwrap(), 10f64.ln());
        close(scr4_adaptation(0.5, 1.0).unwrap(), 0.5f64.ln());
        assert!(scr4_adaptation(-1.0, 2.0).is_err());
        assert!(scr4_adaptation(0.0, 2.0).is_err());
    }

    #[test]
    fn scr5_examples() {
        close(scr5_recovery(50.0, 30.0, 100.0).unwrap(), 0.8);
        close(scr5_recovery(0.0, 0.0, 100.0).unwrap(), 0.0);
        close(scr5_recovery(-20.0, 10.0, 100.0).unwrap(), -0.1);
        assert!(scr5_recovery(1.0, 1.0, 0.0).is_err());
    }

    fn triple(a: f64, b: f64, c: f64) -> MdeInputs {
        MdeInputs {
            platform_volume: a,
            asset_registrations: b,
            provider_density: c,
        }
    }

    #[test]
    fn mde_two_point_sample() {
        let out = mde_index(&[triple(0.0, 0.0, 0.0), triple(2.0, 2.0, 2.0)], &MdeWeights::default()).unwrap();
        // Sample sd of {0, 2} is sqrt(2), so z = -/+ sqrt(1/2) per indicator.
        let z = 0.5f64.sqrt();
        let composite = [-z, z];
        let expect: Vec<f64> = composite.iter().map(|c| (c + z) / (2.0 * z)).collect();
        close(out.values[0], expect[0]);
        close(out.values[1], expect[1]);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn mde_degenerate_sample() {
        let out = mde_index(&[triple(1.0, 2.0, 3.0); 4], &MdeWeights::default()).unwrap();
        assert_eq!(out.values, vec![0.5; 4]);
        assert!(out.warnings.iter().any(|w| w.contains("equal")));
    }

    #[test]
    fn mde_zero_variance_indicator_warns() {
        let rows = [triple(1.0, 5.0, 0.0), triple(2.0, 5.0, 1.0), triple(4.0, 5.0, 3.0)];
        let out = mde_index(&rows, &MdeWeights::default()).unwrap();
        assert!(out.warnings.iter().any(|w| w.contains("asset_registrations")));
        close(out.values.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
        close(out.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
    }

    #[test]
    fn mde_single_weight_orders_by_volume() {
        let rows = [triple(3.0, 0.0, 9.0), triple(1.0, 7.0, 1.0), triple(2.0, 3.0, 4.0), triple(5.0, 1.0, 0.0)];
        let out = mde_index(&rows, &MdeWeights::new([1.0, 0.0, 0.0]).unwrap()).unwrap();
        let rank = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
            idx
        };
        let volume: Vec<f64> = rows.iter().map(|r| r.platform_volume).collect();
        assert_eq!(rank(&out.values), rank(&volume));
    }

    #[test]
    fn mde_matches_hand_computed_weighted_sum() {
        let rows = [triple(1.0, 10.0, 0.5), triple(3.0, 30.0, 0.1), triple(8.0, 20.0, 0.9)];
        let out = mde_index(&rows, &MdeWeights::default()).unwrap();
        let z = |v: [f64; 3]| {
            let m = (v[0] + v[1] + v[2]) / 3.0;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 2.0).sqrt();
            v.map(|x| (x - m) / sd)
        };
        let (a, b, c) = (z([1.0, 3.0, 8.0]), z([10.0, 30.0, 20.0]), z([0.5, 0.1, 0.9]));
        let comp: Vec<f64> = (0..3).map(|i| 0.42 * a[i] + 0.35 * b[i] + 0.23 * c[i]).collect();
        let lo = comp.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = comp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for i in 0..3 {
            close(out.values[i], (comp[i] - lo) / (hi - lo));
        }
    }

    #[test]
    fn mde_weights_validation() {
        assert!(MdeWeights::new([0.5, 0.5, 0.1]).is_err());
        assert!(MdeWeights::new([1.2, -0.2, 0.0]).is_err());
        assert_eq!(MdeWeights::default().values(), [0.42, 0.35, 0.23]);
        assert!(mde_index(&[triple(1.0, 1.0, 1.0)], &MdeWeights::default()).is_err());
        let w: MdeWeights = serde_json::from_str("[0.2, 0.3, 0.5]").unwrap();
        assert_eq!(w.values(), [0.2, 0.3, 0.5]);
        assert!(serde_json::from_str::<MdeWeights>("[0.2, 0.3, 0.6]").is_err());
    }

    #[test]
    fn importance_weights_follow_the_signal() {
        let rows: Vec<MdeInputs> = (0..300)
            .map(|i| {
                let t = i as f64;
                triple((t * 0.37).sin(), (t * 1.3).cos(), (t * 2.1).sin())
            })
            .collect();
        let target: Vec<f64> = rows.iter().map(|r| 4.0 * r.platform_volume).collect();
        let params = ForestParams {
            n_trees: 30,
            ..Default::default()
        };
        let w = importance_weights(&rows, &target, &params, 1).unwrap().values();
        assert!(w[0] > 0.8, "{w:?}");
        close(w.iter().sum(), 1.0);
    }

    proptest! {
        #[test]
        fn mde_affine_invariance(
            raw in prop::collection::vec((-50.0..50.0f64, 0.0..100.0f64, 0.0..5.0f64), 3..30),
            k in 0usize..3,
            scale in 0.1..20.0f64,
            shift in -100.0..100.0f64,
        ) {
            let rows: Vec<MdeInputs> = raw.iter().map(|&(a, b, c)| triple(a, b, c)).collect();
            let moved: Vec<MdeInputs> = rows
                .iter()
                .map(|r| {
                    let mut v = r.as_array();
                    v[k] = scale * v[k] + shift;
                    triple(v[0], v[1], v[2])
                })
                .collect();
            let a = mde_index(&rows, &MdeWeights::default()).unwrap();
            let b = mde_index(&moved, &MdeWeights::default()).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn mde_spans_unit_interval(raw in prop::collection::vec((-50.0..50.0f64, 0.0..100.0f64, 0.0..5.0f64), 2..30)) {
            let rows: Vec<MdeInputs> = raw.iter().map(|&(a, b, c)| triple(a, b, c)).collect();
            let out = mde_index(&rows, &MdeWeights::default()).unwrap();
            let lo = out.values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = out.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if out.warnings.iter().any(|w| w.contains("equal")) {
                prop_assert!(out.values.iter().all(|&v| v == 0.5));
            } else {
                prop_assert!(lo.abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn bounded_indicators_stay_in_unit_interval(
            s in 0.0..=1.0f64, c in 0.0..=1.0f64, p in 0.0..1e4f64, a in 1e-3..1e4f64,
        ) {
            let v2 = scr2_concentration(s, c).unwrap();
            let v3 = scr3_forecast_accuracy(p, a).unwrap();
            prop_assert!((0.0..=1.0).contains(&v2));
            prop_assert!((0.0..=1.0).contains(&v3));
        }
    }

    fn mediator_row(inv: f64, util: f64, kw: f64, admin: f64) -> MediatorInputs {
        MediatorInputs {
            invention_patents: inv,
            utility_patents: util,
            digital_expense: 0.0,
            total_assets: 100.0,
            keyword_freq: kw,
            admin_expense: admin,
            operating_income: 50.0,
            scf_balance_ratio: 0.4,
            guarantee_ratio: 0.6,
        }
    }

    #[test]
    fn mediator_examples() {
        close(fin_sync(0.4, 0.6).unwrap(), 0.5);
        close(tech_inno_raw(3.0, 2.0, 0.0, 10.0).unwrap(), 8.0);
        close(tech_inno_raw(0.0, 0.0, 5.0, 10.0).unwrap(), 0.5);
        assert!(tech_inno_raw(1.0, 1.0, 1.0, 0.0).is_err());
        let err = mediators(&[mediator_row(1.0, 1.0, 1.0, 1.0)]).unwrap_err();
        assert!(err.to_string().contains("need >= 2 rows"));
    }

    #[test]
    fn mediators_standardise_over_the_sample() {
        let rows = [
            mediator_row(3.0, 2.0, 1.0, 5.0),
            mediator_row(0.0, 0.0, 3.0, 10.0),
            mediator_row(1.0, 1.0, 2.0, 20.0),
        ];
        let m = mediators(&rows).unwrap();
        // Raw tech scores 8, 0, 3: mean 11/3.
        let raw = [8.0, 0.0, 3.0];
        let mean = 11.0 / 3.0;
        let sd = (raw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 2.0).sqrt();
        for i in 0..3 {
            close(m.tech_inno[i].unwrap(), (raw[i] - mean) / sd);
            close(m.fin_sync[i].unwrap(), 0.5);
        }
        // keyword z = (-1, 1, 0); admin ratios 0.1, 0.2, 0.4.
        let ar = [0.1, 0.2, 0.4];
        let am = 0.7 / 3.0;
        let asd = (ar.iter().map(|v| (v - am) * (v - am)).sum::<f64>() / 2.0).sqrt();
        let kz = [-1.0, 1.0, 0.0];
        for i in 0..3 {
            close(m.trans_cost[i].unwrap(), (kz[i] + (ar[i] - am) / asd) / 2.0);
        }
        assert!(m.issues.is_empty());
    }

    #[test]
    fn mediator_issues_are_per_mediator() {
        let mut bad = mediator_row(1.0, 1.0, 2.0, 5.0);
        bad.operating_income = 0.0;
        let rows = [mediator_row(3.0, 2.0, 1.0, 5.0), mediator_row(0.0, 0.0, 3.0, 10.0), bad];
        let m = mediators(&rows).unwrap();
        assert_eq!(m.trans_cost[2], None);
        assert!(m.tech_inno[2].is_some());
        assert_eq!(m.issues.len(), 1);
        assert_eq!(m.issues[0].1, "Trans_cost");
    }

    #[test]
    fn keyword_examples() {
        let mut tokens = vec!["word"; 10_000];
        for k in 0..3 {
            tokens[100 * k] = "Coordination";
            tokens[100 * k + 1] = "cost";
        }
        let text = tokens.join(" ");
        close(count_keywords(&text, &DEFAULT_KEYWORDS).unwrap().per_10k, 3.0);

        let mut half = vec!["word"; 5_000];
        half[10] = "information";
        half[11] = "COST,";
        close(count_keywords(&half.join(" "), &DEFAULT_KEYWORDS).unwrap().per_10k, 2.0);

        close(count_keywords("nothing to see", &DEFAULT_KEYWORDS).unwrap().per_10k, 0.0);
        let empty = count_keywords("  ", &DEFAULT_KEYWORDS).unwrap();
        assert_eq!(empty.per_10k, 0.0);
        assert!(empty.warning.is_some());
        assert!(count_keywords::<&str>("text", &[]).is_err());
    }

    #[test]
    fn keyword_file_loading() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kw.txt");
        std::fs::write(&path, "coordination cost\n\n  search cost \n").unwrap();
        assert_eq!(load_keywords(&path).unwrap(), vec!["coordination cost", "search cost"]);
    }

    fn control_fixture() -> (Vec<String>, Vec<i64>, ControlInputs) {
        let e10 = 10f64.exp();
        let s = |v: &[f64]| v.iter().map(|&x| Some(x)).collect::<Vec<_>>();
        (
            vec!["A".into(), "A".into()],
            vec![2020, 2021],
            ControlInputs {
                total_assets: s(&[e10, 200.0]),
                total_liabilities: s(&[e10 / 2.0, 50.0]),
                net_profit: s(&[1.0, 30.0]),
                operating_cost: s(&[10.0, 90.0]),
                inventory: s(&[20.0, 40.0]),
                net_fixed_assets: s(&[0.0, 80.0]),
                board_members: s(&[9.0, 1.0]),
                dual: s(&[1.0, 0.0]),
                top1_share: s(&[0.3, 0.45]),
                monetary_funds: s(&[5.0, 12.0]),
                current_liabilities: s(&[10.0, 0.0]),
                soe: s(&[0.0, 1.0]),
                revenue: s(&[100.0, 130.0]),
            },
        )
    }

    #[test]
    fn control_examples() {
        let (f, y, raw) = control_fixture();
        let c = compute_controls(&f, &y, &raw).unwrap();
        let col = |name: &str| &c.columns[CONTROL_COLUMNS.iter().position(|n| *n == name).unwrap()];
        close(col("Size")[0].unwrap(), 10.0);
        close(col("Lev")[0].unwrap(), 0.5);
        close(col("Growth")[1].unwrap(), 0.3);
        assert_eq!(col("Growth")[0], None);
        assert_eq!(col("Roa")[0], None);
        assert_eq!(col("Inv_turn")[0], None);
        close(col("Roa")[1].unwrap(), 30.0 / ((10f64.exp() + 200.0) / 2.0));
        close(col("Inv_turn")[1].unwrap(), 90.0 / 30.0);
        close(col("Fix_ratio")[1].unwrap(), 0.4);
        close(col("Board_size")[0].unwrap(), 9f64.ln());
        close(col("Board_size")[1].unwrap(), 0.0);
        close(col("Dual")[0].unwrap(), 1.0);
        close(col("Top1")[1].unwrap(), 0.45);
        close(col("Cash_ratio")[0].unwrap(), 0.5);
        close(col("Soe")[1].unwrap(), 1.0);
        // Zero current liabilities in 2021.
        assert_eq!(col("Cash_ratio")[1], None);
        assert_eq!(c.issues.len(), 1);
        assert_eq!(c.issues[0].0, 1);
        assert_eq!(c.issues[0].1, "Cash_ratio");
    }

    #[test]
    fn controls_are_deterministic() {
        let (f, y, raw) = control_fixture();
        assert_eq!(compute_controls(&f, &y, &raw).unwrap(), compute_controls(&f, &y, &raw).unwrap());
    }

    #[test]
    fn moving_average_fallback() {
        let f: Vec<String> = vec!["A".into(); 5];
        let y = vec![2016, 2017, 2018, 2019, 2020];
        let sales = vec![Some(10.0), Some(20.0), None, Some(40.0), Some(50.0)];
        let out = moving_average_forecast(&f, &y, &sales, 3);
        assert_eq!(out[0], None);
        assert_eq!(out[1], Some(10.0));
        assert_eq!(out[2], Some(15.0));
        assert_eq!(out[3], Some(15.0));
        assert_eq!(out[4], Some(30.0));
    }

    fn raw_panel() -> PanelDataset {
        let firms: Vec<String> = ["A", "A", "B", "B", "C", "C"].iter().map(|s| s.to_string()).collect();
        let years = vec![2020, 2021, 2020, 2021, 2020, 2021];
        let num = |name: &str, v: [f64; 6]| Column::numeric(name, Role::Auxiliary, v.iter().map(|&x| Some(x)).collect());
        let txt = |name: &str, v: [&str; 6]| Column::text(name, v.iter().map(|s| Some(s.to_string())).collect());
        PanelDataset::new(
            firms,
            years,
            vec![
                txt("suppliers", ["s1;s2;s3", "s1;s2;s9", "t1;t2;t3", "t1;t2;t3", "u1", "u2"]),
                txt("customers", ["c1;c2;c3", "c1;c2;c3", "d1;d2;d3", "x;y;z", "e1", "e1"]),
                num("top3_supplier_share", [0.4, 0.5, 0.2, 0.3, 0.9, 0.8]),
                num("top3_customer_share", [0.6, 0.5, 0.2, 0.1, 0.7, 0.6]),
                num("predicted_sales", [110.0, 100.0, 90.0, 95.0, 30.0, 40.0]),
                num("actual_sales", [100.0, 100.0, 100.0, 100.0, 40.0, 40.0]),
                num("wc_turnover", [2.0, 2.0, 1.0, 1.5, 3.0, 3.0]),
                num("ar_turnover", [5.0, 4.0, 1.0, 2.0, 2.0, 1.0]),
                num("op_cashflow", [50.0, 60.0, -20.0, 10.0, 5.0, 5.0]),
                num("scf_quota", [30.0, 10.0, 10.0, 0.0, 0.0, 1.0]),
                num("current_liabilities", [100.0, 100.0, 100.0, 50.0, 0.0, 10.0]),
                num("platform_volume", [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
                num("asset_registrations", [10.0, 12.0, 9.0, 15.0, 20.0, 21.0]),
                num("provider_density", [0.1, 0.2, 0.2, 0.3, 0.5, 0.4]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn panel_indicators_append_columns() {
        let (out, report) = compute_indicators(&raw_panel(), &IndicatorOptions::default()).unwrap();
        for name in SCR_COLUMNS.iter().chain([MDE_COLUMN].iter()) {
            assert!(out.has_column(name), "{name}");
        }
        let scr1 = out.numeric("SCR1").unwrap();
        assert_eq!(scr1[0], None);
        // Suppliers keep 2 of 3, customers keep 3 of 3.
        close(scr1[1].unwrap(), (2.0 / 3.0 + 1.0) / 2.0);
        close(scr1[3].unwrap(), (1.0 + 0.0) / 2.0);
        close(scr1[5].unwrap(), (0.0 + 1.0 / 3.0) / 2.0);
        close(out.numeric("SCR2").unwrap()[0].unwrap(), 0.5);
        close(out.numeric("SCR3").unwrap()[0].unwrap(), 0.9);
        close(out.numeric("SCR4").unwrap()[0].unwrap(), 10f64.ln());
        close(out.numeric("SCR5").unwrap()[0].unwrap(), 0.8);
        // Zero liabilities for firm C in 2020.
        assert_eq!(out.numeric("SCR5").unwrap()[4], None);
        assert!(report.issues.iter().any(|i| i.firm_id == "C" && i.year == 2020 && i.indicator == "SCR5"));
        let mde = out.dense(MDE_COLUMN).unwrap();
        close(mde.iter().cloned().fold(f64::INFINITY, f64::min), 0.0);
        close(mde.iter().cloned().fold(f64::NEG_INFINITY, f64::max), 1.0);
        assert_eq!(report.weights, DEFAULT_MDE_WEIGHTS);
        assert!(report.skipped.iter().any(|s| s.starts_with("controls")));
    }

    #[test]
    fn regions_share_one_index_value() {
        let data = raw_panel();
        let region = Column::text("region", ["R1", "R1", "R2", "R2", "R1", "R1"].iter().map(|s| Some(s.to_string())).collect());
        let data = data.with_column(region).unwrap();
        let opts = IndicatorOptions {
            region_column: Some("region".into()),
            ..Default::default()
        };
        let (out, report) = compute_indicators(&data, &opts).unwrap();
        let mde = out.numeric(MDE_COLUMN).unwrap();
        // (R1, 2020) is taken from firm A; firm C disagrees and is flagged.
        assert_eq!(mde[0], mde[4]);
        assert!(report.issues.iter().any(|i| i.indicator == MDE_COLUMN && i.firm_id == "C"));
    }
}

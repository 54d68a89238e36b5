//! Naive and cross-fitted estimators of the partially linear treatment
//! coefficient, their standard errors and the bias decomposition.
//!
//! Model: `Y = theta * D + g(X) + U`, `D = m(X) + V`.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::learners::{self, FeatureMatrix, LearnerSpec};
use crate::panel::{lead_name, FixedEffects, PanelDataset, WithinReport};
use crate::rng::{child_rng, derive_seed};
use crate::synthgen::DgpTruth;

/// Two-sided 95% normal critical value.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// One estimating equation over all cross-fitted residuals.
    #[default]
    Pooled,
    /// Solve per fold and average the fold estimates.
    FoldAverage,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeKind {
    /// Heteroskedasticity-robust sandwich.
    #[default]
    Robust,
    /// Sandwich with scores summed within firm.
    ClusterFirm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DmlConfig {
    pub n_folds: usize,
    pub outcome_learner: LearnerSpec,
    pub treatment_learner: LearnerSpec,
    pub seed: u64,
    pub fixed_effects: FixedEffects,
    /// Years between the controls and the outcome; 0 uses the outcome column as is.
    pub lead: usize,
    pub aggregation: Aggregation,
    pub se: SeKind,
}

impl Default for DmlConfig {
    fn default() -> Self {
        Self {
            n_folds: 5,
            outcome_learner: LearnerSpec::default(),
            treatment_learner: LearnerSpec::default(),
            seed: 0,
            fixed_effects: FixedEffects::TWO_WAY,
            lead: 1,
            aggregation: Aggregation::Pooled,
            se: SeKind::Robust,
        }
    }
}

impl DmlConfig {
    /// Same learner for both nuisance functions.
    pub fn with_learner(mut self, spec: LearnerSpec) -> Self {
        self.outcome_learner = spec.clone();
        self.treatment_learner = spec;
        self
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serialises")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldDiagnostics {
    pub fold: usize,
    pub n: usize,
    pub outcome_mse: f64,
    pub treatment_mse: f64,
}

/// Out-of-fold nuisance predictions and residuals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossFitResult {
    pub outcome: Vec<f64>,
    pub treatment: Vec<f64>,
    /// Estimate of `g(X)`, the outcome net of the treatment effect.
    pub g_hat: Vec<f64>,
    pub m_hat: Vec<f64>,
    /// `D - m_hat`.
    pub v_hat: Vec<f64>,
    /// Out-of-fold prediction of `E[Y | X]`, when the nuisances were learned.
    pub l_hat: Option<Vec<f64>>,
    pub folds: Vec<usize>,
    pub n_folds: usize,
    pub diagnostics: Vec<FoldDiagnostics>,
    /// Cluster label per row, used by [`SeKind::ClusterFirm`].
    pub clusters: Option<Vec<usize>>,
    pub aggregation: Aggregation,
    pub se_kind: SeKind,
}

impl CrossFitResult {
    /// Wraps externally supplied nuisance values as a single-fold result.
    pub fn from_nuisances(outcome: Vec<f64>, treatment: Vec<f64>, g_hat: Vec<f64>, m_hat: Vec<f64>) -> Result<Self> {
        let n = outcome.len();
        if treatment.len() != n || g_hat.len() != n || m_hat.len() != n {
            return Err(Error::invalid("outcome, treatment and nuisance vectors differ in length"));
        }
        if n < 2 {
            return Err(Error::invalid("need at least two observations"));
        }
        let v_hat = treatment.iter().zip(&m_hat).map(|(d, m)| d - m).collect();
        Ok(Self {
            outcome,
            treatment,
            g_hat,
            m_hat,
            v_hat,
            l_hat: None,
            folds: vec![0; n],
            n_folds: 1,
            diagnostics: Vec::new(),
            clusters: None,
            aggregation: Aggregation::Pooled,
            se_kind: SeKind::Robust,
        })
    }

    pub fn n(&self) -> usize {
        self.outcome.len()
    }

    pub fn summary(&self) -> CrossFitSummary {
        CrossFitSummary {
            n_folds: self.n_folds,
            fold_sizes: (0..self.n_folds).map(|k| self.folds.iter().filter(|&&f| f == k).count()).collect(),
            diagnostics: self.diagnostics.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossFitSummary {
    pub n_folds: usize,
    pub fold_sizes: Vec<usize>,
    pub diagnostics: Vec<FoldDiagnostics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmlResult {
    pub theta: f64,
    pub se: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub n_used: usize,
    pub fold_thetas: Vec<f64>,
    pub config: Option<DmlConfig>,
    pub cross_fit: CrossFitSummary,
}

impl DmlResult {
    pub fn ci95(&self) -> (f64, f64) {
        (self.theta - Z_95 * self.se, self.theta + Z_95 * self.se)
    }
}

/// Two-sided p-value against the standard normal.
pub fn normal_p_value(t: f64) -> f64 {
    statrs::function::erf::erfc(t.abs() / std::f64::consts::SQRT_2)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_lengths(n: usize, others: &[&[f64]]) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid("need at least two observations"));
    }
    if others.iter().any(|v| v.len() != n) {
        return Err(Error::invalid("input vectors differ in length"));
    }
    Ok(())
}

/// Least-squares slope of `Y - g_hat` on `D` through the origin.
pub fn naive_theta(treatment: &[f64], outcome: &[f64], g_hat: &[f64]) -> Result<f64> {
    check_lengths(treatment.len(), &[outcome, g_hat])?;
    let sdd = dot(treatment, treatment);
    if !(sdd > 0.0) {
        return Err(Error::invalid("treatment has zero variation"));
    }
    let num: f64 = treatment
        .iter()
        .zip(outcome.iter().zip(g_hat))
        .map(|(d, (y, g))| d * (y - g))
        .sum();
    Ok(num / sdd)
}

/// Sample moment `(1/n) sum D (Y - g - theta D)` of the naive estimator.
pub fn naive_moment(treatment: &[f64], outcome: &[f64], g_hat: &[f64], theta: f64) -> f64 {
    let n = treatment.len() as f64;
    treatment
        .iter()
        .zip(outcome.iter().zip(g_hat))
        .map(|(d, (y, g))| d * (y - g - theta * d))
        .sum::<f64>()
        / n
}

/// Sample orthogonal moment `(1/n) sum (D - m) (Y - g - theta D)`.
pub fn dml_moment(treatment: &[f64], outcome: &[f64], g_hat: &[f64], m_hat: &[f64], theta: f64) -> f64 {
    let n = treatment.len() as f64;
    (0..treatment.len())
        .map(|i| (treatment[i] - m_hat[i]) * (outcome[i] - g_hat[i] - theta * treatment[i]))
        .sum::<f64>()
        / n
}

/// Seeded shuffle into `k` folds whose sizes differ by at most one.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut child_rng(seed, &[0x_f01d]));
    let mut folds = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        folds[row] = pos % k;
    }
    folds
}

/// Cross-fits both nuisance regressions on raw arrays.
///
/// `E[Y|X]` and `E[D|X]` are learned out of fold. The returned `g_hat` is
/// `l_hat - theta0 * m_hat`, with `theta0` the residual-on-residual slope
/// (pooled, or per fold for [`Aggregation::FoldAverage`]).
pub fn cross_fit_arrays(
    outcome: &[f64],
    treatment: &[f64],
    controls: &FeatureMatrix,
    clusters: Option<Vec<usize>>,
    config: &DmlConfig,
) -> Result<CrossFitResult> {
    let n = outcome.len();
    check_lengths(n, &[treatment])?;
    if controls.n_rows() != n {
        return Err(Error::invalid("controls and outcome differ in length"));
    }
    let k = config.n_folds;
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    if k * 10 > n {
        return Err(Error::invalid(format!("{k} folds need at least {} rows, have {n}", 10 * k)));
    }
    if outcome.iter().chain(treatment).any(|v| !v.is_finite()) {
        return Err(Error::invalid("outcome and treatment must be finite"));
    }
    let folds = fold_assignment(n, k, config.seed);
    let members: Vec<Vec<usize>> = (0..k).map(|f| (0..n).filter(|&i| folds[i] == f).collect()).collect();
    if let Some(f) = members.iter().position(|m| m.len() < 2) {
        return Err(Error::invalid(format!("fold {f} has fewer than 2 rows")));
    }

    let fits: Vec<(Vec<f64>, Vec<f64>)> = (0..k)
        .into_par_iter()
        .map(|f| -> Result<(Vec<f64>, Vec<f64>)> {
            let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
            let x_train = controls.select_rows(&train);
            let x_test = controls.select_rows(&members[f]);
            let pick = |v: &[f64]| train.iter().map(|&i| v[i]).collect::<Vec<f64>>();
            let seed = derive_seed(config.seed, &[f as u64]);
            let l = learners::fit(&config.outcome_learner, &x_train, &pick(outcome), derive_seed(seed, &[0]))?;
            let m = learners::fit(&config.treatment_learner, &x_train, &pick(treatment), derive_seed(seed, &[1]))?;
            Ok((l.predict(&x_test)?, m.predict(&x_test)?))
        })
        .collect::<Result<_>>()?;

    let mut l_hat = vec![0.0; n];
    let mut m_hat = vec![0.0; n];
    let mut diagnostics = Vec::with_capacity(k);
    for (f, (l, m)) in fits.into_iter().enumerate() {
        let rows = &members[f];
        for (j, &i) in rows.iter().enumerate() {
            l_hat[i] = l[j];
            m_hat[i] = m[j];
        }
        let mse = |truth: &[f64], pred: &[f64]| {
            rows.iter().zip(pred).map(|(&i, p)| (truth[i] - p).powi(2)).sum::<f64>() / rows.len() as f64
        };
        diagnostics.push(FoldDiagnostics {
            fold: f,
            n: rows.len(),
            outcome_mse: mse(outcome, &l),
            treatment_mse: mse(treatment, &m),
        });
    }
    let v_hat: Vec<f64> = treatment.iter().zip(&m_hat).map(|(d, m)| d - m).collect();
    let slope = |rows: &mut dyn Iterator<Item = usize>| {
        let (mut num, mut den) = (0.0, 0.0);
        for i in rows {
            num += v_hat[i] * (outcome[i] - l_hat[i]);
            den += v_hat[i] * v_hat[i];
        }
        // A degenerate residual is left for the estimation step to report.
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    };
    let g_hat: Vec<f64> = match config.aggregation {
        Aggregation::Pooled => {
            let t = slope(&mut (0..n));
            l_hat.iter().zip(&m_hat).map(|(l, m)| l - t * m).collect()
        }
        Aggregation::FoldAverage => {
            let per_fold: Vec<f64> = members.iter().map(|rows| slope(&mut rows.iter().copied())).collect();
            (0..n).map(|i| l_hat[i] - per_fold[folds[i]] * m_hat[i]).collect()
        }
    };
    Ok(CrossFitResult {
        outcome: outcome.to_vec(),
        treatment: treatment.to_vec(),
        g_hat,
        m_hat,
        v_hat,
        l_hat: Some(l_hat),
        folds,
        n_folds: k,
        diagnostics,
        clusters,
        aggregation: config.aggregation,
        se_kind: config.se,
    })
}

/// Prepared estimation arrays drawn from a panel.
#[derive(Clone, Debug)]
pub struct EstimationSample {
    pub outcome: Vec<f64>,
    pub treatment: Vec<f64>,
    pub controls: FeatureMatrix,
    pub firm_index: Vec<usize>,
    pub n_dropped: usize,
    pub within: WithinReport,
}

fn firm_index(ids: &[String]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    ids.iter()
        .map(|f| {
            let next = map.len();
            *map.entry(f.as_str()).or_insert(next)
        })
        .collect()
}

/// Listwise deletion over the active columns, then the configured within
/// transformation.
pub fn prepare_sample(
    data: &PanelDataset,
    outcome: &str,
    treatment: &str,
    controls: &[String],
    effects: FixedEffects,
) -> Result<EstimationSample> {
    if controls.is_empty() {
        return Err(Error::invalid("at least one control is required"));
    }
    let mut active: Vec<&str> = vec![outcome, treatment];
    active.extend(controls.iter().map(String::as_str));
    for c in &active {
        data.numeric(c)?;
    }
    let (kept, n_dropped) = data.drop_missing(&active).map_err(Error::at_stage("listwise deletion"))?;
    if kept.n_rows() < 2 {
        return Err(Error::at_stage("listwise deletion")(Error::EmptyInput(format!(
            "{} complete rows remain",
            kept.n_rows()
        ))));
    }
    let (demeaned, within) = kept.within_transform(&active, effects).map_err(Error::at_stage("within transform"))?;
    let columns = controls.iter().map(|c| demeaned.dense(c)).collect::<Result<Vec<_>>>()?;
    Ok(EstimationSample {
        outcome: demeaned.dense(outcome)?,
        treatment: demeaned.dense(treatment)?,
        controls: FeatureMatrix::new(controls.to_vec(), columns)?,
        firm_index: firm_index(demeaned.firm_ids()),
        n_dropped,
        within,
    })
}

/// Cross-fitting on a panel: drops incomplete rows, applies the configured
/// fixed effects, then fits the nuisances out of fold.
pub fn cross_fit(
    data: &PanelDataset,
    outcome: &str,
    treatment: &str,
    controls: &[String],
    config: &DmlConfig,
) -> Result<CrossFitResult> {
    let s = prepare_sample(data, outcome, treatment, controls, config.fixed_effects)?;
    cross_fit_arrays(&s.outcome, &s.treatment, &s.controls, Some(s.firm_index), config)
}

/// Orthogonal-score estimate from cross-fitted nuisances.
pub fn dml_theta(cf: &CrossFitResult) -> Result<DmlResult> {
    let n = cf.n();
    check_lengths(n, &[&cf.treatment, &cf.g_hat, &cf.m_hat, &cf.v_hat])?;
    let y = &cf.outcome;
    let d = &cf.treatment;
    let v = &cf.v_hat;
    let svd = dot(v, d);
    if !(svd.abs() >= 1e-12 * n as f64) {
        return Err(Error::TreatmentExplained(svd.abs()));
    }
    let score_num = |rows: &mut dyn Iterator<Item = usize>| -> (f64, f64) {
        let (mut num, mut den) = (0.0, 0.0);
        for i in rows {
            num += v[i] * (y[i] - cf.g_hat[i]);
            den += v[i] * d[i];
        }
        (num, den)
    };
    let (theta, fold_thetas) = match cf.aggregation {
        Aggregation::Pooled => {
            let (num, den) = score_num(&mut (0..n));
            (num / den, Vec::new())
        }
        Aggregation::FoldAverage => {
            let mut thetas = Vec::with_capacity(cf.n_folds);
            for k in 0..cf.n_folds {
                let (num, den) = score_num(&mut (0..n).filter(|&i| cf.folds[i] == k));
                if !(den.abs() >= 1e-12 * n as f64) {
                    return Err(Error::TreatmentExplained(den.abs()));
                }
                thetas.push(num / den);
            }
            (thetas.iter().sum::<f64>() / thetas.len() as f64, thetas)
        }
    };
    let u_hat: Vec<f64> = (0..n).map(|i| y[i] - theta * d[i] - cf.g_hat[i]).collect();
    let nf = n as f64;
    let j = svd / nf;
    let meat = match (&cf.se_kind, &cf.clusters) {
        (SeKind::ClusterFirm, Some(ids)) => {
            let groups = ids.iter().max().map_or(0, |m| m + 1);
            let mut sums = vec![0.0; groups];
            for i in 0..n {
                sums[ids[i]] += v[i] * u_hat[i];
            }
            sums.iter().map(|s| s * s).sum::<f64>() / nf
        }
        (SeKind::ClusterFirm, None) => {
            return Err(Error::invalid("clustered standard errors need cluster labels"));
        }
        (SeKind::Robust, _) => (0..n).map(|i| (v[i] * u_hat[i]).powi(2)).sum::<f64>() / nf,
    };
    let se = (meat / (j * j) / nf).sqrt();
    if !(se > 0.0) || !se.is_finite() {
        return Err(Error::ZeroVariance);
    }
    let t_stat = theta / se;
    Ok(DmlResult {
        theta,
        se,
        t_stat,
        p_value: normal_p_value(t_stat),
        n_used: n,
        fold_thetas,
        config: None,
        cross_fit: cf.summary(),
    })
}

/// Terms of `sqrt(n) (theta_hat - theta0)` for the naive estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NaiveDecomposition {
    /// Sampling term `(mean D^2)^-1 n^-1/2 sum D U`.
    pub a: f64,
    /// Regularization-bias term `(mean D^2)^-1 n^-1/2 sum D (g - g_hat)`.
    pub b: f64,
    pub theta: f64,
    /// `sqrt(n) (theta_hat - theta0)`.
    pub scaled_error: f64,
}

/// Expansion terms for the cross-fitted estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmlDecomposition {
    /// `(mean V^2)^-1 n^-1/2 sum V U`.
    pub sampling: f64,
    /// `(mean V^2)^-1 n^-1/2 sum (m_hat - m)(g_hat - g)`.
    pub regularization: f64,
    /// `n^-1/2 sum V (g_hat - g)`.
    pub remainder: f64,
    pub theta: f64,
    pub scaled_error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "path", rename_all = "snake_case")]
pub enum BiasDecomposition {
    Naive(NaiveDecomposition),
    Dml(DmlDecomposition),
}

/// What to decompose.
#[derive(Clone, Copy, Debug)]
pub enum FitPath<'a> {
    Naive {
        treatment: &'a [f64],
        outcome: &'a [f64],
        g_hat: &'a [f64],
    },
    CrossFit(&'a CrossFitResult),
}

fn truth_for<'t>(truth: Option<&'t DgpTruth>, n: usize) -> Result<&'t DgpTruth> {
    let t = truth.ok_or_else(|| Error::NoTruth("no data-generating truth supplied".to_owned()))?;
    if !t.comparable {
        return Err(Error::NoTruth("truth does not match the transformed estimation sample".to_owned()));
    }
    if t.g0.len() != n || t.m0.len() != n {
        return Err(Error::NoTruth(format!("truth has {} rows, fit has {n}", t.g0.len())));
    }
    Ok(t)
}

pub fn bias_decomposition(fit: FitPath<'_>, truth: Option<&DgpTruth>) -> Result<BiasDecomposition> {
    match fit {
        FitPath::Naive {
            treatment,
            outcome,
            g_hat,
        } => {
            let n = treatment.len();
            let t = truth_for(truth, n)?;
            let theta = naive_theta(treatment, outcome, g_hat)?;
            let nf = n as f64;
            let scale = 1.0 / (dot(treatment, treatment) / nf) / nf.sqrt();
            let (mut su, mut sg) = (0.0, 0.0);
            for i in 0..n {
                let u = outcome[i] - t.theta0 * treatment[i] - t.g0[i];
                su += treatment[i] * u;
                sg += treatment[i] * (t.g0[i] - g_hat[i]);
            }
            Ok(BiasDecomposition::Naive(NaiveDecomposition {
                a: scale * su,
                b: scale * sg,
                theta,
                scaled_error: nf.sqrt() * (theta - t.theta0),
            }))
        }
        FitPath::CrossFit(cf) => {
            let n = cf.n();
            let t = truth_for(truth, n)?;
            let theta = dml_theta(cf)?.theta;
            let nf = n as f64;
            let v: Vec<f64> = cf.treatment.iter().zip(&t.m0).map(|(d, m)| d - m).collect();
            let ev2 = dot(&v, &v) / nf;
            let (mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0);
            for i in 0..n {
                let u = cf.outcome[i] - t.theta0 * cf.treatment[i] - t.g0[i];
                let dg = cf.g_hat[i] - t.g0[i];
                s1 += v[i] * u;
                s2 += (cf.m_hat[i] - t.m0[i]) * dg;
                s3 += v[i] * dg;
            }
            let root = nf.sqrt();
            Ok(BiasDecomposition::Dml(DmlDecomposition {
                sampling: s1 / ev2 / root,
                regularization: s2 / ev2 / root,
                remainder: s3 / root,
                theta,
                scaled_error: root * (theta - t.theta0),
            }))
        }
    }
}

/// Reproducibility record for one pipeline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub config_hash: String,
    pub outcome: String,
    pub treatment: String,
    pub controls: Vec<String>,
    pub n_input: usize,
    pub n_dropped: usize,
    pub n_used: usize,
    pub within_sweeps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DmlRun {
    pub result: DmlResult,
    pub cross_fit: CrossFitResult,
    pub manifest: RunManifest,
}

/// Lead, listwise deletion, within transformation, cross-fitting and
/// estimation. Errors carry the name of the failing stage.
pub fn run_dml_pipeline(
    data: &PanelDataset,
    outcome: &str,
    treatment: &str,
    controls: &[String],
    config: &DmlConfig,
) -> Result<DmlRun> {
    let (led, target) = if config.lead == 0 {
        (data.clone(), outcome.to_owned())
    } else {
        let led = data.lead_outcome(outcome, config.lead).map_err(Error::at_stage("lead"))?;
        (led, lead_name(outcome, config.lead))
    };
    let sample = prepare_sample(&led, &target, treatment, controls, config.fixed_effects)?;
    let cf = cross_fit_arrays(
        &sample.outcome,
        &sample.treatment,
        &sample.controls,
        Some(sample.firm_index.clone()),
        config,
    )
    .map_err(Error::at_stage("cross-fit"))?;
    let mut result = dml_theta(&cf).map_err(Error::at_stage("estimation"))?;
    result.config = Some(config.clone());

    #[derive(Serialize)]
    struct Keyed<'a> {
        config: &'a DmlConfig,
        outcome: &'a str,
        treatment: &'a str,
        controls: &'a [String],
    }
    let hash = hex::encode(Sha256::digest(
        serde_json::to_vec(&Keyed {
            config,
            outcome,
            treatment,
            controls,
        })
        .expect("config serialises"),
    ));
    let manifest = RunManifest {
        seed: config.seed,
        config_hash: hash,
        outcome: outcome.to_owned(),
        treatment: treatment.to_owned(),
        controls: controls.to_vec(),
        n_input: data.n_rows(),
        n_dropped: sample.n_dropped,
        n_used: result.n_used,
        within_sweeps: sample.within.sweeps,
    };
    Ok(DmlRun {
        result,
        cross_fit: cf,
        manifest,
    })
}

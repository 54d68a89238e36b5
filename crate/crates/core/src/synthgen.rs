//! Synthetic firm-year panels with a known treatment coefficient, and the
//! Monte Carlo harness built on them.
//!
//! Timing: row `t` holds the controls `X_t` and treatment `D_t`; its `scr`
//! cell is the outcome driven by period `t - 1`. The first row's outcome comes
//! from an unrecorded pre-sample period, so a lead of one pairs every row but
//! the last with the outcome its own drivers produced.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};

use crate::dml::{
    bias_decomposition, cross_fit_arrays, dml_moment, dml_theta, naive_moment, BiasDecomposition, CrossFitResult,
    DmlConfig, FitPath, Z_95,
};
use crate::error::{Error, Result};
use crate::learners::{self, FeatureMatrix, LearnerSpec};
use crate::panel::{within_demean, Column, FixedEffects, PanelDataset, Role};
use crate::rng::{derive_seed, rng_from_seed, Rng};

pub const OUTCOME: &str = "scr";
pub const TREATMENT: &str = "mde";
pub const FIRST_YEAR: i64 = 2000;

pub fn control_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

/// A nuisance function of the controls, fully described by its coefficients.
/// Coefficient lists shorter than the control dimension are zero-padded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    Zero,
    Linear {
        coefs: Vec<f64>,
    },
    /// `sum_j sin_j sin(freq x_j) + tanh_j tanh(x_j) + square_j (x_j^2 - 1)`.
    AdditiveNonlinear {
        #[serde(default)]
        sin: Vec<f64>,
        #[serde(default = "default_freq")]
        freq: f64,
        #[serde(default)]
        tanh: Vec<f64>,
        #[serde(default)]
        square: Vec<f64>,
    },
    /// Additive terms plus `coef * x_a * x_b` for each `(a, b, coef)`.
    Interaction {
        #[serde(default)]
        sin: Vec<f64>,
        #[serde(default = "default_freq")]
        freq: f64,
        #[serde(default)]
        tanh: Vec<f64>,
        #[serde(default)]
        square: Vec<f64>,
        #[serde(default)]
        pairs: Vec<(usize, usize, f64)>,
    },
}

fn default_freq() -> f64 {
    2.0
}

impl Family {
    /// `sum_{j<=3} sin(2 x_j) + 0.5 x_1 x_2`.
    pub fn default_outcome() -> Self {
        Family::Interaction {
            sin: vec![1.0; 3],
            freq: 2.0,
            tanh: Vec::new(),
            square: Vec::new(),
            pairs: vec![(0, 1, 0.5)],
        }
    }

    /// `sum_{j<=3} 0.5 tanh(x_j)`.
    pub fn default_treatment() -> Self {
        Family::AdditiveNonlinear {
            sin: Vec::new(),
            freq: 2.0,
            tanh: vec![0.5; 3],
            square: Vec::new(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let additive = |sin: &[f64], freq: f64, tanh: &[f64], square: &[f64]| {
            let mut s = 0.0;
            for (c, v) in sin.iter().zip(x) {
                s += c * (freq * v).sin();
            }
            for (c, v) in tanh.iter().zip(x) {
                s += c * v.tanh();
            }
            for (c, v) in square.iter().zip(x) {
                s += c * (v * v - 1.0);
            }
            s
        };
        match self {
            Family::Zero => 0.0,
            Family::Linear { coefs } => coefs.iter().zip(x).map(|(c, v)| c * v).sum(),
            Family::AdditiveNonlinear { sin, freq, tanh, square } => additive(sin, *freq, tanh, square),
            Family::Interaction {
                sin,
                freq,
                tanh,
                square,
                pairs,
            } => additive(sin, *freq, tanh, square) + pairs.iter().map(|&(a, b, c)| c * x[a] * x[b]).sum::<f64>(),
        }
    }

    fn validate(&self, p: usize, which: &str) -> Result<()> {
        let lists: Vec<&Vec<f64>> = match self {
            Family::Zero => Vec::new(),
            Family::Linear { coefs } => vec![coefs],
            Family::AdditiveNonlinear { sin, tanh, square, .. } => vec![sin, tanh, square],
            Family::Interaction {
                sin,
                tanh,
                square,
                pairs,
                ..
            } => {
                if pairs.iter().any(|&(a, b, _)| a >= p || b >= p) {
                    return Err(Error::invalid(format!("{which}: interaction index out of range for p = {p}")));
                }
                vec![sin, tanh, square]
            }
        };
        for l in lists {
            if l.len() > p {
                return Err(Error::invalid(format!("{which}: {} coefficients for p = {p}", l.len())));
            }
            if l.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid(format!("{which}: coefficients must be finite")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentType {
    #[default]
    Continuous,
    /// `1{m(X) + effects + V > median}`.
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpSpec {
    pub n_firms: usize,
    pub n_years: usize,
    pub theta0: f64,
    pub p: usize,
    pub g0: Family,
    pub m0: Family,
    pub sigma_u: f64,
    pub sigma_v: f64,
    pub firm_sd: f64,
    pub year_sd: f64,
    pub treatment: TreatmentType,
    pub seed: u64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        Self {
            n_firms: 400,
            n_years: 5,
            theta0: 0.5,
            p: 5,
            g0: Family::default_outcome(),
            m0: Family::default_treatment(),
            sigma_u: 1.0,
            sigma_v: 1.0,
            firm_sd: 0.0,
            year_sd: 0.0,
            treatment: TreatmentType::Continuous,
            seed: 0,
        }
    }
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_firms * self.n_years < 50 {
            return Err(Error::invalid("need n_firms * n_years >= 50"));
        }
        if self.n_years < 2 {
            return Err(Error::invalid("need at least 2 years to lead the outcome"));
        }
        if self.p == 0 {
            return Err(Error::invalid("need at least one control"));
        }
        if !self.theta0.is_finite() {
            return Err(Error::invalid("theta0 must be finite"));
        }
        for (name, sd) in [
            ("sigma_u", self.sigma_u),
            ("sigma_v", self.sigma_v),
            ("firm_sd", self.firm_sd),
            ("year_sd", self.year_sd),
        ] {
            if !(sd >= 0.0 && sd.is_finite()) {
                return Err(Error::invalid(format!("{name} must be a finite non-negative number")));
            }
        }
        self.g0.validate(self.p, "g0")?;
        self.m0.validate(self.p, "m0")
    }

    fn has_effects(&self) -> bool {
        self.firm_sd > 0.0 || self.year_sd > 0.0
    }
}

/// True nuisance values aligned with an estimation sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpTruth {
    pub theta0: f64,
    pub g0: Vec<f64>,
    pub m0: Vec<f64>,
    /// False when the sample was transformed so that `g0`, `m0` no longer apply.
    pub comparable: bool,
}

/// Per-row record of what generated the panel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowTruth {
    pub g0: f64,
    /// `E[D | X]` given the row's effects.
    pub m0: f64,
    pub v: f64,
    /// Noise of the outcome this row's drivers produce (recorded one row later).
    pub u: f64,
    pub firm_effect: f64,
    pub year_effect: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPanel {
    pub spec: DgpSpec,
    pub data: PanelDataset,
    pub rows: Vec<RowTruth>,
}

/// Arrays ready for estimation plus the matching truth.
#[derive(Clone, Debug)]
pub struct SyntheticSample {
    pub outcome: Vec<f64>,
    pub treatment: Vec<f64>,
    pub controls: FeatureMatrix,
    pub firm_index: Vec<usize>,
    pub truth: DgpTruth,
}

struct Draw {
    x: Vec<f64>,
    latent: f64,
    u: f64,
    v: f64,
    m0: f64,
    g0: f64,
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        (v[k / 2 - 1] + v[k / 2]) / 2.0
    }
}

fn binary_propensity(index: f64, cut: f64, sigma_v: f64) -> f64 {
    if sigma_v > 0.0 {
        NormalDist::new(0.0, sigma_v).expect("positive sd").cdf(index - cut)
    } else {
        f64::from(u8::from(index > cut))
    }
}

/// Draws a panel from `spec`. The same spec always yields the same panel.
pub fn generate_panel(spec: &DgpSpec) -> Result<SyntheticPanel> {
    spec.validate()?;
    let (nf, nt, p) = (spec.n_firms, spec.n_years, spec.p);
    let mut rng = rng_from_seed(spec.seed);
    let firm_fx: Vec<f64> = (0..nf).map(|_| spec.firm_sd * normal(&mut rng)).collect();
    // Index 0 is the pre-sample period.
    let year_fx: Vec<f64> = (0..=nt).map(|_| spec.year_sd * normal(&mut rng)).collect();

    let mut draws: Vec<Draw> = Vec::with_capacity(nf * (nt + 1));
    for i in 0..nf {
        for s in 0..=nt {
            let x: Vec<f64> = (0..p).map(|_| normal(&mut rng)).collect();
            let v = spec.sigma_v * normal(&mut rng);
            let u = spec.sigma_u * normal(&mut rng);
            let index = spec.m0.eval(&x) + firm_fx[i] + year_fx[s];
            draws.push(Draw {
                g0: spec.g0.eval(&x),
                m0: index,
                latent: index + v,
                x,
                u,
                v,
            });
        }
    }
    if spec.treatment == TreatmentType::Binary {
        let cut = median(&draws.iter().map(|d| d.latent).collect::<Vec<_>>());
        for d in &mut draws {
            d.m0 = binary_propensity(d.m0, cut, spec.sigma_v);
            d.latent = f64::from(u8::from(d.latent > cut));
            d.v = d.latent - d.m0;
        }
    }

    let n = nf * nt;
    let mut firm_ids = Vec::with_capacity(n);
    let mut years = Vec::with_capacity(n);
    let mut scr = Vec::with_capacity(n);
    let mut mde = Vec::with_capacity(n);
    let mut xs = vec![Vec::with_capacity(n); p];
    let mut rows = Vec::with_capacity(n);
    for i in 0..nf {
        for t in 0..nt {
            let here = &draws[i * (nt + 1) + t + 1];
            let prev = &draws[i * (nt + 1) + t];
            firm_ids.push(format!("F{i:04}"));
            years.push(FIRST_YEAR + t as i64);
            let y = spec.theta0 * prev.latent + prev.g0 + firm_fx[i] + year_fx[t] + prev.u;
            scr.push(Some(y));
            mde.push(Some(here.latent));
            for (col, v) in xs.iter_mut().zip(&here.x) {
                col.push(Some(*v));
            }
            rows.push(RowTruth {
                g0: here.g0,
                m0: here.m0,
                v: here.v,
                u: here.u,
                firm_effect: firm_fx[i],
                year_effect: year_fx[t + 1],
            });
        }
    }
    let mut columns = vec![
        Column::numeric(OUTCOME, Role::Outcome, scr),
        Column::numeric(TREATMENT, Role::Treatment, mde),
    ];
    for (name, col) in control_names(p).into_iter().zip(xs) {
        columns.push(Column::numeric(name, Role::Control, col));
    }
    Ok(SyntheticPanel {
        spec: spec.clone(),
        data: PanelDataset::new(firm_ids, years, columns)?,
        rows,
    })
}

impl SyntheticPanel {
    /// Rows with a lead-one outcome, in panel order, optionally within-transformed.
    pub fn estimation_sample(&self, effects: FixedEffects) -> Result<SyntheticSample> {
        let (nf, nt, p) = (self.spec.n_firms, self.spec.n_years, self.spec.p);
        let scr = self.data.numeric(OUTCOME)?;
        let mde = self.data.numeric(TREATMENT)?;
        let xcols: Vec<&[Option<f64>]> =
            control_names(p).iter().map(|c| self.data.numeric(c)).collect::<Result<_>>()?;
        let keep: Vec<usize> = (0..nf).flat_map(|i| (0..nt - 1).map(move |t| i * nt + t)).collect();
        let mut outcome: Vec<f64> = keep.iter().map(|&r| scr[r + 1].unwrap()).collect();
        let mut treatment: Vec<f64> = keep.iter().map(|&r| mde[r].unwrap()).collect();
        let mut columns: Vec<Vec<f64>> = xcols.iter().map(|c| keep.iter().map(|&r| c[r].unwrap()).collect()).collect();
        let firm_index: Vec<usize> = keep.iter().map(|&r| r / nt).collect();
        let year_index: Vec<usize> = keep.iter().map(|&r| r % nt).collect();
        if !effects.is_empty() {
            within_demean(&mut outcome, &firm_index, &year_index, effects)?;
            within_demean(&mut treatment, &firm_index, &year_index, effects)?;
            for col in &mut columns {
                within_demean(col, &firm_index, &year_index, effects)?;
            }
        }
        let truth = DgpTruth {
            theta0: self.spec.theta0,
            g0: keep.iter().map(|&r| self.rows[r].g0).collect(),
            m0: keep.iter().map(|&r| self.rows[r].m0).collect(),
            comparable: effects.is_empty() && !self.spec.has_effects(),
        };
        Ok(SyntheticSample {
            outcome,
            treatment,
            controls: FeatureMatrix::new(control_names(p), columns)?,
            firm_index,
            truth,
        })
    }
}

// ---------------------------------------------------------------------------
// Monte Carlo

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Least squares after an own-sample fit of the outcome on the controls.
    Naive {
        #[serde(default)]
        learner: LearnerSpec,
        #[serde(default)]
        fixed_effects: FixedEffects,
    },
    Dml(DmlConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub name: String,
    pub estimator: Estimator,
}

impl EstimatorSpec {
    pub fn naive(name: impl Into<String>, learner: LearnerSpec) -> Self {
        Self {
            name: name.into(),
            estimator: Estimator::Naive {
                learner,
                fixed_effects: FixedEffects::NONE,
            },
        }
    }

    pub fn dml(name: impl Into<String>, config: DmlConfig) -> Self {
        Self {
            name: name.into(),
            estimator: Estimator::Dml(config),
        }
    }

    fn effects(&self) -> FixedEffects {
        match &self.estimator {
            Estimator::Naive { fixed_effects, .. } => *fixed_effects,
            Estimator::Dml(c) => c.fixed_effects,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOutcome {
    pub theta: Option<f64>,
    pub se: Option<f64>,
    pub error: Option<String>,
    pub decomposition: Option<BiasDecomposition>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub rep: usize,
    pub data_seed: u64,
    pub outcomes: Vec<EstimatorOutcome>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub name: String,
    pub replications: usize,
    pub failures: usize,
    pub mean_theta: f64,
    pub mean_bias: f64,
    pub rmse: f64,
    /// Spread of the estimates around their mean, with divisor `R`.
    pub variance: f64,
    /// Standard deviation of the estimates, with divisor `R - 1`.
    pub empirical_se: f64,
    pub mean_se: f64,
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub theta0: f64,
    pub replications: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorSummary>,
}

impl std::fmt::Display for MonteCarloReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "theta0 = {}  replications = {}  seed = {}", self.theta0, self.replications, self.seed)?;
        writeln!(
            f,
            "{:<16} {:>5} {:>5} {:>10} {:>10} {:>10} {:>10} {:>10} {:>9}",
            "estimator", "ok", "fail", "mean", "bias", "rmse", "emp.se", "mean.se", "coverage"
        )?;
        for s in &self.estimators {
            writeln!(
                f,
                "{:<16} {:>5} {:>5} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>9.3}",
                s.name,
                s.replications - s.failures,
                s.failures,
                s.mean_theta,
                s.mean_bias,
                s.rmse,
                s.empirical_se,
                s.mean_se,
                s.coverage
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloRun {
    pub report: MonteCarloReport,
    pub replications: Vec<Replication>,
}

/// Data seed of replication `rep`; estimators in that replication share it.
pub fn replication_seed(root: u64, rep: usize) -> u64 {
    derive_seed(root, &[rep as u64])
}

fn run_estimator(spec: &EstimatorSpec, sample: &SyntheticSample, seed: u64) -> Result<EstimatorOutcome> {
    let (cf, fit_path_naive): (CrossFitResult, bool) = match &spec.estimator {
        Estimator::Naive { learner, .. } => {
            let model = learners::fit(learner, &sample.controls, &sample.outcome, seed)?;
            let g_hat = model.predict(&sample.controls)?;
            let zeros = vec![0.0; g_hat.len()];
            (
                CrossFitResult::from_nuisances(sample.outcome.clone(), sample.treatment.clone(), g_hat, zeros)?,
                true,
            )
        }
        Estimator::Dml(config) => {
            let config = DmlConfig { seed, ..config.clone() };
            (
                cross_fit_arrays(
                    &sample.outcome,
                    &sample.treatment,
                    &sample.controls,
                    Some(sample.firm_index.clone()),
                    &config,
                )?,
                false,
            )
        }
    };
    let result = dml_theta(&cf)?;
    let decomposition = if sample.truth.comparable {
        let path = if fit_path_naive {
            FitPath::Naive {
                treatment: &cf.treatment,
                outcome: &cf.outcome,
                g_hat: &cf.g_hat,
            }
        } else {
            FitPath::CrossFit(&cf)
        };
        Some(bias_decomposition(path, Some(&sample.truth))?)
    } else {
        None
    };
    Ok(EstimatorOutcome {
        theta: Some(result.theta),
        se: Some(result.se),
        error: None,
        decomposition,
    })
}

/// One replication: a fresh panel and every estimator on it.
pub fn run_replication(spec: &DgpSpec, estimators: &[EstimatorSpec], root: u64, rep: usize) -> Result<Replication> {
    let data_seed = replication_seed(root, rep);
    let panel = generate_panel(&DgpSpec {
        seed: data_seed,
        ..spec.clone()
    })?;
    let mut samples: Vec<(FixedEffects, SyntheticSample)> = Vec::new();
    let mut outcomes = Vec::with_capacity(estimators.len());
    for est in estimators {
        let fx = est.effects();
        if !samples.iter().any(|(f, _)| *f == fx) {
            samples.push((fx, panel.estimation_sample(fx)?));
        }
        let sample = &samples.iter().find(|(f, _)| *f == fx).unwrap().1;
        let outcome = run_estimator(est, sample, derive_seed(data_seed, &[1])).unwrap_or_else(|e| EstimatorOutcome {
            theta: None,
            se: None,
            error: Some(e.to_string()),
            decomposition: None,
        });
        outcomes.push(outcome);
    }
    Ok(Replication {
        rep,
        data_seed,
        outcomes,
    })
}

/// Summaries over replications, accumulated in replication order.
pub fn summarize(theta0: f64, seed: u64, estimators: &[EstimatorSpec], reps: &[Replication]) -> MonteCarloReport {
    let rows = estimators
        .iter()
        .enumerate()
        .map(|(e, spec)| {
            let ok: Vec<(f64, f64)> = reps
                .iter()
                .filter_map(|r| Some((r.outcomes[e].theta?, r.outcomes[e].se?)))
                .collect();
            let k = ok.len() as f64;
            let mean = ok.iter().map(|(t, _)| t).sum::<f64>() / k;
            let variance = ok.iter().map(|(t, _)| (t - mean).powi(2)).sum::<f64>() / k;
            let mse = ok.iter().map(|(t, _)| (t - theta0).powi(2)).sum::<f64>() / k;
            let covered = ok.iter().filter(|(t, s)| (t - theta0).abs() <= Z_95 * s).count();
            EstimatorSummary {
                name: spec.name.clone(),
                replications: reps.len(),
                failures: reps.len() - ok.len(),
                mean_theta: mean,
                mean_bias: mean - theta0,
                rmse: mse.sqrt(),
                variance,
                empirical_se: if ok.len() > 1 { (variance * k / (k - 1.0)).sqrt() } else { f64::NAN },
                mean_se: ok.iter().map(|(_, s)| s).sum::<f64>() / k,
                coverage: covered as f64 / k,
            }
        })
        .collect();
    MonteCarloReport {
        theta0,
        replications: reps.len(),
        seed,
        estimators: rows,
    }
}

/// Runs `replications` independent draws of `spec` through every estimator.
/// Estimator failures are recorded per replication rather than aborting.
pub fn monte_carlo(
    spec: &DgpSpec,
    estimators: &[EstimatorSpec],
    replications: usize,
    seed: u64,
) -> Result<MonteCarloRun> {
    if replications < 50 {
        return Err(Error::invalid(format!("need at least 50 replications, got {replications}")));
    }
    if estimators.is_empty() {
        return Err(Error::invalid("no estimators given"));
    }
    spec.validate()?;
    let reps: Vec<Replication> = (0..replications)
        .into_par_iter()
        .map(|r| run_replication(spec, estimators, seed, r))
        .collect::<Result<_>>()?;
    Ok(MonteCarloRun {
        report: summarize(spec.theta0, seed, estimators, &reps),
        replications: reps,
    })
}

// ---------------------------------------------------------------------------
// Orthogonality check on a large cross-section

/// Central-difference slopes of the sample moments at the true nuisances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityReport {
    pub n: usize,
    pub epsilon: f64,
    /// Orthogonal moment, perturbing `g` along `h`.
    pub dml_slope_g: f64,
    /// Orthogonal moment, perturbing `m` along `h`.
    pub dml_slope_m: f64,
    /// Naive moment, perturbing `g` along `h`.
    pub naive_slope: f64,
}

struct CrossSection {
    d: Vec<f64>,
    y: Vec<f64>,
    g0: Vec<f64>,
    m0: Vec<f64>,
}

/// Independent rows from `spec` without panel effects.
fn cross_section(spec: &DgpSpec, n: usize, seed: u64) -> CrossSection {
    let mut rng = rng_from_seed(seed);
    let mut x = vec![0.0; spec.p];
    let mut out = CrossSection {
        d: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        g0: Vec::with_capacity(n),
        m0: Vec::with_capacity(n),
    };
    let noise_v = Normal::new(0.0, spec.sigma_v).expect("validated sd");
    let noise_u = Normal::new(0.0, spec.sigma_u).expect("validated sd");
    for _ in 0..n {
        for v in &mut x {
            *v = rng.sample(StandardNormal);
        }
        let g = spec.g0.eval(&x);
        let m = spec.m0.eval(&x);
        let d = match spec.treatment {
            TreatmentType::Continuous => m + noise_v.sample(&mut rng),
            // The cut is at the population median of a symmetric index only
            // approximately; the check only needs a valid propensity.
            TreatmentType::Binary => f64::from(u8::from(m + noise_v.sample(&mut rng) > 0.0)),
        };
        let m_true = match spec.treatment {
            TreatmentType::Continuous => m,
            TreatmentType::Binary => binary_propensity(m, 0.0, spec.sigma_v),
        };
        out.y.push(spec.theta0 * d + g + noise_u.sample(&mut rng));
        out.d.push(d);
        out.g0.push(g);
        out.m0.push(m_true);
    }
    out
}

/// Gateaux slopes at the true nuisances along `h = m0` standardised to unit
/// RMS. Rows are drawn in chunks so memory stays bounded for large `n`.
pub fn orthogonality_check(spec: &DgpSpec, n: usize, chunk: usize, epsilon: f64, seed: u64) -> Result<OrthogonalityReport> {
    spec.validate()?;
    if n == 0 || chunk == 0 || !(epsilon > 0.0) {
        return Err(Error::invalid("need positive n, chunk size and epsilon"));
    }
    let chunks: Vec<(u64, usize)> = (0..n.div_ceil(chunk))
        .map(|c| (derive_seed(seed, &[c as u64]), chunk.min(n - c * chunk)))
        .collect();

    // First pass: standardising constants of the direction.
    let moments: Vec<(f64, f64)> = chunks
        .par_iter()
        .map(|&(s, len)| {
            let cs = cross_section(spec, len, s);
            (cs.m0.iter().sum::<f64>(), cs.m0.iter().map(|v| v * v).sum::<f64>())
        })
        .collect();
    let (s1, s2) = moments.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let nf = n as f64;
    let mean = s1 / nf;
    let rms = (s2 / nf - mean * mean).sqrt();
    if !(rms > 0.0) {
        return Err(Error::invalid("treatment nuisance is constant; no direction to perturb"));
    }

    let sums: Vec<[f64; 3]> = chunks
        .par_iter()
        .map(|&(s, len)| {
            let cs = cross_section(spec, len, s);
            let h: Vec<f64> = cs.m0.iter().map(|m| (m - mean) / rms).collect();
            let shift = |base: &[f64], e: f64| base.iter().zip(&h).map(|(b, h)| b + e * h).collect::<Vec<f64>>();
            let w = len as f64;
            let (gp, gm) = (shift(&cs.g0, epsilon), shift(&cs.g0, -epsilon));
            let (mp, mm) = (shift(&cs.m0, epsilon), shift(&cs.m0, -epsilon));
            let t = spec.theta0;
            [
                w * (dml_moment(&cs.d, &cs.y, &gp, &cs.m0, t) - dml_moment(&cs.d, &cs.y, &gm, &cs.m0, t)),
                w * (dml_moment(&cs.d, &cs.y, &cs.g0, &mp, t) - dml_moment(&cs.d, &cs.y, &cs.g0, &mm, t)),
                w * (naive_moment(&cs.d, &cs.y, &gp, t) - naive_moment(&cs.d, &cs.y, &gm, t)),
            ]
        })
        .collect();
    let total = sums.iter().fold([0.0; 3], |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2]]);
    let scale = 1.0 / (2.0 * epsilon * nf);
    Ok(OrthogonalityReport {
        n,
        epsilon,
        dml_slope_g: total[0] * scale,
        dml_slope_m: total[1] * scale,
        naive_slope: total[2] * scale,
    })
}

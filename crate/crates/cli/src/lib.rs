//! Command-line front end: reads a TOML run configuration, applies flag
//! overrides and writes every output under one directory.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use dmlpanel_core::indicators::{compute_indicators, IndicatorOptions};
use dmlpanel_core::panel::{csv_header, load_csv, ColumnSpec, PanelDataset, Role, SchemaDecl};
use dmlpanel_core::robustness::{regression_table, run_suite, BaseSpec, RobustnessSuite, SuiteResults, VariantResult};
use dmlpanel_core::synthgen::{generate_panel, monte_carlo, DgpSpec, Estimator, EstimatorSpec, MonteCarloRun};
use dmlpanel_core::{run_dml_pipeline, DmlConfig, DmlResult, FixedEffects, LearnerKind, LearnerSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] dmlpanel_core::Error),

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("cannot serialise output: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl CliError {
    /// 2 for problems with the user's config or data, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        use dmlpanel_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e.root() {
                E::NotAForest(_) | E::NoTruth(_) => 1,
                _ => 2,
            },
            CliError::Output { .. } | CliError::Serialize(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "dmlpanel", version, about = "Cross-fitted double machine learning for firm-year panels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Build resilience indicators, the marketization index, mediators and controls.
    Indicators,
    /// Estimate the treatment coefficient for each outcome and render a table.
    Estimate,
    /// Run the base estimation together with its robustness variants.
    Robustness,
    /// Monte Carlo study on a synthetic panel, optionally exporting one draw.
    Simulate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Indicators => "indicators",
            Command::Estimate => "estimate",
            Command::Robustness => "robustness",
            Command::Simulate => "simulate",
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of cross-fitting folds.
    #[arg(long, global = true)]
    pub folds: Option<usize>,
    /// Nuisance learner for both regressions (tree, forest, gbt, lasso, mlp).
    #[arg(long, global = true)]
    pub learner: Option<LearnerKind>,
    /// Output directory; overrides `output` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub input: Option<InputConfig>,
    pub indicators: Option<IndicatorOptions>,
    pub estimate: Option<EstimateConfig>,
    pub robustness: Option<RobustnessSuite>,
    pub simulate: Option<SimulateConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub path: PathBuf,
    /// Columns read as text (partner lists, regions, report text).
    #[serde(default)]
    pub text_columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub outcomes: Vec<String>,
    pub treatment: String,
    pub controls: Vec<String>,
    #[serde(default)]
    pub dml: DmlConfig,
    /// Title printed above the regression table.
    #[serde(default)]
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub dgp: DgpSpec,
    /// 0 skips the Monte Carlo study; otherwise at least 50.
    #[serde(default)]
    pub replications: usize,
    /// Defaults to an own-sample forest and a cross-fitted forest.
    #[serde(default)]
    pub estimators: Vec<EstimatorSpec>,
    /// Writes one draw of the panel to `panel.csv`.
    #[serde(default)]
    pub export_panel: bool,
}

pub fn default_estimators() -> Vec<EstimatorSpec> {
    vec![
        EstimatorSpec::naive("naive", LearnerSpec::default()),
        EstimatorSpec::dml(
            "dml",
            DmlConfig {
                fixed_effects: FixedEffects::NONE,
                ..DmlConfig::default()
            },
        ),
    ]
}

/// Configuration after flag overrides, with paths resolved.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub command: &'static str,
    pub seed: u64,
    pub output: PathBuf,
    pub config: RunConfig,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> CliResult<RunConfig> {
    toml::from_str(text).map_err(|e| config_err(e.to_string()))
}

fn apply_dml_overrides(cfg: &mut DmlConfig, seed: u64, o: &Overrides) {
    cfg.seed = seed;
    if let Some(k) = o.folds {
        cfg.n_folds = k;
    }
    if let Some(kind) = o.learner {
        *cfg = cfg.clone().with_learner(LearnerSpec::default_for(kind));
    }
}

/// Checks the sections against the command and folds in the flag overrides.
pub fn resolve(command: Command, mut config: RunConfig, base_dir: &Path, o: &Overrides) -> CliResult<Resolved> {
    let has = |b: bool, section: &'static str| if b { Some(section) } else { None };
    let present: Vec<&str> = [
        has(config.indicators.is_some(), "indicators"),
        has(config.estimate.is_some(), "estimate"),
        has(config.robustness.is_some(), "robustness"),
        has(config.simulate.is_some(), "simulate"),
    ]
    .into_iter()
    .flatten()
    .collect();
    let (required, allowed): (&[&str], &[&str]) = match command {
        Command::Indicators => (&["input", "indicators"], &["indicators"]),
        Command::Estimate => (&["input", "estimate"], &["estimate"]),
        Command::Robustness => (&["input", "estimate", "robustness"], &["estimate", "robustness"]),
        Command::Simulate => (&["simulate"], &["simulate"]),
    };
    for r in required {
        let ok = match *r {
            "input" => config.input.is_some(),
            other => present.contains(&other),
        };
        if !ok {
            return Err(config_err(format!("`{}` needs a [{r}] section", command.name())));
        }
    }
    if let Some(extra) = present.iter().find(|s| !allowed.contains(s)) {
        return Err(config_err(format!("[{extra}] does not belong in a `{}` config", command.name())));
    }
    if command == Command::Simulate && config.input.is_some() {
        return Err(config_err("`simulate` takes no [input] section"));
    }

    let seed = o.seed.or(config.seed).unwrap_or(0);
    config.seed = Some(seed);
    let output = match (&o.out, &config.output) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => base_dir.join(p),
        (None, None) => return Err(config_err("no output directory: set `output` or pass --out")),
    };
    config.output = None;
    if let Some(input) = &mut config.input {
        input.path = base_dir.join(&input.path);
    }
    if let Some(opts) = &mut config.indicators {
        if let Some(k) = &opts.keywords {
            opts.keywords = Some(base_dir.join(k));
        }
    }
    if let Some(est) = &mut config.estimate {
        apply_dml_overrides(&mut est.dml, seed, o);
    }
    if let Some(sim) = &mut config.simulate {
        if sim.replications != 0 && sim.replications < 50 {
            return Err(config_err("simulate.replications must be 0 or at least 50"));
        }
        if sim.estimators.is_empty() {
            sim.estimators = default_estimators();
        }
        sim.dgp.seed = seed;
        for est in &mut sim.estimators {
            match &mut est.estimator {
                Estimator::Dml(cfg) => apply_dml_overrides(cfg, seed, o),
                Estimator::Naive { learner, .. } => {
                    if let Some(kind) = o.learner {
                        *learner = LearnerSpec::default_for(kind);
                    }
                }
            }
        }
    }
    Ok(Resolved {
        command: command.name(),
        seed,
        output,
        config,
    })
}

impl Resolved {
    /// SHA-256 of the canonical JSON encoding of the effective configuration.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Keyed<'a> {
            command: &'a str,
            seed: u64,
            config: &'a RunConfig,
        }
        let bytes = serde_json::to_vec(&Keyed {
            command: self.command,
            seed: self.seed,
            config: &self.config,
        })
        .expect("config serialises");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantCount {
    pub variant: String,
    pub outcome: String,
    pub n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub config_hash: String,
    pub input: Option<InputRecord>,
    pub counts: Vec<VariantCount>,
    pub outputs: Vec<String>,
}

struct Out {
    dir: PathBuf,
    written: Vec<String>,
}

impl Out {
    fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|source| CliError::Output {
            path: dir.to_owned(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_owned(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|source| CliError::Output { path, source })?;
        self.written.push(name.to_owned());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    fn finish(mut self, run: &Resolved, input: Option<InputRecord>, counts: Vec<VariantCount>) -> CliResult<Vec<String>> {
        let manifest = Manifest {
            tool: "dmlpanel",
            version: VERSION,
            command: run.command,
            seed: run.seed,
            config_hash: run.hash(),
            input,
            counts,
            outputs: self.written.clone(),
        };
        self.json("manifest.json", &manifest)?;
        Ok(self.written)
    }
}

fn input_record(path: &Path) -> CliResult<InputRecord> {
    let bytes = fs::read(path).map_err(|source| dmlpanel_core::Error::Io {
        path: path.to_owned(),
        source,
    })?;
    Ok(InputRecord {
        path: path.to_owned(),
        sha256: hex::encode(Sha256::digest(bytes)),
    })
}

fn panel_csv(data: &PanelDataset) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    data.write_csv(&mut buf)?;
    Ok(buf)
}

fn load_for_estimation(input: &InputConfig, est: &EstimateConfig, extra_numeric: &[String]) -> CliResult<PanelDataset> {
    let mut columns: Vec<ColumnSpec> = Vec::new();
    let mut declare = |name: &str, role: Role| {
        if !columns.iter().any(|c| c.name == name) {
            columns.push(ColumnSpec::numeric(name, role));
        }
    };
    for o in &est.outcomes {
        declare(o, Role::Outcome);
    }
    declare(&est.treatment, Role::Treatment);
    for c in &est.controls {
        declare(c, Role::Control);
    }
    for c in extra_numeric {
        declare(c, Role::Auxiliary);
    }
    for t in &input.text_columns {
        if columns.iter().any(|c| &c.name == t) {
            return Err(config_err(format!("`{t}` is used as a number and declared as text")));
        }
        columns.push(ColumnSpec::text(t.clone()));
    }
    let (data, _) = load_csv(&input.path, &SchemaDecl::permissive(columns))?;
    Ok(data)
}

/// Long-format estimates, one line per outcome.
pub fn results_csv(results: &[(String, DmlResult)]) -> String {
    let mut out = String::from("outcome,theta,se,t_stat,p_value,ci_low,ci_high,n\n");
    for (o, r) in results {
        let (lo, hi) = r.ci95();
        out.push_str(&format!(
            "{o},{},{},{},{},{lo},{hi},{}\n",
            r.theta, r.se, r.t_stat, r.p_value, r.n_used
        ));
    }
    out
}

pub fn cmd_indicators(run: &Resolved) -> CliResult<Vec<String>> {
    let input = run.config.input.as_ref().expect("resolved");
    let opts = run.config.indicators.as_ref().expect("resolved");
    let header = csv_header(&input.path)?;
    let mut text: Vec<String> = input.text_columns.clone();
    for name in ["suppliers", "customers", "report_text"].iter().copied().chain(opts.region_column.as_deref()) {
        if header.iter().any(|h| h == name) && !text.iter().any(|t| t == name) {
            text.push(name.to_owned());
        }
    }
    let schema = SchemaDecl::permissive(text.into_iter().map(ColumnSpec::text).collect());
    let (data, load) = load_csv(&input.path, &schema)?;
    let (augmented, report) = compute_indicators(&data, opts)?;
    let mut out = Out::new(&run.output)?;
    out.write("indicators.csv", panel_csv(&augmented)?)?;
    #[derive(Serialize)]
    struct Report<'a> {
        load: &'a dmlpanel_core::panel::LoadReport,
        indicators: &'a dmlpanel_core::indicators::IndicatorReport,
    }
    out.json(
        "indicator_report.json",
        &Report {
            load: &load,
            indicators: &report,
        },
    )?;
    for issue in &report.issues {
        eprintln!("warning: {} {} {}: {}", issue.firm_id, issue.year, issue.indicator, issue.reason);
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    out.finish(run, Some(input_record(&input.path)?), Vec::new())
}

pub fn cmd_estimate(run: &Resolved) -> CliResult<Vec<String>> {
    let input = run.config.input.as_ref().expect("resolved");
    let est = run.config.estimate.as_ref().expect("resolved");
    let data = load_for_estimation(input, est, &[])?;
    #[derive(Serialize)]
    struct Entry {
        outcome: String,
        result: DmlResult,
        manifest: dmlpanel_core::dml::RunManifest,
    }
    let mut entries = Vec::new();
    for outcome in &est.outcomes {
        let r = run_dml_pipeline(&data, outcome, &est.treatment, &est.controls, &est.dml)?;
        entries.push(Entry {
            outcome: outcome.clone(),
            result: r.result,
            manifest: r.manifest,
        });
    }
    let results: Vec<(String, DmlResult)> = entries.iter().map(|e| (e.outcome.clone(), e.result.clone())).collect();
    let table = regression_table(&results, &est.outcomes, &est.treatment, &est.title)?;
    let mut out = Out::new(&run.output)?;
    out.write("estimates.csv", results_csv(&results))?;
    out.json("results.json", &entries)?;
    out.write("table.txt", table.to_text())?;
    out.write("table.md", table.to_markdown())?;
    out.write("table.csv", table.to_csv()?)?;
    let counts = results
        .iter()
        .map(|(o, r)| VariantCount {
            variant: "base".into(),
            outcome: o.clone(),
            n: Some(r.n_used),
        })
        .collect();
    out.finish(run, Some(input_record(&input.path)?), counts)
}

fn variant_counts(v: &VariantResult) -> Vec<VariantCount> {
    v.outcomes
        .iter()
        .map(|o| VariantCount {
            variant: v.name.clone(),
            outcome: o.outcome.clone(),
            n: o.result.as_ref().map(|r| r.n_used),
        })
        .collect()
}

pub fn cmd_robustness(run: &Resolved) -> CliResult<Vec<String>> {
    let input = run.config.input.as_ref().expect("resolved");
    let est = run.config.estimate.as_ref().expect("resolved");
    let suite = run.config.robustness.as_ref().expect("resolved");
    suite.validate()?;
    // Confounders must be loaded as numbers. An absent one fails only its variant.
    let header = csv_header(&input.path)?;
    let mut extra: Vec<String> = Vec::new();
    for v in &suite.variants {
        if let dmlpanel_core::VariantKind::ConfounderAdd { column } = &v.kind {
            if header.contains(column) && !input.text_columns.contains(column) {
                extra.push(column.clone());
            }
        }
    }
    let data = load_for_estimation(input, est, &extra)?;
    let base = BaseSpec {
        outcomes: est.outcomes.clone(),
        treatment: est.treatment.clone(),
        controls: est.controls.clone(),
        config: est.dml.clone(),
    };
    let results: SuiteResults = run_suite(&data, &base, suite)?;
    let mut out = Out::new(&run.output)?;
    let mut text = String::new();
    let mut md = String::new();
    let mut counts = Vec::new();
    for v in &results.variants {
        let mut csv = String::from("outcome,theta,se,t_stat,p_value,ci_low,ci_high,n,error\n");
        for o in &v.outcomes {
            match &o.result {
                Some(r) => {
                    let (lo, hi) = r.ci95();
                    csv.push_str(&format!(
                        "{},{},{},{},{},{lo},{hi},{},\n",
                        o.outcome, r.theta, r.se, r.t_stat, r.p_value, r.n_used
                    ));
                }
                None => csv.push_str(&format!(
                    "{},,,,,,,,\"{}\"\n",
                    o.outcome,
                    o.error.as_deref().unwrap_or("").replace('"', "\"\"")
                )),
            }
        }
        out.write(&format!("{}.csv", v.name), csv)?;
        counts.extend(variant_counts(v));
        let title = format!("{} ({})", if est.title.is_empty() { "Variant" } else { &est.title }, v.name);
        if let Some(e) = &v.error {
            eprintln!("warning: variant {} failed: {e}", v.name);
            text.push_str(&format!("{title}\nvariant failed: {e}\n\n"));
            md.push_str(&format!("### {}\n\nvariant failed: {e}\n\n", v.name));
            continue;
        }
        for o in v.outcomes.iter().filter(|o| o.error.is_some()) {
            eprintln!("warning: variant {} outcome {}: {}", v.name, o.outcome, o.error.as_deref().unwrap_or(""));
        }
        let res = v.results();
        if res.is_empty() {
            text.push_str(&format!("{title}\nno estimates\n\n"));
            md.push_str(&format!("### {}\n\nno estimates\n\n", v.name));
            continue;
        }
        let table = regression_table(&res, &est.outcomes, &est.treatment, &title)?;
        text.push_str(&table.to_text());
        text.push('\n');
        md.push_str(&format!("### {}\n\n", v.name));
        md.push_str(&table.to_markdown());
        md.push('\n');
    }
    out.write("table.txt", text)?;
    out.write("table.md", md)?;
    out.json("results.json", &results)?;
    out.finish(run, Some(input_record(&input.path)?), counts)
}

pub fn cmd_simulate(run: &Resolved) -> CliResult<Vec<String>> {
    let sim = run.config.simulate.as_ref().expect("resolved");
    sim.dgp.validate()?;
    let mut out = Out::new(&run.output)?;
    if sim.export_panel {
        let panel = generate_panel(&sim.dgp)?;
        out.write("panel.csv", panel_csv(&panel.data)?)?;
    }
    if sim.replications > 0 {
        let MonteCarloRun { report, replications } = monte_carlo(&sim.dgp, &sim.estimators, sim.replications, run.seed)?;
        let mut csv = String::from("rep,data_seed,estimator,theta,se,error\n");
        for r in &replications {
            for (spec, o) in sim.estimators.iter().zip(&r.outcomes) {
                let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                csv.push_str(&format!(
                    "{},{},{},{},{},\"{}\"\n",
                    r.rep,
                    r.data_seed,
                    spec.name,
                    f(o.theta),
                    f(o.se),
                    o.error.as_deref().unwrap_or("").replace('"', "\"\"")
                ));
            }
        }
        out.write("replications.csv", csv)?;
        out.write("report.txt", report.to_string())?;
        #[derive(Serialize)]
        struct Full<'a> {
            report: &'a dmlpanel_core::MonteCarloReport,
            replications: &'a [dmlpanel_core::synthgen::Replication],
        }
        out.json(
            "report.json",
            &Full {
                report: &report,
                replications: &replications,
            },
        )?;
        print!("{report}");
    }
    out.finish(run, None, Vec::new())
}

/// Parses nothing; runs an already parsed command line.
pub fn execute(cli: &Cli) -> CliResult<Vec<String>> {
    let (config, base_dir) = match &cli.overrides.config {
        Some(path) => (load_config(path)?, path.parent().map(Path::to_owned).unwrap_or_default()),
        None => return Err(config_err("--config is required")),
    };
    let run = resolve(cli.command, config, &base_dir, &cli.overrides)?;
    match cli.command {
        Command::Indicators => cmd_indicators(&run),
        Command::Estimate => cmd_estimate(&run),
        Command::Robustness => cmd_robustness(&run),
        Command::Simulate => cmd_simulate(&run),
    }
}

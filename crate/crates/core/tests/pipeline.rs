use dmlpanel_core::learners::{LassoParams, MlpParams};
use dmlpanel_core::synthgen::{control_names, OUTCOME, TREATMENT};
use dmlpanel_core::{generate_panel, run_dml_pipeline, DgpSpec, DmlConfig, DmlResult, Family, FixedEffects, LearnerSpec};

fn fe_panel(seed: u64) -> DgpSpec {
    DgpSpec {
        n_firms: 200,
        g0: Family::Linear {
            coefs: vec![1.0, 0.5, -0.5],
        },
        m0: Family::Linear {
            coefs: vec![0.5, 0.5, 0.5],
        },
        firm_sd: 0.8,
        year_sd: 0.4,
        seed,
        ..Default::default()
    }
}

fn estimate(spec: &DgpSpec, config: &DmlConfig) -> DmlResult {
    let panel = generate_panel(spec).unwrap();
    run_dml_pipeline(&panel.data, OUTCOME, TREATMENT, &control_names(spec.p), config)
        .unwrap()
        .result
}

fn lasso() -> DmlConfig {
    DmlConfig {
        fixed_effects: FixedEffects::TWO_WAY,
        seed: 3,
        ..DmlConfig::default().with_learner(LearnerSpec::Lasso(LassoParams::default()))
    }
}

fn agree(a: &DmlResult, b: &DmlResult) -> bool {
    (a.theta - b.theta).abs() < 3.0 * (a.se * a.se + b.se * b.se).sqrt()
}

#[test]
fn two_way_pipeline_recovers_effect() {
    for seed in [1, 2, 3] {
        let r = estimate(&fe_panel(seed), &lasso());
        assert!((r.theta - 0.5).abs() < 3.0 * r.se, "seed {seed}: {} +- {}", r.theta, r.se);
        assert_eq!(r.n_used, 800);
    }
}

#[test]
fn pooled_pipeline_is_pulled_by_shared_effects() {
    let mut cfg = lasso();
    cfg.fixed_effects = FixedEffects::NONE;
    let r = estimate(&fe_panel(1), &cfg);
    assert!(r.theta - 0.5 > 3.0 * r.se, "{} +- {}", r.theta, r.se);
}

#[test]
fn four_and_five_folds_agree() {
    let spec = fe_panel(7);
    let k5 = estimate(&spec, &lasso());
    let k4 = estimate(&spec, &DmlConfig { n_folds: 4, ..lasso() });
    assert!(agree(&k5, &k4), "{} vs {}", k5.theta, k4.theta);
    assert_ne!(k5.theta, k4.theta);
}

#[test]
fn mlp_nuisances_agree_with_lasso() {
    let spec = fe_panel(11);
    let base = estimate(&spec, &lasso());
    let mlp = DmlConfig {
        fixed_effects: FixedEffects::TWO_WAY,
        seed: 3,
        ..DmlConfig::default().with_learner(LearnerSpec::Mlp(MlpParams {
            epochs: 100,
            ..Default::default()
        }))
    };
    let nn = estimate(&spec, &mlp);
    assert!(agree(&base, &nn), "{} vs {}", base.theta, nn.theta);
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmlpanel")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

const RAW: &str = "\
firm_id,year,suppliers,customers,top3_supplier_share,top3_customer_share,actual_sales,wc_turnover,ar_turnover,op_cashflow,scf_quota,current_liabilities,platform_volume,asset_registrations,provider_density
A,2020,s1;s2;s3,c1;c2;c3,0.4,0.6,100,2,5,50,30,100,1.0,2.0,0.5
A,2021,s1;s2;s9,c1;c2;c3,0.5,0.5,110,1,1,60,20,100,2.0,3.0,0.7
B,2020,s4;s5;s6,c4;c5;c6,0.2,0.3,200,1.5,2,10,10,50,0.5,1.0,0.2
B,2021,s4;s5;s6,c4;c5;c6,0.3,0.3,190,1.5,2,-20,10,100,0.8,1.5,0.3
C,2020,s7;s8;s9,c7;c8;c9,0.9,0.8,50,3,1,5,0,40,3.0,2.5,0.9
C,2021,s7;s1;s2,c7;c8;c1,0.7,0.6,55,3,1,5,0,0,2.5,2.0,1.1
";

#[test]
fn indicators_append_columns_route_errors_and_rerun_identically() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "raw.csv", RAW);
    let cfg = write(dir.path(), "ind.toml", "output = \"out\"\n[input]\npath = \"raw.csv\"\n[indicators]\n");
    ok(&run(&["indicators", "--config", cfg.to_str().unwrap()]));
    let first = fs::read_to_string(dir.path().join("out/indicators.csv")).unwrap();
    let header: Vec<&str> = first.lines().next().unwrap().split(',').collect();
    for col in ["SCR1", "SCR2", "SCR3", "SCR4", "SCR5", "Mde"] {
        assert!(header.contains(&col), "{col} missing from {header:?}");
    }
    // Firm C has zero current liabilities in 2021.
    let scr5 = header.iter().position(|h| *h == "SCR5").unwrap();
    let c2021 = first.lines().find(|l| l.starts_with("C,2021")).unwrap();
    assert_eq!(c2021.split(',').nth(scr5), Some("NA"));
    let report = fs::read_to_string(dir.path().join("out/indicator_report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    let issues = v["indicators"]["issues"].as_array().unwrap();
    assert!(issues.iter().any(|i| i["firm_id"] == "C" && i["year"] == 2021 && i["indicator"] == "SCR5"));

    ok(&run(&["indicators", "--config", cfg.to_str().unwrap()]));
    assert_eq!(first, fs::read_to_string(dir.path().join("out/indicators.csv")).unwrap());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "indicators");
    assert_eq!(manifest["input"]["sha256"].as_str().unwrap().len(), 64);
}

// Linear nuisances commute with the within transformation.
fn synthetic_panel(dir: &Path) {
    let cfg = write(
        dir,
        "sim.toml",
        "output = \"sim\"\nseed = 12\n[simulate]\nexport_panel = true\n[simulate.dgp]\nn_firms = 200\nn_years = 5\nfirm_sd = 0.5\nyear_sd = 0.3\n\
g0 = { family = \"linear\", coefs = [1.0, 0.5, -0.5] }\nm0 = { family = \"linear\", coefs = [0.5, 0.5, 0.5] }\n",
    );
    ok(&run(&["simulate", "--config", cfg.to_str().unwrap()]));
}

const ESTIMATE: &str = r#"
output = "est"
seed = 1
[input]
path = "sim/panel.csv"
[estimate]
outcomes = ["scr"]
treatment = "mde"
controls = ["x1", "x2", "x3", "x4", "x5"]
[estimate.dml]
outcome_learner = { kind = "lasso" }
treatment_learner = { kind = "lasso" }
"#;

fn estimate_row(dir: &Path) -> (f64, f64) {
    let text = fs::read_to_string(dir.join("estimates.csv")).unwrap();
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').skip(1).map(|s| s.parse().unwrap()).collect();
    (row[0], row[1])
}

#[test]
fn estimate_recovers_the_synthetic_effect_and_is_seed_stable() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_panel(dir.path());
    let cfg = write(dir.path(), "est.toml", ESTIMATE);
    ok(&run(&["estimate", "--config", cfg.to_str().unwrap()]));
    let (theta, se) = estimate_row(&dir.path().join("est"));
    assert!((theta - 0.5).abs() < 3.0 * se, "{theta} +- {se}");
    let table = fs::read_to_string(dir.path().join("est/table.txt")).unwrap();
    assert!(table.contains(&format!("{theta:.3}")), "{table}");
    assert!(table.contains("Firm FE"));

    let other = dir.path().join("est_seed");
    ok(&run(&["estimate", "--config", cfg.to_str().unwrap(), "--seed", "99", "--out", other.to_str().unwrap()]));
    let (theta2, se2) = estimate_row(&other);
    assert!((theta - theta2).abs() < 3.0 * (se * se + se2 * se2).sqrt());
    let hash = |d: &Path| -> String {
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("manifest.json")).unwrap()).unwrap();
        m["config_hash"].as_str().unwrap().to_owned()
    };
    assert_ne!(hash(&dir.path().join("est")), hash(&other));
}

#[test]
fn missing_outcome_column_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_panel(dir.path());
    let cfg = write(dir.path(), "bad.toml", &ESTIMATE.replace("outcomes = [\"scr\"]", "outcomes = [\"SCR9\"]"));
    let o = run(&["estimate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("SCR9"));
    assert!(!dir.path().join("est").exists());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "typo.toml", "output = \"o\"\nsede = 3\n[simulate]\n");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sede"));
    let o = run(&["estimate", "--config", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn robustness_writes_per_variant_outputs() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_panel(dir.path());
    let suite = r#"
[[robustness.variants]]
name = "k4"
kind = "refold"
n_folds = 4
[[robustness.variants]]
name = "nn"
kind = "learner_swap"
learner = { kind = "mlp" }
[[robustness.variants]]
name = "broken"
kind = "confounder_add"
column = "not_there"
"#;
    let cfg = write(dir.path(), "rob.toml", &format!("{}{suite}", ESTIMATE.replace("\"est\"", "\"rob\"")));
    let o = run(&["robustness", "--config", cfg.to_str().unwrap()]);
    ok(&o);
    let out = dir.path().join("rob");
    for v in ["base", "k4", "nn"] {
        let text = fs::read_to_string(out.join(format!("{v}.csv"))).unwrap();
        assert_eq!(text.lines().count(), 2, "{v}: {text}");
    }
    let read = |v: &str| -> (f64, f64) {
        let text = fs::read_to_string(out.join(format!("{v}.csv"))).unwrap();
        let f: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        (f[1].parse().unwrap(), f[2].parse().unwrap())
    };
    let (tb, sb) = read("base");
    let (tn, sn) = read("nn");
    assert!((tb - tn).abs() < 3.0 * (sb * sb + sn * sn).sqrt(), "forest {tb} vs mlp {tn}");
    let broken = fs::read_to_string(out.join("broken.csv")).unwrap();
    assert_eq!(broken.lines().count(), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("broken"));
    let table = fs::read_to_string(out.join("table.txt")).unwrap();
    assert!(table.contains("(k4)") && table.contains("variant failed"));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let counts = manifest["counts"].as_array().unwrap();
    assert!(counts.iter().any(|c| c["variant"] == "k4" && c["n"] == 800));
}

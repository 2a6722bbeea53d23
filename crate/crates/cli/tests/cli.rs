use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_foldmenu"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, text).unwrap();
        p
    }

    /// Small noiseless panel plus an estimation config reusing its draws.
    fn noiseless(&self) -> (PathBuf, PathBuf) {
        let dgp = self.write(
            "dgp.toml",
            "[dgp]\nn_markets = 20\nshock_scale = 0.0\ninterval_draws = 300\nnormal_draws = 500\nseed = 99\n",
        );
        let est = self.write(
            "est.toml",
            "[estimation]\ninterval_draws = 300\nnormal_draws = 500\nseed = 99\ncontraction_tol = 1e-10\ntheta_tol = 1e-5\n",
        );
        let sim = self.path("sim");
        let out = run(&["simulate", "--config", s(&dgp), "--out", s(&sim)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        (sim.join("panel.csv"), est)
    }
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn simulate_defaults_to_full_size_and_is_byte_reproducible() {
    let f = Fixture::new();
    let (a, b) = (f.path("a"), f.path("b"));
    assert_eq!(code(&run(&["simulate", "--out", s(&a), "--seed", "5"])), 0);
    assert_eq!(code(&run(&["simulate", "--out", s(&b), "--seed", "5"])), 0);
    let panel = fs::read(a.join("panel.csv")).unwrap();
    assert_eq!(panel, fs::read(b.join("panel.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("truth.json")).unwrap(),
        fs::read(b.join("truth.json")).unwrap()
    );
    // Header plus five tiers per market.
    assert_eq!(String::from_utf8(panel).unwrap().lines().count(), 1 + 186 * 5);
    let truth = read_json(&a.join("truth.json"));
    assert_eq!(truth["gamma"].as_object().unwrap().len(), 186);
    let record = fs::read_to_string(a.join("run.toml")).unwrap();
    assert!(record.contains("seed = 5"));
    assert!(record.contains("n_markets = 186"));
}

#[test]
fn estimate_recovers_truth_file_and_standard_logit_is_lower() {
    let f = Fixture::new();
    let (panel, est) = f.noiseless();
    let out = f.path("fold");
    let r = run(&["estimate", "--panel", s(&panel), "--config", s(&est), "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let fit = read_json(&out.join("estimate.json"));
    let truth = read_json(&f.path("sim").join("truth.json"));
    let theta = fit["result"]["theta_hat"].as_f64().unwrap();
    assert!((theta - truth["theta"].as_f64().unwrap()).abs() < 1e-2, "theta {theta}");
    for (x, t) in fit["result"]["xi_hat"]["all"]
        .as_array()
        .unwrap()
        .iter()
        .zip(truth["xi"].as_array().unwrap())
    {
        assert!((x.as_f64().unwrap() - t.as_f64().unwrap()).abs() < 1e-2);
    }
    assert!(fs::read_to_string(out.join("xi.csv"))
        .unwrap()
        .starts_with("group,tier,xi\n"));

    let std_out = f.path("std");
    let r = run(&[
        "estimate",
        "--panel",
        s(&panel),
        "--model",
        "standard",
        "--out",
        s(&std_out),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let std_theta = read_json(&std_out.join("estimate.json"))["result"]["theta_hat"]
        .as_f64()
        .unwrap();
    assert!(std_theta < theta, "{std_theta} vs {theta}");
}

#[test]
fn schema_errors_are_input_errors_with_row_numbers() {
    let f = Fixture::new();
    let panel = f.write(
        "bad.csv",
        "market_id,tier,observed_share,real_price,real_margin,income_log_mean,income_log_sd\n\
         m1,1,0.2,3.0,2.0,1.0,0.5\n",
    );
    let r = run(&["estimate", "--panel", s(&panel), "--out", s(&f.path("o"))]);
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("cpi"));

    let panel = f.write(
        "bad2.csv",
        "market_id,tier,observed_share,real_price,real_margin,income_log_mean,income_log_sd,cpi\n\
         m1,1,0.2,3.0,2.0,1.0,0.5,1.0\n\
         m1,2,oops,2.0,1.0,1.0,0.5,1.0\n",
    );
    let r = run(&["estimate", "--panel", s(&panel), "--out", s(&f.path("o"))]);
    assert_eq!(code(&r), 1);
    assert!(
        String::from_utf8_lossy(&r.stderr).contains("row 3"),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );
}

#[test]
fn numerical_failure_exits_two_with_diagnostics() {
    let f = Fixture::new();
    let (panel, _) = f.noiseless();
    let cfg = f.write(
        "narrow.toml",
        "[estimation]\ninterval_draws = 300\nnormal_draws = 500\ntheta_bracket = [0.05, 0.3]\n",
    );
    let out = f.path("fail");
    let r = run(&["estimate", "--panel", s(&panel), "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&r), 2);
    let diag = read_json(&out.join("diagnostics.json"));
    assert_eq!(diag["detail"]["theta_bracket"][1].as_f64(), Some(0.3));
}

#[test]
fn usage_errors_and_missing_artifacts_exit_one() {
    let f = Fixture::new();
    assert_eq!(code(&run(&["estimate", "--bogus"])), 1);
    let (panel, _) = f.noiseless();
    let missing = f.path("nope.json");
    let r = run(&[
        "analyze",
        "--estimate",
        s(&missing),
        "--panel",
        s(&panel),
        "--out",
        s(&f.path("a")),
        "--tax",
        "5",
    ]);
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("estimation artifact"));
}

#[test]
fn analyze_writes_tidy_reports() {
    let f = Fixture::new();
    let (panel, est) = f.noiseless();
    let fit = f.path("fit");
    assert_eq!(
        code(&run(&[
            "estimate",
            "--panel",
            s(&panel),
            "--config",
            s(&est),
            "--out",
            s(&fit)
        ])),
        0
    );
    let out = f.path("an");
    let r = run(&[
        "analyze",
        "--estimate",
        s(&fit.join("estimate.json")),
        "--panel",
        s(&panel),
        "--out",
        s(&out),
        "--elasticities",
        "--tax",
        "0,5,10,15,20",
        "--full-availability",
        "--assortment-dist",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let mut rdr = csv::Reader::from_path(out.join("analysis.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["scenario", "tier", "metric", "value"]);
    let rows: Vec<(String, String, String, f64)> = rdr.deserialize().map(|r| r.unwrap()).collect();
    let pick = |scenario: &str, metric: &str| -> Vec<f64> {
        rows.iter()
            .filter(|r| r.0 == scenario && r.2 == metric)
            .map(|r| r.3)
            .collect()
    };
    assert!(pick("tax_0pct_adjusted", "sales_change_pct").iter().all(|&v| v == 0.0));
    for rate in [5, 10, 15, 20] {
        // Five tiers plus the total.
        assert_eq!(pick(&format!("tax_{rate}pct_adjusted"), "sales_change_pct").len(), 6);
    }
    assert_eq!(pick("elasticity_decomposition", "closure_error"), vec![0.0]);
    // Per-tier profit can rise; the total cannot.
    let total = rows
        .iter()
        .find(|r| r.0 == "full_availability" && r.1 == "total" && r.2 == "wholesale_profit_change_pct")
        .unwrap();
    assert!(total.3 <= 0.0);
    let masses: f64 = rows
        .iter()
        .filter(|r| r.0 == "assortment_distribution" && r.2 == "mass_m01")
        .map(|r| r.3)
        .sum();
    assert!((masses - 1.0).abs() < 1e-12);
}

const SCENARIO: &str = r#"
alpha = 0.6
[[firms]]
id = "a"
products = [
  { id = "a1", margin = 2.0, price = 3.0, gamma = 2.0 },
  { id = "a2", margin = 1.0, price = 1.5, gamma = 1.0 },
  { id = "a3", margin = 0.5, price = 1.0, gamma = 1.2 },
]
[[firms]]
id = "b"
products = [
  { id = "b1", margin = 1.5, price = 2.0, gamma = 1.2 },
  { id = "b2", margin = 0.7, price = 1.2, gamma = 1.4 },
]
"#;

#[test]
fn compete_reports_a_verified_equilibrium_and_sweep() {
    let f = Fixture::new();
    let scen = f.write("scen.toml", SCENARIO);
    let out = f.path("c");
    let r = run(&[
        "compete",
        "--scenario",
        s(&scen),
        "--out",
        s(&out),
        "--random-coef",
        "1,300",
        "--sweep",
        "--dispersions",
        "0,0.5,5",
        "--draws",
        "100",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let eq = read_json(&out.join("equilibrium.json"));
    assert_eq!(eq["verification"]["is_nash"], Value::Bool(true));
    assert_eq!(eq["path"]["monotone"], Value::Bool(true));
    let loss = read_json(&out.join("loss.json"));
    for firm in loss["firms"].as_array().unwrap() {
        let l = firm["loss"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&l));
    }
    let mut rdr = csv::Reader::from_path(out.join("sweep_scenario.csv")).unwrap();
    let first: Vec<String> = rdr
        .records()
        .next()
        .unwrap()
        .unwrap()
        .iter()
        .map(String::from)
        .collect();
    assert_eq!(first[0], "0.0");
    assert_eq!(first[2].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn compete_single_firm_is_the_monopoly_optimum() {
    let f = Fixture::new();
    // Adding the low-margin product lowers profit at this alpha.
    let scen = f.write(
        "mono.toml",
        r#"
alpha = 0.5
[[firms]]
id = "solo"
products = [
  { id = "hi", margin = 3.0, price = 1.0, gamma = 1.0 },
  { id = "lo", margin = 0.1, price = 1.0, gamma = 3.0 },
]
"#,
    );
    let out = f.path("m");
    assert_eq!(code(&run(&["compete", "--scenario", s(&scen), "--out", s(&out)])), 0);
    let eq = read_json(&out.join("equilibrium.json"));
    assert_eq!(eq["path"]["point"]["depths"], serde_json::json!([1]));
}

#[test]
fn compete_rejects_overlapping_ownership() {
    let f = Fixture::new();
    let scen = f.write(
        "dup.toml",
        r#"
alpha = 0.5
[[firms]]
id = "a"
products = [{ id = "x", margin = 1.0, price = 1.0, gamma = 1.0 }]
[[firms]]
id = "b"
products = [{ id = "x", margin = 1.0, price = 1.0, gamma = 1.0 }]
"#,
    );
    let r = run(&["compete", "--scenario", s(&scen), "--out", s(&f.path("d"))]);
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("owned more than once"));
}

#[test]
fn compete_fitted_sweep_has_zero_loss_without_dispersion() {
    let f = Fixture::new();
    let (panel, est) = f.noiseless();
    let fit = f.path("fit");
    assert_eq!(
        code(&run(&[
            "estimate",
            "--panel",
            s(&panel),
            "--config",
            s(&est),
            "--out",
            s(&fit)
        ])),
        0
    );
    let out = f.path("sw");
    let r = run(&[
        "compete",
        "--fitted",
        s(&fit.join("estimate.json")),
        "--panel",
        s(&panel),
        "--out",
        s(&out),
        "--dispersions",
        "0,1",
        "--draws",
        "50",
        "--per-market",
        "1",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let mut rdr = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][2].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn margins_reproduce_published_values() {
    let f = Fixture::new();
    let mut text = String::new();
    for (label, p_w, a, t_s) in [
        ("I", 21.8, 0.315, 0.0),
        ("V", 2.3, 0.15, 0.0),
        ("I-2015", 21.8, 0.315, 0.1),
    ] {
        text.push_str(&format!(
            "[[rows]]\nlabel = \"{label}\"\nwholesale_price = {p_w}\nallocation_margin_rate = {a}\n\
             retail_margin_rate = 0.15\nvat_rate = 0.17\nadvalorem_rate = 0.05\nspecific_tax = {t_s}\n"
        ));
    }
    let cfg = f.write("m.toml", &text);
    let out = f.path("mo");
    assert_eq!(code(&run(&["margins", "--config", s(&cfg), "--out", s(&out)])), 0);
    let mut rdr = csv::Reader::from_path(out.join("margins.csv")).unwrap();
    let got: Vec<f64> = rdr.records().map(|r| r.unwrap()[1].parse().unwrap()).collect();
    for (g, want) in got.iter().zip([3.75, 0.17, 3.65]) {
        assert!((g - want).abs() <= 0.01, "{g} vs {want}");
    }
}

#[test]
fn fit_income_recovers_lognormal_parameters() {
    let f = Fixture::new();
    let q = f.write(
        "q.csv",
        "market_id,q1,q2,q3,q4,q5\na,1.0,2.0,3.0,4.5,8.0\nb,2.0,4.0,6.0,9.0,16.0\n",
    );
    let out = f.path("inc");
    assert_eq!(code(&run(&["fit-income", "--quintiles", s(&q), "--out", s(&out)])), 0);
    let mut rdr = csv::Reader::from_path(out.join("income_fit.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    let mu = |i: usize| rows[i][1].parse::<f64>().unwrap();
    // Doubling every quintile shifts the log mean by ln 2.
    assert!((mu(1) - mu(0) - std::f64::consts::LN_2).abs() < 1e-6);
}

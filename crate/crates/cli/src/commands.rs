use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use foldmenu::analysis::{self, assortment_tidy_rows, decompose_elasticities, write_tidy_csv, TidyRow};
use foldmenu::competition::{foldable_loss_random_coef, PointOfSale};
use foldmenu::estimator::estimate_with;
use foldmenu::income::read_quintiles;
use foldmenu::{
    bootstrap_se, find_equilibrium, fit_lognormal_from_quintiles, is_nash, points_of_sale, random_coef_sweep,
    wholesale_margin, CompetitionScenario, DgpAssortment, EstimationConfig, EstimationResult, FittedModel, Model,
    Panel, RandomCoefSpec, ResponseMode, SimulationDraws, SweepRow,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{self, EstimateConfig, MarginsConfig, SimulateConfig};
use crate::{
    AnalyzeArgs, AssortmentArg, CompeteArgs, EstimateArgs, FitIncomeArgs, MarginsArgs, ModelArg, SimulateArgs,
};

pub const DIAGNOSTICS: &str = "diagnostics.json";

pub enum Outcome {
    Input,
    Numerical,
}

/// Exit class of an error; numerical failures also leave a diagnostics file in `out`.
pub fn classify(err: &anyhow::Error, out: &Path) -> Outcome {
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<foldmenu::Error>()) else {
        return Outcome::Input;
    };
    if !e.is_numerical() {
        return Outcome::Input;
    }
    let detail = match e {
        foldmenu::Error::InversionFailed { theta, markets } => json!({ "theta": theta, "markets": markets }),
        foldmenu::Error::BracketInfeasible { lo, hi } => json!({ "theta_bracket": [lo, hi] }),
        _ => json!({}),
    };
    let body = json!({ "error": format!("{err:#}"), "detail": detail });
    let written = fs::create_dir_all(out).and_then(|_| {
        fs::write(
            out.join(DIAGNOSTICS),
            serde_json::to_string_pretty(&body).unwrap_or_default(),
        )
    });
    if let Err(w) = written {
        eprintln!("warning: could not write {}: {w}", out.join(DIAGNOSTICS).display());
    }
    Outcome::Numerical
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(std::io::BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

fn read_panel(path: &Path) -> Result<Panel> {
    let file = File::open(path).with_context(|| format!("opening panel {}", path.display()))?;
    Panel::read_csv(file).with_context(|| format!("reading panel {}", path.display()))
}

fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Truth {
    theta: f64,
    xi: Vec<f64>,
    gamma: BTreeMap<String, Vec<f64>>,
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut cfg: SimulateConfig = config::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.dgp.seed = seed;
    }
    if let Some(n) = args.markets {
        cfg.dgp.n_markets = n;
    }
    if let Some(a) = args.assortment {
        cfg.dgp.assortment = match a {
            AssortmentArg::Foldable => DgpAssortment::Foldable,
            AssortmentArg::Full => DgpAssortment::FullAvailability,
        };
    }
    let synthetic = foldmenu::generate_panel(&cfg.dgp)?;
    prepare_out(&args.out)?;
    let panel_path = args.out.join("panel.csv");
    let file = File::create(&panel_path).with_context(|| format!("creating {}", panel_path.display()))?;
    synthetic.panel.write_csv(BufWriter::new(file))?;
    let truth = Truth {
        theta: cfg.dgp.theta_true,
        xi: cfg.dgp.xi.clone(),
        gamma: synthetic
            .panel
            .markets()
            .iter()
            .zip(&synthetic.true_gamma)
            .map(|(m, g)| (m.id.clone(), g.clone()))
            .collect(),
    };
    write_json(&args.out.join("truth.json"), &truth)?;
    let inputs: Vec<&Path> = args.config.iter().map(|p| p.as_path()).collect();
    config::write_record(&args.out, "simulate", Some(cfg.dgp.seed), &inputs, &cfg)?;
    println!("wrote {} markets to {}", synthetic.panel.len(), panel_path.display());
    Ok(())
}

/// What `estimate` leaves behind for `analyze` and `compete`.
#[derive(Serialize, Deserialize)]
pub struct EstimateArtifact {
    pub model: Model,
    pub config: EstimationConfig,
    pub result: EstimationResult,
}

pub fn estimate(args: &EstimateArgs) -> Result<()> {
    let file_cfg: EstimateConfig = config::load(args.config.as_deref())?;
    let model = match args.model {
        ModelArg::Foldable => Model::Foldable,
        ModelArg::Standard => Model::StandardLogit,
    };
    let mut cfg = file_cfg.estimation.unwrap_or_else(|| match model {
        Model::Foldable => EstimationConfig::default(),
        Model::StandardLogit => EstimationConfig::standard_logit_default(),
    });
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(reps) = args.bootstrap {
        cfg.bootstrap_reps = reps;
    }
    let panel = read_panel(&args.panel)?;
    let mut result = estimate_with(&panel, &cfg, model)?;
    if cfg.bootstrap_reps > 0 {
        result.bootstrap = Some(bootstrap_se(&panel, &cfg, model)?);
    }
    prepare_out(&args.out)?;
    let mut inputs = vec![args.panel.as_path()];
    inputs.extend(args.config.as_deref());
    config::write_record(
        &args.out,
        "estimate",
        Some(cfg.seed),
        &inputs,
        &EstimateRecord {
            model,
            estimation: &cfg,
        },
    )?;
    let xi_rows: Vec<XiRow> = result
        .xi_hat
        .iter()
        .flat_map(|(group, xi)| {
            xi.iter()
                .enumerate()
                .map(move |(k, &xi)| XiRow { group, tier: k + 1, xi })
        })
        .collect();
    write_csv_rows(&args.out.join("xi.csv"), &xi_rows)?;
    println!(
        "theta_hat = {:.6} (objective {:.3e}{})",
        result.theta_hat,
        result.objective_value,
        if result.at_bracket_edge {
            ", at bracket edge"
        } else {
            ""
        }
    );
    if let Some(b) = &result.bootstrap {
        println!("bootstrap se = {:.6} ({} failed replications)", b.se, b.failed_reps);
    }
    write_json(
        &args.out.join("estimate.json"),
        &EstimateArtifact {
            model,
            config: cfg,
            result,
        },
    )
}

#[derive(Serialize)]
struct XiRow<'a> {
    group: &'a str,
    tier: usize,
    xi: f64,
}

#[derive(Serialize)]
struct EstimateRecord<'a> {
    model: Model,
    estimation: &'a EstimationConfig,
}

#[derive(Serialize)]
struct AnalyzeRecord {
    estimate: String,
    elasticities: bool,
    tax_pct: Vec<f64>,
    full_availability: bool,
    assortment_dist: bool,
    uniform_price_pct: Option<f64>,
}

pub fn analyze(args: &AnalyzeArgs) -> Result<()> {
    if !args.elasticities
        && args.tax.is_empty()
        && !args.full_availability
        && !args.assortment_dist
        && args.uniform_price.is_none()
    {
        bail!("nothing to do: pass at least one of --elasticities, --tax, --full-availability, --assortment-dist, --uniform-price");
    }
    let artifact: EstimateArtifact = read_json(&args.estimate).context("loading estimation artifact")?;
    let panel = read_panel(&args.panel)?;
    let draws = SimulationDraws::from_config(&artifact.config)?;
    let fitted = FittedModel::new(&artifact.result, &panel, draws)?;
    let mode = match artifact.model {
        Model::Foldable => ResponseMode::Adjusted,
        Model::StandardLogit => ResponseMode::StandardLogit,
    };
    let mut rows: Vec<TidyRow> = Vec::new();
    if args.elasticities {
        match artifact.model {
            Model::Foldable => rows.extend(decompose_elasticities(&fitted)?.tidy_rows()),
            Model::StandardLogit => rows.extend(analysis::elasticities(&fitted, mode)?.tidy_rows()),
        }
    }
    if let Some(pct) = args.uniform_price {
        rows.extend(analysis::uniform_price_change(&fitted, pct, mode)?.tidy_rows());
    }
    for &pct in &args.tax {
        let report = analysis::tax_counterfactual(&fitted, pct / 100.0, mode)?;
        if let Some(note) = &report.notice {
            eprintln!("note: {note}");
        }
        rows.extend(report.tidy_rows());
    }
    if args.full_availability {
        if artifact.model != Model::Foldable {
            bail!("--full-availability needs a foldable estimate");
        }
        rows.extend(analysis::full_availability(&fitted)?.tidy_rows());
    }
    if args.assortment_dist {
        if artifact.model != Model::Foldable {
            bail!("--assortment-dist needs a foldable estimate");
        }
        rows.extend(assortment_tidy_rows(
            &panel,
            &analysis::assortment_distribution(&fitted)?,
        ));
    }
    prepare_out(&args.out)?;
    let path = args.out.join("analysis.csv");
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_tidy_csv(&rows, BufWriter::new(file))?;
    let record = AnalyzeRecord {
        estimate: args.estimate.display().to_string(),
        elasticities: args.elasticities,
        tax_pct: args.tax.clone(),
        full_availability: args.full_availability,
        assortment_dist: args.assortment_dist,
        uniform_price_pct: args.uniform_price,
    };
    config::write_record(
        &args.out,
        "analyze",
        Some(artifact.config.seed),
        &[&args.estimate, &args.panel],
        &record,
    )?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

#[derive(Serialize)]
struct CompeteRecord<'a> {
    scenario: Option<&'a CompetitionScenario>,
    random_coef: Option<RandomCoefSpec>,
    sweep_dispersions: &'a [f64],
    sweep_draws: &'a [usize],
    per_market: usize,
}

pub fn compete(args: &CompeteArgs) -> Result<()> {
    if args.scenario.is_none() && args.fitted.is_none() {
        bail!("pass --scenario, --fitted, or both");
    }
    let seed = args.seed.unwrap_or(1);
    let scenario: Option<CompetitionScenario> = args.scenario.as_deref().map(config::load_required).transpose()?;
    let mut scenario = scenario;
    let rc = match &args.random_coef {
        None => None,
        Some(v) => {
            let &[a, n] = v.as_slice() else {
                bail!("--random-coef takes two values, a,n");
            };
            if n.is_nan() || n < 1.0 || n.fract() != 0.0 {
                bail!("--random-coef draw count must be a positive integer, got {n}");
            }
            Some(RandomCoefSpec {
                n_draws: n as usize,
                taste_dispersion: a,
                seed,
            })
        }
    };
    if let (Some(s), Some(spec)) = (scenario.as_mut(), rc) {
        s.random_coef = Some(spec);
    }
    prepare_out(&args.out)?;
    if let Some(s) = &scenario {
        let game = s.game()?;
        let path = find_equilibrium(&game);
        let nash = is_nash(&game, &path.point, true)?;
        println!(
            "equilibrium {} ({} rounds, nash: {})",
            path.point,
            path.trajectory.len() - 1,
            nash.is_nash
        );
        let firms: Vec<_> = game
            .firms()
            .iter()
            .zip(&path.point.depths)
            .zip(&path.profits)
            .map(|((f, d), p)| json!({ "firm_id": f.firm_id, "depth": d, "profit": p }))
            .collect();
        write_json(
            &args.out.join("equilibrium.json"),
            &json!({ "firms": firms, "path": path, "verification": nash }),
        )?;
        if let Some(spec) = s.random_coef {
            let report = foldable_loss_random_coef(s.firm_profiles()?, s.alpha, &spec)?;
            write_json(&args.out.join("loss.json"), &report)?;
        }
        if args.sweep {
            let point = PointOfSale {
                alpha: s.alpha,
                firms: s.firm_profiles()?,
            };
            let rows = random_coef_sweep(&[point], &args.dispersions, &args.draws, seed)?;
            write_sweep(&args.out.join("sweep_scenario.csv"), &rows)?;
        }
    }
    if let Some(fitted) = &args.fitted {
        let panel_path = args.panel.as_ref().context("--fitted needs --panel")?;
        let artifact: EstimateArtifact = read_json(fitted).context("loading estimation artifact")?;
        let panel = read_panel(panel_path)?;
        let points = points_of_sale(
            &panel,
            artifact.result.theta_hat,
            &artifact.result.gamma_hat,
            args.per_market,
            seed,
        )?;
        let rows = random_coef_sweep(&points, &args.dispersions, &args.draws, seed)?;
        write_sweep(&args.out.join("sweep.csv"), &rows)?;
        for r in &rows {
            println!(
                "a = {:<4} n = {:<5} loss = {:.3e}",
                r.taste_dispersion, r.n_draws, r.loss
            );
        }
    }
    let record = CompeteRecord {
        scenario: scenario.as_ref(),
        random_coef: rc,
        sweep_dispersions: &args.dispersions,
        sweep_draws: &args.draws,
        per_market: args.per_market,
    };
    let mut inputs: Vec<&Path> = Vec::new();
    inputs.extend(args.scenario.as_deref());
    inputs.extend(args.fitted.as_deref());
    inputs.extend(args.panel.as_deref());
    config::write_record(&args.out, "compete", Some(seed), &inputs, &record)
}

fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_csv_rows(path, rows)
}

#[derive(Serialize)]
struct IncomeRow<'a> {
    market_id: &'a str,
    income_log_mean: f64,
    income_log_sd: f64,
    objective: f64,
    degenerate: bool,
}

pub fn fit_income(args: &FitIncomeArgs) -> Result<()> {
    let file = File::open(&args.quintiles).with_context(|| format!("opening {}", args.quintiles.display()))?;
    let rows = read_quintiles(file)?;
    let fits = rows
        .iter()
        .map(|r| {
            fit_lognormal_from_quintiles(&r.means(), args.draws, args.seed)
                .with_context(|| format!("market {}", r.market_id))
        })
        .collect::<Result<Vec<_>>>()?;
    prepare_out(&args.out)?;
    let out: Vec<IncomeRow> = rows
        .iter()
        .zip(&fits)
        .map(|(r, f)| IncomeRow {
            market_id: &r.market_id,
            income_log_mean: f.mu,
            income_log_sd: f.sigma,
            objective: f.objective,
            degenerate: f.degenerate,
        })
        .collect();
    for r in out.iter().filter(|r| r.degenerate) {
        eprintln!("warning: market {} has a degenerate income fit", r.market_id);
    }
    write_csv_rows(&args.out.join("income_fit.csv"), &out)?;
    #[derive(Serialize)]
    struct Record {
        draws: usize,
    }
    config::write_record(
        &args.out,
        "fit-income",
        Some(args.seed),
        &[&args.quintiles],
        &Record { draws: args.draws },
    )
}

#[derive(Serialize)]
struct MarginOut<'a> {
    label: &'a str,
    wholesale_margin: f64,
    allocation_price: f64,
    retail_price: f64,
}

pub fn margins(args: &MarginsArgs) -> Result<()> {
    let cfg: MarginsConfig = config::load_required(&args.config)?;
    let out = cfg
        .rows
        .iter()
        .map(|r| {
            r.tax.validate().with_context(|| format!("row {}", r.label))?;
            Ok(MarginOut {
                label: &r.label,
                wholesale_margin: wholesale_margin(&r.tax),
                allocation_price: r.tax.allocation_price(),
                retail_price: r.tax.retail_price(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    prepare_out(&args.out)?;
    write_csv_rows(&args.out.join("margins.csv"), &out)?;
    config::write_record(&args.out, "margins", None, &[&args.config], &cfg)
}

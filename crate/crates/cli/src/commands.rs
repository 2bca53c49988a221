use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;
use udn_core::datasets::load_table;
use udn_core::experiment::{mean_sd, run_regression, run_spiral, RegressionExperiment, SpiralExperiment};
use udn_core::poisson::{verify_support_bounds, SupportBounds};
use udn_core::DepthMode;

use crate::artifacts::{
    collect, lambda_trajectory_csv, write, write_json, RegressArtifact, RegressConfig, SpiralArtifact, ARTIFACT_SCHEMA_VERSION,
};
use crate::config::{config_hash, model_label, parse_model, parse_sweep, read_document, resolve};
use crate::error::CliError;

pub struct TheoremArgs {
    pub k_max: usize,
    pub out: PathBuf,
    pub bounds: SupportBounds,
}

pub fn verify_theorem1(args: &TheoremArgs) -> Result<(), CliError> {
    if args.k_max == 0 {
        return Err(CliError::Config("--k-max must be at least 1".into()));
    }
    let report = verify_support_bounds(args.k_max, args.bounds);
    write(&args.out.join("margins.csv"), report.to_csv())?;
    let min_margin = report.rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    write_json(
        &args.out.join("theorem1.json"),
        &json!({
            "schema_version": ARTIFACT_SCHEMA_VERSION,
            "kind": "verify-theorem1",
            "config": {"k_max": args.k_max, "delta": 0.95, "slope": args.bounds.slope, "intercept": args.bounds.intercept},
            "passed": report.passed(),
            "violations": report.violations,
            "min_margin": min_margin,
        }),
    )?;
    println!(
        "checked k = 1..={}: min margin {min_margin:.3}, {} violation(s); wrote {}",
        args.k_max,
        report.violations.len(),
        args.out.join("margins.csv").display()
    );
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Violation(format!("support bounds fail at k = {:?}", report.violations)))
    }
}

pub struct SpiralArgs {
    pub config: Option<PathBuf>,
    pub omega: Option<f64>,
    pub sweep: Option<String>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub seeds: Option<usize>,
    pub models: Vec<String>,
    pub quick: bool,
    pub lambda_init: Option<f64>,
    pub out: PathBuf,
    pub force: bool,
}

pub fn spiral(args: &SpiralArgs) -> Result<(), CliError> {
    let defaults = SpiralExperiment::new(0.0, 0, DepthMode::Variational);
    let file = args.config.as_deref().map(read_document).transpose()?;
    let mut base: SpiralExperiment = resolve(&defaults, file)?;
    let mut seed_count = 1;
    if args.quick {
        base.train.epochs = 1000;
        seed_count = 3;
    }
    if let Some(e) = args.epochs {
        base.train.epochs = e;
    }
    if let Some(l) = args.lambda_init {
        base.train.lambda_init = l;
    }
    if let Some(s) = args.seed {
        base.train.seed = s;
    }
    if let Some(n) = args.seeds {
        seed_count = n;
    }
    if seed_count == 0 {
        return Err(CliError::Config("--seeds must be at least 1".into()));
    }
    let omegas = match (&args.sweep, args.omega) {
        (Some(_), Some(_)) => return Err(CliError::Config("give either --omega or --sweep".into())),
        (Some(s), None) => parse_sweep(s)?,
        (None, Some(w)) => vec![w],
        (None, None) => vec![base.omega],
    };
    if let Some(w) = omegas.iter().find(|w| !(**w >= 0.0)) {
        return Err(CliError::Config(format!("omega must be non-negative, got {w}")));
    }
    let models = if args.models.is_empty() {
        vec![base.train.mode]
    } else {
        args.models.iter().map(|m| parse_model(m)).collect::<Result<Vec<_>, _>>()?
    };

    let mut runs = Vec::new();
    for &mode in &models {
        for &omega in &omegas {
            for s in 0..seed_count as u64 {
                let mut exp = base.clone();
                exp.omega = omega;
                exp.train.mode = mode;
                exp.train.seed = base.train.seed + s;
                exp.train.validate()?;
                runs.push(exp);
            }
        }
    }
    for exp in &runs {
        run_spiral_dir(exp, &args.out, args.force)?;
    }
    aggregate(&args.out)
}

fn run_spiral_dir(exp: &SpiralExperiment, out: &Path, force: bool) -> Result<(), CliError> {
    let dir = out.join(format!("spiral-{}", config_hash(exp)));
    let summary_path = dir.join("summary.json");
    let model = model_label(exp.train.mode);
    if !force {
        if let Ok(text) = std::fs::read_to_string(&summary_path) {
            if let Ok(done) = serde_json::from_str::<SpiralArtifact>(&text) {
                if done.config == *exp {
                    println!("cached omega={} seed={} model={model} dir={}", exp.omega, exp.train.seed, dir.display());
                    return Ok(());
                }
            }
        }
    }
    let run = run_spiral(exp)?;
    write(&dir.join("runrecord.ndjson"), run.record.to_ndjson()?)?;
    write(
        &dir.join("plotdata").join("lambda_trajectory.csv"),
        lambda_trajectory_csv(&run.record, exp.train.delta)?,
    )?;
    run.selected.save(&dir.join("checkpoint.json"))?;
    let artifact = SpiralArtifact {
        schema_version: ARTIFACT_SCHEMA_VERSION,
        kind: "spiral".into(),
        model: model.clone(),
        config: exp.clone(),
        result: run.summary,
    };
    write_json(&summary_path, &artifact)?;
    let r = &artifact.result;
    println!(
        "omega={} seed={} model={model} best_epoch={} test_accuracy={:.4} posterior_mean_depth={:.3} dir={}",
        exp.omega,
        exp.train.seed,
        r.best_epoch,
        r.test_metrics.accuracy.unwrap_or(f64::NAN),
        r.posterior_mean_depth,
        dir.display()
    );
    Ok(())
}

/// Folds every spiral run below `root` into the plot-data tables.
pub fn aggregate(root: &Path) -> Result<(), CliError> {
    let runs: Vec<(PathBuf, SpiralArtifact)> = collect(root, "spiral")?;
    if runs.is_empty() {
        return Err(CliError::Config(format!("no spiral runs found in {}", root.display())));
    }
    // (model, ω bits) → values; ω keyed by its bit pattern to keep BTreeMap ordering total.
    let mut by_omega: BTreeMap<(String, u64), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut by_seed: BTreeMap<String, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    let mut trajectories = String::from("run,model,omega,seed,lambda_init,epoch,lambda,m_q,posterior_mean_depth\n");
    for (dir, a) in &runs {
        let acc = a.result.test_metrics.accuracy.unwrap_or(f64::NAN);
        let cell = by_omega.entry((a.model.clone(), a.config.omega.to_bits())).or_default();
        cell.0.push(acc);
        cell.1.push(a.result.posterior_mean_depth);
        by_seed.entry(a.model.clone()).or_default().entry(a.config.train.seed).or_default().push(acc);
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if let Ok(text) = std::fs::read_to_string(dir.join("plotdata").join("lambda_trajectory.csv")) {
            for line in text.lines().skip(1) {
                let _ = writeln!(
                    trajectories,
                    "{name},{},{},{},{},{line}",
                    a.model, a.config.omega, a.config.train.seed, a.config.train.lambda_init
                );
            }
        }
    }

    let mut accuracy = String::from("model,omega,runs,accuracy_mean,accuracy_sd\n");
    let mut depth = String::from("model,omega,runs,depth_mean,depth_sd\n");
    let mut cells: Vec<_> = by_omega.iter().collect();
    cells.sort_by(|a, b| a.0 .0.cmp(&b.0 .0).then(f64::from_bits(a.0 .1).total_cmp(&f64::from_bits(b.0 .1))));
    for ((model, bits), (accs, depths)) in cells {
        let omega = f64::from_bits(*bits);
        let (am, asd) = mean_sd(accs);
        let (dm, dsd) = mean_sd(depths);
        let _ = writeln!(accuracy, "{model},{omega},{},{am},{asd}", accs.len());
        let _ = writeln!(depth, "{model},{omega},{},{dm},{dsd}", depths.len());
    }

    // Average over ω within a seed, then mean ± sd across seeds.
    let mut table = String::from("model,seeds,accuracy_mean_pct,accuracy_sd_pct\n");
    println!("{:<10} {:>6}  accuracy (%)", "model", "seeds");
    for (model, seeds) in &by_seed {
        let per_seed: Vec<f64> = seeds.values().map(|v| 100.0 * mean_sd(v).0).collect();
        let (m, sd) = mean_sd(&per_seed);
        let _ = writeln!(table, "{model},{},{m:.2},{sd:.2}", per_seed.len());
        println!("{model:<10} {:>6}  {m:.1} ± {sd:.1}", per_seed.len());
    }

    let plot = root.join("plotdata");
    write(&plot.join("accuracy_vs_omega.csv"), accuracy)?;
    write(&plot.join("depth_vs_omega.csv"), depth)?;
    write(&plot.join("lambda_trajectory.csv"), trajectories)?;
    write(&plot.join("table1.csv"), table)?;
    Ok(())
}

pub struct RegressArgs {
    pub config: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub target: Option<String>,
    pub model: Option<String>,
    pub repetitions: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

pub fn regress(args: &RegressArgs) -> Result<(), CliError> {
    let defaults = RegressConfig {
        data: PathBuf::new(),
        target: String::new(),
        experiment: RegressionExperiment::default(),
    };
    let file = args.config.as_deref().map(read_document).transpose()?;
    let mut config: RegressConfig = resolve(&defaults, file)?;
    if let Some(d) = &args.data {
        config.data = d.clone();
    }
    if let Some(t) = &args.target {
        config.target = t.clone();
    }
    if let Some(m) = &args.model {
        config.experiment.train.mode = parse_model(m)?;
    }
    if let Some(r) = args.repetitions {
        config.experiment.repetitions = r;
    }
    if let Some(e) = args.epochs {
        config.experiment.train.epochs = e;
    }
    if let Some(s) = args.seed {
        config.experiment.train.seed = s;
    }
    if config.data.as_os_str().is_empty() || config.target.is_empty() {
        return Err(CliError::Config("regress needs --data and --target".into()));
    }
    config.experiment.train.validate()?;

    let data = load_table(&config.data, &config.target)?;
    let run = run_regression(&data, &config.experiment)?;
    let model = model_label(config.experiment.train.mode);
    let dir = args.out.join(format!("regress-{}", config_hash(&config)));

    let mut ndjson = String::new();
    for (rep, record) in run.records.iter().enumerate() {
        for e in &record.entries {
            let mut v = serde_json::to_value(e).map_err(|e| CliError::Config(e.to_string()))?;
            v["rep"] = json!(rep);
            ndjson.push_str(&v.to_string());
            ndjson.push('\n');
        }
    }
    write(&dir.join("runrecord.ndjson"), ndjson)?;
    let s = &run.summary;
    let mut reps = String::from("rep,rmse,posterior_mean_depth,best_epoch\n");
    for i in 0..s.rmse.len() {
        let _ = writeln!(reps, "{i},{},{},{}", s.rmse[i], s.posterior_mean_depth[i], s.best_epochs[i]);
    }
    write(&dir.join("plotdata").join("regression_reps.csv"), reps)?;
    let artifact = RegressArtifact {
        schema_version: ARTIFACT_SCHEMA_VERSION,
        kind: "regress".into(),
        model: model.clone(),
        config,
        result: run.summary,
    };
    write_json(&dir.join("summary.json"), &artifact)?;
    let s = &artifact.result;
    println!(
        "model={model} reps={} rmse={:.4} ± {:.4} posterior_mean_depth={:.3} dir={}",
        s.rmse.len(),
        s.rmse_mean,
        s.rmse_sd,
        s.posterior_mean_depth_mean,
        dir.display()
    );
    Ok(())
}

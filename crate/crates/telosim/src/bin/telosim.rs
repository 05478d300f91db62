//! Command line front end: population simulation, growth estimation, the
//! auxiliary particle, semigroup cross-validation, renewal mean curves,
//! assumption certificates, and stationary profile estimation.
//!
//! Exit codes: 0 on success, 2 when a requested certificate fails, 1 on
//! any other error.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use telosim::config::{Command, RunConfig};
use telosim::model::{ModelSpec, TelomereVector};
use telosim::output::{float, RunDir};
use telosim::particle::{compute_lambda_psi, simulate_particle, cross_validate_semigroup, PsiWeight};
use telosim::population::{estimate_growth_rate, estimate_m_t, simulate_tree_aged, SimulationResult};
use telosim::profile::{
    check_product_form, marginal_factorization_report, snapshot_population, ProfileHistogram,
    FACTORIZATION_MAX_DIM,
};
use telosim::renewal::{bh_mean, solve_alpha, LifetimeLaw};
use telosim::rng::StreamKey;
use telosim::verify::{
    check_corollaries, check_exit_contraction, default_contraction_grid, default_expansion_grid,
    lyapunov_build, verify_renewal_expansion,
};

#[derive(Parser)]
#[command(name = "telosim", version, about = "Telomere-structured branching processes")]
struct Cli {
    /// Run configuration (TOML)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output root; results go to one subdirectory per run
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Override the configured random seed
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Override the configured worker thread count (0 = all cores)
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Clone, Copy, Subcommand)]
enum CliCommand {
    /// Simulate one population tree and write its events and final state
    Simulate,
    /// Estimate the exponential growth rate from replicate trees
    Estimate,
    /// Run the weighted single-particle construction
    AuxParticle,
    /// Compare particle and population estimates of the same expectations
    CrossValidate,
    /// Solve the mean renewal equation on a time grid
    BellmanHarris,
    /// Check the expansion and contraction certificates for the model
    VerifyAssumptions,
    /// Estimate the stationary length and age profile from snapshots
    EstimateProfile,
}

impl CliCommand {
    fn as_command(self) -> Command {
        match self {
            CliCommand::Simulate => Command::Simulate,
            CliCommand::Estimate => Command::Estimate,
            CliCommand::AuxParticle => Command::AuxParticle,
            CliCommand::CrossValidate => Command::CrossValidate,
            CliCommand::BellmanHarris => Command::BellmanHarris,
            CliCommand::VerifyAssumptions => Command::VerifyAssumptions,
            CliCommand::EstimateProfile => Command::EstimateProfile,
        }
    }
}

enum Outcome {
    Pass,
    CertificateFailed(String),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let failed = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if failed { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::CertificateFailed(reason)) => {
            eprintln!("FAIL: {reason}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| anyhow!("a run configuration is required; pass --config PATH"))?;
    let mut cfg = RunConfig::parse_path(path)?;
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.run.threads = threads;
    }
    let command = cli.command.as_command();
    if let Some(declared) = cfg.run.command {
        if declared != command {
            bail!(
                "configuration declares command \"{}\" but \"{}\" was invoked",
                declared.name(),
                command.name()
            );
        }
    }
    if cfg.run.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.threads)
            .build_global()
            .context("thread pool")?;
    }

    let dir = RunDir::create(&cli.out, command, &cfg)?;
    let key = StreamKey::root(cfg.run.seed);
    let outcome = match command {
        Command::VerifyAssumptions => cmd_verify(&cfg, &dir, key)?,
        _ => {
            let model = cfg.build_model().context("model construction failed")?;
            match command {
                Command::Simulate => cmd_simulate(&cfg, &model, &dir, key)?,
                Command::Estimate => cmd_estimate(&cfg, &model, &dir, key)?,
                Command::AuxParticle => cmd_aux_particle(&cfg, &model, &dir, key)?,
                Command::CrossValidate => cmd_cross_validate(&cfg, &model, &dir, key)?,
                Command::BellmanHarris => cmd_bellman_harris(&cfg, &model, &dir)?,
                Command::EstimateProfile => cmd_estimate_profile(&cfg, &model, &dir, key)?,
                Command::VerifyAssumptions => unreachable!(),
            }
        }
    };
    println!("results in {}", dir.path().display());
    Ok(outcome)
}

fn initial_vector(cfg: &RunConfig, model: &ModelSpec) -> Result<TelomereVector> {
    TelomereVector::constant(model.k(), cfg.run.init_x)
        .with_context(|| format!("initial state x = {}", cfg.run.init_x))
}

fn coord_headers(prefix: &str, dim: usize) -> Vec<String> {
    (1..=dim).map(|i| format!("{prefix}{i}")).collect()
}

fn as_str_refs(owned: &[String]) -> Vec<&str> {
    owned.iter().map(String::as_str).collect()
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

// ── simulate ──

fn cmd_simulate(cfg: &RunConfig, model: &ModelSpec, dir: &RunDir, key: StreamKey) -> Result<Outcome> {
    let init = initial_vector(cfg, model)?;
    let result = simulate_tree_aged(
        model,
        &init,
        cfg.run.init_age,
        cfg.run.horizon,
        cfg.run.cap,
        key,
    )?;
    let dim = model.dim();

    let mut header = vec!["label".to_string(), "birth_time".to_string()];
    header.extend(coord_headers("x_", dim));
    let mut alive = dir.csv("alive.csv", &as_str_refs(&header))?;
    for cell in &result.alive {
        let mut row = vec![cell.label.clone(), float(cell.birth_time)];
        row.extend(cell.x.as_slice().iter().map(|&c| float(c)));
        alive.row(&row)?;
    }
    alive.finish()?;

    let mut header = vec!["time".to_string(), "mother".to_string()];
    header.extend(coord_headers("a_", dim));
    header.extend(coord_headers("b_", dim));
    let mut events = dir.csv("events.csv", &as_str_refs(&header))?;
    for e in &result.events {
        let mut row = vec![float(e.time), e.mother.clone()];
        row.extend(e.daughter_a.iter().map(|&c| float(c)));
        row.extend(e.daughter_b.iter().map(|&c| float(c)));
        events.row(&row)?;
    }
    events.finish()?;

    if !cfg.run.t_grid.is_empty() {
        let counts = result.alive_count_series(&cfg.run.t_grid);
        let mut csv = dir.csv("counts.csv", &["t", "alive"])?;
        for (&t, &n) in cfg.run.t_grid.iter().zip(&counts) {
            csv.row(&[float(t), n.to_string()])?;
        }
        csv.finish()?;
    }

    dir.write_json(
        "summary.json",
        &json!({
            "horizon": cfg.run.horizon,
            "stop_time": result.stop_time,
            "capped": result.capped,
            "alive": result.alive.len(),
            "senescent": result.senescent,
            "divisions": result.divisions(),
            "total": result.total,
        }),
    )?;
    println!(
        "simulated one tree to t = {}: {} alive, {} senescent, {} divisions{}",
        cfg.run.horizon,
        result.alive.len(),
        result.senescent,
        result.divisions(),
        if result.capped { " (hit the cell cap)" } else { "" },
    );
    Ok(Outcome::Pass)
}

// ── estimate ──

fn cmd_estimate(cfg: &RunConfig, model: &ModelSpec, dir: &RunDir, key: StreamKey) -> Result<Outcome> {
    let init = initial_vector(cfg, model)?;
    let trees: Vec<SimulationResult> = (0..cfg.run.replicates)
        .into_par_iter()
        .map(|i| {
            simulate_tree_aged(
                model,
                &init,
                cfg.run.init_age,
                cfg.run.horizon,
                cfg.run.cap,
                key.child(i as u64),
            )
        })
        .collect::<Result<_, _>>()?;
    let capped = trees.iter().filter(|t| t.capped).count();
    if capped > 0 {
        bail!(
            "{capped} of {} replicates hit the cell cap {}; raise run.cap or shorten run.horizon",
            trees.len(),
            cfg.run.cap
        );
    }

    let grid = if cfg.run.t_grid.is_empty() {
        linspace(cfg.run.t_burn, cfg.run.horizon, 17)
    } else {
        cfg.run.t_grid.clone()
    };
    let series: Vec<Vec<usize>> = trees.iter().map(|t| t.alive_count_series(&grid)).collect();
    let mut means = Vec::with_capacity(grid.len());
    let mut csv = dir.csv("growth_curve.csv", &["t", "mean_alive", "se"])?;
    for i in 0..grid.len() {
        let at_t: Vec<f64> = series.iter().map(|s| s[i] as f64).collect();
        let (mean, se) = mean_se(&at_t);
        means.push(mean);
        csv.row(&[float(grid[i]), float(mean), float(se)])?;
    }
    csv.finish()?;

    let growth = estimate_growth_rate(&grid, &means, 0.0)?;
    let m_t = estimate_m_t(&trees)?;
    let mut csv = dir.csv(
        "estimate.csv",
        &["lambda_hat", "lambda_se", "log_intercept", "fit_points", "m_t_mean", "m_t_se", "replicates"],
    )?;
    csv.row(&[
        float(growth.rate),
        float(growth.rate_se),
        float(growth.log_intercept),
        growth.points.to_string(),
        float(m_t.mean),
        float(m_t.se),
        trees.len().to_string(),
    ])?;
    csv.finish()?;

    println!(
        "lambda_hat = {:.6} (se {:.2e}) from {} replicates; mean alive at t = {} is {:.2}",
        growth.rate,
        growth.rate_se,
        trees.len(),
        cfg.run.horizon,
        m_t.mean,
    );
    Ok(Outcome::Pass)
}

// ── aux-particle ──

fn build_weight(cfg: &RunConfig, model: &ModelSpec) -> Result<PsiWeight> {
    let cert = lyapunov_build(model, cfg.psi.lambda0, cfg.psi.return_level)?;
    let lambda_psi = compute_lambda_psi(
        model,
        &cert,
        cfg.psi.d_psi,
        cfg.psi.safety_margin,
        Some(cfg.run.init_age),
    )?;
    Ok(PsiWeight::new(model, cert, cfg.psi.d_psi, lambda_psi)?)
}

fn cmd_aux_particle(cfg: &RunConfig, model: &ModelSpec, dir: &RunDir, key: StreamKey) -> Result<Outcome> {
    let psi = build_weight(cfg, model)?;
    let x0 = vec![cfg.run.init_x; model.dim()];
    let paths: Vec<_> = (0..cfg.run.replicates)
        .into_par_iter()
        .map(|i| {
            simulate_particle(
                model,
                &psi,
                &x0,
                cfg.run.init_age,
                cfg.run.horizon,
                key.child(i as u64),
                None,
            )
        })
        .collect::<Result<_, _>>()?;
    let dim = model.dim();

    let mut header = vec![
        "path".to_string(),
        "jumps".to_string(),
        "absorbed".to_string(),
        "tau".to_string(),
        "t_all".to_string(),
        "age_end".to_string(),
    ];
    header.extend(coord_headers("x_", dim));
    let mut csv = dir.csv("paths.csv", &as_str_refs(&header))?;
    for (i, path) in paths.iter().enumerate() {
        let mut row = vec![
            i.to_string(),
            path.jumps().to_string(),
            path.absorbed.to_string(),
            path.tau.map_or(String::new(), float),
            path.t_all.map_or(String::new(), float),
        ];
        match path.state_at(cfg.run.horizon) {
            Some((x, age)) => {
                row.push(float(age));
                row.extend(x.iter().map(|&c| float(c)));
            }
            None => row.extend(std::iter::repeat(String::new()).take(dim + 1)),
        }
        csv.row(&row)?;
    }
    csv.finish()?;

    let mut header = vec![
        "path".to_string(),
        "jump".to_string(),
        "time".to_string(),
        "shortened".to_string(),
        "lengthened_mask".to_string(),
    ];
    header.extend(coord_headers("x_", dim));
    let mut csv = dir.csv("jumps.csv", &as_str_refs(&header))?;
    for (i, path) in paths.iter().enumerate() {
        for (j, (&time, &(i_set, mask))) in path.jump_times.iter().zip(&path.labels).enumerate() {
            let mut row = vec![
                i.to_string(),
                j.to_string(),
                float(time),
                i_set.to_string(),
                mask.to_string(),
            ];
            row.extend(path.states[j + 1].iter().map(|&c| float(c)));
            csv.row(&row)?;
        }
    }
    csv.finish()?;

    let absorbed = paths.iter().filter(|p| p.absorbed).count();
    let mean_jumps =
        paths.iter().map(|p| p.jumps() as f64).sum::<f64>() / paths.len().max(1) as f64;
    dir.write_json(
        "summary.json",
        &json!({
            "paths": paths.len(),
            "lambda_psi": psi.lambda_psi(),
            "d_psi": psi.d_psi(),
            "eps1": psi.cert().eps1,
            "box_hi": psi.cert().box_hi,
            "absorbed": absorbed,
            "mean_jumps": mean_jumps,
        }),
    )?;
    println!(
        "{} particle paths to t = {}: {} absorbed, {:.2} jumps on average, lambda_psi = {:.4}",
        paths.len(),
        cfg.run.horizon,
        absorbed,
        mean_jumps,
        psi.lambda_psi(),
    );
    Ok(Outcome::Pass)
}

// ── cross-validate ──

fn cmd_cross_validate(cfg: &RunConfig, model: &ModelSpec, dir: &RunDir, key: StreamKey) -> Result<Outcome> {
    let psi = build_weight(cfg, model)?;
    let x0 = vec![cfg.run.init_x; model.dim()];
    let renew_hi = model.renewal().renew_hi;
    let constant = |_: &[f64], _: f64| 1.0;
    let in_box = move |x: &[f64], _: f64| {
        if x.iter().all(|&c| c <= renew_hi) {
            1.0
        } else {
            0.0
        }
    };

    let mut reports = Vec::new();
    for (name, f) in [
        ("constant", &constant as &(dyn Fn(&[f64], f64) -> f64 + Sync)),
        ("renewal_box", &in_box),
    ] {
        let r = cross_validate_semigroup(
            model,
            &psi,
            &x0,
            cfg.run.init_age,
            f,
            cfg.run.horizon,
            cfg.run.replicates,
            cfg.run.replicates,
            cfg.run.cap,
            key.child(reports.len() as u64),
            None,
        )?;
        println!(
            "{name}: particle {:.5} +- {:.1e}, population {:.5} +- {:.1e}, z = {:.2}",
            r.particle_mean, r.particle_se, r.population_mean, r.population_se, r.z,
        );
        reports.push((name, r));
    }

    dir.write_json(
        "report.json",
        &json!({
            "t": cfg.run.horizon,
            "paths": cfg.run.replicates,
            "trees": cfg.run.replicates,
            "lambda_psi": psi.lambda_psi(),
            "checks": reports
                .iter()
                .map(|(name, r)| {
                    json!({
                        "f": name,
                        "particle_mean": r.particle_mean,
                        "particle_se": r.particle_se,
                        "population_mean": r.population_mean,
                        "population_se": r.population_se,
                        "z": r.z,
                        "consistent": r.consistent(),
                    })
                })
                .collect::<Vec<_>>(),
        }),
    )?;

    let worst = reports.iter().map(|(_, r)| r.z).fold(0.0, f64::max);
    if reports.iter().all(|(_, r)| r.consistent()) {
        Ok(Outcome::Pass)
    } else {
        Ok(Outcome::CertificateFailed(format!(
            "particle and population estimates disagree by {worst:.2} combined standard errors"
        )))
    }
}

// ── bellman-harris ──

fn cmd_bellman_harris(cfg: &RunConfig, model: &ModelSpec, dir: &RunDir) -> Result<Outcome> {
    let rate = model
        .birth()
        .age_only()
        .ok_or_else(|| anyhow!("the mean renewal equation needs an age-only birth rate"))?
        .clone();
    let scheme = cfg.resolved_scheme(model);
    let offspring_mean = (1.0 + scheme.eps0).powf(1.0 / scheme.d as f64);
    let dt = cfg.run.horizon / 1000.0;
    let mean = bh_mean(&LifetimeLaw::from_rate(rate.clone()), offspring_mean, cfg.run.horizon, dt)?;
    let alpha = solve_alpha(&rate, scheme.eps0, scheme.d)?;

    let mut csv = dir.csv("bh_mean.csv", &["t", "mean"])?;
    for (i, &m) in mean.values().iter().enumerate() {
        csv.row(&[float(i as f64 * mean.dt()), float(m)])?;
    }
    csv.finish()?;

    dir.write_json(
        "summary.json",
        &json!({
            "offspring_mean": offspring_mean,
            "d": scheme.d,
            "eps0": scheme.eps0,
            "alpha": alpha,
            "dt": mean.dt(),
            "t_max": mean.t_max(),
        }),
    )?;
    println!(
        "mean renewal curve on [0, {}], offspring mean {:.6}, growth exponent alpha = {:.6}",
        cfg.run.horizon, offspring_mean, alpha,
    );
    Ok(Outcome::Pass)
}

// ── verify-assumptions ──

fn cmd_verify(cfg: &RunConfig, dir: &RunDir, key: StreamKey) -> Result<Outcome> {
    let model = match cfg.build_model() {
        Ok(m) => m,
        Err(e) => {
            dir.write_json(
                "report.json",
                &json!({ "passed": false, "reason": e.to_string() }),
            )?;
            println!("FAIL model admissibility: {e}");
            return Ok(Outcome::CertificateFailed(format!("model rejected: {e}")));
        }
    };
    let model = model.with_renewal(cfg.resolved_scheme(&model));
    let dim = model.dim();

    let renewal = verify_renewal_expansion(
        &model,
        &default_expansion_grid(&model),
        cfg.verify.samples,
        key.child(1),
    )?;
    println!(
        "{} renewal expansion: {} points, d = {}, threshold {:.4}",
        if renewal.passed { "PASS" } else { "FAIL" },
        renewal.points.len(),
        renewal.d,
        renewal.threshold,
    );
    let mut header = coord_headers("x_", dim);
    header.extend(["estimate".to_string(), "se".to_string()]);
    let mut csv = dir.csv("expansion.csv", &as_str_refs(&header))?;
    for p in &renewal.points {
        let mut row: Vec<String> = p.x.iter().map(|&c| float(c)).collect();
        row.push(float(p.estimate));
        row.push(float(p.se));
        csv.row(&row)?;
    }
    csv.finish()?;

    let cert = lyapunov_build(&model, cfg.psi.lambda0, cfg.psi.return_level)?;
    let contraction = check_exit_contraction(
        &model,
        &cert,
        &default_contraction_grid(&model, &cert),
        cfg.verify.samples,
        key.child(2),
    )?;
    println!(
        "{} exit contraction: {} points, eps1 = {:.4}",
        if contraction.passed { "PASS" } else { "FAIL" },
        contraction.points.len(),
        contraction.eps1,
    );
    let mut header = coord_headers("x_", dim);
    header.extend([
        "lhs".to_string(),
        "se".to_string(),
        "v_x".to_string(),
        "no_escape".to_string(),
    ]);
    let mut csv = dir.csv("contraction.csv", &as_str_refs(&header))?;
    for p in &contraction.points {
        let mut row: Vec<String> = p.x.iter().map(|&c| float(c)).collect();
        row.extend([float(p.lhs), float(p.se), float(p.v_x), p.no_escape.to_string()]);
        csv.row(&row)?;
    }
    csv.finish()?;

    let corollaries = check_corollaries(&model, cfg.psi.lambda0, cfg.psi.return_level)?;
    println!(
        "info drift product condition {:.6} against {:.6}: the exponent route {}",
        corollaries.product_condition,
        corollaries.product_threshold,
        if corollaries.product_ok { "closes at this tilt" } else { "does not close at this tilt" },
    );

    let passed = renewal.passed && contraction.passed;
    dir.write_json(
        "report.json",
        &json!({
            "passed": passed,
            "expansion": {
                "passed": renewal.passed,
                "d": renewal.d,
                "threshold": renewal.threshold,
                "weight_cap": renewal.weight_cap,
            },
            "lyapunov": {
                "lambda0": cert.lambda0,
                "return_level": cert.l,
                "box_hi": cert.box_hi,
                "eps1": cert.eps1,
                "v_min": cert.v_min,
                "c_v": cert.c_v,
            },
            "contraction": { "passed": contraction.passed, "eps1": contraction.eps1 },
            "corollaries": {
                "decay_monotone": corollaries.decay_monotone,
                "product_condition": corollaries.product_condition,
                "product_threshold": corollaries.product_threshold,
                "product_ok": corollaries.product_ok,
                "exponents": corollaries.exponents.map(|e| {
                    json!({ "alpha": e.alpha, "beta": e.beta, "ordered": e.ordered })
                }),
            },
        }),
    )?;

    if passed {
        Ok(Outcome::Pass)
    } else {
        Ok(Outcome::CertificateFailed(
            "at least one certificate did not hold; see report.json".to_string(),
        ))
    }
}

// ── estimate-profile ──

fn cmd_estimate_profile(cfg: &RunConfig, model: &ModelSpec, dir: &RunDir, key: StreamKey) -> Result<Outcome> {
    let init = initial_vector(cfg, model)?;
    let snap = snapshot_population(
        model,
        &init,
        cfg.run.init_age,
        cfg.run.t_burn,
        cfg.run.horizon,
        cfg.run.replicates,
        cfg.run.cap,
        key,
    )?;
    let hist = ProfileHistogram::from_groups(
        &snap.groups,
        cfg.run.bins[0],
        cfg.run.bins[1],
        cfg.run.horizon,
        snap.lambda_hat,
    )?;
    let dim = hist.dim();

    let mut header = coord_headers("x_bin_", dim);
    header.push("a_bin".to_string());
    header.extend(coord_headers("x_center_", dim));
    header.extend(["a_center".to_string(), "count".to_string(), "weight".to_string()]);
    let mut csv = dir.csv("histogram.csv", &as_str_refs(&header))?;
    for (id, mass) in hist.cells() {
        let mut row: Vec<String> = id.x.iter().map(|b| b.to_string()).collect();
        row.push(id.a.to_string());
        row.extend((0..dim).map(|c| float(hist.x_center(c, id.x[c] as usize))));
        row.push(float(hist.a_center(id.a as usize)));
        row.push(mass.count.to_string());
        row.push(float(mass.weight));
        csv.row(&row)?;
    }
    csv.finish()?;

    let product = check_product_form(&hist, model, snap.lambda_hat)?;
    let mut header = coord_headers("x_center_", dim);
    header.extend(["count".to_string(), "ks".to_string()]);
    let mut csv = dir.csv("ks_report.csv", &as_str_refs(&header))?;
    for bin in &product.bins {
        let mut row: Vec<String> = bin.x_center.iter().map(|&c| float(c)).collect();
        row.push(bin.count.to_string());
        row.push(float(bin.ks));
        csv.row(&row)?;
    }
    csv.finish()?;

    let tv = if dim <= FACTORIZATION_MAX_DIM {
        Some(marginal_factorization_report(&hist)?)
    } else {
        None
    };
    dir.write_json(
        "summary.json",
        &json!({
            "lambda_hat": snap.lambda_hat,
            "lambda_se": snap.growth.rate_se,
            "samples": hist.samples(),
            "effective_replicates": hist.effective_replicates(),
            "occupied_bins": hist.occupied(),
            "ks_bins": product.bins.len(),
            "ks_bins_skipped": product.skipped,
            "max_ks": product.max_ks(),
            "mean_ks": product.mean_ks(),
            "marginal_tv": tv,
        }),
    )?;
    println!(
        "profile from {} pooled cells across {} replicates: lambda_hat = {:.4}, max KS = {:.4} over {} bins",
        hist.samples(),
        cfg.run.replicates,
        snap.lambda_hat,
        product.max_ks(),
        product.bins.len(),
    );
    Ok(Outcome::Pass)
}

//! Subcommand bodies. Each returns an [`Outcome`]; errors map to exit code 1.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use halfspace_calculus::asymptotics::{default_mu_grid, fit_expansion, leading_exponent, log_presence_test, ExpansionModel};
use halfspace_calculus::linalg::C64;
use halfspace_calculus::model::{assemble_report, EllipticityGrids, LaplaceTypeModel, ProjectionBC};
use halfspace_calculus::resolvent::{resolvent_norm_scan, trace_density, TraceDensityOptions};
use serde::Serialize;
use serde_json::json;

use crate::config::ScenarioConfig;
use crate::selftest;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    pub fn code(self) -> i32 {
        match self {
            Outcome::Pass => 0,
            Outcome::Fail => 2,
        }
    }
}

/// Options shared by all subcommands.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub allow_theta_zero: bool,
}

/// Round-trip decimal with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn out_dir(cfg: Option<&ScenarioConfig>, opts: &RunOptions) -> Result<PathBuf> {
    let dir = opts
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn setup(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<(LaplaceTypeModel, ProjectionBC)> {
    Ok((cfg.build_model(opts.allow_theta_zero)?, cfg.build_bc()?))
}

pub fn check_ellipticity(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Outcome> {
    let (model, bc) = setup(cfg, opts)?;
    let grids = EllipticityGrids { n_modes: cfg.grid.N_laguerre, alpha: cfg.grid.alpha, ..Default::default() };
    let report = assemble_report(&model, &bc, &grids).context("ellipticity checks")?;
    let doc = json!({ "scenario": cfg.summary(), "grids": grids, "pass": report.pass, "reports": report.reports });
    if cfg.wants("json") {
        write_json(&out_dir(Some(cfg), opts)?.join("ellipticity.json"), &doc)?;
    }
    for r in &report.reports {
        println!("{:<4} {} min_sv={:.3e} threshold={:.1e}", r.condition, if r.pass { "pass" } else { "FAIL" }, r.min_sv, r.threshold);
    }
    Ok(if report.pass { Outcome::Pass } else { Outcome::Fail })
}

/// CSV columns: `mu, norm, scaled, xi_at_max_1..xi_at_max_{n-1}`, with
/// `scaled = mu^2 ||R(mu)||`.
pub fn resolvent_scan(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Outcome> {
    let (model, bc) = setup(cfg, opts)?;
    let mus = cfg.mu_list(|| (0..7).map(|k| 2f64.powi(k)).collect());
    let rows = resolvent_norm_scan(&model, &bc, &mus, cfg.grid.N_laguerre, &cfg.xi_ratios()).context("resolvent scan")?;
    let mut header = vec!["mu".to_string(), "norm".into(), "scaled".into()];
    header.extend((1..model.n).map(|k| format!("xi_at_max_{k}")));
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![fmt_f64(r.mu), fmt_f64(r.norm), fmt_f64(r.scaled)];
            v.extend(r.xi_at_max.iter().map(|x| fmt_f64(*x)));
            v
        })
        .collect();
    let dir = out_dir(Some(cfg), opts)?;
    if cfg.wants("csv") {
        write_csv(&dir.join("resolvent_scan.csv"), &header, &table)?;
    }
    let max = rows.iter().map(|r| r.scaled).fold(0.0, f64::max);
    let min = rows.iter().map(|r| r.scaled).fold(f64::INFINITY, f64::min);
    if cfg.wants("json") {
        write_json(&dir.join("resolvent_scan.json"), &json!({ "scenario": cfg.summary(), "rows": rows, "scaled_max_over_min": max / min }))?;
    }
    println!("mu^2 ||R|| in [{min:.6e}, {max:.6e}], ratio {:.4}", max / min);
    Ok(Outcome::Pass)
}

fn density_samples(model: &LaplaceTypeModel, bc: &ProjectionBC, mus: &[f64]) -> Result<Vec<(f64, C64, f64)>> {
    mus.iter()
        .map(|&mu| {
            let t = trace_density(model, bc, mu, TraceDensityOptions::default()).with_context(|| format!("trace density at mu = {mu}"))?;
            Ok((mu, t.value, t.tail_estimate))
        })
        .collect()
}

/// `trace_density.csv` with columns `mu, re, im, tail_estimate` and
/// `trace_fit.json` with the fitted expansion.
pub fn trace_fit(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Outcome> {
    let (model, bc) = setup(cfg, opts)?;
    let mus = cfg.mu_list(default_mu_grid);
    let samples = density_samples(&model, &bc, &mus)?;
    let pairs: Vec<(f64, C64)> = samples.iter().map(|s| (s.0, s.1)).collect();
    let exp_model = ExpansionModel::from_orders(-(model.d as f64), 1.0, model.n, 3, 0, false)?;
    let fit = fit_expansion(&pairs, &exp_model).context("expansion fit")?;
    let lead = exp_model.ladder_a[0];
    let logs = log_presence_test(&pairs, &exp_model, lead).context("log-term test")?;
    let slope = leading_exponent(&pairs);
    let dir = out_dir(Some(cfg), opts)?;
    if cfg.wants("csv") {
        let rows: Vec<Vec<String>> = samples.iter().map(|(m, v, t)| vec![fmt_f64(*m), fmt_f64(v.re), fmt_f64(v.im), fmt_f64(*t)]).collect();
        write_csv(&dir.join("trace_density.csv"), &["mu".into(), "re".into(), "im".into(), "tail_estimate".into()], &rows)?;
    }
    let c0 = fit.coefficient(lead, false).unwrap_or_default();
    if cfg.wants("json") {
        let doc = json!({
            "scenario": cfg.summary(),
            "fit": fit,
            "leading_exponent_model": lead,
            "leading_coefficient": { "re": c0.re, "im": c0.im },
            "fitted_slope": slope,
            "log_presence": logs,
        });
        write_json(&dir.join("trace_fit.json"), &doc)?;
    }
    println!("leading term ({:.10} {:+.3e}i) mu^{lead}; slope {slope:.6}; log term {}", c0.re, c0.im, if logs.present { "present" } else { "absent" });
    Ok(Outcome::Pass)
}

/// Densities for Dirichlet, Neumann and the configured condition, one row per `mu`.
pub fn compare_bc(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Outcome> {
    let (model, bc) = setup(cfg, opts)?;
    let l = model.l;
    let mus = cfg.mu_list(default_mu_grid);
    let dir_s = density_samples(&model, &ProjectionBC::dirichlet(l), &mus).context("dirichlet")?;
    let neu_s = density_samples(&model, &ProjectionBC::neumann(l), &mus).context("neumann")?;
    let cfg_s = density_samples(&model, &bc, &mus).context("configured condition")?;
    let header: Vec<String> = ["mu", "dirichlet_re", "dirichlet_im", "neumann_re", "neumann_im", "configured_re", "configured_im", "dirichlet_plus_neumann_abs"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut worst: f64 = 0.0;
    let rows: Vec<Vec<String>> = (0..mus.len())
        .map(|k| {
            let (d, n, p) = (dir_s[k].1, neu_s[k].1, cfg_s[k].1);
            let sum = (d + n).norm();
            worst = worst.max(sum / d.norm().max(1e-300));
            vec![fmt_f64(mus[k]), fmt_f64(d.re), fmt_f64(d.im), fmt_f64(n.re), fmt_f64(n.im), fmt_f64(p.re), fmt_f64(p.im), fmt_f64(sum)]
        })
        .collect();
    if cfg.wants("csv") {
        write_csv(&out_dir(Some(cfg), opts)?.join("compare_bc.csv"), &header, &rows)?;
    }
    println!("max |dirichlet + neumann| / |dirichlet| = {worst:.3e}");
    Ok(Outcome::Pass)
}

pub fn run_selftest(opts: &RunOptions) -> Result<Outcome> {
    let results = selftest::run_all(opts.seed);
    for r in &results {
        println!("{}", r.line());
    }
    if let Some(dir) = &opts.out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("selftest.json"), &json!({ "seed": opts.seed, "criteria": results }))?;
    }
    Ok(if results.iter().all(|r| r.pass) { Outcome::Pass } else { Outcome::Fail })
}

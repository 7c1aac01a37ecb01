use nalgebra::DVector;
use rayon::prelude::*;

use super::{
    fit_rate, AdaptiveRecord, CellRecord, ExperimentConfig, ExperimentError, ExperimentResult, FitRecord, FlowSummary,
    FlowTrialRecord, Provenance, Setup, TheoryPoint, TrialFailure,
};
use crate::design::{
    build_covariance, column_normalize, excess_risk, generate_dataset, CovarianceKind, CovarianceSpec, Dataset,
    SignalSpec,
};
use crate::flow::{
    oracle_threshold, rcv_variance_estimate, run_flow, run_flow_observed, BoostingTrajectory, FlowConfig, Holdout,
    StoppingRule, ThresholdKind,
};
use crate::interpolants::{basis_pursuit, lasso_cv, min_l2_interpolant, LassoCvOptions};
use crate::numerics::{mix_keys, Ensemble, RngStream};
use crate::theory::{solve_isotropic, solve_spiked};

/// Added (wrapping) to a trial's stream id for its single retry.
pub const RETRY_OFFSET: u64 = 1 << 63;

/// Stream id of trial `trial` at grid point `gamma_index`.
pub fn trial_stream(setup: Setup, gamma_index: usize, ensemble: Ensemble, trial: usize) -> u64 {
    let ens = Ensemble::ALL.iter().position(|&e| e == ensemble).unwrap_or(0) as u64;
    mix_keys(&[setup.code(), gamma_index as u64, ens, trial as u64])
}

#[derive(Debug, Clone, Copy)]
struct Task {
    gamma_index: usize,
    ensemble: Ensemble,
    trial: usize,
}

struct Outcome<T> {
    task: Task,
    stream_id: u64,
    value: Option<T>,
    errors: Vec<String>,
}

fn tasks(cfg: &ExperimentConfig) -> Vec<Task> {
    let mut out = Vec::new();
    for gamma_index in 0..cfg.gammas.len() {
        for &ensemble in &cfg.ensembles {
            for trial in 0..cfg.trials {
                out.push(Task {
                    gamma_index,
                    ensemble,
                    trial,
                });
            }
        }
    }
    out
}

fn execute<T, F>(cfg: &ExperimentConfig, work: F) -> Result<Vec<Outcome<T>>, ExperimentError>
where
    T: Send,
    F: Fn(Task, RngStream) -> Result<T, String> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let list = tasks(cfg);
    Ok(pool.install(|| {
        list.par_iter()
            .map(|&task| {
                let id = trial_stream(cfg.setup, task.gamma_index, task.ensemble, task.trial);
                match work(task, RngStream::new(cfg.base_seed, id)) {
                    Ok(v) => Outcome {
                        task,
                        stream_id: id,
                        value: Some(v),
                        errors: Vec::new(),
                    },
                    Err(first) => {
                        let retry = id.wrapping_add(RETRY_OFFSET);
                        match work(task, RngStream::new(cfg.base_seed, retry)) {
                            Ok(v) => Outcome {
                                task,
                                stream_id: retry,
                                value: Some(v),
                                errors: vec![first],
                            },
                            Err(second) => Outcome {
                                task,
                                stream_id: retry,
                                value: None,
                                errors: vec![first, second],
                            },
                        }
                    }
                }
            })
            .collect()
    }))
}

/// Dispatches on `config.setup`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    match config.setup {
        Setup::S1 => run_setup1(config),
        Setup::S2 => run_setup2(config),
        Setup::S3 => run_setup3(config),
        Setup::S4 => run_setup4(config),
        Setup::S5 => run_setup5(config),
    }
}

fn require(config: &ExperimentConfig, setup: Setup) -> Result<(), ExperimentError> {
    if config.setup != setup {
        return Err(super::ConfigError::Invalid(vec![format!(
            "configuration is for setup {}, not {setup}",
            config.setup
        )])
        .into());
    }
    config.validate()?;
    Ok(())
}

/// Isotropic Gaussian pure-noise interpolation: basis pursuit against the
/// minimum-ℓ2 interpolant across the γ grid.
pub fn run_setup1(config: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    require(config, Setup::S1)?;
    run_interpolation(config, &["bp", "min_l2"])
}

/// Setup 1 for basis pursuit under each feature ensemble.
pub fn run_setup2(config: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    require(config, Setup::S2)?;
    run_interpolation(config, &["bp"])
}

/// Spiked-isotropic pure-noise interpolation, including sub-critical tails.
pub fn run_setup3(config: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    require(config, Setup::S3)?;
    run_interpolation(config, &["bp", "min_l2"])
}

/// Oracle early stopping of the boosting flow against lasso CV and CV stopping.
pub fn run_setup4(config: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    require(config, Setup::S4)?;
    run_flows(config, false)
}

/// Setup 4 with an additional stop at the RCV-estimated threshold.
pub fn run_setup5(config: &ExperimentConfig) -> Result<ExperimentResult, ExperimentError> {
    require(config, Setup::S5)?;
    run_flows(config, true)
}

fn covariance(cfg: &ExperimentConfig, p: usize) -> Result<CovarianceSpec, String> {
    match cfg.setup {
        Setup::S3 => build_covariance(
            CovarianceKind::SpikedIsotropic,
            p,
            cfg.k_star,
            cfg.lambda_head,
            cfg.lambda_tail,
        ),
        _ => CovarianceSpec::isotropic(p),
    }
    .map_err(|e| e.to_string())
}

struct Estimate {
    risk: f64,
    linf: f64,
}

fn linf(beta: &[f64]) -> f64 {
    beta.iter().fold(0.0, |m: f64, b| m.max(b.abs()))
}

fn interpolation_trial(
    cfg: &ExperimentConfig,
    tags: &[&str],
    task: Task,
    stream: RngStream,
) -> Result<Vec<Estimate>, String> {
    let p = cfg.dimension(task.gamma_index);
    let cov = covariance(cfg, p)?;
    let ds = generate_dataset(
        &cov,
        &SignalSpec::pure_noise(),
        cfg.n,
        cfg.sigma2,
        task.ensemble,
        stream,
    )
    .map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(tags.len());
    if p <= cfg.n {
        // Below the interpolation threshold both estimators coincide with
        // least squares.
        let beta = least_squares(&ds)?;
        let risk = excess_risk(&beta, &ds).map_err(|e| e.to_string())?;
        for _ in tags {
            out.push(Estimate {
                risk,
                linf: linf(&beta),
            });
        }
        return Ok(out);
    }
    for tag in tags {
        let sol = match *tag {
            "bp" => basis_pursuit(&ds, cfg.feas_tol),
            _ => min_l2_interpolant(&ds),
        }
        .map_err(|e| format!("{tag}: {e}"))?;
        out.push(Estimate {
            risk: excess_risk(&sol.beta, &ds).map_err(|e| e.to_string())?,
            linf: sol.linf_norm(),
        });
    }
    Ok(out)
}

fn least_squares(ds: &Dataset) -> Result<Vec<f64>, String> {
    let qr = ds.phi.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().amax();
    if r.diagonal().iter().any(|d| d.abs() <= 1e-12 * scale) {
        return Err("least-squares design is rank deficient".to_string());
    }
    let rhs = qr.q().transpose() * &ds.y;
    r.solve_upper_triangular(&rhs)
        .map(|b| b.as_slice().to_vec())
        .ok_or_else(|| "least-squares solve failed".to_string())
}

fn provenance(cfg: &ExperimentConfig) -> Provenance {
    Provenance {
        config_hash: format!("{:016x}", cfg.hash()),
        base_seed: cfg.base_seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
    }
}

/// Folds outcomes into failure records and returns the budget warning, if any.
fn record_failures<T>(outcomes: &[Outcome<T>], failures: &mut Vec<TrialFailure>, warnings: &mut Vec<String>) {
    for o in outcomes.iter().filter(|o| !o.errors.is_empty()) {
        let recovered = o.value.is_some();
        failures.push(TrialFailure {
            gamma_index: o.task.gamma_index,
            ensemble: o.task.ensemble,
            trial: o.task.trial,
            errors: o.errors.clone(),
            recovered,
        });
        if !recovered {
            warnings.push(format!(
                "grid point {} ({}) trial {} excluded: {}",
                o.task.gamma_index,
                o.task.ensemble,
                o.task.trial,
                o.errors.join(" / ")
            ));
        }
    }
}

fn aggregate(
    cfg: &ExperimentConfig,
    gamma_index: usize,
    ensemble: Ensemble,
    estimator: &str,
    values: &[(f64, f64)],
) -> CellRecord {
    let k = values.len();
    let mean_risk = values.iter().map(|v| v.0).sum::<f64>() / k as f64;
    let mean_linf = values.iter().map(|v| v.1).sum::<f64>() / k as f64;
    let std_risk = if k > 1 {
        (values.iter().map(|v| (v.0 - mean_risk).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
    } else {
        0.0
    };
    let failed = cfg.trials - k;
    CellRecord {
        setup: cfg.setup,
        gamma: cfg.realized_gamma(gamma_index),
        n: cfg.n,
        p: cfg.dimension(gamma_index),
        estimator: estimator.to_string(),
        ensemble,
        mean_risk,
        std_risk,
        mean_linf,
        trials: k,
        incomplete: failed * 10 > cfg.trials,
    }
}

fn theory_column(cfg: &ExperimentConfig) -> Vec<TheoryPoint> {
    (0..cfg.gammas.len())
        .map(|gi| {
            let gamma = cfg.realized_gamma(gi);
            let p = cfg.dimension(gi);
            let prediction = match cfg.setup {
                Setup::S1 | Setup::S2 => solve_isotropic(gamma, cfg.sigma2)
                    .map(|c| c.alpha2)
                    .map_err(|e| e.to_string()),
                Setup::S3 => covariance(cfg, p)
                    .and_then(|cov| solve_spiked(&cov, cfg.n, cfg.sigma2, None).map_err(|e| e.to_string()))
                    .map(|c| c.e_total),
                Setup::S4 | Setup::S5 => Err("no closed-form prediction".to_string()),
            };
            match prediction {
                Ok(v) => TheoryPoint {
                    gamma,
                    p,
                    predicted_risk: Some(v),
                    note: None,
                },
                Err(note) => TheoryPoint {
                    gamma,
                    p,
                    predicted_risk: None,
                    note: Some(note),
                },
            }
        })
        .collect()
}

fn run_interpolation(cfg: &ExperimentConfig, tags: &[&str]) -> Result<ExperimentResult, ExperimentError> {
    let outcomes = execute(cfg, |task, stream| interpolation_trial(cfg, tags, task, stream))?;
    let mut failures = Vec::new();
    let mut warnings = Vec::new();
    record_failures(&outcomes, &mut failures, &mut warnings);

    let mut cells = Vec::new();
    for group in outcomes.chunks(cfg.trials) {
        let head = group[0].task;
        for (ti, tag) in tags.iter().enumerate() {
            let values: Vec<(f64, f64)> = group
                .iter()
                .filter_map(|o| o.value.as_ref().map(|v| (v[ti].risk, v[ti].linf)))
                .collect();
            cells.push(aggregate(cfg, head.gamma_index, head.ensemble, tag, &values));
        }
    }
    for c in cells.iter().filter(|c| c.incomplete) {
        warnings.push(format!(
            "cell gamma={} {} {} is incomplete ({} of {} trials)",
            c.gamma, c.estimator, c.ensemble, c.trials, cfg.trials
        ));
    }

    let min_gamma = if cfg.setup == Setup::S3 { 1.5 } else { f64::MIN_POSITIVE };
    let mut fits = Vec::new();
    for &ensemble in &cfg.ensembles {
        for tag in tags {
            let chosen: Vec<CellRecord> = cells
                .iter()
                .filter(|c| c.ensemble == ensemble && c.gamma >= min_gamma && c.gamma > 1.0)
                .cloned()
                .collect();
            let (fit, error) = match fit_rate(&chosen, tag) {
                Ok(f) => (Some(f), None),
                Err(e) => (None, Some(e.to_string())),
            };
            fits.push(FitRecord {
                estimator: tag.to_string(),
                ensemble,
                min_gamma: chosen.iter().map(|c| c.gamma).fold(f64::INFINITY, f64::min),
                fit,
                error,
            });
        }
    }

    Ok(ExperimentResult {
        config: cfg.clone(),
        provenance: provenance(cfg),
        cells,
        fits,
        theory: theory_column(cfg),
        flow_trials: Vec::new(),
        flow_summary: Vec::new(),
        failures,
        warnings,
        trajectories: Vec::new(),
    })
}

const FLOW_TAGS: [&str; 5] = ["flow_tstar", "flow_min", "flow_final", "flow_cv", "lasso_cv"];

struct FlowTrial {
    record: FlowTrialRecord,
    estimates: Vec<Estimate>,
    trajectory: Option<BoostingTrajectory>,
}

/// Row of the first recorded grid index at or beyond `k`.
fn row_of(tr: &BoostingTrajectory, k: usize) -> usize {
    tr.steps.partition_point(|&s| s < k).min(tr.steps.len() - 1)
}

fn flow_trial(cfg: &ExperimentConfig, adaptive: bool, task: Task, stream: RngStream) -> Result<FlowTrial, String> {
    let n = cfg.n;
    let p = cfg.dimension(task.gamma_index);
    let cov = CovarianceSpec::isotropic(p).map_err(|e| e.to_string())?;
    let signal = SignalSpec::sparse(cfg.support_size, cfg.magnitude);
    let raw = generate_dataset(&cov, &signal, n, cfg.sigma2, task.ensemble, stream).map_err(|e| e.to_string())?;
    let ds = column_normalize(&raw).map_err(|e| e.to_string())?;
    let sigma = cfg.sigma2.sqrt();
    let rule = oracle_threshold(sigma, p, n, cfg.c).map_err(|e| e.to_string())?;
    let fcfg = FlowConfig {
        step_eps: cfg.step_eps,
        run_past_stop: true,
        rho_floor: cfg.rho_floor,
        ..FlowConfig::default()
    };
    let tr = run_flow(&ds, &fcfg, Some(&rule)).map_err(|e| format!("flow: {e}"))?;
    let (stop_row, t_star) = match (tr.stop_row, tr.t_star_index) {
        (Some(r), Some(k)) => (r, k),
        _ => return Err("flow never reached the stopping threshold".to_string()),
    };
    let last = tr.risk.len() - 1;
    let min_row = tr
        .risk
        .iter()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) },
        )
        .0;
    let risk_min = tr.risk[min_row];
    let u_shaped = min_row > 0 && min_row < last && risk_min < tr.risk[0] && risk_min < tr.risk[last];

    let beta_stop = tr.beta_at_stop.clone().ok_or("missing stopped coefficients")?;
    let truth = ds.beta_star_current();
    let diff: Vec<f64> = beta_stop.iter().zip(truth.iter()).map(|(b, t)| b - t).collect();
    let fitted = &ds.phi * DVector::from_column_slice(&diff);
    let basic_lhs = fitted.norm_squared() / n as f64;
    let basic_rhs = 3.0 * rule.lambda_n * diff.iter().map(|d| d.abs()).sum::<f64>();
    let noise_sup = ds.phi.tr_mul(&ds.noise).amax() / n as f64;
    let truth_l1: f64 = truth.iter().map(|b| b.abs()).sum();
    let stop_l1: f64 = beta_stop.iter().map(|b| b.abs()).sum();

    let lasso = lasso_cv(
        &ds,
        &LassoCvOptions {
            n_folds: cfg.cv_folds,
            tol: cfg.lasso_tol,
            ..LassoCvOptions::default()
        },
    )
    .map_err(|e| format!("lasso cv: {e}"))?;
    let risk_lasso = excess_risk(&lasso.beta_opt, &ds).map_err(|e| e.to_string())?;

    let (cv_k, cv_increase) = cv_stop_index(cfg, &ds, &tr)?;
    let cv_row = row_of(&tr, cv_k);

    let mut estimates = vec![
        Estimate {
            risk: tr.risk[stop_row],
            linf: tr.linf_norm[stop_row],
        },
        Estimate {
            risk: risk_min,
            linf: tr.linf_norm[min_row],
        },
        Estimate {
            risk: tr.risk[last],
            linf: tr.linf_norm[last],
        },
        Estimate {
            risk: tr.risk[cv_row],
            linf: tr.linf_norm[cv_row],
        },
        Estimate {
            risk: risk_lasso,
            linf: linf(&lasso.beta_opt),
        },
    ];

    let adaptive_record = if adaptive {
        let (s2, diag) = rcv_variance_estimate(&ds).map_err(|e| format!("variance estimate: {e}"))?;
        if !(s2 > 0.0) {
            return Err(format!("estimated noise variance is not positive ({s2:e})"));
        }
        let hat = StoppingRule::new(ThresholdKind::Adaptive, s2.sqrt(), p, n, cfg.c).map_err(|e| e.to_string())?;
        let row = tr
            .rho
            .iter()
            .position(|&r| r <= hat.threshold)
            .ok_or("path never reached the adaptive threshold")?;
        estimates.push(Estimate {
            risk: tr.risk[row],
            linf: tr.linf_norm[row],
        });
        Some(AdaptiveRecord {
            sigma2_hat: s2,
            sigma_rel_err: (s2.sqrt() - sigma).abs() / sigma,
            lambda_hat: hat.lambda_n,
            lambda_rel_err: (hat.lambda_n - rule.lambda_n).abs() / rule.lambda_n,
            t_hat_index: tr.steps[row],
            risk_that: tr.risk[row],
            support_sizes: diag.support_sizes,
        })
    } else {
        None
    };

    let record = FlowTrialRecord {
        gamma_index: task.gamma_index,
        p,
        trial: task.trial,
        stream_id: stream.stream_id,
        retried: false,
        step_eps: tr.step_eps,
        lambda_n: rule.lambda_n,
        t_star_index: t_star,
        rho_at_stop: tr.rho[stop_row],
        rho_before_stop: tr.rho_before_stop,
        min_index: tr.steps[min_row],
        last_index: tr.steps[last],
        cv_index: tr.steps[cv_row],
        risk_tstar: tr.risk[stop_row],
        risk_min,
        risk_final: tr.risk[last],
        risk_cv_stop: tr.risk[cv_row],
        risk_lasso_cv: risk_lasso,
        lasso_lambda: lasso.lambda_opt,
        lasso_nonconverged: lasso.nonconverged_fits,
        u_shaped,
        noise_sup,
        noise_event: noise_sup <= rule.lambda_n,
        basic_lhs,
        basic_rhs,
        l1_ratio: if truth_l1 > 0.0 { stop_l1 / truth_l1 } else { f64::NAN },
        events: tr.events,
        max_rho_increase: tr.max_rho_increase,
        cv_max_rho_increase: cv_increase,
        adaptive: adaptive_record,
    };
    Ok(FlowTrial {
        record,
        estimates,
        trajectory: cfg.trajectories.then_some(tr),
    })
}

/// Grid index minimizing the fold-averaged held-out MSE. Each fold's flow
/// uses the full-data grid spacing and runs to the full path's last index;
/// a fold that converges early keeps its final error.
fn cv_stop_index(cfg: &ExperimentConfig, ds: &Dataset, full: &BoostingTrajectory) -> Result<(usize, f64), String> {
    let n = ds.n();
    let k_max = *full.steps.last().expect("trajectory has rows");
    let fcfg = FlowConfig {
        step_eps: Some(full.step_eps),
        max_steps: k_max,
        run_past_stop: true,
        rho_floor: 0.0,
        ..FlowConfig::default()
    };
    let mut total = vec![0.0; k_max + 1];
    let mut worst_increase: f64 = 0.0;
    for f in 0..cfg.cv_folds {
        let lo = f * n / cfg.cv_folds;
        let hi = (f + 1) * n / cfg.cv_folds;
        let train: Vec<usize> = (0..lo).chain(hi..n).collect();
        let val: Vec<usize> = (lo..hi).collect();
        let holdout = Holdout {
            phi: ds.phi.select_rows(val.iter()),
            y: ds.y.select_rows(val.iter()),
        };
        let tr = run_flow_observed(&ds.subset_rows(&train), &fcfg, None, Some(&holdout))
            .map_err(|e| format!("fold {f} flow: {e}"))?;
        worst_increase = worst_increase.max(tr.max_rho_increase);
        let mse = tr.heldout_mse.as_ref().ok_or("fold flow lacks held-out errors")?;
        let mut row = 0;
        for (k, slot) in total.iter_mut().enumerate() {
            while row + 1 < tr.steps.len() && tr.steps[row + 1] <= k {
                row += 1;
            }
            *slot += mse[row];
        }
    }
    let best = total
        .iter()
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) },
        )
        .0;
    Ok((best, worst_increase))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, k) = xs.fold((0.0, 0usize), |(s, k), x| (s + x, k + 1));
    s / k as f64
}

fn run_flows(cfg: &ExperimentConfig, adaptive: bool) -> Result<ExperimentResult, ExperimentError> {
    let outcomes = execute(cfg, |task, stream| flow_trial(cfg, adaptive, task, stream))?;
    let mut failures = Vec::new();
    let mut warnings = Vec::new();
    record_failures(&outcomes, &mut failures, &mut warnings);

    let mut tags: Vec<&str> = FLOW_TAGS.to_vec();
    if adaptive {
        tags.push("flow_adaptive");
    }
    let mut cells = Vec::new();
    let mut flow_trials = Vec::new();
    let mut summaries = Vec::new();
    let mut trajectories = Vec::new();
    for group in outcomes.chunks(cfg.trials) {
        let head = group[0].task;
        for (ti, tag) in tags.iter().enumerate() {
            let values: Vec<(f64, f64)> = group
                .iter()
                .filter_map(|o| o.value.as_ref().map(|v| (v.estimates[ti].risk, v.estimates[ti].linf)))
                .collect();
            cells.push(aggregate(cfg, head.gamma_index, head.ensemble, tag, &values));
        }
        let recs: Vec<FlowTrialRecord> = group
            .iter()
            .filter_map(|o| {
                o.value.as_ref().map(|v| FlowTrialRecord {
                    stream_id: o.stream_id,
                    retried: !o.errors.is_empty(),
                    ..v.record.clone()
                })
            })
            .collect();
        if !recs.is_empty() {
            summaries.push(summarize(head.gamma_index, &recs));
        }
        flow_trials.extend(recs);
        for o in group {
            if let Some(tr) = o.value.as_ref().and_then(|v| v.trajectory.clone()) {
                trajectories.push((o.task.gamma_index, o.task.trial, tr));
            }
        }
    }
    for c in cells.iter().filter(|c| c.incomplete) {
        warnings.push(format!(
            "cell gamma={} {} is incomplete ({} of {} trials)",
            c.gamma, c.estimator, c.trials, cfg.trials
        ));
    }
    Ok(ExperimentResult {
        config: cfg.clone(),
        provenance: provenance(cfg),
        cells,
        fits: Vec::new(),
        theory: theory_column(cfg),
        flow_trials,
        flow_summary: summaries,
        failures,
        warnings,
        trajectories,
    })
}

fn summarize(gamma_index: usize, recs: &[FlowTrialRecord]) -> FlowSummary {
    let adaptive: Vec<(&FlowTrialRecord, &AdaptiveRecord)> = recs
        .iter()
        .filter_map(|r| r.adaptive.as_ref().map(|a| (r, a)))
        .collect();
    let has_adaptive = !adaptive.is_empty();
    FlowSummary {
        gamma_index,
        p: recs[0].p,
        trials: recs.len(),
        mean_risk_tstar: mean(recs.iter().map(|r| r.risk_tstar)),
        mean_risk_min: mean(recs.iter().map(|r| r.risk_min)),
        mean_risk_final: mean(recs.iter().map(|r| r.risk_final)),
        mean_risk_cv_stop: mean(recs.iter().map(|r| r.risk_cv_stop)),
        mean_risk_lasso_cv: mean(recs.iter().map(|r| r.risk_lasso_cv)),
        u_shaped: recs.iter().filter(|r| r.u_shaped).count(),
        noise_events: recs.iter().filter(|r| r.noise_event).count(),
        basic_violations: recs
            .iter()
            .filter(|r| r.noise_event && r.basic_lhs > r.basic_rhs)
            .count(),
        max_rho_increase: recs
            .iter()
            .map(|r| r.max_rho_increase.max(r.cv_max_rho_increase))
            .fold(0.0, f64::max),
        mean_risk_that: has_adaptive.then(|| mean(adaptive.iter().map(|(_, a)| a.risk_that))),
        mean_sigma_rel_err: has_adaptive.then(|| mean(adaptive.iter().map(|(_, a)| a.sigma_rel_err))),
        mean_lambda_rel_err: has_adaptive.then(|| mean(adaptive.iter().map(|(_, a)| a.lambda_rel_err))),
        index_agreement: has_adaptive.then(|| {
            adaptive
                .iter()
                .filter(|(r, a)| {
                    let (k, kh) = (r.t_star_index as f64, a.t_hat_index as f64);
                    (kh - k).abs() <= 0.2 * k.max(1.0)
                })
                .count()
        }),
    }
}

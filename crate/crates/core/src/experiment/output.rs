use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::svg::{line_chart, Series};
use super::{CellRecord, ExperimentError, ExperimentResult, FlowTrialRecord};

pub const CELLS_HEADER: &str = "setup,gamma,n,p,estimator,ensemble,mean_risk,std_risk,mean_linf,trials";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Cell table in the fixed column order. Floats use Rust's shortest
/// round-trip formatting, which is locale-independent.
pub fn cells_csv(cells: &[CellRecord]) -> String {
    let mut out = String::from(CELLS_HEADER);
    out.push('\n');
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            c.setup, c.gamma, c.n, c.p, c.estimator, c.ensemble, c.mean_risk, c.std_risk, c.mean_linf, c.trials
        );
    }
    out
}

pub fn write_cells_csv(cells: &[CellRecord], path: &Path) -> Result<(), ExperimentError> {
    write_file(path, &cells_csv(cells))
}

pub fn read_cells_csv(path: &Path) -> Result<Vec<CellRecord>, ExperimentError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |line: usize, message: String| ExperimentError::Format {
        path: path.display().to_string(),
        message: format!("line {line}: {message}"),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CELLS_HEADER => {}
        _ => return Err(bad(1, format!("expected header `{CELLS_HEADER}`"))),
    }
    let mut cells = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(bad(i + 1, format!("expected 10 fields, found {}", f.len())));
        }
        let num = |k: usize| {
            f[k].parse::<f64>()
                .map_err(|e| bad(i + 1, format!("field {}: {e}", k + 1)))
        };
        let int = |k: usize| {
            f[k].parse::<usize>()
                .map_err(|e| bad(i + 1, format!("field {}: {e}", k + 1)))
        };
        cells.push(CellRecord {
            setup: f[0].parse().map_err(|e| bad(i + 1, e))?,
            gamma: num(1)?,
            n: int(2)?,
            p: int(3)?,
            estimator: f[4].to_string(),
            ensemble: f[5].parse().map_err(|e| bad(i + 1, format!("{e}")))?,
            mean_risk: num(6)?,
            std_risk: num(7)?,
            mean_linf: num(8)?,
            trials: int(9)?,
            incomplete: false,
        });
    }
    Ok(cells)
}

fn flow_trials_csv(recs: &[FlowTrialRecord]) -> String {
    let mut out = String::from(
        "gamma_index,p,trial,stream_id,t_star_index,min_index,cv_index,last_index,risk_tstar,risk_min,risk_final,\
         risk_cv_stop,risk_lasso_cv,u_shaped,noise_event,basic_lhs,basic_rhs,max_rho_increase,sigma2_hat,t_hat_index,risk_that\n",
    );
    for r in recs {
        let (s2, kh, rh) = match &r.adaptive {
            Some(a) => (
                a.sigma2_hat.to_string(),
                a.t_hat_index.to_string(),
                a.risk_that.to_string(),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.gamma_index,
            r.p,
            r.trial,
            r.stream_id,
            r.t_star_index,
            r.min_index,
            r.cv_index,
            r.last_index,
            r.risk_tstar,
            r.risk_min,
            r.risk_final,
            r.risk_cv_stop,
            r.risk_lasso_cv,
            r.u_shaped,
            r.noise_event,
            r.basic_lhs,
            r.basic_rhs,
            r.max_rho_increase.max(r.cv_max_rho_increase),
            s2,
            kh,
            rh
        );
    }
    out
}

fn grouped(cells: &[CellRecord], x: impl Fn(&CellRecord) -> Option<f64>) -> Vec<Series> {
    let mut groups: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
    for c in cells {
        if let Some(xv) = x(c) {
            groups
                .entry((c.estimator.clone(), c.ensemble.to_string()))
                .or_default()
                .push((xv, c.mean_risk));
        }
    }
    let multi_ensemble = groups
        .keys()
        .map(|k| &k.1)
        .collect::<std::collections::BTreeSet<_>>()
        .len()
        > 1;
    groups
        .into_iter()
        .map(|((est, ens), mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series {
                label: if multi_ensemble { format!("{est} ({ens})") } else { est },
                points,
            }
        })
        .collect()
}

/// Risk against γ, one polyline per estimator and ensemble.
pub fn plot_cells(cells: &[CellRecord]) -> String {
    line_chart(
        "Mean excess risk",
        "gamma",
        "excess risk",
        &grouped(cells, |c| Some(c.gamma)),
    )
}

fn plot_inverse_log(cells: &[CellRecord]) -> String {
    let series = grouped(cells, |c| (c.gamma > 1.0).then(|| 1.0 / c.gamma.ln()));
    line_chart(
        "Mean excess risk against 1/ln(gamma)",
        "1 / ln(gamma)",
        "excess risk",
        &series,
    )
}

/// Writes the cell table, the JSON summary and, when enabled, plots and
/// per-trial trajectories into `dir`. Returns the files written.
pub fn emit_outputs(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();

    let cells_path = dir.join("cells.csv");
    write_cells_csv(&result.cells, &cells_path)?;
    written.push(cells_path);

    let summary_path = dir.join("summary.json");
    let json = serde_json::to_string_pretty(result).map_err(|e| ExperimentError::Format {
        path: summary_path.display().to_string(),
        message: e.to_string(),
    })?;
    write_file(&summary_path, &json)?;
    written.push(summary_path);

    if !result.flow_trials.is_empty() {
        let path = dir.join("flow_trials.csv");
        write_file(&path, &flow_trials_csv(&result.flow_trials))?;
        written.push(path);
    }

    if result.config.plots && !result.cells.is_empty() {
        let path = dir.join("risk_vs_gamma.svg");
        write_file(&path, &plot_cells(&result.cells))?;
        written.push(path);
        if result.cells.iter().filter(|c| c.gamma > 1.0).count() > 1 {
            let path = dir.join("risk_vs_inv_log_gamma.svg");
            write_file(&path, &plot_inverse_log(&result.cells))?;
            written.push(path);
        }
        if let Some((_, _, tr)) = result.trajectories.first() {
            let series = vec![
                Series {
                    label: "max correlation".into(),
                    points: tr.times.iter().cloned().zip(tr.rho.iter().cloned()).collect(),
                },
                Series {
                    label: "excess risk".into(),
                    points: tr.times.iter().cloned().zip(tr.risk.iter().cloned()).collect(),
                },
            ];
            let path = dir.join("flow_path.svg");
            write_file(&path, &line_chart("Boosting path (first trial)", "t", "value", &series))?;
            written.push(path);
        }
    }

    if result.config.trajectories && !result.trajectories.is_empty() {
        let tdir = dir.join("trajectories");
        fs::create_dir_all(&tdir).map_err(io_err(&tdir))?;
        for (gi, trial, tr) in &result.trajectories {
            let path = tdir.join(format!("g{gi:02}_trial{trial:03}.csv"));
            tr.write_csv(&path).map_err(|e| ExperimentError::Format {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::Setup;
    use crate::numerics::Ensemble;

    fn sample_cells() -> Vec<CellRecord> {
        vec![
            CellRecord {
                setup: Setup::S2,
                gamma: 2.5,
                n: 20,
                p: 50,
                estimator: "bp".into(),
                ensemble: Ensemble::StudentT4,
                mean_risk: 0.1 + 0.2,
                std_risk: 1e-17,
                mean_linf: 1.0 / 3.0,
                trials: 7,
                incomplete: false,
            },
            CellRecord {
                setup: Setup::S2,
                gamma: 4.0,
                n: 20,
                p: 80,
                estimator: "bp".into(),
                ensemble: Ensemble::StudentT4,
                mean_risk: 0.25,
                std_risk: 0.0,
                mean_linf: 2.0,
                trials: 7,
                incomplete: false,
            },
        ]
    }

    #[test]
    fn csv_layout_and_round_trip() {
        let cells = sample_cells();
        let text = cells_csv(&cells);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CELLS_HEADER));
        assert_eq!(
            lines.next(),
            Some("s2,2.5,20,50,bp,student_t4,0.30000000000000004,0.00000000000000001,0.3333333333333333,7")
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cells.csv");
        write_cells_csv(&cells, &path).unwrap();
        assert_eq!(read_cells_csv(&path).unwrap(), cells);
    }

    #[test]
    fn read_rejects_wrong_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(matches!(read_cells_csv(&path), Err(ExperimentError::Format { .. })));
    }

    #[test]
    fn plot_lists_each_series() {
        let svg = plot_cells(&sample_cells());
        assert_eq!(svg.matches("<polyline").count(), 1);
    }
}

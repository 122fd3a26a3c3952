//! Evaluation: the five forecast metrics, per-horizon reports over the
//! evaluation split, the historical-average baseline, and report emission.
//!
//! Metrics are always computed on denormalized (raw-scale) speeds, pooled
//! globally over every (window, node) entry at a given horizon.

use std::io::Write;
use std::path::Path;

use crate::autodiff::DenseMatrix;
use crate::data::{make_windows, Split, SpeedDataset, Window};
use crate::error::{Error, Result};
use crate::graphcore::{normalize_with_self_loops, Adjacency};
use crate::model::{forecast, ModelConfig, ModelParams};
use crate::util::csvnum;

/// The five forecast-quality metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    /// 1 − ‖truth − pred‖_F / ‖truth‖_F.
    pub acc: f64,
    /// 1 − Σ(truth − pred)² / Σ(truth − mean(truth))².
    pub r2: f64,
    /// 1 − Var(truth − pred) / Var(truth).
    pub var: f64,
}

/// Computes all five metrics over matching matrices, pooling every entry.
pub fn metrics(pred: &DenseMatrix, truth: &DenseMatrix) -> Result<Metrics> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape("metrics", truth.shape(), pred.shape()));
    }
    let m = truth.data().len();
    if m == 0 {
        return Err(Error::config("metrics need at least one entry".to_string()));
    }
    let count = m as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut truth_sq = 0.0;
    let mut truth_sum = 0.0;
    let mut err_sum = 0.0;
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        let e = t - p;
        se += e * e;
        ae += e.abs();
        truth_sq += t * t;
        truth_sum += t;
        err_sum += e;
    }
    let truth_mean = truth_sum / count;
    let mut sst = 0.0;
    for &t in truth.data() {
        sst += (t - truth_mean) * (t - truth_mean);
    }
    if sst <= 0.0 {
        return Err(Error::numerical(
            "truth series is constant; r2 and var are undefined".to_string(),
        ));
    }
    let err_mean = err_sum / count;
    let mut err_var = 0.0;
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        let d = (t - p) - err_mean;
        err_var += d * d;
    }
    Ok(Metrics {
        rmse: (se / count).sqrt(),
        mae: ae / count,
        acc: 1.0 - se.sqrt() / truth_sq.sqrt(),
        r2: 1.0 - se / sst,
        var: 1.0 - err_var / sst,
    })
}

/// Metrics for one requested horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonReport {
    pub horizon_min: usize,
    /// Number of model steps this horizon corresponds to.
    pub steps: usize,
    pub metrics: Metrics,
}

/// One long-form plot record: the prediction for `node` at absolute time
/// index `timestamp`, made `horizon_min` minutes ahead.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub timestamp: usize,
    pub node: usize,
    pub truth: f64,
    pub pred: f64,
    pub horizon_min: usize,
}

/// Per-horizon metrics plus the full prediction/truth series for plotting.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForecastReport {
    pub horizons: Vec<HorizonReport>,
    pub plot: Vec<PlotRow>,
}

/// Translates requested horizons in minutes into model step counts.
fn horizon_steps(ds: &SpeedDataset, horizons_min: &[usize]) -> Result<Vec<usize>> {
    let mut steps = Vec::with_capacity(horizons_min.len());
    for &h in horizons_min {
        if h == 0 || h % ds.interval_minutes != 0 {
            return Err(Error::config(format!(
                "horizon {h} min is not a positive multiple of the {} min sampling interval",
                ds.interval_minutes
            )));
        }
        steps.push(h / ds.interval_minutes);
    }
    Ok(steps)
}

/// Builds a report from per-window prediction matrices (already denormalized,
/// max_steps×n each, aligned with `windows`).
fn report_from_predictions(
    ds: &SpeedDataset,
    windows: &[Window],
    preds: &[DenseMatrix],
    history_steps: usize,
    horizons_min: &[usize],
    steps: &[usize],
) -> Result<ForecastReport> {
    let n = ds.n();
    let mut horizons = Vec::with_capacity(horizons_min.len());
    let mut plot = Vec::with_capacity(windows.len() * horizons_min.len() * n);
    for (&h_min, &s) in horizons_min.iter().zip(steps) {
        let mut pred_rows = Vec::with_capacity(windows.len());
        let mut truth_rows = Vec::with_capacity(windows.len());
        for (w, p) in windows.iter().zip(preds) {
            pred_rows.push(p.row(s - 1).to_vec());
            let truth: Vec<f64> = w
                .target
                .row(s - 1)
                .iter()
                .map(|&v| v * ds.max_speed())
                .collect();
            let timestamp = w.start_index + history_steps + s - 1;
            for node in 0..n {
                plot.push(PlotRow {
                    timestamp,
                    node,
                    truth: truth[node],
                    pred: pred_rows.last().unwrap()[node],
                    horizon_min: h_min,
                });
            }
            truth_rows.push(truth);
        }
        let pred_m = DenseMatrix::from_rows(&pred_rows)?;
        let truth_m = DenseMatrix::from_rows(&truth_rows)?;
        horizons.push(HorizonReport {
            horizon_min: h_min,
            steps: s,
            metrics: metrics(&pred_m, &truth_m)?,
        });
    }
    Ok(ForecastReport { horizons, plot })
}

/// Evaluates a trained model over the evaluation split: deterministic
/// operator (no dropout), one rollout per window to the farthest requested
/// horizon, metrics on denormalized values.
pub fn evaluate(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    map_adjacency: &Adjacency,
    ds: &SpeedDataset,
    horizons_min: &[usize],
) -> Result<ForecastReport> {
    if horizons_min.is_empty() {
        return Ok(ForecastReport::default());
    }
    let steps = horizon_steps(ds, horizons_min)?;
    let max_steps = *steps.iter().max().expect("non-empty");
    let t = model_cfg.history_steps;
    let windows = make_windows(ds, t, max_steps, Split::Eval)?;
    let base = normalize_with_self_loops(map_adjacency)?;
    let mut eval_cfg = model_cfg.clone();
    eval_cfg.horizon_steps = max_steps;
    let mut preds = Vec::with_capacity(windows.len());
    for w in &windows {
        let p = forecast(params, &eval_cfg, &base, &w.history)?;
        preds.push(ds.denormalize(&p));
    }
    report_from_predictions(ds, &windows, &preds, t, horizons_min, &steps)
}

/// The historical-average prediction for one window: each future step
/// repeats the per-node mean of the `history` rows.
pub fn ha_forecast(history: &DenseMatrix, steps: usize) -> DenseMatrix {
    let (t, n) = history.shape();
    let mut out = DenseMatrix::zeros(steps, n);
    for j in 0..n {
        let mean = (0..t).map(|i| history.get(i, j)).sum::<f64>() / t as f64;
        for s in 0..steps {
            out.set(s, j, mean);
        }
    }
    out
}

/// Historical-average baseline evaluated with the exact protocol of
/// [`evaluate`]: same windows, same pooling, same denormalization.
pub fn historical_average(
    ds: &SpeedDataset,
    history_steps: usize,
    horizons_min: &[usize],
) -> Result<ForecastReport> {
    if horizons_min.is_empty() {
        return Ok(ForecastReport::default());
    }
    let steps = horizon_steps(ds, horizons_min)?;
    let max_steps = *steps.iter().max().expect("non-empty");
    let windows = make_windows(ds, history_steps, max_steps, Split::Eval)?;
    let preds: Vec<DenseMatrix> = windows
        .iter()
        .map(|w| ds.denormalize(&ha_forecast(&w.history, max_steps)))
        .collect();
    report_from_predictions(ds, &windows, &preds, history_steps, horizons_min, &steps)
}

/// Writes the metric table: one row per horizon, four-decimal fixed
/// precision. An empty report produces a header-only file.
pub fn write_metrics_csv(report: &ForecastReport, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let write = |out: &mut std::io::BufWriter<std::fs::File>, line: String| {
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))
    };
    write(&mut out, "horizon_min,rmse,mae,acc,r2,var".to_string())?;
    for h in &report.horizons {
        let m = &h.metrics;
        write(
            &mut out,
            format!(
                "{},{:.4},{:.4},{:.4},{:.4},{:.4}",
                h.horizon_min, m.rmse, m.mae, m.acc, m.r2, m.var
            ),
        )?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes the long-form plotting series: one row per (window, horizon,
/// node) with full-precision values.
pub fn write_plotdata_csv(report: &ForecastReport, path: &Path) -> Result<()> {
    let rows: Vec<[f64; 5]> = report
        .plot
        .iter()
        .map(|r| {
            [
                r.timestamp as f64,
                r.node as f64,
                r.truth,
                r.pred,
                r.horizon_min as f64,
            ]
        })
        .collect();
    csvnum::write_rows(
        path,
        Some("timestamp,node,truth,pred,horizon_min"),
        rows.iter().map(|r| r.as_slice()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthesize;
    use crate::util::{stream_rng, streams};
    use rand::Rng;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> DenseMatrix {
        DenseMatrix::from_vec(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_scores_perfectly() {
        let t = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let m = metrics(&t, &t).unwrap();
        assert_eq!((m.rmse, m.mae), (0.0, 0.0));
        assert_eq!((m.acc, m.r2, m.var), (1.0, 1.0, 1.0));
    }

    #[test]
    fn predicting_the_mean_gives_r2_zero() {
        let truth = mat(1, 4, &[1.0, 2.0, 3.0, 6.0]);
        let pred = DenseMatrix::filled(1, 4, 3.0);
        let m = metrics(&pred, &truth).unwrap();
        assert!(m.r2.abs() < 1e-15);
        assert!(m.var.abs() < 1e-15);
    }

    #[test]
    fn hand_evaluated_example_pins_all_five_formulas() {
        let truth = mat(3, 1, &[1.0, 2.0, 3.0]);
        let pred = mat(3, 1, &[1.0, 2.0, 4.0]);
        let m = metrics(&pred, &truth).unwrap();
        assert!((m.rmse - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((m.mae - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.acc - (1.0 - 1.0 / 14.0f64.sqrt())).abs() < 1e-15);
        assert!((m.r2 - 0.5).abs() < 1e-15);
        // Errors are (0, 0, −1): Var = 2/9 against truth Var 2/3.
        assert!((m.var - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_truth_is_a_numerical_error() {
        let truth = DenseMatrix::filled(2, 3, 5.0);
        let pred = mat(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let err = metrics(&pred, &truth).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert!(err.to_string().contains("constant"), "{err}");
    }

    #[test]
    fn metrics_are_invariant_under_entry_permutation() {
        let mut rng = stream_rng(1, "eval-perm");
        let truth: Vec<f64> = (0..12).map(|_| rng.gen_range(1.0..10.0)).collect();
        let pred: Vec<f64> = truth.iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect();
        let a = metrics(&mat(3, 4, &pred), &mat(3, 4, &truth)).unwrap();
        // Reverse both in lockstep (a permutation of the pooled entries).
        let truth_r: Vec<f64> = truth.iter().rev().copied().collect();
        let pred_r: Vec<f64> = pred.iter().rev().copied().collect();
        let b = metrics(&mat(4, 3, &pred_r), &mat(4, 3, &truth_r)).unwrap();
        assert!((a.rmse - b.rmse).abs() < 1e-15);
        assert!((a.mae - b.mae).abs() < 1e-15);
        assert!((a.acc - b.acc).abs() < 1e-15);
        assert!((a.r2 - b.r2).abs() < 1e-15);
        assert!((a.var - b.var).abs() < 1e-15);
    }

    #[test]
    fn growing_noise_degrades_rmse_and_mae() {
        let mut rng = stream_rng(2, "eval-noise");
        let truth: Vec<f64> = (0..200).map(|_| rng.gen_range(10.0..60.0)).collect();
        let truth_m = mat(20, 10, &truth);
        let mut last_rmse = 0.0;
        let mut last_mae = 0.0;
        for scale in [0.5, 2.0, 8.0] {
            // Average 50 draws per scale; orderings then hold far beyond 3σ.
            let mut rmse = 0.0;
            let mut mae = 0.0;
            for _ in 0..50 {
                let noisy: Vec<f64> = truth
                    .iter()
                    .map(|v| v + rng.gen_range(-scale..scale))
                    .collect();
                let m = metrics(&mat(20, 10, &noisy), &truth_m).unwrap();
                rmse += m.rmse / 50.0;
                mae += m.mae / 50.0;
            }
            assert!(rmse > last_rmse && mae > last_mae, "scale {scale}");
            last_rmse = rmse;
            last_mae = mae;
        }
    }

    #[test]
    fn denormalization_scales_rmse_and_mae_but_not_the_rest() {
        let mut rng = stream_rng(3, "eval-denorm");
        let truth: Vec<f64> = (0..30).map(|_| rng.gen_range(0.1..1.0)).collect();
        let pred: Vec<f64> = truth.iter().map(|v| v + rng.gen_range(-0.2..0.2)).collect();
        let norm = metrics(&mat(5, 6, &pred), &mat(5, 6, &truth)).unwrap();
        let max_speed = 71.3;
        let truth_raw: Vec<f64> = truth.iter().map(|v| v * max_speed).collect();
        let pred_raw: Vec<f64> = pred.iter().map(|v| v * max_speed).collect();
        let raw = metrics(&mat(5, 6, &pred_raw), &mat(5, 6, &truth_raw)).unwrap();
        assert!((raw.rmse - max_speed * norm.rmse).abs() < 1e-9);
        assert!((raw.mae - max_speed * norm.mae).abs() < 1e-9);
        assert!((raw.acc - norm.acc).abs() < 1e-12);
        assert!((raw.r2 - norm.r2).abs() < 1e-12);
        assert!((raw.var - norm.var).abs() < 1e-12);
    }

    #[test]
    fn ha_forecast_repeats_the_history_mean() {
        let history = mat(4, 1, &[1.0, 1.0, 1.0, 3.0]);
        let pred = ha_forecast(&history, 3);
        for s in 0..3 {
            assert_eq!(pred.get(s, 0), 1.5);
        }
        // Constant history reproduces the constant exactly: zero error.
        let constant = DenseMatrix::filled(4, 2, 0.7);
        let pred = ha_forecast(&constant, 2);
        assert!(pred.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn zero_parameter_model_scores_acc_consistent_with_metrics() {
        let mut rng = stream_rng(4, streams::SYNTH);
        let (ds, adj) = synthesize(5, 60, 15, &mut rng).unwrap();
        let cfg = ModelConfig {
            hidden: 8,
            history_steps: 4,
            horizon_steps: 1,
            ..ModelConfig::default()
        };
        let params = ModelParams::zeros(5, &cfg).unwrap();
        let report = evaluate(&params, &cfg, &adj, &ds, &[15]).unwrap();
        // Zero parameters decode to exactly 0 at every step.
        let windows = make_windows(&ds, 4, 1, Split::Eval).unwrap();
        let truth_rows: Vec<Vec<f64>> = windows
            .iter()
            .map(|w| w.target.row(0).iter().map(|&v| v * ds.max_speed()).collect())
            .collect();
        let truth = DenseMatrix::from_rows(&truth_rows).unwrap();
        let zeros = DenseMatrix::zeros(truth.rows(), truth.cols());
        let direct = metrics(&zeros, &truth).unwrap();
        let got = report.horizons[0].metrics;
        assert!((got.acc - direct.acc).abs() < 1e-12);
        assert!((got.rmse - direct.rmse).abs() < 1e-12);
        assert!(report.plot.iter().all(|r| r.pred == 0.0));
    }

    #[test]
    fn report_rows_map_fifteen_minute_horizons_to_steps() {
        let mut rng = stream_rng(5, streams::SYNTH);
        let (ds, adj) = synthesize(4, 80, 15, &mut rng).unwrap();
        let cfg = ModelConfig {
            hidden: 8,
            history_steps: 4,
            horizon_steps: 1,
            ..ModelConfig::default()
        };
        let params = ModelParams::zeros(4, &cfg).unwrap();
        let report = evaluate(&params, &cfg, &adj, &ds, &[15, 30, 45, 60]).unwrap();
        let steps: Vec<usize> = report.horizons.iter().map(|h| h.steps).collect();
        assert_eq!(steps, vec![1, 2, 3, 4]);
        let mins: Vec<usize> = report.horizons.iter().map(|h| h.horizon_min).collect();
        assert_eq!(mins, vec![15, 30, 45, 60]);

        // A horizon that is not a multiple of the interval is a config error.
        let err = evaluate(&params, &cfg, &adj, &ds, &[20]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn historical_average_matches_the_evaluate_protocol() {
        let mut rng = stream_rng(6, streams::SYNTH);
        let (ds, _) = synthesize(4, 80, 15, &mut rng).unwrap();
        let report = historical_average(&ds, 4, &[15, 60]).unwrap();
        assert_eq!(report.horizons.len(), 2);
        for h in &report.horizons {
            assert!(h.metrics.rmse > 0.0);
            assert!(h.metrics.acc < 1.0);
        }
        // Window count pins the plot shape: eval split 16 rows, t=4, T=4.
        let windows = make_windows(&ds, 4, 4, Split::Eval).unwrap();
        assert_eq!(report.plot.len(), windows.len() * 2 * 4);
    }

    #[test]
    fn emitted_csv_round_trips_to_four_decimals() {
        let mut rng = stream_rng(7, streams::SYNTH);
        let (ds, _) = synthesize(4, 80, 15, &mut rng).unwrap();
        let report = historical_average(&ds, 4, &[15, 30]).unwrap();
        let dir = tempfile::tempdir().unwrap();

        let mpath = dir.path().join("metrics.csv");
        write_metrics_csv(&report, &mpath).unwrap();
        let lines = csvnum::read_lines(&mpath).unwrap();
        assert_eq!(lines[0], "horizon_min,rmse,mae,acc,r2,var");
        assert_eq!(lines.len(), 3);
        for (i, line) in lines[1..].iter().enumerate() {
            let row = csvnum::parse_row(line, i + 2, &mpath).unwrap();
            let h = &report.horizons[i];
            assert_eq!(row[0], h.horizon_min as f64);
            let want = [
                h.metrics.rmse,
                h.metrics.mae,
                h.metrics.acc,
                h.metrics.r2,
                h.metrics.var,
            ];
            for (got, want) in row[1..].iter().zip(want) {
                assert!((got - want).abs() < 5e-5, "{got} vs {want}");
            }
        }

        let ppath = dir.path().join("plot.csv");
        write_plotdata_csv(&report, &ppath).unwrap();
        let plines = csvnum::read_lines(&ppath).unwrap();
        assert_eq!(plines[0], "timestamp,node,truth,pred,horizon_min");
        assert_eq!(plines.len(), 1 + report.plot.len());

        // Empty report → header-only metric CSV.
        let empty = ForecastReport::default();
        let epath = dir.path().join("empty.csv");
        write_metrics_csv(&empty, &epath).unwrap();
        assert_eq!(csvnum::read_lines(&epath).unwrap(), vec!["horizon_min,rmse,mae,acc,r2,var"]);
    }
}

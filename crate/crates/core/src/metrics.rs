//! Metric rows and their CSV serialization.
//!
//! Floats are written with Rust's shortest-roundtrip formatting, so parsing
//! a written file recovers the exact values and re-serializing yields
//! byte-identical output.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pisa::TraceRow;

/// One training iteration's summary row.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// Cumulative environment steps (not agent steps) after this iteration.
    pub env_steps: usize,
    /// Mean return over episodes completed during this iteration; carries
    /// the previous value forward when none completed.
    pub mean_return: f64,
    pub return_p2_5: f64,
    pub return_p97_5: f64,
    /// Mean reconstruction RMSE over every encode this iteration
    /// (0 when the arm does not communicate).
    pub recon_rmse_mean: f64,
    pub kl: f64,
    pub entropy: f64,
}

const METRICS_HEADER: &str =
    "iteration,env_steps,mean_return,return_p2.5,return_p97.5,recon_rmse_mean,kl,entropy";

pub fn metrics_to_csv(rows: &[IterationMetrics]) -> String {
    let mut out = String::new();
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.iteration,
            r.env_steps,
            r.mean_return,
            r.return_p2_5,
            r.return_p97_5,
            r.recon_rmse_mean,
            r.kl,
            r.entropy
        );
    }
    out
}

pub fn write_metrics_csv(path: &Path, rows: &[IterationMetrics]) -> Result<()> {
    std::fs::write(path, metrics_to_csv(rows))?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<IterationMetrics>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == METRICS_HEADER => {}
        other => {
            return Err(Error::Format(format!(
                "bad metrics header: {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        let f = split_fields(line, 8, ln)?;
        rows.push(IterationMetrics {
            iteration: parse_usize(f[0], ln)?,
            env_steps: parse_usize(f[1], ln)?,
            mean_return: parse_f64(f[2], ln)?,
            return_p2_5: parse_f64(f[3], ln)?,
            return_p97_5: parse_f64(f[4], ln)?,
            recon_rmse_mean: parse_f64(f[5], ln)?,
            kl: parse_f64(f[6], ln)?,
            entropy: parse_f64(f[7], ln)?,
        });
    }
    Ok(rows)
}

const LOSS_HEADER: &str = "iteration,total_loss,element_loss,card_loss";

pub fn loss_trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::new();
    out.push_str(LOSS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.iteration, r.total, r.element, r.cardinality);
    }
    out
}

pub fn write_loss_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    std::fs::write(path, loss_trace_to_csv(rows))?;
    Ok(())
}

pub fn read_loss_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == LOSS_HEADER => {}
        other => {
            return Err(Error::Format(format!(
                "bad loss trace header: {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        let f = split_fields(line, 4, ln)?;
        rows.push(TraceRow {
            iteration: parse_usize(f[0], ln)?,
            total: parse_f64(f[1], ln)?,
            element: parse_f64(f[2], ln)?,
            cardinality: parse_f64(f[3], ln)?,
        });
    }
    Ok(rows)
}

/// Cross-seed summary of one training iteration: mean of the per-seed mean
/// returns plus the central 95% interval (2.5th/97.5th percentiles).
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub iteration: usize,
    pub mean_return: f64,
    pub return_p2_5: f64,
    pub return_p97_5: f64,
}

const AGGREGATE_HEADER: &str = "iteration,mean_return,return_p2.5,return_p97.5";

/// Folds per-seed metric curves into one aggregate curve. All runs must
/// cover the same iterations.
pub fn aggregate_metrics(per_seed: &[Vec<IterationMetrics>]) -> Result<Vec<AggregateRow>> {
    if per_seed.is_empty() || per_seed[0].is_empty() {
        return Err(Error::Usage("aggregate needs at least one non-empty run".into()));
    }
    let len = per_seed[0].len();
    if per_seed.iter().any(|run| run.len() != len) {
        return Err(Error::Shape("runs have different iteration counts".into()));
    }
    let mut rows = Vec::with_capacity(len);
    for it in 0..len {
        if per_seed.iter().any(|run| run[it].iteration != per_seed[0][it].iteration) {
            return Err(Error::Shape(format!(
                "iteration indices disagree across runs at position {it}"
            )));
        }
        let returns: Vec<f64> = per_seed.iter().map(|run| run[it].mean_return).collect();
        rows.push(AggregateRow {
            iteration: per_seed[0][it].iteration,
            mean_return: crate::util::mean(&returns),
            return_p2_5: crate::util::percentile(&returns, 2.5),
            return_p97_5: crate::util::percentile(&returns, 97.5),
        });
    }
    Ok(rows)
}

pub fn aggregate_to_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::new();
    out.push_str(AGGREGATE_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.iteration, r.mean_return, r.return_p2_5, r.return_p97_5
        );
    }
    out
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    std::fs::write(path, aggregate_to_csv(rows))?;
    Ok(())
}

pub fn read_aggregate_csv(path: &Path) -> Result<Vec<AggregateRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == AGGREGATE_HEADER => {}
        other => {
            return Err(Error::Format(format!(
                "bad aggregate header: {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        let f = split_fields(line, 4, ln)?;
        rows.push(AggregateRow {
            iteration: parse_usize(f[0], ln)?,
            mean_return: parse_f64(f[1], ln)?,
            return_p2_5: parse_f64(f[2], ln)?,
            return_p97_5: parse_f64(f[3], ln)?,
        });
    }
    Ok(rows)
}

/// One monitor decision.
#[derive(Debug, Clone, PartialEq)]
pub struct OodRow {
    pub iteration: usize,
    /// Mean reconstruction loss over the trailing window.
    pub window_recon_loss: f64,
    pub threshold: f64,
    pub ood_flag: bool,
}

const OOD_HEADER: &str = "iteration,window_recon_loss,threshold,ood_flag";

pub fn ood_to_csv(rows: &[OodRow]) -> String {
    let mut out = String::new();
    out.push_str(OOD_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.iteration,
            r.window_recon_loss,
            r.threshold,
            if r.ood_flag { 1 } else { 0 }
        );
    }
    out
}

pub fn write_ood_csv(path: &Path, rows: &[OodRow]) -> Result<()> {
    std::fs::write(path, ood_to_csv(rows))?;
    Ok(())
}

pub fn read_ood_csv(path: &Path) -> Result<Vec<OodRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == OOD_HEADER => {}
        other => {
            return Err(Error::Format(format!(
                "bad ood header: {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.enumerate() {
        let f = split_fields(line, 4, ln)?;
        rows.push(OodRow {
            iteration: parse_usize(f[0], ln)?,
            window_recon_loss: parse_f64(f[1], ln)?,
            threshold: parse_f64(f[2], ln)?,
            ood_flag: match f[3] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Format(format!(
                        "line {}: ood_flag must be 0 or 1, got '{other}'",
                        ln + 2
                    )))
                }
            },
        });
    }
    Ok(rows)
}

/// One agent-step of an evaluation trajectory dump.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub agent: usize,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub reward: f64,
}

const TRAJECTORY_HEADER: &str = "step,agent,x,y,vx,vy,reward";

pub fn trajectory_to_csv(rows: &[TrajectoryRow]) -> String {
    let mut out = String::new();
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.step, r.agent, r.x, r.y, r.vx, r.vy, r.reward
        );
    }
    out
}

pub fn write_trajectory_csv(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    std::fs::write(path, trajectory_to_csv(rows))?;
    Ok(())
}

fn split_fields(line: &str, want: usize, ln: usize) -> Result<Vec<&str>> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != want {
        return Err(Error::Format(format!(
            "line {}: expected {want} fields, got {}",
            ln + 2,
            fields.len()
        )));
    }
    Ok(fields)
}

fn parse_usize(s: &str, ln: usize) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Format(format!("line {}: bad integer '{s}'", ln + 2)))
}

fn parse_f64(s: &str, ln: usize) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Format(format!("line {}: bad float '{s}'", ln + 2)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_metrics() -> Vec<IterationMetrics> {
        vec![
            IterationMetrics {
                iteration: 0,
                env_steps: 2000,
                mean_return: 1.5,
                return_p2_5: -0.25,
                return_p97_5: 3.75,
                recon_rmse_mean: 0.0123,
                kl: 0.004,
                entropy: 2.83,
            },
            IterationMetrics {
                iteration: 1,
                env_steps: 4000,
                mean_return: 0.1 + 0.2, // deliberately non-representable exactly
                return_p2_5: f64::MIN_POSITIVE,
                return_p97_5: 1e300,
                recon_rmse_mean: 0.3333333333333333,
                kl: 0.0,
                entropy: -1.0,
            },
        ]
    }

    #[test]
    fn metrics_roundtrip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let rows = sample_metrics();
        write_metrics_csv(&path, &rows).unwrap();
        let back = read_metrics_csv(&path).unwrap();
        assert_eq!(rows, back);

        // Serialization is deterministic at the byte level.
        let a = metrics_to_csv(&rows);
        let b = metrics_to_csv(&back);
        assert_eq!(a, b);
        assert!(a.starts_with(
            "iteration,env_steps,mean_return,return_p2.5,return_p97.5,recon_rmse_mean,kl,entropy\n"
        ));
    }

    #[test]
    fn loss_trace_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let rows = vec![
            TraceRow {
                iteration: 0,
                total: 3.5,
                element: 1.25,
                cardinality: 2.25,
            },
            TraceRow {
                iteration: 1,
                total: 0.7,
                element: 0.2,
                cardinality: 0.5,
            },
        ];
        write_loss_trace_csv(&path, &rows).unwrap();
        assert_eq!(read_loss_trace_csv(&path).unwrap(), rows);
    }

    #[test]
    fn ood_roundtrip_and_flag_encoding() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ood.csv");
        let rows = vec![
            OodRow {
                iteration: 0,
                window_recon_loss: 0.5,
                threshold: 1.0,
                ood_flag: false,
            },
            OodRow {
                iteration: 1,
                window_recon_loss: 1.5,
                threshold: 1.0,
                ood_flag: true,
            },
        ];
        write_ood_csv(&path, &rows).unwrap();
        assert_eq!(read_ood_csv(&path).unwrap(), rows);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("0,0.5,1,0\n"));
        assert!(text.contains("1,1.5,1,1\n"));
    }

    #[test]
    fn aggregate_matches_hand_computation() {
        // Three seeds, two iterations. Returns chosen so the percentile
        // interpolation is easy to verify by hand: sorted [1, 2, 4],
        // rank(2.5%) = 0.05 -> 1.05, rank(97.5%) = 1.95 -> 3.9.
        let mk = |returns: [f64; 2]| -> Vec<IterationMetrics> {
            returns
                .iter()
                .enumerate()
                .map(|(i, &r)| IterationMetrics {
                    iteration: i,
                    env_steps: (i + 1) * 100,
                    mean_return: r,
                    return_p2_5: 0.0,
                    return_p97_5: 0.0,
                    recon_rmse_mean: 0.0,
                    kl: 0.0,
                    entropy: 0.0,
                })
                .collect()
        };
        let per_seed = vec![mk([1.0, 10.0]), mk([4.0, 30.0]), mk([2.0, 20.0])];
        let agg = aggregate_metrics(&per_seed).unwrap();
        assert_eq!(agg.len(), 2);
        assert!((agg[0].mean_return - 7.0 / 3.0).abs() < 1e-15);
        assert!((agg[0].return_p2_5 - 1.05).abs() < 1e-12);
        assert!((agg[0].return_p97_5 - 3.9).abs() < 1e-12);
        assert_eq!(agg[1].mean_return, 20.0);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("aggregate.csv");
        write_aggregate_csv(&path, &agg).unwrap();
        assert_eq!(read_aggregate_csv(&path).unwrap(), agg);
    }

    #[test]
    fn aggregate_rejects_misaligned_runs() {
        let row = IterationMetrics {
            iteration: 0,
            env_steps: 1,
            mean_return: 0.0,
            return_p2_5: 0.0,
            return_p97_5: 0.0,
            recon_rmse_mean: 0.0,
            kl: 0.0,
            entropy: 0.0,
        };
        let a = vec![row.clone(), IterationMetrics { iteration: 1, ..row.clone() }];
        let b = vec![row.clone()];
        assert!(aggregate_metrics(&[a, b]).is_err());
        assert!(aggregate_metrics(&[]).is_err());
    }

    #[test]
    fn readers_reject_malformed_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "wrong,header\n1,2\n").unwrap();
        assert!(matches!(read_metrics_csv(&path), Err(Error::Format(_))));
        assert!(matches!(read_ood_csv(&path), Err(Error::Format(_))));

        std::fs::write(
            &path,
            format!("{}\n1,2,3\n", "iteration,total_loss,element_loss,card_loss"),
        )
        .unwrap();
        assert!(matches!(read_loss_trace_csv(&path), Err(Error::Format(_))));
    }
}

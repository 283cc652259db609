//! Experiment report: a comma-separated table with columns
//! `method,seed,f1,accuracy,test_mse,stopped_epoch`, one row per seed in
//! ascending seed order, then `mean` and `std` aggregate rows per method.
//! Formatting is fixed-width decimal so identical inputs render identical
//! bytes.

use std::path::Path;

use crate::error::Result;
use crate::training::{mean_std, RunResult};

pub const REPORT_HEADER: &str = "method,seed,f1,accuracy,test_mse,stopped_epoch";

fn num(v: f64) -> String {
    format!("{v:.6}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "na".into())
}

/// Render one or more method results into the report table.
pub fn render_report(results: &[RunResult]) -> String {
    let mut out = String::new();
    out.push_str(REPORT_HEADER);
    out.push('\n');
    for run in results {
        let method = run.method.as_str();
        let mut rows: Vec<usize> = (0..run.seeds.len()).collect();
        rows.sort_by_key(|&i| run.seeds[i].seed);
        for i in rows {
            let s = &run.seeds[i];
            out.push_str(&format!(
                "{method},{},{},{},{},{}\n",
                s.seed,
                num(s.f1),
                num(s.accuracy),
                opt(s.test_mse),
                s.stopped_epoch
            ));
        }
        let f1 = run.f1_stats();
        let acc = run.accuracy_stats();
        let mse = run.mse_stats();
        let epochs = mean_std(
            &run.seeds.iter().map(|s| s.stopped_epoch as f64).collect::<Vec<_>>(),
        );
        out.push_str(&format!(
            "{method},mean,{},{},{},{}\n",
            num(f1.mean),
            num(acc.mean),
            opt(mse.map(|m| m.mean)),
            num(epochs.mean)
        ));
        out.push_str(&format!(
            "{method},std,{},{},{},{}\n",
            num(f1.std),
            num(acc.std),
            opt(mse.map(|m| m.std)),
            num(epochs.std)
        ));
    }
    out
}

pub fn write_report(path: &Path, results: &[RunResult]) -> Result<()> {
    std::fs::write(path, render_report(results))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{Method, SeedResult};

    fn seed(seed: u64, f1: f64, mse: Option<f64>) -> SeedResult {
        SeedResult {
            seed,
            f1,
            accuracy: f1,
            test_mse: mse,
            stopped_epoch: 10 + seed as usize,
        }
    }

    #[test]
    fn five_seeds_render_seven_data_rows() {
        let run = RunResult {
            method: Method::Joint,
            seeds: (0..5).map(|s| seed(s, 0.9 + s as f64 * 0.01, Some(0.05))).collect(),
        };
        let text = render_report(&[run]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], REPORT_HEADER);
        assert_eq!(lines.len() - 1, 7, "5 seed rows + mean + std:\n{text}");
        assert!(lines[6].starts_with("joint,mean,"));
        assert!(lines[7].starts_with("joint,std,"));
    }

    #[test]
    fn rows_are_ordered_by_seed_value() {
        let run = RunResult {
            method: Method::BaselineReal,
            seeds: vec![seed(2, 0.8, None), seed(0, 0.9, None), seed(1, 0.85, None)],
        };
        let text = render_report(&[run]);
        let seeds: Vec<&str> = text
            .lines()
            .skip(1)
            .take(3)
            .map(|l| l.split(',').nth(1).unwrap())
            .collect();
        assert_eq!(seeds, ["0", "1", "2"]);
    }

    #[test]
    fn missing_mse_renders_na_everywhere() {
        let run = RunResult {
            method: Method::BaselineReal,
            seeds: vec![seed(0, 0.9, None), seed(1, 0.9, None)],
        };
        let text = render_report(&[run]);
        for line in text.lines().skip(1) {
            assert_eq!(line.split(',').nth(4).unwrap(), "na", "{line}");
        }
    }

    #[test]
    fn aggregates_match_hand_computation() {
        let run = RunResult {
            method: Method::Joint,
            seeds: vec![seed(0, 0.8, Some(0.04)), seed(1, 0.9, Some(0.06))],
        };
        let text = render_report(&[run]);
        let mean_line = text.lines().find(|l| l.contains(",mean,")).unwrap();
        let std_line = text.lines().find(|l| l.contains(",std,")).unwrap();
        let mean: Vec<&str> = mean_line.split(',').collect();
        assert_eq!(mean[2], "0.850000");
        assert_eq!(mean[4], "0.050000");
        let std: Vec<&str> = std_line.split(',').collect();
        // Population std of {0.8, 0.9} is 0.05.
        assert_eq!(std[2], "0.050000");
        assert_eq!(std[4], "0.010000");
    }

    #[test]
    fn multiple_methods_stack_in_one_table() {
        let a = RunResult {
            method: Method::Joint,
            seeds: vec![seed(0, 0.9, Some(0.05))],
        };
        let b = RunResult {
            method: Method::RegressionFirst,
            seeds: vec![seed(0, 0.8, Some(0.03))],
        };
        let text = render_report(&[a, b]);
        assert_eq!(text.lines().count(), 1 + 3 + 3);
        assert_eq!(text.matches(",mean,").count(), 2);
        let rendered_again = render_report(&[
            RunResult {
                method: Method::Joint,
                seeds: vec![seed(0, 0.9, Some(0.05))],
            },
            RunResult {
                method: Method::RegressionFirst,
                seeds: vec![seed(0, 0.8, Some(0.03))],
            },
        ]);
        assert_eq!(text, rendered_again, "writer must be byte-deterministic");
    }
}

//! CSV outputs. Every table has a header row named after the struct fields.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<R>, _>>()?;
    Ok(rows)
}

/// One evaluation of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRow {
    pub trial: usize,
    pub epoch: usize,
    pub mean_eval_reward: f64,
    /// Extremes over the evaluation episodes.
    pub min: f64,
    pub max: f64,
}

/// Across-trial statistics of the mean evaluation reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub setup: String,
    pub epoch: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconRow {
    pub env: String,
    pub method: String,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub mse: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestRow {
    pub env: String,
    pub metric: String,
    pub method_a: String,
    pub method_b: String,
    pub t: f64,
    pub dof: f64,
    pub p: f64,
    pub level: f64,
    pub significant: bool,
}

/// Per-epoch mean, min and max of `rows`' mean rewards over trials.
pub fn aggregate_rewards(setup: &str, rows: &[RewardRow]) -> Vec<AggregateRow> {
    let epochs = rows.iter().map(|r| r.epoch + 1).max().unwrap_or(0);
    (0..epochs)
        .filter_map(|e| {
            let v: Vec<f64> = rows.iter().filter(|r| r.epoch == e).map(|r| r.mean_eval_reward).collect();
            (!v.is_empty()).then(|| AggregateRow {
                setup: setup.to_string(),
                epoch: e,
                mean: v.iter().sum::<f64>() / v.len() as f64,
                min: v.iter().copied().fold(f64::INFINITY, f64::min),
                max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                trials: v.len(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let rows = vec![ReconRow {
            env: "simple".into(),
            method: "image".into(),
            fp: 1.5,
            fn_: 2.0,
            mse: 3.25,
            n: 10,
        }];
        write_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("env,method,fp,fn,mse,n\n"), "{text}");
        assert_eq!(read_csv::<ReconRow>(&path).unwrap(), rows);
    }

    #[test]
    fn aggregation() {
        let row = |trial, epoch, m| RewardRow {
            trial,
            epoch,
            mean_eval_reward: m,
            min: -1.0,
            max: 1.0,
        };
        let rows = vec![row(0, 0, 0.0), row(1, 0, 1.0), row(2, 0, 0.5), row(0, 1, -1.0)];
        let agg = aggregate_rewards("x", &rows);
        assert_eq!(agg.len(), 2);
        assert_eq!((agg[0].mean, agg[0].min, agg[0].max, agg[0].trials), (0.5, 0.0, 1.0, 3));
        assert_eq!(agg[1].mean, -1.0);
    }
}

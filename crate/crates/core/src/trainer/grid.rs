use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::train::TrainReport;
use super::{TrainConfig, TrainError};
use crate::losses::MarginConfig;

/// One row of the margin-versus-validation-MRR table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginRow {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha: f64,
    pub val_mrr: Option<f64>,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub best_index: usize,
    pub best_config: TrainConfig,
    pub reports: Vec<TrainReport>,
    pub table: Vec<MarginRow>,
}

/// Every valid margin combination applied to `base`, in nested order
/// `alpha1`, `alpha2`, `alpha`.
pub fn margin_grid(base: &TrainConfig, alpha1: &[f64], alpha2: &[f64], alpha: &[f64]) -> Vec<TrainConfig> {
    let mut out = Vec::new();
    for &a1 in alpha1 {
        for &a2 in alpha2 {
            for &a in alpha {
                let margins = MarginConfig { alpha1: a1, alpha2: a2, alpha: a };
                if margins.validate().is_ok() {
                    out.push(TrainConfig { margins, ..base.clone() });
                }
            }
        }
    }
    out
}

/// Trains every config and keeps the one with the highest validation MRR;
/// ties go to the lower validation loss, then to the earlier config.
pub fn grid_search<F>(configs: &[TrainConfig], mut train_fn: F) -> Result<GridOutcome, TrainError>
where
    F: FnMut(&TrainConfig) -> Result<TrainReport, TrainError>,
{
    if configs.is_empty() {
        return Err(TrainError::EmptyGrid);
    }
    let mut reports = Vec::with_capacity(configs.len());
    for c in configs {
        reports.push(train_fn(c)?);
    }
    let key = |r: &TrainReport| (r.best_val_mrr().unwrap_or(f64::NEG_INFINITY), r.best_val_loss().unwrap_or(f64::INFINITY));
    let mut best_index = 0;
    for i in 1..reports.len() {
        let (m, l) = key(&reports[i]);
        let (bm, bl) = key(&reports[best_index]);
        let better = match m.total_cmp(&bm) {
            Ordering::Greater => true,
            Ordering::Equal => l < bl,
            Ordering::Less => false,
        };
        if better {
            best_index = i;
        }
    }
    let table = configs
        .iter()
        .zip(&reports)
        .map(|(c, r)| MarginRow {
            alpha1: c.margins.alpha1,
            alpha2: c.margins.alpha2,
            alpha: c.margins.alpha,
            val_mrr: r.best_val_mrr(),
            val_loss: r.best_val_loss(),
        })
        .collect();
    Ok(GridOutcome { best_index, best_config: configs[best_index].clone(), reports, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::EpochRecord;

    fn report(mrr: f64, loss: f64) -> TrainReport {
        TrainReport {
            stage: "t".into(),
            epochs: vec![EpochRecord { epoch: 1, train_loss: 0.0, val_loss: Some(loss), val_mrr: Some(mrr) }],
            best_epoch: 1,
            initial_val_mrr: None,
            stopped_early: false,
            train_units: 0,
            val_units: 0,
            final_params_hash: String::new(),
            wall_time_secs: 0.0,
        }
    }

    #[test]
    fn selection_rules() {
        let configs = margin_grid(&TrainConfig::default(), &[0.1, 0.2], &[0.4], &[0.2]);
        assert_eq!(configs.len(), 2);
        let scores = [(0.5, 0.3), (0.5, 0.2)];
        let out = grid_search(&configs, |c| {
            let i = if c.margins.alpha1 == 0.1 { 0 } else { 1 };
            Ok(report(scores[i].0, scores[i].1))
        })
        .unwrap();
        assert_eq!(out.best_index, 1);
        assert_eq!(out.table.len(), 2);
        let single = grid_search(&configs[..1], |_| Ok(report(0.1, 0.1))).unwrap();
        assert_eq!(single.best_index, 0);
        let tie = grid_search(&configs, |_| Ok(report(0.1, 0.1))).unwrap();
        assert_eq!(tie.best_index, 0);
        assert!(grid_search(&[], |_| Ok(report(0.0, 0.0))).is_err());
    }

    #[test]
    fn invalid_margins_are_skipped() {
        let configs = margin_grid(&TrainConfig::default(), &[0.2, 0.5], &[0.4], &[0.2]);
        assert_eq!(configs.len(), 1);
    }
}

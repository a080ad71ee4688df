use std::fmt;

use serde::{Deserialize, Serialize};

use super::data::TrainUnit;
use super::train::{prefinetune, pretrain_cc, pretrain_doc, TrainReport};
use super::{TrainConfig, TrainError};
use crate::encoder::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Doc,
    Cc,
    /// Doc and CC units mixed into the same batches.
    DocCcJoint,
    Prefinetune,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Doc => "doc",
            Stage::Cc => "cc",
            Stage::DocCcJoint => "doc+cc",
            Stage::Prefinetune => "prefinetune",
        })
    }
}

/// A model moving through the training stages. Pre-training stages must
/// precede pre-fine-tuning and each stage runs at most once.
#[derive(Debug, Clone)]
pub struct Pipeline {
    model: Model<f64>,
    stages: Vec<Stage>,
    reports: Vec<TrainReport>,
}

impl Pipeline {
    pub fn new(model: Model<f64>) -> Self {
        Self { model, stages: Vec::new(), reports: Vec::new() }
    }

    /// Resumes from a model that already went through `stages`.
    pub fn resume(model: Model<f64>, stages: Vec<Stage>) -> Self {
        Self { model, stages, reports: Vec::new() }
    }

    pub fn model(&self) -> &Model<f64> {
        &self.model
    }

    pub fn into_model(self) -> Model<f64> {
        self.model
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn reports(&self) -> &[TrainReport] {
        &self.reports
    }

    fn admit(&self, next: Stage) -> Result<(), TrainError> {
        let pretraining = |s: Stage| matches!(s, Stage::Doc | Stage::Cc | Stage::DocCcJoint);
        for &previous in &self.stages {
            let conflict = previous == next
                || previous == Stage::Prefinetune
                || (pretraining(next) && (previous == Stage::DocCcJoint || next == Stage::DocCcJoint));
            if conflict {
                return Err(TrainError::StageOrder { previous, next });
            }
        }
        Ok(())
    }

    pub fn run(&mut self, stage: Stage, units: &[TrainUnit], config: &TrainConfig) -> Result<&TrainReport, TrainError> {
        self.admit(stage)?;
        let report = match stage {
            Stage::Doc => pretrain_doc(&mut self.model, units, config)?,
            Stage::Cc => pretrain_cc(&mut self.model, units, config)?,
            Stage::DocCcJoint => {
                let mut r = pretrain_doc(&mut self.model, units, config)?;
                r.stage = stage.to_string();
                r
            }
            Stage::Prefinetune => prefinetune(&mut self.model, units, config)?,
        };
        self.stages.push(stage);
        self.reports.push(report);
        Ok(self.reports.last().expect("just pushed"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderShape, FacetMode};

    #[test]
    fn stage_order_is_enforced() {
        let m = Model::init(EncoderShape::new(8, 2, 2), FacetMode::Prefixed, "v", 0).unwrap();
        let p = Pipeline::resume(m.clone(), vec![Stage::Prefinetune]);
        assert!(matches!(p.admit(Stage::Doc), Err(TrainError::StageOrder { .. })));
        let p = Pipeline::resume(m.clone(), vec![Stage::Doc]);
        assert!(p.admit(Stage::Cc).is_ok());
        assert!(p.admit(Stage::Doc).is_err());
        assert!(p.admit(Stage::DocCcJoint).is_err());
        assert!(p.admit(Stage::Prefinetune).is_ok());
        assert!(Pipeline::new(m).admit(Stage::Prefinetune).is_ok());
    }
}

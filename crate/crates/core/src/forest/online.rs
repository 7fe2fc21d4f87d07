use serde::{Deserialize, Serialize};

use super::{Forest, ForestConfig, ForestError, Sample, UpdateReport};
use crate::model::Millis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlinePredictorConfig {
    pub forest: ForestConfig,
    /// Observations collected before the initial fit.
    pub initial_samples: usize,
    /// Feature returned as the estimate while untrained (the history prior).
    pub fallback_feature: usize,
}

impl Default for OnlinePredictorConfig {
    fn default() -> Self {
        OnlinePredictorConfig {
            forest: ForestConfig::default(),
            initial_samples: 200,
            fallback_feature: crate::profiling::IDX_HIST_EXEC,
        }
    }
}

/// Two-phase predictor: answers from a feature prior until enough samples
/// exist for `train_initial`, then from the forest with incremental updates.
#[derive(Debug, Clone)]
pub struct OnlinePredictor {
    pub config: OnlinePredictorConfig,
    forest: Option<Forest>,
    pending: Vec<Sample>,
    reports: Vec<UpdateReport>,
}

impl OnlinePredictor {
    pub fn new(config: OnlinePredictorConfig) -> Self {
        OnlinePredictor {
            config,
            forest: None,
            pending: Vec::new(),
            reports: Vec::new(),
        }
    }

    pub fn from_forest(config: OnlinePredictorConfig, forest: Forest) -> Self {
        OnlinePredictor {
            config,
            forest: Some(forest),
            pending: Vec::new(),
            reports: Vec::new(),
        }
    }

    /// Fits the forest on `samples` now, discarding anything pending.
    pub fn pretrain(&mut self, samples: Vec<Sample>) -> Result<(), ForestError> {
        self.forest = Some(Forest::train_initial(self.config.forest.clone(), samples)?);
        self.pending.clear();
        Ok(())
    }

    pub fn is_trained(&self) -> bool {
        self.forest.is_some()
    }

    pub fn forest(&self) -> Option<&Forest> {
        self.forest.as_ref()
    }

    pub fn reports(&self) -> &[UpdateReport] {
        &self.reports
    }

    pub fn predict(&self, x: &[f64]) -> Millis {
        let floor = self.config.forest.min_prediction_ms;
        match &self.forest {
            Some(f) => f.predict(x).unwrap_or(floor),
            None => x
                .get(self.config.fallback_feature)
                .copied()
                .unwrap_or(floor)
                .max(floor),
        }
    }

    pub fn observe(
        &mut self,
        sample: Sample,
        now: Millis,
    ) -> Result<Option<UpdateReport>, ForestError> {
        match &mut self.forest {
            Some(f) => {
                let r = f.observe(sample, now)?;
                if let Some(r) = &r {
                    self.reports.push(r.clone());
                }
                Ok(r)
            }
            None => {
                self.pending.push(sample);
                if self.pending.len() >= self.config.initial_samples.max(1) {
                    let batch = std::mem::take(&mut self.pending);
                    self.forest = Some(Forest::train_initial(self.config.forest.clone(), batch)?);
                }
                Ok(None)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> OnlinePredictorConfig {
        OnlinePredictorConfig {
            forest: ForestConfig {
                trees: 5,
                min_leaf_size: 1,
                ..Default::default()
            },
            initial_samples: 10,
            fallback_feature: 1,
        }
    }

    #[test]
    fn prior_until_trained() {
        let mut p = OnlinePredictor::new(cfg());
        assert_eq!(p.predict(&[3.0, 750.0]), 750.0);
        for i in 0..10 {
            let x = vec![i as f64, 750.0];
            p.observe(Sample { x, y: 100.0 }, i as f64).unwrap();
        }
        assert!(p.is_trained());
        assert_eq!(p.predict(&[3.0, 750.0]), 100.0);
    }
}

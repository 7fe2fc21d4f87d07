use std::sync::{Arc, Mutex, PoisonError, RwLock};

use super::{Forest, ForestError, Sample, UpdateReport};
use crate::model::Millis;

/// A forest that many threads can query while one thread updates it.
///
/// Readers clone the current `Arc` and predict without holding a lock. The
/// learner works on its own copy under a mutex and publishes a new snapshot
/// after each refit, so predictions keep coming from the previous forest
/// while an update is in progress.
#[derive(Debug)]
pub struct SharedForest {
    published: RwLock<Arc<Forest>>,
    learner: Mutex<Forest>,
}

impl SharedForest {
    pub fn new(forest: Forest) -> Self {
        SharedForest {
            published: RwLock::new(Arc::new(forest.clone())),
            learner: Mutex::new(forest),
        }
    }

    pub fn snapshot(&self) -> Arc<Forest> {
        Arc::clone(
            &self
                .published
                .read()
                .unwrap_or_else(PoisonError::into_inner),
        )
    }

    pub fn predict(&self, x: &[f64]) -> Result<Millis, ForestError> {
        self.snapshot().predict(x)
    }

    pub fn observe(
        &self,
        sample: Sample,
        now: Millis,
    ) -> Result<Option<UpdateReport>, ForestError> {
        let mut learner = self.learner.lock().unwrap_or_else(PoisonError::into_inner);
        let report = learner.observe(sample, now)?;
        if report.is_some() {
            let fresh = Arc::new(learner.clone());
            *self
                .published
                .write()
                .unwrap_or_else(PoisonError::into_inner) = fresh;
        }
        Ok(report)
    }
}

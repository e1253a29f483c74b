use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{ClassLabel, FieldError, ImageRecord};

/// Labels a record. Implementations must be deterministic per record.
pub trait Classifier {
    fn name(&self) -> String;
    fn classify(&self, record: &ImageRecord) -> Result<(ClassLabel, f64), FieldError>;
}

/// Returns the ground-truth label with full confidence.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleClassifier;

impl Classifier for OracleClassifier {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn classify(&self, record: &ImageRecord) -> Result<(ClassLabel, f64), FieldError> {
        Ok((record.payload.true_class, 1.0))
    }
}

/// The oracle with label noise: with probability `epsilon` a record gets one
/// of the three other classes, uniformly. The draw is keyed by `seed` and the
/// record id, so a record is always labelled the same way.
#[derive(Debug, Clone, Copy)]
pub struct NoisyOracle {
    pub epsilon: f64,
    pub seed: u64,
}

impl NoisyOracle {
    pub fn new(epsilon: f64, seed: u64) -> Result<Self, FieldError> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(FieldError::InvalidClassifier(format!(
                "epsilon {epsilon} outside [0, 1]"
            )));
        }
        Ok(NoisyOracle { epsilon, seed })
    }
}

impl Classifier for NoisyOracle {
    fn name(&self) -> String {
        format!("noisy_oracle(epsilon={}, seed={})", self.epsilon, self.seed)
    }

    fn classify(&self, record: &ImageRecord) -> Result<(ClassLabel, f64), FieldError> {
        let truth = record.payload.true_class;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(record.record_id);
        let u: f64 = rng.gen();
        let label = if u < self.epsilon {
            let k = rng.gen_range(1..ClassLabel::ALL.len());
            ClassLabel::ALL[(truth.index() + k) % ClassLabel::ALL.len()]
        } else {
            truth
        };
        Ok((label, 1.0 - self.epsilon))
    }
}

/// Classifier selection as written in scenario and API documents.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassifierSpec {
    #[default]
    Oracle,
    NoisyOracle {
        epsilon: f64,
        seed: u64,
    },
}

impl ClassifierSpec {
    pub fn build(&self) -> Result<Box<dyn Classifier + Send + Sync>, FieldError> {
        Ok(match *self {
            ClassifierSpec::Oracle => Box::new(OracleClassifier),
            ClassifierSpec::NoisyOracle { epsilon, seed } => Box::new(NoisyOracle::new(epsilon, seed)?),
        })
    }
}

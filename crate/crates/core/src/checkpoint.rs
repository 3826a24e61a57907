//! Versioned checkpoint container: model parameters, the normalization
//! manifest they were trained under, and the dataset tag binding the two.
//! JSON with shortest-round-trip float formatting, so save -> load -> predict
//! is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::NormalizationManifest;
use crate::error::{Error, Result};
use crate::forest::Forest;
use crate::model::Model;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TrainedClassifier {
    Cnn(Model),
    Forest(Forest),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub classifier: TrainedClassifier,
    pub normalization: NormalizationManifest,
    /// Tag of the dataset the model was trained on; attribution refuses
    /// mismatched datasets.
    pub dataset_tag: String,
    /// Trial ids of the hold-out test set the model was never trained on.
    #[serde(default)]
    pub test_trial_ids: Vec<u64>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Dataset(format!("cannot open checkpoint {}: {e}", path.display())))?;
        let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{AU_ROWS, FRAMES};
    use crate::model::{build_cnn_a, Architecture, ModelConfig};
    use crate::tensor::Tensor;

    #[test]
    fn round_trip_preserves_predictions_bit_exactly() {
        let cfg = ModelConfig::new(Architecture::CnnA).with_seed(123);
        let mut model = build_cnn_a(&cfg).unwrap();
        model.trained = true;
        let manifest = NormalizationManifest {
            version: 1,
            min: vec![0.0; AU_ROWS],
            max: vec![1.0; AU_ROWS],
        };
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            classifier: TrainedClassifier::Cnn(model.clone()),
            normalization: manifest,
            dataset_tag: "synth-0-100".into(),
            test_trial_ids: vec![1, 2, 3],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();

        let mut batch = Tensor::zeros(&[3, 1, AU_ROWS, FRAMES]);
        for (i, v) in batch.data_mut().iter_mut().enumerate() {
            *v = ((i * 17 % 101) as f64) / 101.0;
        }
        let TrainedClassifier::Cnn(back) = loaded.classifier else {
            panic!("wrong classifier kind");
        };
        let before = model.predict_proba(&batch).unwrap();
        let after = back.predict_proba(&batch).unwrap();
        assert_eq!(before, after);
        assert_eq!(loaded.dataset_tag, "synth-0-100");
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt.json");
        let cfg = ModelConfig::new(Architecture::CnnA).with_seed(1);
        let model = build_cnn_a(&cfg).unwrap();
        let ckpt = Checkpoint {
            version: 99,
            classifier: TrainedClassifier::Cnn(model),
            normalization: NormalizationManifest {
                version: 1,
                min: vec![0.0; AU_ROWS],
                max: vec![1.0; AU_ROWS],
            },
            dataset_tag: String::new(),
            test_trial_ids: vec![],
        };
        let file = std::fs::File::create(&path).unwrap();
        serde_json::to_writer(file, &ckpt).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}

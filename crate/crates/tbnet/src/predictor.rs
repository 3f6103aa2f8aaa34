//! A trained network behind the evaluation interface.

use std::path::Path;

use tbnet_core::evaluate::Predictor;
use tbnet_core::{checkpoint, ImageTensor, NetworkConfig, PredictionPair, TbNet};
use tbnet_tensor::ParamStore;

use crate::error::{AppError, AppResult};

pub struct NetPredictor {
    pub net: TbNet,
    pub store: ParamStore<f32>,
    pub batch: usize,
}

impl NetPredictor {
    /// Loads a checkpoint whose configuration must equal `expected`.
    pub fn load(dir: &Path, expected: &NetworkConfig, batch: usize) -> AppResult<Self> {
        if dir.as_os_str().is_empty() {
            return Err(AppError::config("no checkpoint given (set `checkpoint`)"));
        }
        let manifest = checkpoint::read_manifest(dir)?;
        if &manifest.config != expected {
            return Err(AppError::config(format!(
                "checkpoint {} was trained with a different network configuration; \
                 pass the run_config.txt written next to it",
                dir.display()
            )));
        }
        let (net, store, _) = checkpoint::load::<f32>(dir)?;
        Ok(Self { net, store, batch: batch.max(1) })
    }

    /// Predictions at each image's own size; inputs of another size are resized
    /// to the network resolution and the logits resized back.
    pub fn predict_pairs(&mut self, images: &[ImageTensor]) -> AppResult<Vec<PredictionPair>> {
        let size = self.net.config().input_size;
        let resized: Vec<ImageTensor> = images
            .iter()
            .map(|i| if i.height() == size && i.width() == size { i.clone() } else { i.resize(size, size) })
            .collect();
        let preds = self.net.predict(&mut self.store, &resized, self.batch)?;
        Ok(preds
            .into_iter()
            .zip(images)
            .map(|(mut p, img)| {
                let (h, w) = (img.height(), img.width());
                if (h, w) != (size, size) {
                    p.region_logits = p.region_logits.resize(h, w);
                    p.boundary_logits = p.boundary_logits.map(|b| b.resize(h, w));
                }
                p
            })
            .collect())
    }
}

impl Predictor for NetPredictor {
    fn predict_probs(&mut self, images: &[ImageTensor]) -> tbnet_core::Result<Vec<Vec<f64>>> {
        let preds = self.predict_pairs(images).map_err(|e| tbnet_core::Error::Data(e.message))?;
        Ok(preds.into_iter().map(|p| p.region_probability().data().to_vec()).collect())
    }

    fn batch_size(&self) -> usize {
        self.batch
    }
}

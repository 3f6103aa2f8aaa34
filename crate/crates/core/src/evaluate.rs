//! Dataset-level scoring of a predictor, with an optional attack.

use crate::attacks::apply_attack;
use crate::corpus::{Corpus, CorpusEntry};
use crate::error::Result;
use crate::image::{BinaryMask, ImageTensor};
use crate::metrics::{score_mask, Attack, ImageScore, MetricsReport};

/// Anything that maps images to tamper-probability maps of the same size.
pub trait Predictor {
    /// One `H×W` probability map per image, row-major.
    fn predict_probs(&mut self, images: &[ImageTensor]) -> Result<Vec<Vec<f64>>>;

    /// How many images to pass per call.
    fn batch_size(&self) -> usize {
        8
    }
}

/// Attack → predict → score, for every entry. Unreadable samples are recorded
/// in `skipped`; prediction failures abort.
pub fn evaluate_dataset<P: Predictor + ?Sized>(
    model: &mut P,
    corpus: &Corpus,
    entries: &[&CorpusEntry],
    attack: Option<Attack>,
    threshold: f64,
) -> Result<MetricsReport> {
    let mut scores = Vec::with_capacity(entries.len());
    let mut skipped = Vec::new();
    for chunk in entries.chunks(model.batch_size().max(1)) {
        let mut ids = Vec::new();
        let mut images = Vec::new();
        let mut masks: Vec<BinaryMask> = Vec::new();
        for e in chunk {
            let loaded = corpus.load(e).and_then(|(img, mask)| match &attack {
                Some(a) => apply_attack(&img, a).map(|img| (img, mask)),
                None => Ok((img, mask)),
            });
            match loaded {
                Ok((img, mask)) => {
                    ids.push(e.id.clone());
                    images.push(img);
                    masks.push(mask);
                }
                Err(_) => skipped.push(e.id.clone()),
            }
        }
        if images.is_empty() {
            continue;
        }
        let probs = model.predict_probs(&images)?;
        for ((id, p), m) in ids.into_iter().zip(probs).zip(&masks) {
            let (mcc, f1) = score_mask(&p, m, threshold)?;
            scores.push(ImageScore { id, mcc, f1 });
        }
    }
    Ok(MetricsReport::new(scores, threshold, attack, skipped))
}

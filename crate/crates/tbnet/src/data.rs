//! Corpus samples held in memory at network resolution.

use tbnet_core::corpus::{Corpus, Split};
use tbnet_core::morphology::make_boundary_gt;
use tbnet_core::synth::BOUNDARY_KERNEL;
use tbnet_core::{BinaryMask, ImageTensor};

use crate::error::{AppError, AppResult};

#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub image: ImageTensor,
    pub mask: BinaryMask,
    pub edge: BinaryMask,
}

pub fn parse_split(name: &str) -> AppResult<Split> {
    Split::parse(name).ok_or_else(|| AppError::config(format!("unknown split {name:?} (train or test)")))
}

/// Loads every sample of `split`, resized to `size²` when needed.
pub fn load_samples(corpus: &Corpus, split: Split, size: usize) -> AppResult<Vec<Sample>> {
    let entries = corpus.split(split);
    if entries.is_empty() {
        return Err(AppError::data(format!("corpus {} has no {} samples", corpus.root.display(), split.name())));
    }
    entries
        .into_iter()
        .map(|e| {
            let (mut image, mut mask) = corpus.load(e)?;
            if image.height() != size || image.width() != size {
                image = image.resize(size, size);
                mask = mask.resize_nearest(size, size);
            }
            let edge = make_boundary_gt(&mask, BOUNDARY_KERNEL);
            Ok(Sample { id: e.id.clone(), image, mask, edge })
        })
        .collect()
}

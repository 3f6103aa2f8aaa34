//! On-disk corpus layout.
//!
//! ```text
//! root/
//!   index.csv            id,split,manipulation,image,mask,meta
//!   images/NNNNNN.png
//!   masks/NNNNNN.png     8-bit, 0 or 255
//!   meta/NNNNNN.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, ImageTensor};
use crate::synth::{generate_sample, manipulation_schedule, mix_seed, CorpusOptions, Manipulation, Provenance, SourceImages};

pub const INDEX_FILE: &str = "index.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Self::Train),
            "test" => Some(Self::Test),
            _ => None,
        }
    }
}

/// One row of `index.csv`; paths are relative to the corpus root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub split: Split,
    pub manipulation: Manipulation,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub meta: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: String,
    pub split: Split,
    pub manipulation: Manipulation,
    pub seed: u64,
    pub area_fraction: f64,
    pub provenance: Option<Provenance>,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub root: PathBuf,
    pub entries: Vec<CorpusEntry>,
}

impl Corpus {
    pub fn open(root: &Path) -> Result<Self> {
        let index = root.join(INDEX_FILE);
        if !index.is_file() {
            return Err(Error::Data(format!("corpus manifest {} not found", index.display())));
        }
        let mut rdr = csv::Reader::from_path(&index)?;
        let entries = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<CorpusEntry>, _>>()
            .map_err(|e| Error::Data(format!("{}: {e}", index.display())))?;
        Ok(Self { root: root.to_path_buf(), entries })
    }

    pub fn split(&self, split: Split) -> Vec<&CorpusEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn load(&self, entry: &CorpusEntry) -> Result<(ImageTensor, BinaryMask)> {
        let img = image::open(self.root.join(&entry.image))
            .map_err(|e| Error::Data(format!("{}: {e}", entry.image.display())))?
            .to_rgb8();
        let mask = image::open(self.root.join(&entry.mask))
            .map_err(|e| Error::Data(format!("{}: {e}", entry.mask.display())))?
            .to_luma8();
        let img = ImageTensor::from_rgb8(&img);
        let mask = BinaryMask::from_gray8(&mask);
        if (img.height(), img.width()) != (mask.height(), mask.width()) {
            return Err(Error::Data(format!("{}: image and mask sizes differ", entry.id)));
        }
        Ok((img, mask))
    }
}

/// Counts per manipulation kind, as written.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub train: usize,
    pub test: usize,
    pub copy_move: usize,
    pub splice: usize,
    pub authentic: usize,
}

/// Generates and writes a corpus. Sample `i` depends only on `(opts, i)`.
pub fn write_corpus(root: &Path, sources: &SourceImages, opts: &CorpusOptions) -> Result<CorpusSummary> {
    opts.validate()?;
    for sub in ["images", "masks", "meta"] {
        fs::create_dir_all(root.join(sub))?;
    }
    let mut wtr = csv::Writer::from_path(root.join(INDEX_FILE))?;
    let mut summary = CorpusSummary::default();
    let mut index = 0u64;
    for (split, count, salt) in [(Split::Train, opts.train_count, 0x7472u64), (Split::Test, opts.test_count, 0x7465)] {
        let kinds = manipulation_schedule(count, opts, mix_seed(opts.seed, salt));
        for kind in kinds {
            let id = format!("{index:06}");
            let seed = mix_seed(opts.seed, index);
            let sample = generate_sample(sources, opts, kind, seed)?;
            let entry = CorpusEntry {
                id: id.clone(),
                split,
                manipulation: kind,
                image: PathBuf::from(format!("images/{id}.png")),
                mask: PathBuf::from(format!("masks/{id}.png")),
                meta: PathBuf::from(format!("meta/{id}.json")),
            };
            sample.image.to_rgb8()?.save(root.join(&entry.image))?;
            sample.region_mask.to_gray8().save(root.join(&entry.mask))?;
            let meta = SampleMeta {
                id,
                split,
                manipulation: kind,
                seed,
                area_fraction: sample.region_mask.area_fraction(),
                provenance: sample.provenance,
            };
            fs::write(root.join(&entry.meta), serde_json::to_string_pretty(&meta)?)?;
            wtr.serialize(&entry)?;
            match split {
                Split::Train => summary.train += 1,
                Split::Test => summary.test += 1,
            }
            match kind {
                Manipulation::CopyMove => summary.copy_move += 1,
                Manipulation::Splice => summary.splice += 1,
                Manipulation::Authentic => summary.authentic += 1,
            }
            index += 1;
        }
    }
    wtr.flush()?;
    Ok(summary)
}

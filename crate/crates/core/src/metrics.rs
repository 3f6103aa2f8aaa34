//! Pixel-level F1 and MCC, and per-image report aggregation.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::BinaryMask;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    /// Binarises with `p > threshold`; a tie counts as negative.
    pub fn from_probs(pred: &[f64], gt: &BinaryMask, threshold: f64) -> Result<Self> {
        if pred.len() != gt.data().len() {
            return Err(Error::Shape(format!("prediction has {} pixels, mask {}", pred.len(), gt.data().len())));
        }
        let mut c = Self::default();
        for (&p, &y) in pred.iter().zip(gt.data()) {
            match (p > threshold, y != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn f1(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / den as f64
        }
    }

    pub fn mcc(&self) -> f64 {
        let (tp, fp, fn_, tn) = (self.tp as f64, self.fp as f64, self.fn_ as f64, self.tn as f64);
        let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        if den == 0.0 {
            0.0
        } else {
            (tp * tn - fp * fn_) / den
        }
    }
}

/// `(mcc, f1)` of a probability map against a binary mask.
pub fn score_mask(pred: &[f64], gt: &BinaryMask, threshold: f64) -> Result<(f64, f64)> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold {threshold} must lie in (0, 1)")));
    }
    let c = Confusion::from_probs(pred, gt, threshold)?;
    Ok((c.mcc(), c.f1()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parameter", rename_all = "lowercase")]
pub enum Attack {
    Jpeg(u8),
    Scale(f64),
}

impl Attack {
    /// The robustness protocol, in report order (`None` first).
    pub const PROTOCOL: [Option<Attack>; 5] =
        [None, Some(Attack::Jpeg(70)), Some(Attack::Jpeg(50)), Some(Attack::Scale(0.7)), Some(Attack::Scale(0.5))];

    pub fn tag(&self) -> String {
        match self {
            Self::Jpeg(q) => format!("jpeg{q}"),
            Self::Scale(r) => format!("scale{r}"),
        }
    }

    pub fn parse(tag: &str) -> Option<Self> {
        if let Some(q) = tag.strip_prefix("jpeg") {
            q.parse().ok().map(Self::Jpeg)
        } else if let Some(r) = tag.strip_prefix("scale") {
            r.parse().ok().map(Self::Scale)
        } else {
            None
        }
    }
}

/// Tag of an optional attack; `"none"` when absent.
pub fn attack_tag(attack: Option<&Attack>) -> String {
    attack.map_or_else(|| "none".to_owned(), Attack::tag)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub mcc: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_image: Vec<ImageScore>,
    pub mean_mcc: f64,
    pub mean_f1: f64,
    pub threshold: f64,
    pub attack: Option<Attack>,
    /// Always `"per-image mean"`: metrics are averaged over images, not pooled over pixels.
    pub averaging: String,
    /// Samples that could not be read or scored.
    pub skipped: Vec<String>,
}

/// Serialised summary (no per-image rows).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub attack: String,
    pub images: usize,
    pub skipped: usize,
    pub mean_mcc: f64,
    pub mean_f1: f64,
    pub threshold: f64,
    pub averaging: String,
}

impl MetricsReport {
    pub fn new(per_image: Vec<ImageScore>, threshold: f64, attack: Option<Attack>, skipped: Vec<String>) -> Self {
        let n = per_image.len().max(1) as f64;
        let mean_mcc = per_image.iter().map(|s| s.mcc).sum::<f64>() / n;
        let mean_f1 = per_image.iter().map(|s| s.f1).sum::<f64>() / n;
        Self { per_image, mean_mcc, mean_f1, threshold, attack, averaging: "per-image mean".into(), skipped }
    }

    pub fn tag(&self) -> String {
        attack_tag(self.attack.as_ref())
    }

    pub fn summary(&self) -> ReportSummary {
        ReportSummary {
            attack: self.tag(),
            images: self.per_image.len(),
            skipped: self.skipped.len(),
            mean_mcc: self.mean_mcc,
            mean_f1: self.mean_f1,
            threshold: self.threshold,
            averaging: self.averaging.clone(),
        }
    }

    /// Per-image rows behind a commented header line naming the averaging rule.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        writeln!(
            file,
            "# attack={} threshold={} averaging={}",
            self.tag(),
            self.threshold,
            self.averaging
        )?;
        let mut w = csv::Writer::from_writer(file);
        for row in &self.per_image {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Vec<ImageScore>> {
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
        Ok(r.deserialize().collect::<std::result::Result<Vec<ImageScore>, _>>()?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.summary())?)?;
        Ok(())
    }

    /// `eval_<tag>.csv` and `eval_<tag>.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let tag = self.tag();
        self.write_csv(&dir.join(format!("eval_{tag}.csv")))?;
        self.write_json(&dir.join(format!("eval_{tag}.json")))
    }
}

//! Run configuration: a flat `key = value` file whose keys double as CLI flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tbnet_core::backbone::BackboneDepth;
use tbnet_core::losses::Lambdas;
use tbnet_core::metrics::Attack;
use tbnet_core::synth::{CorpusOptions, ForgeryOptions};
use tbnet_core::{Ablation, FrequencyNorm, NetworkConfig};

use crate::error::{AppError, AppResult};

/// Environment variable naming the directory relative `output` paths resolve against.
pub const OUTPUT_ROOT_ENV: &str = "TBNET_OUTPUT_ROOT";
/// File name the effective configuration is persisted under.
pub const CONFIG_FILE: &str = "run_config.txt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Corpus root (contains `index.csv`).
    pub corpus: PathBuf,
    /// Output directory; empty means `runs/<command>`.
    pub output: PathBuf,
    /// Checkpoint directory read by eval, predict and attack-eval.
    pub checkpoint: PathBuf,
    /// Image file or directory for predict.
    pub input: PathBuf,
    /// `procedural` or a directory of authentic photos.
    pub sources: String,

    /// One of rnet, fnet, tnet, tnet+acf, rnet+bal, fnet+bal, tnet+bal, tbnet.
    /// When set it overrides the four `use-*` flags.
    pub ablation: String,
    pub use_rgb: bool,
    pub use_frequency: bool,
    pub use_acf: bool,
    pub use_bal: bool,
    pub backbone: BackboneDepth,
    pub input_size: usize,
    pub afs_out_channels: usize,
    pub bal_channels: usize,
    pub bal_units: usize,
    pub block_size: usize,
    pub reduction: usize,
    pub frequency_norm: FrequencyNorm,
    pub decoder_channels: usize,
    pub skip_channels: usize,

    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many steps (0 = run all epochs).
    pub max_steps: usize,
    pub lambda_region: f64,
    pub lambda_boundary: f64,
    pub lambda_aware: f64,
    /// Intermediate checkpoint interval in steps (0 = final only).
    pub checkpoint_every: usize,
    /// Batches prepared ahead of the trainer.
    pub prefetch: usize,

    /// Corpus split scored by eval and attack-eval.
    pub split: String,
    /// `none`, `jpeg<q>` or `scale<r>`.
    pub attack: String,
    pub threshold: f64,
    pub heatmap: bool,

    pub train_count: usize,
    pub test_count: usize,
    /// Side of generated samples.
    pub sample_size: usize,
    /// Side of the authentic scene each sample is cut from.
    pub source_size: usize,
    pub copy_move_fraction: f64,
    pub authentic_fraction: f64,
    pub min_area: f64,
    pub max_area: f64,
    pub seam_blur: usize,
    pub flips: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = NetworkConfig::default();
        let lambdas = Lambdas::default();
        let data = CorpusOptions::default();
        Self {
            seed: 0,
            corpus: PathBuf::from("corpus"),
            output: PathBuf::new(),
            checkpoint: PathBuf::new(),
            input: PathBuf::new(),
            sources: "procedural".into(),
            ablation: String::new(),
            use_rgb: net.use_rgb,
            use_frequency: net.use_frequency,
            use_acf: net.use_acf,
            use_bal: net.use_bal,
            backbone: net.backbone,
            input_size: net.input_size,
            afs_out_channels: net.afs_out_channels,
            bal_channels: net.bal_channels,
            bal_units: net.bal_units,
            block_size: net.block_size,
            reduction: net.reduction,
            frequency_norm: net.frequency_norm,
            decoder_channels: net.decoder_channels,
            skip_channels: net.skip_channels,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 8,
            epochs: 30,
            max_steps: 0,
            lambda_region: lambdas.region,
            lambda_boundary: lambdas.boundary,
            lambda_aware: lambdas.aware,
            checkpoint_every: 0,
            prefetch: 2,
            split: "test".into(),
            attack: "none".into(),
            threshold: tbnet_core::metrics::DEFAULT_THRESHOLD,
            heatmap: true,
            train_count: data.train_count,
            test_count: data.test_count,
            sample_size: data.block_size,
            source_size: data.source_size,
            copy_move_fraction: data.copy_move_fraction,
            authentic_fraction: data.authentic_fraction,
            min_area: data.forgery.min_area,
            max_area: data.forgery.max_area,
            seam_blur: data.forgery.seam_blur,
            flips: data.flips,
        }
    }
}

fn as_map(cfg: &RunConfig) -> Map<String, Value> {
    match serde_json::to_value(cfg) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("RunConfig serialises to an object"),
    }
}

/// Every configuration key, in declaration order.
pub fn keys() -> Vec<String> {
    // serde_json's map is sorted; recover declaration order from the serialised text
    let text = serde_json::to_string(&RunConfig::default()).expect("serialisable");
    let map = as_map(&RunConfig::default());
    let mut keys: Vec<(usize, String)> =
        map.keys().map(|k| (text.find(&format!("\"{k}\":")).unwrap_or(usize::MAX), k.clone())).collect();
    keys.sort();
    keys.into_iter().map(|(_, k)| k).collect()
}

/// Parses `raw` into the JSON type the default value of `key` has.
fn typed(key: &str, raw: &str, template: &Value) -> AppResult<Value> {
    let raw = raw.trim();
    let bad = || AppError::config(format!("invalid value {raw:?} for key {key:?}"));
    Ok(match template {
        Value::Bool(_) => Value::Bool(match raw {
            "true" | "yes" | "1" => true,
            "false" | "no" | "0" => false,
            _ => return Err(bad()),
        }),
        Value::Number(n) if n.is_f64() => {
            Value::from(raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad)?)
        }
        Value::Number(_) => Value::from(raw.parse::<u64>().map_err(|_| bad())?),
        _ => Value::String(raw.to_owned()),
    })
}

impl RunConfig {
    /// Applies `key = value` overrides on top of `self`.
    pub fn with_overrides<'a>(&self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> AppResult<Self> {
        let mut map = as_map(self);
        let template = as_map(&RunConfig::default());
        for (key, raw) in pairs {
            let t = template.get(key).ok_or_else(|| AppError::config(format!("unknown configuration key {key:?}")))?;
            map.insert(key.to_owned(), typed(key, raw, t)?);
        }
        serde_json::from_value(Value::Object(map)).map_err(|e| AppError::config(e.to_string()))
    }

    /// Parses the flat file format: `key = value` lines, `#` comments.
    pub fn parse(text: &str) -> AppResult<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split_once('#').map_or(line, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| AppError::config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if pairs.iter().any(|(seen, _)| *seen == k) {
                return Err(AppError::config(format!("line {}: {k} is set twice", n + 1)));
            }
            pairs.push((k, v.trim()));
        }
        RunConfig::default().with_overrides(pairs)
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// The flat-file form; [`RunConfig::parse`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let map = as_map(self);
        let mut out = String::new();
        for k in keys() {
            let v = match &map[&k] {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Writes the configuration next to a command's outputs.
    pub fn persist(&self, dir: &Path) -> AppResult<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(CONFIG_FILE), self.to_text())?;
        Ok(())
    }

    pub fn network(&self) -> AppResult<NetworkConfig> {
        let mut net = NetworkConfig {
            backbone: self.backbone,
            input_size: self.input_size,
            afs_out_channels: self.afs_out_channels,
            bal_channels: self.bal_channels,
            bal_units: self.bal_units,
            block_size: self.block_size,
            reduction: self.reduction,
            frequency_norm: self.frequency_norm,
            decoder_channels: self.decoder_channels,
            skip_channels: self.skip_channels,
            use_rgb: self.use_rgb,
            use_frequency: self.use_frequency,
            use_acf: self.use_acf,
            use_bal: self.use_bal,
        };
        if !self.ablation.is_empty() {
            let ab: Ablation = self.ablation.parse()?;
            ab.apply(&mut net);
        }
        net.validate()?;
        Ok(net)
    }

    pub fn lambdas(&self) -> Lambdas {
        Lambdas { region: self.lambda_region, boundary: self.lambda_boundary, aware: self.lambda_aware }
    }

    pub fn attack(&self) -> AppResult<Option<Attack>> {
        match self.attack.as_str() {
            "none" | "" => Ok(None),
            tag => Attack::parse(tag).map(Some).ok_or_else(|| AppError::config(format!("unknown attack {tag:?}"))),
        }
    }

    pub fn corpus_options(&self) -> CorpusOptions {
        CorpusOptions {
            seed: self.seed,
            block_size: self.sample_size,
            source_size: self.source_size,
            train_count: self.train_count,
            test_count: self.test_count,
            copy_move_fraction: self.copy_move_fraction,
            authentic_fraction: self.authentic_fraction,
            flips: self.flips,
            forgery: ForgeryOptions {
                min_area: self.min_area,
                max_area: self.max_area,
                seam_blur: self.seam_blur,
                ..ForgeryOptions::default()
            },
        }
    }

    /// Checks what can be checked without touching the file system.
    pub fn validate(&self) -> AppResult<()> {
        self.network()?;
        self.attack()?;
        crate::data::parse_split(&self.split)?;
        self.corpus_options().validate()?;
        if self.batch_size == 0 {
            return Err(AppError::config("batch-size must be positive"));
        }
        if !(self.lr > 0.0) || self.momentum < 0.0 || self.weight_decay < 0.0 {
            return Err(AppError::config("optimizer settings must be non-negative with lr > 0"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(AppError::config("threshold must lie in (0, 1)"));
        }
        let l = self.lambdas();
        if l.region < 0.0 || l.boundary < 0.0 || l.aware < 0.0 {
            return Err(AppError::config("loss weights must be non-negative"));
        }
        Ok(())
    }

    /// Output directory for `command`, resolved against [`OUTPUT_ROOT_ENV`] when relative.
    pub fn output_dir(&self, command: &str) -> PathBuf {
        let out = if self.output.as_os_str().is_empty() { Path::new("runs").join(command) } else { self.output.clone() };
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if out.is_relative() => PathBuf::from(root).join(out),
            _ => out,
        }
    }
}

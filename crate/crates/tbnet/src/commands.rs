//! The non-training commands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tbnet_core::corpus::{write_corpus, Corpus, CorpusSummary};
use tbnet_core::evaluate::evaluate_dataset;
use tbnet_core::metrics::{attack_tag, Attack, MetricsReport, ReportSummary};
use tbnet_core::synth::SourceImages;
use tbnet_core::ImageTensor;

use crate::config::RunConfig;
use crate::data::parse_split;
use crate::error::{AppError, AppResult};
use crate::predictor::NetPredictor;
use crate::viz;

pub const ATTACK_SUMMARY: &str = "attack_summary";

pub fn generate_data(cfg: &RunConfig, out: &Path) -> AppResult<CorpusSummary> {
    cfg.validate()?;
    let sources = match cfg.sources.as_str() {
        "procedural" => SourceImages::Procedural,
        dir => SourceImages::from_dir(Path::new(dir))?,
    };
    let summary = write_corpus(out, &sources, &cfg.corpus_options())?;
    cfg.persist(out)?;
    Ok(summary)
}

fn evaluate_with(cfg: &RunConfig, model: &mut NetPredictor, corpus: &Corpus, attack: Option<Attack>) -> AppResult<MetricsReport> {
    let split = parse_split(&cfg.split)?;
    let entries = corpus.split(split);
    if entries.is_empty() {
        return Err(AppError::data(format!("corpus has no {} samples", split.name())));
    }
    Ok(evaluate_dataset(model, corpus, &entries, attack, cfg.threshold)?)
}

/// Scores one split under the configured attack; writes `eval_<tag>.{csv,json}`.
pub fn eval(cfg: &RunConfig, out: &Path) -> AppResult<MetricsReport> {
    cfg.validate()?;
    let mut model = NetPredictor::load(&cfg.checkpoint, &cfg.network()?, cfg.batch_size)?;
    let corpus = Corpus::open(&cfg.corpus)?;
    let report = evaluate_with(cfg, &mut model, &corpus, cfg.attack()?)?;
    report.write(out)?;
    cfg.persist(out)?;
    Ok(report)
}

/// Runs the robustness protocol: no attack, JPEG 70/50, scaling 0.7/0.5.
pub fn attack_eval(cfg: &RunConfig, out: &Path) -> AppResult<Vec<MetricsReport>> {
    cfg.validate()?;
    let mut model = NetPredictor::load(&cfg.checkpoint, &cfg.network()?, cfg.batch_size)?;
    let corpus = Corpus::open(&cfg.corpus)?;
    let mut reports = Vec::new();
    for attack in Attack::PROTOCOL {
        let report = evaluate_with(cfg, &mut model, &corpus, attack)?;
        report.write(out)?;
        reports.push(report);
    }
    let summary: Vec<ReportSummary> = reports.iter().map(MetricsReport::summary).collect();
    let mut w = csv::Writer::from_path(out.join(format!("{ATTACK_SUMMARY}.csv")))?;
    for row in &summary {
        w.serialize(row)?;
    }
    w.flush()?;
    std::fs::write(out.join(format!("{ATTACK_SUMMARY}.json")), serde_json::to_string_pretty(&summary)?)?;
    cfg.persist(out)?;
    Ok(reports)
}

/// Files written for one predicted image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionFiles {
    pub source: PathBuf,
    pub region: PathBuf,
    pub boundary: Option<PathBuf>,
    pub overlay: PathBuf,
    pub composite: PathBuf,
    pub heatmap: Option<PathBuf>,
    pub weights: Option<PathBuf>,
}

fn input_images(input: &Path) -> AppResult<Vec<PathBuf>> {
    if input.as_os_str().is_empty() {
        return Err(AppError::config("no input given (set `input`)"));
    }
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    match SourceImages::from_dir(input) {
        Ok(SourceImages::Photos(files)) => Ok(files),
        Ok(SourceImages::Procedural) => unreachable!(),
        Err(e) => Err(AppError::data(format!("{}: {e}", input.display()))),
    }
}

/// Probability maps, overlays and (optionally) channel-weight heatmaps for
/// every image under `input`.
pub fn predict(cfg: &RunConfig, out: &Path) -> AppResult<Vec<PredictionFiles>> {
    cfg.validate()?;
    let mut model = NetPredictor::load(&cfg.checkpoint, &cfg.network()?, cfg.batch_size)?;
    let block = model.net.config().block_size;
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for path in input_images(&cfg.input)? {
        let img = image::open(&path).map_err(|e| AppError::data(format!("{}: {e}", path.display())))?;
        let img = ImageTensor::from_rgb8(&img.to_rgb8());
        let pred = model.predict_pairs(std::slice::from_ref(&img))?.remove(0);
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_owned();
        let file = |suffix: &str| out.join(format!("{stem}_{suffix}.png"));
        let prob = pred.region_probability();
        let mut files = PredictionFiles {
            source: path.clone(),
            region: file("region"),
            boundary: None,
            overlay: file("overlay"),
            composite: file("composite"),
            heatmap: None,
            weights: None,
        };
        viz::probability_png(&prob).save(&files.region)?;
        viz::overlay_rgba(&prob, cfg.threshold).save(&files.overlay)?;
        viz::composite(&img, &prob, cfg.threshold).save(&files.composite)?;
        if let Some(b) = pred.boundary_probability() {
            let p = file("boundary");
            viz::probability_png(&b).save(&p)?;
            files.boundary = Some(p);
        }
        if let (true, Some(w)) = (cfg.heatmap, &pred.channel_weights) {
            let p = file("afs_heatmap");
            viz::render_heatmap(w, block).save(&p)?;
            let csv_path = out.join(format!("{stem}_afs_weights.csv"));
            let mut wtr = csv::Writer::from_path(&csv_path)?;
            wtr.write_record(["component", "index", "weight"])?;
            for (c, name) in viz::COMPONENTS.iter().enumerate() {
                for (i, v) in w.component(c, block).iter().enumerate() {
                    wtr.write_record([name.to_string(), i.to_string(), v.to_string()])?;
                }
            }
            wtr.flush()?;
            files.heatmap = Some(p);
            files.weights = Some(csv_path);
        }
        written.push(files);
    }
    cfg.persist(out)?;
    Ok(written)
}

/// Tags of the robustness protocol in report order.
pub fn protocol_tags() -> Vec<String> {
    Attack::PROTOCOL.iter().map(|a| attack_tag(a.as_ref())).collect()
}

//! Command-line pipeline: `curate`, `mask`, `train-eval`, `compare` and a
//! `synth` helper that writes a planted-signal dataset.
//!
//! Every command reads one JSON config ([`PipelineConfig`]); flags override
//! single config keys. Exit status is 0 on success, 2 for user or config
//! errors and 1 for internal failures.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curation::{
    cooccurrence, curate, curated_csv, parse_curated_csv, parse_manifest, split, CooccurrenceMatrix, CuratedTable,
    DEFAULT_CAP, DEFAULT_FRACTIONS,
};
use crate::error::{Error, Result};
use crate::imaging::{decode_image, encode_png_gray8, AugmentationConfig, GrayImage};
use crate::labels::{Label, LabelVector, ABNORMALITIES};
use crate::metrics::{
    aggregate, evaluate_split, format_auroc_table, format_prf_table, roc_points, select_thresholds, ExperimentReport,
    SplitMetrics, ThresholdSet,
};
use crate::model::{
    load_scores, no_finding_score, predict, scores_csv, train, EpochLog, LabeledImage, ModelConfig, ScoreVector,
    TrainConfig,
};
use crate::morphology::{apply_mask, expand_mask, DEFAULT_ERODE_RADIUS, DEFAULT_LOOSE_RADIUS, DEFAULT_TIGHT_RADIUS};
use crate::rng::GENERATOR_NAME;
use crate::segmenter::{fallback_segment, load_mask, mask_path, BoxPrompt, DEFAULT_FALLBACK_THRESHOLD};
use crate::stats::{mantel_test, paired_t_test, stats_csv, SquareMatrix, StatRow, DEFAULT_ALPHA};
use crate::synthetic::{write_dataset, SyntheticConfig};

pub const CURATED_FILE: &str = "curated.csv";
pub const COOCCURRENCE_FILE: &str = "cooccurrence.csv";
pub const CURATION_SUMMARY_FILE: &str = "curation_summary.json";
pub const MASK_SUMMARY_FILE: &str = "mask_summary.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MaskVariant {
    #[default]
    None,
    Tight,
    Loose,
}

impl MaskVariant {
    pub fn name(self) -> &'static str {
        match self {
            MaskVariant::None => "none",
            MaskVariant::Tight => "tight",
            MaskVariant::Loose => "loose",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationSettings {
    pub cap: usize,
    pub seed: u64,
}

impl Default for CurationSettings {
    fn default() -> Self {
        CurationSettings { cap: DEFAULT_CAP, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MorphologySettings {
    pub erode_radius: usize,
    pub tight_radius: usize,
    pub loose_radius: usize,
}

impl Default for MorphologySettings {
    fn default() -> Self {
        MorphologySettings {
            erode_radius: DEFAULT_ERODE_RADIUS,
            tight_radius: DEFAULT_TIGHT_RADIUS,
            loose_radius: DEFAULT_LOOSE_RADIUS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FallbackSettings {
    /// Pixels darker than this inside the box become foreground.
    pub threshold: f64,
    /// Box inset from each border, as a fraction of the image extent.
    pub box_margin: f64,
}

impl Default for FallbackSettings {
    fn default() -> Self {
        FallbackSettings { threshold: DEFAULT_FALLBACK_THRESHOLD, box_margin: 0.05 }
    }
}

/// The single JSON config shared by all commands. Relative paths are
/// resolved against the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: Option<PathBuf>,
    pub image_dir: Option<PathBuf>,
    pub mask_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Score CSV path; `{seed}` is replaced by each split seed.
    pub external_scores: Option<String>,
    pub curation: CurationSettings,
    pub split_seeds: Vec<u64>,
    pub morphology: MorphologySettings,
    pub variant: MaskVariant,
    pub train: TrainConfig,
    pub augmentation: AugmentationConfig,
    pub model: ModelConfig,
    pub alpha: f64,
    pub mantel_permutations: usize,
    /// Worker threads; 0 uses one per core.
    pub workers: usize,
    pub fallback_segmenter: bool,
    pub fallback: FallbackSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            manifest: None,
            image_dir: None,
            mask_dir: None,
            output_dir: PathBuf::from("out"),
            external_scores: None,
            curation: CurationSettings::default(),
            split_seeds: vec![0, 1, 2, 3, 4],
            morphology: MorphologySettings::default(),
            variant: MaskVariant::None,
            train: TrainConfig::default(),
            augmentation: AugmentationConfig::default(),
            model: ModelConfig::default(),
            alpha: DEFAULT_ALPHA,
            mantel_permutations: crate::stats::DEFAULT_MONTE_CARLO_PERMUTATIONS,
            workers: 1,
            fallback_segmenter: false,
            fallback: FallbackSettings::default(),
        }
    }
}

/// Flag values that replace config keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub variant: Option<MaskVariant>,
    pub external_scores: Option<String>,
    pub fallback_segmenter: bool,
    pub workers: Option<usize>,
}

impl PipelineConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        for p in [&mut cfg.manifest, &mut cfg.image_dir, &mut cfg.mask_dir].into_iter().flatten() {
            resolve(p);
        }
        resolve(&mut cfg.output_dir);
        if let Some(s) = &mut cfg.external_scores {
            if Path::new(s.as_str()).is_relative() {
                *s = base_dir.join(&*s).to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        PipelineConfig::from_json(&text, base)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.curation.seed = s;
        }
        if let Some(v) = o.variant {
            self.variant = v;
        }
        if let Some(e) = &o.external_scores {
            self.external_scores = Some(e.clone());
        }
        if o.fallback_segmenter {
            self.fallback_segmenter = true;
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
    }

    /// Checks values; paths are checked by the command that reads them.
    pub fn validate(&self) -> Result<()> {
        if self.split_seeds.is_empty() {
            return Err(Error::Config("split_seeds must not be empty".into()));
        }
        let mut seen = self.split_seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.split_seeds.len() {
            return Err(Error::Config("split_seeds must be distinct".into()));
        }
        if self.curation.cap == 0 {
            return Err(Error::Config("curation.cap must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if !self.fallback.threshold.is_finite() || !(0.0..0.5).contains(&self.fallback.box_margin) {
            return Err(Error::Config("fallback.threshold must be finite and fallback.box_margin in [0, 0.5)".into()));
        }
        self.train.validate().map_err(|e| Error::Config(format!("train: {e}")))?;
        self.augmentation.validate().map_err(|e| Error::Config(format!("augmentation: {e}")))?;
        if self.model.input_side == 0 || self.model.hidden_units == 0 {
            return Err(Error::Config("model.input_side and model.hidden_units must be positive".into()));
        }
        Ok(())
    }

    pub fn results_dir(&self) -> PathBuf {
        self.output_dir.join("results").join(self.variant.name())
    }

    pub fn masked_dir(&self, variant: MaskVariant) -> PathBuf {
        self.output_dir.join("masked").join(variant.name())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingPath(path.to_path_buf()),
        _ => Error::io(path, e),
    })
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(format!("json: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    let p = p.as_deref().ok_or_else(|| Error::Config(format!("`{key}` is not set")))?;
    if !p.exists() {
        return Err(Error::MissingPath(p.to_path_buf()));
    }
    Ok(p)
}

fn load_curated(cfg: &PipelineConfig) -> Result<CuratedTable> {
    parse_curated_csv(&read_file(&cfg.output_dir.join(CURATED_FILE))?)
}

fn check_image_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
        return Err(Error::Format(format!("image id {id:?} cannot be used as a file name")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationSummary {
    pub generator: String,
    pub seed: u64,
    pub per_label_cap: usize,
    pub total_unique: usize,
    pub pool_sizes: BTreeMap<String, usize>,
    pub drawn: BTreeMap<String, usize>,
    pub label_counts: BTreeMap<String, usize>,
    pub split_sizes: BTreeMap<u64, (usize, usize, usize)>,
}

/// Writes `curated.csv`, `cooccurrence.csv` and `curation_summary.json`.
pub fn cmd_curate(cfg: &PipelineConfig) -> Result<CurationSummary> {
    let manifest = required(&cfg.manifest, "manifest")?;
    let records = parse_manifest(&read_file(manifest)?)?;
    let ds = curate(&records, cfg.curation.cap, cfg.curation.seed)?;
    for r in &ds.records {
        check_image_id(&r.image_id)?;
    }
    let ids = ds.ids();
    let splits = cfg.split_seeds.iter().map(|&s| split(&ids, DEFAULT_FRACTIONS, s)).collect::<Result<Vec<_>>>()?;
    write_file(&cfg.output_dir.join(CURATED_FILE), curated_csv(&ds, &splits)?)?;
    let matrix = cooccurrence(ds.records.iter().map(|r| &r.labels));
    write_file(&cfg.output_dir.join(COOCCURRENCE_FILE), matrix.to_csv())?;

    let by_label = |v: [usize; 6]| -> BTreeMap<String, usize> {
        crate::labels::ALL_LABELS.iter().map(|l| (l.name().to_string(), v[l.index()])).collect()
    };
    let summary = CurationSummary {
        generator: GENERATOR_NAME.to_string(),
        seed: ds.seed,
        per_label_cap: ds.per_label_cap,
        total_unique: ds.len(),
        pool_sizes: by_label(ds.pool_sizes),
        drawn: by_label(ds.drawn),
        label_counts: by_label(ds.label_counts()),
        split_sizes: splits.iter().map(|s| (s.seed, s.sizes())).collect(),
    };
    write_file(&cfg.output_dir.join(CURATION_SUMMARY_FILE), to_json(&summary)?)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedImage {
    pub image_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSummary {
    pub images: usize,
    pub masked: usize,
    pub fallback_masks: usize,
    pub files_written: usize,
    pub skipped: Vec<SkippedImage>,
}

enum MaskOutcome {
    Written { fallback: bool },
    Skipped(String),
}

fn mask_one(cfg: &PipelineConfig, image_dir: &Path, id: &str) -> Result<MaskOutcome> {
    let image_path = image_dir.join(id);
    let img = match read_file(&image_path) {
        Ok(bytes) => decode_image(&bytes)?,
        Err(Error::MissingPath(p)) => return Ok(MaskOutcome::Skipped(format!("image {} not found", p.display()))),
        Err(e) => return Err(e),
    };
    let existing = cfg.mask_dir.as_deref().map(|d| mask_path(d, id)).filter(|p| p.exists());
    let (raw, fallback) = match existing {
        Some(p) => {
            let source = p.display().to_string();
            match load_mask(&read_file(&p)?, img.width(), img.height(), &source) {
                Ok(m) => (m, false),
                Err(e @ Error::Ingestion { .. }) => return Ok(MaskOutcome::Skipped(e.to_string())),
                Err(e) => return Ok(MaskOutcome::Skipped(format!("unreadable mask {source}: {e}"))),
            }
        }
        None if cfg.fallback_segmenter => {
            let b = BoxPrompt::inset(img.width(), img.height(), cfg.fallback.box_margin)?;
            let m = fallback_segment(&img, &b, cfg.fallback.threshold)?;
            write_file(&mask_path(&cfg.output_dir.join("fallback_masks"), id), m.encode_png()?)?;
            (m, true)
        }
        None => return Ok(MaskOutcome::Skipped("no mask available".into())),
    };
    let m = &cfg.morphology;
    let variants = expand_mask(&raw, m.erode_radius, (m.tight_radius, m.loose_radius));
    for (variant, mask) in [(MaskVariant::Tight, &variants.tight), (MaskVariant::Loose, &variants.loose)] {
        let masked = apply_mask(&img, mask)?;
        write_file(&cfg.masked_dir(variant).join(id), encode_png_gray8(&masked)?)?;
    }
    Ok(MaskOutcome::Written { fallback })
}

/// Writes tight and loose masked PNGs for every curated image that has a
/// mask (or gets one from the fallback segmenter). Images without a usable
/// mask are logged and listed in `mask_summary.json`.
pub fn cmd_mask(cfg: &PipelineConfig) -> Result<MaskSummary> {
    let image_dir = required(&cfg.image_dir, "image_dir")?;
    match &cfg.mask_dir {
        Some(d) if !d.is_dir() => return Err(Error::MissingPath(d.clone())),
        None if !cfg.fallback_segmenter => {
            return Err(Error::Config("set `mask_dir` or enable the fallback segmenter".into()))
        }
        _ => {}
    }
    let table = load_curated(cfg)?;
    let outcomes =
        table.records.par_iter().map(|r| mask_one(cfg, image_dir, &r.image_id)).collect::<Result<Vec<_>>>()?;
    let mut summary =
        MaskSummary { images: outcomes.len(), masked: 0, fallback_masks: 0, files_written: 0, skipped: Vec::new() };
    for (r, o) in table.records.iter().zip(outcomes) {
        match o {
            MaskOutcome::Written { fallback } => {
                summary.masked += 1;
                summary.files_written += 2;
                summary.fallback_masks += fallback as usize;
            }
            MaskOutcome::Skipped(reason) => {
                log::warn!("skipping {}: {reason}", r.image_id);
                summary.skipped.push(SkippedImage { image_id: r.image_id.clone(), reason });
            }
        }
    }
    write_file(&cfg.output_dir.join(MASK_SUMMARY_FILE), to_json(&summary)?)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRun {
    pub seed: u64,
    pub train_size: usize,
    pub validation_size: usize,
    pub test_size: usize,
    pub thresholds: ThresholdSet,
    /// Present when the reference model was trained for this split.
    pub best_epoch: Option<usize>,
    pub epochs_run: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: MaskVariant,
    pub score_source: String,
    pub generator: String,
    pub split_seeds: Vec<u64>,
    pub runs: Vec<SplitRun>,
    pub experiment: ExperimentReport,
    /// Over the whole curated dataset.
    pub dataset_cooccurrence: CooccurrenceMatrix,
    /// Thresholded test predictions pooled over all splits, No Finding by
    /// the complement rule.
    pub predicted_cooccurrence: CooccurrenceMatrix,
}

fn label_slug(l: Label) -> String {
    l.name().to_lowercase().replace(' ', "_")
}

fn with_split(seed: u64, e: Error) -> Error {
    match e {
        Error::UndefinedMetric { label, message } => {
            Error::UndefinedMetric { label, message: format!("split seed {seed}: {message}") }
        }
        other => other,
    }
}

struct SplitScores {
    validation: Vec<ScoreVector>,
    test: Vec<ScoreVector>,
    log: Option<Vec<EpochLog>>,
    best_epoch: Option<usize>,
}

fn lookup(scores: &BTreeMap<String, ScoreVector>, ids: &[String], source: &str) -> Result<Vec<ScoreVector>> {
    ids.iter()
        .map(|id| {
            scores.get(id).copied().ok_or_else(|| Error::Ingestion {
                source_name: source.to_string(),
                message: format!("no scores for image id {id}"),
            })
        })
        .collect()
}

fn external_split_scores(template: &str, seed: u64, validation: &[String], test: &[String]) -> Result<SplitScores> {
    let path = PathBuf::from(template.replace("{seed}", &seed.to_string()));
    let source = path.display().to_string();
    let scores = load_scores(&read_file(&path)?, &source)?;
    Ok(SplitScores {
        validation: lookup(&scores, validation, &source)?,
        test: lookup(&scores, test, &source)?,
        log: None,
        best_epoch: None,
    })
}

fn load_images(dir: &Path, ids: &[&String]) -> Result<BTreeMap<String, GrayImage>> {
    ids.par_iter()
        .map(|id| {
            let img = decode_image(&read_file(&dir.join(id))?)?;
            Ok(((*id).clone(), img))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().collect())
}

fn labeled(
    ids: &[String],
    images: &BTreeMap<String, GrayImage>,
    labels: &BTreeMap<&str, LabelVector>,
) -> Vec<LabeledImage> {
    ids.iter()
        .map(|id| LabeledImage { image: images[id].clone(), labels: labels[id.as_str()].abnormalities() })
        .collect()
}

fn trained_split_scores(
    cfg: &PipelineConfig,
    images: &BTreeMap<String, GrayImage>,
    labels: &BTreeMap<&str, LabelVector>,
    train_ids: &[String],
    validation: &[String],
    test: &[String],
) -> Result<SplitScores> {
    let outcome = train(
        &labeled(train_ids, images, labels),
        &labeled(validation, images, labels),
        &cfg.model,
        &cfg.train,
        &cfg.augmentation,
    )?;
    let score = |ids: &[String]| -> Result<Vec<ScoreVector>> {
        ids.par_iter().map(|id| predict(&outcome.params, &images[id])).collect()
    };
    Ok(SplitScores {
        validation: score(validation)?,
        test: score(test)?,
        best_epoch: Some(outcome.best_epoch),
        log: Some(outcome.log),
    })
}

/// Trains (or reads external scores) and evaluates every split, then
/// writes the report files under `results/<variant>/`.
pub fn cmd_train_eval(cfg: &PipelineConfig) -> Result<RunReport> {
    let table = load_curated(cfg)?;
    let labels: BTreeMap<&str, LabelVector> = table.records.iter().map(|r| (r.image_id.as_str(), r.labels)).collect();
    let assignments = cfg
        .split_seeds
        .iter()
        .map(|&s| {
            table.assignment(s).ok_or_else(|| {
                Error::Config(format!("split seed {s} is not in {CURATED_FILE}; rerun curate with this seed list"))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let images = match &cfg.external_scores {
        Some(_) => BTreeMap::new(),
        None => {
            let dir = match cfg.variant {
                MaskVariant::None => required(&cfg.image_dir, "image_dir")?.to_path_buf(),
                v => {
                    let d = cfg.masked_dir(v);
                    if !d.is_dir() {
                        return Err(Error::MissingPath(d));
                    }
                    d
                }
            };
            let ids: Vec<&String> = table.records.iter().map(|r| &r.image_id).collect();
            load_images(&dir, &ids)?
        }
    };

    let out = cfg.results_dir();
    let mut splits: Vec<SplitMetrics> = Vec::new();
    let mut runs = Vec::new();
    let mut predicted = CooccurrenceMatrix::default();
    let mut training_log = String::from("split_seed,epoch,train_loss,validation_loss\n");
    for a in &assignments {
        let seed = a.seed;
        let s = match &cfg.external_scores {
            Some(t) => external_split_scores(t, seed, &a.validation, &a.test)?,
            None => trained_split_scores(cfg, &images, &labels, &a.train, &a.validation, &a.test)?,
        };
        let val_labels: Vec<LabelVector> = a.validation.iter().map(|id| labels[id.as_str()]).collect();
        let test_labels: Vec<LabelVector> = a.test.iter().map(|id| labels[id.as_str()]).collect();
        let thresholds = select_thresholds(&s.validation, &val_labels).map_err(|e| with_split(seed, e))?;
        let m = evaluate_split(&s.test, &test_labels, &thresholds).map_err(|e| with_split(seed, e))?;

        let roc_dir = out.join("roc").join(format!("split_{seed}"));
        for l in ABNORMALITIES {
            let sc: Vec<f64> = s.test.iter().map(|v| v.0[l.index()]).collect();
            let y: Vec<bool> = test_labels.iter().map(|v| v.get(l)).collect();
            let curve = roc_points(&sc, &y).map_err(|e| with_split(seed, e))?;
            write_file(&roc_dir.join(format!("{}.csv", label_slug(l))), curve.to_csv())?;
        }
        let nf: Vec<f64> = s.test.iter().map(no_finding_score).collect();
        let y: Vec<bool> = test_labels.iter().map(LabelVector::no_finding).collect();
        let curve = roc_points(&nf, &y).map_err(|e| with_split(seed, e))?;
        write_file(&roc_dir.join(format!("{}.csv", label_slug(Label::NoFinding))), curve.to_csv())?;

        let predicted_labels: Vec<LabelVector> =
            s.test.iter().map(|v| LabelVector::from_abnormalities(thresholds.predict(v))).collect();
        predicted.add(&cooccurrence(&predicted_labels));

        let mut rows: Vec<(&str, &ScoreVector)> = a
            .validation
            .iter()
            .zip(&s.validation)
            .chain(a.test.iter().zip(&s.test))
            .map(|(id, v)| (id.as_str(), v))
            .collect();
        rows.sort_by(|x, y| x.0.cmp(y.0));
        write_file(&out.join("scores").join(format!("split_{seed}.csv")), scores_csv(rows))?;

        if let Some(log) = &s.log {
            for e in log {
                training_log.push_str(&format!("{seed},{},{},{}\n", e.epoch, e.train_loss, e.validation_loss));
            }
        }
        runs.push(SplitRun {
            seed,
            train_size: a.train.len(),
            validation_size: a.validation.len(),
            test_size: a.test.len(),
            thresholds,
            best_epoch: s.best_epoch,
            epochs_run: s.log.as_ref().map(Vec::len),
        });
        log::info!("split {seed}: macro AUROC {:.4}", m.macro_auroc);
        splits.push(m);
    }

    let experiment = aggregate(&cfg.split_seeds, &splits)?;
    let report = RunReport {
        variant: cfg.variant,
        score_source: if cfg.external_scores.is_some() { "external" } else { "trained" }.to_string(),
        generator: GENERATOR_NAME.to_string(),
        split_seeds: cfg.split_seeds.clone(),
        runs,
        dataset_cooccurrence: cooccurrence(table.records.iter().map(|r| &r.labels)),
        predicted_cooccurrence: predicted,
        experiment,
    };
    let column = [(report.variant.name(), &report.experiment)];
    write_file(&out.join(REPORT_FILE), to_json(&report)?)?;
    write_file(&out.join("metrics.csv"), report.experiment.metrics_csv())?;
    write_file(&out.join("summary.csv"), report.experiment.summary_csv())?;
    write_file(&out.join("auroc_table.txt"), format_auroc_table(&column))?;
    write_file(&out.join("prf_table.txt"), format_prf_table(&column))?;
    write_file(&out.join("cooccurrence_dataset.csv"), report.dataset_cooccurrence.to_csv())?;
    write_file(&out.join("cooccurrence_predicted.csv"), report.predicted_cooccurrence.to_csv())?;
    if report.score_source == "trained" {
        write_file(&out.join("training_log.csv"), training_log)?;
    }
    Ok(report)
}

pub fn load_report(path: &Path) -> Result<RunReport> {
    serde_json::from_slice(&read_file(path)?)
        .map_err(|e| Error::Format(format!("{} is not a run report: {e}", path.display())))
}

fn cooccurrence_matrix(m: &CooccurrenceMatrix) -> Result<SquareMatrix> {
    SquareMatrix::new(crate::labels::NUM_LABELS, m.to_f64())
}

fn mantel_row(
    name: &str,
    a: &CooccurrenceMatrix,
    b: &CooccurrenceMatrix,
    permutations: usize,
    seed: u64,
    alpha: f64,
) -> Result<StatRow> {
    match mantel_test(&cooccurrence_matrix(a)?, &cooccurrence_matrix(b)?, permutations, seed) {
        Ok(r) => Ok(StatRow::from_mantel(name, &r, alpha)),
        Err(Error::UndefinedCorrelation(msg)) => {
            log::warn!("{name}: {msg}");
            Ok(StatRow {
                test: name.to_string(),
                statistic: f64::NAN,
                df_or_permutations: 0,
                p_value: f64::NAN,
                significant: false,
            })
        }
        Err(e) => Err(e),
    }
}

/// Paired t-tests on macro and No Finding AUROC across matched splits, plus
/// Mantel tests between the predicted co-occurrence matrices and against
/// the dataset matrix.
pub fn cmd_compare(a: &RunReport, b: &RunReport, alpha: f64, permutations: usize, seed: u64) -> Result<Vec<StatRow>> {
    if a.split_seeds != b.split_seeds {
        return Err(Error::arg(format!(
            "reports use different split seeds ({:?} vs {:?}); paired tests need matched splits",
            a.split_seeds, b.split_seeds
        )));
    }
    let series = |r: &RunReport, f: fn(&SplitMetrics) -> f64| r.experiment.splits.iter().map(f).collect::<Vec<_>>();
    let macro_t = paired_t_test(&series(a, |m| m.macro_auroc), &series(b, |m| m.macro_auroc), alpha)?;
    let nf_t = paired_t_test(&series(a, |m| m.no_finding_auroc), &series(b, |m| m.no_finding_auroc), alpha)?;
    if a.dataset_cooccurrence != b.dataset_cooccurrence {
        log::warn!("reports were built from different curated datasets; using the first one's co-occurrence");
    }
    Ok(vec![
        StatRow::from_t("paired_t_macro_auroc", &macro_t),
        StatRow::from_t("paired_t_no_finding_auroc", &nf_t),
        mantel_row(
            "mantel_predicted_a_vs_b",
            &a.predicted_cooccurrence,
            &b.predicted_cooccurrence,
            permutations,
            seed,
            alpha,
        )?,
        mantel_row(
            "mantel_dataset_vs_predicted_a",
            &a.dataset_cooccurrence,
            &a.predicted_cooccurrence,
            permutations,
            seed,
            alpha,
        )?,
        mantel_row(
            "mantel_dataset_vs_predicted_b",
            &a.dataset_cooccurrence,
            &b.predicted_cooccurrence,
            permutations,
            seed,
            alpha,
        )?,
    ])
}

#[derive(Debug, Parser)]
#[command(name = "cxrseg", version, about = "Lung-mask guided chest X-ray classification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonArgs {
    #[arg(long)]
    config: PathBuf,
    /// Curation seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    variant: Option<MaskVariant>,
    #[arg(long)]
    external_scores: Option<String>,
    #[arg(long)]
    fallback_segmenter: bool,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample the six-label dataset and assign splits.
    Curate(CommonArgs),
    /// Write tight and loose masked images.
    Mask(CommonArgs),
    /// Train or load scores, then evaluate every split.
    TrainEval(CommonArgs),
    /// Compare two train-eval reports over matched splits.
    Compare {
        report_a: PathBuf,
        report_b: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Significance level (overrides `alpha`).
        #[arg(long)]
        alpha: Option<f64>,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Write a planted-signal synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        images: usize,
        #[arg(long, default_value_t = 32)]
        side: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn config_from(args: &CommonArgs) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&args.config)?;
    cfg.apply(&Overrides {
        seed: args.seed,
        variant: args.variant,
        external_scores: args.external_scores.clone(),
        fallback_segmenter: args.fallback_segmenter,
        workers: args.workers,
    });
    cfg.validate()?;
    Ok(cfg)
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Curate(a) => {
            let cfg = config_from(&a)?;
            let s = in_pool(cfg.workers, || cmd_curate(&cfg))?;
            println!("curated {} unique images into {}", s.total_unique, cfg.output_dir.display());
        }
        Command::Mask(a) => {
            let cfg = config_from(&a)?;
            let s = in_pool(cfg.workers, || cmd_mask(&cfg))?;
            println!(
                "masked {} of {} images ({} files, {} fallback masks, {} skipped)",
                s.masked,
                s.images,
                s.files_written,
                s.fallback_masks,
                s.skipped.len()
            );
        }
        Command::TrainEval(a) => {
            let cfg = config_from(&a)?;
            let r = in_pool(cfg.workers, || cmd_train_eval(&cfg))?;
            print!("{}", format_auroc_table(&[(r.variant.name(), &r.experiment)]));
            println!("report written to {}", cfg.results_dir().display());
        }
        Command::Compare { report_a, report_b, config, alpha, out, workers } => {
            let mut cfg = match &config {
                Some(p) => PipelineConfig::load(p)?,
                None => PipelineConfig::default(),
            };
            if let Some(al) = alpha {
                cfg.alpha = al;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            cfg.validate()?;
            let (a, b) = (load_report(&report_a)?, load_report(&report_b)?);
            let rows =
                in_pool(cfg.workers, || cmd_compare(&a, &b, cfg.alpha, cfg.mantel_permutations, cfg.curation.seed))?;
            let csv = stats_csv(&rows);
            match out {
                Some(p) => write_file(&p, csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Synth { out, images, side, seed } => {
            let cfg = SyntheticConfig { n_images: images, side, seed, ..Default::default() };
            let paths = write_dataset(&cfg, &out)?;
            println!("wrote {} images and {}", images, paths.manifest.display());
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                2
            } else {
                1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_unknown_keys() {
        let cfg = PipelineConfig::from_json("{}", Path::new("/base")).unwrap();
        assert_eq!(cfg.split_seeds.len(), 5);
        assert_eq!(cfg.morphology, MorphologySettings { erode_radius: 5, tight_radius: 15, loose_radius: 50 });
        assert_eq!(cfg.output_dir, PathBuf::from("/base/out"));
        assert_eq!(cfg.alpha, 0.05);
        cfg.validate().unwrap();
        assert!(matches!(PipelineConfig::from_json(r#"{"bogus": 1}"#, Path::new(".")), Err(Error::Config(_))));
        let empty = PipelineConfig::from_json(r#"{"split_seeds": []}"#, Path::new(".")).unwrap();
        assert!(empty.validate().is_err());
    }

    #[test]
    fn overrides_replace_single_keys() {
        let mut cfg = PipelineConfig::from_json(r#"{"variant": "tight", "workers": 3}"#, Path::new(".")).unwrap();
        assert_eq!(cfg.variant, MaskVariant::Tight);
        cfg.apply(&Overrides { seed: Some(9), variant: Some(MaskVariant::Loose), ..Default::default() });
        assert_eq!((cfg.curation.seed, cfg.variant, cfg.workers), (9, MaskVariant::Loose, 3));
    }

    #[test]
    fn parse_errors_exit_with_two() {
        assert_eq!(run(["cxrseg", "no-such-command"]), 2);
        assert_eq!(run(["cxrseg", "curate", "--config", "/definitely/not/here.json"]), 2);
    }
}

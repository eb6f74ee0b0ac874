//! Experiment harness: typed configuration, the command implementations
//! behind the CLI, and their CSV outputs.
//!
//! Every command is a pure function of its configuration (all randomness is
//! seeded), so repeated runs produce byte-identical CSVs.

use crate::aggregate::{robust_masking, MaskingConfig};
use crate::attack::{pgd_patch_attack, AttackConfig};
use crate::certify::{certify_masking, certify_oversized, certify_topk, CertResult};
use crate::error::{Error, Result};
use crate::formats::{fmt_f64, parse_config, CsvWriter};
use crate::geometry::{mask_shape, PatchSpec, RFGeometry};
use crate::model::{
    extract_features, load_model, predict_insecure, save_model, train, train_provable_adv,
    LabeledDataset, PatchEnsembleModel, TrainConfig,
};
use crate::oracle::{lemma1_corpus, lemma2_corpus, verify_lemma1, verify_lemma2, verify_soundness};
use crate::tensor::{argmax_lowest, ClipBounds, FeatureKind};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// All experiment parameters, resolvable from a key=value config file with
/// command-line overrides. Unset fields fall back to the documented defaults.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: Option<PathBuf>,
    pub val_dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,

    pub rf: usize,
    pub stride: usize,
    pub kind: FeatureKind,

    pub clip_lo: f64,
    pub clip_hi: f64,
    pub threshold: f64,
    /// Patch side in pixels; overrides `patch_pct` when set.
    pub patch: Option<usize>,
    /// Patch bound as an area fraction; side = ceil(sqrt(pct * pixels)).
    pub patch_pct: f64,
    /// Explicit mask shape override; must cover the patch-derived shape.
    pub mask_rows: Option<usize>,
    pub mask_cols: Option<usize>,
    pub topk: usize,

    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adv_train: bool,

    pub attack_steps: usize,
    pub attack_step_size: f64,
    pub attack_locations: usize,
    pub attack_target: Option<usize>,
    pub attack_defended: bool,

    pub oracle_lemma1: usize,
    pub oracle_lemma2: usize,
    pub oracle_trials: usize,

    pub hist_lo: f64,
    pub hist_hi: f64,
    pub hist_bins: usize,

    pub gen_count: usize,
    pub gen_side: usize,
    pub gen_classes: usize,
    pub gen_noise: f64,

    pub sweep_rf: Vec<usize>,
    pub sweep_threshold: Vec<f64>,
    pub sweep_kind: Vec<FeatureKind>,
    pub sweep_patch_pct: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            val_dataset: None,
            model: None,
            out_dir: None,
            seed: 1,
            rf: 9,
            stride: 4,
            kind: FeatureKind::Logits,
            clip_lo: 0.0,
            clip_hi: f64::INFINITY,
            threshold: 0.0,
            patch: None,
            patch_pct: 0.03,
            mask_rows: None,
            mask_cols: None,
            topk: 1,
            hidden: 48,
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            adv_train: false,
            attack_steps: 500,
            attack_step_size: 0.05,
            attack_locations: 5,
            attack_target: None,
            attack_defended: true,
            oracle_lemma1: 500,
            oracle_lemma2: 200,
            oracle_trials: 1000,
            hist_lo: 0.0,
            hist_hi: 30.0,
            hist_bins: 30,
            gen_count: 1200,
            gen_side: 32,
            gen_classes: 10,
            gen_noise: 0.06,
            sweep_rf: vec![5, 9, 13],
            sweep_threshold: vec![0.0, 0.2, 0.4, 0.6, 0.8],
            sweep_kind: vec![FeatureKind::Logits, FeatureKind::Confidence, FeatureKind::Prediction],
            sweep_patch_pct: vec![0.01, 0.02, 0.03],
        }
    }
}

fn parse_key<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key '{key}': cannot parse '{value}'")))
}

fn parse_f64_key(key: &str, value: &str) -> Result<f64> {
    match value {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        _ => parse_key(key, value),
    }
}

fn parse_list<T>(key: &str, value: &str, f: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| f(key, s))
        .collect()
}

impl ExperimentConfig {
    /// Applies key=value pairs on top of the current configuration.
    pub fn apply(&mut self, pairs: &BTreeMap<String, String>) -> Result<()> {
        for (key, value) in pairs {
            match key.as_str() {
                "dataset" => self.dataset = Some(PathBuf::from(value)),
                "val_dataset" => self.val_dataset = Some(PathBuf::from(value)),
                "model" => self.model = Some(PathBuf::from(value)),
                "out_dir" => self.out_dir = Some(PathBuf::from(value)),
                "seed" => self.seed = parse_key(key, value)?,
                "rf" => self.rf = parse_key(key, value)?,
                "stride" => self.stride = parse_key(key, value)?,
                "kind" => self.kind = value.parse()?,
                "clip_lo" => self.clip_lo = parse_f64_key(key, value)?,
                "clip_hi" => self.clip_hi = parse_f64_key(key, value)?,
                "threshold" => self.threshold = parse_f64_key(key, value)?,
                "patch" => self.patch = Some(parse_key(key, value)?),
                "patch_pct" => self.patch_pct = parse_f64_key(key, value)?,
                "mask_rows" => self.mask_rows = Some(parse_key(key, value)?),
                "mask_cols" => self.mask_cols = Some(parse_key(key, value)?),
                "topk" => self.topk = parse_key(key, value)?,
                "hidden" => self.hidden = parse_key(key, value)?,
                "epochs" => self.epochs = parse_key(key, value)?,
                "batch_size" => self.batch_size = parse_key(key, value)?,
                "learning_rate" => self.learning_rate = parse_f64_key(key, value)?,
                "adv_train" => self.adv_train = parse_key(key, value)?,
                "attack_steps" => self.attack_steps = parse_key(key, value)?,
                "attack_step_size" => self.attack_step_size = parse_f64_key(key, value)?,
                "attack_locations" => self.attack_locations = parse_key(key, value)?,
                "attack_target" => {
                    self.attack_target =
                        if value.is_empty() { None } else { Some(parse_key(key, value)?) }
                }
                "attack_defended" => self.attack_defended = parse_key(key, value)?,
                "oracle_lemma1" => self.oracle_lemma1 = parse_key(key, value)?,
                "oracle_lemma2" => self.oracle_lemma2 = parse_key(key, value)?,
                "oracle_trials" => self.oracle_trials = parse_key(key, value)?,
                "hist_lo" => self.hist_lo = parse_f64_key(key, value)?,
                "hist_hi" => self.hist_hi = parse_f64_key(key, value)?,
                "hist_bins" => self.hist_bins = parse_key(key, value)?,
                "gen_count" => self.gen_count = parse_key(key, value)?,
                "gen_side" => self.gen_side = parse_key(key, value)?,
                "gen_classes" => self.gen_classes = parse_key(key, value)?,
                "gen_noise" => self.gen_noise = parse_f64_key(key, value)?,
                "sweep_rf" => self.sweep_rf = parse_list(key, value, parse_key)?,
                "sweep_threshold" => self.sweep_threshold = parse_list(key, value, parse_f64_key)?,
                "sweep_kind" => {
                    self.sweep_kind = parse_list(key, value, |_, s| s.parse())?;
                }
                "sweep_patch_pct" => {
                    self.sweep_patch_pct = parse_list(key, value, parse_f64_key)?;
                }
                other => return Err(Error::Config(format!("unknown key '{other}'"))),
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config = ExperimentConfig::default();
        config.apply(&parse_config(&text)?)?;
        Ok(config)
    }

    fn require_dataset(&self) -> Result<LabeledDataset> {
        let path = self
            .dataset
            .as_ref()
            .ok_or_else(|| Error::Config("'dataset' is required".into()))?;
        crate::formats::read_dataset(path)
    }

    fn require_model(&self) -> Result<PatchEnsembleModel> {
        let path = self
            .model
            .as_ref()
            .ok_or_else(|| Error::Config("'model' is required".into()))?;
        load_model(path)
    }

    fn out_path(&self, file: &str) -> Result<PathBuf> {
        let dir = self
            .out_dir
            .as_ref()
            .ok_or_else(|| Error::Config("'out_dir' is required".into()))?;
        std::fs::create_dir_all(dir)?;
        Ok(dir.join(file))
    }

    fn geometry_for(&self, rows: usize, cols: usize, rf: usize) -> Result<RFGeometry> {
        RFGeometry::square(rf, self.stride, rows, cols)
    }

    /// Patch side in pixels from the explicit side or the area fraction.
    pub fn patch_side(&self, rows: usize, cols: usize) -> usize {
        self.patch.unwrap_or_else(|| {
            let pixels = (rows * cols) as f64;
            ((self.patch_pct * pixels).sqrt().ceil() as usize).max(1)
        })
    }

    /// Malicious window shape (from the patch bound) and the mask shape
    /// actually used for detection (the override when present).
    fn shapes(&self, geom: &RFGeometry) -> Result<((usize, usize), (usize, usize))> {
        let side = self.patch_side(geom.image_rows(), geom.image_cols());
        let patch = PatchSpec::square(side)?;
        let malicious = mask_shape(&patch, geom);
        let mask = match (self.mask_rows, self.mask_cols) {
            (Some(r), Some(c)) => (r, c),
            (None, None) => malicious,
            _ => return Err(Error::Config("set both mask_rows and mask_cols".into())),
        };
        if mask.0 < malicious.0 || mask.1 < malicious.1 {
            return Err(Error::Config(format!(
                "mask {}x{} does not cover the malicious window {}x{}",
                mask.0, mask.1, malicious.0, malicious.1
            )));
        }
        Ok((malicious, mask))
    }

    fn masking_config(&self, mask: (usize, usize)) -> Result<MaskingConfig> {
        MaskingConfig::new(ClipBounds::new(self.clip_lo, self.clip_hi)?, self.threshold, mask)
    }

    fn train_config(&self, adv_mask: Option<(usize, usize)>) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            hidden_units: self.hidden,
            adv_mask_shape: adv_mask,
        }
    }
}

/// Accuracy of the masked pipeline over a dataset.
fn robust_accuracy(
    model: &PatchEnsembleModel,
    data: &LabeledDataset,
    kind: FeatureKind,
    config: &MaskingConfig,
) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for i in 0..data.len() {
        let features = extract_features(model, data.image(i), kind)?;
        if robust_masking(&features, config)?.predicted == data.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

pub struct TrainSummary {
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub model_path: PathBuf,
}

/// Trains (optionally with the masked objective) and writes the checkpoint.
pub fn run_train(config: &ExperimentConfig) -> Result<TrainSummary> {
    let data = config.require_dataset()?;
    let (rows, cols, _) = data.dims().ok_or_else(|| Error::contract("dataset is empty"))?;
    let geom = config.geometry_for(rows, cols, config.rf)?;
    let (_, mask) = config.shapes(&geom)?;
    let output = if config.adv_train {
        train_provable_adv(&data, &geom, &config.train_config(Some(mask)))?
    } else {
        train(&data, &geom, &config.train_config(None))?
    };
    let masking = config.masking_config(mask)?;
    let train_accuracy = robust_accuracy(&output.model, &data, config.kind, &masking)?;
    let val_accuracy = match &config.val_dataset {
        Some(path) => {
            let val = crate::formats::read_dataset(path)?;
            Some(robust_accuracy(&output.model, &val, config.kind, &masking)?)
        }
        None => None,
    };
    let model_path = config
        .model
        .clone()
        .ok_or_else(|| Error::Config("'model' output path is required".into()))?;
    save_model(&output.model, &model_path)?;
    Ok(TrainSummary { final_loss: output.final_loss, train_accuracy, val_accuracy, model_path })
}

pub struct CertifySummary {
    pub images: usize,
    pub clean_accuracy: f64,
    pub certified_fraction: f64,
    pub provable_accuracy: f64,
    pub detection_fp_rate: f64,
    pub csv_path: PathBuf,
}

pub const CERTIFY_HEADER: [&str; 8] = [
    "index",
    "true_label",
    "predicted",
    "correct",
    "certified",
    "true_lower",
    "max_wrong_upper",
    "detect_fired_true_class",
];

fn certify_one(
    features: &crate::tensor::FeatureTensor,
    label: usize,
    malicious: (usize, usize),
    mask: (usize, usize),
    masking: &MaskingConfig,
    topk: usize,
) -> Result<(CertResult, bool)> {
    let cert = if malicious == mask {
        certify_masking(features, label, masking)?
    } else {
        certify_oversized(features, label, malicious, mask, masking)?
    };
    let certified = if topk > 1 {
        certify_topk(features, label, masking, topk)?
    } else {
        cert.certified
    };
    Ok((cert, certified))
}

/// Per-image robust prediction and certification; writes `certify.csv`.
pub fn run_certify(config: &ExperimentConfig) -> Result<CertifySummary> {
    let data = config.require_dataset()?;
    let model = config.require_model()?;
    let geom = *model.geom();
    let (malicious, mask) = config.shapes(&geom)?;
    let masking = config.masking_config(mask)?;
    let mut csv = CsvWriter::new(&CERTIFY_HEADER);
    let mut correct = 0usize;
    let mut certified_count = 0usize;
    let mut provable = 0usize;
    let mut fp = 0usize;
    for i in 0..data.len() {
        let label = data.label(i);
        let features = extract_features(&model, data.image(i), config.kind)?;
        let outcome = robust_masking(&features, &masking)?;
        let (cert, certified) =
            certify_one(&features, label, malicious, mask, &masking, config.topk)?;
        let is_correct = outcome.predicted == label;
        let detect_fired = outcome.detected_windows[label].is_some();
        correct += is_correct as usize;
        certified_count += certified as usize;
        provable += (is_correct && certified) as usize;
        fp += detect_fired as usize;
        let max_wrong = cert
            .wrong_upper
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != label)
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        csv.row(&[
            i.to_string(),
            label.to_string(),
            outcome.predicted.to_string(),
            (is_correct as u8).to_string(),
            (certified as u8).to_string(),
            fmt_f64(cert.true_lower),
            fmt_f64(max_wrong),
            (detect_fired as u8).to_string(),
        ]);
    }
    let csv_path = config.out_path("certify.csv")?;
    std::fs::write(&csv_path, csv.finish())?;
    let n = data.len().max(1) as f64;
    Ok(CertifySummary {
        images: data.len(),
        clean_accuracy: correct as f64 / n,
        certified_fraction: certified_count as f64 / n,
        provable_accuracy: provable as f64 / n,
        detection_fp_rate: fp as f64 / n,
        csv_path,
    })
}

pub struct AttackSummary {
    pub images: usize,
    pub successes: usize,
    pub certified_successes: usize,
    pub certified_count: usize,
    pub uncertified_successes: usize,
    pub csv_path: PathBuf,
}

pub const ATTACK_HEADER: [&str; 9] = [
    "index",
    "true_label",
    "certified",
    "clean_predicted",
    "attacked_predicted",
    "success",
    "anchor_row",
    "anchor_col",
    "final_loss",
];

/// Patch attack per image, split by certification status; writes `attack.csv`.
pub fn run_attack(config: &ExperimentConfig) -> Result<AttackSummary> {
    let data = config.require_dataset()?;
    let model = config.require_model()?;
    let geom = *model.geom();
    let (malicious, mask) = config.shapes(&geom)?;
    let masking = config.masking_config(mask)?;
    let patch = PatchSpec::square(config.patch_side(geom.image_rows(), geom.image_cols()))?;
    let defense = config.attack_defended.then_some(&masking);
    let mut csv = CsvWriter::new(&ATTACK_HEADER);
    let mut summary = AttackSummary {
        images: data.len(),
        successes: 0,
        certified_successes: 0,
        certified_count: 0,
        uncertified_successes: 0,
        csv_path: PathBuf::new(),
    };
    for i in 0..data.len() {
        let label = data.label(i);
        let features = extract_features(&model, data.image(i), config.kind)?;
        let (_, certified) = certify_one(&features, label, malicious, mask, &masking, 1)?;
        let clean_predicted = if config.attack_defended {
            robust_masking(&features, &masking)?.predicted
        } else {
            predict_insecure(&model, data.image(i))?
        };
        let attack_config = AttackConfig {
            steps: config.attack_steps,
            step_size: config.attack_step_size,
            locations: config.attack_locations,
            targeted: config.attack_target,
            seed: config.seed.wrapping_add(i as u64),
        };
        let result = pgd_patch_attack(
            &model,
            data.image(i),
            label,
            &patch,
            &attack_config,
            defense,
            config.kind,
        )?;
        let attacked_predicted = match defense {
            Some(c) => {
                let f = extract_features(&model, &result.adversarial_image, config.kind)?;
                robust_masking(&f, c)?.predicted
            }
            None => predict_insecure(&model, &result.adversarial_image)?,
        };
        summary.successes += result.success as usize;
        summary.certified_count += certified as usize;
        if certified {
            summary.certified_successes += result.success as usize;
        } else {
            summary.uncertified_successes += result.success as usize;
        }
        csv.row(&[
            i.to_string(),
            label.to_string(),
            (certified as u8).to_string(),
            clean_predicted.to_string(),
            attacked_predicted.to_string(),
            (result.success as u8).to_string(),
            result.anchor.0.to_string(),
            result.anchor.1.to_string(),
            fmt_f64(result.final_loss),
        ]);
    }
    summary.csv_path = config.out_path("attack.csv")?;
    std::fs::write(&summary.csv_path, csv.finish())?;
    Ok(summary)
}

pub struct DiagnoseSummary {
    pub images: usize,
    pub mean_local_error_clean: f64,
    pub mean_local_error_attacked: f64,
    pub global_attack_success: f64,
    pub csv_path: PathBuf,
    pub histogram_path: PathBuf,
}

pub const DIAGNOSE_HEADER: [&str; 6] = [
    "index",
    "true_label",
    "attacked_predicted",
    "local_error_clean",
    "local_error_attacked",
    "attack_success",
];

pub const HISTOGRAM_HEADER: [&str; 4] = ["bin_lo", "bin_hi", "true_class_count", "malicious_class_count"];

/// Fraction of cells whose local argmax differs from the label.
fn local_error_rate(features: &crate::tensor::FeatureTensor, label: usize) -> f64 {
    let cells = features.rows() * features.cols();
    let mut wrong = 0;
    for r in 0..features.rows() {
        for c in 0..features.cols() {
            if argmax_lowest(features.cell(r, c)) != label {
                wrong += 1;
            }
        }
    }
    wrong as f64 / cells as f64
}

/// Undefended-model diagnostics: incorrect local predictions on clean and
/// attacked images, and a histogram of true-class versus attacked-class local
/// logits on the adversarial images.
pub fn run_diagnose(config: &ExperimentConfig) -> Result<DiagnoseSummary> {
    let data = config.require_dataset()?;
    let model = config.require_model()?;
    let geom = *model.geom();
    let patch = PatchSpec::square(config.patch_side(geom.image_rows(), geom.image_cols()))?;
    if config.hist_bins == 0 || !(config.hist_lo < config.hist_hi) {
        return Err(Error::Config("histogram range must be non-empty".into()));
    }
    let mut csv = CsvWriter::new(&DIAGNOSE_HEADER);
    let mut true_hist = vec![0u64; config.hist_bins];
    let mut mal_hist = vec![0u64; config.hist_bins];
    let bin_width = (config.hist_hi - config.hist_lo) / config.hist_bins as f64;
    let bin_of = |hist: &mut Vec<u64>, v: f64| {
        if v < config.hist_lo || v >= config.hist_hi {
            return;
        }
        let idx = ((v - config.hist_lo) / bin_width) as usize;
        hist[idx.min(config.hist_bins - 1)] += 1;
    };
    let mut err_clean = 0.0;
    let mut err_attacked = 0.0;
    let mut successes = 0usize;
    for i in 0..data.len() {
        let label = data.label(i);
        let clean_features = extract_features(&model, data.image(i), FeatureKind::Logits)?;
        let e_clean = local_error_rate(&clean_features, label);
        let attack_config = AttackConfig {
            steps: config.attack_steps,
            step_size: config.attack_step_size,
            locations: config.attack_locations,
            targeted: config.attack_target,
            seed: config.seed.wrapping_add(i as u64),
        };
        let result = pgd_patch_attack(
            &model,
            data.image(i),
            label,
            &patch,
            &attack_config,
            None,
            FeatureKind::Logits,
        )?;
        let adv_features =
            extract_features(&model, &result.adversarial_image, FeatureKind::Logits)?;
        let e_attacked = local_error_rate(&adv_features, label);
        let attacked_predicted = predict_insecure(&model, &result.adversarial_image)?;
        for r in 0..adv_features.rows() {
            for c in 0..adv_features.cols() {
                bin_of(&mut true_hist, adv_features.value(r, c, label));
                if attacked_predicted != label {
                    bin_of(&mut mal_hist, adv_features.value(r, c, attacked_predicted));
                }
            }
        }
        err_clean += e_clean;
        err_attacked += e_attacked;
        successes += result.success as usize;
        csv.row(&[
            i.to_string(),
            label.to_string(),
            attacked_predicted.to_string(),
            fmt_f64(e_clean),
            fmt_f64(e_attacked),
            (result.success as u8).to_string(),
        ]);
    }
    let mut hist_csv = CsvWriter::new(&HISTOGRAM_HEADER);
    for b in 0..config.hist_bins {
        let lo = config.hist_lo + b as f64 * bin_width;
        hist_csv.row(&[
            fmt_f64(lo),
            fmt_f64(lo + bin_width),
            true_hist[b].to_string(),
            mal_hist[b].to_string(),
        ]);
    }
    let csv_path = config.out_path("diagnose.csv")?;
    std::fs::write(&csv_path, csv.finish())?;
    let histogram_path = config.out_path("histogram.csv")?;
    std::fs::write(&histogram_path, hist_csv.finish())?;
    let n = data.len().max(1) as f64;
    Ok(DiagnoseSummary {
        images: data.len(),
        mean_local_error_clean: err_clean / n,
        mean_local_error_attacked: err_attacked / n,
        global_attack_success: successes as f64 / n,
        csv_path,
        histogram_path,
    })
}

pub struct OracleSummary {
    pub lemma1_failures: usize,
    pub lemma1_attained: usize,
    pub lemma2_failures: usize,
    pub soundness_violations: usize,
    pub all_cases_seen: bool,
    pub csv_path: PathBuf,
}

impl OracleSummary {
    pub fn violations(&self) -> usize {
        self.lemma1_failures + self.lemma2_failures + self.soundness_violations
            + (!self.all_cases_seen) as usize
    }
}

pub const ORACLE_HEADER: [&str; 4] = ["check", "index", "holds", "detail"];

/// Runs the brute-force corpora; any failure makes [`OracleSummary::violations`]
/// nonzero, which the CLI turns into a failing exit status.
pub fn run_oracle(config: &ExperimentConfig) -> Result<OracleSummary> {
    let mut csv = CsvWriter::new(&ORACLE_HEADER);
    let mut summary = OracleSummary {
        lemma1_failures: 0,
        lemma1_attained: 0,
        lemma2_failures: 0,
        soundness_violations: 0,
        all_cases_seen: false,
        csv_path: PathBuf::new(),
    };
    let mut cases = [false; 4];
    for (index, case) in lemma1_corpus(config.seed, config.oracle_lemma1).iter().enumerate() {
        let report = verify_lemma1(&case.clean, &case.window, &case.scenario)?;
        if !report.holds {
            summary.lemma1_failures += 1;
        }
        for (seen, s) in cases.iter_mut().zip(report.cases_seen) {
            *seen |= s;
        }
        let attained = report.per_class.iter().any(|b| b.bound > 0.0 && b.attained());
        summary.lemma1_attained += attained as usize;
        let worst_gap = report
            .per_class
            .iter()
            .map(|b| b.bound - b.max_observed)
            .fold(f64::INFINITY, f64::min);
        csv.row(&[
            "evidence_bound".into(),
            index.to_string(),
            (report.holds as u8).to_string(),
            fmt_f64(worst_gap),
        ]);
    }
    summary.all_cases_seen = cases.iter().all(|c| *c);
    for (index, case) in lemma2_corpus(config.seed + 1, config.oracle_lemma2).iter().enumerate() {
        let report = verify_lemma2(&case.clean, case.malicious_shape, &case.scenario)?;
        let ok = report.holds && report.dominance_holds;
        if !ok {
            summary.lemma2_failures += 1;
        }
        csv.row(&[
            "oversized_bound".into(),
            index.to_string(),
            (ok as u8).to_string(),
            report.adversaries.to_string(),
        ]);
    }
    let soundness = verify_soundness(config.seed + 2, config.oracle_trials)?;
    summary.soundness_violations = soundness.violations;
    csv.row(&[
        "soundness".into(),
        "0".into(),
        ((soundness.violations == 0) as u8).to_string(),
        format!("certified={} adversaries={}", soundness.certified, soundness.adversaries),
    ]);
    csv.row(&[
        "case_coverage".into(),
        "0".into(),
        (summary.all_cases_seen as u8).to_string(),
        cases.map(|c| (c as u8).to_string()).join(";"),
    ]);
    summary.csv_path = config.out_path("oracle.csv")?;
    std::fs::write(&summary.csv_path, csv.finish())?;
    Ok(summary)
}

pub struct SweepSummary {
    pub rows: usize,
    pub csv_path: PathBuf,
}

pub const SWEEP_HEADER: [&str; 4] = ["dimension", "value", "clean_accuracy", "provable_robust_accuracy"];

/// One-dimensional parameter sweeps around the base configuration: receptive
/// field (retrains per value), detection threshold, feature kind, and patch
/// bound. Trains on `dataset`, evaluates on `val_dataset`.
pub fn run_eval_sweep(config: &ExperimentConfig) -> Result<SweepSummary> {
    let train_data = config.require_dataset()?;
    let val_path = config
        .val_dataset
        .as_ref()
        .ok_or_else(|| Error::Config("'val_dataset' is required for sweeps".into()))?;
    let val = crate::formats::read_dataset(val_path)?;
    let (rows, cols, _) = train_data.dims().ok_or_else(|| Error::contract("dataset is empty"))?;
    let mut csv = CsvWriter::new(&SWEEP_HEADER);
    let mut row_count = 0usize;

    let evaluate = |model: &PatchEnsembleModel,
                    kind: FeatureKind,
                    threshold: f64,
                    patch_pct: f64|
     -> Result<(f64, f64)> {
        let geom = *model.geom();
        let pixels = (geom.image_rows() * geom.image_cols()) as f64;
        let side = ((patch_pct * pixels).sqrt().ceil() as usize).max(1);
        let malicious = mask_shape(&PatchSpec::square(side)?, &geom);
        let masking = MaskingConfig::new(
            ClipBounds::new(config.clip_lo, config.clip_hi)?,
            threshold,
            malicious,
        )?;
        let mut correct = 0usize;
        let mut provable = 0usize;
        for i in 0..val.len() {
            let label = val.label(i);
            let features = extract_features(model, val.image(i), kind)?;
            let predicted = robust_masking(&features, &masking)?.predicted;
            let certified = if threshold < 1.0 {
                certify_masking(&features, label, &masking)?.certified
            } else {
                false
            };
            correct += (predicted == label) as usize;
            provable += (predicted == label && certified) as usize;
        }
        let n = val.len().max(1) as f64;
        Ok((correct as f64 / n, provable as f64 / n))
    };

    let train_at = |rf: usize| -> Result<PatchEnsembleModel> {
        let geom = config.geometry_for(rows, cols, rf)?;
        let side = config.patch_side(rows, cols);
        let adv_mask = mask_shape(&PatchSpec::square(side)?, &geom);
        let output = if config.adv_train {
            train_provable_adv(&train_data, &geom, &config.train_config(Some(adv_mask)))?
        } else {
            train(&train_data, &geom, &config.train_config(None))?
        };
        Ok(output.model)
    };

    for &rf in &config.sweep_rf {
        let model = train_at(rf)?;
        let (clean, provable) = evaluate(&model, config.kind, config.threshold, config.patch_pct)?;
        csv.row(&["rf".into(), rf.to_string(), fmt_f64(clean), fmt_f64(provable)]);
        row_count += 1;
    }
    let base_model = train_at(config.rf)?;
    for &threshold in &config.sweep_threshold {
        let (clean, provable) = evaluate(&base_model, config.kind, threshold, config.patch_pct)?;
        csv.row(&["threshold".into(), fmt_f64(threshold), fmt_f64(clean), fmt_f64(provable)]);
        row_count += 1;
    }
    for &kind in &config.sweep_kind {
        let (clean, provable) = evaluate(&base_model, kind, config.threshold, config.patch_pct)?;
        csv.row(&["kind".into(), kind.to_string(), fmt_f64(clean), fmt_f64(provable)]);
        row_count += 1;
    }
    for &pct in &config.sweep_patch_pct {
        let (clean, provable) = evaluate(&base_model, config.kind, config.threshold, pct)?;
        csv.row(&["patch_pct".into(), fmt_f64(pct), fmt_f64(clean), fmt_f64(provable)]);
        row_count += 1;
    }
    let csv_path = config.out_path("sweep.csv")?;
    std::fs::write(&csv_path, csv.finish())?;
    Ok(SweepSummary { rows: row_count, csv_path })
}

pub struct GenSummary {
    pub images: usize,
    pub dataset_path: PathBuf,
}

/// Generates the built-in synthetic dataset and writes it to `dataset`.
pub fn run_gen(config: &ExperimentConfig) -> Result<GenSummary> {
    let path = config
        .dataset
        .clone()
        .ok_or_else(|| Error::Config("'dataset' output path is required".into()))?;
    let data = crate::synth::generate(
        config.gen_count,
        config.gen_side,
        config.gen_classes,
        config.gen_noise,
        config.seed,
    )?;
    crate::formats::write_dataset(&data, &path)?;
    Ok(GenSummary { images: data.len(), dataset_path: path })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(dir: &Path, text: &str) -> PathBuf {
        let path = dir.join("exp.cfg");
        std::fs::write(&path, text).unwrap();
        path
    }

    fn desk_config(dir: &Path) -> ExperimentConfig {
        let mut config = ExperimentConfig::default();
        config
            .apply(&parse_config("gen_count=60\ngen_side=16\ngen_classes=3\nrf=5\nstride=3\nhidden=12\nepochs=6\nbatch_size=16\nlearning_rate=0.1\npatch=3\n").unwrap())
            .unwrap();
        config.dataset = Some(dir.join("train.pgds"));
        config.model = Some(dir.join("model.pgmd"));
        config.out_dir = Some(dir.join("out"));
        config
    }

    #[test]
    fn config_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(
            dir.path(),
            "rf=7\nstride=2\nkind=confidence\nclip_hi=inf\nthreshold=0.25\nsweep_rf=3,5\n",
        );
        let config = ExperimentConfig::load(&path).unwrap();
        assert_eq!(config.rf, 7);
        assert_eq!(config.stride, 2);
        assert_eq!(config.kind, FeatureKind::Confidence);
        assert_eq!(config.clip_hi, f64::INFINITY);
        assert_eq!(config.threshold, 0.25);
        assert_eq!(config.sweep_rf, vec![3, 5]);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut config = ExperimentConfig::default();
        let mut pairs = BTreeMap::new();
        pairs.insert("no_such_key".to_string(), "1".to_string());
        assert!(config.apply(&pairs).is_err());
    }

    #[test]
    fn patch_side_from_fraction() {
        let config = ExperimentConfig::default();
        // 3% of 32*32 = 30.72 pixels; side = ceil(sqrt) = 6.
        assert_eq!(config.patch_side(32, 32), 6);
    }

    #[test]
    fn gen_train_certify_pipeline() {
        let dir = tempfile::tempdir().unwrap();
        let config = desk_config(dir.path());
        let gen = run_gen(&config).unwrap();
        assert_eq!(gen.images, 60);
        let summary = run_train(&config).unwrap();
        assert!(summary.final_loss.is_finite());
        let cert = run_certify(&config).unwrap();
        assert_eq!(cert.images, 60);
        let csv = std::fs::read_to_string(&cert.csv_path).unwrap();
        assert!(csv.starts_with("index,true_label,predicted,"));
        assert_eq!(csv.lines().count(), 61);
    }

    #[test]
    fn certify_on_empty_dataset_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = desk_config(dir.path());
        run_gen(&config).unwrap();
        run_train(&config).unwrap();
        // Swap in an empty dataset with the same shape metadata.
        let empty = LabeledDataset::new(vec![], vec![], 3).unwrap();
        let empty_path = dir.path().join("empty.pgds");
        crate::formats::write_dataset(&empty, &empty_path).unwrap();
        config.dataset = Some(empty_path);
        let cert = run_certify(&config).unwrap();
        let csv = std::fs::read_to_string(&cert.csv_path).unwrap();
        assert_eq!(csv.lines().count(), 1);
        assert_eq!(cert.images, 0);
    }

    #[test]
    fn certify_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let config = desk_config(dir.path());
        run_gen(&config).unwrap();
        run_train(&config).unwrap();
        run_certify(&config).unwrap();
        let first = std::fs::read(dir.path().join("out/certify.csv")).unwrap();
        run_certify(&config).unwrap();
        let second = std::fs::read(dir.path().join("out/certify.csv")).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn oracle_csv_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = ExperimentConfig::default();
        config.out_dir = Some(dir.path().to_path_buf());
        config.oracle_lemma1 = 30;
        config.oracle_lemma2 = 10;
        config.oracle_trials = 30;
        let summary = run_oracle(&config).unwrap();
        assert_eq!(summary.lemma1_failures, 0);
        assert_eq!(summary.lemma2_failures, 0);
        assert_eq!(summary.soundness_violations, 0);
        let csv = std::fs::read_to_string(&summary.csv_path).unwrap();
        assert!(csv.starts_with("check,index,holds,detail\n"));
    }
}

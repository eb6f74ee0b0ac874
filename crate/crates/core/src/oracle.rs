//! Brute-force verification harness: exhaustively enumerate feature-space
//! adversaries on small grids and check them against the masking evidence
//! bounds and the end-to-end certification guarantee.
//!
//! Prediction-kind adversaries assign every one-hot combination to the window
//! cells. Logits-kind adversaries draw each (cell, class) value from a finite
//! level set, augmented per class with the clip bounds (or a finite cap when
//! the upper bound is infinite), and with the detection-evasion value
//! t*T/(1-T) spread over the window, both exactly and nudged one part in 1e12
//! below the detection boundary. Enumeration sizes are checked against the
//! scenario budget up front with an exact count.

use crate::aggregate::{detect, robust_masking, MaskingConfig};
use crate::certify::{certify_masking_with_rule, CertResult, ComparisonRule};
use crate::error::{Error, Result};
use crate::tensor::{enumerate_windows, FeatureKind, FeatureTensor, Window};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_BUDGET: u64 = 10_000_000;

/// Enumeration parameters: the masking configuration under test, the base
/// level set for logits-kind adversaries, and the evaluation budget.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleScenario {
    pub config: MaskingConfig,
    pub levels: Vec<f64>,
    pub budget: u64,
}

impl OracleScenario {
    pub fn new(config: MaskingConfig, levels: Vec<f64>) -> Self {
        OracleScenario { config, levels, budget: DEFAULT_BUDGET }
    }
}

enum EnumMode {
    /// Digit per window cell: which class the cell votes for.
    Prediction { classes: usize },
    /// Digit per (cell, class) pair: index into that class's level set.
    Logits { class_levels: Vec<Vec<f64>> },
}

/// Iterator over every adversarial tensor differing from the clean one only
/// inside the window.
pub struct AdversaryEnumeration {
    base: FeatureTensor,
    cells: Vec<(usize, usize)>,
    mode: EnumMode,
    digits: Vec<usize>,
    done: bool,
}

impl AdversaryEnumeration {
    /// Exact number of adversaries this enumeration yields.
    pub fn total_count(&self) -> u128 {
        enumeration_count(&self.mode, self.cells.len())
    }
}

fn enumeration_count(mode: &EnumMode, cells: usize) -> u128 {
    match mode {
        EnumMode::Prediction { classes } => (*classes as u128).saturating_pow(cells as u32),
        EnumMode::Logits { class_levels } => {
            let mut total: u128 = 1;
            for levels in class_levels {
                total = total.saturating_mul((levels.len() as u128).saturating_pow(cells as u32));
            }
            total
        }
    }
}

/// Per-class level sets: the base scenario levels plus the clip bounds (a
/// finite cap stands in for an infinite upper bound) and the detection
/// evasion values derived from the class's outside evidence.
fn augmented_levels(
    clean: &FeatureTensor,
    window: &Window,
    scenario: &OracleScenario,
) -> Vec<Vec<f64>> {
    let config = &scenario.config;
    let max_clean = clean.values().iter().cloned().fold(0.0f64, f64::max);
    let cap = if config.bounds.hi().is_finite() {
        config.bounds.hi()
    } else {
        10.0 * max_clean.max(1.0)
    };
    let cells = window.cell_count() as f64;
    (0..clean.classes())
        .map(|class| {
            let mut levels = scenario.levels.clone();
            levels.push(config.bounds.lo());
            levels.push(cap);
            if config.threshold > 0.0 && config.threshold < 1.0 {
                let outside: f64 = {
                    let mut sum = 0.0;
                    for r in 0..clean.rows() {
                        for c in 0..clean.cols() {
                            if !window.contains_cell(r, c) {
                                sum += config.bounds.apply(clean.value(r, c, class));
                            }
                        }
                    }
                    sum
                };
                let evade = outside * config.threshold / (1.0 - config.threshold);
                levels.push(evade / cells);
                levels.push(evade * (1.0 - 1e-12) / cells);
            }
            levels.sort_by(|a, b| a.partial_cmp(b).expect("finite levels"));
            levels.dedup();
            levels
        })
        .collect()
}

/// Every adversarial tensor that differs from `clean` only inside `window`.
pub fn enumerate_adversaries(
    clean: &FeatureTensor,
    window: &Window,
    scenario: &OracleScenario,
) -> Result<AdversaryEnumeration> {
    if !window.fits(clean.rows(), clean.cols()) {
        return Err(Error::contract("window does not fit feature grid"));
    }
    let mut cells = Vec::with_capacity(window.cell_count());
    for r in window.row0..window.row0 + window.rows {
        for c in window.col0..window.col0 + window.cols {
            cells.push((r, c));
        }
    }
    let mode = match clean.kind() {
        FeatureKind::Prediction => EnumMode::Prediction { classes: clean.classes() },
        FeatureKind::Logits => {
            EnumMode::Logits { class_levels: augmented_levels(clean, window, scenario) }
        }
        FeatureKind::Confidence => {
            return Err(Error::contract(
                "adversary enumeration supports prediction and logits features",
            ));
        }
    };
    let required = enumeration_count(&mode, cells.len());
    if required > scenario.budget as u128 {
        return Err(Error::BudgetExceeded { required, budget: scenario.budget });
    }
    let digit_count = match &mode {
        EnumMode::Prediction { .. } => cells.len(),
        EnumMode::Logits { .. } => cells.len() * clean.classes(),
    };
    Ok(AdversaryEnumeration {
        base: clean.clone(),
        cells,
        mode,
        digits: vec![0; digit_count],
        done: false,
    })
}

impl Iterator for AdversaryEnumeration {
    type Item = FeatureTensor;

    fn next(&mut self) -> Option<FeatureTensor> {
        if self.done {
            return None;
        }
        let classes = self.base.classes();
        let cols = self.base.cols();
        let mut values = self.base.values().to_vec();
        match &self.mode {
            EnumMode::Prediction { .. } => {
                for (cell_idx, &(r, c)) in self.cells.iter().enumerate() {
                    let vote = self.digits[cell_idx];
                    let base = (r * cols + c) * classes;
                    for k in 0..classes {
                        values[base + k] = if k == vote { 1.0 } else { 0.0 };
                    }
                }
            }
            EnumMode::Logits { class_levels } => {
                for (cell_idx, &(r, c)) in self.cells.iter().enumerate() {
                    let base = (r * cols + c) * classes;
                    for k in 0..classes {
                        let digit = self.digits[cell_idx * classes + k];
                        values[base + k] = class_levels[k][digit];
                    }
                }
            }
        }
        let out = FeatureTensor::from_raw(
            self.base.rows(),
            self.base.cols(),
            classes,
            self.base.kind(),
            values,
        );
        // Advance the odometer.
        let radix = |i: usize| -> usize {
            match &self.mode {
                EnumMode::Prediction { classes } => *classes,
                EnumMode::Logits { class_levels } => class_levels[i % classes].len(),
            }
        };
        let mut pos = 0;
        loop {
            if pos == self.digits.len() {
                self.done = true;
                break;
            }
            self.digits[pos] += 1;
            if self.digits[pos] < radix(pos) {
                break;
            }
            self.digits[pos] = 0;
            pos += 1;
        }
        Some(out)
    }
}

/// Which proof case a detection outcome realizes relative to the malicious
/// window: exact match, disjoint (benign), overlapping (partial), or no
/// detection at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionCase {
    Perfect,
    Benign,
    Partial,
    NoDetection,
}

impl DetectionCase {
    pub fn index(self) -> usize {
        match self {
            DetectionCase::Perfect => 0,
            DetectionCase::Benign => 1,
            DetectionCase::Partial => 2,
            DetectionCase::NoDetection => 3,
        }
    }
}

fn case_of(detected: Option<Window>, malicious: &Window) -> DetectionCase {
    match detected {
        None => DetectionCase::NoDetection,
        Some(d) if d == *malicious => DetectionCase::Perfect,
        Some(d) if d.overlap_cells(malicious) == 0 => DetectionCase::Benign,
        Some(_) => DetectionCase::Partial,
    }
}

/// Classifies the detection outcome on one class slice of an adversarial
/// tensor against the malicious window it was built from.
pub fn classify_case(
    adversarial: &FeatureTensor,
    malicious: &Window,
    class: usize,
    config: &MaskingConfig,
) -> Result<DetectionCase> {
    let mut slice = adversarial.class_slice(class)?;
    for v in slice.iter_mut() {
        *v = config.bounds.apply(*v);
    }
    let detected = if config.threshold >= 1.0 {
        None
    } else {
        detect(
            &slice,
            adversarial.rows(),
            adversarial.cols(),
            config.threshold,
            config.mask_shape(),
        )?
    };
    Ok(case_of(detected, malicious))
}

#[derive(Debug, Clone)]
pub struct ClassBound {
    pub class: usize,
    pub max_observed: f64,
    pub bound: f64,
}

impl ClassBound {
    /// Whether the enumeration attained the bound within 1e-9 (relative for
    /// large bounds).
    pub fn attained(&self) -> bool {
        self.bound - self.max_observed <= 1e-9 * self.bound.abs().max(1.0)
    }
}

#[derive(Debug, Clone)]
pub struct Lemma1Report {
    pub holds: bool,
    pub per_class: Vec<ClassBound>,
    /// Which detection cases were witnessed, indexed by [`DetectionCase::index`].
    pub cases_seen: [bool; 4],
    pub adversaries: u128,
}

/// Checks the masked-evidence bound: over every enumerated adversary in the
/// window, each class's masked evidence stays at or below
/// (clean outside evidence) / (1 - T), within 1e-9.
pub fn verify_lemma1(
    clean: &FeatureTensor,
    window: &Window,
    scenario: &OracleScenario,
) -> Result<Lemma1Report> {
    let config = &scenario.config;
    if config.threshold >= 1.0 {
        return Err(Error::contract("the evidence bound requires threshold < 1"));
    }
    if config.bounds.lo() != 0.0 {
        return Err(Error::contract("the evidence bound requires a zero lower clip bound"));
    }
    let classes = clean.classes();
    let mut bounds = Vec::with_capacity(classes);
    for class in 0..classes {
        let mut outside = 0.0;
        for r in 0..clean.rows() {
            for c in 0..clean.cols() {
                if !window.contains_cell(r, c) {
                    outside += config.bounds.apply(clean.value(r, c, class));
                }
            }
        }
        bounds.push(outside / (1.0 - config.threshold));
    }
    let enumeration = enumerate_adversaries(clean, window, scenario)?;
    let total = enumeration.total_count();
    let mut max_observed = vec![f64::NEG_INFINITY; classes];
    let mut cases_seen = [false; 4];
    for adv in enumeration {
        let outcome = robust_masking(&adv, config)?;
        for class in 0..classes {
            max_observed[class] = max_observed[class].max(outcome.per_class_evidence[class]);
            cases_seen[case_of(outcome.detected_windows[class], window).index()] = true;
        }
    }
    let per_class: Vec<ClassBound> = (0..classes)
        .map(|class| ClassBound {
            class,
            max_observed: max_observed[class],
            bound: bounds[class],
        })
        .collect();
    let holds = per_class.iter().all(|b| b.max_observed <= b.bound + 1e-9);
    Ok(Lemma1Report { holds, per_class, cases_seen, adversaries: total })
}

#[derive(Debug, Clone)]
pub struct Lemma2Report {
    pub holds: bool,
    /// The oversized-mask bound never exceeds the equal-shape bound of any
    /// covering mask window.
    pub dominance_holds: bool,
    pub adversaries: u128,
}

/// Checks the oversized-mask evidence bound: adversaries fill malicious
/// windows of `malicious_shape` while detection runs at the scenario config's
/// (larger) mask shape. Also asserts the bound is at least as tight as the
/// equal-shape bound applied at the mask shape.
pub fn verify_lemma2(
    clean: &FeatureTensor,
    malicious_shape: (usize, usize),
    scenario: &OracleScenario,
) -> Result<Lemma2Report> {
    let config = &scenario.config;
    let (mask_rows, mask_cols) = config.mask_shape();
    if malicious_shape.0 > mask_rows || malicious_shape.1 > mask_cols {
        return Err(Error::contract("malicious window larger than mask"));
    }
    if config.threshold >= 1.0 || config.bounds.lo() != 0.0 {
        return Err(Error::contract("the evidence bound requires threshold < 1 and zero lower clip"));
    }
    let (rows, cols) = (clean.rows(), clean.cols());
    let classes = clean.classes();
    let malicious = enumerate_windows(rows, cols, malicious_shape.0, malicious_shape.1)?;
    let masks = enumerate_windows(rows, cols, mask_rows, mask_cols)?;
    let scale = 1.0 / (1.0 - config.threshold);
    let clipped: Vec<Vec<f64>> = (0..classes)
        .map(|class| {
            let mut s = clean.class_slice(class).expect("class in range");
            for v in s.iter_mut() {
                *v = config.bounds.apply(*v);
            }
            s
        })
        .collect();
    let totals: Vec<f64> = clipped.iter().map(|s| s.iter().sum()).collect();

    let mut holds = true;
    let mut dominance = true;
    let mut adversaries: u128 = 0;
    for w in &malicious {
        let covering: Vec<&Window> = masks.iter().filter(|v| v.covers(w)).collect();
        let mut bound2 = vec![0.0; classes];
        for class in 0..classes {
            let mut best_inside = f64::NEG_INFINITY;
            let mut lemma1_min = f64::INFINITY;
            for v in &covering {
                let mut inside = 0.0;
                for r in v.row0..v.row0 + v.rows {
                    for c in v.col0..v.col0 + v.cols {
                        inside += clipped[class][r * cols + c];
                    }
                }
                best_inside = best_inside.max(inside);
                lemma1_min = lemma1_min.min((totals[class] - inside) * scale);
            }
            bound2[class] = (totals[class] - best_inside) * scale;
            if bound2[class] > lemma1_min + 1e-12 {
                dominance = false;
            }
        }
        let enumeration = enumerate_adversaries(clean, w, scenario)?;
        adversaries += enumeration.total_count();
        for adv in enumeration {
            let outcome = robust_masking(&adv, config)?;
            for class in 0..classes {
                if outcome.per_class_evidence[class] > bound2[class] + 1e-9 {
                    holds = false;
                }
            }
        }
    }
    Ok(Lemma2Report { holds, dominance_holds: dominance, adversaries })
}

/// One randomly drawn soundness trial setup.
struct Trial {
    clean: FeatureTensor,
    true_label: usize,
    scenario: OracleScenario,
}

fn sample_trial(rng: &mut ChaCha8Rng, budget: u64) -> Trial {
    let prediction_kind = rng.gen::<f64>() < 0.7;
    let rows = rng.gen_range(3..=4);
    let cols = rng.gen_range(3..=4);
    let threshold = [0.0, 0.2, 0.5][rng.gen_range(0..3)];
    if prediction_kind {
        let classes = rng.gen_range(2..=4);
        let values = {
            let mut v = vec![0.0; rows * cols * classes];
            for cell in 0..rows * cols {
                let vote = rng.gen_range(0..classes);
                v[cell * classes + vote] = 1.0;
            }
            v
        };
        let clean =
            FeatureTensor::new(rows, cols, classes, FeatureKind::Prediction, values).unwrap();
        let mask = (rng.gen_range(1..=2), rng.gen_range(1..=2));
        let config = MaskingConfig::new(Default::default(), threshold, mask).unwrap();
        let mut scenario = OracleScenario::new(config, vec![]);
        scenario.budget = budget;
        Trial { clean, true_label: rng.gen_range(0..classes), scenario }
    } else {
        let classes = 2;
        let values: Vec<f64> =
            (0..rows * cols * classes).map(|_| rng.gen_range(0.0..2.0)).collect();
        let clean = FeatureTensor::new(rows, cols, classes, FeatureKind::Logits, values).unwrap();
        let mask = (1, rng.gen_range(1..=2));
        let config = MaskingConfig::new(Default::default(), threshold, mask).unwrap();
        let mut scenario = OracleScenario::new(config, vec![0.5, 1.0]);
        scenario.budget = budget;
        Trial { clean, true_label: rng.gen_range(0..classes), scenario }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SoundnessReport {
    pub trials: usize,
    pub certified: usize,
    pub violations: usize,
    pub adversaries: u128,
}

/// Certify-then-enumerate: for every certified random scenario, every
/// enumerated adversary in every malicious window must leave the masked
/// prediction at the true label. Returns the violation count, which the
/// certification guarantee says must be zero.
pub fn verify_soundness(seed: u64, trials: usize) -> Result<SoundnessReport> {
    verify_soundness_with_rule(seed, trials, ComparisonRule::TieAware)
}

/// Same trial stream with a selectable certification comparison, so tests can
/// demonstrate that the strict-only comparison admits violations.
pub fn verify_soundness_with_rule(
    seed: u64,
    trials: usize,
    rule: ComparisonRule,
) -> Result<SoundnessReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SoundnessReport { trials, ..Default::default() };
    for _ in 0..trials {
        let trial = sample_trial(&mut rng, DEFAULT_BUDGET);
        let cert: CertResult = certify_masking_with_rule(
            &trial.clean,
            trial.true_label,
            &trial.scenario.config,
            rule,
        )?;
        if !cert.certified {
            continue;
        }
        report.certified += 1;
        report.violations +=
            count_successful_adversaries(&trial.clean, trial.true_label, &trial.scenario, &mut report.adversaries)?;
    }
    Ok(report)
}

/// Enumerates every malicious window and adversary; counts prediction flips.
fn count_successful_adversaries(
    clean: &FeatureTensor,
    true_label: usize,
    scenario: &OracleScenario,
    adversaries: &mut u128,
) -> Result<usize> {
    let (mask_rows, mask_cols) = scenario.config.mask_shape();
    let windows = enumerate_windows(clean.rows(), clean.cols(), mask_rows, mask_cols)?;
    let mut violations = 0;
    for w in &windows {
        let enumeration = enumerate_adversaries(clean, w, scenario)?;
        *adversaries += enumeration.total_count();
        for adv in enumeration {
            let outcome = robust_masking(&adv, &scenario.config)?;
            if outcome.predicted != true_label {
                violations += 1;
            }
        }
    }
    Ok(violations)
}

/// A ready-to-run evidence-bound scenario.
pub struct Lemma1Case {
    pub clean: FeatureTensor,
    pub window: Window,
    pub scenario: OracleScenario,
    /// Engineered to attain the no-detection bound exactly.
    pub engineered_case_iv: bool,
}

/// Deterministic corpus of evidence-bound scenarios. Every 25th entry is the
/// engineered boundary scenario: a single-cell malicious window, benign
/// evidence spread far from it, and a threshold of 0.5, so the evasion value
/// in the level set attains the bound.
pub fn lemma1_corpus(seed: u64, count: usize) -> Vec<Lemma1Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for index in 0..count {
        if index % 25 == 7 {
            out.push(engineered_case_iv());
            continue;
        }
        let prediction_kind = rng.gen::<f64>() < 0.7;
        let threshold = [0.0, 0.0, 0.2, 0.5][rng.gen_range(0..4)];
        let rows = rng.gen_range(3..=5);
        let cols = rng.gen_range(3..=5);
        let (clean, levels) = if prediction_kind {
            let classes = rng.gen_range(2..=4);
            let mut values = vec![0.0; rows * cols * classes];
            for cell in 0..rows * cols {
                values[cell * classes + rng.gen_range(0..classes)] = 1.0;
            }
            (
                FeatureTensor::new(rows, cols, classes, FeatureKind::Prediction, values).unwrap(),
                vec![],
            )
        } else {
            let classes = 2;
            let values: Vec<f64> =
                (0..rows * cols * classes).map(|_| rng.gen_range(0.0..2.0)).collect();
            (
                FeatureTensor::new(rows, cols, classes, FeatureKind::Logits, values).unwrap(),
                vec![0.5, 1.0],
            )
        };
        let max_cells = if prediction_kind { 4 } else { 2 };
        let (wr, wc) = loop {
            let wr = rng.gen_range(1..=2.min(rows));
            let wc = rng.gen_range(1..=2.min(cols));
            if wr * wc <= max_cells {
                break (wr, wc);
            }
        };
        let config = MaskingConfig::new(Default::default(), threshold, (wr, wc)).unwrap();
        let row0 = rng.gen_range(0..=rows - wr);
        let col0 = rng.gen_range(0..=cols - wc);
        out.push(Lemma1Case {
            clean,
            window: Window { row0, col0, rows: wr, cols: wc },
            scenario: OracleScenario::new(config, levels),
            engineered_case_iv: false,
        });
    }
    out
}

fn engineered_case_iv() -> Lemma1Case {
    // 5x5, two classes. The wrong class holds 1/24 in every cell except the
    // single malicious cell at the origin; the true class is uniform. With
    // threshold 0.5 the evasion value equals the outside evidence, and no
    // window's normalized sum can exceed the threshold.
    let rows = 5;
    let cols = 5;
    let mut values = vec![0.0; rows * cols * 2];
    for cell in 0..rows * cols {
        values[cell * 2] = 1.0;
        values[cell * 2 + 1] = 1.0 / 24.0;
    }
    values[1] = 0.0; // wrong-class evidence at the malicious cell
    let clean = FeatureTensor::new(rows, cols, 2, FeatureKind::Logits, values).unwrap();
    let config = MaskingConfig::new(Default::default(), 0.5, (1, 1)).unwrap();
    Lemma1Case {
        clean,
        window: Window { row0: 0, col0: 0, rows: 1, cols: 1 },
        scenario: OracleScenario::new(config, vec![]),
        engineered_case_iv: true,
    }
}

/// A ready-to-run oversized-mask scenario.
pub struct Lemma2Case {
    pub clean: FeatureTensor,
    pub malicious_shape: (usize, usize),
    pub scenario: OracleScenario,
}

/// Deterministic corpus of oversized-mask scenarios: the malicious window is
/// strictly smaller than the detection mask in at least one axis.
pub fn lemma2_corpus(seed: u64, count: usize) -> Vec<Lemma2Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let prediction_kind = rng.gen::<f64>() < 0.7;
        let threshold = [0.0, 0.2][rng.gen_range(0..2)];
        let rows = rng.gen_range(3..=4);
        let cols = rng.gen_range(3..=4);
        let (clean, levels) = if prediction_kind {
            let classes = rng.gen_range(2..=3);
            let mut values = vec![0.0; rows * cols * classes];
            for cell in 0..rows * cols {
                values[cell * classes + rng.gen_range(0..classes)] = 1.0;
            }
            (
                FeatureTensor::new(rows, cols, classes, FeatureKind::Prediction, values).unwrap(),
                vec![],
            )
        } else {
            let classes = 2;
            let values: Vec<f64> =
                (0..rows * cols * classes).map(|_| rng.gen_range(0.0..2.0)).collect();
            (
                FeatureTensor::new(rows, cols, classes, FeatureKind::Logits, values).unwrap(),
                vec![1.0],
            )
        };
        let malicious = (1, 1);
        let mask = (rng.gen_range(1..=2), 2);
        let config = MaskingConfig::new(Default::default(), threshold, mask).unwrap();
        out.push(Lemma2Case {
            clean,
            malicious_shape: malicious,
            scenario: OracleScenario::new(config, levels),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::certify_masking;
    use crate::tensor::ClipBounds;

    fn prediction_tensor(rows: usize, cols: usize, classes: usize, votes: &[usize]) -> FeatureTensor {
        let mut values = vec![0.0; rows * cols * classes];
        for (cell, &v) in votes.iter().enumerate() {
            values[cell * classes + v] = 1.0;
        }
        FeatureTensor::new(rows, cols, classes, FeatureKind::Prediction, values).unwrap()
    }

    #[test]
    fn prediction_enumeration_is_exhaustive() {
        let clean = prediction_tensor(3, 3, 2, &[0; 9]);
        let window = Window { row0: 0, col0: 0, rows: 2, cols: 2 };
        let scenario =
            OracleScenario::new(MaskingConfig::with_defaults((2, 2)).unwrap(), vec![]);
        let adversaries: Vec<FeatureTensor> =
            enumerate_adversaries(&clean, &window, &scenario).unwrap().collect();
        assert_eq!(adversaries.len(), 16); // 2^4
        // All distinct, and only window cells changed.
        for (i, a) in adversaries.iter().enumerate() {
            for b in &adversaries[i + 1..] {
                assert_ne!(a.values(), b.values());
            }
            for r in 0..3 {
                for c in 0..3 {
                    if !window.contains_cell(r, c) {
                        assert_eq!(a.cell(r, c), clean.cell(r, c));
                    }
                }
            }
        }
    }

    #[test]
    fn budget_is_enforced_exactly() {
        let clean = prediction_tensor(3, 3, 3, &[0; 9]);
        let window = Window { row0: 0, col0: 0, rows: 2, cols: 2 };
        let mut scenario =
            OracleScenario::new(MaskingConfig::with_defaults((2, 2)).unwrap(), vec![]);
        scenario.budget = 80; // 3^4 = 81 needed
        match enumerate_adversaries(&clean, &window, &scenario) {
            Err(Error::BudgetExceeded { required, budget }) => {
                assert_eq!(required, 81);
                assert_eq!(budget, 80);
            }
            other => panic!("expected budget error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn lemma1_holds_on_prediction_example() {
        let votes = vec![0, 1, 0, 1, 0, 1, 0, 1, 0];
        let clean = prediction_tensor(3, 3, 2, &votes);
        let window = Window { row0: 0, col0: 0, rows: 2, cols: 2 };
        let scenario =
            OracleScenario::new(MaskingConfig::with_defaults((2, 2)).unwrap(), vec![]);
        let report = verify_lemma1(&clean, &window, &scenario).unwrap();
        assert!(report.holds);
        assert_eq!(report.adversaries, 16);
        for cb in &report.per_class {
            assert!(cb.max_observed <= cb.bound + 1e-9);
        }
    }

    #[test]
    fn lemma1_window_covering_grid_gives_zero_bound() {
        let clean = prediction_tensor(2, 2, 2, &[0, 1, 0, 1]);
        let window = Window { row0: 0, col0: 0, rows: 2, cols: 2 };
        let scenario =
            OracleScenario::new(MaskingConfig::with_defaults((2, 2)).unwrap(), vec![]);
        let report = verify_lemma1(&clean, &window, &scenario).unwrap();
        assert!(report.holds);
        for cb in &report.per_class {
            assert_eq!(cb.bound, 0.0);
            assert!(cb.max_observed <= 1e-12);
        }
    }

    #[test]
    fn engineered_scenario_attains_case_iv_bound() {
        let case = engineered_case_iv();
        let report = verify_lemma1(&case.clean, &case.window, &case.scenario).unwrap();
        assert!(report.holds);
        assert!(report.cases_seen[DetectionCase::NoDetection.index()]);
        let wrong = &report.per_class[1];
        assert!(wrong.bound > 0.0);
        assert!(wrong.attained(), "bound {} observed {}", wrong.bound, wrong.max_observed);
    }

    #[test]
    fn weakened_comparison_admits_violations() {
        // True class 1 with uniform evidence; wrong class 0 holds evidence 2
        // at the first cell. The strict-only certificate accepts the tensor,
        // but an enumerated adversary forces an evidence tie that the argmax
        // resolves toward class 0.
        let mut values = vec![0.0; 4 * 2];
        for cell in 0..4 {
            values[cell * 2 + 1] = 1.0;
        }
        values[0] = 2.0;
        let clean = FeatureTensor::new(1, 4, 2, FeatureKind::Logits, values).unwrap();
        let config = MaskingConfig::with_defaults((1, 1)).unwrap();
        let strict = certify_masking_with_rule(&clean, 1, &config, ComparisonRule::StrictOnly)
            .unwrap();
        assert!(strict.certified);
        assert!(!certify_masking(&clean, 1, &config).unwrap().certified);
        let scenario = OracleScenario::new(config, vec![0.0, 1.0, 2.0, 20.0]);
        let mut adversaries = 0u128;
        let violations =
            count_successful_adversaries(&clean, 1, &scenario, &mut adversaries).unwrap();
        assert!(violations > 0, "no adversary beat the strict-only certificate");
    }

    #[test]
    fn soundness_zero_trials() {
        let report = verify_soundness(1, 0).unwrap();
        assert_eq!(report.violations, 0);
        assert_eq!(report.certified, 0);
    }

    #[test]
    fn soundness_smoke() {
        let report = verify_soundness(7, 60).unwrap();
        assert_eq!(report.violations, 0);
        assert!(report.certified > 0, "no certified trials in the smoke corpus");
    }

    #[test]
    fn lemma2_smoke_and_dominance() {
        for case in lemma2_corpus(3, 20) {
            let report = verify_lemma2(&case.clean, case.malicious_shape, &case.scenario).unwrap();
            assert!(report.holds);
            assert!(report.dominance_holds);
        }
    }

    #[test]
    fn classify_case_distinguishes_all_outcomes() {
        let config = MaskingConfig::new(ClipBounds::default(), 0.5, (1, 1)).unwrap();
        let malicious = Window { row0: 0, col0: 0, rows: 1, cols: 1 };
        let mk = |values: Vec<f64>| {
            FeatureTensor::new(2, 2, 1, FeatureKind::Logits, values).unwrap()
        };
        // Huge value inside the malicious cell: perfect detection.
        let t = mk(vec![10.0, 1.0, 1.0, 1.0]);
        assert_eq!(classify_case(&t, &malicious, 0, &config).unwrap(), DetectionCase::Perfect);
        // Mass elsewhere: benign detection.
        let t = mk(vec![0.0, 0.0, 0.0, 10.0]);
        assert_eq!(classify_case(&t, &malicious, 0, &config).unwrap(), DetectionCase::Benign);
        // Uniform: nothing exceeds half the total.
        let t = mk(vec![1.0, 1.0, 1.0, 1.0]);
        assert_eq!(
            classify_case(&t, &malicious, 0, &config).unwrap(),
            DetectionCase::NoDetection
        );
        // Partial overlap needs a wider malicious window.
        let wide = Window { row0: 0, col0: 0, rows: 1, cols: 2 };
        let config2 = MaskingConfig::new(ClipBounds::default(), 0.0, (2, 1)).unwrap();
        let t = mk(vec![5.0, 0.0, 5.0, 0.0]);
        assert_eq!(classify_case(&t, &wide, 0, &config2).unwrap(), DetectionCase::Partial);
    }

    #[test]
    fn confidence_kind_enumeration_rejected() {
        let clean =
            FeatureTensor::new(1, 2, 2, FeatureKind::Confidence, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let scenario =
            OracleScenario::new(MaskingConfig::with_defaults((1, 1)).unwrap(), vec![]);
        let window = Window { row0: 0, col0: 0, rows: 1, cols: 1 };
        assert!(enumerate_adversaries(&clean, &window, &scenario).is_err());
    }
}

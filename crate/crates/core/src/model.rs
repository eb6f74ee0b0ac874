//! Desk-scale small-receptive-field classifier: one shared base classifier
//! (a one-hidden-layer perceptron) applied to every rf x rf pixel patch at
//! the geometry's stride. The per-placement outputs form the local feature
//! tensor; averaging local logits gives the insecure baseline prediction.
//!
//! Training is plain minibatch SGD on the cross-entropy of the aggregated
//! logits, bit-reproducible given the seed: weight init, the per-epoch
//! shuffle, and the ascending-index reduction order within each batch are all
//! fixed. Gradients are analytic throughout and checked against central
//! finite differences by [`gradient_check`].

use crate::aggregate::max_window_sum;
use crate::error::{Error, Result};
use crate::geometry::RFGeometry;
use crate::tensor::{argmax_lowest, ClipBounds, FeatureKind, FeatureTensor, ImageTensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The patch-ensemble model: geometry plus the shared base perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEnsembleModel {
    pub(crate) geom: RFGeometry,
    pub(crate) channels: usize,
    pub(crate) classes: usize,
    pub(crate) hidden: usize,
    /// hidden x input, row-major.
    pub(crate) w1: Vec<f64>,
    pub(crate) b1: Vec<f64>,
    /// classes x hidden, row-major.
    pub(crate) w2: Vec<f64>,
    pub(crate) b2: Vec<f64>,
}

impl PatchEnsembleModel {
    pub fn input_dim(&self) -> usize {
        self.geom.rf_rows() * self.geom.rf_cols() * self.channels
    }

    pub fn geom(&self) -> &RFGeometry {
        &self.geom
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// All-zero weights; useful as a neutral baseline.
    pub fn zeros(geom: RFGeometry, channels: usize, classes: usize, hidden: usize) -> Result<Self> {
        if channels == 0 || classes == 0 || hidden == 0 {
            return Err(Error::contract("channels, classes and hidden units must be positive"));
        }
        let input = geom.rf_rows() * geom.rf_cols() * channels;
        Ok(PatchEnsembleModel {
            geom,
            channels,
            classes,
            hidden,
            w1: vec![0.0; hidden * input],
            b1: vec![0.0; hidden],
            w2: vec![0.0; classes * hidden],
            b2: vec![0.0; classes],
        })
    }

    /// Symmetric uniform init in [-a, a] with a = sqrt(6 / (fan_in + fan_out));
    /// biases start at zero. Sampling order (w1 then w2) is part of the
    /// determinism contract.
    pub fn init(
        geom: RFGeometry,
        channels: usize,
        classes: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut model = PatchEnsembleModel::zeros(geom, channels, classes, hidden)?;
        let input = model.input_dim();
        let a1 = (6.0 / (input + hidden) as f64).sqrt();
        for w in model.w1.iter_mut() {
            *w = a1 * (2.0 * rng.gen::<f64>() - 1.0);
        }
        let a2 = (6.0 / (hidden + classes) as f64).sqrt();
        for w in model.w2.iter_mut() {
            *w = a2 * (2.0 * rng.gen::<f64>() - 1.0);
        }
        Ok(model)
    }

    pub(crate) fn from_weights(
        geom: RFGeometry,
        channels: usize,
        classes: usize,
        hidden: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    ) -> Result<Self> {
        let input = geom.rf_rows() * geom.rf_cols() * channels;
        if w1.len() != hidden * input
            || b1.len() != hidden
            || w2.len() != classes * hidden
            || b2.len() != classes
        {
            return Err(Error::contract("weight dimensions inconsistent with geometry"));
        }
        for v in w1.iter().chain(&b1).chain(&w2).chain(&b2) {
            if !v.is_finite() {
                return Err(Error::contract("non-finite weight"));
            }
        }
        Ok(PatchEnsembleModel { geom, channels, classes, hidden, w1, b1, w2, b2 })
    }

    fn check_image(&self, image: &ImageTensor) -> Result<()> {
        if image.rows() != self.geom.image_rows()
            || image.cols() != self.geom.image_cols()
            || image.channels() != self.channels
        {
            return Err(Error::contract(format!(
                "image {}x{}x{} does not match model geometry {}x{}x{}",
                image.rows(),
                image.cols(),
                image.channels(),
                self.geom.image_rows(),
                self.geom.image_cols(),
                self.channels
            )));
        }
        Ok(())
    }

    /// Gathers the pixel patch for feature cell (fr, fc) into `buf`.
    fn gather_patch(&self, image: &ImageTensor, fr: usize, fc: usize, buf: &mut [f64]) {
        let r0 = fr * self.geom.stride_rows();
        let c0 = fc * self.geom.stride_cols();
        let mut i = 0;
        for pr in 0..self.geom.rf_rows() {
            for pc in 0..self.geom.rf_cols() {
                for ch in 0..self.channels {
                    buf[i] = image.pixel(r0 + pr, c0 + pc, ch);
                    i += 1;
                }
            }
        }
    }

    /// Base classifier forward pass: pre-activations and logits.
    fn forward_patch(&self, x: &[f64], pre: &mut [f64], logits: &mut [f64]) {
        let input = x.len();
        for h in 0..self.hidden {
            let row = &self.w1[h * input..(h + 1) * input];
            let mut acc = self.b1[h];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            pre[h] = acc;
        }
        for k in 0..self.classes {
            let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
            let mut acc = self.b2[k];
            for (w, p) in row.iter().zip(pre.iter()) {
                acc += w * p.max(0.0);
            }
            logits[k] = acc;
        }
    }

    /// Local logits for every placement, row-major, as a flat
    /// (cells x classes) buffer.
    fn local_logits(&self, image: &ImageTensor) -> Vec<f64> {
        let (fr, fc) = (self.geom.feature_rows(), self.geom.feature_cols());
        let mut patch = vec![0.0; self.input_dim()];
        let mut pre = vec![0.0; self.hidden];
        let mut out = vec![0.0; fr * fc * self.classes];
        for r in 0..fr {
            for c in 0..fc {
                self.gather_patch(image, r, c, &mut patch);
                let cell = (r * fc + c) * self.classes;
                let mut logits = vec![0.0; self.classes];
                self.forward_patch(&patch, &mut pre, &mut logits);
                out[cell..cell + self.classes].copy_from_slice(&logits);
            }
        }
        out
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Local feature tensor of an image under the model: raw logits, per-cell
/// softmax confidences, or one-hot argmax predictions (ties toward the lowest
/// class index).
pub fn extract_features(
    model: &PatchEnsembleModel,
    image: &ImageTensor,
    kind: FeatureKind,
) -> Result<FeatureTensor> {
    model.check_image(image)?;
    let (fr, fc) = (model.geom.feature_rows(), model.geom.feature_cols());
    let mut values = model.local_logits(image);
    match kind {
        FeatureKind::Logits => {}
        FeatureKind::Confidence => {
            for cell in values.chunks_exact_mut(model.classes) {
                softmax_in_place(cell);
            }
        }
        FeatureKind::Prediction => {
            for cell in values.chunks_exact_mut(model.classes) {
                let best = argmax_lowest(cell);
                cell.fill(0.0);
                cell[best] = 1.0;
            }
        }
    }
    FeatureTensor::new(fr, fc, model.classes, kind, values)
}

/// Insecure baseline prediction: argmax of the mean of local logits.
pub fn predict_insecure(model: &PatchEnsembleModel, image: &ImageTensor) -> Result<usize> {
    model.check_image(image)?;
    let logits = model.local_logits(image);
    let cells = model.geom.feature_rows() * model.geom.feature_cols();
    let mut mean = vec![0.0; model.classes];
    for cell in logits.chunks_exact(model.classes) {
        for (m, v) in mean.iter_mut().zip(cell) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= cells as f64;
    }
    Ok(argmax_lowest(&mean))
}

/// Which differentiable pipeline a loss is computed through.
#[derive(Debug, Clone, Copy)]
pub(crate) enum LossPipeline {
    /// Cross-entropy of softmax(mean local logits): the training loss and
    /// the attack objective against the undefended model.
    MeanLogits,
    /// Cross-entropy of softmax of the masked mean: clip the local logits to
    /// [0, inf), zero the window with the largest true-class evidence, and
    /// average what remains over all cells.
    MaskedMean { mask_rows: usize, mask_cols: usize },
    /// Cross-entropy of softmax of per-class masked clipped sums, with each
    /// class's detected window held constant: the differentiable surrogate
    /// for attacking the defended pipeline.
    MaskedSum { bounds: ClipBounds, threshold: f64, mask_rows: usize, mask_cols: usize },
}

pub(crate) struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradients {
    fn zeros(model: &PatchEnsembleModel) -> Self {
        Gradients {
            w1: vec![0.0; model.w1.len()],
            b1: vec![0.0; model.b1.len()],
            w2: vec![0.0; model.w2.len()],
            b2: vec![0.0; model.b2.len()],
        }
    }

    fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.w1.iter_mut().zip(&other.w1) {
            *a += scale * b;
        }
        for (a, b) in self.b1.iter_mut().zip(&other.b1) {
            *a += scale * b;
        }
        for (a, b) in self.w2.iter_mut().zip(&other.w2) {
            *a += scale * b;
        }
        for (a, b) in self.b2.iter_mut().zip(&other.b2) {
            *a += scale * b;
        }
    }
}

/// Per-cell d(loss)/d(local logit) coefficients for a pipeline, along with
/// the loss value. `cells x classes`, matching `local_logits` layout.
fn pipeline_cell_grads(
    model: &PatchEnsembleModel,
    logits: &[f64],
    label: usize,
    pipeline: LossPipeline,
) -> Result<(f64, Vec<f64>)> {
    let (fr, fc) = (model.geom.feature_rows(), model.geom.feature_cols());
    let cells = fr * fc;
    let n = model.classes;
    match pipeline {
        LossPipeline::MeanLogits => {
            let mut agg = vec![0.0; n];
            for cell in logits.chunks_exact(n) {
                for (a, v) in agg.iter_mut().zip(cell) {
                    *a += v;
                }
            }
            for a in agg.iter_mut() {
                *a /= cells as f64;
            }
            let (loss, g) = cross_entropy_grad(&agg, label);
            let mut dz = vec![0.0; logits.len()];
            for cell in 0..cells {
                for k in 0..n {
                    dz[cell * n + k] = g[k] / cells as f64;
                }
            }
            Ok((loss, dz))
        }
        LossPipeline::MaskedMean { mask_rows, mask_cols } => {
            if mask_rows == 0 || mask_cols == 0 {
                return Err(Error::contract("mask shape must be positive"));
            }
            if mask_rows > fr || mask_cols > fc {
                return Err(Error::contract(format!(
                    "mask {mask_rows}x{mask_cols} larger than {fr}x{fc} feature grid"
                )));
            }
            // The window to zero is located on the clipped true-class slice,
            // mirroring the detection step of the certification; the
            // aggregation itself stays on raw logits so the objective keeps
            // the shift structure of the conventional loss.
            let bounds = ClipBounds::default();
            let true_slice: Vec<f64> =
                (0..cells).map(|i| bounds.apply(logits[i * n + label])).collect();
            let (w, _) = max_window_sum(&true_slice, fr, fc, (mask_rows, mask_cols));
            let mut agg = vec![0.0; n];
            for r in 0..fr {
                for c in 0..fc {
                    if w.contains_cell(r, c) {
                        continue;
                    }
                    let cell = r * fc + c;
                    for k in 0..n {
                        agg[k] += logits[cell * n + k];
                    }
                }
            }
            for a in agg.iter_mut() {
                *a /= cells as f64;
            }
            let (loss, g) = cross_entropy_grad(&agg, label);
            let mut dz = vec![0.0; logits.len()];
            for r in 0..fr {
                for c in 0..fc {
                    if w.contains_cell(r, c) {
                        continue;
                    }
                    let cell = r * fc + c;
                    for k in 0..n {
                        dz[cell * n + k] = g[k] / cells as f64;
                    }
                }
            }
            Ok((loss, dz))
        }
        LossPipeline::MaskedSum { bounds, threshold, mask_rows, mask_cols } => {
            if mask_rows > fr || mask_cols > fc {
                return Err(Error::contract(format!(
                    "mask {mask_rows}x{mask_cols} larger than {fr}x{fc} feature grid"
                )));
            }
            let mut agg = vec![0.0; n];
            let mut masked = vec![false; cells * n];
            for k in 0..n {
                let slice: Vec<f64> =
                    (0..cells).map(|i| bounds.apply(logits[i * n + k])).collect();
                let detected = if threshold >= 1.0 {
                    None
                } else {
                    crate::aggregate::detect(&slice, fr, fc, threshold, (mask_rows, mask_cols))?
                };
                for r in 0..fr {
                    for c in 0..fc {
                        let cell = r * fc + c;
                        if detected.map_or(false, |d| d.contains_cell(r, c)) {
                            masked[cell * n + k] = true;
                        } else {
                            agg[k] += slice[cell];
                        }
                    }
                }
            }
            let (loss, g) = cross_entropy_grad(&agg, label);
            let mut dz = vec![0.0; logits.len()];
            for cell in 0..cells {
                for k in 0..n {
                    let z = logits[cell * n + k];
                    if !masked[cell * n + k] && z > bounds.lo() && z < bounds.hi() {
                        dz[cell * n + k] = g[k];
                    }
                }
            }
            Ok((loss, dz))
        }
    }
}

/// Loss and softmax gradient of cross-entropy on an aggregated logits vector.
fn cross_entropy_grad(agg: &[f64], label: usize) -> (f64, Vec<f64>) {
    let mut p = agg.to_vec();
    softmax_in_place(&mut p);
    let loss = -p[label].max(1e-300).ln();
    let mut g = p;
    g[label] -= 1.0;
    (loss, g)
}

pub(crate) fn pipeline_loss(
    model: &PatchEnsembleModel,
    image: &ImageTensor,
    label: usize,
    pipeline: LossPipeline,
) -> Result<f64> {
    model.check_image(image)?;
    if label >= model.classes {
        return Err(Error::contract("label out of range"));
    }
    let logits = model.local_logits(image);
    Ok(pipeline_cell_grads(model, &logits, label, pipeline)?.0)
}

/// Analytic loss, weight gradients, and (optionally) the gradient with
/// respect to every input pixel.
pub(crate) fn pipeline_loss_and_grads(
    model: &PatchEnsembleModel,
    image: &ImageTensor,
    label: usize,
    pipeline: LossPipeline,
    want_input_grad: bool,
) -> Result<(f64, Gradients, Option<Vec<f64>>)> {
    model.check_image(image)?;
    if label >= model.classes {
        return Err(Error::contract("label out of range"));
    }
    let (fr, fc) = (model.geom.feature_rows(), model.geom.feature_cols());
    let input = model.input_dim();
    let logits = model.local_logits(image);
    let (loss, dz) = pipeline_cell_grads(model, &logits, label, pipeline)?;

    let mut grads = Gradients::zeros(model);
    let mut input_grad = want_input_grad.then(|| vec![0.0; image.pixels().len()]);
    let mut patch = vec![0.0; input];
    let mut pre = vec![0.0; model.hidden];
    let mut scratch_logits = vec![0.0; model.classes];
    let mut dhid = vec![0.0; model.hidden];
    for r in 0..fr {
        for c in 0..fc {
            let cell = r * fc + c;
            let dz_cell = &dz[cell * model.classes..(cell + 1) * model.classes];
            if dz_cell.iter().all(|v| *v == 0.0) {
                continue;
            }
            model.gather_patch(image, r, c, &mut patch);
            model.forward_patch(&patch, &mut pre, &mut scratch_logits);
            // dW2, db2, dhid
            for h in dhid.iter_mut() {
                *h = 0.0;
            }
            for k in 0..model.classes {
                let gk = dz_cell[k];
                if gk == 0.0 {
                    continue;
                }
                grads.b2[k] += gk;
                let row = k * model.hidden;
                for h in 0..model.hidden {
                    let hid = pre[h].max(0.0);
                    grads.w2[row + h] += gk * hid;
                    dhid[h] += gk * model.w2[row + h];
                }
            }
            // Through the rectifier into W1, b1, and the pixels.
            for h in 0..model.hidden {
                if pre[h] <= 0.0 || dhid[h] == 0.0 {
                    continue;
                }
                let dpre = dhid[h];
                grads.b1[h] += dpre;
                let row = h * input;
                for i in 0..input {
                    grads.w1[row + i] += dpre * patch[i];
                }
                if let Some(ig) = input_grad.as_deref_mut() {
                    let r0 = r * model.geom.stride_rows();
                    let c0 = c * model.geom.stride_cols();
                    let mut i = 0;
                    for pr in 0..model.geom.rf_rows() {
                        for pc in 0..model.geom.rf_cols() {
                            for ch in 0..model.channels {
                                let px = ((r0 + pr) * image.cols() + (c0 + pc)) * model.channels
                                    + ch;
                                ig[px] += dpre * model.w1[row + i];
                                i += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((loss, grads, input_grad))
}

/// Training hyperparameters. `adv_mask_shape` selects the masked training
/// phase of [`train_provable_adv`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden_units: usize,
    pub adv_mask_shape: Option<(usize, usize)>,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::contract("learning rate must be finite and non-negative"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden_units == 0 {
            return Err(Error::contract("epochs, batch size and hidden units must be positive"));
        }
        if let Some((r, c)) = self.adv_mask_shape {
            if r == 0 || c == 0 {
                return Err(Error::contract("adversarial mask shape must be positive"));
            }
        }
        Ok(())
    }
}

/// Images with class labels.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    images: Vec<ImageTensor>,
    labels: Vec<usize>,
    class_count: usize,
}

impl LabeledDataset {
    pub fn new(images: Vec<ImageTensor>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::contract("image and label counts differ"));
        }
        if class_count == 0 {
            return Err(Error::contract("class count must be positive"));
        }
        if let Some(bad) = labels.iter().find(|l| **l >= class_count) {
            return Err(Error::contract(format!("label {bad} out of range")));
        }
        if let Some(first) = images.first() {
            let dims = (first.rows(), first.cols(), first.channels());
            if images.iter().any(|i| (i.rows(), i.cols(), i.channels()) != dims) {
                return Err(Error::contract("images have inconsistent dimensions"));
            }
        }
        Ok(LabeledDataset { images, labels, class_count })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> &ImageTensor {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn images(&self) -> &[ImageTensor] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn dims(&self) -> Option<(usize, usize, usize)> {
        self.images.first().map(|i| (i.rows(), i.cols(), i.channels()))
    }
}

/// A trained model with its loss history.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: PatchEnsembleModel,
    pub final_loss: f64,
    pub epoch_losses: Vec<f64>,
}

fn check_dataset(dataset: &LabeledDataset, geom: &RFGeometry) -> Result<usize> {
    let (rows, cols, channels) = dataset
        .dims()
        .ok_or_else(|| Error::contract("dataset is empty"))?;
    if rows != geom.image_rows() || cols != geom.image_cols() {
        return Err(Error::contract(format!(
            "dataset images {rows}x{cols} do not match geometry {}x{}",
            geom.image_rows(),
            geom.image_cols()
        )));
    }
    Ok(channels)
}

/// One pass of minibatch SGD epochs over the dataset; returns the per-epoch
/// mean loss. Batch membership comes from the seeded shuffle; the reduction
/// within each batch runs in ascending dataset index order.
fn sgd_epochs(
    model: &mut PatchEnsembleModel,
    dataset: &LabeledDataset,
    config: &TrainConfig,
    pipeline: LossPipeline,
    rng: &mut ChaCha8Rng,
    epoch_offset: usize,
) -> Result<Vec<f64>> {
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut indices = batch.to_vec();
            indices.sort_unstable();
            let mut acc = Gradients::zeros(model);
            let mut batch_loss = 0.0;
            for &i in &indices {
                let (loss, grads, _) = pipeline_loss_and_grads(
                    model,
                    dataset.image(i),
                    dataset.label(i),
                    pipeline,
                    false,
                )?;
                batch_loss += loss;
                acc.add_scaled(&grads, 1.0);
            }
            if !batch_loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch: epoch_offset + epoch });
            }
            epoch_loss += batch_loss;
            let scale = -config.learning_rate / indices.len() as f64;
            for (w, g) in model.w1.iter_mut().zip(&acc.w1) {
                *w += scale * g;
            }
            for (w, g) in model.b1.iter_mut().zip(&acc.b1) {
                *w += scale * g;
            }
            for (w, g) in model.w2.iter_mut().zip(&acc.w2) {
                *w += scale * g;
            }
            for (w, g) in model.b2.iter_mut().zip(&acc.b2) {
                *w += scale * g;
            }
        }
        losses.push(epoch_loss / n as f64);
    }
    Ok(losses)
}

/// Conventional training: cross-entropy of softmax(mean local logits),
/// minibatch SGD, deterministic given the seed.
pub fn train(
    dataset: &LabeledDataset,
    geom: &RFGeometry,
    config: &TrainConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    let channels = check_dataset(dataset, geom)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model =
        PatchEnsembleModel::init(*geom, channels, dataset.class_count(), config.hidden_units, &mut rng)?;
    let losses = sgd_epochs(&mut model, dataset, config, LossPipeline::MeanLogits, &mut rng, 0)?;
    let final_loss = *losses.last().expect("at least one epoch");
    Ok(TrainOutput { model, final_loss, epoch_losses: losses })
}

/// Provable adversarial training: starts from a conventionally trained model,
/// then continues for the same number of epochs with the masked objective.
/// Per example, the window of shape `adv_mask_shape` holding the largest
/// clipped true-class evidence is zeroed (all classes) before aggregation, so
/// the model learns to spread true-class evidence beyond any single mask.
pub fn train_provable_adv(
    dataset: &LabeledDataset,
    geom: &RFGeometry,
    config: &TrainConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    let (mask_rows, mask_cols) = config
        .adv_mask_shape
        .ok_or_else(|| Error::contract("adversarial training requires adv_mask_shape"))?;
    if mask_rows > geom.feature_rows() || mask_cols > geom.feature_cols() {
        return Err(Error::contract(format!(
            "adversarial mask {mask_rows}x{mask_cols} larger than {}x{} feature grid",
            geom.feature_rows(),
            geom.feature_cols()
        )));
    }
    let channels = check_dataset(dataset, geom)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model =
        PatchEnsembleModel::init(*geom, channels, dataset.class_count(), config.hidden_units, &mut rng)?;
    let mut losses =
        sgd_epochs(&mut model, dataset, config, LossPipeline::MeanLogits, &mut rng, 0)?;
    let masked = LossPipeline::MaskedMean { mask_rows, mask_cols };
    losses.extend(sgd_epochs(&mut model, dataset, config, masked, &mut rng, config.epochs)?);
    let final_loss = *losses.last().expect("at least one epoch");
    Ok(TrainOutput { model, final_loss, epoch_losses: losses })
}

/// Maximum relative error between analytic gradients of the insecure loss and
/// central finite differences (step 1e-4) over a strided subset of weights
/// and input pixels. The relative error uses an absolute floor of 1e-4 in the
/// denominator so near-zero gradient pairs compare absolutely.
pub fn gradient_check(
    model: &PatchEnsembleModel,
    image: &ImageTensor,
    label: usize,
) -> Result<f64> {
    const H: f64 = 1e-4;
    const SAMPLES: usize = 24;
    let pipeline = LossPipeline::MeanLogits;
    let (_, grads, input_grad) = pipeline_loss_and_grads(model, image, label, pipeline, true)?;
    let input_grad = input_grad.expect("requested");

    let mut max_err: f64 = 0.0;
    let mut check = |analytic: f64, numeric: f64| {
        let denom = analytic.abs().max(numeric.abs()).max(1e-4);
        max_err = max_err.max((analytic - numeric).abs() / denom);
    };

    let mut probe = model.clone();
    let layers: [(&[f64], fn(&mut PatchEnsembleModel) -> &mut Vec<f64>); 4] = [
        (&grads.w1, |m| &mut m.w1),
        (&grads.b1, |m| &mut m.b1),
        (&grads.w2, |m| &mut m.w2),
        (&grads.b2, |m| &mut m.b2),
    ];
    for (layer_grads, access) in layers {
        let len = layer_grads.len();
        let stride = len.div_ceil(SAMPLES).max(1);
        for idx in (0..len).step_by(stride) {
            let original = access(&mut probe)[idx];
            access(&mut probe)[idx] = original + H;
            let plus = pipeline_loss(&probe, image, label, pipeline)?;
            access(&mut probe)[idx] = original - H;
            let minus = pipeline_loss(&probe, image, label, pipeline)?;
            access(&mut probe)[idx] = original;
            check(layer_grads[idx], (plus - minus) / (2.0 * H));
        }
    }

    // Input pixels: perturb without the [0, 1] projection so the loss stays
    // differentiable at the sampled point.
    let px_count = image.pixels().len();
    let stride = px_count.div_ceil(SAMPLES).max(1);
    for idx in (0..px_count).step_by(stride) {
        let mut pixels = image.pixels().to_vec();
        let original = pixels[idx];
        pixels[idx] = original + H;
        let plus_img = image_from_unclamped(image, &pixels);
        let plus = pipeline_loss(model, &plus_img, label, pipeline)?;
        pixels[idx] = original - H;
        let minus_img = image_from_unclamped(image, &pixels);
        let minus = pipeline_loss(model, &minus_img, label, pipeline)?;
        check(input_grad[idx], (plus - minus) / (2.0 * H));
    }
    Ok(max_err)
}

/// Clones an image with raw pixel values, bypassing the [0, 1] invariant for
/// the finite-difference probes. Kept private to this module.
fn image_from_unclamped(reference: &ImageTensor, pixels: &[f64]) -> ImageTensor {
    let mut img = reference.clone();
    let cols = reference.cols();
    let ch = reference.channels();
    for r in 0..reference.rows() {
        for c in 0..cols {
            for k in 0..ch {
                img.set_pixel_raw(r, c, k, pixels[(r * cols + c) * ch + k]);
            }
        }
    }
    img
}

/// Writes a model checkpoint; the round trip is bit-exact on weights.
pub fn save_model(model: &PatchEnsembleModel, path: &std::path::Path) -> Result<()> {
    crate::formats::write_model(model, path)
}

/// Reads a model checkpoint written by [`save_model`].
pub fn load_model(path: &std::path::Path) -> Result<PatchEnsembleModel> {
    crate::formats::read_model(path)
}

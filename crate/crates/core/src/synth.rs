//! Seeded synthetic dataset: classes of sinusoidal gratings distinguished by
//! orientation and spatial frequency, plus uniform noise. The pattern fills
//! the whole image, so every receptive-field patch carries class information
//! and a small-receptive-field classifier can learn the task from local
//! evidence alone.

use crate::error::Result;
use crate::model::LabeledDataset;
use crate::tensor::ImageTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_CLASSES: usize = 10;
pub const DEFAULT_SIDE: usize = 32;
pub const DEFAULT_NOISE: f64 = 0.06;

/// Grating wavelengths in pixels; classes cycle through orientations within
/// one wavelength before moving to the next. A receptive field of 9 pixels
/// resolves both wavelengths; one of 5 pixels sees the longer wavelength only
/// partially, which makes the small-field variant locally ambiguous and a
/// realistic undefended attack target.
const WAVELENGTHS: [f64; 2] = [5.0, 9.0];

/// Pattern amplitude around the 0.5 gray level. Kept well below full range:
/// the classifier then needs large weights to reach its working logit scale,
/// which leaves full-range adversarial pixels real leverage, as in the
/// models the defense is built for.
const AMPLITUDE: f64 = 0.15;

/// Generates `count` grayscale images of size `side` x `side` across
/// `classes` balanced classes. A class is a grating with one of two
/// wavelengths and an orientation step chosen so classes sharing a wavelength
/// stay maximally separated; the phase is random per image and `noise` is the
/// amplitude of the additive uniform noise. Deterministic given the seed.
pub fn generate(
    count: usize,
    side: usize,
    classes: usize,
    noise: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_wavelength = classes.div_ceil(WAVELENGTHS.len());
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % classes;
        let wavelength = WAVELENGTHS[label / per_wavelength];
        let theta =
            (label % per_wavelength) as f64 * std::f64::consts::PI / per_wavelength as f64;
        let (sin_t, cos_t) = theta.sin_cos();
        let phase = rng.gen::<f64>() * std::f64::consts::TAU;
        let mut pixels = Vec::with_capacity(side * side);
        for r in 0..side {
            for c in 0..side {
                let axis = r as f64 * sin_t + c as f64 * cos_t;
                let wave = (std::f64::consts::TAU * axis / wavelength + phase).sin();
                let v = 0.5 + AMPLITUDE * wave + noise * (2.0 * rng.gen::<f64>() - 1.0);
                pixels.push(v.clamp(0.0, 1.0));
            }
        }
        images.push(ImageTensor::new(side, side, 1, pixels)?);
        labels.push(label);
    }
    LabeledDataset::new(images, labels, classes)
}

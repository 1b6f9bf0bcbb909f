//! Pixel-level spectral classifier: conv/pool/normalize blocks over
//! MNF-reduced spectra, trained with plain mini-batch SGD.

use crate::cube::HyperspectralCube;
use crate::detect::SegmentationMask;
use crate::error::{Error, Result};
use crate::mnf::MnfModel;
use crate::nn::{cross_entropy_with_grad, softmax, BlockSpec, Network};
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSpec {
    /// Conv/pool/normalize blocks in order.
    pub blocks: Vec<BlockSpec>,
    /// Hidden dense widths between flatten and the output layer.
    pub hidden: Vec<usize>,
    pub class_count: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self {
            blocks: vec![
                BlockSpec { kernel: 5, out_channels: 16, pool_stride: 2 },
                BlockSpec { kernel: 3, out_channels: 32, pool_stride: 2 },
            ],
            hidden: vec![],
            class_count: 4,
            learning_rate: 0.01,
            batch_size: 64,
            max_epochs: 50,
            seed: 1,
        }
    }
}

/// Trained network plus its input contract.
#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub spec: ClassifierSpec,
    pub network: Network,
    pub input_len: usize,
    /// Per-feature mean of the training inputs, applied before the network.
    pub input_mean: Vec<f64>,
    /// Per-feature std of the training inputs, applied before the network.
    pub input_std: Vec<f64>,
    /// Training accuracy at the stopping epoch.
    pub final_train_accuracy: f64,
    /// Epochs actually run.
    pub epochs_run: usize,
}

impl TrainedClassifier {
    /// Standardize a batch of raw reduced spectra into network inputs.
    pub fn standardize(&self, inputs: &[f64]) -> Vec<f64> {
        let k = self.input_len;
        inputs
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - self.input_mean[i % k]) / self.input_std[i % k])
            .collect()
    }

    /// Class probabilities for a batch of reduced spectra.
    pub fn predict_proba(&self, inputs: &[f64], batch: usize) -> Vec<f64> {
        let logits = self.network.forward_eval(&self.standardize(inputs), batch);
        softmax(&logits, batch, self.spec.class_count)
    }

    /// (class, confidence) for one reduced spectrum.
    pub fn predict_one(&self, input: &[f64]) -> (usize, f64) {
        let p = self.predict_proba(input, 1);
        let mut best = 0;
        for c in 1..self.spec.class_count {
            if p[c] > p[best] {
                best = c;
            }
        }
        (best, p[best])
    }
}

/// Train the block-stack classifier on labeled reduced spectra.
///
/// Mini-batch SGD on cross-entropy with a per-epoch seeded shuffle;
/// stops early once training accuracy reaches 100%. Deterministic given
/// `spec.seed` and the input order.
pub fn train_pixel_classifier(
    spec: &ClassifierSpec,
    data: &[(Vec<f64>, usize)],
) -> Result<TrainedClassifier> {
    if spec.class_count < 2 {
        return Err(Error::Spectral("classifier needs at least 2 classes".into()));
    }
    if data.is_empty() {
        return Err(Error::Spectral("training set is empty".into()));
    }
    let input_len = data[0].0.len();
    if data.iter().any(|(x, _)| x.len() != input_len) {
        return Err(Error::Spectral("training spectra have inconsistent lengths".into()));
    }
    if let Some((_, bad)) = data.iter().find(|(_, y)| *y >= spec.class_count) {
        return Err(Error::Spectral(format!(
            "label {bad} outside [0, {})",
            spec.class_count
        )));
    }
    if spec.batch_size == 0 {
        return Err(Error::Spectral("batch size must be >= 1".into()));
    }
    if data.len() < spec.batch_size {
        return Err(Error::Spectral(format!(
            "training set of {} samples is smaller than one batch of {}",
            data.len(),
            spec.batch_size
        )));
    }

    // per-feature standardization, baked into the model
    let mut input_mean = vec![0.0; input_len];
    for (x, _) in data {
        for (m, &v) in input_mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    for m in input_mean.iter_mut() {
        *m /= data.len() as f64;
    }
    let mut input_std = vec![0.0; input_len];
    for (x, _) in data {
        for (s, (&v, &m)) in input_std.iter_mut().zip(x.iter().zip(&input_mean)) {
            *s += (v - m) * (v - m);
        }
    }
    for s in input_std.iter_mut() {
        *s = (*s / data.len() as f64).sqrt().max(1e-9);
    }
    let standardized: Vec<(Vec<f64>, usize)> = data
        .iter()
        .map(|(x, y)| {
            let z = x
                .iter()
                .zip(input_mean.iter().zip(&input_std))
                .map(|(&v, (&m, &s))| (v - m) / s)
                .collect();
            (z, *y)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut net = Network::build(&spec.blocks, &spec.hidden, input_len, spec.class_count, &mut rng)?;

    let mut order: Vec<usize> = (0..standardized.len()).collect();
    let mut accuracy = 0.0;
    let mut epochs_run = 0;
    for _epoch in 0..spec.max_epochs {
        epochs_run += 1;
        shuffle(&mut order, &mut rng);
        for chunk in order.chunks(spec.batch_size) {
            // trailing partial batches are skipped; batch statistics on a
            // handful of samples destabilize the normalization layers
            if chunk.len() < spec.batch_size {
                continue;
            }
            let mut x = Vec::with_capacity(chunk.len() * input_len);
            let mut t = Vec::with_capacity(chunk.len());
            for &i in chunk {
                x.extend_from_slice(&standardized[i].0);
                t.push(standardized[i].1);
            }
            net.zero_grad();
            let logits = net.forward_train(&x, chunk.len());
            let (_, grad) = cross_entropy_with_grad(&logits, &t, spec.class_count);
            net.backward(&grad);
            net.sgd_step(spec.learning_rate);
        }
        accuracy = eval_accuracy(&net, &standardized, input_len, spec.class_count);
        if accuracy >= 1.0 {
            break;
        }
    }

    Ok(TrainedClassifier {
        spec: spec.clone(),
        network: net,
        input_len,
        input_mean,
        input_std,
        final_train_accuracy: accuracy,
        epochs_run,
    })
}

/// Training accuracy over the full set, normalizing each scoring chunk
/// with its own batch statistics (running stats lag behind early in
/// training and would misreport the degenerate one-epoch cases).
fn eval_accuracy(net: &Network, data: &[(Vec<f64>, usize)], input_len: usize, classes: usize) -> f64 {
    let chunk = 256;
    let correct: usize = data
        .par_chunks(chunk)
        .map(|part| {
            let mut x = Vec::with_capacity(part.len() * input_len);
            for (s, _) in part {
                x.extend_from_slice(s);
            }
            let logits = net.forward_with_batch_stats(&x, part.len());
            part.iter()
                .enumerate()
                .filter(|(i, (_, y))| {
                    let row = &logits[i * classes..][..classes];
                    let mut best = 0;
                    for c in 1..classes {
                        if row[c] > row[best] {
                            best = c;
                        }
                    }
                    best == *y
                })
                .count()
        })
        .sum();
    correct as f64 / data.len() as f64
}

/// Fisher-Yates with the crate-standard seeded generator.
fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    use rand::Rng;
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

/// Background sentinel in pixel label maps.
pub const BACKGROUND_LABEL: u16 = u16::MAX;

/// Per-pixel class decisions over the masked region of a cube.
#[derive(Debug, Clone)]
pub struct PixelLabelMap {
    pub rows: usize,
    pub cols: usize,
    /// Class id per pixel; `BACKGROUND_LABEL` outside the masks.
    pub labels: Vec<u16>,
    /// Softmax maximum per pixel; 1.0 outside the masks.
    pub confidence: Vec<f32>,
}

impl PixelLabelMap {
    pub fn label(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.cols + col]
    }
}

/// Classify every masked pixel of a corrected cube.
///
/// Pixels are MNF-reduced with `mnf` (at the classifier's input length)
/// and scored in parallel with frozen normalization statistics; unmasked
/// pixels carry the background label at confidence 1.
pub fn predict_pixel_labels(
    cube: &HyperspectralCube,
    masks: &[SegmentationMask],
    model: &TrainedClassifier,
    mnf: &MnfModel,
) -> Result<PixelLabelMap> {
    if mnf.bands != cube.bands {
        return Err(Error::Spectral(format!(
            "cube has {} bands, MNF model expects {}",
            cube.bands, mnf.bands
        )));
    }
    if model.input_len > mnf.bands {
        return Err(Error::Spectral(format!(
            "classifier input length {} exceeds band count {}",
            model.input_len, mnf.bands
        )));
    }
    for m in masks {
        if m.map_rows != cube.rows || m.map_cols != cube.cols {
            return Err(Error::Detection("mask dimensions do not match the cube".into()));
        }
    }

    let mut labels = vec![BACKGROUND_LABEL; cube.rows * cube.cols];
    let mut confidence = vec![1.0f32; cube.rows * cube.cols];

    let mut pixel_ids: Vec<usize> = masks
        .iter()
        .flat_map(|m| m.iter_pixels().map(|(v, u)| v * cube.cols + u))
        .collect();
    pixel_ids.sort_unstable();
    pixel_ids.dedup();

    let k = model.input_len;
    let classes = model.spec.class_count;
    let results: Vec<(usize, u16, f32)> = pixel_ids
        .par_chunks(256)
        .flat_map_iter(|chunk| {
            let mut x = Vec::with_capacity(chunk.len() * k);
            for &i in chunk {
                let (v, u) = (i / cube.cols, i % cube.cols);
                let reduced = mnf
                    .project_f32(cube.spectrum(v, u), k)
                    .expect("dimensions pre-validated");
                x.extend_from_slice(&reduced);
            }
            let probs = model.predict_proba(&x, chunk.len());
            chunk
                .iter()
                .enumerate()
                .map(|(j, &i)| {
                    let row = &probs[j * classes..][..classes];
                    let mut best = 0;
                    for c in 1..classes {
                        if row[c] > row[best] {
                            best = c;
                        }
                    }
                    (i, best as u16, row[best] as f32)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    for (i, lab, conf) in results {
        labels[i] = lab;
        confidence[i] = conf;
    }

    Ok(PixelLabelMap { rows: cube.rows, cols: cube.cols, labels, confidence })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GeometryContext;
    use crate::mnf::mnf_fit;
    use crate::spectra::{builtin_class_set, spectral_angle, DEFAULT_BANDS};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    /// Noisy pixels of the builtin classes arranged as one row per class,
    /// so horizontal neighbors share a class and differences are pure noise.
    fn training_cube(per_class: usize, sigma: f64, seed: u64) -> (HyperspectralCube, Vec<usize>) {
        let classes = builtin_class_set(DEFAULT_BANDS);
        let rows = classes.len();
        let geom = GeometryContext::new(600.0, 0.5, rows.max(2), per_class).unwrap();
        let mut cube =
            HyperspectralCube::constant(rows, per_class, DEFAULT_BANDS, 0.0, geom);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, sigma).unwrap();
        let mut labels = Vec::new();
        for (r, sig) in classes.iter().enumerate() {
            for c in 0..per_class {
                for (b, &refl) in sig.reflectance.iter().enumerate() {
                    cube.data[(r * per_class + c) * DEFAULT_BANDS + b] =
                        (refl + dist.sample(&mut rng)).clamp(0.0, 1.0) as f32;
                }
                labels.push(r);
            }
        }
        (cube, labels)
    }

    fn reduced_dataset(
        cube: &HyperspectralCube,
        labels: &[usize],
        mnf: &MnfModel,
        k: usize,
    ) -> Vec<(Vec<f64>, usize)> {
        let mut out = Vec::new();
        for v in 0..cube.rows {
            for u in 0..cube.cols {
                let reduced = mnf.project_f32(cube.spectrum(v, u), k).unwrap();
                out.push((reduced, labels[v * cube.cols + u]));
            }
        }
        out
    }


    #[test]
    fn single_class_dataset_hits_full_accuracy_in_one_epoch() {
        // all samples are near-identical noisy copies of one spectrum
        let spec = ClassifierSpec { seed: 5, ..Default::default() };
        let sig = &builtin_class_set(20)[1];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<(Vec<f64>, usize)> = (0..1024)
            .map(|_| {
                let x: Vec<f64> = sig
                    .reflectance
                    .iter()
                    .map(|&r| r + rng.random_range(-0.02..0.02))
                    .collect();
                (x, 2usize)
            })
            .collect();
        let model = train_pixel_classifier(&spec, &data).unwrap();
        assert_eq!(model.final_train_accuracy, 1.0);
        assert_eq!(model.epochs_run, 1);
    }

    #[test]
    fn four_class_heldout_accuracy_and_sam_oracle() {
        let (cube, labels) = training_cube(500, 0.02, 8);
        let mnf = mnf_fit(&cube, None).unwrap();
        let k = mnf.retained_k;
        assert_eq!(k, 67);
        let train = reduced_dataset(&cube, &labels, &mnf, k);
        let spec = ClassifierSpec { seed: 9, ..Default::default() };
        let model = train_pixel_classifier(&spec, &train).unwrap();

        let (test_cube, test_labels) = training_cube(125, 0.02, 99);
        let test = reduced_dataset(&test_cube, &test_labels, &mnf, k);
        let correct = test
            .iter()
            .filter(|(x, y)| model.predict_one(x).0 == *y)
            .count();
        let acc = correct as f64 / test.len() as f64;
        assert!(acc >= 0.95, "held-out accuracy {acc}");

        // spectral-angle nearest-neighbor oracle on raw spectra
        let classes = builtin_class_set(DEFAULT_BANDS);
        let mut sam_correct = 0usize;
        for v in 0..test_cube.rows {
            for u in 0..test_cube.cols {
                let s = test_cube.spectrum_f64(v, u);
                let mut best = 0;
                let mut best_a = f64::INFINITY;
                for (ci, sig) in classes.iter().enumerate() {
                    let a = spectral_angle(&s, &sig.reflectance);
                    if a < best_a {
                        best_a = a;
                        best = ci;
                    }
                }
                if best == test_labels[v * test_cube.cols + u] {
                    sam_correct += 1;
                }
            }
        }
        let sam_acc = sam_correct as f64 / test.len() as f64;
        assert!(sam_acc >= 0.95, "oracle accuracy {sam_acc}");
        assert!((acc - sam_acc).abs() <= 0.03, "network {acc} vs oracle {sam_acc}");
    }

    #[test]
    fn training_is_reproducible() {
        let (cube, labels) = training_cube(80, 0.02, 4);
        let mnf = mnf_fit(&cube, None).unwrap();
        let train = reduced_dataset(&cube, &labels, &mnf, mnf.retained_k);
        let spec = ClassifierSpec { max_epochs: 3, seed: 31, ..Default::default() };
        let a = train_pixel_classifier(&spec, &train).unwrap();
        let b = train_pixel_classifier(&spec, &train).unwrap();
        let probe = &train[17].0;
        assert_eq!(a.predict_proba(probe, 1), b.predict_proba(probe, 1));
        assert_eq!(a.epochs_run, b.epochs_run);
    }

    #[test]
    fn validation_rejects_bad_specs_and_data() {
        let spec = ClassifierSpec::default();
        assert!(train_pixel_classifier(&spec, &[]).is_err());
        let short: Vec<(Vec<f64>, usize)> = (0..10).map(|i| (vec![0.0; 20], i % 4)).collect();
        assert!(train_pixel_classifier(&spec, &short).is_err()); // < batch
        let bad_label: Vec<(Vec<f64>, usize)> = (0..64).map(|_| (vec![0.0; 20], 7)).collect();
        assert!(train_pixel_classifier(&spec, &bad_label).is_err());
        let spec1 = ClassifierSpec { class_count: 1, ..Default::default() };
        let ok: Vec<(Vec<f64>, usize)> = (0..64).map(|_| (vec![0.0; 20], 0)).collect();
        assert!(train_pixel_classifier(&spec1, &ok).is_err());
    }
}

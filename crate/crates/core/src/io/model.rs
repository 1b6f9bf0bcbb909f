//! Versioned binary model files bundling the trained classifier, its MNF
//! basis, and class/band metadata; a plain-text manifest sits beside the
//! binary for quick inspection.

use crate::classifier::{ClassifierSpec, TrainedClassifier};
use crate::error::{Error, Result};
use crate::mnf::MnfModel;
use crate::nn::{BlockSpec, Layer, Network};
use rand_chacha::rand_core::SeedableRng;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub const MODEL_MAGIC: &[u8; 8] = b"HSMODEL\0";
pub const MODEL_FORMAT_MAJOR: u16 = 1;
pub const MODEL_FORMAT_MINOR: u16 = 0;

/// Everything the `classify` stage needs from disk.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub classifier: TrainedClassifier,
    pub mnf: MnfModel,
    pub class_names: Vec<String>,
    pub band_centers: Vec<f64>,
}

pub fn manifest_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        self.u32(vs.len() as u32);
        for &v in vs {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    off: usize,
}

impl<'a> Reader<'a> {
    fn need(&self, n: usize) -> Result<()> {
        if self.off + n > self.buf.len() {
            Err(Error::Truncated { expected: (self.off + n) as u64, actual: self.buf.len() as u64 })
        } else {
            Ok(())
        }
    }
    fn u16(&mut self) -> Result<u16> {
        self.need(2)?;
        let v = u16::from_le_bytes(self.buf[self.off..self.off + 2].try_into().unwrap());
        self.off += 2;
        Ok(v)
    }
    fn u32(&mut self) -> Result<u32> {
        self.need(4)?;
        let v = u32::from_le_bytes(self.buf[self.off..self.off + 4].try_into().unwrap());
        self.off += 4;
        Ok(v)
    }
    fn u64(&mut self) -> Result<u64> {
        self.need(8)?;
        let v = u64::from_le_bytes(self.buf[self.off..self.off + 8].try_into().unwrap());
        self.off += 8;
        Ok(v)
    }
    fn f64(&mut self) -> Result<f64> {
        self.need(8)?;
        let v = f64::from_le_bytes(self.buf[self.off..self.off + 8].try_into().unwrap());
        self.off += 8;
        Ok(v)
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }
}

pub fn write_model(bundle: &ModelBundle, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MODEL_MAGIC);
    w.u16(MODEL_FORMAT_MAJOR);
    w.u16(MODEL_FORMAT_MINOR);
    w.u32(0);

    // MNF block
    let mnf = &bundle.mnf;
    w.u32(mnf.bands as u32);
    w.u32(mnf.retained_k as u32);
    w.buf.push(mnf.regularized as u8);
    w.f64s(&mnf.mean);
    w.f64s(&mnf.eigenvalues);
    w.u32(mnf.components.len() as u32);
    for c in &mnf.components {
        w.f64s(c);
    }
    w.f64s(&mnf.noise_covariance);
    w.f64s(&mnf.signal_covariance);

    // classifier spec
    let spec = &bundle.classifier.spec;
    w.u32(spec.blocks.len() as u32);
    for b in &spec.blocks {
        w.u32(b.kernel as u32);
        w.u32(b.out_channels as u32);
        w.u32(b.pool_stride as u32);
    }
    w.u32(spec.hidden.len() as u32);
    for &h in &spec.hidden {
        w.u32(h as u32);
    }
    w.u32(spec.class_count as u32);
    w.f64(spec.learning_rate);
    w.u32(spec.batch_size as u32);
    w.u32(spec.max_epochs as u32);
    w.u64(spec.seed);
    w.u32(bundle.classifier.input_len as u32);
    w.f64s(&bundle.classifier.input_mean);
    w.f64s(&bundle.classifier.input_std);
    w.f64(bundle.classifier.final_train_accuracy);
    w.u32(bundle.classifier.epochs_run as u32);

    // weights, in layer order
    let net = &bundle.classifier.network;
    w.u32(net.layers.len() as u32);
    for layer in &net.layers {
        match layer {
            Layer::Conv(c) => {
                w.buf.push(1);
                w.f64s(&c.weight);
                w.f64s(&c.bias);
            }
            Layer::Pool(_) => w.buf.push(2),
            Layer::Relu { .. } => w.buf.push(3),
            Layer::Norm(bn) => {
                w.buf.push(4);
                w.f64s(&bn.gamma);
                w.f64s(&bn.beta);
                w.f64s(&bn.running_mean);
                w.f64s(&bn.running_var);
            }
            Layer::Dense(d) => {
                w.buf.push(5);
                w.f64s(&d.weight);
                w.f64s(&d.bias);
            }
        }
    }

    // class names and band metadata
    w.u32(bundle.class_names.len() as u32);
    for name in &bundle.class_names {
        let bytes = name.as_bytes();
        w.u32(bytes.len() as u32);
        w.buf.extend_from_slice(bytes);
    }
    w.f64s(&bundle.band_centers);

    fs::write(path, &w.buf)?;

    let mut manifest = String::new();
    let _ = writeln!(manifest, "format = model v{MODEL_FORMAT_MAJOR}.{MODEL_FORMAT_MINOR}");
    let _ = writeln!(manifest, "classes = {}", bundle.class_names.len());
    for (i, name) in bundle.class_names.iter().enumerate() {
        let _ = writeln!(manifest, "class {i} = {name}");
    }
    let _ = writeln!(manifest, "bands = {}", bundle.band_centers.len());
    let _ = writeln!(manifest, "retained components = {}", bundle.mnf.retained_k);
    if let (Some(first), Some(last)) = (bundle.band_centers.first(), bundle.band_centers.last()) {
        let _ = writeln!(manifest, "band range nm = {first} .. {last}");
    }
    let _ = writeln!(manifest, "train accuracy = {}", bundle.classifier.final_train_accuracy);
    let _ = writeln!(manifest, "epochs run = {}", bundle.classifier.epochs_run);
    fs::write(manifest_path(path), manifest)?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<ModelBundle> {
    let buf = fs::read(path)?;
    if buf.len() < 16 || &buf[0..8] != MODEL_MAGIC {
        return Err(Error::Format("bad magic; not a model file".into()));
    }
    let mut r = Reader { buf: &buf, off: 8 };
    let major = r.u16()?;
    let _minor = r.u16()?;
    let _reserved = r.u32()?;
    if major > MODEL_FORMAT_MAJOR {
        return Err(Error::VersionMismatch { found: major, supported: MODEL_FORMAT_MAJOR });
    }

    let bands = r.u32()? as usize;
    let retained_k = r.u32()? as usize;
    r.need(1)?;
    let regularized = buf[r.off] != 0;
    r.off += 1;
    let mean = r.f64s()?;
    let eigenvalues = r.f64s()?;
    let n_comp = r.u32()? as usize;
    let mut components = Vec::with_capacity(n_comp);
    for _ in 0..n_comp {
        components.push(r.f64s()?);
    }
    let noise_covariance = r.f64s()?;
    let signal_covariance = r.f64s()?;
    let mnf = MnfModel {
        bands,
        mean,
        noise_covariance,
        signal_covariance,
        components,
        eigenvalues,
        retained_k,
        regularized,
    };

    let n_blocks = r.u32()? as usize;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        blocks.push(BlockSpec {
            kernel: r.u32()? as usize,
            out_channels: r.u32()? as usize,
            pool_stride: r.u32()? as usize,
        });
    }
    let n_hidden = r.u32()? as usize;
    let mut hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden.push(r.u32()? as usize);
    }
    let spec = ClassifierSpec {
        blocks,
        hidden,
        class_count: r.u32()? as usize,
        learning_rate: r.f64()?,
        batch_size: r.u32()? as usize,
        max_epochs: r.u32()? as usize,
        seed: r.u64()?,
    };
    let input_len = r.u32()? as usize;
    let input_mean = r.f64s()?;
    let input_std = r.f64s()?;
    let final_train_accuracy = r.f64()?;
    let epochs_run = r.u32()? as usize;

    // rebuild the architecture, then overwrite every parameter
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.seed);
    let mut network = Network::build(&spec.blocks, &spec.hidden, input_len, spec.class_count, &mut rng)?;
    let n_layers = r.u32()? as usize;
    if n_layers != network.layers.len() {
        return Err(Error::Format(format!(
            "model lists {n_layers} layers, architecture builds {}",
            network.layers.len()
        )));
    }
    for layer in network.layers.iter_mut() {
        r.need(1)?;
        let tag = buf[r.off];
        r.off += 1;
        match (tag, layer) {
            (1, Layer::Conv(c)) => {
                let weight = r.f64s()?;
                let bias = r.f64s()?;
                if weight.len() != c.weight.len() || bias.len() != c.bias.len() {
                    return Err(Error::Format("conv weight shape mismatch".into()));
                }
                c.weight = weight;
                c.bias = bias;
            }
            (2, Layer::Pool(_)) | (3, Layer::Relu { .. }) => {}
            (4, Layer::Norm(bn)) => {
                let gamma = r.f64s()?;
                let beta = r.f64s()?;
                let rm = r.f64s()?;
                let rv = r.f64s()?;
                if gamma.len() != bn.ch || beta.len() != bn.ch || rm.len() != bn.ch || rv.len() != bn.ch {
                    return Err(Error::Format("batch-norm shape mismatch".into()));
                }
                bn.gamma = gamma;
                bn.beta = beta;
                bn.running_mean = rm;
                bn.running_var = rv;
            }
            (5, Layer::Dense(d)) => {
                let weight = r.f64s()?;
                let bias = r.f64s()?;
                if weight.len() != d.weight.len() || bias.len() != d.bias.len() {
                    return Err(Error::Format("dense weight shape mismatch".into()));
                }
                d.weight = weight;
                d.bias = bias;
            }
            (tag, _) => {
                return Err(Error::Format(format!("layer tag {tag} does not match architecture")));
            }
        }
    }

    let n_names = r.u32()? as usize;
    let mut class_names = Vec::with_capacity(n_names);
    for _ in 0..n_names {
        let len = r.u32()? as usize;
        r.need(len)?;
        class_names.push(
            String::from_utf8(buf[r.off..r.off + len].to_vec())
                .map_err(|_| Error::Format("class name is not UTF-8".into()))?,
        );
        r.off += len;
    }
    let band_centers = r.f64s()?;

    Ok(ModelBundle {
        classifier: TrainedClassifier {
            spec,
            network,
            input_len,
            input_mean,
            input_std,
            final_train_accuracy,
            epochs_run,
        },
        mnf,
        class_names,
        band_centers,
    })
}

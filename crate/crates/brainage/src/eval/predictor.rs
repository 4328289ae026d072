//! Apparent-age regression network (the PAD proxy metric's backbone).
//!
//! A small VGG-style stack: three conv-conv-maxpool stages, two dense
//! layers, one linear output predicting age normalized to [0, 1]. Trained
//! with mean absolute error in years.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::ArrayD;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::conditioning::MAX_AGE;
use crate::data::SliceDataset;
use crate::error::{Error, Result};
use crate::image::SliceImage;
use crate::networks::{slices_to_batch, ConvLayer, DenseLayer};
use crate::optim::{Adam, AdamConfig};
use crate::seeding::{derive_seed, Component};
use crate::Elem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorArch {
    /// Channels of the three conv stages.
    pub channels: [usize; 3],
    pub hidden: usize,
}

impl Default for PredictorArch {
    fn default() -> Self {
        PredictorArch {
            channels: [8, 16, 32],
            hidden: 64,
        }
    }
}

impl PredictorArch {
    fn flat_len(&self) -> usize {
        // Three 2x pools: 208x160 -> 26x20.
        self.channels[2] * (crate::image::SLICE_HEIGHT / 8) * (crate::image::SLICE_WIDTH / 8)
    }
}

#[derive(Debug, Clone)]
pub struct AgePredictorParams {
    pub arch: PredictorArch,
    /// Six convolutions: two per stage.
    pub convs: Vec<ConvLayer<Elem>>,
    pub dense1: DenseLayer<Elem>,
    pub dense2: DenseLayer<Elem>,
    /// Final validation mean absolute error, in years.
    pub validation_mae: f64,
}

impl AgePredictorParams {
    pub fn init(arch: PredictorArch, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let [c0, c1, c2] = arch.channels;
        let plan = [(1, c0), (c0, c0), (c0, c1), (c1, c1), (c1, c2), (c2, c2)];
        let convs = plan
            .iter()
            .map(|&(cin, cout)| ConvLayer::glorot(cout, cin, 3, &mut rng))
            .collect();
        let dense1 = DenseLayer::glorot(arch.flat_len(), arch.hidden, &mut rng);
        let dense2 = DenseLayer::glorot(arch.hidden, 1, &mut rng);
        AgePredictorParams {
            arch,
            convs,
            dense1,
            dense2,
            validation_mae: f64::NAN,
        }
    }

    pub fn tensors(&self) -> Vec<(String, &ArrayD<Elem>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}.w"), &c.w));
            out.push((format!("conv{i}.b"), &c.b));
        }
        out.push(("dense1.w".into(), &self.dense1.w));
        out.push(("dense1.b".into(), &self.dense1.b));
        out.push(("dense2.w".into(), &self.dense2.w));
        out.push(("dense2.b".into(), &self.dense2.b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut ArrayD<Elem>> {
        let mut out: Vec<&mut ArrayD<Elem>> = Vec::new();
        for c in self.convs.iter_mut() {
            out.push(&mut c.w);
            out.push(&mut c.b);
        }
        out.push(&mut self.dense1.w);
        out.push(&mut self.dense1.b);
        out.push(&mut self.dense2.w);
        out.push(&mut self.dense2.b);
        out
    }

    fn bind(&self, tape: &mut Tape<Elem>, trainable: bool) -> Vec<NodeId> {
        self.tensors()
            .iter()
            .map(|(_, t)| {
                if trainable {
                    tape.var((*t).clone())
                } else {
                    tape.constant((*t).clone())
                }
            })
            .collect()
    }

    /// Build the forward graph; returns normalized-age predictions (B,).
    fn graph(&self, tape: &mut Tape<Elem>, bound: &[NodeId], x: NodeId) -> NodeId {
        let batch = tape.value(x).shape()[0];
        let mut idx = 0usize;
        let mut next = || {
            let id = bound[idx];
            idx += 1;
            id
        };
        let mut cur = x;
        for stage in 0..3 {
            for _ in 0..2 {
                let (w, b) = (next(), next());
                let c = tape.conv2d(cur, w, 1, 1);
                let c = tape.bias_channel(c, b);
                cur = tape.leaky_relu(c, 0.0);
            }
            let _ = stage;
            cur = tape.max_pool2(cur);
        }
        let flat = tape.reshape(cur, &[batch, self.arch.flat_len()]);
        let (w, b) = (next(), next());
        let h = tape.matmul(flat, w);
        let h = tape.bias_row(h, b);
        let h = tape.leaky_relu(h, 0.0);
        let (w, b) = (next(), next());
        let out = tape.matmul(h, w);
        let out = tape.bias_row(out, b);
        tape.reshape(out, &[batch])
    }

    /// Predicted ages in years.
    pub fn predict(&self, images: &[&SliceImage]) -> Vec<f64> {
        if images.is_empty() {
            return Vec::new();
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(slices_to_batch::<Elem>(images).into_dyn());
        let pred = self.graph(&mut tape, &bound, x);
        tape.value(pred)
            .iter()
            .map(|&v| v as f64 * MAX_AGE as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorTrainConfig {
    pub arch: PredictorArch,
    pub steps: u64,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl Default for PredictorTrainConfig {
    fn default() -> Self {
        PredictorTrainConfig {
            arch: PredictorArch::default(),
            steps: 600,
            batch_size: 16,
            optimizer: AdamConfig {
                learning_rate: 1e-3,
                decay: 1e-4,
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}

/// Train the age predictor on (slice, age) pairs; records the final
/// validation MAE in years on the held-out set.
pub fn train_age_predictor(
    train: &SliceDataset,
    validation: &SliceDataset,
    config: &PredictorTrainConfig,
) -> Result<AgePredictorParams> {
    let pool: Vec<(&SliceImage, u32)> = train
        .subjects
        .iter()
        .flat_map(|s| s.slices.iter().map(move |im| (im, s.meta.age)))
        .collect();
    if pool.is_empty() {
        return Err(Error::Dataset("empty predictor training set".into()));
    }
    let distinct: std::collections::BTreeSet<u32> = pool.iter().map(|(_, a)| *a).collect();
    if distinct.len() < 2 {
        return Err(Error::Dataset(
            "age prediction needs at least 2 distinct ages".into(),
        ));
    }

    let mut params = AgePredictorParams::init(
        config.arch,
        derive_seed(config.seed, Component::PredictorInit),
    );
    let mut adam = Adam::new(config.optimizer, &params.tensors());
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(config.seed, Component::PredictorTraining));

    for step in 0..config.steps {
        let batch: Vec<usize> = (0..config.batch_size)
            .map(|_| rng.random_range(0..pool.len()))
            .collect();
        let images: Vec<&SliceImage> = batch.iter().map(|&i| pool[i].0).collect();
        let targets: Vec<Elem> = batch
            .iter()
            .map(|&i| pool[i].1 as Elem / MAX_AGE as Elem)
            .collect();

        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, true);
        let x = tape.constant(slices_to_batch::<Elem>(&images).into_dyn());
        let pred = params.graph(&mut tape, &bound, x);
        let target_node = tape.constant(
            ndarray::Array1::from_vec(targets)
                .into_shape_with_order(ndarray::IxDyn(&[config.batch_size]))
                .expect("target shape"),
        );
        let diff = tape.sub(pred, target_node);
        let diff = tape.abs(diff);
        let loss = tape.mean_all(diff);
        let loss_val = tape.scalar(loss) as f64;
        if !loss_val.is_finite() {
            return Err(Error::NonFinite(format!("predictor loss at step {step}")));
        }
        let grads = tape.backward(loss);
        let grad_list: Vec<Option<ArrayD<Elem>>> =
            bound.iter().map(|&id| grads.get(id).cloned()).collect();
        let mut tensors = params.tensors_mut();
        adam.step(&mut tensors, &grad_list);
    }

    params.validation_mae = dataset_mae(&params, validation)?;
    Ok(params)
}

/// Mean absolute prediction error in years over every slice of a dataset.
pub fn dataset_mae(params: &AgePredictorParams, dataset: &SliceDataset) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for subject in &dataset.subjects {
        let images: Vec<&SliceImage> = subject.slices.iter().collect();
        if images.is_empty() {
            continue;
        }
        for pred in params.predict(&images) {
            total += (pred - subject.meta.age as f64).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Dataset("empty validation set".into()));
    }
    Ok(total / count as f64)
}

const MAGIC: &[u8; 8] = b"BAGEPRD1";

#[derive(Serialize, Deserialize)]
struct PredictorHeader {
    arch: PredictorArch,
    validation_mae: f64,
    shapes: Vec<Vec<usize>>,
}

pub fn save_predictor(path: &Path, params: &AgePredictorParams) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let header = PredictorHeader {
        arch: params.arch,
        validation_mae: params.validation_mae,
        shapes: params
            .tensors()
            .iter()
            .map(|(_, t)| t.shape().to_vec())
            .collect(),
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| Error::parse("predictor header", e))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC).map_err(|e| Error::io(path, e))?;
    w.write_u64::<LittleEndian>(header_bytes.len() as u64)
        .map_err(|e| Error::io(path, e))?;
    w.write_all(&header_bytes).map_err(|e| Error::io(path, e))?;
    for (_, t) in params.tensors() {
        let std_layout = t.as_standard_layout();
        for &v in std_layout.as_slice().expect("standard layout") {
            w.write_u32::<LittleEndian>(v.to_bits())
                .map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_predictor(path: &Path) -> Result<AgePredictorParams> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not an age-predictor archive",
            path.display()
        )));
    }
    let header_len = r
        .read_u64::<LittleEndian>()
        .map_err(|e| Error::io(path, e))? as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)
        .map_err(|e| Error::io(path, e))?;
    let header: PredictorHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::parse("predictor header", e))?;
    let mut params = AgePredictorParams::init(header.arch, 0);
    params.validation_mae = header.validation_mae;
    {
        let tensors = params.tensors();
        if tensors.len() != header.shapes.len() {
            return Err(Error::Checkpoint("predictor tensor table mismatch".into()));
        }
        for ((_, t), shape) in tensors.iter().zip(&header.shapes) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint("predictor shape mismatch".into()));
            }
        }
    }
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            let bits = r
                .read_u32::<LittleEndian>()
                .map_err(|e| Error::io(path, e))?;
            *v = f32::from_bits(bits);
        }
    }
    Ok(params)
}

//! Training data preparation from sparsely sampled light fields, mini-batch
//! sampling and the AdaMax training loop.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drst::{drst_loss_and_grad, drst_loss_and_grad_coeffs};
use crate::error::{invalid, io_err, Error, Result};
use crate::geometry::{
    border_crop, decimate, default_border_margin, make_eval_mask, make_input_mask, preshear_pad, random_crop,
    LineMask, ShearGeometry, ShearedEpi, CANVAS_HEIGHT, FIRST_LINE_ROW,
};
use crate::lightfield::{extract_epi, DisparityConfig, LightField3D};
use crate::nn::{adamax_step, save_checkpoint, AdaMaxState, ChannelPlan, NetParams, Tensor4};
use crate::plane::Plane;
use crate::shearlet::{CoefficientStack, ShearletSystem};

/// Shear variants generated per light field.
pub const PHI_VARIANTS: usize = 3;
/// EPIs drawn per mini-batch; each contributes its three colour channels.
pub const BATCH_EPIS: usize = 4;
/// Width of the random training crop.
pub const CROP_WIDTH: usize = 384;

const MANIFEST: &str = "manifest.jsonl";
const BLOB: &str = "canvases.bin";

/// Number of sheared light-field variants and stored EPIs for `sslfs` light
/// fields of `height` rows each.
pub fn training_counts(sslfs: usize, height: usize) -> (usize, usize) {
    (PHI_VARIANTS * sslfs, PHI_VARIANTS * sslfs * height)
}

/// Iterations needed to visit every stored EPI once.
pub fn iterations_per_epoch(records: usize, batch_epis: usize) -> usize {
    records / batch_epis
}

/// The augmentation shears `d_min`, `d_min - Δ/2`, `d_min - Δ` with `Δ = budget - d_range`.
pub fn phi_variants(d: &DisparityConfig, budget: f64) -> Result<[f64; 3]> {
    let range = d.d_range();
    if range > budget {
        return Err(Error::DisparityBudget { d_range: range, budget });
    }
    let delta = budget - range;
    Ok([d.d_min, d.d_min - 0.5 * delta, d.d_min - delta])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub source: String,
    pub variant: usize,
    pub row: usize,
    pub channels: usize,
    /// Byte offset of the record in the blob.
    pub offset: u64,
    pub geometry: ShearGeometry,
}

/// Read-only collection of border-cropped training canvases.
#[derive(Debug)]
pub struct EpiStore {
    dir: PathBuf,
    records: Vec<StoreRecord>,
}

impl EpiStore {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let file = File::open(&path).map_err(io_err(&path))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: StoreRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Data { path: path.clone(), reason: format!("line {}: {e}", i + 1) })?;
            records.push(rec);
        }
        Ok(Self { dir: dir.to_path_buf(), records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[StoreRecord] {
        &self.records
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn read(&self, index: usize) -> Result<ShearedEpi> {
        let rec = self.records.get(index).ok_or(Error::Index { index, limit: self.records.len() })?;
        let path = self.dir.join(BLOB);
        let mut f = File::open(&path).map_err(io_err(&path))?;
        f.seek(SeekFrom::Start(rec.offset)).map_err(io_err(&path))?;
        let plane_len = rec.geometry.height * rec.geometry.width;
        let mut raw = vec![0u8; rec.channels * plane_len * 4];
        f.read_exact(&mut raw).map_err(io_err(&path))?;
        let values: Vec<f64> =
            raw.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))).collect();
        let channels = values
            .chunks(plane_len)
            .map(|c| Plane::from_vec(rec.geometry.height, rec.geometry.width, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        ShearedEpi::new(channels, rec.geometry.clone())
    }
}

struct StoreWriter {
    dir: PathBuf,
    manifest: BufWriter<File>,
    blob: BufWriter<File>,
    offset: u64,
}

impl StoreWriter {
    fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mp = dir.join(MANIFEST);
        let bp = dir.join(BLOB);
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: BufWriter::new(File::create(&mp).map_err(io_err(&mp))?),
            blob: BufWriter::new(File::create(&bp).map_err(io_err(&bp))?),
            offset: 0,
        })
    }

    fn push(&mut self, se: &ShearedEpi, source: &str, variant: usize, row: usize) -> Result<()> {
        let rec = StoreRecord {
            source: source.to_string(),
            variant,
            row,
            channels: se.channels.len(),
            offset: self.offset,
            geometry: se.geometry.clone(),
        };
        let bp = self.dir.join(BLOB);
        for ch in &se.channels {
            for v in ch.data() {
                self.blob.write_all(&(*v as f32).to_le_bytes()).map_err(io_err(&bp))?;
            }
            self.offset += ch.data().len() as u64 * 4;
        }
        let mp = self.dir.join(MANIFEST);
        let line = serde_json::to_string(&rec).expect("record serializes");
        writeln!(self.manifest, "{line}").map_err(io_err(&mp))
    }

    fn finish(mut self) -> Result<EpiStore> {
        let bp = self.dir.join(BLOB);
        self.blob.flush().map_err(io_err(&bp))?;
        let mp = self.dir.join(MANIFEST);
        self.manifest.flush().map_err(io_err(&mp))?;
        EpiStore::open(&self.dir)
    }
}

/// A named training light field with its disparity bounds.
#[derive(Clone, Debug)]
pub struct TrainingSource {
    pub name: String,
    pub light_field: LightField3D,
    pub disparity: DisparityConfig,
}

/// Shears every EPI of every source at spacing `tau / 4` with three shear
/// variants, border-crops it and appends it to a new store in `out_dir`.
pub fn prepare_training_set(sources: &[TrainingSource], tau: usize, out_dir: &Path) -> Result<EpiStore> {
    if tau < 4 || tau % 4 != 0 {
        return Err(invalid(format!("training needs tau divisible by 4, got {tau}")));
    }
    let spacing = tau / 4;
    let budget = spacing as f64;
    let variants = sources
        .iter()
        .map(|s| {
            phi_variants(&s.disparity, budget).map_err(|e| invalid(format!("light field `{}`: {e}", s.name)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut writer = StoreWriter::create(out_dir)?;
    for (src, phis) in sources.iter().zip(&variants) {
        let n = src.light_field.view_count();
        for (v, &phi) in phis.iter().enumerate() {
            for row in 0..src.light_field.height() {
                let epi = extract_epi(&src.light_field, row)?;
                let se = preshear_pad(&epi, phi, spacing, CANVAS_HEIGHT, FIRST_LINE_ROW)?;
                let se = border_crop(&se, default_border_margin(n, phi))?;
                if se.width() < CROP_WIDTH {
                    return Err(invalid(format!(
                        "light field `{}`: cropped canvas width {} is narrower than the {CROP_WIDTH}-pixel training crop",
                        src.name,
                        se.width()
                    )));
                }
                writer.push(&se, &src.name, v, row)?;
            }
        }
    }
    writer.finish()
}

/// Twelve single-channel training canvases with their masks.
#[derive(Clone, Debug)]
pub struct MiniBatch {
    /// Decimated canvases (three lines).
    pub inputs: Vec<Plane>,
    /// Full-line canvases the reconstruction is compared against.
    pub targets: Vec<Plane>,
    pub input_masks: Vec<LineMask>,
    pub eval_masks: Vec<LineMask>,
}

impl MiniBatch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Inputs stacked as an `(items, 1, H, W)` tensor.
    pub fn input_tensor(&self) -> Tensor4<f32> {
        let (h, w) = self.inputs[0].shape();
        let data = self.inputs.iter().flat_map(|p| p.data().iter().map(|v| *v as f32)).collect();
        Tensor4::from_vec([self.inputs.len(), 1, h, w], data).expect("batch shape is consistent")
    }
}

/// Builds a batch from the given records, drawing one random crop per record.
pub fn build_minibatch<R: Rng + ?Sized>(store: &EpiStore, indices: &[usize], rng: &mut R) -> Result<MiniBatch> {
    let mut batch = MiniBatch { inputs: vec![], targets: vec![], input_masks: vec![], eval_masks: vec![] };
    for &i in indices {
        let se = random_crop(&store.read(i)?, CROP_WIDTH, rng)?;
        let input_mask = make_input_mask(&se.geometry)?;
        let eval_mask = make_eval_mask(&se.geometry);
        let dec = decimate(&se, &input_mask)?;
        for (target, input) in se.channels.into_iter().zip(dec.channels) {
            batch.inputs.push(input);
            batch.targets.push(target);
            batch.input_masks.push(input_mask.clone());
            batch.eval_masks.push(eval_mask.clone());
        }
    }
    Ok(batch)
}

/// Draws [`BATCH_EPIS`] records uniformly and builds their batch.
pub fn sample_minibatch<R: Rng + ?Sized>(store: &EpiStore, rng: &mut R) -> Result<MiniBatch> {
    if store.is_empty() {
        return Err(invalid("cannot sample from an empty store"));
    }
    let indices: Vec<usize> = (0..BATCH_EPIS).map(|_| rng.gen_range(0..store.len())).collect();
    build_minibatch(store, &indices, rng)
}

/// Summed loss and gradient over a batch; items run in parallel and are
/// reduced in batch order.
pub fn batch_loss_and_grad(
    sys: &ShearletSystem,
    params: &NetParams<f32>,
    batch: &MiniBatch,
) -> Result<(f64, NetParams<f32>)> {
    let parts = (0..batch.len())
        .into_par_iter()
        .map(|i| drst_loss_and_grad(sys, params, &batch.inputs[i], &batch.targets[i], &batch.eval_masks[i]))
        .collect::<Result<Vec<_>>>()?;
    let mut total = NetParams::zeros(&params.plan);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.accumulate(g);
    }
    Ok((loss, total))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub plan: ChannelPlan,
    pub epochs: usize,
    /// Iterations per epoch; `None` visits every record once.
    pub epoch_len: Option<usize>,
    pub lr_high: f64,
    pub lr_low: f64,
    /// Epochs trained at `lr_high` before switching to `lr_low`.
    pub high_epochs: usize,
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
}

impl TrainConfig {
    pub fn new(plan: ChannelPlan, checkpoint_dir: PathBuf) -> Self {
        Self { plan, epochs: 10, epoch_len: None, lr_high: 1e-3, lr_low: 1e-4, high_epochs: 2, seed: 0, checkpoint_dir }
    }

    /// Learning rate at global iteration `iter`.
    pub fn learning_rate(&self, iter: usize, epoch_len: usize) -> f64 {
        if iter < self.high_epochs * epoch_len {
            self.lr_high
        } else {
            self.lr_low
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: NetParams<f32>,
    pub checkpoints: Vec<PathBuf>,
    pub log: Vec<StepLog>,
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.gen()
}

/// Trains from `init` (or a fresh initialization), writing a checkpoint after
/// every epoch and a CSV log line per step via `on_step`.
pub fn train(
    store: &EpiStore,
    sys: &ShearletSystem,
    cfg: &TrainConfig,
    init: Option<(NetParams<f32>, AdaMaxState<f32>)>,
    mut on_step: impl FnMut(&StepLog),
) -> Result<TrainOutcome> {
    if store.is_empty() {
        return Err(invalid("training store is empty"));
    }
    if store.records()[0].geometry.height != sys.height() || CROP_WIDTH != sys.width() {
        return Err(invalid(format!(
            "shearlet system {}x{} does not match training crops {}x{CROP_WIDTH}",
            sys.height(),
            sys.width(),
            store.records()[0].geometry.height
        )));
    }
    let (mut params, mut state) = match init {
        Some(p) => p,
        None => {
            let p = NetParams::<f32>::init(&cfg.plan, cfg.seed)?;
            let s = AdaMaxState::new(&p);
            (p, s)
        }
    };
    if params.plan.io != sys.count() {
        return Err(invalid("network channel count does not match the shearlet system"));
    }
    std::fs::create_dir_all(&cfg.checkpoint_dir).map_err(io_err(&cfg.checkpoint_dir))?;
    let epoch_len = cfg.epoch_len.unwrap_or_else(|| iterations_per_epoch(store.len(), BATCH_EPIS)).max(1);
    let mut crop_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let mut checkpoints = Vec::new();
    let mut log = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..store.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1000 + epoch as u64)));
        for it in 0..epoch_len {
            let indices: Vec<usize> = (0..BATCH_EPIS).map(|j| order[(it * BATCH_EPIS + j) % order.len()]).collect();
            let batch = build_minibatch(store, &indices, &mut crop_rng)?;
            let (loss, grads) = batch_loss_and_grad(sys, &params, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "loss became {loss} at step {step}; last good checkpoint: {}",
                    checkpoints.last().map(|p: &PathBuf| p.display().to_string()).unwrap_or_else(|| "none".into())
                )));
            }
            let lr = cfg.learning_rate(step, epoch_len);
            adamax_step(&mut params, &grads, &mut state, lr)?;
            let entry = StepLog { step, epoch, lr, loss };
            on_step(&entry);
            log.push(entry);
            step += 1;
        }
        let path = cfg.checkpoint_dir.join(format!("epoch_{:03}.ckpt", epoch + 1));
        save_checkpoint(&path, &params, Some(&state))?;
        checkpoints.push(path);
    }
    Ok(TrainOutcome { params, checkpoints, log })
}

/// Repeatedly trains on one fixed mini-batch, returning the loss before each
/// step followed by the final loss.
pub fn overfit_smoke(
    store: &EpiStore,
    sys: &ShearletSystem,
    plan: &ChannelPlan,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let batch = sample_minibatch(store, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let coeffs = batch.inputs.par_iter().map(|x| sys.analysis(x)).collect::<Result<Vec<CoefficientStack>>>()?;
    let step = |params: &NetParams<f32>| -> Result<(f64, NetParams<f32>)> {
        let parts = (0..batch.len())
            .into_par_iter()
            .map(|i| drst_loss_and_grad_coeffs(sys, params, &coeffs[i], &batch.targets[i], &batch.eval_masks[i]))
            .collect::<Result<Vec<_>>>()?;
        let mut total = NetParams::zeros(&params.plan);
        let mut loss = 0.0;
        for (l, g) in &parts {
            loss += l;
            total.accumulate(g);
        }
        Ok((loss, total))
    };
    let mut params = NetParams::<f32>::init(plan, seed)?;
    let mut state = AdaMaxState::new(&params);
    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let (loss, grads) = step(&params)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("loss became {loss} after {} steps", losses.len())));
        }
        losses.push(loss);
        if lr > 0.0 {
            adamax_step(&mut params, &grads, &mut state, lr)?;
        }
    }
    losses.push(step(&params)?.0);
    Ok(losses)
}

/// Writes the training log as CSV `step,epoch,lr,loss`.
pub fn write_train_log(path: &Path, log: &[StepLog]) -> Result<()> {
    let mut text = String::from("step,epoch,lr,loss\n");
    for l in log {
        text.push_str(&format!("{},{},{:e},{:e}\n", l.step, l.epoch, l.lr, l.loss));
    }
    std::fs::write(path, text).map_err(io_err(path))
}

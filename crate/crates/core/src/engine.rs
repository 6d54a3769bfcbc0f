//! The two-generator / two-discriminator optimization loop: loss wiring
//! per preset, optimizer stepping with the schedule, checkpointing and
//! metrics logging.
//!
//! Update order per step: both generators jointly on the adversarial plus
//! constraint terms, then both discriminators on pooled detached fakes.

use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, PairTag};
use crate::data::{self, UnpairedDataset};
use crate::error::{Error, Result};
use crate::extractors::{EdgeDetector, PerceptualExtractor, Segmenter, TRAIN_STUB_SEED};
use crate::losses::{self, scalar_f64, LossComponents, LossReport};
use crate::nets::{
    build_discriminator, build_transformer, Discriminator, DiscriminatorSpec, Transformer,
    TransformerSpec,
};
use crate::pool::ImagePool;
use crate::tensor::{EdgeMap, FeatureStack};

/// Spreads a salt into a run seed so every component gets an independent
/// but reproducible stream.
pub(crate) fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

const SALT_G_A2B: u64 = 1;
const SALT_G_B2A: u64 = 2;
const SALT_D_A: u64 = 3;
const SALT_D_B: u64 = 4;
const SALT_POOL_A: u64 = 5;
const SALT_POOL_B: u64 = 6;
const SALT_SEG: u64 = 7;
const SALT_SAMPLER_A: u64 = 9;
const SALT_SAMPLER_B: u64 = 10;
const SALT_PREPROCESS: u64 = 1 << 32;

/// One entry of the declarative loss graph a config wires up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WiredLoss {
    CycleA { weight: f64 },
    CycleB { weight: f64 },
    Perceptual { tag: PairTag, weight: f64 },
    EdgePreservation { tag: PairTag, weight: f64 },
    EdgeIntroduction { tag: PairTag, weight: f64 },
}

/// Expands a config into the list of constraint losses to evaluate each
/// step. Zero-weight terms are dropped; adversarial terms are implicit.
pub fn wire_losses(config: &ExperimentConfig) -> Result<Vec<WiredLoss>> {
    config.validate()?;
    let mut wired = Vec::new();
    if config.lambda_cyc_a > 0.0 {
        wired.push(WiredLoss::CycleA { weight: config.lambda_cyc_a });
    }
    if config.lambda_cyc_b > 0.0 {
        wired.push(WiredLoss::CycleB { weight: config.lambda_cyc_b });
    }
    for tag in PairTag::ALL {
        if config.lambda_p(tag) > 0.0 {
            wired.push(WiredLoss::Perceptual { tag, weight: config.lambda_p(tag) });
        }
        if config.lambda_ep(tag) > 0.0 {
            wired.push(WiredLoss::EdgePreservation { tag, weight: config.lambda_ep(tag) });
        }
        if config.lambda_ei(tag) > 0.0 {
            wired.push(WiredLoss::EdgeIntroduction { tag, weight: config.lambda_ei(tag) });
        }
    }
    Ok(wired)
}

/// Full optimization state: both transformers, both discriminators, their
/// pools and optimizers, and the frozen helper networks.
pub struct TrainState {
    pub config: ExperimentConfig,
    pub g_a2b: Transformer,
    pub g_b2a: Transformer,
    pub d_a: Discriminator,
    pub d_b: Discriminator,
    pub epoch: usize,
    pub step: usize,
    pub seed: u64,
    edge_detector: EdgeDetector,
    perceptual: Option<PerceptualExtractor>,
    pub segmenter: Option<Segmenter>,
    wired: Vec<WiredLoss>,
    pool_a: ImagePool,
    pool_b: ImagePool,
    opt_g: AdamW,
    opt_d: AdamW,
    device: Device,
}

impl TrainState {
    pub fn new(
        config: ExperimentConfig,
        seed: u64,
        edge_detector: EdgeDetector,
        device: &Device,
    ) -> Result<Self> {
        config.validate()?;
        let wired = wire_losses(&config)?;
        let gen_spec = TransformerSpec::from_config(&config);
        let g_a2b = build_transformer(&gen_spec, derive_seed(seed, SALT_G_A2B), device)?;
        let g_b2a = build_transformer(&gen_spec, derive_seed(seed, SALT_G_B2A), device)?;
        let d_a = build_discriminator(
            &DiscriminatorSpec::plain(config.disc_channels),
            derive_seed(seed, SALT_D_A),
            device,
        )?;
        let d_b_spec = if config.use_seg_discriminator {
            DiscriminatorSpec::seg_augmented(config.disc_channels, config.seg_classes)
        } else {
            DiscriminatorSpec::plain(config.disc_channels)
        };
        let d_b = build_discriminator(&d_b_spec, derive_seed(seed, SALT_D_B), device)?;
        let segmenter = if config.use_seg_discriminator {
            Some(Segmenter::new(config.seg_classes, derive_seed(seed, SALT_SEG), device)?)
        } else {
            None
        };
        let needs_perceptual = PairTag::ALL.iter().any(|t| config.lambda_p(*t) > 0.0);
        let perceptual = if needs_perceptual {
            Some(PerceptualExtractor::new(config.perceptual_extractor, TRAIN_STUB_SEED, device)?)
        } else {
            None
        };
        let lr = config.schedule().rate_at(0);
        let params = ParamsAdamW { lr, beta1: config.beta1, ..Default::default() };
        let mut gen_vars = g_a2b.vars();
        gen_vars.extend(g_b2a.vars());
        let mut disc_vars = d_a.vars();
        disc_vars.extend(d_b.vars());
        let opt_g = AdamW::new(gen_vars, params.clone())?;
        let opt_d = AdamW::new(disc_vars, params)?;
        Ok(TrainState {
            pool_a: ImagePool::new(config.pool_size, derive_seed(seed, SALT_POOL_A)),
            pool_b: ImagePool::new(config.pool_size, derive_seed(seed, SALT_POOL_B)),
            config,
            g_a2b,
            g_b2a,
            d_a,
            d_b,
            epoch: 0,
            step: 0,
            seed,
            edge_detector,
            perceptual,
            segmenter,
            wired,
            opt_g,
            opt_d,
            device: device.clone(),
        })
    }

    pub fn wired(&self) -> &[WiredLoss] {
        &self.wired
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.opt_g.set_learning_rate(lr);
        self.opt_d.set_learning_rate(lr);
    }

    /// Discriminator input for a domain-B image batch: the image plus its
    /// segmentation class maps when the augmented discriminator is on.
    fn d_b_input(&self, x: &Tensor) -> Result<Tensor> {
        match &self.segmenter {
            Some(seg) => {
                let maps = seg.segment_batch(x)?;
                Ok(Tensor::cat(&[x.clone(), maps], 1)?)
            }
            None => Ok(x.clone()),
        }
    }

    /// Mean per-image perceptual distance over a batch pair.
    fn perceptual_term(&self, x_ref: &Tensor, x_gen: &Tensor) -> Result<Tensor> {
        let ex = self.perceptual.as_ref().ok_or_else(|| {
            Error::Config("perceptual weight set but no extractor was built".into())
        })?;
        batch_mean(x_ref, |i| {
            let fr = stack_of(ex, x_ref, i)?;
            let fg = stack_of(ex, x_gen, i)?;
            losses::perceptual_distance(&fr, &fg)
        })
    }

    /// Mean per-image edge loss over a batch pair.
    fn edge_term(&self, x_ref: &Tensor, x_gen: &Tensor, preservation: bool) -> Result<Tensor> {
        let e_ref = self.edge_detector.detect_batch(x_ref)?;
        let e_gen = self.edge_detector.detect_batch(x_gen)?;
        batch_mean(x_ref, |i| {
            let r = EdgeMap::new(e_ref.narrow(0, i, 1)?.squeeze(0)?.squeeze(0)?)?;
            let g = EdgeMap::new(e_gen.narrow(0, i, 1)?.squeeze(0)?.squeeze(0)?)?;
            if preservation {
                losses::edge_preservation_loss(&r, &g)
            } else {
                losses::edge_introduction_loss(&r, &g)
            }
        })
    }

    /// One full optimization step on preprocessed (N,3,crop_h,crop_w)
    /// batches. Deterministic given the construction seed.
    pub fn train_step(&mut self, batch_a: &Tensor, batch_b: &Tensor) -> Result<LossReport> {
        self.train_step_selective(batch_a, batch_b, true, true)
    }

    /// [`train_step`] with independently switchable parameter updates,
    /// useful for isolation diagnostics. Loss evaluation is identical.
    pub fn train_step_selective(
        &mut self,
        batch_a: &Tensor,
        batch_b: &Tensor,
        update_g: bool,
        update_d: bool,
    ) -> Result<LossReport> {
        let x_a = batch_a;
        let x_b = batch_b;
        let b_f = self.g_a2b.forward(x_a)?;
        let a_f = self.g_b2a.forward(x_b)?;
        let a_r = self.g_b2a.forward(&b_f)?;
        let b_r = self.g_a2b.forward(&a_f)?;

        // Generator adversarial terms: each fake should fool its critic.
        let g_adv_a2b = losses::adversarial_generator_loss(&self.d_b.forward(&self.d_b_input(&b_f)?)?)?;
        let g_adv_b2a = losses::adversarial_generator_loss(&self.d_a.forward(&a_f)?)?;
        let mut g_loss = (&g_adv_a2b + &g_adv_b2a)?;

        let pair = |tag: PairTag| -> (&Tensor, &Tensor) {
            match tag {
                PairTag::Afb => (x_a, &b_f),
                PairTag::Bfa => (x_b, &a_f),
                PairTag::Farb => (&b_f, &a_r),
                PairTag::Fbra => (&a_f, &b_r),
            }
        };

        let mut components = LossComponents {
            g_adv_a2b: scalar_f64(&g_adv_a2b)?,
            g_adv_b2a: scalar_f64(&g_adv_b2a)?,
            ..Default::default()
        };

        let wired = self.wired.clone();
        for entry in &wired {
            let (term, weight) = match entry {
                WiredLoss::CycleA { weight } => {
                    let t = losses::cycle_consistency_loss(x_a, &a_r)?;
                    components.cyc_a = Some(scalar_f64(&t)?);
                    (t, *weight)
                }
                WiredLoss::CycleB { weight } => {
                    let t = losses::cycle_consistency_loss(x_b, &b_r)?;
                    components.cyc_b = Some(scalar_f64(&t)?);
                    (t, *weight)
                }
                WiredLoss::Perceptual { tag, weight } => {
                    let (r, g) = pair(*tag);
                    let t = self.perceptual_term(r, g)?;
                    components.perceptual.insert(*tag, scalar_f64(&t)?);
                    (t, *weight)
                }
                WiredLoss::EdgePreservation { tag, weight } => {
                    let (r, g) = pair(*tag);
                    let t = self.edge_term(r, g, true)?;
                    components.edge_preservation.insert(*tag, scalar_f64(&t)?);
                    (t, *weight)
                }
                WiredLoss::EdgeIntroduction { tag, weight } => {
                    let (r, g) = pair(*tag);
                    let t = self.edge_term(r, g, false)?;
                    components.edge_introduction.insert(*tag, scalar_f64(&t)?);
                    (t, *weight)
                }
            };
            g_loss = (g_loss + term.affine(weight, 0.0)?)?;
        }
        if update_g {
            self.opt_g.backward_step(&g_loss)?;
        }

        // Discriminators train on detached, pool-mixed fakes.
        let pooled_a = self.pool_a.query(a_f.detach());
        let pooled_b = self.pool_b.query(b_f.detach());
        let d_a_loss = losses::adversarial_discriminator_loss(
            &self.d_a.forward(x_a)?,
            &self.d_a.forward(&pooled_a)?,
        )?;
        let d_b_loss = losses::adversarial_discriminator_loss(
            &self.d_b.forward(&self.d_b_input(x_b)?)?,
            &self.d_b.forward(&self.d_b_input(&pooled_b)?)?,
        )?;
        components.d_a = scalar_f64(&d_a_loss)?;
        components.d_b = scalar_f64(&d_b_loss)?;
        if update_d {
            self.opt_d.backward_step(&(d_a_loss + d_b_loss)?)?;
        }

        let report = losses::total_objective(&components, &self.config)?;
        if !report.is_finite() {
            return Err(Error::NonFiniteLoss { step: self.step, report: Box::new(report) });
        }
        self.step += 1;
        Ok(report)
    }
}

fn batch_mean(x: &Tensor, mut f: impl FnMut(usize) -> Result<Tensor>) -> Result<Tensor> {
    let n = x.dims()[0];
    let mut acc: Option<Tensor> = None;
    for i in 0..n {
        let t = f(i)?;
        acc = Some(match acc {
            Some(a) => (a + t)?,
            None => t,
        });
    }
    Ok(acc.expect("batch is non-empty").affine(1.0 / n as f64, 0.0)?)
}

fn stack_of(ex: &PerceptualExtractor, x: &Tensor, i: usize) -> Result<FeatureStack> {
    let item = x.narrow(0, i, 1)?;
    let layers = ex
        .extract_batch(&item)?
        .into_iter()
        .map(|(t, w)| Ok((t.squeeze(0)?, w)))
        .collect::<Result<Vec<_>>>()?;
    FeatureStack::new(layers)
}

/// Options for a [`train`] run.
pub struct TrainOptions {
    pub out_dir: PathBuf,
    /// Stop after this many total steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub checkpoint_every_epochs: usize,
}

impl TrainOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        TrainOptions { out_dir: out_dir.into(), max_steps: None, checkpoint_every_epochs: 1 }
    }
}

/// Runs the full schedule (`n_iter + n_iter_decay` epochs, one pass over
/// the smaller domain per epoch), appending one metrics row per step and
/// writing periodic checkpoints. Resuming from a checkpoint continues the
/// same trajectory for the same seed.
pub fn train(
    state: &mut TrainState,
    data_a: &UnpairedDataset,
    data_b: &UnpairedDataset,
    opts: &TrainOptions,
) -> Result<()> {
    if data_a.is_empty() || data_b.is_empty() {
        return Err(Error::Dataset("both training domains must be non-empty".into()));
    }
    std::fs::create_dir_all(&opts.out_dir)?;
    let metrics_path = opts.out_dir.join("metrics.csv");
    let mut metrics = String::new();
    if !metrics_path.exists() {
        metrics.push_str(&LossReport::csv_header());
        metrics.push('\n');
    }

    let schedule = state.config.schedule();
    let total_epochs = state.config.n_iter + state.config.n_iter_decay;
    let epoch_len = data_a.len().min(data_b.len());
    let flip_a = data::flips_allowed(&data_a.root);
    let flip_b = data::flips_allowed(&data_b.root);

    let mut sampler_a = data::DomainSampler::new(data_a.len(), derive_seed(state.seed, SALT_SAMPLER_A));
    let mut sampler_b = data::DomainSampler::new(data_b.len(), derive_seed(state.seed, SALT_SAMPLER_B));
    sampler_a.advance(state.step);
    sampler_b.advance(state.step);

    let append = |buf: &mut String, path: &Path| -> Result<()> {
        use std::io::Write;
        if !buf.is_empty() {
            let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
            f.write_all(buf.as_bytes())?;
            buf.clear();
        }
        Ok(())
    };

    'epochs: for epoch in state.epoch..total_epochs {
        state.set_learning_rate(schedule.rate_at(epoch));
        for _ in 0..epoch_len {
            if let Some(max) = opts.max_steps {
                if state.step >= max {
                    break 'epochs;
                }
            }
            let step = state.step as u64;
            let img_a = data_a.load(sampler_a.next_index())?;
            let img_b = data_b.load(sampler_b.next_index())?;
            let mut rng_a =
                ChaCha8Rng::seed_from_u64(derive_seed(state.seed, SALT_PREPROCESS + 2 * step));
            let mut rng_b =
                ChaCha8Rng::seed_from_u64(derive_seed(state.seed, SALT_PREPROCESS + 2 * step + 1));
            let a = data::preprocess(
                &img_a,
                state.config.load_size,
                state.config.crop_size,
                &mut rng_a,
                flip_a,
                &state.device,
            )?;
            let b = data::preprocess(
                &img_b,
                state.config.load_size,
                state.config.crop_size,
                &mut rng_b,
                flip_b,
                &state.device,
            )?;
            let report = state.train_step(&a.batched()?, &b.batched()?)?;
            metrics.push_str(&report.csv_row());
            metrics.push('\n');
        }
        state.epoch = epoch + 1;
        append(&mut metrics, &metrics_path)?;
        if state.epoch % opts.checkpoint_every_epochs.max(1) == 0 || state.epoch == total_epochs {
            save_checkpoint(state, &opts.out_dir.join(format!("checkpoint_epoch_{:04}", state.epoch)))?;
        }
    }
    append(&mut metrics, &metrics_path)?;
    // A max-steps stop still leaves a resumable checkpoint behind.
    save_checkpoint(state, &opts.out_dir.join("checkpoint_final"))?;
    Ok(())
}

pub const CHECKPOINT_VERSION: &str = "dtx-checkpoint-v1";

#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointMeta {
    version: String,
    config: String,
    config_sha256: String,
    transformer: TransformerSpec,
    disc_a: DiscriminatorSpec,
    disc_b: DiscriminatorSpec,
    epoch: usize,
    step: usize,
    seed: u64,
    edge_backbone: String,
}

fn config_hash(text: &str) -> String {
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    format!("{:x}", h.finalize())
}

/// Writes a self-describing checkpoint directory: `meta.json` plus one
/// safetensors file per network.
pub fn save_checkpoint(state: &TrainState, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let config_text = state.config.to_key_value_string();
    let meta = CheckpointMeta {
        version: CHECKPOINT_VERSION.to_string(),
        config_sha256: config_hash(&config_text),
        config: config_text,
        transformer: state.g_a2b.spec.clone(),
        disc_a: state.d_a.spec.clone(),
        disc_b: state.d_b.spec.clone(),
        epoch: state.epoch,
        step: state.step,
        seed: state.seed,
        edge_backbone: match state.edge_detector.backbone() {
            crate::extractors::EdgeBackbone::AnalyticSobel => "sobel".to_string(),
            crate::extractors::EdgeBackbone::HedResidual => "hed".to_string(),
        },
    };
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta).unwrap())?;
    state.g_a2b.save(dir.join("g_a2b.safetensors"))?;
    state.g_b2a.save(dir.join("g_b2a.safetensors"))?;
    state.d_a.save(dir.join("d_a.safetensors"))?;
    state.d_b.save(dir.join("d_b.safetensors"))?;
    if let crate::extractors::EdgeBackbone::HedResidual = state.edge_detector.backbone() {
        state.edge_detector.save_hed(dir.join("hed.safetensors"))?;
    }
    Ok(())
}

fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join("meta.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Checkpoint(format!("reading {}: {e}", path.display())))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("parsing {}: {e}", path.display())))?;
    if meta.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version `{}` (expected {CHECKPOINT_VERSION})",
            meta.version
        )));
    }
    if config_hash(&meta.config) != meta.config_sha256 {
        return Err(Error::Checkpoint("config hash mismatch; checkpoint is corrupt".into()));
    }
    Ok(meta)
}

/// Restores a full training state from a checkpoint directory.
pub fn load_checkpoint(dir: impl AsRef<Path>, device: &Device) -> Result<TrainState> {
    let dir = dir.as_ref();
    let meta = read_meta(dir)?;
    let config = crate::config::parse_experiment_config(&meta.config)?;
    let edge_detector = match meta.edge_backbone.as_str() {
        "sobel" => EdgeDetector::sobel(),
        "hed" => EdgeDetector::hed_from_file(dir.join("hed.safetensors"), device)?,
        other => return Err(Error::Checkpoint(format!("unknown edge backbone `{other}`"))),
    };
    let mut state = TrainState::new(config, meta.seed, edge_detector, device)?;
    state.g_a2b.load(dir.join("g_a2b.safetensors"))?;
    state.g_b2a.load(dir.join("g_b2a.safetensors"))?;
    state.d_a.load(dir.join("d_a.safetensors"))?;
    state.d_b.load(dir.join("d_b.safetensors"))?;
    state.epoch = meta.epoch;
    state.step = meta.step;
    Ok(state)
}

/// Loads only the enhancement-direction transformer (A degraded -> B
/// clean) plus the config it was trained with; what `evaluate` and
/// `transform` need.
pub fn load_transformer(dir: impl AsRef<Path>, device: &Device) -> Result<(Transformer, ExperimentConfig)> {
    let dir = dir.as_ref();
    let meta = read_meta(dir)?;
    let config = crate::config::parse_experiment_config(&meta.config)?;
    let mut t = build_transformer(&meta.transformer, 0, device)?;
    t.load(dir.join("g_a2b.safetensors"))?;
    Ok((t, config))
}

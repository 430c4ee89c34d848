//! Joint training of the filter bank and the segmentation head, and
//! single-source domain-generalisation evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::SyntheticSample;
use super::head::HeadModel;
use super::loss::{dice_bce_loss, dice_score};
use super::optim::{Adam, CosineAnnealing};
use crate::autodiff::grad_of_scalar;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::filters::LowPassSpec;
use crate::monogenic::{ChannelMode, Mono2d};
use crate::params::{init_bank, FilterBank};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub min_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub n_scales: usize,
    pub lowpass: LowPassSpec,
    pub mode: ChannelMode,
    pub use_mono2d: bool,
    pub freeze_layer: bool,
    pub include_input: bool,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            min_lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epochs: 200,
            batch_size: 8,
            seed: 0,
            n_scales: 8,
            lowpass: LowPassSpec::default(),
            mode: ChannelMode::Both,
            use_mono2d: true,
            freeze_layer: false,
            include_input: false,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.min_lr > 0.0 && self.learning_rate > self.min_lr) {
            return bad(format!(
                "need learning_rate > min_lr > 0, got {} and {}",
                self.learning_rate, self.min_lr
            ));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad(format!(
                "Adam betas must be in [0, 1), got {} and {}",
                self.beta1, self.beta2
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.n_scales == 0 {
            return bad("n_scales must be >= 1".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!(
                "val_fraction must be in (0, 1), got {}",
                self.val_fraction
            ));
        }
        Ok(())
    }

    fn trains_bank(&self) -> bool {
        self.use_mono2d && !self.freeze_layer
    }
}

/// What the head sees: the raw image, or the monogenic features.
#[derive(Clone, Debug)]
pub enum FeatureExtractor {
    Raw,
    Mono2d(Mono2d),
}

impl FeatureExtractor {
    pub fn channel_count(&self) -> usize {
        match self {
            FeatureExtractor::Raw => 1,
            FeatureExtractor::Mono2d(layer) => layer.channel_count(),
        }
    }

    pub fn features(&self, image: &Field) -> Result<Vec<Field>> {
        match self {
            FeatureExtractor::Raw => Ok(vec![image.clone()]),
            FeatureExtractor::Mono2d(layer) => Ok(layer.forward(image)?.into_channels()),
        }
    }

    pub fn bank(&self) -> Option<&FilterBank> {
        match self {
            FeatureExtractor::Raw => None,
            FeatureExtractor::Mono2d(layer) => Some(layer.bank()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SegmentationModel {
    pub extractor: FeatureExtractor,
    pub head: HeadModel,
}

impl SegmentationModel {
    pub fn predict(&self, image: &Field) -> Result<Field> {
        self.head.predict(&self.extractor.features(image)?)
    }

    /// Binary mask at probability 0.5.
    pub fn segment(&self, image: &Field) -> Result<Field> {
        Ok(self.predict(image)?.map(|p| f64::from(u8::from(p > 0.5))))
    }

    pub fn bank(&self) -> Option<&FilterBank> {
        self.extractor.bank()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_dice: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best model by validation Dice (the initial model when no epoch ran).
    pub model: SegmentationModel,
    pub initial_bank: Option<FilterBank>,
    pub log: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_dice: f64,
}

/// Leading `1 - val_fraction` for training, the rest for validation.
pub fn split_dataset(
    samples: &[SyntheticSample],
    val_fraction: f64,
) -> (&[SyntheticSample], &[SyntheticSample]) {
    let n = samples.len();
    let n_val =
        ((n as f64 * val_fraction).round() as usize).clamp(usize::from(n > 1), n.saturating_sub(1));
    samples.split_at(n - n_val)
}

/// Mean per-image Dice of the thresholded predictions.
pub fn mean_dice(model: &SegmentationModel, samples: &[SyntheticSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("cannot score an empty set".into()));
    }
    let scores = crate::par_map(samples, |s| dice_score(&model.segment(&s.image)?, &s.mask));
    let total: f64 = scores.into_iter().collect::<Result<Vec<_>>>()?.iter().sum();
    Ok(total / samples.len() as f64)
}

fn initial_model(config: &TrainConfig, shape: (usize, usize)) -> Result<SegmentationModel> {
    let extractor = if config.use_mono2d {
        let bank = init_bank(config.n_scales, shape.0, shape.1, config.seed)?;
        FeatureExtractor::Mono2d(
            Mono2d::new(bank, config.lowpass, config.mode).with_input_channel(config.include_input),
        )
    } else {
        FeatureExtractor::Raw
    };
    let head = HeadModel::new(extractor.channel_count(), config.seed ^ 0x005e_ed0f_4ead);
    Ok(SegmentationModel { extractor, head })
}

struct SampleGrad {
    loss: f64,
    head: Vec<f64>,
    bank: Option<Vec<f64>>,
}

fn sample_gradient(
    model: &SegmentationModel,
    sample: &SyntheticSample,
    cached: Option<&Vec<Field>>,
    trains_bank: bool,
) -> Result<SampleGrad> {
    let (features, bundle) = match (&model.extractor, cached) {
        (_, Some(f)) => (f.clone(), None),
        (FeatureExtractor::Mono2d(layer), None) if trains_bank => {
            let (f, t) = layer.forward_with_tangents(&sample.image)?;
            (f.into_channels(), Some(t))
        }
        (extractor, None) => (extractor.features(&sample.image)?, None),
    };
    let trace = model.head.forward(&features)?;
    let (loss, d_logits) = dice_bce_loss(&trace.logits, &sample.mask);
    let (head, d_features) = model.head.backward(&features, &trace, &d_logits);
    let bank = match bundle {
        Some(b) => Some(grad_of_scalar(&b, &d_features)?),
        None => None,
    };
    Ok(SampleGrad { loss, head, bank })
}

pub fn train(config: &TrainConfig, dataset: &[SyntheticSample]) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let shape = dataset[0].image.shape();
    for sample in dataset {
        sample.image.ensure_shape(shape.0, shape.1)?;
        sample.mask.ensure_shape(shape.0, shape.1)?;
    }
    let (train_set, val_set) = split_dataset(dataset, config.val_fraction);
    let val_set = if val_set.is_empty() {
        train_set
    } else {
        val_set
    };

    let mut model = initial_model(config, shape)?;
    let initial_bank = model.bank().cloned();
    let trains_bank = config.trains_bank();

    // a fixed extractor lets features be computed once
    let cache: Option<Vec<Vec<Field>>> = if trains_bank {
        None
    } else {
        Some(
            crate::par_map(train_set, |s| model.extractor.features(&s.image))
                .into_iter()
                .collect::<Result<_>>()?,
        )
    };

    let schedule = CosineAnnealing {
        max_lr: config.learning_rate,
        min_lr: config.min_lr,
        epochs: config.epochs,
    };
    let mut head_opt = Adam::new(model.head.n_params(), config.beta1, config.beta2);
    let mut bank_opt = initial_bank
        .as_ref()
        .map(|b| Adam::new(b.n_params(), config.beta1, config.beta2));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x7a11));

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, SegmentationModel)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..config.epochs {
        let lr = schedule.lr(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            let grads = crate::par_map(batch, |&i| {
                sample_gradient(
                    &model,
                    &train_set[i],
                    cache.as_ref().map(|c| &c[i]),
                    trains_bank,
                )
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / grads.len() as f64;
            let loss = grads.iter().map(|g| g.loss).sum::<f64>() * scale;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            epoch_loss += loss;
            batches += 1;

            let mut head_grad = vec![0.0; model.head.n_params()];
            for g in &grads {
                for (acc, v) in head_grad.iter_mut().zip(&g.head) {
                    *acc += v * scale;
                }
            }
            let mut head_params = model.head.params();
            head_opt.step(&mut head_params, &head_grad, lr);
            model.head.set_params(&head_params)?;

            if trains_bank {
                if let (FeatureExtractor::Mono2d(layer), Some(opt)) =
                    (&model.extractor, bank_opt.as_mut())
                {
                    let mut bank_grad = vec![0.0; layer.bank().n_params()];
                    for g in &grads {
                        for (acc, v) in bank_grad.iter_mut().zip(g.bank.as_deref().unwrap_or(&[])) {
                            *acc += v * scale;
                        }
                    }
                    if bank_grad.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Divergence {
                            epoch,
                            loss: f64::NAN,
                        });
                    }
                    let mut bank = layer.bank().clone();
                    let mut params = bank.params();
                    opt.step(&mut params, &bank_grad, lr);
                    bank.set_params(&params)?;
                    let next = Mono2d::new(bank, layer.lowpass(), layer.mode())
                        .with_input_channel(layer.includes_input());
                    model.extractor = FeatureExtractor::Mono2d(next);
                }
            }
        }
        let val_dice = mean_dice(&model, val_set)?;
        log.push(EpochRecord {
            epoch,
            lr,
            train_loss: epoch_loss / batches.max(1) as f64,
            val_dice,
        });
        if best.as_ref().is_none_or(|(_, d, _)| val_dice > *d) {
            best = Some((epoch, val_dice, model.clone()));
        }
    }

    Ok(match best {
        Some((epoch, dice, model)) => TrainOutcome {
            model,
            initial_bank,
            log,
            best_epoch: Some(epoch),
            best_val_dice: dice,
        },
        None => {
            let dice = mean_dice(&model, val_set)?;
            TrainOutcome {
                model,
                initial_bank,
                log,
                best_epoch: None,
                best_val_dice: dice,
            }
        }
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainDice {
    pub name: String,
    pub dice: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsdgReport {
    pub source_dice: f64,
    pub domains: Vec<DomainDice>,
}

impl SsdgReport {
    pub fn mean_shifted(&self) -> f64 {
        if self.domains.is_empty() {
            return f64::NAN;
        }
        self.domains.iter().map(|d| d.dice).sum::<f64>() / self.domains.len() as f64
    }

    pub fn domain(&self, name: &str) -> Option<f64> {
        self.domains.iter().find(|d| d.name == name).map(|d| d.dice)
    }

    /// Source Dice minus the named domain's Dice.
    pub fn gap(&self, name: &str) -> Option<f64> {
        self.domain(name).map(|d| self.source_dice - d)
    }
}

/// Dice on the source split and on each shifted test set.
pub fn evaluate_ssdg(
    model: &SegmentationModel,
    source: &[SyntheticSample],
    shifted: &[(String, Vec<SyntheticSample>)],
) -> Result<SsdgReport> {
    let source_dice = mean_dice(model, source)?;
    let domains = shifted
        .iter()
        .map(|(name, samples)| {
            Ok(DomainDice {
                name: name.clone(),
                dice: mean_dice(model, samples)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SsdgReport {
        source_dice,
        domains,
    })
}

/// Mono2D-minus-raw difference of the mean shifted-domain Dice.
pub fn ssdg_advantage(mono: &SsdgReport, raw: &SsdgReport) -> f64 {
    mono.mean_shifted() - raw.mean_shifted()
}

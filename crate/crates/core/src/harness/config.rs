use std::fmt::Write as _;
use std::str::FromStr;

use crate::data::SceneConfig;
use crate::error::{bail, Error, Result};
use crate::losses::{ClassWeighting, DEFAULT_LAMBDA_C, DEFAULT_LAMBDA_U, DEFAULT_SELECT_THRESHOLD};
use crate::model::SegNetConfig;
use crate::pseudolabel::DEFAULT_ENTROPY_THRESHOLD;
use crate::rebalance::{DEFAULT_EPSILON, DEFAULT_WEIGHT_CAP};
use crate::teacher_student::DEFAULT_EMA_MOMENTUM;

/// Learning rate of [`TrainConfig::desk_scale`].
pub const DESK_SCALE_LR: f64 = 0.03;

/// Every knob of a training run. Parsed from flat `key = value` text.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub data_seed: u64,
    pub num_classes: usize,
    pub image_size: usize,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub label_fraction: (u32, u32),
    pub scene_hue_spread: f64,
    pub scene_noise: f64,

    pub base_width: usize,
    pub depth: usize,
    pub embed_dim: usize,

    pub fuzzy_k: usize,
    pub entropy_threshold: f64,
    pub epsilon: f64,
    /// `None` leaves class weights unclipped.
    pub weight_cap: Option<f64>,
    pub class_weighting: ClassWeighting,
    pub lambda_u: f64,
    pub lambda_c: f64,
    pub ema_momentum: f64,
    pub select_threshold: f64,

    pub lr: f64,
    pub poly_power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub epochs: usize,
    pub crop_size: usize,
    pub mask_keep_prob: f64,
    /// Evaluate every this many iterations (0: only at the end).
    pub eval_every: usize,

    pub use_unsupervised: bool,
    pub use_fuzzy: bool,
    pub use_pixel_weight: bool,
    pub use_class_rebalance: bool,
    pub use_contrastive: bool,
    pub use_channel_masks: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_seed: 1,
            num_classes: 4,
            image_size: 64,
            train_scenes: 200,
            eval_scenes: 50,
            label_fraction: (1, 8),
            scene_hue_spread: SceneConfig::default().hue_spread,
            scene_noise: SceneConfig::default().noise_sigma,
            base_width: 16,
            depth: 3,
            embed_dim: 16,
            fuzzy_k: 2,
            entropy_threshold: DEFAULT_ENTROPY_THRESHOLD,
            epsilon: DEFAULT_EPSILON,
            weight_cap: Some(DEFAULT_WEIGHT_CAP),
            class_weighting: ClassWeighting::default(),
            lambda_u: DEFAULT_LAMBDA_U,
            lambda_c: DEFAULT_LAMBDA_C,
            ema_momentum: DEFAULT_EMA_MOMENTUM,
            select_threshold: DEFAULT_SELECT_THRESHOLD,
            lr: 0.001,
            poly_power: 0.9,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_labeled: 8,
            batch_unlabeled: 8,
            epochs: 80,
            crop_size: 48,
            mask_keep_prob: 0.5,
            eval_every: 0,
            use_unsupervised: true,
            use_fuzzy: true,
            use_pixel_weight: true,
            use_class_rebalance: true,
            use_contrastive: true,
            use_channel_masks: true,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => bail!(Config, "{key}: expected true/false, got {value:?}"),
    }
}

fn parse_fraction(key: &str, value: &str) -> Result<(u32, u32)> {
    let Some((a, b)) = value.split_once('/') else {
        bail!(Config, "{key}: expected a fraction like 1/8, got {value:?}");
    };
    Ok((parse(key, a.trim())?, parse(key, b.trim())?))
}

impl TrainConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(Config, "line {}: expected key = value, got {raw:?}", n + 1);
            };
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "data_seed" => self.data_seed = parse(key, v)?,
            "num_classes" => self.num_classes = parse(key, v)?,
            "image_size" => self.image_size = parse(key, v)?,
            "train_scenes" => self.train_scenes = parse(key, v)?,
            "eval_scenes" => self.eval_scenes = parse(key, v)?,
            "label_fraction" => self.label_fraction = parse_fraction(key, v)?,
            "scene_hue_spread" => self.scene_hue_spread = parse(key, v)?,
            "scene_noise" => self.scene_noise = parse(key, v)?,
            "base_width" => self.base_width = parse(key, v)?,
            "depth" => self.depth = parse(key, v)?,
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "fuzzy_k" => self.fuzzy_k = parse(key, v)?,
            "entropy_threshold" => self.entropy_threshold = parse(key, v)?,
            "epsilon" => self.epsilon = parse(key, v)?,
            "class_weighting" => {
                self.class_weighting = match v {
                    "pixel" => ClassWeighting::PixelArgmax,
                    "term" => ClassWeighting::PerClassTerm,
                    _ => bail!(Config, "class_weighting must be pixel or term, got {v:?}"),
                }
            }
            "weight_cap" => {
                self.weight_cap = match v {
                    "none" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "lambda_u" => self.lambda_u = parse(key, v)?,
            "lambda_c" => self.lambda_c = parse(key, v)?,
            "ema_momentum" => self.ema_momentum = parse(key, v)?,
            "select_threshold" => self.select_threshold = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "poly_power" => self.poly_power = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "batch_labeled" => self.batch_labeled = parse(key, v)?,
            "batch_unlabeled" => self.batch_unlabeled = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "crop_size" => self.crop_size = parse(key, v)?,
            "mask_keep_prob" => self.mask_keep_prob = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "use_unsupervised" => self.use_unsupervised = parse_bool(key, v)?,
            "use_fuzzy" => self.use_fuzzy = parse_bool(key, v)?,
            "use_pixel_weight" => self.use_pixel_weight = parse_bool(key, v)?,
            "use_class_rebalance" => self.use_class_rebalance = parse_bool(key, v)?,
            "use_contrastive" => self.use_contrastive = parse_bool(key, v)?,
            "use_channel_masks" => self.use_channel_masks = parse_bool(key, v)?,
            _ => bail!(Config, "unknown configuration key {key:?}"),
        }
        Ok(())
    }

    /// Canonical text form; `parse_str(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("data_seed", self.data_seed.to_string());
        kv("num_classes", self.num_classes.to_string());
        kv("image_size", self.image_size.to_string());
        kv("train_scenes", self.train_scenes.to_string());
        kv("eval_scenes", self.eval_scenes.to_string());
        kv("label_fraction", format!("{}/{}", self.label_fraction.0, self.label_fraction.1));
        kv("scene_hue_spread", format!("{:?}", self.scene_hue_spread));
        kv("scene_noise", format!("{:?}", self.scene_noise));
        kv("base_width", self.base_width.to_string());
        kv("depth", self.depth.to_string());
        kv("embed_dim", self.embed_dim.to_string());
        kv("fuzzy_k", self.fuzzy_k.to_string());
        kv("entropy_threshold", format!("{:?}", self.entropy_threshold));
        kv("epsilon", format!("{:?}", self.epsilon));
        kv(
            "weight_cap",
            self.weight_cap.map_or_else(|| "none".into(), |c| format!("{c:?}")),
        );
        kv("class_weighting", self.class_weighting.name().into());
        kv("lambda_u", format!("{:?}", self.lambda_u));
        kv("lambda_c", format!("{:?}", self.lambda_c));
        kv("ema_momentum", format!("{:?}", self.ema_momentum));
        kv("select_threshold", format!("{:?}", self.select_threshold));
        kv("lr", format!("{:?}", self.lr));
        kv("poly_power", format!("{:?}", self.poly_power));
        kv("momentum", format!("{:?}", self.momentum));
        kv("weight_decay", format!("{:?}", self.weight_decay));
        kv("batch_labeled", self.batch_labeled.to_string());
        kv("batch_unlabeled", self.batch_unlabeled.to_string());
        kv("epochs", self.epochs.to_string());
        kv("crop_size", self.crop_size.to_string());
        kv("mask_keep_prob", format!("{:?}", self.mask_keep_prob));
        kv("eval_every", self.eval_every.to_string());
        kv("use_unsupervised", self.use_unsupervised.to_string());
        kv("use_fuzzy", self.use_fuzzy.to_string());
        kv("use_pixel_weight", self.use_pixel_weight.to_string());
        kv("use_class_rebalance", self.use_class_rebalance.to_string());
        kv("use_contrastive", self.use_contrastive.to_string());
        kv("use_channel_masks", self.use_channel_masks.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.scene().validate().map_err(|e| Error::Config(e.to_string()))?;
        let nonneg = [
            ("lambda_u", self.lambda_u),
            ("lambda_c", self.lambda_c),
            ("lr", self.lr),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("scene_noise", self.scene_noise),
        ];
        if let Some((k, v)) = nonneg.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            bail!(Config, "{k} must be a finite nonnegative number, got {v}");
        }
        if self.fuzzy_k == 0 || self.fuzzy_k > self.num_classes {
            bail!(Config, "fuzzy_k {} must be in 1..={}", self.fuzzy_k, self.num_classes);
        }
        if !(self.entropy_threshold > 0.0 && self.entropy_threshold <= 1.0) {
            bail!(Config, "entropy_threshold {} outside (0, 1]", self.entropy_threshold);
        }
        if !(self.epsilon > 0.0) {
            bail!(Config, "epsilon must be positive");
        }
        if let Some(c) = self.weight_cap {
            if !(c > 0.0) {
                bail!(Config, "weight_cap must be positive or none");
            }
        }
        if !(self.ema_momentum > 0.0 && self.ema_momentum < 1.0) {
            bail!(Config, "ema_momentum {} outside (0, 1)", self.ema_momentum);
        }
        if !(0.0..1.0).contains(&self.select_threshold) {
            bail!(Config, "select_threshold {} outside [0, 1)", self.select_threshold);
        }
        if !(self.poly_power > 0.0) {
            bail!(Config, "poly_power must be positive");
        }
        if !(0.0..=1.0).contains(&self.mask_keep_prob) {
            bail!(Config, "mask_keep_prob {} outside [0, 1]", self.mask_keep_prob);
        }
        let (num, den) = self.label_fraction;
        if num == 0 || den == 0 || num > den {
            bail!(Config, "label_fraction {num}/{den} outside (0, 1]");
        }
        if self.train_scenes == 0 || self.eval_scenes == 0 || self.epochs == 0 {
            bail!(Config, "scene counts and epochs must be positive");
        }
        if self.batch_labeled == 0 || (self.use_unsupervised && self.batch_unlabeled == 0) {
            bail!(Config, "each batch needs at least one labelled and one unlabelled image");
        }
        if self.use_contrastive && !self.use_unsupervised {
            bail!(Config, "the contrastive term needs the unlabelled branch (use_unsupervised)");
        }
        if self.crop_size == 0 {
            bail!(Config, "crop_size must be positive");
        }
        if self.image_size % self.model().stride() != 0 || self.crop_size % self.model().stride() != 0 {
            bail!(
                Config,
                "image_size and crop_size must be multiples of {}",
                self.model().stride()
            );
        }
        Ok(())
    }

    pub fn model(&self) -> SegNetConfig {
        SegNetConfig {
            in_channels: 3,
            base_width: self.base_width,
            depth: self.depth,
            num_classes: self.num_classes,
            embed_dim: self.embed_dim,
        }
    }

    pub fn scene(&self) -> SceneConfig {
        let base = SceneConfig::default();
        let rarity = (1..self.num_classes)
            .map(|k| base.rarity.get(k - 1).copied().unwrap_or(0.5))
            .collect();
        SceneConfig {
            num_classes: self.num_classes,
            height: self.image_size,
            width: self.image_size,
            rarity,
            hue_spread: self.scene_hue_spread,
            noise_sigma: self.scene_noise,
            ..base
        }
    }

    /// The default benchmark with the learning rate raised to what a
    /// from-scratch network of this size needs within the epoch budget.
    pub fn desk_scale() -> Self {
        Self {
            lr: DESK_SCALE_LR,
            ..Self::default()
        }
    }

    /// Copy with every unlabelled-data term switched off.
    pub fn supervised_only(&self) -> Self {
        Self {
            use_unsupervised: false,
            use_contrastive: false,
            ..self.clone()
        }
    }

    /// Fuzzy support size in effect (1 when fuzzy labels are disabled).
    pub fn effective_k(&self) -> usize {
        if self.use_fuzzy {
            self.fuzzy_k
        } else {
            1
        }
    }
}

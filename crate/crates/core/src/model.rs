//! Small strided-conv encoder / bilinear decoder segmentation network with a
//! projection head.
//!
//! Stage `i` of the encoder is a stride-2 3×3 convolution to `base·2^i`
//! channels. The decoder walks back up: bilinear upsample, 3×3 convolution,
//! additive skip from the matching encoder stage. A 1×1 classifier runs at
//! half input resolution and its logits are bilinearly upsampled.

use rand_distr::{Distribution, Normal};

use crate::error::{bail, Result};
use crate::seeding::{stream_rng, Stream};
use crate::teacher_student::{ParameterStore, Role};
use crate::tensorkit::{Graph, Tensor, UpsampleMode, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SegNetConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    pub num_classes: usize,
    pub embed_dim: usize,
}

impl Default for SegNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            base_width: 16,
            depth: 3,
            num_classes: 4,
            embed_dim: 16,
        }
    }
}

impl SegNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.base_width == 0
            || self.depth == 0
            || self.num_classes == 0
            || self.embed_dim == 0
        {
            bail!(Config, "network dimensions must be positive: {self:?}");
        }
        if self.depth > 8 {
            bail!(Config, "depth {} is unreasonably large", self.depth);
        }
        if self.embed_dim > self.decoder_width() {
            bail!(
                Config,
                "embedding dimension {} exceeds decoder width {}",
                self.embed_dim,
                self.decoder_width()
            );
        }
        Ok(())
    }

    pub fn stage_width(&self, stage: usize) -> usize {
        self.base_width << stage
    }

    /// Channels of the encoder output.
    pub fn feature_width(&self) -> usize {
        self.stage_width(self.depth - 1)
    }

    /// Channels of the final decoder map fed to the heads.
    pub fn decoder_width(&self) -> usize {
        self.base_width
    }

    /// Input side lengths must be divisible by this for exact shift
    /// equivariance.
    pub fn stride(&self) -> usize {
        1 << self.depth
    }

    /// `(name, shape, fan_in)` of every parameter, in store order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut out = Vec::new();
        let mut cin = self.in_channels;
        for i in 0..self.depth {
            let cout = self.stage_width(i);
            out.push((format!("enc{i}.weight"), vec![cout, cin, 3, 3], cin * 9));
            out.push((format!("enc{i}.bias"), vec![cout], 0));
            cin = cout;
        }
        for i in (1..self.depth).rev() {
            let (from, to) = (self.stage_width(i), self.stage_width(i - 1));
            out.push((format!("dec{i}.weight"), vec![to, from, 3, 3], from * 9));
            out.push((format!("dec{i}.bias"), vec![to], 0));
        }
        let w = self.decoder_width();
        out.push(("cls.weight".into(), vec![self.num_classes, w, 1, 1], 0));
        out.push(("cls.bias".into(), vec![self.num_classes], 0));
        out.push(("proj.weight".into(), vec![self.embed_dim, w, 1, 1], w));
        out.push(("proj.bias".into(), vec![self.embed_dim], 0));
        out
    }
}

/// He-normal weights (variance `2/fan_in`), zero biases, zero classifier.
pub fn init_params(config: &SegNetConfig, seed: u64) -> Result<ParameterStore> {
    config.validate()?;
    let mut rng = stream_rng(seed, Stream::Init, 0);
    let mut store = ParameterStore::new(Role::Student);
    for (name, shape, fan_in) in config.layout() {
        let len: usize = shape.iter().product();
        let data = if fan_in == 0 {
            vec![0.0; len]
        } else {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            (0..len).map(|_| normal.sample(&mut rng)).collect()
        };
        store.insert(name, Tensor::new(&shape, data)?);
    }
    Ok(store)
}

/// Graph handles for every parameter of one network copy.
#[derive(Clone, Debug)]
pub struct BoundParams {
    entries: Vec<(String, Var)>,
}

impl BoundParams {
    /// Puts every tensor of `store` on the graph, as trainable leaves or as
    /// constants.
    pub fn bind(g: &mut Graph, store: &ParameterStore, trainable: bool) -> Self {
        let entries = store
            .iter()
            .map(|(n, t)| {
                let v = if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                };
                (n.to_string(), v)
            })
            .collect();
        Self { entries }
    }

    pub fn from_vars(names: &[String], vars: &[Var]) -> Self {
        Self {
            entries: names.iter().cloned().zip(vars.iter().copied()).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        match self.entries.iter().find(|(n, _)| n == name) {
            Some((_, v)) => Ok(*v),
            None => bail!(State, "parameter {name} is not initialized"),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), *v))
    }
}

/// Graph nodes produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct SegOutput {
    /// N×C×H×W at input resolution.
    pub logits: Var,
    /// Encoder output after the optional channel mask.
    pub features: Var,
    /// Final decoder map (N×base×H/2×W/2) consumed by both heads.
    pub decoded: Var,
}

fn conv(g: &mut Graph, p: &BoundParams, layer: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
    let w = p.get(&format!("{layer}.weight"))?;
    let b = p.get(&format!("{layer}.bias"))?;
    g.conv2d(x, w, Some(b), stride, pad)
}

/// Runs the network on an N×in×H×W batch. `feature_mask` (N×F) scales the
/// encoder output channels.
pub fn forward(
    g: &mut Graph,
    params: &BoundParams,
    config: &SegNetConfig,
    images: Var,
    feature_mask: Option<&Tensor>,
) -> Result<SegOutput> {
    let &[_, cin, h, w] = g.shape(images) else {
        bail!(Argument, "images must be N×C×H×W, got {:?}", g.shape(images));
    };
    if cin != config.in_channels {
        bail!(Argument, "{cin} input channels, network expects {}", config.in_channels);
    }
    let mut skips = Vec::with_capacity(config.depth);
    let mut x = images;
    for i in 0..config.depth {
        let y = conv(g, params, &format!("enc{i}"), x, 2, 1)?;
        x = g.relu(y);
        skips.push(x);
    }
    if let Some(mask) = feature_mask {
        x = g.scale_channels(x, mask.clone())?;
    }
    let features = x;
    for i in (1..config.depth).rev() {
        let skip = skips[i - 1];
        let (sh, sw) = (g.shape(skip)[2], g.shape(skip)[3]);
        let up = g.resize(x, sh, sw, UpsampleMode::Bilinear)?;
        let y = conv(g, params, &format!("dec{i}"), up, 1, 1)?;
        let y = g.add(y, skip)?;
        x = g.relu(y);
    }
    let decoded = x;
    let low = conv(g, params, "cls", decoded, 1, 0)?;
    let logits = g.resize(low, h, w, UpsampleMode::Bilinear)?;
    Ok(SegOutput {
        logits,
        features,
        decoded,
    })
}

/// 1×1 convolution + tanh on decoder features, upsampled to `(h, w)`.
pub fn project_embeddings(
    g: &mut Graph,
    params: &BoundParams,
    config: &SegNetConfig,
    decoded: Var,
    out_size: (usize, usize),
) -> Result<Var> {
    let pw = params.get("proj.weight")?;
    if g.shape(pw)[0] != config.embed_dim {
        bail!(
            Config,
            "projection produces {} dims, configuration asks for {}",
            g.shape(pw)[0],
            config.embed_dim
        );
    }
    let y = conv(g, params, "proj", decoded, 1, 0)?;
    let y = g.tanh(y);
    g.resize(y, out_size.0, out_size.1, UpsampleMode::Bilinear)
}

/// Softmax probabilities for a batch without recording gradients.
pub fn predict_probs(store: &ParameterStore, config: &SegNetConfig, images: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = BoundParams::bind(&mut g, store, false);
    let x = g.constant(images.clone());
    let out = forward(&mut g, &p, config, x, None)?;
    let probs = g.softmax(out.logits, 1)?;
    Ok(g.value(probs).clone())
}

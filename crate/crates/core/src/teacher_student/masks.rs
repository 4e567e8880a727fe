use rand::Rng;

use crate::error::{bail, Result};
use crate::seeding::{stream_rng, Stream};
use crate::tensorkit::Tensor;

/// Draws `m ~ Bernoulli(keep_prob)` per (image, channel) and returns the
/// pair `(m, 1 − m)`, each N×C.
pub fn complementary_channel_masks(
    batch: usize,
    channels: usize,
    keep_prob: f64,
    seed: u64,
) -> Result<(Tensor, Tensor)> {
    if batch == 0 || channels == 0 {
        bail!(Argument, "empty mask shape {batch}×{channels}");
    }
    if !(0.0..=1.0).contains(&keep_prob) {
        bail!(Config, "mask keep probability {keep_prob} outside [0, 1]");
    }
    let mut rng = stream_rng(seed, Stream::ChannelMask, 0);
    let m: Vec<f64> = (0..batch * channels)
        .map(|_| if rng.random_bool(keep_prob) { 1.0 } else { 0.0 })
        .collect();
    let inv = m.iter().map(|v| 1.0 - v).collect();
    Ok((
        Tensor::new(&[batch, channels], m)?,
        Tensor::new(&[batch, channels], inv)?,
    ))
}

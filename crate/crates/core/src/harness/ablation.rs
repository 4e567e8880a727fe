use std::fmt::{self, Write as _};
use std::io::Write;
use std::str::FromStr;

use super::config::TrainConfig;
use super::train::{run_training, Dataset, RunOptions, TrainOutcome};
use crate::error::{bail, Error, Result};

/// The component ablations: each removes one ingredient from the full method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Supervised cross-entropy only.
    Baseline,
    /// Hard (top-1) pseudo-labels instead of fuzzy ones.
    NoFuzzy,
    /// Every valid pixel weighted 1.
    NoPixelWeight,
    /// Uniform class weights.
    NoRebalance,
    /// No prototype contrastive term.
    NoContrastive,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Baseline,
        Variant::NoFuzzy,
        Variant::NoPixelWeight,
        Variant::NoRebalance,
        Variant::NoContrastive,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::NoFuzzy => "no_fuzzy",
            Variant::NoPixelWeight => "no_pixel_weight",
            Variant::NoRebalance => "no_rebalance",
            Variant::NoContrastive => "no_contrastive",
            Variant::Full => "full",
        }
    }

    /// `base` with this variant's toggles applied; all other settings kept.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let full = TrainConfig {
            use_unsupervised: true,
            use_fuzzy: true,
            use_pixel_weight: true,
            use_class_rebalance: true,
            use_contrastive: true,
            ..base.clone()
        };
        match self {
            Variant::Baseline => full.supervised_only(),
            Variant::NoFuzzy => TrainConfig { use_fuzzy: false, ..full },
            Variant::NoPixelWeight => TrainConfig {
                use_pixel_weight: false,
                ..full
            },
            Variant::NoRebalance => TrainConfig {
                use_class_rebalance: false,
                ..full
            },
            Variant::NoContrastive => TrainConfig {
                use_contrastive: false,
                ..full
            },
            Variant::Full => full,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match Variant::ALL.iter().find(|v| v.name() == s) {
            Some(v) => Ok(*v),
            None => bail!(Config, "unknown ablation variant {s:?}"),
        }
    }
}

/// One (variant, seed) training result.
#[derive(Clone, Debug)]
pub struct AblationRun {
    pub variant: Variant,
    pub seed: u64,
    pub outcome: TrainOutcome,
}

impl AblationRun {
    pub fn miou(&self) -> f64 {
        self.outcome.final_eval.row.miou
    }
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub runs: Vec<AblationRun>,
}

impl AblationReport {
    pub fn variants(&self) -> Vec<Variant> {
        let mut out: Vec<Variant> = Vec::new();
        for r in &self.runs {
            if !out.contains(&r.variant) {
                out.push(r.variant);
            }
        }
        out
    }

    /// Mean final mIoU and per-class IoU of a variant over its seeds.
    pub fn mean(&self, variant: Variant) -> Option<(f64, Vec<f64>)> {
        let runs: Vec<&AblationRun> = self.runs.iter().filter(|r| r.variant == variant).collect();
        let first = runs.first()?;
        let c = first.outcome.final_eval.row.iou.iou.len();
        let n = runs.len() as f64;
        let miou = runs.iter().map(|r| r.miou()).sum::<f64>() / n;
        let per_class = (0..c)
            .map(|k| runs.iter().map(|r| r.outcome.final_eval.row.iou.iou[k]).sum::<f64>() / n)
            .collect();
        Some((miou, per_class))
    }

    /// `variant,seed,miou,pixel_acc,iou_0..` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let c = self.runs.first().map_or(0, |r| r.outcome.final_eval.row.iou.iou.len());
        let mut header = String::from("variant,seed,miou,pixel_acc");
        for k in 0..c {
            let _ = write!(header, ",iou_{k}");
        }
        writeln!(w, "{header}")?;
        for r in &self.runs {
            let row = &r.outcome.final_eval.row;
            let mut line = format!("{},{},{:.6},{:.6}", r.variant, r.seed, row.miou, row.pixel_accuracy);
            for v in &row.iou.iou {
                let _ = write!(line, ",{v:.6}");
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Fixed-width table of per-variant means.
    pub fn table(&self) -> String {
        let mut s = format!("{:<16} {:>6} {:>8}  per-class IoU\n", "variant", "seeds", "mIoU");
        for v in self.variants() {
            let seeds = self.runs.iter().filter(|r| r.variant == v).count();
            let (m, pc) = self.mean(v).expect("variant has runs");
            let pcs: Vec<String> = pc.iter().map(|x| format!("{:.2}", 100.0 * x)).collect();
            let _ = writeln!(s, "{:<16} {:>6} {:>8.2}  {}", v.name(), seeds, 100.0 * m, pcs.join(" "));
        }
        s
    }
}

/// Trains every variant for every seed on a shared dataset. `base.seed` is
/// replaced by each entry of `seeds`.
pub fn run_ablation(
    base: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
    dataset: &Dataset,
    options: &RunOptions,
) -> Result<AblationReport> {
    if variants.is_empty() || seeds.is_empty() {
        bail!(Config, "ablation needs at least one variant and one seed");
    }
    let mut runs = Vec::with_capacity(variants.len() * seeds.len());
    for &seed in seeds {
        for &variant in variants {
            let cfg = TrainConfig {
                seed,
                ..variant.apply(base)
            };
            let split = dataset.split(&cfg)?;
            log::info!("ablation: {variant} seed {seed}");
            let outcome = run_training(&cfg, dataset, &split, options)?;
            runs.push(AblationRun { variant, seed, outcome });
        }
    }
    Ok(AblationReport { runs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_toggle_one_thing() {
        let base = TrainConfig::default();
        assert_eq!(Variant::Full.apply(&base), base);
        let b = Variant::Baseline.apply(&base);
        assert!(!b.use_unsupervised && !b.use_contrastive);
        assert_eq!(Variant::NoFuzzy.apply(&base).effective_k(), 1);
        assert!(!Variant::NoPixelWeight.apply(&base).use_pixel_weight);
        assert!(!Variant::NoRebalance.apply(&base).use_class_rebalance);
        assert!(!Variant::NoContrastive.apply(&base).use_contrastive);
        for v in Variant::ALL {
            assert!(v.apply(&base).validate().is_ok());
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("nope".parse::<Variant>().is_err());
    }
}

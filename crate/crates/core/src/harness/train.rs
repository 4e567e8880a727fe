use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;

use super::config::TrainConfig;
use super::optim::{poly_lr, Sgd};
use crate::data::{generate_scenes, make_split, DatasetSplit, LabelMap, SceneConfig, SyntheticScene};
use crate::error::{bail, Error, Result};
use crate::losses::{
    compute_prototypes, contrastive_loss, supervised_ce, total_loss_var, unsupervised_kl_with, LossBreakdown,
};
use crate::metrics::{update_confusion, ConfusionMatrix, EvalRow};
use crate::model::{forward, init_params, predict_probs, project_embeddings, BoundParams, SegNetConfig};
use crate::pseudolabel::{fuzzy_labels, normalized_entropy, PixelWeightMap};
use crate::rebalance::{class_frequencies, class_weights, ClassWeightVector};
use crate::seeding::{derive_seed, stream_rng, Stream};
use crate::teacher_student::{
    apply_augmentation, complementary_channel_masks, ema_update, AugmentationSpec, ParameterStore, Role,
};
use crate::tensorkit::{interchange, Graph, Tensor, IGNORE_INDEX};

/// Eval scenes are drawn from a seed stream disjoint from the training scenes.
const EVAL_SEED_OFFSET: u64 = 0x5eed_e7a1;
const EVAL_CHUNK: usize = 16;

/// Generated training and evaluation scenes.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub scene: SceneConfig,
    pub train: Vec<SyntheticScene>,
    pub eval: Vec<SyntheticScene>,
}

impl Dataset {
    pub fn generate(config: &TrainConfig) -> Result<Self> {
        let scene = config.scene();
        Ok(Self {
            train: generate_scenes(&scene, config.data_seed, config.train_scenes)?,
            eval: generate_scenes(&scene, config.data_seed ^ EVAL_SEED_OFFSET, config.eval_scenes)?,
            scene,
        })
    }

    /// Labelled/unlabelled partition for `config.seed`.
    pub fn split(&self, config: &TrainConfig) -> Result<DatasetSplit> {
        make_split(self.train.len(), config.label_fraction, config.seed)
    }
}

/// Evaluation summary attached to a record.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub row: EvalRow,
    pub confusion: ConfusionMatrix,
}

/// One optimizer step's log entry.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub lr: f64,
    pub losses: LossBreakdown,
    pub eval: Option<EvalSummary>,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub student: ParameterStore,
    pub teacher: ParameterStore,
    pub records: Vec<MetricsRecord>,
    /// Teacher evaluated on the eval scenes after the last step.
    pub final_eval: EvalSummary,
    pub max_iterations: usize,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Where a NaN abort writes the offending batch tensors.
    pub dump_dir: Option<PathBuf>,
    /// Stop after this many iterations (the schedule still spans the full run).
    pub iteration_limit: Option<usize>,
}

/// Total optimizer steps: epochs over the unlabelled pool (the labelled
/// pool when nothing is unlabelled).
pub fn max_iterations(config: &TrainConfig, split: &DatasetSplit) -> usize {
    let per_epoch = if split.unlabeled.is_empty() {
        split.labeled.len().div_ceil(config.batch_labeled)
    } else {
        split.unlabeled.len().div_ceil(config.batch_unlabeled)
    };
    config.epochs * per_epoch.max(1)
}

/// Endless sequence of epoch-wise shuffles of a pool.
struct CyclicSampler {
    pool: Vec<usize>,
    seed: u64,
    stream: Stream,
    epoch: Option<(u64, Vec<usize>)>,
}

impl CyclicSampler {
    fn new(pool: &[usize], seed: u64, stream: Stream) -> Self {
        Self {
            pool: pool.to_vec(),
            seed,
            stream,
            epoch: None,
        }
    }

    fn at(&mut self, k: usize) -> usize {
        let n = self.pool.len();
        let e = (k / n) as u64;
        if self.epoch.as_ref().map(|(ep, _)| *ep) != Some(e) {
            let mut order = self.pool.clone();
            order.shuffle(&mut stream_rng(self.seed, self.stream, e));
            self.epoch = Some((e, order));
        }
        self.epoch.as_ref().expect("set above").1[k % n]
    }

    fn batch(&mut self, iter: usize, size: usize) -> Vec<usize> {
        (iter * size..(iter + 1) * size).map(|k| self.at(k)).collect()
    }
}

/// Stacks H×W×3 images in [0, 1] into a centred N×3×H×W batch.
pub fn to_input(images: &[&Tensor]) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut dims = None;
    for img in images {
        let &[h, w, c] = img.shape() else {
            bail!(Argument, "image must be H×W×C, got {:?}", img.shape());
        };
        if *dims.get_or_insert((h, w, c)) != (h, w, c) {
            bail!(Argument, "images in a batch must share a size");
        }
        for k in 0..c {
            data.extend((0..h * w).map(|p| img.data()[p * c + k] - 0.5));
        }
    }
    let Some((h, w, c)) = dims else {
        bail!(Argument, "empty batch");
    };
    Tensor::new(&[images.len(), c, h, w], data)
}

/// Softmax outputs of the network for every scene, in chunks.
pub fn predict_scenes(store: &ParameterStore, model: &SegNetConfig, scenes: &[SyntheticScene]) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(scenes.len());
    for chunk in scenes.chunks(EVAL_CHUNK) {
        let imgs: Vec<&Tensor> = chunk.iter().map(|s| &s.image).collect();
        let probs = predict_probs(store, model, &to_input(&imgs)?)?;
        out.extend((0..chunk.len()).map(|i| probs.index_first(i)));
    }
    Ok(out)
}

/// Per-pixel argmax of a C×H×W probability map.
pub fn argmax_map(probs: &Tensor) -> Result<LabelMap> {
    let &[c, h, w] = probs.shape() else {
        bail!(Argument, "expected C×H×W probabilities, got {:?}", probs.shape());
    };
    let hw = h * w;
    let labels = (0..hw)
        .map(|q| {
            let mut best = 0;
            for k in 1..c {
                if probs.data()[k * hw + q] > probs.data()[best * hw + q] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::new(h, w, labels)
}

/// Confusion matrix and IoU row of `store` on `scenes`.
pub fn evaluate(
    store: &ParameterStore,
    model: &SegNetConfig,
    scenes: &[SyntheticScene],
    label: &str,
) -> Result<EvalSummary> {
    let mut cm = ConfusionMatrix::new(model.num_classes);
    for (probs, scene) in predict_scenes(store, model, scenes)?.iter().zip(scenes) {
        let pred = argmax_map(probs)?.to_indices();
        update_confusion(&mut cm, &pred, &scene.labels.to_indices(), IGNORE_INDEX)?;
    }
    Ok(EvalSummary {
        row: EvalRow::from_confusion(label, &cm)?,
        confusion: cm,
    })
}

/// Entropy map (H×W) of each scene's prediction.
pub fn entropy_maps(probs: &[Tensor]) -> Result<Vec<Tensor>> {
    probs.iter().map(normalized_entropy).collect()
}

/// Tensors of the step that produced a non-finite loss.
struct Snapshot {
    tensors: Vec<(&'static str, Tensor)>,
}

fn dump_snapshot(dir: &Path, iter: usize, snap: &Snapshot) -> Result<PathBuf> {
    let dir = dir.join(format!("nan_iter{iter}"));
    fs::create_dir_all(&dir)?;
    for (name, t) in &snap.tensors {
        let f = fs::File::create(dir.join(format!("{name}.ftns")))?;
        interchange::write_tensor(std::io::BufWriter::new(f), t, interchange::DType::F64)?;
    }
    Ok(dir)
}

struct StepOutput {
    losses: LossBreakdown,
    grads: Vec<Tensor>,
}

/// Inputs assembled for the unlabelled branch of one step.
struct UnlabeledBatch {
    strong: Tensor,
    teacher_probs: Tensor,
    valid: Tensor,
}

fn prepare_unlabeled(
    config: &TrainConfig,
    dataset: &Dataset,
    teacher: &ParameterStore,
    ids: &[usize],
    iter: usize,
) -> Result<UnlabeledBatch> {
    let model = config.model();
    let n = ids.len();
    let weak_spec = AugmentationSpec::weak();
    let strong_spec = AugmentationSpec::strong((config.crop_size, config.crop_size));
    let mut weak = Vec::with_capacity(n);
    for (j, &id) in ids.iter().enumerate() {
        let seed = derive_seed(config.seed, Stream::WeakAugment, (iter * n + j) as u64);
        weak.push(apply_augmentation(&dataset.train[id].image, None, &weak_spec, seed)?.image);
    }
    let weak_refs: Vec<&Tensor> = weak.iter().collect();
    let teacher_probs = predict_probs(teacher, &model, &to_input(&weak_refs)?)?;

    let mut strong = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for (j, img) in weak.iter().enumerate() {
        let seed = derive_seed(config.seed, Stream::StrongAugment, (iter * n + j) as u64);
        let view = apply_augmentation(img, None, &strong_spec, seed)?;
        targets.push(view.warp.warp_planes(&teacher_probs.index_first(j))?);
        valid.push(view.valid);
        strong.push(view.image);
    }
    let strong_refs: Vec<&Tensor> = strong.iter().collect();
    Ok(UnlabeledBatch {
        strong: to_input(&strong_refs)?,
        teacher_probs: Tensor::stack(&targets)?,
        valid: Tensor::stack(&valid)?,
    })
}

#[allow(clippy::too_many_arguments)]
fn student_step(
    config: &TrainConfig,
    student: &ParameterStore,
    labeled_x: &Tensor,
    labels: &[usize],
    unlabeled: Option<&UnlabeledBatch>,
    iter: usize,
    snapshot: &mut Snapshot,
) -> Result<StepOutput> {
    let model = config.model();
    let mut g = Graph::new();
    let params = BoundParams::bind(&mut g, student, true);

    let xl = g.constant(labeled_x.clone());
    let out_l = forward(&mut g, &params, &model, xl, None)?;
    let probs_l = g.softmax(out_l.logits, 1)?;
    let ls = supervised_ce(&mut g, probs_l, labels)?;

    let (mut lu_val, mut lc_val, mut n_valid) = (0.0, 0.0, 0);
    let (mut lu, mut lc) = (None, None);
    if let Some(ub) = unlabeled {
        let n = ub.strong.shape()[0];
        let (h, w) = (ub.strong.shape()[2], ub.strong.shape()[3]);
        // Both views see the same strong image and target; only the
        // encoder channel masks differ.
        let xs = Tensor::concat(&[ub.strong.clone(), ub.strong.clone()])?;
        let target = Tensor::concat(&[ub.teacher_probs.clone(), ub.teacher_probs.clone()])?;
        let valid = Tensor::concat(&[ub.valid.clone(), ub.valid.clone()])?;
        let mask = if config.use_channel_masks {
            let mseed = derive_seed(config.seed, Stream::ChannelMask, iter as u64);
            let (m, inv) = complementary_channel_masks(n, model.feature_width(), config.mask_keep_prob, mseed)?;
            Some(Tensor::concat(&[m, inv])?)
        } else {
            None
        };

        let fuzzy = fuzzy_labels(&target, config.effective_k())?;
        let weights = PixelWeightMap::from_teacher(&target, config.entropy_threshold)?.masked(&valid)?;
        let selection = weights.weight.clone();
        let weights = if config.use_pixel_weight {
            weights
        } else {
            weights.without_uncertainty()
        };
        let class_w = if config.use_class_rebalance {
            let single = fuzzy_labels(&ub.teacher_probs, config.effective_k())?;
            let freq = class_frequencies(&single, &ub.valid)?;
            let cw = class_weights(&freq, config.epsilon)?;
            match config.weight_cap {
                Some(cap) => cw.capped(cap),
                None => cw,
            }
        } else {
            ClassWeightVector::uniform(model.num_classes)
        };

        let xs_var = g.constant(xs.clone());
        let out_s = forward(&mut g, &params, &model, xs_var, mask.as_ref())?;
        let probs_s = g.softmax(out_s.logits, 1)?;
        let (term, nv) = unsupervised_kl_with(&mut g, &fuzzy, probs_s, &weights, &class_w, config.class_weighting)?;
        n_valid = nv / 2;
        lu_val = g.value(term.value).item();
        lu = Some(term.value);

        if config.use_contrastive {
            let emb = project_embeddings(&mut g, &params, &model, out_s.decoded, (h, w))?;
            let protos = compute_prototypes(
                g.value(emb),
                &fuzzy.argmax(),
                &selection,
                config.select_threshold,
                model.num_classes,
            )?;
            let term = contrastive_loss(&mut g, emb, &protos)?;
            lc_val = g.value(term.value).item();
            lc = Some(term.value);
        }
        snapshot.tensors.push(("strong_images", xs));
        snapshot.tensors.push(("teacher_probs", target));
        snapshot.tensors.push(("valid_mask", valid));
    }

    let ls_val = g.value(ls.value).item();
    let total = total_loss_var(&mut g, ls.value, lu, lc, config.lambda_u, config.lambda_c)?;
    let losses = LossBreakdown {
        supervised: ls_val,
        unsupervised: lu_val,
        contrastive: lc_val,
        total: g.value(total).item(),
        n_valid,
        lambda_u: config.lambda_u,
        lambda_c: config.lambda_c,
    };
    snapshot.tensors.push(("labeled_images", labeled_x.clone()));
    snapshot.tensors.push((
        "labels",
        Tensor::from_vec(labels.iter().map(|&l| if l == IGNORE_INDEX { -1.0 } else { l as f64 }).collect()),
    ));
    if ![losses.supervised, losses.unsupervised, losses.contrastive, losses.total]
        .iter()
        .all(|v| v.is_finite())
    {
        return Ok(StepOutput { losses, grads: Vec::new() });
    }
    let grads = g.backward(total)?;
    let grads = params
        .iter()
        .zip(student.iter())
        .map(|((_, v), (_, t))| grads.get_or_zeros(v, t.shape()))
        .collect();
    Ok(StepOutput { losses, grads })
}

/// Mean-teacher training with fuzzy pseudo-labels. Every random choice is
/// derived from `config.seed`, so identical inputs give identical runs.
pub fn run_training(
    config: &TrainConfig,
    dataset: &Dataset,
    split: &DatasetSplit,
    options: &RunOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    if split.len() != dataset.train.len() {
        bail!(Argument, "split covers {} scenes, dataset has {}", split.len(), dataset.train.len());
    }
    let model = config.model();
    let use_unlabeled = config.use_unsupervised && !split.unlabeled.is_empty();
    let start = Instant::now();
    let mut student = init_params(&model, config.seed)?;
    let mut teacher = student.clone_as(Role::Teacher);
    let mut opt = Sgd::new(&student, config.momentum, config.weight_decay);
    let max_iter = max_iterations(config, split);
    let run_iters = options.iteration_limit.map_or(max_iter, |l| l.min(max_iter));

    let mut lab_sampler = CyclicSampler::new(&split.labeled, config.seed, Stream::LabeledBatch);
    let mut unl_sampler = CyclicSampler::new(&split.unlabeled, config.seed, Stream::UnlabeledBatch);
    let weak_spec = AugmentationSpec::weak();
    let mut records = Vec::with_capacity(run_iters);

    for iter in 0..run_iters {
        let lr = poly_lr(config.lr, iter, max_iter, config.poly_power);
        let ids = lab_sampler.batch(iter, config.batch_labeled);
        let mut images = Vec::with_capacity(ids.len());
        let mut labels = Vec::new();
        for (j, &id) in ids.iter().enumerate() {
            let k = (iter * config.batch_labeled + j) as u64;
            let seed = derive_seed(config.seed, Stream::LabeledBatch, k | 1 << 48);
            let s = &dataset.train[id];
            let view = apply_augmentation(&s.image, Some(&s.labels), &weak_spec, seed)?;
            labels.extend(view.labels.expect("labels were given").to_indices());
            images.push(view.image);
        }
        let refs: Vec<&Tensor> = images.iter().collect();
        let labeled_x = to_input(&refs)?;

        let unlabeled = if use_unlabeled {
            let uids = unl_sampler.batch(iter, config.batch_unlabeled);
            Some(prepare_unlabeled(config, dataset, &teacher, &uids, iter)?)
        } else {
            None
        };

        let mut snapshot = Snapshot { tensors: Vec::new() };
        let dumped = |snapshot: &Snapshot| -> Result<String> {
            Ok(match &options.dump_dir {
                Some(d) => format!("; batch dumped to {}", dump_snapshot(d, iter, snapshot)?.display()),
                None => String::new(),
            })
        };
        if let Some(ub) = unlabeled.as_ref().filter(|ub| ub.teacher_probs.data().iter().any(|v| !v.is_finite())) {
            snapshot.tensors.push(("strong_images", ub.strong.clone()));
            snapshot.tensors.push(("teacher_probs", ub.teacher_probs.clone()));
            return Err(Error::Numerical(format!(
                "teacher predictions became non-finite at iteration {iter}{}",
                dumped(&snapshot)?
            )));
        }
        let step = student_step(config, &student, &labeled_x, &labels, unlabeled.as_ref(), iter, &mut snapshot)?;
        if step.grads.is_empty() {
            return Err(Error::Numerical(format!(
                "non-finite loss at iteration {iter}: L_s={} L_u={} L_c={}{}",
                step.losses.supervised,
                step.losses.unsupervised,
                step.losses.contrastive,
                dumped(&snapshot)?
            )));
        }
        let teacher_before = teacher.checksum();
        opt.step(&mut student, &step.grads, lr)?;
        debug_assert_eq!(teacher.checksum(), teacher_before);
        if let Some((name, _)) = student.iter().find(|(_, t)| t.data().iter().any(|v| !v.is_finite())) {
            return Err(Error::Numerical(format!(
                "parameter {name} became non-finite at iteration {iter} (lr {lr:.3e}){}",
                dumped(&snapshot)?
            )));
        }
        ema_update(&mut teacher, &student, config.ema_momentum)?;

        let eval = if config.eval_every > 0 && (iter + 1) % config.eval_every == 0 && iter + 1 < run_iters {
            Some(evaluate(&teacher, &model, &dataset.eval, "eval")?)
        } else {
            None
        };
        if iter % 100 == 0 {
            log::info!(
                "iter {iter}/{max_iter} lr {lr:.3e} L_s {:.4} L_u {:.4} L_c {:.4} total {:.4}",
                step.losses.supervised,
                step.losses.unsupervised,
                step.losses.contrastive,
                step.losses.total
            );
        }
        records.push(MetricsRecord {
            iteration: iter,
            lr,
            losses: step.losses,
            eval,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }

    let final_eval = evaluate(&teacher, &model, &dataset.eval, "eval")?;
    if let Some(last) = records.last_mut() {
        last.eval = Some(final_eval.clone());
    }
    Ok(TrainOutcome {
        student,
        teacher,
        records,
        final_eval,
        max_iterations: max_iter,
    })
}

/// Builds the dataset and split from `config` and trains.
pub fn train_from_config(config: &TrainConfig, options: &RunOptions) -> Result<(Dataset, TrainOutcome)> {
    let dataset = Dataset::generate(config)?;
    let split = dataset.split(config)?;
    let outcome = run_training(config, &dataset, &split, options)?;
    Ok((dataset, outcome))
}

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::classifier::{Classifier, ClassifierMode};
use super::config::{ClassifierConfig, TrainConfig};
use crate::align::{alignment_loss_graph, Origin};
use crate::data::{batch_iter, FeatureDataset, Provenance, SemanticSpace};
use crate::disentangle::Disentangler;
use crate::error::{Error, Result};
use crate::generator::{standard_noise, FeatureGenerator};
use crate::numerics::{AdamState, Graph, Matrix, Parameters, Var};

/// Independent random stream for one purpose within a stage.
pub(crate) fn stream(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Which auxiliary terms join the moment-matching loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossSet {
    /// Relationship alignment.
    pub alignment: bool,
    /// Disentanglement; alignment then runs on the related features instead
    /// of the raw ones.
    pub disentangle: bool,
}

/// Loss values of one generator step (the weighted sum is `total`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub mmd: f64,
    pub disentangle: f64,
    pub align: f64,
    pub total: f64,
}

pub struct TrainedGenerator {
    pub generator: Box<dyn FeatureGenerator>,
    pub disentangler: Option<Disentangler>,
    /// One entry per optimizer step.
    pub history: Vec<StepLosses>,
}

fn check_finite(value: f64, step: usize, what: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            step,
            what: format!("{what} = {value}"),
        })
    }
}

/// Cross-entropy training of `classifier` on every row of `data` with
/// momentum SGD. Returns the mean loss of each epoch.
pub fn fit_classifier(
    classifier: &mut Classifier,
    data: &FeatureDataset,
    epochs: usize,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut sgd = cfg.optimizer()?;
    let mut curve = Vec::with_capacity(epochs);
    let mut step = 0;
    for epoch in 0..epochs {
        let mut sum = 0.0;
        let batches = batch_iter(data.len(), cfg.batch_size, seed.wrapping_add(epoch as u64))?;
        for batch in &batches {
            step += 1;
            let mut g = Graph::new();
            let x = g.constant(data.features().select_rows(batch)?);
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels()[i]).collect();
            let logits = classifier.forward(&mut g, x)?;
            let loss = g.cross_entropy(logits, &labels)?;
            let value = g.scalar(loss);
            check_finite(value, step, "classifier loss")?;
            sum += value;
            g.backward(loss)?;
            classifier.zero_grad();
            g.accumulate_into(classifier.params_mut());
            sgd.step(classifier.params_mut())?;
        }
        curve.push(sum / batches.len().max(1) as f64);
    }
    Ok(curve)
}

/// Trains a head over the seen classes on real seen features.
pub fn pretrain_classifier(
    train: &FeatureDataset,
    space: &SemanticSpace,
    mode: ClassifierMode,
    cfg: &TrainConfig,
) -> Result<(Classifier, Vec<f64>)> {
    if train.is_empty() {
        return Err(Error::Validation("classifier pretraining needs at least one row".into()));
    }
    train.validate(space)?;
    if let Some(i) = (0..train.len()).find(|&i| !space.is_seen(train.labels()[i]) || train.provenance()[i] != Provenance::Real) {
        return Err(Error::Validation(format!(
            "row {i}: pretraining accepts only real seen features, found {} {}",
            train.provenance()[i],
            space.name(train.labels()[i])
        )));
    }
    let mut classifier = Classifier::new(mode, train.dim(), space, cfg.seed ^ 0xC1A5)?;
    let curve = fit_classifier(
        &mut classifier,
        train,
        cfg.classifier.pretrain_epochs,
        &cfg.classifier,
        cfg.seed.wrapping_mul(31).wrapping_add(1),
    )?;
    Ok((classifier, curve))
}

/// `per_class` rows for each class in `classes`, each with its own noise.
pub fn synthesize(
    generator: &dyn FeatureGenerator,
    space: &SemanticSpace,
    classes: &[usize],
    per_class: usize,
    seed: u64,
) -> Result<FeatureDataset> {
    if per_class == 0 {
        return Err(Error::param("per_class must be at least 1"));
    }
    let labels: Vec<usize> = classes.iter().flat_map(|&c| std::iter::repeat_n(c, per_class)).collect();
    let semantic = space.rows_for(&labels)?;
    let features = generator.sample(&semantic, &mut ChaCha8Rng::seed_from_u64(seed))?;
    FeatureDataset::tagged(features, labels, Provenance::Synthetic, space)
}

/// Synthetic features for every unseen class.
pub fn synthesize_unseen(
    generator: &dyn FeatureGenerator,
    space: &SemanticSpace,
    per_class: usize,
    seed: u64,
) -> Result<FeatureDataset> {
    synthesize(generator, space, &space.unseen_ids().collect::<Vec<_>>(), per_class, seed)
}

/// Draws `count` row indices from `pool`, without replacement when possible.
fn draw(pool: &[usize], count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if pool.len() >= count {
        index::sample(rng, pool.len(), count).into_iter().map(|i| pool[i]).collect()
    } else {
        (0..count).map(|_| *pool.choose(rng).expect("non-empty pool")).collect()
    }
}

/// Trains `generator` (and, when disentanglement is on, a fresh
/// disentangler) on real seen features with Adam.
///
/// Each step matches a group of seen classes class by class with MMD. With
/// auxiliary terms on, synthetic unseen rows are generated as well and the
/// real, synthetic-seen and synthetic-unseen rows together feed alignment
/// and disentanglement, weighted by `lambda`.
pub fn train_generator(
    mut generator: Box<dyn FeatureGenerator>,
    train: &FeatureDataset,
    space: &SemanticSpace,
    cfg: &TrainConfig,
    losses: LossSet,
    seed: u64,
) -> Result<TrainedGenerator> {
    cfg.validate()?;
    train.validate_for_generator(space)?;
    if generator.semantic_dim() != space.dim() || generator.output_dim() != train.dim() {
        return Err(Error::Dimension {
            op: "train_generator",
            left: (generator.semantic_dim(), generator.output_dim()),
            right: (space.dim(), train.dim()),
        });
    }
    let gc = &cfg.generator;
    let by_class = train.indices_by_class(space.num_classes());
    let classes: Vec<usize> = space.seen_ids().filter(|&c| !by_class[c].is_empty()).collect();
    if classes.is_empty() {
        return Err(Error::Validation("generator training needs real seen features".into()));
    }
    let aux = losses.alignment || losses.disentangle;
    let mut disentangler = if losses.disentangle {
        Some(Disentangler::new(train.dim(), space.dim(), cfg.disentangle_config(), seed ^ 0xD15E)?)
    } else {
        None
    };
    let align = cfg.align_config();
    let unseen: Vec<usize> = space.unseen_ids().collect();
    let unseen_labels: Vec<usize> = if aux {
        unseen.iter().flat_map(|&c| std::iter::repeat_n(c, gc.unseen_per_class)).collect()
    } else {
        Vec::new()
    };

    let mut batch_rng = stream(seed, 1);
    let mut noise_rng = stream(seed, 2);
    let mut unseen_rng = stream(seed, 3);
    let mut dropout_rng = stream(seed, 4);
    let mut adam = AdamState::new(gc.learning_rate)?;
    let mut history = Vec::new();
    let mut order = classes.clone();

    for _ in 0..gc.epochs {
        order.shuffle(&mut batch_rng);
        for group in order.chunks(gc.classes_per_step) {
            let step = history.len() + 1;
            let real_idx: Vec<usize> = group
                .iter()
                .flat_map(|&c| draw(&by_class[c], gc.real_per_class, &mut batch_rng))
                .collect();
            let seen_labels: Vec<usize> = real_idx.iter().map(|&i| train.labels()[i]).collect();
            let n_seen = seen_labels.len();
            let mut semantic = space.rows_for(&seen_labels)?;
            let mut noise = standard_noise(n_seen, generator.noise_dim(), &mut noise_rng);
            if aux {
                semantic = semantic.vstack(&space.rows_for(&unseen_labels)?)?;
                noise = noise.vstack(&standard_noise(unseen_labels.len(), generator.noise_dim(), &mut unseen_rng))?;
            }

            let mut g = Graph::new();
            let a = g.constant(semantic);
            let z = g.constant(noise);
            let out = generator.forward(&mut g, a, z)?;
            let synth_seen = g.slice_rows(out, 0, n_seen)?;
            let real = g.constant(train.features().select_rows(&real_idx)?);

            let mmd = if gc.pooled_mmd {
                g.mmd(real, synth_seen, &cfg.mmd.bandwidths)?
            } else {
                let mut acc: Option<Var> = None;
                let per = gc.real_per_class;
                for k in 0..group.len() {
                    let r = g.slice_rows(real, k * per, (k + 1) * per)?;
                    let s = g.slice_rows(synth_seen, k * per, (k + 1) * per)?;
                    let term = g.mmd(r, s, &cfg.mmd.bandwidths)?;
                    acc = Some(match acc {
                        Some(prev) => g.add(prev, term)?,
                        None => term,
                    });
                }
                let sum = acc.expect("at least one class per step");
                g.scale(sum, 1.0 / group.len() as f64)
            };

            let mut record = StepLosses {
                mmd: g.scalar(mmd),
                ..Default::default()
            };
            let total = if aux {
                let synth_unseen = g.slice_rows(out, n_seen, n_seen + unseen_labels.len())?;
                let both = g.concat_rows(real, synth_seen)?;
                let x_all = g.concat_rows(both, synth_unseen)?;
                let labels: Vec<usize> = seen_labels.iter().chain(&seen_labels).chain(&unseen_labels).copied().collect();
                let origins: Vec<Origin> = std::iter::repeat_n(Origin::RealSeen, n_seen)
                    .chain(std::iter::repeat_n(Origin::SyntheticSeen, n_seen))
                    .chain(std::iter::repeat_n(Origin::SyntheticUnseen, unseen_labels.len()))
                    .collect();
                let (related, dis_loss) = match &disentangler {
                    Some(d) => {
                        let terms = d.losses(&mut g, x_all, &labels, space, Some(&mut dropout_rng))?;
                        record.disentangle = g.scalar(terms.total);
                        (terms.xhat, Some(terms.total))
                    }
                    None => (x_all, None),
                };
                let mut aux_loss = dis_loss;
                if losses.alignment {
                    let la = alignment_loss_graph(&mut g, related, &labels, &origins, space, &align)?;
                    record.align = g.scalar(la);
                    aux_loss = Some(match aux_loss {
                        Some(d) => g.add(d, la)?,
                        None => la,
                    });
                }
                let weighted = g.scale(aux_loss.expect("auxiliary term present"), cfg.lambda);
                g.add(mmd, weighted)?
            } else {
                mmd
            };
            record.total = g.scalar(total);
            check_finite(record.total, step, "generator loss")?;

            g.backward(total)?;
            generator.zero_grad();
            g.accumulate_into(generator.params_mut());
            match disentangler.as_mut() {
                Some(d) => {
                    d.zero_grad();
                    g.accumulate_into(d.params_mut());
                    adam.step(generator.params_mut().into_iter().chain(d.params_mut()))?;
                }
                None => adam.step(generator.params_mut())?,
            }
            history.push(record);
        }
    }
    Ok(TrainedGenerator {
        generator,
        disentangler,
        history,
    })
}

/// Expands `classifier` to every class and fine-tunes it on real seen plus
/// synthetic unseen features (plus synthetic seen ones when given).
pub fn retrain_classifier(
    classifier: &Classifier,
    real_seen: &FeatureDataset,
    synthetic_unseen: &FeatureDataset,
    synthetic_seen: Option<&FeatureDataset>,
    space: &SemanticSpace,
    cfg: &TrainConfig,
) -> Result<(Classifier, Vec<f64>)> {
    if synthetic_unseen.is_empty() {
        return Err(Error::Validation("classifier fine-tuning needs synthetic unseen features".into()));
    }
    let mut union = real_seen.concat(synthetic_unseen)?;
    if let Some(extra) = synthetic_seen {
        union = union.concat(extra)?;
    }
    union.validate(space)?;
    let mut out = classifier.clone();
    out.expand(space)?;
    let curve = fit_classifier(
        &mut out,
        &union,
        cfg.classifier.finetune_epochs,
        &cfg.classifier,
        cfg.seed.wrapping_mul(31).wrapping_add(2),
    )?;
    Ok((out, curve))
}

/// Mean row of each class; classes without rows stay zero.
pub fn class_means(features: &Matrix, labels: &[usize], num_classes: usize) -> Matrix {
    let mut sums = Matrix::zeros(num_classes, features.cols());
    let mut counts = vec![0usize; num_classes];
    for (r, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (o, &v) in sums.row_mut(l).iter_mut().zip(features.row(r)) {
            *o += v;
        }
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            sums.row_mut(c).iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    sums
}

use serde::{Deserialize, Serialize};

use super::classifier::Classifier;
use crate::data::{FeatureDataset, Group, SemanticSpace};
use crate::error::{Error, Result};

/// `2·s·u/(s+u)`, zero when either argument is zero. Units are whatever the
/// inputs use (fractions or percentages).
pub fn harmonic_mean(p_seen: f64, p_unseen: f64) -> Result<f64> {
    if !(p_seen >= 0.0) || !(p_unseen >= 0.0) {
        return Err(Error::param(format!(
            "harmonic mean needs nonnegative inputs, got ({p_seen}, {p_unseen})"
        )));
    }
    if p_seen == 0.0 || p_unseen == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * p_seen * p_unseen / (p_seen + p_unseen))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: String,
    pub group: Group,
    pub correct: usize,
    pub total: usize,
    /// `None` when the class has no test samples.
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GzslReport {
    pub per_class: Vec<ClassAccuracy>,
    pub seen_mean: f64,
    pub unseen_mean: f64,
    pub hm: f64,
    /// Classes left out of their group mean for lack of test samples.
    pub excluded: Vec<String>,
}

fn group_mean(per_class: &[ClassAccuracy], group: Group) -> f64 {
    let values: Vec<f64> = per_class
        .iter()
        .filter(|c| c.group == group)
        .filter_map(|c| c.accuracy)
        .collect();
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Generalized zero-shot evaluation: every sample is classified among all
/// classes and accuracy is averaged per class, then per group.
pub fn evaluate_gzsl(classifier: &Classifier, test: &FeatureDataset, space: &SemanticSpace) -> Result<GzslReport> {
    if classifier.num_classes() != space.num_classes() {
        return Err(Error::State(format!(
            "classifier covers {} classes but evaluation needs all {}",
            classifier.num_classes(),
            space.num_classes()
        )));
    }
    test.validate(space)?;
    let predictions = classifier.predict(test.features())?;
    let mut correct = vec![0usize; space.num_classes()];
    let mut total = vec![0usize; space.num_classes()];
    for (&label, &pred) in test.labels().iter().zip(&predictions) {
        total[label] += 1;
        if label == pred {
            correct[label] += 1;
        }
    }
    let mut excluded = Vec::new();
    let per_class: Vec<ClassAccuracy> = (0..space.num_classes())
        .map(|c| {
            let accuracy = (total[c] > 0).then(|| correct[c] as f64 / total[c] as f64);
            if accuracy.is_none() {
                log::warn!("class {} has no test samples; excluded from its group mean", space.name(c));
                excluded.push(space.name(c).to_string());
            }
            ClassAccuracy {
                class: space.name(c).to_string(),
                group: if space.is_seen(c) { Group::Seen } else { Group::Unseen },
                correct: correct[c],
                total: total[c],
                accuracy,
            }
        })
        .collect();
    let seen_mean = group_mean(&per_class, Group::Seen);
    let unseen_mean = group_mean(&per_class, Group::Unseen);
    Ok(GzslReport {
        hm: harmonic_mean(seen_mean, unseen_mean)?,
        per_class,
        seen_mean,
        unseen_mean,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Provenance, ToySpaceSpec};
    use crate::numerics::Matrix;
    use crate::pipeline::classifier::ClassifierMode;
    use proptest::prelude::*;

    #[test]
    fn harmonic_mean_examples() {
        assert!((harmonic_mean(41.5, 15.3).unwrap() - 22.357_394_366_197_187).abs() < 1e-12);
        assert!((harmonic_mean(53.0, 8.0).unwrap() - 13.901_639_344_262_295).abs() < 1e-12);
        assert_eq!(harmonic_mean(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(harmonic_mean(0.9, 0.0).unwrap(), 0.0);
        assert!(harmonic_mean(-0.1, 0.5).is_err());
        assert!(harmonic_mean(0.5, f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn harmonic_mean_properties(s in 0.0f64..1.0, u in 0.0f64..1.0) {
            let h = harmonic_mean(s, u).unwrap();
            prop_assert!(h <= s.max(u) + 1e-15 && h >= 0.0);
            prop_assert!((harmonic_mean(s, s).unwrap() - s).abs() < 1e-15);
            prop_assert_eq!(h, harmonic_mean(u, s).unwrap());
        }
    }

    fn oracle_setup() -> (SemanticSpace, Classifier) {
        let s = SemanticSpace::synthetic(&ToySpaceSpec::default()).unwrap();
        let mut c = Classifier::new(ClassifierMode::Learned, 16, &s, 0).unwrap();
        c.expand(&s).unwrap();
        // Weights = class rows, zero bias: semantic rows are scored perfectly.
        let mut w = Matrix::zeros(16, 16);
        for class in 0..16 {
            for (r, &v) in s.embedding(class).iter().enumerate() {
                w.set(r, class, v);
            }
        }
        c.params_mut()[0].value = w;
        c.params_mut()[1].value = Matrix::zeros(1, 16);
        (s, c)
    }

    use crate::numerics::Parameters;

    #[test]
    fn perfect_classifier_scores_one() {
        let (s, c) = oracle_setup();
        let labels: Vec<usize> = (0..16).flat_map(|c| [c, c]).collect();
        let test = FeatureDataset::tagged(s.rows_for(&labels).unwrap(), labels, Provenance::Real, &s).unwrap();
        let r = evaluate_gzsl(&c, &test, &s).unwrap();
        assert_eq!((r.seen_mean, r.unseen_mean, r.hm), (1.0, 1.0, 1.0));
        assert!(r.excluded.is_empty());
    }

    #[test]
    fn missing_class_is_excluded_and_bias_gives_zero_hm() {
        let (s, c) = oracle_setup();
        // Unseen test rows replaced by seen class-0 features: all unseen wrong.
        let mut labels: Vec<usize> = (0..12).collect();
        labels.extend([12, 13, 14]);
        let mut features = s.rows_for(&labels[..12]).unwrap();
        features = features.vstack(&s.rows_for(&[0, 0, 0]).unwrap()).unwrap();
        let test = FeatureDataset::tagged(features, labels, Provenance::Real, &s).unwrap();
        let r = evaluate_gzsl(&c, &test, &s).unwrap();
        assert_eq!(r.unseen_mean, 0.0);
        assert_eq!(r.hm, 0.0);
        assert_eq!(r.excluded, vec![s.name(15).to_string()]);
        assert!((r.hm - harmonic_mean(r.seen_mean, r.unseen_mean).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn unexpanded_classifier_is_rejected() {
        let s = SemanticSpace::synthetic(&ToySpaceSpec::default()).unwrap();
        let c = Classifier::new(ClassifierMode::Learned, 16, &s, 0).unwrap();
        let test = FeatureDataset::empty(16);
        assert!(matches!(evaluate_gzsl(&c, &test, &s), Err(Error::State(_))));
    }
}

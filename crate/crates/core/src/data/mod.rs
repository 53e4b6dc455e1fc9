//! Precomputed embedding datasets: records, class balance, validation
//! splits and batching.

mod format;
mod synthetic;

use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FnrError, Result};
use crate::model::ClassWeights;
use crate::tensor::{Real, Tensor2};

pub use format::{load_dataset, save_dataset, Encoding, Manifest, MANIFEST_FORMAT, RECORDS_MAGIC};
pub use synthetic::{gen_synthetic_clusters, gen_synthetic_xor, SyntheticKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Real = 0,
    Fake = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Real => Label::Fake,
            Label::Fake => Label::Real,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        match v {
            0 => Ok(Label::Real),
            1 => Ok(Label::Fake),
            other => Err(format!("label {other} is not 0 (real) or 1 (fake)")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Real => "real",
            Label::Fake => "fake",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One news item with both encoders already applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    pub id: String,
    pub split: Split,
    pub label: Label,
    pub text_embedding: Vec<f32>,
    pub image_embedding: Vec<f32>,
}

impl EmbeddingRecord {
    pub fn validate(&self, d_in: usize) -> Result<()> {
        for (what, v) in [
            ("text", &self.text_embedding),
            ("image", &self.image_embedding),
        ] {
            if v.is_empty() {
                return Err(FnrError::Data(format!(
                    "record {:?} has no {what} embedding",
                    self.id
                )));
            }
            if v.len() != d_in {
                return Err(FnrError::Data(format!(
                    "record {:?} {what} embedding has length {}, dataset d_in is {d_in}",
                    self.id,
                    v.len()
                )));
            }
            if let Some(pos) = v.iter().position(|x| !x.is_finite()) {
                return Err(FnrError::Data(format!(
                    "record {:?} {what} embedding entry {pos} is not finite",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Record counts per split and label.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train_fake: usize,
    pub train_real: usize,
    pub test_fake: usize,
    pub test_real: usize,
}

impl SplitCounts {
    pub fn of(records: &[EmbeddingRecord]) -> Self {
        let mut c = SplitCounts::default();
        for r in records {
            match (r.split, r.label) {
                (Split::Train, Label::Fake) => c.train_fake += 1,
                (Split::Train, Label::Real) => c.train_real += 1,
                (Split::Test, Label::Fake) => c.test_fake += 1,
                (Split::Test, Label::Real) => c.test_real += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.train_fake + self.train_real + self.test_fake + self.test_real
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub d_in: usize,
    pub counts: SplitCounts,
    /// Maximum raw text length the encoder saw; informational.
    pub text_max_len: Option<usize>,
    /// Raw image `[width, height, depth]`; informational.
    pub image_dims: Option<[usize; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<EmbeddingRecord>,
}

impl Dataset {
    /// Validates records and derives the metadata from them.
    pub fn from_records(name: impl Into<String>, records: Vec<EmbeddingRecord>) -> Result<Self> {
        let d_in = records
            .first()
            .map(|r| r.text_embedding.len())
            .ok_or_else(|| FnrError::Data("dataset has no records".into()))?;
        validate_records(&records, d_in)?;
        Ok(Dataset {
            meta: DatasetMeta {
                name: name.into(),
                d_in,
                counts: SplitCounts::of(&records),
                text_max_len: None,
                image_dims: None,
            },
            records,
        })
    }

    pub fn split(&self, split: Split) -> Vec<EmbeddingRecord> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .cloned()
            .collect()
    }
}

pub(crate) fn validate_records(records: &[EmbeddingRecord], d_in: usize) -> Result<()> {
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        r.validate(d_in)?;
        if !seen.insert(r.id.as_str()) {
            return Err(FnrError::Data(format!("duplicate record id {:?}", r.id)));
        }
    }
    Ok(())
}

/// Majority/minority ratio of the training labels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassBalance {
    pub alpha: f64,
    pub minority: Label,
    pub real: usize,
    pub fake: usize,
}

impl ClassBalance {
    pub fn weights(&self) -> ClassWeights {
        ClassWeights::from_alpha(self.alpha, self.minority).expect("alpha >= 1 by construction")
    }
}

/// `alpha = max(count) / min(count)`; ties name fake as the minority.
pub fn compute_alpha(labels: impl IntoIterator<Item = Label>) -> Result<ClassBalance> {
    let (mut real, mut fake) = (0usize, 0usize);
    for l in labels {
        match l {
            Label::Real => real += 1,
            Label::Fake => fake += 1,
        }
    }
    if real == 0 || fake == 0 {
        return Err(FnrError::Data(format!(
            "training split needs both classes (real {real}, fake {fake})"
        )));
    }
    let (minority, small, large) = if real < fake {
        (Label::Real, real, fake)
    } else {
        (Label::Fake, fake, real)
    };
    Ok(ClassBalance {
        alpha: large as f64 / small as f64,
        minority,
        real,
        fake,
    })
}

/// Stratified hold-out: `round(frac * n_class)` of each class, at least one
/// and leaving at least one behind. Both outputs keep input order.
pub fn split_validation(
    records: &[EmbeddingRecord],
    frac: f64,
    seed: u64,
) -> Result<(Vec<EmbeddingRecord>, Vec<EmbeddingRecord>)> {
    if !(frac > 0.0 && frac < 0.5) {
        return Err(FnrError::Contract(format!(
            "validation fraction {frac} outside (0, 0.5)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_val = vec![false; records.len()];
    for label in [Label::Real, Label::Fake] {
        let mut idx: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].label == label)
            .collect();
        if idx.len() < 2 {
            return Err(FnrError::Data(format!(
                "class {label} has {} training records; need at least 2 to hold out validation",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let take = ((frac * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        for &i in &idx[..take] {
            in_val[i] = true;
        }
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (r, v) in records.iter().zip(in_val) {
        if v {
            val.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok((train, val))
}

/// Stacked tensors for a group of records.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub text: Tensor2<T>,
    pub image: Tensor2<T>,
    pub labels: Vec<usize>,
    /// Positions of the records in the slice the batch was built from.
    pub indices: Vec<usize>,
}

impl<T: Real> Batch<T> {
    pub fn from_indices(records: &[EmbeddingRecord], indices: Vec<usize>) -> Result<Self> {
        let d_in = indices
            .first()
            .map(|&i| records[i].text_embedding.len())
            .unwrap_or(0);
        let mut text = Vec::with_capacity(indices.len() * d_in);
        let mut image = Vec::with_capacity(indices.len() * d_in);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in &indices {
            let r = &records[i];
            if r.text_embedding.len() != d_in || r.image_embedding.len() != d_in {
                return Err(FnrError::Data(format!(
                    "record {:?} has inconsistent d_in",
                    r.id
                )));
            }
            text.extend(r.text_embedding.iter().map(|&x| T::from_f64(x as f64)));
            image.extend(r.image_embedding.iter().map(|&x| T::from_f64(x as f64)));
            labels.push(r.label.index());
        }
        Ok(Batch {
            text: Tensor2::new(indices.len(), d_in, text)?,
            image: Tensor2::new(indices.len(), d_in, image)?,
            labels,
            indices,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Index groups for [`make_batches`]. A trailing group of one is merged into
/// the previous group.
pub fn batch_plan(
    n: usize,
    batch_size: usize,
    seed: u64,
    shuffle: bool,
) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(FnrError::Contract(format!(
            "batch size {batch_size} must be at least 2"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut plan: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if plan.len() >= 2 && plan.last().is_some_and(|b| b.len() < 2) {
        let tail = plan.pop().expect("checked non-empty");
        plan.last_mut().expect("checked len >= 2").extend(tail);
    }
    Ok(plan)
}

pub fn make_batches<T: Real>(
    records: &[EmbeddingRecord],
    batch_size: usize,
    seed: u64,
    shuffle: bool,
) -> Result<Vec<Batch<T>>> {
    batch_plan(records.len(), batch_size, seed, shuffle)?
        .into_iter()
        .map(|idx| Batch::from_indices(records, idx))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: usize, label: Label) -> EmbeddingRecord {
        EmbeddingRecord {
            id: format!("r{id}"),
            split: Split::Train,
            label,
            text_embedding: vec![id as f32, 1.0],
            image_embedding: vec![-(id as f32), 2.0],
        }
    }

    fn balanced(n: usize) -> Vec<EmbeddingRecord> {
        (0..n)
            .map(|i| record(i, if i % 2 == 0 { Label::Real } else { Label::Fake }))
            .collect()
    }

    #[test]
    fn alpha_from_table_counts() {
        let labels =
            std::iter::repeat_n(Label::Fake, 6649).chain(std::iter::repeat_n(Label::Real, 4599));
        let b = compute_alpha(labels).unwrap();
        assert!((b.alpha - 1.4458).abs() < 1e-4, "{}", b.alpha);
        assert_eq!(b.minority, Label::Real);

        let labels =
            std::iter::repeat_n(Label::Fake, 3748).chain(std::iter::repeat_n(Label::Real, 3758));
        let b = compute_alpha(labels).unwrap();
        assert!((b.alpha - 1.0027).abs() < 1e-4, "{}", b.alpha);
        assert_eq!(b.minority, Label::Fake);
    }

    #[test]
    fn alpha_balanced_and_missing_class() {
        assert_eq!(
            compute_alpha([Label::Real, Label::Fake]).unwrap().alpha,
            1.0
        );
        assert!(matches!(
            compute_alpha([Label::Real, Label::Real]),
            Err(FnrError::Data(_))
        ));
    }

    #[test]
    fn stratified_validation_split() {
        let recs = balanced(100);
        let (train, val) = split_validation(&recs, 0.1, 7).unwrap();
        assert_eq!(val.iter().filter(|r| r.label == Label::Real).count(), 5);
        assert_eq!(val.iter().filter(|r| r.label == Label::Fake).count(), 5);
        assert_eq!(train.len(), 90);

        let (train2, val2) = split_validation(&recs, 0.1, 7).unwrap();
        assert_eq!((train, val), (train2, val2));
    }

    #[test]
    fn validation_split_is_a_partition() {
        let recs = balanced(37);
        let (train, val) = split_validation(&recs, 0.2, 1).unwrap();
        let mut ids: Vec<_> = train.iter().chain(&val).map(|r| r.id.clone()).collect();
        ids.sort();
        let mut expected: Vec<_> = recs.iter().map(|r| r.id.clone()).collect();
        expected.sort();
        assert_eq!(ids, expected);
    }

    #[test]
    fn validation_split_needs_two_per_class() {
        let recs = vec![
            record(0, Label::Real),
            record(1, Label::Fake),
            record(2, Label::Fake),
        ];
        assert!(matches!(
            split_validation(&recs, 0.1, 0),
            Err(FnrError::Data(_))
        ));
        assert!(matches!(
            split_validation(&balanced(10), 0.5, 0),
            Err(FnrError::Contract(_))
        ));
    }

    #[test]
    fn batch_sizes_and_merge_rule() {
        let sizes = |n, b| -> Vec<usize> {
            batch_plan(n, b, 0, false)
                .unwrap()
                .iter()
                .map(Vec::len)
                .collect()
        };
        assert_eq!(sizes(10, 4), vec![4, 4, 2]);
        assert_eq!(sizes(9, 4), vec![4, 5]);
        assert_eq!(sizes(8, 4), vec![4, 4]);
        assert!(batch_plan(10, 1, 0, false).is_err());
    }

    #[test]
    fn unshuffled_batches_preserve_order() {
        let recs = balanced(10);
        let batches = make_batches::<f32>(&recs, 4, 3, false).unwrap();
        let order: Vec<usize> = batches.iter().flat_map(|b| b.indices.clone()).collect();
        assert_eq!(order, (0..10).collect::<Vec<_>>());
        assert_eq!(batches[0].text.get(1, 0), 1.0);
        assert_eq!(batches[0].labels, vec![0, 1, 0, 1]);
    }

    #[test]
    fn shuffled_batches_are_seeded() {
        let a = batch_plan(50, 8, 42, true).unwrap();
        assert_eq!(a, batch_plan(50, 8, 42, true).unwrap());
        assert_ne!(a, batch_plan(50, 8, 43, true).unwrap());
    }

    #[test]
    fn nan_embedding_names_record() {
        let mut r = record(3, Label::Fake);
        r.image_embedding[1] = f32::NAN;
        let msg = Dataset::from_records("x", vec![r]).unwrap_err().to_string();
        assert!(msg.contains("\"r3\""), "{msg}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let recs = vec![record(1, Label::Fake), record(1, Label::Real)];
        assert!(Dataset::from_records("x", recs).is_err());
    }
}

//! Seeded synthetic datasets for desk-scale checks.
//!
//! Every fifth record (index `i % 5 == 4`) goes to the test split.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{EmbeddingRecord, Label, Split};
use crate::error::{FnrError, Result};

const XOR_MEAN: f64 = 1.0;
const XOR_NOISE: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Xor,
    Clusters,
}

fn unit_direction(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn sample_around(center: f64, dir: &[f64], noise: &Normal<f64>, rng: &mut ChaCha8Rng) -> Vec<f32> {
    dir.iter()
        .map(|&u| (center * u + noise.sample(rng)) as f32)
        .collect()
}

fn split_for(i: usize) -> Split {
    if i % 5 == 4 {
        Split::Test
    } else {
        Split::Train
    }
}

/// Text and image embeddings sit around `±1` along one fixed direction per
/// modality (noise sd 0.3); the label is the XOR of the two signs, so neither
/// modality alone carries label information.
pub fn gen_synthetic_xor(n: usize, d: usize, seed: u64) -> Result<Vec<EmbeddingRecord>> {
    if n < 8 || !n.is_multiple_of(2) {
        return Err(FnrError::Contract(format!(
            "xor dataset needs an even n >= 8, got {n}"
        )));
    }
    if d < 2 {
        return Err(FnrError::Contract(format!(
            "xor dataset needs d >= 2, got {d}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let text_dir = unit_direction(d, &mut rng);
    let image_dir = unit_direction(d, &mut rng);
    let noise = Normal::new(0.0, XOR_NOISE).expect("valid sd");
    let records = (0..n)
        .map(|i| {
            let text_pos = rng.random::<bool>();
            let image_pos = rng.random::<bool>();
            let sign = |p: bool| if p { XOR_MEAN } else { -XOR_MEAN };
            let text_embedding = sample_around(sign(text_pos), &text_dir, &noise, &mut rng);
            let image_embedding = sample_around(sign(image_pos), &image_dir, &noise, &mut rng);
            EmbeddingRecord {
                id: format!("xor-{i:06}"),
                split: split_for(i),
                label: if text_pos ^ image_pos {
                    Label::Fake
                } else {
                    Label::Real
                },
                text_embedding,
                image_embedding,
            }
        })
        .collect();
    Ok(records)
}

/// Two unit-variance Gaussian clusters per modality whose means are
/// `separation` apart along a fixed direction; fake items sit on the positive
/// side in both modalities.
pub fn gen_synthetic_clusters(
    n: usize,
    d: usize,
    seed: u64,
    separation: f64,
) -> Result<Vec<EmbeddingRecord>> {
    if n < 8 {
        return Err(FnrError::Contract(format!(
            "clusters dataset needs n >= 8, got {n}"
        )));
    }
    if d < 1 {
        return Err(FnrError::Contract("clusters dataset needs d >= 1".into()));
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(FnrError::Contract(format!(
            "separation {separation} must be finite and >= 0"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let text_dir = unit_direction(d, &mut rng);
    let image_dir = unit_direction(d, &mut rng);
    let noise = Normal::new(0.0, 1.0).expect("valid sd");
    let half = separation / 2.0;
    let records = (0..n)
        .map(|i| {
            let fake = rng.random::<bool>();
            let center = if fake { half } else { -half };
            EmbeddingRecord {
                id: format!("clusters-{i:06}"),
                split: split_for(i),
                label: if fake { Label::Fake } else { Label::Real },
                text_embedding: sample_around(center, &text_dir, &noise, &mut rng),
                image_embedding: sample_around(center, &image_dir, &noise, &mut rng),
            }
        })
        .collect();
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn projection(v: &[f32], dir: &[f64]) -> f64 {
        v.iter().zip(dir).map(|(&x, &u)| x as f64 * u).sum()
    }

    fn dirs(d: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (unit_direction(d, &mut rng), unit_direction(d, &mut rng))
    }

    #[test]
    fn xor_single_modality_is_uninformative() {
        let recs = gen_synthetic_xor(10_000, 8, 5).unwrap();
        let (tdir, idir) = dirs(8, 5);
        let label: Vec<f64> = recs.iter().map(|r| r.label.index() as f64).collect();
        let st: Vec<f64> = recs
            .iter()
            .map(|r| projection(&r.text_embedding, &tdir).signum())
            .collect();
        let si: Vec<f64> = recs
            .iter()
            .map(|r| projection(&r.image_embedding, &idir).signum())
            .collect();
        assert!(corr(&st, &label).abs() < 0.05);
        assert!(corr(&si, &label).abs() < 0.05);
        let agree = st
            .iter()
            .zip(&si)
            .zip(&label)
            .filter(|((a, b), l)| ((**a > 0.0) ^ (**b > 0.0)) == (**l > 0.5))
            .count();
        assert!(agree as f64 / recs.len() as f64 > 0.99);
        let fake = label.iter().sum::<f64>() / label.len() as f64;
        assert!((fake - 0.5).abs() < 0.02, "{fake}");
    }

    #[test]
    fn generators_are_seeded() {
        assert_eq!(
            gen_synthetic_xor(64, 4, 1).unwrap(),
            gen_synthetic_xor(64, 4, 1).unwrap()
        );
        assert_ne!(
            gen_synthetic_xor(64, 4, 1).unwrap(),
            gen_synthetic_xor(64, 4, 2).unwrap()
        );
        assert_eq!(
            gen_synthetic_clusters(64, 4, 1, 6.0).unwrap(),
            gen_synthetic_clusters(64, 4, 1, 6.0).unwrap()
        );
    }

    #[test]
    fn generator_preconditions() {
        assert!(gen_synthetic_xor(7, 4, 0).is_err());
        assert!(gen_synthetic_xor(9, 4, 0).is_err());
        assert!(gen_synthetic_xor(8, 1, 0).is_err());
        assert!(gen_synthetic_clusters(4, 4, 0, 1.0).is_err());
        assert!(gen_synthetic_clusters(8, 4, 0, -1.0).is_err());
    }

    fn nearest_centroid_accuracy(recs: &[EmbeddingRecord]) -> f64 {
        let d = recs[0].text_embedding.len();
        let feat = |r: &EmbeddingRecord| -> Vec<f64> {
            r.text_embedding
                .iter()
                .chain(&r.image_embedding)
                .map(|&x| x as f64)
                .collect()
        };
        let (train, test): (Vec<_>, Vec<_>) = recs.iter().partition(|r| r.split == Split::Train);
        let mut centroids = [vec![0.0; 2 * d], vec![0.0; 2 * d]];
        let mut counts = [0.0; 2];
        for r in &train {
            let c = r.label.index();
            counts[c] += 1.0;
            for (acc, x) in centroids[c].iter_mut().zip(feat(r)) {
                *acc += x;
            }
        }
        for c in 0..2 {
            centroids[c].iter_mut().for_each(|x| *x /= counts[c]);
        }
        let dist =
            |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let correct = test
            .iter()
            .filter(|r| {
                let f = feat(r);
                let pred = usize::from(dist(&f, &centroids[1]) < dist(&f, &centroids[0]));
                pred == r.label.index()
            })
            .count();
        correct as f64 / test.len() as f64
    }

    #[test]
    fn separated_clusters_are_easy_for_nearest_centroid() {
        let recs = gen_synthetic_clusters(4000, 8, 3, 6.0).unwrap();
        assert!(nearest_centroid_accuracy(&recs) >= 0.99);
    }

    #[test]
    fn zero_separation_is_chance() {
        let recs = gen_synthetic_clusters(4000, 8, 3, 0.0).unwrap();
        let acc = nearest_centroid_accuracy(&recs);
        assert!((acc - 0.5).abs() < 0.06, "{acc}");
    }
}

//! Text-image similarity objective.
//!
//! For a batch of projected text features `F_T` and image features `F_I`
//! (both `b x k`):
//!
//! * predicted matrix `P = F_T F_I^T`
//! * expected matrix `E = rowsoftmax((F_T F_T^T + F_I F_I^T) / 2)`
//! * `l_T = bce(E, rowsoftmax(P))`, `l_I = bce(E, rowsoftmax(P^T))`
//! * `l_s = (l_T + l_I) / 2`
//!
//! Raw inner products are row-softmaxed before the cross-entropy so every
//! logarithm is defined. Temperature is fixed at 1 and features are not
//! length-normalised.

use crate::autodiff::{Graph, NodeId};
use crate::error::{FnrError, Result};
use crate::tensor::{Real, Tensor2};

/// `P`, its row-softmax, and `E` for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityPair<T> {
    pub predicted: Tensor2<T>,
    pub predicted_norm: Tensor2<T>,
    pub expected: Tensor2<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContrastiveLoss {
    pub l_text: f64,
    pub l_image: f64,
    pub l_sim: f64,
}

/// Graph nodes produced by [`contrastive_nodes`].
#[derive(Clone, Copy, Debug)]
pub struct ContrastiveNodes {
    pub predicted: NodeId,
    pub predicted_norm: NodeId,
    pub expected: NodeId,
    pub l_text: NodeId,
    pub l_image: NodeId,
    pub l_sim: NodeId,
}

fn check_pair<T: Real>(ft: &Tensor2<T>, fi: &Tensor2<T>, op: &'static str) -> Result<()> {
    ft.expect_same_shape(fi, op)
}

pub fn predicted_matrix<T: Real>(ft: &Tensor2<T>, fi: &Tensor2<T>) -> Result<Tensor2<T>> {
    check_pair(ft, fi, "predicted_matrix")?;
    ft.matmul_transposed(fi)
}

pub fn expected_matrix<T: Real>(ft: &Tensor2<T>, fi: &Tensor2<T>) -> Result<Tensor2<T>> {
    check_pair(ft, fi, "expected_matrix")?;
    let text_gram = ft.matmul_transposed(ft)?;
    let image_gram = fi.matmul_transposed(fi)?;
    Ok(text_gram
        .add(&image_gram)?
        .scale(T::from_f64(0.5))
        .softmax_rows())
}

pub fn similarity_pair<T: Real>(ft: &Tensor2<T>, fi: &Tensor2<T>) -> Result<SimilarityPair<T>> {
    let predicted = predicted_matrix(ft, fi)?;
    let predicted_norm = predicted.softmax_rows();
    Ok(SimilarityPair {
        predicted,
        predicted_norm,
        expected: expected_matrix(ft, fi)?,
    })
}

/// Records the similarity objective on `g` for feature nodes `ft` and `fi`.
pub fn contrastive_nodes<T: Real>(
    g: &mut Graph<T>,
    ft: NodeId,
    fi: NodeId,
) -> Result<ContrastiveNodes> {
    check_pair(g.value(ft), g.value(fi), "contrastive_loss")?;
    let b = g.value(ft).rows();
    if b < 2 {
        return Err(FnrError::Contract(format!(
            "similarity loss needs a batch of at least 2, got {b}"
        )));
    }
    let predicted = g.matmul_transposed(ft, fi)?;
    let text_gram = g.matmul_transposed(ft, ft)?;
    let image_gram = g.matmul_transposed(fi, fi)?;
    let gram_sum = g.add(text_gram, image_gram)?;
    let gram_avg = g.scale(gram_sum, T::from_f64(0.5))?;
    let expected = g.softmax_rows(gram_avg)?;

    let predicted_norm = g.softmax_rows(predicted)?;
    let l_text = g.bce_mean(expected, predicted_norm)?;

    let predicted_t = g.transpose(predicted)?;
    let predicted_t_norm = g.softmax_rows(predicted_t)?;
    let l_image = g.bce_mean(expected, predicted_t_norm)?;

    let pair_sum = g.add(l_text, l_image)?;
    let l_sim = g.scale(pair_sum, T::from_f64(0.5))?;
    Ok(ContrastiveNodes {
        predicted,
        predicted_norm,
        expected,
        l_text,
        l_image,
        l_sim,
    })
}

pub fn contrastive_loss<T: Real>(ft: &Tensor2<T>, fi: &Tensor2<T>) -> Result<ContrastiveLoss> {
    let mut g = Graph::new();
    let t = g.constant(ft.clone());
    let i = g.constant(fi.clone());
    let nodes = contrastive_nodes(&mut g, t, i)?;
    Ok(ContrastiveLoss {
        l_text: g.scalar(nodes.l_text).to_f64(),
        l_image: g.scalar(nodes.l_image).to_f64(),
        l_sim: g.scalar(nodes.l_sim).to_f64(),
    })
}

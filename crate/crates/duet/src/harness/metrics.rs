//! Retrieval ranking metrics.

use serde::{Deserialize, Serialize};

use crate::tensor::{Tensor, TensorError, TensorResult};

/// Recall-at-K (in percent) and mean rank over a query set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub r_at_10: f64,
    /// Mean of the 1-indexed ranks of the true items.
    pub mean_rank: f64,
    pub ranks: Vec<usize>,
}

impl std::fmt::Display for RetrievalResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "R@1 {:5.1}  R@5 {:5.1}  R@10 {:5.1}  MnR {:6.2}",
            self.r_at_1, self.r_at_5, self.r_at_10, self.mean_rank
        )
    }
}

/// Rank every query's true gallery item in a `[Q, G]` score matrix.
///
/// The rank of query `i` is one plus the number of gallery items scoring
/// strictly higher than the true item, where ties are broken by gallery
/// index: an equal-scoring item counts as ahead only if its index is lower.
/// Ranks are therefore invariant under any strictly increasing transform of
/// the scores.
pub fn rank_metrics(scores: &Tensor, truth: &[usize]) -> TensorResult<RetrievalResult> {
    if scores.rank() != 2 || scores.shape()[0] != truth.len() {
        return Err(TensorError::BadShape {
            op: "rank_metrics",
            expected: "[queries, gallery] with one truth index per query",
            got: scores.shape().to_vec(),
        });
    }
    let g = scores.shape()[1];
    let mut ranks = Vec::with_capacity(truth.len());
    for (i, &t) in truth.iter().enumerate() {
        if t >= g {
            return Err(TensorError::OutOfBounds {
                op: "rank_metrics",
                index: t,
                bound: g,
            });
        }
        let s_true = scores.at2(i, t);
        let mut ahead = 0;
        for j in 0..g {
            let s = scores.at2(i, j);
            if s > s_true || (s == s_true && j < t) {
                ahead += 1;
            }
        }
        ranks.push(ahead + 1);
    }
    let q = ranks.len() as f64;
    let recall = |k: usize| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / q;
    Ok(RetrievalResult {
        r_at_1: recall(1),
        r_at_5: recall(5),
        r_at_10: recall(10),
        mean_rank: ranks.iter().sum::<usize>() as f64 / q,
        ranks,
    })
}

/// [`rank_metrics`] with the usual paired setup: query `i`'s truth is item `i`.
pub fn rank_metrics_diag(scores: &Tensor) -> TensorResult<RetrievalResult> {
    let truth: Vec<usize> = (0..scores.shape()[0]).collect();
    rank_metrics(scores, &truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn hand_case() -> Tensor {
        Tensor::new(
            vec![4, 4],
            vec![
                0.9, 0.1, 0.2, 0.3, //
                0.8, 0.5, 0.1, 0.2, //
                0.1, 0.2, 0.9, 0.3, //
                0.5, 0.4, 0.3, 0.2,
            ],
        )
        .unwrap()
    }

    #[test]
    fn hand_computed_four_by_four() {
        let r = rank_metrics_diag(&hand_case()).unwrap();
        assert_eq!(r.ranks, vec![1, 2, 1, 4]);
        assert_eq!(r.r_at_1, 50.0);
        assert_eq!(r.r_at_5, 100.0);
        assert_eq!(r.r_at_10, 100.0);
        assert_eq!(r.mean_rank, 2.0);
    }

    #[test]
    fn ties_break_toward_lower_gallery_index() {
        // query 0: true item 1 ties with item 0 -> item 0 is counted ahead
        let s = Tensor::new(vec![2, 3], vec![0.5, 0.5, 0.1, 0.5, 0.9, 0.5]).unwrap();
        let r = rank_metrics(&s, &[1, 2]).unwrap();
        assert_eq!(r.ranks[0], 2);
        // query 1: true item 2 ties with item 0; 0.9 and the tie are both ahead
        assert_eq!(r.ranks[1], 3);
    }

    #[test]
    fn strictly_increasing_transform_preserves_everything() {
        let mut rng = crate::rng::stream_rng(3, crate::rng::Stream::Inputs, 0);
        let s = Tensor::from_fn(&[12, 12], |_| rng.gen_range(-1.0..1.0));
        let mapped = Tensor::from_fn(&[12, 12], |i| (2.0 * s.data()[i] + 3.0).tanh());
        let a = rank_metrics_diag(&s).unwrap();
        let b = rank_metrics_diag(&mapped).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_truth_out_of_gallery() {
        let s = Tensor::zeros(&[2, 2]);
        assert!(rank_metrics(&s, &[0, 2]).is_err());
        assert!(rank_metrics(&s, &[0]).is_err());
    }
}

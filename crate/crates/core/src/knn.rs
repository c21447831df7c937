//! Exact L2 nearest-neighbour search over one embedding matrix.

use rayon::prelude::*;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::ranked::{Direction, RankedList};

/// Euclidean distance, accumulated in f64.
pub fn l2_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(squared_l2(a, b).sqrt())
}

fn squared_l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

fn closer(a: &(f64, usize), b: &(f64, usize), ids: &[String]) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then_with(|| ids[a.1].cmp(&ids[b.1]))
}

/// The `min(k, count)` rows nearest to `query`, ascending by distance with
/// exact ties broken by ascending doc id.
pub fn top_k(query: &[f32], matrix: &EmbeddingMatrix, k: usize) -> Result<RankedList> {
    top_k_for("", query, matrix, k)
}

fn top_k_for(query_id: &str, query: &[f32], matrix: &EmbeddingMatrix, k: usize) -> Result<RankedList> {
    if query.len() != matrix.dim() {
        return Err(Error::DimensionMismatch {
            expected: matrix.dim(),
            actual: query.len(),
        });
    }
    if matrix.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }

    let ids = matrix.ids();
    let mut scored: Vec<(f64, usize)> = (0..matrix.count())
        .map(|i| (squared_l2(query, matrix.row(i)).sqrt(), i))
        .collect();

    let keep = k.min(scored.len());
    if keep < scored.len() {
        scored.select_nth_unstable_by(keep - 1, |a, b| closer(a, b, ids));
        scored.truncate(keep);
    }
    scored.sort_unstable_by(|a, b| closer(a, b, ids));

    let scored = scored
        .into_iter()
        .map(|(d, i)| (ids[i].clone(), d))
        .collect();
    RankedList::from_scores(query_id, matrix.model_id(), Direction::AscendingBetter, scored)
}

/// Runs [`top_k`] for every query row, in query order, with `query_id` set to
/// the row's id. Queries are evaluated in parallel on the current rayon pool.
pub fn batch_search(queries: &EmbeddingMatrix, db: &EmbeddingMatrix, k: usize) -> Result<Vec<RankedList>> {
    if queries.dim() != db.dim() {
        return Err(Error::DimensionMismatch {
            expected: db.dim(),
            actual: queries.dim(),
        });
    }
    queries
        .ids()
        .par_iter()
        .enumerate()
        .map(|(i, id)| top_k_for(id, queries.row(i), db, k))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[(&str, &[f32])]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows("m", rows[0].1.len(), rows.iter().map(|(id, r)| (*id, r.to_vec())), false)
            .unwrap()
    }

    #[test]
    fn distance_basics() {
        assert_eq!(l2_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(l2_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert!(l2_distance(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn self_match_ranks_first() {
        let m = matrix(&[("x", &[1.0, 0.0]), ("y", &[0.0, 1.0]), ("z", &[5.0, 5.0])]);
        let list = top_k(&[1.0, 0.0], &m, 1).unwrap();
        assert_eq!(list.len(), 1);
        assert_eq!(list.entries()[0].doc_id, "x");
        assert_eq!(list.entries()[0].score, 0.0);
        assert_eq!(list.entries()[0].rank, 1);
    }

    #[test]
    fn identical_rows_tie_break_by_id() {
        let m = matrix(&[("b", &[1.0, 1.0]), ("a", &[1.0, 1.0])]);
        let list = top_k(&[1.0, 1.0], &m, 2).unwrap();
        assert_eq!(list.doc_ids().collect::<Vec<_>>(), ["a", "b"]);
    }

    #[test]
    fn tie_break_survives_partial_selection() {
        let m = matrix(&[("d", &[1.0]), ("c", &[1.0]), ("b", &[1.0]), ("a", &[1.0]), ("e", &[0.0])]);
        let list = top_k(&[0.0], &m, 3).unwrap();
        assert_eq!(list.doc_ids().collect::<Vec<_>>(), ["e", "a", "b"]);
    }

    #[test]
    fn errors() {
        let m = matrix(&[("a", &[1.0, 1.0])]);
        assert!(matches!(top_k(&[1.0], &m, 1), Err(Error::DimensionMismatch { .. })));
        let empty = EmbeddingMatrix::new("m", 2, vec![], vec![], false).unwrap();
        assert!(matches!(top_k(&[1.0, 1.0], &empty, 1), Err(Error::EmptyMatrix)));
        let q = EmbeddingMatrix::new("m", 3, vec!["q".into()], vec![0.0; 3], false).unwrap();
        assert!(batch_search(&q, &m, 1).is_err());
    }

    #[test]
    fn k_beyond_count_returns_everything() {
        let m = matrix(&[("a", &[0.0]), ("b", &[2.0]), ("c", &[1.0])]);
        let list = top_k(&[0.0], &m, 10).unwrap();
        assert_eq!(list.doc_ids().collect::<Vec<_>>(), ["a", "c", "b"]);
    }

    #[test]
    fn batch_of_zero_and_one() {
        let db = matrix(&[("a", &[0.0]), ("b", &[2.0])]);
        let none = EmbeddingMatrix::new("m", 1, vec![], vec![], false).unwrap();
        assert!(batch_search(&none, &db, 1).unwrap().is_empty());
        let one = EmbeddingMatrix::new("m", 1, vec!["q".into()], vec![1.9], false).unwrap();
        let out = batch_search(&one, &db, 2).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].query_id(), "q");
        assert_eq!(out[0].entries(), top_k(&[1.9], &db, 2).unwrap().entries());
    }
}

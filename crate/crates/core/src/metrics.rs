//! Average precision, mAP reports, top-1 accuracy and clustering accuracy.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{Category, Taxonomy};
use crate::tensor::Tensor;

/// Scores and binary relevance for `N` videos over `L` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    pub video_ids: Vec<String>,
    pub scores: Tensor,
    pub relevance: Tensor,
}

impl PredictionMatrix {
    pub fn new(video_ids: Vec<String>, scores: Tensor, relevance: Tensor) -> Result<Self> {
        if scores.ndim() != 2 || scores.shape() != relevance.shape() || scores.dim(0) != video_ids.len() {
            return Err(Error::Shape(format!(
                "scores {:?}, relevance {:?} and {} video ids do not agree",
                scores.shape(),
                relevance.shape(),
                video_ids.len()
            )));
        }
        if let Some(i) = scores.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NanScore(i / scores.dim(1).max(1)));
        }
        if relevance.data().iter().any(|&r| r != 0.0 && r != 1.0) {
            return Err(Error::Shape("relevance must be 0 or 1".into()));
        }
        Ok(Self {
            video_ids,
            scores,
            relevance,
        })
    }

    pub fn n_labels(&self) -> usize {
        self.scores.dim(1)
    }

    fn column(t: &Tensor, l: usize) -> Vec<f64> {
        let w = t.dim(1);
        t.data().iter().skip(l).step_by(w).copied().collect()
    }
}

/// AP of one label: `(1/P) sum_k [rel_k] precision@k` over the ranking by
/// descending score, ties broken by ascending index. `None` when there are
/// no positives.
pub fn average_precision(scores: &[f64], relevance: &[f64]) -> Result<Option<f64>> {
    if scores.len() != relevance.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: relevance.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::Shape("average precision needs at least one item".into()));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NanScore(i));
    }
    let positives = relevance.iter().filter(|&&r| r > 0.0).count();
    if positives == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if relevance[i] > 0.0 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(Some(sum / positives as f64))
}

/// Per-label, per-category and overall mean average precision.
///
/// `overall` is the unweighted mean of the defined category values, so a
/// category with many labels counts as much as one with few.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub per_label: Vec<(usize, Option<f64>)>,
    /// In [`Category::ALL`] order; `None` when no label of the category has a positive.
    pub per_category: [Option<f64>; 6],
    pub overall: Option<f64>,
    pub excluded_labels: Vec<usize>,
}

impl MapReport {
    pub fn category(&self, c: Category) -> Option<f64> {
        self.per_category[c.index()]
    }
}

/// Mean of the given category values.
pub fn overall_from_categories(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Overall mAP: the unweighted mean of the defined category means, or
/// `None` when no category is defined.
pub fn overall_map(per_category: &[Option<f64>; 6]) -> Option<f64> {
    let defined: Vec<f64> = per_category.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| overall_from_categories(&defined))
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

pub fn map_report(pred: &PredictionMatrix, taxonomy: &Taxonomy) -> Result<MapReport> {
    if pred.n_labels() != taxonomy.len() {
        return Err(Error::Shape(format!(
            "predictions have {} label columns, taxonomy has {} labels",
            pred.n_labels(),
            taxonomy.len()
        )));
    }
    let mut per_label = Vec::with_capacity(taxonomy.len());
    let mut excluded = Vec::new();
    for l in 0..taxonomy.len() {
        let ap = average_precision(
            &PredictionMatrix::column(&pred.scores, l),
            &PredictionMatrix::column(&pred.relevance, l),
        )?;
        if ap.is_none() {
            excluded.push(l);
        }
        per_label.push((l, ap));
    }
    let mut per_category = [None; 6];
    for c in Category::ALL {
        per_category[c.index()] = mean_defined(
            per_label
                .iter()
                .filter(|(l, _)| taxonomy.category_of(*l) == Some(c))
                .map(|(_, ap)| *ap),
        );
    }
    Ok(MapReport {
        per_label,
        per_category,
        overall: overall_map(&per_category),
        excluded_labels: excluded,
    })
}

/// Fraction of rows whose arg-max (lowest label id on ties) equals the label.
pub fn top1_accuracy(scores: &Tensor, labels: &[usize]) -> Result<f64> {
    if scores.ndim() != 2 || scores.dim(0) != labels.len() {
        return Err(Error::LengthMismatch {
            left: if scores.ndim() == 2 { scores.dim(0) } else { 0 },
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let w = scores.dim(1);
    let correct = scores
        .data()
        .chunks(w.max(1))
        .zip(labels)
        .filter(|(row, &y)| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best == y
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Best one-to-one matching of clusters to classes, as a fraction of items.
pub fn clustering_accuracy(assignments: &[usize], labels: &[usize], k: usize) -> Result<f64> {
    if assignments.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: assignments.len(),
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let k = k.max(assignments.iter().max().map_or(0, |m| m + 1));
    let c = labels.iter().max().map_or(0, |m| m + 1);
    let n = k.max(c);
    let mut table = vec![vec![0i64; n]; n];
    for (&a, &y) in assignments.iter().zip(labels) {
        table[a][y] += 1;
    }
    let matched = max_weight_matching(&table);
    Ok(matched as f64 / labels.len() as f64)
}

/// Hungarian algorithm on a square matrix, maximising the matched total.
fn max_weight_matching(weights: &[Vec<i64>]) -> i64 {
    let n = weights.len();
    let big = weights.iter().flatten().copied().max().unwrap_or(0);
    // Minimise big - w with the classic potentials formulation (1-based).
    let cost = |i: usize, j: usize| big - weights[i - 1][j - 1];
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).filter(|&j| p[j] != 0).map(|j| weights[p[j] - 1][j - 1]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Materialises the ranked list and evaluates precision at every cut.
    fn brute_ap(scores: &[f64], rel: &[f64]) -> Option<f64> {
        let mut items: Vec<(f64, usize, bool)> =
            scores.iter().zip(rel).enumerate().map(|(i, (&s, &r))| (s, i, r > 0.0)).collect();
        // Bubble sort keeps the oracle independent of the library sort.
        for a in 0..items.len() {
            for b in 0..items.len() - 1 - a {
                let (x, y) = (items[b], items[b + 1]);
                if y.0 > x.0 || (y.0 == x.0 && y.1 < x.1) {
                    items.swap(b, b + 1);
                }
            }
        }
        let p = items.iter().filter(|t| t.2).count();
        if p == 0 {
            return None;
        }
        let mut total = 0.0;
        for k in 1..=items.len() {
            if items[k - 1].2 {
                let top = items[..k].iter().filter(|t| t.2).count();
                total += top as f64 / k as f64;
            }
        }
        Some(total / p as f64)
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    /// Tries every injective map from clusters to classes.
    fn brute_clustering(assign: &[usize], labels: &[usize], k: usize) -> f64 {
        let c = labels.iter().max().map_or(0, |m| m + 1);
        let n = k.max(c);
        let mut best = 0;
        for perm in permutations(n) {
            let hits = assign.iter().zip(labels).filter(|(&a, &y)| perm[a] == y).count();
            best = best.max(hits);
        }
        best as f64 / labels.len() as f64
    }

    #[test]
    fn perfect_ranking_scores_one() {
        let ap = average_precision(&[0.9, 0.8, 0.2, 0.1], &[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(ap, Some(1.0));
    }

    #[test]
    fn no_positives_is_undefined() {
        assert_eq!(average_precision(&[0.3, 0.1], &[0.0, 0.0]).unwrap(), None);
    }

    #[test]
    fn hand_example() {
        let ap = average_precision(&[0.9, 0.8, 0.7, 0.6], &[1.0, 0.0, 1.0, 0.0]).unwrap().unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn ties_break_by_index() {
        // Equal scores: index 0 (negative) ranks before index 1 (positive).
        let ap = average_precision(&[0.5, 0.5], &[0.0, 1.0]).unwrap().unwrap();
        assert!((ap - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nan_and_length_errors() {
        assert!(matches!(average_precision(&[0.1, f64::NAN], &[1.0, 0.0]), Err(Error::NanScore(1))));
        assert!(matches!(average_precision(&[0.1], &[1.0, 0.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn overall_reproduces_table_rows() {
        let rows: [([f64; 6], f64); 2] = [
            ([50.6, 28.6, 48.2, 35.9, 29.0, 22.5], 35.8),
            ([55.8, 34.2, 51.8, 38.5, 33.6, 26.1], 40.0),
        ];
        for (cats, overall) in rows {
            assert!((overall_from_categories(&cats) - overall).abs() <= 0.05);
        }
    }

    #[test]
    fn report_on_perfect_single_label() {
        let tax = Taxonomy::with_counts([0, 0, 1, 0, 0, 0]);
        let pred = PredictionMatrix::new(
            vec!["a".into(), "b".into()],
            Tensor::from_vec(&[2, 1], vec![0.9, 0.1]).unwrap(),
            Tensor::from_vec(&[2, 1], vec![1.0, 0.0]).unwrap(),
        )
        .unwrap();
        let r = map_report(&pred, &tax).unwrap();
        assert_eq!(r.per_label, vec![(0, Some(1.0))]);
        assert_eq!(r.category(Category::Action), Some(1.0));
        assert_eq!(r.category(Category::Scene), None);
        assert_eq!(r.overall, Some(1.0));
    }

    #[test]
    fn report_excludes_zero_positive_labels() {
        let tax = Taxonomy::with_counts([2, 1, 0, 0, 0, 0]);
        let pred = PredictionMatrix::new(
            vec!["a".into(), "b".into(), "c".into()],
            Tensor::from_vec(&[3, 3], vec![0.9, 0.1, 0.5, 0.2, 0.3, 0.6, 0.4, 0.8, 0.7]).unwrap(),
            Tensor::from_vec(&[3, 3], vec![1., 0., 0., 0., 0., 1., 1., 0., 0.]).unwrap(),
        )
        .unwrap();
        let r = map_report(&pred, &tax).unwrap();
        assert_eq!(r.excluded_labels, vec![1]);
        let scene = r.category(Category::Scene).unwrap();
        assert!((scene - r.per_label[0].1.unwrap()).abs() < 1e-15);
        let overall = (scene + r.category(Category::Object).unwrap()) / 2.0;
        assert!((r.overall.unwrap() - overall).abs() < 1e-15);
        assert!(map_report(&pred, &Taxonomy::with_counts([1, 1, 0, 0, 0, 0])).is_err());
    }

    #[test]
    fn prediction_matrix_validation() {
        let ids = vec!["a".into()];
        let bad = Tensor::from_vec(&[1, 2], vec![0.0, f64::INFINITY]).unwrap();
        assert!(PredictionMatrix::new(ids.clone(), bad, Tensor::zeros(&[1, 2])).is_err());
        let rel = Tensor::from_vec(&[1, 2], vec![0.0, 0.5]).unwrap();
        assert!(PredictionMatrix::new(ids, Tensor::zeros(&[1, 2]), rel).is_err());
    }

    #[test]
    fn top1_examples() {
        let s = Tensor::from_vec(&[3, 3], vec![0.1, 0.8, 0.1, 0.9, 0.0, 0.1, 0.2, 0.2, 0.6]).unwrap();
        assert_eq!(top1_accuracy(&s, &[1, 0, 2]).unwrap(), 1.0);
        let tied = Tensor::full(&[4, 2], 0.5);
        assert_eq!(top1_accuracy(&tied, &[0, 1, 0, 0]).unwrap(), 0.75);
        let s = Tensor::from_vec(&[4, 2], vec![0.9, 0.1, 0.2, 0.8, 0.7, 0.3, 0.6, 0.4]).unwrap();
        assert_eq!(top1_accuracy(&s, &[0, 1, 0, 1]).unwrap(), 0.75);
    }

    #[test]
    fn clustering_examples() {
        assert_eq!(clustering_accuracy(&[1, 1, 0, 0], &[0, 0, 1, 1], 2).unwrap(), 1.0);
        assert_eq!(clustering_accuracy(&[0, 1, 0, 1], &[0, 0, 1, 1], 2).unwrap(), 0.5);
        assert_eq!(clustering_accuracy(&[0; 5], &[2, 0, 2, 1, 2], 1).unwrap(), 0.6);
        assert!(clustering_accuracy(&[0, 1], &[0], 2).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn ap_matches_brute_force(
            rows in proptest::collection::vec(
                proptest::collection::vec((0u8..6, 0u8..2), 1..=5), 1..=8),
        ) {
            // rows[n][l]: coarse scores so that ties occur.
            let width = rows.iter().map(Vec::len).min().unwrap();
            for l in 0..width {
                let s: Vec<f64> = rows.iter().map(|r| r[l].0 as f64 / 5.0).collect();
                let y: Vec<f64> = rows.iter().map(|r| r[l].1 as f64).collect();
                let got = average_precision(&s, &y).unwrap();
                let want = brute_ap(&s, &y);
                match (got, want) {
                    (None, None) => {}
                    (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-9),
                    _ => prop_assert!(false, "definedness differs"),
                }
            }
        }

        #[test]
        fn clustering_matches_brute_force(
            k in 1usize..=4,
            items in proptest::collection::vec((0usize..4, 0usize..4), 1..12),
        ) {
            let assign: Vec<usize> = items.iter().map(|p| p.0 % k).collect();
            let labels: Vec<usize> = items.iter().map(|p| p.1).collect();
            let got = clustering_accuracy(&assign, &labels, k).unwrap();
            prop_assert!((got - brute_clustering(&assign, &labels, k)).abs() < 1e-12);
        }

        #[test]
        fn ap_is_invariant_under_increasing_maps(
            items in proptest::collection::vec((-5.0f64..5.0, 0u8..2), 1..20),
        ) {
            let s: Vec<f64> = items.iter().map(|p| p.0).collect();
            let y: Vec<f64> = items.iter().map(|p| p.1 as f64).collect();
            let t: Vec<f64> = s.iter().map(|v| libm::exp(*v) * 3.0 + 1.0).collect();
            let a = average_precision(&s, &y).unwrap();
            prop_assert_eq!(a, average_precision(&t, &y).unwrap());
            if let Some(v) = a {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn reversed_ranking_closed_form(n in 1usize..30, p_frac in 0.0f64..1.0) {
            let p = ((n as f64 * p_frac) as usize).max(1);
            // Positives get the lowest scores.
            let s: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
            let y: Vec<f64> = (0..n).map(|i| if i >= n - p { 1.0 } else { 0.0 }).collect();
            let got = average_precision(&s, &y).unwrap().unwrap();
            let want: f64 = (1..=p).map(|i| i as f64 / (n - p + i) as f64).sum::<f64>() / p as f64;
            prop_assert!((got - want).abs() < 1e-12);
        }

        #[test]
        fn clustering_ignores_id_permutations(
            items in proptest::collection::vec((0usize..3, 0usize..3), 1..15),
            seed in any::<u64>(),
        ) {
            let assign: Vec<usize> = items.iter().map(|p| p.0).collect();
            let labels: Vec<usize> = items.iter().map(|p| p.1).collect();
            let base = clustering_accuracy(&assign, &labels, 3).unwrap();
            let mut r = crate::rng::rng(seed);
            let pa = crate::rng::permutation(&mut r, 3);
            let pl = crate::rng::permutation(&mut r, 3);
            let a2: Vec<usize> = assign.iter().map(|&a| pa[a]).collect();
            let l2: Vec<usize> = labels.iter().map(|&l| pl[l]).collect();
            prop_assert!((clustering_accuracy(&a2, &l2, 3).unwrap() - base).abs() < 1e-12);
        }
    }
}

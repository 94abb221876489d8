//! Evaluation metrics: component alignment and parameter errors, mixing
//! field MISE, AUC, IoU, ARI, and the collapse of K clusters to a binary
//! score.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::gmm::MixtureParams;
use crate::joint::argmax;
use crate::local::LocalMixingField;
use crate::simulate::{MixingOracle, Scenario};

/// Estimated-to-true component matching with per-parameter squared errors.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedComparison {
    /// `permutation[j]` is the true index matched to estimated component `j`.
    pub permutation: Vec<usize>,
    /// Mean squared entry-wise error keyed by `mu_k`, `Sigma_k` (true
    /// index, one-based) and `pi`.
    pub errors: BTreeMap<String, f64>,
}

impl AlignedComparison {
    /// Estimated component matched to true component `k` (zero-based).
    pub fn estimated_for(&self, k: usize) -> usize {
        self.permutation.iter().position(|&t| t == k).expect("bijection")
    }

    pub fn error(&self, name: &str) -> f64 {
        self.errors[name]
    }
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for perm in permutations(k - 1) {
        for pos in 0..=perm.len() {
            let mut p = perm.clone();
            p.insert(pos, k - 1);
            out.push(p);
        }
    }
    out.sort();
    out
}

const MAX_BRUTE_FORCE_K: usize = 8;

/// Match components by minimizing the summed squared mean distance over all
/// K! assignments.
pub fn align_components(est: &MixtureParams, truth: &MixtureParams) -> Result<AlignedComparison> {
    let k = truth.k();
    if est.k() != k || est.dim() != truth.dim() {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: est.k(),
        });
    }
    if k > MAX_BRUTE_FORCE_K {
        return Err(Error::InvalidInput(format!("alignment supports K <= {MAX_BRUTE_FORCE_K}")));
    }
    let cost = |e: usize, t: usize| (est.components[e].mean() - truth.components[t].mean()).norm_squared();
    // assignment[t] = estimated index for true component t
    let assignment = permutations(k)
        .into_iter()
        .map(|a| {
            let c: f64 = a.iter().enumerate().map(|(t, &e)| cost(e, t)).sum();
            (a, c)
        })
        .fold((Vec::new(), f64::INFINITY), |best, cand| if cand.1 < best.1 { cand } else { best })
        .0;

    let p = truth.dim() as f64;
    let mut errors = BTreeMap::new();
    let mut pi_err = 0.0;
    for (t, &e) in assignment.iter().enumerate() {
        let (ce, ct) = (&est.components[e], &truth.components[t]);
        errors.insert(format!("mu_{}", t + 1), (ce.mean() - ct.mean()).norm_squared() / p);
        errors.insert(
            format!("Sigma_{}", t + 1),
            (ce.covariance() - ct.covariance()).norm_squared() / (p * p),
        );
        pi_err += (est.mixing[e] - truth.mixing[t]).powi(2);
    }
    errors.insert("pi".into(), pi_err / k as f64);
    let mut permutation = vec![0; k];
    for (t, &e) in assignment.iter().enumerate() {
        permutation[e] = t;
    }
    Ok(AlignedComparison { permutation, errors })
}

/// `N⁻¹ Σᵢ (π̂₁(sᵢ) − π₁(sᵢ))²` over the field's query points, using the
/// estimated component aligned with true class 1.
pub fn mise_mixing(field: &LocalMixingField, scenario: &Scenario, alignment: &AlignedComparison) -> Result<f64> {
    let oracle = MixingOracle::new(scenario)?;
    mise_with_oracle(field, &oracle, alignment)
}

pub fn mise_with_oracle(field: &LocalMixingField, oracle: &MixingOracle, alignment: &AlignedComparison) -> Result<f64> {
    if field.is_empty() {
        return Err(Error::InvalidInput("empty mixing field".into()));
    }
    let slot = alignment.estimated_for(0);
    let mut total = 0.0;
    for (i, &s) in field.query_points().iter().enumerate() {
        let truth = oracle.local_mixing(s)?;
        total += (field.row(i)[slot] - truth[0]).powi(2);
    }
    Ok(total / field.len() as f64)
}

/// Mann–Whitney AUC with ties counted as one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            found: scores.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of mid-ranks of positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&o| labels[o]).count() as f64;
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// `|pred ∧ truth| / |pred ∨ truth|`, and 1 when both masks are empty.
pub fn iou(pred: &[bool], truth: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.iter().zip(truth) {
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn choose2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index of two partitions.
///
/// When both partitions are a single cluster (or both all singletons) the
/// index is undefined; 1 is returned since the partitions agree.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidInput("ARI needs at least two items".into()));
    }
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut cols: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sa: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sb: f64 = cols.values().map(|&n| choose2(n)).sum();
    let expected = sa * sb / choose2(a.len());
    let max = 0.5 * (sa + sb);
    if max - expected == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Tumour scores from K-cluster posteriors: cluster `k` counts as class 1
/// when most instances hard-assigned to it carry reference label 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryIntegration {
    pub scores: Vec<f64>,
    pub cluster_to_class: Vec<bool>,
}

pub fn integrate_to_binary(posteriors: &[f64], k: usize, reference: &[bool]) -> Result<BinaryIntegration> {
    let n = reference.len();
    if k == 0 || posteriors.len() != n * k {
        return Err(Error::DimensionMismatch {
            expected: n * k,
            found: posteriors.len(),
        });
    }
    if reference.iter().all(|&r| r) || reference.iter().all(|&r| !r) {
        return Err(Error::SingleClass);
    }
    let mut hits = vec![0usize; k];
    let mut sizes = vec![0usize; k];
    for (row, &r) in posteriors.chunks(k).zip(reference) {
        let j = argmax(row);
        sizes[j] += 1;
        hits[j] += usize::from(r);
    }
    let cluster_to_class: Vec<bool> = hits
        .iter()
        .zip(&sizes)
        .map(|(&h, &s)| s > 0 && 2 * h > s)
        .collect();
    let scores = posteriors
        .chunks(k)
        .map(|row| row.iter().zip(&cluster_to_class).filter(|(_, &c)| c).map(|(v, _)| v).sum())
        .collect();
    Ok(BinaryIntegration {
        scores,
        cluster_to_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::GaussianComponent;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(means: &[[f64; 2]]) -> MixtureParams {
        let k = means.len();
        MixtureParams::new(
            means
                .iter()
                .enumerate()
                .map(|(j, m)| {
                    GaussianComponent::new(DVector::from_column_slice(m), DMatrix::identity(2, 2) * (1.0 + j as f64))
                        .unwrap()
                })
                .collect(),
            vec![1.0 / k as f64; k],
        )
        .unwrap()
    }

    /// O(N²) pair counting.
    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] && !labels[j] {
                    den += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    /// Pair-counting ARI over all N(N−1)/2 pairs.
    fn brute_ari(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let (mut both, mut only_a, mut only_b, mut pairs) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                let sa = a[i] == a[j];
                let sb = b[i] == b[j];
                pairs += 1.0;
                if sa && sb {
                    both += 1.0;
                }
                if sa {
                    only_a += 1.0;
                }
                if sb {
                    only_b += 1.0;
                }
            }
        }
        let expected = only_a * only_b / pairs;
        (both - expected) / (0.5 * (only_a + only_b) - expected)
    }

    #[test]
    fn alignment_cases() {
        let truth = params(&[[1.0, 1.0], [-1.0, -1.0]]);
        let same = align_components(&truth, &truth).unwrap();
        assert_eq!(same.permutation, vec![0, 1]);
        assert!(same.errors.values().all(|&e| e == 0.0));

        let swapped = truth.permuted(&[1, 0]);
        let c = align_components(&swapped, &truth).unwrap();
        assert_eq!(c.permutation, vec![1, 0]);
        assert!(c.errors.values().all(|&e| e == 0.0));

        // μ̂₁ = μ₂ + δ, μ̂₂ = μ₁
        let delta = [0.3, -0.1];
        let est = MixtureParams::new(
            vec![
                GaussianComponent::new(
                    DVector::from_vec(vec![-1.0 + delta[0], -1.0 + delta[1]]),
                    truth.components[1].covariance().clone(),
                )
                .unwrap(),
                truth.components[0].clone(),
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let c = align_components(&est, &truth).unwrap();
        assert_eq!(c.permutation, vec![1, 0]);
        let expected = (delta[0] * delta[0] + delta[1] * delta[1]) / 2.0;
        assert!((c.error("mu_2") - expected).abs() < 1e-15);
        assert_eq!(c.error("mu_1"), 0.0);
        assert!(align_components(&params(&[[0.0, 0.0]]), &truth).is_err());
    }

    #[test]
    fn alignment_errors_are_permutation_invariant() {
        let truth = params(&[[1.0, 0.0], [0.0, 2.0], [-2.0, -1.0]]);
        let est = params(&[[0.1, 2.2], [-1.8, -1.1], [1.2, 0.1]]);
        let base = align_components(&est, &truth).unwrap();
        for perm in permutations(3) {
            let c = align_components(&est.permuted(&perm), &truth).unwrap();
            assert_eq!(c.errors, base.errors);
        }
    }

    #[test]
    fn mise_cases() {
        use crate::simulate::{study1_scenario, MixingOracle};
        let scenario = study1_scenario(2, 3, 0);
        let oracle = MixingOracle::new(&scenario).unwrap();
        let pts = vec![[1.0, 1.0], [0.0, 0.0], [-0.5, 0.2]];
        let truth_rows: Vec<f64> = pts.iter().flat_map(|&s| oracle.local_mixing(s).unwrap()).collect();
        let exact = LocalMixingField::new(2, pts.clone(), truth_rows.clone(), vec![false; 3]).unwrap();
        let ident = align_components(&scenario.params().unwrap(), &scenario.params().unwrap()).unwrap();
        assert_eq!(mise_mixing(&exact, &scenario, &ident).unwrap(), 0.0);

        // 3-point toy field: gaps computed by hand from the oracle values
        let field = LocalMixingField::new(2, pts.clone(), vec![0.9, 0.1, 0.5, 0.5, 0.2, 0.8], vec![false; 3]).unwrap();
        let gaps = [0.9 - truth_rows[0], 0.5 - truth_rows[2], 0.2 - truth_rows[4]];
        let expected = gaps.iter().map(|g| g * g).sum::<f64>() / 3.0;
        assert!((mise_mixing(&field, &scenario, &ident).unwrap() - expected).abs() < 1e-15);

        // swapped labels read the other column
        let swapped = AlignedComparison {
            permutation: vec![1, 0],
            errors: BTreeMap::new(),
        };
        let flipped: Vec<f64> = truth_rows.chunks(2).flat_map(|r| [r[1], r[0]]).collect();
        let flipped = LocalMixingField::new(2, pts, flipped, vec![false; 3]).unwrap();
        assert!(mise_mixing(&flipped, &scenario, &swapped).unwrap() < 1e-30);
    }

    #[test]
    fn auc_cases() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]).unwrap(), 0.0);
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
        assert_eq!(auc(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.2], &[true, true]), Err(Error::SingleClass));
    }

    #[test]
    fn iou_cases() {
        assert_eq!(iou(&[true, false, true], &[true, false, true]), 1.0);
        assert_eq!(iou(&[true, false], &[false, true]), 0.0);
        assert!((iou(&[true, true, false, false], &[true, false, true, false]) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&[false, false], &[false, false]), 1.0);
    }

    #[test]
    fn ari_cases() {
        assert_eq!(ari(&[1, 1, 2, 2], &[1, 1, 2, 2]).unwrap(), 1.0);
        assert_eq!(ari(&[1, 1, 2, 2], &[2, 2, 1, 1]).unwrap(), 1.0);
        let v = ari(&[1, 1, 2, 2], &[1, 2, 1, 2]).unwrap();
        assert!((v - brute_ari(&[1, 1, 2, 2], &[1, 2, 1, 2])).abs() < 1e-12);
        assert!((v + 0.5).abs() < 1e-12);
        assert_eq!(ari(&[3, 3, 3], &[1, 1, 1]).unwrap(), 1.0);
        assert!(ari(&[1], &[1]).is_err());
    }

    #[test]
    fn binary_integration_cases() {
        // K = 2, cluster 1 pure tumour
        let post = [0.9, 0.1, 0.8, 0.2, 0.3, 0.7, 0.1, 0.9];
        let r = integrate_to_binary(&post, 2, &[true, true, false, false]).unwrap();
        assert_eq!(r.cluster_to_class, vec![true, false]);
        assert_eq!(r.scores, vec![0.9, 0.8, 0.3, 0.1]);

        // K = 4 with clusters 1 and 3 majority tumour
        let post = [
            0.7, 0.1, 0.1, 0.1, //
            0.1, 0.7, 0.1, 0.1, //
            0.1, 0.1, 0.7, 0.1, //
            0.1, 0.1, 0.1, 0.7,
        ];
        let r = integrate_to_binary(&post, 4, &[true, false, true, false]).unwrap();
        assert_eq!(r.cluster_to_class, vec![true, false, true, false]);
        for (i, s) in r.scores.iter().enumerate() {
            assert!((s - (post[i * 4] + post[i * 4 + 2])).abs() < 1e-15);
        }
        assert_eq!(integrate_to_binary(&post, 4, &[true; 4]), Err(Error::SingleClass));
    }

    proptest! {
        #[test]
        fn auc_matches_pair_counting(
            data in prop::collection::vec((0u8..20, any::<bool>()), 2..200)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 7.0).collect();
            let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            prop_assert_eq!(auc(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
        }

        #[test]
        fn ari_matches_pair_counting_and_relabeling(
            a in prop::collection::vec(0usize..4, 3..60),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut b: Vec<usize> = a.iter().map(|&x| (x * 7 + seed as usize) % 3).collect();
            b.shuffle(&mut rng);
            let v = ari(&a, &b).unwrap();
            let sa = a.iter().collect::<std::collections::HashSet<_>>().len();
            let sb = b.iter().collect::<std::collections::HashSet<_>>().len();
            if sa > 1 || sb > 1 {
                let brute = brute_ari(&a, &b);
                if brute.is_finite() {
                    prop_assert!((v - brute).abs() < 1e-12);
                }
            }
            for _ in 0..20 {
                let mut relabel: Vec<usize> = (0..4).collect();
                relabel.shuffle(&mut rng);
                let a2: Vec<usize> = a.iter().map(|&x| relabel[x] + 10).collect();
                prop_assert!((ari(&a2, &b).unwrap() - v).abs() < 1e-12);
                prop_assert!((ari(&b, &a2).unwrap() - v).abs() < 1e-12);
            }
        }

        #[test]
        fn iou_symmetric_and_monotone(
            pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..50)
        ) {
            let pred: Vec<bool> = pairs.iter().map(|p| p.0).collect();
            let truth: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            let base = iou(&pred, &truth);
            prop_assert_eq!(base, iou(&truth, &pred));
            for i in 0..pred.len() {
                if pred[i] == truth[i] {
                    let mut flipped = pred.clone();
                    flipped[i] = !flipped[i];
                    prop_assert!(iou(&flipped, &truth) <= base);
                }
            }
        }
    }
}

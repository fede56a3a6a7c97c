//! Global interpretability through prototypes in the model's embedding space.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{HainError, Result};
use crate::model::{embed, HainParams};
use crate::numerics::Rng;

/// Default similarity threshold for neighborhood membership.
pub const DEFAULT_THETA: f64 = 0.5;
/// Subsample size for the median-distance bandwidth.
pub const SIGMA_SUBSAMPLE: usize = 1000;
/// Lloyd iterations stop once no centroid moves farther than this.
pub const KMEANS_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub prototypes: Vec<Vec<f64>>,
    pub sigma: f64,
    pub theta: f64,
    /// Majority class of each prototype's final neighborhood, if any.
    #[serde(default)]
    pub labels: Option<Vec<Option<usize>>>,
}

impl PrototypeSet {
    pub fn new(prototypes: Vec<Vec<f64>>, sigma: f64, theta: f64) -> Result<Self> {
        let set = PrototypeSet {
            prototypes,
            sigma,
            theta,
            labels: None,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.prototypes.is_empty() {
            return Err(HainError::contract("need at least one prototype"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(HainError::contract(format!(
                "bandwidth must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(HainError::contract(format!(
                "threshold must be in (0, 1), got {}",
                self.theta
            )));
        }
        let dim = self.prototypes[0].len();
        if self.prototypes.iter().any(|p| p.len() != dim) {
            return Err(HainError::shape("prototypes of unequal width"));
        }
        if self.prototypes.iter().flatten().any(|v| !v.is_finite()) {
            return Err(HainError::contract("prototype has non-finite entries"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    /// Similarity of an embedded point to every prototype, in prototype order.
    pub fn similarities(&self, point: &[f64]) -> Vec<f64> {
        self.prototypes
            .iter()
            .map(|p| similarity(point, p, self.sigma))
            .collect()
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// RBF similarity `exp(-|a - b|^2 / sigma^2)`.
pub fn similarity(a: &[f64], b: &[f64], sigma: f64) -> f64 {
    (-squared_distance(a, b) / (sigma * sigma)).exp()
}

/// Median pairwise distance over at most [`SIGMA_SUBSAMPLE`] points, or 1
/// when every sampled pair coincides.
pub fn median_heuristic_sigma(points: &[Vec<f64>], rng: &mut Rng) -> f64 {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    if idx.len() > SIGMA_SUBSAMPLE {
        rng.shuffle(&mut idx);
        idx.truncate(SIGMA_SUBSAMPLE);
    }
    let mut dists = Vec::with_capacity(idx.len() * idx.len().saturating_sub(1) / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            dists.push(squared_distance(&points[i], &points[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    let mid = dists.len() / 2;
    let (_, &mut median, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to the nearest centroid, recorded after
    /// seeding and after every Lloyd iteration.
    pub distortion: Vec<f64>,
    pub iterations: usize,
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(j, c)| (j, squared_distance(point, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn distortion(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> f64 {
    points.iter().map(|p| nearest(p, centroids).1).sum()
}

/// k-means++ seeding followed by Lloyd iterations.
pub fn kmeans_init(points: &[Vec<f64>], k: usize, rng: &mut Rng, max_iter: usize) -> Result<KMeans> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(HainError::contract(format!(
            "cannot place {k} centroids among {n} points"
        )));
    }
    let dim = points[0].len();
    let mut chosen = vec![false; n];
    let first = rng.below(n);
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.uniform() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total has a positive entry")
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.below(free.len())]
        };
        chosen[pick] = true;
        centroids.push(points[pick].clone());
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(squared_distance(p, &points[pick]));
        }
    }

    let mut history = vec![distortion(points, &centroids)];
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for p in points {
            let (j, _) = nearest(p, &centroids);
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let next: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            shift = shift.max(squared_distance(&next, &centroids[j]).sqrt());
            centroids[j] = next;
        }
        history.push(distortion(points, &centroids));
        if shift < KMEANS_TOLERANCE {
            break;
        }
    }
    Ok(KMeans {
        centroids,
        distortion: history,
        iterations,
    })
}

/// Per epoch, moves each prototype to the centroid of the points whose
/// similarity to it exceeds `theta`; prototypes with no such point stay put.
/// All neighborhoods of an epoch use the prototypes from its start.
pub fn refine_prototypes(points: &[Vec<f64>], set: &PrototypeSet, epochs: usize) -> Result<PrototypeSet> {
    set.validate()?;
    let mut out = set.clone();
    for _ in 0..epochs {
        let members = neighborhoods(points, &out);
        for (proto, idx) in out.prototypes.iter_mut().zip(&members) {
            if idx.is_empty() {
                continue;
            }
            let mut c = vec![0.0; proto.len()];
            for &i in idx {
                for (s, v) in c.iter_mut().zip(&points[i]) {
                    *s += v;
                }
            }
            c.iter_mut().for_each(|s| *s /= idx.len() as f64);
            *proto = c;
        }
    }
    Ok(out)
}

/// Indices of points with similarity above `theta`, per prototype.
pub fn neighborhoods(points: &[Vec<f64>], set: &PrototypeSet) -> Vec<Vec<usize>> {
    set.prototypes
        .iter()
        .map(|p| {
            (0..points.len())
                .filter(|&i| similarity(&points[i], p, set.sigma) > set.theta)
                .collect()
        })
        .collect()
}

/// Majority label of each final neighborhood; ties go to the smaller class.
pub fn assign_labels(points: &[Vec<f64>], labels: &[usize], set: &mut PrototypeSet) {
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let majority = neighborhoods(points, set)
        .into_iter()
        .map(|idx| {
            let mut votes = vec![0usize; k];
            for i in idx {
                votes[labels[i]] += 1;
            }
            let best = votes
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
            (*best.1 > 0).then_some(best.0)
        })
        .collect();
    set.labels = Some(majority);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeOptions {
    pub n_prototypes: usize,
    pub theta: f64,
    /// Bandwidth; the median heuristic when absent.
    pub sigma: Option<f64>,
    pub kmeans_iterations: usize,
    pub refine_epochs: usize,
    pub seed: u64,
}

impl PrototypeOptions {
    pub fn new(n_prototypes: usize) -> Self {
        PrototypeOptions {
            n_prototypes,
            theta: DEFAULT_THETA,
            sigma: None,
            kmeans_iterations: 100,
            refine_epochs: 10,
            seed: 0,
        }
    }
}

/// Embeds every row of `data` with the model's dense embedding.
pub fn embed_all(params: &HainParams, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    (0..data.n_samples()).map(|i| embed(params, data.row(i))).collect()
}

/// Full pipeline: embed, seed with k-means, refine, label by majority.
pub fn build_prototypes(params: &HainParams, data: &Dataset, opts: &PrototypeOptions) -> Result<PrototypeSet> {
    let points = embed_all(params, data)?;
    let root = Rng::new(opts.seed);
    let km = kmeans_init(&points, opts.n_prototypes, &mut root.derive(1), opts.kmeans_iterations)?;
    let sigma = match opts.sigma {
        Some(s) => s,
        None => median_heuristic_sigma(&points, &mut root.derive(2)),
    };
    let seeded = PrototypeSet::new(km.centroids, sigma, opts.theta)?;
    let mut set = refine_prototypes(&points, &seeded, opts.refine_epochs)?;
    assign_labels(&points, &data.y, &mut set);
    Ok(set)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedPrototype {
    pub prototype: usize,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub input_id: Option<String>,
    /// Descending by similarity; ties keep prototype order.
    pub ranking: Vec<RankedPrototype>,
}

impl SimilarityReport {
    pub fn from_similarities(input_id: Option<String>, sims: &[f64]) -> Self {
        let mut ranking: Vec<RankedPrototype> = sims
            .iter()
            .enumerate()
            .map(|(prototype, &similarity)| RankedPrototype { prototype, similarity })
            .collect();
        ranking.sort_by(|a, b| {
            b.similarity
                .total_cmp(&a.similarity)
                .then(a.prototype.cmp(&b.prototype))
        });
        SimilarityReport { input_id, ranking }
    }

    pub fn best(&self) -> usize {
        self.ranking[0].prototype
    }
}

/// Ranks prototypes by similarity to the embedding of `x`.
pub fn explain_by_prototype(
    params: &HainParams,
    set: &PrototypeSet,
    x: &[f64],
    input_id: Option<String>,
) -> Result<SimilarityReport> {
    let e = embed(params, x)?;
    if e.len() != set.prototypes[0].len() {
        return Err(HainError::shape(format!(
            "embedding width {} vs prototype width {}",
            e.len(),
            set.prototypes[0].len()
        )));
    }
    Ok(SimilarityReport::from_similarities(input_id, &set.similarities(&e)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn blobs(centers: &[Vec<f64>], per: usize, sd: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = Rng::new(seed);
        let mut pts = Vec::new();
        let mut lab = Vec::new();
        for i in 0..per * centers.len() {
            let c = i % centers.len();
            pts.push(centers[c].iter().map(|m| m + sd * rng.normal()).collect());
            lab.push(c);
        }
        (pts, lab)
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(similarity(&[1.0, 2.0], &[1.0, 2.0], 0.7), 1.0);
        assert_abs_diff_eq!(
            similarity(&[0.0, 0.0], &[3.0, 4.0], 5.0),
            (-1.0f64).exp(),
            epsilon = 1e-15
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn similarity_is_symmetric_bounded_and_monotone(
            a in proptest::collection::vec(-5.0f64..5.0, 3),
            b in proptest::collection::vec(-5.0f64..5.0, 3),
            sigma in 0.1f64..10.0,
            t in 1.0f64..3.0,
        ) {
            let s = similarity(&a, &b, sigma);
            prop_assert!(s == similarity(&b, &a, sigma));
            prop_assert!((0.0..=1.0).contains(&s));
            let far: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + t * (y - x)).collect();
            prop_assert!(similarity(&a, &far, sigma) <= s);
        }
    }

    #[test]
    fn one_centroid_is_the_mean() {
        let (pts, _) = blobs(&[vec![1.0, -2.0]], 50, 1.0, 3);
        let km = kmeans_init(&pts, 1, &mut Rng::new(0), 50).unwrap();
        for j in 0..2 {
            let mean = pts.iter().map(|p| p[j]).sum::<f64>() / 50.0;
            assert_abs_diff_eq!(km.centroids[0][j], mean, epsilon = 1e-12);
        }
    }

    #[test]
    fn as_many_centroids_as_points_has_zero_distortion() {
        let (pts, _) = blobs(&[vec![0.0, 0.0]], 7, 1.0, 4);
        let km = kmeans_init(&pts, 7, &mut Rng::new(1), 10).unwrap();
        assert_eq!(*km.distortion.last().unwrap(), 0.0);
        let mut got = km.centroids.clone();
        let mut want = pts.clone();
        got.sort_by(|a, b| a[0].total_cmp(&b[0]));
        want.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(got, want);
    }

    #[test]
    fn too_many_centroids_rejected() {
        assert!(matches!(
            kmeans_init(&[vec![0.0]], 2, &mut Rng::new(0), 5),
            Err(HainError::Contract(_))
        ));
    }

    #[test]
    fn two_separated_blobs_are_recovered() {
        let centers = vec![vec![0.0, 0.0], vec![10.0, 0.0]];
        let (pts, _) = blobs(&centers, 100, 1.0, 5);
        let km = kmeans_init(&pts, 2, &mut Rng::new(2), 100).unwrap();
        for c in &centers {
            let best = km
                .centroids
                .iter()
                .map(|k| squared_distance(k, c).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.5, "{best}");
        }
    }

    #[test]
    fn distortion_never_increases() {
        for seed in 0..10 {
            let (pts, _) = blobs(&[vec![0.0, 0.0], vec![3.0, 1.0], vec![1.0, 4.0]], 30, 1.5, seed);
            let km = kmeans_init(&pts, 4, &mut Rng::new(seed), 50).unwrap();
            assert!(
                km.distortion.windows(2).all(|w| w[1] <= w[0] + 1e-9),
                "{:?}",
                km.distortion
            );
        }
    }

    #[test]
    fn kmeans_is_deterministic_given_seed() {
        let (pts, _) = blobs(&[vec![0.0], vec![5.0]], 20, 1.0, 6);
        let a = kmeans_init(&pts, 3, &mut Rng::new(7), 20).unwrap();
        let b = kmeans_init(&pts, 3, &mut Rng::new(7), 20).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn refinement_fixed_point_and_empty_neighborhoods() {
        let pts = vec![vec![1.0, 1.0]; 5];
        let set = PrototypeSet::new(vec![vec![1.0, 1.0]], 1.0, 0.5).unwrap();
        assert_eq!(refine_prototypes(&pts, &set, 3).unwrap(), set);

        let far = PrototypeSet::new(vec![vec![100.0, 100.0], vec![-50.0, 0.0]], 1.0, 0.9).unwrap();
        assert_eq!(refine_prototypes(&pts, &far, 4).unwrap(), far);
    }

    #[test]
    fn single_blob_refines_to_its_mean() {
        let (pts, _) = blobs(&[vec![2.0, -1.0, 0.5]], 200, 1.0, 8);
        let set = PrototypeSet::new(vec![vec![1.0, 0.0, 0.0]], 5.0, 0.01).unwrap();
        let out = refine_prototypes(&pts, &set, 10).unwrap();
        for j in 0..3 {
            let mean = pts.iter().map(|p| p[j]).sum::<f64>() / pts.len() as f64;
            assert!((out.prototypes[0][j] - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn invalid_sets_rejected() {
        assert!(PrototypeSet::new(vec![], 1.0, 0.5).is_err());
        assert!(PrototypeSet::new(vec![vec![0.0]], 0.0, 0.5).is_err());
        assert!(PrototypeSet::new(vec![vec![0.0]], 1.0, 1.0).is_err());
        assert!(PrototypeSet::new(vec![vec![f64::NAN]], 1.0, 0.5).is_err());
    }

    #[test]
    fn median_sigma_examples() {
        let pts = vec![vec![0.0], vec![1.0], vec![3.0]];
        // Pairwise distances 1, 3, 2.
        assert_eq!(median_heuristic_sigma(&pts, &mut Rng::new(0)), 2.0);
        assert_eq!(median_heuristic_sigma(&[vec![4.0], vec![4.0]], &mut Rng::new(0)), 1.0);
    }

    #[test]
    fn labels_follow_majority() {
        let (pts, lab) = blobs(&[vec![0.0, 0.0], vec![20.0, 0.0]], 10, 0.5, 9);
        let mut set = PrototypeSet::new(vec![vec![0.0, 0.0], vec![20.0, 0.0], vec![500.0, 0.0]], 3.0, 0.5).unwrap();
        assign_labels(&pts, &lab, &mut set);
        assert_eq!(set.labels, Some(vec![Some(0), Some(1), None]));
    }

    #[test]
    fn report_is_sorted_and_bounded() {
        let r = SimilarityReport::from_similarities(Some("x".into()), &[0.2, 0.9, 0.2, 1.0]);
        let order: Vec<usize> = r.ranking.iter().map(|p| p.prototype).collect();
        assert_eq!(order, vec![3, 1, 0, 2]);
        assert!(r.ranking.iter().all(|p| p.similarity > 0.0 && p.similarity <= 1.0));
    }

    #[test]
    fn seeded_prototype_ranks_its_sample_first() {
        use crate::model::{init_params, HainConfig};
        let cfg = HainConfig::new(5, 2);
        let params = init_params(&cfg, &Rng::new(3)).unwrap();
        let mut rng = Rng::new(4);
        let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..5).map(|_| rng.normal() * 3.0).collect()).collect();
        let embedded: Vec<Vec<f64>> = xs.iter().map(|x| embed(&params, x).unwrap()).collect();
        let set = PrototypeSet::new(embedded.clone(), 1.0, 0.5).unwrap();
        for (j, x) in xs.iter().enumerate() {
            if embedded.iter().enumerate().any(|(i, e)| i != j && e == &embedded[j]) {
                continue;
            }
            let r = explain_by_prototype(&params, &set, x, None).unwrap();
            assert_eq!(r.best(), j);
            assert_eq!(r.ranking[0].similarity, 1.0);
        }
    }
}

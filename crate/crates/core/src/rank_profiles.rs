//! Per-image region ranks and their dataset-level aggregates.

use std::str::FromStr;

use ndarray::ArrayD;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interchange::{AttributionMap, ModelTag};
use crate::partitioning::Partition;

/// Region summary statistic.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// Mean attribution inside the region.
    #[default]
    Mean,
    /// Fraction of region pixels at or above the image-wide median attribution.
    Saliency,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Median,
    Mean,
}

/// Whether images are ranked before aggregation or scores are averaged first.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Order {
    #[default]
    RankAgg,
    AggRank,
}

macro_rules! parse_enum {
    ($t:ty, $($s:literal => $v:expr),+) => {
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    _ => Err(Error::BadConfig(format!(
                        concat!("unknown ", stringify!($t), " {:?}"), s
                    ))),
                }
            }
        }
    };
}

parse_enum!(Statistic, "mean" => Statistic::Mean, "saliency" => Statistic::Saliency);
parse_enum!(Aggregation, "median" => Aggregation::Median, "mean" => Aggregation::Mean);
parse_enum!(Order, "rank-agg" => Order::RankAgg, "agg-rank" => Order::AggRank);

/// Ranks of one image's regions; 1 is the most important region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankVector {
    pub image_id: String,
    pub ranks: Vec<f64>,
}

/// Dataset-level aggregate of rank vectors for one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankProfile {
    pub model: ModelTag,
    pub values: Vec<f64>,
    pub aggregation: Aggregation,
    pub n_images: usize,
}

/// Linearly interpolated quantile of sorted values (`q` in `[0, 1]`).
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Summarises a map within each region of the partition.
///
/// Background pixels are ignored, including when computing the saliency
/// threshold.
pub fn region_scores(map: &ArrayD<f64>, partition: &Partition, statistic: Statistic) -> Result<Vec<f64>> {
    if map.shape() != partition.shape() {
        return Err(Error::ShapeMismatch {
            expected: partition.shape().to_vec(),
            found: map.shape().to_vec(),
        });
    }
    let n = partition.n_regions();
    let labels = partition.labels();
    let mut sums = vec![0.0f64; n];
    match statistic {
        Statistic::Mean => {
            for (&v, &l) in map.iter().zip(labels) {
                if l >= 0 {
                    sums[l as usize] += v;
                }
            }
        }
        Statistic::Saliency => {
            let mut pool: Vec<f64> = map
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l >= 0)
                .map(|(&v, _)| v)
                .collect();
            pool.sort_unstable_by(f64::total_cmp);
            let threshold = quantile_sorted(&pool, 0.5);
            for (&v, &l) in map.iter().zip(labels) {
                if l >= 0 && v >= threshold {
                    sums[l as usize] += 1.0;
                }
            }
        }
    }
    Ok(sums
        .into_iter()
        .zip(partition.region_sizes())
        .map(|(s, &size)| s / size as f64)
        .collect())
}

/// Descending fractional ranks; tied scores share the mean of the positions
/// they cover.
pub fn rank_scores(scores: &[f64]) -> Vec<f64> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// How a profile is formed from per-image rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileRule {
    /// Rank each image, then aggregate ranks.
    RankAgg(Aggregation),
    /// Average region scores, then rank once.
    AggRank,
}

impl ProfileRule {
    pub fn new(order: Order, agg: Aggregation) -> Self {
        match order {
            Order::RankAgg => ProfileRule::RankAgg(agg),
            Order::AggRank => ProfileRule::AggRank,
        }
    }
}

/// Per-image rows over `n` regions, stored row-major. Rows are rank vectors,
/// or raw region scores when built by [`RankMatrix::scores_from_maps`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankMatrix {
    pub n_regions: usize,
    pub image_ids: Vec<String>,
    pub ranks: Vec<f64>,
}

impl RankMatrix {
    pub fn from_vectors(vectors: &[RankVector]) -> Result<Self> {
        let first = vectors.first().ok_or(Error::EmptyInput("no rank vectors"))?;
        let n = first.ranks.len();
        let mut ranks = Vec::with_capacity(n * vectors.len());
        for v in vectors {
            if v.ranks.len() != n {
                return Err(Error::LengthMismatch(n, v.ranks.len()));
            }
            ranks.extend_from_slice(&v.ranks);
        }
        Ok(RankMatrix {
            n_regions: n,
            image_ids: vectors.iter().map(|v| v.image_id.clone()).collect(),
            ranks,
        })
    }

    /// Region scores of every map, unranked. Used for the
    /// aggregate-then-rank order.
    pub fn scores_from_maps(maps: &[AttributionMap], partition: &Partition, statistic: Statistic) -> Result<Self> {
        let vectors = maps
            .par_iter()
            .map(|m| {
                Ok(RankVector {
                    image_id: m.image_id.clone(),
                    ranks: region_scores(&m.values, partition, statistic)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        RankMatrix::from_vectors(&vectors)
    }

    /// Scores and ranks every map.
    pub fn from_maps(maps: &[AttributionMap], partition: &Partition, statistic: Statistic) -> Result<Self> {
        let vectors = maps
            .par_iter()
            .map(|m| {
                Ok(RankVector {
                    image_id: m.image_id.clone(),
                    ranks: rank_scores(&region_scores(&m.values, partition, statistic)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        RankMatrix::from_vectors(&vectors)
    }

    pub fn n_images(&self) -> usize {
        self.image_ids.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.ranks[i * self.n_regions..(i + 1) * self.n_regions]
    }

    pub fn vectors(&self) -> Vec<RankVector> {
        self.image_ids
            .iter()
            .enumerate()
            .map(|(i, id)| RankVector {
                image_id: id.clone(),
                ranks: self.row(i).to_vec(),
            })
            .collect()
    }

    /// Componentwise aggregate over all images.
    pub fn aggregate(&self, op: Aggregation) -> Vec<f64> {
        let rows: Vec<usize> = (0..self.n_images()).collect();
        self.aggregate_rows(&rows, op, &mut Vec::new())
    }

    /// Componentwise aggregate over the selected rows (repeats allowed).
    /// `scratch` is reused across calls to avoid allocation.
    pub fn aggregate_rows(&self, rows: &[usize], op: Aggregation, scratch: &mut Vec<f64>) -> Vec<f64> {
        let n = self.n_regions;
        match op {
            Aggregation::Mean => {
                let mut out = vec![0.0; n];
                for &i in rows {
                    for (o, r) in out.iter_mut().zip(self.row(i)) {
                        *o += r;
                    }
                }
                out.iter_mut().for_each(|o| *o /= rows.len() as f64);
                out
            }
            Aggregation::Median => (0..n)
                .map(|r| {
                    scratch.clear();
                    scratch.extend(rows.iter().map(|&i| self.ranks[i * n + r]));
                    median_in_place(scratch)
                })
                .collect(),
        }
    }

    /// Profile from the selected rows under `rule`. For
    /// [`ProfileRule::AggRank`] the rows must hold region scores rather than
    /// ranks.
    pub fn profile_rows(&self, rows: &[usize], rule: ProfileRule, scratch: &mut Vec<f64>) -> Vec<f64> {
        match rule {
            ProfileRule::RankAgg(op) => self.aggregate_rows(rows, op, scratch),
            ProfileRule::AggRank => rank_scores(&self.aggregate_rows(rows, Aggregation::Mean, scratch)),
        }
    }

    pub fn profile(&self, model: ModelTag, op: Aggregation) -> RankProfile {
        RankProfile {
            model,
            values: self.aggregate(op),
            aggregation: op,
            n_images: self.n_images(),
        }
    }
}

/// Median with the midpoint rule for even counts. Reorders `values`.
pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    let m = values.len();
    let mid = m / 2;
    let (_, hi, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *hi;
    if m % 2 == 1 {
        hi
    } else {
        let lo = values[..mid].iter().copied().max_by(f64::total_cmp).unwrap();
        (lo + hi) / 2.0
    }
}

/// Componentwise median or mean of rank vectors.
pub fn aggregate_profiles(vectors: &[RankVector], op: Aggregation) -> Result<Vec<f64>> {
    Ok(RankMatrix::from_vectors(vectors)?.aggregate(op))
}

/// Averages region scores over images first and ranks the mean once.
pub fn aggregate_then_rank(
    model: ModelTag,
    maps: &[AttributionMap],
    partition: &Partition,
    statistic: Statistic,
) -> Result<RankProfile> {
    if maps.is_empty() {
        return Err(Error::EmptyInput("no attribution maps"));
    }
    let per_image = maps
        .par_iter()
        .map(|m| region_scores(&m.values, partition, statistic))
        .collect::<Result<Vec<_>>>()?;
    let mut mean = vec![0.0; partition.n_regions()];
    for s in &per_image {
        for (acc, v) in mean.iter_mut().zip(s) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= maps.len() as f64);
    Ok(RankProfile {
        model,
        values: rank_scores(&mean),
        aggregation: Aggregation::Mean,
        n_images: maps.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partitioning::grid_partition;
    use ndarray::IxDyn;
    use proptest::prelude::*;

    fn map(shape: &[usize], v: Vec<f64>) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(shape), v).unwrap()
    }

    fn amap(id: &str, values: ArrayD<f64>) -> AttributionMap {
        AttributionMap {
            image_id: id.into(),
            model: ModelTag::TS,
            values,
        }
    }

    #[test]
    fn uniform_map_has_uniform_means() {
        let p = grid_partition(&[4, 4], &[2, 2]).unwrap();
        let s = region_scores(&map(&[4, 4], vec![1.0 / 16.0; 16]), &p, Statistic::Mean).unwrap();
        assert_eq!(s, vec![1.0 / 16.0; 4]);
    }

    #[test]
    fn saliency_uses_interpolated_median() {
        let p = grid_partition(&[2, 2], &[2, 2]).unwrap();
        let s = region_scores(&map(&[2, 2], vec![4.0, 3.0, 2.0, 1.0]), &p, Statistic::Saliency).unwrap();
        assert_eq!(s, vec![0.5]);
    }

    #[test]
    fn saliency_ignores_background() {
        let p = Partition::from_labels(vec![1, 4], vec![-1, 0, 0, 1]).unwrap();
        // foreground pool {1, 2, 3}, median 2
        let s = region_scores(&map(&[1, 4], vec![100.0, 1.0, 2.0, 3.0]), &p, Statistic::Saliency).unwrap();
        assert_eq!(s, vec![0.5, 1.0]);
    }

    #[test]
    fn concentrated_mass_wins() {
        let p = grid_partition(&[4, 4], &[2, 2]).unwrap();
        let mut v = vec![0.0; 16];
        for i in [0, 1, 4, 5] {
            v[i] = 0.25;
        }
        let s = region_scores(&map(&[4, 4], v), &p, Statistic::Mean).unwrap();
        assert!(s[1..].iter().all(|&x| x < s[0]));
        assert_eq!(rank_scores(&s), vec![1.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn shape_mismatch() {
        let p = grid_partition(&[4, 4], &[2, 2]).unwrap();
        assert!(matches!(
            region_scores(&map(&[2, 8], vec![0.0; 16]), &p, Statistic::Mean),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(rank_scores(&[0.5, 0.2, 0.2, 0.1]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(rank_scores(&[9.0, 7.0, 3.0, -1.0, -8.0]), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(rank_scores(&[1.0, 1.0, 1.0]), vec![2.0, 2.0, 2.0]);
    }

    fn rv(r: &[f64]) -> RankVector {
        RankVector {
            image_id: String::new(),
            ranks: r.to_vec(),
        }
    }

    #[test]
    fn median_aggregation() {
        let v = [rv(&[1., 2., 3.]), rv(&[3., 2., 1.]), rv(&[1., 3., 2.])];
        assert_eq!(aggregate_profiles(&v, Aggregation::Median).unwrap(), vec![1., 2., 2.]);
        assert_eq!(
            aggregate_profiles(&v[..1], Aggregation::Median).unwrap(),
            vec![1., 2., 3.]
        );
        let even = [rv(&[1., 2.]), rv(&[3., 4.])];
        assert_eq!(aggregate_profiles(&even, Aggregation::Median).unwrap(), vec![2., 3.]);
        assert_eq!(aggregate_profiles(&even, Aggregation::Mean).unwrap(), vec![2., 3.]);
    }

    #[test]
    fn aggregation_errors() {
        assert!(matches!(
            aggregate_profiles(&[], Aggregation::Median),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            aggregate_profiles(&[rv(&[1., 2.]), rv(&[1.])], Aggregation::Median),
            Err(Error::LengthMismatch(2, 1))
        ));
    }

    #[test]
    fn aggregate_then_rank_single_image_commutes() {
        let p = grid_partition(&[2, 4], &[1, 2]).unwrap();
        let m = [amap("a", map(&[2, 4], vec![0.1, 0.2, 0.0, 0.3, 0.05, 0.05, 0.2, 0.1]))];
        let agg_first = aggregate_then_rank(ModelTag::TS, &m, &p, Statistic::Mean).unwrap();
        let rank_first = RankMatrix::from_maps(&m, &p, Statistic::Mean)
            .unwrap()
            .aggregate(Aggregation::Median);
        assert_eq!(agg_first.values, rank_first);
    }

    #[test]
    fn aggregate_then_rank_opposite_orders_tie() {
        let p = grid_partition(&[1, 2], &[1, 1]).unwrap();
        let m = [
            amap("a", map(&[1, 2], vec![0.7, 0.3])),
            amap("b", map(&[1, 2], vec![0.3, 0.7])),
        ];
        let prof = aggregate_then_rank(ModelTag::BA, &m, &p, Statistic::Mean).unwrap();
        assert_eq!(prof.values, vec![1.5, 1.5]);
    }

    #[test]
    fn aggregate_then_rank_matches_brute_force() {
        // three images over four 1x1 regions
        let scores = [
            [0.61, 0.12, 0.93, 0.35],
            [0.08, 0.77, 0.41, 0.52],
            [0.29, 0.66, 0.14, 0.98],
        ];
        let p = grid_partition(&[1, 4], &[1, 1]).unwrap();
        let maps: Vec<_> = scores.iter().map(|s| amap("x", map(&[1, 4], s.to_vec()))).collect();
        // brute force: mean vector, then count strictly larger entries
        let mean: Vec<f64> = (0..4).map(|r| scores.iter().map(|s| s[r]).sum::<f64>() / 3.0).collect();
        let expect: Vec<f64> = mean
            .iter()
            .map(|&v| 1.0 + mean.iter().filter(|&&u| u > v).count() as f64)
            .collect();
        assert_eq!(expect, vec![4.0, 2.0, 3.0, 1.0]);
        let got = aggregate_then_rank(ModelTag::SA, &maps, &p, Statistic::Mean).unwrap();
        assert_eq!(got.values, expect);
        // and it differs from rank-then-aggregate here
        let rank_agg = RankMatrix::from_maps(&maps, &p, Statistic::Mean)
            .unwrap()
            .aggregate(Aggregation::Median);
        assert_eq!(rank_agg, vec![3.0, 2.0, 3.0, 2.0]);
    }

    proptest! {
        #[test]
        fn rank_sum_is_triangular(scores in proptest::collection::vec(0u8..6, 1..50)) {
            let s: Vec<f64> = scores.iter().map(|&v| f64::from(v)).collect();
            let n = s.len() as f64;
            prop_assert_eq!(rank_scores(&s).iter().sum::<f64>(), n * (n + 1.0) / 2.0);
        }

        #[test]
        fn ranks_invariant_under_monotone_maps(scores in proptest::collection::vec(-3.0f64..3.0, 2..40)) {
            let base = rank_scores(&scores);
            let exp: Vec<f64> = scores.iter().map(|v| v.exp()).collect();
            let aff: Vec<f64> = scores.iter().map(|v| 3.0 * v + 7.0).collect();
            let cube: Vec<f64> = scores.iter().map(|v| v.powi(3)).collect();
            prop_assert_eq!(&rank_scores(&exp), &base);
            prop_assert_eq!(&rank_scores(&aff), &base);
            prop_assert_eq!(&rank_scores(&cube), &base);
        }

        #[test]
        fn aggregation_ignores_image_order(
            rows in proptest::collection::vec(proptest::collection::vec(1.0f64..9.0, 5), 1..12),
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let vs: Vec<RankVector> = rows.iter().map(|r| rv(r)).collect();
            let mut shuffled = vs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            for op in [Aggregation::Median, Aggregation::Mean] {
                let a = aggregate_profiles(&vs, op).unwrap();
                let b = aggregate_profiles(&shuffled, op).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
            }
        }
    }
}

use crate::autodiff::Tensor;
use crate::error::{contract, Result};
use crate::rng::Rng;

use super::dataset::Dataset;

/// One C-way N-shot task with M queries per class.
///
/// Support and query rows are stored class-major: rows `c*N .. (c+1)*N` of
/// the support matrix belong to episode class `c`, and likewise for queries.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    way: usize,
    shot: usize,
    queries: usize,
    feature_dim: usize,
    source_labels: Vec<String>,
    support_ids: Vec<Vec<usize>>,
    query_ids: Vec<Vec<usize>>,
    support_x: Vec<f64>,
    query_x: Vec<f64>,
}

impl Episode {
    /// Builds an episode from explicit per-class support and query rows.
    ///
    /// `support[c]` and `query[c]` hold the rows of episode class `c`; every
    /// class must have the same number of each. Row ids are their positions.
    pub fn from_rows(
        source_labels: Vec<String>,
        support: Vec<Vec<Vec<f64>>>,
        query: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let way = support.len();
        let shot = support.first().map_or(0, Vec::len);
        let queries = query.first().map_or(0, Vec::len);
        let feature_dim = support.first().and_then(|s| s.first()).map_or(0, Vec::len);
        // Hand-built rows are distinct instances: queries are numbered after supports.
        let support_ids = support.iter().map(|s| (0..s.len()).collect()).collect();
        let query_ids = query.iter().zip(&support).map(|(q, s)| (s.len()..s.len() + q.len()).collect()).collect();
        let flatten = |groups: &[Vec<Vec<f64>>]| -> Result<Vec<f64>> {
            let mut out = Vec::new();
            for row in groups.iter().flatten() {
                if row.len() != feature_dim {
                    return Err(contract(format!("episode row has length {}, expected {feature_dim}", row.len())));
                }
                out.extend_from_slice(row);
            }
            Ok(out)
        };
        let support_x = flatten(&support)?;
        let query_x = flatten(&query)?;
        let ep = Self { way, shot, queries, feature_dim, source_labels, support_ids, query_ids, support_x, query_x };
        ep.validate()?;
        Ok(ep)
    }

    /// Episode over the given dataset classes with the given instance indices.
    pub fn from_dataset(
        dataset: &Dataset,
        class_indices: &[usize],
        support_ids: Vec<Vec<usize>>,
        query_ids: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let d = dataset.feature_dim();
        let mut support_x = Vec::new();
        let mut query_x = Vec::new();
        for (k, &ci) in class_indices.iter().enumerate() {
            let class = dataset.classes().get(ci).ok_or_else(|| contract(format!("class index {ci} out of range")))?;
            for (ids, out) in [(&support_ids, &mut support_x), (&query_ids, &mut query_x)] {
                for &i in ids.get(k).ok_or_else(|| contract("episode index lists shorter than class list"))? {
                    let row = class
                        .instances
                        .get(i)
                        .ok_or_else(|| contract(format!("instance {i} out of range for class {:?}", class.label)))?;
                    out.extend_from_slice(row);
                }
            }
        }
        let ep = Self {
            way: class_indices.len(),
            shot: support_ids.first().map_or(0, Vec::len),
            queries: query_ids.first().map_or(0, Vec::len),
            feature_dim: d,
            source_labels: class_indices.iter().map(|&i| dataset.class(i).label.clone()).collect(),
            support_ids,
            query_ids,
            support_x,
            query_x,
        };
        ep.validate()?;
        Ok(ep)
    }

    fn validate(&self) -> Result<()> {
        if self.way < 2 {
            return Err(contract(format!("episode needs at least 2 classes, got {}", self.way)));
        }
        if self.shot == 0 || self.queries == 0 || self.feature_dim == 0 {
            return Err(contract("episode needs at least one support and one query per class"));
        }
        if self.source_labels.len() != self.way || self.support_ids.len() != self.way || self.query_ids.len() != self.way {
            return Err(contract("episode class lists disagree in length"));
        }
        let mut labels: Vec<&String> = self.source_labels.iter().collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.way {
            return Err(contract("episode classes must be distinct"));
        }
        for (c, (s, q)) in self.support_ids.iter().zip(&self.query_ids).enumerate() {
            if s.len() != self.shot || q.len() != self.queries {
                return Err(contract(format!(
                    "class {c} has {} support / {} query instances, expected {} / {}",
                    s.len(),
                    q.len(),
                    self.shot,
                    self.queries
                )));
            }
            if s.iter().any(|i| q.contains(i)) {
                return Err(contract(format!("class {c} support and query sets overlap")));
            }
        }
        Ok(())
    }

    pub fn way(&self) -> usize {
        self.way
    }

    pub fn shot(&self) -> usize {
        self.shot
    }

    pub fn queries_per_class(&self) -> usize {
        self.queries
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn source_labels(&self) -> &[String] {
        &self.source_labels
    }

    /// Instance indices (within their source class) of each class's support set.
    pub fn support_ids(&self) -> &[Vec<usize>] {
        &self.support_ids
    }

    pub fn query_ids(&self) -> &[Vec<usize>] {
        &self.query_ids
    }

    pub fn num_queries(&self) -> usize {
        self.way * self.queries
    }

    /// `[C*N, D]`, class-major.
    pub fn support_matrix(&self) -> Tensor {
        Tensor::matrix(self.way * self.shot, self.feature_dim, self.support_x.clone()).expect("validated episode")
    }

    /// `[C*M, D]`, class-major.
    pub fn query_matrix(&self) -> Tensor {
        Tensor::matrix(self.way * self.queries, self.feature_dim, self.query_x.clone()).expect("validated episode")
    }

    /// Episode class index of each query row.
    pub fn query_labels(&self) -> Vec<usize> {
        (0..self.way).flat_map(|c| std::iter::repeat_n(c, self.queries)).collect()
    }

    /// Support group sizes, one per class.
    pub fn support_sizes(&self) -> Vec<usize> {
        vec![self.shot; self.way]
    }
}

/// Two episodes over disjoint class sets.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskPair {
    first: Episode,
    second: Episode,
}

impl TaskPair {
    pub fn new(first: Episode, second: Episode) -> Result<Self> {
        if let Some(shared) = first.source_labels.iter().find(|l| second.source_labels.contains(l)) {
            return Err(contract(format!("task pair shares class {shared:?}")));
        }
        Ok(Self { first, second })
    }

    /// A pair whose outer episode is the inner one. Used by MAML+X, where the
    /// disjointness requirement does not apply.
    pub fn same_task(episode: Episode) -> Self {
        Self { second: episode.clone(), first: episode }
    }

    pub fn first(&self) -> &Episode {
        &self.first
    }

    pub fn second(&self) -> &Episode {
        &self.second
    }
}

fn check_counts(dataset: &Dataset, way: usize, shot: usize, queries: usize, need_classes: usize) -> Result<()> {
    if way < 2 || shot == 0 || queries == 0 {
        return Err(contract(format!("invalid episode shape {way}-way {shot}-shot {queries} queries")));
    }
    if dataset.num_classes() < need_classes {
        return Err(contract(format!(
            "dataset has {} classes, need {need_classes} (short by {})",
            dataset.num_classes(),
            need_classes - dataset.num_classes()
        )));
    }
    Ok(())
}

fn episode_for_classes(dataset: &Dataset, classes: &[usize], shot: usize, queries: usize, rng: &mut Rng) -> Result<Episode> {
    let mut support_ids = Vec::with_capacity(classes.len());
    let mut query_ids = Vec::with_capacity(classes.len());
    for &ci in classes {
        let class = dataset.class(ci);
        let n = class.instances.len();
        if n < shot + queries {
            return Err(contract(format!(
                "class {:?} has {n} instances, need {} (short by {})",
                class.label,
                shot + queries,
                shot + queries - n
            )));
        }
        let picked = rng.sample_indices(n, shot + queries);
        support_ids.push(picked[..shot].to_vec());
        query_ids.push(picked[shot..].to_vec());
    }
    Episode::from_dataset(dataset, classes, support_ids, query_ids)
}

/// Samples a `way`-way `shot`-shot episode with `queries` queries per class.
pub fn sample_episode(dataset: &Dataset, way: usize, shot: usize, queries: usize, rng: &mut Rng) -> Result<Episode> {
    check_counts(dataset, way, shot, queries, way)?;
    let classes = rng.sample_indices(dataset.num_classes(), way);
    episode_for_classes(dataset, &classes, shot, queries, rng)
}

/// Samples two episodes over disjoint classes by drawing `2 * way` distinct
/// classes once and splitting them in half.
pub fn sample_disjoint_pair(dataset: &Dataset, way: usize, shot: usize, queries: usize, rng: &mut Rng) -> Result<TaskPair> {
    check_counts(dataset, way, shot, queries, 2 * way)?;
    let classes = rng.sample_indices(dataset.num_classes(), 2 * way);
    let first = episode_for_classes(dataset, &classes[..way], shot, queries, rng)?;
    let second = episode_for_classes(dataset, &classes[way..], shot, queries, rng)?;
    TaskPair::new(first, second)
}

/// Picks a way and a shot uniformly from the given choices, then samples.
pub fn sample_any(
    dataset: &Dataset,
    shot_choices: &[usize],
    way_choices: &[usize],
    queries: usize,
    rng: &mut Rng,
) -> Result<Episode> {
    if shot_choices.is_empty() || way_choices.is_empty() {
        return Err(contract("sample_any needs nonempty shot and way choices"));
    }
    let shot = *rng.choose(shot_choices);
    let way = *rng.choose(way_choices);
    sample_episode(dataset, way, shot, queries, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::ClassData;

    fn toy(n_classes: usize, per_class: usize) -> Dataset {
        let classes = (0..n_classes)
            .map(|c| ClassData {
                label: format!("c{c:02}"),
                instances: (0..per_class).map(|i| vec![c as f64, i as f64]).collect(),
            })
            .collect();
        Dataset::new(2, classes).unwrap()
    }

    #[test]
    fn five_way_one_shot_counts() {
        let d = toy(10, 20);
        let ep = sample_episode(&d, 5, 1, 15, &mut Rng::new(1)).unwrap();
        assert_eq!(ep.support_matrix().shape(), &[5, 2]);
        assert_eq!(ep.query_matrix().shape(), &[75, 2]);
        assert_eq!(ep.query_labels().len(), 75);
    }

    #[test]
    fn support_and_query_never_overlap() {
        let d = toy(8, 12);
        let mut rng = Rng::new(2);
        for _ in 0..1000 {
            let ep = sample_episode(&d, 4, 3, 5, &mut rng).unwrap();
            for (s, q) in ep.support_ids().iter().zip(ep.query_ids()) {
                for i in s {
                    assert!(!q.contains(i));
                }
                let mut all: Vec<usize> = s.iter().chain(q).copied().collect();
                all.sort_unstable();
                all.dedup();
                assert_eq!(all.len(), 8);
            }
            // rows come from the ids: feature 1 of each row is the instance index
            let sm = ep.support_matrix();
            let rows: Vec<&[f64]> = sm.rows().collect();
            for (c, ids) in ep.support_ids().iter().enumerate() {
                for (k, &i) in ids.iter().enumerate() {
                    assert_eq!(rows[c * ep.shot() + k][1], i as f64);
                }
            }
            let mut labels = ep.source_labels().to_vec();
            labels.sort();
            labels.dedup();
            assert_eq!(labels.len(), 4);
        }
    }

    #[test]
    fn deficits_are_reported() {
        let d = toy(3, 4);
        let err = sample_episode(&d, 5, 1, 1, &mut Rng::new(0)).unwrap_err();
        assert!(err.to_string().contains("short by 2"), "{err}");
        let err = sample_episode(&d, 2, 2, 3, &mut Rng::new(0)).unwrap_err();
        assert!(err.to_string().contains("short by 1"), "{err}");
        assert!(sample_disjoint_pair(&toy(9, 5), 5, 1, 1, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn ten_classes_split_into_two_fives() {
        let d = toy(10, 3);
        let pair = sample_disjoint_pair(&d, 5, 1, 1, &mut Rng::new(4)).unwrap();
        let mut all: Vec<String> = pair.first().source_labels().iter().chain(pair.second().source_labels()).cloned().collect();
        all.sort();
        let expected: Vec<String> = (0..10).map(|c| format!("c{c:02}")).collect();
        assert_eq!(all, expected);
    }

    #[test]
    fn overlapping_pair_is_rejected() {
        let d = toy(10, 3);
        let mut rng = Rng::new(5);
        let replay = rng.clone();
        let a = sample_episode(&d, 5, 1, 1, &mut rng).unwrap();
        let b = sample_episode(&d, 5, 1, 1, &mut replay.clone()).unwrap();
        assert_eq!(a.source_labels(), b.source_labels());
        assert!(TaskPair::new(a, b).is_err());
    }

    #[test]
    fn singleton_choices_fix_the_shape() {
        let d = toy(12, 20);
        let mut rng = Rng::new(6);
        for _ in 0..20 {
            let ep = sample_any(&d, &[1], &[5], 15, &mut rng).unwrap();
            assert_eq!((ep.way(), ep.shot(), ep.queries_per_class()), (5, 1, 15));
        }
    }

    #[test]
    fn sampling_does_not_mutate_and_replays() {
        let d = toy(10, 10);
        let before = d.clone();
        let a = sample_disjoint_pair(&d, 3, 2, 2, &mut Rng::new(8)).unwrap();
        let b = sample_disjoint_pair(&d, 3, 2, 2, &mut Rng::new(8)).unwrap();
        assert_eq!(a, b);
        assert_eq!(d, before);
    }

    #[test]
    fn from_rows_validates() {
        let ok = Episode::from_rows(
            vec!["a".into(), "b".into()],
            vec![vec![vec![0.0, 0.0]], vec![vec![4.0, 0.0]]],
            vec![vec![vec![0.0, 0.0]], vec![vec![4.0, 1.0]]],
        );
        assert!(ok.is_ok());
        let one_class = Episode::from_rows(vec!["a".into()], vec![vec![vec![0.0]]], vec![vec![vec![0.0]]]);
        assert!(one_class.is_err());
        let ragged = Episode::from_rows(
            vec!["a".into(), "b".into()],
            vec![vec![vec![0.0, 0.0]], vec![vec![4.0, 0.0], vec![1.0, 1.0]]],
            vec![vec![vec![0.0, 0.0]], vec![vec![4.0, 1.0]]],
        );
        assert!(ragged.is_err());
    }
}

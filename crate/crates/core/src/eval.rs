//! Meta-test protocol: episode accuracy, multi-run confidence intervals and
//! the any-way/any-shot grid.
//!
//! Nothing here can modify parameters. Every episode is drawn from its own
//! seed-derived stream, so serial and parallel evaluation agree exactly.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::autodiff::Parameters;
use crate::error::{contract, Result};
use crate::models::{predict, Model};
use crate::rng::Rng;
use crate::tasks::{sample_episode, Dataset, Episode};

/// Normal-approximation multiplier for a 95% interval.
pub const Z_95: f64 = 1.96;
pub const DEFAULT_EPISODES: usize = 600;
pub const DEFAULT_RUNS: usize = 5;
pub const DEFAULT_QUERIES: usize = 15;

/// Anything that labels the queries of an episode.
///
/// `rng` continues the episode's own stream after sampling, for classifiers
/// that need randomness.
pub trait Classifier: Sync {
    fn classify(&self, episode: &Episode, rng: &mut Rng) -> Result<Vec<usize>>;
}

/// A trained model with frozen parameters.
pub struct Learned<'a> {
    pub model: &'a Model,
    pub params: &'a Parameters,
}

impl Classifier for Learned<'_> {
    fn classify(&self, episode: &Episode, _rng: &mut Rng) -> Result<Vec<usize>> {
        predict(self.model, self.params, episode)
    }
}

/// Always answers the same class.
pub struct ConstantClassifier(pub usize);

impl Classifier for ConstantClassifier {
    fn classify(&self, episode: &Episode, _rng: &mut Rng) -> Result<Vec<usize>> {
        Ok(vec![self.0; episode.num_queries()])
    }
}

/// Uniformly random labels.
pub struct RandomClassifier;

impl Classifier for RandomClassifier {
    fn classify(&self, episode: &Episode, rng: &mut Rng) -> Result<Vec<usize>> {
        Ok((0..episode.num_queries()).map(|_| rng.below(episode.way())).collect())
    }
}

/// Fraction of queries whose prediction equals the true class.
pub fn episode_accuracy(predictions: &[usize], episode: &Episode) -> Result<f64> {
    let truth = episode.query_labels();
    if predictions.len() != truth.len() {
        return Err(contract(format!(
            "{} predictions for {} queries",
            predictions.len(),
            truth.len()
        )));
    }
    let hits = predictions.iter().zip(&truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Task shape and size of one evaluation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Protocol {
    pub way: usize,
    pub shot: usize,
    pub queries: usize,
    pub episodes: usize,
}

impl Protocol {
    pub fn new(way: usize, shot: usize) -> Self {
        Self { way, shot, queries: DEFAULT_QUERIES, episodes: DEFAULT_EPISODES }
    }
}

/// Per-episode accuracies of one run, in episode order.
pub fn episode_accuracies(
    classifier: &dyn Classifier,
    dataset: &Dataset,
    protocol: Protocol,
    seed: u64,
) -> Result<Vec<f64>> {
    if protocol.episodes == 0 {
        return Err(contract("evaluation needs at least one episode"));
    }
    (0..protocol.episodes as u64)
        .into_par_iter()
        .map(|e| {
            let mut rng = Rng::stream(seed, e);
            let ep = sample_episode(dataset, protocol.way, protocol.shot, protocol.queries, &mut rng)?;
            let pred = classifier.classify(&ep, &mut rng)?;
            episode_accuracy(&pred, &ep)
        })
        .collect()
}

/// Mean query accuracy over `protocol.episodes` episodes.
pub fn evaluate(classifier: &dyn Classifier, dataset: &Dataset, protocol: Protocol, seed: u64) -> Result<f64> {
    let acc = episode_accuracies(classifier, dataset, protocol, seed)?;
    Ok(acc.iter().sum::<f64>() / acc.len() as f64)
}

/// `(mean, 1.96 * s / sqrt(n))` with the n-1 sample standard deviation.
/// A single value has zero width.
pub fn confidence_interval(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(contract("confidence interval of an empty list"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, Z_95 * var.sqrt() / n.sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub run_accuracies: Vec<f64>,
    pub mean: f64,
    pub ci_half_width: f64,
}

/// Seed of run `r` under a root seed.
pub fn run_seed(seed: u64, run: usize) -> u64 {
    Rng::stream(seed, run as u64).next_u64()
}

/// `runs` independent evaluations with distinct seeds.
pub fn evaluate_runs(
    classifier: &dyn Classifier,
    dataset: &Dataset,
    protocol: Protocol,
    runs: usize,
    seed: u64,
) -> Result<EvalReport> {
    if runs == 0 {
        return Err(contract("evaluation needs at least one run"));
    }
    let run_accuracies = (0..runs)
        .map(|r| evaluate(classifier, dataset, protocol, run_seed(seed, r)))
        .collect::<Result<Vec<_>>>()?;
    let (mean, ci_half_width) = confidence_interval(&run_accuracies)?;
    Ok(EvalReport { protocol, run_accuracies, mean, ci_half_width })
}

/// One report per `(shot, way)` cell, shots outermost.
pub fn eval_grid(
    classifier: &dyn Classifier,
    dataset: &Dataset,
    shots: &[usize],
    ways: &[usize],
    queries: usize,
    episodes: usize,
    runs: usize,
    seed: u64,
) -> Result<Vec<EvalReport>> {
    if shots.is_empty() || ways.is_empty() {
        return Err(contract("grid needs at least one shot and one way"));
    }
    let mut out = Vec::with_capacity(shots.len() * ways.len());
    for &shot in shots {
        for &way in ways {
            let protocol = Protocol { way, shot, queries, episodes };
            out.push(evaluate_runs(classifier, dataset, protocol, runs, seed)?);
        }
    }
    Ok(out)
}

/// `way,shot,run,accuracy` rows, then `mean` and `ci_half_width` rows per cell.
pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("way,shot,run,accuracy\n");
    for r in reports {
        let (w, k) = (r.protocol.way, r.protocol.shot);
        for (i, a) in r.run_accuracies.iter().enumerate() {
            let _ = writeln!(s, "{w},{k},{i},{a}");
        }
        let _ = writeln!(s, "{w},{k},mean,{}", r.mean);
        let _ = writeln!(s, "{w},{k},ci_half_width,{}", r.ci_half_width);
    }
    s
}

pub fn reports_text(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    for r in reports {
        let p = r.protocol;
        let _ = writeln!(
            s,
            "{}-way {}-shot ({} queries/class, {} episodes x {} runs): {:.2}% +- {:.2}%",
            p.way,
            p.shot,
            p.queries,
            p.episodes,
            r.run_accuracies.len(),
            100.0 * r.mean,
            100.0 * r.ci_half_width
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::ClassData;

    fn blobs(classes: usize, per_class: usize, noise: f64) -> Dataset {
        let mut rng = Rng::new(11);
        let classes = (0..classes)
            .map(|c| ClassData {
                label: format!("c{c}"),
                instances: (0..per_class)
                    .map(|_| vec![10.0 * c as f64 + noise * rng.normal(), -3.0 * c as f64 + noise * rng.normal()])
                    .collect(),
            })
            .collect();
        Dataset::new(2, classes).unwrap()
    }

    #[test]
    fn ci_examples() {
        assert_eq!(confidence_interval(&[0.5, 0.5, 0.5]).unwrap(), (0.5, 0.0));
        let (m, h) = confidence_interval(&[0.4, 0.6]).unwrap();
        assert!((m - 0.5).abs() < 1e-15);
        let s = ((0.01 + 0.01) / 1.0f64).sqrt();
        assert!((h - 1.96 * s / 2f64.sqrt()).abs() < 1e-15);
        assert!((h - 0.19600).abs() < 1e-5);
        assert_eq!(confidence_interval(&[0.73]).unwrap(), (0.73, 0.0));
        assert!(confidence_interval(&[]).is_err());
    }

    #[test]
    fn constant_classifier_scores_chance() {
        let ds = blobs(8, 20, 1.0);
        let acc = evaluate(&ConstantClassifier(0), &ds, Protocol { way: 5, shot: 1, queries: 3, episodes: 50 }, 1).unwrap();
        assert!((acc - 0.2).abs() < 1e-12);
    }

    #[test]
    fn separable_data_is_perfect_for_proto() {
        let ds = blobs(8, 20, 1e-6);
        let model = Model::new(2, &crate::models::ArchConfig {
            head: crate::models::HeadKind::Proto,
            embed_hidden: vec![],
            embed_dim: 2,
            relation_hidden: vec![],
        })
        .unwrap();
        let mut p = Parameters::new();
        p.insert("embed.0.weight", crate::autodiff::Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        p.insert("embed.0.bias", crate::autodiff::Tensor::zeros(&[2]));
        let before = p.clone();
        let acc =
            evaluate(&Learned { model: &model, params: &p }, &ds, Protocol { way: 5, shot: 1, queries: 5, episodes: 40 }, 3)
                .unwrap();
        assert_eq!(acc, 1.0);
        assert!(p.bit_eq(&before));
    }

    #[test]
    fn grid_shape_and_singleton() {
        let ds = blobs(12, 25, 1.0);
        let cells = eval_grid(&RandomClassifier, &ds, &[1, 5, 10], &[5, 7, 10], 2, 10, 2, 9).unwrap();
        assert_eq!(cells.len(), 9);
        assert!(cells.iter().all(|c| (0.0..=1.0).contains(&c.mean) && c.ci_half_width >= 0.0));
        assert_eq!((cells[1].protocol.shot, cells[1].protocol.way), (1, 7));
        let one = eval_grid(&RandomClassifier, &ds, &[5], &[7], 2, 10, 1, 9).unwrap();
        let direct = evaluate(&RandomClassifier, &ds, Protocol { way: 7, shot: 5, queries: 2, episodes: 10 }, run_seed(9, 0))
            .unwrap();
        assert_eq!(one[0].mean, direct);
        assert_eq!(one[0].ci_half_width, 0.0);
    }

    #[test]
    fn parallel_matches_serial() {
        let ds = blobs(10, 20, 1.0);
        let protocol = Protocol { way: 5, shot: 2, queries: 4, episodes: 64 };
        let par = episode_accuracies(&RandomClassifier, &ds, protocol, 4).unwrap();
        let serial = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| episode_accuracies(&RandomClassifier, &ds, protocol, 4).unwrap());
        assert_eq!(par, serial);
    }

    #[test]
    fn csv_layout() {
        let r = EvalReport {
            protocol: Protocol { way: 5, shot: 1, queries: 15, episodes: 600 },
            run_accuracies: vec![0.4, 0.6],
            mean: 0.5,
            ci_half_width: 0.196,
        };
        assert_eq!(
            reports_csv(&[r]),
            "way,shot,run,accuracy\n5,1,0,0.4\n5,1,1,0.6\n5,1,mean,0.5\n5,1,ci_half_width,0.196\n"
        );
    }
}

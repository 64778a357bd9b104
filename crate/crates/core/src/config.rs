//! Line-based `key = value` run configuration.
//!
//! `#` starts a comment, blank lines are ignored and nesting uses dotted keys
//! such as `synthetic.noise_std`. The schema is closed: an unknown or repeated
//! key is an error naming the key and line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::{DEFAULT_EPISODES, DEFAULT_QUERIES, DEFAULT_RUNS};
use crate::tasks::{SplitFractions, SyntheticSpec};
use crate::training::TrainerConfig;

/// Raw `key -> (value, line)` pairs.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, (String, usize)>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap().trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::Parse { line, msg: format!("expected `key = value`, got {content:?}") })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Parse { line, msg: "empty key".into() });
        }
        if let Some((_, first)) = out.insert(key.to_string(), (value.trim().to_string(), line)) {
            return Err(Error::Config(format!("key `{key}` repeated at line {line} (first at line {first})")));
        }
    }
    Ok(out)
}

/// Where training and validation classes come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Pre-split dataset files.
    Files { train: PathBuf, val: Option<PathBuf> },
    /// One dataset file split by class with `data.seed`.
    Split { path: PathBuf, fractions: SplitFractions, split_seed: u64 },
    /// Generated in memory, then split by class; `data.seed` drives both.
    Synthetic { spec: SyntheticSpec, fractions: SplitFractions, split_seed: u64 },
}

/// Meta-test protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalConfig {
    pub episodes: usize,
    pub runs: usize,
    pub queries: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { episodes: DEFAULT_EPISODES, runs: DEFAULT_RUNS, queries: DEFAULT_QUERIES }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub trainer: TrainerConfig,
    pub data: DataSource,
    pub run_dir: Option<PathBuf>,
    pub eval: EvalConfig,
}

struct Fields {
    pairs: BTreeMap<String, (String, usize)>,
}

fn bad(key: &str, line: usize, value: &str, what: &str) -> Error {
    Error::Config(format!("key `{key}` at line {line}: {value:?} is not {what}"))
}

impl Fields {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.pairs.remove(key)
    }

    fn parse<T: FromStr>(&mut self, key: &str, slot: &mut T, what: &str) -> Result<()> {
        if let Some((v, line)) = self.take(key) {
            *slot = v.parse().map_err(|_| bad(key, line, &v, what))?;
        }
        Ok(())
    }

    fn keyword<T: FromStr<Err = Error>>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some((v, line)) = self.take(key) {
            *slot = v.parse().map_err(|e: Error| Error::Config(format!("key `{key}` at line {line}: {e}")))?;
        }
        Ok(())
    }

    fn list(&mut self, key: &str, slot: &mut Vec<usize>) -> Result<()> {
        if let Some((v, line)) = self.take(key) {
            *slot = if v.is_empty() {
                Vec::new()
            } else {
                v.split(',')
                    .map(|x| x.trim().parse().map_err(|_| bad(key, line, &v, "a comma-separated list of integers")))
                    .collect::<Result<_>>()?
            };
        }
        Ok(())
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        self.take(key).map(|(v, _)| PathBuf::from(v))
    }

    fn has_prefix(&self, prefix: &str) -> bool {
        self.pairs.keys().any(|k| k.starts_with(prefix))
    }

    fn finish(self) -> Result<()> {
        match self.pairs.into_iter().min_by_key(|(_, (_, line))| *line) {
            Some((key, (_, line))) => Err(Error::Config(format!("unknown key `{key}` at line {line}"))),
            None => Ok(()),
        }
    }
}

fn synthetic_fields(f: &mut Fields, spec: &mut SyntheticSpec) -> Result<()> {
    f.keyword("synthetic.kind", &mut spec.kind)?;
    f.parse("synthetic.num_classes", &mut spec.num_classes, "an integer")?;
    f.parse("synthetic.instances_per_class", &mut spec.instances_per_class, "an integer")?;
    f.parse("synthetic.latent_dim", &mut spec.latent_dim, "an integer")?;
    f.parse("synthetic.feature_dim", &mut spec.feature_dim, "an integer")?;
    f.parse("synthetic.class_separation", &mut spec.class_separation, "a number")?;
    f.parse("synthetic.noise_std", &mut spec.noise_std, "a number")?;
    f.parse("synthetic.mixing_seed", &mut spec.mixing_seed, "an integer")
}

fn split_fields(f: &mut Fields) -> Result<(SplitFractions, u64)> {
    let mut fr = SplitFractions::default();
    let mut seed = 0u64;
    f.parse("split.train", &mut fr.train, "a number")?;
    f.parse("split.val", &mut fr.val, "a number")?;
    f.parse("split.test", &mut fr.test, "a number")?;
    f.parse("data.seed", &mut seed, "an integer")?;
    Ok((fr, seed))
}

/// Synthetic generator settings plus the generation seed (`seed`).
pub fn parse_synthetic(text: &str) -> Result<(SyntheticSpec, Option<u64>)> {
    synthetic_from_pairs(parse_pairs(text)?)
}

pub fn synthetic_from_pairs(pairs: BTreeMap<String, (String, usize)>) -> Result<(SyntheticSpec, Option<u64>)> {
    let mut f = Fields { pairs };
    let mut spec = SyntheticSpec::default();
    synthetic_fields(&mut f, &mut spec)?;
    let mut seed = None;
    if let Some((v, line)) = f.take("seed") {
        seed = Some(v.parse().map_err(|_| bad("seed", line, &v, "an integer"))?);
    }
    f.finish()?;
    spec.validate()?;
    Ok((spec, seed))
}

fn trainer_fields(f: &mut Fields) -> Result<TrainerConfig> {
    let mut t = TrainerConfig::default();
    f.keyword("mode", &mut t.mode)?;
    f.keyword("head", &mut t.arch.head)?;
    f.list("model.embed_hidden", &mut t.arch.embed_hidden)?;
    f.parse("model.embed_dim", &mut t.arch.embed_dim, "an integer")?;
    f.list("model.relation_hidden", &mut t.arch.relation_hidden)?;
    f.parse("alpha", &mut t.alpha, "a number")?;
    f.parse("beta", &mut t.beta, "a number")?;
    f.parse("meta_batch", &mut t.meta_batch, "an integer")?;
    f.keyword("grad_mode", &mut t.grad_mode)?;
    f.keyword("reduction", &mut t.reduction)?;
    f.keyword("optimizer", &mut t.optimizer)?;
    f.parse("adam.beta1", &mut t.adam.beta1, "a number")?;
    f.parse("adam.beta2", &mut t.adam.beta2, "a number")?;
    f.parse("adam.epsilon", &mut t.adam.epsilon, "a number")?;
    f.parse("total_episodes", &mut t.total_episodes, "an integer")?;
    f.parse("eval_interval", &mut t.eval_interval, "an integer")?;
    f.parse("val_episodes", &mut t.val_episodes, "an integer")?;
    f.parse("way", &mut t.way, "an integer")?;
    f.parse("shot", &mut t.shot, "an integer")?;
    f.parse("queries", &mut t.queries, "an integer")?;
    f.parse("halve_every", &mut t.halve_every, "an integer")?;
    f.parse("seed", &mut t.seed, "an integer")?;
    Ok(t)
}

/// Trainer settings only; data, path and eval keys are rejected.
pub fn parse_trainer(text: &str) -> Result<TrainerConfig> {
    let mut f = Fields { pairs: parse_pairs(text)? };
    let t = trainer_fields(&mut f)?;
    f.finish()?;
    t.validate()?;
    Ok(t)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::from_pairs(parse_pairs(text)?)
    }

    pub fn from_pairs(pairs: BTreeMap<String, (String, usize)>) -> Result<RunConfig> {
        let mut f = Fields { pairs };
        let t = trainer_fields(&mut f)?;

        let mut eval = EvalConfig::default();
        f.parse("eval.episodes", &mut eval.episodes, "an integer")?;
        f.parse("eval.runs", &mut eval.runs, "an integer")?;
        f.parse("eval.queries", &mut eval.queries, "an integer")?;
        let run_dir = f.path("run_dir");

        let train = f.path("data.train");
        let val = f.path("data.val");
        let path = f.path("data.path");
        let synthetic = f.has_prefix("synthetic.");
        let data = match (train, path, synthetic) {
            (Some(train), None, false) => DataSource::Files { train, val },
            (None, Some(path), false) if val.is_none() => {
                let (fractions, split_seed) = split_fields(&mut f)?;
                DataSource::Split { path, fractions, split_seed }
            }
            (None, None, true) if val.is_none() => {
                let mut spec = SyntheticSpec::default();
                synthetic_fields(&mut f, &mut spec)?;
                let (fractions, split_seed) = split_fields(&mut f)?;
                DataSource::Synthetic { spec, fractions, split_seed }
            }
            (None, None, false) => {
                return Err(Error::Config("no data source: set data.train, data.path or synthetic.* keys".into()))
            }
            _ => {
                return Err(Error::Config(
                    "choose exactly one data source: data.train (+ data.val), data.path, or synthetic.*".into(),
                ))
            }
        };
        f.finish()?;
        t.validate()?;
        if let DataSource::Synthetic { spec, .. } = &data {
            spec.validate()?;
        }
        if eval.episodes == 0 || eval.runs == 0 || eval.queries == 0 {
            return Err(Error::Config("eval.episodes, eval.runs and eval.queries must be >= 1".into()));
        }
        Ok(RunConfig { trainer: t, data, run_dir, eval })
    }

    /// Canonical text form listing every key; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let t = &self.trainer;
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("mode", t.mode.as_str().into());
        kv("head", t.arch.head.as_str().into());
        kv("model.embed_hidden", list(&t.arch.embed_hidden));
        kv("model.embed_dim", t.arch.embed_dim.to_string());
        kv("model.relation_hidden", list(&t.arch.relation_hidden));
        kv("alpha", t.alpha.to_string());
        kv("beta", t.beta.to_string());
        kv("meta_batch", t.meta_batch.to_string());
        kv("grad_mode", t.grad_mode.as_str().into());
        kv("reduction", t.reduction.as_str().into());
        kv("optimizer", t.optimizer.as_str().into());
        kv("adam.beta1", t.adam.beta1.to_string());
        kv("adam.beta2", t.adam.beta2.to_string());
        kv("adam.epsilon", t.adam.epsilon.to_string());
        kv("total_episodes", t.total_episodes.to_string());
        kv("eval_interval", t.eval_interval.to_string());
        kv("val_episodes", t.val_episodes.to_string());
        kv("way", t.way.to_string());
        kv("shot", t.shot.to_string());
        kv("queries", t.queries.to_string());
        kv("halve_every", t.halve_every.to_string());
        kv("seed", t.seed.to_string());
        kv("eval.episodes", self.eval.episodes.to_string());
        kv("eval.runs", self.eval.runs.to_string());
        kv("eval.queries", self.eval.queries.to_string());
        if let Some(d) = &self.run_dir {
            kv("run_dir", d.display().to_string());
        }
        let split = |kv: &mut dyn FnMut(&str, String), fr: &SplitFractions, seed: u64| {
            kv("split.train", fr.train.to_string());
            kv("split.val", fr.val.to_string());
            kv("split.test", fr.test.to_string());
            kv("data.seed", seed.to_string());
        };
        match &self.data {
            DataSource::Files { train, val } => {
                kv("data.train", train.display().to_string());
                if let Some(v) = val {
                    kv("data.val", v.display().to_string());
                }
            }
            DataSource::Split { path, fractions, split_seed } => {
                kv("data.path", path.display().to_string());
                split(&mut kv, fractions, *split_seed);
            }
            DataSource::Synthetic { spec, fractions, split_seed } => {
                kv("synthetic.kind", spec.kind.as_str().into());
                kv("synthetic.num_classes", spec.num_classes.to_string());
                kv("synthetic.instances_per_class", spec.instances_per_class.to_string());
                kv("synthetic.latent_dim", spec.latent_dim.to_string());
                kv("synthetic.feature_dim", spec.feature_dim.to_string());
                kv("synthetic.class_separation", spec.class_separation.to_string());
                kv("synthetic.noise_std", spec.noise_std.to_string());
                kv("synthetic.mixing_seed", spec.mixing_seed.to_string());
                split(&mut kv, fractions, *split_seed);
            }
        }
        s
    }
}

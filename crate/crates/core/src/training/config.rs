use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::{ArchConfig, HeadKind};
use crate::tasks::Dataset;

macro_rules! keyword_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::Config(format!(
                        "unknown {} {other:?} (expected one of: {})",
                        stringify!($name),
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }
    };
}

keyword_enum! {
    /// Which trainer runs.
    Mode { Episodic => "episodic", MamlX => "maml_x", L2g => "l2g" }
}

keyword_enum! {
    /// Exact second-order meta-gradient or the first-order approximation.
    GradMode { Exact => "exact", FirstOrder => "first_order" }
}

keyword_enum! {
    /// How per-task gradients of a meta-batch are combined.
    Reduction { Mean => "mean", Sum => "sum" }
}

keyword_enum! {
    OptimizerKind { Adam => "adam", Sgd => "sgd" }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub mode: Mode,
    pub arch: ArchConfig,
    /// Inner step size.
    pub alpha: f64,
    /// Initial meta learning rate.
    pub beta: f64,
    pub meta_batch: usize,
    pub grad_mode: GradMode,
    pub reduction: Reduction,
    pub optimizer: OptimizerKind,
    pub adam: AdamHyper,
    /// Number of meta-iterations.
    pub total_episodes: u64,
    pub eval_interval: u64,
    pub val_episodes: usize,
    pub way: usize,
    pub shot: usize,
    pub queries: usize,
    /// The learning rate halves every `halve_every` meta-iterations.
    pub halve_every: u64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            mode: Mode::L2g,
            arch: ArchConfig::default(),
            alpha: 1e-2,
            beta: 1e-3,
            meta_batch: 5,
            grad_mode: GradMode::Exact,
            reduction: Reduction::Mean,
            optimizer: OptimizerKind::Adam,
            adam: AdamHyper::default(),
            total_episodes: 2000,
            eval_interval: 500,
            val_episodes: 200,
            way: 5,
            shot: 1,
            queries: 15,
            halve_every: 10_000,
            seed: 0,
        }
    }
}

fn require(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl TrainerConfig {
    pub fn head(&self) -> HeadKind {
        self.arch.head
    }

    pub fn validate(&self) -> Result<()> {
        require(self.alpha.is_finite() && self.alpha >= 0.0, || format!("alpha must be >= 0, got {}", self.alpha))?;
        require(self.beta.is_finite() && self.beta > 0.0, || format!("beta must be > 0, got {}", self.beta))?;
        require(self.meta_batch >= 1, || "meta_batch must be >= 1".into())?;
        require(self.way >= 2, || format!("way must be >= 2, got {}", self.way))?;
        require(self.shot >= 1, || "shot must be >= 1".into())?;
        require(self.queries >= 1, || "queries must be >= 1".into())?;
        require(self.total_episodes >= 1, || "total_episodes must be >= 1".into())?;
        require(self.eval_interval >= 1, || "eval_interval must be >= 1".into())?;
        require(self.val_episodes >= 1, || "val_episodes must be >= 1".into())?;
        require(self.halve_every >= 1, || "halve_every must be >= 1".into())?;
        require(self.arch.embed_dim >= 1 && !self.arch.embed_hidden.contains(&0), || "layer widths must be positive".into())?;
        require(!self.arch.relation_hidden.contains(&0), || "layer widths must be positive".into())?;
        let a = self.adam;
        require((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2), || "adam betas must be in [0, 1)".into())?;
        require(a.epsilon > 0.0, || "adam epsilon must be > 0".into())
    }

    /// Classes needed in the training split: two disjoint episodes for l2g.
    pub fn required_train_classes(&self) -> usize {
        match self.mode {
            Mode::L2g => 2 * self.way,
            _ => self.way,
        }
    }

    /// Checks the datasets can serve every episode this config samples.
    pub fn check_datasets(&self, train: &Dataset, val: Option<&Dataset>) -> Result<()> {
        let need = self.required_train_classes();
        require(train.num_classes() >= need, || {
            format!(
                "mode {} with way {} needs >= {need} training classes, dataset has {}",
                self.mode.as_str(),
                self.way,
                train.num_classes()
            )
        })?;
        let per_class = self.shot + self.queries;
        for (name, ds) in std::iter::once(("training", train)).chain(val.map(|v| ("validation", v))) {
            require(ds.min_class_size() >= per_class, || {
                format!(
                    "{name} class needs {per_class} instances (shot + queries), smallest has {}",
                    ds.min_class_size()
                )
            })?;
        }
        if let Some(v) = val {
            require(v.feature_dim() == train.feature_dim(), || {
                format!("validation dimension {} differs from training {}", v.feature_dim(), train.feature_dim())
            })?;
            require(v.num_classes() >= self.way, || {
                format!("validation needs >= {} classes, dataset has {}", self.way, v.num_classes())
            })?;
        }
        Ok(())
    }
}

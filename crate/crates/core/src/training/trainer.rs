use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{evaluate, Learned, Protocol};
use crate::models::Model;
use crate::rng::Rng;
use crate::tasks::{sample_disjoint_pair, sample_episode, Dataset};

use super::config::{Mode, TrainerConfig};
use super::log::{LogRecord, RunLog};
use super::optim::{lr_schedule, Optimizer};
use super::step::{episodic_step, maml_x_step, meta_step, StepLosses, TrainState};

const INIT_STREAM: u64 = u64::MAX;
const VAL_STREAM: u64 = u64::MAX - 1;

pub const LOG_FILE: &str = "log.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn checkpoint_name(episode: u64) -> String {
    format!("checkpoint-{episode:08}.ckpt")
}

/// Drives one configured run. Iteration `e` samples from stream `(seed, e)`,
/// so a run resumed from a checkpoint continues the same trajectory.
pub struct Trainer<'a> {
    cfg: &'a TrainerConfig,
    model: Model,
    train: &'a Dataset,
    val: Option<&'a Dataset>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a TrainerConfig, train: &'a Dataset, val: Option<&'a Dataset>) -> Result<Self> {
        cfg.validate()?;
        cfg.check_datasets(train, val)?;
        let model = Model::new(train.feature_dim(), &cfg.arch)?;
        Ok(Self { cfg, model, train, val })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn init_state(&self) -> TrainState {
        let params = self.model.init(&mut Rng::stream(self.cfg.seed, INIT_STREAM));
        let optimizer = Optimizer::new(self.cfg.optimizer, self.cfg.adam, &params);
        TrainState { params, optimizer, episode: 0 }
    }

    /// Samples the batch for `state.episode` and applies one update.
    pub fn step(&self, state: &TrainState) -> Result<(TrainState, StepLosses)> {
        let cfg = self.cfg;
        let mut rng = Rng::stream(cfg.seed, state.episode);
        let (n, k, q) = (cfg.way, cfg.shot, cfg.queries);
        match cfg.mode {
            Mode::L2g => {
                let pairs = (0..cfg.meta_batch)
                    .map(|_| sample_disjoint_pair(self.train, n, k, q, &mut rng))
                    .collect::<Result<Vec<_>>>()?;
                meta_step(&self.model, state, &pairs, cfg)
            }
            Mode::MamlX | Mode::Episodic => {
                let eps = (0..cfg.meta_batch)
                    .map(|_| sample_episode(self.train, n, k, q, &mut rng))
                    .collect::<Result<Vec<_>>>()?;
                if cfg.mode == Mode::MamlX {
                    maml_x_step(&self.model, state, &eps, cfg)
                } else {
                    episodic_step(&self.model, state, &eps, cfg)
                }
            }
        }
    }

    /// Validation accuracy under the fixed protocol, or `None` without a
    /// validation set.
    pub fn validate(&self, state: &TrainState) -> Result<Option<f64>> {
        let Some(val) = self.val else { return Ok(None) };
        let protocol = Protocol { way: self.cfg.way, shot: self.cfg.shot, queries: self.cfg.queries, episodes: self.cfg.val_episodes };
        let seed = Rng::stream(self.cfg.seed, VAL_STREAM).next_u64();
        evaluate(&Learned { model: &self.model, params: &state.params }, val, protocol, seed).map(Some)
    }

    /// Runs from `state` until `total_episodes` iterations are done.
    ///
    /// With a run directory, writes a checkpoint at every evaluation point,
    /// `final.ckpt` at the end and `log.csv`. A numeric failure still writes
    /// the log of completed iterations before returning the error.
    pub fn run(&self, mut state: TrainState, run_dir: Option<&Path>) -> Result<(TrainState, RunLog)> {
        if let Some(dir) = run_dir {
            fs::create_dir_all(dir)?;
        }
        let mut log = RunLog::new();
        let outcome = self.run_inner(&mut state, &mut log, run_dir);
        if let Some(dir) = run_dir {
            fs::write(dir.join(LOG_FILE), log.to_csv())?;
        }
        outcome?;
        if let Some(dir) = run_dir {
            state.save(dir.join(FINAL_CHECKPOINT))?;
        }
        Ok((state, log))
    }

    fn run_inner(&self, state: &mut TrainState, log: &mut RunLog, run_dir: Option<&Path>) -> Result<()> {
        let cfg = self.cfg;
        while state.episode < cfg.total_episodes {
            let e = state.episode;
            let lr = lr_schedule(cfg.beta, e, cfg.halve_every);
            let (next, losses) = self.step(state).map_err(|err| match err {
                Error::Numeric(msg) => Error::Numeric(format!("aborted at episode {e}: {msg}")),
                other => other,
            })?;
            *state = next;
            let done = state.episode;
            let evaluate_now = done.is_multiple_of(cfg.eval_interval) || done == cfg.total_episodes;
            let val_accuracy = if evaluate_now { self.validate(state)? } else { None };
            log.push(LogRecord {
                episode: e,
                meta_loss: losses.mean_outer().unwrap_or(f64::NAN),
                inner_loss: losses.mean_inner(),
                lr,
                val_accuracy,
            })?;
            if evaluate_now {
                if let Some(dir) = run_dir {
                    state.save(dir.join(checkpoint_name(done)))?;
                }
            }
        }
        Ok(())
    }
}

/// Trains from fresh parameters.
pub fn train(cfg: &TrainerConfig, train: &Dataset, val: Option<&Dataset>, run_dir: Option<&Path>) -> Result<(TrainState, RunLog)> {
    let trainer = Trainer::new(cfg, train, val)?;
    trainer.run(trainer.init_state(), run_dir)
}

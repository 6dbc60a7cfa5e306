//! Replay-driven training: rollouts into an episodic buffer, windowed batch
//! updates with target networks, and the full episode loop with metrics and
//! checkpoints.
//!
//! One update round processes a batch of sampled episode windows step by
//! step. Critics and policies take a gradient step at every window step;
//! the role networks accumulate their objectives across the whole window and
//! batch and step once at the end, scaled by the decaying role weight. Role
//! samples and trajectory embeddings are always recomputed from stored raw
//! history with the current networks, never replayed from rollout time.

mod checkpoint;
mod update;

pub use checkpoint::{load_actors, CheckpointManifest, LoadedActors};

use std::fs;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::autodiff::{Adam, ParamSet};
use crate::config::Config;
use crate::env::{EnvError, Environment, GameEnv};
use crate::losses::{role_weight, LossBundle};
use crate::nets::{AgentExecutor, Model};
use crate::replay::{EpisodeRecord, ReplayBuffer, ReplayError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error("non-finite {what} during update {update}; diagnostics at {dump}")]
    NonFinite {
        what: String,
        update: u64,
        dump: String,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

fn io_err(context: &str) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        context: context.to_string(),
        source,
    }
}

/// Everything the training loop owns.
pub struct Trainer {
    pub cfg: Config,
    pub model: Model,
    pub params: ParamSet<f32>,
    pub targets: ParamSet<f32>,
    opt: Adam<f32>,
    pub buffer: ReplayBuffer,
    rng: ChaCha12Rng,
    pub episodes_done: u64,
    t_update: usize,
    updates_done: u64,
    pub last_bundle: LossBundle,
    run_dir: PathBuf,
}

pub struct RunSummary {
    pub episodes: u64,
    pub run_dir: PathBuf,
    pub final_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
}

impl Trainer {
    /// Fresh trainer writing into `cfg.train.out_dir`.
    pub fn new(cfg: Config) -> Result<Trainer, TrainError> {
        cfg.validate()
            .map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        let model = Model::new(
            cfg.game.clone(),
            cfg.nets.clone(),
            cfg.train.variant,
            cfg.loss.std_floor,
        );
        let params: ParamSet<f32> = model.init_params(cfg.train.seed);
        let targets = model.target_subset(&params);
        let buffer = ReplayBuffer::new(cfg.train.buffer_capacity);
        let rng = ChaCha12Rng::seed_from_u64(cfg.train.seed ^ 0x7261_635f_7472_6e72);
        let run_dir = PathBuf::from(&cfg.train.out_dir);
        fs::create_dir_all(&run_dir).map_err(io_err("creating run dir"))?;
        Ok(Trainer {
            cfg,
            model,
            params,
            targets,
            opt: Adam::new(),
            buffer,
            rng,
            episodes_done: 0,
            t_update: 0,
            updates_done: 0,
            last_bundle: LossBundle::default(),
            run_dir,
        })
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.run_dir.join("metrics.csv")
    }

    /// Run `max_episodes` of rollouts with periodic update rounds and
    /// checkpoints; returns the final checkpoint location.
    pub fn run(&mut self) -> Result<RunSummary, TrainError> {
        let metrics_path = self.metrics_path();
        let fresh = self.episodes_done == 0 || !metrics_path.exists();
        let mut metrics = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&metrics_path)
            .map_err(io_err("opening metrics csv"))?;
        if fresh {
            writeln!(
                metrics,
                "episode,team,mean_reward,L_Q,L_MI,L_D,L_Opp,role_weight"
            )
            .map_err(io_err("writing metrics header"))?;
        }

        let max = self.cfg.train.max_episodes as u64;
        let interval = self.cfg.train.checkpoint_interval as u64;
        while self.episodes_done < max {
            let before = self.episodes_done;
            let records = self.rollout_round()?;
            for rec in records {
                self.episodes_done += 1;
                self.append_metric_rows(&mut metrics, &rec)?;
                self.buffer.push(rec, self.cfg.game.episode_limit)?;
            }
            self.t_update += (self.episodes_done - before) as usize;
            if self.t_update >= self.cfg.train.min_steps_per_update
                && self.buffer.len() >= self.cfg.train.batch_episodes
            {
                for _ in 0..self.cfg.train.updates_per_round {
                    let bundle = self.train_update()?;
                    self.last_bundle = bundle;
                }
                self.t_update = 0;
            }
            if interval > 0 && before / interval != self.episodes_done / interval {
                let dir = self.run_dir.join(format!("ckpt_ep{}", self.episodes_done));
                self.save_checkpoint(&dir)?;
            }
        }
        metrics.flush().map_err(io_err("flushing metrics"))?;
        let final_dir = self.run_dir.join("final");
        self.save_checkpoint(&final_dir)?;
        log::info!(
            "training finished: {} episodes, checkpoint at {}",
            self.episodes_done,
            final_dir.display()
        );
        Ok(RunSummary {
            episodes: self.episodes_done,
            run_dir: self.run_dir.clone(),
            final_checkpoint: final_dir,
            metrics_path,
        })
    }

    fn append_metric_rows(
        &self,
        metrics: &mut fs::File,
        rec: &EpisodeRecord,
    ) -> Result<(), TrainError> {
        let w = role_weight(&self.cfg.loss, self.episodes_done as f64);
        let b = &self.last_bundle;
        for team in 0..self.cfg.game.teams {
            let members: Vec<usize> = self.cfg.game.team_members(team).collect();
            let mut total = 0.0f64;
            for row in &rec.rewards {
                for &m in &members {
                    total += row[m] as f64;
                }
            }
            let mean_reward = total / members.len() as f64;
            writeln!(
                metrics,
                "{},{},{},{},{},{},{},{}",
                self.episodes_done, team, mean_reward, b.l_q, b.l_mi, b.l_d, b.l_opp, w
            )
            .map_err(io_err("writing metrics row"))?;
        }
        Ok(())
    }

    /// Collect `parallel_envs` episodes (capped by the remaining budget),
    /// each on its own environment instance with its own derived seeds.
    /// Workers run concurrently for more than one environment; records come
    /// back in slot order, so the schedule cannot affect results.
    pub fn rollout_round(&mut self) -> Result<Vec<EpisodeRecord>, TrainError> {
        let remaining = self.cfg.train.max_episodes as u64 - self.episodes_done;
        let e = (self.cfg.train.parallel_envs as u64).min(remaining) as usize;
        let seeds: Vec<(u64, u64)> = (0..e)
            .map(|_| (self.rng.random::<u64>(), self.rng.random::<u64>()))
            .collect();
        if e == 1 {
            let (env_seed, policy_seed) = seeds[0];
            return Ok(vec![run_episode(
                &self.model,
                &self.params,
                env_seed,
                policy_seed,
            )?]);
        }
        let model = &self.model;
        let params = &self.params;
        let mut out: Vec<Option<Result<EpisodeRecord, TrainError>>> =
            (0..e).map(|_| None).collect();
        std::thread::scope(|scope| {
            let mut handles = Vec::with_capacity(e);
            for &(env_seed, policy_seed) in &seeds {
                handles.push(scope.spawn(move || run_episode(model, params, env_seed, policy_seed)));
            }
            for (slot, h) in handles.into_iter().enumerate() {
                out[slot] = Some(h.join().expect("rollout worker panicked"));
            }
        });
        out.into_iter().map(|r| r.unwrap()).collect()
    }

    /// Element-wise pull of every target parameter toward the live one:
    /// `target <- (1 - tau) * target + tau * live`.
    pub fn soft_update_targets(&mut self) {
        let tau = self.cfg.train.target_tau as f32;
        for p in self.targets.iter_mut() {
            let live = self.params.get(&p.name);
            for (t, l) in p.value.iter_mut().zip(live.value.iter()) {
                *t = (1.0 - tau) * *t + tau * *l;
            }
        }
    }

    /// Write a diagnostic dump and build the abort error for a non-finite
    /// training state.
    pub(crate) fn non_finite_abort(&self, what: &str) -> TrainError {
        let dump = self.run_dir.join(format!(
            "nonfinite_update{}_{}.txt",
            self.updates_done, what
        ));
        let mut text = format!(
            "non-finite {what} at update {} (episode {})\nlast losses: {:?}\nparameter stats:\n",
            self.updates_done, self.episodes_done, self.last_bundle
        );
        for p in self.params.iter() {
            let vmax = p.value.iter().fold(0.0f32, |a, v| a.max(v.abs()));
            let gmax = p.grad.iter().fold(0.0f32, |a, v| a.max(v.abs()));
            let finite = p.value.iter().all(|v| v.is_finite()) && p.grad.iter().all(|v| v.is_finite());
            text.push_str(&format!(
                "  {}: |v|max={vmax:.4e} |g|max={gmax:.4e} finite={finite}\n",
                p.name
            ));
        }
        let _ = fs::write(&dump, text);
        TrainError::NonFinite {
            what: what.to_string(),
            update: self.updates_done,
            dump: dump.display().to_string(),
        }
    }
}

/// Play one full episode with decentralized executors and record the raw
/// history. The environment gets `env_seed`; role noise and action sampling
/// consume `policy_seed`.
pub fn run_episode(
    model: &Model,
    params: &ParamSet<f32>,
    env_seed: u64,
    policy_seed: u64,
) -> Result<EpisodeRecord, TrainError> {
    let mut env = GameEnv::new(model.spec.clone())?;
    let mut obs = env.reset(env_seed);
    let n = model.spec.n_agents();
    let mut executors: Vec<AgentExecutor> = (0..n)
        .map(|i| AgentExecutor::new(model, params, i))
        .collect();
    let mut rng = ChaCha12Rng::seed_from_u64(policy_seed);

    let mut all_obs = vec![obs.clone()];
    let mut all_actions = Vec::new();
    let mut all_rewards = Vec::new();
    let final_events;
    loop {
        let actions: Vec<usize> = executors
            .iter_mut()
            .enumerate()
            .map(|(i, ex)| ex.act(&obs[i], &mut rng))
            .collect();
        let out = env.step(&actions)?;
        all_actions.push(actions);
        all_rewards.push(out.rewards);
        all_obs.push(out.obs.clone());
        obs = out.obs;
        if out.done {
            final_events = out.events;
            break;
        }
    }
    Ok(EpisodeRecord {
        seed: env_seed,
        obs: all_obs,
        actions: all_actions,
        rewards: all_rewards,
        final_events,
    })
}

#[cfg(test)]
mod tests;

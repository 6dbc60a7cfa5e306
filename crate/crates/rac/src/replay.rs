//! Episodic replay storage with windowed batch sampling.
//!
//! Episodes are stored as whole observation/action/reward sequences; the
//! replay tuple for step `t` is assembled on demand, so stale quantities
//! (trajectory embeddings, role samples) are never persisted and always get
//! recomputed from current networks at update time.

use std::collections::VecDeque;
use std::io::{self, Read, Write};

use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::env::StepEvents;

const MAGIC: &[u8; 4] = b"RACB";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot store an empty episode")]
    EmptyEpisode,
    #[error("episode of {len} steps exceeds the limit {limit}")]
    TooLong { len: usize, limit: usize },
    #[error("episode arrays are inconsistent: {0}")]
    Malformed(String),
    #[error("need {need} episodes but the buffer holds {have}")]
    InsufficientEpisodes { have: usize, need: usize },
}

/// One complete episode: `len + 1` observation rows per agent, `len` action
/// and reward rows, the reset seed, and the events of the final step.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub seed: u64,
    /// `[len + 1][n_agents][obs_len]`
    pub obs: Vec<Vec<Vec<f32>>>,
    /// `[len][n_agents]`
    pub actions: Vec<Vec<usize>>,
    /// `[len][n_agents]`
    pub rewards: Vec<Vec<f32>>,
    pub final_events: StepEvents,
}

/// Replay-tuple view of one step of an episode.
#[derive(Clone, Copy)]
pub struct Transition<'a> {
    pub step: usize,
    pub obs: &'a [Vec<f32>],
    /// `None` at the first step of the episode.
    pub prev_actions: Option<&'a [usize]>,
    pub actions: &'a [usize],
    pub rewards: &'a [f32],
    pub next_obs: &'a [Vec<f32>],
    pub done: bool,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.obs.first().map(|o| o.len()).unwrap_or(0)
    }

    pub fn validate(&self, episode_limit: usize) -> Result<(), ReplayError> {
        if self.is_empty() {
            return Err(ReplayError::EmptyEpisode);
        }
        if self.len() > episode_limit {
            return Err(ReplayError::TooLong {
                len: self.len(),
                limit: episode_limit,
            });
        }
        if self.obs.len() != self.len() + 1 {
            return Err(ReplayError::Malformed(format!(
                "{} observation rows for {} steps",
                self.obs.len(),
                self.len()
            )));
        }
        if self.rewards.len() != self.len() {
            return Err(ReplayError::Malformed("reward row count".into()));
        }
        let n = self.n_agents();
        if self
            .obs
            .iter()
            .any(|row| row.len() != n)
            || self.actions.iter().any(|row| row.len() != n)
            || self.rewards.iter().any(|row| row.len() != n)
        {
            return Err(ReplayError::Malformed("agent count varies".into()));
        }
        Ok(())
    }

    /// Replay tuple at step `t`; `done` marks the final stored step.
    pub fn transition(&self, t: usize) -> Transition<'_> {
        assert!(t < self.len(), "step {t} out of {}", self.len());
        Transition {
            step: t,
            obs: &self.obs[t],
            prev_actions: if t == 0 {
                None
            } else {
                Some(&self.actions[t - 1])
            },
            actions: &self.actions[t],
            rewards: &self.rewards[t],
            next_obs: &self.obs[t + 1],
            done: t + 1 == self.len(),
        }
    }
}

/// One sampled window: `len` steps of episode `episode` starting at `start`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowRef {
    pub episode: usize,
    pub start: usize,
    pub len: usize,
}

/// FIFO episode buffer with a fixed capacity.
pub struct ReplayBuffer {
    episodes: VecDeque<EpisodeRecord>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        ReplayBuffer {
            episodes: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn get(&self, idx: usize) -> &EpisodeRecord {
        &self.episodes[idx]
    }

    /// Validate and append; the oldest episode is evicted at capacity.
    pub fn push(&mut self, episode: EpisodeRecord, episode_limit: usize) -> Result<(), ReplayError> {
        episode.validate(episode_limit)?;
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
        Ok(())
    }

    /// Sample `b` distinct episodes uniformly without replacement and one
    /// window start per episode such that the window fits; a window longer
    /// than its episode is truncated to the whole episode (the caller masks
    /// the missing tail). `window == 0` means the full episode.
    pub fn sample_windows(
        &self,
        b: usize,
        window: usize,
        rng: &mut ChaCha12Rng,
    ) -> Result<Vec<WindowRef>, ReplayError> {
        if self.episodes.len() < b {
            return Err(ReplayError::InsufficientEpisodes {
                have: self.episodes.len(),
                need: b,
            });
        }
        let picks = index_sample(rng, self.episodes.len(), b);
        let mut out = Vec::with_capacity(b);
        for episode in picks.iter() {
            let ep_len = self.episodes[episode].len();
            let w = if window == 0 { ep_len } else { window };
            let (start, len) = if w >= ep_len {
                (0, ep_len)
            } else {
                (rng.random_range(0..=ep_len - w), w)
            };
            out.push(WindowRef {
                episode,
                start,
                len,
            });
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.capacity as u32).to_le_bytes())?;
        w.write_all(&(self.episodes.len() as u32).to_le_bytes())?;
        for ep in &self.episodes {
            let len = ep.len() as u32;
            let n = ep.n_agents() as u32;
            let obs_len = ep.obs[0][0].len() as u32;
            w.write_all(&ep.seed.to_le_bytes())?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(&n.to_le_bytes())?;
            w.write_all(&obs_len.to_le_bytes())?;
            for row in &ep.obs {
                for agent in row {
                    for v in agent {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
            for row in &ep.actions {
                for &a in row {
                    w.write_all(&(a as u32).to_le_bytes())?;
                }
            }
            for row in &ep.rewards {
                for v in row {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            let events = serde_json::to_vec(&ep.final_events)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            w.write_all(&(events.len() as u32).to_le_bytes())?;
            w.write_all(&events)?;
        }
        Ok(())
    }

    pub fn read_from<Rd: Read>(r: &mut Rd) -> io::Result<ReplayBuffer> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                "bad magic bytes in replay file",
            ));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("unsupported replay format version {version}"),
            ));
        }
        let capacity = read_u32(r)? as usize;
        let count = read_u32(r)? as usize;
        let mut buf = ReplayBuffer::new(capacity);
        for _ in 0..count {
            let mut seed8 = [0u8; 8];
            r.read_exact(&mut seed8)?;
            let seed = u64::from_le_bytes(seed8);
            let len = read_u32(r)? as usize;
            let n = read_u32(r)? as usize;
            let obs_len = read_u32(r)? as usize;
            let mut obs = Vec::with_capacity(len + 1);
            for _ in 0..=len {
                let mut row = Vec::with_capacity(n);
                for _ in 0..n {
                    let mut agent = Vec::with_capacity(obs_len);
                    for _ in 0..obs_len {
                        let mut b4 = [0u8; 4];
                        r.read_exact(&mut b4)?;
                        agent.push(f32::from_le_bytes(b4));
                    }
                    row.push(agent);
                }
                obs.push(row);
            }
            let mut actions = Vec::with_capacity(len);
            for _ in 0..len {
                let mut row = Vec::with_capacity(n);
                for _ in 0..n {
                    row.push(read_u32(r)? as usize);
                }
                actions.push(row);
            }
            let mut rewards = Vec::with_capacity(len);
            for _ in 0..len {
                let mut row = Vec::with_capacity(n);
                for _ in 0..n {
                    let mut b4 = [0u8; 4];
                    r.read_exact(&mut b4)?;
                    row.push(f32::from_le_bytes(b4));
                }
                rewards.push(row);
            }
            let elen = read_u32(r)? as usize;
            let mut ebuf = vec![0u8; elen];
            r.read_exact(&mut ebuf)?;
            let final_events: StepEvents = serde_json::from_slice(&ebuf)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            buf.episodes.push_back(EpisodeRecord {
                seed,
                obs,
                actions,
                rewards,
                final_events,
            });
        }
        Ok(buf)
    }
}

fn read_u32<Rd: Read>(r: &mut Rd) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

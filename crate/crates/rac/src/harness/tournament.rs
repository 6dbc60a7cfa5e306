//! Head-to-head evaluation of two checkpoints under fully decentralized
//! execution: every action comes from one agent's own observation, its own
//! trajectory state, and its own team's role networks. Critics never run.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};

use crate::env::{Environment, Game, GameEnv, StepEvents};
use crate::nets::AgentExecutor;
use crate::trainer::load_actors;

use super::metrics::{compute_strategy_flags, derive_seed, summarize, MetricRow, Summary};

#[derive(Clone, Debug)]
pub struct TournamentSpec {
    pub ckpt_a: PathBuf,
    pub ckpt_b: PathBuf,
    pub episodes: usize,
    pub seed: u64,
    /// Which of checkpoint A's trained teams controls side A (game team 0).
    pub a_team: usize,
    /// Which of checkpoint B's trained teams controls side B (game team 1).
    pub b_team: usize,
}

impl TournamentSpec {
    pub fn new(ckpt_a: PathBuf, ckpt_b: PathBuf, episodes: usize, seed: u64) -> Self {
        TournamentSpec {
            ckpt_a,
            ckpt_b,
            episodes,
            seed,
            a_team: 0,
            b_team: 1,
        }
    }
}

/// Play the two checkpoints against each other for fresh seeded episodes and
/// return one row per episode plus the aggregate summary. Results for a
/// fixed spec are bit-reproducible.
pub fn tournament(spec: &TournamentSpec) -> Result<(Vec<MetricRow>, Summary)> {
    let side_a = load_actors(&spec.ckpt_a)
        .with_context(|| format!("loading checkpoint {}", spec.ckpt_a.display()))?;
    let side_b = load_actors(&spec.ckpt_b)
        .with_context(|| format!("loading checkpoint {}", spec.ckpt_b.display()))?;
    if side_a.manifest.game_hash != side_b.manifest.game_hash {
        bail!(
            "incompatible checkpoints: game hash {} vs {}",
            side_a.manifest.game_hash,
            side_b.manifest.game_hash
        );
    }
    let game = side_a.manifest.config.game.clone();
    if spec.a_team >= game.teams || spec.b_team >= game.teams {
        bail!("team selector out of range for a {}-team game", game.teams);
    }
    if spec.episodes == 0 {
        bail!("tournament needs at least one episode");
    }

    let per_team = game.agents_per_team;
    let mut rows = Vec::with_capacity(spec.episodes);
    let mut env = GameEnv::new(game.clone())?;
    for episode in 0..spec.episodes {
        // Fresh executors per episode: seat s of side A runs checkpoint A's
        // agent a_team * per_team + s, and likewise for side B.
        let mut seats: Vec<AgentExecutor> = Vec::with_capacity(2 * per_team);
        for s in 0..per_team {
            seats.push(AgentExecutor::new(
                &side_a.model,
                &side_a.params,
                spec.a_team * per_team + s,
            ));
        }
        for s in 0..per_team {
            seats.push(AgentExecutor::new(
                &side_b.model,
                &side_b.params,
                spec.b_team * per_team + s,
            ));
        }
        let mut seat_rngs: Vec<_> = (0..2 * per_team)
            .map(|s| {
                rand::SeedableRng::seed_from_u64(derive_seed(spec.seed, episode as u64, s as u64))
            })
            .collect();

        let mut obs = env.reset(derive_seed(spec.seed, episode as u64, u64::MAX));
        let mut events: Vec<StepEvents> = Vec::new();
        let mut team_reward = [0.0f64; 2];
        loop {
            let actions: Vec<usize> = seats
                .iter_mut()
                .enumerate()
                .map(|(s, ex)| ex.act(&obs[s], &mut seat_rngs[s]))
                .collect();
            let out = env.step(&actions)?;
            for seat in 0..2 * per_team {
                team_reward[seat / per_team] += out.rewards[seat] as f64;
            }
            events.push(out.events.clone());
            obs = out.obs;
            if out.done {
                break;
            }
        }

        let flags = compute_strategy_flags(&game, &events);
        let toucher_team = events
            .iter()
            .find_map(|e| e.landmark_touch)
            .map(|agent| game.team_of(agent));
        let mut drops = [0u32; 2];
        for e in &events {
            for &(agent, _) in &e.picks {
                let _ = agent;
            }
            for &(agent, _) in &e.drops {
                drops[game.team_of(agent)] += 1;
            }
        }
        let is_touchmark = game.game == Game::TouchMark;
        rows.push(MetricRow {
            episode,
            reward_a: team_reward[0] / per_team as f64,
            reward_b: team_reward[1] / per_team as f64,
            touch_a: is_touchmark.then(|| toucher_team == Some(0)),
            touch_b: is_touchmark.then(|| toucher_team == Some(1)),
            drops_a: (!is_touchmark).then_some(drops[0]),
            drops_b: (!is_touchmark).then_some(drops[1]),
            strategy_a: flags[0],
            strategy_b: flags[1],
        });
    }
    let summary = summarize(&rows);
    Ok((rows, summary))
}

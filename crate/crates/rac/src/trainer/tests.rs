use tempfile::tempdir;

use crate::config::{Config, NetConfig, TrainConfig, Variant};
use crate::env::{Game, GameSpec};
use crate::nets::Model;
use crate::replay::EpisodeRecord;
use crate::trainer::{run_episode, Trainer};

fn micro_config(variant: Variant, out_dir: &std::path::Path) -> Config {
    Config {
        game: GameSpec {
            game: Game::TouchMark,
            board_half_width: 0.5,
            episode_limit: 6,
            ..GameSpec::touchmark()
        },
        nets: NetConfig {
            role_dim: 2,
            gru_hidden: 3,
            mlp_hidden: 4,
            attn_dim: 4,
            attn_heads: 2,
            ..NetConfig::default()
        },
        loss: Default::default(),
        train: TrainConfig {
            variant,
            seed: 7,
            max_episodes: 8,
            min_steps_per_update: 2,
            updates_per_round: 1,
            batch_episodes: 2,
            window: 0,
            buffer_capacity: 8,
            parallel_envs: 1,
            out_dir: out_dir.to_string_lossy().into_owned(),
            ..TrainConfig::default()
        },
    }
}

#[test]
fn rollout_is_bit_reproducible() {
    let dir = tempdir().unwrap();
    let cfg = micro_config(Variant::Rac, dir.path());
    let model = Model::new(cfg.game.clone(), cfg.nets.clone(), cfg.train.variant, 1e-3);
    let params = model.init_params::<f32>(3);
    let a = run_episode(&model, &params, 11, 13).unwrap();
    let b = run_episode(&model, &params, 11, 13).unwrap();
    assert_eq!(a, b);
    let c = run_episode(&model, &params, 12, 13).unwrap();
    assert_ne!(a.obs[0], c.obs[0], "different env seeds should differ");
}

#[test]
fn parallel_rollouts_use_distinct_seeds_and_are_deterministic() {
    let dir = tempdir().unwrap();
    let mut cfg = micro_config(Variant::Rac, dir.path());
    cfg.train.parallel_envs = 4;
    let mut t1 = Trainer::new(cfg.clone()).unwrap();
    let recs1 = t1.rollout_round().unwrap();
    assert_eq!(recs1.len(), 4);
    let seeds: std::collections::HashSet<u64> = recs1.iter().map(|r| r.seed).collect();
    assert_eq!(seeds.len(), 4, "each slot gets its own environment seed");
    let mut t2 = Trainer::new(cfg).unwrap();
    let recs2 = t2.rollout_round().unwrap();
    assert_eq!(recs1, recs2, "slot order and content must be reproducible");
}

#[test]
fn zero_learning_rates_leave_parameters_untouched() {
    let dir = tempdir().unwrap();
    let mut cfg = micro_config(Variant::Rac, dir.path());
    cfg.train.lr_policy = 0.0;
    cfg.train.lr_critic = 0.0;
    cfg.train.target_tau = 0.0;
    let mut t = Trainer::new(cfg).unwrap();
    for _ in 0..2 {
        let recs = t.rollout_round().unwrap();
        for r in recs {
            t.buffer.push(r, t.cfg.game.episode_limit).unwrap();
            t.episodes_done += 1;
        }
    }
    let before: Vec<(String, Vec<u32>)> = t
        .params
        .iter()
        .map(|p| (p.name.clone(), p.value.iter().map(|v| v.to_bits()).collect()))
        .collect();
    t.train_update().unwrap();
    for (name, bits) in before {
        let after: Vec<u32> = t.params.get(&name).value.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, after, "parameter {name} moved under zero learning rate");
    }
}

#[test]
fn hard_target_copy_at_tau_one() {
    let dir = tempdir().unwrap();
    let mut cfg = micro_config(Variant::Maac, dir.path());
    cfg.train.target_tau = 1.0;
    let mut t = Trainer::new(cfg).unwrap();
    // Desynchronize the targets, then one soft update must fully copy.
    for p in t.targets.iter_mut() {
        p.value.iter_mut().for_each(|v| *v += 1.5);
    }
    t.soft_update_targets();
    for p in t.targets.iter() {
        let live = t.params.get(&p.name);
        assert_eq!(p.value, live.value);
    }
}

#[test]
fn soft_update_contracts_exactly() {
    let dir = tempdir().unwrap();
    let mut cfg = micro_config(Variant::Maac, dir.path());
    cfg.train.target_tau = 0.25;
    let mut t = Trainer::new(cfg).unwrap();
    for p in t.targets.iter_mut() {
        p.value.iter_mut().for_each(|v| *v += 2.0);
    }
    let gaps: Vec<(String, Vec<f32>)> = t
        .targets
        .iter()
        .map(|p| {
            let live = t.params.get(&p.name);
            (
                p.name.clone(),
                p.value.iter().zip(live.value.iter()).map(|(a, b)| a - b).collect(),
            )
        })
        .collect();
    t.soft_update_targets();
    for (name, gap) in gaps {
        let live = t.params.get(&name);
        let target = t.targets.get(&name);
        for ((t_after, l), g0) in target.value.iter().zip(live.value.iter()).zip(gap.iter()) {
            let expect = 0.75 * g0;
            assert!(
                ((t_after - l) - expect).abs() <= 1e-6,
                "{name}: lag {} vs expected {expect}",
                t_after - l
            );
        }
    }
}

#[test]
fn update_cadence_follows_the_counter() {
    let dir = tempdir().unwrap();
    let mut cfg = micro_config(Variant::Maac, dir.path());
    cfg.train.max_episodes = 8;
    cfg.train.min_steps_per_update = 4;
    cfg.train.updates_per_round = 2;
    cfg.train.batch_episodes = 2;
    let mut t = Trainer::new(cfg).unwrap();
    t.run().unwrap();
    // 8 episodes, a round after every 4th, 2 updates per round.
    assert_eq!(t.updates_done, 4);
}

#[test]
fn maac_checkpoints_have_no_role_parameters() {
    let dir = tempdir().unwrap();
    let mut cfg = micro_config(Variant::Maac, dir.path());
    cfg.train.max_episodes = 2;
    let mut t = Trainer::new(cfg).unwrap();
    let summary = t.run().unwrap();
    let params =
        crate::autodiff::ParamSet::<f32>::load(summary.final_checkpoint.join("params.bin"))
            .unwrap();
    assert!(params.names().all(|n| !Model::is_role_param(n)));
    assert!(params.names().any(|n| n.starts_with("pi.")));
}

#[test]
fn single_env_training_is_bit_reproducible() {
    let dir_a = tempdir().unwrap();
    let dir_b = tempdir().unwrap();
    let run = |out: &std::path::Path| {
        let mut cfg = micro_config(Variant::Rac, out);
        cfg.train.max_episodes = 6;
        let mut t = Trainer::new(cfg).unwrap();
        t.run().unwrap();
        let bits: Vec<(String, Vec<u32>)> = t
            .params
            .iter()
            .map(|p| (p.name.clone(), p.value.iter().map(|v| v.to_bits()).collect()))
            .collect();
        let metrics = std::fs::read_to_string(t.metrics_path()).unwrap();
        (bits, metrics)
    };
    let (bits_a, metrics_a) = run(dir_a.path());
    let (bits_b, metrics_b) = run(dir_b.path());
    assert_eq!(bits_a, bits_b);
    assert_eq!(metrics_a, metrics_b);
}

#[test]
fn resuming_a_checkpoint_reproduces_the_uninterrupted_run() {
    let dir_full = tempdir().unwrap();
    let dir_cut = tempdir().unwrap();

    // Uninterrupted: 12 episodes with a checkpoint at 6.
    let mut cfg = micro_config(Variant::Rac, dir_full.path());
    cfg.train.max_episodes = 12;
    cfg.train.checkpoint_interval = 6;
    let mut full = Trainer::new(cfg.clone()).unwrap();
    full.run().unwrap();
    let metrics_full = std::fs::read_to_string(full.metrics_path()).unwrap();

    // Resumed: restore the mid-run checkpoint into a fresh directory and
    // train the remaining episodes.
    let ckpt = dir_full.path().join("ckpt_ep6");
    let mut resumed = Trainer::from_checkpoint(&ckpt).unwrap();
    resumed.run_dir = dir_cut.path().to_path_buf();
    resumed.run().unwrap();
    let metrics_resumed = std::fs::read_to_string(resumed.metrics_path()).unwrap();

    for (name_full, name_res) in full.params.names().zip(resumed.params.names()) {
        assert_eq!(name_full, name_res);
    }
    for p in full.params.iter() {
        let q = resumed.params.get(&p.name);
        let pb: Vec<u32> = p.value.iter().map(|v| v.to_bits()).collect();
        let qb: Vec<u32> = q.value.iter().map(|v| v.to_bits()).collect();
        assert_eq!(pb, qb, "parameter {} diverged after resume", p.name);
    }

    // The resumed metrics are exactly the tail of the uninterrupted ones.
    let full_lines: Vec<&str> = metrics_full.lines().collect();
    let resumed_lines: Vec<&str> = metrics_resumed.lines().collect();
    let tail = &full_lines[full_lines.len() - (resumed_lines.len() - 1)..];
    assert_eq!(&resumed_lines[1..], tail);
}

#[test]
fn checkpoint_save_load_save_is_bit_identical() {
    let dir = tempdir().unwrap();
    let mut cfg = micro_config(Variant::Rac, dir.path());
    cfg.train.max_episodes = 4;
    let mut t = Trainer::new(cfg).unwrap();
    t.run().unwrap();
    let first = dir.path().join("final");
    let second = dir.path().join("resaved");
    let restored = Trainer::from_checkpoint(&first).unwrap();
    restored.save_checkpoint(&second).unwrap();
    for file in ["manifest.json", "params.bin", "targets.bin", "opt_m.bin", "opt_v.bin", "buffer.bin"] {
        let a = std::fs::read(first.join(file)).unwrap();
        let b = std::fs::read(second.join(file)).unwrap();
        assert_eq!(a, b, "{file} changed across save -> load -> save");
    }
}

/// With every parameter forced to zero and zero learning rates, the critic
/// outputs zero, target policies are uniform, and the TD loss reduces to an
/// arithmetic function of the stored rewards. Checks the target assembly,
/// terminal handling, and the per-step accumulation in one shot.
#[test]
fn critic_loss_matches_hand_computed_value_on_frozen_nets() {
    let dir = tempdir().unwrap();
    let mut cfg = micro_config(Variant::Rac, dir.path());
    cfg.train.lr_policy = 0.0;
    cfg.train.lr_critic = 0.0;
    cfg.train.target_tau = 0.0;
    cfg.train.batch_episodes = 1;
    let gamma = cfg.loss.gamma;
    let alpha = cfg.loss.alpha;
    let n_actions = cfg.game.n_actions() as f64;
    let mut t = Trainer::new(cfg).unwrap();
    for p in t.params.iter_mut() {
        p.value.iter_mut().for_each(|v| *v = 0.0);
    }
    for p in t.targets.iter_mut() {
        p.value.iter_mut().for_each(|v| *v = 0.0);
    }

    // Hand-built 2-step episode for 4 agents with known rewards.
    let n = 4;
    let obs_len = t.cfg.game.obs_len();
    let rewards = vec![
        vec![0.5f32, -0.25, 1.0, 0.0],
        vec![2.0f32, -1.0, 0.5, -0.5],
    ];
    let ep = EpisodeRecord {
        seed: 1,
        obs: (0..3)
            .map(|k| (0..n).map(|a| vec![0.01 * (k * n + a) as f32; obs_len]).collect())
            .collect(),
        actions: vec![vec![0, 1, 2, 3], vec![4, 3, 2, 1]],
        rewards: rewards.clone(),
        final_events: Default::default(),
    };
    t.buffer.push(ep, t.cfg.game.episode_limit).unwrap();

    let bundle = t.train_update().unwrap();

    // Step 0 (non-terminal): y = r + gamma * (0 - alpha * ln(1/|A|)).
    // Step 1 (terminal): y = r. The critic is identically zero, so each
    // agent contributes y^2; rows average over a batch of one.
    let bonus = gamma * alpha * n_actions.ln();
    let mut expected = 0.0f64;
    for agent in 0..n {
        let y0 = rewards[0][agent] as f64 + bonus;
        expected += y0 * y0;
        let y1 = rewards[1][agent] as f64;
        expected += y1 * y1;
    }
    assert!(
        (bundle.l_q - expected).abs() < 1e-4,
        "l_q {} vs hand-computed {expected}",
        bundle.l_q
    );
}

#[test]
fn role_weight_reports_are_non_increasing() {
    let dir = tempdir().unwrap();
    let mut cfg = micro_config(Variant::Rac, dir.path());
    cfg.train.max_episodes = 10;
    cfg.loss.decay_episodes = 4.0;
    let mut t = Trainer::new(cfg).unwrap();
    let mut weights = Vec::new();
    while t.episodes_done < t.cfg.train.max_episodes as u64 {
        let recs = t.rollout_round().unwrap();
        for r in recs {
            t.buffer.push(r, t.cfg.game.episode_limit).unwrap();
            t.episodes_done += 1;
        }
        if t.buffer.len() >= t.cfg.train.batch_episodes {
            let bundle = t.train_update().unwrap();
            weights.push(bundle.role_weight);
        }
    }
    assert!(weights.len() >= 3);
    for w in weights.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "role weight increased: {w:?}");
    }
}

#[test]
fn rac_team_critic_never_reads_opponents() {
    let dir = tempdir().unwrap();
    let mut cfg = micro_config(Variant::RacTeam, dir.path());
    cfg.train.max_episodes = 4;
    crate::nets::audit::reset();
    let mut t = Trainer::new(cfg).unwrap();
    t.run().unwrap();
    assert!(t.updates_done > 0);
    assert_eq!(
        crate::nets::audit::critic_opp_obs_reads(),
        0,
        "team-scoped critics must not consume opponent observations"
    );
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::autodiff::{gradcheck, Graph, ParamSet};
use crate::config::{NetConfig, Variant};
use crate::env::GameSpec;

use super::*;

fn micro_net() -> NetConfig {
    NetConfig {
        role_dim: 3,
        gru_hidden: 4,
        mlp_hidden: 8,
        attn_dim: 8,
        attn_heads: 2,
        ..NetConfig::default()
    }
}

fn micro_model(variant: Variant) -> Model {
    Model::new(GameSpec::touchmark(), micro_net(), variant, 1e-3)
}

fn rand_obs(rng: &mut ChaCha12Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect()
}

#[test]
fn gru_with_zero_weights_halves_hidden() {
    let model = micro_model(Variant::Rac);
    let mut ps: ParamSet<f64> = model.init_params(1);
    for p in ps.iter_mut() {
        if p.name.starts_with("traj.t0.gru") {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let g = Graph::new();
    let lease = Lease::frozen(&g, &ps);
    let h = g.matrix(1, 4, vec![0.4, -1.0, 2.0, 0.8]);
    let obs = g.matrix(1, model.spec.obs_len(), vec![0.3; model.spec.obs_len()]);
    let act = onehot_rows(&g, &[Some(2)], model.spec.n_actions());
    let next = model.traj_step(&lease, 0, &h, &obs, &act);
    let expect = [0.2, -0.5, 1.0, 0.4];
    for (a, e) in next.value().iter().zip(expect.iter()) {
        assert!((a - e).abs() < 1e-12, "got {a}, want {e}");
    }
}

#[test]
fn traj_step_is_deterministic_and_action_sensitive() {
    let model = micro_model(Variant::Rac);
    let ps: ParamSet<f32> = model.init_params(2);
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let obs = rand_obs(&mut rng, model.spec.obs_len());
    let run = |action: usize| {
        let g = Graph::new();
        let lease = Lease::frozen(&g, &ps);
        let h = g.matrix(1, 4, vec![0.1, 0.2, 0.3, 0.4]);
        let o = obs_rows(&g, &[&obs]);
        let a = onehot_rows(&g, &[Some(action)], model.spec.n_actions());
        model.traj_step(&lease, 0, &h, &o, &a).value()
    };
    assert_eq!(run(1), run(1), "same inputs must embed identically");
    assert_ne!(run(1), run(3), "different actions should move the embedding");
}

#[test]
fn self_role_reparameterization_identity_and_floor() {
    let model = micro_model(Variant::Rac);
    let ps: ParamSet<f32> = model.init_params(4);
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let obs = rand_obs(&mut rng, model.spec.obs_len());
    let g = Graph::new();
    let lease = Lease::frozen(&g, &ps);
    let o = obs_rows(&g, &[&obs]);
    let aprev = onehot_rows(&g, &[None], model.spec.n_actions());
    let dist = model.self_role(&lease, 0, &o, &aprev);
    for s in dist.std.value() {
        assert!(s > 1e-3, "std {s} at or under the floor");
    }
    let zero_eps = RoleSample::draw(&g, dist.clone(), vec![0.0; 3]);
    assert_eq!(zero_eps.value.value(), dist.mean.value());
}

#[test]
fn opponent_role_count_matches_team_structure() {
    let model = micro_model(Variant::Rac);
    let ps: ParamSet<f32> = model.init_params(6);
    let g = Graph::new();
    let lease = Lease::frozen(&g, &ps);
    let o = g.matrix(1, model.spec.obs_len(), vec![0.1; model.spec.obs_len()]);
    let tau = g.matrix(1, 4, vec![0.0; 4]);
    let dists = model.opponent_roles(&lease, 0, &o, &tau);
    assert_eq!(dists.len(), 2, "2v2 has two opponents per agent");
    assert_eq!(dists[0].0, 2);
    assert_eq!(dists[1].0, 3);
    for (_, d) in &dists {
        let zero = RoleSample::draw(&g, d.clone(), vec![0.0; 3]);
        assert_eq!(zero.value.value(), d.mean.value());
    }

    let mut spec = GameSpec::touchmark();
    spec.agents_per_team = 3;
    let model = Model::new(spec, micro_net(), Variant::Rac, 1e-3);
    let ps: ParamSet<f32> = model.init_params(7);
    let g = Graph::new();
    let lease = Lease::frozen(&g, &ps);
    let o = g.matrix(1, model.spec.obs_len(), vec![0.1; model.spec.obs_len()]);
    let tau = g.matrix(1, 4, vec![0.0; 4]);
    assert_eq!(model.opponent_roles(&lease, 5, &o, &tau).len(), 3);
}

#[test]
fn posterior_is_deterministic_and_trajectory_sensitive() {
    let model = micro_model(Variant::Rac);
    let ps: ParamSet<f32> = model.init_params(8);
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let obs = rand_obs(&mut rng, model.spec.obs_len());
    let run = |tau: &[f32]| {
        let g = Graph::new();
        let lease = Lease::frozen(&g, &ps);
        let o = obs_rows(&g, &[&obs]);
        let a = onehot_rows(&g, &[Some(1)], model.spec.n_actions());
        let t = obs_rows(&g, &[tau]);
        let d = model.posterior(&lease, 0, &o, &a, &t);
        (d.mean.value(), d.std.value())
    };
    let (m1, s1) = run(&[0.1, 0.2, 0.3, 0.4]);
    let (m2, s2) = run(&[0.1, 0.2, 0.3, 0.4]);
    assert_eq!(m1, m2);
    assert_eq!(s1, s2);
    assert!(s1.iter().all(|&s| s > 0.0));
    let (m3, _) = run(&[-0.5, 0.0, 0.9, -0.1]);
    assert_ne!(m1, m3, "distinct trajectories should shift the posterior");
}

#[test]
fn per_team_sharing_makes_teammates_agree() {
    let model = micro_model(Variant::Rac);
    let ps: ParamSet<f32> = model.init_params(10);
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let obs = rand_obs(&mut rng, model.spec.obs_len());
    let dist_for = |agent: usize| {
        let g = Graph::new();
        let lease = Lease::frozen(&g, &ps);
        let o = obs_rows(&g, &[&obs]);
        let a = onehot_rows(&g, &[Some(0)], model.spec.n_actions());
        let d = model.self_role(&lease, agent, &o, &a);
        (d.mean.value(), d.std.value())
    };
    assert_eq!(dist_for(0), dist_for(1), "teammates share the role encoder");
    assert_ne!(dist_for(0), dist_for(2), "teams do not share parameters");
}

#[test]
fn policy_distribution_properties() {
    let model = micro_model(Variant::Rac);
    let mut ps: ParamSet<f32> = model.init_params(12);
    let mut rng = ChaCha12Rng::seed_from_u64(13);
    let obs = rand_obs(&mut rng, model.spec.obs_len());
    let roles: Vec<Vec<f32>> = (0..3).map(|_| rand_obs(&mut rng, 3)).collect();

    let eval = |ps: &ParamSet<f32>| {
        let g = Graph::new();
        let lease = Lease::frozen(&g, ps);
        let o = obs_rows(&g, &[&obs]);
        let role_ts: Vec<_> = roles.iter().map(|r| obs_rows(&g, &[r])).collect();
        let role_refs: Vec<&_> = role_ts.iter().collect();
        let logits = model.policy_logits(&lease, 0, &o, &role_refs);
        (logits.value(), logits.softmax().value(), logits.log_softmax().value())
    };
    let (logits, probs, logp) = eval(&ps);
    let total: f32 = probs.iter().sum();
    assert!((total - 1.0).abs() < 1e-6);
    assert!(logp.iter().all(|&l| l.is_finite() && l <= 0.0));

    // Policies never read critics: perturbing critic parameters moves nothing.
    for p in ps.iter_mut() {
        if Model::is_critic_param(&p.name) {
            p.value.iter_mut().for_each(|v| *v += 7.5);
        }
    }
    let (logits2, _, _) = eval(&ps);
    assert_eq!(logits, logits2);

    // Zero final layer: uniform distribution with entropy ln |A|.
    for p in ps.iter_mut() {
        if p.name.starts_with("pi.a0.out") {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let (_, probs, logp) = eval(&ps);
    let n = model.spec.n_actions() as f32;
    for p in &probs {
        assert!((p - 1.0 / n).abs() < 1e-6);
    }
    let entropy: f32 = probs.iter().zip(logp.iter()).map(|(p, l)| -p * l).sum();
    assert!((entropy - n.ln()).abs() < 1e-5);
}

fn critic_fixture(
    model: &Model,
    ps: &ParamSet<f32>,
    order: &[usize],
    obs: &[Vec<f32>],
    acts: &[usize],
    roles: &[Vec<f32>],
) -> (Vec<f32>, Vec<Vec<f32>>) {
    let g = Graph::new();
    let lease = Lease::frozen(&g, ps);
    let o0 = obs_rows(&g, &[&obs[0]]);
    let role_ts: Vec<_> = roles.iter().map(|r| obs_rows(&g, &[r])).collect();
    let role_refs: Vec<&_> = role_ts.iter().collect();
    let others: Vec<_> = order
        .iter()
        .map(|&j| {
            (
                j,
                obs_rows(&g, &[&obs[j]]),
                onehot_rows(&g, &[Some(acts[j])], model.spec.n_actions()),
            )
        })
        .collect();
    let out = model.critic(&lease, 0, &o0, &role_refs, &others);
    (
        out.q.value(),
        out.attention.iter().map(|a| a.value()).collect(),
    )
}

#[test]
fn critic_attention_normalizes_and_q_spans_actions() {
    let model = micro_model(Variant::Rac);
    let ps: ParamSet<f32> = model.init_params(14);
    let mut rng = ChaCha12Rng::seed_from_u64(15);
    let obs: Vec<Vec<f32>> = (0..4).map(|_| rand_obs(&mut rng, model.spec.obs_len())).collect();
    let roles: Vec<Vec<f32>> = (0..3).map(|_| rand_obs(&mut rng, 3)).collect();
    let acts = [0usize, 1, 2, 3];
    let (q, attn) = critic_fixture(&model, &ps, &[1, 2, 3], &obs, &acts, &roles);
    assert_eq!(q.len(), model.spec.n_actions());
    assert_eq!(attn.len(), 2);
    for head in &attn {
        let total: f32 = head.iter().sum();
        assert!((total - 1.0).abs() < 1e-6, "head weights sum to {total}");
    }
}

#[test]
fn critic_identical_others_get_identical_attention() {
    let model = micro_model(Variant::Rac);
    let ps: ParamSet<f32> = model.init_params(16);
    let mut rng = ChaCha12Rng::seed_from_u64(17);
    let mut spec = GameSpec::touchmark();
    spec.agents_per_team = 2;
    let shared = rand_obs(&mut rng, spec.obs_len());
    // Agents 2 and 3 share one gother parameter set only under per-team
    // sharing, so compare weights computed through identical inputs there.
    let model_sh = Model::new(
        spec,
        NetConfig {
            share_actor_critic_per_team: true,
            ..micro_net()
        },
        Variant::Rac,
        1e-3,
    );
    let ps_sh: ParamSet<f32> = model_sh.init_params(18);
    let obs = vec![rand_obs(&mut rng, model.spec.obs_len()), shared.clone(), shared.clone(), shared];
    let roles: Vec<Vec<f32>> = (0..3).map(|_| rand_obs(&mut rng, 3)).collect();
    let acts = [0usize, 2, 2, 2];
    let (_, attn) = critic_fixture(&model_sh, &ps_sh, &[2, 3], &obs, &acts, &roles);
    let _ = ps;
    for head in &attn {
        assert!(
            (head[0] - head[1]).abs() < 1e-6,
            "identical (o, a) should attract identical weight, got {head:?}"
        );
    }
}

#[test]
fn critic_is_permutation_invariant_over_others() {
    let model = micro_model(Variant::Rac);
    let ps: ParamSet<f32> = model.init_params(19);
    let mut rng = ChaCha12Rng::seed_from_u64(20);
    let obs: Vec<Vec<f32>> = (0..4).map(|_| rand_obs(&mut rng, model.spec.obs_len())).collect();
    let roles: Vec<Vec<f32>> = (0..3).map(|_| rand_obs(&mut rng, 3)).collect();
    let acts = [0usize, 4, 1, 3];
    let (q1, _) = critic_fixture(&model, &ps, &[1, 2, 3], &obs, &acts, &roles);
    let (q2, _) = critic_fixture(&model, &ps, &[3, 1, 2], &obs, &acts, &roles);
    for (a, b) in q1.iter().zip(q2.iter()) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn reparameterized_sample_passes_gradcheck() {
    let model = micro_model(Variant::Rac);
    let mut ps: ParamSet<f64> = model.init_params(21);
    let mut rng = ChaCha12Rng::seed_from_u64(22);
    let obs: Vec<f64> = (0..model.spec.obs_len())
        .map(|_| rng.random::<f64>() - 0.5)
        .collect();
    let eps: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let obs_c = obs.clone();
    let eps_c = eps.clone();
    let n_actions = model.spec.n_actions();
    let report = gradcheck(
        move |g, ps| {
            let lease = Lease::trainable(g, ps);
            let o = g.matrix(1, obs_c.len(), obs_c.clone());
            let a = onehot_rows(g, &[Some(1)], n_actions);
            let dist = model.self_role(&lease, 0, &o, &a);
            let sample = RoleSample::draw(g, dist, eps_c.clone());
            // weight the sample so every dimension contributes
            let w = g.matrix(1, 3, vec![1.0, -2.0, 0.5]);
            sample.value.mul(&w).sum()
        },
        &mut ps,
        1e-5,
        1e-5,
    );
    assert!(
        report.max_rel_err < 1e-5,
        "reparameterization gradcheck: {} at {}",
        report.max_rel_err,
        report.worst
    );
}

#[test]
fn maac_variant_has_no_role_parameters() {
    let model = micro_model(Variant::Maac);
    let ps: ParamSet<f32> = model.init_params(23);
    assert!(ps.names().all(|n| !Model::is_role_param(n)));
    assert_eq!(model.role_input_width(), 0);

    let team = micro_model(Variant::RacTeam);
    let ps: ParamSet<f32> = team.init_params(24);
    assert!(ps.names().any(|n| n.starts_with("hs.")));
    assert!(ps.names().all(|n| !n.starts_with("ho.")));
    assert_eq!(team.role_input_width(), 3);
    assert_eq!(team.critic_others(0), vec![1]);
    assert_eq!(micro_model(Variant::Rac).critic_others(0), vec![1, 2, 3]);
}

#[test]
fn executor_runs_decentralized_and_reproducibly() {
    let model = micro_model(Variant::Rac);
    let ps: ParamSet<f32> = model.init_params(25);
    let mut rng = ChaCha12Rng::seed_from_u64(26);
    let obs = rand_obs(&mut rng, model.spec.obs_len());

    audit::reset();
    let run = |seed: u64| {
        let mut ex = AgentExecutor::new(&model, &ps, 1);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        ex.begin_episode();
        assert!(ex.trajectory().iter().all(|&v| v == 0.0));
        let mut actions = Vec::new();
        for _ in 0..5 {
            actions.push(ex.act(&obs, &mut rng));
        }
        (actions, ex.trajectory().to_vec())
    };
    let (a1, t1) = run(99);
    let (a2, t2) = run(99);
    assert_eq!(a1, a2);
    assert_eq!(t1, t2);
    let (a3, _) = run(100);
    let _ = a3;
    assert_eq!(audit::critic_evals(), 0, "execution must never touch a critic");
}

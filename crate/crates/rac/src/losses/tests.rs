use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Adam, Graph, ParamSet, Shape};
use crate::config::{NetConfig, Variant};
use crate::env::GameSpec;
use crate::nets::{obs_rows, onehot_rows, Gaussian, Lease, Model, RoleSample};

use super::*;

fn gaussian(g: &Graph<f64>, mean: &[f64], std: &[f64]) -> Gaussian<f64> {
    Gaussian {
        mean: g.matrix(1, mean.len(), mean.to_vec()),
        std: g.matrix(1, std.len(), std.to_vec()),
    }
}

#[test]
fn kl_identity_and_closed_form() {
    let g = Graph::new();
    let p = gaussian(&g, &[0.3, -0.7, 1.1], &[0.5, 1.0, 2.0]);
    let kl_pp = gaussian_kl(&p, &p).value()[0];
    assert!(kl_pp.abs() < 1e-12, "KL(p, p) = {kl_pp}");

    // KL(N(1,1) || N(0,1)) = (mu0 - mu1)^2 / 2 = 0.5 per dimension.
    let p1 = gaussian(&g, &[1.0], &[1.0]);
    let q1 = gaussian(&g, &[0.0], &[1.0]);
    let kl = gaussian_kl(&p1, &q1).value()[0];
    assert!((kl - 0.5).abs() < 1e-12, "got {kl}");
}

#[test]
fn entropy_closed_form_and_scale_law() {
    let g = Graph::new();
    let p = gaussian(&g, &[0.0], &[1.0]);
    let h = gaussian_entropy(&p).value()[0];
    assert!((h - 1.41894).abs() < 1e-4, "H(N(0,1)) = {h}");

    let d = 3usize;
    let p1 = gaussian(&g, &[0.2; 3], &[0.7, 1.3, 0.4]);
    let p2 = gaussian(&g, &[0.2; 3], &[1.4, 2.6, 0.8]);
    let gap = gaussian_entropy(&p2).value()[0] - gaussian_entropy(&p1).value()[0];
    assert!((gap - d as f64 * 2.0f64.ln()).abs() < 1e-10);
}

/// Monte-Carlo oracle for one diagonal Gaussian pair: estimates of
/// `KL(p||q) = E_p[ln p - ln q]` and `H(p) = -E_p[ln p]` with standard errors.
fn mc_kl_entropy(
    mean_p: &[f64],
    std_p: &[f64],
    mean_q: &[f64],
    std_q: &[f64],
    n: usize,
    rng: &mut ChaCha12Rng,
) -> (f64, f64, f64, f64) {
    let d = mean_p.len();
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut kl_sum = 0.0;
    let mut kl_sq = 0.0;
    let mut h_sum = 0.0;
    let mut h_sq = 0.0;
    for _ in 0..n {
        let mut log_p = 0.0;
        let mut log_q = 0.0;
        for k in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            let x = mean_p[k] + std_p[k] * z;
            log_p += -0.5 * (z * z + ln_2pi) - std_p[k].ln();
            let zq = (x - mean_q[k]) / std_q[k];
            log_q += -0.5 * (zq * zq + ln_2pi) - std_q[k].ln();
        }
        let kl = log_p - log_q;
        kl_sum += kl;
        kl_sq += kl * kl;
        h_sum += -log_p;
        h_sq += log_p * log_p;
    }
    let nf = n as f64;
    let kl_mean = kl_sum / nf;
    let kl_se = ((kl_sq / nf - kl_mean * kl_mean).max(0.0) / nf).sqrt();
    let h_mean = h_sum / nf;
    let h_se = ((h_sq / nf - h_mean * h_mean).max(0.0) / nf).sqrt();
    (kl_mean, kl_se, h_mean, h_se)
}

#[test]
fn kl_and_entropy_match_monte_carlo() {
    let mut rng = ChaCha12Rng::seed_from_u64(51);
    let g = Graph::new();
    for _ in 0..3 {
        let d = rng.random_range(1..=4);
        let mean_p: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let std_p: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..2.0)).collect();
        let mean_q: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let std_q: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..2.0)).collect();
        let p = gaussian(&g, &mean_p, &std_p);
        let q = gaussian(&g, &mean_q, &std_q);
        let kl = gaussian_kl(&p, &q).value()[0];
        let h = gaussian_entropy(&p).value()[0];
        let (kl_mc, kl_se, h_mc, h_se) =
            mc_kl_entropy(&mean_p, &std_p, &mean_q, &std_q, 1_000_000, &mut rng);
        assert!(
            (kl - kl_mc).abs() <= 3.0 * kl_se.max(1e-9),
            "KL {kl} vs MC {kl_mc} (se {kl_se})"
        );
        assert!(
            (h - h_mc).abs() <= 3.0 * h_se.max(1e-9),
            "H {h} vs MC {h_mc} (se {h_se})"
        );
    }
}

#[test]
fn mi_loss_reduces_to_entropy_when_posterior_matches() {
    let g = Graph::new();
    let p = gaussian(&g, &[0.4, -0.2], &[0.6, 1.2]);
    let q = gaussian(&g, &[0.4, -0.2], &[0.6, 1.2]);
    let h = gaussian_entropy(&p).value()[0];
    let mi = mi_loss(&[(p, q)], &[true]).item();
    assert!((mi - h).abs() < 1e-12, "mi {mi} vs entropy {h}");
}

#[test]
fn diversity_prefers_roles_far_from_teammate_posterior() {
    let g = Graph::new();
    let posterior = gaussian(&g, &[0.0, 0.0], &[0.5, 0.5]);
    let at_mean = g.matrix(1, 2, vec![0.0, 0.0]);
    let far = g.matrix(1, 2, vec![5.0, 5.0]); // ten stds away
    let near_loss = diversity_loss(&g, &[(at_mean, posterior.clone())], &[true]).item();
    let far_loss = diversity_loss(&g, &[(far, posterior)], &[true]).item();
    assert!(
        near_loss > far_loss,
        "log density at the mean ({near_loss}) must exceed far away ({far_loss})"
    );

    let empty = diversity_loss::<f64>(&g, &[], &[true]).item();
    assert_eq!(empty, 0.0, "no teammate pairs means zero loss");
}

#[test]
fn pair_enumeration_counts() {
    let spec = GameSpec::touchmark(); // 2v2
    assert_eq!(ordered_teammate_pairs(&spec).len(), 4);
    assert_eq!(cross_team_pairs(&spec).len(), 8);

    let mut solo = GameSpec::touchmark();
    solo.agents_per_team = 1;
    assert_eq!(ordered_teammate_pairs(&solo).len(), 0);
    assert_eq!(cross_team_pairs(&solo).len(), 2);
}

#[test]
fn opponent_loss_zero_at_match_and_compositional() {
    let g = Graph::new();
    let mut rng = ChaCha12Rng::seed_from_u64(53);
    let mk = |rng: &mut ChaCha12Rng| {
        let mean: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let std: Vec<f64> = (0..3).map(|_| rng.random_range(0.3..1.5)).collect();
        (mean, std)
    };
    let (m1, s1) = mk(&mut rng);
    let same = opponent_loss(
        &g,
        &[(gaussian(&g, &m1, &s1), gaussian(&g, &m1, &s1))],
        &[true],
    )
    .item();
    assert!(same.abs() < 1e-12);

    let pairs: Vec<(Gaussian<f64>, Gaussian<f64>)> = (0..8)
        .map(|_| {
            let (mp, sp) = mk(&mut rng);
            let (mq, sq) = mk(&mut rng);
            (gaussian(&g, &mp, &sp), gaussian(&g, &mq, &sq))
        })
        .collect();
    let total = opponent_loss(&g, &pairs, &[true]).item();
    let by_hand: f64 = pairs
        .iter()
        .map(|(p, q)| gaussian_kl(p, q).value()[0])
        .sum();
    assert!((total - by_hand).abs() < 1e-9);
}

#[test]
fn decay_schedule_examples_and_monotonicity() {
    let cfg = LossConfig {
        lambda: 0.5,
        decay_episodes: 5000.0,
        ..LossConfig::default()
    };
    assert_eq!(role_weight(&cfg, 0.0), 1.0);
    assert!((role_weight(&cfg, 5000.0) - 0.5).abs() < 1e-12);
    assert!(role_weight(&cfg, 1e9) < 1e-12);
    let mut prev = f64::INFINITY;
    for u in 0..200 {
        let w = role_weight(&cfg, (u * 50) as f64);
        assert!(w <= prev + 1e-15, "decay must be non-increasing");
        prev = w;
    }

    let bundle = total_loss(2.0, 0.5, 0.25, 0.125, 5000.0, &cfg);
    assert_eq!(bundle.l_role, 0.875);
    assert!((bundle.l_tot - (2.0 + 0.5 * 0.875)).abs() < 1e-12);
}

#[test]
fn zero_advantage_zero_alpha_gives_zero_policy_gradient() {
    let mut ps: ParamSet<f64> = ParamSet::new();
    ps.insert("logits", Shape::Matrix(1, 5), vec![0.3, -0.2, 0.9, 0.1, -0.5]);
    let g = Graph::new();
    let logits = g.param(&ps, "logits");
    let loss = policy_surrogate(&logits.log_softmax(), &[2], &[0.0], 0.0, &[true]);
    g.backward(&loss, &mut ps);
    let norm: f64 = ps.get("logits").grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm < 1e-6, "gradient norm {norm}");
}

#[test]
fn positive_advantage_raises_the_sampled_logit() {
    let mut ps: ParamSet<f64> = ParamSet::new();
    ps.insert("logits", Shape::Matrix(1, 4), vec![0.1, 0.2, -0.1, 0.05]);
    let before = ps.get("logits").value[1];
    let mut opt = Adam::new();
    let g = Graph::new();
    let logits = g.param(&ps, "logits");
    let loss = policy_surrogate(&logits.log_softmax(), &[1], &[1.5], 0.0, &[true]);
    g.backward(&loss, &mut ps);
    opt.step(&mut ps, |_| true, 0.05);
    assert!(
        ps.get("logits").value[1] > before,
        "a positively advantaged action should gain probability"
    );
}

#[test]
fn entropy_bonus_pushes_toward_uniform() {
    let mut ps: ParamSet<f64> = ParamSet::new();
    ps.insert("logits", Shape::Matrix(1, 4), vec![2.0, -1.0, 0.5, -0.5]);
    let entropy_of = |ps: &ParamSet<f64>| {
        let g = Graph::new();
        let lp = g.frozen(ps, "logits").log_softmax();
        -lp.exp().mul(&lp).sum().item()
    };
    let h0 = entropy_of(&ps);
    let mut opt = Adam::new();
    for _ in 0..50 {
        let g = Graph::new();
        let logits = g.param(&ps, "logits");
        let loss = policy_surrogate(&logits.log_softmax(), &[0], &[0.0], 5.0, &[true]);
        g.backward(&loss, &mut ps);
        opt.step(&mut ps, |_| true, 0.05);
    }
    let h1 = entropy_of(&ps);
    assert!(h1 > h0, "entropy should increase: {h0} -> {h1}");
    assert!((h1 - 4.0f64.ln()).abs() < 0.05, "close to uniform, H = {h1}");
}

#[test]
fn critic_td_zero_when_targets_match() {
    let mut ps: ParamSet<f64> = ParamSet::new();
    ps.insert("q", Shape::Vector(3), vec![1.0, -2.0, 0.5]);
    let g = Graph::new();
    let q = g.param(&ps, "q");
    let loss = critic_td(&q, &[1.0, -2.0, 0.5], &[true, true, true]);
    assert_eq!(loss.item(), 0.0);
    let loss2 = critic_td(&q, &[0.0, -2.0, 0.5], &[false, true, true]);
    assert_eq!(loss2.item(), 0.0, "masked rows must not contribute");
}

/// Detachment audit on a 2v2 micro model: the opponent loss trains only the
/// predictor, the mutual-information loss never touches the predictor, and
/// the diversity loss reaches the self-role encoder through the sample.
#[test]
fn role_loss_detachment_routes_gradients_correctly() {
    let net = NetConfig {
        role_dim: 3,
        gru_hidden: 4,
        mlp_hidden: 8,
        attn_dim: 8,
        attn_heads: 2,
        ..NetConfig::default()
    };
    let model = Model::new(GameSpec::touchmark(), net, Variant::Rac, 1e-3);
    let mut ps: ParamSet<f64> = model.init_params(7);
    let mut rng = ChaCha12Rng::seed_from_u64(8);
    let obs: Vec<Vec<f32>> = (0..4)
        .map(|_| (0..model.spec.obs_len()).map(|_| rng.random::<f32>() - 0.5).collect())
        .collect();
    let tau: Vec<Vec<f32>> = (0..4)
        .map(|_| (0..4).map(|_| rng.random::<f32>() - 0.5).collect())
        .collect();

    let grad_norms = |ps: &ParamSet<f64>, prefix: &str| -> f64 {
        ps.iter()
            .filter(|p| p.name.starts_with(prefix))
            .flat_map(|p| p.grad.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    };

    // Opponent loss: predicted (live h_O, detached tau) vs detached self-role.
    ps.zero_grads();
    {
        let g = Graph::new();
        let lease = Lease::trainable(&g, &ps);
        let mut pairs = Vec::new();
        for (i, j) in cross_team_pairs(&model.spec) {
            let oi = obs_rows(&g, &[&obs[i]]);
            let ti = obs_rows(&g, &[&tau[i]]);
            let preds = model.opponent_roles(&lease, i, &oi, &ti);
            let pred = preds.into_iter().find(|(o, _)| *o == j).unwrap().1;
            let oj = obs_rows(&g, &[&obs[j]]);
            let aj = onehot_rows(&g, &[Some(1)], model.spec.n_actions());
            let actual = model.self_role(&lease, j, &oj, &aj).detach();
            pairs.push((pred, actual));
        }
        let loss = opponent_loss(&g, &pairs, &[true]);
        g.backward(&loss, &mut ps);
    }
    assert!(grad_norms(&ps, "ho.") > 0.0, "opponent loss must train h_O");
    for prefix in ["hs.", "post.", "traj.", "pi.", "critic."] {
        assert_eq!(
            grad_norms(&ps, prefix),
            0.0,
            "opponent loss leaked gradient into {prefix}"
        );
    }

    // Mutual-information loss: trains h_S and the posterior, not h_O.
    ps.zero_grads();
    {
        let g = Graph::new();
        let lease = Lease::trainable(&g, &ps);
        let mut terms = Vec::new();
        for i in 0..4 {
            let o = obs_rows(&g, &[&obs[i]]);
            let a = onehot_rows(&g, &[Some(0)], model.spec.n_actions());
            let t = obs_rows(&g, &[&tau[i]]);
            let p = model.self_role(&lease, i, &o, &a);
            let q = model.posterior(&lease, i, &o, &a, &t);
            terms.push((p, q));
        }
        let loss = mi_loss(&terms, &[true]);
        g.backward(&loss, &mut ps);
    }
    assert!(grad_norms(&ps, "hs.") > 0.0);
    assert!(grad_norms(&ps, "post.") > 0.0);
    assert_eq!(grad_norms(&ps, "ho."), 0.0, "MI loss must not touch h_O");

    // Diversity loss: reaches h_S through the reparameterized sample.
    ps.zero_grads();
    {
        let g = Graph::new();
        let lease = Lease::trainable(&g, &ps);
        let mut terms = Vec::new();
        for (i, j) in ordered_teammate_pairs(&model.spec) {
            let oi = obs_rows(&g, &[&obs[i]]);
            let ai = onehot_rows(&g, &[Some(2)], model.spec.n_actions());
            let p = model.self_role(&lease, i, &oi, &ai);
            let rho = RoleSample::draw(&g, p, vec![0.3, -0.4, 0.9]);
            let oj = obs_rows(&g, &[&obs[j]]);
            let tj = obs_rows(&g, &[&tau[j]]);
            let q = model.posterior(&lease, j, &oj, &ai, &tj);
            terms.push((rho.value, q));
        }
        let loss = diversity_loss(&g, &terms, &[true]);
        g.backward(&loss, &mut ps);
    }
    assert!(grad_norms(&ps, "hs.") > 0.0, "diversity trains h_S via the sample");
    assert!(grad_norms(&ps, "post.") > 0.0);
    assert_eq!(grad_norms(&ps, "ho."), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kl_is_nonnegative_and_zero_only_at_identity(
        mean_p in proptest::collection::vec(-3.0f64..3.0, 1..4),
        std_scale in proptest::collection::vec(0.05f64..2.5, 1..4),
        mean_shift in -2.0f64..2.0,
    ) {
        let d = mean_p.len().min(std_scale.len());
        let mean_p = &mean_p[..d];
        let std_p = &std_scale[..d];
        let mean_q: Vec<f64> = mean_p.iter().map(|m| m + mean_shift).collect();
        let g = Graph::new();
        let p = gaussian(&g, mean_p, std_p);
        let q = gaussian(&g, &mean_q, std_p);
        let kl = gaussian_kl(&p, &q).value()[0];
        prop_assert!(kl >= -1e-12);
        let self_kl = gaussian_kl(&p, &p).value()[0];
        prop_assert!(self_kl.abs() < 1e-9);
        if mean_shift.abs() > 1e-6 {
            prop_assert!(kl > 0.0);
        }
    }

    #[test]
    fn baseline_is_the_exact_expectation_and_bounded(
        probs_raw in proptest::collection::vec(0.01f64..1.0, 2..8),
        q_vals in proptest::collection::vec(-5.0f64..5.0, 2..8),
    ) {
        let n = probs_raw.len().min(q_vals.len());
        let total: f64 = probs_raw[..n].iter().sum();
        let probs: Vec<f64> = probs_raw[..n].iter().map(|p| p / total).collect();
        let q = &q_vals[..n];
        let g = Graph::new();
        let pt = g.matrix(1, n, probs.clone());
        let qt = g.matrix(1, n, q.to_vec());
        let b = baseline(&pt, &qt).value()[0];
        let dot: f64 = probs.iter().zip(q.iter()).map(|(p, v)| p * v).sum();
        prop_assert!((b - dot).abs() < 1e-9);
        let lo = q.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(b >= lo - 1e-9 && b <= hi + 1e-9);
    }
}

#[test]
fn baseline_examples() {
    let g = Graph::new();
    let uniform = g.matrix(1, 2, vec![0.5, 0.5]);
    let q = g.matrix(1, 2, vec![2.0, 4.0]);
    assert_eq!(baseline(&uniform, &q).value()[0], 3.0);

    let onehot = g.matrix(1, 3, vec![0.0, 1.0, 0.0]);
    let q3 = g.matrix(1, 3, vec![7.0, -1.5, 2.0]);
    assert_eq!(baseline(&onehot, &q3).value()[0], -1.5);
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::*;

fn randn_vec(rng: &mut ChaCha12Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
        .collect()
}

#[test]
fn softmax_rows_normalize() {
    let g: Graph<f64> = Graph::new();
    let x = g.matrix(3, 4, randn_vec(&mut ChaCha12Rng::seed_from_u64(1), 12, 3.0));
    let y = x.softmax();
    let v = y.value();
    for i in 0..3 {
        let row = &v[i * 4..(i + 1) * 4];
        let s: f64 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-6, "row sum {s}");
        assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
    }
}

#[test]
fn square_backward_is_two_x() {
    let mut ps: ParamSet<f64> = ParamSet::new();
    ps.insert("x", Shape::Scalar, vec![3.0]);
    let g = Graph::new();
    let x = g.param(&ps, "x");
    let loss = x.square().sum();
    g.backward(&loss, &mut ps);
    assert_eq!(ps.get("x").grad[0], 6.0);
}

#[test]
fn sum_backward_is_ones_and_disconnected_is_zero() {
    let mut ps: ParamSet<f64> = ParamSet::new();
    ps.insert("w", Shape::Vector(4), vec![1.0, -2.0, 0.5, 9.0]);
    ps.insert("u", Shape::Vector(2), vec![3.0, 4.0]);
    let g = Graph::new();
    let w = g.param(&ps, "w");
    let _u = g.param(&ps, "u");
    let loss = w.sum();
    g.backward(&loss, &mut ps);
    assert_eq!(ps.get("w").grad, vec![1.0; 4]);
    assert_eq!(ps.get("u").grad, vec![0.0; 2]);
}

#[test]
fn backward_twice_accumulates_double() {
    let mut ps: ParamSet<f64> = ParamSet::new();
    ps.insert("w", Shape::Vector(3), vec![0.3, -0.4, 1.1]);
    for _ in 0..2 {
        let g = Graph::new();
        let w = g.param(&ps, "w");
        let loss = w.square().sum();
        g.backward(&loss, &mut ps);
    }
    let expect: Vec<f64> = vec![0.3 * 4.0, -0.4 * 4.0, 1.1 * 4.0];
    for (a, e) in ps.get("w").grad.iter().zip(expect.iter()) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
#[should_panic(expected = "already consumed")]
fn backward_twice_on_same_graph_panics() {
    let mut ps: ParamSet<f64> = ParamSet::new();
    ps.insert("w", Shape::Scalar, vec![1.0]);
    let g = Graph::new();
    let w = g.param(&ps, "w");
    let loss = w.square().sum();
    g.backward(&loss, &mut ps);
    g.backward(&loss, &mut ps);
}

#[test]
#[should_panic(expected = "must be a scalar")]
fn backward_on_non_scalar_panics() {
    let mut ps: ParamSet<f64> = ParamSet::new();
    ps.insert("w", Shape::Vector(2), vec![1.0, 2.0]);
    let g = Graph::new();
    let w = g.param(&ps, "w");
    g.backward(&w, &mut ps);
}

#[test]
#[should_panic(expected = "non-finite")]
fn non_finite_result_panics() {
    let g: Graph<f64> = Graph::new();
    let x = g.vector(&[0.0]);
    let _ = x.log();
}

#[test]
fn gradcheck_linear_is_near_exact() {
    let mut ps: ParamSet<f64> = ParamSet::new();
    ps.insert("w", Shape::Vector(5), vec![0.1, 0.2, -0.3, 0.4, 2.0]);
    let report = gradcheck(
        |g, ps| {
            let w = g.param(ps, "w");
            let c = g.vector(&[1.0, -2.0, 3.0, 0.5, 0.25]);
            w.mul(&c).sum()
        },
        &mut ps,
        1e-5,
        1e-9,
    );
    assert!(
        report.max_rel_err <= 1e-9,
        "linear gradcheck rel err {}",
        report.max_rel_err
    );
}

#[test]
fn gradcheck_two_layer_tanh_mlp() {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let mut ps: ParamSet<f64> = ParamSet::new();
    ps.insert("w1", Shape::Matrix(4, 6), randn_vec(&mut rng, 24, 0.7));
    ps.insert("b1", Shape::Vector(6), randn_vec(&mut rng, 6, 0.2));
    ps.insert("w2", Shape::Matrix(6, 3), randn_vec(&mut rng, 18, 0.7));
    ps.insert("b2", Shape::Vector(3), randn_vec(&mut rng, 3, 0.2));
    let x = randn_vec(&mut rng, 8, 1.0);
    let report = gradcheck(
        |g, ps| {
            let input = g.matrix(2, 4, x.clone());
            let h = input
                .matmul(&g.param(ps, "w1"))
                .add_bias(&g.param(ps, "b1"))
                .tanh();
            let out = h.matmul(&g.param(ps, "w2")).add_bias(&g.param(ps, "b2"));
            out.square().sum()
        },
        &mut ps,
        1e-5,
        1e-5,
    );
    assert!(
        report.max_rel_err < 1e-5,
        "mlp gradcheck rel err {} at {}",
        report.max_rel_err,
        report.worst
    );
}

#[test]
fn gradcheck_softmax_log_likelihood() {
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let mut ps: ParamSet<f64> = ParamSet::new();
    ps.insert("w", Shape::Matrix(3, 5), randn_vec(&mut rng, 15, 0.8));
    let x = randn_vec(&mut rng, 6, 1.0);
    let report = gradcheck(
        |g, ps| {
            let input = g.matrix(2, 3, x.clone());
            let logits = input.matmul(&g.param(ps, "w"));
            let logp = logits.log_softmax();
            logp.select_per_row(&[1, 4]).sum().neg()
        },
        &mut ps,
        1e-5,
        1e-5,
    );
    assert!(
        report.max_rel_err < 1e-5,
        "log-likelihood gradcheck rel err {} at {}",
        report.max_rel_err,
        report.worst
    );
}

/// Every primitive, gradchecked at 10 random points each.
#[test]
fn gradcheck_every_primitive() {
    type Case = (
        &'static str,
        Vec<(&'static str, Shape, f64)>, // name, shape, init scale
        fn(&Graph<f64>, &ParamSet<f64>) -> Tensor<f64>,
    );
    let cases: Vec<Case> = vec![
        ("matmul", vec![("a", Shape::Matrix(3, 4), 1.0), ("b", Shape::Matrix(4, 2), 1.0)], |g, ps| {
            g.param(ps, "a").matmul(&g.param(ps, "b")).square().sum()
        }),
        ("add", vec![("a", Shape::Matrix(2, 3), 1.0), ("b", Shape::Matrix(2, 3), 1.0)], |g, ps| {
            g.param(ps, "a").add(&g.param(ps, "b")).square().sum()
        }),
        ("sub", vec![("a", Shape::Vector(4), 1.0), ("b", Shape::Vector(4), 1.0)], |g, ps| {
            g.param(ps, "a").sub(&g.param(ps, "b")).square().sum()
        }),
        ("mul", vec![("a", Shape::Vector(4), 1.0), ("b", Shape::Vector(4), 1.0)], |g, ps| {
            g.param(ps, "a").mul(&g.param(ps, "b")).square().sum()
        }),
        ("div", vec![("a", Shape::Vector(4), 1.0), ("b", Shape::Vector(4), 0.4)], |g, ps| {
            let b = g.param(ps, "b").square().add_scalar(0.5);
            g.param(ps, "a").div(&b).sum()
        }),
        ("add_bias", vec![("a", Shape::Matrix(3, 2), 1.0), ("b", Shape::Vector(2), 1.0)], |g, ps| {
            g.param(ps, "a").add_bias(&g.param(ps, "b")).square().sum()
        }),
        ("scale_rows", vec![("a", Shape::Matrix(3, 2), 1.0), ("s", Shape::Vector(3), 1.0)], |g, ps| {
            g.param(ps, "a").scale_rows(&g.param(ps, "s")).square().sum()
        }),
        ("add_scalar", vec![("a", Shape::Vector(3), 1.0)], |g, ps| {
            g.param(ps, "a").add_scalar(0.7).square().sum()
        }),
        ("mul_scalar", vec![("a", Shape::Vector(3), 1.0)], |g, ps| {
            g.param(ps, "a").mul_scalar(-1.3).square().sum()
        }),
        ("relu", vec![("a", Shape::Vector(6), 1.0)], |g, ps| {
            g.param(ps, "a").relu().square().sum()
        }),
        ("tanh", vec![("a", Shape::Vector(5), 1.5)], |g, ps| {
            g.param(ps, "a").tanh().square().sum()
        }),
        ("sigmoid", vec![("a", Shape::Vector(5), 1.5)], |g, ps| {
            g.param(ps, "a").sigmoid().square().sum()
        }),
        ("softplus", vec![("a", Shape::Vector(5), 1.5)], |g, ps| {
            g.param(ps, "a").softplus().square().sum()
        }),
        ("exp", vec![("a", Shape::Vector(5), 1.0)], |g, ps| {
            g.param(ps, "a").exp().sum()
        }),
        ("log", vec![("a", Shape::Vector(5), 1.0)], |g, ps| {
            g.param(ps, "a").square().add_scalar(0.3).log().sum()
        }),
        ("square", vec![("a", Shape::Vector(5), 1.0)], |g, ps| {
            g.param(ps, "a").square().sum()
        }),
        ("softmax", vec![("a", Shape::Matrix(2, 4), 1.5)], |g, ps| {
            let p = g.param(ps, "a").softmax();
            let w = g.matrix(2, 4, vec![1.0, -1.0, 2.0, 0.5, 0.3, 1.2, -0.7, 0.0]);
            p.mul(&w).sum()
        }),
        ("log_softmax", vec![("a", Shape::Matrix(2, 4), 1.5)], |g, ps| {
            g.param(ps, "a").log_softmax().select_per_row(&[0, 3]).sum()
        }),
        ("sum", vec![("a", Shape::Matrix(2, 3), 1.0)], |g, ps| {
            g.param(ps, "a").sum()
        }),
        ("mean", vec![("a", Shape::Matrix(2, 3), 1.0)], |g, ps| {
            g.param(ps, "a").square().mean()
        }),
        ("row_sum", vec![("a", Shape::Matrix(3, 4), 1.0)], |g, ps| {
            g.param(ps, "a").row_sum().square().sum()
        }),
        ("concat_cols", vec![("a", Shape::Matrix(2, 2), 1.0), ("b", Shape::Matrix(2, 3), 1.0)], |g, ps| {
            concat_cols(&[&g.param(ps, "a"), &g.param(ps, "b")]).square().sum()
        }),
        ("concat_rows", vec![("a", Shape::Matrix(2, 3), 1.0), ("b", Shape::Matrix(1, 3), 1.0)], |g, ps| {
            concat_rows(&[&g.param(ps, "a"), &g.param(ps, "b")]).square().sum()
        }),
        ("slice_cols", vec![("a", Shape::Matrix(2, 5), 1.0)], |g, ps| {
            g.param(ps, "a").slice_cols(1, 4).square().sum()
        }),
        ("gather_rows", vec![("a", Shape::Matrix(4, 3), 1.0)], |g, ps| {
            g.param(ps, "a").gather_rows(&[2, 0, 2]).square().sum()
        }),
        ("select_per_row", vec![("a", Shape::Matrix(3, 4), 1.0)], |g, ps| {
            g.param(ps, "a").select_per_row(&[1, 3, 0]).square().sum()
        }),
        ("reshape", vec![("a", Shape::Matrix(2, 6), 1.0)], |g, ps| {
            g.param(ps, "a")
                .reshape(Shape::Matrix(3, 4))
                .row_sum()
                .square()
                .sum()
        }),
    ];

    for (name, specs, f) in cases {
        for point in 0..10 {
            let mut rng = ChaCha12Rng::seed_from_u64(0xC0FFEE + point);
            let mut ps: ParamSet<f64> = ParamSet::new();
            for (pname, shape, scale) in &specs {
                ps.insert(pname, *shape, randn_vec(&mut rng, shape.len(), *scale));
            }
            let report = gradcheck(f, &mut ps, 1e-5, 1e-5);
            assert!(
                report.max_rel_err < 1e-5,
                "primitive `{name}` point {point}: rel err {} at {}",
                report.max_rel_err,
                report.worst
            );
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let g: Graph<f32> = Graph::new();
        let x = g.matrix(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, -0.6]);
        let w = g.matrix(3, 2, vec![1.0, 2.0, -0.5, 0.25, 0.125, -1.0]);
        x.matmul(&w).tanh().softmax().sum().item()
    };
    assert_eq!(run().to_bits(), run().to_bits());
}

#[test]
fn detach_cuts_gradient_flow() {
    let mut ps: ParamSet<f64> = ParamSet::new();
    ps.insert("w", Shape::Vector(3), vec![1.0, 2.0, 3.0]);
    let g = Graph::new();
    let w = g.param(&ps, "w");
    let loss = w.detach().mul(&w).sum();
    g.backward(&loss, &mut ps);
    // d/dw (c . w) = c where c = detach(w)
    assert_eq!(ps.get("w").grad, vec![1.0, 2.0, 3.0]);
}

#[test]
fn paramset_roundtrip_is_bit_exact() {
    let mut rng = ChaCha12Rng::seed_from_u64(42);
    let mut ps: ParamSet<f32> = ParamSet::new();
    ps.insert("layer.w", Shape::Matrix(3, 2), (0..6).map(|_| rng.random::<f32>() * 4.0 - 2.0).collect());
    ps.insert("layer.b", Shape::Vector(2), vec![0.5, -0.25]);
    ps.insert("scalar", Shape::Scalar, vec![3.14159265]);

    let mut buf1 = Vec::new();
    ps.write_to(&mut buf1).unwrap();
    let loaded = ParamSet::<f32>::read_from(&mut buf1.as_slice()).unwrap();
    let mut buf2 = Vec::new();
    loaded.write_to(&mut buf2).unwrap();
    assert_eq!(buf1, buf2, "save -> load -> save must be byte-identical");

    let names1: Vec<_> = ps.names().collect();
    let names2: Vec<_> = loaded.names().collect();
    assert_eq!(names1, names2, "insertion order must survive the roundtrip");
    for p in ps.iter() {
        let q = loaded.get(&p.name);
        for (a, b) in p.value.iter().zip(q.value.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn adam_zero_lr_leaves_params_unchanged() {
    let mut ps: ParamSet<f32> = ParamSet::new();
    ps.insert("w", Shape::Vector(3), vec![1.0, 2.0, 3.0]);
    ps.accumulate_grad("w", &[0.5, -1.0, 2.0]);
    let mut opt = Adam::new();
    opt.step(&mut ps, |_| true, 0.0);
    assert_eq!(ps.get("w").value, vec![1.0, 2.0, 3.0]);
    assert_eq!(ps.get("w").grad, vec![0.0; 3], "step consumes gradients");
}

#[test]
fn adam_descends_a_quadratic() {
    let mut ps: ParamSet<f64> = ParamSet::new();
    ps.insert("w", Shape::Vector(2), vec![3.0, -2.0]);
    let mut opt = Adam::new();
    for _ in 0..500 {
        let g = Graph::new();
        let w = g.param(&ps, "w");
        let loss = w.square().sum();
        g.backward(&loss, &mut ps);
        opt.step(&mut ps, |_| true, 0.05);
    }
    for v in &ps.get("w").value {
        assert!(v.abs() < 1e-2, "failed to converge, w = {v}");
    }
}

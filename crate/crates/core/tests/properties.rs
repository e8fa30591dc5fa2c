use proptest::prelude::*;
use unigen_core::models::{gaussian_kl_to_prior, Activation, Head, Mlp, MlpSpec};
use unigen_core::objectives::{backward_into, importance_weights};
use unigen_core::tabular::{jsd, kl, marginal_prior, GanTabularModel, TabularDist};
use unigen_core::{AdamConfig, ParamSet, RngStream, Tape, Tensor};

fn dist(n: usize) -> impl Strategy<Value = TabularDist> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|w| TabularDist::from_weights(&w).unwrap())
}

fn pair() -> impl Strategy<Value = (TabularDist, TabularDist)> {
    (2usize..12).prop_flat_map(|n| (dist(n), dist(n)))
}

fn probs(max_groups: usize) -> impl Strategy<Value = (Vec<f64>, usize)> {
    (1usize..6, 1usize..=max_groups)
        .prop_flat_map(|(k, g)| (prop::collection::vec(1e-4f64..(1.0 - 1e-4), k * g), Just(k)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kl_is_nonnegative_and_zero_on_self((p, q) in pair()) {
        prop_assert!(kl(&p, &q).unwrap() >= -1e-15);
        prop_assert!(kl(&p, &p).unwrap().abs() < 1e-15);
    }

    #[test]
    fn jsd_is_symmetric_and_bounded((p, q) in pair()) {
        let a = jsd(&p, &q).unwrap();
        let b = jsd(&q, &p).unwrap();
        prop_assert!((a - b).abs() < 1e-14);
        prop_assert!(a >= -1e-15 && a <= std::f64::consts::LN_2 + 1e-15);
    }

    #[test]
    fn marginal_prior_lies_between_components(
        (p, theta) in (2usize..12).prop_flat_map(|n| (dist(n), prop::collection::vec(-4.0f64..4.0, n))),
    ) {
        let model = GanTabularModel::new(p);
        let m = marginal_prior(&model, &theta).unwrap();
        let (p, q) = (&model.p_data, model.p_g(&theta).unwrap());
        for i in 0..p.len() {
            let (lo, hi) = (p.prob(i).min(q.prob(i)), p.prob(i).max(q.prob(i)));
            prop_assert!(m.prob(i) >= lo - 1e-15 && m.prob(i) <= hi + 1e-15);
        }
    }

    #[test]
    fn importance_weights_are_normalized((d, k) in probs(5)) {
        let r = importance_weights(&d, k).unwrap();
        for (g, group) in r.normalized.chunks(k).enumerate() {
            let s: f64 = group.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(group.iter().all(|&w| w >= 0.0));
            prop_assert!(r.ess[g] >= 1.0 - 1e-9 && r.ess[g] <= k as f64 + 1e-9);
        }
    }

    #[test]
    fn importance_weights_ignore_a_common_odds_scale((d, k) in probs(3), c in 0.1f64..10.0) {
        // Multiplying every odds ratio D/(1-D) by c leaves normalized weights fixed.
        let scaled: Vec<f64> = d.iter().map(|&p| {
            let o = c * p / (1.0 - p);
            o / (1.0 + o)
        }).collect();
        let a = importance_weights(&d, k).unwrap();
        let b = importance_weights(&scaled, k).unwrap();
        for (x, y) in a.normalized.iter().zip(&b.normalized) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn gaussian_kl_is_nonnegative(
        m in prop::collection::vec(-5.0f64..5.0, 6),
        lv in prop::collection::vec(-6.0f64..4.0, 6),
    ) {
        let mut tape = Tape::new();
        let mv = tape.constant(Tensor::new(vec![2, 3], m.clone()).unwrap());
        let lvv = tape.constant(Tensor::new(vec![2, 3], lv.clone()).unwrap());
        let k = gaussian_kl_to_prior(&mut tape, mv, lvv).unwrap();
        prop_assert!(tape.value(k).data().iter().all(|&v| v >= -1e-12));
        if m.iter().all(|&x| x == 0.0) && lv.iter().all(|&x| x == 0.0) {
            prop_assert!(tape.value(k).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn backward_is_linear(
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        x in prop::collection::vec(-2.0f64..2.0, 6),
    ) {
        // grad(a f + b g) = a grad f + b grad g
        let build = |tape: &mut Tape, xv| {
            let f = tape.tanh(xv);
            let f = tape.sum(f);
            let g = tape.exp(xv);
            let g = tape.mul(g, xv).unwrap();
            let g = tape.mean(g);
            (f, g)
        };
        let x = Tensor::new(vec![2, 3], x).unwrap();
        let grad = |which: u8| {
            let mut tape = Tape::new();
            let xv = tape.param(x.clone());
            let (f, g) = build(&mut tape, xv);
            let root = match which {
                0 => f,
                1 => g,
                _ => {
                    let fa = tape.scale(f, a);
                    let gb = tape.scale(g, b);
                    tape.add(fa, gb).unwrap()
                }
            };
            tape.backward(root).unwrap().get(xv)
        };
        let (gf, gg, gc) = (grad(0), grad(1), grad(2));
        for i in 0..6 {
            let want = a * gf.data()[i] + b * gg.data()[i];
            prop_assert!((gc.data()[i] - want).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>(), steps in 0usize..5) {
        let spec = MlpSpec::new(vec![3, 5, 2], Activation::Relu, Head::Linear).unwrap();
        let mut m = Mlp::new("net", spec, &mut RngStream::new(seed, "init")).unwrap();
        let mut rng = RngStream::new(seed, "data");
        for _ in 0..steps {
            let mut tape = Tape::new();
            let b = m.bind(&mut tape);
            let x = tape.constant(rng.normal_tensor(&[4, 3]));
            let y = m.forward(&mut tape, &b, x).unwrap().linear().unwrap();
            let y2 = tape.mul(y, y).unwrap();
            let l = tape.mean(y2);
            let g = backward_into(&mut tape, l, &b).unwrap();
            m.params_mut().adam_step(&g, &AdamConfig::default()).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        m.params().save(&path).unwrap();
        let back = ParamSet::load(&path).unwrap();
        prop_assert_eq!(&back, m.params());
        for name in back.names() {
            let (a, b) = (back.get(name).unwrap(), m.params().get(name).unwrap());
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}

use unigen_core::gradcheck::{Composition, LossKind};
use unigen_core::models::{encode_with_noise, generate, Activation, Head, Mlp, MlpSpec};
use unigen_core::{RngStream, Tape, Tensor};

#[test]
fn random_compositions_match_finite_differences() {
    let mut rng = RngStream::new(2024, "gradcheck-suite");
    let mut checked = 0;
    for i in 0..56 {
        let kind = LossKind::ALL[i % LossKind::ALL.len()];
        let c = Composition::random(kind, &mut rng).unwrap();
        let r = c.check(1e-5, 1e-4, 1e-7, 40).unwrap();
        assert!(r.passed, "composition {i}: {r:?}");
        checked += 1;
    }
    assert!(checked >= 50);
}

#[test]
fn generator_directional_derivative() {
    // Jacobian-vector product from the tape against a finite difference
    // along a random direction in weight space.
    let mut rng = RngStream::new(8, "jvp");
    let spec = MlpSpec::new(vec![2, 8, 8, 3], Activation::Tanh, Head::Linear).unwrap();
    let gen = Mlp::new("gen", spec, &mut rng).unwrap();
    let z = rng.normal_tensor(&[5, 2]);
    let probe = rng.normal_tensor(&[5, 3]);
    let dirs: Vec<(String, Tensor)> = gen
        .params()
        .names()
        .map(|n| {
            (
                n.clone(),
                rng.normal_tensor(gen.params().get(n).unwrap().shape()),
            )
        })
        .collect();

    // <probe, G(z)> as a scalar so one backward pass gives the JVP.
    let value = |g: &Mlp| {
        let mut tape = Tape::new();
        let b = g.bind(&mut tape);
        let zv = tape.constant(z.clone());
        let x = generate(&mut tape, g, &b, zv).unwrap();
        let p = tape.constant(probe.clone());
        let s = tape.mul(x, p).unwrap();
        let l = tape.sum(s);
        (tape.item(l).unwrap(), tape, b, l)
    };
    let (_, mut tape, b, l) = value(&gen);
    let grads = b.grads(&tape.backward(l).unwrap());
    let jvp: f64 = dirs
        .iter()
        .map(|(n, d)| {
            grads[n]
                .data()
                .iter()
                .zip(d.data())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        })
        .sum();
    let shifted = |eps: f64| {
        let mut g = gen.clone();
        for (n, d) in &dirs {
            let w = g
                .params()
                .get(n)
                .unwrap()
                .zip_map(d, |w, d| w + eps * d)
                .unwrap();
            g.params_mut().set(n, w).unwrap();
        }
        value(&g).0
    };
    let h = 1e-5;
    let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
    assert!(
        (jvp - fd).abs() / jvp.abs().max(1e-12) < 1e-4,
        "{jvp} vs {fd}"
    );
}

#[test]
fn reparam_second_moment_gradient() {
    // d/dlogvar mean((m + e^{lv/2} ε)²) = mean(e^{lv/2} ε (m + e^{lv/2} ε)),
    // which for fixed ε is the closed form checked here against the tape.
    let mut rng = RngStream::new(12, "reparam");
    let spec = MlpSpec::new(vec![3, 6, 2], Activation::Tanh, Head::GaussianParams).unwrap();
    let enc = Mlp::new("enc", spec, &mut rng).unwrap();
    let x = rng.normal_tensor(&[8, 3]);
    let eps = rng.normal_tensor(&[8, 2]);
    let mut tape = Tape::new();
    let b = enc.bind_frozen(&mut tape);
    let xv = tape.constant(x);
    let (mean, logvar) = enc.forward(&mut tape, &b, xv).unwrap().gaussian().unwrap();
    let lv = tape.detach(logvar);
    let lv_leaf = tape.param(tape.value(lv).clone());
    let m = tape.detach(mean);
    let r = unigen_core::models::reparam_with_noise(&mut tape, m, lv_leaf, eps.clone()).unwrap();
    let sq = tape.mul(r.z, r.z).unwrap();
    let loss = tape.mean(sq);
    let g = tape.backward(loss).unwrap().get(lv_leaf);
    let n = eps.numel() as f64;
    let (mv, lvv) = (tape.value(m).clone(), tape.value(lv_leaf).clone());
    for i in 0..eps.numel() {
        let s = (0.5 * lvv.data()[i]).exp();
        let e = eps.data()[i];
        let want = s * e * (mv.data()[i] + s * e) / n;
        let got = g.data()[i];
        assert!(
            (got - want).abs() <= 1e-4 * want.abs().max(1e-12),
            "{got} vs {want}"
        );
    }

    // ε = 0 gives z == mean exactly.
    let mut tape = Tape::new();
    let b = enc.bind(&mut tape);
    let xv = tape.constant(Tensor::zeros(&[2, 3]));
    let r = encode_with_noise(&mut tape, &enc, &b, xv, Tensor::zeros(&[2, 2])).unwrap();
    assert_eq!(tape.value(r.z), tape.value(r.mean));
}

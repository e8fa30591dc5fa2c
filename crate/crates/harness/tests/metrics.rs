use proptest::prelude::*;
use unigen_core::models::{Activation, Head, Mlp, MlpSpec};
use unigen_core::tabular::{jsd, kl, TabularDist};
use unigen_core::{RngStream, Tensor};
use unigen_harness::config::MixtureSpec;
use unigen_harness::data::sample_mixture_2d;
use unigen_harness::metrics::{histogram_divergences, mode_coverage, test_elbo, Grid};

fn two_modes() -> MixtureSpec {
    MixtureSpec::asymmetric_two_mode()
}

#[test]
fn samples_from_the_mixture_cover_every_mode() {
    let spec = two_modes();
    let d = sample_mixture_2d(&spec, 4000, &mut RngStream::new(0, "cov"));
    let c = mode_coverage(&d.x, &spec, None, 0.01).unwrap();
    assert_eq!(c.covered, 2);
    // A 2-D Gaussian puts 1 - exp(-9/2) of its mass within 3 std.
    let inside = 1.0 - (-4.5f64).exp();
    assert!(
        (c.high_quality - inside).abs() < 0.005,
        "{}",
        c.high_quality
    );
    assert!((c.per_mode_hit[1] - 0.25 * inside).abs() < 0.03);
}

#[test]
fn samples_at_one_mean_cover_one_mode() {
    let spec = two_modes();
    let x = Tensor::from_rows(&vec![vec![2.0, 0.0]; 100]).unwrap();
    let c = mode_coverage(&x, &spec, None, 0.01).unwrap();
    assert_eq!(c.covered, 1);
    assert_eq!(c.per_mode_hit, vec![0.0, 1.0]);
    assert_eq!(c.high_quality, 1.0);
}

#[test]
fn coverage_rejects_nonpositive_radius() {
    let x = Tensor::zeros(&[3, 2]);
    assert!(mode_coverage(&x, &two_modes(), Some(0.0), 0.01).is_err());
    assert!(mode_coverage(&x, &two_modes(), Some(-1.0), 0.01).is_err());
}

/// Independent assignment: a sample hits mode `j` when no other mean is
/// strictly closer and the squared distance is within `r_j²`.
fn brute_force(points: &[[f64; 2]], spec: &MixtureSpec, radii: &[f64]) -> (Vec<usize>, usize) {
    let m = spec.means.len();
    let mut hits = vec![0; m];
    let mut good = 0;
    for p in points {
        let d2: Vec<f64> = spec
            .means
            .iter()
            .map(|c| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2))
            .collect();
        let j = (0..m).find(|&j| (0..m).all(|l| d2[j] <= d2[l])).unwrap();
        if d2[j] <= radii[j] * radii[j] {
            hits[j] += 1;
        }
        if (0..m).any(|l| d2[l] <= radii[l] * radii[l]) {
            good += 1;
        }
    }
    (hits, good)
}

proptest! {
    #[test]
    fn coverage_matches_brute_force(
        means in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..4),
        std in 0.1f64..1.0,
        radius in prop::option::of(0.1f64..2.0),
        pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..200),
    ) {
        let m = means.len();
        let spec = MixtureSpec {
            means: means.iter().map(|&(a, b)| [a, b]).collect(),
            weights: vec![1.0 / m as f64; m],
            stds: (0..m).map(|i| std * (1.0 + i as f64 * 0.5)).collect(),
        };
        let points: Vec<[f64; 2]> = pts.iter().map(|&(a, b)| [a, b]).collect();
        let x = Tensor::from_rows(&points.iter().map(|p| p.to_vec()).collect::<Vec<_>>()).unwrap();
        let c = mode_coverage(&x, &spec, radius, 0.01).unwrap();
        let (hits, good) = brute_force(&points, &spec, &c.radii);
        let n = points.len() as f64;
        for j in 0..m {
            prop_assert_eq!(c.per_mode_hit[j], hits[j] as f64 / n);
        }
        prop_assert_eq!(c.high_quality, good as f64 / n);
        prop_assert_eq!(c.covered, hits.iter().filter(|&&h| h as f64 / n >= 0.01).count());
    }
}

#[test]
fn identical_sample_sets_have_zero_divergence() {
    let spec = two_modes();
    let d = sample_mixture_2d(&spec, 2000, &mut RngStream::new(1, "h"));
    let grid = Grid::around(&spec, 20).unwrap();
    let r = histogram_divergences(&d.x, &d.x, &grid).unwrap();
    assert!(r.kl_hat.abs() < 1e-12 && r.jsd_hat.abs() < 1e-12);

    let e = sample_mixture_2d(&spec, 100_000, &mut RngStream::new(2, "h"));
    let f = sample_mixture_2d(&spec, 100_000, &mut RngStream::new(3, "h"));
    let r = histogram_divergences(&e.x, &f.x, &grid).unwrap();
    assert!(r.kl_hat < 5e-3 && r.jsd_hat < 2e-3, "{r:?}");
}

#[test]
fn disjoint_clusters_approach_log_two() {
    let a = MixtureSpec {
        means: vec![[-3.0, 0.0]],
        weights: vec![1.0],
        stds: vec![0.2],
    };
    let b = MixtureSpec {
        means: vec![[3.0, 0.0]],
        ..a.clone()
    };
    let both = MixtureSpec {
        means: vec![[-3.0, 0.0], [3.0, 0.0]],
        weights: vec![0.5, 0.5],
        stds: vec![0.2, 0.2],
    };
    let grid = Grid::around(&both, 20).unwrap();
    let est = |n: usize| {
        let p = sample_mixture_2d(&a, n, &mut RngStream::new(4, "p"));
        let q = sample_mixture_2d(&b, n, &mut RngStream::new(4, "q"));
        histogram_divergences(&p.x, &q.x, &grid).unwrap().jsd_hat
    };
    let (small, large) = (est(1000), est(100_000));
    let ln2 = std::f64::consts::LN_2;
    assert!(small < large && large <= ln2);
    assert!(ln2 - large < 0.01, "jsd {large}");
}

fn grid_1d(k: usize) -> Grid {
    Grid::new(vec![0.0], vec![k as f64], k).unwrap()
}

/// Draws from a tabular distribution as 1-D points at cell centres.
fn tabular_points(p: &TabularDist, n: usize, rng: &mut RngStream) -> Tensor {
    let v: Vec<f64> = (0..n)
        .map(|_| rng.categorical(p.probs()) as f64 + 0.5)
        .collect();
    Tensor::new(vec![n, 1], v).unwrap()
}

fn tabular_pair() -> (TabularDist, TabularDist) {
    (
        TabularDist::new(vec![0.3, 0.25, 0.2, 0.15, 0.1]).unwrap(),
        TabularDist::new(vec![0.1, 0.15, 0.2, 0.25, 0.3]).unwrap(),
    )
}

#[test]
fn tabular_samples_match_exact_divergences() {
    let (p, q) = tabular_pair();
    let exact_kl = kl(&p, &q).unwrap();
    let exact_jsd = jsd(&p, &q).unwrap();
    let grid = grid_1d(5);
    let n = 20_000;
    let reps = 30;
    let mut kls = Vec::new();
    let mut jsds = Vec::new();
    for r in 0..reps {
        let mut rng = RngStream::new(r, "tab");
        let a = tabular_points(&p, n, &mut rng);
        let b = tabular_points(&q, n, &mut rng);
        let d = histogram_divergences(&a, &b, &grid).unwrap();
        kls.push(d.kl_hat);
        jsds.push(d.jsd_hat);
    }
    for (name, v, exact) in [("kl", &kls, exact_kl), ("jsd", &jsds, exact_jsd)] {
        let mean = v.iter().sum::<f64>() / reps as f64;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        // Plug-in estimators are biased by O(K / n); allow that on top of
        // three standard errors.
        let bias = 5.0 / n as f64;
        assert!(
            (mean - exact).abs() <= 3.0 * sd / (reps as f64).sqrt() + bias,
            "{name}: mean {mean}, exact {exact}, sd {sd}"
        );
    }
}

#[test]
fn divergence_error_shrinks_with_sample_count() {
    let (p, q) = tabular_pair();
    let exact = kl(&p, &q).unwrap();
    let grid = grid_1d(5);
    let mean_err = |n: usize| {
        (0..10)
            .map(|r| {
                let mut rng = RngStream::new(100 + r, "consistency");
                let a = tabular_points(&p, n, &mut rng);
                let b = tabular_points(&q, n, &mut rng);
                (histogram_divergences(&a, &b, &grid).unwrap().kl_hat - exact).abs()
            })
            .sum::<f64>()
            / 10.0
    };
    let (e3, e5) = (mean_err(1_000), mean_err(100_000));
    assert!(e5 < e3 / 3.0, "error {e3} at 1e3, {e5} at 1e5");
}

#[test]
fn empty_sample_set_is_an_error() {
    let grid = grid_1d(3);
    let empty = Tensor::zeros(&[0, 1]);
    let one = Tensor::new(vec![1, 1], vec![0.5]).unwrap();
    assert!(histogram_divergences(&empty, &one, &grid).is_err());
}

fn toy_pair(rng: &mut RngStream, dx: usize, dz: usize) -> (Mlp, Mlp) {
    let enc = Mlp::new(
        "enc",
        MlpSpec::new(vec![dx, 16, dz], Activation::Tanh, Head::GaussianParams).unwrap(),
        &mut rng.substream("enc"),
    )
    .unwrap();
    let dec = Mlp::new(
        "dec",
        MlpSpec::new(vec![dz, 16, dx], Activation::Tanh, Head::Sigmoid).unwrap(),
        &mut rng.substream("dec"),
    )
    .unwrap();
    (enc, dec)
}

fn binary_data(rng: &mut RngStream, n: usize, d: usize) -> Tensor {
    let v: Vec<f64> = (0..n * d)
        .map(|_| f64::from(u8::from(rng.uniform() < 0.3)))
        .collect();
    Tensor::new(vec![n, d], v).unwrap()
}

#[test]
fn constant_decoder_gives_analytic_bernoulli_loglik() {
    let mut rng = RngStream::new(7, "const");
    let (dx, dz) = (6, 3);
    let (mut enc, mut dec) = toy_pair(&mut rng, dx, dz);
    // Encoder at the prior: no KL, and p(z) / q(z|x) = 1.
    enc.zero_last_layer().unwrap();
    dec.zero_last_layer().unwrap();
    let b = [-1.0, 0.0, 0.5, 2.0, -3.0, 1.0];
    let bias = dec.bias_name(dec.num_layers() - 1);
    dec.params_mut()
        .set(&bias, Tensor::vector(b.to_vec()).unwrap())
        .unwrap();
    let x = binary_data(&mut rng, 700, dx);
    let sigma = |t: f64| 1.0 / (1.0 + (-t).exp());
    let mut expected = 0.0;
    for i in 0..x.rows() {
        for (d, &bd) in b.iter().enumerate() {
            let v = x.row(i)[d];
            expected += v * sigma(bd).ln() + (1.0 - v) * (1.0 - sigma(bd)).ln();
        }
    }
    expected /= x.rows() as f64;
    for s in [1, 4] {
        let e = test_elbo(&enc, &dec, &x, &mut rng, s).unwrap();
        assert!(
            (e.mean_elbo - expected).abs() < 1e-10,
            "{} vs {expected}",
            e.mean_elbo
        );
        assert!((e.iw_bound - expected).abs() < 1e-10);
    }
}

#[test]
fn averaging_more_draws_does_not_lower_the_bound() {
    let seeds = 12;
    let mut gaps = Vec::new();
    for s in 0..seeds {
        let mut rng = RngStream::new(s, "jensen");
        let (enc, dec) = toy_pair(&mut rng, 8, 2);
        let x = binary_data(&mut rng, 200, 8);
        let one = test_elbo(&enc, &dec, &x, &mut rng, 1).unwrap().iw_bound;
        let many = test_elbo(&enc, &dec, &x, &mut rng, 16).unwrap().iw_bound;
        gaps.push(many - one);
    }
    let mean = gaps.iter().sum::<f64>() / seeds as f64;
    let sd = (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (seeds - 1) as f64).sqrt();
    let t = mean / (sd / (seeds as f64).sqrt());
    assert!(t > 3.0, "mean gap {mean}, t = {t}");
}

#[test]
fn test_elbo_needs_a_draw_and_data() {
    let mut rng = RngStream::new(0, "x");
    let (enc, dec) = toy_pair(&mut rng, 4, 2);
    let x = binary_data(&mut rng, 5, 4);
    assert!(test_elbo(&enc, &dec, &x, &mut rng, 0).is_err());
    assert!(test_elbo(&enc, &dec, &Tensor::zeros(&[0, 4]), &mut rng, 1).is_err());
}

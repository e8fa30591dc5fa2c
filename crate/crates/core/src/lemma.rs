//! Numeric checks of the GAN and VAE reformulations on tabular instances.
//!
//! The GAN checks differentiate with respect to the generator logits `θ` by
//! finite differences. The reversed posterior `q^r(x|y)` and the prior
//! `p_θ0(x)` are computed once at `θ0` and held fixed while `θ` moves; the
//! gradient identity is a statement at `θ = θ0` under exactly that
//! convention.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numdiff::{central_gradient, max_abs_diff, richardson_gradient};
use crate::rng::RngStream;
use crate::tabular::{
    jsd, kl, optimal_discriminator, reversed_kernel, reversed_posterior, GanTabularModel,
    TabularConditional, TabularDist,
};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-5;
/// Slack allowed by [`jsd_bound_check`].
pub const BOUND_SLACK: f64 = 1e-10;

#[derive(Clone, Debug, Serialize)]
pub struct Lemma1Report {
    pub lhs_grad: Vec<f64>,
    pub rhs_grad: Vec<f64>,
    /// Gradient of `E_p(y) KL(p_θ(x|y) || q^r(x|y))` alone.
    pub kl_grad: Vec<f64>,
    /// Gradient of `JSD(p_θ(x|0) || p_θ(x|1))` alone.
    pub jsd_grad: Vec<f64>,
    pub max_abs_diff: f64,
    pub h: f64,
    /// Set when the plain central difference missed `tol` and the reported
    /// gradients come from one Richardson extrapolation step.
    pub richardson: bool,
    pub passed: bool,
}

fn check_interior(phi0: &TabularConditional) -> Result<Vec<f64>> {
    let p1 = phi0.p_one()?;
    if let Some((i, p)) = p1
        .iter()
        .enumerate()
        .find(|(_, p)| !(**p > 0.0 && **p < 1.0))
    {
        return Err(Error::InvalidArgument(format!(
            "discriminator must lie strictly inside (0, 1); q(y=1|x={i}) = {p}"
        )));
    }
    Ok(p1)
}

/// Frozen pieces shared by both sides of the identity.
struct Frozen {
    p_data: TabularDist,
    d: Vec<f64>,
    post0: TabularDist,
    post1: TabularDist,
}

impl Frozen {
    fn new(model: &GanTabularModel, theta0: &[f64], phi0: &TabularConditional) -> Result<Self> {
        let d = check_interior(phi0)?;
        Ok(Self {
            p_data: model.p_data.clone(),
            d,
            post0: reversed_posterior(model, theta0, phi0, 0)?,
            post1: reversed_posterior(model, theta0, phi0, 1)?,
        })
    }

    /// `-E_{p_θ(x|y)p(y)} log q^r(y|x)` with `q^r(0|x) = D(x)`.
    fn lhs(&self, theta: &[f64]) -> f64 {
        let p_g = TabularDist::from_logits(theta).expect("finite logits");
        -0.5 * p_g.expect(|x| self.d[x].ln()) - 0.5 * self.p_data.expect(|x| (1.0 - self.d[x]).ln())
    }

    fn kl_term(&self, theta: &[f64]) -> f64 {
        let p_g = TabularDist::from_logits(theta).expect("finite logits");
        0.5 * kl(&p_g, &self.post0).unwrap_or(f64::NAN)
            + 0.5 * kl(&self.p_data, &self.post1).unwrap_or(f64::NAN)
    }

    fn jsd_term(&self, theta: &[f64]) -> f64 {
        let p_g = TabularDist::from_logits(theta).expect("finite logits");
        jsd(&p_g, &self.p_data).unwrap_or(f64::NAN)
    }
}

/// Compares `∇θ[-E log q^r(y|x)]` with
/// `∇θ[E_p(y) KL(p_θ(x|y) || q^r(x|y)) - JSD(p_θ(x|0) || p_θ(x|1))]` at `θ0`.
pub fn lemma1_check(
    model: &GanTabularModel,
    theta0: &[f64],
    phi0: &TabularConditional,
    h: f64,
    tol: f64,
) -> Result<Lemma1Report> {
    model.p_g(theta0)?;
    let fr = Frozen::new(model, theta0, phi0)?;
    // Surface absolute-continuity failures before differencing.
    kl(&model.p_g(theta0)?, &fr.post0)?;
    kl(&fr.p_data, &fr.post1)?;

    let eval = |rich: bool| {
        let grad = |f: &mut dyn FnMut(&[f64]) -> f64| {
            let mut f = |x: &[f64]| f(x);
            if rich {
                richardson_gradient(&mut f, theta0, h)
            } else {
                central_gradient(&mut f, theta0, h)
            }
        };
        let lhs = grad(&mut |t| fr.lhs(t));
        let rhs = grad(&mut |t| fr.kl_term(t) - fr.jsd_term(t));
        let klg = grad(&mut |t| fr.kl_term(t));
        let jsdg = grad(&mut |t| fr.jsd_term(t));
        (lhs, rhs, klg, jsdg)
    };

    let mut richardson = false;
    let (mut lhs, mut rhs, mut klg, mut jsdg) = eval(false);
    let mut diff = max_abs_diff(&lhs, &rhs);
    if !(diff < tol) {
        richardson = true;
        (lhs, rhs, klg, jsdg) = eval(true);
        diff = max_abs_diff(&lhs, &rhs);
    }
    if lhs.iter().chain(&rhs).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "gradient identity finite differences".into(),
        });
    }
    Ok(Lemma1Report {
        lhs_grad: lhs,
        rhs_grad: rhs,
        kl_grad: klg,
        jsd_grad: jsdg,
        max_abs_diff: diff,
        h,
        richardson,
        passed: diff < tol,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct JsdBoundReport {
    pub jsd: f64,
    /// `E_p(y) KL(p_θ(x|y) || k_y)` against the unnormalized kernel
    /// `k_y(x) = q^r(y|x) p_θ0(x)`; equals the normalized value minus
    /// `E_p(y) log Z_y`.
    pub expected_kl: f64,
    /// Same expectation against the normalized posterior `q^r(x|y)`.
    pub expected_kl_normalized: f64,
    /// `[log Z_0, log Z_1]`.
    pub log_normalizers: [f64; 2],
    pub holds: bool,
    pub holds_normalized: bool,
}

/// `JSD(p_θ(·|0) || p_θ(·|1)) <= E_p(y) KL(p_θ(x|y) || q^r(x|y))`, with the
/// reversed posterior built at `θ0`.
pub fn jsd_bound_check(
    model: &GanTabularModel,
    theta: &[f64],
    theta0: &[f64],
    phi0: &TabularConditional,
) -> Result<JsdBoundReport> {
    let p_g = model.p_g(theta)?;
    let j = jsd(&p_g, &model.p_data)?;
    let mut norm = 0.0;
    let mut log_z = [0.0; 2];
    for y in 0..2 {
        let (_, z) = reversed_kernel(model, theta0, phi0, y)?;
        let post = reversed_posterior(model, theta0, phi0, y)?;
        let p = model.conditional(theta, y)?;
        norm += 0.5 * kl(&p, &post)?;
        log_z[y] = z.ln();
    }
    let unnorm = norm - 0.5 * (log_z[0] + log_z[1]);
    Ok(JsdBoundReport {
        jsd: j,
        expected_kl: unnorm,
        expected_kl_normalized: norm,
        log_normalizers: log_z,
        holds: j <= unnorm + BOUND_SLACK,
        holds_normalized: j <= norm + BOUND_SLACK,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SpecializationReport {
    pub rhs_grad: Vec<f64>,
    /// `∇θ[½KL(p_gθ || p_data) - JSD(p_gθ || p_data)]`.
    pub collapsed_grad: Vec<f64>,
    pub max_abs_diff: f64,
    pub richardson: bool,
    pub passed: bool,
}

/// With the optimal discriminator at `θ0` the right-hand side of the
/// gradient identity reduces to `∇θ[½KL(p_gθ || p_data) - JSD]`.
pub fn optimal_specialization_check(
    model: &GanTabularModel,
    theta0: &[f64],
    h: f64,
    tol: f64,
) -> Result<SpecializationReport> {
    let p_g0 = model.p_g(theta0)?;
    for (i, (&g, &d)) in p_g0.probs().iter().zip(model.p_data.probs()).enumerate() {
        if g > 0.0 && d == 0.0 {
            return Err(Error::AbsoluteContinuity { index: i, p: g });
        }
    }
    let opt = optimal_discriminator(&p_g0, &model.p_data)?;
    let fr = Frozen::new(model, theta0, &opt.table)?;
    let p_data = model.p_data.clone();
    let collapsed = |t: &[f64]| {
        let p_g = TabularDist::from_logits(t).expect("finite logits");
        0.5 * kl(&p_g, &p_data).unwrap_or(f64::NAN) - jsd(&p_g, &p_data).unwrap_or(f64::NAN)
    };
    let eval = |rich: bool| {
        let mut rhs_f = |t: &[f64]| fr.kl_term(t) - fr.jsd_term(t);
        let mut col_f = |t: &[f64]| collapsed(t);
        if rich {
            (
                richardson_gradient(&mut rhs_f, theta0, h),
                richardson_gradient(&mut col_f, theta0, h),
            )
        } else {
            (
                central_gradient(&mut rhs_f, theta0, h),
                central_gradient(&mut col_f, theta0, h),
            )
        }
    };
    let mut richardson = false;
    let (mut rhs, mut col) = eval(false);
    let mut diff = max_abs_diff(&rhs, &col);
    if !(diff < tol) {
        richardson = true;
        (rhs, col) = eval(true);
        diff = max_abs_diff(&rhs, &col);
    }
    Ok(SpecializationReport {
        rhs_grad: rhs,
        collapsed_grad: col,
        max_abs_diff: diff,
        richardson,
        passed: diff < tol,
    })
}

/// A VAE on finite supports, extended with the fake branch `y = 1` whose
/// pieces are fixed tables.
#[derive(Clone, Debug, Serialize)]
pub struct TabularVae {
    pub p_data: TabularDist,
    /// `p̃(z)`.
    pub prior_z: TabularDist,
    /// `p̃_θ(x|z)`: rows indexed by `z`.
    pub decoder: TabularConditional,
    /// The decoder at `θ0`, which defines the fake distribution that
    /// `p_θ0(x)` mixes in.
    pub decoder0: TabularConditional,
    /// `q̃_η(z|x)`: rows indexed by `x`.
    pub encoder: TabularConditional,
    /// `q_η(z|x, y=1)`, constant.
    pub fake_encoder: TabularConditional,
    /// `p(z|y=1)`, constant.
    pub fake_prior_z: TabularDist,
}

impl TabularVae {
    pub fn random(rng: &mut RngStream, nx: usize, nz: usize) -> Self {
        Self {
            p_data: TabularDist::random(rng, nx),
            prior_z: TabularDist::random(rng, nz),
            decoder: TabularConditional::random(rng, nz, nx),
            decoder0: TabularConditional::random(rng, nz, nx),
            encoder: TabularConditional::random(rng, nx, nz),
            fake_encoder: TabularConditional::random(rng, nx, nz),
            fake_prior_z: TabularDist::random(rng, nz),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nx = self.p_data.len();
        let nz = self.prior_z.len();
        let ok = self.decoder.num_conditions() == nz
            && self.decoder.target_size() == nx
            && self.decoder0.num_conditions() == nz
            && self.decoder0.target_size() == nx
            && self.encoder.num_conditions() == nx
            && self.encoder.target_size() == nz
            && self.fake_encoder.num_conditions() == nx
            && self.fake_encoder.target_size() == nz
            && self.fake_prior_z.len() == nz;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "tabular VAE tables disagree with |x| = {nx}, |z| = {nz}"
            )));
        }
        Ok(())
    }

    /// `p_gθ0(x) = Σ_z p̃_θ0(x|z) p̃(z)`.
    pub fn fake0(&self) -> Result<TabularDist> {
        self.decoder0.marginalize(&self.prior_z)
    }

    /// `p_θ(x|z, y)`.
    fn px(&self, x: usize, z: usize, y: usize) -> f64 {
        if y == 0 {
            self.decoder.prob(z, x)
        } else {
            self.p_data.prob(x)
        }
    }

    fn qz(&self, z: usize, x: usize, y: usize) -> f64 {
        if y == 0 {
            self.encoder.prob(x, z)
        } else {
            self.fake_encoder.prob(x, z)
        }
    }

    fn pz(&self, z: usize, y: usize) -> f64 {
        if y == 0 {
            self.prior_z.prob(z)
        } else {
            self.fake_prior_z.prob(z)
        }
    }

    /// Per-example ELBO `E_q̃ log p̃_θ(x|z) - KL(q̃(z|x) || p̃(z))`.
    pub fn elbo_x(&self, x: usize) -> Result<f64> {
        let q = self.encoder.row(x);
        let mut rec = 0.0;
        for z in 0..q.len() {
            let qz = q.prob(z);
            if qz == 0.0 {
                continue;
            }
            let p = self.decoder.prob(z, x);
            if p == 0.0 {
                return Err(Error::Domain {
                    op: "elbo",
                    detail: format!("decoder gives x={x} zero mass under z={z}"),
                });
            }
            rec += qz * p.ln();
        }
        Ok(rec - kl(q, &self.prior_z)?)
    }

    /// `E_p_data[elbo_x]`.
    pub fn elbo(&self) -> Result<f64> {
        let mut total = 0.0;
        for x in 0..self.p_data.len() {
            let p = self.p_data.prob(x);
            if p > 0.0 {
                total += p * self.elbo_x(x)?;
            }
        }
        Ok(total)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Lemma2Report {
    /// Conventional ELBO.
    pub elbo: f64,
    /// Reconstruction-minus-KL form under `p_θ0(x)` and the perfect reversed
    /// discriminator.
    pub rewritten: f64,
    /// Terms of `rewritten` that do not depend on `θ` or `η`.
    pub constants: LemmaConstants,
    /// `-E_{p_θ0} KL(q_η(z|x,y) q^r_*(y|x) || p_θ(z,y|x))`.
    pub kl_form: f64,
    /// `E_{p_θ0} log p_θ(x)`, the gap `rewritten - kl_form`.
    pub evidence: f64,
    /// `|2 (rewritten - constants.total) - elbo|`.
    pub diff: f64,
    /// `|rewritten - kl_form - evidence|`.
    pub kl_form_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LemmaConstants {
    /// `½ E_{p_gθ0} log p_data(x)`: reconstruction of fake samples.
    pub fake_reconstruction: f64,
    /// `-½ E_{p_gθ0} KL(q(z|x,1) || p(z|1))`.
    pub fake_code_kl: f64,
    /// `-E_{p_θ0} KL(q^r_*(y|x) || p(y))`, which is `-log 2`.
    pub label_kl: f64,
    pub total: f64,
}

/// Evaluates both rewritten VAE objectives by exhaustive summation over
/// `(origin, x, y, z)` and compares them with the conventional ELBO.
///
/// Samples from `p_θ0(x)` carry their origin; the perfect discriminator
/// `q_*` labels real samples 1 and fake samples 0, so its reversal picks the
/// `y = 0` branch for real data and `y = 1` for generated data.
pub fn lemma2_check(vae: &TabularVae) -> Result<Lemma2Report> {
    vae.validate()?;
    let nx = vae.p_data.len();
    let nz = vae.prior_z.len();
    let fake0 = vae.fake0()?;
    let p_y = [0.5, 0.5];
    // origin 1 = real, origin 0 = generated
    let origin_dist = |o: usize| if o == 1 { &vae.p_data } else { &fake0 };

    let fake_theta = vae.decoder.marginalize(&vae.prior_z)?;
    let p_theta_x = |x: usize| 0.5 * fake_theta.prob(x) + 0.5 * vae.p_data.prob(x);

    let mut rewritten = 0.0;
    let mut kl_form = 0.0;
    let mut evidence = 0.0;
    for o in 0..2 {
        let px0 = origin_dist(o);
        for x in 0..nx {
            let w = 0.5 * px0.prob(x);
            if w == 0.0 {
                continue;
            }
            let qr = |y: usize| if y == 1 - o { 1.0 } else { 0.0 };
            let mut rec = 0.0;
            let mut joint_kl = 0.0;
            let mut post_kl = 0.0;
            let marg = p_theta_x(x);
            if !(marg > 0.0) {
                return Err(Error::ZeroNormalizer(format!("p_θ(x={x}) is zero")));
            }
            for y in 0..2 {
                if qr(y) == 0.0 {
                    continue;
                }
                for z in 0..nz {
                    let q = qr(y) * vae.qz(z, x, y);
                    if q == 0.0 {
                        continue;
                    }
                    let lik = vae.px(x, z, y);
                    let prior = vae.pz(z, y) * p_y[y];
                    if lik == 0.0 || prior == 0.0 {
                        return Err(Error::AbsoluteContinuity { index: z, p: q });
                    }
                    rec += q * lik.ln();
                    joint_kl += q * (q / prior).ln();
                    post_kl += q * (q / (lik * prior / marg)).ln();
                }
            }
            rewritten += w * (rec - joint_kl);
            kl_form -= w * post_kl;
            evidence += w * marg.ln();
        }
    }

    let mut fake_rec = 0.0;
    let mut fake_kl = 0.0;
    for x in 0..nx {
        let p = fake0.prob(x);
        if p == 0.0 {
            continue;
        }
        let d = vae.p_data.prob(x);
        if d == 0.0 {
            return Err(Error::AbsoluteContinuity { index: x, p });
        }
        fake_rec += p * d.ln();
        fake_kl += p * kl(vae.fake_encoder.row(x), &vae.fake_prior_z)?;
    }
    let constants = LemmaConstants {
        fake_reconstruction: 0.5 * fake_rec,
        fake_code_kl: -0.5 * fake_kl,
        label_kl: -2f64.ln(),
        total: 0.5 * fake_rec - 0.5 * fake_kl - 2f64.ln(),
    };
    let elbo = vae.elbo()?;
    Ok(Lemma2Report {
        elbo,
        rewritten,
        diff: (2.0 * (rewritten - constants.total) - elbo).abs(),
        kl_form_residual: (rewritten - kl_form - evidence).abs(),
        constants,
        kl_form,
        evidence,
    })
}

/// Tabular adversarially-weighted VAE objective: each sample's ELBO is
/// weighted by `q^r(y=0|x) = q_φ(y=1|x)`, separately for real samples and
/// for samples generated at `θ0`.
pub fn aavae_tabular_objective(vae: &TabularVae, w_real: &[f64], w_fake: &[f64]) -> Result<f64> {
    vae.validate()?;
    let nx = vae.p_data.len();
    if w_real.len() != nx || w_fake.len() != nx {
        return Err(Error::ShapeMismatch {
            op: "aavae_tabular_objective",
            lhs: vec![nx],
            rhs: vec![w_real.len(), w_fake.len()],
        });
    }
    let fake0 = vae.fake0()?;
    let mut total = 0.0;
    for x in 0..nx {
        let m = vae.p_data.prob(x) * w_real[x] + fake0.prob(x) * w_fake[x];
        if m != 0.0 {
            total += m * vae.elbo_x(x)?;
        }
    }
    Ok(total)
}

#[derive(Clone, Debug, Serialize)]
pub struct DegenerationReport {
    /// Largest gradient difference between the importance-weighted
    /// generator update at `k = 1` and the unsaturated GAN update.
    pub iw_k1_grad_diff: f64,
    /// `|weighted objective - ELBO|` on tabular VAEs with the perfect
    /// discriminator, worst case.
    pub aavae_tabular_diff: f64,
    /// `|AAVAE objective - VAE ELBO|` for MLPs with perfect weights.
    pub aavae_neural_diff: f64,
    /// Largest `|ŵ_i - 1/4|` for `k = 4` with `D ≡ 0.5`.
    pub uniform_weight_diff: f64,
    pub iw_k1_passed: bool,
    pub aavae_passed: bool,
    pub uniform_passed: bool,
}

/// Small constructed instances for the three reductions: importance
/// weighting with one sample, the adversarially weighted VAE with a perfect
/// discriminator, and importance weights under an indifferent
/// discriminator.
pub fn degeneration_checks(seed: u64) -> Result<DegenerationReport> {
    use crate::models::generate;
    use crate::models::{Activation, Head, Mlp, MlpSpec};
    use crate::objectives::{
        aavae::aavae_gen_loss, backward_into, gan_gen_loss_unsaturated, importance_weights,
        iw_gan_gen_loss, vae_elbo, AavaeWeighting,
    };
    use crate::tape::Tape;

    let root = RngStream::new(seed, "degeneration");

    // (a) k = 1
    let mut init = root.substream("init");
    let gen = Mlp::new(
        "gen",
        MlpSpec::new(vec![2, 16, 2], Activation::Tanh, Head::Linear)?,
        &mut init,
    )?;
    let disc = Mlp::new(
        "disc",
        MlpSpec::new(vec![2, 16, 1], Activation::Tanh, Head::Sigmoid)?,
        &mut init,
    )?;
    let z = root.substream("z").normal_tensor(&[32, 2]);

    let mut tape = Tape::new();
    let gb = gen.bind(&mut tape);
    let db = disc.bind_frozen(&mut tape);
    let zv = tape.constant(z.clone());
    let step = iw_gan_gen_loss(&mut tape, &gen, &gb, &disc, &db, zv, 1)?;
    let g_iw = backward_into(&mut tape, step.loss, &gb)?;

    let mut tape = Tape::new();
    let gb = gen.bind(&mut tape);
    let db = disc.bind_frozen(&mut tape);
    let zv = tape.constant(z);
    let x = generate(&mut tape, &gen, &gb, zv)?;
    let loss = gan_gen_loss_unsaturated(&mut tape, &disc, &db, x)?;
    let g_gan = backward_into(&mut tape, loss, &gb)?;
    let mut iw_diff: f64 = 0.0;
    for (name, a) in &g_iw {
        let b = &g_gan[name];
        iw_diff = iw_diff.max(max_abs_diff(a.data(), b.data()));
    }

    // (b) perfect discriminator, tabular and neural
    let mut tab_rng = root.substream("tabular");
    let mut tab_diff: f64 = 0.0;
    for _ in 0..10 {
        let vae = TabularVae::random(&mut tab_rng, 16, 8);
        let r = lemma2_check(&vae)?;
        let nx = vae.p_data.len();
        let obj = aavae_tabular_objective(&vae, &vec![1.0; nx], &vec![0.0; nx])?;
        tab_diff = tab_diff.max((obj - 2.0 * (r.rewritten - r.constants.total)).abs());
    }

    let enc = Mlp::new(
        "enc",
        MlpSpec::new(vec![6, 16, 2], Activation::Tanh, Head::GaussianParams)?,
        &mut init,
    )?;
    let dec = Mlp::new(
        "dec",
        MlpSpec::new(vec![2, 16, 6], Activation::Tanh, Head::Sigmoid)?,
        &mut init,
    )?;
    let d6 = Mlp::new(
        "disc6",
        MlpSpec::new(vec![6, 8, 1], Activation::Tanh, Head::Sigmoid)?,
        &mut init,
    )?;
    let mut data = root.substream("data");
    let real = data
        .uniform_tensor(&[12, 6], 0.0, 1.0)
        .map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    let fake = data
        .uniform_tensor(&[12, 6], 0.0, 1.0)
        .map(|v| if v > 0.5 { 1.0 } else { 0.0 });

    let mut tape = Tape::new();
    let eb = enc.bind(&mut tape);
    let decb = dec.bind(&mut tape);
    let db = d6.bind_frozen(&mut tape);
    let rv = tape.constant(real.clone());
    let fv = tape.constant(fake);
    let mut noise = root.substream("noise");
    let terms = aavae_gen_loss(
        &mut tape,
        &enc,
        &eb,
        &dec,
        &decb,
        &d6,
        &db,
        rv,
        fv,
        &mut noise,
        AavaeWeighting::Perfect,
    )?;
    let a = tape.item(terms.objective)?;

    let mut tape = Tape::new();
    let eb = enc.bind(&mut tape);
    let decb = dec.bind(&mut tape);
    let rv = tape.constant(real);
    let mut noise = root.substream("noise");
    let v = vae_elbo(&mut tape, &enc, &eb, &dec, &decb, rv, &mut noise)?;
    let neural_diff = (a - tape.item(v.elbo)?).abs();

    // (c) D ≡ 0.5
    let w = importance_weights(&[0.5; 4 * 8], 4)?;
    let uni = w
        .normalized
        .iter()
        .fold(0.0f64, |m, v| m.max((v - 0.25).abs()));

    Ok(DegenerationReport {
        iw_k1_grad_diff: iw_diff,
        aavae_tabular_diff: tab_diff,
        aavae_neural_diff: neural_diff,
        uniform_weight_diff: uni,
        iw_k1_passed: iw_diff <= 1e-12,
        aavae_passed: tab_diff < 1e-12 && neural_diff <= 1e-10,
        uniform_passed: uni == 0.0,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct WakeSleepReport {
    /// `|wake loss + mean reconstruction term of the VAE ELBO|`, same noise.
    pub wake_vs_recon: f64,
    /// `|label sleep loss - discriminator loss|` on one shared batch.
    pub sleep_vs_disc: f64,
    pub passed: bool,
}

/// Term-level identities between wake-sleep and the VAE/GAN objectives:
/// with `h = z` and `λ = η` the wake phase is the ELBO reconstruction term;
/// with `h = y` and `λ = φ` the sleep phase is the discriminator loss.
pub fn wake_sleep_checks(seed: u64) -> Result<WakeSleepReport> {
    use crate::models::{generate, Activation, Head, Mlp, MlpSpec};
    use crate::objectives::{
        gan_disc_loss, sleep_label_loss, vae_elbo_with_noise, wake_loss_with_noise,
    };
    use crate::tape::Tape;

    let root = RngStream::new(seed, "wake-sleep");
    let mut init = root.substream("init");
    let enc = Mlp::new(
        "enc",
        MlpSpec::new(vec![6, 16, 2], Activation::Tanh, Head::GaussianParams)?,
        &mut init,
    )?;
    let dec = Mlp::new(
        "dec",
        MlpSpec::new(vec![2, 16, 6], Activation::Tanh, Head::Sigmoid)?,
        &mut init,
    )?;
    let mut data = root.substream("data");
    let x = data
        .uniform_tensor(&[16, 6], 0.0, 1.0)
        .map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    let eps = data.normal_tensor(&[16, 2]);

    let mut tape = Tape::new();
    let eb = enc.bind(&mut tape);
    let decb = dec.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let v = vae_elbo_with_noise(&mut tape, &enc, &eb, &dec, &decb, xv, eps.clone())?;
    let recon = tape.value(v.recon).mean();

    let mut tape = Tape::new();
    let eb = enc.bind(&mut tape);
    let decb = dec.bind(&mut tape);
    let xv = tape.constant(x);
    let w = wake_loss_with_noise(&mut tape, &dec, &decb, &enc, &eb, xv, eps)?;
    let wake_diff = (tape.item(w)? + recon).abs();

    let disc = Mlp::new(
        "disc",
        MlpSpec::new(vec![2, 16, 1], Activation::Tanh, Head::Sigmoid)?,
        &mut init,
    )?;
    let gen = Mlp::new(
        "gen",
        MlpSpec::new(vec![2, 16, 2], Activation::Tanh, Head::Linear)?,
        &mut init,
    )?;
    let mut tape = Tape::new();
    let db = disc.bind(&mut tape);
    let gb = gen.bind_frozen(&mut tape);
    let real = tape.constant(data.normal_tensor(&[24, 2]));
    let z = tape.constant(data.normal_tensor(&[24, 2]));
    let fake = generate(&mut tape, &gen, &gb, z)?;
    let a = gan_disc_loss(&mut tape, &disc, &db, real, fake)?.loss;
    let b = sleep_label_loss(&mut tape, &disc, &db, real, fake)?;
    let sleep_diff = (tape.item(a)? - tape.item(b)?).abs();

    Ok(WakeSleepReport {
        wake_vs_recon: wake_diff,
        sleep_vs_disc: sleep_diff,
        passed: wake_diff <= 1e-12 && sleep_diff <= 1e-12,
    })
}

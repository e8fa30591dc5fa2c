//! Training runs: data preparation, per-kind update loops, evaluation and
//! on-disk artifacts.
//!
//! A run directory holds `config.json` (canonical) and `config.sha256`,
//! `metrics.jsonl` (one row per logging interval), `curves.csv` (the same
//! rows), `summary.csv`, `record.json`, `samples.csv`, and
//! `checkpoints/{model}.json` with a `{model}.card.json` beside each.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use unigen_core::models::{generate, sample_decoder, Head, Mlp, MlpSpec, ModelCard, PriorSpec};
use unigen_core::objectives::{
    aae_disc_loss, aae_gen_loss, aavae_disc_loss, aavae_gen_loss, backward_into, gan_disc_loss,
    gan_gen_loss_unsaturated, infogan_losses, iw_gan_gen_loss, sleep_loss, vae_elbo, wake_loss,
    AavaeWeighting,
};
use unigen_core::{AdamConfig, GradMap, ParamSet, RngStream, Tape, Tensor};

use crate::config::{DatasetSpec, EvalConfig, ExperimentConfig, ExperimentKind, MixtureSpec};
use crate::data::{load_mnist, sample_mixture_2d, sample_one_hot, Dataset};
use crate::error::{Error, Result};
use crate::lemmas::{verify_lemmas, LemmaSuiteConfig};
use crate::metrics::{histogram_divergences, mode_coverage, test_elbo, Grid};

/// Data for one run. Generated datasets are drawn once from the `data`
/// stream so that every kind trained under a seed sees the same examples.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: Dataset,
    /// Held-out examples: reference samples for the mixture, the test split
    /// for IDX data, fresh draws for tabular data.
    pub test: Option<Dataset>,
    pub mixture: Option<MixtureSpec>,
    /// Bernoulli likelihood on pixels/one-hot coordinates; otherwise
    /// continuous Gaussian outputs.
    pub bernoulli: bool,
}

impl Prepared {
    pub fn new(
        spec: &DatasetSpec,
        train_size: usize,
        reference_size: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = RngStream::new(seed, "data");
        Ok(match spec {
            DatasetSpec::GaussianMixture2d(m) => Prepared {
                train: sample_mixture_2d(m, train_size, &mut rng),
                test: Some(sample_mixture_2d(
                    m,
                    reference_size,
                    &mut rng.substream("reference"),
                )),
                mixture: Some(m.clone()),
                bernoulli: false,
            },
            DatasetSpec::MnistIdx(m) => {
                let (train, test) = load_mnist(m, &mut rng)?;
                Prepared {
                    train,
                    test,
                    mixture: None,
                    bernoulli: true,
                }
            }
            DatasetSpec::TabularSynthetic { support_size } => {
                let probs = rng.dirichlet_ones(*support_size);
                Prepared {
                    train: sample_one_hot(&probs, train_size, &mut rng),
                    test: Some(sample_one_hot(
                        &probs,
                        reference_size,
                        &mut rng.substream("reference"),
                    )),
                    mixture: None,
                    bernoulli: true,
                }
            }
        })
    }
}

/// Shuffled epochs over a fixed dataset; a partial final batch is dropped.
#[derive(Clone, Debug)]
pub struct Batcher {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    pub epoch: usize,
}

impl Batcher {
    pub fn new(n: usize, batch: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: usize::MAX,
            batch: batch.min(n).max(1),
            epoch: 0,
        }
    }

    /// Row indices of the next batch and whether it starts a new epoch.
    pub fn next(&mut self, rng: &mut RngStream) -> (Vec<usize>, bool) {
        let mut fresh = false;
        if self.pos == usize::MAX || self.pos + self.batch > self.order.len() {
            rng.shuffle(&mut self.order);
            self.pos = 0;
            self.epoch += 1;
            fresh = true;
        }
        let idx = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        (idx, fresh)
    }
}

/// One logging-interval row of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub epoch: usize,
    #[serde(flatten)]
    pub values: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub model: String,
    pub step: usize,
    pub params: PathBuf,
    pub card: PathBuf,
}

/// Real and generated example counts fed to the discriminator.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchAccounting {
    pub steps: usize,
    pub real_examples: usize,
    pub fake_examples: usize,
    /// Steps whose generated count differed from the real count.
    pub unequal_steps: usize,
    pub snapshot_refreshes: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub run_dir: Option<PathBuf>,
    pub metrics: Vec<MetricRow>,
    pub summary: BTreeMap<String, f64>,
    pub checkpoints: Vec<CheckpointRef>,
    pub batches: BatchAccounting,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Where run directories go; `None` keeps everything in memory.
    pub output_root: Option<PathBuf>,
}

impl RunOptions {
    pub fn in_memory() -> Self {
        Self { output_root: None }
    }

    pub fn at(root: impl Into<PathBuf>) -> Self {
        Self {
            output_root: Some(root.into()),
        }
    }
}

/// Network roles, keyed by name.
pub type Nets = BTreeMap<String, Mlp>;

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

/// Builds every network a kind needs, each initialized from its own
/// `init/{role}` stream.
pub fn build_nets(cfg: &ExperimentConfig, data_dim: usize, bernoulli: bool) -> Result<Nets> {
    let init = RngStream::new(cfg.seed, "init");
    let h = &cfg.model.hidden;
    let act = cfg.model.activation;
    let dz = cfg.model.latent_dim;
    let x_head = if bernoulli {
        Head::Sigmoid
    } else {
        Head::GaussianParams
    };
    let gen_head = if bernoulli {
        Head::Sigmoid
    } else {
        Head::Linear
    };
    let roles: Vec<(&str, usize, usize, Head)> = match cfg.kind {
        ExperimentKind::Gan | ExperimentKind::Iwgan => vec![
            ("gen", dz, data_dim, gen_head),
            ("disc", data_dim, 1, Head::Sigmoid),
        ],
        ExperimentKind::Infogan => vec![
            ("gen", dz, data_dim, gen_head),
            ("disc", data_dim, 1, Head::Sigmoid),
            ("code", data_dim, dz, Head::GaussianParams),
        ],
        ExperimentKind::Aae => vec![
            ("enc", data_dim, dz, Head::Linear),
            ("dec", dz, data_dim, x_head),
            ("disc_z", dz, 1, Head::Sigmoid),
        ],
        ExperimentKind::Vae => vec![
            ("enc", data_dim, dz, Head::GaussianParams),
            ("dec", dz, data_dim, x_head),
        ],
        ExperimentKind::Aavae => vec![
            ("enc", data_dim, dz, Head::GaussianParams),
            ("dec", dz, data_dim, x_head),
            ("disc", data_dim, 1, Head::Sigmoid),
        ],
        ExperimentKind::Wakesleep => vec![
            ("gen", dz, data_dim, x_head),
            ("inf", data_dim, dz, Head::GaussianParams),
        ],
        ExperimentKind::VerifyLemmas => vec![],
    };
    let mut nets = Nets::new();
    for (name, i, o, head) in roles {
        let spec = MlpSpec::new(widths(i, h, o), act, head)?;
        nets.insert(
            name.to_string(),
            Mlp::new(name, spec, &mut init.substream(name))?,
        );
    }
    Ok(nets)
}

fn net<'a>(nets: &'a Nets, name: &str) -> &'a Mlp {
    &nets[name]
}

fn update(nets: &mut Nets, name: &str, g: &GradMap, adam: &AdamConfig) -> Result<()> {
    nets.get_mut(name)
        .expect("role exists")
        .params_mut()
        .adam_step(g, adam)?;
    Ok(())
}

/// Draws `n` samples from the trained model: generator outputs for the
/// adversarial kinds, decoder samples at prior codes otherwise.
pub fn model_samples(
    kind: ExperimentKind,
    nets: &Nets,
    latent_dim: usize,
    n: usize,
    rng: &mut RngStream,
) -> Result<Tensor> {
    let prior = PriorSpec::standard_normal(latent_dim);
    let z = prior.sample(rng, n);
    let mut tape = Tape::new();
    if kind.is_adversarial_generator() {
        let g = net(nets, "gen");
        let b = g.bind_frozen(&mut tape);
        let zv = tape.constant(z);
        let x = generate(&mut tape, g, &b, zv)?;
        return Ok(tape.value(x).clone());
    }
    let role = match kind {
        ExperimentKind::Wakesleep => "gen",
        ExperimentKind::VerifyLemmas => {
            return Err(Error::Config("verify-lemmas has no model to sample".into()))
        }
        _ => "dec",
    };
    let d = net(nets, role);
    let b = d.bind_frozen(&mut tape);
    let zv = tape.constant(z);
    let out = d.forward(&mut tape, &b, zv)?;
    Ok(sample_decoder(&tape, out, rng)?)
}

/// Encoder/decoder pair with a gaussian encoder, if the kind has one.
fn elbo_pair(kind: ExperimentKind) -> Option<(&'static str, &'static str)> {
    match kind {
        ExperimentKind::Vae | ExperimentKind::Aavae => Some(("enc", "dec")),
        ExperimentKind::Wakesleep => Some(("inf", "gen")),
        _ => None,
    }
}

/// Final metrics for trained networks. Returns the summary and the samples
/// drawn for it (when the data is 2-D).
pub fn evaluate(
    kind: ExperimentKind,
    nets: &Nets,
    latent_dim: usize,
    data: &Prepared,
    eval: &EvalConfig,
    seed: u64,
) -> Result<(BTreeMap<String, f64>, Option<Tensor>)> {
    let mut out = BTreeMap::new();
    let mut rng = RngStream::new(seed, "eval");
    let mut samples = None;
    if let Some(spec) = &data.mixture {
        let s = model_samples(kind, nets, latent_dim, eval.samples, &mut rng)?;
        let cov = mode_coverage(&s, spec, eval.coverage_radius, eval.coverage_threshold)?;
        for (i, f) in cov.per_mode_hit.iter().enumerate() {
            out.insert(format!("mode{i}_hit"), *f);
        }
        out.insert(
            "small_mode_hit".into(),
            cov.per_mode_hit[spec.smallest_mode()],
        );
        out.insert("covered_modes".into(), cov.covered as f64);
        out.insert("high_quality".into(), cov.high_quality);
        if let Some(reference) = &data.test {
            let grid = Grid::around(spec, eval.bins)?;
            let fwd = histogram_divergences(&reference.x, &s, &grid)?;
            let rev = histogram_divergences(&s, &reference.x, &grid)?;
            out.insert("kl_data_model".into(), fwd.kl_hat);
            out.insert("kl_model_data".into(), rev.kl_hat);
            out.insert("jsd".into(), fwd.jsd_hat);
        }
        samples = Some(s);
    }
    if let Some((e, d)) = elbo_pair(kind) {
        let (enc, dec) = (net(nets, e), net(nets, d));
        let train = test_elbo(enc, dec, &data.train.x, &mut rng.substream("train-elbo"), 1)?;
        out.insert("train_elbo".into(), train.mean_elbo);
        if let Some(test) = &data.test {
            let t = test_elbo(
                enc,
                dec,
                &test.x,
                &mut rng.substream("test-elbo"),
                eval.elbo_samples,
            )?;
            out.insert("test_elbo".into(), t.mean_elbo);
            out.insert("test_iw_bound".into(), t.iw_bound);
        }
    }
    Ok((out, samples))
}

struct Sink {
    dir: Option<PathBuf>,
    jsonl: Option<BufWriter<File>>,
}

impl Sink {
    fn open(dir: Option<PathBuf>) -> Result<Self> {
        let jsonl = match &dir {
            Some(d) => {
                std::fs::create_dir_all(d.join("checkpoints"))?;
                Some(BufWriter::new(File::create(d.join("metrics.jsonl"))?))
            }
            None => None,
        };
        Ok(Self { dir, jsonl })
    }

    fn row(&mut self, row: &MetricRow) -> Result<()> {
        if let Some(w) = &mut self.jsonl {
            serde_json::to_writer(&mut *w, row)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        Ok(())
    }

    fn checkpoint(&self, nets: &Nets, step: usize, final_: bool) -> Result<Vec<CheckpointRef>> {
        let Some(dir) = &self.dir else {
            return Ok(vec![]);
        };
        let mut refs = Vec::new();
        for (name, m) in nets {
            let stem = if final_ {
                name.clone()
            } else {
                format!("{name}-step{step}")
            };
            let params = Path::new("checkpoints").join(format!("{stem}.json"));
            let card = Path::new("checkpoints").join(format!("{name}.card.json"));
            m.params().save(&dir.join(&params))?;
            std::fs::write(dir.join(&card), serde_json::to_string_pretty(&m.card())?)?;
            refs.push(CheckpointRef {
                model: name.clone(),
                step,
                params,
                card,
            });
        }
        Ok(refs)
    }
}

fn write_csv_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn write_artifacts(dir: &Path, record: &RunRecord, samples: Option<&Tensor>) -> Result<()> {
    let mut keys: Vec<String> = Vec::new();
    for r in &record.metrics {
        for k in r.values.keys() {
            if !keys.contains(k) {
                keys.push(k.clone());
            }
        }
    }
    keys.sort();
    let mut header = vec!["step".to_string(), "epoch".to_string()];
    header.extend(keys.iter().cloned());
    let rows: Vec<Vec<String>> = record
        .metrics
        .iter()
        .map(|r| {
            let mut row = vec![r.step.to_string(), r.epoch.to_string()];
            row.extend(
                keys.iter()
                    .map(|k| r.values.get(k).map(|v| fmt(*v)).unwrap_or_default()),
            );
            row
        })
        .collect();
    write_csv_table(&dir.join("curves.csv"), &header, &rows)?;

    let header: Vec<String> = record.summary.keys().cloned().collect();
    let row: Vec<String> = record.summary.values().map(|v| fmt(*v)).collect();
    write_csv_table(&dir.join("summary.csv"), &header, &[row])?;

    if let Some(s) = samples {
        let header: Vec<String> = (0..s.row_len()).map(|j| format!("x{j}")).collect();
        let rows: Vec<Vec<String>> = (0..s.rows())
            .map(|i| s.row(i).iter().map(|v| fmt(*v)).collect())
            .collect();
        write_csv_table(&dir.join("samples.csv"), &header, &rows)?;
    }
    std::fs::write(
        dir.join("record.json"),
        serde_json::to_string_pretty(record)?,
    )?;
    Ok(())
}

fn check_finite(step: usize, values: &BTreeMap<String, f64>) -> Result<()> {
    match values.iter().find(|(_, v)| !v.is_finite()) {
        Some((k, v)) => Err(Error::NumericalAbort {
            step,
            term: k.clone(),
            value: *v,
        }),
        None => Ok(()),
    }
}

struct Trainer<'a> {
    cfg: &'a ExperimentConfig,
    nets: Nets,
    prior: PriorSpec,
    rng: RngStream,
    /// Frozen decoder copy that supplies generated samples (`aavae`).
    snapshot: Option<Mlp>,
}

impl Trainer<'_> {
    fn adam(&self) -> AdamConfig {
        self.cfg.optim
    }

    fn z(&mut self, n: usize) -> Tensor {
        self.prior.sample(&mut self.rng, n)
    }

    /// Discriminator step on `real` against detached generator outputs.
    fn gan_disc_step(&mut self, real: &Tensor, out: &mut BTreeMap<String, f64>) -> Result<usize> {
        let b = real.rows();
        let z = self.z(b);
        let (g, gd) = {
            let (gen, disc) = (net(&self.nets, "gen"), net(&self.nets, "disc"));
            let mut tape = Tape::new();
            let gb = gen.bind_frozen(&mut tape);
            let db = disc.bind(&mut tape);
            let rv = tape.constant(real.clone());
            let zv = tape.constant(z);
            let fake = generate(&mut tape, gen, &gb, zv)?;
            let l = gan_disc_loss(&mut tape, disc, &db, rv, fake)?;
            out.insert("disc_loss".into(), tape.item(l.loss)?);
            out.insert("disc_real".into(), tape.item(l.real_term)?);
            out.insert("disc_fake".into(), tape.item(l.fake_term)?);
            (backward_into(&mut tape, l.loss, &db)?, b)
        };
        let adam = self.adam();
        update(&mut self.nets, "disc", &g, &adam)?;
        Ok(gd)
    }

    fn step(&mut self, real: &Tensor, out: &mut BTreeMap<String, f64>) -> Result<usize> {
        let b = real.rows();
        let adam = self.adam();
        match self.cfg.kind {
            ExperimentKind::Gan | ExperimentKind::Iwgan => {
                let fakes = self.gan_disc_step(real, out)?;
                let k = if self.cfg.kind == ExperimentKind::Iwgan {
                    self.cfg.k
                } else {
                    1
                };
                let z = self.z(b * k);
                let g = {
                    let (gen, disc) = (net(&self.nets, "gen"), net(&self.nets, "disc"));
                    let mut tape = Tape::new();
                    let gb = gen.bind(&mut tape);
                    let db = disc.bind_frozen(&mut tape);
                    let zv = tape.constant(z);
                    let loss = if self.cfg.kind == ExperimentKind::Iwgan {
                        let s = iw_gan_gen_loss(&mut tape, gen, &gb, disc, &db, zv, k)?;
                        out.insert("ess_mean".into(), s.report.mean_ess());
                        out.insert("weight_max".into(), s.report.max_weight());
                        out.insert(
                            "degenerate_groups".into(),
                            s.report.degenerate_groups as f64,
                        );
                        s.loss
                    } else {
                        let x = generate(&mut tape, gen, &gb, zv)?;
                        gan_gen_loss_unsaturated(&mut tape, disc, &db, x)?
                    };
                    out.insert("gen_loss".into(), tape.item(loss)?);
                    backward_into(&mut tape, loss, &gb)?
                };
                update(&mut self.nets, "gen", &g, &adam)?;
                Ok(fakes)
            }
            ExperimentKind::Infogan => {
                let fakes = self.gan_disc_step(real, out)?;
                let z = self.z(b);
                let (gg, gc) = {
                    let (gen, disc, code) = (
                        net(&self.nets, "gen"),
                        net(&self.nets, "disc"),
                        net(&self.nets, "code"),
                    );
                    let mut tape = Tape::new();
                    let gb = gen.bind(&mut tape);
                    let db = disc.bind_frozen(&mut tape);
                    let cb = code.bind(&mut tape);
                    let rv = tape.constant(real.clone());
                    let zv = tape.constant(z);
                    let fake = generate(&mut tape, gen, &gb, zv)?;
                    let l = infogan_losses(&mut tape, disc, &db, code, &cb, rv, fake, zv)?;
                    out.insert("gen_loss".into(), tape.item(l.gen_adversarial)?);
                    out.insert("code_loss".into(), tape.item(l.code)?);
                    let grads = tape.backward(l.gen_total)?;
                    (gb.grads(&grads), cb.grads(&grads))
                };
                update(&mut self.nets, "gen", &gg, &adam)?;
                update(&mut self.nets, "code", &gc, &adam)?;
                Ok(fakes)
            }
            ExperimentKind::Aae => {
                let z = self.z(b);
                let gd = {
                    let (enc, disc) = (net(&self.nets, "enc"), net(&self.nets, "disc_z"));
                    let mut tape = Tape::new();
                    let eb = enc.bind_frozen(&mut tape);
                    let db = disc.bind(&mut tape);
                    let rv = tape.constant(real.clone());
                    let pz = tape.constant(z);
                    let l = aae_disc_loss(&mut tape, enc, &eb, disc, &db, rv, pz)?;
                    out.insert("disc_loss".into(), tape.item(l.loss)?);
                    backward_into(&mut tape, l.loss, &db)?
                };
                update(&mut self.nets, "disc_z", &gd, &adam)?;
                let (ge, gdec) = {
                    let (enc, dec, disc) = (
                        net(&self.nets, "enc"),
                        net(&self.nets, "dec"),
                        net(&self.nets, "disc_z"),
                    );
                    let mut tape = Tape::new();
                    let eb = enc.bind(&mut tape);
                    let decb = dec.bind(&mut tape);
                    let db = disc.bind_frozen(&mut tape);
                    let rv = tape.constant(real.clone());
                    let l = aae_gen_loss(&mut tape, enc, &eb, dec, &decb, disc, &db, rv)?;
                    out.insert("recon_loss".into(), tape.item(l.recon)?);
                    out.insert("gen_loss".into(), tape.item(l.adversarial)?);
                    let grads = tape.backward(l.total)?;
                    (eb.grads(&grads), decb.grads(&grads))
                };
                update(&mut self.nets, "enc", &ge, &adam)?;
                update(&mut self.nets, "dec", &gdec, &adam)?;
                Ok(b)
            }
            ExperimentKind::Vae => {
                let (ge, gd) = {
                    let (enc, dec) = (net(&self.nets, "enc"), net(&self.nets, "dec"));
                    let mut tape = Tape::new();
                    let eb = enc.bind(&mut tape);
                    let decb = dec.bind(&mut tape);
                    let rv = tape.constant(real.clone());
                    let v = vae_elbo(&mut tape, enc, &eb, dec, &decb, rv, &mut self.rng)?;
                    out.insert("elbo".into(), tape.item(v.elbo)?);
                    out.insert("recon".into(), tape.value(v.recon).mean());
                    out.insert("kl".into(), tape.value(v.kl).mean());
                    let loss = tape.neg(v.elbo);
                    let grads = tape.backward(loss)?;
                    (eb.grads(&grads), decb.grads(&grads))
                };
                update(&mut self.nets, "enc", &ge, &adam)?;
                update(&mut self.nets, "dec", &gd, &adam)?;
                Ok(0)
            }
            ExperimentKind::Aavae => {
                // One generated sample per real example, from the snapshot.
                let z = self.z(b);
                let fake = {
                    let snap = self
                        .snapshot
                        .as_ref()
                        .expect("snapshot taken at epoch start");
                    let mut tape = Tape::new();
                    let sb = snap.bind_frozen(&mut tape);
                    let zv = tape.constant(z);
                    let o = snap.forward(&mut tape, &sb, zv)?;
                    sample_decoder(&tape, o, &mut self.rng)?
                };
                let gd = {
                    let disc = net(&self.nets, "disc");
                    let mut tape = Tape::new();
                    let db = disc.bind(&mut tape);
                    let rv = tape.constant(real.clone());
                    let fv = tape.constant(fake.clone());
                    let l = aavae_disc_loss(&mut tape, disc, &db, rv, fv)?;
                    out.insert("disc_loss".into(), tape.item(l.loss)?);
                    backward_into(&mut tape, l.loss, &db)?
                };
                update(&mut self.nets, "disc", &gd, &adam)?;
                let weighting = AavaeWeighting::Discriminator {
                    temperature: self.cfg.temperature,
                };
                let (ge, gdec) = {
                    let (enc, dec, disc) = (
                        net(&self.nets, "enc"),
                        net(&self.nets, "dec"),
                        net(&self.nets, "disc"),
                    );
                    let mut tape = Tape::new();
                    let eb = enc.bind(&mut tape);
                    let decb = dec.bind(&mut tape);
                    let db = disc.bind_frozen(&mut tape);
                    let rv = tape.constant(real.clone());
                    let fv = tape.constant(fake.clone());
                    let t = aavae_gen_loss(
                        &mut tape,
                        enc,
                        &eb,
                        dec,
                        &decb,
                        disc,
                        &db,
                        rv,
                        fv,
                        &mut self.rng,
                        weighting,
                    )?;
                    out.insert("objective".into(), tape.item(t.objective)?);
                    out.insert("elbo".into(), tape.value(t.real_elbo).mean());
                    let mean = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
                    out.insert("weight_real".into(), mean(&t.real_weights));
                    out.insert("weight_fake".into(), mean(&t.fake_weights));
                    let grads = tape.backward(t.gen_loss)?;
                    (eb.grads(&grads), decb.grads(&grads))
                };
                update(&mut self.nets, "enc", &ge, &adam)?;
                update(&mut self.nets, "dec", &gdec, &adam)?;
                Ok(fake.rows())
            }
            ExperimentKind::Wakesleep => {
                let gw = {
                    let (gen, inf) = (net(&self.nets, "gen"), net(&self.nets, "inf"));
                    let mut tape = Tape::new();
                    let gb = gen.bind(&mut tape);
                    let ib = inf.bind_frozen(&mut tape);
                    let rv = tape.constant(real.clone());
                    let l = wake_loss(&mut tape, gen, &gb, inf, &ib, rv, &mut self.rng)?;
                    out.insert("wake_loss".into(), tape.item(l)?);
                    backward_into(&mut tape, l, &gb)?
                };
                update(&mut self.nets, "gen", &gw, &adam)?;
                let gs = {
                    let (gen, inf) = (net(&self.nets, "gen"), net(&self.nets, "inf"));
                    let mut tape = Tape::new();
                    let gb = gen.bind_frozen(&mut tape);
                    let ib = inf.bind(&mut tape);
                    let l =
                        sleep_loss(&mut tape, gen, &gb, inf, &ib, &self.prior, b, &mut self.rng)?;
                    out.insert("sleep_loss".into(), tape.item(l)?);
                    backward_into(&mut tape, l, &ib)?
                };
                update(&mut self.nets, "inf", &gs, &adam)?;
                Ok(b)
            }
            ExperimentKind::VerifyLemmas => unreachable!("handled before training"),
        }
    }
}

fn run_dir(cfg: &ExperimentConfig, opts: &RunOptions) -> Option<PathBuf> {
    opts.output_root
        .as_ref()
        .map(|r| r.join(cfg.run_dir_name()))
}

/// Trains and evaluates one configuration. Deterministic for a given config.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunRecord> {
    cfg.validate_at(Path::new("."))?;
    let hash = cfg.hash();
    let dir = run_dir(cfg, opts);
    let mut sink = Sink::open(dir.clone())?;
    if let Some(d) = &dir {
        std::fs::write(d.join("config.json"), cfg.canonical_json())?;
        std::fs::write(d.join("config.sha256"), format!("{hash}\n"))?;
    }
    info!("run {} seed {} -> {:?}", cfg.kind.as_str(), cfg.seed, dir);

    if cfg.kind == ExperimentKind::VerifyLemmas {
        let report = verify_lemmas(&LemmaSuiteConfig {
            seed: cfg.seed,
            ..LemmaSuiteConfig::default()
        })?;
        if let Some(d) = &dir {
            std::fs::write(
                d.join("lemmas.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
        }
        let summary: BTreeMap<String, f64> = report
            .checks
            .iter()
            .map(|c| (format!("{}_worst", c.name), c.worst))
            .chain([(
                "all_passed".to_string(),
                f64::from(u8::from(report.all_passed)),
            )])
            .collect();
        let record = RunRecord {
            config_hash: hash,
            run_dir: dir.clone(),
            metrics: vec![],
            summary,
            checkpoints: vec![],
            batches: BatchAccounting::default(),
        };
        if let Some(d) = &dir {
            write_artifacts(d, &record, None)?;
        }
        if !report.all_passed {
            return Err(Error::Verification(report.failures().join(", ")));
        }
        return Ok(record);
    }

    let data = Prepared::new(&cfg.dataset, cfg.train_size, cfg.eval.samples, cfg.seed)?;
    let nets = build_nets(cfg, data.train.dim(), data.bernoulli)?;
    let mut trainer = Trainer {
        cfg,
        nets,
        prior: PriorSpec::standard_normal(cfg.model.latent_dim),
        rng: RngStream::new(cfg.seed, "train"),
        snapshot: None,
    };
    let mut batch_rng = RngStream::new(cfg.seed, "data").substream("batches");
    let mut batcher = Batcher::new(data.train.len(), cfg.batch_size);
    let mut metrics = Vec::new();
    let mut checkpoints = Vec::new();
    let mut acc = BatchAccounting::default();

    for step in 1..=cfg.steps {
        let (idx, new_epoch) = batcher.next(&mut batch_rng);
        if new_epoch && cfg.kind == ExperimentKind::Aavae {
            trainer.snapshot = Some(trainer.nets["dec"].clone());
            acc.snapshot_refreshes += 1;
        }
        let real = data.train.x.gather_rows(&idx)?;
        let mut values = BTreeMap::new();
        let fakes = match trainer.step(&real, &mut values) {
            Ok(f) => f,
            Err(Error::Core(e @ unigen_core::Error::NonFiniteGradient { .. })) => {
                write_abort(dir.as_deref(), step, &values, &e.to_string())?;
                return Err(Error::NumericalAbort {
                    step,
                    term: e.to_string(),
                    value: f64::NAN,
                });
            }
            Err(e) => return Err(e),
        };
        if let Err(e) = check_finite(step, &values) {
            write_abort(dir.as_deref(), step, &values, &e.to_string())?;
            return Err(e);
        }
        acc.steps += 1;
        acc.real_examples += real.rows();
        acc.fake_examples += fakes;
        if fakes != 0 && fakes != real.rows() {
            acc.unequal_steps += 1;
        }
        if step % cfg.log_every == 0 || step == cfg.steps {
            let row = MetricRow {
                step,
                epoch: batcher.epoch,
                values,
            };
            sink.row(&row)?;
            metrics.push(row);
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.steps {
            checkpoints.extend(sink.checkpoint(&trainer.nets, step, false)?);
        }
    }
    checkpoints.extend(sink.checkpoint(&trainer.nets, cfg.steps, true)?);

    let (mut summary, samples) = evaluate(
        cfg.kind,
        &trainer.nets,
        cfg.model.latent_dim,
        &data,
        &cfg.eval,
        cfg.seed,
    )?;
    if let Some(last) = metrics.last() {
        for (k, v) in &last.values {
            summary.insert(format!("final_{k}"), *v);
        }
    }
    summary.insert("seed".into(), cfg.seed as f64);
    summary.insert("steps".into(), cfg.steps as f64);
    if cfg.kind == ExperimentKind::Aavae && acc.unequal_steps != 0 {
        warn!(
            "{} steps used unequal real/generated counts",
            acc.unequal_steps
        );
    }
    let record = RunRecord {
        config_hash: hash,
        run_dir: dir.clone(),
        metrics,
        summary,
        checkpoints,
        batches: acc,
    };
    if let Some(d) = &dir {
        write_artifacts(d, &record, samples.as_ref())?;
    }
    Ok(record)
}

fn write_abort(
    dir: Option<&Path>,
    step: usize,
    values: &BTreeMap<String, f64>,
    reason: &str,
) -> Result<()> {
    if let Some(d) = dir {
        // NaN is not JSON; losses are written as strings here.
        let v: BTreeMap<&String, String> = values.iter().map(|(k, v)| (k, v.to_string())).collect();
        let diag = serde_json::json!({ "step": step, "reason": reason, "values": v });
        std::fs::write(d.join("abort.json"), serde_json::to_string_pretty(&diag)?)?;
    }
    Ok(())
}

/// Rebuilds the final networks of a run directory (or its `checkpoints`
/// subdirectory) together with the run's config.
pub fn load_run(path: &Path) -> Result<(ExperimentConfig, Nets)> {
    let dir = if path.join("config.json").is_file() {
        path.to_path_buf()
    } else if path.ends_with("checkpoints") {
        path.parent().unwrap_or(path).to_path_buf()
    } else {
        return Err(Error::Config(format!(
            "{} is not a run directory",
            path.display()
        )));
    };
    let cfg = ExperimentConfig::from_json(&std::fs::read_to_string(dir.join("config.json"))?)?;
    let mut nets = Nets::new();
    for entry in std::fs::read_dir(dir.join("checkpoints"))? {
        let p = entry?.path();
        let Some(name) = p.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(role) = name.strip_suffix(".card.json") {
            let card: ModelCard = serde_json::from_str(&std::fs::read_to_string(&p)?)?;
            let params = ParamSet::load(&dir.join("checkpoints").join(format!("{role}.json")))?;
            nets.insert(role.to_string(), Mlp::from_parts(card, params)?);
        }
    }
    if nets.is_empty() {
        return Err(Error::Config(format!(
            "no checkpoints under {}",
            dir.display()
        )));
    }
    Ok((cfg, nets))
}

/// Evaluates a saved run against a dataset spec.
pub fn eval_checkpoint(
    path: &Path,
    dataset: &DatasetSpec,
    eval: &EvalConfig,
) -> Result<BTreeMap<String, f64>> {
    let (cfg, nets) = load_run(path)?;
    dataset.validate(Path::new("."))?;
    let data = Prepared::new(dataset, cfg.train_size, eval.samples, cfg.seed)?;
    let (summary, _) = evaluate(cfg.kind, &nets, cfg.model.latent_dim, &data, eval, cfg.seed)?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedDelta {
    pub seed: u64,
    pub a: BTreeMap<String, f64>,
    pub b: BTreeMap<String, f64>,
    /// `b - a` for every metric both runs report.
    pub delta: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompareReport {
    pub a_hash: String,
    pub b_hash: String,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedDelta>,
    pub median_delta: BTreeMap<String, f64>,
}

/// Runs `a` and `b` on seeds `a.seed, a.seed + 1, ...` with common random
/// numbers per seed and reports per-seed differences of summary metrics.
pub fn compare(
    a: &ExperimentConfig,
    b: &ExperimentConfig,
    seeds: usize,
    opts: &RunOptions,
) -> Result<CompareReport> {
    if seeds == 0 {
        return Err(Error::Config("need at least one seed".into()));
    }
    let seed_list: Vec<u64> = (0..seeds as u64).map(|i| a.seed + i).collect();
    let mut per_seed = Vec::new();
    for &s in &seed_list {
        let mut ca = a.clone();
        let mut cb = b.clone();
        ca.seed = s;
        cb.seed = s;
        ca.output_dir = None;
        cb.output_dir = None;
        let ra = run_experiment(&ca, opts)?.summary;
        let rb = run_experiment(&cb, opts)?.summary;
        let delta = ra
            .iter()
            .filter(|(k, _)| k.as_str() != "seed")
            .filter_map(|(k, va)| rb.get(k).map(|vb| (k.clone(), vb - va)))
            .collect();
        per_seed.push(SeedDelta {
            seed: s,
            a: ra,
            b: rb,
            delta,
        });
    }
    let mut median_delta = BTreeMap::new();
    if let Some(first) = per_seed.first() {
        for k in first.delta.keys() {
            let v: Vec<f64> = per_seed
                .iter()
                .filter_map(|d| d.delta.get(k).copied())
                .collect();
            median_delta.insert(k.clone(), crate::metrics::median(&v));
        }
    }
    let report = CompareReport {
        a_hash: a.hash(),
        b_hash: b.hash(),
        seeds: seed_list,
        per_seed,
        median_delta,
    };
    if let Some(root) = &opts.output_root {
        let dir = root.join(format!(
            "compare-{}-{}",
            &report.a_hash[..8],
            &report.b_hash[..8]
        ));
        std::fs::create_dir_all(&dir)?;
        std::fs::write(
            dir.join("compare.json"),
            serde_json::to_string_pretty(&report)?,
        )?;
        let keys: Vec<String> = report.median_delta.keys().cloned().collect();
        let mut header = vec!["seed".to_string()];
        header.extend(keys.iter().map(|k| format!("delta_{k}")));
        let rows: Vec<Vec<String>> = report
            .per_seed
            .iter()
            .map(|d| {
                let mut r = vec![d.seed.to_string()];
                r.extend(
                    keys.iter()
                        .map(|k| d.delta.get(k).map(|v| fmt(*v)).unwrap_or_default()),
                );
                r
            })
            .collect();
        write_csv_table(&dir.join("compare.csv"), &header, &rows)?;
    }
    Ok(report)
}

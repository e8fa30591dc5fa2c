use std::path::{Path, PathBuf};
use std::process::Command;

use unigen_core::AdamConfig;
use unigen_harness::config::{EvalConfig, MnistSpec, ModelConfig};
use unigen_harness::runner::{eval_checkpoint, load_run, MetricRow};
use unigen_harness::{
    compare, run_experiment, DatasetSpec, Error, ExperimentConfig, ExperimentKind, MixtureSpec,
    RunOptions,
};

fn mixture() -> DatasetSpec {
    DatasetSpec::GaussianMixture2d(MixtureSpec::asymmetric_two_mode())
}

fn small(kind: ExperimentKind, dataset: DatasetSpec, steps: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(kind, dataset, 11);
    c.model = ModelConfig {
        latent_dim: 2,
        hidden: vec![16],
        ..ModelConfig::default()
    };
    c.steps = steps;
    c.batch_size = 32;
    c.log_every = 10;
    c.train_size = 500;
    c.eval.samples = 300;
    c.k = if kind == ExperimentKind::Iwgan { 3 } else { 1 };
    c
}

fn mnist_small(kind: ExperimentKind) -> ExperimentConfig {
    let d = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let mut c = small(
        kind,
        DatasetSpec::MnistIdx(MnistSpec {
            images: d.join("train-images-idx3-ubyte"),
            labels: d.join("train-labels-idx1-ubyte"),
            test_images: None,
            test_labels: None,
            subset_fraction: 0.02,
            binarize_threshold: Some(0.5),
        }),
        12,
    );
    c.model.latent_dim = 4;
    c.optim = AdamConfig::default();
    c
}

fn read_metrics(dir: &Path) -> String {
    std::fs::read_to_string(dir.join("metrics.jsonl")).unwrap()
}

#[test]
fn smoke_run_writes_every_artifact() {
    let root = tempfile::tempdir().unwrap();
    let cfg = small(ExperimentKind::Gan, mixture(), 200);
    let rec = run_experiment(&cfg, &RunOptions::at(root.path())).unwrap();
    let dir = rec.run_dir.clone().unwrap();
    assert!(dir.starts_with(root.path()));
    assert!(dir.ends_with(format!("gan-seed11-{}", &cfg.hash()[..8])));
    for f in [
        "config.json",
        "config.sha256",
        "metrics.jsonl",
        "curves.csv",
        "summary.csv",
        "samples.csv",
        "record.json",
        "checkpoints/gen.json",
        "checkpoints/gen.card.json",
        "checkpoints/disc.json",
    ] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let copy = std::fs::read_to_string(dir.join("config.json")).unwrap();
    assert_eq!(ExperimentConfig::from_json(&copy).unwrap(), cfg);
    let hash = std::fs::read_to_string(dir.join("config.sha256")).unwrap();
    assert_eq!(hash.trim(), cfg.hash());

    let rows: Vec<MetricRow> = read_metrics(&dir)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 20);
    assert_eq!(rows.last().unwrap().step, 200);
    assert!(rows[0].values.contains_key("disc_loss"));

    let samples = std::fs::read_to_string(dir.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 1 + 300);
    for key in ["small_mode_hit", "high_quality", "covered_modes", "jsd"] {
        assert!(rec.summary.contains_key(key), "summary lacks {key}");
    }
}

#[test]
fn same_seed_gives_identical_metric_streams() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = small(ExperimentKind::Vae, mixture(), 60);
    let ra = run_experiment(&cfg, &RunOptions::at(a.path())).unwrap();
    let rb = run_experiment(&cfg, &RunOptions::at(b.path())).unwrap();
    assert_eq!(
        read_metrics(ra.run_dir.as_ref().unwrap()),
        read_metrics(rb.run_dir.as_ref().unwrap())
    );
    assert_eq!(ra.summary, rb.summary);

    let mut other = cfg.clone();
    other.seed += 1;
    let rc = run_experiment(&other, &RunOptions::in_memory()).unwrap();
    assert_ne!(ra.metrics, rc.metrics);
}

#[test]
fn every_kind_trains_briefly() {
    use ExperimentKind::*;
    for kind in [Gan, Iwgan, Infogan, Aae, Vae, Aavae, Wakesleep] {
        let rec = run_experiment(&small(kind, mixture(), 30), &RunOptions::in_memory())
            .unwrap_or_else(|e| panic!("{kind:?}: {e}"));
        assert_eq!(rec.batches.steps, 30, "{kind:?}");
        assert!(rec.summary.values().all(|v| v.is_finite()), "{kind:?}");
    }
    for kind in [Vae, Wakesleep] {
        let rec = run_experiment(
            &small(kind, DatasetSpec::TabularSynthetic { support_size: 6 }, 30),
            &RunOptions::in_memory(),
        )
        .unwrap();
        assert!(rec.summary["test_elbo"].is_finite());
    }
}

#[test]
fn aavae_matches_each_real_batch_with_as_many_generated() {
    let cfg = mnist_small(ExperimentKind::Aavae);
    let rec = run_experiment(&cfg, &RunOptions::in_memory()).unwrap();
    let b = &rec.batches;
    assert_eq!(b.steps, 12);
    assert_eq!(b.unequal_steps, 0);
    assert_eq!(b.fake_examples, b.real_examples);
    assert_eq!(b.real_examples, 12 * 32);
    // 160 training digits, 5 batches per epoch: epochs start at steps 1, 6, 11.
    assert_eq!(b.snapshot_refreshes, 3);
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let root = tempfile::tempdir().unwrap();
    let spec = MixtureSpec {
        means: vec![[1e200, 0.0]],
        weights: vec![1.0],
        stds: vec![1.0],
    };
    let cfg = small(
        ExperimentKind::Vae,
        DatasetSpec::GaussianMixture2d(spec),
        20,
    );
    let err = run_experiment(&cfg, &RunOptions::at(root.path())).unwrap_err();
    assert!(
        matches!(err, Error::NumericalAbort { step: 1, .. }),
        "{err}"
    );
    assert_eq!(err.exit_code(), 2);
    let abort = root.path().join(cfg.run_dir_name()).join("abort.json");
    let diag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(abort).unwrap()).unwrap();
    assert_eq!(diag["step"], 1);
}

#[test]
fn invalid_config_is_a_config_error() {
    let mut cfg = small(ExperimentKind::Aavae, mixture(), 10);
    cfg.temperature = 0.5;
    let err = run_experiment(&cfg, &RunOptions::in_memory()).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert_eq!(err.exit_code(), 1);

    let mut cfg = mnist_small(ExperimentKind::Vae);
    if let DatasetSpec::MnistIdx(m) = &mut cfg.dataset {
        m.images = PathBuf::from("/nonexistent/images");
    }
    assert_eq!(
        run_experiment(&cfg, &RunOptions::in_memory())
            .unwrap_err()
            .exit_code(),
        1
    );
}

#[test]
fn compare_reports_per_seed_deltas() {
    let root = tempfile::tempdir().unwrap();
    let a = small(ExperimentKind::Gan, mixture(), 40);
    let b = small(ExperimentKind::Iwgan, mixture(), 40);
    let r = compare(&a, &b, 3, &RunOptions::at(root.path())).unwrap();
    assert_eq!(r.seeds, vec![11, 12, 13]);
    assert_eq!(r.per_seed.len(), 3);
    for d in &r.per_seed {
        let want = d.b["high_quality"] - d.a["high_quality"];
        assert_eq!(d.delta["high_quality"], want);
        assert!(!d.delta.contains_key("seed"));
    }
    let single = run_experiment(
        &ExperimentConfig {
            seed: 12,
            ..b.clone()
        },
        &RunOptions::in_memory(),
    )
    .unwrap();
    assert_eq!(r.per_seed[1].b, single.summary);
    let dir = root
        .path()
        .join(format!("compare-{}-{}", &a.hash()[..8], &b.hash()[..8]));
    let csv = std::fs::read_to_string(dir.join("compare.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(dir.join("compare.json").is_file());
}

#[test]
fn saved_runs_evaluate_like_the_original() {
    let root = tempfile::tempdir().unwrap();
    let cfg = small(ExperimentKind::Gan, mixture(), 50);
    let rec = run_experiment(&cfg, &RunOptions::at(root.path())).unwrap();
    let dir = rec.run_dir.unwrap();
    let (loaded, nets) = load_run(&dir).unwrap();
    assert_eq!(loaded, cfg);
    assert!(nets.contains_key("gen") && nets.contains_key("disc"));
    let again = eval_checkpoint(&dir.join("checkpoints"), &cfg.dataset, &cfg.eval).unwrap();
    for (k, v) in &again {
        assert_eq!(rec.summary[k], *v, "{k}");
    }
    let more = EvalConfig {
        samples: 1000,
        ..EvalConfig::default()
    };
    assert!(eval_checkpoint(&dir, &cfg.dataset, &more).unwrap()["high_quality"] > 0.0);
    assert!(load_run(root.path()).is_err());
}

fn unigen() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_unigen"));
    c.env_remove("UNIGEN_OUTPUT_ROOT");
    c
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

#[test]
fn cli_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");

    let missing = unigen()
        .args([
            "--output-root",
            out.to_str().unwrap(),
            "run",
            "/nonexistent.json",
        ])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));

    let no_seed = tmp.path().join("noseed.json");
    std::fs::write(
        &no_seed,
        r#"{"kind":"gan","dataset":{"kind":"gaussian-mixture-2d","means":[[0,0]],"weights":[1],"stds":[1]}}"#,
    )
    .unwrap();
    let s = unigen()
        .args(["--output-root", out.to_str().unwrap(), "run"])
        .arg(&no_seed)
        .output()
        .unwrap();
    assert_eq!(s.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&s.stderr).contains("seed"));

    let spec = MixtureSpec {
        means: vec![[1e200, 0.0]],
        weights: vec![1.0],
        stds: vec![1.0],
    };
    let bad = small(ExperimentKind::Vae, DatasetSpec::GaussianMixture2d(spec), 5);
    let p = write_config(tmp.path(), &bad);
    let s = unigen()
        .args(["--output-root", out.to_str().unwrap(), "run"])
        .arg(&p)
        .output()
        .unwrap();
    assert_eq!(s.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&s.stderr).contains("numerical abort"));

    let s = unigen()
        .args(["verify-lemmas", "--instances", "5", "--jsd-instances", "20"])
        .output()
        .unwrap();
    assert_eq!(s.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&s.stdout).unwrap();
    assert_eq!(report["all_passed"], true);
}

#[test]
fn cli_output_root_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let env_root = tmp.path().join("from-env");
    let flag_root = tmp.path().join("from-flag");
    let cfg = small(ExperimentKind::Gan, mixture(), 20);
    let p = write_config(tmp.path(), &cfg);
    let s = unigen()
        .env("UNIGEN_OUTPUT_ROOT", &env_root)
        .args(["--output-root", flag_root.to_str().unwrap(), "run"])
        .arg(&p)
        .output()
        .unwrap();
    assert!(s.status.success(), "{}", String::from_utf8_lossy(&s.stderr));
    assert!(env_root
        .join(cfg.run_dir_name())
        .join("record.json")
        .is_file());
    assert!(!flag_root.exists());

    let summary: serde_json::Value = serde_json::from_slice(&s.stdout).unwrap();
    assert!(summary["high_quality"].is_number());

    let ds = tmp.path().join("dataset.json");
    std::fs::write(&ds, serde_json::to_string(&cfg.dataset).unwrap()).unwrap();
    let s = unigen()
        .args(["eval", "--checkpoint"])
        .arg(env_root.join(cfg.run_dir_name()))
        .arg("--dataset")
        .arg(&ds)
        .args(["--samples", "200"])
        .output()
        .unwrap();
    assert!(s.status.success(), "{}", String::from_utf8_lossy(&s.stderr));
}

#[test]
fn bundled_configs_load() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        if let DatasetSpec::MnistIdx(m) = &cfg.dataset {
            assert!(m.images.is_file());
        }
        n += 1;
    }
    assert_eq!(n, 5);
}

#[test]
fn cli_verify_lemmas_honors_tolerance() {
    let s = unigen()
        .args([
            "verify-lemmas",
            "--instances",
            "3",
            "--jsd-instances",
            "6",
            "--tol",
            "1e-30",
        ])
        .output()
        .unwrap();
    assert_eq!(s.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_slice(&s.stdout).unwrap();
    assert_eq!(report["config"]["tol"], 1e-30);
    let failed: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(failed, ["lemma1_identity", "optimal_specialization"]);
}

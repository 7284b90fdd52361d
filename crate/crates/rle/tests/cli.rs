//! Contract tests for the `rle` binary: flags, file outputs, exit codes,
//! and byte-identical reruns (the CLI half of the determinism criterion).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rle_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rle"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    rle_bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path, epochs: usize) -> PathBuf {
    let path = dir.join("exp.json");
    let doc = serde_json::json!({
        "schema_version": 1,
        "noise": "laplace_hetero",
        "n_train": 160,
        "n_test": 80,
        "seeds": [0, 1, 2],
        "losses": [
            {"kind": "rle", "q": {"family": "laplace", "dim": 2}},
            {"kind": "dle"},
            {"kind": "l2_const"}
        ],
        "budget": {
            "epochs": epochs,
            "batch_size": 64,
            "learning_rate": 1e-3,
            "sigma_max": 1.0,
            "flow": {"blocks": 2, "layers": 2, "width": 8},
            "trunk": {"layers": 1, "width": 8},
            "eval_every": 0
        },
        "out_dir": "runs"
    });
    std::fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    path
}

fn gen_data(dir: &Path) -> PathBuf {
    let out = run(
        &[
            "gen-data",
            "--kind",
            "laplace_hetero",
            "--n",
            "240",
            "--seed",
            "7",
            "--out",
            "data",
        ],
        dir,
    );
    assert_code(&out, 0);
    dir.join("data/laplace_hetero-n240-seed7.csv")
}

#[test]
fn gen_data_writes_two_files_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let csv = gen_data(dir.path());
    let json = csv.with_extension("json");
    assert!(csv.exists() && json.exists());
    let first_csv = std::fs::read(&csv).unwrap();
    let first_json = std::fs::read(&json).unwrap();
    gen_data(dir.path());
    assert_eq!(first_csv, std::fs::read(&csv).unwrap());
    assert_eq!(first_json, std::fs::read(&json).unwrap());
}

#[test]
fn gen_data_rejects_invalid_kind_with_the_valid_list() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "gen-data",
            "--kind",
            "cauchy_hetero",
            "--n",
            "10",
            "--seed",
            "0",
            "--out",
            "data",
        ],
        dir.path(),
    );
    assert_code(&out, 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("laplace_hetero"), "{stderr}");
    assert!(stderr.contains("skew_mixture"), "{stderr}");
}

#[test]
fn train_smoke_run_produces_three_files_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 5);
    let data = gen_data(dir.path());
    let started = std::time::Instant::now();
    let out = run(
        &[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_code(&out, 0);
    assert!(
        started.elapsed().as_secs_f64() < 5.0,
        "smoke train took {:.1}s",
        started.elapsed().as_secs_f64()
    );
    for suffix in ["report.json", "metrics.csv", "model.json"] {
        let path = dir.path().join(format!("runs/rle_laplace-seed0.{suffix}"));
        assert!(path.exists(), "missing {}", path.display());
    }
}

#[test]
fn train_is_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 3);
    let data = gen_data(dir.path());
    let args = [
        "train",
        "--config",
        config.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--loss",
        "dle",
    ];
    assert_code(&run(&args, dir.path()), 0);
    let files: Vec<PathBuf> = ["report.json", "metrics.csv", "model.json"]
        .iter()
        .map(|s| dir.path().join(format!("runs/dle-seed0.{s}")))
        .collect();
    let before: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
    assert_code(&run(&args, dir.path()), 0);
    for (f, b) in files.iter().zip(&before) {
        assert_eq!(&std::fs::read(f).unwrap(), b, "{} changed", f.display());
    }
}

#[test]
fn loss_flag_changes_only_the_config_echo_loss() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 3);
    let data = gen_data(dir.path());
    for loss in ["rle", "dle"] {
        let out = run(
            &[
                "train",
                "--config",
                config.to_str().unwrap(),
                "--data",
                data.to_str().unwrap(),
                "--loss",
                loss,
            ],
            dir.path(),
        );
        assert_code(&out, 0);
    }
    let load = |stem: &str| -> serde_json::Value {
        serde_json::from_str(
            &std::fs::read_to_string(dir.path().join(format!("runs/{stem}.report.json"))).unwrap(),
        )
        .unwrap()
    };
    let mut rle_cfg = load("rle_laplace-seed0")["config"].clone();
    let mut dle_cfg = load("dle-seed0")["config"].clone();
    assert_ne!(rle_cfg["loss"], dle_cfg["loss"]);
    rle_cfg["loss"] = serde_json::Value::Null;
    dle_cfg["loss"] = serde_json::Value::Null;
    assert_eq!(rle_cfg, dle_cfg);
}

#[test]
fn train_missing_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 3);
    let out = run(
        &[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--data",
            "data/nowhere.csv",
        ],
        dir.path(),
    );
    assert_code(&out, 2);
}

#[test]
fn bad_config_key_exits_2_with_the_key_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.json");
    std::fs::write(
        &path,
        serde_json::json!({
            "schema_version": 1,
            "noise": "laplace_hetero",
            "n_train": 10,
            "n_test": 10,
            "seeds": [0],
            "losses": [{"kind": "l2_const"}],
            "budget": {"epocs": 3}
        })
        .to_string(),
    )
    .unwrap();
    let data = gen_data(dir.path());
    let out = run(
        &[
            "train",
            "--config",
            path.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_code(&out, 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("epocs"), "{stderr}");
}

#[test]
fn divergent_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.json");
    // A learning rate this size throws the scale nets past the overflow
    // guard within a couple of steps.
    std::fs::write(
        &path,
        serde_json::json!({
            "schema_version": 1,
            "noise": "laplace_hetero",
            "n_train": 160,
            "n_test": 80,
            "seeds": [0],
            "losses": [{"kind": "rle", "q": {"family": "laplace", "dim": 2}}],
            "budget": {
                "epochs": 3,
                "batch_size": 32,
                "learning_rate": 1e6,
                "flow": {"blocks": 2, "layers": 2, "width": 8},
                "trunk": {"layers": 1, "width": 8}
            }
        })
        .to_string(),
    )
    .unwrap();
    let data = gen_data(dir.path());
    let out = run(
        &[
            "train",
            "--config",
            path.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_code(&out, 3);
}

#[test]
fn bench_writes_table_and_summary_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), 3);
    let out = run(
        &["bench", "--config", config.to_str().unwrap(), "--jobs", "2"],
        dir.path(),
    );
    assert_code(&out, 0);
    let csv_path = dir.path().join("runs/bench.csv");
    let summary_path = dir.path().join("runs/bench_summary.json");
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    // 3 kinds x 3 seeds run rows + 3 summary rows + header.
    assert_eq!(csv.lines().count(), 1 + 9 + 3, "{csv}");
    let first_summary = std::fs::read(&summary_path).unwrap();

    let out = run(
        &["bench", "--config", config.to_str().unwrap(), "--jobs", "1"],
        dir.path(),
    );
    assert_code(&out, 0);
    assert_eq!(
        first_summary,
        std::fs::read(&summary_path).unwrap(),
        "bench summary changed across reruns"
    );
}

#[test]
fn density_export_matches_the_base_at_zero_init() {
    use rle::flow::{FlowArch, FlowModel};
    use rle::lik::LossKind;
    use rle::regress::{RegressionHead, TrunkArch};
    use rle::snapshot::ModelSnapshot;
    use rle::trainer::TrainedModel;
    use rand::SeedableRng;

    let dir = tempfile::tempdir().unwrap();
    // An untrained (identity-initialised) DLE snapshot evaluates to the
    // standard-normal base exactly.
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
    let head = RegressionHead::init(
        &mut rng,
        2,
        2,
        &TrunkArch {
            layers: 1,
            width: 8,
        },
        1.0,
    )
    .unwrap();
    let flow = FlowModel::zero_init(&mut rng, 2, &FlowArch::default()).unwrap();
    let model = TrainedModel {
        head,
        flow: Some(flow),
        kind: LossKind::Dle,
    };
    let snap_path = dir.path().join("zero.model.json");
    ModelSnapshot::from_model(&model).save(&snap_path).unwrap();

    let out_path = dir.path().join("density.csv");
    let out = run(
        &[
            "density",
            "--model",
            snap_path.to_str().unwrap(),
            "--out",
            out_path.to_str().unwrap(),
            "--grid",
            "200",
        ],
        dir.path(),
    );
    assert_code(&out, 0);
    let text = std::fs::read_to_string(&out_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 200 * 200);
    assert_eq!(lines[0], "x1,x2,log_density");

    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut mass = 0.0;
    let cell = (16.0 / 200.0) * (16.0 / 200.0);
    for line in &lines[1..] {
        let cols: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        let expected = -ln_2pi - 0.5 * (cols[0] * cols[0] + cols[1] * cols[1]);
        assert!(
            (cols[2] - expected).abs() < 1e-12,
            "log density {} vs analytic {expected}",
            cols[2]
        );
        mass += cols[2].exp() * cell;
    }
    assert!((mass - 1.0).abs() < 0.01, "exported grid mass {mass}");

    // Re-export and compare bytes.
    let first = std::fs::read(&out_path).unwrap();
    let out = run(
        &[
            "density",
            "--model",
            snap_path.to_str().unwrap(),
            "--out",
            out_path.to_str().unwrap(),
            "--grid",
            "200",
        ],
        dir.path(),
    );
    assert_code(&out, 0);
    assert_eq!(first, std::fs::read(&out_path).unwrap());
}

#[test]
fn density_rejects_bad_snapshot_schema() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("bad.model.json");
    std::fs::write(&snap, "{\"schema_version\": 9}").unwrap();
    let out = run(
        &[
            "density",
            "--model",
            snap.to_str().unwrap(),
            "--out",
            "d.csv",
        ],
        dir.path(),
    );
    assert_code(&out, 2);
}

#[test]
fn check_lists_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["check", "--list"], dir.path());
    assert_code(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("flow_round_trip"), "{stdout}");
    assert!(!stdout.contains("PASS"), "--list must not run checks");

    let out = run(&["check", "--seed", "5"], dir.path());
    assert_code(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(
        stdout.matches("PASS").count(),
        rle::verify::check_names().len(),
        "{stdout}"
    );
    assert!(!stdout.contains("FAIL"), "{stdout}");
}

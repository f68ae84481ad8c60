use std::fs;
use std::path::Path;

use countlab::cli::{dispatch, EXIT_OK, EXIT_USAGE, EXIT_VERIFICATION};
use countlab::io::{load_model, save_model};
use countlab::sweep::parallel_loss_and_grads;
use countlab_core::analysis::random_rademacher_embeddings;
use countlab_core::constructions::build_mfe_two_layer;
use countlab_core::training::{init_model, loss_and_grads, sample_batch, Task, TaskSpec, TrainConfig};
use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> i32 {
    let mut argv = vec!["countlab", "--quiet", "--out-dir", dir.to_str().unwrap()];
    argv.extend_from_slice(args);
    dispatch(argv)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn construct_qc_hist_exhaustive() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(dir.path(), &["construct", "--task", "qc-hist", "--m", "3", "--n", "4", "--exhaustive"]);
    assert_eq!(code, EXIT_OK);
    let rep = json(&dir.path().join("report.json"));
    assert_eq!(rep["instances"], 81);
    assert_eq!(rep["failures"], 0);
    assert!(dir.path().join("model.json").exists());
    let man = json(&dir.path().join("manifest.json"));
    assert_eq!(man["subcommand"], "construct");
    assert_eq!(man["exit_code"], 0);
}

#[test]
fn construct_attention_models() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        ["--task", "qc-attend", "--m", "8", "--d", "6", "--n", "20", "--embedding", "rademacher"],
        ["--task", "mfe-2layer", "--m", "4", "--d", "4", "--n", "10", "--embedding", "onehot"],
    ] {
        let mut full = vec!["construct", "--random", "200"];
        full.extend_from_slice(&args);
        assert_eq!(run(dir.path(), &full), EXIT_OK, "{:?}", args);
    }
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["construct", "--task", "qc-hist", "--m", "3"]), EXIT_USAGE);
    assert_eq!(run(dir.path(), &["frobnicate"]), EXIT_USAGE);
    assert_eq!(run(dir.path(), &["protocol", "--nbits", "2"]), EXIT_USAGE);
    assert_eq!(run(dir.path(), &["analyze", "--check", "welch"]), EXIT_USAGE);
}

#[test]
fn empty_csv_plot_exits_two_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("empty.csv");
    fs::write(&csv, "d,m_thr\n").unwrap();
    let code = run(dir.path(), &["plot", "--kind", "mthr", "--csv", csv.to_str().unwrap()]);
    assert_eq!(code, EXIT_USAGE);
    assert_eq!(json(&dir.path().join("manifest.json"))["exit_code"], 2);
}

#[test]
fn wrong_schema_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    fs::write(&csv, "x,y\n1,2\n").unwrap();
    assert_eq!(run(dir.path(), &["plot", "--kind", "pieces", "--csv", csv.to_str().unwrap()]), EXIT_USAGE);
}

#[test]
fn thresholds_plot_has_one_marker_per_row() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("thresholds.csv");
    fs::write(&csv, "d,m_thr\n8,12\n16,27\n32,none\n").unwrap();
    let out = dir.path().join("a.svg");
    let code = run(dir.path(), &["plot", "--kind", "mthr", "--csv", csv.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    let svg = fs::read_to_string(&out).unwrap();
    assert_eq!(svg.matches("<circle").count(), 3);
    assert!(svg.contains("m_thr(d)"));

    let again = dir.path().join("b.svg");
    run(dir.path(), &["plot", "--kind", "mthr", "--csv", csv.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn analyze_outputs_are_byte_stable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let code = run(dir, &["analyze", "--check", "hoeffding", "--d", "16,64", "--t", "0.3,0.5", "--draws", "5000", "--seed", "4"]);
        assert_eq!(code, EXIT_OK);
        let code = run(dir, &["analyze", "--check", "welch", "--d", "4,8", "--seeds", "3"]);
        assert_eq!(code, EXIT_OK);
    }
    for f in ["hoeffding.csv", "welch.csv"] {
        let x = fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, fs::read(b.path().join(f)).unwrap());
        assert!(!x.contains(&b'\r'));
    }
    let text = fs::read_to_string(a.path().join("welch.csv")).unwrap();
    assert!(text.starts_with("m,d,seed,welch_bound,max_pairwise_inner,satisfied\n"));
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn pieces_check_reports_shortfall_and_keeps_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(dir.path(), &["analyze", "--check", "pieces", "--n", "4,64"]);
    assert_eq!(code, EXIT_VERIFICATION);
    let text = fs::read_to_string(dir.path().join("pieces.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "n,eps,pieces,lemma1_lower_bound,upper_bound,satisfied");
    assert!(rows[1].ends_with(",true"));
    assert!(rows[2].starts_with("64,0.5,10,21,512,"));
    assert_eq!(json(&dir.path().join("manifest.json"))["exit_code"], 1);

    let svg = dir.path().join("p.svg");
    let code = run(dir.path(), &["plot", "--kind", "pieces", "--csv", dir.path().join("pieces.csv").to_str().unwrap(), "--out", svg.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert!(fs::read_to_string(svg).unwrap().contains("slope"));
}

#[test]
fn protocol_exhaustive_small() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["protocol", "--nbits", "2", "--exhaustive", "--p", "32,64"]), EXIT_OK);
    let text = fs::read_to_string(dir.path().join("protocol.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "nbits,p,d,h,total_bits,agreement_rate");
    assert_eq!(lines[1], "2,32,7,1,289,1");
    assert!(dir.path().join("transcripts.json").exists());
}

#[test]
fn protocol_shrinks_to_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["protocol", "--nbits", "6", "--vocab", "10", "--random", "20"]), EXIT_OK);
    let text = fs::read_to_string(dir.path().join("protocol.csv")).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("1,"));
}

#[test]
fn tiny_sweep_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let code = run(dir, &[
            "sweep", "--task", "qc", "--d-list", "4,8", "--m-list", "2,3", "--steps", "20",
            "--eval-examples", "50", "--seed", "9", "--svg",
        ]);
        assert_eq!(code, EXIT_OK);
    }
    for f in ["results.csv", "thresholds.csv", "errors.csv", "thresholds.svg"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{}", f);
    }
    let text = fs::read_to_string(a.path().join("results.csv")).unwrap();
    assert!(text.starts_with("task,d,m,n,steps,seed,accuracy\n"));
    assert!(text.lines().nth(1).unwrap().starts_with("qc,4,2,20,20,"));
    let th = fs::read_to_string(a.path().join("thresholds.csv")).unwrap();
    assert_eq!(th.lines().count(), 3);
}

#[test]
fn model_json_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let emb = random_rademacher_embeddings(5, 8, 3).unwrap();
    let model = build_mfe_two_layer(5, 8, 9, &emb).unwrap().model;
    let path = dir.path().join("m.json");
    save_model(&path, &model).unwrap();
    assert_eq!(load_model(&path).unwrap(), model);

    fs::write(&path, "{\"config\": 3}").unwrap();
    assert!(load_model(&path).is_err());
}

#[test]
fn parallel_gradients_match_sequential_bits() {
    for task in [Task::Qc, Task::Mfe] {
        let spec = TaskSpec::new(task, 5);
        let cfg = TrainConfig { seed: 11, ..TrainConfig::new(8) };
        let model = init_model(&spec, &cfg).unwrap();
        let batch = sample_batch(&spec, 16, 21);
        let (l1, g1) = loss_and_grads(&model, &batch).unwrap();
        let (l2, g2) = parallel_loss_and_grads(&model, &batch).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        for (a, b) in g1.params().iter().zip(g2.params()) {
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

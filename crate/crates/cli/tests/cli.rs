use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use splicegan::eval::EvaluationSummary;
use splicegan::forge::DatasetManifest;

const SCALE: &str = "0.05";

fn splicegan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splicegan"))
        .args(args)
        .env_remove("SPLICEGAN_SEED")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_success(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        o.status.code(),
        stdout(o),
        String::from_utf8_lossy(&o.stderr)
    );
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(tree(&p));
        } else {
            out.push((p.clone(), fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn help_on_every_subcommand() {
    for sub in [None, Some("synth"), Some("train"), Some("infer"), Some("eval"), Some("plot")] {
        let mut args: Vec<&str> = sub.into_iter().collect();
        args.push("--help");
        let o = splicegan(&args);
        assert_success(&o);
        assert!(stdout(&o).contains("Usage"), "{sub:?}");
    }
}

#[test]
fn unwritable_output_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, b"not a directory").unwrap();
    let o = splicegan(&["synth", "--scale", SCALE, "--out", path(&blocker.join("corpus"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

#[test]
fn missing_inputs_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    let out = dir.path().join("run");
    let o = splicegan(&["train", "--manifest", path(&missing), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(4));
    let o = splicegan(&["--config", path(&missing), "synth", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(4));
    let o = splicegan(&["plot", path(&dir.path().join("no_eval")), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    fs::write(&cfg, r#"{"train": {"epochz": 3}}"#).unwrap();
    let o = splicegan(&["--config", path(&cfg), "synth", "--out", path(&dir.path().join("c"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("flag"), dir.path().join("env"));
    assert_success(&splicegan(&["synth", "--scale", SCALE, "--seed", "5", "--out", path(&a)]));
    let o = Command::new(env!("CARGO_BIN_EXE_splicegan"))
        .args(["synth", "--scale", SCALE, "--out", path(&b)])
        .env("SPLICEGAN_SEED", "5")
        .output()
        .unwrap();
    assert_success(&o);
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
}

#[test]
fn end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let manifest = corpus.join("manifest.json");

    let o = splicegan(&["synth", "--scale", SCALE, "--seed", "3", "--out", path(&corpus)]);
    assert_success(&o);
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == ["small", "8", "6", "2", "0"]), "{text}");
    let before = tree(&corpus);
    assert_success(&splicegan(&["synth", "--scale", SCALE, "--seed", "3", "--out", path(&corpus)]));
    assert_eq!(before, tree(&corpus), "rerun changed the corpus");

    // eval on ground-truth masks
    let perfect = dir.path().join("perfect");
    assert_success(&splicegan(&[
        "eval",
        "--manifest",
        path(&manifest),
        "--estimates",
        path(&corpus.join("masks")),
        "--out",
        path(&perfect),
    ]));
    let summary = EvaluationSummary::load(&perfect.join("summary.json")).unwrap();
    assert_eq!(summary.auc_localization, 1.0);
    assert_eq!(summary.auc_detection, 1.0);
    for f in ["roc.svg", "pr.svg", "detection_scores.csv", "localization_roc.csv"] {
        assert!(perfect.join(f).exists(), "{f}");
    }

    // zero epochs, then one, then resume to two
    let run = dir.path().join("run");
    let train = |extra: &[&str]| {
        let mut args = vec!["train", "--manifest", path(&manifest), "--preset", "tiny", "--seed", "3", "--out", path(&run)];
        args.extend_from_slice(extra);
        splicegan(&args)
    };
    assert_success(&train(&["--epochs", "0"]));
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    assert!(metrics.starts_with("epoch,step,L_D,L_adv_G,L_R_bce,L_total,val_metric\n0,0,"));
    assert!(run.join("checkpoints/epoch_0000.ckpt").exists() && run.join("best.ckpt").exists());

    assert_success(&train(&["--epochs", "1"]));
    let last = run.join("last.ckpt");
    assert_success(&splicegan(&["train", "--manifest", path(&manifest), "--resume", path(&last), "--epochs", "2", "--out", path(&run)]));
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let epochs: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(epochs, ["0", "1", "2"]);

    let l1 = dir.path().join("run_l1");
    assert_success(&splicegan(&[
        "train", "--manifest", path(&manifest), "--preset", "tiny", "--loss", "l1", "--epochs", "0", "--out", path(&l1),
    ]));
    assert!(fs::read_to_string(l1.join("metrics.csv")).unwrap().starts_with("epoch,step,L_D,L_adv_G,L_R_l1,"));

    // evaluation, comparison and plots
    let eval = dir.path().join("eval");
    assert_success(&splicegan(&["eval", "--checkpoint", path(&run), "--manifest", path(&manifest), "--out", path(&eval)]));
    let threshold = EvaluationSummary::load(&eval.join("summary.json")).unwrap().threshold;
    let compare = dir.path().join("compare");
    let bce_spec = format!("bce={}", path(&run));
    let l1_spec = format!("l1={}", path(&l1));
    assert_success(&splicegan(&[
        "eval", "--manifest", path(&manifest), "--compare", &bce_spec, &l1_spec, "--out", path(&compare),
    ]));
    let svg = fs::read_to_string(compare.join("compare_localization_roc.svg")).unwrap();
    assert!(svg.contains("bce") && svg.contains("l1"));
    assert!(compare.join("bce/summary.json").exists() && compare.join("l1/summary.json").exists());
    let plots = dir.path().join("plots");
    assert_success(&splicegan(&["plot", path(&compare.join("bce")), path(&compare.join("l1")), "--out", path(&plots)]));
    assert!(plots.join("roc_detection.svg").exists() && plots.join("roc_localization.svg").exists());

    // inference with the evaluated threshold
    let m = DatasetManifest::load(&manifest).unwrap();
    let pristine = m.pairs.iter().find(|e| e.size_class.as_str() == "pristine").unwrap();
    let image = corpus.join(&pristine.image_path);
    let infer = dir.path().join("infer");
    let o = splicegan(&[
        "infer",
        "--checkpoint",
        path(&run),
        "--summary",
        path(&eval.join("summary.json")),
        path(&image),
        "--out",
        path(&infer),
    ]);
    assert_success(&o);
    let records: serde_json::Value = serde_json::from_slice(&fs::read(infer.join("detections.json")).unwrap()).unwrap();
    let record = &records[0];
    assert_eq!(record["id"], pristine.id.as_str());
    assert_eq!(record["threshold"], threshold);
    let score = record["score"].as_f64().unwrap();
    assert_eq!(record["label"], if score >= threshold { "forged" } else { "pristine" });
    assert!(infer.join(format!("soft/{}.png", pristine.id)).exists());
    assert!(infer.join(format!("binary/{}.png", pristine.id)).exists());

    let o = splicegan(&["infer", "--checkpoint", path(&run), path(&image), "--out", path(&infer)]);
    assert_eq!(o.status.code(), Some(2), "threshold is required");
}

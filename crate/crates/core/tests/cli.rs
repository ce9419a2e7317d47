use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn urm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_urm"))
        .args(args)
        .output()
        .expect("failed to launch urm")
}

fn ok(args: &[&str]) -> Output {
    let out = urm(args);
    assert!(
        out.status.success(),
        "urm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// gen-synth -> train-proxy -> annotate, returning the annotated path.
fn annotated_corpus(dir: &TempDir, flip: &str) -> PathBuf {
    let (synth, scored, ann) = (p(dir, "synth.jsonl"), p(dir, "scored.jsonl"), p(dir, "ann.jsonl"));
    ok(&["gen-synth", "--output", s(&synth), "--n-pairs", "300", "--flip-rate", flip, "--n-prompts", "30"]);
    ok(&["train-proxy", "--input", s(&synth), "--output", s(&scored), "--epochs", "5", "--mc-passes", "16"]);
    ok(&["annotate", "--input", s(&scored), "--output", s(&ann), "--n-steps", "10000"]);
    ann
}

#[test]
fn pair_score_prints_one_decimal() {
    let out = ok(&["pair-score", "--w", "58", "--d", "12", "--l", "10"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "160.0\n");
    let out = ok(&["pair-score", "--w", "65", "--d", "69", "--l", "26"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "124.4\n");
}

#[test]
fn exit_codes() {
    assert_eq!(urm(&["pair-score", "--w", "0", "--d", "0", "--l", "0"]).status.code(), Some(1));
    assert_eq!(urm(&["pair-score", "--w", "1", "--bogus"]).status.code(), Some(2));
    assert_eq!(urm(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(urm(&["annotate", "--input", "/nonexistent/x.jsonl", "--output", "/tmp/never"]).status.code(), Some(1));
}

#[test]
fn help_documents_defaults() {
    for sub in ["gen-synth", "train-proxy", "annotate", "curate", "weights", "train-policy", "report", "oracle"] {
        let out = ok(&[sub, "--help"]);
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains("[default:"), "{sub} help lacks defaults");
    }
    let text = String::from_utf8(ok(&["annotate", "--help"]).stdout).unwrap();
    assert!(text.contains("--n-steps") && text.contains("[default: 10000]"));
}

#[test]
fn annotate_adds_the_profile_fields() {
    let dir = TempDir::new().unwrap();
    let input = p(&dir, "pairs.jsonl");
    std::fs::write(
        &input,
        "{\"id\":\"a\",\"reward_samples_chosen\":[1,2,3],\"reward_samples_rejected\":[0,1,2],\"note\":\"kept\"}\n\
         {\"id\":\"b\",\"gap_override\":{\"mu\":-0.5,\"sigma\":2}}\n",
    )
    .unwrap();
    let out = p(&dir, "ann.jsonl");
    ok(&["annotate", "--input", s(&input), "--output", s(&out), "--n-steps", "10000"]);
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    let added = ["mu", "sigma", "mean_prob", "shannon", "epistemic", "aleatoric", "balent", "u"];
    for line in &lines {
        for k in added {
            assert!(line[k].is_number(), "missing {k}");
        }
        assert!(line["clamped"].is_boolean());
    }
    assert_eq!(lines[0]["note"], "kept");
    assert_eq!(lines[0]["mu"], 1.0);
    assert_eq!(lines[0].as_object().unwrap().len(), 4 + added.len() + 1);
}

#[test]
fn pipeline_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let ann = annotated_corpus(&dir, "0.15");
    let first = std::fs::read(&ann).unwrap();
    let again = TempDir::new().unwrap();
    assert_eq!(std::fs::read(annotated_corpus(&again, "0.15")).unwrap(), first);

    for strategy in ["random", "epistemic", "aleatoric", "balent", "bad"] {
        let (a, b) = (p(&dir, "a.txt"), p(&dir, "b.txt"));
        for out in [&a, &b] {
            ok(&["curate", "--input", s(&ann), "--strategy", strategy, "--direction", "ascending", "--output", s(out)]);
        }
        let plan = std::fs::read(&a).unwrap();
        assert_eq!(plan, std::fs::read(&b).unwrap(), "{strategy}");
        let mut ids: Vec<_> = String::from_utf8(plan).unwrap().lines().map(str::to_owned).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 300);
    }
}

#[test]
fn curate_weights_filter_report_and_train() {
    let dir = TempDir::new().unwrap();
    let ann = annotated_corpus(&dir, "0.15");

    let plan = p(&dir, "plan.txt");
    ok(&["curate", "--input", s(&ann), "--strategy", "balent", "--direction", "descending", "--output", s(&plan)]);
    let jsonl = ok(&["curate", "--input", s(&ann), "--strategy", "bad", "--format", "jsonl"]);
    let first: Value = serde_json::from_str(String::from_utf8(jsonl.stdout).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["rank"], 0);

    let weights = p(&dir, "w.jsonl");
    ok(&["weights", "--input", s(&ann), "--mode", "udpo", "--output", s(&weights)]);
    let ws: Vec<Value> = std::fs::read_to_string(&weights)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let mean = ws.iter().map(|w| w["c_u"].as_f64().unwrap()).sum::<f64>() / ws.len() as f64;
    assert!((mean - 1.0).abs() < 1e-9);
    // no class labels on pair data
    assert_eq!(urm(&["weights", "--input", s(&ann), "--mode", "ucpo"]).status.code(), Some(1));

    let kept = p(&dir, "kept.jsonl");
    ok(&["filter", "--input", s(&ann), "--output", s(&kept), "--positive-only"]);
    let n_kept = std::fs::read_to_string(&kept).unwrap().lines().count();
    assert!(n_kept > 0 && n_kept <= 300);
    ok(&["filter", "--input", s(&ann), "--output", s(&kept), "--min-gap", "-1e308"]);
    assert_eq!(std::fs::read_to_string(&kept).unwrap().lines().count(), 300);

    let report = ok(&["report", "--input", s(&ann)]);
    let text = String::from_utf8(report.stdout).unwrap();
    assert!(text.starts_with("bin,mu_lo,mu_hi,count"));
    assert!(text.contains("field,corr_u,corr_aleatoric,corr_epistemic,zero_variance"));

    let trace = p(&dir, "trace.csv");
    let ck = p(&dir, "policy.json");
    ok(&[
        "train-policy", "--input", s(&ann), "--objective", "udpo", "--weights", s(&weights),
        "--order", s(&plan), "--epochs", "5", "--trace", s(&trace), "--checkpoint", s(&ck),
    ]);
    let trace_text = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(trace_text.lines().count(), 6);
    assert!(trace_text.starts_with("epoch,loss\n1,"));
    assert!(std::fs::metadata(&ck).unwrap().len() > 0);
    assert_eq!(
        urm(&["train-policy", "--input", s(&ann), "--objective", "udpo"]).status.code(),
        Some(2)
    );
}

#[test]
fn class_conditioned_pipeline() {
    let dir = TempDir::new().unwrap();
    let (train, sft, scored, ann, w) = (
        p(&dir, "pairs.jsonl"),
        p(&dir, "sft.jsonl"),
        p(&dir, "scored.jsonl"),
        p(&dir, "ann.jsonl"),
        p(&dir, "w.jsonl"),
    );
    ok(&["gen-synth", "--output", s(&train), "--n-pairs", "300", "--n-prompts", "20"]);
    ok(&["gen-synth", "--output", s(&sft), "--n-pairs", "200", "--n-prompts", "20", "--sft", "--seed", "7"]);
    ok(&["train-proxy", "--input", s(&train), "--score", s(&sft), "--output", s(&scored), "--epochs", "5", "--mc-passes", "16"]);
    ok(&["annotate", "--input", s(&scored), "--output", s(&ann)]);
    ok(&["weights", "--input", s(&ann), "--mode", "ucpo", "--output", s(&w)]);
    let ws: Vec<Value> = std::fs::read_to_string(&w)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(ws.len(), 200);
    assert!(ws.iter().all(|v| v["ucpo_weight"].as_f64().unwrap() >= 0.1));
    for obj in ["crlft", "ucpo"] {
        ok(&["train-policy", "--input", s(&ann), "--objective", obj, "--weights", s(&w), "--epochs", "3"]);
    }
}

#[test]
fn oracle_reports_deviation() {
    let out = ok(&["oracle", "--n-draws", "20000", "--points", "0:1,-1:0.5"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(String::from_utf8(out.stderr).unwrap().contains("max deviation"));
}

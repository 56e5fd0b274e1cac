use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sdnc_core::experiment::{run_oracle, test_set, CorpusConfig};
use sdnc_core::pipeline::PipelineConfig;
use sdnc_core::SynthConfig;

const SMALL: &[&str] = &[
    "--set",
    "corpus.train_meetings=3",
    "--set",
    "corpus.test_meetings=3",
    "--set",
    "corpus.synth.num_segments=8",
];

fn sdnc(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdnc"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("SDNC_OUT")
        .output()
        .expect("binary runs")
}

fn error_json(o: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().last().expect("stderr has an error line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {line}"))
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let mut args = vec!["synth", "--seed", "7"];
    args.extend_from_slice(SMALL);
    assert!(sdnc(&a, &args).status.success());
    assert!(sdnc(&b, &args).status.success());
    let fa = files(&a);
    assert_eq!(fa, files(&b));
    assert!(fa.iter().any(|p| p.ends_with("split.json")));
    assert_eq!(fa.iter().filter(|p| p.extension().is_some_and(|e| e == "jsonl")).count(), 6);
    for p in &fa {
        assert_eq!(fs::read(a.join(p)).unwrap(), fs::read(b.join(p)).unwrap(), "{}", p.display());
    }
}

#[test]
fn scoring_reference_outputs_gives_zero_error() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = CorpusConfig {
        synth: SynthConfig {
            embed_noise_sigma: 0.0,
            overlap_prob: 0.0,
            num_segments: 8,
            ..Default::default()
        },
        train_meetings: 3,
        test_meetings: 3,
        ..Default::default()
    };
    let pcfg = PipelineConfig {
        sot_count_error_prob: 0.0,
        asr_sub_prob: 0.0,
        ..Default::default()
    };
    let outputs: Vec<_> = test_set(&corpus)
        .unwrap()
        .iter()
        .map(|d| run_oracle(d, &corpus, &pcfg).unwrap())
        .collect();
    let input = tmp.path().join("hyp");
    fs::create_dir_all(&input).unwrap();
    fs::write(input.join("outputs.json"), serde_json::to_string(&outputs).unwrap()).unwrap();

    let out = tmp.path().join("runs");
    let mut args = vec!["score", "--input", input.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend([
        "--set",
        "corpus.synth.embed_noise_sigma=0",
        "--set",
        "corpus.synth.overlap_prob=0",
        "--set",
        "pipeline.asr_sub_prob=0",
        "--set",
        "pipeline.sot_count_error_prob=0",
    ]);
    let o = sdnc(&out, &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    for metric in ["cpwer", "der", "wer"] {
        assert!(stdout.contains(&format!("{metric},0.000000")), "{stdout}");
    }
    let report = files(&out).into_iter().find(|p| p.ends_with("report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&fs::read(out.join(report)).unwrap()).unwrap();
    assert_eq!(v["meetings"].as_object().unwrap().len(), 3);
}

#[test]
fn missing_inputs_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        vec!["decode", "--mode", "parallel-sdnc"],
        vec!["synth", "--config", "/definitely/not/here.toml"],
        vec!["score", "--mode", "cascaded-sc"],
    ] {
        let o = sdnc(tmp.path(), &args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let e = error_json(&o);
        assert_eq!(e["error"]["kind"], "missing_input");
        assert_eq!(e["error"]["exit_code"], 2);
    }
}

#[test]
fn invalid_configs_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[corpus.synth]\nnum_speakers = \"four\"\n").unwrap();
    for args in [
        vec!["synth", "--set", "pipeline.asr_sub_prob=1.5"],
        vec!["synth", "--set", "corpus.no_such_key=1"],
        vec!["synth", "--set", "training.model.input_dim=8"],
        vec!["synth", "--config", bad.to_str().unwrap()],
        vec!["train", "--jobs", "0"],
    ] {
        let o = sdnc(tmp.path(), &args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert_eq!(error_json(&o)["error"]["kind"], "invalid_config", "{args:?}");
    }
}

#[test]
fn compare_refuses_reports_from_different_configs() {
    let tmp = tempfile::tempdir().unwrap();
    let report = |hash: &str| {
        serde_json::json!({"system": "x", "config_hash": hash, "meetings": {"m": {"cpwer": 0.1}}})
    };
    let (a, b) = (tmp.path().join("a.json"), tmp.path().join("b.json"));
    fs::write(&a, report("aaaa").to_string()).unwrap();
    fs::write(&b, report("bbbb").to_string()).unwrap();
    let o = sdnc(tmp.path(), &["compare", "--a", a.to_str().unwrap(), "--b", b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(error_json(&o)["error"]["message"].as_str().unwrap().contains("different configs"));
}

#[test]
fn selftest_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = sdnc(tmp.path(), &["selftest"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}");
    assert!(stdout.lines().count() >= 4);
    assert!(stdout.lines().all(|l| l.starts_with("PASS ")), "{stdout}");
}

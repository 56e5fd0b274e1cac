use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use sdnc_core::experiment::{meeting_data, par_map, run_system, test_set, train_two_stage, MeetingData};
use sdnc_core::io::{format_rttm, save_embeddings, save_meeting};
use sdnc_core::metrics::{reference_spans, write_report_csv};
use sdnc_core::pipeline::{compare, score_meeting, PipelineOutput, SystemReport};
use sdnc_core::sdnc::write_loss_csv;
use sdnc_core::{selftest, Mode, SdncModel};

use crate::config::ExperimentConfig;
use crate::{Cli, CliError, Command, Split};

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: &'a str,
    seed: Option<u64>,
    versions: BTreeMap<&'static str, &'static str>,
    outputs: Vec<String>,
    wall_clock_seconds: f64,
    config: &'a ExperimentConfig,
}

struct Run<'a> {
    cli: &'a Cli,
    cfg: ExperimentConfig,
    hash: String,
    root: PathBuf,
    started: Instant,
    jobs: usize,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn to_json<T: Serialize + ?Sized>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("output serializes") + "\n"
}

impl Run<'_> {
    fn stage(&self, name: &str) -> Result<PathBuf, CliError> {
        let dir = self.root.join(name);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(dir)
    }

    fn finish(&self, command: &str, dir: &Path, outputs: Vec<PathBuf>) -> Result<(), CliError> {
        let manifest = Manifest {
            command,
            config_hash: &self.hash,
            seed: self.cli.seed,
            versions: BTreeMap::from([("sdnc", env!("CARGO_PKG_VERSION"))]),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            config: &self.cfg,
        };
        write(&self.root.join("config.json"), &to_json(&self.cfg))?;
        write(&dir.join("manifest.json"), &to_json(&manifest))?;
        eprintln!("{command}: wrote {} ({:.1}s)", dir.display(), manifest.wall_clock_seconds);
        Ok(())
    }

    fn mode(&self, flag: Option<crate::ModeArg>) -> Mode {
        flag.map_or(self.cfg.pipeline.mode, Mode::from)
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    let hash = cfg.hash();
    let jobs = match cli.jobs {
        Some(0) => return Err(CliError::InvalidConfig("--jobs must be positive".into())),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let run = Run {
        cli,
        root: cli.out.join(&hash),
        cfg,
        hash,
        started: Instant::now(),
        jobs,
    };
    match &cli.command {
        Command::Synth { split } => synth(&run, *split),
        Command::Train => train(&run),
        Command::Decode { mode, checkpoint } => decode(&run, run.mode(*mode), checkpoint.as_deref()),
        Command::Score { mode, input } => score(&run, run.mode(*mode), input.as_deref()),
        Command::Compare { a, b } => compare_reports(&run, a, b),
        Command::Selftest => self_test(&run),
    }
}

fn synth(run: &Run, split: Split) -> Result<(), CliError> {
    let corpus = &run.cfg.corpus;
    let indices: Vec<u64> = match split {
        Split::All => corpus.train_indices().chain(corpus.test_indices()).collect(),
        Split::Train => corpus.train_indices().collect(),
        Split::Test => corpus.test_indices().collect(),
    };
    let dir = run.stage("synth")?;
    for sub in ["meetings", "embeddings", "rttm"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| io_err(&d, e))?;
    }
    let ids = par_map(&indices, run.jobs, |&i| {
        let d = meeting_data(corpus, i)?;
        let id = d.meeting.meeting_id.clone();
        save_meeting(&d.meeting, dir.join("meetings").join(format!("{id}.json")))?;
        save_embeddings(&d.seq, dir.join("embeddings").join(format!("{id}.jsonl")))?;
        let rttm = format_rttm(&id, &reference_spans(&d.meeting, None));
        let path = dir.join("rttm").join(format!("{id}.rttm"));
        fs::write(&path, rttm).map_err(|source| sdnc_core::Error::Io { path: path.clone(), source })?;
        Ok((i, id))
    })?;
    let is_train = |i: u64| corpus.train_indices().contains(&i);
    let split_json = serde_json::json!({
        "train": ids.iter().filter(|(i, _)| is_train(*i)).map(|(_, id)| id).collect::<Vec<_>>(),
        "test": ids.iter().filter(|(i, _)| !is_train(*i)).map(|(_, id)| id).collect::<Vec<_>>(),
    });
    let split_path = dir.join("split.json");
    write(&split_path, &to_json(&split_json))?;
    run.finish(
        "synth",
        &dir,
        vec![dir.join("meetings"), dir.join("embeddings"), dir.join("rttm"), split_path],
    )
}

fn train(run: &Run) -> Result<(), CliError> {
    let dir = run.stage("train")?;
    let mut tr = run.cfg.training.clone();
    tr.pretrain.checkpoint_dir = Some(dir.join("checkpoints"));
    tr.finetune.checkpoint_dir = Some(dir.join("checkpoints"));
    let (model, curve) = train_two_stage(&run.cfg.corpus, &tr)?;
    let loss = dir.join("loss.csv");
    write_loss_csv(&curve, &loss)?;
    let model_path = dir.join("model.ckpt");
    model.save(&model_path)?;
    for p in &curve {
        println!("{} epoch {} loss {:.4}", p.stage.as_str(), p.epoch, p.mean_loss);
    }
    run.finish("train", &dir, vec![dir.join("checkpoints"), loss, model_path])
}

fn find_checkpoint(run: &Run, flag: Option<&Path>) -> Result<PathBuf, CliError> {
    let path = flag
        .map(Path::to_path_buf)
        .or_else(|| run.cfg.pipeline.checkpoint.clone())
        .unwrap_or_else(|| run.root.join("train").join("model.ckpt"));
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::MissingInput(format!(
            "checkpoint {} not found; run `train` with the same config or pass --checkpoint",
            path.display()
        )))
    }
}

fn decode(run: &Run, mode: Mode, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let model = match mode {
        Mode::ParallelSdnc => Some(SdncModel::load(find_checkpoint(run, checkpoint)?)?),
        _ => None,
    };
    if let Some(m) = &model {
        if m.config.input_dim != run.cfg.corpus.synth.dim {
            return Err(CliError::InvalidConfig(format!(
                "checkpoint expects {}-dimensional embeddings, corpus has {}",
                m.config.input_dim, run.cfg.corpus.synth.dim
            )));
        }
    }
    let mut pc = run.cfg.pipeline.clone();
    pc.mode = mode;
    let data = test_set(&run.cfg.corpus)?;
    let outputs = par_map(&data, run.jobs, |d| run_system(d, model.as_ref(), &pc))?;

    let dir = run.stage(&format!("decode-{}", mode.as_str()))?;
    let rttm_dir = dir.join("rttm");
    fs::create_dir_all(&rttm_dir).map_err(|e| io_err(&rttm_dir, e))?;
    for o in &outputs {
        write(&rttm_dir.join(format!("{}.rttm", o.meeting_id)), &format_rttm(&o.meeting_id, &o.hyp_spans))?;
    }
    let out_path = dir.join("outputs.json");
    write(&out_path, &to_json(&outputs))?;
    let flagged: usize = outputs.iter().map(|o| o.flags.len()).sum();
    if flagged > 0 {
        eprintln!("decode: {flagged} segments flagged (see outputs.json)");
    }
    run.finish("decode", &dir, vec![out_path, rttm_dir])
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::MissingInput(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::InvalidConfig(format!("{}: {e}", path.display())))
}

fn score(run: &Run, mode: Mode, input: Option<&Path>) -> Result<(), CliError> {
    let input = input.map_or_else(|| run.root.join(format!("decode-{}", mode.as_str())), Path::to_path_buf);
    let outputs: Vec<PipelineOutput> = read_json(&input.join("outputs.json"))?;
    let system = outputs.first().map_or(mode, |o| o.mode);
    let data: BTreeMap<String, MeetingData> = test_set(&run.cfg.corpus)?
        .into_iter()
        .map(|d| (d.meeting.meeting_id.clone(), d))
        .collect();
    let scored = par_map(&outputs, run.jobs, |o| {
        let d = data.get(&o.meeting_id).ok_or_else(|| {
            sdnc_core::Error::Validation(format!("meeting {} is not in the configured test set", o.meeting_id))
        })?;
        Ok((o.meeting_id.clone(), score_meeting(&d.meeting, o, &run.cfg.pipeline.der)?))
    })?;
    let report = SystemReport {
        system: system.as_str().to_string(),
        config_hash: run.hash.clone(),
        meetings: scored.into_iter().collect(),
    };
    let dir = run.stage(&format!("score-{}", system.as_str()))?;
    let report_path = dir.join("report.json");
    write(&report_path, &to_json(&report))?;
    let csv_path = dir.join("scores.csv");
    write_report_csv(&report.rows(), &csv_path)?;

    let metrics: Vec<&String> = report.meetings.values().next().map(|s| s.keys().collect()).unwrap_or_default();
    println!("metric,mean");
    for m in metrics {
        let v = report.mean(m).map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"));
        println!("{m},{v}");
    }
    run.finish("score", &dir, vec![report_path, csv_path])
}

fn load_report(path: &Path) -> Result<SystemReport, CliError> {
    let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
    read_json(&file)
}

fn compare_reports(run: &Run, a: &Path, b: &Path) -> Result<(), CliError> {
    let (ra, rb) = (load_report(a)?, load_report(b)?);
    if ra.config_hash != rb.config_hash {
        return Err(CliError::InvalidConfig(format!(
            "reports come from different configs ({} vs {})",
            ra.config_hash, rb.config_hash
        )));
    }
    let cmp = compare(&ra, &rb)?;
    let dir = run.stage(&format!("compare-{}-vs-{}", ra.system, rb.system))?;
    let means = dir.join("comparison.csv");
    let per = dir.join("comparison_meetings.csv");
    write(&means, &cmp.means_csv())?;
    write(&per, &cmp.per_meeting_csv())?;
    print!("{}", cmp.means_csv());
    run.finish("compare", &dir, vec![means, per])
}

fn self_test(run: &Run) -> Result<(), CliError> {
    let checks = selftest::run_all();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let dir = run.stage("selftest")?;
    let path = dir.join("results.json");
    write(&path, &to_json(&checks))?;
    run.finish("selftest", &dir, vec![path])?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::SelftestFailed(format!("failed checks: {}", failed.join(", "))))
    }
}

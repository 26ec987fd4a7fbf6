//! Config-driven experiment commands behind the `dabwe` binary.
//!
//! Layout under `output_dir`:
//!
//! ```text
//! corpus/manifest.json, corpus/{A,B,C}/*.wav     synth-data
//! <run_id>/config.json                            train
//! <run_id>/work/<task>.{state.json,log.jsonl}     train
//! <run_id>/system/system.json + checkpoints       train
//! <run_id>/m_narrow_mic/                          train (indirect only)
//! <run_id>/report.json, trials.txt, scores*.txt   eval
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{evaluate_system, scores_to_text, EvalReport};
use crate::schemes::{
    apply_preprocessor, assemble_training_plan, inference_map, load_system, save_system, PlanSettings,
    SchemeSpec, TrainedSystem, STAGE1_TASK,
};
use crate::signals::{
    build_corpus, read_three_domain_corpus, read_wav, write_corpora, write_wav, CorpusConfig, DomainTag,
    ThreeDomainCorpus, Utterance, MANIFEST_FILE,
};
use crate::trainer::{train, RunOptions, UpdateRecord};

pub const CONFIG_FILE: &str = "config.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Utterances per speaker held out of training for evaluation.
    pub heldout_per_speaker: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { heldout_per_speaker: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusConfig,
    pub scheme: SchemeSpec,
    #[serde(default)]
    pub training: PlanSettings,
    #[serde(default)]
    pub eval: EvalConfig,
    /// Training and evaluation seed; `--seed` overrides it.
    #[serde(default)]
    pub seed: u64,
    /// Outer steps between state checkpoints (0: only at the end of a task).
    #[serde(default)]
    pub checkpoint_every: usize,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(bytes).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingArtifact(path.to_path_buf()))
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        Self::from_json(&bytes)
    }

    /// Checks the corpus, scheme and training settings.
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.scheme.validate()?;
        self.training.validate()
    }

    /// Checks that the held-out split leaves training data and enough
    /// evaluation utterances. Needed by `train` and `eval`, not `synth-data`.
    pub fn validate_split(&self) -> Result<()> {
        let per = self.eval.heldout_per_speaker;
        if per == 0 || per >= self.corpus.utts_per_speaker {
            return Err(Error::Config(format!(
                "heldout_per_speaker must lie in 1..{}, got {per}",
                self.corpus.utts_per_speaker
            )));
        }
        if self.corpus.n_speakers * per < crate::eval::MIN_PER_SIDE {
            return Err(Error::Config(format!(
                "the held-out split needs at least {} utterances per domain",
                crate::eval::MIN_PER_SIDE
            )));
        }
        Ok(())
    }

    /// First 12 hex digits of SHA-256 over the canonical JSON and the seed.
    /// The output directory is excluded, so moving a tree keeps its ids.
    pub fn run_id(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        value["output_dir"] = serde_json::Value::Null;
        let canonical = serde_json::to_vec(&value).expect("config serializes");
        let mut h = Sha256::new();
        h.update(&canonical);
        h.update(self.seed.to_le_bytes());
        hex::encode(h.finalize())[..12].to_string()
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.output_dir.join("corpus")
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.output_dir.join(run_id)
    }
}

/// Applies command-line overrides, then validates.
pub fn resolve_config(mut cfg: ExperimentConfig, seed: Option<u64>, output_dir: Option<PathBuf>) -> Result<ExperimentConfig> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = output_dir {
        cfg.output_dir = d;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_id_or_default(cfg: &ExperimentConfig, run_id: Option<&str>) -> Result<String> {
    match run_id {
        Some(id) if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') => {
            Err(Error::Config(format!("invalid run id `{id}`")))
        }
        Some(id) => Ok(id.to_string()),
        None => Ok(cfg.run_id()),
    }
}

fn load_corpus(cfg: &ExperimentConfig) -> Result<ThreeDomainCorpus> {
    read_three_domain_corpus(&cfg.corpus_dir().join(MANIFEST_FILE))
}

fn split(cfg: &ExperimentConfig, corpus: &ThreeDomainCorpus) -> (ThreeDomainCorpus, ThreeDomainCorpus) {
    corpus.split_heldout(cfg.eval.heldout_per_speaker)
}

/// Synthesizes the corpus and writes WAVs plus a manifest. Returns the
/// manifest path.
pub fn cmd_synth_data(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let corpus = build_corpus(&cfg.corpus)?;
    write_corpora(
        &cfg.corpus_dir(),
        &[&corpus.narrow_tel, &corpus.narrow_mic, &corpus.wide_mic],
    )
}

pub struct TrainOutcome {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub system: TrainedSystem,
}

/// Trains the configured scheme on the training split. Interrupted runs
/// resume from the state checkpoints in `<run>/work`; `stop_after` halts the
/// first unfinished task at that step with [`Error::Interrupted`].
pub fn cmd_train(
    cfg: &ExperimentConfig,
    run_id: Option<&str>,
    stop_after: Option<usize>,
    observer: &mut dyn FnMut(&UpdateRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    cfg.validate_split()?;
    let run_id = run_id_or_default(cfg, run_id)?;
    let corpus = load_corpus(cfg)?;
    let (train_split, _) = split(cfg, &corpus);
    let plan = assemble_training_plan(&cfg.scheme, &train_split, &cfg.training)?;
    let run_dir = cfg.run_dir(&run_id);
    fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let cfg_path = run_dir.join(CONFIG_FILE);
    fs::write(&cfg_path, serde_json::to_vec_pretty(cfg)?).map_err(|e| Error::io(&cfg_path, e))?;

    let opts = RunOptions {
        work_dir: Some(run_dir.join("work")),
        checkpoint_every: cfg.checkpoint_every,
        resume: true,
        stop_after,
    };
    let system = train(&plan, &train_split, cfg.seed, &opts, observer)?;
    save_system(&run_dir.join("system"), &system)?;

    if plan.tasks.iter().any(|t| t.name == STAGE1_TASK) {
        let m = system
            .mappings
            .get("G_B_to_A")
            .ok_or_else(|| Error::Plan("stage 1 produced no G_B_to_A".into()))?;
        let mapped = apply_preprocessor(m, &train_split.narrow_mic)?;
        write_corpora(&run_dir.join("m_narrow_mic"), &[&mapped])?;
    }
    Ok(TrainOutcome {
        run_id,
        run_dir,
        system,
    })
}

fn load_run_system(cfg: &ExperimentConfig, run_id: Option<&str>) -> Result<(PathBuf, TrainedSystem)> {
    let run_dir = cfg.run_dir(&run_id_or_default(cfg, run_id)?);
    let system = load_system(&run_dir.join("system"))?;
    Ok((run_dir, system))
}

/// Maps 8 kHz telephone WAVs to 16 kHz, writing `<dest>/<file name>` for
/// each input. Every file is processed independently.
pub fn cmd_infer(cfg: &ExperimentConfig, run_id: Option<&str>, inputs: &[PathBuf], dest: &Path) -> Result<Vec<PathBuf>> {
    let (_, system) = load_run_system(cfg, run_id)?;
    let mut outputs = Vec::with_capacity(inputs.len());
    for input in inputs {
        if !input.exists() {
            return Err(Error::MissingArtifact(input.clone()));
        }
        let name = input
            .file_name()
            .ok_or_else(|| Error::invalid(format!("{} is not a file", input.display())))?;
        let utt = Utterance {
            waveform: read_wav(input)?,
            domain: DomainTag::A_NarrowTel,
            speaker_id: String::new(),
            utterance_id: name.to_string_lossy().into_owned(),
            pairing_key: None,
        };
        let out = inference_map(&system, &utt)?;
        let path = dest.join(name);
        write_wav(&path, &out)?;
        outputs.push(path);
    }
    Ok(outputs)
}

/// Evaluates a trained run on the held-out split and writes the report,
/// the trial list and both score files into the run directory.
pub fn cmd_eval(cfg: &ExperimentConfig, run_id: Option<&str>) -> Result<EvalReport> {
    cfg.validate()?;
    cfg.validate_split()?;
    let (run_dir, system) = load_run_system(cfg, run_id)?;
    let corpus = load_corpus(cfg)?;
    let (_, heldout) = split(cfg, &corpus);
    let mut evaluation = evaluate_system(&system, &heldout, cfg.seed)?;
    evaluation.report.label = cfg.scheme.label();
    let files = [
        (REPORT_FILE, serde_json::to_string_pretty(&evaluation.report)?),
        ("trials.txt", evaluation.trials.to_text()),
        ("scores.txt", scores_to_text(&evaluation.trials, &evaluation.scores)),
        (
            "scores_baseline.txt",
            scores_to_text(&evaluation.trials, &evaluation.baseline_scores),
        ),
    ];
    for (name, text) in files {
        let path = run_dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(evaluation.report)
}

/// Markdown comparison table of several reports, one row per report, with
/// the naive-upsampling baseline of the first report as the leading row.
pub fn cmd_report(paths: &[PathBuf]) -> Result<String> {
    if paths.is_empty() {
        return Err(Error::invalid("report needs at least one report JSON"));
    }
    let mut reports = Vec::with_capacity(paths.len());
    for p in paths {
        let bytes = match fs::read(p) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingArtifact(p.clone())),
            Err(e) => return Err(Error::io(p, e)),
        };
        reports.push(EvalReport::from_json(&bytes)?);
    }
    let mut out = String::new();
    let _ = writeln!(out, "| System | EER (%) | minDCF | LSD (dB) | Domain AUC |");
    let _ = writeln!(out, "|---|---:|---:|---:|---:|");
    let b = &reports[0].baseline;
    let _ = writeln!(
        out,
        "| upsampling only | {:.2} | {:.3} | {:.2} | {:.3} |",
        b.eer_percent, b.min_dcf, b.lsd_db, b.domain_auc
    );
    for r in &reports {
        let m = &r.system;
        let _ = writeln!(
            out,
            "| {} | {:.2} | {:.3} | {:.2} | {:.3} |",
            r.label, m.eer_percent, m.min_dcf, m.lsd_db, m.domain_auc
        );
    }
    Ok(out)
}

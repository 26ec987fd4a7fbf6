//! Alternating Adam training: every outer step performs two generator updates
//! followed by one critic update, each on a freshly sampled batch.
//!
//! All randomness is keyed by `(seed, task, step, update)`, so a run resumed
//! from a [`TrainState`] checkpoint follows the uninterrupted trajectory bit
//! for bit.

mod data;
mod optim;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use data::{pairing_map, TaskData};
pub use optim::{
    lr_schedule, lr_schedule_to, AdamMoments, OptimizerConfig, DEFAULT_SEGMENT, DEFAULT_TOTAL_STEPS, FINAL_LR,
};

use crate::error::{Error, Result};
use crate::losses::{ModelSet, Side};
use crate::models::{load_checkpoint, save_checkpoint, DiscriminatorConfig, GeneratorConfig, MappingModel};
use crate::schemes::{resolve_corpus, TrainedSystem, TrainingPlan, TrainingTask, STAGE1_TASK};
use crate::seeds::{derive_seed, name_key, rng_for};
use crate::signals::{DomainCorpus, DomainTag, ThreeDomainCorpus};

pub const STATE_KIND: &str = "train_state";

/// Position of an update within its outer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Update {
    G1,
    G2,
    D,
}

impl Update {
    pub const CYCLE: [Update; 3] = [Update::G1, Update::G2, Update::D];

    pub fn side(self) -> Side {
        match self {
            Update::G1 | Update::G2 => Side::Generators,
            Update::D => Side::Critics,
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

/// Everything needed to continue a task exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub task: String,
    pub seed: u64,
    /// Completed outer steps.
    pub step: usize,
    pub models: ModelSet,
    pub adam: BTreeMap<String, AdamMoments>,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub task: String,
    pub step: usize,
    pub update: Update,
    pub lr: f64,
    pub losses: BTreeMap<String, f64>,
}

fn seeded_generator(cfg: &GeneratorConfig, seed: u64, task: &str) -> GeneratorConfig {
    GeneratorConfig {
        parameter_seed: derive_seed(seed, &[name_key(task), cfg.parameter_seed]),
        ..cfg.clone()
    }
}

fn seeded_critic(cfg: &DiscriminatorConfig, seed: u64, task: &str) -> DiscriminatorConfig {
    DiscriminatorConfig {
        parameter_seed: derive_seed(seed, &[name_key(task), cfg.parameter_seed]),
        ..cfg.clone()
    }
}

impl TrainState {
    /// Freshly initialized models and zeroed moments for `task`.
    pub fn new(task: &TrainingTask, seed: u64) -> Result<Self> {
        let models = ModelSet::for_objective(
            &task.objective,
            &seeded_generator(&task.generator, seed, &task.name),
            &seeded_critic(&task.critic, seed, &task.name),
        )?;
        let adam = models
            .generators
            .iter()
            .map(|(k, m)| (k.clone(), AdamMoments::new(m.parameters.len())))
            .chain(
                models
                    .critics
                    .iter()
                    .map(|(k, m)| (k.clone(), AdamMoments::new(m.parameters.len()))),
            )
            .collect();
        Ok(Self {
            task: task.name.clone(),
            seed,
            step: 0,
            models,
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, STATE_KIND, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_checkpoint(path, STATE_KIND)
    }

    fn apply_update(&mut self, task: &TrainingTask, data: &TaskData, update: Update) -> Result<UpdateRecord> {
        let opt = &task.optimizer;
        let step = self.step;
        let mut rng = rng_for(self.seed, &[name_key(&task.name), step as u64, update.index()]);
        let batch = data.sample(&task.objective, opt.batch_size, opt.segment_length_samples, &mut rng)?;
        let side = update.side();
        let (breakdown, grads) = task.objective.gradients(&self.models, &batch, &task.weights, side)?;
        let non_finite = |detail: String| Error::NonFinite {
            task: task.name.clone(),
            step,
            detail,
        };
        if !breakdown.is_finite() {
            return Err(non_finite(format!("{update:?} losses {:?}", breakdown.to_map())));
        }
        if let Some(name) = grads.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())).map(|(k, _)| k) {
            return Err(non_finite(format!("{update:?} gradient of {name}")));
        }
        let lr = match side {
            Side::Generators => opt.lr_g(step)?,
            Side::Critics => opt.lr_d(step)?,
        };
        for (name, grad) in &grads {
            let params = self
                .models
                .params_mut(name)
                .ok_or_else(|| Error::invalid(format!("no parameters named {name}")))?;
            let moments = self
                .adam
                .get_mut(name)
                .ok_or_else(|| Error::invalid(format!("no optimizer state for {name}")))?;
            moments.step(params, grad, lr, opt)?;
        }
        Ok(UpdateRecord {
            task: task.name.clone(),
            step,
            update,
            lr,
            losses: breakdown.to_map(),
        })
    }

    /// Runs outer steps until `until` (at most the task's total) and reports
    /// every update to `observer`.
    pub fn run(
        &mut self,
        task: &TrainingTask,
        data: &TaskData,
        until: usize,
        observer: &mut dyn FnMut(&UpdateRecord) -> Result<()>,
    ) -> Result<()> {
        if self.task != task.name {
            return Err(Error::invalid(format!(
                "state belongs to task `{}`, not `{}`",
                self.task, task.name
            )));
        }
        let until = until.min(task.optimizer.total_steps);
        while self.step < until {
            for update in Update::CYCLE {
                let record = self.apply_update(task, data, update)?;
                observer(&record)?;
            }
            self.step += 1;
        }
        Ok(())
    }

    pub fn is_complete(&self, task: &TrainingTask) -> bool {
        self.step >= task.optimizer.total_steps
    }
}

/// Materializes every role corpus of `task`.
pub fn task_corpora(
    task: &TrainingTask,
    corpora: &ThreeDomainCorpus,
    preprocessor: Option<&MappingModel>,
) -> Result<BTreeMap<DomainTag, DomainCorpus>> {
    task.corpora
        .iter()
        .map(|(role, expr)| Ok((*role, resolve_corpus(expr, *role, corpora, preprocessor)?)))
        .collect()
}

/// Where and how often a run persists its state.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory for per-task state checkpoints and JSON-lines logs.
    pub work_dir: Option<PathBuf>,
    /// Save a state checkpoint every this many outer steps (0: only at the end).
    pub checkpoint_every: usize,
    /// Continue from existing state checkpoints in `work_dir`.
    pub resume: bool,
    /// Stop after this many outer steps of the first unfinished task; `train`
    /// then reports [`Error::Interrupted`].
    pub stop_after: Option<usize>,
}

pub fn state_path(dir: &Path, task: &str) -> PathBuf {
    dir.join(format!("{task}.state.json"))
}

pub fn log_path(dir: &Path, task: &str) -> PathBuf {
    dir.join(format!("{task}.log.jsonl"))
}

fn open_log(path: &Path, keep_before: usize) -> Result<BufWriter<fs::File>> {
    let mut kept = Vec::new();
    if keep_before > 0 {
        if let Ok(f) = fs::File::open(path) {
            for line in BufReader::new(f).lines() {
                let line = line.map_err(|e| Error::io(path, e))?;
                let rec: UpdateRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
                    what: "training log",
                    reason: e.to_string(),
                })?;
                if rec.step < keep_before {
                    kept.push(line);
                }
            }
        }
    }
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for line in kept {
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(w)
}

/// Trains one task to completion (or `opts.stop_after`), returning its state.
pub fn train_task(
    task: &TrainingTask,
    corpora: &BTreeMap<DomainTag, DomainCorpus>,
    seed: u64,
    opts: &RunOptions,
    observer: &mut dyn FnMut(&UpdateRecord),
) -> Result<TrainState> {
    let data = TaskData::prepare(&task.objective, corpora)?;
    let existing = match (&opts.work_dir, opts.resume) {
        (Some(dir), true) => match TrainState::load(&state_path(dir, &task.name)) {
            Ok(s) => Some(s),
            Err(Error::MissingArtifact(_)) => None,
            Err(e) => return Err(e),
        },
        _ => None,
    };
    let mut state = match existing {
        Some(s) if s.seed == seed => s,
        Some(s) => {
            return Err(Error::invalid(format!(
                "checkpoint of `{}` was made with seed {}, not {seed}",
                task.name, s.seed
            )))
        }
        None => TrainState::new(task, seed)?,
    };
    let mut log = match &opts.work_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some((log_path(dir, &task.name), open_log(&log_path(dir, &task.name), state.step)?))
        }
        None => None,
    };
    let until = opts.stop_after.unwrap_or(usize::MAX).min(task.optimizer.total_steps);
    let every = if opts.checkpoint_every == 0 {
        usize::MAX
    } else {
        opts.checkpoint_every
    };
    while state.step < until {
        let next = (state.step + every - state.step % every).min(until);
        let snapshot = opts.work_dir.as_ref().map(|_| state.clone());
        let result = state.run(task, &data, next, &mut |rec| {
            observer(rec);
            if let Some((path, w)) = log.as_mut() {
                serde_json::to_writer(&mut *w, rec)?;
                writeln!(w).map_err(|e| Error::io(path.as_path(), e))?;
            }
            Ok(())
        });
        if let Err(e) = result {
            if let (Error::NonFinite { .. }, Some(dir), Some(s)) = (&e, &opts.work_dir, snapshot) {
                log::error!("{e}; writing a diagnostic snapshot");
                s.save(&dir.join(format!("{}.nonfinite.json", task.name)))?;
            }
            return Err(e);
        }
        if let Some(dir) = &opts.work_dir {
            state.save(&state_path(dir, &task.name))?;
        }
    }
    if let Some((path, mut w)) = log {
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(state)
}

/// Runs every task of `plan` in order and assembles the trained system.
pub fn train(
    plan: &TrainingPlan,
    corpora: &ThreeDomainCorpus,
    seed: u64,
    opts: &RunOptions,
    observer: &mut dyn FnMut(&UpdateRecord),
) -> Result<TrainedSystem> {
    plan.validate(corpora)?;
    let mut mappings: BTreeMap<String, MappingModel> = BTreeMap::new();
    let mut preprocessor: Option<MappingModel> = None;
    for task in &plan.tasks {
        let inputs = task_corpora(task, corpora, preprocessor.as_ref())?;
        let state = train_task(task, &inputs, seed, opts, observer)?;
        if !state.is_complete(task) {
            return Err(Error::Interrupted {
                task: task.name.clone(),
                step: state.step,
            });
        }
        if task.name == STAGE1_TASK {
            preprocessor = Some(state.models.generator(DomainTag::B_NarrowMic, DomainTag::A_NarrowTel)?.clone());
        }
        for (name, model) in state.models.generators {
            if mappings.insert(name.clone(), model).is_some() {
                return Err(Error::Plan(format!("mapping {name} is trained by two tasks")));
            }
        }
    }
    let system = TrainedSystem {
        mappings,
        inference_path: plan.inference_path.clone(),
    };
    system.validate()?;
    Ok(system)
}

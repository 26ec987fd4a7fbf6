//! Scheme taxonomy, training-plan assembly and inference pipelines.
//!
//! A [`SchemeSpec`] names one of the direct schemes (implicit-unassisted,
//! implicit-assisted, explicit-disjoint, explicit-joint) or the two-stage
//! indirect scheme. [`assemble_training_plan`] turns it into an ordered list of
//! [`TrainingTask`]s whose inputs are [`CorpusExpr`]s over the three domains.

mod system;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use system::{inference_map, load_system, save_system, TrainedSystem, SYSTEM_FILE};

use crate::error::{Error, Result};
use crate::losses::{LossWeights, Objective};
use crate::models::{DiscriminatorConfig, GeneratorConfig, MappingModel};
use crate::signals::DomainTag::{self, A_NarrowTel as A, B_NarrowMic as B, C_WideMic as C};
use crate::signals::{lowpass_downsample, to_model_rate, DomainCorpus, ThreeDomainCorpus, Utterance};
use crate::trainer::OptimizerConfig;

/// Generator family of a single-model task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "CGAN")]
    Cgan,
    #[serde(rename = "CycleGAN")]
    CycleGan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JointVariant {
    #[serde(rename = "CycleGAN+CGAN")]
    CycleGanCgan,
    #[serde(rename = "CycleGAN+CycleGAN")]
    CycleGanCycleGan,
}

/// Members of the indirect scheme's stage-2 source pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMember {
    /// Narrowband microphone speech passed through the stage-1 generator.
    MNarrowMic,
    NarrowMic,
    NarrowTel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchemeSpec {
    ImplicitUnassisted,
    ImplicitAssisted,
    ExplicitDisjoint {
        bwe_model: ModelKind,
    },
    ExplicitJoint {
        joint_variant: JointVariant,
    },
    Indirect {
        stage2_pool: BTreeSet<PoolMember>,
        stage2_model: ModelKind,
    },
}

impl SchemeSpec {
    pub fn indirect(pool: &[PoolMember], stage2_model: ModelKind) -> Self {
        SchemeSpec::Indirect {
            stage2_pool: pool.iter().copied().collect(),
            stage2_model,
        }
    }

    /// The six direct configurations, in table order.
    pub fn direct_variants() -> Vec<SchemeSpec> {
        vec![
            SchemeSpec::ImplicitUnassisted,
            SchemeSpec::ImplicitAssisted,
            SchemeSpec::ExplicitDisjoint {
                bwe_model: ModelKind::Cgan,
            },
            SchemeSpec::ExplicitDisjoint {
                bwe_model: ModelKind::CycleGan,
            },
            SchemeSpec::ExplicitJoint {
                joint_variant: JointVariant::CycleGanCgan,
            },
            SchemeSpec::ExplicitJoint {
                joint_variant: JointVariant::CycleGanCycleGan,
            },
        ]
    }

    /// The four stage-2 pools with their stage-2 models.
    pub fn indirect_variants() -> Vec<SchemeSpec> {
        use PoolMember::*;
        vec![
            SchemeSpec::indirect(&[MNarrowMic], ModelKind::Cgan),
            SchemeSpec::indirect(&[MNarrowMic, NarrowMic], ModelKind::Cgan),
            SchemeSpec::indirect(&[MNarrowMic, NarrowTel], ModelKind::CycleGan),
            SchemeSpec::indirect(&[MNarrowMic, NarrowTel, NarrowMic], ModelKind::CycleGan),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if let SchemeSpec::Indirect {
            stage2_pool,
            stage2_model,
        } = self
        {
            if stage2_pool.is_empty() {
                return Err(Error::Plan("stage-2 source pool is empty".into()));
            }
            if !stage2_pool.contains(&PoolMember::MNarrowMic) {
                return Err(Error::Plan("stage-2 source pool must contain M(narrow_mic)".into()));
            }
            if stage2_pool.contains(&PoolMember::NarrowTel) && *stage2_model != ModelKind::CycleGan {
                return Err(Error::Plan(
                    "narrow_tel in the stage-2 pool is unpaired and requires a CycleGAN stage-2 model".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let model = |m: &ModelKind| match m {
            ModelKind::Cgan => "CGAN",
            ModelKind::CycleGan => "CycleGAN",
        };
        match self {
            SchemeSpec::ImplicitUnassisted => "implicit-unassisted".into(),
            SchemeSpec::ImplicitAssisted => "implicit-assisted".into(),
            SchemeSpec::ExplicitDisjoint { bwe_model } => format!("explicit-disjoint CycleGAN+{}", model(bwe_model)),
            SchemeSpec::ExplicitJoint { joint_variant } => match joint_variant {
                JointVariant::CycleGanCgan => "explicit-joint CycleGAN+CGAN".into(),
                JointVariant::CycleGanCycleGan => "explicit-joint CycleGAN+CycleGAN".into(),
            },
            SchemeSpec::Indirect {
                stage2_pool,
                stage2_model,
            } => {
                let names: Vec<&str> = stage2_pool
                    .iter()
                    .map(|m| match m {
                        PoolMember::MNarrowMic => "M(narrow_mic)",
                        PoolMember::NarrowMic => "narrow_mic",
                        PoolMember::NarrowTel => "narrow_tel",
                    })
                    .collect();
                format!("indirect [{}] {}", names.join(" + "), model(stage2_model))
            }
        }
    }
}

/// How a task's per-domain training corpus is obtained.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusExpr {
    Domain(DomainTag),
    /// Concatenation of several domain corpora, sampled uniformly.
    Union(Vec<DomainTag>),
    /// Indirect stage-2 source; needs the stage-1 preprocessor `M`.
    Stage2Pool(BTreeSet<PoolMember>),
}

impl CorpusExpr {
    fn is_pairable_with_wide_mic(&self) -> bool {
        match self {
            CorpusExpr::Domain(d) => *d == B,
            CorpusExpr::Union(_) => false,
            CorpusExpr::Stage2Pool(pool) => !pool.contains(&PoolMember::NarrowTel),
        }
    }
}

/// Model and optimizer settings used when assembling plans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSettings {
    pub generator: GeneratorConfig,
    pub supervised_critic: DiscriminatorConfig,
    pub unsupervised_critic: DiscriminatorConfig,
    pub cgan_optimizer: OptimizerConfig,
    pub cyclegan_optimizer: OptimizerConfig,
    pub weights: LossWeights,
}

impl Default for PlanSettings {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            supervised_critic: DiscriminatorConfig::supervised(),
            unsupervised_critic: DiscriminatorConfig::unsupervised(),
            cgan_optimizer: OptimizerConfig::cgan(),
            cyclegan_optimizer: OptimizerConfig::cyclegan(),
            weights: LossWeights::default(),
        }
    }
}

impl PlanSettings {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.supervised_critic.validate()?;
        self.unsupervised_critic.validate()?;
        self.cgan_optimizer.validate()?;
        self.cyclegan_optimizer.validate()?;
        self.weights.validate()?;
        for opt in [&self.cgan_optimizer, &self.cyclegan_optimizer] {
            self.generator.check_segment(opt.segment_length_samples)?;
            for critic in [&self.supervised_critic, &self.unsupervised_critic] {
                if critic.min_input_len() > opt.segment_length_samples {
                    return Err(Error::Config(format!(
                        "segment length {} is shorter than the critic minimum {}",
                        opt.segment_length_samples,
                        critic.min_input_len()
                    )));
                }
            }
        }
        Ok(())
    }

    fn task(&self, name: &str, objective: Objective, corpora: BTreeMap<DomainTag, CorpusExpr>) -> TrainingTask {
        let supervised = objective.is_supervised();
        TrainingTask {
            name: name.to_string(),
            objective,
            generator: self.generator.clone(),
            critic: if supervised {
                self.supervised_critic.clone()
            } else {
                self.unsupervised_critic.clone()
            },
            optimizer: if supervised {
                self.cgan_optimizer.clone()
            } else {
                self.cyclegan_optimizer.clone()
            },
            weights: self.weights,
            paired: objective.paired_roles().is_some(),
            corpora,
            depends_on: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTask {
    pub name: String,
    pub objective: Objective,
    pub generator: GeneratorConfig,
    pub critic: DiscriminatorConfig,
    pub optimizer: OptimizerConfig,
    pub weights: LossWeights,
    /// Corpus feeding each domain role of the objective.
    pub corpora: BTreeMap<DomainTag, CorpusExpr>,
    pub paired: bool,
    /// Names of earlier tasks whose outputs this task consumes.
    pub depends_on: Vec<String>,
}

impl TrainingTask {
    fn roles(&self) -> BTreeSet<DomainTag> {
        let mut roles: BTreeSet<DomainTag> = self.objective.unpaired_domains().into_iter().collect();
        if let Some((s, t)) = self.objective.paired_roles() {
            roles.insert(s);
            roles.insert(t);
        }
        roles
    }
}

/// Ordered training tasks plus the inference composition of their results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub scheme: SchemeSpec,
    pub tasks: Vec<TrainingTask>,
    pub inference_path: Vec<String>,
}

impl TrainingPlan {
    /// Plan soundness against the given corpora.
    pub fn validate(&self, corpora: &ThreeDomainCorpus) -> Result<()> {
        self.scheme.validate()?;
        let mut seen = BTreeSet::new();
        let mut produced = BTreeSet::new();
        for task in &self.tasks {
            task.objective.validate()?;
            task.generator.validate()?;
            task.critic.validate()?;
            task.optimizer.validate()?;
            task.weights.validate()?;
            task.generator.check_segment(task.optimizer.segment_length_samples)?;
            for dep in &task.depends_on {
                if !seen.contains(dep.as_str()) {
                    return Err(Error::Plan(format!(
                        "task `{}` depends on `{dep}`, which is not an earlier task",
                        task.name
                    )));
                }
            }
            if !seen.insert(task.name.as_str()) {
                return Err(Error::Plan(format!("duplicate task name `{}`", task.name)));
            }
            let roles = task.roles();
            let given: BTreeSet<DomainTag> = task.corpora.keys().copied().collect();
            if roles != given {
                return Err(Error::Plan(format!(
                    "task `{}` supplies corpora for {given:?} but its objective needs {roles:?}",
                    task.name
                )));
            }
            if task.paired != task.objective.paired_roles().is_some() {
                return Err(Error::Plan(format!(
                    "task `{}` paired flag disagrees with its {} objective",
                    task.name,
                    task.objective.name()
                )));
            }
            for expr in task.corpora.values() {
                if matches!(expr, CorpusExpr::Stage2Pool(_)) && task.depends_on.is_empty() {
                    return Err(Error::Plan(format!(
                        "task `{}` uses the stage-2 pool without depending on stage 1",
                        task.name
                    )));
                }
            }
            if let Some((s, t)) = task.objective.paired_roles() {
                let (src, tgt) = (&task.corpora[&s], &task.corpora[&t]);
                if *tgt != CorpusExpr::Domain(C) || !src.is_pairable_with_wide_mic() {
                    return Err(Error::Unpaired(format!(
                        "{} task `{}` needs a source corpus paired with wide_mic, got {src:?} -> {tgt:?}",
                        task.objective.name(),
                        task.name
                    )));
                }
                corpora.narrow_mic.pairing_bijection(&corpora.wide_mic)?;
            }
            for (src, tgt) in task.objective.generator_roles() {
                produced.insert(format!("G_{}_to_{}", src.letter(), tgt.letter()));
            }
        }
        let mut domain = A;
        for name in &self.inference_path {
            if !produced.contains(name) {
                return Err(Error::Plan(format!("inference mapping {name} is not trained by any task")));
            }
            let expected = format!("G_{}_to_", domain.letter());
            let Some(rest) = name.strip_prefix(&expected) else {
                return Err(Error::Plan(format!("inference path breaks at {name}: input is {domain}")));
            };
            domain = match rest {
                "A" => A,
                "B" => B,
                "C" => C,
                _ => return Err(Error::Plan(format!("unknown mapping {name}"))),
            };
        }
        if domain != C || self.inference_path.is_empty() {
            return Err(Error::Plan("inference path must lead from A to C".into()));
        }
        Ok(())
    }
}

fn roles(pairs: &[(DomainTag, CorpusExpr)]) -> BTreeMap<DomainTag, CorpusExpr> {
    pairs.iter().cloned().collect()
}

/// Name of the indirect scheme's first task.
pub const STAGE1_TASK: &str = "stage1";

pub fn assemble_training_plan(
    scheme: &SchemeSpec,
    corpora: &ThreeDomainCorpus,
    settings: &PlanSettings,
) -> Result<TrainingPlan> {
    scheme.validate()?;
    settings.validate()?;
    let dom = CorpusExpr::Domain;
    let (tasks, path) = match scheme {
        SchemeSpec::ImplicitUnassisted => (
            vec![settings.task(
                "implicit",
                Objective::CycleGan { x: A, y: C },
                roles(&[(A, dom(A)), (C, dom(C))]),
            )],
            vec!["G_A_to_C"],
        ),
        SchemeSpec::ImplicitAssisted => (
            vec![settings.task(
                "implicit",
                Objective::CycleGan { x: A, y: C },
                roles(&[(A, CorpusExpr::Union(vec![A, B])), (C, dom(C))]),
            )],
            vec!["G_A_to_C"],
        ),
        SchemeSpec::ExplicitDisjoint { bwe_model } => {
            let da = settings.task("da", Objective::CycleGan { x: A, y: B }, roles(&[(A, dom(A)), (B, dom(B))]));
            let bwe_objective = match bwe_model {
                ModelKind::Cgan => Objective::Cgan { source: B, target: C },
                ModelKind::CycleGan => Objective::CycleGan { x: B, y: C },
            };
            let bwe = settings.task("bwe", bwe_objective, roles(&[(B, dom(B)), (C, dom(C))]));
            (vec![da, bwe], vec!["G_A_to_B", "G_B_to_C"])
        }
        SchemeSpec::ExplicitJoint { joint_variant } => {
            let objective = match joint_variant {
                JointVariant::CycleGanCgan => Objective::JointCgan,
                JointVariant::CycleGanCycleGan => Objective::JointCycleGan,
            };
            (
                vec![settings.task("joint", objective, roles(&[(A, dom(A)), (B, dom(B)), (C, dom(C))]))],
                vec!["G_A_to_B", "G_B_to_C"],
            )
        }
        SchemeSpec::Indirect {
            stage2_pool,
            stage2_model,
        } => {
            let stage1 = settings.task(
                STAGE1_TASK,
                Objective::CycleGan { x: B, y: A },
                roles(&[(B, dom(B)), (A, dom(A))]),
            );
            let objective = match stage2_model {
                ModelKind::Cgan => Objective::Cgan { source: A, target: C },
                ModelKind::CycleGan => Objective::CycleGan { x: A, y: C },
            };
            let mut stage2 = settings.task(
                "stage2",
                objective,
                roles(&[(A, CorpusExpr::Stage2Pool(stage2_pool.clone())), (C, dom(C))]),
            );
            stage2.depends_on.push(STAGE1_TASK.to_string());
            (vec![stage1, stage2], vec!["G_A_to_C"])
        }
    };
    let plan = TrainingPlan {
        scheme: scheme.clone(),
        tasks,
        inference_path: path.into_iter().map(String::from).collect(),
    };
    plan.validate(corpora)?;
    Ok(plan)
}

/// `M` applied to every utterance of a narrowband corpus: upsample, map,
/// decimate back to 8 kHz. Speaker and pairing metadata pass through; ids get
/// an `M:` prefix so the result can be pooled with its input.
pub fn apply_preprocessor(m: &MappingModel, corpus: &DomainCorpus) -> Result<DomainCorpus> {
    if m.source_domain != corpus.domain {
        return Err(Error::Domain {
            expected: m.source_domain.to_string(),
            found: corpus.domain.to_string(),
        });
    }
    let utterances = corpus
        .utterances
        .iter()
        .map(|u| {
            let mapped = m.map_waveform(&to_model_rate(&u.waveform)?)?;
            let waveform = if u.waveform.sample_rate_hz() == mapped.sample_rate_hz() {
                mapped
            } else {
                lowpass_downsample(&mapped)?
            };
            Ok(Utterance {
                waveform,
                domain: u.domain,
                speaker_id: u.speaker_id.clone(),
                utterance_id: format!("M:{}", u.utterance_id),
                pairing_key: u.pairing_key.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DomainCorpus {
        domain: corpus.domain,
        utterances,
        paired_with: corpus.paired_with,
    })
}

/// Union of corpora re-tagged as `role`. Pairing keys are kept; the result
/// counts as paired with wide_mic only if every member is.
pub fn pool_corpora(role: DomainTag, members: &[&DomainCorpus]) -> Result<DomainCorpus> {
    if members.is_empty() {
        return Err(Error::Plan("empty corpus pool".into()));
    }
    let mut ids = BTreeSet::new();
    let mut utterances = Vec::new();
    for c in members {
        for u in &c.utterances {
            if !ids.insert(u.utterance_id.clone()) {
                return Err(Error::invalid(format!("utterance id {} occurs twice in a pool", u.utterance_id)));
            }
            utterances.push(Utterance {
                domain: role,
                ..u.clone()
            });
        }
    }
    let paired = members.iter().all(|c| c.paired_with == Some(C));
    Ok(DomainCorpus {
        domain: role,
        utterances,
        paired_with: paired.then_some(C),
    })
}

/// Stage-2 source corpus of the indirect scheme, tagged as the A role.
pub fn stage2_build_source(
    m: &MappingModel,
    corpora: &ThreeDomainCorpus,
    pool: &BTreeSet<PoolMember>,
) -> Result<DomainCorpus> {
    if pool.is_empty() {
        return Err(Error::Plan("stage-2 source pool is empty".into()));
    }
    if !pool.contains(&PoolMember::MNarrowMic) {
        return Err(Error::Plan("stage-2 source pool must contain M(narrow_mic)".into()));
    }
    let mapped = apply_preprocessor(m, &corpora.narrow_mic)?;
    let members: Vec<&DomainCorpus> = pool
        .iter()
        .map(|p| match p {
            PoolMember::MNarrowMic => &mapped,
            PoolMember::NarrowMic => &corpora.narrow_mic,
            PoolMember::NarrowTel => &corpora.narrow_tel,
        })
        .collect();
    pool_corpora(A, &members)
}

/// Materializes a corpus expression. `preprocessor` is the stage-1 `M`,
/// required only for [`CorpusExpr::Stage2Pool`].
pub fn resolve_corpus(
    expr: &CorpusExpr,
    role: DomainTag,
    corpora: &ThreeDomainCorpus,
    preprocessor: Option<&MappingModel>,
) -> Result<DomainCorpus> {
    match expr {
        CorpusExpr::Domain(d) => {
            let c = corpora.get(*d);
            if *d == role {
                Ok(c.clone())
            } else {
                pool_corpora(role, &[c])
            }
        }
        CorpusExpr::Union(domains) => {
            let members: Vec<&DomainCorpus> = domains.iter().map(|d| corpora.get(*d)).collect();
            pool_corpora(role, &members)
        }
        CorpusExpr::Stage2Pool(pool) => {
            let m = preprocessor.ok_or_else(|| Error::Plan("stage-2 pool needs the stage-1 generator".into()))?;
            stage2_build_source(m, corpora, pool)
        }
    }
}

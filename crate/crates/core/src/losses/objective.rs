use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{
    l1_distance, lsgan_critic, lsgan_fake_only, lsgan_generator, supervised, LossBreakdown, LossTerm, LossWeights,
    Party, Rows,
};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::models::{
    batch_tensor, build_discriminator, build_generator, DiscriminatorConfig, GeneratorConfig, MappingModel,
    ScoreModel,
};
use crate::signals::DomainTag::{self, A_NarrowTel as A, B_NarrowMic as B, C_WideMic as C};

/// Which side of the minimax game a gradient is taken for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Generators,
    Critics,
}

/// The generators and critics of one training task, keyed by role name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelSet {
    pub generators: BTreeMap<String, MappingModel>,
    pub critics: BTreeMap<String, ScoreModel>,
}

impl ModelSet {
    pub fn generator_key(source: DomainTag, target: DomainTag) -> String {
        format!("G_{}_to_{}", source.letter(), target.letter())
    }

    pub fn critic_key(domain: DomainTag) -> String {
        format!("D_{}", domain.letter())
    }

    pub fn insert_generator(&mut self, model: MappingModel) {
        self.generators
            .insert(Self::generator_key(model.source_domain, model.target_domain), model);
    }

    pub fn insert_critic(&mut self, model: ScoreModel) {
        self.critics.insert(Self::critic_key(model.domain), model);
    }

    pub fn generator(&self, source: DomainTag, target: DomainTag) -> Result<&MappingModel> {
        let key = Self::generator_key(source, target);
        self.generators
            .get(&key)
            .ok_or_else(|| Error::invalid(format!("model set has no generator {key}")))
    }

    pub fn critic(&self, domain: DomainTag) -> Result<&ScoreModel> {
        let key = Self::critic_key(domain);
        self.critics
            .get(&key)
            .ok_or_else(|| Error::invalid(format!("model set has no critic {key}")))
    }

    /// Parameter vector of the generator or critic called `name`.
    pub fn params_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        if let Some(g) = self.generators.get_mut(name) {
            return Some(&mut g.parameters);
        }
        self.critics.get_mut(name).map(|c| &mut c.parameters)
    }

    pub fn params(&self, name: &str) -> Option<&[f64]> {
        if let Some(g) = self.generators.get(name) {
            return Some(&g.parameters);
        }
        self.critics.get(name).map(|c| c.parameters.as_slice())
    }

    /// Fresh seeded models for every role of `objective`.
    pub fn for_objective(
        objective: &Objective,
        generator: &GeneratorConfig,
        critic: &DiscriminatorConfig,
    ) -> Result<Self> {
        let mut set = Self::default();
        for (s, t) in objective.generator_roles() {
            set.insert_generator(build_generator(generator, s, t)?);
        }
        for d in objective.critic_roles() {
            set.insert_critic(build_discriminator(critic, d)?);
        }
        Ok(set)
    }
}

/// Aligned source/target rows: row `i` of both is the same underlying signal.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairedRows {
    pub source: Rows,
    pub target: Rows,
}

/// One update's worth of model-rate rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub unpaired: BTreeMap<DomainTag, Rows>,
    pub paired: Option<PairedRows>,
}

impl Batch {
    pub fn unpaired(mut self, domain: DomainTag, rows: Rows) -> Self {
        self.unpaired.insert(domain, rows);
        self
    }

    pub fn paired(mut self, source: Rows, target: Rows) -> Self {
        self.paired = Some(PairedRows { source, target });
        self
    }
}

/// The composite objectives.
///
/// `Cgan` and `CycleGan` are generic over their domains. The joint
/// objectives always work on the three fixed domains: `JointCgan` couples a
/// CycleGAN on (A, B) with a CGAN on paired (B, C) through an adversarial tie
/// on `G_bc(G_ab(a))`; `JointCycleGan` couples CycleGANs on (A, B) and (B, C)
/// through ties in both directions and three cross-domain cycle terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    Cgan { source: DomainTag, target: DomainTag },
    CycleGan { x: DomainTag, y: DomainTag },
    JointCgan,
    JointCycleGan,
}

impl Objective {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Objective::Cgan { source, target } if source == target => {
                Err(Error::Plan(format!("CGAN from {source} onto itself")))
            }
            Objective::CycleGan { x, y } if x == y => Err(Error::Plan(format!("CycleGAN between {x} and itself"))),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Objective::Cgan { .. } => "CGAN",
            Objective::CycleGan { .. } => "CycleGAN",
            Objective::JointCgan => "CycleGAN+CGAN",
            Objective::JointCycleGan => "CycleGAN+CycleGAN",
        }
    }

    /// Only the plain CGAN is supervised; it uses the single-period critic.
    pub fn is_supervised(&self) -> bool {
        matches!(self, Objective::Cgan { .. })
    }

    pub fn generator_roles(&self) -> Vec<(DomainTag, DomainTag)> {
        match *self {
            Objective::Cgan { source, target } => vec![(source, target)],
            Objective::CycleGan { x, y } => vec![(x, y), (y, x)],
            Objective::JointCgan => vec![(A, B), (B, A), (B, C)],
            Objective::JointCycleGan => vec![(A, B), (B, A), (B, C), (C, B)],
        }
    }

    pub fn critic_roles(&self) -> Vec<DomainTag> {
        match *self {
            Objective::Cgan { target, .. } => vec![target],
            Objective::CycleGan { x, y } => vec![x, y],
            Objective::JointCgan | Objective::JointCycleGan => vec![A, B, C],
        }
    }

    /// Domains sampled independently for each update.
    pub fn unpaired_domains(&self) -> Vec<DomainTag> {
        match *self {
            Objective::Cgan { .. } => vec![],
            Objective::CycleGan { x, y } => vec![x, y],
            Objective::JointCgan => vec![A, B],
            Objective::JointCycleGan => vec![A, B, C],
        }
    }

    /// Source and target roles of the paired stream, if any.
    pub fn paired_roles(&self) -> Option<(DomainTag, DomainTag)> {
        match *self {
            Objective::Cgan { source, target } => Some((source, target)),
            Objective::JointCgan => Some((B, C)),
            _ => None,
        }
    }

    /// Every loss component and party total, without gradients.
    pub fn evaluate(&self, models: &ModelSet, batch: &Batch, weights: &LossWeights) -> Result<LossBreakdown> {
        let mut b = Builder::new(models, None);
        self.build(&mut b, batch, weights)?;
        Ok(b.finish(None).0)
    }

    /// Components of one side and the gradient of that side's total with
    /// respect to each of its models' parameters (keyed by role name). For
    /// the critic side the total is the sum over critics, whose parameters
    /// are disjoint, so each critic receives the gradient of its own total.
    pub fn gradients(
        &self,
        models: &ModelSet,
        batch: &Batch,
        weights: &LossWeights,
        side: Side,
    ) -> Result<(LossBreakdown, BTreeMap<String, Vec<f64>>)> {
        let mut b = Builder::new(models, Some(side));
        self.build(&mut b, batch, weights)?;
        let (breakdown, grads) = b.finish(Some(side));
        Ok((breakdown, grads))
    }

    /// Gradient of one side's total with respect to every model, generators
    /// and critics alike. Only the explicit detaches inside the objective
    /// stop gradient flow, so the generator entries of the critic side are
    /// exactly zero.
    pub fn full_gradients(
        &self,
        models: &ModelSet,
        batch: &Batch,
        weights: &LossWeights,
        side: Side,
    ) -> Result<BTreeMap<String, Vec<f64>>> {
        let mut b = Builder::new(models, Some(side));
        b.all_trainable = true;
        self.build(&mut b, batch, weights)?;
        Ok(b.finish(Some(side)).1)
    }

    fn build(&self, b: &mut Builder<'_>, batch: &Batch, w: &LossWeights) -> Result<()> {
        self.validate()?;
        w.validate()?;
        let unpaired = |b: &mut Builder<'_>, d: DomainTag| -> Result<Var> {
            let rows = batch
                .unpaired
                .get(&d)
                .ok_or_else(|| Error::invalid(format!("{} needs a batch from {d}", self.name())))?;
            b.input(rows)
        };
        match *self {
            Objective::Cgan { source, target } => {
                let (s, t) = b.paired(batch, self.name())?;
                b.cgan(source, target, s, t, w)?;
            }
            Objective::CycleGan { x, y } => {
                let xv = unpaired(b, x)?;
                let yv = unpaired(b, y)?;
                b.cyclegan(x, y, xv, yv, w)?;
            }
            Objective::JointCgan => {
                let a = unpaired(b, A)?;
                let bv = unpaired(b, B)?;
                let (pb, pc) = b.paired(batch, self.name())?;
                b.cyclegan(A, B, a, bv, w)?;
                b.cgan(B, C, pb, pc, w)?;
                b.tie(A, B, C, a)?;
            }
            Objective::JointCycleGan => {
                let a = unpaired(b, A)?;
                let bv = unpaired(b, B)?;
                let c = unpaired(b, C)?;
                b.cyclegan(A, B, a, bv, w)?;
                b.cyclegan(B, C, bv, c, w)?;
                b.tie(A, B, C, a)?;
                b.tie(C, B, A, c)?;
                if b.wants(Party::Generators) {
                    // B-domain round trips through the other half.
                    let ab = b.gen(A, B, a)?;
                    let abc = b.gen(B, C, ab)?;
                    let abcb = b.gen(C, B, abc)?;
                    let l = l1_distance(&mut b.g, ab, abcb);
                    b.term("cyc_B_from_A", Party::Generators, w.lambda_cyc, l);
                    let cb = b.gen(C, B, c)?;
                    let cba = b.gen(B, A, cb)?;
                    let cbab = b.gen(A, B, cba)?;
                    let l = l1_distance(&mut b.g, cb, cbab);
                    b.term("cyc_B_from_C", Party::Generators, w.lambda_cyc, l);
                    // Full A -> C -> A and C -> A -> C round trips.
                    let abcba = b.gen(B, A, abcb)?;
                    let l = l1_distance(&mut b.g, a, abcba);
                    b.term("cyc_A_B_C_B_A", Party::Generators, w.lambda_cyc, l);
                    let cbabc = b.gen(B, C, cbab)?;
                    let l = l1_distance(&mut b.g, c, cbabc);
                    b.term("cyc_C_B_A_B_C", Party::Generators, w.lambda_cyc, l);
                }
            }
        }
        Ok(())
    }
}

struct Builder<'a> {
    g: Graph,
    models: &'a ModelSet,
    side: Option<Side>,
    gen_params: BTreeMap<String, Option<Var>>,
    critic_params: BTreeMap<String, Option<Var>>,
    cache: HashMap<(String, Var), Var>,
    terms: Vec<(String, Party, f64, Var)>,
    all_trainable: bool,
}

impl<'a> Builder<'a> {
    fn new(models: &'a ModelSet, side: Option<Side>) -> Self {
        Self {
            g: Graph::new(),
            models,
            side,
            gen_params: BTreeMap::new(),
            critic_params: BTreeMap::new(),
            cache: HashMap::new(),
            terms: Vec::new(),
            all_trainable: false,
        }
    }

    fn wants(&self, party: Party) -> bool {
        match self.side {
            None => true,
            Some(Side::Generators) => party == Party::Generators,
            Some(Side::Critics) => party != Party::Generators,
        }
    }

    fn input(&mut self, rows: &[Vec<f64>]) -> Result<Var> {
        Ok(self.g.constant(batch_tensor(rows)?))
    }

    fn paired(&mut self, batch: &Batch, objective: &str) -> Result<(Var, Var)> {
        let p = batch
            .paired
            .as_ref()
            .ok_or_else(|| Error::Unpaired(format!("{objective} needs a paired batch")))?;
        if p.source.len() != p.target.len() {
            return Err(Error::Unpaired(format!(
                "{} source rows vs {} target rows",
                p.source.len(),
                p.target.len()
            )));
        }
        let s = self.input(&p.source)?;
        let t = self.input(&p.target)?;
        if self.g.value(s).shape() != self.g.value(t).shape() {
            return Err(Error::LengthMismatch("paired rows differ in length".into()));
        }
        Ok((s, t))
    }

    /// `G_{source->target}(x)`, built once per input.
    fn gen(&mut self, source: DomainTag, target: DomainTag, x: Var) -> Result<Var> {
        let key = ModelSet::generator_key(source, target);
        if let Some(&y) = self.cache.get(&(key.clone(), x)) {
            return Ok(y);
        }
        let model = self.models.generator(source, target)?;
        let trainable = self.all_trainable || self.side == Some(Side::Generators);
        let p = match self.gen_params.get(&key) {
            Some(p) => *p,
            None => {
                let p = model.bind(&mut self.g, trainable);
                self.gen_params.insert(key.clone(), p);
                p
            }
        };
        let y = model.apply(&mut self.g, p, x);
        self.cache.insert((key, x), y);
        Ok(y)
    }

    fn scores(&mut self, domain: DomainTag, x: Var) -> Result<Vec<Var>> {
        let key = ModelSet::critic_key(domain);
        let model = self.models.critic(domain)?;
        let trainable = self.all_trainable || self.side == Some(Side::Critics);
        let p = match self.critic_params.get(&key) {
            Some(p) => *p,
            None => {
                let p = model.bind(&mut self.g, trainable);
                self.critic_params.insert(key, p);
                p
            }
        };
        model.scores(&mut self.g, p, x)
    }

    fn term(&mut self, name: &str, party: Party, weight: f64, var: Var) {
        self.terms.push((name.to_string(), party, weight, var));
    }

    fn cgan(&mut self, s: DomainTag, t: DomainTag, sv: Var, tv: Var, w: &LossWeights) -> Result<()> {
        let adv = format!("adv_{}_to_{}", s.letter(), t.letter());
        if self.wants(Party::Generators) {
            let fake = self.gen(s, t, sv)?;
            let scores = self.scores(t, fake)?;
            let l = lsgan_generator(&mut self.g, &scores);
            self.term(&adv, Party::Generators, 1.0, l);
            let l = supervised(&mut self.g, tv, fake, w.sup_mse);
            self.term(&format!("sup_{}_to_{}", s.letter(), t.letter()), Party::Generators, w.lambda_sup, l);
        }
        if self.wants(Party::Critic(t)) {
            self.critic_pair(s, t, sv, tv, &adv)?;
        }
        Ok(())
    }

    /// Least-squares critic term of `D_t` on real `tv` against `G_st(sv)`.
    fn critic_pair(&mut self, s: DomainTag, t: DomainTag, sv: Var, tv: Var, name: &str) -> Result<()> {
        let fake = self.gen(s, t, sv)?;
        let fake = self.g.detach(fake);
        let real_scores = self.scores(t, tv)?;
        let fake_scores = self.scores(t, fake)?;
        let l = lsgan_critic(&mut self.g, &real_scores, &fake_scores);
        self.term(name, Party::Critic(t), 1.0, l);
        Ok(())
    }

    fn cyclegan(&mut self, x: DomainTag, y: DomainTag, xv: Var, yv: Var, w: &LossWeights) -> Result<()> {
        let (lx, ly) = (x.letter(), y.letter());
        if self.wants(Party::Generators) {
            let fy = self.gen(x, y, xv)?;
            let fx = self.gen(y, x, yv)?;
            let s = self.scores(y, fy)?;
            let l = lsgan_generator(&mut self.g, &s);
            self.term(&format!("adv_{lx}_to_{ly}"), Party::Generators, 1.0, l);
            let s = self.scores(x, fx)?;
            let l = lsgan_generator(&mut self.g, &s);
            self.term(&format!("adv_{ly}_to_{lx}"), Party::Generators, 1.0, l);

            let back = self.gen(y, x, fy)?;
            let l = l1_distance(&mut self.g, xv, back);
            self.term(&format!("cyc_{lx}_{ly}_{lx}"), Party::Generators, w.lambda_cyc, l);
            let back = self.gen(x, y, fx)?;
            let l = l1_distance(&mut self.g, yv, back);
            self.term(&format!("cyc_{ly}_{lx}_{ly}"), Party::Generators, w.lambda_cyc, l);

            let same = self.gen(y, x, xv)?;
            let l = l1_distance(&mut self.g, xv, same);
            self.term(&format!("id_{ly}_to_{lx}"), Party::Generators, w.lambda_id, l);
            let same = self.gen(x, y, yv)?;
            let l = l1_distance(&mut self.g, yv, same);
            self.term(&format!("id_{lx}_to_{ly}"), Party::Generators, w.lambda_id, l);
        }
        if self.wants(Party::Critic(y)) {
            self.critic_pair(x, y, xv, yv, &format!("adv_{lx}_to_{ly}"))?;
            self.critic_pair(y, x, yv, xv, &format!("adv_{ly}_to_{lx}"))?;
        }
        Ok(())
    }

    /// Adversarial tie on the two-hop translation `G_mt(G_sm(sv))`; the
    /// critic of `t` additionally scores it as fake.
    fn tie(&mut self, s: DomainTag, m: DomainTag, t: DomainTag, sv: Var) -> Result<()> {
        let name = format!("tie_{}_to_{}_to_{}", s.letter(), m.letter(), t.letter());
        let mid = self.gen(s, m, sv)?;
        let fake = self.gen(m, t, mid)?;
        if self.wants(Party::Generators) {
            let scores = self.scores(t, fake)?;
            let l = lsgan_generator(&mut self.g, &scores);
            self.term(&name, Party::Generators, 1.0, l);
        }
        if self.wants(Party::Critic(t)) {
            let frozen = self.g.detach(fake);
            let scores = self.scores(t, frozen)?;
            let l = lsgan_fake_only(&mut self.g, &scores);
            self.term(&name, Party::Critic(t), 1.0, l);
        }
        Ok(())
    }

    fn finish(mut self, side: Option<Side>) -> (LossBreakdown, BTreeMap<String, Vec<f64>>) {
        let mut parties: Vec<Party> = self.terms.iter().map(|t| t.1).collect();
        parties.sort();
        parties.dedup();
        let mut totals = BTreeMap::new();
        let mut total_vars = Vec::new();
        for p in parties {
            let parts: Vec<(Var, f64)> = self
                .terms
                .iter()
                .filter(|t| t.1 == p)
                .map(|t| (t.3, t.2))
                .collect();
            let v = self.g.weighted_sum(&parts);
            totals.insert(p, self.g.scalar(v));
            total_vars.push((v, 1.0));
        }
        let terms = self
            .terms
            .iter()
            .map(|(name, party, weight, var)| LossTerm {
                name: name.clone(),
                party: *party,
                weight: *weight,
                value: self.g.scalar(*var),
            })
            .collect();
        let breakdown = LossBreakdown::from_terms(terms, totals);

        let mut grads = BTreeMap::new();
        if let Some(side) = side {
            if !total_vars.is_empty() {
                let root = self.g.weighted_sum(&total_vars);
                let gr = self.g.backward(root);
                let params: Vec<(&String, &Option<Var>)> = match side {
                    _ if self.all_trainable => self.gen_params.iter().chain(&self.critic_params).collect(),
                    Side::Generators => self.gen_params.iter().collect(),
                    Side::Critics => self.critic_params.iter().collect(),
                };
                for (name, p) in params {
                    if let Some(p) = p {
                        let len = self.g.value(*p).data.len();
                        grads.insert(name.clone(), gr.get_or_zeros(*p, len));
                    }
                }
            }
        }
        (breakdown, grads)
    }
}

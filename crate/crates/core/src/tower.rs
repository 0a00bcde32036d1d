//! Orchestration of the three ordered blowup sequences (theta, wp, eth):
//! center selection from association-multiplicity tables, the flat order on
//! divisors, nonemptiness gating, round/step bookkeeping, and termination
//! records.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::chart::{
    base_chart, base_charts_all, blow_up_chart, Chart, ChartId, DivisorId, ExcId, TermRecord,
};
use crate::model::ModelSystem;
use crate::points::{has_solution, has_solution_budgeted, CompiledSystem};
use crate::poly::{PairKey, Polynomial, VariableId};

#[derive(Debug, Error)]
pub enum TowerError {
    #[error("tower nontermination: round cap {0} exceeded for main binomial ({1},{2}); this indicates an implementation bug")]
    Nontermination(usize, usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GatePolicy {
    /// Blow up when sampling finds no point (sound default).
    AssumeNonempty,
    /// Skip centers where sampling finds no point.
    AssumeEmpty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum StagePlan {
    ThetaOnly,
    ThroughWp,
    Full,
}

#[derive(Debug, Clone, Serialize)]
pub struct TowerOptions {
    pub gate: GatePolicy,
    pub gate_primes: Vec<u64>,
    pub gate_budget: usize,
    pub max_charts: usize,
    pub round_cap: usize,
    pub seed: u64,
    pub stages: StagePlan,
    /// Drop charts on which the transform has no point over any gate prime.
    /// Sound for the finite-field certificate: a point of the transform on a
    /// child chart maps to a point on the parent, so pruned lineages carry
    /// no certifiable points for primes in the gate list.
    pub prune_empty: bool,
}

impl Default for TowerOptions {
    fn default() -> Self {
        TowerOptions {
            gate: GatePolicy::AssumeNonempty,
            gate_primes: vec![3, 5, 7],
            gate_budget: 100_000,
            max_charts: 200_000,
            round_cap: 64,
            seed: 0,
            stages: StagePlan::Full,
            prune_empty: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GateOutcome {
    /// A sampled point witnessed the center meeting the transform.
    Witnessed,
    /// No witness found; blown up anyway under the assume-nonempty policy.
    AssumedNonempty,
    /// No witness found; skipped under the assume-empty policy.
    Skipped,
}

/// One blowup step and the charts it affected.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub exc: ExcId,
    pub center: (DivisorId, DivisorId),
    pub gate: GateOutcome,
    /// (parent, side-0 child, side-1 child)
    pub affected: Vec<(ChartId, ChartId, ChartId)>,
}

/// Association-multiplicity table of one divisor.
#[derive(Debug, Clone, Serialize)]
pub struct MultTable {
    /// Per main binomial (model order): [plus, minus] multiplicities.
    pub main: Vec<[u32; 2]>,
    /// Per relation, per term slot: multiplicity on the linearized term.
    pub lin: Vec<Vec<u32>>,
    /// Per quotient binomial: [lhs, rhs] multiplicities.
    pub quot: Vec<[u32; 2]>,
}

#[derive(Debug, Clone, Default)]
pub struct DivisorRegistry {
    pub tables: BTreeMap<DivisorId, MultTable>,
}

impl DivisorRegistry {
    pub fn table(&self, d: &DivisorId) -> &MultTable {
        &self.tables[d]
    }
}

/// Build the initial association tables on the post-theta scheme.
pub fn initial_registry(model: &ModelSystem) -> DivisorRegistry {
    let mut reg = DivisorRegistry::default();
    let leading: Vec<&crate::indices::IndexTuple> = model
        .relations
        .iter()
        .map(|r| r.relation.leading_u.as_ref().unwrap())
        .collect();
    let lead_pair: Vec<PairKey> = model
        .relations
        .iter()
        .map(|r| r.pairs[0].clone())
        .collect();

    // coordinate divisors
    let coords = crate::indices::index_set(model.d, model.n).unwrap();
    for u in coords.iter().filter(|u| **u != model.m) {
        let main = model
            .mains
            .iter()
            .map(|b| {
                let plus = u32::from(u == leading[b.k - 1]);
                let rel = &model.relations[b.k - 1];
                let term = &rel.relation.terms[b.tau];
                let minus = u32::from(&term.u == u) + u32::from(&term.v == u);
                [plus, minus]
            })
            .collect();
        let lin = model
            .relations
            .iter()
            .map(|r| vec![0u32; r.pairs.len()])
            .collect();
        let quot = model.quotients.iter().map(|_| [0, 0]).collect();
        reg.tables.insert(DivisorId::Coord(u.clone()), MultTable { main, lin, quot });
    }

    // pair divisors
    let mut all_pairs: BTreeSet<PairKey> = BTreeSet::new();
    for r in &model.relations {
        all_pairs.extend(r.pairs.iter().cloned());
    }
    for p in &all_pairs {
        let main = model
            .mains
            .iter()
            .map(|b| {
                let plus = u32::from(&b.pair == p);
                // the leading pair is never associated with the minus term
                [plus, 0]
            })
            .collect();
        let lin = model
            .relations
            .iter()
            .map(|r| r.pairs.iter().map(|q| u32::from(q == p)).collect())
            .collect();
        let quot = model
            .quotients
            .iter()
            .map(|q| {
                [
                    q.lhs.exponent(&VariableId::Pair(p.clone())),
                    q.rhs.exponent(&VariableId::Pair(p.clone())),
                ]
            })
            .collect();
        reg.tables.insert(DivisorId::Pair(p.clone()), MultTable { main, lin, quot });
    }

    // theta exceptionals
    for (j0, _) in model.relations.iter().enumerate() {
        let j = j0 + 1;
        let u_j = leading[j0];
        let main = model
            .mains
            .iter()
            .map(|b| {
                if b.k == j {
                    [0, 0]
                } else {
                    let rel = &model.relations[b.k - 1];
                    let term = &rel.relation.terms[b.tau];
                    let minus = u32::from(&term.u == u_j) + u32::from(&term.v == u_j);
                    [0, minus]
                }
            })
            .collect();
        let lin = model
            .relations
            .iter()
            .map(|r| {
                r.pairs
                    .iter()
                    .map(|q| u32::from(q == &lead_pair[j0]))
                    .collect()
            })
            .collect();
        let quot = model
            .quotients
            .iter()
            .map(|q| {
                let v = VariableId::Pair(lead_pair[j0].clone());
                [q.lhs.exponent(&v), q.rhs.exponent(&v)]
            })
            .collect();
        reg.tables.insert(
            DivisorId::Exc(ExcId::Theta { k: j as u16 }),
            MultTable { main, lin, quot },
        );
    }
    reg
}

/// Tables for a new exceptional divisor from the two divisors of its set.
pub fn update_multiplicities(plus_side: &MultTable, minus_side: &MultTable) -> MultTable {
    let main = plus_side
        .main
        .iter()
        .zip(&minus_side.main)
        .map(|(a, b)| {
            let mp = a[0] + b[0];
            let mm = a[1] + b[1];
            let l = mp.min(mm);
            [mp - l, mm - l]
        })
        .collect();
    let lin = plus_side
        .lin
        .iter()
        .zip(&minus_side.lin)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect();
    let quot = plus_side
        .quot
        .iter()
        .zip(&minus_side.quot)
        .map(|(a, b)| {
            let l0 = a[0] + b[0];
            let l1 = a[1] + b[1];
            let l = l0.min(l1);
            [l0 - l, l1 - l]
        })
        .collect();
    MultTable { main, lin, quot }
}

/// Stage marker used to order exceptional divisors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageCtx {
    Wp,
    Eth,
}

/// The flat-order key of a divisor: exceptional < pair < coordinate, with the
/// invlex tuple order among exceptionals and lex among the rest.
fn flat_key(div: &DivisorId, ctx: StageCtx, eth_rank: &BTreeMap<ExcId, u32>) -> (u8, Vec<u32>) {
    match div {
        DivisorId::Exc(e) => {
            let tuple: (u32, u32, u32, u32) = match (ctx, e) {
                (StageCtx::Wp, ExcId::Theta { k }) => (1, 1, 0, *k as u32),
                (StageCtx::Wp, ExcId::Wp { k, tau, mu, h }) => {
                    (*k as u32, *tau as u32, *mu as u32, *h as u32)
                }
                (StageCtx::Wp, ExcId::Eth { .. }) => unreachable!("no eth divisors in wp stage"),
                (StageCtx::Eth, ExcId::Eth { k, tau, mu, h }) => {
                    (*k as u32, *tau as u32, *mu as u32, *h as u32)
                }
                (StageCtx::Eth, other) => (1, 1, 0, eth_rank[other]),
            };
            // invlex: rightmost entry decides first
            (0, vec![tuple.3, tuple.2, tuple.1, tuple.0])
        }
        DivisorId::Pair(p) => {
            let mut key: Vec<u32> = p.0 .0.iter().map(|x| *x as u32).collect();
            key.push(u32::MAX);
            key.extend(p.1 .0.iter().map(|x| *x as u32));
            (1, key)
        }
        DivisorId::Coord(u) => (2, u.0.iter().map(|x| *x as u32).collect()),
    }
}

/// The evolving atlas of live charts.
pub struct Atlas {
    pub charts: Vec<Arc<Chart>>,
    pub live: Vec<ChartId>,
}

impl Atlas {
    pub fn chart(&self, id: ChartId) -> &Arc<Chart> {
        &self.charts[id as usize]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TowerTables {
    pub rho: BTreeMap<String, usize>,
    pub kappa: BTreeMap<String, usize>,
    pub sigma: BTreeMap<String, usize>,
    pub varsigma: BTreeMap<String, usize>,
}

/// Full record of a tower run.
pub struct TowerRun {
    pub model: Arc<ModelSystem>,
    pub options: TowerOptions,
    pub atlas: Atlas,
    pub base_live: Vec<ChartId>,
    pub theta_live: Vec<ChartId>,
    pub final_live: Vec<ChartId>,
    pub steps: Vec<StepRecord>,
    pub tables: TowerTables,
    pub registry: DivisorRegistry,
    pub partial: bool,
    pub warnings: Vec<String>,
}

impl TowerRun {
    /// Ancestry chain of a chart, base first.
    pub fn ancestry(&self, id: ChartId) -> Vec<ChartId> {
        let mut chain = vec![id];
        let mut cur = id;
        while let Some(p) = self.atlas.chart(cur).parent {
            chain.push(p);
            cur = p;
        }
        chain.reverse();
        chain
    }

    /// Mechanical termination records on a final chart: per main binomial,
    /// the last own-index step in the ancestry, with the surviving central
    /// variable and the exceptional parameter mapped to final names.
    pub fn termination_records(&self, id: ChartId) -> Vec<TermRecord> {
        let chain = self.ancestry(id);
        let model = &self.model;
        model
            .mains
            .iter()
            .map(|b| {
                let mut found: Option<(usize, ExcId, VariableId, VariableId)> = None;
                for (pos, cid) in chain.iter().enumerate() {
                    let chart = self.atlas.chart(*cid);
                    if let Some(tr) = &chart.transition {
                        let own = match tr.step {
                            ExcId::Theta { k } => k as usize == b.k,
                            ExcId::Wp { k, tau, .. } | ExcId::Eth { k, tau, .. } => {
                                k as usize == b.k && tau as usize == b.tau
                            }
                        };
                        if own {
                            let (v0, v1) = &tr.center_vars;
                            let (absorbed, survivor) =
                                if tr.side == 0 { (v0, v1) } else { (v1, v0) };
                            let zeta = exc_name(absorbed);
                            found = Some((pos, tr.step, survivor.clone(), zeta));
                        }
                    }
                }
                match found {
                    None => TermRecord { step: None, central: None, exceptional: None },
                    Some((pos, step, mut central, mut zeta)) => {
                        // map names forward through later transitions
                        for cid in chain.iter().skip(pos + 1) {
                            let chart = self.atlas.chart(*cid);
                            if let Some(tr) = &chart.transition {
                                let (v0, v1) = &tr.center_vars;
                                let absorbed = if tr.side == 0 { v0 } else { v1 };
                                if &central == absorbed {
                                    central = exc_name(&central);
                                }
                                if &zeta == absorbed {
                                    zeta = exc_name(&zeta);
                                }
                            }
                        }
                        TermRecord { step: Some(step), central: Some(central), exceptional: Some(zeta) }
                    }
                }
            })
            .collect()
    }
}

fn exc_name(v: &VariableId) -> VariableId {
    match v {
        VariableId::Coord(u) => VariableId::ExcCoord(u.clone()),
        VariableId::Pair(p) => VariableId::ExcPair(p.clone()),
        other => other.clone(),
    }
}

/// Base-chart choices under a policy string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum LambdaPolicy {
    All,
    First,
    Explicit(Vec<usize>),
}

pub fn base_choices(
    model: &ModelSystem,
    policy: &LambdaPolicy,
) -> Vec<BTreeMap<usize, PairKey>> {
    match policy {
        LambdaPolicy::All => base_charts_all(model),
        LambdaPolicy::First => {
            let mut c = BTreeMap::new();
            for (k, rel) in model.relations.iter().enumerate() {
                c.insert(k, rel.pairs[0].clone());
            }
            vec![c]
        }
        LambdaPolicy::Explicit(idxs) => {
            let mut c = BTreeMap::new();
            for (k, rel) in model.relations.iter().enumerate() {
                let i = idxs.get(k).copied().unwrap_or(0);
                c.insert(k, rel.pairs[i.min(rel.pairs.len() - 1)].clone());
            }
            vec![c]
        }
    }
}

/// Decide per chart whether the center meets the transform, by exhaustive
/// finite-field search over the gate primes. Returns the witnessed charts
/// and the overall outcome: under the witnessed policy only those charts
/// are blown up (an isomorphism near every finite-field point elsewhere),
/// under the assume-nonempty policy every structural chart is.
fn gate_check(
    atlas: &Atlas,
    both_present: &[ChartId],
    center: (&DivisorId, &DivisorId),
    opts: &TowerOptions,
) -> (Vec<ChartId>, GateOutcome) {
    let witnessed: Vec<ChartId> = both_present
        .par_iter()
        .copied()
        .filter(|id| {
            let chart = atlas.chart(*id);
            let v0 = chart.divisor_var(center.0).unwrap();
            let v1 = chart.divisor_var(center.1).unwrap();
            let vars = chart.variables();
            let mut polys = chart.system();
            polys.push(Polynomial::var(crate::poly::FieldTag::Q, v0));
            polys.push(Polynomial::var(crate::poly::FieldTag::Q, v1));
            let sys = CompiledSystem::new(vars, &polys);
            opts.gate_primes.iter().any(|&p| {
                // a cut-short search counts as a witness: the safe side is
                // to blow the chart up
                has_solution_budgeted(&sys, p, opts.gate_budget).unwrap_or(true)
            })
        })
        .collect();
    if !witnessed.is_empty() {
        match opts.gate {
            GatePolicy::AssumeNonempty => (both_present.to_vec(), GateOutcome::Witnessed),
            GatePolicy::AssumeEmpty => (witnessed, GateOutcome::Witnessed),
        }
    } else {
        match opts.gate {
            GatePolicy::AssumeNonempty => (both_present.to_vec(), GateOutcome::AssumedNonempty),
            GatePolicy::AssumeEmpty => (Vec::new(), GateOutcome::Skipped),
        }
    }
}

/// Charts of the live set on which both center divisors are present.
fn charts_with_center(atlas: &Atlas, center: (&DivisorId, &DivisorId)) -> Vec<ChartId> {
    atlas
        .live
        .iter()
        .copied()
        .filter(|id| {
            let c = atlas.chart(*id);
            c.divisor_var(center.0).is_some() && c.divisor_var(center.1).is_some()
        })
        .collect()
}

/// A chart is kept when its transform has a point over some gate prime;
/// the search is a complete backtracking enumeration with an early exit.
fn chart_has_point(chart: &Chart, primes: &[u64]) -> bool {
    let vars = chart.variables();
    let sys = CompiledSystem::new(vars, &chart.system());
    primes.iter().any(|&p| has_solution(&sys, p))
}

/// Does the transform on the chart meet the locus `extra = 0`? Children of a
/// blowup overlap where the surviving center variable is nonzero, so a child
/// is redundant in the atlas when this locus carries no finite-field point.
fn chart_meets_locus(chart: &Chart, extra: &VariableId, primes: &[u64]) -> bool {
    let vars = chart.variables();
    let mut polys = chart.system();
    polys.push(Polynomial::var(crate::poly::FieldTag::Q, extra.clone()));
    let sys = CompiledSystem::new(vars, &polys);
    primes.iter().any(|&p| has_solution(&sys, p))
}

/// Blow up the given live charts along the center; returns the step record.
fn apply_blowup(
    atlas: &mut Atlas,
    center: (&DivisorId, &DivisorId),
    exc: ExcId,
    gate: GateOutcome,
    drop_residuals: bool,
    opts: &TowerOptions,
    targets: Vec<ChartId>,
) -> StepRecord {
    let mut affected = Vec::new();
    let mut new_live: Vec<ChartId> = Vec::new();
    let target_set: BTreeSet<ChartId> = targets.iter().copied().collect();
    for id in &atlas.live {
        if !target_set.contains(id) {
            new_live.push(*id);
        }
    }
    // children are built in parallel per affected chart
    let children: Vec<(ChartId, Chart, Chart)> = targets
        .par_iter()
        .map(|id| {
            let parent = atlas.chart(*id);
            let mut c0 = blow_up_chart(parent, center, 0, exc, 0);
            let mut c1 = blow_up_chart(parent, center, 1, exc, 0);
            if drop_residuals {
                c0.residuals = None;
                c1.residuals = None;
            }
            (*id, c0, c1)
        })
        .collect();
    let keep: Vec<(bool, bool)> = children
        .par_iter()
        .map(|(id, c0, c1)| {
            if !opts.prune_empty {
                return (true, true);
            }
            let k0 = chart_has_point(c0, &opts.gate_primes);
            let k1 = chart_has_point(c1, &opts.gate_primes);
            if !(k0 && k1) {
                return (k0, k1);
            }
            // both nonempty: drop a child covered by its sibling
            let parent = atlas.chart(*id);
            let v0 = parent.divisor_var(center.0).unwrap();
            let v1 = parent.divisor_var(center.1).unwrap();
            // side-0 child keeps v1 as a coordinate; its points off the
            // sibling are exactly those with v1's survivor = 0 on side 1
            if !chart_meets_locus(c1, &v0, &opts.gate_primes) {
                return (true, false);
            }
            if !chart_meets_locus(c0, &v1, &opts.gate_primes) {
                return (false, true);
            }
            (true, true)
        })
        .collect();
    for ((id, mut c0, mut c1), (k0, k1)) in children.into_iter().zip(keep) {
        let id0 = atlas.charts.len() as ChartId;
        let id1 = id0 + 1;
        c0.id = id0;
        c1.id = id1;
        atlas.charts.push(Arc::new(c0));
        atlas.charts.push(Arc::new(c1));
        if k0 {
            new_live.push(id0);
        }
        if k1 {
            new_live.push(id1);
        }
        affected.push((id, id0, id1));
    }
    new_live.sort_unstable();
    atlas.live = new_live;
    StepRecord {
        exc,
        center: (center.0.clone(), center.1.clone()),
        gate,
        affected,
    }
}

/// The theta stage: one blowup per primary relation, in family order.
fn theta_tower(
    model: &ModelSystem,
    atlas: &mut Atlas,
    steps: &mut Vec<StepRecord>,
    opts: &TowerOptions,
) {
    for (k0, rel) in model.relations.iter().enumerate() {
        let k = k0 + 1;
        let u_k = rel.relation.leading_u.clone().unwrap();
        let lead_pair = rel.pairs[0].clone();
        let center0 = DivisorId::Coord(u_k);
        let center1 = DivisorId::Pair(lead_pair);
        let targets = charts_with_center(atlas, (&center0, &center1));
        let rec = apply_blowup(
            atlas,
            (&center0, &center1),
            ExcId::Theta { k: k as u16 },
            GateOutcome::Witnessed,
            false,
            opts,
            targets,
        );
        steps.push(rec);
    }
}

/// Candidate divisor pairs for one main binomial in the wp stage.
fn pre_wp_sets(
    model: &ModelSystem,
    reg: &DivisorRegistry,
    main_idx: usize,
    warnings: &mut Vec<String>,
) -> Vec<(DivisorId, DivisorId)> {
    let b = &model.mains[main_idx];
    let excluded_plus = DivisorId::Pair(b.pair.clone());
    let lead_pair = model.relations[b.k - 1].pairs[0].clone();
    let excluded_minus = DivisorId::Pair(lead_pair);
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for (d, t) in &reg.tables {
        if t.main[main_idx][0] > 0 && *d != excluded_plus {
            if matches!(d, DivisorId::Pair(_)) {
                warnings.push(format!(
                    "wp-set candidate of pair kind on the plus term: {}",
                    d.label()
                ));
            }
            plus.push(d.clone());
        }
        if t.main[main_idx][1] > 0 && *d != excluded_minus {
            if matches!(d, DivisorId::Pair(_)) {
                warnings.push(format!(
                    "wp-set candidate of pair kind on the minus term: {}",
                    d.label()
                ));
            }
            minus.push(d.clone());
        }
    }
    let mut out = Vec::new();
    for a in &plus {
        for b in &minus {
            if a != b {
                out.push((a.clone(), b.clone()));
            }
        }
    }
    out
}

/// Candidate pairs for the eth stage: the plus-term pair divisor against
/// coordinate/exceptional divisors associated with the minus term.
fn pre_eth_sets(
    model: &ModelSystem,
    reg: &DivisorRegistry,
    main_idx: usize,
) -> Vec<(DivisorId, DivisorId)> {
    let b = &model.mains[main_idx];
    let plus = DivisorId::Pair(b.pair.clone());
    let mut out = Vec::new();
    for (d, t) in &reg.tables {
        if matches!(d, DivisorId::Pair(_)) {
            continue;
        }
        if t.main[main_idx][1] > 0 {
            out.push((plus.clone(), d.clone()));
        }
    }
    out
}

/// Sort candidate sets by the flat order, comparing each set as its sorted
/// pair of divisors.
fn sort_sets(
    sets: &mut [(DivisorId, DivisorId)],
    ctx: StageCtx,
    eth_rank: &BTreeMap<ExcId, u32>,
) {
    sets.sort_by_key(|(a, b)| {
        let ka = flat_key(a, ctx, eth_rank);
        let kb = flat_key(b, ctx, eth_rank);
        if ka <= kb {
            (ka, kb)
        } else {
            (kb, ka)
        }
    });
}

/// Run one wp- or eth-style stage for every main binomial in order.
#[allow(clippy::too_many_arguments)]
fn rounds_stage(
    model: &ModelSystem,
    atlas: &mut Atlas,
    reg: &mut DivisorRegistry,
    steps: &mut Vec<StepRecord>,
    opts: &TowerOptions,
    ctx: StageCtx,
    eth_rank: &BTreeMap<ExcId, u32>,
    rounds_out: &mut BTreeMap<String, usize>,
    per_round_out: &mut BTreeMap<String, usize>,
    warnings: &mut Vec<String>,
    partial: &mut bool,
) -> Result<(), TowerError> {
    for main_idx in 0..model.mains.len() {
        let (k, tau) = (model.mains[main_idx].k, model.mains[main_idx].tau);
        let mut mu = 0usize;
        loop {
            mu += 1;
            if mu > opts.round_cap {
                return Err(TowerError::Nontermination(opts.round_cap, k, tau));
            }
            let mut presets = match ctx {
                StageCtx::Wp => pre_wp_sets(model, reg, main_idx, warnings),
                StageCtx::Eth => pre_eth_sets(model, reg, main_idx),
            };
            sort_sets(&mut presets, ctx, eth_rank);
            // gate each candidate on the round-start atlas
            let mut accepted = Vec::new();
            for (a, b) in presets {
                let both = charts_with_center(atlas, (&a, &b));
                if both.is_empty() {
                    continue; // structurally empty center
                }
                let (targets, outcome) = gate_check(atlas, &both, (&a, &b), opts);
                if !targets.is_empty() {
                    accepted.push((a, b, outcome, targets));
                }
            }
            if accepted.is_empty() {
                rounds_out.insert(format!("({k},{tau})"), mu - 1);
                break;
            }
            per_round_out.insert(format!("({k},{tau})r{mu}"), accepted.len());
            for (h0, (a, b, _, _)) in accepted.into_iter().enumerate() {
                let h = (h0 + 1) as u16;
                let exc = match ctx {
                    StageCtx::Wp => ExcId::Wp { k: k as u16, tau: tau as u16, mu: mu as u16, h },
                    StageCtx::Eth => ExcId::Eth { k: k as u16, tau: tau as u16, mu: mu as u16, h },
                };
                // the blowup runs along the current proper transform, so the
                // per-chart gate is re-evaluated on the current atlas
                let both = charts_with_center(atlas, (&a, &b));
                let (targets, outcome) = gate_check(atlas, &both, (&a, &b), opts);
                let table = update_multiplicities(reg.table(&a), reg.table(&b));
                let rec = apply_blowup(atlas, (&a, &b), exc, outcome, true, opts, targets);
                reg.tables.insert(DivisorId::Exc(exc), table);
                steps.push(rec);
                if atlas.charts.len() > opts.max_charts {
                    *partial = true;
                    warnings.push(format!(
                        "chart budget {} exceeded at {}",
                        opts.max_charts,
                        exc.label()
                    ));
                    return Ok(());
                }
            }
        }
    }
    Ok(())
}

/// Run the full ordered tower for the model.
pub fn run_full_tower(
    model: Arc<ModelSystem>,
    policy: &LambdaPolicy,
    opts: &TowerOptions,
) -> Result<TowerRun, TowerError> {
    let mut atlas = Atlas { charts: Vec::new(), live: Vec::new() };
    for choice in base_choices(&model, policy) {
        let id = atlas.charts.len() as ChartId;
        atlas.charts.push(Arc::new(base_chart(&model, &choice, id)));
        atlas.live.push(id);
    }
    let base_live = atlas.live.clone();
    let mut steps = Vec::new();
    let mut warnings = Vec::new();
    let mut partial = false;

    theta_tower(&model, &mut atlas, &mut steps, opts);
    // residual binomials become dependent on the main ones after theta
    let theta_live = atlas.live.clone();

    let mut reg = initial_registry(&model);
    let mut tables = TowerTables {
        rho: BTreeMap::new(),
        kappa: BTreeMap::new(),
        sigma: BTreeMap::new(),
        varsigma: BTreeMap::new(),
    };

    if opts.stages >= StagePlan::ThroughWp && !partial {
        rounds_stage(
            &model,
            &mut atlas,
            &mut reg,
            &mut steps,
            opts,
            StageCtx::Wp,
            &BTreeMap::new(),
            &mut tables.rho,
            &mut tables.sigma,
            &mut warnings,
            &mut partial,
        )?;
    }

    if opts.stages >= StagePlan::Full && !partial {
        // rank the pre-eth exceptionals in creation order
        let mut eth_rank: BTreeMap<ExcId, u32> = BTreeMap::new();
        let mut rank = 1u32;
        for s in &steps {
            if let ExcId::Theta { .. } = s.exc {
                eth_rank.insert(s.exc, rank);
                rank += 1;
            }
        }
        for s in &steps {
            if let ExcId::Wp { .. } = s.exc {
                eth_rank.insert(s.exc, rank);
                rank += 1;
            }
        }
        rounds_stage(
            &model,
            &mut atlas,
            &mut reg,
            &mut steps,
            opts,
            StageCtx::Eth,
            &eth_rank,
            &mut tables.kappa,
            &mut tables.varsigma,
            &mut warnings,
            &mut partial,
        )?;
    }

    let final_live = atlas.live.clone();
    Ok(TowerRun {
        model,
        options: opts.clone(),
        atlas,
        base_live,
        theta_live,
        final_live,
        steps,
        tables,
        registry: reg,
        partial,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indices::IndexTuple;

    fn t(v: &[u8]) -> IndexTuple {
        IndexTuple::new(v.to_vec())
    }

    #[test]
    fn theta_skips_charts_with_absorbed_leading_pair() {
        let model = Arc::new(ModelSystem::build(2, 4, &t(&[1, 2]), 3).unwrap());
        // single base chart with the leading pair absorbed: theta is a no-op
        let policy = LambdaPolicy::Explicit(vec![0]);
        let opts = TowerOptions {
            stages: StagePlan::ThetaOnly,
            prune_empty: false,
            ..Default::default()
        };
        let run = run_full_tower(model.clone(), &policy, &opts).unwrap();
        assert_eq!(run.theta_live, run.base_live);

        // chart with a non-leading pair absorbed: one blowup, two children
        let policy = LambdaPolicy::Explicit(vec![1]);
        let run = run_full_tower(model, &policy, &opts).unwrap();
        assert_eq!(run.theta_live.len(), 2);
        assert_eq!(run.steps.len(), 1);
        assert_eq!(run.steps[0].affected.len(), 1);
    }

    #[test]
    fn wp_sets_for_first_gr36_binomial() {
        // Gr(3,6), m = (1,2,3): the first main binomial pairs x145 with
        // exactly the two coordinate divisors X145/X124 and X145/X135.
        let model = Arc::new(ModelSystem::build(3, 6, &t(&[1, 2, 3]), 2).unwrap());
        let reg = initial_registry(&model);
        let mut warnings = Vec::new();
        let sets = pre_wp_sets(&model, &reg, 0, &mut warnings);
        assert!(warnings.is_empty());
        let b = &model.mains[0];
        assert_eq!((b.k, b.tau), (1, 1));
        let mut got: Vec<(String, String)> = sets
            .iter()
            .map(|(a, b)| (a.label(), b.label()))
            .collect();
        got.sort();
        assert_eq!(
            got,
            vec![
                ("X[145]".to_string(), "X[124]".to_string()),
                ("X[145]".to_string(), "X[135]".to_string()),
            ]
        );
    }

    #[test]
    fn var_count_invariant_along_blowups() {
        let model = Arc::new(ModelSystem::build(2, 4, &t(&[1, 2]), 3).unwrap());
        let run = run_full_tower(model, &LambdaPolicy::All, &TowerOptions::default()).unwrap();
        let expect = 5 + 2;
        for c in &run.atlas.charts {
            assert_eq!(c.variables().len(), expect, "chart {}", c.id);
        }
        assert!(!run.partial);
    }
}

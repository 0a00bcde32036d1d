//! Coordinate-section schemes (Gamma-schemes) of the chart, the matroid
//! polytope construction producing them, and their transform pipeline
//! through the model stages and the blowup tower, with the rank-one /
//! rank-zero branching decided by a finite-field generic-point oracle.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::chart::{Chart, ChartId};
use crate::model::ModelSystem;
use crate::points::{enumerate_solutions, mod_inverse, rank_mod_p, CompiledSystem};
use crate::poly::{FieldTag, PairKey, Polynomial, VariableId};
use crate::tower::TowerRun;
use crate::indices::IndexTuple;

#[derive(Debug, Error)]
pub enum GammaError {
    #[error("matroid rejected: {0}")]
    BadMatroid(String),
    #[error("chart-incompatible: the chart vertex is not in the matroid subpolytope")]
    ChartIncompatible,
    #[error("gamma names unknown tuple {0:?}")]
    UnknownTuple(IndexTuple),
}

/// A set of coordinate hyperplanes to intersect with the chart.
#[derive(Debug, Clone, Default, Serialize)]
pub struct GammaScheme {
    pub gamma: BTreeSet<IndexTuple>,
}

impl GammaScheme {
    pub fn empty() -> Self {
        GammaScheme::default()
    }

    pub fn new(
        model: &ModelSystem,
        tuples: impl IntoIterator<Item = IndexTuple>,
    ) -> Result<Self, GammaError> {
        let all = crate::indices::index_set(model.d, model.n).unwrap();
        let mut gamma = BTreeSet::new();
        for t in tuples {
            if !all.contains(&t) || t == model.m {
                return Err(GammaError::UnknownTuple(t));
            }
            gamma.insert(t);
        }
        Ok(GammaScheme { gamma })
    }
}

/// A matroid given by the full family of intersection dimensions `d_I`.
#[derive(Debug, Clone)]
pub struct Matroid {
    pub d: usize,
    pub n: usize,
    /// `d_I` per subset bitmask of `[n]`.
    pub table: Vec<usize>,
}

impl Matroid {
    /// The generic family `d_I = max(0, |I| + d - n)`.
    pub fn uniform(d: usize, n: usize) -> Self {
        let table = (0u32..(1 << n))
            .map(|mask| {
                let s = mask.count_ones() as i64 + d as i64 - n as i64;
                s.max(0) as usize
            })
            .collect();
        Matroid { d, n, table }
    }

    /// Build from explicit overrides on the generic family.
    pub fn with_overrides(
        d: usize,
        n: usize,
        overrides: &BTreeMap<Vec<u8>, usize>,
    ) -> Result<Self, GammaError> {
        let mut m = Matroid::uniform(d, n);
        for (subset, v) in overrides {
            let mut mask = 0u32;
            for e in subset {
                if *e == 0 || *e as usize > n {
                    return Err(GammaError::BadMatroid(format!(
                        "subset entry {e} out of range"
                    )));
                }
                mask |= 1 << (e - 1);
            }
            m.table[mask as usize] = *v;
        }
        m.validate()?;
        Ok(m)
    }

    /// Check `d_empty = 0`, `d_[n] = d`, and
    /// `d_I + d_J <= d_{I u J} + d_{I n J}` for all subsets.
    pub fn validate(&self) -> Result<(), GammaError> {
        let full = (1usize << self.n) - 1;
        if self.table[0] != 0 {
            return Err(GammaError::BadMatroid("d_empty must be 0".into()));
        }
        if self.table[full] != self.d {
            return Err(GammaError::BadMatroid("d_[n] must equal d".into()));
        }
        for i in 0..=full {
            for j in 0..=full {
                let u = i | j;
                let c = i & j;
                if self.table[i] + self.table[j] > self.table[u] + self.table[c] {
                    return Err(GammaError::BadMatroid(format!(
                        "inequality fails at I={i:#b}, J={j:#b}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn vertex_in_polytope(&self, u: &IndexTuple) -> bool {
        let full = (1usize << self.n) - 1;
        let mut umask = 0usize;
        for e in &u.0 {
            umask |= 1 << (e - 1);
        }
        (0..=full).all(|i| (umask & i).count_ones() as usize >= self.table[i])
    }
}

/// The Gamma-scheme of a matroid on a chart: coordinates whose vertex lies
/// outside the matroid subpolytope.
pub fn gamma_from_matroid(matroid: &Matroid, model: &ModelSystem) -> Result<GammaScheme, GammaError> {
    matroid.validate()?;
    if !matroid.vertex_in_polytope(&model.m) {
        return Err(GammaError::ChartIncompatible);
    }
    let gamma = crate::indices::index_set(model.d, model.n)
        .unwrap()
        .into_iter()
        .filter(|u| *u != model.m && !matroid.vertex_in_polytope(u))
        .collect();
    Ok(GammaScheme { gamma })
}

/// Relevance of one primary relation: irrelevant when every term contains a
/// member of Gamma.
pub fn gamma_relevance(model: &ModelSystem, k0: usize, gamma: &GammaScheme) -> bool {
    let rel = &model.relations[k0].relation;
    // returns true when relevant
    rel.terms.iter().any(|t| {
        let in_gamma = |u: &IndexTuple| u != &model.m && gamma.gamma.contains(u);
        !in_gamma(&t.u) && !in_gamma(&t.v)
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ChartStatus {
    Live,
    /// The transform misses this chart (a pinned-to-zero coordinate is
    /// absorbed, or the lifts land on the sibling side).
    Excluded(String),
    /// The generic-point oracle found no witnesses.
    Undecided(String),
}

/// Per-chart transform state: variables pinned to zero / one, and the
/// surviving linearized relations.
#[derive(Debug, Clone, Serialize)]
pub struct ChartState {
    pub status: ChartStatus,
    pub zero: BTreeSet<VariableId>,
    pub one: BTreeSet<VariableId>,
}

impl ChartState {
    fn live() -> Self {
        ChartState { status: ChartStatus::Live, zero: BTreeSet::new(), one: BTreeSet::new() }
    }

    fn excluded(reason: &str) -> Self {
        ChartState {
            status: ChartStatus::Excluded(reason.to_string()),
            zero: BTreeSet::new(),
            one: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaOptions {
    pub primes: Vec<u64>,
    pub exhaustive_threshold: usize,
    pub sample_budget: usize,
    pub seed: u64,
}

impl Default for GammaOptions {
    fn default() -> Self {
        GammaOptions {
            primes: vec![3, 5, 7],
            exhaustive_threshold: 16,
            sample_budget: 20_000,
            seed: 0,
        }
    }
}

/// Result of the full transform pipeline.
#[derive(Debug, Clone)]
pub struct GammaRun {
    pub gamma: GammaScheme,
    /// Per relation: does its linearized relation survive.
    pub fstar: Vec<bool>,
    pub lambda_zero: Vec<BTreeSet<PairKey>>,
    pub lambda_one: Vec<BTreeSet<PairKey>>,
    pub lambda_det: Vec<BTreeSet<PairKey>>,
    /// State per chart id, for every chart that was live at some stage.
    pub states: BTreeMap<ChartId, ChartState>,
    pub warnings: Vec<String>,
}

impl GammaRun {
    pub fn state(&self, id: ChartId) -> &ChartState {
        &self.states[&id]
    }

    pub fn has_undecided(&self) -> bool {
        self.states
            .values()
            .any(|s| matches!(s.status, ChartStatus::Undecided(_)))
    }
}

/// The defining system of the transform state on a chart: pins, main and
/// residual binomials (while tracked), quotient binomials, and surviving
/// linearized relations.
pub fn state_system(chart: &Chart, state: &ChartState, fstar: &[bool]) -> Vec<Polynomial> {
    let mut out = Vec::new();
    for v in &state.zero {
        out.push(Polynomial::var(FieldTag::Q, v.clone()));
    }
    for v in &state.one {
        out.push(
            Polynomial::var(FieldTag::Q, v.clone())
                .sub(&Polynomial::one(FieldTag::Q))
                .unwrap(),
        );
    }
    for b in &chart.mains {
        out.push(crate::chart::binomial_poly(&b.plus, &b.minus));
    }
    if let Some(res) = &chart.residuals {
        for r in res {
            out.push(crate::chart::binomial_poly(&r.lhs, &r.rhs));
        }
    }
    for (l, r) in &chart.quotients {
        out.push(crate::chart::binomial_poly(l, r));
    }
    for (k0, l) in chart.linears.iter().enumerate() {
        if fstar[k0] {
            out.push(l.clone());
        }
    }
    out
}

/// Sampled finite-field points of a state on one chart, per prime.
fn sample_state_points(
    chart: &Chart,
    polys: &[Polynomial],
    opts: &GammaOptions,
) -> Vec<(u64, Vec<VariableId>, Vec<Vec<u64>>)> {
    let vars = chart.variables();
    let sys = CompiledSystem::new(vars.clone(), polys);
    opts.primes
        .iter()
        .map(|&p| {
            let sols = enumerate_solutions(
                &sys,
                p,
                opts.exhaustive_threshold,
                opts.sample_budget,
                opts.seed,
            );
            (p, vars.clone(), sols)
        })
        .collect()
}

/// Run the model-stage transform: per relation in order, compute the global
/// pinned pair sets and update per-base-chart states.
#[allow(clippy::type_complexity)]
fn model_stage(
    run: &TowerRun,
    gamma: &GammaScheme,
    opts: &GammaOptions,
    states: &mut BTreeMap<ChartId, ChartState>,
    warnings: &mut Vec<String>,
) -> (Vec<bool>, Vec<BTreeSet<PairKey>>, Vec<BTreeSet<PairKey>>, Vec<BTreeSet<PairKey>>) {
    let model = &run.model;
    let upsilon = model.relations.len();
    let mut fstar = vec![false; upsilon];
    let mut lambda_zero: Vec<BTreeSet<PairKey>> = vec![BTreeSet::new(); upsilon];
    let mut lambda_one: Vec<BTreeSet<PairKey>> = vec![BTreeSet::new(); upsilon];
    let mut lambda_det: Vec<BTreeSet<PairKey>> = vec![BTreeSet::new(); upsilon];
    let pair_block: BTreeMap<PairKey, usize> = model
        .relations
        .iter()
        .enumerate()
        .flat_map(|(k, r)| r.pairs.iter().map(move |p| (p.clone(), k)))
        .collect();

    for k0 in 0..upsilon {
        let relevant = gamma_relevance(model, k0, gamma);
        if relevant {
            fstar[k0] = true;
            for t in &model.relations[k0].relation.terms {
                let in_gamma = |u: &IndexTuple| u != &model.m && gamma.gamma.contains(u);
                if in_gamma(&t.u) || in_gamma(&t.v) {
                    lambda_zero[k0].insert(t.pair());
                }
            }
        } else {
            // linear system in the block-k pair variables at generic points
            // of the previous stage
            let cols: Vec<PairKey> = {
                let mut c: Vec<PairKey> = model.relations[k0].pairs.clone();
                c.sort();
                c
            };
            let col_index: BTreeMap<&PairKey, usize> =
                cols.iter().enumerate().map(|(i, p)| (p, i)).collect();

            // rows: the linearized relation (constant signs), plus quotient
            // binomials supported on blocks <= k containing a block-k pair
            #[derive(Clone)]
            enum Entry {
                Const(i64),
                Mono(crate::poly::Monomial, i64),
            }
            let mut rows: Vec<Vec<(usize, Entry)>> = Vec::new();
            {
                let rel = &model.relations[k0];
                let row = rel
                    .pairs
                    .iter()
                    .zip(&rel.signs)
                    .map(|(p, s)| (col_index[p], Entry::Const(*s as i64)))
                    .collect();
                rows.push(row);
            }
            for q in &model.quotients {
                let blocks: BTreeSet<usize> = q
                    .lhs
                    .vars()
                    .chain(q.rhs.vars())
                    .map(|v| match v {
                        VariableId::Pair(p) => pair_block[p],
                        _ => unreachable!(),
                    })
                    .collect();
                if blocks.iter().any(|b| *b > k0) || !blocks.contains(&k0) {
                    continue;
                }
                let mut row = Vec::new();
                for (side, sign) in [(&q.lhs, 1i64), (&q.rhs, -1i64)] {
                    let kvar = side.vars().find(|v| match v {
                        VariableId::Pair(p) => pair_block[p] == k0,
                        _ => false,
                    });
                    if let Some(v) = kvar {
                        let rest = side.div_var(v, 1);
                        let p = match v {
                            VariableId::Pair(p) => p.clone(),
                            _ => unreachable!(),
                        };
                        row.push((col_index[&p], Entry::Mono(rest, sign)));
                    }
                }
                if !row.is_empty() {
                    rows.push(row);
                }
            }

            // sample points of the previous-stage state on live base charts
            let mut witnesses: Vec<(u64, BTreeMap<VariableId, u64>)> = Vec::new();
            for id in &run.base_live {
                let st = &states[id];
                if st.status != ChartStatus::Live {
                    continue;
                }
                let chart = run.atlas.chart(*id);
                let polys = stage_system(model, chart, st, &fstar, k0);
                for (p, vars, sols) in sample_state_points(chart, &polys, opts) {
                    for s in sols {
                        let assign: BTreeMap<VariableId, u64> =
                            vars.iter().cloned().zip(s.iter().copied()).collect();
                        witnesses.push((p, assign));
                    }
                }
            }
            if witnesses.is_empty() {
                warnings.push(format!(
                    "stage oracle undecided for relation {} (no witnesses)",
                    k0 + 1
                ));
                for id in &run.base_live {
                    let st = states.get_mut(id).unwrap();
                    if st.status == ChartStatus::Live {
                        st.status = ChartStatus::Undecided(format!(
                            "no generic witnesses at model stage {}",
                            k0 + 1
                        ));
                    }
                }
                continue;
            }

            // evaluate the coefficient matrix at each witness; take the max rank
            let eval_row = |row: &Vec<(usize, Entry)>,
                            p: u64,
                            assign: &BTreeMap<VariableId, u64>|
             -> Vec<u64> {
                let mut out = vec![0u64; cols.len()];
                for (ci, e) in row {
                    let v = match e {
                        Entry::Const(c) => c.rem_euclid(p as i64) as u64,
                        Entry::Mono(m, sign) => {
                            let mut acc = sign.rem_euclid(p as i64) as u64;
                            for (var, exp) in &m.0 {
                                // absorbed pairs evaluate to 1 on their charts
                                let b = assign.get(var).copied().unwrap_or(1);
                                for _ in 0..*exp {
                                    acc = acc * (b % p) % p;
                                }
                            }
                            acc
                        }
                    };
                    out[*ci] = (out[*ci] + v) % p;
                }
                out
            };
            let mut best: Option<(usize, usize)> = None; // (witness idx, rank)
            let mut mats: Vec<Vec<Vec<u64>>> = Vec::new();
            for (wi, (p, assign)) in witnesses.iter().enumerate() {
                let mat: Vec<Vec<u64>> = rows.iter().map(|r| eval_row(r, *p, assign)).collect();
                let rk = rank_mod_p(mat.clone(), *p);
                mats.push(mat);
                if best.map(|(_, br)| rk > br).unwrap_or(true) {
                    best = Some((wi, rk));
                }
            }
            let (bw, max_rank) = best.unwrap();

            // lexicographically first maximal-rank column set
            let mut det_cols: Vec<usize> = Vec::new();
            {
                let mat = &mats[bw];
                let p = witnesses[bw].0;
                for c in 0..cols.len() {
                    let mut trial = det_cols.clone();
                    trial.push(c);
                    let sub: Vec<Vec<u64>> = mat
                        .iter()
                        .map(|r| trial.iter().map(|ci| r[*ci]).collect())
                        .collect();
                    if rank_mod_p(sub, p) == trial.len() {
                        det_cols = trial;
                        if det_cols.len() == max_rank {
                            break;
                        }
                    }
                }
            }
            for c in &det_cols {
                lambda_det[k0].insert(cols[*c].clone());
            }
            for (c, p) in cols.iter().enumerate() {
                if !det_cols.contains(&c) {
                    lambda_one[k0].insert(p.clone());
                }
            }

            // solve at every max-rank witness; pairs identically zero join
            // the pinned-to-zero set
            let mut always_zero: Vec<bool> = vec![true; det_cols.len()];
            let mut solved_any = false;
            for (wi, (p, _)) in witnesses.iter().enumerate() {
                let mat = &mats[wi];
                if rank_mod_p(mat.clone(), *p) < max_rank {
                    continue;
                }
                // rhs = -(sum of non-det columns), det columns solved
                let mut aug: Vec<Vec<u64>> = Vec::new();
                for r in mat {
                    let mut row: Vec<u64> = det_cols.iter().map(|c| r[*c]).collect();
                    let mut rhs = 0u64;
                    for (c, val) in r.iter().enumerate() {
                        if !det_cols.contains(&c) {
                            rhs = (rhs + val) % p;
                        }
                    }
                    row.push((*p - rhs % p) % p);
                    aug.push(row);
                }
                match solve_unique(aug, det_cols.len(), *p) {
                    Some(sol) => {
                        solved_any = true;
                        for (i, v) in sol.iter().enumerate() {
                            if *v != 0 {
                                always_zero[i] = false;
                            }
                        }
                    }
                    None => {
                        warnings.push(format!(
                            "inconsistent pinned system for relation {} at a witness; upstream bug suspected",
                            k0 + 1
                        ));
                    }
                }
            }
            if solved_any {
                for (i, c) in det_cols.iter().enumerate() {
                    if always_zero[i] {
                        lambda_zero[k0].insert(cols[*c].clone());
                    }
                }
            }
            let pinned = lambda_zero[k0].len() + lambda_one[k0].len();
            fstar[k0] = pinned < model.relations[k0].pairs.len();
        }

        // push the pins onto every live base chart
        for id in &run.base_live {
            let st = states.get_mut(id).unwrap();
            if st.status != ChartStatus::Live {
                continue;
            }
            let chart = run.atlas.chart(*id);
            let absorbed: BTreeSet<&PairKey> = chart.base.lambda_o.values().collect();
            for p in &lambda_zero[k0] {
                if absorbed.contains(p) {
                    st.status = ChartStatus::Excluded(format!(
                        "pair {p} pinned to zero but absorbed on this chart"
                    ));
                    break;
                }
                st.zero.insert(VariableId::Pair(p.clone()));
            }
            if st.status != ChartStatus::Live {
                continue;
            }
            for p in &lambda_one[k0] {
                if !absorbed.contains(p) {
                    st.one.insert(VariableId::Pair(p.clone()));
                }
            }
        }
    }
    (fstar, lambda_zero, lambda_one, lambda_det)
}

/// System presenting the stage-k transform on a base chart: pins, binomials
/// of relations before k, quotient binomials supported before k, surviving
/// linearized relations before k, and the de-homogenized relations from k on.
fn stage_system(
    model: &ModelSystem,
    chart: &Chart,
    state: &ChartState,
    fstar: &[bool],
    k0: usize,
) -> Vec<Polynomial> {
    let pair_block: BTreeMap<PairKey, usize> = model
        .relations
        .iter()
        .enumerate()
        .flat_map(|(k, r)| r.pairs.iter().map(move |p| (p.clone(), k)))
        .collect();
    let mut out = Vec::new();
    for v in &state.zero {
        out.push(Polynomial::var(FieldTag::Q, v.clone()));
    }
    for v in &state.one {
        out.push(
            Polynomial::var(FieldTag::Q, v.clone())
                .sub(&Polynomial::one(FieldTag::Q))
                .unwrap(),
        );
    }
    for b in &chart.mains {
        if b.k <= k0 {
            out.push(crate::chart::binomial_poly(&b.plus, &b.minus));
        }
    }
    if let Some(res) = &chart.residuals {
        for r in res {
            if r.k <= k0 {
                out.push(crate::chart::binomial_poly(&r.lhs, &r.rhs));
            }
        }
    }
    for (l, r) in &chart.quotients {
        let max_block = l
            .vars()
            .chain(r.vars())
            .filter_map(|v| match v {
                VariableId::Pair(p) => Some(pair_block[p] + 1),
                VariableId::ExcPair(p) => Some(pair_block[p] + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        if max_block <= k0 {
            out.push(crate::chart::binomial_poly(l, r));
        }
    }
    for (j0, l) in chart.linears.iter().enumerate() {
        if j0 < k0 && fstar[j0] {
            out.push(l.clone());
        }
    }
    for (j0, r) in model.relations.iter().enumerate() {
        if j0 >= k0 {
            out.push(r.dehom.clone());
        }
    }
    out
}

#[allow(clippy::needless_range_loop)]
fn solve_unique(mut aug: Vec<Vec<u64>>, ncols: usize, p: u64) -> Option<Vec<u64>> {
    let rows = aug.len();
    let mut piv: Vec<Option<usize>> = vec![None; ncols];
    let mut r = 0usize;
    for c in 0..ncols {
        if r >= rows {
            break;
        }
        if let Some(pr) = (r..rows).find(|&i| !aug[i][c].is_multiple_of(p)) {
            aug.swap(r, pr);
            let inv = mod_inverse(aug[r][c] % p, p);
            for x in aug[r].iter_mut() {
                *x = *x % p * inv % p;
            }
            for i in 0..rows {
                if i != r && !aug[i][c].is_multiple_of(p) {
                    let f = aug[i][c] % p;
                    for cc in 0..=ncols {
                        aug[i][cc] = (aug[i][cc] + (p - f) * aug[r][cc]) % p;
                    }
                }
            }
            piv[c] = Some(r);
            r += 1;
        }
    }
    // inconsistency: a zero row with nonzero rhs
    for row in &aug {
        if row[..ncols].iter().all(|x| *x % p == 0) && row[ncols] % p != 0 {
            return None;
        }
    }
    Some(
        (0..ncols)
            .map(|c| piv[c].map(|r| aug[r][ncols] % p).unwrap_or(0))
            .collect(),
    )
}

fn exc_name(v: &VariableId) -> VariableId {
    match v {
        VariableId::Coord(u) => VariableId::ExcCoord(u.clone()),
        VariableId::Pair(p) => VariableId::ExcPair(p.clone()),
        other => other.clone(),
    }
}

/// Replay the tower steps over the transform states.
pub fn run_gamma_pipeline(run: &TowerRun, gamma: &GammaScheme, opts: &GammaOptions) -> GammaRun {
    let mut warnings = Vec::new();
    let mut states: BTreeMap<ChartId, ChartState> = BTreeMap::new();
    for id in &run.base_live {
        let mut st = ChartState::live();
        for u in &gamma.gamma {
            st.zero.insert(VariableId::Coord(u.clone()));
        }
        states.insert(*id, st);
    }

    let (fstar, lambda_zero, lambda_one, lambda_det) =
        model_stage(run, gamma, opts, &mut states, &mut warnings);

    for step in &run.steps {
        for (parent, c0, c1) in &step.affected {
            let pst = states[parent].clone();
            if pst.status != ChartStatus::Live {
                states.insert(*c0, pst.clone());
                states.insert(*c1, pst);
                continue;
            }
            let parent_chart = run.atlas.chart(*parent);
            for child_id in [c0, c1] {
                let child = run.atlas.chart(*child_id);
                let tr = child.transition.as_ref().unwrap();
                let (v0, v1) = &tr.center_vars;
                let (absorbed, survivor) = if tr.side == 0 { (v0, v1) } else { (v1, v0) };
                let zeta = exc_name(absorbed);
                let contained = pst.zero.contains(v0) && pst.zero.contains(v1);
                let st = if contained {
                    let mut zero: BTreeSet<VariableId> = pst
                        .zero
                        .iter()
                        .filter(|v| *v != v0 && *v != v1)
                        .cloned()
                        .collect();
                    zero.insert(zeta.clone());
                    let one = pst.one.clone();
                    let mut st = ChartState { status: ChartStatus::Live, zero, one };
                    star_branch(run, child, &mut st, survivor, &fstar, opts, &mut warnings, parent_chart, &pst);
                    st
                } else if pst.zero.contains(absorbed) {
                    ChartState::excluded("transform lifts to the sibling side")
                } else if pst.one.contains(absorbed) {
                    let mut one: BTreeSet<VariableId> =
                        pst.one.iter().filter(|v| *v != absorbed).cloned().collect();
                    one.insert(zeta.clone());
                    ChartState { status: ChartStatus::Live, zero: pst.zero.clone(), one }
                } else if pst.one.contains(survivor) {
                    ChartState::excluded(
                        "a pinned-to-one center variable acquires the exceptional factor; covered by the sibling chart",
                    )
                } else {
                    ChartState {
                        status: ChartStatus::Live,
                        zero: pst.zero.clone(),
                        one: pst.one.clone(),
                    }
                };
                debug_assert!(st.zero.intersection(&st.one).next().is_none());
                states.insert(*child_id, st);
            }
        }
    }

    GammaRun {
        gamma: gamma.clone(),
        fstar,
        lambda_zero,
        lambda_one,
        lambda_det,
        states,
        warnings,
    }
}

/// Maximality audit: report chart variables vanishing at every enumerated
/// point of the final transform without being pinned to zero (a finite-field
/// proxy for the maximality of the pinned set; findings are reported, never
/// auto-applied).
pub fn maximality_audit(run: &TowerRun, gr: &GammaRun, opts: &GammaOptions) -> Vec<String> {
    let mut findings = Vec::new();
    for id in &run.final_live {
        let st = gr.state(*id);
        if st.status != ChartStatus::Live {
            continue;
        }
        let chart = run.atlas.chart(*id);
        let polys = state_system(chart, st, &gr.fstar);
        let vars = chart.variables();
        let sys = CompiledSystem::new(vars.clone(), &polys);
        let mut always_zero = vec![true; vars.len()];
        let mut any = false;
        for &p in &opts.primes {
            for sol in enumerate_solutions(
                &sys,
                p,
                opts.exhaustive_threshold,
                opts.sample_budget,
                opts.seed,
            ) {
                any = true;
                for (i, v) in sol.iter().enumerate() {
                    if *v != 0 {
                        always_zero[i] = false;
                    }
                }
            }
        }
        if !any {
            continue;
        }
        for (i, v) in vars.iter().enumerate() {
            if always_zero[i] && !st.zero.contains(v) {
                findings.push(format!(
                    "chart {}: {v} vanishes at every enumerated point but is not pinned to zero",
                    chart.id
                ));
            }
        }
    }
    findings
}

/// The rank-one / rank-zero branch for the surviving center variable on a
/// child chart in the contained case.
#[allow(clippy::too_many_arguments)]
fn star_branch(
    run: &TowerRun,
    child: &Chart,
    st: &mut ChartState,
    survivor: &VariableId,
    fstar: &[bool],
    opts: &GammaOptions,
    warnings: &mut Vec<String>,
    parent_chart: &Chart,
    parent_state: &ChartState,
) {
    let _ = run;
    // restrict the child system by the inherited pins and keep equations
    // containing the survivor; they are linear in it
    let mut sub: BTreeMap<VariableId, Polynomial> = BTreeMap::new();
    for v in &st.zero {
        sub.insert(v.clone(), Polynomial::zero(FieldTag::Q));
    }
    for v in &st.one {
        sub.insert(v.clone(), Polynomial::one(FieldTag::Q));
    }
    let mut eqs: Vec<(Polynomial, Polynomial)> = Vec::new(); // (c, d): c*y + d
    let mut sys = Vec::new();
    for b in &child.mains {
        sys.push(crate::chart::binomial_poly(&b.plus, &b.minus));
    }
    if let Some(res) = &child.residuals {
        for r in res {
            sys.push(crate::chart::binomial_poly(&r.lhs, &r.rhs));
        }
    }
    for (l, r) in &child.quotients {
        sys.push(crate::chart::binomial_poly(l, r));
    }
    for (k0, l) in child.linears.iter().enumerate() {
        if fstar[k0] {
            sys.push(l.clone());
        }
    }
    for eq in sys {
        let restricted = eq.substitute(&sub);
        if restricted.degree_in(survivor) == 0 {
            continue;
        }
        match restricted.split_linear(survivor) {
            Some((c, d)) => eqs.push((c, d)),
            None => {
                warnings.push(format!(
                    "transform system not linear in {survivor} on chart {}; upstream bug suspected",
                    child.id
                ));
                st.status = ChartStatus::Undecided(format!(
                    "nonlinear oracle system in {survivor}"
                ));
                return;
            }
        }
    }
    if eqs.is_empty() {
        // rank zero everywhere: the fiber is cut at the (1,1) section
        st.one.insert(survivor.clone());
        return;
    }

    // sample parent-state points and transfer them to child coordinates
    let polys = state_system(parent_chart, parent_state, fstar);
    let samples = sample_state_points(parent_chart, &polys, opts);
    let tr = child.transition.as_ref().unwrap();
    let (v0, v1) = &tr.center_vars;
    let absorbed = if tr.side == 0 { v0 } else { v1 };
    let zeta = exc_name(absorbed);

    let mut rank_one_seen = false;
    let mut always_zero = true;
    let mut any_point = false;
    for (p, vars, sols) in samples {
        let index: BTreeMap<VariableId, usize> =
            vars.iter().cloned().enumerate().map(|(i, v)| (v, i)).collect();
        for s in sols {
            any_point = true;
            // child coordinates at the lifted point: zeta takes the absorbed
            // variable's value, all other surviving names carry over
            let child_vars = child.variables();
            let mut assign: BTreeMap<VariableId, u64> = BTreeMap::new();
            for v in &child_vars {
                if v == survivor {
                    continue;
                }
                if *v == zeta {
                    assign.insert(v.clone(), s[index[absorbed]]);
                } else if let Some(i) = index.get(v) {
                    assign.insert(v.clone(), s[*i]);
                }
            }
            let eval = |poly: &Polynomial| -> u64 {
                let mut acc = 0u64;
                for (m, c) in &poly.terms {
                    let cv = match c {
                        crate::poly::Coeff::Rat(r) => {
                            let n = r.to_integer();
                            let mag: i64 = num_traits::Signed::abs(&n)
                                .try_into()
                                .expect("small");
                            let v = if num_traits::Signed::is_negative(&n) { -mag } else { mag };
                            v.rem_euclid(p as i64) as u64
                        }
                        crate::poly::Coeff::Fp(v) => *v % p,
                    };
                    let mut t = cv;
                    for (var, e) in &m.0 {
                        let b = assign.get(var).copied().unwrap_or_else(|| {
                            panic!("unassigned variable {var} in star oracle")
                        });
                        t = t * crate::points::mod_pow(b, *e as u64, p) % p;
                    }
                    acc = (acc + t) % p;
                }
                acc
            };
            let mut local_rank1 = false;
            let mut sol_val: Option<u64> = None;
            let mut inconsistent = false;
            for (c, d) in &eqs {
                let cv = eval(c);
                let dv = eval(d);
                if cv != 0 {
                    local_rank1 = true;
                    let y = (p - dv % p) % p * mod_inverse(cv, p) % p;
                    if let Some(prev) = sol_val {
                        if prev != y {
                            inconsistent = true;
                        }
                    }
                    sol_val = Some(y);
                } else if dv != 0 {
                    inconsistent = true;
                }
            }
            if inconsistent {
                // a special point off the dense subset; skip it
                continue;
            }
            if local_rank1 {
                rank_one_seen = true;
                if sol_val != Some(0) {
                    always_zero = false;
                }
            }
        }
    }
    if !any_point {
        st.status = ChartStatus::Undecided(format!(
            "no witnesses for the rank oracle at chart {}",
            child.id
        ));
        return;
    }
    if rank_one_seen {
        if always_zero {
            st.zero.insert(survivor.clone());
        }
    } else {
        st.one.insert(survivor.clone());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indices::IndexTuple;
    use crate::tower::{run_full_tower, LambdaPolicy, TowerOptions};
    use std::sync::Arc;

    fn t(v: &[u8]) -> IndexTuple {
        IndexTuple::new(v.to_vec())
    }

    #[test]
    fn uniform_matroid_gives_empty_gamma() {
        let model = ModelSystem::build(2, 4, &t(&[1, 2]), 3).unwrap();
        let m = Matroid::uniform(2, 4);
        let g = gamma_from_matroid(&m, &model).unwrap();
        assert!(g.gamma.is_empty());
    }

    #[test]
    fn tightened_matroid_gives_singleton() {
        let model = ModelSystem::build(2, 4, &t(&[1, 2]), 3).unwrap();
        let mut over = BTreeMap::new();
        over.insert(vec![1u8, 2], 1usize);
        let m = Matroid::with_overrides(2, 4, &over).unwrap();
        let g = gamma_from_matroid(&m, &model).unwrap();
        assert_eq!(g.gamma.into_iter().collect::<Vec<_>>(), vec![t(&[3, 4])]);
    }

    #[test]
    fn invalid_matroid_rejected() {
        // lowering d_{12} below the generic value breaks the inequality
        let mut over = BTreeMap::new();
        over.insert(vec![1u8, 2, 3, 4], 1usize);
        assert!(Matroid::with_overrides(2, 4, &over).is_err());
    }

    #[test]
    fn relevance_examples() {
        let model = ModelSystem::build(2, 4, &t(&[1, 2]), 3).unwrap();
        let empty = GammaScheme::empty();
        assert!(gamma_relevance(&model, 0, &empty));
        let g34 = GammaScheme::new(&model, [t(&[3, 4])]).unwrap();
        assert!(gamma_relevance(&model, 0, &g34));
        let g3 = GammaScheme::new(&model, [t(&[3, 4]), t(&[1, 3]), t(&[1, 4])]).unwrap();
        assert!(!gamma_relevance(&model, 0, &g3));
    }

    #[test]
    fn empty_gamma_reproduces_tower_states() {
        let model = Arc::new(ModelSystem::build(2, 4, &t(&[1, 2]), 3).unwrap());
        let run = run_full_tower(model, &LambdaPolicy::All, &TowerOptions::default()).unwrap();
        let g = GammaScheme::empty();
        let gr = run_gamma_pipeline(&run, &g, &GammaOptions::default());
        assert!(gr.fstar.iter().all(|b| *b));
        for id in &run.final_live {
            let st = gr.state(*id);
            assert_eq!(st.status, ChartStatus::Live);
            assert!(st.zero.is_empty());
            assert!(st.one.is_empty());
        }
    }
}

#[cfg(test)]
mod pipeline_tests {
    use super::*;
    use crate::indices::IndexTuple;
    use crate::tower::{run_full_tower, LambdaPolicy, TowerOptions};
    use std::sync::Arc;

    fn t(v: &[u8]) -> IndexTuple {
        IndexTuple::new(v.to_vec())
    }

    #[test]
    fn cone_model_stage_sets() {
        let model = Arc::new(ModelSystem::build(2, 4, &t(&[1, 2]), 3).unwrap());
        let run = run_full_tower(model.clone(), &LambdaPolicy::All, &TowerOptions::default()).unwrap();
        let gamma = GammaScheme::new(&model, [t(&[3, 4])]).unwrap();
        let gr = run_gamma_pipeline(&run, &gamma, &GammaOptions::default());
        // the single relation stays relevant and survives
        assert_eq!(gr.fstar, vec![true]);
        // the leading pair is pinned to zero, nothing pinned to one
        let lead = PairKey::new(t(&[1, 2]), t(&[3, 4]));
        assert_eq!(gr.lambda_zero[0].iter().collect::<Vec<_>>(), vec![&lead]);
        assert!(gr.lambda_one[0].is_empty());
        // base charts: the one absorbing the leading pair is excluded, the
        // other two carry the pins
        let mut excluded = 0;
        let mut live = 0;
        for id in &run.base_live {
            let st = gr.state(*id);
            let chart = run.atlas.chart(*id);
            let absorbed = chart.base.lambda_o[&0].clone();
            if absorbed == lead {
                assert!(matches!(st.status, ChartStatus::Excluded(_)));
                excluded += 1;
            } else {
                assert_eq!(st.status, ChartStatus::Live);
                assert!(st.zero.contains(&VariableId::Coord(t(&[3, 4]))));
                assert!(st.zero.contains(&VariableId::Pair(lead.clone())));
                assert!(st.one.is_empty());
                live += 1;
            }
        }
        assert_eq!((excluded, live), (1, 2));
        // pins stay disjoint on every chart of the pipeline
        for st in gr.states.values() {
            assert!(st.zero.intersection(&st.one).next().is_none());
        }
        assert!(!gr.has_undecided());
    }

    #[test]
    fn irrelevant_relation_is_dropped_when_fully_pinned() {
        // Gr(2,4) with every coordinate of the relation pinned: irrelevant,
        // and the linear relation must not survive when all pairs get pinned
        let model = Arc::new(ModelSystem::build(2, 4, &t(&[1, 2]), 3).unwrap());
        let run = run_full_tower(model.clone(), &LambdaPolicy::All, &TowerOptions::default()).unwrap();
        let gamma = GammaScheme::new(
            &model,
            [t(&[3, 4]), t(&[1, 3]), t(&[1, 4])],
        )
        .unwrap();
        assert!(!gamma_relevance(&model, 0, &gamma));
        let gr = run_gamma_pipeline(&run, &gamma, &GammaOptions::default());
        // Lambda splits the three pairs between det/one; pinned columns that
        // solve to zero join lambda_zero
        let total = gr.lambda_zero[0].len() + gr.lambda_one[0].len();
        let det = gr.lambda_det[0].len();
        assert!(det <= model.relations[0].pairs.len());
        assert!(total <= model.relations[0].pairs.len());
        // surviving flag consistent with the pinning
        assert_eq!(
            gr.fstar[0],
            total < model.relations[0].pairs.len()
        );
    }
}

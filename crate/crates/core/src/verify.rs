//! Smoothness certification of the final transforms: finite-field point
//! enumeration, original/intrinsic classification of main binomials, block
//! Jacobian assembly, and full-rank checks with a second independent
//! full-Jacobian cross-check.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::Serialize;

use crate::chart::{Chart, ChartId};
use crate::gamma::{ChartStatus, GammaRun};
use crate::points::{enumerate_solutions, mod_inverse, rank_mod_p, CompiledSystem};
use crate::poly::{Coeff, FieldTag, Monomial, PairKey, Polynomial, VariableId};
use crate::tower::TowerRun;

#[derive(Debug, Clone, Serialize)]
pub struct VerifyOptions {
    pub primes: Vec<u64>,
    pub exhaustive_threshold: usize,
    pub sample_budget: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            primes: vec![3, 5],
            exhaustive_threshold: 16,
            sample_budget: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Pass,
    Fail,
    Partial,
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub prime: u64,
    pub point: Vec<u64>,
    pub reason: String,
    pub block: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChartReport {
    pub id: ChartId,
    pub points: BTreeMap<String, usize>,
    pub expected_rank: usize,
    pub min_rank: usize,
    pub empty: bool,
    pub undecided: bool,
    pub failures: Vec<Failure>,
    /// Tangent dimensions observed, keyed by the vanishing pattern of the
    /// exceptional parameters (a component marker).
    pub tangent_dims: BTreeMap<String, BTreeSet<usize>>,
    pub termination_holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SmoothnessReport {
    pub verdict: Verdict,
    pub charts: Vec<ChartReport>,
    pub warnings: Vec<String>,
}

/// Case split of one relation block at a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BlockCase {
    Alpha,
    Beta,
    Gamma,
}

#[derive(Debug, Clone)]
pub struct BlockClassification {
    pub k: usize,
    pub case: BlockCase,
    /// tau indices of original main binomials.
    pub original: Vec<usize>,
    /// tau indices of intrinsic main binomials.
    pub intrinsic: Vec<usize>,
}

/// A polynomial compiled onto the free-variable index of a chart.
#[derive(Debug, Clone)]
struct Compiled {
    terms: Vec<(i64, Vec<(usize, u32)>)>,
}

impl Compiled {
    fn new(poly: &Polynomial, index: &BTreeMap<VariableId, usize>) -> Compiled {
        let terms = poly
            .terms
            .iter()
            .map(|(m, c)| {
                let c = match c {
                    Coeff::Rat(r) => {
                        let n = r.to_integer();
                        let mag: i64 = num_traits::Signed::abs(&n).try_into().expect("small");
                        if num_traits::Signed::is_negative(&n) {
                            -mag
                        } else {
                            mag
                        }
                    }
                    Coeff::Fp(v) => *v as i64,
                };
                (c, m.0.iter().map(|(v, e)| (index[v], *e)).collect())
            })
            .collect();
        Compiled { terms }
    }

    fn eval(&self, p: u64, pt: &[u64]) -> u64 {
        let mut acc = 0u64;
        for (c, mono) in &self.terms {
            let mut t = c.rem_euclid(p as i64) as u64;
            for (vi, e) in mono {
                t = t * crate::points::mod_pow(pt[*vi] % p, *e as u64, p) % p;
                if t == 0 {
                    break;
                }
            }
            acc = (acc + t) % p;
        }
        acc
    }
}

/// One defining equation with its precompiled partial derivatives.
#[derive(Debug, Clone)]
struct Row {
    /// Sparse derivative per free-variable index.
    partials: Vec<(usize, Compiled)>,
}

impl Row {
    fn new(poly: &Polynomial, index: &BTreeMap<VariableId, usize>) -> Row {
        let partials = poly
            .variables()
            .into_iter()
            .map(|v| (index[&v], Compiled::new(&poly.partial_derivative(&v), index)))
            .collect();
        Row { partials }
    }

    fn gradient(&self, p: u64, pt: &[u64], n: usize) -> Vec<u64> {
        let mut g = vec![0u64; n];
        for (vi, d) in &self.partials {
            g[*vi] = d.eval(p, pt);
        }
        g
    }
}

/// Restrict a polynomial by the pinned variables of a transform state.
fn restrict(
    poly: &Polynomial,
    zero: &BTreeSet<VariableId>,
    one: &BTreeSet<VariableId>,
) -> Polynomial {
    let mut sub: BTreeMap<VariableId, Polynomial> = BTreeMap::new();
    for v in zero {
        sub.insert(v.clone(), Polynomial::zero(FieldTag::Q));
    }
    for v in one {
        sub.insert(v.clone(), Polynomial::one(FieldTag::Q));
    }
    poly.substitute(&sub)
}

/// The restricted defining system of a transform on one final chart, with
/// everything precompiled for pointwise work.
pub struct ChartContext {
    pub free: Vec<VariableId>,
    pub index: BTreeMap<VariableId, usize>,
    /// All non-vanishing restricted equations (mains, quotients, surviving
    /// linears).
    polys: Vec<Polynomial>,
    rows_all: Vec<Row>,
    /// Restricted main binomials by (k, tau), possibly identically zero.
    mains: BTreeMap<(usize, usize), (Polynomial, Option<Row>)>,
    /// Restricted linearized relations per relation index (0-based).
    linears: Vec<(Polynomial, Option<Row>)>,
    /// Plus/minus monomial evaluators of the transported mains.
    main_terms: Vec<((usize, usize), Compiled, Compiled)>,
    /// Pullback evaluators of the base coordinates feeding classification.
    base_plus: Vec<((usize, usize), Compiled)>,
    /// Exceptional variable indices on this chart.
    exceptional: Vec<usize>,
    /// Values pinned by the transform state, applied before evaluating
    /// monomials given in unrestricted chart variables.
    pin_values: BTreeMap<VariableId, u64>,
}

pub fn chart_context(run: &TowerRun, chart: &Chart, gamma_run: &GammaRun) -> ChartContext {
    let st = gamma_run.state(chart.id);
    let pinned: BTreeSet<VariableId> = st.zero.union(&st.one).cloned().collect();
    let free: Vec<VariableId> = chart
        .variables()
        .into_iter()
        .filter(|v| !pinned.contains(v))
        .collect();
    let index: BTreeMap<VariableId, usize> = free
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, v)| (v, i))
        .collect();
    let mut pin_values: BTreeMap<VariableId, u64> = BTreeMap::new();
    for v in &st.zero {
        pin_values.insert(v.clone(), 0);
    }
    for v in &st.one {
        pin_values.insert(v.clone(), 1);
    }

    let mut polys = Vec::new();
    let mut rows_all = Vec::new();
    let mut mains = BTreeMap::new();
    for b in &chart.mains {
        let r = restrict(
            &crate::chart::binomial_poly(&b.plus, &b.minus),
            &st.zero,
            &st.one,
        );
        let row = if r.is_zero() {
            None
        } else {
            polys.push(r.clone());
            rows_all.push(Row::new(&r, &index));
            Some(Row::new(&r, &index))
        };
        mains.insert((b.k, b.tau), (r, row));
    }
    for (l, rr) in &chart.quotients {
        let q = restrict(&crate::chart::binomial_poly(l, rr), &st.zero, &st.one);
        if !q.is_zero() {
            rows_all.push(Row::new(&q, &index));
            polys.push(q);
        }
    }
    let mut linears = Vec::new();
    for (k0, l) in chart.linears.iter().enumerate() {
        let r = restrict(l, &st.zero, &st.one);
        let row = if gamma_run.fstar[k0] && !r.is_zero() {
            polys.push(r.clone());
            rows_all.push(Row::new(&r, &index));
            Some(Row::new(&r, &index))
        } else {
            None
        };
        linears.push((r, row));
    }

    // monomial evaluators with pins folded in as constants
    let fold = |m: &Monomial| -> Option<Vec<(usize, u32)>> {
        let mut out = Vec::new();
        for (v, e) in &m.0 {
            match pin_values.get(v) {
                Some(0) => return None, // the monomial vanishes identically
                Some(_) => {}
                None => out.push((index[v], *e)),
            }
        }
        Some(out)
    };
    let mono_compiled = |m: &Monomial| -> Compiled {
        match fold(m) {
            None => Compiled { terms: vec![] },
            Some(t) => Compiled { terms: vec![(1, t)] },
        }
    };
    let main_terms = chart
        .mains
        .iter()
        .map(|b| ((b.k, b.tau), mono_compiled(&b.plus), mono_compiled(&b.minus)))
        .collect();

    // base plus-term of every main binomial: product of base-variable
    // pullbacks (absorbed base pairs contribute 1)
    let base_plus = run
        .model
        .mains
        .iter()
        .map(|b| {
            let mut mono = Monomial::one();
            for (v, e) in &b.plus.0 {
                match chart.pullback.get(v) {
                    None => {}
                    Some(pb) => {
                        for _ in 0..*e {
                            mono = mono.mul(pb);
                        }
                    }
                }
            }
            ((b.k, b.tau), mono_compiled(&mono))
        })
        .collect();

    let exceptional = chart
        .exceptional_vars()
        .into_iter()
        .filter_map(|v| index.get(&v).copied())
        .collect();

    ChartContext {
        free,
        index,
        polys,
        rows_all,
        mains,
        linears,
        main_terms,
        base_plus,
        exceptional,
        pin_values,
    }
}

/// Enumerated points of the restricted system on one chart over one prime.
pub fn enumerate_points(ctx: &ChartContext, p: u64, opts: &VerifyOptions) -> Vec<Vec<u64>> {
    let compiled = CompiledSystem::new(ctx.free.clone(), &ctx.polys);
    enumerate_solutions(
        &compiled,
        p,
        opts.exhaustive_threshold,
        opts.sample_budget,
        opts.seed,
    )
}

/// Classify every block at one point: a main binomial is original when its
/// base-chart image terminates (both terms nonzero) at the image point.
pub fn classify_blocks_ctx(
    run: &TowerRun,
    chart: &Chart,
    ctx: &ChartContext,
    p: u64,
    pt: &[u64],
) -> Vec<BlockClassification> {
    let model = &run.model;
    let mut out = Vec::new();
    for (k0, rel) in model.relations.iter().enumerate() {
        let k = k0 + 1;
        let mut original = Vec::new();
        let mut intrinsic = Vec::new();
        for ((bk, tau), plus) in &ctx.base_plus {
            if *bk != k {
                continue;
            }
            if plus.eval(p, pt) != 0 {
                original.push(*tau);
            } else {
                intrinsic.push(*tau);
            }
        }
        let s_fo_is_lead = chart.base.lambda_o[&k0] == rel.pairs[0];
        let case = if original.is_empty() {
            BlockCase::Alpha
        } else if s_fo_is_lead {
            BlockCase::Beta
        } else {
            BlockCase::Gamma
        };
        out.push(BlockClassification { k, case, original, intrinsic });
    }
    out
}

/// Assemble the block Jacobian at one point: rows per the case split
/// (original binomials, the surviving linearized relation, intrinsic
/// binomials, with identically-zero restrictions dropped), columns chosen
/// as pivot columns under the case-specific preference order. Returns
/// (size, rank).
pub fn assemble_jstar_ctx(
    run: &TowerRun,
    chart: &Chart,
    ctx: &ChartContext,
    gamma_run: &GammaRun,
    p: u64,
    pt: &[u64],
) -> Result<(usize, usize), String> {
    let model = &run.model;
    let classifications = classify_blocks_ctx(run, chart, ctx, p, pt);
    let nfree = ctx.free.len();
    let mut grads: Vec<Vec<u64>> = Vec::new();
    let mut prefs: Vec<VariableId> = Vec::new();
    let push_pref = |v: VariableId, prefs: &mut Vec<VariableId>| {
        if ctx.index.contains_key(&v) && !prefs.contains(&v) {
            prefs.push(v);
        }
    };
    for cls in &classifications {
        let k0 = cls.k - 1;
        let rel = &model.relations[k0];
        let u_f = rel.relation.leading_u.clone().unwrap();
        let lead_pair: PairKey = rel.pairs[0].clone();
        match cls.case {
            BlockCase::Alpha => {}
            BlockCase::Beta => {
                push_pref(VariableId::Coord(u_f.clone()), &mut prefs);
            }
            BlockCase::Gamma => {
                push_pref(VariableId::Coord(u_f.clone()), &mut prefs);
                push_pref(VariableId::Pair(lead_pair.clone()), &mut prefs);
            }
        }
        for tau in &cls.original {
            let (poly, row) = &ctx.mains[&(cls.k, *tau)];
            if poly.is_zero() {
                continue;
            }
            push_pref(VariableId::Pair(model.main(cls.k, *tau).pair.clone()), &mut prefs);
            grads.push(row.as_ref().unwrap().gradient(p, pt, nfree));
        }
        if let (_, Some(row)) = &ctx.linears[k0] {
            // preferred column: a pair variable whose term survives at z
            let (poly, _) = &ctx.linears[k0];
            for v in poly.variables() {
                if matches!(v, VariableId::Pair(_) | VariableId::ExcPair(_)) {
                    push_pref(v, &mut prefs);
                }
            }
            grads.push(row.gradient(p, pt, nfree));
        }
        for tau in &cls.intrinsic {
            let (poly, row) = &ctx.mains[&(cls.k, *tau)];
            if poly.is_zero() {
                continue;
            }
            grads.push(row.as_ref().unwrap().gradient(p, pt, nfree));
        }
    }
    let size = grads.len();
    // column order: prescriptions first, then the canonical order
    let mut order: Vec<usize> = prefs.iter().map(|v| ctx.index[v]).collect();
    for i in 0..nfree {
        if !order.contains(&i) {
            order.push(i);
        }
    }
    let reordered: Vec<Vec<u64>> = grads
        .iter()
        .map(|g| order.iter().map(|c| g[*c]).collect())
        .collect();
    let rank = rank_mod_p(reordered, p);
    let _ = gamma_run;
    Ok((size, rank))
}

fn certify_chart(
    run: &TowerRun,
    gamma_run: &GammaRun,
    id: ChartId,
    opts: &VerifyOptions,
) -> ChartReport {
    let chart = run.atlas.chart(id);
    let state = gamma_run.state(id);
    if let ChartStatus::Undecided(_) = state.status {
        return ChartReport {
            id,
            points: BTreeMap::new(),
            expected_rank: 0,
            min_rank: 0,
            empty: false,
            undecided: true,
            failures: Vec::new(),
            tangent_dims: BTreeMap::new(),
            termination_holds: true,
        };
    }
    let ctx = chart_context(run, chart, gamma_run);

    let mut points_per_prime = BTreeMap::new();
    let mut failures = Vec::new();
    let mut expected_rank = 0usize;
    let mut min_rank = usize::MAX;
    let mut tangent_dims: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    let mut any_point = false;
    let mut termination_holds = true;

    for &p in &opts.primes {
        let pts = enumerate_points(&ctx, p, opts);
        points_per_prime.insert(p.to_string(), pts.len());
        for pt in &pts {
            any_point = true;
            for ((k, tau), plus, minus) in &ctx.main_terms {
                if plus.eval(p, pt) == 0 && minus.eval(p, pt) == 0 {
                    termination_holds = false;
                    failures.push(Failure {
                        prime: p,
                        point: pt.clone(),
                        reason: format!("main binomial ({k},{tau}) has both terms zero"),
                        block: Some(*k),
                    });
                }
            }
            match assemble_jstar_ctx(run, chart, &ctx, gamma_run, p, pt) {
                Ok((size, rank)) => {
                    expected_rank = expected_rank.max(size);
                    min_rank = min_rank.min(rank);
                    if rank < size {
                        failures.push(Failure {
                            prime: p,
                            point: pt.clone(),
                            reason: format!("block Jacobian rank {rank} below size {size}"),
                            block: None,
                        });
                    }
                    // cross-check: the full Jacobian dominates the block one
                    let full: Vec<Vec<u64>> = ctx
                        .rows_all
                        .iter()
                        .map(|r| r.gradient(p, pt, ctx.free.len()))
                        .collect();
                    let full_rank = rank_mod_p(full, p);
                    if full_rank < rank {
                        failures.push(Failure {
                            prime: p,
                            point: pt.clone(),
                            reason: format!(
                                "full Jacobian rank {full_rank} below block rank {rank}"
                            ),
                            block: None,
                        });
                    }
                    let marker: String = ctx
                        .exceptional
                        .iter()
                        .map(|vi| if pt[*vi] == 0 { '0' } else { '1' })
                        .collect();
                    tangent_dims
                        .entry(format!("p{p}:{marker}"))
                        .or_default()
                        .insert(ctx.free.len() - full_rank);
                }
                Err(reason) => {
                    failures.push(Failure { prime: p, point: pt.clone(), reason, block: None });
                }
            }
        }
    }
    if min_rank == usize::MAX {
        min_rank = 0;
    }
    ChartReport {
        id,
        points: points_per_prime,
        expected_rank,
        min_rank,
        empty: !any_point,
        undecided: false,
        failures,
        tangent_dims,
        termination_holds,
    }
}

/// Certify the full atlas pointwise over the configured primes.
pub fn certify(run: &TowerRun, gamma_run: &GammaRun, opts: &VerifyOptions) -> SmoothnessReport {
    let reports: Vec<ChartReport> = run
        .final_live
        .par_iter()
        .filter(|id| !matches!(gamma_run.state(**id).status, ChartStatus::Excluded(_)))
        .map(|id| certify_chart(run, gamma_run, *id, opts))
        .collect();
    let mut reports = reports;
    reports.sort_by_key(|r| r.id);
    let mut warnings = gamma_run.warnings.clone();
    for r in &reports {
        for (marker, dims) in &r.tangent_dims {
            if dims.len() > 1 {
                warnings.push(format!(
                    "chart {}: tangent dimension varies on component marker {marker}: {dims:?}",
                    r.id
                ));
            }
        }
    }
    let any_undecided = reports.iter().any(|r| r.undecided) || gamma_run.has_undecided();
    let any_fail = reports.iter().any(|r| !r.failures.is_empty());
    let verdict = if any_fail {
        Verdict::Fail
    } else if any_undecided {
        Verdict::Partial
    } else {
        Verdict::Pass
    };
    SmoothnessReport { verdict, charts: reports, warnings }
}

/// Birationality proxy: on the locus where every exceptional parameter is
/// nonzero, distinct upstairs points (keyed by their full image in the
/// ambient product) map to distinct base points, the images satisfy the
/// downstream equations, and every downstream point lifts somewhere.
#[derive(Debug, Clone, Serialize)]
pub struct ProxyReport {
    pub prime: u64,
    pub upstairs_dense: usize,
    pub downstairs_images: usize,
    pub downstairs_points: usize,
    pub lifted_points: usize,
    pub images_in_scheme: bool,
}

pub fn birational_proxy(
    run: &TowerRun,
    gamma_run: &GammaRun,
    p: u64,
    opts: &VerifyOptions,
) -> ProxyReport {
    let model = &run.model;
    let coords: Vec<VariableId> = crate::indices::index_set(model.d, model.n)
        .unwrap()
        .into_iter()
        .filter(|u| *u != model.m)
        .map(VariableId::Coord)
        .collect();
    let mut down_polys: Vec<Polynomial> =
        model.relations.iter().map(|r| r.dehom.clone()).collect();
    for u in &gamma_run.gamma.gamma {
        down_polys.push(Polynomial::var(FieldTag::Q, VariableId::Coord(u.clone())));
    }
    let down_sys = CompiledSystem::new(coords.clone(), &down_polys);
    let down_points: BTreeSet<Vec<u64>> = enumerate_solutions(
        &down_sys,
        p,
        opts.exhaustive_threshold,
        opts.sample_budget,
        opts.seed,
    )
    .into_iter()
    .collect();

    let mut keys: BTreeSet<(Vec<u64>, Vec<Vec<u64>>)> = BTreeSet::new();
    let mut dense_images: BTreeSet<Vec<u64>> = BTreeSet::new();
    let mut all_images: BTreeSet<Vec<u64>> = BTreeSet::new();
    let mut images_ok = true;
    for id in &run.final_live {
        if gamma_run.state(*id).status != ChartStatus::Live {
            continue;
        }
        let chart = run.atlas.chart(*id);
        let ctx = chart_context(run, chart, gamma_run);
        let pts = enumerate_points(&ctx, p, opts);
        for pt in pts {
            let value_of = |v: &VariableId| -> u64 {
                match ctx.pin_values.get(v) {
                    Some(x) => *x % p,
                    None => pt[ctx.index[v]],
                }
            };
            let eval_pullback = |bv: &VariableId| -> u64 {
                match chart.pullback.get(bv) {
                    None => 1 % p,
                    Some(mono) => {
                        let mut acc = 1u64 % p;
                        for (v, e) in &mono.0 {
                            acc = acc * crate::points::mod_pow(value_of(v), *e as u64, p) % p;
                        }
                        acc
                    }
                }
            };
            let img: Vec<u64> = coords.iter().map(&eval_pullback).collect();
            if !down_sys.satisfied(p, &img) {
                images_ok = false;
            }
            all_images.insert(img.clone());
            // dense locus: every exceptional parameter that survives as a
            // coordinate of the transform is nonzero
            let dense = chart
                .exceptional_vars()
                .iter()
                .all(|v| ctx.pin_values.contains_key(v) || value_of(v) % p != 0);
            if !dense {
                continue;
            }
            let mut pair_vecs: Vec<Vec<u64>> = Vec::new();
            for rel in &model.relations {
                let raw: Vec<u64> = rel
                    .pairs
                    .iter()
                    .map(|pair| eval_pullback(&VariableId::Pair(pair.clone())))
                    .collect();
                let norm = raw.iter().find(|x| **x % p != 0).copied().unwrap_or(1);
                let inv = mod_inverse(norm, p);
                pair_vecs.push(raw.iter().map(|x| x * inv % p).collect());
            }
            dense_images.insert(img.clone());
            keys.insert((img, pair_vecs));
        }
    }
    let lifted = down_points.iter().filter(|d| all_images.contains(*d)).count();
    ProxyReport {
        prime: p,
        upstairs_dense: keys.len(),
        downstairs_images: dense_images.len(),
        downstairs_points: down_points.len(),
        lifted_points: lifted,
        images_in_scheme: images_ok,
    }
}

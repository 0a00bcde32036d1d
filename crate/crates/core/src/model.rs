//! The birational model of a Grassmannian chart: primary Pluecker relations,
//! their de-homogenizations and linearizations, and the main / residual /
//! quotient binomial systems cutting out the model inside the ambient
//! product of projective spaces.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::indices::{
    self, cmp_wp, index_set, is_primary, m_rank, normalize, primary_index_set, upsilon,
    IndexError, IndexTuple, Normalized,
};
use crate::poly::{FieldTag, Monomial, PairKey, Polynomial, VariableId};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("invalid parameters: h must have d-1 entries and k must have d+1 entries")]
    SizeMismatch,
    #[error("tuple {0:?} is not primary for chart {1:?}")]
    NotPrimary(IndexTuple, IndexTuple),
    #[error("chart index m has wrong length")]
    BadChart,
}

/// One signed quadratic term `sign * p_u * p_v` of a Pluecker relation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RelationTerm {
    pub sign: i8,
    pub u: IndexTuple,
    pub v: IndexTuple,
}

impl RelationTerm {
    pub fn pair(&self) -> PairKey {
        PairKey::new(self.u.clone(), self.v.clone())
    }
}

/// A Pluecker relation with normalized (sorted) index tuples; zero terms are
/// dropped. For primary relations the leading term `+ p_m p_u` is stored
/// first and the remaining terms are sorted lexicographically by their pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PluckerRelation {
    pub source_h: IndexTuple,
    pub source_k: IndexTuple,
    /// Index of the leading term in `terms` (always 0 when present).
    pub leading: Option<usize>,
    /// For a primary relation, the tuple `u` with leading term `p_m p_u`.
    pub leading_u: Option<IndexTuple>,
    pub terms: Vec<RelationTerm>,
}

impl PluckerRelation {
    /// Number of non-leading terms (`t_F`, with `t_F + 1` terms in all).
    pub fn t_f(&self) -> usize {
        self.terms.len() - 1
    }

    pub fn rank(&self) -> i64 {
        self.t_f() as i64 - 2
    }

    /// Homogeneous polynomial in `Coord` variables over Q.
    pub fn polynomial(&self) -> Polynomial {
        let mut p = Polynomial::zero(FieldTag::Q);
        for t in &self.terms {
            let m = Monomial::from_vars([
                VariableId::Coord(t.u.clone()),
                VariableId::Coord(t.v.clone()),
            ]);
            p = p
                .add(&Polynomial::from_term(FieldTag::Q, m, t.sign as i64))
                .unwrap();
        }
        p
    }
}

/// Expand the Pluecker relation `F_{h,k}` as an alternating sum, normalizing
/// every coordinate index; returns `None` when all terms vanish.
pub fn plucker_relation(
    h: &IndexTuple,
    k: &IndexTuple,
) -> Result<Option<PluckerRelation>, ModelError> {
    if k.len() != h.len() + 2 {
        return Err(ModelError::SizeMismatch);
    }
    let mut terms = Vec::new();
    for (lambda, kl) in k.0.iter().enumerate() {
        let sign0: i8 = if lambda % 2 == 0 { 1 } else { -1 };
        let mut left: Vec<u8> = h.0.clone();
        left.push(*kl);
        let right: Vec<u8> = k.0.iter().copied().filter(|x| x != kl).collect();
        let (lu, ls) = match normalize(&left) {
            Normalized::Zero => continue,
            Normalized::NonZero { tuple, sign } => (tuple, sign),
        };
        let (rv, rs) = match normalize(&right) {
            Normalized::Zero => continue,
            Normalized::NonZero { tuple, sign } => (tuple, sign),
        };
        terms.push(RelationTerm { sign: sign0 * ls * rs, u: lu, v: rv });
    }
    if terms.is_empty() {
        return Ok(None);
    }
    Ok(Some(PluckerRelation {
        source_h: h.clone(),
        source_k: k.clone(),
        leading: None,
        leading_u: None,
        terms,
    }))
}

/// The primary relation `F_{m,u}`, normalized so the leading term is
/// `+ p_m p_u`, with the remaining terms in lexicographic pair order.
pub fn primary_relation(m: &IndexTuple, u: &IndexTuple) -> Result<PluckerRelation, ModelError> {
    if !is_primary(u, m) {
        return Err(ModelError::NotPrimary(u.clone(), m.clone()));
    }
    let u0 = u.diff(m).0[0];
    let h = u.without(u0);
    let mut klist: Vec<u8> = vec![u0];
    klist.extend_from_slice(&m.0);
    let (k, _) = match normalize(&klist) {
        Normalized::Zero => unreachable!("u0 is not in m"),
        Normalized::NonZero { tuple, sign } => (tuple, sign),
    };
    let mut rel = plucker_relation(&h, &k)?.expect("primary relations never vanish");
    // locate the leading term p_m p_u and normalize its sign to +1
    let lead_pair = PairKey::new(m.clone(), u.clone());
    let pos = rel
        .terms
        .iter()
        .position(|t| t.pair() == lead_pair)
        .expect("leading term present");
    if rel.terms[pos].sign < 0 {
        for t in &mut rel.terms {
            t.sign = -t.sign;
        }
    }
    let lead = rel.terms.remove(pos);
    rel.terms.sort_by(|a, b| {
        let pa = a.pair();
        let pb = b.pair();
        (pa.0 .0.clone(), pa.1 .0.clone()).cmp(&(pb.0 .0.clone(), pb.1 .0.clone()))
    });
    // orient the leading term as (m, u)
    let lead = RelationTerm { sign: lead.sign, u: m.clone(), v: u.clone() };
    rel.terms.insert(0, lead);
    rel.leading = Some(0);
    rel.leading_u = Some(u.clone());
    Ok(rel)
}

/// The ordered primary family `F_1 < ... < F_Upsilon` for the chart `m`.
pub fn primary_family(d: usize, n: usize, m: &IndexTuple) -> Result<Vec<PluckerRelation>, ModelError> {
    if m.len() != d {
        return Err(ModelError::BadChart);
    }
    let prim = primary_index_set(d, n, m)?;
    prim.iter().map(|u| primary_relation(m, u)).collect()
}

/// A main binomial `B_(k,tau) = x_(u_s,v_s) x_{u_F} - x_(m,u_F) x_{u_s} x_{v_s}`,
/// stored as a plus/minus monomial pair (coefficients +1 and -1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MainBinomial {
    /// 1-based index of the relation in the ordered family.
    pub k: usize,
    /// 1-based index of the non-leading term, in lexicographic pair order.
    pub tau: usize,
    /// The pair carried by the plus-term.
    pub pair: PairKey,
    pub plus: Monomial,
    pub minus: Monomial,
}

/// A residual binomial `B_{F,(s,t)}`, terms unordered by convention; we store
/// the `s < t` orientation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResidualBinomial {
    pub k: usize,
    pub s: usize,
    pub t: usize,
    pub lhs: Monomial,
    pub rhs: Monomial,
}

/// A quotient-type binomial: two pure pair-variable monomials with equal
/// images under the product substitution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QuotientBinomial {
    pub lhs: Monomial,
    pub rhs: Monomial,
}

/// Everything the downstream stages need about one primary relation.
#[derive(Debug, Clone, Serialize)]
pub struct RelationData {
    pub relation: PluckerRelation,
    /// De-homogenized polynomial on the chart (p_m = 1).
    pub dehom: Polynomial,
    /// The leading variable `x_u`.
    pub leading_var: VariableId,
    /// Linearized relation: one pair variable per term, signs kept.
    pub linear: Polynomial,
    /// Pair index set Lambda_F, leading pair first, then lex order
    /// (mirrors `relation.terms`).
    pub pairs: Vec<PairKey>,
    pub signs: Vec<i8>,
}

/// The full model for a fixed chart.
#[derive(Debug, Clone)]
pub struct ModelSystem {
    pub d: usize,
    pub n: usize,
    pub m: IndexTuple,
    pub relations: Vec<RelationData>,
    pub mains: Vec<MainBinomial>,
    pub residuals: Vec<ResidualBinomial>,
    pub quotients: Vec<QuotientBinomial>,
    pub rho_degree_bound: usize,
}

impl ModelSystem {
    pub fn build(d: usize, n: usize, m: &IndexTuple, rho_degree_bound: usize) -> Result<Self, ModelError> {
        let family = primary_family(d, n, m)?;
        debug_assert_eq!(family.len(), upsilon(d, n));
        let mut relations = Vec::new();
        for rel in &family {
            let (dehom, leading_var) = dehomogenize(rel, m)?;
            let linear = linearize(rel);
            let pairs: Vec<PairKey> = rel.terms.iter().map(|t| t.pair()).collect();
            let signs: Vec<i8> = rel.terms.iter().map(|t| t.sign).collect();
            relations.push(RelationData {
                relation: rel.clone(),
                dehom,
                leading_var,
                linear,
                pairs,
                signs,
            });
        }
        let mut mains = Vec::new();
        let mut residuals = Vec::new();
        for (i, rel) in family.iter().enumerate() {
            mains.extend(main_binomials(rel, i + 1, m));
            residuals.extend(residual_binomials(rel, i + 1));
        }
        let quotients = quotient_binomials(&family, rho_degree_bound);
        Ok(ModelSystem {
            d,
            n,
            m: m.clone(),
            relations,
            mains,
            residuals,
            quotients,
            rho_degree_bound,
        })
    }

    pub fn upsilon(&self) -> usize {
        self.relations.len()
    }

    /// Main binomial by its (k, tau) index (1-based), in lex order.
    pub fn main(&self, k: usize, tau: usize) -> &MainBinomial {
        self.mains
            .iter()
            .find(|b| b.k == k && b.tau == tau)
            .expect("main binomial index in range")
    }

    /// Rewrites the leading variable of every primary relation as a
    /// polynomial in basic variables, by rank induction.
    pub fn express_in_basic(&self, u: &IndexTuple) -> Result<Polynomial, ModelError> {
        let mut cache: BTreeMap<IndexTuple, Polynomial> = BTreeMap::new();
        self.express_rec(u, &mut cache)
    }

    fn express_rec(
        &self,
        u: &IndexTuple,
        cache: &mut BTreeMap<IndexTuple, Polynomial>,
    ) -> Result<Polynomial, ModelError> {
        if let Some(p) = cache.get(u) {
            return Ok(p.clone());
        }
        let rel = primary_relation(&self.m, u)?;
        // dehomogenized: x_u + sum sgn(s) x_{u_s} x_{v_s}  =>  x_u = -sum ...
        let mut acc = Polynomial::zero(FieldTag::Q);
        for t in rel.terms.iter().skip(1) {
            let mut factor = Polynomial::from_term(FieldTag::Q, Monomial::one(), -(t.sign as i64));
            for w in [&t.u, &t.v] {
                let f = if w == &self.m {
                    Polynomial::one(FieldTag::Q)
                } else if is_primary(w, &self.m) {
                    self.express_rec(w, cache)?
                } else {
                    Polynomial::var(FieldTag::Q, VariableId::Coord(w.clone()))
                };
                factor = factor.mul(&f).unwrap();
            }
            acc = acc.add(&factor).unwrap();
        }
        cache.insert(u.clone(), acc.clone());
        Ok(acc)
    }
}

/// De-homogenize a primary relation: `p_m -> 1`, `p_w -> x_w`; returns the
/// polynomial and the leading variable.
pub fn dehomogenize(
    rel: &PluckerRelation,
    m: &IndexTuple,
) -> Result<(Polynomial, VariableId), ModelError> {
    let u_f = rel
        .leading_u
        .clone()
        .ok_or_else(|| ModelError::NotPrimary(rel.source_h.clone(), m.clone()))?;
    let mut p = Polynomial::zero(FieldTag::Q);
    for t in &rel.terms {
        let mut mono = Monomial::one();
        for w in [&t.u, &t.v] {
            if w != m {
                mono = mono.mul_var(&VariableId::Coord(w.clone()), 1);
            }
        }
        p = p
            .add(&Polynomial::from_term(FieldTag::Q, mono, t.sign as i64))
            .unwrap();
    }
    Ok((p, VariableId::Coord(u_f)))
}

/// The linearized relation: one pair variable per term of `F`.
pub fn linearize(rel: &PluckerRelation) -> Polynomial {
    let mut p = Polynomial::zero(FieldTag::Q);
    for t in &rel.terms {
        p = p
            .add(&Polynomial::from_term(
                FieldTag::Q,
                Monomial::var(VariableId::Pair(t.pair())),
                t.sign as i64,
            ))
            .unwrap();
    }
    p
}

/// One main binomial per non-leading term of a primary relation.
pub fn main_binomials(rel: &PluckerRelation, k: usize, m: &IndexTuple) -> Vec<MainBinomial> {
    let u_f = rel.leading_u.clone().expect("primary");
    let lead_pair = PairKey::new(m.clone(), u_f.clone());
    rel.terms
        .iter()
        .skip(1)
        .enumerate()
        .map(|(i, t)| {
            let pair = t.pair();
            let plus = Monomial::from_vars([
                VariableId::Pair(pair.clone()),
                VariableId::Coord(u_f.clone()),
            ]);
            let minus = Monomial::from_vars([
                VariableId::Pair(lead_pair.clone()),
                VariableId::Coord(t.u.clone()),
                VariableId::Coord(t.v.clone()),
            ]);
            MainBinomial { k, tau: i + 1, pair, plus, minus }
        })
        .collect()
}

/// All unordered pairs of non-leading terms give residual binomials.
pub fn residual_binomials(rel: &PluckerRelation, k: usize) -> Vec<ResidualBinomial> {
    let nl: Vec<&RelationTerm> = rel.terms.iter().skip(1).collect();
    let mut out = Vec::new();
    for s in 0..nl.len() {
        for t in (s + 1)..nl.len() {
            let lhs = Monomial::from_vars([
                VariableId::Pair(nl[s].pair()),
                VariableId::Coord(nl[t].u.clone()),
                VariableId::Coord(nl[t].v.clone()),
            ]);
            let rhs = Monomial::from_vars([
                VariableId::Pair(nl[t].pair()),
                VariableId::Coord(nl[s].u.clone()),
                VariableId::Coord(nl[s].v.clone()),
            ]);
            out.push(ResidualBinomial { k, s: s + 1, t: t + 1, lhs, rhs });
        }
    }
    out
}

/// Bounded brute-force enumeration of quotient-type binomials: coprime pairs
/// of distinct pure pair-variable monomials, multi-homogeneous per relation
/// block, with equal and square-free product images, up to the given total
/// degree in pair variables.
pub fn quotient_binomials(family: &[PluckerRelation], bound: usize) -> Vec<QuotientBinomial> {
    // every pair occurs in exactly one relation of the family
    let mut pair_block: BTreeMap<PairKey, usize> = BTreeMap::new();
    for (k, rel) in family.iter().enumerate() {
        for t in &rel.terms {
            pair_block.insert(t.pair(), k);
        }
    }

    // image of a pair monomial under x_(u,v) -> p_u p_v, as a sorted tuple
    // list; None when the image is not square-free
    let image = |mono: &Monomial| -> Option<Vec<IndexTuple>> {
        let mut img: Vec<IndexTuple> = Vec::new();
        for (v, e) in &mono.0 {
            if *e != 1 {
                return None;
            }
            if let VariableId::Pair(p) = v {
                img.push(p.0.clone());
                img.push(p.1.clone());
            } else {
                unreachable!("pure pair monomials only");
            }
        }
        img.sort();
        if img.windows(2).any(|w| w[0] == w[1]) {
            return None;
        }
        Some(img)
    };

    let blocks_of = |mono: &Monomial| -> Vec<usize> {
        let mut b: Vec<usize> = mono
            .vars()
            .map(|v| match v {
                VariableId::Pair(p) => pair_block[p],
                _ => unreachable!(),
            })
            .collect();
        b.sort_unstable();
        b
    };

    // enumerate pair monomials of degree 1..=bound, at most one variable per
    // relation block (the kernel binomials are linear per block)
    let uniq_pairs: Vec<PairKey> = pair_block.keys().cloned().collect();
    let mut monos: Vec<(Monomial, Vec<IndexTuple>, Vec<usize>)> = Vec::new();
    let mut stack: Vec<(usize, Monomial)> = vec![(0, Monomial::one())];
    while let Some((start, mono)) = stack.pop() {
        if !mono.is_one() {
            let blocks = blocks_of(&mono);
            if blocks.windows(2).any(|w| w[0] == w[1]) {
                continue; // two variables from the same block
            }
            if let Some(img) = image(&mono) {
                monos.push((mono.clone(), img, blocks));
            }
        }
        if mono.degree() as usize >= bound {
            continue;
        }
        for (i, pair) in uniq_pairs.iter().enumerate().skip(start) {
            let next = mono.mul_var(&VariableId::Pair(pair.clone()), 1);
            stack.push((i + 1, next));
        }
    }

    // group by image; emit coprime pairs with matching block sets
    let mut groups: HashMap<Vec<IndexTuple>, Vec<usize>> = HashMap::new();
    for (i, (_, img, _)) in monos.iter().enumerate() {
        groups.entry(img.clone()).or_default().push(i);
    }
    let mut out = Vec::new();
    for idxs in groups.values() {
        for a in 0..idxs.len() {
            for b in (a + 1)..idxs.len() {
                let (ma, _, ba) = &monos[idxs[a]];
                let (mb, _, bb) = &monos[idxs[b]];
                if ma == mb || ba != bb {
                    continue;
                }
                if ma.vars().any(|v| mb.contains(v)) {
                    continue;
                }
                let (lhs, rhs) =
                    if ma <= mb { (ma.clone(), mb.clone()) } else { (mb.clone(), ma.clone()) };
                out.push(QuotientBinomial { lhs, rhs });
            }
        }
    }
    out.sort_by_key(|a| (a.lhs.clone(), a.rhs.clone()));
    out.dedup();
    out
}

/// Verify `phi(lhs) = phi(rhs)` after `x_(u,v) -> x_u x_v`; the defining
/// property of kernel binomials.
pub fn product_images_equal(q: &QuotientBinomial) -> bool {
    let expand = |m: &Monomial| -> Monomial {
        let mut out = Monomial::one();
        for (v, e) in &m.0 {
            if let VariableId::Pair(p) = v {
                out = out.mul_var(&VariableId::Coord(p.0.clone()), *e);
                out = out.mul_var(&VariableId::Coord(p.1.clone()), *e);
            }
        }
        out
    };
    expand(&q.lhs) == expand(&q.rhs)
}

pub fn upsilon_of(d: usize, n: usize) -> usize {
    indices::upsilon(d, n)
}

/// Keep only tuples usable as chart indices.
pub fn validate_chart(d: usize, n: usize, m: &IndexTuple) -> Result<(), ModelError> {
    if m.len() != d || m.0.iter().any(|x| *x == 0 || *x as usize > n) {
        return Err(ModelError::BadChart);
    }
    let _ = index_set(d, n)?;
    Ok(())
}

/// Re-exported helpers for tests and reports.
pub fn family_ordering_check(d: usize, n: usize, m: &IndexTuple) -> Result<bool, ModelError> {
    let fam = primary_family(d, n, m)?;
    for w in fam.windows(2) {
        let a = w[0].leading_u.as_ref().unwrap();
        let b = w[1].leading_u.as_ref().unwrap();
        if cmp_wp(a, b, m)? != std::cmp::Ordering::Less {
            return Ok(false);
        }
    }
    Ok(true)
}

/// m-rank of a tuple, re-exported for reports.
pub fn tuple_rank(u: &IndexTuple, m: &IndexTuple) -> Result<usize, ModelError> {
    Ok(m_rank(u, m)?)
}

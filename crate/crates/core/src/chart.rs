//! The blowup-chart tree: standard charts with their variable namespaces,
//! absorbed-label bookkeeping, and the mechanical proper-transform /
//! pullback calculus for transported equations.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::Serialize;

use crate::indices::IndexTuple;
use crate::model::ModelSystem;
use crate::poly::{FieldTag, Monomial, PairKey, Polynomial, VariableId};

pub type ChartId = u32;

/// Identity of an exceptional divisor by the step that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ExcId {
    /// k-th theta blowup (1-based).
    Theta { k: u16 },
    /// wp blowup in round mu, step h, for main binomial (k, tau).
    Wp { k: u16, tau: u16, mu: u16, h: u16 },
    /// eth blowup in round mu, step h, for main binomial (k, tau).
    Eth { k: u16, tau: u16, mu: u16, h: u16 },
}

impl ExcId {
    pub fn label(&self) -> String {
        match self {
            ExcId::Theta { k } => format!("theta[{k}]"),
            ExcId::Wp { k, tau, mu, h } => format!("wp({k},{tau})r{mu}s{h}"),
            ExcId::Eth { k, tau, mu, h } => format!("eth({k},{tau})r{mu}s{h}"),
        }
    }
}

/// A divisor on the ambient scheme: a coordinate divisor, a pair divisor, or
/// an exceptional divisor of an earlier blowup.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum DivisorId {
    Coord(IndexTuple),
    Pair(PairKey),
    Exc(ExcId),
}

impl DivisorId {
    pub fn label(&self) -> String {
        match self {
            DivisorId::Coord(u) => format!("X[{u}]"),
            DivisorId::Pair(p) => format!("X[{p}]"),
            DivisorId::Exc(e) => format!("E[{}]", e.label()),
        }
    }
}

/// Record of the blowup that produced a chart from its parent.
#[derive(Debug, Clone, Serialize)]
pub struct Transition {
    pub step: ExcId,
    pub center: (DivisorId, DivisorId),
    /// 0 when the first center divisor became exceptional, 1 otherwise.
    pub side: u8,
    /// Local center variables on the parent chart, in center order.
    pub center_vars: (VariableId, VariableId),
}

/// Data shared by every chart over one standard base chart.
#[derive(Debug, Clone)]
pub struct BaseInfo {
    /// Chosen absorbed pair per relation (0-based relation index).
    pub lambda_o: BTreeMap<usize, PairKey>,
    /// The free pair coordinates of the base chart.
    pub lambda_star: BTreeSet<PairKey>,
    /// All coordinate tuples except the chart index.
    pub coords: Vec<IndexTuple>,
    pub m: IndexTuple,
}

/// A transported main binomial: plus/minus monomials in chart variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChartMain {
    pub k: usize,
    pub tau: usize,
    pub plus: Monomial,
    pub minus: Monomial,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChartResidual {
    pub k: usize,
    pub s: usize,
    pub t: usize,
    pub lhs: Monomial,
    pub rhs: Monomial,
}

/// Mechanical termination record for one main binomial on one chart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TermRecord {
    pub step: Option<ExcId>,
    pub central: Option<VariableId>,
    pub exceptional: Option<VariableId>,
}

/// A node of the blowup-chart tree.
#[derive(Debug, Clone)]
pub struct Chart {
    pub id: ChartId,
    pub parent: Option<ChartId>,
    pub transition: Option<Transition>,
    pub base: Arc<BaseInfo>,
    /// Coordinate labels absorbed into exceptional parameters, with the
    /// exceptional divisor currently carrying each label on this chart.
    pub e_set: BTreeMap<IndexTuple, ExcId>,
    pub d_set: BTreeMap<PairKey, ExcId>,
    /// Pullback of every base chart variable as a monomial in chart variables.
    pub pullback: BTreeMap<VariableId, Monomial>,
    pub mains: Vec<ChartMain>,
    /// Present through the theta stage, discarded afterwards.
    pub residuals: Option<Vec<ChartResidual>>,
    pub quotients: Vec<(Monomial, Monomial)>,
    /// Pulled-back linearized relations, one per relation of the family.
    pub linears: Vec<Polynomial>,
}

impl Chart {
    /// The free variables of the chart, in canonical order.
    pub fn variables(&self) -> Vec<VariableId> {
        let mut out = Vec::new();
        for u in &self.base.coords {
            if self.e_set.contains_key(u) {
                out.push(VariableId::ExcCoord(u.clone()));
            } else {
                out.push(VariableId::Coord(u.clone()));
            }
        }
        for p in &self.base.lambda_star {
            if self.d_set.contains_key(p) {
                out.push(VariableId::ExcPair(p.clone()));
            } else {
                out.push(VariableId::Pair(p.clone()));
            }
        }
        out
    }

    /// Exceptional parameters among the chart variables.
    pub fn exceptional_vars(&self) -> Vec<VariableId> {
        let mut out: Vec<VariableId> = self
            .e_set
            .keys()
            .map(|u| VariableId::ExcCoord(u.clone()))
            .collect();
        out.extend(self.d_set.keys().map(|p| VariableId::ExcPair(p.clone())));
        out
    }

    /// Local variable cutting out a divisor on this chart, if the divisor
    /// meets it.
    pub fn divisor_var(&self, div: &DivisorId) -> Option<VariableId> {
        match div {
            DivisorId::Coord(u) => {
                if self.e_set.contains_key(u) {
                    None
                } else {
                    Some(VariableId::Coord(u.clone()))
                }
            }
            DivisorId::Pair(p) => {
                if !self.base.lambda_star.contains(p) || self.d_set.contains_key(p) {
                    None
                } else {
                    Some(VariableId::Pair(p.clone()))
                }
            }
            DivisorId::Exc(e) => {
                if let Some((u, _)) = self.e_set.iter().find(|(_, id)| *id == e) {
                    return Some(VariableId::ExcCoord(u.clone()));
                }
                if let Some((p, _)) = self.d_set.iter().find(|(_, id)| *id == e) {
                    return Some(VariableId::ExcPair(p.clone()));
                }
                None
            }
        }
    }

    /// The defining system of the transform of the model on this chart:
    /// mains, residuals (while tracked), quotients, and linears.
    pub fn system(&self) -> Vec<Polynomial> {
        let mut out = Vec::new();
        for b in &self.mains {
            out.push(binomial_poly(&b.plus, &b.minus));
        }
        if let Some(res) = &self.residuals {
            for r in res {
                out.push(binomial_poly(&r.lhs, &r.rhs));
            }
        }
        for (l, r) in &self.quotients {
            out.push(binomial_poly(l, r));
        }
        for l in &self.linears {
            out.push(l.clone());
        }
        out
    }

    /// Serializable dump per the chart JSON schema.
    pub fn dump(&self, stage: &str) -> ChartDump {
        ChartDump {
            id: self.id,
            stage: stage.to_string(),
            parent: self.parent,
            side: self.transition.as_ref().map(|t| t.side),
            e_v: self.e_set.keys().map(|u| u.to_string()).collect(),
            d_v: self.d_set.keys().map(|p| p.to_string()).collect(),
            vars: self.variables().iter().map(|v| v.to_string()).collect(),
            main_binomials: self
                .mains
                .iter()
                .map(|b| format!("{} - {}", b.plus, b.minus))
                .collect(),
            linear: self.linears.iter().map(|l| l.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChartDump {
    pub id: ChartId,
    pub stage: String,
    pub parent: Option<ChartId>,
    pub side: Option<u8>,
    #[serde(rename = "eV")]
    pub e_v: Vec<String>,
    #[serde(rename = "dV")]
    pub d_v: Vec<String>,
    pub vars: Vec<String>,
    pub main_binomials: Vec<String>,
    pub linear: Vec<String>,
}

pub fn binomial_poly(plus: &Monomial, minus: &Monomial) -> Polynomial {
    Polynomial::from_term(FieldTag::Q, plus.clone(), 1)
        .add(&Polynomial::from_term(FieldTag::Q, minus.clone(), -1))
        .unwrap()
}

/// Build the standard base charts of the ambient product for the given
/// absorbed-pair choices. `choices` maps relation index -> chosen pair.
pub fn base_chart(model: &ModelSystem, choices: &BTreeMap<usize, PairKey>, id: ChartId) -> Chart {
    let mut lambda_star: BTreeSet<PairKey> = BTreeSet::new();
    for (k, rel) in model.relations.iter().enumerate() {
        let chosen = &choices[&k];
        for p in &rel.pairs {
            if p != chosen {
                lambda_star.insert(p.clone());
            }
        }
    }
    let coords: Vec<IndexTuple> = crate::indices::index_set(model.d, model.n)
        .expect("validated")
        .into_iter()
        .filter(|u| *u != model.m)
        .collect();
    let base = Arc::new(BaseInfo {
        lambda_o: choices.clone(),
        lambda_star,
        coords,
        m: model.m.clone(),
    });

    // substitution absorbing the chosen pair coordinates
    let absorbed: BTreeSet<PairKey> = choices.values().cloned().collect();
    let absorb = |m: &Monomial| -> Monomial {
        let mut out = Monomial::one();
        for (v, e) in &m.0 {
            match v {
                VariableId::Pair(p) if absorbed.contains(p) => {}
                _ => out = out.mul_var(v, *e),
            }
        }
        out
    };

    let mains = model
        .mains
        .iter()
        .map(|b| ChartMain {
            k: b.k,
            tau: b.tau,
            plus: absorb(&b.plus),
            minus: absorb(&b.minus),
        })
        .collect();
    let residuals = Some(
        model
            .residuals
            .iter()
            .map(|r| ChartResidual {
                k: r.k,
                s: r.s,
                t: r.t,
                lhs: absorb(&r.lhs),
                rhs: absorb(&r.rhs),
            })
            .collect(),
    );
    let quotients = model
        .quotients
        .iter()
        .map(|q| (absorb(&q.lhs), absorb(&q.rhs)))
        .collect();
    let mut sub = BTreeMap::new();
    for p in &absorbed {
        sub.insert(VariableId::Pair(p.clone()), Polynomial::one(FieldTag::Q));
    }
    let linears = model
        .relations
        .iter()
        .map(|r| r.linear.substitute(&sub))
        .collect();

    let mut pullback = BTreeMap::new();
    for u in &base.coords {
        pullback.insert(
            VariableId::Coord(u.clone()),
            Monomial::var(VariableId::Coord(u.clone())),
        );
    }
    for p in &base.lambda_star {
        pullback.insert(
            VariableId::Pair(p.clone()),
            Monomial::var(VariableId::Pair(p.clone())),
        );
    }

    Chart {
        id,
        parent: None,
        transition: None,
        base,
        e_set: BTreeMap::new(),
        d_set: BTreeMap::new(),
        pullback,
        mains,
        residuals,
        quotients,
        linears,
    }
}

/// All base charts under a policy: every combination of absorbed pairs, or a
/// fixed single choice.
pub fn base_charts_all(model: &ModelSystem) -> Vec<BTreeMap<usize, PairKey>> {
    let mut out: Vec<BTreeMap<usize, PairKey>> = vec![BTreeMap::new()];
    for (k, rel) in model.relations.iter().enumerate() {
        let mut next = Vec::new();
        for partial in &out {
            for p in &rel.pairs {
                let mut c = partial.clone();
                c.insert(k, p.clone());
                next.push(c);
            }
        }
        out = next;
    }
    out
}

/// The substitution performed by one codimension-two blowup on a chart:
/// the side-`i` center variable becomes the exceptional parameter `zeta`
/// (possibly renamed), the other acquires a factor of `zeta`.
pub struct BlowupSubst {
    /// Renaming of the absorbed variable (old name -> zeta name).
    pub zeta: VariableId,
    pub absorbed_old: VariableId,
    /// The surviving center variable (same name on parent and child).
    pub survivor: VariableId,
}

impl BlowupSubst {
    /// Apply to a monomial without dividing: old absorbed var -> zeta,
    /// survivor -> zeta * survivor.
    pub fn apply(&self, m: &Monomial) -> Monomial {
        let mut out = Monomial::one();
        for (v, e) in &m.0 {
            if v == &self.absorbed_old {
                out = out.mul_var(&self.zeta, *e);
            } else if v == &self.survivor {
                out = out.mul_var(&self.zeta, *e).mul_var(&self.survivor, *e);
            } else {
                out = out.mul_var(v, *e);
            }
        }
        out
    }

    /// Total degree of a monomial in the two center variables.
    pub fn center_degree(&self, m: &Monomial) -> u32 {
        m.exponent(&self.absorbed_old) + m.exponent(&self.survivor)
    }

    /// Proper transform of a binomial: substitute, then divide both terms by
    /// the minimal power of zeta acquired from the center.
    pub fn proper_transform(&self, plus: &Monomial, minus: &Monomial) -> (Monomial, Monomial) {
        let l = self.center_degree(plus).min(self.center_degree(minus));
        let p = self.apply(plus);
        let q = self.apply(minus);
        (div_pow(&p, &self.zeta, l), div_pow(&q, &self.zeta, l))
    }

    /// Plain pullback for linear relations (no division).
    pub fn pullback_linear(&self, l: &Polynomial) -> Polynomial {
        let mut sub = BTreeMap::new();
        sub.insert(
            self.absorbed_old.clone(),
            Polynomial::var(FieldTag::Q, self.zeta.clone()),
        );
        sub.insert(
            self.survivor.clone(),
            Polynomial::from_term(
                FieldTag::Q,
                Monomial::from_vars([self.zeta.clone(), self.survivor.clone()]),
                1,
            ),
        );
        l.substitute(&sub)
    }
}

fn div_pow(m: &Monomial, v: &VariableId, e: u32) -> Monomial {
    if e == 0 {
        m.clone()
    } else {
        m.div_var(v, e)
    }
}

/// Construct the child chart for one side of a blowup. The caller has checked
/// that both center variables are present on the parent.
pub fn blow_up_chart(
    parent: &Chart,
    center: (&DivisorId, &DivisorId),
    side: u8,
    exc_id: ExcId,
    new_id: ChartId,
) -> Chart {
    let v0 = parent.divisor_var(center.0).expect("center meets chart");
    let v1 = parent.divisor_var(center.1).expect("center meets chart");
    let (absorbed_old, survivor) = if side == 0 { (v0.clone(), v1.clone()) } else { (v1.clone(), v0.clone()) };

    let mut e_set = parent.e_set.clone();
    let mut d_set = parent.d_set.clone();
    let zeta = match &absorbed_old {
        VariableId::Coord(u) => {
            e_set.insert(u.clone(), exc_id);
            VariableId::ExcCoord(u.clone())
        }
        VariableId::Pair(p) => {
            d_set.insert(p.clone(), exc_id);
            VariableId::ExcPair(p.clone())
        }
        VariableId::ExcCoord(u) => {
            e_set.insert(u.clone(), exc_id);
            VariableId::ExcCoord(u.clone())
        }
        VariableId::ExcPair(p) => {
            d_set.insert(p.clone(), exc_id);
            VariableId::ExcPair(p.clone())
        }
    };

    let subst = BlowupSubst { zeta, absorbed_old, survivor };

    let mains = parent
        .mains
        .iter()
        .map(|b| {
            let (plus, minus) = subst.proper_transform(&b.plus, &b.minus);
            ChartMain { k: b.k, tau: b.tau, plus, minus }
        })
        .collect();
    let residuals = parent.residuals.as_ref().map(|res| {
        res.iter()
            .map(|r| {
                let (lhs, rhs) = subst.proper_transform(&r.lhs, &r.rhs);
                ChartResidual { k: r.k, s: r.s, t: r.t, lhs, rhs }
            })
            .collect()
    });
    let quotients = parent
        .quotients
        .iter()
        .map(|(l, r)| subst.proper_transform(l, r))
        .collect();
    let linears = parent
        .linears
        .iter()
        .map(|l| subst.pullback_linear(l))
        .collect();
    let pullback = parent
        .pullback
        .iter()
        .map(|(k, m)| (k.clone(), subst.apply(m)))
        .collect();

    Chart {
        id: new_id,
        parent: Some(parent.id),
        transition: Some(Transition {
            step: exc_id,
            center: (center.0.clone(), center.1.clone()),
            side,
            center_vars: (v0, v1),
        }),
        base: parent.base.clone(),
        e_set,
        d_set,
        pullback,
        mains,
        residuals,
        quotients,
        linears,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indices::IndexTuple;

    fn t(v: &[u8]) -> IndexTuple {
        IndexTuple::new(v.to_vec())
    }

    fn gr24_model() -> ModelSystem {
        ModelSystem::build(2, 4, &t(&[1, 2]), 3).unwrap()
    }

    #[test]
    fn base_chart_counts_and_equations() {
        let model = gr24_model();
        let choices = base_charts_all(&model);
        assert_eq!(choices.len(), 3); // t_F + 1 = 3
        let model25 = ModelSystem::build(2, 5, &t(&[4, 5]), 2).unwrap();
        assert_eq!(base_charts_all(&model25).len(), 27); // product of t_F + 1
        // chart with the leading pair absorbed
        let lead = PairKey::new(t(&[1, 2]), t(&[3, 4]));
        let c = choices.iter().find(|c| c[&0] == lead).unwrap();
        let chart = base_chart(&model, c, 0);
        assert_eq!(chart.variables().len(), 5 + 2); // (C(4,2)-1) + sum t_F
        // B1 on this chart: x_(13,24) x34 - x13 x24
        let b1 = &chart.mains[0];
        let want_plus = Monomial::from_vars([
            VariableId::Pair(PairKey::new(t(&[1, 3]), t(&[2, 4]))),
            VariableId::Coord(t(&[3, 4])),
        ]);
        let want_minus = Monomial::from_vars([VariableId::Coord(t(&[1, 3])), VariableId::Coord(t(&[2, 4]))]);
        assert_eq!(b1.plus, want_plus);
        assert_eq!(b1.minus, want_minus);
    }

    #[test]
    fn proper_transform_example() {
        // B = x_(13,24) x34 - x13 x24, center (x34, x13), side 0
        let pair = VariableId::Pair(PairKey::new(t(&[1, 3]), t(&[2, 4])));
        let x34 = VariableId::Coord(t(&[3, 4]));
        let x13 = VariableId::Coord(t(&[1, 3]));
        let x24 = VariableId::Coord(t(&[2, 4]));
        let subst = BlowupSubst {
            zeta: VariableId::ExcCoord(t(&[3, 4])),
            absorbed_old: x34.clone(),
            survivor: x13.clone(),
        };
        let plus = Monomial::from_vars([pair.clone(), x34.clone()]);
        let minus = Monomial::from_vars([x13.clone(), x24.clone()]);
        let (p, q) = subst.proper_transform(&plus, &minus);
        assert_eq!(p, Monomial::var(pair));
        assert_eq!(q, Monomial::from_vars([x13, x24]));
    }

    #[test]
    fn untouched_binomial_is_unchanged() {
        let a = VariableId::Coord(t(&[1, 4]));
        let b = VariableId::Coord(t(&[2, 3]));
        let subst = BlowupSubst {
            zeta: VariableId::ExcCoord(t(&[3, 4])),
            absorbed_old: VariableId::Coord(t(&[3, 4])),
            survivor: VariableId::Coord(t(&[1, 3])),
        };
        let plus = Monomial::var(a.clone());
        let minus = Monomial::var(b.clone());
        let (p, q) = subst.proper_transform(&plus, &minus);
        assert_eq!(p, plus);
        assert_eq!(q, minus);
    }

    #[test]
    fn pullback_linear_example() {
        // L = a - b + c with center (a, x), side 1: a acquires zeta
        let a = VariableId::Coord(t(&[1, 3]));
        let b = VariableId::Coord(t(&[1, 4]));
        let c = VariableId::Coord(t(&[2, 3]));
        let x = VariableId::Coord(t(&[3, 4]));
        let f = FieldTag::Q;
        let l = Polynomial::var(f, a.clone())
            .sub(&Polynomial::var(f, b.clone()))
            .unwrap()
            .add(&Polynomial::var(f, c.clone()))
            .unwrap();
        let subst = BlowupSubst {
            zeta: VariableId::ExcCoord(t(&[3, 4])),
            absorbed_old: x,
            survivor: a.clone(),
        };
        let lp = subst.pullback_linear(&l);
        let want = Polynomial::from_term(
            f,
            Monomial::from_vars([VariableId::ExcCoord(t(&[3, 4])), a]),
            1,
        )
        .sub(&Polynomial::var(f, b))
        .unwrap()
        .add(&Polynomial::var(f, c))
        .unwrap();
        assert_eq!(lp, want);
    }
}

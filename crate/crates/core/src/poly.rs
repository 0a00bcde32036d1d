//! Exact sparse multivariate polynomial arithmetic over the rationals and
//! prime fields, with the variable namespaces used by the chart calculus.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::indices::IndexTuple;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolyError {
    #[error("incompatible fields: {0} vs {1}")]
    IncompatibleFields(FieldTag, FieldTag),
    #[error("missing assignment for variable {0}")]
    MissingAssignment(String),
}

/// A canonicalized unordered pair of index tuples; `(u,v)` and `(v,u)` are
/// the same key, stored with `u <= v` lexicographically.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairKey(pub IndexTuple, pub IndexTuple);

impl PairKey {
    pub fn new(a: IndexTuple, b: IndexTuple) -> Self {
        if a.0 <= b.0 {
            PairKey(a, b)
        } else {
            PairKey(b, a)
        }
    }

    pub fn other(&self, one: &IndexTuple) -> &IndexTuple {
        if &self.0 == one {
            &self.1
        } else {
            &self.0
        }
    }

    pub fn contains(&self, t: &IndexTuple) -> bool {
        &self.0 == t || &self.1 == t
    }
}

impl fmt::Debug for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.0, self.1)
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.0, self.1)
    }
}

/// Chart variable names.
///
/// `Coord(u)` is a Pluecker coordinate (homogeneous `p_u` or de-homogenized
/// `x_u` depending on context), `Pair(u,v)` the auxiliary coordinate standing
/// for the product `x_u x_v`, and the `Exc*` kinds are exceptional parameters
/// labeled by the coordinate they replaced on the chart.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VariableId {
    Coord(IndexTuple),
    Pair(PairKey),
    ExcCoord(IndexTuple),
    ExcPair(PairKey),
}

impl fmt::Display for VariableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VariableId::Coord(u) => write!(f, "x[{u}]"),
            VariableId::Pair(p) => write!(f, "x[{p}]"),
            VariableId::ExcCoord(u) => write!(f, "eps[{u}]"),
            VariableId::ExcPair(p) => write!(f, "delta[{p}]"),
        }
    }
}

impl fmt::Debug for VariableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FieldTag {
    Q,
    Fp(u32),
}

impl fmt::Display for FieldTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldTag::Q => write!(f, "Q"),
            FieldTag::Fp(p) => write!(f, "F{p}"),
        }
    }
}

/// Field element; the owning polynomial's tag decides the arithmetic.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Coeff {
    Rat(BigRational),
    Fp(u64),
}

impl Coeff {
    pub fn from_i64(field: FieldTag, v: i64) -> Coeff {
        match field {
            FieldTag::Q => Coeff::Rat(BigRational::from(BigInt::from(v))),
            FieldTag::Fp(p) => {
                let p = p as i64;
                Coeff::Fp(v.rem_euclid(p) as u64)
            }
        }
    }

    fn is_zero(&self) -> bool {
        match self {
            Coeff::Rat(r) => r.is_zero(),
            Coeff::Fp(v) => *v == 0,
        }
    }

    fn add(&self, other: &Coeff, field: FieldTag) -> Coeff {
        match (self, other, field) {
            (Coeff::Rat(a), Coeff::Rat(b), FieldTag::Q) => Coeff::Rat(a + b),
            (Coeff::Fp(a), Coeff::Fp(b), FieldTag::Fp(p)) => Coeff::Fp((a + b) % p as u64),
            _ => unreachable!("coefficient kind out of sync with field tag"),
        }
    }

    fn mul(&self, other: &Coeff, field: FieldTag) -> Coeff {
        match (self, other, field) {
            (Coeff::Rat(a), Coeff::Rat(b), FieldTag::Q) => Coeff::Rat(a * b),
            (Coeff::Fp(a), Coeff::Fp(b), FieldTag::Fp(p)) => Coeff::Fp((a * b) % p as u64),
            _ => unreachable!("coefficient kind out of sync with field tag"),
        }
    }

    fn neg(&self, field: FieldTag) -> Coeff {
        match (self, field) {
            (Coeff::Rat(a), FieldTag::Q) => Coeff::Rat(-a),
            (Coeff::Fp(a), FieldTag::Fp(p)) => Coeff::Fp((p as u64 - a) % p as u64),
            _ => unreachable!("coefficient kind out of sync with field tag"),
        }
    }

    fn scale_usize(&self, k: usize, field: FieldTag) -> Coeff {
        match (self, field) {
            (Coeff::Rat(a), FieldTag::Q) => Coeff::Rat(a * BigRational::from(BigInt::from(k))),
            (Coeff::Fp(a), FieldTag::Fp(p)) => Coeff::Fp((a * (k as u64 % p as u64)) % p as u64),
            _ => unreachable!("coefficient kind out of sync with field tag"),
        }
    }
}

/// Exponent table of a monomial; no zero exponents stored, sorted by variable.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Monomial(pub Vec<(VariableId, u32)>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(Vec::new())
    }

    pub fn var(v: VariableId) -> Self {
        Monomial(vec![(v, 1)])
    }

    pub fn from_vars<I: IntoIterator<Item = VariableId>>(vars: I) -> Self {
        let mut m = Monomial::one();
        for v in vars {
            m = m.mul_var(&v, 1);
        }
        m
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|(_, e)| *e).sum()
    }

    pub fn exponent(&self, v: &VariableId) -> u32 {
        self.0
            .iter()
            .find(|(w, _)| w == v)
            .map(|(_, e)| *e)
            .unwrap_or(0)
    }

    pub fn contains(&self, v: &VariableId) -> bool {
        self.exponent(v) > 0
    }

    pub fn is_squarefree(&self) -> bool {
        self.0.iter().all(|(_, e)| *e <= 1)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut out: BTreeMap<VariableId, u32> = self.0.iter().cloned().collect();
        for (v, e) in &other.0 {
            *out.entry(v.clone()).or_insert(0) += e;
        }
        Monomial(out.into_iter().collect())
    }

    pub fn mul_var(&self, v: &VariableId, e: u32) -> Monomial {
        if e == 0 {
            return self.clone();
        }
        let mut out = self.0.clone();
        match out.binary_search_by(|(w, _)| w.cmp(v)) {
            Ok(i) => out[i].1 += e,
            Err(i) => out.insert(i, (v.clone(), e)),
        }
        Monomial(out)
    }

    /// Divide by `v^e`; panics if not divisible (callers check).
    pub fn div_var(&self, v: &VariableId, e: u32) -> Monomial {
        let mut out = self.0.clone();
        let i = out
            .binary_search_by(|(w, _)| w.cmp(v))
            .expect("monomial not divisible");
        assert!(out[i].1 >= e, "monomial not divisible");
        out[i].1 -= e;
        if out[i].1 == 0 {
            out.remove(i);
        }
        Monomial(out)
    }

    pub fn vars(&self) -> impl Iterator<Item = &VariableId> {
        self.0.iter().map(|(v, _)| v)
    }

    /// Simultaneous substitution of variables by polynomials.
    pub fn substitute(&self, map: &BTreeMap<VariableId, Polynomial>, field: FieldTag) -> Polynomial {
        let mut acc = Polynomial::one(field);
        for (v, e) in &self.0 {
            match map.get(v) {
                Some(p) => {
                    for _ in 0..*e {
                        acc = acc.mul(p).expect("matching fields");
                    }
                }
                None => acc = acc.mul_monomial(&Monomial::var(v.clone()).pow(*e)),
            }
        }
        acc
    }

    pub fn pow(&self, e: u32) -> Monomial {
        Monomial(self.0.iter().map(|(v, k)| (v.clone(), k * e)).collect())
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_one() {
            return write!(f, "1");
        }
        for (i, (v, e)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "*")?;
            }
            if *e == 1 {
                write!(f, "{v}")?;
            } else {
                write!(f, "{v}^{e}")?;
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// Sparse polynomial with exact coefficients and a runtime field tag.
#[derive(Clone, PartialEq, Eq)]
pub struct Polynomial {
    pub field: FieldTag,
    pub terms: BTreeMap<Monomial, Coeff>,
}

impl Serialize for Polynomial {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl Polynomial {
    pub fn zero(field: FieldTag) -> Self {
        Polynomial { field, terms: BTreeMap::new() }
    }

    pub fn one(field: FieldTag) -> Self {
        Polynomial::constant(field, 1)
    }

    pub fn constant(field: FieldTag, c: i64) -> Self {
        let mut p = Polynomial::zero(field);
        p.add_term(Monomial::one(), Coeff::from_i64(field, c));
        p
    }

    pub fn var(field: FieldTag, v: VariableId) -> Self {
        Polynomial::from_term(field, Monomial::var(v), 1)
    }

    pub fn from_term(field: FieldTag, m: Monomial, c: i64) -> Self {
        let mut p = Polynomial::zero(field);
        p.add_term(m, Coeff::from_i64(field, c));
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add_term(&mut self, m: Monomial, c: Coeff) {
        if c.is_zero() {
            return;
        }
        match self.terms.entry(m) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let s = e.get().add(&c, self.field);
                if s.is_zero() {
                    e.remove();
                } else {
                    *e.get_mut() = s;
                }
            }
        }
    }

    fn check(&self, other: &Polynomial) -> Result<(), PolyError> {
        if self.field != other.field {
            return Err(PolyError::IncompatibleFields(self.field, other.field));
        }
        Ok(())
    }

    pub fn add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Polynomial {
        Polynomial {
            field: self.field,
            terms: self
                .terms
                .iter()
                .map(|(m, c)| (m.clone(), c.neg(self.field)))
                .collect(),
        }
    }

    pub fn mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check(other)?;
        let mut out = Polynomial::zero(self.field);
        for (m1, c1) in &self.terms {
            for (m2, c2) in &other.terms {
                out.add_term(m1.mul(m2), c1.mul(c2, self.field));
            }
        }
        Ok(out)
    }

    pub fn mul_monomial(&self, m: &Monomial) -> Polynomial {
        Polynomial {
            field: self.field,
            terms: self
                .terms
                .iter()
                .map(|(m0, c)| (m0.mul(m), c.clone()))
                .collect(),
        }
    }

    pub fn scale(&self, c: i64) -> Polynomial {
        let k = Coeff::from_i64(self.field, c);
        let mut out = Polynomial::zero(self.field);
        for (m, c0) in &self.terms {
            out.add_term(m.clone(), c0.mul(&k, self.field));
        }
        out
    }

    /// Simultaneous substitution: variables present in `map` are replaced by
    /// the given polynomials, all others kept.
    pub fn substitute(&self, map: &BTreeMap<VariableId, Polynomial>) -> Polynomial {
        let mut out = Polynomial::zero(self.field);
        for (m, c) in &self.terms {
            let sub = m.substitute(map, self.field);
            for (m2, c2) in &sub.terms {
                out.add_term(m2.clone(), c.mul(c2, self.field));
            }
        }
        out
    }

    /// Formal partial derivative.
    pub fn partial_derivative(&self, v: &VariableId) -> Polynomial {
        let mut out = Polynomial::zero(self.field);
        for (m, c) in &self.terms {
            let e = m.exponent(v);
            if e == 0 {
                continue;
            }
            out.add_term(m.div_var(v, 1), c.scale_usize(e as usize, self.field));
        }
        out
    }

    /// Exact evaluation; every variable of the polynomial must be assigned.
    pub fn evaluate(&self, point: &BTreeMap<VariableId, Coeff>) -> Result<Coeff, PolyError> {
        let mut acc = Coeff::from_i64(self.field, 0);
        for (m, c) in &self.terms {
            let mut t = c.clone();
            for (v, e) in &m.0 {
                let val = point
                    .get(v)
                    .ok_or_else(|| PolyError::MissingAssignment(v.to_string()))?;
                for _ in 0..*e {
                    t = t.mul(val, self.field);
                }
            }
            acc = acc.add(&t, self.field);
        }
        Ok(acc)
    }

    pub fn variables(&self) -> Vec<VariableId> {
        let mut out: Vec<VariableId> = self
            .terms
            .keys()
            .flat_map(|m| m.vars().cloned())
            .collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn degree_in(&self, v: &VariableId) -> u32 {
        self.terms.keys().map(|m| m.exponent(v)).max().unwrap_or(0)
    }

    /// For a polynomial linear in `v`, split as `c*v + d` with `v` absent
    /// from `c` and `d`. Returns `None` when the degree in `v` exceeds 1.
    pub fn split_linear(&self, v: &VariableId) -> Option<(Polynomial, Polynomial)> {
        let mut c = Polynomial::zero(self.field);
        let mut d = Polynomial::zero(self.field);
        for (m, k) in &self.terms {
            match m.exponent(v) {
                0 => d.add_term(m.clone(), k.clone()),
                1 => c.add_term(m.div_var(v, 1), k.clone()),
                _ => return None,
            }
        }
        Some((c, d))
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        for (i, (m, c)) in self.terms.iter().enumerate() {
            let (sign, mag) = match c {
                Coeff::Rat(r) => {
                    if r.is_negative() {
                        ("-", Coeff::Rat(-r))
                    } else {
                        ("+", c.clone())
                    }
                }
                Coeff::Fp(v) => ("+", Coeff::Fp(*v)),
            };
            if i == 0 {
                if sign == "-" {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            let is_unit = match &mag {
                Coeff::Rat(r) => r.is_one(),
                Coeff::Fp(v) => *v == 1,
            };
            match (&mag, is_unit, m.is_one()) {
                (_, true, true) => write!(f, "1")?,
                (_, true, false) => write!(f, "{m}")?,
                (Coeff::Rat(r), false, one) => {
                    write!(f, "{r}")?;
                    if !one {
                        write!(f, "*{m}")?;
                    }
                }
                (Coeff::Fp(v), false, one) => {
                    write!(f, "{v}")?;
                    if !one {
                        write!(f, "*{m}")?;
                    }
                }
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// Deterministic ordering helper used for report output.
pub fn cmp_var_display(a: &VariableId, b: &VariableId) -> Ordering {
    a.cmp(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indices::IndexTuple;

    fn x(v: &[u8]) -> VariableId {
        VariableId::Coord(IndexTuple::new(v.to_vec()))
    }

    fn pair(a: &[u8], b: &[u8]) -> VariableId {
        VariableId::Pair(PairKey::new(
            IndexTuple::new(a.to_vec()),
            IndexTuple::new(b.to_vec()),
        ))
    }

    #[test]
    fn ring_examples() {
        let f = FieldTag::Q;
        let xv = Polynomial::var(f, x(&[1]));
        let one = Polynomial::one(f);
        let prod = xv.add(&one).unwrap().mul(&xv.sub(&one).unwrap()).unwrap();
        let sq = xv.mul(&xv).unwrap().sub(&one).unwrap();
        assert_eq!(prod, sq);

        // substitute x -> 0 into x*y + z
        let p = Polynomial::from_term(
            f,
            Monomial::from_vars([x(&[1]), x(&[2])]),
            1,
        )
        .add(&Polynomial::var(f, x(&[3])))
        .unwrap();
        let mut map = BTreeMap::new();
        map.insert(x(&[1]), Polynomial::zero(f));
        assert_eq!(p.substitute(&map), Polynomial::var(f, x(&[3])));

        // 2*x over F_2 is 0
        let f2 = FieldTag::Fp(2);
        let two_x = Polynomial::from_term(f2, Monomial::var(x(&[1])), 2);
        assert!(two_x.is_zero());

        // field mismatch errors
        let q = Polynomial::one(FieldTag::Q);
        let fp = Polynomial::one(FieldTag::Fp(3));
        assert!(matches!(q.add(&fp), Err(PolyError::IncompatibleFields(_, _))));
    }

    #[test]
    fn derivative_examples() {
        let f = FieldTag::Q;
        let xy = Polynomial::from_term(f, Monomial::from_vars([x(&[1]), x(&[2])]), 1);
        assert_eq!(xy.partial_derivative(&x(&[1])), Polynomial::var(f, x(&[2])));

        let f2 = FieldTag::Fp(2);
        let xsq = Polynomial::from_term(f2, Monomial::var(x(&[1])).pow(2), 1);
        assert!(xsq.partial_derivative(&x(&[1])).is_zero());

        // d(x_(13,24)*x34 - x13*x24)/d x34 = x_(13,24)
        let b = Polynomial::from_term(
            f,
            Monomial::from_vars([pair(&[1, 3], &[2, 4]), x(&[3, 4])]),
            1,
        )
        .sub(&Polynomial::from_term(
            f,
            Monomial::from_vars([x(&[1, 3]), x(&[2, 4])]),
            1,
        ))
        .unwrap();
        assert_eq!(
            b.partial_derivative(&x(&[3, 4])),
            Polynomial::var(f, pair(&[1, 3], &[2, 4]))
        );
    }

    #[test]
    fn evaluation_examples() {
        let f = FieldTag::Q;
        let p = Polynomial::var(f, x(&[1])).add(&Polynomial::var(f, x(&[2]))).unwrap();
        let mut pt = BTreeMap::new();
        pt.insert(x(&[1]), Coeff::from_i64(f, 1));
        pt.insert(x(&[2]), Coeff::from_i64(f, 2));
        assert_eq!(p.evaluate(&pt).unwrap(), Coeff::from_i64(f, 3));
        pt.remove(&x(&[2]));
        assert!(matches!(p.evaluate(&pt), Err(PolyError::MissingAssignment(_))));
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use crate::indices::IndexTuple;
    use proptest::prelude::*;

    fn var(i: u8) -> VariableId {
        VariableId::Coord(IndexTuple::new(vec![i]))
    }

    fn arb_poly(field: FieldTag) -> impl Strategy<Value = Polynomial> {
        proptest::collection::vec(
            (
                proptest::collection::vec((1u8..=4, 0u32..3), 0..3),
                -4i64..=4,
            ),
            0..5,
        )
        .prop_map(move |terms| {
            let mut p = Polynomial::zero(field);
            for (vars, c) in terms {
                let mut m = Monomial::one();
                for (v, e) in vars {
                    m = m.mul_var(&var(v), e);
                }
                p.add_term(m, Coeff::from_i64(field, c));
            }
            p
        })
    }

    fn arb_point() -> impl Strategy<Value = BTreeMap<VariableId, Coeff>> {
        proptest::collection::vec(-5i64..=5, 4).prop_map(|vals| {
            vals.into_iter()
                .enumerate()
                .map(|(i, v)| (var(i as u8 + 1), Coeff::from_i64(FieldTag::Q, v)))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn ring_axioms_q(a in arb_poly(FieldTag::Q), b in arb_poly(FieldTag::Q), c in arb_poly(FieldTag::Q)) {
            let ab_c = a.mul(&b).unwrap().mul(&c).unwrap();
            let a_bc = a.mul(&b.mul(&c).unwrap()).unwrap();
            prop_assert_eq!(ab_c, a_bc);
            let lhs = a.mul(&b.add(&c).unwrap()).unwrap();
            let rhs = a.mul(&b).unwrap().add(&a.mul(&c).unwrap()).unwrap();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn ring_axioms_f5(a in arb_poly(FieldTag::Fp(5)), b in arb_poly(FieldTag::Fp(5)), c in arb_poly(FieldTag::Fp(5))) {
            let ab_c = a.mul(&b).unwrap().mul(&c).unwrap();
            let a_bc = a.mul(&b.mul(&c).unwrap()).unwrap();
            prop_assert_eq!(ab_c, a_bc);
            let lhs = a.mul(&b.add(&c).unwrap()).unwrap();
            let rhs = a.mul(&b).unwrap().add(&a.mul(&c).unwrap()).unwrap();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn leibniz_rule(f in arb_poly(FieldTag::Q), g in arb_poly(FieldTag::Q)) {
            let v = var(1);
            let lhs = f.mul(&g).unwrap().partial_derivative(&v);
            let rhs = f
                .partial_derivative(&v)
                .mul(&g)
                .unwrap()
                .add(&f.mul(&g.partial_derivative(&v)).unwrap())
                .unwrap();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn substitute_then_evaluate(f in arb_poly(FieldTag::Q), g in arb_poly(FieldTag::Q), pt in arb_point()) {
            // evaluating f after x1 -> g equals evaluating f at the composed point
            let v = var(1);
            let mut sub = BTreeMap::new();
            sub.insert(v.clone(), g.clone());
            let left = f.substitute(&sub).evaluate(&pt).unwrap();
            let mut pt2 = pt.clone();
            pt2.insert(v, g.evaluate(&pt).unwrap());
            let right = f.evaluate(&pt2).unwrap();
            prop_assert_eq!(left, right);
        }
    }
}

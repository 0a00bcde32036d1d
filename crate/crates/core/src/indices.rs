//! Index-tuple combinatorics: the set `I(d,n)` of strictly increasing
//! d-tuples in `[1,n]`, sign normalization of unsorted tuples, and the
//! total orders (lex, invlex, and the chart order `<_wp`) used everywhere
//! downstream.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IndexError {
    #[error("invalid parameters: require 1 <= d < n, got d={d}, n={n}")]
    InvalidParameters { d: usize, n: usize },
    #[error("invalid comparison: tuples have different lengths ({0} vs {1})")]
    InvalidComparison(usize, usize),
    #[error("invalid comparison: tuple equals the chart index m")]
    EqualsChartIndex,
    #[error("tuple is not primary for the chart: |u \\ m| = {0} < 2")]
    NotPrimary(usize),
}

/// A strictly increasing tuple of distinct integers in `[1, n]`.
///
/// Doubles as a subset of `[n]`; set operations below rely on sortedness.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IndexTuple(pub Vec<u8>);

impl fmt::Debug for IndexTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Display for IndexTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.0 {
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl IndexTuple {
    pub fn new(entries: Vec<u8>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0] < w[1]));
        IndexTuple(entries)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, x: u8) -> bool {
        self.0.binary_search(&x).is_ok()
    }

    /// Set difference `self \ other`, result sorted.
    pub fn diff(&self, other: &IndexTuple) -> IndexTuple {
        IndexTuple(self.0.iter().copied().filter(|x| !other.contains(*x)).collect())
    }

    /// Set intersection, result sorted.
    pub fn meet(&self, other: &IndexTuple) -> IndexTuple {
        IndexTuple(self.0.iter().copied().filter(|x| other.contains(*x)).collect())
    }

    /// Remove one element (must be present).
    pub fn without(&self, x: u8) -> IndexTuple {
        IndexTuple(self.0.iter().copied().filter(|y| *y != x).collect())
    }

    /// Insert one element keeping sortedness; `None` if already present.
    pub fn with(&self, x: u8) -> Option<IndexTuple> {
        if self.contains(x) {
            return None;
        }
        let mut v = self.0.clone();
        let pos = v.partition_point(|y| *y < x);
        v.insert(pos, x);
        Some(IndexTuple(v))
    }
}

/// Result of normalizing a raw (possibly unsorted, possibly repeating) tuple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Normalized {
    /// The tuple has a repeated entry; the corresponding coordinate is zero.
    Zero,
    NonZero { tuple: IndexTuple, sign: i8 },
}

/// Sort a raw tuple, returning the sorted tuple together with the sign of the
/// sorting permutation, or `Zero` when an entry repeats.
pub fn normalize(raw: &[u8]) -> Normalized {
    let mut v: Vec<u8> = raw.to_vec();
    // count inversions with a quadratic pass; d is tiny
    let mut sign = 1i8;
    for i in 0..v.len() {
        for j in (i + 1)..v.len() {
            match v[j].cmp(&v[i]) {
                Ordering::Less => {
                    sign = -sign;
                }
                Ordering::Equal => return Normalized::Zero,
                Ordering::Greater => {}
            }
        }
    }
    v.sort_unstable();
    Normalized::NonZero { tuple: IndexTuple(v), sign }
}

/// All elements of `I(d,n)` in lexicographic order.
pub fn index_set(d: usize, n: usize) -> Result<Vec<IndexTuple>, IndexError> {
    if d == 0 || d >= n || n > 64 {
        return Err(IndexError::InvalidParameters { d, n });
    }
    let mut out = Vec::new();
    let mut cur: Vec<u8> = (1..=d as u8).collect();
    loop {
        out.push(IndexTuple(cur.clone()));
        // next combination in lex order
        let mut i = d;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            if cur[i] < (n - (d - 1 - i)) as u8 {
                cur[i] += 1;
                for j in (i + 1)..d {
                    cur[j] = cur[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Lexicographic order: leftmost difference decides.
pub fn cmp_lex(a: &IndexTuple, b: &IndexTuple) -> Result<Ordering, IndexError> {
    if a.len() != b.len() {
        return Err(IndexError::InvalidComparison(a.len(), b.len()));
    }
    Ok(a.0.cmp(&b.0))
}

/// Reverse lexicographic order: rightmost difference decides.
pub fn cmp_invlex(a: &IndexTuple, b: &IndexTuple) -> Result<Ordering, IndexError> {
    if a.len() != b.len() {
        return Err(IndexError::InvalidComparison(a.len(), b.len()));
    }
    for (x, y) in a.0.iter().rev().zip(b.0.iter().rev()) {
        match x.cmp(y) {
            Ordering::Equal => {}
            o => return Ok(o),
        }
    }
    Ok(Ordering::Equal)
}

/// Rank of the primary relation attached to `u` on the chart `m`:
/// `|u \ m| - 2`, defined only when `|u \ m| >= 2`.
pub fn m_rank(u: &IndexTuple, m: &IndexTuple) -> Result<usize, IndexError> {
    let excess = u.diff(m).len();
    if excess < 2 {
        return Err(IndexError::NotPrimary(excess));
    }
    Ok(excess - 2)
}

/// Whether `u` indexes a primary relation on the chart `m`.
pub fn is_primary(u: &IndexTuple, m: &IndexTuple) -> bool {
    u.diff(m).len() >= 2
}

/// The chart order `<_wp` on `I(d,n) \ {m}`.
///
/// Basic tuples (those with `|u \ m| <= 1`) compare by their single non-chart
/// entry, then by the retained part of `m`; non-basic tuples compare by
/// m-rank, then `u \ m` lex, then `m /\ u` lex. Basic tuples precede
/// non-basic ones.
pub fn cmp_wp(u: &IndexTuple, v: &IndexTuple, m: &IndexTuple) -> Result<Ordering, IndexError> {
    if u.len() != v.len() || u.len() != m.len() {
        return Err(IndexError::InvalidComparison(u.len(), v.len()));
    }
    if u == m || v == m {
        return Err(IndexError::EqualsChartIndex);
    }
    let du = u.diff(m);
    let dv = v.diff(m);
    let u_basic = du.len() < 2;
    let v_basic = dv.len() < 2;
    match (u_basic, v_basic) {
        (true, true) => {
            // u = (m \ m_i) + {a}, v = (m \ m_j) + {b}: compare a, then m-hat parts
            match du.0.cmp(&dv.0) {
                Ordering::Equal => cmp_lex(&u.meet(m), &v.meet(m)),
                o => Ok(o),
            }
        }
        (true, false) => Ok(Ordering::Less),
        (false, true) => Ok(Ordering::Greater),
        (false, false) => {
            let ru = du.len();
            let rv = dv.len();
            match ru.cmp(&rv) {
                Ordering::Equal => match du.0.cmp(&dv.0) {
                    Ordering::Equal => Ok(u.meet(m).0.cmp(&v.meet(m).0)),
                    o => Ok(o),
                },
                o => Ok(o),
            }
        }
    }
}

/// The ordered set `I^m(d,n)` of primary tuples, sorted by `<_wp`.
pub fn primary_index_set(d: usize, n: usize, m: &IndexTuple) -> Result<Vec<IndexTuple>, IndexError> {
    let mut v: Vec<IndexTuple> = index_set(d, n)?
        .into_iter()
        .filter(|u| is_primary(u, m))
        .collect();
    v.sort_by(|a, b| cmp_wp(a, b, m).expect("primary tuples are comparable"));
    Ok(v)
}

/// `Upsilon = C(n,d) - 1 - d(n-d)`, the size of the primary family.
pub fn upsilon(d: usize, n: usize) -> usize {
    binomial(n, d) - 1 - d * (n - d)
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[u8]) -> IndexTuple {
        IndexTuple::new(v.to_vec())
    }

    #[test]
    fn enumerates_small_sets() {
        let s = index_set(2, 4).unwrap();
        let want: Vec<IndexTuple> = [[1, 2], [1, 3], [1, 4], [2, 3], [2, 4], [3, 4]]
            .iter()
            .map(|p| t(p))
            .collect();
        assert_eq!(s, want);
        assert_eq!(index_set(1, 3).unwrap(), vec![t(&[1]), t(&[2]), t(&[3])]);
        let s36 = index_set(3, 6).unwrap();
        assert_eq!(s36.len(), 20);
        assert!(s36.iter().all(|u| u.0.windows(2).all(|w| w[0] < w[1])));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(index_set(4, 4).is_err());
        assert!(index_set(0, 3).is_err());
    }

    #[test]
    fn normalizes_signs() {
        assert_eq!(
            normalize(&[1, 6, 3]),
            Normalized::NonZero { tuple: t(&[1, 3, 6]), sign: -1 }
        );
        assert_eq!(normalize(&[2, 2, 5]), Normalized::Zero);
        assert_eq!(
            normalize(&[1, 2, 3]),
            Normalized::NonZero { tuple: t(&[1, 2, 3]), sign: 1 }
        );
    }

    #[test]
    fn sign_is_permutation_sign() {
        // all permutations of repeat-free tuples up to d = 4
        let base: Vec<Vec<u8>> = vec![vec![1, 2], vec![2, 5, 7], vec![1, 3, 4, 6]];
        for b in base {
            let d = b.len();
            let mut perm: Vec<usize> = (0..d).collect();
            loop {
                let raw: Vec<u8> = perm.iter().map(|&i| b[i]).collect();
                let mut sign = 1i8;
                for i in 0..d {
                    for j in (i + 1)..d {
                        if perm[j] < perm[i] {
                            sign = -sign;
                        }
                    }
                }
                match normalize(&raw) {
                    Normalized::NonZero { tuple, sign: s } => {
                        assert_eq!(tuple, t(&b));
                        assert_eq!(s, sign);
                    }
                    Normalized::Zero => panic!("unexpected zero"),
                }
                // next permutation
                let mut i = d.wrapping_sub(1);
                while i > 0 && perm[i - 1] >= perm[i] {
                    i -= 1;
                }
                if i == 0 {
                    break;
                }
                let mut j = d - 1;
                while perm[j] <= perm[i - 1] {
                    j -= 1;
                }
                perm.swap(i - 1, j);
                perm[i..].reverse();
            }
        }
    }

    #[test]
    fn lex_and_invlex_examples() {
        assert_eq!(cmp_lex(&t(&[1, 3]), &t(&[2, 3])).unwrap(), Ordering::Less);
        assert_eq!(cmp_invlex(&t(&[1, 4]), &t(&[2, 3])).unwrap(), Ordering::Greater);
        assert_eq!(cmp_lex(&t(&[1, 2, 6]), &t(&[1, 3, 4])).unwrap(), Ordering::Less);
        assert!(cmp_lex(&t(&[1, 2]), &t(&[1, 2, 3])).is_err());
    }

    #[test]
    fn wp_order_examples() {
        let m = t(&[1, 2, 3]);
        assert_eq!(
            cmp_wp(&t(&[1, 4, 5]), &t(&[2, 4, 5]), &m).unwrap(),
            Ordering::Less
        );
        assert_eq!(
            cmp_wp(&t(&[1, 4, 5]), &t(&[4, 5, 6]), &m).unwrap(),
            Ordering::Less
        );
        // basic branch: (1,2,4) vs (1,2,5)
        assert_eq!(
            cmp_wp(&t(&[1, 2, 4]), &t(&[1, 2, 5]), &m).unwrap(),
            Ordering::Less
        );
        assert!(cmp_wp(&m, &t(&[1, 4, 5]), &m).is_err());
    }

    #[test]
    fn m_rank_examples() {
        let m = t(&[1, 2, 3]);
        assert_eq!(m_rank(&t(&[1, 4, 5]), &m).unwrap(), 0);
        assert_eq!(m_rank(&t(&[4, 5, 6]), &m).unwrap(), 1);
        assert_eq!(m_rank(&t(&[3, 4]), &t(&[1, 2])).unwrap(), 0);
        assert!(m_rank(&t(&[1, 2, 4]), &m).is_err());
    }

    #[test]
    fn primary_counts_match_upsilon() {
        // every chart index gives the same count
        for (d, n) in [(2usize, 4usize), (2, 5), (3, 6)] {
            for m in index_set(d, n).unwrap() {
                let prim = primary_index_set(d, n, &m).unwrap();
                assert_eq!(prim.len(), upsilon(d, n), "m={m:?}");
            }
        }
        let prim = primary_index_set(2, 6, &t(&[5, 6])).unwrap();
        assert_eq!(prim.len(), upsilon(2, 6));
        assert_eq!(upsilon(2, 4), 1);
        assert_eq!(upsilon(2, 5), 3);
        assert_eq!(upsilon(2, 6), 6);
        assert_eq!(upsilon(3, 6), 10);
    }

    #[test]
    fn wp_is_strict_total_order_at_3_6() {
        let m = t(&[1, 2, 3]);
        let all: Vec<IndexTuple> = index_set(3, 6)
            .unwrap()
            .into_iter()
            .filter(|u| *u != m)
            .collect();
        // antisymmetry + totality
        for a in &all {
            for b in &all {
                let ab = cmp_wp(a, b, &m).unwrap();
                let ba = cmp_wp(b, a, &m).unwrap();
                if a == b {
                    assert_eq!(ab, Ordering::Equal);
                } else {
                    assert_ne!(ab, Ordering::Equal, "{a:?} vs {b:?}");
                    assert_eq!(ab, ba.reverse());
                }
            }
        }
        // transitivity by exhaustive check
        for a in &all {
            for b in &all {
                for c in &all {
                    if cmp_wp(a, b, &m).unwrap() == Ordering::Less
                        && cmp_wp(b, c, &m).unwrap() == Ordering::Less
                    {
                        assert_eq!(cmp_wp(a, c, &m).unwrap(), Ordering::Less);
                    }
                }
            }
        }
    }
}

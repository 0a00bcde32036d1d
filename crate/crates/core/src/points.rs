//! Finite-field utilities: compiled polynomial systems, complete solution
//! enumeration by backtracking with constraint propagation, randomized
//! sampling for large systems, and exact rank computation.

use std::collections::BTreeMap;

use num_traits::Signed;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::poly::{Coeff, FieldTag, Polynomial, VariableId};

/// One term of a compiled equation: coefficient and (variable index,
/// exponent) pairs.
pub type CompiledTerm = (i64, Vec<(usize, u32)>);

/// A polynomial system compiled to dense variable indices for fast
/// evaluation mod p.
#[derive(Debug, Clone)]
pub struct CompiledSystem {
    pub vars: Vec<VariableId>,
    pub eqs: Vec<Vec<CompiledTerm>>,
}

impl CompiledSystem {
    /// Compile a system over Q with integer coefficients onto the given
    /// variable list (variables outside the list must not occur).
    pub fn new(vars: Vec<VariableId>, polys: &[Polynomial]) -> CompiledSystem {
        let index: BTreeMap<&VariableId, usize> =
            vars.iter().enumerate().map(|(i, v)| (v, i)).collect();
        let eqs = polys
            .iter()
            .map(|p| {
                p.terms
                    .iter()
                    .map(|(m, c)| {
                        let c = match c {
                            Coeff::Rat(r) => {
                                assert!(r.is_integer(), "integer coefficients expected");
                                let n = r.to_integer();
                                let mag: i64 = n.abs().try_into().expect("small coefficient");
                                if n.is_negative() {
                                    -mag
                                } else {
                                    mag
                                }
                            }
                            Coeff::Fp(v) => *v as i64,
                        };
                        let mono = m
                            .0
                            .iter()
                            .map(|(v, e)| {
                                (*index.get(v).unwrap_or_else(|| panic!("unindexed variable {v}")), *e)
                            })
                            .collect();
                        (c, mono)
                    })
                    .collect()
            })
            .collect();
        CompiledSystem { vars, eqs }
    }

    fn eval_term(p: u64, c: i64, mono: &[(usize, u32)], point: &[u64]) -> u64 {
        let mut acc = c.rem_euclid(p as i64) as u64;
        for (vi, e) in mono {
            let mut b = point[*vi] % p;
            for _ in 0..*e {
                acc = acc * b % p;
                if acc == 0 {
                    return 0;
                }
                // keep b reduced
                b %= p;
            }
        }
        acc
    }

    pub fn eval_eq(&self, p: u64, eq: usize, point: &[u64]) -> u64 {
        let mut acc = 0u64;
        for (c, mono) in &self.eqs[eq] {
            acc = (acc + Self::eval_term(p, *c, mono, point)) % p;
        }
        acc
    }

    pub fn satisfied(&self, p: u64, point: &[u64]) -> bool {
        (0..self.eqs.len()).all(|i| self.eval_eq(p, i, point) == 0)
    }
}

/// Enumerate all solutions of the system over F_p when the variable count is
/// within the exhaustive threshold; otherwise sample up to the budget.
/// Deterministic under the seed.
pub fn enumerate_solutions(
    sys: &CompiledSystem,
    p: u64,
    exhaustive_threshold: usize,
    sample_budget: usize,
    seed: u64,
) -> Vec<Vec<u64>> {
    if sys.vars.len() <= exhaustive_threshold {
        let mut out = Vec::new();
        let mut point = vec![0u64; sys.vars.len()];
        let mut assigned = vec![false; sys.vars.len()];
        backtrack(sys, p, &mut point, &mut assigned, &mut out, usize::MAX);
        out.sort();
        out
    } else {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..sample_budget {
            let cand: Vec<u64> = (0..sys.vars.len()).map(|_| rng.gen_range(0..p)).collect();
            if sys.satisfied(p, &cand) {
                seen.insert(cand);
            }
        }
        seen.into_iter().collect()
    }
}

/// Check emptiness cheaply: complete enumeration with an early exit after the
/// first solution.
pub fn has_solution(sys: &CompiledSystem, p: u64) -> bool {
    let mut out = Vec::new();
    let mut point = vec![0u64; sys.vars.len()];
    let mut assigned = vec![false; sys.vars.len()];
    backtrack(sys, p, &mut point, &mut assigned, &mut out, 1);
    !out.is_empty()
}

/// Budgeted variant: `Some(found)` when the search completed within the node
/// budget, `None` when it was cut short (the caller decides the safe side).
pub fn has_solution_budgeted(sys: &CompiledSystem, p: u64, node_budget: usize) -> Option<bool> {
    let mut out = Vec::new();
    let mut point = vec![0u64; sys.vars.len()];
    let mut assigned = vec![false; sys.vars.len()];
    let mut nodes = node_budget;
    let complete = backtrack_budgeted(sys, p, &mut point, &mut assigned, &mut out, 1, &mut nodes);
    if !out.is_empty() {
        Some(true)
    } else if complete {
        Some(false)
    } else {
        None
    }
}

fn backtrack_budgeted(
    sys: &CompiledSystem,
    p: u64,
    point: &mut Vec<u64>,
    assigned: &mut Vec<bool>,
    out: &mut Vec<Vec<u64>>,
    limit: usize,
    nodes: &mut usize,
) -> bool {
    if *nodes == 0 {
        return false;
    }
    *nodes -= 1;
    if out.len() >= limit {
        return true;
    }
    let mut best: Option<(usize, usize)> = None;
    for (i, eq) in sys.eqs.iter().enumerate() {
        let mut unassigned = std::collections::BTreeSet::new();
        for (_, mono) in eq {
            for (vi, _) in mono {
                if !assigned[*vi] {
                    unassigned.insert(*vi);
                }
            }
        }
        let n = unassigned.len();
        if n == 0 {
            if sys.eval_eq(p, i, point) != 0 {
                return true;
            }
            continue;
        }
        if best.map(|(_, bn)| n < bn).unwrap_or(true) {
            best = Some((i, n));
            if n == 1 {
                break;
            }
        }
    }
    let branch_var = match best {
        None => assigned.iter().position(|a| !a),
        Some((eq, _)) => sys.eqs[eq]
            .iter()
            .flat_map(|(_, mono)| mono.iter())
            .map(|(vi, _)| *vi)
            .find(|vi| !assigned[*vi]),
    };
    match branch_var {
        None => {
            out.push(point.clone());
            true
        }
        Some(vi) => {
            assigned[vi] = true;
            let mut complete = true;
            for val in 0..p {
                point[vi] = val;
                if !backtrack_budgeted(sys, p, point, assigned, out, limit, nodes) {
                    complete = false;
                    break;
                }
                if out.len() >= limit {
                    break;
                }
            }
            assigned[vi] = false;
            point[vi] = 0;
            complete
        }
    }
}

fn backtrack(
    sys: &CompiledSystem,
    p: u64,
    point: &mut Vec<u64>,
    assigned: &mut Vec<bool>,
    out: &mut Vec<Vec<u64>>,
    limit: usize,
) {
    if out.len() >= limit {
        return;
    }
    // Find the most constrained equation: fewest unassigned variables.
    let mut best: Option<(usize, usize)> = None; // (eq, #unassigned)
    for (i, eq) in sys.eqs.iter().enumerate() {
        let mut unassigned = std::collections::BTreeSet::new();
        for (_, mono) in eq {
            for (vi, _) in mono {
                if !assigned[*vi] {
                    unassigned.insert(*vi);
                }
            }
        }
        let n = unassigned.len();
        if n == 0 {
            if sys.eval_eq(p, i, point) != 0 {
                return; // contradiction
            }
            continue;
        }
        if best.map(|(_, bn)| n < bn).unwrap_or(true) {
            best = Some((i, n));
            if n == 1 {
                break;
            }
        }
    }
    match best {
        None => {
            // all equations satisfied; enumerate remaining free variables
            if let Some(vi) = assigned.iter().position(|a| !a) {
                assigned[vi] = true;
                for val in 0..p {
                    point[vi] = val;
                    backtrack(sys, p, point, assigned, out, limit);
                    if out.len() >= limit {
                        break;
                    }
                }
                assigned[vi] = false;
                point[vi] = 0;
            } else {
                out.push(point.clone());
            }
        }
        Some((eq, _)) => {
            // branch on one unassigned variable of the most constrained equation
            let vi = sys.eqs[eq]
                .iter()
                .flat_map(|(_, mono)| mono.iter())
                .map(|(vi, _)| *vi)
                .find(|vi| !assigned[*vi])
                .expect("unassigned variable exists");
            assigned[vi] = true;
            for val in 0..p {
                point[vi] = val;
                backtrack(sys, p, point, assigned, out, limit);
                if out.len() >= limit {
                    break;
                }
            }
            assigned[vi] = false;
            point[vi] = 0;
        }
    }
}

/// Exact rank of a matrix over F_p by Gaussian elimination.
#[allow(clippy::needless_range_loop)]
pub fn rank_mod_p(mut m: Vec<Vec<u64>>, p: u64) -> usize {
    let rows = m.len();
    if rows == 0 {
        return 0;
    }
    let cols = m[0].len();
    let mut rank = 0;
    let mut row = 0;
    for col in 0..cols {
        if row >= rows {
            break;
        }
        let pivot = (row..rows).find(|&r| !m[r][col].is_multiple_of(p));
        let Some(pr) = pivot else { continue };
        m.swap(row, pr);
        let inv = mod_inverse(m[row][col] % p, p);
        for x in m[row][col..cols].iter_mut() {
            *x = *x % p * inv % p;
        }
        for r in 0..rows {
            if r != row && !m[r][col].is_multiple_of(p) {
                let f = m[r][col] % p;
                for c in col..cols {
                    m[r][c] = (m[r][c] + (p - f) * m[row][c]) % p;
                }
            }
        }
        row += 1;
        rank += 1;
    }
    rank
}

pub fn mod_inverse(a: u64, p: u64) -> u64 {
    // Fermat: p is prime
    mod_pow(a % p, p - 2, p)
}

pub fn mod_pow(mut b: u64, mut e: u64, p: u64) -> u64 {
    let mut acc = 1u64;
    b %= p;
    while e > 0 {
        if e & 1 == 1 {
            acc = acc * b % p;
        }
        b = b * b % p;
        e >>= 1;
    }
    acc
}

/// Evaluate a polynomial over F_p given an assignment by variable index.
pub fn eval_poly_mod_p(
    poly: &Polynomial,
    p: u64,
    index: &BTreeMap<VariableId, usize>,
    point: &[u64],
) -> u64 {
    assert_eq!(poly.field, FieldTag::Q, "tower polynomials are over Q");
    let mut acc = 0u64;
    for (m, c) in &poly.terms {
        let c = match c {
            Coeff::Rat(r) => {
                let n = r.to_integer();
                let mag: i64 = n.abs().try_into().expect("small coefficient");
                let v = if n.is_negative() { -mag } else { mag };
                v.rem_euclid(p as i64) as u64
            }
            Coeff::Fp(v) => *v % p,
        };
        let mut t = c;
        for (v, e) in &m.0 {
            let b = point[index[v]] % p;
            t = t * mod_pow(b, *e as u64, p) % p;
        }
        acc = (acc + t) % p;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indices::IndexTuple;
    use crate::poly::{Monomial, Polynomial};

    fn x(i: u8) -> VariableId {
        VariableId::Coord(IndexTuple::new(vec![i]))
    }

    #[test]
    fn single_linear_equation() {
        // x = 0 in one variable over F_3 -> exactly one point
        let sys = CompiledSystem::new(
            vec![x(1)],
            &[Polynomial::var(FieldTag::Q, x(1))],
        );
        let sols = enumerate_solutions(&sys, 3, 14, 0, 0);
        assert_eq!(sols, vec![vec![0]]);
    }

    #[test]
    fn gr24_cone_point_count() {
        // x13 x24 - x14 x23 over F_3 in 4 variables: 33 points
        let vars = vec![x(1), x(2), x(3), x(4)];
        let f = FieldTag::Q;
        let q = Polynomial::from_term(f, Monomial::from_vars([x(1), x(2)]), 1)
            .sub(&Polynomial::from_term(f, Monomial::from_vars([x(3), x(4)]), 1))
            .unwrap();
        let sys = CompiledSystem::new(vars, &[q]);
        let sols = enumerate_solutions(&sys, 3, 14, 0, 0);
        // independent oracle: plain count over all 3^4 tuples
        let mut brute = 0;
        for a in 0..3u64 {
            for b in 0..3u64 {
                for c in 0..3u64 {
                    for d in 0..3u64 {
                        if (a * b) % 3 == (c * d) % 3 {
                            brute += 1;
                        }
                    }
                }
            }
        }
        assert_eq!(brute, 33);
        assert_eq!(sols.len(), brute);
    }

    #[test]
    fn inconsistent_system_is_empty() {
        let sys = CompiledSystem::new(
            vec![x(1)],
            &[Polynomial::one(FieldTag::Q)],
        );
        assert!(enumerate_solutions(&sys, 3, 14, 0, 0).is_empty());
        assert!(!has_solution(&sys, 3));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_mod_p(vec![vec![1, 0], vec![0, 1]], 5), 2);
        assert_eq!(rank_mod_p(vec![vec![2, 4], vec![1, 2]], 5), 1);
        assert_eq!(rank_mod_p(vec![vec![0, 0]], 5), 0);
        assert_eq!(rank_mod_p(vec![vec![3, 1], vec![1, 2], vec![4, 3]], 5), 1);
        assert_eq!(rank_mod_p(vec![vec![3, 1], vec![1, 2]], 7), 2);
    }
}

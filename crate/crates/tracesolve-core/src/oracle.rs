//! Brute-force ground truth. Enumerates all bounded solutions by exhaustive
//! substitution into the user equation, with no recompression machinery
//! involved: candidates are filtered by resources, constraint images and
//! (in group mode) reducedness, then the two sides are compared directly.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::error::{Result, SolveError};
use crate::instance::{Mode, USym, UserInstance};
use crate::trace::canon_word;

/// One word per variable pair representative, in declaration order, in
/// canonical form over the user letter ids.
pub type Tuple = Vec<Vec<usize>>;

fn dep_of(u: &UserInstance) -> impl Fn(usize, usize) -> bool + '_ {
    move |a, b| u.letter_dep(a, b)
}

fn involute_user(u: &UserInstance, w: &[usize]) -> Vec<usize> {
    w.iter().rev().map(|&a| u.letters[a].bar).collect()
}

fn mu_user(u: &UserInstance, w: &[usize]) -> u16 {
    u.monoid.eval_els(w.iter().map(|&a| u.letters[a].img))
}

/// No factor a·ā up to commutation: every bar pair has a dependent letter
/// strictly between its endpoints.
pub fn is_reduced_user(u: &UserInstance, w: &[usize]) -> bool {
    for p in 0..w.len() {
        'next: for q in p + 1..w.len() {
            if u.letters[w[p]].bar != w[q] {
                continue;
            }
            // bar partners share resources, so the pair cancels exactly
            // when nothing dependent sits between them
            for k in p + 1..q {
                if u.letter_dep(w[k], w[p]) {
                    continue 'next;
                }
            }
            return false;
        }
    }
    true
}

/// Cancels bar pairs until none remains; the result is the group normal
/// form, unique up to commutation.
pub fn reduce_user(u: &UserInstance, w: &[usize]) -> Vec<usize> {
    let mut cur = w.to_vec();
    'outer: loop {
        for p in 0..cur.len() {
            'next: for q in p + 1..cur.len() {
                if u.letters[cur[p]].bar != cur[q] {
                    continue;
                }
                for k in p + 1..q {
                    if u.letter_dep(cur[k], cur[p]) {
                        continue 'next;
                    }
                }
                cur.remove(q);
                cur.remove(p);
                continue 'outer;
            }
        }
        return cur;
    }
}

fn sides_agree(u: &UserInstance, sigma: &[Vec<usize>]) -> bool {
    let expand = |side: &[USym]| -> Vec<usize> {
        let mut out = Vec::new();
        for &s in side {
            match s {
                USym::L(a) => out.push(a),
                USym::V(x) => out.extend_from_slice(&sigma[x]),
            }
        }
        out
    };
    let dep = dep_of(u);
    let (lhs, rhs) = (expand(&u.lhs), expand(&u.rhs));
    match u.mode {
        Mode::Monoid => {
            lhs.len() == rhs.len() && canon_word(&lhs, &dep) == canon_word(&rhs, &dep)
        }
        Mode::Group => {
            let (lr, rr) = (reduce_user(u, &lhs), reduce_user(u, &rhs));
            lr.len() == rr.len() && canon_word(&lr, &dep) == canon_word(&rr, &dep)
        }
    }
}

/// All canonical words of length at most `bound` over the letters allowed
/// for one variable, passing the per-variable filters.
fn candidates_for(u: &UserInstance, x: usize, bound: usize, cap: usize) -> Result<Vec<Vec<usize>>> {
    let allowed: Vec<usize> = (0..u.letters.len())
        .filter(|&a| u.letters[a].rho & !u.vars[x].rho == 0)
        .collect();
    let dep = dep_of(u);
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut layer: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..=bound {
        for w in &layer {
            if mu_user(u, w) == u.vars[x].img
                && (u.mode == Mode::Monoid || is_reduced_user(u, w))
            {
                out.push(w.clone());
            }
            if out.len() > cap {
                return Err(SolveError::budget("oracle candidates", out.len(), cap));
            }
        }
        let mut next: Vec<Vec<usize>> = Vec::new();
        for w in &layer {
            for &a in &allowed {
                let mut w2 = w.clone();
                w2.push(a);
                // keep one representative per commutation class
                if canon_word(&w2, &dep) == w2 {
                    next.push(w2);
                }
            }
            if next.len() > cap {
                return Err(SolveError::budget("oracle candidates", next.len(), cap));
            }
        }
        layer = next;
    }
    Ok(out)
}

/// All solution tuples with every component of length at most `bound`,
/// one component per variable pair representative, canonical, sorted.
pub fn enumerate_bruteforce(
    u: &UserInstance,
    bound: usize,
    cap: usize,
) -> Result<BTreeSet<Tuple>> {
    let reps: Vec<usize> = u.var_pairs().iter().map(|&(x, _)| x).collect();
    if reps.is_empty() {
        let mut out = BTreeSet::new();
        if sides_agree(u, &[]) {
            out.insert(Vec::new());
        }
        return Ok(out);
    }
    let cands: Vec<Vec<Vec<usize>>> = reps
        .iter()
        .map(|&x| candidates_for(u, x, bound, cap))
        .collect::<Result<_>>()?;
    let mut total: usize = 1;
    for c in &cands {
        total = total
            .checked_mul(c.len())
            .filter(|&t| t <= cap)
            .ok_or_else(|| SolveError::budget("oracle tuples", cap + 1, cap))?;
    }

    let n_vars = u.vars.len();
    let pairs = u.var_pairs();
    let check_tuple = |tuple: &[&Vec<usize>]| -> bool {
        let mut sigma: Vec<Vec<usize>> = vec![Vec::new(); n_vars];
        for (i, &(x, xb)) in pairs.iter().enumerate() {
            sigma[x] = tuple[i].clone();
            if xb != x {
                sigma[xb] = involute_user(u, tuple[i]);
            }
        }
        sides_agree(u, &sigma)
    };

    let found: BTreeSet<Tuple> = cands[0]
        .par_iter()
        .map(|first| {
            let mut local = BTreeSet::new();
            let mut stack: Vec<&Vec<usize>> = vec![first];
            fill(&cands, 1, &mut stack, &check_tuple, &mut local);
            local
        })
        .reduce(BTreeSet::new, |mut a, b| {
            a.extend(b);
            a
        });
    Ok(found)
}

fn fill<'a>(
    cands: &'a [Vec<Vec<usize>>],
    depth: usize,
    stack: &mut Vec<&'a Vec<usize>>,
    check: &impl Fn(&[&Vec<usize>]) -> bool,
    out: &mut BTreeSet<Tuple>,
) {
    if depth == cands.len() {
        if check(stack) {
            out.insert(stack.iter().map(|w| (*w).clone()).collect());
        }
        return;
    }
    for w in &cands[depth] {
        stack.push(w);
        fill(cands, depth + 1, stack, check, out);
        stack.pop();
    }
}

/// Solution count at the bound; the sanity reference for finiteness claims.
pub fn count_at_bound(u: &UserInstance, bound: usize, cap: usize) -> Result<usize> {
    Ok(enumerate_bruteforce(u, bound, cap)?.len())
}

/// Renders a tuple with user letter names, one component per representative.
pub fn tuple_name(u: &UserInstance, t: &Tuple) -> String {
    let comp = |w: &[usize]| -> String {
        if w.is_empty() {
            "ε".to_string()
        } else {
            w.iter()
                .map(|&a| u.letters[a].name.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        }
    };
    format!("({})", t.iter().map(|w| comp(w)).collect::<Vec<_>>().join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::InstanceFile;

    fn user(json: &str) -> UserInstance {
        InstanceFile::from_str(json).unwrap().resolve().unwrap()
    }

    fn toy1() -> UserInstance {
        user(
            r#"{"schema":"tracesolve-instance/1","resources":["r1"],
                "constants":[{"name":"a","bar":"a~","rho":["r1"]}],
                "variables":[{"name":"X","bar":"X~","rho":["r1"]}],
                "equation":{"lhs":["X"],"rhs":["a"]}}"#,
        )
    }

    fn toy2() -> UserInstance {
        user(
            r#"{"schema":"tracesolve-instance/1","resources":["r1"],
                "constants":[{"name":"a","bar":"a~","rho":["r1"]}],
                "variables":[{"name":"X","bar":"X~","rho":["r1"]}],
                "equation":{"lhs":["X","a"],"rhs":["a","X"]}}"#,
        )
    }

    #[test]
    fn toy1_single_solution() {
        let u = toy1();
        let sols = enumerate_bruteforce(&u, 2, 10_000).unwrap();
        let names: Vec<String> = sols.iter().map(|t| tuple_name(&u, t)).collect();
        assert_eq!(names, vec!["(a)"]);
    }

    #[test]
    fn toy2_powers_of_a() {
        let u = toy2();
        let sols = enumerate_bruteforce(&u, 2, 10_000).unwrap();
        let names: Vec<String> = sols.iter().map(|t| tuple_name(&u, t)).collect();
        assert_eq!(names, vec!["(ε)", "(a)", "(a a)"]);
        assert_eq!(count_at_bound(&u, 3, 10_000).unwrap(), 4);
    }

    #[test]
    fn unsat_toy_empty() {
        let u = user(
            r#"{"schema":"tracesolve-instance/1","resources":["r1"],
                "constants":[{"name":"a","bar":"a~","rho":["r1"]}],
                "variables":[{"name":"X","bar":"X~","rho":["r1"]}],
                "equation":{"lhs":["X","X"],"rhs":["a"]}}"#,
        );
        assert!(enumerate_bruteforce(&u, 3, 10_000).unwrap().is_empty());
    }

    #[test]
    fn no_variable_instances() {
        let sat = user(
            r#"{"schema":"tracesolve-instance/1","resources":["r1","r2"],
                "constants":[{"name":"a","bar":"a~","rho":["r1"]},
                             {"name":"b","bar":"b~","rho":["r2"]}],
                "variables":[],
                "equation":{"lhs":["a","b"],"rhs":["b","a"]}}"#,
        );
        assert_eq!(count_at_bound(&sat, 1, 100).unwrap(), 1);
        let unsat = user(
            r#"{"schema":"tracesolve-instance/1","resources":["r1"],
                "constants":[{"name":"a","bar":"a~","rho":["r1"]}],
                "variables":[],
                "equation":{"lhs":["a"],"rhs":["a","a"]}}"#,
        );
        assert_eq!(count_at_bound(&unsat, 1, 100).unwrap(), 0);
    }

    #[test]
    fn commuting_candidates_deduplicated() {
        // X over two independent letters: ab and ba are one candidate
        let u = user(
            r#"{"schema":"tracesolve-instance/1","resources":["r1","r2"],
                "constants":[{"name":"a","bar":"a~","rho":["r1"]},
                             {"name":"b","bar":"b~","rho":["r2"]}],
                "variables":[{"name":"X","bar":"X~","rho":["r1","r2"]}],
                "equation":{"lhs":["X"],"rhs":["a","b"]}}"#,
        );
        let sols = enumerate_bruteforce(&u, 2, 10_000).unwrap();
        assert_eq!(sols.len(), 1);
        let t = sols.iter().next().unwrap();
        let w = &t[0];
        assert_eq!(w.len(), 2);
        let dep = dep_of(&u);
        assert_eq!(canon_word(w, &dep), *w);
    }

    #[test]
    fn group_mode_requires_reduced_images() {
        // X X~ = 1 in a free group: every reduced word solves it, the
        // non-reduced ones are excluded by the filter
        let u = user(
            r#"{"schema":"tracesolve-instance/1","resources":["r1"],
                "constants":[{"name":"a","bar":"a~","rho":["r1"]}],
                "variables":[{"name":"X","bar":"X~","rho":["r1"]}],
                "equation":{"lhs":["X","X~"],"rhs":[]},
                "mode":"group"}"#,
        );
        let sols = enumerate_bruteforce(&u, 2, 10_000).unwrap();
        let names: Vec<String> = sols.iter().map(|t| tuple_name(&u, t)).collect();
        // reduced words over {a, a~} of length ≤ 2: ε, a, a~, aa, a~a~
        assert_eq!(names, vec!["(ε)", "(a)", "(a a)", "(a~)", "(a~ a~)"]);
    }

    #[test]
    fn group_reduction_cancels_across_independent_letters() {
        let u = user(
            r#"{"schema":"tracesolve-instance/1","resources":["r1","r2"],
                "constants":[{"name":"a","bar":"a~","rho":["r1"]},
                             {"name":"b","bar":"b~","rho":["r2"]}],
                "variables":[],
                "equation":{"lhs":["a","b","a~"],"rhs":["b"]},
                "mode":"group"}"#,
        );
        // a b a~ reduces to b because a commutes past b
        assert_eq!(count_at_bound(&u, 0, 100).unwrap(), 1);
        let ids: Vec<usize> = vec![0, 2, 1];
        let red = reduce_user(&u, &ids);
        assert_eq!(red, vec![2]);
        assert!(!is_reduced_user(&u, &ids));
    }

    #[test]
    fn explosion_abort() {
        let u = user(
            r#"{"schema":"tracesolve-instance/1","resources":["r1"],
                "constants":[{"name":"a","bar":"a~","rho":["r1"]},
                             {"name":"b","bar":"b~","rho":["r1"]}],
                "variables":[{"name":"X","bar":"X~","rho":["r1"]},
                             {"name":"Y","bar":"Y~","rho":["r1"]}],
                "equation":{"lhs":["X","Y"],"rhs":["Y","X"]}}"#,
        );
        let err = enumerate_bruteforce(&u, 6, 50).unwrap_err();
        assert!(matches!(err, SolveError::Budget { .. }));
    }

    #[test]
    fn monotone_in_bound() {
        let u = toy2();
        let a = enumerate_bruteforce(&u, 1, 10_000).unwrap();
        let b = enumerate_bruteforce(&u, 3, 10_000).unwrap();
        assert!(a.is_subset(&b));
    }
}

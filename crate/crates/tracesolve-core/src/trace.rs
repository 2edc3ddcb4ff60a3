use std::collections::BTreeSet;
use std::collections::VecDeque;

use crate::alphabet::{inv_word, Letter, LetterTable, ResSet};
use crate::error::{Result, SolveError};

/// Greedy least-minimal linearization: repeatedly remove the smallest symbol
/// among the currently minimal positions. The output is unique per
/// commutation class, so word equality on outputs decides trace equality.
/// Equal symbols are always dependent here (callers guarantee it), hence at
/// most one position per symbol is minimal and ties cannot arise.
pub fn canon_word<T: Copy + Ord>(w: &[T], dep: &impl Fn(T, T) -> bool) -> Vec<T> {
    let mut rest: Vec<T> = w.to_vec();
    let mut out = Vec::with_capacity(w.len());
    while !rest.is_empty() {
        let mut best: Option<(usize, T)> = None;
        'cand: for i in 0..rest.len() {
            for j in 0..i {
                if dep(rest[j], rest[i]) {
                    continue 'cand;
                }
            }
            match best {
                None => best = Some((i, rest[i])),
                Some((_, b)) if rest[i] < b => best = Some((i, rest[i])),
                _ => {}
            }
        }
        let (i, s) = best.expect("nonempty word has a minimal position");
        rest.remove(i);
        out.push(s);
    }
    out
}

/// Positions with no dependent position to their left.
pub fn min_positions<T: Copy>(w: &[T], dep: &impl Fn(T, T) -> bool) -> Vec<usize> {
    (0..w.len())
        .filter(|&i| (0..i).all(|j| !dep(w[j], w[i])))
        .collect()
}

/// Positions with no dependent position to their right.
pub fn max_positions<T: Copy>(w: &[T], dep: &impl Fn(T, T) -> bool) -> Vec<usize> {
    (0..w.len())
        .filter(|&i| (i + 1..w.len()).all(|j| !dep(w[i], w[j])))
        .collect()
}

/// Strict dependence order as a matrix: `ord[i][j]` iff position i precedes
/// position j (i < j and connected by a chain of dependent pairs).
pub fn order_closure<T: Copy>(w: &[T], dep: &impl Fn(T, T) -> bool) -> Vec<Vec<bool>> {
    let n = w.len();
    let mut ord = vec![vec![false; n]; n];
    for j in 0..n {
        for i in (0..j).rev() {
            if dep(w[i], w[j]) {
                ord[i][j] = true;
            } else {
                for k in i + 1..j {
                    if dep(w[i], w[k]) && ord[k][j] {
                        ord[i][j] = true;
                        break;
                    }
                }
            }
        }
    }
    ord
}

/// Arcs of the Hasse diagram: covering pairs of the dependence order.
pub fn hasse_arcs<T: Copy>(w: &[T], dep: &impl Fn(T, T) -> bool) -> Vec<(usize, usize)> {
    let ord = order_closure(w, dep);
    let n = w.len();
    let mut arcs = Vec::new();
    for i in 0..n {
        'pair: for j in i + 1..n {
            if !ord[i][j] {
                continue;
            }
            for k in i + 1..j {
                if ord[i][k] && ord[k][j] {
                    continue 'pair;
                }
            }
            arcs.push((i, j));
        }
    }
    arcs
}

/// Breadth-first closure of a word under adjacent independent-letter swaps
/// and the given directed factor swaps (u·v ↦ v·u at any position). Exact,
/// budgeted; exceeding the budget is an error, never a truncated answer.
pub fn class_bfs<T: Copy + Ord>(
    w: &[T],
    dep: &impl Fn(T, T) -> bool,
    factor_swaps: &[(Vec<T>, Vec<T>)],
    budget: usize,
) -> Result<BTreeSet<Vec<T>>> {
    let mut seen: BTreeSet<Vec<T>> = BTreeSet::new();
    let mut queue: VecDeque<Vec<T>> = VecDeque::new();
    seen.insert(w.to_vec());
    queue.push_back(w.to_vec());
    while let Some(cur) = queue.pop_front() {
        for i in 0..cur.len().saturating_sub(1) {
            if !dep(cur[i], cur[i + 1]) {
                let mut next = cur.clone();
                next.swap(i, i + 1);
                if seen.insert(next.clone()) {
                    if seen.len() > budget {
                        return Err(SolveError::budget("class_bfs", seen.len(), budget));
                    }
                    queue.push_back(next);
                }
            }
        }
        for (u, v) in factor_swaps {
            let l = u.len() + v.len();
            if l > cur.len() {
                continue;
            }
            for i in 0..=cur.len() - l {
                if cur[i..i + u.len()] == u[..] && cur[i + u.len()..i + l] == v[..] {
                    let mut next = cur[..i].to_vec();
                    next.extend_from_slice(v);
                    next.extend_from_slice(u);
                    next.extend_from_slice(&cur[i + l..]);
                    if seen.insert(next.clone()) {
                        if seen.len() > budget {
                            return Err(SolveError::budget("class_bfs", seen.len(), budget));
                        }
                        queue.push_back(next);
                    }
                }
            }
        }
    }
    Ok(seen)
}

/// Maximal groups of positions whose symbols satisfy `member`, with no
/// position satisfying `breaks` in between. Symbols satisfying neither are
/// transparent. Representative-independent when every breaking symbol is
/// dependent on every member symbol.
pub fn scan_runs<T: Copy>(
    w: &[T],
    member: impl Fn(T) -> bool,
    breaks: impl Fn(T) -> bool,
) -> Vec<Vec<usize>> {
    let mut runs = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    for (i, &x) in w.iter().enumerate() {
        if member(x) {
            cur.push(i);
        } else if breaks(x) {
            if !cur.is_empty() {
                runs.push(std::mem::take(&mut cur));
            }
        }
    }
    if !cur.is_empty() {
        runs.push(cur);
    }
    runs
}

// letter-level wrappers

pub fn letter_dep<'a>(tab: &'a LetterTable) -> impl Fn(Letter, Letter) -> bool + 'a {
    move |a, b| tab.rho(a) & tab.rho(b) != 0
}

/// Canonical representative of the commutation class (no type relation).
pub fn normal_form(w: &[Letter], tab: &LetterTable) -> Vec<Letter> {
    canon_word(w, &letter_dep(tab))
}

pub fn trace_equal(u: &[Letter], v: &[Letter], tab: &LetterTable) -> bool {
    normal_form(u, tab) == normal_form(v, tab)
}

/// Reverse, bar each letter, renormalize.
pub fn involute(w: &[Letter], tab: &LetterTable) -> Vec<Letter> {
    normal_form(&inv_word(tab, w), tab)
}

/// True iff no factor a·ā occurs in any representative: equivalently, no
/// Hasse arc connects a position to one holding its bar partner.
pub fn is_reduced(w: &[Letter], tab: &LetterTable) -> bool {
    let dep = letter_dep(tab);
    hasse_arcs(w, &dep)
        .into_iter()
        .all(|(i, j)| w[j] != tab.bar(w[i]))
}

/// Exact factor test by class enumeration; budgeted.
pub fn factor_of(v: &[Letter], w: &[Letter], tab: &LetterTable, budget: usize) -> Result<bool> {
    if v.len() > w.len() {
        return Ok(false);
    }
    if v.is_empty() {
        return Ok(true);
    }
    let dep = letter_dep(tab);
    let vc = normal_form(v, tab);
    for rep in class_bfs(w, &dep, &[], budget)? {
        for i in 0..=rep.len() - v.len() {
            if canon_word(&rep[i..i + v.len()], &dep) == vc {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Length-preserving projection onto user base letters.
pub fn project_pi0(w: &[Letter], tab: &LetterTable) -> Vec<Letter> {
    tab.project_base(w)
}

/// Maximal runs of positions with ρ exactly `s`, broken by any position
/// whose resources meet `s` without being exactly `s`.
pub fn s_runs(w: &[Letter], tab: &LetterTable, s: ResSet) -> Vec<Vec<usize>> {
    scan_runs(
        w,
        |x| tab.rho(x) == s,
        |x| tab.rho(x) & s != 0 && tab.rho(x) != s,
    )
}

/// Maximal blocks of the letter `a`, broken by any other letter sharing a
/// resource with `a`.
pub fn letter_blocks(w: &[Letter], tab: &LetterTable, a: Letter) -> Vec<Vec<usize>> {
    scan_runs(
        w,
        |x| x == a,
        |x| x != a && tab.rho(x) & tab.rho(a) != 0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphabet::LetterTable;

    // a=1 a~=2 on resource {0}; b=3 b~=4 on {1}; c=5 c~=6 on {0,1}
    fn tab() -> LetterTable {
        let mut t = LetterTable::new(vec!["r0".into(), "r1".into()], 0).unwrap();
        t.push_pair("a".into(), "a~".into(), 0b01, 0, 0);
        t.push_pair("b".into(), "b~".into(), 0b10, 0, 0);
        t.push_pair("c".into(), "c~".into(), 0b11, 0, 0);
        t.close_alphabet().unwrap();
        t
    }

    const A: Letter = 1;
    const AB: Letter = 2;
    const B: Letter = 3;
    const C: Letter = 5;

    #[test]
    fn independent_letters_sort() {
        let t = tab();
        assert_eq!(normal_form(&[B, A], &t), vec![A, B]);
        assert_eq!(normal_form(&[A, B], &t), vec![A, B]);
    }

    #[test]
    fn dependent_letters_stay() {
        let t = tab();
        assert_eq!(normal_form(&[AB, A], &t), vec![AB, A]);
    }

    #[test]
    fn bca_is_singleton_class() {
        let t = tab();
        // c depends on both a and b, so nothing moves
        assert_eq!(normal_form(&[B, C, A], &t), vec![B, C, A]);
        let dep = letter_dep(&t);
        assert_eq!(class_bfs(&[B, C, A], &dep, &[], 100).unwrap().len(), 1);
    }

    #[test]
    fn trace_equal_basic() {
        let t = tab();
        assert!(trace_equal(&[A, B], &[B, A], &t));
        assert!(!trace_equal(&[A, AB], &[AB, A], &t));
    }

    #[test]
    fn hasse_abc_shape() {
        let t = tab();
        let dep = letter_dep(&t);
        assert_eq!(hasse_arcs(&[A, B], &dep), vec![]);
        assert_eq!(hasse_arcs(&[A, AB], &dep), vec![(0, 1)]);
        assert_eq!(hasse_arcs(&[A, B, C], &dep), vec![(0, 2), (1, 2)]);
    }

    #[test]
    fn hasse_skips_transitive_pairs() {
        let t = tab();
        let dep = letter_dep(&t);
        // a a c: (0,1) and (1,2) are covers, (0,2) is composite
        assert_eq!(hasse_arcs(&[A, A, C], &dep), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn min_and_max_elements() {
        let t = tab();
        let dep = letter_dep(&t);
        // b < c < a is a chain: c shares a resource with both ends
        assert_eq!(min_positions(&[B, C, A], &dep), vec![0]);
        assert_eq!(max_positions(&[B, C, A], &dep), vec![2]);
        // independent letters are both minimal and both maximal
        assert_eq!(min_positions(&[A, B], &dep), vec![0, 1]);
        assert_eq!(max_positions(&[A, B], &dep), vec![0, 1]);
        assert_eq!(min_positions(&[A, AB], &dep), vec![0]);
    }

    #[test]
    fn involute_reverses_and_bars() {
        let t = tab();
        assert_eq!(involute(&[A, B], &t), normal_form(&[4, 2], &t));
        assert_eq!(involute(&[], &t), Vec::<Letter>::new());
        let twice = involute(&involute(&[A, B, C], &t), &t);
        assert_eq!(twice, normal_form(&[A, B, C], &t));
    }

    #[test]
    fn involute_selfinv_letter() {
        // a=ā over a free monoid: "a b a" involutes to "a b~ a"
        let mut t = LetterTable::new(vec!["r0".into()], 0).unwrap();
        let m = t.push_selfinv("m".into(), 0b1, 0);
        t.push_pair("b".into(), "b~".into(), 0b1, 0, 0);
        t.close_alphabet().unwrap();
        let b = m + 1;
        let bb = m + 2;
        assert_eq!(involute(&[m, b, m], &t), vec![m, bb, m]);
    }

    #[test]
    fn reducedness() {
        let t = tab();
        assert!(!is_reduced(&[A, AB], &t));
        assert!(is_reduced(&[A, 4], &t));
        // a b ā with disjoint resources: b slides out, a·ā emerges
        assert!(!is_reduced(&[A, B, AB], &t));
        // blocked by a dependent letter in between
        assert!(is_reduced(&[A, C, AB], &t));
    }

    #[test]
    fn factor_tests() {
        let t = tab();
        assert!(factor_of(&[A], &[B, A, B], &t, 1000).unwrap());
        assert!(!factor_of(&[A, A], &[A, AB], &t, 1000).unwrap());
        // ab is a factor of bab since bab = b·ab in the monoid
        assert!(factor_of(&[A, B], &[B, A, B], &t, 1000).unwrap());
    }

    #[test]
    fn projection_is_length_preserving() {
        let t = tab();
        let lifted = t.lift(A, 0b11).unwrap();
        let w = vec![lifted, C, A];
        let p = project_pi0(&w, &t);
        assert_eq!(p.len(), w.len());
        assert_eq!(p, vec![A, C, A]);
    }

    #[test]
    fn runs_and_blocks() {
        let t = tab();
        // word: a a b a~ c a — ρ(a)-runs over S={0}: {a,a,a~} block split by c
        let w = vec![A, A, B, AB, C, A];
        let runs = s_runs(&w, &t, 0b01);
        assert_eq!(runs, vec![vec![0, 1, 3], vec![5]]);
        let blocks = letter_blocks(&w, &t, A);
        assert_eq!(blocks, vec![vec![0, 1], vec![5]]);
    }

    #[test]
    fn class_bfs_budget_is_an_error() {
        let t = tab();
        let dep = letter_dep(&t);
        let w = vec![A, B, A, B, A, B];
        assert!(class_bfs(&w, &dep, &[], 2).is_err());
    }
}

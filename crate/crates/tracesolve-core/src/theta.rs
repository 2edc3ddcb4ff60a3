use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::alphabet::{Letter, LetterTable, ResSet, Var, VarTable};
use crate::error::{Result, SolveError};
use crate::trace::{canon_word, class_bfs};

/// A type word: single letter or quasi-letter a·ā.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum TWord {
    One(Letter),
    Two(Letter, Letter),
}

impl TWord {
    pub fn len(&self) -> usize {
        match self {
            TWord::One(_) => 1,
            TWord::Two(..) => 2,
        }
    }
    pub fn letters(&self) -> Vec<Letter> {
        match *self {
            TWord::One(a) => vec![a],
            TWord::Two(a, b) => vec![a, b],
        }
    }
    pub fn involute(&self, tab: &LetterTable) -> TWord {
        match *self {
            TWord::One(a) => TWord::One(tab.bar(a)),
            TWord::Two(a, b) => TWord::Two(tab.bar(b), tab.bar(a)),
        }
    }
}

/// The type relation θ of a structured monoid: finitely many pairs (x,y)
/// where x is a fresh constant, quasi-letter, or variable, and y is a fresh
/// constant or quasi-letter of the same length and resources.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TypeRelation {
    pub consts: BTreeMap<TWord, TWord>,
    pub vars: BTreeMap<Var, TWord>,
}

impl TypeRelation {
    pub fn is_empty(&self) -> bool {
        self.consts.is_empty() && self.vars.is_empty()
    }

    /// Stored pair count (involution partners count separately).
    pub fn size(&self) -> usize {
        self.consts.len() + self.vars.len()
    }

    /// Inserts a constant pair together with its involution partner.
    pub fn insert_const(&mut self, x: TWord, y: TWord, tab: &LetterTable) {
        self.consts.insert(x, y);
        self.consts.insert(x.involute(tab), y.involute(tab));
    }

    pub fn remove_const(&mut self, x: TWord, tab: &LetterTable) {
        self.consts.remove(&x);
        self.consts.remove(&x.involute(tab));
    }

    /// Types a variable pair: θ(X)=y and θ(X̄)=ȳ.
    pub fn insert_var(&mut self, x: Var, y: TWord, vt: &VarTable, tab: &LetterTable) {
        self.vars.insert(x, y);
        self.vars.insert(vt.bar(x), y.involute(tab));
    }

    pub fn remove_var(&mut self, x: Var, vt: &VarTable) {
        self.vars.remove(&x);
        self.vars.remove(&vt.bar(x));
    }

    pub fn var_type(&self, x: Var) -> Option<TWord> {
        self.vars.get(&x).copied()
    }

    /// Symmetric θ-commutation between two single constants.
    pub fn letters_commute(&self, a: Letter, b: Letter) -> bool {
        self.consts.get(&TWord::One(a)) == Some(&TWord::One(b))
            || self.consts.get(&TWord::One(b)) == Some(&TWord::One(a))
    }

    /// Symmetric θ-commutation between two quasi-letters.
    pub fn quasis_commute(&self, s: (Letter, Letter), t: (Letter, Letter)) -> bool {
        let (s, t) = (TWord::Two(s.0, s.1), TWord::Two(t.0, t.1));
        self.consts.get(&s) == Some(&t) || self.consts.get(&t) == Some(&s)
    }

    /// All quasi-letters mentioned by θ (domain and range), keyed by their
    /// first letter. First letters and second letters never overlap; the
    /// greedy tokenizer depends on that and `validate` enforces it.
    pub fn quasi_by_first(&self) -> BTreeMap<Letter, Letter> {
        let mut m = BTreeMap::new();
        for (x, y) in &self.consts {
            for w in [x, y] {
                if let TWord::Two(a, b) = *w {
                    m.insert(a, b);
                }
            }
        }
        for y in self.vars.values() {
            if let TWord::Two(a, b) = *y {
                m.insert(a, b);
            }
        }
        m
    }

    /// The defining relations induced by θ on constant words, as directed
    /// factor swaps (u·v ↦ v·u in both orders) for brute-force closure.
    pub fn factor_swaps(&self, _tab: &LetterTable) -> Vec<(Vec<Letter>, Vec<Letter>)> {
        let mut out = Vec::new();
        for (x, y) in &self.consts {
            out.push((x.letters(), y.letters()));
            out.push((y.letters(), x.letters()));
        }
        out
    }

    /// Full validity check per the structured-monoid contract.
    pub fn validate(&self, tab: &LetterTable, vt: &VarTable) -> Result<()> {
        let fail = |m: String| Err(SolveError::Instance(m));
        for (x, y) in &self.consts {
            if x.len() != y.len() {
                return fail(format!("type pair length mismatch: {:?} -> {:?}", x, y));
            }
            if self.consts.get(&x.involute(tab)) != Some(&y.involute(tab)) {
                return fail(format!("type relation not involution-closed at {:?}", x));
            }
            for w in [x, y] {
                match *w {
                    TWord::One(a) => {
                        if tab.in_a(a) {
                            return fail(format!("type touches fixed letter {}", tab.name(a)));
                        }
                    }
                    TWord::Two(a, b) => {
                        if b != tab.bar(a) || a == b {
                            return fail("quasi-letter is not of the form a·ā".into());
                        }
                        if tab.in_a(a) {
                            return fail(format!("type touches fixed letter {}", tab.name(a)));
                        }
                    }
                }
            }
            let rx: BTreeSet<ResSet> = x.letters().iter().map(|&a| tab.rho(a)).collect();
            let ry: BTreeSet<ResSet> = y.letters().iter().map(|&a| tab.rho(a)).collect();
            if rx != ry || rx.len() != 1 {
                return fail(format!("type partners must share one resource set: {:?} -> {:?}", x, y));
            }
        }
        for (&x, y) in &self.vars {
            if x >= vt.len() {
                return Err(SolveError::UnknownSymbol(format!("variable #{x} in type relation")));
            }
            if self.vars.get(&vt.bar(x)) != Some(&y.involute(tab)) {
                return fail(format!("variable type not involution-closed at {}", vt.name(x)));
            }
            match *y {
                TWord::One(a) if tab.in_a(a) => {
                    return fail(format!("variable typed by fixed letter {}", tab.name(a)));
                }
                TWord::Two(a, b) => {
                    if b != tab.bar(a) || a == b || tab.in_a(a) {
                        return fail("variable typed by malformed quasi-letter".into());
                    }
                }
                _ => {}
            }
        }
        // greedy tokenization precondition
        let mut firsts = BTreeSet::new();
        let mut seconds = BTreeSet::new();
        for (a, b) in self.quasi_by_first() {
            firsts.insert(a);
            seconds.insert(b);
        }
        if firsts.intersection(&seconds).next().is_some() {
            return Err(SolveError::invariant(
                "quasi-letter first/second letter sets overlap",
            ));
        }
        Ok(())
    }
}

/// A tokenized unit: single symbol or a fused quasi-letter occurrence.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum Tok<S> {
    One(S),
    Two(S, S),
}

/// Canonical representative modulo resource commutation and θ.
///
/// Quasi-letter occurrences are first gathered into adjacent tokens by valid
/// commutation moves (a squeeze from both ends), then the token sequence is
/// linearized greedily. All moves are defining relations, so the output is
/// always in the class; agreement with brute-force closure is checked by
/// property tests at desk scale.
pub fn canon_modulo<S: Copy + Ord>(
    w: &[S],
    rho: &impl Fn(S) -> ResSet,
    is_quasi_start: &impl Fn(S, S) -> bool,
    letter_theta: &impl Fn(S, S) -> bool,
    single_token_theta: &impl Fn(S, (S, S)) -> bool,
    quasi_theta: &impl Fn((S, S), (S, S)) -> bool,
) -> Vec<S> {
    let tok_rho = |t: Tok<S>| match t {
        Tok::One(a) => rho(a),
        Tok::Two(a, b) => rho(a) | rho(b),
    };
    let dep_tok = |u: Tok<S>, v: Tok<S>| {
        if tok_rho(u) & tok_rho(v) == 0 {
            return false;
        }
        !match (u, v) {
            (Tok::One(a), Tok::One(b)) => letter_theta(a, b),
            (Tok::One(a), Tok::Two(x, y)) | (Tok::Two(x, y), Tok::One(a)) => {
                single_token_theta(a, (x, y))
            }
            (Tok::Two(a, b), Tok::Two(x, y)) => quasi_theta((a, b), (x, y)),
        }
    };

    let mut toks: Vec<Tok<S>> = w.iter().map(|&s| Tok::One(s)).collect();
    // gather: fuse quasi-letter occurrences, leftmost first, to fixpoint
    loop {
        let mut fused = false;
        'scan: for i in 0..toks.len() {
            let f = match toks[i] {
                Tok::One(f) => f,
                _ => continue,
            };
            let j = match (i + 1..toks.len()).find(|&j| match toks[j] {
                Tok::One(s) => is_quasi_start(f, s),
                _ => false,
            }) {
                Some(j) => j,
                None => continue,
            };
            // only the nearest partner can meet: equal-resource occurrences
            // in between block both squeezes
            let mut work = toks.clone();
            let (mut l, mut r) = (i, j);
            loop {
                if r == l + 1 {
                    let s = match work[r] {
                        Tok::One(s) => s,
                        _ => unreachable!(),
                    };
                    work[l] = Tok::Two(f, s);
                    work.remove(r);
                    toks = work;
                    fused = true;
                    break 'scan;
                }
                if !dep_tok(Tok::One(f), work[l + 1]) {
                    work.swap(l, l + 1);
                    l += 1;
                } else if !dep_tok(work[r - 1], work[r]) {
                    work.swap(r - 1, r);
                    r -= 1;
                } else {
                    break;
                }
            }
        }
        if !fused {
            break;
        }
    }
    let out = canon_word(&toks, &dep_tok);
    let mut flat = Vec::with_capacity(w.len());
    for t in out {
        match t {
            Tok::One(a) => flat.push(a),
            Tok::Two(a, b) => {
                flat.push(a);
                flat.push(b);
            }
        }
    }
    flat
}

/// Canonical form of a constant word in M(Γ,ρ,θ).
pub fn canon_theta(w: &[Letter], tab: &LetterTable, theta: &TypeRelation) -> Vec<Letter> {
    let quasi = theta.quasi_by_first();
    canon_modulo(
        w,
        &|a| tab.rho(a),
        &|a, b| quasi.get(&a) == Some(&b),
        &|a, b| theta.letters_commute(a, b),
        &|_, _| false,
        &|s, t| theta.quasis_commute(s, t),
    )
}

/// Equality in M(Γ,ρ,θ) for constant words.
pub fn homogeneous_equal(u: &[Letter], v: &[Letter], tab: &LetterTable, theta: &TypeRelation) -> bool {
    if u.len() != v.len() {
        return false;
    }
    canon_theta(u, tab, theta) == canon_theta(v, tab, theta)
}

/// Exact uniform factor test: does p·U·q = V hold for some p,q?
/// Realized by budgeted closure of V under the defining relations, testing
/// every window against U's canonical form.
pub fn homogeneous_factor(
    u: &[Letter],
    v: &[Letter],
    tab: &LetterTable,
    theta: &TypeRelation,
    budget: usize,
) -> Result<bool> {
    if u.len() > v.len() {
        return Ok(false);
    }
    if u.is_empty() {
        return Ok(true);
    }
    // necessary condition: letter-count dominance
    let mut need: BTreeMap<Letter, isize> = BTreeMap::new();
    for &a in u {
        *need.entry(a).or_default() += 1;
    }
    for &a in v {
        need.entry(a).and_modify(|c| *c -= 1);
    }
    if need.values().any(|&c| c > 0) {
        return Ok(false);
    }
    let dep = |a: Letter, b: Letter| tab.rho(a) & tab.rho(b) != 0;
    let swaps = theta.factor_swaps(tab);
    let uc = canon_theta(u, tab, theta);
    for rep in class_bfs(v, &dep, &swaps, budget)? {
        for i in 0..=rep.len() - u.len() {
            if canon_theta(&rep[i..i + u.len()], tab, theta) == uc {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

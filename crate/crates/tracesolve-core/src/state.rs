use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::alphabet::{
    inv_word, mask_str, El, Letter, LetterTable, ResSet, Sym, Var, VarTable, MARKER,
};
use crate::error::{Result, SolveError};
use crate::instance::PreparedInstance;
use crate::theta::{canon_modulo, homogeneous_equal, TWord, TypeRelation};

/// Variable assignment: image word over the current constant alphabet.
pub type Sigma = BTreeMap<Var, Vec<Letter>>;

/// Letter assignment down to the fixed alphabet; identity where absent.
/// Analysis object only: the solver never stores one inside a state.
#[derive(Clone, Debug, Default)]
pub struct Alpha(pub BTreeMap<Letter, Vec<Letter>>);

impl Alpha {
    pub fn identity() -> Alpha {
        Alpha(BTreeMap::new())
    }

    pub fn apply(&self, w: &[Letter]) -> Vec<Letter> {
        let mut out = Vec::with_capacity(w.len());
        for &c in w {
            match self.0.get(&c) {
                Some(r) => out.extend_from_slice(r),
                None => out.push(c),
            }
        }
        out
    }
}

/// Lexicographic state weight (|W|, ω, ω′, |W|−|θ|, |B|).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct Weight5(pub [usize; 5]);

impl Weight5 {
    pub fn max_norm(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(0)
    }
}

impl fmt::Display for Weight5 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d, e] = self.0;
        write!(f, "({a},{b},{c},{d},{e})")
    }
}

/// One extended equation: a state of the solution automaton.
///
/// Owns its letter and variable tables so lookups stay total while different
/// search branches grow different fresh alphabets. At the scale the budgets
/// permit this is a few kilobytes per state.
#[derive(Clone, Debug)]
pub struct EqState {
    pub tab: LetterTable,
    pub vt: VarTable,
    pub w: Vec<Sym>,
    /// Current constant subalphabet B; the fixed alphabet is always included.
    pub b: BTreeSet<Letter>,
    pub var_rho: BTreeMap<Var, ResSet>,
    pub var_mu: BTreeMap<Var, El>,
    pub theta: TypeRelation,
}

impl EqState {
    pub fn initial(pre: &PreparedInstance) -> EqState {
        let b = (0..pre.tab.a_count).collect();
        let mut var_rho = BTreeMap::new();
        let mut var_mu = BTreeMap::new();
        for x in 0..pre.vars.len() {
            var_rho.insert(x, pre.var_rho[x as usize]);
            var_mu.insert(x, pre.var_mu[x as usize]);
        }
        EqState {
            tab: pre.tab.clone(),
            vt: pre.vars.clone(),
            w: pre.w_init.clone(),
            b,
            var_rho,
            var_mu,
            theta: TypeRelation::default(),
        }
    }

    pub fn sym_name(&self, s: Sym) -> &str {
        match s {
            Sym::C(c) => self.tab.name(c),
            Sym::V(x) => self.vt.name(x),
        }
    }

    pub fn word_name(&self, w: &[Sym]) -> String {
        w.iter()
            .map(|&s| self.sym_name(s))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn sym_rho(&self, s: Sym) -> ResSet {
        match s {
            Sym::C(c) => self.tab.rho(c),
            Sym::V(x) => *self.var_rho.get(&x).expect("variable without resources"),
        }
    }

    pub fn sym_mu(&self, s: Sym) -> El {
        match s {
            Sym::C(c) => self.tab.mu(c),
            Sym::V(x) => *self.var_mu.get(&x).expect("variable without constraint"),
        }
    }

    pub fn mu_of(&self, w: &[Sym], m: &crate::monoid::FMonoid) -> El {
        m.eval_els(w.iter().map(|&s| self.sym_mu(s)))
    }

    pub fn inv_syms(&self, w: &[Sym]) -> Vec<Sym> {
        w.iter()
            .rev()
            .map(|&s| match s {
                Sym::C(c) => Sym::C(self.tab.bar(c)),
                Sym::V(x) => Sym::V(self.vt.bar(x)),
            })
            .collect()
    }

    /// Canonical representative of an equation word modulo resource
    /// commutation and θ (letter pairs, quasi-letters, typed variables).
    pub fn canon_w(&self, w: &[Sym]) -> Vec<Sym> {
        let quasi = self.theta.quasi_by_first();
        canon_modulo(
            w,
            &|s| self.sym_rho(s),
            &|f, s| match (f, s) {
                (Sym::C(a), Sym::C(b)) => quasi.get(&a) == Some(&b),
                _ => false,
            },
            &|a, b| match (a, b) {
                (Sym::C(x), Sym::C(y)) => self.theta.letters_commute(x, y),
                (Sym::V(x), Sym::C(c)) | (Sym::C(c), Sym::V(x)) => {
                    self.theta.var_type(x) == Some(TWord::One(c))
                }
                _ => false,
            },
            &|a, q| match (a, q) {
                (Sym::V(x), (Sym::C(p), Sym::C(s))) => {
                    self.theta.var_type(x) == Some(TWord::Two(p, s))
                }
                _ => false,
            },
            &|u, v| match (u, v) {
                ((Sym::C(a), Sym::C(b)), (Sym::C(x), Sym::C(y))) => {
                    self.theta.quasis_commute((a, b), (x, y))
                }
                _ => false,
            },
        )
    }

    pub fn trace_eq(&self, u: &[Sym], v: &[Sym]) -> bool {
        u.len() == v.len() && self.canon_w(u) == self.canon_w(v)
    }

    /// Maximal #-free chunks of W. With a well-formed W (marker at both
    /// ends) these are exactly the #-delimited blocks; otherwise the ragged
    /// outer chunks are included so nothing escapes the invariant checks.
    pub fn blocks(&self) -> Vec<&[Sym]> {
        let mut out = Vec::new();
        let mut st = 0usize;
        for (i, &s) in self.w.iter().enumerate() {
            if s == Sym::C(MARKER) {
                out.push(&self.w[st..i]);
                st = i + 1;
            }
        }
        out.push(&self.w[st..]);
        if self.w.first() == Some(&Sym::C(MARKER)) {
            out.remove(0);
        }
        if self.w.last() == Some(&Sym::C(MARKER)) {
            out.pop();
        }
        out
    }

    pub fn marker_count(&self) -> usize {
        self.w.iter().filter(|&&s| s == Sym::C(MARKER)).count()
    }

    pub fn vars_in_w(&self) -> BTreeSet<Var> {
        self.w.iter().filter_map(|s| s.as_var()).collect()
    }

    pub fn weight(&self) -> Weight5 {
        let wl = self.w.len();
        let full = self.tab.full.count_ones() as usize;
        let mut omega = 0usize;
        let mut distinct: BTreeSet<Letter> = BTreeSet::new();
        for &s in &self.w {
            if let Sym::C(c) = s {
                omega += full - self.tab.rho(c).count_ones() as usize;
                distinct.insert(c);
            }
        }
        Weight5([
            wl,
            omega,
            wl - distinct.len(),
            wl.saturating_sub(self.theta.size()),
            self.b.len(),
        ])
    }

    pub fn max_norm(&self) -> usize {
        self.weight().max_norm()
    }

    /// Well-formedness: marker framing, alphabet membership, the
    /// constraint-zero pattern, and block closure under involution.
    ///
    /// The zero pattern is checked per block, which is exact: a zero-like
    /// component of any inner factor is absorbed by the whole block, and a
    /// factor containing # inherits the marker's zero. Involution closure is
    /// likewise exact at block granularity because blocks are the maximal
    /// #-free factors; agreement with the all-factors reading is asserted on
    /// small states in tests.
    pub fn well_formed(&self, pre: &PreparedInstance) -> Result<()> {
        let m = &pre.monoid;
        let bad = |msg: String| Err(SolveError::invariant(msg));
        if self.w.len() >= pre.budgets.equation_len {
            return Err(SolveError::budget(
                "equation length",
                self.w.len(),
                pre.budgets.equation_len,
            ));
        }
        if self.w.first() != Some(&Sym::C(MARKER)) || self.w.last() != Some(&Sym::C(MARKER)) {
            return bad("equation does not begin and end with the marker".into());
        }
        let expect = pre
            .w_init
            .iter()
            .filter(|&&s| s == Sym::C(MARKER))
            .count();
        if self.marker_count() != expect {
            return bad(format!(
                "marker count changed: {} instead of {expect}",
                self.marker_count()
            ));
        }
        for (i, &s) in self.w.iter().enumerate() {
            match s {
                Sym::C(c) => {
                    if c >= self.tab.len() || !self.b.contains(&c) {
                        return bad(format!("position {i} uses a constant outside B"));
                    }
                }
                Sym::V(x) => {
                    if x >= self.vt.len() || !self.var_rho.contains_key(&x) {
                        return bad(format!("position {i} uses a variable outside X"));
                    }
                }
            }
        }
        for a in 0..self.tab.a_count {
            if !self.b.contains(&a) {
                return bad(format!("fixed letter {} missing from B", self.tab.name(a)));
            }
        }
        for &c in &self.b {
            if c >= self.tab.len() {
                return bad(format!("B contains unallocated letter id {c}"));
            }
            if !self.b.contains(&self.tab.bar(c)) {
                return bad(format!("B not involution-closed at {}", self.tab.name(c)));
            }
            // constraint-zero pattern on the alphabet itself
            if self.tab.is_marker(c) {
                if !m.is_zero_like(self.tab.mu(c)) {
                    return bad("marker constraint is not zero-like".into());
                }
            } else if m.is_zero_like(self.tab.mu(c)) {
                return bad(format!("letter {} has zero-like constraint", self.tab.name(c)));
            }
        }
        if self.var_rho.keys().ne(self.var_mu.keys()) {
            return bad("variable resource and constraint maps disagree on X".into());
        }
        for (&x, &r) in &self.var_rho {
            let xb = self.vt.bar(x);
            if self.var_rho.get(&xb) != Some(&r) {
                return bad(format!("X not involution-closed at {}", self.vt.name(x)));
            }
            if r & !self.tab.full != 0 {
                return bad(format!("variable {} uses unknown resources", self.vt.name(x)));
            }
            let mu = self.var_mu[&x];
            if m.is_zero_like(mu) {
                return bad(format!(
                    "variable {} has zero-like constraint",
                    self.vt.name(x)
                ));
            }
            if self.var_mu.get(&xb) != Some(&m.inv(mu)) {
                return bad(format!(
                    "variable constraints not involution-compatible at {}",
                    self.vt.name(x)
                ));
            }
        }
        let blocks = self.blocks();
        for blk in &blocks {
            if m.is_zero_like(self.mu_of(blk, m)) {
                return bad(format!(
                    "marker-free factor `{}` has zero-like constraint",
                    self.word_name(blk)
                ));
            }
        }
        let mut canon: Vec<Vec<Sym>> = blocks.iter().map(|b| self.canon_w(b)).collect();
        let mut canon_inv: Vec<Vec<Sym>> = blocks
            .iter()
            .map(|b| self.canon_w(&self.inv_syms(b)))
            .collect();
        canon.sort();
        canon_inv.sort();
        if canon != canon_inv {
            return bad("blocks of W are not closed under involution".into());
        }
        self.theta.validate(&self.tab, &self.vt)?;
        for (x, y) in &self.theta.consts {
            for t in [x, y] {
                for c in t.letters() {
                    if !self.b.contains(&c) {
                        return bad(format!("type relation letter {} outside B", self.tab.name(c)));
                    }
                }
            }
        }
        for (&x, y) in &self.theta.vars {
            if !self.var_rho.contains_key(&x) {
                return bad(format!("typed variable {} outside X", self.vt.name(x)));
            }
            for c in y.letters() {
                if !self.b.contains(&c) {
                    return bad(format!("variable type letter {} outside B", self.tab.name(c)));
                }
            }
        }
        Ok(())
    }

    /// Debug-build well-formedness assertion for freshly constructed states.
    pub fn assert_wf(&self, pre: &PreparedInstance) {
        debug_assert!(
            {
                let r = self.well_formed(pre);
                if let Err(e) = &r {
                    eprintln!("state not well-formed: {e}\n{}", self.dump());
                }
                r.is_ok()
            },
            "state failed well-formedness"
        );
    }

    /// Accepting test: no variables, empty type relation, W involution-fixed
    /// as a trace, and the leading blocks spell the distinguished letters.
    pub fn is_final(&self, pre: &PreparedInstance) -> bool {
        if !self.var_rho.is_empty() || !self.theta.is_empty() {
            return false;
        }
        if !self.trace_eq(&self.w, &self.inv_syms(&self.w)) {
            return false;
        }
        let blocks = self.blocks();
        if blocks.len() < pre.cpairs.len() {
            return false;
        }
        pre.cpairs
            .iter()
            .enumerate()
            .all(|(i, &(c, _))| blocks[i] == [Sym::C(c)])
    }

    fn expand(&self, w: &[Sym], sigma: &Sigma) -> Vec<Letter> {
        let mut out = Vec::new();
        for &s in w {
            match s {
                Sym::C(c) => out.push(c),
                Sym::V(x) => out.extend_from_slice(&sigma[&x]),
            }
        }
        out
    }

    /// Completes σ across involution (deriving σ(X̄) = σ(X)‾ when only one of
    /// a pair is given) and rejects unknown variables.
    pub fn complete_sigma(&self, sigma: &Sigma) -> std::result::Result<Sigma, String> {
        let mut full: Sigma = BTreeMap::new();
        for (&x, w) in sigma {
            if !self.var_rho.contains_key(&x) {
                return Err(format!("sigma names a variable outside X (id {x})"));
            }
            full.insert(x, w.clone());
        }
        for &x in self.var_rho.keys() {
            if full.contains_key(&x) {
                continue;
            }
            match sigma.get(&self.vt.bar(x)) {
                Some(w) => {
                    full.insert(x, inv_word(&self.tab, w));
                }
                None => return Err(format!("sigma is missing variable {}", self.vt.name(x))),
            }
        }
        Ok(full)
    }

    /// Full solution check. α, when given, must assign every letter of B
    /// outside the fixed alphabet a word over the fixed alphabet respecting
    /// resources, constraints and involution. Returns the violated clause.
    pub fn check_solution(
        &self,
        pre: &PreparedInstance,
        sigma: &Sigma,
        alpha: Option<&Alpha>,
    ) -> std::result::Result<(), String> {
        let m = &pre.monoid;
        let sigma = self.complete_sigma(sigma)?;
        for (&x, w) in &sigma {
            let name = self.vt.name(x);
            let wb = &sigma[&self.vt.bar(x)];
            if !homogeneous_equal(&inv_word(&self.tab, w), wb, &self.tab, &self.theta) {
                return Err(format!("sigma not involution-compatible at {name}"));
            }
            let mut rho: ResSet = 0;
            for &c in w {
                if !self.b.contains(&c) || self.tab.is_marker(c) {
                    return Err(format!("sigma({name}) leaves the constant alphabet B"));
                }
                rho |= self.tab.rho(c);
            }
            if rho & !self.var_rho[&x] != 0 {
                return Err(format!("sigma({name}) violates the resource bound"));
            }
            if m.eval_els(w.iter().map(|&c| self.tab.mu(c))) != self.var_mu[&x] {
                return Err(format!("sigma({name}) violates the constraint image"));
            }
            if let Some(y) = self.theta.var_type(x) {
                let unit = y.letters();
                if w.len() % unit.len() != 0 {
                    return Err(format!("sigma({name}) is not a power of its type word"));
                }
                let mut pow = Vec::with_capacity(w.len());
                while pow.len() < w.len() {
                    pow.extend_from_slice(&unit);
                }
                if !homogeneous_equal(w, &pow, &self.tab, &self.theta) {
                    return Err(format!("sigma({name}) is not a power of its type word"));
                }
            }
        }
        let lhs = self.expand(&self.w, &sigma);
        let rhs = self.expand(&self.inv_syms(&self.w), &sigma);
        if !homogeneous_equal(&lhs, &rhs, &self.tab, &self.theta) {
            return Err("sigma does not equalize W and its involution".into());
        }
        if let Some(alpha) = alpha {
            for (&c, w) in &alpha.0 {
                if self.tab.in_a(c) {
                    if w != &vec![c] {
                        return Err(format!("alpha moves fixed letter {}", self.tab.name(c)));
                    }
                    continue;
                }
                let name = self.tab.name(c);
                if !self.b.contains(&c) {
                    return Err(format!("alpha names letter {name} outside B"));
                }
                let mut rho: ResSet = 0;
                for &a in w {
                    if !self.tab.in_a(a) || self.tab.is_marker(a) {
                        return Err(format!("alpha({name}) leaves the fixed alphabet"));
                    }
                    rho |= self.tab.rho(a);
                }
                if rho & !self.tab.rho(c) != 0 {
                    return Err(format!("alpha({name}) violates the resource bound"));
                }
                if m.eval_els(w.iter().map(|&a| self.tab.mu(a))) != self.tab.mu(c) {
                    return Err(format!("alpha({name}) violates the constraint image"));
                }
            }
            for &c in &self.b {
                if self.tab.in_a(c) {
                    continue;
                }
                let cb = self.tab.bar(c);
                let (wc, wcb) = match (alpha.0.get(&c), alpha.0.get(&cb)) {
                    (Some(wc), Some(wcb)) => (wc.clone(), wcb.clone()),
                    (Some(wc), None) => (wc.clone(), inv_word(&self.tab, wc)),
                    (None, Some(wcb)) => (inv_word(&self.tab, wcb), wcb.clone()),
                    (None, None) => {
                        return Err(format!(
                            "alpha is missing letter {}",
                            self.tab.name(c)
                        ))
                    }
                };
                if !homogeneous_equal(&inv_word(&self.tab, &wc), &wcb, &self.tab, &self.theta) {
                    return Err(format!(
                        "alpha not involution-compatible at {}",
                        self.tab.name(c)
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn solves(&self, pre: &PreparedInstance, sigma: &Sigma, alpha: Option<&Alpha>) -> bool {
        self.check_solution(pre, sigma, alpha).is_ok()
    }

    /// Σ |ασ(X)| over one representative per variable pair.
    pub fn solution_weight(&self, sigma: &Sigma, alpha: &Alpha) -> usize {
        self.var_rho
            .keys()
            .filter(|&&x| x <= self.vt.bar(x))
            .map(|x| sigma.get(x).map_or(0, |w| alpha.apply(w).len()))
            .sum()
    }

    pub fn state_solution_weight(&self, sigma: &Sigma, alpha: &Alpha) -> (usize, Weight5) {
        (self.solution_weight(sigma, alpha), self.weight())
    }

    /// Renames fresh letters and fresh variables into first-occurrence order
    /// (occurrences in W first, then the rest by old id, involution partners
    /// paired with the earlier occurrence leading). Nothing else changes, so
    /// two states get the same canonical form exactly when they differ by
    /// such a renaming. Also drops table entries no longer referenced.
    pub fn canonical(&self) -> EqState {
        self.canonical_with_map().0
    }

    /// As `canonical`, also returning the letter and variable rename maps
    /// (identity entries omitted) so transition labels can be transported.
    pub fn canonical_with_map(
        &self,
    ) -> (EqState, BTreeMap<Letter, Letter>, BTreeMap<Var, Var>) {
        let mut order: Vec<Letter> = Vec::new();
        let mut seen: BTreeSet<Letter> = BTreeSet::new();
        let note = |c: Letter, order: &mut Vec<Letter>, seen: &mut BTreeSet<Letter>| {
            if self.tab.is_fresh(c) && seen.insert(c) {
                seen.insert(self.tab.bar(c));
                order.push(c);
            }
        };
        for &s in &self.w {
            if let Sym::C(c) = s {
                note(c, &mut order, &mut seen);
            }
        }
        let mut rest: BTreeSet<Letter> = BTreeSet::new();
        for &c in &self.b {
            if self.tab.is_fresh(c) && !seen.contains(&c) {
                rest.insert(c.min(self.tab.bar(c)));
            }
        }
        for (x, y) in &self.theta.consts {
            for t in [x, y] {
                for c in t.letters() {
                    if self.tab.is_fresh(c) && !seen.contains(&c) {
                        rest.insert(c.min(self.tab.bar(c)));
                    }
                }
            }
        }
        for y in self.theta.vars.values() {
            for c in y.letters() {
                if self.tab.is_fresh(c) && !seen.contains(&c) {
                    rest.insert(c.min(self.tab.bar(c)));
                }
            }
        }
        order.extend(rest);

        let mut vorder: Vec<Var> = Vec::new();
        let mut vseen: BTreeSet<Var> = BTreeSet::new();
        for &s in &self.w {
            if let Sym::V(x) = s {
                if self.vt.is_fresh(x) && vseen.insert(x) {
                    vseen.insert(self.vt.bar(x));
                    vorder.push(x);
                }
            }
        }
        let mut vrest: BTreeSet<Var> = BTreeSet::new();
        for &x in self.var_rho.keys() {
            if self.vt.is_fresh(x) && !vseen.contains(&x) {
                vrest.insert(x.min(self.vt.bar(x)));
            }
        }
        vorder.extend(vrest);

        let mut tab = self.tab.clone_reserved_prefix();
        let mut lmap: BTreeMap<Letter, Letter> = BTreeMap::new();
        for &c in &order {
            let cb = self.tab.bar(c);
            let (n, nb) = tab
                .alloc_fresh_pair(self.tab.rho(c), self.tab.mu(c), self.tab.mu(cb), usize::MAX)
                .expect("unbudgeted rename");
            lmap.insert(c, n);
            lmap.insert(cb, nb);
        }
        let mut vt = self.vt.clone_originals();
        let mut vmap: BTreeMap<Var, Var> = BTreeMap::new();
        for &x in &vorder {
            let (n, nb) = vt.alloc_fresh_pair(usize::MAX).expect("unbudgeted rename");
            vmap.insert(x, n);
            vmap.insert(self.vt.bar(x), nb);
        }

        let ml = |c: Letter| lmap.get(&c).copied().unwrap_or(c);
        let mv = |x: Var| vmap.get(&x).copied().unwrap_or(x);
        let mt = |t: &TWord| match *t {
            TWord::One(a) => TWord::One(ml(a)),
            TWord::Two(a, b) => TWord::Two(ml(a), ml(b)),
        };
        let st = EqState {
            tab,
            vt,
            w: self
                .w
                .iter()
                .map(|&s| match s {
                    Sym::C(c) => Sym::C(ml(c)),
                    Sym::V(x) => Sym::V(mv(x)),
                })
                .collect(),
            b: self.b.iter().map(|&c| ml(c)).collect(),
            var_rho: self.var_rho.iter().map(|(&x, &r)| (mv(x), r)).collect(),
            var_mu: self.var_mu.iter().map(|(&x, &e)| (mv(x), e)).collect(),
            theta: TypeRelation {
                consts: self
                    .theta
                    .consts
                    .iter()
                    .map(|(x, y)| (mt(x), mt(y)))
                    .collect(),
                vars: self
                    .theta
                    .vars
                    .iter()
                    .map(|(&x, y)| (mv(x), mt(y)))
                    .collect(),
            },
        };
        (st, lmap, vmap)
    }

    /// Canonical textual form: the NFA state key and golden-test format.
    /// Stable under re-dump of a canonical state; letters outside the fixed
    /// alphabet carry their metadata since it varies per state.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "W: {}", self.word_name(&self.w));
        let bnames: Vec<&str> = self.b.iter().map(|&c| self.tab.name(c)).collect();
        let _ = writeln!(s, "B: {}", bnames.join(" "));
        for c in self.tab.a_count..self.tab.len() {
            let _ = writeln!(
                s,
                "L {} bar {} rho {} mu {}",
                self.tab.name(c),
                self.tab.name(self.tab.bar(c)),
                mask_str(self.tab.rho(c)),
                self.tab.mu(c)
            );
        }
        for (&x, &r) in &self.var_rho {
            let _ = writeln!(
                s,
                "V {} bar {} rho {} mu {}",
                self.vt.name(x),
                self.vt.name(self.vt.bar(x)),
                mask_str(r),
                self.var_mu[&x]
            );
        }
        let tname = |t: &TWord| match *t {
            TWord::One(a) => self.tab.name(a).to_string(),
            TWord::Two(a, b) => format!("{}{}", self.tab.name(a), self.tab.name(b)),
        };
        for (x, y) in &self.theta.consts {
            let _ = writeln!(s, "T {} -> {}", tname(x), tname(y));
        }
        for (&x, y) in &self.theta.vars {
            let _ = writeln!(s, "TV {} -> {}", self.vt.name(x), tname(y));
        }
        s
    }

    pub fn to_repr(&self) -> StateRepr {
        let mut fresh_letters = Vec::new();
        let mut c = self.tab.reserved;
        while c < self.tab.len() {
            fresh_letters.push((self.tab.rho(c), self.tab.mu(c), self.tab.mu(c + 1)));
            c += 2;
        }
        let dist_mu = (self.tab.a_count..self.tab.reserved)
            .map(|c| self.tab.mu(c))
            .collect();
        StateRepr {
            w: self.w.clone(),
            b: self.b.iter().copied().collect(),
            dist_mu,
            fresh_letters,
            fresh_var_pairs: ((self.vt.len() - self.vt.x0_count) / 2) as usize,
            vars: self
                .var_rho
                .iter()
                .map(|(&x, &r)| (x, r, self.var_mu[&x]))
                .collect(),
            theta_consts: self
                .theta
                .consts
                .iter()
                .map(|(x, y)| (*x, *y))
                .collect(),
            theta_vars: self.theta.vars.iter().map(|(&x, y)| (x, *y)).collect(),
        }
    }

    pub fn from_repr(pre: &PreparedInstance, r: &StateRepr) -> Result<EqState> {
        let mut tab = pre.tab.clone_reserved_prefix();
        for (i, &mu) in r.dist_mu.iter().enumerate() {
            tab.set_mu(tab.a_count + i as u32, mu);
        }
        for &(rho, mu, mu_bar) in &r.fresh_letters {
            tab.alloc_fresh_pair(rho, mu, mu_bar, usize::MAX)?;
        }
        let mut vt = pre.vars.clone_originals();
        for _ in 0..r.fresh_var_pairs {
            vt.alloc_fresh_pair(usize::MAX)?;
        }
        let mut st = EqState {
            tab,
            vt,
            w: r.w.clone(),
            b: r.b.iter().copied().collect(),
            var_rho: r.vars.iter().map(|&(x, rho, _)| (x, rho)).collect(),
            var_mu: r.vars.iter().map(|&(x, _, mu)| (x, mu)).collect(),
            theta: TypeRelation::default(),
        };
        for &(x, y) in &r.theta_consts {
            st.theta.consts.insert(x, y);
        }
        for &(x, y) in &r.theta_vars {
            st.theta.vars.insert(x, y);
        }
        if st.w.iter().any(|&s| match s {
            Sym::C(c) => c >= st.tab.len(),
            Sym::V(x) => x >= st.vt.len(),
        }) {
            return Err(SolveError::instance("state repr references unknown symbols"));
        }
        Ok(st)
    }
}

/// Flat serializable image of a state, used by NFA export and round-trip
/// tests. Fresh letters are stored pairwise as (rho, mu, mu-of-partner) from
/// the first fresh id upward; distinguished letters store their constraint
/// image since the final transition rewrites it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateRepr {
    pub w: Vec<Sym>,
    pub b: Vec<Letter>,
    pub dist_mu: Vec<El>,
    pub fresh_letters: Vec<(ResSet, El, El)>,
    pub fresh_var_pairs: usize,
    pub vars: Vec<(Var, ResSet, El)>,
    pub theta_consts: Vec<(TWord, TWord)>,
    pub theta_vars: Vec<(Var, TWord)>,
}

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::alphabet::{inv_word, El, Letter, ResSet, Sym, Var, MARKER};
use crate::error::{Result, SolveError};
use crate::instance::PreparedInstance;
use crate::state::{EqState, Sigma};
use crate::theta::TWord;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TKind {
    Substitution,
    Compression,
    FinalCompression,
}

/// Finitely supported endomorphism of the constant alphabet; letters outside
/// the map are fixed. Labels point backwards: they send the target state's
/// letters to words over the source state's letters.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endo(pub BTreeMap<Letter, Vec<Letter>>);

impl Endo {
    pub fn identity() -> Endo {
        Endo(BTreeMap::new())
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().all(|(&c, w)| w.as_slice() == [c])
    }

    pub fn apply(&self, w: &[Letter]) -> Vec<Letter> {
        let mut out = Vec::with_capacity(w.len());
        for &c in w {
            match self.0.get(&c) {
                Some(img) => out.extend_from_slice(img),
                None => out.push(c),
            }
        }
        out
    }

    pub fn apply_syms(&self, w: &[Sym]) -> Vec<Sym> {
        let mut out = Vec::with_capacity(w.len());
        for &s in w {
            match s {
                Sym::C(c) => match self.0.get(&c) {
                    Some(img) => out.extend(img.iter().map(|&a| Sym::C(a))),
                    None => out.push(s),
                },
                Sym::V(_) => out.push(s),
            }
        }
        out
    }

    pub fn norm(&self) -> usize {
        self.0.values().map(|w| w.len()).sum()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Label {
    pub kind: TKind,
    pub endo: Endo,
    /// Substitution images for the affected variables; identity elsewhere.
    pub tau: BTreeMap<Var, Vec<Sym>>,
}

impl Label {
    pub fn substitution(tau: BTreeMap<Var, Vec<Sym>>) -> Label {
        Label {
            kind: TKind::Substitution,
            endo: Endo::identity(),
            tau,
        }
    }

    pub fn compression(endo: Endo) -> Label {
        Label {
            kind: TKind::Compression,
            endo,
            tau: BTreeMap::new(),
        }
    }

    /// Rewrites the label into the coordinates produced by canonicalizing the
    /// target state. Endomorphism images and tau keys live in the source
    /// state's coordinates, which the caller keeps canonical already.
    pub fn transported(
        &self,
        lmap: &BTreeMap<Letter, Letter>,
        vmap: &BTreeMap<Var, Var>,
    ) -> Label {
        let ml = |c: Letter| lmap.get(&c).copied().unwrap_or(c);
        let mv = |x: Var| vmap.get(&x).copied().unwrap_or(x);
        Label {
            kind: self.kind,
            endo: Endo(self.endo.0.iter().map(|(&c, w)| (ml(c), w.clone())).collect()),
            tau: self
                .tau
                .iter()
                .map(|(&x, w)| {
                    let img = w
                        .iter()
                        .map(|&s| match s {
                            Sym::C(c) => Sym::C(ml(c)),
                            Sym::V(y) => Sym::V(mv(y)),
                        })
                        .collect();
                    (x, img)
                })
                .collect(),
        }
    }
}

/// Composition h1 ∘ ... ∘ ht of the endomorphisms along a path, restricted
/// to the union of their supports.
pub fn compose_labels<'a>(labels: impl IntoIterator<Item = &'a Label>) -> Endo {
    let labels: Vec<&Label> = labels.into_iter().collect();
    let support: BTreeSet<Letter> = labels
        .iter()
        .flat_map(|l| l.endo.0.keys().copied())
        .collect();
    let mut out = BTreeMap::new();
    for &c in &support {
        let mut w = vec![c];
        for l in labels.iter().rev() {
            w = l.endo.apply(&w);
        }
        out.insert(c, w);
    }
    Endo(out)
}

pub fn apply_to_distinguished(endo: &Endo, cs: &[Letter]) -> Vec<Vec<Letter>> {
    cs.iter().map(|&c| endo.apply(&[c])).collect()
}

/// Recovers a solution of the source state from one of the target state:
/// through a substitution σ(X) = σ'(τ(X)), through a compression
/// σ(X) = h(σ'(X)).
pub fn pull_back_sigma(v: &EqState, label: &Label, sigma2: &Sigma) -> Sigma {
    let mut out = Sigma::new();
    for &x in v.var_rho.keys() {
        let img = match label.kind {
            TKind::Substitution => {
                let tau_x = label
                    .tau
                    .get(&x)
                    .cloned()
                    .unwrap_or_else(|| vec![Sym::V(x)]);
                let mut w = Vec::new();
                for s in tau_x {
                    match s {
                        Sym::C(c) => w.push(c),
                        Sym::V(y) => w.extend_from_slice(&sigma2[&y]),
                    }
                }
                w
            }
            _ => label.endo.apply(&sigma2[&x]),
        };
        out.insert(x, img);
    }
    out
}

fn sub_err(clause: &'static str, witness: String) -> SolveError {
    SolveError::bad_transition("substitution", clause, Some(witness))
}

fn comp_err(clause: &'static str, witness: String) -> SolveError {
    SolveError::bad_transition("compression", clause, Some(witness))
}

/// Image shape for substituted variables: empty, or variables around one
/// nonempty constant block (markers excluded).
fn tau_shape_ok(v2: &EqState, w: &[Sym]) -> bool {
    if w.is_empty() {
        return true;
    }
    let mut i = 0;
    while i < w.len() && w[i].is_var() {
        i += 1;
    }
    let mut j = w.len();
    while j > i && w[j - 1].is_var() {
        j -= 1;
    }
    j > i
        && w[i..j].iter().all(|&s| match s {
            Sym::C(c) => !v2.tab.is_marker(c),
            Sym::V(_) => false,
        })
}

/// Checks the defining conditions of a substitution transition. With
/// `initial` the resource equality is relaxed to inclusion: only outgoing
/// transitions of the initial state may trim variable resources.
pub fn validate_substitution(
    pre: &PreparedInstance,
    v: &EqState,
    v2: &EqState,
    tau: &BTreeMap<Var, Vec<Sym>>,
    initial: bool,
) -> Result<()> {
    let m = &pre.monoid;
    for (&x, img) in tau {
        if !v.var_rho.contains_key(&x) {
            return Err(sub_err("domain", format!("variable id {x} outside X")));
        }
        let xb = v.vt.bar(x);
        let mirrored = v2.inv_syms(img);
        if tau.get(&xb) != Some(&mirrored) {
            return Err(sub_err("involution", v.vt.name(x).to_string()));
        }
        if img.as_slice() != [Sym::V(x)] && !tau_shape_ok(v2, img) {
            return Err(sub_err(
                "image-shape",
                format!("tau({}) = {}", v.vt.name(x), v2.word_name(img)),
            ));
        }
        for &s in img {
            match s {
                Sym::C(c) => {
                    if !v2.b.contains(&c) {
                        return Err(sub_err("image-alphabet", v2.tab.name(c).to_string()));
                    }
                }
                Sym::V(y) => {
                    if !v2.var_rho.contains_key(&y) {
                        return Err(sub_err("image-alphabet", format!("variable id {y}")));
                    }
                }
            }
        }
    }
    let norm: usize = tau.values().map(|w| w.len()).sum();
    if norm > pre.budgets.endo_norm {
        return Err(SolveError::budget("substitution norm", norm, pre.budgets.endo_norm));
    }
    // the constant alphabet is untouched
    if v.b != v2.b {
        return Err(sub_err("alphabet-preserved", "B changed".into()));
    }
    for &c in &v.b {
        if v.tab.rho(c) != v2.tab.rho(c)
            || v.tab.mu(c) != v2.tab.mu(c)
            || v.tab.bar(c) != v2.tab.bar(c)
        {
            return Err(sub_err("alphabet-preserved", v.tab.name(c).to_string()));
        }
    }
    if v.theta.consts != v2.theta.consts {
        return Err(sub_err("types-preserved", "letter types changed".into()));
    }
    // W' = tau(W) != W
    let image: Vec<Sym> = v
        .w
        .iter()
        .flat_map(|&s| match s {
            Sym::V(x) => tau.get(&x).cloned().unwrap_or_else(|| vec![s]),
            Sym::C(_) => vec![s],
        })
        .collect();
    if image == v.w && v.var_rho == v2.var_rho && v.var_mu == v2.var_mu {
        return Err(sub_err("nontrivial", "tau fixes the equation".into()));
    }
    if !v2.trace_eq(&image, &v2.w) {
        return Err(sub_err(
            "equation-image",
            format!("expected {}", v2.word_name(&image)),
        ));
    }
    // resources and constraints factor through tau
    for (&x, &rho) in &v.var_rho {
        let img = tau.get(&x).cloned().unwrap_or_else(|| vec![Sym::V(x)]);
        for &s in &img {
            if let Sym::V(y) = s {
                if !v2.var_rho.contains_key(&y) {
                    return Err(sub_err("domain", format!("image variable id {y}")));
                }
            }
        }
        let img_rho = img.iter().fold(0 as ResSet, |r, &s| r | v2.sym_rho(s));
        let ok = if initial { img_rho & !rho == 0 } else { img_rho == rho };
        if !ok {
            return Err(sub_err("resource-image", v.vt.name(x).to_string()));
        }
        if v2.mu_of(&img, m) != v.var_mu[&x] {
            return Err(sub_err("constraint-image", v.vt.name(x).to_string()));
        }
    }
    Ok(())
}

/// Checks the defining conditions of a compression transition. The morphism
/// maps the target's letters to words over the source's letters; final
/// transitions may erase distinguished letters and are exempt from the
/// weight decrease.
pub fn validate_compression(
    pre: &PreparedInstance,
    v: &EqState,
    v2: &EqState,
    endo: &Endo,
    kind: TKind,
) -> Result<()> {
    let m = &pre.monoid;
    let is_final = kind == TKind::FinalCompression;
    if kind == TKind::Substitution {
        return Err(comp_err("kind", "substitution label checked as compression".into()));
    }
    if endo.norm() > pre.budgets.endo_norm {
        return Err(SolveError::budget("compression norm", endo.norm(), pre.budgets.endo_norm));
    }
    for (&c, img) in &endo.0 {
        if v2.tab.in_a(c) {
            return Err(comp_err("fixes-fixed-alphabet", v2.tab.name(c).to_string()));
        }
        if c >= v2.tab.len() {
            return Err(comp_err("domain", format!("unallocated letter id {c}")));
        }
        if img.is_empty() && !is_final {
            return Err(comp_err("image-nonempty", v2.tab.name(c).to_string()));
        }
        for &a in img {
            if a >= v.tab.len() || !v.b.contains(&a) || v.tab.is_marker(a) {
                return Err(comp_err("image-alphabet", format!("letter id {a}")));
            }
        }
        let cb = v2.tab.bar(c);
        if endo.0.get(&cb) != Some(&inv_word(&v.tab, img)) {
            return Err(comp_err("involution", v2.tab.name(c).to_string()));
        }
        // only letters created by this transition are barred from
        // self-involuting images; halving an existing letter into c·c̄ is fine
        if !is_final && img.len() > 1 && !v.b.contains(&c) {
            let inv = inv_word(&v.tab, img);
            let syms: Vec<Sym> = img.iter().map(|&a| Sym::C(a)).collect();
            let inv_syms: Vec<Sym> = inv.iter().map(|&a| Sym::C(a)).collect();
            if v.trace_eq(&syms, &inv_syms) {
                return Err(comp_err(
                    "involution-fixed-image",
                    format!("h({}) = {}", v2.tab.name(c), v.tab.word_name(img)),
                ));
            }
        }
    }
    for &c in &v2.b {
        if c != MARKER && v2.tab.bar(c) == c {
            return Err(comp_err("self-involuting-letter", v2.tab.name(c).to_string()));
        }
    }
    if !v.b.is_subset(&v2.b) && !v2.b.is_subset(&v.b) {
        return Err(comp_err("alphabet-monotone", "B and B' incomparable".into()));
    }
    // shared letters keep their resources; their constraint value is free to
    // be re-declared because the morphism law below pins it to mu(h(c))
    let shared_meta_ok = v
        .b
        .intersection(&v2.b)
        .all(|&c| v.tab.rho(c) == v2.tab.rho(c));
    if !shared_meta_ok {
        return Err(comp_err("alphabet-metadata", "shared letter changed".into()));
    }
    let nontrivial = v.b != v2.b
        || endo
            .0
            .iter()
            .any(|(&c, w)| v2.b.contains(&c) && w.as_slice() != [c]);
    if !nontrivial {
        return Err(comp_err("nontrivial", "morphism fixes the alphabet".into()));
    }
    // variables untouched
    if v.var_rho != v2.var_rho || v.var_mu != v2.var_mu || v.theta.vars != v2.theta.vars {
        return Err(comp_err("variables-fixed", "variable data changed".into()));
    }
    // W = h(W')
    let image = endo.apply_syms(&v2.w);
    if !v.trace_eq(&image, &v.w) {
        return Err(comp_err(
            "equation-image",
            format!("h(W') = {}", v.word_name(&image)),
        ));
    }
    // morphism laws on the target alphabet
    for &c in &v2.b {
        let img = match endo.0.get(&c) {
            Some(img) => img.clone(),
            None => vec![c],
        };
        let img_rho = img.iter().fold(0 as ResSet, |r, &a| r | v.tab.rho(a));
        if img_rho & !v2.tab.rho(c) != 0 {
            return Err(comp_err("resource-morphism", v2.tab.name(c).to_string()));
        }
        if m.eval_els(img.iter().map(|&a| v.tab.mu(a))) != v2.tab.mu(c) {
            return Err(comp_err("constraint-morphism", v2.tab.name(c).to_string()));
        }
    }
    // typed variables force h(y) to stay a power of y
    for y in v2.theta.vars.values() {
        let yw = y.letters();
        let img = endo.apply(&yw);
        if img.len() % yw.len() != 0 || !img.chunks(yw.len()).all(|ch| ch == yw) {
            return Err(comp_err("type-power", format!("h on {:?}", y)));
        }
    }
    if !is_final && v2.weight() >= v.weight() {
        return Err(comp_err(
            "weight-decrease",
            format!("{} -> {}", v.weight(), v2.weight()),
        ));
    }
    Ok(())
}

/// One validated step: the label and the raw target (same id space as the
/// source). Callers canonicalize the target and transport the label.
#[derive(Clone, Debug)]
pub struct Step {
    pub label: Label,
    pub target: EqState,
}

fn mirror_tau(v: &EqState, x: Var, img: Vec<Sym>) -> BTreeMap<Var, Vec<Sym>> {
    let mut tau = BTreeMap::new();
    let mirrored = v.inv_syms(&img);
    tau.insert(x, img);
    tau.insert(v.vt.bar(x), mirrored);
    tau
}

fn substitute_w(w: &[Sym], tau: &BTreeMap<Var, Vec<Sym>>) -> Vec<Sym> {
    w.iter()
        .flat_map(|&s| match s {
            Sym::V(x) => tau.get(&x).cloned().unwrap_or_else(|| vec![s]),
            Sym::C(_) => vec![s],
        })
        .collect()
}

/// Basic operation 1: prepend a short word to a variable (and mirrored, to
/// its partner), adjusting its resources and constraint so both factor
/// through the substitution. A typed variable may only pop a power of its
/// type word.
pub fn pop_variable(
    pre: &PreparedInstance,
    v: &EqState,
    x: Var,
    prefix: &[Sym],
    new_rho: ResSet,
    new_mu: El,
) -> Result<Step> {
    if !v.var_rho.contains_key(&x) {
        return Err(sub_err("domain", format!("variable id {x} outside X")));
    }
    if prefix.is_empty() {
        return Err(sub_err("image-shape", "empty pop".into()));
    }
    if let Some(y) = v.theta.var_type(x) {
        let unit: Vec<Sym> = y.letters().into_iter().map(Sym::C).collect();
        let whole = prefix.len() % unit.len() == 0
            && prefix.chunks(unit.len()).all(|ch| ch == unit);
        if !whole {
            return Err(sub_err(
                "typed-pop",
                format!("{} must pop a power of its type word", v.vt.name(x)),
            ));
        }
    }
    let mut img = prefix.to_vec();
    img.push(Sym::V(x));
    let tau = mirror_tau(v, x, img);
    let mut v2 = v.clone();
    v2.w = substitute_w(&v.w, &tau);
    let xb = v.vt.bar(x);
    v2.var_rho.insert(x, new_rho);
    v2.var_rho.insert(xb, new_rho);
    v2.var_mu.insert(x, new_mu);
    v2.var_mu.insert(xb, pre.monoid.inv(new_mu));
    validate_substitution(pre, v, &v2, &tau, false)?;
    v2.well_formed(pre)?;
    Ok(Step {
        label: Label::substitution(tau),
        target: v2,
    })
}

/// Basic operation 2: split a variable around one constant, X becoming
/// X'bX (and mirrored, its partner becoming X̄b̄X̄'). The caller supplies the
/// resources and constraints of both halves; the fresh pair takes the head.
pub fn split_variable(
    pre: &PreparedInstance,
    v: &EqState,
    x: Var,
    b: Letter,
    head_rho: ResSet,
    head_mu: El,
    rest_rho: ResSet,
    rest_mu: El,
) -> Result<(Step, Var)> {
    if !v.var_rho.contains_key(&x) {
        return Err(sub_err("domain", format!("variable id {x} outside X")));
    }
    if v.theta.var_type(x).is_some() {
        return Err(sub_err("typed-pop", format!("{} is typed and cannot split", v.vt.name(x))));
    }
    if !v.b.contains(&b) || v.tab.is_marker(b) {
        return Err(sub_err("image-alphabet", v.tab.name(b).to_string()));
    }
    let mut v2 = v.clone();
    let (xp, xpb) = v2.vt.alloc_fresh_pair(pre.budgets.fresh_vars)?;
    let xb = v.vt.bar(x);
    v2.var_rho.insert(xp, head_rho);
    v2.var_rho.insert(xpb, head_rho);
    v2.var_mu.insert(xp, head_mu);
    v2.var_mu.insert(xpb, pre.monoid.inv(head_mu));
    v2.var_rho.insert(x, rest_rho);
    v2.var_rho.insert(xb, rest_rho);
    v2.var_mu.insert(x, rest_mu);
    v2.var_mu.insert(xb, pre.monoid.inv(rest_mu));
    let img = vec![Sym::V(xp), Sym::C(b), Sym::V(x)];
    let mirrored = v2.inv_syms(&img);
    let mut tau = BTreeMap::new();
    tau.insert(x, img);
    tau.insert(xb, mirrored);
    v2.w = substitute_w(&v.w, &tau);
    validate_substitution(pre, v, &v2, &tau, false)?;
    v2.well_formed(pre)?;
    Ok((
        Step {
            label: Label::substitution(tau),
            target: v2,
        },
        xp,
    ))
}

/// Deletes a variable pair (legal once its resources and constraint are
/// trivial, i.e. after it has been popped empty).
pub fn delete_variable(pre: &PreparedInstance, v: &EqState, x: Var) -> Result<Step> {
    if !v.var_rho.contains_key(&x) {
        return Err(sub_err("domain", format!("variable id {x} outside X")));
    }
    let xb = v.vt.bar(x);
    let mut tau = BTreeMap::new();
    tau.insert(x, Vec::new());
    tau.insert(xb, Vec::new());
    let mut v2 = v.clone();
    v2.w = substitute_w(&v.w, &tau);
    for k in [x, xb] {
        v2.var_rho.remove(&k);
        v2.var_mu.remove(&k);
    }
    let vt = v2.vt.clone();
    v2.theta.remove_var(x, &vt);
    validate_substitution(pre, v, &v2, &tau, false)?;
    v2.well_formed(pre)?;
    Ok(Step {
        label: Label::substitution(tau),
        target: v2,
    })
}

/// Basic operation 2: shrink B to the letters actually used. `used` is the
/// set of letters appearing in the images of the solution being followed;
/// the blind caller passes the letters of W. Letters of the fixed alphabet
/// and letters referenced by the type relation always stay.
pub fn remove_useless(pre: &PreparedInstance, v: &EqState, used: &BTreeSet<Letter>) -> Result<Step> {
    let mut keep: BTreeSet<Letter> = (0..v.tab.a_count).collect();
    for &c in used {
        keep.insert(c);
        keep.insert(v.tab.bar(c));
    }
    for &s in &v.w {
        if let Sym::C(c) = s {
            keep.insert(c);
            keep.insert(v.tab.bar(c));
        }
    }
    for (p, q) in &v.theta.consts {
        for t in [p, q] {
            keep.extend(t.letters());
        }
    }
    for y in v.theta.vars.values() {
        keep.extend(y.letters());
    }
    let new_b: BTreeSet<Letter> = v.b.intersection(&keep).copied().collect();
    if new_b == v.b {
        return Err(comp_err("nontrivial", "no useless letters".into()));
    }
    let mut v2 = v.clone();
    v2.b = new_b;
    let endo = Endo::identity();
    validate_compression(pre, v, &v2, &endo, TKind::Compression)?;
    v2.well_formed(pre)?;
    Ok(Step {
        label: Label::compression(endo),
        target: v2,
    })
}

/// Basic operation 3: drop a letter pair that is used by the solution but
/// not visible in W. `alpha_c` is the fixed-alphabet word the letter stands
/// for; occurrences inside solution images are rewritten to the copies of
/// those letters lifted to the dropped letter's resource set. Returns the
/// rewritten solution next to the step.
pub fn remove_invisible(
    pre: &PreparedInstance,
    v: &EqState,
    sigma: &Sigma,
    c: Letter,
    alpha_c: &[Letter],
) -> Result<(Step, Sigma)> {
    if !v.theta.is_empty() {
        return Err(comp_err("untyped-only", "type relation nonempty".into()));
    }
    if v.tab.in_a(c) || !v.b.contains(&c) {
        return Err(comp_err("domain", v.tab.name(c).to_string()));
    }
    let cb = v.tab.bar(c);
    if v.w.iter().any(|&s| s == Sym::C(c) || s == Sym::C(cb)) {
        return Err(comp_err("invisible-only", v.tab.name(c).to_string()));
    }
    let s = v.tab.rho(c);
    let mut beta_c = Vec::with_capacity(alpha_c.len());
    for &a in alpha_c {
        if !v.tab.in_a(a) || v.tab.is_marker(a) || v.tab.rho(a) & !s != 0 {
            return Err(comp_err("replacement-alphabet", v.tab.name(a).to_string()));
        }
        let lifted = v
            .tab
            .lift(v.tab.base(a), s)
            .ok_or_else(|| comp_err("replacement-alphabet", format!("no copy of {} at {}", v.tab.name(a), s)))?;
        beta_c.push(lifted);
    }
    if pre.monoid.eval_els(beta_c.iter().map(|&a| v.tab.mu(a))) != v.tab.mu(c) {
        return Err(comp_err("constraint-morphism", v.tab.name(c).to_string()));
    }
    let beta_cb = inv_word(&v.tab, &beta_c);
    let rewrite = |w: &[Letter]| -> Vec<Letter> {
        let mut out = Vec::with_capacity(w.len());
        for &a in w {
            if a == c {
                out.extend_from_slice(&beta_c);
            } else if a == cb {
                out.extend_from_slice(&beta_cb);
            } else {
                out.push(a);
            }
        }
        out
    };
    let sigma2: Sigma = sigma.iter().map(|(&x, w)| (x, rewrite(w))).collect();
    let mut v2 = v.clone();
    v2.b.remove(&c);
    v2.b.remove(&cb);
    let endo = Endo::identity();
    validate_compression(pre, v, &v2, &endo, TKind::Compression)?;
    v2.well_formed(pre)?;
    Ok((
        Step {
            label: Label::compression(endo),
            target: v2,
        },
        sigma2,
    ))
}

/// Basic operation 4: replace every visible occurrence of a letter pair by a
/// fresh pair. The rename must pay for itself: either the fresh letter's
/// resource set strictly grows, or it is introduced typed by the old letter.
pub fn rename_letter(
    pre: &PreparedInstance,
    v: &EqState,
    a: Letter,
    new_rho: ResSet,
    typed: bool,
) -> Result<Step> {
    if v.tab.is_marker(a) || !v.b.contains(&a) {
        return Err(comp_err("domain", v.tab.name(a).to_string()));
    }
    if !v.w.contains(&Sym::C(a)) && !v.w.contains(&Sym::C(v.tab.bar(a))) {
        return Err(comp_err("visible-only", v.tab.name(a).to_string()));
    }
    if typed && v.tab.in_a(a) {
        return Err(comp_err("type-target", "fixed letters cannot be typed".into()));
    }
    let ab = v.tab.bar(a);
    let mut v2 = v.clone();
    let (c, cb) = v2.tab.alloc_fresh_pair(
        new_rho,
        v.tab.mu(a),
        v.tab.mu(ab),
        pre.budgets.fresh_letters,
    )?;
    v2.b.insert(c);
    v2.b.insert(cb);
    for s in v2.w.iter_mut() {
        if *s == Sym::C(a) {
            *s = Sym::C(c);
        } else if *s == Sym::C(ab) {
            *s = Sym::C(cb);
        }
    }
    if typed {
        let tab = v2.tab.clone();
        v2.theta.insert_const(TWord::One(c), TWord::One(a), &tab);
    }
    let mut endo = Endo::identity();
    endo.0.insert(c, vec![a]);
    endo.0.insert(cb, vec![ab]);
    validate_compression(pre, v, &v2, &endo, TKind::Compression)?;
    v2.well_formed(pre)?;
    Ok(Step {
        label: Label::compression(endo),
        target: v2,
    })
}

/// Index poset of a word: position j covers i when their symbols share a
/// resource and nothing in between connects them.
struct WordOrder {
    reach: Vec<Vec<bool>>,
}

impl WordOrder {
    fn new(v: &EqState, w: &[Sym]) -> WordOrder {
        let n = w.len();
        let rho: Vec<ResSet> = w.iter().map(|&s| v.sym_rho(s)).collect();
        let mut reach = vec![vec![false; n]; n];
        for i in (0..n).rev() {
            for j in i + 1..n {
                if rho[i] & rho[j] != 0 {
                    reach[i][j] = true;
                } else {
                    // i reaches j through any dependent successor
                    for k in i + 1..j {
                        if rho[i] & rho[k] != 0 && reach[k][j] {
                            reach[i][j] = true;
                            break;
                        }
                    }
                }
            }
        }
        WordOrder { reach }
    }

    fn less(&self, i: usize, j: usize) -> bool {
        i < j && self.reach[i][j]
    }

    /// Positions i < j can appear adjacently in some reordering.
    fn adjacent_ok(&self, i: usize, j: usize) -> bool {
        (i + 1..j).all(|k| !(self.less(i, k) && self.less(k, j)))
    }
}

/// Basic operation 5: compress a two-letter factor ab (with b different from
/// both a and the involution of a) into a fresh letter, everywhere the trace
/// admits the factor, together with the mirrored occurrences.
pub fn compress_pair(pre: &PreparedInstance, v: &EqState, a: Letter, b: Letter) -> Result<Step> {
    if v.tab.is_marker(a) || v.tab.is_marker(b) || !v.b.contains(&a) || !v.b.contains(&b) {
        return Err(comp_err("domain", "pair letters outside B".into()));
    }
    if a == b || b == v.tab.bar(a) {
        return Err(comp_err(
            "pair-shape",
            format!("{}{}", v.tab.name(a), v.tab.name(b)),
        ));
    }
    let (ab, bb) = (v.tab.bar(a), v.tab.bar(b));
    let order = WordOrder::new(v, &v.w);
    let n = v.w.len();
    let mut used = vec![false; n];
    // fused[i] = Some((j, barred)): positions i < j merge into one occurrence
    let mut fused: Vec<Option<(usize, bool)>> = vec![None; n];
    let mut count = 0usize;
    // plain occurrences: first element left to right, nearest second
    for i in 0..n {
        if v.w[i] != Sym::C(a) {
            continue;
        }
        for j in i + 1..n {
            if !used[j] && v.w[j] == Sym::C(b) && order.adjacent_ok(i, j) {
                used[i] = true;
                used[j] = true;
                fused[i] = Some((j, false));
                count += 1;
                break;
            }
        }
    }
    // involuted occurrences, scanned mirror-wise so a block and its mirror
    // image pick mirror-image matchings
    for q in (0..n).rev() {
        if v.w[q] != Sym::C(ab) {
            continue;
        }
        for p in (0..q).rev() {
            if !used[p] && v.w[p] == Sym::C(bb) && order.adjacent_ok(p, q) {
                used[p] = true;
                used[q] = true;
                fused[p] = Some((q, true));
                count += 1;
                break;
            }
        }
    }
    if count == 0 {
        return Err(comp_err("pair-visible", "factor not present".into()));
    }
    let mut v2 = v.clone();
    let mu = pre.monoid.mul(v.tab.mu(a), v.tab.mu(b));
    let mu_bar = pre.monoid.mul(v.tab.mu(bb), v.tab.mu(ab));
    let (c, cb) = v2.tab.alloc_fresh_pair(
        v.tab.rho(a) | v.tab.rho(b),
        mu,
        mu_bar,
        pre.budgets.fresh_letters,
    )?;
    v2.b.insert(c);
    v2.b.insert(cb);
    // rebuild: contract fused pairs into their first position, then emit a
    // topological order of the dependence graph (least position first, so
    // the result is deterministic)
    let mut rep: Vec<usize> = (0..n).collect();
    for i in 0..n {
        if let Some((j, _)) = fused[i] {
            rep[j] = i;
        }
    }
    let mut indeg = vec![0usize; n];
    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            let (ri, rj) = (rep[i], rep[j]);
            if ri != rj && v.sym_rho(v.w[i]) & v.sym_rho(v.w[j]) != 0 {
                succs[ri].push(rj);
                indeg[rj] += 1;
            }
        }
    }
    let mut ready: BTreeSet<usize> = (0..n)
        .filter(|&k| rep[k] == k && indeg[k] == 0)
        .collect();
    let mut out: Vec<Sym> = Vec::with_capacity(n - count);
    while let Some(&k) = ready.iter().next() {
        ready.remove(&k);
        match fused[k] {
            Some((_, false)) => out.push(Sym::C(c)),
            Some((_, true)) => out.push(Sym::C(cb)),
            None => out.push(v.w[k]),
        }
        for &s in &succs[k] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.insert(s);
            }
        }
    }
    if out.len() != n - count {
        // the chosen simultaneous matching admits no common linearization
        return Err(comp_err("pair-order", "matched occurrences form a cycle".into()));
    }
    v2.w = out;
    let mut endo = Endo::identity();
    endo.0.insert(c, vec![a, b]);
    endo.0.insert(cb, vec![bb, ab]);
    validate_compression(pre, v, &v2, &endo, TKind::Compression)?;
    v2.well_formed(pre)?;
    Ok(Step {
        label: Label::compression(endo),
        target: v2,
    })
}

/// Per-variable action of an initial transition.
#[derive(Clone, Debug)]
pub enum InitChoice {
    Drop,
    /// The variable becomes exactly this word and leaves the equation.
    Pop(Vec<Letter>),
    Keep {
        prefix: Vec<Letter>,
        rho: ResSet,
        mu: El,
    },
}

/// The only transitions out of the initial state: every variable either
/// disappears or pops a prefix of length at most |R|, and variable resources
/// may shrink to match the followed solution.
pub fn initial_transition(
    pre: &PreparedInstance,
    v: &EqState,
    choices: &BTreeMap<Var, InitChoice>,
) -> Result<Step> {
    let max_len = v.tab.full.count_ones() as usize;
    let mut tau: BTreeMap<Var, Vec<Sym>> = BTreeMap::new();
    let mut v2 = v.clone();
    for (&x, choice) in choices {
        let xb = v.vt.bar(x);
        if x > xb {
            return Err(sub_err("domain", "choices must name pair representatives".into()));
        }
        match choice {
            InitChoice::Drop => {
                tau.insert(x, Vec::new());
                tau.insert(xb, Vec::new());
                for k in [x, xb] {
                    v2.var_rho.remove(&k);
                    v2.var_mu.remove(&k);
                }
            }
            InitChoice::Pop(word) => {
                if word.is_empty() || word.len() > max_len {
                    return Err(sub_err(
                        "short-prefix",
                        format!("{} letters, between 1 and {max_len}", word.len()),
                    ));
                }
                let img: Vec<Sym> = word.iter().map(|&c| Sym::C(c)).collect();
                tau.insert(x, img.clone());
                tau.insert(xb, v.inv_syms(&img));
                for k in [x, xb] {
                    v2.var_rho.remove(&k);
                    v2.var_mu.remove(&k);
                }
            }
            InitChoice::Keep { prefix, rho, mu } => {
                if prefix.len() > max_len {
                    return Err(sub_err(
                        "short-prefix",
                        format!("{} letters, at most {max_len}", prefix.len()),
                    ));
                }
                if prefix.is_empty() && (*rho, *mu) == (v.var_rho[&x], v.var_mu[&x]) {
                    continue; // identity on this pair
                }
                let mut img: Vec<Sym> = prefix.iter().map(|&c| Sym::C(c)).collect();
                img.push(Sym::V(x));
                tau.insert(x, img.clone());
                tau.insert(xb, v.inv_syms(&img));
                v2.var_rho.insert(x, *rho);
                v2.var_rho.insert(xb, *rho);
                v2.var_mu.insert(x, *mu);
                v2.var_mu.insert(xb, pre.monoid.inv(*mu));
            }
        }
    }
    v2.w = substitute_w(&v.w, &tau);
    validate_substitution(pre, v, &v2, &tau, true)?;
    v2.well_formed(pre)?;
    Ok(Step {
        label: Label::substitution(tau),
        target: v2,
    })
}

/// Builds the accepting transition: in a variable-free, untyped,
/// involution-fixed equation the first k blocks and their mirrors are
/// renamed to the distinguished letters, whose images record those blocks.
pub fn final_transition(pre: &PreparedInstance, v: &EqState) -> Result<Step> {
    let k = pre.cpairs.len();
    if k == 0 {
        return Err(comp_err("final-shape", "no distinguished letters to introduce".into()));
    }
    if !v.var_rho.is_empty() || !v.theta.vars.is_empty() {
        return Err(comp_err("final-shape", "variables remain".into()));
    }
    if !v.trace_eq(&v.w, &v.inv_syms(&v.w)) {
        return Err(comp_err("final-shape", "equation is not involution-fixed".into()));
    }
    let blocks: Vec<Vec<Sym>> = v.blocks().iter().map(|b| b.to_vec()).collect();
    if blocks.len() < 2 * k {
        return Err(comp_err("final-shape", "fewer blocks than distinguished letters".into()));
    }
    let mut v2 = v.clone();
    v2.theta.consts.clear();
    let mut endo = Endo::identity();
    let mut new_blocks = blocks.clone();
    let m = blocks.len();
    for (i, &(c, cb)) in pre.cpairs.iter().enumerate() {
        let u: Vec<Letter> = blocks[i]
            .iter()
            .map(|&s| s.as_letter().expect("variable-free"))
            .collect();
        endo.0.insert(c, u.clone());
        endo.0.insert(cb, inv_word(&v.tab, &u));
        let mu = pre.monoid.eval_els(u.iter().map(|&a| v.tab.mu(a)));
        v2.tab.set_mu(c, mu);
        v2.tab.set_mu(cb, pre.monoid.inv(mu));
        v2.b.insert(c);
        v2.b.insert(cb);
        new_blocks[i] = vec![Sym::C(c)];
        new_blocks[m - 1 - i] = vec![Sym::C(cb)];
    }
    let mut w = vec![Sym::C(MARKER)];
    for blk in &new_blocks {
        w.extend_from_slice(blk);
        w.push(Sym::C(MARKER));
    }
    v2.w = w;
    validate_compression(pre, v, &v2, &endo, TKind::FinalCompression)?;
    v2.well_formed(pre)?;
    if !v2.is_final(pre) {
        return Err(comp_err("final-shape", "target is not accepting".into()));
    }
    Ok(Step {
        label: Label {
            kind: TKind::FinalCompression,
            endo,
            tau: BTreeMap::new(),
        },
        target: v2,
    })
}

/// Guided application of one basic operation, following a known solution.
#[derive(Clone, Debug)]
pub enum BasicOp {
    Pop {
        x: Var,
        prefix: Vec<Sym>,
        rho: ResSet,
        mu: El,
    },
    Delete {
        x: Var,
    },
    RemoveUseless,
    RemoveInvisible {
        c: Letter,
        alpha_c: Vec<Letter>,
    },
    Rename {
        a: Letter,
        rho: ResSet,
        typed: bool,
    },
    CompressPair {
        a: Letter,
        b: Letter,
    },
}

/// Applies one basic operation at a state carrying a solution and returns
/// the step together with the solution carried to the target.
pub fn apply_basic_operation(
    pre: &PreparedInstance,
    v: &EqState,
    sigma: &Sigma,
    op: &BasicOp,
) -> Result<(Step, Sigma)> {
    match op {
        BasicOp::Pop { x, prefix, rho, mu } => {
            let step = pop_variable(pre, v, *x, prefix, *rho, *mu)?;
            let mut sigma2 = sigma.clone();
            for (&y, img) in &step.label.tau {
                let head: Vec<Letter> = img
                    .iter()
                    .take_while(|s| !s.is_var())
                    .map(|s| s.as_letter().unwrap())
                    .collect();
                let tail: Vec<Letter> = img
                    .iter()
                    .skip_while(|s| !s.is_var())
                    .skip(1)
                    .map(|s| s.as_letter().unwrap())
                    .collect();
                let old = sigma.get(&y).cloned().unwrap_or_default();
                let rest = strip_affix(v, &old, &head, &tail).ok_or_else(|| {
                    sub_err("solution-prefix", format!("sigma({}) lacks the popped word", v.vt.name(y)))
                })?;
                sigma2.insert(y, rest);
            }
            Ok((step, sigma2))
        }
        BasicOp::Delete { x } => {
            if !sigma.get(x).map_or(true, |w| w.is_empty()) {
                return Err(sub_err("solution-prefix", "deleting a nonempty variable".into()));
            }
            let step = delete_variable(pre, v, *x)?;
            let mut sigma2 = sigma.clone();
            sigma2.remove(x);
            sigma2.remove(&v.vt.bar(*x));
            Ok((step, sigma2))
        }
        BasicOp::RemoveUseless => {
            let used: BTreeSet<Letter> = sigma.values().flatten().copied().collect();
            let step = remove_useless(pre, v, &used)?;
            Ok((step, sigma.clone()))
        }
        BasicOp::RemoveInvisible { c, alpha_c } => {
            let (step, sigma2) = remove_invisible(pre, v, sigma, *c, alpha_c)?;
            Ok((step, sigma2))
        }
        BasicOp::Rename { a, rho, typed } => {
            let step = rename_letter(pre, v, *a, *rho, *typed)?;
            Ok((step, sigma.clone()))
        }
        BasicOp::CompressPair { a, b } => {
            let step = compress_pair(pre, v, *a, *b)?;
            Ok((step, sigma.clone()))
        }
    }
}

/// Removes a known prefix and suffix from a trace, commuting independent
/// letters out of the way; None when the word does not factor that way.
fn strip_affix(v: &EqState, w: &[Letter], head: &[Letter], tail: &[Letter]) -> Option<Vec<Letter>> {
    let mut cur = w.to_vec();
    for &a in head {
        let mut pos = None;
        for (i, &x) in cur.iter().enumerate() {
            if x == a {
                pos = Some(i);
                break;
            }
            if v.tab.rho(x) & v.tab.rho(a) != 0 {
                return None; // a is not a minimal letter
            }
        }
        cur.remove(pos?);
    }
    for &a in tail.iter().rev() {
        let mut pos = None;
        for (i, &x) in cur.iter().enumerate().rev() {
            if x == a {
                pos = Some(i);
                break;
            }
            if v.tab.rho(x) & v.tab.rho(a) != 0 {
                return None;
            }
        }
        cur.remove(pos?);
    }
    Some(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{InstanceFile, WorkInstance};
    use crate::state::Alpha;

    fn prep(json: &str) -> PreparedInstance {
        let u = InstanceFile::from_str(json).unwrap().resolve().unwrap();
        WorkInstance::plain(&u).unwrap().build().unwrap()
    }

    fn toy1() -> PreparedInstance {
        prep(
            r#"{"schema":"tracesolve-instance/1","resources":["r1"],
                "constants":[{"name":"a","bar":"a~","rho":["r1"]}],
                "variables":[{"name":"X","bar":"X~","rho":["r1"]}],
                "equation":{"lhs":["X"],"rhs":["a"]}}"#,
        )
    }

    fn letter(pre: &PreparedInstance, name: &str) -> Letter {
        (0..pre.tab.len())
            .find(|&c| pre.tab.name(c) == name)
            .unwrap()
    }

    #[test]
    fn toy1_guided_path_reaches_final_and_composes_to_solution() {
        let pre = toy1();
        let v0 = EqState::initial(&pre);
        let a = letter(&pre, "a");
        let unit = pre.monoid.unit;

        // sigma(X) = a: pop everything at the initial transition
        let mut choices = BTreeMap::new();
        choices.insert(
            0,
            InitChoice::Keep {
                prefix: vec![a],
                rho: 0,
                mu: unit,
            },
        );
        let s1 = initial_transition(&pre, &v0, &choices).unwrap();
        let v1 = s1.target.clone();
        assert_eq!(v1.w.len(), 17);

        let s2 = delete_variable(&pre, &v1, 0).unwrap();
        let v2 = s2.target.clone();
        assert_eq!(v2.w.len(), 13);
        assert!(v2.var_rho.is_empty());
        assert!(v2.trace_eq(&v2.w, &v2.inv_syms(&v2.w)));

        let s3 = final_transition(&pre, &v2).unwrap();
        let v3 = s3.target.clone();
        assert!(v3.is_final(&pre));
        assert_eq!(
            v3.word_name(&v3.w),
            "# c1 # a # a # a~ # a~ # c1~ #"
        );

        // path composition recovers sigma(X) on the distinguished letter
        let endo = compose_labels([&s1.label, &s2.label, &s3.label]);
        let out = apply_to_distinguished(&endo, &[pre.cpairs[0].0]);
        assert_eq!(out, vec![vec![a]]);

        // soundness replay: pull the empty solution back along the path
        let sigma3 = Sigma::new();
        let sigma2 = pull_back_sigma(&v2, &s3.label, &sigma3);
        v2.check_solution(&pre, &sigma2, Some(&Alpha::identity())).unwrap();
        let sigma1 = pull_back_sigma(&v1, &s2.label, &sigma2);
        assert_eq!(sigma1[&0], Vec::<Letter>::new());
        v1.check_solution(&pre, &sigma1, None).unwrap();
        let sigma0 = pull_back_sigma(&v0, &s1.label, &sigma1);
        assert_eq!(sigma0[&0], vec![a]);
        v0.check_solution(&pre, &sigma0, None).unwrap();
    }

    #[test]
    fn identity_and_variable_only_substitutions_rejected() {
        let pre = toy1();
        let v = EqState::initial(&pre);
        let err = validate_substitution(&pre, &v, &v, &BTreeMap::new(), false).unwrap_err();
        assert!(err.to_string().contains("nontrivial"), "{err}");

        // tau(X) = X~ alone: no constant block
        let mut tau = BTreeMap::new();
        tau.insert(0, vec![Sym::V(1)]);
        tau.insert(1, vec![Sym::V(0)]);
        let mut v2 = v.clone();
        v2.w = substitute_w(&v.w, &tau);
        let err = validate_substitution(&pre, &v, &v2, &tau, false).unwrap_err();
        assert!(err.to_string().contains("image-shape"), "{err}");
    }

    #[test]
    fn pop_rejects_mismatched_resources_and_constraint() {
        let pre = toy1();
        let v = EqState::initial(&pre);
        let a = letter(&pre, "a");
        // rho(a) ∪ rho' must equal rho(X); rho' outside rho(X) breaks it
        let extra = v.tab.full & !v.var_rho[&0];
        assert_ne!(extra, 0, "synthetic resource expected");
        let bad = pop_variable(&pre, &v, 0, &[Sym::C(a)], extra, v.var_mu[&0]);
        assert!(
            bad.unwrap_err().to_string().contains("resource-image"),
            "resource mismatch must be rejected"
        );
        let bad = pop_variable(&pre, &v, 0, &[Sym::C(a)], v.var_rho[&0], pre.tab.mu(MARKER));
        assert!(bad.is_err(), "zero-like target constraint must be rejected");
        // keeping the declared data pops cleanly
        let ok = pop_variable(&pre, &v, 0, &[Sym::C(a)], v.var_rho[&0], v.var_mu[&0]);
        assert!(ok.is_ok(), "{:?}", ok.err());
    }

    #[test]
    fn rename_to_larger_resources_validates() {
        let pre = toy1();
        let v = EqState::initial(&pre);
        let a = letter(&pre, "a");
        let step = rename_letter(&pre, &v, a, v.tab.full, false).unwrap();
        assert!(step.target.weight() < v.weight());
        assert_eq!(step.label.endo.0.len(), 2);
        // same resources, untyped: no weight progress
        let err = rename_letter(&pre, &v, a, v.tab.rho(a), false).unwrap_err();
        assert!(err.to_string().contains("weight-decrease"), "{err}");
    }

    #[test]
    fn compress_visible_pair_shrinks_equation() {
        let pre = prep(
            r#"{"schema":"tracesolve-instance/1","resources":["r1","r2"],
                "constants":[{"name":"a","bar":"a~","rho":["r1"]},
                             {"name":"b","bar":"b~","rho":["r2"]}],
                "variables":[],
                "equation":{"lhs":["a","b"],"rhs":["a","b"]}}"#,
        );
        let v = EqState::initial(&pre);
        assert_eq!(v.w.len(), 13);
        let (a, b) = (letter(&pre, "a"), letter(&pre, "b"));
        let step = compress_pair(&pre, &v, a, b).unwrap();
        assert_eq!(step.target.w.len(), 9);
        assert!(step.target.weight() < v.weight());
        // the involuted blocks got the involuted fresh letter
        let names = step.target.word_name(&step.target.w);
        assert_eq!(names, "# g9 # g9 # g9~ # g9~ #");

        let err = compress_pair(&pre, &v, a, pre.tab.bar(a)).unwrap_err();
        assert!(err.to_string().contains("pair-shape"), "{err}");
    }

    #[test]
    fn useless_and_invisible_removal() {
        let pre = prep(
            r#"{"schema":"tracesolve-instance/1","resources":["r1"],
                "constants":[{"name":"a","bar":"a~","rho":["r1"]}],
                "variables":[{"name":"X","bar":"X~","rho":["r1"]}],
                "equation":{"lhs":["X"],"rhs":["X"]}}"#,
        );
        let v0 = EqState::initial(&pre);
        let a = letter(&pre, "a");
        let mut v = v0.clone();
        let (c, cb) = v
            .tab
            .alloc_fresh_pair(v.tab.rho(a), v.tab.mu(a), v.tab.mu(v.tab.bar(a)), 1024)
            .unwrap();
        v.b.insert(c);
        v.b.insert(cb);
        v.well_formed(&pre).unwrap();

        // sigma uses c, so it is invisible but not useless
        let mut sigma = Sigma::new();
        sigma.insert(0, vec![c]);
        sigma.insert(1, vec![cb]);
        v.check_solution(&pre, &sigma, None).unwrap();
        let (step, sigma2) = remove_invisible(&pre, &v, &sigma, c, &[a]).unwrap();
        assert_eq!(sigma2[&0], vec![a]);
        step.target.check_solution(&pre, &sigma2, None).unwrap();
        assert!(!step.target.b.contains(&c));

        // unused: plain removal
        let empty: BTreeSet<Letter> = BTreeSet::new();
        let step = remove_useless(&pre, &v, &empty).unwrap();
        assert!(!step.target.b.contains(&c));
        assert_eq!(step.target.b.len(), v.b.len() - 2);
    }

    #[test]
    fn final_transition_requires_palindromic_equation() {
        let pre = toy1();
        let v = EqState::initial(&pre);
        assert!(final_transition(&pre, &v).is_err(), "variables remain");
    }

    #[test]
    fn compose_labels_of_empty_path_is_identity() {
        let endo = compose_labels([]);
        assert!(endo.is_identity());
        assert_eq!(apply_to_distinguished(&endo, &[5]), vec![vec![5]]);
    }
}

//! Instance files: the versioned JSON schema, validation, and assembly of
//! the working form the solver runs on.
//!
//! Loading is strict. Alphabets, involutions, constraint tables and images
//! are checked exhaustively before any solving starts, and every rejection
//! names the offending symbol. Assembly rewrites the user's equation into
//! the single-trace form driving the search, extends the alphabet by its
//! lifted copies, and attaches the working constraint monoid.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alphabet::{El, LetterTable, ResSet, Sym, VarTable, MARKER};
use crate::config::Budgets;
use crate::error::{Result, SolveError};
use crate::monoid::{check_commuting_images, check_involuting_images, FMonoid};

pub const SCHEMA: &str = "tracesolve-instance/1";

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Monoid,
    Group,
}

fn default_mode() -> Mode {
    Mode::Monoid
}

/// On-disk instance format. Explicit tables everywhere; no constraint
/// language. The marker `#` is implicit and its name is reserved.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub schema: String,
    pub resources: Vec<String>,
    #[serde(default)]
    pub constants: Vec<ConstantDecl>,
    #[serde(default)]
    pub variables: Vec<VariableDecl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monoid: Option<MonoidDecl>,
    pub equation: EquationDecl,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distinguished: Option<Vec<String>>,
}

/// `bar == name` declares a self-involuting constant (monoid mode only).
/// A bar partner that has no declaration of its own is created implicitly
/// with the same resources and the involuted image.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantDecl {
    pub name: String,
    pub bar: String,
    pub rho: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableDecl {
    pub name: String,
    pub bar: String,
    pub rho: Vec<String>,
    /// Element name in the user monoid; defaults to the unit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonoidDecl {
    pub elements: Vec<String>,
    pub unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero: Option<String>,
    /// Row-major over `elements`: mult[i][j] = elements[i] * elements[j].
    pub mult: Vec<Vec<String>>,
    pub inv: Vec<String>,
    /// Constant name -> element name. Images of implicit bar partners are
    /// derived through the involution.
    pub images: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquationDecl {
    pub lhs: Vec<String>,
    pub rhs: Vec<String>,
}

impl InstanceFile {
    pub fn from_str(text: &str) -> Result<InstanceFile> {
        serde_json::from_str(text)
            .map_err(|e| SolveError::instance(format!("malformed instance file: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<InstanceFile> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            SolveError::instance(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_str(&text)
    }
}

/// One symbol of the user's equation.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum USym {
    L(usize),
    V(usize),
}

#[derive(Clone, Debug)]
pub struct ULetter {
    pub name: String,
    pub bar: usize,
    pub rho: ResSet,
    pub img: El,
}

#[derive(Clone, Debug)]
pub struct UVar {
    pub name: String,
    pub bar: usize,
    pub rho: ResSet,
    pub img: El,
}

/// A fully validated instance with symbols resolved to dense ids. This is
/// the common input of the solver pipeline and of the brute-force oracle;
/// it carries no derived machinery.
#[derive(Clone, Debug)]
pub struct UserInstance {
    pub resource_names: Vec<String>,
    pub full: ResSet,
    pub letters: Vec<ULetter>,
    pub vars: Vec<UVar>,
    /// User constraint monoid; trivial when the file declares none.
    pub monoid: FMonoid,
    pub el_names: Vec<String>,
    pub lhs: Vec<USym>,
    pub rhs: Vec<USym>,
    pub mode: Mode,
    /// Output columns: variable ids, in user order.
    pub distinguished: Vec<usize>,
}

impl UserInstance {
    pub fn letter_dep(&self, a: usize, b: usize) -> bool {
        self.letters[a].rho & self.letters[b].rho != 0
    }

    /// Variable ids paired with their bars, each pair listed once, in
    /// declaration order. This order fixes the prefix of the initial trace
    /// and the distinguished output letters.
    pub fn var_pairs(&self) -> Vec<(usize, usize)> {
        let mut seen = vec![false; self.vars.len()];
        let mut out = Vec::new();
        for x in 0..self.vars.len() {
            if seen[x] {
                continue;
            }
            let b = self.vars[x].bar;
            seen[x] = true;
            seen[b] = true;
            out.push((x, b));
        }
        out
    }

    pub fn has_self_involuting(&self) -> bool {
        self.letters.iter().enumerate().any(|(i, l)| l.bar == i)
    }
}

fn resolve_resources(names: &[String], resources: &[String]) -> Result<ResSet> {
    let mut s: ResSet = 0;
    for r in resources {
        let i = names
            .iter()
            .position(|n| n == r)
            .ok_or_else(|| SolveError::UnknownSymbol(r.clone()))?;
        let bit = 1u8 << i;
        if s & bit != 0 {
            return Err(SolveError::instance(format!("resource `{r}` listed twice")));
        }
        s |= bit;
    }
    Ok(s)
}

fn resolve_monoid(decl: &Option<MonoidDecl>) -> Result<(FMonoid, Vec<String>)> {
    let Some(d) = decl else {
        return Ok((FMonoid::trivial(), vec!["1".to_string()]));
    };
    let n = d.elements.len();
    let mut ix = BTreeMap::new();
    for (i, e) in d.elements.iter().enumerate() {
        if ix.insert(e.as_str(), i as El).is_some() {
            return Err(SolveError::instance(format!("monoid element `{e}` listed twice")));
        }
    }
    let get = |e: &str| -> Result<El> {
        ix.get(e)
            .copied()
            .ok_or_else(|| SolveError::UnknownSymbol(e.to_string()))
    };
    let unit = get(&d.unit)?;
    let zero = d.zero.as_deref().map(get).transpose()?;
    if d.mult.len() != n {
        return Err(SolveError::instance(format!(
            "multiplication table has {} rows, expected {n}",
            d.mult.len()
        )));
    }
    let mut mult = Vec::with_capacity(n * n);
    for (i, row) in d.mult.iter().enumerate() {
        if row.len() != n {
            return Err(SolveError::instance(format!(
                "multiplication row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        for e in row {
            mult.push(get(e)?);
        }
    }
    if d.inv.len() != n {
        return Err(SolveError::instance(format!(
            "involution table has {} entries, expected {n}",
            d.inv.len()
        )));
    }
    let inv = d.inv.iter().map(|e| get(e)).collect::<Result<Vec<_>>>()?;
    let m = FMonoid::from_tables(n, unit, zero, mult, inv)?;
    Ok((m, d.elements.clone()))
}

impl InstanceFile {
    /// Validates everything and resolves names to ids.
    pub fn resolve(&self) -> Result<UserInstance> {
        if self.schema != SCHEMA {
            return Err(SolveError::instance(format!(
                "unsupported schema `{}`, expected `{SCHEMA}`",
                self.schema
            )));
        }
        if self.resources.is_empty() {
            return Err(SolveError::instance("at least one resource is required"));
        }
        if self.resources.len() > 8 {
            return Err(SolveError::ResourceCap(self.resources.len()));
        }
        {
            let mut seen = BTreeSet::new();
            for r in &self.resources {
                if r.is_empty() {
                    return Err(SolveError::instance("empty resource name"));
                }
                if !seen.insert(r) {
                    return Err(SolveError::instance(format!("resource `{r}` listed twice")));
                }
            }
        }
        let full: ResSet = ((1u16 << self.resources.len()) - 1) as ResSet;

        let (monoid, el_names) = resolve_monoid(&self.monoid)?;

        // Symbol names: constants and variables share one namespace; `#` is
        // reserved for the marker.
        fn claim(names: &mut BTreeSet<String>, n: &str) -> Result<()> {
            if n.is_empty() {
                return Err(SolveError::instance("empty symbol name"));
            }
            if n == "#" {
                return Err(SolveError::instance("symbol name `#` is reserved for the marker"));
            }
            if !names.insert(n.to_string()) {
                return Err(SolveError::instance(format!("symbol `{n}` declared twice")));
            }
            Ok(())
        }
        let mut names: BTreeSet<String> = BTreeSet::new();
        for c in &self.constants {
            claim(&mut names, &c.name)?;
        }
        for v in &self.variables {
            claim(&mut names, &v.name)?;
        }

        // Pass 2: build letters, materializing implicit bar partners.
        let mut letters: Vec<ULetter> = Vec::new();
        let mut letter_ix: BTreeMap<String, usize> = BTreeMap::new();
        let declared: BTreeMap<&str, &ConstantDecl> =
            self.constants.iter().map(|c| (c.name.as_str(), c)).collect();
        for c in &self.constants {
            if letter_ix.contains_key(&c.name) {
                continue;
            }
            let rho = resolve_resources(&self.resources, &c.rho)?;
            if rho == 0 {
                return Err(SolveError::instance(format!(
                    "constant `{}` has an empty resource set; every letter must own a resource",
                    c.name
                )));
            }
            if c.bar == c.name {
                if self.mode == Mode::Group {
                    return Err(SolveError::instance(format!(
                        "constant `{}` is self-involuting; group alphabets have no such letters (torsion)",
                        c.name
                    )));
                }
                let id = letters.len();
                letter_ix.insert(c.name.clone(), id);
                letters.push(ULetter { name: c.name.clone(), bar: id, rho, img: monoid.unit });
                continue;
            }
            // Proper pair. The partner may be declared explicitly; check
            // consistency, then push both adjacently.
            if let Some(p) = declared.get(c.bar.as_str()) {
                if p.bar != c.name {
                    return Err(SolveError::instance(format!(
                        "involution mismatch: `{}` names `{}` but `{}` names `{}`",
                        c.name, c.bar, p.name, p.bar
                    )));
                }
                let prho = resolve_resources(&self.resources, &p.rho)?;
                if prho != rho {
                    return Err(SolveError::instance(format!(
                        "`{}` and `{}` are involution partners but declare different resources",
                        c.name, p.name
                    )));
                }
            } else {
                claim(&mut names, &c.bar)?;
            }
            let id = letters.len();
            letter_ix.insert(c.name.clone(), id);
            letter_ix.insert(c.bar.clone(), id + 1);
            letters.push(ULetter { name: c.name.clone(), bar: id + 1, rho, img: monoid.unit });
            letters.push(ULetter { name: c.bar.clone(), bar: id, rho, img: monoid.unit });
        }

        // Images. Explicit images win; a missing image is derived from the
        // bar partner; with a declared monoid every letter needs one.
        if let Some(md) = &self.monoid {
            for k in md.images.keys() {
                if !letter_ix.contains_key(k) {
                    return Err(SolveError::UnknownSymbol(k.clone()));
                }
            }
            let el_ix: BTreeMap<&str, El> = el_names
                .iter()
                .enumerate()
                .map(|(i, e)| (e.as_str(), i as El))
                .collect();
            let mut imgs: Vec<Option<El>> = vec![None; letters.len()];
            for (name, el) in &md.images {
                let e = el_ix
                    .get(el.as_str())
                    .copied()
                    .ok_or_else(|| SolveError::UnknownSymbol(el.clone()))?;
                imgs[letter_ix[name]] = Some(e);
            }
            for i in 0..letters.len() {
                let b = letters[i].bar;
                match (imgs[i], imgs[b]) {
                    (Some(e), Some(f)) => {
                        if monoid.inv(e) != f {
                            return Err(SolveError::instance(format!(
                                "images of `{}` and `{}` are not involution partners",
                                letters[i].name, letters[b].name
                            )));
                        }
                    }
                    (None, Some(f)) => imgs[i] = Some(monoid.inv(f)),
                    (None, None) => {
                        return Err(SolveError::instance(format!(
                            "constant `{}` has no image under the constraint morphism",
                            letters[i].name
                        )));
                    }
                    _ => {}
                }
            }
            for (l, img) in letters.iter_mut().zip(imgs) {
                l.img = img.unwrap();
            }
        }

        // Zero images are reserved for the marker: a letter or variable with
        // image zero could never sit inside a marker-free factor.
        if let Some(z) = monoid.zero {
            for l in &letters {
                if l.img == z {
                    return Err(SolveError::instance(format!(
                        "constant `{}` maps to the zero of the constraint monoid; zero is reserved for the marker",
                        l.name
                    )));
                }
            }
        }

        // Variables.
        let mut vars: Vec<UVar> = Vec::new();
        let mut var_ix: BTreeMap<String, usize> = BTreeMap::new();
        let vdecl: BTreeMap<&str, &VariableDecl> =
            self.variables.iter().map(|v| (v.name.as_str(), v)).collect();
        let el_ix: BTreeMap<&str, El> = el_names
            .iter()
            .enumerate()
            .map(|(i, e)| (e.as_str(), i as El))
            .collect();
        let var_img = |v: &VariableDecl| -> Result<El> {
            match &v.mu {
                None => Ok(monoid.unit),
                Some(e) => el_ix
                    .get(e.as_str())
                    .copied()
                    .ok_or_else(|| SolveError::UnknownSymbol(e.clone())),
            }
        };
        for v in &self.variables {
            if var_ix.contains_key(&v.name) {
                continue;
            }
            if v.bar == v.name {
                return Err(SolveError::instance(format!(
                    "variable `{}` names itself as involution; variables come in distinct pairs",
                    v.name
                )));
            }
            if letter_ix.contains_key(v.bar.as_str()) {
                return Err(SolveError::instance(format!(
                    "variable `{}` names the constant `{}` as its involution",
                    v.name, v.bar
                )));
            }
            let rho = resolve_resources(&self.resources, &v.rho)?;
            let img = var_img(v)?;
            let (brho, bimg) = if let Some(p) = vdecl.get(v.bar.as_str()) {
                if p.bar != v.name {
                    return Err(SolveError::instance(format!(
                        "involution mismatch: `{}` names `{}` but `{}` names `{}`",
                        v.name, v.bar, p.name, p.bar
                    )));
                }
                let prho = resolve_resources(&self.resources, &p.rho)?;
                if prho != rho {
                    return Err(SolveError::instance(format!(
                        "`{}` and `{}` are involution partners but declare different resources",
                        v.name, p.name
                    )));
                }
                let pimg = var_img(p)?;
                if pimg != monoid.inv(img) {
                    return Err(SolveError::instance(format!(
                        "images of `{}` and `{}` are not involution partners",
                        v.name, p.name
                    )));
                }
                (prho, pimg)
            } else {
                claim(&mut names, &v.bar)?;
                (rho, monoid.inv(img))
            };
            let id = vars.len();
            var_ix.insert(v.name.clone(), id);
            var_ix.insert(v.bar.clone(), id + 1);
            vars.push(UVar { name: v.name.clone(), bar: id + 1, rho, img });
            vars.push(UVar { name: v.bar.clone(), bar: id, rho: brho, img: bimg });
        }
        if let Some(z) = monoid.zero {
            for v in &vars {
                if v.img == z {
                    return Err(SolveError::instance(format!(
                        "variable `{}` maps to the zero of the constraint monoid",
                        v.name
                    )));
                }
            }
        }

        // The constraint morphism must be well defined on the trace monoid:
        // independent letters need commuting images, involution partners
        // involuting ones.
        check_commuting_images(
            &monoid,
            &letters.iter().map(|l| (l.rho, l.img)).collect::<Vec<_>>(),
            &|_, _| false,
            &|i| letters[i].name.clone(),
        )?;
        check_involuting_images(
            &monoid,
            &letters
                .iter()
                .map(|l| (l.img, letters[l.bar].img))
                .collect::<Vec<_>>(),
            &|i| letters[i].name.clone(),
        )?;

        // Equation.
        let resolve_word = |w: &[String]| -> Result<Vec<USym>> {
            w.iter()
                .map(|s| {
                    if let Some(&l) = letter_ix.get(s) {
                        Ok(USym::L(l))
                    } else if let Some(&v) = var_ix.get(s) {
                        Ok(USym::V(v))
                    } else {
                        Err(SolveError::UnknownSymbol(s.clone()))
                    }
                })
                .collect()
        };
        let lhs = resolve_word(&self.equation.lhs)?;
        let rhs = resolve_word(&self.equation.rhs)?;

        // Distinguished output columns default to every variable pair once,
        // in declaration order.
        let distinguished = match &self.distinguished {
            None => {
                let mut seen = vec![false; vars.len()];
                let mut out = Vec::new();
                for x in 0..vars.len() {
                    if !seen[x] {
                        seen[x] = true;
                        seen[vars[x].bar] = true;
                        out.push(x);
                    }
                }
                out
            }
            Some(list) => {
                let mut out = Vec::new();
                for name in list {
                    let x = *var_ix
                        .get(name)
                        .ok_or_else(|| SolveError::UnknownSymbol(name.clone()))?;
                    if out.contains(&x) {
                        return Err(SolveError::instance(format!(
                            "variable `{name}` distinguished twice"
                        )));
                    }
                    out.push(x);
                }
                out
            }
        };

        Ok(UserInstance {
            resource_names: self.resources.clone(),
            full,
            letters,
            vars,
            monoid,
            el_names,
            lhs,
            rhs,
            mode: self.mode,
            distinguished,
        })
    }
}

/// A solver-ready description after mode-specific rewriting: a system of
/// blocks over a pair-only alphabet, images already in the working monoid.
/// `build` turns it into the closed, budgeted form the search consumes.
#[derive(Clone, Debug)]
pub struct WorkInstance {
    pub resource_names: Vec<String>,
    pub letters: Vec<WLetter>,
    pub vars: Vec<WVar>,
    /// Working constraint monoid, marker image included.
    pub monoid: FMonoid,
    pub marker_mu: El,
    /// Block equations; solutions satisfy all blocks simultaneously.
    pub blocks: Vec<(Vec<USym>, Vec<USym>)>,
    /// Output columns as indices into the variable pair list.
    pub out_cols: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct WLetter {
    pub name: String,
    pub bar: usize,
    pub rho: ResSet,
    pub mu: El,
    /// Name this letter prints as in enumerated solutions; None erases it
    /// (the post-map of the self-involution elimination).
    pub out: Option<String>,
}

#[derive(Clone, Debug)]
pub struct WVar {
    pub name: String,
    pub bar: usize,
    pub rho: ResSet,
    pub mu: El,
}

/// Everything one solver run needs: closed alphabet, frozen variables,
/// working monoid, the initial trace, and budgets derived from its size.
#[derive(Clone, Debug)]
pub struct PreparedInstance {
    pub tab: LetterTable,
    pub vars: VarTable,
    pub monoid: FMonoid,
    /// Initial resource set and constraint image per variable.
    pub var_rho: Vec<ResSet>,
    pub var_mu: Vec<El>,
    /// Variable pairs in prefix order, with their distinguished letters.
    pub pairs: Vec<(crate::alphabet::Var, crate::alphabet::Var)>,
    pub cpairs: Vec<(crate::alphabet::Letter, crate::alphabet::Letter)>,
    /// Indices into `pairs` giving the output columns, in order.
    pub out_cols: Vec<usize>,
    pub w_init: Vec<Sym>,
    /// Output name per base letter; None erases the letter.
    pub out_names: Vec<Option<String>>,
    /// Work-instance symbol indices mapped into the closed tables.
    pub letter_of: Vec<crate::alphabet::Letter>,
    pub var_of: Vec<crate::alphabet::Var>,
    pub budgets: Budgets,
    /// Input size: initial trace length + closed alphabet + variables.
    pub n_input: usize,
}

impl WorkInstance {
    pub fn build(&self) -> Result<PreparedInstance> {
        for (i, l) in self.letters.iter().enumerate() {
            if l.bar == i || self.letters[l.bar].bar != i {
                return Err(SolveError::invariant(format!(
                    "working alphabet is not pair-only at `{}`",
                    l.name
                )));
            }
            if self.monoid.is_zero_like(l.mu) {
                return Err(SolveError::invariant(format!(
                    "working image of `{}` is zero-like",
                    l.name
                )));
            }
        }
        if !self.monoid.is_zero_like(self.marker_mu) {
            return Err(SolveError::invariant("marker image must be zero-like"));
        }
        for v in &self.vars {
            if self.monoid.is_zero_like(v.mu) {
                return Err(SolveError::invariant(format!(
                    "working image of variable `{}` is zero-like",
                    v.name
                )));
            }
        }
        check_commuting_images(
            &self.monoid,
            &self.letters.iter().map(|l| (l.rho, l.mu)).collect::<Vec<_>>(),
            &|_, _| false,
            &|i| self.letters[i].name.clone(),
        )?;
        check_involuting_images(
            &self.monoid,
            &self
                .letters
                .iter()
                .map(|l| (l.mu, self.letters[l.bar].mu))
                .collect::<Vec<_>>(),
            &|i| self.letters[i].name.clone(),
        )?;

        // Give the marker a resource no variable owns, adding one when some
        // variable covers the full set. Solutions then cannot touch the
        // marker, since they must respect resource sets.
        let mut resource_names = self.resource_names.clone();
        let user_full: ResSet = ((1u16 << resource_names.len()) - 1) as ResSet;
        if self.vars.iter().any(|v| v.rho == user_full) {
            if resource_names.len() >= 8 {
                return Err(SolveError::ResourceCap(resource_names.len() + 1));
            }
            resource_names.push("'".to_string());
        }

        let mut tab = LetterTable::new(resource_names, self.marker_mu)?;
        let mut letter_of = vec![MARKER; self.letters.len()];
        let mut done = vec![false; self.letters.len()];
        for i in 0..self.letters.len() {
            if done[i] {
                continue;
            }
            let b = self.letters[i].bar;
            let (l, lb) = tab.push_pair(
                self.letters[i].name.clone(),
                self.letters[b].name.clone(),
                self.letters[i].rho,
                self.letters[i].mu,
                self.letters[b].mu,
            );
            letter_of[i] = l;
            letter_of[b] = lb;
            done[i] = true;
            done[b] = true;
        }
        tab.close_alphabet()?;

        let mut vt = VarTable::new();
        let mut var_of = vec![0; self.vars.len()];
        let mut pairs = Vec::new();
        let mut pair_ix = vec![usize::MAX; self.vars.len()];
        let mut vdone = vec![false; self.vars.len()];
        for i in 0..self.vars.len() {
            if vdone[i] {
                continue;
            }
            let b = self.vars[i].bar;
            let (x, xb) = vt.push_pair(self.vars[i].name.clone(), self.vars[b].name.clone());
            var_of[i] = x;
            var_of[b] = xb;
            pair_ix[i] = pairs.len();
            pair_ix[b] = pairs.len();
            pairs.push((x, xb));
            vdone[i] = true;
            vdone[b] = true;
        }
        vt.freeze_originals();
        let k = pairs.len();
        let cpairs = tab.reserve_distinguished(k, self.monoid.unit);

        let mut var_rho = vec![0; self.vars.len()];
        let mut var_mu = vec![self.monoid.unit; self.vars.len()];
        for (i, v) in self.vars.iter().enumerate() {
            var_rho[var_of[i] as usize] = v.rho;
            var_mu[var_of[i] as usize] = v.mu;
        }

        let conv = |w: &[USym]| -> Vec<Sym> {
            w.iter()
                .map(|&s| match s {
                    USym::L(l) => Sym::C(letter_of[l]),
                    USym::V(v) => Sym::V(var_of[v]),
                })
                .collect()
        };
        let blocks: Vec<(Vec<Sym>, Vec<Sym>)> = self
            .blocks
            .iter()
            .map(|(u, v)| (conv(u), conv(v)))
            .collect();

        // W = # X_1 # … X_k # U_1 # … # U_r # V_1 # … # V_r
        //       # inv(U_r) # … # inv(U_1) # inv(V_r) # … # inv(V_1)
        //       # inv(X_k) # … # inv(X_1) #
        // Marker blocks are rigid, so the equation W = inv(W) says exactly
        // that every block solves, with the variable prefix recording the
        // solution values.
        let mark = Sym::C(MARKER);
        let mut w = vec![mark];
        for &(x, _) in &pairs {
            w.push(Sym::V(x));
            w.push(mark);
        }
        for (u, _) in &blocks {
            w.extend_from_slice(u);
            w.push(mark);
        }
        for (_, v) in &blocks {
            w.extend_from_slice(v);
            w.push(mark);
        }
        let inv_sym_word = |word: &[Sym]| -> Vec<Sym> {
            word.iter()
                .rev()
                .map(|&s| match s {
                    Sym::C(c) => Sym::C(tab.bar(c)),
                    Sym::V(x) => Sym::V(vt.bar(x)),
                })
                .collect()
        };
        for (u, _) in blocks.iter().rev() {
            w.extend(inv_sym_word(u));
            w.push(mark);
        }
        for (_, v) in blocks.iter().rev() {
            w.extend(inv_sym_word(v));
            w.push(mark);
        }
        for &(_, xb) in pairs.iter().rev() {
            w.push(Sym::V(xb));
            w.push(mark);
        }

        let out_cols = self.out_cols.clone();
        for &c in &out_cols {
            if c >= pairs.len() {
                return Err(SolveError::invariant("output column out of range"));
            }
        }

        let mut out_names = vec![None; tab.a_count as usize];
        for (i, l) in self.letters.iter().enumerate() {
            out_names[letter_of[i] as usize] = l.out.clone();
        }

        let n_input = w.len() + tab.a_count as usize + vt.len() as usize;
        let budgets = Budgets::for_instance_size(n_input);
        if w.len() > budgets.equation_len {
            return Err(SolveError::budget("equation length", w.len(), budgets.equation_len));
        }

        Ok(PreparedInstance {
            tab,
            vars: vt,
            monoid: self.monoid.clone(),
            var_rho,
            var_mu,
            pairs,
            cpairs,
            out_cols,
            w_init: w,
            out_names,
            letter_of,
            var_of,
            budgets,
            n_input,
        })
    }

    /// The direct translation of a monoid-mode instance without
    /// self-involuting letters: working monoid = user monoid x marker bit.
    pub fn plain(u: &UserInstance) -> Result<WorkInstance> {
        if u.mode != Mode::Monoid {
            return Err(SolveError::invariant("plain assembly needs monoid mode"));
        }
        if u.has_self_involuting() {
            return Err(SolveError::invariant(
                "plain assembly cannot handle self-involuting letters",
            ));
        }
        let (work, ix) = FMonoid::product(&u.monoid, &FMonoid::marker_bit(), usize::MAX)?;
        let one = 1 as El;
        let letters = u
            .letters
            .iter()
            .map(|l| WLetter {
                name: l.name.clone(),
                bar: l.bar,
                rho: l.rho,
                mu: ix.pair(l.img, one),
                out: Some(l.name.clone()),
            })
            .collect();
        let vars = u
            .vars
            .iter()
            .map(|v| WVar {
                name: v.name.clone(),
                bar: v.bar,
                rho: v.rho,
                mu: ix.pair(v.img, one),
            })
            .collect();
        let marker_mu = ix.pair(u.monoid.unit, 0);
        let out_cols = distinguished_cols(u);
        Ok(WorkInstance {
            resource_names: u.resource_names.clone(),
            letters,
            vars,
            monoid: work,
            marker_mu,
            blocks: vec![(u.lhs.clone(), u.rhs.clone())],
            out_cols,
        })
    }
}

/// Maps the user's distinguished variable ids to pair-list indices.
pub fn distinguished_cols(u: &UserInstance) -> Vec<usize> {
    let pairs = u.var_pairs();
    u.distinguished
        .iter()
        .map(|&x| {
            pairs
                .iter()
                .position(|&(a, b)| a == x || b == x)
                .expect("distinguished variable not in pair list")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn toy1_json() -> String {
        serde_json::json!({
            "schema": SCHEMA,
            "resources": ["r"],
            "constants": [{"name": "a", "bar": "a~", "rho": ["r"]}],
            "variables": [{"name": "X", "bar": "X~", "rho": ["r"]}],
            "equation": {"lhs": ["X"], "rhs": ["a"]},
            "mode": "monoid"
        })
        .to_string()
    }

    fn resolve(text: &str) -> Result<UserInstance> {
        InstanceFile::from_str(text)?.resolve()
    }

    #[test]
    fn toy1_resolves_and_builds() {
        let u = resolve(&toy1_json()).unwrap();
        assert_eq!(u.letters.len(), 2);
        assert_eq!(u.vars.len(), 2);
        assert_eq!(u.distinguished, vec![0]);
        let p = WorkInstance::plain(&u).unwrap().build().unwrap();
        // One variable with a full user resource set forces the extra
        // marker resource.
        assert_eq!(p.tab.resource_names.len(), 2);
        assert_eq!(p.w_init.len(), 13);
        let markers = p.w_init.iter().filter(|&&s| s == Sym::C(MARKER)).count();
        assert_eq!(markers, 7);
        // closed alphabet: #, a, a~, (a,full), (a~,full)
        assert_eq!(p.tab.a_count, 5);
        assert_eq!(p.pairs.len(), 1);
        assert_eq!(p.cpairs.len(), 1);
        // the variable suffix is the involution of the variable prefix
        let w = &p.w_init;
        let k = p.pairs.len();
        for i in 0..=2 * k {
            match (w[i], w[w.len() - 1 - i]) {
                (Sym::C(c), Sym::C(d)) => assert_eq!(p.tab.bar(c), d),
                (Sym::V(x), Sym::V(y)) => assert_eq!(p.vars.bar(x), y),
                _ => panic!("prefix/suffix symmetry broken at {i}"),
            }
        }
        // expanded by hand: # X # X # a # X~ # a~ # X~ #
        let names: Vec<String> = w
            .iter()
            .map(|&s| match s {
                Sym::C(c) => p.tab.name(c).to_string(),
                Sym::V(x) => p.vars.name(x).to_string(),
            })
            .collect();
        assert_eq!(
            names.join(" "),
            "# X # X # a # X~ # a~ # X~ #"
        );
    }

    #[test]
    fn no_extra_resource_when_variables_are_proper() {
        let text = serde_json::json!({
            "schema": SCHEMA,
            "resources": ["r", "s"],
            "constants": [{"name": "a", "bar": "a~", "rho": ["r"]}],
            "variables": [{"name": "X", "bar": "X~", "rho": ["r"]}],
            "equation": {"lhs": ["X"], "rhs": ["a"]},
        })
        .to_string();
        let u = resolve(&text).unwrap();
        let p = WorkInstance::plain(&u).unwrap().build().unwrap();
        assert_eq!(p.tab.resource_names.len(), 2);
    }

    #[test]
    fn schema_version_checked() {
        let text = toy1_json().replace("tracesolve-instance/1", "tracesolve-instance/0");
        assert!(matches!(resolve(&text), Err(SolveError::Instance(_))));
    }

    #[test]
    fn resource_cap_rejected() {
        let names: Vec<String> = (0..9).map(|i| format!("r{i}")).collect();
        let text = serde_json::json!({
            "schema": SCHEMA,
            "resources": names,
            "equation": {"lhs": [], "rhs": []},
        })
        .to_string();
        assert!(matches!(resolve(&text), Err(SolveError::ResourceCap(9))));
    }

    #[test]
    fn empty_rho_rejected() {
        let text = serde_json::json!({
            "schema": SCHEMA,
            "resources": ["r"],
            "constants": [{"name": "a", "bar": "a~", "rho": []}],
            "equation": {"lhs": [], "rhs": []},
        })
        .to_string();
        let err = resolve(&text).unwrap_err();
        assert!(err.to_string().contains("empty resource set"));
    }

    #[test]
    fn involution_mismatch_rejected() {
        let text = serde_json::json!({
            "schema": SCHEMA,
            "resources": ["r"],
            "constants": [
                {"name": "a", "bar": "b", "rho": ["r"]},
                {"name": "b", "bar": "c", "rho": ["r"]},
                {"name": "c", "bar": "b", "rho": ["r"]}
            ],
            "equation": {"lhs": [], "rhs": []},
        })
        .to_string();
        assert!(resolve(&text).is_err());
    }

    #[test]
    fn unknown_equation_symbol_rejected() {
        let text = serde_json::json!({
            "schema": SCHEMA,
            "resources": ["r"],
            "constants": [{"name": "a", "bar": "a~", "rho": ["r"]}],
            "equation": {"lhs": ["q"], "rhs": ["a"]},
        })
        .to_string();
        assert!(matches!(resolve(&text), Err(SolveError::UnknownSymbol(_))));
    }

    #[test]
    fn group_mode_rejects_self_involuting() {
        let text = serde_json::json!({
            "schema": SCHEMA,
            "resources": ["r"],
            "constants": [{"name": "a", "bar": "a", "rho": ["r"]}],
            "equation": {"lhs": ["a"], "rhs": ["a"]},
            "mode": "group"
        })
        .to_string();
        let err = resolve(&text).unwrap_err();
        assert!(err.to_string().contains("self-involuting"));
    }

    #[test]
    fn user_monoid_images_and_involution() {
        // Z/2 written multiplicatively: elements 1, g with g*g = 1.
        let text = serde_json::json!({
            "schema": SCHEMA,
            "resources": ["r"],
            "constants": [{"name": "a", "bar": "a~", "rho": ["r"]}],
            "variables": [{"name": "X", "bar": "X~", "rho": ["r"], "mu": "g"}],
            "monoid": {
                "elements": ["1", "g"],
                "unit": "1",
                "mult": [["1", "g"], ["g", "1"]],
                "inv": ["1", "g"],
                "images": {"a": "g"}
            },
            "equation": {"lhs": ["X"], "rhs": ["a"]},
        })
        .to_string();
        let u = resolve(&text).unwrap();
        assert_eq!(u.letters[0].img, 1);
        // bar image derived through the involution: inv(g) = g
        assert_eq!(u.letters[1].img, 1);
        assert_eq!(u.vars[0].img, 1);
        let p = WorkInstance::plain(&u).unwrap().build().unwrap();
        assert!(!p.monoid.is_zero_like(p.var_mu[0]));
        assert!(p.monoid.is_zero_like(p.tab.mu(MARKER)));
    }

    #[test]
    fn zero_image_rejected() {
        let text = serde_json::json!({
            "schema": SCHEMA,
            "resources": ["r"],
            "constants": [{"name": "a", "bar": "a~", "rho": ["r"]}],
            "monoid": {
                "elements": ["1", "z"],
                "unit": "1",
                "zero": "z",
                "mult": [["1", "z"], ["z", "z"]],
                "inv": ["1", "z"],
                "images": {"a": "z"}
            },
            "equation": {"lhs": ["a"], "rhs": ["a"]},
        })
        .to_string();
        let err = resolve(&text).unwrap_err();
        assert!(err.to_string().contains("reserved for the marker"));
    }

    #[test]
    fn noncommuting_independent_images_rejected() {
        // Two independent letters whose images do not commute: the morphism
        // would not be well defined on the trace monoid. The monoid is the
        // Rees quotient recognizing the factor language of "pq": products
        // that are not factors of pq collapse to zero, so pq != 0 = qp, and
        // swapping p and q is a valid involution.
        let text = serde_json::json!({
            "schema": SCHEMA,
            "resources": ["r", "s"],
            "constants": [
                {"name": "a", "bar": "a~", "rho": ["r"]},
                {"name": "b", "bar": "b~", "rho": ["s"]}
            ],
            "monoid": {
                "elements": ["1", "p", "q", "pq", "0"],
                "unit": "1",
                "zero": "0",
                "mult": [
                    ["1", "p", "q", "pq", "0"],
                    ["p", "0", "pq", "0", "0"],
                    ["q", "0", "0", "0", "0"],
                    ["pq", "0", "0", "0", "0"],
                    ["0", "0", "0", "0", "0"]
                ],
                "inv": ["1", "q", "p", "pq", "0"],
                "images": {"a": "p", "a~": "q", "b": "q", "b~": "p"}
            },
            "equation": {"lhs": ["a"], "rhs": ["a"]},
        })
        .to_string();
        let err = resolve(&text).unwrap_err();
        assert!(err.to_string().contains("commute"), "{err}");
    }

    #[test]
    fn multi_block_w_init_shape() {
        let text = serde_json::json!({
            "schema": SCHEMA,
            "resources": ["r", "s"],
            "constants": [{"name": "a", "bar": "a~", "rho": ["r"]}],
            "variables": [{"name": "X", "bar": "X~", "rho": ["r"]}],
            "equation": {"lhs": ["X"], "rhs": ["a"]},
        })
        .to_string();
        let u = resolve(&text).unwrap();
        let mut w = WorkInstance::plain(&u).unwrap();
        // duplicate the block: two copies of X = a
        let b = w.blocks[0].clone();
        w.blocks.push(b);
        let p = w.build().unwrap();
        let markers = p.w_init.iter().filter(|&&s| s == Sym::C(MARKER)).count();
        // 2k + 4r + 1 with k = 1 pair, r = 2 blocks
        assert_eq!(markers, 11);
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolveError};

/// Letter id. Id 0 is always the marker `#`.
pub type Letter = u32;
/// Variable id.
pub type Var = u32;
/// Resource set as a bitmask; at most 8 resources.
pub type ResSet = u8;
/// Element id inside a finite constraint monoid.
pub type El = u16;

pub const MARKER: Letter = 0;

/// One symbol of an equation word: constant or variable.
/// Constants order before variables (derived Ord on the discriminant).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum Sym {
    C(Letter),
    V(Var),
}

impl Sym {
    pub fn as_letter(self) -> Option<Letter> {
        match self {
            Sym::C(c) => Some(c),
            Sym::V(_) => None,
        }
    }
    pub fn as_var(self) -> Option<Var> {
        match self {
            Sym::V(x) => Some(x),
            Sym::C(_) => None,
        }
    }
    pub fn is_var(self) -> bool {
        matches!(self, Sym::V(_))
    }
}

/// The constant alphabet of one search path.
///
/// Ids below `a_count` form the fixed closed alphabet A (marker, user letters
/// and their lifted copies (a,S)); transitions must fix these pointwise.
/// Ids in `a_count..reserved` are the distinguished output letters c_i, c̄_i.
/// Ids from `reserved` upward are fresh compression letters; only those are
/// subject to renaming when states are canonicalized.
#[derive(Clone, Debug)]
pub struct LetterTable {
    names: Vec<String>,
    bar: Vec<Letter>,
    rho: Vec<ResSet>,
    mu: Vec<El>,
    /// User-level base letter: (a,S) ↦ a, marker ↦ marker, fresh ↦ itself.
    base: Vec<Letter>,
    /// Realizes the lifted constants: (a,S) with rho(a) ⊆ S.
    lifted: BTreeMap<(Letter, ResSet), Letter>,
    pub resource_names: Vec<String>,
    /// Bitmask of the full resource set R.
    pub full: ResSet,
    pub a_count: u32,
    pub reserved: u32,
}

impl LetterTable {
    /// Starts a table containing only the marker. `marker_mu` is the image of
    /// `#` in the working constraint monoid (a zero-like element there).
    pub fn new(resource_names: Vec<String>, marker_mu: El) -> Result<Self> {
        let n = resource_names.len();
        if n > 8 {
            return Err(SolveError::ResourceCap(n));
        }
        let full: ResSet = if n == 8 { 0xff } else { (1u8 << n) - 1 };
        Ok(LetterTable {
            names: vec!["#".to_string()],
            bar: vec![MARKER],
            rho: vec![full],
            mu: vec![marker_mu],
            base: vec![MARKER],
            lifted: BTreeMap::new(),
            resource_names,
            full,
            a_count: 1,
            reserved: 1,
        })
    }

    pub fn len(&self) -> u32 {
        self.names.len() as u32
    }
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn name(&self, l: Letter) -> &str {
        &self.names[l as usize]
    }
    pub fn bar(&self, l: Letter) -> Letter {
        self.bar[l as usize]
    }
    pub fn rho(&self, l: Letter) -> ResSet {
        self.rho[l as usize]
    }
    pub fn mu(&self, l: Letter) -> El {
        self.mu[l as usize]
    }
    pub fn base(&self, l: Letter) -> Letter {
        self.base[l as usize]
    }
    pub fn is_marker(&self, l: Letter) -> bool {
        l == MARKER
    }
    pub fn in_a(&self, l: Letter) -> bool {
        l < self.a_count
    }
    pub fn is_fresh(&self, l: Letter) -> bool {
        l >= self.reserved
    }

    /// The letter realizing the constant (a,S); `a` itself when S = rho(a).
    pub fn lift(&self, a: Letter, s: ResSet) -> Option<Letter> {
        if s == self.rho(a) {
            return Some(a);
        }
        self.lifted.get(&(a, s)).copied()
    }

    pub fn set_mu(&mut self, l: Letter, m: El) {
        self.mu[l as usize] = m;
    }

    fn push_raw(&mut self, name: String, bar: Letter, rho: ResSet, mu: El, base: Letter) -> Letter {
        let id = self.len();
        self.names.push(name);
        self.bar.push(bar);
        self.rho.push(rho);
        self.mu.push(mu);
        self.base.push(base);
        id
    }

    /// Adds a self-involuting letter (only valid while building the user
    /// alphabet; the pipeline eliminates these before solving).
    pub fn push_selfinv(&mut self, name: String, rho: ResSet, mu: El) -> Letter {
        let id = self.len();
        self.push_raw(name, id, rho, mu, id)
    }

    /// Adds a bar pair, returning (l, l̄).
    pub fn push_pair(
        &mut self,
        name: String,
        bar_name: String,
        rho: ResSet,
        mu: El,
        mu_bar: El,
    ) -> (Letter, Letter) {
        let l = self.len();
        self.push_raw(name, l + 1, rho, mu, l);
        self.push_raw(bar_name, l, rho, mu_bar, l + 1);
        (l, l + 1)
    }

    /// Registers the lifted copies (a,S) for every user letter `a` already in
    /// the table and every S with rho(a) ⊊ S ⊆ R, then freezes A.
    /// Call exactly once, after all user letters are pushed.
    pub fn close_alphabet(&mut self) -> Result<()> {
        let user_len = self.len();
        for a in 0..user_len {
            if a == MARKER {
                continue;
            }
            let ra = self.rho(a);
            let rest = self.full & !ra;
            // iterate supersets of ra: s = ra | t for t ⊆ rest
            let mut t: ResSet = 0;
            loop {
                t = t.wrapping_sub(rest) & rest;
                if t == 0 {
                    break;
                }
                let s = ra | t;
                if self.lifted.contains_key(&(a, s)) {
                    continue;
                }
                let ab = self.bar(a);
                if ab == a {
                    let id = self.push_selfinv(format!("({},{})", self.name(a), mask_str(s)), s, self.mu(a));
                    self.base[id as usize] = self.base(a);
                    self.lifted.insert((a, s), id);
                } else if let Some(&partner) = self.lifted.get(&(ab, s)) {
                    // bar lifted earlier in the scan: pair up
                    let id = self.push_raw(
                        format!("({},{})", self.name(a), mask_str(s)),
                        partner,
                        s,
                        self.mu(a),
                        self.base(a),
                    );
                    self.bar[partner as usize] = id;
                    self.lifted.insert((a, s), id);
                } else {
                    let id = self.push_raw(
                        format!("({},{})", self.name(a), mask_str(s)),
                        u32::MAX,
                        s,
                        self.mu(a),
                        self.base(a),
                    );
                    self.bar[id as usize] = id; // patched when the partner arrives
                    self.lifted.insert((a, s), id);
                }
            }
        }
        // patch deferred bar partners
        for (&(a, s), &id) in self.lifted.iter() {
            let ab = self.bar(a);
            if ab != a {
                let partner = *self
                    .lifted
                    .get(&(ab, s))
                    .ok_or_else(|| SolveError::invariant("closure missing bar partner"))?;
                self.bar[id as usize] = partner;
            }
        }
        self.a_count = self.len();
        self.reserved = self.len();
        Ok(())
    }

    /// Reserves the distinguished output letters c_1,c̄_1,…,c_k,c̄_k right after
    /// A. Their mu is set per path at finalization. Call once after closing.
    pub fn reserve_distinguished(&mut self, k: usize, unit_mu: El) -> Vec<(Letter, Letter)> {
        debug_assert_eq!(self.reserved, self.a_count);
        let mut out = Vec::with_capacity(k);
        for i in 1..=k {
            let p = self.push_pair(
                format!("c{}", i),
                format!("c{}~", i),
                self.full,
                unit_mu,
                unit_mu,
            );
            out.push(p);
        }
        self.reserved = self.len();
        out
    }

    /// Allocates a fresh compression letter pair (c, c̄).
    pub fn alloc_fresh_pair(&mut self, rho: ResSet, mu: El, mu_bar: El, budget: usize) -> Result<(Letter, Letter)> {
        if self.len() as usize + 2 > budget {
            return Err(SolveError::budget("letters", self.len() as usize + 2, budget));
        }
        let id = self.len();
        Ok(self.push_pair(format!("g{}", id), format!("g{}~", id), rho, mu, mu_bar))
    }

    /// Applies the base projection letterwise (length-preserving).
    pub fn project_base(&self, w: &[Letter]) -> Vec<Letter> {
        w.iter().map(|&l| self.base(l)).collect()
    }

    /// Copy containing only the fixed prefix (marker, A, distinguished),
    /// dropping every fresh letter. Used to rebuild tables canonically.
    pub fn clone_reserved_prefix(&self) -> LetterTable {
        let n = self.reserved as usize;
        LetterTable {
            names: self.names[..n].to_vec(),
            bar: self.bar[..n].to_vec(),
            rho: self.rho[..n].to_vec(),
            mu: self.mu[..n].to_vec(),
            base: self.base[..n].to_vec(),
            lifted: self.lifted.clone(),
            resource_names: self.resource_names.clone(),
            full: self.full,
            a_count: self.a_count,
            reserved: self.reserved,
        }
    }

    pub fn word_name(&self, w: &[Letter]) -> String {
        if w.is_empty() {
            return "ε".to_string();
        }
        w.iter().map(|&l| self.name(l)).collect::<Vec<_>>().join(" ")
    }
}

pub fn mask_str(s: ResSet) -> String {
    let mut parts = Vec::new();
    for i in 0..8 {
        if s & (1 << i) != 0 {
            parts.push(i.to_string());
        }
    }
    format!("{{{}}}", parts.join(","))
}

/// Variable identities. Resource sets and constraint images of variables
/// change along a search path, so they live in the equation state, not here.
#[derive(Clone, Debug)]
pub struct VarTable {
    names: Vec<String>,
    bar: Vec<Var>,
    pub x0_count: u32,
}

impl VarTable {
    pub fn new() -> Self {
        VarTable {
            names: Vec::new(),
            bar: Vec::new(),
            x0_count: 0,
        }
    }

    pub fn len(&self) -> u32 {
        self.names.len() as u32
    }
    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
    pub fn name(&self, x: Var) -> &str {
        &self.names[x as usize]
    }
    pub fn bar(&self, x: Var) -> Var {
        self.bar[x as usize]
    }
    pub fn is_fresh(&self, x: Var) -> bool {
        x >= self.x0_count
    }

    pub fn push_pair(&mut self, name: String, bar_name: String) -> (Var, Var) {
        let x = self.len();
        self.names.push(name);
        self.names.push(bar_name);
        self.bar.push(x + 1);
        self.bar.push(x);
        (x, x + 1)
    }

    /// Freezes the original variable set X₀. Call once after instance load.
    pub fn freeze_originals(&mut self) {
        self.x0_count = self.len();
    }

    pub fn alloc_fresh_pair(&mut self, budget: usize) -> Result<(Var, Var)> {
        if self.len() as usize + 2 > budget {
            return Err(SolveError::budget("variables", self.len() as usize + 2, budget));
        }
        let id = self.len();
        Ok(self.push_pair(format!("Z{}", id), format!("Z{}~", id)))
    }

    /// Copy containing only the original variables.
    pub fn clone_originals(&self) -> VarTable {
        let n = self.x0_count as usize;
        VarTable {
            names: self.names[..n].to_vec(),
            bar: self.bar[..n].to_vec(),
            x0_count: self.x0_count,
        }
    }
}

impl Default for VarTable {
    fn default() -> Self {
        Self::new()
    }
}

/// Involution of a constant word: reverse and bar letterwise.
pub fn inv_word(tab: &LetterTable, w: &[Letter]) -> Vec<Letter> {
    w.iter().rev().map(|&l| tab.bar(l)).collect()
}

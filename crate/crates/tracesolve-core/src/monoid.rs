//! Finite monoids with involution, given by explicit tables.
//!
//! Everything the solver tracks about constraints lives in one flat
//! representation: a multiplication table, an involution table, a unit and
//! an optional zero. User-supplied tables are validated exhaustively at
//! load time. Derived monoids (componentwise products, the dual product,
//! and the two closure-built constraint monoids below) are correct by
//! construction; `validate` is still public so tests can exercise them.

use std::collections::BTreeMap;

use crate::alphabet::{El, Letter, ResSet};
use crate::error::{Result, SolveError};

/// Past this size the n^3 associativity sweep is skipped.
const EXHAUSTIVE_CHECK_LIMIT: usize = 256;

#[derive(Clone, Debug)]
pub struct FMonoid {
    pub n: usize,
    pub unit: El,
    pub zero: Option<El>,
    mult: Vec<El>,
    inv_tab: Vec<El>,
    /// An element is zero-like when some component of it (under the product
    /// structure it was built with) is a zero. Plain monoids: zero itself.
    zero_like: Vec<bool>,
}

/// Index helper for monoids built as pairs; `pair`/`split` convert between
/// component ids and the flat id used by the combined monoid.
#[derive(Clone, Copy, Debug)]
pub struct PairIx {
    pub right_n: usize,
}

impl PairIx {
    pub fn pair(&self, x: El, y: El) -> El {
        (x as usize * self.right_n + y as usize) as El
    }

    pub fn split(&self, p: El) -> (El, El) {
        ((p as usize / self.right_n) as El, (p as usize % self.right_n) as El)
    }
}

impl FMonoid {
    pub fn mul(&self, x: El, y: El) -> El {
        self.mult[x as usize * self.n + y as usize]
    }

    pub fn inv(&self, x: El) -> El {
        self.inv_tab[x as usize]
    }

    pub fn is_zero_like(&self, x: El) -> bool {
        self.zero_like[x as usize]
    }

    /// Fold a sequence of element ids left to right; empty input gives the unit.
    pub fn eval_els(&self, els: impl IntoIterator<Item = El>) -> El {
        els.into_iter().fold(self.unit, |acc, e| self.mul(acc, e))
    }

    /// One-element monoid.
    pub fn trivial() -> FMonoid {
        FMonoid {
            n: 1,
            unit: 0,
            zero: None,
            mult: vec![0],
            inv_tab: vec![0],
            zero_like: vec![false],
        }
    }

    /// Two elements: 0 absorbing, 1 neutral. Used to give the marker a
    /// genuinely zero image independent of the user's constraint monoid.
    pub fn marker_bit() -> FMonoid {
        FMonoid {
            n: 2,
            unit: 1,
            zero: Some(0),
            mult: vec![0, 0, 0, 1],
            inv_tab: vec![0, 1],
            zero_like: vec![true, false],
        }
    }

    /// Build from explicit tables and validate them.
    pub fn from_tables(
        n: usize,
        unit: El,
        zero: Option<El>,
        mult: Vec<El>,
        inv_tab: Vec<El>,
    ) -> Result<FMonoid> {
        if n == 0 {
            return Err(SolveError::instance("monoid must have at least one element"));
        }
        if n > El::MAX as usize {
            return Err(SolveError::budget("monoid size", n, El::MAX as usize));
        }
        if mult.len() != n * n {
            return Err(SolveError::instance(format!(
                "multiplication table has {} entries, expected {}",
                mult.len(),
                n * n
            )));
        }
        if inv_tab.len() != n {
            return Err(SolveError::instance(format!(
                "involution table has {} entries, expected {}",
                inv_tab.len(),
                n
            )));
        }
        let zero_like = (0..n as El).map(|x| Some(x) == zero).collect();
        let m = FMonoid { n, unit, zero, mult, inv_tab, zero_like };
        m.validate()?;
        Ok(m)
    }

    /// Exhaustive law check: unit, zero, involution, and (for n <= 256)
    /// associativity.
    pub fn validate(&self) -> Result<()> {
        let n = self.n as El;
        let bad = |msg: String| Err(SolveError::instance(msg));
        if self.unit as usize >= self.n {
            return bad(format!("unit id {} out of range", self.unit));
        }
        if let Some(z) = self.zero {
            if z as usize >= self.n {
                return bad(format!("zero id {z} out of range"));
            }
        }
        for (i, &e) in self.mult.iter().enumerate() {
            if e as usize >= self.n {
                return bad(format!("multiplication entry {i} is {e}, out of range"));
            }
        }
        for (i, &e) in self.inv_tab.iter().enumerate() {
            if e as usize >= self.n {
                return bad(format!("involution entry {i} is {e}, out of range"));
            }
        }
        for x in 0..n {
            if self.mul(self.unit, x) != x || self.mul(x, self.unit) != x {
                return bad(format!("unit law fails at element {x}"));
            }
            if let Some(z) = self.zero {
                if self.mul(z, x) != z || self.mul(x, z) != z {
                    return bad(format!("zero law fails at element {x}"));
                }
            }
            if self.inv(self.inv(x)) != x {
                return bad(format!("involution is not involutive at element {x}"));
            }
        }
        if self.inv(self.unit) != self.unit {
            return bad("involution does not fix the unit".into());
        }
        for x in 0..n {
            for y in 0..n {
                if self.inv(self.mul(x, y)) != self.mul(self.inv(y), self.inv(x)) {
                    return bad(format!("involution is not an anti-automorphism at ({x},{y})"));
                }
            }
        }
        if self.n <= EXHAUSTIVE_CHECK_LIMIT {
            for x in 0..n {
                for y in 0..n {
                    let xy = self.mul(x, y);
                    for z in 0..n {
                        if self.mul(xy, z) != self.mul(x, self.mul(y, z)) {
                            return bad(format!("multiplication not associative at ({x},{y},{z})"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Componentwise product. The result has a true zero only when both
    /// factors do; pairs with a single zero component are tagged zero-like.
    pub fn product(a: &FMonoid, b: &FMonoid, budget: usize) -> Result<(FMonoid, PairIx)> {
        let n = a.n * b.n;
        if n > budget || n > El::MAX as usize {
            return Err(SolveError::budget("monoid size", n, budget.min(El::MAX as usize)));
        }
        let ix = PairIx { right_n: b.n };
        let mut mult = vec![0; n * n];
        for x1 in 0..a.n as El {
            for y1 in 0..b.n as El {
                for x2 in 0..a.n as El {
                    for y2 in 0..b.n as El {
                        let p = ix.pair(x1, y1) as usize;
                        let q = ix.pair(x2, y2) as usize;
                        mult[p * n + q] = ix.pair(a.mul(x1, x2), b.mul(y1, y2));
                    }
                }
            }
        }
        let mut inv_tab = vec![0; n];
        let mut zero_like = vec![false; n];
        for x in 0..a.n as El {
            for y in 0..b.n as El {
                let p = ix.pair(x, y) as usize;
                inv_tab[p] = ix.pair(a.inv(x), b.inv(y));
                zero_like[p] = a.is_zero_like(x) || b.is_zero_like(y);
            }
        }
        let m = FMonoid {
            n,
            unit: ix.pair(a.unit, b.unit),
            zero: match (a.zero, b.zero) {
                (Some(za), Some(zb)) => Some(ix.pair(za, zb)),
                _ => None,
            },
            mult,
            inv_tab,
            zero_like,
        };
        Ok((m, ix))
    }

    /// Pairs (x, y) with (x, y)(x', y') = (xx', y'y) and involution
    /// (x, y) mapped to (y, x). Gives every plain monoid an involution;
    /// the first projection stays a homomorphism.
    pub fn dual(a: &FMonoid, budget: usize) -> Result<(FMonoid, PairIx)> {
        let n = a.n * a.n;
        if n > budget || n > El::MAX as usize {
            return Err(SolveError::budget("monoid size", n, budget.min(El::MAX as usize)));
        }
        let ix = PairIx { right_n: a.n };
        let mut mult = vec![0; n * n];
        for x1 in 0..a.n as El {
            for y1 in 0..a.n as El {
                for x2 in 0..a.n as El {
                    for y2 in 0..a.n as El {
                        let p = ix.pair(x1, y1) as usize;
                        let q = ix.pair(x2, y2) as usize;
                        mult[p * n + q] = ix.pair(a.mul(x1, x2), a.mul(y2, y1));
                    }
                }
            }
        }
        let mut inv_tab = vec![0; n];
        let mut zero_like = vec![false; n];
        for x in 0..a.n as El {
            for y in 0..a.n as El {
                let p = ix.pair(x, y) as usize;
                inv_tab[p] = ix.pair(y, x);
                zero_like[p] = a.is_zero_like(x) || a.is_zero_like(y);
            }
        }
        let m = FMonoid {
            n,
            unit: ix.pair(a.unit, a.unit),
            zero: a.zero.map(|z| ix.pair(z, z)),
            mult,
            inv_tab,
            zero_like,
        };
        Ok((m, ix))
    }
}

/// Images of independent (or type-related) letters must commute in the
/// target, otherwise evaluation would depend on the chosen representative.
pub fn check_commuting_images(
    m: &FMonoid,
    items: &[(ResSet, El)],
    also_commutes: &impl Fn(usize, usize) -> bool,
    name: &impl Fn(usize) -> String,
) -> Result<()> {
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            let commute = items[i].0 & items[j].0 == 0 || also_commutes(i, j);
            if commute && m.mul(items[i].1, items[j].1) != m.mul(items[j].1, items[i].1) {
                return Err(SolveError::instance(format!(
                    "images of {} and {} do not commute although the letters do",
                    name(i),
                    name(j)
                )));
            }
        }
    }
    Ok(())
}

/// image(bar x) must equal inv(image(x)).
pub fn check_involuting_images(
    m: &FMonoid,
    pairs: &[(El, El)],
    name: &impl Fn(usize) -> String,
) -> Result<()> {
    for (i, &(im, im_bar)) in pairs.iter().enumerate() {
        if m.inv(im) != im_bar {
            return Err(SolveError::instance(format!(
                "image of the involution partner of {} is not the involuted image",
                name(i)
            )));
        }
    }
    Ok(())
}

/// A constraint monoid materialized from generator images by closure.
/// Element id 0 is the zero, id 1 the unit; `elems` keeps the structured
/// form of every nonzero element for predicates and candidate enumeration.
#[derive(Clone, Debug)]
pub struct ClosedMonoid<E> {
    pub m: FMonoid,
    pub image: BTreeMap<Letter, El>,
    pub elems: Vec<Option<E>>,
}

/// Close generator elements under a partial product (`None` = zero) and
/// materialize full tables. The generator set must be involution-closed.
fn close_monoid<E: Clone + Ord>(
    gens: &[(Letter, E)],
    mul_e: &impl Fn(&E, &E) -> Option<E>,
    inv_e: &impl Fn(&E) -> E,
    unit: E,
    budget: usize,
) -> Result<ClosedMonoid<E>> {
    let mut elems: Vec<Option<E>> = vec![None, Some(unit.clone())];
    let mut index: BTreeMap<E, El> = BTreeMap::new();
    index.insert(unit, 1);
    let mut image = BTreeMap::new();
    let intern = |e: Option<E>,
                      elems: &mut Vec<Option<E>>,
                      index: &mut BTreeMap<E, El>|
     -> Result<El> {
        let Some(e) = e else { return Ok(0) };
        if let Some(&id) = index.get(&e) {
            return Ok(id);
        }
        if elems.len() >= budget {
            return Err(SolveError::budget("constraint monoid closure", elems.len() + 1, budget));
        }
        let id = elems.len() as El;
        index.insert(e.clone(), id);
        elems.push(Some(e));
        Ok(id)
    };
    for (l, e) in gens {
        let id = intern(Some(e.clone()), &mut elems, &mut index)?;
        image.insert(*l, id);
    }

    // Fixpoint: multiply every known pair; products may mint new elements.
    let mut table: BTreeMap<(El, El), El> = BTreeMap::new();
    let mut frontier: Vec<El> = (0..elems.len() as El).collect();
    while let Some(x) = frontier.pop() {
        let mut y = 0;
        while (y as usize) < elems.len() {
            for (a, b) in [(x, y), (y, x)] {
                if table.contains_key(&(a, b)) {
                    continue;
                }
                let prod = match (&elems[a as usize], &elems[b as usize]) {
                    (Some(ea), Some(eb)) => mul_e(ea, eb),
                    _ => None,
                };
                let p = intern(prod, &mut elems, &mut index)?;
                table.insert((a, b), p);
                if p as usize == elems.len() - 1 && !frontier.contains(&p) {
                    frontier.push(p);
                }
            }
            y += 1;
        }
    }

    let n = elems.len();
    let mut mult = vec![0; n * n];
    for ((x, y), p) in &table {
        mult[*x as usize * n + *y as usize] = *p;
    }
    // The table fixpoint can terminate with pairs never visited for late
    // elements; fill the remainder directly (all factors are known now).
    for x in 0..n {
        for y in 0..n {
            if !table.contains_key(&(x as El, y as El)) {
                let prod = match (&elems[x], &elems[y]) {
                    (Some(ea), Some(eb)) => mul_e(ea, eb),
                    _ => None,
                };
                let p = intern(prod, &mut elems, &mut index)?;
                if elems.len() != n {
                    return Err(SolveError::invariant(
                        "constraint monoid closure was not closed under products",
                    ));
                }
                mult[x * n + y] = p;
            }
        }
    }
    let mut inv_tab = vec![0; n];
    for x in 1..n {
        let e = elems[x].as_ref().unwrap();
        let bar = inv_e(e);
        let Some(&id) = index.get(&bar) else {
            return Err(SolveError::invariant(
                "constraint monoid closure is not involution-closed",
            ));
        };
        inv_tab[x] = id;
    }
    let zero_like = (0..n).map(|x| x == 0).collect();
    let m = FMonoid { n, unit: 1, zero: Some(0), mult, inv_tab, zero_like };
    Ok(ClosedMonoid { m, image, elems })
}

/// Element of the reduced-trace monoid: the minimal letters, the resource
/// support, and the maximal letters of a trace that stays reduced.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SeamElem {
    pub mins: Vec<Letter>,
    pub supp: ResSet,
    pub maxs: Vec<Letter>,
}

fn sorted_dedup(mut v: Vec<Letter>) -> Vec<Letter> {
    v.sort_unstable();
    v.dedup();
    v
}

/// Tracks whether a trace is in reduced normal form: the product is zero as
/// soon as some maximal letter of the left part meets its involution partner
/// among the minimal letters of the right part (those two then form a factor).
pub fn build_reduction_monoid(
    letters: &[Letter],
    rho: &impl Fn(Letter) -> ResSet,
    bar: &impl Fn(Letter) -> Letter,
    budget: usize,
) -> Result<ClosedMonoid<SeamElem>> {
    let gens: Vec<(Letter, SeamElem)> = letters
        .iter()
        .map(|&l| (l, SeamElem { mins: vec![l], supp: rho(l), maxs: vec![l] }))
        .collect();
    let mul_e = |x: &SeamElem, y: &SeamElem| -> Option<SeamElem> {
        if x.maxs.iter().any(|&r| y.mins.contains(&bar(r))) {
            return None;
        }
        let mut mins = x.mins.clone();
        mins.extend(y.mins.iter().copied().filter(|&p| rho(p) & x.supp == 0));
        let mut maxs = y.maxs.clone();
        maxs.extend(x.maxs.iter().copied().filter(|&r| rho(r) & y.supp == 0));
        Some(SeamElem {
            mins: sorted_dedup(mins),
            supp: x.supp | y.supp,
            maxs: sorted_dedup(maxs),
        })
    };
    let inv_e = |x: &SeamElem| SeamElem {
        mins: sorted_dedup(x.maxs.iter().map(|&l| bar(l)).collect()),
        supp: x.supp,
        maxs: sorted_dedup(x.mins.iter().map(|&l| bar(l)).collect()),
    };
    let unit = SeamElem { mins: vec![], supp: 0, maxs: vec![] };
    close_monoid(&gens, &mul_e, &inv_e, unit, budget)
}

/// Element of the pairing monoid: every letter occurrence together with the
/// resources of everything strictly below it (`los`) respectively strictly
/// above it (`his`). That is exactly the data needed to decide, at a seam,
/// whether a left occurrence is covered by a right occurrence: letters can
/// slide next to each other iff nothing ordered between them survives, and
/// chains between the two parts are visible in these resource footprints.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct CoverElem {
    pub los: Vec<(Letter, ResSet)>,
    pub his: Vec<(Letter, ResSet)>,
    pub supp: ResSet,
}

fn sorted_dedup_pairs(mut v: Vec<(Letter, ResSet)>) -> Vec<(Letter, ResSet)> {
    v.sort_unstable();
    v.dedup();
    v
}

/// Constraint monoid for alphabets where certain letters come in opening /
/// closing pairs that must stay glued: an opener may only be covered by its
/// own closer, a closer may only cover its own opener. The product is zero
/// once a violating covering pair exists; minimal closers and maximal
/// openers remain visible on the element for the boundary checks.
pub fn build_pairing_monoid(
    letters: &[Letter],
    rho: &impl Fn(Letter) -> ResSet,
    bar: &impl Fn(Letter) -> Letter,
    opener: &impl Fn(Letter) -> bool,
    closer: &impl Fn(Letter) -> bool,
    budget: usize,
) -> Result<ClosedMonoid<CoverElem>> {
    let gens: Vec<(Letter, CoverElem)> = letters
        .iter()
        .map(|&l| (l, CoverElem { los: vec![(l, 0)], his: vec![(l, 0)], supp: rho(l) }))
        .collect();
    let mul_e = |x: &CoverElem, y: &CoverElem| -> Option<CoverElem> {
        for &(a, up) in &x.his {
            for &(b, down) in &y.los {
                if rho(a) & rho(b) == 0 {
                    continue;
                }
                // b covers a in the concatenation iff no chain from above a
                // reaches b or below, and nothing below b reaches back to a.
                let coverable = (up | rho(a)) & down == 0 && up & rho(b) == 0;
                let mismatched = (opener(a) && b != bar(a)) || (closer(b) && a != bar(b));
                if coverable && mismatched {
                    return None;
                }
            }
        }
        let mut los = x.los.clone();
        for &(b, down) in &y.los {
            let mut extra = 0;
            for &(e, up) in &x.his {
                if (rho(e) | up) & (down | rho(b)) != 0 {
                    extra |= rho(e);
                }
            }
            los.push((b, down | extra));
        }
        let mut his = y.his.clone();
        for &(a, up) in &x.his {
            let mut extra = 0;
            for &(b, down) in &y.los {
                if (rho(b) | down) & (up | rho(a)) != 0 {
                    extra |= rho(b);
                }
            }
            his.push((a, up | extra));
        }
        Some(CoverElem {
            los: sorted_dedup_pairs(los),
            his: sorted_dedup_pairs(his),
            supp: x.supp | y.supp,
        })
    };
    let inv_e = |x: &CoverElem| CoverElem {
        los: sorted_dedup_pairs(x.his.iter().map(|&(l, t)| (bar(l), t)).collect()),
        his: sorted_dedup_pairs(x.los.iter().map(|&(l, t)| (bar(l), t)).collect()),
        supp: x.supp,
    };
    let unit = CoverElem { los: vec![], his: vec![], supp: 0 };
    close_monoid(&gens, &mul_e, &inv_e, unit, budget)
}

/// A trace is a product of glued opener/closer pairs (plus unsplit letters)
/// iff its image is nonzero, no closer is minimal and no opener is maximal.
pub fn pairing_accepts(
    e: Option<&CoverElem>,
    opener: &impl Fn(Letter) -> bool,
    closer: &impl Fn(Letter) -> bool,
) -> bool {
    match e {
        None => false,
        Some(e) => {
            !e.los.iter().any(|&(b, down)| down == 0 && closer(b))
                && !e.his.iter().any(|&(a, up)| up == 0 && opener(a))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphabet::LetterTable;
    use crate::trace::{is_reduced, letter_dep};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn two_el_with_zero() -> FMonoid {
        FMonoid::from_tables(2, 1, Some(0), vec![0, 0, 0, 1], vec![0, 1]).unwrap()
    }

    #[test]
    fn trivial_absorbs_everything_into_unit() {
        let m = FMonoid::trivial();
        assert_eq!(m.eval_els([0, 0, 0]), 0);
        assert_eq!(m.eval_els([]), m.unit);
    }

    #[test]
    fn zero_absorbs_in_two_element_monoid() {
        // images: # -> 0, a -> 1; the word #a# evaluates to 0
        let m = two_el_with_zero();
        assert_eq!(m.eval_els([0, 1, 0]), 0);
        assert_eq!(m.eval_els([1, 1]), 1);
        assert!(m.is_zero_like(0));
        assert!(!m.is_zero_like(1));
    }

    #[test]
    fn bad_tables_are_rejected() {
        // x*x = unit for both elements, but inv swaps: anti-automorphism fails
        // only if tables are inconsistent; build a non-associative table instead.
        let r = FMonoid::from_tables(
            3,
            0,
            None,
            // 1*1=2, (1*1)*2=2*2=1, 1*(1*2)=1*1=2: not associative
            vec![0, 1, 2, 1, 2, 1, 2, 1, 1],
            vec![0, 1, 2],
        );
        assert!(r.is_err());
        let r = FMonoid::from_tables(2, 1, None, vec![1; 4], vec![0, 1]);
        assert!(r.is_err(), "unit law violation must be rejected");
        let r = FMonoid::from_tables(2, 1, None, vec![0, 0, 0, 1], vec![1, 0]);
        assert!(r.is_err(), "involution must fix the unit");
    }

    #[test]
    fn product_pairs_componentwise() {
        let m = two_el_with_zero();
        let (p, ix) = FMonoid::product(&FMonoid::trivial(), &m, 64).unwrap();
        // {1} x N is N elementwise
        for x in 0..m.n as El {
            for y in 0..m.n as El {
                assert_eq!(p.mul(ix.pair(0, x), ix.pair(0, y)), ix.pair(0, m.mul(x, y)));
            }
        }
        assert_eq!(p.unit, ix.pair(0, m.unit));
        p.validate().unwrap();

        // only one factor has a zero: no true zero, but zero-like pairs
        let (q, qx) = FMonoid::product(&m, &FMonoid::trivial(), 64).unwrap();
        assert_eq!(q.zero, None);
        assert!(q.is_zero_like(qx.pair(0, 0)));
        assert!(!q.is_zero_like(qx.pair(1, 0)));
    }

    #[test]
    fn dual_product_laws() {
        // z*z = z, z absorbing on its side
        let m = two_el_with_zero();
        let (d, ix) = FMonoid::dual(&m, 64).unwrap();
        d.validate().unwrap();
        // (z,1)*(1,z) = (z*1, (1*z reversed-side)) = (z,z)
        let z = 0;
        let one = 1;
        assert_eq!(d.mul(ix.pair(z, one), ix.pair(one, z)), ix.pair(z, z));
        assert_eq!(d.inv(ix.pair(z, one)), ix.pair(one, z));
        assert_eq!(d.unit, ix.pair(one, one));
    }

    /// Alphabet a,ā on one resource; the reduced traces are a^k and ā^k, so
    /// the closure is unit, zero, and the two one-letter seam elements.
    #[test]
    fn reduction_monoid_free_group_closure_is_small() {
        let mut tab = LetterTable::new(vec!["r".into()], 0).unwrap();
        let (a, abar) = tab.push_pair("a".into(), "a~".into(), 0b1, 0, 0);
        let nl = build_reduction_monoid(
            &[a, abar],
            &|l| tab.rho(l),
            &|l| tab.bar(l),
            1024,
        )
        .unwrap();
        assert_eq!(nl.m.n, 4);
        assert_eq!(nl.m.eval_els([nl.image[&a], nl.image[&abar]]), 0);
        assert_ne!(nl.m.eval_els([nl.image[&a], nl.image[&a]]), 0);
    }

    #[test]
    fn reduction_monoid_merges_independent_letters() {
        let mut tab = LetterTable::new(vec!["r".into(), "s".into()], 0).unwrap();
        let (a, abar) = tab.push_pair("a".into(), "a~".into(), 0b01, 0, 0);
        let (b, _bbar) = tab.push_pair("b".into(), "b~".into(), 0b10, 0, 0);
        let nl = build_reduction_monoid(
            &[a, abar, b, tab.bar(b)],
            &|l| tab.rho(l),
            &|l| tab.bar(l),
            1024,
        )
        .unwrap();
        let ab = nl.m.eval_els([nl.image[&a], nl.image[&b]]);
        let e = nl.elems[ab as usize].as_ref().unwrap();
        assert_eq!(e.mins, sorted_dedup(vec![a, b]));
        assert_eq!(e.maxs, sorted_dedup(vec![a, b]));
        assert_eq!(e.supp, 0b11);
        assert_eq!(nl.m.mul(nl.m.unit, nl.image[&a]), nl.image[&a]);
    }

    #[test]
    fn reduction_monoid_agrees_with_is_reduced() {
        let mut tab = LetterTable::new(vec!["r".into(), "s".into()], 0).unwrap();
        let (a, _) = tab.push_pair("a".into(), "a~".into(), 0b01, 0, 0);
        let (b, _) = tab.push_pair("b".into(), "b~".into(), 0b10, 0, 0);
        let (c, _) = tab.push_pair("c".into(), "c~".into(), 0b11, 0, 0);
        let letters: Vec<Letter> =
            [a, b, c].iter().flat_map(|&l| [l, tab.bar(l)]).collect();
        let nl = build_reduction_monoid(
            &letters,
            &|l| tab.rho(l),
            &|l| tab.bar(l),
            4096,
        )
        .unwrap();
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..300 {
            let len = rng.random_range(0..=8);
            let w: Vec<Letter> =
                (0..len).map(|_| letters[rng.random_range(0..letters.len())]).collect();
            let image = nl.m.eval_els(w.iter().map(|l| nl.image[l]));
            assert_eq!(
                image != 0,
                is_reduced(&w, &tab),
                "word {:?}",
                tab.word_name(&w)
            );
        }
    }

    #[test]
    fn closure_budget_overflow_is_reported() {
        let mut tab = LetterTable::new(vec!["r".into(), "s".into()], 0).unwrap();
        let (a, abar) = tab.push_pair("a".into(), "a~".into(), 0b01, 0, 0);
        let (b, bbar) = tab.push_pair("b".into(), "b~".into(), 0b10, 0, 0);
        let r = build_reduction_monoid(
            &[a, abar, b, bbar],
            &|l| tab.rho(l),
            &|l| tab.bar(l),
            3,
        );
        assert!(matches!(r, Err(SolveError::Budget { .. })));
    }

    /// Pairing-monoid fixture: split letters a, b, c with chosen resources.
    /// Returns (table, opener letters, closer letters).
    fn pairing_fixture(rhos: [ResSet; 3]) -> (LetterTable, Vec<Letter>, Vec<Letter>) {
        let mut tab = LetterTable::new(vec!["r".into(), "s".into()], 0).unwrap();
        let mut plus = vec![];
        let mut minus = vec![];
        for (name, rho) in ["a", "b", "c"].iter().zip(rhos) {
            let (p, m) = tab.push_pair(format!("{name}+"), format!("{name}-"), rho, 0, 0);
            plus.push(p);
            minus.push(m);
        }
        (tab, plus, minus)
    }

    fn eval_pairing(
        n: &ClosedMonoid<CoverElem>,
        w: &[Letter],
    ) -> El {
        n.m.eval_els(w.iter().map(|l| n.image[l]))
    }

    #[test]
    fn pairing_monoid_accepts_glued_pairs_and_rejects_torn_ones() {
        // a and b share a resource: a+ a- b+ b- is a valid pairing,
        // a+ b+ ... tears the a-pair open
        let (tab, p, m) = pairing_fixture([0b01, 0b01, 0b10]);
        let letters: Vec<Letter> = p.iter().chain(&m).copied().collect();
        let opener = |l: Letter| p.contains(&l);
        let closer = |l: Letter| m.contains(&l);
        let n = build_pairing_monoid(
            &letters,
            &|l| tab.rho(l),
            &|l| tab.bar(l),
            &opener,
            &closer,
            4096,
        )
        .unwrap();
        let good = eval_pairing(&n, &[p[0], m[0], p[1], m[1]]);
        assert_ne!(good, 0);
        assert!(pairing_accepts(n.elems[good as usize].as_ref(), &opener, &closer));
        assert_eq!(eval_pairing(&n, &[p[0], p[1]]), 0);
        // independent letters interleave freely: a+ c+ a- c- stays a pairing
        let interleaved = eval_pairing(&n, &[p[0], p[2], m[0], m[2]]);
        assert_ne!(interleaved, 0);
        assert!(pairing_accepts(n.elems[interleaved as usize].as_ref(), &opener, &closer));
    }

    #[test]
    fn pairing_monoid_sees_covers_hidden_behind_independent_letters() {
        // rho(a)={r}, rho(c)={s}, rho(b)={r,s}: in a+ c+ c- b+ the letter b+
        // covers a+ because the c-pair is independent of a; every
        // representative must evaluate to zero.
        let (tab, p, m) = pairing_fixture([0b01, 0b11, 0b10]);
        let letters: Vec<Letter> = p.iter().chain(&m).copied().collect();
        let n = build_pairing_monoid(
            &letters,
            &|l| tab.rho(l),
            &|l| tab.bar(l),
            &|l| p.contains(&l),
            &|l| m.contains(&l),
            4096,
        )
        .unwrap();
        let w1 = [p[0], p[2], m[2], p[1], m[1]];
        let w2 = [p[2], m[2], p[0], p[1], m[1]];
        assert_eq!(eval_pairing(&n, &w1), 0);
        assert_eq!(eval_pairing(&n, &w2), 0);
    }

    #[test]
    fn pairing_monoid_boundary_checks() {
        let (tab, p, m) = pairing_fixture([0b01, 0b01, 0b10]);
        let letters: Vec<Letter> = p.iter().chain(&m).copied().collect();
        let opener = |l: Letter| p.contains(&l);
        let closer = |l: Letter| m.contains(&l);
        let n = build_pairing_monoid(
            &letters,
            &|l| tab.rho(l),
            &|l| tab.bar(l),
            &opener,
            &closer,
            4096,
        )
        .unwrap();
        // a lone opener or closer is nonzero but not accepted
        let lone = eval_pairing(&n, &[p[0]]);
        assert_ne!(lone, 0);
        assert!(!pairing_accepts(n.elems[lone as usize].as_ref(), &opener, &closer));
        let lone = eval_pairing(&n, &[m[0]]);
        assert!(!pairing_accepts(n.elems[lone as usize].as_ref(), &opener, &closer));
        assert!(!pairing_accepts(None, &opener, &closer));
    }

    #[test]
    fn pairing_monoid_is_representative_independent() {
        // random words, all representatives of the same trace agree
        let (tab, p, m) = pairing_fixture([0b01, 0b11, 0b10]);
        let letters: Vec<Letter> = p.iter().chain(&m).copied().collect();
        let n = build_pairing_monoid(
            &letters,
            &|l| tab.rho(l),
            &|l| tab.bar(l),
            &|l| p.contains(&l),
            &|l| m.contains(&l),
            4096,
        )
        .unwrap();
        let dep = letter_dep(&tab);
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..200 {
            let len = rng.random_range(0..=7);
            let w: Vec<Letter> =
                (0..len).map(|_| letters[rng.random_range(0..letters.len())]).collect();
            let base = eval_pairing(&n, &w);
            for cls in crate::trace::class_bfs(&w, &dep, &[], 2000).unwrap() {
                assert_eq!(eval_pairing(&n, &cls), base, "representatives disagree");
            }
        }
    }
}

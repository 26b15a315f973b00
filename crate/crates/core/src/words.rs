//! Reduced words in `G = H_1 * ... * H_r * F_q`, the free product length, and
//! the boundary `∂(G, O)` realized as lazily extended infinite reduced words.
//!
//! A [`Word`] is a sequence of syllables: free letters `b_j^{±1}` and
//! non-trivial factor elements. Reduced means no `b b^{-1}` pair and no two
//! adjacent syllables from the same factor. Its free product length is the
//! syllable count.
//!
//! A [`Ray`] is pull-based: asking for a prefix of length `n` drives its
//! source until at least `n` syllables are materialized, checking at every
//! step that the new prefix extends the old one.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::factors::{FactorElement, FactorError, FactorGroup, FactorSystem};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WordError {
    #[error("cannot parse `{token}`: {reason}")]
    Parse { token: String, reason: String },
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error("`{0}` is elliptic or trivial and has no boundary limit")]
    Elliptic(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RayError {
    #[error("ray stagnated at {length} syllables: {reason}")]
    Stagnation { length: usize, reason: String },
    #[error("ray extension is not nested: new prefix disagrees at syllable {position}")]
    NotNested { position: usize },
    #[error("boundary image did not stabilize (probed {probe_depth} syllables of the source ray)")]
    Unstable { probe_depth: usize },
    #[error(transparent)]
    Word(#[from] WordError),
}

/// A free letter or a non-trivial factor element.
///
/// The derived order (free letters by index with the positive letter first,
/// then factor elements) is the lexicographic order used for tie-breaks.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Syllable {
    Free { generator: usize, inverse: bool },
    Factor(FactorElement),
}

impl Syllable {
    pub fn free(generator: usize) -> Self {
        Syllable::Free {
            generator,
            inverse: false,
        }
    }

    pub fn free_inverse(generator: usize) -> Self {
        Syllable::Free {
            generator,
            inverse: true,
        }
    }

    pub fn is_free(&self) -> bool {
        matches!(self, Syllable::Free { .. })
    }
}

/// A word in the free product; reduced whenever produced by [`FreeProduct`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word(Vec<Syllable>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    /// Wraps syllables without reducing them; callers must know they are reduced.
    pub fn from_reduced(syllables: Vec<Syllable>) -> Self {
        Word(syllables)
    }

    pub fn syllables(&self) -> &[Syllable] {
        &self.0
    }

    pub fn into_syllables(self) -> Vec<Syllable> {
        self.0
    }

    /// Free product length.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Syllable> {
        self.0.iter()
    }

    pub fn prefix(&self, n: usize) -> Word {
        Word(self.0[..n.min(self.0.len())].to_vec())
    }

    pub fn starts_with(&self, other: &Word) -> bool {
        self.0.starts_with(&other.0)
    }
}

/// Stack-based reducer that also counts elementary reduction steps.
struct Reducer<'a> {
    factors: &'a FactorSystem,
    stack: Vec<Syllable>,
    steps: usize,
}

impl<'a> Reducer<'a> {
    fn new(factors: &'a FactorSystem, start: Vec<Syllable>) -> Self {
        Reducer {
            factors,
            stack: start,
            steps: 0,
        }
    }

    fn push(&mut self, s: Syllable) {
        match (self.stack.last(), &s) {
            (
                Some(Syllable::Free {
                    generator: g,
                    inverse: i,
                }),
                Syllable::Free {
                    generator: h,
                    inverse: j,
                },
            ) if g == h && i != j => {
                self.stack.pop();
                self.steps += 1;
            }
            (Some(Syllable::Factor(x)), Syllable::Factor(y)) if x.factor == y.factor => {
                let product = self
                    .factors
                    .mul(x, y)
                    .expect("syllables of a known factor multiply");
                self.stack.pop();
                self.steps += 1;
                match product {
                    Some(z) => self.stack.push(Syllable::Factor(z)),
                    // merged to the identity, then deleted
                    None => self.steps += 1,
                }
            }
            _ => self.stack.push(s),
        }
    }
}

/// The decomposition `G = H_1 * ... * H_r * F_q` with names for the free letters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreeProduct {
    factors: FactorSystem,
    free_names: Vec<String>,
}

impl FreeProduct {
    pub fn new(factors: FactorSystem, free_names: Vec<String>) -> Result<Self, WordError> {
        for n in &free_names {
            let ok = n.chars().next().is_some_and(|c| c.is_ascii_lowercase())
                && n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            if !ok {
                return Err(WordError::Parse {
                    token: n.clone(),
                    reason: "free generator names start with a lowercase letter".into(),
                });
            }
        }
        Ok(FreeProduct { factors, free_names })
    }

    /// Free generators named `b1, ..., bq`.
    pub fn with_rank(factors: FactorSystem, free_rank: usize) -> Self {
        let names = (1..=free_rank).map(|i| format!("b{i}")).collect();
        FreeProduct {
            factors,
            free_names: names,
        }
    }

    pub fn factors(&self) -> &FactorSystem {
        &self.factors
    }

    pub fn factor(&self, id: usize) -> Result<&FactorGroup, FactorError> {
        self.factors.get(id)
    }

    pub fn free_rank(&self) -> usize {
        self.free_names.len()
    }

    pub fn free_names(&self) -> &[String] {
        &self.free_names
    }

    /// Every generator of `G` as a one-syllable word: free letters, then each
    /// factor's generators.
    pub fn generators(&self) -> Vec<Word> {
        let mut out: Vec<Word> = (0..self.free_rank()).map(|i| Word(vec![Syllable::free(i)])).collect();
        for f in self.factors.iter() {
            out.extend(f.generators().into_iter().map(|g| Word(vec![Syllable::Factor(g)])));
        }
        out
    }

    /// The unique reduced word equal to the product of `raw`.
    pub fn reduce(&self, raw: &[Syllable]) -> Word {
        let mut r = Reducer::new(&self.factors, Vec::with_capacity(raw.len()));
        for s in raw {
            r.push(s.clone());
        }
        Word(r.stack)
    }

    /// Reduced `u·v` together with the number of elementary reduction steps at
    /// the junction (a cancelled pair or a merge counts one; a merge that
    /// yields the identity and is then deleted counts two).
    pub fn concat(&self, u: &Word, v: &Word) -> (Word, usize) {
        let mut r = Reducer::new(&self.factors, u.0.clone());
        for s in &v.0 {
            r.push(s.clone());
        }
        (Word(r.stack), r.steps)
    }

    pub fn mul(&self, u: &Word, v: &Word) -> Word {
        self.concat(u, v).0
    }

    pub fn product<'w>(&self, words: impl IntoIterator<Item = &'w Word>) -> Word {
        let mut r = Reducer::new(&self.factors, Vec::new());
        for w in words {
            for s in &w.0 {
                r.push(s.clone());
            }
        }
        Word(r.stack)
    }

    pub fn inverse_syllable(&self, s: &Syllable) -> Syllable {
        match s {
            Syllable::Free { generator, inverse } => Syllable::Free {
                generator: *generator,
                inverse: !inverse,
            },
            Syllable::Factor(x) => Syllable::Factor(
                self.factors
                    .inverse(x)
                    .expect("syllables of a known factor invert"),
            ),
        }
    }

    pub fn inverse(&self, w: &Word) -> Word {
        Word(w.0.iter().rev().map(|s| self.inverse_syllable(s)).collect())
    }

    pub fn is_reduced(&self, w: &Word) -> bool {
        self.reduce(&w.0) == *w
    }

    /// `w = conjugator · core · conjugator⁻¹` with `core` cyclically reduced.
    pub fn cyclic_reduce(&self, w: &Word) -> (Word, Word) {
        let mut core = self.reduce(&w.0).0;
        let mut conjugator = Vec::new();
        while core.len() >= 2 {
            let first = core[0].clone();
            let last = core[core.len() - 1].clone();
            match (&first, &last) {
                (
                    Syllable::Free {
                        generator: g,
                        inverse: i,
                    },
                    Syllable::Free {
                        generator: h,
                        inverse: j,
                    },
                ) if g == h && i != j => {
                    conjugator.push(first);
                    core = core[1..core.len() - 1].to_vec();
                }
                (Syllable::Factor(x), Syllable::Factor(y)) if x.factor == y.factor => {
                    // x M y = x (M · yx) x⁻¹
                    conjugator.push(first.clone());
                    let mut middle = core[1..core.len() - 1].to_vec();
                    if let Some(yx) = self.factors.mul(y, x).expect("same factor") {
                        middle.push(Syllable::Factor(yx));
                    }
                    core = self.reduce(&middle).0;
                    break;
                }
                _ => break,
            }
        }
        (Word(core), Word(conjugator))
    }

    /// Hyperbolic iff the cyclically reduced core has length ≥ 2 or is a
    /// single free letter.
    pub fn is_hyperbolic(&self, w: &Word) -> bool {
        let (core, _) = self.cyclic_reduce(w);
        core.len() >= 2 || core.0.first().is_some_and(Syllable::is_free)
    }

    /// Parses whitespace-separated syllables: `b1`, `B1` (inverse), `b1^-2`,
    /// and factor elements `a^3@1`, `a2.a1@2`. `1` (or nothing) is the empty word.
    pub fn parse_word(&self, text: &str) -> Result<Word, WordError> {
        let mut raw = Vec::new();
        for token in text.split_whitespace() {
            if token == "1" {
                continue;
            }
            raw.extend(self.parse_token(token)?);
        }
        Ok(self.reduce(&raw))
    }

    fn parse_token(&self, token: &str) -> Result<Vec<Syllable>, WordError> {
        let err = |reason: &str| WordError::Parse {
            token: token.to_string(),
            reason: reason.to_string(),
        };
        if let Some((payload, id)) = token.rsplit_once('@') {
            let id: usize = id.parse().map_err(|_| err("factor id must be a number"))?;
            let group = self.factors.get(id)?;
            return Ok(group
                .parse_element(payload)?
                .map(Syllable::Factor)
                .into_iter()
                .collect());
        }
        let (name, exp) = match token.split_once('^') {
            Some((n, e)) => (n, e.parse::<i64>().map_err(|_| err("bad exponent"))?),
            None => (token, 1),
        };
        let lower = name.to_ascii_lowercase();
        let inverted = name != lower;
        if inverted && !name.starts_with(|c: char| c.is_ascii_uppercase()) {
            return Err(err("only the first letter may be capitalized"));
        }
        let generator = self
            .free_names
            .iter()
            .position(|n| *n == lower)
            .ok_or_else(|| err("unknown free generator"))?;
        let inverse = inverted ^ (exp < 0);
        Ok(vec![Syllable::Free { generator, inverse }; exp.unsigned_abs() as usize])
    }

    pub fn format_syllable(&self, s: &Syllable) -> String {
        match s {
            Syllable::Free { generator, inverse } => {
                let name = &self.free_names[*generator];
                if *inverse {
                    let mut c = name.chars();
                    let first = c.next().map(|c| c.to_ascii_uppercase()).unwrap_or_default();
                    format!("{first}{}", c.as_str())
                } else {
                    name.clone()
                }
            }
            Syllable::Factor(x) => self.factors.format(x),
        }
    }

    pub fn format_syllables(&self, s: &[Syllable]) -> String {
        if s.is_empty() {
            return "1".to_string();
        }
        s.iter().map(|x| self.format_syllable(x)).collect::<Vec<_>>().join(" ")
    }

    pub fn format_word(&self, w: &Word) -> String {
        self.format_syllables(&w.0)
    }

    /// Boundary point `u^∞ = conjugator · core^∞`.
    pub fn rational_ray(self: &Arc<Self>, u: &Word) -> Result<Ray, WordError> {
        if !self.is_hyperbolic(u) {
            return Err(WordError::Elliptic(self.format_word(u)));
        }
        let (core, conjugator) = self.cyclic_reduce(u);
        let start = self.mul(&conjugator, &core);
        Ok(Ray::new(
            self.clone(),
            start,
            Box::new(PeriodicSource { core }),
        ))
    }
}

/// Source of successive prefixes for a [`Ray`].
pub trait RaySource: Send {
    /// A strictly longer reduced prefix extending `current`.
    fn extend(&mut self, fp: &FreeProduct, current: &Word) -> Result<Word, RayError>;

    fn box_clone(&self) -> Box<dyn RaySource>;

    fn describe(&self) -> String {
        "ray".to_string()
    }
}

/// Appends copies of a cyclically reduced core.
#[derive(Clone, Debug)]
pub struct PeriodicSource {
    pub core: Word,
}

impl RaySource for PeriodicSource {
    fn extend(&mut self, _fp: &FreeProduct, current: &Word) -> Result<Word, RayError> {
        if self.core.is_empty() {
            return Err(RayError::Stagnation {
                length: current.len(),
                reason: "empty period".into(),
            });
        }
        let mut next = current.0.clone();
        let copies = (current.len() / self.core.len()).max(1);
        for _ in 0..copies {
            next.extend(self.core.0.iter().cloned());
        }
        Ok(Word(next))
    }

    fn box_clone(&self) -> Box<dyn RaySource> {
        Box::new(self.clone())
    }

    fn describe(&self) -> String {
        "periodic".into()
    }
}

/// A lazily extended infinite reduced word with memoized nested prefixes.
pub struct Ray {
    fp: Arc<FreeProduct>,
    prefix: Word,
    source: Box<dyn RaySource>,
}

impl Clone for Ray {
    fn clone(&self) -> Self {
        Ray {
            fp: self.fp.clone(),
            prefix: self.prefix.clone(),
            source: self.source.box_clone(),
        }
    }
}

impl fmt::Debug for Ray {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ray")
            .field("source", &self.source.describe())
            .field("materialized", &self.prefix.len())
            .finish()
    }
}

/// Hard cap on extension rounds without reaching the requested length.
const MAX_EXTENSION_ROUNDS: usize = 4096;

impl Ray {
    pub fn new(fp: Arc<FreeProduct>, initial: Word, source: Box<dyn RaySource>) -> Self {
        Ray {
            fp,
            prefix: initial,
            source,
        }
    }

    pub fn free_product(&self) -> &Arc<FreeProduct> {
        &self.fp
    }

    /// Everything materialized so far.
    pub fn materialized(&self) -> &Word {
        &self.prefix
    }

    /// Extends until at least `n` syllables exist and returns the first `n`.
    pub fn prefix(&mut self, n: usize) -> Result<&[Syllable], RayError> {
        let mut rounds = 0;
        while self.prefix.len() < n {
            rounds += 1;
            if rounds > MAX_EXTENSION_ROUNDS {
                return Err(RayError::Stagnation {
                    length: self.prefix.len(),
                    reason: "too many extension rounds".into(),
                });
            }
            let next = self.source.extend(&self.fp, &self.prefix)?;
            if next.len() <= self.prefix.len() {
                return Err(RayError::Stagnation {
                    length: self.prefix.len(),
                    reason: format!("{} source made no progress", self.source.describe()),
                });
            }
            if let Some(position) = self
                .prefix
                .iter()
                .zip(next.iter())
                .position(|(a, b)| a != b)
            {
                return Err(RayError::NotNested {
                    position: position + 1,
                });
            }
            self.prefix = next;
        }
        Ok(&self.prefix.0[..n])
    }

    pub fn prefix_word(&mut self, n: usize) -> Result<Word, RayError> {
        Ok(Word(self.prefix(n)?.to_vec()))
    }

    /// The syllable at 1-based position `k`.
    pub fn syllable(&mut self, k: usize) -> Result<Syllable, RayError> {
        Ok(self.prefix(k)?[k - 1].clone())
    }
}

/// A point of `G ∪ ∂(G, O)`: a finite word or a ray.
pub enum Point<'a> {
    Finite(&'a Word),
    Infinite(&'a mut Ray),
}

impl<'a> From<&'a Word> for Point<'a> {
    fn from(w: &'a Word) -> Self {
        Point::Finite(w)
    }
}

impl<'a> From<&'a mut Ray> for Point<'a> {
    fn from(r: &'a mut Ray) -> Self {
        Point::Infinite(r)
    }
}

impl Point<'_> {
    fn upto(&mut self, n: usize) -> Result<&[Syllable], RayError> {
        match self {
            Point::Finite(w) => Ok(&w.0[..n.min(w.len())]),
            Point::Infinite(r) => r.prefix(n),
        }
    }

    fn is_finite(&self) -> bool {
        matches!(self, Point::Finite(_))
    }
}

/// `A ∧ B` truncated at `depth`.
pub fn common_prefix<'a, 'b>(
    a: impl Into<Point<'a>>,
    b: impl Into<Point<'b>>,
    depth: usize,
) -> Result<Word, RayError> {
    let mut a = a.into();
    let mut b = b.into();
    let pa = a.upto(depth)?;
    let pb = b.upto(depth)?;
    let k = pa.iter().zip(pb).take_while(|(x, y)| x == y).count();
    Ok(Word(pa[..k].to_vec()))
}

/// Boundary distance `e^{-|A ∧ B|}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Distance {
    pub value: f64,
    /// The points agree to the probe depth; `value` is only an upper bound.
    pub truncated: bool,
}

pub fn boundary_distance<'a, 'b>(
    a: impl Into<Point<'a>>,
    b: impl Into<Point<'b>>,
    depth: usize,
) -> Result<Distance, RayError> {
    let mut a = a.into();
    let mut b = b.into();
    let both_finite = a.is_finite() && b.is_finite();
    let pa = a.upto(depth)?.to_vec();
    let pb = b.upto(depth)?;
    let k = pa.iter().zip(pb).take_while(|(x, y)| x == y).count();
    if both_finite && pa.len() == pb.len() && k == pa.len() && pa.len() < depth {
        return Ok(Distance {
            value: 0.0,
            truncated: false,
        });
    }
    if k >= depth {
        return Ok(Distance {
            value: (-(depth as f64)).exp(),
            truncated: true,
        });
    }
    Ok(Distance {
        value: (-(k as f64)).exp(),
        truncated: false,
    })
}

/// An eventual period found by [`detect_rational`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Periodicity {
    /// Length of the non-periodic head.
    pub offset: usize,
    pub period: Word,
}

/// Looks for a period `p` (`|p| ≤ max_period`) such that the depth-`depth`
/// prefix is `p`-periodic from some offset on. The periodic tail must cover
/// at least half the prefix and two full periods. A positive answer is
/// evidence; a negative answer is exhaustive within the bounds.
pub fn detect_rational(x: &mut Ray, depth: usize, max_period: usize) -> Result<Option<Periodicity>, RayError> {
    let s = x.prefix(depth)?.to_vec();
    let n = s.len();
    for p in 1..=max_period {
        let min_tail = (n / 2).max(2 * p);
        if min_tail > n {
            break;
        }
        // last index where periodicity fails; the tail after it is p-periodic
        let offset = (p..n)
            .rev()
            .find(|&i| s[i] != s[i - p])
            .map_or(0, |i| i - p + 1);
        if n - offset >= min_tail {
            return Ok(Some(Periodicity {
                offset,
                period: Word(s[offset..offset + p].to_vec()),
            }));
        }
    }
    Ok(None)
}

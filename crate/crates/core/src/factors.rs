//! Elliptic factor groups `H_i` and their automorphisms.
//!
//! Three kinds are supported: cyclic groups `Z/m`, finite groups given by a
//! multiplication table, and finitely generated free groups. Element equality
//! is decidable for all three. The identity is never stored as a
//! [`FactorElement`]; products that collapse to the identity come back as
//! `None`, which is what lets word reduction drop the syllable.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;

use thiserror::Error;

/// Index of a factor group inside a decomposition (1-based, as declared).
pub type FactorId = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FactorError {
    #[error("factor mismatch: element of H{found} used where H{expected} was required")]
    Mismatch { expected: FactorId, found: FactorId },
    #[error("unknown factor H{0}")]
    UnknownFactor(FactorId),
    #[error("invalid factor definition for H{id}: {reason}")]
    InvalidDefinition { id: FactorId, reason: String },
    #[error("cannot parse factor element `{text}` in H{id}: {reason}")]
    Parse {
        id: FactorId,
        text: String,
        reason: String,
    },
    #[error("automorphism H{source_id} -> H{target}: {reason}")]
    BadAutomorphism {
        source_id: FactorId,
        target: FactorId,
        reason: String,
    },
}

/// The three supported presentations of a factor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FactorKind {
    /// `Z/order`, one generator.
    Cyclic { order: u32 },
    /// A finite group given by its multiplication table over named elements.
    Table {
        elements: Vec<String>,
        table: Vec<Vec<usize>>,
        identity: usize,
    },
    /// Free group on the declared generators.
    Free { rank: usize },
}

/// Payload of a non-trivial factor element.
///
/// `Free` holds a freely reduced word over the factor's own generators, with
/// letter `±(i + 1)` standing for generator `i` or its inverse.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Payload {
    Power(u32),
    Index(usize),
    Free(Vec<i32>),
}

/// A non-identity element of a factor group.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FactorElement {
    pub factor: FactorId,
    pub payload: Payload,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FactorGroup {
    id: FactorId,
    kind: FactorKind,
    generators: Vec<String>,
    /// Table kind only: element index of each generator.
    generator_index: Vec<usize>,
}

fn free_reduce_push(word: &mut Vec<i32>, letter: i32) {
    if word.last() == Some(&-letter) {
        word.pop();
    } else {
        word.push(letter);
    }
}

impl FactorGroup {
    pub fn cyclic(id: FactorId, order: u32, generator: impl Into<String>) -> Result<Self, FactorError> {
        if order < 2 {
            return Err(FactorError::InvalidDefinition {
                id,
                reason: format!("cyclic modulus must be at least 2, got {order}"),
            });
        }
        Ok(FactorGroup {
            id,
            kind: FactorKind::Cyclic { order },
            generators: vec![generator.into()],
            generator_index: Vec::new(),
        })
    }

    pub fn free(id: FactorId, generators: Vec<String>) -> Result<Self, FactorError> {
        if generators.is_empty() {
            return Err(FactorError::InvalidDefinition {
                id,
                reason: "free factor needs rank at least 1".into(),
            });
        }
        check_names(id, &generators)?;
        Ok(FactorGroup {
            id,
            kind: FactorKind::Free {
                rank: generators.len(),
            },
            generators,
            generator_index: Vec::new(),
        })
    }

    /// Builds a finite factor from a multiplication table and checks the group
    /// axioms by exhaustion.
    pub fn table(
        id: FactorId,
        elements: Vec<String>,
        table: Vec<Vec<usize>>,
        generators: Vec<String>,
    ) -> Result<Self, FactorError> {
        let bad = |reason: String| FactorError::InvalidDefinition { id, reason };
        let n = elements.len();
        if n < 2 {
            return Err(bad("table group needs at least two elements".into()));
        }
        check_names(id, &elements)?;
        if table.len() != n || table.iter().any(|row| row.len() != n) {
            return Err(bad(format!("multiplication table must be {n}x{n}")));
        }
        if table.iter().flatten().any(|&x| x >= n) {
            return Err(bad("table entry out of range".into()));
        }
        let identity = (0..n)
            .find(|&e| (0..n).all(|x| table[e][x] == x && table[x][e] == x))
            .ok_or_else(|| bad("no identity element".into()))?;
        for x in 0..n {
            if !(0..n).any(|y| table[x][y] == identity && table[y][x] == identity) {
                return Err(bad(format!("element `{}` has no inverse", elements[x])));
            }
        }
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    if table[table[x][y]][z] != table[x][table[y][z]] {
                        return Err(bad(format!(
                            "not associative at ({}, {}, {})",
                            elements[x], elements[y], elements[z]
                        )));
                    }
                }
            }
        }
        let generator_index = generators
            .iter()
            .map(|g| {
                elements
                    .iter()
                    .position(|e| e == g)
                    .ok_or_else(|| bad(format!("generator `{g}` is not an element")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let group = FactorGroup {
            id,
            kind: FactorKind::Table {
                elements,
                table,
                identity,
            },
            generators,
            generator_index,
        };
        if group.table_words().len() != n {
            return Err(bad("declared generators do not generate the table group".into()));
        }
        Ok(group)
    }

    pub fn id(&self) -> FactorId {
        self.id
    }

    pub fn kind(&self) -> &FactorKind {
        &self.kind
    }

    pub fn generator_names(&self) -> &[String] {
        &self.generators
    }

    pub fn rank(&self) -> usize {
        self.generators.len()
    }

    /// Group order for finite kinds.
    pub fn order(&self) -> Option<usize> {
        match &self.kind {
            FactorKind::Cyclic { order } => Some(*order as usize),
            FactorKind::Table { elements, .. } => Some(elements.len()),
            FactorKind::Free { .. } => None,
        }
    }

    pub fn generator(&self, i: usize) -> FactorElement {
        let payload = match &self.kind {
            FactorKind::Cyclic { .. } => Payload::Power(1),
            FactorKind::Table { .. } => Payload::Index(self.generator_index[i]),
            FactorKind::Free { .. } => Payload::Free(vec![i as i32 + 1]),
        };
        FactorElement {
            factor: self.id,
            payload,
        }
    }

    pub fn generators(&self) -> Vec<FactorElement> {
        (0..self.rank()).map(|i| self.generator(i)).collect()
    }

    fn check(&self, x: &FactorElement) -> Result<(), FactorError> {
        if x.factor != self.id {
            return Err(FactorError::Mismatch {
                expected: self.id,
                found: x.factor,
            });
        }
        Ok(())
    }

    fn wrap(&self, payload: Payload) -> Option<FactorElement> {
        let trivial = match (&self.kind, &payload) {
            (FactorKind::Cyclic { .. }, Payload::Power(0)) => true,
            (FactorKind::Table { identity, .. }, Payload::Index(i)) => i == identity,
            (FactorKind::Free { .. }, Payload::Free(w)) => w.is_empty(),
            _ => false,
        };
        (!trivial).then_some(FactorElement {
            factor: self.id,
            payload,
        })
    }

    /// Group product; `None` is the identity marker.
    pub fn mul(&self, x: &FactorElement, y: &FactorElement) -> Result<Option<FactorElement>, FactorError> {
        self.check(x)?;
        self.check(y)?;
        let payload = match (&self.kind, &x.payload, &y.payload) {
            (FactorKind::Cyclic { order }, Payload::Power(a), Payload::Power(b)) => {
                Payload::Power((a + b) % order)
            }
            (FactorKind::Table { table, .. }, Payload::Index(a), Payload::Index(b)) => {
                Payload::Index(table[*a][*b])
            }
            (FactorKind::Free { .. }, Payload::Free(a), Payload::Free(b)) => {
                let mut w = a.clone();
                for &l in b {
                    free_reduce_push(&mut w, l);
                }
                Payload::Free(w)
            }
            _ => {
                return Err(FactorError::InvalidDefinition {
                    id: self.id,
                    reason: "payload does not match factor kind".into(),
                })
            }
        };
        Ok(self.wrap(payload))
    }

    /// Multiplies an optional (identity-marked) element by another.
    pub fn mul_opt(
        &self,
        x: Option<&FactorElement>,
        y: Option<&FactorElement>,
    ) -> Result<Option<FactorElement>, FactorError> {
        match (x, y) {
            (None, None) => Ok(None),
            (Some(a), None) | (None, Some(a)) => {
                self.check(a)?;
                Ok(Some(a.clone()))
            }
            (Some(a), Some(b)) => self.mul(a, b),
        }
    }

    pub fn inverse(&self, x: &FactorElement) -> FactorElement {
        let payload = match (&self.kind, &x.payload) {
            (FactorKind::Cyclic { order }, Payload::Power(a)) => Payload::Power(order - a),
            (FactorKind::Table { table, identity, .. }, Payload::Index(a)) => {
                let n = table.len();
                Payload::Index((0..n).find(|&y| table[*a][y] == *identity).unwrap_or(*a))
            }
            (FactorKind::Free { .. }, Payload::Free(w)) => {
                Payload::Free(w.iter().rev().map(|l| -l).collect())
            }
            (_, p) => p.clone(),
        };
        FactorElement {
            factor: self.id,
            payload,
        }
    }

    /// `x^k` for any integer `k`.
    pub fn pow(&self, x: &FactorElement, k: i64) -> Result<Option<FactorElement>, FactorError> {
        self.check(x)?;
        let base = if k < 0 { self.inverse(x) } else { x.clone() };
        let mut acc: Option<FactorElement> = None;
        for _ in 0..k.unsigned_abs() {
            acc = self.mul_opt(acc.as_ref(), Some(&base))?;
        }
        Ok(acc)
    }

    /// Every non-identity element, for finite kinds.
    pub fn elements(&self) -> Option<Vec<FactorElement>> {
        match &self.kind {
            FactorKind::Cyclic { order } => Some(
                (1..*order)
                    .map(|k| FactorElement {
                        factor: self.id,
                        payload: Payload::Power(k),
                    })
                    .collect(),
            ),
            FactorKind::Table {
                elements, identity, ..
            } => Some(
                (0..elements.len())
                    .filter(|i| i != identity)
                    .map(|i| FactorElement {
                        factor: self.id,
                        payload: Payload::Index(i),
                    })
                    .collect(),
            ),
            FactorKind::Free { .. } => None,
        }
    }

    /// A finite sample of non-identity elements: everything for finite kinds,
    /// generators and their inverses for free factors.
    pub fn sample_elements(&self) -> Vec<FactorElement> {
        self.elements().unwrap_or_else(|| {
            let mut out = Vec::new();
            for g in self.generators() {
                out.push(self.inverse(&g));
                out.push(g);
            }
            out.sort();
            out
        })
    }

    /// Shortest generator words for every table element (BFS on the Cayley graph).
    fn table_words(&self) -> HashMap<usize, Vec<usize>> {
        let FactorKind::Table { table, identity, .. } = &self.kind else {
            return HashMap::new();
        };
        let mut words = HashMap::new();
        words.insert(*identity, Vec::new());
        let mut queue = VecDeque::from([*identity]);
        while let Some(x) = queue.pop_front() {
            for (gi, &g) in self.generator_index.iter().enumerate() {
                let y = table[x][g];
                if !words.contains_key(&y) {
                    let mut w = words[&x].clone();
                    w.push(gi);
                    words.insert(y, w);
                    queue.push_back(y);
                }
            }
        }
        words
    }

    /// Writes `x` as a sequence of signed generator letters (`±(i + 1)`).
    pub fn express(&self, x: &FactorElement) -> Result<Vec<i32>, FactorError> {
        self.check(x)?;
        Ok(match &x.payload {
            Payload::Power(k) => vec![1; *k as usize],
            Payload::Index(i) => self
                .table_words()
                .get(i)
                .map(|w| w.iter().map(|&g| g as i32 + 1).collect())
                .unwrap_or_default(),
            Payload::Free(w) => w.clone(),
        })
    }

    /// Parses payload syntax: `.`-separated factors `name` or `name^k`.
    pub fn parse_element(&self, text: &str) -> Result<Option<FactorElement>, FactorError> {
        let err = |reason: &str| FactorError::Parse {
            id: self.id,
            text: text.to_string(),
            reason: reason.to_string(),
        };
        let mut acc: Option<FactorElement> = None;
        for part in text.split('.') {
            let (name, exp) = match part.split_once('^') {
                Some((n, e)) => (n, e.parse::<i64>().map_err(|_| err("bad exponent"))?),
                None => (part, 1),
            };
            let base = if let Some(g) = self.generators.iter().position(|g| g == name) {
                self.generator(g)
            } else if let FactorKind::Table { elements, .. } = &self.kind {
                let i = elements
                    .iter()
                    .position(|e| e == name)
                    .ok_or_else(|| err("unknown element name"))?;
                match self.wrap(Payload::Index(i)) {
                    Some(e) => e,
                    None => continue,
                }
            } else {
                return Err(err("unknown generator name"));
            };
            let term = self.pow(&base, exp)?;
            acc = self.mul_opt(acc.as_ref(), term.as_ref())?;
        }
        Ok(acc)
    }

    pub fn format_element(&self, x: &FactorElement) -> String {
        match (&self.kind, &x.payload) {
            (FactorKind::Cyclic { .. }, Payload::Power(1)) => self.generators[0].clone(),
            (FactorKind::Cyclic { .. }, Payload::Power(k)) => format!("{}^{k}", self.generators[0]),
            (FactorKind::Table { elements, .. }, Payload::Index(i)) => elements[*i].clone(),
            (FactorKind::Free { .. }, Payload::Free(w)) => {
                let mut parts: Vec<String> = Vec::new();
                let mut i = 0;
                while i < w.len() {
                    let mut j = i;
                    while j < w.len() && w[j] == w[i] {
                        j += 1;
                    }
                    let name = &self.generators[w[i].unsigned_abs() as usize - 1];
                    let exp = (j - i) as i64 * w[i].signum() as i64;
                    parts.push(if exp == 1 {
                        name.clone()
                    } else {
                        format!("{name}^{exp}")
                    });
                    i = j;
                }
                parts.join(".")
            }
            (_, p) => format!("{p:?}"),
        }
    }
}

fn check_names(id: FactorId, names: &[String]) -> Result<(), FactorError> {
    let mut seen = BTreeSet::new();
    for n in names {
        let ok = n.chars().next().is_some_and(|c| c.is_ascii_lowercase())
            && n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !ok {
            return Err(FactorError::InvalidDefinition {
                id,
                reason: format!("name `{n}` must start with a lowercase letter and be alphanumeric"),
            });
        }
        if !seen.insert(n) {
            return Err(FactorError::InvalidDefinition {
                id,
                reason: format!("duplicate name `{n}`"),
            });
        }
    }
    Ok(())
}

/// The ordered collection of factors `H_1, ..., H_r`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FactorSystem {
    factors: Vec<FactorGroup>,
}

impl FactorSystem {
    /// Factors must carry ids `1..=r` in order.
    pub fn new(factors: Vec<FactorGroup>) -> Result<Self, FactorError> {
        for (i, f) in factors.iter().enumerate() {
            if f.id != i + 1 {
                return Err(FactorError::InvalidDefinition {
                    id: f.id,
                    reason: format!("factor ids must be 1..=r in order; expected {}", i + 1),
                });
            }
        }
        Ok(FactorSystem { factors })
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn get(&self, id: FactorId) -> Result<&FactorGroup, FactorError> {
        id.checked_sub(1)
            .and_then(|i| self.factors.get(i))
            .ok_or(FactorError::UnknownFactor(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &FactorGroup> {
        self.factors.iter()
    }

    pub fn mul(&self, x: &FactorElement, y: &FactorElement) -> Result<Option<FactorElement>, FactorError> {
        if x.factor != y.factor {
            return Err(FactorError::Mismatch {
                expected: x.factor,
                found: y.factor,
            });
        }
        self.get(x.factor)?.mul(x, y)
    }

    pub fn inverse(&self, x: &FactorElement) -> Result<FactorElement, FactorError> {
        Ok(self.get(x.factor)?.inverse(x))
    }

    pub fn format(&self, x: &FactorElement) -> String {
        match self.get(x.factor) {
            Ok(g) => format!("{}@{}", g.format_element(x), x.factor),
            Err(_) => format!("{:?}@{}", x.payload, x.factor),
        }
    }
}

/// An isomorphism `H_source -> H_target` given on generators, together with
/// the declared inverse's generator images.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FactorAutomorphism {
    pub source: FactorId,
    pub target: FactorId,
    /// Image of each source generator, in the target.
    pub images: Vec<FactorElement>,
    /// Image of each target generator under the declared inverse, in the source.
    pub inverse_images: Vec<FactorElement>,
}

/// Outcome of [`verify_factor_aut`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FactorAutVerdict {
    pub ok: bool,
    pub witness: Option<CompositionWitness>,
}

/// A generator that a composition failed to fix, with what it was sent to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompositionWitness {
    pub factor: FactorId,
    pub generator: usize,
    pub image: Option<FactorElement>,
    pub description: String,
}

impl FactorAutomorphism {
    pub fn identity(group: &FactorGroup) -> Self {
        FactorAutomorphism {
            source: group.id,
            target: group.id,
            images: group.generators(),
            inverse_images: group.generators(),
        }
    }

    pub fn inverse(&self) -> Self {
        FactorAutomorphism {
            source: self.target,
            target: self.source,
            images: self.inverse_images.clone(),
            inverse_images: self.images.clone(),
        }
    }

    pub fn is_identity_on(&self, group: &FactorGroup) -> bool {
        self.source == self.target && self.source == group.id && self.images == group.generators()
    }

    /// `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &FactorAutomorphism, sys: &FactorSystem) -> Result<Self, FactorError> {
        if other.target != self.source {
            return Err(FactorError::Mismatch {
                expected: self.source,
                found: other.target,
            });
        }
        let mut images = Vec::new();
        for x in &other.images {
            images.push(self.apply(sys, x)?.ok_or_else(|| FactorError::BadAutomorphism {
                source_id: other.source,
                target: self.target,
                reason: "composite sends a generator to the identity".into(),
            })?);
        }
        let mut inverse_images = Vec::new();
        for x in &self.inverse_images {
            inverse_images.push(other.inverse().apply(sys, x)?.ok_or_else(|| {
                FactorError::BadAutomorphism {
                    source_id: other.source,
                    target: self.target,
                    reason: "composite inverse sends a generator to the identity".into(),
                }
            })?);
        }
        Ok(FactorAutomorphism {
            source: other.source,
            target: self.target,
            images,
            inverse_images,
        })
    }

    /// Image of `x` under the homomorphic extension of the generator images.
    pub fn apply(&self, sys: &FactorSystem, x: &FactorElement) -> Result<Option<FactorElement>, FactorError> {
        let src = sys.get(self.source)?;
        let tgt = sys.get(self.target)?;
        if self.images.len() != src.rank() {
            return Err(FactorError::BadAutomorphism {
                source_id: self.source,
                target: self.target,
                reason: format!("expected {} generator images, got {}", src.rank(), self.images.len()),
            });
        }
        let letters = src.express(x)?;
        let mut acc: Option<FactorElement> = None;
        for l in letters {
            let img = &self.images[l.unsigned_abs() as usize - 1];
            let img = if l < 0 { tgt.inverse(img) } else { img.clone() };
            acc = tgt.mul_opt(acc.as_ref(), Some(&img))?;
        }
        Ok(acc)
    }

    pub fn apply_opt(
        &self,
        sys: &FactorSystem,
        x: Option<&FactorElement>,
    ) -> Result<Option<FactorElement>, FactorError> {
        match x {
            Some(x) => self.apply(sys, x),
            None => Ok(None),
        }
    }
}

/// Applies `alpha` to `x`; convenience free function mirroring the method.
pub fn apply_factor_aut(
    sys: &FactorSystem,
    alpha: &FactorAutomorphism,
    x: &FactorElement,
) -> Result<Option<FactorElement>, FactorError> {
    alpha.apply(sys, x)
}

/// Product helper mirroring [`FactorSystem::mul`].
pub fn elem_mul(
    sys: &FactorSystem,
    x: &FactorElement,
    y: &FactorElement,
) -> Result<Option<FactorElement>, FactorError> {
    sys.mul(x, y)
}

/// Checks that both compositions with the declared inverse fix every
/// generator; for finite kinds also checks bijectivity by enumeration.
pub fn verify_factor_aut(sys: &FactorSystem, alpha: &FactorAutomorphism) -> FactorAutVerdict {
    let fail = |factor: FactorId, generator: usize, image: Option<FactorElement>, description: String| {
        FactorAutVerdict {
            ok: false,
            witness: Some(CompositionWitness {
                factor,
                generator,
                image,
                description,
            }),
        }
    };
    let (src, tgt) = match (sys.get(alpha.source), sys.get(alpha.target)) {
        (Ok(s), Ok(t)) => (s, t),
        _ => return fail(alpha.source, 0, None, "unknown factor".into()),
    };
    if alpha.images.len() != src.rank() || alpha.inverse_images.len() != tgt.rank() {
        return fail(alpha.source, 0, None, "generator image count mismatch".into());
    }
    if alpha.images.iter().any(|x| x.factor != tgt.id)
        || alpha.inverse_images.iter().any(|x| x.factor != src.id)
    {
        return fail(alpha.source, 0, None, "generator image lies in the wrong factor".into());
    }
    let inv = alpha.inverse();
    for (round, (outer, inner, group)) in [(&inv, alpha, src), (alpha, &inv, tgt)].into_iter().enumerate() {
        for (i, g) in group.generators().iter().enumerate() {
            let composed = inner
                .apply(sys, g)
                .and_then(|y| outer.apply_opt(sys, y.as_ref()));
            match composed {
                Ok(Some(ref y)) if y == g => {}
                Ok(y) => {
                    let shown = y.as_ref().map_or("1".to_string(), |y| group.format_element(y));
                    let label = if round == 0 { "inverse∘α" } else { "α∘inverse" };
                    return fail(
                        group.id,
                        i,
                        y,
                        format!("{label}: {} ↦ {shown}", group.generator_names()[i]),
                    );
                }
                Err(e) => return fail(group.id, i, None, e.to_string()),
            }
        }
    }
    if let Some(all) = src.elements() {
        let mut seen = BTreeSet::new();
        for x in &all {
            match alpha.apply(sys, x) {
                Ok(Some(y)) => {
                    if !seen.insert(y) {
                        return fail(src.id, 0, None, "not injective on the enumerated elements".into());
                    }
                }
                _ => return fail(src.id, 0, None, "a non-identity element maps to the identity".into()),
            }
        }
        if tgt.order() != Some(all.len() + 1) {
            return fail(src.id, 0, None, "source and target orders differ".into());
        }
    }
    FactorAutVerdict { ok: true, witness: None }
}

impl fmt::Display for FactorAutVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.witness {
            None => write!(f, "valid"),
            Some(w) => write!(f, "invalid ({})", w.description),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z5() -> FactorSystem {
        FactorSystem::new(vec![FactorGroup::cyclic(1, 5, "a").unwrap()]).unwrap()
    }

    fn f2() -> FactorSystem {
        FactorSystem::new(vec![FactorGroup::free(1, vec!["a1".into(), "a2".into()]).unwrap()]).unwrap()
    }

    fn pw(k: u32) -> FactorElement {
        FactorElement {
            factor: 1,
            payload: Payload::Power(k),
        }
    }

    fn fw(w: &[i32]) -> FactorElement {
        FactorElement {
            factor: 1,
            payload: Payload::Free(w.to_vec()),
        }
    }

    fn cyclic_aut(k: u32, inv: u32) -> FactorAutomorphism {
        FactorAutomorphism {
            source: 1,
            target: 1,
            images: vec![pw(k)],
            inverse_images: vec![pw(inv)],
        }
    }

    #[test]
    fn cyclic_products() {
        let sys = z5();
        assert_eq!(elem_mul(&sys, &pw(2), &pw(3)).unwrap(), None);
        assert_eq!(elem_mul(&sys, &pw(2), &pw(2)).unwrap(), Some(pw(4)));
    }

    #[test]
    fn free_cancellation_gives_identity_marker() {
        let sys = f2();
        assert_eq!(elem_mul(&sys, &fw(&[1]), &fw(&[-1])).unwrap(), None);
        assert_eq!(elem_mul(&sys, &fw(&[1, 2]), &fw(&[-2, 1])).unwrap(), Some(fw(&[1, 1])));
    }

    #[test]
    fn mismatched_factors_are_rejected() {
        let g1 = FactorGroup::cyclic(1, 5, "a").unwrap();
        let g2 = FactorGroup::cyclic(2, 3, "c").unwrap();
        let sys = FactorSystem::new(vec![g1, g2]).unwrap();
        let y = FactorElement {
            factor: 2,
            payload: Payload::Power(1),
        };
        assert!(matches!(elem_mul(&sys, &pw(1), &y), Err(FactorError::Mismatch { .. })));
    }

    #[test]
    fn apply_examples() {
        let sys = z5();
        let id = FactorAutomorphism::identity(sys.get(1).unwrap());
        assert_eq!(apply_factor_aut(&sys, &id, &pw(3)).unwrap(), Some(pw(3)));
        // a -> a^2 sends a^3 to a^6 = a
        assert_eq!(apply_factor_aut(&sys, &cyclic_aut(2, 3), &pw(3)).unwrap(), Some(pw(1)));

        let f = f2();
        let alpha = FactorAutomorphism {
            source: 1,
            target: 1,
            images: vec![fw(&[1]), fw(&[2, 1])],
            inverse_images: vec![fw(&[1]), fw(&[2, -1])],
        };
        assert_eq!(apply_factor_aut(&f, &alpha, &fw(&[2])).unwrap(), Some(fw(&[2, 1])));
        assert!(verify_factor_aut(&f, &alpha).ok);
    }

    #[test]
    fn verify_examples() {
        let sys = z5();
        assert!(verify_factor_aut(&sys, &FactorAutomorphism::identity(sys.get(1).unwrap())).ok);
        assert!(verify_factor_aut(&sys, &cyclic_aut(2, 3)).ok);
        let bad = verify_factor_aut(&sys, &cyclic_aut(2, 2));
        assert!(!bad.ok);
        assert_eq!(bad.witness.unwrap().image, Some(pw(4)));
    }

    #[test]
    fn non_bijective_cyclic_map_is_rejected() {
        let sys = FactorSystem::new(vec![FactorGroup::cyclic(1, 6, "a").unwrap()]).unwrap();
        // a -> a^2 is not injective on Z/6, whatever inverse is declared
        assert!(!verify_factor_aut(&sys, &cyclic_aut(2, 5)).ok);
    }

    fn s3() -> FactorGroup {
        // permutations of {0,1,2} in one-line notation
        let perms: Vec<[usize; 3]> = vec![[0, 1, 2], [1, 0, 2], [0, 2, 1], [2, 1, 0], [1, 2, 0], [2, 0, 1]];
        let names = ["e", "s", "t", "u", "r", "q"].map(String::from).to_vec();
        let compose = |p: &[usize; 3], q: &[usize; 3]| [p[q[0]], p[q[1]], p[q[2]]];
        let table = perms
            .iter()
            .map(|p| {
                perms
                    .iter()
                    .map(|q| perms.iter().position(|x| *x == compose(p, q)).unwrap())
                    .collect()
            })
            .collect();
        FactorGroup::table(1, names, table, vec!["s".into(), "t".into()]).unwrap()
    }

    #[test]
    fn table_group_is_associative_by_exhaustion() {
        let g = s3();
        let all: Vec<Option<FactorElement>> = std::iter::once(None)
            .chain(g.elements().unwrap().into_iter().map(Some))
            .collect();
        for x in &all {
            for y in &all {
                for z in &all {
                    let xy = g.mul_opt(x.as_ref(), y.as_ref()).unwrap();
                    let yz = g.mul_opt(y.as_ref(), z.as_ref()).unwrap();
                    assert_eq!(
                        g.mul_opt(xy.as_ref(), z.as_ref()).unwrap(),
                        g.mul_opt(x.as_ref(), yz.as_ref()).unwrap()
                    );
                }
            }
        }
    }

    #[test]
    fn table_automorphism_is_bijective() {
        let g = s3();
        let sys = FactorSystem::new(vec![g.clone()]).unwrap();
        let s = g.parse_element("s").unwrap().unwrap();
        let t = g.parse_element("t").unwrap().unwrap();
        // swapping the two transposition generators is conjugation by u
        let alpha = FactorAutomorphism {
            source: 1,
            target: 1,
            images: vec![t.clone(), s.clone()],
            inverse_images: vec![t, s],
        };
        assert!(verify_factor_aut(&sys, &alpha).ok);
        let images: BTreeSet<_> = g
            .elements()
            .unwrap()
            .iter()
            .map(|x| alpha.apply(&sys, x).unwrap().unwrap())
            .collect();
        assert_eq!(images.len(), 5);
    }

    #[test]
    fn rejects_non_group_tables() {
        let names = vec!["e".to_string(), "x".to_string()];
        let table = vec![vec![0, 1], vec![1, 1]];
        assert!(FactorGroup::table(1, names, table, vec!["x".into()]).is_err());
    }

    #[test]
    fn element_syntax_round_trips() {
        let f = FactorGroup::free(1, vec!["a1".into(), "a2".into()]).unwrap();
        let x = f.parse_element("a2.a1^-2.a1").unwrap().unwrap();
        assert_eq!(x.payload, Payload::Free(vec![2, -1]));
        assert_eq!(f.format_element(&x), "a2.a1^-1");
        let c = FactorGroup::cyclic(1, 5, "a").unwrap();
        assert_eq!(c.parse_element("a^7").unwrap(), Some(pw(2)));
        assert_eq!(c.parse_element("a^5").unwrap(), None);
        assert_eq!(c.format_element(&pw(3)), "a^3");
    }
}

//! Automorphisms of `G` that send each factor to a conjugate of a factor,
//! their action on words and on the boundary, and finite-depth evidence about
//! fixed boundary points.
//!
//! An automorphism is stored by its generator images: a word per free
//! generator, and per factor `H_i` a triple `(σ(i), t_i, α_i)` acting as
//! `h ↦ t_i · α_i(h) · t_i⁻¹`. The inverse is declared, never computed.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::factors::{verify_factor_aut, FactorAutomorphism, FactorError, FactorId};
use crate::words::{FreeProduct, Ray, RayError, RaySource, Syllable, Word};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutError {
    #[error("automorphism has no declared inverse")]
    MissingInverse,
    #[error("malformed automorphism: {0}")]
    Shape(String),
    #[error("factor targets do not form a permutation")]
    NotPermutation,
    #[error("twist on H{factor} is invalid: {reason}")]
    Twist { factor: FactorId, reason: String },
    #[error("declared inverse fails on generator {generator}: composite gives {got}")]
    InverseMismatch { generator: String, got: String },
    #[error("point is not fixed: diverges at syllable {0}")]
    NotFixed(usize),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Ray(#[from] RayError),
}

/// Action on one factor: `h ↦ conjugator · twist(h) · conjugator⁻¹`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FactorImage {
    pub target: FactorId,
    pub conjugator: Word,
    pub twist: FactorAutomorphism,
}

/// Generator images of one direction of an automorphism.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AutImages {
    pub free: Vec<Word>,
    pub factors: Vec<FactorImage>,
}

impl AutImages {
    fn identity(fp: &FreeProduct) -> Self {
        AutImages {
            free: (0..fp.free_rank())
                .map(|i| Word::from_reduced(vec![Syllable::free(i)]))
                .collect(),
            factors: fp
                .factors()
                .iter()
                .map(|g| FactorImage {
                    target: g.id(),
                    conjugator: Word::empty(),
                    twist: FactorAutomorphism::identity(g),
                })
                .collect(),
        }
    }

    fn apply(&self, fp: &FreeProduct, w: &Word) -> Word {
        let mut raw: Vec<Syllable> = Vec::with_capacity(w.len() * 2);
        for s in w.iter() {
            match s {
                Syllable::Free { generator, inverse } => {
                    let img = &self.free[*generator];
                    if *inverse {
                        raw.extend(fp.inverse(img).into_syllables());
                    } else {
                        raw.extend(img.iter().cloned());
                    }
                }
                Syllable::Factor(x) => {
                    let fi = &self.factors[x.factor - 1];
                    let y = fi
                        .twist
                        .apply(fp.factors(), x)
                        .expect("twist applies to elements of its source factor");
                    raw.extend(fi.conjugator.iter().cloned());
                    raw.extend(y.map(Syllable::Factor));
                    raw.extend(fp.inverse(&fi.conjugator).into_syllables());
                }
            }
        }
        fp.reduce(&raw)
    }

    /// `self ∘ other`.
    fn compose(&self, other: &AutImages, fp: &FreeProduct) -> Result<AutImages, AutError> {
        let free = other.free.iter().map(|w| self.apply(fp, w)).collect();
        let mut factors = Vec::new();
        for b in &other.factors {
            let a = &self.factors[b.target - 1];
            let conjugator = fp.mul(&self.apply(fp, &b.conjugator), &a.conjugator);
            factors.push(FactorImage {
                target: a.target,
                conjugator,
                twist: a.twist.compose(&b.twist, fp.factors())?,
            });
        }
        Ok(AutImages { free, factors })
    }
}

/// An automorphism of `G` preserving the factor system, with declared inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct FpAutomorphism {
    fp: Arc<FreeProduct>,
    forward: AutImages,
    inverse: Option<AutImages>,
}

impl FpAutomorphism {
    /// Builds an automorphism and checks its shape (not the inverse pair; see
    /// [`FpAutomorphism::verify`]).
    pub fn new(fp: Arc<FreeProduct>, forward: AutImages, inverse: Option<AutImages>) -> Result<Self, AutError> {
        for imgs in std::iter::once(&forward).chain(inverse.as_ref()) {
            if imgs.free.len() != fp.free_rank() {
                return Err(AutError::Shape(format!(
                    "expected {} free images, got {}",
                    fp.free_rank(),
                    imgs.free.len()
                )));
            }
            if imgs.factors.len() != fp.factors().len() {
                return Err(AutError::Shape(format!(
                    "expected {} factor images, got {}",
                    fp.factors().len(),
                    imgs.factors.len()
                )));
            }
            for w in &imgs.free {
                if !fp.is_reduced(w) {
                    return Err(AutError::Shape("free image is not reduced".into()));
                }
            }
            for (i, fi) in imgs.factors.iter().enumerate() {
                fp.factor(fi.target)?;
                if fi.twist.source != i + 1 || fi.twist.target != fi.target {
                    return Err(AutError::Twist {
                        factor: i + 1,
                        reason: format!(
                            "twist maps H{} -> H{}, expected H{} -> H{}",
                            fi.twist.source,
                            fi.twist.target,
                            i + 1,
                            fi.target
                        ),
                    });
                }
            }
        }
        Ok(FpAutomorphism { fp, forward, inverse })
    }

    /// Builds and verifies.
    pub fn checked(fp: Arc<FreeProduct>, forward: AutImages, inverse: AutImages) -> Result<Self, AutError> {
        let aut = Self::new(fp, forward, Some(inverse))?;
        aut.verify()?;
        Ok(aut)
    }

    pub fn identity(fp: Arc<FreeProduct>) -> Self {
        let id = AutImages::identity(&fp);
        FpAutomorphism {
            fp,
            forward: id.clone(),
            inverse: Some(id),
        }
    }

    /// `ι_u(g) = u g u⁻¹`.
    pub fn inner(fp: Arc<FreeProduct>, u: &Word) -> Self {
        let make = |u: &Word| {
            let ui = fp.inverse(u);
            AutImages {
                free: (0..fp.free_rank())
                    .map(|i| fp.product([u, &Word::from_reduced(vec![Syllable::free(i)]), &ui]))
                    .collect(),
                factors: fp
                    .factors()
                    .iter()
                    .map(|g| FactorImage {
                        target: g.id(),
                        conjugator: u.clone(),
                        twist: FactorAutomorphism::identity(g),
                    })
                    .collect(),
            }
        };
        let forward = make(u);
        let inverse = make(&fp.inverse(u));
        FpAutomorphism {
            fp: fp.clone(),
            forward,
            inverse: Some(inverse),
        }
    }

    /// Identity on free generators and on every factor except `factor`, where
    /// it acts by `twist`.
    pub fn factor_twist(fp: Arc<FreeProduct>, twist: FactorAutomorphism) -> Result<Self, AutError> {
        let mut forward = AutImages::identity(&fp);
        let mut inverse = forward.clone();
        let i = twist.source;
        if twist.target != i {
            return Err(AutError::Twist {
                factor: i,
                reason: "factor twists must map a factor to itself".into(),
            });
        }
        inverse.factors[i - 1].twist = twist.inverse();
        forward.factors[i - 1].twist = twist;
        Self::checked(fp, forward, inverse)
    }

    pub fn free_product(&self) -> &Arc<FreeProduct> {
        &self.fp
    }

    pub fn images(&self) -> &AutImages {
        &self.forward
    }

    pub fn inverse_images(&self) -> Option<&AutImages> {
        self.inverse.as_ref()
    }

    pub fn has_inverse(&self) -> bool {
        self.inverse.is_some()
    }

    /// `σ` as a vector indexed by factor position.
    pub fn factor_permutation(&self) -> Vec<FactorId> {
        self.forward.factors.iter().map(|f| f.target).collect()
    }

    /// Checks the permutation, the twists, and that both compositions with the
    /// declared inverse fix every generator.
    pub fn verify(&self) -> Result<(), AutError> {
        let inv = self.inverse.as_ref().ok_or(AutError::MissingInverse)?;
        for imgs in [&self.forward, inv] {
            let mut targets: Vec<_> = imgs.factors.iter().map(|f| f.target).collect();
            targets.sort();
            if targets != (1..=imgs.factors.len()).collect::<Vec<_>>() {
                return Err(AutError::NotPermutation);
            }
            for fi in &imgs.factors {
                let verdict = verify_factor_aut(self.fp.factors(), &fi.twist);
                if !verdict.ok {
                    return Err(AutError::Twist {
                        factor: fi.twist.source,
                        reason: verdict.to_string(),
                    });
                }
            }
        }
        for g in self.fp.generators() {
            for (first, second) in [(&self.forward, inv), (inv, &self.forward)] {
                let back = second.apply(&self.fp, &first.apply(&self.fp, &g));
                if back != g {
                    return Err(AutError::InverseMismatch {
                        generator: self.fp.format_word(&g),
                        got: self.fp.format_word(&back),
                    });
                }
            }
        }
        Ok(())
    }

    /// Reduced image of `w`.
    pub fn apply(&self, w: &Word) -> Word {
        self.forward.apply(&self.fp, w)
    }

    pub fn inverse(&self) -> Result<FpAutomorphism, AutError> {
        let inv = self.inverse.clone().ok_or(AutError::MissingInverse)?;
        Ok(FpAutomorphism {
            fp: self.fp.clone(),
            forward: inv,
            inverse: Some(self.forward.clone()),
        })
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &FpAutomorphism) -> Result<FpAutomorphism, AutError> {
        let forward = self.forward.compose(&other.forward, &self.fp)?;
        let inverse = match (&self.inverse, &other.inverse) {
            (Some(a), Some(b)) => Some(b.compose(a, &self.fp)?),
            _ => None,
        };
        Ok(FpAutomorphism {
            fp: self.fp.clone(),
            forward,
            inverse,
        })
    }

    /// `self^k`; negative powers use the declared inverse.
    pub fn power(&self, k: i64) -> Result<FpAutomorphism, AutError> {
        let base = if k < 0 { self.inverse()? } else { self.clone() };
        let mut acc = FpAutomorphism::identity(self.fp.clone());
        for _ in 0..k.unsigned_abs() {
            acc = base.compose(&acc)?;
        }
        Ok(acc)
    }

    /// Equality as maps, tested on generators.
    pub fn equals_on_generators(&self, other: &FpAutomorphism) -> bool {
        self.fp
            .generators()
            .iter()
            .all(|g| self.apply(g) == other.apply(g))
    }

    pub fn is_identity(&self) -> bool {
        self.fp.generators().iter().all(|g| self.apply(g) == *g)
    }

    /// σ is the identity: each factor is sent to a conjugate of itself.
    pub fn preserves_each_factor(&self) -> bool {
        self.forward
            .factors
            .iter()
            .enumerate()
            .all(|(i, f)| f.target == i + 1)
    }

    /// Identity on the free generators and, on each factor, an automorphism of
    /// that factor with no conjugation out of it.
    pub fn is_factor_direction(&self) -> bool {
        let fp = &self.fp;
        (0..fp.free_rank()).all(|i| {
            let g = Word::from_reduced(vec![Syllable::free(i)]);
            self.apply(&g) == g
        }) && fp.factors().iter().all(|h| {
            h.generators().into_iter().all(|x| {
                let img = self.apply(&Word::from_reduced(vec![Syllable::Factor(x)]));
                matches!(img.syllables(), [Syllable::Factor(y)] if y.factor == h.id())
            })
        })
    }

    /// Max over generators of `|φ(g)|`; the stabilization margin of `∂φ`.
    pub fn max_image_length(&self) -> usize {
        self.fp
            .generators()
            .iter()
            .map(|g| self.apply(g).len())
            .max()
            .unwrap_or(0)
            .max(1)
    }

    /// Finite order up to `cap`, by composing until the identity.
    ///
    /// The search also gives up, returning `None`, once some generator image
    /// of a power exceeds [`ORDER_IMAGE_CAP`] syllables.
    pub fn order(&self, cap: usize) -> Result<Option<usize>, AutError> {
        let mut acc = self.clone();
        for n in 1..=cap {
            if acc.is_identity() {
                return Ok(Some(n));
            }
            if acc.max_image_length() > ORDER_IMAGE_CAP {
                return Ok(None);
            }
            acc = self.compose(&acc)?;
        }
        Ok(None)
    }
}

/// Image length past which [`FpAutomorphism::order`] stops composing.
pub const ORDER_IMAGE_CAP: usize = 1 << 16;

/// `w, φ(w), ..., φ^k(w)`.
pub fn orbit(phi: &FpAutomorphism, w: &Word, k: usize) -> Vec<Word> {
    let mut out = vec![w.clone()];
    for _ in 0..k {
        let next = phi.apply(out.last().expect("non-empty"));
        out.push(next);
    }
    out
}

/// Hard cap on the source-ray depth probed while stabilizing `∂φ`.
const MAX_PROBE: usize = 1 << 22;

/// Emits the stabilized prefix of `φ(X)`: images of two nested source prefixes
/// are compared, and their agreement minus the margin is emitted.
#[derive(Clone)]
struct BoundaryImageSource {
    aut: FpAutomorphism,
    source: Ray,
    probe: usize,
    margin: usize,
}

impl RaySource for BoundaryImageSource {
    fn extend(&mut self, _fp: &crate::words::FreeProduct, current: &Word) -> Result<Word, RayError> {
        loop {
            let short = self.source.prefix_word(self.probe)?;
            let long = self.source.prefix_word(2 * self.probe)?;
            let a = self.aut.apply(&short);
            let b = self.aut.apply(&long);
            let agree = a.iter().zip(b.iter()).take_while(|(x, y)| x == y).count();
            let stable = agree.saturating_sub(self.margin);
            self.probe *= 2;
            if stable > current.len() {
                return Ok(b.prefix(stable));
            }
            if self.probe > MAX_PROBE {
                return Err(RayError::Unstable {
                    probe_depth: self.probe,
                });
            }
        }
    }

    fn box_clone(&self) -> Box<dyn RaySource> {
        Box::new(self.clone())
    }

    fn describe(&self) -> String {
        "boundary image".into()
    }
}

/// The ray `∂φ(X)`.
pub fn boundary_apply(phi: &FpAutomorphism, x: &Ray) -> Ray {
    let margin = phi.max_image_length();
    Ray::new(
        phi.fp.clone(),
        Word::empty(),
        Box::new(BoundaryImageSource {
            aut: phi.clone(),
            source: x.clone(),
            probe: 8 * margin,
            margin,
        }),
    )
}

/// Iterates `φ` on a seed word and emits the agreement of consecutive images.
#[derive(Clone)]
struct AttractorSource {
    aut: FpAutomorphism,
    image: Word,
}

impl RaySource for AttractorSource {
    fn extend(&mut self, _fp: &crate::words::FreeProduct, current: &Word) -> Result<Word, RayError> {
        for _ in 0..64 {
            let next = self.aut.apply(&self.image);
            let agree = self
                .image
                .iter()
                .zip(next.iter())
                .take_while(|(x, y)| x == y)
                .count();
            self.image = next;
            if agree > current.len() {
                return Ok(self.image.prefix(agree));
            }
        }
        Err(RayError::Stagnation {
            length: current.len(),
            reason: "iterates stopped agreeing on longer prefixes".into(),
        })
    }

    fn box_clone(&self) -> Box<dyn RaySource> {
        Box::new(self.clone())
    }

    fn describe(&self) -> String {
        "attractor".into()
    }
}

/// The limit `lim φ^k(seed)`, read off as the agreement of successive iterates.
pub fn attractor_ray(phi: &FpAutomorphism, seed: &Word) -> Ray {
    Ray::new(
        phi.fp.clone(),
        Word::empty(),
        Box::new(AttractorSource {
            aut: phi.clone(),
            image: seed.clone(),
        }),
    )
}

/// Finite-depth verdict on `∂φ(X) = X`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FixVerdict {
    /// Agreement through the probed depth; evidence only.
    FixedToDepth(usize),
    /// First differing syllable (1-based); a proof that `∂φ(X) ≠ X`.
    DivergesAt(usize),
}

impl FixVerdict {
    pub fn is_fixed(&self) -> bool {
        matches!(self, FixVerdict::FixedToDepth(_))
    }
}

pub fn fixes_boundary_point(phi: &FpAutomorphism, x: &mut Ray, depth: usize) -> Result<FixVerdict, AutError> {
    let mut image = boundary_apply(phi, x);
    let a = x.prefix(depth)?.to_vec();
    let b = image.prefix(depth)?;
    Ok(match a.iter().zip(b).position(|(s, t)| s != t) {
        Some(k) => FixVerdict::DivergesAt(k + 1),
        None => FixVerdict::FixedToDepth(depth),
    })
}

/// Evidence about the dynamics near a fixed point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Attraction {
    Attractive,
    RepulsiveUnderInverse,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassifyParams {
    pub depth: usize,
    pub window: usize,
    pub samples: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for ClassifyParams {
    fn default() -> Self {
        ClassifyParams {
            depth: 200,
            window: 10,
            samples: 20,
            iterations: 5,
            seed: 0x6b75_726f_7368,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Classification {
    pub evidence: Attraction,
    /// Final agreement depth `|φⁿ(Y) ∧ X|` for each sample under `φ`.
    pub forward_agreement: Vec<usize>,
    /// The same under the declared inverse.
    pub inverse_agreement: Vec<usize>,
}

/// A random syllable that can follow `prev` without reduction.
fn random_syllable(fp: &FreeProduct, rng: &mut ChaCha8Rng, prev: Option<&Syllable>, avoid: Option<&Syllable>) -> Syllable {
    let mut pool: Vec<Syllable> = (0..fp.free_rank())
        .flat_map(|i| [Syllable::free(i), Syllable::free_inverse(i)])
        .collect();
    for g in fp.factors().iter() {
        pool.extend(g.sample_elements().into_iter().map(Syllable::Factor));
    }
    pool.retain(|s| {
        let clash = match (prev, s) {
            (Some(p), s) => fp.reduce(&[p.clone(), s.clone()]).len() < 2,
            (None, _) => false,
        };
        !clash && Some(s) != avoid
    });
    pool.choose(rng).expect("non-empty syllable pool").clone()
}

/// Agreement reached by iterating `phi` on perturbations of `X`.
fn perturbation_agreements(
    phi: &FpAutomorphism,
    x: &mut Ray,
    params: &ClassifyParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, AutError> {
    let fp = phi.fp.clone();
    let n = params.window.max(1);
    let margin = phi.max_image_length();
    let cap = (16 * n).max(params.depth);
    let reference = x.prefix_word(cap + margin)?;
    let mut out = Vec::with_capacity(params.samples);
    for _ in 0..params.samples {
        let pos = n + rng.gen_range(0..=n / 2);
        let mut y = reference.prefix(pos).into_syllables();
        let s = random_syllable(&fp, rng, y.last(), reference.syllables().get(pos));
        y.push(s);
        for _ in 0..(2 * n) {
            let s = random_syllable(&fp, rng, y.last(), None);
            y.push(s);
        }
        let mut y = Word::from_reduced(y);
        let mut best = 0;
        for _ in 0..params.iterations {
            y = phi.apply(&y).prefix(cap + margin);
            let usable = y.len().saturating_sub(margin);
            let agree = y
                .iter()
                .zip(reference.iter())
                .take(usable)
                .take_while(|(a, b)| a == b)
                .count();
            best = agree;
            if agree >= 2 * n {
                break;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Samples rays `Y` with `|Y ∧ X| ≥ N` and checks whether iterating `φ` pulls
/// them to agreement depth `2N`; repeats with the declared inverse.
pub fn classify_fixed_point(
    phi: &FpAutomorphism,
    x: &mut Ray,
    params: &ClassifyParams,
) -> Result<Classification, AutError> {
    if let FixVerdict::DivergesAt(k) = fixes_boundary_point(phi, x, params.depth)? {
        return Err(AutError::NotFixed(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let forward = perturbation_agreements(phi, x, params, &mut rng)?;
    let inverse = perturbation_agreements(&phi.inverse()?, x, params, &mut rng)?;
    let target = 2 * params.window.max(1);
    let evidence = if forward.iter().all(|&a| a >= target) {
        Attraction::Attractive
    } else if inverse.iter().all(|&a| a >= target) {
        Attraction::RepulsiveUnderInverse
    } else {
        Attraction::Inconclusive
    };
    Ok(Classification {
        evidence,
        forward_agreement: forward,
        inverse_agreement: inverse,
    })
}

/// Flags `u` for review when both `φ` and `ι_u ∘ φ` fix an aperiodic `X` to
/// depth: for non-rational `X` the inner part is expected to be trivial.
pub fn inner_part_review(
    phi: &FpAutomorphism,
    u: &Word,
    x: &mut Ray,
    depth: usize,
    max_period: usize,
) -> Result<bool, AutError> {
    if u.is_empty() {
        return Ok(false);
    }
    let twisted = FpAutomorphism::inner(phi.fp.clone(), u).compose(phi)?;
    let both = fixes_boundary_point(phi, x, depth)?.is_fixed()
        && fixes_boundary_point(&twisted, x, depth)?.is_fixed();
    let aperiodic = crate::words::detect_rational(x, depth, max_period)?.is_none();
    Ok(both && aperiodic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::{FactorElement, FactorGroup, FactorSystem, Payload};

    fn fp_a() -> Arc<FreeProduct> {
        let sys = FactorSystem::new(vec![FactorGroup::cyclic(1, 5, "a").unwrap()]).unwrap();
        Arc::new(FreeProduct::with_rank(sys, 2))
    }

    fn w(fp: &FreeProduct, s: &str) -> Word {
        fp.parse_word(s).unwrap()
    }

    fn cyclic_twist(k: u32, inv: u32) -> FactorAutomorphism {
        let p = |k| FactorElement {
            factor: 1,
            payload: Payload::Power(k),
        };
        FactorAutomorphism {
            source: 1,
            target: 1,
            images: vec![p(k)],
            inverse_images: vec![p(inv)],
        }
    }

    fn phi_a(fp: &Arc<FreeProduct>) -> FpAutomorphism {
        let id = FactorAutomorphism::identity(fp.factor(1).unwrap());
        let fwd = AutImages {
            free: vec![w(fp, "b2 a@1"), w(fp, "b1 b2")],
            factors: vec![FactorImage {
                target: 1,
                conjugator: Word::empty(),
                twist: id.clone(),
            }],
        };
        let inv = AutImages {
            free: vec![w(fp, "b2 a@1 B1"), w(fp, "b1 a^4@1")],
            factors: vec![FactorImage {
                target: 1,
                conjugator: Word::empty(),
                twist: id,
            }],
        };
        FpAutomorphism::checked(fp.clone(), fwd, inv).unwrap()
    }

    #[test]
    fn apply_examples() {
        let fp = fp_a();
        let phi = phi_a(&fp);
        assert_eq!(phi.apply(&w(&fp, "b1 b2")), w(&fp, "b2 a@1 b1 b2"));
        assert_eq!(phi.apply(&w(&fp, "a^3@1")), w(&fp, "a^3@1"));
        let id = FpAutomorphism::identity(fp.clone());
        assert_eq!(id.apply(&w(&fp, "b1 a@1 B2")), w(&fp, "b1 a@1 B2"));
    }

    #[test]
    fn compose_examples() {
        let fp = fp_a();
        let phi = phi_a(&fp);
        assert!(phi.compose(&phi.inverse().unwrap()).unwrap().is_identity());
        let sq = phi.compose(&phi).unwrap();
        assert_eq!(sq.apply(&w(&fp, "b1")), w(&fp, "b1 b2 a@1"));
        let id = FpAutomorphism::identity(fp.clone());
        assert!(id.compose(&phi).unwrap().equals_on_generators(&phi));
        sq.verify().unwrap();
    }

    #[test]
    fn bad_inverse_is_rejected() {
        let fp = fp_a();
        let phi = phi_a(&fp);
        let mut inv = phi.inverse_images().unwrap().clone();
        inv.free[0] = w(&fp, "b2 B1");
        let err = FpAutomorphism::checked(fp.clone(), phi.images().clone(), inv).unwrap_err();
        assert!(matches!(err, AutError::InverseMismatch { .. }));
    }

    #[test]
    fn inner_examples() {
        let fp = fp_a();
        assert!(FpAutomorphism::inner(fp.clone(), &Word::empty()).is_identity());
        let i = FpAutomorphism::inner(fp.clone(), &w(&fp, "b1"));
        assert_eq!(i.apply(&w(&fp, "b2")), w(&fp, "b1 b2 B1"));
        assert_eq!(i.apply(&w(&fp, "b1")), w(&fp, "b1"));
        i.verify().unwrap();
    }

    #[test]
    fn boundary_apply_examples() {
        let fp = fp_a();
        let phi = phi_a(&fp);
        let sq = phi.power(2).unwrap();
        let mut xa = attractor_ray(&sq, &w(&fp, "b1"));
        assert_eq!(
            xa.prefix_word(8).unwrap(),
            w(&fp, "b1 b2 a@1 b2 a@1 b1 b2 a@1")
        );
        let id = FpAutomorphism::identity(fp.clone());
        let mut image = boundary_apply(&id, &xa);
        assert_eq!(image.prefix_word(100).unwrap(), xa.prefix_word(100).unwrap());

        let ia = FpAutomorphism::inner(fp.clone(), &w(&fp, "a@1"));
        let mut image = boundary_apply(&ia, &xa);
        assert_eq!(image.syllable(1).unwrap(), w(&fp, "a@1").syllables()[0]);
        assert_eq!(fixes_boundary_point(&ia, &mut xa, 50).unwrap(), FixVerdict::DivergesAt(1));
    }

    #[test]
    fn fixed_point_examples() {
        let fp = fp_a();
        let sq = phi_a(&fp).power(2).unwrap();
        let mut xa = attractor_ray(&sq, &w(&fp, "b1"));
        let id = FpAutomorphism::identity(fp.clone());
        assert!(fixes_boundary_point(&id, &mut xa, 100).unwrap().is_fixed());
        assert_eq!(fixes_boundary_point(&sq, &mut xa, 300).unwrap(), FixVerdict::FixedToDepth(300));
        let psi = FpAutomorphism::factor_twist(fp.clone(), cyclic_twist(2, 3)).unwrap();
        assert_eq!(fixes_boundary_point(&psi, &mut xa, 100).unwrap(), FixVerdict::DivergesAt(3));

        let u = w(&fp, "b1 b2");
        let mut r = fp.rational_ray(&u).unwrap();
        let iu = FpAutomorphism::inner(fp.clone(), &u);
        assert!(fixes_boundary_point(&iu, &mut r, 300).unwrap().is_fixed());
    }

    #[test]
    fn classification_examples() {
        let fp = fp_a();
        let sq = phi_a(&fp).power(2).unwrap();
        let mut xa = attractor_ray(&sq, &w(&fp, "b1"));
        let params = ClassifyParams::default();
        let c = classify_fixed_point(&sq, &mut xa, &params).unwrap();
        assert_eq!(c.evidence, Attraction::Attractive);
        let c = classify_fixed_point(&sq.inverse().unwrap(), &mut xa, &params).unwrap();
        assert_ne!(c.evidence, Attraction::Attractive);
        let id = FpAutomorphism::identity(fp.clone());
        let c = classify_fixed_point(&id, &mut xa, &params).unwrap();
        assert_eq!(c.evidence, Attraction::Inconclusive);
    }

    #[test]
    fn order_and_direction() {
        let fp = fp_a();
        let psi = FpAutomorphism::factor_twist(fp.clone(), cyclic_twist(2, 3)).unwrap();
        assert_eq!(psi.order(10).unwrap(), Some(4));
        assert!(psi.is_factor_direction());
        let sq = phi_a(&fp).power(2).unwrap();
        assert!(!sq.is_factor_direction());
        assert_eq!(sq.order(10).unwrap(), None);
        assert_eq!(sq.max_image_length(), 4);
    }

    #[test]
    fn inner_review_not_raised_for_nontrivial_twist() {
        let fp = fp_a();
        let sq = phi_a(&fp).power(2).unwrap();
        let mut xa = attractor_ray(&sq, &w(&fp, "b1"));
        assert!(!inner_part_review(&sq, &w(&fp, "b1"), &mut xa, 100, 10).unwrap());
        assert!(!inner_part_review(&sq, &Word::empty(), &mut xa, 100, 10).unwrap());
    }
}

//! Attractive fixed rays of a train-track representative, their adapted brick
//! splittings, and finite-depth stabilizer experiments.
//!
//! A vertex of the tree in the basepoint orbit is named by a reduced word `w`
//! (the vertex `w·*`). For `g = f^m` mated with `φ^m`, the segment
//! `[g^k(v), g^{k+1}(v)]` is the translate of the path of
//! `s_k = φ^{mk}(w⁻¹ φ^m(w))`, so the ray read from the basepoint is
//! `w · s_0 · s_1 · …` and its `k`-th prefix is `φ^{mk}(w)`.

use thiserror::Error;

use crate::autos::{fixes_boundary_point, AutError, FixVerdict, FpAutomorphism};
use crate::factors::FactorElement;
use crate::graphs::{
    find_n_paths, induced_automorphism, is_n_path, split_check, Dir, EdgePath, GraphError, GraphMap, MarkedGraph,
    NPathInventory, SplitFailure, Step,
};
use crate::lamination::{edge_subpath, LaminaryLanguage};
use crate::words::{FreeProduct, Ray, RayError, RaySource, Syllable, Word};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RaysError {
    #[error("no base vertex within radius {radius} and power cap {power_cap}")]
    Exhausted { radius: usize, power_cap: usize },
    #[error("junction cancellation at segment {level}")]
    JunctionCancellation { level: usize },
    #[error("first brick of the adapted splitting is singular")]
    FirstBrickSingular,
    #[error("splitting fails at iteration {} junction {}", .0.iteration, .0.junction)]
    Split(SplitFailure),
    #[error("path is not in the laminary language")]
    NotInLanguage,
    #[error("ray prefix too short to pump: need |h#(u0)| > {required}")]
    LanguageTooShallow { required: f64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Aut(#[from] AutError),
    #[error(transparent)]
    Ray(#[from] RayError),
}

/// The vertex `offset·*` and the power `m` used to build the ray.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BaseVertex {
    pub offset: Word,
    pub power: usize,
}

/// Search parameters for [`find_base_vertex`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchParams {
    pub radius: usize,
    pub power_cap: usize,
    /// Edge bound for the N-path inventory.
    pub npath_scale: usize,
    /// Segment growth is required for this many iterations.
    pub probes: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            radius: 2,
            power_cap: 4,
            npath_scale: 6,
            probes: 3,
        }
    }
}

/// Reduced words of exactly `len` syllables, in lexicographic syllable order.
pub fn reduced_words(fp: &FreeProduct, len: usize) -> Vec<Word> {
    let mut alphabet = Vec::new();
    for i in 0..fp.free_rank() {
        alphabet.push(Syllable::free(i));
        alphabet.push(Syllable::free_inverse(i));
    }
    for h in fp.factors().iter() {
        alphabet.extend(h.sample_elements().into_iter().map(Syllable::Factor));
    }
    alphabet.sort();
    let mut out = vec![Vec::<Syllable>::new()];
    for _ in 0..len {
        let mut next = Vec::new();
        for w in &out {
            for s in &alphabet {
                let ok = match (w.last(), s) {
                    (None, _) => true,
                    (Some(Syllable::Factor(x)), Syllable::Factor(y)) => x.factor != y.factor,
                    (Some(last), s) => fp.inverse_syllable(last) != *s,
                };
                if ok {
                    let mut v = w.clone();
                    v.push(s.clone());
                    next.push(v);
                }
            }
        }
        out = next;
    }
    out.into_iter().map(Word::from_reduced).collect()
}

/// Least `m`, then shortest and lexicographically least offset, such that the
/// ray from `v` has clean junctions, growing segments and a regular first
/// brick. When `target` is given the ray must also read as a prefix of it.
pub fn find_base_vertex(
    f: &GraphMap,
    params: SearchParams,
    mut target: Option<&mut Ray>,
) -> Result<BaseVertex, RaysError> {
    let g0 = f.graph();
    let fp = g0.free_product().clone();
    let phi = induced_automorphism(f)?;
    for m in 1..=params.power_cap {
        let g = f.power(m)?;
        let phi_m = phi.power(m as i64)?;
        let inventory = find_n_paths(&g, params.npath_scale)?;
        for len in 0..=params.radius {
            for w in reduced_words(&fp, len) {
                if accepts(&g, &phi_m, &inventory, &w, params.probes, target.as_deref_mut())? {
                    return Ok(BaseVertex { offset: w, power: m });
                }
            }
        }
    }
    Err(RaysError::Exhausted {
        radius: params.radius,
        power_cap: params.power_cap,
    })
}

fn accepts(
    g: &GraphMap,
    phi_m: &FpAutomorphism,
    inventory: &NPathInventory,
    w: &Word,
    probes: usize,
    target: Option<&mut Ray>,
) -> Result<bool, RaysError> {
    let graph = g.graph();
    let fp = graph.free_product();
    let s = fp.mul(&fp.inverse(w), &phi_m.apply(w));
    if s.is_empty() {
        return Ok(false);
    }
    if fp.concat(w, &s).1 != 0 {
        return Ok(false);
    }
    let lead = graph.path_of_word(w);
    let p0 = graph.path_of_word(&s);
    if graph.concat(&lead, &p0)?.1 != 0 {
        return Ok(false);
    }
    let mut segs = vec![p0];
    for _ in 0..probes {
        segs.push(g.f_sharp(segs.last().expect("non-empty")));
    }
    if graph.concat(&segs[0], &segs[1])?.1 != 0 {
        return Ok(false);
    }
    if segs.windows(2).any(|p| p[1].edge_count() <= p[0].edge_count()) {
        return Ok(false);
    }
    match adapted_splitting(g, inventory, &segs[0], 0) {
        Ok(_) => {}
        Err(RaysError::FirstBrickSingular) | Err(RaysError::Split(_)) => return Ok(false),
        Err(e) => return Err(e),
    }
    if let Some(x) = target {
        let mut word = phi_m.apply(w);
        for _ in 0..probes.min(2) {
            word = phi_m.apply(&word);
        }
        let prefix = x.prefix(word.len())?;
        if prefix != word.syllables() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// One brick of a splitting.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Brick {
    pub path: EdgePath,
    pub singular: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BrickSplitting {
    pub bricks: Vec<Brick>,
    /// Turn element between consecutive bricks.
    pub junctions: Vec<Option<FactorElement>>,
    pub level: usize,
}

impl BrickSplitting {
    pub fn paths(&self) -> Vec<EdgePath> {
        self.bricks.iter().map(|b| b.path.clone()).collect()
    }

    pub fn max_singular_length(&self, graph: &MarkedGraph) -> f64 {
        self.bricks
            .iter()
            .filter(|b| b.singular)
            .map(|b| graph.length(&b.path))
            .fold(0.0, f64::max)
    }

    /// First brick a regular edge, and no two adjacent singular bricks.
    pub fn shape_ok(&self) -> bool {
        let first = self.bricks.first().is_some_and(|b| !b.singular && b.path.edge_count() == 1);
        first && self.bricks.windows(2).all(|p| !(p[0].singular && p[1].singular))
    }
}

/// Edges become regular bricks; maximal runs of N-path bricks are merged into
/// singular bricks. The result is validated with a 4-step split check.
pub fn adapted_splitting(
    g: &GraphMap,
    inventory: &NPathInventory,
    segment: &EdgePath,
    level: usize,
) -> Result<BrickSplitting, RaysError> {
    let graph = g.graph();
    let proj = segment.projection();
    let positions = segment.edge_positions();
    let n = proj.len();
    // (start, end, singular) in edge indices
    let mut tokens: Vec<(usize, usize, bool)> = Vec::new();
    let mut i = 0;
    while i < n {
        let mut best = 0;
        for class in &inventory.classes {
            let key = &class.key;
            let rev: Vec<Dir> = key.iter().rev().map(|d| d.rev()).collect();
            let len = key.len();
            if len <= best || i + len > n {
                continue;
            }
            let window = &proj[i..i + len];
            if window == key.as_slice() || window == rev.as_slice() {
                let sub = edge_subpath(graph, segment, &positions, i, i + len);
                if is_n_path(g, &sub) {
                    best = len;
                }
            }
        }
        if best > 0 {
            match tokens.last_mut() {
                Some(t) if t.2 => t.1 = i + best,
                _ => tokens.push((i, i + best, true)),
            }
            i += best;
        } else {
            tokens.push((i, i + 1, false));
            i += 1;
        }
    }
    if tokens.first().is_some_and(|t| t.2) {
        return Err(RaysError::FirstBrickSingular);
    }
    let mut bricks = Vec::new();
    let mut junctions = Vec::new();
    for (k, &(a, b, singular)) in tokens.iter().enumerate() {
        bricks.push(Brick {
            path: edge_subpath(graph, segment, &positions, a, b),
            singular,
        });
        if k + 1 < tokens.len() {
            let between = &segment.steps[positions[b - 1] + 1..positions[b]];
            junctions.push(between.iter().find_map(|s| match s {
                Step::Turn(x) => Some(x.clone()),
                Step::Edge(_) => None,
            }));
        }
    }
    let splitting = BrickSplitting {
        bricks,
        junctions,
        level,
    };
    if !splitting.bricks.is_empty() {
        if let Some(fail) = split_check(g, segment, &splitting.paths(), &splitting.junctions, 4)? {
            return Err(RaysError::Split(fail));
        }
    }
    Ok(splitting)
}

/// The ray `R_v` built through a number of segments.
#[derive(Clone, Debug)]
pub struct AttractiveRay {
    map: GraphMap,
    phi_m: FpAutomorphism,
    pub base: BaseVertex,
    pub lead: EdgePath,
    pub segments: Vec<EdgePath>,
    /// `φ^{mk}(w)` for `k` built segments.
    pub word: Word,
    pub inventory: NPathInventory,
}

/// Continues a ray word by applying `φ^m` to the current prefix.
#[derive(Clone)]
struct SegmentSource {
    aut: FpAutomorphism,
}

impl RaySource for SegmentSource {
    fn extend(&mut self, _fp: &FreeProduct, current: &Word) -> Result<Word, RayError> {
        Ok(self.aut.apply(current))
    }

    fn box_clone(&self) -> Box<dyn RaySource> {
        Box::new(self.clone())
    }

    fn describe(&self) -> String {
        "attractive segments".into()
    }
}

impl AttractiveRay {
    /// The representative `g = f^m` whose segments these are.
    pub fn map(&self) -> &GraphMap {
        &self.map
    }

    pub fn automorphism(&self) -> &FpAutomorphism {
        &self.phi_m
    }

    /// The boundary point, continuing lazily past the built segments.
    pub fn ray(&self) -> Ray {
        Ray::new(
            self.map.graph().free_product().clone(),
            self.word.clone(),
            Box::new(SegmentSource { aut: self.phi_m.clone() }),
        )
    }

    /// `[*, v]` followed by every built segment.
    pub fn path(&self) -> EdgePath {
        let mut steps = self.lead.steps.clone();
        for s in &self.segments {
            steps.extend(s.steps.iter().cloned());
        }
        EdgePath {
            start: self.lead.start,
            steps,
        }
    }

    /// The same ray with only the first `levels` segments kept.
    ///
    /// The word is left as is; it is still a prefix of the same boundary point.
    pub fn truncated(&self, levels: usize) -> AttractiveRay {
        AttractiveRay {
            segments: self.segments[..levels.min(self.segments.len())].to_vec(),
            ..self.clone()
        }
    }

    /// Fresh adapted splitting of each built segment.
    pub fn splittings(&self) -> Result<Vec<BrickSplitting>, RaysError> {
        self.segments
            .iter()
            .enumerate()
            .map(|(k, s)| adapted_splitting(&self.map, &self.inventory, s, k))
            .collect()
    }

    /// `b_{i,k} = g^k_#(b_i)` from the level-0 splitting, for each built level.
    pub fn induced_splittings(&self) -> Result<Vec<BrickSplitting>, RaysError> {
        let Some(first) = self.segments.first() else {
            return Ok(Vec::new());
        };
        let base = adapted_splitting(&self.map, &self.inventory, first, 0)?;
        let mut out = vec![base.clone()];
        let graph = self.map.graph();
        let factors = graph.free_product().factors();
        let mut current = base;
        for k in 1..self.segments.len() {
            let mut junctions = Vec::new();
            for (j, x) in current.junctions.iter().enumerate() {
                let v = graph.end(&current.bricks[j].path);
                junctions.push(match (x, self.map.twist(v)) {
                    (Some(x), Some(t)) => t.apply(factors, x).map_err(GraphError::from)?,
                    _ => None,
                });
            }
            let bricks: Vec<Brick> = current
                .bricks
                .iter()
                .map(|b| Brick {
                    path: self.map.f_sharp(&b.path),
                    singular: b.singular,
                })
                .collect();
            current = BrickSplitting {
                bricks,
                junctions,
                level: k,
            };
            let total: usize = current.bricks.iter().map(|b| b.path.edge_count()).sum();
            if total != self.segments[k].edge_count() {
                return Err(RaysError::JunctionCancellation { level: k });
            }
            out.push(current.clone());
        }
        Ok(out)
    }
}

/// Builds `k` segments of `R_v` for `g = f^m`, checking every junction.
pub fn build_ray(f: &GraphMap, base: &BaseVertex, k: usize, npath_scale: usize) -> Result<AttractiveRay, RaysError> {
    let graph = f.graph().clone();
    let fp = graph.free_product().clone();
    let g = f.power(base.power)?;
    let phi_m = induced_automorphism(f)?.power(base.power as i64)?;
    let w = &base.offset;
    let s = fp.mul(&fp.inverse(w), &phi_m.apply(w));
    let lead = graph.path_of_word(w);
    let mut segments: Vec<EdgePath> = Vec::new();
    let mut word = w.clone();
    let mut previous = lead.clone();
    for level in 0..k {
        let seg = match segments.last() {
            None => graph.path_of_word(&s),
            Some(p) => g.f_sharp(p),
        };
        if graph.concat(&previous, &seg)?.1 != 0 {
            return Err(RaysError::JunctionCancellation { level });
        }
        let (next, steps) = fp.concat(&word, &graph.word_of_path(&seg));
        if steps != 0 {
            return Err(RaysError::JunctionCancellation { level });
        }
        word = next;
        previous = seg.clone();
        segments.push(seg);
    }
    let inventory = find_n_paths(&g, npath_scale)?;
    Ok(AttractiveRay {
        map: g,
        phi_m,
        base: base.clone(),
        lead,
        segments,
        word,
        inventory,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SingularLengths {
    /// Largest singular brick per level.
    pub per_level: Vec<f64>,
    pub ell0: f64,
    /// No level exceeds the maximum already reached at level 0.
    pub bounded: bool,
}

/// `ℓ₀`: the maximal singular brick length seen through the built levels.
pub fn max_singular_length(ray: &AttractiveRay) -> Result<SingularLengths, RaysError> {
    let graph = ray.map.graph();
    let per_level: Vec<f64> = ray
        .splittings()?
        .iter()
        .map(|s| s.max_singular_length(graph))
        .collect();
    let ell0 = per_level.iter().cloned().fold(0.0, f64::max);
    let bounded = per_level.first().is_none_or(|&first| per_level.iter().all(|&x| x <= first + 1e-12));
    Ok(SingularLengths {
        per_level,
        ell0,
        bounded,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Occurrence {
    /// `h_{#,C}(u)` sits at `position` (edge index along the ray) inside
    /// regular brick `brick` of level `level`.
    Found {
        position: usize,
        level: usize,
        brick: usize,
        image_edges: usize,
        pumped_edges: usize,
    },
    NotFound {
        scanned: usize,
    },
}

/// Pumps `U = u u₀ u` from the ray with `|h_#(u₀)| > ℓ₀ + 2C`, then looks for
/// `h_{#,C}(u)` wholly inside a regular brick within `budget` ray edges.
pub fn occurrence_in_regular_brick(
    ray: &AttractiveRay,
    lang: &LaminaryLanguage,
    u: &EdgePath,
    h: &GraphMap,
    c: f64,
    budget: usize,
) -> Result<Occurrence, RaysError> {
    let proj_u = u.projection();
    if proj_u.is_empty() || !lang.admits(&proj_u) {
        return Err(RaysError::NotInLanguage);
    }
    let graph = ray.map.graph();
    let ell0 = max_singular_length(ray)?.ell0;
    let required = ell0 + 2.0 * c;
    let path = ray.path();
    let positions = path.edge_positions();
    let proj = path.projection();
    let limit = proj.len().min(budget);
    let hits: Vec<usize> = (0..=limit.saturating_sub(proj_u.len()))
        .filter(|&i| i + proj_u.len() <= limit && proj[i..i + proj_u.len()] == proj_u[..])
        .collect();
    let mut pumped = None;
    'pump: for (a, &i) in hits.iter().enumerate() {
        for &j in &hits[a + 1..] {
            if j <= i + proj_u.len() {
                continue;
            }
            let u0 = edge_subpath(graph, &path, &positions, i + proj_u.len(), j);
            if graph.length(&h.f_sharp(&u0)) > required + 1e-12 {
                pumped = Some((i, j));
                break 'pump;
            }
        }
    }
    let (i, j) = pumped.ok_or(RaysError::LanguageTooShallow { required })?;
    let big_u = edge_subpath(graph, &path, &positions, i, j + proj_u.len());
    let u_here = edge_subpath(graph, &path, &positions, i, i + proj_u.len());
    let target = h.f_sharp_c(&u_here, c).projection();
    let pumped_edges = big_u.edge_count();

    // regular brick intervals along the ray, by edge index
    let mut offset = ray.lead.edge_count();
    let mut regions = Vec::new();
    for split in ray.induced_splittings()? {
        for (b, brick) in split.bricks.iter().enumerate() {
            let len = brick.path.edge_count();
            if !brick.singular {
                regions.push((offset, offset + len, split.level, b));
            }
            offset += len;
        }
    }
    for &(start, end, level, brick) in &regions {
        if start >= limit {
            break;
        }
        let end = end.min(limit);
        if target.len() > end - start {
            continue;
        }
        let found = (start..=end - target.len()).find(|&p| proj[p..p + target.len()] == target[..]);
        if let Some(position) = found {
            return Ok(Occurrence::Found {
                position,
                level,
                brick,
                image_edges: target.len(),
                pumped_edges,
            });
        }
    }
    Ok(Occurrence::NotFound { scanned: limit })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StabReport {
    pub verdict: FixVerdict,
    /// `None` means the order exceeds the cap.
    pub order: Option<usize>,
    pub order_cap: usize,
    pub factor_direction: bool,
    pub preserves_each_factor: bool,
    /// A finite-order non-identity automorphism preserving each factor that
    /// appears to fix the point.
    pub contradicts: bool,
}

pub fn stab_check(psi: &FpAutomorphism, x: &mut Ray, depth: usize, order_cap: usize) -> Result<StabReport, RaysError> {
    let verdict = fixes_boundary_point(psi, x, depth)?;
    let order = psi.order(order_cap)?;
    let preserves = psi.preserves_each_factor();
    let contradicts = verdict.is_fixed() && preserves && !psi.is_identity() && order.is_some();
    Ok(StabReport {
        verdict,
        order,
        order_cap,
        factor_direction: psi.is_factor_direction(),
        preserves_each_factor: preserves,
        contradicts,
    })
}

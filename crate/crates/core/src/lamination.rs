//! Depth-bounded laminary language of a train-track representative.
//!
//! Words are quotient edge paths with turn data forgotten. One witness with
//! turn data is kept per word so that maps acting on vertex groups can be
//! applied to it.

use std::collections::{BTreeMap, BTreeSet};

use crate::graphs::{canonical, growing_edges, Dir, EdgeId, EdgePath, GraphMap, MarkedGraph, MAX_ITERATE_EDGES};

/// Where a word was first seen.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Witness {
    pub edge: EdgeId,
    pub iteration: usize,
    pub path: EdgePath,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LaminaryLanguage {
    depth: usize,
    words: BTreeMap<Vec<Dir>, Witness>,
    /// Number of words present after each iteration level, starting at 1.
    pub growth_log: Vec<usize>,
    /// First level that added nothing new.
    pub saturated_at: Option<usize>,
}

impl LaminaryLanguage {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, w: &[Dir]) -> bool {
        self.words.contains_key(w)
    }

    pub fn words(&self) -> impl Iterator<Item = &Vec<Dir>> {
        self.words.keys()
    }

    pub fn witness(&self, w: &[Dir]) -> Option<&Witness> {
        self.words.get(w)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<Dir>, &Witness)> {
        self.words.iter()
    }

    /// Word count per length, lengths 1..=depth.
    pub fn counts_by_length(&self) -> Vec<usize> {
        let mut counts = vec![0; self.depth];
        for w in self.words.keys() {
            counts[w.len() - 1] += 1;
        }
        counts
    }

    /// Subpath- and reversal-closure recomputed from scratch.
    pub fn is_closed(&self) -> bool {
        self.words.keys().all(|w| {
            let rev: Vec<Dir> = w.iter().rev().map(|d| d.rev()).collect();
            self.contains(&rev)
                && (1..w.len()).all(|n| w.windows(n).all(|sub| self.contains(sub)))
        })
    }

    /// Is every length-`depth` window of `path` a word? Shorter paths must be
    /// words themselves.
    pub fn admits(&self, path: &[Dir]) -> bool {
        if path.len() <= self.depth {
            path.is_empty() || self.contains(path)
        } else {
            path.windows(self.depth).all(|w| self.contains(w))
        }
    }
}

/// Subpath of `p` spanning edges `from..to`, with the turn data between them.
pub fn edge_subpath(graph: &MarkedGraph, p: &EdgePath, positions: &[usize], from: usize, to: usize) -> EdgePath {
    let first = positions[from];
    let last = positions[to - 1];
    let start = match p.steps[first] {
        crate::graphs::Step::Edge(d) => graph.origin(d),
        crate::graphs::Step::Turn(_) => unreachable!("edge position"),
    };
    EdgePath {
        start,
        steps: p.steps[first..=last].to_vec(),
    }
}

fn add_subpaths(
    graph: &MarkedGraph,
    words: &mut BTreeMap<Vec<Dir>, Witness>,
    p: &EdgePath,
    depth: usize,
    edge: EdgeId,
    iteration: usize,
) {
    let positions = p.edge_positions();
    let proj = p.projection();
    for len in 1..=depth.min(proj.len()) {
        for i in 0..=proj.len() - len {
            let key = &proj[i..i + len];
            if words.contains_key(key) {
                continue;
            }
            let path = edge_subpath(graph, p, &positions, i, i + len);
            let rev = graph.reverse(&path);
            words.insert(
                key.to_vec(),
                Witness {
                    edge,
                    iteration,
                    path,
                },
            );
            words.entry(rev.projection()).or_insert(Witness {
                edge,
                iteration,
                path: rev,
            });
        }
    }
}

/// All subpaths of length at most `depth` of `f^k_#(e)`, `1 ≤ k ≤ kmax`, and
/// their reversals. Stops at the first level adding nothing.
pub fn generate_language(f: &GraphMap, depth: usize, kmax: usize) -> LaminaryLanguage {
    let g = f.graph();
    let mut words = BTreeMap::new();
    let mut growth_log = Vec::new();
    let mut saturated_at = None;
    if depth > 0 {
        let mut paths: Vec<EdgePath> = (0..g.edges().len())
            .map(|e| EdgePath {
                start: g.edges()[e].origin,
                steps: vec![crate::graphs::Step::Edge(Dir::forward(e))],
            })
            .collect();
        for k in 1..=kmax {
            let before = words.len();
            for (e, p) in paths.iter_mut().enumerate() {
                *p = f.f_sharp(p);
                add_subpaths(g, &mut words, p, depth, e, k);
            }
            growth_log.push(words.len());
            if k > 1 && words.len() == before {
                saturated_at = Some(k);
                break;
            }
            if paths.iter().map(|p| p.steps.len()).sum::<usize>() > MAX_ITERATE_EDGES {
                break;
            }
        }
    }
    LaminaryLanguage {
        depth,
        words,
        growth_log,
        saturated_at,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenerationVerdict {
    pub ok: bool,
    /// Largest iteration needed over all (edge, word) pairs checked.
    pub max_k: usize,
    pub failure: Option<(EdgeId, Vec<Dir>)>,
    /// Edges without exponential growth, left unchecked.
    pub skipped_edges: Vec<EdgeId>,
}

/// For every exponentially growing edge `e` and every word `w`, finds
/// `k ≤ kcap` with `w` (or its reverse) a subpath of `f^k_#(e)`.
pub fn check_generation_property(lang: &LaminaryLanguage, f: &GraphMap, kcap: usize) -> GenerationVerdict {
    let g = f.graph();
    let growing = growing_edges(f);
    let skipped_edges: Vec<EdgeId> = (0..g.edges().len()).filter(|e| !growing.contains(e)).collect();
    let mut max_k = 0;
    for &e in &growing {
        let mut pending: BTreeSet<&Vec<Dir>> = lang.words().collect();
        let mut p = EdgePath {
            start: g.edges()[e].origin,
            steps: vec![crate::graphs::Step::Edge(Dir::forward(e))],
        };
        for k in 1..=kcap {
            if pending.is_empty() {
                break;
            }
            p = f.f_sharp(&p);
            let proj = p.projection();
            let mut seen = BTreeSet::new();
            for len in 1..=lang.depth().min(proj.len()) {
                for w in proj.windows(len) {
                    seen.insert(w.to_vec());
                    seen.insert(w.iter().rev().map(|d| d.rev()).collect::<Vec<_>>());
                }
            }
            let before = pending.len();
            pending.retain(|w| !seen.contains(*w));
            if pending.len() < before {
                max_k = max_k.max(k);
            }
            if p.steps.len() > MAX_ITERATE_EDGES {
                break;
            }
        }
        if let Some(w) = pending.into_iter().next() {
            return GenerationVerdict {
                ok: false,
                max_k,
                failure: Some((e, w.clone())),
                skipped_edges,
            };
        }
    }
    GenerationVerdict {
        ok: true,
        max_k,
        failure: None,
        skipped_edges,
    }
}

/// Least window `L′` such that every length-`l` subword of `segment` occurs
/// inside every length-`L′` window. `None` when the segment is shorter than
/// `l` or `l` is zero.
pub fn quasi_periodicity_constant(segment: &[Dir], l: usize) -> Option<usize> {
    let n = segment.len();
    if l == 0 || n < l {
        return None;
    }
    let mut positions: BTreeMap<&[Dir], Vec<usize>> = BTreeMap::new();
    for (i, w) in segment.windows(l).enumerate() {
        positions.entry(w).or_default().push(i);
    }
    let mut best = l;
    for ps in positions.values() {
        best = best.max(ps[0] + l).max(n - ps[ps.len() - 1]);
        for pair in ps.windows(2) {
            best = best.max(pair[1] - pair[0] + l - 1);
        }
    }
    Some(best)
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilizationReport {
    pub checked: usize,
    /// Words whose trimmed image is empty.
    pub skipped: usize,
    pub failed: usize,
    pub first_failure: Option<(Vec<Dir>, Vec<Dir>)>,
    /// `C` was below the bounded-cancellation bound of `h`.
    pub constant_below_bound: bool,
}

impl StabilizationReport {
    pub fn stabilizes(&self) -> bool {
        self.failed == 0
    }
}

/// Checks `h_{#,C}(w) ∈ 𝓛` for every word long enough to survive trimming.
/// Images longer than the depth are checked window by window.
pub fn stabilizes_language(h: &GraphMap, lang: &LaminaryLanguage, c: f64) -> StabilizationReport {
    let bound = crate::graphs::lip_qvol_bcc(h).map(|b| b.bcc_bound).unwrap_or(f64::INFINITY);
    let mut report = StabilizationReport {
        checked: 0,
        skipped: 0,
        failed: 0,
        first_failure: None,
        constant_below_bound: c + 1e-12 < bound,
    };
    for (w, witness) in lang.iter() {
        let image = h.f_sharp_c(&witness.path, c);
        if image.edge_count() == 0 {
            report.skipped += 1;
            continue;
        }
        report.checked += 1;
        let proj = image.projection();
        if !lang.admits(&proj) {
            report.failed += 1;
            if report.first_failure.is_none() {
                report.first_failure = Some((w.clone(), proj));
            }
        }
    }
    report
}

/// Canonical leaf segment used for reporting: `f^k_#(e)`.
pub fn leaf_segment(f: &GraphMap, edge: EdgeId, k: usize) -> Option<EdgePath> {
    let g = f.graph();
    f.iterate(
        &EdgePath {
            start: g.edges()[edge].origin,
            steps: vec![crate::graphs::Step::Edge(Dir::forward(edge))],
        },
        k,
    )
}

/// Words up to reversal, for compact listings.
pub fn unoriented_words(lang: &LaminaryLanguage) -> BTreeSet<Vec<Dir>> {
    lang.words().map(|w| canonical(w)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::{FactorGroup, FactorSystem};
    use crate::graphs::{lip_qvol_bcc, MarkedGraph};
    use crate::words::FreeProduct;
    use std::sync::Arc;

    fn rose(factors: Vec<FactorGroup>, rank: usize) -> Arc<MarkedGraph> {
        let sys = FactorSystem::new(factors).unwrap();
        Arc::new(MarkedGraph::rose(Arc::new(FreeProduct::with_rank(sys, rank))).unwrap())
    }

    fn map_from(g: &Arc<MarkedGraph>, images: &[&str]) -> GraphMap {
        let edge_images = images
            .iter()
            .enumerate()
            .map(|(e, s)| g.parse_path(s, Some(g.edges()[e].origin)).unwrap())
            .collect();
        let id = GraphMap::identity(g.clone());
        let twists = (0..g.vertices().len()).map(|v| id.twist(v).cloned()).collect();
        let vertex_images = (0..g.vertices().len()).collect();
        GraphMap::new(g.clone(), vertex_images, edge_images, twists).unwrap()
    }

    fn f_a() -> GraphMap {
        let g = rose(vec![FactorGroup::cyclic(1, 5, "a").unwrap()], 2);
        map_from(&g, &["e2 h (a@1) H", "e1 e2", "h"])
    }

    fn d(e: usize) -> Dir {
        Dir::forward(e)
    }

    #[test]
    fn language_examples() {
        let f = f_a();
        let lang = generate_language(&f, 1, 4);
        let mut all: Vec<Vec<Dir>> = (0..3).flat_map(|e| [vec![d(e)], vec![d(e).rev()]]).collect();
        all.sort();
        assert_eq!(lang.words().cloned().collect::<Vec<_>>(), all);
        assert!(generate_language(&f, 0, 4).is_empty());
        let id = GraphMap::identity(f.graph().clone());
        let lang = generate_language(&id, 3, 5);
        assert_eq!(lang.len(), 6);
        assert!(lang.words().all(|w| w.len() == 1));
    }

    #[test]
    fn language_is_closed_and_saturates() {
        let f = f_a();
        let lang = generate_language(&f, 6, 20);
        assert!(lang.is_closed());
        assert!(lang.saturated_at.is_some_and(|k| k <= 20));
        let f2 = f.compose(&f).unwrap();
        let lang2 = generate_language(&f2, 6, 20);
        assert_eq!(lang.words().collect::<Vec<_>>(), lang2.words().collect::<Vec<_>>());
    }

    #[test]
    fn generation_property() {
        let f = f_a();
        let lang = generate_language(&f, 4, 20);
        let v = check_generation_property(&lang, &f, 15);
        assert!(v.ok, "{:?}", v.failure);
        assert!(v.max_k <= 10);
        assert_eq!(v.skipped_edges, vec![2]);
        let empty = generate_language(&f, 0, 4);
        assert!(check_generation_property(&empty, &f, 15).ok);

        let g = rose(vec![], 2);
        let red = map_from(&g, &["e1 e1", "e2 e1 e2"]);
        let lang = generate_language(&red, 3, 10);
        let v = check_generation_property(&lang, &red, 10);
        assert!(!v.ok);
        let (e, w) = v.failure.unwrap();
        assert_eq!(e, 0);
        assert!(w.iter().any(|x| x.edge == 1));
    }

    fn qp_oracle(seg: &[Dir], l: usize) -> Option<usize> {
        if l == 0 || seg.len() < l {
            return None;
        }
        let types: BTreeSet<&[Dir]> = seg.windows(l).collect();
        (l..=seg.len()).find(|&w| {
            seg.windows(w)
                .all(|win| types.iter().all(|t| win.windows(l).any(|x| x == *t)))
        })
    }

    #[test]
    fn quasi_periodicity() {
        let seg: Vec<Dir> = (0..40).map(|i| d(i % 2)).collect();
        assert_eq!(quasi_periodicity_constant(&seg, 2), qp_oracle(&seg, 2));
        assert_eq!(quasi_periodicity_constant(&seg, 2), Some(3));
        assert_eq!(quasi_periodicity_constant(&seg[..1], 2), None);

        let f = f_a();
        let leaf = leaf_segment(&f, 0, 8).unwrap().projection();
        let lp = quasi_periodicity_constant(&leaf, 3).unwrap();
        assert_eq!(Some(lp), qp_oracle(&leaf, 3));
        assert!(lp <= 60);
        let mut prev = 0;
        for l in 1..=6 {
            let c = quasi_periodicity_constant(&leaf, l).unwrap();
            assert_eq!(Some(c), qp_oracle(&leaf, l));
            assert!(c >= prev);
            prev = c;
        }
    }

    #[test]
    fn stabilization_examples() {
        let f = f_a();
        let lang = generate_language(&f, 6, 20);
        let c = lip_qvol_bcc(&f).unwrap().bcc_bound;
        // at depth 6 every image is short enough to vanish under C = 5
        let r = stabilizes_language(&f, &lang, c);
        assert!(r.stabilizes(), "{:?}", r.first_failure);
        assert_eq!(r.checked, 0);
        let r = stabilizes_language(&f, &lang, 1.0);
        assert!(r.stabilizes(), "{:?}", r.first_failure);
        assert!(r.checked > 0);
        assert!(r.constant_below_bound);
        let id = GraphMap::identity(f.graph().clone());
        let r = stabilizes_language(&id, &lang, 0.0);
        assert!(r.stabilizes());
        assert_eq!(r.skipped, 0);
        // the Lipschitz bound is not sharp for the identity
        assert!(r.constant_below_bound);
        // the reducible map's words leave the language of f
        let g = f.graph();
        let odd = map_from(g, &["e1 e1 e1", "e2", "h"]);
        let r = stabilizes_language(&odd, &lang, 0.0);
        assert!(!r.stabilizes());
        assert!(r.constant_below_bound);
    }
}

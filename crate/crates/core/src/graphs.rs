//! Quotient graphs of groups for trees in relative outer space, edge paths
//! with vertex-group turn data, topological representatives, and the
//! train-track toolkit built on them.
//!
//! Trees are never materialized. A [`MarkedGraph`] is the quotient graph with
//! one vertex per factor orbit, trivial edge groups, a spanning tree, and a
//! free letter on every non-tree edge. An [`EdgePath`] alternates oriented
//! edges with optional turn elements at non-free vertices; this is enough to
//! name any path of the tree up to translation.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use thiserror::Error;

use crate::autos::{AutImages, FactorImage, FpAutomorphism};
use crate::factors::{FactorAutomorphism, FactorElement, FactorError, FactorId};
use crate::words::{FreeProduct, Syllable, Word, WordError};

pub type VertexId = usize;
pub type EdgeId = usize;

const EPS: f64 = 1e-12;

/// Hard cap on path sizes produced while iterating a map.
pub const MAX_ITERATE_EDGES: usize = 4_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("cannot parse path `{text}`: {reason}")]
    Parse { text: String, reason: String },
    #[error("path is disconnected at step {position}")]
    Disconnected { position: usize },
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("invalid graph map: {0}")]
    InvalidMap(String),
    #[error("marking inconsistency at edge `{edge}`: {reason}")]
    Marking { edge: String, reason: String },
    #[error("edge `{0}` is collapsed by the map")]
    CollapsedEdge(String),
    #[error("edge `{0}` has zero length")]
    ZeroLength(String),
    #[error("bricks do not concatenate to the given path")]
    BrickMismatch,
    #[error("search too large: {0}")]
    TooLarge(String),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Word(#[from] WordError),
}

/// An oriented edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Dir {
    pub edge: EdgeId,
    pub reversed: bool,
}

impl Dir {
    pub fn forward(edge: EdgeId) -> Self {
        Dir {
            edge,
            reversed: false,
        }
    }

    pub fn rev(self) -> Self {
        Dir {
            edge: self.edge,
            reversed: !self.reversed,
        }
    }

    pub fn index(self) -> usize {
        2 * self.edge + self.reversed as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vertex {
    pub name: String,
    pub factor: Option<FactorId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub name: String,
    pub origin: VertexId,
    pub terminus: VertexId,
    pub length: f64,
    /// Marking word for non-tree edges; `None` for spanning-tree edges.
    pub label: Option<Word>,
}

/// One step of an edge path.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Step {
    Edge(Dir),
    /// A non-trivial element of the stabilizer of the current non-free vertex.
    Turn(FactorElement),
}

/// A path in the tree, up to translation, read in the quotient.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgePath {
    pub start: VertexId,
    pub steps: Vec<Step>,
}

impl EdgePath {
    pub fn empty(start: VertexId) -> Self {
        EdgePath {
            start,
            steps: Vec::new(),
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = Dir> + '_ {
        self.steps.iter().filter_map(|s| match s {
            Step::Edge(d) => Some(*d),
            Step::Turn(_) => None,
        })
    }

    /// The quotient projection: edges only, turn data forgotten.
    pub fn projection(&self) -> Vec<Dir> {
        self.edges().collect()
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Drops leading and trailing turn elements.
    pub fn strip_turns(mut self) -> Self {
        while matches!(self.steps.last(), Some(Step::Turn(_))) {
            self.steps.pop();
        }
        let lead = self
            .steps
            .iter()
            .take_while(|s| matches!(s, Step::Turn(_)))
            .count();
        self.steps.drain(..lead);
        self
    }

    /// Indices into `steps` of the edge steps.
    pub fn edge_positions(&self) -> Vec<usize> {
        self.steps
            .iter()
            .enumerate()
            .filter(|(_, s)| matches!(s, Step::Edge(_)))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Finite quotient graph of groups with trivial edge groups and a marking.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkedGraph {
    fp: Arc<FreeProduct>,
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    basepoint: VertexId,
    /// Spanning-tree path from the basepoint to each vertex.
    tree_paths: Vec<EdgePath>,
    /// Oriented edge labelled by each free generator.
    letter_edges: Vec<Dir>,
    factor_vertex: Vec<VertexId>,
}

impl MarkedGraph {
    pub fn new(
        fp: Arc<FreeProduct>,
        vertices: Vec<Vertex>,
        edges: Vec<Edge>,
        basepoint: VertexId,
    ) -> Result<Self, GraphError> {
        let bad = |s: String| GraphError::Invalid(s);
        let mut names = BTreeSet::new();
        for v in &vertices {
            if !names.insert(v.name.clone()) {
                return Err(bad(format!("duplicate vertex `{}`", v.name)));
            }
        }
        for e in &edges {
            let ok = e.name.chars().next().is_some_and(|c| c.is_ascii_lowercase())
                && e.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            if !ok {
                return Err(bad(format!("edge name `{}` must start with a lowercase letter", e.name)));
            }
            if !names.insert(e.name.clone()) {
                return Err(bad(format!("duplicate name `{}`", e.name)));
            }
            if e.origin >= vertices.len() || e.terminus >= vertices.len() {
                return Err(bad(format!("edge `{}` has an unknown endpoint", e.name)));
            }
            if e.length.is_nan() || e.length <= 0.0 {
                return Err(GraphError::ZeroLength(e.name.clone()));
            }
        }
        if basepoint >= vertices.len() || vertices[basepoint].factor.is_some() {
            return Err(bad("basepoint must be a free vertex".into()));
        }
        let mut factor_vertex = vec![usize::MAX; fp.factors().len()];
        for (i, v) in vertices.iter().enumerate() {
            if let Some(id) = v.factor {
                fp.factor(id)?;
                if factor_vertex[id - 1] != usize::MAX {
                    return Err(bad(format!("factor H{id} labels more than one vertex")));
                }
                factor_vertex[id - 1] = i;
            }
        }
        if let Some(i) = factor_vertex.iter().position(|&v| v == usize::MAX) {
            return Err(bad(format!("factor H{} labels no vertex", i + 1)));
        }

        // spanning tree: BFS over tree edges from the basepoint
        let tree_count = edges.iter().filter(|e| e.label.is_none()).count();
        if tree_count + 1 != vertices.len() {
            return Err(bad(format!(
                "spanning tree needs {} edges, found {tree_count}",
                vertices.len() - 1
            )));
        }
        let mut tree_paths: Vec<Option<EdgePath>> = vec![None; vertices.len()];
        tree_paths[basepoint] = Some(EdgePath::empty(basepoint));
        let mut frontier = vec![basepoint];
        while let Some(v) = frontier.pop() {
            for (i, e) in edges.iter().enumerate() {
                if e.label.is_some() {
                    continue;
                }
                for (from, to, d) in [
                    (e.origin, e.terminus, Dir::forward(i)),
                    (e.terminus, e.origin, Dir::forward(i).rev()),
                ] {
                    if from == v && tree_paths[to].is_none() {
                        let mut p = tree_paths[v].clone().expect("visited");
                        p.steps.push(Step::Edge(d));
                        tree_paths[to] = Some(p);
                        frontier.push(to);
                    }
                }
            }
        }
        let tree_paths = tree_paths
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("spanning tree does not reach every vertex".into()))?;

        let mut letter_edges = vec![None; fp.free_rank()];
        for (i, e) in edges.iter().enumerate() {
            let Some(label) = &e.label else { continue };
            let marking = |reason: &str| GraphError::Marking {
                edge: e.name.clone(),
                reason: reason.into(),
            };
            match label.syllables() {
                [Syllable::Free { generator, inverse }] => {
                    if letter_edges[*generator].is_some() {
                        return Err(marking("free generator labels two edges"));
                    }
                    letter_edges[*generator] = Some(Dir {
                        edge: i,
                        reversed: *inverse,
                    });
                }
                _ => return Err(marking("non-tree edges must be labelled by a single free letter")),
            }
        }
        let letter_edges = letter_edges
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("every free generator must label a non-tree edge".into()))?;

        Ok(MarkedGraph {
            fp,
            vertices,
            edges,
            basepoint,
            tree_paths,
            letter_edges,
            factor_vertex,
        })
    }

    /// The rose model: one free vertex, a length-1 loop per free generator and
    /// a length-1/2 edge to one vertex per factor.
    pub fn rose(fp: Arc<FreeProduct>) -> Result<Self, GraphError> {
        let mut vertices = vec![Vertex {
            name: "v0".into(),
            factor: None,
        }];
        let mut edges = Vec::new();
        for i in 0..fp.free_rank() {
            edges.push(Edge {
                name: format!("e{}", i + 1),
                origin: 0,
                terminus: 0,
                length: 1.0,
                label: Some(Word::from_reduced(vec![Syllable::free(i)])),
            });
        }
        let single = fp.factors().len() == 1;
        for g in fp.factors().iter() {
            vertices.push(Vertex {
                name: format!("v{}", g.id()),
                factor: Some(g.id()),
            });
            edges.push(Edge {
                name: if single { "h".into() } else { format!("h{}", g.id()) },
                origin: 0,
                terminus: vertices.len() - 1,
                length: 0.5,
                label: None,
            });
        }
        Self::new(fp, vertices, edges, 0)
    }

    pub fn free_product(&self) -> &Arc<FreeProduct> {
        &self.fp
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn basepoint(&self) -> VertexId {
        self.basepoint
    }

    pub fn origin(&self, d: Dir) -> VertexId {
        let e = &self.edges[d.edge];
        if d.reversed {
            e.terminus
        } else {
            e.origin
        }
    }

    pub fn terminus(&self, d: Dir) -> VertexId {
        self.origin(d.rev())
    }

    pub fn factor_of(&self, v: VertexId) -> Option<FactorId> {
        self.vertices[v].factor
    }

    pub fn vertex_of_factor(&self, id: FactorId) -> VertexId {
        self.factor_vertex[id - 1]
    }

    /// All oriented edges, forward before reversed, by edge index.
    pub fn dirs(&self) -> Vec<Dir> {
        (0..self.edges.len())
            .flat_map(|e| [Dir::forward(e), Dir::forward(e).rev()])
            .collect()
    }

    /// Oriented edges leaving `v`.
    pub fn germs_at(&self, v: VertexId) -> Vec<Dir> {
        self.dirs().into_iter().filter(|&d| self.origin(d) == v).collect()
    }

    pub fn vertex_by_name(&self, name: &str) -> Option<VertexId> {
        self.vertices.iter().position(|v| v.name == name)
    }

    pub fn edge_by_name(&self, name: &str) -> Option<EdgeId> {
        self.edges.iter().position(|e| e.name == name)
    }

    pub fn tree_path(&self, v: VertexId) -> &EdgePath {
        &self.tree_paths[v]
    }

    /// Terminal vertex of a path.
    pub fn end(&self, p: &EdgePath) -> VertexId {
        p.edges().last().map_or(p.start, |d| self.terminus(d))
    }

    pub fn edge_length(&self, d: Dir) -> f64 {
        self.edges[d.edge].length
    }

    pub fn length(&self, p: &EdgePath) -> f64 {
        p.edges().map(|d| self.edge_length(d)).sum()
    }

    pub fn projected_length(&self, p: &[Dir]) -> f64 {
        p.iter().map(|&d| self.edge_length(d)).sum()
    }

    /// Checks connectivity and turn placement.
    pub fn validate(&self, p: &EdgePath) -> Result<(), GraphError> {
        let mut at = p.start;
        for (i, s) in p.steps.iter().enumerate() {
            match s {
                Step::Edge(d) => {
                    if d.edge >= self.edges.len() || self.origin(*d) != at {
                        return Err(GraphError::Disconnected { position: i });
                    }
                    at = self.terminus(*d);
                }
                Step::Turn(x) => {
                    if self.factor_of(at) != Some(x.factor) {
                        return Err(GraphError::Disconnected { position: i });
                    }
                }
            }
        }
        Ok(())
    }

    fn push_step(&self, stack: &mut Vec<Step>, s: Step) -> usize {
        match (stack.last(), &s) {
            (Some(Step::Edge(a)), Step::Edge(b)) if *a == b.rev() => {
                stack.pop();
                1
            }
            (Some(Step::Turn(x)), Step::Turn(y)) => {
                let z = self
                    .fp
                    .factors()
                    .mul(x, y)
                    .expect("turns at one vertex share a factor");
                stack.pop();
                if let Some(z) = z {
                    stack.push(Step::Turn(z));
                }
                0
            }
            _ => {
                stack.push(s);
                0
            }
        }
    }

    /// `[p]`: the reduced path homotopic to `p` rel endpoints.
    pub fn tighten(&self, p: &EdgePath) -> Result<EdgePath, GraphError> {
        self.validate(p)?;
        Ok(self.tighten_unchecked(p.start, p.steps.iter().cloned()).0)
    }

    /// Tightens a step sequence assumed connected; also returns the number of
    /// cancelled edge pairs.
    pub fn tighten_unchecked(&self, start: VertexId, steps: impl IntoIterator<Item = Step>) -> (EdgePath, usize) {
        let mut stack = Vec::new();
        let mut cancelled = 0;
        for s in steps {
            cancelled += self.push_step(&mut stack, s);
        }
        (EdgePath { start, steps: stack }, cancelled)
    }

    pub fn is_reduced(&self, p: &EdgePath) -> bool {
        self.tighten_unchecked(p.start, p.steps.iter().cloned()).0.steps == p.steps
    }

    pub fn reverse(&self, p: &EdgePath) -> EdgePath {
        let steps = p
            .steps
            .iter()
            .rev()
            .map(|s| match s {
                Step::Edge(d) => Step::Edge(d.rev()),
                Step::Turn(x) => Step::Turn(self.fp.factors().inverse(x).expect("known factor")),
            })
            .collect();
        EdgePath {
            start: self.end(p),
            steps,
        }
    }

    /// Tightened concatenation and the number of cancelled edge pairs.
    pub fn concat(&self, p: &EdgePath, q: &EdgePath) -> Result<(EdgePath, usize), GraphError> {
        if self.end(p) != q.start {
            return Err(GraphError::Disconnected {
                position: p.steps.len(),
            });
        }
        Ok(self.tighten_unchecked(p.start, p.steps.iter().chain(&q.steps).cloned()))
    }

    /// Reads a path as a word via the marking: labels of non-tree edges and
    /// turn elements, in order.
    pub fn word_of_path(&self, p: &EdgePath) -> Word {
        let mut raw = Vec::new();
        for s in &p.steps {
            match s {
                Step::Edge(d) => {
                    if let Some(label) = &self.edges[d.edge].label {
                        if d.reversed {
                            raw.extend(self.fp.inverse(label).into_syllables());
                        } else {
                            raw.extend(label.iter().cloned());
                        }
                    }
                }
                Step::Turn(x) => raw.push(Syllable::Factor(x.clone())),
            }
        }
        self.fp.reduce(&raw)
    }

    /// The reduced loop at the basepoint representing `w`.
    pub fn path_of_word(&self, w: &Word) -> EdgePath {
        let mut steps = Vec::new();
        for s in w.iter() {
            match s {
                Syllable::Free { generator, inverse } => {
                    let mut d = self.letter_edges[*generator];
                    if *inverse {
                        d = d.rev();
                    }
                    steps.extend(self.tree_paths[self.origin(d)].steps.iter().cloned());
                    steps.push(Step::Edge(d));
                    let back = self.reverse(&self.tree_paths[self.terminus(d)]);
                    steps.extend(back.steps);
                }
                Syllable::Factor(x) => {
                    let v = self.vertex_of_factor(x.factor);
                    steps.extend(self.tree_paths[v].steps.iter().cloned());
                    steps.push(Step::Turn(x.clone()));
                    steps.extend(self.reverse(&self.tree_paths[v]).steps);
                }
            }
        }
        self.tighten_unchecked(self.basepoint, steps).0
    }

    pub fn format_dir(&self, d: Dir) -> String {
        let name = &self.edges[d.edge].name;
        if d.reversed {
            let mut c = name.chars();
            let first = c.next().map(|c| c.to_ascii_uppercase()).unwrap_or_default();
            format!("{first}{}", c.as_str())
        } else {
            name.clone()
        }
    }

    pub fn format_projection(&self, p: &[Dir]) -> String {
        if p.is_empty() {
            return "1".into();
        }
        p.iter().map(|&d| self.format_dir(d)).collect::<Vec<_>>().join(" ")
    }

    /// Path syntax: `e2 h (a@1) H`, capitals for reversed edges.
    pub fn format_path(&self, p: &EdgePath) -> String {
        if p.steps.is_empty() {
            return "1".into();
        }
        p.steps
            .iter()
            .map(|s| match s {
                Step::Edge(d) => self.format_dir(*d),
                Step::Turn(x) => format!("({})", self.fp.factors().format(x)),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn parse_dir(&self, token: &str) -> Option<Dir> {
        let lower = token.to_ascii_lowercase();
        let e = self.edge_by_name(&lower)?;
        if token == lower {
            Some(Dir::forward(e))
        } else {
            let mut c = lower.chars();
            let first = c.next()?.to_ascii_uppercase();
            (token == format!("{first}{}", c.as_str())).then_some(Dir::forward(e).rev())
        }
    }

    /// Parses path syntax; `start` is needed only for paths with no edges.
    pub fn parse_path(&self, text: &str, start: Option<VertexId>) -> Result<EdgePath, GraphError> {
        let err = |reason: String| GraphError::Parse {
            text: text.to_string(),
            reason,
        };
        let mut steps = Vec::new();
        let spaced = text.replace('(', " ( ").replace(')', " ) ");
        let mut tokens = spaced.split_whitespace();
        while let Some(t) = tokens.next() {
            if t == "1" {
                continue;
            }
            if t == "(" {
                let inner = tokens.next().ok_or_else(|| err("unterminated turn".into()))?;
                if tokens.next() != Some(")") {
                    return Err(err("turn element must be a single token in parentheses".into()));
                }
                let w = self.fp.parse_word(inner)?;
                match w.syllables() {
                    [] => {}
                    [Syllable::Factor(x)] => steps.push(Step::Turn(x.clone())),
                    _ => return Err(err(format!("`{inner}` is not a factor element"))),
                }
                continue;
            }
            let d = self
                .parse_dir(t)
                .ok_or_else(|| err(format!("unknown edge `{t}`")))?;
            steps.push(Step::Edge(d));
        }
        let start = match steps.iter().find_map(|s| match s {
            Step::Edge(d) => Some(self.origin(*d)),
            Step::Turn(_) => None,
        }) {
            // a leading turn pins the start vertex too
            Some(v) => match steps.first() {
                Some(Step::Turn(x)) => self.vertex_of_factor(x.factor),
                _ => v,
            },
            None => match steps.first() {
                Some(Step::Turn(x)) => self.vertex_of_factor(x.factor),
                _ => start.unwrap_or(self.basepoint),
            },
        };
        let p = EdgePath { start, steps };
        self.validate(&p)?;
        Ok(p)
    }
}

/// A topological representative: vertex images, edge-path images and a
/// factor twist at each non-free vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphMap {
    graph: Arc<MarkedGraph>,
    vertex_images: Vec<VertexId>,
    edge_images: Vec<EdgePath>,
    twists: Vec<Option<FactorAutomorphism>>,
}

impl GraphMap {
    /// Validates endpoint consistency, twists and that the basepoint is fixed.
    pub fn new(
        graph: Arc<MarkedGraph>,
        vertex_images: Vec<VertexId>,
        edge_images: Vec<EdgePath>,
        twists: Vec<Option<FactorAutomorphism>>,
    ) -> Result<Self, GraphError> {
        let bad = |s: String| GraphError::InvalidMap(s);
        let nv = graph.vertices.len();
        if vertex_images.len() != nv || twists.len() != nv || edge_images.len() != graph.edges.len() {
            return Err(bad("image tables have the wrong size".into()));
        }
        if vertex_images[graph.basepoint] != graph.basepoint {
            return Err(bad("the basepoint must be fixed".into()));
        }
        for v in 0..nv {
            let fv = vertex_images[v];
            if fv >= nv {
                return Err(bad(format!("vertex image of `{}` is unknown", graph.vertices[v].name)));
            }
            match (graph.factor_of(v), &twists[v]) {
                (None, None) => {}
                (Some(i), Some(t)) => {
                    let j = graph.factor_of(fv).ok_or_else(|| {
                        bad(format!("non-free vertex `{}` maps to a free vertex", graph.vertices[v].name))
                    })?;
                    if t.source != i || t.target != j {
                        return Err(bad(format!(
                            "twist at `{}` must map H{i} -> H{j}",
                            graph.vertices[v].name
                        )));
                    }
                }
                (Some(_), None) => {
                    return Err(bad(format!("missing twist at `{}`", graph.vertices[v].name)))
                }
                (None, Some(_)) => {
                    return Err(bad(format!("free vertex `{}` carries a twist", graph.vertices[v].name)))
                }
            }
        }
        for (i, img) in edge_images.iter().enumerate() {
            graph.validate(img)?;
            let e = &graph.edges[i];
            if img.start != vertex_images[e.origin] || graph.end(img) != vertex_images[e.terminus] {
                return Err(bad(format!("image of edge `{}` has the wrong endpoints", e.name)));
            }
        }
        Ok(GraphMap {
            graph,
            vertex_images,
            edge_images,
            twists,
        })
    }

    pub fn identity(graph: Arc<MarkedGraph>) -> Self {
        let nv = graph.vertices.len();
        let twists = (0..nv)
            .map(|v| {
                graph
                    .factor_of(v)
                    .map(|i| FactorAutomorphism::identity(graph.fp.factor(i).expect("validated")))
            })
            .collect();
        let edge_images = (0..graph.edges.len())
            .map(|e| EdgePath {
                start: graph.edges[e].origin,
                steps: vec![Step::Edge(Dir::forward(e))],
            })
            .collect();
        GraphMap {
            vertex_images: (0..nv).collect(),
            edge_images,
            twists,
            graph,
        }
    }

    pub fn graph(&self) -> &Arc<MarkedGraph> {
        &self.graph
    }

    pub fn vertex_image(&self, v: VertexId) -> VertexId {
        self.vertex_images[v]
    }

    pub fn twist(&self, v: VertexId) -> Option<&FactorAutomorphism> {
        self.twists[v].as_ref()
    }

    /// `f(d)`, reversed for reversed edges.
    pub fn image(&self, d: Dir) -> EdgePath {
        let img = &self.edge_images[d.edge];
        if d.reversed {
            self.graph.reverse(img)
        } else {
            img.clone()
        }
    }

    fn image_steps(&self, p: &EdgePath) -> Vec<Step> {
        let mut out = Vec::new();
        let mut at = p.start;
        for s in &p.steps {
            match s {
                Step::Edge(d) => {
                    out.extend(self.image(*d).steps);
                    at = self.graph.terminus(*d);
                }
                Step::Turn(x) => {
                    let t = self.twists[at].as_ref().expect("non-free vertices carry twists");
                    if let Some(y) = t.apply(self.graph.fp.factors(), x).expect("twist source matches") {
                        out.push(Step::Turn(y));
                    }
                }
            }
        }
        out
    }

    /// `f(p)` before tightening, and the number of edge pairs that tightening
    /// cancels.
    pub fn map_with_cancellation(&self, p: &EdgePath) -> (EdgePath, usize) {
        let start = self.vertex_images[p.start];
        self.graph.tighten_unchecked(start, self.image_steps(p))
    }

    /// `f_#(p) = [f(p)]`.
    pub fn f_sharp(&self, p: &EdgePath) -> EdgePath {
        self.map_with_cancellation(p).0
    }

    /// `f_{#,C}(p)`: `f_#(p)` with both extremities of length `C` removed,
    /// snapping outward to edge boundaries.
    pub fn f_sharp_c(&self, p: &EdgePath, c: f64) -> EdgePath {
        trim(&self.graph, self.f_sharp(p), c)
    }

    /// `f_#^k(p)`, or `None` once the path exceeds [`MAX_ITERATE_EDGES`].
    pub fn iterate(&self, p: &EdgePath, k: usize) -> Option<EdgePath> {
        let mut q = p.clone();
        for _ in 0..k {
            q = self.f_sharp(&q);
            if q.steps.len() > MAX_ITERATE_EDGES {
                return None;
            }
        }
        Some(q)
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &GraphMap) -> Result<GraphMap, GraphError> {
        if !Arc::ptr_eq(&self.graph, &other.graph) && *self.graph != *other.graph {
            return Err(GraphError::InvalidMap("maps live on different graphs".into()));
        }
        let nv = self.graph.vertices.len();
        let vertex_images = (0..nv).map(|v| self.vertex_images[other.vertex_images[v]]).collect();
        let edge_images = other.edge_images.iter().map(|p| self.f_sharp(p)).collect();
        let mut twists = Vec::with_capacity(nv);
        for v in 0..nv {
            twists.push(match &other.twists[v] {
                None => None,
                Some(t) => {
                    let outer = self.twists[other.vertex_images[v]]
                        .as_ref()
                        .expect("non-free image carries a twist");
                    Some(outer.compose(t, self.graph.fp.factors())?)
                }
            });
        }
        GraphMap::new(self.graph.clone(), vertex_images, edge_images, twists)
    }

    pub fn power(&self, k: usize) -> Result<GraphMap, GraphError> {
        let mut acc = GraphMap::identity(self.graph.clone());
        for _ in 0..k {
            acc = self.compose(&acc)?;
        }
        Ok(acc)
    }
}

fn trim(graph: &MarkedGraph, q: EdgePath, c: f64) -> EdgePath {
    if c <= 0.0 {
        return q;
    }
    let total = graph.length(&q);
    if 2.0 * c >= total - EPS {
        return EdgePath::empty(graph.end(&q));
    }
    let positions = q.edge_positions();
    let mut removed = 0.0;
    let mut head = 0;
    while removed < c - EPS {
        removed += graph.edge_length(edge_at(&q, positions[head]));
        head += 1;
    }
    let mut removed = 0.0;
    let mut tail = 0;
    while removed < c - EPS {
        removed += graph.edge_length(edge_at(&q, positions[positions.len() - 1 - tail]));
        tail += 1;
    }
    if head + tail >= positions.len() {
        return EdgePath::empty(graph.end(&q));
    }
    let first = positions[head];
    let last = positions[positions.len() - 1 - tail];
    let start = graph.origin(edge_at(&q, first));
    EdgePath {
        start,
        steps: q.steps[first..=last].to_vec(),
    }
}

fn edge_at(p: &EdgePath, i: usize) -> Dir {
    match p.steps[i] {
        Step::Edge(d) => d,
        Step::Turn(_) => unreachable!("edge position"),
    }
}

/// The automorphism of `π₁ = G` induced by `f` through the marking. It has no
/// declared inverse.
pub fn induced_automorphism(f: &GraphMap) -> Result<FpAutomorphism, GraphError> {
    let g = &f.graph;
    let fp = g.fp.clone();
    let mut free = Vec::new();
    for (j, &d) in g.letter_edges.iter().enumerate() {
        let mut steps = g.tree_paths[g.origin(d)].steps.clone();
        steps.push(Step::Edge(d));
        steps.extend(g.reverse(&g.tree_paths[g.terminus(d)]).steps);
        let lp = EdgePath {
            start: g.basepoint,
            steps,
        };
        let img = f.f_sharp(&lp);
        if img.start != g.basepoint || g.end(&img) != g.basepoint {
            return Err(GraphError::Marking {
                edge: g.edges[d.edge].name.clone(),
                reason: format!("image of the loop for generator {} is not closed", j + 1),
            });
        }
        free.push(g.word_of_path(&img));
    }
    let mut factors = Vec::new();
    for h in fp.factors().iter() {
        let v = g.vertex_of_factor(h.id());
        let fv = f.vertex_images[v];
        let target = g.factor_of(fv).ok_or_else(|| GraphError::InvalidMap("factor vertex maps to a free vertex".into()))?;
        let tau = f.f_sharp(&g.tree_paths[v]);
        let back = g.reverse(&g.tree_paths[fv]);
        let (lp, _) = g.concat(&tau, &back)?;
        factors.push(FactorImage {
            target,
            conjugator: g.word_of_path(&lp),
            twist: f.twists[v].clone().expect("validated twist"),
        });
    }
    FpAutomorphism::new(fp, AutImages { free, factors }, None).map_err(|e| GraphError::InvalidMap(e.to_string()))
}

/// `f` and `φ` are mated: they agree on every generator.
pub fn mated_check(f: &GraphMap, phi: &FpAutomorphism) -> Result<bool, GraphError> {
    Ok(induced_automorphism(f)?.equals_on_generators(phi))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CancellationBound {
    pub lipschitz: f64,
    pub qvol: f64,
    /// `Lip(f) · qvol(T)`, an upper bound for the bounded cancellation constant.
    pub bcc_bound: f64,
}

pub fn lip_qvol_bcc(f: &GraphMap) -> Result<CancellationBound, GraphError> {
    let g = &f.graph;
    let mut lip: f64 = 0.0;
    for (i, e) in g.edges.iter().enumerate() {
        if e.length <= 0.0 {
            return Err(GraphError::ZeroLength(e.name.clone()));
        }
        let img = g.tighten_unchecked(f.edge_images[i].start, f.edge_images[i].steps.iter().cloned()).0;
        lip = lip.max(g.length(&img) / e.length);
    }
    let qvol: f64 = g.edges.iter().map(|e| e.length).sum();
    Ok(CancellationBound {
        lipschitz: lip,
        qvol,
        bcc_bound: lip * qvol,
    })
}

/// A germ of the tree: an oriented edge leaving a vertex, translated by an
/// element of that vertex's stabilizer (`None` is the identity).
pub type Germ = (Option<FactorElement>, Dir);

/// A turn taken by a path: arriving along `incoming`, turning by `element`,
/// leaving along `outgoing`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Turn {
    pub vertex: VertexId,
    pub incoming: Dir,
    pub element: Option<FactorElement>,
    pub outgoing: Dir,
}

/// Gates at each vertex, plus the derivative data needed to decide turns.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainTrackStructure {
    /// Per vertex, the gate partition of the outgoing edges (translated by the
    /// identity at non-free vertices).
    pub gates: Vec<Vec<Vec<Dir>>>,
    derivative: Vec<Germ>,
    twists: Vec<Option<FactorAutomorphism>>,
    vertex_images: Vec<VertexId>,
    fp: Arc<FreeProduct>,
    graph: Arc<MarkedGraph>,
    bound: usize,
}

impl TrainTrackStructure {
    /// `Df` on germs.
    pub fn derivative(&self, germ: &Germ) -> Germ {
        let (y, d) = germ;
        let (c, image) = &self.derivative[d.index()];
        let v = self.graph.origin(*d);
        let twisted = match (&self.twists[v], y) {
            (Some(t), Some(y)) => t.apply(self.fp.factors(), y).expect("twist source matches"),
            _ => None,
        };
        let factors = self.fp.factors();
        let offset = match (twisted, c) {
            (None, None) => None,
            (Some(a), None) => Some(a),
            (None, Some(b)) => Some(b.clone()),
            (Some(a), Some(b)) => factors.mul(&a, b).expect("offsets share a factor"),
        };
        (offset, *image)
    }

    /// Smallest `k ≤ bound` with `Df^k(a) = Df^k(b)`.
    pub fn identified_within(&self, a: &Germ, b: &Germ) -> Option<usize> {
        let (mut a, mut b) = (a.clone(), b.clone());
        for k in 0..=self.bound {
            if a == b {
                return Some(k);
            }
            a = self.derivative(&a);
            b = self.derivative(&b);
        }
        None
    }

    pub fn is_legal(&self, turn: &Turn) -> bool {
        self.identified_within(&(None, turn.incoming.rev()), &(turn.element.clone(), turn.outgoing))
            .is_none()
    }

    pub fn gate_count(&self, v: VertexId) -> usize {
        self.gates[v].len()
    }

    /// At least two gates at every vertex. A non-free vertex always has
    /// distinct gates for distinct translates of a germ, since twists are
    /// injective.
    pub fn has_two_gates_everywhere(&self) -> bool {
        (0..self.gates.len()).all(|v| self.graph.factor_of(v).is_some() || self.gates[v].len() >= 2)
    }

    pub fn vertex_image(&self, v: VertexId) -> VertexId {
        self.vertex_images[v]
    }
}

/// Gate partition from iterating `Df` up to `bound` times.
pub fn gates_from_map(f: &GraphMap, bound: usize) -> Result<TrainTrackStructure, GraphError> {
    let g = &f.graph;
    let mut derivative = Vec::new();
    for d in g.dirs() {
        let img = f.image(d);
        let mut lead: Option<FactorElement> = None;
        let mut first = None;
        for s in &img.steps {
            match s {
                Step::Turn(x) => lead = Some(x.clone()),
                Step::Edge(e) => {
                    first = Some(*e);
                    break;
                }
            }
        }
        let first = first.ok_or_else(|| GraphError::CollapsedEdge(g.edges[d.edge].name.clone()))?;
        derivative.push((lead, first));
    }
    let mut tts = TrainTrackStructure {
        gates: Vec::new(),
        derivative,
        twists: f.twists.clone(),
        vertex_images: f.vertex_images.clone(),
        fp: g.fp.clone(),
        graph: g.clone(),
        bound,
    };
    for v in 0..g.vertices.len() {
        let germs = g.germs_at(v);
        let mut classes: Vec<Vec<Dir>> = Vec::new();
        for d in germs {
            match classes
                .iter_mut()
                .find(|c| tts.identified_within(&(None, c[0]), &(None, d)).is_some())
            {
                Some(c) => c.push(d),
                None => classes.push(vec![d]),
            }
        }
        tts.gates.push(classes);
    }
    Ok(tts)
}

/// Turns inside a path, in order.
pub fn turns_of(graph: &MarkedGraph, p: &EdgePath) -> Vec<Turn> {
    let mut out = Vec::new();
    let mut prev: Option<Dir> = None;
    let mut element: Option<FactorElement> = None;
    for s in &p.steps {
        match s {
            Step::Turn(x) => element = Some(x.clone()),
            Step::Edge(d) => {
                if let Some(incoming) = prev {
                    out.push(Turn {
                        vertex: graph.terminus(incoming),
                        incoming,
                        element: element.take(),
                        outgoing: *d,
                    });
                }
                element = None;
                prev = Some(*d);
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct TurnRecord {
    pub edge: EdgeId,
    pub turn: Turn,
    pub legal: bool,
}

/// Why a map failed the train-track check.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainTrackFailure {
    IllegalTurn(TurnRecord),
    UnreducedImage { edge: EdgeId },
    GermCondition { vertex: VertexId, germs: (Dir, Dir) },
    Cancellation { edge: EdgeId, iteration: usize },
    TooFewGates { vertex: VertexId },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainTrackReport {
    pub is_train_track: bool,
    pub failure: Option<TrainTrackFailure>,
    /// Every turn taken by every edge image, with its legality.
    pub certificate: Vec<TurnRecord>,
    /// Largest `k` for which `f^k(e) = f^k_#(e)` was checked on every edge.
    pub iterations_checked: usize,
    pub structure: TrainTrackStructure,
}

/// Bounded train-track verification: legal edge images, the germ condition,
/// and no cancellation in `f^k(e)` for `k ≤ bound`. A failure is a
/// certificate; a pass is evidence.
pub fn is_train_track(f: &GraphMap, bound: usize) -> Result<TrainTrackReport, GraphError> {
    let g = &f.graph;
    let structure = gates_from_map(f, bound)?;
    let mut certificate = Vec::new();
    let mut failure = None;
    for e in 0..g.edges.len() {
        let img = f.image(Dir::forward(e));
        if !g.is_reduced(&img) && failure.is_none() {
            failure = Some(TrainTrackFailure::UnreducedImage { edge: e });
        }
        for turn in turns_of(g, &img) {
            let legal = structure.is_legal(&turn);
            let rec = TurnRecord { edge: e, turn, legal };
            if !legal && failure.is_none() {
                failure = Some(TrainTrackFailure::IllegalTurn(rec.clone()));
            }
            certificate.push(rec);
        }
    }
    if failure.is_none() {
        'germs: for v in 0..g.vertices.len() {
            let gates = &structure.gates[v];
            for (i, a) in gates.iter().enumerate() {
                for b in &gates[i + 1..] {
                    let (da, db) = (a[0], b[0]);
                    let ia = structure.derivative(&(None, da));
                    let ib = structure.derivative(&(None, db));
                    let bound_left = bound.saturating_sub(1);
                    let mut x = ia;
                    let mut y = ib;
                    for _ in 0..=bound_left {
                        if x == y {
                            failure = Some(TrainTrackFailure::GermCondition { vertex: v, germs: (da, db) });
                            break 'germs;
                        }
                        x = structure.derivative(&x);
                        y = structure.derivative(&y);
                    }
                }
            }
            if g.factor_of(v).is_none() && gates.len() < 2 && g.germs_at(v).len() >= 2 {
                failure = Some(TrainTrackFailure::TooFewGates { vertex: v });
                break;
            }
        }
    }
    let mut iterations_checked = 0;
    if failure.is_none() {
        let mut paths: Vec<EdgePath> = (0..g.edges.len())
            .map(|e| EdgePath {
                start: g.edges[e].origin,
                steps: vec![Step::Edge(Dir::forward(e))],
            })
            .collect();
        'iter: for k in 1..=bound {
            let total: usize = paths.iter().map(|p| p.steps.len()).sum();
            if total > MAX_ITERATE_EDGES {
                break;
            }
            for (e, p) in paths.iter_mut().enumerate() {
                let (next, cancelled) = f.map_with_cancellation(p);
                if cancelled > 0 {
                    failure = Some(TrainTrackFailure::Cancellation { edge: e, iteration: k });
                    break 'iter;
                }
                *p = next;
            }
            iterations_checked = k;
        }
    }
    Ok(TrainTrackReport {
        is_train_track: failure.is_none(),
        failure,
        certificate,
        iterations_checked,
        structure,
    })
}

/// Transition matrix and growth rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    /// `matrix[e'][e]` counts occurrences of `e'` or its reverse in `f(e)`.
    pub matrix: Vec<Vec<u64>>,
    /// Irreducible diagonal blocks (strongly connected components with at
    /// least one transition) and their Perron–Frobenius eigenvalues.
    pub blocks: Vec<(Vec<EdgeId>, f64)>,
    pub pf: f64,
}

pub fn transition_matrix(f: &GraphMap) -> Vec<Vec<u64>> {
    let n = f.graph.edges.len();
    let mut m = vec![vec![0u64; n]; n];
    for (e, img) in f.edge_images.iter().enumerate() {
        for d in img.edges() {
            m[d.edge][e] += 1;
        }
    }
    m
}

/// PF eigenvalue of an irreducible nonnegative matrix: power iteration on
/// `I + M` (primitive whenever `M` is irreducible) with Collatz–Wielandt
/// bounds as the stopping rule.
pub fn perron_frobenius(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    if n == 0 {
        return 0.0;
    }
    let mut v = vec![1.0; n];
    let mut estimate = 0.0;
    for _ in 0..200_000 {
        let w: Vec<f64> = (0..n)
            .map(|i| v[i] + (0..n).map(|j| m[i][j] * v[j]).sum::<f64>())
            .collect();
        let ratios = (0..n).map(|i| w[i] / v[i]);
        let (lo, hi) = ratios.fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r), hi.max(r)));
        estimate = 0.5 * (lo + hi) - 1.0;
        if hi - lo <= 1e-13 * hi {
            break;
        }
        let norm = w.iter().cloned().fold(0.0, f64::max);
        v = w.into_iter().map(|x| x / norm).collect();
    }
    estimate
}

pub fn transition_spectrum(f: &GraphMap) -> Spectrum {
    let matrix = transition_matrix(f);
    let n = matrix.len();
    let mut dg = DiGraph::<EdgeId, ()>::new();
    let nodes: Vec<_> = (0..n).map(|e| dg.add_node(e)).collect();
    for (to, row) in matrix.iter().enumerate() {
        for (from, &c) in row.iter().enumerate() {
            if c > 0 {
                dg.add_edge(nodes[from], nodes[to], ());
            }
        }
    }
    let mut blocks = Vec::new();
    for comp in tarjan_scc(&dg) {
        let mut idx: Vec<EdgeId> = comp.iter().map(|&x| dg[x]).collect();
        idx.sort();
        let sub: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| idx.iter().map(|&j| matrix[i][j] as f64).collect())
            .collect();
        let has_transition = sub.iter().flatten().any(|&x| x > 0.0);
        if has_transition {
            let pf = perron_frobenius(&sub);
            blocks.push((idx, pf));
        }
    }
    blocks.sort_by(|a, b| a.0.cmp(&b.0));
    let pf = blocks.iter().map(|b| b.1).fold(0.0, f64::max);
    Spectrum { matrix, blocks, pf }
}

/// Edges whose iterates grow exponentially: those reaching a block with PF
/// eigenvalue above one.
pub fn growing_edges(f: &GraphMap) -> BTreeSet<EdgeId> {
    let spectrum = transition_spectrum(f);
    let n = spectrum.matrix.len();
    let mut growing: BTreeSet<EdgeId> = spectrum
        .blocks
        .iter()
        .filter(|b| b.1 > 1.0 + 1e-9)
        .flat_map(|b| b.0.iter().copied())
        .collect();
    loop {
        let before = growing.len();
        for e in 0..n {
            if (0..n).any(|e2| spectrum.matrix[e2][e] > 0 && growing.contains(&e2)) {
                growing.insert(e);
            }
        }
        if growing.len() == before {
            return growing;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InvariantSubgraph {
    pub edges: Vec<EdgeId>,
    pub supports_hyperbolic: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IrreducibilityReport {
    pub irreducible: bool,
    /// Smallest proper invariant subgraph carrying a hyperbolic element.
    pub witness: Option<Vec<EdgeId>>,
    pub invariant_subgraphs: Vec<InvariantSubgraph>,
}

/// Does the subgraph spanned by `edges` contain a circuit, or join two
/// distinct non-free vertices?
pub fn supports_hyperbolic(graph: &MarkedGraph, edges: &[EdgeId]) -> bool {
    let n = graph.vertices.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let next = p[y];
            p[y] = r;
            y = next;
        }
        r
    }
    for &e in edges {
        let (a, b) = (graph.edges[e].origin, graph.edges[e].terminus);
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra == rb {
            return true;
        }
        parent[ra] = rb;
    }
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    let touched: BTreeSet<VertexId> = edges
        .iter()
        .flat_map(|&e| [graph.edges[e].origin, graph.edges[e].terminus])
        .collect();
    for v in touched {
        if graph.factor_of(v).is_some() {
            let r = find(&mut parent, v);
            *seen.entry(r).or_default() += 1;
        }
    }
    seen.values().any(|&c| c >= 2)
}

/// Maximum edge count for exhaustive invariant-subgraph enumeration.
pub const MAX_IRREDUCIBILITY_EDGES: usize = 20;

/// Enumerates `f`-invariant edge sets; irreducible iff no proper one carries
/// a hyperbolic element.
pub fn o_irreducibility_check(f: &GraphMap) -> Result<IrreducibilityReport, GraphError> {
    let g = &f.graph;
    let n = g.edges.len();
    if n > MAX_IRREDUCIBILITY_EDGES {
        return Err(GraphError::TooLarge(format!("{n} edges")));
    }
    let needs: Vec<u32> = f
        .edge_images
        .iter()
        .map(|img| img.edges().fold(0u32, |m, d| m | (1 << d.edge)))
        .collect();
    let full = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    let mut subgraphs = Vec::new();
    for mask in 1..full {
        let invariant = (0..n).all(|e| mask & (1 << e) == 0 || needs[e] & !mask == 0);
        if invariant {
            let edges: Vec<EdgeId> = (0..n).filter(|e| mask & (1 << e) != 0).collect();
            let hyperbolic = supports_hyperbolic(g, &edges);
            subgraphs.push(InvariantSubgraph {
                edges,
                supports_hyperbolic: hyperbolic,
            });
        }
    }
    subgraphs.sort_by(|a, b| (a.edges.len(), &a.edges).cmp(&(b.edges.len(), &b.edges)));
    let witness = subgraphs
        .iter()
        .find(|s| s.supports_hyperbolic)
        .map(|s| s.edges.clone());
    Ok(IrreducibilityReport {
        irreducible: witness.is_none(),
        witness,
        invariant_subgraphs: subgraphs,
    })
}

/// `f_#(p)` projects to the same quotient path as `p`.
pub fn is_n_path(f: &GraphMap, p: &EdgePath) -> bool {
    if p.edge_count() == 0 {
        return false;
    }
    let q = f.f_sharp(p);
    q.start == p.start && q.projection() == p.projection()
}

/// One equivalence class of indivisible N-paths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NPathClass {
    pub representative: EdgePath,
    /// Canonical projection: the smaller of the projection and its reverse.
    pub key: Vec<Dir>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NPathInventory {
    pub scale: usize,
    pub classes: Vec<NPathClass>,
    /// At most one class at this scale.
    pub stable_at_scale: bool,
    pub paths_examined: usize,
}

impl NPathInventory {
    /// Is `proj` (or its reverse) a member class projection?
    pub fn contains(&self, proj: &[Dir]) -> bool {
        let key = canonical(proj);
        self.classes.iter().any(|c| c.key == key)
    }

    pub fn max_len(&self) -> usize {
        self.classes.iter().map(|c| c.key.len()).max().unwrap_or(0)
    }
}

pub fn canonical(proj: &[Dir]) -> Vec<Dir> {
    let rev: Vec<Dir> = proj.iter().rev().map(|d| d.rev()).collect();
    if rev.as_slice() < proj {
        rev
    } else {
        proj.to_vec()
    }
}

/// Cap on paths visited by [`find_n_paths`].
pub const MAX_NPATH_SEARCH: usize = 2_000_000;

/// Exhausts reduced paths with at most `max_edges` edges (turn data drawn
/// from each factor's finite sample) and groups the indivisible N-paths by
/// projection up to reversal.
pub fn find_n_paths(f: &GraphMap, max_edges: usize) -> Result<NPathInventory, GraphError> {
    let g = &f.graph;
    let fp = &g.fp;
    let mut classes: Vec<NPathClass> = Vec::new();
    let mut examined = 0usize;
    let mut stack: Vec<EdgePath> = g
        .dirs()
        .into_iter()
        .rev()
        .map(|d| EdgePath {
            start: g.origin(d),
            steps: vec![Step::Edge(d)],
        })
        .collect();
    while let Some(p) = stack.pop() {
        examined += 1;
        if examined > MAX_NPATH_SEARCH {
            return Err(GraphError::TooLarge(format!("more than {MAX_NPATH_SEARCH} paths at scale {max_edges}")));
        }
        if is_n_path(f, &p) && !is_divisible(f, &p) {
            let key = canonical(&p.projection());
            if !classes.iter().any(|c| c.key == key) {
                classes.push(NPathClass {
                    representative: p.clone(),
                    key,
                });
            }
        }
        let n = p.edge_count();
        if n >= max_edges {
            continue;
        }
        let last = p.edges().last().expect("non-empty");
        let v = g.terminus(last);
        let mut children = Vec::new();
        for d in g.germs_at(v) {
            let turns: Vec<Option<FactorElement>> = match g.factor_of(v) {
                None => vec![None],
                Some(i) => std::iter::once(None)
                    .chain(fp.factor(i)?.sample_elements().into_iter().map(Some))
                    .collect(),
            };
            for t in turns {
                if t.is_none() && d == last.rev() {
                    continue;
                }
                let mut q = p.clone();
                if let Some(x) = t {
                    q.steps.push(Step::Turn(x));
                }
                q.steps.push(Step::Edge(d));
                children.push(q);
            }
        }
        stack.extend(children.into_iter().rev());
    }
    let stable = classes.len() <= 1;
    Ok(NPathInventory {
        scale: max_edges,
        classes,
        stable_at_scale: stable,
        paths_examined: examined,
    })
}

/// Splits at an interior vertex into two N-paths?
fn is_divisible(f: &GraphMap, p: &EdgePath) -> bool {
    let positions = p.edge_positions();
    (1..positions.len()).any(|k| {
        let cut_prev = positions[k - 1];
        let cut_next = positions[k];
        let head = EdgePath {
            start: p.start,
            steps: p.steps[..=cut_prev].to_vec(),
        };
        let tail = EdgePath {
            start: f.graph.origin(edge_at(p, cut_next)),
            steps: p.steps[cut_next..].to_vec(),
        };
        is_n_path(f, &head) && is_n_path(f, &tail)
    })
}

/// First failure of a splitting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitFailure {
    pub iteration: usize,
    pub junction: usize,
}

/// Concatenates bricks with turn elements at the junctions.
pub fn join_bricks(graph: &MarkedGraph, bricks: &[EdgePath], junctions: &[Option<FactorElement>]) -> EdgePath {
    let mut steps = Vec::new();
    for (i, b) in bricks.iter().enumerate() {
        steps.extend(b.steps.iter().cloned());
        if let Some(Some(x)) = junctions.get(i) {
            steps.push(Step::Turn(x.clone()));
        }
    }
    EdgePath {
        start: bricks.first().map_or(graph.basepoint, |b| b.start),
        steps,
    }
}

/// Checks that `f^k_#(w)` is the cancellation-free concatenation of the
/// `f^k_#(brick)` for every `k ≤ bound`.
pub fn split_check(
    f: &GraphMap,
    w: &EdgePath,
    bricks: &[EdgePath],
    junctions: &[Option<FactorElement>],
    bound: usize,
) -> Result<Option<SplitFailure>, GraphError> {
    let g = &f.graph;
    if bricks.is_empty() || junctions.len() + 1 != bricks.len() {
        return Err(GraphError::BrickMismatch);
    }
    for pair in bricks.windows(2) {
        if g.end(&pair[0]) != pair[1].start {
            return Err(GraphError::BrickMismatch);
        }
    }
    if join_bricks(g, bricks, junctions) != *w {
        return Err(GraphError::BrickMismatch);
    }
    let mut bricks = bricks.to_vec();
    let mut junctions = junctions.to_vec();
    for k in 1..=bound {
        let mut next_junctions = Vec::with_capacity(junctions.len());
        for (j, x) in junctions.iter().enumerate() {
            let v = g.end(&bricks[j]);
            let y = match (x, &f.twists[v]) {
                (Some(x), Some(t)) => t.apply(g.fp.factors(), x)?,
                _ => None,
            };
            next_junctions.push(y);
        }
        bricks = bricks.iter().map(|b| f.f_sharp(b)).collect();
        junctions = next_junctions;
        for j in 0..junctions.len() {
            if junction_cancels(g, &bricks[j], junctions[j].as_ref(), &bricks[j + 1])? {
                return Ok(Some(SplitFailure { iteration: k, junction: j }));
            }
        }
        if bricks.iter().map(|b| b.steps.len()).sum::<usize>() > MAX_ITERATE_EDGES {
            break;
        }
    }
    Ok(None)
}

fn junction_cancels(
    g: &MarkedGraph,
    left: &EdgePath,
    x: Option<&FactorElement>,
    right: &EdgePath,
) -> Result<bool, GraphError> {
    let (Some(last), Some(first)) = (left.edges().last(), right.edges().next()) else {
        // a collapsed brick lets neighbouring bricks interact
        return Ok(true);
    };
    let trailing = left.steps.iter().rev().take_while(|s| matches!(s, Step::Turn(_)));
    let leading = right.steps.iter().take_while(|s| matches!(s, Step::Turn(_)));
    let mut element: Option<FactorElement> = None;
    let factors = g.fp.factors();
    let absorb = |y: &FactorElement, element: &mut Option<FactorElement>| -> Result<(), GraphError> {
        *element = match element.take() {
            None => Some(y.clone()),
            Some(e) => factors.mul(&e, y)?,
        };
        Ok(())
    };
    let trailing: Vec<_> = trailing.collect();
    for s in trailing.into_iter().rev() {
        if let Step::Turn(y) = s {
            absorb(y, &mut element)?;
        }
    }
    if let Some(y) = x {
        absorb(y, &mut element)?;
    }
    for s in leading {
        if let Step::Turn(y) = s {
            absorb(y, &mut element)?;
        }
    }
    Ok(element.is_none() && last == first.rev())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::{FactorGroup, FactorSystem, Payload};

    fn fp_a() -> Arc<FreeProduct> {
        let sys = FactorSystem::new(vec![FactorGroup::cyclic(1, 5, "a").unwrap()]).unwrap();
        Arc::new(FreeProduct::with_rank(sys, 2))
    }

    fn rose_a() -> Arc<MarkedGraph> {
        Arc::new(MarkedGraph::rose(fp_a()).unwrap())
    }

    fn map_from(g: &Arc<MarkedGraph>, images: &[&str]) -> GraphMap {
        let edge_images = images
            .iter()
            .enumerate()
            .map(|(e, s)| {
                let start = g.edges[e].origin;
                g.parse_path(s, Some(start)).unwrap()
            })
            .collect();
        let id = GraphMap::identity(g.clone());
        GraphMap::new(g.clone(), id.vertex_images.clone(), edge_images, id.twists.clone()).unwrap()
    }

    fn f_a(g: &Arc<MarkedGraph>) -> GraphMap {
        map_from(g, &["e2 h (a@1) H", "e1 e2", "h"])
    }

    fn p(g: &MarkedGraph, s: &str) -> EdgePath {
        g.parse_path(s, None).unwrap()
    }

    #[test]
    fn tighten_examples() {
        let g = rose_a();
        assert!(g.tighten(&p(&g, "e1 E1")).unwrap().is_empty());
        let turn = p(&g, "h (a@1) H");
        assert_eq!(g.tighten(&turn).unwrap(), turn);
        assert!(g.tighten(&p(&g, "h H")).unwrap().is_empty());
        assert!(g.tighten(&p(&g, "h (a^2@1) H h (a^3@1) H")).unwrap().is_empty());
        assert!(matches!(
            g.tighten(&EdgePath {
                start: 0,
                steps: vec![Step::Edge(Dir::forward(2)), Step::Edge(Dir::forward(0))]
            }),
            Err(GraphError::Disconnected { .. })
        ));
    }

    #[test]
    fn words_and_paths_agree() {
        let g = rose_a();
        let fp = g.free_product().clone();
        for s in ["b1 a@1 B2", "a^3@1", "b2 b2 a@1 b1"] {
            let w = fp.parse_word(s).unwrap();
            assert_eq!(g.word_of_path(&g.path_of_word(&w)), w);
        }
        assert_eq!(g.format_path(&g.path_of_word(&fp.parse_word("b2 a@1").unwrap())), "e2 h (a@1) H");
    }

    #[test]
    fn induced_automorphism_of_example_map() {
        let g = rose_a();
        let f = f_a(&g);
        let phi = induced_automorphism(&f).unwrap();
        let fp = g.free_product();
        assert_eq!(phi.apply(&fp.parse_word("b1").unwrap()), fp.parse_word("b2 a@1").unwrap());
        assert_eq!(phi.apply(&fp.parse_word("b2").unwrap()), fp.parse_word("b1 b2").unwrap());
        assert_eq!(phi.apply(&fp.parse_word("a@1").unwrap()), fp.parse_word("a@1").unwrap());
        assert!(induced_automorphism(&GraphMap::identity(g.clone())).unwrap().is_identity());
    }

    #[test]
    fn lipschitz_examples() {
        let g = rose_a();
        let b = lip_qvol_bcc(&f_a(&g)).unwrap();
        assert_eq!((b.lipschitz, b.qvol, b.bcc_bound), (2.0, 2.5, 5.0));
        let b = lip_qvol_bcc(&GraphMap::identity(g.clone())).unwrap();
        assert_eq!((b.lipschitz, b.bcc_bound), (1.0, b.qvol));
    }

    #[test]
    fn f_sharp_examples() {
        let g = rose_a();
        let f = f_a(&g);
        let x = p(&g, "e1 e2");
        assert_eq!(g.format_path(&f.f_sharp(&x)), "e2 h (a@1) H e1 e2");
        assert_eq!(f.f_sharp_c(&x, 0.0), f.f_sharp(&x));
        // length 4 image, C = 5
        assert!(f.f_sharp_c(&x, 5.0).is_empty());
        // trimming 1 from each end of e2 h (a) H e1 e2 removes e2 and e2
        assert_eq!(g.format_path(&f.f_sharp_c(&x, 1.0)), "h (a@1) H e1");
        // trimming 0.75 snaps outward to the same edges
        assert_eq!(f.f_sharp_c(&x, 0.75), f.f_sharp_c(&x, 1.0));
    }

    #[test]
    fn gates_and_train_track() {
        let g = rose_a();
        let f = f_a(&g);
        let tts = gates_from_map(&f, 10).unwrap();
        assert!(tts.gate_count(0) >= 2);
        // Df(E1) = h = Df(h)
        let gate = tts.gates[0].iter().find(|c| c.contains(&Dir::forward(0).rev())).unwrap();
        assert!(gate.contains(&Dir::forward(2)));
        let r = is_train_track(&f, 8).unwrap();
        assert!(r.is_train_track, "{:?}", r.failure);
        assert_eq!(r.iterations_checked, 8);
        let id = GraphMap::identity(g.clone());
        let tts = gates_from_map(&id, 10).unwrap();
        assert_eq!(tts.gate_count(0), 5);
        assert!(is_train_track(&id, 8).unwrap().is_train_track);
    }

    #[test]
    fn backtracking_image_is_not_train_track() {
        let sys = FactorSystem::new(vec![]).unwrap();
        let fp = Arc::new(FreeProduct::with_rank(sys, 1));
        let g = Arc::new(MarkedGraph::rose(fp).unwrap());
        let f = map_from(&g, &["e1 E1 e1"]);
        let r = is_train_track(&f, 8).unwrap();
        assert!(!r.is_train_track);
        assert!(matches!(r.failure, Some(TrainTrackFailure::UnreducedImage { edge: 0 })));
        let illegal: Vec<_> = r.certificate.iter().filter(|t| !t.legal).collect();
        assert_eq!(illegal[0].turn.incoming, Dir::forward(0));
        assert_eq!(illegal[0].turn.outgoing, Dir::forward(0).rev());
    }

    #[test]
    fn collapsed_edge_is_an_error() {
        let g = rose_a();
        let f = map_from(&g, &["1", "e1 e2", "h"]);
        assert!(matches!(gates_from_map(&f, 4), Err(GraphError::CollapsedEdge(_))));
    }

    #[test]
    fn spectrum_examples() {
        let g = rose_a();
        let s = transition_spectrum(&f_a(&g));
        assert_eq!(s.matrix, vec![vec![0, 1, 0], vec![1, 1, 0], vec![2, 0, 1]]);
        assert!((s.pf - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-12);
        let s = transition_spectrum(&GraphMap::identity(g.clone()));
        assert_eq!(s.pf, 1.0);
        let sys = FactorSystem::new(vec![]).unwrap();
        let fp = Arc::new(FreeProduct::with_rank(sys, 1));
        let g1 = Arc::new(MarkedGraph::rose(fp).unwrap());
        let s = transition_spectrum(&map_from(&g1, &["e1 e1"]));
        assert_eq!(s.matrix, vec![vec![2]]);
        assert!((s.pf - 2.0).abs() < 1e-12);
    }

    #[test]
    fn periodic_block_converges() {
        // a permutation matrix is irreducible but not primitive
        let m = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        assert!((perron_frobenius(&m) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn irreducibility_examples() {
        let g = rose_a();
        let r = o_irreducibility_check(&f_a(&g)).unwrap();
        assert!(r.irreducible);
        assert_eq!(
            r.invariant_subgraphs,
            vec![InvariantSubgraph {
                edges: vec![2],
                supports_hyperbolic: false
            }]
        );
        let fixloop = map_from(&g, &["e1", "e2 e1", "h"]);
        let r = o_irreducibility_check(&fixloop).unwrap();
        assert!(!r.irreducible);
        assert_eq!(r.witness, Some(vec![0]));
        assert!(!o_irreducibility_check(&GraphMap::identity(g.clone())).unwrap().irreducible);
    }

    #[test]
    fn n_path_examples() {
        let g = rose_a();
        let f = f_a(&g);
        assert!(is_n_path(&f, &p(&g, "h")));
        assert!(!is_n_path(&f, &p(&g, "e1")));
        let id = GraphMap::identity(g.clone());
        assert!(is_n_path(&id, &p(&g, "e1 h (a@1) H e2")));
        let inv = find_n_paths(&f, 4).unwrap();
        assert_eq!(inv.classes.len(), 1);
        assert_eq!(inv.classes[0].key, vec![Dir::forward(2)]);
        assert!(inv.stable_at_scale);
        let inv = find_n_paths(&id, 2).unwrap();
        assert_eq!(inv.classes.len(), 3);
    }

    #[test]
    fn split_check_examples() {
        let g = rose_a();
        let f = f_a(&g);
        let w = p(&g, "e2 h (a@1) H");
        assert_eq!(split_check(&f, &w, std::slice::from_ref(&w), &[], 8).unwrap(), None);
        let bricks = [p(&g, "e2"), p(&g, "h (a@1) H")];
        assert_eq!(split_check(&f, &w, &bricks, &[None], 8).unwrap(), None);
        assert!(matches!(
            split_check(&f, &w, &[p(&g, "e2")], &[], 8),
            Err(GraphError::BrickMismatch)
        ));

        let sys = FactorSystem::new(vec![]).unwrap();
        let fp = Arc::new(FreeProduct::with_rank(sys, 2));
        let g2 = Arc::new(MarkedGraph::rose(fp).unwrap());
        let bad = map_from(&g2, &["e1 e2", "E2 e1"]);
        let w = p(&g2, "e1 e2");
        assert_eq!(
            split_check(&bad, &w, &[p(&g2, "e1"), p(&g2, "e2")], &[None], 4).unwrap(),
            Some(SplitFailure { iteration: 1, junction: 0 })
        );
    }

    #[test]
    fn graph_validation() {
        let fp = fp_a();
        let v = |name: &str, factor| Vertex {
            name: name.into(),
            factor,
        };
        let e = |name: &str, o, t, label: Option<&str>| Edge {
            name: name.into(),
            origin: o,
            terminus: t,
            length: 1.0,
            label: label.map(|l| fp.parse_word(l).unwrap()),
        };
        // two tree edges on two vertices: not a spanning tree
        let err = MarkedGraph::new(
            fp.clone(),
            vec![v("v0", None), v("v1", Some(1))],
            vec![e("e1", 0, 0, Some("b1")), e("e2", 0, 0, Some("b2")), e("h", 0, 1, None), e("k", 0, 1, None)],
            0,
        );
        assert!(err.is_err());
        // factor on no vertex
        let err = MarkedGraph::new(fp.clone(), vec![v("v0", None)], vec![e("e1", 0, 0, Some("b1")), e("e2", 0, 0, Some("b2"))], 0);
        assert!(err.is_err());
    }

    #[test]
    fn compose_matches_induced() {
        let g = rose_a();
        let f = f_a(&g);
        let f2 = f.compose(&f).unwrap();
        let lhs = induced_automorphism(&f2).unwrap();
        let phi = induced_automorphism(&f).unwrap();
        assert!(lhs.equals_on_generators(&phi.compose(&phi).unwrap()));
        let twist = FactorElement {
            factor: 1,
            payload: Payload::Power(2),
        };
        let mut t = GraphMap::identity(g.clone());
        t.twists[1] = Some(FactorAutomorphism {
            source: 1,
            target: 1,
            images: vec![twist],
            inverse_images: vec![FactorElement {
                factor: 1,
                payload: Payload::Power(3),
            }],
        });
        let ft = f.compose(&t).unwrap();
        assert!(induced_automorphism(&ft)
            .unwrap()
            .equals_on_generators(&phi.compose(&induced_automorphism(&t).unwrap()).unwrap()));
    }
}

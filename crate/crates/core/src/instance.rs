//! TOML instance files: a free product, named automorphisms, marked graphs,
//! graph maps and rays, plus default experiment parameters.
//!
//! ```toml
//! name = "cyclic5"
//! free = { rank = 2 }
//!
//! [[factors]]
//! id = 1
//! kind = "cyclic"
//! order = 5
//! generators = ["a"]
//!
//! [automorphisms.phiA]
//! free = ["b2 a@1", "b1 b2"]
//! factors = [{ target = 1 }]
//! inverse = { free = ["b2 a@1 B1", "b1 a^4@1"], factors = [{ target = 1 }] }
//! ```
//!
//! See `instances/` for complete files.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::autos::{attractor_ray, AutImages, FactorImage, FpAutomorphism};
use crate::factors::{FactorAutomorphism, FactorElement, FactorGroup, FactorSystem};
use crate::graphs::{induced_automorphism, Edge, EdgePath, GraphMap, MarkedGraph, Vertex};
use crate::words::{FreeProduct, Ray, Word};

/// Instance files shipped with the crate, by name.
pub const BUNDLED: [(&str, &str); 2] = [
    ("cyclic5", include_str!("../../../instances/cyclic5.toml")),
    ("f2factor", include_str!("../../../instances/f2factor.toml")),
];

/// Parses a bundled instance by name.
pub fn bundled(name: &str) -> Option<Result<Instance, InstanceError>> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| Instance::parse(text))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstanceError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("validation error: {0}")]
    Validation(String),
}

fn invalid(msg: impl Into<String>) -> InstanceError {
    InstanceError::Validation(msg.into())
}

fn detail(e: InstanceError) -> String {
    match e {
        InstanceError::Validation(m) => m,
        other => other.to_string(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstance {
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    factors: Vec<RawFactor>,
    free: RawFree,
    #[serde(default)]
    automorphisms: BTreeMap<String, RawAut>,
    #[serde(default)]
    graphs: BTreeMap<String, RawGraph>,
    #[serde(default)]
    maps: BTreeMap<String, RawMap>,
    #[serde(default)]
    rays: BTreeMap<String, RawRay>,
    #[serde(default)]
    experiment: Experiment,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFactor {
    id: usize,
    kind: String,
    generators: Vec<String>,
    order: Option<u32>,
    elements: Option<Vec<String>>,
    table: Option<Vec<Vec<String>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFree {
    rank: usize,
    names: Option<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawImages {
    free: Vec<String>,
    factors: Vec<RawFactorImage>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAut {
    free: Vec<String>,
    factors: Vec<RawFactorImage>,
    inverse: RawImages,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFactorImage {
    target: usize,
    #[serde(default)]
    conjugator: Option<String>,
    /// Images of the source generators; identity when omitted.
    #[serde(default)]
    twist: Option<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    basepoint: String,
    vertices: Vec<RawVertex>,
    edges: Vec<RawEdge>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVertex {
    name: String,
    factor: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    name: String,
    from: String,
    to: String,
    length: f64,
    /// Marking letter; absent for spanning-tree edges.
    label: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMap {
    graph: String,
    edges: BTreeMap<String, String>,
    #[serde(default)]
    vertices: BTreeMap<String, String>,
    #[serde(default)]
    twists: BTreeMap<String, RawTwist>,
    automorphism: Option<String>,
    target: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTwist {
    images: Vec<String>,
    inverse: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRay {
    automorphism: Option<String>,
    seed: Option<String>,
    rational: Option<String>,
}

/// Default parameters; command-line flags override them.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Experiment {
    pub depth: usize,
    pub kmax: usize,
    pub levels: usize,
    pub radius: usize,
    pub power_cap: usize,
    pub order_cap: usize,
    pub seed: u64,
    pub train_track_iterations: usize,
    pub npath_scale: usize,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            depth: 500,
            kmax: 20,
            levels: 8,
            radius: 2,
            power_cap: 4,
            order_cap: 64,
            seed: 0x6b75_726f_7368,
            train_track_iterations: 12,
            npath_scale: 6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MapEntry {
    pub map: GraphMap,
    /// Name of the automorphism the map is mated with.
    pub automorphism: Option<String>,
    /// Ray the attractive ray of this map should converge to.
    pub target: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RayDecl {
    /// `lim φ^k(seed)`.
    Attractor { automorphism: String, seed: Word },
    /// `u^∞`.
    Rational(Word),
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub name: String,
    pub description: String,
    pub fp: Arc<FreeProduct>,
    pub automorphisms: BTreeMap<String, FpAutomorphism>,
    pub graphs: BTreeMap<String, Arc<MarkedGraph>>,
    pub maps: BTreeMap<String, MapEntry>,
    pub rays: BTreeMap<String, RayDecl>,
    pub experiment: Experiment,
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

impl Instance {
    pub fn parse(text: &str) -> Result<Self, InstanceError> {
        let raw: RawInstance = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
            InstanceError::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        Self::build(raw)
    }

    fn build(raw: RawInstance) -> Result<Self, InstanceError> {
        let mut groups = Vec::new();
        for f in &raw.factors {
            groups.push(build_factor(f)?);
        }
        let sys = FactorSystem::new(groups).map_err(|e| invalid(e.to_string()))?;
        let names = raw
            .free
            .names
            .clone()
            .unwrap_or_else(|| (1..=raw.free.rank).map(|i| format!("b{i}")).collect());
        if names.len() != raw.free.rank {
            return Err(invalid("free.names must list free.rank names"));
        }
        let fp = Arc::new(FreeProduct::new(sys, names).map_err(|e| invalid(e.to_string()))?);

        let mut automorphisms = BTreeMap::new();
        for (name, a) in &raw.automorphisms {
            let phi = build_aut(&fp, a).map_err(|e| invalid(format!("automorphism `{name}`: {}", detail(e))))?;
            automorphisms.insert(name.clone(), phi);
        }

        let mut graphs = BTreeMap::new();
        for (name, g) in &raw.graphs {
            let graph = build_graph(&fp, g).map_err(|e| invalid(format!("graph `{name}`: {}", detail(e))))?;
            graphs.insert(name.clone(), Arc::new(graph));
        }

        let mut instance = Instance {
            name: raw.name,
            description: raw.description,
            fp,
            automorphisms,
            graphs,
            maps: BTreeMap::new(),
            rays: BTreeMap::new(),
            experiment: raw.experiment,
        };

        for (name, r) in &raw.rays {
            let decl = match (&r.automorphism, &r.seed, &r.rational) {
                (Some(a), Some(seed), None) => {
                    instance.aut_expr(a)?;
                    RayDecl::Attractor {
                        automorphism: a.clone(),
                        seed: instance.word(seed)?,
                    }
                }
                (None, None, Some(u)) => RayDecl::Rational(instance.word(u)?),
                _ => return Err(invalid(format!("ray `{name}` needs automorphism + seed, or rational"))),
            };
            instance.rays.insert(name.clone(), decl);
        }

        for (name, m) in &raw.maps {
            let entry = instance
                .build_map(m)
                .map_err(|e| invalid(format!("map `{name}`: {}", detail(e))))?;
            instance.maps.insert(name.clone(), entry);
        }
        Ok(instance)
    }

    pub fn word(&self, text: &str) -> Result<Word, InstanceError> {
        self.fp.parse_word(text).map_err(|e| invalid(e.to_string()))
    }

    /// `name`, `name^k`, `inner:<word>`, and `*`-compositions of these (the
    /// rightmost factor acts first).
    pub fn aut_expr(&self, expr: &str) -> Result<FpAutomorphism, InstanceError> {
        let mut acc: Option<FpAutomorphism> = None;
        for part in expr.split('*') {
            let part = part.trim();
            let phi = if let Some(u) = part.strip_prefix("inner:") {
                FpAutomorphism::inner(self.fp.clone(), &self.word(u)?)
            } else {
                let (name, k) = match part.split_once('^') {
                    Some((n, k)) => (
                        n.trim(),
                        k.trim()
                            .parse::<i64>()
                            .map_err(|_| invalid(format!("bad exponent in `{part}`")))?,
                    ),
                    None => (part, 1),
                };
                let base = if name == "id" {
                    FpAutomorphism::identity(self.fp.clone())
                } else {
                    self.automorphisms
                        .get(name)
                        .cloned()
                        .ok_or_else(|| invalid(format!("unknown automorphism `{name}`")))?
                };
                base.power(k).map_err(|e| invalid(e.to_string()))?
            };
            acc = Some(match acc {
                None => phi,
                Some(a) => a.compose(&phi).map_err(|e| invalid(e.to_string()))?,
            });
        }
        acc.ok_or_else(|| invalid("empty automorphism expression"))
    }

    /// A declared ray name, or `rational:<word>`.
    pub fn ray(&self, spec: &str) -> Result<Ray, InstanceError> {
        if let Some(u) = spec.strip_prefix("rational:") {
            return self.fp.rational_ray(&self.word(u)?).map_err(|e| invalid(e.to_string()));
        }
        match self.rays.get(spec) {
            Some(RayDecl::Attractor { automorphism, seed }) => Ok(attractor_ray(&self.aut_expr(automorphism)?, seed)),
            Some(RayDecl::Rational(u)) => self.fp.rational_ray(u).map_err(|e| invalid(e.to_string())),
            None => Err(invalid(format!("unknown ray `{spec}`"))),
        }
    }

    pub fn map(&self, name: &str) -> Result<&MapEntry, InstanceError> {
        self.maps.get(name).ok_or_else(|| invalid(format!("unknown map `{name}`")))
    }

    fn build_map(&self, m: &RawMap) -> Result<MapEntry, InstanceError> {
        let graph = self
            .graphs
            .get(&m.graph)
            .ok_or_else(|| invalid(format!("unknown graph `{}`", m.graph)))?
            .clone();
        let vertex = |name: &str| {
            graph
                .vertex_by_name(name)
                .ok_or_else(|| invalid(format!("unknown vertex `{name}`")))
        };
        let mut vertex_images: Vec<usize> = (0..graph.vertices().len()).collect();
        for (v, img) in &m.vertices {
            vertex_images[vertex(v)?] = vertex(img)?;
        }
        for key in m.edges.keys() {
            if graph.edge_by_name(key).is_none() {
                return Err(invalid(format!("unknown edge `{key}`")));
            }
        }
        let mut edge_images = Vec::new();
        for e in graph.edges() {
            let text = m
                .edges
                .get(&e.name)
                .ok_or_else(|| invalid(format!("missing image of edge `{}`", e.name)))?;
            let start = vertex_images[e.origin];
            let p: EdgePath = graph.parse_path(text, Some(start)).map_err(|err| invalid(err.to_string()))?;
            edge_images.push(p);
        }
        let mut twists = Vec::new();
        for (v, vert) in graph.vertices().iter().enumerate() {
            let Some(i) = vert.factor else {
                if m.twists.contains_key(&vert.name) {
                    return Err(invalid(format!("free vertex `{}` cannot carry a twist", vert.name)));
                }
                twists.push(None);
                continue;
            };
            let j = graph
                .factor_of(vertex_images[v])
                .ok_or_else(|| invalid(format!("vertex `{}` maps to a free vertex", vert.name)))?;
            let twist = match m.twists.get(&vert.name) {
                Some(t) => self.twist(i, j, &t.images, &t.inverse)?,
                None if i == j => FactorAutomorphism::identity(self.fp.factor(i).map_err(|e| invalid(e.to_string()))?),
                None => return Err(invalid(format!("vertex `{}` needs a twist H{i} -> H{j}", vert.name))),
            };
            twists.push(Some(twist));
        }
        for key in m.twists.keys() {
            vertex(key)?;
        }
        let map = GraphMap::new(graph, vertex_images, edge_images, twists).map_err(|e| invalid(e.to_string()))?;
        let induced = induced_automorphism(&map).map_err(|e| invalid(e.to_string()))?;
        if let Some(a) = &m.automorphism {
            let phi = self.aut_expr(a)?;
            if !induced.equals_on_generators(&phi) {
                return Err(invalid(format!("map is not mated with `{a}`")));
            }
        }
        if let Some(t) = &m.target {
            if !self.rays.contains_key(t) {
                return Err(invalid(format!("unknown ray `{t}`")));
            }
        }
        Ok(MapEntry {
            map,
            automorphism: m.automorphism.clone(),
            target: m.target.clone(),
        })
    }

    fn twist(&self, source: usize, target: usize, images: &[String], inverse: &[String]) -> Result<FactorAutomorphism, InstanceError> {
        let elems = |id: usize, list: &[String]| -> Result<Vec<FactorElement>, InstanceError> {
            let h = self.fp.factor(id).map_err(|e| invalid(e.to_string()))?;
            list.iter()
                .map(|s| {
                    h.parse_element(s.trim_end_matches(&format!("@{id}")))
                        .map_err(|e| invalid(e.to_string()))?
                        .ok_or_else(|| invalid(format!("twist image `{s}` is the identity")))
                })
                .collect()
        };
        let t = FactorAutomorphism {
            source,
            target,
            images: elems(target, images)?,
            inverse_images: elems(source, inverse)?,
        };
        let verdict = crate::factors::verify_factor_aut(self.fp.factors(), &t);
        if !verdict.ok {
            return Err(invalid(format!("twist H{source} -> H{target} is not an isomorphism")));
        }
        Ok(t)
    }
}

fn build_factor(f: &RawFactor) -> Result<FactorGroup, InstanceError> {
    let g = match f.kind.as_str() {
        "cyclic" => {
            let [name] = f.generators.as_slice() else {
                return Err(invalid(format!("cyclic factor {} needs exactly one generator", f.id)));
            };
            let order = f.order.ok_or_else(|| invalid(format!("cyclic factor {} needs an order", f.id)))?;
            FactorGroup::cyclic(f.id, order, name.clone())
        }
        "free" => FactorGroup::free(f.id, f.generators.clone()),
        "table" => {
            let elements = f
                .elements
                .clone()
                .ok_or_else(|| invalid(format!("table factor {} needs elements", f.id)))?;
            let rows = f
                .table
                .as_ref()
                .ok_or_else(|| invalid(format!("table factor {} needs a table", f.id)))?;
            let index = |s: &String| {
                elements
                    .iter()
                    .position(|e| e == s)
                    .ok_or_else(|| invalid(format!("unknown element `{s}` in table of factor {}", f.id)))
            };
            let table = rows
                .iter()
                .map(|row| row.iter().map(index).collect::<Result<Vec<_>, _>>())
                .collect::<Result<Vec<_>, _>>()?;
            FactorGroup::table(f.id, elements, table, f.generators.clone())
        }
        other => return Err(invalid(format!("unknown factor kind `{other}`"))),
    };
    g.map_err(|e| invalid(e.to_string()))
}

/// Factor entry: target, conjugator and raw twist images.
type FactorEntry = (usize, Word, Option<Vec<String>>);

fn images(fp: &FreeProduct, raw: &RawImages) -> Result<(Vec<Word>, Vec<FactorEntry>), InstanceError> {
    let free = raw
        .free
        .iter()
        .map(|s| fp.parse_word(s).map_err(|e| invalid(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let factors = raw
        .factors
        .iter()
        .map(|f| {
            let c = fp
                .parse_word(f.conjugator.as_deref().unwrap_or("1"))
                .map_err(|e| invalid(e.to_string()))?;
            Ok((f.target, c, f.twist.clone()))
        })
        .collect::<Result<Vec<_>, InstanceError>>()?;
    Ok((free, factors))
}

fn build_aut(fp: &Arc<FreeProduct>, a: &RawAut) -> Result<FpAutomorphism, InstanceError> {
    let forward = RawImages {
        free: a.free.clone(),
        factors: a
            .factors
            .iter()
            .map(|f| RawFactorImage {
                target: f.target,
                conjugator: f.conjugator.clone(),
                twist: f.twist.clone(),
            })
            .collect(),
    };
    let (ffree, ffactors) = images(fp, &forward)?;
    let (ifree, ifactors) = images(fp, &a.inverse)?;
    let r = fp.factors().len();
    if ffactors.len() != r || ifactors.len() != r {
        return Err(invalid(format!("expected {r} factor images")));
    }
    let parse_list = |id: usize, list: &Option<Vec<String>>| -> Result<Vec<FactorElement>, InstanceError> {
        let h = fp.factor(id).map_err(|e| invalid(e.to_string()))?;
        match list {
            None => Ok(h.generators()),
            Some(list) => list
                .iter()
                .map(|s| {
                    h.parse_element(s.trim_end_matches(&format!("@{id}")))
                        .map_err(|e| invalid(e.to_string()))?
                        .ok_or_else(|| invalid(format!("twist image `{s}` is the identity")))
                })
                .collect(),
        }
    };
    let mut fwd_factor = Vec::new();
    let mut inv_factor = vec![None; r];
    for (i, (target, conj, twist)) in ffactors.iter().enumerate() {
        let source = i + 1;
        if *target == 0 || *target > r {
            return Err(invalid(format!("factor image target {target} out of range")));
        }
        let (back, _, inv_twist) = &ifactors[target - 1];
        if *back != source {
            return Err(invalid(format!("inverse does not send H{target} back to H{source}")));
        }
        let t = FactorAutomorphism {
            source,
            target: *target,
            images: parse_list(*target, twist)?,
            inverse_images: parse_list(source, inv_twist)?,
        };
        inv_factor[target - 1] = Some(FactorImage {
            target: source,
            conjugator: ifactors[target - 1].1.clone(),
            twist: t.inverse(),
        });
        fwd_factor.push(FactorImage {
            target: *target,
            conjugator: conj.clone(),
            twist: t,
        });
    }
    let inv_factor = inv_factor
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| invalid("factor permutation is not a bijection"))?;
    FpAutomorphism::checked(
        fp.clone(),
        AutImages {
            free: ffree,
            factors: fwd_factor,
        },
        AutImages {
            free: ifree,
            factors: inv_factor,
        },
    )
    .map_err(|e| invalid(e.to_string()))
}

fn build_graph(fp: &Arc<FreeProduct>, g: &RawGraph) -> Result<MarkedGraph, InstanceError> {
    let vertices: Vec<Vertex> = g
        .vertices
        .iter()
        .map(|v| Vertex {
            name: v.name.clone(),
            factor: v.factor,
        })
        .collect();
    let find = |name: &str| {
        vertices
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| invalid(format!("unknown vertex `{name}`")))
    };
    let mut edges = Vec::new();
    for e in &g.edges {
        edges.push(Edge {
            name: e.name.clone(),
            origin: find(&e.from)?,
            terminus: find(&e.to)?,
            length: e.length,
            label: match &e.label {
                Some(l) => Some(fp.parse_word(l).map_err(|err| invalid(err.to_string()))?),
                None => None,
            },
        });
    }
    let basepoint = find(&g.basepoint)?;
    MarkedGraph::new(fp.clone(), vertices, edges, basepoint).map_err(|e| invalid(e.to_string()))
}

use serde_json::{json, Map, Value};

use kurosh::autos::{
    classify_fixed_point, fixes_boundary_point, orbit, Attraction, ClassifyParams, FixVerdict,
    FpAutomorphism,
};
use kurosh::graphs::{
    find_n_paths, gates_from_map, growing_edges, is_train_track, lip_qvol_bcc,
    o_irreducibility_check, transition_spectrum, MarkedGraph, TrainTrackFailure,
};
use kurosh::instance::{Instance, InstanceError};
use kurosh::lamination::{
    check_generation_property, generate_language, leaf_segment, quasi_periodicity_constant,
    stabilizes_language,
};
use kurosh::rays::{build_ray, find_base_vertex, stab_check, RaysError, SearchParams};
use kurosh::words::{detect_rational, Word};

/// Levels whose fresh adapted splitting is recomputed by `ray`.
const SPLITTING_LEVELS: usize = 9;
/// Syllables of the ray word shown by `ray`.
const WORD_PREVIEW: usize = 40;
/// Syllables of the ray word written to the dump.
const WORD_DUMP: usize = 200;
/// Edges of the leaf segment shown by `lamination`.
const LEAF_PREVIEW: usize = 60;
/// Iteration of the leaf segment used for quasi-periodicity.
const LEAF_ITERATION: usize = 8;
/// Iteration cap for the generation property.
const GENERATION_CAP: usize = 15;
/// Default language depth.
const LANGUAGE_DEPTH: usize = 6;

#[derive(Debug)]
pub enum Failure {
    Parse(String),
    Validation(String),
}

impl From<InstanceError> for Failure {
    fn from(e: InstanceError) -> Self {
        match e {
            InstanceError::Parse {
                line,
                column,
                message,
            } => Failure::Parse(format!("line {line}, column {column}: {message}")),
            InstanceError::Validation(m) => Failure::Validation(m),
        }
    }
}

pub struct Flags {
    pub depth: Option<usize>,
    pub kmax: Option<usize>,
    pub levels: Option<usize>,
    pub radius: Option<usize>,
    pub power_cap: Option<usize>,
    pub order_cap: Option<usize>,
    pub seed: Option<u64>,
}

pub fn load_instance(spec: &str) -> Result<Instance, Failure> {
    if let Some(inst) = kurosh::instance::bundled(spec) {
        return Ok(inst?);
    }
    let text = std::fs::read_to_string(spec)
        .map_err(|e| Failure::Parse(format!("cannot read {spec}: {e}")))?;
    Ok(Instance::parse(&text)?)
}

pub struct Report {
    pub lines: Vec<String>,
    pub ok: bool,
    data: Map<String, Value>,
}

impl Report {
    pub fn json(&self) -> String {
        let mut s =
            serde_json::to_string_pretty(&Value::Object(self.data.clone())).expect("serializable");
        s.push('\n');
        s
    }
}

fn real(x: f64) -> String {
    format!("{x:.12}")
}

fn yes(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

pub struct Session {
    inst: Instance,
    flags: Flags,
    report: Report,
}

impl Session {
    pub fn new(inst: Instance, flags: Flags) -> Self {
        let mut data = Map::new();
        data.insert("instance".into(), json!(inst.name));
        Session {
            inst,
            flags,
            report: Report {
                lines: Vec::new(),
                ok: true,
                data,
            },
        }
    }

    pub fn into_report(self) -> Report {
        self.report
    }

    fn line(&mut self, s: impl Into<String>) {
        self.report.lines.push(s.into());
    }

    fn put(&mut self, key: &str, v: Value) {
        self.report.data.insert(key.into(), v);
    }

    fn check(&mut self, ok: bool) {
        self.report.ok &= ok;
    }

    fn word(&self, text: &str) -> Result<Word, Failure> {
        self.inst
            .fp
            .parse_word(text)
            .map_err(|e| Failure::Parse(e.to_string()))
    }

    fn fmt(&self, w: &Word) -> String {
        self.inst.fp.format_word(w)
    }

    fn aut(&self, expr: &str) -> Result<FpAutomorphism, Failure> {
        Ok(self.inst.aut_expr(expr)?)
    }

    fn depth(&self) -> usize {
        self.flags.depth.unwrap_or(self.inst.experiment.depth)
    }

    pub fn reduce(&mut self, text: &str) -> Result<(), Failure> {
        let w = self.word(text)?;
        self.line(format!("word: {}", self.fmt(&w)));
        self.line(format!("length: {}", w.len()));
        self.put("command", json!("reduce"));
        self.put("word", json!(self.fmt(&w)));
        self.put("length", json!(w.len()));
        Ok(())
    }

    pub fn apply(&mut self, aut: &str, text: &str) -> Result<(), Failure> {
        let phi = self.aut(aut)?;
        let w = self.word(text)?;
        let img = phi.apply(&w);
        self.line(format!("image: {}", self.fmt(&img)));
        self.line(format!("length: {}", img.len()));
        self.put("command", json!("apply"));
        self.put("image", json!(self.fmt(&img)));
        Ok(())
    }

    pub fn orbit(&mut self, aut: &str, text: &str, k: usize) -> Result<(), Failure> {
        let phi = self.aut(aut)?;
        let w = self.word(text)?;
        let words: Vec<String> = orbit(&phi, &w, k).iter().map(|x| self.fmt(x)).collect();
        for (i, x) in words.iter().enumerate() {
            self.line(format!("{i}: {x}"));
        }
        self.put("command", json!("orbit"));
        self.put("orbit", json!(words));
        Ok(())
    }

    pub fn rational(&mut self, text: &str) -> Result<(), Failure> {
        let u = self.word(text)?;
        let fp = self.inst.fp.clone();
        self.put("command", json!("rational"));
        if !fp.is_hyperbolic(&u) {
            self.line(format!("word: {}", self.fmt(&u)));
            self.line("hyperbolic: no (elliptic words have no rational boundary point)");
            self.put("hyperbolic", json!(false));
            self.check(false);
            return Ok(());
        }
        let (core, conj) = fp.cyclic_reduce(&u);
        let mut ray = fp
            .rational_ray(&u)
            .map_err(|e| Failure::Validation(e.to_string()))?;
        let depth = self.depth();
        let preview = ray
            .prefix_word(20.min(depth))
            .map_err(|e| Failure::Validation(e.to_string()))?;
        self.line(format!("core: {}", self.fmt(&core)));
        self.line(format!("conjugator: {}", self.fmt(&conj)));
        self.line(format!("prefix: {} ...", self.fmt(&preview)));
        let period = detect_rational(&mut ray, depth, core.len().max(1))
            .map_err(|e| Failure::Validation(e.to_string()))?;
        match &period {
            Some(p) => self.line(format!(
                "period: {} offset: {}",
                self.fmt(&p.period),
                p.offset
            )),
            None => self.line("period: none"),
        }
        let inner = FpAutomorphism::inner(fp.clone(), &u);
        let verdict = fixes_boundary_point(&inner, &mut ray, depth)
            .map_err(|e| Failure::Validation(e.to_string()))?;
        self.line(format!("inner: {}", verdict_text(&verdict)));
        self.put("hyperbolic", json!(true));
        self.put("core", json!(self.fmt(&core)));
        self.put("inner_fixed", json!(verdict.is_fixed()));
        self.check(verdict.is_fixed() && period.is_some());
        Ok(())
    }

    pub fn traincheck(&mut self, name: &str) -> Result<(), Failure> {
        let entry = self.inst.map(name)?.clone();
        let f = &entry.map;
        let g = f.graph().clone();
        let k = self.inst.experiment.train_track_iterations;
        self.put("command", json!("traincheck"));
        self.line(format!("map: {name}"));
        if let Some(a) = &entry.automorphism {
            self.line(format!("mated-with: {a}"));
        }
        let tt = match is_train_track(f, k) {
            Ok(r) => r,
            Err(e) => {
                self.line(format!("train-track: no ({e})"));
                self.check(false);
                return Ok(());
            }
        };
        self.line(format!(
            "train-track: {} (K = {k}, iterations checked: {})",
            yes(tt.is_train_track),
            tt.iterations_checked
        ));
        if let Some(fail) = &tt.failure {
            self.line(format!("witness: {}", failure_text(&g, fail)));
        }
        let gates = gates_from_map(f, k).map_err(|e| Failure::Validation(e.to_string()))?;
        for (v, classes) in gates.gates.iter().enumerate() {
            let parts: Vec<String> = classes
                .iter()
                .map(|c| format!("{{{}}}", g.format_projection(c)))
                .collect();
            self.line(format!(
                "gates {}: {}",
                g.vertices()[v].name,
                parts.join(" ")
            ));
        }
        let spectrum = transition_spectrum(f);
        for (i, row) in spectrum.matrix.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            self.line(format!("matrix {}: {}", g.edges()[i].name, cells.join(" ")));
        }
        for (edges, pf) in &spectrum.blocks {
            let names: Vec<&str> = edges.iter().map(|&e| g.edges()[e].name.as_str()).collect();
            self.line(format!("block {{{}}}: {}", names.join(" "), real(*pf)));
        }
        self.line(format!("PF: {}", real(spectrum.pf)));
        let b = lip_qvol_bcc(f).map_err(|e| Failure::Validation(e.to_string()))?;
        self.line(format!("lipschitz: {}", real(b.lipschitz)));
        self.line(format!("qvol: {}", real(b.qvol)));
        self.line(format!("bcc-bound: {}", real(b.bcc_bound)));
        let irr = o_irreducibility_check(f).map_err(|e| Failure::Validation(e.to_string()))?;
        self.line(format!("irreducible: {}", yes(irr.irreducible)));
        for s in &irr.invariant_subgraphs {
            let names: Vec<&str> = s
                .edges
                .iter()
                .map(|&e| g.edges()[e].name.as_str())
                .collect();
            self.line(format!(
                "invariant {{{}}}: hyperbolic {}",
                names.join(" "),
                yes(s.supports_hyperbolic)
            ));
        }
        if let Some(w) = &irr.witness {
            let names: Vec<&str> = w.iter().map(|&e| g.edges()[e].name.as_str()).collect();
            self.line(format!(
                "witness: invariant subgraph {{{}}}",
                names.join(" ")
            ));
        }
        let scale = self.inst.experiment.npath_scale;
        match find_n_paths(f, scale) {
            Ok(inv) => {
                let classes: Vec<String> = inv
                    .classes
                    .iter()
                    .map(|c| g.format_path(&c.representative))
                    .collect();
                self.line(format!(
                    "n-paths: {}",
                    if classes.is_empty() {
                        "none".into()
                    } else {
                        classes.join(", ")
                    }
                ));
                self.line(format!(
                    "stable at scale {scale}: {}",
                    yes(inv.stable_at_scale)
                ));
            }
            Err(e) => self.line(format!("n-paths: search aborted ({e})")),
        }
        self.put("train_track", json!(tt.is_train_track));
        self.put("pf", json!(real(spectrum.pf)));
        self.put("irreducible", json!(irr.irreducible));
        self.put("bcc_bound", json!(real(b.bcc_bound)));
        self.check(tt.is_train_track && irr.irreducible);
        Ok(())
    }

    pub fn lamination(&mut self, name: &str, by: &[String]) -> Result<(), Failure> {
        let entry = self.inst.map(name)?.clone();
        let f = &entry.map;
        let g = f.graph().clone();
        let depth = self.flags.depth.unwrap_or(LANGUAGE_DEPTH);
        let kmax = self.flags.kmax.unwrap_or(self.inst.experiment.kmax);
        self.put("command", json!("lamination"));
        let lang = generate_language(f, depth, kmax);
        self.line(format!("map: {name}"));
        self.line(format!("depth: {depth} kmax: {kmax}"));
        match lang.saturated_at {
            Some(k) => self.line(format!("saturated-at: {k}")),
            None => self.line("saturated-at: none"),
        }
        for (i, c) in lang.counts_by_length().iter().enumerate() {
            self.line(format!("words of length {}: {c}", i + 1));
        }
        self.line(format!("closed: {}", yes(lang.is_closed())));
        let growing = growing_edges(f);
        if let Some(&e) = growing.iter().next() {
            if let Some(leaf) = leaf_segment(f, e, LEAF_ITERATION) {
                let proj = leaf.projection();
                let shown = g.format_projection(&proj[..proj.len().min(LEAF_PREVIEW)]);
                self.line(format!(
                    "leaf f^{LEAF_ITERATION}({}): {} edges: {shown}{}",
                    g.edges()[e].name,
                    proj.len(),
                    if proj.len() > LEAF_PREVIEW {
                        " ..."
                    } else {
                        ""
                    }
                ));
                let mut table = Vec::new();
                for l in 1..=depth {
                    let c = quasi_periodicity_constant(&proj, l);
                    self.line(format!(
                        "quasi-periodicity L={l}: {}",
                        c.map_or("none".to_string(), |c| c.to_string())
                    ));
                    table.push(json!([l, c]));
                }
                self.put("quasi_periodicity", json!(table));
            }
        }
        let gen = check_generation_property(&lang, f, GENERATION_CAP);
        let skipped: Vec<&str> = gen
            .skipped_edges
            .iter()
            .map(|&e| g.edges()[e].name.as_str())
            .collect();
        self.line(format!(
            "generation (k <= {GENERATION_CAP}): {} max-k {} skipped-non-growing {{{}}}",
            if gen.ok { "ok" } else { "failed" },
            gen.max_k,
            skipped.join(" ")
        ));
        if let Some((e, w)) = &gen.failure {
            self.line(format!(
                "generation witness: {} not in iterates of {}",
                g.format_projection(w),
                g.edges()[*e].name
            ));
        }
        let mut stab_ok = true;
        let mut stabilizers = vec![name.to_string()];
        stabilizers.extend(by.iter().cloned());
        for h_name in &stabilizers {
            let h = self.inst.map(h_name)?.map.clone();
            if !std::sync::Arc::ptr_eq(h.graph(), f.graph()) && **h.graph() != *g {
                return Err(Failure::Validation(format!(
                    "map `{h_name}` lives on another graph"
                )));
            }
            let c = lip_qvol_bcc(&h)
                .map_err(|e| Failure::Validation(e.to_string()))?
                .bcc_bound;
            let r = stabilizes_language(&h, &lang, c);
            self.line(format!(
                "stabilizes {h_name} C={}: checked {} skipped {} failed {}",
                real(c),
                r.checked,
                r.skipped,
                r.failed
            ));
            if let Some((w, img)) = &r.first_failure {
                self.line(format!(
                    "  failure: {} -> {}",
                    g.format_projection(w),
                    g.format_projection(img)
                ));
            }
            if r.checked == 0 {
                self.line("  vacuous: every image was trimmed away at this C");
            }
            stab_ok &= r.stabilizes();
        }
        self.put("words", json!(lang.len()));
        self.put("saturated_at", json!(lang.saturated_at));
        self.put("generation_ok", json!(gen.ok));
        self.put("stabilizes", json!(stab_ok));
        self.check(lang.saturated_at.is_some() && gen.ok && stab_ok);
        Ok(())
    }

    pub fn ray(&mut self, name: &str) -> Result<(), Failure> {
        let entry = self.inst.map(name)?.clone();
        let f = &entry.map;
        let g = f.graph().clone();
        let exp = self.inst.experiment.clone();
        let params = SearchParams {
            radius: self.flags.radius.unwrap_or(exp.radius),
            power_cap: self.flags.power_cap.unwrap_or(exp.power_cap),
            npath_scale: exp.npath_scale,
            probes: 3,
        };
        let levels = self.flags.levels.unwrap_or(exp.levels);
        self.put("command", json!("ray"));
        self.line(format!("map: {name}"));
        let mut target = match &entry.target {
            Some(t) => {
                self.line(format!("target: {t}"));
                Some(self.inst.ray(t)?)
            }
            None => None,
        };
        let base = match find_base_vertex(f, params, target.as_mut()) {
            Ok(b) => b,
            Err(e @ RaysError::Exhausted { .. }) => {
                self.line(format!("base: {e}"));
                self.check(false);
                return Ok(());
            }
            Err(e) => return Err(Failure::Validation(e.to_string())),
        };
        self.line(format!(
            "base: {} power: {}",
            self.fmt(&base.offset),
            base.power
        ));
        let built = match build_ray(f, &base, levels, exp.npath_scale) {
            Ok(r) => r,
            Err(e) => {
                self.line(format!("build: {e}"));
                self.check(false);
                return Ok(());
            }
        };
        let mut segs = Vec::new();
        for (k, s) in built.segments.iter().enumerate() {
            self.line(format!(
                "segment {k}: edges {} length {} junction-cancellation 0",
                s.edge_count(),
                real(g.length(s))
            ));
            segs.push(json!([k, s.edge_count()]));
        }
        let mut ray = built.ray();
        let preview = ray
            .prefix_word(WORD_PREVIEW.min(built.word.len()))
            .map_err(|e| Failure::Validation(e.to_string()))?;
        self.line(format!(
            "word ({} syllables): {} ...",
            built.word.len(),
            self.fmt(&preview)
        ));
        let classes: Vec<String> = built
            .inventory
            .classes
            .iter()
            .map(|c| g.format_path(&c.representative))
            .collect();
        self.line(format!(
            "n-paths of f^{}: {} (stable at scale {}: {})",
            base.power,
            classes.join(", "),
            built.inventory.scale,
            yes(built.inventory.stable_at_scale)
        ));

        let mut splits_ok = true;
        let mut ell0 = 0.0f64;
        let through = levels.min(SPLITTING_LEVELS);
        match built.truncated(through).splittings() {
            Ok(splits) => {
                let first = splits.first().map_or(0.0, |s| s.max_singular_length(&g));
                for s in &splits {
                    let singular = s.bricks.iter().filter(|b| b.singular).count();
                    let m = s.max_singular_length(&g);
                    ell0 = ell0.max(m);
                    self.line(format!(
                        "splitting level {}: bricks {} singular {} shape {} max-singular {} split-check ok",
                        s.level,
                        s.bricks.len(),
                        singular,
                        if s.shape_ok() { "ok" } else { "bad" },
                        real(m)
                    ));
                    splits_ok &= s.shape_ok() && m <= first + 1e-12;
                }
                self.line(format!(
                    "ell0 through level {}: {} bounded {}",
                    through.saturating_sub(1),
                    real(ell0),
                    yes(splits_ok)
                ));
                if let Some(s) = splits.first() {
                    for (i, b) in s.bricks.iter().enumerate() {
                        self.line(format!(
                            "brick {i}: {} {} length {}",
                            if b.singular { "singular" } else { "regular" },
                            g.format_path(&b.path),
                            real(g.length(&b.path))
                        ));
                    }
                }
            }
            Err(e) => {
                self.line(format!("splitting: {e}"));
                splits_ok = false;
            }
        }
        let depth = self.flags.depth.unwrap_or(200).min(exp.depth);
        let verdict = fixes_boundary_point(built.automorphism(), &mut ray, depth)
            .map_err(|e| Failure::Validation(e.to_string()))?;
        self.line(format!(
            "fixed by phi^{}: {}",
            base.power,
            verdict_text(&verdict)
        ));
        let mut target_ok = true;
        if let Some(t) = target.as_mut() {
            let n = built.word.len().min(depth);
            let a = ray
                .prefix_word(n)
                .map_err(|e| Failure::Validation(e.to_string()))?;
            let b = t
                .prefix_word(n)
                .map_err(|e| Failure::Validation(e.to_string()))?;
            target_ok = a == b;
            self.line(format!("agrees with target to {n}: {}", yes(target_ok)));
        }
        let dumped = ray
            .prefix_word(WORD_DUMP.min(built.word.len()))
            .map_err(|e| Failure::Validation(e.to_string()))?;
        self.put("word", json!(self.fmt(&dumped)));
        self.put("base", json!(self.fmt(&base.offset)));
        self.put("power", json!(base.power));
        self.put("segments", json!(segs));
        self.put("ell0", json!(real(ell0)));
        self.put("splittings_ok", json!(splits_ok));
        self.check(splits_ok && verdict.is_fixed() && target_ok);
        Ok(())
    }

    pub fn classify(&mut self, aut: &str, ray: &str) -> Result<(), Failure> {
        let phi = self.aut(aut)?;
        let mut x = self.inst.ray(ray)?;
        let mut params = ClassifyParams::default();
        if let Some(s) = self.flags.seed {
            params.seed = s;
        }
        if let Some(d) = self.flags.depth {
            params.depth = d;
        }
        self.put("command", json!("classify"));
        match classify_fixed_point(&phi, &mut x, &params) {
            Ok(c) => {
                let evidence = match c.evidence {
                    Attraction::Attractive => "attractive",
                    Attraction::RepulsiveUnderInverse => "repulsive (attractive under the inverse)",
                    Attraction::Inconclusive => "inconclusive",
                };
                self.line(format!("evidence: {evidence}"));
                self.line(format!("forward agreement: {:?}", c.forward_agreement));
                self.line(format!("inverse agreement: {:?}", c.inverse_agreement));
                self.put("evidence", json!(evidence));
                self.check(c.evidence != Attraction::Inconclusive);
            }
            Err(kurosh::autos::AutError::NotFixed(k)) => {
                self.line(format!("diverges-at: {k}"));
                self.put("diverges_at", json!(k));
                self.check(false);
            }
            Err(e) => return Err(Failure::Validation(e.to_string())),
        }
        Ok(())
    }

    pub fn stabcheck(&mut self, aut: &str, ray: &str) -> Result<(), Failure> {
        let psi = self.aut(aut)?;
        let mut x = self.inst.ray(ray)?;
        let depth = self.depth();
        let cap = self
            .flags
            .order_cap
            .unwrap_or(self.inst.experiment.order_cap);
        let r =
            stab_check(&psi, &mut x, depth, cap).map_err(|e| Failure::Validation(e.to_string()))?;
        self.put("command", json!("stabcheck"));
        match r.verdict {
            FixVerdict::FixedToDepth(d) => self.line(format!("fixed-to-depth: {d} (evidence)")),
            FixVerdict::DivergesAt(k) => self.line(format!("diverges-at: {k} (proof)")),
        }
        self.line(format!(
            "order: {}",
            r.order
                .map_or(format!("> {cap} or unbounded image growth"), |o| o
                    .to_string())
        ));
        self.line(format!("factor-direction: {}", yes(r.factor_direction)));
        self.line(format!(
            "preserves-each-factor: {}",
            yes(r.preserves_each_factor)
        ));
        self.line(format!(
            "contradicts: {}",
            if r.contradicts {
                "CONTRADICTS (finite-order factor-preserving automorphism fixes the point)"
            } else {
                "no"
            }
        ));
        self.put(
            "verdict",
            match r.verdict {
                FixVerdict::FixedToDepth(d) => json!({ "fixed_to_depth": d }),
                FixVerdict::DivergesAt(k) => json!({ "diverges_at": k }),
            },
        );
        self.put("order", json!(r.order));
        self.put("factor_direction", json!(r.factor_direction));
        self.put("contradicts", json!(r.contradicts));
        self.check(r.verdict.is_fixed() && !r.contradicts);
        Ok(())
    }
}

fn verdict_text(v: &FixVerdict) -> String {
    match v {
        FixVerdict::FixedToDepth(d) => format!("fixed-to-depth {d}"),
        FixVerdict::DivergesAt(k) => format!("diverges-at {k}"),
    }
}

fn failure_text(g: &MarkedGraph, f: &TrainTrackFailure) -> String {
    let name = |e: usize| g.edges()[e].name.clone();
    match f {
        TrainTrackFailure::IllegalTurn(t) => format!(
            "illegal turn ({}, {}) in the image of {}",
            g.format_dir(t.turn.incoming),
            g.format_dir(t.turn.outgoing),
            name(t.edge)
        ),
        TrainTrackFailure::UnreducedImage { edge } => {
            format!("image of {} is not reduced", name(*edge))
        }
        TrainTrackFailure::GermCondition { vertex, germs } => format!(
            "germs {} and {} at {} are identified by Df",
            g.format_dir(germs.0),
            g.format_dir(germs.1),
            g.vertices()[*vertex].name
        ),
        TrainTrackFailure::Cancellation { edge, iteration } => {
            format!("cancellation in f^{iteration}({})", name(*edge))
        }
        TrainTrackFailure::TooFewGates { vertex } => {
            format!("one gate at {}", g.vertices()[*vertex].name)
        }
    }
}

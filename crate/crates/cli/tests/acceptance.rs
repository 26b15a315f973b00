//! End-to-end acceptance suite: one line per criterion, nonzero exit on any failure.

use std::collections::BTreeMap;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use kurosh::graphs::{lip_qvol_bcc, EdgePath};
use kurosh::instance::Instance;
use kurosh::words::{common_prefix, detect_rational, FreeProduct, Word};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BIN: &str = env!("CARGO_BIN_EXE_kurosh");
const CYCLIC5: &str = include_str!("../../../instances/cyclic5.toml");
const F2FACTOR: &str = include_str!("../../../instances/f2factor.toml");

const PF_TOL: f64 = 1e-9;
const RANDOM_CASES: usize = 1000;
const SEED: u64 = 0x6163_6365_7074;

#[derive(Clone, Debug, PartialEq)]
struct Run {
    stdout: String,
    code: i32,
    elapsed: Duration,
}

impl Run {
    fn line(&self, prefix: &str) -> Option<&str> {
        self.stdout.lines().find_map(|l| l.strip_prefix(prefix))
    }

    fn has(&self, line: &str) -> bool {
        self.stdout.lines().any(|l| l == line)
    }
}

fn kurosh(args: &[&str]) -> Run {
    let start = Instant::now();
    let out = Command::new(BIN).args(args).output().expect("binary runs");
    Run {
        stdout: String::from_utf8(out.stdout).expect("utf-8 output"),
        code: out.status.code().unwrap_or(-1),
        elapsed: start.elapsed(),
    }
}

/// Every CLI invocation the suite depends on, by key.
fn commands() -> Vec<(&'static str, Vec<String>)> {
    let dir = std::env::temp_dir();
    let dump = |name: &str| {
        dir.join(format!(
            "kurosh-acceptance-{}-{name}.json",
            std::process::id()
        ))
    };
    let v = |args: &[&str]| args.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let mut ray_b = v(&[
        "--instance",
        "f2factor",
        "ray",
        "fB",
        "--levels",
        "12",
        "--dump",
    ]);
    ray_b.push(dump("rayB").display().to_string());
    vec![
        ("reduce", v(&["reduce", "b1 B1"])),
        ("tt-A", v(&["traincheck", "fA"])),
        ("tt-fixloop", v(&["traincheck", "fixloop"])),
        ("ray-A", v(&["ray", "fA", "--levels", "12"])),
        ("ray-B", ray_b),
        (
            "lam-A",
            v(&["lamination", "fA", "--depth", "6", "--kmax", "20"]),
        ),
        (
            "lam-B",
            v(&[
                "--instance",
                "f2factor",
                "lamination",
                "fB",
                "--depth",
                "6",
                "--by",
                "psi_map",
            ]),
        ),
        (
            "stab-psi-B",
            v(&[
                "--instance",
                "f2factor",
                "stabcheck",
                "psi",
                "XB",
                "--depth",
                "500",
            ]),
        ),
        (
            "stab-swap-B",
            v(&[
                "--instance",
                "f2factor",
                "stabcheck",
                "psi_swap",
                "XB",
                "--depth",
                "500",
            ]),
        ),
        (
            "stab-psi2-A",
            v(&["stabcheck", "psi2", "XA", "--depth", "500"]),
        ),
        (
            "stab-psi3-A",
            v(&["stabcheck", "psi3", "XA", "--depth", "500"]),
        ),
        (
            "stab-psi4-A",
            v(&["stabcheck", "psi4", "XA", "--depth", "500"]),
        ),
        (
            "stab-phi2-A",
            v(&["stabcheck", "phiA^2", "XA", "--depth", "500"]),
        ),
        ("rational", v(&["rational", "b1 b2", "--depth", "1000"])),
        (
            "inner-a",
            v(&["stabcheck", "inner:a@1", "XA", "--depth", "500"]),
        ),
        ("classify-A", v(&["classify", "phiA^2", "XA"])),
    ]
}

fn run_all() -> BTreeMap<&'static str, (Run, Vec<String>)> {
    commands()
        .into_iter()
        .map(|(k, args)| {
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            (k, (kurosh(&refs), args))
        })
        .collect()
}

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        ok,
        detail: detail.into(),
    }
}

fn real_after(run: &Run, prefix: &str) -> Option<f64> {
    run.line(prefix)?.split_whitespace().next()?.parse().ok()
}

fn criterion_1(runs: &BTreeMap<&str, (Run, Vec<String>)>) -> Verdict {
    let r = &runs["tt-A"].0;
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    let pf = real_after(r, "PF: ");
    let oracle =
        pf.is_some_and(|x| (x * x - x - 1.0).abs() < PF_TOL && (x - golden).abs() < PF_TOL);
    let tt = r
        .line("train-track: ")
        .is_some_and(|l| l.starts_with("yes (K = 12,"));
    verdict(
        oracle && tt && r.code == 0 && r.elapsed < Duration::from_secs(1),
        format!(
            "train-track {tt}, PF {pf:?}, exit {}, {:?}",
            r.code, r.elapsed
        ),
    )
}

fn criterion_2(runs: &BTreeMap<&str, (Run, Vec<String>)>) -> Verdict {
    let a = &runs["tt-A"].0;
    let bad = &runs["tt-fixloop"].0;
    let a_ok = a.has("irreducible: yes") && a.has("invariant {h}: hyperbolic no");
    let witness = bad.line("witness: invariant subgraph ");
    let bad_ok = bad.has("irreducible: no") && witness.is_some() && bad.code == 1;
    verdict(
        a_ok && bad_ok,
        format!("fA irreducible {a_ok}, fixloop rejected with witness {witness:?}"),
    )
}

/// `φ_B²` iterated on `b1` by plain letter substitution; images of positive
/// words under `φ_B` stay positive, so no reduction is needed.
fn oracle_b(len: usize) -> Result<Vec<String>, String> {
    let phi = |w: &[String]| -> Vec<String> {
        w.iter()
            .flat_map(|x| match x.as_str() {
                "b1" => vec!["b2".to_string(), "a1".to_string()],
                "b2" => vec!["b1".to_string(), "b2".to_string()],
                other => vec![other.to_string()],
            })
            .collect()
    };
    let mut w = vec!["b1".to_string()];
    while w.len() < len {
        let next = phi(&phi(&w));
        if !next.starts_with(&w) {
            return Err(format!("prefix not nested at length {}", w.len()));
        }
        w = next;
    }
    if w.windows(2)
        .any(|p| p[0].starts_with('a') && p[1].starts_with('a'))
    {
        return Err("adjacent factor letters".into());
    }
    w.truncate(len);
    Ok(w)
}

fn segments_clean(r: &Run, count: usize) -> bool {
    let segs: Vec<&str> = r
        .stdout
        .lines()
        .filter(|l| l.starts_with("segment "))
        .collect();
    segs.len() == count && segs.iter().all(|l| l.ends_with("junction-cancellation 0"))
}

fn criterion_3(runs: &BTreeMap<&str, (Run, Vec<String>)>) -> Verdict {
    let a = &runs["ray-A"].0;
    let (b, b_args) = &runs["ray-B"];
    let powers = a.has("base: b1 power: 2") && b.has("base: b1 power: 2");
    let clean = segments_clean(a, 12) && segments_clean(b, 12);
    let dump_path = b_args.last().expect("dump path");
    let word = std::fs::read_to_string(dump_path)
        .ok()
        .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
        .and_then(|v| v["word"].as_str().map(str::to_string))
        .unwrap_or_default();
    let _ = std::fs::remove_file(dump_path);
    let got: Vec<String> = word
        .split_whitespace()
        .map(|t| t.trim_end_matches("@1").to_string())
        .collect();
    let oracle = oracle_b(200);
    let agree = oracle.as_ref().is_ok_and(|o| got.len() == 200 && &got == o);
    verdict(
        powers && clean && agree && a.code == 0 && b.code == 0,
        format!(
            "m = 2 on both {powers}, 12 clean segments each {clean}, B prefix agrees to {} syllables {agree}",
            got.len()
        ),
    )
}

fn criterion_4(runs: &BTreeMap<&str, (Run, Vec<String>)>) -> Verdict {
    let mut details = Vec::new();
    let mut ok = true;
    for key in ["ray-A", "ray-B"] {
        let r = &runs[key].0;
        let levels: Vec<&str> = r
            .stdout
            .lines()
            .filter(|l| l.starts_with("splitting level "))
            .collect();
        let through_8 = (0..=8).all(|k| {
            levels
                .iter()
                .any(|l| l.starts_with(&format!("splitting level {k}: ")))
        });
        let shapes = levels
            .iter()
            .all(|l| l.contains("shape ok") && l.ends_with("split-check ok"));
        let lengths = levels.iter().all(|l| {
            l.split("max-singular ")
                .nth(1)
                .and_then(|s| s.split_whitespace().next())
                .and_then(|x| x.parse::<f64>().ok())
                .is_some_and(|x| x <= 1.0 + 1e-12)
        });
        let ell0 = real_after(r, "ell0 through level 8: ").is_some_and(|x| (x - 1.0).abs() < 1e-12);
        ok &= through_8 && shapes && lengths && ell0;
        details.push(format!(
            "{key}: levels {} shapes {shapes} lengths {lengths} ell0=1 {ell0}",
            levels.len()
        ));
    }
    verdict(ok, details.join("; "))
}

fn criterion_5(runs: &BTreeMap<&str, (Run, Vec<String>)>) -> Verdict {
    let r = &runs["lam-A"].0;
    let sat = r
        .line("saturated-at: ")
        .and_then(|s| s.parse::<usize>().ok());
    let qp = r
        .line("quasi-periodicity L=3: ")
        .and_then(|s| s.parse::<usize>().ok());
    let leaf = r.line("leaf f^8(e1): ").is_some();
    let gen = r
        .line("generation (k <= 15): ")
        .is_some_and(|s| s.starts_with("ok"));
    verdict(
        sat.is_some_and(|k| k <= 20) && leaf && qp.is_some_and(|c| c <= 60) && gen,
        format!("saturated at {sat:?}, L'(3) on f^8(e1) = {qp:?}, generation {gen}"),
    )
}

fn criterion_6(runs: &BTreeMap<&str, (Run, Vec<String>)>) -> Verdict {
    let a = &runs["lam-A"].0;
    let b = &runs["lam-B"].0;
    let own = a.line("stabilizes fA C=5.000000000000: ");
    let twist = b.line("stabilizes psi_map C=");
    let zero = |s: Option<&str>| s.is_some_and(|s| s.ends_with("failed 0"));
    verdict(
        zero(own) && zero(twist),
        format!(
            "fA at C=5: {}; psi_map: {}",
            own.unwrap_or("missing"),
            twist.unwrap_or("missing")
        ),
    )
}

fn diverges_at(r: &Run) -> Option<usize> {
    r.line("diverges-at: ")?
        .split_whitespace()
        .next()?
        .parse()
        .ok()
}

fn criterion_7(runs: &BTreeMap<&str, (Run, Vec<String>)>) -> Verdict {
    let psi = &runs["stab-psi-B"].0;
    let psi_ok = psi.has("fixed-to-depth: 500 (evidence)") && psi.has("factor-direction: yes");
    let swap = &runs["stab-swap-B"].0;
    let swap_ok = diverges_at(swap).is_some_and(|k| k <= 5) && swap.has("order: 2");
    let mut a_ok = true;
    for key in ["stab-psi2-A", "stab-psi3-A", "stab-psi4-A"] {
        let r = &runs[key].0;
        a_ok &= diverges_at(r).is_some_and(|k| k <= 4) && r.has("contradicts: no");
    }
    let phi = &runs["stab-phi2-A"].0;
    let phi_ok = phi.has("fixed-to-depth: 500 (evidence)") && phi.has("factor-direction: no");
    verdict(
        psi_ok && swap_ok && a_ok && phi_ok,
        format!(
            "psi fixed {psi_ok}, swap diverges at {:?}, Z/5 twists diverge {a_ok}, phi^2 fixed {phi_ok}",
            diverges_at(swap)
        ),
    )
}

fn criterion_8(runs: &BTreeMap<&str, (Run, Vec<String>)>) -> Verdict {
    let rational = &runs["rational"].0;
    let fixed = rational.has("inner: fixed-to-depth 1000") && rational.code == 0;
    let inner = diverges_at(&runs["inner-a"].0);
    let inst = Instance::parse(CYCLIC5).expect("bundled instance");
    let mut xa = inst.ray("XA").expect("XA");
    let periodic = detect_rational(&mut xa, 200, 20).expect("prefix available");
    verdict(
        fixed && inner.is_some_and(|k| k <= 2) && periodic.is_none(),
        format!(
            "(b1b2)^inf fixed {fixed}, inner a diverges at {inner:?}, XA periodicity {periodic:?}"
        ),
    )
}

fn random_word(fp: &FreeProduct, rng: &mut ChaCha8Rng, len: usize) -> Word {
    let gens = fp.generators();
    let mut w = Word::empty();
    for _ in 0..len {
        let g = &gens[rng.gen_range(0..gens.len())];
        let g = if rng.gen_bool(0.5) {
            g.clone()
        } else {
            fp.inverse(g)
        };
        w = fp.mul(&w, &g);
    }
    w
}

fn criterion_9() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut triples = 0;
    let mut ultrametric = true;
    let mut cancellation_ok = true;
    let mut worst = 0.0f64;
    let mut bounds = Vec::new();
    for (text, map) in [(CYCLIC5, "fA"), (F2FACTOR, "fB")] {
        let inst = Instance::parse(text).expect("bundled instance");
        let fp: Arc<FreeProduct> = inst.fp.clone();
        for _ in 0..RANDOM_CASES / 2 {
            let stem = {
                let n = rng.gen_range(0..4);
                random_word(&fp, &mut rng, n)
            };
            let mut rays = Vec::new();
            while rays.len() < 3 {
                let tail = {
                    let n = rng.gen_range(1..6);
                    random_word(&fp, &mut rng, n)
                };
                let u = fp.mul(&stem, &tail);
                if let Ok(r) = fp.rational_ray(&u) {
                    rays.push(r);
                }
            }
            let prefixes: Vec<Word> = rays
                .iter_mut()
                .map(|r| r.prefix_word(60).expect("rays extend"))
                .collect();
            let gromov = |i: usize, j: usize| {
                common_prefix(&prefixes[i], &prefixes[j], 60)
                    .expect("finite")
                    .len()
            };
            let xy = gromov(0, 1);
            let yz = gromov(1, 2);
            let xz = gromov(0, 2);
            let d = |n: usize| (-(n as f64)).exp();
            ultrametric &= d(xz) <= d(xy).max(d(yz)) * (1.0 + 1e-12);
            triples += 1;
        }

        let entry = inst.map(map).expect("map");
        let f = &entry.map;
        let g = f.graph();
        let bcc = lip_qvol_bcc(f).expect("bounds").bcc_bound;
        bounds.push(bcc);
        for _ in 0..RANDOM_CASES / 2 {
            let w = {
                let n = rng.gen_range(2..10);
                random_word(&fp, &mut rng, n)
            };
            let path = g.path_of_word(&w);
            if path.steps.len() < 2 {
                continue;
            }
            let cut = rng.gen_range(1..path.steps.len());
            let p = EdgePath {
                start: path.start,
                steps: path.steps[..cut].to_vec(),
            };
            let q = EdgePath {
                start: g.end(&p),
                steps: path.steps[cut..].to_vec(),
            };
            let (fp_, fq) = (f.f_sharp(&p), f.f_sharp(&q));
            let (joined, _) = g.concat(&fp_, &fq).expect("paths meet");
            let cancelled = (g.length(&fp_) + g.length(&fq) - g.length(&joined)) / 2.0;
            worst = worst.max(cancelled);
            cancellation_ok &= cancelled <= bcc + 1e-12;
        }
    }
    verdict(
        ultrametric && cancellation_ok && triples == RANDOM_CASES,
        format!("{triples} triples ultrametric {ultrametric}; worst cancellation {worst} within bounds {bounds:?}"),
    )
}

fn criterion_10(
    first: &BTreeMap<&str, (Run, Vec<String>)>,
    second: &BTreeMap<&str, (Run, Vec<String>)>,
    total: Duration,
) -> Verdict {
    let differing: Vec<&str> = first
        .iter()
        .filter(|(k, (r, _))| {
            let s = &second[*k].0;
            r.stdout != s.stdout || r.code != s.code
        })
        .map(|(k, _)| *k)
        .collect();
    let slowest = first
        .values()
        .map(|(r, _)| r.elapsed)
        .max()
        .unwrap_or_default();
    verdict(
        differing.is_empty()
            && total < Duration::from_secs(60)
            && slowest < Duration::from_secs(10),
        format!("differing {differing:?}, slowest command {slowest:?}, suite {total:?}"),
    )
}

fn main() {
    let start = Instant::now();
    let first = run_all();
    let reduce = &first["reduce"].0;
    assert!(
        reduce.has("word: 1") && reduce.code == 0,
        "reduce smoke check:\n{}",
        reduce.stdout
    );

    let mut verdicts = vec![
        criterion_1(&first),
        criterion_2(&first),
        criterion_3(&first),
        criterion_4(&first),
        criterion_5(&first),
        criterion_6(&first),
        criterion_7(&first),
        criterion_8(&first),
        criterion_9(),
    ];
    let second = run_all();
    verdicts.push(criterion_10(&first, &second, start.elapsed()));

    let mut failed = 0;
    for (i, v) in verdicts.iter().enumerate() {
        println!(
            "criterion {:>2}: {} ({})",
            i + 1,
            if v.ok { "pass" } else { "FAIL" },
            v.detail
        );
        failed += usize::from(!v.ok);
    }
    println!(
        "acceptance: {} of {} criteria pass",
        verdicts.len() - failed,
        verdicts.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

use std::sync::Arc;

use kurosh::graphs::{transition_matrix, transition_spectrum, Dir, EdgePath};
use kurosh::instance::Instance;
use kurosh::words::{FreeProduct, Word};
use proptest::prelude::*;

const CYCLIC5: &str = include_str!("../../../instances/cyclic5.toml");
const F2FACTOR: &str = include_str!("../../../instances/f2factor.toml");

fn cyclic5() -> Instance {
    Instance::parse(CYCLIC5).unwrap()
}

fn f2factor() -> Instance {
    Instance::parse(F2FACTOR).unwrap()
}

/// Random word as a product of generators and inverses, indexed by `picks`.
fn word_from(fp: &Arc<FreeProduct>, picks: &[(usize, bool)]) -> Word {
    let gens = fp.generators();
    picks.iter().fold(Word::empty(), |w, &(i, inv)| {
        let g = &gens[i % gens.len()];
        let g = if inv { fp.inverse(g) } else { g.clone() };
        fp.mul(&w, &g)
    })
}

fn picks() -> impl Strategy<Value = Vec<(usize, bool)>> {
    prop::collection::vec((0usize..8, any::<bool>()), 0..24)
}

proptest! {
    #[test]
    fn reduce_is_idempotent(p in picks(), b in any::<bool>()) {
        let inst = if b { cyclic5() } else { f2factor() };
        let fp = &inst.fp;
        let w = word_from(fp, &p);
        prop_assert_eq!(fp.reduce(w.syllables()), w.clone());
        prop_assert_eq!(fp.mul(&w, &fp.inverse(&w)), Word::empty());
        let text = fp.format_word(&w);
        prop_assert_eq!(fp.parse_word(&text).unwrap(), w);
    }

    #[test]
    fn path_and_reverse_tighten_to_nothing(p in picks(), b in any::<bool>()) {
        let inst = if b { cyclic5() } else { f2factor() };
        let g = inst.graphs.values().next().unwrap().clone();
        let w = word_from(&inst.fp, &p);
        let path = g.path_of_word(&w);
        prop_assert!(g.is_reduced(&path));
        prop_assert_eq!(g.word_of_path(&path), w);
        let (back, _) = g.concat(&path, &g.reverse(&path)).unwrap();
        prop_assert!(back.steps.is_empty());
    }

    #[test]
    fn tightened_images_follow_the_automorphism(p in picks()) {
        let inst = cyclic5();
        let entry = inst.map("fA").unwrap();
        let phi = inst.aut_expr("phiA").unwrap();
        let g = entry.map.graph();
        let w = word_from(&inst.fp, &p);
        let image = entry.map.f_sharp(&g.path_of_word(&w));
        prop_assert_eq!(g.word_of_path(&image), phi.apply(&w));
    }
}

#[test]
fn pf_of_square_is_square_of_pf() {
    for (inst, name) in [(cyclic5(), "fA"), (f2factor(), "fB")] {
        let f = &inst.map(name).unwrap().map;
        let lambda = transition_spectrum(f).pf;
        let lambda2 = transition_spectrum(&f.power(2).unwrap()).pf;
        assert!((lambda2 - lambda * lambda).abs() < 1e-9, "{name}: {lambda2} vs {lambda}^2");
    }
}

fn mat_mul(a: &[Vec<u64>], b: &[Vec<u64>]) -> Vec<Vec<u64>> {
    let n = a.len();
    (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

#[test]
fn train_track_iterates_match_matrix_powers() {
    let inst = cyclic5();
    let f = &inst.map("fA").unwrap().map;
    let g = f.graph();
    let m = transition_matrix(f);
    let mut mk = m.clone();
    for k in 1..=8 {
        for e in 0..g.edges().len() {
            let path = EdgePath {
                start: g.edges()[e].origin,
                steps: vec![kurosh::graphs::Step::Edge(Dir::forward(e))],
            };
            let image = f.iterate(&path, k).unwrap();
            let mut counts = vec![0u64; g.edges().len()];
            for d in image.edges() {
                counts[d.edge] += 1;
            }
            let column: Vec<u64> = mk.iter().map(|row| row[e]).collect();
            assert_eq!(counts, column, "f^{k}(edge {e})");
        }
        mk = mat_mul(&m, &mk);
    }
}

use kurosh::instance::Instance;

fn load(name: &str) -> Instance {
    let path = format!("{}/../../instances/{name}.toml", env!("CARGO_MANIFEST_DIR"));
    Instance::parse(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn bundled_instances_validate() {
    let a = load("cyclic5");
    assert_eq!(a.maps.len(), 2);
    for (name, order) in [("psi2", 4), ("psi3", 4), ("psi4", 2)] {
        let psi = a.aut_expr(name).unwrap();
        assert_eq!(psi.order(8).unwrap(), Some(order));
    }
    let b = load("f2factor");
    assert_eq!(b.aut_expr("psi_swap").unwrap().order(8).unwrap(), Some(2));
    assert_eq!(b.aut_expr("psi").unwrap().order(64).unwrap(), None);
    assert!(b.aut_expr("psi").unwrap().is_factor_direction());
}

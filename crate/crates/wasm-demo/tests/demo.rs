use mamlab_wasm_demo::{chain_path_impl, limit_path_impl, moment_curves_impl};

#[test]
fn limit_path_relaxes_to_equilibrium() {
    // constant rates 1 and 3: x_1 → 3/4 at rate 4
    let v = limit_path_impl(1.0, 3.0, 0.0, 1.0, 0.5, 2.0).unwrap();
    assert_eq!(v.len() % 2, 0);
    let (t, x) = (v[v.len() - 2], v[v.len() - 1]);
    assert_eq!(t, 2.0);
    assert!((x - (0.75 - 0.25 * (-8.0f64).exp())).abs() < 1e-10);
}

#[test]
fn chain_path_is_seeded_and_on_the_lattice() {
    let a = chain_path_impl(false, 200, 1.0, 2.0, 0.5, 3.0, 0.5, 1.0, 7).unwrap();
    let b = chain_path_impl(false, 200, 1.0, 2.0, 0.5, 3.0, 0.5, 1.0, 7).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 2 * 201);
    for pair in a.chunks(2) {
        let k = pair[1] * 200.0;
        assert!((k - k.round()).abs() < 1e-9);
    }
    assert!(chain_path_impl(true, 1, 1.0, 2.0, 0.0, 1.0, 0.5, 1.0, 7).is_err());
}

#[test]
fn moment_curves_match_wright_fisher() {
    let v = moment_curves_impl(0.0, 0.0, 0.0, 1.0, 0.5, 1.0, 2).unwrap();
    let row = &v[v.len() - 3..];
    assert_eq!(row[0], 1.0);
    assert!((row[1] - 0.5).abs() < 1e-12);
    assert!((row[2] - 0.408030).abs() < 1e-6);
}

#[test]
fn bad_amplitude_is_reported() {
    assert!(limit_path_impl(1.0, 1.0, 1.5, 1.0, 0.5, 1.0).is_err());
}

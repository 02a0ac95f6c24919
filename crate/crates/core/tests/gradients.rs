//! Analytic gradients against central differences.

use sdgd_core::approx::{Mlp, NetSpec};
use sdgd_core::gradcheck::{battery, check, BATTERY_PROBES};

#[test]
fn every_model_gradient_matches_finite_differences() {
    for seed in [0, 17] {
        let results = battery(seed).unwrap();
        assert_eq!(results.len(), 8);
        for (name, r) in results {
            assert!(r.probes >= BATTERY_PROBES, "{name}: {} probes", r.probes);
            assert!(r.passes(1e-3), "{name} (seed {seed}): max relative error {}", r.max_rel_error);
        }
    }
}

#[test]
fn mlp_input_gradient() {
    let mlp = Mlp::new(NetSpec::new(6, 3, vec![16, 16]).unwrap(), 5).unwrap();
    let up = [0.3, -1.2, 0.7];
    let x = [0.1, -0.4, 0.9, 0.0, -1.0, 0.5];
    let ig = mlp.input_grad(&x, &up).unwrap();
    let f = |x: &[f64]| mlp.forward(x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
    let coords: Vec<usize> = (0..120).map(|i| i % 6).collect();
    assert!(check(f, &x, &ig, &coords, 1e-5).passes(1e-3));
}

#[test]
fn a_wrong_gradient_is_caught() {
    let mlp = Mlp::new(NetSpec::new(4, 1, vec![8]).unwrap(), 1).unwrap();
    let x = [0.5, -0.5, 1.0, 0.2];
    let mut ig = mlp.input_grad(&x, &[1.0]).unwrap();
    ig[2] += 0.01;
    let f = |x: &[f64]| mlp.forward(x).unwrap()[0];
    assert!(!check(f, &x, &ig, &[2], 1e-5).passes(1e-3));
}

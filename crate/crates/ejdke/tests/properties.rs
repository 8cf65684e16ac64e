//! Randomized property tests: kernel scaling laws, the Young convolution
//! bound, and estimator invariants under random inputs.

use ejdke::estimator::{l2_distance_on_a, EvalGrid};
use ejdke::kernel::{build_kernel, convolve_kernels, ProductKernel};
use ejdke::quad;
use ejdke::rngstream;
use proptest::prelude::*;
use rand::Rng;

/// `‖K_h * g‖_A <= ‖K_h‖_1 ‖g‖_{2,Ã}` for random piecewise-constant `g` on the
/// enlarged box Ã; the convolution is evaluated by direct quadrature.
#[test]
fn young_bound_holds_for_random_test_functions() {
    let d = 1usize;
    let kernel = build_kernel(3);
    let h = [0.5];
    let pk = ProductKernel::new(kernel.clone(), h.to_vec());
    let a_half = 1.0;
    // enlarged compact: pad by the kernel support diameter
    let pad = 2.0 * (d as f64).sqrt();
    let tilde_half = a_half + pad;
    let cells = 64usize;
    let width = 2.0 * tilde_half / cells as f64;
    let mut rng = rngstream::derive(2024, &[]);
    let eval = EvalGrid::cube(d, a_half, 50);

    for _ in 0..100 {
        let g: Vec<f64> = (0..cells).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g_at = |x: f64| -> f64 {
            let idx = ((x + tilde_half) / width).floor();
            if idx < 0.0 || idx >= cells as f64 {
                0.0
            } else {
                g[idx as usize]
            }
        };
        // (K_h * g)(x) over the evaluation box, by panelwise quadrature
        let conv_at = |x: f64| -> f64 {
            let panels = 128;
            let mut acc = 0.0;
            for i in 0..panels {
                let lo = x - h[0] + 2.0 * h[0] * i as f64 / panels as f64;
                let hi = x - h[0] + 2.0 * h[0] * (i + 1) as f64 / panels as f64;
                acc += quad::integrate(|u| kernel.eval_scaled(x - u, h[0]) * g_at(u), lo, hi, 6);
            }
            acc
        };
        let conv_vals: Vec<f64> = (0..eval.n_nodes()).map(|i| conv_at(eval.node(i)[0])).collect();
        let zeros = vec![0.0; conv_vals.len()];
        let lhs = l2_distance_on_a(&conv_vals, &zeros, &eval);
        let g_l2 = (g.iter().map(|v| v * v * width).sum::<f64>()).sqrt();
        let rhs = pk.l1_norm() * g_l2;
        assert!(
            lhs <= rhs + 1e-9,
            "Young bound violated: ‖K_h*g‖_A = {lhs} > ‖K_h‖_1 ‖g‖_2 = {rhs}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// `int x^l K = 0` for `1 <= l <= M` and `int K = 1`, at random order.
    #[test]
    fn kernel_moments_vanish(order in 0usize..8) {
        let k = build_kernel(order);
        prop_assert!((k.moment(0) - 1.0).abs() < 1e-10);
        for l in 1..=order {
            prop_assert!(k.moment(l).abs() < 1e-8, "moment {l} of order-{order} kernel");
        }
    }

    /// Convolved kernels commute exactly at random bandwidths and points.
    #[test]
    fn convolution_commutes_at_random_inputs(
        h1 in 0.05f64..1.0, h2 in 0.05f64..1.0,
        e1 in 0.05f64..1.0, e2 in 0.05f64..1.0,
        x in -2.0f64..2.0, y in -2.0f64..2.0,
    ) {
        let k = build_kernel(3);
        let a = convolve_kernels(&k, &[h1, h2], &[e1, e2]);
        let b = convolve_kernels(&k, &[e1, e2], &[h1, h2]);
        prop_assert_eq!(a.eval(&[x, y]), b.eval(&[x, y]));
    }

    /// The scaled kernel integrates to 1 for any bandwidth (substitution rule).
    #[test]
    fn scaled_kernel_mass_is_invariant(h in 0.02f64..1.0) {
        let k = build_kernel(5);
        let mass = quad::integrate(|x| k.eval_scaled(x, h), -h, h, 200);
        prop_assert!((mass - 1.0).abs() < 1e-9);
    }

    /// L2 distance is a metric-like form: symmetry and triangle inequality
    /// on random value vectors.
    #[test]
    fn l2_distance_symmetry_and_triangle(
        seed in 0u64..1000,
    ) {
        let grid = EvalGrid::cube(2, 1.0, 5);
        let n = grid.n_nodes();
        let mut rng = rngstream::derive(seed, &[1]);
        let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let e: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fg = l2_distance_on_a(&f, &g, &grid);
        let gf = l2_distance_on_a(&g, &f, &grid);
        prop_assert_eq!(fg.to_bits(), gf.to_bits());
        let fe = l2_distance_on_a(&f, &e, &grid);
        let eg = l2_distance_on_a(&e, &g, &grid);
        prop_assert!(fg <= fe + eg + 1e-12);
    }
}

use std::sync::Arc;

use gslab_core::domain::{build_grid, build_laplacian, carre_du_champ, FormOperator, GridSpec, Mask};
use gslab_core::perturbation::{
    hardy_holds, kappa_constant, make_measure, reciprocal_supersolution, DensitySpec, PerturbedForm,
};
use gslab_core::spectral::{green_lower_constant, ground_state, GreenData};
use proptest::prelude::*;

fn interval(n: usize) -> FormOperator {
    build_laplacian(&build_grid(&GridSpec::interval(n)).unwrap())
}

fn lshape(n: usize) -> FormOperator {
    build_laplacian(&build_grid(&GridSpec::unit_square(n, Mask::Lshape)).unwrap())
}

fn hardy(n: usize, c: f64) -> PerturbedForm {
    let g = build_grid(&GridSpec::interval(n)).unwrap();
    let mu = make_measure(&g, &DensitySpec::InverseSquareBoundary { c }).unwrap();
    PerturbedForm::certified(Arc::new(build_laplacian(&g)), mu).unwrap()
}

fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

#[test]
fn kappa_scales_linearly() {
    let g = build_grid(&GridSpec::interval(31)).unwrap();
    let base = build_laplacian(&g);
    let m1 = make_measure(&g, &DensitySpec::InverseSquareBoundary { c: 0.05 }).unwrap();
    let m2 = make_measure(&g, &DensitySpec::InverseSquareBoundary { c: 0.1 }).unwrap();
    let (k1, k2) = (kappa_constant(&base, &m1).unwrap().kappa, kappa_constant(&base, &m2).unwrap().kappa);
    assert!((k2 - 2.0 * k1).abs() <= 1e-7 * k2);
}

#[test]
fn reciprocal_supersolution_is_strict() {
    let pf = hardy(63, 1.0 / 16.0);
    for delta in [0.25, 0.5, 0.9] {
        let cert = reciprocal_supersolution(&pf, delta).unwrap();
        assert!(cert.verdict && cert.min_residual > 0.0);
    }
}

#[test]
fn green_sandwich_between_ground_state_products() {
    let form = lshape(11);
    let op = form.operator();
    let sd = ground_state(op).unwrap();
    let green = GreenData::new(op);
    let c_g = green_lower_constant(&green, &sd, 100, 3, None).unwrap().c_g;
    for y in [0, 17, 40] {
        let col = green.column(y).unwrap();
        for x in 0..op.dim() {
            assert!(col[x] >= c_g * sd.phi0[x] * sd.phi0[y] * (1.0 - 1e-12));
            assert!(col[x] <= col[y] * (1.0 + 1e-12));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normal_contraction_lowers_energy(f in vec_strategy(81)) {
        let form = lshape(9);
        let f = &f[..form.dim()];
        let unit: Vec<f64> = f.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let abs: Vec<f64> = f.iter().map(|v| v.abs()).collect();
        let e = form.energy(f);
        prop_assert!(form.energy(&unit) <= e * (1.0 + 1e-12) + 1e-15);
        prop_assert!(form.energy(&abs) <= e * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn truncation_lowers_energy(f in vec_strategy(31), k in 0.0f64..2.0) {
        let form = interval(31);
        let cut: Vec<f64> = f.iter().map(|v| v.min(k)).collect();
        prop_assert!(form.energy(&cut) <= form.energy(&f) * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn gamma_is_local_and_sums_to_energy(f in vec_strategy(31)) {
        let form = interval(31);
        let g = carre_du_champ(&form, &f);
        prop_assert!(g.iter().all(|v| *v >= 0.0));
        let e = form.energy(&f);
        prop_assert!((g.iter().sum::<f64>() - e).abs() <= 1e-10 * e.max(1e-12));
    }

    #[test]
    fn product_rule(w in prop::collection::vec(0.1f64..3.0, 31), f in vec_strategy(31)) {
        let form = interval(31);
        let wf: Vec<f64> = w.iter().zip(&f).map(|(a, b)| a * b).collect();
        let aw = form.operator().stiffness().apply(&w);
        let tail: f64 = (0..31).map(|i| f[i] * f[i] * w[i] * aw[i]).sum();
        let lhs = form.energy(&wf);
        let rhs = form.weighted_energy(&w, &f) + tail;
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1e-9));
    }

    #[test]
    fn chain_rule_bound_for_lipschitz_maps(f in vec_strategy(31)) {
        let form = interval(31);
        let sf: Vec<f64> = f.iter().map(|v| v.sin()).collect();
        let g = carre_du_champ(&form, &f);
        let gs = carre_du_champ(&form, &sf);
        let b = form.boundary();
        for i in 0..31 {
            let boundary_part = b[i] * (sf[i] * sf[i] - f[i] * f[i]);
            prop_assert!(gs[i] <= g[i] + boundary_part.max(0.0) + 1e-12);
        }
    }

    #[test]
    fn hardy_inequality_on_random_probes(f in vec_strategy(63)) {
        prop_assume!(f.iter().any(|v| v.abs() > 1e-3));
        let pf = hardy(63, 1.0 / 16.0);
        prop_assert!(hardy_holds(&pf, &f));
    }

    #[test]
    fn green_is_symmetric(x in 0usize..45, y in 0usize..45) {
        let form = lshape(9);
        let op = form.operator();
        let n = op.dim();
        let (x, y) = (x % n, y % n);
        let green = GreenData::new(op);
        let (a, b) = (green.value(x, y).unwrap(), green.value(y, x).unwrap());
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()));
    }
}

use oubranch::kernels::{
    canonical_residual, degeneracy_order, project, test_points, HoeffdingTable, Kernel, TensorTerm,
};
use oubranch::ou_kernel::{Func1D, QuadratureRule, SeparableFn};
use oubranch::ModelParams;
use proptest::prelude::*;

fn params() -> ModelParams {
    ModelParams::one_dim(1.0, 0.75, 0.7, 1.3).unwrap()
}

fn poly_kernel(coeffs: &[Vec<Vec<f64>>], arity: usize) -> Kernel {
    let terms = coeffs
        .iter()
        .map(|slots| TensorTerm {
            coeff: 1.0,
            factors: slots
                .iter()
                .take(arity)
                .map(|c| SeparableFn::scalar(Func1D::poly(c.clone())))
                .collect(),
        })
        .collect();
    Kernel::tensor_sum(arity, 1, terms, false).unwrap()
}

fn kernel_strategy() -> impl Strategy<Value = (usize, Vec<Vec<Vec<f64>>>)> {
    (1usize..=3).prop_flat_map(|n| {
        let slot = prop::collection::vec(-2.0f64..2.0, 1..=4);
        (Just(n), prop::collection::vec(prop::collection::vec(slot, n), 1..=3))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hoeffding_components_reconstruct_the_kernel((n, coeffs) in kernel_strategy()) {
        let pr = params();
        let rule = QuadratureRule::invariant(&pr, 32);
        let f = poly_kernel(&coeffs, n);
        let table = HoeffdingTable::build(&f, &pr, &rule).unwrap();
        for x in test_points(n, &pr, 16) {
            let a = f.eval(&x);
            let b = table.reconstruct(&x, 1);
            prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0), "{} vs {}", a, b);
        }
    }

    #[test]
    fn nonempty_projections_are_canonical((n, coeffs) in kernel_strategy()) {
        let pr = params();
        let rule = QuadratureRule::invariant(&pr, 32);
        let f = poly_kernel(&coeffs, n);
        for mask in 1u32..(1 << n) {
            let subset: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let p = project(&f, &subset, &pr, &rule).unwrap();
            prop_assert!(canonical_residual(&p, &pr, &rule).unwrap() < 1e-9);
        }
    }

    #[test]
    fn centring_removes_the_mean((n, coeffs) in kernel_strategy()) {
        let pr = params();
        let rule = QuadratureRule::invariant(&pr, 32);
        let f = poly_kernel(&coeffs, n);
        let c = f.centered(&pr, &rule).unwrap();
        prop_assert!(c.invariant_mean(&pr, &rule).unwrap().abs() < 1e-10);
        let m = f.invariant_mean(&pr, &rule).unwrap();
        for x in test_points(n, &pr, 8) {
            prop_assert!((c.eval(&x) + m - f.eval(&x)).abs() < 1e-9 * f.eval(&x).abs().max(1.0));
        }
    }
}

#[test]
fn degeneracy_of_reference_kernels() {
    let pr = ModelParams::one_dim(1.0, 0.75, 1.0, 1.0).unwrap();
    let rule = QuadratureRule::invariant(&pr, 32);
    let x = || SeparableFn::scalar(Func1D::identity());
    let one = || SeparableFn::scalar(Func1D::one());
    let sum = Kernel::tensor_sum(
        2,
        1,
        vec![
            TensorTerm { coeff: 1.0, factors: vec![x(), one()] },
            TensorTerm { coeff: 1.0, factors: vec![one(), x()] },
        ],
        true,
    )
    .unwrap();
    assert_eq!(degeneracy_order(&sum, &pr, &rule, 1e-9).unwrap().k(), Some(1));
    let xx = Kernel::power(x(), 2);
    assert_eq!(degeneracy_order(&xx, &pr, &rule, 1e-9).unwrap().k(), Some(2));
    let x3 = Kernel::power(x(), 3);
    assert_eq!(degeneracy_order(&x3, &pr, &rule, 1e-9).unwrap().k(), Some(3));
    let sq = Kernel::power(SeparableFn::scalar(Func1D::monomial(2)), 2);
    assert_eq!(degeneracy_order(&sq, &pr, &rule, 1e-9).unwrap().k(), Some(1));
}

use cpm_core::glm::{self, DesignMatrix, FitOptions, PenaltySpec, DEFAULT_TOL};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Problem {
    x: Vec<Vec<f64>>,
    y: Vec<u8>,
    w: Vec<f64>,
    penalty: PenaltySpec,
}

fn problem() -> impl Strategy<Value = Problem> {
    (4usize..25, 1usize..5).prop_flat_map(|(n, p)| {
        (
            prop::collection::vec(prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), -2.0..2.0f64], p), n),
            prop::collection::vec(0u8..2, n),
            prop::collection::vec(0.1..4.0f64, n),
            0.005..0.3f64,
            0.0..0.3f64,
        )
            .prop_filter("both classes", |(_, y, ..)| y.contains(&0) && y.contains(&1))
            .prop_map(|(x, y, w, l1, l2)| Problem {
                x,
                y,
                w,
                penalty: PenaltySpec { l1, l2 },
            })
    })
}

fn fit(p: &Problem, max_iter: usize) -> glm::GlmFit {
    let x = DesignMatrix::from_rows(&p.x).unwrap();
    glm::fit(&x, &p.y, &p.w, p.penalty, FitOptions { max_iter, ..FitOptions::default() }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn converged_fits_satisfy_the_kkt_conditions(p in problem()) {
        let f = fit(&p, glm::DEFAULT_MAX_ITER);
        prop_assert!(f.converged);
        let x = DesignMatrix::from_rows(&p.x).unwrap();
        let g = glm::loss_gradient(&x, &p.y, &p.w, f.intercept, &f.coefficients).unwrap();
        prop_assert!(g[0].abs() <= DEFAULT_TOL);
        for (j, &b) in f.coefficients.iter().enumerate() {
            let smooth = g[j + 1] + p.penalty.l2 * b;
            if b != 0.0 {
                prop_assert!((smooth + p.penalty.l1 * b.signum()).abs() <= DEFAULT_TOL);
            } else {
                prop_assert!(smooth.abs() <= p.penalty.l1 + DEFAULT_TOL);
            }
        }
    }

    #[test]
    fn objective_never_increases_across_sweeps(p in problem()) {
        let mut last = f64::INFINITY;
        for sweeps in 1..8 {
            let f = fit(&p, sweeps);
            prop_assert!(f.objective <= last + 1e-14, "sweep {sweeps}: {} > {last}", f.objective);
            last = f.objective;
        }
    }

    #[test]
    fn a_row_split_in_two_half_weight_copies_leaves_the_fit_unchanged(p in problem(), row in any::<prop::sample::Index>()) {
        let i = row.index(p.y.len());
        let mut dup = p.clone();
        dup.w[i] /= 2.0;
        dup.x.push(p.x[i].clone());
        dup.y.push(p.y[i]);
        dup.w.push(p.w[i] / 2.0);
        let a = fit(&p, glm::DEFAULT_MAX_ITER);
        let b = fit(&dup, glm::DEFAULT_MAX_ITER);
        prop_assert!((a.intercept - b.intercept).abs() < 1e-5);
        for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
            prop_assert!((u - v).abs() < 1e-5);
        }
        prop_assert!((a.objective - b.objective).abs() < 1e-9);
    }

    #[test]
    fn scaling_all_weights_changes_nothing(p in problem(), scale in 0.1..10.0f64) {
        let mut scaled = p.clone();
        scaled.w.iter_mut().for_each(|w| *w *= scale);
        let a = fit(&p, glm::DEFAULT_MAX_ITER);
        let b = fit(&scaled, glm::DEFAULT_MAX_ITER);
        for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
            prop_assert!((u - v).abs() < 1e-5);
        }
    }
}

#[test]
fn nonconvergence_is_reported_not_raised() {
    let x = DesignMatrix::from_rows(&[vec![0.0], vec![0.0], vec![1.0], vec![1.0]]).unwrap();
    let f = glm::fit(
        &x,
        &[0, 0, 1, 1],
        &[1.0; 4],
        PenaltySpec::none(),
        FitOptions {
            max_iter: 2,
            ..FitOptions::default()
        },
    )
    .unwrap();
    assert!(!f.converged);
    assert_eq!(f.iterations, 2);
}

#[test]
fn zero_weights_are_rejected() {
    let x = DesignMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
    assert!(glm::fit(&x, &[0, 1], &[1.0, 0.0], PenaltySpec::lasso(0.1), FitOptions::default()).is_err());
}

#[test]
fn strong_lasso_zeroes_every_coefficient() {
    let x = DesignMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
    let y = [0, 1, 1, 0];
    let w = [1.0; 4];
    let lmax = glm::lambda_max(&x, &y, &w, glm::PenaltyKind::Lasso).unwrap();
    let f = glm::fit(&x, &y, &w, PenaltySpec::lasso(lmax * 1.0001), FitOptions::default()).unwrap();
    assert!(f.coefficients.iter().all(|&b| b == 0.0));
    let g = glm::fit(&x, &y, &w, PenaltySpec::lasso(lmax * 0.5), FitOptions::default()).unwrap();
    assert!(g.coefficients.iter().any(|&b| b != 0.0));
}

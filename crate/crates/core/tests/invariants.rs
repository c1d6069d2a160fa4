mod common;

use errdecomp::decomp::{
    decompose_error, decompose_pointwise, estimate_ceiling, relative_deviation, RowView,
};
use errdecomp::models::{fit_regimes, ModelSpec, TrainingRegime};
use errdecomp::stats::{mean, std_error};
use errdecomp::world::{
    build_world, sample, AleatoricSpec, FeatureNoiseSpec, TargetNoiseSpec, TrueFunctionSpec, World,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn telescoping_holds_on_random_worlds(seed in any::<u64>(), family in 0usize..4, model in 0usize..3) {
        let mut rng = common::rng(seed);
        let w = common::random_world(&mut rng, common::FAMILIES[family]);
        let spec = common::random_model(&mut rng, model);
        let train = sample(&w, 80, "train").unwrap();
        prop_assume!(train.selected.iter().filter(|&&s| s).count() >= spec.min_rows());
        let r = fit_regimes(&w, &train, &spec).unwrap();
        let grid = sample(&w, 20, "grid").unwrap();
        for i in 0..grid.len() {
            let row = RowView::from_bundle(&grid, i);
            let p = decompose_pointwise(&w, &r, &row).unwrap();
            let terms = [p.model_approx_gain, p.meas_gain_y, p.meas_gain_x, p.current_prediction, p.aleatoric];
            prop_assert!(relative_deviation(terms.iter().sum(), row.y_true, &terms) <= 1e-9);
            let e = decompose_error(&w, &r, &row).unwrap();
            let terms = [e.err_x, e.err_y, e.delta_f, e.aleatoric_term];
            let target = e.y_pred - row.y_true;
            prop_assert!(relative_deviation(terms.iter().sum(), target, &terms) <= 1e-9);
            prop_assert_eq!(e.y_pred, p.current_prediction);
        }
    }

    #[test]
    fn ceiling_r2_is_a_fraction(seed in any::<u64>(), family in 0usize..4) {
        let mut rng = common::rng(seed);
        let w = common::random_world(&mut rng, common::FAMILIES[family]);
        if let Ok(c) = estimate_ceiling(&w, 2000) {
            if c.var_y_true >= c.sigma_eps_sq {
                prop_assert!((0.0..=1.0).contains(&c.ceiling_r2), "{:?}", c);
            }
        }
    }
}

fn held_out_mse(w: &World, r: &errdecomp::models::RegimeModels, regime: TrainingRegime) -> f64 {
    let grid = sample(w, 500, "test").unwrap();
    let se: Vec<f64> = (0..grid.len())
        .map(|i| {
            let p = r
                .predict_row(regime, grid.x_true.row(i), grid.x_observed.row(i))
                .unwrap();
            (p - grid.y_true[i]).powi(2)
        })
        .collect();
    mean(&se)
}

#[test]
fn regime_mse_ordering_in_expectation() {
    let (mut tt, mut to, mut oo) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..200 {
        let mut w = World::new(TrueFunctionSpec::linear(vec![1.0, -1.0, 0.5, 2.0]), seed);
        w.aleatoric = AleatoricSpec::gaussian(0.5);
        w.target_noise = TargetNoiseSpec::gaussian(0.0, 2.0);
        w.feature_noise = FeatureNoiseSpec::isotropic(4, 2.0);
        let w = build_world(w).unwrap();
        let train = sample(&w, 60, "train").unwrap();
        let r = fit_regimes(&w, &train, &ModelSpec::Ridge { lambda: 0.1 }).unwrap();
        tt.push(held_out_mse(&w, &r, TrainingRegime::TT));
        to.push(held_out_mse(&w, &r, TrainingRegime::TO));
        oo.push(held_out_mse(&w, &r, TrainingRegime::OO));
    }
    let diff = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x - y).collect() };
    for (lo, hi, name) in [(&tt, &to, "TT <= TO"), (&to, &oo, "TO <= OO")] {
        let d = diff(lo, hi);
        assert!(
            mean(&d) <= 3.0 * std_error(&d),
            "{name}: {} ± {}",
            mean(&d),
            std_error(&d)
        );
    }
}

use stcate::propensity::fit_propensity;
use stcate::sim::experiment::{prepare_replication, replication_stream};
use stcate::sim::{DgpConfig, World};

#[test]
fn fitted_coefficients_cover_the_truth() {
    let mut config = DgpConfig::preset("binary").unwrap();
    config.periods = 150;
    let world = World::new(config).unwrap();
    let (mut inside, mut total) = (0, 0);
    for r in 0..12 {
        let rep = prepare_replication(&world, &replication_stream(99, "recovery", r)).unwrap();
        let truth = rep.true_model.gamma();
        let fit = fit_propensity(rep.true_model.covariates(), &rep.panel.treatments).unwrap();
        assert!(fit.converged, "rep {r}: score norm {:e}", fit.gradient_norm);
        let se = fit.standard_errors().unwrap();
        for ((g, t), s) in fit.gamma_hat.iter().zip(truth).zip(&se) {
            total += 1;
            inside += usize::from((g - t).abs() <= 3.0 * s);
        }
    }
    assert!(inside as f64 >= 0.9 * total as f64, "{inside} of {total} within 3 SE");
}

#[test]
fn refit_on_the_same_data_is_bitwise_stable() {
    let mut config = DgpConfig::preset("spatio_temporal").unwrap();
    config.periods = 80;
    let world = World::new(config).unwrap();
    let rep = prepare_replication(&world, &replication_stream(5, "stable", 0)).unwrap();
    let a = fit_propensity(rep.true_model.covariates(), &rep.panel.treatments).unwrap();
    let b = fit_propensity(rep.true_model.covariates(), &rep.panel.treatments).unwrap();
    assert_eq!(a.gamma_hat, b.gamma_hat);
    assert_eq!(a.log_likelihood, b.log_likelihood);
}

use mnap::mcmc::{Priors, SamplerConfig};
use mnap::validate::{run_calibration, run_replication, CalibrationConfig, Design, McmcSampler, PriorSampler, FIT_SCORE};

fn short_sampler() -> McmcSampler {
    McmcSampler {
        config: SamplerConfig {
            iterations: 400,
            burn_in: 100,
            thin: 3,
            ..SamplerConfig::default()
        },
    }
}

#[test]
fn prior_sampler_is_calibrated_by_construction() {
    let design = Design::standard(3).unwrap();
    let priors = Priors::calibration(2, 2);
    let config = CalibrationConfig {
        replications: 40,
        seed: 5,
        alpha: 0.01,
    };
    let report = run_calibration(&priors, &design, &PriorSampler { draws: 1000 }, &config).unwrap();
    assert_eq!(report.pooled.len(), 40 * 5);
    assert!(report.pooled_test.p_value > 0.01, "pooled p = {}", report.pooled_test.p_value);
    for q in report.per_quantity.iter().filter(|q| q.name != FIT_SCORE) {
        assert!(q.test.p_value * 5.0 > 0.01, "{}: p = {}", q.name, q.test.p_value);
    }
    // Prior draws ignore the data, which the data-dependent quantity notices.
    let fit = report.per_quantity.iter().find(|q| q.name == FIT_SCORE).unwrap();
    assert!(fit.test.p_value < 0.01);
}

#[test]
fn two_replications_carry_a_caveat() {
    let design = Design::standard(4).unwrap();
    let config = CalibrationConfig {
        replications: 2,
        seed: 1,
        alpha: 0.01,
    };
    let report = run_calibration(&Priors::calibration(2, 2), &design, &PriorSampler { draws: 200 }, &config).unwrap();
    assert_eq!(report.replications.len(), 2);
    assert!(report.caveat.is_some());
    assert!(report.per_quantity.is_empty());
}

#[test]
fn one_replication_is_rejected() {
    let design = Design::standard(4).unwrap();
    let config = CalibrationConfig {
        replications: 1,
        seed: 1,
        alpha: 0.01,
    };
    assert!(run_calibration(&Priors::calibration(2, 2), &design, &PriorSampler { draws: 10 }, &config).is_err());
}

#[test]
fn verdict_is_a_function_of_the_master_seed() {
    let design = Design::standard(9).unwrap();
    let priors = Priors::calibration(2, 2);
    let config = CalibrationConfig {
        replications: 10,
        seed: 17,
        alpha: 0.01,
    };
    let a = run_calibration(&priors, &design, &short_sampler(), &config).unwrap();
    let b = run_calibration(&priors, &design, &short_sampler(), &config).unwrap();
    assert_eq!(a.pooled, b.pooled);
    assert_eq!(a.verdict, b.verdict);
    assert_eq!(a.pooled_test, b.pooled_test);
}

#[test]
fn replication_records_every_quantity() {
    let design = Design::standard(10).unwrap();
    let sampler = short_sampler();
    let r = run_replication(&Priors::calibration(2, 2), &design, &sampler, 3, 0).unwrap();
    assert_eq!(r.truth.len(), 6);
    assert_eq!(r.retained, sampler.config.retained_per_chain());
    assert!(r.quantiles.iter().chain(&r.randomized).all(|q| (0.0..=1.0).contains(q)));
}

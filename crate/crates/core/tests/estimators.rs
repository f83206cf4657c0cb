mod common;

use cesmc::ce::Smoothing;
use cesmc::estimate::{chernoff_sample_size, is_estimate, mc_estimate, variance_reduction_report};
use cesmc::oracle::{exact_probability, CeOracle, SolveOptions, DEFAULT_STATE_CAP};
use cesmc::runner::Runner;
use cesmc::{parse_model, EstimateResult, ExplicitChain, ParamVector};
use common::*;

const SMALL_REPAIR: &str = include_str!("../../../models/small-repair-2x2.gcm");
const TINY_REPAIR: &str = include_str!("../../../models/tiny-repair-1x2.gcm");
const PROPERTY: &str = "X ((! init) U failure)";

fn runner() -> Runner {
    Runner::new(Some(2), 100_000).unwrap()
}

fn z_score(e: &EstimateResult, gamma: f64) -> f64 {
    (e.gamma_hat - gamma) / (e.sample_variance / e.n as f64).sqrt()
}

#[test]
fn one_type_two_components_fails_with_probability_one_eleventh() {
    let m = parse_model(TINY_REPAIR).unwrap();
    let p = compile(&m, PROPERTY);
    let chain = ExplicitChain::build(&m, DEFAULT_STATE_CAP).unwrap();
    let exact = exact_probability(&chain, &m, &p, SolveOptions::default()).unwrap();
    assert!((exact.probability - 1.0 / 11.0).abs() < 1e-10);
}

#[test]
fn mc_variance_is_the_bernoulli_identity() {
    let m = parse_model(SMALL_REPAIR).unwrap();
    let p = compile(&m, PROPERTY);
    for (seed, n) in [(0, 1), (1, 2), (2, 777), (3, 5000)] {
        let e = mc_estimate::<f64>(&runner(), &m, &p, n, seed).unwrap();
        let g = e.gamma_hat;
        let expected = if n > 1 { g * (1.0 - g) * n as f64 / (n as f64 - 1.0) } else { 0.0 };
        assert_eq!(e.sample_variance, expected);
        assert_eq!(g, e.hits as f64 / n as f64);
    }
}

#[test]
fn mc_estimate_agrees_with_oracle() {
    let m = parse_model(SMALL_REPAIR).unwrap();
    let p = compile(&m, PROPERTY);
    let chain = ExplicitChain::build(&m, DEFAULT_STATE_CAP).unwrap();
    let gamma = exact_probability(&chain, &m, &p, SolveOptions::default()).unwrap().probability;
    let e = mc_estimate::<f64>(&runner(), &m, &p, 20_000, 5).unwrap();
    assert!(z_score(&e, gamma).abs() < 4.0, "{} vs {gamma}", e.gamma_hat);
}

#[test]
fn untilted_is_reduces_to_mc() {
    let m = parse_model(SMALL_REPAIR).unwrap();
    let p = compile(&m, PROPERTY);
    let mc = mc_estimate::<f64>(&runner(), &m, &p, 10_000, 9).unwrap();
    let is = is_estimate(&runner(), &m, &ParamVector::ones(4), &p, 10_000, 9).unwrap();
    assert_eq!(is.hits, mc.hits);
    assert!((is.gamma_hat - mc.gamma_hat).abs() <= 1e-12 * mc.gamma_hat);
    assert!((is.sample_variance - mc.sample_variance).abs() <= 1e-9 * mc.sample_variance);
}

#[test]
fn is_at_exact_ce_tilt_is_accurate_and_reduces_variance() {
    let m = parse_model(SMALL_REPAIR).unwrap();
    let p = compile(&m, PROPERTY);
    let chain = ExplicitChain::build(&m, DEFAULT_STATE_CAP).unwrap();
    let oracle = CeOracle::new(&chain, &m, &p, SolveOptions::default()).unwrap();
    let gamma = oracle.gamma();
    let (lam, _) = oracle.iterate(&ParamVector::ones(4), Smoothing::Halving, 4.0, 1e-10, 1000).unwrap();
    let is = is_estimate(&runner(), &m, &lam, &p, 20_000, 13).unwrap();
    assert!(z_score(&is, gamma).abs() < 4.0, "{} vs {gamma}", is.gamma_hat);
    let vr = variance_reduction_report(Some(gamma), &is).unwrap();
    assert!(vr.ratio > 5.0, "{}", vr.ratio);
}

#[test]
fn chernoff_bound_for_one_percent_at_95() {
    assert_eq!(chernoff_sample_size(0.01, 0.05).unwrap(), 18445);
}

#[test]
fn estimates_do_not_depend_on_worker_count() {
    let m = parse_model(SMALL_REPAIR).unwrap();
    let p = compile(&m, PROPERTY);
    let lam = ParamVector::new(vec![3.0, 0.2, 0.7, 0.1]).unwrap();
    let a = is_estimate(&Runner::with_workers(1).unwrap(), &m, &lam, &p, 3000, 21).unwrap();
    let b = is_estimate(&Runner::with_workers(3).unwrap(), &m, &lam, &p, 3000, 21).unwrap();
    assert_eq!(a, b);
}

use blowup_core::{integrate_until, IntegratorConfig, OdeProblem, Rhs, Sign, Termination};

fn error_at(rel_tol: f64) -> f64 {
    let problem = OdeProblem::new(
        Rhs::Power {
            p: 2.0,
            sign: Sign::Plus,
        },
        vec![1.0],
        0.0,
    )
    .unwrap();
    let cfg = IntegratorConfig::with_tolerances(rel_tol, rel_tol * 1e-2);
    let seg = integrate_until(&problem, &cfg, |t, _| t - 0.9).unwrap();
    assert_eq!(seg.termination, Termination::PredicateHit);
    let last = seg.last();
    (last.state[0] - 1.0 / (1.0 - last.t)).abs()
}

#[test]
fn error_follows_tolerance() {
    let errs: Vec<f64> = [1e-6, 1e-8, 1e-10].iter().map(|&r| error_at(r)).collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    assert!(errs[2] < 1e-8, "{errs:?}");
}

#[test]
fn linear_growth_matches_exponential() {
    let problem = OdeProblem::new(Rhs::Linear { sign: Sign::Minus }, vec![2.0], 0.0).unwrap();
    let seg = integrate_until(&problem, &IntegratorConfig::default(), |t, _| t - 3.0).unwrap();
    for s in &seg.samples {
        assert!((s.state[0] - 2.0 * (-s.t).exp()).abs() < 1e-9);
    }
}

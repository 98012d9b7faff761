use mtlgrad::toybench::{default_grid_oracle, parse_oracle_fixtures, toy_losses, weight_presets, ToyPoint};

const FIXTURES: &str = include_str!("../fixtures/oracle.txt");

#[test]
fn fixtures_cover_every_preset() {
    let fx = parse_oracle_fixtures(FIXTURES).unwrap();
    assert_eq!(fx.len(), 5);
    for (f, w) in fx.iter().zip(weight_presets()) {
        assert_eq!(f.weighting, w);
        let at = w.weighted(toy_losses(&f.theta_star));
        assert!((at - f.loss_star).abs() <= 1e-12, "{w:?}: {at} vs {}", f.loss_star);
    }
}

#[test]
fn fixtures_match_the_grid_oracle() {
    for f in parse_oracle_fixtures(FIXTURES).unwrap() {
        let o = default_grid_oracle(&f.weighting);
        assert!((o.loss_star - f.loss_star).abs() <= 1e-12);
        assert!((o.theta_star.0[0] - f.theta_star.0[0]).abs() <= 1e-12);
        assert!((o.theta_star.0[1] - f.theta_star.0[1]).abs() <= 1e-12);
    }
}

/// An independent coarse scan can never beat the refined oracle.
#[test]
fn coarse_scan_is_never_lower() {
    for f in parse_oracle_fixtures(FIXTURES).unwrap() {
        let mut best = f64::INFINITY;
        for i in 0..=480 {
            for j in 0..=480 {
                let p = ToyPoint([-12.0 + 0.05 * i as f64, -12.0 + 0.05 * j as f64]);
                best = best.min(f.weighting.weighted(toy_losses(&p)));
            }
        }
        assert!(best >= f.loss_star - 1e-12, "{:?}: {best} < {}", f.weighting, f.loss_star);
        assert!(best - f.loss_star < 1e-2);
    }
}

/// The optimum sits where only the quadratic terms are active (ϑ₂ < 0), so
/// it can be cross-checked in closed form: with c₂ = tanh(−ϑ₂/2), the
/// stationary ϑ₁ of a₁g₁ + a₂g₂ is 7(a₁ − a₂).
#[test]
fn optimum_theta1_matches_closed_form() {
    for f in parse_oracle_fixtures(FIXTURES).unwrap() {
        let w = f.weighting;
        assert!(f.theta_star.0[1] < 0.0);
        assert!((f.theta_star.0[0] - 7.0 * (w.a1 - w.a2)).abs() <= 1e-3, "{w:?}: {:?}", f.theta_star);
    }
}

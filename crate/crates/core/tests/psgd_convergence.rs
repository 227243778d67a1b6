//! Projected SGD alone, with enough steps at `d = 2`, should land within
//! `theta0` of `+-w*` in at least half of independent runs.

use halfspace_al::distributions::MarginalDistribution;
use halfspace_al::learner::{make_schedule, Polylog, ScheduleConstants};
use halfspace_al::noise::{LabelingOracle, NoiseModel};
use halfspace_al::psgd::{active_psgd, PsgdConfig};
use halfspace_al::rng::Seed;
use halfspace_al::vectors::UnitVector;

#[test]
fn long_psgd_runs_reach_theta0_in_two_dimensions() {
    let d = 2;
    let dist = MarginalDistribution::gaussian(d).unwrap();
    let target = UnitVector::random(d, &mut Seed::new(0).named("target").stream()).unwrap();
    let noise = NoiseModel::with_derived_a(0.7, 1.0, target.clone(), &dist).unwrap();
    let constants = ScheduleConstants {
        c_n: 1.6e-12,
        c_beta: 4e6,
        c_m1: 1e-7,
        ..ScheduleConstants::default()
    };
    let s = make_schedule(0.1, 0.2, 0.7, noise.a(), d, constants, Polylog::Log).unwrap();
    let cfg = PsgdConfig::new(s.steps, s.beta, s.sigma_scale().unwrap()).unwrap();

    let runs = 20;
    let close = (0..runs)
        .filter(|&k| {
            let mut oracle = LabelingOracle::new(noise.clone(), Seed::new(1).child(k));
            let out = active_psgd(&cfg, &dist, &mut oracle, Seed::new(2).child(k), None).unwrap();
            out.iterate.min_angle(&target).unwrap() <= s.theta0
        })
        .count();
    assert!(close >= 10, "{close}/{runs} runs within theta0 = {}", s.theta0);
}

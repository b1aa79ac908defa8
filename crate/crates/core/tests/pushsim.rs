use dmd_core::rng;
use dmd_core::sim::datagen::{run_episode, sample_start, Expert, Outcome, RunOptions};
use dmd_core::sim::expert::expert_action;
use dmd_core::sim::{Dir2, SimConfig, SimWorld};
use rayon::prelude::*;

#[test]
fn expert_completes_1000_episodes() {
    let cfg = SimConfig::default();
    let results: Vec<(Outcome, usize)> = (0..1000usize)
        .into_par_iter()
        .map(|i| {
            let start = sample_start(&cfg, &mut rng::stream(99, &["expert-check".into(), i.into()]));
            let ep = run_episode(
                &cfg,
                &format!("e{i}"),
                99,
                start,
                &Expert(&cfg),
                RunOptions {
                    max_steps: 400,
                    record_images: false,
                    action_noise: 0.0,
                },
            )
            .unwrap();
            (ep.log.outcome, ep.log.steps_used)
        })
        .collect();
    let failures: Vec<_> = results.iter().enumerate().filter(|(_, r)| r.0 != Outcome::Success).collect();
    assert!(failures.is_empty(), "expert failed: {failures:?}");
    let mean = results.iter().map(|r| r.1 as f64).sum::<f64>() / results.len() as f64;
    let max = results.iter().map(|r| r.1).max().unwrap();
    eprintln!("expert steps: mean {mean:.1}, max {max}");
}

#[test]
fn pushing_never_amplifies_motion() {
    let cfg = SimConfig::default();
    for i in 0..200usize {
        let mut w = sample_start(&cfg, &mut rng::stream(5, &["conserve".into(), i.into()]));
        while !w.is_terminal() {
            let a = expert_action(&cfg, &w);
            let n = w.step(&cfg, a);
            let dg = ((n.gripper[0] - w.gripper[0]).powi(2) + (n.gripper[1] - w.gripper[1]).powi(2)).sqrt();
            let dob = ((n.object[0] - w.object[0]).powi(2) + (n.object[1] - w.object[1]).powi(2)).sqrt();
            assert!(dob <= dg + 1e-12, "object moved {dob} > gripper {dg}");
            w = n;
        }
    }
}

/// Independent penetration oracle: bisect for the smallest push along the
/// centre line that clears the overlap.
fn brute_force_resolve(cfg: &SimConfig, gripper: [f64; 2], object: [f64; 2]) -> [f64; 2] {
    let contact = cfg.object_radius + cfg.gripper_radius;
    let d = [object[0] - gripper[0], object[1] - gripper[1]];
    let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
    let u = [d[0] / len, d[1] / len];
    let (mut lo, mut hi) = (0.0f64, contact);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let p = [object[0] + mid * u[0], object[1] + mid * u[1]];
        let dist = ((p[0] - gripper[0]).powi(2) + (p[1] - gripper[1]).powi(2)).sqrt();
        if dist < contact {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    [object[0] + hi * u[0], object[1] + hi * u[1]]
}

#[test]
fn glancing_contact_matches_penetration_oracle() {
    let cfg = SimConfig::default();
    let contact = cfg.object_radius + cfg.gripper_radius;
    // Gripper touching the object at 45 degrees, moving along +x.
    let bearing = std::f64::consts::FRAC_PI_4;
    let object = [0.0, 0.0];
    let gripper = [-contact * bearing.cos(), -contact * bearing.sin()];
    let w = SimWorld::new(&cfg, gripper, object, [0.2, 0.2]);
    let next = w.step(&cfg, Dir2::new([1.0, 0.0]).unwrap());
    let expect = brute_force_resolve(&cfg, next.gripper, object);
    assert!((next.object[0] - expect[0]).abs() < 1e-12 && (next.object[1] - expect[1]).abs() < 1e-12);
    // Displacement is along the new centre-to-centre line.
    let line = [next.object[0] - next.gripper[0], next.object[1] - next.gripper[1]];
    let disp = next.object;
    assert!((line[0] * disp[1] - line[1] * disp[0]).abs() < 1e-12);
}

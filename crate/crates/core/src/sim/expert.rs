//! Scripted two-phase pushing expert.
//!
//! Approach: go to the standoff point behind the object on the
//! object-to-target line, orbiting the object when the straight path would
//! touch it. Push: drive through the object towards the target while steering
//! the gripper back onto the line. The two are blended by how well the
//! gripper is aligned behind the object.

use super::{add, dot2, len2, scale, sub, Dir2, SimConfig, SimWorld, Vec2};

/// Clearance kept from the object disk while approaching.
const CLEARANCE: f64 = 0.006;
/// Lateral offset (m) at which pushing fully hands over to approaching.
const ALIGN_BAND: f64 = 0.016;
/// Lateral steering gain while pushing (1/m).
const STEER_GAIN: f64 = 25.0;

fn perp(v: Vec2) -> Vec2 {
    [-v[1], v[0]]
}

/// Distance from `p` to the segment `a..b`.
fn segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = sub(b, a);
    let l2 = dot2(ab, ab);
    let t = if l2 > 0.0 { (dot2(sub(p, a), ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
    len2(sub(p, add(a, scale(ab, t))))
}

fn approach(cfg: &SimConfig, w: &SimWorld, standoff: Vec2) -> Vec2 {
    let contact = cfg.object_radius + cfg.gripper_radius;
    let keep_out = contact + CLEARANCE;
    if segment_distance(w.object, w.gripper, standoff) >= keep_out {
        return sub(standoff, w.gripper);
    }
    // Orbit the object towards the standoff bearing.
    let radial = sub(w.gripper, w.object);
    let dist = len2(radial);
    let radial_u = if dist > 0.0 { scale(radial, 1.0 / dist) } else { [1.0, 0.0] };
    let to_standoff = sub(standoff, w.object);
    let cross = radial_u[0] * to_standoff[1] - radial_u[1] * to_standoff[0];
    let tangent = if cross >= 0.0 { perp(radial_u) } else { scale(perp(radial_u), -1.0) };
    let orbit = keep_out + 0.008;
    add(tangent, scale(radial_u, 40.0 * (orbit - dist)))
}

/// Unit action for a non-terminal world.
pub fn expert_action(cfg: &SimConfig, w: &SimWorld) -> Dir2 {
    let to_target = sub(w.target, w.object);
    let u = Dir2::new(to_target).map(|d| d.get()).unwrap_or([0.0, 1.0]);
    let n = perp(u);
    let standoff = sub(w.object, scale(u, cfg.standoff));
    let rel = sub(w.gripper, w.object);
    let along = dot2(rel, u);
    let lateral = dot2(rel, n);

    let approach_dir = approach(cfg, w, standoff);
    let contact = cfg.object_radius + cfg.gripper_radius;
    let behind = along < -(contact - 0.004);
    let weight = if behind {
        ((ALIGN_BAND - lateral.abs()) / (0.5 * ALIGN_BAND)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let push_dir = sub(u, scale(n, STEER_GAIN * lateral));
    let push_dir = Dir2::new(push_dir).map(|d| d.get()).unwrap_or(u);
    let approach_dir = Dir2::new(approach_dir).map(|d| d.get()).unwrap_or(u);
    let blended = add(scale(push_dir, weight), scale(approach_dir, 1.0 - weight));
    Dir2::new(blended)
        .or_else(|| Dir2::new(push_dir))
        .expect("push direction is unit length")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_pushes_at_target() {
        let cfg = SimConfig::default();
        let w = SimWorld::new(&cfg, [0.0, -0.06], [0.0, 0.0], [0.0, 0.15]);
        let a = expert_action(&cfg, &w).get();
        assert!((a[0]).abs() < 1e-12 && (a[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gripper_ahead_circles_back() {
        let cfg = SimConfig::default();
        // Gripper between object and target: it must move away from the
        // target (towards the standoff) and sideways, never straight at the
        // object.
        let w = SimWorld::new(&cfg, [0.0, 0.06], [0.0, 0.0], [0.0, 0.15]);
        let a = expert_action(&cfg, &w).get();
        assert!(a[0].abs() > 0.5, "should orbit sideways, got {a:?}");
        let next = w.step(&cfg, Dir2::new(a).unwrap());
        assert_eq!(next.object, w.object);
        // Further around the orbit it heads back (negative y).
        let w2 = SimWorld::new(&cfg, [0.055, 0.0], [0.0, 0.0], [0.0, 0.15]);
        let b = expert_action(&cfg, &w2).get();
        assert!(b[1] < -0.5, "{b:?}");
    }

    #[test]
    fn always_unit() {
        let cfg = SimConfig::default();
        for i in 0..100 {
            let th = i as f64 * 0.37;
            let w = SimWorld::new(&cfg, [0.05 * th.cos(), 0.07 * th.sin()], [0.0, 0.0], [0.02, 0.15]);
            let a = expert_action(&cfg, &w).get();
            assert!((len2(a) - 1.0).abs() < 1e-12);
        }
    }
}

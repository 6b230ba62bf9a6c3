use nalgebra::Vector2;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::WorldTemplate;
use crate::env::{BodyModel, BoxObstacle, WorldSpec};
use crate::error::{Result, SteapError};
use crate::state::MobileConfig;

/// Redraws allowed per obstacle before giving up.
pub const MAX_REJECTIONS: usize = 10_000;

fn box_disc_overlap(b: &BoxObstacle, centre: Vector2<f64>, radius: f64) -> bool {
    let dx = ((centre.x - b.center[0]).abs() - 0.5 * b.size[0]).max(0.0);
    let dy = ((centre.y - b.center[1]).abs() - 0.5 * b.size[1]).max(0.0);
    dx * dx + dy * dy < radius * radius
}

/// Uniformly placed obstacles that keep a disc of radius `reach + margin` around each endpoint free.
pub fn generate_world(
    seed: u64,
    template: &WorldTemplate,
    body: &BodyModel,
    endpoints: &[&MobileConfig],
) -> Result<WorldSpec> {
    let mut world = WorldSpec::empty(template.extent[0], template.extent[1], template.cell_size);
    world.validate()?;
    let [w, h] = template.extent;
    let [sx, sy] = template.obstacle_size;
    if sx > w || sy > h {
        return Err(SteapError::InvalidWorld("obstacle larger than the world".into()));
    }
    let radius = body.max_reach() + template.clearance_margin;
    let discs: Vec<Vector2<f64>> = endpoints
        .iter()
        .map(|c| {
            let b = c.base_or_identity();
            Vector2::new(b.x, b.y)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..template.obstacle_count {
        let mut placed = false;
        for _ in 0..MAX_REJECTIONS {
            let cx = rng.random_range((-0.5 * (w - sx))..=(0.5 * (w - sx)));
            let cy = rng.random_range((-0.5 * (h - sy))..=(0.5 * (h - sy)));
            let b = BoxObstacle {
                center: [cx, cy],
                size: [sx, sy],
            };
            if discs.iter().all(|c| !box_disc_overlap(&b, *c, radius)) {
                world.obstacles.push(b);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SteapError::PlacementFailed(i));
        }
    }
    Ok(world)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_sdf, config_collision_free};
    use crate::runtime::ProblemSpec;

    #[test]
    fn same_seed_same_world() {
        let spec = ProblemSpec::default();
        let t = WorldTemplate::default();
        let a = generate_world(7, &t, &spec.body, &[&spec.start, &spec.goal]).unwrap();
        let b = generate_world(7, &t, &spec.body, &[&spec.start, &spec.goal]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.obstacles.len(), 20);
        let c = generate_world(8, &t, &spec.body, &[&spec.start, &spec.goal]).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_obstacles() {
        let spec = ProblemSpec::default();
        let t = WorldTemplate {
            obstacle_count: 0,
            ..Default::default()
        };
        assert!(generate_world(1, &t, &spec.body, &[&spec.start]).unwrap().obstacles.is_empty());
    }

    #[test]
    fn crowded_world_fails() {
        let spec = ProblemSpec::default();
        let t = WorldTemplate {
            extent: [4.0, 4.0],
            ..Default::default()
        };
        let origin = MobileConfig::from_slice(crate::lie::Se2Pose::new(0.0, 0.0, 0.0), &[0.0, 0.0]);
        let err = generate_world(1, &t, &spec.body, &[&origin]).unwrap_err();
        assert!(matches!(err, SteapError::PlacementFailed(0)));
    }

    #[test]
    fn benchmark_worlds_keep_endpoints_free() {
        let spec = ProblemSpec::default();
        let t = WorldTemplate::default();
        for seed in 0..40 {
            let w = generate_world(seed, &t, &spec.body, &[&spec.start, &spec.goal]).unwrap();
            let sdf = build_sdf(&w).unwrap();
            assert!(config_collision_free(&spec.start, &spec.body, &sdf).unwrap());
            assert!(config_collision_free(&spec.goal, &spec.body, &sdf).unwrap());
        }
    }
}

//! Planar world model: obstacles, signed distance field, robot body and obstacle costs.

mod body;
mod obstacle;
mod sdf;
mod world;

pub use body::{BodyModel, BodySphere, Link};
pub use obstacle::{
    collision_free, config_collision_free, hinge_loss, interp_obstacle_error, min_clearance,
    obstacle_error, HingeLossParams, ObstacleCost,
};
pub use sdf::{build_sdf, SdfQuery, SignedDistanceField, EMPTY_WORLD_DISTANCE};
pub use world::{BoxObstacle, WorldSpec};

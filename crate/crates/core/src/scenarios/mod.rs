//! Built-in problem instances.

pub mod h2check;
pub mod lqrcheck;
pub mod obstacle;
pub mod pendulum;

pub use h2check::H2Instance;
pub use obstacle::{Obstacle, ObstacleScenario};
pub use pendulum::PendulumScenario;

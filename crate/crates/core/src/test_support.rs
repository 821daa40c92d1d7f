use crate::scene::{Polygon, Roi, Scene, Vec2};
use crate::sensing::{CameraModel, NoiseModel};
use crate::valuation::{PhaseSpec, PlanningParams, Problem};

pub fn room_scene(phase: usize, pillar: bool) -> Scene {
    let obstacles = if pillar {
        vec![Polygon::rectangle(Vec2::new(3.5, 3.5), Vec2::new(4.5, 4.5))]
    } else {
        vec![]
    };
    let installable = if pillar { (0..4).map(|e| (0, e)).collect() } else { vec![] };
    Scene::new(
        phase,
        vec![1.5],
        obstacles,
        vec![Roi {
            polygon: Polygon::rectangle(Vec2::new(0.0, 0.0), Vec2::new(8.0, 8.0)),
            importance: 1.0,
        }],
        vec![],
        installable,
    )
    .unwrap()
}

pub fn small_params(sizes: Vec<f64>) -> PlanningParams {
    PlanningParams {
        cell_size: 1.0,
        delta_theta: 90.0,
        tag_sizes: sizes,
        ..PlanningParams::default()
    }
}

/// Square room with one pillar in every phase; 8 options.
pub fn pillar_problem(n_phases: usize, sizes: Vec<f64>) -> Problem {
    let specs = (0..n_phases)
        .map(|p| PhaseSpec {
            scene: room_scene(p, true),
            install_heights: vec![1.5],
        })
        .collect();
    Problem::build(
        Vec2::zeros(),
        specs,
        CameraModel::default(),
        NoiseModel::default(),
        small_params(sizes),
    )
    .unwrap()
}

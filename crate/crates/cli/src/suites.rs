//! Reproducible checks shared by `tagplan validate` and the acceptance tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use tagplan_core::ga::{self, Chromosome, GaParams};
use tagplan_core::scene::{Polygon, Roi, Scene, Slot, Vec2};
use tagplan_core::sensing::{corner_jacobian, metric, ActiveTag, Mat2x6, CameraModel, Fim, MetricKind, NoiseModel};
use tagplan_core::spatial::{compose, exp_se3, invert, HomPoint, Mat6, Pose, Vec3, Vec6};
use tagplan_core::validation::{
    crlb_check, exhaustive_oracle, fd_jacobian, gen_trajectory, random_baseline, rmse_eval, CrlbError,
    CrlbReport, TrajectoryKind, TrajectoryParams,
};
use tagplan_core::valuation::{CostParams, FimTable, PhaseSpec, PlanningParams, Problem, Valuation};

use crate::error::CliError;
use crate::project::Project;

/// The single-phase room bundled with the tool.
pub const ROOM_PROJECT: &str = include_str!("../projects/room.toml");
pub const UNIT_PROJECT: &str = include_str!("../projects/unit3.toml");
pub const LARGE_PROJECT: &str = include_str!("../projects/large5.toml");

pub const JACOBIAN_TOL: f64 = 1e-5;
pub const CRLB_RANGE: (f64, f64) = (0.8, 1.25);
pub const ORACLE_GAP: f64 = 0.01;
/// Relative slack for eigenvalue roundoff in monotonicity checks.
pub const MONOTONE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, Serialize)]
pub struct JacobianSummary {
    pub cases: usize,
    pub within: usize,
    pub max_rel_error: f64,
}

/// Random vehicle pose and a point that projects inside the image.
pub fn random_view(rng: &mut impl Rng, cam: &CameraModel) -> (Pose, HomPoint) {
    let xi = Vec6::new(
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-3.0..3.0),
    );
    let t_vw = exp_se3(&xi);
    let z = rng.random_range(0.5..8.0);
    let u = rng.random_range(0.0..cam.width);
    let v = rng.random_range(0.0..cam.height);
    let p_c = Vec3::new((u - cam.cu) * z / cam.fu, (v - cam.cv) * z / cam.fv, z);
    let t_cw = compose(&cam.t_cv, &t_vw);
    let p_w = invert(&t_cw).apply_vec(&p_c);
    (t_vw, HomPoint::from_vec3(&p_w))
}

pub fn jacobian_suite(seed: u64, cases: usize) -> JacobianSummary {
    let cam = CameraModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut within = 0;
    let mut max_rel_error: f64 = 0.0;
    for _ in 0..cases {
        let (t, p) = random_view(&mut rng, &cam);
        let a = corner_jacobian(&t, &cam, &p).expect("point is in front of the camera");
        let n = fd_jacobian(&t, &cam, &p, 1e-6).expect("point is in front of the camera");
        let rel = (a - n).norm() / a.norm();
        max_rel_error = max_rel_error.max(rel);
        within += usize::from(rel < JACOBIAN_TOL);
    }
    JacobianSummary {
        cases,
        within,
        max_rel_error,
    }
}

/// A wall along y = 6 carrying two 0.23 m tags, seen from 2.5 m away.
pub fn crlb_setup() -> (Scene, Vec<Slot>, Pose) {
    let scene = Scene::new(
        0,
        vec![1.4],
        vec![],
        vec![Roi {
            polygon: Polygon::rectangle(Vec2::new(0.0, 0.0), Vec2::new(6.0, 6.0)),
            importance: 1.0,
        }],
        vec![],
        vec![],
    )
    .expect("valid scene");
    let slots = [2.6, 3.6]
        .iter()
        .enumerate()
        .map(|(id, x)| Slot {
            id,
            option: id,
            anchor: Vec2::new(*x, 6.0),
            normal: Vec2::new(0.0, -1.0),
            height: 1.5,
        })
        .collect();
    let pose = Pose::from_position_yaw(&Vec3::new(3.0, 3.5, 1.4), std::f64::consts::FRAC_PI_2 + 0.05);
    (scene, slots, pose)
}

pub fn crlb_suite(seed: u64, trials: usize, sigma_px: f64) -> Result<CrlbReport, CrlbError> {
    let (scene, slots, pose) = crlb_setup();
    let tags: Vec<ActiveTag> = slots.iter().map(|s| ActiveTag { slot: s, size: 0.23 }).collect();
    crlb_check(
        &pose,
        &tags,
        &scene,
        &CameraModel::default(),
        &NoiseModel { sigma_px },
        trials,
        seed,
    )
}

/// Single phase, 12 options on a 1.5 m x 1 m pillar, two sizes, budget 3.
pub fn tiny_instance() -> Problem {
    let scene = Scene::new(
        0,
        vec![1.5],
        vec![Polygon::rectangle(Vec2::new(3.0, 3.5), Vec2::new(4.5, 4.5))],
        vec![Roi {
            polygon: Polygon::rectangle(Vec2::new(0.0, 0.0), Vec2::new(8.0, 8.0)),
            importance: 1.0,
        }],
        vec![],
        (0..4).map(|e| (0, e)).collect(),
    )
    .expect("valid scene");
    Problem::build(
        Vec2::zeros(),
        vec![PhaseSpec {
            scene,
            install_heights: vec![1.5],
        }],
        CameraModel::default(),
        NoiseModel::default(),
        PlanningParams {
            tag_sizes: vec![0.165, 0.23],
            max_tags_per_phase: 3,
            ..PlanningParams::default()
        },
    )
    .expect("tiny instance builds")
}

pub fn tiny_cost() -> CostParams {
    CostParams {
        alpha: vec![1.0, 0.5],
        ..CostParams::default()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleRow {
    pub seed: u64,
    pub ga_score: f64,
    pub oracle_score: f64,
    pub gap: f64,
}

pub fn oracle_suite(seeds: &[u64], max_iters: usize) -> Vec<OracleRow> {
    let problem = tiny_instance();
    let table = FimTable::new(&problem);
    table.precompute(&problem);
    let v = Valuation::new(&problem, &table, tiny_cost()).expect("valid cost");
    let (oracle_score, _) = exhaustive_oracle(&v, problem.params.max_tags_per_phase).expect("small enough");
    seeds
        .iter()
        .map(|&seed| {
            let params = GaParams {
                max_iters,
                seed,
                ..GaParams::default()
            };
            let res = ga::run(&v, &params).expect("valid GA parameters");
            OracleRow {
                seed,
                ga_score: res.best_score,
                oracle_score,
                gap: (oracle_score - res.best_score) / oracle_score.abs().max(f64::MIN_POSITIVE),
            }
        })
        .collect()
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct MonotonicitySummary {
    pub psd_pairs: usize,
    pub psd_violations: usize,
    pub scene_cases: usize,
    pub scene_violations: usize,
}

fn random_psd(rng: &mut impl Rng) -> Fim {
    let rows = rng.random_range(1..=12);
    let mut m = Mat6::zeros();
    for _ in 0..rows {
        let g = Mat2x6::from_fn(|_, _| rng.random_range(-50.0..50.0));
        m += g.transpose() * g;
    }
    Fim::from_matrix(&m)
}

fn grows(before: f64, after: f64) -> bool {
    after >= before - MONOTONE_TOL * before.abs().max(1.0)
}

pub fn monotonicity_suite(seed: u64, pairs: usize, scene_cases: usize) -> MonotonicitySummary {
    let kinds = [MetricKind::Trace, MetricKind::Logdet, MetricKind::Mineig];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = MonotonicitySummary {
        psd_pairs: pairs,
        scene_cases,
        ..Default::default()
    };
    for _ in 0..pairs {
        let a = random_psd(&mut rng);
        let mut sum = a;
        sum.add_assign(&random_psd(&mut rng));
        if kinds.iter().any(|k| !grows(metric(&a, *k), metric(&sum, *k))) {
            out.psd_violations += 1;
        }
    }
    let base = tiny_instance();
    let table = FimTable::new(&base);
    table.precompute(&base);
    let problems: Vec<Problem> = kinds
        .iter()
        .map(|k| {
            let mut p = base.clone();
            p.params.metric = *k;
            p
        })
        .collect();
    let vals: Vec<Valuation> = problems
        .iter()
        .map(|p| Valuation::new(p, &table, tiny_cost()).expect("valid cost"))
        .collect();
    let n = base.layout.len();
    for case in 0..scene_cases {
        let v = &vals[case % vals.len()];
        let genes: Vec<u8> = (0..n)
            .map(|_| if rng.random_bool(0.4) { rng.random_range(1..=2) } else { 0 })
            .collect();
        let mut c = Chromosome::new(genes);
        let off = rng.random_range(0..n);
        c.genes[off] = 0;
        let mut more = c.clone();
        more.genes[off] = rng.random_range(1..=2);
        let before = v.cell_utilities(&c, 0);
        let after = v.cell_utilities(&more, 0);
        if before.iter().zip(&after).any(|(b, a)| !grows(*b, *a)) {
            out.scene_violations += 1;
        }
    }
    out
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Trajectory setup of a project's `[evaluation]` block.
pub fn trajectory_params(project: &Project) -> Result<(TrajectoryParams, Option<f64>, usize), CliError> {
    let ev = project
        .file
        .evaluation
        .as_ref()
        .ok_or_else(|| CliError::Input("project has no [evaluation] block describing the test path".into()))?;
    Ok((
        TrajectoryParams {
            start: ev.start,
            end: ev.end,
            spacing: ev.spacing,
            spin_step_deg: ev.spin_step_deg,
        },
        ev.altitude,
        ev.phase,
    ))
}

/// Median RMSE of one configuration over seeds, plus total skipped poses.
#[derive(Clone, Debug, Serialize)]
pub struct RmseCell {
    pub median_rmse: f64,
    pub skipped: usize,
    pub failed: usize,
}

/// RMSE of configurations along each trajectory kind, one column per
/// configuration. `configs[seed_index][column]` lets columns vary per seed.
pub fn rmse_table(
    project: &Project,
    problem: &Problem,
    configs: &[Vec<Chromosome>],
    seeds: &[u64],
    kinds: &[TrajectoryKind],
) -> Result<Vec<(TrajectoryKind, Vec<RmseCell>)>, CliError> {
    let (params, altitude, phase) = trajectory_params(project)?;
    if phase >= problem.phases.len() {
        return Err(CliError::Input(format!("evaluation phase {phase} does not exist")));
    }
    let model = &problem.phases[phase];
    let region = model
        .scene
        .rois
        .first()
        .map(|r| r.polygon.clone())
        .ok_or_else(|| CliError::Input("evaluation phase has no ROI".into()))?;
    let altitude = altitude.unwrap_or(model.scene.altitudes[0]);
    let columns = configs.first().map_or(0, |c| c.len());
    let mut out = Vec::new();
    for &kind in kinds {
        let traj = gen_trajectory(kind, &region, altitude, &params)
            .map_err(|e| CliError::Input(format!("evaluation path: {e}")))?;
        let mut cells = Vec::with_capacity(columns);
        for col in 0..columns {
            let mut rmses = Vec::new();
            let (mut skipped, mut failed) = (0, 0);
            for (si, &seed) in seeds.iter().enumerate() {
                let c = &configs[si][col];
                let tags = active_tags(problem, c, phase);
                let report = rmse_eval(&traj, &tags, &model.scene, &problem.camera, &problem.noise, seed);
                skipped += report.skipped;
                failed += report.failed;
                rmses.push(report.rmse.unwrap_or(f64::INFINITY));
            }
            cells.push(RmseCell {
                median_rmse: median(&mut rmses),
                skipped,
                failed,
            });
        }
        out.push((kind, cells));
    }
    Ok(out)
}

pub fn active_tags<'a>(problem: &'a Problem, c: &Chromosome, phase: usize) -> Vec<ActiveTag<'a>> {
    let l = &problem.layout;
    (0..l.n_slots)
        .filter_map(|s| {
            let gi = l.index(phase, s);
            let g = c.genes[gi];
            (g != 0 && problem.feasible[gi]).then(|| ActiveTag {
                slot: &problem.slots[s],
                size: problem.params.tag_sizes[g as usize - 1],
            })
        })
        .collect()
}

/// Trace-planned, best-of-100 random and all-occupied configurations per seed.
pub fn localizability_configs(
    project: &Project,
    problem: &Problem,
    table: &FimTable,
    seeds: &[u64],
) -> Result<Vec<Vec<Chromosome>>, CliError> {
    let v = Valuation::new(problem, table, project.file.cost.clone())
        .map_err(|e| CliError::Input(format!("project file: {e}")))?;
    seeds
        .iter()
        .map(|&seed| {
            let params = GaParams {
                seed,
                ..project.file.ga.clone()
            };
            let planned = ga::run(&v, &params).map_err(|e| CliError::Input(e.to_string()))?;
            let (_, random) = random_baseline(&v, 100, seed);
            Ok(vec![planned.best, random, problem.all_occupied()])
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct CostRun {
    pub seed: u64,
    pub changes: usize,
    pub utility: f64,
}

/// Plans with and without installation cost for each seed.
pub fn cost_direction(
    project: &Project,
    problem: &Problem,
    table: &FimTable,
    seeds: &[u64],
) -> Result<(Vec<CostRun>, Vec<CostRun>), CliError> {
    let with = project.file.cost.clone();
    let without = CostParams {
        disabled: true,
        ..with.clone()
    };
    let run = |cost: &CostParams| -> Result<Vec<CostRun>, CliError> {
        let v = Valuation::new(problem, table, cost.clone())
            .map_err(|e| CliError::Input(format!("project file: {e}")))?;
        seeds
            .iter()
            .map(|&seed| {
                let params = GaParams {
                    seed,
                    ..project.file.ga.clone()
                };
                let res = ga::run(&v, &params).map_err(|e| CliError::Input(e.to_string()))?;
                let e = v.evaluate(&res.best);
                Ok(CostRun {
                    seed,
                    changes: e.counts.placements() + e.counts.n_rmv,
                    utility: e.utility,
                })
            })
            .collect()
    };
    Ok((run(&with)?, run(&without)?))
}

/// Scores of a batch of chromosomes, in order.
pub fn scores(v: &Valuation<'_>, cs: &[Chromosome]) -> Vec<f64> {
    cs.par_iter().map(|c| v.score(c)).collect()
}

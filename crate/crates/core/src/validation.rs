//! Independent checks of the planner: finite-difference Jacobians, Monte
//! Carlo covariance against the Cramér-Rao bound, trajectory RMSE, and an
//! exhaustive optimum for tiny instances.

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ga::{random_population, Chromosome};
use crate::scene::{Polygon, Scene, Vec2};
use crate::sensing::{
    corner_jacobian, detect, pose_fim, project, to_camera, ActiveTag, CameraModel, Mat2x6,
    NoiseModel, Pixel, SensingError,
};
use crate::spatial::{compose, exp_se3, invert, log_se3, perturb_left, HomPoint, Mat6, Pose, Vec3, Vec6};
use crate::valuation::Valuation;

/// Central differences of the corner projection under left perturbations.
pub fn fd_jacobian(
    t_vw: &Pose,
    cam: &CameraModel,
    p_w: &HomPoint,
    step: f64,
) -> Result<Mat2x6, SensingError> {
    let mut j = Mat2x6::zeros();
    for k in 0..6 {
        let mut xi = Vec6::zeros();
        xi[k] = step;
        let plus = project(&to_camera(&perturb_left(t_vw, &xi), cam, p_w), cam)?;
        let minus = project(&to_camera(&perturb_left(t_vw, &(-xi)), cam, p_w), cam)?;
        j.set_column(k, &((plus - minus) / (2.0 * step)));
    }
    Ok(j)
}

/// One noisy corner observation.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub slot: usize,
    pub corner: usize,
    pub p_w: HomPoint,
    pub pixel: Pixel,
}

/// True projections of every detectable tag's corners plus i.i.d. Gaussian
/// pixel noise.
pub fn simulate_measurements(
    t_true: &Pose,
    tags: &[ActiveTag<'_>],
    scene: &Scene,
    cam: &CameraModel,
    noise: &NoiseModel,
    rng: &mut impl Rng,
) -> Vec<Measurement> {
    let normal = Normal::new(0.0, noise.sigma_px).expect("finite noise");
    let mut order: Vec<&ActiveTag<'_>> = tags.iter().collect();
    order.sort_by_key(|t| t.slot.id);
    let mut out = Vec::new();
    for tag in order {
        let Some(corners) = detect(t_true, tag.slot, tag.size, scene, cam) else {
            continue;
        };
        for (corner, p_w) in corners.iter().enumerate() {
            let Ok(px) = project(&to_camera(t_true, cam, p_w), cam) else {
                continue;
            };
            let noisy = Pixel::new(px.x + normal.sample(rng), px.y + normal.sample(rng));
            out.push(Measurement {
                slot: tag.slot.id,
                corner,
                p_w: *p_w,
                pixel: noisy,
            });
        }
    }
    out
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("need at least 8 scalar measurements, got {0}")]
    TooFewMeasurements(usize),
    #[error("normal equations are singular (condition number {0:.3e})")]
    SingularNormalEquations(f64),
    #[error(transparent)]
    Sensing(#[from] SensingError),
}

#[derive(Clone, Debug)]
pub struct Estimate {
    pub pose: Pose,
    pub iterations: usize,
    pub converged: bool,
    /// Final residuals (measured minus predicted), two per measurement.
    pub residuals: Vec<f64>,
    /// Stacked Jacobian at the final pose.
    pub jacobian: Vec<Mat2x6>,
}

pub const MAX_CONDITION: f64 = 1e12;

fn linearize(
    t: &Pose,
    meas: &[Measurement],
    cam: &CameraModel,
) -> Result<(Vec<f64>, Vec<Mat2x6>), SensingError> {
    let mut r = Vec::with_capacity(2 * meas.len());
    let mut g = Vec::with_capacity(meas.len());
    for m in meas {
        let px = project(&to_camera(t, cam, &m.p_w), cam)?;
        r.push(m.pixel.x - px.x);
        r.push(m.pixel.y - px.y);
        g.push(corner_jacobian(t, cam, &m.p_w)?);
    }
    Ok((r, g))
}

/// Gauss-Newton maximum-likelihood pose from corner measurements with equal
/// pixel noise, updating by left perturbations.
pub fn estimate_pose(
    meas: &[Measurement],
    cam: &CameraModel,
    t_init: &Pose,
) -> Result<Estimate, EstimateError> {
    if meas.len() * 2 < 8 {
        return Err(EstimateError::TooFewMeasurements(meas.len() * 2));
    }
    let mut t = *t_init;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < 50 {
        let (r, g) = linearize(&t, meas, cam)?;
        let mut info = Mat6::zeros();
        let mut b = Vec6::zeros();
        for (k, gk) in g.iter().enumerate() {
            info += gk.transpose() * gk;
            b += gk.transpose() * nalgebra::Vector2::new(r[2 * k], r[2 * k + 1]);
        }
        let cond = condition_number(&info);
        if !(cond <= MAX_CONDITION) {
            return Err(EstimateError::SingularNormalEquations(cond));
        }
        let xi = info
            .cholesky()
            .ok_or(EstimateError::SingularNormalEquations(cond))?
            .solve(&b);
        t = perturb_left(&t, &xi);
        iterations += 1;
        if xi.norm() < 1e-10 {
            converged = true;
            break;
        }
    }
    let (residuals, jacobian) = linearize(&t, meas, cam)?;
    Ok(Estimate {
        pose: t,
        iterations,
        converged,
        residuals,
        jacobian,
    })
}

/// Ratio of the largest to the smallest eigenvalue (infinite if singular).
pub fn condition_number(m: &Mat6) -> f64 {
    let eig = SymmetricEigen::new(*m).eigenvalues;
    let max = eig.max();
    let min = eig.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Left-perturbation error `log(T_est * T_true^-1)`.
pub fn pose_error(est: &Pose, truth: &Pose) -> Vec6 {
    log_se3(&compose(est, &invert(truth)))
}

/// Vehicle position error in meters.
pub fn position_error(est: &Pose, truth: &Pose) -> f64 {
    (est.origin_in_world() - truth.origin_in_world()).norm()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrlbReport {
    pub trials: usize,
    pub failures: usize,
    pub empirical_trace: f64,
    pub crlb_trace: f64,
    pub ratio: f64,
    /// Per-axis mean of the estimation errors.
    pub mean_error: [f64; 6],
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrlbError {
    #[error("pose information is rank deficient (condition number {0:.3e})")]
    RankDeficient(f64),
    #[error("every trial failed to produce an estimate")]
    AllTrialsFailed,
}

/// Per-trial random stream, independent of the worker that runs it.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Monte Carlo covariance of the estimator against the inverse FIM.
pub fn crlb_check(
    t_true: &Pose,
    tags: &[ActiveTag<'_>],
    scene: &Scene,
    cam: &CameraModel,
    noise: &NoiseModel,
    trials: usize,
    seed: u64,
) -> Result<CrlbReport, CrlbError> {
    let fim = pose_fim(t_true, tags, scene, cam, noise).to_matrix();
    let cond = condition_number(&fim);
    if !(cond <= MAX_CONDITION) {
        return Err(CrlbError::RankDeficient(cond));
    }
    let crlb = fim.try_inverse().ok_or(CrlbError::RankDeficient(cond))?;
    let errors: Vec<Option<Vec6>> = (0..trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = trial_rng(seed, k as u64);
            let meas = simulate_measurements(t_true, tags, scene, cam, noise, &mut rng);
            estimate_pose(&meas, cam, t_true)
                .ok()
                .map(|e| pose_error(&e.pose, t_true))
        })
        .collect();
    let ok: Vec<Vec6> = errors.iter().flatten().copied().collect();
    if ok.len() < 2 {
        return Err(CrlbError::AllTrialsFailed);
    }
    let n = ok.len() as f64;
    let mean = ok.iter().fold(Vec6::zeros(), |a, e| a + e) / n;
    let cov = ok
        .iter()
        .fold(Mat6::zeros(), |a, e| a + (e - mean) * (e - mean).transpose())
        / (n - 1.0);
    Ok(CrlbReport {
        trials,
        failures: trials - ok.len(),
        empirical_trace: cov.trace(),
        crlb_trace: crlb.trace(),
        ratio: cov.trace() / crlb.trace(),
        mean_error: mean.into(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    /// Crab walk: sideways motion, camera perpendicular to the path.
    Cwk,
    /// Look straight ahead: camera along the path.
    Lsa,
    /// Spinning: a full yaw sweep at every waypoint.
    Spn,
}

impl TrajectoryKind {
    pub const ALL: [TrajectoryKind; 3] = [TrajectoryKind::Cwk, TrajectoryKind::Lsa, TrajectoryKind::Spn];

    pub fn name(self) -> &'static str {
        match self {
            TrajectoryKind::Cwk => "CWK",
            TrajectoryKind::Lsa => "LSA",
            TrajectoryKind::Spn => "SPN",
        }
    }
}

impl std::str::FromStr for TrajectoryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cwk" => Ok(TrajectoryKind::Cwk),
            "lsa" => Ok(TrajectoryKind::Lsa),
            "spn" => Ok(TrajectoryKind::Spn),
            other => Err(format!("unknown trajectory kind '{other}' (expected cwk, lsa or spn)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryParams {
    pub start: [f64; 2],
    pub end: [f64; 2],
    /// Waypoint spacing (m).
    pub spacing: f64,
    /// Yaw step of the spin sweep (degrees).
    pub spin_step_deg: f64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        TrajectoryParams {
            start: [0.0, 0.0],
            end: [1.0, 0.0],
            spacing: 0.25,
            spin_step_deg: 30.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    pub poses: Vec<Pose>,
    pub step: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("trajectory waypoint ({0:.3}, {1:.3}) lies outside the region")]
    PathExitsRegion(f64, f64),
    #[error("invalid trajectory parameters: {0}")]
    Params(String),
}

pub fn gen_trajectory(
    kind: TrajectoryKind,
    region: &Polygon,
    altitude: f64,
    params: &TrajectoryParams,
) -> Result<Trajectory, TrajectoryError> {
    let start = Vec2::from(params.start);
    let end = Vec2::from(params.end);
    let length = (end - start).norm();
    if !(params.spacing > 0.0) || !(length > 0.0) {
        return Err(TrajectoryError::Params(
            "spacing and path length must be positive".into(),
        ));
    }
    let spin_steps = 360.0 / params.spin_step_deg;
    if kind == TrajectoryKind::Spn
        && (!(params.spin_step_deg > 0.0) || (spin_steps - spin_steps.round()).abs() > 1e-9)
    {
        return Err(TrajectoryError::Params("spin_step_deg must divide 360".into()));
    }
    let segments = (length / params.spacing - 1e-9).ceil().max(1.0) as usize;
    let heading = (end.y - start.y).atan2(end.x - start.x);
    let mut poses = Vec::new();
    for k in 0..=segments {
        let p = start + (end - start) * (k as f64 / segments as f64);
        if !region.contains_strict(&p) {
            return Err(TrajectoryError::PathExitsRegion(p.x, p.y));
        }
        let pos = Vec3::new(p.x, p.y, altitude);
        match kind {
            TrajectoryKind::Cwk => {
                poses.push(Pose::from_position_yaw(&pos, heading + std::f64::consts::FRAC_PI_2))
            }
            TrajectoryKind::Lsa => poses.push(Pose::from_position_yaw(&pos, heading)),
            TrajectoryKind::Spn => {
                for j in 0..spin_steps.round() as usize {
                    let yaw = (j as f64 * params.spin_step_deg).to_radians();
                    poses.push(Pose::from_position_yaw(&pos, yaw));
                }
            }
        }
    }
    Ok(Trajectory {
        kind,
        poses,
        step: length / segments as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseEval {
    pub detected_tags: usize,
    /// Position error (m) if the pose could be estimated.
    pub error: Option<f64>,
    pub estimate: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub poses: Vec<PoseEval>,
    /// 3D position RMSE over estimated poses; `None` if none was estimable.
    pub rmse: Option<f64>,
    /// Poses without any detectable tag.
    pub skipped: usize,
    /// Poses with tags whose estimate failed.
    pub failed: usize,
}

/// Standard deviation of the initial pose perturbation per axis.
pub const INIT_PERTURBATION: f64 = 0.05;

/// Simulates and estimates every pose of a trajectory.
pub fn rmse_eval(
    traj: &Trajectory,
    tags: &[ActiveTag<'_>],
    scene: &Scene,
    cam: &CameraModel,
    noise: &NoiseModel,
    seed: u64,
) -> EvalReport {
    let init = Normal::new(0.0, INIT_PERTURBATION).expect("finite");
    let poses: Vec<PoseEval> = traj
        .poses
        .par_iter()
        .enumerate()
        .map(|(k, truth)| {
            let mut rng = trial_rng(seed, k as u64);
            let meas = simulate_measurements(truth, tags, scene, cam, noise, &mut rng);
            let detected_tags = meas.len().div_ceil(4);
            if meas.is_empty() {
                return PoseEval {
                    detected_tags,
                    error: None,
                    estimate: None,
                };
            }
            let xi = Vec6::from_fn(|_, _| init.sample(&mut rng));
            let t_init = compose(&exp_se3(&xi), truth);
            match estimate_pose(&meas, cam, &t_init) {
                Ok(e) => PoseEval {
                    detected_tags,
                    error: Some(position_error(&e.pose, truth)),
                    estimate: Some(e.pose.origin_in_world().into()),
                },
                Err(_) => PoseEval {
                    detected_tags,
                    error: None,
                    estimate: None,
                },
            }
        })
        .collect();
    let skipped = poses.iter().filter(|p| p.detected_tags == 0).count();
    let failed = poses
        .iter()
        .filter(|p| p.detected_tags > 0 && p.error.is_none())
        .count();
    let errs: Vec<f64> = poses.iter().filter_map(|p| p.error).collect();
    let rmse = (!errs.is_empty())
        .then(|| (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt());
    EvalReport {
        poses,
        rmse,
        skipped,
        failed,
    }
}

/// Largest number of configurations [`exhaustive_oracle`] will enumerate.
pub const ORACLE_STATE_LIMIT: u128 = 1 << 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("instance has {0} configurations, more than the enumeration limit")]
    InstanceTooLarge(u128),
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Number of configurations respecting the mask and per-phase budget.
pub fn oracle_state_count(valuation: &Valuation<'_>, budget: usize) -> u128 {
    let p = valuation.problem;
    let n_s = p.n_sizes() as u128;
    (0..p.layout.n_phases)
        .map(|phase| {
            let f = p.layout.phase_range(phase).filter(|&g| p.feasible[g]).count();
            (0..=budget.min(f))
                .map(|k| binomial(f, k) * n_s.pow(k as u32))
                .sum::<u128>()
        })
        .fold(1u128, |a, b| a.saturating_mul(b))
}

/// Exact maximum score by enumerating every feasible configuration within
/// the budget. Ties keep the first configuration in enumeration order.
pub fn exhaustive_oracle(
    valuation: &Valuation<'_>,
    budget: usize,
) -> Result<(f64, Chromosome), OracleError> {
    let states = oracle_state_count(valuation, budget);
    if states > ORACLE_STATE_LIMIT {
        return Err(OracleError::InstanceTooLarge(states));
    }
    let p = valuation.problem;
    let genes: Vec<usize> = (0..p.layout.len()).filter(|&g| p.feasible[g]).collect();
    let n_s = p.n_sizes() as u8;
    let mut configs = Vec::with_capacity(states as usize);
    let mut current = Chromosome::zeros(p.layout.len());
    let mut used = vec![0usize; p.layout.n_phases];
    enumerate(&genes, 0, n_s, budget, p.layout.n_slots, &mut current, &mut used, &mut configs);
    let scores: Vec<f64> = configs.par_iter().map(|c| valuation.score(c)).collect();
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok((scores[best], configs.swap_remove(best)))
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    genes: &[usize],
    at: usize,
    n_s: u8,
    budget: usize,
    n_slots: usize,
    current: &mut Chromosome,
    used: &mut [usize],
    out: &mut Vec<Chromosome>,
) {
    if at == genes.len() {
        out.push(current.clone());
        return;
    }
    let g = genes[at];
    enumerate(genes, at + 1, n_s, budget, n_slots, current, used, out);
    let phase = g / n_slots;
    if used[phase] < budget {
        used[phase] += 1;
        for v in 1..=n_s {
            current.genes[g] = v;
            enumerate(genes, at + 1, n_s, budget, n_slots, current, used, out);
        }
        current.genes[g] = 0;
        used[phase] -= 1;
    }
}

/// Best of `samples` random feasible configurations.
pub fn random_baseline(valuation: &Valuation<'_>, samples: usize, seed: u64) -> (f64, Chromosome) {
    let p = valuation.problem;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pop = random_population(
        &p.feasible,
        &p.layout,
        p.n_sizes(),
        p.params.max_tags_per_phase,
        samples.max(1),
        &mut rng,
    );
    let scores: Vec<f64> = pop.par_iter().map(|c| valuation.score(c)).collect();
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] || (*s == scores[best] && pop[i] < pop[best]) {
            best = i;
        }
    }
    (scores[best], pop[best].clone())
}

//! Query poses, the FIM lookup table, utilities, change counting and cost.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ga::{Chromosome, GeneLayout};
use crate::scene::{
    discretize_rois, expand_to_heights, identify_tag_options, merge_options_across_phases,
    modified_rois, GridCell, Scene, SceneError, Slot, TagOption, Vec2,
};
use crate::sensing::{detect, metric, tag_fim, CameraModel, Fim, MetricKind, NoiseModel};
use crate::spatial::{Pose, Vec3};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("phase {phase}: no navigable grid cells inside any ROI")]
    NoCells { phase: usize },
    #[error("phase {phase}: no feasible tag placement options (check installable surfaces)")]
    NoOptions { phase: usize },
}

/// Discretization and search settings shared by all phases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanningParams {
    /// Grid cell side (m).
    pub cell_size: f64,
    /// Yaw step (degrees).
    pub delta_theta: f64,
    /// Tag placement resolution along surfaces (m).
    pub d_res: f64,
    pub flight_altitudes: Vec<f64>,
    pub install_heights: Vec<f64>,
    /// Available tag sides (m); gene value `i > 0` selects `tag_sizes[i - 1]`.
    pub tag_sizes: Vec<f64>,
    pub metric: MetricKind,
    pub max_tags_per_phase: usize,
    /// Normalize each cell by its capacity (all options occupied).
    pub normalize: bool,
}

impl Default for PlanningParams {
    fn default() -> Self {
        PlanningParams {
            cell_size: 0.5,
            delta_theta: 20.0,
            d_res: 0.3,
            flight_altitudes: vec![1.5],
            install_heights: vec![1.5],
            tag_sizes: vec![0.23],
            metric: MetricKind::Trace,
            max_tags_per_phase: 32,
            normalize: true,
        }
    }
}

impl PlanningParams {
    pub fn validate(&self) -> Result<(), ProblemError> {
        let bad = |m: String| Err(ProblemError::Params(m));
        if !(self.cell_size > 0.0) {
            return bad(format!("cell_size must be positive, got {}", self.cell_size));
        }
        if !(self.d_res > 0.0) {
            return bad(format!("d_res must be positive, got {}", self.d_res));
        }
        let steps = 360.0 / self.delta_theta;
        if !(self.delta_theta > 0.0) || (steps - steps.round()).abs() > 1e-9 {
            return bad(format!("delta_theta must divide 360, got {}", self.delta_theta));
        }
        if self.tag_sizes.is_empty() || self.tag_sizes.iter().any(|s| !(*s > 0.0)) {
            return bad("tag_sizes must be a non-empty list of positive sizes".into());
        }
        let ascending = self.tag_sizes.windows(2).all(|w| w[0] < w[1]);
        let descending = self.tag_sizes.windows(2).all(|w| w[0] > w[1]);
        if !(ascending || descending) {
            return bad("tag_sizes must be strictly ascending or descending".into());
        }
        if self.tag_sizes.len() > u8::MAX as usize {
            return bad("too many tag sizes".into());
        }
        if self.max_tags_per_phase == 0 {
            return bad("max_tags_per_phase must be at least 1".into());
        }
        Ok(())
    }

    pub fn yaw_count(&self) -> usize {
        (360.0 / self.delta_theta).round() as usize
    }

    /// Index of the largest tag size.
    pub fn largest_size_index(&self) -> usize {
        let mut best = 0;
        for (i, s) in self.tag_sizes.iter().enumerate() {
            if *s > self.tag_sizes[best] {
                best = i;
            }
        }
        best
    }
}

/// Installation cost parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    /// Minimum normalized score a placement is expected to add per cell.
    pub s_min: f64,
    /// Fraction of cells expected to gain `s_min`.
    pub p_c: f64,
    /// Accessibility coefficient per tag size; exactly one equals 1.
    pub alpha: Vec<f64>,
    pub lambda_rmv: f64,
    pub lambda_rpl: f64,
    /// Phases between forced replacements of a kept tag.
    pub k_wear: usize,
    /// Forces the placement weight to zero.
    pub disabled: bool,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            s_min: 0.06,
            p_c: 0.02,
            alpha: vec![1.0],
            lambda_rmv: 0.1,
            lambda_rpl: 0.0,
            k_wear: 1000,
            disabled: false,
        }
    }
}

impl CostParams {
    pub fn validate(&self, n_sizes: usize) -> Result<(), ProblemError> {
        let bad = |m: String| Err(ProblemError::Params(m));
        if self.alpha.len() != n_sizes {
            return bad(format!(
                "cost.alpha has {} entries but there are {} tag sizes",
                self.alpha.len(),
                n_sizes
            ));
        }
        if self.alpha.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return bad("every cost.alpha must lie in (0, 1]".into());
        }
        if self.alpha.iter().filter(|a| **a == 1.0).count() != 1 {
            return bad("exactly one tag size must have alpha = 1 (the reference tag)".into());
        }
        if !(self.lambda_rmv > 0.0 && self.lambda_rmv <= 1.0) {
            return bad(format!("cost.lambda_rmv must lie in (0, 1], got {}", self.lambda_rmv));
        }
        if !(self.lambda_rpl >= 0.0) {
            return bad(format!("cost.lambda_rpl must be non-negative, got {}", self.lambda_rpl));
        }
        if !(self.s_min >= 0.0 && self.p_c >= 0.0) {
            return bad("cost.s_min and cost.p_c must be non-negative".into());
        }
        if self.k_wear == 0 {
            return bad("cost.k_wear must be at least 1".into());
        }
        Ok(())
    }

    /// Weight of one reference-tag placement.
    pub fn w_plc(&self, n_cells_total: usize) -> f64 {
        if self.disabled {
            0.0
        } else {
            self.s_min * self.p_c * n_cells_total as f64
        }
    }
}

/// Discrete vehicle pose at which localizability is evaluated.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryPose {
    pub id: usize,
    pub phase: usize,
    /// Index into the phase's cell list.
    pub cell: usize,
    pub altitude: f64,
    pub yaw_deg: f64,
    pub t_vw: Pose,
}

/// Every cell at every altitude and yaw `{0, d, 2d, ...}`; cell-major,
/// then altitude, then yaw. Ids start at `first_id`.
pub fn enumerate_query_poses(
    cells: &[GridCell],
    phase: usize,
    altitudes: &[f64],
    delta_theta: f64,
    first_id: usize,
) -> Vec<QueryPose> {
    let yaws = (360.0 / delta_theta).round() as usize;
    let mut out = Vec::with_capacity(cells.len() * altitudes.len() * yaws);
    for (ci, cell) in cells.iter().enumerate() {
        for &z in altitudes {
            for k in 0..yaws {
                let yaw_deg = k as f64 * delta_theta;
                let pos = Vec3::new(cell.center.x, cell.center.y, z);
                out.push(QueryPose {
                    id: first_id + out.len(),
                    phase,
                    cell: ci,
                    altitude: z,
                    yaw_deg,
                    t_vw: Pose::from_position_yaw(&pos, yaw_deg.to_radians()),
                });
            }
        }
    }
    out
}

/// One phase of the project as given by the user.
#[derive(Clone, Debug)]
pub struct PhaseSpec {
    pub scene: Scene,
    pub install_heights: Vec<f64>,
}

/// A phase after discretization.
#[derive(Clone, Debug)]
pub struct PhaseModel {
    pub scene: Scene,
    pub install_heights: Vec<f64>,
    pub cells: Vec<GridCell>,
    /// Global ids of this phase's query poses.
    pub pose_range: Range<usize>,
    pub poses_per_cell: usize,
}

impl PhaseModel {
    pub fn cell_pose_range(&self, cell: usize) -> Range<usize> {
        let start = self.pose_range.start + cell * self.poses_per_cell;
        start..start + self.poses_per_cell
    }
}

/// The discretized planning problem shared by every evaluation.
#[derive(Clone, Debug)]
pub struct Problem {
    pub origin: Vec2,
    pub phases: Vec<PhaseModel>,
    pub options: Vec<TagOption>,
    pub slots: Vec<Slot>,
    pub layout: GeneLayout,
    /// Feasibility mask in gene layout.
    pub feasible: Vec<bool>,
    pub poses: Vec<QueryPose>,
    pub camera: CameraModel,
    pub noise: NoiseModel,
    pub params: PlanningParams,
    pub warnings: Vec<String>,
}

impl Problem {
    pub fn build(
        origin: Vec2,
        specs: Vec<PhaseSpec>,
        camera: CameraModel,
        noise: NoiseModel,
        params: PlanningParams,
    ) -> Result<Problem, ProblemError> {
        params.validate()?;
        camera
            .validate()
            .map_err(|e| ProblemError::Params(e.to_string()))?;
        if !(noise.sigma_px > 0.0) {
            return Err(ProblemError::Params("sigma_px must be positive".into()));
        }
        if specs.is_empty() {
            return Err(ProblemError::Params("a project needs at least one phase".into()));
        }
        let mut warnings = Vec::new();
        let mut phases = Vec::with_capacity(specs.len());
        let mut poses = Vec::new();
        let mut per_phase_options = Vec::with_capacity(specs.len());
        let yaws = params.yaw_count();
        for (idx, spec) in specs.into_iter().enumerate() {
            if spec.scene.phase_id != idx {
                return Err(ProblemError::Params(format!(
                    "phase {idx} carries phase id {}",
                    spec.scene.phase_id
                )));
            }
            if spec.install_heights.is_empty() {
                return Err(SceneError::NoHeights.into());
            }
            let modified = modified_rois(&spec.scene, params.cell_size);
            warnings.extend(modified.warnings);
            let cells = discretize_rois(&modified.pieces, params.cell_size, origin);
            if cells.is_empty() {
                return Err(ProblemError::NoCells { phase: idx });
            }
            let phase_poses = enumerate_query_poses(
                &cells,
                idx,
                &spec.scene.altitudes,
                params.delta_theta,
                poses.len(),
            );
            let pose_range = poses.len()..poses.len() + phase_poses.len();
            poses.extend(phase_poses);
            let options = identify_tag_options(&spec.scene, params.d_res, &params.tag_sizes);
            if options.is_empty() {
                return Err(ProblemError::NoOptions { phase: idx });
            }
            per_phase_options.push(options);
            phases.push(PhaseModel {
                poses_per_cell: spec.scene.altitudes.len() * yaws,
                scene: spec.scene,
                install_heights: spec.install_heights,
                cells,
                pose_range,
            });
        }
        let mut heights: Vec<f64> = phases
            .iter()
            .flat_map(|p| p.install_heights.iter().copied())
            .collect();
        heights.sort_by(f64::total_cmp);
        heights.dedup();
        let mut options = merge_options_across_phases(per_phase_options);
        for o in &mut options {
            o.heights = heights.clone();
        }
        let slots = expand_to_heights(&options, &heights)?;
        let layout = GeneLayout::new(phases.len(), slots.len());
        let mut feasible = vec![false; layout.len()];
        for (p, phase) in phases.iter().enumerate() {
            for s in &slots {
                let ok = options[s.option].feasible_phases.contains(&p)
                    && phase.install_heights.contains(&s.height);
                feasible[layout.index(p, s.id)] = ok;
            }
            if !(0..slots.len()).any(|s| feasible[layout.index(p, s)]) {
                return Err(ProblemError::NoOptions { phase: p });
            }
        }
        Ok(Problem {
            origin,
            phases,
            options,
            slots,
            layout,
            feasible,
            poses,
            camera,
            noise,
            params,
            warnings,
        })
    }

    pub fn n_sizes(&self) -> usize {
        self.params.tag_sizes.len()
    }

    pub fn n_cells_total(&self) -> usize {
        self.phases.iter().map(|p| p.cells.len()).sum()
    }

    /// Phases in which a slot may hold a tag.
    pub fn slot_phases(&self, slot: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.phases.len()).filter(move |&p| self.feasible[self.layout.index(p, slot)])
    }

    /// Every feasible gene set to the largest tag size.
    pub fn all_occupied(&self) -> Chromosome {
        let gene = (self.params.largest_size_index() + 1) as u8;
        Chromosome::new(
            self.feasible
                .iter()
                .map(|&f| if f { gene } else { 0 })
                .collect(),
        )
    }
}

/// Detectable entries of one (slot, size), sorted by pose id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SizeColumn {
    pub poses: Vec<u32>,
    pub traces: Vec<f64>,
    pub fims: Vec<Fim>,
}

impl SizeColumn {
    /// Entry range belonging to `poses` (a contiguous id range).
    pub fn range_for(&self, poses: &Range<usize>) -> Range<usize> {
        let lo = self.poses.partition_point(|&p| (p as usize) < poses.start);
        let hi = self.poses.partition_point(|&p| (p as usize) < poses.end);
        lo..hi
    }

    fn get(&self, pose: usize) -> Option<&Fim> {
        self.poses
            .binary_search(&(pose as u32))
            .ok()
            .map(|i| &self.fims[i])
    }
}

/// All sizes of one slot; poses outside the column are computed-undetectable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Column {
    pub by_size: Vec<SizeColumn>,
}

/// Lazily filled cache of per-tag information over all query poses.
///
/// A slot's column is computed at most once, for every pose of every phase
/// in which the slot is feasible and every tag size. A missing pose inside a
/// present column means "computed, undetectable".
#[derive(Debug)]
pub struct FimTable {
    columns: Vec<OnceLock<Column>>,
    n_sizes: usize,
    evaluations: AtomicUsize,
    requests: AtomicUsize,
    misses: AtomicUsize,
}

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache file I/O: {0}")]
    Io(#[from] io::Error),
    #[error("cache file is not a tag information cache")]
    BadMagic,
    #[error("cache was built for different inputs (content hash mismatch)")]
    Stale,
    #[error("cache layout does not match the problem")]
    Layout,
}

const CACHE_MAGIC: &[u8; 8] = b"TPFIM\x00\x00\x01";

impl FimTable {
    pub fn new(problem: &Problem) -> Self {
        FimTable {
            columns: (0..problem.slots.len()).map(|_| OnceLock::new()).collect(),
            n_sizes: problem.n_sizes(),
            evaluations: AtomicUsize::new(0),
            requests: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    /// Number of (pose, slot, size) detectability evaluations performed.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    /// `(column requests, requests that found the column missing)`.
    pub fn request_stats(&self) -> (usize, usize) {
        (
            self.requests.load(Ordering::Relaxed),
            self.misses.load(Ordering::Relaxed),
        )
    }

    pub fn is_computed(&self, slot: usize) -> bool {
        self.columns[slot].get().is_some()
    }

    pub fn column(&self, problem: &Problem, slot: usize) -> &Column {
        self.requests.fetch_add(1, Ordering::Relaxed);
        self.columns[slot].get_or_init(|| {
            self.misses.fetch_add(1, Ordering::Relaxed);
            self.compute_column(problem, slot)
        })
    }

    fn compute_column(&self, problem: &Problem, slot_id: usize) -> Column {
        let slot = &problem.slots[slot_id];
        let mut by_size = vec![SizeColumn::default(); self.n_sizes];
        let mut count = 0;
        for p in problem.slot_phases(slot_id) {
            let phase = &problem.phases[p];
            for pose in &problem.poses[phase.pose_range.clone()] {
                for (k, &size) in problem.params.tag_sizes.iter().enumerate() {
                    count += 1;
                    let Some(corners) = detect(&pose.t_vw, slot, size, &phase.scene, &problem.camera)
                    else {
                        continue;
                    };
                    let Ok(fim) = tag_fim(&pose.t_vw, &corners, &problem.camera, &problem.noise)
                    else {
                        continue;
                    };
                    let col = &mut by_size[k];
                    col.poses.push(pose.id as u32);
                    col.traces.push(fim.trace());
                    col.fims.push(fim);
                }
            }
        }
        self.evaluations.fetch_add(count, Ordering::Relaxed);
        Column { by_size }
    }

    /// Cached information of one tag at one pose; zero if undetectable.
    pub fn get_or_compute(&self, problem: &Problem, pose: usize, slot: usize, size: usize) -> Fim {
        self.column(problem, slot).by_size[size]
            .get(pose)
            .copied()
            .unwrap_or_default()
    }

    /// Fills every column, in parallel.
    pub fn precompute(&self, problem: &Problem) {
        (0..self.columns.len()).into_par_iter().for_each(|s| {
            self.column(problem, s);
        });
    }

    /// Writes every computed column, keyed by `hash`.
    pub fn save(&self, path: &Path, hash: &[u8; 32]) -> Result<(), CacheError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CACHE_MAGIC)?;
        w.write_all(hash)?;
        w.write_all(&(self.columns.len() as u32).to_le_bytes())?;
        w.write_all(&(self.n_sizes as u32).to_le_bytes())?;
        for col in &self.columns {
            match col.get() {
                None => w.write_all(&[0])?,
                Some(c) => {
                    w.write_all(&[1])?;
                    for sc in &c.by_size {
                        w.write_all(&(sc.poses.len() as u32).to_le_bytes())?;
                        for ((pose, trace), fim) in sc.poses.iter().zip(&sc.traces).zip(&sc.fims) {
                            w.write_all(&pose.to_le_bytes())?;
                            w.write_all(&trace.to_le_bytes())?;
                            for v in fim.0 {
                                w.write_all(&v.to_le_bytes())?;
                            }
                        }
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a cache written by [`FimTable::save`], rejecting stale files.
    pub fn load(problem: &Problem, path: &Path, hash: &[u8; 32]) -> Result<FimTable, CacheError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(CacheError::BadMagic);
        }
        let mut stored = [0u8; 32];
        r.read_exact(&mut stored)?;
        if &stored != hash {
            return Err(CacheError::Stale);
        }
        let read_u32 = |r: &mut BufReader<File>| -> io::Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        let read_f64 = |r: &mut BufReader<File>| -> io::Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let table = FimTable::new(problem);
        if read_u32(&mut r)? as usize != table.columns.len() || read_u32(&mut r)? as usize != table.n_sizes {
            return Err(CacheError::Layout);
        }
        for col in &table.columns {
            let mut flag = [0u8; 1];
            r.read_exact(&mut flag)?;
            if flag[0] == 0 {
                continue;
            }
            let mut by_size = Vec::with_capacity(table.n_sizes);
            for _ in 0..table.n_sizes {
                let n = read_u32(&mut r)? as usize;
                let mut sc = SizeColumn::default();
                for _ in 0..n {
                    sc.poses.push(read_u32(&mut r)?);
                    sc.traces.push(read_f64(&mut r)?);
                    let mut f = [0.0; 21];
                    for v in &mut f {
                        *v = read_f64(&mut r)?;
                    }
                    sc.fims.push(Fim(f));
                }
                by_size.push(sc);
            }
            let _ = col.set(Column { by_size });
        }
        Ok(table)
    }
}

/// Placement, removal and wear-replacement counts over the whole project.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeCounts {
    /// Placements per tag size.
    pub n_plc: Vec<usize>,
    pub n_rmv: usize,
    pub n_rpl: usize,
}

impl ChangeCounts {
    pub fn placements(&self) -> usize {
        self.n_plc.iter().sum()
    }
}

/// Counts tag network changes location by location across phases.
///
/// A placement is a tag appearing (or changing size) at a location; a
/// removal is a tag disappearing while the location stays feasible; a run of
/// `L` consecutive phases with the same tag needs `(L - 1) / k_wear`
/// replacements.
pub fn count_changes(
    c: &Chromosome,
    layout: &GeneLayout,
    feasible: &[bool],
    n_sizes: usize,
    k_wear: usize,
) -> ChangeCounts {
    let mut out = ChangeCounts {
        n_plc: vec![0; n_sizes],
        ..Default::default()
    };
    for slot in 0..layout.n_slots {
        let mut prev: u8 = 0;
        let mut run = 0usize;
        for phase in 0..layout.n_phases {
            let gi = layout.index(phase, slot);
            let gene = if feasible[gi] { c.genes[gi] } else { 0 };
            if gene != prev {
                if prev != 0 {
                    out.n_rpl += (run - 1) / k_wear;
                    if feasible[gi] {
                        out.n_rmv += 1;
                    }
                }
                if gene != 0 {
                    out.n_plc[gene as usize - 1] += 1;
                }
                run = usize::from(gene != 0);
            } else if gene != 0 {
                run += 1;
            }
            prev = gene;
        }
        if prev != 0 {
            out.n_rpl += (run - 1) / k_wear;
        }
    }
    out
}

/// Bracketed part of the cost: weighted placements, removals and replacements.
pub fn cost_bracket(counts: &ChangeCounts, cp: &CostParams) -> f64 {
    let placements: f64 = counts
        .n_plc
        .iter()
        .zip(&cp.alpha)
        .map(|(&n, &a)| n as f64 / a)
        .sum();
    placements + counts.n_rmv as f64 / cp.lambda_rmv + cp.lambda_rpl * counts.n_rpl as f64
}

pub fn cost(counts: &ChangeCounts, n_cells_total: usize, cp: &CostParams) -> f64 {
    let w = cp.w_plc(n_cells_total);
    if w == 0.0 {
        return 0.0;
    }
    w * cost_bracket(counts, cp)
}

/// Utility, cost and their difference for one chromosome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub utility: f64,
    pub cost: f64,
    pub score: f64,
    pub counts: ChangeCounts,
}

/// Scores chromosomes against a problem through a shared [`FimTable`].
#[derive(Debug)]
pub struct Valuation<'p> {
    pub problem: &'p Problem,
    pub table: &'p FimTable,
    pub cost: CostParams,
    capacity: OnceLock<Vec<Vec<f64>>>,
}

impl<'p> Valuation<'p> {
    pub fn new(problem: &'p Problem, table: &'p FimTable, cost: CostParams) -> Result<Self, ProblemError> {
        cost.validate(problem.n_sizes())?;
        Ok(Valuation {
            problem,
            table,
            cost,
            capacity: OnceLock::new(),
        })
    }

    /// Raw (unnormalized) utility of every cell of `phase`.
    fn raw_cell_utilities(&self, c: &Chromosome, phase: usize) -> Vec<f64> {
        let problem = self.problem;
        let model = &problem.phases[phase];
        let range = model.pose_range.clone();
        let n = range.len();
        let metric_kind = problem.params.metric;
        let active = (0..problem.layout.n_slots).filter_map(|slot| {
            let gi = problem.layout.index(phase, slot);
            let g = c.genes[gi];
            (g != 0 && problem.feasible[gi]).then(|| (slot, g as usize - 1))
        });
        let per_pose: Vec<f64> = if metric_kind.is_additive() {
            let mut acc = vec![0.0; n];
            for (slot, size) in active {
                let sc = &self.table.column(problem, slot).by_size[size];
                for i in sc.range_for(&range) {
                    acc[sc.poses[i] as usize - range.start] += sc.traces[i];
                }
            }
            acc
        } else {
            let mut acc = vec![Fim::zero(); n];
            for (slot, size) in active {
                let sc = &self.table.column(problem, slot).by_size[size];
                for i in sc.range_for(&range) {
                    acc[sc.poses[i] as usize - range.start].add_assign(&sc.fims[i]);
                }
            }
            acc.par_iter().map(|f| metric(f, metric_kind)).collect()
        };
        per_pose
            .chunks(model.poses_per_cell)
            .map(|chunk| chunk.iter().sum())
            .collect()
    }

    /// Per-cell capacity: raw utility with every feasible slot occupied.
    ///
    /// Each slot takes, per cell, the size with the largest trace sum over the
    /// cell's poses (the largest size on ties). For the trace metric this is
    /// the maximum over all configurations; with a single size it equals the
    /// utility of [`Problem::all_occupied`].
    pub fn cell_capacity(&self, phase: usize) -> &[f64] {
        &self.capacity.get_or_init(|| {
            (0..self.problem.phases.len())
                .map(|p| self.phase_capacity(p))
                .collect()
        })[phase]
    }

    fn phase_capacity(&self, phase: usize) -> Vec<f64> {
        let problem = self.problem;
        let model = &problem.phases[phase];
        let range = model.pose_range.clone();
        let ppc = model.poses_per_cell;
        let n_cells = model.cells.len();
        let largest = problem.params.largest_size_index();
        let kind = problem.params.metric;
        let mut traces = vec![0.0; range.len()];
        let mut fims = if kind.is_additive() {
            Vec::new()
        } else {
            vec![Fim::zero(); range.len()]
        };
        for slot in 0..problem.layout.n_slots {
            if !problem.feasible[problem.layout.index(phase, slot)] {
                continue;
            }
            let col = self.table.column(problem, slot);
            let sums: Vec<Vec<f64>> = col
                .by_size
                .iter()
                .map(|sc| {
                    let mut per_cell = vec![0.0; n_cells];
                    for i in sc.range_for(&range) {
                        per_cell[(sc.poses[i] as usize - range.start) / ppc] += sc.traces[i];
                    }
                    per_cell
                })
                .collect();
            for cell in 0..n_cells {
                let mut best = largest;
                for (k, s) in sums.iter().enumerate() {
                    if s[cell] > sums[best][cell] {
                        best = k;
                    }
                }
                let sc = &col.by_size[best];
                for i in sc.range_for(&model.cell_pose_range(cell)) {
                    let at = sc.poses[i] as usize - range.start;
                    if kind.is_additive() {
                        traces[at] += sc.traces[i];
                    } else {
                        fims[at].add_assign(&sc.fims[i]);
                    }
                }
            }
        }
        if !kind.is_additive() {
            traces = fims.par_iter().map(|f| metric(f, kind)).collect();
        }
        traces.chunks(ppc).map(|c| c.iter().sum()).collect()
    }

    /// Cell utilities of `phase`, normalized by capacity when enabled.
    pub fn cell_utilities(&self, c: &Chromosome, phase: usize) -> Vec<f64> {
        let raw = self.raw_cell_utilities(c, phase);
        if !self.problem.params.normalize {
            return raw;
        }
        let cap = self.cell_capacity(phase);
        raw.iter()
            .zip(cap)
            .map(|(&u, &k)| if k > 0.0 { u / k } else { 0.0 })
            .collect()
    }

    /// Importance-weighted sum over ROIs of one phase.
    pub fn phase_utility(&self, c: &Chromosome, phase: usize) -> f64 {
        let model = &self.problem.phases[phase];
        let mut per_roi = vec![0.0; model.scene.rois.len()];
        for (u, cell) in self.cell_utilities(c, phase).iter().zip(&model.cells) {
            per_roi[cell.roi_index] += u;
        }
        per_roi
            .iter()
            .zip(&model.scene.rois)
            .map(|(s, roi)| roi.importance * s)
            .sum()
    }

    pub fn total_utility(&self, c: &Chromosome) -> f64 {
        (0..self.problem.phases.len())
            .map(|p| self.phase_utility(c, p))
            .sum()
    }

    pub fn count_changes(&self, c: &Chromosome) -> ChangeCounts {
        count_changes(
            c,
            &self.problem.layout,
            &self.problem.feasible,
            self.problem.n_sizes(),
            self.cost.k_wear,
        )
    }

    pub fn evaluate(&self, c: &Chromosome) -> Evaluation {
        let utility = self.total_utility(c);
        let counts = self.count_changes(c);
        let cost = cost(&counts, self.problem.n_cells_total(), &self.cost);
        Evaluation {
            utility,
            cost,
            score: utility - cost,
            counts,
        }
    }

    pub fn score(&self, c: &Chromosome) -> f64 {
        self.evaluate(c).score
    }

    /// Active `(slot, size index)` pairs of one phase, in slot order.
    pub fn active_tags(&self, c: &Chromosome, phase: usize) -> Vec<(usize, usize)> {
        let l = &self.problem.layout;
        (0..l.n_slots)
            .filter_map(|s| {
                let gi = l.index(phase, s);
                let g = c.genes[gi];
                (g != 0 && self.problem.feasible[gi]).then(|| (s, g as usize - 1))
            })
            .collect()
    }
}

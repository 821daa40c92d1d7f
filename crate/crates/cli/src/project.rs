//! Project files: a TOML description of the phases, camera and settings.

use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use tagplan_core::ga::GaParams;
use tagplan_core::scene::{Polygon, Roi, Scene, Vec2};
use tagplan_core::sensing::{forward_camera_rotation, CameraModel, NoiseModel};
use tagplan_core::spatial::{Mat3, Pose, Vec3};
use tagplan_core::validation::TrajectoryParams;
use tagplan_core::valuation::{CostParams, PhaseSpec, PlanningParams, Problem, ProblemError};

use crate::error::CliError;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectFile {
    #[serde(default)]
    pub name: Option<String>,
    /// Grid lattice anchor (m).
    #[serde(default)]
    pub origin: [f64; 2],
    #[serde(default)]
    pub camera: CameraSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub planning: PlanningParams,
    #[serde(default)]
    pub cost: CostParams,
    #[serde(default)]
    pub ga: GaParams,
    #[serde(default)]
    pub evaluation: Option<EvaluationSection>,
    pub phases: Vec<PhaseSection>,
}

/// Pinhole parameters in pixels; the mount is the vehicle-to-camera rotation
/// (row-major) and translation (m).
#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSection {
    pub fu: f64,
    pub fv: f64,
    pub cu: f64,
    pub cv: f64,
    pub width: f64,
    pub height: f64,
    pub dov: f64,
    pub sl_min: f64,
    pub near_z: f64,
    pub max_incidence_deg: Option<f64>,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Default for CameraSection {
    fn default() -> Self {
        let c = CameraModel::default();
        let r = forward_camera_rotation();
        CameraSection {
            fu: c.fu,
            fv: c.fv,
            cu: c.cu,
            cv: c.cv,
            width: c.width,
            height: c.height,
            dov: c.dov,
            sl_min: c.sl_min,
            near_z: c.near_z,
            max_incidence_deg: c.max_incidence_deg,
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [0.0; 3],
        }
    }
}

impl CameraSection {
    pub fn to_model(&self) -> CameraModel {
        let r = &self.rotation;
        CameraModel {
            fu: self.fu,
            fv: self.fv,
            cu: self.cu,
            cv: self.cv,
            width: self.width,
            height: self.height,
            dov: self.dov,
            t_cv: Pose::new(
                Mat3::new(
                    r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
                ),
                Vec3::from(self.translation),
            ),
            sl_min: self.sl_min,
            near_z: self.near_z,
            max_incidence_deg: self.max_incidence_deg,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub sigma_px: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            sigma_px: NoiseModel::default().sigma_px,
        }
    }
}

/// Straight test path used by `eval`.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub altitude: Option<f64>,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default = "default_spin_step")]
    pub spin_step_deg: f64,
    /// Phase whose scene the path is flown in.
    #[serde(default)]
    pub phase: usize,
}

fn default_spacing() -> f64 {
    TrajectoryParams::default().spacing
}

fn default_spin_step() -> f64 {
    TrajectoryParams::default().spin_step_deg
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSection {
    #[serde(default)]
    pub name: Option<String>,
    /// Flight altitudes (m); defaults to `planning.flight_altitudes`.
    #[serde(default)]
    pub altitudes: Option<Vec<f64>>,
    /// Tag installation heights (m); defaults to `planning.install_heights`.
    #[serde(default)]
    pub install_heights: Option<Vec<f64>>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSection>,
    #[serde(default)]
    pub rois: Vec<RoiSection>,
    #[serde(default)]
    pub no_fly: Vec<PolygonSection>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSection {
    pub vertices: Vec<[f64; 2]>,
    /// Edge `i` runs from vertex `i` to vertex `i + 1`; omitted means every edge.
    #[serde(default)]
    pub installable: Option<Vec<usize>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiSection {
    pub vertices: Vec<[f64; 2]>,
    #[serde(default = "default_importance")]
    pub importance: f64,
}

fn default_importance() -> f64 {
    1.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolygonSection {
    pub vertices: Vec<[f64; 2]>,
}

/// A parsed project together with the SHA-256 of its bytes.
#[derive(Clone, Debug)]
pub struct Project {
    pub file: ProjectFile,
    pub sha256: [u8; 32],
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Project {
    pub fn parse(text: &str) -> Result<Project, CliError> {
        let file: ProjectFile =
            toml::from_str(text).map_err(|e| CliError::Input(format!("project file: {e}")))?;
        if file.phases.is_empty() {
            return Err(CliError::Input("project file: `phases` must list at least one phase".into()));
        }
        Ok(Project {
            file,
            sha256: Sha256::digest(text.as_bytes()).into(),
        })
    }

    pub fn load(path: &Path) -> Result<Project, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read project {}: {e}", path.display())))?;
        Project::parse(&text).map_err(|e| match e {
            CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn hash_hex(&self) -> String {
        hex(&self.sha256)
    }

    pub fn phase_label(&self, phase: usize) -> String {
        match &self.file.phases.get(phase).and_then(|p| p.name.clone()) {
            Some(name) => format!("phase {phase} ({name})"),
            None => format!("phase {phase}"),
        }
    }

    pub fn scenes(&self) -> Result<Vec<PhaseSpec>, CliError> {
        let planning = &self.file.planning;
        self.file
            .phases
            .iter()
            .enumerate()
            .map(|(i, ph)| {
                let at = |what: &str| format!("phases[{i}].{what}");
                let mut obstacles = Vec::with_capacity(ph.obstacles.len());
                let mut installable = Vec::new();
                for (k, ob) in ph.obstacles.iter().enumerate() {
                    let n = ob.vertices.len();
                    let (poly, reversed) = polygon(&ob.vertices, &at(&format!("obstacles[{k}]")))?;
                    let edges: Vec<usize> = match &ob.installable {
                        None => (0..n).collect(),
                        Some(list) => list.clone(),
                    };
                    for e in edges {
                        if e >= n {
                            return Err(CliError::Input(format!(
                                "{}: edge {e} does not exist (polygon has {n} edges)",
                                at(&format!("obstacles[{k}].installable"))
                            )));
                        }
                        // reversing the ring maps edge i to edge n - 2 - i
                        let stored = if reversed { (2 * n - 2 - e) % n } else { e };
                        installable.push((k, stored));
                    }
                    obstacles.push(poly);
                }
                let rois = ph
                    .rois
                    .iter()
                    .enumerate()
                    .map(|(k, r)| {
                        Ok(Roi {
                            polygon: polygon(&r.vertices, &at(&format!("rois[{k}]")))?.0,
                            importance: r.importance,
                        })
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                let no_fly = ph
                    .no_fly
                    .iter()
                    .enumerate()
                    .map(|(k, p)| Ok(polygon(&p.vertices, &at(&format!("no_fly[{k}]")))?.0))
                    .collect::<Result<Vec<_>, CliError>>()?;
                let altitudes = ph.altitudes.clone().unwrap_or_else(|| planning.flight_altitudes.clone());
                let scene = Scene::new(i, altitudes, obstacles, rois, no_fly, installable)
                    .map_err(|e| CliError::Input(format!("phases[{i}]: {e}")))?;
                Ok(PhaseSpec {
                    scene,
                    install_heights: ph
                        .install_heights
                        .clone()
                        .unwrap_or_else(|| planning.install_heights.clone()),
                })
            })
            .collect()
    }

    /// Discretizes the project with optional planning overrides applied.
    pub fn problem(&self, planning: PlanningParams) -> Result<Problem, CliError> {
        let specs = self.scenes()?;
        let camera = self.file.camera.to_model();
        let noise = NoiseModel {
            sigma_px: self.file.noise.sigma_px,
        };
        let origin = Vec2::from(self.file.origin);
        Problem::build(origin, specs, camera, noise, planning).map_err(|e| match e {
            ProblemError::NoCells { phase } => CliError::Infeasible(format!(
                "{}: no navigable grid cells inside any ROI",
                self.phase_label(phase)
            )),
            ProblemError::NoOptions { phase } => CliError::Infeasible(format!(
                "{}: no feasible tag placement options (check installable surfaces and heights)",
                self.phase_label(phase)
            )),
            other => CliError::Input(format!("project file: {other}")),
        })
    }
}

fn polygon(vertices: &[[f64; 2]], at: &str) -> Result<(Polygon, bool), CliError> {
    let pts: Vec<Vec2> = vertices.iter().map(|v| Vec2::from(*v)).collect();
    for i in 0..pts.len() {
        if pts[i] == pts[(i + 1) % pts.len()] {
            return Err(CliError::Input(format!("{at}: vertex {i} is repeated")));
        }
    }
    Polygon::with_orientation(pts).map_err(|e| CliError::Input(format!("{at}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[[phases]]
[[phases.obstacles]]
vertices = [[3, 3], [4, 3], [4, 4], [3, 4]]
[[phases.rois]]
vertices = [[0, 0], [8, 0], [8, 8], [0, 8]]
"#;

    #[test]
    fn defaults_follow_reference_settings() {
        let p = Project::parse(MINIMAL).unwrap();
        let f = &p.file;
        assert_eq!(f.planning.cell_size, 0.5);
        assert_eq!(f.planning.delta_theta, 20.0);
        assert_eq!(f.planning.d_res, 0.3);
        assert_eq!(f.camera.dov, 8.0);
        assert_eq!(f.phases[0].rois.len(), 1);
        assert_eq!(
            Project::parse("[[phases]]\n[[phases.rois]]\nvertices = [[0,0],[1,0],[1,1]]\n")
                .unwrap()
                .file
                .phases[0]
                .rois[0]
                .importance,
            1.0
        );
        assert_eq!(f.ga.population, 50);
        assert_eq!(f.ga.max_iters, 5000);
        assert_eq!(f.ga.mutation, tagplan_core::ga::MutationKind::Flip);
        assert_eq!(f.ga.crossover, tagplan_core::ga::CrossoverKind::SinglePoint);
    }

    #[test]
    fn unknown_field_reports_location() {
        let err = Project::parse("[planning]\ncell_sise = 0.5\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("cell_sise"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn clockwise_edges_are_remapped() {
        let text = r#"
[[phases]]
[[phases.obstacles]]
vertices = [[3, 3], [3, 4], [4, 4], [4, 3]]
installable = [1]
[[phases.rois]]
vertices = [[0, 0], [8, 0], [8, 8], [0, 8]]
"#;
        let p = Project::parse(text).unwrap();
        let scenes = p.scenes().unwrap();
        let scene = &scenes[0].scene;
        let (a, b) = scene.obstacles[0].edge(scene.installable[0].1);
        // file edge 1 is the top side from (3,4) to (4,4)
        assert_eq!((a.y, b.y), (4.0, 4.0));
    }

    #[test]
    fn bad_geometry_names_the_field() {
        let text = r#"
[[phases]]
[[phases.obstacles]]
vertices = [[0, 0], [1, 1], [1, 0], [0, 1]]
"#;
        let msg = Project::parse(text).unwrap().scenes().unwrap_err().to_string();
        assert!(msg.contains("phases[0].obstacles[0]"), "{msg}");
    }

    #[test]
    fn missing_options_is_infeasible() {
        let text = r#"
[[phases]]
name = "shell"
[[phases.obstacles]]
vertices = [[3, 3], [4, 3], [4, 4], [3, 4]]
installable = []
[[phases.rois]]
vertices = [[0, 0], [8, 0], [8, 8], [0, 8]]
"#;
        let err = Project::parse(text)
            .unwrap()
            .problem(PlanningParams::default())
            .unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("phase 0 (shell)"));
    }
}

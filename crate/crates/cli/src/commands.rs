//! The `plan`, `render`, `validate` and `eval` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use sha2::{Digest, Sha256};

use tagplan_core::ga::{self, GaParams};
use tagplan_core::sensing::MetricKind;
use tagplan_core::validation::TrajectoryKind;
use tagplan_core::valuation::{CacheError, FimTable, PlanningParams, Problem, Valuation};

use crate::error::CliError;
use crate::plan::{self, PlanFile};
use crate::project::Project;
use crate::render;
use crate::suites;

#[derive(Clone, Debug, Default)]
pub struct PlanOptions {
    pub seed: Option<u64>,
    pub metric: Option<MetricKind>,
    pub no_cost: bool,
    pub max_iters: Option<usize>,
    pub cache: Option<PathBuf>,
}

/// Files written by `plan`, in write order.
pub fn plan_outputs(n_phases: usize) -> Vec<String> {
    let mut v = vec![
        "plan.json".to_string(),
        "history.csv".to_string(),
        "convergence.svg".to_string(),
    ];
    v.extend((0..n_phases).map(|k| format!("phase_{k}.svg")));
    v
}

/// Key of a cached table: the project bytes plus every setting the table
/// depends on.
fn cache_key(project: &Project, planning: &PlanningParams) -> [u8; 32] {
    let geometric = PlanningParams {
        metric: MetricKind::Trace,
        max_tags_per_phase: 0,
        normalize: true,
        ..planning.clone()
    };
    let mut h = Sha256::new();
    h.update(project.sha256);
    h.update(serde_json::to_vec(&geometric).expect("planning serializes"));
    h.finalize().into()
}

/// Builds the table, through the cache file when one is given.
pub fn load_table(project: &Project, problem: &Problem, cache: Option<&Path>) -> Result<FimTable, CliError> {
    let key = cache_key(project, &problem.params);
    if let Some(path) = cache {
        if path.exists() {
            match FimTable::load(problem, path, &key) {
                Ok(t) => {
                    info!("loaded FIM cache {}", path.display());
                    return Ok(t);
                }
                Err(CacheError::Stale) => warn!("FIM cache {} is stale, recomputing", path.display()),
                Err(e) => warn!("ignoring FIM cache {}: {e}", path.display()),
            }
        }
    }
    let table = FimTable::new(problem);
    table.precompute(problem);
    info!("computed {} tag FIMs", table.evaluations());
    if let Some(path) = cache {
        table
            .save(path, &key)
            .map_err(|e| CliError::Input(format!("cannot write FIM cache {}: {e}", path.display())))?;
    }
    Ok(table)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn heatmaps(
    project: &Project,
    problem: &Problem,
    table: &FimTable,
    cost: tagplan_core::valuation::CostParams,
    c: &tagplan_core::ga::Chromosome,
    dir: &Path,
) -> Result<(), CliError> {
    let mut normalized = problem.clone();
    normalized.params.normalize = true;
    let v = Valuation::new(&normalized, table, cost).map_err(|e| CliError::Input(format!("project file: {e}")))?;
    for k in 0..problem.phases.len() {
        let title = format!("{}: normalized utility", project.phase_label(k));
        write(dir, &format!("phase_{k}.svg"), &render::phase_svg(&v, c, k, &title))?;
    }
    Ok(())
}

pub fn run_plan(project_path: &Path, out: &Path, opts: &PlanOptions) -> Result<PlanFile, CliError> {
    let project = Project::load(project_path)?;
    let mut planning = project.file.planning.clone();
    if let Some(m) = opts.metric {
        planning.metric = m;
    }
    let mut cost = project.file.cost.clone();
    if opts.no_cost {
        cost.disabled = true;
    }
    let mut ga_params: GaParams = project.file.ga.clone();
    if let Some(seed) = opts.seed {
        ga_params.seed = seed;
    }
    if let Some(n) = opts.max_iters {
        ga_params.max_iters = n;
    }
    ga_params
        .validate()
        .map_err(|e| CliError::Input(format!("GA settings: {e}")))?;

    let problem = project.problem(planning)?;
    for w in &problem.warnings {
        warn!("{w}");
    }
    info!(
        "{} phases, {} slots, {} query poses",
        problem.phases.len(),
        problem.slots.len(),
        problem.poses.len()
    );
    let table = load_table(&project, &problem, opts.cache.as_deref())?;
    let v = Valuation::new(&problem, &table, cost.clone()).map_err(|e| CliError::Input(format!("project file: {e}")))?;
    let result = ga::run(&v, &ga_params).map_err(|e| CliError::Input(format!("GA settings: {e}")))?;
    let plan_file = plan::build_plan(&v, &result.best, &project.hash_hex(), ga_params.seed);

    fs::create_dir_all(out).map_err(|e| CliError::io(format!("creating {}", out.display()), e))?;
    write(out, "plan.json", &plan::to_json(&plan_file))?;
    write(out, "history.csv", &render::history_csv(&result.history))?;
    write(out, "convergence.svg", &render::convergence_svg(&result.history))?;
    heatmaps(&project, &problem, &table, cost, &result.best, out)?;
    Ok(plan_file)
}

/// Re-renders the heatmaps of a plan. The plan must come from this project.
pub fn run_render(plan_path: &Path, project_path: &Path, out: &Path, cache: Option<&Path>) -> Result<(), CliError> {
    let plan_file = plan::load(plan_path)?;
    let project = Project::load(project_path)?;
    if plan_file.input_sha256 != project.hash_hex() {
        return Err(CliError::Input(format!(
            "{} was planned from a different project file (sha256 {} vs {})",
            plan_path.display(),
            plan_file.input_sha256,
            project.hash_hex()
        )));
    }
    let planning = PlanningParams {
        metric: plan_file.metric,
        ..project.file.planning.clone()
    };
    let problem = project.problem(planning)?;
    let c = plan::chromosome_from_plan(&plan_file, &problem)?;
    let table = load_table(&project, &problem, cache)?;
    fs::create_dir_all(out).map_err(|e| CliError::io(format!("creating {}", out.display()), e))?;
    heatmaps(&project, &problem, &table, project.file.cost.clone(), &c, out)
}

pub const SUITES: [&str; 5] = ["jacobian", "crlb", "oracle", "rmse", "monotonicity"];

/// Runs one check, printing a summary line per result; fails if any result
/// misses its tolerance.
pub fn run_validate(suite: &str, seed: u64, instance: &str, seeds: usize) -> Result<(), CliError> {
    let failed = |m: String| Err(CliError::ValidationFailed(m));
    match suite {
        "jacobian" => {
            let s = suites::jacobian_suite(seed, 100);
            println!(
                "jacobian: {}/{} within {:e}, max relative error {:.3e}",
                s.within,
                s.cases,
                suites::JACOBIAN_TOL,
                s.max_rel_error
            );
            if s.within != s.cases {
                return failed("jacobian: analytic and numeric Jacobians disagree".into());
            }
        }
        "crlb" => {
            let r = suites::crlb_suite(seed, 2000, 1.0).map_err(|e| CliError::ValidationFailed(format!("crlb: {e}")))?;
            let (lo, hi) = suites::CRLB_RANGE;
            println!(
                "crlb: {} trials ({} failed), empirical trace {:.4e}, bound {:.4e}, ratio {:.4} (accepted {lo}..{hi})",
                r.trials, r.failures, r.empirical_trace, r.crlb_trace, r.ratio
            );
            if !(r.ratio >= lo && r.ratio <= hi) {
                return failed(format!("crlb: ratio {:.4} outside [{lo}, {hi}]", r.ratio));
            }
        }
        "oracle" => {
            if instance != "tiny" {
                return Err(CliError::Input(format!("unknown oracle instance '{instance}' (expected tiny)")));
            }
            let seed_list: Vec<u64> = (seed..seed + seeds as u64).collect();
            let rows = suites::oracle_suite(&seed_list, 500);
            let mut ok = 0;
            for r in &rows {
                println!(
                    "oracle: seed {} GA {:.6} oracle {:.6} gap {:.4}%",
                    r.seed,
                    r.ga_score,
                    r.oracle_score,
                    100.0 * r.gap
                );
                ok += usize::from(r.gap <= suites::ORACLE_GAP);
            }
            println!("oracle: {ok}/{} seeds within 1%", rows.len());
            if ok * 10 < rows.len() * 9 {
                return failed("oracle: GA gap above 1% in too many seeds".into());
            }
        }
        "rmse" => {
            let project = Project::parse(suites::ROOM_PROJECT)?;
            let problem = project.problem(project.file.planning.clone())?;
            let table = load_table(&project, &problem, None)?;
            let seed_list: Vec<u64> = (seed..seed + seeds as u64).collect();
            let configs = suites::localizability_configs(&project, &problem, &table, &seed_list)?;
            let rows = suites::rmse_table(&project, &problem, &configs, &seed_list, &TrajectoryKind::ALL)?;
            let mut bad = Vec::new();
            for (kind, cells) in &rows {
                let (t, r, a) = (cells[0].median_rmse, cells[1].median_rmse, cells[2].median_rmse);
                println!(
                    "rmse: {} planned {t:.4} random {r:.4} all-occupied {a:.4} (skipped {} / {} / {})",
                    kind.name(),
                    cells[0].skipped,
                    cells[1].skipped,
                    cells[2].skipped
                );
                if !(t <= r && a <= t && a <= r) {
                    bad.push(kind.name());
                }
            }
            if !bad.is_empty() {
                return failed(format!("rmse: ordering violated on {}", bad.join(", ")));
            }
        }
        "monotonicity" => {
            let m = suites::monotonicity_suite(seed, 1000, 200);
            println!(
                "monotonicity: {} violations in {} matrix pairs, {} in {} scene cases",
                m.psd_violations, m.psd_pairs, m.scene_violations, m.scene_cases
            );
            if m.psd_violations + m.scene_violations > 0 {
                return failed("monotonicity: utility decreased after adding information".into());
            }
        }
        other => {
            return Err(CliError::Input(format!(
                "unknown suite '{other}' (expected one of {})",
                SUITES.join(", ")
            )))
        }
    }
    Ok(())
}

/// Tab-separated RMSE comparison of two plans of the same project.
pub fn run_eval(
    project_path: &Path,
    plan_a: &Path,
    plan_b: &Path,
    kinds: &[TrajectoryKind],
    seeds: usize,
) -> Result<String, CliError> {
    let project = Project::load(project_path)?;
    let plans = [plan::load(plan_a)?, plan::load(plan_b)?];
    let mut configs = Vec::new();
    let mut problems = Vec::new();
    for (p, path) in plans.iter().zip([plan_a, plan_b]) {
        if p.input_sha256 != project.hash_hex() {
            return Err(CliError::Input(format!(
                "{} was planned from a different project file",
                path.display()
            )));
        }
        let planning = PlanningParams {
            metric: p.metric,
            ..project.file.planning.clone()
        };
        problems.push(project.problem(planning)?);
    }
    for (p, problem) in plans.iter().zip(&problems) {
        configs.push(plan::chromosome_from_plan(p, problem)?);
    }
    let seed_list: Vec<u64> = (0..seeds as u64).collect();
    let per_seed = vec![configs; seeds];
    let rows = suites::rmse_table(&project, &problems[0], &per_seed, &seed_list, kinds)?;
    let mut s = String::from("trajectory\trmse_a\trmse_b\tskipped_a\tskipped_b\tfailed_a\tfailed_b\n");
    for (kind, cells) in rows {
        s.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}\n",
            kind.name(),
            cells[0].median_rmse,
            cells[1].median_rmse,
            cells[0].skipped,
            cells[1].skipped,
            cells[0].failed,
            cells[1].failed
        ));
    }
    Ok(s)
}

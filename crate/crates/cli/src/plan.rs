//! Plan files: the chosen tag network of every phase as JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use tagplan_core::ga::Chromosome;
use tagplan_core::sensing::MetricKind;
use tagplan_core::valuation::{ChangeCounts, Problem, Valuation};

use crate::error::CliError;

pub const PLAN_FORMAT: &str = "tagplan-plan/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Keep,
    Place,
    Remove,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagEntry {
    /// Location id shared by every phase.
    pub location: usize,
    pub slot: usize,
    pub anchor: [f64; 2],
    pub normal: [f64; 2],
    pub height: f64,
    pub size: f64,
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePlan {
    pub phase: usize,
    pub utility: f64,
    pub active_tags: usize,
    pub entries: Vec<TagEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub format: String,
    pub tool_version: String,
    pub input_sha256: String,
    pub seed: u64,
    pub metric: MetricKind,
    pub cost_enabled: bool,
    pub utility: f64,
    pub cost: f64,
    pub score: f64,
    pub counts: ChangeCounts,
    pub phases: Vec<PhasePlan>,
}

/// Gene value at (phase, slot), zero where the slot is infeasible.
fn gene(problem: &Problem, c: &Chromosome, phase: usize, slot: usize) -> u8 {
    let gi = problem.layout.index(phase, slot);
    if problem.feasible[gi] {
        c.genes[gi]
    } else {
        0
    }
}

/// Per-phase entries: kept and placed tags, plus removals of tags present in
/// the previous phase at locations that are still feasible.
pub fn phase_entries(problem: &Problem, c: &Chromosome, phase: usize) -> Vec<TagEntry> {
    let sizes = &problem.params.tag_sizes;
    let mut out = Vec::new();
    for slot in &problem.slots {
        let now = gene(problem, c, phase, slot.id);
        let prev = if phase == 0 {
            0
        } else {
            gene(problem, c, phase - 1, slot.id)
        };
        let entry = |g: u8, action| TagEntry {
            location: slot.option,
            slot: slot.id,
            anchor: [slot.anchor.x, slot.anchor.y],
            normal: [slot.normal.x, slot.normal.y],
            height: slot.height,
            size: sizes[g as usize - 1],
            action,
        };
        let feasible_now = problem.feasible[problem.layout.index(phase, slot.id)];
        if prev != 0 && prev != now && feasible_now {
            out.push(entry(prev, Action::Remove));
        }
        if now != 0 {
            out.push(entry(now, if now == prev { Action::Keep } else { Action::Place }));
        }
    }
    out
}

pub fn build_plan(
    valuation: &Valuation<'_>,
    c: &Chromosome,
    input_sha256: &str,
    seed: u64,
) -> PlanFile {
    let problem = valuation.problem;
    let eval = valuation.evaluate(c);
    let phases = (0..problem.phases.len())
        .map(|p| {
            let entries = phase_entries(problem, c, p);
            PhasePlan {
                phase: p,
                utility: valuation.phase_utility(c, p),
                active_tags: entries.iter().filter(|e| e.action != Action::Remove).count(),
                entries,
            }
        })
        .collect();
    PlanFile {
        format: PLAN_FORMAT.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        input_sha256: input_sha256.to_string(),
        seed,
        metric: problem.params.metric,
        cost_enabled: !valuation.cost.disabled,
        utility: eval.utility,
        cost: eval.cost,
        score: eval.score,
        counts: eval.counts,
        phases,
    }
}

/// Rebuilds the chromosome of a plan, checking it against the problem.
pub fn chromosome_from_plan(plan: &PlanFile, problem: &Problem) -> Result<Chromosome, CliError> {
    let bad = |m: String| Err(CliError::Input(format!("plan does not match the project: {m}")));
    if plan.phases.len() != problem.phases.len() {
        return bad(format!(
            "{} phases in the plan, {} in the project",
            plan.phases.len(),
            problem.phases.len()
        ));
    }
    let mut c = Chromosome::zeros(problem.layout.len());
    for ph in &plan.phases {
        if ph.phase >= problem.phases.len() {
            return bad(format!("unknown phase {}", ph.phase));
        }
        for e in ph.entries.iter().filter(|e| e.action != Action::Remove) {
            if e.slot >= problem.slots.len() {
                return bad(format!("unknown slot {}", e.slot));
            }
            let gi = problem.layout.index(ph.phase, e.slot);
            if !problem.feasible[gi] {
                return bad(format!("slot {} is not available in phase {}", e.slot, ph.phase));
            }
            let Some(k) = problem.params.tag_sizes.iter().position(|s| *s == e.size) else {
                return bad(format!("tag size {} is not configured", e.size));
            };
            c.genes[gi] = (k + 1) as u8;
        }
    }
    for ph in &plan.phases {
        if phase_entries(problem, &c, ph.phase) != ph.entries {
            return bad(format!("entries of phase {} are inconsistent", ph.phase));
        }
    }
    Ok(c)
}

pub fn to_json(plan: &PlanFile) -> String {
    let mut s = serde_json::to_string_pretty(plan).expect("plan serializes");
    s.push('\n');
    s
}

pub fn load(path: &Path) -> Result<PlanFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read plan {}: {e}", path.display())))?;
    let plan: PlanFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if plan.format != PLAN_FORMAT {
        return Err(CliError::Input(format!(
            "{}: unsupported plan format '{}'",
            path.display(),
            plan.format
        )));
    }
    Ok(plan)
}

//! Pipeline building blocks shared by the command line and the end-to-end tests:
//! demos, policy and leader training, seeded attack suites and their summaries.

use rayon::prelude::*;

use crate::attack::{run_attack, train_leader, AttackLeader, AttackRun, AttackSetup, Scheduler};
use crate::config::RunConfig;
use crate::dataset::{gen_tibbers, TibbersDataset};
use crate::error::{Error, Result};
use crate::metrics::{
    action_consistency, action_deviation, asr, dataset_stats, tsrc, DatasetStats, ReportRow,
};
use crate::policy::{train_bc, NormKind, Policy};
use crate::safety::{judge_episode, EpisodeVerdict};
use crate::scene::{
    collect_demo, make_scenario, run_episode, Archetype, ScenarioSpec, SceneState, Trajectory,
};
use crate::types::{ActionDelta, AttackType};

/// Expert demonstrations of one archetype, seeds `demo_seed..demo_seed+n_demos`.
pub fn demos(cfg: &RunConfig, arch: Archetype) -> Result<Vec<Trajectory>> {
    let d = &cfg.data;
    (0..d.n_demos)
        .into_par_iter()
        .map(|i| {
            let (spec, init) = make_scenario(arch, d.demo_seed + i, &cfg.sim)?;
            Ok(collect_demo(
                &spec,
                init,
                &cfg.sim,
                &cfg.expert,
                d.demo_noise,
                d.demo_seed + i,
            ))
        })
        .collect()
}

/// Behavior-cloned policy. `seed` and `hidden` override the config when given.
pub fn policy(
    cfg: &RunConfig,
    demos: &[Trajectory],
    kind: NormKind,
    seed: Option<u64>,
    hidden: Option<Vec<usize>>,
) -> Result<Policy> {
    let mut bc = cfg.bc.clone();
    if let Some(s) = seed {
        bc.seed = s;
    }
    if let Some(h) = hidden {
        bc.hidden = h;
    }
    Ok(train_bc(demos, kind, &bc, cfg.sim.max_step)?.0)
}

/// Test scenarios of one archetype, seeds `eval_seed..eval_seed+n_eval`.
pub fn eval_scenarios(cfg: &RunConfig, arch: Archetype) -> Result<Vec<(ScenarioSpec, SceneState)>> {
    (0..cfg.data.n_eval)
        .map(|i| make_scenario(arch, cfg.data.eval_seed + i, &cfg.sim))
        .collect()
}

/// Clean success rate on the test scenarios.
pub fn clean_success(
    cfg: &RunConfig,
    p: &Policy,
    scenarios: &[(ScenarioSpec, SceneState)],
) -> Result<f64> {
    let ok: Vec<bool> = scenarios
        .par_iter()
        .map(|(spec, init)| {
            Ok(run_episode(p, spec, init.clone(), cfg.sim.max_steps, None, &cfg.sim)?.success)
        })
        .collect::<Result<_>>()?;
    Ok(ok.iter().filter(|b| **b).count() as f64 / ok.len().max(1) as f64)
}

/// Rejects policies under the clean-success gate.
pub fn gate_policy(
    cfg: &RunConfig,
    p: &Policy,
    scenarios: &[(ScenarioSpec, SceneState)],
) -> Result<f64> {
    let rate = clean_success(cfg, p, scenarios)?;
    if rate < cfg.min_clean_success {
        return Err(Error::Numerical(format!(
            "policy for {} succeeds on {:.2} of clean episodes, gate is {:.2}",
            p.trained_on, rate, cfg.min_clean_success
        )));
    }
    Ok(rate)
}

/// Adversarial dataset for the archetype's own violation level.
pub fn tibbers(cfg: &RunConfig, arch: Archetype) -> Result<TibbersDataset> {
    gen_tibbers(
        arch,
        arch.level(),
        cfg.data.n_tibbers,
        cfg.data.tibbers_seed,
        &cfg.sim,
        &cfg.expert,
        &cfg.safety,
        &cfg.tibbers,
    )
}

pub fn leader(cfg: &RunConfig, ds: &TibbersDataset) -> Result<AttackLeader> {
    Ok(train_leader(&ds.samples, &cfg.leader, cfg.sim.max_step)?.0)
}

/// Adaptive scheduler with its threshold taken from the leader's training labels.
pub fn adaptive_for(cfg: &RunConfig, leader: &AttackLeader) -> Scheduler {
    cfg.attack
        .adaptive(leader.scale_quantile(cfg.attack.adaptive_quantile))
}

/// Action statistics of the demonstration labels.
pub fn action_stats(cfg: &RunConfig, demos: &[Trajectory]) -> Result<DatasetStats> {
    let acts: Vec<ActionDelta> = demos.iter().flat_map(|d| d.reference_actions()).collect();
    dataset_stats(&acts, cfg.stats_ridge)
}

/// Per-episode attack seed.
pub fn attack_seed(base: u64, arch: Archetype, episode: usize) -> u64 {
    base.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ ((arch.index() as u64) << 40) ^ episode as u64
}

/// One attack run per scenario, in parallel.
pub fn attack_suite(
    cfg: &RunConfig,
    setup: &AttackSetup,
    scenarios: &[(ScenarioSpec, SceneState)],
) -> Result<Vec<AttackRun>> {
    scenarios
        .par_iter()
        .enumerate()
        .map(|(i, (spec, init))| {
            run_attack(
                setup,
                spec,
                init,
                &cfg.sim,
                attack_seed(cfg.attack.seed, spec.archetype, i),
            )
        })
        .collect()
}

pub fn verdict(cfg: &RunConfig, t: &Trajectory) -> Result<EpisodeVerdict> {
    judge_episode(
        &t.states(),
        &t.scenario,
        &cfg.safety,
        cfg.sim.ee_contact_radius,
    )
}

/// Aggregate results of an attack suite on one archetype.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSummary {
    pub level: AttackType,
    pub n: usize,
    /// Attacked episodes with an event of the target level.
    pub asr: f64,
    /// Clean episodes with an event of the target level.
    pub clean_rate: f64,
    /// Clean episodes with any event.
    pub clean_any_rate: f64,
    pub clean_success: f64,
    pub attacked_success: f64,
    pub ac: f64,
    pub ad: f64,
    pub attack_freq: f64,
    /// Per-episode hit flags of the attacked runs.
    pub hits: Vec<bool>,
    pub clean_hits: Vec<bool>,
}

impl SuiteSummary {
    pub fn tsrc(&self) -> Option<f64> {
        tsrc(self.clean_success, self.attacked_success)
    }

    pub fn row(&self, task: &str, model: &str, scheduler: &str) -> ReportRow {
        ReportRow {
            level: self.level,
            task: task.to_string(),
            model: model.to_string(),
            scheduler: scheduler.to_string(),
            asr: self.asr,
            ac: self.ac,
            ad: self.ad,
            tsrc: self.tsrc(),
            attack_freq: self.attack_freq,
            n: self.n,
        }
    }
}

/// `(applied action, clean reference)` pairs of every frame of the attacked
/// runs. Frames left alone pair an action with itself.
pub fn attacked_pairs(runs: &[AttackRun]) -> (Vec<ActionDelta>, Vec<ActionDelta>) {
    runs.iter()
        .flat_map(|r| r.attacked.frames.iter())
        .map(|f| (f.action, f.reference))
        .unzip()
}

pub fn summarize(
    cfg: &RunConfig,
    runs: &[AttackRun],
    stats: &DatasetStats,
) -> Result<SuiteSummary> {
    let first = runs.first().ok_or(Error::EmptyInput("attack runs"))?;
    let level = first.clean.scenario.archetype.level();
    let mut attacked_v = Vec::with_capacity(runs.len());
    let mut clean_v = Vec::with_capacity(runs.len());
    for r in runs {
        attacked_v.push(verdict(cfg, &r.attacked)?);
        clean_v.push(verdict(cfg, &r.clean)?);
    }
    let n = runs.len();
    let frac =
        |f: &dyn Fn(&AttackRun) -> bool| runs.iter().filter(|r| f(r)).count() as f64 / n as f64;
    let ac_vals: Vec<f64> = runs
        .iter()
        .filter(|r| r.attacked.len() >= 2)
        .map(|r| action_consistency(&r.attacked.actions()))
        .collect::<Result<_>>()?;
    let (alpha, beta) = attacked_pairs(runs);
    let ad = if alpha.is_empty() {
        0.0
    } else {
        action_deviation(&alpha, &beta, stats)?.ad
    };
    Ok(SuiteSummary {
        level,
        n,
        asr: asr(&attacked_v, level)?,
        clean_rate: asr(&clean_v, level)?,
        clean_any_rate: clean_v.iter().filter(|v| v.violated).count() as f64 / n as f64,
        clean_success: frac(&|r| r.clean.success),
        attacked_success: frac(&|r| r.attacked.success),
        ac: ac_vals.iter().sum::<f64>() / ac_vals.len().max(1) as f64,
        ad,
        attack_freq: runs.iter().map(|r| r.attack_frequency).sum::<f64>() / n as f64,
        hits: attacked_v.iter().map(|v| v.has_level(level)).collect(),
        clean_hits: clean_v.iter().map(|v| v.has_level(level)).collect(),
    })
}

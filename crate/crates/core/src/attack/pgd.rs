use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::scene::Observation;
use crate::types::{clamp_action, ActionDelta, GRIPPER_CLOSED_AT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PgdConfig {
    /// ℓ∞ pixel budget.
    pub epsilon: f64,
    /// Sign-step size.
    pub alpha: f64,
    pub n_iters: usize,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.06,
            alpha: 0.015,
            n_iters: 10,
        }
    }
}

impl PgdConfig {
    pub fn validate(&self) -> Result<()> {
        let eps_ok = self.epsilon.is_finite() && self.epsilon >= 0.0;
        // a zero budget admits a zero step
        let alpha_ok = self.alpha >= 0.0
            && self.alpha <= self.epsilon
            && (self.alpha > 0.0 || self.epsilon == 0.0);
        if !eps_ok || !alpha_ok || self.n_iters == 0 {
            return Err(Error::InvalidArgument(format!(
                "pgd needs 0 < alpha <= epsilon and n_iters >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PgdOutcome {
    /// Best iterate found.
    pub obs: Observation,
    /// Action-space loss `‖infer(O + δ_k) − target‖²` for k = 0..=n_iters.
    pub loss_trace: Vec<f64>,
    pub best_iter: usize,
}

impl PgdOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.loss_trace[0]
    }

    pub fn best_loss(&self) -> f64 {
        self.loss_trace[self.best_iter]
    }

    /// Running minimum of the loss trace.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.loss_trace
            .iter()
            .scan(f64::INFINITY, |m, &l| {
                *m = m.min(l);
                Some(*m)
            })
            .collect()
    }
}

/// Sign with `sign(0) = 0`; `f64::signum` maps zero to ±1.
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-dimension weights of the attack loss. Displacements are measured in
/// units of `max_step` and the gripper in units of its distance to the
/// open/close threshold, so no dimension dominates the sign step.
pub fn loss_weights(max_step: f64) -> [f64; 4] {
    let w = 1.0 / (max_step * max_step);
    let g = 1.0 / (GRIPPER_CLOSED_AT * GRIPPER_CLOSED_AT);
    [w, w, w, g]
}

/// Weighted squared distance between two actions.
pub fn action_loss(a: &ActionDelta, target: &ActionDelta, max_step: f64) -> f64 {
    let (x, y, w) = (a.to_array(), target.to_array(), loss_weights(max_step));
    (0..4).map(|i| w[i] * (x[i] - y[i]).powi(2)).sum()
}

/// Targeted ℓ∞ PGD on both camera views.
///
/// The step direction is the sign of the gradient of `‖clamp(raw) − target‖²`
/// with the clamp treated as the identity, so a saturated dimension that is
/// off target still pulls while one already on target does not. The best
/// iterate is returned.
pub fn pgd_perturb(
    policy: &Policy,
    obs: &Observation,
    target: &ActionDelta,
    cfg: &PgdConfig,
) -> Result<PgdOutcome> {
    cfg.validate()?;
    if !target.is_finite() {
        return Err(Error::Numerical("pgd target is not finite".into()));
    }
    let clean: Vec<f64> = obs.pixels().collect();
    let mut px = clean.clone();
    let mut cur = obs.clone();
    let mut trace = Vec::with_capacity(cfg.n_iters + 1);
    let mut best = (f64::INFINITY, 0usize, cur.clone());
    let t = target.to_array();

    for k in 0..=cfg.n_iters {
        let raw = policy.raw_action(&cur)?;
        let loss = action_loss(&clamp_action(raw, policy.max_step), target, policy.max_step);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "pgd loss is not finite at iteration {k}"
            )));
        }
        trace.push(loss);
        if loss < best.0 {
            best = (loss, k, cur.clone());
        }
        if k == cfg.n_iters || loss == 0.0 {
            break;
        }
        let r = clamp_action(raw, policy.max_step).to_array();
        let w = loss_weights(policy.max_step);
        let up: [f64; 4] = std::array::from_fn(|i| 2.0 * w[i] * (r[i] - t[i]));
        let (_, g) = policy.pixel_gradient(&cur, up)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite pixel gradient at iteration {k}"
            )));
        }
        for ((p, c), gi) in px.iter_mut().zip(&clean).zip(&g) {
            let delta = (*p - cfg.alpha * sign(*gi) - c).clamp(-cfg.epsilon, cfg.epsilon);
            *p = (c + delta).clamp(0.0, 1.0);
        }
        cur.set_pixels(&px);
    }
    // an exact hit stops early; pad so the trace always has n_iters + 1 entries
    while trace.len() < cfg.n_iters + 1 {
        trace.push(*trace.last().unwrap());
    }
    Ok(PgdOutcome {
        obs: best.2,
        loss_trace: trace,
        best_iter: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{train_bc, BcConfig, NormKind};
    use crate::scene::{collect_demo, make_scenario, Archetype, ExpertConfig, SimConfig};
    use crate::types::Vec3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Policy, Vec<Observation>) {
        let sim = SimConfig {
            image_size: 8,
            max_steps: 40,
            ..SimConfig::default()
        };
        let ex = ExpertConfig::default();
        let demos: Vec<_> = (0..3)
            .map(|s| {
                let (spec, init) = make_scenario(Archetype::PlaceCupOnPlate, s, &sim).unwrap();
                collect_demo(&spec, init, &sim, &ex, 0.004, s)
            })
            .collect();
        let cfg = BcConfig {
            hidden: vec![12],
            epochs: 8,
            seed: 5,
            ..BcConfig::default()
        };
        let (p, _) = train_bc(&demos, NormKind::MinMax, &cfg, sim.max_step).unwrap();
        let obs = demos
            .iter()
            .flat_map(|d| d.frames.iter().map(|f| f.obs.clone()))
            .collect();
        (p, obs)
    }

    fn random_target(rng: &mut ChaCha8Rng, ms: f64) -> ActionDelta {
        let v = Vec3::new(
            rng.gen_range(-ms..ms),
            rng.gen_range(-ms..ms),
            rng.gen_range(-ms..ms),
        );
        ActionDelta::new(v, if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-0.0), 0.0);
        assert_eq!(sign(2.0), 1.0);
        assert_eq!(sign(-1e-300), -1.0);
    }

    #[test]
    fn config_validation() {
        assert!(PgdConfig::default().validate().is_ok());
        let bad = [
            (0.06, 0.1, 10),
            (0.06, 0.0, 10),
            (0.06, 0.01, 0),
            (-0.1, 0.0, 3),
        ];
        for (epsilon, alpha, n_iters) in bad {
            assert!(PgdConfig {
                epsilon,
                alpha,
                n_iters
            }
            .validate()
            .is_err());
        }
        assert!(PgdConfig {
            epsilon: 0.0,
            alpha: 0.0,
            n_iters: 1
        }
        .validate()
        .is_ok());
    }

    #[test]
    fn fixed_point_target() {
        let (p, obs) = setup();
        let o = &obs[3];
        let target = p.infer(o).unwrap();
        let out = pgd_perturb(&p, o, &target, &PgdConfig::default()).unwrap();
        assert_eq!(out.initial_loss(), 0.0);
        assert_eq!(out.obs, *o);
        assert_eq!(out.loss_trace.len(), 11);
    }

    #[test]
    fn empty_budget_leaves_obs_unchanged() {
        let (p, obs) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = PgdConfig {
            epsilon: 0.0,
            alpha: 0.0,
            n_iters: 5,
        };
        for o in obs.iter().step_by(7) {
            let out = pgd_perturb(&p, o, &random_target(&mut rng, 0.05), &cfg).unwrap();
            assert_eq!(out.obs, *o);
        }
    }

    #[test]
    fn budget_range_and_best_so_far() {
        let (p, obs) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = PgdConfig::default();
        let mut improved = 0;
        let trials = 40;
        for k in 0..trials {
            let o = &obs[(k * 5) % obs.len()];
            let out = pgd_perturb(&p, o, &random_target(&mut rng, 0.05), &cfg).unwrap();
            assert!(out.obs.linf_distance(o) <= cfg.epsilon + 1e-12);
            assert!(out.obs.pixels_in_unit_range());
            assert_eq!((out.obs.proprio, out.obs.task_id), (o.proprio, o.task_id));
            let bsf = out.best_so_far();
            assert!(bsf.windows(2).all(|w| w[1] <= w[0]));
            assert_eq!(out.best_loss(), out.loss_trace[out.best_iter]);
            if out.best_loss() < out.initial_loss() {
                improved += 1;
            }
        }
        assert!(improved >= trials * 9 / 10, "improved {improved}/{trials}");
    }

    #[test]
    fn loss_weights_balance_units() {
        let ms = 0.05;
        let a = ActionDelta::new(Vec3::ZERO, 1.0);
        let dp_full = ActionDelta::new(Vec3::new(ms, 0.0, 0.0), 1.0);
        let grip_half = ActionDelta::new(Vec3::ZERO, 0.5);
        assert!((action_loss(&a, &dp_full, ms) - 1.0).abs() < 1e-12);
        assert!((action_loss(&a, &grip_half, ms) - 1.0).abs() < 1e-12);
    }
}

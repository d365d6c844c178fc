//! Behavior-cloned pixel-to-action policies.
//!
//! A policy is an MLP over both camera views, scaled proprioception and a
//! one-hot task id. It predicts the action in normalized units; the choice of
//! normalization scheme changes how much a given output wobble moves the arm.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{self, Activation, Gradients, MlpSpec, Params};
use crate::scene::{Archetype, Observation, PolicyFn, SceneState, Trajectory, PROPRIO_DIM};
use crate::types::{clamp_action, ActionDelta};

pub const ACTION_DIM: usize = 4;

/// Proprio feature scaling: positions, velocities, gripper flag.
const POS_SCALE: f64 = 5.0;
const VEL_SCALE: f64 = 20.0;
/// Subtracted from every pixel so the background is close to zero.
const PIXEL_OFFSET: f64 = 0.15;

const MINMAX_WIDEN: f64 = 1e-6;
const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    MinMax,
    MeanStd,
}

impl NormKind {
    pub fn name(self) -> &'static str {
        match self {
            NormKind::MinMax => "min-max",
            NormKind::MeanStd => "mean-std",
        }
    }
}

impl std::fmt::Display for NormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for NormKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min-max" | "minmax" => Ok(NormKind::MinMax),
            "mean-std" | "meanstd" => Ok(NormKind::MeanStd),
            _ => Err(Error::InvalidArgument(format!(
                "unknown normalization `{s}`"
            ))),
        }
    }
}

/// Fitted per-dimension action statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NormScheme {
    MinMax { min: [f64; 4], max: [f64; 4] },
    MeanStd { mean: [f64; 4], std: [f64; 4] },
}

impl NormScheme {
    pub fn kind(&self) -> NormKind {
        match self {
            NormScheme::MinMax { .. } => NormKind::MinMax,
            NormScheme::MeanStd { .. } => NormKind::MeanStd,
        }
    }

    /// `(offset, scale)` with `action = offset + scale · y`.
    pub fn affine(&self) -> ([f64; 4], [f64; 4]) {
        match self {
            NormScheme::MinMax { min, max } => (*min, std::array::from_fn(|i| max[i] - min[i])),
            NormScheme::MeanStd { mean, std } => (*mean, *std),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (off, scale) = self.affine();
        if off.iter().chain(&scale).any(|v| !v.is_finite()) || scale.iter().any(|s| *s <= 0.0) {
            return Err(Error::Numerical(format!(
                "degenerate normalization {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn fit_norm(actions: &[ActionDelta], kind: NormKind) -> Result<NormScheme> {
    if actions.len() < 2 {
        return Err(Error::EmptyInput(
            "normalization needs at least two actions",
        ));
    }
    let rows: Vec<[f64; 4]> = actions.iter().map(|a| a.to_array()).collect();
    let scheme = match kind {
        NormKind::MinMax => {
            let mut min = [f64::INFINITY; 4];
            let mut max = [f64::NEG_INFINITY; 4];
            for r in &rows {
                for i in 0..4 {
                    min[i] = min[i].min(r[i]);
                    max[i] = max[i].max(r[i]);
                }
            }
            for i in 0..4 {
                if max[i] - min[i] < MINMAX_WIDEN {
                    min[i] -= MINMAX_WIDEN;
                    max[i] += MINMAX_WIDEN;
                }
            }
            NormScheme::MinMax { min, max }
        }
        NormKind::MeanStd => {
            let n = rows.len() as f64;
            let mean: [f64; 4] =
                std::array::from_fn(|i| rows.iter().map(|r| r[i]).sum::<f64>() / n);
            let std = std::array::from_fn(|i| {
                let var = rows.iter().map(|r| (r[i] - mean[i]).powi(2)).sum::<f64>() / n;
                var.sqrt().max(STD_FLOOR)
            });
            NormScheme::MeanStd { mean, std }
        }
    };
    scheme.validate()?;
    Ok(scheme)
}

pub fn normalize(a: &ActionDelta, norm: &NormScheme) -> [f64; 4] {
    let (off, scale) = norm.affine();
    let v = a.to_array();
    std::array::from_fn(|i| (v[i] - off[i]) / scale[i])
}

/// Inverse of [`normalize`]; not clamped.
pub fn denormalize(y: &[f64], norm: &NormScheme) -> Result<ActionDelta> {
    if y.len() != ACTION_DIM {
        return Err(Error::shape(ACTION_DIM, y.len()));
    }
    let (off, scale) = norm.affine();
    Ok(ActionDelta::from_array(std::array::from_fn(|i| {
        off[i] + scale[i] * y[i]
    })))
}

/// Input width for a given raster size.
pub fn feature_width(image_size: usize) -> usize {
    2 * image_size * image_size * 3 + PROPRIO_DIM + Archetype::COUNT
}

/// Flat policy input. The first `obs.pixel_count()` entries are the raw pixels
/// (ego then third), so pixel gradients are a prefix of the input gradient.
pub fn features(obs: &Observation) -> Vec<f64> {
    let mut f = Vec::with_capacity(feature_width(obs.size));
    f.extend(obs.pixels().map(|v| v - PIXEL_OFFSET));
    let p = &obs.proprio;
    f.extend(p[0..3].iter().map(|v| v * POS_SCALE));
    f.extend(p[3..6].iter().map(|v| v * VEL_SCALE));
    f.push(p[6]);
    f.extend((0..Archetype::COUNT).map(|i| if i == obs.task_id { 1.0 } else { 0.0 }));
    f
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub net: Params,
    pub norm: NormScheme,
    pub max_step: f64,
    pub image_size: usize,
    /// Hex digest of the training set.
    pub trained_on: String,
}

impl Policy {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.norm.validate()?;
        if self.net.spec.input_width() != feature_width(self.image_size) {
            return Err(Error::shape(
                feature_width(self.image_size),
                self.net.spec.input_width(),
            ));
        }
        if self.net.spec.output_width() != ACTION_DIM {
            return Err(Error::shape(ACTION_DIM, self.net.spec.output_width()));
        }
        Ok(())
    }

    fn check_obs(&self, obs: &Observation) -> Result<()> {
        let n = self.image_size * self.image_size * 3;
        if obs.size != self.image_size || obs.view_ego.len() != n || obs.view_third.len() != n {
            return Err(Error::shape(
                format!("{0}x{0} views", self.image_size),
                format!(
                    "{0}x{0} ({1} + {2} values)",
                    obs.size,
                    obs.view_ego.len(),
                    obs.view_third.len()
                ),
            ));
        }
        Ok(())
    }

    /// Denormalized, unclamped network output.
    pub fn raw_action(&self, obs: &Observation) -> Result<ActionDelta> {
        self.check_obs(obs)?;
        let x = features(obs);
        let xv = ArrayView2::from_shape((1, x.len()), &x).expect("row");
        let y = nn::forward_batch(&self.net, xv)?;
        denormalize(y.as_slice().expect("contiguous"), &self.norm)
    }

    pub fn infer(&self, obs: &Observation) -> Result<ActionDelta> {
        Ok(clamp_action(self.raw_action(obs)?, self.max_step))
    }

    /// Gradient of `⟨upstream, raw_action(obs)⟩` with respect to the pixels,
    /// along with the raw action itself.
    pub fn pixel_gradient(
        &self,
        obs: &Observation,
        upstream: [f64; 4],
    ) -> Result<(ActionDelta, Vec<f64>)> {
        self.check_obs(obs)?;
        let x = features(obs);
        let xv = ArrayView2::from_shape((1, x.len()), &x).expect("row");
        let cache = nn::forward_cached(&self.net, xv)?;
        let y = cache.output().as_slice().expect("contiguous").to_vec();
        let action = denormalize(&y, &self.norm)?;
        let (_, scale) = self.norm.affine();
        let up: Vec<f64> = (0..4).map(|i| upstream[i] * scale[i]).collect();
        let upv = ArrayView2::from_shape((1, 4), &up).expect("row");
        let (_, gx) = nn::backward_cached(&self.net, &cache, upv)?;
        let mut g = gx.into_raw_vec_and_offset().0;
        g.truncate(obs.pixel_count());
        Ok((action, g))
    }
}

impl PolicyFn for Policy {
    fn act(&self, obs: &Observation, _state: &SceneState) -> Result<ActionDelta> {
        self.infer(obs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Learning rate is multiplied by this factor after every epoch.
    pub lr_decay: f64,
    /// L2 penalty on the weights (biases are not penalized).
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            activation: Activation::Tanh,
            epochs: 40,
            batch_size: 32,
            lr: 0.02,
            momentum: 0.9,
            lr_decay: 0.95,
            weight_decay: 1e-3,
            seed: 0,
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "hidden widths, epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.lr > 0.0)
            || !(0.0..1.0).contains(&self.momentum)
            || !(self.lr_decay > 0.0)
            || !(self.weight_decay >= 0.0)
        {
            return Err(Error::Config(
                "lr > 0, momentum in [0,1), lr_decay > 0, weight_decay >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Supervised data set: feature rows and target rows.
pub struct BcData {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

/// Stacks observations and their labels into matrices.
pub fn stack_rows(obs: &[&Observation], labels: &[[f64; 4]]) -> Result<BcData> {
    let first = obs.first().ok_or(Error::EmptyInput("training set"))?;
    let w = feature_width(first.size);
    let mut x = Array2::zeros((obs.len(), w));
    for (mut row, o) in x.rows_mut().into_iter().zip(obs) {
        let f = features(o);
        if f.len() != w {
            return Err(Error::shape(w, f.len()));
        }
        row.assign(&ndarray::ArrayView1::from(&f));
    }
    let y = Array2::from_shape_fn((labels.len(), 4), |(i, j)| labels[i][j]);
    Ok(BcData { x, y })
}

/// Digest of the demo set: scenario seeds, archetypes and labels.
pub fn fingerprint(demos: &[Trajectory]) -> String {
    let mut h = Sha256::new();
    for d in demos {
        h.update(d.scenario.archetype.name().as_bytes());
        h.update(d.scenario.seed.to_le_bytes());
        for f in &d.frames {
            for v in f.reference.to_array() {
                h.update(v.to_le_bytes());
            }
        }
    }
    hex::encode(h.finalize())
}

/// Mean-squared-error regression of `data.y` from `data.x` with momentum SGD.
/// Returns the trained parameters and the mean loss of every epoch.
pub fn fit_regression(init: Params, data: &BcData, cfg: &BcConfig) -> Result<(Params, Vec<f64>)> {
    let n = data.x.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("training set"));
    }
    let mut p = init;
    let mut vel = Gradients::zeros_like(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_bc);
    let mut order: Vec<usize> = (0..n).collect();
    let mut lr = cfg.lr;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let out_w = data.y.ncols();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = data.x.select(ndarray::Axis(0), chunk);
            let yb = data.y.select(ndarray::Axis(0), chunk);
            let cache = nn::forward_cached(&p, xb.view())?;
            let diff = cache.output() - &yb;
            total += diff.mapv(|v| v * v).sum();
            let up = diff * (2.0 / (chunk.len() * out_w) as f64);
            let mut g = nn::param_gradients(&p, &cache, up.view())?;
            if cfg.weight_decay > 0.0 {
                for (gw, w) in g.weights.iter_mut().zip(&p.weights) {
                    gw.scaled_add(cfg.weight_decay, w);
                }
            }
            p = nn::sgd_step(&p, &g, &mut vel, lr, cfg.momentum)?;
        }
        let loss = total / (n * out_w) as f64;
        if !loss.is_finite() || !p.is_finite() {
            return Err(Error::Numerical(format!(
                "behavior-cloning loss diverged at epoch {epoch}"
            )));
        }
        curve.push(loss);
        lr *= cfg.lr_decay;
    }
    Ok((p, curve))
}

/// Behavior cloning on the clean expert labels of `demos`.
pub fn train_bc(
    demos: &[Trajectory],
    kind: NormKind,
    cfg: &BcConfig,
    max_step: f64,
) -> Result<(Policy, Vec<f64>)> {
    cfg.validate()?;
    let frames: Vec<_> = demos.iter().flat_map(|d| &d.frames).collect();
    if frames.is_empty() {
        return Err(Error::EmptyInput("demonstrations"));
    }
    let refs: Vec<ActionDelta> = frames.iter().map(|f| f.reference).collect();
    let norm = fit_norm(&refs, kind)?;
    let obs: Vec<&Observation> = frames.iter().map(|f| &f.obs).collect();
    let labels: Vec<[f64; 4]> = refs.iter().map(|a| normalize(a, &norm)).collect();
    let data = stack_rows(&obs, &labels)?;

    let image_size = frames[0].obs.size;
    let mut widths = vec![feature_width(image_size)];
    widths.extend(&cfg.hidden);
    widths.push(ACTION_DIM);
    let spec = MlpSpec::new(widths, cfg.activation)?;
    let init = Params::init(&spec, cfg.seed)?;
    let (net, curve) = fit_regression(init, &data, cfg)?;
    let policy = Policy {
        net,
        norm,
        max_step,
        image_size,
        trained_on: fingerprint(demos),
    };
    policy.validate()?;
    Ok((policy, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{collect_demo, make_scenario, ExpertConfig, SimConfig};
    use proptest::prelude::*;

    fn act(v: [f64; 4]) -> ActionDelta {
        ActionDelta::from_array(v)
    }

    #[test]
    fn minmax_fit_examples() {
        let n = fit_norm(
            &[act([0.0, 0.0, 0.0, 0.0]), act([1.0, 0.0, 0.0, 1.0])],
            NormKind::MinMax,
        )
        .unwrap();
        let NormScheme::MinMax { min, max } = n else {
            panic!()
        };
        assert_eq!((min[0], max[0]), (0.0, 1.0));
        // constant dims are widened
        assert!(max[1] > min[1]);
        assert_eq!(normalize(&act([0.0, 0.0, 0.0, 0.0]), &n)[0], 0.0);
        assert_eq!(normalize(&act([1.0, 0.0, 0.0, 0.0]), &n)[0], 1.0);
    }

    #[test]
    fn meanstd_fit_examples() {
        let n = fit_norm(
            &[act([-1.0, 0.3, 0.0, 0.0]), act([1.0, 0.3, 0.0, 0.0])],
            NormKind::MeanStd,
        )
        .unwrap();
        let NormScheme::MeanStd { mean, std } = n else {
            panic!()
        };
        assert_eq!((mean[0], std[0]), (0.0, 1.0));
        assert_eq!(std[1], STD_FLOOR);
        assert_eq!(normalize(&act([0.0, 0.3, 0.0, 0.0]), &n)[0], 0.0);
        assert!(normalize(&act([0.0, 0.3, 0.0, 0.0]), &n)
            .iter()
            .all(|v| v.is_finite()));
    }

    #[test]
    fn fit_needs_two_actions() {
        assert!(fit_norm(&[], NormKind::MinMax).is_err());
        assert!(fit_norm(&[act([0.0; 4])], NormKind::MeanStd).is_err());
    }

    proptest! {
        #[test]
        fn normalize_round_trip(
            data in prop::collection::vec(prop::array::uniform4(-0.05f64..0.05), 2..40),
            probe in prop::array::uniform4(-0.05f64..0.05),
            minmax in any::<bool>(),
        ) {
            let kind = if minmax { NormKind::MinMax } else { NormKind::MeanStd };
            let acts: Vec<_> = data.iter().map(|v| act(*v)).collect();
            let n = fit_norm(&acts, kind).unwrap();
            let back = denormalize(&normalize(&act(probe), &n), &n).unwrap().to_array();
            for i in 0..4 {
                prop_assert!((back[i] - probe[i]).abs() < 1e-6);
            }
        }
    }

    fn tiny_demos() -> (Vec<Trajectory>, SimConfig) {
        let sim = SimConfig {
            image_size: 8,
            max_steps: 30,
            ..SimConfig::default()
        };
        let ex = ExpertConfig::default();
        let demos = (0..3)
            .map(|s| {
                let (spec, init) = make_scenario(Archetype::TakeCoffee, s, &sim).unwrap();
                collect_demo(&spec, init, &sim, &ex, 0.004, s)
            })
            .collect();
        (demos, sim)
    }

    fn small_cfg() -> BcConfig {
        BcConfig {
            hidden: vec![8],
            epochs: 6,
            lr: 0.01,
            seed: 3,
            ..BcConfig::default()
        }
    }

    #[test]
    fn bc_loss_decreases_and_is_deterministic() {
        let (demos, sim) = tiny_demos();
        let (p1, curve) = train_bc(&demos, NormKind::MeanStd, &small_cfg(), sim.max_step).unwrap();
        assert!(curve.last().unwrap() < &curve[0], "{curve:?}");
        let (p2, _) = train_bc(&demos, NormKind::MeanStd, &small_cfg(), sim.max_step).unwrap();
        assert_eq!(p1, p2);
        assert!(train_bc(&[], NormKind::MeanStd, &small_cfg(), sim.max_step).is_err());
    }

    #[test]
    fn infer_contracts() {
        let (demos, sim) = tiny_demos();
        let (p, _) = train_bc(&demos, NormKind::MinMax, &small_cfg(), sim.max_step).unwrap();
        let obs = &demos[0].frames[3].obs;
        let a = p.infer(obs).unwrap();
        assert_eq!(a, p.infer(obs).unwrap());
        assert!((0.0..=1.0).contains(&a.gripper));
        assert!(a.dp.max_abs() <= sim.max_step);

        let mut o2 = obs.clone();
        o2.view_ego[5] += 1e-7;
        let b = p.infer(&o2).unwrap();
        assert!((b.dp - a.dp).max_abs() < 1e-4 && (b.gripper - a.gripper).abs() < 1e-4);

        let mut bad = obs.clone();
        bad.view_third.pop();
        assert!(p.infer(&bad).is_err());
    }

    #[test]
    fn pixel_gradient_matches_finite_differences() {
        let (demos, sim) = tiny_demos();
        let (p, _) = train_bc(&demos, NormKind::MinMax, &small_cfg(), sim.max_step).unwrap();
        let obs = demos[1].frames[4].obs.clone();
        let c = [0.3, -1.1, 0.7, 0.4];
        let (_, g) = p.pixel_gradient(&obs, c).unwrap();
        let f = |o: &Observation| {
            let a = p.raw_action(o).unwrap().to_array();
            (0..4).map(|i| a[i] * c[i]).sum::<f64>()
        };
        for k in (0..obs.pixel_count()).step_by(17) {
            let mut up = obs.clone();
            let mut dn = obs.clone();
            let mut px: Vec<f64> = obs.pixels().collect();
            px[k] += 1e-4;
            up.set_pixels(&px);
            px[k] -= 2e-4;
            dn.set_pixels(&px);
            let num = (f(&up) - f(&dn)) / 2e-4;
            assert!(
                nn::grad_rel_error(g[k], num) < 1e-4,
                "pixel {k}: {} vs {num}",
                g[k]
            );
        }
    }

    #[test]
    fn features_layout() {
        let (demos, _) = tiny_demos();
        let obs = &demos[0].frames[0].obs;
        let f = features(obs);
        assert_eq!(f.len(), feature_width(8));
        let centered: Vec<f64> = obs.pixels().map(|v| v - PIXEL_OFFSET).collect();
        assert_eq!(&f[..obs.pixel_count()], &centered[..]);
        let onehot = &f[f.len() - Archetype::COUNT..];
        assert_eq!(onehot[Archetype::TakeCoffee.index()], 1.0);
        assert_eq!(onehot.iter().sum::<f64>(), 1.0);
    }
}

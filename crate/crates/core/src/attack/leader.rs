use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TibbersSample;
use crate::error::{Error, Result};
use crate::nn::{self, grouped_cross_entropy, Activation, Gradients, MlpSpec, Params};
use crate::policy::{feature_width, features};
use crate::scene::{Archetype, Observation};
use crate::types::{AttackType, GuidanceLabel};

/// Direction value of each logit within a group of three.
pub const DIRECTION_CLASSES: [i8; 3] = [-1, 0, 1];
const N_DIR_LOGITS: usize = 12;

/// Network mapping (observation, attack type) to guidance.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackLeader {
    /// Heads: 12 direction logits, 1 scale.
    pub net: Params,
    /// One learned row per attack type.
    pub embedding: Array2<f64>,
    pub max_step: f64,
    pub image_size: usize,
    pub archetype: Archetype,
    /// Attack types present in the training set.
    pub attack_types: Vec<AttackType>,
    /// Scale labels of the training set, sorted; used to derive adaptive thresholds.
    pub scale_quantiles: Vec<f64>,
}

impl AttackLeader {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        let emb = self.embedding.ncols();
        if self.embedding.nrows() != AttackType::ALL.len() {
            return Err(Error::shape(AttackType::ALL.len(), self.embedding.nrows()));
        }
        if self.net.spec.input_width() != feature_width(self.image_size) + emb {
            return Err(Error::shape(
                feature_width(self.image_size) + emb,
                self.net.spec.input_width(),
            ));
        }
        if self.net.spec.output_width() != N_DIR_LOGITS + 1 {
            return Err(Error::shape(N_DIR_LOGITS + 1, self.net.spec.output_width()));
        }
        Ok(())
    }

    fn input(&self, obs: &Observation, e: AttackType) -> Vec<f64> {
        let mut x = features(obs);
        x.extend(self.embedding.row(e.index()).iter());
        x
    }

    /// Raw network output: 12 logits then the scale in units of `max_step`.
    pub fn raw(&self, obs: &Observation, e: AttackType) -> Result<Vec<f64>> {
        if obs.size != self.image_size {
            return Err(Error::shape(self.image_size, obs.size));
        }
        let x = self.input(obs, e);
        let xv = ArrayView2::from_shape((1, x.len()), &x).expect("row");
        Ok(nn::forward_batch(&self.net, xv)?
            .into_raw_vec_and_offset()
            .0)
    }

    /// Quantile `q ∈ [0, 1]` of the training scale labels.
    pub fn scale_quantile(&self, q: f64) -> f64 {
        let v = &self.scale_quantiles;
        if v.is_empty() {
            return 0.0;
        }
        let idx = ((q.clamp(0.0, 1.0) * (v.len() - 1) as f64).round()) as usize;
        v[idx]
    }
}

/// Argmax per group of three logits; a tied maximum decodes to 0.
pub fn decode_direction(logits: &[f64]) -> [i8; 4] {
    std::array::from_fn(|d| {
        let z = &logits[d * 3..d * 3 + 3];
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let winners: Vec<usize> = (0..3).filter(|&k| z[k] == m).collect();
        if winners.len() == 1 {
            DIRECTION_CLASSES[winners[0]]
        } else {
            0
        }
    })
}

/// Decodes a raw leader output into guidance. Negative scales clamp to 0.
pub fn decode_guidance(raw: &[f64], max_step: f64) -> GuidanceLabel {
    GuidanceLabel {
        direction: decode_direction(&raw[..N_DIR_LOGITS]),
        scale: raw[N_DIR_LOGITS].max(0.0) * max_step,
    }
}

pub fn leader_infer(
    leader: &AttackLeader,
    obs: &Observation,
    e: AttackType,
) -> Result<GuidanceLabel> {
    let raw = leader.raw(obs, e)?;
    Ok(decode_guidance(&raw, leader.max_step))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeaderConfig {
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub lr_decay: f64,
    /// Weight of the scale regression term.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for LeaderConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            embedding_dim: 8,
            epochs: 30,
            batch_size: 32,
            lr: 0.02,
            momentum: 0.9,
            lr_decay: 0.95,
            lambda: 0.5,
            seed: 0,
        }
    }
}

impl LeaderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0)
            || self.embedding_dim == 0
            || self.epochs == 0
            || self.batch_size == 0
        {
            return Err(Error::Config("leader sizes must be positive".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.lambda >= 0.0) {
            return Err(Error::Config(
                "leader needs lr > 0, momentum in [0,1), lambda >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Per-sample loss and output gradient: direction cross-entropy plus
/// `λ·(scale_pred − scale_label)²`, scale measured in units of `max_step`.
pub fn leader_loss(raw: &[f64], g: &GuidanceLabel, lambda: f64, max_step: f64) -> (f64, Vec<f64>) {
    let labels: Vec<usize> = g.direction.iter().map(|d| (d + 1) as usize).collect();
    let (ce, mut grad) = grouped_cross_entropy(&raw[..N_DIR_LOGITS], 3, &labels);
    let diff = raw[N_DIR_LOGITS] - g.scale / max_step;
    grad.push(2.0 * lambda * diff);
    (ce + lambda * diff * diff, grad)
}

/// Trains a leader on guidance-labelled samples of one archetype.
/// Returns the leader and the mean per-sample loss of every epoch.
pub fn train_leader(
    samples: &[TibbersSample],
    cfg: &LeaderConfig,
    max_step: f64,
) -> Result<(AttackLeader, Vec<f64>)> {
    cfg.validate()?;
    let first = samples
        .first()
        .ok_or(Error::EmptyInput("tibbers samples"))?;
    if samples.iter().any(|s| s.archetype != first.archetype) {
        return Err(Error::InvalidArgument(
            "leader samples must share one archetype".into(),
        ));
    }
    let image_size = first.obs.size;
    let fw = feature_width(image_size);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut embedding =
        Array2::from_shape_simple_fn((AttackType::ALL.len(), cfg.embedding_dim), || {
            rng.gen_range(-0.5..0.5)
        });
    let mut widths = vec![fw + cfg.embedding_dim];
    widths.extend(&cfg.hidden);
    widths.push(N_DIR_LOGITS + 1);
    let spec = MlpSpec::new(widths, Activation::Tanh)?.with_heads(vec![N_DIR_LOGITS, 1])?;
    let mut net = Params::init(&spec, cfg.seed)?;

    let mut base = Array2::zeros((samples.len(), fw));
    for (mut row, s) in base.rows_mut().into_iter().zip(samples) {
        if s.obs.size != image_size {
            return Err(Error::shape(image_size, s.obs.size));
        }
        row.assign(&ndarray::ArrayView1::from(&features(&s.obs)));
    }

    let mut vel = Gradients::zeros_like(&net);
    let mut emb_vel = Array2::<f64>::zeros(embedding.raw_dim());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut lr = cfg.lr;
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let mut x = Array2::zeros((b, fw + cfg.embedding_dim));
            x.slice_mut(ndarray::s![.., ..fw])
                .assign(&base.select(Axis(0), chunk));
            for (r, &i) in chunk.iter().enumerate() {
                let e = samples[i].attack_type.index();
                x.slice_mut(ndarray::s![r, fw..]).assign(&embedding.row(e));
            }
            let cache = nn::forward_cached(&net, x.view())?;
            let out = cache.output();
            let mut up = Array2::zeros(out.raw_dim());
            for (r, &i) in chunk.iter().enumerate() {
                let raw = out.row(r).to_vec();
                let (l, g) = leader_loss(&raw, &samples[i].guidance, cfg.lambda, max_step);
                total += l;
                for (k, gk) in g.into_iter().enumerate() {
                    up[[r, k]] = gk / b as f64;
                }
            }
            let (g, gx) = nn::backward_cached(&net, &cache, up.view())?;
            net = nn::sgd_step(&net, &g, &mut vel, lr, cfg.momentum)?;
            let mut emb_grad = Array2::<f64>::zeros(embedding.raw_dim());
            for (r, &i) in chunk.iter().enumerate() {
                let e = samples[i].attack_type.index();
                let mut row = emb_grad.row_mut(e);
                row += &gx.slice(ndarray::s![r, fw..]);
            }
            emb_vel.zip_mut_with(&emb_grad, |v, &g| *v = cfg.momentum * *v + g);
            embedding.scaled_add(-lr, &emb_vel);
        }
        let loss = total / samples.len() as f64;
        if !loss.is_finite() || !net.is_finite() {
            return Err(Error::Numerical(format!(
                "leader loss diverged at epoch {epoch}"
            )));
        }
        curve.push(loss);
        lr *= cfg.lr_decay;
    }

    let mut scales: Vec<f64> = samples.iter().map(|s| s.guidance.scale).collect();
    scales.sort_by(f64::total_cmp);
    let mut types: Vec<AttackType> = samples.iter().map(|s| s.attack_type).collect();
    types.sort();
    types.dedup();
    let leader = AttackLeader {
        net,
        embedding,
        max_step,
        image_size,
        archetype: first.archetype,
        attack_types: types,
        scale_quantiles: scales,
    };
    leader.validate()?;
    Ok((leader, curve))
}

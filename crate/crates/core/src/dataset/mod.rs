//! Attack datasets and artifact files.
//!
//! | extension | content |
//! |---|---|
//! | `.traj` | one trajectory |
//! | `.tib` | guidance-labelled attack dataset |
//! | `.pol` | policy |
//! | `.ldr` | attack leader |
//! | `.stats` | action statistics |
//!
//! Clean observations are not stored: rendering is deterministic, so they are
//! re-rendered from the recorded state on load. Perturbed observations and
//! network weights are stored as base64 little-endian `f64`.

pub mod format;
mod tibbers;

pub use tibbers::{
    adversarial_action, episode_seed, gen_tibbers, label_guidance, regenerate_sample,
    tibbers_episode, TibbersConfig, TibbersDataset, TibbersEpisode, TibbersSample,
};

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::attack::AttackLeader;
use crate::error::{Error, Result};
use crate::metrics::{emit_report, parse_report_csv, DatasetStats, ReportFormat, ReportRow};
use crate::nn::{MlpSpec, Params};
use crate::policy::{NormScheme, Policy};
use crate::scene::{
    Archetype, Frame, Observation, ScenarioSpec, SceneState, SimConfig, Trajectory,
};
use crate::types::{ActionDelta, AttackType, GuidanceLabel};
use format::{decode_f64s, encode_f64s, from_json, read_records, write_atomic, write_records};

pub const EXT_TRAJECTORY: &str = "traj";
pub const EXT_TIBBERS: &str = "tib";
pub const EXT_POLICY: &str = "pol";
pub const EXT_LEADER: &str = "ldr";
pub const EXT_STATS: &str = "stats";

#[derive(Serialize, Deserialize)]
struct TrajMeta {
    scenario: ScenarioSpec,
    sim: SimConfig,
    success: bool,
    final_state: SceneState,
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    state: SceneState,
    action: ActionDelta,
    reference: ActionDelta,
    perturbed: Option<String>,
    guidance: Option<GuidanceLabel>,
}

fn obs_from_pixels(template: &Observation, b64: &str) -> Result<Observation> {
    let px = decode_f64s(b64)?;
    if px.len() != template.pixel_count() {
        return Err(Error::Format(format!(
            "perturbed observation has {} pixels, expected {}",
            px.len(),
            template.pixel_count()
        )));
    }
    let mut o = template.clone();
    o.set_pixels(&px);
    Ok(o)
}

pub fn save_trajectory(path: &Path, t: &Trajectory, sim: &SimConfig) -> Result<()> {
    let meta = TrajMeta {
        scenario: t.scenario.clone(),
        sim: sim.clone(),
        success: t.success,
        final_state: t.final_state.clone(),
    };
    let recs: Vec<FrameRecord> = t
        .frames
        .iter()
        .map(|f| FrameRecord {
            state: f.state.clone(),
            action: f.action,
            reference: f.reference,
            perturbed: f
                .perturbed
                .as_ref()
                .map(|o| encode_f64s(&o.pixels().collect::<Vec<_>>())),
            guidance: f.guidance,
        })
        .collect();
    write_records(path, "trajectory", t.scenario.seed, &meta, &recs)
}

pub fn load_trajectory(path: &Path) -> Result<(Trajectory, SimConfig)> {
    let f = read_records(path, "trajectory")?;
    let meta: TrajMeta = from_json(&f.meta, "trajectory meta")?;
    meta.sim.validate()?;
    let mut frames = Vec::with_capacity(f.records.len());
    for line in &f.records {
        let r: FrameRecord = from_json(line, "frame record")?;
        let obs = Observation::capture(&r.state, &meta.scenario, &meta.sim);
        let perturbed = r
            .perturbed
            .as_deref()
            .map(|b| obs_from_pixels(&obs, b))
            .transpose()?;
        frames.push(Frame {
            obs,
            state: r.state,
            action: r.action,
            reference: r.reference,
            perturbed,
            guidance: r.guidance,
        });
    }
    Ok((
        Trajectory {
            scenario: meta.scenario,
            frames,
            final_state: meta.final_state,
            success: meta.success,
        },
        meta.sim,
    ))
}

#[derive(Serialize, Deserialize)]
struct TibMeta {
    archetype: Archetype,
    attack_type: AttackType,
    seed: u64,
    sim: SimConfig,
    scenarios: Vec<(u64, ScenarioSpec)>,
    discarded: Vec<(u64, String)>,
}

#[derive(Serialize, Deserialize)]
struct TibRecord {
    episode_id: u64,
    frame_index: usize,
    attack_type: AttackType,
    state: SceneState,
    guidance: GuidanceLabel,
}

pub fn save_tibbers(path: &Path, ds: &TibbersDataset) -> Result<()> {
    let meta = TibMeta {
        archetype: ds.archetype,
        attack_type: ds.attack_type,
        seed: ds.seed,
        sim: ds.sim.clone(),
        scenarios: ds.scenarios.iter().map(|(k, v)| (*k, v.clone())).collect(),
        discarded: ds.discarded.clone(),
    };
    let recs: Vec<TibRecord> = ds
        .samples
        .iter()
        .map(|s| TibRecord {
            episode_id: s.episode_id,
            frame_index: s.frame_index,
            attack_type: s.attack_type,
            state: s.state.clone(),
            guidance: s.guidance,
        })
        .collect();
    write_records(path, "tibbers", ds.seed, &meta, &recs)
}

pub fn load_tibbers(path: &Path) -> Result<TibbersDataset> {
    let f = read_records(path, "tibbers")?;
    let meta: TibMeta = from_json(&f.meta, "tibbers meta")?;
    meta.sim.validate()?;
    let scenarios: BTreeMap<u64, ScenarioSpec> = meta.scenarios.into_iter().collect();
    let mut samples = Vec::with_capacity(f.records.len());
    for line in &f.records {
        let r: TibRecord = from_json(line, "tibbers record")?;
        let spec = scenarios.get(&r.episode_id).ok_or_else(|| {
            Error::Format(format!("sample refers to unknown episode {}", r.episode_id))
        })?;
        let guidance = GuidanceLabel::new(r.guidance.direction, r.guidance.scale)
            .map_err(|e| Error::Format(e.to_string()))?;
        samples.push(TibbersSample {
            obs: Observation::capture(&r.state, spec, &meta.sim),
            state: r.state,
            guidance,
            attack_type: r.attack_type,
            archetype: meta.archetype,
            frame_index: r.frame_index,
            episode_id: r.episode_id,
        });
    }
    Ok(TibbersDataset {
        archetype: meta.archetype,
        attack_type: meta.attack_type,
        seed: meta.seed,
        sim: meta.sim,
        scenarios,
        samples,
        discarded: meta.discarded,
    })
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    layer: usize,
    rows: usize,
    cols: usize,
    weights: String,
    bias: String,
}

fn layer_records(p: &Params) -> Vec<LayerRecord> {
    p.weights
        .iter()
        .zip(&p.biases)
        .enumerate()
        .map(|(l, (w, b))| LayerRecord {
            layer: l,
            rows: w.nrows(),
            cols: w.ncols(),
            weights: encode_f64s(&w.iter().copied().collect::<Vec<_>>()),
            bias: encode_f64s(&b.to_vec()),
        })
        .collect()
}

fn params_from_records(spec: MlpSpec, seed: u64, lines: &[String]) -> Result<Params> {
    spec.validate().map_err(|e| Error::Format(e.to_string()))?;
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for (l, line) in lines.iter().enumerate() {
        let r: LayerRecord = from_json(line, "layer record")?;
        if r.layer != l {
            return Err(Error::Format(format!("layer {} out of order", r.layer)));
        }
        let w = Array2::from_shape_vec((r.rows, r.cols), decode_f64s(&r.weights)?)
            .map_err(|e| Error::Format(format!("layer {l}: {e}")))?;
        weights.push(w);
        biases.push(Array1::from(decode_f64s(&r.bias)?));
    }
    let p = Params {
        spec,
        weights,
        biases,
        seed,
    };
    p.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok(p)
}

#[derive(Serialize, Deserialize)]
struct PolicyMeta {
    spec: MlpSpec,
    seed: u64,
    norm: NormScheme,
    max_step: f64,
    image_size: usize,
    trained_on: String,
}

pub fn save_policy(path: &Path, p: &Policy) -> Result<()> {
    let meta = PolicyMeta {
        spec: p.net.spec.clone(),
        seed: p.net.seed,
        norm: p.norm.clone(),
        max_step: p.max_step,
        image_size: p.image_size,
        trained_on: p.trained_on.clone(),
    };
    write_records(path, "policy", p.net.seed, &meta, &layer_records(&p.net))
}

pub fn load_policy(path: &Path) -> Result<Policy> {
    let f = read_records(path, "policy")?;
    let meta: PolicyMeta = from_json(&f.meta, "policy meta")?;
    let net = params_from_records(meta.spec, meta.seed, &f.records)?;
    let p = Policy {
        net,
        norm: meta.norm,
        max_step: meta.max_step,
        image_size: meta.image_size,
        trained_on: meta.trained_on,
    };
    p.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok(p)
}

#[derive(Serialize, Deserialize)]
struct LeaderMeta {
    spec: MlpSpec,
    seed: u64,
    embedding_rows: usize,
    embedding: String,
    max_step: f64,
    image_size: usize,
    archetype: Archetype,
    attack_types: Vec<AttackType>,
    scale_quantiles: String,
}

pub fn save_leader(path: &Path, l: &AttackLeader) -> Result<()> {
    let meta = LeaderMeta {
        spec: l.net.spec.clone(),
        seed: l.net.seed,
        embedding_rows: l.embedding.nrows(),
        embedding: encode_f64s(&l.embedding.iter().copied().collect::<Vec<_>>()),
        max_step: l.max_step,
        image_size: l.image_size,
        archetype: l.archetype,
        attack_types: l.attack_types.clone(),
        scale_quantiles: encode_f64s(&l.scale_quantiles),
    };
    write_records(path, "leader", l.net.seed, &meta, &layer_records(&l.net))
}

pub fn load_leader(path: &Path) -> Result<AttackLeader> {
    let f = read_records(path, "leader")?;
    let meta: LeaderMeta = from_json(&f.meta, "leader meta")?;
    let net = params_from_records(meta.spec, meta.seed, &f.records)?;
    let emb = decode_f64s(&meta.embedding)?;
    if meta.embedding_rows == 0 || emb.len() % meta.embedding_rows != 0 {
        return Err(Error::Format("embedding shape is inconsistent".into()));
    }
    let cols = emb.len() / meta.embedding_rows;
    let embedding =
        Array2::from_shape_vec((meta.embedding_rows, cols), emb).expect("shape checked");
    let l = AttackLeader {
        net,
        embedding,
        max_step: meta.max_step,
        image_size: meta.image_size,
        archetype: meta.archetype,
        attack_types: meta.attack_types,
        scale_quantiles: decode_f64s(&meta.scale_quantiles)?,
    };
    l.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok(l)
}

pub fn save_stats(path: &Path, s: &DatasetStats) -> Result<()> {
    write_records::<_, ()>(path, "stats", 0, s, &[])
}

pub fn load_stats(path: &Path) -> Result<DatasetStats> {
    let f = read_records(path, "stats")?;
    from_json(&f.meta, "stats")
}

/// Reports are stored as their CSV rendering.
pub fn save_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    write_atomic(path, emit_report(rows, ReportFormat::Csv).as_bytes())
}

pub fn load_report(path: &Path) -> Result<Vec<ReportRow>> {
    parse_report_csv(&std::fs::read_to_string(path)?)
}

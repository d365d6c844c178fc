use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which frames receive a perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Scheduler {
    Dense,
    Stride {
        every: usize,
    },
    /// Attack every `hot_stride` frames while the last predicted scale exceeds
    /// `threshold`, otherwise every `cold_stride` frames.
    Adaptive {
        threshold: f64,
        hot_stride: usize,
        cold_stride: usize,
    },
}

impl Scheduler {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Scheduler::Dense => Ok(()),
            Scheduler::Stride { every } if every >= 1 => Ok(()),
            Scheduler::Adaptive {
                threshold,
                hot_stride,
                cold_stride,
            } if hot_stride >= 1 && hot_stride <= cold_stride && threshold.is_finite() => Ok(()),
            _ => Err(Error::InvalidArgument(format!(
                "invalid scheduler {self:?}"
            ))),
        }
    }

    /// Short label used in reports: `dense`, `stride:3`, `adaptive`.
    pub fn label(&self) -> String {
        match self {
            Scheduler::Dense => "dense".into(),
            Scheduler::Stride { every } => format!("stride:{every}"),
            Scheduler::Adaptive { .. } => "adaptive".into(),
        }
    }

    /// Parses `dense`, `stride:S` or `adaptive`; adaptive takes its parameters from `adaptive`.
    pub fn parse(s: &str, adaptive: Scheduler) -> Result<Self> {
        let sched = match s {
            "dense" => Scheduler::Dense,
            "adaptive" => adaptive,
            _ => match s.strip_prefix("stride:").map(str::parse::<usize>) {
                Some(Ok(every)) => Scheduler::Stride { every },
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown scheduler `{s}` (dense, stride:S, adaptive)"
                    )))
                }
            },
        };
        sched.validate()?;
        Ok(sched)
    }
}

/// What the scheduler remembers between frames.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SchedulerState {
    pub last_attacked: Option<usize>,
    /// Scale predicted on the most recent attacked frame.
    pub last_scale: Option<f64>,
}

impl SchedulerState {
    pub fn record(&mut self, frame: usize, scale: f64) {
        self.last_attacked = Some(frame);
        self.last_scale = Some(scale);
    }
}

pub fn should_attack(sched: &Scheduler, frame: usize, state: &SchedulerState) -> bool {
    match *sched {
        Scheduler::Dense => true,
        Scheduler::Stride { every } => frame % every == 0,
        Scheduler::Adaptive {
            threshold,
            hot_stride,
            cold_stride,
        } => match (state.last_attacked, state.last_scale) {
            (Some(last), Some(scale)) => {
                let stride = if scale > threshold {
                    hot_stride
                } else {
                    cold_stride
                };
                frame >= last + stride
            }
            _ => true,
        },
    }
}

/// Attacked frames predicted for an episode of `n_frames`, where `scale_at`
/// gives the scale the attacker would predict on each frame.
pub fn replay_schedule(
    sched: &Scheduler,
    n_frames: usize,
    scale_at: impl Fn(usize) -> f64,
) -> Vec<usize> {
    let mut st = SchedulerState::default();
    let mut out = Vec::new();
    for t in 0..n_frames {
        if should_attack(sched, t, &st) {
            st.record(t, scale_at(t));
            out.push(t);
        }
    }
    out
}

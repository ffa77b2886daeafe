//! Time-aligned imitation environment around one simulator.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::contact::{extract_cg, ContactGraphState};
use crate::model::{compute_ig, to_root_local, RefHoiSequence, RootFrame, RootPose, WorldReadout};
use crate::physics::{ArticulatedModel, DiscObject, SimConfig, SimError, Simulator, WorldState};
use crate::reward::{total_reward, HoiFrameRef, RewardBreakdown, RewardMode, RewardWeights};

use super::state::{build_state, readout, Snapshot};
use super::RlError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    MaxTime,
    ObjectDeviation,
    BodyDeviation,
    Diverged,
}

impl TerminationReason {
    pub const ALL: [TerminationReason; 4] = [
        TerminationReason::MaxTime,
        TerminationReason::ObjectDeviation,
        TerminationReason::BodyDeviation,
        TerminationReason::Diverged,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TerminationReason::MaxTime => "max_time",
            TerminationReason::ObjectDeviation => "object_deviation",
            TerminationReason::BodyDeviation => "body_deviation",
            TerminationReason::Diverged => "diverged",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Metres of object position error.
    pub object: f64,
    /// Metres of mean body position error.
    pub body: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { object: 0.5, body: 0.5 }
    }
}

/// Episode end test after the clock has advanced to `t` of `frames`.
pub fn check_termination(
    t: usize,
    frames: usize,
    object_error: f64,
    body_error: f64,
    thresholds: &Thresholds,
) -> Option<TerminationReason> {
    if t + 1 >= frames {
        Some(TerminationReason::MaxTime)
    } else if object_error > thresholds.object {
        Some(TerminationReason::ObjectDeviation)
    } else if body_error > thresholds.body {
        Some(TerminationReason::BodyDeviation)
    } else {
        None
    }
}

/// Position errors between simulated and reference positions: the largest
/// object error and the mean body error.
pub fn position_errors(sim: &WorldReadout, reference: &crate::model::RefHoiState) -> (f64, f64) {
    let dist = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let object = sim
        .object
        .pos
        .rows()
        .into_iter()
        .zip(reference.object.pos.rows())
        .map(|(a, b)| dist(a, b))
        .fold(0.0, f64::max);
    let b = sim.body.pos.nrows().max(1) as f64;
    let body =
        sim.body.pos.rows().into_iter().zip(reference.body.pos.rows()).map(|(a, b)| dist(a, b)).sum::<f64>() / b;
    (object, body)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSettings {
    pub weights: RewardWeights,
    pub mode: RewardMode,
    #[serde(default)]
    pub thresholds: Thresholds,
    /// Disable to run full-length episodes regardless of tracking error.
    #[serde(default = "yes")]
    pub early_termination: bool,
}

fn yes() -> bool {
    true
}

impl Default for EnvSettings {
    fn default() -> Self {
        Self {
            weights: RewardWeights::ball_play(),
            mode: RewardMode::Multiplicative,
            thresholds: Thresholds::default(),
            early_termination: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub reward: RewardBreakdown,
    pub done: bool,
    pub reason: Option<TerminationReason>,
    pub object_error: f64,
    pub body_error: f64,
    pub cg: ContactGraphState,
}

#[derive(Clone, Debug)]
pub struct HoiEnv {
    sim: Simulator,
    seq: Arc<RefHoiSequence>,
    settings: EnvSettings,
    initial: WorldState,
    t: usize,
    cur: Snapshot,
    prev: Snapshot,
    cg: ContactGraphState,
    done: bool,
    reason: Option<TerminationReason>,
}

impl HoiEnv {
    pub fn new(
        seq: Arc<RefHoiSequence>,
        model: ArticulatedModel,
        disc: DiscObject,
        config: SimConfig,
        settings: EnvSettings,
    ) -> Result<Self, RlError> {
        settings.weights.validate(seq.edge_count())?;
        if seq.layout.actuated_dof != model.dof() {
            return Err(RlError::Shape(format!(
                "sequence has {} actuated DoF, model has {}",
                seq.layout.actuated_dof,
                model.dof()
            )));
        }
        let mut sim = Simulator::new(model, disc, config)?;
        sim.reset_to_frame(&seq, 0)?;
        let initial = sim.state().clone();
        let cur = Snapshot::of(&sim)?;
        let cg = extract_cg(&sim.read_contacts(), &seq.cg_map)?;
        let mut env = Self { sim, seq, settings, initial, t: 0, prev: cur.clone(), cur, cg, done: false, reason: None };
        env.reset()?;
        Ok(env)
    }

    /// Restores the frame-0 state captured at construction.
    pub fn reset(&mut self) -> Result<(), RlError> {
        self.sim.set_state(self.initial.clone())?;
        self.t = 0;
        self.cur = Snapshot::of(&self.sim)?;
        let f0 = &self.seq.frames[0];
        self.prev = self.cur.rewind(&f0.body, &f0.object);
        self.cg = extract_cg(&self.sim.read_contacts(), &self.seq.cg_map)?;
        self.done = false;
        self.reason = None;
        Ok(())
    }

    pub fn time(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn reason(&self) -> Option<TerminationReason> {
        self.reason
    }

    pub fn sequence(&self) -> &RefHoiSequence {
        &self.seq
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn settings(&self) -> &EnvSettings {
        &self.settings
    }

    /// Current contact graph of the simulation.
    pub fn contact_graph(&self) -> &ContactGraphState {
        &self.cg
    }

    pub fn world_readout(&self) -> WorldReadout {
        readout(&self.sim, &self.cur, &self.prev, &self.seq.layout.contact_body_indices)
    }

    fn root_pose(w: &WorldReadout) -> RootPose {
        RootPose::of_body(&w.body, 0)
    }

    /// `{g_t, ĥ_{t+1}}` with the reference index clamped to the last frame.
    pub fn observation(&self) -> Result<Vec<f64>, RlError> {
        let w = self.world_readout();
        let root = Self::root_pose(&w);
        let local = to_root_local(&w, &root)?;
        let frame = RootFrame::from_pose(&root.position, &root.rotation)?;
        let next = &self.seq.frames[(self.t + 1).min(self.seq.len() - 1)];
        build_state(&local, &frame, next)
    }

    /// PD targets for a raw policy action: an offset from the joint-range midpoints.
    pub fn pd_targets(&self, action: &[f64]) -> Vec<f64> {
        self.sim.model().joints.iter().zip(action).map(|(j, a)| j.midpoint() + a).collect()
    }

    /// Advances one control step and scores the result against frame `t + 1`.
    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome, RlError> {
        if self.done {
            return Err(RlError::EpisodeOver);
        }
        let targets = self.pd_targets(action);
        match self.sim.step_control(&targets) {
            Ok(_) => {}
            Err(SimError::Diverged { .. }) => {
                self.done = true;
                self.reason = Some(TerminationReason::Diverged);
                self.t += 1;
                return Ok(StepOutcome {
                    reward: RewardBreakdown::default(),
                    done: true,
                    reason: self.reason,
                    object_error: f64::INFINITY,
                    body_error: f64::INFINITY,
                    cg: self.cg.clone(),
                });
            }
            Err(e) => return Err(e.into()),
        }
        self.t += 1;
        self.prev = std::mem::replace(&mut self.cur, Snapshot::of(&self.sim)?);
        self.cg = extract_cg(&self.sim.read_contacts(), &self.seq.cg_map)?;
        let w = self.world_readout();
        let reference = &self.seq.frames[self.t];
        let ig = compute_ig(w.body.pos.view(), w.object.pos.view(), &self.seq.layout.contact_body_indices)?;
        let sim_ref = HoiFrameRef { body: &w.body, object: &w.object, ig: &ig, cg: &self.cg };
        let ref_ref = HoiFrameRef { body: &reference.body, object: &reference.object, ig: &reference.ig, cg: &reference.cg };
        let reward = total_reward(sim_ref, ref_ref, &self.settings.weights, self.settings.mode)?;
        let (object_error, body_error) = position_errors(&w, reference);
        let reason = if self.settings.early_termination {
            check_termination(self.t, self.seq.len(), object_error, body_error, &self.settings.thresholds)
        } else {
            check_termination(self.t, self.seq.len(), 0.0, 0.0, &self.settings.thresholds)
        };
        self.done = reason.is_some();
        self.reason = reason;
        Ok(StepOutcome { reward, done: self.done, reason, object_error, body_error, cg: self.cg.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo::{generate, DemoScript};

    fn hold_env(settings: EnvSettings) -> HoiEnv {
        let model = ArticulatedModel::toy_arm();
        let disc = DiscObject::ball();
        let seq = Arc::new(generate(&DemoScript::hold(), &model, &disc).unwrap());
        HoiEnv::new(seq, model, disc, SimConfig::default(), settings).unwrap()
    }

    #[test]
    fn termination_rules() {
        let th = Thresholds::default();
        assert_eq!(check_termination(59, 60, 0.0, 0.0, &th), Some(TerminationReason::MaxTime));
        assert_eq!(check_termination(5, 60, 0.6, 0.0, &th), Some(TerminationReason::ObjectDeviation));
        assert_eq!(check_termination(5, 60, 0.1, 0.51, &th), Some(TerminationReason::BodyDeviation));
        assert_eq!(check_termination(5, 60, 0.49, 0.49, &th), None);
    }

    #[test]
    fn reset_restores_frame_zero_exactly() {
        let mut env = hold_env(EnvSettings::default());
        let s0 = env.observation().unwrap();
        for _ in 0..5 {
            env.step(&[0.5, -0.3, 0.2]).unwrap();
        }
        env.reset().unwrap();
        assert_eq!(env.observation().unwrap(), s0);
        assert_eq!(env.time(), 0);
    }

    #[test]
    fn reset_places_bodies_on_the_reference() {
        let env = hold_env(EnvSettings::default());
        let w = env.world_readout();
        let f0 = &env.sequence().frames[0];
        for (a, b) in w.body.pos.iter().zip(f0.body.pos.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(env.contact_graph().edges, f0.cg.edges);
    }

    #[test]
    fn episodes_never_exceed_the_clip() {
        let mut env = hold_env(EnvSettings { early_termination: false, ..EnvSettings::default() });
        let mut steps = 0;
        loop {
            let out = env.step(&[0.0, 0.0, 0.0]).unwrap();
            steps += 1;
            if out.done {
                assert_eq!(out.reason, Some(TerminationReason::MaxTime));
                break;
            }
        }
        assert_eq!(steps, env.sequence().len() - 1);
        assert!(matches!(env.step(&[0.0; 3]), Err(RlError::EpisodeOver)));
    }

    #[test]
    fn kinematic_only_reports_but_ignores_the_cg_channel() {
        let mut env = hold_env(EnvSettings { mode: RewardMode::KinematicOnly, ..EnvSettings::default() });
        let out = env.step(&[0.0; 3]).unwrap();
        let r = out.reward;
        assert!((r.r_total - r.r_b * r.r_o * r.r_ig).abs() < 1e-15);
        assert!(r.r_cg > 0.0 && r.r_cg <= 1.0);
    }
}

//! Synthetic kinematic reference clips for the toy arm and disc.
//!
//! The hand carries a flat paddle; the disc rides on its top surface while
//! the hand–ball contact edge is on and follows a closed-form parabola while
//! it is off.

pub mod ik;

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::{extract_cg, AggregationMap, ContactError, ContactGraphState};
use crate::math::Vec2;
use crate::model::rotation::encode_angle;
use crate::model::{BodyLayout, FrameTracks, ModelError, RefHoiSequence};
use crate::physics::{ArticulatedModel, DiscObject, SimConfig, SimError, Simulator};

use ik::{ChainIk, IkSettings, IkTarget};

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("invalid demo script: {0}")]
    InvalidScript(String),
    #[error("keyframe `{keyframe}` is unreachable (residual {residual:.3e})")]
    Unreachable { keyframe: String, residual: f64 },
    #[error("model has no link named `{0}`")]
    MissingLink(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Contact(#[from] ContactError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("settle pass failed at frame {frame}: {source}")]
    Settle { frame: usize, source: SimError },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Hold,
    Carry,
    TossCatch,
    BiasedHold,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [TaskKind::Hold, TaskKind::Carry, TaskKind::TossCatch, TaskKind::BiasedHold];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Hold => "hold",
            TaskKind::Carry => "carry",
            TaskKind::TossCatch => "toss_catch",
            TaskKind::BiasedHold => "biased_hold",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown task `{s}` (expected hold, carry, toss_catch or biased_hold)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoScript {
    pub kind: TaskKind,
    /// Seconds.
    pub duration: f64,
    pub fps: u32,
    /// Ball centre while held; the release point for tosses and the start of a carry.
    pub hold_point: Vec2,
    /// End point of a carry.
    #[serde(default)]
    pub carry_to: Option<Vec2>,
    /// World angle of the hand link.
    #[serde(default)]
    pub paddle_angle: f64,
    #[serde(default)]
    pub release_time: Option<f64>,
    #[serde(default)]
    pub catch_time: Option<f64>,
    /// Vertical release speed; defaults to the speed whose apex returns the
    /// ball to the release height at the catch time.
    #[serde(default)]
    pub toss_velocity: Option<f64>,
    /// Ball offset along the paddle normal.
    #[serde(default)]
    pub bias: f64,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    /// Seconds of constant upward acceleration before release.
    #[serde(default = "default_launch")]
    pub launch_duration: f64,
    /// Seconds for the hand to stop after release.
    #[serde(default = "default_brake")]
    pub brake_duration: f64,
    /// Seconds for the hand to stop after the catch.
    #[serde(default = "default_cushion")]
    pub cushion_duration: f64,
}

fn default_gravity() -> f64 {
    9.81
}

fn default_launch() -> f64 {
    0.15
}

fn default_brake() -> f64 {
    0.12
}

fn default_cushion() -> f64 {
    0.2
}

pub const HOLD_POINT: Vec2 = Vec2::new(0.62, 0.45);

impl DemoScript {
    fn base(kind: TaskKind, duration: f64) -> Self {
        Self {
            kind,
            duration,
            fps: 30,
            hold_point: HOLD_POINT,
            carry_to: None,
            paddle_angle: 0.0,
            release_time: None,
            catch_time: None,
            toss_velocity: None,
            bias: 0.0,
            gravity: default_gravity(),
            launch_duration: default_launch(),
            brake_duration: default_brake(),
            cushion_duration: default_cushion(),
        }
    }

    pub fn hold() -> Self {
        Self::base(TaskKind::Hold, 2.0)
    }

    pub fn carry() -> Self {
        Self { hold_point: Vec2::new(0.55, 0.42), carry_to: Some(Vec2::new(0.72, 0.5)), ..Self::base(TaskKind::Carry, 3.0) }
    }

    pub fn toss_catch() -> Self {
        Self {
            hold_point: Vec2::new(0.62, 0.5),
            release_time: Some(0.5),
            catch_time: Some(1.0),
            ..Self::base(TaskKind::TossCatch, 2.0)
        }
    }

    pub fn biased_hold() -> Self {
        Self { bias: 0.03, ..Self::base(TaskKind::BiasedHold, 2.0) }
    }

    pub fn preset(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Hold => Self::hold(),
            TaskKind::Carry => Self::carry(),
            TaskKind::TossCatch => Self::toss_catch(),
            TaskKind::BiasedHold => Self::biased_hold(),
        }
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.fps as f64).round() as usize
    }

    pub fn toss_speed(&self) -> f64 {
        let (r, c) = (self.release_time.unwrap_or(0.0), self.catch_time.unwrap_or(0.0));
        self.toss_velocity.unwrap_or(0.5 * self.gravity * (c - r))
    }

    pub fn validate(&self) -> Result<(), DemoError> {
        let bad = |m: &str| Err(DemoError::InvalidScript(m.to_string()));
        if !(self.duration >= 0.5) {
            return bad("duration must be at least 0.5 s");
        }
        if self.fps == 0 {
            return bad("fps must be positive");
        }
        if !(self.hold_point.is_finite() && self.paddle_angle.is_finite() && self.bias.is_finite()) {
            return bad("non-finite keyframe parameters");
        }
        if !(self.gravity > 0.0 && self.launch_duration > 0.0 && self.brake_duration > 0.0 && self.cushion_duration > 0.0)
        {
            return bad("gravity and ramp durations must be positive");
        }
        match self.kind {
            TaskKind::Carry if self.carry_to.is_none() => return bad("carry needs `carry_to`"),
            TaskKind::Carry if self.duration < 1.5 => return bad("carry needs at least 1.5 s"),
            TaskKind::TossCatch => {
                let (Some(r), Some(c)) = (self.release_time, self.catch_time) else {
                    return bad("toss_catch needs release and catch times");
                };
                if !(r < c) {
                    return bad("release must precede catch");
                }
                if r + self.brake_duration >= c {
                    return bad("the hand must stop before the catch");
                }
                if r - self.launch_duration < 0.0 || c + self.cushion_duration > self.duration {
                    return bad("launch and cushion ramps must fit inside the clip");
                }
                if !self.toss_speed().is_finite() || self.toss_speed() <= 0.0 {
                    return bad("toss velocity must be positive");
                }
            }
            TaskKind::BiasedHold if self.bias < 0.0 => return bad("bias must be non-negative"),
            _ => {}
        }
        Ok(())
    }
}

/// Cubic Hermite segment between two timed states.
#[derive(Clone, Copy, Debug)]
struct Segment {
    t0: f64,
    t1: f64,
    p0: Vec2,
    v0: Vec2,
    p1: Vec2,
    v1: Vec2,
}

impl Segment {
    fn eval(&self, t: f64) -> Vec2 {
        let h = self.t1 - self.t0;
        let s = ((t - self.t0) / h).clamp(0.0, 1.0);
        let (s2, s3) = (s * s, s * s * s);
        self.p0 * (2.0 * s3 - 3.0 * s2 + 1.0)
            + self.v0 * (h * (s3 - 2.0 * s2 + s))
            + self.p1 * (-2.0 * s3 + 3.0 * s2)
            + self.v1 * (h * (s3 - s2))
    }
}

/// Piecewise path of the ball-carrying point of the hand.
struct HandPath {
    start: Vec2,
    segments: Vec<Segment>,
    keyframes: Vec<(&'static str, Vec2)>,
}

impl HandPath {
    fn eval(&self, t: f64) -> Vec2 {
        let mut p = self.start;
        for s in &self.segments {
            if t < s.t0 {
                break;
            }
            p = s.eval(t);
        }
        p
    }
}

/// Ballistic flight of a toss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Flight {
    pub release_time: f64,
    pub catch_time: f64,
    pub origin: Vec2,
    pub velocity: Vec2,
    pub gravity: f64,
}

impl Flight {
    pub fn position(&self, t: f64) -> Vec2 {
        let tau = t - self.release_time;
        self.origin + self.velocity * tau - Vec2::new(0.0, 0.5 * self.gravity * tau * tau)
    }

    pub fn velocity_at(&self, t: f64) -> Vec2 {
        self.velocity - Vec2::new(0.0, self.gravity * (t - self.release_time))
    }

    /// True strictly between release and catch.
    pub fn in_air(&self, t: f64) -> bool {
        t > self.release_time + 1e-9 && t < self.catch_time - 1e-9
    }
}

fn hand_path(s: &DemoScript) -> (HandPath, Option<Flight>) {
    let z = Vec2::ZERO;
    let seg = |t0, t1, p0, v0, p1, v1| Segment { t0, t1, p0, v0, p1, v1 };
    match s.kind {
        TaskKind::Hold | TaskKind::BiasedHold => {
            (HandPath { start: s.hold_point, segments: vec![], keyframes: vec![("hold", s.hold_point)] }, None)
        }
        TaskKind::Carry => {
            let to = s.carry_to.unwrap_or(s.hold_point);
            let (t0, t1) = (0.5, s.duration - 0.5);
            let path = HandPath {
                start: s.hold_point,
                segments: vec![seg(t0, t1, s.hold_point, z, to, z)],
                keyframes: vec![("carry_start", s.hold_point), ("carry_end", to)],
            };
            (path, None)
        }
        TaskKind::TossCatch => {
            let (tr, tc) = (s.release_time.unwrap_or(0.5), s.catch_time.unwrap_or(1.0));
            let v0 = Vec2::new(0.0, s.toss_speed());
            let flight =
                Flight { release_time: tr, catch_time: tc, origin: s.hold_point, velocity: v0, gravity: s.gravity };
            // constant-acceleration launch ramp ending at the release velocity
            let low = s.hold_point - v0 * (0.5 * s.launch_duration);
            let catch_point = flight.position(tc);
            // after release the hand brakes harder than gravity, then trails the
            // falling ball at half its speed and cushions to rest after the catch
            let tb = tr + s.brake_duration;
            let peak = s.hold_point + v0 * (0.5 * s.brake_duration);
            let vc = flight.velocity_at(tc) * 0.5;
            let rest = catch_point + vc * (0.5 * s.cushion_duration);
            let tl = tr - s.launch_duration;
            let path = HandPath {
                start: low,
                segments: vec![
                    seg(tl, tr, low, z, s.hold_point, v0),
                    seg(tr, tb, s.hold_point, v0, peak, z),
                    seg(tb, tc, peak, z, catch_point, vc),
                    seg(tc, tc + s.cushion_duration, catch_point, vc, rest, z),
                ],
                keyframes: vec![
                    ("launch", low),
                    ("release", s.hold_point),
                    ("peak", peak),
                    ("catch", catch_point),
                    ("rest", rest),
                ],
            };
            (path, Some(flight))
        }
    }
}

/// Contact-graph map of the ball-play setting for the toy arm.
pub fn ball_play_map(model: &ArticulatedModel, hand: &str, ball: &str) -> AggregationMap {
    let rest: Vec<&str> = model.links.iter().map(|l| l.name.as_str()).filter(|n| *n != hand).collect();
    AggregationMap::ball_play(&[hand], &[ball], &rest, &["ground"])
}

pub const HAND_LINK: &str = "hand";

/// Offset of the held ball centre in the hand link's frame.
pub fn attachment_offset(model: &ArticulatedModel, hand: usize, disc: &DiscObject) -> Vec2 {
    Vec2::new(0.0, model.links[hand].radius + disc.radius)
}

pub fn root_pose(model: &ArticulatedModel) -> (Vec2, f64) {
    (Vec2::new(0.0, model.links[0].radius), 0.0)
}

const IK_SEED: [f64; 3] = [0.3, 1.6, -1.9];

/// Builds the reference clip for `script`.
pub fn generate(script: &DemoScript, model: &ArticulatedModel, disc: &DiscObject) -> Result<RefHoiSequence, DemoError> {
    script.validate()?;
    model.validate()?;
    disc.validate()?;
    let hand = model
        .links
        .iter()
        .position(|l| l.name == HAND_LINK)
        .ok_or_else(|| DemoError::MissingLink(HAND_LINK.to_string()))?;
    let (root_pos, root_angle) = root_pose(model);
    let offset = attachment_offset(model, hand, disc);
    let ik = ChainIk { model, root_pos, root_angle, end_link: hand, end_offset: offset };
    let settings = IkSettings::default();
    let seed: Vec<f64> = (0..model.dof()).map(|j| IK_SEED.get(j).copied().unwrap_or(0.0)).collect();

    let (path, flight) = hand_path(script);
    for (name, point) in &path.keyframes {
        let (_, residual) = ik.solve(&seed, &IkTarget { point: *point, angle: script.paddle_angle }, &settings);
        if residual > settings.tolerance {
            return Err(DemoError::Unreachable { keyframe: name.to_string(), residual });
        }
    }

    let t_count = script.frame_count();
    let b = model.links.len();
    let mut body_pos = Array3::zeros((t_count, b, 2));
    let mut body_rot = Array3::zeros((t_count, b, 2));
    let mut obj_pos = Array3::zeros((t_count, 1, 2));
    let mut obj_rot = Array3::zeros((t_count, 1, 2));
    let map = ball_play_map(model, HAND_LINK, &disc.name);
    let hand_ball = crate::contact::edge_index(0, 1, map.node_count())?;
    let mut cg = Vec::with_capacity(t_count);
    let mut q = seed;
    let mut ball_angle = script.paddle_angle;
    for k in 0..t_count {
        let t = k as f64 / script.fps as f64;
        let target = IkTarget { point: path.eval(t), angle: script.paddle_angle };
        let (sol, residual) = ik.solve(&q, &target, &settings);
        if residual > settings.tolerance {
            return Err(DemoError::Unreachable { keyframe: format!("frame {k}"), residual });
        }
        q = sol;
        let poses = model.forward_kinematics(root_pos, root_angle, &q);
        for (i, (p, a)) in poses.iter().enumerate() {
            body_pos[[k, i, 0]] = p.x;
            body_pos[[k, i, 1]] = p.y;
            let f = encode_angle(*a)?;
            body_rot[[k, i, 0]] = f[0];
            body_rot[[k, i, 1]] = f[1];
        }
        let airborne = flight.filter(|f| f.in_air(t));
        let (hp, ha) = poses[hand];
        let ball = match airborne {
            Some(f) => f.position(t),
            None => {
                ball_angle = ha;
                hp + (offset + Vec2::new(0.0, script.bias)).rotated(ha)
            }
        };
        obj_pos[[k, 0, 0]] = ball.x;
        obj_pos[[k, 0, 1]] = ball.y;
        let f = encode_angle(ball_angle)?;
        obj_rot[[k, 0, 0]] = f[0];
        obj_rot[[k, 0, 1]] = f[1];
        let mut state = ContactGraphState::empty(map.edge_count());
        if airborne.is_none() {
            state.edges[hand_ball] = 1;
        }
        cg.push(state);
    }

    let layout = BodyLayout::new(model.link_names(), model.dof(), 2, vec![hand])?;
    let tracks = FrameTracks { body_pos, body_rot, obj_pos, obj_rot, cg };
    Ok(RefHoiSequence::from_tracks(layout, script.fps, vec![disc.name.clone()], map, tracks)?)
}

/// One contact label that changed during calibration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LabelFlip {
    pub frame: usize,
    pub edge: usize,
    pub from: u8,
    pub to: u8,
}

#[derive(Clone, Debug)]
pub struct Calibration {
    pub sequence: RefHoiSequence,
    pub flips: Vec<LabelFlip>,
    /// Largest displacement of any body or object position.
    pub max_shift: f64,
}

/// Loads every frame into the simulator, settles it and re-reads poses and
/// geometric contact labels.
pub fn calibrate(
    seq: &RefHoiSequence,
    model: &ArticulatedModel,
    disc: &DiscObject,
    config: &SimConfig,
) -> Result<Calibration, DemoError> {
    seq.validate()?;
    let mut sim = Simulator::new(model.clone(), disc.clone(), config.clone())?;
    let mut tracks = seq.tracks();
    let mut flips = Vec::new();
    let mut max_shift: f64 = 0.0;
    for f in 0..seq.len() {
        sim.reset_to_frame(seq, f).map_err(|e| match e {
            SimError::SettleDiverged => DemoError::Settle { frame: f, source: e },
            other => DemoError::Sim(other),
        })?;
        let st = sim.state();
        let bodies = st.links.iter().map(|s| (s.pos, s.angle));
        for (i, (p, a)) in bodies.enumerate() {
            max_shift = max_shift.max((p - Vec2::new(tracks.body_pos[[f, i, 0]], tracks.body_pos[[f, i, 1]])).length());
            tracks.body_pos[[f, i, 0]] = p.x;
            tracks.body_pos[[f, i, 1]] = p.y;
            let r = encode_angle(a)?;
            tracks.body_rot[[f, i, 0]] = r[0];
            tracks.body_rot[[f, i, 1]] = r[1];
        }
        let d = st.disc;
        max_shift = max_shift.max((d.pos - Vec2::new(tracks.obj_pos[[f, 0, 0]], tracks.obj_pos[[f, 0, 1]])).length());
        tracks.obj_pos[[f, 0, 0]] = d.pos.x;
        tracks.obj_pos[[f, 0, 1]] = d.pos.y;
        let cg = extract_cg(&sim.read_contacts(), &seq.cg_map)?;
        for (edge, (&from, &to)) in tracks.cg[f].edges.iter().zip(&cg.edges).enumerate() {
            if from != to {
                flips.push(LabelFlip { frame: f, edge, from, to });
            }
        }
        tracks.cg[f] = cg;
    }
    let sequence =
        RefHoiSequence::from_tracks(seq.layout.clone(), seq.fps, seq.object_names.clone(), seq.cg_map.clone(), tracks)?;
    Ok(Calibration { sequence, flips, max_shift })
}

#[cfg(test)]
mod tests;

//! Task-agnostic HOI imitation reward and its ablation variants.
//!
//! Every channel is `exp(-λ · MSE(sim, ref))` except the contact-graph
//! channel, which is `exp(-Σ_j λ_cg[j] · |sim_j - ref_j|)`. The default
//! composition multiplies body, object, IG and CG rewards so that none of
//! them can be neglected.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::{cg_error, ContactError, ContactGraphState};
use crate::model::{mse, BodyMotion, InteractionGraph, ObjectMotion};

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("negative error {0} passed to an exponential reward")]
    NegativeError(f64),
    #[error("negative weight `{0}`")]
    NegativeWeight(&'static str),
    #[error("shape mismatch in {what}: {sim:?} vs {reference:?}")]
    Shape {
        what: &'static str,
        sim: Vec<usize>,
        reference: Vec<usize>,
    },
    #[error("contact-graph weights have {weights} entries for {edges} edges")]
    CgWeights { weights: usize, edges: usize },
    #[error(transparent)]
    Contact(#[from] ContactError),
}

/// Sensitivities of every reward channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub p: f64,
    pub r: f64,
    pub pv: f64,
    pub rv: f64,
    pub op: f64,
    #[serde(rename = "or")]
    pub or_: f64,
    pub opv: f64,
    pub orv: f64,
    pub ig: f64,
    pub cg: Vec<f64>,
}

impl RewardWeights {
    /// Weights used for dynamic ball-play clips (object rotation ignored).
    pub fn ball_play() -> Self {
        Self {
            p: 50.0,
            r: 20.0,
            pv: 0.01,
            rv: 0.01,
            op: 1.0,
            or_: 0.0,
            opv: 0.01,
            orv: 0.0,
            ig: 20.0,
            cg: vec![5.0, 5.0, 5.0],
        }
    }

    /// Weights used for tabletop grasping clips.
    pub fn grasp() -> Self {
        Self {
            p: 50.0,
            r: 20.0,
            pv: 0.01,
            rv: 0.01,
            op: 1.0,
            or_: 0.1,
            opv: 0.01,
            orv: 0.01,
            ig: 20.0,
            cg: vec![50.0, 5.0, 5.0],
        }
    }

    pub fn validate(&self, edge_count: usize) -> Result<(), RewardError> {
        let scalars = [
            ("p", self.p),
            ("r", self.r),
            ("pv", self.pv),
            ("rv", self.rv),
            ("op", self.op),
            ("or", self.or_),
            ("opv", self.opv),
            ("orv", self.orv),
            ("ig", self.ig),
        ];
        for (name, v) in scalars {
            if !(v >= 0.0) {
                return Err(RewardError::NegativeWeight(name));
            }
        }
        if self.cg.iter().any(|v| !(*v >= 0.0)) {
            return Err(RewardError::NegativeWeight("cg"));
        }
        if self.cg.len() != edge_count {
            return Err(RewardError::CgWeights { weights: self.cg.len(), edges: edge_count });
        }
        Ok(())
    }
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self::ball_play()
    }
}

/// How channel rewards are composed into the scalar reward.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// `r_b · r_o · r_ig · r_cg`
    #[default]
    Multiplicative,
    /// `r_b · r_o · r_ig`
    KinematicOnly,
    /// `r_b · r_o`
    KinematicNoIg,
    /// Uniformly weighted sum of the eight body and object channels.
    Additive,
}

impl RewardMode {
    pub const ALL: [RewardMode; 4] = [
        RewardMode::Multiplicative,
        RewardMode::KinematicOnly,
        RewardMode::KinematicNoIg,
        RewardMode::Additive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RewardMode::Multiplicative => "multiplicative",
            RewardMode::KinematicOnly => "kinematic_only",
            RewardMode::KinematicNoIg => "kinematic_no_ig",
            RewardMode::Additive => "additive",
        }
    }
}

impl std::str::FromStr for RewardMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RewardMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown reward mode `{s}`"))
    }
}

/// Every channel of one step's reward; unused channels are still computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_p: f64,
    pub r_r: f64,
    pub r_pv: f64,
    pub r_rv: f64,
    pub r_b: f64,
    pub r_op: f64,
    pub r_or: f64,
    pub r_opv: f64,
    pub r_orv: f64,
    pub r_o: f64,
    pub r_ig: f64,
    pub r_cg: f64,
    pub r_total: f64,
}

impl RewardBreakdown {
    pub const CHANNELS: [&'static str; 13] = [
        "r_p", "r_r", "r_pv", "r_rv", "r_b", "r_op", "r_or", "r_opv", "r_orv", "r_o", "r_ig", "r_cg",
        "r_total",
    ];

    pub fn values(&self) -> [f64; 13] {
        [
            self.r_p, self.r_r, self.r_pv, self.r_rv, self.r_b, self.r_op, self.r_or, self.r_opv,
            self.r_orv, self.r_o, self.r_ig, self.r_cg, self.r_total,
        ]
    }
}

/// `exp(-λ · error)` for a non-negative error.
pub fn exp_reward(error: f64, lambda: f64) -> Result<f64, RewardError> {
    if error < 0.0 || error.is_nan() {
        return Err(RewardError::NegativeError(error));
    }
    if lambda == 0.0 {
        return Ok(1.0);
    }
    Ok((-lambda * error).exp())
}

fn channel(
    what: &'static str,
    sim: &ndarray::Array2<f64>,
    reference: &ndarray::Array2<f64>,
    lambda: f64,
) -> Result<f64, RewardError> {
    if sim.shape() != reference.shape() {
        return Err(RewardError::Shape {
            what,
            sim: sim.shape().to_vec(),
            reference: reference.shape().to_vec(),
        });
    }
    exp_reward(mse(sim.iter(), reference.iter()), lambda)
}

/// `(r_p, r_r, r_pv, r_rv, r_b)`
pub fn body_reward(
    sim: &BodyMotion,
    reference: &BodyMotion,
    w: &RewardWeights,
) -> Result<[f64; 5], RewardError> {
    let p = channel("body position", &sim.pos, &reference.pos, w.p)?;
    let r = channel("body rotation", &sim.rot, &reference.rot, w.r)?;
    let pv = channel("body position velocity", &sim.pos_vel, &reference.pos_vel, w.pv)?;
    let rv = channel("body rotation velocity", &sim.rot_vel, &reference.rot_vel, w.rv)?;
    Ok([p, r, pv, rv, p * r * pv * rv])
}

/// `(r_op, r_or, r_opv, r_orv, r_o)`
pub fn object_reward(
    sim: &ObjectMotion,
    reference: &ObjectMotion,
    w: &RewardWeights,
) -> Result<[f64; 5], RewardError> {
    let p = channel("object position", &sim.pos, &reference.pos, w.op)?;
    let r = channel("object rotation", &sim.rot, &reference.rot, w.or_)?;
    let pv = channel("object position velocity", &sim.pos_vel, &reference.pos_vel, w.opv)?;
    let rv = channel("object rotation velocity", &sim.rot_vel, &reference.rot_vel, w.orv)?;
    Ok([p, r, pv, rv, p * r * pv * rv])
}

pub fn ig_reward(
    sim: &InteractionGraph,
    reference: &InteractionGraph,
    lambda: f64,
) -> Result<f64, RewardError> {
    if sim.vectors.shape() != reference.vectors.shape() {
        return Err(RewardError::Shape {
            what: "interaction graph",
            sim: sim.vectors.shape().to_vec(),
            reference: reference.vectors.shape().to_vec(),
        });
    }
    exp_reward(mse(sim.vectors.iter(), reference.vectors.iter()), lambda)
}

/// `exp(-Σ λ_cg[j] e[j])` for a binary error vector.
pub fn cg_reward(e_cg: &[u8], lambda_cg: &[f64]) -> Result<f64, RewardError> {
    if e_cg.len() != lambda_cg.len() {
        return Err(RewardError::CgWeights { weights: lambda_cg.len(), edges: e_cg.len() });
    }
    let s: f64 = e_cg.iter().zip(lambda_cg).map(|(&e, &l)| l * e as f64).sum();
    Ok((-s).exp())
}

/// Kinematic and contact quantities of one HOI frame, simulated or reference.
#[derive(Clone, Copy, Debug)]
pub struct HoiFrameRef<'a> {
    pub body: &'a BodyMotion,
    pub object: &'a ObjectMotion,
    pub ig: &'a InteractionGraph,
    pub cg: &'a ContactGraphState,
}

pub fn total_reward(
    sim: HoiFrameRef<'_>,
    reference: HoiFrameRef<'_>,
    w: &RewardWeights,
    mode: RewardMode,
) -> Result<RewardBreakdown, RewardError> {
    let [r_p, r_r, r_pv, r_rv, r_b] = body_reward(sim.body, reference.body, w)?;
    let [r_op, r_or, r_opv, r_orv, r_o] = object_reward(sim.object, reference.object, w)?;
    let r_ig = ig_reward(sim.ig, reference.ig, w.ig)?;
    let e_cg = cg_error(sim.cg, reference.cg)?;
    let r_cg = cg_reward(&e_cg, &w.cg)?;
    let r_total = match mode {
        RewardMode::Multiplicative => r_b * r_o * r_ig * r_cg,
        RewardMode::KinematicOnly => r_b * r_o * r_ig,
        RewardMode::KinematicNoIg => r_b * r_o,
        RewardMode::Additive => (r_p + r_r + r_pv + r_rv + r_op + r_or + r_opv + r_orv) / 8.0,
    };
    Ok(RewardBreakdown {
        r_p,
        r_r,
        r_pv,
        r_rv,
        r_b,
        r_op,
        r_or,
        r_opv,
        r_orv,
        r_o,
        r_ig,
        r_cg,
        r_total,
    })
}

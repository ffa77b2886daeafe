//! Deterministic fixed-step planar simulator for a PD-actuated link chain and
//! a free disc.
//!
//! Bodies are integrated in maximal coordinates with semi-implicit Euler.
//! Revolute joints, joint limits, PD drives and contacts are velocity
//! constraints resolved by sequential impulses with Baumgarte position
//! feedback. Contacts are speculative: pairs closer than a margin are solved
//! so they arrive at the surface instead of sinking into it.

mod collide;
mod solver;
mod world;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::Vec2;

pub use collide::{Contact, Entity};
pub use world::{link_segment, BodyState, ContactRecord, Simulator, WorldState};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("simulation diverged at substep {substep}")]
    Diverged { substep: u64 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} PD targets, got {found}")]
    TargetCount { expected: usize, found: usize },
    #[error("non-finite PD target for joint {0}")]
    NonFiniteTarget(usize),
    #[error("frame {index} out of range for a {len}-frame sequence")]
    FrameOutOfRange { index: usize, len: usize },
    #[error("sequence does not match the simulated model: {0}")]
    LayoutMismatch(String),
    #[error("settle pass diverged")]
    SettleDiverged,
}

/// Capsule link: a segment along local x of `length`, centred on the COM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub name: String,
    pub length: f64,
    pub radius: f64,
    pub mass: f64,
    /// Rotational inertia about the COM; derived from the box hull when absent.
    #[serde(default)]
    pub inertia: Option<f64>,
    #[serde(default = "default_friction")]
    pub friction: f64,
}

fn default_friction() -> f64 {
    0.8
}

impl LinkSpec {
    pub fn new(name: &str, length: f64, radius: f64, mass: f64) -> Self {
        Self { name: name.to_string(), length, radius, mass, inertia: None, friction: default_friction() }
    }

    pub fn inertia(&self) -> f64 {
        self.inertia.unwrap_or_else(|| {
            let w = 2.0 * self.radius;
            let l = self.length + w;
            self.mass * (l * l + w * w) / 12.0
        })
    }

    /// Local-frame endpoints of the capsule segment.
    pub fn half_extent(&self) -> f64 {
        0.5 * self.length
    }
}

/// Revolute joint between `parent` and `child`; `q = θ_child − θ_parent`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    pub parent: usize,
    pub child: usize,
    pub parent_anchor: Vec2,
    pub child_anchor: Vec2,
    pub lower: f64,
    pub upper: f64,
    pub kp: f64,
    /// Derived as `2·sqrt(kp·I)` with the child's inertia about the anchor when absent.
    #[serde(default)]
    pub kd: Option<f64>,
    pub torque_limit: f64,
}

impl JointSpec {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

/// A tree of capsule links with a free planar root (link 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArticulatedModel {
    pub links: Vec<LinkSpec>,
    pub joints: Vec<JointSpec>,
}

pub const DEFAULT_KP: f64 = 60.0;

impl ArticulatedModel {
    /// Four-link toy subject: a heavy torso lying on the ground and a
    /// three-joint arm ending in a paddle-like hand.
    pub fn toy_arm() -> Self {
        let links = vec![
            LinkSpec::new("torso", 0.6, 0.1, 20.0),
            LinkSpec::new("upper_arm", 0.3, 0.04, 2.0),
            LinkSpec::new("forearm", 0.28, 0.035, 1.5),
            LinkSpec::new("hand", 0.16, 0.02, 0.5),
        ];
        let joint = |name: &str, parent: usize, child: usize, lower: f64, upper: f64, limit: f64| {
            JointSpec {
                name: name.to_string(),
                parent,
                child,
                parent_anchor: Vec2::new(links[parent].half_extent(), 0.0),
                child_anchor: Vec2::new(-links[child].half_extent(), 0.0),
                lower,
                upper,
                kp: DEFAULT_KP,
                kd: None,
                torque_limit: limit,
            }
        };
        let joints = vec![
            joint("shoulder", 0, 1, -0.6, 2.4, 60.0),
            joint("elbow", 1, 2, -0.6, 2.6, 40.0),
            joint("wrist", 2, 3, -2.4, 0.6, 20.0),
        ];
        Self { links, joints }
    }

    pub fn link_names(&self) -> Vec<String> {
        self.links.iter().map(|l| l.name.clone()).collect()
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidModel(m));
        if self.links.is_empty() {
            return bad("no links".into());
        }
        for l in &self.links {
            if !(l.mass > 0.0 && l.length >= 0.0 && l.radius > 0.0 && l.inertia() > 0.0) {
                return bad(format!("link `{}` needs positive mass, radius and inertia", l.name));
            }
        }
        let mut has_parent = vec![false; self.links.len()];
        for (i, j) in self.joints.iter().enumerate() {
            if j.parent >= self.links.len() || j.child >= self.links.len() || j.parent == j.child {
                return bad(format!("joint `{}` references invalid links", j.name));
            }
            if j.child == 0 {
                return bad("the root link cannot be a joint child".into());
            }
            if has_parent[j.child] {
                return bad(format!("link {} has two parents", j.child));
            }
            // parents must precede children so forward kinematics is a single pass
            if self.joints[..i].iter().all(|p| p.child != j.parent) && j.parent != 0 {
                return bad(format!("joint `{}` appears before its parent's joint", j.name));
            }
            has_parent[j.child] = true;
            if !(j.lower < j.upper) {
                return bad(format!("joint `{}` limits out of order", j.name));
            }
            if !(j.kp > 0.0 && j.torque_limit > 0.0) || j.kd.is_some_and(|kd| kd <= 0.0) {
                return bad(format!("joint `{}` needs positive gains and torque limit", j.name));
            }
        }
        if has_parent.iter().skip(1).any(|p| !p) {
            return bad("every non-root link needs a parent joint".into());
        }
        Ok(())
    }

    /// Inertia of the child link about its joint anchor.
    pub fn child_inertia_about_anchor(&self, joint: usize) -> f64 {
        let j = &self.joints[joint];
        let l = &self.links[j.child];
        l.inertia() + l.mass * j.child_anchor.length_squared()
    }

    pub fn kd(&self, joint: usize) -> f64 {
        let j = &self.joints[joint];
        j.kd.unwrap_or_else(|| 2.0 * (j.kp * self.child_inertia_about_anchor(joint)).sqrt())
    }

    /// Link COM poses for a root pose and joint angles.
    pub fn forward_kinematics(&self, root_pos: Vec2, root_angle: f64, q: &[f64]) -> Vec<(Vec2, f64)> {
        let mut poses = vec![(Vec2::ZERO, 0.0); self.links.len()];
        poses[0] = (root_pos, root_angle);
        for (j, spec) in self.joints.iter().enumerate() {
            let (pp, pa) = poses[spec.parent];
            let anchor = pp + spec.parent_anchor.rotated(pa);
            let ca = pa + q[j];
            poses[spec.child] = (anchor - spec.child_anchor.rotated(ca), ca);
        }
        poses
    }
}

/// Free disc object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscObject {
    pub name: String,
    pub radius: f64,
    pub mass: f64,
    /// Defaults to the solid-disc value `m r² / 2`.
    #[serde(default)]
    pub inertia: Option<f64>,
    pub restitution: f64,
    pub friction: f64,
    /// Rolling-resistance coefficient: the resisting torque is bounded by
    /// `rolling_resistance · radius · normal force`.
    #[serde(default)]
    pub rolling_resistance: f64,
}

impl DiscObject {
    pub fn ball() -> Self {
        Self {
            name: "ball".into(),
            radius: 0.06,
            mass: 0.2,
            inertia: None,
            restitution: 0.2,
            friction: 0.9,
            rolling_resistance: 0.15,
        }
    }

    pub fn inertia(&self) -> f64 {
        self.inertia.unwrap_or(0.5 * self.mass * self.radius * self.radius)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.radius > 0.0 && self.mass > 0.0 && self.inertia() > 0.0) {
            return Err(SimError::InvalidModel("disc needs positive radius and mass".into()));
        }
        if !(0.0..=1.0).contains(&self.restitution) || self.friction < 0.0 || self.rolling_resistance < 0.0 {
            return Err(SimError::InvalidModel("disc restitution/friction out of range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub sim_hz: u32,
    pub control_hz: u32,
    pub gravity: Vec2,
    pub contact_slop: f64,
    pub velocity_iterations: usize,
    pub baumgarte: f64,
    /// Extra distance at which contacts are solved speculatively.
    pub speculative_distance: f64,
    /// Approach speed below which restitution is ignored.
    pub restitution_threshold: f64,
    pub ground: bool,
    pub ground_friction: f64,
    pub settle_iterations: usize,
    pub disc_radius_override: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            sim_hz: 60,
            control_hz: 30,
            gravity: Vec2::new(0.0, -9.81),
            contact_slop: 5e-3,
            velocity_iterations: 8,
            baumgarte: 0.2,
            speculative_distance: 0.02,
            restitution_threshold: 0.2,
            ground: true,
            ground_friction: 1.0,
            settle_iterations: 5,
            disc_radius_override: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if self.sim_hz == 0 || self.control_hz == 0 || self.sim_hz % self.control_hz != 0 {
            return bad("sim_hz must be a positive multiple of control_hz");
        }
        if !(self.contact_slop >= 0.0 && self.baumgarte >= 0.0 && self.baumgarte <= 1.0) {
            return bad("contact slop and Baumgarte factor out of range");
        }
        if self.velocity_iterations == 0 {
            return bad("need at least one solver iteration");
        }
        if self.disc_radius_override.is_some_and(|r| r <= 0.0) {
            return bad("disc radius override must be positive");
        }
        Ok(())
    }

    pub fn substeps(&self) -> u32 {
        self.sim_hz / self.control_hz
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sim_hz as f64
    }

    pub fn control_dt(&self) -> f64 {
        1.0 / self.control_hz as f64
    }
}


#[cfg(test)]
mod model_tests {
    use super::*;

    #[test]
    fn toy_model_is_valid() {
        let m = ArticulatedModel::toy_arm();
        m.validate().unwrap();
        assert_eq!(m.dof(), 3);
        assert!(m.kd(2) > 0.0);
    }

    #[test]
    fn invalid_models_rejected() {
        let mut m = ArticulatedModel::toy_arm();
        m.joints[1].lower = 3.0;
        assert!(m.validate().is_err());
        let mut m = ArticulatedModel::toy_arm();
        m.links[2].mass = 0.0;
        assert!(m.validate().is_err());
        let mut m = ArticulatedModel::toy_arm();
        m.joints[2].child = 2;
        assert!(m.validate().is_err());
        let cfg = SimConfig { control_hz: 25, ..SimConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn forward_kinematics_chains_anchors() {
        let m = ArticulatedModel::toy_arm();
        let poses = m.forward_kinematics(Vec2::new(0.0, 0.1), 0.0, &[0.0, 0.0, 0.0]);
        // a straight chain lays every link end to end along +x
        let mut x = 0.3;
        for (i, l) in m.links.iter().enumerate().skip(1) {
            x += l.half_extent();
            assert!((poses[i].0.x - x).abs() < 1e-12);
            assert!((poses[i].0.y - 0.1).abs() < 1e-12);
            x += l.half_extent();
        }
        let bent = m.forward_kinematics(Vec2::ZERO, 0.0, &[std::f64::consts::FRAC_PI_2, 0.0, 0.0]);
        assert!((bent[1].0.x - 0.3).abs() < 1e-12 && (bent[1].0.y - 0.15).abs() < 1e-12);
    }
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::contact::{ContactEvidence, PairContact};
use crate::math::{wrap_angle, Vec2};
use crate::model::rotation::decode_angle;
use crate::model::RefHoiSequence;

use super::collide::{capsule_points, detect, Contact, Entity};
use super::solver::{
    ContactConstraint, ContactParams, LimitConstraint, MotorConstraint, PointConstraint, SolverBody,
};
use super::{ArticulatedModel, DiscObject, SimConfig, SimError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BodyState {
    pub pos: Vec2,
    pub angle: f64,
    pub vel: Vec2,
    pub omega: f64,
}

impl BodyState {
    fn is_finite(&self) -> bool {
        self.pos.is_finite() && self.vel.is_finite() && self.angle.is_finite() && self.omega.is_finite()
    }

    fn speed_bound(&self, extent: f64) -> f64 {
        self.vel.length() + self.omega.abs() * extent
    }
}

/// A touching pair at the end of the last control step.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactRecord {
    pub a: Entity,
    pub b: Entity,
    /// Mean force exerted on `a` by `b` over the control step.
    pub force_on_a: Vec2,
    pub separation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub links: Vec<BodyState>,
    pub disc: BodyState,
    /// Mean net contact force per link over the last control step.
    pub link_forces: Vec<Vec2>,
    pub disc_force: Vec2,
    pub contacts: Vec<ContactRecord>,
    pub substep: u64,
}

type ContactKey = (Entity, Entity, u8);

#[derive(Clone, Debug, Default)]
struct WarmCache {
    joints: Vec<Vec2>,
    motors: Vec<f64>,
    limits: Vec<[f64; 2]>,
    contacts: Vec<(ContactKey, [f64; 3])>,
}

impl WarmCache {
    fn new(dof: usize) -> Self {
        Self { joints: vec![Vec2::ZERO; dof], motors: vec![0.0; dof], limits: vec![[0.0; 2]; dof], contacts: Vec::new() }
    }
}

#[derive(Default)]
struct ImpulseTally {
    bodies: Vec<Vec2>,
    pairs: BTreeMap<(Entity, Entity), Vec2>,
}

#[derive(Clone, Debug)]
pub struct Simulator {
    model: ArticulatedModel,
    disc: DiscObject,
    config: SimConfig,
    kd: Vec<f64>,
    state: WorldState,
    cache: WarmCache,
}

impl Simulator {
    pub fn new(model: ArticulatedModel, disc: DiscObject, config: SimConfig) -> Result<Self, SimError> {
        model.validate()?;
        disc.validate()?;
        config.validate()?;
        let kd = (0..model.dof()).map(|j| model.kd(j)).collect();
        let n = model.links.len();
        let dof = model.dof();
        let mut sim = Self {
            model,
            disc,
            config,
            kd,
            state: WorldState {
                links: vec![BodyState::default(); n],
                disc: BodyState::default(),
                link_forces: vec![Vec2::ZERO; n],
                disc_force: Vec2::ZERO,
                contacts: Vec::new(),
                substep: 0,
            },
            cache: WarmCache::new(dof),
        };
        // default pose: straight chain with the root lying on the ground
        let root = Vec2::new(0.0, sim.model.links[0].radius);
        sim.set_pose(root, 0.0, &vec![0.0; dof]);
        let r = sim.disc_radius();
        sim.state.disc.pos = Vec2::new(-1.0, r);
        Ok(sim)
    }

    pub fn model(&self) -> &ArticulatedModel {
        &self.model
    }

    pub fn disc(&self) -> &DiscObject {
        &self.disc
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn disc_radius(&self) -> f64 {
        self.config.disc_radius_override.unwrap_or(self.disc.radius)
    }

    /// Replaces the world state and drops solver warm-start data.
    pub fn set_state(&mut self, state: WorldState) -> Result<(), SimError> {
        if state.links.len() != self.model.links.len() || state.link_forces.len() != self.model.links.len() {
            return Err(SimError::LayoutMismatch("link count".into()));
        }
        self.state = state;
        self.cache = WarmCache::new(self.model.dof());
        Ok(())
    }

    /// Places the chain at rest in a forward-kinematics pose.
    pub fn set_pose(&mut self, root_pos: Vec2, root_angle: f64, q: &[f64]) {
        for (s, (p, a)) in self.state.links.iter_mut().zip(self.model.forward_kinematics(root_pos, root_angle, q)) {
            *s = BodyState { pos: p, angle: a, ..BodyState::default() };
        }
        self.cache = WarmCache::new(self.model.dof());
    }

    pub fn set_disc(&mut self, disc: BodyState) {
        self.state.disc = disc;
        self.cache.contacts.clear();
    }

    pub fn joint_angles(&self) -> Vec<f64> {
        let l = &self.state.links;
        self.model.joints.iter().map(|j| wrap_angle(l[j.child].angle - l[j.parent].angle)).collect()
    }

    pub fn joint_velocities(&self) -> Vec<f64> {
        let l = &self.state.links;
        self.model.joints.iter().map(|j| l[j.child].omega - l[j.parent].omega).collect()
    }

    pub fn entity_name(&self, e: Entity) -> &str {
        match e {
            Entity::Link(i) => &self.model.links[i].name,
            Entity::Disc => &self.disc.name,
            Entity::Ground => "ground",
        }
    }

    /// Total linear momentum of all dynamic bodies.
    pub fn linear_momentum(&self) -> Vec2 {
        let links = self.model.links.iter().zip(&self.state.links).fold(Vec2::ZERO, |acc, (l, s)| acc + s.vel * l.mass);
        links + self.state.disc.vel * self.disc.mass
    }

    /// Largest current overlap depth over all shape pairs (zero when separated).
    pub fn max_penetration(&self) -> f64 {
        self.detect_with(|_, _| 0.0).iter().map(|c| -c.separation).fold(0.0, f64::max)
    }

    fn detect_with(&self, margin: impl Fn(Entity, Entity) -> f64) -> Vec<Contact> {
        detect(&self.model, self.disc_radius(), &self.state.links, &self.state.disc, self.config.ground, margin)
    }

    fn extent(&self, e: Entity) -> f64 {
        match e {
            Entity::Link(i) => self.model.links[i].half_extent() + self.model.links[i].radius,
            Entity::Disc => self.disc_radius(),
            Entity::Ground => 0.0,
        }
    }

    fn body_state(&self, e: Entity) -> Option<&BodyState> {
        match e {
            Entity::Link(i) => Some(&self.state.links[i]),
            Entity::Disc => Some(&self.state.disc),
            Entity::Ground => None,
        }
    }

    fn index(&self, e: Entity) -> usize {
        let n = self.model.links.len();
        match e {
            Entity::Link(i) => i,
            Entity::Disc => n,
            Entity::Ground => n + 1,
        }
    }

    fn friction(&self, e: Entity) -> f64 {
        match e {
            Entity::Link(i) => self.model.links[i].friction,
            Entity::Disc => self.disc.friction,
            Entity::Ground => self.config.ground_friction,
        }
    }

    /// Initialises the world from a reference frame, then pushes overlapping
    /// shapes apart.
    pub fn reset_to_frame(&mut self, seq: &RefHoiSequence, index: usize) -> Result<&WorldState, SimError> {
        if index >= seq.len() {
            return Err(SimError::FrameOutOfRange { index, len: seq.len() });
        }
        let names = self.model.link_names();
        if seq.layout.spatial_dim != 2 || seq.layout.body_names != names {
            return Err(SimError::LayoutMismatch(format!("expected planar bodies {names:?}")));
        }
        if seq.object_count() == 0 {
            return Err(SimError::LayoutMismatch("sequence has no object".into()));
        }
        let fps = seq.fps as f64;
        let frame = &seq.frames[index];
        let read = |m: &crate::model::BodyMotion, row: usize| -> Result<BodyState, SimError> {
            let bad = |e: crate::model::ModelError| SimError::LayoutMismatch(e.to_string());
            let rot = m.rot.row(row).to_vec();
            let rot_vel = m.rot_vel.row(row).to_vec();
            let angle = decode_angle(&rot).map_err(bad)?;
            let prev: Vec<f64> = rot.iter().zip(&rot_vel).map(|(r, d)| r - d).collect();
            let omega = match decode_angle(&prev) {
                Ok(p) => wrap_angle(angle - p) * fps,
                Err(_) => 0.0,
            };
            Ok(BodyState {
                pos: Vec2::new(m.pos[[row, 0]], m.pos[[row, 1]]),
                angle,
                vel: Vec2::new(m.pos_vel[[row, 0]], m.pos_vel[[row, 1]]) * fps,
                omega,
            })
        };
        for b in 0..names.len() {
            self.state.links[b] = read(&frame.body, b)?;
        }
        self.state.disc = read(&frame.object, 0)?;
        self.state.link_forces.iter_mut().for_each(|f| *f = Vec2::ZERO);
        self.state.disc_force = Vec2::ZERO;
        self.state.substep = 0;
        self.cache = WarmCache::new(self.model.dof());
        self.settle()?;
        self.state.contacts = self.touching(&ImpulseTally::default());
        Ok(&self.state)
    }

    /// Position-level projection: the chain is lifted as one rigid group off
    /// the ground and the disc is pushed out of everything it overlaps.
    pub fn settle(&mut self) -> Result<(), SimError> {
        let slop = self.config.contact_slop;
        for _ in 0..self.config.settle_iterations {
            let mut lift: f64 = 0.0;
            let mut moved = false;
            for c in self.detect_with(|_, _| 0.0) {
                let depth = -c.separation;
                if depth <= slop {
                    continue;
                }
                match (c.a, c.b) {
                    (Entity::Ground, Entity::Link(_)) => lift = lift.max(depth),
                    (_, Entity::Disc) => {
                        self.state.disc.pos += c.normal * depth;
                        moved = true;
                    }
                    _ => {}
                }
            }
            if lift > 0.0 {
                self.state.links.iter_mut().for_each(|s| s.pos.y += lift);
                moved = true;
            }
            if !moved {
                break;
            }
        }
        if self.state.links.iter().chain([&self.state.disc]).all(BodyState::is_finite) {
            Ok(())
        } else {
            Err(SimError::SettleDiverged)
        }
    }

    /// Advances one control step, holding the PD targets over every substep.
    pub fn step_control(&mut self, targets: &[f64]) -> Result<&WorldState, SimError> {
        let dof = self.model.dof();
        if targets.len() != dof {
            return Err(SimError::TargetCount { expected: dof, found: targets.len() });
        }
        if let Some(j) = targets.iter().position(|t| !t.is_finite()) {
            return Err(SimError::NonFiniteTarget(j));
        }
        let clamped: Vec<f64> =
            targets.iter().zip(&self.model.joints).map(|(t, j)| t.clamp(j.lower, j.upper)).collect();
        let mut tally = ImpulseTally { bodies: vec![Vec2::ZERO; self.model.links.len() + 2], ..Default::default() };
        for _ in 0..self.config.substeps() {
            self.substep(&clamped, &mut tally)?;
        }
        let inv = 1.0 / self.config.control_dt();
        let n = self.model.links.len();
        for (f, p) in self.state.link_forces.iter_mut().zip(&tally.bodies[..n]) {
            *f = *p * inv;
        }
        self.state.disc_force = tally.bodies[n] * inv;
        self.state.contacts = self.touching(&tally);
        Ok(&self.state)
    }

    fn touching(&self, tally: &ImpulseTally) -> Vec<ContactRecord> {
        let inv = 1.0 / self.config.control_dt();
        let mut out: Vec<ContactRecord> = Vec::new();
        for c in self.detect_with(|_, _| self.config.contact_slop + 1e-12) {
            if c.separation > self.config.contact_slop {
                continue;
            }
            if let Some(r) = out.iter_mut().find(|r| r.a == c.a && r.b == c.b) {
                r.separation = r.separation.min(c.separation);
                continue;
            }
            let force = tally.pairs.get(&(c.a, c.b)).copied().unwrap_or(Vec2::ZERO) * inv;
            out.push(ContactRecord { a: c.a, b: c.b, force_on_a: force, separation: c.separation });
        }
        out
    }

    /// Touching pairs and net forces of the last control step, keyed by entity name.
    pub fn read_contacts(&self) -> ContactEvidence {
        let pairs = self
            .state
            .contacts
            .iter()
            .map(|r| PairContact {
                a: self.entity_name(r.a).to_string(),
                b: self.entity_name(r.b).to_string(),
                force_on_a: r.force_on_a.to_array().to_vec(),
            })
            .collect();
        let mut net_forces: BTreeMap<String, Vec<f64>> = self
            .model
            .links
            .iter()
            .zip(&self.state.link_forces)
            .map(|(l, f)| (l.name.clone(), f.to_array().to_vec()))
            .collect();
        net_forces.insert(self.disc.name.clone(), self.state.disc_force.to_array().to_vec());
        ContactEvidence { pairs, net_forces }
    }

    fn substep(&mut self, targets: &[f64], tally: &mut ImpulseTally) -> Result<(), SimError> {
        let cfg = &self.config;
        let dt = cfg.dt();
        let gravity = cfg.gravity;

        let contacts = self.detect_with(|a, b| {
            let speed = |e: Entity| self.body_state(e).map_or(0.0, |s| s.speed_bound(self.extent(e)));
            cfg.speculative_distance + dt * (speed(a) + speed(b))
        });

        let mut bodies: Vec<SolverBody> = self
            .model
            .links
            .iter()
            .zip(&self.state.links)
            .map(|(l, s)| SolverBody {
                vel: s.vel + gravity * dt,
                omega: s.omega,
                inv_mass: 1.0 / l.mass,
                inv_inertia: 1.0 / l.inertia(),
            })
            .collect();
        bodies.push(SolverBody {
            vel: self.state.disc.vel + gravity * dt,
            omega: self.state.disc.omega,
            inv_mass: 1.0 / self.disc.mass,
            inv_inertia: 1.0 / self.disc.inertia(),
        });
        bodies.push(SolverBody { vel: Vec2::ZERO, omega: 0.0, inv_mass: 0.0, inv_inertia: 0.0 });

        let links = &self.state.links;
        let mut points = Vec::with_capacity(self.model.dof());
        let mut motors = Vec::with_capacity(self.model.dof());
        let mut limits = Vec::new();
        for (j, spec) in self.model.joints.iter().enumerate() {
            let (pa, pb) = (&links[spec.parent], &links[spec.child]);
            let ra = spec.parent_anchor.rotated(pa.angle);
            let rb = spec.child_anchor.rotated(pb.angle);
            let err = (pb.pos + rb) - (pa.pos + ra);
            let mut pc = PointConstraint::new(&bodies, spec.parent, spec.child, ra, rb, err, cfg.baumgarte / dt);
            pc.impulse = self.cache.joints[j];
            points.push(pc);

            let q = wrap_angle(pb.angle - pa.angle);
            let mut mc = MotorConstraint::new(
                &bodies,
                spec.parent,
                spec.child,
                q - targets[j],
                spec.kp,
                self.kd[j],
                spec.torque_limit,
                dt,
            );
            mc.impulse = self.cache.motors[j].clamp(-mc.max_impulse, mc.max_impulse);
            motors.push(mc);

            let qdot = pb.omega - pa.omega;
            let margin = 0.05 + 2.0 * qdot.abs() * dt;
            for (side, (sign, gap)) in [(1.0, q - spec.lower), (-1.0, spec.upper - q)].into_iter().enumerate() {
                if gap < margin {
                    let mut lc = LimitConstraint::new(&bodies, spec.parent, spec.child, sign, gap, dt, cfg.baumgarte);
                    lc.impulse = self.cache.limits[j][side];
                    limits.push((j, side, lc));
                }
            }
        }

        let disc_r = self.disc_radius();
        let mut solved: Vec<(ContactKey, ContactConstraint)> = contacts
            .iter()
            .map(|c| {
                let (ia, ib) = (self.index(c.a), self.index(c.b));
                let pos = |e: Entity| self.body_state(e).map_or(Vec2::ZERO, |s| s.pos);
                let involves_disc = c.b == Entity::Disc;
                let params = ContactParams {
                    separation: c.separation,
                    friction: (self.friction(c.a) * self.friction(c.b)).sqrt(),
                    restitution: if involves_disc { self.disc.restitution } else { 0.0 },
                    rolling: if involves_disc { self.disc.rolling_resistance * disc_r } else { 0.0 },
                    slop: cfg.contact_slop,
                    baumgarte: cfg.baumgarte,
                    dt,
                };
                let mut cc = ContactConstraint::new(&bodies, ia, ib, c.point - pos(c.a), c.point - pos(c.b), c.normal, &params);
                let key = (c.a, c.b, c.feature);
                if let Some((_, w)) = self.cache.contacts.iter().find(|(k, _)| *k == key) {
                    cc.normal_impulse = w[0];
                    cc.tangent_impulse = w[1];
                    cc.rolling_impulse = w[2];
                }
                (key, cc)
            })
            .collect();

        for m in &motors {
            m.warm_start(&mut bodies);
        }
        for (_, _, l) in &limits {
            l.warm_start(&mut bodies);
        }
        for p in &points {
            p.warm_start(&mut bodies);
        }
        for (_, c) in &solved {
            c.warm_start(&mut bodies);
        }

        for _ in 0..cfg.velocity_iterations {
            for m in &mut motors {
                m.solve(&mut bodies);
            }
            for p in &mut points {
                p.solve(&mut bodies);
            }
            for (_, _, l) in &mut limits {
                l.solve(&mut bodies);
            }
            for (_, c) in &mut solved {
                c.solve(&mut bodies);
            }
        }
        for (_, c) in &mut solved {
            c.apply_restitution(&mut bodies, cfg.restitution_threshold);
        }
        // limits get the last word so contact pushes cannot drive a joint past its range
        for (_, _, l) in &mut limits {
            l.solve(&mut bodies);
        }

        let mut cache = WarmCache::new(self.model.dof());
        for (j, (p, m)) in points.iter().zip(&motors).enumerate() {
            cache.joints[j] = p.impulse;
            cache.motors[j] = m.impulse;
        }
        for (j, side, l) in &limits {
            cache.limits[*j][*side] = l.impulse;
        }
        for (key, c) in &solved {
            cache.contacts.push((*key, [c.normal_impulse, c.tangent_impulse, c.rolling_impulse]));
            let p = c.linear_impulse();
            tally.bodies[c.a] -= p;
            tally.bodies[c.b] += p;
            *tally.pairs.entry((key.0, key.1)).or_insert(Vec2::ZERO) -= p;
        }
        self.cache = cache;

        let states = self.state.links.iter_mut().chain(std::iter::once(&mut self.state.disc));
        for (s, b) in states.zip(&bodies) {
            s.vel = b.vel;
            s.omega = b.omega;
            s.pos += s.vel * dt;
            s.angle += s.omega * dt;
        }
        self.state.substep += 1;
        if !self.state.links.iter().chain([&self.state.disc]).all(BodyState::is_finite) {
            return Err(SimError::Diverged { substep: self.state.substep });
        }
        Ok(())
    }
}

/// Endpoints of a link's capsule segment in world coordinates.
pub fn link_segment(model: &ArticulatedModel, state: &WorldState, link: usize) -> (Vec2, Vec2) {
    capsule_points(&model.links[link], &state.links[link])
}

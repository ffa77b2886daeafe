//! Policy state assembly and simulator readout.

use ndarray::{Array2, Axis};

use crate::model::rotation::encode_angle;
use crate::model::{BodyLayout, BodyMotion, RefHoiState, RootFrame, SimHoiState, WorldReadout};
use crate::physics::Simulator;

use super::RlError;

/// Length of the flat state for a layout with `m` objects and `edges` CG edges.
pub fn state_len(layout: &BodyLayout, m: usize, edges: usize) -> usize {
    let (b, d, r, n) = (layout.body_count, layout.spatial_dim, layout.rot_feature_dim, layout.contact_count());
    let motion = 2 * (d + r);
    let obs = 1 + b * motion + n * d + m * motion;
    let reference = b * motion + m * motion + n * m * d + edges;
    obs + reference
}

/// `[o_sbj | o_f | o_obj | ref body | ref object | ref IG | ref CG]` with
/// the reference expressed in the simulated root frame.
pub fn build_state(sim: &SimHoiState, frame: &RootFrame, next: &RefHoiState) -> Result<Vec<f64>, RlError> {
    let mut out = Vec::new();
    out.push(sim.root_height);
    push_motion(&mut out, &sim.body);
    out.extend(sim.contact_forces.iter());
    push_motion(&mut out, &sim.object);
    push_motion(&mut out, &frame.body_to_local(&next.body));
    push_motion(&mut out, &frame.object_to_local(&next.object));
    let mut ig = next.ig.vectors.clone();
    for mut lane in ig.lanes_mut(Axis(2)) {
        frame.vector_to_local(&mut lane);
    }
    out.extend(ig.iter());
    out.extend(next.cg.edges.iter().map(|&e| e as f64));
    if out.iter().any(|x| !x.is_finite()) {
        return Err(RlError::NonFinite("state vector".into()));
    }
    Ok(out)
}

/// Per body: position, rotation feature, position delta, rotation delta.
fn push_motion(out: &mut Vec<f64>, m: &BodyMotion) {
    for i in 0..m.rows() {
        out.extend(m.pos.row(i).iter());
        out.extend(m.rot.row(i).iter());
        out.extend(m.pos_vel.row(i).iter());
        out.extend(m.rot_vel.row(i).iter());
    }
}

/// Positions and rotation features of bodies and objects at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub body_pos: Array2<f64>,
    pub body_rot: Array2<f64>,
    pub obj_pos: Array2<f64>,
    pub obj_rot: Array2<f64>,
}

impl Snapshot {
    pub fn of(sim: &Simulator) -> Result<Self, RlError> {
        let st = sim.state();
        let n = st.links.len();
        let mut body_pos = Array2::zeros((n, 2));
        let mut body_rot = Array2::zeros((n, 2));
        for (i, l) in st.links.iter().enumerate() {
            body_pos[[i, 0]] = l.pos.x;
            body_pos[[i, 1]] = l.pos.y;
            let f = encode_angle(l.angle)?;
            body_rot[[i, 0]] = f[0];
            body_rot[[i, 1]] = f[1];
        }
        let f = encode_angle(st.disc.angle)?;
        Ok(Self {
            body_pos,
            body_rot,
            obj_pos: Array2::from_shape_vec((1, 2), vec![st.disc.pos.x, st.disc.pos.y]).expect("1x2"),
            obj_rot: Array2::from_shape_vec((1, 2), f.to_vec()).expect("1x2"),
        })
    }

    /// Snapshot one frame earlier according to the given per-frame deltas.
    pub fn rewind(&self, body: &BodyMotion, object: &BodyMotion) -> Self {
        Self {
            body_pos: &self.body_pos - &body.pos_vel,
            body_rot: &self.body_rot - &body.rot_vel,
            obj_pos: &self.obj_pos - &object.pos_vel,
            obj_rot: &self.obj_rot - &object.rot_vel,
        }
    }
}

/// World-frame readout with velocities as deltas from `prev`.
pub fn readout(sim: &Simulator, cur: &Snapshot, prev: &Snapshot, contact_bodies: &[usize]) -> WorldReadout {
    let st = sim.state();
    let mut forces = Array2::zeros((contact_bodies.len(), 2));
    for (r, &b) in contact_bodies.iter().enumerate() {
        forces[[r, 0]] = st.link_forces[b].x;
        forces[[r, 1]] = st.link_forces[b].y;
    }
    WorldReadout {
        body: BodyMotion {
            pos: cur.body_pos.clone(),
            rot: cur.body_rot.clone(),
            pos_vel: &cur.body_pos - &prev.body_pos,
            rot_vel: &cur.body_rot - &prev.body_rot,
        },
        contact_forces: forces,
        object: BodyMotion {
            pos: cur.obj_pos.clone(),
            rot: cur.obj_rot.clone(),
            pos_vel: &cur.obj_pos - &prev.obj_pos,
            rot_vel: &cur.obj_rot - &prev.obj_rot,
        },
    }
}

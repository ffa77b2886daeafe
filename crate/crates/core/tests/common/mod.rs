#![allow(dead_code)]

use hoi_core::contact::ContactGraphState;
use hoi_core::model::{BodyMotion, InteractionGraph};
use hoi_core::reward::HoiFrameRef;
use ndarray::{Array2, Array3};
use rand::Rng;

pub const BODIES: usize = 4;
pub const OBJECTS: usize = 1;
pub const CONTACT_BODIES: usize = 2;
pub const EDGES: usize = 3;

/// One frame of every reward input, with independent random entries.
#[derive(Clone, Debug)]
pub struct Frame {
    pub body: BodyMotion,
    pub object: BodyMotion,
    pub ig: InteractionGraph,
    pub cg: ContactGraphState,
}

impl Frame {
    pub fn view(&self) -> HoiFrameRef<'_> {
        HoiFrameRef { body: &self.body, object: &self.object, ig: &self.ig, cg: &self.cg }
    }
}

fn motion<R: Rng>(rows: usize, scale: f64, rng: &mut R) -> BodyMotion {
    let mut m = || Array2::from_shape_fn((rows, 2), |_| rng.gen_range(-scale..scale));
    BodyMotion { pos: m(), rot: m(), pos_vel: m(), rot_vel: m() }
}

pub fn random_frame<R: Rng>(rng: &mut R, scale: f64) -> Frame {
    Frame {
        body: motion(BODIES, scale, rng),
        object: motion(OBJECTS, scale, rng),
        ig: InteractionGraph {
            vectors: Array3::from_shape_fn((CONTACT_BODIES, OBJECTS, 2), |_| rng.gen_range(-scale..scale)),
        },
        cg: ContactGraphState::from_edges((0..EDGES).map(|_| rng.gen_range(0..2)).collect()),
    }
}

/// A reference frame and a simulated frame near it.
pub fn random_pair<R: Rng>(rng: &mut R) -> (Frame, Frame) {
    let reference = random_frame(rng, 1.0);
    let mut sim = reference.clone();
    let noise = rng.gen_range(0.0..0.3);
    for a in [
        &mut sim.body.pos,
        &mut sim.body.rot,
        &mut sim.body.pos_vel,
        &mut sim.body.rot_vel,
        &mut sim.object.pos,
        &mut sim.object.rot,
        &mut sim.object.pos_vel,
        &mut sim.object.rot_vel,
    ] {
        a.mapv_inplace(|x| x + rng.gen_range(-noise..noise));
    }
    sim.ig.vectors.mapv_inplace(|x| x + rng.gen_range(-noise..noise));
    sim.cg = ContactGraphState::from_edges((0..EDGES).map(|_| rng.gen_range(0..2)).collect());
    (reference, sim)
}

//! Browser bindings: play a generated clip, drive the toy arm through the
//! simulator with per-joint offsets on top of the reference pose, and kick the
//! ball, with the reward channels of every composition mode reported per step.

use std::sync::Arc;

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use hoi_core::contact::extract_cg;
use hoi_core::demo::{generate, DemoScript, TaskKind};
use hoi_core::math::Vec2;
use hoi_core::model::rotation::decode_angle;
use hoi_core::model::{compute_ig, RefHoiSequence};
use hoi_core::physics::{link_segment, ArticulatedModel, BodyState, DiscObject, SimConfig, Simulator, WorldState};
use hoi_core::reward::{total_reward, HoiFrameRef, RewardMode, RewardWeights};
use hoi_core::rl::state::{readout, Snapshot};

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn task_names() -> String {
    let names: Vec<&str> = TaskKind::ALL.iter().map(|t| t.name()).collect();
    json!(names).to_string()
}

#[wasm_bindgen]
pub struct Playground {
    seq: Arc<RefHoiSequence>,
    sim: Simulator,
    initial: WorldState,
    weights: RewardWeights,
    t: usize,
    prev: Snapshot,
    cur: Snapshot,
}

fn scene(sim: &Simulator, state: &WorldState) -> Value {
    let links: Vec<Value> = (0..state.links.len())
        .map(|i| {
            let (a, b) = link_segment(sim.model(), state, i);
            json!([a.x, a.y, b.x, b.y, sim.model().links[i].radius])
        })
        .collect();
    let d = &state.disc;
    json!({ "links": links, "ball": [d.pos.x, d.pos.y, sim.disc_radius(), d.angle] })
}

#[wasm_bindgen]
impl Playground {
    #[wasm_bindgen(constructor)]
    pub fn new(task: &str) -> Result<Playground, JsError> {
        let kind: TaskKind = task.parse().map_err(js_err)?;
        let model = ArticulatedModel::toy_arm();
        let disc = DiscObject::ball();
        let seq = Arc::new(generate(&DemoScript::preset(kind), &model, &disc).map_err(js_err)?);
        let mut sim = Simulator::new(model, disc, SimConfig::default()).map_err(js_err)?;
        sim.reset_to_frame(&seq, 0).map_err(js_err)?;
        let initial = sim.state().clone();
        let cur = Snapshot::of(&sim).map_err(js_err)?;
        let prev = cur.rewind(&seq.frames[0].body, &seq.frames[0].object);
        Ok(Playground { seq, sim, initial, weights: RewardWeights::ball_play(), t: 0, prev, cur })
    }

    pub fn frame_count(&self) -> usize {
        self.seq.len()
    }

    pub fn fps(&self) -> u32 {
        self.seq.fps
    }

    pub fn time(&self) -> usize {
        self.t
    }

    pub fn dof(&self) -> usize {
        self.sim.model().dof()
    }

    pub fn joint_names(&self) -> String {
        let names: Vec<&str> = self.sim.model().joints.iter().map(|j| j.name.as_str()).collect();
        json!(names).to_string()
    }

    /// Geometry and contact labels of reference frame `k` as JSON.
    pub fn reference(&self, k: usize) -> Result<String, JsError> {
        let mut probe = self.sim.clone();
        probe.reset_to_frame(&self.seq, k.min(self.seq.len() - 1)).map_err(js_err)?;
        let mut s = scene(&probe, probe.state());
        s["cg"] = json!(self.seq.frames[k.min(self.seq.len() - 1)].cg.edges);
        Ok(s.to_string())
    }

    /// Current simulated geometry as JSON.
    pub fn scene(&self) -> String {
        scene(&self.sim, self.sim.state()).to_string()
    }

    pub fn reset(&mut self) -> Result<(), JsError> {
        self.sim.set_state(self.initial.clone()).map_err(js_err)?;
        self.cur = Snapshot::of(&self.sim).map_err(js_err)?;
        self.prev = self.cur.rewind(&self.seq.frames[0].body, &self.seq.frames[0].object);
        self.t = 0;
        Ok(())
    }

    /// Tracks the next reference pose plus `offsets` (radians per joint) for
    /// one control step and scores the result against that frame.
    pub fn step(&mut self, offsets: &[f64]) -> Result<String, JsError> {
        if self.t + 1 >= self.seq.len() {
            return Err(JsError::new("end of clip; reset first"));
        }
        let next = &self.seq.frames[self.t + 1];
        let angles = (0..next.body.rot.nrows())
            .map(|b| decode_angle(&next.body.rot.row(b).to_vec()))
            .collect::<Result<Vec<f64>, _>>()
            .map_err(js_err)?;
        let targets: Vec<f64> = self
            .sim
            .model()
            .joints
            .iter()
            .enumerate()
            .map(|(i, j)| angles[j.child] - angles[j.parent] + offsets.get(i).copied().unwrap_or(0.0))
            .collect();
        self.sim.step_control(&targets).map_err(js_err)?;
        self.t += 1;
        self.prev = std::mem::replace(&mut self.cur, Snapshot::of(&self.sim).map_err(js_err)?);

        let cg = extract_cg(&self.sim.read_contacts(), &self.seq.cg_map).map_err(js_err)?;
        let w = readout(&self.sim, &self.cur, &self.prev, &self.seq.layout.contact_body_indices);
        let ig = compute_ig(w.body.pos.view(), w.object.pos.view(), &self.seq.layout.contact_body_indices)
            .map_err(js_err)?;
        let sim_ref = HoiFrameRef { body: &w.body, object: &w.object, ig: &ig, cg: &cg };
        let ref_ref = HoiFrameRef { body: &next.body, object: &next.object, ig: &next.ig, cg: &next.cg };
        let mut totals = serde_json::Map::new();
        let mut channels = Value::Null;
        for mode in RewardMode::ALL {
            let r = total_reward(sim_ref, ref_ref, &self.weights, mode).map_err(js_err)?;
            totals.insert(mode.name().into(), json!(r.r_total));
            channels = json!({ "r_b": r.r_b, "r_o": r.r_o, "r_ig": r.r_ig, "r_cg": r.r_cg });
        }
        let mut s = scene(&self.sim, self.sim.state());
        s["t"] = json!(self.t);
        s["cg"] = json!(cg.edges);
        s["ref_cg"] = json!(next.cg.edges);
        s["channels"] = channels;
        s["totals"] = Value::Object(totals);
        s["done"] = json!(self.t + 1 >= self.seq.len());
        Ok(s.to_string())
    }

    /// Adds `(vx, vy)` m/s to the ball velocity.
    pub fn kick(&mut self, vx: f64, vy: f64) {
        let d = self.sim.state().disc;
        self.sim.set_disc(BodyState { vel: d.vel + Vec2::new(vx, vy), ..d });
    }
}

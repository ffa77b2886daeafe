//! Per-frame success, MPJPE, contact accuracy, policy evaluation and
//! rectified-sequence export.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use ndarray::{stack, Array2, Array3, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::contact::{extract_cg, ContactError, ContactGraphState};
use crate::model::{FrameTracks, ModelError, RefHoiSequence};
use crate::physics::{ArticulatedModel, DiscObject, SimConfig, SimError, Simulator};
use crate::rl::policy::{sample_action, PolicyModel};
use crate::rl::state::Snapshot;
use crate::rl::{HoiEnv, RlError, TerminationReason};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("rollout diverged at frame {0}")]
    Diverged(usize),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Contact(#[from] ContactError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessThresholds {
    /// Metres of object position error.
    pub object: f64,
    /// Metres of mean body position error.
    pub body: f64,
}

impl Default for SuccessThresholds {
    fn default() -> Self {
        Self { object: 0.2, body: 0.1 }
    }
}

/// Positions and contact labels of one frame.
#[derive(Clone, Copy, Debug)]
pub struct FramePose<'a> {
    pub body: ArrayView2<'a, f64>,
    pub object: ArrayView2<'a, f64>,
    pub cg: &'a [u8],
}

/// Errors of one simulated frame against its reference, in metres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameErrors {
    /// Mean over bodies.
    pub body: f64,
    /// Largest over objects.
    pub object: f64,
    /// Mean squared edge error.
    pub cg: f64,
}

fn row_distances<'a>(a: ArrayView2<'a, f64>, b: ArrayView2<'a, f64>) -> impl Iterator<Item = f64> + 'a {
    a.into_outer_iter()
        .zip(b.into_outer_iter())
        .map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
}

pub fn frame_errors(sim: &FramePose, reference: &FramePose) -> Result<FrameErrors, EvalError> {
    if sim.body.dim() != reference.body.dim()
        || sim.object.dim() != reference.object.dim()
        || sim.cg.len() != reference.cg.len()
        || sim.body.nrows() == 0
    {
        return Err(EvalError::Shape("simulated and reference frames are not aligned".into()));
    }
    let body = row_distances(sim.body, reference.body).sum::<f64>() / sim.body.nrows() as f64;
    let object = row_distances(sim.object, reference.object).fold(0.0, f64::max);
    let wrong = sim.cg.iter().zip(reference.cg).filter(|(a, b)| a != b).count();
    let cg = if sim.cg.is_empty() { 0.0 } else { wrong as f64 / sim.cg.len() as f64 };
    Ok(FrameErrors { body, object, cg })
}

/// True when object and mean body errors are within the thresholds and every
/// contact edge matches.
pub fn frame_success(sim: &FramePose, reference: &FramePose, th: &SuccessThresholds) -> Result<bool, EvalError> {
    let e = frame_errors(sim, reference)?;
    Ok(e.object <= th.object && e.body <= th.body && sim.cg == reference.cg)
}

/// Mean per-joint Euclidean distance over `frames × joints × dim` arrays, in millimetres.
pub fn mpjpe(sim: ArrayView3<f64>, reference: ArrayView3<f64>) -> Result<f64, EvalError> {
    if sim.dim() != reference.dim() {
        return Err(EvalError::Shape(format!("{:?} vs {:?}", sim.dim(), reference.dim())));
    }
    let (t, j, _) = sim.dim();
    if t * j == 0 {
        return Err(EvalError::Shape("no joints to compare".into()));
    }
    let sum: f64 = sim
        .outer_iter()
        .zip(reference.outer_iter())
        .map(|(a, b)| row_distances(a, b).sum::<f64>())
        .sum();
    Ok(1000.0 * sum / (t * j) as f64)
}

/// Mean over frames of the edge-vector MSE.
pub fn contact_accuracy(sim: &[ContactGraphState], reference: &[ContactGraphState]) -> Result<f64, EvalError> {
    if sim.len() != reference.len() || sim.is_empty() {
        return Err(EvalError::Shape(format!("{} vs {} frames", sim.len(), reference.len())));
    }
    let mut total = 0.0;
    for (a, b) in sim.iter().zip(reference) {
        if a.len() != b.len() {
            return Err(EvalError::Shape("edge counts differ".into()));
        }
        total += crate::model::mse(a.as_f64().iter(), b.as_f64().iter());
    }
    Ok(total / sim.len() as f64)
}

/// Simulated poses captured at consecutive control frames, starting at frame 0.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Recording {
    pub body_pos: Vec<Array2<f64>>,
    pub body_rot: Vec<Array2<f64>>,
    pub obj_pos: Vec<Array2<f64>>,
    pub obj_rot: Vec<Array2<f64>>,
    pub cg: Vec<ContactGraphState>,
    /// Largest overlap depth per frame.
    pub penetration: Vec<f64>,
    pub reason: Option<TerminationReason>,
}

impl Recording {
    pub fn len(&self) -> usize {
        self.cg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cg.is_empty()
    }

    fn push(&mut self, sim: &Simulator, cg: ContactGraphState) -> Result<(), EvalError> {
        let s = Snapshot::of(sim)?;
        self.body_pos.push(s.body_pos);
        self.body_rot.push(s.body_rot);
        self.obj_pos.push(s.obj_pos);
        self.obj_rot.push(s.obj_rot);
        self.cg.push(cg);
        self.penetration.push(sim.max_penetration());
        Ok(())
    }

    pub fn frame(&self, f: usize) -> FramePose<'_> {
        FramePose { body: self.body_pos[f].view(), object: self.obj_pos[f].view(), cg: &self.cg[f].edges }
    }

    /// Builds a sequence with the layout, rate and contact map of `template`.
    pub fn to_sequence(&self, template: &RefHoiSequence) -> Result<RefHoiSequence, EvalError> {
        let st = |v: &[Array2<f64>]| -> Result<Array3<f64>, EvalError> {
            let views: Vec<_> = v.iter().map(|a| a.view()).collect();
            stack(Axis(0), &views).map_err(|e| EvalError::Shape(e.to_string()))
        };
        let tracks = FrameTracks {
            body_pos: st(&self.body_pos)?,
            body_rot: st(&self.body_rot)?,
            obj_pos: st(&self.obj_pos)?,
            obj_rot: st(&self.obj_rot)?,
            cg: self.cg.clone(),
        };
        Ok(RefHoiSequence::from_tracks(
            template.layout.clone(),
            template.fps,
            template.object_names.clone(),
            template.cg_map.clone(),
            tracks,
        )?)
    }
}

fn ref_frame(seq: &RefHoiSequence, f: usize) -> FramePose<'_> {
    let fr = &seq.frames[f];
    FramePose { body: fr.body.pos.view(), object: fr.object.pos.view(), cg: &fr.cg.edges }
}

/// Runs the deterministic policy from frame 0. With `early_termination` the
/// rollout stops at the first deviation; divergence always stops it.
pub fn rollout(
    policy: &PolicyModel,
    cfg: &ExperimentConfig,
    seq: &Arc<RefHoiSequence>,
    early_termination: bool,
) -> Result<Recording, EvalError> {
    let settings = crate::rl::EnvSettings { early_termination, ..cfg.env_settings() };
    let mut env =
        HoiEnv::new(Arc::clone(seq), cfg.sim.model.clone(), cfg.sim.disc.clone(), cfg.sim.physics.clone(), settings)?;
    let mut rec = Recording::default();
    rec.push(env.simulator(), env.contact_graph().clone())?;
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    while !env.is_done() {
        let (action, _) = sample_action(policy, &env.observation()?, &mut rng, true)?;
        let out = env.step(&action)?;
        if out.reason == Some(TerminationReason::Diverged) {
            rec.reason = out.reason;
            break;
        }
        rec.push(env.simulator(), out.cg)?;
        rec.reason = out.reason;
    }
    Ok(rec)
}

/// Per-frame metrics averaged over the repeats that reached the frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub success: f64,
    pub body_err: Option<f64>,
    pub obj_err: Option<f64>,
    pub cg_err: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub succ: f64,
    pub e_b_mpjpe: f64,
    pub e_o_mpjpe: f64,
    pub e_cg: f64,
    /// Fraction of repeats succeeding at each frame.
    pub success_mask: Vec<f64>,
    pub episodes: usize,
    pub terminations: BTreeMap<String, usize>,
    pub frames: Vec<FrameMetrics>,
}

/// Running mean that reproduces a repeated value exactly.
#[derive(Clone, Copy, Default)]
struct Mean {
    value: f64,
    count: usize,
}

impl Mean {
    fn push(&mut self, x: f64) {
        self.count += 1;
        self.value += (x - self.value) / self.count as f64;
    }

    fn get(self) -> Option<f64> {
        (self.count > 0).then_some(self.value)
    }
}

impl EvalReport {
    /// Scores each recording against the reference and averages over them.
    /// Frames a recording never reached count as failures and are left out of
    /// its error means.
    pub fn from_recordings(
        recordings: &[Recording],
        reference: &RefHoiSequence,
        th: &SuccessThresholds,
    ) -> Result<Self, EvalError> {
        let t = reference.len();
        if recordings.is_empty() {
            return Err(EvalError::Shape("no recordings".into()));
        }
        let mut success = vec![Mean::default(); t];
        let mut per_frame = vec![[Mean::default(); 3]; t];
        let mut totals = [Mean::default(); 4];
        let mut terminations = BTreeMap::new();
        let st = |v: &[ArrayView2<f64>]| stack(Axis(0), v).map_err(|e| EvalError::Shape(e.to_string()));
        for rec in recordings {
            if rec.len() > t || rec.is_empty() {
                return Err(EvalError::Shape(format!("recording has {} frames, reference {t}", rec.len())));
            }
            if let Some(r) = rec.reason {
                *terminations.entry(r.name().to_string()).or_insert(0) += 1;
            }
            let mut hits = 0usize;
            let (mut sim_b, mut ref_b, mut sim_o, mut ref_o) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for f in 0..t {
                if f >= rec.len() {
                    success[f].push(0.0);
                    continue;
                }
                let (s, r) = (rec.frame(f), ref_frame(reference, f));
                let e = frame_errors(&s, &r)?;
                let ok = frame_success(&s, &r, th)?;
                hits += ok as usize;
                success[f].push(if ok { 1.0 } else { 0.0 });
                per_frame[f][0].push(e.body);
                per_frame[f][1].push(e.object);
                per_frame[f][2].push(e.cg);
                sim_b.push(rec.body_pos[f].view());
                ref_b.push(r.body);
                sim_o.push(rec.obj_pos[f].view());
                ref_o.push(r.object);
            }
            let ref_cg: Vec<_> = reference.frames[..rec.len()].iter().map(|f| f.cg.clone()).collect();
            totals[0].push(hits as f64 / t as f64);
            totals[1].push(mpjpe(st(&sim_b)?.view(), st(&ref_b)?.view())?);
            totals[2].push(mpjpe(st(&sim_o)?.view(), st(&ref_o)?.view())?);
            totals[3].push(contact_accuracy(&rec.cg, &ref_cg)?);
        }
        let success_mask: Vec<f64> = success.iter().map(|m| m.value).collect();
        let frames = (0..t)
            .map(|f| FrameMetrics {
                frame: f,
                success: success_mask[f],
                body_err: per_frame[f][0].get(),
                obj_err: per_frame[f][1].get(),
                cg_err: per_frame[f][2].get(),
            })
            .collect();
        Ok(Self {
            succ: totals[0].value,
            e_b_mpjpe: totals[1].value,
            e_o_mpjpe: totals[2].value,
            e_cg: totals[3].value,
            success_mask,
            episodes: recordings.len(),
            terminations,
            frames,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// `frame,success,body_err,obj_err,cg_err`; unreached frames leave the errors empty.
    pub fn write_frame_csv(&self, path: &Path) -> Result<(), EvalError> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "frame,success,body_err,obj_err,cg_err")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for m in &self.frames {
            writeln!(f, "{},{},{},{},{}", m.frame, m.success, opt(m.body_err), opt(m.obj_err), opt(m.cg_err))?;
        }
        Ok(())
    }
}

/// Runs `repeats` deterministic rollouts with early termination and scores them.
pub fn evaluate(
    policy: &PolicyModel,
    cfg: &ExperimentConfig,
    seq: &RefHoiSequence,
    repeats: usize,
) -> Result<EvalReport, EvalError> {
    if repeats == 0 {
        return Err(EvalError::Shape("repeats must be at least 1".into()));
    }
    let seq = Arc::new(seq.clone());
    let recordings = (0..repeats).map(|_| rollout(policy, cfg, &seq, true)).collect::<Result<Vec<_>, _>>()?;
    EvalReport::from_recordings(&recordings, &seq, &SuccessThresholds::default())
}

/// Scores a recorded sequence frame-by-frame against a reference.
pub fn evaluate_sequence(sim: &RefHoiSequence, reference: &RefHoiSequence) -> Result<EvalReport, EvalError> {
    if sim.len() != reference.len() {
        return Err(EvalError::Shape(format!("{} vs {} frames", sim.len(), reference.len())));
    }
    let rec = Recording {
        body_pos: sim.frames.iter().map(|f| f.body.pos.clone()).collect(),
        body_rot: sim.frames.iter().map(|f| f.body.rot.clone()).collect(),
        obj_pos: sim.frames.iter().map(|f| f.object.pos.clone()).collect(),
        obj_rot: sim.frames.iter().map(|f| f.object.rot.clone()).collect(),
        cg: sim.frames.iter().map(|f| f.cg.clone()).collect(),
        penetration: vec![0.0; sim.len()],
        reason: None,
    };
    EvalReport::from_recordings(&[rec], reference, &SuccessThresholds::default())
}

/// Places the simulator on every reference frame in turn (with the settle
/// pass) and records the resulting poses, contacts and overlap depths.
pub fn kinematic_replay(
    seq: &RefHoiSequence,
    model: &ArticulatedModel,
    disc: &DiscObject,
    config: &SimConfig,
) -> Result<Recording, EvalError> {
    let mut sim = Simulator::new(model.clone(), disc.clone(), config.clone())?;
    let mut rec = Recording::default();
    for f in 0..seq.len() {
        sim.reset_to_frame(seq, f)?;
        let cg = extract_cg(&sim.read_contacts(), &seq.cg_map)?;
        rec.push(&sim, cg)?;
    }
    Ok(rec)
}

/// Rolls the policy out over the whole clip without early termination and
/// returns the simulated motion as a sequence at the reference rate.
pub fn export_rectified(
    policy: &PolicyModel,
    cfg: &ExperimentConfig,
    seq: &RefHoiSequence,
) -> Result<(RefHoiSequence, Recording), EvalError> {
    let shared = Arc::new(seq.clone());
    let rec = rollout(policy, cfg, &shared, false)?;
    if rec.len() < seq.len() {
        return Err(EvalError::Diverged(rec.len()));
    }
    let out = rec.to_sequence(seq)?;
    Ok((out, rec))
}

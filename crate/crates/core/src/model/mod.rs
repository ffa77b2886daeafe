//! Dimension-generic HOI state types.
//!
//! A reference frame bundles body motion, object motion, the interaction
//! graph (IG) and the contact graph (CG) labels. Velocities are per-frame
//! discrete differences, never per-second rates; `fps` converts when needed.

pub mod frame;
pub mod io;
pub mod rotation;

use std::collections::BTreeSet;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use thiserror::Error;

use crate::contact::{AggregationMap, ContactError, ContactGraphState};

pub use frame::{from_root_local, to_root_local, RootFrame, RootPose, WorldReadout};
pub use io::{load_sequence, load_sequence_with_report, save_sequence, LoadReport, VelocityWarning};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: axis `{axis}` expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        axis: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("interaction graph needs at least one contact body")]
    EmptyContactSet,
    #[error("frame {frame}: {detail}")]
    Frame { frame: usize, detail: String },
    #[error("frame {frame}: contact-graph edge {edge} has non-binary value {value}")]
    NonBinaryEdge { frame: usize, edge: usize, value: f64 },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error(transparent)]
    Contact(#[from] ContactError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Body count, actuation and feature widths of an articulated subject.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyLayout {
    pub body_count: usize,
    pub actuated_dof: usize,
    pub spatial_dim: usize,
    pub rot_feature_dim: usize,
    pub body_names: Vec<String>,
    pub contact_body_indices: Vec<usize>,
}

impl BodyLayout {
    pub fn new(
        body_names: Vec<String>,
        actuated_dof: usize,
        spatial_dim: usize,
        contact_body_indices: Vec<usize>,
    ) -> Result<Self, ModelError> {
        let rot_feature_dim = match spatial_dim {
            2 => 2,
            3 => 6,
            d => return Err(ModelError::InvalidLayout(format!("spatial dim {d} not in {{2, 3}}"))),
        };
        let layout = Self {
            body_count: body_names.len(),
            actuated_dof,
            spatial_dim,
            rot_feature_dim,
            body_names,
            contact_body_indices,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidLayout(m));
        if self.body_count < 2 {
            return bad(format!("need at least 2 bodies, got {}", self.body_count));
        }
        if self.actuated_dof < 1 {
            return bad("need at least one actuated DoF".into());
        }
        if self.body_names.len() != self.body_count {
            return bad(format!(
                "{} body names for {} bodies",
                self.body_names.len(),
                self.body_count
            ));
        }
        if self.body_names.iter().collect::<BTreeSet<_>>().len() != self.body_count {
            return bad("body names must be unique".into());
        }
        let expected_r = match self.spatial_dim {
            2 => 2,
            3 => 6,
            d => return bad(format!("spatial dim {d} not in {{2, 3}}")),
        };
        if self.rot_feature_dim != expected_r {
            return bad(format!(
                "rotation feature width {} does not match spatial dim {}",
                self.rot_feature_dim, self.spatial_dim
            ));
        }
        if let Some(&i) = self.contact_body_indices.iter().find(|&&i| i >= self.body_count) {
            return bad(format!("contact body index {i} out of range"));
        }
        if self.contact_body_indices.iter().collect::<BTreeSet<_>>().len()
            != self.contact_body_indices.len()
        {
            return bad("duplicate contact body index".into());
        }
        Ok(())
    }

    pub fn contact_count(&self) -> usize {
        self.contact_body_indices.len()
    }
}

/// Positions, rotation features and their per-frame deltas for `rows` entities.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyMotion {
    pub pos: Array2<f64>,
    pub rot: Array2<f64>,
    pub pos_vel: Array2<f64>,
    pub rot_vel: Array2<f64>,
}

/// Object motion has the same four channels as body motion.
pub type ObjectMotion = BodyMotion;

impl BodyMotion {
    pub fn zeros(rows: usize, spatial_dim: usize, rot_dim: usize) -> Self {
        Self {
            pos: Array2::zeros((rows, spatial_dim)),
            rot: Array2::zeros((rows, rot_dim)),
            pos_vel: Array2::zeros((rows, spatial_dim)),
            rot_vel: Array2::zeros((rows, rot_dim)),
        }
    }

    /// A motion at rest: velocities zero.
    pub fn at_rest(pos: Array2<f64>, rot: Array2<f64>) -> Self {
        let pos_vel = Array2::zeros(pos.raw_dim());
        let rot_vel = Array2::zeros(rot.raw_dim());
        Self { pos, rot, pos_vel, rot_vel }
    }

    pub fn rows(&self) -> usize {
        self.pos.nrows()
    }

    pub fn check_shape(&self, what: &str, rows: usize, d: usize, r: usize) -> Result<(), ModelError> {
        check_dims(what, "rows", rows, self.pos.nrows())?;
        check_dims(what, "rows", rows, self.rot.nrows())?;
        check_dims(what, "rows", rows, self.pos_vel.nrows())?;
        check_dims(what, "rows", rows, self.rot_vel.nrows())?;
        check_dims(what, "spatial", d, self.pos.ncols())?;
        check_dims(what, "spatial", d, self.pos_vel.ncols())?;
        check_dims(what, "rotation", r, self.rot.ncols())?;
        check_dims(what, "rotation", r, self.rot_vel.ncols())?;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        [&self.pos, &self.rot, &self.pos_vel, &self.rot_vel]
            .iter()
            .all(|a| a.iter().all(|v| v.is_finite()))
    }
}

pub(crate) fn check_dims(
    what: &str,
    axis: &'static str,
    expected: usize,
    found: usize,
) -> Result<(), ModelError> {
    if expected != found {
        return Err(ModelError::DimensionMismatch { what: what.to_string(), axis, expected, found });
    }
    Ok(())
}

/// Interaction graph: `n × m × d` vectors from each object to each contact body.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionGraph {
    pub vectors: Array3<f64>,
}

impl InteractionGraph {
    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.vectors.iter().copied()
    }
}

/// One reference HOI frame.
#[derive(Clone, Debug, PartialEq)]
pub struct RefHoiState {
    pub body: BodyMotion,
    pub object: ObjectMotion,
    pub ig: InteractionGraph,
    pub cg: ContactGraphState,
}

/// A reference HOI clip sampled at a fixed rate.
#[derive(Clone, Debug, PartialEq)]
pub struct RefHoiSequence {
    pub layout: BodyLayout,
    pub fps: u32,
    pub object_names: Vec<String>,
    pub cg_map: AggregationMap,
    pub frames: Vec<RefHoiState>,
}

/// Simulated HOI observation in root-local coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct SimHoiState {
    pub root_height: f64,
    pub body: BodyMotion,
    /// `n × d` net contact force per contact body.
    pub contact_forces: Array2<f64>,
    pub object: ObjectMotion,
}

/// Per-frame deltas along the leading (time) axis; frame 0 gets zeros.
pub fn diff_frames(values: &Array3<f64>) -> Array3<f64> {
    let mut out = Array3::zeros(values.raw_dim());
    let t = values.len_of(Axis(0));
    if t > 1 {
        let delta = &values.slice(s![1.., .., ..]) - &values.slice(s![..-1, .., ..]);
        out.slice_mut(s![1.., .., ..]).assign(&delta);
    }
    out
}

/// Discrete-difference velocities of a `T × B × d` position track and a
/// `T × B × R` rotation-feature track.
pub fn compute_velocities(
    positions: &Array3<f64>,
    rotations: &Array3<f64>,
) -> Result<(Array3<f64>, Array3<f64>), ModelError> {
    let (tp, bp, _) = positions.dim();
    let (tr, br, _) = rotations.dim();
    if tp == 0 {
        return Err(ModelError::Schema("need at least one frame".into()));
    }
    check_dims("velocity input", "frames", tp, tr)?;
    check_dims("velocity input", "bodies", bp, br)?;
    Ok((diff_frames(positions), diff_frames(rotations)))
}

/// Interaction graph vectors `body[i] - object[j]` for every contact body `i`.
pub fn compute_ig(
    body_pos: ArrayView2<f64>,
    object_pos: ArrayView2<f64>,
    contact_body_indices: &[usize],
) -> Result<InteractionGraph, ModelError> {
    if contact_body_indices.is_empty() {
        return Err(ModelError::EmptyContactSet);
    }
    check_dims("interaction graph", "spatial", body_pos.ncols(), object_pos.ncols())?;
    let (n, m, d) = (contact_body_indices.len(), object_pos.nrows(), body_pos.ncols());
    let mut vectors = Array3::zeros((n, m, d));
    for (i, &b) in contact_body_indices.iter().enumerate() {
        if b >= body_pos.nrows() {
            return Err(ModelError::InvalidLayout(format!("contact body index {b} out of range")));
        }
        for j in 0..m {
            for k in 0..d {
                vectors[[i, j, k]] = body_pos[[b, k]] - object_pos[[j, k]];
            }
        }
    }
    Ok(InteractionGraph { vectors })
}

/// Mean of squared elementwise differences over all elements.
pub fn mse<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y) in a.into_iter().zip(b) {
        let d = x - y;
        sum += d * d;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl RefHoiSequence {
    /// Assembles a sequence from raw position/rotation tracks, filling in
    /// velocities and IG.
    pub fn from_tracks(
        layout: BodyLayout,
        fps: u32,
        object_names: Vec<String>,
        cg_map: AggregationMap,
        tracks: FrameTracks,
    ) -> Result<Self, ModelError> {
        layout.validate()?;
        cg_map.validate()?;
        let t = tracks.body_pos.len_of(Axis(0));
        if t < 2 {
            return Err(ModelError::Schema(format!("need at least 2 frames, got {t}")));
        }
        let (d, r, b, m) = (layout.spatial_dim, layout.rot_feature_dim, layout.body_count, object_names.len());
        let check3 = |what: &str, a: &Array3<f64>, rows: usize, cols: usize| -> Result<(), ModelError> {
            check_dims(what, "frames", t, a.len_of(Axis(0)))?;
            check_dims(what, "rows", rows, a.len_of(Axis(1)))?;
            check_dims(what, "columns", cols, a.len_of(Axis(2)))
        };
        check3("body_pos", &tracks.body_pos, b, d)?;
        check3("body_rot", &tracks.body_rot, b, r)?;
        check3("obj_pos", &tracks.obj_pos, m, d)?;
        check3("obj_rot", &tracks.obj_rot, m, r)?;
        check_dims("cg_edges", "frames", t, tracks.cg.len())?;
        let (bpv, brv) = compute_velocities(&tracks.body_pos, &tracks.body_rot)?;
        let (opv, orv) = compute_velocities(&tracks.obj_pos, &tracks.obj_rot)?;
        let mut frames = Vec::with_capacity(t);
        for (f, cg) in tracks.cg.into_iter().enumerate() {
            let body = BodyMotion {
                pos: tracks.body_pos.index_axis(Axis(0), f).to_owned(),
                rot: tracks.body_rot.index_axis(Axis(0), f).to_owned(),
                pos_vel: bpv.index_axis(Axis(0), f).to_owned(),
                rot_vel: brv.index_axis(Axis(0), f).to_owned(),
            };
            let object = BodyMotion {
                pos: tracks.obj_pos.index_axis(Axis(0), f).to_owned(),
                rot: tracks.obj_rot.index_axis(Axis(0), f).to_owned(),
                pos_vel: opv.index_axis(Axis(0), f).to_owned(),
                rot_vel: orv.index_axis(Axis(0), f).to_owned(),
            };
            let ig = compute_ig(body.pos.view(), object.pos.view(), &layout.contact_body_indices)?;
            frames.push(RefHoiState { body, object, ig, cg });
        }
        let seq = Self { layout, fps, object_names, cg_map, frames };
        seq.validate()?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn object_count(&self) -> usize {
        self.object_names.len()
    }

    pub fn edge_count(&self) -> usize {
        self.cg_map.edge_count()
    }

    /// Seconds per frame.
    pub fn frame_dt(&self) -> f64 {
        1.0 / self.fps as f64
    }

    /// Raw tracks of the sequence (positions, rotations and labels).
    pub fn tracks(&self) -> FrameTracks {
        let stack = |f: &dyn Fn(&RefHoiState) -> &Array2<f64>| -> Array3<f64> {
            let views: Vec<_> = self.frames.iter().map(|fr| f(fr).view()).collect();
            ndarray::stack(Axis(0), &views).expect("frames share shapes")
        };
        FrameTracks {
            body_pos: stack(&|f| &f.body.pos),
            body_rot: stack(&|f| &f.body.rot),
            obj_pos: stack(&|f| &f.object.pos),
            obj_rot: stack(&|f| &f.object.rot),
            cg: self.frames.iter().map(|f| f.cg.clone()).collect(),
        }
    }

    /// Checks every structural invariant of the sequence.
    pub fn validate(&self) -> Result<(), ModelError> {
        self.layout.validate()?;
        self.cg_map.validate()?;
        if self.fps == 0 {
            return Err(ModelError::Schema("fps must be positive".into()));
        }
        if self.frames.len() < 2 {
            return Err(ModelError::Schema(format!("need at least 2 frames, got {}", self.frames.len())));
        }
        if self.object_names.is_empty() {
            return Err(ModelError::Schema("need at least one object".into()));
        }
        for name in self.layout.body_names.iter().chain(&self.object_names) {
            self.cg_map.node_of(name)?;
        }
        let (d, r, b, m, n) = (
            self.layout.spatial_dim,
            self.layout.rot_feature_dim,
            self.layout.body_count,
            self.object_names.len(),
            self.layout.contact_count(),
        );
        let j = self.cg_map.edge_count();
        for (fi, f) in self.frames.iter().enumerate() {
            let wrap = |e: ModelError| ModelError::Frame { frame: fi, detail: e.to_string() };
            f.body.check_shape("body", b, d, r).map_err(wrap)?;
            f.object.check_shape("object", m, d, r).map_err(wrap)?;
            if f.ig.vectors.dim() != (n, m, d) {
                return Err(ModelError::Frame {
                    frame: fi,
                    detail: format!("IG shape {:?}, expected {:?}", f.ig.vectors.dim(), (n, m, d)),
                });
            }
            if f.cg.len() != j {
                return Err(ModelError::Frame {
                    frame: fi,
                    detail: format!("{} CG edges, expected {j}", f.cg.len()),
                });
            }
            if let Some((edge, &value)) = f.cg.edges.iter().enumerate().find(|(_, &v)| v > 1) {
                return Err(ModelError::NonBinaryEdge { frame: fi, edge, value: value as f64 });
            }
            if !f.body.is_finite() || !f.object.is_finite() || !f.ig.vectors.iter().all(|v| v.is_finite()) {
                return Err(ModelError::Frame { frame: fi, detail: "non-finite values".into() });
            }
            for row in f.body.rot.rows().into_iter().chain(f.object.rot.rows()) {
                rotation::validate_feature(row.as_slice().unwrap_or(&row.to_vec()), 1e-6)
                    .map_err(wrap)?;
            }
        }
        Ok(())
    }
}

/// Raw per-frame tracks from which a sequence's derived fields are computed.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTracks {
    pub body_pos: Array3<f64>,
    pub body_rot: Array3<f64>,
    pub obj_pos: Array3<f64>,
    pub obj_rot: Array3<f64>,
    pub cg: Vec<ContactGraphState>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    #[test]
    fn constant_signal_has_zero_velocity() {
        let p = Array3::<f64>::zeros((2, 1, 1));
        let (v, _) = compute_velocities(&p, &Array3::zeros((2, 1, 2))).unwrap();
        assert_eq!(v.iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
    }

    #[test]
    fn difference_formula() {
        let p = Array3::from_shape_vec((3, 1, 1), vec![0.0, 1.0, 3.0]).unwrap();
        let (v, _) = compute_velocities(&p, &Array3::zeros((3, 1, 2))).unwrap();
        assert_eq!(v.iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn sinusoid_matches_elementwise_subtraction() {
        let t = 45;
        let p = Array3::from_shape_fn((t, 2, 2), |(f, b, k)| {
            ((f as f64 / 30.0) * (1.0 + b as f64) * std::f64::consts::TAU + k as f64).sin()
        });
        let (v, _) = compute_velocities(&p, &Array3::zeros((t, 2, 2))).unwrap();
        for f in 0..t {
            for b in 0..2 {
                for k in 0..2 {
                    let expected = if f == 0 { 0.0 } else { p[[f, b, k]] - p[[f - 1, b, k]] };
                    assert_eq!(v[[f, b, k]], expected);
                }
            }
        }
    }

    #[test]
    fn velocity_dimension_mismatch_names_axis() {
        let err = compute_velocities(&Array3::zeros((3, 2, 2)), &Array3::zeros((4, 2, 2))).unwrap_err();
        assert!(matches!(err, ModelError::DimensionMismatch { axis: "frames", .. }));
        let err = compute_velocities(&Array3::zeros((3, 2, 2)), &Array3::zeros((3, 5, 2))).unwrap_err();
        assert!(matches!(err, ModelError::DimensionMismatch { axis: "bodies", .. }));
    }

    #[test]
    fn ig_examples() {
        let body = array![[0.0, 0.0], [1.0, 2.0]];
        let obj = array![[0.0, 0.0]];
        let ig = compute_ig(body.view(), obj.view(), &[1]).unwrap();
        assert_eq!(ig.vectors.iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0]);
        let same = compute_ig(array![[0.3, 0.4]].view(), array![[0.3, 0.4]].view(), &[0]).unwrap();
        assert!(same.vectors.iter().all(|&v| v == 0.0));
        assert!(matches!(compute_ig(body.view(), obj.view(), &[]), Err(ModelError::EmptyContactSet)));
    }

    #[test]
    fn ig_pairwise_grid() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let body = Array2::from_shape_fn((5, 2), |_| rng.gen_range(-1.0..1.0));
        let obj = Array2::from_shape_fn((2, 2), |_| rng.gen_range(-1.0..1.0));
        let idx = [1, 4];
        let ig = compute_ig(body.view(), obj.view(), &idx).unwrap();
        for (i, &b) in idx.iter().enumerate() {
            for j in 0..2 {
                for k in 0..2 {
                    assert_eq!(ig.vectors[[i, j, k]], body[[b, k]] - obj[[j, k]]);
                }
            }
        }
    }

    #[test]
    fn layout_validation() {
        let names = |n: usize| (0..n).map(|i| format!("b{i}")).collect::<Vec<_>>();
        assert!(BodyLayout::new(names(4), 3, 2, vec![3]).is_ok());
        assert!(BodyLayout::new(names(1), 3, 2, vec![0]).is_err());
        assert!(BodyLayout::new(names(4), 0, 2, vec![3]).is_err());
        assert!(BodyLayout::new(names(4), 3, 2, vec![4]).is_err());
        assert!(BodyLayout::new(vec!["a".into(), "a".into()], 1, 2, vec![]).is_err());
        // the full-scale whole-body configuration fits the same type
        let full = BodyLayout::new(names(52), 51 * 3, 3, (30..52).collect()).unwrap();
        assert_eq!(full.rot_feature_dim, 6);
    }

    #[test]
    fn mse_is_mean_over_all_elements() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        let b = array![[1.0, 2.0], [3.0, 6.0]];
        assert_eq!(mse(a.iter(), b.iter()), 1.0);
    }
}

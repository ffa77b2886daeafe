//! Root-local (heading-aligned) coordinates.
//!
//! Positions are translated by the root position and rotated by the inverse
//! root heading; directions (velocities, forces, IG vectors, rotation features
//! and their deltas) are rotated only. In 3D the heading is the yaw about +z.

use ndarray::{Array2, ArrayViewMut1, Axis};

use super::rotation::{decode_angle, decode_matrix, yaw_of};
use super::{BodyMotion, ModelError, ObjectMotion, SimHoiState};

/// Heading-only rigid frame attached to the humanoid root.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RootFrame {
    pub spatial_dim: usize,
    pub origin: [f64; 3],
    pub heading: f64,
}

impl RootFrame {
    /// Builds the frame from a root position and rotation feature.
    pub fn from_pose(position: &[f64], rotation: &[f64]) -> Result<Self, ModelError> {
        let spatial_dim = position.len();
        let heading = match (spatial_dim, rotation.len()) {
            (2, 2) => decode_angle(rotation)?,
            (3, 6) => yaw_of(&decode_matrix(rotation)?)?,
            (d, r) => {
                return Err(ModelError::InvalidRotation(format!(
                    "root pose with spatial dim {d} and feature width {r}"
                )))
            }
        };
        if !position.iter().all(|v| v.is_finite()) {
            return Err(ModelError::NonFinite("root position".into()));
        }
        let mut origin = [0.0; 3];
        origin[..spatial_dim].copy_from_slice(position);
        Ok(Self { spatial_dim, origin, heading })
    }

    /// Global root height: y in the plane, z in space.
    pub fn height(&self) -> f64 {
        self.origin[self.spatial_dim - 1]
    }

    fn rotate_xy(v: &mut ArrayViewMut1<f64>, angle: f64) {
        let (s, c) = angle.sin_cos();
        let (x, y) = (v[0], v[1]);
        v[0] = c * x - s * y;
        v[1] = s * x + c * y;
    }

    pub fn vector_to_local(&self, v: &mut ArrayViewMut1<f64>) {
        Self::rotate_xy(v, -self.heading);
    }

    pub fn vector_to_world(&self, v: &mut ArrayViewMut1<f64>) {
        Self::rotate_xy(v, self.heading);
    }

    pub fn point_to_local(&self, p: &mut ArrayViewMut1<f64>) {
        for (i, x) in p.iter_mut().enumerate() {
            *x -= self.origin[i];
        }
        self.vector_to_local(p);
    }

    pub fn point_to_world(&self, p: &mut ArrayViewMut1<f64>) {
        self.vector_to_world(p);
        for (i, x) in p.iter_mut().enumerate() {
            *x += self.origin[i];
        }
    }

    /// Rotation features and their deltas are linear in the rotation, so the
    /// same map serves both.
    pub fn feature_to_local(&self, f: &mut ArrayViewMut1<f64>) {
        self.rotate_feature(f, -self.heading);
    }

    pub fn feature_to_world(&self, f: &mut ArrayViewMut1<f64>) {
        self.rotate_feature(f, self.heading);
    }

    fn rotate_feature(&self, f: &mut ArrayViewMut1<f64>, angle: f64) {
        match f.len() {
            2 => Self::rotate_xy(f, angle),
            6 => {
                // each stored column is a 3-vector; yaw rotates its xy part
                let (s, c) = angle.sin_cos();
                for col in 0..2 {
                    let (x, y) = (f[3 * col], f[3 * col + 1]);
                    f[3 * col] = c * x - s * y;
                    f[3 * col + 1] = s * x + c * y;
                }
            }
            _ => {}
        }
    }

    pub fn points_to_local(&self, a: &Array2<f64>) -> Array2<f64> {
        self.map_rows(a, |r| self.point_to_local(r))
    }

    pub fn vectors_to_local(&self, a: &Array2<f64>) -> Array2<f64> {
        self.map_rows(a, |r| self.vector_to_local(r))
    }

    pub fn features_to_local(&self, a: &Array2<f64>) -> Array2<f64> {
        self.map_rows(a, |r| self.feature_to_local(r))
    }

    pub fn points_to_world(&self, a: &Array2<f64>) -> Array2<f64> {
        self.map_rows(a, |r| self.point_to_world(r))
    }

    pub fn vectors_to_world(&self, a: &Array2<f64>) -> Array2<f64> {
        self.map_rows(a, |r| self.vector_to_world(r))
    }

    pub fn features_to_world(&self, a: &Array2<f64>) -> Array2<f64> {
        self.map_rows(a, |r| self.feature_to_world(r))
    }

    fn map_rows(&self, a: &Array2<f64>, f: impl Fn(&mut ArrayViewMut1<f64>)) -> Array2<f64> {
        let mut out = a.clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            f(&mut row);
        }
        out
    }

    pub fn body_to_local(&self, b: &BodyMotion) -> BodyMotion {
        BodyMotion {
            pos: self.points_to_local(&b.pos),
            rot: self.features_to_local(&b.rot),
            pos_vel: self.vectors_to_local(&b.pos_vel),
            rot_vel: self.features_to_local(&b.rot_vel),
        }
    }

    pub fn object_to_local(&self, o: &ObjectMotion) -> ObjectMotion {
        ObjectMotion {
            pos: self.points_to_local(&o.pos),
            rot: self.features_to_local(&o.rot),
            pos_vel: self.vectors_to_local(&o.pos_vel),
            rot_vel: self.features_to_local(&o.rot_vel),
        }
    }

    pub fn body_to_world(&self, b: &BodyMotion) -> BodyMotion {
        BodyMotion {
            pos: self.points_to_world(&b.pos),
            rot: self.features_to_world(&b.rot),
            pos_vel: self.vectors_to_world(&b.pos_vel),
            rot_vel: self.features_to_world(&b.rot_vel),
        }
    }

    pub fn object_to_world(&self, o: &ObjectMotion) -> ObjectMotion {
        ObjectMotion {
            pos: self.points_to_world(&o.pos),
            rot: self.features_to_world(&o.rot),
            pos_vel: self.vectors_to_world(&o.pos_vel),
            rot_vel: self.features_to_world(&o.rot_vel),
        }
    }
}

/// World-frame readout of a simulator (or of a kinematic frame).
#[derive(Clone, Debug, PartialEq)]
pub struct WorldReadout {
    pub body: BodyMotion,
    /// Net contact force per contact body, `n × spatial_dim`.
    pub contact_forces: Array2<f64>,
    pub object: ObjectMotion,
}

/// Root position and rotation feature.
#[derive(Clone, Debug, PartialEq)]
pub struct RootPose {
    pub position: Vec<f64>,
    pub rotation: Vec<f64>,
}

impl RootPose {
    pub fn of_body(body: &BodyMotion, root: usize) -> Self {
        Self {
            position: body.pos.row(root).to_vec(),
            rotation: body.rot.row(root).to_vec(),
        }
    }
}

pub fn to_root_local(world: &WorldReadout, root: &RootPose) -> Result<SimHoiState, ModelError> {
    let frame = RootFrame::from_pose(&root.position, &root.rotation)?;
    Ok(SimHoiState {
        root_height: frame.height(),
        body: frame.body_to_local(&world.body),
        contact_forces: frame.vectors_to_local(&world.contact_forces),
        object: frame.object_to_local(&world.object),
    })
}

/// Inverse of [`to_root_local`] given the same root pose.
pub fn from_root_local(local: &SimHoiState, root: &RootPose) -> Result<WorldReadout, ModelError> {
    let frame = RootFrame::from_pose(&root.position, &root.rotation)?;
    Ok(WorldReadout {
        body: frame.body_to_world(&local.body),
        contact_forces: frame.vectors_to_world(&local.contact_forces),
        object: frame.object_to_world(&local.object),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::rotation::{encode_angle, encode_matrix, mat_from_axis_angle};
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn motion(pos: Array2<f64>, rot: Array2<f64>) -> BodyMotion {
        let (pv, rv) = (pos.mapv(|v| v * 0.1), rot.mapv(|v| v * -0.2));
        BodyMotion { pos, rot, pos_vel: pv, rot_vel: rv }
    }

    fn readout_2d(rng: &mut ChaCha8Rng) -> WorldReadout {
        let b = 4;
        let pos = Array2::from_shape_fn((b, 2), |_| rng.gen_range(-2.0..2.0));
        let rot = Array2::from_shape_fn((b, 2), |(i, c)| {
            let a = 0.3 * i as f64 + 0.1;
            if c == 0 { a.cos() } else { a.sin() }
        });
        let body = motion(pos, rot);
        let object = ObjectMotion {
            pos: Array2::from_shape_fn((1, 2), |_| rng.gen_range(-2.0..2.0)),
            rot: array![[0.6, 0.8]],
            pos_vel: array![[0.01, -0.02]],
            rot_vel: array![[0.0, 0.01]],
        };
        WorldReadout { body, contact_forces: array![[3.0, -1.0]], object }
    }

    #[test]
    fn identity_root_pose_keeps_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = readout_2d(&mut rng);
        let root = RootPose { position: vec![0.0, 0.0], rotation: vec![1.0, 0.0] };
        let local = to_root_local(&w, &root).unwrap();
        assert_eq!(local.root_height, 0.0);
        assert_eq!(local.body, w.body);
        assert_eq!(local.object, w.object);
        assert_eq!(local.contact_forces, w.contact_forces);
    }

    #[test]
    fn pure_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut w = readout_2d(&mut rng);
        w.body.pos.row_mut(1).assign(&array![1.0, 1.0]);
        let root = RootPose { position: vec![1.0, 0.0], rotation: vec![1.0, 0.0] };
        let local = to_root_local(&w, &root).unwrap();
        assert_eq!(local.body.pos.row(1).to_vec(), vec![0.0, 1.0]);
    }

    #[test]
    fn zero_norm_root_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = readout_2d(&mut rng);
        let root = RootPose { position: vec![0.0, 0.0], rotation: vec![0.0, 0.0] };
        assert!(to_root_local(&w, &root).is_err());
    }

    #[test]
    fn random_pose_inverse_recovers_world() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let w = readout_2d(&mut rng);
            let h: f64 = rng.gen_range(-3.0..3.0);
            let root = RootPose {
                position: vec![rng.gen_range(-5.0..5.0), rng.gen_range(0.0..2.0)],
                rotation: encode_angle(h).unwrap().to_vec(),
            };
            let back = from_root_local(&to_root_local(&w, &root).unwrap(), &root).unwrap();
            let diff = (&back.body.pos - &w.body.pos).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b))
                + (&back.body.rot - &w.body.rot).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b))
                + (&back.object.pos - &w.object.pos).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b))
                + (&back.contact_forces - &w.contact_forces).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            assert!(diff < 1e-9, "round trip error {diff}");
        }
    }

    #[test]
    fn co_transformed_scenes_share_observations_2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for case in 0..200 {
            let w = readout_2d(&mut rng);
            let base = to_root_local(&w, &RootPose::of_body(&w.body, 0)).unwrap();
            // odd cases: horizontal shift only, which must keep the root height too
            let heading = if case % 2 == 0 { rng.gen_range(-3.0..3.0) } else { 0.0 };
            let shift = RootFrame {
                spatial_dim: 2,
                origin: [rng.gen_range(-3.0..3.0), if case % 2 == 0 { 0.7 } else { 0.0 }, 0.0],
                heading,
            };
            let moved = WorldReadout {
                body: shift.body_to_world(&w.body),
                contact_forces: shift.vectors_to_world(&w.contact_forces),
                object: shift.object_to_world(&w.object),
            };
            let obs = to_root_local(&moved, &RootPose::of_body(&moved.body, 0)).unwrap();
            let d = (&obs.body.pos - &base.body.pos).mapv(f64::abs).sum()
                + (&obs.body.rot - &base.body.rot).mapv(f64::abs).sum()
                + (&obs.body.pos_vel - &base.body.pos_vel).mapv(f64::abs).sum()
                + (&obs.body.rot_vel - &base.body.rot_vel).mapv(f64::abs).sum()
                + (&obs.object.pos - &base.object.pos).mapv(f64::abs).sum()
                + (&obs.object.pos_vel - &base.object.pos_vel).mapv(f64::abs).sum()
                + (&obs.contact_forces - &base.contact_forces).mapv(f64::abs).sum();
            assert!(d < 1e-9, "observation drift {d}");
            if case % 2 == 1 {
                assert!((obs.root_height - base.root_height).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn spatial_yaw_frame_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = mat_from_axis_angle([0.2, -0.1, 1.0], 0.7);
        let root = RootPose { position: vec![0.5, -1.0, 0.9], rotation: encode_matrix(&m).unwrap().to_vec() };
        let pos = Array2::from_shape_fn((3, 3), |_| rng.gen_range(-1.0..1.0));
        let rot = Array2::from_shape_fn((3, 6), |(i, _)| 0.0 + i as f64 * 0.0);
        let rot = rot + &ndarray::Array1::from(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let w = WorldReadout {
            body: motion(pos, rot),
            contact_forces: array![[1.0, 2.0, 3.0]],
            object: ObjectMotion {
                pos: array![[0.1, 0.2, 0.3]],
                rot: array![[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]],
                pos_vel: array![[0.0, 0.1, 0.0]],
                rot_vel: array![[0.0; 6]],
            },
        };
        let local = to_root_local(&w, &root).unwrap();
        assert!((local.root_height - 0.9).abs() < 1e-15);
        let back = from_root_local(&local, &root).unwrap();
        assert!((&back.body.pos - &w.body.pos).mapv(f64::abs).sum() < 1e-9);
        assert!((&back.body.rot - &w.body.rot).mapv(f64::abs).sum() < 1e-9);
        // the vertical component is untouched by a yaw-only frame
        assert!((local.contact_forces[[0, 2]] - 3.0).abs() < 1e-15);
    }
}

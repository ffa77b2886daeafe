//! Damped-least-squares inverse kinematics for a planar chain.

use crate::math::{wrap_angle, Vec2};
use crate::physics::ArticulatedModel;

/// Target for the end link: a point fixed in its local frame and its angle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IkTarget {
    pub point: Vec2,
    pub angle: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IkSettings {
    pub iterations: usize,
    pub tolerance: f64,
    pub damping: f64,
}

impl Default for IkSettings {
    fn default() -> Self {
        Self { iterations: 100, tolerance: 1e-4, damping: 1e-3 }
    }
}

pub struct ChainIk<'a> {
    pub model: &'a ArticulatedModel,
    pub root_pos: Vec2,
    pub root_angle: f64,
    pub end_link: usize,
    /// Tracked point in the end link's local frame.
    pub end_offset: Vec2,
}

impl ChainIk<'_> {
    /// World position and angle of the tracked point.
    pub fn end_pose(&self, q: &[f64]) -> (Vec2, f64) {
        let poses = self.model.forward_kinematics(self.root_pos, self.root_angle, q);
        let (p, a) = poses[self.end_link];
        (p + self.end_offset.rotated(a), a)
    }

    fn error(&self, q: &[f64], target: &IkTarget) -> [f64; 3] {
        let (p, a) = self.end_pose(q);
        [target.point.x - p.x, target.point.y - p.y, wrap_angle(target.angle - a)]
    }

    /// Joints on the path from the root to the end link.
    fn chain(&self) -> Vec<usize> {
        let mut joints = Vec::new();
        let mut link = self.end_link;
        while let Some(j) = self.model.joints.iter().position(|j| j.child == link) {
            joints.push(j);
            link = self.model.joints[j].parent;
        }
        joints
    }

    /// Solves from `q0`; returns the joint angles and the final error norm.
    pub fn solve(&self, q0: &[f64], target: &IkTarget, s: &IkSettings) -> (Vec<f64>, f64) {
        let chain = self.chain();
        let mut q = q0.to_vec();
        let mut e = self.error(&q, target);
        for _ in 0..s.iterations {
            if norm(&e) < s.tolerance {
                break;
            }
            let poses = self.model.forward_kinematics(self.root_pos, self.root_angle, &q);
            let (end, _) = self.end_pose(&q);
            // columns: d(point)/dq_j = perp(end − anchor_j), d(angle)/dq_j = 1
            let cols: Vec<(usize, [f64; 3])> = chain
                .iter()
                .map(|&j| {
                    let spec = &self.model.joints[j];
                    let (pp, pa) = poses[spec.parent];
                    let anchor = pp + spec.parent_anchor.rotated(pa);
                    let d = Vec2::cross_scalar(1.0, end - anchor);
                    (j, [d.x, d.y, 1.0])
                })
                .collect();
            let mut jjt = [[0.0; 3]; 3];
            for (_, c) in &cols {
                for r in 0..3 {
                    for k in 0..3 {
                        jjt[r][k] += c[r] * c[k];
                    }
                }
            }
            for (r, row) in jjt.iter_mut().enumerate() {
                row[r] += s.damping * s.damping;
            }
            let Some(y) = solve3(jjt, e) else { break };
            for (j, c) in &cols {
                let spec = &self.model.joints[*j];
                let dq = c[0] * y[0] + c[1] * y[1] + c[2] * y[2];
                q[*j] = (q[*j] + dq).clamp(spec.lower, spec.upper);
            }
            e = self.error(&q, target);
        }
        let err = norm(&e);
        (q, err)
    }
}

fn norm(e: &[f64; 3]) -> f64 {
    (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt()
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&a);
    if d.abs() < 1e-300 {
        return None;
    }
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        *o = det(&m) / d;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_a_forward_kinematics_pose() {
        let model = ArticulatedModel::toy_arm();
        let ik = ChainIk {
            model: &model,
            root_pos: Vec2::new(0.0, 0.1),
            root_angle: 0.0,
            end_link: 3,
            end_offset: Vec2::new(0.0, 0.08),
        };
        let truth = [0.4, 1.5, -1.7];
        let (p, a) = ik.end_pose(&truth);
        let (q, err) = ik.solve(&[0.3, 1.2, -1.5], &IkTarget { point: p, angle: a }, &IkSettings::default());
        assert!(err < 1e-4, "err {err}");
        let (p2, a2) = ik.end_pose(&q);
        assert!((p2 - p).length() < 1e-4 && (a2 - a).abs() < 1e-4);
    }

    #[test]
    fn unreachable_target_reports_residual() {
        let model = ArticulatedModel::toy_arm();
        let ik = ChainIk {
            model: &model,
            root_pos: Vec2::new(0.0, 0.1),
            root_angle: 0.0,
            end_link: 3,
            end_offset: Vec2::ZERO,
        };
        let (_, err) = ik.solve(&[0.3, 1.2, -1.5], &IkTarget { point: Vec2::new(3.0, 0.0), angle: 0.0 }, &IkSettings::default());
        assert!(err > 1.0);
    }
}

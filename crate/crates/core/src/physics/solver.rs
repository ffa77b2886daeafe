//! Sequential-impulse velocity constraints.

use crate::math::Vec2;

#[derive(Clone, Copy, Debug)]
pub(crate) struct SolverBody {
    pub vel: Vec2,
    pub omega: f64,
    pub inv_mass: f64,
    pub inv_inertia: f64,
}

impl SolverBody {
    fn apply(&mut self, impulse: Vec2, r: Vec2) {
        self.vel += impulse * self.inv_mass;
        self.omega += self.inv_inertia * r.cross(impulse);
    }

    fn point_velocity(&self, r: Vec2) -> Vec2 {
        self.vel + Vec2::cross_scalar(self.omega, r)
    }
}

fn pair(bodies: &mut [SolverBody], a: usize, b: usize) -> (&mut SolverBody, &mut SolverBody) {
    debug_assert_ne!(a, b);
    if a < b {
        let (lo, hi) = bodies.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = bodies.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

/// Two-dimensional point-to-point constraint of a revolute joint.
#[derive(Clone, Debug)]
pub(crate) struct PointConstraint {
    pub a: usize,
    pub b: usize,
    pub ra: Vec2,
    pub rb: Vec2,
    pub bias: Vec2,
    pub k_inv: [[f64; 2]; 2],
    pub impulse: Vec2,
}

impl PointConstraint {
    pub fn new(bodies: &[SolverBody], a: usize, b: usize, ra: Vec2, rb: Vec2, error: Vec2, bias_rate: f64) -> Self {
        let (ba, bb) = (&bodies[a], &bodies[b]);
        let m = ba.inv_mass + bb.inv_mass;
        let (ia, ib) = (ba.inv_inertia, bb.inv_inertia);
        let k11 = m + ia * ra.y * ra.y + ib * rb.y * rb.y;
        let k12 = -ia * ra.x * ra.y - ib * rb.x * rb.y;
        let k22 = m + ia * ra.x * ra.x + ib * rb.x * rb.x;
        let det = k11 * k22 - k12 * k12;
        let inv = if det != 0.0 { 1.0 / det } else { 0.0 };
        Self {
            a,
            b,
            ra,
            rb,
            bias: error * bias_rate,
            k_inv: [[k22 * inv, -k12 * inv], [-k12 * inv, k11 * inv]],
            impulse: Vec2::ZERO,
        }
    }

    pub fn warm_start(&self, bodies: &mut [SolverBody]) {
        let (ba, bb) = pair(bodies, self.a, self.b);
        ba.apply(-self.impulse, self.ra);
        bb.apply(self.impulse, self.rb);
    }

    pub fn solve(&mut self, bodies: &mut [SolverBody]) {
        let (ba, bb) = pair(bodies, self.a, self.b);
        let cdot = bb.point_velocity(self.rb) - ba.point_velocity(self.ra) + self.bias;
        let k = &self.k_inv;
        let p = -Vec2::new(k[0][0] * cdot.x + k[0][1] * cdot.y, k[1][0] * cdot.x + k[1][1] * cdot.y);
        self.impulse += p;
        ba.apply(-p, self.ra);
        bb.apply(p, self.rb);
    }
}

/// Implicit PD drive on the relative angle of a joint.
///
/// Solved as a soft angular constraint, which is the backward-Euler form of
/// `τ = kp·(q* − q) − kd·q̇` evaluated at the end of the substep.
#[derive(Clone, Debug)]
pub(crate) struct MotorConstraint {
    pub a: usize,
    pub b: usize,
    pub bias: f64,
    pub gamma: f64,
    pub mass: f64,
    pub max_impulse: f64,
    pub impulse: f64,
}

impl MotorConstraint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(bodies: &[SolverBody], a: usize, b: usize, error: f64, kp: f64, kd: f64, max_torque: f64, dt: f64) -> Self {
        let gamma = 1.0 / (dt * (kd + dt * kp));
        let bias = error * kp / (kd + dt * kp);
        let mass = 1.0 / (bodies[a].inv_inertia + bodies[b].inv_inertia + gamma);
        Self { a, b, bias, gamma, mass, max_impulse: max_torque * dt, impulse: 0.0 }
    }

    pub fn warm_start(&self, bodies: &mut [SolverBody]) {
        let (ba, bb) = pair(bodies, self.a, self.b);
        ba.omega -= ba.inv_inertia * self.impulse;
        bb.omega += bb.inv_inertia * self.impulse;
    }

    pub fn solve(&mut self, bodies: &mut [SolverBody]) {
        let (ba, bb) = pair(bodies, self.a, self.b);
        let cdot = bb.omega - ba.omega;
        let lambda = -self.mass * (cdot + self.bias + self.gamma * self.impulse);
        let old = self.impulse;
        self.impulse = (old + lambda).clamp(-self.max_impulse, self.max_impulse);
        let d = self.impulse - old;
        ba.omega -= ba.inv_inertia * d;
        bb.omega += bb.inv_inertia * d;
    }
}

/// One-sided angular limit; `sign` is +1 for a lower bound and −1 for an upper bound.
#[derive(Clone, Debug)]
pub(crate) struct LimitConstraint {
    pub a: usize,
    pub b: usize,
    pub sign: f64,
    pub target: f64,
    pub mass: f64,
    pub impulse: f64,
}

impl LimitConstraint {
    /// `gap` is the signed distance to the bound, positive inside the range.
    pub fn new(bodies: &[SolverBody], a: usize, b: usize, sign: f64, gap: f64, dt: f64, baumgarte: f64) -> Self {
        let target = if gap > 0.0 { -gap / dt } else { -baumgarte * gap / dt };
        let k = bodies[a].inv_inertia + bodies[b].inv_inertia;
        let mass = if k > 0.0 { 1.0 / k } else { 0.0 };
        Self { a, b, sign, target, mass, impulse: 0.0 }
    }

    pub fn warm_start(&self, bodies: &mut [SolverBody]) {
        let (ba, bb) = pair(bodies, self.a, self.b);
        let p = self.sign * self.impulse;
        ba.omega -= ba.inv_inertia * p;
        bb.omega += bb.inv_inertia * p;
    }

    pub fn solve(&mut self, bodies: &mut [SolverBody]) {
        let (ba, bb) = pair(bodies, self.a, self.b);
        let cdot = self.sign * (bb.omega - ba.omega);
        let lambda = -self.mass * (cdot - self.target);
        let old = self.impulse;
        self.impulse = (old + lambda).max(0.0);
        let p = self.sign * (self.impulse - old);
        ba.omega -= ba.inv_inertia * p;
        bb.omega += bb.inv_inertia * p;
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ContactConstraint {
    pub a: usize,
    pub b: usize,
    pub ra: Vec2,
    pub rb: Vec2,
    pub normal: Vec2,
    pub target: f64,
    pub normal_mass: f64,
    pub tangent_mass: f64,
    pub rolling_mass: f64,
    pub friction: f64,
    pub restitution: f64,
    /// Radius-scaled rolling coefficient; zero disables rolling resistance.
    pub rolling: f64,
    pub approach: f64,
    pub normal_impulse: f64,
    pub tangent_impulse: f64,
    pub rolling_impulse: f64,
    pub max_normal_impulse: f64,
}

pub(crate) struct ContactParams {
    pub separation: f64,
    pub friction: f64,
    pub restitution: f64,
    pub rolling: f64,
    pub slop: f64,
    pub baumgarte: f64,
    pub dt: f64,
}

impl ContactConstraint {
    pub fn new(bodies: &[SolverBody], a: usize, b: usize, ra: Vec2, rb: Vec2, normal: Vec2, p: &ContactParams) -> Self {
        let (ba, bb) = (&bodies[a], &bodies[b]);
        let m = ba.inv_mass + bb.inv_mass;
        let eff = |dir: Vec2| {
            let (ca, cb) = (ra.cross(dir), rb.cross(dir));
            let k = m + ba.inv_inertia * ca * ca + bb.inv_inertia * cb * cb;
            if k > 0.0 {
                1.0 / k
            } else {
                0.0
            }
        };
        let tangent = normal.perp();
        let target = if p.separation > 0.0 {
            -p.separation / p.dt
        } else {
            p.baumgarte * (-p.separation - p.slop).max(0.0) / p.dt
        };
        let kr = ba.inv_inertia + bb.inv_inertia;
        let approach = (bb.point_velocity(rb) - ba.point_velocity(ra)).dot(normal);
        Self {
            a,
            b,
            ra,
            rb,
            normal,
            target,
            normal_mass: eff(normal),
            tangent_mass: eff(tangent),
            rolling_mass: if kr > 0.0 { 1.0 / kr } else { 0.0 },
            friction: p.friction,
            restitution: p.restitution,
            rolling: p.rolling,
            approach,
            normal_impulse: 0.0,
            tangent_impulse: 0.0,
            rolling_impulse: 0.0,
            max_normal_impulse: 0.0,
        }
    }

    /// Linear impulse applied to body `b` (the negation acts on `a`).
    pub fn linear_impulse(&self) -> Vec2 {
        self.normal * self.normal_impulse + self.normal.perp() * self.tangent_impulse
    }

    pub fn warm_start(&self, bodies: &mut [SolverBody]) {
        let (ba, bb) = pair(bodies, self.a, self.b);
        let p = self.linear_impulse();
        ba.apply(-p, self.ra);
        bb.apply(p, self.rb);
        ba.omega -= ba.inv_inertia * self.rolling_impulse;
        bb.omega += bb.inv_inertia * self.rolling_impulse;
    }

    pub fn solve(&mut self, bodies: &mut [SolverBody]) {
        let (ba, bb) = pair(bodies, self.a, self.b);
        let tangent = self.normal.perp();

        let dv = bb.point_velocity(self.rb) - ba.point_velocity(self.ra);
        let bound = self.friction * self.normal_impulse;
        let old = self.tangent_impulse;
        self.tangent_impulse = (old - self.tangent_mass * dv.dot(tangent)).clamp(-bound, bound);
        let p = tangent * (self.tangent_impulse - old);
        ba.apply(-p, self.ra);
        bb.apply(p, self.rb);

        let dv = bb.point_velocity(self.rb) - ba.point_velocity(self.ra);
        let vn = dv.dot(self.normal);
        let old = self.normal_impulse;
        self.normal_impulse = (old - self.normal_mass * (vn - self.target)).max(0.0);
        self.max_normal_impulse = self.max_normal_impulse.max(self.normal_impulse);
        let p = self.normal * (self.normal_impulse - old);
        ba.apply(-p, self.ra);
        bb.apply(p, self.rb);

        if self.rolling > 0.0 {
            let bound = self.rolling * self.normal_impulse;
            let old = self.rolling_impulse;
            let lambda = -self.rolling_mass * (bb.omega - ba.omega);
            self.rolling_impulse = (old + lambda).clamp(-bound, bound);
            let d = self.rolling_impulse - old;
            ba.omega -= ba.inv_inertia * d;
            bb.omega += bb.inv_inertia * d;
        }
    }

    /// Post-solve bounce using the approach speed measured before the solve.
    pub fn apply_restitution(&mut self, bodies: &mut [SolverBody], threshold: f64) {
        if self.restitution == 0.0 || self.approach > -threshold || self.max_normal_impulse == 0.0 {
            return;
        }
        let (ba, bb) = pair(bodies, self.a, self.b);
        let vn = (bb.point_velocity(self.rb) - ba.point_velocity(self.ra)).dot(self.normal);
        let old = self.normal_impulse;
        self.normal_impulse = (old - self.normal_mass * (vn + self.restitution * self.approach)).max(0.0);
        self.max_normal_impulse = self.max_normal_impulse.max(self.normal_impulse);
        let p = self.normal * (self.normal_impulse - old);
        ba.apply(-p, self.ra);
        bb.apply(p, self.rb);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn body(m: f64, i: f64) -> SolverBody {
        SolverBody { vel: Vec2::ZERO, omega: 0.0, inv_mass: 1.0 / m, inv_inertia: 1.0 / i }
    }

    #[test]
    fn motor_matches_backward_euler_pd() {
        // one free rotor against a static anchor
        let inertia = 0.3;
        let mut bodies =
            vec![SolverBody { vel: Vec2::ZERO, omega: 0.0, inv_mass: 0.0, inv_inertia: 0.0 }, body(1.0, inertia)];
        bodies[1].omega = 0.7;
        let (kp, kd, dt, err) = (60.0, 5.0, 1.0 / 60.0, 0.4);
        let mut m = MotorConstraint::new(&bodies, 0, 1, err, kp, kd, 1e9, dt);
        for _ in 0..50 {
            m.solve(&mut bodies);
        }
        // implicit PD: I (w' - w)/dt = -kp (err + dt w') - kd w'
        let w = 0.7;
        let expected = (inertia * w / dt - kp * err) / (inertia / dt + kp * dt + kd);
        assert!((bodies[1].omega - expected).abs() < 1e-12);
    }

    #[test]
    fn point_constraint_removes_relative_velocity() {
        let mut bodies = vec![body(2.0, 0.1), body(1.0, 0.05)];
        bodies[0].vel = Vec2::new(1.0, -0.5);
        bodies[1].omega = 3.0;
        let (ra, rb) = (Vec2::new(0.2, 0.0), Vec2::new(-0.1, 0.05));
        let mut c = PointConstraint::new(&bodies, 0, 1, ra, rb, Vec2::ZERO, 0.0);
        let p0 = bodies[0].vel * 2.0 + bodies[1].vel;
        c.solve(&mut bodies);
        let rel = bodies[1].point_velocity(rb) - bodies[0].point_velocity(ra);
        assert!(rel.length() < 1e-12);
        let p1 = bodies[0].vel * 2.0 + bodies[1].vel;
        assert!((p1 - p0).length() < 1e-12);
    }

    #[test]
    fn friction_is_bounded_by_coulomb_cone() {
        let mut bodies =
            vec![SolverBody { vel: Vec2::ZERO, omega: 0.0, inv_mass: 0.0, inv_inertia: 0.0 }, body(1.0, 1.0)];
        bodies[1].vel = Vec2::new(5.0, -1.0);
        let params =
            ContactParams { separation: 0.0, friction: 0.5, restitution: 0.0, rolling: 0.0, slop: 0.0, baumgarte: 0.0, dt: 0.01 };
        let mut c = ContactConstraint::new(&bodies, 0, 1, Vec2::ZERO, Vec2::ZERO, Vec2::new(0.0, 1.0), &params);
        for _ in 0..20 {
            c.solve(&mut bodies);
        }
        assert!(bodies[1].vel.y.abs() < 1e-12);
        assert!(c.tangent_impulse.abs() <= 0.5 * c.normal_impulse + 1e-12);
        assert!((bodies[1].vel.x - (5.0 - 0.5)).abs() < 1e-9);
    }
}

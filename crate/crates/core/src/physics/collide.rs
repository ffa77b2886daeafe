//! Narrow-phase contact generation: capsule–ground, disc–ground, disc–capsule.

use crate::math::{closest_on_segment, Vec2};

use super::world::BodyState;
use super::ArticulatedModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Entity {
    Link(usize),
    Disc,
    Ground,
}

/// A contact manifold point between body `a` and body `b`.
///
/// `normal` points from `a` to `b`; `separation` is negative when the shapes
/// overlap. `feature` disambiguates multiple points of one pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contact {
    pub a: Entity,
    pub b: Entity,
    pub feature: u8,
    pub point: Vec2,
    pub normal: Vec2,
    pub separation: f64,
}

pub(crate) fn capsule_points(link: &super::LinkSpec, s: &BodyState) -> (Vec2, Vec2) {
    let h = Vec2::from_angle(s.angle) * link.half_extent();
    (s.pos - h, s.pos + h)
}

/// All contact points with separation below each pair's margin.
pub(crate) fn detect(
    model: &ArticulatedModel,
    disc_radius: f64,
    links: &[BodyState],
    disc_state: &BodyState,
    ground: bool,
    margin: impl Fn(Entity, Entity) -> f64,
) -> Vec<Contact> {
    let mut out = Vec::new();
    let up = Vec2::new(0.0, 1.0);
    if ground {
        for (i, (spec, s)) in model.links.iter().zip(links).enumerate() {
            let (p0, p1) = capsule_points(spec, s);
            let m = margin(Entity::Ground, Entity::Link(i));
            for (feature, p) in [p0, p1].into_iter().enumerate() {
                let separation = p.y - spec.radius;
                if separation < m {
                    out.push(Contact {
                        a: Entity::Ground,
                        b: Entity::Link(i),
                        feature: feature as u8,
                        point: Vec2::new(p.x, 0.5 * (p.y - spec.radius)),
                        normal: up,
                        separation,
                    });
                }
            }
        }
        let separation = disc_state.pos.y - disc_radius;
        if separation < margin(Entity::Ground, Entity::Disc) {
            out.push(Contact {
                a: Entity::Ground,
                b: Entity::Disc,
                feature: 0,
                point: Vec2::new(disc_state.pos.x, 0.5 * (disc_state.pos.y - disc_radius)),
                normal: up,
                separation,
            });
        }
    }
    for (i, (spec, s)) in model.links.iter().zip(links).enumerate() {
        let (p0, p1) = capsule_points(spec, s);
        let (q, _) = closest_on_segment(disc_state.pos, p0, p1);
        let d = disc_state.pos - q;
        let dist = d.length();
        let separation = dist - spec.radius - disc_radius;
        if separation < margin(Entity::Link(i), Entity::Disc) {
            // concentric fallback: push straight up
            let normal = d.normalized().unwrap_or(up);
            out.push(Contact {
                a: Entity::Link(i),
                b: Entity::Disc,
                feature: 0,
                point: q + normal * (spec.radius + 0.5 * separation),
                normal,
                separation,
            });
        }
    }
    out
}

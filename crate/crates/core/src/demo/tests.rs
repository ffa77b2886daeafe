use super::*;
use crate::math::closest_on_segment;

fn toy() -> (ArticulatedModel, DiscObject) {
    (ArticulatedModel::toy_arm(), DiscObject::ball())
}

fn ball_at(seq: &RefHoiSequence, f: usize) -> Vec2 {
    let p = &seq.frames[f].object.pos;
    Vec2::new(p[[0, 0]], p[[0, 1]])
}

/// Ball centre expected on top of the paddle, recomputed from the stored hand pose.
fn paddle_top(seq: &RefHoiSequence, model: &ArticulatedModel, disc: &DiscObject, f: usize) -> Vec2 {
    let b = &seq.frames[f].body;
    let angle = b.rot[[3, 1]].atan2(b.rot[[3, 0]]);
    let normal = Vec2::new(-angle.sin(), angle.cos());
    Vec2::new(b.pos[[3, 0]], b.pos[[3, 1]]) + normal * (model.links[3].radius + disc.radius)
}

#[test]
fn hold_clip_keeps_ball_on_the_paddle() {
    let (model, disc) = toy();
    let seq = generate(&DemoScript::hold(), &model, &disc).unwrap();
    assert_eq!(seq.len(), 60);
    for f in 0..seq.len() {
        assert_eq!(seq.frames[f].cg.edges, vec![1, 0, 0]);
        assert!((ball_at(&seq, f) - paddle_top(&seq, &model, &disc, f)).length() < 1e-9);
        assert!((ball_at(&seq, f) - HOLD_POINT).length() < 1e-4);
    }
}

#[test]
fn toss_flight_is_ballistic() {
    let (model, disc) = toy();
    let script = DemoScript::toss_catch();
    let seq = generate(&script, &model, &disc).unwrap();
    let (p0, g) = (script.hold_point, 9.81);
    let v0 = 0.5 * g * (1.0 - 0.5);
    let mut airborne = 0;
    for f in 0..seq.len() {
        let t = f as f64 / 30.0;
        if t > 0.5 + 1e-9 && t < 1.0 - 1e-9 {
            airborne += 1;
            let tau = t - 0.5;
            let expected = Vec2::new(p0.x, p0.y + v0 * tau - 0.5 * g * tau * tau);
            assert!((ball_at(&seq, f) - expected).length() < 1e-9, "frame {f}");
            assert_eq!(seq.frames[f].cg.edges[0], 0);
            // the paddle stays below the flying ball
            assert!(ball_at(&seq, f).y > paddle_top(&seq, &model, &disc, f).y, "frame {f}");
        } else {
            assert_eq!(seq.frames[f].cg.edges[0], 1, "frame {f}");
        }
    }
    assert_eq!(airborne, 14);
}

#[test]
fn toss_velocity_jumps_only_at_catch() {
    let (model, disc) = toy();
    let seq = generate(&DemoScript::toss_catch(), &model, &disc).unwrap();
    let catch_frame = 30;
    for f in 2..seq.len() {
        let (a, b) = (&seq.frames[f - 1].object.pos_vel, &seq.frames[f].object.pos_vel);
        let jump = ((b[[0, 0]] - a[[0, 0]]).powi(2) + (b[[0, 1]] - a[[0, 1]]).powi(2)).sqrt();
        if f != catch_frame && f != catch_frame + 1 {
            assert!(jump < 0.03, "frame {f}: jump {jump}");
        }
    }
}

#[test]
fn biased_hold_floats_the_ball() {
    let (model, disc) = toy();
    let seq = generate(&DemoScript::biased_hold(), &model, &disc).unwrap();
    for f in 0..seq.len() {
        let gap = (ball_at(&seq, f) - paddle_top(&seq, &model, &disc, f)).length();
        assert!((gap - 0.03).abs() < 1e-9);
        assert_eq!(seq.frames[f].cg.edges[0], 1);
    }
}

#[test]
fn every_preset_generates_deterministically() {
    let (model, disc) = toy();
    for kind in TaskKind::ALL {
        let script = DemoScript::preset(kind);
        let a = generate(&script, &model, &disc).unwrap();
        let b = generate(&script, &model, &disc).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert_eq!(a.len(), script.frame_count());
    }
}

#[test]
fn unreachable_keyframe_is_named() {
    let (model, disc) = toy();
    let script = DemoScript { hold_point: Vec2::new(3.0, 0.5), ..DemoScript::hold() };
    match generate(&script, &model, &disc) {
        Err(DemoError::Unreachable { keyframe, .. }) => assert_eq!(keyframe, "hold"),
        other => panic!("expected unreachable, got {other:?}"),
    }
}

#[test]
fn invalid_scripts_rejected() {
    let bad = [
        DemoScript { duration: 0.4, ..DemoScript::hold() },
        DemoScript { release_time: Some(1.0), catch_time: Some(0.8), ..DemoScript::toss_catch() },
        DemoScript { carry_to: None, ..DemoScript::carry() },
        DemoScript { bias: -0.1, ..DemoScript::biased_hold() },
    ];
    for s in bad {
        assert!(matches!(s.validate(), Err(DemoError::InvalidScript(_))), "{s:?}");
    }
}

#[test]
fn calibrating_a_consistent_clip_is_a_fixed_point() {
    let (model, disc) = toy();
    let seq = generate(&DemoScript::hold(), &model, &disc).unwrap();
    let cal = calibrate(&seq, &model, &disc, &SimConfig::default()).unwrap();
    assert!(cal.flips.is_empty(), "{:?}", cal.flips);
    assert!(cal.max_shift <= SimConfig::default().contact_slop);
}

#[test]
fn calibration_resolves_interpenetration() {
    let (model, disc) = toy();
    let seq = generate(&DemoScript::hold(), &model, &disc).unwrap();
    let mut tracks = seq.tracks();
    tracks.obj_pos.index_axis_mut(ndarray::Axis(2), 1).mapv_inplace(|y| y - 0.01);
    let sunk = RefHoiSequence::from_tracks(seq.layout.clone(), 30, seq.object_names.clone(), seq.cg_map.clone(), tracks)
        .unwrap();
    let cal = calibrate(&sunk, &model, &disc, &SimConfig::default()).unwrap();
    let slop = SimConfig::default().contact_slop;
    for f in 0..cal.sequence.len() {
        let b = &cal.sequence.frames[f].body;
        let angle = b.rot[[3, 1]].atan2(b.rot[[3, 0]]);
        let axis = Vec2::from_angle(angle) * model.links[3].half_extent();
        let c = Vec2::new(b.pos[[3, 0]], b.pos[[3, 1]]);
        let (q, _) = closest_on_segment(ball_at(&cal.sequence, f), c - axis, c + axis);
        let depth = model.links[3].radius + disc.radius - (ball_at(&cal.sequence, f) - q).length();
        assert!(depth <= slop, "frame {f}: depth {depth}");
    }
}

#[test]
fn calibrating_a_biased_clip_reports_label_flips() {
    let (model, disc) = toy();
    let seq = generate(&DemoScript::biased_hold(), &model, &disc).unwrap();
    let cal = calibrate(&seq, &model, &disc, &SimConfig::default()).unwrap();
    // a 3 cm gap is far outside the touching distance, so every frame flips
    assert_eq!(cal.flips.len(), seq.len());
    assert!(cal.flips.iter().all(|f| f.edge == 0 && f.from == 1 && f.to == 0));
}

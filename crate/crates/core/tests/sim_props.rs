use indoornav_core::decision::{
    decode_velocity_setpoint, encode_velocity_setpoint, NavCommand, PerceptionBundle, Policy,
    RulePolicy,
};
use indoornav_core::shield::{apply_envelope, EnvelopeConfig, ImuFrame, TofFrame};
use indoornav_core::sim::raycast::true_clearances;
use indoornav_core::sim::{
    raycast_tof, step_dynamics, DroneState, DynamicsConfig, Environment, ModalityNoise, Rect, Room,
    World,
};
use proptest::prelude::*;
use rand_chacha::ChaCha8Rng;

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn empty_room(w: f64, h: f64, ceiling: f64) -> World {
    Environment {
        name: "empty".into(),
        rooms: vec![Room {
            id: 1,
            name: "a".into(),
            bounds: Rect::new(0.0, 0.0, w, h),
        }],
        doorways: vec![],
        objects: vec![],
        landing_pad: None,
        ceiling_mm: ceiling,
        start_room: 1,
        start_position: None,
        start_yaw_deg: 0.0,
    }
    .build()
    .unwrap()
}

/// Distance from `p` along `(dx, dy)` to the boundary of `[0,w] x [0,h]`.
fn to_boundary(p: [f64; 2], d: [f64; 2], w: f64, h: f64) -> f64 {
    let mut t = f64::INFINITY;
    for (pos, dir, hi) in [(p[0], d[0], w), (p[1], d[1], h)] {
        if dir > 1e-12 {
            t = t.min((hi - pos) / dir);
        } else if dir < -1e-12 {
            t = t.min(-pos / dir);
        }
    }
    t
}

fn bundle(adjusted: [f64; 6], valid: [bool; 6]) -> PerceptionBundle {
    PerceptionBundle {
        detections: vec![],
        envelope: indoornav_core::shield::Envelope {
            adjusted,
            valid,
            breached: [false; 6],
        },
        imu: ImuFrame::default(),
        vlm_description: String::new(),
        timestamp_ms: 0,
    }
}

proptest! {
    #![proptest_config(cfg(500))]

    #[test]
    fn noise_free_raycast_is_exact(
        w in 1000.0..9000.0f64,
        h in 1000.0..9000.0f64,
        fx in 0.01..0.99f64,
        fy in 0.01..0.99f64,
        z in 100.0..2400.0f64,
        yaw in -7.0..7.0f64,
    ) {
        let ceiling = 2500.0;
        let world = empty_room(w, h, ceiling);
        let state = DroneState {
            position: [fx * w, fy * h, z],
            yaw,
            ..DroneState::default()
        };
        let got = true_clearances(&world, &state).unwrap();
        let (s, c) = yaw.sin_cos();
        let p = [state.position[0], state.position[1]];
        let want = [
            to_boundary(p, [c, s], w, h),
            to_boundary(p, [-c, -s], w, h),
            to_boundary(p, [-s, c], w, h),
            to_boundary(p, [s, -c], w, h),
            ceiling - z,
            z,
        ];
        for i in 0..6 {
            prop_assert!((got[i] - want[i]).abs() < 1e-6, "axis {i}: {} vs {}", got[i], want[i]);
        }
        let frame = raycast_tof(
            &world,
            &state,
            &EnvelopeConfig::default(),
            None::<(&ModalityNoise, &mut ChaCha8Rng)>,
            0,
        )
        .unwrap();
        for i in 0..6 {
            prop_assert_eq!(frame.distances[i], want[i].min(4000.0));
        }
    }

    #[test]
    fn zero_command_is_a_fixed_point(
        pos in prop::array::uniform3(0.0..5000.0f64),
        yaw in -3.0..3.0f64,
        dt in 0.001..=0.1f64,
    ) {
        let state = DroneState { position: pos, yaw, velocity: [0.0; 3] };
        let next = step_dynamics(&state, &NavCommand::hover(), dt, &DynamicsConfig::default()).unwrap();
        prop_assert_eq!(next, state);
    }

    #[test]
    fn setpoint_packets_round_trip(
        v in prop::array::uniform3(-1.0..1.0f32),
        yaw in -180.0..180.0f32,
        ts in any::<u32>(),
    ) {
        let cmd = NavCommand::new(v[0] as f64, v[1] as f64, v[2] as f64, yaw as f64);
        let bytes = encode_velocity_setpoint(&cmd, ts);
        let (back, t) = decode_velocity_setpoint(&bytes).unwrap();
        prop_assert_eq!(t, ts);
        prop_assert_eq!(back, cmd);
    }

    #[test]
    fn single_byte_corruption_is_detected(
        v in prop::array::uniform4(-1.0..1.0f32),
        at in 2usize..22,
        flip in 1u8..=255,
    ) {
        let cmd = NavCommand::new(v[0] as f64, v[1] as f64, v[2] as f64, v[3] as f64 * 90.0);
        let mut bytes = encode_velocity_setpoint(&cmd, 7);
        bytes[at] ^= flip;
        prop_assert!(decode_velocity_setpoint(&bytes).is_err());
    }

    #[test]
    fn rule_policy_never_heads_into_a_blocked_side(
        adjusted in prop::array::uniform6(prop_oneof![0.0..=30.0f64, 0.0..4000.0f64]),
        valid in prop::array::uniform6(prop::bool::weighted(0.9)),
        ticks in 1usize..60,
    ) {
        let b = bundle(adjusted, valid);
        let mut policy = RulePolicy::default();
        let blocked = |i: usize| valid[i] && adjusted[i] <= 30.0;
        for _ in 0..ticks {
            let cmd = policy.decide(&b);
            // front, back, right, left, up, down
            prop_assert!(!(cmd.vx > 0.0 && blocked(0)), "{cmd:?}");
            prop_assert!(!(cmd.vx < 0.0 && blocked(1)), "{cmd:?}");
            prop_assert!(!(cmd.vy > 0.0 && blocked(2)), "{cmd:?}");
            prop_assert!(!(cmd.vy < 0.0 && blocked(3)), "{cmd:?}");
            prop_assert!(!(cmd.vz > 0.0 && blocked(4)), "{cmd:?}");
            prop_assert!(!(cmd.vz < 0.0 && blocked(5)), "{cmd:?}");
        }
    }

    #[test]
    fn rule_policy_is_deterministic(
        adjusted in prop::array::uniform6(0.0..4000.0f64),
        valid in prop::array::uniform6(any::<bool>()),
    ) {
        let b = bundle(adjusted, valid);
        let run = || {
            let mut p = RulePolicy::default();
            (0..20).map(|_| p.decide(&b)).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn one_second_step_response() {
    let mut s = DroneState::default();
    let cmd = NavCommand::new(1.0, 0.0, 0.0, 0.0);
    for _ in 0..10 {
        s = step_dynamics(&s, &cmd, 0.1, &DynamicsConfig::default()).unwrap();
    }
    let tau: f64 = 0.3;
    let want = 1.0 - tau * (1.0 - (-1.0 / tau).exp());
    assert!(
        (s.position[0] / 1000.0 - want).abs() < 1e-9,
        "{}",
        s.position[0]
    );
    assert!(s.position[1].abs() < 1e-9);
}

#[test]
fn sample_clearances_advance_with_level_altitude() {
    let cfg = EnvelopeConfig::default();
    // Raw readings that land on the sample adjusted clearances.
    let adjusted = [3592.0, 1531.0, 1911.0, 1243.0, 1833.0, 1627.0];
    let mut raw = adjusted;
    for (r, o) in raw.iter_mut().zip(cfg.offsets) {
        *r += o;
    }
    let env = apply_envelope(&TofFrame::from_raw(raw, 0, &cfg), &cfg);
    let mut b = bundle(env.adjusted, env.valid);
    b.envelope = env;
    let cmd = RulePolicy::default().decide(&b);
    assert!(cmd.vx > 0.0);
    assert_eq!((cmd.vy, cmd.vz, cmd.yaw), (0.0, 0.0, 0.0));
}

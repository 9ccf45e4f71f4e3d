use indoornav::reasoner::{format_reasoner_output, parse_reasoner_output};
use indoornav::wire::*;
use indoornav_core::decision::{decode_velocity_setpoint, encode_velocity_setpoint, NavCommand};
use indoornav_core::detect2d::{ClassCatalog, Detection2D, DetectionFrame};
use indoornav_core::geometry::PixelBox;
use indoornav_core::shield::{EnvelopeConfig, ImuFrame, TofFrame};
use proptest::prelude::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn finite() -> impl Strategy<Value = f64> {
    -1e6..1e6f64
}

fn sensor_packet() -> impl Strategy<Value = SensorPacket> {
    (
        prop::array::uniform6(0.0..70000.0f64),
        prop::array::uniform3(finite()),
        prop::array::uniform3(finite()),
        any::<u64>(),
    )
        .prop_map(|(raw, accel, gyro, ts)| {
            let tof = TofFrame::from_raw(raw, ts, &EnvelopeConfig::default());
            SensorPacket::new(&tof, &ImuFrame { accel, gyro, timestamp_ms: ts })
        })
}

fn wire_detection() -> impl Strategy<Value = WireDetection> {
    (
        "[a-z ]{0,12}",
        0u32..80,
        0.0..1.0f64,
        prop::array::uniform4(0.0..2000.0f64),
        prop::option::of(any::<u32>()),
    )
        .prop_map(|(name, class_id, score, bbox, track_id)| WireDetection {
            name,
            class_id,
            score,
            bbox,
            track_id,
        })
}

fn detection_message() -> impl Strategy<Value = DetectionMessage> {
    (any::<u64>(), any::<u64>(), prop::collection::vec(wire_detection(), 0..8)).prop_map(
        |(frame_k, timestamp_ms, detections)| DetectionMessage {
            frame_k,
            timestamp_ms,
            detections,
        },
    )
}

proptest! {
    #![proptest_config(config(512))]

    #[test]
    fn sensor_packets_round_trip(p in sensor_packet()) {
        let bytes = encode_sensor_packet(&p);
        prop_assert_eq!(bytes[0], SCHEMA_VERSION);
        prop_assert_eq!(decode_sensor_packet(&bytes).unwrap(), p);
    }

    #[test]
    fn frame_packets_round_trip(k in any::<u64>(), jpeg in prop::collection::vec(any::<u8>(), 0..512)) {
        let p = FramePacket::new(k, jpeg);
        prop_assert_eq!(decode_frame_packet(&encode_frame_packet(&p)).unwrap(), p);
    }

    #[test]
    fn detection_messages_round_trip(m in detection_message()) {
        prop_assert_eq!(decode_detection_message(&encode_detection_message(&m)).unwrap(), m);
    }

    #[test]
    fn combined_packets_round_trip(m in detection_message(), text in "\\PC{0,64}") {
        let c = combine_vlm_detections(&text, &m);
        let back = decode_combined_packet(&encode_combined_packet(&c)).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(strip_description(&back), m);
    }

    #[test]
    fn truncated_packets_are_rejected(p in sensor_packet(), cut in 0usize..8) {
        let bytes = encode_sensor_packet(&p);
        let n = bytes.len().saturating_sub(cut + 1);
        prop_assert!(decode_sensor_packet(&bytes[..n]).is_err());
    }

    #[test]
    fn detection_frames_survive_the_wire(
        boxes in prop::collection::vec((0.0..600.0f64, 0.0..400.0f64, 1.0..100.0f64, 1.0..80.0f64, 0.3..1.0f64, 0u32..5), 0..6),
        k in any::<u64>(),
    ) {
        let catalog = ClassCatalog::default();
        let dets = boxes
            .iter()
            .enumerate()
            .map(|(i, &(x, y, w, h, s, c))| {
                let mut d = Detection2D::new(PixelBox::new(x, y, x + w, y + h).unwrap(), s, c);
                d.track_id = Some(i as u32);
                d
            })
            .collect();
        let frame = DetectionFrame { frame_k: k, dets };
        let msg = DetectionMessage::from_frame(&frame, 0, &catalog);
        let back = decode_detection_message(&encode_detection_message(&msg)).unwrap();
        prop_assert_eq!(back.to_frame().unwrap(), frame);
    }

    #[test]
    fn velocity_setpoints_round_trip_to_f32(
        v in prop::array::uniform3(-1.0..1.0f64),
        yaw in -180.0..180.0f64,
        ts in any::<u32>(),
    ) {
        let cmd = NavCommand::new(v[0], v[1], v[2], yaw);
        let (back, t) = decode_velocity_setpoint(&encode_velocity_setpoint(&cmd, ts)).unwrap();
        prop_assert_eq!(t, ts);
        for (a, b) in [(cmd.vx, back.vx), (cmd.vy, back.vy), (cmd.vz, back.vz), (cmd.yaw, back.yaw)] {
            prop_assert_eq!(b, a as f32 as f64);
        }
    }

    #[test]
    fn reasoner_output_round_trips(v in prop::array::uniform3(-1.0..1.0f64), yaw in -180.0..180.0f64) {
        let cmd = NavCommand::new(v[0], v[1], v[2], yaw);
        let parsed = parse_reasoner_output(&format_reasoner_output(&cmd), 1.0).unwrap();
        prop_assert!(!parsed.clamped);
        prop_assert_eq!(parsed.command, cmd);
    }
}

#[test]
fn frame_sequence_rejects_reordering() {
    let mut tx = FrameSequence::new();
    let mut rx = FrameSequence::new();
    let a = tx.next_packet(vec![1]);
    let b = tx.next_packet(vec![2]);
    assert_eq!(b.k, 1);
    assert!((b.capture_time_s - 1.0 / 30.0).abs() < 1e-15);
    rx.accept(&b).unwrap();
    assert!(rx.accept(&a).is_err());
}

#[test]
fn real_jpeg_survives_the_frame_packet() {
    let (w, h) = (32u32, 24u32);
    let rgb: Vec<u8> = (0..w * h * 3).map(|i| (i % 251) as u8).collect();
    let jpeg = encode_jpeg(&rgb, w, h).unwrap();
    assert_eq!(&jpeg[..2], &[0xFF, 0xD8]);
    let p = FramePacket::new(7, jpeg);
    assert_eq!(decode_frame_packet(&encode_frame_packet(&p)).unwrap(), p);
}

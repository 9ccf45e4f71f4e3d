//! Packet codecs. Every packet starts with a schema version byte.
//!
//! | packet     | body                                   |
//! |------------|----------------------------------------|
//! | sensors    | zlib(msgpack array)                    |
//! | frame      | msgpack array, JPEG bytes as `bin`     |
//! | detections | msgpack map                            |
//! | combined   | msgpack map, `description` first      |

use std::io::{Read, Write};

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;
use image::codecs::jpeg::JpegEncoder;
use image::ExtendedColorType;
use indoornav_core::detect2d::{ClassCatalog, DetectionFrame};
use indoornav_core::geometry::PixelBox;
use indoornav_core::shield::{ImuFrame, TofFrame};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SCHEMA_VERSION: u8 = 1;
pub const JPEG_QUALITY: u8 = 80;
pub const FRAME_RATE_HZ: f64 = 30.0;

/// One ToF + IMU reading as broadcast by the sensor bridge. Field order is
/// the wire order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorPacket {
    pub tof: [f64; 6],
    pub valid: [bool; 6],
    /// m/s^2, body frame.
    pub accel: [f64; 3],
    /// rad/s, body frame.
    pub gyro: [f64; 3],
    pub timestamp_ms: u64,
}

impl SensorPacket {
    /// Takes the timestamp from the ToF frame.
    pub fn new(tof: &TofFrame, imu: &ImuFrame) -> Self {
        Self {
            tof: tof.distances,
            valid: tof.valid,
            accel: imu.accel,
            gyro: imu.gyro,
            timestamp_ms: tof.timestamp_ms,
        }
    }

    pub fn tof_frame(&self) -> TofFrame {
        TofFrame {
            distances: self.tof,
            valid: self.valid,
            timestamp_ms: self.timestamp_ms,
        }
    }

    pub fn imu_frame(&self) -> ImuFrame {
        ImuFrame {
            accel: self.accel,
            gyro: self.gyro,
            timestamp_ms: self.timestamp_ms,
        }
    }
}

fn versioned(body: Vec<u8>) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + 1);
    out.push(SCHEMA_VERSION);
    out.extend_from_slice(&body);
    out
}

fn body(bytes: &[u8]) -> Result<&[u8]> {
    match bytes.split_first() {
        None => Err(Error::Codec("empty packet".into())),
        Some((&SCHEMA_VERSION, rest)) => Ok(rest),
        Some((v, _)) => Err(Error::Codec(format!("unsupported schema version {v}"))),
    }
}

fn pack<T: Serialize>(v: &T) -> Vec<u8> {
    rmp_serde::to_vec(v).expect("plain data serializes")
}

fn pack_named<T: Serialize>(v: &T) -> Vec<u8> {
    rmp_serde::to_vec_named(v).expect("plain data serializes")
}

fn unpack<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    let mut cur = std::io::Cursor::new(bytes);
    let v = T::deserialize(&mut rmp_serde::Deserializer::new(&mut cur))
        .map_err(|e| Error::Codec(e.to_string()))?;
    let used = cur.position() as usize;
    if used != bytes.len() {
        return Err(Error::Codec(format!(
            "{} trailing bytes",
            bytes.len() - used
        )));
    }
    Ok(v)
}

pub fn encode_sensor_packet(p: &SensorPacket) -> Vec<u8> {
    let mut z = ZlibEncoder::new(Vec::new(), Compression::default());
    z.write_all(&pack(p)).expect("writing to a Vec");
    versioned(z.finish().expect("writing to a Vec"))
}

pub fn decode_sensor_packet(bytes: &[u8]) -> Result<SensorPacket> {
    let mut raw = Vec::new();
    ZlibDecoder::new(body(bytes)?)
        .read_to_end(&mut raw)
        .map_err(|e| Error::Codec(format!("zlib: {e}")))?;
    unpack(&raw)
}

/// Size of the uncompressed msgpack body, for diagnostics.
pub fn sensor_packet_plain_len(p: &SensorPacket) -> usize {
    pack(p).len()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePacket {
    pub k: u64,
    /// `k / 30` seconds.
    pub capture_time_s: f64,
    #[serde(with = "serde_bytes")]
    pub jpeg: Vec<u8>,
}

impl FramePacket {
    pub fn new(k: u64, jpeg: Vec<u8>) -> Self {
        Self {
            k,
            capture_time_s: k as f64 / FRAME_RATE_HZ,
            jpeg,
        }
    }
}

/// JPEG at quality 80 from packed RGB8.
pub fn encode_jpeg(rgb: &[u8], width: u32, height: u32) -> Result<Vec<u8>> {
    if rgb.len() != width as usize * height as usize * 3 {
        return Err(Error::Codec(format!(
            "expected {}x{}x3 bytes, got {}",
            width,
            height,
            rgb.len()
        )));
    }
    let mut out = Vec::new();
    JpegEncoder::new_with_quality(&mut out, JPEG_QUALITY)
        .encode(rgb, width, height, ExtendedColorType::Rgb8)
        .map_err(|e| Error::Codec(format!("jpeg: {e}")))?;
    Ok(out)
}

pub fn encode_frame_packet(p: &FramePacket) -> Vec<u8> {
    versioned(pack(p))
}

pub fn decode_frame_packet(bytes: &[u8]) -> Result<FramePacket> {
    unpack(body(bytes)?)
}

/// Numbers outgoing frames and rejects out-of-order ones on the way in.
#[derive(Debug, Clone, Default)]
pub struct FrameSequence {
    next: u64,
}

impl FrameSequence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_packet(&mut self, jpeg: Vec<u8>) -> FramePacket {
        let p = FramePacket::new(self.next, jpeg);
        self.next += 1;
        p
    }

    /// Accepts `p` if its index is not behind the last accepted one. Gaps
    /// are fine (frames may be dropped).
    pub fn accept(&mut self, p: &FramePacket) -> Result<()> {
        if p.k < self.next {
            return Err(Error::Codec(format!(
                "frame {} arrived after frame {}",
                p.k,
                self.next - 1
            )));
        }
        self.next = p.k + 1;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub name: String,
    pub class_id: u32,
    pub score: f64,
    /// `[x_min, y_min, x_max, y_max]`, pixels.
    pub bbox: [f64; 4],
    pub track_id: Option<u32>,
}

/// Detector output for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMessage {
    pub frame_k: u64,
    pub timestamp_ms: u64,
    pub detections: Vec<WireDetection>,
}

impl DetectionMessage {
    pub fn from_frame(frame: &DetectionFrame, timestamp_ms: u64, catalog: &ClassCatalog) -> Self {
        Self {
            frame_k: frame.frame_k,
            timestamp_ms,
            detections: frame
                .dets
                .iter()
                .map(|d| WireDetection {
                    name: catalog.name(d.class_id).unwrap_or("unknown").into(),
                    class_id: d.class_id,
                    score: d.score,
                    bbox: [d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max],
                    track_id: d.track_id,
                })
                .collect(),
        }
    }

    pub fn to_frame(&self) -> Result<DetectionFrame> {
        let dets = self
            .detections
            .iter()
            .map(|w| {
                let [a, b, c, d] = w.bbox;
                let bbox = PixelBox::new(a, b, c, d).map_err(|e| Error::Codec(e.to_string()))?;
                let mut det = indoornav_core::detect2d::Detection2D::new(bbox, w.score, w.class_id);
                det.track_id = w.track_id;
                Ok(det)
            })
            .collect::<Result<_>>()?;
        Ok(DetectionFrame {
            frame_k: self.frame_k,
            dets,
        })
    }
}

pub fn encode_detection_message(m: &DetectionMessage) -> Vec<u8> {
    versioned(pack_named(m))
}

pub fn decode_detection_message(bytes: &[u8]) -> Result<DetectionMessage> {
    unpack(body(bytes)?)
}

/// Scene description merged into the detector message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinedPacket {
    pub description: String,
    #[serde(flatten)]
    pub message: DetectionMessage,
}

pub fn combine_vlm_detections(description: &str, message: &DetectionMessage) -> CombinedPacket {
    CombinedPacket {
        description: description.into(),
        message: message.clone(),
    }
}

pub fn strip_description(p: &CombinedPacket) -> DetectionMessage {
    p.message.clone()
}

pub fn encode_combined_packet(p: &CombinedPacket) -> Vec<u8> {
    versioned(pack_named(p))
}

pub fn decode_combined_packet(bytes: &[u8]) -> Result<CombinedPacket> {
    unpack(body(bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use indoornav_core::shield::EnvelopeConfig;

    #[test]
    fn constant_readings_compress() {
        let tof = TofFrame::from_raw([1500.0; 6], 10, &EnvelopeConfig::default());
        let p = SensorPacket::new(&tof, &ImuFrame::default());
        let enc = encode_sensor_packet(&p);
        assert!(enc.len() - 1 < sensor_packet_plain_len(&p), "{} bytes", enc.len());
        assert_eq!(decode_sensor_packet(&enc).unwrap(), p);
    }

    #[test]
    fn invalid_sentinel_keeps_validity() {
        let cfg = EnvelopeConfig::default();
        let tof = TofFrame::from_raw([65535.0, 800.0, 65535.0, 1.0, 2.0, 3.0], 5, &cfg);
        let p = SensorPacket::new(&tof, &ImuFrame::default());
        let back = decode_sensor_packet(&encode_sensor_packet(&p)).unwrap();
        assert_eq!(back.valid, [false, true, false, true, true, true]);
        assert_eq!(back.tof_frame(), tof);
    }

    #[test]
    fn bad_versions_and_truncation_are_rejected() {
        let p = SensorPacket::new(
            &TofFrame::from_raw([1.0; 6], 0, &EnvelopeConfig::default()),
            &ImuFrame::default(),
        );
        let mut enc = encode_sensor_packet(&p);
        assert!(decode_sensor_packet(&enc[..enc.len() - 3]).is_err());
        assert!(decode_sensor_packet(&[]).is_err());
        enc[0] = 9;
        let err = decode_sensor_packet(&enc).unwrap_err().to_string();
        assert!(err.contains("version 9"), "{err}");
    }

    #[test]
    fn jpeg_frames_carry_index_and_time() {
        let rgb: Vec<u8> = (0..16 * 8 * 3).map(|i| (i * 7 % 256) as u8).collect();
        let jpeg = encode_jpeg(&rgb, 16, 8).unwrap();
        assert_eq!(&jpeg[..2], &[0xFF, 0xD8]);
        let mut seq = FrameSequence::new();
        let _ = seq.next_packet(Vec::new());
        let p = seq.next_packet(jpeg);
        assert_eq!(p.k, 1);
        assert_eq!(p.capture_time_s, 1.0 / 30.0);
        let back = decode_frame_packet(&encode_frame_packet(&p)).unwrap();
        assert_eq!(back, p);

        let mut rx = FrameSequence::new();
        rx.accept(&FramePacket::new(3, vec![])).unwrap();
        assert!(rx.accept(&FramePacket::new(2, vec![])).is_err());
        rx.accept(&FramePacket::new(7, vec![])).unwrap();
        assert!(encode_jpeg(&rgb, 16, 9).is_err());
    }

    #[test]
    fn combined_description_comes_first_and_strips_off() {
        let m = DetectionMessage {
            frame_k: 4,
            timestamp_ms: 2000,
            detections: vec![WireDetection {
                name: "sofa".into(),
                class_id: 3,
                score: 0.9,
                bbox: [10.0, 20.0, 110.0, 90.0],
                track_id: Some(2),
            }],
        };
        let c = combine_vlm_detections("", &m);
        let enc = encode_combined_packet(&c);
        // fixmap header, then the first key.
        assert_eq!(&enc[2..14], b"\xabdescription");
        let back = decode_combined_packet(&enc).unwrap();
        assert_eq!(back, c);
        assert_eq!(
            encode_detection_message(&strip_description(&back)),
            encode_detection_message(&m)
        );
    }
}

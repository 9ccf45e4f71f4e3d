//! Packets, topic endpoints and the two transports (in-process and TCP).

pub mod bus;
pub mod codec;
pub mod endpoints;
pub mod record;
pub mod tcp;

pub use bus::{Bus, Delivery, Publisher, Subscriber, TopicStats, DEFAULT_QUEUE_CAPACITY};
pub use codec::{
    combine_vlm_detections, decode_combined_packet, decode_detection_message,
    decode_frame_packet, decode_sensor_packet, encode_combined_packet, encode_detection_message,
    encode_frame_packet, encode_jpeg, encode_sensor_packet, strip_description, CombinedPacket,
    DetectionMessage, FramePacket, FrameSequence, SensorPacket, WireDetection, SCHEMA_VERSION,
};
pub use endpoints::{Endpoint, EndpointConfig};
pub use record::{read_topic, Record, TopicRecorder};

/// Topic names used inside the process.
pub mod topics {
    pub const CAMERA: &str = "camera";
    pub const DETECTIONS: &str = "detections";
    pub const SENSORS: &str = "sensors";
    pub const COMBINED: &str = "combined";
    pub const COMMANDS: &str = "commands";
}

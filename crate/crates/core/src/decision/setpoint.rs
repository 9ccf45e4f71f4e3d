//! Fixed-layout velocity setpoint packet for the flight controller link.
//!
//! ```text
//! offset  size  field
//!      0     1  magic 0xD5
//!      1     1  version (1)
//!      2    16  vx, vy, vz (m/s), yaw (deg) as f32 little-endian
//!     18     4  timestamp ms, u32 little-endian
//!     22     2  checksum: sum of bytes 0..22 mod 65536, u16 little-endian
//! ```

use crate::error::{Error, Result};

use super::{CommandSource, NavCommand};

pub const MAGIC: u8 = 0xD5;
pub const VERSION: u8 = 1;
pub const PACKET_LEN: usize = 24;

pub type SetpointPacket = [u8; PACKET_LEN];

fn checksum(bytes: &[u8]) -> u16 {
    bytes
        .iter()
        .fold(0u16, |acc, &b| acc.wrapping_add(b as u16))
}

/// Values are narrowed to `f32`.
pub fn encode_velocity_setpoint(cmd: &NavCommand, timestamp_ms: u32) -> SetpointPacket {
    let mut out = [0u8; PACKET_LEN];
    out[0] = MAGIC;
    out[1] = VERSION;
    for (i, v) in [cmd.vx, cmd.vy, cmd.vz, cmd.yaw].into_iter().enumerate() {
        out[2 + 4 * i..6 + 4 * i].copy_from_slice(&(v as f32).to_le_bytes());
    }
    out[18..22].copy_from_slice(&timestamp_ms.to_le_bytes());
    let sum = checksum(&out[..22]);
    out[22..].copy_from_slice(&sum.to_le_bytes());
    out
}

/// Inverse of [`encode_velocity_setpoint`]. The command source is not on the
/// wire and comes back as [`CommandSource::Reasoner`].
pub fn decode_velocity_setpoint(bytes: &[u8]) -> Result<(NavCommand, u32)> {
    if bytes.len() < PACKET_LEN {
        return Err(Error::Truncated(bytes.len()));
    }
    if bytes[0] != MAGIC {
        return Err(Error::BadMagic(bytes[0]));
    }
    if bytes[1] != VERSION {
        return Err(Error::UnsupportedVersion(bytes[1]));
    }
    let stored = u16::from_le_bytes([bytes[22], bytes[23]]);
    let computed = checksum(&bytes[..22]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let f = |i: usize| {
        let o = 2 + 4 * i;
        f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as f64
    };
    let ts = u32::from_le_bytes([bytes[18], bytes[19], bytes[20], bytes[21]]);
    Ok((
        NavCommand {
            vx: f(0),
            vy: f(1),
            vz: f(2),
            yaw: f(3),
            source: CommandSource::Reasoner,
        },
        ts,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_command_layout() {
        let p = encode_velocity_setpoint(&NavCommand::hover(), 0);
        assert_eq!(p[0], 0xD5);
        assert_eq!(p[1], 1);
        assert!(p[2..22].iter().all(|&b| b == 0));
        assert_eq!(u16::from_le_bytes([p[22], p[23]]), 0xD5 + 1);
    }

    #[test]
    fn round_trip() {
        let cmd = NavCommand::new(0.0, 0.5, -0.25, -8.0);
        let p = encode_velocity_setpoint(&cmd, 123_456);
        let (back, ts) = decode_velocity_setpoint(&p).unwrap();
        assert_eq!(back, cmd);
        assert_eq!(ts, 123_456);
    }

    #[test]
    fn corrupted_checksum_is_rejected() {
        let mut p = encode_velocity_setpoint(&NavCommand::new(0.5, 0.0, 0.0, 0.0), 7);
        p[23] ^= 0xFF;
        assert!(matches!(
            decode_velocity_setpoint(&p),
            Err(Error::Checksum { .. })
        ));
        let mut p = encode_velocity_setpoint(&NavCommand::new(0.5, 0.0, 0.0, 0.0), 7);
        p[5] ^= 0x01;
        assert!(decode_velocity_setpoint(&p).is_err());
    }

    #[test]
    fn header_errors() {
        let p = encode_velocity_setpoint(&NavCommand::hover(), 0);
        assert!(matches!(
            decode_velocity_setpoint(&p[..10]),
            Err(Error::Truncated(10))
        ));
        let mut q = p;
        q[0] = 0;
        assert!(matches!(
            decode_velocity_setpoint(&q),
            Err(Error::BadMagic(0))
        ));
        let mut q = p;
        q[1] = 2;
        assert!(matches!(
            decode_velocity_setpoint(&q),
            Err(Error::UnsupportedVersion(2))
        ));
    }
}

//! Fixed-layout little-endian datagrams exchanged with the plant.
//!
//! ```text
//! pose     (45 bytes): type=0x01 | vehicle_id u32 | timestamp_us u64 | x f64 | y f64 | heading f64 | speed f64
//! command  (29 bytes): type=0x02 | vehicle_id u32 | timestamp_us u64 | steering f64 | target_speed f64
//! ```

use thiserror::Error;

pub const POSE_TYPE: u8 = 0x01;
pub const COMMAND_TYPE: u8 = 0x02;
pub const POSE_LEN: usize = 1 + 4 + 8 + 4 * 8;
pub const COMMAND_LEN: usize = 1 + 4 + 8 + 2 * 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("buffer of {got} bytes is shorter than the {expected} byte frame")]
    ShortBuffer { expected: usize, got: usize },
    #[error("{extra} unexpected trailing bytes")]
    TrailingBytes { extra: usize },
    #[error("unknown message type 0x{0:02x}")]
    BadType(u8),
    #[error("empty buffer")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseMessage {
    pub vehicle_id: u32,
    pub timestamp_us: u64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandMessage {
    pub vehicle_id: u32,
    pub timestamp_us: u64,
    pub steering: f64,
    pub target_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Message {
    Pose(PoseMessage),
    Command(CommandMessage),
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut out = [0u8; N];
        out.copy_from_slice(&self.buf[self.pos..self.pos + N]);
        self.pos += N;
        out
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
}

fn check(buf: &[u8], ty: u8, len: usize) -> Result<Reader<'_>, ProtocolError> {
    let first = *buf.first().ok_or(ProtocolError::Empty)?;
    if first != ty {
        return Err(ProtocolError::BadType(first));
    }
    if buf.len() < len {
        return Err(ProtocolError::ShortBuffer { expected: len, got: buf.len() });
    }
    if buf.len() > len {
        return Err(ProtocolError::TrailingBytes { extra: buf.len() - len });
    }
    Ok(Reader { buf, pos: 1 })
}

impl PoseMessage {
    pub fn encode(&self) -> [u8; POSE_LEN] {
        let mut out = [0u8; POSE_LEN];
        out[0] = POSE_TYPE;
        out[1..5].copy_from_slice(&self.vehicle_id.to_le_bytes());
        out[5..13].copy_from_slice(&self.timestamp_us.to_le_bytes());
        for (i, v) in [self.x, self.y, self.heading, self.speed].iter().enumerate() {
            out[13 + 8 * i..21 + 8 * i].copy_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = check(buf, POSE_TYPE, POSE_LEN)?;
        Ok(Self { vehicle_id: r.u32(), timestamp_us: r.u64(), x: r.f64(), y: r.f64(), heading: r.f64(), speed: r.f64() })
    }
}

impl CommandMessage {
    pub fn encode(&self) -> [u8; COMMAND_LEN] {
        let mut out = [0u8; COMMAND_LEN];
        out[0] = COMMAND_TYPE;
        out[1..5].copy_from_slice(&self.vehicle_id.to_le_bytes());
        out[5..13].copy_from_slice(&self.timestamp_us.to_le_bytes());
        out[13..21].copy_from_slice(&self.steering.to_le_bytes());
        out[21..29].copy_from_slice(&self.target_speed.to_le_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, ProtocolError> {
        let mut r = check(buf, COMMAND_TYPE, COMMAND_LEN)?;
        Ok(Self { vehicle_id: r.u32(), timestamp_us: r.u64(), steering: r.f64(), target_speed: r.f64() })
    }
}

impl Message {
    pub fn decode(buf: &[u8]) -> Result<Self, ProtocolError> {
        match buf.first() {
            None => Err(ProtocolError::Empty),
            Some(&POSE_TYPE) => PoseMessage::decode(buf).map(Message::Pose),
            Some(&COMMAND_TYPE) => CommandMessage::decode(buf).map(Message::Command),
            Some(&other) => Err(ProtocolError::BadType(other)),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            Message::Pose(p) => p.encode().to_vec(),
            Message::Command(c) => c.encode().to_vec(),
        }
    }

    pub fn vehicle_id(&self) -> u32 {
        match self {
            Message::Pose(p) => p.vehicle_id,
            Message::Command(c) => c.vehicle_id,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frame_lengths() {
        assert_eq!(POSE_LEN, 45);
        assert_eq!(COMMAND_LEN, 29);
        let p = PoseMessage { vehicle_id: 7, timestamp_us: 20_000, x: 1.0, y: -2.0, heading: 0.5, speed: 0.8 };
        let bytes = p.encode();
        assert_eq!(bytes.len(), 45);
        assert_eq!(bytes[0], 0x01);
        assert_eq!(&bytes[1..5], &[7, 0, 0, 0]);
        assert_eq!(&bytes[5..13], &20_000u64.to_le_bytes());
        assert_eq!(&bytes[13..21], &1.0f64.to_le_bytes());
        assert_eq!(PoseMessage::decode(&bytes).unwrap(), p);
    }

    #[test]
    fn rejects_bad_frames() {
        let c = CommandMessage { vehicle_id: 1, timestamp_us: 3, steering: 0.1, target_speed: 1.0 }.encode();
        assert_eq!(Message::decode(&c[..20]), Err(ProtocolError::ShortBuffer { expected: 29, got: 20 }));
        let mut bad = c;
        bad[0] = 0x07;
        assert_eq!(Message::decode(&bad), Err(ProtocolError::BadType(0x07)));
        assert_eq!(PoseMessage::decode(&c), Err(ProtocolError::BadType(0x02)));
        assert_eq!(Message::decode(&[]), Err(ProtocolError::Empty));
        let mut long = c.to_vec();
        long.push(0);
        assert_eq!(Message::decode(&long), Err(ProtocolError::TrailingBytes { extra: 1 }));
    }

    proptest! {
        #[test]
        fn bytes_round_trip(id: u32, ts: u64, a: u64, b: u64, c: u64, d: u64, pose: bool) {
            let bytes = if pose {
                let mut v = vec![POSE_TYPE];
                v.extend(id.to_le_bytes());
                v.extend(ts.to_le_bytes());
                for w in [a, b, c, d] { v.extend(w.to_le_bytes()); }
                v
            } else {
                let mut v = vec![COMMAND_TYPE];
                v.extend(id.to_le_bytes());
                v.extend(ts.to_le_bytes());
                for w in [a, b] { v.extend(w.to_le_bytes()); }
                v
            };
            let m = Message::decode(&bytes).unwrap();
            prop_assert_eq!(m.encode(), bytes);
        }
    }
}

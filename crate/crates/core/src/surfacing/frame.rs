//! Binary frame layout used by the render API, the frame socket and `render --frame`.
//!
//! All fields little-endian:
//!
//! | offset | type  | field                                  |
//! |--------|-------|----------------------------------------|
//! | 0      | [u8;4]| magic `MFRM`                           |
//! | 4      | u32   | flags, bit 0 set when depth follows    |
//! | 8      | u64   | session revision the frame was rendered at |
//! | 16     | u32   | width                                  |
//! | 20     | u32   | height                                 |
//! | 24     | f32   | render time in milliseconds            |
//! | 28     | u32   | request sequence number echoed back    |
//! | 32     |       | RGBA8 rows, top row first              |
//!
//! When bit 0 is set, `width * height` f32 hit distances follow the pixels
//! (infinity on misses).

use super::RenderedFrame;

pub const FRAME_MAGIC: &[u8; 4] = b"MFRM";
pub const FRAME_HEADER_LEN: usize = 32;
pub const FLAG_DEPTH: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameHeader {
    pub flags: u32,
    pub revision: u64,
    pub width: u32,
    pub height: u32,
    pub millis: f32,
    pub seq: u32,
}

pub fn encode_frame(frame: &RenderedFrame, revision: u64, seq: u32, with_depth: bool) -> Vec<u8> {
    let depth_len = if with_depth { 4 * frame.depth.len() } else { 0 };
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + frame.rgba.len() + depth_len);
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&(if with_depth { FLAG_DEPTH } else { 0 }).to_le_bytes());
    out.extend_from_slice(&revision.to_le_bytes());
    out.extend_from_slice(&(frame.width as u32).to_le_bytes());
    out.extend_from_slice(&(frame.height as u32).to_le_bytes());
    out.extend_from_slice(&(frame.millis as f32).to_le_bytes());
    out.extend_from_slice(&seq.to_le_bytes());
    out.extend_from_slice(&frame.rgba);
    if with_depth {
        for d in &frame.depth {
            out.extend_from_slice(&d.to_le_bytes());
        }
    }
    out
}

/// Parses the header and checks the payload length. Returns the header and the pixel bytes.
pub fn decode_frame_header(bytes: &[u8]) -> Option<(FrameHeader, &[u8])> {
    if bytes.len() < FRAME_HEADER_LEN || &bytes[..4] != FRAME_MAGIC {
        return None;
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let header = FrameHeader {
        flags: u32_at(4),
        revision: u64::from_le_bytes(bytes[8..16].try_into().unwrap()),
        width: u32_at(16),
        height: u32_at(20),
        millis: f32::from_le_bytes(bytes[24..28].try_into().unwrap()),
        seq: u32_at(28),
    };
    let pixels = header.width as usize * header.height as usize;
    let depth = if header.flags & FLAG_DEPTH != 0 { 4 * pixels } else { 0 };
    if bytes.len() != FRAME_HEADER_LEN + 4 * pixels + depth {
        return None;
    }
    Some((header, &bytes[FRAME_HEADER_LEN..FRAME_HEADER_LEN + 4 * pixels]))
}

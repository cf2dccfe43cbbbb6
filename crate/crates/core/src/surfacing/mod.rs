//! Display and export of the composite surface.

mod extract;
mod frame;
mod render;

pub use extract::{marching_cubes, MIN_RESOLUTION};
pub use frame::{decode_frame_header, encode_frame, FrameHeader, FLAG_DEPTH, FRAME_HEADER_LEN, FRAME_MAGIC};
pub use render::{
    render, sphere_trace, Camera, Hit, RenderParams, RenderedFrame, TraceResult, BACKGROUND,
};

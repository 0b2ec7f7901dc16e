//! Binary and text serialization: SPLAT frames, `VSPL` streams and PLY.

mod ply;
mod splat;

pub use ply::{ply_summary, PlySummary, read_ply_gaussian, read_ply_pointcloud, write_ply_gaussian, write_ply_pointcloud, SH_C0};
pub use splat::{
    decode_splat_frame, decode_video_splat, encode_splat_frame, encode_video_splat, quantize_frame, quantize_quaternion,
    video_splat_index, video_splat_size, RECORD_SIZE, VSPL_HEADER_SIZE, VSPL_MAGIC, VSPL_VERSION,
};

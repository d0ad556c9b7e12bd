//! Neural signed-distance surface reconstruction from posed images and
//! per-view feature maps, with pixel- and patch-wise feature consistency on
//! the first zero crossing of each ray.

pub mod consistency;
pub mod field;
pub mod geometry;
pub mod mesh;
pub mod optim;
pub mod renderer;
pub mod scene;
pub mod trainer;

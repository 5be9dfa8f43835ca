//! Semantic map rasterization, the convolutional map encoder and GradCAM.

pub mod encoder;
pub mod raster;
pub mod saliency;

pub use encoder::{MapEncoder, MapEncoderConfig, MapForward, MapPooling};
pub use raster::{
    local_to_pixel, pixel_of, pixel_to_local, raster_iou, rasterize, RasterMap, VectorMap, ANCHOR_PIXEL,
    CHANNEL_AREAS, CHANNEL_LANE_DIVIDERS, CHANNEL_ROAD_DIVIDERS, RASTER_CHANNELS, RASTER_SIZE, RESOLUTION,
};
pub use saliency::{grad_cam, upsample_bilinear, SaliencyMap};

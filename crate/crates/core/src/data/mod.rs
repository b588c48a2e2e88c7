//! Dataset ingestion, rasterization, splitting, preprocessing and
//! statistics.
//!
//! A dataset is a JSON manifest of image records with polygon annotations.
//! Transforms act on an [`ImageSample`] and keep pixels and polygons in step.

mod image_io;
mod manifest;
mod mask;
mod raster;
mod split;
pub mod synthetic;
mod transform;

pub use image_io::{load_gray, load_rgb, load_sample, rgb_to_tensor, save_pgm, save_rgb, ImageSample};
pub use manifest::{
    class_histogram, default_classes, load_manifest, DatasetManifest, ImageRecord, PolygonAnnotation, MANIFEST_VERSION,
};
pub use mask::{BinaryMask, LabelMap, BACKGROUND};
pub use raster::{
    annotation_grid, annotation_heatmap, point_in_polygon, rasterize_polygon, record_label_map, Heatmap,
};
pub use split::{split_dataset, split_sizes, DEFAULT_SPLIT};
pub use transform::{
    augment_brightness, augment_crop_zoom, augment_saturation, auto_orient, clip_polygon, crop_resize, crop_window,
    polygon_area, resize_with_annotations, MAX_COLOR_DELTA, MAX_ZOOM,
};

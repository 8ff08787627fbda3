//! 3D morphable face model toolkit: shape synthesis, landmark fitting with
//! vertex/parameter distance costs, rigid eye alignment, texture extraction,
//! image quality metrics and asset I/O.

pub mod alignment;
pub mod error;
pub mod fitting;
pub mod image;
pub mod io;
mod lm;
pub mod metrics;
pub mod model;
pub mod synthetic;
pub mod texture;

pub use error::{Error, FormatError, Result};
pub use fitting::{
    fit_landmarks, landmark_jacobian, landmark_residuals, meta_joint_fit, vdc, wpdc,
    wpdc_weights, Branch, FitConfig, FitResult, MetaRecord, MetaSplit,
};
pub use image::ImageBuffer;
pub use model::{
    landmark_positions, project_model, project_vertices, rotation_from_euler, synthesize_shape,
    EulerAngles, FaceMesh, ModelParams, MorphableBasis, RotationMatrix,
};

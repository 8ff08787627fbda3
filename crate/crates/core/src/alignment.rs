//! In-plane rigid alignment from eye landmarks and 2D image warps.
//!
//! Angles are in degrees, measured in image coordinates (x right, y down) with
//! the rotation `[cos -sin; sin cos]`. The "left" eye is the subject's left
//! (indices 42-47 of the 68-point scheme, on the viewer's right).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

pub const FULL_68_COUNT: usize = 68;
pub const RIGHT_EYE: std::ops::Range<usize> = 36..42;
pub const LEFT_EYE: std::ops::Range<usize> = 42..48;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LandmarkScheme {
    #[serde(rename = "FULL_68")]
    Full68,
    /// `[left eye center, right eye center]`.
    #[serde(rename = "EYES_ONLY")]
    EyesOnly,
    /// Any number of points in a model-specific order (fitting targets).
    #[serde(rename = "GENERIC")]
    Generic,
}

impl LandmarkScheme {
    pub fn expected_count(self) -> Option<usize> {
        match self {
            Self::Full68 => Some(FULL_68_COUNT),
            Self::EyesOnly => Some(2),
            Self::Generic => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub scheme: LandmarkScheme,
    pub points: Vec<[f64; 2]>,
}

impl LandmarkSet {
    pub fn new(scheme: LandmarkScheme, points: Vec<[f64; 2]>) -> Result<Self> {
        let set = Self { scheme, points };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(n) = self.scheme.expected_count() {
            if self.points.len() != n {
                return Err(Error::invalid(format!(
                    "{:?} landmark set needs {n} points, got {}",
                    self.scheme,
                    self.points.len()
                )));
            }
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("landmark coordinates must be finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform2D {
    /// Degrees in (-180, 180].
    pub r: f64,
    pub tx: f64,
    pub ty: f64,
}

impl RigidTransform2D {
    pub const IDENTITY: Self = Self {
        r: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    /// Rotates `p` by `r` about `center`, then translates by `t`.
    pub fn apply_point(&self, p: [f64; 2], center: [f64; 2]) -> [f64; 2] {
        let q = rotate_about(p, center, self.r);
        [q[0] + self.tx, q[1] + self.ty]
    }

    /// Exact inverse of [`apply_point`](Self::apply_point).
    pub fn invert_point(&self, p: [f64; 2], center: [f64; 2]) -> [f64; 2] {
        rotate_about([p[0] - self.tx, p[1] - self.ty], center, -self.r)
    }
}

/// Maps any angle in degrees into (-180, 180].
pub fn normalize_degrees(r: f64) -> f64 {
    let m = r.rem_euclid(360.0);
    if m > 180.0 {
        m - 360.0
    } else {
        m
    }
}

/// `(sin, cos)` of an angle in degrees, exact at multiples of 90.
pub fn sin_cos_degrees(deg: f64) -> (f64, f64) {
    let m = deg.rem_euclid(360.0);
    match m {
        0.0 => (0.0, 1.0),
        90.0 => (1.0, 0.0),
        180.0 => (0.0, -1.0),
        270.0 => (-1.0, 0.0),
        _ => deg.to_radians().sin_cos(),
    }
}

/// Written as `p + (R - I)(p - c)` so a zero angle returns `p` unchanged.
fn rotate_about(p: [f64; 2], c: [f64; 2], deg: f64) -> [f64; 2] {
    let (s, co) = sin_cos_degrees(deg);
    let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
    [
        p[0] + (co - 1.0) * dx - s * dy,
        p[1] + s * dx + (co - 1.0) * dy,
    ]
}

/// `(left, right)` eye centers.
pub fn eye_centers(landmarks: &LandmarkSet) -> Result<([f64; 2], [f64; 2])> {
    landmarks.validate()?;
    match landmarks.scheme {
        LandmarkScheme::EyesOnly => Ok((landmarks.points[0], landmarks.points[1])),
        LandmarkScheme::Full68 => Ok((
            centroid(&landmarks.points[LEFT_EYE]),
            centroid(&landmarks.points[RIGHT_EYE]),
        )),
        LandmarkScheme::Generic => Err(Error::invalid(
            "eye centers need a FULL_68 or EYES_ONLY landmark set",
        )),
    }
}

fn centroid(points: &[[f64; 2]]) -> [f64; 2] {
    let n = points.len() as f64;
    let s = points
        .iter()
        .fold([0.0, 0.0], |acc, p| [acc[0] + p[0], acc[1] + p[1]]);
    [s[0] / n, s[1] / n]
}

/// Direction of the right-to-left eye line, in degrees.
fn eye_line_angle(left: [f64; 2], right: [f64; 2]) -> Result<f64> {
    let (dx, dy) = (left[0] - right[0], left[1] - right[1]);
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::DegenerateGeometry("eye centers coincide".into()));
    }
    Ok(dy.atan2(dx).to_degrees())
}

/// Rotation from the aligned eye line to the unaligned one, followed by the
/// offset between the unaligned left eye and the rotated aligned left eye.
/// Rotations pivot on `rotation_center`.
pub fn compute_pseudo_transform(
    unaligned: &LandmarkSet,
    aligned: &LandmarkSet,
    rotation_center: [f64; 2],
) -> Result<RigidTransform2D> {
    let (ul, ur) = eye_centers(unaligned)?;
    let (al, ar) = eye_centers(aligned)?;
    let r = normalize_degrees(eye_line_angle(ul, ur)? - eye_line_angle(al, ar)?);
    let rotated = rotate_about(al, rotation_center, r);
    Ok(RigidTransform2D {
        r,
        tx: ul[0] - rotated[0],
        ty: ul[1] - rotated[1],
    })
}

/// Warps `image` by `transform` about `rotation_center`: each output pixel
/// samples the input bilinearly at its inverse-mapped position, black outside.
pub fn apply_rigid_transform(
    image: &ImageBuffer,
    transform: &RigidTransform2D,
    rotation_center: [f64; 2],
) -> Result<ImageBuffer> {
    if image.is_empty() {
        return Err(Error::invalid("cannot warp an empty image"));
    }
    let mut out = ImageBuffer::new(image.width(), image.height(), image.channels())?;
    for y in 0..image.height() {
        for x in 0..image.width() {
            let src = transform.invert_point([x as f64, y as f64], rotation_center);
            for c in 0..image.channels() {
                out.set(x, y, c, image.sample_bilinear(src[0], src[1], c));
            }
        }
    }
    Ok(out)
}

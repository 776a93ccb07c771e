//! Global pre-processing: sensor-to-global rigid transforms and geo-fencing.

use alloc::vec::Vec;

use crate::math::{self, normalize_angle};
use crate::node::NodeId;
use crate::{Error, Result};

/// A single LiDAR return. `i` is reflectance intensity in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub i: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64, z: f64, i: f64) -> Self {
        Point { x, y, z, i }
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && (0.0..=1.0).contains(&self.i)
    }

    pub fn distance(&self, other: &Point) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        math::sqrt(dx * dx + dy * dy + dz * dz)
    }
}

/// Coordinate frame a cloud is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Sensor(NodeId),
    Global,
}

impl Frame {
    fn label(self) -> &'static str {
        match self {
            Frame::Sensor(_) => "sensor",
            Frame::Global => "global",
        }
    }
}

/// Ordered point list tagged with the frame all its points live in.
///
/// The frame can only change through [`to_global`].
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    frame: Frame,
}

impl PointCloud {
    pub fn new(frame: Frame, points: Vec<Point>) -> Self {
        PointCloud { points, frame }
    }

    pub fn empty(frame: Frame) -> Self {
        PointCloud::new(frame, Vec::new())
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn require_global(&self) -> Result<()> {
        match self.frame {
            Frame::Global => Ok(()),
            other => Err(Error::FrameMismatch {
                expected: "global",
                found: other.label(),
            }),
        }
    }
}

/// Sensor location and pose: translation in meters, Euler angles in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlaP {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
}

impl SlaP {
    /// Builds a pose from radians, wrapping the angles into `(-pi, pi]`.
    pub fn new(x: f64, y: f64, z: f64, pitch: f64, yaw: f64, roll: f64) -> Self {
        SlaP {
            x,
            y,
            z,
            pitch: normalize_angle(pitch),
            yaw: normalize_angle(yaw),
            roll: normalize_angle(roll),
        }
    }

    pub fn from_degrees(x: f64, y: f64, z: f64, pitch: f64, yaw: f64, roll: f64) -> Self {
        SlaP::new(x, y, z, pitch.to_radians(), yaw.to_radians(), roll.to_radians())
    }

    pub fn identity() -> Self {
        SlaP::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.z, self.pitch, self.yaw, self.roll]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Axis-aligned cooperative-perception region. Bounds are inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Region {
    pub fn new(x: (f64, f64), y: (f64, f64), z: (f64, f64)) -> Result<Self> {
        let r = Region {
            x_min: x.0,
            x_max: x.1,
            y_min: y.0,
            y_max: y.1,
            z_min: z.0,
            z_max: z.1,
        };
        r.validate()?;
        Ok(r)
    }

    /// The two-intersection corridor used for the reference deployment.
    pub fn reference() -> Self {
        Region {
            x_min: -53.76,
            x_max: 181.76,
            y_min: -48.6,
            y_max: 41.0,
            z_min: -1.0,
            z_max: 3.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let axes = [
            ("x", self.x_min, self.x_max),
            ("y", self.y_min, self.y_max),
            ("z", self.z_min, self.z_max),
        ];
        for (name, lo, hi) in axes {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Config(alloc::format!(
                    "region {name} range must satisfy min < max, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &Point) -> bool {
        (self.x_min..=self.x_max).contains(&p.x)
            && (self.y_min..=self.y_max).contains(&p.y)
            && (self.z_min..=self.z_max).contains(&p.z)
    }

    pub fn extent_x(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn extent_y(&self) -> f64 {
        self.y_max - self.y_min
    }
}

/// `p -> R p + t` with `R` orthonormal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn apply_xyz(&self, v: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2] + t[0],
            r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2] + t[1],
            r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2] + t[2],
        ]
    }

    /// Rotates a direction vector (no translation).
    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        [
            r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
            r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
            r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
        ]
    }

    /// Intensity passes through unchanged.
    pub fn apply(&self, p: &Point) -> Point {
        let [x, y, z] = self.apply_xyz(p.xyz());
        Point { x, y, z, i: p.i }
    }

    /// Analytic inverse: `p -> R^T (p - t)`.
    pub fn inverse(&self) -> RigidTransform {
        let r = &self.rotation;
        let rt = [
            [r[0][0], r[1][0], r[2][0]],
            [r[0][1], r[1][1], r[2][1]],
            [r[0][2], r[1][2], r[2][2]],
        ];
        let t = &self.translation;
        let translation = [
            -(rt[0][0] * t[0] + rt[0][1] * t[1] + rt[0][2] * t[2]),
            -(rt[1][0] * t[0] + rt[1][1] * t[1] + rt[1][2] * t[2]),
            -(rt[2][0] * t[0] + rt[2][1] * t[1] + rt[2][2] * t[2]),
        ];
        RigidTransform {
            rotation: rt,
            translation,
        }
    }
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Sensor-to-global map `p -> R_X(-roll) R_Y(-pitch) R_Z(-yaw) p + [X, Y, Z]`.
pub fn build_transform(pose: &SlaP) -> Result<RigidTransform> {
    if !pose.is_finite() {
        return Err(Error::InvalidPose("pose fields must be finite"));
    }
    let (sr, cr) = (math::sin(-pose.roll), math::cos(-pose.roll));
    let (sp, cp) = (math::sin(-pose.pitch), math::cos(-pose.pitch));
    let (sy, cy) = (math::sin(-pose.yaw), math::cos(-pose.yaw));

    let rx = [[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]];
    let ry = [[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]];
    let rz = [[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]];

    Ok(RigidTransform {
        rotation: matmul3(&matmul3(&rx, &ry), &rz),
        translation: [pose.x, pose.y, pose.z],
    })
}

/// Moves a sensor-frame cloud into the global frame.
pub fn to_global(cloud: &PointCloud, pose: &SlaP) -> Result<PointCloud> {
    if cloud.frame == Frame::Global {
        return Err(Error::FrameMismatch {
            expected: "sensor",
            found: "global",
        });
    }
    let tf = build_transform(pose)?;
    let points = cloud.points.iter().map(|p| tf.apply(p)).collect();
    Ok(PointCloud::new(Frame::Global, points))
}

/// Keeps the points inside `region` (closed on every side), preserving order.
pub fn geofence(cloud: &PointCloud, region: &Region) -> Result<PointCloud> {
    cloud.require_global()?;
    let points = cloud.points.iter().copied().filter(|p| region.contains(p)).collect();
    Ok(PointCloud::new(Frame::Global, points))
}

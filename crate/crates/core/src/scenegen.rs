//! Synthetic scenes: boxes and sensors placed in the global frame, with
//! per-node LiDAR returns sampled from the visible box faces and an optional
//! ground plane.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::eval::GroundTruthObject;
use crate::geometry::{build_transform, Frame, Point, PointCloud, Region, RigidTransform, SlaP};
use crate::head::{Box3D, ObjectClass};
use crate::math;
use crate::netsim::{NodeDescriptor, Role};
use crate::node::Stream;
use crate::{Error, Result};

/// LiDAR model. Angles in degrees, distances in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    pub channels: u32,
    pub height: f64,
    pub range: f64,
    pub frequency_hz: f64,
    pub upper_fov: f64,
    pub lower_fov: f64,
    pub reflection_rate: f64,
    pub noise_stdev: f64,
    pub dropoff_rate: f64,
    pub dropoff_intensity: f64,
    pub dropoff_zero_intensity: f64,
    /// Horizontal angular step used for face sampling density.
    pub horizontal_resolution: f64,
    /// Azimuth step between ground returns on one laser ring.
    pub ground_azimuth_step: f64,
    pub ground: bool,
}

impl SensorModel {
    pub fn vehicle() -> Self {
        SensorModel {
            channels: 64,
            height: 1.74,
            range: 100.0,
            frequency_hz: 10.0,
            upper_fov: 22.5,
            lower_fov: -22.5,
            reflection_rate: 0.004,
            noise_stdev: 0.01,
            dropoff_rate: 0.45,
            dropoff_intensity: 0.8,
            dropoff_zero_intensity: 0.4,
            horizontal_resolution: 0.2,
            ground_azimuth_step: 1.0,
            ground: true,
        }
    }

    pub fn infrastructure() -> Self {
        SensorModel {
            height: 4.74,
            upper_fov: 0.0,
            ..Self::vehicle()
        }
    }

    pub fn for_stream(s: Stream) -> Self {
        match s {
            Stream::Vehicle => Self::vehicle(),
            Stream::Infrastructure => Self::infrastructure(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.channels >= 2
            && self.range > 0.0
            && self.upper_fov > self.lower_fov
            && self.noise_stdev >= 0.0
            && (0.0..=1.0).contains(&self.dropoff_rate)
            && (0.0..=1.0).contains(&self.dropoff_zero_intensity)
            && self.horizontal_resolution > 0.0
            && self.ground_azimuth_step > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("sensor model parameters out of range".into()))
        }
    }

    /// Angle between adjacent lasers, degrees.
    pub fn vertical_resolution(&self) -> f64 {
        (self.upper_fov - self.lower_fov) / (self.channels - 1) as f64
    }

    fn pixel_solid_angle(&self) -> f64 {
        self.vertical_resolution().to_radians() * self.horizontal_resolution.to_radians()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneObject {
    pub bbox: Box3D,
    pub class: ObjectClass,
    /// Planar velocity in m/s.
    pub velocity: (f64, f64),
}

impl SceneObject {
    pub fn at_time(&self, t: f64) -> SceneObject {
        let mut o = *self;
        o.bbox.x += self.velocity.0 * t;
        o.bbox.y += self.velocity.1 * t;
        o
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioNode {
    pub descriptor: NodeDescriptor,
    pub sensor: SensorModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub region: Region,
    pub nodes: Vec<ScenarioNode>,
    pub objects: Vec<SceneObject>,
    pub frames: u32,
    pub frame_period: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.region.validate()?;
        for n in &self.nodes {
            n.sensor.validate()?;
            if !n.descriptor.pose.is_finite() {
                return Err(Error::InvalidPose("node pose must be finite"));
            }
        }
        for f in 0..self.frames {
            for o in self.objects_at(f) {
                let c = Point::new(o.bbox.x, o.bbox.y, o.bbox.z, 0.0);
                if !o.bbox.is_valid() || !self.region.contains(&c) {
                    return Err(Error::Config(alloc::format!(
                        "object at ({:.2}, {:.2}, {:.2}) leaves the region in frame {f}",
                        o.bbox.x,
                        o.bbox.y,
                        o.bbox.z
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn objects_at(&self, frame: u32) -> Vec<SceneObject> {
        let t = frame as f64 * self.frame_period;
        self.objects.iter().map(|o| o.at_time(t)).collect()
    }

    pub fn descriptors(&self) -> Vec<NodeDescriptor> {
        self.nodes.iter().map(|n| n.descriptor).collect()
    }

    /// Every node's sensor-frame cloud for one frame, in node order.
    pub fn sample_frame(&self, frame: u32, seed: u64) -> Result<Vec<PointCloud>> {
        let objects = self.objects_at(frame);
        self.nodes
            .iter()
            .map(|n| sample_cloud(&objects, &n.descriptor, &n.sensor, node_seed(seed, frame)))
            .collect()
    }

    /// Ground truth with point counts over the union of all nodes' clouds.
    pub fn ground_truth(&self, frame: u32, clouds: &[PointCloud]) -> Result<Vec<GroundTruthObject>> {
        let mut global = Vec::new();
        for (n, c) in self.nodes.iter().zip(clouds) {
            global.push(crate::geometry::to_global(c, &n.descriptor.pose)?);
        }
        Ok(self
            .objects_at(frame)
            .iter()
            .map(|o| GroundTruthObject {
                bbox: o.bbox,
                class: o.class,
                mp: global.iter().map(|g| mp_count(&o.bbox, g)).sum(),
            })
            .collect())
    }
}

fn node_seed(seed: u64, frame: u32) -> u64 {
    seed ^ (frame as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Points of `cloud` inside `gt` (boundary inclusive).
pub fn mp_count(gt: &Box3D, cloud: &PointCloud) -> u32 {
    cloud.points().iter().filter(|p| gt.contains(p.x, p.y, p.z)).count() as u32
}

/// Entry parameter of the segment `o + t d`, `t in [0, 1]`, into the box, if any.
fn segment_hits_box(o: [f64; 3], d: [f64; 3], b: &Box3D) -> Option<f64> {
    let (s, c) = (math::sin(b.theta), math::cos(b.theta));
    let local = |v: [f64; 3], shift: bool| {
        let (x, y) = if shift { (v[0] - b.x, v[1] - b.y) } else { (v[0], v[1]) };
        [x * c + y * s, -x * s + y * c, if shift { v[2] - b.z } else { v[2] }]
    };
    let lo = local(o, true);
    let ld = local(d, false);
    let half = [b.l / 2.0, b.w / 2.0, b.h / 2.0];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for k in 0..3 {
        if ld[k].abs() < 1e-15 {
            if lo[k].abs() > half[k] {
                return None;
            }
            continue;
        }
        let (a, bb) = ((-half[k] - lo[k]) / ld[k], (half[k] - lo[k]) / ld[k]);
        let (a, bb) = if a < bb { (a, bb) } else { (bb, a) };
        t0 = t0.max(a);
        t1 = t1.min(bb);
        if t0 > t1 {
            return None;
        }
    }
    Some(t0)
}

fn occluded(origin: [f64; 3], target: [f64; 3], objects: &[SceneObject], skip: Option<usize>) -> bool {
    let d = [target[0] - origin[0], target[1] - origin[1], target[2] - origin[2]];
    objects
        .iter()
        .enumerate()
        .any(|(i, o)| Some(i) != skip && segment_hits_box(origin, d, &o.bbox).is_some_and(|t| t < 1.0 - 1e-9))
}

struct Sampler<'a> {
    origin: [f64; 3],
    to_sensor: RigidTransform,
    sensor: &'a SensorModel,
    noise: Option<Normal<f64>>,
    rng: ChaCha8Rng,
    out: Vec<Point>,
}

impl Sampler<'_> {
    /// Applies FOV, range, noise, intensity and dropoff to one global-frame
    /// return and records it in the sensor frame.
    fn emit(&mut self, p: [f64; 3]) {
        let d = [p[0] - self.origin[0], p[1] - self.origin[1], p[2] - self.origin[2]];
        let dist = math::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        if dist <= 1e-9 || dist > self.sensor.range {
            return;
        }
        let ls = self.to_sensor.rotate(d);
        let elev = math::atan2(ls[2], math::hypot(ls[0], ls[1])).to_degrees();
        if elev > self.sensor.upper_fov || elev < self.sensor.lower_fov {
            return;
        }
        let noisy = match &self.noise {
            Some(n) => dist + n.sample(&mut self.rng),
            None => dist,
        };
        if noisy <= 0.0 || noisy > self.sensor.range {
            return;
        }
        let intensity = math::exp(-self.sensor.reflection_rate * noisy);
        let drop_p = if intensity > self.sensor.dropoff_intensity {
            0.0
        } else if intensity == 0.0 {
            self.sensor.dropoff_zero_intensity
        } else {
            self.sensor.dropoff_rate
        };
        let u: f64 = self.rng.random();
        if u < drop_p {
            return;
        }
        let s = noisy / dist;
        let q = self.to_sensor.rotate([d[0] * s, d[1] * s, d[2] * s]);
        self.out.push(Point::new(
            q[0] as f32 as f64,
            q[1] as f32 as f64,
            q[2] as f32 as f64,
            intensity as f32 as f64,
        ));
    }
}

/// Faces of a box as `(centre, normal, u-axis half extent vector, v-axis half extent vector)`.
fn faces(b: &Box3D) -> [([f64; 3], [f64; 3], [f64; 3], [f64; 3]); 6] {
    let (s, c) = (math::sin(b.theta), math::cos(b.theta));
    let ex = [c, s, 0.0];
    let ey = [-s, c, 0.0];
    let ez = [0.0, 0.0, 1.0];
    let (hl, hw, hh) = (b.l / 2.0, b.w / 2.0, b.h / 2.0);
    let ctr = [b.x, b.y, b.z];
    let sc = |v: [f64; 3], k: f64| [v[0] * k, v[1] * k, v[2] * k];
    let add = |a: [f64; 3], v: [f64; 3]| [a[0] + v[0], a[1] + v[1], a[2] + v[2]];
    [
        (add(ctr, sc(ex, hl)), ex, sc(ey, hw), sc(ez, hh)),
        (add(ctr, sc(ex, -hl)), sc(ex, -1.0), sc(ey, hw), sc(ez, hh)),
        (add(ctr, sc(ey, hw)), ey, sc(ex, hl), sc(ez, hh)),
        (add(ctr, sc(ey, -hw)), sc(ey, -1.0), sc(ex, hl), sc(ez, hh)),
        (add(ctr, sc(ez, hh)), ez, sc(ex, hl), sc(ey, hw)),
        (add(ctr, sc(ez, -hh)), sc(ez, -1.0), sc(ex, hl), sc(ey, hw)),
    ]
}

fn norm(v: [f64; 3]) -> f64 {
    math::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
}

/// Samples one node's returns. Output is in the node's sensor frame with
/// coordinates rounded to `f32`. Deterministic in `seed` and the node id.
pub fn sample_cloud(
    objects: &[SceneObject],
    node: &NodeDescriptor,
    sensor: &SensorModel,
    seed: u64,
) -> Result<PointCloud> {
    sensor.validate()?;
    let tf = build_transform(&node.pose)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(node.id.0 as u64 + 1);
    let noise = if sensor.noise_stdev > 0.0 {
        Some(Normal::new(0.0, sensor.noise_stdev).map_err(|_| Error::Config("invalid noise stdev".into()))?)
    } else {
        None
    };
    let origin = tf.translation;
    let mut s = Sampler {
        origin,
        to_sensor: tf.inverse(),
        sensor,
        noise,
        rng,
        out: Vec::new(),
    };
    let pixel = sensor.pixel_solid_angle();

    for (i, o) in objects.iter().enumerate() {
        let dc = [o.bbox.x - origin[0], o.bbox.y - origin[1], o.bbox.z - origin[2]];
        if norm(dc) - o.bbox.diagonal().max(o.bbox.h) > sensor.range {
            continue;
        }
        for (fc, n, u, v) in faces(&o.bbox) {
            let to_o = [origin[0] - fc[0], origin[1] - fc[1], origin[2] - fc[2]];
            let dist = norm(to_o);
            let cos_inc = (to_o[0] * n[0] + to_o[1] * n[1] + to_o[2] * n[2]) / dist;
            if cos_inc <= 0.0 {
                continue;
            }
            let area = 4.0 * norm(u) * norm(v);
            let count = math::round(area * cos_inc / (dist * dist) / pixel) as usize;
            for _ in 0..count {
                let a: f64 = s.rng.random_range(-1.0..=1.0);
                let b: f64 = s.rng.random_range(-1.0..=1.0);
                let p = [
                    fc[0] + a * u[0] + b * v[0],
                    fc[1] + a * u[1] + b * v[1],
                    fc[2] + a * u[2] + b * v[2],
                ];
                if occluded(origin, p, objects, Some(i)) {
                    continue;
                }
                s.emit(p);
            }
        }
    }

    if sensor.ground && origin[2] > 0.0 {
        let vres = sensor.vertical_resolution();
        let steps = math::round(360.0 / sensor.ground_azimuth_step) as usize;
        for ch in 0..sensor.channels {
            let elev = (sensor.lower_fov + vres * ch as f64).to_radians();
            for k in 0..steps {
                let az = (k as f64 * sensor.ground_azimuth_step).to_radians();
                let dir_s = [
                    math::cos(elev) * math::cos(az),
                    math::cos(elev) * math::sin(az),
                    math::sin(elev),
                ];
                let dir = tf.rotate(dir_s);
                if dir[2] >= -1e-12 {
                    continue;
                }
                let t = -origin[2] / dir[2];
                if t > sensor.range {
                    continue;
                }
                let p = [origin[0] + t * dir[0], origin[1] + t * dir[1], 0.0];
                if occluded(origin, p, objects, None) {
                    continue;
                }
                s.emit(p);
            }
        }
    }

    Ok(PointCloud::new(Frame::Sensor(node.id), s.out))
}

/// One target fully hidden from a vehicle by a truck, but in clear view of
/// a roadside unit. Node 0 is the roadside (central) node, node 1 the
/// vehicle. Returns the scenario and the index of the hidden target.
pub fn occlusion_demo() -> (Scenario, usize) {
    let infra = NodeDescriptor::new(
        0,
        Role::Central,
        Stream::Infrastructure,
        SlaP::new(0.0, 0.0, 4.74, 0.0, 0.0, 0.0),
    );
    let veh = NodeDescriptor::new(
        1,
        Role::Slave,
        Stream::Vehicle,
        SlaP::new(30.0, 10.0, 1.74, 0.0, 0.0, 0.0),
    );
    let no_ground = |s: SensorModel| SensorModel { ground: false, ..s };
    let obj = |x, y, w, l, h, class| SceneObject {
        bbox: Box3D {
            x,
            y,
            z: h / 2.0,
            w,
            l,
            h,
            theta: 0.0,
        },
        class,
        velocity: (0.0, 0.0),
    };
    let scenario = Scenario {
        region: Region::reference(),
        nodes: alloc::vec![
            ScenarioNode {
                descriptor: infra,
                sensor: no_ground(SensorModel::infrastructure()),
            },
            ScenarioNode {
                descriptor: veh,
                sensor: no_ground(SensorModel::vehicle()),
            },
        ],
        objects: alloc::vec![
            obj(30.0, 20.0, 2.5, 8.0, 3.5, ObjectClass::Car),
            obj(30.0, 30.0, 1.8, 4.4, 1.6, ObjectClass::Car),
        ],
        frames: 1,
        frame_period: 0.1,
    };
    (scenario, 1)
}

//! Scenario files: the node deployment, moving objects and, optionally, a
//! list of recorded frames whose point clouds live in velodyne binaries.
//!
//! ```toml
//! seed = 7
//! frames = 10
//! frame_period = 0.1
//!
//! [[node]]
//! id = 0
//! role = "central"
//! kind = "infrastructure"
//! slap = [0.0, 0.0, 4.74, 0.0, 0.0, 0.0]   # x y z pitch yaw roll, degrees
//!
//! [[object]]
//! class = "car"
//! center = [20.0, 3.0, 0.8]
//! size = [1.8, 4.4, 1.6]                    # w l h
//! heading_deg = 0.0
//! velocity = [5.0, 0.0]
//!
//! [[frame]]                                 # recorded data, optional
//! index = 0
//! clouds = ["velodyne/node0/000000.bin"]    # one per node, node order
//! labels = "label/000000.txt"               # optional
//! ```
//!
//! Relative paths resolve against the scenario file's directory.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::Spanned;

use coopsim_core::eval::GroundTruthObject;
use coopsim_core::geometry::{to_global, PointCloud, Region, SlaP};
use coopsim_core::head::{Box3D, ObjectClass};
use coopsim_core::netsim::{NodeDescriptor, Role};
use coopsim_core::scenegen::{mp_count, Scenario, ScenarioNode, SceneObject, SensorModel};
use coopsim_core::Stream;

use crate::config::{positive, RawRegion, Source};
use crate::error::{AppError, Result};
use crate::io;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    seed: Option<u64>,
    frames: Option<Spanned<u32>>,
    frame_period: Option<Spanned<f64>>,
    region: Option<RawRegion>,
    node: Spanned<Vec<RawNode>>,
    #[serde(default)]
    object: Vec<RawObject>,
    #[serde(default)]
    frame: Vec<RawFrame>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: Spanned<u32>,
    role: Spanned<String>,
    kind: Spanned<String>,
    slap: Spanned<[f64; 6]>,
    ground: Option<bool>,
    range: Option<Spanned<f64>>,
    channels: Option<Spanned<u32>>,
    noise_stdev: Option<Spanned<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObject {
    class: Spanned<String>,
    center: Spanned<[f64; 3]>,
    size: Spanned<[f64; 3]>,
    #[serde(default)]
    heading_deg: f64,
    #[serde(default)]
    velocity: [f64; 2],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFrame {
    index: u32,
    clouds: Spanned<Vec<PathBuf>>,
    labels: Option<PathBuf>,
}

/// A frame whose clouds are read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedFrame {
    pub index: u32,
    /// One sensor-frame cloud per node, in node order.
    pub clouds: Vec<PathBuf>,
    pub labels: Option<PathBuf>,
}

/// One frame's inputs: every node's sensor-frame cloud and the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameData {
    pub index: u32,
    pub clouds: Vec<PointCloud>,
    pub truth: Vec<GroundTruthObject>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub scenario: Scenario,
    pub seed: u64,
    pub recorded: Vec<RecordedFrame>,
}

fn parse_role(s: &Spanned<String>, src: &Source) -> Result<Role> {
    match s.get_ref().as_str() {
        "central" => Ok(Role::Central),
        "slave" => Ok(Role::Slave),
        other => Err(src.error(
            s.span(),
            format!("unknown role {other:?}, expected \"central\" or \"slave\""),
        )),
    }
}

fn parse_kind(s: &Spanned<String>, src: &Source) -> Result<Stream> {
    match s.get_ref().as_str() {
        "vehicle" => Ok(Stream::Vehicle),
        "infrastructure" => Ok(Stream::Infrastructure),
        other => Err(src.error(
            s.span(),
            format!("unknown kind {other:?}, expected \"vehicle\" or \"infrastructure\""),
        )),
    }
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<ScenarioFile> {
        let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<ScenarioFile> {
        let src = Source { path, text };
        let raw: RawScenario = src.parse()?;
        let region = match &raw.region {
            Some(r) => r.build(&src)?,
            None => Region::reference(),
        };
        let mut nodes = Vec::new();
        let mut ids = BTreeSet::new();
        for n in raw.node.get_ref() {
            if !ids.insert(*n.id.get_ref()) {
                return Err(src.error(n.id.span(), format!("duplicate node id {}", n.id.get_ref())));
            }
            src.check(&n.slap, |s| {
                if s.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err("pose components must be finite".into())
                }
            })?;
            let [x, y, z, pitch, yaw, roll] = *n.slap.get_ref();
            let kind = parse_kind(&n.kind, &src)?;
            let desc = NodeDescriptor::new(
                *n.id.get_ref(),
                parse_role(&n.role, &src)?,
                kind,
                SlaP::from_degrees(x, y, z, pitch, yaw, roll),
            );
            let mut sensor = SensorModel::for_stream(kind);
            sensor.height = z;
            if let Some(g) = n.ground {
                sensor.ground = g;
            }
            if let Some(r) = &n.range {
                src.check(r, positive)?;
                sensor.range = *r.get_ref();
            }
            if let Some(c) = &n.channels {
                src.check(c, |c| {
                    if *c >= 2 {
                        Ok(())
                    } else {
                        Err("a sensor needs at least 2 channels".into())
                    }
                })?;
                sensor.channels = *c.get_ref();
            }
            if let Some(s) = &n.noise_stdev {
                src.check(s, |s| {
                    if *s >= 0.0 {
                        Ok(())
                    } else {
                        Err("noise_stdev must be non-negative".into())
                    }
                })?;
                sensor.noise_stdev = *s.get_ref();
            }
            nodes.push(ScenarioNode {
                descriptor: desc,
                sensor,
            });
        }
        let centrals = nodes.iter().filter(|n| n.descriptor.role == Role::Central).count();
        if nodes.is_empty() || centrals != 1 {
            return Err(src.error(
                raw.node.span(),
                format!(
                    "exactly one central node is required, found {centrals} among {} nodes",
                    nodes.len()
                ),
            ));
        }
        let mut objects = Vec::new();
        for o in &raw.object {
            let class = ObjectClass::parse(o.class.get_ref())
                .ok_or_else(|| src.error(o.class.span(), format!("unknown class {:?}", o.class.get_ref())))?;
            src.check(&o.size, |s| s.iter().try_for_each(positive))?;
            let [x, y, z] = *o.center.get_ref();
            let [w, l, h] = *o.size.get_ref();
            let bbox = Box3D::new(x, y, z, w, l, h, o.heading_deg.to_radians())
                .map_err(|e| src.error(o.center.span(), e.to_string()))?;
            objects.push(SceneObject {
                bbox,
                class,
                velocity: (o.velocity[0], o.velocity[1]),
            });
        }
        let frame_period = match &raw.frame_period {
            Some(p) => {
                src.check(p, positive)?;
                *p.get_ref()
            }
            None => 0.1,
        };
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };
        let mut recorded = Vec::new();
        for f in &raw.frame {
            if f.clouds.get_ref().len() != nodes.len() {
                return Err(src.error(
                    f.clouds.span(),
                    format!("{} clouds listed for {} nodes", f.clouds.get_ref().len(), nodes.len()),
                ));
            }
            recorded.push(RecordedFrame {
                index: f.index,
                clouds: f.clouds.get_ref().iter().map(resolve).collect(),
                labels: f.labels.as_ref().map(resolve),
            });
        }
        let frames = match &raw.frames {
            Some(f) => *f.get_ref(),
            None => recorded.len().max(1) as u32,
        };
        let scenario = Scenario {
            region,
            nodes,
            objects,
            frames,
            frame_period,
        };
        let anchor = raw.frames.as_ref().map_or(0..0, |f| f.span());
        scenario.validate().map_err(|e| src.error(anchor, e.to_string()))?;
        Ok(ScenarioFile {
            scenario,
            seed: raw.seed.unwrap_or(0),
            recorded,
        })
    }

    pub fn nodes(&self) -> Vec<NodeDescriptor> {
        self.scenario.descriptors()
    }

    /// Frame indices to process: the recorded ones, or `0..frames`.
    pub fn frame_indices(&self) -> Vec<u32> {
        if self.recorded.is_empty() {
            (0..self.scenario.frames).collect()
        } else {
            self.recorded.iter().map(|f| f.index).collect()
        }
    }

    /// Clouds and ground truth of frame `index`. Recorded frames are read
    /// from disk; other frames are sampled with `seed`.
    pub fn frame(&self, index: u32, seed: u64) -> Result<FrameData> {
        let Some(rec) = self.recorded.iter().find(|f| f.index == index) else {
            let clouds = self.scenario.sample_frame(index, seed)?;
            let truth = self.scenario.ground_truth(index, &clouds)?;
            return Ok(FrameData { index, clouds, truth });
        };
        let nodes = self.nodes();
        let clouds = rec
            .clouds
            .iter()
            .zip(&nodes)
            .map(|(p, n)| io::read_velodyne(p, n.id))
            .collect::<Result<Vec<_>>>()?;
        let truth = match &rec.labels {
            Some(p) => {
                let labels = io::read_labels(p)?;
                let global = nodes
                    .iter()
                    .zip(&clouds)
                    .map(|(n, c)| to_global(c, &n.pose))
                    .collect::<coopsim_core::Result<Vec<_>>>()?;
                labels
                    .into_iter()
                    .map(|l| GroundTruthObject {
                        bbox: l.bbox,
                        class: l.class,
                        mp: global.iter().map(|g| mp_count(&l.bbox, g)).sum(),
                    })
                    .collect()
            }
            None => self.scenario.ground_truth(index, &clouds)?,
        };
        Ok(FrameData { index, clouds, truth })
    }

    /// TOML text that [`ScenarioFile::parse`] reads back to the same value,
    /// with `recorded` paths written relative to `base` where possible.
    pub fn to_toml(&self, base: &Path) -> String {
        let s = &self.scenario;
        let mut out = String::new();
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "frames = {}", s.frames);
        let _ = writeln!(out, "frame_period = {:?}", s.frame_period);
        let r = &s.region;
        let _ = writeln!(out, "\n[region]");
        let _ = writeln!(
            out,
            "x = [{:?}, {:?}]\ny = [{:?}, {:?}]\nz = [{:?}, {:?}]",
            r.x_min, r.x_max, r.y_min, r.y_max, r.z_min, r.z_max
        );
        for n in &s.nodes {
            let d = &n.descriptor;
            let p = &d.pose;
            let role = match d.role {
                Role::Central => "central",
                Role::Slave => "slave",
            };
            let _ = writeln!(
                out,
                "\n[[node]]\nid = {}\nrole = \"{role}\"\nkind = \"{}\"",
                d.id.0,
                d.kind.as_str()
            );
            let _ = writeln!(
                out,
                "slap = [{:?}, {:?}, {:?}, {:?}, {:?}, {:?}]",
                p.x,
                p.y,
                p.z,
                p.pitch.to_degrees(),
                p.yaw.to_degrees(),
                p.roll.to_degrees()
            );
            let _ = writeln!(out, "ground = {}", n.sensor.ground);
            let _ = writeln!(
                out,
                "range = {:?}\nchannels = {}\nnoise_stdev = {:?}",
                n.sensor.range, n.sensor.channels, n.sensor.noise_stdev
            );
        }
        for o in &s.objects {
            let b = &o.bbox;
            let _ = writeln!(out, "\n[[object]]\nclass = \"{}\"", o.class.as_str());
            let _ = writeln!(
                out,
                "center = [{:?}, {:?}, {:?}]\nsize = [{:?}, {:?}, {:?}]",
                b.x, b.y, b.z, b.w, b.l, b.h
            );
            let _ = writeln!(
                out,
                "heading_deg = {:?}\nvelocity = [{:?}, {:?}]",
                b.theta.to_degrees(),
                o.velocity.0,
                o.velocity.1
            );
        }
        for f in &self.recorded {
            let clouds: Vec<String> = f.clouds.iter().map(|c| format!("{:?}", rel(c))).collect();
            let _ = writeln!(
                out,
                "\n[[frame]]\nindex = {}\nclouds = [{}]",
                f.index,
                clouds.join(", ")
            );
            if let Some(l) = &f.labels {
                let _ = writeln!(out, "labels = {:?}", rel(l));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_NODES: &str = r#"
seed = 5
frames = 2

[[node]]
id = 0
role = "central"
kind = "infrastructure"
slap = [0.0, 0.0, 4.74, 0.0, 0.0, 0.0]

[[node]]
id = 1
role = "slave"
kind = "vehicle"
slap = [20.0, 5.0, 1.74, 0.0, 90.0, 0.0]

[[object]]
class = "car"
center = [15.0, 0.0, 0.8]
size = [1.8, 4.4, 1.6]
velocity = [2.0, 0.0]
"#;

    fn parse(text: &str) -> Result<ScenarioFile> {
        ScenarioFile::parse(Path::new("/data/s.toml"), text)
    }

    #[test]
    fn parses_nodes_and_objects() {
        let s = parse(TWO_NODES).unwrap();
        assert_eq!(s.seed, 5);
        assert_eq!(s.scenario.nodes.len(), 2);
        assert!((s.scenario.nodes[1].descriptor.pose.yaw - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert_eq!(s.frame_indices(), vec![0, 1]);
        assert_eq!(s.scenario.objects[0].class, ObjectClass::Car);
    }

    #[test]
    fn toml_round_trip() {
        let mut s = parse(TWO_NODES).unwrap();
        s.recorded.push(RecordedFrame {
            index: 0,
            clouds: vec!["/data/a.bin".into(), "/data/b.bin".into()],
            labels: Some("/data/l.txt".into()),
        });
        let back = parse(&s.to_toml(Path::new("/data"))).unwrap();
        assert_eq!(back.recorded, s.recorded);
        assert_eq!(back.seed, s.seed);
        for (a, b) in back.scenario.nodes.iter().zip(&s.scenario.nodes) {
            assert_eq!(a.descriptor.id, b.descriptor.id);
            assert!((a.descriptor.pose.yaw - b.descriptor.pose.yaw).abs() < 1e-12);
        }
        assert_eq!(back.scenario.objects.len(), 1);
    }

    #[test]
    fn rejects_duplicate_ids_with_position() {
        let text = TWO_NODES.replace("id = 1", "id = 0");
        match parse(&text).unwrap_err() {
            AppError::Config { line, message, .. } => {
                assert_eq!(line, 12);
                assert!(message.contains("duplicate"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn rejects_two_centrals_and_bad_kind() {
        assert!(parse(&TWO_NODES.replace("\"slave\"", "\"central\"")).is_err());
        let e = parse(&TWO_NODES.replace("\"vehicle\"", "\"bus\"")).unwrap_err();
        assert_eq!(e.exit_code(), crate::error::EXIT_CONFIG);
    }

    #[test]
    fn rejects_cloud_count_mismatch() {
        let text = format!("{TWO_NODES}\n[[frame]]\nindex = 0\nclouds = [\"a.bin\"]\n");
        assert!(parse(&text).is_err());
    }

    #[test]
    fn synthetic_frames_are_seeded() {
        let s = parse(TWO_NODES).unwrap();
        let a = s.frame(1, 9).unwrap();
        assert_eq!(a, s.frame(1, 9).unwrap());
        assert_ne!(a.clouds, s.frame(1, 10).unwrap().clouds);
        assert_eq!(a.truth.len(), 1);
        assert!((a.truth[0].bbox.x - 15.2).abs() < 1e-12);
    }
}

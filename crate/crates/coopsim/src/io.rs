//! On-disk formats.
//!
//! * Point clouds: flat little-endian `f32` quadruplets `(x, y, z, i)`, the
//!   KITTI velodyne layout.
//! * Encoder weights: `9 x C` row-major weights, then `C` biases, all `f32` LE.
//! * Weight bundles: a named-tensor manifest, see [`write_bundle`].
//! * Labels: KITTI text lines. The location triple is the box centre, not
//!   KITTI's bottom centre, so boxes round-trip exactly.
//! * Calibration: one text file per node with its role, kind and pose.

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use coopsim_core::backbone::{LayerKernel, LayerKind, LayerParams};
use coopsim_core::eval::GroundTruthObject;
use coopsim_core::fusion::TsfParams;
use coopsim_core::geometry::{Frame, Point, PointCloud, SlaP};
use coopsim_core::head::{Box3D, Detection, HeadParams, ObjectClass};
use coopsim_core::netsim::{NodeDescriptor, Role};
use coopsim_core::nn::{AffineNorm, ConvKernel, DeconvKernel};
use coopsim_core::pillars::{EncoderParams, POINT_FEATURE_DIM};
use coopsim_core::pipeline::{ModelConfig, ModelWeights};
use coopsim_core::{NodeId, Stream};

use crate::error::{AppError, Result};

fn read_all(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| AppError::io(path, e))
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

fn f32s(bytes: &[u8]) -> impl Iterator<Item = f32> + '_ {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
}

// Point clouds

pub fn encode_velodyne(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for p in cloud.points() {
        for v in [p.x, p.y, p.z, p.i] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_velodyne(bytes: &[u8], node: NodeId) -> std::result::Result<PointCloud, String> {
    if bytes.len() % 16 != 0 {
        return Err(format!("{} bytes is not a whole number of 16-byte points", bytes.len()));
    }
    let vals: Vec<f32> = f32s(bytes).collect();
    let mut points = Vec::with_capacity(vals.len() / 4);
    for (k, q) in vals.chunks_exact(4).enumerate() {
        let p = Point::new(q[0] as f64, q[1] as f64, q[2] as f64, q[3] as f64);
        if !p.is_valid() {
            return Err(format!("point {k} is not finite or has intensity outside [0, 1]"));
        }
        points.push(p);
    }
    Ok(PointCloud::new(Frame::Sensor(node), points))
}

pub fn write_velodyne(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_all(path, &encode_velodyne(cloud))
}

/// Reads a sensor-frame cloud recorded by `node`.
pub fn read_velodyne(path: &Path, node: NodeId) -> Result<PointCloud> {
    decode_velodyne(&read_all(path)?, node).map_err(|m| AppError::data(path, m))
}

// Encoder weights

pub fn write_encoder(path: &Path, params: &EncoderParams) -> Result<()> {
    let mut out = Vec::new();
    for v in params.weight().iter().chain(params.bias()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    write_all(path, &out)
}

pub fn read_encoder(path: &Path, stream: Stream, channels: usize) -> Result<EncoderParams> {
    let bytes = read_all(path)?;
    let expect = (POINT_FEATURE_DIM + 1) * channels * 4;
    if bytes.len() != expect {
        return Err(AppError::data(
            path,
            format!("{} bytes, a {channels}-channel encoder needs {expect}", bytes.len()),
        ));
    }
    let vals: Vec<f32> = f32s(&bytes).collect();
    let (w, b) = vals.split_at(POINT_FEATURE_DIM * channels);
    EncoderParams::new(stream, channels, w.to_vec(), b.to_vec()).map_err(|e| AppError::data(path, e.to_string()))
}

// Weight bundles

const BUNDLE_MAGIC: &[u8; 4] = b"CSWB";
const BUNDLE_VERSION: u32 = 1;

/// One named tensor of a bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

fn entry(name: impl Into<String>, dims: &[usize], data: &[f32]) -> NamedTensor {
    NamedTensor {
        name: name.into(),
        dims: dims.iter().map(|&d| d as u32).collect(),
        data: data.to_vec(),
    }
}

/// Flattens weights into named tensors in a fixed order.
///
/// Names: `lfe.{vehicle,infrastructure}.{weight,bias}`, `tsf.conv.{weight,bias}`,
/// `tsf.norm.{scale,shift}`, `cfb.layer{i}.{weight,bias,scale,shift}` and
/// `head.{cls,reg,dir}.{weight,bias}`. Conv weights are `[cout, cin, k, k]`,
/// deconv weights `[cin, cout, k, k]`.
pub fn bundle_entries(w: &ModelWeights) -> Vec<NamedTensor> {
    let mut out = Vec::new();
    for (tag, e) in [("vehicle", &w.lfe_vehicle), ("infrastructure", &w.lfe_infrastructure)] {
        let c = e.channels();
        out.push(entry(format!("lfe.{tag}.weight"), &[POINT_FEATURE_DIM, c], e.weight()));
        out.push(entry(format!("lfe.{tag}.bias"), &[c], e.bias()));
    }
    let k = &w.tsf.conv;
    out.push(entry("tsf.conv.weight", &[k.cout, k.cin, k.k, k.k], &k.weight));
    out.push(entry("tsf.conv.bias", &[k.cout], &k.bias));
    out.push(entry("tsf.norm.scale", &[k.cout], &w.tsf.norm.scale));
    out.push(entry("tsf.norm.shift", &[k.cout], &w.tsf.norm.shift));
    for (i, l) in w.backbone.layers.iter().enumerate() {
        let (dims, weight, bias) = match &l.kernel {
            LayerKernel::Conv(k) => ([k.cout, k.cin, k.k, k.k], &k.weight, &k.bias),
            LayerKernel::Deconv(k) => ([k.cin, k.cout, k.k, k.k], &k.weight, &k.bias),
        };
        out.push(entry(format!("cfb.layer{i}.weight"), &dims, weight));
        out.push(entry(format!("cfb.layer{i}.bias"), &[bias.len()], bias));
        out.push(entry(format!("cfb.layer{i}.scale"), &[bias.len()], &l.norm.scale));
        out.push(entry(format!("cfb.layer{i}.shift"), &[bias.len()], &l.norm.shift));
    }
    for (tag, k) in [("cls", &w.head.cls), ("reg", &w.head.reg), ("dir", &w.head.dir)] {
        out.push(entry(
            format!("head.{tag}.weight"),
            &[k.cout, k.cin, k.k, k.k],
            &k.weight,
        ));
        out.push(entry(format!("head.{tag}.bias"), &[k.cout], &k.bias));
    }
    out
}

/// Layout: magic `CSWB`, `u32` version, `u32` entry count, then per entry a
/// `u16` name length, the UTF-8 name, a `u8` rank, `rank` `u32` dims and the
/// `f32` payload. All integers and floats little-endian.
pub fn encode_bundle(entries: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BUNDLE_MAGIC);
    out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.dims.len() as u8);
        for d in &e.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_bundle(bytes: &[u8]) -> std::result::Result<Vec<NamedTensor>, String> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != BUNDLE_MAGIC {
        return Err("not a weight bundle (bad magic)".into());
    }
    let version = c.u32()?;
    if version != BUNDLE_VERSION {
        return Err(format!("unsupported bundle version {version}"));
    }
    let count = c.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = c.take(2)?;
        let len = u16::from_le_bytes([len[0], len[1]]) as usize;
        let name = std::str::from_utf8(c.take(len)?).map_err(|_| "entry name is not UTF-8".to_string())?;
        let rank = c.take(1)?[0] as usize;
        let dims = (0..rank).map(|_| c.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d as usize));
        let n = n.ok_or_else(|| format!("{name}: dimensions overflow"))?;
        let payload = c.take(n.checked_mul(4).ok_or_else(|| format!("{name}: too large"))?)?;
        out.push(NamedTensor {
            name: name.to_string(),
            dims,
            data: f32s(payload).collect(),
        });
    }
    if c.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - c.pos));
    }
    Ok(out)
}

pub fn write_bundle(path: &Path, weights: &ModelWeights) -> Result<()> {
    write_all(path, &encode_bundle(&bundle_entries(weights)))
}

/// Loads a bundle and checks every tensor against the shapes `cfg` implies.
pub fn read_bundle(path: &Path, cfg: &ModelConfig) -> Result<ModelWeights> {
    let entries = decode_bundle(&read_all(path)?).map_err(|m| AppError::data(path, m))?;
    weights_from_entries(&entries, cfg).map_err(|m| AppError::data(path, m))
}

pub fn weights_from_entries(entries: &[NamedTensor], cfg: &ModelConfig) -> std::result::Result<ModelWeights, String> {
    // Start from zero weights of the right shapes, then overwrite each tensor
    // in place; shape checks come from comparing against the template.
    let mut w = ModelWeights::zeros(cfg);
    let template = bundle_entries(&w);
    if entries.len() != template.len() {
        return Err(format!(
            "{} tensors, configuration needs {}",
            entries.len(),
            template.len()
        ));
    }
    for (got, want) in entries.iter().zip(&template) {
        if got.name != want.name {
            return Err(format!("expected tensor {}, found {}", want.name, got.name));
        }
        if got.dims != want.dims {
            return Err(format!("{}: dims {:?}, expected {:?}", got.name, got.dims, want.dims));
        }
        if let Some(i) = got.data.iter().position(|v| !v.is_finite()) {
            return Err(format!("{}: value {i} is not finite", got.name));
        }
    }
    let mut it = entries.iter().map(|e| e.data.clone());
    let mut next = || it.next().expect("entry count checked above");
    let c = cfg.pillars.channels;
    let lfe = |s: Stream, w: Vec<f32>, b: Vec<f32>| EncoderParams::new(s, c, w, b).map_err(|e| e.to_string());
    w.lfe_vehicle = lfe(Stream::Vehicle, next(), next())?;
    w.lfe_infrastructure = lfe(Stream::Infrastructure, next(), next())?;
    let conv = ConvKernel::new(c, 2 * c, TsfParams::KERNEL, next(), next()).map_err(|e| e.to_string())?;
    w.tsf = TsfParams {
        conv,
        norm: AffineNorm {
            scale: next(),
            shift: next(),
        },
    };
    for (spec, layer) in cfg.backbone.layers().zip(w.backbone.layers.iter_mut()) {
        let (weight, bias) = (next(), next());
        let kernel = match spec.kind {
            LayerKind::Conv => ConvKernel::new(spec.cout, spec.cin, spec.k, weight, bias).map(LayerKernel::Conv),
            LayerKind::Deconv => DeconvKernel::new(spec.cin, spec.cout, spec.k, weight, bias).map(LayerKernel::Deconv),
        }
        .map_err(|e| e.to_string())?;
        *layer = LayerParams {
            kernel,
            norm: AffineNorm {
                scale: next(),
                shift: next(),
            },
        };
    }
    let cin = cfg.backbone.output_channels();
    let a = cfg.anchors.anchors_per_cell();
    let mut head_conv = |cout: usize| ConvKernel::new(cout, cin, 1, next(), next()).map_err(|e| e.to_string());
    w.head = HeadParams {
        cls: head_conv(a * ObjectClass::CLS_COLUMNS)?,
        reg: head_conv(a * 7)?,
        dir: head_conv(a * 2)?,
    };
    w.validate(cfg).map_err(|e| e.to_string())?;
    Ok(w)
}

// Labels

/// One parsed label line.
#[derive(Debug, Clone, PartialEq)]
pub struct Label {
    pub class: ObjectClass,
    pub bbox: Box3D,
    /// Present on detection lines (16 fields), absent on ground truth (15).
    pub score: Option<f64>,
}

/// `type truncated occluded alpha x1 y1 x2 y2 h w l x y z rotation_y [score]`.
/// No camera is modelled, so the truncation, occlusion, alpha and 2D box
/// fields are written as `0 0 -10 0 0 0 0`.
pub fn label_line(class: ObjectClass, b: &Box3D, score: Option<f64>) -> String {
    let name = match class {
        ObjectClass::Car => "Car",
        ObjectClass::Pedestrian => "Pedestrian",
    };
    let mut s = format!(
        "{name} 0.00 0 -10.00 0.00 0.00 0.00 0.00 {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
        b.h, b.w, b.l, b.x, b.y, b.z, b.theta
    );
    if let Some(sc) = score {
        s.push_str(&format!(" {sc:?}"));
    }
    s
}

pub fn parse_label_line(line: &str) -> std::result::Result<Option<Label>, String> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.is_empty() {
        return Ok(None);
    }
    if f.len() != 15 && f.len() != 16 {
        return Err(format!("{} fields, expected 15 or 16", f.len()));
    }
    let class = match f[0].to_ascii_lowercase().as_str() {
        "car" => ObjectClass::Car,
        "pedestrian" => ObjectClass::Pedestrian,
        "dontcare" => return Ok(None),
        other => return Err(format!("unknown class {other:?}")),
    };
    let num = |i: usize| {
        f[i].parse::<f64>()
            .map_err(|_| format!("field {} ({:?}) is not a number", i + 1, f[i]))
    };
    let (h, w, l) = (num(8)?, num(9)?, num(10)?);
    let (x, y, z) = (num(11)?, num(12)?, num(13)?);
    let bbox = Box3D::new(x, y, z, w, l, h, num(14)?).map_err(|e| e.to_string())?;
    let score = if f.len() == 16 { Some(num(15)?) } else { None };
    Ok(Some(Label { class, bbox, score }))
}

pub fn write_labels(path: &Path, labels: &[(ObjectClass, Box3D, Option<f64>)]) -> Result<()> {
    let mut text = String::new();
    for (c, b, s) in labels {
        text.push_str(&label_line(*c, b, *s));
        text.push('\n');
    }
    write_all(path, text.as_bytes())
}

pub fn write_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    let rows: Vec<_> = dets.iter().map(|d| (d.class, d.bbox, Some(d.score))).collect();
    write_labels(path, &rows)
}

pub fn read_labels(path: &Path) -> Result<Vec<Label>> {
    let file = fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| AppError::io(path, e))?;
        match parse_label_line(&line) {
            Ok(Some(l)) => out.push(l),
            Ok(None) => {}
            Err(m) => return Err(AppError::data(path, format!("line {}: {m}", i + 1))),
        }
    }
    Ok(out)
}

// Calibration

/// Text form: `node`, `role`, `kind` and `slap` lines (`key: value`). The
/// pose is `x y z pitch yaw roll` with angles in radians, written with
/// round-trip precision.
pub fn calib_text(node: &NodeDescriptor) -> String {
    let p = &node.pose;
    let role = match node.role {
        Role::Central => "central",
        Role::Slave => "slave",
    };
    format!(
        "node: {}\nrole: {role}\nkind: {}\nslap: {:?} {:?} {:?} {:?} {:?} {:?}\n",
        node.id.0,
        node.kind.as_str(),
        p.x,
        p.y,
        p.z,
        p.pitch,
        p.yaw,
        p.roll
    )
}

pub fn parse_calib(text: &str) -> std::result::Result<NodeDescriptor, String> {
    let (mut id, mut role, mut kind, mut slap) = (None, None, None, None);
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once(':')
            .ok_or_else(|| format!("line {}: expected `key: value`", i + 1))?;
        let v = v.trim();
        let bad = |what: &str| format!("line {}: bad {what} {v:?}", i + 1);
        match k.trim() {
            "node" => id = Some(v.parse::<u32>().map_err(|_| bad("node id"))?),
            "role" => {
                role = Some(match v {
                    "central" => Role::Central,
                    "slave" => Role::Slave,
                    _ => return Err(bad("role")),
                })
            }
            "kind" => {
                kind = Some(match v {
                    "vehicle" => Stream::Vehicle,
                    "infrastructure" => Stream::Infrastructure,
                    _ => return Err(bad("kind")),
                })
            }
            "slap" => {
                let n: Vec<f64> = v
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("pose"))?;
                if n.len() != 6 {
                    return Err(bad("pose"));
                }
                slap = Some(SlaP::new(n[0], n[1], n[2], n[3], n[4], n[5]));
            }
            other => return Err(format!("line {}: unknown key {other:?}", i + 1)),
        }
    }
    let missing = |k: &str| format!("missing `{k}`");
    Ok(NodeDescriptor::new(
        id.ok_or_else(|| missing("node"))?,
        role.ok_or_else(|| missing("role"))?,
        kind.ok_or_else(|| missing("kind"))?,
        slap.ok_or_else(|| missing("slap"))?,
    ))
}

pub fn read_calib(path: &Path) -> Result<NodeDescriptor> {
    let mut s = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| AppError::io(path, e))?;
    parse_calib(&s).map_err(|m| AppError::data(path, m))
}

// Dataset directories

/// Paths of one exported dataset: `velodyne/node{id}/{frame:06}.bin`,
/// `label/{frame:06}.txt` and `calib/node{id}.txt` under `root`.
#[derive(Debug, Clone)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DatasetLayout { root: root.into() }
    }

    pub fn velodyne(&self, node: NodeId, frame: u32) -> PathBuf {
        self.root
            .join("velodyne")
            .join(format!("node{}", node.0))
            .join(format!("{frame:06}.bin"))
    }

    pub fn label(&self, frame: u32) -> PathBuf {
        self.root.join("label").join(format!("{frame:06}.txt"))
    }

    pub fn detections(&self, frame: u32) -> PathBuf {
        self.root.join("detections").join(format!("{frame:06}.txt"))
    }

    pub fn calib(&self, node: NodeId) -> PathBuf {
        self.root.join("calib").join(format!("node{}.txt", node.0))
    }

    /// Node descriptors of every calibration file, ordered by node id.
    pub fn nodes(&self) -> Result<Vec<NodeDescriptor>> {
        let dir = self.root.join("calib");
        let mut out = Vec::new();
        for e in fs::read_dir(&dir).map_err(|e| AppError::io(&dir, e))? {
            let p = e.map_err(|e| AppError::io(&dir, e))?.path();
            if p.extension().is_some_and(|x| x == "txt") {
                out.push(read_calib(&p)?);
            }
        }
        out.sort_by_key(|n| n.id);
        Ok(out)
    }

    /// Frame indices that have a label file, ascending.
    pub fn frames(&self) -> Result<Vec<u32>> {
        let dir = self.root.join("label");
        let mut out = Vec::new();
        for e in fs::read_dir(&dir).map_err(|e| AppError::io(&dir, e))? {
            let p = e.map_err(|e| AppError::io(&dir, e))?.path();
            if let Some(n) = p.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok()) {
                out.push(n);
            }
        }
        out.sort_unstable();
        Ok(out)
    }
}

/// Writes one frame: every node's sensor-frame cloud, the ground-truth labels
/// and (idempotently) the calibration files.
pub fn export_kitti(
    layout: &DatasetLayout,
    frame: u32,
    nodes: &[NodeDescriptor],
    clouds: &[PointCloud],
    truth: &[GroundTruthObject],
) -> Result<()> {
    for (n, c) in nodes.iter().zip(clouds) {
        write_velodyne(&layout.velodyne(n.id, frame), c)?;
        write_all(&layout.calib(n.id), calib_text(n).as_bytes())?;
    }
    let rows: Vec<_> = truth.iter().map(|g| (g.class, g.bbox, None)).collect();
    write_labels(&layout.label(frame), &rows)
}

/// Creates `path` (and its parent directories) for buffered writing.
pub fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    Ok(std::io::BufWriter::new(
        fs::File::create(path).map_err(|e| AppError::io(path, e))?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn velodyne_round_trip_and_rejects_ragged() {
        let c = PointCloud::new(
            Frame::Sensor(NodeId(2)),
            vec![Point::new(1.5, -2.25, 0.125, 0.5), Point::new(0.0, 0.0, 0.0, 1.0)],
        );
        let bytes = encode_velodyne(&c);
        assert_eq!(bytes.len(), 32);
        assert_eq!(decode_velodyne(&bytes, NodeId(2)).unwrap(), c);
        assert!(decode_velodyne(&bytes[..30], NodeId(2)).is_err());
        assert!(decode_velodyne(&[], NodeId(0)).unwrap().is_empty());
    }

    #[test]
    fn velodyne_rejects_bad_intensity() {
        let c = PointCloud::new(Frame::Sensor(NodeId(0)), vec![Point::new(1.0, 1.0, 1.0, 2.0)]);
        assert!(decode_velodyne(&encode_velodyne(&c), NodeId(0)).is_err());
    }

    #[test]
    fn label_line_has_fifteen_fields_and_round_trips() {
        let b = Box3D::new(3.25, -1.5, 0.8, 1.8, 4.4, 1.6, 0.3).unwrap();
        let gt = label_line(ObjectClass::Car, &b, None);
        assert_eq!(gt.split_whitespace().count(), 15);
        let l = parse_label_line(&gt).unwrap().unwrap();
        assert_eq!((l.class, l.bbox, l.score), (ObjectClass::Car, b, None));
        let det = label_line(ObjectClass::Pedestrian, &b, Some(0.75));
        assert_eq!(det.split_whitespace().count(), 16);
        assert_eq!(parse_label_line(&det).unwrap().unwrap().score, Some(0.75));
    }

    #[test]
    fn label_parse_errors() {
        assert!(parse_label_line("Car 1 2 3").is_err());
        assert!(parse_label_line("Truck 0 0 0 0 0 0 0 1 1 1 0 0 0 0").is_err());
        assert!(parse_label_line("Car 0 0 0 0 0 0 0 x 1 1 0 0 0 0").is_err());
        assert!(parse_label_line("Car 0 0 0 0 0 0 0 -1 1 1 0 0 0 0").is_err());
        assert_eq!(parse_label_line("   ").unwrap(), None);
        assert_eq!(parse_label_line("DontCare 0 0 0 0 0 0 0 1 1 1 0 0 0 0").unwrap(), None);
    }

    #[test]
    fn calib_round_trip() {
        let n = NodeDescriptor::new(
            3,
            Role::Slave,
            Stream::Vehicle,
            SlaP::new(1.0, 2.0, 1.74, 0.01, -2.5, 0.1),
        );
        assert_eq!(parse_calib(&calib_text(&n)).unwrap(), n);
        assert!(parse_calib("node: 1\nrole: boss\n").is_err());
        assert!(parse_calib("node: 1\n").is_err());
    }

    #[test]
    fn encoder_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("veh.bin");
        let e = EncoderParams::seeded(Stream::Vehicle, 8, 3);
        write_encoder(&p, &e).unwrap();
        assert_eq!(read_encoder(&p, Stream::Vehicle, 8).unwrap(), e);
        assert!(read_encoder(&p, Stream::Vehicle, 16).is_err());
    }

    #[test]
    fn bundle_round_trip_and_validation() {
        let cfg = ModelConfig::reduced();
        let w = ModelWeights::seeded(&cfg, 11);
        let bytes = encode_bundle(&bundle_entries(&w));
        let back = weights_from_entries(&decode_bundle(&bytes).unwrap(), &cfg).unwrap();
        assert_eq!(back, w);
        assert!(decode_bundle(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bundle_entries(&w);
        bad[4].dims[0] += 1;
        assert!(weights_from_entries(&bad, &cfg)
            .unwrap_err()
            .contains("tsf.conv.weight"));
        let mut swapped = bundle_entries(&w);
        swapped.swap(0, 1);
        assert!(weights_from_entries(&swapped, &cfg).is_err());
    }

    #[test]
    fn bundle_names_follow_layer_order() {
        let cfg = ModelConfig::reduced();
        let names: Vec<String> = bundle_entries(&ModelWeights::zeros(&cfg))
            .into_iter()
            .map(|e| e.name)
            .collect();
        assert_eq!(names[0], "lfe.vehicle.weight");
        assert!(names.contains(&"cfb.layer17.shift".to_string()));
        assert_eq!(names.last().unwrap(), "head.dir.bias");
        assert_eq!(names.len(), 4 + 4 + 18 * 4 + 6);
    }
}

//! Runtime invariant suite behind `coopsim selftest`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use coopsim_core::costmodel::{
    bandwidth_table, c_dense, c_early_late, c_vinet, fit_gpu_poly, GPU_MEASURED, GPU_MEASURED_N,
};
use coopsim_core::eval::{bev_iou, iou_3d};
use coopsim_core::geometry::{build_transform, geofence, Frame, Point, PointCloud, SlaP};
use coopsim_core::head::{decode_deltas, direction_target, encode_deltas, Box3D};
use coopsim_core::netsim::{FeaturePayload, NodeDescriptor, Role};
use coopsim_core::pipeline::{Model, ModelConfig, ModelWeights};
use coopsim_core::Stream;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub samples: usize,
    /// First failing sample, if any.
    pub failure: Option<String>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

type Check = fn(&mut ChaCha8Rng, &Model) -> Result<(), String>;

fn pose(rng: &mut ChaCha8Rng) -> SlaP {
    let a = std::f64::consts::PI;
    SlaP::new(
        rng.random_range(-100.0..100.0),
        rng.random_range(-100.0..100.0),
        rng.random_range(0.0..6.0),
        rng.random_range(-a / 2.0..a / 2.0),
        rng.random_range(-a..a),
        rng.random_range(-a / 2.0..a / 2.0),
    )
}

fn point(rng: &mut ChaCha8Rng, r: f64) -> Point {
    Point::new(
        rng.random_range(-r..r),
        rng.random_range(-r..r),
        rng.random_range(-2.0..2.0),
        rng.random_range(0.0..=1.0),
    )
}

fn bbox(rng: &mut ChaCha8Rng) -> Box3D {
    Box3D::new(
        rng.random_range(-50.0..50.0),
        rng.random_range(-50.0..50.0),
        rng.random_range(-1.0..2.0),
        rng.random_range(0.3..3.0),
        rng.random_range(0.3..8.0),
        rng.random_range(0.5..3.0),
        rng.random_range(-3.0..3.0),
    )
    .expect("sampled dimensions are positive")
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn transform_round_trip(rng: &mut ChaCha8Rng, _: &Model) -> Result<(), String> {
    let pose = pose(rng);
    let p = point(rng, 80.0);
    let tf = build_transform(&pose).map_err(|e| e.to_string())?;
    let back = tf.inverse().apply(&tf.apply(&p));
    let err = (back.x - p.x).abs().max((back.y - p.y).abs()).max((back.z - p.z).abs());
    ensure(err <= 1e-9, || format!("pose {pose:?}: round-trip error {err:e}"))
}

fn geofence_idempotent(rng: &mut ChaCha8Rng, m: &Model) -> Result<(), String> {
    let n = rng.random_range(0..200);
    let pts = (0..n).map(|_| point(rng, 150.0)).collect();
    let cloud = PointCloud::new(Frame::Global, pts);
    let once = geofence(&cloud, &m.config.region).map_err(|e| e.to_string())?;
    let twice = geofence(&once, &m.config.region).map_err(|e| e.to_string())?;
    ensure(
        once == twice && once.points().iter().all(|p| m.config.region.contains(p)),
        || format!("{n}-point cloud: fence not idempotent"),
    )
}

fn node(id: u32, kind: Stream) -> NodeDescriptor {
    NodeDescriptor::new(
        id,
        if id == 0 { Role::Central } else { Role::Slave },
        kind,
        SlaP::new(10.0, 0.0, 1.74, 0.0, 0.0, 0.0),
    )
}

fn pillar_point_order(rng: &mut ChaCha8Rng, m: &Model) -> Result<(), String> {
    // At most one pillar's worth of points, so the per-pillar cap never
    // makes the retained set depend on order.
    let n = rng.random_range(1..=m.config.pillars.max_points_per_pillar);
    let mut pts: Vec<Point> = (0..n).map(|_| point(rng, 20.0)).collect();
    let nd = node(0, Stream::Vehicle);
    let a = m
        .encode_node(&nd, &PointCloud::new(Frame::Sensor(nd.id), pts.clone()))
        .map_err(|e| e.to_string())?;
    pts.shuffle(rng);
    let b = m
        .encode_node(&nd, &PointCloud::new(Frame::Sensor(nd.id), pts))
        .map_err(|e| e.to_string())?;
    ensure(a == b, || format!("{n} points: features differ after shuffling"))
}

fn fusion_node_permutation(rng: &mut ChaCha8Rng, m: &Model) -> Result<(), String> {
    let k = rng.random_range(1..=4u32);
    let mut feats = Vec::new();
    for id in 0..k {
        let kind = if id % 2 == 0 {
            Stream::Infrastructure
        } else {
            Stream::Vehicle
        };
        let nd = node(id, kind);
        let pts = (0..rng.random_range(0..64)).map(|_| point(rng, 40.0)).collect();
        feats.push(
            m.encode_node(&nd, &PointCloud::new(Frame::Sensor(nd.id), pts))
                .map_err(|e| e.to_string())?,
        );
    }
    let a = m.fuse(&feats).map_err(|e| e.to_string())?;
    feats.shuffle(rng);
    let b = m.fuse(&feats).map_err(|e| e.to_string())?;
    ensure(a == b, || format!("{k} nodes: fused features depend on arrival order"))
}

fn box_coding_round_trip(rng: &mut ChaCha8Rng, _: &Model) -> Result<(), String> {
    let (gt, anchor) = (bbox(rng), bbox(rng));
    let back = decode_deltas(
        &encode_deltas(&gt, &anchor),
        &anchor,
        direction_target(&gt, &anchor) == 1,
    );
    let err = back.as_array()[..6]
        .iter()
        .zip(&gt.as_array()[..6])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let dth = (back.theta - gt.theta).sin().abs() + (1.0 - (back.theta - gt.theta).cos());
    ensure(err <= 1e-6 && dth <= 1e-6, || {
        format!("{gt:?} via {anchor:?}: error {err:e}, heading {dth:e}")
    })
}

fn iou_symmetry(rng: &mut ChaCha8Rng, _: &Model) -> Result<(), String> {
    let a = bbox(rng);
    let mut b = bbox(rng);
    b.x = a.x + rng.random_range(-2.0..2.0);
    b.y = a.y + rng.random_range(-2.0..2.0);
    let sym = (bev_iou(&a, &b) - bev_iou(&b, &a))
        .abs()
        .max((iou_3d(&a, &b) - iou_3d(&b, &a)).abs());
    let v = bev_iou(&a, &b);
    ensure(
        sym <= 1e-12 && (0.0..=1.0).contains(&v) && (bev_iou(&a, &a) - 1.0).abs() <= 1e-12,
        || format!("{a:?} / {b:?}: asymmetry {sym:e}, iou {v}"),
    )
}

fn payload_round_trip(rng: &mut ChaCha8Rng, m: &Model) -> Result<(), String> {
    let nd = node(rng.random_range(0..8), Stream::Vehicle);
    let pts = (0..rng.random_range(0..128)).map(|_| point(rng, 60.0)).collect();
    let pf = m
        .encode_node(&nd, &PointCloud::new(Frame::Sensor(nd.id), pts))
        .map_err(|e| e.to_string())?;
    let bytes = FeaturePayload::encode(&pf).map_err(|e| e.to_string())?;
    let back = FeaturePayload::decode(&bytes, pf.channels, pf.node, pf.stream).map_err(|e| e.to_string())?;
    ensure(
        back == pf && bytes.len() as u64 == FeaturePayload::size(pf.len(), pf.channels),
        || format!("{} pillars: payload round trip failed", pf.len()),
    )
}

fn gpu_cost_ordering(rng: &mut ChaCha8Rng, _: &Model) -> Result<(), String> {
    let (s, v, d) = GPU_MEASURED;
    let fit = fit_gpu_poly(s, v, d, GPU_MEASURED_N).map_err(|e| e.to_string())?;
    let n = rng.random_range(2..=256);
    let (vi, de, el) = (c_vinet(&fit, n), c_dense(&fit, n), c_early_late(&fit, n));
    ensure(vi < de && de < el, || {
        format!("N = {n}: {vi} / {de} / {el} not strictly ordered")
    })
}

fn bandwidth_linearity(rng: &mut ChaCha8Rng, _: &Model) -> Result<(), String> {
    let n = rng.random_range(2..=200);
    let one = bandwidth_table(n, false);
    let two = bandwidth_table(2 * n, false);
    // Egocentric rows scale with N - 1.
    let ratio = (2 * n - 1) as f64 / (n - 1) as f64;
    for (a, b) in one[1].values.iter().zip(&two[1].values) {
        if (b - a * ratio).abs() > 1e-9 * b.abs().max(1.0) {
            return Err(format!("N = {n}: egocentric {a} vs {b} at 2N"));
        }
    }
    Ok(())
}

fn forward_determinism(rng: &mut ChaCha8Rng, m: &Model) -> Result<(), String> {
    let nd = node(0, Stream::Infrastructure);
    let pts: Vec<Point> = (0..rng.random_range(1..256)).map(|_| point(rng, 60.0)).collect();
    let input = [(nd, PointCloud::new(Frame::Sensor(nd.id), pts))];
    let a = m.forward(&input).map_err(|e| e.to_string())?;
    let b = m.forward(&input).map_err(|e| e.to_string())?;
    ensure(a == b && a.head.cls.is_finite(), || {
        "two passes over one input differ".into()
    })
}

/// Every check with its per-run sample budget multiplier (forward passes
/// are costlier, so they run a tenth as many samples).
const CHECKS: [(&str, Check, usize); 10] = [
    ("transform_round_trip", transform_round_trip, 10),
    ("geofence_idempotent", geofence_idempotent, 10),
    ("pillar_point_order_invariance", pillar_point_order, 10),
    ("fusion_node_permutation_invariance", fusion_node_permutation, 10),
    ("box_coding_round_trip", box_coding_round_trip, 10),
    ("iou_symmetry", iou_symmetry, 10),
    ("feature_payload_round_trip", payload_round_trip, 10),
    ("gpu_cost_ordering", gpu_cost_ordering, 10),
    ("bandwidth_linearity", bandwidth_linearity, 10),
    ("forward_determinism", forward_determinism, 1),
];

/// Runs every check `samples` times (forward passes `samples / 10` times,
/// at least once) on the reduced model, seeded from `seed`.
pub fn run(seed: u64, samples: usize) -> Vec<CheckResult> {
    let cfg = ModelConfig::reduced();
    let model = Model::new(cfg.clone(), ModelWeights::seeded(&cfg, seed)).expect("reduced model is consistent");
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, &(name, check, weight))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((i as u64 + 1) << 32));
            let n = (samples * weight / 10).max(1);
            let failure = (0..n).find_map(|k| check(&mut rng, &model).err().map(|e| format!("sample {k}: {e}")));
            CheckResult {
                name,
                samples: n,
                failure,
            }
        })
        .collect()
}

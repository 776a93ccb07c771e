use coopsim_core::costmodel::{self, CpCondition, FeatureKind};
use coopsim_core::eval::{self, bev_iou, iou_3d, EvalConfig, FrameEval, GroundTruthObject};
use coopsim_core::fusion::{fuse_nodes, scatter, stream_fuse, NodeFeatureMap, TsfParams};
use coopsim_core::geometry::{build_transform, geofence, to_global, Frame, Point, PointCloud, Region, SlaP};
use coopsim_core::head::{
    decode_deltas, detect, direction_loss, direction_target, encode_deltas, focal_cls_loss, focal_logit_loss,
    smooth_l1, total_loss, AnchorConfig, AnchorGrid, Box3D, DetectConfig, Detection, HeadOutput, LossWeights,
    ObjectClass,
};
use coopsim_core::nn::{conv2d, ConvKernel, Tensor3};
use coopsim_core::pillars::{encode_points, lfe_encode, voxelize, EncoderParams, PillarConfig, PillarFeatures};
use coopsim_core::{NodeId, Stream};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn cfg() -> ProptestConfig {
    ProptestConfig::with_cases(256)
}

fn angle() -> impl Strategy<Value = f64> {
    -PI..PI
}

fn pose() -> impl Strategy<Value = SlaP> {
    (-200.0..200.0, -200.0..200.0, -5.0..10.0, angle(), angle(), angle())
        .prop_map(|(x, y, z, p, yw, r)| SlaP::new(x, y, z, p, yw, r))
}

fn point() -> impl Strategy<Value = Point> {
    (-150.0..150.0, -150.0..150.0, -10.0..10.0, 0.0..=1.0).prop_map(|(x, y, z, i)| Point::new(x, y, z, i))
}

fn bbox() -> impl Strategy<Value = Box3D> {
    (
        -20.0..20.0,
        -20.0..20.0,
        -1.0..2.0,
        0.3..5.0,
        0.3..8.0,
        0.3..4.0,
        angle(),
    )
        .prop_map(|(x, y, z, w, l, h, t)| Box3D::new(x, y, z, w, l, h, t).unwrap())
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn central_diff(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = 1e-5;
    (f(x + h) - f(x - h)) / (2.0 * h)
}

// Geometry

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn transform_round_trip(pose in pose(), p in point()) {
        let tf = build_transform(&pose).unwrap();
        let back = tf.inverse().apply(&tf.apply(&p));
        prop_assert!((back.x - p.x).abs() <= 1e-9);
        prop_assert!((back.y - p.y).abs() <= 1e-9);
        prop_assert!((back.z - p.z).abs() <= 1e-9);
        prop_assert_eq!(back.i, p.i);
    }

    #[test]
    fn to_global_is_rigid(pose in pose(), a in point(), b in point()) {
        let cloud = PointCloud::new(Frame::Sensor(NodeId(0)), vec![a, b]);
        let g = to_global(&cloud, &pose).unwrap();
        let d0 = a.distance(&b);
        let d1 = g.points()[0].distance(&g.points()[1]);
        prop_assert!((d0 - d1).abs() <= 1e-9);
    }

    #[test]
    fn geofence_idempotent_subset_monotone(pts in prop::collection::vec(point(), 0..200), shrink in 0.0..20.0) {
        let region = Region::new((-53.76, 181.76), (-48.6, 41.0), (-1.0, 3.0)).unwrap();
        let cloud = PointCloud::new(Frame::Global, pts.clone());
        let once = geofence(&cloud, &region).unwrap();
        prop_assert_eq!(&geofence(&once, &region).unwrap(), &once);
        let mut it = pts.iter();
        for p in once.points() {
            prop_assert!(it.any(|q| q == p), "output is an ordered sub-list of the input");
        }
        let smaller = Region::new(
            (region.x_min + shrink, region.x_max - shrink),
            (region.y_min + shrink, region.y_max - shrink),
            (region.z_min, region.z_max),
        ).unwrap();
        prop_assert!(geofence(&cloud, &smaller).unwrap().len() <= once.len());
    }
}

// Pillars

fn small_pillar_cfg() -> PillarConfig {
    PillarConfig {
        voxel_dx: 0.5,
        voxel_dy: 0.5,
        voxel_dz: 4.0,
        max_pillars: 64,
        max_points_per_pillar: 32,
        grid_w: 8,
        grid_h: 8,
        channels: 16,
    }
}

fn small_region() -> Region {
    Region::new((0.0, 4.0), (0.0, 4.0), (-1.0, 3.0)).unwrap()
}

fn local_point() -> impl Strategy<Value = Point> {
    (0.0..4.0, 0.0..4.0, -1.0..3.0, 0.0..=1.0).prop_map(|(x, y, z, i)| Point::new(x, y, z, i))
}

fn encode_cloud(points: Vec<Point>, params: &EncoderParams) -> PillarFeatures {
    let cloud = PointCloud::new(Frame::Global, points);
    let vox = voxelize(&cloud, &small_pillar_cfg(), &small_region()).unwrap();
    lfe_encode(&vox.pillars, params, &small_pillar_cfg(), &small_region(), NodeId(0)).unwrap()
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn pillar_point_order_invariance(
        (pts, shuffled) in prop::collection::vec(local_point(), 1..32)
            .prop_flat_map(|v| (Just(v.clone()), Just(v).prop_shuffle())),
        seed in any::<u64>(),
    ) {
        let params = EncoderParams::seeded(Stream::Vehicle, 16, seed);
        prop_assert_eq!(encode_cloud(pts, &params), encode_cloud(shuffled, &params));
    }

    #[test]
    fn single_pillar_order_invariance(
        (pts, shuffled) in prop::collection::vec((1.0..1.5, 2.0..2.5, -1.0..3.0, 0.0..=1.0), 1..32)
            .prop_map(|v| v.into_iter().map(|(x, y, z, i)| Point::new(x, y, z, i)).collect::<Vec<_>>())
            .prop_flat_map(|v| (Just(v.clone()), Just(v).prop_shuffle())),
        seed in any::<u64>(),
    ) {
        let params = EncoderParams::seeded(Stream::Infrastructure, 16, seed);
        let a = encode_cloud(pts, &params);
        prop_assert_eq!(a.len(), 1);
        prop_assert_eq!(a, encode_cloud(shuffled, &params));
    }

    #[test]
    fn pooling_never_decreases_when_a_point_is_added(
        rows in prop::collection::vec(prop::array::uniform9(-5.0f64..5.0), 1..20),
        extra in prop::array::uniform9(-5.0f64..5.0),
        seed in any::<u64>(),
    ) {
        let params = EncoderParams::seeded(Stream::Vehicle, 16, seed);
        let before = encode_points(&rows, &params);
        let mut more = rows.clone();
        more.push(extra);
        let after = encode_points(&more, &params);
        for (a, b) in after.iter().zip(&before) {
            prop_assert!(a >= b);
        }
    }

    #[test]
    fn voxelize_conserves_points(pts in prop::collection::vec(local_point(), 0..400), cap in 1usize..8, max_p in 1usize..64) {
        let cfg = PillarConfig { max_points_per_pillar: cap, max_pillars: max_p, ..small_pillar_cfg() };
        let n = pts.len();
        let vox = voxelize(&PointCloud::new(Frame::Global, pts), &cfg, &small_region()).unwrap();
        prop_assert_eq!(vox.retained_points() + vox.truncated, n);
        prop_assert!(vox.pillars.len() <= max_p);
        for p in &vox.pillars {
            prop_assert!(p.n_points() >= 1 && p.n_points() <= cap);
            prop_assert!((p.cell_ix as usize) < cfg.grid_w && (p.cell_iy as usize) < cfg.grid_h);
        }
    }
}

// Fusion

const FC: usize = 4;
const FH: usize = 6;
const FW: usize = 8;

fn node_features() -> impl Strategy<Value = (bool, Vec<(u32, u32)>, Vec<f32>)> {
    (
        any::<bool>(),
        prop::collection::btree_set((0u32..FW as u32, 0u32..FH as u32), 0..12),
    )
        .prop_flat_map(|(veh, cells)| {
            let cells: Vec<(u32, u32)> = cells.into_iter().collect();
            let n = cells.len() * FC;
            (Just(veh), Just(cells), prop::collection::vec(0.0f32..3.0, n))
        })
}

fn to_maps(nodes: &[(bool, Vec<(u32, u32)>, Vec<f32>)]) -> Vec<NodeFeatureMap> {
    nodes
        .iter()
        .enumerate()
        .map(|(i, (veh, cells, feats))| {
            let pf = PillarFeatures {
                node: NodeId(i as u32),
                stream: if *veh { Stream::Vehicle } else { Stream::Infrastructure },
                channels: FC,
                cells: cells.clone(),
                features: feats.clone(),
            };
            scatter(&pf, FH, FW).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn fusion_node_permutation_invariance(
        (nodes, perm) in prop::collection::vec(node_features(), 1..6)
            .prop_flat_map(|v| { let n = v.len(); (Just(v), Just((0..n).collect::<Vec<_>>()).prop_shuffle()) }),
        seed in any::<u64>(),
    ) {
        let params = TsfParams::seeded(&mut ChaCha8Rng::seed_from_u64(seed), FC);
        let maps = to_maps(&nodes);
        let permuted: Vec<_> = perm.iter().map(|&i| maps[i].clone()).collect();
        let a = fuse_nodes(&maps, (FC, FH, FW), &params).unwrap();
        let b = fuse_nodes(&permuted, (FC, FH, FW), &params).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn adding_a_node_never_lowers_stream_cells(nodes in prop::collection::vec(node_features(), 1..6)) {
        let maps: Vec<_> = to_maps(&nodes).into_iter().filter(|m| m.stream == Stream::Vehicle).collect();
        prop_assume!(!maps.is_empty());
        let fewer = stream_fuse(&maps[1..], Stream::Vehicle, (FC, FH, FW)).unwrap();
        let all = stream_fuse(&maps, Stream::Vehicle, (FC, FH, FW)).unwrap();
        for (a, b) in all.data().iter().zip(fewer.data()) {
            prop_assert!(a >= b);
        }
    }
}

// Kernels

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn conv_is_linear(seed in any::<u64>(), a in -4.0f32..4.0, stride in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut k = ConvKernel::seeded(&mut rng, 3, 2, 3);
        k.bias.iter_mut().for_each(|b| *b = 0.0);
        let x: Vec<f32> = (0..2 * 7 * 9).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let x = Tensor3::from_vec(2, 7, 9, x).unwrap();
        let ax = Tensor3::from_vec(2, 7, 9, x.data().iter().map(|v| v * a).collect()).unwrap();
        let y = conv2d(&x, &k, stride, 1).unwrap();
        let ay = conv2d(&ax, &k, stride, 1).unwrap();
        let scale = y.data().iter().fold(0.0f64, |m, v| m.max((a as f64 * *v as f64).abs()));
        for (p, q) in ay.data().iter().zip(y.data()) {
            let expect = a as f64 * *q as f64;
            prop_assert!((*p as f64 - expect).abs() <= 1e-5 * scale.max(1e-12));
        }
    }
}

// Box coding and losses

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn encode_decode_round_trip(gt in bbox(), anchor in bbox()) {
        let d = encode_deltas(&gt, &anchor);
        let back = decode_deltas(&d, &anchor, direction_target(&gt, &anchor) == 1);
        for (a, b) in back.as_array()[..6].iter().zip(&gt.as_array()[..6]) {
            prop_assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
        prop_assert!(angle_diff(back.theta, gt.theta) <= 1e-6);
    }

    #[test]
    fn decode_encode_round_trip(
        d in prop::array::uniform7(-1.5f64..1.5).prop_map(|mut d| { d[6] = d[6].clamp(-0.999, 0.999); d }),
        anchor in bbox(),
        flipped in any::<bool>(),
    ) {
        let b = decode_deltas(&d, &anchor, flipped);
        let back = encode_deltas(&b, &anchor);
        for (x, y) in back.iter().zip(&d) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn smooth_l1_gradient(d in prop::array::uniform7(-3.0f64..3.0)) {
        let (_, g) = smooth_l1(&d);
        for j in 0..7 {
            prop_assume!((d[j].abs() - 1.0).abs() > 1e-3);
            let num = central_diff(|v| { let mut e = d; e[j] = v; smooth_l1(&e).0 }, d[j]);
            prop_assert!(rel_err(g[j], num) <= 1e-4, "component {j}: {} vs {num}", g[j]);
        }
    }

    #[test]
    fn focal_gradient_in_probability(p in 0.01f64..0.99, alpha in 0.05f64..0.95, gamma in 0.0f64..4.0) {
        let f = focal_cls_loss(p, alpha, gamma);
        let num = central_diff(|v| focal_cls_loss(v, alpha, gamma).value, p);
        prop_assert!(rel_err(f.grad, num) <= 1e-4, "{} vs {num}", f.grad);
    }

    #[test]
    fn focal_gradient_in_logit(z in -8.0f64..8.0, pos in any::<bool>()) {
        let (_, g) = focal_logit_loss(z, pos, 0.25, 2.0);
        let num = central_diff(|v| focal_logit_loss(v, pos, 0.25, 2.0).0, z);
        prop_assert!(rel_err(g, num) <= 1e-4, "{g} vs {num}");
    }

    #[test]
    fn direction_loss_gradient(l0 in -6.0f64..6.0, l1 in -6.0f64..6.0, t in 0usize..2) {
        let (_, g) = direction_loss([l0, l1], t);
        let n0 = central_diff(|v| direction_loss([v, l1], t).0, l0);
        let n1 = central_diff(|v| direction_loss([l0, v], t).0, l1);
        prop_assert!(rel_err(g[0], n0) <= 1e-4);
        prop_assert!(rel_err(g[1], n1) <= 1e-4);
    }

    #[test]
    fn focal_decreasing_in_probability(p in 0.001f64..0.999, dp in 1e-4f64..0.5) {
        let q = (p + dp).min(1.0);
        prop_assert!(focal_cls_loss(q, 0.25, 2.0).value <= focal_cls_loss(p, 0.25, 2.0).value);
    }

    #[test]
    fn total_loss_homogeneous(l in prop::array::uniform3(0.0f64..10.0), k in 0.0f64..10.0, n in 1usize..100) {
        let w = LossWeights::default();
        let a = total_loss(l[0], l[1], l[2], n, &w).value;
        let b = total_loss(k * l[0], k * l[1], k * l[2], n, &w).value;
        prop_assert!((b - k * a).abs() <= 1e-12 * (1.0 + b.abs()));
    }

    #[test]
    fn detected_boxes_are_valid(seed in any::<u64>()) {
        let region = Region::new((0.0, 8.0), (0.0, 4.0), (-1.0, 3.0)).unwrap();
        let grid = AnchorGrid::new(AnchorConfig::default(), 4, 8, &region, 1.0).unwrap();
        let mut out = HeadOutput::zeros(grid.per_cell(), 4, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in [&mut out.cls, &mut out.reg, &mut out.dir] {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-6.0f32..6.0));
        }
        let dets = detect(&out, &grid, &DetectConfig::default()).unwrap();
        for d in dets {
            prop_assert!(d.bbox.is_valid());
            prop_assert!(d.score >= 0.5 && d.score <= 1.0);
        }
    }
}

// IoU

/// Monte-Carlo BEV IoU over the joint bounding rectangle.
fn mc_bev_iou(a: &Box3D, b: &Box3D, samples: usize, seed: u64) -> f64 {
    let corners: Vec<(f64, f64)> = a.bev_corners().into_iter().chain(b.bev_corners()).collect();
    let (x0, x1) = corners
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), c| (lo.min(c.0), hi.max(c.0)));
    let (y0, y1) = corners
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), c| (lo.min(c.1), hi.max(c.1)));
    let inside = |bx: &Box3D, x: f64, y: f64| {
        let (s, c) = bx.theta.sin_cos();
        let (dx, dy) = (x - bx.x, y - bx.y);
        (dx * c + dy * s).abs() <= bx.l / 2.0 && (-dx * s + dy * c).abs() <= bx.w / 2.0
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut both, mut either) = (0usize, 0usize);
    for _ in 0..samples {
        let x = rng.random_range(x0..x1);
        let y = rng.random_range(y0..y1);
        let (ia, ib) = (inside(a, x, y), inside(b, x, y));
        both += usize::from(ia && ib);
        either += usize::from(ia || ib);
    }
    both as f64 / either.max(1) as f64
}

fn nearby_pair() -> impl Strategy<Value = (Box3D, Box3D)> {
    (bbox(), -3.0f64..3.0, -3.0f64..3.0, 0.3f64..5.0, 0.3f64..8.0, angle()).prop_map(|(a, dx, dy, w, l, t)| {
        let b = Box3D::new(a.x + dx, a.y + dy, a.z, w, l, a.h, t).unwrap();
        (a, b)
    })
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn bev_iou_matches_monte_carlo((a, b) in nearby_pair(), seed in any::<u64>()) {
        let exact = bev_iou(&a, &b);
        let mc = mc_bev_iou(&a, &b, 1_000_000, seed);
        prop_assert!((exact - mc).abs() <= 1e-2, "exact {exact} vs mc {mc}");
    }

    #[test]
    fn iou_symmetric_and_rigid((a, b) in nearby_pair(), tx in -50.0f64..50.0, ty in -50.0f64..50.0, rot in angle()) {
        prop_assert!((bev_iou(&a, &b) - bev_iou(&b, &a)).abs() <= 1e-12);
        prop_assert!((iou_3d(&a, &b) - iou_3d(&b, &a)).abs() <= 1e-12);
        prop_assert!((bev_iou(&a, &a) - 1.0).abs() <= 1e-12);
        prop_assert!((iou_3d(&a, &a) - 1.0).abs() <= 1e-12);
        let (s, c) = rot.sin_cos();
        let mv = |bx: &Box3D| Box3D::new(
            c * bx.x - s * bx.y + tx,
            s * bx.x + c * bx.y + ty,
            bx.z, bx.w, bx.l, bx.h, bx.theta + rot,
        ).unwrap();
        prop_assert!((bev_iou(&mv(&a), &mv(&b)) - bev_iou(&a, &b)).abs() <= 1e-9);
        prop_assert!((iou_3d(&mv(&a), &mv(&b)) - iou_3d(&a, &b)).abs() <= 1e-9);
    }
}

// Evaluation

fn frame() -> impl Strategy<Value = FrameEval> {
    let gt = (bbox(), 0u32..20).prop_map(|(bbox, mp)| GroundTruthObject {
        bbox,
        class: ObjectClass::Car,
        mp,
    });
    (
        prop::collection::vec(gt, 0..5),
        prop::collection::vec((bbox(), 0.0f64..1.0), 0..6),
    )
        .prop_map(|(gts, dets)| {
            let mut detections: Vec<Detection> = dets
                .into_iter()
                .enumerate()
                .map(|(i, (bbox, score))| Detection {
                    bbox,
                    class: ObjectClass::Car,
                    score,
                    anchor: i,
                })
                .collect();
            // Near-copies of some ground truth so that true positives occur.
            for (i, g) in gts.iter().enumerate().step_by(2) {
                let mut b = g.bbox;
                b.x += 0.05;
                detections.push(Detection {
                    bbox: b,
                    class: ObjectClass::Car,
                    score: 0.3 + 0.1 * i as f64,
                    anchor: 100 + i,
                });
            }
            FrameEval {
                detections,
                ground_truth: gts,
            }
        })
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn ap_bounded_and_fp_removal_monotone(frames in prop::collection::vec(frame(), 1..4), score in 0.0f64..1.0) {
        let cfg = EvalConfig::default();
        for &mp in &cfg.mp_buckets {
            let curve = eval::precision_recall(&frames, ObjectClass::Car, mp, &cfg);
            let ap = eval::average_precision(&curve, cfg.recall_points);
            prop_assert!((0.0..=1.0).contains(&ap));
            let mut with_fp = frames.clone();
            with_fp[0].detections.push(Detection {
                bbox: Box3D::new(1000.0, 1000.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap(),
                class: ObjectClass::Car,
                score,
                anchor: 999,
            });
            let ap_fp = eval::average_precision(&eval::precision_recall(&with_fp, ObjectClass::Car, mp, &cfg), cfg.recall_points);
            prop_assert!(ap_fp <= ap + 1e-12, "{ap_fp} > {ap}");
        }
    }

    #[test]
    fn mp_buckets_nest(frames in prop::collection::vec(frame(), 1..4)) {
        let cfg = EvalConfig::default();
        let n = |mp| eval::precision_recall(&frames, ObjectClass::Car, mp, &cfg).n_gt;
        prop_assert!(n(10) <= n(5) && n(5) <= n(1));
    }
}

// Cost model

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn gpu_costs_strictly_ordered(n in 2usize..10_000) {
        let c = costmodel::fit_gpu_poly(3.13, 5.60, 10.95, 4).unwrap();
        let v = costmodel::c_vinet(&c, n);
        let d = costmodel::c_dense(&c, n);
        let e = costmodel::c_early_late(&c, n);
        prop_assert!(v < d && d < e);
        prop_assert_eq!(costmodel::gpu_cost(&c, FeatureKind::Shallow, CpCondition::Holistic(n)), v);
        prop_assert_eq!(costmodel::gpu_cost(&c, FeatureKind::Dense, CpCondition::Egocentric(n)), d);
        prop_assert_eq!(costmodel::gpu_cost(&c, FeatureKind::Late, CpCondition::Holistic(n)), e);
    }

    #[test]
    fn bandwidth_linear(f in 0u64..100_000, c in 0u64..512, b in 0u64..8, k in 1u64..5) {
        let m = costmodel::bandwidth_per_transmission(f, c, b);
        let close = |v: f64| (v - k as f64 * m).abs() <= 1e-12 * v.abs().max(1.0);
        prop_assert!(close(costmodel::bandwidth_per_transmission(k * f, c, b)));
        prop_assert!(close(costmodel::bandwidth_per_transmission(f, k * c, b)));
        prop_assert!(close(costmodel::bandwidth_per_transmission(f, c, k * b)));
        prop_assert_eq!(costmodel::transmission_bytes(k * f, c, b), k * costmodel::transmission_bytes(f, c, b));
    }

    #[test]
    fn gpu_fit_round_trip(e in 0.1f64..5.0, b in 0.1f64..5.0, d in 0.1f64..5.0, n in 2usize..20) {
        let c = costmodel::GpuPolyCoeffs::new(e, b, d);
        let single = costmodel::c_single(&c);
        let vinet = costmodel::c_vinet(&c, n);
        let dense = costmodel::c_dense(&c, n);
        let fit = costmodel::fit_gpu_poly(single, vinet, dense, n).unwrap();
        prop_assert!((fit.encoder - e).abs() <= 1e-9);
        prop_assert!((fit.backbone - b).abs() <= 1e-9);
        prop_assert!((fit.head - d).abs() <= 1e-9);
    }
}

//! Rotated IoU, precision/recall and interpolated AP/AR per class and
//! minimum-point bucket.

use alloc::vec;
use alloc::vec::Vec;

use crate::head::{Box3D, Detection, ObjectClass};

type P2 = (f64, f64);

fn cross(o: P2, a: P2, b: P2) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

pub fn polygon_area(poly: &[P2]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let s: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    s.abs() / 2.0
}

/// Sutherland-Hodgman clipping of `subject` against a convex CCW `clip`.
pub fn clip_convex(subject: &[P2], clip: &[P2]) -> Vec<P2> {
    let mut out: Vec<P2> = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = core::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (dp, dq) = (cross(a, b, p), cross(a, b, q));
            if dp >= 0.0 {
                out.push(p);
            }
            if (dp >= 0.0) != (dq >= 0.0) {
                let t = dp / (dp - dq);
                out.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
            }
        }
    }
    out
}

pub fn bev_intersection(a: &Box3D, b: &Box3D) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let reach = (a.diagonal() + b.diagonal()) / 2.0;
    if dx * dx + dy * dy > reach * reach {
        return 0.0;
    }
    polygon_area(&clip_convex(&a.bev_corners(), &b.bev_corners()))
}

pub fn bev_iou(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.bev_area() + b.bev_area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let (a0, a1) = a.z_range();
    let (b0, b1) = b.z_range();
    let dz = a1.min(b1) - a0.max(b0);
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection(a, b) * dz;
    if inter <= 0.0 {
        return 0.0;
    }
    (inter / (a.volume() + b.volume() - inter)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Benchmark {
    Bev,
    ThreeD,
}

impl Benchmark {
    pub fn iou(self, a: &Box3D, b: &Box3D) -> f64 {
        match self {
            Benchmark::Bev => bev_iou(a, b),
            Benchmark::ThreeD => iou_3d(a, b),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Benchmark::Bev => "BEV",
            Benchmark::ThreeD => "3D",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub car_iou: f64,
    pub pedestrian_iou: f64,
    /// Minimum-point thresholds, strictest first.
    pub mp_buckets: Vec<u32>,
    pub benchmark: Benchmark,
    pub recall_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            car_iou: 0.7,
            pedestrian_iou: 0.25,
            mp_buckets: vec![10, 5, 1],
            benchmark: Benchmark::Bev,
            recall_points: 40,
        }
    }
}

impl EvalConfig {
    pub fn iou_threshold(&self, class: ObjectClass) -> f64 {
        match class {
            ObjectClass::Car => self.car_iou,
            ObjectClass::Pedestrian => self.pedestrian_iou,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let ok = |t: f64| t > 0.0 && t <= 1.0;
        if !ok(self.car_iou) || !ok(self.pedestrian_iou) {
            return Err(crate::Error::Config("IoU thresholds must lie in (0, 1]".into()));
        }
        if self.recall_points == 0 {
            return Err(crate::Error::Config("recall_points must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthObject {
    pub bbox: Box3D,
    pub class: ObjectClass,
    /// LiDAR points inside the box.
    pub mp: u32,
}

/// Detections and ground truth for one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameEval {
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<GroundTruthObject>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub score: f64,
    pub tp: usize,
    pub fp: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// One point per counted detection, in descending score order.
    pub points: Vec<PrPoint>,
    pub n_gt: usize,
}

impl PrCurve {
    pub fn tp(&self) -> usize {
        self.points.last().map_or(0, |p| p.tp)
    }

    pub fn fp(&self) -> usize {
        self.points.last().map_or(0, |p| p.fp)
    }

    pub fn fn_count(&self) -> usize {
        self.n_gt - self.tp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Tp,
    Fp,
    Ignored,
}

/// Greedy score-ordered matching in one frame. Ground truths below `min_mp`
/// are ignored: a detection that can only match one of them is dropped from
/// the count instead of becoming a false positive.
fn match_frame(
    frame: &FrameEval,
    class: ObjectClass,
    min_mp: u32,
    iou_thr: f64,
    bench: Benchmark,
) -> (Vec<(f64, Outcome)>, usize) {
    let gts: Vec<&GroundTruthObject> = frame.ground_truth.iter().filter(|g| g.class == class).collect();
    let care: Vec<bool> = gts.iter().map(|g| g.mp >= min_mp).collect();
    let n_gt = care.iter().filter(|&&c| c).count();
    let mut dets: Vec<(usize, &Detection)> = frame
        .detections
        .iter()
        .enumerate()
        .filter(|(_, d)| d.class == class)
        .collect();
    dets.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then(a.0.cmp(&b.0)));
    let mut used = vec![false; gts.len()];
    let mut out = Vec::with_capacity(dets.len());
    for (_, d) in dets {
        let mut best: [Option<(usize, f64)>; 2] = [None, None];
        for (g, gt) in gts.iter().enumerate() {
            if used[g] {
                continue;
            }
            let iou = bench.iou(&d.bbox, &gt.bbox);
            if iou < iou_thr {
                continue;
            }
            let slot = &mut best[usize::from(!care[g])];
            if slot.is_none_or(|(_, b)| iou > b) {
                *slot = Some((g, iou));
            }
        }
        let outcome = match best {
            [Some((g, _)), _] => {
                used[g] = true;
                Outcome::Tp
            }
            [None, Some((g, _))] => {
                used[g] = true;
                Outcome::Ignored
            }
            [None, None] => Outcome::Fp,
        };
        out.push((d.score, outcome));
    }
    (out, n_gt)
}

fn curve_at(frames: &[FrameEval], class: ObjectClass, min_mp: u32, iou_thr: f64, bench: Benchmark) -> PrCurve {
    let mut scored: Vec<(f64, usize, usize, Outcome)> = Vec::new();
    let mut n_gt = 0;
    for (fi, f) in frames.iter().enumerate() {
        let (m, n) = match_frame(f, class, min_mp, iou_thr, bench);
        n_gt += n;
        scored.extend(m.into_iter().enumerate().map(|(r, (s, o))| (s, fi, r, o)));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut tp, mut fp) = (0usize, 0usize);
    let points = scored
        .into_iter()
        .filter(|s| s.3 != Outcome::Ignored)
        .map(|(score, _, _, o)| {
            if o == Outcome::Tp {
                tp += 1;
            } else {
                fp += 1;
            }
            PrPoint {
                score,
                tp,
                fp,
                precision: tp as f64 / (tp + fp) as f64,
                recall: if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 },
            }
        })
        .collect();
    PrCurve { points, n_gt }
}

pub fn precision_recall(frames: &[FrameEval], class: ObjectClass, min_mp: u32, cfg: &EvalConfig) -> PrCurve {
    curve_at(frames, class, min_mp, cfg.iou_threshold(class), cfg.benchmark)
}

/// Interpolated AP over recall samples `1/n, 2/n, ..., 1`. Empty ground truth
/// yields 0.
pub fn average_precision(curve: &PrCurve, recall_points: usize) -> f64 {
    if curve.n_gt == 0 || recall_points == 0 {
        return 0.0;
    }
    // Running max of precision from the tail: best precision at recall >= r.
    let mut env: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.recall, p.precision)).collect();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i].1 = env[i].1.max(env[i + 1].1);
    }
    let mut sum = 0.0;
    let mut j = 0;
    for k in 1..=recall_points {
        let r = k as f64 / recall_points as f64;
        while j < env.len() && env[j].0 < r - 1e-12 {
            j += 1;
        }
        if j < env.len() {
            sum += env[j].1;
        }
    }
    sum / recall_points as f64
}

/// Mean recall over IoU thresholds from the class threshold up to 0.95 in
/// steps of 0.05.
pub fn average_recall(frames: &[FrameEval], class: ObjectClass, min_mp: u32, cfg: &EvalConfig) -> f64 {
    let t0 = cfg.iou_threshold(class);
    let steps = libm::floor((0.95 - t0) / 0.05 + 1e-9).max(0.0) as usize;
    let mut total = 0.0;
    for s in 0..=steps {
        let c = curve_at(frames, class, min_mp, t0 + 0.05 * s as f64, cfg.benchmark);
        total += c.points.last().map_or(0.0, |p| p.recall);
    }
    total / (steps + 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalCell {
    pub class: ObjectClass,
    pub min_mp: u32,
    pub ap: f64,
    pub ar: f64,
    pub n_gt: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub benchmark: Benchmark,
    pub cells: Vec<EvalCell>,
}

impl EvalReport {
    pub fn cell(&self, class: ObjectClass, min_mp: u32) -> Option<&EvalCell> {
        self.cells.iter().find(|c| c.class == class && c.min_mp == min_mp)
    }

    /// Mean AP over every class x bucket cell.
    pub fn overall_cells(&self) -> f64 {
        mean(self.cells.iter().map(|c| c.ap))
    }

    /// Mean AP over classes at the loosest bucket.
    pub fn overall_classes(&self) -> f64 {
        let loosest = self.cells.iter().map(|c| c.min_mp).min().unwrap_or(0);
        mean(self.cells.iter().filter(|c| c.min_mp == loosest).map(|c| c.ap))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn evaluate(frames: &[FrameEval], cfg: &EvalConfig) -> EvalReport {
    let mut cells = Vec::new();
    for class in ObjectClass::ALL {
        for &mp in &cfg.mp_buckets {
            let curve = precision_recall(frames, class, mp, cfg);
            cells.push(EvalCell {
                class,
                min_mp: mp,
                ap: average_precision(&curve, cfg.recall_points),
                ar: average_recall(frames, class, mp, cfg),
                n_gt: curve.n_gt,
            });
        }
    }
    EvalReport {
        benchmark: cfg.benchmark,
        cells,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, w: f64, l: f64, theta: f64) -> Box3D {
        Box3D::new(x, y, 1.0, w, l, 2.0, theta).unwrap()
    }

    fn det(b: Box3D, score: f64) -> Detection {
        Detection {
            bbox: b,
            class: ObjectClass::Car,
            score,
            anchor: 0,
        }
    }

    fn gt(b: Box3D, mp: u32) -> GroundTruthObject {
        GroundTruthObject {
            bbox: b,
            class: ObjectClass::Car,
            mp,
        }
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 2.0, 2.0, 0.0);
        assert!((bev_iou(&a, &a) - 1.0).abs() < 1e-12);
        assert_eq!(bev_iou(&a, &bx(10.0, 0.0, 2.0, 2.0, 0.0)), 0.0);
        assert!((bev_iou(&a, &bx(1.0, 0.0, 2.0, 2.0, 0.0)) - 1.0 / 3.0).abs() < 1e-12);
        // A square turned by 90 degrees covers itself.
        let r = bx(0.0, 0.0, 2.0, 2.0, core::f64::consts::FRAC_PI_2);
        assert!((bev_iou(&a, &r) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iou_3d_examples() {
        let a = bx(0.0, 0.0, 2.0, 2.0, 0.0);
        assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-12);
        let mut b = a;
        b.z += 1.0;
        assert!((iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        b.z += 1.0;
        assert_eq!(iou_3d(&a, &b), 0.0);
    }

    #[test]
    fn pr_simple_cases() {
        let cfg = EvalConfig::default();
        let b = bx(0.0, 0.0, 1.8, 4.4, 0.0);
        let f = FrameEval {
            detections: vec![det(b, 0.9)],
            ground_truth: vec![gt(b, 20)],
        };
        let c = precision_recall(&[f], ObjectClass::Car, 1, &cfg);
        assert_eq!((c.points[0].precision, c.points[0].recall), (1.0, 1.0));
        assert!((average_precision(&c, 40) - 1.0).abs() < 1e-12);

        let f = FrameEval {
            detections: vec![det(b, 0.9)],
            ground_truth: vec![],
        };
        let c = precision_recall(&[f], ObjectClass::Car, 1, &cfg);
        assert_eq!((c.points[0].precision, c.fp()), (0.0, 1));
        assert_eq!(average_precision(&c, 40), 0.0);
    }

    #[test]
    fn pr_three_dets_two_gts() {
        let cfg = EvalConfig::default();
        let g1 = bx(0.0, 0.0, 1.8, 4.4, 0.0);
        let g2 = bx(10.0, 0.0, 1.8, 4.4, 0.0);
        let f = FrameEval {
            // 0.9 hits g1, 0.8 duplicates g1 (FP), 0.7 hits g2.
            detections: vec![det(g2, 0.7), det(g1, 0.9), det(bx(0.1, 0.0, 1.8, 4.4, 0.0), 0.8)],
            ground_truth: vec![gt(g1, 20), gt(g2, 20)],
        };
        let c = precision_recall(&[f], ObjectClass::Car, 1, &cfg);
        let pr: Vec<(usize, usize)> = c.points.iter().map(|p| (p.tp, p.fp)).collect();
        assert_eq!(pr, vec![(1, 0), (1, 1), (2, 1)]);
        assert_eq!(c.fn_count(), 0);
        // Recall 0.5 for k <= 20 at precision 1, then 2/3 for k in 21..=40.
        let expect = (20.0 * 1.0 + 20.0 * (2.0 / 3.0)) / 40.0;
        assert!((average_precision(&c, 40) - expect).abs() < 1e-12);
    }

    #[test]
    fn below_bucket_gt_is_ignored() {
        let cfg = EvalConfig::default();
        let b = bx(0.0, 0.0, 1.8, 4.4, 0.0);
        let f = FrameEval {
            detections: vec![det(b, 0.9)],
            ground_truth: vec![gt(b, 3)],
        };
        let c = precision_recall(&[f.clone()], ObjectClass::Car, 5, &cfg);
        assert!(c.points.is_empty());
        assert_eq!(c.n_gt, 0);
        let c = precision_recall(&[f], ObjectClass::Car, 1, &cfg);
        assert_eq!(c.tp(), 1);
    }

    #[test]
    fn two_point_staircase() {
        // Hand-built curve: (R 0.25, P 1.0), (R 0.5, P 0.5).
        let c = PrCurve {
            points: vec![
                PrPoint {
                    score: 0.9,
                    tp: 1,
                    fp: 0,
                    precision: 1.0,
                    recall: 0.25,
                },
                PrPoint {
                    score: 0.8,
                    tp: 2,
                    fp: 2,
                    precision: 0.5,
                    recall: 0.5,
                },
            ],
            n_gt: 4,
        };
        assert!((average_precision(&c, 40) - (10.0 + 5.0) / 40.0).abs() < 1e-12);
    }

    #[test]
    fn report_aggregates() {
        let cfg = EvalConfig::default();
        let b = bx(0.0, 0.0, 1.8, 4.4, 0.0);
        let f = FrameEval {
            detections: vec![det(b, 0.9)],
            ground_truth: vec![gt(b, 20)],
        };
        let r = evaluate(&[f], &cfg);
        assert_eq!(r.cells.len(), 6);
        assert!((r.cell(ObjectClass::Car, 10).unwrap().ap - 1.0).abs() < 1e-12);
        assert!((r.cell(ObjectClass::Car, 10).unwrap().ar - 1.0).abs() < 1e-12);
        assert!((r.overall_cells() - 0.5).abs() < 1e-12);
        assert!((r.overall_classes() - 0.5).abs() < 1e-12);
    }
}

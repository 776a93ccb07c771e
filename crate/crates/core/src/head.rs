//! Anchor-based detection head: 1x1 class/box/direction convolutions, box
//! delta coding, losses with analytic gradients, target assignment and
//! NMS decoding.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::eval::bev_iou;
use crate::geometry::Region;
use crate::math::{self, PI};
use crate::nn::{self, ConvKernel, Tensor3};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ObjectClass {
    Car,
    Pedestrian,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 2] = [ObjectClass::Car, ObjectClass::Pedestrian];
    /// Class columns per anchor, including the background column.
    pub const CLS_COLUMNS: usize = 3;
    pub const BACKGROUND_COLUMN: usize = 2;

    pub fn index(self) -> usize {
        match self {
            ObjectClass::Car => 0,
            ObjectClass::Pedestrian => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectClass::Car => "Car",
            ObjectClass::Pedestrian => "Pedestrian",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Car" | "car" => Some(ObjectClass::Car),
            "Pedestrian" | "pedestrian" => Some(ObjectClass::Pedestrian),
            _ => None,
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// 7-DoF box: centre, width (lateral), length (along heading), height, yaw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
    pub l: f64,
    pub h: f64,
    pub theta: f64,
}

impl Box3D {
    /// Validates sizes and wraps `theta` into `(-pi, pi]`.
    pub fn new(x: f64, y: f64, z: f64, w: f64, l: f64, h: f64, theta: f64) -> Result<Self> {
        let b = Box3D {
            x,
            y,
            z,
            w,
            l,
            h,
            theta: math::normalize_angle(theta),
        };
        if !b.is_valid() {
            return Err(Error::InvalidBox("sizes must be positive and all fields finite"));
        }
        Ok(b)
    }

    pub fn is_valid(&self) -> bool {
        let fields = [self.x, self.y, self.z, self.w, self.l, self.h, self.theta];
        fields.iter().all(|v| v.is_finite())
            && self.w > 0.0
            && self.l > 0.0
            && self.h > 0.0
            && self.theta > -PI
            && self.theta <= PI
    }

    pub fn diagonal(&self) -> f64 {
        math::hypot(self.w, self.l)
    }

    pub fn bev_area(&self) -> f64 {
        self.w * self.l
    }

    pub fn volume(&self) -> f64 {
        self.w * self.l * self.h
    }

    /// BEV corners, counter-clockwise.
    pub fn bev_corners(&self) -> [(f64, f64); 4] {
        let (s, c) = (math::sin(self.theta), math::cos(self.theta));
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        [(hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw)].map(|(a, b)| (self.x + a * c - b * s, self.y + a * s + b * c))
    }

    pub fn z_range(&self) -> (f64, f64) {
        (self.z - self.h / 2.0, self.z + self.h / 2.0)
    }

    /// Whether a point lies inside the box (boundary inclusive).
    pub fn contains(&self, x: f64, y: f64, z: f64) -> bool {
        let (s, c) = (math::sin(self.theta), math::cos(self.theta));
        let (dx, dy) = (x - self.x, y - self.y);
        let (u, v) = (dx * c + dy * s, -dx * s + dy * c);
        let (z0, z1) = self.z_range();
        u.abs() <= self.l / 2.0 && v.abs() <= self.w / 2.0 && z >= z0 && z <= z1
    }

    pub fn as_array(&self) -> [f64; 7] {
        [self.x, self.y, self.z, self.w, self.l, self.h, self.theta]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorPrior {
    pub class: ObjectClass,
    pub w: f64,
    pub l: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorConfig {
    pub priors: Vec<AnchorPrior>,
    pub rotations: Vec<f64>,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            priors: vec![
                AnchorPrior {
                    class: ObjectClass::Car,
                    w: 1.8,
                    l: 4.4,
                    h: 1.6,
                },
                AnchorPrior {
                    class: ObjectClass::Pedestrian,
                    w: 0.6,
                    l: 0.8,
                    h: 1.7,
                },
            ],
            rotations: vec![0.0, PI / 2.0],
        }
    }
}

impl AnchorConfig {
    pub fn anchors_per_cell(&self) -> usize {
        self.priors.len() * self.rotations.len()
    }
}

/// Anchors laid over the head's output grid. Anchor `a` of cell `(iy, ix)`
/// has flat index `(iy * grid_w + ix) * A + a`, with `a = prior * R + rot`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub config: AnchorConfig,
    pub grid_h: usize,
    pub grid_w: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    pub stride: f64,
}

impl AnchorGrid {
    pub fn new(config: AnchorConfig, grid_h: usize, grid_w: usize, region: &Region, stride: f64) -> Result<Self> {
        if config.priors.is_empty() || config.rotations.is_empty() || grid_h == 0 || grid_w == 0 {
            return Err(Error::Config(
                "anchor grid needs priors, rotations and a non-empty grid".into(),
            ));
        }
        if !(stride > 0.0 && stride.is_finite()) {
            return Err(Error::Config("anchor stride must be positive".into()));
        }
        if config.priors.iter().any(|p| !(p.w > 0.0 && p.l > 0.0 && p.h > 0.0)) {
            return Err(Error::Config("anchor priors must have positive sizes".into()));
        }
        Ok(AnchorGrid {
            config,
            grid_h,
            grid_w,
            origin_x: region.x_min,
            origin_y: region.y_min,
            stride,
        })
    }

    pub fn per_cell(&self) -> usize {
        self.config.anchors_per_cell()
    }

    pub fn len(&self) -> usize {
        self.grid_h * self.grid_w * self.per_cell()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(iy, ix, a)` of a flat anchor index.
    pub fn unflatten(&self, idx: usize) -> (usize, usize, usize) {
        let a = idx % self.per_cell();
        let cell = idx / self.per_cell();
        (cell / self.grid_w, cell % self.grid_w, a)
    }

    pub fn flatten(&self, iy: usize, ix: usize, a: usize) -> usize {
        (iy * self.grid_w + ix) * self.per_cell() + a
    }

    pub fn class_of(&self, a: usize) -> ObjectClass {
        self.config.priors[a / self.config.rotations.len()].class
    }

    pub fn cell_center(&self, iy: usize, ix: usize) -> (f64, f64) {
        (
            self.origin_x + (ix as f64 + 0.5) * self.stride,
            self.origin_y + (iy as f64 + 0.5) * self.stride,
        )
    }

    pub fn anchor(&self, idx: usize) -> (Box3D, ObjectClass) {
        let (iy, ix, a) = self.unflatten(idx);
        let r = self.config.rotations.len();
        let prior = self.config.priors[a / r];
        let (x, y) = self.cell_center(iy, ix);
        (
            Box3D {
                x,
                y,
                z: prior.h / 2.0,
                w: prior.w,
                l: prior.l,
                h: prior.h,
                theta: math::normalize_angle(self.config.rotations[a % r]),
            },
            prior.class,
        )
    }

    /// Flat indices of anchors whose cell centre lies within `radius` of `(x, y)`.
    fn anchors_near(&self, x: f64, y: f64, radius: f64) -> impl Iterator<Item = usize> + '_ {
        let to_cell = |v: f64, o: f64, n: usize| -> (usize, usize) {
            let lo = math::floor((v - radius - o) / self.stride - 0.5).max(0.0);
            let hi = math::floor((v + radius - o) / self.stride + 0.5).max(-1.0);
            (lo as usize, (hi as isize).min(n as isize - 1) as usize + 1)
        };
        let (x0, x1) = to_cell(x, self.origin_x, self.grid_w);
        let (y0, y1) = to_cell(y, self.origin_y, self.grid_h);
        let per = self.per_cell();
        let x1 = x1.max(x0);
        let y1 = y1.max(y0);
        (y0..y1).flat_map(move |iy| (x0..x1).flat_map(move |ix| (0..per).map(move |a| self.flatten(iy, ix, a))))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub cls: ConvKernel,
    pub reg: ConvKernel,
    pub dir: ConvKernel,
}

impl HeadParams {
    pub fn zeros(in_channels: usize, anchors: usize) -> Self {
        HeadParams {
            cls: ConvKernel::zeros(anchors * ObjectClass::CLS_COLUMNS, in_channels, 1),
            reg: ConvKernel::zeros(anchors * 7, in_channels, 1),
            dir: ConvKernel::zeros(anchors * 2, in_channels, 1),
        }
    }

    pub fn seeded<R: Rng>(rng: &mut R, in_channels: usize, anchors: usize) -> Self {
        HeadParams {
            cls: ConvKernel::seeded(rng, anchors * ObjectClass::CLS_COLUMNS, in_channels, 1),
            reg: ConvKernel::seeded(rng, anchors * 7, in_channels, 1),
            dir: ConvKernel::seeded(rng, anchors * 2, in_channels, 1),
        }
    }

    pub fn anchors(&self) -> usize {
        self.reg.cout / 7
    }
}

/// Raw head maps. Channel layouts per anchor `a`: cls `a*3 + k` (k = 2 is
/// background), reg `a*7 + j`, dir `a*2 + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub cls: Tensor3,
    pub reg: Tensor3,
    pub dir: Tensor3,
}

impl HeadOutput {
    pub fn zeros(anchors: usize, h: usize, w: usize) -> Self {
        HeadOutput {
            cls: Tensor3::zeros(anchors * ObjectClass::CLS_COLUMNS, h, w),
            reg: Tensor3::zeros(anchors * 7, h, w),
            dir: Tensor3::zeros(anchors * 2, h, w),
        }
    }

    pub fn channel_counts(&self) -> (usize, usize, usize) {
        (self.cls.channels(), self.reg.channels(), self.dir.channels())
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.cls.height(), self.cls.width())
    }
}

pub fn head_forward(x: &Tensor3, params: &HeadParams) -> Result<HeadOutput> {
    Ok(HeadOutput {
        cls: nn::conv2d(x, &params.cls, 1, 0)?,
        reg: nn::conv2d(x, &params.reg, 1, 0)?,
        dir: nn::conv2d(x, &params.dir, 1, 0)?,
    })
}

pub fn encode_deltas(gt: &Box3D, anchor: &Box3D) -> [f64; 7] {
    let da = anchor.diagonal();
    [
        (gt.x - anchor.x) / da,
        (gt.y - anchor.y) / da,
        (gt.z - anchor.z) / anchor.h,
        math::ln(gt.w / anchor.w),
        math::ln(gt.l / anchor.l),
        math::ln(gt.h / anchor.h),
        math::sin(gt.theta - anchor.theta),
    ]
}

/// Inverse of [`encode_deltas`]. `flipped` selects the second branch of the
/// sine, i.e. a heading more than 90 degrees away from the anchor's.
pub fn decode_deltas(d: &[f64; 7], anchor: &Box3D, flipped: bool) -> Box3D {
    let da = anchor.diagonal();
    let rel = math::asin(d[6].clamp(-1.0, 1.0));
    let rel = if flipped { PI - rel } else { rel };
    Box3D {
        x: anchor.x + d[0] * da,
        y: anchor.y + d[1] * da,
        z: anchor.z + d[2] * anchor.h,
        w: anchor.w * math::exp(d[3]),
        l: anchor.l * math::exp(d[4]),
        h: anchor.h * math::exp(d[5]),
        theta: math::normalize_angle(anchor.theta + rel),
    }
}

/// Direction bin of a box relative to an anchor: 1 when the heading points
/// away from the anchor's (more than 90 degrees apart).
pub fn direction_target(gt: &Box3D, anchor: &Box3D) -> usize {
    usize::from(math::cos(gt.theta - anchor.theta) < 0.0)
}

/// Summed SmoothL1 over the components and its gradient.
pub fn smooth_l1(d: &[f64; 7]) -> (f64, [f64; 7]) {
    let mut grad = [0.0; 7];
    let mut total = 0.0;
    for (g, &v) in grad.iter_mut().zip(d) {
        if v.abs() < 1.0 {
            total += 0.5 * v * v;
            *g = v;
        } else {
            total += v.abs() - 0.5;
            *g = v.signum();
        }
    }
    (total, grad)
}

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalLoss {
    pub value: f64,
    /// d value / d p, evaluated at the (possibly clamped) probability.
    pub grad: f64,
    /// Set when `p` was below [`PROB_EPS`] and got clamped.
    pub clamped: bool,
}

/// `-alpha (1 - p)^gamma ln p` for the probability of the true class.
pub fn focal_cls_loss(p: f64, alpha: f64, gamma: f64) -> FocalLoss {
    let clamped = !(p >= PROB_EPS);
    let p = if clamped { PROB_EPS } else { p.min(1.0) };
    let q = 1.0 - p;
    let lnp = math::ln(p);
    let value = -alpha * libm::pow(q, gamma) * lnp;
    let grad = if q == 0.0 {
        if gamma > 1.0 {
            0.0
        } else {
            -alpha * libm::pow(q, gamma) / p
        }
    } else {
        alpha * gamma * libm::pow(q, gamma - 1.0) * lnp - alpha * libm::pow(q, gamma) / p
    };
    FocalLoss { value, grad, clamped }
}

/// Focal loss on a raw logit with binary target. Returns the loss and its
/// derivative with respect to the logit.
pub fn focal_logit_loss(logit: f64, positive: bool, alpha: f64, gamma: f64) -> (f64, f64) {
    let s = math::sigmoid(logit);
    let (pt, a, dpt) = if positive {
        (s, alpha, s * (1.0 - s))
    } else {
        (1.0 - s, 1.0 - alpha, -s * (1.0 - s))
    };
    let f = focal_cls_loss(pt, a, gamma);
    (f.value, f.grad * dpt)
}

/// Two-way softmax cross-entropy and its gradient w.r.t. the logits.
pub fn direction_loss(logits: [f64; 2], target: usize) -> (f64, [f64; 2]) {
    let m = logits[0].max(logits[1]);
    let e = [math::exp(logits[0] - m), math::exp(logits[1] - m)];
    let z = e[0] + e[1];
    let p = [e[0] / z, e[1] / z];
    let loss = math::ln(z) + m - logits[target];
    let mut grad = p;
    grad[target] -= 1.0;
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub loc: f64,
    pub cls: f64,
    pub dir: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            loc: 2.0,
            cls: 1.0,
            dir: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    /// Set when there were no positive anchors and the frame was skipped.
    pub skipped: bool,
}

pub fn total_loss(l_loc: f64, l_cls: f64, l_dir: f64, n_pos: usize, w: &LossWeights) -> TotalLoss {
    if n_pos == 0 {
        return TotalLoss {
            value: 0.0,
            skipped: true,
        };
    }
    TotalLoss {
        value: (w.loc * l_loc + w.cls * l_cls + w.dir * l_dir) / n_pos as f64,
        skipped: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchThresholds {
    pub pos: f64,
    pub neg: f64,
}

impl MatchThresholds {
    pub fn for_class(class: ObjectClass) -> Self {
        match class {
            ObjectClass::Car => MatchThresholds { pos: 0.6, neg: 0.45 },
            ObjectClass::Pedestrian => MatchThresholds { pos: 0.5, neg: 0.35 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    Negative,
    Ignored,
    Positive { gt: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub labels: Vec<AnchorLabel>,
}

impl Assignment {
    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.labels.iter().enumerate().filter_map(|(i, l)| match l {
            AnchorLabel::Positive { gt } => Some((i, *gt)),
            _ => None,
        })
    }

    pub fn n_pos(&self) -> usize {
        self.positives().count()
    }
}

/// BEV-IoU matching of anchors to same-class ground truths.
pub fn assign_targets(
    grid: &AnchorGrid,
    gts: &[(Box3D, ObjectClass)],
    thresholds: impl Fn(ObjectClass) -> MatchThresholds,
) -> Assignment {
    let n = grid.len();
    let mut best_iou = vec![0.0f64; n];
    let mut best_gt = vec![usize::MAX; n];
    let max_anchor_diag = grid
        .config
        .priors
        .iter()
        .map(|p| math::hypot(p.w, p.l))
        .fold(0.0, f64::max);
    let mut forced: Vec<Option<(usize, f64)>> = vec![None; gts.len()];
    for (g, (gt, class)) in gts.iter().enumerate() {
        let radius = (gt.diagonal() + max_anchor_diag) / 2.0;
        for idx in grid.anchors_near(gt.x, gt.y, radius) {
            let (anchor, ac) = grid.anchor(idx);
            if ac != *class {
                continue;
            }
            let iou = bev_iou(gt, &anchor);
            if iou <= 0.0 {
                continue;
            }
            if iou > best_iou[idx] {
                best_iou[idx] = iou;
                best_gt[idx] = g;
            }
            match forced[g] {
                Some((_, b)) if b >= iou => {}
                _ => forced[g] = Some((idx, iou)),
            }
        }
    }
    let mut labels: Vec<AnchorLabel> = (0..n)
        .map(|idx| {
            let (_, _, a) = grid.unflatten(idx);
            let t = thresholds(grid.class_of(a));
            let iou = best_iou[idx];
            if best_gt[idx] != usize::MAX && iou >= t.pos {
                AnchorLabel::Positive { gt: best_gt[idx] }
            } else if iou < t.neg {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignored
            }
        })
        .collect();
    for (g, f) in forced.iter().enumerate() {
        if let Some((idx, _)) = f {
            labels[*idx] = AnchorLabel::Positive { gt: g };
        }
    }
    Assignment { labels }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: Box3D,
    pub class: ObjectClass,
    pub score: f64,
    /// Flat anchor index the detection was decoded from.
    pub anchor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectConfig {
    pub score_thresh: f64,
    pub nms_iou: f64,
    /// Candidates kept per class before NMS.
    pub pre_nms_top_k: usize,
    pub max_detections: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            score_thresh: 0.5,
            nms_iou: 0.1,
            pre_nms_top_k: 4096,
            max_detections: 256,
        }
    }
}

fn score_order(a: &Detection, b: &Detection) -> core::cmp::Ordering {
    b.score.total_cmp(&a.score).then(a.anchor.cmp(&b.anchor))
}

/// Greedy NMS: highest score first, ties broken by lower anchor index.
pub fn nms(mut dets: Vec<Detection>, iou_thresh: f64) -> Vec<Detection> {
    dets.sort_by(score_order);
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        if kept
            .iter()
            .all(|k| k.class != d.class || bev_iou(&k.bbox, &d.bbox) <= iou_thresh)
        {
            kept.push(d);
        }
    }
    kept
}

pub fn detect(out: &HeadOutput, grid: &AnchorGrid, cfg: &DetectConfig) -> Result<Vec<Detection>> {
    let per = grid.per_cell();
    let (h, w) = out.spatial();
    if (h, w) != (grid.grid_h, grid.grid_w)
        || out.channel_counts() != (per * ObjectClass::CLS_COLUMNS, per * 7, per * 2)
    {
        return Err(Error::shape(
            "detect",
            alloc::format!(
                "head maps {:?} over {h}x{w}, anchor grid {}x{} with {per} anchors per cell",
                out.channel_counts(),
                grid.grid_h,
                grid.grid_w
            ),
        ));
    }
    let p = cfg.score_thresh.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let logit_thresh = math::ln(p / (1.0 - p));
    let mut per_class: Vec<Vec<Detection>> = vec![Vec::new(); ObjectClass::ALL.len()];
    for a in 0..per {
        let class = grid.class_of(a);
        let plane = out.cls.plane(a * ObjectClass::CLS_COLUMNS + class.index());
        for (cell, &logit) in plane.iter().enumerate() {
            if (logit as f64) < logit_thresh {
                continue;
            }
            let (iy, ix) = (cell / w, cell % w);
            let idx = grid.flatten(iy, ix, a);
            let (anchor, _) = grid.anchor(idx);
            let mut d = [0.0; 7];
            for (j, v) in d.iter_mut().enumerate() {
                *v = out.reg.get(a * 7 + j, iy, ix) as f64;
            }
            let flipped = out.dir.get(a * 2 + 1, iy, ix) > out.dir.get(a * 2, iy, ix);
            let bbox = decode_deltas(&d, &anchor, flipped);
            if !bbox.is_valid() {
                continue;
            }
            per_class[class.index()].push(Detection {
                bbox,
                class,
                score: math::sigmoid(logit as f64),
                anchor: idx,
            });
        }
    }
    let mut all = Vec::new();
    for mut c in per_class {
        c.sort_by(score_order);
        c.truncate(cfg.pre_nms_top_k);
        all.extend(nms(c, cfg.nms_iou));
    }
    all.sort_by(score_order);
    all.truncate(cfg.max_detections);
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, w: f64, l: f64, theta: f64) -> Box3D {
        Box3D::new(x, y, 0.8, w, l, 1.6, theta).unwrap()
    }

    #[test]
    fn encode_identity_and_examples() {
        let a = bx(1.0, 2.0, 3.0, 4.0, 0.3);
        assert_eq!(encode_deltas(&a, &a), [0.0; 7]);
        let mut g = a;
        g.x += 1.0;
        assert!((encode_deltas(&g, &a)[0] - 0.2).abs() < 1e-15);
        let mut g = a;
        g.theta = a.theta + PI / 2.0;
        assert!((encode_deltas(&g, &a)[6] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn decode_examples() {
        let a = bx(1.0, 2.0, 3.0, 4.0, 0.3);
        assert_eq!(decode_deltas(&[0.0; 7], &a, false), a);
        let d = [0.0, 0.0, 0.0, core::f64::consts::LN_2, 0.0, 0.0, 0.0];
        assert!((decode_deltas(&d, &a, false).w - 6.0).abs() < 1e-12);
        let flipped = decode_deltas(&[0.0; 7], &a, true);
        assert!((math::normalize_angle(flipped.theta - a.theta) - PI).abs() < 1e-12);
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(&[0.0; 7]).0, 0.0);
        let mut d = [0.0; 7];
        d[2] = 0.5;
        assert!((smooth_l1(&d).0 - 0.125).abs() < 1e-15);
        d[2] = 2.0;
        assert!((smooth_l1(&d).0 - 1.5).abs() < 1e-15);
        assert_eq!(smooth_l1(&d).1[2], 1.0);
    }

    #[test]
    fn focal_examples() {
        assert_eq!(focal_cls_loss(1.0, FOCAL_ALPHA, FOCAL_GAMMA).value, 0.0);
        let f = focal_cls_loss(0.5, FOCAL_ALPHA, FOCAL_GAMMA);
        assert!((f.value - 0.25 * 0.25 * core::f64::consts::LN_2).abs() < 1e-15);
        assert!((f.value - 0.043322).abs() < 1e-6);
        let z = focal_cls_loss(0.0, FOCAL_ALPHA, FOCAL_GAMMA);
        assert!(z.clamped && z.value.is_finite() && z.value > 0.0);
        assert!(!f.clamped);
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights::default();
        assert_eq!(total_loss(0.0, 0.0, 0.0, 1, &w).value, 0.0);
        assert!((total_loss(1.0, 1.0, 1.0, 1, &w).value - 3.2).abs() < 1e-12);
        assert!((total_loss(1.0, 1.0, 1.0, 2, &w).value - 1.6).abs() < 1e-12);
        let s = total_loss(1.0, 1.0, 1.0, 0, &w);
        assert!(s.skipped && s.value == 0.0);
    }

    #[test]
    fn direction_loss_values() {
        let (l, g) = direction_loss([0.0, 0.0], 1);
        assert!((l - core::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(g, [0.5, -0.5]);
        let (l, _) = direction_loss([800.0, -800.0], 0);
        assert!(l.abs() < 1e-12);
    }

    fn small_grid() -> AnchorGrid {
        let region = Region::new((0.0, 8.0), (0.0, 8.0), (-1.0, 3.0)).unwrap();
        AnchorGrid::new(AnchorConfig::default(), 8, 8, &region, 1.0).unwrap()
    }

    #[test]
    fn grid_indexing() {
        let g = small_grid();
        assert_eq!(g.per_cell(), 4);
        let idx = g.flatten(3, 5, 2);
        assert_eq!(g.unflatten(idx), (3, 5, 2));
        assert_eq!(g.class_of(2), ObjectClass::Pedestrian);
        let (a, c) = g.anchor(g.flatten(0, 0, 1));
        assert_eq!(c, ObjectClass::Car);
        assert_eq!((a.x, a.y, a.z), (0.5, 0.5, 0.8));
        assert!((a.theta - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn assignment_no_gts_all_negative() {
        let g = small_grid();
        let asg = assign_targets(&g, &[], MatchThresholds::for_class);
        assert!(asg.labels.iter().all(|l| *l == AnchorLabel::Negative));
    }

    #[test]
    fn assignment_identical_anchor_is_positive() {
        let g = small_grid();
        let idx = g.flatten(4, 3, 0);
        let (a, c) = g.anchor(idx);
        let asg = assign_targets(&g, &[(a, c)], MatchThresholds::for_class);
        assert_eq!(asg.labels[idx], AnchorLabel::Positive { gt: 0 });
    }

    #[test]
    fn assignment_matches_exhaustive_oracle() {
        let g = small_grid();
        let gts = [
            (bx(2.2, 2.9, 1.8, 4.2, 0.1), ObjectClass::Car),
            (bx(6.1, 6.4, 0.6, 0.8, 1.2), ObjectClass::Pedestrian),
        ];
        let asg = assign_targets(&g, &gts, MatchThresholds::for_class);
        // Exhaustive recomputation over every anchor x gt pair.
        let mut best = vec![(0.0f64, usize::MAX); g.len()];
        let mut forced = [(usize::MAX, 0.0f64); 2];
        for idx in 0..g.len() {
            let (a, c) = g.anchor(idx);
            for (gi, (gt, gc)) in gts.iter().enumerate() {
                if *gc != c {
                    continue;
                }
                let iou = bev_iou(gt, &a);
                if iou > best[idx].0 {
                    best[idx] = (iou, gi);
                }
                if iou > forced[gi].1 {
                    forced[gi] = (idx, iou);
                }
            }
        }
        for idx in 0..g.len() {
            let t = MatchThresholds::for_class(g.class_of(g.unflatten(idx).2));
            let mut expect = if best[idx].0 >= t.pos {
                AnchorLabel::Positive { gt: best[idx].1 }
            } else if best[idx].0 < t.neg {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignored
            };
            for (gi, f) in forced.iter().enumerate() {
                if f.0 == idx {
                    expect = AnchorLabel::Positive { gt: gi };
                }
            }
            assert_eq!(asg.labels[idx], expect, "anchor {idx}");
        }
        assert!(asg.n_pos() >= 2);
    }

    #[test]
    fn detect_empty_map() {
        let g = small_grid();
        let mut out = HeadOutput::zeros(4, 8, 8);
        out.cls.data_mut().fill(-40.0);
        assert!(detect(&out, &g, &DetectConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn detect_single_strong_anchor() {
        let g = small_grid();
        let mut out = HeadOutput::zeros(4, 8, 8);
        out.cls.data_mut().fill(-40.0);
        let (iy, ix, a) = (2, 6, 0);
        out.cls.set(a * 3, iy, ix, 5.0);
        let d = [0.1, -0.2, 0.05, 0.1, -0.1, 0.0, 0.5];
        for (j, v) in d.iter().enumerate() {
            out.reg.set(a * 7 + j, iy, ix, *v as f32);
        }
        out.dir.set(a * 2 + 1, iy, ix, 1.0);
        let dets = detect(&out, &g, &DetectConfig::default()).unwrap();
        assert_eq!(dets.len(), 1);
        let (anchor, _) = g.anchor(g.flatten(iy, ix, a));
        let df: [f64; 7] = d.map(|v| v as f32 as f64);
        let expect = decode_deltas(&df, &anchor, true);
        assert_eq!(dets[0].bbox, expect);
        assert_eq!(dets[0].class, ObjectClass::Car);
        assert!((dets[0].score - math::sigmoid(5.0)).abs() < 1e-12);
    }

    #[test]
    fn nms_suppresses_lower_score() {
        let a = Detection {
            bbox: bx(0.0, 0.0, 1.8, 4.4, 0.0),
            class: ObjectClass::Car,
            score: 0.9,
            anchor: 5,
        };
        let mut b = a;
        b.bbox.x = 0.3;
        b.score = 0.8;
        b.anchor = 1;
        let kept = nms(vec![b, a], 0.5);
        assert_eq!(kept, vec![a]);
        let mut c = b;
        c.class = ObjectClass::Pedestrian;
        assert_eq!(nms(vec![a, c], 0.5).len(), 2);
    }

    #[test]
    fn nms_tie_prefers_lower_anchor() {
        let a = Detection {
            bbox: bx(0.0, 0.0, 1.8, 4.4, 0.0),
            class: ObjectClass::Car,
            score: 0.7,
            anchor: 9,
        };
        let mut b = a;
        b.anchor = 3;
        assert_eq!(nms(vec![a, b], 0.5)[0].anchor, 3);
    }
}

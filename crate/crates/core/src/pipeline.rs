//! End-to-end model: per-node encoding, fusion on the central node, backbone,
//! head and decoding. Also provides the [`NodeWorkload`] adaptor the network
//! simulator drives.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{cfb_forward, BackboneConfig, BackboneWeights};
use crate::costmodel::FeatureKind;
use crate::eval::bev_iou;
use crate::fusion::{fuse_nodes, scatter, FusedFeatures, TsfParams};
use crate::geometry::{geofence, to_global, Frame, PointCloud, Region};
use crate::head::{
    decode_deltas, detect, direction_target, encode_deltas, head_forward, AnchorConfig, AnchorGrid, Box3D,
    DetectConfig, Detection, HeadOutput, HeadParams, ObjectClass,
};
use crate::netsim::{FeaturePayload, NodeDescriptor, NodeWorkload};
use crate::nn::{conv_output_size, Tensor3};
use crate::pillars::{lfe_encode, voxelize, EncoderParams, PillarConfig, PillarFeatures};
use crate::{Error, NodeId, Result, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub region: Region,
    pub pillars: PillarConfig,
    pub backbone: BackboneConfig,
    pub anchors: AnchorConfig,
    /// Anchor cell pitch in meters. Twice the pillar size: the cross-stream
    /// convolution halves the grid.
    pub anchor_stride: f64,
    pub detect: DetectConfig,
}

impl ModelConfig {
    /// Full-size model: 64 channels, 512 x 1024 pseudo-image, 256 x 512 head grid.
    pub fn reference() -> Self {
        let pillars = PillarConfig::reference();
        ModelConfig {
            region: Region::reference(),
            anchor_stride: 2.0 * pillars.voxel_dx,
            pillars,
            backbone: BackboneConfig::reference(),
            anchors: AnchorConfig::default(),
            detect: DetectConfig::default(),
        }
    }

    /// Same topology with every channel count divided by 16 and 7.36 m
    /// pillars on a 16 x 32 grid. Fast enough for exhaustive checks.
    pub fn reduced() -> Self {
        let pillars = PillarConfig {
            voxel_dx: 7.36,
            voxel_dy: 7.36,
            voxel_dz: 4.0,
            max_pillars: 512,
            max_points_per_pillar: 32,
            grid_w: 32,
            grid_h: 16,
            channels: 4,
        };
        ModelConfig {
            region: Region::reference(),
            anchor_stride: 2.0 * pillars.voxel_dx,
            pillars,
            backbone: BackboneConfig::scaled(16, 8, 16),
            anchors: AnchorConfig::default(),
            detect: DetectConfig::default(),
        }
    }

    /// `(C, H, W)` of every node's scattered pseudo-image.
    pub fn pseudo_image_shape(&self) -> (usize, usize, usize) {
        (self.pillars.channels, self.pillars.grid_h, self.pillars.grid_w)
    }

    pub fn fused_shape(&self) -> Result<(usize, usize, usize)> {
        let out = |n| {
            conv_output_size(n, TsfParams::KERNEL, TsfParams::STRIDE, TsfParams::PADDING)
                .ok_or_else(|| Error::Config(format!("pillar grid dimension {n} is too small")))
        };
        Ok((
            self.pillars.channels,
            out(self.pillars.grid_h)?,
            out(self.pillars.grid_w)?,
        ))
    }

    pub fn validate(&self) -> Result<()> {
        self.region.validate()?;
        self.pillars.validate()?;
        let fused = self.fused_shape()?;
        if fused != self.backbone.input {
            return Err(Error::Config(format!(
                "fused features are {fused:?}, backbone expects {:?}",
                self.backbone.input
            )));
        }
        let (_, h, w) = self.backbone.output_shape()?;
        if (h, w) != (fused.1, fused.2) {
            return Err(Error::Config(format!(
                "backbone output grid {h}x{w} differs from the fused grid {}x{}",
                fused.1, fused.2
            )));
        }
        let covers = |cells: usize, size: f64, extent: f64| cells as f64 * size + 1e-9 >= extent;
        if !covers(self.pillars.grid_w, self.pillars.voxel_dx, self.region.extent_x())
            || !covers(self.pillars.grid_h, self.pillars.voxel_dy, self.region.extent_y())
        {
            return Err(Error::Config("pillar grid does not cover the region".into()));
        }
        AnchorGrid::new(self.anchors.clone(), h, w, &self.region, self.anchor_stride)?;
        Ok(())
    }

    pub fn anchor_grid(&self) -> Result<AnchorGrid> {
        let (_, h, w) = self.fused_shape()?;
        AnchorGrid::new(self.anchors.clone(), h, w, &self.region, self.anchor_stride)
    }

    /// Named output shape of every stage, computed without running the model.
    pub fn shape_trace(&self) -> Result<Vec<(String, (usize, usize, usize))>> {
        self.validate()?;
        let c = self.pillars.channels;
        let mut out = Vec::new();
        out.push(("lfe".into(), (self.pillars.max_pillars, c, 1)));
        out.push(("scatter".into(), self.pseudo_image_shape()));
        out.push(("tsf".into(), self.fused_shape()?));
        out.extend(self.backbone.trace_shapes()?);
        let (_, h, w) = self.fused_shape()?;
        let a = self.anchors.anchors_per_cell();
        out.push(("head.cls".into(), (a * ObjectClass::CLS_COLUMNS, h, w)));
        out.push(("head.reg".into(), (a * 7, h, w)));
        out.push(("head.dir".into(), (a * 2, h, w)));
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub lfe_vehicle: EncoderParams,
    pub lfe_infrastructure: EncoderParams,
    pub tsf: TsfParams,
    pub backbone: BackboneWeights,
    pub head: HeadParams,
}

impl ModelWeights {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let c = cfg.pillars.channels;
        ModelWeights {
            lfe_vehicle: EncoderParams::zeros(Stream::Vehicle, c),
            lfe_infrastructure: EncoderParams::zeros(Stream::Infrastructure, c),
            tsf: TsfParams::zeros(c),
            backbone: BackboneWeights::zeros(&cfg.backbone),
            head: HeadParams::zeros(cfg.backbone.output_channels(), cfg.anchors.anchors_per_cell()),
        }
    }

    /// Deterministic random weights. Each part draws from its own stream of `seed`.
    pub fn seeded(cfg: &ModelConfig, seed: u64) -> Self {
        let c = cfg.pillars.channels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let tsf = TsfParams::seeded(&mut rng, c);
        rng.set_stream(2);
        let head = HeadParams::seeded(&mut rng, cfg.backbone.output_channels(), cfg.anchors.anchors_per_cell());
        ModelWeights {
            lfe_vehicle: EncoderParams::seeded(Stream::Vehicle, c, seed),
            lfe_infrastructure: EncoderParams::seeded(Stream::Infrastructure, c, seed.wrapping_add(1)),
            tsf,
            backbone: BackboneWeights::seeded(&cfg.backbone, seed.wrapping_add(2)),
            head,
        }
    }

    pub fn encoder(&self, stream: Stream) -> &EncoderParams {
        match stream {
            Stream::Vehicle => &self.lfe_vehicle,
            Stream::Infrastructure => &self.lfe_infrastructure,
        }
    }

    /// Checks every tensor against the shapes `cfg` implies.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let c = cfg.pillars.channels;
        for s in [Stream::Vehicle, Stream::Infrastructure] {
            let e = self.encoder(s);
            if e.stream() != s || e.channels() != c {
                return Err(Error::Config(format!(
                    "{s} encoder is a {} encoder with {} channels, expected {c}",
                    e.stream(),
                    e.channels()
                )));
            }
        }
        let k = &self.tsf.conv;
        if (k.cout, k.cin, k.k) != (c, 2 * c, TsfParams::KERNEL) || self.tsf.norm.channels() != c {
            return Err(Error::shape(
                "tsf weights",
                format!("kernel {}x{}x{}, expected {c}x{}x3", k.cout, k.cin, k.k, 2 * c),
            ));
        }
        self.backbone.validate(&cfg.backbone)?;
        let a = cfg.anchors.anchors_per_cell();
        let cin = cfg.backbone.output_channels();
        let h = &self.head;
        let expect = [
            ("head.cls", &h.cls, a * ObjectClass::CLS_COLUMNS),
            ("head.reg", &h.reg, a * 7),
            ("head.dir", &h.dir, a * 2),
        ];
        for (name, k, cout) in expect {
            if (k.cout, k.cin, k.k) != (cout, cin, 1) {
                return Err(Error::shape(
                    "head weights",
                    format!("{name} is {}x{}x{}, expected {cout}x{cin}x1", k.cout, k.cin, k.k),
                ));
            }
        }
        Ok(())
    }
}

/// Every intermediate tensor of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub pillars: Vec<PillarFeatures>,
    pub fused: Tensor3,
    pub backbone: Tensor3,
    pub head: HeadOutput,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub weights: ModelWeights,
    grid: AnchorGrid,
}

impl Model {
    pub fn new(config: ModelConfig, weights: ModelWeights) -> Result<Self> {
        config.validate()?;
        weights.validate(&config)?;
        let grid = config.anchor_grid()?;
        Ok(Model { config, weights, grid })
    }

    pub fn anchor_grid(&self) -> &AnchorGrid {
        &self.grid
    }

    /// Node-side stage: sensor frame to global, geo-fence, pillars, encoder.
    pub fn encode_node(&self, node: &NodeDescriptor, cloud: &PointCloud) -> Result<PillarFeatures> {
        match cloud.frame() {
            Frame::Sensor(id) if id == node.id => {}
            Frame::Sensor(_) => {
                return Err(Error::FrameMismatch {
                    expected: "this node's sensor",
                    found: "another node's sensor",
                })
            }
            Frame::Global => {
                return Err(Error::FrameMismatch {
                    expected: "sensor",
                    found: "global",
                })
            }
        }
        let global = to_global(cloud, &node.pose)?;
        let fenced = geofence(&global, &self.config.region)?;
        let vox = voxelize(&fenced, &self.config.pillars, &self.config.region)?;
        lfe_encode(
            &vox.pillars,
            self.weights.encoder(node.kind),
            &self.config.pillars,
            &self.config.region,
            node.id,
        )
    }

    pub fn fuse(&self, features: &[PillarFeatures]) -> Result<FusedFeatures> {
        let shape = self.config.pseudo_image_shape();
        let maps = features
            .iter()
            .map(|f| {
                if f.channels != shape.0 {
                    return Err(Error::shape(
                        "fuse",
                        format!("node {} sent {} channels, expected {}", f.node, f.channels, shape.0),
                    ));
                }
                scatter(f, shape.1, shape.2)
            })
            .collect::<Result<Vec<_>>>()?;
        fuse_nodes(&maps, shape, &self.weights.tsf)
    }

    pub fn backbone(&self, fused: &FusedFeatures) -> Result<Tensor3> {
        cfb_forward(fused.tensor(), &self.config.backbone, &self.weights.backbone)
    }

    pub fn head(&self, features: &Tensor3) -> Result<HeadOutput> {
        head_forward(features, &self.weights.head)
    }

    pub fn detect(&self, out: &HeadOutput) -> Result<Vec<Detection>> {
        detect(out, &self.grid, &self.config.detect)
    }

    /// Central-node stage on features already received.
    pub fn fuse_detect(&self, features: &[PillarFeatures]) -> Result<Vec<Detection>> {
        Ok(self.forward_features(features)?.detections)
    }

    pub fn forward_features(&self, features: &[PillarFeatures]) -> Result<ForwardTrace> {
        let fused = self.fuse(features)?;
        let backbone = self.backbone(&fused)?;
        let head = self.head(&backbone)?;
        let detections = self.detect(&head)?;
        Ok(ForwardTrace {
            pillars: features.to_vec(),
            fused: fused.into_tensor(),
            backbone,
            head,
            detections,
        })
    }

    /// Full pass over `(node, sensor-frame cloud)` pairs.
    pub fn forward(&self, inputs: &[(NodeDescriptor, PointCloud)]) -> Result<ForwardTrace> {
        let features = inputs
            .iter()
            .map(|(n, c)| self.encode_node(n, c))
            .collect::<Result<Vec<_>>>()?;
        self.forward_features(&features)
    }
}

/// Stand-in for a trained head. Marks each target that is covered by at
/// least `min_cells` occupied pillar cells, writing a confident logit, the
/// exact regression target and the direction target at the best-matching
/// anchor. Detections then go through the normal decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleHead {
    pub min_cells: usize,
    pub logit: f32,
}

impl Default for OracleHead {
    fn default() -> Self {
        OracleHead {
            min_cells: 2,
            logit: 8.0,
        }
    }
}

impl OracleHead {
    /// Occupied pillar cells (union over `features`) whose centre lies in the
    /// BEV footprint of `target` grown by one pillar size.
    pub fn covered_cells(&self, target: &Box3D, features: &[PillarFeatures], cfg: &ModelConfig) -> usize {
        let grown = Box3D {
            w: target.w + cfg.pillars.voxel_dy,
            l: target.l + cfg.pillars.voxel_dx,
            ..*target
        };
        let cells: BTreeSet<(u32, u32)> = features.iter().flat_map(|f| f.cells.iter().copied()).collect();
        cells
            .into_iter()
            .filter(|&(ix, iy)| {
                let (x, y) = cfg.pillars.cell_center(ix, iy, &cfg.region);
                grown.contains(x, y, grown.z)
            })
            .count()
    }

    /// Anchor of the target's class with the highest BEV IoU; ties go to the
    /// lower index.
    pub fn best_anchor(grid: &AnchorGrid, target: &Box3D, class: ObjectClass) -> Option<usize> {
        let fx = ((target.x - grid.origin_x) / grid.stride - 0.5).round() as isize;
        let fy = ((target.y - grid.origin_y) / grid.stride - 0.5).round() as isize;
        let mut best: Option<(f64, usize)> = None;
        for iy in fy - 1..=fy + 1 {
            for ix in fx - 1..=fx + 1 {
                if iy < 0 || ix < 0 || iy as usize >= grid.grid_h || ix as usize >= grid.grid_w {
                    continue;
                }
                for a in 0..grid.per_cell() {
                    if grid.class_of(a) != class {
                        continue;
                    }
                    let idx = grid.flatten(iy as usize, ix as usize, a);
                    let iou = bev_iou(&grid.anchor(idx).0, target);
                    if best.is_none_or(|(b, _)| iou > b) {
                        best = Some((iou, idx));
                    }
                }
            }
        }
        best.map(|(_, i)| i)
    }

    pub fn output(
        &self,
        cfg: &ModelConfig,
        grid: &AnchorGrid,
        features: &[PillarFeatures],
        targets: &[(Box3D, ObjectClass)],
    ) -> HeadOutput {
        let per = grid.per_cell();
        let mut out = HeadOutput::zeros(per, grid.grid_h, grid.grid_w);
        out.cls.data_mut().fill(-self.logit);
        for (bbox, class) in targets {
            if self.covered_cells(bbox, features, cfg) < self.min_cells {
                continue;
            }
            let Some(idx) = Self::best_anchor(grid, bbox, *class) else {
                continue;
            };
            let (iy, ix, a) = grid.unflatten(idx);
            let (anchor, _) = grid.anchor(idx);
            out.cls
                .set(a * ObjectClass::CLS_COLUMNS + class.index(), iy, ix, self.logit);
            for (j, d) in encode_deltas(bbox, &anchor).iter().enumerate() {
                out.reg.set(a * 7 + j, iy, ix, *d as f32);
            }
            let t = direction_target(bbox, &anchor);
            out.dir.set(a * 2 + t, iy, ix, 1.0);
        }
        out
    }

    /// Box the decoder recovers for `target` when its anchor fires.
    pub fn expected_box(grid: &AnchorGrid, target: &Box3D, class: ObjectClass) -> Option<Box3D> {
        let idx = Self::best_anchor(grid, target, class)?;
        let (anchor, _) = grid.anchor(idx);
        let d = encode_deltas(target, &anchor).map(|v| v as f32 as f64);
        Some(decode_deltas(&d, &anchor, direction_target(target, &anchor) == 1))
    }
}

/// Which head produces the central node's detections.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadMode {
    Learned,
    /// Oracle head over the per-frame targets.
    Oracle {
        head: OracleHead,
        targets: Vec<Vec<(Box3D, ObjectClass)>>,
    },
}

/// Drives a [`Model`] from per-frame sensor clouds inside the simulator.
pub struct PipelineWorkload<'a> {
    model: &'a Model,
    nodes: Vec<NodeId>,
    /// `clouds[frame][node index]`, in the order of `nodes`.
    clouds: Vec<Vec<PointCloud>>,
    head: HeadMode,
    /// Every forward pass the central node ran, in order.
    pub traces: Vec<ForwardTrace>,
    pub keep_traces: bool,
}

impl<'a> PipelineWorkload<'a> {
    pub fn new(model: &'a Model, nodes: Vec<NodeId>, clouds: Vec<Vec<PointCloud>>, head: HeadMode) -> Result<Self> {
        if clouds.iter().any(|f| f.len() != nodes.len()) {
            return Err(Error::Config(format!(
                "every frame needs one cloud per node ({} nodes)",
                nodes.len()
            )));
        }
        Ok(PipelineWorkload {
            model,
            nodes,
            clouds,
            head,
            traces: Vec::new(),
            keep_traces: false,
        })
    }

    fn cloud(&self, node: NodeId, frame: u32) -> Result<&PointCloud> {
        let i = self
            .nodes
            .iter()
            .position(|&n| n == node)
            .ok_or_else(|| Error::Topology(format!("no clouds for node {node}")))?;
        self.clouds
            .get(frame as usize)
            .map(|f| &f[i])
            .ok_or_else(|| Error::Config(format!("no clouds for frame {frame}")))
    }
}

impl NodeWorkload for PipelineWorkload<'_> {
    fn channels(&self) -> usize {
        self.model.config.pillars.channels
    }

    fn encode(&mut self, node: &NodeDescriptor, frame: u32) -> Result<PillarFeatures> {
        let cloud = self.cloud(node.id, frame)?;
        self.model.encode_node(node, cloud)
    }

    fn fuse_detect(
        &mut self,
        _central: &NodeDescriptor,
        features: &[PillarFeatures],
        frame: u32,
    ) -> Result<Vec<Detection>> {
        let mut trace = self.model.forward_features(features)?;
        if let HeadMode::Oracle { head, targets } = &self.head {
            let t = targets.get(frame as usize).map(Vec::as_slice).unwrap_or(&[]);
            trace.head = head.output(&self.model.config, &self.model.grid, features, t);
            trace.detections = self.model.detect(&trace.head)?;
        }
        let dets = trace.detections.clone();
        if self.keep_traces {
            self.traces.push(trace);
        }
        Ok(dets)
    }

    fn baseline_payload(&mut self, kind: FeatureKind, node: &NodeDescriptor, frame: u32) -> Result<(u64, u64)> {
        let cloud = self.cloud(node.id, frame)?;
        let c = self.model.config.pillars.channels;
        Ok(match kind {
            FeatureKind::Shallow => {
                let pf = self.model.encode_node(node, cloud)?;
                (FeaturePayload::size(pf.len(), c), pf.len() as u64)
            }
            FeatureKind::Early => (16 * cloud.len() as u64, cloud.len() as u64),
            FeatureKind::Dense => {
                let (_, h, w) = self.model.config.backbone.output_shape()?;
                let cells = (h * w) as u64;
                let ch = self.model.config.backbone.output_channels() as u64;
                let raw = 4 * ch * cells;
                ((raw as f64 / crate::costmodel::DENSE_COMPRESSION) as u64, ch * cells)
            }
            FeatureKind::Late => {
                let fused = self.model.fuse(&[self.model.encode_node(node, cloud)?])?;
                let head = self.model.head(&self.model.backbone(&fused)?)?;
                let n = self.model.detect(&head)?.len();
                (crate::netsim::ResultPayload::size(n), n as u64)
            }
        })
    }
}

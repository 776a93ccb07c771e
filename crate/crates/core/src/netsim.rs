//! Lock-step message-passing simulation of a cooperative deployment with
//! exact byte accounting.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::costmodel::{self, CpCondition, FeatureKind};
use crate::geometry::{Region, SlaP};
use crate::head::{Box3D, Detection, ObjectClass};
use crate::node::{NodeId, Stream};
use crate::pillars::PillarFeatures;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Central,
    Slave,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ComputeClass {
    /// Central computing unit: runs fusion, backbone and head.
    Ccu,
    /// Light computing unit: runs pre-processing and the pillar encoder.
    Lcu,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeDescriptor {
    pub id: NodeId,
    pub role: Role,
    pub kind: Stream,
    pub pose: SlaP,
    pub compute: ComputeClass,
}

impl NodeDescriptor {
    pub fn new(id: u32, role: Role, kind: Stream, pose: SlaP) -> Self {
        NodeDescriptor {
            id: NodeId(id),
            role,
            kind,
            pose,
            compute: match role {
                Role::Central => ComputeClass::Ccu,
                Role::Slave => ComputeClass::Lcu,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Shallow pillar features to one central node.
    Vinet,
    /// Raw point clouds.
    Early,
    /// Post-backbone feature maps.
    Dense,
    /// Detection lists.
    Late,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Vinet, Scheme::Early, Scheme::Dense, Scheme::Late];

    pub fn feature(self) -> FeatureKind {
        match self {
            Scheme::Vinet => FeatureKind::Shallow,
            Scheme::Early => FeatureKind::Early,
            Scheme::Dense => FeatureKind::Dense,
            Scheme::Late => FeatureKind::Late,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Vinet => "vinet",
            Scheme::Early => "early",
            Scheme::Dense => "dense",
            Scheme::Late => "late",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Scheme::ALL.into_iter().find(|x| x.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Egocentric,
    Holistic,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Egocentric => "egocentric",
            Mode::Holistic => "holistic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "egocentric" => Some(Mode::Egocentric),
            "holistic" => Some(Mode::Holistic),
            _ => None,
        }
    }

    pub fn condition(self, n: usize) -> CpCondition {
        match self {
            Mode::Egocentric => CpCondition::Egocentric(n),
            Mode::Holistic => CpCondition::Holistic(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageKind {
    GlobalMeta,
    Feature,
    Result,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::GlobalMeta => "GlobalMeta",
            MessageKind::Feature => "Feature",
            MessageKind::Result => "Result",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Destination {
    Node(NodeId),
    Broadcast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Message {
    pub src: NodeId,
    pub dst: Destination,
    pub kind: MessageKind,
    /// Exact serialized payload size.
    pub payload_bytes: u64,
    /// Size under the fixed max-pillar bound (feature messages of the shallow
    /// scheme); equal to `payload_bytes` otherwise.
    pub nominal_bytes: u64,
    /// Payload unit count: pillars, points, cells or detections.
    pub units: u64,
    pub frame: u32,
    /// Simulated send time in microseconds.
    pub timestamp_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Totals {
    pub messages: u64,
    pub bytes: u64,
}

impl Totals {
    fn add(&mut self, m: &Message) {
        self.messages += 1;
        self.bytes += m.payload_bytes;
    }
}

/// Append-only message record.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MessageLog {
    entries: Vec<Message>,
}

impl MessageLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, m: Message) {
        self.entries.push(m);
    }

    pub fn entries(&self) -> &[Message] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn totals(&self, kind: Option<MessageKind>) -> Totals {
        let mut t = Totals::default();
        for m in self.entries.iter().filter(|m| kind.is_none_or(|k| m.kind == k)) {
            t.add(m);
        }
        t
    }

    pub fn nominal_bytes(&self, kind: MessageKind) -> u64 {
        self.entries
            .iter()
            .filter(|m| m.kind == kind)
            .map(|m| m.nominal_bytes)
            .sum()
    }

    pub fn per_frame(&self) -> BTreeMap<u32, BTreeMap<MessageKind, Totals>> {
        let mut out: BTreeMap<u32, BTreeMap<MessageKind, Totals>> = BTreeMap::new();
        for m in &self.entries {
            out.entry(m.frame).or_default().entry(m.kind).or_default().add(m);
        }
        out
    }

    /// Entries from index `start` onward.
    pub fn since(&self, start: usize) -> &[Message] {
        &self.entries[start.min(self.entries.len())..]
    }
}

impl Ord for MessageKind {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        (*self as u8).cmp(&(*other as u8))
    }
}

impl PartialOrd for MessageKind {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Sparse pillar features on the wire: per pillar `u16 ix, u16 iy` then
/// `C` little-endian `f32` values. No header; the channel count travels in
/// the session metadata.
pub struct FeaturePayload;

impl FeaturePayload {
    pub fn size(pillars: usize, channels: usize) -> u64 {
        (pillars * (4 + 4 * channels)) as u64
    }

    pub fn encode(pf: &PillarFeatures) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(Self::size(pf.len(), pf.channels) as usize);
        for (idx, &(ix, iy)) in pf.cells.iter().enumerate() {
            let ix = u16::try_from(ix).map_err(|_| Error::Payload("cell index exceeds u16"))?;
            let iy = u16::try_from(iy).map_err(|_| Error::Payload("cell index exceeds u16"))?;
            out.extend_from_slice(&ix.to_le_bytes());
            out.extend_from_slice(&iy.to_le_bytes());
            for v in pf.feature(idx) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], channels: usize, node: NodeId, stream: Stream) -> Result<PillarFeatures> {
        let rec = 4 + 4 * channels;
        if bytes.len() % rec != 0 {
            return Err(Error::Payload(
                "feature payload length is not a whole number of pillars",
            ));
        }
        let p = bytes.len() / rec;
        let mut cells = Vec::with_capacity(p);
        let mut features = Vec::with_capacity(p * channels);
        for chunk in bytes.chunks_exact(rec) {
            cells.push((
                u16::from_le_bytes([chunk[0], chunk[1]]) as u32,
                u16::from_le_bytes([chunk[2], chunk[3]]) as u32,
            ));
            features.extend(
                chunk[4..]
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            );
        }
        Ok(PillarFeatures {
            node,
            stream,
            channels,
            cells,
            features,
        })
    }
}

/// Session metadata broadcast once by the central node.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMeta {
    pub channels: u32,
    pub region: Region,
    pub nodes: Vec<NodeDescriptor>,
}

const META_NODE_BYTES: usize = 4 + 3 + 6 * 8;

impl GlobalMeta {
    pub fn size(n_nodes: usize) -> u64 {
        (4 + 6 * 8 + 2 + n_nodes * META_NODE_BYTES) as u64
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::size(self.nodes.len()) as usize);
        out.extend_from_slice(&self.channels.to_le_bytes());
        let r = &self.region;
        for v in [r.x_min, r.x_max, r.y_min, r.y_max, r.z_min, r.z_max] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.nodes.len() as u16).to_le_bytes());
        for n in &self.nodes {
            out.extend_from_slice(&n.id.0.to_le_bytes());
            out.push(match n.role {
                Role::Central => 0,
                Role::Slave => 1,
            });
            out.push(match n.kind {
                Stream::Vehicle => 0,
                Stream::Infrastructure => 1,
            });
            out.push(match n.compute {
                ComputeClass::Ccu => 0,
                ComputeClass::Lcu => 1,
            });
            let p = &n.pose;
            for v in [p.x, p.y, p.z, p.pitch, p.yaw, p.roll] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { b: bytes, pos: 0 };
        let channels = r.u32()?;
        let mut rv = [0.0; 6];
        for v in &mut rv {
            *v = r.f64()?;
        }
        let region = Region::new((rv[0], rv[1]), (rv[2], rv[3]), (rv[4], rv[5]))
            .map_err(|_| Error::Payload("invalid region"))?;
        let n = r.u16()? as usize;
        let mut nodes = Vec::with_capacity(n);
        for _ in 0..n {
            let id = NodeId(r.u32()?);
            let role = match r.u8()? {
                0 => Role::Central,
                1 => Role::Slave,
                _ => return Err(Error::Payload("unknown role tag")),
            };
            let kind = match r.u8()? {
                0 => Stream::Vehicle,
                1 => Stream::Infrastructure,
                _ => return Err(Error::Payload("unknown node kind tag")),
            };
            let compute = match r.u8()? {
                0 => ComputeClass::Ccu,
                1 => ComputeClass::Lcu,
                _ => return Err(Error::Payload("unknown compute class tag")),
            };
            let mut p = [0.0; 6];
            for v in &mut p {
                *v = r.f64()?;
            }
            nodes.push(NodeDescriptor {
                id,
                role,
                kind,
                pose: SlaP {
                    x: p[0],
                    y: p[1],
                    z: p[2],
                    pitch: p[3],
                    yaw: p[4],
                    roll: p[5],
                },
                compute,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Payload("trailing bytes after metadata"));
        }
        Ok(GlobalMeta {
            channels,
            region,
            nodes,
        })
    }
}

/// Detection list on the wire: `u32` count, then per detection `u8` class,
/// seven `f32` box fields and an `f32` score.
pub struct ResultPayload;

const DET_BYTES: usize = 1 + 8 * 4;

impl ResultPayload {
    pub fn size(n: usize) -> u64 {
        (4 + n * DET_BYTES) as u64
    }

    pub fn encode(dets: &[Detection]) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::size(dets.len()) as usize);
        out.extend_from_slice(&(dets.len() as u32).to_le_bytes());
        for d in dets {
            out.push(d.class.index() as u8);
            for v in d.bbox.as_array().iter().chain(core::iter::once(&d.score)) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Vec<(ObjectClass, Box3D, f32)>> {
        let mut r = Reader { b: bytes, pos: 0 };
        let n = r.u32()? as usize;
        let mut out = Vec::with_capacity(n.min(bytes.len() / DET_BYTES));
        for _ in 0..n {
            let class = match r.u8()? {
                0 => ObjectClass::Car,
                1 => ObjectClass::Pedestrian,
                _ => return Err(Error::Payload("unknown class tag")),
            };
            let mut v = [0.0f64; 8];
            for x in &mut v {
                *x = r.f32()? as f64;
            }
            let b = Box3D {
                x: v[0],
                y: v[1],
                z: v[2],
                w: v[3],
                l: v[4],
                h: v[5],
                theta: v[6],
            };
            out.push((class, b, v[7] as f32));
        }
        if r.pos != bytes.len() {
            return Err(Error::Payload("trailing bytes after detections"));
        }
        Ok(out)
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let s = self.b.get(self.pos..end).ok_or(Error::Payload("truncated payload"))?;
        self.pos = end;
        let mut a = [0u8; N];
        a.copy_from_slice(s);
        Ok(a)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

/// Per-node compute supplied to the simulator.
pub trait NodeWorkload {
    /// Channel width of shallow features.
    fn channels(&self) -> usize;

    /// Pre-processing and pillar encoding on one node.
    fn encode(&mut self, node: &NodeDescriptor, frame: u32) -> Result<PillarFeatures>;

    /// Fusion, backbone and head on the central node over every node's
    /// features (its own included), in arrival order.
    fn fuse_detect(
        &mut self,
        central: &NodeDescriptor,
        features: &[PillarFeatures],
        frame: u32,
    ) -> Result<Vec<Detection>>;

    /// Payload size of one transmission of `kind` sent by `node`, for the
    /// schemes whose compute is not simulated. Returns `(bytes, units)`.
    fn baseline_payload(&mut self, kind: FeatureKind, node: &NodeDescriptor, frame: u32) -> Result<(u64, u64)>;
}

/// Fixed-size payloads and no detections. Used for scaling measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantWorkload {
    pub channels: usize,
    pub pillars: usize,
    /// Bytes per transmission for the early, dense and late schemes.
    pub early_bytes: u64,
    pub dense_bytes: u64,
    pub late_bytes: u64,
}

impl ConstantWorkload {
    /// Payloads matching the reference per-transmission sizes.
    pub fn reference() -> Self {
        ConstantWorkload {
            channels: 64,
            pillars: 15_000,
            early_bytes: (costmodel::M_EARLY * 1e6) as u64,
            dense_bytes: (costmodel::M_DENSE_COMPRESSED * 1e6) as u64,
            late_bytes: (costmodel::M_LATE * 1e6) as u64,
        }
    }
}

impl NodeWorkload for ConstantWorkload {
    fn channels(&self) -> usize {
        self.channels
    }

    fn encode(&mut self, node: &NodeDescriptor, _frame: u32) -> Result<PillarFeatures> {
        let w = 1024u32;
        Ok(PillarFeatures {
            node: node.id,
            stream: node.kind,
            channels: self.channels,
            cells: (0..self.pillars as u32).map(|i| (i % w, i / w)).collect(),
            features: alloc::vec![0.0; self.pillars * self.channels],
        })
    }

    fn fuse_detect(
        &mut self,
        _central: &NodeDescriptor,
        _features: &[PillarFeatures],
        _frame: u32,
    ) -> Result<Vec<Detection>> {
        Ok(Vec::new())
    }

    fn baseline_payload(&mut self, kind: FeatureKind, _node: &NodeDescriptor, _frame: u32) -> Result<(u64, u64)> {
        Ok(match kind {
            FeatureKind::Shallow => (FeaturePayload::size(self.pillars, self.channels), self.pillars as u64),
            FeatureKind::Early => (self.early_bytes, self.early_bytes / 16),
            FeatureKind::Dense => (self.dense_bytes, self.dense_bytes / 4),
            FeatureKind::Late => (self.late_bytes, 0),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrivalOrder {
    /// Node-list order.
    AsListed,
    Reversed,
    /// Shuffled per frame from the given seed.
    Shuffled(u64),
}

/// Detections held by each beneficiary after a frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameOutcome {
    pub frame: u32,
    pub detections: Vec<(NodeId, Vec<Detection>)>,
    /// Index of the first log entry written for this frame.
    pub log_start: usize,
}

/// Frame period of synchronized sensors at 10 Hz.
pub const FRAME_PERIOD_US: u64 = 100_000;

pub struct Simulator {
    nodes: Vec<NodeDescriptor>,
    scheme: Scheme,
    mode: Mode,
    region: Region,
    nominal_pillars: usize,
    order: ArrivalOrder,
    log: MessageLog,
    meta_sent: bool,
}

impl Simulator {
    pub fn new(nodes: Vec<NodeDescriptor>, scheme: Scheme, mode: Mode, region: Region) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Topology("no nodes".into()));
        }
        let mut ids: Vec<u32> = nodes.iter().map(|n| n.id.0).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Topology("duplicate node id".into()));
        }
        let centrals = nodes.iter().filter(|n| n.role == Role::Central).count();
        if centrals != 1 && (scheme == Scheme::Vinet || mode == Mode::Egocentric) {
            return Err(Error::Topology(format!(
                "{} scheme in {} mode needs exactly one central node, found {centrals}",
                scheme.as_str(),
                mode.as_str()
            )));
        }
        if u16::try_from(nodes.len()).is_err() {
            return Err(Error::Topology("too many nodes".into()));
        }
        Ok(Simulator {
            nodes,
            scheme,
            mode,
            region,
            nominal_pillars: 15_000,
            order: ArrivalOrder::AsListed,
            log: MessageLog::new(),
            meta_sent: false,
        })
    }

    pub fn with_arrival_order(mut self, order: ArrivalOrder) -> Self {
        self.order = order;
        self
    }

    pub fn with_nominal_pillars(mut self, p: usize) -> Self {
        self.nominal_pillars = p;
        self
    }

    pub fn nodes(&self) -> &[NodeDescriptor] {
        &self.nodes
    }

    pub fn log(&self) -> &MessageLog {
        &self.log
    }

    pub fn into_log(self) -> MessageLog {
        self.log
    }

    fn central(&self) -> Option<&NodeDescriptor> {
        self.nodes.iter().find(|n| n.role == Role::Central)
    }

    fn send(
        &mut self,
        src: NodeId,
        dst: Destination,
        kind: MessageKind,
        bytes: u64,
        nominal: u64,
        units: u64,
        frame: u32,
        seq: u64,
    ) {
        self.log.push(Message {
            src,
            dst,
            kind,
            payload_bytes: bytes,
            nominal_bytes: nominal,
            units,
            frame,
            timestamp_us: frame as u64 * FRAME_PERIOD_US + seq,
        });
    }

    fn ensure_meta(&mut self, workload: &dyn NodeWorkload, frame: u32) {
        if self.meta_sent || self.nodes.len() < 2 {
            return;
        }
        let meta = GlobalMeta {
            channels: workload.channels() as u32,
            region: self.region,
            nodes: self.nodes.clone(),
        };
        let bytes = meta.encode().len() as u64;
        let src = self.central().map_or(self.nodes[0].id, |c| c.id);
        self.send(
            src,
            Destination::Broadcast,
            MessageKind::GlobalMeta,
            bytes,
            bytes,
            self.nodes.len() as u64,
            frame,
            0,
        );
        self.meta_sent = true;
    }

    pub fn run_frame(&mut self, frame: u32, workload: &mut dyn NodeWorkload) -> Result<FrameOutcome> {
        let log_start = self.log.len();
        self.ensure_meta(workload, frame);
        let detections = match self.scheme {
            Scheme::Vinet => self.vinet_frame(frame, workload)?,
            _ => {
                self.baseline_frame(frame, workload)?;
                Vec::new()
            }
        };
        Ok(FrameOutcome {
            frame,
            detections,
            log_start,
        })
    }

    fn vinet_frame(&mut self, frame: u32, workload: &mut dyn NodeWorkload) -> Result<Vec<(NodeId, Vec<Detection>)>> {
        let central = *self
            .central()
            .ok_or_else(|| Error::Topology("no central node".into()))?;
        let c = workload.channels();
        let mut slaves: Vec<NodeDescriptor> = self.nodes.iter().filter(|n| n.role == Role::Slave).copied().collect();
        match self.order {
            ArrivalOrder::AsListed => {}
            ArrivalOrder::Reversed => slaves.reverse(),
            ArrivalOrder::Shuffled(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (frame as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
                slaves.shuffle(&mut rng);
            }
        }
        let mut features = Vec::with_capacity(self.nodes.len());
        features.push(workload.encode(&central, frame)?);
        for (seq, s) in slaves.iter().enumerate() {
            let pf = workload.encode(s, frame)?;
            if pf.channels != c {
                return Err(Error::Invariant(format!(
                    "{} encoded {} channels, session uses {c}",
                    s.id, pf.channels
                )));
            }
            let wire = FeaturePayload::encode(&pf)?;
            let decoded = FeaturePayload::decode(&wire, c, s.id, s.kind)?;
            let nominal = FeaturePayload::size(self.nominal_pillars, c);
            self.send(
                s.id,
                Destination::Node(central.id),
                MessageKind::Feature,
                wire.len() as u64,
                nominal,
                pf.len() as u64,
                frame,
                1 + seq as u64,
            );
            features.push(decoded);
        }
        let dets = workload.fuse_detect(&central, &features, frame)?;
        match self.mode {
            Mode::Egocentric => Ok(alloc::vec![(central.id, dets)]),
            Mode::Holistic => {
                if self.nodes.len() > 1 {
                    let bytes = ResultPayload::encode(&dets).len() as u64;
                    self.send(
                        central.id,
                        Destination::Broadcast,
                        MessageKind::Result,
                        bytes,
                        bytes,
                        dets.len() as u64,
                        frame,
                        1 + slaves.len() as u64,
                    );
                }
                Ok(self.nodes.iter().map(|n| (n.id, dets.clone())).collect())
            }
        }
    }

    /// Accounting for schemes whose compute is outside the simulation: every
    /// beneficiary receives one payload from each other node.
    fn baseline_frame(&mut self, frame: u32, workload: &mut dyn NodeWorkload) -> Result<()> {
        let kind = self.scheme.feature();
        let beneficiaries: Vec<NodeDescriptor> = match self.mode {
            Mode::Egocentric => self.central().into_iter().copied().collect(),
            Mode::Holistic => self.nodes.clone(),
        };
        let mut payloads = BTreeMap::new();
        for n in &self.nodes {
            payloads.insert(n.id, workload.baseline_payload(kind, n, frame)?);
        }
        let mut seq = 1;
        for b in &beneficiaries {
            for n in self.nodes.clone().iter().filter(|n| n.id != b.id) {
                let (bytes, units) = payloads[&n.id];
                self.send(
                    n.id,
                    Destination::Node(b.id),
                    MessageKind::Feature,
                    bytes,
                    bytes,
                    units,
                    frame,
                    seq,
                );
                seq += 1;
            }
        }
        Ok(())
    }
}

/// Byte growth measured over a range of node counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFit {
    /// `(N, feature bytes per frame)`.
    pub points: Vec<(usize, u64)>,
    /// Least-squares log-log slope over every point.
    pub full_slope: f64,
    /// Slope over the largest three node counts, which estimates the
    /// asymptotic order.
    pub tail_slope: f64,
}

/// Star topology: node 0 is central (infrastructure), others alternate
/// between vehicles and infrastructure.
pub fn synthetic_nodes(n: usize) -> Vec<NodeDescriptor> {
    (0..n as u32)
        .map(|i| {
            let role = if i == 0 { Role::Central } else { Role::Slave };
            let kind = if i % 2 == 0 {
                Stream::Infrastructure
            } else {
                Stream::Vehicle
            };
            NodeDescriptor::new(i, role, kind, SlaP::new(i as f64 * 5.0, 0.0, 1.74, 0.0, 0.0, 0.0))
        })
        .collect()
}

pub fn measure_scaling(
    scheme: Scheme,
    mode: Mode,
    ns: &[usize],
    frames: u32,
    make_workload: &mut dyn FnMut(usize) -> Box<dyn NodeWorkload>,
) -> Result<ScalingFit> {
    if frames == 0 {
        return Err(Error::Config("measure_scaling needs at least one frame".into()));
    }
    let mut points = Vec::with_capacity(ns.len());
    for &n in ns {
        let mut sim = Simulator::new(synthetic_nodes(n), scheme, mode, Region::reference())?;
        let mut w = make_workload(n);
        for f in 0..frames {
            sim.run_frame(f, w.as_mut())?;
        }
        points.push((n, sim.log().totals(Some(MessageKind::Feature)).bytes / frames as u64));
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|&(n, b)| (n as f64, b as f64)).collect();
    let full_slope = costmodel::loglog_slope(&xy).unwrap_or(f64::NAN);
    let tail = &xy[xy.len().saturating_sub(3)..];
    let tail_slope = costmodel::loglog_slope(tail).unwrap_or(f64::NAN);
    Ok(ScalingFit {
        points,
        full_slope,
        tail_slope,
    })
}

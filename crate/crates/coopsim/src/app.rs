//! End-to-end drivers behind the CLI subcommands.

use std::path::Path;

use coopsim_core::costmodel::{model_gflops, ArchSpec, CostReport, FeatureKind, Model as CostModel};
use coopsim_core::eval::{evaluate, EvalConfig, EvalReport, FrameEval, GroundTruthObject};
use coopsim_core::head::{Box3D, Detection, ObjectClass};
use coopsim_core::netsim::{Destination, MessageLog, Mode, NodeDescriptor, NodeWorkload, Role, Scheme, Simulator};
use coopsim_core::nn::Tensor3;
use coopsim_core::pillars::PillarFeatures;
use coopsim_core::pipeline::{HeadMode, Model, ModelConfig, ModelWeights, OracleHead, PipelineWorkload};
use coopsim_core::NodeId;

use crate::config::{Config, WeightsSource};
use crate::error::{AppError, Result};
use crate::io;
use crate::scenario::{FrameData, ScenarioFile};

pub fn load_weights(cfg: &Config) -> Result<ModelWeights> {
    match &cfg.weights {
        WeightsSource::Seeded(s) => Ok(ModelWeights::seeded(&cfg.model, *s)),
        WeightsSource::Bundle(p) => io::read_bundle(p, &cfg.model),
    }
}

pub fn build_model(cfg: &Config) -> Result<Model> {
    Ok(Model::new(cfg.model.clone(), load_weights(cfg)?)?)
}

/// Encodes every node of a frame at once on up to `threads` threads, then
/// serves the simulator's per-node requests from that batch. Each node is
/// encoded independently, so results do not depend on the thread count.
struct ThreadedWorkload<'a> {
    inner: PipelineWorkload<'a>,
    model: &'a Model,
    nodes: &'a [NodeDescriptor],
    frames: &'a [FrameData],
    threads: usize,
    batch: Option<(u32, Vec<PillarFeatures>)>,
}

/// Runs `f` over `items` on up to `threads` scoped threads, keeping order.
pub fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                s.spawn(move || part.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

impl NodeWorkload for ThreadedWorkload<'_> {
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    fn encode(&mut self, node: &NodeDescriptor, frame: u32) -> coopsim_core::Result<PillarFeatures> {
        if self.threads <= 1 {
            return self.inner.encode(node, frame);
        }
        if self.batch.as_ref().is_none_or(|(f, _)| *f != frame) {
            let data = self
                .frames
                .get(frame as usize)
                .ok_or_else(|| coopsim_core::Error::Config(format!("no clouds for frame {frame}")))?;
            let pairs: Vec<(&NodeDescriptor, &_)> = self.nodes.iter().zip(&data.clouds).collect();
            let encoded = par_map(&pairs, self.threads, |(n, c)| self.model.encode_node(n, c));
            self.batch = Some((frame, encoded.into_iter().collect::<coopsim_core::Result<_>>()?));
        }
        let (_, batch) = self.batch.as_ref().expect("batch filled above");
        let i = self
            .nodes
            .iter()
            .position(|n| n.id == node.id)
            .ok_or_else(|| coopsim_core::Error::Topology(format!("no clouds for node {}", node.id)))?;
        Ok(batch[i].clone())
    }

    fn fuse_detect(
        &mut self,
        central: &NodeDescriptor,
        features: &[PillarFeatures],
        frame: u32,
    ) -> coopsim_core::Result<Vec<Detection>> {
        self.inner.fuse_detect(central, features, frame)
    }

    fn baseline_payload(
        &mut self,
        kind: FeatureKind,
        node: &NodeDescriptor,
        frame: u32,
    ) -> coopsim_core::Result<(u64, u64)> {
        self.inner.baseline_payload(kind, node, frame)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub scheme: Scheme,
    pub mode: Mode,
    pub seed: u64,
    pub threads: usize,
    /// Replace the learned head with one that places each ground-truth
    /// object at its best anchor when the fused features cover it.
    pub oracle_head: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub index: u32,
    /// Detections held by the central node (or the first beneficiary).
    pub detections: Vec<Detection>,
    pub truth: Vec<GroundTruthObject>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub frames: Vec<FrameResult>,
    pub log: MessageLog,
    pub cost: CostReport,
    pub eval: EvalReport,
}

pub fn cost_model_of(scheme: Scheme) -> CostModel {
    match scheme {
        Scheme::Vinet => CostModel::VINet,
        Scheme::Early => CostModel::EarlyFusion,
        Scheme::Dense => CostModel::FCooper,
        Scheme::Late => CostModel::LateFusion,
    }
}

/// Analytical GFLOPs of the configured model under the run's condition.
pub fn cost_report(cfg: &ModelConfig, scheme: Scheme, mode: Mode, n: usize) -> Result<CostReport> {
    let a = cfg.anchors.anchors_per_cell();
    let arch = match scheme {
        Scheme::Vinet => ArchSpec::vinet(&cfg.pillars, &cfg.backbone, a)?,
        _ => ArchSpec::baseline(&cfg.pillars, &cfg.backbone, a)?,
    };
    Ok(model_gflops(&arch, cost_model_of(scheme), mode.condition(n)))
}

/// Loads every frame of the scenario (recorded or sampled with `seed`).
pub fn load_frames(scen: &ScenarioFile, seed: u64) -> Result<Vec<FrameData>> {
    scen.frame_indices().into_iter().map(|i| scen.frame(i, seed)).collect()
}

/// Runs the scenario through the network simulator and the pipeline, then
/// evaluates the central node's detections against the ground truth.
pub fn end_to_end(cfg: &Config, scen: &ScenarioFile, opts: &SimOptions) -> Result<SimReport> {
    let model = build_model(cfg)?;
    let frames = load_frames(scen, opts.seed)?;
    simulate_frames(cfg, &model, scen, &frames, opts)
}

pub fn simulate_frames(
    cfg: &Config,
    model: &Model,
    scen: &ScenarioFile,
    frames: &[FrameData],
    opts: &SimOptions,
) -> Result<SimReport> {
    let nodes = scen.nodes();
    let ids: Vec<NodeId> = nodes.iter().map(|n| n.id).collect();
    let head = if opts.oracle_head {
        HeadMode::Oracle {
            head: OracleHead::default(),
            targets: frames
                .iter()
                .map(|f| f.truth.iter().map(|g| (g.bbox, g.class)).collect())
                .collect(),
        }
    } else {
        HeadMode::Learned
    };
    let clouds = frames.iter().map(|f| f.clouds.clone()).collect();
    let inner = PipelineWorkload::new(model, ids, clouds, head)?;
    let mut workload = ThreadedWorkload {
        inner,
        model,
        nodes: &nodes,
        frames,
        threads: opts.threads,
        batch: None,
    };
    let mut sim = Simulator::new(nodes.clone(), opts.scheme, opts.mode, scen.scenario.region)?;
    let central = nodes.iter().find(|n| n.role == Role::Central).map(|n| n.id);
    let mut results = Vec::new();
    for (k, f) in frames.iter().enumerate() {
        let out = sim.run_frame(k as u32, &mut workload)?;
        let dets = out
            .detections
            .iter()
            .find(|(id, _)| Some(*id) == central)
            .or_else(|| out.detections.first())
            .map(|(_, d)| d.clone())
            .unwrap_or_default();
        results.push(FrameResult {
            index: f.index,
            detections: dets,
            truth: f.truth.clone(),
        });
    }
    let eval_frames: Vec<FrameEval> = results
        .iter()
        .map(|r| FrameEval {
            detections: r.detections.clone(),
            ground_truth: r.truth.clone(),
        })
        .collect();
    Ok(SimReport {
        eval: evaluate(&eval_frames, &cfg.eval),
        cost: cost_report(&cfg.model, opts.scheme, opts.mode, nodes.len())?,
        log: sim.into_log(),
        frames: results,
    })
}

/// `frame,timestamp_us,src,dst,kind,payload_bytes,nominal_bytes,units`.
pub fn write_log_csv(log: &MessageLog, sink: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "frame",
        "timestamp_us",
        "src",
        "dst",
        "kind",
        "payload_bytes",
        "nominal_bytes",
        "units",
    ])?;
    for m in log.entries() {
        let dst = match m.dst {
            Destination::Node(id) => id.0.to_string(),
            Destination::Broadcast => "broadcast".into(),
        };
        w.write_record([
            m.frame.to_string(),
            m.timestamp_us.to_string(),
            m.src.0.to_string(),
            dst,
            m.kind.as_str().to_string(),
            m.payload_bytes.to_string(),
            m.nominal_bytes.to_string(),
            m.units.to_string(),
        ])?;
    }
    w.flush().map_err(|e| AppError::io("<csv output>", e))?;
    Ok(())
}

/// `benchmark,class,min_mp,n_gt,ap,ar` per cell, then both overall means.
pub fn write_eval_csv(report: &EvalReport, sink: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["benchmark", "class", "min_mp", "n_gt", "ap", "ar"])?;
    let b = report.benchmark.as_str();
    for c in &report.cells {
        w.write_record([
            b.to_string(),
            c.class.as_str().to_string(),
            c.min_mp.to_string(),
            c.n_gt.to_string(),
            format!("{:.4}", c.ap),
            format!("{:.4}", c.ar),
        ])?;
    }
    w.write_record([
        b,
        "overall_cells",
        "",
        "",
        &format!("{:.4}", report.overall_cells()),
        "",
    ])?;
    w.write_record([
        b,
        "overall_classes",
        "",
        "",
        &format!("{:.4}", report.overall_classes()),
        "",
    ])?;
    w.flush().map_err(|e| AppError::io("<csv output>", e))?;
    Ok(())
}

/// Evaluates detection files against label files of an exported dataset.
/// Point counts come from the dataset's clouds and calibration.
pub fn eval_dataset(root: &Path, detections: &Path, cfg: &EvalConfig) -> Result<EvalReport> {
    let layout = io::DatasetLayout::new(root);
    let nodes = layout.nodes()?;
    let mut frames = Vec::new();
    for f in layout.frames()? {
        let mut globals = Vec::new();
        for n in &nodes {
            let cloud = io::read_velodyne(&layout.velodyne(n.id, f), n.id)?;
            globals.push(coopsim_core::geometry::to_global(&cloud, &n.pose)?);
        }
        let truth = io::read_labels(&layout.label(f))?
            .into_iter()
            .map(|l| GroundTruthObject {
                bbox: l.bbox,
                class: l.class,
                mp: globals
                    .iter()
                    .map(|g| coopsim_core::scenegen::mp_count(&l.bbox, g))
                    .sum(),
            })
            .collect();
        let det_path = detections.join(format!("{f:06}.txt"));
        let dets = if det_path.exists() {
            io::read_labels(&det_path)?
                .into_iter()
                .enumerate()
                .map(|(i, l)| Detection {
                    bbox: l.bbox,
                    class: l.class,
                    score: l.score.unwrap_or(1.0),
                    anchor: i,
                })
                .collect()
        } else {
            Vec::new()
        };
        frames.push(FrameEval {
            detections: dets,
            ground_truth: truth,
        });
    }
    Ok(evaluate(&frames, cfg))
}

/// Writes `frames` frames of the scenario as a dataset under `out`, plus a
/// `scenario.toml` that replays them.
pub fn generate(scen: &ScenarioFile, frames: u32, seed: u64, out: &Path) -> Result<ScenarioFile> {
    let layout = io::DatasetLayout::new(out);
    let nodes = scen.nodes();
    let mut replay = scen.clone();
    replay.seed = seed;
    replay.scenario.frames = frames;
    replay.recorded.clear();
    let mut recorded = Vec::new();
    for f in 0..frames {
        let data = replay.frame(f, seed)?;
        io::export_kitti(&layout, f, &nodes, &data.clouds, &data.truth)?;
        recorded.push(crate::scenario::RecordedFrame {
            index: f,
            clouds: nodes.iter().map(|n| layout.velodyne(n.id, f)).collect(),
            labels: Some(layout.label(f)),
        });
    }
    replay.recorded = recorded;
    let path = out.join("scenario.toml");
    std::fs::write(&path, replay.to_toml(out)).map_err(|e| AppError::io(&path, e))?;
    Ok(replay)
}

/// One line of a pipeline dump.
#[derive(Debug, Clone, PartialEq)]
pub struct StageDump {
    pub name: String,
    pub shape: (usize, usize, usize),
    pub sum: f64,
    pub checksum: u64,
}

fn stage(name: impl Into<String>, t: &Tensor3) -> StageDump {
    StageDump {
        name: name.into(),
        shape: t.shape(),
        sum: t.sum(),
        checksum: t.checksum(),
    }
}

/// Runs one frame through the model and records every stage output. The
/// planned shape of each backbone layer comes from the configuration.
pub fn run_pipeline(
    model: &Model,
    nodes: &[NodeDescriptor],
    frame: &FrameData,
    threads: usize,
) -> Result<(Vec<StageDump>, Vec<(String, (usize, usize, usize))>, Vec<Detection>)> {
    let pairs: Vec<_> = nodes.iter().zip(&frame.clouds).collect();
    let features = par_map(&pairs, threads, |(n, c)| model.encode_node(n, c))
        .into_iter()
        .collect::<coopsim_core::Result<Vec<_>>>()?;
    let trace = model.forward_features(&features)?;
    let mut out = Vec::new();
    for pf in &trace.pillars {
        let t = Tensor3::from_vec(1, pf.len(), pf.channels, pf.features.clone())?;
        out.push(stage(format!("lfe.node{}", pf.node.0), &t));
    }
    out.push(stage("tsf", &trace.fused));
    out.push(stage("cfb.concat", &trace.backbone));
    out.push(stage("head.cls", &trace.head.cls));
    out.push(stage("head.reg", &trace.head.reg));
    out.push(stage("head.dir", &trace.head.dir));
    Ok((out, model.config.shape_trace()?, trace.detections))
}

/// Detection lines for a frame, in the label format.
pub fn detection_rows(dets: &[Detection]) -> Vec<(ObjectClass, Box3D, Option<f64>)> {
    dets.iter().map(|d| (d.class, d.bbox, Some(d.score))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use coopsim_core::scenegen::occlusion_demo;

    fn reduced() -> Config {
        Config {
            model: ModelConfig::reduced(),
            ..Config::default()
        }
    }

    fn demo() -> ScenarioFile {
        ScenarioFile {
            scenario: occlusion_demo().0,
            seed: 3,
            recorded: Vec::new(),
        }
    }

    #[test]
    fn par_map_keeps_order() {
        let v: Vec<u32> = (0..17).collect();
        for t in 1..6 {
            assert_eq!(par_map(&v, t, |x| x * 2), v.iter().map(|x| x * 2).collect::<Vec<_>>());
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let cfg = reduced();
        let opts = |threads| SimOptions {
            scheme: Scheme::Vinet,
            mode: Mode::Egocentric,
            seed: 1,
            threads,
            oracle_head: true,
        };
        let a = end_to_end(&cfg, &demo(), &opts(1)).unwrap();
        let b = end_to_end(&cfg, &demo(), &opts(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.frames.len(), 1);
        assert!(!a.frames[0].detections.is_empty());
    }

    #[test]
    fn run_pipeline_shapes() {
        let cfg = reduced();
        let model = build_model(&cfg).unwrap();
        let s = demo();
        let frame = s.frame(0, 2).unwrap();
        let (stages, plan, _) = run_pipeline(&model, &s.nodes(), &frame, 2).unwrap();
        let get = |n: &str| stages.iter().find(|s| s.name == n).unwrap().shape;
        assert_eq!(get("tsf"), (4, 8, 16));
        assert_eq!(get("cfb.concat"), (24, 8, 16));
        assert_eq!(plan.iter().filter(|(n, _)| n.starts_with("cfb.layer")).count(), 18);
    }

    #[test]
    fn generate_then_replay_matches_synthetic() {
        let dir = tempfile::tempdir().unwrap();
        let s = demo();
        let replay = generate(&s, 2, 7, dir.path()).unwrap();
        let loaded = ScenarioFile::load(&dir.path().join("scenario.toml")).unwrap();
        assert_eq!(loaded.recorded, replay.recorded);
        for f in 0..2 {
            let synth = s.frame(f, 7).unwrap();
            let disk = loaded.frame(f, 0).unwrap();
            assert_eq!(synth.truth.len(), disk.truth.len());
            for (a, b) in synth.clouds.iter().zip(&disk.clouds) {
                assert_eq!(a.len(), b.len());
            }
        }
    }
}

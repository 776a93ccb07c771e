//! Closed-form cost model: layer FLOPs, per-module totals under each
//! cooperation condition, transmission counts and payload sizes, and the
//! three-term GPU memory polynomial.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::backbone::{BackboneConfig, LayerKind};
use crate::math;
use crate::pillars::{PillarConfig, POINT_FEATURE_DIM};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpCondition {
    NoCooperation,
    Egocentric(usize),
    Holistic(usize),
}

impl CpCondition {
    pub fn nodes(self) -> usize {
        match self {
            CpCondition::NoCooperation => 1,
            CpCondition::Egocentric(n) | CpCondition::Holistic(n) => n,
        }
    }

    pub fn label(self) -> String {
        match self {
            CpCondition::NoCooperation => "No cooperation".into(),
            CpCondition::Egocentric(n) => format!("Egocentric CP w/ {n} PN"),
            CpCondition::Holistic(n) => format!("Holistic CP w/ {n} PN"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Model {
    VINet,
    EarlyFusion,
    LateFusion,
    FCooper,
    PillarGrid,
}

impl Model {
    pub const ALL: [Model; 5] = [
        Model::VINet,
        Model::EarlyFusion,
        Model::LateFusion,
        Model::FCooper,
        Model::PillarGrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Model::VINet => "VINet",
            Model::EarlyFusion => "EarlyFusion",
            Model::LateFusion => "LateFusion",
            Model::FCooper => "F-Cooper",
            Model::PillarGrid => "PillarGrid",
        }
    }

    /// What the model puts on the air.
    pub fn feature(self) -> FeatureKind {
        match self {
            Model::VINet => FeatureKind::Shallow,
            Model::EarlyFusion => FeatureKind::Early,
            Model::LateFusion => FeatureKind::Late,
            Model::FCooper | Model::PillarGrid => FeatureKind::Dense,
        }
    }

    /// How many times `(encoder, backbone, head)` run system-wide.
    pub fn multiplicity(self, cond: CpCondition) -> Multiplicity {
        let n = cond.nodes();
        let (e, b, h) = match (self, cond) {
            (_, CpCondition::NoCooperation) => (1, 1, 1),
            (Model::VINet, _) => (n, 1, 1),
            (Model::EarlyFusion, CpCondition::Egocentric(_)) => (n, 1, 1),
            (Model::LateFusion, _) => (n, n, n),
            (Model::FCooper | Model::PillarGrid, CpCondition::Egocentric(_)) => (n, n, 1),
            (_, CpCondition::Holistic(_)) => (n, n, n),
        };
        Multiplicity {
            encoder: e,
            backbone: b,
            head: h,
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Multiplicity {
    pub encoder: usize,
    pub backbone: usize,
    pub head: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    /// Pre-backbone pillar features.
    Shallow,
    /// Raw point clouds.
    Early,
    /// Post-backbone feature maps.
    Dense,
    /// Detection lists.
    Late,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 4] = [
        FeatureKind::Shallow,
        FeatureKind::Early,
        FeatureKind::Dense,
        FeatureKind::Late,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Shallow => "Shallow Feature",
            FeatureKind::Early => "Early Feature",
            FeatureKind::Dense => "Dense Feature",
            FeatureKind::Late => "Late Feature",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Module {
    Encoder,
    Backbone,
    Head,
}

impl Module {
    pub const ALL: [Module; 3] = [Module::Encoder, Module::Backbone, Module::Head];

    pub fn name(self) -> &'static str {
        match self {
            Module::Encoder => "Encoder",
            Module::Backbone => "Backbone",
            Module::Head => "Head",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostLayerKind {
    Conv,
    Deconv,
    /// Shared per-row linear map, applied `rows` times.
    Linear {
        rows: usize,
    },
}

/// One counted layer. For (de)convolutions `out` is the output `(C, H, W)`;
/// for linear layers it is `(out_features, 1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostLayer {
    pub name: String,
    pub module: Module,
    pub kind: CostLayerKind,
    pub cin: usize,
    pub k: usize,
    pub out: (usize, usize, usize),
}

impl CostLayer {
    pub fn flops(&self) -> u64 {
        match self.kind {
            CostLayerKind::Conv | CostLayerKind::Deconv => {
                let (c, h, w) = self.out;
                flops_conv(self.cin, self.k, c, h, w)
            }
            CostLayerKind::Linear { rows } => rows as u64 * flops_linear(self.cin, self.out.0),
        }
    }
}

/// `2 * Cin * k^2 * (Cout * H * W)`.
pub fn flops_conv(cin: usize, k: usize, cout: usize, h_out: usize, w_out: usize) -> u64 {
    2 * cin as u64 * (k * k) as u64 * cout as u64 * h_out as u64 * w_out as u64
}

/// `2 * I * O`.
pub fn flops_linear(inputs: usize, outputs: usize) -> u64 {
    2 * inputs as u64 * outputs as u64
}

pub fn macs(flops: u64) -> u64 {
    flops / 2
}

pub fn gflops(flops: u64) -> f64 {
    flops as f64 / 1e9
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchSpec {
    pub layers: Vec<CostLayer>,
}

impl ArchSpec {
    /// Layer list of the shallow-fusion network: pillar MLP, the cross-stream
    /// convolution, the backbone chain, and the three 1x1 head convolutions.
    pub fn vinet(pillars: &PillarConfig, backbone: &BackboneConfig, anchors: usize) -> Result<Self> {
        let mut layers = Vec::new();
        layers.push(lfe_layer(pillars));
        let (c_in, h, w) = backbone.input;
        layers.push(CostLayer {
            name: "tsf.conv".into(),
            module: Module::Encoder,
            kind: CostLayerKind::Conv,
            cin: 2 * pillars.channels,
            k: 3,
            out: (c_in, h, w),
        });
        backbone_layers(backbone, &mut layers)?;
        head_layers(backbone, anchors, &mut layers)?;
        Ok(ArchSpec { layers })
    }

    /// Layer list of the single-stream baselines. They share the pillar
    /// MLP, backbone chain and head; their stride-2 entry convolution is
    /// counted at the same width as the cross-stream one and belongs to the
    /// backbone.
    pub fn baseline(pillars: &PillarConfig, backbone: &BackboneConfig, anchors: usize) -> Result<Self> {
        let mut a = Self::vinet(pillars, backbone, anchors)?;
        for l in &mut a.layers {
            if l.name == "tsf.conv" {
                l.name = "entry.conv".into();
                l.module = Module::Backbone;
            }
        }
        Ok(a)
    }

    pub fn reference_vinet() -> Self {
        Self::vinet(&PillarConfig::reference(), &BackboneConfig::reference(), 4).expect("reference chain is consistent")
    }

    pub fn reference_baseline() -> Self {
        Self::baseline(&PillarConfig::reference(), &BackboneConfig::reference(), 4)
            .expect("reference chain is consistent")
    }

    pub fn module_flops(&self, m: Module) -> u64 {
        self.layers.iter().filter(|l| l.module == m).map(CostLayer::flops).sum()
    }

    pub fn for_model(model: Model) -> Self {
        match model {
            Model::VINet => Self::reference_vinet(),
            _ => Self::reference_baseline(),
        }
    }
}

fn lfe_layer(p: &PillarConfig) -> CostLayer {
    CostLayer {
        name: "lfe.linear".into(),
        module: Module::Encoder,
        kind: CostLayerKind::Linear {
            rows: p.max_pillars * p.max_points_per_pillar,
        },
        cin: POINT_FEATURE_DIM,
        k: 1,
        out: (p.channels, 1, 1),
    }
}

fn backbone_layers(cfg: &BackboneConfig, out: &mut Vec<CostLayer>) -> Result<()> {
    let shapes = cfg.trace_shapes()?;
    for (spec, (name, shape)) in cfg.layers().zip(shapes.iter()) {
        out.push(CostLayer {
            name: name.clone(),
            module: Module::Backbone,
            kind: match spec.kind {
                LayerKind::Conv => CostLayerKind::Conv,
                LayerKind::Deconv => CostLayerKind::Deconv,
            },
            cin: spec.cin,
            k: spec.k,
            out: *shape,
        });
    }
    Ok(())
}

fn head_layers(cfg: &BackboneConfig, anchors: usize, out: &mut Vec<CostLayer>) -> Result<()> {
    let (c, h, w) = cfg.output_shape()?;
    for (name, per) in [("head.cls", 3), ("head.reg", 7), ("head.dir", 2)] {
        out.push(CostLayer {
            name: name.into(),
            module: Module::Head,
            kind: CostLayerKind::Conv,
            cin: c,
            k: 1,
            out: (anchors * per, h, w),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostReport {
    pub model: Model,
    pub condition: CpCondition,
    pub encoder: f64,
    pub backbone: f64,
    pub head: f64,
}

impl CostReport {
    pub fn overall(&self) -> f64 {
        self.encoder + self.backbone + self.head
    }

    pub fn get(&self, m: Module) -> f64 {
        match m {
            Module::Encoder => self.encoder,
            Module::Backbone => self.backbone,
            Module::Head => self.head,
        }
    }
}

/// Per-module GFLOPs for one model under one condition. Totals are taken at
/// two-decimal precision per module so that the overall row is their exact sum.
pub fn model_gflops(arch: &ArchSpec, model: Model, cond: CpCondition) -> CostReport {
    let m = model.multiplicity(cond);
    let per = |module| math::round_to(gflops(arch.module_flops(module)), 2);
    CostReport {
        model,
        condition: cond,
        encoder: per(Module::Encoder) * m.encoder as f64,
        backbone: per(Module::Backbone) * m.backbone as f64,
        head: per(Module::Head) * m.head as f64,
    }
}

/// Asymptotic class of each module and of the whole system.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplexityRow {
    pub encoder: &'static str,
    pub backbone: &'static str,
    pub head: &'static str,
    pub overall: String,
}

pub fn complexity(model: Model, cond: CpCondition) -> ComplexityRow {
    let probe = match cond {
        CpCondition::NoCooperation => CpCondition::NoCooperation,
        CpCondition::Egocentric(_) => CpCondition::Egocentric(2),
        CpCondition::Holistic(_) => CpCondition::Holistic(2),
    };
    let m = model.multiplicity(probe);
    let class = |mult: usize, sym: &'static str| if mult > 1 { sym } else { "O(1)" };
    let e = class(m.encoder, "O(N)");
    let b = class(m.backbone, "O(K)");
    let h = class(m.head, "O(M)");
    let terms: Vec<&str> = [(m.encoder, "N"), (m.backbone, "K"), (m.head, "M")]
        .iter()
        .filter(|(k, _)| *k > 1)
        .map(|(_, s)| *s)
        .collect();
    let overall = if terms.is_empty() {
        "O(1)".into()
    } else {
        format!("O({})", terms.join("+"))
    };
    ComplexityRow {
        encoder: e,
        backbone: b,
        head: h,
        overall,
    }
}

/// `f * c * b / 1e6` megabytes.
pub fn bandwidth_per_transmission(f: u64, c: u64, b: u64) -> f64 {
    (f * c * b) as f64 / 1e6
}

/// Exact byte count `f * c * b`.
pub fn transmission_bytes(f: u64, c: u64, b: u64) -> u64 {
    f * c * b
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeSpec {
    pub kind: FeatureKind,
    /// Megabytes per transmission.
    pub m: f64,
}

/// Compression ratio assumed for dense feature maps.
pub const DENSE_COMPRESSION: f64 = 32.0;
/// Raw point-cloud payload per transmission, MB.
pub const M_EARLY: f64 = 6.00;
/// Compressed dense-map payload per transmission as tabulated, MB.
pub const M_DENSE_COMPRESSED: f64 = 6.87;
/// Detection-list payload per transmission, MB.
pub const M_LATE: f64 = 0.025;

impl SchemeSpec {
    pub fn reference(kind: FeatureKind) -> Self {
        let p = PillarConfig::reference();
        let m = match kind {
            FeatureKind::Shallow => bandwidth_per_transmission(p.max_pillars as u64, p.channels as u64, 4),
            FeatureKind::Early => M_EARLY,
            FeatureKind::Dense => M_DENSE_COMPRESSED,
            FeatureKind::Late => M_LATE,
        };
        SchemeSpec { kind, m }
    }

    /// Uncompressed dense payload computed from the backbone output shape.
    pub fn dense_uncompressed(backbone: &BackboneConfig) -> Result<f64> {
        let (c, h, w) = backbone.output_shape()?;
        Ok(bandwidth_per_transmission((h * w) as u64, c as u64, 4))
    }
}

/// Number of feature transmissions per frame. The shallow scheme sends
/// every non-central node's features once to the central node; the others
/// send to each beneficiary. `count_self` counts `N` shallow transmissions
/// instead of `N - 1`.
pub fn transmissions(kind: FeatureKind, cond: CpCondition, count_self: bool) -> usize {
    let n = cond.nodes();
    match (kind, cond) {
        (_, CpCondition::NoCooperation) => 0,
        (FeatureKind::Shallow, _) if count_self => n,
        (FeatureKind::Shallow, _) => n.saturating_sub(1),
        (_, CpCondition::Egocentric(_)) => n.saturating_sub(1),
        (_, CpCondition::Holistic(_)) => n * n.saturating_sub(1),
    }
}

pub fn comm_cost(scheme: &SchemeSpec, cond: CpCondition, count_self: bool) -> f64 {
    transmissions(scheme.kind, cond, count_self) as f64 * scheme.m
}

pub fn comm_complexity(kind: FeatureKind, cond: CpCondition) -> &'static str {
    let count = |n| {
        transmissions(
            kind,
            if matches!(cond, CpCondition::Holistic(_)) {
                CpCondition::Holistic(n)
            } else {
                CpCondition::Egocentric(n)
            },
            false,
        )
    };
    match cond {
        CpCondition::NoCooperation => "O(1)",
        _ => {
            // Growth between N = 100 and N = 200 separates linear from quadratic.
            let ratio = count(200) as f64 / count(100) as f64;
            if ratio > 3.0 {
                "O(N^2)"
            } else {
                "O(N)"
            }
        }
    }
}

/// Memory coefficients in GB: encoder, backbone, head, and the single-node
/// total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpuPolyCoeffs {
    pub encoder: f64,
    pub backbone: f64,
    pub head: f64,
    pub single: f64,
}

impl GpuPolyCoeffs {
    pub fn new(encoder: f64, backbone: f64, head: f64) -> Self {
        GpuPolyCoeffs {
            encoder,
            backbone,
            head,
            single: encoder + backbone + head,
        }
    }

    /// Each coefficient rounded to two decimals; the single-node total is
    /// rounded from the exact sum.
    pub fn at_published_precision(&self) -> Self {
        GpuPolyCoeffs {
            encoder: math::round_to(self.encoder, 2),
            backbone: math::round_to(self.backbone, 2),
            head: math::round_to(self.head, 2),
            single: math::round_to(self.single, 2),
        }
    }

    pub fn is_positive(&self) -> bool {
        self.encoder > 0.0 && self.backbone > 0.0 && self.head > 0.0
    }
}

/// Solves `A x = y` by Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut y: [f64; 3]) -> Result<[f64; 3]> {
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for col in 0..3 {
        let piv = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        if a[piv][col].abs() <= 1e-12 * scale {
            return Err(Error::Singular("GPU memory system has no unique solution"));
        }
        a.swap(col, piv);
        y.swap(col, piv);
        for r in col + 1..3 {
            let f = a[r][col] / a[col][col];
            for c in col..3 {
                a[r][c] -= f * a[col][c];
            }
            y[r] -= f * y[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|c| a[r][c] * x[c]).sum();
        x[r] = (y[r] - s) / a[r][r];
    }
    Ok(x)
}

/// Fits `(E, B, D)` from single-node, shallow-fusion and dense-fusion
/// memory measured at `n` nodes.
pub fn fit_gpu_poly(c_single: f64, c_vinet: f64, c_dense: f64, n: usize) -> Result<GpuPolyCoeffs> {
    let nf = n as f64;
    let x = solve3(
        [[1.0, 1.0, 1.0], [nf, 1.0, 1.0], [nf, nf, 1.0]],
        [c_single, c_vinet, c_dense],
    )?;
    Ok(GpuPolyCoeffs::new(x[0], x[1], x[2]))
}

/// Memory closed forms, in GB.
pub fn c_single(c: &GpuPolyCoeffs) -> f64 {
    c.single
}

pub fn c_vinet(c: &GpuPolyCoeffs, n: usize) -> f64 {
    c.encoder * n as f64 + (c.backbone + c.head)
}

pub fn c_dense(c: &GpuPolyCoeffs, n: usize) -> f64 {
    (c.encoder + c.backbone) * n as f64 + c.head
}

pub fn c_early_late(c: &GpuPolyCoeffs, n: usize) -> f64 {
    c.single * n as f64
}

/// System-wide memory for one feature kind under one condition.
pub fn gpu_cost(c: &GpuPolyCoeffs, kind: FeatureKind, cond: CpCondition) -> f64 {
    match (kind, cond) {
        (_, CpCondition::NoCooperation) => c_single(c),
        (FeatureKind::Shallow, _) => c_vinet(c, cond.nodes()),
        (FeatureKind::Early, CpCondition::Egocentric(_)) => c_single(c),
        (FeatureKind::Dense, CpCondition::Egocentric(n)) => c_dense(c, n),
        (_, _) => c_early_late(c, cond.nodes()),
    }
}

/// Measured memory inputs: single node, shallow fusion and dense fusion at
/// four nodes.
pub const GPU_MEASURED: (f64, f64, f64) = (3.13, 5.60, 10.95);
pub const GPU_MEASURED_N: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub label: String,
    pub values: Vec<f64>,
}

/// Memory table over the four feature kinds: no cooperation, averages at the
/// measured node count (exact coefficients), and extrapolations at `n`
/// nodes (two-decimal coefficients).
pub fn gpu_table(fit: &GpuPolyCoeffs, measured_n: usize, n: usize) -> Vec<TableRow> {
    let rounded = fit.at_published_precision();
    let row = |label: String, coeffs: &GpuPolyCoeffs, cond: CpCondition| TableRow {
        label,
        values: FeatureKind::ALL
            .iter()
            .map(|&k| math::round_to(gpu_cost(coeffs, k, cond), 2))
            .collect(),
    };
    alloc::vec![
        row("No Cooperation".into(), fit, CpCondition::NoCooperation),
        row("Egocentric Coop. Avg.".into(), fit, CpCondition::Egocentric(measured_n)),
        row(
            "Holistic Coop. Avg. Est.".into(),
            fit,
            CpCondition::Holistic(measured_n)
        ),
        row(
            format!("Egocentric Coop. w/{n}PN Est."),
            &rounded,
            CpCondition::Egocentric(n)
        ),
        row(
            format!("Holistic Coop. w/{n}PN Est."),
            &rounded,
            CpCondition::Holistic(n)
        ),
    ]
}

/// Bandwidth table over the four feature kinds.
pub fn bandwidth_table(n: usize, count_self: bool) -> Vec<TableRow> {
    let specs: Vec<SchemeSpec> = FeatureKind::ALL.iter().map(|&k| SchemeSpec::reference(k)).collect();
    let row = |label: String, f: &dyn Fn(&SchemeSpec) -> f64| TableRow {
        label,
        values: specs.iter().map(f).collect(),
    };
    alloc::vec![
        row("Single Transmission".into(), &|s| s.m),
        row(format!("Egocentric CP w/ {n} PN"), &|s| comm_cost(
            s,
            CpCondition::Egocentric(n),
            count_self
        )),
        row(format!("Holistic CP w/ {n} PN"), &|s| comm_cost(
            s,
            CpCondition::Holistic(n),
            count_self
        )),
    ]
}

/// GFLOPs table: for each module and condition, one value per model.
pub fn gflops_table(n: usize) -> Vec<TableRow> {
    let conds = [
        CpCondition::NoCooperation,
        CpCondition::Egocentric(n),
        CpCondition::Holistic(n),
    ];
    let reports: Vec<Vec<CostReport>> = conds
        .iter()
        .map(|&c| {
            Model::ALL
                .iter()
                .map(|&m| model_gflops(&ArchSpec::for_model(m), m, c))
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    for module in Module::ALL.iter().map(Some).chain(core::iter::once(None)) {
        for (ci, c) in conds.iter().enumerate() {
            let name = module.map_or("Overall", |m| m.name());
            rows.push(TableRow {
                label: format!("{name} / {}", c.label()),
                values: reports[ci]
                    .iter()
                    .map(|r| math::round_to(module.map_or(r.overall(), |m| r.get(*m)), 2))
                    .collect(),
            });
        }
    }
    rows
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|&(x, y)| (math::ln(x), math::ln(y)))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flops_examples() {
        assert_eq!(flops_conv(384, 1, 48, 256, 512), 4_831_838_208);
        assert_eq!(flops_linear(9, 64), 1152);
        assert_eq!(flops_conv(384, 3, 48, 0, 512), 0);
        assert_eq!(macs(4_831_838_208), 2_415_919_104);
    }

    #[test]
    fn reference_module_totals() {
        let a = ArchSpec::reference_vinet();
        assert!((gflops(a.module_flops(Module::Head)) - 4.83).abs() < 0.005);
        assert!((gflops(a.module_flops(Module::Backbone)) - 270.58).abs() < 0.005);
        let b = ArchSpec::reference_baseline();
        assert!((gflops(b.module_flops(Module::Backbone)) - 289.91).abs() < 0.005);
        assert!((gflops(b.module_flops(Module::Encoder)) - 0.55).abs() < 0.005);
        assert!((gflops(a.module_flops(Module::Encoder)) - 19.88).abs() < 0.005);
    }

    #[test]
    fn gflops_multiplicities() {
        let n10 = CpCondition::Holistic(10);
        let v = model_gflops(&ArchSpec::reference_vinet(), Model::VINet, n10);
        assert!((v.backbone - 270.58).abs() < 1e-9);
        let l = model_gflops(&ArchSpec::reference_baseline(), Model::LateFusion, n10);
        assert!((l.backbone - 2899.10).abs() < 1e-9);
        assert!((v.overall() - 474.21).abs() < 1e-9);
        for m in Model::ALL {
            let a = ArchSpec::for_model(m);
            assert_eq!(
                model_gflops(&a, m, CpCondition::Holistic(1)).overall(),
                model_gflops(&a, m, CpCondition::NoCooperation).overall()
            );
        }
    }

    #[test]
    fn complexity_classes() {
        let ego = CpCondition::Egocentric(10);
        let hol = CpCondition::Holistic(10);
        assert_eq!(complexity(Model::VINet, hol).backbone, "O(1)");
        assert_eq!(complexity(Model::VINet, hol).overall, "O(N)");
        assert_eq!(complexity(Model::FCooper, ego).backbone, "O(K)");
        assert_eq!(complexity(Model::FCooper, ego).overall, "O(N+K)");
        assert_eq!(complexity(Model::LateFusion, ego).overall, "O(N+K+M)");
        assert_eq!(complexity(Model::EarlyFusion, hol).head, "O(M)");
        assert_eq!(comm_complexity(FeatureKind::Shallow, hol), "O(N)");
        assert_eq!(comm_complexity(FeatureKind::Dense, hol), "O(N^2)");
        assert_eq!(comm_complexity(FeatureKind::Early, ego), "O(N)");
    }

    #[test]
    fn bandwidth_examples() {
        assert!((bandwidth_per_transmission(15_000, 64, 4) - 3.84).abs() < 1e-12);
        assert_eq!(bandwidth_per_transmission(0, 64, 4), 0.0);
        let dense = SchemeSpec::dense_uncompressed(&BackboneConfig::reference()).unwrap();
        assert!((dense - 201.326592).abs() < 1e-9);
        let s = SchemeSpec::reference(FeatureKind::Shallow);
        assert!((comm_cost(&s, CpCondition::Holistic(10), false) - 34.56).abs() < 1e-9);
        assert!((comm_cost(&s, CpCondition::Holistic(10), true) - 38.4).abs() < 1e-9);
        let e = SchemeSpec::reference(FeatureKind::Early);
        assert!((comm_cost(&e, CpCondition::Holistic(10), false) - 540.0).abs() < 1e-9);
        for k in FeatureKind::ALL {
            assert_eq!(
                comm_cost(&SchemeSpec::reference(k), CpCondition::Holistic(1), false),
                0.0
            );
        }
    }

    #[test]
    fn gpu_fit_and_roundtrip() {
        let (s, v, d) = GPU_MEASURED;
        let c = fit_gpu_poly(s, v, d, 4).unwrap();
        assert!((c.encoder - 0.823).abs() < 0.005);
        assert!((c.backbone - 1.783).abs() < 0.005);
        assert!((c.head - 0.520).abs() < 0.005);
        assert!(matches!(fit_gpu_poly(s, v, d, 1), Err(Error::Singular(_))));
        let syn = GpuPolyCoeffs::new(0.4, 1.1, 0.3);
        let back = fit_gpu_poly(c_single(&syn), c_vinet(&syn, 6), c_dense(&syn, 6), 6).unwrap();
        assert!((back.encoder - 0.4).abs() < 1e-12);
        assert!((back.backbone - 1.1).abs() < 1e-12);
        assert!((back.head - 0.3).abs() < 1e-12);
    }

    #[test]
    fn gpu_closed_forms() {
        let (s, v, d) = GPU_MEASURED;
        let r = fit_gpu_poly(s, v, d, 4).unwrap().at_published_precision();
        assert!((c_vinet(&r, 10) - 10.50).abs() < 1e-9);
        assert!((c_early_late(&r, 10) - 31.30).abs() < 1e-9);
        assert!((c_vinet(&r, 0) - 2.30).abs() < 1e-9);
    }
}

//! Run configuration read from TOML.
//!
//! Every section is optional. `model.preset` picks the base model
//! (`"reference"` or `"reduced"`) and any key given overrides it. Errors,
//! syntactic or semantic, carry the line and column of the offending value.

use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::Spanned;

use coopsim_core::backbone::BackboneConfig;
use coopsim_core::eval::{Benchmark, EvalConfig};
use coopsim_core::geometry::Region;
use coopsim_core::head::{AnchorPrior, ObjectClass};
use coopsim_core::pipeline::ModelConfig;

use crate::error::{AppError, Result};

/// 1-based line and column of a byte offset.
pub fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

/// Source text plus its path, for turning spans into positioned errors.
pub(crate) struct Source<'a> {
    pub path: &'a Path,
    pub text: &'a str,
}

impl Source<'_> {
    pub fn error(&self, span: Range<usize>, message: impl Into<String>) -> AppError {
        let (line, column) = line_col(self.text, span.start);
        AppError::Config {
            path: self.path.to_path_buf(),
            line,
            column,
            message: message.into(),
        }
    }

    pub fn parse<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        toml::from_str(self.text).map_err(|e| {
            let span = e.span().unwrap_or(0..0);
            self.error(span, e.message().to_string())
        })
    }

    /// Checks `v` with `check`, reporting failures at the value's position.
    pub fn check<T>(&self, v: &Spanned<T>, check: impl FnOnce(&T) -> std::result::Result<(), String>) -> Result<()> {
        check(v.get_ref()).map_err(|m| self.error(v.span(), m))
    }
}

pub(crate) fn positive(v: &f64) -> std::result::Result<(), String> {
    if v.is_finite() && *v > 0.0 {
        Ok(())
    } else {
        Err(format!("must be a positive number, got {v}"))
    }
}

fn nonzero(v: &usize) -> std::result::Result<(), String> {
    if *v > 0 {
        Ok(())
    } else {
        Err("must be positive".into())
    }
}

fn unit_interval(v: &f64) -> std::result::Result<(), String> {
    if *v > 0.0 && *v <= 1.0 {
        Ok(())
    } else {
        Err(format!("must lie in (0, 1], got {v}"))
    }
}

pub(crate) fn range(v: &[f64; 2]) -> std::result::Result<(), String> {
    if v[0].is_finite() && v[1].is_finite() && v[0] < v[1] {
        Ok(())
    } else {
        Err(format!("expected [min, max] with min < max, got [{}, {}]", v[0], v[1]))
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<Spanned<u64>>,
    threads: Option<Spanned<usize>>,
    model: Option<RawModel>,
    weights: Option<RawWeights>,
    eval: Option<RawEval>,
    cost: Option<RawCost>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    preset: Option<Spanned<String>>,
    region: Option<RawRegion>,
    pillars: Option<RawPillars>,
    anchors: Option<RawAnchors>,
    anchor_stride: Option<Spanned<f64>>,
    detect: Option<RawDetect>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawRegion {
    pub x: Spanned<[f64; 2]>,
    pub y: Spanned<[f64; 2]>,
    pub z: Spanned<[f64; 2]>,
}

impl RawRegion {
    pub fn build(&self, src: &Source) -> Result<Region> {
        for r in [&self.x, &self.y, &self.z] {
            src.check(r, |v| range(v))?;
        }
        let (x, y, z) = (self.x.get_ref(), self.y.get_ref(), self.z.get_ref());
        Ok(Region::new((x[0], x[1]), (y[0], y[1]), (z[0], z[1]))?)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPillars {
    voxel: Option<Spanned<[f64; 3]>>,
    /// `[W, H]` in cells.
    grid: Option<Spanned<[usize; 2]>>,
    max_pillars: Option<Spanned<usize>>,
    max_points_per_pillar: Option<Spanned<usize>>,
    channels: Option<Spanned<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnchors {
    rotations_deg: Option<Spanned<Vec<f64>>>,
    prior: Option<Spanned<Vec<RawPrior>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrior {
    class: Spanned<String>,
    /// `[w, l, h]` in meters.
    size: Spanned<[f64; 3]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetect {
    score_thresh: Option<Spanned<f64>>,
    nms_iou: Option<Spanned<f64>>,
    pre_nms_top_k: Option<Spanned<usize>>,
    max_detections: Option<Spanned<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWeights {
    bundle: Option<Spanned<PathBuf>>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEval {
    car_iou: Option<Spanned<f64>>,
    pedestrian_iou: Option<Spanned<f64>>,
    mp_buckets: Option<Spanned<Vec<u32>>>,
    benchmark: Option<Spanned<String>>,
    recall_points: Option<Spanned<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCost {
    count_self: Option<bool>,
}

/// Where model weights come from.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightsSource {
    Seeded(u64),
    Bundle(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub threads: usize,
    pub model: ModelConfig,
    pub weights: WeightsSource,
    pub eval: EvalConfig,
    /// Count `N` rather than `N - 1` transmissions for shallow features.
    pub count_self: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            threads: 1,
            model: ModelConfig::reference(),
            weights: WeightsSource::Seeded(0),
            eval: EvalConfig::default(),
            count_self: false,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::parse(path, &text)
    }

    /// Parses `text`; `path` is used for error messages and to resolve a
    /// relative weight bundle path.
    pub fn parse(path: &Path, text: &str) -> Result<Config> {
        let src = Source { path, text };
        let raw: RawConfig = src.parse()?;
        let mut cfg = Config::default();
        if let Some(s) = &raw.seed {
            cfg.seed = *s.get_ref();
        }
        if let Some(t) = &raw.threads {
            src.check(t, nonzero)?;
            cfg.threads = *t.get_ref();
        }
        if let Some(m) = &raw.model {
            cfg.model = build_model(&src, m)?;
        }
        cfg.weights = WeightsSource::Seeded(cfg.seed);
        if let Some(w) = &raw.weights {
            if let Some(s) = w.seed {
                cfg.weights = WeightsSource::Seeded(s);
            }
            if let Some(b) = &w.bundle {
                let p = b.get_ref();
                let base = path.parent().unwrap_or(Path::new(""));
                cfg.weights = WeightsSource::Bundle(if p.is_absolute() { p.clone() } else { base.join(p) });
            }
        }
        if let Some(e) = &raw.eval {
            cfg.eval = build_eval(&src, e)?;
        }
        if let Some(c) = &raw.cost {
            cfg.count_self = c.count_self.unwrap_or(false);
        }
        Ok(cfg)
    }
}

/// Span of the first `[model` header, where whole-model errors are reported.
fn model_span(src: &Source) -> Range<usize> {
    let start = src.text.find("[model").unwrap_or(0);
    start..start
}

fn build_model(src: &Source, m: &RawModel) -> Result<ModelConfig> {
    let mut cfg = match m.preset.as_ref().map(|p| (p.get_ref().as_str(), p.span())) {
        None | Some(("reference", _)) => ModelConfig::reference(),
        Some(("reduced", _)) => ModelConfig::reduced(),
        Some((other, span)) => {
            return Err(src.error(
                span,
                format!("unknown preset {other:?}, expected \"reference\" or \"reduced\""),
            ))
        }
    };
    if let Some(r) = &m.region {
        cfg.region = r.build(src)?;
    }
    let mut stride_set = false;
    if let Some(p) = &m.pillars {
        let pc = &mut cfg.pillars;
        if let Some(v) = &p.voxel {
            src.check(v, |v| v.iter().try_for_each(positive))?;
            [pc.voxel_dx, pc.voxel_dy, pc.voxel_dz] = *v.get_ref();
        }
        if let Some(g) = &p.grid {
            src.check(g, |g| g.iter().try_for_each(nonzero))?;
            [pc.grid_w, pc.grid_h] = *g.get_ref();
        }
        for (field, slot) in [
            (&p.max_pillars, &mut pc.max_pillars),
            (&p.max_points_per_pillar, &mut pc.max_points_per_pillar),
        ] {
            if let Some(v) = field {
                src.check(v, nonzero)?;
                *slot = *v.get_ref();
            }
        }
        if let Some(c) = &p.channels {
            src.check(c, |c| {
                if *c > 0 && 64 % c == 0 {
                    Ok(())
                } else {
                    Err(format!("channels must divide 64, got {c}"))
                }
            })?;
            pc.channels = *c.get_ref();
        }
    }
    if let Some(s) = &m.anchor_stride {
        src.check(s, positive)?;
        cfg.anchor_stride = *s.get_ref();
        stride_set = true;
    }
    if !stride_set {
        cfg.anchor_stride = 2.0 * cfg.pillars.voxel_dx;
    }
    let fused = cfg
        .fused_shape()
        .map_err(|e| src.error(model_span(src), e.to_string()))?;
    cfg.backbone = BackboneConfig::scaled(64 / cfg.pillars.channels, fused.1, fused.2);
    if let Some(a) = &m.anchors {
        if let Some(r) = &a.rotations_deg {
            src.check(r, |r| {
                if !r.is_empty() && r.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err("rotations_deg must be a non-empty list of finite angles".into())
                }
            })?;
            cfg.anchors.rotations = r.get_ref().iter().map(|d| d.to_radians()).collect();
        }
        if let Some(ps) = &a.prior {
            src.check(ps, |p| {
                if p.is_empty() {
                    Err("at least one anchor prior is required".into())
                } else {
                    Ok(())
                }
            })?;
            let mut priors = Vec::new();
            for p in ps.get_ref() {
                let class = ObjectClass::parse(p.class.get_ref())
                    .ok_or_else(|| src.error(p.class.span(), format!("unknown class {:?}", p.class.get_ref())))?;
                src.check(&p.size, |s| s.iter().try_for_each(positive))?;
                let [w, l, h] = *p.size.get_ref();
                priors.push(AnchorPrior { class, w, l, h });
            }
            cfg.anchors.priors = priors;
        }
    }
    if let Some(d) = &m.detect {
        let dc = &mut cfg.detect;
        if let Some(v) = &d.score_thresh {
            src.check(v, |v| {
                if (0.0..=1.0).contains(v) {
                    Ok(())
                } else {
                    Err(format!("must lie in [0, 1], got {v}"))
                }
            })?;
            dc.score_thresh = *v.get_ref();
        }
        if let Some(v) = &d.nms_iou {
            src.check(v, unit_interval)?;
            dc.nms_iou = *v.get_ref();
        }
        for (field, slot) in [
            (&d.pre_nms_top_k, &mut dc.pre_nms_top_k),
            (&d.max_detections, &mut dc.max_detections),
        ] {
            if let Some(v) = field {
                src.check(v, nonzero)?;
                *slot = *v.get_ref();
            }
        }
    }
    cfg.validate().map_err(|e| src.error(model_span(src), e.to_string()))?;
    Ok(cfg)
}

fn build_eval(src: &Source, e: &RawEval) -> Result<EvalConfig> {
    let mut cfg = EvalConfig::default();
    for (field, slot) in [
        (&e.car_iou, &mut cfg.car_iou),
        (&e.pedestrian_iou, &mut cfg.pedestrian_iou),
    ] {
        if let Some(v) = field {
            src.check(v, unit_interval)?;
            *slot = *v.get_ref();
        }
    }
    if let Some(b) = &e.mp_buckets {
        src.check(b, |b| {
            if !b.is_empty() && b.windows(2).all(|w| w[0] > w[1]) {
                Ok(())
            } else {
                Err("mp_buckets must be non-empty and strictly decreasing".into())
            }
        })?;
        cfg.mp_buckets = b.get_ref().clone();
    }
    if let Some(b) = &e.benchmark {
        cfg.benchmark = match b.get_ref().to_ascii_lowercase().as_str() {
            "bev" => Benchmark::Bev,
            "3d" => Benchmark::ThreeD,
            other => {
                return Err(src.error(
                    b.span(),
                    format!("unknown benchmark {other:?}, expected \"bev\" or \"3d\""),
                ))
            }
        };
    }
    if let Some(r) = &e.recall_points {
        src.check(r, nonzero)?;
        cfg.recall_points = *r.get_ref();
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Config> {
        Config::parse(Path::new("test.toml"), text)
    }

    fn position(e: AppError) -> (usize, usize, String) {
        match e {
            AppError::Config {
                line, column, message, ..
            } => (line, column, message),
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn empty_file_is_reference() {
        let c = parse("").unwrap();
        assert_eq!(c.model, ModelConfig::reference());
        assert_eq!(c.threads, 1);
        assert_eq!(c.weights, WeightsSource::Seeded(0));
    }

    #[test]
    fn reduced_preset_matches_core() {
        let c = parse("[model]\npreset = \"reduced\"\n").unwrap();
        assert_eq!(c.model, ModelConfig::reduced());
    }

    #[test]
    fn shipped_reference_config_matches_core() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.toml");
        let c = Config::load(&path).unwrap();
        assert_eq!(c.model, ModelConfig::reference());
        assert_eq!(c.eval, EvalConfig::default());
        assert!(!c.count_self);
    }

    #[test]
    fn syntax_error_is_positioned() {
        let (line, _, _) = position(parse("seed = 1\n[model\n").unwrap_err());
        assert_eq!(line, 2);
    }

    #[test]
    fn semantic_error_points_at_value() {
        let text = "seed = 3\n\n[model.pillars]\nvoxel = [0.23, -1.0, 4.0]\n";
        let (line, col, msg) = position(parse(text).unwrap_err());
        assert_eq!((line, col), (4, 9));
        assert!(msg.contains("positive"), "{msg}");
    }

    #[test]
    fn unknown_key_is_positioned() {
        let (line, _, msg) = position(parse("[eval]\ncar_iou = 0.7\nbogus = 1\n").unwrap_err());
        assert_eq!(line, 3);
        assert!(msg.contains("bogus"), "{msg}");
    }

    #[test]
    fn bad_preset_and_buckets() {
        let (line, _, _) = position(parse("[model]\npreset = \"huge\"\n").unwrap_err());
        assert_eq!(line, 2);
        let (line, _, _) = position(parse("[eval]\n\nmp_buckets = [1, 5, 10]\n").unwrap_err());
        assert_eq!(line, 3);
        assert_eq!(parse("threads = 0").unwrap_err().exit_code(), crate::error::EXIT_CONFIG);
    }

    #[test]
    fn inconsistent_grid_is_rejected() {
        let text = "[model]\npreset = \"reduced\"\n[model.pillars]\ngrid = [8, 8]\n";
        let (line, _, msg) = position(parse(text).unwrap_err());
        assert_eq!(line, 1);
        assert!(msg.contains("cover"), "{msg}");
    }

    #[test]
    fn bundle_path_is_relative_to_config() {
        let c = Config::parse(Path::new("/etc/run/c.toml"), "[weights]\nbundle = \"w.cswb\"\n").unwrap();
        assert_eq!(c.weights, WeightsSource::Bundle(PathBuf::from("/etc/run/w.cswb")));
    }

    #[test]
    fn line_col_counts_from_one() {
        assert_eq!(line_col("ab\ncd", 0), (1, 1));
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
    }
}

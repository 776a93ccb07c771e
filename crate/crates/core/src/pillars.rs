//! Pillar voxelization and the lightweight per-pillar encoder.
//!
//! Each node kind owns its own [`EncoderParams`]; the vehicle and
//! infrastructure encoders share structure but never parameters.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Point, PointCloud, Region};
use crate::math;
use crate::node::{NodeId, Stream};
use crate::{Error, Result};

/// Width of the augmented per-point feature.
pub const POINT_FEATURE_DIM: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PillarConfig {
    pub voxel_dx: f64,
    pub voxel_dy: f64,
    pub voxel_dz: f64,
    pub max_pillars: usize,
    pub max_points_per_pillar: usize,
    pub grid_w: usize,
    pub grid_h: usize,
    /// Encoder output width.
    pub channels: usize,
}

impl PillarConfig {
    /// 0.23 m pillars over a 1024 x 512 grid, 15,000 pillars at inference.
    pub fn reference() -> Self {
        PillarConfig {
            voxel_dx: 0.23,
            voxel_dy: 0.23,
            voxel_dz: 4.0,
            max_pillars: 15_000,
            max_points_per_pillar: 32,
            grid_w: 1024,
            grid_h: 512,
            channels: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes_ok = [self.voxel_dx, self.voxel_dy, self.voxel_dz]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !sizes_ok {
            return Err(Error::Config("voxel sizes must be positive".into()));
        }
        if self.max_pillars == 0 || self.max_points_per_pillar == 0 {
            return Err(Error::Config(
                "pillar and per-pillar point caps must be positive".into(),
            ));
        }
        if self.grid_w == 0 || self.grid_h == 0 || self.channels == 0 {
            return Err(Error::Config(
                "grid dimensions and channel count must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Grid cell of a point, clamped into the grid.
    pub fn cell_of(&self, p: &Point, region: &Region) -> (u32, u32) {
        let fx = math::floor((p.x - region.x_min) / self.voxel_dx);
        let fy = math::floor((p.y - region.y_min) / self.voxel_dy);
        let ix = fx.clamp(0.0, (self.grid_w - 1) as f64) as u32;
        let iy = fy.clamp(0.0, (self.grid_h - 1) as f64) as u32;
        (ix, iy)
    }

    pub fn cell_center(&self, ix: u32, iy: u32, region: &Region) -> (f64, f64) {
        (
            region.x_min + (ix as f64 + 0.5) * self.voxel_dx,
            region.y_min + (iy as f64 + 0.5) * self.voxel_dy,
        )
    }
}

/// Points that fell into one grid column, truncated to the per-pillar cap.
#[derive(Debug, Clone, PartialEq)]
pub struct Pillar {
    pub cell_ix: u32,
    pub cell_iy: u32,
    pub points: Vec<Point>,
}

impl Pillar {
    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    fn raster_key(&self, grid_w: usize) -> usize {
        self.cell_iy as usize * grid_w + self.cell_ix as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Voxelized {
    /// Retained pillars in raster order (row `cell_iy`, then `cell_ix`).
    pub pillars: Vec<Pillar>,
    /// Points discarded by either the per-pillar or the pillar-count cap.
    pub truncated: usize,
}

impl Voxelized {
    pub fn retained_points(&self) -> usize {
        self.pillars.iter().map(Pillar::n_points).sum()
    }
}

/// Groups a geo-fenced global cloud into pillars.
///
/// Per-pillar points keep arrival order up to `max_points_per_pillar`.
/// When more than `max_pillars` cells are occupied, the fullest pillars win,
/// ties broken by raster order.
pub fn voxelize(cloud: &PointCloud, cfg: &PillarConfig, region: &Region) -> Result<Voxelized> {
    cloud.require_global()?;
    cfg.validate()?;

    let mut cells: BTreeMap<usize, Pillar> = BTreeMap::new();
    let mut truncated = 0usize;
    for p in cloud.points() {
        let (ix, iy) = cfg.cell_of(p, region);
        let key = iy as usize * cfg.grid_w + ix as usize;
        let pillar = cells.entry(key).or_insert_with(|| Pillar {
            cell_ix: ix,
            cell_iy: iy,
            points: Vec::new(),
        });
        if pillar.points.len() < cfg.max_points_per_pillar {
            pillar.points.push(*p);
        } else {
            truncated += 1;
        }
    }

    let mut pillars: Vec<Pillar> = cells.into_values().collect();
    if pillars.len() > cfg.max_pillars {
        // BTreeMap iteration is raster order, so a stable sort keeps ties raster-ordered.
        pillars.sort_by(|a, b| b.n_points().cmp(&a.n_points()));
        truncated += pillars[cfg.max_pillars..].iter().map(Pillar::n_points).sum::<usize>();
        pillars.truncate(cfg.max_pillars);
        pillars.sort_by_key(|p| p.raster_key(cfg.grid_w));
    }
    Ok(Voxelized { pillars, truncated })
}

/// `[x, y, z, i, x_c, y_c, z_c, x_p, y_p]` for every point of the pillar:
/// offsets from the pillar's point mean (`_c`) and cell centre (`_p`).
pub fn augment(pillar: &Pillar, cfg: &PillarConfig, region: &Region) -> Vec<[f64; POINT_FEATURE_DIM]> {
    let n = pillar.points.len();
    if n == 0 {
        return Vec::new();
    }
    // Summed in sorted order so the mean is independent of point order.
    let mean = |f: fn(&Point) -> f64| {
        let mut v: Vec<f64> = pillar.points.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        v.iter().sum::<f64>() / n as f64
    };
    let (mx, my, mz) = (mean(|p| p.x), mean(|p| p.y), mean(|p| p.z));
    let (cx, cy) = cfg.cell_center(pillar.cell_ix, pillar.cell_iy, region);
    pillar
        .points
        .iter()
        .map(|p| [p.x, p.y, p.z, p.i, p.x - mx, p.y - my, p.z - mz, p.x - cx, p.y - cy])
        .collect()
}

/// One stream's dense layer: `9 x C` row-major weights plus `C` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    stream: Stream,
    channels: usize,
    weight: Vec<f32>,
    bias: Vec<f32>,
}

impl EncoderParams {
    pub fn new(stream: Stream, channels: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if weight.len() != POINT_FEATURE_DIM * channels || bias.len() != channels {
            return Err(Error::Config(format!(
                "encoder expects {} weights and {channels} biases, got {} and {}",
                POINT_FEATURE_DIM * channels,
                weight.len(),
                bias.len()
            )));
        }
        if !weight.iter().chain(bias.iter()).all(|v| v.is_finite()) {
            return Err(Error::Config("encoder parameters must be finite".into()));
        }
        Ok(EncoderParams {
            stream,
            channels,
            weight,
            bias,
        })
    }

    pub fn zeros(stream: Stream, channels: usize) -> Self {
        EncoderParams {
            stream,
            channels,
            weight: vec![0.0; POINT_FEATURE_DIM * channels],
            bias: vec![0.0; channels],
        }
    }

    /// Deterministic uniform init; the stream is mixed into the seed so the
    /// two encoders never alias even when given the same seed.
    pub fn seeded(stream: Stream, channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(match stream {
            Stream::Vehicle => 1,
            Stream::Infrastructure => 2,
        });
        let bound = 1.0 / math::sqrt(POINT_FEATURE_DIM as f64);
        let mut draw = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.random_range(-bound..=bound) as f32).collect() };
        let weight = draw(POINT_FEATURE_DIM * channels);
        let bias = draw(channels);
        EncoderParams {
            stream,
            channels,
            weight,
            bias,
        }
    }

    /// Folds a following per-channel affine (inference batch norm) into the layer.
    pub fn fold_affine(mut self, scale: &[f32], shift: &[f32]) -> Result<Self> {
        if scale.len() != self.channels || shift.len() != self.channels {
            return Err(Error::Config("affine fold length differs from channel count".into()));
        }
        for d in 0..POINT_FEATURE_DIM {
            for c in 0..self.channels {
                let w = &mut self.weight[d * self.channels + c];
                *w = (*w as f64 * scale[c] as f64) as f32;
            }
        }
        for c in 0..self.channels {
            self.bias[c] = (self.bias[c] as f64 * scale[c] as f64 + shift[c] as f64) as f32;
        }
        Ok(self)
    }

    pub fn stream(&self) -> Stream {
        self.stream
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn weight(&self) -> &[f32] {
        &self.weight
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn with_stream(mut self, stream: Stream) -> Self {
        self.stream = stream;
        self
    }
}

/// Sparse encoder output: one `C`-vector per occupied cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PillarFeatures {
    pub node: NodeId,
    pub stream: Stream,
    pub channels: usize,
    /// `(cell_ix, cell_iy)` per pillar.
    pub cells: Vec<(u32, u32)>,
    /// Row-major `P x C`.
    pub features: Vec<f32>,
}

impl PillarFeatures {
    pub fn empty(node: NodeId, stream: Stream, channels: usize) -> Self {
        PillarFeatures {
            node,
            stream,
            channels,
            cells: Vec::new(),
            features: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn feature(&self, idx: usize) -> &[f32] {
        &self.features[idx * self.channels..(idx + 1) * self.channels]
    }
}

/// Affine + ReLU on every augmented point, then channel-wise max.
pub fn encode_points(points: &[[f64; POINT_FEATURE_DIM]], params: &EncoderParams) -> Vec<f32> {
    let c = params.channels;
    let mut pooled = vec![0.0f32; c];
    let mut act = vec![0.0f64; c];
    for v in points {
        act.iter_mut().zip(&params.bias).for_each(|(a, &b)| *a = b as f64);
        for (d, &vd) in v.iter().enumerate() {
            let row = &params.weight[d * c..(d + 1) * c];
            for (a, &w) in act.iter_mut().zip(row) {
                *a += vd * w as f64;
            }
        }
        for (m, &a) in pooled.iter_mut().zip(&act) {
            // ReLU folded in: pooled starts at zero.
            let a = a as f32;
            if a > *m {
                *m = a;
            }
        }
    }
    pooled
}

pub fn lfe_encode(
    pillars: &[Pillar],
    params: &EncoderParams,
    cfg: &PillarConfig,
    region: &Region,
    node: NodeId,
) -> Result<PillarFeatures> {
    if params.channels != cfg.channels {
        return Err(Error::Config(format!(
            "encoder has {} channels, pillar config expects {}",
            params.channels, cfg.channels
        )));
    }
    if pillars.len() > cfg.max_pillars {
        return Err(Error::Config(format!(
            "{} pillars exceed the cap of {}",
            pillars.len(),
            cfg.max_pillars
        )));
    }
    let mut out = PillarFeatures::empty(node, params.stream, params.channels);
    out.cells.reserve(pillars.len());
    out.features.reserve(pillars.len() * params.channels);
    for pillar in pillars {
        let aug = augment(pillar, cfg, region);
        out.cells.push((pillar.cell_ix, pillar.cell_iy));
        out.features.extend(encode_points(&aug, params));
    }
    Ok(out)
}

//! Two-stream fusion: pillar scatter, per-stream max fusion and the
//! cross-stream concat + strided convolution.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::nn::{self, AffineNorm, ConvKernel, Tensor3};
use crate::node::{NodeId, Stream};
use crate::pillars::PillarFeatures;
use crate::{Error, Result};

/// Channel order used when the two stream tensors are concatenated.
pub const CONCAT_ORDER: [Stream; 2] = [Stream::Infrastructure, Stream::Vehicle];

/// Dense BEV pseudo-image for one node. Cells without a pillar are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatureMap {
    pub node: NodeId,
    pub stream: Stream,
    pub map: Tensor3,
}

/// Output of the fusion stage, input to the backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeatures(pub Tensor3);

impl FusedFeatures {
    pub fn tensor(&self) -> &Tensor3 {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor3 {
        self.0
    }
}

pub fn scatter(pf: &PillarFeatures, grid_h: usize, grid_w: usize) -> Result<NodeFeatureMap> {
    let mut map = Tensor3::zeros(pf.channels, grid_h, grid_w);
    if pf.features.len() != pf.cells.len() * pf.channels {
        return Err(Error::Invariant(format!(
            "{} feature values for {} pillars of width {}",
            pf.features.len(),
            pf.cells.len(),
            pf.channels
        )));
    }
    for (idx, &(ix, iy)) in pf.cells.iter().enumerate() {
        let (ix, iy) = (ix as usize, iy as usize);
        if ix >= grid_w || iy >= grid_h {
            return Err(Error::Invariant(format!(
                "pillar cell ({ix}, {iy}) outside the {grid_w}x{grid_h} grid"
            )));
        }
        for (c, &v) in pf.feature(idx).iter().enumerate() {
            map.set(c, iy, ix, v);
        }
    }
    Ok(NodeFeatureMap {
        node: pf.node,
        stream: pf.stream,
        map,
    })
}

/// Elementwise max over one stream's node maps. No maps yields zeros of
/// `shape`, which is how an absent stream (e.g. no vehicles) enters fusion.
pub fn stream_fuse(maps: &[NodeFeatureMap], stream: Stream, shape: (usize, usize, usize)) -> Result<Tensor3> {
    if let Some(bad) = maps.iter().find(|m| m.stream != stream) {
        return Err(Error::StreamMismatch {
            expected: stream,
            found: bad.stream,
        });
    }
    if maps.is_empty() {
        let (c, h, w) = shape;
        return Ok(Tensor3::zeros(c, h, w));
    }
    let refs: Vec<&Tensor3> = maps.iter().map(|m| &m.map).collect();
    let fused = nn::elementwise_max(&refs)?;
    if fused.shape() != shape {
        return Err(Error::shape(
            "stream_fuse",
            format!("node maps are {:?}, expected {:?}", fused.shape(), shape),
        ));
    }
    Ok(fused)
}

/// Parameters of the cross-stream convolution (3x3, stride 2, padding 1).
#[derive(Debug, Clone, PartialEq)]
pub struct TsfParams {
    pub conv: ConvKernel,
    pub norm: AffineNorm,
}

impl TsfParams {
    pub const STRIDE: usize = 2;
    pub const PADDING: usize = 1;
    pub const KERNEL: usize = 3;

    pub fn zeros(channels: usize) -> Self {
        TsfParams {
            conv: ConvKernel::zeros(channels, 2 * channels, Self::KERNEL),
            norm: AffineNorm::identity(channels),
        }
    }

    pub fn seeded<R: Rng>(rng: &mut R, channels: usize) -> Self {
        TsfParams {
            conv: ConvKernel::seeded(rng, channels, 2 * channels, Self::KERNEL),
            norm: AffineNorm::identity(channels),
        }
    }
}

/// Concat in [`CONCAT_ORDER`], then conv + affine norm + ReLU.
pub fn tsf_fuse(s_veh: &Tensor3, s_inf: &Tensor3, params: &TsfParams) -> Result<FusedFeatures> {
    if s_veh.shape() != s_inf.shape() {
        return Err(Error::shape(
            "tsf_fuse",
            format!(
                "vehicle stream {:?} vs infrastructure stream {:?}",
                s_veh.shape(),
                s_inf.shape()
            ),
        ));
    }
    let ordered: Vec<&Tensor3> = CONCAT_ORDER
        .iter()
        .map(|s| match s {
            Stream::Infrastructure => s_inf,
            Stream::Vehicle => s_veh,
        })
        .collect();
    let stacked = nn::concat_channels(&ordered)?;
    let mut out = nn::conv2d(&stacked, &params.conv, TsfParams::STRIDE, TsfParams::PADDING)?;
    nn::affine_norm_inplace(&mut out, &params.norm)?;
    nn::relu_inplace(&mut out);
    Ok(FusedFeatures(out))
}

/// Splits maps by stream, fuses each stream, then fuses across streams.
pub fn fuse_nodes(maps: &[NodeFeatureMap], shape: (usize, usize, usize), params: &TsfParams) -> Result<FusedFeatures> {
    let (veh, inf) = stream_maxes(maps, shape)?;
    tsf_fuse(&veh, &inf, params)
}

/// `(vehicle, infrastructure)` stream tensors.
pub fn stream_maxes(maps: &[NodeFeatureMap], shape: (usize, usize, usize)) -> Result<(Tensor3, Tensor3)> {
    let (veh, inf): (Vec<NodeFeatureMap>, Vec<NodeFeatureMap>) =
        maps.iter().cloned().partition(|m| m.stream == Stream::Vehicle);
    Ok((
        stream_fuse(&veh, Stream::Vehicle, shape)?,
        stream_fuse(&inf, Stream::Infrastructure, shape)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn features(node: u32, stream: Stream, cells: Vec<(u32, u32)>, c: usize, seed: u64) -> PillarFeatures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = (0..cells.len() * c).map(|_| rng.random_range(0.0f32..2.0)).collect();
        PillarFeatures {
            node: NodeId(node),
            stream,
            channels: c,
            cells,
            features,
        }
    }

    #[test]
    fn scatter_empty_is_zero() {
        let pf = PillarFeatures::empty(NodeId(0), Stream::Vehicle, 3);
        let m = scatter(&pf, 4, 5).unwrap();
        assert_eq!(m.map, Tensor3::zeros(3, 4, 5));
    }

    #[test]
    fn scatter_single_pillar_at_origin() {
        let pf = features(0, Stream::Vehicle, vec![(0, 0)], 3, 1);
        let m = scatter(&pf, 4, 5).unwrap();
        for c in 0..3 {
            assert_eq!(m.map.get(c, 0, 0), pf.features[c]);
        }
        assert_eq!(m.map.sum(), pf.features.iter().map(|&v| v as f64).sum::<f64>());
    }

    #[test]
    fn scatter_preserves_total() {
        let pf = features(0, Stream::Vehicle, vec![(1, 2), (4, 0), (0, 3), (2, 2)], 6, 2);
        let m = scatter(&pf, 4, 5).unwrap();
        let expect: f64 = pf.features.iter().map(|&v| v as f64).sum();
        assert!((m.map.sum() - expect).abs() < 1e-9);
        assert_eq!(m.map.get(2, 0, 4), pf.feature(1)[2]);
    }

    #[test]
    fn scatter_rejects_out_of_grid() {
        let pf = features(0, Stream::Vehicle, vec![(5, 0)], 2, 3);
        assert!(matches!(scatter(&pf, 4, 5), Err(Error::Invariant(_))));
    }

    #[test]
    fn stream_fuse_cases() {
        let a = scatter(&features(0, Stream::Vehicle, vec![(1, 1), (2, 3)], 2, 4), 4, 5).unwrap();
        let b = scatter(&features(1, Stream::Vehicle, vec![(1, 1), (0, 0)], 2, 5), 4, 5).unwrap();
        let shape = (2, 4, 5);
        assert_eq!(stream_fuse(&[a.clone()], Stream::Vehicle, shape).unwrap(), a.map);
        assert_eq!(
            stream_fuse(&[a.clone(), a.clone()], Stream::Vehicle, shape).unwrap(),
            a.map
        );
        assert_eq!(
            stream_fuse(&[], Stream::Vehicle, shape).unwrap(),
            Tensor3::zeros(2, 4, 5)
        );

        let m = stream_fuse(&[a.clone(), b.clone()], Stream::Vehicle, shape).unwrap();
        for i in 0..m.data().len() {
            let (x, y) = (a.map.data()[i], b.map.data()[i]);
            assert_eq!(m.data()[i], if x >= y { x } else { y });
        }
    }

    #[test]
    fn stream_fuse_rejects_mixed_streams() {
        let a = scatter(&features(0, Stream::Vehicle, vec![(1, 1)], 2, 4), 4, 5).unwrap();
        let b = scatter(&features(1, Stream::Infrastructure, vec![(0, 0)], 2, 5), 4, 5).unwrap();
        assert!(matches!(
            stream_fuse(&[a, b], Stream::Vehicle, (2, 4, 5)),
            Err(Error::StreamMismatch { .. })
        ));
    }

    #[test]
    fn tsf_zero_inputs_zero_output() {
        let z = Tensor3::zeros(4, 8, 16);
        let out = tsf_fuse(&z, &z, &TsfParams::zeros(4)).unwrap();
        assert_eq!(out.0, Tensor3::zeros(4, 4, 8));
    }

    #[test]
    fn tsf_matches_composed_primitives() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = 4;
        let veh = Tensor3::from_vec(c, 16, 32, (0..c * 512).map(|_| rng.random_range(0.0f32..1.0)).collect()).unwrap();
        let inf = Tensor3::from_vec(c, 16, 32, (0..c * 512).map(|_| rng.random_range(0.0f32..1.0)).collect()).unwrap();
        let params = TsfParams::seeded(&mut rng, c);
        let got = tsf_fuse(&veh, &inf, &params).unwrap();
        let cat = nn::concat_channels(&[&inf, &veh]).unwrap();
        let expect = nn::relu(&nn::affine_norm(&nn::conv2d(&cat, &params.conv, 2, 1).unwrap(), &params.norm).unwrap());
        assert_eq!(got.0, expect);
        assert_eq!(got.0.shape(), (4, 8, 16));
    }

    #[test]
    fn swapping_streams_changes_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let c = 2;
        let a = Tensor3::from_vec(c, 8, 8, (0..c * 64).map(|_| rng.random_range(0.0f32..1.0)).collect()).unwrap();
        let b = Tensor3::zeros(c, 8, 8);
        let params = TsfParams::seeded(&mut rng, c);
        assert_ne!(tsf_fuse(&a, &b, &params).unwrap(), tsf_fuse(&b, &a, &params).unwrap());
    }
}

//! Central feature backbone: three strided conv stages, one deconv branch per
//! stage back to the stage-1 resolution, and a channel concat of the branches.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::nn::{self, AffineNorm, ConvKernel, DeconvKernel, Tensor3};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Deconv,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
    /// Affine norm followed by ReLU.
    pub norm_relu: bool,
}

impl LayerSpec {
    pub const fn conv(cin: usize, cout: usize, stride: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv,
            cin,
            cout,
            k: 3,
            stride,
            padding: 1,
            output_padding: 0,
            norm_relu: true,
        }
    }

    pub const fn deconv(cin: usize, cout: usize, stride: usize, padding: usize, output_padding: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Deconv,
            cin,
            cout,
            k: 3,
            stride,
            padding,
            output_padding,
            norm_relu: true,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        match self.kind {
            LayerKind::Conv => Some((
                nn::conv_output_size(h, self.k, self.stride, self.padding)?,
                nn::conv_output_size(w, self.k, self.stride, self.padding)?,
            )),
            LayerKind::Deconv => Some((
                nn::deconv_output_size(h, self.k, self.stride, self.padding, self.output_padding)?,
                nn::deconv_output_size(w, self.k, self.stride, self.padding, self.output_padding)?,
            )),
        }
    }
}

/// Stage layer chains plus one upsampling layer per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    /// `(C, H, W)` of the fused input.
    pub input: (usize, usize, usize),
    pub stages: Vec<Vec<LayerSpec>>,
    /// `upsample[i]` consumes the output of `stages[i]`.
    pub upsample: Vec<LayerSpec>,
}

impl BackboneConfig {
    /// Layer chain for a `64 x 256 x 512` input and `384 x 256 x 512` output.
    pub fn reference() -> Self {
        Self::scaled(1, 256, 512)
    }

    /// Same topology with every channel count divided by `channel_div`.
    pub fn scaled(channel_div: usize, h: usize, w: usize) -> Self {
        let c = |n: usize| n / channel_div;
        let stage = |cin: usize, cout: usize, stride: usize, repeat: usize| {
            let mut v = Vec::with_capacity(repeat + 1);
            if stride != 1 || cin != cout {
                v.push(LayerSpec::conv(cin, cout, stride));
            }
            v.extend(core::iter::repeat_n(LayerSpec::conv(cout, cout, 1), repeat));
            v
        };
        BackboneConfig {
            input: (c(64), h, w),
            stages: alloc::vec![
                stage(c(64), c(64), 1, 3),
                stage(c(64), c(128), 2, 5),
                stage(c(128), c(256), 2, 5),
            ],
            upsample: alloc::vec![
                LayerSpec::deconv(c(64), c(128), 1, 1, 0),
                LayerSpec::deconv(c(128), c(128), 2, 1, 1),
                LayerSpec::deconv(c(256), c(128), 4, 0, 1),
            ],
        }
    }

    /// Layers in weight-bundle order: every stage layer, then the upsamplers.
    pub fn layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.stages.iter().flatten().chain(self.upsample.iter())
    }

    pub fn layer_count(&self) -> usize {
        self.layers().count()
    }

    pub fn layer_name(i: usize) -> String {
        format!("cfb.layer{i}")
    }

    pub fn output_channels(&self) -> usize {
        self.upsample.iter().map(|l| l.cout).sum()
    }

    /// Checks the chain end to end; returns each layer's output shape.
    pub fn trace_shapes(&self) -> Result<Vec<(String, (usize, usize, usize))>> {
        if self.stages.len() != self.upsample.len() || self.stages.is_empty() {
            return Err(Error::Config("backbone needs one upsample layer per stage".into()));
        }
        let mut out = Vec::new();
        let (mut c, mut h, mut w) = self.input;
        let mut idx = 0;
        let mut stage_out = Vec::new();
        for stage in &self.stages {
            for l in stage {
                (c, h, w) = step(l, idx, (c, h, w))?;
                out.push((Self::layer_name(idx), (c, h, w)));
                idx += 1;
            }
            stage_out.push((c, h, w));
        }
        let mut target = None;
        for (l, &shape) in self.upsample.iter().zip(&stage_out) {
            let s = step(l, idx, shape)?;
            match target {
                None => target = Some((s.1, s.2)),
                Some(t) if t != (s.1, s.2) => {
                    return Err(Error::Config(format!(
                        "{}: upsampled to {}x{}, other branches are {}x{}",
                        Self::layer_name(idx),
                        s.1,
                        s.2,
                        t.0,
                        t.1
                    )))
                }
                _ => {}
            }
            out.push((Self::layer_name(idx), s));
            idx += 1;
        }
        let (h, w) = target.unwrap_or((h, w));
        out.push((String::from("cfb.concat"), (self.output_channels(), h, w)));
        Ok(out)
    }

    pub fn output_shape(&self) -> Result<(usize, usize, usize)> {
        Ok(self.trace_shapes()?.last().map(|(_, s)| *s).unwrap_or(self.input))
    }
}

fn step(l: &LayerSpec, idx: usize, (c, h, w): (usize, usize, usize)) -> Result<(usize, usize, usize)> {
    if l.cin != c {
        return Err(Error::Config(format!(
            "{}: expects {} input channels, receives {c}",
            BackboneConfig::layer_name(idx),
            l.cin
        )));
    }
    let (ho, wo) = l.output_hw(h, w).ok_or_else(|| {
        Error::Config(format!(
            "{}: kernel {} stride {} does not fit {h}x{w}",
            BackboneConfig::layer_name(idx),
            l.k,
            l.stride
        ))
    })?;
    Ok((l.cout, ho, wo))
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKernel {
    Conv(ConvKernel),
    Deconv(DeconvKernel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub kernel: LayerKernel,
    pub norm: AffineNorm,
}

impl LayerParams {
    pub fn zeros(spec: &LayerSpec) -> Self {
        let kernel = match spec.kind {
            LayerKind::Conv => LayerKernel::Conv(ConvKernel::zeros(spec.cout, spec.cin, spec.k)),
            LayerKind::Deconv => LayerKernel::Deconv(DeconvKernel::zeros(spec.cin, spec.cout, spec.k)),
        };
        LayerParams {
            kernel,
            norm: AffineNorm::identity(spec.cout),
        }
    }

    pub fn seeded(spec: &LayerSpec, rng: &mut ChaCha8Rng) -> Self {
        let kernel = match spec.kind {
            LayerKind::Conv => LayerKernel::Conv(ConvKernel::seeded(rng, spec.cout, spec.cin, spec.k)),
            LayerKind::Deconv => LayerKernel::Deconv(DeconvKernel::seeded(rng, spec.cin, spec.cout, spec.k)),
        };
        LayerParams {
            kernel,
            norm: AffineNorm::identity(spec.cout),
        }
    }

    /// Runs one layer: (de)convolution, then norm + ReLU when the layer has them.
    pub fn forward(&self, spec: &LayerSpec, x: &Tensor3) -> Result<Tensor3> {
        let mut y = match (&self.kernel, spec.kind) {
            (LayerKernel::Conv(k), LayerKind::Conv) => nn::conv2d(x, k, spec.stride, spec.padding)?,
            (LayerKernel::Deconv(k), LayerKind::Deconv) => {
                nn::deconv2d(x, k, spec.stride, spec.padding, spec.output_padding)?
            }
            _ => return Err(Error::Config("layer parameters do not match layer kind".into())),
        };
        if spec.norm_relu {
            nn::affine_norm_inplace(&mut y, &self.norm)?;
            nn::relu_inplace(&mut y);
        }
        Ok(y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneWeights {
    pub layers: Vec<LayerParams>,
}

impl BackboneWeights {
    pub fn zeros(cfg: &BackboneConfig) -> Self {
        BackboneWeights {
            layers: cfg.layers().map(LayerParams::zeros).collect(),
        }
    }

    /// Checks layer count, kinds and kernel sizes against `cfg`.
    pub fn validate(&self, cfg: &BackboneConfig) -> Result<()> {
        if self.layers.len() != cfg.layer_count() {
            return Err(Error::Config(format!(
                "backbone weights hold {} layers, configuration has {}",
                self.layers.len(),
                cfg.layer_count()
            )));
        }
        for (i, (spec, p)) in cfg.layers().zip(&self.layers).enumerate() {
            let dims = match &p.kernel {
                LayerKernel::Conv(k) if spec.kind == LayerKind::Conv => Some((k.cin, k.cout, k.k)),
                LayerKernel::Deconv(k) if spec.kind == LayerKind::Deconv => Some((k.cin, k.cout, k.k)),
                _ => None,
            };
            if dims != Some((spec.cin, spec.cout, spec.k)) || p.norm.channels() != spec.cout {
                return Err(Error::shape(
                    "backbone weights",
                    format!(
                        "{}: expected {:?} {}->{} k{}, found {dims:?}",
                        BackboneConfig::layer_name(i),
                        spec.kind,
                        spec.cin,
                        spec.cout,
                        spec.k
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn seeded(cfg: &BackboneConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BackboneWeights {
            layers: cfg.layers().map(|l| LayerParams::seeded(l, &mut rng)).collect(),
        }
    }
}

pub fn cfb_forward(x: &Tensor3, cfg: &BackboneConfig, weights: &BackboneWeights) -> Result<Tensor3> {
    if x.shape() != cfg.input {
        return Err(Error::Config(format!(
            "backbone input is {:?}, configuration expects {:?}",
            x.shape(),
            cfg.input
        )));
    }
    if weights.layers.len() != cfg.layer_count() {
        return Err(Error::Config(format!(
            "{} backbone weight entries for {} layers",
            weights.layers.len(),
            cfg.layer_count()
        )));
    }
    let mut params = weights.layers.iter();
    let mut idx = 0usize;
    let mut run = |spec: &LayerSpec, input: &Tensor3, idx: &mut usize| -> Result<Tensor3> {
        let p = params.next().expect("layer count checked above");
        let y = p.forward(spec, input).map_err(|e| match e {
            Error::Shape { detail, .. } => Error::Config(format!("{}: {detail}", BackboneConfig::layer_name(*idx))),
            other => other,
        })?;
        *idx += 1;
        Ok(y)
    };

    let mut stage_outputs = Vec::with_capacity(cfg.stages.len());
    let mut cur = x.clone();
    for stage in &cfg.stages {
        for spec in stage {
            cur = run(spec, &cur, &mut idx)?;
        }
        stage_outputs.push(cur.clone());
    }
    let mut branches = Vec::with_capacity(cfg.upsample.len());
    for (spec, input) in cfg.upsample.iter().zip(&stage_outputs) {
        branches.push(run(spec, input, &mut idx)?);
    }
    let (h, w) = (branches[0].height(), branches[0].width());
    if branches.iter().any(|b| (b.height(), b.width()) != (h, w)) {
        return Err(Error::Invariant("upsample branches disagree on spatial size".into()));
    }
    let refs: Vec<&Tensor3> = branches.iter().collect();
    nn::concat_channels(&refs)
}

//! Image-pair encoder with dual spatial attention.
//!
//! Both images go through the same convolutional stack. The difference map
//! `X_diff = X_A - X_B` is concatenated with each original map, a shared
//! per-location MLP with a logistic output turns each concatenation into an
//! attention map, and attention-weighted spatial sums give the three feature
//! vectors the decoders read: `l_A`, `l_B` and `l_diff` (the latter attended
//! by the location-wise maximum of both maps).

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{prefixed, Conv2d, Linear, Params};
use crate::tensor::{dot, sigmoid, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    ImageA,
    ImageB,
    Difference,
    Precomputed,
}

/// `(channels, height, width)` activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::shape(format!(
                "{} values for a {channels}x{height}x{width} feature map",
                values.len()
            )));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            values,
            provenance,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn locations(&self) -> usize {
        self.height * self.width
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[c * self.locations() + y * self.width + x]
    }

    /// Channel vector at flat spatial location `s`.
    pub fn column(&self, s: usize) -> Vec<f64> {
        let n = self.locations();
        (0..self.channels).map(|c| self.values[c * n + s]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub height: usize,
    pub width: usize,
    pub weights: Vec<f64>,
}

impl AttentionMap {
    pub fn new(height: usize, width: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != height * width {
            return Err(Error::shape("attention weights do not fill the map"));
        }
        Ok(AttentionMap { height, width, weights })
    }

    pub fn is_valid(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite() && (0.0..=1.0).contains(w))
    }
}

/// Everything the caption decoder and the scene-graph head consume.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub l_a: Vec<f64>,
    pub l_b: Vec<f64>,
    pub l_diff: Vec<f64>,
    pub x_a: FeatureMap,
    pub x_b: FeatureMap,
    pub x_diff: FeatureMap,
    pub a_a: AttentionMap,
    pub a_b: AttentionMap,
}

impl FeatureBundle {
    pub fn streams(&self) -> [&[f64]; 3] {
        [&self.l_a, &self.l_b, &self.l_diff]
    }

    pub fn dim(&self) -> usize {
        self.l_a.len()
    }
}

/// An image converted to `(3, h, w)` floats in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageInput {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ImageInput {
    /// Channel-major pixels scaled to [-0.5, 0.5].
    pub fn from_rgb(img: &image::RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0; 3 * h * w];
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                data[c * h * w + y as usize * w + x as usize] = p.0[c] as f64 / 255.0 - 0.5;
            }
        }
        ImageInput {
            height: h,
            width: w,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Trainable convolutional stack, ReLU after every layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvEncoder {
    pub input_size: usize,
    pub layers: Vec<Conv2d>,
}

/// Layer inputs and outputs of one encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    activations: Vec<Vec<f64>>,
    sizes: Vec<(usize, usize)>,
}

impl ConvEncoder {
    pub fn new<R: Rng>(input_size: usize, specs: &[ConvSpec], rng: &mut R) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        let mut channels = 3;
        let (mut h, mut w) = (input_size, input_size);
        for s in specs {
            let conv = Conv2d::new(channels, s.channels, s.kernel, s.stride, rng);
            (h, w) = conv.output_size(h, w).ok_or_else(|| {
                Error::config(format!("encoder layer {s:?} does not fit a {h}x{w} input"))
            })?;
            channels = s.channels;
            layers.push(conv);
        }
        if layers.is_empty() {
            return Err(Error::config("encoder needs at least one layer"));
        }
        Ok(ConvEncoder { input_size, layers })
    }

    pub fn output_shape(&self) -> (usize, usize, usize) {
        let (mut h, mut w) = (self.input_size, self.input_size);
        for l in &self.layers {
            (h, w) = l.output_size(h, w).expect("validated at construction");
        }
        (self.layers.last().map_or(3, Conv2d::out_channels), h, w)
    }

    pub fn encode(&self, image: &ImageInput, provenance: Provenance) -> Result<FeatureMap> {
        Ok(self.encode_traced(image, provenance)?.0)
    }

    pub fn encode_traced(&self, image: &ImageInput, provenance: Provenance) -> Result<(FeatureMap, EncoderTrace)> {
        if image.height != self.input_size || image.width != self.input_size {
            return Err(Error::shape(format!(
                "image is {}x{}, encoder expects {}x{}",
                image.width, image.height, self.input_size, self.input_size
            )));
        }
        let mut activations = vec![image.data.clone()];
        let mut sizes = vec![(image.height, image.width)];
        for l in &self.layers {
            let (h, w) = *sizes.last().unwrap();
            let out = l.forward(activations.last().unwrap(), h, w);
            sizes.push(l.output_size(h, w).unwrap());
            activations.push(out);
        }
        let (c, h, w) = self.output_shape();
        let map = FeatureMap::new(c, h, w, activations.last().unwrap().clone(), provenance)?;
        Ok((map, EncoderTrace { activations, sizes }))
    }

    pub fn backward(&self, trace: &EncoderTrace, dfeatures: &[f64], grad: &mut ConvEncoder) {
        let mut dout = dfeatures.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (h, w) = trace.sizes[i];
            let input = &trace.activations[i];
            let output = &trace.activations[i + 1];
            let mut din = if i > 0 { Some(vec![0.0; input.len()]) } else { None };
            layer.backward(input, h, w, output, &mut dout, &mut grad.layers[i], din.as_deref_mut());
            match din {
                Some(d) => dout = d,
                None => break,
            }
        }
    }
}

impl Params for ConvEncoder {
    fn params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| prefixed(&format!("conv{i}"), l.params()))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// `X_A - X_B`, elementwise.
pub fn compute_difference(x_a: &FeatureMap, x_b: &FeatureMap) -> Result<FeatureMap> {
    if x_a.shape() != x_b.shape() {
        return Err(Error::shape(format!(
            "difference of {:?} and {:?}",
            x_a.shape(),
            x_b.shape()
        )));
    }
    let values = x_a.values.iter().zip(&x_b.values).map(|(a, b)| a - b).collect();
    FeatureMap::new(x_a.channels, x_a.height, x_a.width, values, Provenance::Difference)
}

/// Per-location MLP over `[x; x_diff]` with a logistic output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialAttention {
    pub hidden: Linear,
    pub out: Linear,
}

/// Hidden pre-activations per location, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pre: Vec<Vec<f64>>,
}

impl SpatialAttention {
    pub fn new<R: Rng>(channels: usize, hidden: usize, rng: &mut R) -> Self {
        SpatialAttention {
            hidden: Linear::new(2 * channels, hidden, rng),
            out: Linear::new(hidden, 1, rng),
        }
    }

    fn concat(x: &FeatureMap, x_diff: &FeatureMap, s: usize) -> Vec<f64> {
        let mut v = x.column(s);
        v.extend(x_diff.column(s));
        v
    }

    pub fn forward(&self, x: &FeatureMap, x_diff: &FeatureMap) -> Result<AttentionMap> {
        Ok(self.forward_traced(x, x_diff)?.0)
    }

    pub fn forward_traced(&self, x: &FeatureMap, x_diff: &FeatureMap) -> Result<(AttentionMap, AttentionTrace)> {
        if x.shape() != x_diff.shape() {
            return Err(Error::shape(format!(
                "attention over {:?} and {:?}",
                x.shape(),
                x_diff.shape()
            )));
        }
        if 2 * x.channels != self.hidden.inputs() {
            return Err(Error::shape(format!(
                "attention expects {} channels, got {}",
                self.hidden.inputs() / 2,
                x.channels
            )));
        }
        let mut weights = Vec::with_capacity(x.locations());
        let mut pre = Vec::with_capacity(x.locations());
        for s in 0..x.locations() {
            let u = self.hidden.forward(&Self::concat(x, x_diff, s));
            let h: Vec<f64> = u.iter().map(|v| v.max(0.0)).collect();
            let z = self.out.bias.data[0] + dot(&self.out.weight.data, &h);
            weights.push(sigmoid(z));
            pre.push(u);
        }
        Ok((AttentionMap::new(x.height, x.width, weights)?, AttentionTrace { pre }))
    }

    /// Backpropagates `dweights` into the parameters and both input maps.
    pub fn backward(
        &self,
        x: &FeatureMap,
        x_diff: &FeatureMap,
        attn: &AttentionMap,
        trace: &AttentionTrace,
        dweights: &[f64],
        grad: &mut SpatialAttention,
        dx: &mut [f64],
        dx_diff: &mut [f64],
    ) {
        let n = x.locations();
        let c = x.channels;
        let mut dcat = vec![0.0; 2 * c];
        for s in 0..n {
            let a = attn.weights[s];
            let dz = dweights[s] * a * (1.0 - a);
            if dz == 0.0 {
                continue;
            }
            let u = &trace.pre[s];
            let h: Vec<f64> = u.iter().map(|v| v.max(0.0)).collect();
            grad.out.bias.data[0] += dz;
            let mut du = vec![0.0; u.len()];
            for (k, &uk) in u.iter().enumerate() {
                grad.out.weight.data[k] += dz * h[k];
                if uk > 0.0 {
                    du[k] = dz * self.out.weight.data[k];
                }
            }
            dcat.fill(0.0);
            self.hidden.backward(&Self::concat(x, x_diff, s), &du, &mut grad.hidden, Some(&mut dcat));
            for ch in 0..c {
                dx[ch * n + s] += dcat[ch];
                dx_diff[ch * n + s] += dcat[c + ch];
            }
        }
    }
}

impl Params for SpatialAttention {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut v = prefixed("hidden", self.hidden.params());
        v.extend(prefixed("out", self.out.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.hidden.params_mut();
        v.extend(self.out.params_mut());
        v
    }
}

/// Spatial sum of `a(h, w) * x(:, h, w)`.
pub fn attended_feature(x: &FeatureMap, a: &AttentionMap) -> Result<Vec<f64>> {
    if (x.height, x.width) != (a.height, a.width) {
        return Err(Error::shape(format!(
            "attention {}x{} over feature map {}x{}",
            a.height, a.width, x.height, x.width
        )));
    }
    let n = x.locations();
    Ok((0..x.channels)
        .map(|c| dot(&x.values[c * n..(c + 1) * n], &a.weights))
        .collect())
}

/// Location-wise maximum, used to attend the difference map.
pub fn max_attention(a: &AttentionMap, b: &AttentionMap) -> AttentionMap {
    AttentionMap {
        height: a.height,
        width: a.width,
        weights: a.weights.iter().zip(&b.weights).map(|(x, y)| x.max(*y)).collect(),
    }
}

/// Traces needed to backpropagate through [`dual_attention`].
#[derive(Debug, Clone)]
pub struct DualAttentionTrace {
    trace_a: AttentionTrace,
    trace_b: AttentionTrace,
}

/// Difference, both attention maps and the three attended vectors.
pub fn dual_attention(
    x_a: FeatureMap,
    x_b: FeatureMap,
    attention: &SpatialAttention,
) -> Result<(FeatureBundle, DualAttentionTrace)> {
    let x_diff = compute_difference(&x_a, &x_b)?;
    let (a_a, trace_a) = attention.forward_traced(&x_a, &x_diff)?;
    let (a_b, trace_b) = attention.forward_traced(&x_b, &x_diff)?;
    let l_a = attended_feature(&x_a, &a_a)?;
    let l_b = attended_feature(&x_b, &a_b)?;
    let l_diff = attended_feature(&x_diff, &max_attention(&a_a, &a_b))?;
    Ok((
        FeatureBundle {
            l_a,
            l_b,
            l_diff,
            x_a,
            x_b,
            x_diff,
            a_a,
            a_b,
        },
        DualAttentionTrace { trace_a, trace_b },
    ))
}

/// Gradients flowing into the bundle from the heads and regularisers.
#[derive(Debug, Clone)]
pub struct BundleGrad {
    pub l_a: Vec<f64>,
    pub l_b: Vec<f64>,
    pub l_diff: Vec<f64>,
    /// Direct gradients on the attention weights (the L1 term).
    pub a_a: Vec<f64>,
    pub a_b: Vec<f64>,
}

impl BundleGrad {
    pub fn zeros(channels: usize, locations: usize) -> Self {
        BundleGrad {
            l_a: vec![0.0; channels],
            l_b: vec![0.0; channels],
            l_diff: vec![0.0; channels],
            a_a: vec![0.0; locations],
            a_b: vec![0.0; locations],
        }
    }
}

/// Backward pass of [`dual_attention`]; returns gradients on `X_A`, `X_B`.
pub fn dual_attention_backward(
    bundle: &FeatureBundle,
    trace: &DualAttentionTrace,
    attention: &SpatialAttention,
    g: &BundleGrad,
    grad: &mut SpatialAttention,
) -> (Vec<f64>, Vec<f64>) {
    let n = bundle.x_a.locations();
    let c = bundle.x_a.channels;
    let mut dx_a = vec![0.0; c * n];
    let mut dx_b = vec![0.0; c * n];
    let mut dx_diff = vec![0.0; c * n];
    let mut da_a = g.a_a.clone();
    let mut da_b = g.a_b.clone();
    for s in 0..n {
        let (wa, wb) = (bundle.a_a.weights[s], bundle.a_b.weights[s]);
        let wm = wa.max(wb);
        let (mut ga, mut gb, mut gm) = (0.0, 0.0, 0.0);
        for ch in 0..c {
            let i = ch * n + s;
            ga += g.l_a[ch] * bundle.x_a.values[i];
            gb += g.l_b[ch] * bundle.x_b.values[i];
            gm += g.l_diff[ch] * bundle.x_diff.values[i];
            dx_a[i] += wa * g.l_a[ch];
            dx_b[i] += wb * g.l_b[ch];
            dx_diff[i] += wm * g.l_diff[ch];
        }
        da_a[s] += ga;
        da_b[s] += gb;
        if wa >= wb {
            da_a[s] += gm;
        } else {
            da_b[s] += gm;
        }
    }
    attention.backward(&bundle.x_a, &bundle.x_diff, &bundle.a_a, &trace.trace_a, &da_a, grad, &mut dx_a, &mut dx_diff);
    attention.backward(&bundle.x_b, &bundle.x_diff, &bundle.a_b, &trace.trace_b, &da_b, grad, &mut dx_b, &mut dx_diff);
    for (i, d) in dx_diff.iter().enumerate() {
        dx_a[i] += d;
        dx_b[i] -= d;
    }
    (dx_a, dx_b)
}

const FEATURE_MAGIC: &[u8; 8] = b"OPFEAT01";

/// Writes precomputed feature maps.
///
/// Layout, all integers little-endian `u32`: the 8-byte magic `OPFEAT01`,
/// the record count, then per record the id length, the UTF-8 id, `C`, `H`,
/// `W` and `C*H*W` little-endian `f64` values in channel-major order.
pub fn write_features(path: &Path, records: &BTreeMap<String, FeatureMap>) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    f.write_all(FEATURE_MAGIC)?;
    f.write_all(&(records.len() as u32).to_le_bytes())?;
    for (id, map) in records {
        f.write_all(&(id.len() as u32).to_le_bytes())?;
        f.write_all(id.as_bytes())?;
        for d in [map.channels, map.height, map.width] {
            f.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in &map.values {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<BTreeMap<String, FeatureMap>> {
    let bytes = fs::read(path).map_err(|source| Error::Load {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |m: &str| Error::MalformedRecord {
        path: path.to_path_buf(),
        line: 0,
        message: m.to_string(),
    };
    let mut r = bytes.as_slice();
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != FEATURE_MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_le = |r: &mut &[u8]| -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| bad("truncated record"))?;
        Ok(u32::from_le_bytes(b))
    };
    let count = u32_le(&mut r)?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let n = u32_le(&mut r)? as usize;
        if r.len() < n {
            return Err(bad("truncated id"));
        }
        let id = String::from_utf8(r[..n].to_vec()).map_err(|_| bad("id is not UTF-8"))?;
        r = &r[n..];
        let (c, h, w) = (u32_le(&mut r)? as usize, u32_le(&mut r)? as usize, u32_le(&mut r)? as usize);
        let len = c * h * w;
        if r.len() < len * 8 {
            return Err(bad("truncated values"));
        }
        let values = r[..len * 8]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        r = &r[len * 8..];
        out.insert(id, FeatureMap::new(c, h, w, values, Provenance::Precomputed)?);
    }
    Ok(out)
}

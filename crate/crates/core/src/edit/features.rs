//! Feature extraction for image-driven stylization and the losses built on it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;

/// Feature maps used for nearest-neighbour matching plus one global embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub maps: Vec<Image>,
    pub embedding: Vec<f64>,
}

impl Features {
    pub fn zeros_like(&self) -> Features {
        Features {
            maps: self.maps.iter().map(|m| Image::new(m.width, m.height, m.channels)).collect(),
            embedding: vec![0.0; self.embedding.len()],
        }
    }
}

/// A differentiable image feature extractor. `backward` must be the exact
/// adjoint of the Jacobian of `forward` at `image`.
pub trait FeatureExtractor: Send + Sync {
    fn forward(&self, image: &Image) -> Result<Features>;
    fn backward(&self, image: &Image, grad: &Features) -> Result<Image>;
}

#[derive(Debug, Clone, PartialEq)]
struct ConvLayer {
    in_ch: usize,
    out_ch: usize,
    /// `[out][in][ky][kx]`, 3x3 kernels.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

const KERNEL: usize = 3;
const STRIDE: usize = 2;

impl ConvLayer {
    fn weight(&self, o: usize, c: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((o * self.in_ch + c) * KERNEL + ky) * KERNEL + kx]
    }

    fn out_dims(input: &Image) -> (usize, usize) {
        (input.width.div_ceil(STRIDE), input.height.div_ceil(STRIDE))
    }

    /// Pre-activation output.
    fn apply(&self, input: &Image) -> Image {
        let (w, h) = Self::out_dims(input);
        let mut out = Image::new(w, h, self.out_ch);
        for y in 0..h {
            for x in 0..w {
                let base = out.index(x, y);
                for o in 0..self.out_ch {
                    let mut acc = self.bias[o];
                    for ky in 0..KERNEL {
                        let Some(iy) = (y * STRIDE + ky).checked_sub(1).filter(|&v| v < input.height) else {
                            continue;
                        };
                        for kx in 0..KERNEL {
                            let Some(ix) = (x * STRIDE + kx).checked_sub(1).filter(|&v| v < input.width) else {
                                continue;
                            };
                            let px = input.pixel(ix, iy);
                            for (c, v) in px.iter().enumerate() {
                                acc += self.weight(o, c, ky, kx) * v;
                            }
                        }
                    }
                    out.data[base + o] = acc;
                }
            }
        }
        out
    }

    /// Adjoint of `apply` without the bias.
    fn apply_transpose(&self, grad_out: &Image, in_w: usize, in_h: usize) -> Image {
        let mut g = Image::new(in_w, in_h, self.in_ch);
        for y in 0..grad_out.height {
            for x in 0..grad_out.width {
                let go = grad_out.pixel(x, y).to_vec();
                for ky in 0..KERNEL {
                    let Some(iy) = (y * STRIDE + ky).checked_sub(1).filter(|&v| v < in_h) else {
                        continue;
                    };
                    for kx in 0..KERNEL {
                        let Some(ix) = (x * STRIDE + kx).checked_sub(1).filter(|&v| v < in_w) else {
                            continue;
                        };
                        let base = g.index(ix, iy);
                        for (o, gv) in go.iter().enumerate() {
                            if *gv == 0.0 {
                                continue;
                            }
                            for c in 0..self.in_ch {
                                g.data[base + c] += self.weight(o, c, ky, kx) * gv;
                            }
                        }
                    }
                }
            }
        }
        g
    }
}

/// Fixed-seed stack of strided 3x3 convolutions with rectification. Every
/// layer's output is a matching map; the embedding is the mean-pooled last map.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyExtractor {
    layers: Vec<ConvLayer>,
}

impl ToyExtractor {
    pub fn new(seed: u64) -> Self {
        Self::with_channels(seed, &[3, 8, 16])
    }

    /// `channels[0]` is the input channel count.
    pub fn with_channels(seed: u64, channels: &[usize]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = channels
            .windows(2)
            .map(|w| {
                let (in_ch, out_ch) = (w[0], w[1]);
                let fan_in = (in_ch * KERNEL * KERNEL) as f64;
                let bound = (6.0 / fan_in).sqrt();
                ConvLayer {
                    in_ch,
                    out_ch,
                    weights: (0..out_ch * in_ch * KERNEL * KERNEL).map(|_| rng.gen_range(-bound..bound)).collect(),
                    bias: (0..out_ch).map(|_| rng.gen_range(-0.05..0.05)).collect(),
                }
            })
            .collect();
        ToyExtractor { layers }
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        let want = self.layers.first().map_or(3, |l| l.in_ch);
        if image.channels != want || image.width == 0 || image.height == 0 {
            return Err(Error::DimensionMismatch(format!(
                "extractor expects a non-empty {want}-channel image, got {}x{}x{}",
                image.width, image.height, image.channels
            )));
        }
        Ok(())
    }

    /// Pre-activations of every layer.
    fn pre_activations(&self, image: &Image) -> Vec<Image> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = image.clone();
        for layer in &self.layers {
            let z = layer.apply(&current);
            current = relu(&z);
            pre.push(z);
        }
        pre
    }
}

fn relu(z: &Image) -> Image {
    let mut out = z.clone();
    out.data.iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

fn mean_pool(map: &Image) -> Vec<f64> {
    let mut e = vec![0.0; map.channels];
    for px in map.data.chunks_exact(map.channels) {
        for (a, v) in e.iter_mut().zip(px) {
            *a += v;
        }
    }
    let n = (map.width * map.height).max(1) as f64;
    e.iter_mut().for_each(|v| *v /= n);
    e
}

impl FeatureExtractor for ToyExtractor {
    fn forward(&self, image: &Image) -> Result<Features> {
        self.check_input(image)?;
        let maps: Vec<Image> = self.pre_activations(image).iter().map(relu).collect();
        let embedding = maps.last().map(mean_pool).unwrap_or_default();
        Ok(Features { maps, embedding })
    }

    fn backward(&self, image: &Image, grad: &Features) -> Result<Image> {
        self.check_input(image)?;
        let pre = self.pre_activations(image);
        if grad.maps.len() != pre.len() || grad.maps.iter().zip(&pre).any(|(g, z)| !g.same_shape(z)) {
            return Err(Error::DimensionMismatch("feature gradients do not match the extractor".into()));
        }
        let mut upstream: Option<Image> = None;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let z = &pre[i];
            let mut g = grad.maps[i].clone();
            if let Some(u) = upstream.take() {
                for (a, b) in g.data.iter_mut().zip(&u.data) {
                    *a += b;
                }
            }
            if i + 1 == self.layers.len() && !grad.embedding.is_empty() {
                let n = (z.width * z.height) as f64;
                for px in g.data.chunks_exact_mut(z.channels) {
                    for (a, e) in px.iter_mut().zip(&grad.embedding) {
                        *a += e / n;
                    }
                }
            }
            for (a, zv) in g.data.iter_mut().zip(&z.data) {
                if *zv <= 0.0 {
                    *a = 0.0;
                }
            }
            let (w, h) = if i == 0 { (image.width, image.height) } else { (pre[i - 1].width, pre[i - 1].height) };
            upstream = Some(layer.apply_transpose(&g, w, h));
        }
        Ok(upstream.unwrap_or_else(|| Image::new(image.width, image.height, image.channels)))
    }
}

/// Finite-difference check of an extractor's adjoint along a random direction.
pub fn check_adjoint(extractor: &dyn FeatureExtractor, image: &Image, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = extractor.forward(image)?;
    let mut weights = base.zeros_like();
    for m in &mut weights.maps {
        m.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    }
    weights.embedding.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    let direction: Vec<f64> = image.data.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
    let pairing = |f: &Features| -> f64 {
        let maps: f64 = f.maps.iter().zip(&weights.maps).map(|(a, b)| dot(&a.data, &b.data)).sum();
        maps + dot(&f.embedding, &weights.embedding)
    };
    let h = 1e-6;
    let shifted = |s: f64| -> Result<f64> {
        let mut img = image.clone();
        img.data.iter_mut().zip(&direction).for_each(|(v, d)| *v += s * d);
        Ok(pairing(&extractor.forward(&img)?))
    };
    let fd = (shifted(h)? - shifted(-h)?) / (2.0 * h);
    let adjoint = dot(&extractor.backward(image, &weights)?.data, &direction);
    let scale = fd.abs().max(adjoint.abs()).max(1e-8);
    if (fd - adjoint).abs() > 1e-4 * scale {
        return Err(Error::Contract(format!(
            "feature extractor backward is not the adjoint of forward: {adjoint} vs finite difference {fd}"
        )));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `v / |v|`, or the zero vector when `v` is zero.
fn unit(v: &[f64]) -> (Vec<f64>, f64) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        (v.iter().map(|x| x / n).collect(), n)
    } else {
        (vec![0.0; v.len()], 0.0)
    }
}

/// Gradient through `v / |v|` given the gradient on the unit vector.
fn unit_vjp(u: &[f64], norm: f64, g_unit: &[f64]) -> Vec<f64> {
    if norm == 0.0 {
        return vec![0.0; u.len()];
    }
    let d = dot(u, g_unit);
    u.iter().zip(g_unit).map(|(ui, gi)| (gi - ui * d) / norm).collect()
}

/// Nearest-neighbour feature matching loss: for every rendered feature vector
/// the cosine distance to the closest style vector, averaged over vectors and
/// then over maps. The distance is computed as `|r/|r| - s/|s||^2 / 2`, which
/// equals `1 - cos` and is exactly zero for identical vectors. Zero vectors
/// count as the zero direction. Returns the loss and its gradient on `rendered`.
pub fn nnfm_loss(rendered: &[Image], style: &[Image]) -> Result<(f64, Vec<Image>)> {
    if rendered.is_empty() || rendered.len() != style.len() {
        return Err(Error::InvalidParameter(format!(
            "need matching non-empty feature map lists, got {} and {}",
            rendered.len(),
            style.len()
        )));
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(rendered.len());
    let layers = rendered.len() as f64;
    for (r, s) in rendered.iter().zip(style) {
        if r.channels != s.channels {
            return Err(Error::DimensionMismatch(format!(
                "feature maps have {} and {} channels",
                r.channels, s.channels
            )));
        }
        if r.data.is_empty() || s.data.is_empty() || r.channels == 0 {
            return Err(Error::InvalidParameter("empty feature map".into()));
        }
        let c = r.channels;
        let style_units: Vec<Vec<f64>> = s.data.chunks_exact(c).map(|v| unit(v).0).collect();
        let count = (r.width * r.height) as f64;
        let mut g = Image::new(r.width, r.height, c);
        let mut layer_sum = 0.0;
        for (rv, gv) in r.data.chunks_exact(c).zip(g.data.chunks_exact_mut(c)) {
            let (ru, norm) = unit(rv);
            let mut best = f64::INFINITY;
            let mut best_k = 0;
            for (k, su) in style_units.iter().enumerate() {
                let d: f64 = ru.iter().zip(su).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() * 0.5;
                if d < best {
                    best = d;
                    best_k = k;
                }
            }
            layer_sum += best;
            let diff: Vec<f64> = ru.iter().zip(&style_units[best_k]).map(|(a, b)| (a - b) / (count * layers)).collect();
            gv.copy_from_slice(&unit_vjp(&ru, norm, &diff));
        }
        total += layer_sum / count / layers;
        grads.push(g);
    }
    Ok((total, grads))
}

/// Euclidean distance between L2-normalized embeddings and its gradient on
/// the rendered embedding. The gradient is zero where the distance is zero.
pub fn global_style_loss(rendered: &[f64], style: &[f64]) -> Result<(f64, Vec<f64>)> {
    if rendered.len() != style.len() || rendered.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "embeddings of length {} and {}",
            rendered.len(),
            style.len()
        )));
    }
    let (ru, norm) = unit(rendered);
    let (su, _) = unit(style);
    let diff: Vec<f64> = ru.iter().zip(&su).map(|(a, b)| a - b).collect();
    let dist = dot(&diff, &diff).sqrt();
    if dist == 0.0 {
        return Ok((0.0, vec![0.0; rendered.len()]));
    }
    let g_unit: Vec<f64> = diff.iter().map(|d| d / dist).collect();
    Ok((dist, unit_vjp(&ru, norm, &g_unit)))
}

//! Parameter groups and the small set of layers the models are built from.
//!
//! Every parameter lives in a named [`ParamGroup`]. Groups are initialized
//! from a seeded generator so a model is a pure function of its seed, and a
//! frozen group hands out detached tensors so no gradient reaches it.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};

#[derive(Clone)]
pub struct Param {
    var: Var,
    detached: Tensor,
    frozen: Arc<AtomicBool>,
}

impl Param {
    /// The tensor to build graphs with: detached when the group is frozen.
    pub fn t(&self) -> &Tensor {
        if self.frozen.load(Ordering::Relaxed) {
            &self.detached
        } else {
            self.var.as_tensor()
        }
    }

    pub fn var(&self) -> &Var {
        &self.var
    }
}

/// Serialized form of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct HostTensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Little-endian element bytes.
    pub bytes: Vec<u8>,
}

pub fn tensor_to_host(name: &str, t: &Tensor) -> Result<HostTensor> {
    let flat = t.flatten_all()?;
    let bytes = match t.dtype() {
        DType::F32 => flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        DType::F64 => flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        other => return Err(invalid(format!("unsupported parameter dtype {other:?}"))),
    };
    Ok(HostTensor { name: name.to_string(), dtype: t.dtype(), shape: t.dims().to_vec(), bytes })
}

pub fn host_to_tensor(h: &HostTensor, device: &Device) -> Result<Tensor> {
    let t = match h.dtype {
        DType::F32 => {
            let v: Vec<f32> = h.bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_vec(v, h.shape.as_slice(), device)?
        }
        DType::F64 => {
            let v: Vec<f64> = h.bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_vec(v, h.shape.as_slice(), device)?
        }
        other => return Err(invalid(format!("unsupported parameter dtype {other:?}"))),
    };
    Ok(t)
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Generator used to initialize the group `name` of a model seeded with `seed`.
pub fn init_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ name_hash(name))
}

pub struct ParamGroup {
    name: String,
    dtype: DType,
    device: Device,
    entries: Vec<(String, Param)>,
    frozen: Arc<AtomicBool>,
}

impl ParamGroup {
    pub fn new(name: &str, dtype: DType) -> Self {
        Self {
            name: name.to_string(),
            dtype,
            device: Device::Cpu,
            entries: Vec::new(),
            frozen: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<Param> {
        if self.entries.iter().any(|(n, _)| n == name) {
            return Err(invalid(format!("duplicate parameter {}.{name}", self.name)));
        }
        let var = Var::from_tensor(&value.to_dtype(self.dtype)?)?;
        let p = Param { detached: var.as_detached_tensor(), var, frozen: self.frozen.clone() };
        self.entries.push((name.to_string(), p.clone()));
        Ok(p)
    }

    /// Normal initialization truncated at two standard deviations.
    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Result<Param> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|_| loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= 2.0 {
                    break z * std;
                }
            })
            .collect();
        let t = Tensor::from_vec(data, shape, &self.device)?;
        self.add(name, t)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Result<Param> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        let t = Tensor::from_vec(data, shape, &self.device)?;
        self.add(name, t)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<Param> {
        let t = Tensor::zeros(shape, self.dtype, &self.device)?;
        self.add(name, t)
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<Param> {
        let t = Tensor::ones(shape, self.dtype, &self.device)?;
        self.add(name, t)
    }

    pub fn set_frozen(&self, frozen: bool) {
        self.frozen.store(frozen, Ordering::Relaxed);
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen.load(Ordering::Relaxed)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.entries.iter().map(|(_, p)| p.var.clone()).collect()
    }

    pub fn entries(&self) -> &[(String, Param)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn num_params(&self) -> usize {
        self.entries.iter().map(|(_, p)| p.var.elem_count()).sum()
    }

    pub fn to_host(&self) -> Result<Vec<HostTensor>> {
        self.entries.iter().map(|(n, p)| tensor_to_host(n, p.var.as_tensor())).collect()
    }

    /// Overwrites every parameter from `tensors`, which must match names and
    /// shapes exactly.
    pub fn load_host(&self, tensors: &[HostTensor]) -> Result<()> {
        if tensors.len() != self.entries.len() {
            return Err(invalid(format!(
                "group {}: {} tensors supplied for {} parameters",
                self.name,
                tensors.len(),
                self.entries.len()
            )));
        }
        for ((name, p), h) in self.entries.iter().zip(tensors) {
            if *name != h.name || p.var.dims() != h.shape.as_slice() {
                return Err(invalid(format!(
                    "group {}: expected {name} {:?}, found {} {:?}",
                    self.name,
                    p.var.dims(),
                    h.name,
                    h.shape
                )));
            }
            p.var.set(&host_to_tensor(h, &self.device)?.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Copies values of parameters present in `other` under the same name.
    /// Returns the number of tensors copied.
    pub fn copy_matching(&self, other: &ParamGroup) -> Result<usize> {
        let mut copied = 0;
        for (name, p) in &self.entries {
            if let Some(src) = other.get(name) {
                if src.var.dims() == p.var.dims() {
                    p.var.set(&src.var.as_tensor().to_dtype(self.dtype)?)?;
                    copied += 1;
                }
            }
        }
        Ok(copied)
    }

    /// Deep copy of the current values (for bit-exact comparisons).
    pub fn snapshot(&self) -> Result<Vec<HostTensor>> {
        self.to_host()
    }
}

pub struct Linear {
    pub w: Param,
    pub b: Option<Param>,
}

impl Linear {
    pub fn new(g: &mut ParamGroup, name: &str, din: usize, dout: usize, std: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let w = g.normal(&format!("{name}.w"), &[din, dout], std, rng)?;
        let b = Some(g.zeros(&format!("{name}.b"), &[dout])?);
        Ok(Self { w, b })
    }

    pub fn zero(g: &mut ParamGroup, name: &str, din: usize, dout: usize) -> Result<Self> {
        let w = g.zeros(&format!("{name}.w"), &[din, dout])?;
        let b = Some(g.zeros(&format!("{name}.b"), &[dout])?);
        Ok(Self { w, b })
    }

    pub fn out_dim(&self) -> usize {
        self.w.var().dims()[1]
    }

    /// Applies the map to the last dimension of `x`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let din = *dims.last().unwrap();
        let rows = x.elem_count() / din;
        let y = x.reshape((rows, din))?.matmul(self.w.t())?;
        let y = match &self.b {
            Some(b) => y.broadcast_add(b.t())?,
            None => y,
        };
        let mut out = dims;
        *out.last_mut().unwrap() = self.out_dim();
        Ok(y.reshape(out)?)
    }
}

pub fn layer_norm_plain(x: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let xc = x.broadcast_sub(&mean)?;
    let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(xc.broadcast_div(&(var + eps)?.sqrt()?)?)
}

pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
}

impl LayerNorm {
    pub fn new(g: &mut ParamGroup, name: &str, dim: usize) -> Result<Self> {
        Ok(Self { gamma: g.ones(&format!("{name}.g"), &[dim])?, beta: g.zeros(&format!("{name}.b"), &[dim])? })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(layer_norm_plain(x, 1e-5)?.broadcast_mul(self.gamma.t())?.broadcast_add(self.beta.t())?)
    }
}

/// Multi-head self-attention over `(batch, tokens, dim)`.
pub struct SelfAttention {
    pub qkv: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new(g: &mut ParamGroup, name: &str, dim: usize, heads: usize, std: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(invalid(format!("{heads} heads do not divide width {dim}")));
        }
        Ok(Self {
            qkv: Linear::new(g, &format!("{name}.qkv"), dim, 3 * dim, std, rng)?,
            out: Linear::new(g, &format!("{name}.out"), dim, dim, std, rng)?,
            heads,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, l, d) = x.dims3()?;
        let dh = d / self.heads;
        let qkv = self.qkv.forward(x)?.reshape((b, l, 3, self.heads, dh))?;
        let q = qkv.narrow(2, 0, 1)?.squeeze(2)?.transpose(1, 2)?.contiguous()?;
        let k = qkv.narrow(2, 1, 1)?.squeeze(2)?.transpose(1, 2)?.contiguous()?;
        let v = qkv.narrow(2, 2, 1)?.squeeze(2)?.transpose(1, 2)?.contiguous()?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? * (1.0 / (dh as f64).sqrt()))?;
        let p = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let o = p.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, l, d))?;
        self.out.forward(&o)
    }
}

pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(g: &mut ParamGroup, name: &str, dim: usize, hidden: usize, std: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(g, &format!("{name}.fc1"), dim, hidden, std, rng)?,
            fc2: Linear::new(g, &format!("{name}.fc2"), hidden, dim, std, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu()?)
    }
}

/// 3×3 same-padding convolution on NHWC tensors, computed as an explicit
/// im2col followed by one matrix product.
pub struct Conv3x3 {
    pub w: Param,
    pub b: Param,
    pub cin: usize,
    pub cout: usize,
}

impl Conv3x3 {
    pub fn new(g: &mut ParamGroup, name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let std = (2.0 / (9.0 * cin as f64)).sqrt();
        Ok(Self {
            w: g.normal(&format!("{name}.w"), &[9 * cin, cout], std, rng)?,
            b: g.zeros(&format!("{name}.b"), &[cout])?,
            cin,
            cout,
        })
    }

    pub fn zero(g: &mut ParamGroup, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Ok(Self { w: g.zeros(&format!("{name}.w"), &[9 * cin, cout])?, b: g.zeros(&format!("{name}.b"), &[cout])?, cin, cout })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, h, w, c) = x.dims4()?;
        if c != self.cin {
            return Err(crate::error::shape_err("conv3x3 channels", self.cin, c));
        }
        let p = x.pad_with_zeros(1, 1, 1)?.pad_with_zeros(2, 1, 1)?;
        let mut cols = Vec::with_capacity(9);
        for dy in 0..3 {
            for dx in 0..3 {
                cols.push(p.narrow(1, dy, h)?.narrow(2, dx, w)?);
            }
        }
        let col = Tensor::cat(&cols, 3)?.reshape((b * h * w, 9 * c))?;
        Ok(col.matmul(self.w.t())?.broadcast_add(self.b.t())?.reshape((b, h, w, self.cout))?)
    }
}

/// `(b, h, w, c)` → `(b, h/r, w/r, r·r·c)`.
pub fn space_to_depth(x: &Tensor, r: usize) -> Result<Tensor> {
    let (b, h, w, c) = x.dims4()?;
    if h % r != 0 || w % r != 0 {
        return Err(crate::error::shape_err("space_to_depth", format!("multiple of {r}"), (h, w)));
    }
    Ok(x.reshape((b, h / r, r, w / r, r, c))?.permute((0, 1, 3, 2, 4, 5))?.reshape((b, h / r, w / r, r * r * c))?)
}

/// Inverse of [`space_to_depth`].
pub fn depth_to_space(x: &Tensor, r: usize) -> Result<Tensor> {
    let (b, h, w, c) = x.dims4()?;
    if c % (r * r) != 0 {
        return Err(crate::error::shape_err("depth_to_space", format!("multiple of {}", r * r), c));
    }
    let c2 = c / (r * r);
    Ok(x.reshape((b, h, w, r, r, c2))?.permute((0, 1, 3, 2, 4, 5))?.reshape((b, h * r, w * r, c2))?)
}

/// Sinusoidal embedding of scalar positions, `(len, dim)`.
pub fn sinusoidal(values: &[f64], dim: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(values.len() * dim);
    for &v in values {
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            data.push((v * freq).sin());
        }
        for i in 0..half {
            let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            data.push((v * freq).cos());
        }
        data.extend(std::iter::repeat(0.0).take(dim - 2 * half));
    }
    Ok(Tensor::from_vec(data, (values.len(), dim), device)?.to_dtype(dtype)?)
}

/// Logistic function composed from differentiable primitives.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

/// Standard normal tensor drawn from `rng`.
pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize], dtype: DType, device: &Device) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Ok(Tensor::from_vec(data, shape, device)?.to_dtype(dtype)?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

pub fn to_f64_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
}

pub fn to_f32_vec(t: &Tensor) -> Result<Vec<f32>> {
    Ok(t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?)
}

/// AdamW over a fixed variable set with optional global-norm clipping.
pub struct Optimizer {
    inner: candle_nn::AdamW,
    vars: Vec<Var>,
    clip: Option<f64>,
}

impl Optimizer {
    pub fn new(vars: Vec<Var>, lr: f64, weight_decay: f64, clip: Option<f64>) -> Result<Self> {
        use candle_nn::Optimizer as _;
        let params = candle_nn::ParamsAdamW { lr, weight_decay, ..Default::default() };
        Ok(Self { inner: candle_nn::AdamW::new(vars.clone(), params)?, vars, clip })
    }

    pub fn set_lr(&mut self, lr: f64) {
        use candle_nn::Optimizer as _;
        self.inner.set_learning_rate(lr);
    }

    /// Backpropagates `loss`, clips, and applies one update. Returns the
    /// gradient norm before clipping.
    pub fn step(&mut self, loss: &Tensor) -> Result<f64> {
        use candle_nn::Optimizer as _;
        let mut grads = loss.backward()?;
        let mut sq = 0.0;
        for v in &self.vars {
            if let Some(g) = grads.get(v) {
                sq += scalar(&g.sqr()?.sum_all()?)?;
            }
        }
        let norm = sq.sqrt();
        if let Some(clip) = self.clip {
            if norm > clip {
                let s = clip / norm;
                for v in &self.vars {
                    if let Some(g) = grads.remove(v) {
                        grads.insert(v, (g * s)?);
                    }
                }
            }
        }
        self.inner.step(&grads)?;
        Ok(norm)
    }
}

/// Linear warmup followed by cosine decay to `floor·base`.
pub fn lr_at(step: usize, total: usize, base: f64, warmup: usize, floor: f64) -> f64 {
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1);
    let p = ((step - warmup) as f64 / span as f64).min(1.0);
    base * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn space_depth_round_trip() {
        let dev = Device::Cpu;
        let x = Tensor::arange(0f32, 2.0 * 8.0 * 8.0 * 3.0, &dev).unwrap().reshape((2, 8, 8, 3)).unwrap();
        let y = depth_to_space(&space_to_depth(&x, 4).unwrap(), 4).unwrap();
        assert_eq!(to_f32_vec(&x).unwrap(), to_f32_vec(&y).unwrap());
        // a 2×2 block becomes one cell with its pixels in row-major order
        let s = space_to_depth(&x, 2).unwrap();
        let cell: Vec<f32> = to_f32_vec(&s.narrow(1, 0, 1).unwrap().narrow(2, 0, 1).unwrap()).unwrap();
        assert_eq!(&cell[..6], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(&cell[6..9], &[24.0, 25.0, 26.0]);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let dev = Device::Cpu;
        let mut g = ParamGroup::new("t", DType::F64);
        let mut rng = init_rng(0, "t");
        let conv = Conv3x3::new(&mut g, "c", 2, 3, &mut rng).unwrap();
        let x = randn(&mut rng, &[1, 4, 5, 2], DType::F64, &dev).unwrap();
        let y = to_f64_vec(&conv.forward(&x).unwrap()).unwrap();
        let xv = to_f64_vec(&x).unwrap();
        let wv = to_f64_vec(conv.w.t()).unwrap();
        for v in 0..4 {
            for u in 0..5 {
                for o in 0..3 {
                    let mut acc = 0.0;
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let (yy, xx) = (v as i64 + dy as i64 - 1, u as i64 + dx as i64 - 1);
                            if yy < 0 || xx < 0 || yy >= 4 || xx >= 5 {
                                continue;
                            }
                            for c in 0..2 {
                                let row = (dy * 3 + dx) * 2 + c;
                                acc += xv[(yy as usize * 5 + xx as usize) * 2 + c] * wv[row * 3 + o];
                            }
                        }
                    }
                    assert!((acc - y[(v * 5 + u) * 3 + o]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn frozen_group_blocks_gradients() {
        let mut g = ParamGroup::new("t", DType::F64);
        let mut rng = init_rng(0, "t");
        let lin = Linear::new(&mut g, "l", 3, 2, 0.5, &mut rng).unwrap();
        let x = randn(&mut rng, &[4, 3], DType::F64, &Device::Cpu).unwrap();
        g.set_frozen(true);
        let grads = lin.forward(&x).unwrap().sum_all().unwrap().backward().unwrap();
        assert!(grads.get(lin.w.var().as_tensor()).is_none());
        g.set_frozen(false);
        let grads = lin.forward(&x).unwrap().sum_all().unwrap().backward().unwrap();
        assert!(grads.get(lin.w.var().as_tensor()).is_some());
    }

    #[test]
    fn host_round_trip_is_exact() {
        let mut g = ParamGroup::new("t", DType::F32);
        let mut rng = init_rng(1, "t");
        g.normal("a", &[3, 4], 1.0, &mut rng).unwrap();
        let h = g.to_host().unwrap();
        let mut g2 = ParamGroup::new("t", DType::F32);
        g2.zeros("a", &[3, 4]).unwrap();
        g2.load_host(&h).unwrap();
        assert_eq!(g2.to_host().unwrap(), h);
    }

    #[test]
    fn warmup_then_decay() {
        assert!((lr_at(0, 100, 1.0, 10, 0.1) - 0.1).abs() < 1e-12);
        assert!((lr_at(10, 100, 1.0, 10, 0.1) - 1.0).abs() < 1e-12);
        assert!((lr_at(100, 100, 1.0, 10, 0.1) - 0.1).abs() < 1e-12);
    }
}

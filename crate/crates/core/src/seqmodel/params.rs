use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::SeqModelError;

const INIT_RANGE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, embed_dim: usize, hidden_dim: usize, feature_dim: usize) -> Self {
        Self {
            vocab_size,
            embed_dim,
            hidden_dim,
            feature_dim,
        }
    }

    /// `(rows, cols)` of a tensor; vectors have one column.
    pub fn shape(&self, t: Tensor) -> (usize, usize) {
        let (v, e, h, f) = (self.vocab_size, self.embed_dim, self.hidden_dim, self.feature_dim);
        match t {
            Tensor::Embedding => (v, e),
            Tensor::EncW => (h, f),
            Tensor::Wz | Tensor::Wr | Tensor::Wn => (h, e),
            Tensor::Uz | Tensor::Ur | Tensor::Un => (h, h),
            Tensor::EncB | Tensor::Bz | Tensor::Br | Tensor::Bn => (h, 1),
            Tensor::OutW => (v, h),
            Tensor::OutB => (v, 1),
        }
    }

    pub fn offsets(&self) -> [usize; Tensor::COUNT + 1] {
        let mut out = [0; Tensor::COUNT + 1];
        for (i, t) in Tensor::ALL.iter().enumerate() {
            let (r, c) = self.shape(*t);
            out[i + 1] = out[i] + r * c;
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.offsets()[Tensor::COUNT]
    }
}

/// Named parameter tensors, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tensor {
    Embedding,
    EncW,
    EncB,
    Wz,
    Uz,
    Bz,
    Wr,
    Ur,
    Br,
    Wn,
    Un,
    Bn,
    OutW,
    OutB,
}

impl Tensor {
    pub const COUNT: usize = 14;
    pub const ALL: [Tensor; Tensor::COUNT] = [
        Tensor::Embedding,
        Tensor::EncW,
        Tensor::EncB,
        Tensor::Wz,
        Tensor::Uz,
        Tensor::Bz,
        Tensor::Wr,
        Tensor::Ur,
        Tensor::Br,
        Tensor::Wn,
        Tensor::Un,
        Tensor::Bn,
        Tensor::OutW,
        Tensor::OutB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tensor::Embedding => "embedding",
            Tensor::EncW => "enc_w",
            Tensor::EncB => "enc_b",
            Tensor::Wz => "w_z",
            Tensor::Uz => "u_z",
            Tensor::Bz => "b_z",
            Tensor::Wr => "w_r",
            Tensor::Ur => "u_r",
            Tensor::Br => "b_r",
            Tensor::Wn => "w_n",
            Tensor::Un => "u_n",
            Tensor::Bn => "b_n",
            Tensor::OutW => "out_w",
            Tensor::OutB => "out_b",
        }
    }

    pub fn from_name(name: &str) -> Option<Tensor> {
        Tensor::ALL.iter().copied().find(|t| t.name() == name)
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// A flat buffer laid out like the model parameters. Used for the
/// parameters themselves, their gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBuffer {
    config: ModelConfig,
    offsets: [usize; Tensor::COUNT + 1],
    data: Vec<f64>,
}

pub type ModelParams = ParamBuffer;
pub type Gradients = ParamBuffer;

/// Mutable views of every tensor at once, in [`Tensor::ALL`] order.
pub(crate) struct TensorsMut<'a>(pub Vec<&'a mut [f64]>);

impl ParamBuffer {
    pub fn zeros(config: ModelConfig) -> Self {
        let offsets = config.offsets();
        Self {
            config,
            offsets,
            data: vec![0.0; offsets[Tensor::COUNT]],
        }
    }

    pub fn from_flat(config: ModelConfig, data: Vec<f64>) -> Result<Self, SeqModelError> {
        let offsets = config.offsets();
        if data.len() != offsets[Tensor::COUNT] {
            return Err(SeqModelError::ShapeMismatch {
                what: "parameter vector",
                expected: offsets[Tensor::COUNT],
                got: data.len(),
            });
        }
        Ok(Self {
            config,
            offsets,
            data,
        })
    }

    /// Seeded initialization: uniform(−0.08, 0.08) for embeddings and input
    /// projections, orthogonal recurrent matrices, zero biases.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(config);
        let uniform = Uniform::new(-INIT_RANGE, INIT_RANGE).expect("valid range");
        for t in Tensor::ALL {
            match t {
                Tensor::EncB | Tensor::Bz | Tensor::Br | Tensor::Bn | Tensor::OutB => {}
                Tensor::Uz | Tensor::Ur | Tensor::Un => {
                    let q = orthogonal(config.hidden_dim, rng);
                    p.tensor_mut(t).copy_from_slice(&q);
                }
                _ => {
                    for x in p.tensor_mut(t) {
                        *x = uniform.sample(rng);
                    }
                }
            }
        }
        p
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn tensor(&self, t: Tensor) -> &[f64] {
        &self.data[self.offsets[t.index()]..self.offsets[t.index() + 1]]
    }

    pub fn tensor_mut(&mut self, t: Tensor) -> &mut [f64] {
        let (a, b) = (self.offsets[t.index()], self.offsets[t.index() + 1]);
        &mut self.data[a..b]
    }

    /// Tensor and position of a flat index.
    pub fn locate(&self, flat: usize) -> (Tensor, usize) {
        let k = self.offsets[1..]
            .iter()
            .position(|&end| flat < end)
            .expect("index within buffer");
        (Tensor::ALL[k], flat - self.offsets[k])
    }

    pub(crate) fn tensors_mut(&mut self) -> TensorsMut<'_> {
        let mut rest: &mut [f64] = &mut self.data;
        let mut views = Vec::with_capacity(Tensor::COUNT);
        for k in 0..Tensor::COUNT {
            let (head, tail) = rest.split_at_mut(self.offsets[k + 1] - self.offsets[k]);
            views.push(head);
            rest = tail;
        }
        TensorsMut(views)
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &ParamBuffer, scale: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for x in &mut self.data {
            *x *= s;
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// First non-finite entry, for diagnostics.
    pub fn first_non_finite(&self) -> Option<(Tensor, usize, f64)> {
        let i = self.data.iter().position(|x| !x.is_finite())?;
        let (t, k) = self.locate(i);
        Some((t, k, self.data[i]))
    }
}

/// Orthogonal `n × n` matrix (row-major) from Gram–Schmidt on a Gaussian
/// matrix.
fn orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut m: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
        let mut ok = true;
        for i in 0..n {
            for j in 0..i {
                let dot: f64 = (0..n).map(|k| m[i * n + k] * m[j * n + k]).sum();
                for k in 0..n {
                    m[i * n + k] -= dot * m[j * n + k];
                }
            }
            let norm = (0..n).map(|k| m[i * n + k].powi(2)).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            for k in 0..n {
                m[i * n + k] /= norm;
            }
        }
        if ok {
            return m;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn cfg() -> ModelConfig {
        ModelConfig::new(12, 5, 8, 4)
    }

    #[test]
    fn layout_is_contiguous() {
        let c = cfg();
        let total: usize = Tensor::ALL
            .iter()
            .map(|&t| {
                let (r, k) = c.shape(t);
                r * k
            })
            .sum();
        assert_eq!(c.num_params(), total);
        let p = ParamBuffer::zeros(c);
        assert_eq!(p.locate(0), (Tensor::Embedding, 0));
        assert_eq!(p.locate(total - 1), (Tensor::OutB, 11));
        for t in Tensor::ALL {
            assert_eq!(Tensor::from_name(t.name()), Some(t));
        }
    }

    #[test]
    fn init_is_seeded_and_recurrent_blocks_are_orthogonal() {
        let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let a = ParamBuffer::init(cfg(), &mut r1);
        let b = ParamBuffer::init(cfg(), &mut r2);
        assert_eq!(a, b);
        let u = a.tensor(Tensor::Uz);
        let n = 8;
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|k| u[i * n + k] * u[j * n + k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
        assert!(a.tensor(Tensor::Embedding).iter().all(|x| x.abs() < INIT_RANGE));
        assert!(a.tensor(Tensor::Bz).iter().all(|&x| x == 0.0));
    }
}

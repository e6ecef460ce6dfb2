//! Linear layers, GRU cells, the parameter store, Adam with global-norm
//! clipping, and the binary parameter file format.

use std::io::{self, Read, Write};

use rand::Rng;
use thiserror::Error;

use crate::diffcore::{DiffError, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum NnError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("non-finite gradient in parameter block `{0}`")]
    NonFiniteGradient(String),
    #[error("parameter file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

pub const PARAM_MAGIC: &[u8; 4] = b"BONN";
pub const PARAM_FORMAT_VERSION: u32 = 1;

/// Named, ordered collection of every learned tensor of a model.
///
/// Index order is the fixed iteration order used by the optimizer, gradient
/// reduction and serialization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn get(&self, id: usize) -> &Tensor {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers parameter `id` on `tape`.
    pub fn on(&self, tape: &mut Tape, id: usize) -> Var {
        tape.param(id, &self.tensors[id])
    }

    /// Global 2-norm of all gradient slots.
    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.grad())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Writes the binary parameter format.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PARAM_MAGIC)?;
        w.write_all(&PARAM_FORMAT_VERSION.to_le_bytes())?;
        for (name, t) in self.iter() {
            let bytes = name.as_bytes();
            w.write_all(&(bytes.len() as u32).to_le_bytes())?;
            w.write_all(bytes)?;
            w.write_all(&(t.dims().len() as u32).to_le_bytes())?;
            for &d in t.dims() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in t.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    /// Reads the binary parameter format until end of input.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut cur = Cursor { buf, pos: 0 };
        if cur.take(4)? != PARAM_MAGIC {
            return Err(NnError::Format("bad magic bytes".into()));
        }
        let version = cur.u32()?;
        if version != PARAM_FORMAT_VERSION {
            return Err(NnError::Format(format!("unsupported version {version}")));
        }
        let mut store = ParamStore::new();
        while cur.pos < buf.len() {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|e| NnError::Format(format!("name is not UTF-8: {e}")))?
                .to_string();
            let rank = cur.u32()? as usize;
            let dims = (0..rank)
                .map(|_| cur.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len: usize = dims.iter().product();
            let values = (0..len)
                .map(|_| {
                    cur.take(8)
                        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                })
                .collect::<Result<Vec<_>>>()?;
            let tensor = Tensor::new(dims, values)?;
            store.add(name, tensor);
        }
        Ok(store)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(NnError::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn uniform_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let values = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Tensor::matrix(rows, cols, values).expect("length matches dims")
}

/// `W·x + b` with `W: out×in`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearParams {
    pub w: usize,
    pub b: usize,
    pub n_in: usize,
    pub n_out: usize,
}

impl LinearParams {
    /// Uniform `±1/√max(n_in, 1)` weights and zero bias.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        n_in: usize,
        n_out: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.w"), uniform_matrix(n_out, n_in, n_in, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(vec![n_out]));
        LinearParams { w, b, n_in, n_out }
    }

    pub fn forward(&self, store: &ParamStore, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = store.on(tape, self.w);
        let b = store.on(tape, self.b);
        Ok(tape.affine(w, Some(b), x)?)
    }
}

/// One gate's parameters: input matrix, recurrent matrix and bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateParams {
    pub w: usize,
    pub u: usize,
    pub b: usize,
}

/// A GRU cell with update gate `z`, reset gate `r` and candidate `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruParams {
    pub update: GateParams,
    pub reset: GateParams,
    pub candidate: GateParams,
    pub n_in: usize,
    pub n_hidden: usize,
}

impl GruParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        n_in: usize,
        n_hidden: usize,
        rng: &mut R,
    ) -> Self {
        let mut gate = |g: &str, rng: &mut R| GateParams {
            w: store.add(
                format!("{name}.w_{g}"),
                uniform_matrix(n_hidden, n_in, n_in, rng),
            ),
            u: store.add(
                format!("{name}.u_{g}"),
                uniform_matrix(n_hidden, n_hidden, n_hidden, rng),
            ),
            b: store.add(format!("{name}.b_{g}"), Tensor::zeros(vec![n_hidden])),
        };
        let update = gate("z", rng);
        let reset = gate("r", rng);
        let candidate = gate("h", rng);
        GruParams {
            update,
            reset,
            candidate,
            n_in,
            n_hidden,
        }
    }

    fn pre_activation(
        &self,
        gate: GateParams,
        store: &ParamStore,
        tape: &mut Tape,
        input: Var,
        hidden: Var,
    ) -> Result<Var> {
        let w = store.on(tape, gate.w);
        let u = store.on(tape, gate.u);
        let b = store.on(tape, gate.b);
        let wx = tape.affine(w, Some(b), input)?;
        let uh = tape.affine(u, None, hidden)?;
        Ok(tape.add(wx, uh)?)
    }

    /// `h' = (1 − z)⊙h + z⊙h̃`.
    pub fn step(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        input: Var,
        h_prev: Var,
    ) -> Result<Var> {
        let z = self.pre_activation(self.update, store, tape, input, h_prev)?;
        let z = tape.sigmoid(z);
        let r = self.pre_activation(self.reset, store, tape, input, h_prev)?;
        let r = tape.sigmoid(r);
        let rh = tape.mul(r, h_prev)?;
        let cand = self.pre_activation(self.candidate, store, tape, input, rh)?;
        let cand = tape.tanh(cand);
        let keep = tape.one_minus(z);
        let kept = tape.mul(keep, h_prev)?;
        let fresh = tape.mul(z, cand)?;
        Ok(tape.add(kept, fresh)?)
    }

    pub fn param_ids(&self) -> [usize; 9] {
        let (z, r, h) = (self.update, self.reset, self.candidate);
        [z.w, z.u, z.b, r.w, r.u, r.b, h.w, h.u, h.b]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
        }
    }
}

/// Adam moments for every block of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// Clips the global gradient norm, applies one bias-corrected Adam
    /// update, and zeroes the gradients. Returns the pre-clip norm.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<f64> {
        for (name, t) in store.iter() {
            if t.grad().iter().any(|g| !g.is_finite()) {
                return Err(NnError::NonFiniteGradient(name.to_string()));
            }
        }
        let norm = clip_grad_norm(store, self.config.clip_norm);
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (k, tensor) in store.tensors_mut().iter_mut().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let (values, grad) = tensor.split_mut();
            for (i, value) in values.iter_mut().enumerate() {
                let g = grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *value -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            tensor.zero_grad();
        }
        Ok(norm)
    }
}

/// Scales all gradients so their global norm is at most `clip_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, clip_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > clip_norm {
        let s = clip_norm / norm;
        for t in store.tensors_mut() {
            t.grad_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

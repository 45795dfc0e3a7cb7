//! LSTM stack + fully-connected ReLU head + softmax.
//!
//! Each timestep input is one matrix row. Stacked LSTM layers pass their whole
//! hidden sequence upward; the final layer's last hidden state feeds the dense
//! head. Gates use the standard formulation without peepholes:
//!
//! ```text
//! z = W x_t + U h_{t-1} + b          (gate blocks in order i, f, g, o)
//! i, f, o = sigmoid(z_i, z_f, z_o);  g = tanh(z_g)
//! c_t = f * c_{t-1} + i * g;         h_t = o * tanh(c_t)
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{axpy, matvec_add, sigmoid};
use super::{ModelConfig, NnError, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    fn zeros(name: String, dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Tensor {
            name,
            dims,
            data: vec![T::zero(); len],
        }
    }
}

/// Per-tensor gradients, parallel to `Model::params`.
pub type Gradients<T> = Vec<Vec<T>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: Vec<Tensor<T>>,
}

/// Borrowed view of one LSTM layer.
pub struct LstmParams<'a, T> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `4h x input_dim`, gate blocks i, f, g, o.
    pub w: &'a [T],
    /// `4h x h`.
    pub u: &'a [T],
    /// `4h`.
    pub b: &'a [T],
}

struct LstmTrace<T> {
    /// Post-activation gates per step, `T x 4h`.
    gates: Vec<T>,
    /// Cell states, `(T+1) x h` with the zero initial state first.
    cells: Vec<T>,
    tanh_cells: Vec<T>,
    /// Hidden states, `(T+1) x h` with the zero initial state first.
    hidden: Vec<T>,
}

impl<'a, T: Scalar> LstmParams<'a, T> {
    fn run(&self, inputs: &[T], steps: usize) -> LstmTrace<T> {
        let h = self.hidden_dim;
        let mut tr = LstmTrace {
            gates: vec![T::zero(); steps * 4 * h],
            cells: vec![T::zero(); (steps + 1) * h],
            tanh_cells: vec![T::zero(); steps * h],
            hidden: vec![T::zero(); (steps + 1) * h],
        };
        for t in 0..steps {
            let x = &inputs[t * self.input_dim..(t + 1) * self.input_dim];
            let z = &mut tr.gates[t * 4 * h..(t + 1) * 4 * h];
            z.copy_from_slice(self.b);
            matvec_add(self.w, x, z);
            matvec_add(self.u, &tr.hidden[t * h..(t + 1) * h], z);
            for j in 0..h {
                let i = sigmoid(z[j]);
                let f = sigmoid(z[h + j]);
                let g = z[2 * h + j].tanh();
                let o = sigmoid(z[3 * h + j]);
                z[j] = i;
                z[h + j] = f;
                z[2 * h + j] = g;
                z[3 * h + j] = o;
                let c = f * tr.cells[t * h + j] + i * g;
                let tc = c.tanh();
                tr.cells[(t + 1) * h + j] = c;
                tr.tanh_cells[t * h + j] = tc;
                tr.hidden[(t + 1) * h + j] = o * tc;
            }
        }
        tr
    }
}

/// Runs one LSTM layer over a sequence; returns `h_1..h_T`.
pub fn lstm_forward<T: Scalar>(params: &LstmParams<'_, T>, sequence: &[Vec<T>]) -> Result<Vec<Vec<T>>, NnError> {
    let expected_w = 4 * params.hidden_dim * params.input_dim;
    if params.w.len() != expected_w
        || params.u.len() != 4 * params.hidden_dim * params.hidden_dim
        || params.b.len() != 4 * params.hidden_dim
    {
        return Err(NnError::DimensionMismatch {
            what: "lstm parameters",
            expected: expected_w,
            got: params.w.len(),
        });
    }
    let mut flat = Vec::with_capacity(sequence.len() * params.input_dim);
    for x in sequence {
        if x.len() != params.input_dim {
            return Err(NnError::DimensionMismatch {
                what: "lstm input",
                expected: params.input_dim,
                got: x.len(),
            });
        }
        flat.extend_from_slice(x);
    }
    let tr = params.run(&flat, sequence.len());
    let h = params.hidden_dim;
    Ok((1..=sequence.len()).map(|t| tr.hidden[t * h..(t + 1) * h].to_vec()).collect())
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum = exps.iter().copied().fold(T::zero(), |a, b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

struct DenseTrace<T> {
    /// Input to each dense layer.
    inputs: Vec<Vec<T>>,
    /// Whether each hidden unit's pre-activation was positive.
    active: Vec<Vec<bool>>,
    /// Dropout multipliers (0 or 1/keep) per hidden layer; empty in infer mode.
    masks: Vec<Vec<T>>,
}

struct Trace<T> {
    lstm: Vec<LstmTrace<T>>,
    dense: DenseTrace<T>,
    logits: Vec<T>,
    probs: Vec<T>,
}

/// Deterministic RNG for the dropout masks of example `index` in a batch whose
/// dropout seed is `seed`, as used by [`Model::loss_and_grads`].
pub fn dropout_rng(seed: u64, index: u64) -> ChaCha8Rng {
    // splitmix64 finalizer over the pair.
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

impl<T: Scalar> Model<T> {
    /// Glorot-uniform weights, zero biases except forget-gate biases of 1.
    pub fn new(config: ModelConfig) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Vec::new();
        let mut glorot = |name: String, rows: usize, cols: usize, fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut t = Tensor::zeros(name, vec![rows, cols]);
            for v in &mut t.data {
                *v = T::c(rng.random_range(-limit..=limit));
            }
            t
        };
        let mut input = config.input_dim;
        for (l, &h) in config.lstm_units.iter().enumerate() {
            // Each gate block is initialized with its own fan (input -> h).
            params.push(glorot(format!("lstm{l}.w"), 4 * h, input, input, h));
            params.push(glorot(format!("lstm{l}.u"), 4 * h, h, h, h));
            let mut b = Tensor::zeros(format!("lstm{l}.b"), vec![4 * h]);
            b.data[h..2 * h].fill(T::one());
            params.push(b);
            input = h;
        }
        let widths: Vec<usize> = config.fc_units.iter().copied().chain([config.n_classes]).collect();
        for (d, &out) in widths.iter().enumerate() {
            params.push(glorot(format!("dense{d}.w"), out, input, input, out));
            params.push(Tensor::zeros(format!("dense{d}.b"), vec![out]));
            input = out;
        }
        Ok(Model { config, params })
    }

    pub fn n_lstm(&self) -> usize {
        self.config.lstm_units.len()
    }

    pub fn n_dense(&self) -> usize {
        self.config.fc_units.len() + 1
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|t| t.data.len()).sum()
    }

    pub fn lstm(&self, layer: usize) -> LstmParams<'_, T> {
        let base = 3 * layer;
        let hidden_dim = self.config.lstm_units[layer];
        LstmParams {
            input_dim: self.params[base].dims[1],
            hidden_dim,
            w: &self.params[base].data,
            u: &self.params[base + 1].data,
            b: &self.params[base + 2].data,
        }
    }

    fn dense_index(&self, d: usize) -> usize {
        3 * self.n_lstm() + 2 * d
    }

    /// Converts parameters to another float width (e.g. f64 for gradient checks).
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    dims: t.dims.clone(),
                    data: t.data.iter().map(|v| U::c(v.to_f64().unwrap())).collect(),
                })
                .collect(),
        }
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        self.params.iter().map(|t| vec![T::zero(); t.data.len()]).collect()
    }

    fn check_input(&self, input: &[T]) -> Result<(), NnError> {
        let expected = self.config.seq_len * self.config.input_dim;
        if input.len() != expected {
            return Err(NnError::DimensionMismatch {
                what: "model input",
                expected,
                got: input.len(),
            });
        }
        Ok(())
    }

    fn run(&self, input: &[T], mut dropout: Option<&mut ChaCha8Rng>) -> Trace<T> {
        let steps = self.config.seq_len;
        let mut lstm = Vec::with_capacity(self.n_lstm());
        for l in 0..self.n_lstm() {
            let tr = {
                let seq: &[T] = if l == 0 {
                    input
                } else {
                    let prev: &LstmTrace<T> = &lstm[l - 1];
                    let h = self.config.lstm_units[l - 1];
                    &prev.hidden[h..]
                };
                self.lstm(l).run(seq, steps)
            };
            lstm.push(tr);
        }
        let last_h = *self.config.lstm_units.last().unwrap();
        let top = &lstm.last().unwrap().hidden;
        let mut x = top[steps * last_h..].to_vec();

        let keep = T::c(1.0 - self.config.dropout);
        let scale = T::one() / keep;
        let mut dense = DenseTrace {
            inputs: Vec::with_capacity(self.n_dense()),
            active: Vec::new(),
            masks: Vec::new(),
        };
        let n_dense = self.n_dense();
        for d in 0..n_dense {
            let wi = self.dense_index(d);
            let mut y = self.params[wi + 1].data.clone();
            matvec_add(&self.params[wi].data, &x, &mut y);
            dense.inputs.push(x);
            if d + 1 < n_dense {
                dense.active.push(y.iter().map(|&v| v > T::zero()).collect());
                for v in &mut y {
                    *v = v.max(T::zero());
                }
                if let Some(rng) = dropout.as_deref_mut() {
                    let mask: Vec<T> = (0..y.len())
                        .map(|_| {
                            if rng.random::<f64>() < 1.0 - self.config.dropout {
                                scale
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    for (v, m) in y.iter_mut().zip(&mask) {
                        *v = *v * *m;
                    }
                    dense.masks.push(mask);
                }
            }
            x = y;
        }
        Trace {
            lstm,
            dense,
            probs: softmax(&x),
            logits: x,
        }
    }

    /// Class probabilities for one example (row-major `seq_len x input_dim`).
    ///
    /// `Mode::Train` applies inverted dropout drawn from `rng`.
    pub fn forward(&self, input: &[T], mode: Mode, rng: &mut ChaCha8Rng) -> Result<Vec<T>, NnError> {
        self.check_input(input)?;
        let rng = match mode {
            Mode::Train => Some(rng),
            Mode::Infer => None,
        };
        Ok(self.run(input, rng).probs)
    }

    /// Pre-softmax outputs; `Mode::Train` applies dropout drawn from `rng`.
    pub fn logits(&self, input: &[T], mode: Mode, rng: &mut ChaCha8Rng) -> Result<Vec<T>, NnError> {
        self.check_input(input)?;
        let rng = match mode {
            Mode::Train => Some(rng),
            Mode::Infer => None,
        };
        Ok(self.run(input, rng).logits)
    }

    pub fn predict(&self, input: &[T]) -> Result<Vec<T>, NnError> {
        self.check_input(input)?;
        Ok(self.run(input, None).probs)
    }

    /// Pre-activation values of every hidden dense layer, with dropout drawn
    /// from `dropout` when given.
    pub fn hidden_preactivations(&self, input: &[T], dropout: Option<&mut ChaCha8Rng>) -> Result<Vec<Vec<T>>, NnError> {
        self.check_input(input)?;
        let tr = self.run(input, dropout);
        Ok((0..self.n_dense() - 1)
            .map(|d| {
                let wi = self.dense_index(d);
                let mut y = self.params[wi + 1].data.clone();
                matvec_add(&self.params[wi].data, &tr.dense.inputs[d], &mut y);
                y
            })
            .collect())
    }

    /// Mean cross-entropy over the batch and its gradient for every parameter.
    ///
    /// With `dropout_seed = Some(s)` dropout is active and example `i` draws its
    /// masks from a generator seeded by `(s, i)`, so repeated calls see identical
    /// masks. `None` evaluates in infer mode.
    pub fn loss_and_grads(
        &self,
        batch: &[(&[T], usize)],
        dropout_seed: Option<u64>,
    ) -> Result<(T, Gradients<T>), NnError> {
        let mut grads = self.zero_gradients();
        let mut total = T::zero();
        let inv_n = T::one() / T::c(batch.len().max(1) as f64);
        for (i, &(input, label)) in batch.iter().enumerate() {
            self.check_input(input)?;
            if label >= self.config.n_classes {
                return Err(NnError::LabelOutOfRange {
                    label,
                    n_classes: self.config.n_classes,
                });
            }
            let mut rng = dropout_seed.map(|s| dropout_rng(s, i as u64));
            let tr = self.run(input, rng.as_mut());
            total = total - tr.probs[label].ln();
            let mut dlogits: Vec<T> = tr.probs.iter().map(|&p| p * inv_n).collect();
            dlogits[label] = dlogits[label] - inv_n;
            self.backward(input, &tr, dlogits, &mut grads);
        }
        let loss = total * inv_n;
        if !loss.is_finite() {
            return Err(NnError::NaNLoss(format!("loss = {loss:?} over {} examples", batch.len())));
        }
        for (t, g) in self.params.iter().zip(&grads) {
            if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                return Err(NnError::NaNLoss(format!("non-finite gradient in {} at {pos}", t.name)));
            }
        }
        Ok((loss, grads))
    }

    fn backward(&self, input: &[T], tr: &Trace<T>, dlogits: Vec<T>, grads: &mut Gradients<T>) {
        let n_dense = self.n_dense();
        let mut dy = dlogits;
        for d in (0..n_dense).rev() {
            let wi = self.dense_index(d);
            if d + 1 < n_dense {
                let active = &tr.dense.active[d];
                let mask = tr.dense.masks.get(d);
                for (j, g) in dy.iter_mut().enumerate() {
                    if !active[j] {
                        *g = T::zero();
                    } else if let Some(m) = mask {
                        *g = *g * m[j];
                    }
                }
            }
            let x = &tr.dense.inputs[d];
            let w = &self.params[wi].data;
            let cols = x.len();
            let mut dx = vec![T::zero(); cols];
            {
                let (gw, rest) = grads[wi..].split_at_mut(1);
                let gw = &mut gw[0];
                let gb = &mut rest[0];
                for (r, &g) in dy.iter().enumerate() {
                    if g == T::zero() {
                        continue;
                    }
                    axpy(g, x, &mut gw[r * cols..(r + 1) * cols]);
                    gb[r] = gb[r] + g;
                    axpy(g, &w[r * cols..(r + 1) * cols], &mut dx);
                }
            }
            dy = dx;
        }

        // dy is now the gradient w.r.t. the last hidden state of the top LSTM.
        let steps = self.config.seq_len;
        let top = self.n_lstm() - 1;
        let mut dh_seq = vec![T::zero(); steps * self.config.lstm_units[top]];
        let h_top = self.config.lstm_units[top];
        dh_seq[(steps - 1) * h_top..].copy_from_slice(&dy);
        for l in (0..self.n_lstm()).rev() {
            let layer_input: &[T] = if l == 0 {
                input
            } else {
                &tr.lstm[l - 1].hidden[self.config.lstm_units[l - 1]..]
            };
            dh_seq = self.lstm_backward(l, layer_input, &tr.lstm[l], &dh_seq, l > 0, grads);
        }
    }

    /// BPTT through one layer. `dh_ext` is `T x h`; returns `T x input_dim`
    /// input gradients when `want_dx`.
    fn lstm_backward(
        &self,
        layer: usize,
        inputs: &[T],
        tr: &LstmTrace<T>,
        dh_ext: &[T],
        want_dx: bool,
        grads: &mut Gradients<T>,
    ) -> Vec<T> {
        let p = self.lstm(layer);
        let (h, n_in) = (p.hidden_dim, p.input_dim);
        let steps = self.config.seq_len;
        let base = 3 * layer;
        let (gw, rest) = grads[base..].split_at_mut(1);
        let (gu, rest) = rest.split_at_mut(1);
        let (gw, gu, gb) = (&mut gw[0], &mut gu[0], &mut rest[0]);

        let mut dx = if want_dx { vec![T::zero(); steps * n_in] } else { Vec::new() };
        let mut dh_next = vec![T::zero(); h];
        let mut dc_next = vec![T::zero(); h];
        let mut dz = vec![T::zero(); 4 * h];
        let one = T::one();
        for t in (0..steps).rev() {
            let gates = &tr.gates[t * 4 * h..(t + 1) * 4 * h];
            for j in 0..h {
                let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let tc = tr.tanh_cells[t * h + j];
                let c_prev = tr.cells[t * h + j];
                let dh = dh_ext[t * h + j] + dh_next[j];
                let dc = dh * o * (one - tc * tc) + dc_next[j];
                dz[j] = dc * g * i * (one - i);
                dz[h + j] = dc * c_prev * f * (one - f);
                dz[2 * h + j] = dc * i * (one - g * g);
                dz[3 * h + j] = dh * tc * o * (one - o);
                dc_next[j] = dc * f;
            }
            let x = &inputs[t * n_in..(t + 1) * n_in];
            let h_prev = &tr.hidden[t * h..(t + 1) * h];
            dh_next.fill(T::zero());
            for (r, &g) in dz.iter().enumerate() {
                if g == T::zero() {
                    continue;
                }
                axpy(g, x, &mut gw[r * n_in..(r + 1) * n_in]);
                axpy(g, h_prev, &mut gu[r * h..(r + 1) * h]);
                gb[r] = gb[r] + g;
                axpy(g, &p.u[r * h..(r + 1) * h], &mut dh_next);
                if want_dx {
                    axpy(g, &p.w[r * n_in..(r + 1) * n_in], &mut dx[t * n_in..(t + 1) * n_in]);
                }
            }
        }
        dx
    }

    /// Mean infer-mode cross-entropy, without gradients.
    pub fn mean_loss(&self, batch: &[(&[T], usize)]) -> Result<T, NnError> {
        let mut total = T::zero();
        for &(input, label) in batch {
            let p = self.predict(input)?;
            total = total - p[label].ln();
        }
        Ok(total / T::c(batch.len().max(1) as f64))
    }
}

/// Index of the largest probability (first one on ties).
pub fn argmax<T: Scalar>(probs: &[T]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

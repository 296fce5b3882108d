//! The adaptive gate attention classifier.
//!
//! Pipeline for one sentence of `m` tokens:
//!
//! ```text
//! tokens ─ embed ─▶ x [k×m] ─ CNN | LSTM ─▶ C [d×m] ─ W^C·C + b^C ─▶ H^C
//! TCoL / V [c×m] ─ W^ζ·ζ + b^ζ ─▶ H^ζ
//! H^O = relu(H^C) + valve(σ(H^C), ε) ⊙ H^ζ
//! α = softmax over positions of H^O (per feature row)
//! a = Σ_t α_t ⊙ C_t  ─ dropout ─ linear ─▶ logits [c]
//! ```

mod checkpoint;
mod config;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub(crate) use config::parse_value;
pub use config::{parse_key_values, Extractor, ModelConfig, CONV_ACTIVATION, MODEL_KEYS};

use crate::autograd::{Graph, Var};
use crate::dropout::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Elementwise valve: `a` inside the closed band `[0.5 − ε, 0.5 + ε]`,
/// zero outside.
pub fn valve(a: f64, epsilon: f64) -> f64 {
    if 0.5 - epsilon <= a && a <= 0.5 + epsilon {
        a
    } else {
        0.0
    }
}

/// Named parameter tensors in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T: Scalar = f32> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.tensors[i])
    }

    pub fn total_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    weight: usize,
    bias: usize,
}

/// Positions of each role inside a [`ParamSet`].
#[derive(Clone, Debug)]
struct Layout {
    embedding: usize,
    conv: Vec<(usize, Linear)>,
    lstm: Option<LstmIds>,
    proj_c: Linear,
    proj_tcol: Linear,
    head: Vec<Linear>,
}

#[derive(Clone, Copy, Debug)]
struct LstmIds {
    w_input: usize,
    w_hidden: usize,
    bias: usize,
}

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug)]
enum Init {
    Embedding,
    /// Uniform in ±1/√fan_in.
    Scaled {
        fan_in: usize,
    },
    Zero,
}

fn declare(cfg: &ModelConfig) -> (Layout, Vec<(String, Vec<usize>, Init)>) {
    let mut decls: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| {
        decls.push((name, shape, init));
        decls.len() - 1
    };
    let (k, d, c) = (cfg.embed_dim, cfg.feature_dim(), cfg.num_classes);
    let embedding = push("embedding".into(), vec![cfg.vocab_size, k], Init::Embedding);
    let mut conv = Vec::new();
    let mut lstm = None;
    match cfg.extractor {
        Extractor::Cnn => {
            for &h in &cfg.filter_windows {
                let n = cfg.filters_per_window;
                let weight = push(
                    format!("conv{h}.weight"),
                    vec![n, h * k],
                    Init::Scaled { fan_in: h * k },
                );
                let bias = push(format!("conv{h}.bias"), vec![n], Init::Zero);
                conv.push((h, Linear { weight, bias }));
            }
        }
        Extractor::Lstm => {
            let w_input = push(
                "lstm.w_input".into(),
                vec![4 * d, k],
                Init::Scaled { fan_in: k },
            );
            let w_hidden = push(
                "lstm.w_hidden".into(),
                vec![4 * d, d],
                Init::Scaled { fan_in: d },
            );
            let bias = push("lstm.bias".into(), vec![4 * d], Init::Zero);
            lstm = Some(LstmIds {
                w_input,
                w_hidden,
                bias,
            });
        }
    }
    let proj_c = Linear {
        weight: push(
            "proj_c.weight".into(),
            vec![d, d],
            Init::Scaled { fan_in: d },
        ),
        bias: push("proj_c.bias".into(), vec![d], Init::Zero),
    };
    let proj_tcol = Linear {
        weight: push(
            "proj_tcol.weight".into(),
            vec![d, c],
            Init::Scaled { fan_in: c },
        ),
        bias: push("proj_tcol.bias".into(), vec![d], Init::Zero),
    };
    let mut head = Vec::new();
    for l in 0..cfg.head_layers - 1 {
        head.push(Linear {
            weight: push(
                format!("head{l}.weight"),
                vec![d, d],
                Init::Scaled { fan_in: d },
            ),
            bias: push(format!("head{l}.bias"), vec![d], Init::Zero),
        });
    }
    head.push(Linear {
        weight: push("out.weight".into(), vec![c, d], Init::Scaled { fan_in: d }),
        bias: push("out.bias".into(), vec![c], Init::Zero),
    });
    let layout = Layout {
        embedding,
        conv,
        lstm,
        proj_c,
        proj_tcol,
        head,
    };
    (layout, decls)
}

/// Parameter names and shapes implied by `cfg`, in canonical order.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    declare(cfg).1.into_iter().map(|(n, s, _)| (n, s)).collect()
}

/// Intermediate nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardTrace {
    pub embedded: Var,
    pub features: Var,
    pub h_c: Var,
    pub h_tcol: Var,
    pub h_o: Var,
    pub attention: Var,
    pub pooled: Var,
    pub logits: Var,
}

/// Model inputs for one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance<T: Scalar = f32> {
    pub tokens: Vec<usize>,
    /// Normalized TCoL matrix `[c×m]`.
    pub tcol: Tensor<T>,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct AgaModel<T: Scalar = f32> {
    config: ModelConfig,
    layout: Layout,
    pub params: ParamSet<T>,
}

impl<T: Scalar> AgaModel<T> {
    /// Allocates parameters with seeded initialization: embeddings uniform in
    /// ±0.05, weight matrices uniform in ±1/√fan_in, biases zero.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (layout, decls) = declare(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut names = Vec::with_capacity(decls.len());
        let mut tensors = Vec::with_capacity(decls.len());
        for (name, shape, init) in decls {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Zero => vec![T::zero(); n],
                Init::Embedding => uniform(&mut rng, n, 0.05),
                Init::Scaled { fan_in } => uniform(&mut rng, n, 1.0 / (fan_in as f64).sqrt()),
            };
            names.push(name);
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(AgaModel {
            config,
            layout,
            params: ParamSet { names, tensors },
        })
    }

    /// Wraps existing parameters, checking names and shapes against `config`.
    pub fn from_params(config: ModelConfig, params: ParamSet<T>) -> Result<Self> {
        config.validate()?;
        let (layout, decls) = declare(&config);
        if decls.len() != params.len() {
            return Err(Error::Dimension(format!(
                "config declares {} parameters, got {}",
                decls.len(),
                params.len()
            )));
        }
        for ((name, shape, _), (pn, pt)) in
            decls.iter().zip(params.names.iter().zip(&params.tensors))
        {
            if name != pn || shape.as_slice() != pt.shape() {
                return Err(Error::Dimension(format!(
                    "parameter `{pn}` {:?} does not match declared `{name}` {shape:?}",
                    pt.shape()
                )));
            }
        }
        Ok(AgaModel {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Same weights with a different gate width, GI switch or dropout
    /// setting.
    pub fn with_config(&self, config: ModelConfig) -> Result<Self> {
        Self::from_params(config, self.params.clone())
    }

    pub fn cast<U: Scalar>(&self) -> AgaModel<U> {
        AgaModel {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.cast(),
        }
    }

    /// Whether the optimizer should update parameter `i`.
    pub fn trainable(&self, i: usize) -> bool {
        !(self.config.freeze_embeddings && i == self.layout.embedding)
    }

    /// Overwrites embedding rows, e.g. from pretrained vectors.
    pub fn set_embedding_rows(
        &mut self,
        rows: impl IntoIterator<Item = (usize, Vec<f32>)>,
    ) -> Result<()> {
        let k = self.config.embed_dim;
        let table = &mut self.params.tensors[self.layout.embedding];
        let vocab = table.shape()[0];
        for (idx, vec) in rows {
            if idx >= vocab || vec.len() != k {
                return Err(Error::Dimension(format!(
                    "embedding row {idx} of length {} does not fit [{vocab}×{k}]",
                    vec.len()
                )));
            }
            for (dst, v) in table.data_mut()[idx * k..(idx + 1) * k].iter_mut().zip(vec) {
                *dst = T::from_f64(v as f64);
            }
        }
        Ok(())
    }

    /// Places every parameter on `g`, borrowing the values.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a, T>) -> Vec<Var> {
        self.params
            .tensors
            .iter()
            .enumerate()
            .map(|(i, t)| g.bind(t, self.trainable(i)))
            .collect()
    }

    /// Runs the pipeline on parameter nodes `vars` (from [`bind`](Self::bind)
    /// or any leaves with the same shapes).
    pub fn forward(
        &self,
        g: &mut Graph<'_, T>,
        vars: &[Var],
        tokens: &[usize],
        tcol: &Tensor<T>,
        mode: Mode,
        rng: &mut impl Rng,
    ) -> Result<ForwardTrace> {
        let cfg = &self.config;
        let lay = &self.layout;
        let embedded = embed(g, vars[lay.embedding], tokens)?;
        let features = match (&cfg.extractor, lay.lstm) {
            (Extractor::Lstm, Some(ids)) => {
                let w = LstmWeights {
                    w_input: vars[ids.w_input],
                    w_hidden: vars[ids.w_hidden],
                    bias: vars[ids.bias],
                };
                lstm_features(g, embedded, &w)?
            }
            _ => {
                let bank: Vec<ConvFilters> = lay
                    .conv
                    .iter()
                    .map(|&(window, l)| ConvFilters {
                        window,
                        weight: vars[l.weight],
                        bias: vars[l.bias],
                    })
                    .collect();
                cnn_features(g, embedded, &bank)?
            }
        };
        let tcol_var = g.constant(tcol.clone());
        let (h_c, h_tcol) = if cfg.gi {
            project_shared(
                g,
                features,
                tcol_var,
                (vars[lay.proj_c.weight], vars[lay.proj_c.bias]),
                (vars[lay.proj_tcol.weight], vars[lay.proj_tcol.bias]),
            )?
        } else {
            let h_c = linear_cols(g, features, vars[lay.proj_c.weight], vars[lay.proj_c.bias])?;
            let zeros = Tensor::zeros(g.value(h_c).shape().to_vec());
            (h_c, g.constant(zeros))
        };
        let h_o = adagate(g, h_c, h_tcol, cfg.epsilon)?;
        let (attention, pooled) = attend_pool(g, h_o, features)?;
        let head: Vec<(Var, Var)> = lay
            .head
            .iter()
            .map(|l| (vars[l.weight], vars[l.bias]))
            .collect();
        let logits = classify(g, pooled, &head, &cfg.dropout_spec(), mode, rng)?;
        Ok(ForwardTrace {
            embedded,
            features,
            h_c,
            h_tcol,
            h_o,
            attention,
            pooled,
            logits,
        })
    }

    /// Logits of one instance in evaluation mode, without gradients.
    pub fn predict_logits(&self, inst: &Instance<T>) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self
            .params
            .tensors
            .iter()
            .map(|t| g.bind(t, false))
            .collect();
        // Eval mode never samples; any rng will do.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let trace = self.forward(
            &mut g,
            &vars,
            &inst.tokens,
            &inst.tcol,
            Mode::Eval,
            &mut rng,
        )?;
        Ok(g.value(trace.logits).data().to_vec())
    }
}

fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<T> {
    (0..n)
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect()
}

/// Index of the largest logit; the first one wins ties.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Embedding lookup: column `j` of the `[k×m]` result is the embedding of
/// token `j`.
pub fn embed<T: Scalar>(g: &mut Graph<'_, T>, table: Var, tokens: &[usize]) -> Result<Var> {
    g.embed(table, tokens)
}

/// One window size of the convolutional extractor.
#[derive(Clone, Copy, Debug)]
pub struct ConvFilters {
    pub window: usize,
    /// `[n×(window·k)]`
    pub weight: Var,
    /// `[n]`
    pub bias: Var,
}

/// Same-padded convolutions followed by ReLU, stacked along the feature
/// axis into `C: [d×m]`.
pub fn cnn_features<T: Scalar>(g: &mut Graph<'_, T>, x: Var, bank: &[ConvFilters]) -> Result<Var> {
    let mut maps = Vec::with_capacity(bank.len());
    for f in bank {
        let pre = g.conv1d_same(x, f.weight, f.bias, f.window)?;
        maps.push(g.relu(pre));
    }
    if maps.len() == 1 {
        return Ok(maps[0]);
    }
    g.concat_rows(&maps)
}

/// LSTM weights with gates stacked as input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    /// `[4d×k]`
    pub w_input: Var,
    /// `[4d×d]`
    pub w_hidden: Var,
    /// `[4d]`
    pub bias: Var,
}

/// One LSTM cell update, returning `(c_t, h_t)`.
pub fn lstm_step<T: Scalar>(
    g: &mut Graph<'_, T>,
    c_prev: Var,
    h_prev: Var,
    x_t: Var,
    w: &LstmWeights,
) -> Result<(Var, Var)> {
    let (rows, k) = g.value(w.w_input).dims2()?;
    let d = g.value(c_prev).numel();
    if rows != 4 * d || g.value(x_t).shape() != [k] || g.value(h_prev).shape() != [d] {
        return Err(Error::Dimension(format!(
            "lstm_step: weights [{rows}×{k}] do not fit state {d} and input {:?}",
            g.value(x_t).shape()
        )));
    }
    let wx = g.matmul(w.w_input, x_t)?;
    let uh = g.matmul(w.w_hidden, h_prev)?;
    let z = g.add(wx, uh)?;
    let z = g.add(z, w.bias)?;
    let zi = g.slice(z, 0, d)?;
    let zf = g.slice(z, d, d)?;
    let zg = g.slice(z, 2 * d, d)?;
    let zo = g.slice(z, 3 * d, d)?;
    let input = g.sigmoid(zi);
    let forget = g.sigmoid(zf);
    let candidate = g.tanh(zg);
    let output = g.sigmoid(zo);
    let kept = g.mul(forget, c_prev)?;
    let written = g.mul(input, candidate)?;
    let c = g.add(kept, written)?;
    let squashed = g.tanh(c);
    let h = g.mul(output, squashed)?;
    Ok((c, h))
}

/// Unidirectional LSTM from zero initial states; column `t` of the `[d×m]`
/// result is `h_t`.
pub fn lstm_features<T: Scalar>(g: &mut Graph<'_, T>, x: Var, w: &LstmWeights) -> Result<Var> {
    let (_, m) = g.value(x).dims2()?;
    let d = g.value(w.w_hidden).dims2()?.1;
    let mut c = g.constant(Tensor::zeros(vec![d]));
    let mut h = g.constant(Tensor::zeros(vec![d]));
    let mut hs = Vec::with_capacity(m);
    for t in 0..m {
        let x_t = g.column(x, t)?;
        (c, h) = lstm_step(g, c, h, x_t, w)?;
        hs.push(h);
    }
    g.stack_columns(&hs)
}

fn linear_cols<T: Scalar>(g: &mut Graph<'_, T>, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let wx = g.matmul(weight, x)?;
    g.add_col_bias(wx, bias)
}

/// Maps semantic features and normalized TCoL into the shared `[d×m]`
/// space: `H^C = W^C·C + b^C`, `H^ζ = W^ζ·ζ + b^ζ`.
pub fn project_shared<T: Scalar>(
    g: &mut Graph<'_, T>,
    features: Var,
    tcol: Var,
    (wc, bc): (Var, Var),
    (wz, bz): (Var, Var),
) -> Result<(Var, Var)> {
    let h_c = linear_cols(g, features, wc, bc)?;
    let h_z = linear_cols(g, tcol, wz, bz)?;
    if g.value(h_c).shape() != g.value(h_z).shape() {
        return Err(Error::Dimension(format!(
            "projections disagree: {:?} vs {:?}",
            g.value(h_c).shape(),
            g.value(h_z).shape()
        )));
    }
    Ok((h_c, h_z))
}

/// `H^O = relu(H^C) + valve(σ(H^C), ε) ⊙ H^ζ`.
pub fn adagate<T: Scalar>(
    g: &mut Graph<'_, T>,
    h_c: Var,
    h_tcol: Var,
    epsilon: f64,
) -> Result<Var> {
    if g.value(h_c).shape() != g.value(h_tcol).shape() {
        return Err(Error::Dimension(
            "adagate: H^C and H^ζ shapes differ".into(),
        ));
    }
    let semantic = g.relu(h_c);
    let confidence = g.sigmoid(h_c);
    let gate = g.valve(confidence, epsilon);
    let admitted = g.mul(gate, h_tcol)?;
    g.add(semantic, admitted)
}

/// Attention weights `α` (softmax of `H^O` across positions, per feature
/// row) and the pooled vector `a = Σ_t α_t ⊙ C_t`.
pub fn attend_pool<T: Scalar>(g: &mut Graph<'_, T>, h_o: Var, features: Var) -> Result<(Var, Var)> {
    if g.value(h_o).shape() != g.value(features).shape() {
        return Err(Error::Dimension(
            "attend_pool: H^O and C shapes differ".into(),
        ));
    }
    let alpha = g.softmax_rows(h_o)?;
    let weighted = g.mul(alpha, features)?;
    Ok((alpha, g.sum_cols(weighted)?))
}

/// Output head: dropout before each linear layer, ReLU between layers.
pub fn classify<T: Scalar>(
    g: &mut Graph<'_, T>,
    pooled: Var,
    layers: &[(Var, Var)],
    dropout: &crate::dropout::DropoutSpec,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<Var> {
    let mut x = pooled;
    for (i, &(w, b)) in layers.iter().enumerate() {
        x = dropout.apply(g, x, mode, rng)?;
        let wx = g.matmul(w, x)?;
        x = g.add(wx, b)?;
        if i + 1 < layers.len() {
            x = g.relu(x);
        }
    }
    Ok(x)
}

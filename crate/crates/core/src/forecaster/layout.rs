use serde::{Deserialize, Serialize};

use super::ForecasterConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    Uniform { fan_in: usize },
    Zero,
    One,
}

/// Name, shape and position of one tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub init: Init,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Dense `rows x cols` map, row-major, with optional bias.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: Option<usize>,
    pub rows: usize,
    pub cols: usize,
}

impl Linear {
    /// `out = W x + b`
    #[inline]
    pub fn forward(&self, p: &[f64], x: &[f64], out: &mut [f64]) {
        let w = &p[self.w..self.w + self.rows * self.cols];
        for (r, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &w[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.b.map_or(0.0, |b| p[b + r]);
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            *o = acc;
        }
    }

    /// Accumulates parameter gradients and, when asked, `dx += W^T dy`.
    #[inline]
    pub fn backward(&self, p: &[f64], g: &mut [f64], x: &[f64], dy: &[f64], dx: Option<&mut [f64]>) {
        let n = self.rows * self.cols;
        {
            let gw = &mut g[self.w..self.w + n];
            for (r, d) in dy.iter().enumerate().take(self.rows) {
                if *d == 0.0 {
                    continue;
                }
                let row = &mut gw[r * self.cols..(r + 1) * self.cols];
                for (gi, xi) in row.iter_mut().zip(x) {
                    *gi += d * xi;
                }
            }
        }
        if let Some(b) = self.b {
            for (gb, d) in g[b..b + self.rows].iter_mut().zip(dy) {
                *gb += d;
            }
        }
        if let Some(dx) = dx {
            let w = &p[self.w..self.w + n];
            for (r, d) in dy.iter().enumerate().take(self.rows) {
                if *d == 0.0 {
                    continue;
                }
                let row = &w[r * self.cols..(r + 1) * self.cols];
                for (xi, wi) in dx.iter_mut().zip(row) {
                    *xi += d * wi;
                }
            }
        }
    }
}

/// Gated linear unit: `sigmoid(gate(x)) * value(x)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Glu {
    pub gate: Linear,
    pub value: Linear,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Norm {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LstmLayer {
    /// input weights, `4H x H`, gate blocks ordered input, forget, cell, output
    pub input: Linear,
    /// recurrent weights, `4H x H`, no bias
    pub recurrent: Linear,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub steps: usize,
    pub hidden: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub outputs: usize,
    pub embed: Linear,
    pub lstm: Vec<LstmLayer>,
    pub encoder_glu: Glu,
    pub encoder_norm: Norm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub attn_out: Linear,
    pub attention_glu: Glu,
    pub attention_norm: Norm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub ff_glu: Glu,
    pub ff_norm: Norm,
    pub head: Linear,
    pub specs: Vec<TensorSpec>,
    pub total: usize,
}

struct Builder {
    specs: Vec<TensorSpec>,
    total: usize,
}

impl Builder {
    fn tensor(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        let offset = self.total;
        let len: usize = shape.iter().product();
        self.total += len;
        self.specs.push(TensorSpec {
            name,
            shape,
            offset,
            init,
        });
        offset
    }

    fn linear(&mut self, name: &str, rows: usize, cols: usize, bias: bool) -> Linear {
        let w = self.tensor(format!("{name}.weight"), vec![rows, cols], Init::Uniform { fan_in: cols });
        let b = bias.then(|| self.tensor(format!("{name}.bias"), vec![rows], Init::Zero));
        Linear { w, b, rows, cols }
    }

    fn glu(&mut self, name: &str, width: usize) -> Glu {
        Glu {
            gate: self.linear(&format!("{name}.gate"), width, width, true),
            value: self.linear(&format!("{name}.value"), width, width, true),
        }
    }

    fn norm(&mut self, name: &str, width: usize) -> Norm {
        Norm {
            gain: self.tensor(format!("{name}.gain"), vec![width], Init::One),
            bias: self.tensor(format!("{name}.bias"), vec![width], Init::Zero),
        }
    }
}

impl Layout {
    pub fn new(config: &ForecasterConfig) -> Self {
        let h = config.hidden_size;
        let heads = config.attention_heads;
        let head_dim = config.head_dim();
        let inner = heads * head_dim;
        let outputs = config.loss.output_count();
        let mut b = Builder {
            specs: Vec::new(),
            total: 0,
        };
        let embed = b.linear("embed", h, 2, true);
        let lstm = (0..config.recurrent_layers)
            .map(|l| LstmLayer {
                input: b.linear(&format!("lstm.{l}.input"), 4 * h, h, true),
                recurrent: b.linear(&format!("lstm.{l}.recurrent"), 4 * h, h, false),
            })
            .collect();
        let encoder_glu = b.glu("encoder.glu", h);
        let encoder_norm = b.norm("encoder.norm", h);
        let query = b.linear("attention.query", inner, h, false);
        let key = b.linear("attention.key", inner, h, false);
        let value = b.linear("attention.value", inner, h, false);
        let attn_out = b.linear("attention.output", h, inner, true);
        let attention_glu = b.glu("attention.glu", h);
        let attention_norm = b.norm("attention.norm", h);
        let ff_in = b.linear("feedforward.input", h, h, true);
        let ff_out = b.linear("feedforward.output", h, h, true);
        let ff_glu = b.glu("feedforward.glu", h);
        let ff_norm = b.norm("feedforward.norm", h);
        let head = b.linear("head", outputs, h, true);
        Self {
            steps: config.input_len,
            hidden: h,
            heads,
            head_dim,
            outputs,
            embed,
            lstm,
            encoder_glu,
            encoder_norm,
            query,
            key,
            value,
            attn_out,
            attention_glu,
            attention_norm,
            ff_in,
            ff_out,
            ff_glu,
            ff_norm,
            head,
            specs: b.specs,
            total: b.total,
        }
    }

    pub fn inner(&self) -> usize {
        self.heads * self.head_dim
    }
}

//! Forward pass with cached activations and the matching reverse pass.

use super::layout::{Glu, Layout, LstmLayer, Norm};
use super::{Loss, TrainingSample};

const NORM_EPS: f64 = 1e-5;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    /// post-activation gates per step: input, forget, cell candidate, output
    gates: Vec<f64>,
    cell: Vec<f64>,
    tanh_cell: Vec<f64>,
    hidden: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct GluCache {
    gate: Vec<f64>,
    value: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct NormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

/// Activations of one forward pass, reused across samples.
#[derive(Debug, Clone)]
pub struct Cache {
    x: Vec<f64>,
    emb: Vec<f64>,
    layers: Vec<LayerCache>,
    enc_glu: GluCache,
    enc_norm: NormCache,
    encoded: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    weights: Vec<f64>,
    ctx: Vec<f64>,
    attn: Vec<f64>,
    att_glu: GluCache,
    att_norm: NormCache,
    attended: Vec<f64>,
    ff_pre: Vec<f64>,
    ff_act: Vec<f64>,
    ff_hidden: Vec<f64>,
    ff_glu: GluCache,
    ff_norm: NormCache,
    fused: Vec<f64>,
    out: Vec<f64>,
    z: Vec<f64>,
    rec: Vec<f64>,
}

impl Cache {
    pub(crate) fn new(layout: &Layout) -> Self {
        let (l, h, a) = (layout.steps, layout.hidden, layout.inner());
        let glu = |n: usize| GluCache {
            gate: vec![0.0; n],
            value: vec![0.0; n],
        };
        let norm = |n: usize, rows: usize| NormCache {
            xhat: vec![0.0; n],
            inv_std: vec![0.0; rows],
        };
        Self {
            x: vec![0.0; 2 * l],
            emb: vec![0.0; l * h],
            layers: layout
                .lstm
                .iter()
                .map(|_| LayerCache {
                    gates: vec![0.0; 4 * l * h],
                    cell: vec![0.0; l * h],
                    tanh_cell: vec![0.0; l * h],
                    hidden: vec![0.0; l * h],
                })
                .collect(),
            enc_glu: glu(l * h),
            enc_norm: norm(l * h, l),
            encoded: vec![0.0; l * h],
            q: vec![0.0; a],
            k: vec![0.0; l * a],
            v: vec![0.0; l * a],
            weights: vec![0.0; layout.heads * l],
            ctx: vec![0.0; a],
            attn: vec![0.0; h],
            att_glu: glu(h),
            att_norm: norm(h, 1),
            attended: vec![0.0; h],
            ff_pre: vec![0.0; h],
            ff_act: vec![0.0; h],
            ff_hidden: vec![0.0; h],
            ff_glu: glu(h),
            ff_norm: norm(h, 1),
            fused: vec![0.0; h],
            out: vec![0.0; layout.outputs],
            z: vec![0.0; 4 * h],
            rec: vec![0.0; 4 * h],
        }
    }
}

/// `out = sigmoid(gate(x)) * value(x)`; `gate`/`value` receive the cached halves.
fn glu_forward(glu: &Glu, p: &[f64], x: &[f64], gate: &mut [f64], value: &mut [f64], out: &mut [f64]) {
    glu.gate.forward(p, x, gate);
    gate.iter_mut().for_each(|g| *g = sigmoid(*g));
    glu.value.forward(p, x, value);
    for ((o, g), v) in out.iter_mut().zip(gate.iter()).zip(value.iter()) {
        *o = g * v;
    }
}

fn glu_backward(glu: &Glu, p: &[f64], grad: &mut [f64], x: &[f64], gate: &[f64], value: &[f64], dy: &[f64], dx: &mut [f64]) {
    let d_value: Vec<f64> = dy.iter().zip(gate).map(|(d, g)| d * g).collect();
    let d_gate: Vec<f64> = dy
        .iter()
        .zip(gate)
        .zip(value)
        .map(|((d, g), v)| d * v * g * (1.0 - g))
        .collect();
    glu.value.backward(p, grad, x, &d_value, Some(dx));
    glu.gate.backward(p, grad, x, &d_gate, Some(dx));
}

fn norm_forward(norm: &Norm, p: &[f64], x: &[f64], xhat: &mut [f64], out: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + NORM_EPS).sqrt();
    for (j, ((xh, o), xv)) in xhat.iter_mut().zip(out.iter_mut()).zip(x).enumerate() {
        *xh = (xv - mean) * inv;
        *o = p[norm.gain + j] * *xh + p[norm.bias + j];
    }
    inv
}

/// Overwrites `dx` with the input gradient.
fn norm_backward(norm: &Norm, p: &[f64], grad: &mut [f64], xhat: &[f64], inv: f64, dy: &[f64], dx: &mut [f64]) {
    let n = dy.len();
    let mut dxhat = vec![0.0; n];
    for j in 0..n {
        dxhat[j] = dy[j] * p[norm.gain + j];
        grad[norm.gain + j] += dy[j] * xhat[j];
        grad[norm.bias + j] += dy[j];
    }
    let mean_d = dxhat.iter().sum::<f64>() / n as f64;
    let mean_dx = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    for j in 0..n {
        dx[j] = inv * (dxhat[j] - mean_d - xhat[j] * mean_dx);
    }
}

fn lstm_forward(layer: &LstmLayer, p: &[f64], input: &[f64], lc: &mut LayerCache, z: &mut [f64], rec: &mut [f64], steps: usize, h: usize) {
    for t in 0..steps {
        layer.input.forward(p, &input[t * h..(t + 1) * h], z);
        if t > 0 {
            layer.recurrent.forward(p, &lc.hidden[(t - 1) * h..t * h], rec);
            z.iter_mut().zip(rec.iter()).for_each(|(a, b)| *a += b);
        }
        let g = &mut lc.gates[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            let i = sigmoid(z[j]);
            let f = sigmoid(z[h + j]);
            let cand = z[2 * h + j].tanh();
            let o = sigmoid(z[3 * h + j]);
            let c_prev = if t > 0 { lc.cell[(t - 1) * h + j] } else { 0.0 };
            let c = f * c_prev + i * cand;
            let tc = c.tanh();
            g[j] = i;
            g[h + j] = f;
            g[2 * h + j] = cand;
            g[3 * h + j] = o;
            lc.cell[t * h + j] = c;
            lc.tanh_cell[t * h + j] = tc;
            lc.hidden[t * h + j] = o * tc;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn lstm_backward(layer: &LstmLayer, p: &[f64], grad: &mut [f64], input: &[f64], lc: &LayerCache, dh_out: &[f64], dx: &mut [f64], steps: usize, h: usize) {
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    for t in (0..steps).rev() {
        let g = &lc.gates[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            let (i, f, cand, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let tc = lc.tanh_cell[t * h + j];
            let c_prev = if t > 0 { lc.cell[(t - 1) * h + j] } else { 0.0 };
            let dh = dh_out[t * h + j] + dh_next[j];
            let d_o = dh * tc;
            let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
            dc_next[j] = dc * f;
            dz[j] = dc * cand * i * (1.0 - i);
            dz[h + j] = dc * c_prev * f * (1.0 - f);
            dz[2 * h + j] = dc * i * (1.0 - cand * cand);
            dz[3 * h + j] = d_o * o * (1.0 - o);
        }
        layer.input.backward(p, grad, &input[t * h..(t + 1) * h], &dz, Some(&mut dx[t * h..(t + 1) * h]));
        dh_next.fill(0.0);
        if t > 0 {
            layer.recurrent.backward(p, grad, &lc.hidden[(t - 1) * h..t * h], &dz, Some(&mut dh_next));
        }
    }
}

/// Runs the network and returns the raw outputs held in `cache`.
pub(crate) fn forward<'c>(layout: &Layout, p: &[f64], inputs: &[f64], positions: &[u32], cache: &'c mut Cache) -> &'c [f64] {
    let (l, h, a, dh) = (layout.steps, layout.hidden, layout.inner(), layout.head_dim);
    for t in 0..l {
        cache.x[2 * t] = inputs[t];
        cache.x[2 * t + 1] = positions[t] as f64 / l as f64;
        layout.embed.forward(p, &cache.x[2 * t..2 * t + 2], &mut cache.emb[t * h..(t + 1) * h]);
    }

    for (li, layer) in layout.lstm.iter().enumerate() {
        let (below, rest) = cache.layers.split_at_mut(li);
        let input: &[f64] = if li == 0 { &cache.emb } else { &below[li - 1].hidden };
        lstm_forward(layer, p, input, &mut rest[0], &mut cache.z, &mut cache.rec, l, h);
    }

    let top = &cache.layers[layout.lstm.len() - 1].hidden;
    let mut gated = vec![0.0; h];
    let mut pre = vec![0.0; h];
    for t in 0..l {
        let r = t * h..(t + 1) * h;
        glu_forward(
            &layout.encoder_glu,
            p,
            &top[r.clone()],
            &mut cache.enc_glu.gate[r.clone()],
            &mut cache.enc_glu.value[r.clone()],
            &mut gated,
        );
        for j in 0..h {
            pre[j] = cache.emb[t * h + j] + gated[j];
        }
        cache.enc_norm.inv_std[t] = norm_forward(
            &layout.encoder_norm,
            p,
            &pre,
            &mut cache.enc_norm.xhat[r.clone()],
            &mut cache.encoded[r],
        );
    }

    // causal self-attention, evaluated for the final query position only
    let qpos = l - 1;
    let enc = &cache.encoded;
    layout.query.forward(p, &enc[qpos * h..(qpos + 1) * h], &mut cache.q);
    for t in 0..=qpos {
        layout.key.forward(p, &enc[t * h..(t + 1) * h], &mut cache.k[t * a..(t + 1) * a]);
        layout.value.forward(p, &enc[t * h..(t + 1) * h], &mut cache.v[t * a..(t + 1) * a]);
    }
    let scale = 1.0 / (dh as f64).sqrt();
    for head in 0..layout.heads {
        let hs = head * dh;
        let w = &mut cache.weights[head * l..(head + 1) * l];
        let mut max = f64::NEG_INFINITY;
        for t in 0..l {
            if t > qpos {
                w[t] = f64::NEG_INFINITY;
                continue;
            }
            let s: f64 = (0..dh).map(|d| cache.q[hs + d] * cache.k[t * a + hs + d]).sum::<f64>() * scale;
            w[t] = s;
            max = max.max(s);
        }
        let mut sum = 0.0;
        for wt in w.iter_mut() {
            *wt = (*wt - max).exp();
            sum += *wt;
        }
        w.iter_mut().for_each(|wt| *wt /= sum);
        for d in 0..dh {
            cache.ctx[hs + d] = (0..=qpos).map(|t| w[t] * cache.v[t * a + hs + d]).sum();
        }
    }
    layout.attn_out.forward(p, &cache.ctx, &mut cache.attn);

    glu_forward(&layout.attention_glu, p, &cache.attn, &mut cache.att_glu.gate, &mut cache.att_glu.value, &mut gated);
    for j in 0..h {
        pre[j] = cache.encoded[qpos * h + j] + gated[j];
    }
    cache.att_norm.inv_std[0] = norm_forward(&layout.attention_norm, p, &pre, &mut cache.att_norm.xhat, &mut cache.attended);

    layout.ff_in.forward(p, &cache.attended, &mut cache.ff_pre);
    for j in 0..h {
        cache.ff_act[j] = elu(cache.ff_pre[j]);
    }
    layout.ff_out.forward(p, &cache.ff_act, &mut cache.ff_hidden);
    glu_forward(&layout.ff_glu, p, &cache.ff_hidden, &mut cache.ff_glu.gate, &mut cache.ff_glu.value, &mut gated);
    for j in 0..h {
        pre[j] = cache.attended[j] + gated[j];
    }
    cache.ff_norm.inv_std[0] = norm_forward(&layout.ff_norm, p, &pre, &mut cache.ff_norm.xhat, &mut cache.fused);

    layout.head.forward(p, &cache.fused, &mut cache.out);
    &cache.out
}

/// Reverse pass for the activations in `cache`, accumulating into `grad`.
pub(crate) fn backward(layout: &Layout, p: &[f64], cache: &Cache, d_out: &[f64], grad: &mut [f64]) {
    let (l, h, a, dh) = (layout.steps, layout.hidden, layout.inner(), layout.head_dim);
    let qpos = l - 1;

    let mut d_fused = vec![0.0; h];
    layout.head.backward(p, grad, &cache.fused, d_out, Some(&mut d_fused));

    let mut d_pre = vec![0.0; h];
    norm_backward(&layout.ff_norm, p, grad, &cache.ff_norm.xhat, cache.ff_norm.inv_std[0], &d_fused, &mut d_pre);
    let mut d_attended = d_pre.clone();
    let mut d_hidden = vec![0.0; h];
    glu_backward(&layout.ff_glu, p, grad, &cache.ff_hidden, &cache.ff_glu.gate, &cache.ff_glu.value, &d_pre, &mut d_hidden);
    let mut d_act = vec![0.0; h];
    layout.ff_out.backward(p, grad, &cache.ff_act, &d_hidden, Some(&mut d_act));
    let d_ff_pre: Vec<f64> = d_act.iter().zip(&cache.ff_pre).map(|(d, x)| d * elu_grad(*x)).collect();
    layout.ff_in.backward(p, grad, &cache.attended, &d_ff_pre, Some(&mut d_attended));

    norm_backward(&layout.attention_norm, p, grad, &cache.att_norm.xhat, cache.att_norm.inv_std[0], &d_attended, &mut d_pre);
    let mut d_enc = vec![0.0; l * h];
    for j in 0..h {
        d_enc[qpos * h + j] += d_pre[j];
    }
    let mut d_attn = vec![0.0; h];
    glu_backward(&layout.attention_glu, p, grad, &cache.attn, &cache.att_glu.gate, &cache.att_glu.value, &d_pre, &mut d_attn);
    let mut d_ctx = vec![0.0; a];
    layout.attn_out.backward(p, grad, &cache.ctx, &d_attn, Some(&mut d_ctx));

    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; a];
    let mut dk = vec![0.0; l * a];
    let mut dv = vec![0.0; l * a];
    let mut dw = vec![0.0; l];
    for head in 0..layout.heads {
        let hs = head * dh;
        let w = &cache.weights[head * l..(head + 1) * l];
        for t in 0..=qpos {
            dw[t] = (0..dh).map(|d| d_ctx[hs + d] * cache.v[t * a + hs + d]).sum();
            for d in 0..dh {
                dv[t * a + hs + d] += w[t] * d_ctx[hs + d];
            }
        }
        let weighted: f64 = (0..=qpos).map(|t| w[t] * dw[t]).sum();
        for t in 0..=qpos {
            let ds = w[t] * (dw[t] - weighted) * scale;
            for d in 0..dh {
                dq[hs + d] += ds * cache.k[t * a + hs + d];
                dk[t * a + hs + d] += ds * cache.q[hs + d];
            }
        }
    }
    let enc = &cache.encoded;
    layout.query.backward(p, grad, &enc[qpos * h..(qpos + 1) * h], &dq, Some(&mut d_enc[qpos * h..(qpos + 1) * h]));
    for t in 0..=qpos {
        let r = t * h..(t + 1) * h;
        layout.key.backward(p, grad, &enc[r.clone()], &dk[t * a..(t + 1) * a], Some(&mut d_enc[r.clone()]));
        layout.value.backward(p, grad, &enc[r.clone()], &dv[t * a..(t + 1) * a], Some(&mut d_enc[r]));
    }

    let top = &cache.layers[layout.lstm.len() - 1].hidden;
    let mut d_emb = vec![0.0; l * h];
    let mut d_top = vec![0.0; l * h];
    for t in 0..l {
        let r = t * h..(t + 1) * h;
        norm_backward(
            &layout.encoder_norm,
            p,
            grad,
            &cache.enc_norm.xhat[r.clone()],
            cache.enc_norm.inv_std[t],
            &d_enc[r.clone()],
            &mut d_pre,
        );
        for j in 0..h {
            d_emb[t * h + j] += d_pre[j];
        }
        glu_backward(
            &layout.encoder_glu,
            p,
            grad,
            &top[r.clone()],
            &cache.enc_glu.gate[r.clone()],
            &cache.enc_glu.value[r.clone()],
            &d_pre,
            &mut d_top[r],
        );
    }

    let mut d_h = d_top;
    for li in (0..layout.lstm.len()).rev() {
        let input: &[f64] = if li == 0 { &cache.emb } else { &cache.layers[li - 1].hidden };
        let mut dx = vec![0.0; l * h];
        lstm_backward(&layout.lstm[li], p, grad, input, &cache.layers[li], &d_h, &mut dx, l, h);
        d_h = dx;
    }
    for (e, d) in d_emb.iter_mut().zip(&d_h) {
        *e += d;
    }
    for t in 0..l {
        layout.embed.backward(p, grad, &cache.x[2 * t..2 * t + 2], &d_emb[t * h..(t + 1) * h], None);
    }
}

/// Adds `scale * dLoss/dparams` for one sample to `grad`; returns the unscaled loss.
pub(crate) fn accumulate_gradient(
    layout: &Layout,
    loss: &Loss,
    p: &[f64],
    sample: &TrainingSample,
    cache: &mut Cache,
    grad: &mut [f64],
    scale: f64,
) -> f64 {
    forward(layout, p, &sample.inputs, &sample.positions, cache);
    let mut d_out = vec![0.0; layout.outputs];
    let value = loss.evaluate(&cache.out, sample.target, &mut d_out);
    d_out.iter_mut().for_each(|d| *d *= scale);
    backward(layout, p, cache, &d_out, grad);
    value
}

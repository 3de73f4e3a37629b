//! Fixed-architecture MLP over positionally encoded contracted coordinates.
//!
//! Forward, reverse and forward-over-reverse passes are written out by hand.
//! Input gradients come from forward-mode tangents (one per axis), which is
//! also what the Eikonal term differentiates through, so `sdf_gradient` and
//! the training path share one code path.
//!
//! Activations are laid out row-major, one row per point (plain mode) or four
//! rows per point (primal followed by the three axis tangents).

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{cos, exp, sin, Vec3};
use crate::rng::normal;

/// Output slot of the signed distance.
pub const SDF_OUTPUT: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct MlpConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub num_freqs: usize,
    pub outputs: usize,
    /// Radius `r` of an added `|x| - r` term, so the field starts as a sphere.
    pub sphere_prior: Option<f64>,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 4,
            width: 128,
            num_freqs: 6,
            outputs: 1,
            sphere_prior: Some(0.5),
        }
    }
}

impl MlpConfig {
    pub fn encoding_dim(&self) -> usize {
        3 + 6 * self.num_freqs
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.width == 0 || self.outputs == 0 {
            return Err(Error::InvalidConfig(alloc::format!(
                "mlp needs at least one hidden layer, width and output: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerShape {
    fan_in: usize,
    fan_out: usize,
    w_off: usize,
    b_off: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    config: MlpConfig,
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

/// Per-batch activation storage reused across calls.
#[derive(Debug, Default, Clone)]
pub struct MlpWorkspace {
    rows_per_point: usize,
    points: usize,
    /// `acts[0]` is the encoding; `acts[l]` the post-activation of layer `l`.
    acts: Vec<Vec<f64>>,
    /// Pre-activations per layer (hidden layers and output).
    pre: Vec<Vec<f64>>,
    inputs: Vec<Vec3>,
    adj_a: Vec<f64>,
    adj_b: Vec<f64>,
}

impl MlpWorkspace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Network outputs of the last forward pass, `outputs` values per point.
    pub fn outputs(&self) -> &[f64] {
        self.pre.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

#[inline]
fn silu_parts(z: f64) -> (f64, f64, f64) {
    let s = if z >= 0.0 {
        1.0 / (1.0 + exp(-z))
    } else {
        let e = exp(z);
        e / (1.0 + e)
    };
    let act = z * s;
    let d1 = s * (1.0 + z * (1.0 - s));
    let d2 = s * (1.0 - s) * (2.0 + z * (1.0 - 2.0 * s));
    (act, d1, d2)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[r] = in[r] * Wt (+ b on rows with r % bias_stride == 0)`.
fn linear_forward(
    input: &[f64],
    fan_in: usize,
    wt: &[f64],
    bias: &[f64],
    bias_stride: usize,
    out: &mut [f64],
) {
    let fan_out = bias.len();
    for (r, (in_row, out_row)) in input
        .chunks_exact(fan_in)
        .zip(out.chunks_exact_mut(fan_out))
        .enumerate()
    {
        if r % bias_stride == 0 {
            out_row.copy_from_slice(bias);
        } else {
            out_row.fill(0.0);
        }
        for (i, &a) in in_row.iter().enumerate() {
            if a != 0.0 {
                axpy(a, &wt[i * fan_out..(i + 1) * fan_out], out_row);
            }
        }
    }
}

/// Accumulates `dWt`, `db` (primal rows only) and optionally writes the input adjoint.
#[allow(clippy::too_many_arguments)]
fn linear_backward(
    input: &[f64],
    fan_in: usize,
    wt: &[f64],
    adj_out: &[f64],
    fan_out: usize,
    bias_stride: usize,
    d_wt: &mut [f64],
    d_b: &mut [f64],
    adj_in: Option<&mut [f64]>,
) {
    for (r, (in_row, a_row)) in input
        .chunks_exact(fan_in)
        .zip(adj_out.chunks_exact(fan_out))
        .enumerate()
    {
        if r % bias_stride == 0 {
            axpy(1.0, a_row, d_b);
        }
        for (i, &a) in in_row.iter().enumerate() {
            if a != 0.0 {
                axpy(a, a_row, &mut d_wt[i * fan_out..(i + 1) * fan_out]);
            }
        }
    }
    if let Some(adj_in) = adj_in {
        for (a_row, ai_row) in adj_out
            .chunks_exact(fan_out)
            .zip(adj_in.chunks_exact_mut(fan_in))
        {
            for (i, slot) in ai_row.iter_mut().enumerate() {
                *slot = dot(&wt[i * fan_out..(i + 1) * fan_out], a_row);
            }
        }
    }
}

impl Mlp {
    /// Randomly initialized network.
    pub fn new<R: Rng + ?Sized>(config: MlpConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::new();
        let mut off = 0;
        let mut fan_in = config.encoding_dim();
        for l in 0..=config.hidden_layers {
            let fan_out = if l == config.hidden_layers {
                config.outputs
            } else {
                config.width
            };
            layers.push(LayerShape {
                fan_in,
                fan_out,
                w_off: off,
                b_off: off + fan_in * fan_out,
            });
            off += fan_in * fan_out + fan_out;
            fan_in = fan_out;
        }
        let mut params = vec![0.0; off];
        let last = layers.len() - 1;
        for (l, shape) in layers.iter().enumerate() {
            let std = if l == last {
                0.1 / libm::sqrt(shape.fan_in as f64)
            } else {
                libm::sqrt(2.0 / shape.fan_in as f64)
            };
            for w in &mut params[shape.w_off..shape.b_off] {
                *w = std * normal(rng);
            }
        }
        Ok(Self {
            config,
            layers,
            params,
        })
    }

    /// Network with the given architecture and flat parameters.
    pub fn from_params(config: MlpConfig, params: Vec<f64>) -> Result<Self> {
        let mut rng = crate::rng::substream(0, "shape-only");
        let mut net = Self::new(config, &mut rng)?;
        if params.len() != net.params.len() {
            return Err(Error::InvalidConfig(alloc::format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn outputs(&self) -> usize {
        self.config.outputs
    }

    fn encode_into(&self, x: Vec3, primal: &mut [f64], tangents: Option<&mut [f64]>) {
        let d = self.config.encoding_dim();
        primal[0] = x.x;
        primal[1] = x.y;
        primal[2] = x.z;
        let mut tangents = tangents;
        if let Some(t) = tangents.as_deref_mut() {
            t.fill(0.0);
            for k in 0..3 {
                t[k * d + k] = 1.0;
            }
        }
        let mut freq = 1.0;
        for f in 0..self.config.num_freqs {
            for k in 0..3 {
                let arg = freq * x[k];
                let (s, c) = (sin(arg), cos(arg));
                let si = 3 + 6 * f + k;
                let ci = si + 3;
                primal[si] = s;
                primal[ci] = c;
                if let Some(t) = tangents.as_deref_mut() {
                    t[k * d + si] = freq * c;
                    t[k * d + ci] = -freq * s;
                }
            }
            freq *= 2.0;
        }
    }

    fn prepare(&self, ws: &mut MlpWorkspace, points: &[Vec3], rows_per_point: usize) {
        let n = points.len();
        ws.rows_per_point = rows_per_point;
        ws.points = n;
        ws.inputs.clear();
        ws.inputs.extend_from_slice(points);
        let rows = n * rows_per_point;
        ws.acts.resize(self.layers.len(), Vec::new());
        ws.pre.resize(self.layers.len(), Vec::new());
        for (l, shape) in self.layers.iter().enumerate() {
            ws.acts[l].resize(rows * shape.fan_in, 0.0);
            ws.pre[l].resize(rows * shape.fan_out, 0.0);
        }
    }

    /// Forward pass keeping activations for [`Mlp::backward`]. With `tangents`
    /// the three axis tangents are propagated as well.
    pub fn forward_into(&self, points: &[Vec3], ws: &mut MlpWorkspace, tangents: bool) {
        let rpp = if tangents { 4 } else { 1 };
        self.prepare(ws, points, rpp);
        let d = self.config.encoding_dim();
        {
            let enc = &mut ws.acts[0];
            for (p, &x) in points.iter().enumerate() {
                let block = &mut enc[p * rpp * d..(p + 1) * rpp * d];
                let (primal, rest) = block.split_at_mut(d);
                self.encode_into(x, primal, if tangents { Some(rest) } else { None });
            }
        }
        let last = self.layers.len() - 1;
        for (l, shape) in self.layers.iter().enumerate() {
            let wt = &self.params[shape.w_off..shape.b_off];
            let b = &self.params[shape.b_off..shape.b_off + shape.fan_out];
            linear_forward(&ws.acts[l], shape.fan_in, wt, b, rpp, &mut ws.pre[l]);
            if l < last {
                let (pre, next) = (&ws.pre[l], &mut ws.acts[l + 1]);
                let w = shape.fan_out;
                for p in 0..ws.points {
                    let base = p * rpp * w;
                    for o in 0..w {
                        let z = pre[base + o];
                        let (a, d1, _) = silu_parts(z);
                        next[base + o] = a;
                        for k in 1..rpp {
                            next[base + k * w + o] = d1 * pre[base + k * w + o];
                        }
                    }
                }
            }
        }
    }

    /// Reverse pass for a plain forward. `d_out` holds one adjoint per output
    /// per point; parameter gradients are accumulated into `grad`.
    pub fn backward(&self, ws: &mut MlpWorkspace, d_out: &[f64], grad: &mut [f64]) {
        assert_eq!(ws.rows_per_point, 1, "backward expects a plain forward");
        self.backward_rows(ws, d_out, grad);
    }

    fn backward_rows(&self, ws: &mut MlpWorkspace, d_out: &[f64], grad: &mut [f64]) {
        let rpp = ws.rows_per_point;
        let rows = ws.points * rpp;
        let last = self.layers.len() - 1;
        let mut adj = core::mem::take(&mut ws.adj_a);
        let mut adj_prev = core::mem::take(&mut ws.adj_b);
        adj.clear();
        adj.extend_from_slice(d_out);
        for l in (0..=last).rev() {
            let shape = self.layers[l];
            let wt = &self.params[shape.w_off..shape.b_off];
            let (gw, gb) = grad[shape.w_off..shape.b_off + shape.fan_out].split_at_mut(shape.fan_in * shape.fan_out);
            let need_in = l > 0;
            adj_prev.resize(rows * shape.fan_in, 0.0);
            linear_backward(
                &ws.acts[l],
                shape.fan_in,
                wt,
                &adj,
                shape.fan_out,
                rpp,
                gw,
                gb,
                if need_in { Some(&mut adj_prev) } else { None },
            );
            if !need_in {
                break;
            }
            // through the activation of layer l-1
            let pre = &ws.pre[l - 1];
            let w = shape.fan_in;
            for p in 0..ws.points {
                let base = p * rpp * w;
                for o in 0..w {
                    let z = pre[base + o];
                    let (_, d1, d2) = silu_parts(z);
                    let mut zbar = d1 * adj_prev[base + o];
                    for k in 1..rpp {
                        let t_adj = adj_prev[base + k * w + o];
                        zbar += d2 * pre[base + k * w + o] * t_adj;
                        adj_prev[base + k * w + o] = d1 * t_adj;
                    }
                    adj_prev[base + o] = zbar;
                }
            }
            core::mem::swap(&mut adj, &mut adj_prev);
        }
        ws.adj_a = adj;
        ws.adj_b = adj_prev;
    }

    /// Signed distance values from the outputs of a forward pass.
    pub fn sdf_from_workspace(&self, ws: &MlpWorkspace) -> Vec<f64> {
        let rpp = ws.rows_per_point;
        let o = self.config.outputs;
        let out = ws.outputs();
        ws.inputs
            .iter()
            .enumerate()
            .map(|(p, &x)| out[p * rpp * o + SDF_OUTPUT] + self.prior_value(x))
            .collect()
    }

    /// Input gradients of the signed distance from a tangent forward pass.
    pub fn sdf_gradients_from_workspace(&self, ws: &MlpWorkspace) -> Vec<Vec3> {
        assert_eq!(ws.rows_per_point, 4, "gradients need a tangent forward");
        let o = self.config.outputs;
        let out = ws.outputs();
        ws.inputs
            .iter()
            .enumerate()
            .map(|(p, &x)| {
                let base = p * 4 * o;
                Vec3::new(
                    out[base + o + SDF_OUTPUT],
                    out[base + 2 * o + SDF_OUTPUT],
                    out[base + 3 * o + SDF_OUTPUT],
                ) + self.prior_gradient(x)
            })
            .collect()
    }

    /// Reverse pass through a tangent forward given adjoints of the input
    /// gradients `d_grad[p]` and of the raw outputs `d_out` (may be empty).
    pub fn backward_tangent(
        &self,
        ws: &mut MlpWorkspace,
        d_grad: &[Vec3],
        d_out: &[f64],
        grad: &mut [f64],
    ) {
        assert_eq!(ws.rows_per_point, 4, "tangent backward expects a tangent forward");
        let o = self.config.outputs;
        let mut seed = vec![0.0; ws.points * 4 * o];
        for (p, g) in d_grad.iter().enumerate() {
            let base = p * 4 * o;
            seed[base + o + SDF_OUTPUT] = g.x;
            seed[base + 2 * o + SDF_OUTPUT] = g.y;
            seed[base + 3 * o + SDF_OUTPUT] = g.z;
            if !d_out.is_empty() {
                seed[base..base + o].copy_from_slice(&d_out[p * o..(p + 1) * o]);
            }
        }
        self.backward_rows(ws, &seed, grad);
    }

    #[inline]
    fn prior_value(&self, x: Vec3) -> f64 {
        match self.config.sphere_prior {
            Some(r) => x.norm() - r,
            None => 0.0,
        }
    }

    #[inline]
    fn prior_gradient(&self, x: Vec3) -> Vec3 {
        match self.config.sphere_prior {
            Some(_) => x.normalized(),
            None => Vec3::ZERO,
        }
    }

    /// Inference forward; writes `outputs` values per point into `out`.
    pub fn forward(&self, points: &[Vec3], out: &mut [f64]) {
        let o = self.config.outputs;
        let mut ws = MlpWorkspace::new();
        const CHUNK: usize = 256;
        for (pc, oc) in points.chunks(CHUNK).zip(out.chunks_mut(CHUNK * o)) {
            self.forward_into(pc, &mut ws, false);
            oc.copy_from_slice(ws.outputs());
        }
    }

    /// Signed distance at a batch of contracted points.
    pub fn sdf_batch(&self, points: &[Vec3], out: &mut [f64]) {
        let o = self.config.outputs;
        let mut raw = vec![0.0; points.len() * o];
        self.forward(points, &mut raw);
        for (p, (slot, &x)) in out.iter_mut().zip(points).enumerate() {
            *slot = raw[p * o + SDF_OUTPUT] + self.prior_value(x);
        }
    }

    pub fn sdf(&self, x: Vec3) -> f64 {
        let mut out = [0.0];
        self.sdf_batch(&[x], &mut out);
        out[0]
    }

    pub fn sdf_gradient(&self, x: Vec3) -> Vec3 {
        let mut ws = MlpWorkspace::new();
        self.forward_into(&[x], &mut ws, true);
        self.sdf_gradients_from_workspace(&ws)[0]
    }
}

/// Mean of `(|grad f| - 1)^2` and its adjoint with respect to each gradient.
pub fn eikonal_terms(gradients: &[Vec3]) -> (f64, Vec<Vec3>) {
    let n = gradients.len().max(1) as f64;
    let mut loss = 0.0;
    let adj = gradients
        .iter()
        .map(|g| {
            let m = g.norm();
            loss += (m - 1.0) * (m - 1.0);
            if m > 0.0 {
                *g * (2.0 * (m - 1.0) / (m * n))
            } else {
                Vec3::ZERO
            }
        })
        .collect();
    (loss / n, adj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn tiny(outputs: usize, prior: Option<f64>) -> Mlp {
        let cfg = MlpConfig {
            hidden_layers: 2,
            width: 8,
            num_freqs: 2,
            outputs,
            sphere_prior: prior,
        };
        let mut rng = substream(3, "tiny");
        let mut net = Mlp::new(cfg, &mut rng).unwrap();
        // larger output weights so second-order terms are exercised
        for p in net.params_mut() {
            *p *= 1.5;
        }
        net
    }

    fn points() -> Vec<Vec3> {
        vec![
            Vec3::new(0.3, -0.2, 0.5),
            Vec3::new(-1.1, 0.4, 0.2),
            Vec3::new(0.05, 0.9, -0.7),
        ]
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn parameter_count_matches_architecture() {
        let net = tiny(4, None);
        let d = 3 + 12;
        assert_eq!(net.num_params(), d * 8 + 8 + 8 * 8 + 8 + 8 * 4 + 4);
    }

    #[test]
    fn tangent_gradient_matches_finite_differences() {
        let net = tiny(1, Some(0.4));
        for x in points() {
            let g = net.sdf_gradient(x);
            let h = 1e-4;
            for k in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                let fd = (net.sdf(xp) - net.sdf(xm)) / (2.0 * h);
                assert!(rel_err(g[k], fd) < 1e-3, "axis {k}: {} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn output_backward_matches_finite_differences() {
        let mut net = tiny(3, None);
        let pts = points();
        let weights = [0.7, -1.3, 0.4];
        let loss = |net: &Mlp| {
            let mut out = vec![0.0; pts.len() * 3];
            net.forward(&pts, &mut out);
            out.iter().enumerate().map(|(i, v)| weights[i % 3] * v * v).sum::<f64>()
        };
        let mut ws = MlpWorkspace::new();
        net.forward_into(&pts, &mut ws, false);
        let d_out: Vec<f64> = ws
            .outputs()
            .iter()
            .enumerate()
            .map(|(i, v)| 2.0 * weights[i % 3] * v)
            .collect();
        let mut grad = vec![0.0; net.num_params()];
        net.backward(&mut ws, &d_out, &mut grad);
        for i in (0..net.num_params()).step_by(7) {
            let h = 1e-6;
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let lp = loss(&net);
            net.params_mut()[i] = orig - h;
            let lm = loss(&net);
            net.params_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!(rel_err(grad[i], fd) < 1e-3 || (grad[i] - fd).abs() < 1e-8, "param {i}: {} vs {fd}", grad[i]);
        }
    }

    #[test]
    fn eikonal_backward_matches_finite_differences() {
        let mut net = tiny(2, Some(0.3));
        let pts = points();
        let loss = |net: &Mlp| {
            let mut ws = MlpWorkspace::new();
            net.forward_into(&pts, &mut ws, true);
            eikonal_terms(&net.sdf_gradients_from_workspace(&ws)).0
        };
        let mut ws = MlpWorkspace::new();
        net.forward_into(&pts, &mut ws, true);
        let (_, adj) = eikonal_terms(&net.sdf_gradients_from_workspace(&ws));
        let mut grad = vec![0.0; net.num_params()];
        net.backward_tangent(&mut ws, &adj, &[], &mut grad);
        let mut checked = 0;
        for i in 0..net.num_params() {
            let h = 1e-6;
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let lp = loss(&net);
            net.params_mut()[i] = orig - h;
            let lm = loss(&net);
            net.params_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            if fd.abs() > 1e-7 {
                checked += 1;
                assert!(rel_err(grad[i], fd) < 1e-3, "param {i}: {} vs {fd}", grad[i]);
            } else {
                assert!(grad[i].abs() < 1e-6);
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn random_init_has_positive_finite_eikonal_loss() {
        let net = tiny(1, None);
        let mut ws = MlpWorkspace::new();
        net.forward_into(&points(), &mut ws, true);
        let (l, _) = eikonal_terms(&net.sdf_gradients_from_workspace(&ws));
        assert!(l.is_finite() && l > 0.0);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let net = tiny(1, Some(0.5));
        let x = Vec3::new(0.1, 0.2, 0.3);
        assert_eq!(net.sdf(x).to_bits(), net.sdf(x).to_bits());
    }
}

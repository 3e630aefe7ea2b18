//! The forecaster: a sigmoid embedding of static demographics kick-starts
//! the hidden state of every layer of a stacked GRU over the L x 4
//! double-channel window; a dense head reads the final hidden state.
//!
//! Gate convention, fixed for the whole crate:
//!   z = sigmoid(W_z x + U_z h + b_z)
//!   r = sigmoid(W_r x + U_r h + b_r)
//!   n = tanh(W_n x + U_n (r .* h) + b_n)
//!   h' = (1 - z) .* n + z .* h

use serde::{Deserialize, Serialize};

use crate::data::StandardizationStats;
use crate::error::{Error, Result};
use crate::numerics::{dot, sigmoid_scalar, Matrix, Rng};

pub const CHECKPOINT_VERSION: &str = "epikick-ckpt-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub demo_dim: usize,
    pub window_len: usize,
}

impl ModelConfig {
    pub fn with_demo_dim(demo_dim: usize) -> Self {
        ModelConfig {
            input_dim: 4,
            hidden_dim: 100,
            num_layers: 3,
            demo_dim,
            window_len: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("demo_dim", self.demo_dim),
            ("window_len", self.window_len),
        ] {
            if v < 1 {
                return Err(Error::Usage(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }

    pub fn param_count(&self) -> usize {
        let h = self.hidden_dim;
        let mut n = h * self.demo_dim + h; // embedding
        for l in 0..self.num_layers {
            let d = self.layer_input_dim(l);
            n += 3 * (h * d + h * h + h); // W, U, b per gate
        }
        n + h + 1 // output head
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruLayer {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_n: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_n: Matrix,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_n: Vec<f64>,
}

/// The complete learnable state. Also reused as the gradient container,
/// since every gradient tensor is shape-congruent with its parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub embed_w: Matrix,
    pub embed_b: Vec<f64>,
    pub layers: Vec<GruLayer>,
    pub out_w: Vec<f64>,
    pub out_b: f64,
}

/// Gradients of a scalar output with respect to every parameter, the
/// kick-start state, and the demographic input.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub wrt: ModelParams,
    pub d_h0: Vec<f64>,
    pub d_demo: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let h = config.hidden_dim;
        let layers = (0..config.num_layers)
            .map(|l| {
                let d = config.layer_input_dim(l);
                GruLayer {
                    w_z: Matrix::zeros(h, d),
                    w_r: Matrix::zeros(h, d),
                    w_n: Matrix::zeros(h, d),
                    u_z: Matrix::zeros(h, h),
                    u_r: Matrix::zeros(h, h),
                    u_n: Matrix::zeros(h, h),
                    b_z: vec![0.0; h],
                    b_r: vec![0.0; h],
                    b_n: vec![0.0; h],
                }
            })
            .collect();
        ModelParams {
            embed_w: Matrix::zeros(h, config.demo_dim),
            embed_b: vec![0.0; h],
            layers,
            out_w: vec![0.0; h],
            out_b: 0.0,
        }
    }

    /// Flatten in a fixed order (embedding, layers in order with
    /// W_z,W_r,W_n,U_z,U_r,U_n,b_z,b_r,b_n, then the head).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.embed_w.data());
        out.extend_from_slice(&self.embed_b);
        for l in &self.layers {
            for m in [&l.w_z, &l.w_r, &l.w_n, &l.u_z, &l.u_r, &l.u_n] {
                out.extend_from_slice(m.data());
            }
            for b in [&l.b_z, &l.b_r, &l.b_n] {
                out.extend_from_slice(b);
            }
        }
        out.extend_from_slice(&self.out_w);
        out.push(self.out_b);
        out
    }

    pub fn from_flat(config: &ModelConfig, flat: &[f64]) -> Result<Self> {
        if flat.len() != config.param_count() {
            return Err(Error::Shape(format!(
                "flat parameter vector has length {}, expected {}",
                flat.len(),
                config.param_count()
            )));
        }
        let h = config.hidden_dim;
        let mut pos = 0;
        let mut take = |n: usize| {
            let s = flat[pos..pos + n].to_vec();
            pos += n;
            s
        };
        let embed_w = Matrix::new(h, config.demo_dim, take(h * config.demo_dim))?;
        let embed_b = take(h);
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let d = config.layer_input_dim(l);
            let w_z = Matrix::new(h, d, take(h * d))?;
            let w_r = Matrix::new(h, d, take(h * d))?;
            let w_n = Matrix::new(h, d, take(h * d))?;
            let u_z = Matrix::new(h, h, take(h * h))?;
            let u_r = Matrix::new(h, h, take(h * h))?;
            let u_n = Matrix::new(h, h, take(h * h))?;
            let b_z = take(h);
            let b_r = take(h);
            let b_n = take(h);
            layers.push(GruLayer {
                w_z,
                w_r,
                w_n,
                u_z,
                u_r,
                u_n,
                b_z,
                b_r,
                b_n,
            });
        }
        let out_w = take(h);
        let out_b = take(1)[0];
        Ok(ModelParams {
            embed_w,
            embed_b,
            layers,
            out_w,
            out_b,
        })
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.uniform(-bound, bound))
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(config: &ModelConfig, rng: &mut Rng) -> Result<ModelParams> {
    config.validate()?;
    let h = config.hidden_dim;
    let embed_w = glorot(h, config.demo_dim, rng);
    let layers = (0..config.num_layers)
        .map(|l| {
            let d = config.layer_input_dim(l);
            GruLayer {
                w_z: glorot(h, d, rng),
                w_r: glorot(h, d, rng),
                w_n: glorot(h, d, rng),
                u_z: glorot(h, h, rng),
                u_r: glorot(h, h, rng),
                u_n: glorot(h, h, rng),
                b_z: vec![0.0; h],
                b_r: vec![0.0; h],
                b_n: vec![0.0; h],
            }
        })
        .collect();
    let out_bound = (6.0 / (h + 1) as f64).sqrt();
    let out_w = (0..h).map(|_| rng.uniform(-out_bound, out_bound)).collect();
    Ok(ModelParams {
        embed_w,
        embed_b: vec![0.0; h],
        layers,
        out_w,
        out_b: 0.0,
    })
}

/// h0 = sigmoid(embed_W demo + embed_b).
pub fn embed(demo: &[f64], params: &ModelParams) -> Result<Vec<f64>> {
    let mut pre = params.embed_w.matvec(demo)?;
    for (p, b) in pre.iter_mut().zip(&params.embed_b) {
        *p = sigmoid_scalar(*p + b);
    }
    Ok(pre)
}

/// One GRU cell step under the crate's gate convention.
pub fn gru_cell(x: &[f64], h_prev: &[f64], layer: &GruLayer) -> Result<Vec<f64>> {
    let (h, _, _, _) = gru_cell_full(x, h_prev, layer)?;
    Ok(h)
}

fn gru_cell_full(
    x: &[f64],
    h_prev: &[f64],
    layer: &GruLayer,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let h = h_prev.len();
    if layer.u_z.rows() != h {
        return Err(Error::Shape(format!(
            "gru_cell: hidden state length {h} does not match layer hidden size {}",
            layer.u_z.rows()
        )));
    }
    let mut z = layer.w_z.matvec(x)?;
    let zh = layer.u_z.matvec(h_prev)?;
    let mut r = layer.w_r.matvec(x)?;
    let rh = layer.u_r.matvec(h_prev)?;
    for i in 0..h {
        z[i] = sigmoid_scalar(z[i] + zh[i] + layer.b_z[i]);
        r[i] = sigmoid_scalar(r[i] + rh[i] + layer.b_r[i]);
    }
    let rh_prev: Vec<f64> = r.iter().zip(h_prev).map(|(ri, hi)| ri * hi).collect();
    let mut n = layer.w_n.matvec(x)?;
    let nh = layer.u_n.matvec(&rh_prev)?;
    for i in 0..h {
        n[i] = (n[i] + nh[i] + layer.b_n[i]).tanh();
    }
    let h_new: Vec<f64> = (0..h)
        .map(|i| (1.0 - z[i]) * n[i] + z[i] * h_prev[i])
        .collect();
    Ok((h_new, z, r, n))
}

struct LayerCache {
    /// inputs x_t per timestep
    xs: Vec<Vec<f64>>,
    /// hidden states h_0..h_L (hs[0] is the kick-start state)
    hs: Vec<Vec<f64>>,
    zs: Vec<Vec<f64>>,
    rs: Vec<Vec<f64>>,
    ns: Vec<Vec<f64>>,
}

/// Activations retained by `forward` for the matching `backward` call.
pub struct Cache {
    layers: Vec<LayerCache>,
    h0: Vec<f64>,
    demo: Option<Vec<f64>>,
    window_len: usize,
}

/// Sequence-to-point forward pass. Every layer starts from the same h0;
/// the head reads the top layer's final hidden state.
pub fn forward(inputs: &Matrix, h0: &[f64], params: &ModelParams) -> Result<(f64, Cache)> {
    if inputs.cols() != params.layers[0].w_z.cols() {
        return Err(Error::Shape(format!(
            "forward: window has {} columns, model expects {}",
            inputs.cols(),
            params.layers[0].w_z.cols()
        )));
    }
    if h0.len() != params.out_w.len() {
        return Err(Error::Shape(format!(
            "forward: h0 length {} does not match hidden dim {}",
            h0.len(),
            params.out_w.len()
        )));
    }
    let window_len = inputs.rows();
    let mut layer_inputs: Vec<Vec<f64>> = (0..window_len)
        .map(|t| inputs.row(t).to_vec())
        .collect();
    let mut caches = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let mut lc = LayerCache {
            xs: layer_inputs,
            hs: vec![h0.to_vec()],
            zs: Vec::with_capacity(window_len),
            rs: Vec::with_capacity(window_len),
            ns: Vec::with_capacity(window_len),
        };
        for t in 0..window_len {
            let (h, z, r, n) = gru_cell_full(&lc.xs[t], &lc.hs[t], layer)?;
            lc.hs.push(h);
            lc.zs.push(z);
            lc.rs.push(r);
            lc.ns.push(n);
        }
        layer_inputs = lc.hs[1..].to_vec();
        caches.push(lc);
    }
    let top_last = caches.last().unwrap().hs.last().unwrap();
    let pred = dot(&params.out_w, top_last) + params.out_b;
    Ok((
        pred,
        Cache {
            layers: caches,
            h0: h0.to_vec(),
            demo: None,
            window_len,
        },
    ))
}

/// Forward pass including the embedding, for callers holding a raw
/// standardized demographic vector.
pub fn forward_with_demo(
    inputs: &Matrix,
    demo: &[f64],
    params: &ModelParams,
) -> Result<(f64, Cache)> {
    let h0 = embed(demo, params)?;
    let (pred, mut cache) = forward(inputs, &h0, params)?;
    cache.demo = Some(demo.to_vec());
    Ok((pred, cache))
}

/// Exact reverse-mode gradients of the prediction scaled by `d_pred`.
/// Gradients flow through all three layers into the shared h0, and on
/// through the embedding when the cache came from `forward_with_demo`.
pub fn backward(cache: &Cache, params: &ModelParams, d_pred: f64) -> Result<GradientSet> {
    let num_layers = params.layers.len();
    if cache.layers.len() != num_layers {
        return Err(Error::Usage(format!(
            "backward: cache has {} layers, params have {num_layers}",
            cache.layers.len()
        )));
    }
    let h = params.out_w.len();
    let l_steps = cache.window_len;
    let config = ModelConfig {
        input_dim: params.layers[0].w_z.cols(),
        hidden_dim: h,
        num_layers,
        demo_dim: params.embed_w.cols(),
        window_len: l_steps,
    };
    let mut grads = ModelParams::zeros(&config);

    // head
    let top_last = cache.layers[num_layers - 1].hs.last().unwrap();
    for i in 0..h {
        grads.out_w[i] = d_pred * top_last[i];
    }
    grads.out_b = d_pred;

    // upstream gradient on each timestep's output of the current layer
    let mut d_out: Vec<Vec<f64>> = vec![vec![0.0; h]; l_steps];
    for i in 0..h {
        d_out[l_steps - 1][i] = d_pred * params.out_w[i];
    }

    let mut d_h0 = vec![0.0; h];
    for li in (0..num_layers).rev() {
        let layer = &params.layers[li];
        let lc = &cache.layers[li];
        let g = &mut grads.layers[li];
        let in_dim = layer.w_z.cols();
        let mut d_inputs: Vec<Vec<f64>> = vec![vec![0.0; in_dim]; l_steps];
        let mut d_h = vec![0.0; h]; // gradient flowing into h_t from t+1
        for t in (0..l_steps).rev() {
            for i in 0..h {
                d_h[i] += d_out[t][i];
            }
            let (z, r, n) = (&lc.zs[t], &lc.rs[t], &lc.ns[t]);
            let h_prev = &lc.hs[t];
            let x = &lc.xs[t];

            let mut da_z = vec![0.0; h];
            let mut da_n = vec![0.0; h];
            let mut d_h_prev = vec![0.0; h];
            for i in 0..h {
                let dz = d_h[i] * (h_prev[i] - n[i]);
                da_z[i] = dz * z[i] * (1.0 - z[i]);
                let dn = d_h[i] * (1.0 - z[i]);
                da_n[i] = dn * (1.0 - n[i] * n[i]);
                d_h_prev[i] = d_h[i] * z[i];
            }
            // through n: U_n acts on r .* h_prev
            let d_rh = layer.u_n.matvec_t(&da_n)?;
            let mut da_r = vec![0.0; h];
            for i in 0..h {
                da_r[i] = d_rh[i] * h_prev[i] * r[i] * (1.0 - r[i]);
                d_h_prev[i] += d_rh[i] * r[i];
            }
            let dz_h = layer.u_z.matvec_t(&da_z)?;
            let dr_h = layer.u_r.matvec_t(&da_r)?;
            for i in 0..h {
                d_h_prev[i] += dz_h[i] + dr_h[i];
            }

            let rh_prev: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
            g.w_z.add_outer(1.0, &da_z, x);
            g.w_r.add_outer(1.0, &da_r, x);
            g.w_n.add_outer(1.0, &da_n, x);
            g.u_z.add_outer(1.0, &da_z, h_prev);
            g.u_r.add_outer(1.0, &da_r, h_prev);
            g.u_n.add_outer(1.0, &da_n, &rh_prev);
            for i in 0..h {
                g.b_z[i] += da_z[i];
                g.b_r[i] += da_r[i];
                g.b_n[i] += da_n[i];
            }

            let dx_z = layer.w_z.matvec_t(&da_z)?;
            let dx_r = layer.w_r.matvec_t(&da_r)?;
            let dx_n = layer.w_n.matvec_t(&da_n)?;
            for j in 0..in_dim {
                d_inputs[t][j] = dx_z[j] + dx_r[j] + dx_n[j];
            }
            d_h = d_h_prev;
        }
        // d_h now holds the gradient on this layer's h_0 (the shared kick-start)
        for i in 0..h {
            d_h0[i] += d_h[i];
        }
        d_out = d_inputs; // lower layer's per-timestep output gradients
    }

    let mut d_demo = vec![0.0; params.embed_w.cols()];
    if let Some(demo) = &cache.demo {
        // h0 = sigmoid(pre); d_pre = d_h0 .* h0 .* (1 - h0)
        let d_pre: Vec<f64> = d_h0
            .iter()
            .zip(&cache.h0)
            .map(|(g, s)| g * s * (1.0 - s))
            .collect();
        grads.embed_w.add_outer(1.0, &d_pre, demo);
        grads.embed_b.copy_from_slice(&d_pre);
        d_demo = params.embed_w.matvec_t(&d_pre)?;
    }

    Ok(GradientSet {
        wrt: grads,
        d_h0,
        d_demo,
    })
}

/// Self-describing JSON checkpoint, bit-exact for the in-memory f64s.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Checkpoint {
    pub version: String,
    pub config: ModelConfig,
    pub feature_names: Vec<String>,
    pub standardization: StandardizationStats,
    pub tensors: Vec<TensorRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Checkpoint {
    pub fn new(
        config: ModelConfig,
        params: &ModelParams,
        feature_names: Vec<String>,
        standardization: StandardizationStats,
    ) -> Self {
        let mut tensors = vec![
            TensorRecord {
                name: "embed_w".into(),
                shape: vec![params.embed_w.rows(), params.embed_w.cols()],
                data: params.embed_w.data().to_vec(),
            },
            TensorRecord {
                name: "embed_b".into(),
                shape: vec![params.embed_b.len()],
                data: params.embed_b.clone(),
            },
        ];
        for (i, l) in params.layers.iter().enumerate() {
            let mats: [(&str, &Matrix); 6] = [
                ("w_z", &l.w_z),
                ("w_r", &l.w_r),
                ("w_n", &l.w_n),
                ("u_z", &l.u_z),
                ("u_r", &l.u_r),
                ("u_n", &l.u_n),
            ];
            for (suffix, m) in mats {
                tensors.push(TensorRecord {
                    name: format!("layer{i}.{suffix}"),
                    shape: vec![m.rows(), m.cols()],
                    data: m.data().to_vec(),
                });
            }
            for (suffix, b) in [("b_z", &l.b_z), ("b_r", &l.b_r), ("b_n", &l.b_n)] {
                tensors.push(TensorRecord {
                    name: format!("layer{i}.{suffix}"),
                    shape: vec![b.len()],
                    data: b.clone(),
                });
            }
        }
        tensors.push(TensorRecord {
            name: "out_w".into(),
            shape: vec![params.out_w.len()],
            data: params.out_w.clone(),
        });
        tensors.push(TensorRecord {
            name: "out_b".into(),
            shape: vec![1],
            data: vec![params.out_b],
        });
        Checkpoint {
            version: CHECKPOINT_VERSION.into(),
            config,
            feature_names,
            standardization,
            tensors,
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint version '{}'",
                self.version
            )));
        }
        let mut flat = Vec::with_capacity(self.config.param_count());
        // tensors were emitted in flat order
        for t in &self.tensors {
            let expected: usize = t.shape.iter().product();
            if t.data.len() != expected {
                return Err(Error::Validation(format!(
                    "tensor {}: data length {} does not match shape {:?}",
                    t.name,
                    t.data.len(),
                    t.shape
                )));
            }
            flat.extend_from_slice(&t.data);
        }
        ModelParams::from_flat(&self.config, &flat)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;

    fn small_config() -> ModelConfig {
        ModelConfig {
            input_dim: 4,
            hidden_dim: 8,
            num_layers: 3,
            demo_dim: 5,
            window_len: 3,
        }
    }

    #[test]
    fn init_deterministic_and_bounded() {
        let cfg = small_config();
        let a = init_params(&cfg, &mut Rng::new(3)).unwrap();
        let b = init_params(&cfg, &mut Rng::new(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.embed_b.iter().all(|&x| x == 0.0));
        assert!(a.layers.iter().all(|l| l.b_z.iter().all(|&x| x == 0.0)));
        let bound = (6.0 / (cfg.hidden_dim + cfg.demo_dim) as f64).sqrt();
        assert!(a.embed_w.data().iter().all(|&w| w.abs() <= bound));
    }

    #[test]
    fn embed_zero_params_gives_half() {
        let cfg = small_config();
        let params = ModelParams::zeros(&cfg);
        let h0 = embed(&[1.0, -2.0, 0.5, 0.0, 3.0], &params).unwrap();
        assert!(h0.iter().all(|&x| x == 0.5));
    }

    #[test]
    fn embed_zero_demo_is_bias_only() {
        let cfg = small_config();
        let mut params = init_params(&cfg, &mut Rng::new(1)).unwrap();
        params.embed_b = (0..cfg.hidden_dim).map(|i| i as f64 * 0.1 - 0.3).collect();
        let h0 = embed(&[0.0; 5], &params).unwrap();
        for (a, b) in h0.iter().zip(&params.embed_b) {
            assert!((a - sigmoid_scalar(*b)).abs() < 1e-15);
        }
    }

    #[test]
    fn embed_inactive_feature_column_irrelevant() {
        let cfg = small_config();
        let params = init_params(&cfg, &mut Rng::new(2)).unwrap();
        let mut flipped = params.clone();
        for k in 0..cfg.hidden_dim {
            flipped.embed_w.set(k, 2, -flipped.embed_w.get(k, 2));
        }
        let demo = [1.0, -1.0, 0.0, 0.5, 2.0]; // demo[2] = 0
        assert_eq!(embed(&demo, &params).unwrap(), embed(&demo, &flipped).unwrap());
    }

    #[test]
    fn embed_length_mismatch() {
        let params = ModelParams::zeros(&small_config());
        assert!(embed(&[1.0, 2.0], &params).is_err());
    }

    #[test]
    fn gru_cell_zero_params_halves_hidden() {
        let cfg = small_config();
        let params = ModelParams::zeros(&cfg);
        let h_prev: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        let h = gru_cell(&[1.0, 2.0, 3.0, 4.0], &h_prev, &params.layers[0]).unwrap();
        for (a, b) in h.iter().zip(&h_prev) {
            assert!((a - 0.5 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn gru_cell_saturated_update_gate_keeps_state() {
        let cfg = small_config();
        let mut params = init_params(&cfg, &mut Rng::new(4)).unwrap();
        params.layers[0].b_z = vec![50.0; cfg.hidden_dim];
        let h_prev: Vec<f64> = (0..8).map(|i| 0.05 * i as f64 - 0.2).collect();
        let h = gru_cell(&[0.1, 0.2, 0.3, 0.4], &h_prev, &params.layers[0]).unwrap();
        for (a, b) in h.iter().zip(&h_prev) {
            assert!((a - b).abs() < 1e-18);
        }
    }

    /// Independent scalar-loop re-implementation of the cell.
    fn gru_cell_scalar_oracle(x: &[f64], h_prev: &[f64], l: &GruLayer) -> Vec<f64> {
        let h = h_prev.len();
        let mut out = vec![0.0; h];
        // r first, since n needs the whole reset vector
        let mut r = vec![0.0; h];
        for i in 0..h {
            let mut ar = l.b_r[i];
            for (j, xj) in x.iter().enumerate() {
                ar += l.w_r.get(i, j) * xj;
            }
            for (j, hj) in h_prev.iter().enumerate() {
                ar += l.u_r.get(i, j) * hj;
            }
            r[i] = sigmoid_scalar(ar);
        }
        for i in 0..h {
            let mut az = l.b_z[i];
            let mut an = l.b_n[i];
            for (j, xj) in x.iter().enumerate() {
                az += l.w_z.get(i, j) * xj;
                an += l.w_n.get(i, j) * xj;
            }
            for (j, hj) in h_prev.iter().enumerate() {
                az += l.u_z.get(i, j) * hj;
                an += l.u_n.get(i, j) * (r[j] * hj);
            }
            let z = sigmoid_scalar(az);
            let n = an.tanh();
            out[i] = (1.0 - z) * n + z * h_prev[i];
        }
        out
    }

    #[test]
    fn gru_cell_matches_scalar_oracle() {
        let cfg = small_config();
        let params = init_params(&cfg, &mut Rng::new(17)).unwrap();
        let mut rng = Rng::new(18);
        let x: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let h_prev: Vec<f64> = (0..8).map(|_| rng.uniform(-0.9, 0.9)).collect();
        let fast = gru_cell(&x, &h_prev, &params.layers[0]).unwrap();
        let slow = gru_cell_scalar_oracle(&x, &h_prev, &params.layers[0]);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_zero_head_predicts_bias() {
        let cfg = small_config();
        let mut params = init_params(&cfg, &mut Rng::new(5)).unwrap();
        params.out_w = vec![0.0; cfg.hidden_dim];
        params.out_b = 2.5;
        let inputs = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.1);
        let h0 = vec![0.3; cfg.hidden_dim];
        let (pred, _) = forward(&inputs, &h0, &params).unwrap();
        assert_eq!(pred, 2.5);
    }

    #[test]
    fn forward_order_sensitivity() {
        let cfg = small_config();
        let params = init_params(&cfg, &mut Rng::new(6)).unwrap();
        let h0 = vec![0.4; cfg.hidden_dim];
        let a = Matrix::from_fn(3, 4, |i, j| ((i + 1) * (j + 2)) as f64 * 0.05);
        let mut swapped_rows: Vec<f64> = Vec::new();
        swapped_rows.extend_from_slice(a.row(1));
        swapped_rows.extend_from_slice(a.row(0));
        swapped_rows.extend_from_slice(a.row(2));
        let b = Matrix::new(3, 4, swapped_rows).unwrap();
        let (pa, _) = forward(&a, &h0, &params).unwrap();
        let (pb, _) = forward(&b, &h0, &params).unwrap();
        assert!((pa - pb).abs() > 1e-9, "permuting rows left prediction unchanged");
    }

    #[test]
    fn forward_deterministic() {
        let cfg = small_config();
        let params = init_params(&cfg, &mut Rng::new(7)).unwrap();
        let inputs = Matrix::from_fn(3, 4, |i, j| (i as f64 - j as f64) * 0.2);
        let demo = [0.1, -0.4, 0.9, 0.0, 1.2];
        let (a, _) = forward_with_demo(&inputs, &demo, &params).unwrap();
        let (b, _) = forward_with_demo(&inputs, &demo, &params).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn hidden_states_bounded() {
        let cfg = small_config();
        let params = init_params(&cfg, &mut Rng::new(8)).unwrap();
        let inputs = Matrix::from_fn(3, 4, |i, j| (i + j) as f64);
        let demo = [2.0, -3.0, 1.0, 0.5, -0.5];
        let (_, cache) = forward_with_demo(&inputs, &demo, &params).unwrap();
        for lc in &cache.layers {
            for hs in &lc.hs {
                assert!(hs.iter().all(|&x| x > -1.0 && x < 1.0));
            }
        }
    }

    #[test]
    fn backward_zero_seed_gradient() {
        let cfg = small_config();
        let params = init_params(&cfg, &mut Rng::new(9)).unwrap();
        let inputs = Matrix::from_fn(3, 4, |i, j| (i as f64) * 0.3 - (j as f64) * 0.1);
        let demo = [0.2, 0.4, -0.6, 1.0, 0.0];
        let (_, cache) = forward_with_demo(&inputs, &demo, &params).unwrap();
        let g = backward(&cache, &params, 0.0).unwrap();
        assert!(g.wrt.to_flat().iter().all(|&x| x == 0.0));
        assert!(g.d_demo.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn backward_out_b_gradient_is_d_pred() {
        let cfg = small_config();
        let params = init_params(&cfg, &mut Rng::new(10)).unwrap();
        let inputs = Matrix::from_fn(3, 4, |i, j| (i + j) as f64 * 0.1);
        let demo = [0.5; 5];
        let (_, cache) = forward_with_demo(&inputs, &demo, &params).unwrap();
        let g = backward(&cache, &params, 3.25).unwrap();
        assert_eq!(g.wrt.out_b, 3.25);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = small_config();
        for seed in [1u64, 2, 3, 4, 5] {
            let params = init_params(&cfg, &mut Rng::new(seed)).unwrap();
            let mut rng = Rng::new(seed + 100);
            let inputs = Matrix::from_fn(cfg.window_len, 4, |_, _| rng.uniform(-1.0, 1.0));
            let demo: Vec<f64> = (0..cfg.demo_dim).map(|_| rng.uniform(-1.0, 1.0)).collect();

            let (_, cache) = forward_with_demo(&inputs, &demo, &params).unwrap();
            let analytic = backward(&cache, &params, 1.0).unwrap().wrt.to_flat();

            let flat = params.to_flat();
            let f = |p: &[f64]| {
                let pp = ModelParams::from_flat(&cfg, p).unwrap();
                forward_with_demo(&inputs, &demo, &pp).unwrap().0
            };
            let numeric = finite_diff_grad(f, &flat, 1e-5).unwrap();
            for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
                let denom = n.abs().max(1e-7);
                assert!(
                    ((a - n) / denom).abs() < 1e-4,
                    "seed {seed} param {i}: analytic {a} numeric {n}"
                );
            }
        }
    }

    #[test]
    fn demo_gradient_matches_finite_differences() {
        let cfg = small_config();
        let params = init_params(&cfg, &mut Rng::new(21)).unwrap();
        let mut rng = Rng::new(22);
        let inputs = Matrix::from_fn(cfg.window_len, 4, |_, _| rng.uniform(-1.0, 1.0));
        let demo: Vec<f64> = (0..cfg.demo_dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (_, cache) = forward_with_demo(&inputs, &demo, &params).unwrap();
        let analytic = backward(&cache, &params, 1.0).unwrap().d_demo;
        let f = |d: &[f64]| forward_with_demo(&inputs, d, &params).unwrap().0;
        let numeric = finite_diff_grad(f, &demo, 1e-6).unwrap();
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() < 1e-6 * n.abs().max(1.0));
        }
    }

    #[test]
    fn param_count_and_flat_roundtrip() {
        let cfg = small_config();
        let params = init_params(&cfg, &mut Rng::new(11)).unwrap();
        let flat = params.to_flat();
        assert_eq!(flat.len(), cfg.param_count());
        let back = ModelParams::from_flat(&cfg, &flat).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let cfg = small_config();
        let params = init_params(&cfg, &mut Rng::new(12)).unwrap();
        let stats = StandardizationStats {
            names: (0..5).map(|i| format!("f{i}")).collect(),
            means: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            sds: vec![1.0; 5],
            warnings: vec![],
        };
        let ckpt = Checkpoint::new(cfg, &params, stats.names.clone(), stats);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ckpt);
        let restored = loaded.params().unwrap();
        for (a, b) in restored.to_flat().iter().zip(params.to_flat()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

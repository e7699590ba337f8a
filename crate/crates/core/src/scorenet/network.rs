use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::spectral;
use super::tape::{Tape, Var};
use crate::error::{MarsError, Result};
use crate::Rng;

/// Multiplier on the base uniform init range of attention projections.
pub const ATTENTION_INIT_SCALE: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreNetConfig {
    pub embed_dim: usize,
    pub num_heads: usize,
    pub key_size: usize,
    pub num_blocks: usize,
    pub ffn_hidden: usize,
    pub grad_clip: f64,
    pub learning_rate: f64,
    pub train_iters: usize,
    pub spectral_norm_enabled: bool,
}

impl Default for ScoreNetConfig {
    fn default() -> Self {
        ScoreNetConfig {
            embed_dim: 32,
            num_heads: 8,
            key_size: 16,
            num_blocks: 2,
            ffn_hidden: 64,
            grad_clip: 10.0,
            learning_rate: 1e-3,
            train_iters: 20000,
            spectral_norm_enabled: true,
        }
    }
}

impl ScoreNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.num_heads == 0 || self.key_size == 0 || self.ffn_hidden == 0 {
            return Err(MarsError::invalid("score network widths must be positive"));
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(MarsError::invalid(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.num_blocks != 2 {
            return Err(MarsError::invalid("the score network has exactly two blocks"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(MarsError::invalid("grad_clip must be positive"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(MarsError::invalid("learning_rate must be finite and non-negative"));
        }
        Ok(())
    }
}

/// What a token is made of and which token coordinates the score is taken with
/// respect to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TokenLayout {
    /// Token `concat(x_i, h_i)`; one scalar score per point, `∂/∂h_i`.
    Regression { input_dim: usize },
    /// Token `x_i`; a `dim`-vector score per sample, `∇_x`.
    Distribution { dim: usize },
}

impl TokenLayout {
    pub fn token_dim(&self) -> usize {
        match *self {
            TokenLayout::Regression { input_dim } => input_dim + 1,
            TokenLayout::Distribution { dim } => dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match *self {
            TokenLayout::Regression { .. } => 1,
            TokenLayout::Distribution { dim } => dim,
        }
    }

    /// Token column differentiated by output column `j`.
    pub fn diff_col(&self, j: usize) -> usize {
        match *self {
            TokenLayout::Regression { input_dim } => input_dim,
            TokenLayout::Distribution { .. } => j,
        }
    }
}

/// Affine map `y = x W + b` on row vectors, `W` is `fan_in × fan_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    /// Power-iteration state; present iff the layer is spectrally normalized.
    pub spectral_u: Option<DVector<f64>>,
}

impl Linear {
    fn init(fan_in: usize, fan_out: usize, range_scale: f64, rng: &mut Rng) -> Self {
        let r = range_scale / (fan_in as f64).sqrt();
        Linear {
            weight: DMatrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-r..=r)),
            bias: DVector::zeros(fan_out),
            spectral_u: None,
        }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * &self.weight;
        for mut row in y.row_iter_mut() {
            row += self.bias.transpose();
        }
        y
    }

    fn attach_spectral_state(&mut self, rng: &mut Rng) {
        let u = DVector::from_fn(self.weight.nrows(), |_, _| rng.random_range(-1.0..1.0));
        self.spectral_u = Some(u);
        self.renormalize();
    }

    /// Divides the weight by its spectral norm. No-op without spectral state.
    pub fn renormalize(&mut self) -> Option<f64> {
        let u = self.spectral_u.as_ref()?;
        let step = spectral::spectral_normalize(&self.weight, u);
        if step.degenerate {
            return Some(0.0);
        }
        self.weight = step.weight;
        self.spectral_u = Some(step.u);
        Some(step.sigma)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub attn_out: Linear,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

impl Block {
    fn linears(&self) -> [&Linear; 6] {
        [
            &self.query,
            &self.key,
            &self.value,
            &self.attn_out,
            &self.ffn_in,
            &self.ffn_out,
        ]
    }

    fn linears_mut(&mut self) -> [&mut Linear; 6] {
        [
            &mut self.query,
            &mut self.key,
            &mut self.value,
            &mut self.attn_out,
            &mut self.ffn_in,
            &mut self.ffn_out,
        ]
    }
}

const BLOCK_LAYER_NAMES: [&str; 6] = ["query", "key", "value", "attn_out", "ffn_in", "ffn_out"];

/// Weights of the permutation-equivariant attention score network.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreNetworkParams {
    pub config: ScoreNetConfig,
    pub layout: TokenLayout,
    pub embed: Linear,
    pub blocks: Vec<Block>,
    /// Never spectrally normalized.
    pub output: Linear,
}

impl ScoreNetworkParams {
    pub fn init(config: ScoreNetConfig, layout: TokenLayout, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (e, h, dk, f) = (config.embed_dim, config.num_heads, config.key_size, config.ffn_hidden);
        let attn = ATTENTION_INIT_SCALE;
        let embed = Linear::init(layout.token_dim(), e, 1.0, rng);
        let blocks = (0..config.num_blocks)
            .map(|_| Block {
                query: Linear::init(e, h * dk, attn, rng),
                key: Linear::init(e, h * dk, attn, rng),
                value: Linear::init(e, h * dk, attn, rng),
                attn_out: Linear::init(h * dk, e, attn, rng),
                ffn_in: Linear::init(e, f, 1.0, rng),
                ffn_out: Linear::init(f, e, 1.0, rng),
            })
            .collect();
        let output = Linear::init(e, layout.out_dim(), 1.0, rng);
        let mut p = ScoreNetworkParams {
            config,
            layout,
            embed,
            blocks,
            output,
        };
        if p.config.spectral_norm_enabled {
            for l in p.normalized_layers_mut() {
                l.attach_spectral_state(rng);
            }
        }
        Ok(p)
    }

    /// Layers in parameter order: embed, each block, output.
    pub fn layers(&self) -> Vec<&Linear> {
        let mut v = vec![&self.embed];
        for b in &self.blocks {
            v.extend(b.linears());
        }
        v.push(&self.output);
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Linear> {
        let mut v = vec![&mut self.embed];
        for b in &mut self.blocks {
            v.extend(b.linears_mut());
        }
        v.push(&mut self.output);
        v
    }

    pub fn layer_names(&self) -> Vec<String> {
        let mut v = vec!["embed".to_string()];
        for (i, _) in self.blocks.iter().enumerate() {
            v.extend(BLOCK_LAYER_NAMES.iter().map(|n| format!("block{i}.{n}")));
        }
        v.push("output".to_string());
        v
    }

    /// Every layer but the output one.
    pub fn normalized_layers_mut(&mut self) -> Vec<&mut Linear> {
        let mut v = self.layers_mut();
        v.pop();
        v
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|l| l.num_params()).sum()
    }

    /// Weights (row-major) then biases, layer by layer.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in self.layers() {
            out.extend(l.weight.transpose().iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.num_params());
        let mut off = 0;
        for l in self.layers_mut() {
            let (r, c) = l.weight.shape();
            l.weight = DMatrix::from_row_slice(r, c, &theta[off..off + r * c]);
            off += r * c;
            l.bias.copy_from_slice(&theta[off..off + c]);
            off += c;
        }
    }

    /// Re-projects every normalized layer whose weights differ from `before`.
    pub fn renormalize_changed(&mut self, before: &ScoreNetworkParams) {
        let n = self.layers().len() - 1;
        let prev = before.layers();
        for (i, l) in self.layers_mut().into_iter().enumerate().take(n) {
            if l.weight != prev[i].weight {
                l.renormalize();
            }
        }
    }

    fn check_tokens(&self, tokens: &DMatrix<f64>, set: usize) -> Result<()> {
        if set == 0 || tokens.nrows() == 0 || !tokens.nrows().is_multiple_of(set) {
            return Err(MarsError::invalid(format!(
                "{} token rows do not split into sets of {set}",
                tokens.nrows()
            )));
        }
        if tokens.ncols() != self.layout.token_dim() {
            return Err(MarsError::invalid(format!(
                "tokens have {} columns, layout needs {}",
                tokens.ncols(),
                self.layout.token_dim()
            )));
        }
        Ok(())
    }

    /// Scores for row-stacked sets of `set` tokens each; `N × out_dim`.
    pub fn forward_sets(&self, tokens: &DMatrix<f64>, set: usize) -> Result<DMatrix<f64>> {
        self.check_tokens(tokens, set)?;
        let mut tape = Tape::new();
        let g = build_graph(&mut tape, self, tokens, set, &[]);
        Ok(tape.value(g.output).clone())
    }

    /// Per-point score `s(X, h)` of a regression network.
    pub fn forward(&self, x: &DMatrix<f64>, h: &DVector<f64>) -> Result<DVector<f64>> {
        let tokens = regression_tokens(self.layout, x, h)?;
        Ok(self.forward_sets(&tokens, x.nrows())?.column(0).into_owned())
    }

    /// Per-sample score of a distribution-mode network; `k × d`.
    pub fn distribution_mode_forward(&self, samples: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if !matches!(self.layout, TokenLayout::Distribution { .. }) {
            return Err(MarsError::invalid("network was not built for distribution mode"));
        }
        self.forward_sets(samples, samples.nrows())
    }

    /// Mean over sets of `tr(∂s/∂f) + ½‖s‖²` and its gradient over the flat
    /// parameters.
    pub fn loss_and_gradient_sets(&self, tokens: &DMatrix<f64>, set: usize) -> Result<(f64, Vec<f64>)> {
        self.check_tokens(tokens, set)?;
        let mut tape = Tape::new();
        let (loss, g) = build_loss(&mut tape, self, tokens, set);
        let grads = tape.backward(loss);
        let mut flat = Vec::with_capacity(self.num_params());
        for &(w, b) in &g.params {
            let gw = grads[w].clone().unwrap_or_else(|| tape.value(w) * 0.0);
            let gb = grads[b].clone().unwrap_or_else(|| tape.value(b) * 0.0);
            flat.extend(gw.transpose().iter());
            flat.extend(gb.iter());
        }
        Ok((tape.value(loss)[(0, 0)], flat))
    }

    /// Mean score-matching loss over sets without the gradient.
    pub fn loss_sets(&self, tokens: &DMatrix<f64>, set: usize) -> Result<f64> {
        self.check_tokens(tokens, set)?;
        let mut tape = Tape::new();
        let (loss, _) = build_loss(&mut tape, self, tokens, set);
        Ok(tape.value(loss)[(0, 0)])
    }

    /// Exact `tr(∂s/∂f)` for one set, from forward-mode tangents.
    pub fn jacobian_trace(&self, tokens: &DMatrix<f64>) -> Result<f64> {
        let set = tokens.nrows();
        self.check_tokens(tokens, set)?;
        let mut tape = Tape::new();
        let seeds = tangent_seeds(self.layout, set, 1);
        let g = build_graph(
            &mut tape,
            self,
            tokens,
            set,
            &seeds.iter().map(|s| s.0.clone()).collect::<Vec<_>>(),
        );
        Ok(seeds
            .iter()
            .zip(&g.tangents)
            .map(|((_, mask), &t)| tape.value(t).component_mul(mask).sum())
            .sum())
    }
}

/// Row-stacks `concat(x_i, h_i)`.
pub fn regression_tokens(layout: TokenLayout, x: &DMatrix<f64>, h: &DVector<f64>) -> Result<DMatrix<f64>> {
    let d = match layout {
        TokenLayout::Regression { input_dim } => input_dim,
        TokenLayout::Distribution { .. } => return Err(MarsError::invalid("network was not built for regression")),
    };
    if x.nrows() != h.len() {
        return Err(MarsError::invalid(format!(
            "{} inputs but {} function values",
            x.nrows(),
            h.len()
        )));
    }
    if x.ncols() != d {
        return Err(MarsError::invalid(format!(
            "inputs have {} columns, expected {d}",
            x.ncols()
        )));
    }
    if x.nrows() == 0 {
        return Err(MarsError::invalid("empty measurement set"));
    }
    let mut t = DMatrix::zeros(x.nrows(), d + 1);
    t.view_mut((0, 0), (x.nrows(), d)).copy_from(x);
    t.set_column(d, h);
    Ok(t)
}

pub(crate) struct Graph {
    pub output: Var,
    pub tangents: Vec<Var>,
    pub params: Vec<(Var, Var)>,
}

struct LinearVars {
    w: Var,
    b: Var,
}

fn linear_vars(tape: &mut Tape, l: &Linear) -> LinearVars {
    let w = tape.leaf(l.weight.clone());
    let b = tape.leaf(DMatrix::from_row_slice(1, l.bias.len(), l.bias.as_slice()));
    LinearVars { w, b }
}

fn affine(tape: &mut Tape, l: &LinearVars, x: Var) -> Var {
    let m = tape.matmul(x, l.w);
    tape.add_bias(m, l.b)
}

/// One seed per (token position, output column): a one at the differentiated
/// column of every row holding that position, and the mask that picks the
/// matching output entries.
fn tangent_seeds(layout: TokenLayout, set: usize, num_sets: usize) -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
    let n = set * num_sets;
    let mut out = Vec::with_capacity(set * layout.out_dim());
    for t in 0..set {
        for j in 0..layout.out_dim() {
            let mut seed = DMatrix::zeros(n, layout.token_dim());
            let mut mask = DMatrix::zeros(n, layout.out_dim());
            for b in 0..num_sets {
                seed[(b * set + t, layout.diff_col(j))] = 1.0;
                mask[(b * set + t, j)] = 1.0;
            }
            out.push((seed, mask));
        }
    }
    out
}

pub(crate) fn build_graph(
    tape: &mut Tape,
    p: &ScoreNetworkParams,
    tokens: &DMatrix<f64>,
    set: usize,
    seeds: &[DMatrix<f64>],
) -> Graph {
    let heads = p.config.num_heads;
    let scale = 1.0 / (p.config.key_size as f64).sqrt();
    let mut params = Vec::new();
    let mut lin = |tape: &mut Tape, l: &Linear| {
        let v = linear_vars(tape, l);
        params.push((v.w, v.b));
        v
    };

    let embed = lin(tape, &p.embed);
    let x0 = tape.leaf(tokens.clone());
    let mut x = affine(tape, &embed, x0);
    let mut dx: Vec<Var> = seeds
        .iter()
        .map(|s| {
            let sv = tape.leaf(s.clone());
            tape.matmul(sv, embed.w)
        })
        .collect();

    for block in &p.blocks {
        let q = lin(tape, &block.query);
        let k = lin(tape, &block.key);
        let v = lin(tape, &block.value);
        let o = lin(tape, &block.attn_out);
        let f1 = lin(tape, &block.ffn_in);
        let f2 = lin(tape, &block.ffn_out);

        let qx = affine(tape, &q, x);
        let kx = affine(tape, &k, x);
        let vx = affine(tape, &v, x);
        let s = tape.set_scores(qx, kx, set, heads, scale);
        let a = tape.group_softmax(s, set);
        let att = tape.set_apply(a, vx, set, heads);
        let ox = affine(tape, &o, att);
        let x1 = tape.add(x, ox);
        let z = affine(tape, &f1, x1);
        let e = tape.elu(z);
        let y = affine(tape, &f2, e);
        x = tape.add(x1, y);

        for d in dx.iter_mut() {
            let dq = tape.matmul(*d, q.w);
            let dk = tape.matmul(*d, k.w);
            let dv = tape.matmul(*d, v.w);
            let s1 = tape.set_scores(dq, kx, set, heads, scale);
            let s2 = tape.set_scores(qx, dk, set, heads, scale);
            let ds = tape.add(s1, s2);
            let da = tape.softmax_tangent(a, ds, set);
            let t1 = tape.set_apply(da, vx, set, heads);
            let t2 = tape.set_apply(a, dv, set, heads);
            let datt = tape.add(t1, t2);
            let dox = tape.matmul(datt, o.w);
            let dx1 = tape.add(*d, dox);
            let dz = tape.matmul(dx1, f1.w);
            let de = tape.elu_tangent(z, dz);
            let dy = tape.matmul(de, f2.w);
            *d = tape.add(dx1, dy);
        }
    }

    let out = lin(tape, &p.output);
    let output = affine(tape, &out, x);
    let tangents = dx.into_iter().map(|d| tape.matmul(d, out.w)).collect();
    Graph {
        output,
        tangents,
        params,
    }
}

fn build_loss(tape: &mut Tape, p: &ScoreNetworkParams, tokens: &DMatrix<f64>, set: usize) -> (Var, Graph) {
    let num_sets = tokens.nrows() / set;
    let seeds = tangent_seeds(p.layout, set, num_sets);
    let seed_values: Vec<DMatrix<f64>> = seeds.iter().map(|s| s.0.clone()).collect();
    let g = build_graph(tape, p, tokens, set, &seed_values);
    let sq = tape.mul(g.output, g.output);
    let sq = tape.sum_all(sq);
    let mut total = tape.scale(sq, 0.5);
    for ((_, mask), &t) in seeds.into_iter().zip(&g.tangents) {
        let m = tape.leaf(mask);
        let picked = tape.mul(t, m);
        let tr = tape.sum_all(picked);
        total = tape.add(total, tr);
    }
    let loss = tape.scale(total, 1.0 / num_sets as f64);
    (loss, g)
}

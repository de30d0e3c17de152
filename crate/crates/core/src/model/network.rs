use super::config::ModelConfig;
use super::layers::{DeformableAttention, FeedForward, LayerNorm, Linear, Mlp, MultiHeadAttention};
use super::types::{EncoderPrediction, LayerPrediction};
use crate::diffmath::{logit, param, sigmoid, LevelLayout, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::geometry::{bernstein, CubicBezier, Point2};
use crate::scalar::Scalar;
use rand::Rng;

/// Prior probability behind the initial classification bias.
const PRIOR: f64 = 0.01;

#[derive(Debug, Clone)]
struct Conv {
    lin: Linear,
    kernel: usize,
    stride: usize,
    pad: usize,
}

impl Conv {
    fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        Self { lin: Linear::new(store, name, 9 * c_in, c_out, rng), kernel: 3, stride: 2, pad: 1 }
    }

    /// `[H, W, C] → [H/2, W/2, C']`, followed by ReLU.
    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let ho = (s[0] + 2 * self.pad - self.kernel) / self.stride + 1;
        let wo = (s[1] + 2 * self.pad - self.kernel) / self.stride + 1;
        let cols = tape.im2col(x, self.kernel, self.stride, self.pad)?;
        let y = self.lin.forward(tape, cols)?;
        let y = tape.relu(y);
        tape.reshape(y, &[ho, wo, self.lin.d_out])
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: DeformableAttention,
    ln1: LayerNorm,
    ffn: FeedForward,
    ln2: LayerNorm,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    intra: MultiHeadAttention,
    ln1: LayerNorm,
    inter: MultiHeadAttention,
    ln2: LayerNorm,
    cross: DeformableAttention,
    ln3: LayerNorm,
    ffn: FeedForward,
    ln4: LayerNorm,
    coord: Mlp,
}

#[derive(Debug, Clone)]
struct Heads {
    instance: Linear,
    chars: Linear,
    boundary: Mlp,
}

/// Multi-level features after the stem, flattened level by level.
#[derive(Debug, Clone)]
pub struct Pyramid<T> {
    /// Per-level maps `[H_l, W_l, d_model]`.
    pub levels: Vec<Var>,
    /// `[S, d_model]` concatenation of all levels with level embeddings added.
    pub flat: Var,
    pub layout: LevelLayout,
    /// `S × 2` normalized pixel-center coordinates.
    pub coords: Vec<T>,
    /// Pixel centers inside the unpadded image.
    pub valid: Vec<bool>,
    /// `[S, d_model]` zero/one mask, absent when nothing is padded.
    pub value_mask: Option<Var>,
}

/// Top-`K` proposals, detached from the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    /// Flattened `(level, row, col)` pixel indices, by descending score.
    pub pixels: Vec<usize>,
    pub scores: Vec<f64>,
    pub curves: Vec<CubicBezier<f64>>,
}

/// Point queries entering a decoder layer.
#[derive(Debug, Clone)]
pub struct QueryState<T> {
    /// `K × N × 2` reference coordinates.
    pub coords: Vec<T>,
    /// `[K, N, d]` content queries `C_q`.
    pub content: Var,
    /// `[K, N, d]` positional queries `P_q`.
    pub positional: Var,
    /// `[K, N, d]` composite queries `Q_q = C_q + P_q`.
    pub composite: Var,
}

#[derive(Debug, Clone)]
pub struct ModelOutput<T> {
    pub encoder: EncoderPrediction,
    pub proposals: ProposalSet,
    pub queries: QueryState<T>,
    /// Head outputs after every decoder layer.
    pub layers: Vec<LayerPrediction>,
}

/// `bp_j = (σ(Δx_j + σ⁻¹(p̂_x)), σ(Δy_j + σ⁻¹(p̂_y)))` for `j = 0..3`.
pub fn bezier_from_offsets<T: Scalar>(offsets: &[T; 8], anchor: Point2<T>, eps: T) -> CubicBezier<T> {
    let (ax, ay) = (logit(anchor.x, eps), logit(anchor.y, eps));
    let pt = |j: usize| Point2::new(sigmoid(offsets[2 * j] + ax), sigmoid(offsets[2 * j + 1] + ay));
    CubicBezier::new(pt(0), pt(1), pt(2), pt(3))
}

/// Indices of the `k` highest scores among valid entries; ties go to the
/// lower index.
pub fn select_top_k<T: Scalar>(scores: &[T], valid: &[bool], k: usize) -> Result<Vec<usize>> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| valid[i]).collect();
    if k > idx.len() {
        return Err(Error::Config(format!("K = {k} exceeds the {} available pixels", idx.len())));
    }
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

/// The full network: parameter layout plus forward pass.
#[derive(Debug, Clone)]
pub struct SpotterModel {
    pub cfg: ModelConfig,
    stem: Vec<Conv>,
    level_proj: Vec<Linear>,
    level_embed: ParamId,
    encoder: Vec<EncoderLayer>,
    prop_score: Linear,
    prop_offsets: Mlp,
    content: ParamId,
    pos_mlp: Mlp,
    decoder: Vec<DecoderLayer>,
    heads: Vec<Heads>,
}

impl SpotterModel {
    /// Allocates and initializes all parameters. Stem parameters are
    /// prefixed `stem.` so that they can be given their own learning rate.
    pub fn new<T: Scalar, R: Rng>(cfg: ModelConfig, rng: &mut R) -> Result<(Self, ParamStore<T>)> {
        cfg.validate()?;
        let mut s = ParamStore::new();
        let (d, heads, levels, points) = (cfg.d_model, cfg.n_heads, cfg.n_levels, cfg.n_sample_points);
        let [c1, c2, c3] = cfg.stem_channels;
        let mut stem = vec![
            Conv::new(&mut s, "stem.conv1", 3, c1, rng),
            Conv::new(&mut s, "stem.conv2", c1, c2, rng),
            Conv::new(&mut s, "stem.conv3", c2, c3, rng),
        ];
        for l in 1..levels {
            stem.push(Conv::new(&mut s, &format!("stem.down{l}"), c3, c3, rng));
        }
        let level_proj = (0..levels).map(|l| Linear::new(&mut s, &format!("stem.proj{l}"), c3, d, rng)).collect();
        let level_embed = s.uniform("level_embed", &[levels, d], 1.0, rng);
        let encoder = (0..cfg.n_enc_layers)
            .map(|i| {
                let n = format!("enc.{i}");
                EncoderLayer {
                    attn: DeformableAttention::new(&mut s, &format!("{n}.attn"), d, heads, levels, points, rng),
                    ln1: LayerNorm::new(&mut s, &format!("{n}.ln1"), d),
                    ffn: FeedForward::new(&mut s, &format!("{n}.ffn"), d, cfg.ffn_dim, rng),
                    ln2: LayerNorm::new(&mut s, &format!("{n}.ln2"), d),
                }
            })
            .collect();
        let prop_score = Linear::new(&mut s, "proposal.score", d, 1, rng);
        s.get_mut(prop_score.b.unwrap()).data = vec![T::lit(logit(PRIOR, 1e-12))];
        let prop_offsets = Mlp::new(&mut s, "proposal.offsets", &[d, d, d, 8], true, rng);
        // start every proposal as a short horizontal segment around its pixel
        let span = cfg.proposal_span;
        let bias: Vec<T> = [-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0]
            .iter()
            .flat_map(|&u| [T::lit(logit(0.5 + span * u, 1e-12)), T::zero()])
            .collect();
        s.get_mut(prop_offsets.last().b.unwrap()).data = bias;
        let content = s.uniform("query.content", &[cfg.n, d], 1.0, rng);
        let pos_mlp = Mlp::new(&mut s, "query.pos", &[d, d, d], false, rng);
        let decoder = (0..cfg.n_dec_layers)
            .map(|i| {
                let n = format!("dec.{i}");
                DecoderLayer {
                    intra: MultiHeadAttention::new(&mut s, &format!("{n}.intra"), d, heads, rng),
                    ln1: LayerNorm::new(&mut s, &format!("{n}.ln1"), d),
                    inter: MultiHeadAttention::new(&mut s, &format!("{n}.inter"), d, heads, rng),
                    ln2: LayerNorm::new(&mut s, &format!("{n}.ln2"), d),
                    cross: DeformableAttention::new(&mut s, &format!("{n}.cross"), d, heads, levels, points, rng),
                    ln3: LayerNorm::new(&mut s, &format!("{n}.ln3"), d),
                    ffn: FeedForward::new(&mut s, &format!("{n}.ffn"), d, cfg.ffn_dim, rng),
                    ln4: LayerNorm::new(&mut s, &format!("{n}.ln4"), d),
                    coord: Mlp::new(&mut s, &format!("{n}.coord"), &[d, d, d, 2], true, rng),
                }
            })
            .collect();
        let n_heads_sets = if cfg.share_heads { 1 } else { cfg.n_dec_layers };
        let heads = (0..n_heads_sets)
            .map(|i| {
                let n = format!("head.{i}");
                let instance = Linear::new(&mut s, &format!("{n}.instance"), d, 1, rng);
                s.get_mut(instance.b.unwrap()).data = vec![T::lit(logit(PRIOR, 1e-12))];
                Heads {
                    instance,
                    chars: Linear::new(&mut s, &format!("{n}.chars"), d, cfg.classes(), rng),
                    boundary: Mlp::new(&mut s, &format!("{n}.boundary"), &[d, d, d, 4], true, rng),
                }
            })
            .collect();
        let model = Self { cfg, stem, level_proj, level_embed, encoder, prop_score, prop_offsets, content, pos_mlp, decoder, heads };
        Ok((model, s))
    }

    /// Stem and level embeddings. The image is `[H, W, 3]`; sides that are not
    /// multiples of the coarsest stride are zero-padded. `valid` is the
    /// unpadded extent in pixels (defaults to the full image).
    pub fn stem_forward<T: Scalar>(&self, tape: &mut Tape<T>, image: &Tensor<T>, valid: Option<(usize, usize)>) -> Result<Pyramid<T>> {
        if image.shape.len() != 3 || image.shape[2] != 3 {
            return Err(shape_err("stem_forward", format!("image must be [H, W, 3], got {:?}", image.shape)));
        }
        let (h, w) = (image.shape[0], image.shape[1]);
        let stride = self.cfg.coarsest_stride();
        let (hp, wp) = (h.div_ceil(stride) * stride, w.div_ceil(stride) * stride);
        let (vh, vw) = valid.map_or((h, w), |(a, b)| (a.min(h), b.min(w)));
        let input = if (hp, wp) == (h, w) {
            tape.constant(image.clone())
        } else {
            let mut data = vec![T::zero(); hp * wp * 3];
            for i in 0..h {
                data[i * wp * 3..i * wp * 3 + w * 3].copy_from_slice(&image.data[i * w * 3..(i + 1) * w * 3]);
            }
            tape.constant_from(&[hp, wp, 3], data)?
        };
        let mut x = input;
        let mut raw = Vec::new();
        for (i, conv) in self.stem.iter().enumerate() {
            x = conv.forward(tape, x)?;
            if i >= 2 {
                raw.push(x);
            }
        }
        let d = self.cfg.d_model;
        let mut levels = Vec::new();
        let mut flat_parts = Vec::new();
        let mut sizes = Vec::new();
        let mut coords = Vec::new();
        let mut valid_px = Vec::new();
        let mut level_of = Vec::new();
        for (l, (&feat, proj)) in raw.iter().zip(&self.level_proj).enumerate() {
            let s = tape.shape(feat).to_vec();
            let (lh, lw) = (s[0], s[1]);
            let f = tape.reshape(feat, &[lh * lw, s[2]])?;
            let f = proj.forward(tape, f)?;
            levels.push(tape.reshape(f, &[lh, lw, d])?);
            flat_parts.push(f);
            sizes.push((lh, lw));
            for i in 0..lh {
                for j in 0..lw {
                    let (cx, cy) = ((j as f64 + 0.5) / lw as f64, (i as f64 + 0.5) / lh as f64);
                    coords.push(T::lit(cx));
                    coords.push(T::lit(cy));
                    valid_px.push(cx * (wp as f64) < vw as f64 && cy * (hp as f64) < vh as f64);
                    level_of.push(l);
                }
            }
        }
        let flat = tape.concat(&flat_parts, 0)?;
        let emb = tape.index_select(param(self.level_embed), 0, &level_of)?;
        let flat = tape.add(flat, emb)?;
        let value_mask = if valid_px.iter().all(|&v| v) {
            None
        } else {
            let m = valid_px.iter().flat_map(|&v| std::iter::repeat(if v { T::one() } else { T::zero() }).take(d)).collect();
            Some(tape.constant_from(&[valid_px.len(), d], m)?)
        };
        Ok(Pyramid { levels, flat, layout: LevelLayout::new(sizes), coords, valid: valid_px, value_mask })
    }

    /// Sinusoidal encoding of `[R, 2]` coordinates into `[R, d]`.
    fn position_encoding<T: Scalar>(&self, tape: &mut Tape<T>, coords: &[T]) -> Result<Var> {
        let c = tape.constant_from(&[coords.len() / 2, 2], coords.to_vec())?;
        tape.sinusoidal(c, self.cfg.d_model / 2, T::lit(self.cfg.pos_temperature))
    }

    /// Deformable self-attention layers over the flattened pyramid.
    pub fn encoder_forward<T: Scalar>(&self, tape: &mut Tape<T>, pyr: &Pyramid<T>) -> Result<Var> {
        let pos = self.position_encoding(tape, &pyr.coords)?;
        let mut x = pyr.flat;
        for layer in &self.encoder {
            let q = tape.add(x, pos)?;
            let a = layer.attn.forward(tape, q, &pyr.coords, x, &pyr.layout, pyr.value_mask)?;
            let r = tape.add(x, a)?;
            x = layer.ln1.forward(tape, r)?;
            let f = layer.ffn.forward(tape, x)?;
            let r = tape.add(x, f)?;
            x = layer.ln2.forward(tape, r)?;
        }
        Ok(x)
    }

    /// Per-pixel scores and Bezier proposals, then the top-`K`.
    pub fn propose_bezier<T: Scalar>(&self, tape: &mut Tape<T>, memory: Var, pyr: &Pyramid<T>) -> Result<(EncoderPrediction, ProposalSet)> {
        let s = pyr.valid.len();
        let score = self.prop_score.forward(tape, memory)?;
        let score_logits = tape.reshape(score, &[s])?;
        let delta = self.prop_offsets.forward(tape, memory)?;
        let delta = tape.reshape(delta, &[s, 4, 2])?;
        let eps = T::lit(self.cfg.logit_eps);
        let anchors: Vec<T> = (0..s).flat_map(|i| (0..4).flat_map(move |_| [i, i])).enumerate().map(|(j, i)| logit(pyr.coords[2 * i + j % 2], eps)).collect();
        let anchors = tape.constant_from(&[s, 4, 2], anchors)?;
        let z = tape.add(delta, anchors)?;
        let control = tape.sigmoid(z);
        let top = select_top_k(tape.value(score_logits), &pyr.valid, self.cfg.k)?;
        let sv = tape.value(score_logits);
        let cv = tape.value(control);
        let scores = top.iter().map(|&i| sigmoid(sv[i].to_f64().unwrap())).collect();
        let curves = top
            .iter()
            .map(|&i| {
                let c = &cv[8 * i..8 * i + 8];
                let pt = |j: usize| Point2::new(c[2 * j].to_f64().unwrap(), c[2 * j + 1].to_f64().unwrap());
                CubicBezier::new(pt(0), pt(1), pt(2), pt(3))
            })
            .collect();
        let enc = EncoderPrediction { score_logits, control, valid: pyr.valid.clone() };
        Ok((enc, ProposalSet { pixels: top, scores, curves }))
    }

    /// `N` parameter-uniform samples on each curve, `K × N × 2`.
    pub fn sample_proposals<T: Scalar>(&self, proposals: &ProposalSet) -> Vec<T> {
        let n = self.cfg.n;
        let w: Vec<[f64; 4]> = (0..n).map(|i| bernstein(i as f64 / (n - 1) as f64)).collect();
        proposals
            .curves
            .iter()
            .flat_map(|c| {
                w.iter().flat_map(move |b| {
                    let x: f64 = (0..4).map(|j| b[j] * c.points[j].x).sum();
                    let y: f64 = (0..4).map(|j| b[j] * c.points[j].y).sum();
                    [T::lit(x), T::lit(y)]
                })
            })
            .collect()
    }

    /// `P_q = MLP(PE(coords))` as `[K, N, d]`.
    fn positional_queries<T: Scalar>(&self, tape: &mut Tape<T>, coords: &[T]) -> Result<Var> {
        let k = coords.len() / (2 * self.cfg.n);
        let pe = self.position_encoding(tape, coords)?;
        let p = self.pos_mlp.forward(tape, pe)?;
        tape.reshape(p, &[k, self.cfg.n, self.cfg.d_model])
    }

    /// Builds `C_q`, `P_q` and `Q_q` for reference coordinates `K × N × 2`.
    pub fn init_queries<T: Scalar>(&self, tape: &mut Tape<T>, coords: Vec<T>) -> Result<QueryState<T>> {
        let (n, d) = (self.cfg.n, self.cfg.d_model);
        if coords.len() % (2 * n) != 0 {
            return Err(shape_err("init_queries", format!("{} coordinates for groups of {n} points", coords.len())));
        }
        let k = coords.len() / (2 * n);
        let positional = self.positional_queries(tape, &coords)?;
        let zeros = tape.constant(Tensor::zeros(&[k, n, d]));
        let content = tape.add(zeros, param(self.content))?;
        let composite = tape.add(content, positional)?;
        Ok(QueryState { coords, content, positional, composite })
    }

    fn heads_for(&self, layer: usize) -> &Heads {
        &self.heads[if self.cfg.share_heads { 0 } else { layer }]
    }

    /// One decoder layer followed by the prediction heads. Returns the
    /// predictions and the queries for the next layer, whose reference
    /// points are the detached center predictions.
    pub fn decoder_layer<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        index: usize,
        state: &QueryState<T>,
        memory: Var,
        pyr: &Pyramid<T>,
    ) -> Result<(LayerPrediction, QueryState<T>)> {
        let layer = &self.decoder[index];
        let (n, d) = (self.cfg.n, self.cfg.d_model);
        let k = state.coords.len() / (2 * n);
        let pos = state.positional;
        let mut c = state.content;

        // within each instance, across its N points
        let a = layer.intra.forward(tape, state.composite, state.composite, c)?;
        let r = tape.add(c, a)?;
        c = layer.ln1.forward(tape, r)?;

        // across the K instances, separately for each point index
        let q = tape.add(c, pos)?;
        let qt = tape.permute(q, &[1, 0, 2])?;
        let ct = tape.permute(c, &[1, 0, 2])?;
        let a = layer.inter.forward(tape, qt, qt, ct)?;
        let a = tape.permute(a, &[1, 0, 2])?;
        let r = tape.add(c, a)?;
        c = layer.ln2.forward(tape, r)?;

        let q = tape.add(c, pos)?;
        let q = tape.reshape(q, &[k * n, d])?;
        let a = layer.cross.forward(tape, q, &state.coords, memory, &pyr.layout, pyr.value_mask)?;
        let a = tape.reshape(a, &[k, n, d])?;
        let r = tape.add(c, a)?;
        c = layer.ln3.forward(tape, r)?;

        let f = layer.ffn.forward(tape, c)?;
        let r = tape.add(c, f)?;
        c = layer.ln4.forward(tape, r)?;

        let heads = self.heads_for(index);
        let inst = heads.instance.forward(tape, c)?;
        let instance_logits = tape.reshape(inst, &[k, n])?;
        let char_logits = heads.chars.forward(tape, c)?;
        let refs = tape.constant_from(&[k, n, 2], state.coords.clone())?;
        let eps = T::lit(self.cfg.logit_eps);
        let ref_logit = tape.logit(refs, eps);
        let delta = layer.coord.forward(tape, c)?;
        let z = tape.add(ref_logit, delta)?;
        let center = tape.sigmoid(z);
        let bd = heads.boundary.forward(tape, c)?;
        let top_off = tape.slice(bd, 2, 0, 2)?;
        let bot_off = tape.slice(bd, 2, 2, 4)?;
        let top = tape.add(refs, top_off)?;
        let bot = tape.add(refs, bot_off)?;

        let coords = tape.value(center).to_vec();
        let positional = self.positional_queries(tape, &coords)?;
        let composite = tape.add(c, positional)?;
        let next = QueryState { coords, content: c, positional, composite };
        Ok((LayerPrediction { instance_logits, char_logits, center, top, bot }, next))
    }

    /// Decoder stack from given reference coordinates `K × N × 2`.
    pub fn decode<T: Scalar>(&self, tape: &mut Tape<T>, coords: Vec<T>, memory: Var, pyr: &Pyramid<T>) -> Result<(QueryState<T>, Vec<LayerPrediction>)> {
        let initial = self.init_queries(tape, coords)?;
        let mut state = initial.clone();
        let mut layers = Vec::with_capacity(self.decoder.len());
        for i in 0..self.decoder.len() {
            let (pred, next) = self.decoder_layer(tape, i, &state, memory, pyr)?;
            layers.push(pred);
            state = next;
        }
        Ok((initial, layers))
    }

    /// Stem → encoder → proposals → queries → decoder with heads after every layer.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, image: &Tensor<T>, valid: Option<(usize, usize)>) -> Result<ModelOutput<T>> {
        let pyr = self.stem_forward(tape, image, valid)?;
        let memory = self.encoder_forward(tape, &pyr)?;
        let (encoder, proposals) = self.propose_bezier(tape, memory, &pyr)?;
        let coords = self.sample_proposals(&proposals);
        let (queries, layers) = self.decode(tape, coords, memory, &pyr)?;
        Ok(ModelOutput { encoder, proposals, queries, layers })
    }
}

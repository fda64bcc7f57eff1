//! Frozen toy decoder-only transformer with adapter slots at every linear projection.
//!
//! Activations are laid out column-per-position: a sequence of `T` tokens is a
//! `d_model × T` matrix, and every projection computes `W x` with `W` of shape
//! `d_out × d_in`. Each block is pre-norm attention followed by a gated MLP:
//! `down(silu(gate(h)) ⊙ up(h))`.

mod checkpoint;
mod config;
mod quant;

use std::collections::BTreeMap;

pub use checkpoint::{decode_host, encode_host, load_host, save_host, HOST_MAGIC, HOST_VERSION};
pub use config::HostConfig;
pub use quant::{QuantizedBlocks, DEFAULT_BLOCK_SIZE};

use sha2::{Digest, Sha256};

use crate::adapter::{dropout_mask, LowRankAdapter};
use crate::compose::{ComposedSite, CompositionStrategy};
use crate::error::{Error, Result};
use crate::numeric::{kaiming_uniform_init, GradientTape, Matrix, Prng, Var};
use crate::site::{AttachmentSite, SiteKind};

pub type TokenId = u32;

/// A frozen projection weight, optionally stored as 4-bit blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenLinear {
    w0: Matrix,
    quantized: Option<QuantizedBlocks>,
    dequantized: Option<Matrix>,
}

impl FrozenLinear {
    fn new(w0: Matrix) -> Self {
        Self {
            w0,
            quantized: None,
            dequantized: None,
        }
    }

    pub fn w0(&self) -> &Matrix {
        &self.w0
    }

    pub fn quantized(&self) -> Option<&QuantizedBlocks> {
        self.quantized.as_ref()
    }

    /// The weight the forward pass multiplies by.
    pub fn weight(&self) -> &Matrix {
        self.dequantized.as_ref().unwrap_or(&self.w0)
    }

    fn quantize(&mut self, block_size: usize) -> Result<()> {
        let q = QuantizedBlocks::quantize(&self.w0, block_size)?;
        self.dequantized = Some(q.dequantize());
        self.quantized = Some(q);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct LayerWeights {
    ln1_gain: Matrix,
    ln1_bias: Matrix,
    q: FrozenLinear,
    k: FrozenLinear,
    v: FrozenLinear,
    o: FrozenLinear,
    ln2_gain: Matrix,
    ln2_bias: Matrix,
    gate: FrozenLinear,
    up: FrozenLinear,
    down: FrozenLinear,
}

impl LayerWeights {
    fn linear(&self, kind: SiteKind) -> &FrozenLinear {
        match kind {
            SiteKind::Q => &self.q,
            SiteKind::K => &self.k,
            SiteKind::V => &self.v,
            SiteKind::O => &self.o,
            SiteKind::Gate => &self.gate,
            SiteKind::Up => &self.up,
            SiteKind::Down => &self.down,
            SiteKind::LmHead => unreachable!("lm_head is not a layer projection"),
        }
    }

    fn linear_mut(&mut self, kind: SiteKind) -> &mut FrozenLinear {
        match kind {
            SiteKind::Q => &mut self.q,
            SiteKind::K => &mut self.k,
            SiteKind::V => &mut self.v,
            SiteKind::O => &mut self.o,
            SiteKind::Gate => &mut self.gate,
            SiteKind::Up => &mut self.up,
            SiteKind::Down => &mut self.down,
            SiteKind::LmHead => unreachable!("lm_head is not a layer projection"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct HostModel {
    config: HostConfig,
    tok_emb: Matrix,
    pos_emb: Matrix,
    layers: Vec<LayerWeights>,
    lnf_gain: Matrix,
    lnf_bias: Matrix,
    lm_head: FrozenLinear,
    registry: BTreeMap<AttachmentSite, ComposedSite>,
}

/// Per-forward instrumentation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ForwardStats {
    /// Low-rank applications performed: N per output-composed site, 1 per weight-merged site.
    pub delta_applications: usize,
}

/// Result of recording one sequence on a tape.
#[derive(Debug)]
pub struct Trace {
    pub logits: Var,
    /// Residual stream after the embeddings and after each layer.
    pub residuals: Vec<Var>,
    pub stats: ForwardStats,
}

/// Host weights recorded on a tape.
#[derive(Debug)]
pub struct HostBindings {
    tok_emb: Var,
    pos_emb: Var,
    ln: Vec<(Var, Var, Var, Var)>,
    lnf: (Var, Var),
    linears: BTreeMap<AttachmentSite, Var>,
    /// Every host tensor by canonical name, in [`HostModel::named_tensors`] order.
    pub named: Vec<(String, Var)>,
}

/// One adapter's factors recorded on a tape.
#[derive(Debug, Clone)]
pub struct AdapterVars {
    pub site: AttachmentSite,
    pub name: String,
    pub a: Var,
    pub b: Var,
}

#[derive(Debug)]
enum SiteBinding {
    Outputs {
        average: bool,
        members: Vec<(Var, Var, f64, f64)>,
    },
    Factors {
        a: Var,
        bt: Var,
        scale: f64,
        dropout_p: f64,
    },
    Products {
        w: Var,
        scale: f64,
        dropout_p: f64,
    },
}

/// Registry adapters recorded on a tape.
#[derive(Debug, Default)]
pub struct AdapterBindings {
    sites: BTreeMap<AttachmentSite, SiteBinding>,
    pub vars: Vec<AdapterVars>,
}

/// Next-token selection rule for [`HostModel::generate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decoding {
    Greedy,
    Sample { temperature: f64, seed: u64 },
}

impl HostModel {
    /// Deterministic random frozen weights from `config.seed`; empty registry.
    pub fn build(config: HostConfig) -> Result<Self> {
        config.validate()?;
        let mut prng = Prng::new(config.seed);
        let (d, ff, vocab) = (config.d_model, config.d_ff, config.vocab_size);
        let mut linear = |rows: usize, cols: usize| -> Result<FrozenLinear> {
            Ok(FrozenLinear::new(kaiming_uniform_init(rows, cols, cols, &mut prng)?))
        };
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            layers.push(LayerWeights {
                ln1_gain: Matrix::filled(d, 1, 1.0),
                ln1_bias: Matrix::zeros(d, 1),
                q: linear(d, d)?,
                k: linear(d, d)?,
                v: linear(d, d)?,
                o: linear(d, d)?,
                ln2_gain: Matrix::filled(d, 1, 1.0),
                ln2_bias: Matrix::zeros(d, 1),
                gate: linear(ff, d)?,
                up: linear(ff, d)?,
                down: linear(d, ff)?,
            });
        }
        let lm_head = linear(vocab, d)?;
        let tok_emb = kaiming_uniform_init(d, vocab, 1, &mut prng)?;
        let pos_emb = kaiming_uniform_init(d, config.max_seq, 1, &mut prng)?;
        Ok(Self {
            tok_emb,
            pos_emb,
            layers,
            lnf_gain: Matrix::filled(d, 1, 1.0),
            lnf_bias: Matrix::zeros(d, 1),
            lm_head,
            registry: BTreeMap::new(),
            config,
        })
    }

    pub fn config(&self) -> &HostConfig {
        &self.config
    }

    /// Every attachment site of this host: 7 per layer plus the LM head.
    pub fn sites(&self) -> Vec<AttachmentSite> {
        self.config.sites()
    }

    pub fn has_site(&self, site: AttachmentSite) -> bool {
        match site.kind {
            SiteKind::LmHead => site.layer == self.config.n_layers,
            _ => site.layer < self.config.n_layers,
        }
    }

    /// `(d_out, d_in)` of the frozen projection at `site`.
    pub fn site_dims(&self, site: AttachmentSite) -> Result<(usize, usize)> {
        Ok(self.frozen(site)?.w0().shape())
    }

    pub fn frozen(&self, site: AttachmentSite) -> Result<&FrozenLinear> {
        if !self.has_site(site) {
            return Err(Error::UnknownSite(site.to_string()));
        }
        Ok(match site.kind {
            SiteKind::LmHead => &self.lm_head,
            kind => self.layers[site.layer].linear(kind),
        })
    }

    /// All frozen tensors with canonical names, original (unquantized) values.
    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out: Vec<(String, &Matrix)> = vec![
            ("tok_emb".into(), &self.tok_emb),
            ("pos_emb".into(), &self.pos_emb),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.ln1_gain"), &layer.ln1_gain));
            out.push((format!("layer{l}.ln1_bias"), &layer.ln1_bias));
            out.push((format!("layer{l}.ln2_gain"), &layer.ln2_gain));
            out.push((format!("layer{l}.ln2_bias"), &layer.ln2_bias));
            for kind in SiteKind::LAYER_KINDS {
                out.push((AttachmentSite::new(l, kind).to_string(), layer.linear(kind).w0()));
            }
        }
        out.push(("lnf_gain".into(), &self.lnf_gain));
        out.push(("lnf_bias".into(), &self.lnf_bias));
        out.push(("lm_head".into(), self.lm_head.w0()));
        out
    }

    fn named_tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = vec![&mut self.tok_emb, &mut self.pos_emb];
        for layer in &mut self.layers {
            let LayerWeights {
                ln1_gain,
                ln1_bias,
                q,
                k,
                v,
                o,
                ln2_gain,
                ln2_bias,
                gate,
                up,
                down,
            } = layer;
            out.extend([ln1_gain, ln1_bias, ln2_gain, ln2_bias]);
            out.extend([q, k, v, o, gate, up, down].map(|f| &mut f.w0));
        }
        out.push(&mut self.lnf_gain);
        out.push(&mut self.lnf_bias);
        out.push(&mut self.lm_head.w0);
        out
    }

    /// Replaces one named tensor. Not allowed once the host is quantized.
    pub fn set_tensor(&mut self, name: &str, value: Matrix) -> Result<()> {
        if self.quantization_block_size().is_some() {
            return Err(Error::InvalidArgument("cannot edit a quantized host".into()));
        }
        let names: Vec<String> = self.named_tensors().into_iter().map(|(n, _)| n).collect();
        let idx = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no host tensor named {name:?}")))?;
        let slot = self.named_tensors_mut().swap_remove(idx);
        if slot.shape() != value.shape() {
            return Err(Error::Shape {
                op: "set_tensor",
                left: slot.shape(),
                right: value.shape(),
            });
        }
        *slot = value;
        Ok(())
    }

    /// SHA-256 over every frozen tensor's bytes, hex encoded.
    pub fn frozen_digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, m) in self.named_tensors() {
            h.update(name.as_bytes());
            for v in m.as_slice() {
                h.update(v.to_le_bytes());
            }
        }
        for site in self.sites() {
            if let Some(q) = self.frozen(site).ok().and_then(|f| f.dequantized.as_ref()) {
                for v in q.as_slice() {
                    h.update(v.to_le_bytes());
                }
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Stores every projection weight as 4-bit blocks; forward then uses the dequantized values.
    pub fn quantize_frozen(&mut self, block_size: usize) -> Result<()> {
        for layer in &mut self.layers {
            for kind in SiteKind::LAYER_KINDS {
                layer.linear_mut(kind).quantize(block_size)?;
            }
        }
        self.lm_head.quantize(block_size)
    }

    pub fn quantization_block_size(&self) -> Option<usize> {
        self.lm_head.quantized().map(|q| q.block_size())
    }

    // ---- registry ----

    pub fn registry(&self) -> &BTreeMap<AttachmentSite, ComposedSite> {
        &self.registry
    }

    pub fn adapters_at(&self, site: AttachmentSite) -> &[LowRankAdapter] {
        self.registry.get(&site).map_or(&[], |c| c.adapters.as_slice())
    }

    pub fn attach(&mut self, site: AttachmentSite, adapter: LowRankAdapter) -> Result<()> {
        let dims = self.site_dims(site)?;
        if adapter.site() != site {
            return Err(Error::InvalidArgument(format!(
                "adapter {:?} targets {} but was attached at {site}",
                adapter.name(),
                adapter.site()
            )));
        }
        if (adapter.d_out(), adapter.d_in()) != dims {
            return Err(Error::Shape {
                op: "attach",
                left: dims,
                right: (adapter.d_out(), adapter.d_in()),
            });
        }
        let entry = self
            .registry
            .entry(site)
            .or_insert_with(|| ComposedSite::new(site, CompositionStrategy::default()));
        if entry.adapters.iter().any(|a| a.name() == adapter.name()) {
            return Err(Error::DuplicateAdapter {
                name: adapter.name().to_string(),
                site: site.to_string(),
            });
        }
        entry.adapters.push(adapter);
        if let Err(e) = entry.validate() {
            entry.adapters.pop();
            if entry.adapters.is_empty() {
                self.registry.remove(&site);
            }
            return Err(e);
        }
        Ok(())
    }

    pub fn set_strategy(&mut self, site: AttachmentSite, strategy: CompositionStrategy) -> Result<()> {
        self.site_dims(site)?;
        let entry = self
            .registry
            .entry(site)
            .or_insert_with(|| ComposedSite::new(site, strategy));
        let previous = entry.strategy;
        entry.strategy = strategy;
        if !entry.adapters.is_empty() {
            if let Err(e) = entry.validate() {
                entry.strategy = previous;
                return Err(e);
            }
        }
        Ok(())
    }

    /// Applies one strategy at every site.
    pub fn set_strategy_all(&mut self, strategy: CompositionStrategy) -> Result<()> {
        for site in self.sites() {
            self.set_strategy(site, strategy)?;
        }
        Ok(())
    }

    pub fn detach(&mut self, site: AttachmentSite, name: &str) -> Result<LowRankAdapter> {
        let missing = || Error::MissingAdapter {
            name: name.to_string(),
            site: site.to_string(),
        };
        if !self.has_site(site) {
            return Err(Error::UnknownSite(site.to_string()));
        }
        let entry = self.registry.get_mut(&site).ok_or_else(missing)?;
        let idx = entry.adapters.iter().position(|a| a.name() == name).ok_or_else(missing)?;
        let adapter = entry.adapters.remove(idx);
        if entry.adapters.is_empty() {
            self.registry.remove(&site);
        }
        Ok(adapter)
    }

    /// Removes every adapter and strategy, returning the adapters in site order.
    pub fn detach_all(&mut self) -> Vec<LowRankAdapter> {
        std::mem::take(&mut self.registry)
            .into_values()
            .flat_map(|c| c.adapters)
            .collect()
    }

    pub fn adapter_mut(&mut self, site: AttachmentSite, name: &str) -> Result<&mut LowRankAdapter> {
        self.registry
            .get_mut(&site)
            .and_then(|c| c.adapters.iter_mut().find(|a| a.name() == name))
            .ok_or_else(|| Error::MissingAdapter {
                name: name.to_string(),
                site: site.to_string(),
            })
    }

    // ---- tape recording ----

    /// Records the frozen weights on `tape`, as parameters when `trainable`.
    pub fn bind_weights(&self, tape: &mut GradientTape, trainable: bool) -> HostBindings {
        let mut bind = |m: &Matrix| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        };
        let mut named = Vec::new();
        let tok_emb = bind(&self.tok_emb);
        let pos_emb = bind(&self.pos_emb);
        named.push(("tok_emb".to_string(), tok_emb));
        named.push(("pos_emb".to_string(), pos_emb));
        let mut ln = Vec::new();
        let mut linears = BTreeMap::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let norms = (
                bind(&layer.ln1_gain),
                bind(&layer.ln1_bias),
                bind(&layer.ln2_gain),
                bind(&layer.ln2_bias),
            );
            named.push((format!("layer{l}.ln1_gain"), norms.0));
            named.push((format!("layer{l}.ln1_bias"), norms.1));
            named.push((format!("layer{l}.ln2_gain"), norms.2));
            named.push((format!("layer{l}.ln2_bias"), norms.3));
            ln.push(norms);
            for kind in SiteKind::LAYER_KINDS {
                let site = AttachmentSite::new(l, kind);
                let v = bind(layer.linear(kind).weight());
                named.push((site.to_string(), v));
                linears.insert(site, v);
            }
        }
        let lnf = (bind(&self.lnf_gain), bind(&self.lnf_bias));
        named.push(("lnf_gain".to_string(), lnf.0));
        named.push(("lnf_bias".to_string(), lnf.1));
        let head = bind(self.lm_head.weight());
        named.push(("lm_head".to_string(), head));
        linears.insert(AttachmentSite::lm_head(self.config.n_layers), head);
        HostBindings {
            tok_emb,
            pos_emb,
            ln,
            lnf,
            linears,
            named,
        }
    }

    /// Records every registry adapter on `tape`, as parameters when `trainable`.
    /// Weight-merging strategies record the merge itself, so gradients reach each member.
    pub fn bind_adapters(&self, tape: &mut GradientTape, trainable: bool) -> Result<AdapterBindings> {
        let mut out = AdapterBindings::default();
        for (site, composed) in &self.registry {
            if composed.adapters.is_empty() {
                continue;
            }
            composed.validate()?;
            let mut members = Vec::new();
            for ad in &composed.adapters {
                let (a, b) = if trainable {
                    (tape.param(ad.a().clone()), tape.param(ad.b().clone()))
                } else {
                    (tape.constant(ad.a().clone()), tape.constant(ad.b().clone()))
                };
                out.vars.push(AdapterVars {
                    site: *site,
                    name: ad.name().to_string(),
                    a,
                    b,
                });
                let bt = tape.transpose(b)?;
                members.push((a, bt, ad.scale(), ad.dropout_p()));
            }
            let n = members.len() as f64;
            let first = &composed.adapters[0];
            let binding = match composed.strategy {
                CompositionStrategy::OutputSum | CompositionStrategy::OutputAverage => SiteBinding::Outputs {
                    average: composed.strategy == CompositionStrategy::OutputAverage,
                    members,
                },
                CompositionStrategy::WeightAverageFactors => {
                    let (mut a_sum, mut bt_sum) = (members[0].0, members[0].1);
                    for m in &members[1..] {
                        a_sum = tape.add(a_sum, m.0)?;
                        bt_sum = tape.add(bt_sum, m.1)?;
                    }
                    SiteBinding::Factors {
                        a: tape.scale(a_sum, 1.0 / n)?,
                        bt: tape.scale(bt_sum, 1.0 / n)?,
                        scale: first.scale(),
                        dropout_p: first.dropout_p(),
                    }
                }
                CompositionStrategy::WeightAverageProducts => {
                    let mut w_sum = tape.matmul(members[0].0, members[0].1)?;
                    for m in &members[1..] {
                        let prod = tape.matmul(m.0, m.1)?;
                        w_sum = tape.add(w_sum, prod)?;
                    }
                    SiteBinding::Products {
                        w: tape.scale(w_sum, 1.0 / n)?,
                        scale: first.scale(),
                        dropout_p: first.dropout_p(),
                    }
                }
            };
            out.sites.insert(*site, binding);
        }
        Ok(out)
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        if tokens.len() > self.config.max_seq {
            return Err(Error::SequenceTooLong {
                len: tokens.len(),
                max: self.config.max_seq,
            });
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                token: t,
                vocab: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn dropped(
        tape: &mut GradientTape,
        x: Var,
        p: f64,
        dropout: &mut Option<&mut Prng>,
    ) -> Result<Var> {
        match dropout {
            Some(prng) if p > 0.0 => {
                let (r, c) = tape.value(x).shape();
                let mask = tape.constant(dropout_mask(r, c, p, prng));
                tape.hadamard(x, mask)
            }
            _ => Ok(x),
        }
    }

    /// `W0 x` plus the composed adapter contribution at `site`.
    fn project(
        &self,
        tape: &mut GradientTape,
        weights: &HostBindings,
        adapters: &AdapterBindings,
        site: AttachmentSite,
        x: Var,
        dropout: &mut Option<&mut Prng>,
        stats: &mut ForwardStats,
    ) -> Result<Var> {
        let base = tape.matmul(weights.linears[&site], x)?;
        let Some(binding) = adapters.sites.get(&site) else {
            return Ok(base);
        };
        let delta = match binding {
            SiteBinding::Outputs { average, members } => {
                let mut total: Option<Var> = None;
                for &(a, bt, scale, p) in members {
                    let xin = Self::dropped(tape, x, p, dropout)?;
                    let down = tape.matmul(bt, xin)?;
                    let up = tape.matmul(a, down)?;
                    let scaled = tape.scale(up, scale)?;
                    stats.delta_applications += 1;
                    total = Some(match total {
                        Some(t) => tape.add(t, scaled)?,
                        None => scaled,
                    });
                }
                let total = total.expect("bound sites are non-empty");
                if *average {
                    tape.scale(total, 1.0 / members.len() as f64)?
                } else {
                    total
                }
            }
            SiteBinding::Factors {
                a,
                bt,
                scale,
                dropout_p,
            } => {
                let xin = Self::dropped(tape, x, *dropout_p, dropout)?;
                let down = tape.matmul(*bt, xin)?;
                let up = tape.matmul(*a, down)?;
                stats.delta_applications += 1;
                tape.scale(up, *scale)?
            }
            SiteBinding::Products { w, scale, dropout_p } => {
                let xin = Self::dropped(tape, x, *dropout_p, dropout)?;
                let out = tape.matmul(*w, xin)?;
                stats.delta_applications += 1;
                tape.scale(out, *scale)?
            }
        };
        tape.add(base, delta)
    }

    /// Records the forward pass for one token sequence.
    pub fn trace(
        &self,
        tape: &mut GradientTape,
        weights: &HostBindings,
        adapters: &AdapterBindings,
        tokens: &[TokenId],
        mut dropout: Option<&mut Prng>,
    ) -> Result<Trace> {
        self.check_tokens(tokens)?;
        let cfg = &self.config;
        let t = tokens.len();
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..t).collect();
        let mut stats = ForwardStats::default();

        let tok = tape.embedding(weights.tok_emb, &ids)?;
        let pos = tape.embedding(weights.pos_emb, &positions)?;
        let mut x = tape.add(tok, pos)?;
        let mut residuals = vec![x];
        let head_dim = cfg.head_dim();
        let attn_scale = 1.0 / (head_dim as f64).sqrt();

        for l in 0..cfg.n_layers {
            let (g1, b1, g2, b2) = weights.ln[l];
            let site = |kind| AttachmentSite::new(l, kind);
            let h = tape.layer_norm(x, g1, b1)?;
            let q = self.project(tape, weights, adapters, site(SiteKind::Q), h, &mut dropout, &mut stats)?;
            let k = self.project(tape, weights, adapters, site(SiteKind::K), h, &mut dropout, &mut stats)?;
            let v = self.project(tape, weights, adapters, site(SiteKind::V), h, &mut dropout, &mut stats)?;
            let mut heads = Vec::with_capacity(cfg.n_heads);
            for head in 0..cfg.n_heads {
                let qh = tape.slice_rows(q, head * head_dim, head_dim)?;
                let kh = tape.slice_rows(k, head * head_dim, head_dim)?;
                let vh = tape.slice_rows(v, head * head_dim, head_dim)?;
                let qt = tape.transpose(qh)?;
                let scores = tape.matmul(qt, kh)?;
                let scores = tape.scale(scores, attn_scale)?;
                let probs = tape.row_softmax(scores, true)?;
                let pt = tape.transpose(probs)?;
                heads.push(tape.matmul(vh, pt)?);
            }
            let attn = tape.concat_rows(&heads)?;
            let o = self.project(tape, weights, adapters, site(SiteKind::O), attn, &mut dropout, &mut stats)?;
            x = tape.add(x, o)?;

            let h = tape.layer_norm(x, g2, b2)?;
            let gate = self.project(tape, weights, adapters, site(SiteKind::Gate), h, &mut dropout, &mut stats)?;
            let up = self.project(tape, weights, adapters, site(SiteKind::Up), h, &mut dropout, &mut stats)?;
            let act = tape.silu(gate)?;
            let mixed = tape.hadamard(act, up)?;
            let down = self.project(tape, weights, adapters, site(SiteKind::Down), mixed, &mut dropout, &mut stats)?;
            x = tape.add(x, down)?;
            residuals.push(x);
        }

        let h = tape.layer_norm(x, weights.lnf.0, weights.lnf.1)?;
        let head_site = AttachmentSite::lm_head(cfg.n_layers);
        let logits = self.project(tape, weights, adapters, head_site, h, &mut dropout, &mut stats)?;
        Ok(Trace {
            logits,
            residuals,
            stats,
        })
    }

    /// Logits (`vocab × positions`) with the current registry, no dropout.
    pub fn forward(&self, tokens: &[TokenId]) -> Result<Matrix> {
        Ok(self.forward_with_stats(tokens)?.0)
    }

    pub fn forward_with_stats(&self, tokens: &[TokenId]) -> Result<(Matrix, ForwardStats)> {
        let mut tape = GradientTape::new();
        let weights = self.bind_weights(&mut tape, false);
        let adapters = self.bind_adapters(&mut tape, false)?;
        let trace = self.trace(&mut tape, &weights, &adapters, tokens, None)?;
        Ok((tape.value(trace.logits).clone(), trace.stats))
    }

    /// Residual stream snapshots: after the embeddings, then after each layer.
    pub fn residuals(&self, tokens: &[TokenId]) -> Result<Vec<Matrix>> {
        let mut tape = GradientTape::new();
        let weights = self.bind_weights(&mut tape, false);
        let adapters = self.bind_adapters(&mut tape, false)?;
        let trace = self.trace(&mut tape, &weights, &adapters, tokens, None)?;
        Ok(trace.residuals.iter().map(|&v| tape.value(v).clone()).collect())
    }

    /// Extends `prompt` one token at a time. The continuation stops after `max_new`
    /// tokens, after emitting `stop_token`, or when the context reaches `max_seq`.
    pub fn generate(
        &self,
        prompt: &[TokenId],
        max_new: usize,
        stop_token: Option<TokenId>,
        decoding: Decoding,
    ) -> Result<Vec<TokenId>> {
        self.check_tokens(prompt)?;
        let mut prng = match decoding {
            Decoding::Sample { temperature, seed } => {
                if !(temperature > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "temperature must be positive, got {temperature}"
                    )));
                }
                Some(Prng::new(seed))
            }
            Decoding::Greedy => None,
        };
        let mut context = prompt.to_vec();
        let mut out = Vec::new();
        while out.len() < max_new && context.len() < self.config.max_seq {
            let logits = self.forward(&context)?;
            let last = logits.col_vec(logits.cols() - 1);
            let next = match (decoding, prng.as_mut()) {
                (Decoding::Sample { temperature, .. }, Some(p)) => sample(&last, temperature, p),
                _ => argmax(&last),
            } as TokenId;
            out.push(next);
            context.push(next);
            if Some(next) == stop_token {
                break;
            }
        }
        Ok(out)
    }

    /// Natural-log probability of `tokens[1..]` given the prefix before each.
    pub fn sequence_log_prob(&self, tokens: &[TokenId]) -> Result<f64> {
        let logits = self.forward(tokens)?;
        let mut total = 0.0;
        for (pos, &next) in tokens.iter().enumerate().skip(1) {
            let col = logits.col_vec(pos - 1);
            total += log_softmax_at(&col, next as usize);
        }
        Ok(total)
    }

    pub(crate) fn from_parts(config: HostConfig, tensors: Vec<Matrix>, block_size: Option<usize>) -> Result<Self> {
        let mut host = HostModel::build(config)?;
        {
            let slots = host.named_tensors_mut();
            if slots.len() != tensors.len() {
                return Err(Error::Malformed(format!(
                    "expected {} tensors, found {}",
                    slots.len(),
                    tensors.len()
                )));
            }
            for (slot, t) in slots.into_iter().zip(tensors) {
                if slot.shape() != t.shape() {
                    return Err(Error::Shape {
                        op: "host checkpoint",
                        left: slot.shape(),
                        right: t.shape(),
                    });
                }
                *slot = t;
            }
        }
        if let Some(bs) = block_size {
            host.quantize_frozen(bs)?;
        }
        Ok(host)
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn sample(logits: &[f64], temperature: f64, prng: &mut Prng) -> usize {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|&l| ((l - max) / temperature).exp()).collect();
    prng.weighted_index(&weights)
}

pub(crate) fn log_softmax_at(logits: &[f64], index: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits[index] - lse
}

//! Shared helpers for the integration tests: an independent dense re-implementation
//! of the host forward pass, written position-major (`T × d`) without the tape.
#![allow(dead_code)]

use std::collections::HashMap;

use lrcompose::compose::CompositionStrategy;
use lrcompose::host::{HostConfig, HostModel};
use lrcompose::numeric::{Matrix, Prng};
use lrcompose::{AttachmentSite, SiteKind};

pub fn tiny_config() -> HostConfig {
    HostConfig {
        n_layers: 2,
        d_model: 16,
        n_heads: 2,
        d_ff: 24,
        vocab_size: 20,
        max_seq: 12,
        seed: 17,
    }
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, prng: &mut Prng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| prng.uniform_open(-scale, scale))
}

/// Effective dense update at a site, computed straight from the factor definitions.
pub fn dense_delta(host: &HostModel, site: AttachmentSite) -> Option<Matrix> {
    let composed = host.registry().get(&site)?;
    let ads = &composed.adapters;
    if ads.is_empty() {
        return None;
    }
    let n = ads.len() as f64;
    let (d_out, d_in) = (ads[0].d_out(), ads[0].d_in());
    let mut out = Matrix::zeros(d_out, d_in);
    match composed.strategy {
        CompositionStrategy::OutputSum | CompositionStrategy::OutputAverage => {
            let div = if composed.strategy == CompositionStrategy::OutputAverage { n } else { 1.0 };
            for a in ads {
                for i in 0..d_out {
                    for j in 0..d_in {
                        let mut s = 0.0;
                        for k in 0..a.rank() {
                            s += a.a().get(i, k) * a.b().get(j, k);
                        }
                        out.set(i, j, out.get(i, j) + a.alpha() / a.rank() as f64 * s / div);
                    }
                }
            }
        }
        CompositionStrategy::WeightAverageFactors => {
            let r = ads[0].rank();
            let scale = ads[0].alpha() / r as f64;
            for i in 0..d_out {
                for j in 0..d_in {
                    let mut s = 0.0;
                    for k in 0..r {
                        let am: f64 = ads.iter().map(|a| a.a().get(i, k)).sum::<f64>() / n;
                        let bm: f64 = ads.iter().map(|a| a.b().get(j, k)).sum::<f64>() / n;
                        s += am * bm;
                    }
                    out.set(i, j, scale * s);
                }
            }
        }
        CompositionStrategy::WeightAverageProducts => {
            let r = ads[0].rank();
            let scale = ads[0].alpha() / r as f64;
            for a in ads {
                for i in 0..d_out {
                    for j in 0..d_in {
                        let s: f64 = (0..r).map(|k| a.a().get(i, k) * a.b().get(j, k)).sum();
                        out.set(i, j, out.get(i, j) + scale * s / n);
                    }
                }
            }
        }
    }
    Some(out)
}

fn effective(host: &HostModel, site: AttachmentSite) -> Matrix {
    let w = host.frozen(site).unwrap().weight().clone();
    match dense_delta(host, site) {
        Some(d) => w.add(&d).unwrap(),
        None => w,
    }
}

/// `x` is `T × d_in`; returns `x Wᵀ`.
fn apply(x: &[Vec<f64>], w: &Matrix) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            (0..w.rows())
                .map(|i| (0..w.cols()).map(|j| w.get(i, j) * row[j]).sum())
                .collect()
        })
        .collect()
}

fn layer_norm(x: &[Vec<f64>], g: &Matrix, b: &Matrix) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let inv = 1.0 / (var + 1e-5).sqrt();
            row.iter()
                .enumerate()
                .map(|(i, v)| (v - mean) * inv * g.get(i, 0) + b.get(i, 0))
                .collect()
        })
        .collect()
}

/// Logits as `T × vocab`, computed position-major with explicit loops.
pub fn reference_logits(host: &HostModel, tokens: &[u32]) -> Vec<Vec<f64>> {
    let cfg = host.config().clone();
    let named: HashMap<String, Matrix> = host
        .named_tensors()
        .into_iter()
        .map(|(n, m)| (n, m.clone()))
        .collect();
    let t_len = tokens.len();
    let mut x: Vec<Vec<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(p, &tok)| {
            (0..cfg.d_model)
                .map(|r| named["tok_emb"].get(r, tok as usize) + named["pos_emb"].get(r, p))
                .collect()
        })
        .collect();
    let hd = cfg.d_model / cfg.n_heads;
    for l in 0..cfg.n_layers {
        let w = |k| effective(host, AttachmentSite::new(l, k));
        let h = layer_norm(&x, &named[&format!("layer{l}.ln1_gain")], &named[&format!("layer{l}.ln1_bias")]);
        let (q, k, v) = (apply(&h, &w(SiteKind::Q)), apply(&h, &w(SiteKind::K)), apply(&h, &w(SiteKind::V)));
        let mut attn = vec![vec![0.0; cfg.d_model]; t_len];
        for head in 0..cfg.n_heads {
            let off = head * hd;
            for i in 0..t_len {
                let scores: Vec<f64> = (0..=i)
                    .map(|j| (0..hd).map(|c| q[i][off + c] * k[j][off + c]).sum::<f64>() / (hd as f64).sqrt())
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in 0..hd {
                    attn[i][off + c] = (0..=i).map(|j| e[j] / z * v[j][off + c]).sum();
                }
            }
        }
        let o = apply(&attn, &w(SiteKind::O));
        for (xr, orow) in x.iter_mut().zip(&o) {
            for (a, b) in xr.iter_mut().zip(orow) {
                *a += b;
            }
        }
        let h = layer_norm(&x, &named[&format!("layer{l}.ln2_gain")], &named[&format!("layer{l}.ln2_bias")]);
        let gate = apply(&h, &w(SiteKind::Gate));
        let up = apply(&h, &w(SiteKind::Up));
        let mixed: Vec<Vec<f64>> = gate
            .iter()
            .zip(&up)
            .map(|(g, u)| g.iter().zip(u).map(|(g, u)| g / (1.0 + (-g).exp()) * u).collect())
            .collect();
        let down = apply(&mixed, &w(SiteKind::Down));
        for (xr, drow) in x.iter_mut().zip(&down) {
            for (a, b) in xr.iter_mut().zip(drow) {
                *a += b;
            }
        }
    }
    let h = layer_norm(&x, &named["lnf_gain"], &named["lnf_bias"]);
    apply(&h, &effective(host, AttachmentSite::lm_head(cfg.n_layers)))
}

/// Largest absolute difference between tape logits (`vocab × T`) and reference (`T × vocab`).
pub fn logits_gap(tape: &Matrix, reference: &[Vec<f64>]) -> f64 {
    let mut gap: f64 = 0.0;
    for (p, row) in reference.iter().enumerate() {
        for (v, &r) in row.iter().enumerate() {
            gap = gap.max((tape.get(v, p) - r).abs());
        }
    }
    gap
}

use lrcompose::numeric::GradientTape;

/// Next-token cross entropy of `tokens` under the current host and registry.
pub fn sequence_loss(host: &HostModel, tokens: &[u32]) -> f64 {
    let logits = reference_logits(host, tokens);
    let mut total = 0.0;
    for p in 0..tokens.len() - 1 {
        let row = &logits[p];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[tokens[p + 1] as usize];
    }
    total / (tokens.len() - 1) as f64
}

/// Tape gradients of [`sequence_loss`]: host tensors by name, then adapters as `(site, name, dA, dB)`.
pub fn tape_gradients(
    host: &HostModel,
    tokens: &[u32],
) -> (HashMap<String, Matrix>, Vec<(AttachmentSite, String, Matrix, Matrix)>, f64) {
    let mut tape = GradientTape::new();
    let weights = host.bind_weights(&mut tape, true);
    let adapters = host.bind_adapters(&mut tape, true).unwrap();
    let trace = host.trace(&mut tape, &weights, &adapters, tokens, None).unwrap();
    let targets: Vec<Option<usize>> = (0..tokens.len())
        .map(|p| tokens.get(p + 1).map(|&t| t as usize))
        .collect();
    let loss = tape.cross_entropy(trace.logits, &targets).unwrap();
    let value = tape.value(loss).get(0, 0);
    let mut grads = tape.backward(loss).unwrap();
    let host_grads = weights
        .named
        .iter()
        .map(|(n, v)| (n.clone(), grads.take(*v).unwrap()))
        .collect();
    let adapter_grads = adapters
        .vars
        .iter()
        .map(|av| (av.site, av.name.clone(), grads.take(av.a).unwrap(), grads.take(av.b).unwrap()))
        .collect();
    (host_grads, adapter_grads, value)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// A single-attribute sentiment source with `long` items of 10–20 words and
/// `short` items of 3–9 words per split.
pub fn mixed_source(
    name: &str,
    long: lrcompose::data::SplitSizes,
    short: lrcompose::data::SplitSizes,
    seed: u64,
) -> lrcompose::data::LabeledDataset {
    use lrcompose::data::{gen_synthetic_splits, SynthSpec, Vocab};
    let v = Vocab::standard();
    let mut spec = SynthSpec::standard(&v, name, "sentiment", &["positive", "negative"], v.fillers().to_vec()).unwrap();
    spec.min_words = 10;
    spec.max_words = 20;
    let mut ds = gen_synthetic_splits(&spec, long, seed).unwrap();
    spec.min_words = 3;
    spec.max_words = 9;
    let s = gen_synthetic_splits(&spec, short, seed ^ 0x5151).unwrap();
    ds.train.extend(s.train);
    ds.validation.extend(s.validation);
    ds.test.extend(s.test);
    ds
}

pub fn sizes(train: usize, validation: usize, test: usize) -> lrcompose::data::SplitSizes {
    lrcompose::data::SplitSizes { train, validation, test }
}

/// A seconds-scale study: one-layer host, LM-head adapters, `m` sentiment sources.
pub fn tiny_study(m: usize) -> lrcompose::study::StudyConfig {
    use lrcompose::study::{FamilyConfig, SourceConfig, StudyConfig};
    let mut cfg = StudyConfig::default();
    cfg.host = HostConfig {
        n_layers: 1,
        d_model: 16,
        n_heads: 2,
        d_ff: 24,
        vocab_size: 128,
        max_seq: 64,
        seed: 5,
    };
    cfg.sites = vec!["lm_head".into()];
    cfg.seeds = vec![1, 2];
    cfg.eval_limit = 8;
    cfg.ood_leads = 2;
    cfg.max_new_tokens = 6;
    cfg.train.epochs = 2;
    cfg.train.r = 2;
    cfg.train.alpha = 4.0;
    cfg.train.validation_limit = 4;
    cfg.train.max_new_tokens = 6;
    cfg.multi_attribute = false;
    let width = 60 / m;
    cfg.family = vec![FamilyConfig {
        attribute: "sentiment".into(),
        labels: vec!["positive".into(), "negative".into()],
        source: (0..m)
            .map(|i| SourceConfig::new(&format!("s{}", i + 1), 60 + 10 * i, [i * width, (i + 1) * width]))
            .collect(),
    }];
    cfg
}

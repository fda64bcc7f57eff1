use lrcompose::adapter;
use lrcompose::data::{gen_synthetic, prompt_pairs, PromptExample, SynthSpec, Vocab};
use lrcompose::host::{HostConfig, HostModel};
use lrcompose::metrics::OracleClassifier;
use lrcompose::numeric::{Matrix, Prng};
use lrcompose::trainer::*;
use lrcompose::{AttachmentSite, Error, SiteKind};
use proptest::prelude::*;

fn small_host() -> HostModel {
    HostModel::build(HostConfig {
        n_layers: 1,
        d_model: 16,
        n_heads: 2,
        d_ff: 24,
        vocab_size: 128,
        max_seq: 40,
        seed: 5,
    })
    .unwrap()
}

struct Task {
    vocab: Vocab,
    train: Vec<PromptExample>,
    validation: Vec<PromptExample>,
    ensemble: Vec<OracleClassifier>,
}

fn task() -> Task {
    let vocab = Vocab::standard();
    let mut spec = SynthSpec::standard(&vocab, "t", "sentiment", &["positive", "negative"], vocab.fillers().to_vec()).unwrap();
    spec.min_words = 10;
    spec.max_words = 14;
    spec.marker_density = 0.7;
    let ds = gen_synthetic(&spec, 100, 3).unwrap();
    let lex: Vec<(String, Vec<u32>)> = spec.labels.clone();
    Task {
        train: prompt_pairs(&vocab, &ds.schema, &ds.train, 1).unwrap(),
        validation: prompt_pairs(&vocab, &ds.schema, &ds.validation, 2).unwrap(),
        ensemble: OracleClassifier::ensemble("sentiment", &lex).unwrap(),
        vocab,
    }
}

fn sites() -> Vec<AttachmentSite> {
    vec![AttachmentSite::new(0, SiteKind::V), AttachmentSite::lm_head(1)]
}

fn cfg(lr: f64) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        epochs: 2,
        batch_size: 8,
        validation_limit: 6,
        max_new_tokens: 6,
        ..TrainConfig::default()
    }
}

fn train(host: &mut HostModel, t: &Task, c: &TrainConfig) -> TrainOutcome {
    let special = |tok: u32| tok < 7;
    let spec = ValidationSpec {
        prompts: &t.validation,
        ensemble: &t.ensemble,
        stop: t.vocab.ans_close(),
        is_special: &special,
    };
    train_adapters(host, "t", &sites(), &t.train, &spec, c).unwrap()
}

#[test]
fn zero_learning_rate_leaves_adapters_at_init() {
    let t = task();
    let mut host = small_host();
    let out = train(&mut host, &t, &cfg(0.0));
    let init = Prng::new(8989).derive(1);
    for ckpt in &out.checkpoints {
        let mut p = init.clone();
        for (ad, site) in ckpt.adapters.iter().zip(sites()) {
            let (d_out, d_in) = host.site_dims(site).unwrap();
            let fresh = adapter::LowRankAdapter::init("t", site, d_out, d_in, 4, 8.0, 0.1, &mut p).unwrap();
            assert_eq!(ad.a(), fresh.a());
            assert_eq!(ad.b(), &Matrix::zeros(d_in, 4));
        }
    }
    assert!(host.registry().is_empty(), "training adapters are detached afterwards");
}

#[test]
fn loss_descends_and_host_stays_frozen() {
    let t = task();
    let mut host = small_host();
    let digest = host.frozen_digest();
    let out = train(&mut host, &t, &cfg(1e-2));
    assert_eq!(host.frozen_digest(), digest);
    let last = out.checkpoints.last().unwrap();
    assert!(last.training_loss < out.initial_loss - 0.2, "{} vs {}", last.training_loss, out.initial_loss);
    let mut trained = host.clone();
    for ad in &last.adapters {
        trained.attach(ad.site(), ad.clone()).unwrap();
    }
    assert!(lm_loss(&trained, &t.train).unwrap() < out.initial_loss);
}

/// Next-token NLL summed over completion targets only, from plain logits.
fn completion_nll(host: &HostModel, ex: &PromptExample) -> (f64, usize) {
    let seq = ex.full_sequence();
    let logits = host.forward(&seq[..seq.len() - 1]).unwrap();
    let v = logits.rows();
    let mut total = 0.0;
    for p in ex.prompt.len() - 1..seq.len() - 1 {
        let col: Vec<f64> = (0..v).map(|r| logits.get(r, p)).collect();
        let m = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + col.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        total += lse - col[seq[p + 1] as usize];
    }
    (total, ex.completion.len())
}

#[test]
fn loss_counts_completion_tokens_only() {
    let t = task();
    let host = small_host();
    let batch = &t.train[..5];
    let (sum, count) = batch
        .iter()
        .map(|e| completion_nll(&host, e))
        .fold((0.0, 0), |(s, c), (a, b)| (s + a, c + b));
    assert!((lm_loss(&host, batch).unwrap() - sum / count as f64).abs() <= 1e-10);
    // changing only the prompt's tag label leaves the number of scored tokens alone
    // but changes the context, so the loss moves
    let mut flipped = batch[0].clone();
    flipped.prompt[1] = t.vocab.id("negative").unwrap();
    let (a, _) = completion_nll(&host, &flipped);
    assert!((lm_loss(&host, &[flipped]).unwrap() - a / batch[0].completion.len() as f64).abs() <= 1e-10);
}

#[test]
fn run_files_are_deterministic_and_guarded() {
    let t = task();
    let c = TrainConfig { epochs: 2, ..cfg(1e-2) };
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs {
        let out = train(&mut small_host(), &t, &c);
        write_run(d.path(), "t", &out, &c).unwrap();
    }
    let (m0, ads) = load_selected(dirs[0].path()).unwrap();
    assert_eq!(ads.len(), 2);
    for entry in &m0.checkpoints {
        for f in &entry.files {
            let a = std::fs::read(dirs[0].path().join(f)).unwrap();
            let b = std::fs::read(dirs[1].path().join(f)).unwrap();
            assert_eq!(a, b, "{f}");
        }
    }
    assert_eq!(
        std::fs::read(dirs[0].path().join(RUN_MANIFEST)).unwrap(),
        std::fs::read(dirs[1].path().join(RUN_MANIFEST)).unwrap()
    );

    // a different seed gives different adapters
    let other = TrainConfig { seed: 1, ..c.clone() };
    let out = train(&mut small_host(), &t, &other);
    assert_ne!(out.checkpoints[0].adapters[0].a(), ads[0].a());

    let victim = dirs[1].path().join(&m0.checkpoints[0].files[1]);
    std::fs::remove_file(&victim).unwrap();
    assert!(matches!(load_selected(dirs[1].path()), Err(Error::MissingArtifact(_))));

    let path = dirs[0].path().join(RUN_MANIFEST);
    let text = std::fs::read_to_string(&path).unwrap();
    let wrong = if m0.selected_epoch == 1 { 2 } else { 1 };
    std::fs::write(&path, text.replace(&format!("selected_epoch = {}", m0.selected_epoch), &format!("selected_epoch = {wrong}"))).unwrap();
    assert!(load_selected(dirs[0].path()).is_err());
}

proptest! {
    #[test]
    fn clipping_bounds_norm_and_keeps_direction(vals in prop::collection::vec(-10.0f64..10.0, 2..30), split in 1usize..30, max in 0.01f64..20.0) {
        let split = split.min(vals.len() - 1);
        let mut grads = vec![
            Matrix::from_vec(1, split, vals[..split].to_vec()).unwrap(),
            Matrix::from_vec(1, vals.len() - split, vals[split..].to_vec()).unwrap(),
        ];
        let norm = vals.iter().map(|v| v * v).sum::<f64>().sqrt();
        let reported = clip_global_norm(&mut grads, max);
        prop_assert!((reported - norm).abs() <= 1e-12 * (1.0 + norm));
        let after: Vec<f64> = grads.iter().flat_map(|g| g.as_slice().to_vec()).collect();
        let new_norm = after.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(new_norm <= max * (1.0 + 1e-12) || new_norm <= norm);
        if norm <= max {
            prop_assert_eq!(&after, &vals);
        } else {
            let ratio = max / norm;
            for (a, v) in after.iter().zip(&vals) {
                prop_assert!((a - v * ratio).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }
    }
}

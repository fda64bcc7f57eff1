//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero on any failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use lrcompose::adapter::{self, LowRankAdapter};
use lrcompose::compose::*;
use lrcompose::data::{build_combined, Split, Vocab, MIN_WORDS};
use lrcompose::host::{HostConfig, HostModel, QuantizedBlocks};
use lrcompose::metrics::*;
use lrcompose::numeric::{Matrix, Prng};
use lrcompose::study::*;
use lrcompose::trainer::select_best_index;
use lrcompose::{AttachmentSite, Error, SiteKind};

type Outcome = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn up_site() -> AttachmentSite {
    AttachmentSite::new(0, SiteKind::Up)
}

fn random_adapters(n: usize, d: usize, r: usize, prng: &mut Prng) -> Vec<LowRankAdapter> {
    (0..n)
        .map(|i| {
            let a = random_matrix(d, r, 1.0, prng);
            let b = random_matrix(d, r, 1.0, prng);
            LowRankAdapter::from_parts(format!("m{i}"), up_site(), 2.0 * r as f64, 0.0, a, b).unwrap()
        })
        .collect()
}

/// `A Bᵀ` by explicit loops.
fn outer(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_fn(a.rows(), b.rows(), |i, j| (0..a.cols()).map(|k| a.get(i, k) * b.get(j, k)).sum())
}

fn cross_term_identity() -> Outcome {
    let start = Instant::now();
    let mut prng = Prng::new(2024);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let n = [2, 3, 5][case % 3];
        let d = 1 + prng.below(16);
        let r = 1 + prng.below(4);
        let ads = random_adapters(n, d, r, &mut prng);
        let merged = merge_factors_average(&ads).unwrap();
        let lhs = outer(merged.a(), merged.b());
        let mut rhs = Matrix::zeros(d, d);
        for ai in &ads {
            for bj in &ads {
                rhs = rhs.add(&outer(ai.a(), bj.b())).unwrap();
            }
        }
        worst = worst.max(lhs.max_abs_diff(&rhs.scale(1.0 / (n * n) as f64)));
    }
    let elapsed = start.elapsed();
    ensure!(worst <= 1e-9, "max gap {worst:e}");
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("100 instances, max gap {worst:.1e}, {elapsed:.2?}"))
}

fn strategy_algebra() -> Outcome {
    let mut prng = Prng::new(7);
    for n in 1..=5 {
        let ads = random_adapters(n, 9, 3, &mut prng);
        let x = random_matrix(9, 4, 1.0, &mut prng);
        let sum = compose_output_sum(&ads, &x).unwrap();
        let avg = compose_output_average(&ads, &x).unwrap();
        let gap = avg.max_abs_diff(&sum.scale(1.0 / n as f64));
        ensure!(gap <= 1e-12, "average vs sum/N gap {gap:e} at N={n}");

        let one = &ads[0];
        let copies: Vec<_> = (0..n).map(|i| one.clone().with_name(format!("c{i}"))).collect();
        let single = compose_output_sum(std::slice::from_ref(one), &x).unwrap();
        let many = compose_output_sum(&copies, &x).unwrap();
        let gap = many.max_abs_diff(&single.scale(n as f64));
        ensure!(gap <= 1e-12 * (1.0 + many.max_abs()), "N identical gap {gap:e} at N={n}");

        let mut shuffled = ads.clone();
        shuffled.reverse();
        for strategy in CompositionStrategy::ALL {
            let mut a = ComposedSite::new(up_site(), strategy);
            a.adapters = ads.clone();
            let mut b = ComposedSite::new(up_site(), strategy);
            b.adapters = shuffled.clone();
            let gap = composed_delta(&a, &x).unwrap().max_abs_diff(&composed_delta(&b, &x).unwrap());
            ensure!(gap <= 1e-12, "{strategy} not permutation invariant: {gap:e}");
        }
    }
    let scalar = |name: &str, a: f64, b: f64| {
        LowRankAdapter::from_parts(name, up_site(), 1.0, 0.0, Matrix::column(&[a]), Matrix::column(&[b])).unwrap()
    };
    let pair = [scalar("x", 1.0, 2.0), scalar("y", 3.0, 4.0)];
    let factors = merge_factors_average(&pair).unwrap().materialize_delta().get(0, 0);
    let products = merge_products_average(&pair).unwrap().get(0, 0);
    ensure!(factors == 6.0 && products == 7.0, "scalar instance gave {factors} vs {products}");
    Ok("average = sum/N, N identical = N x single, permutation invariant, scalar 6 vs 7".into())
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let cfg = HostConfig {
        n_layers: 1,
        d_model: 8,
        n_heads: 2,
        d_ff: 12,
        vocab_size: 16,
        max_seq: 8,
        seed: 41,
    };
    let mut host = HostModel::build(cfg).unwrap();
    let mut prng = Prng::new(5);
    for (i, site) in host.sites().into_iter().enumerate() {
        for name in ["a", "b"] {
            let (d_out, d_in) = host.site_dims(site).unwrap();
            let ad = LowRankAdapter::from_parts(
                name,
                site,
                4.0,
                0.0,
                random_matrix(d_out, 2, 0.5, &mut prng),
                random_matrix(d_in, 2, 0.5, &mut prng),
            )
            .unwrap();
            host.attach(site, ad).unwrap();
        }
        host.set_strategy(site, CompositionStrategy::ALL[i % 4]).unwrap();
    }
    let tokens = [3u32, 9, 1, 15, 4, 7];
    let (_, grads, _) = tape_gradients(&host, &tokens);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (site, name, ga, gb) in grads {
        let ad = host.adapters_at(site).iter().find(|a| a.name() == name).unwrap().clone();
        for (which, grad) in [(0, ga), (1, gb)] {
            let base = if which == 0 { ad.a().clone() } else { ad.b().clone() };
            for idx in 0..base.as_slice().len() {
                let eval = |delta: f64| {
                    let mut probe = host.clone();
                    let mut m = base.clone();
                    m.as_mut_slice()[idx] += delta;
                    let (a, b) = if which == 0 { (m, ad.b().clone()) } else { (ad.a().clone(), m) };
                    probe.adapter_mut(site, &name).unwrap().set_factors(a, b).unwrap();
                    sequence_loss(&probe, &tokens)
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                worst = worst.max(relative_error(grad.as_slice()[idx], numeric));
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    ensure!(worst <= 1e-3, "worst relative error {worst:e}");
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!("{checked} adapter entries, worst relative error {worst:.1e}, {elapsed:.2?}"))
}

fn toy_composability() -> Outcome {
    let seed = 8989;
    let cfg = StudyConfig::default();
    let vocab = Vocab::standard();
    let mut host = build_host(&cfg).unwrap();
    let mut lines = Vec::new();
    let mut training = Duration::ZERO;
    let mut failures = Vec::new();
    for (fi, fam) in cfg.family.iter().enumerate() {
        let data = generate_family(&cfg, &vocab, fi).unwrap();
        let ensemble = family_ensemble(&vocab, fam).unwrap();
        let mut adapters = Vec::new();
        for ds in &data.sources {
            let start = Instant::now();
            let outcome = train_dataset(&cfg, &vocab, &mut host, ds, &ensemble, seed).unwrap();
            training += start.elapsed();
            let ces: Vec<f64> = outcome.checkpoints.iter().map(|c| c.validation_ce).collect();
            adapters.push(outcome.checkpoints[select_best_index(&ces).unwrap()].adapters.clone());
        }
        let corpus: Vec<&[u32]> = data.sources.iter().flat_map(|d| d.train.iter().map(|i| i.tokens.as_slice())).collect();
        let eval = Evaluator::new(&cfg, host.clone(), &corpus).unwrap();
        let all: Vec<&LowRankAdapter> = adapters.iter().flatten().collect();
        let summed = eval.compose(&all, Some(CompositionStrategy::OutputSum)).unwrap();
        let merged = eval.compose(&all, Some(CompositionStrategy::WeightAverageFactors)).unwrap();
        let (mut singles, mut sums, mut wafs) = (Vec::new(), Vec::new(), Vec::new());
        for (si, ds) in data.sources.iter().enumerate() {
            let prompts = split_prompts(&vocab, ds, Split::Test, cfg.eval_limit, cfg.data_seed).unwrap();
            let ce = |model: &HostModel| ce_single(&eval.records(model, &prompts, eval_seed(seed, si)).unwrap(), &ensemble).unwrap().0;
            let own: Vec<&LowRankAdapter> = adapters[si].iter().collect();
            singles.push(ce(&eval.compose(&own, None).unwrap()));
            sums.push(ce(&summed));
            wafs.push(ce(&merged));
            lines.push(format!("{}: single {:.1} sum {:.1} waf {:.1}", ds.name, singles[si], sums[si], wafs[si]));
        }
        let floor = singles.iter().cloned().fold(f64::INFINITY, f64::min) - 5.0;
        for (si, ds) in data.sources.iter().enumerate() {
            if singles[si] < 90.0 {
                failures.push(format!("(a) {} single CE {:.1} < 90", ds.name, singles[si]));
            }
            if sums[si] < floor {
                failures.push(format!("(b) {} sum CE {:.1} < {floor:.1}", ds.name, sums[si]));
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (sum_avg, waf_avg) = (mean(&sums), mean(&wafs));
        if sum_avg < waf_avg - 2.0 {
            failures.push(format!("(c) {} sum avg {sum_avg:.1} < waf avg {waf_avg:.1} - 2", fam.attribute));
        }
        lines.push(format!("{} avg: sum {sum_avg:.1} waf {waf_avg:.1}", fam.attribute));
    }
    if training >= Duration::from_secs(300) {
        failures.push(format!("training took {training:?}"));
    }
    let summary = format!("training {training:.1?}; {}", lines.join("; "));
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}; {summary}", failures.join("; ")))
    }
}

fn metric_units() -> Outcome {
    let close = |got: f64, want: f64, what: &str| -> Outcome {
        ensure!((got - want).abs() <= 1e-9, "{what}: {got} != {want}");
        Ok(String::new())
    };
    close(distinct_n(&[vec![7, 7, 7, 7]], 1).unwrap(), 0.25, "distinct-1")?;
    let uni = UnigramModel::from_counts(&[3.0, 1.0, 4.0, 1.0, 5.0], 0.5);
    close(slor(&[0, 2, 4, 4], &[&uni], &uni).unwrap(), 0.0, "SLOR cancellation")?;
    let full = OracleClassifier::new("s", vec![("pos".into(), vec![1]), ("neg".into(), vec![2])]).unwrap();
    let half = OracleClassifier::new("s", vec![("pos".into(), vec![1]), ("neg".into(), vec![9])]).unwrap();
    let rec = |target: &[(&str, &str)], tokens: Vec<u32>| GenerationRecord {
        target: target.iter().map(|(a, l)| (a.to_string(), l.to_string())).collect(),
        tokens,
        prompt_id: 0,
    };
    let recs = vec![rec(&[("s", "pos")], vec![1, 5]), rec(&[("s", "neg")], vec![2, 2])];
    let (mean, per) = ce_single(&recs, &[full, half]).unwrap();
    ensure!(per == [100.0, 50.0], "per-classifier CE {per:?}");
    close(mean, 75.0, "CE mean of classifiers")?;
    let s = OracleClassifier::ensemble("s", &[("pos".into(), vec![1, 2, 3]), ("neg".into(), vec![4, 5, 6])]).unwrap();
    let t = OracleClassifier::ensemble("t", &[("a".into(), vec![10, 11, 12]), ("b".into(), vec![13, 14, 15])]).unwrap();
    let wrong_t = rec(&[("s", "pos"), ("t", "a")], vec![1, 2, 3, 13, 14, 15]);
    close(ce_multi(&[wrong_t], &[s, t]).unwrap(), 0.0, "multi-attribute conjunction")?;
    close(spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap(), 0.8, "spearman")?;
    Ok("distinct-1 0.25, SLOR 0, CE 75, conjunction 0, spearman 0.8".into())
}

fn pipeline_counts() -> Outcome {
    let imdb = mixed_source("imdb-like", sizes(24330, 0, 100), sizes(670, 0, 0), 11);
    let sst2 = mixed_source("sst2-like", sizes(30000, 726, 100), sizes(37349, 146, 0), 12);
    let yelp = mixed_source("yelp-like", sizes(470000, 50000, 100), sizes(0, 0, 0), 13);
    let out = build_combined("combined", &[imdb, sst2, yelp], 3).unwrap();
    let ds = &out.dataset;
    ensure!(ds.train.len() == 72990, "combined train {} != 72990", ds.train.len());
    ensure!(ds.validation.len() == 1452, "combined validation {} != 1452", ds.validation.len());
    for split in [Split::Train, Split::Validation, Split::Test] {
        let items = ds.split(split);
        ensure!(items.iter().all(|i| i.word_count() >= MIN_WORDS), "{split:?} keeps a short item");
        let mut per: std::collections::BTreeMap<(String, String), usize> = Default::default();
        for i in items {
            *per.entry((i.source.to_string(), i.attributes[0].1.to_string())).or_default() += 1;
        }
        for src in ["imdb-like", "sst2-like", "yelp-like"] {
            let counts: Vec<usize> = per.iter().filter(|((s, _), _)| s == src).map(|(_, &n)| n).collect();
            if let (Some(lo), Some(hi)) = (counts.iter().min(), counts.iter().max()) {
                ensure!(hi - lo <= 1, "{split:?} {src} label counts {counts:?}");
            }
        }
    }
    Ok(format!("train {} = 3 x 24330, validation {}, labels within 1, no item under {MIN_WORDS} words", ds.train.len(), ds.validation.len()))
}

fn study_enumeration() -> Outcome {
    ensure!(row_count(3, 3) == 17, "row_count(3, 3) = {}", row_count(3, 3));
    let pairs = enumerate_compositions(3, &CompositionStrategy::ALL[..3]);
    for t in &CompositionStrategy::ALL[..3] {
        let subsets: Vec<String> = pairs.iter().filter(|(s, _)| s == t).map(|(_, s)| subset_label(s)).collect();
        ensure!(subsets == ["1+2", "1+3", "2+3", "1+2+3"], "{t}: {subsets:?}");
    }
    let cfg = tiny_study(3);
    let read = |dir: &std::path::Path| -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<_> = std::fs::read_dir(dir.join(TABLES_DIR))
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
            })
            .collect();
        files.sort();
        files
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let tables = run_study(&cfg, a.path(), true).unwrap();
    run_study(&cfg, b.path(), true).unwrap();
    ensure!(tables[0].1.rows.len() == 17, "tiny study has {} rows", tables[0].1.rows.len());
    let (fa, fb) = (read(a.path()), read(b.path()));
    ensure!(!fa.is_empty() && fa == fb, "tables differ between runs");
    Ok(format!("17 rows, subsets 12/13/23/123, {} table files byte-identical", fa.len()))
}

fn quantization() -> Outcome {
    let mut prng = Prng::new(99);
    let bs = 64;
    let values: Vec<f64> = (0..1000 * bs)
        .map(|i| {
            let block_scale = 10f64.powi((i / bs % 7) as i32 - 3);
            prng.uniform_open(-block_scale, block_scale)
        })
        .collect();
    let m = Matrix::from_vec(1000, bs, values).unwrap();
    let q = QuantizedBlocks::quantize(&m, bs).unwrap();
    let back = q.dequantize();
    let mut worst_ratio: f64 = 0.0;
    for (i, (x, y)) in m.as_slice().iter().zip(back.as_slice()).enumerate() {
        let bound = q.absmax()[i / bs] / 14.0;
        ensure!((x - y).abs() <= bound * (1.0 + 1e-12), "element {i}: error {} > {bound}", (x - y).abs());
        worst_ratio = worst_ratio.max((x - y).abs() / bound);
    }
    let zero = Matrix::zeros(8, 16);
    ensure!(QuantizedBlocks::quantize(&zero, 16).unwrap().dequantize() == zero, "zero matrix changed");

    let mut host = HostModel::build(tiny_config()).unwrap();
    host.quantize_frozen(16).unwrap();
    let tokens = [1u32, 4, 9, 2, 7];
    let base = host.forward(&tokens).unwrap();
    let mut p = Prng::new(4);
    for site in host.sites() {
        let (d_out, d_in) = host.site_dims(site).unwrap();
        let ad = LowRankAdapter::from_parts("z", site, 8.0, 0.0, random_matrix(d_out, 4, 1.0, &mut p), Matrix::zeros(d_in, 4)).unwrap();
        host.attach(site, ad).unwrap();
    }
    let gap = host.forward(&tokens).unwrap().max_abs_diff(&base);
    ensure!(gap <= 1e-12, "zero-B adapters moved quantized logits by {gap:e}");
    Ok(format!("1000 blocks, worst error {worst_ratio:.3} x bound, zero matrix exact, zero-B gap {gap:e}"))
}

fn serialization() -> Outcome {
    let ad = random_adapters(1, 6, 3, &mut Prng::new(12)).remove(0);
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.lra"), dir.path().join("b.lra"));
    adapter::save(&ad, &p1).unwrap();
    adapter::save(&adapter::load(&p1).unwrap(), &p2).unwrap();
    let bytes = std::fs::read(&p1).unwrap();
    ensure!(bytes == std::fs::read(&p2).unwrap(), "save/load/save bytes differ");
    let mut bad = bytes.clone();
    bad[1] ^= 0x20;
    let magic = adapter::decode(&bad);
    let truncated = adapter::decode(&bytes[..bytes.len() - 3]);
    ensure!(matches!(magic, Err(Error::BadMagic { .. })), "corrupted magic gave {magic:?}");
    ensure!(matches!(truncated, Err(Error::TruncatedPayload { .. })), "truncation gave {truncated:?}");
    Ok(format!("{} bytes round trip identically; BadMagic and TruncatedPayload", bytes.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("cross-term identity", cross_term_identity),
        ("strategy algebra", strategy_algebra),
        ("gradient correctness", gradient_check),
        ("toy composability", toy_composability),
        ("metric unit suite", metric_units),
        ("pipeline counts", pipeline_counts),
        ("study enumeration", study_enumeration),
        ("quantization", quantization),
        ("serialization", serialization),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match result {
            Ok(detail) => println!("PASS {name}: {detail} ({:.1?})", start.elapsed()),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

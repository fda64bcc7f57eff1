mod common;

use common::*;
use lrcompose::adapter::LowRankAdapter;
use lrcompose::compose::CompositionStrategy;
use lrcompose::host::{Decoding, HostConfig, HostModel};
use lrcompose::numeric::Prng;
use lrcompose::{AttachmentSite, SiteKind};
use proptest::prelude::*;

fn random_adapter(host: &HostModel, name: &str, site: AttachmentSite, r: usize, prng: &mut Prng) -> LowRankAdapter {
    let (d_out, d_in) = host.site_dims(site).unwrap();
    let a = random_matrix(d_out, r, 0.3, prng);
    let b = random_matrix(d_in, r, 0.3, prng);
    LowRankAdapter::from_parts(name, site, 2.0 * r as f64, 0.0, a, b).unwrap()
}

fn zero_b_adapter(host: &HostModel, name: &str, site: AttachmentSite, prng: &mut Prng) -> LowRankAdapter {
    let (d_out, d_in) = host.site_dims(site).unwrap();
    LowRankAdapter::init(name, site, d_out, d_in, 4, 8.0, 0.1, prng).unwrap()
}

const TOKENS: [u32; 7] = [1, 5, 19, 3, 3, 0, 7];

#[test]
fn baseline_matches_dense_reference() {
    let host = HostModel::build(tiny_config()).unwrap();
    let gap = logits_gap(&host.forward(&TOKENS).unwrap(), &reference_logits(&host, &TOKENS));
    assert!(gap <= 1e-10, "gap {gap}");
}

#[test]
fn every_strategy_matches_dense_reference() {
    let mut prng = Prng::new(41);
    for strategy in CompositionStrategy::ALL {
        let mut host = HostModel::build(tiny_config()).unwrap();
        let sites = [
            AttachmentSite::new(0, SiteKind::Q),
            AttachmentSite::new(0, SiteKind::Down),
            AttachmentSite::new(1, SiteKind::Gate),
            AttachmentSite::lm_head(2),
        ];
        for site in sites {
            for name in ["x", "y", "z"] {
                let ad = random_adapter(&host, name, site, 3, &mut prng);
                host.attach(site, ad).unwrap();
            }
            host.set_strategy(site, strategy).unwrap();
        }
        let gap = logits_gap(&host.forward(&TOKENS).unwrap(), &reference_logits(&host, &TOKENS));
        assert!(gap <= 1e-9, "{strategy}: gap {gap}");
    }
}

#[test]
fn zero_b_adapters_at_all_sites_leave_logits_unchanged() {
    let mut host = HostModel::build(tiny_config()).unwrap();
    let base = host.forward(&TOKENS).unwrap();
    let mut prng = Prng::new(2);
    let sites = host.sites();
    assert_eq!(sites.len(), 15);
    for site in sites {
        let ad = zero_b_adapter(&host, "fresh", site, &mut prng);
        host.attach(site, ad).unwrap();
    }
    assert!(host.forward(&TOKENS).unwrap().max_abs_diff(&base) <= 1e-12);
}

#[test]
fn attach_then_detach_restores_baseline_bitwise() {
    let mut host = HostModel::build(tiny_config()).unwrap();
    let base = host.forward(&TOKENS).unwrap();
    let digest = host.frozen_digest();
    let mut prng = Prng::new(9);
    let site = AttachmentSite::new(1, SiteKind::V);
    host.attach(site, random_adapter(&host, "a", site, 2, &mut prng)).unwrap();
    host.attach(site, random_adapter(&host, "b", site, 2, &mut prng)).unwrap();
    assert_ne!(host.forward(&TOKENS).unwrap(), base);
    host.detach(site, "a").unwrap();
    host.detach(site, "b").unwrap();
    assert!(host.registry().is_empty());
    assert_eq!(host.forward(&TOKENS).unwrap(), base);
    assert_eq!(host.frozen_digest(), digest);
}

#[test]
fn greedy_generation_follows_argmax_chain() {
    let mut host = HostModel::build(tiny_config()).unwrap();
    let mut prng = Prng::new(5);
    let site = AttachmentSite::new(0, SiteKind::Up);
    host.attach(site, random_adapter(&host, "a", site, 2, &mut prng)).unwrap();
    let prompt = [4u32, 8];
    let generated = host.generate(&prompt, 6, None, Decoding::Greedy).unwrap();
    let mut context = prompt.to_vec();
    for &tok in &generated {
        let logits = reference_logits(&host, &context);
        let last = logits.last().unwrap();
        let mut best = 0;
        for (i, &v) in last.iter().enumerate() {
            if v > last[best] {
                best = i;
            }
        }
        assert_eq!(tok as usize, best);
        context.push(tok);
    }
    assert_eq!(generated.len(), 6);
}

#[test]
fn generation_stops_after_stop_token() {
    let host = HostModel::build(tiny_config()).unwrap();
    let free = host.generate(&[2, 3], 5, None, Decoding::Greedy).unwrap();
    let stop = free[1];
    let first = free.iter().position(|&t| t == stop).unwrap();
    let stopped = host.generate(&[2, 3], 5, Some(stop), Decoding::Greedy).unwrap();
    assert_eq!(stopped, free[..=first].to_vec());
}

#[test]
fn quantized_host_with_zero_b_adapters_unchanged() {
    let mut host = HostModel::build(tiny_config()).unwrap();
    host.quantize_frozen(16).unwrap();
    let base = host.forward(&TOKENS).unwrap();
    let gap = logits_gap(&base, &reference_logits(&host, &TOKENS));
    assert!(gap <= 1e-10, "quantized reference gap {gap}");
    let mut prng = Prng::new(3);
    for site in host.sites() {
        let ad = zero_b_adapter(&host, "fresh", site, &mut prng);
        host.attach(site, ad).unwrap();
    }
    assert!(host.forward(&TOKENS).unwrap().max_abs_diff(&base) <= 1e-12);
    for site in host.sites() {
        let f = host.frozen(site).unwrap();
        let q = f.quantized().unwrap();
        for i in 0..q.len() {
            assert!((-7..=7).contains(&q.code(i)));
        }
        let bound = q.absmax().iter().cloned().fold(0.0, f64::max) / 14.0;
        assert!(f.weight().max_abs_diff(f.w0()) <= bound + 1e-15);
    }
}

#[test]
fn delta_application_counts() {
    let mut prng = Prng::new(8);
    for strategy in CompositionStrategy::ALL {
        let mut host = HostModel::build(tiny_config()).unwrap();
        let sites = [AttachmentSite::new(0, SiteKind::K), AttachmentSite::new(1, SiteKind::O)];
        for site in sites {
            for name in ["a", "b", "c"] {
                host.attach(site, random_adapter(&host, name, site, 2, &mut prng)).unwrap();
            }
            host.set_strategy(site, strategy).unwrap();
        }
        let (_, stats) = host.forward_with_stats(&TOKENS).unwrap();
        let per_site = if strategy.merges_weights() { 1 } else { 3 };
        assert_eq!(stats.delta_applications, 2 * per_site, "{strategy}");
    }
}

#[test]
fn adapter_only_affects_downstream_residuals() {
    let mut host = HostModel::build(tiny_config()).unwrap();
    let before = host.residuals(&TOKENS).unwrap();
    let mut prng = Prng::new(12);
    let site = AttachmentSite::new(1, SiteKind::Q);
    host.attach(site, random_adapter(&host, "a", site, 2, &mut prng)).unwrap();
    let after = host.residuals(&TOKENS).unwrap();
    assert_eq!(before.len(), 3);
    assert_eq!(before[0], after[0]);
    assert_eq!(before[1], after[1]);
    assert!(before[2].max_abs_diff(&after[2]) > 1e-6);
}

#[test]
fn full_model_gradient_check() {
    let cfg = HostConfig {
        n_layers: 1,
        d_model: 8,
        n_heads: 2,
        d_ff: 12,
        vocab_size: 16,
        max_seq: 8,
        seed: 31,
    };
    let mut host = HostModel::build(cfg).unwrap();
    let mut prng = Prng::new(77);
    let tokens = [3u32, 9, 1, 15, 4];
    for site in host.sites() {
        host.attach(site, random_adapter(&host, "a", site, 2, &mut prng)).unwrap();
        host.attach(site, random_adapter(&host, "b", site, 2, &mut prng)).unwrap();
        host.set_strategy(site, CompositionStrategy::WeightAverageFactors).unwrap();
    }
    host.set_strategy(AttachmentSite::new(0, SiteKind::Up), CompositionStrategy::OutputSum).unwrap();
    let (host_grads, adapter_grads, loss) = tape_gradients(&host, &tokens);
    assert!((loss - sequence_loss(&host, &tokens)).abs() <= 1e-10);

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (name, tensor) in host.named_tensors().into_iter().map(|(n, m)| (n, m.clone())).collect::<Vec<_>>() {
        for idx in [0, tensor.as_slice().len() / 2, tensor.as_slice().len() - 1] {
            let mut probe = host.clone();
            let mut plus = tensor.clone();
            plus.as_mut_slice()[idx] += h;
            probe.set_tensor(&name, plus).unwrap();
            let up = sequence_loss(&probe, &tokens);
            let mut minus = tensor.clone();
            minus.as_mut_slice()[idx] -= h;
            probe.set_tensor(&name, minus).unwrap();
            let down = sequence_loss(&probe, &tokens);
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(host_grads[&name].as_slice()[idx], numeric));
        }
    }
    for (site, name, ga, gb) in adapter_grads {
        let ad = host.adapters_at(site).iter().find(|a| a.name() == name).unwrap().clone();
        for (which, grad) in [(0, ga), (1, gb)] {
            let base = if which == 0 { ad.a().clone() } else { ad.b().clone() };
            let idx = base.as_slice().len() / 3;
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
        }
    }
    assert!(worst <= 1e-3, "worst relative error {worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn attach_order_does_not_matter(seed in 0u64..1000, strategy_idx in 0usize..4) {
        let strategy = CompositionStrategy::ALL[strategy_idx];
        let base = HostModel::build(tiny_config()).unwrap();
        let site = AttachmentSite::new(0, SiteKind::O);
        let mut prng = Prng::new(seed);
        let ads: Vec<_> = ["a", "b", "c"].iter().map(|n| random_adapter(&base, n, site, 2, &mut prng)).collect();
        let mut forward = base.clone();
        let mut reverse = base.clone();
        for ad in &ads {
            forward.attach(site, ad.clone()).unwrap();
        }
        for ad in ads.iter().rev() {
            reverse.attach(site, ad.clone()).unwrap();
        }
        forward.set_strategy(site, strategy).unwrap();
        reverse.set_strategy(site, strategy).unwrap();
        let gap = forward.forward(&TOKENS).unwrap().max_abs_diff(&reverse.forward(&TOKENS).unwrap());
        prop_assert!(gap <= 1e-10);
    }

    #[test]
    fn prefix_logits_independent_of_suffix(prefix in proptest::collection::vec(0u32..20, 1..6),
                                           tail_a in proptest::collection::vec(0u32..20, 1..4),
                                           tail_b in proptest::collection::vec(0u32..20, 1..4)) {
        let host = HostModel::build(tiny_config()).unwrap();
        let a: Vec<u32> = prefix.iter().chain(&tail_a).cloned().collect();
        let b: Vec<u32> = prefix.iter().chain(&tail_b).cloned().collect();
        let (la, lb) = (host.forward(&a).unwrap(), host.forward(&b).unwrap());
        for c in 0..prefix.len() {
            prop_assert_eq!(la.col_vec(c), lb.col_vec(c));
        }
    }
}

#[test]
fn strategy_switch_changes_output_for_distinct_adapters() {
    let mut host = HostModel::build(tiny_config()).unwrap();
    let mut prng = Prng::new(99);
    let site = AttachmentSite::new(0, SiteKind::V);
    host.attach(site, random_adapter(&host, "a", site, 2, &mut prng)).unwrap();
    host.attach(site, random_adapter(&host, "b", site, 2, &mut prng)).unwrap();
    let sum = host.forward(&TOKENS).unwrap();
    host.set_strategy(site, CompositionStrategy::OutputSum).unwrap();
    assert_ne!(host.forward(&TOKENS).unwrap(), sum);
}

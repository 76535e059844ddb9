use acnet_core::data::LabelBatch;
use acnet_core::loss::{deep_supervision_loss, FocalLossConfig};
use acnet_core::model::{argmax_classes, Acnet, AcnetConfig, ForwardOptions, Modality, Variant};
use acnet_core::Error;
use acnet_tensor::{Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(variant: Variant) -> AcnetConfig {
    let mut cfg = AcnetConfig::desk(6).with_variant(variant);
    cfg.input_size = (32, 32);
    cfg
}

fn build(cfg: AcnetConfig, seed: u64) -> Acnet<f32> {
    Acnet::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn random_inputs(n: usize, h: usize, w: usize, seed: u64) -> (Tensor<f32>, Tensor<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rgb = Tensor::from_fn(&[n, 3, h, w], |_| rng.gen_range(-1.0..1.0)).unwrap();
    let depth = Tensor::from_fn(&[n, 1, h, w], |_| rng.gen_range(-1.0..1.0)).unwrap();
    (rgb, depth)
}

fn run(model: &mut Acnet<f32>, rgb: &Tensor<f32>, depth: &Tensor<f32>, opts: ForwardOptions) -> (Graph<f32>, acnet_core::model::ForwardOutput) {
    let mut g = Graph::new();
    let (r, d) = (g.constant(rgb.clone()), g.constant(depth.clone()));
    let out = model.forward(&mut g, r, d, opts).unwrap();
    (g, out)
}

#[test]
fn side_outputs_cover_five_resolutions() {
    let mut model = build(AcnetConfig::desk(6), 1);
    let (rgb, depth) = random_inputs(2, 64, 64, 2);
    let (g, out) = run(&mut model, &rgb, &depth, ForwardOptions::train());
    let shapes: Vec<Vec<usize>> = out.outputs.iter().map(|&v| g.value(v).shape().to_vec()).collect();
    assert_eq!(
        shapes,
        vec![vec![2, 6, 4, 4], vec![2, 6, 8, 8], vec![2, 6, 16, 16], vec![2, 6, 32, 32], vec![2, 6, 64, 64]]
    );
    assert_eq!(out.fused.len(), 5);
    assert_eq!(out.attention.len(), 10);
}

#[test]
fn same_seed_same_model_and_logits() {
    let (rgb, depth) = random_inputs(2, 32, 32, 3);
    let mut a = build(small(Variant::Full), 7);
    let mut b = build(small(Variant::Full), 7);
    assert_eq!(a.store().params(), b.store().params());
    let (ga, oa) = run(&mut a, &rgb, &depth, ForwardOptions::train());
    let (gb, ob) = run(&mut b, &rgb, &depth, ForwardOptions::train());
    for (x, y) in oa.outputs.iter().zip(&ob.outputs) {
        assert_eq!(ga.value(*x), gb.value(*y));
    }
    let c = build(small(Variant::Full), 8);
    assert_ne!(a.store().params(), c.store().params());
}

/// Scalars in the ACM weights and biases, computed from the stage widths.
fn expected_acm_params(cfg: &AcnetConfig) -> usize {
    let mut widths = vec![cfg.stem_channels];
    widths.extend(cfg.stages.iter().map(|s| s.channels));
    widths.iter().map(|c| 2 * (c * c + c)).sum()
}

#[test]
fn variant_parameter_counts() {
    let full = build(small(Variant::Full), 0);
    let m2 = build(small(Variant::Model2), 0);
    let m1 = build(small(Variant::Model1), 0);
    assert!(m1.param_count() < m2.param_count());
    assert!(m2.param_count() < full.param_count());
    assert_eq!(full.param_count() - m2.param_count(), full.acm_param_count());
    assert_eq!(full.acm_param_count(), expected_acm_params(full.config()));
    assert_eq!(m2.acm_param_count(), 0);
    assert_eq!(m1.store().count_prefix("rgb.layer"), 0);
    assert_eq!(m1.store().count_prefix("depth.layer"), 0);
    assert!(m1.store().count_prefix("rgb.stem") > 0);
}

#[test]
fn ten_attention_sites_with_stage_widths() {
    let model = build(small(Variant::Full), 0);
    let sites = model.acm_sites();
    assert_eq!(sites.len(), 10);
    let names: Vec<String> = sites
        .iter()
        .map(|s| format!("{}.{}", s.branch.as_str(), s.stage_name()))
        .collect();
    assert_eq!(
        names,
        [
            "rgb.conv", "depth.conv", "rgb.layer1", "depth.layer1", "rgb.layer2", "depth.layer2", "rgb.layer3",
            "depth.layer3", "rgb.layer4", "depth.layer4"
        ]
    );
    assert_eq!(sites[0].branch, Modality::Rgb);
    let widths = [16, 16, 16, 16, 32, 32, 64, 64, 128, 128];
    for (site, c) in sites.iter().zip(widths) {
        let name = format!("acm.{}.{}.weight", site.branch.as_str(), site.stage_name());
        assert_eq!(model.store().find(&name).unwrap().value.shape(), &[c, c, 1, 1]);
    }
}

#[test]
fn bypassed_attention_equals_model2() {
    let (rgb, depth) = random_inputs(2, 32, 32, 4);
    let mut full = build(small(Variant::Full), 11);
    // A different seed, then the shared parameters copied over.
    let mut m2 = build(small(Variant::Model2), 99);
    let copied = m2.store_mut().copy_matching(full.store());
    assert_eq!(copied, m2.store().params().len());
    let opts = ForwardOptions {
        bypass_acm: true,
        ..ForwardOptions::train()
    };
    let (gf, of) = run(&mut full, &rgb, &depth, opts);
    let (gm, om) = run(&mut m2, &rgb, &depth, ForwardOptions::train());
    assert!(of.attention.is_empty());
    for (a, b) in of.outputs.iter().zip(&om.outputs) {
        assert_eq!(gf.value(*a), gm.value(*b));
    }
}

#[test]
fn fusion_never_alters_branch_streams() {
    let (rgb, depth) = random_inputs(2, 32, 32, 5);
    let mut model = build(small(Variant::Full), 12);
    let (g1, with_fusion) = run(&mut model, &rgb, &depth, ForwardOptions::train());
    let opts = ForwardOptions {
        branches_only: true,
        ..ForwardOptions::train()
    };
    let (g2, alone) = run(&mut model, &rgb, &depth, opts);
    assert_eq!(with_fusion.rgb_features.len(), 5);
    for (a, b) in with_fusion.rgb_features.iter().zip(&alone.rgb_features) {
        assert_eq!(g1.value(*a), g2.value(*b));
    }
    for (a, b) in with_fusion.depth_features.iter().zip(&alone.depth_features) {
        assert_eq!(g1.value(*a), g2.value(*b));
    }
}

#[test]
fn every_parameter_receives_gradient() {
    let (rgb, depth) = random_inputs(2, 32, 32, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let labels: Vec<u8> = (0..2 * 32 * 32).map(|_| rng.gen_range(1..6)).collect();
    let labels = LabelBatch::new(2, 32, 32, labels).unwrap();
    let mut model = build(small(Variant::Full), 13);
    let (mut g, out) = run(&mut model, &rgb, &depth, ForwardOptions::train());
    let loss = deep_supervision_loss(&mut g, &out.outputs, &labels, FocalLossConfig::default()).unwrap();
    g.backward(loss).unwrap();
    let mut groups = std::collections::BTreeSet::new();
    for (p, &v) in model.store().params().iter().zip(&out.params) {
        let grad = g.grad(v).unwrap_or_else(|| panic!("{} has no gradient", p.name));
        assert!(grad.sum_sq() > 0.0, "{} has a zero gradient", p.name);
        groups.insert(p.name.split('.').next().unwrap().to_string());
    }
    let groups: Vec<_> = groups.into_iter().collect();
    assert_eq!(groups, ["acm", "decoder", "depth", "fusion", "rgb"]);
}

#[test]
fn zero_inputs_give_finite_logits() {
    let rgb = Tensor::zeros(&[2, 3, 32, 32]).unwrap();
    let depth = Tensor::zeros(&[2, 1, 32, 32]).unwrap();
    for variant in [Variant::Full, Variant::Model1, Variant::Model2] {
        let mut model = build(small(variant), 14);
        let (g, out) = run(&mut model, &rgb, &depth, ForwardOptions::train());
        for &o in &out.outputs {
            assert!(g.value(o).data().iter().all(|x| x.is_finite()));
        }
        let pred = model.predict(&rgb, &depth).unwrap();
        assert_eq!(pred.len(), 2);
    }
}

#[test]
fn eval_needs_running_statistics() {
    let model = build(small(Variant::Full), 0);
    let (rgb, depth) = random_inputs(1, 32, 32, 0);
    assert!(matches!(model.predict(&rgb, &depth), Err(Error::Untrained)));
}

#[test]
fn rejects_bad_input_shapes() {
    let mut model = build(small(Variant::Full), 0);
    let (rgb, depth) = random_inputs(1, 48, 40, 0);
    let mut g = Graph::new();
    let (r, d) = (g.constant(rgb), g.constant(depth));
    assert!(model.forward(&mut g, r, d, ForwardOptions::train()).is_err());
    let (rgb, _) = random_inputs(1, 32, 32, 0);
    let (_, depth) = random_inputs(1, 64, 64, 0);
    let mut g = Graph::new();
    let (r, d) = (g.constant(rgb), g.constant(depth));
    assert!(matches!(model.forward(&mut g, r, d, ForwardOptions::train()), Err(Error::Shape(_))));
}

#[test]
fn argmax_breaks_ties_toward_lower_class() {
    let logits = Tensor::new(&[1, 3, 1, 2], vec![1.0f32, 0.0, 1.0, 2.0, 0.5, 2.0]).unwrap();
    let maps = argmax_classes(&logits).unwrap();
    assert_eq!(maps[0].data, vec![0, 1]);
}

proptest! {
    #[test]
    fn argmax_matches_brute_force(
        (n, k, h, w, data) in (1usize..3, 1usize..5, 1usize..4, 1usize..4).prop_flat_map(|(n, k, h, w)| {
            (Just(n), Just(k), Just(h), Just(w), prop::collection::vec(-3i32..3, n * k * h * w))
        })
    ) {
        let logits = Tensor::new(&[n, k, h, w], data.iter().map(|&v| v as f64).collect()).unwrap();
        let maps = argmax_classes(&logits).unwrap();
        for b in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let at = |c: usize| data[((b * k + c) * h + y) * w + x];
                    let mut best = 0;
                    for c in 1..k {
                        if at(c) > at(best) {
                            best = c;
                        }
                    }
                    prop_assert_eq!(maps[b].at(y, x, 0) as usize, best);
                }
            }
        }
    }
}

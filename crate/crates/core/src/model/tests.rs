use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::error::Error;
use crate::loss::{bce_loss, bce_loss_with_grad, TargetMatrix};
use crate::nn::{Module, Param};
use crate::rng::{normal, rng};
use crate::taxonomy::Taxonomy;
use crate::tensor::Tensor;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|v| *v = normal(&mut r));
    t
}

/// Copies frame `src_t[i]` of `x` into frame `i` of the result.
fn permute_frames(x: &Tensor, order: &[usize]) -> Tensor {
    let [b, c, t, h, w] = x.dims5().unwrap();
    let hw = h * w;
    let mut y = Tensor::zeros(x.shape());
    for bc in 0..b * c {
        for (i, &s) in order.iter().enumerate() {
            let src = &x.data()[(bc * t + s) * hw..(bc * t + s + 1) * hw];
            y.data_mut()[(bc * t + i) * hw..(bc * t + i + 1) * hw].copy_from_slice(src);
        }
    }
    y
}

fn frame(x: &Tensor, f: usize) -> Tensor {
    permute_frames_to(x, &[f])
}

fn permute_frames_to(x: &Tensor, order: &[usize]) -> Tensor {
    let [b, c, t, h, w] = x.dims5().unwrap();
    let hw = h * w;
    let mut y = Tensor::zeros(&[b, c, order.len(), h, w]);
    let n = order.len();
    for bc in 0..b * c {
        for (i, &s) in order.iter().enumerate() {
            let src = &x.data()[(bc * t + s) * hw..(bc * t + s + 1) * hw];
            y.data_mut()[(bc * n + i) * hw..(bc * n + i + 1) * hw].copy_from_slice(src);
        }
    }
    y
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

fn stage(kind: BranchKind, cin: usize, width: usize, stride: usize) -> Stage {
    Stage::new(kind, Backbone::R18, cin, width, 2, stride, &mut rng(5))
}

#[test]
fn stage_shapes_follow_stride() {
    let x = random(&[2, 64, 8, 28, 28], 1);
    for kind in [BranchKind::Frame2d, BranchKind::Volume3d] {
        let (y, _) = stage(kind, 64, 128, 2).forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 128, 8, 14, 14]);
    }
}

#[test]
fn stage_rejects_wrong_channels() {
    let x = random(&[1, 8, 2, 8, 8], 1);
    for kind in [BranchKind::Frame2d, BranchKind::Volume3d] {
        assert!(matches!(stage(kind, 16, 16, 2).forward(&x), Err(Error::Shape(_))));
    }
}

#[test]
fn frame2d_stage_is_frame_equivariant() {
    let s = stage(BranchKind::Frame2d, 8, 16, 2);
    let x = random(&[2, 8, 5, 12, 12], 2);
    let order = [3, 0, 4, 2, 1];
    let y = s.infer(&x).unwrap();
    let yp = s.infer(&permute_frames(&x, &order)).unwrap();
    assert_eq!(permute_frames(&y, &order).data(), yp.data());
    // Batch statistics pool over frames, so training mode is equivariant too.
    let y = s.forward(&x).unwrap().0;
    let yp = s.forward(&permute_frames(&x, &order)).unwrap().0;
    assert!(max_diff(&permute_frames(&y, &order), &yp) < 1e-12);
}

#[test]
fn frame2d_stage_on_single_frames_matches_clip() {
    let s = stage(BranchKind::Frame2d, 8, 8, 1);
    let x = random(&[1, 8, 3, 10, 10], 3);
    let y = s.infer(&x).unwrap();
    for f in 0..3 {
        let yf = s.infer(&frame(&x, f)).unwrap();
        assert_eq!(yf.shape(), &[1, 8, 1, 10, 10]);
        assert!(max_diff(&yf, &frame(&y, f)) < 1e-12);
    }
}

#[test]
fn volume3d_stage_sees_frame_order() {
    let s = stage(BranchKind::Volume3d, 8, 16, 2);
    let x = random(&[1, 8, 6, 12, 12], 4);
    let order = [5, 4, 3, 2, 1, 0];
    let y = s.forward(&x).unwrap().0;
    let yp = s.forward(&permute_frames(&x, &order)).unwrap().0;
    assert!(max_diff(&permute_frames(&y, &order), &yp) > 1e-3);
}

#[test]
fn zeroed_residual_branch_leaves_identity_path() {
    let mut block = Block::new(BranchKind::Volume3d, Backbone::R18, 8, 8, 1, &mut rng(6));
    assert!(block.shortcut.is_none());
    for u in &mut block.units {
        u.conv.weight.value.fill(0.0);
        u.norm.beta.value.fill(0.0);
    }
    let zero = Tensor::zeros(&[1, 8, 2, 6, 6]);
    assert_eq!(block.forward(&zero).unwrap().0.data(), zero.data());
    let x = random(&[1, 8, 2, 6, 6], 7);
    let y = block.forward(&x).unwrap().0;
    for (a, b) in y.data().iter().zip(x.data()) {
        assert_eq!(*a, b.max(0.0));
    }
}

#[test]
fn block_gradients_match_finite_differences() {
    for backbone in [Backbone::R18, Backbone::R50] {
        let mut block = Block::new(BranchKind::Volume3d, backbone, 4, 2, 2, &mut rng(8));
        let x = random(&[1, 4, 2, 4, 4], 9);
        let probe = random(block.forward(&x).unwrap().0.shape(), 10);
        let f = |b: &Block, x: &Tensor| -> f64 {
            let y = b.forward(x).unwrap().0;
            y.data().iter().zip(probe.data()).map(|(p, q)| p * q).sum()
        };
        let (_, cache) = block.forward(&x).unwrap();
        block.zero_grad();
        let dx = block.backward(&cache, &probe).unwrap();
        let h = 1e-6;
        for i in (0..x.len()).step_by(5) {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let num = (f(&block, &xp) - f(&block, &xm)) / (2.0 * h);
            assert!((num - dx.data()[i]).abs() < 1e-5, "{backbone:?} dx[{i}]: {num} vs {}", dx.data()[i]);
        }
        let w = block.units[0].conv.weight.grad.clone();
        for i in 0..w.len().min(20) {
            let mut b2 = block.clone();
            b2.units[0].conv.weight.value.data_mut()[i] += h;
            let fp = f(&b2, &x);
            b2.units[0].conv.weight.value.data_mut()[i] -= 2.0 * h;
            let fm = f(&b2, &x);
            let num = (fp - fm) / (2.0 * h);
            assert!((num - w.data()[i]).abs() < 1e-5, "{backbone:?} dw[{i}]");
        }
    }
}

fn tiny(mode: Mode, tax: &Taxonomy) -> ModelConfig {
    ModelConfig::tiny(mode, 4, tax)
}

#[test]
fn tiny_forward_shapes_in_every_mode() {
    let tax = Taxonomy::with_counts([2, 1, 3, 0, 1, 1]);
    let x = random(&[2, 3, 4, 32, 32], 11);
    for mode in [Mode::Hatnet, Mode::Resnet3d, Mode::Branch2dOnly, Mode::Branch3dOnly] {
        for head_mode in [HeadMode::Single, HeadMode::Multitask] {
            let cfg = ModelConfig {
                head_mode,
                ..tiny(mode, &tax)
            };
            let net = Network::new(cfg, 0).unwrap();
            let out = net.forward(&x).unwrap();
            assert_eq!(out.logits.shape(), &[2, 8]);
            assert_eq!(net.features(&x).unwrap().shape(), &[2, 16]);
            if head_mode == HeadMode::Multitask {
                let widths: Vec<usize> = out.blocks.unwrap().iter().map(|b| b.dim(1)).collect();
                assert_eq!(widths, vec![2, 1, 3, 0, 1, 1]);
            } else {
                assert!(out.blocks.is_none());
            }
        }
    }
}

#[test]
fn multitask_logits_scatter_to_label_order() {
    // Labels of different categories interleave in id order.
    let tax = Taxonomy::new(vec![
        crate::taxonomy::Label { id: 0, name: "a".into(), category: crate::taxonomy::Category::Action },
        crate::taxonomy::Label { id: 1, name: "b".into(), category: crate::taxonomy::Category::Scene },
        crate::taxonomy::Label { id: 2, name: "c".into(), category: crate::taxonomy::Category::Action },
    ])
    .unwrap();
    let cfg = ModelConfig {
        head_mode: HeadMode::Multitask,
        ..tiny(Mode::Resnet3d, &tax)
    };
    let net = Network::new(cfg, 1).unwrap();
    let out = net.forward(&random(&[1, 3, 4, 32, 32], 2)).unwrap();
    let blocks = out.blocks.unwrap();
    let l = out.logits.data();
    assert_eq!(l[1], blocks[0].data()[0]);
    assert_eq!(l[0], blocks[2].data()[0]);
    assert_eq!(l[2], blocks[2].data()[1]);
}

#[test]
fn input_shape_is_checked() {
    let tax = Taxonomy::with_counts([1, 1, 1, 1, 1, 1]);
    let net = Network::new(tiny(Mode::Hatnet, &tax), 0).unwrap();
    assert!(net.forward(&Tensor::zeros(&[1, 3, 4, 64, 64])).is_err());
    assert!(net.forward(&Tensor::zeros(&[1, 1, 4, 32, 32])).is_err());
    assert!(net.forward(&Tensor::zeros(&[1, 3, 4, 32])).is_err());
}

#[test]
fn config_invariants_are_enforced() {
    let tax = Taxonomy::with_counts([1, 1, 1, 1, 1, 1]);
    let ok = tiny(Mode::Hatnet, &tax);
    assert!(ok.validate().is_ok());
    for bad in [
        ModelConfig { input_size: 40, ..ok.clone() },
        ModelConfig { input_size: 16, ..ok.clone() },
        ModelConfig { frames: 5, ..ok.clone() },
        ModelConfig { frames: 2, ..ok.clone() },
        ModelConfig { stage_channels: vec![8, 8, 8], ..ok.clone() },
    ] {
        assert!(matches!(Network::new(bad, 0), Err(Error::InvalidConfig(_))));
    }
}

#[test]
fn branch2d_identical_frames_match_single_frame() {
    let tax = Taxonomy::with_counts([2, 2, 2, 2, 2, 2]);
    let net = Network::new(ModelConfig::tiny(Mode::Branch2dOnly, 8, &tax), 3).unwrap();
    let one = random(&[2, 3, 1, 32, 32], 12);
    let clip = permute_frames_to(&one, &[0; 8]);
    let a = net.forward(&clip).unwrap().logits;
    let b = net.forward(&one).unwrap().logits;
    assert!(max_diff(&a, &b) <= 1e-5);
}

#[test]
fn fusion_adds_parameters() {
    let tax = Taxonomy::with_counts([2, 2, 2, 2, 2, 0]);
    let count = |mode| Network::new(ModelConfig::new(mode, 16, &tax), 0).unwrap().num_params();
    let r3d = count(Mode::Resnet3d);
    let hat = count(Mode::Hatnet);
    assert!(r3d < hat, "{r3d} vs {hat}");
    assert_eq!(r3d, count(Mode::Branch3dOnly));
    assert!(count(Mode::Branch2dOnly) < r3d);
}

#[test]
fn forward_is_deterministic() {
    let tax = Taxonomy::with_counts([1, 1, 1, 1, 1, 1]);
    let x = random(&[2, 3, 4, 32, 32], 13);
    let a = Network::new(tiny(Mode::Hatnet, &tax), 9).unwrap();
    let b = Network::new(tiny(Mode::Hatnet, &tax), 9).unwrap();
    let ya = a.forward(&x).unwrap();
    assert_eq!(ya, a.forward(&x).unwrap());
    assert_eq!(ya, b.forward(&x).unwrap());
    let (yt, _) = a.forward_train(&x).unwrap();
    assert_eq!(yt, b.forward_train(&x).unwrap().0);
}

#[test]
fn parameter_names_are_unique_paths() {
    let tax = Taxonomy::with_counts([1, 1, 1, 1, 1, 1]);
    let cfg = ModelConfig {
        head_mode: HeadMode::Multitask,
        ..tiny(Mode::Hatnet, &tax)
    };
    let names = Network::new(cfg, 0).unwrap().param_names();
    let mut sorted = names.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), names.len());
    assert!(names.contains(&"b2d.stem.conv.weight".into()));
    assert!(names.contains(&"b3d.stage2.block0.shortcut.conv.weight".into()));
    assert!(names.contains(&"merge4.conv.weight".into()));
    assert!(names.contains(&"merge4.norm.beta".into()));
    assert!(!names.contains(&"merge4.conv.bias".into()));
    assert!(names.contains(&"head.action.weight".into()));
}

fn check_plan(cfg: ModelConfig, frames: usize) {
    let net = Network::new(cfg.clone(), 0).unwrap();
    let s = cfg.input_size;
    let x = Tensor::zeros(&[1, 3, frames, s, s]);
    let actual = net.traced_shapes(&x).unwrap();
    assert_eq!(actual, cfg.shape_plan(1, frames), "{cfg:?}");
}

#[test]
fn shape_plan_matches_default_resolution() {
    let tax = Taxonomy::with_counts([1, 0, 1, 0, 0, 0]);
    let plan = ModelConfig::new(Mode::Hatnet, 16, &tax).shape_plan(2, 16);
    assert_eq!(plan.stem, [2, 64, 16, 56, 56]);
    assert_eq!(plan.stages[0], [2, 64, 16, 56, 56]);
    assert_eq!(plan.stages[1], [2, 128, 16, 28, 28]);
    assert_eq!(plan.stages[3], [2, 512, 16, 7, 7]);
    assert_eq!(plan.features, [2, 512]);
    let r50 = ModelConfig {
        backbone: Backbone::R50,
        ..ModelConfig::new(Mode::Hatnet, 16, &tax)
    };
    assert_eq!(r50.shape_plan(1, 16).features, [1, 2048]);
}

/// Every point of the (T, S, backbone) grid. Widths are kept small since
/// only the shapes are under test.
#[test]
fn shape_plan_agrees_with_tensors_over_grid() {
    let tax = Taxonomy::with_counts([1, 0, 1, 0, 0, 0]);
    for backbone in [Backbone::R18, Backbone::R50] {
        for frames in [8, 16, 32] {
            for s in [32, 64, 112] {
                let cfg = ModelConfig {
                    backbone,
                    input_size: s,
                    stage_channels: vec![2, 2, 2, 2],
                    ..ModelConfig::new(Mode::Hatnet, frames, &tax)
                };
                check_plan(cfg, frames);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn shape_plan_agrees_for_random_widths(
        widths in proptest::collection::vec(1usize..5, 4),
        mode in prop_oneof![Just(Mode::Hatnet), Just(Mode::Resnet3d), Just(Mode::Branch2dOnly)],
        r50 in any::<bool>(),
        frames in prop_oneof![Just(4usize), Just(8)],
        s in prop_oneof![Just(32usize), Just(48)],
    ) {
        let tax = Taxonomy::with_counts([1, 1, 0, 0, 0, 0]);
        let cfg = ModelConfig {
            backbone: if r50 { Backbone::R50 } else { Backbone::R18 },
            input_size: s,
            stage_channels: widths,
            ..ModelConfig::new(mode, frames, &tax)
        };
        check_plan(cfg, frames);
    }

    #[test]
    fn merged_output_is_non_negative(seed in any::<u64>()) {
        let m = MergeReduce::new(3, true, &mut rng(seed));
        let a = random(&[1, 3, 2, 3, 3], seed ^ 1);
        let b = random(&[1, 3, 2, 3, 3], seed ^ 2);
        let (y, _) = m.forward(&a, &b).unwrap();
        prop_assert!(y.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn multitask_width_equals_label_count(counts in proptest::array::uniform6(0usize..4)) {
        prop_assume!(counts.iter().sum::<usize>() > 0);
        let tax = Taxonomy::with_counts(counts);
        let cfg = ModelConfig {
            head_mode: HeadMode::Multitask,
            stage_channels: vec![2, 2, 2, 2],
            ..ModelConfig::tiny(Mode::Resnet3d, 4, &tax)
        };
        let net = Network::new(cfg, 0).unwrap();
        let out = net.head.forward(&Tensor::zeros(&[3, 2])).unwrap();
        prop_assert_eq!(out.logits.shape(), &[3, tax.len()][..]);
        let total: usize = out.blocks.unwrap().iter().map(|b| b.dim(1)).sum();
        prop_assert_eq!(total, tax.len());
    }
}

fn get_value(net: &Network, target: &str, idx: usize) -> f64 {
    let mut v = 0.0;
    net.visit("", &mut |n, p: &Param| {
        if n == target {
            v = p.value.data()[idx];
        }
    });
    v
}

fn set_value(net: &mut Network, target: &str, idx: usize, value: f64) {
    net.visit_mut("", &mut |n, p: &mut Param| {
        if n == target {
            p.value.data_mut()[idx] = value;
        }
    });
}

/// Analytic BCE gradients of the tiny network against central differences
/// for 16 parameters drawn uniformly over all scalar parameters.
fn gradient_check(mode: Mode, head_mode: HeadMode, seed: u64) {
    let tax = Taxonomy::with_counts([2, 1, 2, 1, 1, 1]);
    let cfg = ModelConfig {
        head_mode,
        ..tiny(mode, &tax)
    };
    let mut net = Network::new(cfg, seed).unwrap();
    let x = random(&[2, 3, 4, 32, 32], seed + 100);
    let mut r = rng(seed + 200);
    let y: Vec<f64> = (0..16).map(|_| if r.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
    let targets = TargetMatrix::full(Tensor::from_vec(&[2, 8], y).unwrap());

    let (out, cache) = net.forward_train(&x).unwrap();
    let (_, dlogits) = bce_loss_with_grad(&out.logits, &targets).unwrap();
    net.zero_grad();
    net.backward(&cache, &dlogits).unwrap();

    let mut params: Vec<(alloc::string::String, usize, f64)> = Vec::new();
    net.visit("", &mut |n, p| {
        for i in 0..p.value.len() {
            params.push((n.into(), i, p.grad.data()[i]));
        }
    });
    let loss = |net: &Network| bce_loss(&net.forward_train(&x).unwrap().0.logits, &targets).unwrap();
    // Many stem outputs sit close to a ReLU kink, so the step stays small.
    let h = 1e-6;
    let mut failures = Vec::new();
    for _ in 0..16 {
        let (name, idx, analytic) = params[r.random_range(0..params.len())].clone();
        let orig = get_value(&net, &name, idx);
        set_value(&mut net, &name, idx, orig + h);
        let fp = loss(&net);
        set_value(&mut net, &name, idx, orig - h);
        let fm = loss(&net);
        set_value(&mut net, &name, idx, orig);
        let numeric = (fp - fm) / (2.0 * h);
        let scale = analytic.abs().max(numeric.abs());
        let rel = if scale < 1e-9 { 0.0 } else { (analytic - numeric).abs() / scale };
        if rel > 1e-3 {
            failures.push((name, idx, analytic, numeric, rel));
        }
    }
    assert!(failures.is_empty(), "{mode:?}: {failures:?}");
}

#[test]
fn tiny_hatnet_gradients_match_finite_differences() {
    gradient_check(Mode::Hatnet, HeadMode::Single, 1);
    gradient_check(Mode::Hatnet, HeadMode::Multitask, 2);
}

#[test]
fn single_branch_gradients_match_finite_differences() {
    gradient_check(Mode::Resnet3d, HeadMode::Single, 3);
    gradient_check(Mode::Branch2dOnly, HeadMode::Single, 4);
}


use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck;
use crate::tensor::kernels::{conv2d, reflect};
use crate::tensor::{Backend, Eager, Padding, Tape};

fn random(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// Windowed std-dev on an explicitly mirrored copy, one pixel at a time.
fn local_sd_oracle(x: &Tensor<f64>) -> Tensor<f64> {
    let (c, h, w) = x.dims3().unwrap();
    Tensor::from_fn(&[c, h, w], |i| {
        let (ch, y, xx) = (i / (h * w), (i / w) % h, i % w);
        let mut vals = Vec::with_capacity(9);
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let sy = reflect(y as isize + dy, h);
                let sx = reflect(xx as isize + dx, w);
                vals.push(x.data()[ch * h * w + sy * w + sx]);
            }
        }
        let m = vals.iter().sum::<f64>() / 9.0;
        let v = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 9.0;
        (v + 1e-5).sqrt()
    })
}

fn eager_local_sd(x: &Tensor<f64>) -> Tensor<f64> {
    let mut e = Eager;
    let h = e.constant(x.clone());
    (*local_sd(&mut e, &h).unwrap()).clone()
}

fn bind(w: &Weights<Tensor<f64>>) -> Weights<Rc<Tensor<f64>>> {
    w.map(&mut |_, t| Ok(Rc::new(t.clone()))).unwrap()
}

fn tiny_arch() -> ArchConfig {
    ArchConfig { blocks: 1, channels: 4, reduction: 2, ..ArchConfig::default() }
}

#[test]
fn local_sd_of_constant_is_eps_floor() {
    for c in [0.0, 1.0, -3.5, 200.0] {
        let out = eager_local_sd(&Tensor::full(&[2, 5, 5], c));
        for v in out.data() {
            assert!((v - 1e-5f64.sqrt()).abs() < 1e-9, "{v}");
        }
    }
}

#[test]
fn local_sd_interior_window() {
    // Center pixel of a 3x3 image holding 0..8 sees the whole image.
    let x = Tensor::from_fn(&[1, 3, 3], |i| i as f64);
    let out = eager_local_sd(&x);
    let expect = (204.0f64 / 9.0 - 16.0 + 1e-5).sqrt();
    assert!((out.data()[4] - expect).abs() < 1e-12);
    assert!((expect - 2.58199).abs() < 1e-5);
}

#[test]
fn local_sd_matches_mirror_oracle() {
    for seed in 0..10 {
        let x = random(&[3, 7, 9], seed, 2.0);
        assert!(eager_local_sd(&x).max_abs_diff(&local_sd_oracle(&x)) < 1e-6);
    }
    // f32 storage stays within the same tolerance on unit-scale inputs.
    let x = random(&[3, 8, 8], 42, 1.0);
    let out32 = {
        let mut e = Eager;
        let h = e.constant(x.cast::<f32>());
        (*local_sd(&mut e, &h).unwrap()).clone()
    };
    assert!(out32.cast::<f64>().max_abs_diff(&local_sd_oracle(&x)) < 1e-6);
}

fn sdgw_params(cb: usize, seed: u64) -> SdgwParams<Tensor<f64>> {
    SdgwParams {
        feat_conv: Conv { kernel: random(&[cb, cb, 3, 3], seed, 0.5), bias: random(&[cb], seed + 1, 0.1) },
        weight_conv: Some(Conv { kernel: random(&[cb, cb, 1, 1], seed + 2, 0.5), bias: random(&[cb], seed + 3, 0.1) }),
    }
}

fn run_sdgw(x: &Tensor<f64>, p: &SdgwParams<Tensor<f64>>) -> (Tensor<f64>, Option<Tensor<f64>>) {
    let mut e = Eager;
    let xh = e.constant(x.clone());
    let ph = p.map("", &mut |_, t| Ok(Rc::new(t.clone()))).unwrap();
    let (out, gate) = sdgw_forward(&mut e, &xh, &ph).unwrap();
    ((*out).clone(), gate.map(|g| (*g).clone()))
}

#[test]
fn sdgw_zero_weight_conv_halves_features() {
    let x = random(&[2, 6, 6], 1, 1.0);
    let mut p = sdgw_params(2, 10);
    let wc = p.weight_conv.as_mut().unwrap();
    wc.kernel = Tensor::zeros(wc.kernel.shape());
    wc.bias = Tensor::zeros(&[2]);
    let (out, gate) = run_sdgw(&x, &p);
    assert!(gate.unwrap().data().iter().all(|&g| g == 0.5));
    let feat = conv2d(&x, &p.feat_conv.kernel, &p.feat_conv.bias, Padding::Zero).unwrap();
    assert!(out.max_abs_diff(&feat.map(|v| 0.5 * v)) < 1e-12);
}

#[test]
fn sdgw_saturated_gate_passes_features() {
    let x = random(&[2, 6, 6], 2, 1.0);
    let mut p = sdgw_params(2, 20);
    let wc = p.weight_conv.as_mut().unwrap();
    wc.kernel = Tensor::zeros(wc.kernel.shape());
    wc.bias = Tensor::full(&[2], 100.0);
    let (out, _) = run_sdgw(&x, &p);
    let feat = conv2d(&x, &p.feat_conv.kernel, &p.feat_conv.bias, Padding::Zero).unwrap();
    assert!(out.max_abs_diff(&feat) < 1e-6);
}

#[test]
fn sdgw_matches_composition_of_primitives() {
    let x = random(&[2, 6, 6], 3, 1.0);
    let p = sdgw_params(2, 30);
    let (out, gate) = run_sdgw(&x, &p);
    let feat = conv2d(&x, &p.feat_conv.kernel, &p.feat_conv.bias, Padding::Zero).unwrap();
    let sd = local_sd_oracle(&x);
    let wc = p.weight_conv.as_ref().unwrap();
    let logits = conv2d(&sd, &wc.kernel, &wc.bias, Padding::None).unwrap();
    let expect_gate = logits.map(|v| 1.0 / (1.0 + (-v).exp()));
    let gate = gate.unwrap();
    assert!(gate.max_abs_diff(&expect_gate) < 1e-9);
    assert!(gate.data().iter().all(|&g| g > 0.0 && g < 1.0));
    let expect = Tensor::from_fn(feat.shape(), |i| feat.data()[i] * expect_gate.data()[i]);
    assert!(out.max_abs_diff(&expect) < 1e-9);
}

fn fbgw_params(cb: usize, pe: bool, seed: u64) -> FbgwParams<Tensor<f64>> {
    let r = 1;
    let cr = cb / r;
    let conv = |co: usize, ci: usize, s: u64| Conv { kernel: random(&[co, ci, 1, 1], s, 0.5), bias: random(&[co], s + 1, 0.1) };
    FbgwParams {
        decouple_conv: conv(cb, 2 * cb + if pe { 2 } else { 0 }, seed),
        cls_avg: Classifier { conv1: conv(cr, cb, seed + 2), conv2: conv(cb, cr, seed + 4) },
        cls_max: Classifier { conv1: conv(cr, cb, seed + 6), conv2: conv(cb, cr, seed + 8) },
        recouple_conv: conv(2 * cb, cb, seed + 10),
    }
}

fn run_fbgw(x: &Tensor<f64>, p: &FbgwParams<Tensor<f64>>, pe: bool) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let mut e = Eager;
    let xh = e.constant(x.clone());
    let ph = p.map("", &mut |_, t| Ok(Rc::new(t.clone())))?;
    let (out, w) = fbgw_forward(&mut e, &xh, &ph, pe)?;
    Ok(((*out).clone(), (*w).clone()))
}

fn zero_classifier(c: &mut Classifier<Tensor<f64>>) {
    for conv in [&mut c.conv1, &mut c.conv2] {
        conv.kernel = Tensor::zeros(conv.kernel.shape());
        conv.bias = Tensor::zeros(conv.bias.shape());
    }
}

#[test]
fn fbgw_zero_logits_give_unit_weights() {
    let x = random(&[2, 8, 8], 4, 1.0);
    let mut p = fbgw_params(2, true, 40);
    zero_classifier(&mut p.cls_avg);
    zero_classifier(&mut p.cls_max);
    let (out, w) = run_fbgw(&x, &p, true).unwrap();
    assert!(w.data().iter().all(|&v| v == 1.0));

    // Same pipeline without reweighting, assembled from primitives.
    let spec = crate::tensor::rfft2(&x).unwrap();
    let pe = position_embedding::<f64>(8, 5);
    let feats = crate::tensor::kernels::concat_channels(&[&spec.re, &spec.im, &pe]).unwrap();
    let bands = conv2d(&feats, &p.decouple_conv.kernel, &p.decouple_conv.bias, Padding::None).unwrap();
    let rec = conv2d(&bands, &p.recouple_conv.kernel, &p.recouple_conv.bias, Padding::None).unwrap();
    let re = crate::tensor::kernels::slice_channels(&rec, 0, 2).unwrap();
    let im = crate::tensor::kernels::slice_channels(&rec, 2, 2).unwrap();
    let expect = crate::tensor::irfft2(&ComplexTensorF64::new(re, im).unwrap(), 8).unwrap();
    assert!(out.max_abs_diff(&expect) < 1e-9);
}

type ComplexTensorF64 = crate::tensor::ComplexTensor<f64>;

#[test]
fn fbgw_inverse_pair_reproduces_input() {
    // Even-symmetric inputs have purely real spectra, so keeping only the
    // real block through decouple/recouple is lossless.
    let (cb, h, w) = (2, 8, 8);
    let x = Tensor::from_fn(&[cb, h, w], |i| {
        let (c, y, xx) = (i / (h * w), (i / w) % h, i % w);
        let t = std::f64::consts::TAU;
        1.0 + c as f64 + (t * y as f64 / h as f64).cos() * 0.7 + (t * 2.0 * xx as f64 / w as f64).cos() * (0.3 + c as f64)
    });
    let mut p = fbgw_params(cb, true, 50);
    zero_classifier(&mut p.cls_avg);
    zero_classifier(&mut p.cls_max);
    p.decouple_conv.kernel = Tensor::from_fn(&[cb, 2 * cb + 2, 1, 1], |i| {
        let (o, ci) = (i / (2 * cb + 2), i % (2 * cb + 2));
        if o == ci { 1.0 } else { 0.0 }
    });
    p.decouple_conv.bias = Tensor::zeros(&[cb]);
    p.recouple_conv.kernel = Tensor::from_fn(&[2 * cb, cb, 1, 1], |i| {
        let (o, ci) = (i / cb, i % cb);
        if o == ci { 1.0 } else { 0.0 }
    });
    p.recouple_conv.bias = Tensor::zeros(&[2 * cb]);
    let (out, _) = run_fbgw(&x, &p, true).unwrap();
    assert!(out.max_abs_diff(&x) < 1e-5);
}

#[test]
fn fbgw_weights_stay_in_range() {
    for seed in 0..20 {
        let x = random(&[4, 8, 6], seed, 3.0);
        let mut p = fbgw_params(4, true, 100 + seed);
        // Large parameters push logits toward saturation.
        p.cls_avg.conv2.bias = random(&[4], seed, 30.0);
        let (_, w) = run_fbgw(&x, &p, true).unwrap();
        assert!(w.data().iter().all(|&v| (0.0..=2.0).contains(&v)));
    }
}

#[test]
fn fbgw_rejects_degenerate_sizes() {
    let p = fbgw_params(2, true, 60);
    let err = run_fbgw(&random(&[2, 1, 8], 0, 1.0), &p, true).unwrap_err();
    assert_eq!(err.kind(), "dimension");
    assert!(run_fbgw(&random(&[2, 8, 8], 0, 1.0), &p, false).is_err());
}

#[test]
fn reduction_must_divide_branch_width() {
    let arch = ArchConfig { channels: 6, reduction: 2, ..ArchConfig::default() };
    assert_eq!(ModelParams::<f32>::init(&arch, 0).unwrap_err().kind(), "config");
    let odd = ArchConfig { channels: 7, ..ArchConfig::default() };
    assert_eq!(odd.validate().unwrap_err().kind(), "config");
}

fn run_block(x: &Tensor<f64>, m: &ModelParams<f64>) -> Tensor<f64> {
    let mut e = Eager;
    let xh = e.constant(x.clone());
    let w = bind(&m.weights);
    (*sfe_block_forward(&mut e, &xh, &w.blocks[0], &m.arch, &mut |_| {}).unwrap()).clone()
}

#[test]
fn block_with_zero_fuse_is_identity() {
    let arch = ArchConfig { blocks: 1, channels: 8, reduction: 2, ..ArchConfig::default() };
    let mut m = ModelParams::<f64>::init(&arch, 3).unwrap();
    let fuse = &mut m.weights.blocks[0].fuse_conv;
    fuse.kernel = Tensor::zeros(fuse.kernel.shape());
    let x = random(&[8, 8, 8], 5, 1.0);
    assert_eq!(run_block(&x, &m), x);
}

#[test]
fn block_preserves_shape() {
    for c in [4, 8, 16] {
        for hw in [8, 16] {
            let arch = ArchConfig { blocks: 1, channels: c, reduction: 2, ..ArchConfig::default() };
            let m = ModelParams::<f64>::init(&arch, 1).unwrap();
            let x = random(&[c, hw, hw], 2, 1.0);
            assert_eq!(run_block(&x, &m).shape(), x.shape());
        }
    }
}

#[test]
fn sdgw_ablation_removes_only_the_gate_path() {
    let full = tiny_arch();
    let v3 = full.clone().with_variant(Variant::V2);
    let mf = ModelParams::<f64>::init(&full, 0).unwrap();
    let mv = ModelParams::<f64>::init(&v3, 0).unwrap();
    let names = |m: &ModelParams<f64>| m.weights.named().into_iter().map(|(n, _)| n).collect::<Vec<_>>();
    let (nf, nv) = (names(&mf), names(&mv));
    let removed: Vec<_> = nf.iter().filter(|n| !nv.contains(n)).collect();
    assert!(!removed.is_empty());
    assert!(removed.iter().all(|n| n.contains(".weight_conv.")));
    assert!(nv.iter().all(|n| nf.contains(n)));

    // Without gates the spatial unit is exactly its 3x3 conv.
    let x = random(&[2, 6, 6], 9, 1.0);
    let mut p = sdgw_params(2, 70);
    p.weight_conv = None;
    let (out, gate) = run_sdgw(&x, &p);
    assert!(gate.is_none());
    assert_eq!(out, conv2d(&x, &p.feat_conv.kernel, &p.feat_conv.bias, Padding::Zero).unwrap());
}

#[test]
fn position_embedding_ablation_changes_structure_and_output() {
    let on = tiny_arch();
    let off = on.clone().with_variant(Variant::V5);
    let m_on = ModelParams::<f64>::init(&on, 11).unwrap();
    let m_off = ModelParams::<f64>::init(&off, 11).unwrap();
    let FreqUnit::Fbgw(p_off) = &m_off.weights.blocks[0].fbgw[0] else { panic!() };
    let FreqUnit::Fbgw(p_on) = &m_on.weights.blocks[0].fbgw[0] else { panic!() };
    assert_eq!(p_off.decouple_conv.kernel.shape()[1], 4);
    assert_eq!(p_on.decouple_conv.kernel.shape()[1], 6);

    // Same parameters apart from the two coordinate input columns.
    let mut shared = m_on.clone();
    shared.arch = off.clone();
    let FreqUnit::Fbgw(p) = &mut shared.weights.blocks[0].fbgw[0] else { panic!() };
    p.decouple_conv.kernel = Tensor::from_fn(&[2, 4, 1, 1], |i| p_on.decouple_conv.kernel.data()[(i / 4) * 6 + i % 4]);
    let FreqUnit::Fbgw(p) = &mut shared.weights.blocks[0].fbgw[1] else { panic!() };
    let FreqUnit::Fbgw(p_on1) = &m_on.weights.blocks[0].fbgw[1] else { panic!() };
    p.decouple_conv.kernel = Tensor::from_fn(&[2, 4, 1, 1], |i| p_on1.decouple_conv.kernel.data()[(i / 4) * 6 + i % 4]);
    shared.check_layout().unwrap();

    let x = random(&[1, 8, 8], 12, 1.0);
    let a = m_on.infer(&x).unwrap();
    let b = shared.infer(&x).unwrap();
    assert!(a.max_abs_diff(&b) > 1e-6);
}

#[test]
fn zero_tail_outputs_bias() {
    let mut m = ModelParams::<f64>::init(&tiny_arch(), 0).unwrap();
    m.weights.tail_conv.kernel = Tensor::zeros(m.weights.tail_conv.kernel.shape());
    m.weights.tail_conv.bias = Tensor::full(&[1], 0.375);
    let y = m.infer(&random(&[1, 8, 8], 1, 1.0)).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.375));
}

#[test]
fn default_parameter_count() {
    // Closed form for n blocks, C channels, branch width b = C/2, r = 4.
    let (n, c, r) = (8usize, 64usize, 4usize);
    let b = c / 2;
    let conv = |co: usize, ci: usize, k: usize| co * ci * k * k + co;
    let cls = conv(b / r, b, 1) + conv(b, b / r, 1);
    let sdgw = conv(b, b, 3) + conv(b, b, 1);
    let fbgw = conv(b, 2 * b + 2, 1) + 2 * cls + conv(2 * b, b, 1);
    let block = 2 * sdgw + 2 * fbgw + conv(c, c, 3);
    let expect = conv(c, 1, 3) + n * block + conv(1, c, 3);
    assert_eq!(expect, 547_265);
    let m = ModelParams::<f32>::init(&ArchConfig::default(), 0).unwrap();
    assert_eq!(m.param_count(), expect);
}

#[test]
fn forward_on_64x64_is_finite_and_deterministic() {
    let arch = ArchConfig { blocks: 2, channels: 16, ..ArchConfig::default() };
    let m = ModelParams::<f32>::init(&arch, 5).unwrap();
    let x = random(&[1, 64, 64], 3, 1.0).cast::<f32>();
    let a = m.infer(&x).unwrap();
    let b = m.infer(&x).unwrap();
    assert_eq!(a.shape(), &[1, 64, 64]);
    assert!(a.all_finite());
    assert_eq!(a, b);
}

#[test]
fn init_is_deterministic_per_seed() {
    let arch = tiny_arch();
    let a = ModelParams::<f32>::init(&arch, 9).unwrap();
    let b = ModelParams::<f32>::init(&arch, 9).unwrap();
    let c = ModelParams::<f32>::init(&arch, 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.weights.named().iter().filter(|(n, _)| n.ends_with("bias")).all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn init_moments_match_uniform() {
    let m = ModelParams::<f32>::init(&ArchConfig::default(), 4).unwrap();
    let k = &m.weights.blocks[0].fuse_conv.kernel;
    let bound = (1.0 / (64.0 * 9.0f64)).sqrt();
    let mean = k.mean_f64();
    let sd = (k.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / k.len() as f64).sqrt();
    let expect = bound / 3f64.sqrt();
    assert!((sd - expect).abs() < 0.1 * expect);
    assert!(k.data().iter().all(|&v| (v as f64).abs() <= bound + 1e-7));
}

#[test]
fn tiny_model_gradients_match_finite_differences() {
    let arch = tiny_arch();
    let m = ModelParams::<f64>::init(&arch, 21).unwrap();
    let image = random(&[1, 8, 8], 22, 1.0);
    let target = random(&[1, 8, 8], 23, 1.0);
    let names: Vec<String> = m.weights.named().into_iter().map(|(n, _)| n).collect();
    let mut inputs: Vec<Tensor<f64>> = m.weights.named().into_iter().map(|(_, t)| t.clone()).collect();
    inputs.push(image);
    let report = gradcheck::check(&inputs, 1e-3, |tape: &mut Tape<f64>, vars| {
        let (params, img) = vars.split_at(vars.len() - 1);
        let mut it = params.iter();
        let w = layout(&arch)?.map(&mut |_, _| Ok(*it.next().unwrap()))?;
        let y = forward(tape, &img[0], &w, &arch)?;
        let t = tape.constant(target.clone());
        let d = tape.sub(&y, &t)?;
        let d2 = tape.square(&d)?;
        tape.mean(&d2)
    })
    .unwrap();
    let worst = names.get(report.worst_input).cloned().unwrap_or_else(|| "image".into());
    assert!(report.max_rel_error < 1e-4, "{} at {worst}", report.max_rel_error);
}

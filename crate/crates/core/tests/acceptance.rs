//! Acceptance suite: one PASS/FAIL line per criterion on stderr.
//!
//! Criteria 6 to 8 need tens of CPU hours of training and are `#[ignore]`d;
//! run them with `cargo test --test acceptance -- --ignored`. Their trained
//! models are cached under the target temp directory and shared.

mod common;

use std::io::Write;
use std::path::{Path, PathBuf};

use common::{param_values, rng, set_params, uniform};
use objman::datagen::{crossing_sequence, generate_sequence, Family, GroundTruth};
use objman::evalkit::{edit_locality, identity_switch_count, iou_matrix, mean_iou, random_delta};
use objman::inpainter::{evaluate_masked_l1, pretrain_inpainter, EdgeMap, Inpainter, PretrainBatch};
use objman::losses::{
    cis_loss, cycle_consistency_loss, game_objective, object_ibl_loss, read_breakdown, Batch, LossConfig, Phase,
    StepNoise,
};
use objman::objvae::{kl_diag_gaussian, DecodedScene, GaussianPosterior, ObjectLatentSet};
use objman::tensor::{Graph, Tensor};
use objman::trainer::{
    load_checkpoint, networks_from_checkpoint, run, save_checkpoint, train, DataConfig, Preset, RunDir, TrainConfig,
    Trainer, HELD_OUT_SEED_OFFSET,
};
use objman::{ImageTensor, LabelMap, MaskStack, ModelConfig, Networks};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Writes past the test harness's output capture so every run shows the line.
fn report(criterion: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {criterion} [{verdict}] {name}: {detail}");
}

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-12)
}

fn simplex_masks(k: usize, h: usize, w: usize, r: &mut ChaCha8Rng) -> MaskStack<f64> {
    let mut t = uniform(&[k, h, w], -3.0, 3.0, r).map(f64::exp);
    for p in 0..h * w {
        let s: f64 = (0..k).map(|c| t.data()[c * h * w + p]).sum();
        for c in 0..k {
            t.data_mut()[c * h * w + p] /= s;
        }
    }
    MaskStack::new(t).unwrap()
}

fn random_image(h: usize, w: usize, r: &mut ChaCha8Rng) -> ImageTensor {
    ImageTensor::from_fn(h, w, |_, _| [r.random(), r.random(), r.random()])
}

fn random_edges(h: usize, w: usize, r: &mut ChaCha8Rng) -> EdgeMap {
    EdgeMap { height: h, width: w, values: (0..h * w).map(|_| r.random_range(0..2)).collect() }
}

fn posterior(d: usize, r: &mut ChaCha8Rng) -> GaussianPosterior {
    let mean = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
    let logvar = (0..d).map(|_| r.random_range(-2.0..1.0)).collect();
    GaussianPosterior::new(mean, logvar).unwrap()
}

fn kl_by_hand(p: &GaussianPosterior) -> f64 {
    let mut kl = 0.0;
    for (m, lv) in p.mean.iter().zip(&p.logvar) {
        kl += 0.5 * (m * m + lv.exp() - lv - 1.0);
    }
    kl
}

/// Nonlinear per-pixel stand-in for the inpainting network.
fn toy_inpaint(m: f64, c: f64, e: f64) -> f64 {
    (1.3 * c + 0.4 * m - 0.3 * e).sin().abs() * 0.8 + 0.05
}

fn small_model(k: usize) -> ModelConfig {
    ModelConfig { k, appearance_dim: 3, shape_dim: 2, seg_width: 4, inpaint_width: 2, vae_width: 4, fusion_width: 4, ..Default::default() }
}

// ---------------------------------------------------------------- criterion 1

fn cis_instance(r: &mut ChaCha8Rng) -> (f64, f64) {
    let (k, h, w) = (r.random_range(2..4), r.random_range(1..9), r.random_range(1..9));
    let image = random_image(h, w, r);
    let mut masks = simplex_masks(k, h, w, r);
    if r.random_bool(0.3) {
        // one empty channel folded into its neighbour
        let mut t = masks.values().clone();
        for p in 0..h * w {
            t.data_mut()[p + h * w] += t.data()[p];
            t.data_mut()[p] = 0.0;
        }
        masks = MaskStack::new(t).unwrap();
    }
    let edges = random_edges(h, w, r);
    let eps = 10f64.powf(r.random_range(-8.0..-3.0));
    let mut psi = |m: &[f64], ctx: &ImageTensor, e: &EdgeMap| {
        Ok(ImageTensor::from_fn(h, w, |i, j| {
            let p = i * w + j;
            let c = ctx.pixel(i, j);
            [0, 1, 2].map(|ch| toy_inpaint(m[p], c[ch] as f64, e.values[p] as f64) as f32)
        }))
    };
    let got = cis_loss(&mut psi, &masks, &image, &edges, eps).unwrap();

    let mut want = 0.0;
    for kk in 0..k {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..h {
            for j in 0..w {
                let om = masks.get(kk, i, j);
                let x = image.pixel(i, j);
                for ch in 0..3 {
                    let xv = x[ch] as f64;
                    let ctx = (xv * (1.0 - om)) as f32 as f64;
                    let pred = toy_inpaint(om, ctx, edges.get(i, j) as f64) as f32 as f64;
                    num += om * (pred - xv).abs();
                    den += om * xv.abs();
                }
            }
        }
        want += num / (den + eps);
    }
    (got, want)
}

fn ibl_instance(r: &mut ChaCha8Rng) -> (f64, f64) {
    let (k, h, w) = (r.random_range(2..4), r.random_range(1..9), r.random_range(1..9));
    let (na, ns) = (r.random_range(1..5), r.random_range(1..4));
    let cfg = LossConfig {
        beta: r.random_range(0.0..2.0),
        lambda: r.random_range(0.0..2.0),
        recon_sigma: r.random_range(0.05..0.5),
        fused_weight: r.random_range(0.0..2.0),
        ..Default::default()
    };
    let capacity = r.random_range(0.0..3.0);
    let image = random_image(h, w, r);
    let masks = simplex_masks(k, h, w, r);
    let decoded = DecodedScene {
        appearance: uniform(&[k, 3, h, w], 0.0, 1.0, r),
        mask_logits: uniform(&[k, 1, h, w], -5.0, 5.0, r),
        fused: uniform(&[3, h, w], 0.0, 1.0, r),
    };
    let app: Vec<_> = (0..k).map(|_| posterior(na, r)).collect();
    let shp: Vec<_> = (0..k).map(|_| posterior(ns, r)).collect();
    let latents = ObjectLatentSet::from_means(app.clone(), shp.clone()).unwrap();
    let got = object_ibl_loss(&decoded, &masks, &image, &latents, &cfg, capacity).unwrap().total_min_player;

    let inv = 1.0 / (2.0 * cfg.recon_sigma * cfg.recon_sigma);
    let mut recon = 0.0;
    for kk in 0..k {
        for i in 0..h {
            for j in 0..w {
                let om = masks.get(kk, i, j);
                let x = image.pixel(i, j);
                for ch in 0..3 {
                    let d = decoded.appearance.at(&[kk, ch, i, j]) - x[ch] as f64 * om;
                    recon += inv * d * d;
                }
                let prob = 1.0 / (1.0 + (-decoded.mask_logits.at(&[kk, 0, i, j])).exp());
                recon -= om * prob.ln() + (1.0 - om) * (1.0 - prob).ln();
            }
        }
    }
    for i in 0..h {
        for j in 0..w {
            let x = image.pixel(i, j);
            for ch in 0..3 {
                let d = decoded.fused.at(&[ch, i, j]) - x[ch] as f64;
                recon += cfg.fused_weight * inv * d * d;
            }
        }
    }
    let kla: f64 = app.iter().map(|p| (kl_by_hand(p) - capacity).abs()).sum();
    let kls: f64 = shp.iter().map(|p| (kl_by_hand(p) - capacity).abs()).sum();
    (got, recon + cfg.beta * kla + cfg.lambda * kls)
}

fn cycle_instance(nets: &Networks<f64>, seed: u64, r: &mut ChaCha8Rng) -> (f64, f64) {
    let (h, w, k) = (nets.height, nets.width, nets.k());
    let (na, ns) = (nets.config.appearance_dim, nets.config.shape_dim);
    let z: Vec<Vec<f64>> = (0..k).map(|_| (0..na + ns).map(|_| r.random_range(-1.5..1.5)).collect()).collect();
    let sigma_p = r.random_range(0.2..2.0);
    let latents = ObjectLatentSet::from_means(
        z.iter().map(|v| GaussianPosterior::new(v[..na].to_vec(), vec![0.0; na]).unwrap()).collect(),
        z.iter().map(|v| GaussianPosterior::new(v[na..].to_vec(), vec![0.0; ns]).unwrap()).collect(),
    )
    .unwrap();
    let got = cycle_consistency_loss(nets, &latents, &mut rng(seed), sigma_p).unwrap();

    // replay the draws: perturbed object index, then the perturbation
    let noise = StepNoise::<f64>::sample(&mut rng(seed), 1, k, na, ns);
    let mut edited = z.clone();
    for (j, v) in edited[noise.k_star].iter_mut().enumerate() {
        *v += sigma_p * noise.perturbation.at(&[0, j]);
    }
    let fused = nets.decode(&edited).unwrap().fused;
    // re-encode through the plain per-network calls in f64
    let mut g = Graph::new();
    let p = nets.bind_frozen(&mut g);
    let x = g.constant(fused.clone().reshape(&[1, 3, h, w]).unwrap());
    let m = nets.seg.forward(&mut g, &p.seg, x).unwrap();
    let masks = g.value(m).clone();
    let mut want = 0.0;
    for kk in 0..k {
        let mut object = Tensor::<f64>::zeros(&[1, 3, h, w]);
        let mut mask = Tensor::<f64>::zeros(&[1, 1, h, w]);
        for i in 0..h {
            for j in 0..w {
                let om = masks.at(&[0, kk, i, j]);
                mask.set(&[0, 0, i, j], om);
                for ch in 0..3 {
                    object.set(&[0, ch, i, j], fused.at(&[ch, i, j]) * om);
                }
            }
        }
        let mut g = Graph::new();
        let p = nets.bind_frozen(&mut g);
        let ov = g.constant(object);
        let mv = g.constant(mask);
        let (ma, _) = nets.vae.encode_appearance_graph(&mut g, &p.vae, ov).unwrap();
        let (ms, _) = nets.vae.encode_shape_graph(&mut g, &p.vae, mv).unwrap();
        let recovered: Vec<f64> = g.value(ma).data().iter().chain(g.value(ms).data()).copied().collect();
        for (a, b) in edited[kk].iter().zip(&recovered) {
            want += (a - b).abs();
        }
    }
    (got, want)
}

#[test]
fn criterion_1_loss_oracles() {
    let start = std::time::Instant::now();
    let mut r = rng(1001);
    let instances = 120;
    let mut worst = [0.0f64; 3];
    for _ in 0..instances {
        let (a, b) = cis_instance(&mut r);
        worst[0] = worst[0].max(rel_err(a, b));
        let (a, b) = ibl_instance(&mut r);
        worst[1] = worst[1].max(rel_err(a, b));
    }
    for i in 0..instances {
        let k = 2 + i % 2;
        let size = [4, 8][i % 3 / 2];
        let nets = Networks::<f64>::new(&small_model(k), size, size, &mut rng(2000 + i as u64)).unwrap();
        let (a, b) = cycle_instance(&nets, 3000 + i as u64, &mut r);
        worst[2] = worst[2].max(rel_err(a, b));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst.iter().all(|&e| e <= 1e-5) && secs < 60.0;
    report(
        1,
        "loss oracles",
        pass,
        &format!(
            "{instances} instances each; max rel err cis {:.1e}, ibl {:.1e}, cycle {:.1e} (tol 1e-5); {secs:.1}s (limit 60s)",
            worst[0], worst[1], worst[2]
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn criterion_2_end_to_end_gradients() {
    let start = std::time::Instant::now();
    let nets = Networks::<f64>::new(&small_model(2), 8, 8, &mut rng(21)).unwrap();
    let mut r = rng(22);
    let images: Vec<ImageTensor> = (0..2).map(|_| random_image(8, 8, &mut r)).collect();
    let batch = Batch::<f64>::from_images(&images.iter().collect::<Vec<_>>(), 0.1).unwrap();
    let cfg = LossConfig { gamma: 2.0, eta: 0.5, c_max: 1.0, ..Default::default() };
    let noise = StepNoise::sample(&mut rng(23), 2, 2, 3, 2);
    let capacity = 0.3;
    let loss = |n: &Networks<f64>| {
        let mut g = Graph::new();
        let p = n.bind(&mut g);
        let v = game_objective(&mut g, n, &p, &batch, &cfg, capacity, &noise, Phase::Joint).unwrap();
        (g, p, v.total)
    };
    let (g, p, total) = loss(&nets);
    let value = g.value(total).item();
    let grads = g.backward(total).unwrap();
    let analytic = [p.seg.grads(&g, &grads), p.inpainter.grads(&g, &grads), p.vae.grads(&g, &grads)];

    // differencing noise is about |loss|·1e-16/h; gradients far below it are compared absolutely
    let h = 1e-5;
    let floor = 1e-6 * value.abs().max(1.0);
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut groups = std::collections::BTreeMap::<String, usize>::new();
    for (set, grad_set) in analytic.iter().enumerate() {
        let names: Vec<String> = nets.param_sets()[set].1.iter().map(|(n, _)| n.to_string()).collect();
        let values = param_values(nets.param_sets()[set].1);
        for (t, name) in names.iter().enumerate() {
            // module prefix such as `seg`, `inp`, `vae.app`, `vae.shape`, `vae.dec0`
            let group: String = name.split('.').take(2).collect::<Vec<_>>().join(".");
            let group = group.trim_end_matches(|c: char| c.is_ascii_digit()).to_string();
            for _ in 0..2 {
                let j = r.random_range(0..values[t].len());
                let eval = |delta: f64| {
                    let mut vals = values.clone();
                    vals[t].data_mut()[j] += delta;
                    let mut n = nets.clone();
                    set_params(n.param_sets_mut()[set].1, &vals);
                    let (g, _, l) = loss(&n);
                    g.value(l).item()
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let a = grad_set[t].data()[j];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
                worst = worst.max(err);
                checked += 1;
                *groups.entry(group.clone()).or_default() += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-2 && secs < 300.0;
    let group_list: Vec<String> = groups.iter().map(|(g, n)| format!("{g}:{n}")).collect();
    report(
        2,
        "end-to-end gradient check",
        pass,
        &format!("{checked} entries over {}; max rel err {worst:.1e} (tol 1e-2); {secs:.1}s (limit 300s)", group_list.join(" ")),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 3

fn log_normal_density(z: &[f64], mean: &[f64], logvar: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((z, m), lv) in z.iter().zip(mean).zip(logvar) {
        s += -0.5 * ((z - m) * (z - m) / lv.exp() + lv + (2.0 * std::f64::consts::PI).ln());
    }
    s
}

#[test]
fn criterion_3_kl_closed_form() {
    let mut r = rng(31);
    let samples = 100_000;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let d = r.random_range(2..9);
        let p = posterior(d, &mut r);
        let std = p.std();
        let zeros = vec![0.0; d];
        let mut acc = 0.0;
        let mut z = vec![0.0; d];
        for _ in 0..samples {
            for i in 0..d {
                let e: f64 = r.sample(StandardNormal);
                z[i] = p.mean[i] + std[i] * e;
            }
            acc += log_normal_density(&z, &p.mean, &p.logvar) - log_normal_density(&z, &zeros, &zeros);
        }
        let mc = acc / samples as f64;
        worst = worst.max(rel_err(kl_diag_gaussian(&p), mc));
    }
    let standard = kl_diag_gaussian(&GaussianPosterior::standard(5));
    let shifted = kl_diag_gaussian(&GaussianPosterior::new(vec![1.0, 0.0, 0.0], vec![0.0; 3]).unwrap());
    let anchors = standard.abs() <= 1e-9 && (shifted - 0.5).abs() <= 1e-9;
    let pass = worst <= 0.02 && anchors;
    report(
        3,
        "KL closed form",
        pass,
        &format!("20 posteriors, 1e5 samples: max rel dev {worst:.4} (tol 0.02); anchors {standard:e} and {shifted} (tol 1e-9)"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 4

fn labels(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> u8) -> LabelMap {
    let mut m = LabelMap::new(h, w);
    m.labels = (0..h * w).map(|p| f(p / w, p % w)).collect();
    m
}

#[test]
fn criterion_4_invariants() {
    let mut failures = Vec::new();
    let mut r = rng(41);

    // simplex on arbitrary inputs, including values far outside [0, 1]
    let mut simplex_err = 0.0f64;
    for i in 0..20 {
        let seg = Networks::<f64>::new(&small_model(2 + i % 4), 8, 8, &mut rng(400 + i as u64)).unwrap().seg;
        let scale = [1.0, 10.0, 1e3][i % 3];
        let x = uniform(&[2, 3, 8, 8], -scale, scale, &mut r);
        let mut g = Graph::new();
        let p = seg.params.bind_frozen(&mut g);
        let xv = g.constant(x);
        let m = seg.forward(&mut g, &p, xv).unwrap();
        let v = g.value(m);
        let k = v.shape()[1];
        for n in 0..2 {
            for q in 0..64 {
                let s: f64 = (0..k).map(|c| v.data()[(n * k + c) * 64 + q]).sum();
                simplex_err = simplex_err.max((s - 1.0).abs());
            }
        }
    }
    let f32_seg = Networks::<f32>::new(&small_model(3), 16, 16, &mut rng(49)).unwrap().seg;
    for _ in 0..5 {
        simplex_err = simplex_err.max(f32_seg.segment(&random_image(16, 16, &mut r)).unwrap().simplex_error());
    }
    if simplex_err > 1e-5 {
        failures.push(format!("simplex error {simplex_err:e}"));
    }

    // an all-zero channel adds nothing to the inpainting-separation loss
    let mut zero_gap = 0.0f64;
    for _ in 0..20 {
        let (h, w) = (6, 5);
        let image = random_image(h, w, &mut r);
        let edges = random_edges(h, w, &mut r);
        let base = simplex_masks(2, h, w, &mut r);
        let mut padded = Tensor::<f64>::zeros(&[3, h, w]);
        padded.data_mut()[h * w..].copy_from_slice(base.values().data());
        let padded = MaskStack::new(padded).unwrap();
        let mut psi = |m: &[f64], ctx: &ImageTensor, e: &EdgeMap| {
            Ok(ImageTensor::from_fn(h, w, |i, j| {
                let c = ctx.pixel(i, j);
                [0, 1, 2].map(|ch| toy_inpaint(m[i * w + j], c[ch] as f64, e.get(i, j) as f64) as f32)
            }))
        };
        let a = cis_loss(&mut psi, &base, &image, &edges, 1e-6).unwrap();
        let b = cis_loss(&mut psi, &padded, &image, &edges, 1e-6).unwrap();
        zero_gap = zero_gap.max((a - b).abs());
    }
    if zero_gap != 0.0 {
        failures.push(format!("zero channel changed the loss by {zero_gap:e}"));
    }

    // γ = η = 0 leaves exactly the information-bottleneck sum
    let mut bitwise = true;
    for seed in 0..5u64 {
        let nets = Networks::<f64>::new(&small_model(3), 8, 8, &mut rng(450 + seed)).unwrap();
        let images: Vec<ImageTensor> = (0..2).map(|_| random_image(8, 8, &mut r)).collect();
        let batch = Batch::from_images(&images.iter().collect::<Vec<_>>(), 0.1).unwrap();
        let cfg = LossConfig { gamma: 0.0, eta: 0.0, beta: r.random_range(0.1..2.0), lambda: r.random_range(0.1..2.0), ..Default::default() };
        let noise = StepNoise::sample(&mut r, 2, 3, 3, 2);
        let mut g = Graph::new();
        let p = nets.bind(&mut g);
        let v = game_objective(&mut g, &nets, &p, &batch, &cfg, 0.5, &noise, Phase::Joint).unwrap();
        let bd = read_breakdown(&g, &v, 0.5).unwrap();
        let ibl = bd.recon + cfg.beta * bd.kl_appearance + cfg.lambda * bd.kl_shape;
        bitwise &= bd.total_min_player.to_bits() == ibl.to_bits() && g.value(v.total).item().to_bits() == ibl.to_bits();
    }
    if !bitwise {
        failures.push("γ = η = 0 total differs from the bottleneck sum".into());
    }

    // matched mIoU ignores channel order
    let mut perm_gap = 0.0f64;
    for _ in 0..50 {
        let truth = labels(8, 8, |_, _| r.random_range(0..3));
        let gt = GroundTruth::from_label_map(truth, 2, vec![1.0; 2]);
        let pred = simplex_masks(4, 8, 8, &mut r);
        let (a, _) = mean_iou(&pred, &gt).unwrap();
        let order = [2usize, 0, 3, 1];
        let mut t = Tensor::<f64>::zeros(&[4, 8, 8]);
        for (dst, &src) in order.iter().enumerate() {
            t.data_mut()[dst * 64..][..64].copy_from_slice(pred.channel(src));
        }
        let (b, _) = mean_iou(&MaskStack::new(t).unwrap(), &gt).unwrap();
        perm_gap = perm_gap.max((a - b).abs());
    }
    if perm_gap > 1e-12 {
        failures.push(format!("channel permutation moved mIoU by {perm_gap:e}"));
    }

    // anchors
    let truth = labels(8, 8, |i, j| u8::from(i < 4) + u8::from(i < 4 && j < 4));
    let gt = GroundTruth::from_label_map(truth.clone(), 2, vec![1.0; 2]);
    let perfect = mean_iou(&MaskStack::<f64>::one_hot(&truth, 3).unwrap(), &gt).unwrap().0;
    // object in the top-left corner, predicted object in the bottom-right corner
    let corner = labels(8, 8, |i, j| u8::from(i < 3 && j < 3));
    let far = labels(8, 8, |i, j| u8::from(i >= 5 && j >= 5));
    let (_, m) = mean_iou(
        &MaskStack::<f64>::one_hot(&far, 2).unwrap(),
        &GroundTruth::from_label_map(corner.clone(), 1, vec![1.0]),
    )
    .unwrap();
    let disjoint = iou_matrix(&far, 2, &corner, 2).unwrap()[1][1];
    let disjoint_mean = m.mean_objects_only();
    let a = labels(8, 8, |i, j| u8::from((2..6).contains(&i) && j < 4));
    let b = labels(8, 8, |i, j| u8::from((2..6).contains(&i) && (2..6).contains(&j)));
    let half = iou_matrix(&a, 2, &b, 2).unwrap()[1][1];
    if perfect != 1.0 || disjoint != 0.0 || disjoint_mean != 0.0 || (half - 1.0 / 3.0).abs() > 1e-12 {
        failures.push(format!("anchors perfect {perfect}, disjoint {disjoint}/{disjoint_mean}, half {half}"));
    }

    let pass = failures.is_empty();
    let detail = if pass {
        format!(
            "simplex err {simplex_err:.1e} (tol 1e-5); zero channel gap {zero_gap}; γ=η=0 bitwise; permutation gap {perm_gap:.1e}; anchors {perfect}, {disjoint}, {half:.6}"
        )
    } else {
        failures.join("; ")
    };
    report(4, "invariant suite", pass, &detail);
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 5

/// Pretraining budget; the criterion allows up to 5000 steps.
const PRETRAIN_STEPS: usize = 1200;

#[test]
fn criterion_5_inpainter_pretraining() {
    let start = std::time::Instant::now();
    let cfg = TrainConfig::default();
    assert_eq!((cfg.data.generator.family, cfg.data.generator.height, cfg.data.generator.width), (Family::Sprites, 64, 64));
    let data = DataConfig { count: 500, ..cfg.data.clone() };
    let pool: Vec<ImageTensor> = data.generate_items(cfg.seed, 0, data.count).unwrap().into_iter().map(|it| it.image).collect();
    let held = data.held_out_items(cfg.seed, 64).unwrap();
    let held: Vec<&ImageTensor> = held.iter().map(|it| &it.image).collect();
    let edge = cfg.model.edge_threshold;
    let eval = PretrainBatch::<f32>::build(&held, &cfg.pretrain, edge, &mut rng(HELD_OUT_SEED_OFFSET)).unwrap();

    let pcfg = objman::inpainter::PretrainConfig { steps: PRETRAIN_STEPS, batch_size: 8, lr: 2e-3, ..cfg.pretrain.clone() };
    let mut r = rng(51);
    let mut inp = Inpainter::<f32>::new(cfg.model.inpaint_width, &mut r).unwrap();
    let before = evaluate_masked_l1(&inp, &eval).unwrap();
    pretrain_inpainter(&mut inp, &pool, &pcfg, edge, &mut r).unwrap();
    let after = evaluate_masked_l1(&inp, &eval).unwrap();
    let reduction = 1.0 - after / before;
    let pass = reduction >= 0.5;
    report(
        5,
        "inpainter pretraining",
        pass,
        &format!(
            "64x64 sprites, {PRETRAIN_STEPS} steps, batch {}: held-out masked L1 {before:.4} -> {after:.4}, reduction {:.1}% (need 50%); {:.0}s",
            pcfg.batch_size,
            100.0 * reduction,
            start.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------- criteria 6 to 8

/// Full-schedule configuration for two-object scenes of `family`.
fn full_scale(family: Family) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.data.generator.family = family;
    cfg.data.generator.min_objects = 2;
    cfg.data.generator.max_objects = 2;
    cfg.model.k = 3;
    cfg.schedule.joint_steps = 50_000;
    cfg.schedule.checkpoint_interval = 5000;
    cfg
}

fn with_preset(mut cfg: TrainConfig, preset: &str) -> TrainConfig {
    let overrides: Vec<String> = preset.parse::<Preset>().unwrap().overrides().iter().map(|s| s.to_string()).collect();
    cfg = TrainConfig::from_toml_with_overrides(&cfg.to_toml(), &overrides).unwrap();
    cfg
}

/// Trains once per name and reuses the cached final checkpoint afterwards.
fn trained(name: &str, cfg: &TrainConfig) -> Networks<f32> {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let dir = RunDir::create(&root).unwrap();
    let path = dir.final_checkpoint();
    let cached = path.exists() && load_checkpoint::<f32>(&path).map(|c| c.config == cfg.to_toml()).unwrap_or(false);
    if !cached {
        let data = cfg.data.training_images(cfg.seed).unwrap();
        train::<f32>(cfg.clone(), &data, Some(&dir)).unwrap();
    }
    networks_from_checkpoint(&load_checkpoint::<f32>(&path).unwrap()).unwrap().1
}

fn held_out_miou(nets: &Networks<f32>, cfg: &TrainConfig, count: usize) -> f64 {
    let items = cfg.data.held_out_items(cfg.seed, count).unwrap();
    let total: f64 = items.iter().map(|it| mean_iou(&nets.seg.segment(&it.image).unwrap(), &it.gt).unwrap().0).sum();
    total / count as f64
}

#[test]
#[ignore = "needs tens of CPU hours of training"]
fn criterion_6_segmentation_direction() {
    let sprites = full_scale(Family::Sprites);
    let full = held_out_miou(&trained("sprites-full", &sprites), &sprites, 200);
    let texture = full_scale(Family::Texture);
    let tex_full = held_out_miou(&trained("texture-full", &texture), &texture, 200);
    let ablation = with_preset(texture.clone(), "monet-like");
    let tex_ablation = held_out_miou(&trained("texture-monet-like", &ablation), &texture, 200);
    let pass = full >= 0.70 && tex_ablation < tex_full;
    report(
        6,
        "segmentation direction",
        pass,
        &format!("sprites full mIoU {full:.3} (need 0.70); texture full {tex_full:.3} vs γ=η=0 {tex_ablation:.3} (need strictly lower)"),
    );
    assert!(pass);
}

fn switched(nets: &Networks<f32>, cfg: &TrainConfig, sequences: usize, frames: usize) -> (usize, usize) {
    let runs: Vec<_> = (0..sequences as u64)
        .map(|i| {
            let seed = cfg.seed.wrapping_add((HELD_OUT_SEED_OFFSET << 1) + i);
            let spec = crossing_sequence(seed, &cfg.data.generator, None, frames).unwrap();
            let (images, gts): (Vec<_>, Vec<_>) = generate_sequence(&spec, &cfg.data.generator, None).unwrap().into_iter().unzip();
            (images.iter().map(|im| nets.seg.segment(im).unwrap()).collect::<Vec<_>>(), gts)
        })
        .collect();
    let rep = identity_switch_count(&runs).unwrap();
    (rep.switched_sequences(), rep.total_sequences())
}

#[test]
#[ignore = "needs tens of CPU hours of training"]
fn criterion_7_identity_switch_direction() {
    let cfg = full_scale(Family::Sprites);
    let with_pc = trained("sprites-full", &cfg);
    let without_pc = trained("sprites-no-pc", &with_preset(cfg.clone(), "no-pc"));
    let (a, n) = switched(&with_pc, &cfg, 255, 8);
    let (b, _) = switched(&without_pc, &cfg, 255, 8);
    let pass = a <= b && (b < 5 || a < b);
    report(7, "identity-switch direction", pass, &format!("η>0 {a}/{n} vs η=0 {b}/{n} switched sequences"));
    assert!(pass);
}

#[test]
#[ignore = "needs tens of CPU hours of training"]
fn criterion_8_manipulation_locality() {
    let cfg = full_scale(Family::Sprites);
    let nets = trained("sprites-full", &cfg);
    let mut r = rng(81);
    let (mut inside, mut outside, mut scenes) = (0.0, 0.0, 0);
    let mut index = 0u64;
    while scenes < 50 && index < 500 {
        let item = cfg.data.generate_items(cfg.seed, HELD_OUT_SEED_OFFSET + index, 1).unwrap().remove(0);
        index += 1;
        let delta = random_delta(&nets, &mut r);
        if let Some(s) = edit_locality(&nets, &item.image, &item.gt, 1, &delta).unwrap() {
            inside += s.inside;
            outside += s.outside;
            scenes += 1;
        }
    }
    let ratio = inside / outside.max(1e-12);
    let pass = scenes == 50 && ratio >= 3.0;
    report(8, "manipulation locality", pass, &format!("{scenes} scenes: inside/outside change {ratio:.2} (need 3)"));
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 9

fn reproducibility_config() -> TrainConfig {
    let mut cfg = TrainConfig { seed: 91, ..Default::default() };
    cfg.data.count = 16;
    cfg.data.generator.height = 16;
    cfg.data.generator.width = 16;
    cfg.model = ModelConfig { k: 3, ..small_model(3) };
    cfg.pretrain.steps = 10;
    cfg.pretrain.batch_size = 2;
    cfg.schedule.warmup_steps = 20;
    cfg.schedule.joint_steps = 220;
    cfg.schedule.batch_size = 2;
    cfg.schedule.log_interval = 1;
    cfg.schedule.checkpoint_interval = 30;
    cfg.loss.gamma = 2.0;
    cfg.optim.lr = 1e-3;
    cfg
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn criterion_9_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = reproducibility_config();
    let data = cfg.data.training_images(cfg.seed).unwrap();
    let dirs: Vec<RunDir> = ["a", "b"].iter().map(|n| RunDir::create(&tmp.path().join(n)).unwrap()).collect();
    for d in &dirs {
        train::<f32>(cfg.clone(), &data, Some(d)).unwrap();
    }
    let same_metrics = read(&dirs[0].metrics_path()) == read(&dirs[1].metrics_path())
        && read(&dirs[0].pretrain_path()) == read(&dirs[1].pretrain_path());
    let same_final = read(&dirs[0].final_checkpoint()) == read(&dirs[1].final_checkpoint());

    // save, load, save again
    let ckpt = load_checkpoint::<f32>(&dirs[0].final_checkpoint()).unwrap();
    let again = tmp.path().join("again.ckpt");
    save_checkpoint(&ckpt, &again).unwrap();
    let round_trip = read(&again) == read(&dirs[0].final_checkpoint()) && load_checkpoint::<f32>(&again).unwrap() == ckpt;

    // resume at step 30 and cover the remaining 200 joint steps
    let resume_at = 30u64;
    let from = load_checkpoint::<f32>(&dirs[0].checkpoint_path(resume_at)).unwrap();
    let resumed_dir = RunDir::create(&tmp.path().join("resumed")).unwrap();
    std::fs::copy(dirs[0].metrics_path(), resumed_dir.metrics_path()).unwrap();
    std::fs::copy(dirs[0].pretrain_path(), resumed_dir.pretrain_path()).unwrap();
    let (mut t, warnings) = Trainer::<f32>::resume(cfg.clone(), &from).unwrap();
    let window = t.total_steps() - t.step();
    run(&mut t, &data, Some(&resumed_dir)).unwrap();
    let resumed = warnings.is_empty()
        && read(&resumed_dir.final_checkpoint()) == read(&dirs[0].final_checkpoint())
        && read(&resumed_dir.metrics_path()) == read(&dirs[0].metrics_path());

    let pass = same_metrics && same_final && round_trip && resumed && window >= 200;
    report(
        9,
        "reproducibility",
        pass,
        &format!(
            "identical metrics {same_metrics}, identical final checkpoints {same_final}, bitwise round trip {round_trip}, resume over {window} steps {resumed}"
        ),
    );
    assert!(pass);
}

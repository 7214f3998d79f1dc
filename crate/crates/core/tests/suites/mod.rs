//! Randomized property suites. Each returns a one-line summary on success and a
//! description of the first violation on failure, so they can back both `#[test]`s and
//! the acceptance report.

#![allow(dead_code)]

use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ycd_core::data::{split_manifest, DatasetManifest, ManifestEntry, Split, SplitPolicy};
use ycd_core::model::{build_arch, ArchSpec, LayerKind, LayerSpec, ModelBundle};
use ycd_core::nnops::reference::{
    conv2d_depthwise_ref, conv2d_pointwise_ref, conv2d_standard_ref, count_by_loops, relative_error,
};
use ycd_core::nnops::{
    conv2d_depthwise, conv2d_pointwise, conv2d_standard, count_costs, cross_entropy, cross_entropy_grad, softmax,
    Activation, ConvParams, Dense, Padding,
};
use ycd_core::{Shape, Tensor};

pub type Outcome = Result<String, String>;

pub const CONV_CASES_PER_VARIANT: usize = 200;
pub const CONV_TOLERANCE: f64 = 1e-5;
pub const GRAD_INSTANCES: usize = 100;
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-3;

fn uniform_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    let n = shape.numel().unwrap();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// f32-representable copy, so the f64 oracle sees exactly the kernel's inputs.
fn f32_exact(t: &Tensor<f64>) -> Tensor<f64> {
    t.cast::<f32>().cast::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvVariant {
    Standard,
    Depthwise,
    Pointwise,
}

fn random_conv(rng: &mut ChaCha8Rng, variant: ConvVariant) -> (ConvParams, Shape, Shape) {
    loop {
        let k = if variant == ConvVariant::Pointwise { 1 } else { *[1, 2, 3, 5].choose(rng).unwrap() };
        let stride = if variant == ConvVariant::Pointwise { 1 } else { rng.random_range(1..=3) };
        let padding = if variant == ConvVariant::Pointwise || rng.random_bool(0.5) {
            Padding::Same
        } else {
            Padding::Valid
        };
        let m = rng.random_range(1..=12);
        let n = rng.random_range(1..=12);
        let input = Shape::new(rng.random_range(1..=2), rng.random_range(1..=13), rng.random_range(1..=13), m);
        let p = ConvParams::new(k, stride, padding, m, n);
        if p.output_len(input.height).is_none() || p.output_len(input.width).is_none() {
            continue;
        }
        let weights = match variant {
            ConvVariant::Standard => Shape::new(k, k, m, n),
            ConvVariant::Depthwise => Shape::new(k, k, m, 1),
            ConvVariant::Pointwise => Shape::new(1, 1, m, n),
        };
        return (p, input, weights);
    }
}

fn run_f32(variant: ConvVariant, x: &Tensor<f64>, w: &Tensor<f64>, p: &ConvParams) -> Tensor<f64> {
    let (x, w) = (x.cast::<f32>(), w.cast::<f32>());
    let out = match variant {
        ConvVariant::Standard => conv2d_standard(&x, &w, p),
        ConvVariant::Depthwise => conv2d_depthwise(&x, &w, p),
        ConvVariant::Pointwise => conv2d_pointwise(&x, &w),
    };
    out.unwrap().cast()
}

fn run_f64(variant: ConvVariant, x: &Tensor<f64>, w: &Tensor<f64>, p: &ConvParams) -> Tensor<f64> {
    match variant {
        ConvVariant::Standard => conv2d_standard(x, w, p),
        ConvVariant::Depthwise => conv2d_depthwise(x, w, p),
        ConvVariant::Pointwise => conv2d_pointwise(x, w),
    }
    .unwrap()
}

fn run_ref(variant: ConvVariant, x: &Tensor<f64>, w: &Tensor<f64>, p: &ConvParams) -> Tensor<f64> {
    match variant {
        ConvVariant::Standard => conv2d_standard_ref(x, w, p),
        ConvVariant::Depthwise => conv2d_depthwise_ref(x, w, p),
        ConvVariant::Pointwise => conv2d_pointwise_ref(x, w),
    }
}

/// Every kernel variant, in f32 and f64, against the naive double-precision oracle on
/// random shapes, strides, and paddings; plus linearity and the pointwise identity.
pub fn conv_oracle(seed: u64) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = Vec::new();
    for variant in [ConvVariant::Standard, ConvVariant::Depthwise, ConvVariant::Pointwise] {
        let mut max_err = 0.0f64;
        for case in 0..CONV_CASES_PER_VARIANT {
            let (p, in_shape, w_shape) = random_conv(&mut rng, variant);
            let x = f32_exact(&uniform_tensor(&mut rng, in_shape));
            let w = f32_exact(&uniform_tensor(&mut rng, w_shape));
            let reference = run_ref(variant, &x, &w, &p);
            for got in [run_f32(variant, &x, &w, &p), run_f64(variant, &x, &w, &p)] {
                if got.shape() != reference.shape() {
                    return Err(format!(
                        "{variant:?} case {case}: shape {} vs oracle {} for {p:?} on {in_shape}",
                        got.shape(),
                        reference.shape()
                    ));
                }
                let err = relative_error(got.data(), reference.data());
                if err > CONV_TOLERANCE {
                    return Err(format!("{variant:?} case {case}: relative error {err:e} for {p:?} on {in_shape}"));
                }
                max_err = max_err.max(err);
            }

            // linearity: f(a·x + b·y) = a·f(x) + b·f(y)
            if case % 4 == 0 {
                let y = uniform_tensor(&mut rng, in_shape);
                let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                let combo = Tensor::from_vec(
                    in_shape,
                    x.data().iter().zip(y.data()).map(|(u, v)| a * u + b * v).collect(),
                )
                .unwrap();
                let lhs = run_f64(variant, &combo, &w, &p);
                let fx = run_f64(variant, &x, &w, &p);
                let fy = run_f64(variant, &y, &w, &p);
                let rhs: Vec<f64> = fx.data().iter().zip(fy.data()).map(|(u, v)| a * u + b * v).collect();
                let err = relative_error(lhs.data(), &rhs);
                if err > 1e-12 {
                    return Err(format!("{variant:?} case {case}: linearity error {err:e}"));
                }
            }
        }
        worst.push(format!("{variant:?} {max_err:.1e}"));
    }

    for m in 1..=9 {
        let x = uniform_tensor(&mut rng, Shape::new(2, 3, 4, m)).cast::<f32>();
        let eye = Tensor::from_fn(Shape::new(1, 1, m, m), |_, _, i, j| if i == j { 1.0f32 } else { 0.0 }).unwrap();
        if !conv2d_pointwise(&x, &eye).unwrap().bitwise_eq(&x) {
            return Err(format!("pointwise identity with {m} channels is not exact"));
        }
    }

    let secs = start.elapsed().as_secs_f64();
    Ok(format!(
        "{} cases per variant; max rel err: {}; {secs:.1}s",
        CONV_CASES_PER_VARIANT,
        worst.join(", ")
    ))
}

fn bare_arch(input_channels: usize, side: usize, layers: Vec<LayerSpec>) -> ArchSpec {
    ArchSpec {
        input_resolution: side,
        width_multiplier: 1.0,
        resolution_multiplier: 1.0,
        input_channels,
        layers,
        embedding_dim: 0,
    }
}

/// Standard vs depthwise-separable MACs for one `(D_K, M, N, D_F)` tuple, measured with
/// `count_costs` and cross-checked with the loop counter.
pub fn separable_vs_standard(dk: usize, m: usize, n: usize, df: usize) -> Result<(u64, u64, u64), String> {
    let std_arch = bare_arch(m, df, vec![LayerSpec::StandardConv(ConvParams::new(dk, 1, Padding::Same, m, n))]);
    let sep_arch = bare_arch(
        m,
        df,
        vec![
            LayerSpec::DepthwiseConv(ConvParams::new(dk, 1, Padding::Same, m, m)),
            LayerSpec::PointwiseConv(ConvParams::pointwise(m, n)),
        ],
    );
    let std_cost = count_costs(&std_arch, df);
    let sep_cost = count_costs(&sep_arch, df);
    let (standard, dw, pw) = (
        std_cost.total_macs,
        sep_cost.macs_of(LayerKind::DepthwiseConv),
        sep_cost.macs_of(LayerKind::PointwiseConv),
    );
    if count_by_loops(&std_arch, df).macs != standard || count_by_loops(&sep_arch, df).macs != dw + pw {
        return Err(format!("loop counter disagrees for D_K={dk} M={m} N={n} D_F={df}"));
    }
    Ok((standard, dw, pw))
}

fn random_small_arch(rng: &mut ChaCha8Rng) -> (ArchSpec, usize) {
    loop {
        let side = rng.random_range(6..=40);
        let act = LayerSpec::Activation {
            function: if rng.random_bool(0.5) { Activation::Relu6 } else { Activation::Relu },
        };
        let pad = |rng: &mut ChaCha8Rng| if rng.random_bool(0.7) { Padding::Same } else { Padding::Valid };
        let mut c = rng.random_range(1..=12);
        let k0 = *[1, 3, 5].choose(rng).unwrap();
        let mut layers = vec![
            LayerSpec::StandardConv(ConvParams::new(k0, rng.random_range(1..=2), pad(rng), 3, c)),
            LayerSpec::ScaleBias { channels: c },
            act,
        ];
        for _ in 0..rng.random_range(1..=4) {
            let k = *[3, 5].choose(rng).unwrap();
            layers.push(LayerSpec::DepthwiseConv(ConvParams::new(k, rng.random_range(1..=2), pad(rng), c, c)));
            layers.push(LayerSpec::ScaleBias { channels: c });
            layers.push(act);
            let n = rng.random_range(1..=24);
            layers.push(LayerSpec::PointwiseConv(ConvParams::pointwise(c, n)));
            layers.push(LayerSpec::ScaleBias { channels: n });
            layers.push(act);
            c = n;
        }
        layers.push(LayerSpec::GlobalAvgPool);
        let mut arch = bare_arch(3, side, layers);
        arch.embedding_dim = c;
        if arch.validate().is_ok() {
            let classes = rng.random_range(1..=8);
            return (arch.with_head(classes), side);
        }
    }
}

/// Separable/standard MAC ratio equals `1/N + 1/D_K²` exactly (as integers), and
/// `count_costs` equals the instrumented loop counter on random and full-size networks.
pub fn cost_identity(seed: u64, tuples: usize, archs: usize) -> Outcome {
    // worked example: 3×3, M=16, N=32, 14×14 output
    let (standard, dw, pw) = separable_vs_standard(3, 16, 32, 14)?;
    if (standard, dw, pw) != (903_168, 28_224, 100_352) {
        return Err(format!("worked example gave {standard} vs {dw} + {pw}"));
    }
    let ratio = (dw + pw) as f64 / standard as f64;
    if (ratio - (1.0 / 32.0 + 1.0 / 9.0)).abs() > 1e-9 {
        return Err(format!("worked example ratio {ratio}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..tuples {
        let dk = *[1, 2, 3, 5, 7].choose(&mut rng).unwrap() as u64;
        let m = rng.random_range(1..=64u64);
        let n = rng.random_range(1..=64u64);
        let df = rng.random_range(1..=28u64);
        let (standard, dw, pw) = separable_vs_standard(dk as usize, m as usize, n as usize, df as usize)?;
        // (dw + pw) / standard = 1/N + 1/D_K²  ⇔  (dw + pw)·N·D_K² = standard·(D_K² + N)
        if (dw + pw) * n * dk * dk != standard * (dk * dk + n) {
            return Err(format!("tuple {i}: D_K={dk} M={m} N={n} D_F={df}: {dw}+{pw} vs {standard}"));
        }
    }

    for i in 0..archs {
        let (arch, side) = random_small_arch(&mut rng);
        let costs = count_costs(&arch, side);
        let loops = count_by_loops(&arch, side);
        if (costs.total_macs, costs.total_params) != (loops.macs, loops.params) {
            return Err(format!(
                "arch {i}: count_costs ({}, {}) vs loops ({}, {})",
                costs.total_macs, costs.total_params, loops.macs, loops.params
            ));
        }
        let row_sum: u64 = costs.layers.iter().map(|l| l.macs).sum();
        if row_sum != costs.total_macs {
            return Err(format!("arch {i}: layer rows do not sum to the total"));
        }
    }

    let full = build_arch(1.0, 1.0, 224).map_err(|e| e.to_string())?.with_head(4);
    let costs = count_costs(&full, 224);
    let loops = count_by_loops(&full, 224);
    if (costs.total_macs, costs.total_params) != (loops.macs, loops.params) {
        return Err(format!(
            "full network: count_costs ({}, {}) vs loops ({}, {})",
            costs.total_macs, costs.total_params, loops.macs, loops.params
        ));
    }
    Ok(format!(
        "{tuples} tuples exact, {archs} random archs + 224px α=1 network match the loop counter ({} MACs)",
        costs.total_macs
    ))
}

fn loss_of(head: &Dense<f64>, x: &[f64], target: usize) -> f64 {
    cross_entropy(&softmax(&head.forward(x).unwrap()).unwrap(), target).unwrap()
}

/// `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞)`, zero when both vanish.
fn grad_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn central<F: Fn(&[f64]) -> f64>(point: &[f64], f: F) -> Vec<f64> {
    (0..point.len())
        .map(|i| {
            let mut p = point.to_vec();
            p[i] = point[i] + FD_STEP;
            let up = f(&p);
            p[i] = point[i] - FD_STEP;
            let down = f(&p);
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Dense-head (weights, bias, input) and softmax cross-entropy (logits) gradients against
/// central finite differences in double precision.
pub fn gradients(seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..GRAD_INSTANCES {
        let e = rng.random_range(1..=10);
        let k = rng.random_range(2..=6);
        let w: Vec<f64> = (0..e * k).map(|_| rng.random_range(-0.5..0.5)).collect();
        let b: Vec<f64> = (0..k).map(|_| rng.random_range(-0.5..0.5)).collect();
        let x: Vec<f64> = (0..e).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = rng.random_range(0..k);
        let head = Dense::new(e, k, w.clone(), b.clone()).unwrap();

        let probs = softmax(&head.forward(&x).unwrap()).unwrap();
        let g = cross_entropy_grad(&probs, y).unwrap();
        let grads = head.backward(&x, &g).unwrap();

        let nw = central(&w, |w| loss_of(&Dense::new(e, k, w.to_vec(), b.clone()).unwrap(), &x, y));
        let nb = central(&b, |b| loss_of(&Dense::new(e, k, w.clone(), b.to_vec()).unwrap(), &x, y));
        let nx = central(&x, |x| loss_of(&head, x, y));
        let logits = head.forward(&x).unwrap();
        let nz = central(&logits, |z| cross_entropy(&softmax(z).unwrap(), y).unwrap());

        for (name, a, n) in [
            ("weights", &grads.weights, &nw),
            ("bias", &grads.bias, &nb),
            ("input", &grads.input, &nx),
            ("logits", &g, &nz),
        ] {
            let err = grad_rel_error(a, n);
            if err > GRAD_TOLERANCE {
                return Err(format!("instance {i} ({e}→{k}): {name} gradient relative error {err:e}"));
            }
            worst = worst.max(err);
        }
    }
    Ok(format!(
        "{GRAD_INSTANCES} instances × (weights, bias, input, logits); max rel err {worst:.1e}"
    ))
}

fn random_bundle(rng: &mut ChaCha8Rng, i: usize) -> ModelBundle {
    let alpha = rng.random_range(0.05..0.4);
    let res = rng.random_range(16..=96);
    let arch = build_arch(alpha, 1.0, res).unwrap();
    let k = rng.random_range(1..=8);
    let labels: Vec<String> = (0..k)
        .map(|j| match j % 3 {
            0 => format!("{}", rng.random_range(1..10_000)),
            1 => format!("note-{i}-{j}"),
            _ => format!("ريال {j}"),
        })
        .collect();
    let base = ModelBundle::initialize(labels, arch, rng.random()).unwrap();
    let e = base.arch().embedding_dim;
    let special = [0.0f32, -0.0, f32::MIN_POSITIVE, 1e-40, f32::MAX, -1.5];
    let weights = (0..e * k)
        .map(|j| if j % 17 == 0 { special[j % special.len()] } else { rng.random_range(-3.0..3.0) })
        .collect();
    let bias = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    base.with_head(Dense::new(e, k, weights, bias).unwrap()).unwrap()
}

fn with_header(bytes: &[u8], edit: impl FnOnce(&mut serde_json::Value)) -> Vec<u8> {
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let mut header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + hlen]).unwrap();
    edit(&mut header);
    let h = serde_json::to_vec(&header).unwrap();
    let mut out = bytes[..8].to_vec();
    out.extend_from_slice(&(h.len() as u64).to_le_bytes());
    out.extend_from_slice(&h);
    out.extend_from_slice(&bytes[16 + hlen..]);
    out
}

/// Random bundles round-trip bitwise (in memory and through files); three corruption
/// classes map to their own error codes.
pub fn serialization(seed: u64, count: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = std::env::temp_dir().join(format!("ycd-serial-{}-{seed}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let mut codes = std::collections::BTreeSet::new();
    for i in 0..count {
        let b = random_bundle(&mut rng, i);
        let bytes = b.to_bytes();
        let back = ModelBundle::from_bytes(&bytes).map_err(|e| format!("bundle {i}: {e}"))?;
        if !back.bitwise_eq(&b) || back.to_bytes() != bytes {
            return Err(format!("bundle {i} did not round-trip bitwise"));
        }
        if i % 10 == 0 {
            let path = dir.join(format!("b{i}.ycdm"));
            ycd_core::model::save_bundle(&b, &path).map_err(|e| e.to_string())?;
            let loaded = ycd_core::model::load_bundle(&path).map_err(|e| e.to_string())?;
            if !loaded.bitwise_eq(&b) {
                return Err(format!("bundle {i} did not round-trip through a file"));
            }
        }

        let mut bad_magic = bytes.clone();
        bad_magic[rng.random_range(0..4)] ^= 0x20;
        let cut = rng.random_range(0..bytes.len());
        let mismatch = with_header(&bytes, |h| h["labels"].as_array_mut().unwrap().push("extra".into()));
        for (name, corrupt, want) in [
            ("bad magic", bad_magic, "bad_magic"),
            ("truncated", bytes[..cut].to_vec(), "truncated"),
            ("shape mismatch", mismatch, "shape_mismatch"),
        ] {
            match ModelBundle::from_bytes(&corrupt) {
                Err(e) if e.code() == want => {
                    codes.insert(want);
                }
                Err(e) => return Err(format!("bundle {i} {name}: got code {} ({e})", e.code())),
                Ok(_) => return Err(format!("bundle {i} {name}: accepted")),
            }
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(format!(
        "{count} bundles bitwise round-trip; corruption codes {:?}",
        codes.into_iter().collect::<Vec<_>>()
    ))
}

fn fake_manifest(sizes: &[usize]) -> DatasetManifest {
    let classes: Vec<String> = (0..sizes.len()).map(|c| format!("c{c}")).collect();
    let mut entries = Vec::new();
    for (c, &n) in sizes.iter().enumerate() {
        for j in 0..n {
            entries.push(ManifestEntry {
                path: format!("/data/c{c}/img_{j:05}.png").into(),
                label: classes[c].clone(),
                split: None,
            });
        }
    }
    // scanning order must not matter
    entries.reverse();
    DatasetManifest {
        classes,
        seed: None,
        policy: None,
        entries,
    }
}

fn test_paths(m: &DatasetManifest) -> Vec<std::path::PathBuf> {
    m.entries
        .iter()
        .filter(|e| e.split == Some(Split::Test))
        .map(|e| e.path.clone())
        .collect()
}

/// Partition, per-class counts, determinism, and the 400 → 345/55 reproduction.
pub fn split_properties(seed: u64, trials: usize) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..trials {
        let sizes: Vec<usize> = (0..rng.random_range(1..=5)).map(|_| rng.random_range(2..=450)).collect();
        let min = *sizes.iter().min().unwrap();
        let policy = match rng.random_range(0..3) {
            0 => SplitPolicy::Standard,
            1 => SplitPolicy::Fraction(rng.random_range(0.05..0.45)),
            _ => SplitPolicy::TestCount(rng.random_range(0..min)),
        };
        let m = fake_manifest(&sizes);
        let s = rng.random();
        let a = split_manifest(&m, policy, s).map_err(|e| format!("trial {t}: {e}"))?;
        let b = split_manifest(&m, policy, s).unwrap();
        if a != b {
            return Err(format!("trial {t}: same seed gave different splits"));
        }
        let mut before: Vec<_> = m.entries.iter().map(|e| (&e.path, &e.label)).collect();
        let mut after: Vec<_> = a.entries.iter().map(|e| (&e.path, &e.label)).collect();
        before.sort();
        after.sort();
        if before != after || a.entries.iter().any(|e| e.split.is_none()) {
            return Err(format!("trial {t}: entries not preserved or left unassigned"));
        }
        for ((label, train, test), &n) in a.split_counts().iter().zip(&sizes) {
            if train + test != n || *test != policy.test_count(n) {
                return Err(format!("trial {t}: class {label} has {train}+{test} of {n} under {policy:?}"));
            }
        }
    }

    let m = fake_manifest(&[400, 400, 400, 400]);
    for policy in [SplitPolicy::TestCount(55), SplitPolicy::Standard] {
        let a = split_manifest(&m, policy, 0).unwrap();
        if a.split_counts().iter().any(|(_, tr, te)| (*tr, *te) != (345, 55)) {
            return Err(format!("{policy:?} on 400 images is not 345/55"));
        }
    }
    let a = split_manifest(&m, SplitPolicy::TestCount(55), 1).unwrap();
    let b = split_manifest(&m, SplitPolicy::TestCount(55), 2).unwrap();
    if test_paths(&a) == test_paths(&b) {
        return Err("different seeds chose the same test set".into());
    }
    Ok(format!("{trials} random manifests partitioned deterministically; 400 → 345/55"))
}

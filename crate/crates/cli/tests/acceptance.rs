//! One pass/fail line per acceptance criterion.
//!
//! Runs as a plain binary (`harness = false`). Failing criteria are reported
//! but only fail the process when `LRI_ACCEPTANCE_STRICT=1`.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use lri_core::invariants::{
    bispectrum, enumerate_triples, spectrum_from_bispectrum_check, InvariantFeatures,
};
use lri_core::kernels::{init_weights, radial_count_for, RadialProfileBank};
use lri_core::layer::{
    fourier_feature_maps, global_pool, ssb_forward, sse_forward, FourierFeatureMaps, InvariantKind, InvariantMaps,
    LayerConfig, LriLayer, Padding,
};
use lri_core::network::{build_model, count_parameters, ModelConfig, ModelKind};
use lri_core::sph::{
    clebsch_gordan, octahedral_group, random_rotation, rotate_fourier_vector, sh_index, sh_table, wigner_d, CgCache,
    FourierVector, Rotation, SphericalCoords,
};
use lri_core::synth::{summarize, ToyExperiment, ToyPipeline, ToySpec};
use lri_core::volume::Volume3D;
use lri_core::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn lri(dir: &Path, args: &[&str]) -> (String, f64) {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_lri"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    let secs = start.elapsed().as_secs_f64();
    assert!(
        out.status.success(),
        "lri {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    (String::from_utf8(out.stdout).unwrap(), secs)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn feature_counts(dir: &Path) -> Outcome {
    let (out, secs) = lri(dir, &["tables", "--which", "feature-counts"]);
    let expected = [(0, 1, 1), (1, 2, 2), (2, 3, 5), (4, 5, 14), (6, 7, 30), (8, 9, 55), (10, 11, 91)];
    let rows_ok = expected.iter().all(|(n, s, b)| {
        out.lines().any(|l| l.starts_with(&format!("{n},{s},{b},{s},{b},")))
    });
    let note_ok = out.contains("gives 45526") && out.contains("48127") && out.contains("Open questions");
    outcome(
        rows_ok && note_ok && secs < 1.0,
        format!("rows N<=10 exact: {rows_ok}, N=100 note (45526 vs 48127): {note_ok}, {secs:.2} s"),
    )
}

fn steer_residual(n: usize, r: &Rotation) -> f64 {
    let d = wigner_d(n, r).unwrap();
    let ni = n as i64;
    let mut worst: f64 = 0.0;
    for it in 0..20 {
        let theta = std::f64::consts::PI * (it as f64 + 0.5) / 20.0;
        for ip in 0..40 {
            let phi = 2.0 * std::f64::consts::PI * ip as f64 / 40.0;
            let x = SphericalCoords { rho: 1.0, theta, phi }.to_cartesian();
            let rx = SphericalCoords::from_cartesian(r.apply(x));
            let (y, yr) = (sh_table(n, theta, phi), sh_table(n, rx.theta, rx.phi));
            for m in -ni..=ni {
                let mixed: Complex64 = (-ni..=ni).map(|mp| d.get(mp, m) * y[sh_index(n, mp)]).sum();
                worst = worst.max((yr[sh_index(n, m)] - mixed).norm());
            }
        }
    }
    worst
}

fn representation_theory() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rots: Vec<Rotation> = (0..20).map(|_| random_rotation(&mut rng)).collect();
    let (mut cg_res, mut steer, mut unit): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for r in &rots {
        let ds: Vec<_> = (0..=8).map(|n| wigner_d(n, r).unwrap()).collect();
        for n1 in 0..=4 {
            for n2 in 0..=4 {
                cg_res = cg_res.max(clebsch_gordan(n1, n2).block_diagonalization_residual(&ds));
            }
        }
        for n in 0..=5 {
            steer = steer.max(steer_residual(n, r));
            unit = unit.max(ds[n].unitarity_error());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        cg_res < 1e-10 && steer < 1e-8 && unit < 1e-10 && secs < 30.0,
        format!("CG block residual {cg_res:.1e}, steerability {steer:.1e}, unitarity {unit:.1e}, {secs:.1} s"),
    )
}

fn invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cg = CgCache::new(4);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let fam: Vec<_> = (0..=4).map(|n| FourierVector::random_real(n, &mut rng)).collect();
        let r = random_rotation(&mut rng);
        let rot: Vec<_> = fam.iter().map(|f| rotate_fourier_vector(f, &r).unwrap()).collect();
        let (a, b) = (InvariantFeatures::compute(&fam, &cg).unwrap(), InvariantFeatures::compute(&rot, &cg).unwrap());
        for (x, y) in a.spectrum.iter().chain(&a.bispectrum).zip(b.spectrum.iter().chain(&b.bispectrum)) {
            worst = worst.max((x - y).abs() / x.abs().max(1e-3));
        }
    }
    let mut odd: f64 = 0.0;
    for _ in 0..200 {
        for n in 1..=4usize {
            let f = FourierVector::random_real(n, &mut rng);
            for l in (1..=2 * n).step_by(2) {
                let g = FourierVector::random_real(l, &mut rng);
                odd = odd.max(bispectrum(&f, &f, &g, cg.get(n, n)).unwrap().norm());
            }
        }
    }
    let mut factor: f64 = 0.0;
    for _ in 0..200 {
        for n in 0..=4 {
            let f0 = FourierVector::random_real(0, &mut rng);
            let fnv = FourierVector::random_real(n, &mut rng);
            let (b, s) = spectrum_from_bispectrum_check(&f0, &fnv, &clebsch_gordan(0, n)).unwrap();
            let expect = (2 * n + 1) as f64 * f0.get(0).re * s;
            factor = factor.max((b - expect).norm() / expect.abs().max(1e-12));
        }
    }
    outcome(
        worst < 1e-10 && odd < 1e-12 && factor < 1e-10,
        format!("1000 rotations: max relative change {worst:.1e}; odd self-coupling {odd:.1e}; (2n+1) factor {factor:.1e}"),
    )
}

fn toy_experiments() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    for exp in [ToyExperiment::InterDegree, ToyExperiment::IntraDegree] {
        let [a, b] = ToyPipeline::new(ToySpec::new(exp, 0.0, 0)).unwrap().prototypes().unwrap();
        let spec_dev = (1..a.spectrum.len()).map(|n| rel(a.spectrum[n], b.spectrum[n])).fold(0.0, f64::max);
        let bis_diff = a.bispectrum.iter().zip(&b.bispectrum).map(|(x, y)| rel(*x, *y)).fold(0.0, f64::max);
        let res = ToyPipeline::new(ToySpec::new(exp, 0.1, 0)).unwrap().run().unwrap();
        let s = summarize(&res);
        let spec_max = s.spectrum_accuracy.iter().cloned().fold(0.0, f64::max);
        let ok = spec_dev < 1e-6
            && bis_diff > 0.1
            && res.instances.len() == 100
            && s.bispectrum_pair_accuracy == 1.0
            && spec_max <= 0.6;
        pass &= ok;
        detail.push(format!(
            "exp {}: spectra agree {spec_dev:.1e}, bispectrum differs {:.0}%, noisy pair {:.2}, best spectrum {spec_max:.2}",
            exp.id(),
            100.0 * bis_diff,
            s.bispectrum_pair_accuracy
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(pass && secs < 120.0, format!("{}; {secs:.1} s", detail.join("; ")))
}

fn rotated_index(rot: &Rotation, o: [usize; 3], g: usize) -> usize {
    let c = (g as f64 - 1.0) / 2.0;
    let q = rot.apply(o.map(|v| v as f64 - c)).map(|v| (v + c).round() as usize);
    (q[0] * g + q[1]) * g + q[2]
}

fn invariants(maps: &FourierFeatureMaps, cg: &CgCache, bis: bool) -> InvariantMaps {
    if bis {
        ssb_forward(maps, &enumerate_triples(maps.max_degree()), cg).unwrap()
    } else {
        sse_forward(maps)
    }
}

fn paste(dst: &mut Volume3D, src: &Volume3D, centre: [usize; 3]) {
    let h = src.shape()[0] / 2;
    for i in 0..src.data().len() {
        let s = src.shape()[0];
        let p = [i / (s * s), i / s % s, i % s];
        let q = [0, 1, 2].map(|k| centre[k] + p[k] - h);
        let v = dst.get(q) + src.data()[i];
        dst.set(q, v);
    }
}

const BLOBS: [([f64; 3], f64); 4] =
    [([0.0, 0.0, 0.0], 1.0), ([2.0, 0.5, 0.0], 0.8), ([-0.5, 1.5, 1.5], -0.6), ([0.0, -1.0, 2.0], 0.5)];

/// Gaussian-blob template rotated about voxel 7 of a 15^3 grid.
fn template(rot: &Rotation) -> Volume3D {
    let inv = rot.inverse();
    Volume3D::from_fn([15, 15, 15], |p| {
        let x = inv.apply(p.map(|v| v as f64 - 7.0));
        BLOBS.iter().map(|(c, a)| a * (-(0..3).map(|k| (x[k] - c[k]).powi(2)).sum::<f64>() / 8.0).exp()).sum()
    })
}

/// Largest relative deviation of the invariant vectors at the centres of
/// rotated template copies from the unrotated copy. With `resample`, copies
/// are trilinear rotations of the sampled template instead of samples of the
/// rotated continuous template.
fn template_deviation(rots: &[Rotation], bank: &mut RadialProfileBank, resample: bool) -> f64 {
    let (c, n) = (11, 3);
    // profiles supported inside the ball inscribed in the kernel cube
    for q in 0..2 {
        for deg in 0..=n {
            let off = bank.offset(q, deg);
            for j in c / 2..bank.radial_count() {
                bank.weights_mut()[off + j] = 0.0;
            }
        }
    }
    let centres = [[8, 8, 8], [8, 8, 23], [8, 23, 8], [23, 8, 8], [23, 23, 8], [23, 23, 23]];
    let base = template(&Rotation::about_z(0.0));
    let mut big = Volume3D::zeros([32, 32, 32]);
    paste(&mut big, &base, centres[0]);
    for (r, &centre) in rots.iter().zip(&centres[1..]) {
        let copy = if resample { base.rotated(r) } else { template(r) };
        paste(&mut big, &copy, centre);
    }
    let maps = fourier_feature_maps(&big, bank, c, 1, Padding::Zero).unwrap();
    let cg = CgCache::new(n);
    let mut worst: f64 = 0.0;
    for bis in [false, true] {
        let inv = invariants(&maps, &cg, bis);
        let at = |centre: [usize; 3]| -> Vec<f64> {
            let i = maps.grid().out_index(centre);
            (0..2).flat_map(|q| (0..inv.channels()).map(move |ch| (q, ch))).map(|(q, ch)| inv.channel(q, ch)[i]).collect()
        };
        let reference = at(centres[0]);
        let norm = reference.iter().map(|v| v * v).sum::<f64>().sqrt();
        for &centre in &centres[1..] {
            let d = at(centre).iter().zip(&reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(d / norm);
        }
    }
    worst
}

fn equivariance() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vol = Volume3D::from_fn([11, 11, 11], |_| rng.gen_range(-1.0..1.0));
    let cg = CgCache::new(3);
    let mut exact: f64 = 0.0;
    for (stride, c) in [(1usize, 5usize), (2, 7)] {
        let bank = init_weights(&mut rng, 2, 3, radial_count_for(c));
        let base = fourier_feature_maps(&vol, &bank, c, stride, Padding::Zero).unwrap();
        let g = base.grid().out_shape[0];
        for bis in [false, true] {
            let a = invariants(&base, &cg, bis);
            for rot in octahedral_group() {
                let maps = fourier_feature_maps(&vol.rotated_exact(&rot).unwrap(), &bank, c, stride, Padding::Zero).unwrap();
                let b = invariants(&maps, &cg, bis);
                for q in 0..2 {
                    for ch in 0..a.channels() {
                        for i in 0..a.grid().len() {
                            let o = a.grid().out_coords(i);
                            if o.iter().any(|&v| v == 0 || v + 1 == g) {
                                continue;
                            }
                            let (x, y) = (a.channel(q, ch)[i], b.channel(q, ch)[rotated_index(&rot, o, g)]);
                            exact = exact.max((x - y).abs() / x.abs().max(1.0));
                        }
                    }
                }
            }
        }
    }
    // smooth asymmetric template pasted unrotated and at five random rotations
    let rots: Vec<Rotation> = (0..5).map(|_| random_rotation(&mut rng)).collect();
    let mut bank = init_weights(&mut rng, 2, 3, radial_count_for(11));
    let analytic = template_deviation(&rots, &mut bank, false);
    let trilinear = template_deviation(&rots, &mut bank, true);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        exact < 1e-10 && analytic < 0.05 && secs < 300.0,
        format!(
            "24 lattice rotations: {exact:.1e}; rotated templates: {:.2}% max deviation \
             (trilinear-resampled copies: {:.1}%); {secs:.1} s",
            100.0 * analytic,
            100.0 * trilinear
        ),
    )
}

fn gradients(dir: &Path) -> Outcome {
    let (out, secs) = lri(
        dir,
        &["gradcheck", "--model", "ssb", "--degree", "2", "--filters", "2", "--kernel-size", "7", "--size", "16"],
    );
    let err: f64 = out
        .split("max relative error ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .and_then(|s| s.parse().ok())
        .unwrap_or(f64::INFINITY);
    outcome(err < 1e-4 && secs < 120.0, format!("ssb N=2 Q=2 c=7 on 16^3: {err:.1e}, {secs:.1} s"))
}

fn parameter_counts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cases = [(ModelKind::Z3, 0, 10, 9, 7322), (ModelKind::Z3, 0, 10, 7, 3462), (ModelKind::Sse, 4, 4, 9, 222), (ModelKind::Ssb, 4, 4, 9, 330)];
    let mut pass = true;
    let mut got = Vec::new();
    for (kind, n, q, c, want) in cases {
        let cfg = ModelConfig { max_degree: n, streams: q, kernel_size: c, ..ModelConfig::new(kind) };
        let count = count_parameters(&build_model(cfg, 0, &mut rng).unwrap());
        pass &= count == want && cfg.parameter_count() == want;
        got.push(format!("{kind} c={c}: {count}"));
    }
    outcome(pass, got.join(", "))
}

fn sweep(dir: &Path, name: &str, extra: &[&str]) -> (f64, Vec<f64>) {
    let mut args = vec!["sweep", "--iters", "10000", "--seeds", "0,1,2", "--data", "data", "--out", name, "--cache-dir", "cache"];
    args.extend_from_slice(extra);
    lri(dir, &args);
    let run = read_json(&dir.join(name).join("run.json"));
    let accs = run["results"]["test_accuracy"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    (run["results"]["mean"].as_f64().unwrap(), accs)
}

fn classification(dir: &Path) -> Outcome {
    let start = Instant::now();
    lri(dir, &["gen", "--out", "data", "--seed", "0"]);
    let (ssb, ssb_accs) = sweep(dir, "ssb", &["--model", "ssb", "--degree", "2", "--filters", "2"]);
    let (z3, z3_accs) = sweep(dir, "z3", &["--model", "z3", "--filters", "10"]);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        ssb >= 0.85 && ssb >= z3 && secs <= 4.0 * 3600.0,
        format!(
            "800 train, 10000 iterations, seeds 0,1,2: ssb mean {ssb:.4} {ssb_accs:?} (need >= 0.85), z3 Q=10 mean {z3:.4} {z3_accs:?}; {:.0} s",
            secs
        ),
    )
}

fn masked_pooling() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let d = 13;
    let vol = Volume3D::from_fn([d, d, d], |_| rng.gen_range(-1.0..1.0));
    let ball: Vec<bool> = (0..d * d * d)
        .map(|i| {
            let p = [i / (d * d), i / d % d, i % d];
            p.iter().map(|&v| (v as f64 - 6.0).powi(2)).sum::<f64>() <= 25.0
        })
        .collect();
    let cfg = LayerConfig { kernel_size: 5, stride: 1, padding: Padding::Zero, max_degree: 2 };
    let layer = LriLayer::new(cfg, InvariantKind::Bispectrum(enumerate_triples(2)), radial_count_for(5)).unwrap();
    let bank = init_weights(&mut rng, 2, 2, radial_count_for(5));
    let full = layer.forward(&vol, &bank).unwrap();
    let masked_vol = vol.clone().with_mask(ball.clone()).unwrap();
    let masked = layer.forward(&masked_vol, &bank).unwrap();
    let count = ball.iter().filter(|&&b| b).count() as f64;
    let mut mean_err: f64 = 0.0;
    for q in 0..2 {
        for ch in 0..full.invariants.channels() {
            let want: f64 = full.invariants.channel(q, ch).iter().zip(&ball).filter(|(_, &b)| b).map(|(v, _)| v).sum::<f64>() / count;
            mean_err = mean_err.max(rel(want, masked.pooled[q * full.invariants.channels() + ch]));
        }
    }
    let all = global_pool(&full.invariants, Some(&vec![true; d * d * d])).unwrap();
    let all_err = all.iter().zip(&full.pooled).map(|(a, b)| rel(*a, *b)).fold(0.0, f64::max);
    let mut rot_err: f64 = 0.0;
    for rot in octahedral_group() {
        let r = layer.forward(&masked_vol.rotated_exact(&rot).unwrap(), &bank).unwrap();
        rot_err = rot_err.max(r.pooled.iter().zip(&masked.pooled).map(|(a, b)| rel(*a, *b)).fold(0.0, f64::max));
    }
    let empty_err = global_pool(&full.invariants, Some(&vec![false; d * d * d])).is_err();
    (
        mean_err < 1e-12 && all_err < 1e-12 && rot_err < 1e-10 && empty_err,
        format!("masked mean {mean_err:.1e}, full mask {all_err:.1e}, rotated mask {rot_err:.1e}, empty mask rejected {empty_err}"),
    )
}

fn learning_curve(dir: &Path) -> Outcome {
    let (mask_ok, mask_detail) = masked_pooling();
    lri(
        dir,
        &[
            "learning-curve", "--model", "ssb", "--degree", "2", "--filters", "2", "--iters", "10000", "--sizes",
            "16,64,200", "--seeds", "0,1,2,3,4,5,6,7,8,9", "--data", "data", "--out", "curve/curve.csv", "--cache-dir",
            "cache",
        ],
    );
    let run = read_json(&dir.join("curve/run.json"));
    let rows: Vec<(u64, f64, f64)> = run["results"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| (r["size"].as_u64().unwrap(), r["mean"].as_f64().unwrap(), r["ci95"].as_f64().unwrap()))
        .collect();
    let monotone = rows.windows(2).all(|w| w[1].1 >= w[0].1 - w[0].2.max(w[1].2));
    let curve: Vec<String> = rows.iter().map(|(s, m, h)| format!("{s}: {m:.3} ± {h:.3}")).collect();
    outcome(
        mask_ok && monotone,
        format!("{mask_detail}; curve {} (nondecreasing within CI: {monotone})", curve.join(", ")),
    )
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let start = Instant::now();
    let mut failures = 0;
    let mut report = |n: usize, name: &str, o: Outcome| {
        if !o.pass {
            failures += 1;
        }
        println!("criterion {n} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    };
    report(1, "feature counts", feature_counts(dir));
    report(2, "representation theory", representation_theory());
    report(3, "invariance", invariance());
    report(4, "toy experiments", toy_experiments());
    report(5, "equivariance", equivariance());
    report(6, "gradient correctness", gradients(dir));
    report(7, "parameter counts", parameter_counts());
    report(8, "synthetic classification", classification(dir));
    report(9, "masked pooling and learning curve", learning_curve(dir));
    println!(
        "acceptance: {} of 9 criteria passed [{:.0} s]",
        9 - failures,
        start.elapsed().as_secs_f64()
    );
    if failures > 0 && std::env::var("LRI_ACCEPTANCE_STRICT").as_deref() == Ok("1") {
        std::process::exit(1);
    }
}

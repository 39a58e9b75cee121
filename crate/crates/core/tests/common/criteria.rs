//! One check per acceptance criterion. Each returns a short summary on
//! success and a description of the first violation on failure.

use std::collections::BTreeMap;
use std::path::Path;

use qwalk::analysis::boundary_shift_analytic;
use qwalk::data::{
    add_momentum_noise, decode_sample, encode_sample, generate_dataset, sample_parameters, split, DatasetManifest,
    GenerateOptions, NoiseSpec, RegionSpec, Sample,
};
use qwalk::learn::layers::{AvgPool, Conv2d, Dense, Padding, SeparableConv2d};
use qwalk::learn::network::{cross_entropy, softmax_cross_entropy_grad};
use qwalk::learn::TrainConfig;
use qwalk::learn::{
    evaluate, pca, som_assign, som_fit, train_supervised, Dataset, Layer, NetworkModel, SomState, Tensor,
};
use qwalk::model::CouplingParams;
use qwalk::rng;
use qwalk::topo::{chern_link, chern_quadrature, linspace, linspace_half_open, phase_diagram, BzGrid};
use qwalk::walk::{evolve_momentum, position_profile, to_position, Domain, Lattice};
use qwalk::Error;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{brute_force_position_profile, covariance, jacobi_eigenvalues, max_relative_error, numeric_gradient};

pub type Outcome = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lift<T>(r: qwalk::Result<T>, what: &str) -> std::result::Result<T, String> {
    r.map_err(|e| format!("{what}: {e}"))
}

/// Chern labels over the 21 × 21 window, their sign flip under `t1y → −t1y`
/// and agreement with the quadrature integral.
pub fn chern_oracle() -> Outcome {
    let axis = linspace(-20.0, 20.0, 21);
    let link_grid = BzGrid::new(256).unwrap();
    let quad_grid = BzGrid::new(400).unwrap();
    let allowed = [0, 1, -1, -2];
    let (mut gapped, mut gapless, mut worst) = (0, 0, 0.0f64);
    let mut seen = BTreeMap::new();
    for &m in &axis {
        for &t3 in &axis {
            let p = CouplingParams::reference(m, t3);
            let c = match chern_link(&p, link_grid) {
                Ok(r) => r.value,
                Err(Error::GaplessSystem { .. }) => {
                    gapless += 1;
                    let flipped = chern_link(&p.with_t1y(-1.0), link_grid);
                    ensure(matches!(flipped, Err(Error::GaplessSystem { .. })), || {
                        format!("(m={m}, t3={t3}) gapless only for t1y=+1")
                    })?;
                    continue;
                }
                Err(e) => return Err(format!("(m={m}, t3={t3}): {e}")),
            };
            gapped += 1;
            *seen.entry(c).or_insert(0) += 1;
            ensure(allowed.contains(&c), || format!("(m={m}, t3={t3}) gave C={c}"))?;
            let flipped = lift(chern_link(&p.with_t1y(-1.0), link_grid), "flipped link")?.value;
            ensure(flipped == -c, || {
                format!("(m={m}, t3={t3}) C={c} but flipped C={flipped}")
            })?;
            let q = lift(chern_quadrature(&p, quad_grid), "quadrature")?;
            worst = worst.max((q.raw - f64::from(c)).abs());
            ensure((q.raw - f64::from(c)).abs() <= 0.01, || {
                format!("(m={m}, t3={t3}) quadrature raw {} vs link {c}", q.raw)
            })?;
        }
    }
    Ok(format!(
        "{gapped} gapped points, labels {seen:?}, {gapless} gapless skipped, max |quad - link| = {worst:.2e}"
    ))
}

fn random_gapped(r: &mut impl Rng) -> CouplingParams {
    loop {
        let p = CouplingParams::reference(r.random_range(-20.0..20.0), r.random_range(-20.0..20.0))
            .with_eta(r.random_range(0.0..3.0));
        if chern_link(&p, BzGrid::new(64).unwrap()).is_ok() {
            return p;
        }
    }
}

/// Closed-form position profiles against dense real-space evolution.
pub fn walk_vs_brute_force() -> Outcome {
    let mut r = rng::seeded(2024);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for l in [9usize, 11, 15] {
        for _ in 0..5 {
            let p = random_gapped(&mut r);
            let t = r.random_range(0.2..0.6);
            let lat = Lattice::new(l).unwrap();
            let field = lift(evolve_momentum(&p, lat, t).and_then(|f| to_position(&f)), "evolve")?;
            let ours = lift(position_profile(&field), "profile")?;
            let oracle = brute_force_position_profile(&p, l, t);
            for (i, (a, b)) in ours.plane(0).iter().zip(&oracle).enumerate() {
                // profiles are stored as f32; compare at f64 of the stored value
                let d = (f64::from(*a) - b).abs();
                worst = worst.max(d);
                ensure(d <= 1e-6, || format!("l={l} {p:?} t={t}: site {i} differs by {d:e}"))?;
            }
            cases += 1;
        }
    }
    Ok(format!(
        "{cases} cases over l in {{9, 11, 15}}, max elementwise difference {worst:.2e}"
    ))
}

/// Unitarity and normalization checks along the evolution pipeline.
pub fn conservation() -> Outcome {
    let mut r = rng::seeded(7);
    let mut worst_mode = 0.0f64;
    let mut worst_norm = 0.0f64;
    let mut worst_sum = 0.0f64;
    for l in [9usize, 21, 51] {
        let lat = Lattice::new(l).unwrap();
        for _ in 0..4 {
            let p = random_gapped(&mut r);
            let t = r.random_range(0.0..3.0);
            let f = lift(evolve_momentum(&p, lat, t), "evolve")?;
            let scale = (l * l) as f64;
            for (u, d) in f.up.iter().zip(&f.down) {
                let e = ((u.norm_sqr() + d.norm_sqr()) * scale - 1.0).abs();
                worst_mode = worst_mode.max(e);
            }
            let pos = lift(to_position(&f), "to_position")?;
            worst_norm = worst_norm
                .max((pos.norm_sqr() - f.norm_sqr()).abs())
                .max((f.norm_sqr() - 1.0).abs());
            let prof = lift(position_profile(&pos), "profile")?;
            let sum: f64 = prof.plane(0).iter().map(|v| f64::from(*v)).sum();
            worst_sum = worst_sum.max((sum - 1.0).abs());
        }
        let f0 = lift(
            evolve_momentum(&CouplingParams::reference(-15.0, 3.0), lat, 0.0),
            "evolve",
        )?;
        let pos0 = lift(to_position(&f0), "to_position")?;
        let c = lat.centre() * l + lat.centre();
        let centre = pos0.up[c].norm_sqr();
        ensure((centre - 1.0).abs() <= 1e-9, || {
            format!("l={l}: t=0 centre weight {centre}")
        })?;
        let rest: f64 = pos0.down.iter().map(|v| v.norm_sqr()).sum::<f64>() + (pos0.norm_sqr() - centre);
        ensure(rest.abs() <= 1e-9, || {
            format!("l={l}: t=0 weight off the centre {rest:e}")
        })?;
    }
    ensure(worst_mode <= 1e-12, || format!("per-mode norm error {worst_mode:e}"))?;
    ensure(worst_norm <= 1e-9, || format!("total norm error {worst_norm:e}"))?;
    ensure(worst_sum <= 1e-6, || {
        format!("position profile sum error {worst_sum:e}")
    })?;
    Ok(format!(
        "per-mode {worst_mode:.1e}, transform {worst_norm:.1e}, profile sum {worst_sum:.1e}, t=0 delta ok"
    ))
}

/// Oracle-labelled shift of the 1 → 0 boundary on the 7 × 28 grid.
pub fn boundary_shift_reproduction() -> Outcome {
    let m_axis = linspace_half_open(-20.0, -10.0, 7);
    let t3_axis = linspace(-20.0, 20.0, 28);
    let grid = BzGrid::new(256).unwrap();
    let half = (40.0 / 27.0) / 2.0;
    let mut parts = Vec::new();
    for (eta, delta) in [(3.0, 1.0), (6.0, 2.0), (9.0, 3.0)] {
        let base = CouplingParams::reference(0.0, 0.0).with_eta(eta);
        let d = lift(phase_diagram(&base, &m_axis, &t3_axis, grid), "phase diagram")?;
        let est = lift(boundary_shift_analytic(&d), "boundary shift")?;
        ensure((est.resolution - 1.4815).abs() < 1e-4, || {
            format!("resolution {}", est.resolution)
        })?;
        ensure((est.shift - delta).abs() <= half, || {
            format!("eta={eta}: shift {:.4} not within {half:.4} of {delta}", est.shift)
        })?;
        parts.push(format!("eta={eta}: {:.4}", est.shift));
    }
    Ok(format!("{} (tolerance {half:.4})", parts.join(", ")))
}

fn random_tensor(shape: Vec<usize>, r: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// `Σ w ⊙ layer(x)` for a fixed weighting `w`.
fn weighted_output(layer: &Layer, x: &Tensor, w: &[f64]) -> f64 {
    layer.forward(x).unwrap().data.iter().zip(w).map(|(a, b)| a * b).sum()
}

const EPS: f64 = 1e-5;
/// Entries whose gradients are both below this size are compared absolutely.
const GRAD_FLOOR: f64 = 1e-6;

/// Max relative error of the input and parameter gradients of `layer`.
fn layer_gradient_error(layer: &Layer, input_shape: Vec<usize>, r: &mut impl Rng) -> f64 {
    let x = random_tensor(input_shape, r);
    let y = layer.forward(&x).unwrap();
    let w: Vec<f64> = (0..y.data.len()).map(|_| r.random_range(-1.0..1.0)).collect();
    let dy = Tensor::new(y.shape.clone(), w.clone()).unwrap();
    let mut grads = layer.zero_grads();
    let dx = layer.backward(&x, &y, &dy, &mut grads, true).unwrap().unwrap();

    let mut xs = x.data.clone();
    let shape = x.shape.clone();
    let num_dx = numeric_gradient(&mut xs, EPS, |d| {
        weighted_output(layer, &Tensor::new(shape.clone(), d.to_vec()).unwrap(), &w)
    });
    let mut worst = max_relative_error(&dx.data, &num_dx, GRAD_FLOOR);

    let params: Vec<Vec<f64>> = layer.params().iter().map(|p| p.to_vec()).collect();
    for (j, p) in params.into_iter().enumerate() {
        let mut ps = p.clone();
        let num = numeric_gradient(&mut ps, EPS, |v| {
            let mut l = layer.clone();
            l.params_mut()[j].copy_from_slice(v);
            weighted_output(&l, &x, &w)
        });
        worst = worst.max(max_relative_error(&grads[j], &num, GRAD_FLOOR));
    }
    worst
}

fn image_shape(r: &mut impl Rng, min_side: usize) -> Vec<usize> {
    vec![
        r.random_range(1..=3),
        r.random_range(1..=3),
        r.random_range(min_side..=8),
        r.random_range(min_side..=8),
    ]
}

fn padding(r: &mut impl Rng) -> Padding {
    if r.random_bool(0.5) {
        Padding::Valid
    } else {
        Padding::Same
    }
}

/// Finite-difference gradient checks, 20 random shapes per layer kind.
pub fn gradient_suite() -> Outcome {
    const SHAPES: usize = 20;
    let mut r = rng::seeded(99);
    let mut report = Vec::new();
    let kinds = [
        "dense",
        "conv2d",
        "separable_conv2d",
        "avgpool",
        "elu",
        "relu",
        "softmax",
    ];
    for kind in kinds {
        let mut worst = 0.0f64;
        for _ in 0..SHAPES {
            let (layer, shape) = match kind {
                "dense" => {
                    let shape = if r.random_bool(0.5) {
                        vec![r.random_range(1..=4), r.random_range(1..=12)]
                    } else {
                        image_shape(&mut r, 2)
                    };
                    let inputs = shape[1..].iter().product();
                    let outputs = r.random_range(1..=6);
                    (Layer::Dense(Dense::new(&mut r, inputs, outputs)), shape)
                }
                "conv2d" => {
                    let shape = image_shape(&mut r, 5);
                    let k = r.random_range(1..=5);
                    let (pad, out) = (padding(&mut r), r.random_range(1..=3));
                    (Layer::Conv2d(Conv2d::new(&mut r, shape[1], out, k, pad)), shape)
                }
                "separable_conv2d" => {
                    let shape = image_shape(&mut r, 5);
                    let k = r.random_range(1..=5);
                    let (pad, out) = (padding(&mut r), r.random_range(1..=3));
                    (
                        Layer::SeparableConv2d(SeparableConv2d::new(&mut r, shape[1], out, k, pad)),
                        shape,
                    )
                }
                "avgpool" => {
                    let shape = image_shape(&mut r, 3);
                    (
                        Layer::AvgPool(AvgPool {
                            size: r.random_range(2..=3),
                            padding: padding(&mut r),
                        }),
                        shape,
                    )
                }
                "elu" => (Layer::Elu, image_shape(&mut r, 1)),
                "relu" => (Layer::Relu, image_shape(&mut r, 1)),
                _ => (Layer::Softmax, vec![r.random_range(1..=4), r.random_range(2..=6)]),
            };
            worst = worst.max(layer_gradient_error(&layer, shape, &mut r));
        }
        ensure(worst < 1e-4, || format!("{kind}: max relative error {worst:e}"))?;
        report.push(format!("{kind} {worst:.1e}"));
    }

    // combined softmax + cross-entropy, differentiated with respect to the logits
    let mut worst = 0.0f64;
    for _ in 0..SHAPES {
        let (n, k) = (r.random_range(1..=5), r.random_range(2..=6));
        let z = random_tensor(vec![n, k], &mut r);
        let targets: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let loss = |d: &[f64]| {
            let p = Layer::Softmax
                .forward(&Tensor::new(vec![n, k], d.to_vec()).unwrap())
                .unwrap();
            cross_entropy(&p, &targets).unwrap()
        };
        let p = Layer::Softmax.forward(&z).unwrap();
        let analytic = softmax_cross_entropy_grad(&p, &targets).unwrap();
        let mut zs = z.data.clone();
        let num = numeric_gradient(&mut zs, EPS, loss);
        worst = worst.max(max_relative_error(&analytic.data, &num, GRAD_FLOOR));
    }
    ensure(worst < 1e-4, || {
        format!("softmax+cross-entropy: max relative error {worst:e}")
    })?;
    report.push(format!("softmax+ce {worst:.1e}"));
    Ok(format!("{SHAPES} shapes each: {}", report.join(", ")))
}

/// Desk-scale three-class MLP run on clean and noisy test sets.
pub fn desk_classification(work_dir: &Path) -> Outcome {
    let counts = BTreeMap::from([(-1, 120), (0, 120), (1, 120)]);
    let base = CouplingParams::reference(0.0, 0.0);
    let grid = BzGrid::new(256).unwrap();
    let drawn = lift(
        sample_parameters(&RegionSpec::whole(), &counts, &base, grid, 11),
        "sampling",
    )?;
    let params: Vec<CouplingParams> = drawn.iter().map(|(p, _)| *p).collect();
    let lat = Lattice::new(101).unwrap();
    let manifest = lift(
        generate_dataset(&params, lat, work_dir, &GenerateOptions::new(Domain::Momentum, 5)),
        "generation",
    )?;
    let samples = lift(manifest.load_all(work_dir), "loading")?;
    let noise = NoiseSpec {
        gaussian_sigma: 0.02,
        shots: 0,
        ..NoiseSpec::default()
    };
    let noisy: Vec<Sample> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = add_momentum_noise(&s.profile, &noise, rng::derive_seed(77, i as u64))?;
            Ok(Sample::new(p, s.chern, s.seed))
        })
        .collect::<qwalk::Result<_>>()
        .map_err(|e: Error| e.to_string())?;
    let clean = lift(Dataset::from_samples(&samples), "dataset")?;
    let noisy = lift(Dataset::from_samples(&noisy), "dataset")?;

    let mut clean_acc = Vec::new();
    let mut noisy_acc = Vec::new();
    for seed in 0..3u64 {
        let sp = lift(split(&manifest, [0.8, 0.1, 0.1], seed), "split")?.split.unwrap();
        let model = lift(NetworkModel::mlp(&clean.item_shape, clean.classes(), seed), "model")?;
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let out = lift(
            train_supervised(model, &cfg, &clean.subset(&sp.train), &clean.subset(&sp.val)),
            "training",
        )?;
        ensure(out.loss_curve.last() < out.loss_curve.first(), || {
            format!("seed {seed}: loss did not decrease")
        })?;
        clean_acc.push(lift(evaluate(&out.model, &clean.subset(&sp.test)), "eval")?.overall);
        noisy_acc.push(lift(evaluate(&out.model, &noisy.subset(&sp.test)), "eval")?.overall);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (c, n) = (mean(&clean_acc), mean(&noisy_acc));
    let summary = format!(
        "clean test accuracy {clean_acc:.3?} mean {c:.4}, noisy {noisy_acc:.3?} mean {n:.4}, drop {:.4}",
        c - n
    );
    ensure(c >= 0.85, || format!("mean accuracy below 0.85: {summary}"))?;
    ensure(c - n <= 0.05, || format!("noise drop above 0.05: {summary}"))?;
    Ok(summary)
}

/// Labels each SOM unit by its nearest cluster mean and checks that every
/// label forms one 4-connected region.
fn contiguous_regions(state: &SomState, means: &[Vec<f64>]) -> std::result::Result<usize, String> {
    let (h, w) = (state.height, state.width);
    let label: Vec<usize> = (0..h * w)
        .map(|i| {
            let u = &state.codebook[i * state.dim..(i + 1) * state.dim];
            let d = |m: &Vec<f64>| m.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            (0..means.len())
                .min_by(|&a, &b| d(&means[a]).total_cmp(&d(&means[b])))
                .unwrap()
        })
        .collect();
    let mut seen = vec![false; h * w];
    let mut regions = 0;
    for start in 0..h * w {
        if seen[start] {
            continue;
        }
        regions += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            let (row, col) = (i / w, i % w);
            let mut nbrs = Vec::new();
            if row > 0 {
                nbrs.push(i - w);
            }
            if row + 1 < h {
                nbrs.push(i + w);
            }
            if col > 0 {
                nbrs.push(i - 1);
            }
            if col + 1 < w {
                nbrs.push(i + 1);
            }
            for j in nbrs {
                if !seen[j] && label[j] == label[i] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    let present: std::collections::BTreeSet<usize> = label.iter().copied().collect();
    ensure(present.len() == means.len(), || {
        format!("only {} cluster labels on the map", present.len())
    })?;
    ensure(regions == means.len(), || {
        format!("{regions} regions for {} clusters", means.len())
    })?;
    Ok(regions)
}

/// Three well-separated 32-dimensional Gaussian clusters.
pub fn three_clusters(per: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>, Vec<Vec<f64>>) {
    let mut r = rng::seeded(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let means: Vec<Vec<f64>> = (0..3)
        .map(|c| (0..32).map(|j| if j % 3 == c { 8.0 } else { 0.0 }).collect())
        .collect();
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    for (c, m) in means.iter().enumerate() {
        for _ in 0..per {
            feats.push(m.iter().map(|v| v + noise.sample(&mut r)).collect());
            labels.push(c);
        }
    }
    (feats, labels, means)
}

/// Cluster purity of BMU assignments: majority-label share summed over units.
pub fn som_purity(state: &SomState, feats: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut per_unit: BTreeMap<(usize, usize), BTreeMap<usize, usize>> = BTreeMap::new();
    for (f, l) in feats.iter().zip(labels) {
        let u = som_assign(state, f).unwrap();
        *per_unit.entry(u).or_default().entry(*l).or_default() += 1;
    }
    let majority: usize = per_unit.values().map(|m| m.values().max().copied().unwrap_or(0)).sum();
    majority as f64 / feats.len() as f64
}

pub fn som_suite() -> Outcome {
    let mut s = lift(SomState::new(256, 256, 32, 1000), "som")?;
    s.radius0 = 128.0;
    let tau = s.time_constant();
    ensure((tau - 1000.0 / 128f64.ln()).abs() < 1e-12, || format!("tau {tau}"))?;
    ensure((tau - 206.115).abs() < 0.02, || format!("tau {tau} far from 206.115"))?;

    let (feats, labels, means) = three_clusters(60, 3);
    let mut state = lift(SomState::new(12, 12, 32, 3000), "som")?;
    lift(state.initialize(&feats, 1), "init")?;
    let fitted = lift(som_fit(&feats, &state, 2), "fit")?;
    let purity = som_purity(&fitted, &feats, &labels);
    ensure(purity >= 0.9, || format!("purity {purity}"))?;
    let regions = contiguous_regions(&fitted, &means)?;

    let mut frozen = state.clone();
    frozen.lr0 = 0.0;
    ensure(
        lift(som_fit(&feats, &frozen, 2), "fit")?.codebook == frozen.codebook,
        || "lr=0 moved the codebook".into(),
    )?;

    let mut narrow = state.clone();
    narrow.iters_total = 1;
    narrow.radius0 = 1e-3;
    let x = &feats[0];
    let bmu = lift(som_assign(&narrow, x), "assign")?;
    let moved = lift(som_fit(std::slice::from_ref(x), &narrow, 0), "fit")?;
    for row in 0..narrow.height {
        for col in 0..narrow.width {
            let changed = moved.unit(row, col) != narrow.unit(row, col);
            ensure(changed == ((row, col) == bmu), || {
                format!("unit ({row},{col}) changed={changed}")
            })?;
        }
    }
    Ok(format!(
        "tau {tau:.4}, purity {purity:.3}, {regions} contiguous regions, lr=0 identity, BMU-only update"
    ))
}

pub fn pca_suite() -> Outcome {
    let dir = [1.0, -2.0, 0.5, 3.0];
    let rank1: Vec<f64> = (0..30).flat_map(|i| dir.map(|c| c * (i as f64 * 0.7 - 4.0))).collect();
    let p = lift(pca(&rank1, 30, 4, 1), "rank-1 pca")?;
    ensure((p.explained_variance_ratio[0] - 1.0).abs() < 1e-9, || {
        format!("rank-1 ratio {}", p.explained_variance_ratio[0])
    })?;

    let mut worst = 0.0f64;
    for seed in 0..5 {
        let mut r = rng::seeded(500 + seed);
        let (n, d) = (200, 32);
        // correlated columns so the spectrum is not flat
        let mix: Vec<f64> = (0..d * d).map(|_| r.random_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..n * d)
            .map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut r))
            .collect();
        let data: Vec<f64> = (0..n)
            .flat_map(|i| {
                let z = &z;
                let mix = &mix;
                (0..d).map(move |j| (0..d).map(|k| z[i * d + k] * mix[k * d + j]).sum::<f64>())
            })
            .collect();
        let ours = lift(pca(&data, n, d, d), "pca")?;
        let eig = jacobi_eigenvalues(&covariance(&data, n, d), d);
        let total: f64 = eig.iter().sum();
        for (a, b) in ours.explained_variance_ratio.iter().zip(&eig) {
            worst = worst.max((a - b / total).abs());
        }
    }
    ensure(worst <= 1e-8, || {
        format!("explained variance differs from covariance oracle by {worst:e}")
    })?;
    Ok(format!(
        "rank-1 ratio 1, max ratio difference vs Jacobi oracle {worst:.1e} on 5 random 200x32 matrices"
    ))
}

pub fn format_round_trips(work_dir: &Path) -> Outcome {
    let lat = Lattice::new(21).unwrap();
    let mut opts = GenerateOptions::new(Domain::Momentum, 8);
    let params = [
        CouplingParams::reference(-15.0, 12.0),
        CouplingParams::reference(5.0, -3.0),
    ];
    let manifest = lift(generate_dataset(&params, lat, work_dir, &opts), "generate")?;
    opts.domain = Domain::Position;
    let pos = lift(qwalk::data::simulate_sample(&params[0], lat, &opts, 1, 3), "simulate")?;

    for s in lift(manifest.load_all(work_dir), "load")?.iter().chain([&pos]) {
        let bytes = encode_sample(s);
        let back = lift(decode_sample(&bytes, "sample"), "decode")?;
        ensure(&back == s && encode_sample(&back) == bytes, || {
            "sample round trip not bitwise".into()
        })?;
        let mut bad = bytes.clone();
        bad[0] ^= 0xFF;
        ensure(matches!(decode_sample(&bad, "x"), Err(Error::BadMagic { .. })), || {
            "corrupt magic accepted".into()
        })?;
        ensure(
            matches!(
                decode_sample(&bytes[..bytes.len() - 3], "x"),
                Err(Error::TruncatedFile { .. })
            ),
            || "short payload accepted".into(),
        )?;
        ensure(
            matches!(decode_sample(&bytes[..20], "x"), Err(Error::TruncatedFile { .. })),
            || "short header accepted".into(),
        )?;
        let mut v = bytes.clone();
        v[8] = 9;
        ensure(
            matches!(decode_sample(&v, "x"), Err(Error::VersionMismatch { .. })),
            || "bad version accepted".into(),
        )?;
    }
    for entry in &manifest.samples {
        let on_disk = std::fs::read(work_dir.join(&entry.file)).map_err(|e| e.to_string())?;
        let s = lift(decode_sample(&on_disk, "disk"), "decode")?;
        ensure(encode_sample(&s) == on_disk, || {
            "file bytes differ from re-encoding".into()
        })?;
    }

    let text = std::fs::read(work_dir.join(qwalk::data::MANIFEST_FILE)).map_err(|e| e.to_string())?;
    let back = lift(DatasetManifest::read(work_dir), "manifest read")?;
    ensure(back == manifest, || "manifest round trip differs".into())?;
    let copy = work_dir.join("copy");
    std::fs::create_dir_all(&copy).map_err(|e| e.to_string())?;
    lift(back.write(&copy), "manifest write")?;
    let rewritten = std::fs::read(copy.join(qwalk::data::MANIFEST_FILE)).map_err(|e| e.to_string())?;
    ensure(rewritten == text, || "manifest rewrite not byte-identical".into())?;

    let nets = [
        lift(NetworkModel::mlp(&[4, 9, 9], vec![-1, 0, 1], 1), "mlp")?,
        lift(NetworkModel::vanilla_cnn(&[4, 16, 16], vec![0, 1], 2), "cnn")?,
    ];
    for net in &nets {
        let bytes = net.to_bytes();
        let back = lift(NetworkModel::from_bytes(&bytes, "net"), "network decode")?;
        ensure(&back == net && back.to_bytes() == bytes, || {
            "network checkpoint round trip not bitwise".into()
        })?;
        ensure(
            matches!(
                NetworkModel::from_bytes(&bytes[..bytes.len() / 2], "x"),
                Err(Error::TruncatedFile { .. })
            ),
            || "truncated network accepted".into(),
        )?;
        ensure(
            matches!(
                NetworkModel::from_bytes(b"QWSOM001xxxxxxxx", "x"),
                Err(Error::BadMagic { .. })
            ),
            || "foreign magic accepted".into(),
        )?;
    }
    let (feats, _, _) = three_clusters(5, 1);
    let mut som = lift(SomState::new(4, 5, 32, 10), "som")?;
    lift(som.initialize(&feats, 4), "init")?;
    let bytes = som.to_bytes();
    let back = lift(SomState::from_bytes(&bytes, "som"), "som decode")?;
    ensure(back == som && back.to_bytes() == bytes, || {
        "SOM checkpoint round trip not bitwise".into()
    })?;
    ensure(
        matches!(
            SomState::from_bytes(&bytes[..30], "x"),
            Err(Error::TruncatedFile { .. })
        ),
        || "truncated SOM accepted".into(),
    )?;
    ensure(
        matches!(
            SomState::from_bytes(b"QWDPROF1xxxxxxxx", "x"),
            Err(Error::BadMagic { .. })
        ),
        || "foreign SOM magic accepted".into(),
    )?;
    Ok(format!(
        "{} samples, manifest, {} network and 1 SOM checkpoints bitwise; magic/truncation/version errors raised",
        manifest.samples.len() + 1,
        nets.len()
    ))
}

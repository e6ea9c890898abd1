//! Numerical self-checks: gradients of the composed losses, exact identities,
//! the toy Gaussian distance, and brute-force maxima of the triplet objective.

use std::fmt;

use tripletgan::autodiff::{grad_check, Array2, AutodiffError, Graph, Var};
use tripletgan::evaluation::{
    antipodal_optimality_check, brute_force_ipm, ipm_family, ipm_separation, toy_distance_check, DiscreteDist,
};
use tripletgan::losses::{
    clip_mean, clip_terms, generator_loss, hinge_mean, mean_pairwise_distance, mmd_chord_kernel, triplet_objective,
    vanilla_gan_losses, ClipConfig,
};
use tripletgan::models::{build_mlp_with, critic_forward, generator_forward, Activation, BoundParams, MlpParams, MlpSpec, OutputTransform};
use tripletgan::sampler::{make_triplets, Rng, TripletBatch};
use tripletgan::sphere::{arc_distance, chord_distance, SphereMetric};

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_POINTS: usize = 50;
pub const GRAD_STEP: f64 = 1e-6;
/// Distance of every clipped quantity from its kink at a grad-check point.
const KINK_MARGIN: f64 = 1e-4;
pub const MMD_TOLERANCE: f64 = 1e-9;
pub const MMD_SETS: usize = 200;
pub const ARC_TOLERANCE: f64 = 1e-9;
pub const ARC_PAIRS: usize = 10_000;
pub const TOY_SAMPLES: usize = 1_000_000;
pub const TOY_SIGMAS: [(f64, f64); 4] = [(0.0, 1.0), (1.0, 1.0), (1.0, 2.0), (0.5, 3.0)];
pub const IPM_GRID: usize = 8;
pub const IPM_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckRow {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            pass,
            detail,
        }
    }
}

impl fmt::Display for CheckRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<4}  {:<22} {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn contract(e: impl fmt::Display) -> AutodiffError {
    AutodiffError::Contract(e.to_string())
}

fn unit_rows(rng: &mut Rng, n: usize, dim: usize) -> Array2 {
    let mut a = Array2::from_fn(n, dim, |_, _| rng.normal());
    for r in 0..n {
        let norm = a.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in a.row_mut(r) {
            *v /= norm;
        }
    }
    a
}

/// Binds `params` as constants except tensor `idx` (in `tensors()` order), which becomes `x`.
fn bind_with(g: &mut Graph, params: &MlpParams, idx: usize, x: Var) -> BoundParams {
    let mut p = params.bind(g, false);
    if idx % 2 == 0 {
        p.weights[idx / 2] = x;
    } else {
        p.biases[idx / 2] = x;
    }
    p
}

/// Small networks of the ring architecture; widths are reduced so central
/// differences over every coordinate stay cheap.
struct GradSetup {
    gen_spec: MlpSpec,
    critic_spec: MlpSpec,
    logit_spec: MlpSpec,
    generator: MlpParams,
    critic: MlpParams,
    logit: MlpParams,
    real: Array2,
    z: Array2,
    triplets: TripletBatch,
}

const GRAD_BATCH: usize = 5;
const GRAD_FEATURES: usize = 4;

impl GradSetup {
    fn draw(rng: &mut Rng) -> Self {
        let gen_spec = MlpSpec::new(vec![6, 12, 12, 2], Activation::Tanh, OutputTransform::Linear).unwrap();
        let critic_spec = MlpSpec::new(vec![2, 12, 12, GRAD_FEATURES], Activation::Tanh, OutputTransform::L2Normalize).unwrap();
        let logit_spec = MlpSpec::new(vec![2, 12, 12, 1], Activation::Tanh, OutputTransform::Linear).unwrap();
        let with_bias = |spec: &MlpSpec, rng: &mut Rng| {
            let mut p = build_mlp_with(spec, rng);
            for b in &mut p.biases {
                for v in b.data_mut() {
                    *v = 0.1 * rng.normal();
                }
            }
            p
        };
        let generator = with_bias(&gen_spec, rng);
        let critic = with_bias(&critic_spec, rng);
        let logit = with_bias(&logit_spec, rng);
        let real = Array2::from_fn(GRAD_BATCH, 2, |_, _| rng.normal());
        let z = Array2::from_fn(GRAD_BATCH, 6, |_, _| rng.normal());
        Self {
            gen_spec,
            critic_spec,
            logit_spec,
            generator,
            critic,
            logit,
            real,
            z,
            triplets: make_triplets(GRAD_BATCH).unwrap(),
        }
    }

    fn fake(&self) -> Array2 {
        let mut g = Graph::new();
        let p = self.generator.bind(&mut g, false);
        let z = g.constant(self.z.clone());
        let f = generator_forward(&mut g, &self.gen_spec, &p, z).unwrap();
        g.value(f).clone()
    }

    /// Raw triplet values and the gathered cosines, all with constant inputs.
    fn raw_and_cosines(&self, metric: SphereMetric) -> Result<(Vec<f64>, Vec<f64>), AutodiffError> {
        let mut g = Graph::new();
        let p = self.critic.bind(&mut g, false);
        let r = g.constant(self.real.clone());
        let f = g.constant(self.fake());
        let er = critic_forward(&mut g, &self.critic_spec, &p, r, GRAD_FEATURES, true).map_err(contract)?;
        let ef = critic_forward(&mut g, &self.critic_spec, &p, f, GRAD_FEATURES, true).map_err(contract)?;
        let terms = triplet_objective(&mut g, er, ef, &self.triplets, metric).map_err(contract)?;
        let (er, ef) = (g.value(er), g.value(ef));
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut cosines = Vec::new();
        for t in self.triplets.triplets() {
            cosines.push(dot(er.row(t.real_i), ef.row(t.fake_i)));
            cosines.push(dot(ef.row(t.fake_i), ef.row(t.fake_j)));
        }
        Ok((g.value(terms.raw).data().to_vec(), cosines))
    }
}

/// Worst relative error of the four composed losses, each over
/// [`GRAD_POINTS`] random points away from the clip and arccos kinks.
pub fn grad_checks(seed: u64, metric: SphereMetric) -> Vec<CheckRow> {
    let mut rng = Rng::new(seed);
    let names = ["grad clipped critic", "grad generator", "grad vanilla d", "grad vanilla g"];
    let mut worst = [0.0f64; 4];
    let mut failures: Vec<String> = Vec::new();
    let mut accepted = 0;
    let mut drawn = 0;
    while accepted < GRAD_POINTS && drawn < 20 * GRAD_POINTS {
        drawn += 1;
        let s = GradSetup::draw(&mut rng);
        let Ok((mut raw, cosines)) = s.raw_and_cosines(metric) else {
            continue;
        };
        if cosines.iter().any(|c| c.abs() > 1.0 - KINK_MARGIN) {
            continue;
        }
        raw.sort_by(f64::total_cmp);
        let mid = raw.len() / 2;
        if raw[mid] - raw[mid - 1] < 2.0 * KINK_MARGIN {
            continue;
        }
        // Half the triplets clipped, half not; the threshold must be positive.
        let Ok(clip) = ClipConfig::new(0.5 * (raw[mid - 1] + raw[mid])) else {
            continue;
        };
        let i = accepted;
        accepted += 1;

        let c_idx = i % s.critic.tensors().len();
        let g_idx = i % s.generator.tensors().len();
        let l_idx = i % s.logit.tensors().len();
        let fake = s.fake();
        let results = [
            grad_check(
                |g, x| {
                    let p = bind_with(g, &s.critic, c_idx, x);
                    let r = g.constant(s.real.clone());
                    let f = g.constant(fake.clone());
                    let er = critic_forward(g, &s.critic_spec, &p, r, GRAD_FEATURES, true).map_err(contract)?;
                    let ef = critic_forward(g, &s.critic_spec, &p, f, GRAD_FEATURES, true).map_err(contract)?;
                    let terms = triplet_objective(g, er, ef, &s.triplets, metric).map_err(contract)?;
                    clip_terms(g, &terms, clip).map_err(contract)
                },
                s.critic.tensors()[c_idx],
                GRAD_STEP,
            ),
            grad_check(
                |g, x| {
                    let gp = bind_with(g, &s.generator, g_idx, x);
                    let cp = s.critic.bind(g, false);
                    let z = g.constant(s.z.clone());
                    let f = generator_forward(g, &s.gen_spec, &gp, z).map_err(contract)?;
                    let r = g.constant(s.real.clone());
                    let er = critic_forward(g, &s.critic_spec, &cp, r, GRAD_FEATURES, true).map_err(contract)?;
                    let ef = critic_forward(g, &s.critic_spec, &cp, f, GRAD_FEATURES, true).map_err(contract)?;
                    generator_loss(g, er, ef, &s.triplets, metric).map_err(contract)
                },
                s.generator.tensors()[g_idx],
                GRAD_STEP,
            ),
            grad_check(
                |g, x| {
                    let p = bind_with(g, &s.logit, l_idx, x);
                    let r = g.constant(s.real.clone());
                    let f = g.constant(fake.clone());
                    let lr = critic_forward(g, &s.logit_spec, &p, r, 1, false).map_err(contract)?;
                    let lf = critic_forward(g, &s.logit_spec, &p, f, 1, false).map_err(contract)?;
                    Ok(vanilla_gan_losses(g, lr, lf).map_err(contract)?.0)
                },
                s.logit.tensors()[l_idx],
                GRAD_STEP,
            ),
            grad_check(
                |g, x| {
                    let gp = bind_with(g, &s.generator, g_idx, x);
                    let cp = s.logit.bind(g, false);
                    let z = g.constant(s.z.clone());
                    let f = generator_forward(g, &s.gen_spec, &gp, z).map_err(contract)?;
                    let r = g.constant(s.real.clone());
                    let lr = critic_forward(g, &s.logit_spec, &cp, r, 1, false).map_err(contract)?;
                    let lf = critic_forward(g, &s.logit_spec, &cp, f, 1, false).map_err(contract)?;
                    Ok(vanilla_gan_losses(g, lr, lf).map_err(contract)?.1)
                },
                s.generator.tensors()[g_idx],
                GRAD_STEP,
            ),
        ];
        for (k, r) in results.into_iter().enumerate() {
            match r {
                Ok(e) => worst[k] = worst[k].max(e),
                Err(e) => failures.push(format!("{}: {e}", names[k])),
            }
        }
    }
    (0..4)
        .map(|k| {
            let errs: Vec<&String> = failures.iter().filter(|f| f.starts_with(names[k])).collect();
            let pass = accepted == GRAD_POINTS && errs.is_empty() && worst[k] <= GRAD_TOLERANCE;
            let mut detail = format!("max rel err {:.3e} over {accepted} points (tol {GRAD_TOLERANCE:e})", worst[k]);
            if let Some(e) = errs.first() {
                detail.push_str(&format!("; {e}"));
            }
            CheckRow::new(names[k], pass, detail)
        })
        .collect()
}

/// `mean(min(a, c)) = c - mean([c - a]_+)`. Dyadic inputs make every
/// operation exact, so equality is tested bitwise; general floats get a
/// rounding-level tolerance.
pub fn clip_identity_check(seed: u64) -> CheckRow {
    let mut rng = Rng::new(seed);
    let mut exact_ok = 0;
    let mut worst = 0.0f64;
    const VECTORS: usize = 1000;
    for _ in 0..VECTORS {
        // Multiples of 2^-9 below 2^3 and a power-of-two length keep every sum and the division exact.
        let n = 1usize << rng.below(7);
        let dyadic = |rng: &mut Rng| (rng.below(1 << 12) as f64 - 2048.0) / 512.0;
        let a: Vec<f64> = (0..n).map(|_| dyadic(&mut rng)).collect();
        let c = (1 + rng.below(1 << 11)) as f64 / 512.0;
        if clip_mean(&a, c) == c - hinge_mean(&a, c) {
            exact_ok += 1;
        }
        let n = 1 + rng.below(64);
        let a: Vec<f64> = (0..n).map(|_| 8.0 * rng.uniform() - 4.0).collect();
        let c = 0.01 + 3.5 * rng.uniform();
        worst = worst.max((clip_mean(&a, c) - (c - hinge_mean(&a, c))).abs());
    }
    CheckRow::new(
        "clip identity",
        exact_ok == VECTORS && worst <= 1e-12,
        format!("{exact_ok}/{VECTORS} dyadic vectors exact; max float deviation {worst:.1e}"),
    )
}

pub fn triplet_count_check() -> CheckRow {
    let bad: Vec<usize> = (2..=32)
        .filter(|&b| match make_triplets(b) {
            Ok(t) => t.len() != b * (b - 1) || t.triplets().iter().any(|x| x.fake_i == x.fake_j),
            Err(_) => true,
        })
        .collect();
    CheckRow::new(
        "triplet count",
        bad.is_empty(),
        if bad.is_empty() {
            "B(B-1) triplets for B = 2..=32".into()
        } else {
            format!("wrong for B in {bad:?}")
        },
    )
}

pub fn arc_chord_check(seed: u64) -> CheckRow {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..ARC_PAIRS {
        let dim = 2 + rng.below(15);
        let uv = unit_rows(&mut rng, 2, dim);
        let chord = chord_distance(uv.row(0), uv.row(1)).unwrap();
        let arc = arc_distance(uv.row(0), uv.row(1)).unwrap();
        worst = worst.max((arc - 2.0 * (chord / 2.0).min(1.0).asin()).abs());
    }
    CheckRow::new(
        "arc vs chord",
        worst <= ARC_TOLERANCE,
        format!("max |arc - 2 asin(chord/2)| = {worst:.2e} over {ARC_PAIRS} pairs"),
    )
}

pub fn toy_check(sigma1: f64, sigma2: f64, n_mc: usize, seed: u64) -> CheckRow {
    let name = "toy distance";
    match toy_distance_check(sigma1, sigma2, n_mc, &mut Rng::new(seed)) {
        Ok(t) => {
            let pass = (t.mc_estimate - t.analytic).abs() <= 3.0 * t.std_err && t.mean_match.abs() <= 3.0 * t.mean_match_std_err;
            CheckRow::new(
                name,
                pass,
                format!(
                    "σ=({sigma1}, {sigma2}): analytic {:.5} vs MC {:.5} ± {:.5}; mean match {:.5} ± {:.5}",
                    t.analytic, t.mc_estimate, t.std_err, t.mean_match, t.mean_match_std_err
                ),
            )
        }
        Err(e) => CheckRow::new(name, false, format!("σ=({sigma1}, {sigma2}): {e}")),
    }
}

pub fn toy_grid(seed: u64) -> Vec<CheckRow> {
    TOY_SIGMAS
        .iter()
        .enumerate()
        .map(|(i, &(s1, s2))| toy_check(s1, s2, TOY_SAMPLES, seed + i as u64))
        .collect()
}

pub fn mmd_identity_check(seed: u64) -> CheckRow {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    let mut err = None;
    for set in 0..MMD_SETS {
        let n_real = 1 + rng.below(12);
        let n_fake = 1 + rng.below(12);
        let dim = 2 + rng.below(15);
        let metric = if set % 2 == 0 { SphereMetric::Arc } else { SphereMetric::Chord };
        let real = unit_rows(&mut rng, n_real, dim);
        let fake = unit_rows(&mut rng, n_fake, dim);
        let run = || -> Result<f64, String> {
            let e_rr = mean_pairwise_distance(&real, &real, metric).map_err(|e| e.to_string())?;
            let e_rf = mean_pairwise_distance(&real, &fake, metric).map_err(|e| e.to_string())?;
            let mut g = Graph::new();
            let r = g.constant(real.clone());
            let f = g.constant(fake.clone());
            let all = TripletBatch::all_combinations(n_real, n_fake);
            let lt = triplet_objective(&mut g, r, f, &all, metric).map_err(|e| e.to_string())?.value(&g).total;
            let mmd = mmd_chord_kernel(&real, &fake, metric).map_err(|e| e.to_string())?;
            Ok((mmd - ((e_rr - e_rf) - lt)).abs())
        };
        match run() {
            Ok(d) => worst = worst.max(d),
            Err(e) => {
                err = Some(e);
                break;
            }
        }
    }
    match err {
        Some(e) => CheckRow::new("mmd identity", false, e),
        None => CheckRow::new(
            "mmd identity",
            worst <= MMD_TOLERANCE,
            format!("max deviation {worst:.2e} over {MMD_SETS} embedding sets"),
        ),
    }
}

/// Zero on the diagonal and above the margin elsewhere, over [`ipm_family`].
pub fn ipm_family_checks() -> Vec<CheckRow> {
    let r = match ipm_separation(&ipm_family(), IPM_GRID, IPM_MARGIN) {
        Ok(r) => r,
        Err(e) => return vec![CheckRow::new("ipm family", false, e.to_string())],
    };
    let off = r.pairs.iter().filter(|v| v.p != v.q).map(|v| v.value);
    let min_off = off.fold(f64::INFINITY, f64::min);
    let bad = r.unseparated();
    let mut detail = format!("{} ordered pairs, k={}, min off-diagonal {min_off:.4}", r.pairs.len(), r.k);
    if !bad.is_empty() {
        let list: Vec<String> = bad
            .iter()
            .map(|v| match v.split_value {
                Some(s) => format!("({},{})={} [split {s:.4}]", v.p, v.q, v.value),
                None => format!("({},{})={}", v.p, v.q, v.value),
            })
            .collect();
        detail.push_str(&format!("; not separated: {}", list.join(" ")));
    }
    vec![
        CheckRow::new("ipm diagonal", r.diagonal_exact(), "brute_force_ipm(P, P) == 0 for all 10".into()),
        CheckRow::new("ipm separation", bad.is_empty(), detail),
    ]
}

/// `P` uniform on `atoms` atoms against `Q` uniform on the first half of them.
pub fn ipm_check(atoms: usize, grid: usize) -> CheckRow {
    let half = atoms.div_ceil(2);
    let run = || -> Result<String, String> {
        let p = DiscreteDist::uniform((0..atoms).collect()).map_err(|e| e.to_string())?;
        let q = DiscreteDist::uniform((0..half).collect()).map_err(|e| e.to_string())?;
        let r = brute_force_ipm(&p, &q, grid).map_err(|e| e.to_string())?;
        if atoms >= 2 && !(r.value > 0.0) {
            return Err(format!("sup {} is not positive", r.value));
        }
        Ok(format!(
            "P=U{{0..{atoms}}}, Q=U{{0..{half}}}, k={grid}: sup {:.6} at {:?} ({} maximizers)",
            r.value,
            r.argmax,
            r.maximizers.len()
        ))
    };
    match run() {
        Ok(d) => CheckRow::new("ipm", true, d),
        Err(e) => CheckRow::new("ipm", false, e),
    }
}

pub fn antipodal_checks() -> Vec<CheckRow> {
    let mut rows = Vec::new();
    for (m_real, m_fake) in [(1, 1), (2, 2), (1, 3), (3, 2)] {
        let name = "antipodal";
        rows.push(match antipodal_optimality_check(m_real, m_fake, IPM_GRID, None) {
            Ok(r) => CheckRow::new(
                name,
                r.argmax_is_antipodal && r.n_non_antipodal_maximizers == 0 && (r.value - 2.0).abs() < 1e-12,
                format!("{m_real} real / {m_fake} fake: value {:.6}, argmax {:?}, {} maximizers", r.value, r.argmax, r.n_maximizers),
            ),
            Err(e) => CheckRow::new(name, false, e.to_string()),
        });
    }
    rows.push(match antipodal_optimality_check(2, 2, IPM_GRID, Some(1.0)) {
        Ok(r) => CheckRow::new(
            "antipodal clipped",
            (r.value - 1.0).abs() < 1e-12 && r.n_non_antipodal_maximizers > 0,
            format!(
                "c=1: value {:.6}, {} of {} maximizers non-antipodal, argmax {:?}",
                r.value, r.n_non_antipodal_maximizers, r.n_maximizers, r.argmax
            ),
        ),
        Err(e) => CheckRow::new("antipodal clipped", false, e.to_string()),
    });
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    All,
    Grad,
    Clip,
    Triplets,
    Arc,
    Toy,
    Mmd,
    Ipm,
    IpmFamily,
    Antipodal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOptions {
    pub kind: CheckKind,
    pub seed: u64,
    pub metric: SphereMetric,
    /// A single toy pair instead of the default grid.
    pub sigmas: Option<(f64, f64)>,
    pub atoms: usize,
    pub grid: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            kind: CheckKind::All,
            seed: 0,
            metric: SphereMetric::Arc,
            sigmas: None,
            atoms: 4,
            grid: IPM_GRID,
        }
    }
}

pub fn run_checks(opts: &CheckOptions) -> Vec<CheckRow> {
    let all = opts.kind == CheckKind::All;
    let mut rows = Vec::new();
    if all || opts.kind == CheckKind::Grad {
        rows.extend(grad_checks(opts.seed, opts.metric));
    }
    if all || opts.kind == CheckKind::Clip {
        rows.push(clip_identity_check(opts.seed));
    }
    if all || opts.kind == CheckKind::Triplets {
        rows.push(triplet_count_check());
    }
    if all || opts.kind == CheckKind::Arc {
        rows.push(arc_chord_check(opts.seed));
    }
    if all || opts.kind == CheckKind::Toy {
        match opts.sigmas {
            Some((s1, s2)) => rows.push(toy_check(s1, s2, TOY_SAMPLES, opts.seed)),
            None => rows.extend(toy_grid(opts.seed)),
        }
    }
    if all || opts.kind == CheckKind::Mmd {
        rows.push(mmd_identity_check(opts.seed));
    }
    if all || opts.kind == CheckKind::Ipm {
        rows.push(ipm_check(opts.atoms, opts.grid));
    }
    if all || opts.kind == CheckKind::IpmFamily {
        rows.extend(ipm_family_checks());
    }
    if all || opts.kind == CheckKind::Antipodal {
        rows.extend(antipodal_checks());
    }
    rows
}

//! Scalar objectives: the triplet objective and its clipped critic form, the
//! vanilla GAN losses, the distance-kernel MMD, and the closed-form toy
//! distance between two centred Gaussians.
//!
//! For a triplet `(G(z_i), G(z_j), x_i)` the raw value is
//! `d(f(x_i), f(G(z_i))) - d(f(G(z_i)), f(G(z_j)))`. The critic ascends the mean
//! of `min(raw, c)`; the generator descends the unclipped mean.

use std::sync::Arc;

use thiserror::Error;

use crate::autodiff::{Array2, AutodiffError, Graph, Var};
use crate::sampler::TripletBatch;
use crate::sphere::{pairwise_distance_node, SphereMetric};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("empty triplet set")]
    EmptyTriplets,
    #[error("empty batch")]
    EmptyBatch,
    #[error("triplet {index} refers to row {row} of a {rows}-row {side} batch")]
    IndexOutOfRange {
        index: usize,
        side: &'static str,
        row: usize,
        rows: usize,
    },
    #[error("clip threshold must be > 0, got {0}")]
    InvalidClip(f64),
    #[error("{0}")]
    Contract(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Threshold `c` above which a triplet stops contributing critic gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipConfig {
    c: f64,
}

impl ClipConfig {
    /// `c = +inf` disables clipping.
    pub fn new(c: f64) -> Result<Self, LossError> {
        if !(c > 0.0) {
            return Err(LossError::InvalidClip(c));
        }
        Ok(Self { c })
    }

    pub fn c(&self) -> f64 {
        self.c
    }
}

/// Nodes of one evaluation of the triplet objective.
#[derive(Debug, Clone, Copy)]
pub struct TripletTerms {
    /// Per-triplet raw values, `t x 1`.
    pub raw: Var,
    /// Mean real-to-fake distance.
    pub cross: Var,
    /// Mean fake-to-fake distance.
    pub intra: Var,
    /// `cross - intra`.
    pub total: Var,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletObjectiveValue {
    pub cross_term: f64,
    pub intra_term: f64,
    pub total: f64,
}

impl TripletTerms {
    pub fn value(&self, g: &Graph) -> TripletObjectiveValue {
        TripletObjectiveValue {
            cross_term: g.value(self.cross).data()[0],
            intra_term: g.value(self.intra).data()[0],
            total: g.value(self.total).data()[0],
        }
    }
}

fn check_triplets(triplets: &TripletBatch, n_real: usize, n_fake: usize) -> Result<(), LossError> {
    if triplets.is_empty() {
        return Err(LossError::EmptyTriplets);
    }
    for (index, t) in triplets.triplets().iter().enumerate() {
        for (side, row, rows) in [
            ("fake", t.fake_i, n_fake),
            ("fake", t.fake_j, n_fake),
            ("real", t.real_i, n_real),
        ] {
            if row >= rows {
                return Err(LossError::IndexOutOfRange {
                    index,
                    side,
                    row,
                    rows,
                });
            }
        }
    }
    Ok(())
}

/// Differentiable triplet objective over unit-row embeddings.
pub fn triplet_objective(
    g: &mut Graph,
    emb_real: Var,
    emb_fake: Var,
    triplets: &TripletBatch,
    metric: SphereMetric,
) -> Result<TripletTerms, LossError> {
    let n_real = g.value(emb_real).rows();
    let n_fake = g.value(emb_fake).rows();
    check_triplets(triplets, n_real, n_fake)?;

    let cross_idx: Arc<[(usize, usize)]> = triplets.triplets().iter().map(|t| (t.real_i, t.fake_i)).collect();
    let intra_idx: Arc<[(usize, usize)]> = triplets.triplets().iter().map(|t| (t.fake_i, t.fake_j)).collect();

    let d_rf = pairwise_distance_node(g, emb_real, emb_fake, metric)?;
    let d_ff = pairwise_distance_node(g, emb_fake, emb_fake, metric)?;
    let cross_vec = g.gather_entries(d_rf, cross_idx)?;
    let intra_vec = g.gather_entries(d_ff, intra_idx)?;
    let raw = g.sub(cross_vec, intra_vec)?;
    let cross = g.mean_all(cross_vec)?;
    let intra = g.mean_all(intra_vec)?;
    let total = g.sub(cross, intra)?;
    Ok(TripletTerms {
        raw,
        cross,
        intra,
        total,
    })
}

/// Mean over triplets of `min(raw, c)`. The critic ascends this.
pub fn clipped_critic_loss(
    g: &mut Graph,
    emb_real: Var,
    emb_fake: Var,
    triplets: &TripletBatch,
    metric: SphereMetric,
    clip: ClipConfig,
) -> Result<Var, LossError> {
    let terms = triplet_objective(g, emb_real, emb_fake, triplets, metric)?;
    clip_terms(g, &terms, clip)
}

/// Clipped mean of already-built raw triplet values.
pub fn clip_terms(g: &mut Graph, terms: &TripletTerms, clip: ClipConfig) -> Result<Var, LossError> {
    let clipped = g.min_with_const(terms.raw, clip.c())?;
    Ok(g.mean_all(clipped)?)
}

/// The unclipped triplet objective. The generator descends this.
pub fn generator_loss(
    g: &mut Graph,
    emb_real: Var,
    emb_fake: Var,
    triplets: &TripletBatch,
    metric: SphereMetric,
) -> Result<Var, LossError> {
    Ok(triplet_objective(g, emb_real, emb_fake, triplets, metric)?.total)
}

/// Discriminator and non-saturating generator losses from logits:
/// `d = -mean ln σ(real) - mean ln(1 - σ(fake))`, `g = -mean ln σ(fake)`.
pub fn vanilla_gan_losses(g: &mut Graph, real_logits: Var, fake_logits: Var) -> Result<(Var, Var), LossError> {
    for v in [real_logits, fake_logits] {
        let (r, c) = g.value(v).shape();
        if c != 1 || r == 0 {
            return Err(LossError::Contract(format!("logits must be n x 1 with n >= 1, got {r}x{c}")));
        }
    }
    // -ln σ(x) = softplus(-x), -ln(1 - σ(x)) = softplus(x).
    let neg_real = g.scale(real_logits, -1.0)?;
    let sp_real = g.softplus(neg_real)?;
    let sp_fake = g.softplus(fake_logits)?;
    let real_term = g.mean_all(sp_real)?;
    let fake_term = g.mean_all(sp_fake)?;
    let d_loss = g.add(real_term, fake_term)?;

    let neg_fake = g.scale(fake_logits, -1.0)?;
    let sp_neg_fake = g.softplus(neg_fake)?;
    let g_loss = g.mean_all(sp_neg_fake)?;
    Ok((d_loss, g_loss))
}

/// `mean(min(a_t, c))`.
pub fn clip_mean(values: &[f64], c: f64) -> f64 {
    values.iter().map(|&a| a.min(c)).sum::<f64>() / values.len() as f64
}

/// `mean([c - a_t]_+)`, the hinge form of the clipped loss.
pub fn hinge_mean(values: &[f64], c: f64) -> f64 {
    values.iter().map(|&a| (c - a).max(0.0)).sum::<f64>() / values.len() as f64
}

/// Distance matrix between embedding rows, evaluated through the same graph
/// ops the losses use.
pub fn distance_matrix(a: &Array2, b: &Array2, metric: SphereMetric) -> Result<Array2, LossError> {
    let mut g = Graph::new();
    let av = g.constant(a.clone());
    let bv = g.constant(b.clone());
    let d = pairwise_distance_node(&mut g, av, bv, metric)?;
    Ok(g.value(d).clone())
}

/// Mean of `d(a_i, b_j)` over all ordered pairs, diagonal included.
pub fn mean_pairwise_distance(a: &Array2, b: &Array2, metric: SphereMetric) -> Result<f64, LossError> {
    if a.rows() == 0 || b.rows() == 0 {
        return Err(LossError::EmptyBatch);
    }
    let d = distance_matrix(a, b, metric)?;
    Ok(d.sum() / d.len() as f64)
}

/// `E_aa k - 2 E_ab k + E_bb k` with `k(x, y) = d(x, y)`, over all ordered
/// pairs. The kernel is not positive definite, so the value can be negative.
pub fn mmd_chord_kernel(emb_a: &Array2, emb_b: &Array2, metric: SphereMetric) -> Result<f64, LossError> {
    let e_aa = mean_pairwise_distance(emb_a, emb_a, metric)?;
    let e_ab = mean_pairwise_distance(emb_a, emb_b, metric)?;
    let e_bb = mean_pairwise_distance(emb_b, emb_b, metric)?;
    Ok(e_aa - 2.0 * e_ab + e_bb)
}

/// `|E|Y - X1| - E|X1 - X2||` for `Y ~ N(0, σ1²)`, `X1, X2 ~ N(0, σ2²)`,
/// which equals `|sqrt(2/π) (sqrt(σ1² + σ2²) - sqrt(2) σ2)|`.
pub fn toy_gaussian_triplet_distance(sigma1: f64, sigma2: f64) -> Result<f64, LossError> {
    if !(sigma1 >= 0.0) || !(sigma2 >= sigma1) {
        return Err(LossError::Contract(format!(
            "need sigma2 >= sigma1 >= 0, got sigma1={sigma1}, sigma2={sigma2}"
        )));
    }
    let k = (2.0 / std::f64::consts::PI).sqrt();
    Ok((k * ((sigma1 * sigma1 + sigma2 * sigma2).sqrt() - std::f64::consts::SQRT_2 * sigma2)).abs())
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use proptest::prelude::*;

    use super::*;
    use crate::autodiff::grad_check;
    use crate::sampler::{make_triplets, Rng, Triplet};
    use crate::sphere::distance;

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

    fn eval_terms(real: &Array2, fake: &Array2, t: &TripletBatch, metric: SphereMetric) -> TripletObjectiveValue {
        let mut g = Graph::new();
        let r = g.constant(real.clone());
        let f = g.constant(fake.clone());
        triplet_objective(&mut g, r, f, t, metric).unwrap().value(&g)
    }

    /// Independent oracle: explicit loop over triplets with the pure distance functions.
    fn enumerate(real: &Array2, fake: &Array2, t: &TripletBatch, metric: SphereMetric) -> (f64, f64) {
        let n = t.len() as f64;
        let mut cross = 0.0;
        let mut intra = 0.0;
        for tr in t.triplets() {
            cross += distance(metric, real.row(tr.real_i), fake.row(tr.fake_i)).unwrap();
            intra += distance(metric, fake.row(tr.fake_i), fake.row(tr.fake_j)).unwrap();
        }
        (cross / n, intra / n)
    }

    fn rows(v: &[&[f64]]) -> Array2 {
        Array2::from_rows(&v.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn antipodal_reals_and_fakes_give_pi() {
        let fake = rows(&[&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]]);
        let real = rows(&[&[-1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0]]);
        let v = eval_terms(&real, &fake, &make_triplets(3).unwrap(), SphereMetric::Arc);
        assert_eq!(v.cross_term, PI);
        assert_eq!(v.intra_term, 0.0);
        assert_eq!(v.total, PI);
    }

    #[test]
    fn identical_embeddings_give_zero() {
        let p = rows(&[&[0.0, 1.0], &[0.0, 1.0]]);
        for metric in [SphereMetric::Arc, SphereMetric::Chord] {
            let v = eval_terms(&p, &p, &make_triplets(2).unwrap(), metric);
            assert_eq!(v.total, 0.0);
        }
    }

    #[test]
    fn two_by_two_matches_hand_enumeration() {
        let s = 0.5f64.sqrt();
        let real = rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let fake = rows(&[&[s, s], &[-1.0, 0.0]]);
        let t = make_triplets(2).unwrap();
        // Triplets (0,1,0) and (1,0,1):
        //   arc:   [π/4 - 3π/4] and [π/2 - 3π/4]  -> mean -3π/8
        //   chord: [c45 - c135] and [√2 - c135] with cθ = 2 sin(θ/2)
        let arc = eval_terms(&real, &fake, &t, SphereMetric::Arc);
        assert!((arc.total - (-3.0 * PI / 8.0)).abs() < 1e-12);
        let chord_of = |theta: f64| 2.0 * (theta / 2.0).sin();
        let want = ((chord_of(PI / 4.0) - chord_of(3.0 * PI / 4.0)) + (2f64.sqrt() - chord_of(3.0 * PI / 4.0))) / 2.0;
        let chord = eval_terms(&real, &fake, &t, SphereMetric::Chord);
        assert!((chord.total - want).abs() < 1e-12);
        for metric in [SphereMetric::Arc, SphereMetric::Chord] {
            let (c, i) = enumerate(&real, &fake, &t, metric);
            let v = eval_terms(&real, &fake, &t, metric);
            assert!((v.cross_term - c).abs() < 1e-12 && (v.intra_term - i).abs() < 1e-12);
        }
    }

    #[test]
    fn random_batches_match_enumeration() {
        let mut rng = Rng::new(31);
        for _ in 0..20 {
            let real = unit_rows(&mut rng, 6, 5);
            let fake = unit_rows(&mut rng, 6, 5);
            let t = make_triplets(6).unwrap();
            for metric in [SphereMetric::Arc, SphereMetric::Chord] {
                let (c, i) = enumerate(&real, &fake, &t, metric);
                let v = eval_terms(&real, &fake, &t, metric);
                assert!((v.cross_term - c).abs() < 1e-12);
                assert!((v.intra_term - i).abs() < 1e-12);
                assert_eq!(v.total, v.cross_term - v.intra_term);
                assert!(v.total.abs() <= metric.max_distance());
            }
        }
    }

    #[test]
    fn triplet_errors() {
        let p = rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let mut g = Graph::new();
        let r = g.constant(p.clone());
        let f = g.constant(p.clone());
        let empty = TripletBatch::from_triplets(vec![], 2, 2);
        assert_eq!(
            triplet_objective(&mut g, r, f, &empty, SphereMetric::Arc).unwrap_err(),
            LossError::EmptyTriplets
        );
        let bad = TripletBatch::from_triplets(vec![Triplet { fake_i: 0, fake_j: 2, real_i: 0 }], 2, 3);
        assert!(matches!(
            triplet_objective(&mut g, r, f, &bad, SphereMetric::Arc),
            Err(LossError::IndexOutOfRange { side: "fake", row: 2, rows: 2, .. })
        ));
        assert!(ClipConfig::new(0.0).is_err());
        assert!(ClipConfig::new(-1.0).is_err());
        assert!(ClipConfig::new(f64::INFINITY).is_ok());
    }

    fn critic_grads(real: &Array2, fake: &Array2, t: &TripletBatch, clip: Option<f64>) -> (f64, Array2, Array2) {
        let mut g = Graph::new();
        let r = g.param(real.clone());
        let f = g.param(fake.clone());
        let loss = match clip {
            Some(c) => clipped_critic_loss(&mut g, r, f, t, SphereMetric::Arc, ClipConfig::new(c).unwrap()).unwrap(),
            None => generator_loss(&mut g, r, f, t, SphereMetric::Arc).unwrap(),
        };
        let grads = g.backward(loss).unwrap();
        (g.scalar(loss).unwrap(), grads.get_or_zeros(&g, r), grads.get_or_zeros(&g, f))
    }

    fn at_angle(theta: f64) -> Vec<f64> {
        vec![theta.cos(), theta.sin(), 0.0]
    }

    #[test]
    fn satisfied_triplets_are_clipped_with_zero_gradient() {
        // Reals 2 rad from the fakes, fakes 0.1 rad apart: raw ≈ 1.9 > c.
        let fake = Array2::from_rows(&[at_angle(0.0), at_angle(0.1)]).unwrap();
        let real = Array2::from_rows(&[at_angle(2.0), at_angle(2.1)]).unwrap();
        let t = make_triplets(2).unwrap();
        let (v, gr, gf) = critic_grads(&real, &fake, &t, Some(0.5));
        assert_eq!(v, 0.5);
        assert_eq!(gr.max_abs(), 0.0);
        assert_eq!(gf.max_abs(), 0.0);

        // Fully antipodal case from the contract: raw = π.
        let fake = rows(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let real = rows(&[&[-1.0, 0.0], &[-1.0, 0.0]]);
        let (v, gr, gf) = critic_grads(&real, &fake, &t, Some(0.5));
        assert_eq!(v, 0.5);
        assert_eq!(gr.max_abs() + gf.max_abs(), 0.0);
    }

    #[test]
    fn unsatisfied_triplets_pass_the_full_gradient() {
        // Each real sits 0.2 rad from its fake, fakes 0.5 rad apart: raw = -0.3.
        let fake = Array2::from_rows(&[at_angle(0.0), at_angle(0.5)]).unwrap();
        let real = Array2::from_rows(&[at_angle(-0.2), at_angle(0.7)]).unwrap();
        let t = make_triplets(2).unwrap();
        let (v, gr, gf) = critic_grads(&real, &fake, &t, Some(0.5));
        assert!((v - (-0.3)).abs() < 1e-12, "{v}");
        let (u, ur, uf) = critic_grads(&real, &fake, &t, None);
        assert!((u - v).abs() < 1e-15);
        assert_eq!(gr, ur);
        assert_eq!(gf, uf);
        assert!(gf.max_abs() > 0.1);
    }

    #[test]
    fn infinite_clip_matches_unclipped_gradient() {
        let mut rng = Rng::new(8);
        for _ in 0..10 {
            let real = unit_rows(&mut rng, 5, 4);
            let fake = unit_rows(&mut rng, 5, 4);
            let t = make_triplets(5).unwrap();
            let (a, ar, af) = critic_grads(&real, &fake, &t, Some(f64::INFINITY));
            let (b, br, bf) = critic_grads(&real, &fake, &t, None);
            assert!((a - b).abs() < 1e-14);
            for (x, y) in ar.data().iter().chain(af.data()).zip(br.data().iter().chain(bf.data())) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    proptest! {
        #[test]
        fn clip_identity(values in proptest::collection::vec(-4.0f64..4.0, 1..64), c in 0.01f64..3.5) {
            let lhs = clip_mean(&values, c);
            let rhs = c - hinge_mean(&values, c);
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }

        #[test]
        fn objective_is_rotation_invariant(seed in any::<u64>(), angle in 0.0f64..6.28) {
            let mut rng = Rng::new(seed);
            let real = unit_rows(&mut rng, 4, 3);
            let fake = unit_rows(&mut rng, 4, 3);
            let (s, c) = angle.sin_cos();
            // Rotation in the first two coordinates.
            let rot = Array2::from_rows(&[vec![c, s, 0.0], vec![-s, c, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
            let t = make_triplets(4).unwrap();
            for metric in [SphereMetric::Arc, SphereMetric::Chord] {
                let a = eval_terms(&real, &fake, &t, metric).total;
                let b = eval_terms(&real.matmul(&rot).unwrap(), &fake.matmul(&rot).unwrap(), &t, metric).total;
                prop_assert!((a - b).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn identical_multisets_with_symmetric_triplets_give_zero() {
        // Same points on both sides; each ordered fake pair is matched with a real equal to the anchor.
        let mut rng = Rng::new(21);
        let p = unit_rows(&mut rng, 5, 4);
        let t = TripletBatch::all_combinations(5, 5);
        for metric in [SphereMetric::Arc, SphereMetric::Chord] {
            let v = eval_terms(&p, &p, &t, metric);
            assert!(v.total.abs() < 1e-12, "{}", v.total);
        }
    }

    #[test]
    fn generator_loss_is_the_triplet_total() {
        let mut rng = Rng::new(2);
        let real = unit_rows(&mut rng, 4, 3);
        let fake = unit_rows(&mut rng, 4, 3);
        let t = make_triplets(4).unwrap();
        let mut g = Graph::new();
        let r = g.constant(real.clone());
        let f = g.constant(fake.clone());
        let gl = generator_loss(&mut g, r, f, &t, SphereMetric::Arc).unwrap();
        assert_eq!(g.scalar(gl).unwrap(), eval_terms(&real, &fake, &t, SphereMetric::Arc).total);
    }

    #[test]
    fn intra_gradient_points_away_from_the_other_fake() {
        let fake = Array2::from_rows(&[at_angle(0.0), at_angle(0.6)]).unwrap();
        let t = make_triplets(2).unwrap();
        let intra = |g: &mut Graph, f: Var| -> Result<Var, AutodiffError> {
            let real = g.constant(Array2::from_rows(&[at_angle(2.0), at_angle(2.5)]).unwrap());
            let terms = triplet_objective(g, real, f, &t, SphereMetric::Arc).map_err(|e| AutodiffError::Contract(e.to_string()))?;
            Ok(terms.intra)
        };
        // Analytic gradient agrees with central differences.
        assert!(grad_check(intra, &fake, 1e-6).unwrap() < 1e-6);
        let mut g = Graph::new();
        let f = g.param(fake.clone());
        let l = intra(&mut g, f).unwrap();
        let grad = g.backward(l).unwrap().get(f).unwrap().clone();
        let toward: f64 = (0..3).map(|c| grad.get(0, c) * (fake.get(1, c) - fake.get(0, c))).sum();
        assert!(toward < 0.0, "gradient of fake 0 should point away from fake 1");
    }

    #[test]
    fn symmetric_saddle_has_zero_gradient() {
        // Fakes at ±e1, reals at ±e2, every fake paired with every real.
        let fake = rows(&[&[1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0]]);
        let real = rows(&[&[0.0, 1.0, 0.0], &[0.0, -1.0, 0.0]]);
        let t = TripletBatch::from_triplets(
            vec![
                Triplet { fake_i: 0, fake_j: 1, real_i: 0 },
                Triplet { fake_i: 0, fake_j: 1, real_i: 1 },
                Triplet { fake_i: 1, fake_j: 0, real_i: 0 },
                Triplet { fake_i: 1, fake_j: 0, real_i: 1 },
            ],
            2,
            2,
        );
        let loss_of = |g: &mut Graph, raw: Var| -> Result<Var, AutodiffError> {
            let f = g.rowwise_normalize(raw)?;
            let r = g.constant(real.clone());
            generator_loss(g, r, f, &t, SphereMetric::Arc).map_err(|e| AutodiffError::Contract(e.to_string()))
        };
        let mut g = Graph::new();
        let f = g.param(fake.clone());
        let l = loss_of(&mut g, f).unwrap();
        let grad = g.backward(l).unwrap().get_or_zeros(&g, f);
        assert!(grad.max_abs() < 1e-6, "{grad:?}");
        // Finite-difference oracle.
        let h = 1e-6;
        // Radial coordinates are skipped: the loss is scale invariant there and
        // differencing across the antipodal arccos kink only measures rounding.
        for i in (0..fake.len()).filter(|&i| fake.data()[i] == 0.0) {
            let eval = |p: Array2| {
                let mut g = Graph::new();
                let x = g.constant(p);
                let l = loss_of(&mut g, x).unwrap();
                g.scalar(l).unwrap()
            };
            let mut plus = fake.clone();
            plus.data_mut()[i] += h;
            let mut minus = fake.clone();
            minus.data_mut()[i] -= h;
            let fd = (eval(plus) - eval(minus)) / (2.0 * h);
            assert!(fd.abs() < 1e-6, "coordinate {i}: {fd}");
        }
    }

    fn vanilla_values(real: &[f64], fake: &[f64]) -> (f64, f64) {
        let mut g = Graph::new();
        let r = g.constant(Array2::from_vec(real.len(), 1, real.to_vec()).unwrap());
        let f = g.constant(Array2::from_vec(fake.len(), 1, fake.to_vec()).unwrap());
        let (d, gl) = vanilla_gan_losses(&mut g, r, f).unwrap();
        (g.scalar(d).unwrap(), g.scalar(gl).unwrap())
    }

    #[test]
    fn vanilla_losses_at_zero_logits() {
        let (d, gl) = vanilla_values(&[0.0; 4], &[0.0; 3]);
        assert!((d - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!((gl - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn vanilla_losses_perfect_discriminator_limit() {
        let (d, _) = vanilla_values(&[800.0, 1000.0], &[-900.0, -1e4]);
        assert!(d.is_finite() && d < 1e-300);
        let (d, gl) = vanilla_values(&[-800.0], &[900.0]);
        assert!(d.is_finite() && gl.is_finite());
        assert!((d - 1700.0).abs() < 1e-9);
    }

    #[test]
    fn vanilla_losses_match_scalar_loop() {
        let mut rng = Rng::new(17);
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        for _ in 0..20 {
            let real: Vec<f64> = (0..7).map(|_| 3.0 * rng.normal()).collect();
            let fake: Vec<f64> = (0..5).map(|_| 3.0 * rng.normal()).collect();
            let want_d = -real.iter().map(|&x| sig(x).ln()).sum::<f64>() / 7.0
                - fake.iter().map(|&x| (1.0 - sig(x)).ln()).sum::<f64>() / 5.0;
            let want_g = -fake.iter().map(|&x| sig(x).ln()).sum::<f64>() / 5.0;
            let (d, gl) = vanilla_values(&real, &fake);
            assert!((d - want_d).abs() < 1e-10, "{d} vs {want_d}");
            assert!((gl - want_g).abs() < 1e-10);
        }
    }

    #[test]
    fn vanilla_rejects_bad_shapes() {
        let mut g = Graph::new();
        let r = g.constant(Array2::zeros(3, 2));
        let f = g.constant(Array2::zeros(3, 1));
        assert!(vanilla_gan_losses(&mut g, r, f).is_err());
    }

    #[test]
    fn mmd_of_identical_batches_is_zero() {
        let mut rng = Rng::new(44);
        let a = unit_rows(&mut rng, 7, 5);
        for metric in [SphereMetric::Arc, SphereMetric::Chord] {
            assert_eq!(mmd_chord_kernel(&a, &a, metric).unwrap(), 0.0);
        }
        assert_eq!(mmd_chord_kernel(&a, &Array2::zeros(0, 5), SphereMetric::Arc).unwrap_err(), LossError::EmptyBatch);
    }

    #[test]
    fn mmd_single_points_is_minus_twice_the_distance() {
        let a = rows(&[&[1.0, 0.0]]);
        let b = rows(&[&[0.0, 1.0]]);
        let arc = mmd_chord_kernel(&a, &b, SphereMetric::Arc).unwrap();
        assert!((arc - (-PI)).abs() < 1e-15);
        let chord = mmd_chord_kernel(&a, &b, SphereMetric::Chord).unwrap();
        assert!((chord - (-2.0 * 2f64.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn mmd_equals_real_term_minus_triplet_objective() {
        let mut rng = Rng::new(5);
        for _ in 0..25 {
            let real = unit_rows(&mut rng, 6, 4);
            let fake = unit_rows(&mut rng, 5, 4);
            for metric in [SphereMetric::Arc, SphereMetric::Chord] {
                let e_rr = mean_pairwise_distance(&real, &real, metric).unwrap();
                let e_rf = mean_pairwise_distance(&real, &fake, metric).unwrap();
                let lt = eval_terms(&real, &fake, &TripletBatch::all_combinations(6, 5), metric).total;
                let mmd = mmd_chord_kernel(&real, &fake, metric).unwrap();
                assert!((mmd - ((e_rr - e_rf) - lt)).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn toy_distance_closed_form() {
        assert_eq!(toy_gaussian_triplet_distance(1.0, 1.0).unwrap(), 0.0);
        let want = (2.0 / PI).sqrt() * (2f64.sqrt() - 1.0);
        assert!((toy_gaussian_triplet_distance(0.0, 1.0).unwrap() - want).abs() < 1e-15);
        assert!((toy_gaussian_triplet_distance(0.0, 1.0).unwrap() - 0.330_494_606_3).abs() < 1e-9);
        assert!((toy_gaussian_triplet_distance(1.0, 2.0).unwrap() - 0.472_634_218_0).abs() < 1e-9);
        assert!(toy_gaussian_triplet_distance(2.0, 1.0).is_err());
        assert!(toy_gaussian_triplet_distance(-1.0, 1.0).is_err());
    }
}

//! Exhaustive and Monte-Carlo checks of the triplet distance on tiny problems.

use std::collections::BTreeSet;

use super::EvalError;
use crate::losses::toy_gaussian_triplet_distance;
use crate::sampler::Rng;
use crate::sphere::chord_distance;

pub const MAX_IPM_ATOMS: usize = 6;
pub const MAX_IPM_GRID: usize = 12;
const TIE_TOLERANCE: f64 = 1e-12;

/// Finite distribution over abstract atoms identified by integers.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist {
    atoms: Vec<usize>,
    probs: Vec<f64>,
}

impl DiscreteDist {
    pub fn new(atoms: Vec<usize>, probs: Vec<f64>) -> Result<Self, EvalError> {
        if atoms.is_empty() || atoms.len() != probs.len() {
            return Err(EvalError::InvalidDistribution(format!(
                "{} atoms with {} probabilities",
                atoms.len(),
                probs.len()
            )));
        }
        if atoms.iter().collect::<BTreeSet<_>>().len() != atoms.len() {
            return Err(EvalError::InvalidDistribution("repeated atom".into()));
        }
        if probs.iter().any(|&p| !(p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(EvalError::InvalidDistribution(format!("probabilities {probs:?} do not sum to 1")));
        }
        Ok(Self { atoms, probs })
    }

    pub fn uniform(atoms: Vec<usize>) -> Result<Self, EvalError> {
        let n = atoms.len();
        Self::new(atoms, vec![1.0 / n as f64; n])
    }

    pub fn point(atom: usize) -> Self {
        Self {
            atoms: vec![atom],
            probs: vec![1.0],
        }
    }

    pub fn atoms(&self) -> &[usize] {
        &self.atoms
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, atom: usize) -> f64 {
        self.atoms.iter().position(|&a| a == atom).map_or(0.0, |i| self.probs[i])
    }

    /// Atom `a` becomes atoms `2a` and `2a + 1`, each with half its mass.
    /// A critic may then send the two halves to different points, as it can
    /// with a set of positive density.
    pub fn split_atoms(&self) -> Self {
        let mut atoms = Vec::with_capacity(2 * self.atoms.len());
        let mut probs = Vec::with_capacity(2 * self.atoms.len());
        for (&a, &p) in self.atoms.iter().zip(&self.probs) {
            atoms.extend([2 * a, 2 * a + 1]);
            probs.extend([0.5 * p, 0.5 * p]);
        }
        Self { atoms, probs }
    }
}

/// Ten distributions over atoms `0..5` used for the separation check.
pub fn ipm_family() -> Vec<DiscreteDist> {
    let d = |atoms: &[usize], probs: &[f64]| DiscreteDist::new(atoms.to_vec(), probs.to_vec()).expect("valid family member");
    let third = 1.0 / 3.0;
    vec![
        DiscreteDist::point(0),
        DiscreteDist::point(1),
        d(&[0, 1], &[0.5, 0.5]),
        d(&[0, 1], &[0.7, 0.3]),
        d(&[0, 1, 2], &[third, third, third]),
        d(&[2, 3, 4], &[third, third, third]),
        d(&[0, 2, 4], &[0.5, 0.25, 0.25]),
        d(&[0, 1, 2, 3, 4], &[0.2; 5]),
        d(&[1, 2, 3, 4], &[0.1, 0.2, 0.3, 0.4]),
        d(&[3, 4], &[0.4, 0.6]),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairValue {
    pub p: usize,
    pub q: usize,
    pub value: f64,
    /// Value after [`DiscreteDist::split_atoms`] on both sides, when within budget.
    pub split_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationReport {
    pub k: usize,
    pub margin: f64,
    pub pairs: Vec<PairValue>,
}

impl SeparationReport {
    pub fn diagonal_exact(&self) -> bool {
        self.pairs.iter().filter(|v| v.p == v.q).all(|v| v.value == 0.0)
    }

    /// Off-diagonal pairs at or below the margin.
    pub fn unseparated(&self) -> Vec<&PairValue> {
        self.pairs.iter().filter(|v| v.p != v.q && v.value <= self.margin).collect()
    }

    pub fn passes(&self) -> bool {
        self.diagonal_exact() && self.unseparated().is_empty()
    }
}

/// `brute_force_ipm` over every ordered pair of `family`. Unseparated pairs
/// are re-evaluated with split atoms.
pub fn ipm_separation(family: &[DiscreteDist], k: usize, margin: f64) -> Result<SeparationReport, EvalError> {
    let mut pairs = Vec::with_capacity(family.len() * family.len());
    for (i, p) in family.iter().enumerate() {
        for (j, q) in family.iter().enumerate() {
            let value = brute_force_ipm(p, q, k)?.value;
            let split_value = if i != j && value <= margin {
                match brute_force_ipm(&p.split_atoms(), &q.split_atoms(), k) {
                    Ok(r) => Some(r.value),
                    Err(EvalError::Budget(_)) => None,
                    Err(e) => return Err(e),
                }
            } else {
                None
            };
            pairs.push(PairValue { p: i, q: j, value, split_value });
        }
    }
    Ok(SeparationReport { k, margin, pairs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpmResult {
    pub value: f64,
    /// Union of both supports, ascending; assignments are indexed like this.
    pub atoms: Vec<usize>,
    /// Lexicographically smallest maximizing assignment of grid indices.
    pub argmax: Vec<usize>,
    /// Every assignment (first atom pinned to grid point 0) within 1e-12 of the maximum.
    pub maximizers: Vec<Vec<usize>>,
}

fn circle_chords(k: usize) -> Vec<Vec<f64>> {
    let pts: Vec<[f64; 2]> = (0..k)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / k as f64;
            [a.cos(), a.sin()]
        })
        .collect();
    pts.iter()
        .map(|u| pts.iter().map(|v| chord_distance(u, v).expect("unit points")).collect())
        .collect()
}

/// `max_f E_{y~P, x~Q} d(f(y), f(x)) - E_{x1, x2~Q} d(f(x1), f(x2))` over all
/// maps from atoms to `k` evenly spaced points on the unit circle, chord metric.
pub fn brute_force_ipm(p: &DiscreteDist, q: &DiscreteDist, k: usize) -> Result<IpmResult, EvalError> {
    brute_force_ipm_clipped(p, q, k, None)
}

/// As [`brute_force_ipm`]; with `clip = Some(c)` the objective becomes
/// `E_{y~P, x1, x2~Q} min(d(f(y), f(x1)) - d(f(x1), f(x2)), c)`.
///
/// The grid is rotation invariant, so the first atom is pinned to point 0;
/// this keeps the lexicographically smallest maximizer.
pub fn brute_force_ipm_clipped(p: &DiscreteDist, q: &DiscreteDist, k: usize, clip: Option<f64>) -> Result<IpmResult, EvalError> {
    let atoms: Vec<usize> = p.atoms().iter().chain(q.atoms()).copied().collect::<BTreeSet<_>>().into_iter().collect();
    let m = atoms.len();
    if m > MAX_IPM_ATOMS || k > MAX_IPM_GRID || k < 2 {
        return Err(EvalError::Budget(format!(
            "{m} atoms on a {k}-point grid (limits {MAX_IPM_ATOMS} atoms, 2..={MAX_IPM_GRID} points)"
        )));
    }
    if let Some(c) = clip {
        if !(c > 0.0) {
            return Err(EvalError::Contract(format!("clip must be > 0, got {c}")));
        }
    }
    let pw: Vec<f64> = atoms.iter().map(|&a| p.prob(a)).collect();
    let qw: Vec<f64> = atoms.iter().map(|&a| q.prob(a)).collect();
    // Zero exactly when p == q atom by atom.
    let w: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| pw[i] * qw[j] - qw[i] * qw[j]).collect()).collect();
    let d = circle_chords(k);

    let objective = |a: &[usize]| -> f64 {
        match clip {
            None => {
                let mut s = 0.0;
                for i in 0..m {
                    for j in 0..m {
                        s += w[i][j] * d[a[i]][a[j]];
                    }
                }
                s
            }
            Some(c) => {
                let mut s = 0.0;
                for y in 0..m {
                    if pw[y] == 0.0 {
                        continue;
                    }
                    for x1 in 0..m {
                        if qw[x1] == 0.0 {
                            continue;
                        }
                        for x2 in 0..m {
                            let raw = d[a[y]][a[x1]] - d[a[x1]][a[x2]];
                            s += pw[y] * qw[x1] * qw[x2] * raw.min(c);
                        }
                    }
                }
                s
            }
        }
    };

    let mut assignment = vec![0usize; m];
    let mut values = Vec::with_capacity(k.pow(m as u32 - 1));
    loop {
        values.push((objective(&assignment), assignment.clone()));
        // Odometer over positions 1..m, last position fastest: lexicographic order.
        let mut pos = m;
        loop {
            if pos == 1 {
                break;
            }
            pos -= 1;
            assignment[pos] += 1;
            if assignment[pos] < k {
                break;
            }
            assignment[pos] = 0;
        }
        if assignment.iter().all(|&v| v == 0) {
            break;
        }
    }
    let best = values.iter().map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max);
    let maximizers: Vec<Vec<usize>> = values
        .into_iter()
        .filter(|(v, _)| *v >= best - TIE_TOLERANCE)
        .map(|(_, a)| a)
        .collect();
    Ok(IpmResult {
        value: best,
        atoms,
        argmax: maximizers[0].clone(),
        maximizers,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AntipodalReport {
    pub value: f64,
    pub m_real: usize,
    pub m_fake: usize,
    pub k: usize,
    /// Grid point of every atom: reals first, then fakes.
    pub argmax: Vec<usize>,
    pub argmax_is_antipodal: bool,
    pub n_maximizers: usize,
    pub n_non_antipodal_maximizers: usize,
}

impl AntipodalReport {
    /// All fakes on one grid point and all reals on its antipode.
    pub fn is_antipodal(&self, a: &[usize]) -> bool {
        let (real, fake) = a.split_at(self.m_real);
        let same = |s: &[usize]| s.iter().all(|&v| v == s[0]);
        self.k % 2 == 0 && same(real) && same(fake) && (real[0] + self.k - fake[0]) % self.k == self.k / 2
    }
}

/// Maximizes the (optionally clipped) objective for uniform `P` on `m_real`
/// atoms and uniform `Q` on `m_fake` disjoint atoms, and reports whether the
/// maximizers are antipodal.
pub fn antipodal_optimality_check(m_real: usize, m_fake: usize, k: usize, clip: Option<f64>) -> Result<AntipodalReport, EvalError> {
    if m_real == 0 || m_fake == 0 {
        return Err(EvalError::Contract("need at least one real and one fake atom".into()));
    }
    let p = DiscreteDist::uniform((0..m_real).collect())?;
    let q = DiscreteDist::uniform((m_real..m_real + m_fake).collect())?;
    let r = brute_force_ipm_clipped(&p, &q, k, clip)?;
    let mut report = AntipodalReport {
        value: r.value,
        m_real,
        m_fake,
        k,
        argmax: r.argmax.clone(),
        argmax_is_antipodal: false,
        n_maximizers: r.maximizers.len(),
        n_non_antipodal_maximizers: 0,
    };
    report.argmax_is_antipodal = report.is_antipodal(&r.argmax);
    report.n_non_antipodal_maximizers = r.maximizers.iter().filter(|a| !report.is_antipodal(a)).count();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyCheck {
    pub analytic: f64,
    /// `|mean(|y - x1| - |x1 - x2|)|` over the draws.
    pub mc_estimate: f64,
    pub std_err: f64,
    /// `mean(x1) - mean(y)`, the mean-matching distance estimate.
    pub mean_match: f64,
    pub mean_match_std_err: f64,
}

pub const MIN_TOY_SAMPLES: usize = 10_000;

/// Monte-Carlo estimate of the triplet distance between `N(0, σ1²)` and
/// `N(0, σ2²)` with identity embedding, against the closed form.
pub fn toy_distance_check(sigma1: f64, sigma2: f64, n_mc: usize, rng: &mut Rng) -> Result<ToyCheck, EvalError> {
    if n_mc < MIN_TOY_SAMPLES {
        return Err(EvalError::TooFewSamples {
            need: MIN_TOY_SAMPLES,
            got: n_mc,
        });
    }
    let analytic = toy_gaussian_triplet_distance(sigma1, sigma2).map_err(|e| EvalError::Contract(e.to_string()))?;
    let mut t = Welford::default();
    let mut ys = Welford::default();
    let mut xs = Welford::default();
    for _ in 0..n_mc {
        let y = sigma1 * rng.normal();
        let x1 = sigma2 * rng.normal();
        let x2 = sigma2 * rng.normal();
        t.push((y - x1).abs() - (x1 - x2).abs());
        ys.push(y);
        xs.push(x1);
    }
    let n = n_mc as f64;
    Ok(ToyCheck {
        analytic,
        mc_estimate: t.mean.abs(),
        std_err: (t.variance() / n).sqrt(),
        mean_match: xs.mean - ys.mean,
        mean_match_std_err: ((xs.variance() + ys.variance()) / n).sqrt(),
    })
}

#[derive(Default)]
struct Welford {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn variance(&self) -> f64 {
        self.m2 / (self.n - 1.0)
    }
}

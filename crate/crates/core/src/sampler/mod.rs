//! Data sources, latent noise and triplet construction.

mod mnist;
mod rng;

pub use mnist::{load_mnist, read_idx_images, read_idx_labels, unpad_to_bytes, write_idx_images, write_idx_labels, MnistData, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, MNIST_PAD};
pub use rng::Rng;

use std::f64::consts::TAU;

use thiserror::Error;

use crate::autodiff::Array2;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("triplet loss needs two fake samples, got batch size {0}")]
    BatchTooSmall(usize),
    #[error("{path}: bad IDX magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: String, expected: u32, found: u32 },
    #[error("{path}: truncated, expected {expected} bytes, found {found}")]
    Truncated { path: String, expected: usize, found: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("invalid data spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A source of real minibatches.
pub trait RealSource {
    fn data_dim(&self) -> usize;
    fn sample(&self, batch: usize, rng: &mut Rng) -> Array2;
}

/// Mixture of isotropic Gaussians placed evenly on a circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingSpec {
    pub n_modes: usize,
    pub radius: f64,
    pub sigma: f64,
}

impl Default for RingSpec {
    fn default() -> Self {
        Self {
            n_modes: 8,
            radius: 1.0,
            sigma: 0.01,
        }
    }
}

impl RingSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_modes == 0 {
            return Err(DataError::InvalidSpec("ring needs at least one mode".into()));
        }
        if !(self.sigma > 0.0) || !self.radius.is_finite() {
            return Err(DataError::InvalidSpec(format!(
                "ring sigma must be > 0 and radius finite (sigma={}, radius={})",
                self.sigma, self.radius
            )));
        }
        Ok(())
    }

    /// Mode `k` sits at angle `2πk / n_modes`.
    pub fn mode_mean(&self, k: usize) -> [f64; 2] {
        let angle = TAU * k as f64 / self.n_modes as f64;
        [self.radius * angle.cos(), self.radius * angle.sin()]
    }

    pub fn mode_means(&self) -> Vec<[f64; 2]> {
        (0..self.n_modes).map(|k| self.mode_mean(k)).collect()
    }
}

impl RealSource for RingSpec {
    fn data_dim(&self) -> usize {
        2
    }

    fn sample(&self, batch: usize, rng: &mut Rng) -> Array2 {
        sample_ring(self, batch, rng)
    }
}

/// Draws `batch` points: for each row a uniform mode index, then the two Gaussian offsets.
pub fn sample_ring(spec: &RingSpec, batch: usize, rng: &mut Rng) -> Array2 {
    sample_ring_labelled(spec, batch, rng).0
}

/// Like [`sample_ring`] but also returns the mode index of every row.
pub fn sample_ring_labelled(spec: &RingSpec, batch: usize, rng: &mut Rng) -> (Array2, Vec<usize>) {
    let mut out = Array2::zeros(batch, 2);
    let mut modes = Vec::with_capacity(batch);
    for r in 0..batch {
        let k = rng.below(spec.n_modes);
        let [mx, my] = spec.mode_mean(k);
        let dx = rng.normal();
        let dy = rng.normal();
        out.set(r, 0, mx + spec.sigma * dx);
        out.set(r, 1, my + spec.sigma * dy);
        modes.push(k);
    }
    (out, modes)
}

/// `batch x dim` i.i.d. standard normal entries, filled row-major.
pub fn sample_noise(batch: usize, dim: usize, rng: &mut Rng) -> Array2 {
    Array2::from_fn(batch, dim, |_, _| rng.normal())
}

/// One triplet: `(G(z_anchor), G(z_other), x_real)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    pub fake_i: usize,
    pub fake_j: usize,
    pub real_i: usize,
}

/// Index triples over a real batch and a fake batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    triplets: Vec<Triplet>,
    n_real: usize,
    n_fake: usize,
}

impl TripletBatch {
    /// Every `(G(z_i), G(z_j), x_i)` with `i != j` over two batches of size `batch`.
    pub fn full(batch: usize) -> Result<Self, DataError> {
        if batch < 2 {
            return Err(DataError::BatchTooSmall(batch));
        }
        let mut triplets = Vec::with_capacity(batch * (batch - 1));
        for i in 0..batch {
            for j in 0..batch {
                if i != j {
                    triplets.push(Triplet {
                        fake_i: i,
                        fake_j: j,
                        real_i: i,
                    });
                }
            }
        }
        Ok(Self {
            triplets,
            n_real: batch,
            n_fake: batch,
        })
    }

    /// Every `(fake_a, fake_b, real_r)` combination including `a == b`.
    ///
    /// Averaging over this set gives the all-pairs (V-statistic) expectations
    /// used by the MMD comparison; pairs with `a == b` contribute distance zero.
    pub fn all_combinations(n_real: usize, n_fake: usize) -> Self {
        let mut triplets = Vec::with_capacity(n_fake * n_fake * n_real);
        for a in 0..n_fake {
            for b in 0..n_fake {
                for r in 0..n_real {
                    triplets.push(Triplet {
                        fake_i: a,
                        fake_j: b,
                        real_i: r,
                    });
                }
            }
        }
        Self {
            triplets,
            n_real,
            n_fake,
        }
    }

    /// Arbitrary triplets over batches of the given sizes. Indices are checked when a loss uses them.
    pub fn from_triplets(triplets: Vec<Triplet>, n_real: usize, n_fake: usize) -> Self {
        Self {
            triplets,
            n_real,
            n_fake,
        }
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn n_real(&self) -> usize {
        self.n_real
    }

    pub fn n_fake(&self) -> usize {
        self.n_fake
    }
}

/// All `B(B-1)` triplets of two size-`batch` minibatches.
pub fn make_triplets(batch: usize) -> Result<TripletBatch, DataError> {
    TripletBatch::full(batch)
}

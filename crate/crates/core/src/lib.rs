//! tripletGAN: adversarial distribution learning with a sphere-valued critic
//! trained on triplets, alongside a vanilla GAN baseline.

pub mod autodiff;
pub mod evaluation;
pub mod losses;
pub mod models;
pub mod sampler;
pub mod sphere;
pub mod trainer;

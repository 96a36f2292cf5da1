//! Flat weight and gradient vectors.

use std::hash::Hasher;

/// Flat array of all network weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector(Vec<f64>);

/// Derivative of the loss with respect to every entry of a [`WeightVector`].
///
/// Also used for Hessian-vector products and search directions, which live in
/// the same space.
#[derive(Clone, Debug, PartialEq)]
pub struct GradVector(Vec<f64>);

macro_rules! flat_vector {
    ($name:ident) => {
        impl $name {
            pub fn new(values: Vec<f64>) -> Self {
                Self(values)
            }

            pub fn zeros(n: usize) -> Self {
                Self(vec![0.0; n])
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            pub fn as_mut_slice(&mut self) -> &mut [f64] {
                &mut self.0
            }

            pub fn into_vec(self) -> Vec<f64> {
                self.0
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }

            pub fn norm(&self) -> f64 {
                norm(&self.0)
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(values: Vec<f64>) -> Self {
                Self(values)
            }
        }

        impl AsRef<[f64]> for $name {
            fn as_ref(&self) -> &[f64] {
                &self.0
            }
        }
    };
}

flat_vector!(WeightVector);
flat_vector!(GradVector);

impl WeightVector {
    /// FNV-1a over the IEEE-754 bit patterns. Identifies a weight snapshot.
    pub fn bit_hash(&self) -> u64 {
        let mut h = Fnv1a::default();
        for v in &self.0 {
            h.write_u64(v.to_bits());
        }
        h.finish()
    }
}

#[derive(Clone, Copy)]
struct Fnv1a(u64);

impl Default for Fnv1a {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl Hasher for Fnv1a {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

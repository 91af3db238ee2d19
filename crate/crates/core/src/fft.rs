//! Iterative radix-2 complex FFT for power-of-two lengths.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
// Float supplies libm-backed math on toolchains without core float methods.
#[allow(unused_imports)]
use num_traits::Float;

/// Precomputed twiddles and bit-reversal permutation for one transform length.
#[derive(Debug)]
pub(crate) struct Radix2 {
    n: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl Radix2 {
    pub(crate) fn new(n: usize) -> Self {
        assert!(n.is_power_of_two(), "radix-2 length must be a power of two");
        // Direct evaluation per index keeps twiddle error at one ulp instead of
        // accumulating through repeated multiplication.
        let twiddles = (0..n / 2)
            .map(|j| {
                let angle = -2.0 * PI * j as f64 / n as f64;
                Complex64::new(angle.cos(), angle.sin())
            })
            .collect();
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        Self { n, twiddles, bitrev }
    }

    pub(crate) fn len(&self) -> usize {
        self.n
    }

    /// Unnormalized forward transform, `X_k = sum_j x_j exp(-2 pi i jk / n)`.
    pub(crate) fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, false);
    }

    /// Inverse transform including the `1/n` factor.
    pub(crate) fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, true);
        let scale = 1.0 / self.n as f64;
        for z in buf.iter_mut() {
            *z *= scale;
        }
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let n = self.n;
        debug_assert_eq!(buf.len(), n);
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let w = self.twiddles[k * stride];
                    let w = if inverse { w.conj() } else { w };
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }
}

use std::fmt;
use std::sync::Arc;

use num_bigint::BigUint;
use num_complex::Complex64;
use privfed_core::Exec;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arith::{inv_mod, ntt_primes};
use crate::ntt::NttTable;
use crate::CkksError;

/// Scheme parameters. The last prime of the chain is a reserved special
/// modulus and never carries ciphertext data, so a chain of `k` primes yields
/// fresh ciphertexts at level `k - 2` with `k - 2` rescales available.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CkksParams {
    pub poly_degree: usize,
    pub modulus_bits: Vec<u32>,
    pub scale_log2: u32,
}

impl CkksParams {
    /// N = 8192, chain [60, 40, 40], scale 2^40.
    pub fn standard() -> Self {
        CkksParams { poly_degree: 8192, modulus_bits: vec![60, 40, 40], scale_log2: 40 }
    }

    /// Reduced set for fast tests: N = 1024, chain [40, 30, 30], scale 2^30.
    pub fn reduced() -> Self {
        CkksParams { poly_degree: 1024, modulus_bits: vec![40, 30, 30], scale_log2: 30 }
    }

    pub fn slot_count(&self) -> usize {
        self.poly_degree / 2
    }

    pub fn scale(&self) -> f64 {
        (self.scale_log2 as f64).exp2()
    }

    /// Level of a freshly encrypted ciphertext.
    pub fn top_level(&self) -> usize {
        self.modulus_bits.len() - 2
    }

    pub fn validate(&self) -> Result<(), CkksError> {
        let n = self.poly_degree;
        if !n.is_power_of_two() || !(8..=1 << 16).contains(&n) {
            return Err(CkksError::InvalidParams(format!("poly_degree {n} must be a power of two in [8, 65536]")));
        }
        if self.modulus_bits.len() < 2 {
            return Err(CkksError::InvalidParams("modulus chain needs at least two primes".into()));
        }
        if let Some(b) = self.modulus_bits.iter().find(|b| !(20..=61).contains(*b)) {
            return Err(CkksError::InvalidParams(format!("modulus size of {b} bits outside [20, 61]")));
        }
        let headroom = self.modulus_bits.get(1).copied().unwrap_or(0).min(self.modulus_bits[0] - 1);
        if self.scale_log2 == 0 || self.scale_log2 > headroom {
            return Err(CkksError::InvalidParams(format!(
                "scale 2^{} exceeds the modulus headroom of 2^{headroom}",
                self.scale_log2
            )));
        }
        Ok(())
    }
}

impl Default for CkksParams {
    fn default() -> Self {
        CkksParams::standard()
    }
}

/// CRT data for reconstructing coefficients at one level.
pub(crate) struct CrtLevel {
    pub modulus: BigUint,
    pub half: BigUint,
    /// Largest centered coefficient magnitude representable at this level.
    pub limit: i128,
    /// `(Q/q_i) · ((Q/q_i)^-1 mod q_i)` for each prime at this level.
    pub basis: Vec<BigUint>,
}

/// Precomputed tables shared by every operation under one parameter set.
pub struct CkksContext {
    params: CkksParams,
    primes: Vec<u64>,
    tables: Vec<NttTable>,
    crt: Vec<CrtLevel>,
    fft_forward: Arc<dyn Fft<f64>>,
    fft_inverse: Arc<dyn Fft<f64>>,
    /// `zeta^k` for `k < N`, `zeta = exp(i·pi/N)`.
    twist: Vec<Complex64>,
    /// FFT bin holding slot `j`: `(5^j mod 2N - 1) / 2`.
    slot_bins: Vec<usize>,
    /// FFT bin holding the conjugate of slot `j`.
    conj_bins: Vec<usize>,
    hash: [u8; 8],
    exec: Exec,
}

impl fmt::Debug for CkksContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CkksContext")
            .field("params", &self.params)
            .field("primes", &self.primes)
            .field("exec", &self.exec)
            .finish()
    }
}

impl CkksContext {
    pub fn new(params: CkksParams) -> Result<Self, CkksError> {
        params.validate()?;
        let n = params.poly_degree;
        let primes = ntt_primes(&params.modulus_bits, n).ok_or_else(|| {
            CkksError::InvalidParams(format!("no NTT-friendly primes for {:?} at N = {n}", params.modulus_bits))
        })?;
        let tables = primes.iter().map(|&q| NttTable::new(q, n)).collect();

        let data_primes = &primes[..primes.len() - 1];
        let crt = (0..data_primes.len())
            .map(|level| {
                let qs = &data_primes[..=level];
                let modulus = qs.iter().fold(BigUint::from(1u32), |acc, &q| acc * q);
                let basis = qs
                    .iter()
                    .map(|&q| {
                        let rest = &modulus / q;
                        let rest_mod_q = (&rest % q).to_u64_digits().first().copied().unwrap_or(0);
                        rest * inv_mod(rest_mod_q, q)
                    })
                    .collect();
                let half: BigUint = &modulus >> 1;
                let limit = i128::try_from(half.clone()).unwrap_or(i128::MAX);
                CrtLevel { half, limit, modulus, basis }
            })
            .collect();

        let mut planner = FftPlanner::new();
        let fft_forward = planner.plan_fft_forward(n);
        let fft_inverse = planner.plan_fft_inverse(n);
        let twist = (0..n)
            .map(|k| Complex64::from_polar(1.0, std::f64::consts::PI * k as f64 / n as f64))
            .collect();
        let two_n = 2 * n;
        let mut slot_bins = Vec::with_capacity(n / 2);
        let mut conj_bins = Vec::with_capacity(n / 2);
        let mut e = 1usize;
        for _ in 0..n / 2 {
            slot_bins.push((e - 1) / 2);
            conj_bins.push((two_n - e - 1) / 2);
            e = e * 5 % two_n;
        }

        let mut h = Sha256::new();
        h.update(b"privfed-ckks/v1");
        h.update((n as u64).to_le_bytes());
        for q in &primes {
            h.update(q.to_le_bytes());
        }
        h.update(params.scale_log2.to_le_bytes());
        let digest = h.finalize();
        let mut hash = [0u8; 8];
        hash.copy_from_slice(&digest[..8]);

        Ok(CkksContext {
            params,
            primes,
            tables,
            crt,
            fft_forward,
            fft_inverse,
            twist,
            slot_bins,
            conj_bins,
            hash,
            exec: Exec::default(),
        })
    }

    /// Selects the execution strategy used for per-prime and per-chunk work.
    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn params(&self) -> &CkksParams {
        &self.params
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    pub fn n(&self) -> usize {
        self.params.poly_degree
    }

    pub fn slot_count(&self) -> usize {
        self.params.slot_count()
    }

    /// The full prime chain, special prime last.
    pub fn primes(&self) -> &[u64] {
        &self.primes
    }

    pub fn top_level(&self) -> usize {
        self.params.top_level()
    }

    /// First eight bytes of a SHA-256 digest over N, the primes and the scale.
    pub fn params_hash(&self) -> [u8; 8] {
        self.hash
    }

    pub(crate) fn table(&self, i: usize) -> &NttTable {
        &self.tables[i]
    }

    pub(crate) fn crt(&self, level: usize) -> &CrtLevel {
        &self.crt[level]
    }

    pub(crate) fn fft_forward(&self) -> &dyn Fft<f64> {
        self.fft_forward.as_ref()
    }

    pub(crate) fn fft_inverse(&self) -> &dyn Fft<f64> {
        self.fft_inverse.as_ref()
    }

    pub(crate) fn twist(&self) -> &[Complex64] {
        &self.twist
    }

    pub(crate) fn slot_bins(&self) -> &[usize] {
        &self.slot_bins
    }

    pub(crate) fn conj_bins(&self) -> &[usize] {
        &self.conj_bins
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        assert!(CkksParams::standard().validate().is_ok());
        assert!(CkksParams::reduced().validate().is_ok());
        assert_eq!(CkksParams::standard().slot_count(), 4096);
        assert_eq!(CkksParams::standard().top_level(), 1);
    }

    #[test]
    fn rejects_bad_params() {
        let bad = [
            CkksParams { poly_degree: 1000, ..CkksParams::reduced() },
            CkksParams { modulus_bits: vec![40], ..CkksParams::reduced() },
            CkksParams { modulus_bits: vec![40, 70, 30], ..CkksParams::reduced() },
            CkksParams { scale_log2: 35, ..CkksParams::reduced() },
        ];
        for p in bad {
            assert!(matches!(CkksContext::new(p), Err(CkksError::InvalidParams(_))));
        }
    }

    #[test]
    fn slot_bins_cover_every_bin_once() {
        let ctx = CkksContext::new(CkksParams { poly_degree: 64, modulus_bits: vec![30, 25, 25], scale_log2: 20 }).unwrap();
        let mut all: Vec<usize> = ctx.slot_bins().iter().chain(ctx.conj_bins()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn hash_separates_parameter_sets() {
        let a = CkksContext::new(CkksParams::reduced()).unwrap();
        let b = CkksContext::new(CkksParams { scale_log2: 29, ..CkksParams::reduced() }).unwrap();
        assert_ne!(a.params_hash(), b.params_hash());
        assert_eq!(a.params_hash(), CkksContext::new(CkksParams::reduced()).unwrap().params_hash());
    }
}

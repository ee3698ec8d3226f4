//! Canonical-embedding encoder: real slot vectors to integer polynomials.
//!
//! Slot `j` is the evaluation of the plaintext polynomial at `zeta^(5^j)`,
//! `zeta = exp(i·pi/N)`. Writing `5^j = 2t + 1`, the evaluation equals bin `t`
//! of an unnormalized inverse DFT of `m_k · zeta^k`, so both directions are a
//! single length-N FFT plus a twist.

use num_complex::Complex64;

use crate::{CkksContext, CkksError};

/// An encoded plaintext polynomial with signed integer coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct PlainPoly {
    pub(crate) coeffs: Vec<i128>,
    pub(crate) scale_log2: u32,
    pub(crate) slot_fill: usize,
}

impl PlainPoly {
    pub fn coeffs(&self) -> &[i128] {
        &self.coeffs
    }

    pub fn scale_log2(&self) -> u32 {
        self.scale_log2
    }

    /// Number of meaningful leading slots.
    pub fn slot_fill(&self) -> usize {
        self.slot_fill
    }
}

/// Encodes at the context's default scale.
pub fn encode(ctx: &CkksContext, values: &[f64]) -> Result<PlainPoly, CkksError> {
    encode_with_scale(ctx, values, ctx.params().scale_log2)
}

pub fn encode_with_scale(ctx: &CkksContext, values: &[f64], scale_log2: u32) -> Result<PlainPoly, CkksError> {
    let n = ctx.n();
    if values.len() > ctx.slot_count() {
        return Err(CkksError::Capacity { values: values.len(), slots: ctx.slot_count() });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CkksError::NonFinite);
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (j, &v) in values.iter().enumerate() {
        buf[ctx.slot_bins()[j]] = Complex64::new(v, 0.0);
        buf[ctx.conj_bins()[j]] = Complex64::new(v, 0.0);
    }
    ctx.fft_forward().process(&mut buf);
    let scale = (scale_log2 as f64).exp2();
    let factor = scale / n as f64;
    // Anything past 2^120 cannot be reduced into a ciphertext modulus anyway.
    let bound = 2f64.powi(120);
    let coeffs = buf
        .iter()
        .zip(ctx.twist())
        .map(|(s, z)| {
            let c = (s * z.conj()).re * factor;
            if c.abs() >= bound {
                Err(CkksError::Overflow)
            } else {
                Ok(c.round() as i128)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PlainPoly { coeffs, scale_log2, slot_fill: values.len() })
}

/// Decodes every slot; callers truncate to `slot_fill` when they need to.
pub fn decode(ctx: &CkksContext, pt: &PlainPoly) -> Vec<f64> {
    let inv_scale = (-(pt.scale_log2 as f64)).exp2();
    let mut buf: Vec<Complex64> =
        pt.coeffs.iter().zip(ctx.twist()).map(|(&c, z)| z * (c as f64 * inv_scale)).collect();
    ctx.fft_inverse().process(&mut buf);
    ctx.slot_bins().iter().map(|&b| buf[b].re).collect()
}

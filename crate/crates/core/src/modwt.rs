//! Maximal-overlap discrete wavelet transform (MODWT) with circular boundary
//! handling, multiresolution analysis (MRA) and reconstruction.
//!
//! Coefficients follow the pyramid recursion: the level-`j` wavelet and
//! scaling series are circular convolutions of the level-`j-1` scaling series
//! with the rescaled base filters upsampled by `2^(j-1)`.

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModwtError {
    #[error("series length {0} is too short; at least 8 observations are needed for the default level count")]
    TooShortForDefault(usize),
    #[error("level count must be at least 1")]
    ZeroLevels,
    #[error("equivalent filter length {filter_len} at level {levels} exceeds series length {len}")]
    FilterTooLong {
        levels: usize,
        filter_len: usize,
        len: usize,
    },
    #[error("non-finite input at position {0}")]
    NonFinite(usize),
    #[error("empty input")]
    Empty,
    #[error("inconsistent band lengths: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterFamily {
    Haar,
}

/// Wavelet filter pair in the orthonormal DWT convention
/// (`sum(scaling) = sqrt(2)`, `sum(wavelet) = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletFilter {
    family: FilterFamily,
    scaling: Vec<f64>,
    wavelet: Vec<f64>,
}

impl WaveletFilter {
    pub fn haar() -> Self {
        let c = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            family: FilterFamily::Haar,
            scaling: vec![c, c],
            wavelet: vec![c, -c],
        }
    }

    pub fn family(&self) -> FilterFamily {
        self.family
    }

    pub fn len(&self) -> usize {
        self.wavelet.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wavelet.is_empty()
    }

    pub fn scaling(&self) -> &[f64] {
        &self.scaling
    }

    pub fn wavelet(&self) -> &[f64] {
        &self.wavelet
    }

    /// Level-1 MODWT scaling filter, `g / sqrt(2)`.
    pub fn modwt_scaling(&self) -> Vec<f64> {
        self.scaling
            .iter()
            .map(|g| g * std::f64::consts::FRAC_1_SQRT_2)
            .collect()
    }

    /// Level-1 MODWT wavelet filter, `h / sqrt(2)`.
    pub fn modwt_wavelet(&self) -> Vec<f64> {
        self.wavelet
            .iter()
            .map(|h| h * std::f64::consts::FRAC_1_SQRT_2)
            .collect()
    }

    /// Length of the level-`j` equivalent filter, `(2^j - 1)(L - 1) + 1`.
    pub fn equivalent_len(&self, level: usize) -> usize {
        ((1usize << level) - 1) * (self.len() - 1) + 1
    }
}

impl Default for WaveletFilter {
    fn default() -> Self {
        Self::haar()
    }
}

/// Number of detail levels for a series of length `n`: `floor(ln n) - 1`, so
/// that details plus smooth make `floor(ln n)` series in total.
pub fn default_level_count(n: usize) -> Result<usize, ModwtError> {
    if n < 8 {
        return Err(ModwtError::TooShortForDefault(n));
    }
    Ok((n as f64).ln().floor() as usize - 1)
}

/// Raw transform output: `wavelet[j-1]` holds level-`j` wavelet coefficients,
/// `scaling` the level-`J` scaling coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModwtCoefficients {
    pub wavelet: Vec<Vec<f64>>,
    pub scaling: Vec<f64>,
}

impl ModwtCoefficients {
    pub fn levels(&self) -> usize {
        self.wavelet.len()
    }

    pub fn len(&self) -> usize {
        self.scaling.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scaling.is_empty()
    }

    /// Sum of squares over every coefficient series.
    pub fn energy(&self) -> f64 {
        self.wavelet
            .iter()
            .chain(std::iter::once(&self.scaling))
            .map(|s| s.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    fn check(&self) -> Result<usize, ModwtError> {
        let n = self.scaling.len();
        if n == 0 {
            return Err(ModwtError::Empty);
        }
        if self.wavelet.is_empty() {
            return Err(ModwtError::ZeroLevels);
        }
        for w in &self.wavelet {
            if w.len() != n {
                return Err(ModwtError::LengthMismatch {
                    expected: n,
                    found: w.len(),
                });
            }
        }
        Ok(n)
    }
}

/// MRA of a series: `details[j-1]` is `D_j`, plus the smooth `S_J`. Every band
/// has the input's length and the bands sum to the input.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletDecomposition {
    pub details: Vec<Vec<f64>>,
    pub smooth: Vec<f64>,
    pub filter: WaveletFilter,
    pub coefficients: ModwtCoefficients,
}

impl WaveletDecomposition {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    pub fn len(&self) -> usize {
        self.smooth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.smooth.is_empty()
    }

    /// All `J + 1` bands in order `D_1..D_J, S_J`.
    pub fn bands(&self) -> impl Iterator<Item = &[f64]> {
        self.details
            .iter()
            .map(Vec::as_slice)
            .chain(std::iter::once(self.smooth.as_slice()))
    }

    /// Band labels matching [`bands`](Self::bands): `D1..DJ, SJ`.
    pub fn band_names(&self) -> Vec<String> {
        band_names(self.levels())
    }
}

pub fn band_names(levels: usize) -> Vec<String> {
    (1..=levels)
        .map(|j| format!("D{j}"))
        .chain(std::iter::once(format!("S{levels}")))
        .collect()
}

/// `out[t] = sum_l filter[l] * x[(t - stride*l) mod n]`
fn circular_filter(x: &[f64], filter: &[f64], stride: usize, out: &mut [f64]) {
    let n = x.len();
    for (t, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (l, &f) in filter.iter().enumerate() {
            let back = (stride * l) % n;
            acc += f * x[(t + n - back) % n];
        }
        *o = acc;
    }
}

/// Adjoint of [`circular_filter`]: `out[t] += sum_l filter[l] * x[(t + stride*l) mod n]`.
fn circular_filter_adjoint(x: &[f64], filter: &[f64], stride: usize, out: &mut [f64]) {
    let n = x.len();
    for (t, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (l, &f) in filter.iter().enumerate() {
            acc += f * x[(t + stride * l) % n];
        }
        *o += acc;
    }
}

fn validate(series: &[f64], filter: &WaveletFilter, levels: usize) -> Result<(), ModwtError> {
    if series.is_empty() {
        return Err(ModwtError::Empty);
    }
    if levels == 0 {
        return Err(ModwtError::ZeroLevels);
    }
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        return Err(ModwtError::NonFinite(i));
    }
    // Guard the shift before computing 2^levels.
    if levels >= usize::BITS as usize - 1 || filter.equivalent_len(levels) > series.len() {
        return Err(ModwtError::FilterTooLong {
            levels,
            filter_len: if levels >= usize::BITS as usize - 1 {
                usize::MAX
            } else {
                filter.equivalent_len(levels)
            },
            len: series.len(),
        });
    }
    Ok(())
}

/// Forward MODWT to `levels` levels via the pyramid algorithm.
pub fn modwt(
    series: &[f64],
    filter: &WaveletFilter,
    levels: usize,
) -> Result<ModwtCoefficients, ModwtError> {
    validate(series, filter, levels)?;
    let n = series.len();
    let h = filter.modwt_wavelet();
    let g = filter.modwt_scaling();

    let mut scaling = series.to_vec();
    let mut next = vec![0.0; n];
    let mut wavelet = Vec::with_capacity(levels);
    for j in 1..=levels {
        let stride = 1usize << (j - 1);
        let mut w = vec![0.0; n];
        circular_filter(&scaling, &h, stride, &mut w);
        circular_filter(&scaling, &g, stride, &mut next);
        std::mem::swap(&mut scaling, &mut next);
        wavelet.push(w);
    }
    Ok(ModwtCoefficients { wavelet, scaling })
}

/// Runs the inverse pyramid from level `top` down to level 1, starting from
/// a scaling series `v` and injecting `details[j-1]` at each level when given.
fn inverse_pyramid(
    mut v: Vec<f64>,
    top: usize,
    details: Option<&[Vec<f64>]>,
    only_level: Option<(usize, &[f64])>,
    h: &[f64],
    g: &[f64],
) -> Vec<f64> {
    let n = v.len();
    for j in (1..=top).rev() {
        let stride = 1usize << (j - 1);
        let mut prev = vec![0.0; n];
        circular_filter_adjoint(&v, g, stride, &mut prev);
        if let Some(d) = details {
            circular_filter_adjoint(&d[j - 1], h, stride, &mut prev);
        }
        if let Some((lvl, w)) = only_level {
            if lvl == j {
                circular_filter_adjoint(w, h, stride, &mut prev);
            }
        }
        v = prev;
    }
    v
}

/// Inverts raw MODWT coefficients back to the original series.
pub fn inverse_modwt(coeffs: &ModwtCoefficients, filter: &WaveletFilter) -> Result<Vec<f64>, ModwtError> {
    coeffs.check()?;
    let h = filter.modwt_wavelet();
    let g = filter.modwt_scaling();
    Ok(inverse_pyramid(
        coeffs.scaling.clone(),
        coeffs.levels(),
        Some(&coeffs.wavelet),
        None,
        &h,
        &g,
    ))
}

/// Multiresolution analysis. Each detail `D_j` is the inverse transform of
/// `W_j` alone (every other band zeroed); the smooth is the inverse of `V_J`
/// alone.
pub fn mra(coeffs: ModwtCoefficients, filter: &WaveletFilter) -> Result<WaveletDecomposition, ModwtError> {
    let n = coeffs.check()?;
    let levels = coeffs.levels();
    let h = filter.modwt_wavelet();
    let g = filter.modwt_scaling();

    let details: Vec<Vec<f64>> = (1..=levels)
        .into_par_iter()
        .map(|j| {
            inverse_pyramid(
                vec![0.0; n],
                j,
                None,
                Some((j, &coeffs.wavelet[j - 1])),
                &h,
                &g,
            )
        })
        .collect();
    let smooth = inverse_pyramid(coeffs.scaling.clone(), levels, None, None, &h, &g);

    Ok(WaveletDecomposition {
        details,
        smooth,
        filter: filter.clone(),
        coefficients: coeffs,
    })
}

/// `mra(modwt(series))`.
pub fn decompose(
    series: &[f64],
    filter: &WaveletFilter,
    levels: usize,
) -> Result<WaveletDecomposition, ModwtError> {
    mra(modwt(series, filter, levels)?, filter)
}

/// Adds MRA bands back together: `sum_j D_j + S_J`.
pub fn recombine(details: &[Vec<f64>], smooth: &[f64]) -> Result<Vec<f64>, ModwtError> {
    let n = smooth.len();
    let mut out = smooth.to_vec();
    for d in details {
        if d.len() != n {
            return Err(ModwtError::LengthMismatch {
                expected: n,
                found: d.len(),
            });
        }
        for (o, v) in out.iter_mut().zip(d) {
            *o += v;
        }
    }
    Ok(out)
}

/// Reconstructs the series from its MRA bands.
pub fn imodwt(decomposition: &WaveletDecomposition) -> Result<Vec<f64>, ModwtError> {
    recombine(&decomposition.details, &decomposition.smooth)
}

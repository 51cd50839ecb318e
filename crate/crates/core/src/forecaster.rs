//! Wavelet-transformer ensemble: MRA of the training series, one transformer
//! per band, recursive band forecasts summed back together. Also the
//! undecomposed transformer baseline and the naive last-value forecast.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::modwt::{self, ModwtCoefficients, ModwtError, WaveletDecomposition, WaveletFilter};
use crate::series::{AffineScaler, TimeSeries};
use crate::transformer::{TrainReport, TransformerConfig, TransformerError, TransformerModel};

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("decomposition failed: {0}")]
    Modwt(#[from] ModwtError),
    #[error("band {band}: {source}")]
    Band {
        band: String,
        #[source]
        source: TransformerError,
    },
    #[error("training series of length {len} is too short; need at least {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("forecast horizon must be at least 1")]
    BadHorizon,
    #[error("the joint decomposition mode needs the test split")]
    MissingTest,
    #[error("thread pool: {0}")]
    Pool(String),
}

pub type Result<T> = std::result::Result<T, ForecastError>;

/// Which samples the MRA is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecompositionMode {
    /// Training split only; test values never touch the bands.
    #[default]
    TrainOnly,
    /// Train and test together, then the bands are cut back to the training
    /// span. Circular filtering lets test values leak into training bands;
    /// kept for comparison with results produced that way.
    Joint,
}

/// How the training split is extended before the circular transform.
///
/// The MRA bands at time `t` depend on samples up to `L_J - 1` steps after
/// `t`, so the last stretch of every band is shaped by whatever the
/// transform sees past the end of the split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryExtension {
    /// Continue the split with `L_J - 1` steps of a least-squares
    /// autoregressive forecast fitted on the split alone, then reflect the
    /// whole thing. Bands at the origin then keep the local slope.
    #[default]
    Forecast,
    /// Append the time-reversed split, so the circular transform sees
    /// `y_0..y_{N-1}, y_{N-1}..y_0`. Smooth bands flatten at the origin.
    Reflect,
    /// Transform the split as is; the last samples of every band mix in the
    /// first samples of the series.
    Circular,
}

impl std::fmt::Display for BoundaryExtension {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BoundaryExtension::Forecast => "forecast",
            BoundaryExtension::Reflect => "reflect",
            BoundaryExtension::Circular => "circular",
        })
    }
}

impl std::str::FromStr for BoundaryExtension {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "forecast" => Ok(BoundaryExtension::Forecast),
            "reflect" => Ok(BoundaryExtension::Reflect),
            "circular" => Ok(BoundaryExtension::Circular),
            other => Err(format!("unknown boundary {other:?}; expected forecast, reflect or circular")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub config: TransformerConfig,
    /// Detail levels `J`; `None` uses [`modwt::default_level_count`], `Some(0)`
    /// fits a single model to the undecomposed series.
    pub levels: Option<usize>,
    pub base_seed: u64,
    pub mode: DecompositionMode,
    /// Only used in [`DecompositionMode::TrainOnly`].
    pub boundary: BoundaryExtension,
    /// Worker threads for band training; `0` uses the global pool.
    pub jobs: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            config: TransformerConfig::default(),
            levels: None,
            base_seed: crate::transformer::DEFAULT_SEED,
            mode: DecompositionMode::TrainOnly,
            boundary: BoundaryExtension::Forecast,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BandModel {
    pub name: String,
    pub scaler: AffineScaler,
    pub model: TransformerModel,
    /// Scaled training values of the band; forecasting continues from here.
    pub history: Vec<f64>,
    pub report: TrainReport,
}

#[derive(Debug, Clone)]
pub struct WTransformerEnsemble {
    pub decomposition: WaveletDecomposition,
    pub bands: Vec<BandModel>,
    pub config: TransformerConfig,
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    pub model_tag: String,
    pub predictions: Vec<f64>,
    /// Unscaled per-band forecasts, `D_1..D_J, S_J`.
    pub band_predictions: Vec<Vec<f64>>,
    pub band_names: Vec<String>,
}

impl ForecastResult {
    pub fn horizon(&self) -> usize {
        self.predictions.len()
    }
}

pub const WTRANSFORMER_TAG: &str = "wtransformer";
pub const TRANSFORMER_TAG: &str = "transformer";
pub const NAIVE_TAG: &str = "naive";

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| ForecastError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

/// MRA with zero levels: the series itself is the only (smooth) band.
fn undecomposed(values: &[f64]) -> WaveletDecomposition {
    WaveletDecomposition {
        details: Vec::new(),
        smooth: values.to_vec(),
        filter: WaveletFilter::haar(),
        coefficients: ModwtCoefficients {
            wavelet: Vec::new(),
            scaling: values.to_vec(),
        },
    }
}

/// Autoregressive order used for [`BoundaryExtension::Forecast`].
pub const EXTENSION_ORDER: usize = 24;

/// Recursive `steps`-ahead forecast from an AR(`order`) model with intercept,
/// fitted by ridge-stabilised least squares on the standardised series.
pub fn ar_continuation(values: &[f64], order: usize, steps: usize) -> Vec<f64> {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    if steps == 0 || order >= n || sd < 1e-12 * mean.abs().max(1.0) {
        return vec![values[n - 1]; steps];
    }
    let z: Vec<f64> = values.iter().map(|v| (v - mean) / sd).collect();
    let rows = n - order;
    let x = DMatrix::from_fn(rows, order + 1, |r, c| if c == order { 1.0 } else { z[r + c] });
    let y = DVector::from_fn(rows, |r, _| z[r + order]);
    let gram = x.transpose() * &x + DMatrix::identity(order + 1, order + 1) * 1e-3;
    let Some(chol) = gram.cholesky() else {
        return vec![values[n - 1]; steps];
    };
    let w = chol.solve(&(x.transpose() * y));
    let mut hist = z;
    for _ in 0..steps {
        let tail = &hist[hist.len() - order..];
        let next = tail.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>() + w[order];
        hist.push(next);
    }
    hist[n..].iter().map(|v| v * sd + mean).collect()
}

fn decompose_for_training(
    train: &TimeSeries,
    test: Option<&TimeSeries>,
    opts: &FitOptions,
) -> Result<WaveletDecomposition> {
    let n = train.len();
    let needed = opts.config.input_len + 1;
    if n < needed {
        return Err(ForecastError::TooShort { len: n, needed });
    }
    let levels = match opts.levels {
        Some(j) => j,
        None => modwt::default_level_count(n).map_err(|_| ForecastError::TooShort { len: n, needed: 8 })?,
    };
    let filter = WaveletFilter::haar();
    if levels > 0 && filter.equivalent_len(levels) > n {
        return Err(ModwtError::FilterTooLong {
            levels,
            filter_len: filter.equivalent_len(levels),
            len: n,
        }
        .into());
    }
    let reflected = |mut v: Vec<f64>| {
        let back: Vec<f64> = v.iter().rev().copied().collect();
        v.extend(back);
        v
    };
    let span: Vec<f64> = match opts.mode {
        DecompositionMode::TrainOnly => match opts.boundary {
            BoundaryExtension::Circular => train.values().to_vec(),
            BoundaryExtension::Reflect => reflected(train.values().to_vec()),
            BoundaryExtension::Forecast => {
                let reach = filter.equivalent_len(levels.max(1)) - 1;
                let mut v = train.values().to_vec();
                v.extend(ar_continuation(train.values(), EXTENSION_ORDER.min(n / 4).max(1), reach));
                reflected(v)
            }
        },
        DecompositionMode::Joint => {
            let test = test.ok_or(ForecastError::MissingTest)?;
            train.concat(test).into_values()
        }
    };
    let mut d = if levels == 0 {
        undecomposed(train.values())
    } else {
        modwt::decompose(&span, &filter, levels)?
    };
    // keep only the training span of every band and coefficient series
    let c = &mut d.coefficients;
    for band in d.details.iter_mut().chain([&mut d.smooth]).chain(c.wavelet.iter_mut()).chain([&mut c.scaling]) {
        band.truncate(n);
    }
    Ok(d)
}

/// Fits the ensemble on the training split.
pub fn fit(train: &TimeSeries, opts: &FitOptions) -> Result<WTransformerEnsemble> {
    fit_with_test(train, None, opts)
}

/// As [`fit`]; `test` is only read in [`DecompositionMode::Joint`].
pub fn fit_with_test(
    train: &TimeSeries,
    test: Option<&TimeSeries>,
    opts: &FitOptions,
) -> Result<WTransformerEnsemble> {
    opts.config.validate().map_err(|source| ForecastError::Band {
        band: "config".into(),
        source,
    })?;
    let decomposition = decompose_for_training(train, test, opts)?;
    let names = decomposition.band_names();
    let bands: Vec<(String, Vec<f64>)> = names
        .into_iter()
        .zip(decomposition.bands().map(<[f64]>::to_vec))
        .collect();

    let train_band = |(index, (name, values)): (usize, (String, Vec<f64>))| -> Result<BandModel> {
        let scaler = AffineScaler::fit(&values);
        let history = scaler.apply(&values);
        let wrap = |source| ForecastError::Band {
            band: name.clone(),
            source,
        };
        let mut model = TransformerModel::new(opts.config.clone(), opts.base_seed + index as u64).map_err(wrap)?;
        let report = model.train(&history).map_err(wrap)?;
        Ok(BandModel {
            name,
            scaler,
            model,
            history,
            report,
        })
    };
    let bands = with_pool(opts.jobs, || {
        bands
            .into_par_iter()
            .enumerate()
            .map(train_band)
            .collect::<Result<Vec<_>>>()
    })??;

    Ok(WTransformerEnsemble {
        decomposition,
        bands,
        config: opts.config.clone(),
        base_seed: opts.base_seed,
    })
}

impl WTransformerEnsemble {
    pub fn levels(&self) -> usize {
        self.decomposition.levels()
    }

    /// Forecasts every band `horizon` steps ahead from its own history,
    /// unscales, and sums across bands.
    pub fn forecast(&self, horizon: usize) -> Result<ForecastResult> {
        self.forecast_tagged(horizon, WTRANSFORMER_TAG, 0)
    }

    fn forecast_tagged(&self, horizon: usize, tag: &str, jobs: usize) -> Result<ForecastResult> {
        if horizon == 0 {
            return Err(ForecastError::BadHorizon);
        }
        let band_predictions = with_pool(jobs, || {
            self.bands
                .par_iter()
                .map(|b| {
                    let mut model = b.model.clone();
                    model.set_training(false);
                    let scaled = model
                        .predict_recursive(&b.history, horizon)
                        .map_err(|source| ForecastError::Band {
                            band: b.name.clone(),
                            source,
                        })?;
                    Ok(b.scaler.invert(&scaled))
                })
                .collect::<Result<Vec<_>>>()
        })??;
        let (details, smooth) = band_predictions.split_at(band_predictions.len() - 1);
        let predictions = modwt::recombine(details, &smooth[0])?;
        Ok(ForecastResult {
            model_tag: tag.to_string(),
            predictions,
            band_predictions,
            band_names: self.bands.iter().map(|b| b.name.clone()).collect(),
        })
    }
}

/// The transformer alone, trained on the scaled raw series.
pub fn fit_forecast_baseline_transformer(
    train: &TimeSeries,
    config: &TransformerConfig,
    horizon: usize,
    seed: u64,
) -> Result<ForecastResult> {
    if horizon == 0 {
        return Err(ForecastError::BadHorizon);
    }
    let opts = FitOptions {
        config: config.clone(),
        levels: Some(0),
        base_seed: seed,
        ..FitOptions::default()
    };
    fit(train, &opts)?.forecast_tagged(horizon, TRANSFORMER_TAG, 0)
}

/// Repeats the last training value.
pub fn naive_forecast(train: &TimeSeries, horizon: usize) -> Result<ForecastResult> {
    if train.len() < 2 {
        return Err(ForecastError::TooShort {
            len: train.len(),
            needed: 2,
        });
    }
    if horizon == 0 {
        return Err(ForecastError::BadHorizon);
    }
    let last = *train.values().last().expect("non-empty series");
    let predictions = vec![last; horizon];
    Ok(ForecastResult {
        model_tag: NAIVE_TAG.to_string(),
        band_predictions: vec![predictions.clone()],
        band_names: vec!["series".into()],
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn quick() -> TransformerConfig {
        TransformerConfig {
            input_len: 4,
            d_model: 8,
            num_heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            ffn_hidden: 8,
            epochs: 2,
            batch_size: 8,
            ..TransformerConfig::default()
        }
    }

    fn series(n: usize) -> TimeSeries {
        TimeSeries::new((0..n).map(|t| (t as f64 / 4.0).sin() + t as f64 / 50.0).collect()).unwrap()
    }

    #[test]
    fn naive_examples() {
        let s = TimeSeries::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(naive_forecast(&s, 2).unwrap().predictions, vec![3.0, 3.0]);
        assert_eq!(naive_forecast(&s, 1).unwrap().predictions, vec![3.0]);
        let c = TimeSeries::new(vec![5.0; 4]).unwrap();
        assert_eq!(naive_forecast(&c, 3).unwrap().predictions, vec![5.0; 3]);
        assert!(naive_forecast(&TimeSeries::new(vec![1.0]).unwrap(), 1).is_err());
        assert!(matches!(naive_forecast(&s, 0), Err(ForecastError::BadHorizon)));
    }

    #[test]
    fn band_count_follows_level_rule() {
        let opts = FitOptions {
            config: quick(),
            ..FitOptions::default()
        };
        let e = fit(&series(60), &opts).unwrap();
        // floor(ln 60) = 4 -> J = 3
        assert_eq!(e.levels(), 3);
        assert_eq!(e.bands.len(), 4);
        let names: Vec<_> = e.bands.iter().map(|b| b.name.as_str()).collect();
        assert_eq!(names, ["D1", "D2", "D3", "S3"]);
        for (i, b) in e.bands.iter().enumerate() {
            assert_eq!(b.model.seed(), opts.base_seed + i as u64);
        }
    }

    #[test]
    fn predictions_are_band_sums() {
        let opts = FitOptions {
            config: quick(),
            levels: Some(2),
            ..FitOptions::default()
        };
        let e = fit(&series(40), &opts).unwrap();
        let r = e.forecast(5).unwrap();
        assert_eq!(r.horizon(), 5);
        for t in 0..5 {
            let sum: f64 = r.band_predictions.iter().map(|b| b[t]).sum();
            assert!((sum - r.predictions[t]).abs() <= 1e-10);
        }
        assert!(matches!(e.forecast(0), Err(ForecastError::BadHorizon)));
    }

    #[test]
    fn short_training_series_is_rejected() {
        let opts = FitOptions::default();
        assert!(matches!(
            fit(&series(10), &opts),
            Err(ForecastError::TooShort { len: 10, needed: 13 })
        ));
        let opts = FitOptions {
            config: quick(),
            levels: Some(4),
            ..FitOptions::default()
        };
        assert!(matches!(fit(&series(10), &opts), Err(ForecastError::Modwt(_))));
        for boundary in [BoundaryExtension::Reflect, BoundaryExtension::Circular] {
            let opts = FitOptions { levels: Some(4), boundary, ..opts.clone() };
            assert!(matches!(
                fit(&series(14), &opts),
                Err(ForecastError::Modwt(ModwtError::FilterTooLong { .. }))
            ));
        }
    }

    #[test]
    fn joint_mode_needs_test_and_changes_bands() {
        let opts = FitOptions {
            config: quick(),
            levels: Some(2),
            mode: DecompositionMode::Joint,
            ..FitOptions::default()
        };
        let all = series(50);
        let (train, test) = crate::series::split(&all, crate::series::SplitSpec { test_len: 10 }).unwrap();
        assert!(matches!(fit(&train, &opts), Err(ForecastError::MissingTest)));
        let joint = fit_with_test(&train, Some(&test), &opts).unwrap();
        assert_eq!(joint.decomposition.len(), 40);
        let plain = fit(&train, &FitOptions { mode: DecompositionMode::TrainOnly, ..opts.clone() }).unwrap();
        assert_ne!(joint.decomposition.details[0], plain.decomposition.details[0]);
    }

    #[test]
    fn boundary_extensions_are_additive_and_local() {
        let train = TimeSeries::new((0..64).map(|t| t as f64 / 10.0).collect()).unwrap();
        let mk = |boundary| FitOptions {
            config: quick(),
            levels: Some(3),
            boundary,
            ..FitOptions::default()
        };
        let refl = decompose_for_training(&train, None, &mk(BoundaryExtension::Reflect)).unwrap();
        let circ = decompose_for_training(&train, None, &mk(BoundaryExtension::Circular)).unwrap();
        let fcst = decompose_for_training(&train, None, &mk(BoundaryExtension::Forecast)).unwrap();
        for d in [&refl, &circ, &fcst] {
            assert_eq!(d.len(), 64);
            assert_eq!(d.coefficients.len(), 64);
            for t in 0..64 {
                let sum: f64 = d.bands().map(|b| b[t]).sum();
                assert!((sum - train.values()[t]).abs() < 1e-12);
            }
        }
        // On a ramp the circular smooth at the origin is dragged toward the
        // start of the series; the reflected one stays near recent values.
        let last = 6.3;
        assert!((refl.smooth[63] - last).abs() < 1.0);
        assert!((circ.smooth[63] - last).abs() > 2.0);
        // the smoothing kernel is symmetric, so a continued line is reproduced
        assert!((fcst.smooth[63] - last).abs() < 1e-3, "{}", fcst.smooth[63]);
        assert!(refl.smooth[63] < last - 0.1);
    }

    #[test]
    fn ar_continuation_extends_sinusoids_and_lines() {
        let wave: Vec<f64> = (0..240).map(|t| 2.0 + (2.0 * PI * t as f64 / 24.0).sin()).collect();
        let next = ar_continuation(&wave, 24, 30);
        for (k, v) in next.iter().enumerate() {
            let want = 2.0 + (2.0 * PI * (240 + k) as f64 / 24.0).sin();
            assert!((v - want).abs() < 1e-2, "step {k}: {v} vs {want}");
        }
        let line: Vec<f64> = (0..50).map(|t| 3.0 - 0.5 * t as f64).collect();
        for (k, v) in ar_continuation(&line, 5, 10).iter().enumerate() {
            assert!((v - (3.0 - 0.5 * (50 + k) as f64)).abs() < 1e-2);
        }
        assert_eq!(ar_continuation(&[4.0; 20], 3, 2), vec![4.0, 4.0]);
        assert!(ar_continuation(&line, 5, 0).is_empty());
    }

    #[test]
    fn baseline_is_zero_level_ensemble() {
        let train = series(40);
        let base = fit_forecast_baseline_transformer(&train, &quick(), 4, 11).unwrap();
        let opts = FitOptions {
            config: quick(),
            levels: Some(0),
            base_seed: 11,
            ..FitOptions::default()
        };
        let e = fit(&train, &opts).unwrap().forecast(4).unwrap();
        assert_eq!(base.predictions, e.predictions);
        assert_eq!(base.model_tag, TRANSFORMER_TAG);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let train = series(48);
        let mk = |jobs| FitOptions {
            config: quick(),
            levels: Some(2),
            jobs,
            ..FitOptions::default()
        };
        let a = fit(&train, &mk(1)).unwrap().forecast(3).unwrap();
        let b = fit(&train, &mk(3)).unwrap().forecast(3).unwrap();
        assert_eq!(a, b);
    }
}

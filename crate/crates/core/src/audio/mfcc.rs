//! Mel-frequency cepstral features: the built-in fallback when no
//! pretrained speech features are available.

use std::path::Path;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::FeatureSequence;
use crate::error::{Error, Result};

/// Floor applied before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub pre_emphasis: f64,
    pub n_mels: usize,
    pub n_ceps: usize,
    /// Delta regression half-width; 0 disables deltas.
    pub delta_width: usize,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            window_ms: 25.0,
            hop_ms: 10.0,
            pre_emphasis: 0.97,
            n_mels: 26,
            n_ceps: 13,
            delta_width: 2,
        }
    }
}

impl MfccConfig {
    pub fn window_len(&self, rate: u32) -> usize {
        (self.window_ms * rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_len(&self, rate: u32) -> usize {
        (self.hop_ms * rate as f64 / 1000.0).round() as usize
    }

    pub fn fft_len(&self, rate: u32) -> usize {
        self.window_len(rate).next_power_of_two()
    }

    pub fn output_dim(&self) -> usize {
        if self.delta_width > 0 {
            2 * self.n_ceps
        } else {
            self.n_ceps
        }
    }

    fn validate(&self, rate: u32) -> Result<()> {
        if rate < 8000 {
            return Err(Error::invalid(format!("sample rate {rate} Hz is below 8 kHz")));
        }
        if self.window_len(rate) < 2 || self.hop_len(rate) < 1 {
            return Err(Error::invalid("window and hop must cover at least 2 and 1 samples"));
        }
        if self.n_mels < 1 || self.n_ceps < 1 || self.n_ceps > self.n_mels {
            return Err(Error::invalid("need 1 <= n_ceps <= n_mels"));
        }
        Ok(())
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// `(low, centre, high)` in Hz for each triangular filter.
pub fn mel_band_edges(n_mels: usize, rate: u32) -> Vec<(f64, f64, f64)> {
    let top = hz_to_mel(rate as f64 / 2.0);
    let pts: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    (0..n_mels).map(|m| (pts[m], pts[m + 1], pts[m + 2])).collect()
}

/// `n_mels × (n_fft/2 + 1)` filterbank weights.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, rate: u32) -> Array2<f64> {
    let bins = n_fft / 2 + 1;
    let mut fb = Array2::zeros((n_mels, bins));
    for (m, (lo, c, hi)) in mel_band_edges(n_mels, rate).into_iter().enumerate() {
        for k in 0..bins {
            let f = k as f64 * rate as f64 / n_fft as f64;
            let w = if f > lo && f <= c {
                (f - lo) / (c - lo)
            } else if f > c && f < hi {
                (hi - f) / (hi - c)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    fb
}

/// Log mel energies, `frames × n_mels`.
pub fn log_mel(samples: &[f64], rate: u32, cfg: &MfccConfig) -> Result<Array2<f64>> {
    cfg.validate(rate)?;
    if samples.is_empty() {
        return Err(Error::EmptySequence);
    }
    let win = cfg.window_len(rate);
    let hop = cfg.hop_len(rate);
    let n_fft = cfg.fft_len(rate);
    if samples.len() < win {
        return Err(Error::invalid(format!(
            "signal of {} samples is shorter than one {win}-sample window",
            samples.len()
        )));
    }
    let frames = 1 + (samples.len() - win) / hop;

    let mut emph = Vec::with_capacity(samples.len());
    emph.push(samples[0]);
    for i in 1..samples.len() {
        emph.push(samples[i] - cfg.pre_emphasis * samples[i - 1]);
    }
    let hann: Vec<f64> = (0..win)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / (win - 1) as f64).cos())
        .collect();
    let fb = mel_filterbank(cfg.n_mels, n_fft, rate);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let bins = n_fft / 2 + 1;

    let mut out = Array2::zeros((frames, cfg.n_mels));
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = ndarray::Array1::zeros(bins);
    for t in 0..frames {
        let start = t * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < win {
                Complex::new(emph[start + i] * hann[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for k in 0..bins {
            power[k] = buf[k].norm_sqr() / n_fft as f64;
        }
        let energies = fb.dot(&power);
        for (o, e) in out.row_mut(t).iter_mut().zip(energies.iter()) {
            *o = e.max(LOG_FLOOR).ln();
        }
    }
    Ok(out)
}

/// Orthonormal DCT-II of each row, keeping the first `n` coefficients.
pub fn dct2_rows(x: &Array2<f64>, n: usize) -> Array2<f64> {
    let m = x.ncols();
    let basis = Array2::from_shape_fn((m, n), |(i, k)| {
        let s = if k == 0 { (1.0 / m as f64).sqrt() } else { (2.0 / m as f64).sqrt() };
        s * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / m as f64).cos()
    });
    x.dot(&basis)
}

/// Regression deltas over `±width` frames with edge replication.
pub fn deltas(x: &Array2<f64>, width: usize) -> Array2<f64> {
    let t = x.nrows() as isize;
    let denom: f64 = 2.0 * (1..=width).map(|n| (n * n) as f64).sum::<f64>();
    let mut out = Array2::zeros(x.dim());
    for i in 0..t {
        for n in 1..=width as isize {
            let fwd = (i + n).min(t - 1) as usize;
            let back = (i - n).max(0) as usize;
            let mut row = out.row_mut(i as usize);
            row.scaled_add(n as f64 / denom, &x.row(fwd));
            row.scaled_add(-(n as f64) / denom, &x.row(back));
        }
    }
    out
}

/// Cepstra plus deltas at `1000 / hop_ms` frames per second.
pub fn mfcc_extract(samples: &[f64], rate: u32, cfg: &MfccConfig) -> Result<FeatureSequence> {
    let ceps = dct2_rows(&log_mel(samples, rate, cfg)?, cfg.n_ceps);
    let data = if cfg.delta_width > 0 {
        let d = deltas(&ceps, cfg.delta_width);
        ndarray::concatenate(ndarray::Axis(1), &[ceps.view(), d.view()]).unwrap()
    } else {
        ceps
    };
    FeatureSequence::new(data, 1000.0 / cfg.hop_ms)
}

/// Reads 16-bit mono PCM into `[-1, 1)` samples.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::UnsupportedFormat(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {} channel(s), {}-bit {:?}; only 16-bit mono PCM is supported",
            path.display(),
            spec.channels,
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::UnsupportedFormat(format!("{}: {e}", path.display())))?;
    Ok((samples, spec.sample_rate))
}

/// Writes samples in `[-1, 1]` as 16-bit mono PCM.
pub fn write_wav(path: &Path, samples: &[f64], rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::invalid(format!("{}: {other}", path.display())),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(wrap)?;
    }
    w.finalize().map_err(wrap)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_for_one_second() {
        let x = vec![0.0; 16000];
        let f = mfcc_extract(&x, 16000, &MfccConfig::default()).unwrap();
        assert_eq!(f.frames(), 98);
        assert_eq!(f.dim(), 26);
        assert_eq!(f.source_rate(), 100.0);
    }

    #[test]
    fn silence_sits_at_the_floor() {
        let cfg = MfccConfig::default();
        let lm = log_mel(&vec![0.0; 8000], 16000, &cfg).unwrap();
        assert!(lm.iter().all(|&v| v == LOG_FLOOR.ln()));
        let f = mfcc_extract(&vec![0.0; 8000], 16000, &cfg).unwrap();
        for row in f.data().rows() {
            assert!(row.iter().skip(13).all(|&d| d == 0.0));
        }
    }

    #[test]
    fn tone_at_band_centre_dominates_neighbours() {
        let rate = 16000;
        let cfg = MfccConfig::default();
        let bands = mel_band_edges(cfg.n_mels, rate);
        for m in [5, 12, 20] {
            let f0 = bands[m].1;
            let x: Vec<f64> = (0..8000)
                .map(|n| 0.5 * (2.0 * std::f64::consts::PI * f0 * n as f64 / rate as f64).sin())
                .collect();
            let lm = log_mel(&x, rate, &cfg).unwrap();
            for row in lm.rows() {
                assert!(row[m] > row[m - 1] && row[m] > row[m + 1], "band {m}: {row}");
            }
        }
    }

    #[test]
    fn deterministic_and_rejects_bad_input() {
        let x: Vec<f64> = (0..4000).map(|n| ((n * 37 % 101) as f64 / 50.0 - 1.0) * 0.3).collect();
        let a = mfcc_extract(&x, 16000, &MfccConfig::default()).unwrap();
        let b = mfcc_extract(&x, 16000, &MfccConfig::default()).unwrap();
        assert_eq!(super::super::encode_stfx(&a), super::super::encode_stfx(&b));
        assert!(mfcc_extract(&[], 16000, &MfccConfig::default()).is_err());
        assert!(mfcc_extract(&x[..100], 16000, &MfccConfig::default()).is_err());
        assert!(mfcc_extract(&x, 4000, &MfccConfig::default()).is_err());
    }

    #[test]
    fn dct_is_orthonormal() {
        let eye = Array2::eye(8);
        let d = dct2_rows(&eye, 8);
        let g = d.t().dot(&d);
        for i in 0..8 {
            for j in 0..8 {
                assert!((g[[i, j]] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wav_round_trip_and_layout_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let x: Vec<f64> = (0..200).map(|n| (n as f64 / 10.0).sin() * 0.5).collect();
        write_wav(&p, &x, 16000).unwrap();
        let (y, rate) = read_wav(&p).unwrap();
        assert_eq!(rate, 16000);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-4);
        }
        let stereo = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&stereo), Err(Error::UnsupportedFormat(_))));
    }
}

use std::f64::consts::PI;
use std::io::Write;

use rustfft::{num_complex::Complex, FftPlanner};

use super::signal::Signal;
use crate::error::{Error, Result};

/// Short-time magnitude spectra, `frames × bins`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    frame_len: usize,
    hop: usize,
    frames: usize,
    bins: usize,
    data: Vec<f64>,
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

pub fn spectrogram(signal: &Signal, frame: usize, hop: usize) -> Result<Spectrogram> {
    stft(&signal.samples, frame, hop)
}

pub(crate) fn stft(samples: &[f64], frame: usize, hop: usize) -> Result<Spectrogram> {
    if hop == 0 || frame < hop {
        return Err(Error::InvalidConfig(format!(
            "need frame >= hop > 0, got frame={frame} hop={hop}"
        )));
    }
    if frame > samples.len() {
        return Err(Error::InvalidConfig(format!(
            "frame {frame} longer than signal ({} samples)",
            samples.len()
        )));
    }
    let frames = 1 + (samples.len() - frame) / hop;
    let bins = frame / 2 + 1;
    let window = hann(frame);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(frame);
    let mut data = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex::new(0.0, 0.0); frame];
    for f in 0..frames {
        let start = f * hop;
        for (i, c) in buf.iter_mut().enumerate() {
            *c = Complex::new(samples[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        data.extend(buf[..bins].iter().map(|c| c.norm()));
    }
    Ok(Spectrogram {
        frame_len: frame,
        hop,
        frames,
        bins,
        data,
    })
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn get(&self, frame: usize, bin: usize) -> f64 {
        self.data[frame * self.bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.bins..(frame + 1) * self.bins]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn peak_bin(&self, frame: usize) -> usize {
        self.frame(frame)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Energy of the windowed frame recovered from its one-sided spectrum.
    pub fn frame_energy(&self, frame: usize) -> f64 {
        let row = self.frame(frame);
        let n = self.frame_len;
        let mut total = 0.0;
        for (k, m) in row.iter().enumerate() {
            let weight = if k == 0 || (n.is_multiple_of(2) && k == n / 2) { 1.0 } else { 2.0 };
            total += weight * m * m;
        }
        total / n as f64
    }

    /// 8-bit binary PGM: columns are frames, rows are bins with low
    /// frequencies at the bottom, grey level spans the top 80 dB.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        let db: Vec<f64> = self.data.iter().map(|m| 20.0 * m.max(1e-10).log10()).collect();
        let top = db.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let floor = top - 80.0;
        write!(out, "P5\n{} {}\n255\n", self.frames, self.bins)?;
        let mut pixels = Vec::with_capacity(self.frames * self.bins);
        for b in (0..self.bins).rev() {
            for f in 0..self.frames {
                let v = db[f * self.bins + b];
                let level = if top <= floor || !v.is_finite() {
                    0.0
                } else {
                    ((v - floor) / (top - floor)).clamp(0.0, 1.0) * 255.0
                };
                pixels.push(level.round() as u8);
            }
        }
        out.write_all(&pixels)?;
        Ok(())
    }

    /// One CSV row per frame, one column per bin.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["frame".to_string()];
        header.extend((0..self.bins).map(|b| format!("bin{b}")));
        w.write_record(&header)?;
        for f in 0..self.frames {
            let mut row = vec![f.to_string()];
            row.extend(self.frame(f).iter().map(|m| format!("{m:e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

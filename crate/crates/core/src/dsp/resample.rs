use super::Waveform;
use crate::error::{Error, Result};

/// Zero crossings of the interpolation kernel on each side at full bandwidth.
const ZERO_CROSSINGS: usize = 16;
const KAISER_BETA: f64 = 8.6;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Band-limited rational resampling with a Kaiser-windowed sinc, evaluated polyphase.
///
/// The output has `ceil(len * target / source)` samples, so duration is kept
/// within one output sample period.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if w.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    if w.sample_rate == 0 || target_rate == 0 {
        return Err(Error::invalid("sample rates must be positive"));
    }
    if target_rate == w.sample_rate {
        return Ok(w.clone());
    }
    let g = gcd(w.sample_rate as u64, target_rate as u64);
    let up = target_rate as u64 / g;
    let down = w.sample_rate as u64 / g;

    // Cutoff relative to the input Nyquist; lowered when decimating.
    let cutoff = (up as f64 / down as f64).min(1.0);
    let half = (ZERO_CROSSINGS as f64 / cutoff).ceil() as i64;
    let i0_beta = bessel_i0(KAISER_BETA);

    // One filter per output phase `p / up`; tap k applies to input sample i + k.
    let phases: Vec<Vec<f64>> = (0..up)
        .map(|p| {
            let frac = p as f64 / up as f64;
            (-half + 1..=half)
                .map(|k| {
                    let t = k as f64 - frac;
                    let r = t / half as f64;
                    let win = if r.abs() >= 1.0 {
                        0.0
                    } else {
                        bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta
                    };
                    cutoff * sinc(cutoff * t) * win
                })
                .collect()
        })
        .collect();

    let len = w.len() as u64;
    let out_len = (len * up).div_ceil(down) as usize;
    let x = &w.samples;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len as u64 {
        let pos = n * down;
        let i = (pos / up) as i64;
        let taps = &phases[(pos % up) as usize];
        let mut acc = 0.0;
        for (j, &h) in taps.iter().enumerate() {
            let idx = i + j as i64 - half + 1;
            if idx >= 0 && (idx as usize) < x.len() {
                acc += h * x[idx as usize];
            }
        }
        out.push(acc);
    }
    Waveform::new(out, target_rate)
}

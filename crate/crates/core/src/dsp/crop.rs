use rand::Rng;

use super::Spectrogram;
use crate::rng::SeededRng;

/// Crops a random contiguous window of `t_target` frames, or pads at the end.
///
/// Padding places the clip at frame 0 and fills the remainder with
/// `pad_value`, normally the log-domain silence value `ln(log_floor)`.
pub fn crop_or_pad(s: &Spectrogram, t_target: usize, pad_value: f64, rng: &mut SeededRng) -> Spectrogram {
    assert!(t_target > 0, "crop target must be positive");
    let start = if s.n_frames > t_target {
        rng.random_range(0..=s.n_frames - t_target)
    } else {
        0
    };
    s.frames(start, t_target, pad_value)
}

/// Time between the centers of the first and last of `n_frames` frames.
pub fn frames_to_span_ms(n_frames: usize, hop_ms: f64) -> f64 {
    n_frames.saturating_sub(1) as f64 * hop_ms
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn ramp(f: usize, t: usize) -> Spectrogram {
        let v = (0..f * t).map(|i| i as f64).collect();
        Spectrogram::new(v, f, t, 10.0).unwrap()
    }

    #[test]
    fn crops_contiguous_window() {
        let s = ramp(64, 120);
        let mut rng = stream(1, Stream::Crop, &[]);
        let out = crop_or_pad(&s, 96, -1.0, &mut rng);
        assert_eq!(out.shape(), (64, 96));
        let start = out.get(0, 0) as usize;
        assert!(start <= 24);
        for f in 0..64 {
            for t in 0..96 {
                assert_eq!(out.get(f, t), s.get(f, start + t));
            }
        }
    }

    #[test]
    fn exact_size_is_identity() {
        let s = ramp(64, 96);
        let mut rng = stream(1, Stream::Crop, &[]);
        assert_eq!(crop_or_pad(&s, 96, -1.0, &mut rng), s);
    }

    #[test]
    fn short_clip_is_padded_at_the_end() {
        let s = ramp(64, 50);
        let mut rng = stream(1, Stream::Crop, &[]);
        let out = crop_or_pad(&s, 96, -7.5, &mut rng);
        for f in 0..64 {
            for t in 0..50 {
                assert_eq!(out.get(f, t), s.get(f, t));
            }
            for t in 50..96 {
                assert_eq!(out.get(f, t), -7.5);
            }
        }
    }

    #[test]
    fn ninety_six_frames_span_950_ms() {
        assert_eq!(frames_to_span_ms(96, 10.0), 950.0);
    }
}

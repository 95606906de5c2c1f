use std::collections::VecDeque;

use rand::Rng;

use super::uniform;
use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// FIFO memory of recent normalized spectrograms used as Mixup partners.
///
/// Single writer: pushes are ordered, and sampling reads the current contents.
#[derive(Debug, Clone, PartialEq)]
pub struct MixupQueue {
    capacity: usize,
    items: VecDeque<Spectrogram>,
}

impl MixupQueue {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "mixup queue capacity must be positive");
        Self { capacity, items: VecDeque::with_capacity(capacity.min(4096)) }
    }

    pub fn from_items(capacity: usize, items: Vec<Spectrogram>) -> Result<Self> {
        let mut q = Self::new(capacity);
        for s in items {
            q.push(s)?;
        }
        Ok(q)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> impl Iterator<Item = &Spectrogram> {
        self.items.iter()
    }

    pub fn push(&mut self, s: Spectrogram) -> Result<()> {
        if let Some(front) = self.items.front() {
            if !front.same_shape(&s) {
                return Err(Error::shape(format!(
                    "mixup queue holds {:?} spectrograms, got {:?}",
                    front.shape(),
                    s.shape()
                )));
            }
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(s);
        Ok(())
    }

    /// Uniformly chosen stored spectrogram.
    pub fn sample(&self, rng: &mut SeededRng) -> Option<&Spectrogram> {
        if self.items.is_empty() {
            None
        } else {
            Some(&self.items[rng.random_range(0..self.items.len())])
        }
    }
}

/// `ln((1 - lambda) exp(s) + lambda exp(m))`, computed without overflow.
pub fn mix_log_exp(s: &Spectrogram, m: &Spectrogram, lambda: f64) -> Result<Spectrogram> {
    if !s.same_shape(m) {
        return Err(Error::shape(format!("mixup of {:?} with {:?}", s.shape(), m.shape())));
    }
    if lambda == 0.0 {
        return Ok(s.clone());
    }
    let mut out = s.clone();
    for (o, (&a, &b)) in out.values.iter_mut().zip(s.values.iter().zip(&m.values)) {
        let hi = a.max(b);
        *o = hi + ((1.0 - lambda) * (a - hi).exp() + lambda * (b - hi).exp()).ln();
    }
    Ok(out)
}

/// Draws a partner from the queue without modifying it.
pub(crate) fn mix_from_queue(s: &Spectrogram, q: &MixupQueue, alpha: f64, rng: &mut SeededRng) -> Result<Spectrogram> {
    let lambda = uniform(rng, 0.0, alpha);
    match q.sample(rng) {
        Some(m) => mix_log_exp(s, m, lambda),
        None => Ok(s.clone()),
    }
}

/// Mixes `s` with a random queue element (`lambda ~ U(0, alpha)`), then pushes `s`.
pub fn mixup(s: &Spectrogram, q: &mut MixupQueue, alpha: f64, rng: &mut SeededRng) -> Result<Spectrogram> {
    let out = mix_from_queue(s, q, alpha, rng)?;
    q.push(s.clone())?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn lambda_zero_is_exact_identity() {
        let s = Spectrogram::new(vec![-3.0, 0.5, 2.0, 7.0], 2, 2, 10.0).unwrap();
        let m = Spectrogram::filled(2, 2, 10.0, 4.0);
        assert_eq!(mix_log_exp(&s, &m, 0.0).unwrap(), s);
    }

    #[test]
    fn constant_case_is_ln_two_and_a_half() {
        let s = Spectrogram::filled(3, 5, 10.0, 4f64.ln());
        let m = Spectrogram::filled(3, 5, 10.0, 0.0);
        let out = mix_log_exp(&s, &m, 0.5).unwrap();
        assert!(out.values.iter().all(|&v| (v - 2.5f64.ln()).abs() < 1e-12));
    }

    #[test]
    fn empty_queue_passes_through_and_fills() {
        let mut q = MixupQueue::new(4);
        let s = Spectrogram::filled(2, 3, 10.0, 1.0);
        let mut rng = stream(0, Stream::View, &[]);
        assert_eq!(mixup(&s, &mut q, 0.4, &mut rng).unwrap(), s);
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn queue_is_fifo_bounded_and_shape_checked() {
        let mut q = MixupQueue::new(2);
        for v in [1.0, 2.0, 3.0] {
            q.push(Spectrogram::filled(2, 2, 10.0, v)).unwrap();
        }
        let vals: Vec<f64> = q.items().map(|s| s.values[0]).collect();
        assert_eq!(vals, vec![2.0, 3.0]);
        assert!(q.push(Spectrogram::filled(3, 2, 10.0, 0.0)).is_err());
        let mut rng = stream(0, Stream::View, &[]);
        assert!(mixup(&Spectrogram::filled(1, 1, 10.0, 0.0), &mut q, 0.4, &mut rng).is_err());
    }

    #[test]
    fn incoming_clip_stays_dominant() {
        // With lambda <= 0.5 the mix lies no further from s than from m.
        let s = Spectrogram::filled(1, 1, 10.0, 3.0);
        let m = Spectrogram::filled(1, 1, 10.0, -2.0);
        for k in 0..=50 {
            let lambda = 0.5 * k as f64 / 50.0;
            let v = mix_log_exp(&s, &m, lambda).unwrap().values[0];
            assert!(1.0 - lambda >= 0.5);
            let (ea, eb, ev) = (3f64.exp(), (-2f64).exp(), v.exp());
            assert!((ev - ea).abs() <= (ev - eb).abs() + 1e-12);
        }
    }
}

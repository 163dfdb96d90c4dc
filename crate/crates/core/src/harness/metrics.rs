//! Joint goal accuracy and micro-averaged slot F1.

use crate::corpus::DialogueState;
use crate::error::{Error, Result};

fn check(predictions: &[DialogueState], golds: &[DialogueState]) -> Result<()> {
    if predictions.len() != golds.len() {
        return Err(Error::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    if golds.is_empty() {
        return Err(Error::Config("metrics need at least one turn".into()));
    }
    Ok(())
}

/// Fraction of turns whose predicted state equals the gold state exactly.
pub fn jga(predictions: &[DialogueState], golds: &[DialogueState]) -> Result<f64> {
    check(predictions, golds)?;
    let hits = predictions.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / golds.len() as f64)
}

/// Slot-value pair counts pooled across turns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotCounts {
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl SlotCounts {
    pub fn of(predictions: &[DialogueState], golds: &[DialogueState]) -> Result<Self> {
        check(predictions, golds)?;
        let mut counts = SlotCounts {
            correct: 0,
            predicted: 0,
            gold: 0,
        };
        for (p, g) in predictions.iter().zip(golds) {
            counts.predicted += p.len();
            counts.gold += g.len();
            counts.correct += p.slots.iter().filter(|(k, v)| g.get(k) == Some(v.as_str())).count();
        }
        Ok(counts)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.gold)
    }

    pub fn f1(&self) -> f64 {
        if self.predicted == 0 && self.gold == 0 {
            return 1.0;
        }
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Micro-averaged F1 over slot-value pairs; 1.0 when both sides are empty
/// on every turn.
pub fn slot_f1(predictions: &[DialogueState], golds: &[DialogueState]) -> Result<f64> {
    Ok(SlotCounts::of(predictions, golds)?.f1())
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(pairs: &[(&str, &str)]) -> DialogueState {
        pairs.iter().copied().collect()
    }

    #[test]
    fn half_credit_for_one_wrong_turn() {
        let gold = [st(&[("a-b", "x")]), st(&[("a-b", "x"), ("c-d", "y")])];
        let pred = [st(&[("a-b", "x")]), st(&[("a-b", "x"), ("c-d", "z")])];
        assert_eq!(jga(&pred, &gold).unwrap(), 0.5);
    }

    #[test]
    fn f1_hand_example() {
        let c = SlotCounts::of(&[st(&[("a", "1"), ("b", "2")])], &[st(&[("a", "1"), ("c", "3")])]).unwrap();
        assert_eq!((c.precision(), c.recall(), c.f1()), (0.5, 0.5, 0.5));
    }

    #[test]
    fn empty_everywhere_is_perfect() {
        assert_eq!(slot_f1(&[st(&[])], &[st(&[])]).unwrap(), 1.0);
        assert_eq!(slot_f1(&[st(&[])], &[st(&[("a", "1")])]).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(jga(&[st(&[])], &[]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(slot_f1(&[], &[st(&[])]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[0.2, 0.4]);
        assert!((m - 0.3).abs() < 1e-12 && (s - 0.1).abs() < 1e-12);
    }
}

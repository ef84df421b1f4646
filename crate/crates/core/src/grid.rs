use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("slot width must be positive")]
    ZeroWidth,
    #[error("slot width {slot_ps} ps does not divide the period {period_ps} ps")]
    NotDividing { slot_ps: u64, period_ps: u64 },
}

/// Intra-pulse time grid anchored at the pulse start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotGrid {
    pub slot_ps: u64,
    pub n_slots: usize,
}

impl SlotGrid {
    pub fn new(slot_ps: u64, period_ps: u64) -> Result<Self, GridError> {
        if slot_ps == 0 {
            return Err(GridError::ZeroWidth);
        }
        if period_ps % slot_ps != 0 {
            return Err(GridError::NotDividing { slot_ps, period_ps });
        }
        Ok(Self {
            slot_ps,
            n_slots: (period_ps / slot_ps) as usize,
        })
    }

    pub fn period_ps(&self) -> u64 {
        self.slot_ps * self.n_slots as u64
    }

    /// `floor(t / slot_width)`, or `None` past the end of the grid.
    pub fn index(&self, intra_ps: u64) -> Option<usize> {
        let i = (intra_ps / self.slot_ps) as usize;
        (i < self.n_slots).then_some(i)
    }

    /// Start of slot `i`, seconds.
    pub fn slot_start(&self, i: usize) -> f64 {
        (i as u64 * self.slot_ps) as f64 * 1e-12
    }

    pub fn slot_width(&self) -> f64 {
        self.slot_ps as f64 * 1e-12
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing() {
        let g = SlotGrid::new(4_000, 2_000_000).unwrap();
        assert_eq!(g.n_slots, 500);
        assert_eq!(g.index(0), Some(0));
        assert_eq!(g.index(123_000), Some(30));
        assert_eq!(g.index(1_999_999), Some(499));
        assert_eq!(g.index(2_000_000), None);
    }

    #[test]
    fn non_dividing_width_rejected() {
        assert!(matches!(
            SlotGrid::new(3_000, 2_000_000),
            Err(GridError::NotDividing { .. })
        ));
        assert!(SlotGrid::new(0, 10).is_err());
    }
}

use std::collections::VecDeque;

use super::FrameFlag;
use crate::event::Timestamp;

/// Fixed-capacity sliding window of frame flags with a running flag count.
///
/// A flag leaves the window once it is `window_millis` or more older than the
/// newest entry, or when capacity would be exceeded.
#[derive(Debug, Clone)]
pub struct VoteWindow {
    capacity: usize,
    window_millis: u64,
    flags: VecDeque<FrameFlag>,
    flagged: usize,
}

impl VoteWindow {
    pub fn new(capacity: usize, window_millis: u64) -> Self {
        Self { capacity, window_millis, flags: VecDeque::with_capacity(capacity), flagged: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn flagged_count(&self) -> usize {
        self.flagged
    }

    pub fn newest(&self) -> Option<Timestamp> {
        self.flags.back().map(|f| f.t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &FrameFlag> {
        self.flags.iter()
    }

    pub fn push(&mut self, flag: FrameFlag) {
        while let Some(front) = self.flags.front() {
            let stale = front.t.0 + self.window_millis <= flag.t.0;
            if stale || self.flags.len() >= self.capacity {
                self.pop_front();
            } else {
                break;
            }
        }
        if flag.flagged {
            self.flagged += 1;
        }
        self.flags.push_back(flag);
    }

    fn pop_front(&mut self) {
        if let Some(old) = self.flags.pop_front() {
            if old.flagged {
                self.flagged -= 1;
            }
        }
    }

    /// Strict majority test against the full capacity, not the current length.
    pub fn exceeds(&self, fraction: f64) -> bool {
        self.flagged as f64 / self.capacity as f64 > fraction
    }

    pub fn clear(&mut self) {
        self.flags.clear();
        self.flagged = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flag(t: u64, flagged: bool) -> FrameFlag {
        FrameFlag { t: Timestamp(t), flagged, score: if flagged { 1.0 } else { 0.0 } }
    }

    #[test]
    fn capacity_bounds_length() {
        let mut w = VoteWindow::new(4, 10_000);
        for i in 0..10 {
            w.push(flag(i * 100, true));
        }
        assert_eq!(w.len(), 4);
        assert_eq!(w.flagged_count(), 4);
    }

    #[test]
    fn stale_flags_leave_on_time_gap() {
        let mut w = VoteWindow::new(40, 4000);
        w.push(flag(0, true));
        w.push(flag(3999, true));
        assert_eq!(w.flagged_count(), 2);
        w.push(flag(4000, false));
        // t=0 is exactly window_millis old and leaves
        assert_eq!(w.flagged_count(), 1);
        assert_eq!(w.len(), 2);
        assert!(w.iter().all(|f| f.t.0 + 4000 > 4000));
    }

    #[test]
    fn exceeds_is_strict() {
        let mut w = VoteWindow::new(40, 4000);
        for i in 0..20 {
            w.push(flag(i * 100, true));
        }
        assert!(!w.exceeds(0.5));
        w.push(flag(2000, true));
        assert!(w.exceeds(0.5));
    }
}

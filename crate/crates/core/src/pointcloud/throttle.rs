use std::collections::VecDeque;

/// Timestamp-driven frame-rate limiter.
///
/// Admission slots are spaced one period apart. A frame is admitted once its
/// timestamp reaches the next slot; the slot schedule is kept while the
/// stream keeps up and restarts from the frame after an idle gap, so a 30 FPS
/// source throttled to 20 FPS yields 20 frames per second rather than 15.
/// A sliding one-second window additionally caps admissions at the target.
#[derive(Debug, Clone)]
pub struct Throttle {
    period_ms: f64,
    per_second: usize,
    next_due: Option<f64>,
    recent: VecDeque<u64>,
}

impl Throttle {
    pub fn new(target_fps: f64) -> Self {
        assert!(target_fps > 0.0 && target_fps.is_finite(), "target_fps must be positive");
        Self {
            period_ms: 1000.0 / target_fps,
            per_second: (target_fps.floor() as usize).max(1),
            next_due: None,
            recent: VecDeque::new(),
        }
    }

    pub fn period_ms(&self) -> f64 {
        self.period_ms
    }

    pub fn admit(&mut self, timestamp_ms: u64) -> bool {
        let t = timestamp_ms as f64;
        while let Some(&front) = self.recent.front() {
            if front + 1000 <= timestamp_ms {
                self.recent.pop_front();
            } else {
                break;
            }
        }
        if self.recent.len() >= self.per_second {
            return false;
        }
        let next = match self.next_due {
            None => t + self.period_ms,
            Some(due) if t + 1e-9 >= due => {
                if t - due < self.period_ms {
                    due + self.period_ms
                } else {
                    t + self.period_ms
                }
            }
            Some(_) => return false,
        };
        self.next_due = Some(next);
        self.recent.push_back(timestamp_ms);
        true
    }
}

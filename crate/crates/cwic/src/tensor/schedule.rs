//! Fixed-ladder learning-rate schedule with plateau detection.
//!
//! Training walks a list of rates top to bottom.  The next smaller rate is
//! adopted once the epoch objective has been non-decreasing for a run of
//! `patience` successive epochs under the current rate; when the last rate
//! plateaus the same way, the schedule reports completion.

#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    ladder: Vec<f64>,
    patience: usize,
    stage: usize,
    previous: Option<f64>,
    run: usize,
    finished: bool,
}

impl PlateauSchedule {
    pub fn new(ladder: Vec<f64>, patience: usize) -> Self {
        assert!(!ladder.is_empty() && patience > 0);
        PlateauSchedule { ladder, patience, stage: 0, previous: None, run: 0, finished: false }
    }

    pub fn lr(&self) -> f64 {
        self.ladder[self.stage]
    }

    pub fn finished(&self) -> bool {
        self.finished
    }

    /// Feeds one epoch objective; returns true when this observation dropped
    /// the rate.  Comparison is against the immediately preceding epoch.
    pub fn observe(&mut self, objective: f64) -> bool {
        let non_decreasing = match self.previous {
            Some(prev) => objective >= prev,
            None => false,
        };
        self.previous = Some(objective);
        if non_decreasing {
            self.run += 1;
        } else {
            self.run = 0;
        }
        if self.run >= self.patience {
            self.run = 0;
            self.previous = None;
            if self.stage + 1 < self.ladder.len() {
                self.stage += 1;
                return true;
            }
            self.finished = true;
        }
        false
    }
}

//! Wall-clock stage timer for the frame loop.

use std::path::Path;
use std::time::{Duration, Instant};

use serde::Serialize;
use tinytherm_core::pipeline::{Stage, StageTimer};

use crate::error::Result;

#[derive(Debug, Clone, Default)]
pub struct WallClock {
    open: [Option<Instant>; 4],
    total: [Duration; 4],
    calls: [u64; 4],
}

fn slot(stage: Stage) -> usize {
    stage as usize
}

impl StageTimer for WallClock {
    fn begin(&mut self, stage: Stage) {
        self.open[slot(stage)] = Some(Instant::now());
    }

    fn end(&mut self, stage: Stage) {
        if let Some(t0) = self.open[slot(stage)].take() {
            self.total[slot(stage)] += t0.elapsed();
            self.calls[slot(stage)] += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub stage: &'static str,
    pub calls: u64,
    pub total_ms: f64,
    pub mean_us: f64,
}

impl WallClock {
    pub fn rows(&self) -> Vec<TimingRow> {
        Stage::ALL
            .iter()
            .map(|&s| {
                let (calls, total) = (self.calls[slot(s)], self.total[slot(s)]);
                TimingRow {
                    stage: s.name(),
                    calls,
                    total_ms: total.as_secs_f64() * 1e3,
                    mean_us: if calls == 0 { 0.0 } else { total.as_secs_f64() * 1e6 / calls as f64 },
                }
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::report::write_csv(path, self.rows())
    }
}

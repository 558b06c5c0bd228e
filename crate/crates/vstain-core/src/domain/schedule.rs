//! Scale schedules for the multi-resolution token pyramid.

use serde::{Deserialize, Serialize};

/// Ordered list of `(h_k, w_k)` grid sizes, coarse to fine. Both
/// dimensions are non-decreasing and the last scale must fit inside the
/// encoder grid it is used with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleSchedule {
    scales: Vec<(usize, usize)>,
}

/// One violated schedule invariant, reported by [`validate_schedule`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScheduleViolation {
    Empty,
    ZeroSized { scale: usize },
    NonMonotone { scale: usize },
    ExceedsGrid { scale: usize, grid: (usize, usize) },
}

impl ScaleSchedule {
    pub fn new(scales: Vec<(usize, usize)>) -> Self {
        Self { scales }
    }

    /// Dense run of square scales `lo..=hi`.
    pub fn dense_square(lo: usize, hi: usize) -> Self {
        Self {
            scales: (lo..=hi).map(|s| (s, s)).collect(),
        }
    }

    /// Doubling run of square scales `1, 2, 4, ..., hi` (hi must be a
    /// power of two).
    pub fn powers_of_two(hi: usize) -> Self {
        let mut scales = Vec::new();
        let mut s = 1;
        while s <= hi {
            scales.push((s, s));
            s *= 2;
        }
        Self { scales }
    }

    /// A single scale at the full encoder grid: the no-multi-scale
    /// configuration.
    pub fn single(grid: (usize, usize)) -> Self {
        Self {
            scales: vec![grid],
        }
    }

    pub fn num_scales(&self) -> usize {
        self.scales.len()
    }

    pub fn scales(&self) -> &[(usize, usize)] {
        &self.scales
    }

    pub fn coarsest(&self) -> (usize, usize) {
        self.scales[0]
    }

    pub fn finest(&self) -> (usize, usize) {
        *self.scales.last().expect("schedule non-empty")
    }

    /// Total token count over all scales.
    pub fn total_positions(&self) -> usize {
        self.scales.iter().map(|&(h, w)| h * w).sum()
    }
}

impl Default for ScaleSchedule {
    /// The dense 8..16 run: nine square scales.
    fn default() -> Self {
        Self::dense_square(8, 16)
    }
}

/// Checks a schedule against an encoder grid. Total function: returns
/// every violated invariant, empty meaning the schedule is valid.
pub fn validate_schedule(
    schedule: &ScaleSchedule,
    grid: (usize, usize),
) -> Vec<ScheduleViolation> {
    let mut violations = Vec::new();
    if schedule.scales.is_empty() {
        violations.push(ScheduleViolation::Empty);
        return violations;
    }
    let mut prev = (0usize, 0usize);
    for (k, &(h, w)) in schedule.scales.iter().enumerate() {
        if h == 0 || w == 0 {
            violations.push(ScheduleViolation::ZeroSized { scale: k });
            continue;
        }
        if h < prev.0 || w < prev.1 {
            violations.push(ScheduleViolation::NonMonotone { scale: k });
        }
        if h > grid.0 || w > grid.1 {
            violations.push(ScheduleViolation::ExceedsGrid { scale: k, grid });
        }
        prev = (h, w);
    }
    violations
}

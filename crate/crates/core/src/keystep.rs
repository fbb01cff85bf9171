//! Key-step tables: which sampler step each unlearning iteration trains on.
//!
//! A table is built from contiguous runs `[s_cur, s_cur + 1, ..., E]`. After
//! every `loop_n` runs the start moves one step later (never past `E − 1`),
//! so late steps near the end of sampling are visited most often.

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableParams {
    pub start: usize,
    pub end: usize,
    pub len: usize,
    pub loop_n: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyStepTable {
    params: TableParams,
    entries: Vec<usize>,
}

impl KeyStepTable {
    pub fn generate(params: TableParams) -> Result<Self> {
        let TableParams { start, end, len, loop_n } = params;
        if start >= end {
            return Err(Error::InvalidRange(format!("key-step table needs S < E, got S={start}, E={end}")));
        }
        if loop_n == 0 {
            return Err(Error::InvalidRange("loop_n must be at least 1".into()));
        }
        let mut entries = Vec::with_capacity(len + end - start + 1);
        let mut s_cur = start;
        let mut loop_cur = 0;
        while entries.len() < len {
            entries.extend(s_cur..=end);
            loop_cur += 1;
            if loop_cur == loop_n {
                s_cur = (s_cur + 1).min(end - 1);
                loop_cur = 0;
            }
        }
        entries.truncate(len);
        Ok(Self { params, entries })
    }

    pub fn params(&self) -> TableParams {
        self.params
    }

    pub fn entries(&self) -> &[usize] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(step, count)` for every step in `[S, E]`.
    pub fn histogram(&self) -> Vec<(usize, usize)> {
        let TableParams { start, end, .. } = self.params;
        let mut counts = vec![0usize; end - start + 1];
        for &s in &self.entries {
            counts[s - start] += 1;
        }
        (start..=end).zip(counts).collect()
    }

    /// Starting value of each contiguous run, in order.
    pub fn run_starts(&self) -> Vec<usize> {
        let mut starts = Vec::new();
        for (i, &s) in self.entries.iter().enumerate() {
            if i == 0 || s != self.entries[i - 1] + 1 {
                starts.push(s);
            }
        }
        starts
    }
}

pub fn generate_key_step_table(start: usize, end: usize, len: usize, loop_n: usize) -> Result<KeyStepTable> {
    KeyStepTable::generate(TableParams { start, end, len, loop_n })
}

/// Unlearning task families with their step fractions and iteration budgets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Class,
    Style,
    Nsfw,
    Instance,
}

impl Task {
    /// Fraction of the sampler steps skipped before the table starts.
    pub fn start_fraction(self) -> f64 {
        match self {
            Task::Class | Task::Nsfw => 0.3,
            Task::Style => 0.5,
            Task::Instance => 0.8,
        }
    }

    pub fn default_len(self) -> usize {
        match self {
            Task::Class => 700,
            Task::Style => 500,
            Task::Instance => 200,
            Task::Nsfw => 750,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Class => "class",
            Task::Style => "style",
            Task::Nsfw => "nsfw",
            Task::Instance => "instance",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "class" => Ok(Task::Class),
            "style" => Ok(Task::Style),
            "nsfw" => Ok(Task::Nsfw),
            "instance" => Ok(Task::Instance),
            other => Err(Error::UnknownTask(other.to_string())),
        }
    }
}

/// Start step for a fraction of the sampler, rounded to the nearest step.
pub fn start_step(fraction: f64, n_sampler: usize) -> usize {
    (fraction * n_sampler as f64).round() as usize
}

pub fn preset_for_task(task: Task, n_sampler: usize) -> TableParams {
    TableParams {
        start: start_step(task.start_fraction(), n_sampler),
        end: n_sampler,
        len: task.default_len(),
        loop_n: 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_traced_tables() {
        assert_eq!(generate_key_step_table(3, 5, 8, 2).unwrap().entries(), &[3, 4, 5, 3, 4, 5, 4, 5]);
        assert_eq!(generate_key_step_table(0, 1, 3, 1).unwrap().entries(), &[0, 1, 0]);
        assert!(generate_key_step_table(3, 5, 0, 1).unwrap().is_empty());
    }

    #[test]
    fn style_preset_table() {
        let p = preset_for_task(Task::Style, 50);
        assert_eq!((p.start, p.end, p.len, p.loop_n), (25, 50, 500, 1));
        let t = KeyStepTable::generate(p).unwrap();
        assert_eq!(&t.entries()[..26], &(25..=50).collect::<Vec<_>>()[..]);
        assert!(t.entries().iter().all(|&s| (25..=50).contains(&s)));
    }

    #[test]
    fn presets() {
        let tuple = |t| {
            let p = preset_for_task(t, 50);
            (p.start, p.end, p.len, p.loop_n)
        };
        assert_eq!(tuple(Task::Nsfw), (15, 50, 750, 1));
        assert_eq!(tuple(Task::Style), (25, 50, 500, 1));
        assert_eq!(tuple(Task::Instance), (40, 50, 200, 1));
        assert_eq!(tuple(Task::Class), (15, 50, 700, 1));
        assert!("painting".parse::<Task>().is_err());
    }

    #[test]
    fn rejects_degenerate_ranges() {
        assert!(generate_key_step_table(5, 5, 3, 1).is_err());
        assert!(generate_key_step_table(6, 5, 3, 1).is_err());
        assert!(generate_key_step_table(1, 5, 3, 0).is_err());
    }

    #[test]
    fn histogram_counts_entries() {
        let t = generate_key_step_table(3, 5, 8, 2).unwrap();
        assert_eq!(t.histogram(), vec![(3, 2), (4, 3), (5, 3)]);
    }

    proptest! {
        #[test]
        fn table_invariants(start in 0usize..40, width in 1usize..20, len in 0usize..400, loop_n in 1usize..5) {
            let end = start + width;
            let t = generate_key_step_table(start, end, len, loop_n).unwrap();
            prop_assert_eq!(t.len(), len);
            prop_assert!(t.entries().iter().all(|&s| s >= start && s <= end));
            prop_assert_eq!(&t, &generate_key_step_table(start, end, len, loop_n).unwrap());

            // every run is contiguous and ends at E, except a truncated final run
            let starts = t.run_starts();
            for w in starts.windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
            // starts advance by one after every loop_n runs until E - 1
            for (k, &s) in starts.iter().enumerate() {
                prop_assert_eq!(s, (start + k / loop_n).min(end - 1));
            }
        }

        #[test]
        fn late_steps_are_visited_at_least_as_often(start in 0usize..30, width in 2usize..25, extra in 0usize..300) {
            let end = start + width;
            let run = width + 1;
            // width >= 2 leaves room to shift; 3 runs guarantee two shifts
            let len = 3 * run + extra;
            let t = generate_key_step_table(start, end, len, 1).unwrap();
            let h = t.histogram();
            prop_assert!(h.last().unwrap().1 >= h.first().unwrap().1);
        }
    }
}

//! Calendar time frames and row slicing.

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::matrix::DesignMatrix;
use crate::error::{LatkdError, Result};

/// Dataset epoch: event time 0 is midnight UTC on this date.
pub fn dataset_epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(2017, 11, 1).expect("valid date")
}

pub const DEFAULT_LABEL_DELAY_DAYS: u32 = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeFrame {
    pub index: usize,
    /// Inclusive.
    pub start: NaiveDate,
    /// Exclusive.
    pub end: NaiveDate,
    #[serde(default)]
    pub label_delay_days: u32,
}

impl TimeFrame {
    /// Labels for the frame exist once `end + label_delay_days <= date`.
    pub fn labeled_available(&self, date: NaiveDate) -> bool {
        self.end + Duration::days(i64::from(self.label_delay_days)) <= date
    }

    pub fn label(&self) -> String {
        format!("{}", self.start.format("%b-%y"))
    }

    fn bounds_seconds(&self, epoch: NaiveDate) -> (f64, f64) {
        let s = (self.start - epoch).num_seconds() as f64;
        let e = (self.end - epoch).num_seconds() as f64;
        (s, e)
    }
}

pub fn add_months(date: NaiveDate, months: u32) -> NaiveDate {
    let total = date.year() * 12 + date.month0() as i32 + months as i32;
    NaiveDate::from_ymd_opt(total.div_euclid(12), total.rem_euclid(12) as u32 + 1, date.day())
        .expect("month arithmetic from day 1")
}

/// `n` contiguous calendar months starting at the month containing `start`.
pub fn monthly_schedule(start: NaiveDate, n: usize, label_delay_days: u32) -> Vec<TimeFrame> {
    let first = start.with_day(1).expect("day 1 exists");
    (0..n)
        .map(|i| TimeFrame {
            index: i,
            start: add_months(first, i as u32),
            end: add_months(first, i as u32 + 1),
            label_delay_days,
        })
        .collect()
}

pub fn validate_schedule(schedule: &[TimeFrame]) -> Result<()> {
    for f in schedule {
        if f.start >= f.end {
            return Err(LatkdError::InvalidConfig(format!(
                "frame {} has start {} not before end {}",
                f.index, f.start, f.end
            )));
        }
    }
    for w in schedule.windows(2) {
        if w[0].end != w[1].start {
            return Err(LatkdError::InvalidConfig(format!(
                "frames {} and {} are not contiguous",
                w[0].index, w[1].index
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SlicedFrames {
    pub frames: Vec<DesignMatrix>,
    /// Rows outside the schedule span.
    pub dropped: usize,
    /// Frames that received no rows.
    pub empty_frames: usize,
}

/// Assigns each row to the frame whose half-open `[start, end)` interval
/// contains its date. Row order within a frame is preserved.
pub fn slice_frames(
    matrix: &DesignMatrix,
    schedule: &[TimeFrame],
    epoch: NaiveDate,
) -> Result<SlicedFrames> {
    validate_schedule(schedule)?;
    let bounds: Vec<(f64, f64)> = schedule.iter().map(|f| f.bounds_seconds(epoch)).collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); schedule.len()];
    let mut dropped = 0;
    for (row, &t) in matrix.event_time.iter().enumerate() {
        // Frames are contiguous and sorted, so the first interval with t < end is the only candidate.
        let slot = bounds.partition_point(|&(_, e)| e <= t);
        match bounds.get(slot) {
            Some(&(s, _)) if s <= t => members[slot].push(row),
            _ => dropped += 1,
        }
    }
    let empty_frames = members.iter().filter(|m| m.is_empty()).count();
    if empty_frames > 0 {
        log::warn!("{empty_frames} frame(s) received no rows");
    }
    Ok(SlicedFrames {
        frames: members.iter().map(|rows| matrix.select_rows(rows)).collect(),
        dropped,
        empty_frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn day_seconds(date: NaiveDate) -> f64 {
        (date - dataset_epoch()).num_seconds() as f64
    }

    fn matrix_at(times: Vec<f64>) -> DesignMatrix {
        let n = times.len();
        let features = Array2::from_shape_fn((n, 1), |(r, _)| r as f64);
        DesignMatrix::new(features, vec![Some(0); n], times, String::new()).unwrap()
    }

    #[test]
    fn monthly_frames_are_contiguous() {
        let s = monthly_schedule(dataset_epoch(), 6, 30);
        assert_eq!(s[0].start, NaiveDate::from_ymd_opt(2017, 11, 1).unwrap());
        assert_eq!(s[2].start, NaiveDate::from_ymd_opt(2018, 1, 1).unwrap());
        assert_eq!(s[5].end, NaiveDate::from_ymd_opt(2018, 5, 1).unwrap());
        validate_schedule(&s).unwrap();
    }

    #[test]
    fn label_delay_gates_availability() {
        let jan = &monthly_schedule(dataset_epoch(), 3, 30)[2];
        // January ends Feb 1; with a 30-day delay labels land on Mar 3.
        assert!(!jan.labeled_available(NaiveDate::from_ymd_opt(2018, 3, 1).unwrap()));
        assert!(jan.labeled_available(NaiveDate::from_ymd_opt(2018, 3, 3).unwrap()));
    }

    #[test]
    fn assignment_examples() {
        let sched = monthly_schedule(dataset_epoch(), 2, 0);
        let nov15 = day_seconds(NaiveDate::from_ymd_opt(2017, 11, 15).unwrap());
        let dec2 = day_seconds(NaiveDate::from_ymd_opt(2017, 12, 2).unwrap());
        let out = slice_frames(&matrix_at(vec![nov15, dec2]), &sched, dataset_epoch()).unwrap();
        assert_eq!(out.frames[0].n_rows(), 1);
        assert_eq!(out.frames[1].n_rows(), 1);
        assert_eq!(out.frames[0].features[[0, 0]], 0.0);
        assert_eq!(out.frames[1].features[[0, 0]], 1.0);

        let dec1 = day_seconds(NaiveDate::from_ymd_opt(2017, 12, 1).unwrap());
        let out = slice_frames(&matrix_at(vec![dec1]), &sched, dataset_epoch()).unwrap();
        assert_eq!(out.frames[0].n_rows(), 0);
        assert_eq!(out.frames[1].n_rows(), 1);
        assert_eq!(out.empty_frames, 1);
    }

    #[test]
    fn rows_outside_span_are_dropped() {
        let sched = monthly_schedule(NaiveDate::from_ymd_opt(2017, 12, 1).unwrap(), 1, 0);
        let out = slice_frames(&matrix_at(vec![0.0, 1e9]), &sched, dataset_epoch()).unwrap();
        assert_eq!(out.dropped, 2);
    }

    #[test]
    fn non_contiguous_schedule_rejected() {
        let mut s = monthly_schedule(dataset_epoch(), 3, 0);
        s.remove(1);
        assert!(slice_frames(&matrix_at(vec![]), &s, dataset_epoch()).is_err());
    }

    proptest! {
        #[test]
        fn slicing_partitions_rows(times in prop::collection::vec(0.0f64..2.0e7, 0..200)) {
            let sched = monthly_schedule(NaiveDate::from_ymd_opt(2017, 12, 1).unwrap(), 4, 0);
            let m = matrix_at(times.clone());
            let out = slice_frames(&m, &sched, dataset_epoch()).unwrap();
            let total: usize = out.frames.iter().map(DesignMatrix::n_rows).sum();
            prop_assert_eq!(total + out.dropped, times.len());
            for f in &out.frames {
                // Original row ids are stored in the single feature column; order is preserved.
                let ids: Vec<f64> = f.features.column(0).to_vec();
                prop_assert!(ids.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}

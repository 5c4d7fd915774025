//! Server-side telemetry: the per-slot tuple of every user, bounded sliding
//! histories, delayed-label training pairs and feature normalisation.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// One user's record for one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTuple {
    pub slot: u64,
    pub dl_mbps: f64,
    pub ul_mbps: f64,
    /// One sample per AP, in dBm.
    pub rssi: Vec<f64>,
}

impl UserTuple {
    pub fn features(&self) -> usize {
        2 + self.rssi.len()
    }

    fn write_row(&self, out: &mut [f64]) {
        out[0] = self.dl_mbps;
        out[1] = self.ul_mbps;
        out[2..].copy_from_slice(&self.rssi);
    }
}

/// Dense row-major matrix; rows are slots, columns are features.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(SimError::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    fn from_tuples<'a>(tuples: impl ExactSizeIterator<Item = &'a UserTuple>, cols: usize) -> Self {
        let rows = tuples.len();
        let mut m = Matrix::zeros(rows, cols);
        for (r, t) in tuples.enumerate() {
            t.write_row(m.row_mut(r));
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// The most recent `capacity` tuples of one user, contiguous in slot order.
#[derive(Debug, Clone)]
pub struct History {
    pub user_id: u64,
    capacity: usize,
    tuples: VecDeque<UserTuple>,
}

impl History {
    pub fn new(user_id: u64, input_slots: usize, output_slots: usize) -> Self {
        let capacity = input_slots + output_slots;
        Self {
            user_id,
            capacity,
            tuples: VecDeque::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn newest_slot(&self) -> Option<u64> {
        self.tuples.back().map(|t| t.slot)
    }

    pub fn tuples(&self) -> impl Iterator<Item = &UserTuple> {
        self.tuples.iter()
    }

    /// Stored tuple for `slot`, if still retained.
    pub fn at_slot(&self, slot: u64) -> Option<&UserTuple> {
        let first = self.tuples.front()?.slot;
        let idx = slot.checked_sub(first)? as usize;
        self.tuples.get(idx)
    }

    pub fn record_slot(&mut self, tuple: UserTuple) -> Result<()> {
        if let Some(last) = self.tuples.back() {
            if tuple.slot != last.slot + 1 {
                return Err(SimError::Contract(format!(
                    "user {}: slot {} recorded after slot {}",
                    self.user_id, tuple.slot, last.slot
                )));
            }
            if tuple.rssi.len() != last.rssi.len() {
                return Err(SimError::Shape("RSSI vector length changed".into()));
            }
        }
        if self.tuples.len() == self.capacity {
            self.tuples.pop_front();
        }
        self.tuples.push_back(tuple);
        Ok(())
    }

    fn features(&self) -> usize {
        self.tuples.front().map_or(0, UserTuple::features)
    }

    /// The newest `input_slots` tuples, oldest first.
    pub fn input_window(&self, input_slots: usize) -> Option<Matrix> {
        if self.tuples.len() < input_slots {
            return None;
        }
        let skip = self.tuples.len() - input_slots;
        Some(Matrix::from_tuples(self.tuples.range(skip..), self.features()))
    }

    /// Input ending `output_slots` before the newest tuple, paired with the
    /// `output_slots` tuples that followed it.
    pub fn training_pair(&self, input_slots: usize, output_slots: usize) -> Option<TrainingSample> {
        let need = input_slots + output_slots;
        if self.tuples.len() < need {
            return None;
        }
        let start = self.tuples.len() - need;
        let f = self.features();
        Some(TrainingSample {
            input: Matrix::from_tuples(self.tuples.range(start..start + input_slots), f),
            target: Matrix::from_tuples(self.tuples.range(start + input_slots..), f),
            first_input_slot: self.tuples[start].slot,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub input: Matrix,
    pub target: Matrix,
    pub first_input_slot: u64,
}

/// Per-feature running statistics from observed tuples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub count: u64,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

pub const SIGMA_FLOOR: f64 = 1e-6;

impl NormStats {
    pub fn new(features: usize) -> Self {
        Self {
            count: 0,
            sum: vec![0.0; features],
            sum_sq: vec![0.0; features],
        }
    }

    pub fn features(&self) -> usize {
        self.sum.len()
    }

    pub fn is_ready(&self) -> bool {
        self.count >= 2
    }

    pub fn observe(&mut self, tuple: &UserTuple) {
        debug_assert_eq!(tuple.features(), self.features());
        let mut row = vec![0.0; self.features()];
        tuple.write_row(&mut row);
        self.observe_row(&row);
    }

    pub fn observe_row(&mut self, row: &[f64]) {
        self.count += 1;
        for ((s, q), &v) in self.sum.iter_mut().zip(&mut self.sum_sq).zip(row) {
            *s += v;
            *q += v * v;
        }
    }

    pub fn mean(&self, f: usize) -> f64 {
        self.sum[f] / self.count as f64
    }

    /// Population variance, clamped at zero against cancellation.
    pub fn variance(&self, f: usize) -> f64 {
        let m = self.mean(f);
        (self.sum_sq[f] / self.count as f64 - m * m).max(0.0)
    }

    pub fn std(&self, f: usize) -> f64 {
        self.variance(f).sqrt().max(SIGMA_FLOOR)
    }

    fn check(&self, m: &Matrix) -> Result<()> {
        if !self.is_ready() {
            return Err(SimError::Contract(
                "normalisation needs at least two observations".into(),
            ));
        }
        if m.cols() != self.features() {
            return Err(SimError::Shape(format!(
                "matrix has {} features, statistics have {}",
                m.cols(),
                self.features()
            )));
        }
        Ok(())
    }

    /// Per-feature (mean, std) snapshot; avoids recomputing per element.
    pub fn moments(&self) -> Vec<(f64, f64)> {
        (0..self.features()).map(|f| (self.mean(f), self.std(f))).collect()
    }

    pub fn normalize(&self, m: &Matrix) -> Result<Matrix> {
        self.check(m)?;
        let moments = self.moments();
        let mut out = m.clone();
        for r in 0..out.rows() {
            for (v, &(mu, sd)) in out.row_mut(r).iter_mut().zip(&moments) {
                *v = (*v - mu) / sd;
            }
        }
        Ok(out)
    }

    pub fn denormalize(&self, m: &Matrix) -> Result<Matrix> {
        self.check(m)?;
        let moments = self.moments();
        let mut out = m.clone();
        for r in 0..out.rows() {
            for (v, &(mu, sd)) in out.row_mut(r).iter_mut().zip(&moments) {
                *v = *v * sd + mu;
            }
        }
        Ok(out)
    }
}

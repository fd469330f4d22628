// SPDX-License-Identifier: MIT OR Apache-2.0

//! Producer–consumer activation stream over a fixed-size buffer that is
//! flushed once full.
//!
//! The producer thread pushes rows one at a time and blocks while the buffer
//! is full. The consumer waits for a full buffer (or end of input), takes
//! every row, shuffles them with its seeded RNG, and hands out batches. Flush
//! boundaries depend only on the producer's row order, so the delivered
//! sequence is identical under any thread interleaving.

use crate::error::{GlpError, Result};
use crate::rng::Rng;
use crate::tensor::Matrix;
use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;

#[derive(Debug, Default)]
struct State {
    rows: Vec<Vec<f64>>,
    finished: bool,
    cancelled: bool,
    error: Option<String>,
}

/// Bounded row buffer shared by one producer and one consumer.
#[derive(Debug)]
pub struct RingBuffer {
    capacity: usize,
    state: Mutex<State>,
    not_full: Condvar,
    full_or_done: Condvar,
}

/// Outcome of [`RingBuffer::flush`].
#[derive(Debug, PartialEq)]
pub enum Flush {
    Rows(Vec<Vec<f64>>),
    Failed(String),
    Done,
}

impl RingBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(GlpError::InvalidArgument("buffer capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            state: Mutex::new(State::default()),
            not_full: Condvar::new(),
            full_or_done: Condvar::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn fill_level(&self) -> usize {
        self.state.lock().unwrap().rows.len()
    }

    /// Blocks while full. Returns `false` once the consumer has gone away.
    pub fn push(&self, row: Vec<f64>) -> bool {
        let mut s = self.state.lock().unwrap();
        while s.rows.len() == self.capacity && !s.cancelled {
            s = self.not_full.wait(s).unwrap();
        }
        if s.cancelled {
            return false;
        }
        s.rows.push(row);
        if s.rows.len() == self.capacity {
            self.full_or_done.notify_one();
        }
        true
    }

    /// Marks the end of input, optionally with a producer error.
    pub fn finish(&self, error: Option<String>) {
        let mut s = self.state.lock().unwrap();
        s.finished = true;
        s.error = error;
        self.full_or_done.notify_all();
    }

    /// Waits for a full buffer or end of input and takes every buffered row.
    pub fn flush(&self) -> Flush {
        let mut s = self.state.lock().unwrap();
        while s.rows.len() < self.capacity && !s.finished {
            s = self.full_or_done.wait(s).unwrap();
        }
        if !s.rows.is_empty() {
            let rows = std::mem::take(&mut s.rows);
            self.not_full.notify_all();
            return Flush::Rows(rows);
        }
        match s.error.take() {
            Some(e) => Flush::Failed(e),
            None => Flush::Done,
        }
    }

    /// Releases a producer blocked in [`Self::push`].
    pub fn cancel(&self) {
        let mut s = self.state.lock().unwrap();
        s.cancelled = true;
        self.not_full.notify_all();
    }
}

/// Iterator of shuffled batches. A final partial batch is delivered; a
/// producer failure surfaces as one terminal `Err` after all rows produced
/// before it.
pub struct ActivationStream {
    buffer: Arc<RingBuffer>,
    worker: Option<JoinHandle<()>>,
    pending: VecDeque<Vec<f64>>,
    batch_size: usize,
    d: usize,
    rng: Rng,
    exhausted: bool,
    error: Option<String>,
    delivered: u64,
}

/// Spawns `producer` on its own thread. Each call yields the activation rows
/// of one unit of work (typically one document), or `None` when done.
pub fn stream_activations<P>(
    mut producer: P,
    d: usize,
    buffer_capacity: usize,
    batch_size: usize,
    seed: u64,
) -> Result<ActivationStream>
where
    P: FnMut() -> Option<Result<Matrix>> + Send + 'static,
{
    if batch_size == 0 || buffer_capacity < batch_size {
        return Err(GlpError::InvalidArgument(format!(
            "need 0 < batch_size ({batch_size}) <= buffer_capacity ({buffer_capacity})"
        )));
    }
    let buffer = Arc::new(RingBuffer::new(buffer_capacity)?);
    let shared = Arc::clone(&buffer);
    let worker = std::thread::spawn(move || {
        let error = loop {
            match producer() {
                None => break None,
                Some(Err(e)) => break Some(e.to_string()),
                Some(Ok(m)) if m.cols() != d => {
                    break Some(format!("producer emitted {} columns, expected {d}", m.cols()))
                }
                Some(Ok(m)) => {
                    if !m.iter_rows().all(|r| shared.push(r.to_vec())) {
                        return;
                    }
                }
            }
        };
        shared.finish(error);
    });
    Ok(ActivationStream {
        buffer,
        worker: Some(worker),
        pending: VecDeque::new(),
        batch_size,
        d,
        rng: Rng::new(seed),
        exhausted: false,
        error: None,
        delivered: 0,
    })
}

impl ActivationStream {
    pub fn rows_delivered(&self) -> u64 {
        self.delivered
    }

    fn take(&mut self, n: usize) -> Matrix {
        let mut data = Vec::with_capacity(n * self.d);
        for row in self.pending.drain(..n) {
            data.extend(row);
        }
        self.delivered += n as u64;
        Matrix::from_vec(n, self.d, data).expect("row width checked by producer")
    }
}

impl Iterator for ActivationStream {
    type Item = Result<Matrix>;

    fn next(&mut self) -> Option<Self::Item> {
        while self.pending.len() < self.batch_size && !self.exhausted {
            match self.buffer.flush() {
                Flush::Rows(mut rows) => {
                    self.rng.shuffle(&mut rows);
                    self.pending.extend(rows);
                }
                Flush::Failed(e) => {
                    self.error = Some(e);
                    self.exhausted = true;
                }
                Flush::Done => self.exhausted = true,
            }
        }
        if self.pending.len() >= self.batch_size {
            return Some(Ok(self.take(self.batch_size)));
        }
        if !self.pending.is_empty() {
            let n = self.pending.len();
            return Some(Ok(self.take(n)));
        }
        self.error.take().map(|e| Err(GlpError::Producer(e)))
    }
}

impl Drop for ActivationStream {
    fn drop(&mut self) {
        self.buffer.cancel();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

/// Random minibatches from an in-memory matrix, reshuffled every epoch.
#[derive(Clone, Debug)]
pub struct EpochBatches {
    data: Arc<Matrix>,
    batch_size: usize,
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl EpochBatches {
    pub fn new(data: Arc<Matrix>, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size > data.rows() {
            return Err(GlpError::InvalidArgument(format!(
                "batch size {batch_size} for {} rows",
                data.rows()
            )));
        }
        Ok(Self {
            order: Vec::new(),
            pos: 0,
            data,
            batch_size,
            rng: Rng::new(seed),
        })
    }
}

impl Iterator for EpochBatches {
    type Item = Result<Matrix>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos + self.batch_size > self.order.len() {
            self.order = self.rng.permutation(self.data.rows());
            self.pos = 0;
        }
        let idx = &self.order[self.pos..self.pos + self.batch_size];
        self.pos += self.batch_size;
        Some(Ok(self.data.select_rows(idx)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counting_producer(total: usize, per_call: usize) -> impl FnMut() -> Option<Result<Matrix>> + Send {
        let mut next = 0;
        move || {
            if next >= total {
                return None;
            }
            let n = per_call.min(total - next);
            let rows: Vec<[f64; 2]> = (next..next + n).map(|i| [i as f64, -(i as f64)]).collect();
            next += n;
            Some(Ok(Matrix::from_rows(&rows)))
        }
    }

    fn collect_ids(stream: ActivationStream) -> Vec<Vec<usize>> {
        stream
            .map(|b| b.unwrap().col(0).iter().map(|&v| v as usize).collect())
            .collect()
    }

    #[test]
    fn exactly_once_and_partial_tail() {
        let s = stream_activations(counting_producer(1003, 7), 2, 64, 16, 1).unwrap();
        let batches = collect_ids(s);
        assert_eq!(batches.last().unwrap().len(), 1003 % 16);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..1003).collect::<Vec<_>>());
    }

    #[test]
    fn capacity_equal_to_batch_is_sequential() {
        let s = stream_activations(counting_producer(100, 3), 2, 10, 10, 5).unwrap();
        for (i, mut b) in collect_ids(s).into_iter().enumerate() {
            b.sort_unstable();
            assert_eq!(b, (10 * i..10 * i + 10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn same_seed_same_order() {
        let a = collect_ids(stream_activations(counting_producer(500, 9), 2, 50, 8, 3).unwrap());
        let b = collect_ids(stream_activations(counting_producer(500, 9), 2, 50, 8, 3).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn producer_error_is_terminal() {
        let mut calls = 0;
        let producer = move || {
            calls += 1;
            match calls {
                1 => Some(Ok(Matrix::filled(5, 2, 1.0))),
                2 => Some(Err(GlpError::InvalidArgument("boom".into()))),
                _ => unreachable!("producer called after failing"),
            }
        };
        let items: Vec<_> = stream_activations(producer, 2, 4, 4, 0).unwrap().collect();
        assert_eq!(items.len(), 3);
        assert!(items[0].is_ok() && items[1].is_ok());
        assert!(matches!(&items[2], Err(GlpError::Producer(m)) if m.contains("boom")));
    }

    #[test]
    fn early_drop_releases_producer() {
        let mut s = stream_activations(counting_producer(1_000_000, 1), 2, 8, 8, 0).unwrap();
        assert!(s.next().unwrap().is_ok());
        drop(s);
    }

    #[test]
    fn bad_sizes_are_rejected() {
        assert!(stream_activations(counting_producer(1, 1), 2, 4, 8, 0).is_err());
        assert!(stream_activations(counting_producer(1, 1), 2, 4, 0, 0).is_err());
    }

    #[test]
    fn epoch_batches_cover_each_epoch() {
        let data = Arc::new(Matrix::from_rows(&(0..12).map(|i| [i as f64]).collect::<Vec<_>>()));
        let mut it = EpochBatches::new(data, 4, 2).unwrap();
        let mut seen: Vec<usize> = (0..3).flat_map(|_| it.next().unwrap().unwrap().col(0)).map(|v| v as usize).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..12).collect::<Vec<_>>());
    }
}

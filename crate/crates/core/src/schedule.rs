//! Quartz-plate schedules: how the total effective path difference `x` is
//! shared between the two arms.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::analysis::{TracePoint, TraceDistanceTrajectory};
use crate::channel::{apply_dephasing, PureTwoQubitState};
use crate::error::{Error, Result};
use crate::spectra::{decoherence_set, Characteristic};

/// Maximal effective path difference of the plates in one arm (λ₀ units).
pub const ARM_MAX: f64 = 199.0;
/// Maximal total effective path difference (λ₀ units).
pub const TOTAL_MAX: f64 = 2.0 * ARM_MAX;

/// Offsets of the five configurations, from simultaneous to consecutive.
pub const PRESET_OFFSETS: [f64; 5] = [0.0, 75.0, 100.0, 150.0, 199.0];

pub const DEFAULT_STEP: f64 = 1.0;

/// Plates are added to arm 1 alone until it reaches `offset`, then to both
/// arms at equal rates until arm 1 is full, then to arm 2 alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateSchedule {
    offset: f64,
}

impl PlateSchedule {
    pub fn new(offset: f64) -> Result<Self> {
        if !(0.0..=ARM_MAX).contains(&offset) {
            return Err(Error::InvalidParameter(format!("offset {offset} outside [0, {ARM_MAX}]")));
        }
        Ok(Self { offset })
    }

    /// Both arms grow together from the start.
    pub fn simultaneous() -> Self {
        Self { offset: 0.0 }
    }

    /// Arm 2 starts only once arm 1 is complete.
    pub fn consecutive() -> Self {
        Self { offset: ARM_MAX }
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Per-arm path differences `(x1, x2)` at total path difference `x`.
    pub fn times_at(&self, x: f64) -> Result<(f64, f64)> {
        if !(0.0..=TOTAL_MAX).contains(&x) {
            return Err(Error::OutOfSchedule { x, max: TOTAL_MAX });
        }
        let o = self.offset;
        Ok(if x <= o {
            (x, 0.0)
        } else if x <= TOTAL_MAX - o {
            let shared = 0.5 * (x - o);
            (o + shared, shared)
        } else {
            (ARM_MAX, x - ARM_MAX)
        })
    }
}

/// Sample positions `0, step, 2·step, …` up to and always including 398.
pub fn sample_points(step: f64) -> Result<Vec<f64>> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidParameter(format!("step {step} must be > 0")));
    }
    let n = (TOTAL_MAX / step + 1e-9).floor() as usize;
    let mut xs: Vec<f64> = (0..=n).map(|i| (i as f64 * step).min(TOTAL_MAX)).collect();
    if TOTAL_MAX - xs[xs.len() - 1] > 1e-9 * TOTAL_MAX {
        xs.push(TOTAL_MAX);
    } else {
        *xs.last_mut().expect("non-empty") = TOTAL_MAX;
    }
    Ok(xs)
}

/// Trace distance between two states evolved to `x`.
pub fn distance_at<P: Characteristic + ?Sized>(
    env: &P,
    sched: &PlateSchedule,
    x: f64,
    pair: (&PureTwoQubitState, &PureTwoQubitState),
) -> Result<f64> {
    let (x1, x2) = sched.times_at(x)?;
    let dec = decoherence_set(env, x1, x2)?;
    let a = apply_dephasing(pair.0, &dec)?;
    let b = apply_dephasing(pair.1, &dec)?;
    Ok(crate::analysis::trace_distance(&a, &b))
}

/// Samples the trace distance of an initial pair along a schedule.
pub fn trajectory<P: Characteristic + ?Sized>(
    env: &P,
    sched: &PlateSchedule,
    step: f64,
    pair: (&PureTwoQubitState, &PureTwoQubitState),
) -> Result<TraceDistanceTrajectory> {
    let points = sample_points(step)?
        .into_iter()
        .map(|x| Ok(TracePoint { x, d: distance_at(env, sched, x, pair)?, sigma: None }))
        .collect::<Result<Vec<_>>>()?;
    TraceDistanceTrajectory::new(points)
}

/// Long-format table of several trajectories keyed by offset.
pub fn write_family_csv<W: Write>(writer: W, family: &[(f64, TraceDistanceTrajectory)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["offset", "x_lambda0", "D"])?;
    for (offset, traj) in family {
        for p in traj.points() {
            w.serialize((offset, p.x, p.d))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a family table back into per-offset trajectories, in file order.
pub fn read_family_csv<R: Read>(reader: R) -> Result<Vec<(f64, TraceDistanceTrajectory)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out: Vec<(f64, Vec<TracePoint>)> = Vec::new();
    for rec in rdr.deserialize::<(f64, f64, f64)>() {
        let (offset, x, d) = rec?;
        match out.iter_mut().find(|(o, _)| *o == offset) {
            Some((_, pts)) => pts.push(TracePoint { x, d, sigma: None }),
            None => out.push((offset, vec![TracePoint { x, d, sigma: None }])),
        }
    }
    out.into_iter().map(|(o, pts)| Ok((o, TraceDistanceTrajectory::new(pts)?))).collect()
}

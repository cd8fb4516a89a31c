//! Superframe, slot and airtime arithmetic for the 2.4 GHz PHY.
//!
//! Every quantity is an integer count of microsecond ticks. The base
//! superframe duration (15.36 ms) is 15 360 ticks, so beacon intervals,
//! active portions and slot boundaries are exact for every legal order.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, Rem, Sub};

use serde::Serialize;
use thiserror::Error;

/// Duration of a superframe with order 0, in microseconds.
pub const BASE_SUPERFRAME_US: u64 = 15_360;
/// Largest legal beacon / superframe order.
pub const MAX_ORDER: u8 = 14;
/// Default number of equal slots in the active portion.
pub const DEFAULT_SLOTS: u8 = 16;
/// Default number of contention-only slots after the beacon slot.
pub const DEFAULT_MIN_CAP_SLOTS: u8 = 8;

/// A point in time or a span of time, in microsecond ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize)]
pub struct Micros(pub u64);

impl Micros {
    pub const ZERO: Micros = Micros(0);

    pub const fn from_ms(ms: u64) -> Self {
        Micros(ms * 1_000)
    }

    pub const fn as_u64(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, other: Micros) -> Micros {
        Micros(self.0.saturating_sub(other.0))
    }
}

impl fmt::Display for Micros {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

impl Add for Micros {
    type Output = Micros;
    fn add(self, rhs: Micros) -> Micros {
        Micros(self.0 + rhs.0)
    }
}

impl AddAssign for Micros {
    fn add_assign(&mut self, rhs: Micros) {
        self.0 += rhs.0;
    }
}

impl Sub for Micros {
    type Output = Micros;
    fn sub(self, rhs: Micros) -> Micros {
        Micros(self.0 - rhs.0)
    }
}

impl Mul<u64> for Micros {
    type Output = Micros;
    fn mul(self, rhs: u64) -> Micros {
        Micros(self.0 * rhs)
    }
}

impl Div<u64> for Micros {
    type Output = Micros;
    fn div(self, rhs: u64) -> Micros {
        Micros(self.0 / rhs)
    }
}

impl Div for Micros {
    type Output = u64;
    fn div(self, rhs: Micros) -> u64 {
        self.0 / rhs.0
    }
}

impl Rem for Micros {
    type Output = Micros;
    fn rem(self, rhs: Micros) -> Micros {
        Micros(self.0 % rhs.0)
    }
}

impl Sum for Micros {
    fn sum<I: Iterator<Item = Micros>>(iter: I) -> Micros {
        iter.fold(Micros::ZERO, Add::add)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimingError {
    #[error("order {0} is outside 0..=14")]
    OrderOutOfRange(u8),
    #[error("superframe order {so} exceeds beacon order {bo}")]
    SoExceedsBo { bo: u8, so: u8 },
    #[error("{0} slots per superframe: need at least 3 that evenly divide 15360us")]
    BadSlotCount(u8),
    #[error("minimum CAP of {min_cap} slots leaves no reservable slot out of {slots}")]
    BadMinCap { slots: u8, min_cap: u8 },
    #[error("PSDU length {len} outside 1..={max}")]
    PsduOutOfRange { len: usize, max: usize },
    #[error("invalid PHY parameters: {0}")]
    BadPhy(&'static str),
}

/// BI = 15.36 ms * 2^BO.
pub fn beacon_interval(bo: u8) -> Result<Micros, TimingError> {
    if bo > MAX_ORDER {
        return Err(TimingError::OrderOutOfRange(bo));
    }
    Ok(Micros(BASE_SUPERFRAME_US << bo))
}

/// SFAP = 15.36 ms * 2^SO.
pub fn active_portion(so: u8) -> Result<Micros, TimingError> {
    if so > MAX_ORDER {
        return Err(TimingError::OrderOutOfRange(so));
    }
    Ok(Micros(BASE_SUPERFRAME_US << so))
}

/// Beacon/superframe orders plus the slot layout of the active portion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SuperframeConfig {
    pub bo: u8,
    pub so: u8,
    pub slots_per_superframe: u8,
    pub min_cap_slots: u8,
}

impl SuperframeConfig {
    pub fn new(bo: u8, so: u8, slots_per_superframe: u8, min_cap_slots: u8) -> Result<Self, TimingError> {
        let cfg = SuperframeConfig { bo, so, slots_per_superframe, min_cap_slots };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Standard layout: 16 slots, 8 of them contention-only after the beacon.
    pub fn with_orders(bo: u8, so: u8) -> Result<Self, TimingError> {
        Self::new(bo, so, DEFAULT_SLOTS, DEFAULT_MIN_CAP_SLOTS)
    }

    pub fn validate(&self) -> Result<(), TimingError> {
        for order in [self.bo, self.so] {
            if order > MAX_ORDER {
                return Err(TimingError::OrderOutOfRange(order));
            }
        }
        if self.so > self.bo {
            return Err(TimingError::SoExceedsBo { bo: self.bo, so: self.so });
        }
        let slots = self.slots_per_superframe;
        if slots < 3 || !BASE_SUPERFRAME_US.is_multiple_of(u64::from(slots)) {
            return Err(TimingError::BadSlotCount(slots));
        }
        if self.min_cap_slots < 1 || u16::from(self.min_cap_slots) + 1 >= u16::from(slots) {
            return Err(TimingError::BadMinCap { slots, min_cap: self.min_cap_slots });
        }
        Ok(())
    }

    pub fn beacon_interval(&self) -> Micros {
        Micros(BASE_SUPERFRAME_US << self.bo)
    }

    pub fn active_portion(&self) -> Micros {
        Micros(BASE_SUPERFRAME_US << self.so)
    }

    pub fn slot_duration(&self) -> Micros {
        self.active_portion() / u64::from(self.slots_per_superframe)
    }

    /// Slots `[1, 1 + min_cap_slots)`.
    pub fn cap_slots(&self) -> std::ops::Range<u8> {
        1..1 + self.min_cap_slots
    }

    /// Slots open to GTS, PDS and GBS reservations.
    pub fn reservable_slots(&self) -> std::ops::Range<u8> {
        1 + self.min_cap_slots..self.slots_per_superframe
    }

    pub fn is_reservable(&self, slot: u8) -> bool {
        self.reservable_slots().contains(&slot)
    }

    /// Offset of the start of `slot` from the beacon.
    pub fn slot_offset(&self, slot: u8) -> Micros {
        self.slot_duration() * u64::from(slot)
    }

    /// Contention window `[start, end)` relative to the superframe start.
    pub fn cap_window(&self) -> (Micros, Micros) {
        (self.slot_offset(1), self.slot_offset(1 + self.min_cap_slots))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SlotRole {
    Beacon,
    Cap,
    Reservable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SlotBoundary {
    pub index: u8,
    pub start: Micros,
    pub end: Micros,
    pub role: SlotRole,
}

/// Absolute timing layout of one superframe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SuperframeGrid {
    pub beacon_interval: Micros,
    pub active_portion: Micros,
    pub slot_duration: Micros,
    pub slots: Vec<SlotBoundary>,
    pub inactive_start: Micros,
}

impl SuperframeGrid {
    /// The doze period `[active_portion, beacon_interval)`; empty when SO = BO.
    pub fn inactive_period(&self) -> (Micros, Micros) {
        (self.inactive_start, self.beacon_interval)
    }
}

pub fn build_grid(cfg: &SuperframeConfig) -> Result<SuperframeGrid, TimingError> {
    cfg.validate()?;
    let slot_duration = cfg.slot_duration();
    let slots = (0..cfg.slots_per_superframe)
        .map(|index| {
            let role = if index == 0 {
                SlotRole::Beacon
            } else if cfg.cap_slots().contains(&index) {
                SlotRole::Cap
            } else {
                SlotRole::Reservable
            };
            SlotBoundary {
                index,
                start: slot_duration * u64::from(index),
                end: slot_duration * (u64::from(index) + 1),
                role,
            }
        })
        .collect();
    Ok(SuperframeGrid {
        beacon_interval: cfg.beacon_interval(),
        active_portion: cfg.active_portion(),
        slot_duration,
        slots,
        inactive_start: cfg.active_portion(),
    })
}

/// PHY and radio-host timing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PhyParams {
    pub data_rate_bps: u64,
    /// Preamble, start delimiter and PHY header prepended to every PSDU.
    pub phy_overhead_bytes: usize,
    pub max_psdu_bytes: usize,
    pub turnaround_time: Micros,
    pub ack_psdu_bytes: usize,
    /// Per-frame processing delay on the host/radio bus.
    pub host_delay: Micros,
}

impl Default for PhyParams {
    fn default() -> Self {
        PhyParams {
            data_rate_bps: 250_000,
            phy_overhead_bytes: 6,
            max_psdu_bytes: 127,
            turnaround_time: Micros(192),
            ack_psdu_bytes: 5,
            host_delay: Micros::ZERO,
        }
    }
}

impl PhyParams {
    pub fn validate(&self) -> Result<(), TimingError> {
        if self.data_rate_bps == 0 {
            return Err(TimingError::BadPhy("data rate must be positive"));
        }
        if self.ack_psdu_bytes < 1 || self.max_psdu_bytes < self.ack_psdu_bytes {
            return Err(TimingError::BadPhy("need max_psdu_bytes >= ack_psdu_bytes >= 1"));
        }
        Ok(())
    }

    pub fn with_host_delay(self, host_delay: Micros) -> Self {
        PhyParams { host_delay, ..self }
    }

    fn airtime_unchecked(&self, psdu_len: usize) -> Micros {
        let bits = (self.phy_overhead_bytes + psdu_len) as u64 * 8;
        // Round up so a frame never appears shorter than it is.
        Micros((bits * 1_000_000).div_ceil(self.data_rate_bps))
    }

    /// Airtime of the acknowledgement frame.
    pub fn ack_airtime(&self) -> Micros {
        self.airtime_unchecked(self.ack_psdu_bytes)
    }
}

/// Time on air of a frame with the given PSDU, PHY overhead included.
pub fn frame_airtime(psdu_len: usize, phy: &PhyParams) -> Result<Micros, TimingError> {
    if psdu_len == 0 || psdu_len > phy.max_psdu_bytes {
        return Err(TimingError::PsduOutOfRange { len: psdu_len, max: phy.max_psdu_bytes });
    }
    Ok(phy.airtime_unchecked(psdu_len))
}

/// One data exchange: host delay, data frame and, when acknowledged,
/// turnaround plus the ack frame.
pub fn exchange_time(psdu_len: usize, acked: bool, phy: &PhyParams) -> Result<Micros, TimingError> {
    let mut cycle = frame_airtime(psdu_len, phy)? + phy.host_delay;
    if acked {
        cycle += phy.turnaround_time + phy.ack_airtime();
    }
    Ok(cycle)
}

/// Largest number of complete exchanges that fit in one slot.
pub fn frames_per_slot(
    psdu_len: usize,
    acked: bool,
    cfg: &SuperframeConfig,
    phy: &PhyParams,
) -> Result<u64, TimingError> {
    let cycle = exchange_time(psdu_len, acked, phy)?;
    Ok(cfg.slot_duration() / cycle)
}

/// Back-to-back send rate with no MAC and no acknowledgement, in bit/s.
pub fn unconstrained_throughput(psdu_len: usize, phy: &PhyParams) -> Result<f64, TimingError> {
    let per_frame = frame_airtime(psdu_len, phy)? + phy.host_delay;
    Ok((psdu_len * 8) as f64 / per_frame.as_secs_f64())
}

/// Smallest host delay for which the unconstrained throughput at `psdu_len`
/// does not exceed `target_bps`.
pub fn calibrate_host_delay(target_bps: f64, psdu_len: usize, phy: &PhyParams) -> Result<Micros, TimingError> {
    let air = frame_airtime(psdu_len, phy)?;
    let needed_us = ((psdu_len * 8) as f64 / target_bps * 1e6).ceil() as u64;
    Ok(Micros(needed_us.saturating_sub(air.0)))
}

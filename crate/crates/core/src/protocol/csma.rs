//! Slotted CSMA/CA as a pure state machine. The caller performs the channel
//! assessments and reports their outcome.

use rand::Rng;
use serde::Serialize;

use crate::simcore::ChannelState;
use crate::timing::Micros;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CsmaParams {
    pub min_be: u8,
    pub max_be: u8,
    pub max_backoffs: u8,
    pub backoff_unit: Micros,
    /// Consecutive idle assessments required before transmitting.
    pub contention_window: u8,
    pub cca_duration: Micros,
}

impl Default for CsmaParams {
    fn default() -> Self {
        CsmaParams {
            min_be: 3,
            max_be: 5,
            max_backoffs: 4,
            backoff_unit: Micros(320),
            contention_window: 2,
            cca_duration: Micros(128),
        }
    }
}

impl CsmaParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_be > self.max_be {
            return Err(format!("min_be {} exceeds max_be {}", self.min_be, self.max_be));
        }
        if self.backoff_unit == Micros::ZERO || self.contention_window == 0 {
            return Err("backoff unit and contention window must be positive".into());
        }
        if self.cca_duration > self.backoff_unit {
            return Err("CCA must fit inside one backoff period".into());
        }
        Ok(())
    }
}

/// The contention period of the current superframe. Backoff boundaries are
/// aligned on `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CapWindow {
    pub start: Micros,
    pub end: Micros,
}

impl CapWindow {
    pub fn next_boundary(&self, t: Micros, unit: Micros) -> Micros {
        if t <= self.start {
            return self.start;
        }
        let units = (t - self.start).as_u64().div_ceil(unit.as_u64());
        self.start + unit * units
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CsmaStep {
    /// Assess the channel over `[at, at + cca_duration)` and report back.
    Cca { at: Micros },
    Transmit { at: Micros },
    /// Not enough CAP left for the exchange; restart in the next CAP.
    Defer,
    ChannelAccessFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CsmaRun {
    pub nb: u8,
    pub be: u8,
    pub cw: u8,
}

impl CsmaRun {
    pub fn new(params: &CsmaParams) -> Self {
        CsmaRun { nb: 0, be: params.min_be, cw: params.contention_window }
    }

    /// Draws a random backoff starting at the first boundary at or after `now`.
    /// `exchange` is the time the transmission needs, including any ack.
    pub fn backoff<R: Rng>(
        &mut self,
        now: Micros,
        cap: CapWindow,
        exchange: Micros,
        params: &CsmaParams,
        rng: &mut R,
    ) -> CsmaStep {
        let unit = params.backoff_unit;
        let periods = rng.gen_range(0..1u64 << self.be);
        let cca_at = cap.next_boundary(now, unit) + unit * periods;
        self.cw = params.contention_window;
        let tx_at = cca_at + unit * u64::from(params.contention_window);
        if tx_at + exchange > cap.end {
            return CsmaStep::Defer;
        }
        CsmaStep::Cca { at: cca_at }
    }

    /// Feeds the result of the assessment that started at `cca_at`.
    pub fn on_cca<R: Rng>(
        &mut self,
        result: ChannelState,
        cca_at: Micros,
        cap: CapWindow,
        exchange: Micros,
        params: &CsmaParams,
        rng: &mut R,
    ) -> CsmaStep {
        let unit = params.backoff_unit;
        match result {
            ChannelState::Idle => {
                self.cw -= 1;
                if self.cw == 0 {
                    CsmaStep::Transmit { at: cca_at + unit }
                } else {
                    CsmaStep::Cca { at: cca_at + unit }
                }
            }
            ChannelState::Busy => {
                self.nb += 1;
                self.be = (self.be + 1).min(params.max_be);
                if self.nb > params.max_backoffs {
                    return CsmaStep::ChannelAccessFailure;
                }
                self.backoff(cca_at + params.cca_duration, cap, exchange, params, rng)
            }
        }
    }
}

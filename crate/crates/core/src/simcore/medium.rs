use serde::Serialize;

use crate::timing::Micros;

/// Index of a device inside the medium.
pub type Port = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TxId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    pub id: TxId,
    pub sender: Port,
    pub start: Micros,
    pub end: Micros,
}

impl Transmission {
    fn overlaps(&self, start: Micros, end: Micros) -> bool {
        self.start < end && self.end > start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ChannelState {
    Idle,
    Busy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RxOutcome {
    Delivered,
    /// Another in-range transmission overlapped the frame, or the receiver
    /// was itself transmitting.
    Collision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reception {
    pub receiver: Port,
    pub outcome: RxOutcome,
}

/// Single shared channel with an ideal PHY: a frame survives at a receiver
/// iff no other in-range transmission overlaps any part of it.
#[derive(Debug, Clone)]
pub struct Medium {
    range: Vec<Vec<bool>>,
    neighbours: Vec<Vec<Port>>,
    history: Vec<Transmission>,
    transmitting: Vec<Option<TxId>>,
    next_id: u64,
    longest: Micros,
}

impl Medium {
    /// `links` are symmetric radio-range pairs.
    pub fn new(devices: usize, links: impl IntoIterator<Item = (Port, Port)>) -> Self {
        let mut range = vec![vec![false; devices]; devices];
        for (a, b) in links {
            if a != b {
                range[a][b] = true;
                range[b][a] = true;
            }
        }
        let neighbours = range
            .iter()
            .map(|row| row.iter().enumerate().filter(|(_, &r)| r).map(|(i, _)| i).collect())
            .collect();
        Medium {
            range,
            neighbours,
            history: Vec::new(),
            transmitting: vec![None; devices],
            next_id: 0,
            longest: Micros::ZERO,
        }
    }

    pub fn fully_connected(devices: usize) -> Self {
        let pairs: Vec<_> = (0..devices).flat_map(|a| (a + 1..devices).map(move |b| (a, b))).collect();
        Self::new(devices, pairs)
    }

    pub fn in_range(&self, a: Port, b: Port) -> bool {
        self.range[a][b]
    }

    pub fn neighbours(&self, a: Port) -> &[Port] {
        &self.neighbours[a]
    }

    pub fn is_transmitting(&self, a: Port) -> bool {
        self.transmitting[a].is_some()
    }

    /// Registers a transmission occupying `[now, now + duration)`.
    /// Panics if the sender is already on air.
    pub fn begin_tx(&mut self, sender: Port, now: Micros, duration: Micros) -> Transmission {
        assert!(
            self.transmitting[sender].is_none(),
            "device {sender} started a transmission while already transmitting"
        );
        let tx = Transmission { id: TxId(self.next_id), sender, start: now, end: now + duration };
        self.next_id += 1;
        self.transmitting[sender] = Some(tx.id);
        self.longest = self.longest.max(duration);
        self.prune(now);
        self.history.push(tx);
        tx
    }

    fn prune(&mut self, now: Micros) {
        if self.history.len() < 64 {
            return;
        }
        let horizon = now.saturating_sub(self.longest * 2);
        self.history.retain(|t| t.end > horizon);
    }

    /// Ends a transmission and reports what every in-range device received.
    pub fn end_tx(&mut self, tx: &Transmission) -> Vec<Reception> {
        if self.transmitting[tx.sender] == Some(tx.id) {
            self.transmitting[tx.sender] = None;
        }
        self.neighbours[tx.sender]
            .iter()
            .map(|&receiver| Reception { receiver, outcome: self.outcome_at(tx, receiver) })
            .collect()
    }

    fn outcome_at(&self, tx: &Transmission, receiver: Port) -> RxOutcome {
        let clash = self.history.iter().any(|other| {
            other.id != tx.id
                && (other.sender == receiver || self.range[receiver][other.sender])
                && other.overlaps(tx.start, tx.end)
        });
        if clash {
            RxOutcome::Collision
        } else {
            RxOutcome::Delivered
        }
    }

    /// Instantaneous carrier sense.
    pub fn cca(&self, device: Port, now: Micros) -> ChannelState {
        self.cca_window(device, now, now + Micros(1))
    }

    /// Busy iff an in-range transmission overlaps `[from, to)`.
    pub fn cca_window(&self, device: Port, from: Micros, to: Micros) -> ChannelState {
        let busy = self
            .history
            .iter()
            .any(|t| t.sender != device && self.range[device][t.sender] && t.overlaps(from, to));
        if busy {
            ChannelState::Busy
        } else {
            ChannelState::Idle
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(r: &[Reception], port: Port) -> Option<RxOutcome> {
        r.iter().find(|x| x.receiver == port).map(|x| x.outcome)
    }

    #[test]
    fn lone_sender_is_delivered() {
        let mut m = Medium::new(2, [(0, 1)]);
        let tx = m.begin_tx(0, Micros(0), Micros(100));
        let r = m.end_tx(&tx);
        assert_eq!(outcome(&r, 1), Some(RxOutcome::Delivered));
    }

    #[test]
    fn overlap_collides_only_where_both_are_heard() {
        // 0 and 2 are hidden from each other; 1 hears both; 3 hears only 0
        let mut m = Medium::new(4, [(0, 1), (2, 1), (0, 3)]);
        let a = m.begin_tx(0, Micros(0), Micros(100));
        let b = m.begin_tx(2, Micros(50), Micros(100));
        let ra = m.end_tx(&a);
        let rb = m.end_tx(&b);
        assert_eq!(outcome(&ra, 1), Some(RxOutcome::Collision));
        assert_eq!(outcome(&rb, 1), Some(RxOutcome::Collision));
        assert_eq!(outcome(&ra, 3), Some(RxOutcome::Delivered));
    }

    #[test]
    fn out_of_range_sender_neither_delivers_nor_collides() {
        let mut m = Medium::new(3, [(0, 1)]);
        let a = m.begin_tx(0, Micros(0), Micros(100));
        let b = m.begin_tx(2, Micros(0), Micros(100));
        assert_eq!(outcome(&m.end_tx(&a), 1), Some(RxOutcome::Delivered));
        assert!(m.end_tx(&b).is_empty());
    }

    #[test]
    fn back_to_back_frames_do_not_overlap() {
        let mut m = Medium::new(3, [(0, 1), (2, 1)]);
        let a = m.begin_tx(0, Micros(0), Micros(100));
        let ra = m.end_tx(&a);
        let b = m.begin_tx(2, Micros(100), Micros(100));
        let rb = m.end_tx(&b);
        assert_eq!(outcome(&ra, 1), Some(RxOutcome::Delivered));
        assert_eq!(outcome(&rb, 1), Some(RxOutcome::Delivered));
    }

    #[test]
    fn cca_semantics() {
        let mut m = Medium::new(3, [(0, 1)]);
        assert_eq!(m.cca(1, Micros(0)), ChannelState::Idle);
        let t = m.begin_tx(0, Micros(10), Micros(100));
        assert_eq!(m.cca(1, Micros(50)), ChannelState::Busy);
        // device 2 cannot hear device 0
        assert_eq!(m.cca(2, Micros(50)), ChannelState::Idle);
        m.end_tx(&t);
        assert_eq!(m.cca(1, Micros(110)), ChannelState::Idle);
        assert_eq!(m.cca_window(1, Micros(100), Micros(228)), ChannelState::Busy);
    }

    #[test]
    #[should_panic(expected = "already transmitting")]
    fn double_transmission_is_fatal() {
        let mut m = Medium::new(2, [(0, 1)]);
        m.begin_tx(0, Micros(0), Micros(100));
        m.begin_tx(0, Micros(10), Micros(100));
    }
}

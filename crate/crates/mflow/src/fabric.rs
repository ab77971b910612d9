//! In-process message passing between worker ranks: point-to-point
//! send/recv with per-(peer, tag) FIFO ordering, deterministic collectives,
//! and traffic counters. Each endpoint is owned by exactly one worker
//! thread; FIFO channels are the only shared state.

use std::collections::{HashMap, VecDeque};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use crate::{Error, Result};

/// Accounting header charged per point-to-point message: u32 tag + u64
/// payload length.
pub const HEADER_BYTES: u64 = 12;

const DEFAULT_WATCHDOG: Duration = Duration::from_secs(30);
/// Tags with the high bit set are reserved for collectives.
const COLLECTIVE_BIT: u32 = 1 << 31;

struct Message {
    tag: u32,
    payload: Vec<u8>,
}

/// Monotone traffic counters. Collective calls are counted separately from
/// point-to-point traffic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub messages_sent: u64,
    pub bytes_sent: u64,
    pub messages_received: u64,
    pub bytes_received: u64,
    pub allreduce_calls: u64,
    pub allgather_calls: u64,
}

/// Snapshot of every rank's counters plus per-iteration aggregates, exported
/// as CSV rows `rank, iteration, msgs, bytes`.
#[derive(Debug, Clone, Default)]
pub struct TrafficReport {
    pub per_rank: Vec<Counters>,
    /// (rank, iteration, messages, bytes) deltas recorded by the caller.
    pub per_iteration: Vec<(usize, usize, u64, u64)>,
}

impl TrafficReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,iteration,msgs,bytes\n");
        for (rank, iter, msgs, bytes) in &self.per_iteration {
            out.push_str(&format!("{rank},{iter},{msgs},{bytes}\n"));
        }
        out
    }

    pub fn total_messages(&self) -> u64 {
        self.per_rank.iter().map(|c| c.messages_sent).sum()
    }
}

/// One rank's communication endpoint.
pub struct Endpoint {
    rank: usize,
    world: usize,
    senders: Vec<Option<Sender<Message>>>,
    receivers: Vec<Option<Receiver<Message>>>,
    /// Messages that arrived while waiting for a different tag.
    stash: HashMap<(usize, u32), VecDeque<Vec<u8>>>,
    watchdog: Duration,
    pub counters: Counters,
}

/// Builds a fully connected in-process world of `p` endpoints. Delivery is
/// deterministic for any program that names its receive peers, because each
/// (sender, receiver, tag) stream is FIFO.
pub fn spawn_world(p: usize) -> Result<Vec<Endpoint>> {
    spawn_world_with(p, DEFAULT_WATCHDOG)
}

/// Same as [`spawn_world`] with an explicit watchdog timeout; blocked
/// receives turn into errors after the timeout so protocol bugs surface as
/// diagnostics rather than hangs.
pub fn spawn_world_with(p: usize, watchdog: Duration) -> Result<Vec<Endpoint>> {
    if p == 0 {
        return Err(Error::invalid("world size must be at least 1".to_string()));
    }
    let mut txs: Vec<Vec<Option<Sender<Message>>>> = (0..p)
        .map(|_| (0..p).map(|_| None).collect())
        .collect();
    let mut rxs: Vec<Vec<Option<Receiver<Message>>>> = (0..p)
        .map(|_| (0..p).map(|_| None).collect())
        .collect();
    for from in 0..p {
        for to in 0..p {
            if from == to {
                continue;
            }
            let (tx, rx) = channel();
            txs[from][to] = Some(tx);
            rxs[to][from] = Some(rx);
        }
    }
    let mut endpoints = Vec::with_capacity(p);
    for (rank, (senders, receivers)) in txs.into_iter().zip(rxs).enumerate() {
        endpoints.push(Endpoint {
            rank,
            world: p,
            senders,
            receivers,
            stash: HashMap::new(),
            watchdog,
            counters: Counters::default(),
        });
    }
    Ok(endpoints)
}

impl Endpoint {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn world(&self) -> usize {
        self.world
    }

    fn check_peer(&self, peer: usize) -> Result<()> {
        if peer == self.rank {
            return Err(Error::Transport(format!("rank {} cannot message itself", self.rank)));
        }
        if peer >= self.world {
            return Err(Error::Transport(format!(
                "rank {peer} outside world of {}",
                self.world
            )));
        }
        Ok(())
    }

    fn send_raw(&self, to: usize, tag: u32, payload: Vec<u8>) -> Result<()> {
        self.senders[to]
            .as_ref()
            .expect("peer channel exists")
            .send(Message { tag, payload })
            .map_err(|_| Error::Transport(format!("rank {to} hung up")))
    }

    fn recv_raw(&mut self, from: usize, tag: u32) -> Result<Vec<u8>> {
        if let Some(queue) = self.stash.get_mut(&(from, tag)) {
            if let Some(payload) = queue.pop_front() {
                return Ok(payload);
            }
        }
        let rx = self.receivers[from].as_ref().expect("peer channel exists");
        loop {
            match rx.recv_timeout(self.watchdog) {
                Ok(msg) if msg.tag == tag => return Ok(msg.payload),
                Ok(msg) => {
                    self.stash
                        .entry((from, msg.tag))
                        .or_default()
                        .push_back(msg.payload);
                }
                Err(RecvTimeoutError::Timeout) => {
                    return Err(Error::Transport(format!(
                        "rank {} timed out waiting for tag {tag} from rank {from}",
                        self.rank
                    )))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::Transport(format!("rank {from} hung up")))
                }
            }
        }
    }

    /// Sends one tagged message; FIFO per (sender, receiver, tag).
    pub fn send(&mut self, to: usize, tag: u32, payload: &[u8]) -> Result<()> {
        self.check_peer(to)?;
        if tag & COLLECTIVE_BIT != 0 {
            return Err(Error::Transport("tag high bit is reserved".to_string()));
        }
        self.send_raw(to, tag, payload.to_vec())?;
        self.counters.messages_sent += 1;
        self.counters.bytes_sent += payload.len() as u64 + HEADER_BYTES;
        Ok(())
    }

    /// Blocking receive of the next message with this tag from `from`.
    pub fn recv(&mut self, from: usize, tag: u32) -> Result<Vec<u8>> {
        self.check_peer(from)?;
        let payload = self.recv_raw(from, tag)?;
        self.counters.messages_received += 1;
        self.counters.bytes_received += payload.len() as u64 + HEADER_BYTES;
        Ok(payload)
    }

    /// Element-wise mean across ranks, summed in rank order on rank 0 and
    /// broadcast back; every rank receives an identical result.
    pub fn allreduce_mean(&mut self, data: &[f64]) -> Result<Vec<f64>> {
        self.counters.allreduce_calls += 1;
        if self.world == 1 {
            return Ok(data.to_vec());
        }
        let tag = COLLECTIVE_BIT | 1;
        if self.rank == 0 {
            let mut acc = data.to_vec();
            for r in 1..self.world {
                let bytes = self.recv_raw(r, tag)?;
                let theirs = unpack_f64s(&bytes);
                if theirs.len() != acc.len() {
                    return Err(Error::Transport(format!(
                        "allreduce length mismatch: rank 0 has {}, rank {r} has {}",
                        acc.len(),
                        theirs.len()
                    )));
                }
                for (a, t) in acc.iter_mut().zip(theirs) {
                    *a += t;
                }
            }
            let inv = 1.0 / self.world as f64;
            for a in acc.iter_mut() {
                *a *= inv;
            }
            let bytes = pack_f64s(&acc);
            for r in 1..self.world {
                self.send_raw(r, tag, bytes.clone())?;
            }
            Ok(acc)
        } else {
            self.send_raw(0, tag, pack_f64s(data))?;
            Ok(unpack_f64s(&self.recv_raw(0, tag)?))
        }
    }

    /// Rank-ordered concatenation of every rank's block, identical on all
    /// ranks.
    pub fn all_gather(&mut self, data: &[u8]) -> Result<Vec<Vec<u8>>> {
        self.counters.allgather_calls += 1;
        if self.world == 1 {
            return Ok(vec![data.to_vec()]);
        }
        let tag = COLLECTIVE_BIT | 2;
        if self.rank == 0 {
            let mut blocks = vec![data.to_vec()];
            for r in 1..self.world {
                blocks.push(self.recv_raw(r, tag)?);
            }
            let mut packed = Vec::new();
            for b in &blocks {
                packed.extend_from_slice(&(b.len() as u64).to_le_bytes());
                packed.extend_from_slice(b);
            }
            for r in 1..self.world {
                self.send_raw(r, tag, packed.clone())?;
            }
            Ok(blocks)
        } else {
            self.send_raw(0, tag, data.to_vec())?;
            let packed = self.recv_raw(0, tag)?;
            let mut blocks = Vec::with_capacity(self.world);
            let mut pos = 0;
            while pos < packed.len() {
                let len = u64::from_le_bytes(packed[pos..pos + 8].try_into().unwrap()) as usize;
                pos += 8;
                blocks.push(packed[pos..pos + len].to_vec());
                pos += len;
            }
            Ok(blocks)
        }
    }

    /// Blocks until every rank arrives.
    pub fn barrier(&mut self) -> Result<()> {
        let tag = COLLECTIVE_BIT | 3;
        if self.world == 1 {
            return Ok(());
        }
        if self.rank == 0 {
            for r in 1..self.world {
                self.recv_raw(r, tag)?;
            }
            for r in 1..self.world {
                self.send_raw(r, tag, Vec::new())?;
            }
        } else {
            self.send_raw(0, tag, Vec::new())?;
            self.recv_raw(0, tag)?;
        }
        Ok(())
    }
}

pub fn pack_f64s(data: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * 8);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn unpack_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_rank_collectives_are_identities() {
        let mut world = spawn_world(1).unwrap();
        let ep = &mut world[0];
        assert_eq!(ep.allreduce_mean(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(ep.all_gather(b"A").unwrap(), vec![b"A".to_vec()]);
        ep.barrier().unwrap();
        assert_eq!(ep.counters.messages_sent, 0);
        assert_eq!(ep.counters.allreduce_calls, 1);
        assert_eq!(ep.counters.allgather_calls, 1);
    }

    #[test]
    fn four_ranks_reach_all_peers() {
        let world = spawn_world(4).unwrap();
        std::thread::scope(|s| {
            for mut ep in world {
                s.spawn(move || {
                    let me = ep.rank();
                    for peer in 0..4 {
                        if peer != me {
                            ep.send(peer, 7, &[me as u8]).unwrap();
                        }
                    }
                    for peer in 0..4 {
                        if peer != me {
                            assert_eq!(ep.recv(peer, 7).unwrap(), vec![peer as u8]);
                        }
                    }
                });
            }
        });
    }

    #[test]
    fn byte_accounting_is_exact() {
        let world = spawn_world(2).unwrap();
        let mut it = world.into_iter();
        let mut a = it.next().unwrap();
        let mut b = it.next().unwrap();
        std::thread::scope(|s| {
            s.spawn(move || {
                let payload = vec![0u8; 1024];
                a.send(1, 0, &payload).unwrap();
                assert_eq!(a.counters.bytes_sent, 1024 + HEADER_BYTES);
                assert_eq!(a.counters.messages_sent, 1);
                let back = a.recv(1, 1).unwrap();
                assert_eq!(back.len(), 1024);
                assert_eq!(a.counters.bytes_received, 1024 + HEADER_BYTES);
            });
            s.spawn(move || {
                let got = b.recv(0, 0).unwrap();
                b.send(0, 1, &got).unwrap();
            });
        });
    }

    #[test]
    fn interleaved_tags_keep_fifo_per_tag() {
        let world = spawn_world(2).unwrap();
        let mut it = world.into_iter();
        let mut a = it.next().unwrap();
        let mut b = it.next().unwrap();
        std::thread::scope(|s| {
            s.spawn(move || {
                a.send(1, 1, &[10]).unwrap();
                a.send(1, 2, &[20]).unwrap();
                a.send(1, 1, &[11]).unwrap();
                a.send(1, 2, &[21]).unwrap();
            });
            s.spawn(move || {
                // Receive tag 2 first, then tag 1; each stream stays FIFO.
                assert_eq!(b.recv(0, 2).unwrap(), vec![20]);
                assert_eq!(b.recv(0, 1).unwrap(), vec![10]);
                assert_eq!(b.recv(0, 2).unwrap(), vec![21]);
                assert_eq!(b.recv(0, 1).unwrap(), vec![11]);
            });
        });
    }

    #[test]
    fn self_send_rejected() {
        let mut world = spawn_world(2).unwrap();
        assert!(world[0].send(0, 0, &[1]).is_err());
        assert!(world[1].recv(1, 0).is_err());
    }

    #[test]
    fn allreduce_mean_small() {
        let world = spawn_world(2).unwrap();
        let vecs = [vec![1.0, 2.0], vec![3.0, 4.0]];
        std::thread::scope(|s| {
            for mut ep in world {
                let mine = vecs[ep.rank()].clone();
                s.spawn(move || {
                    let got = ep.allreduce_mean(&mine).unwrap();
                    assert_eq!(got, vec![2.0, 3.0]);
                    assert_eq!(ep.counters.allreduce_calls, 1);
                    // Collectives do not pollute point-to-point counters.
                    assert_eq!(ep.counters.messages_sent, 0);
                });
            }
        });
    }

    #[test]
    fn allreduce_matches_serial_mean_p8() {
        use rand::{Rng, SeedableRng};
        let p = 8;
        let n = 64;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let vecs: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut expect = vec![0.0; n];
        for v in &vecs {
            for (e, x) in expect.iter_mut().zip(v) {
                *e += x;
            }
        }
        for e in expect.iter_mut() {
            *e /= p as f64;
        }
        let world = spawn_world(p).unwrap();
        std::thread::scope(|s| {
            for mut ep in world {
                let mine = vecs[ep.rank()].clone();
                let expect = expect.clone();
                s.spawn(move || {
                    let got = ep.allreduce_mean(&mine).unwrap();
                    for (g, e) in got.iter().zip(&expect) {
                        assert!((g - e).abs() <= 1e-12);
                    }
                });
            }
        });
    }

    #[test]
    fn allgather_is_rank_ordered() {
        for p in [1usize, 2, 9] {
            let world = spawn_world(p).unwrap();
            std::thread::scope(|s| {
                for mut ep in world {
                    s.spawn(move || {
                        let block = vec![ep.rank() as u8; ep.rank() + 1];
                        let all = ep.all_gather(&block).unwrap();
                        assert_eq!(all.len(), ep.world());
                        for (r, b) in all.iter().enumerate() {
                            assert_eq!(b, &vec![r as u8; r + 1]);
                        }
                    });
                }
            });
        }
    }

    #[test]
    fn watchdog_converts_deadlock_to_error() {
        let world = spawn_world_with(2, Duration::from_millis(50)).unwrap();
        let mut it = world.into_iter();
        let mut a = it.next().unwrap();
        let _b = it.next().unwrap();
        let err = a.recv(1, 9).unwrap_err().to_string();
        assert!(err.contains("timed out"), "error was: {err}");
    }

    #[test]
    fn scripted_exchange_is_reproducible() {
        let run = || -> Vec<Vec<u8>> {
            let world = spawn_world(3).unwrap();
            let results: Vec<_> = std::thread::scope(|s| {
                let handles: Vec<_> = world
                    .into_iter()
                    .map(|mut ep| {
                        s.spawn(move || {
                            let me = ep.rank();
                            let next = (me + 1) % 3;
                            let prev = (me + 2) % 3;
                            ep.send(next, 0, &[me as u8, 42]).unwrap();
                            let got = ep.recv(prev, 0).unwrap();
                            let all = ep.all_gather(&got).unwrap();
                            all.concat()
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().unwrap()).collect()
            });
            results
        };
        assert_eq!(run(), run());
    }
}

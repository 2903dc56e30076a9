//! Topology: nodes, simplex links with bandwidth and propagation delay, and
//! static next-hop routing derived from the declared links.

mod queue;

use std::collections::VecDeque;
use std::fmt;

pub use queue::{droptail_admit, Admission, Discipline, DropReason, QueueState, RedParams, RedState};

use crate::error::SimError;
use crate::scheduler::Seconds;
use crate::traffic::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinkId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketKind {
    Tcp,
    Ack,
}

impl PacketKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PacketKind::Tcp => "tcp",
            PacketKind::Ack => "ack",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub uid: u64,
    pub flow_id: u32,
    pub src: NodeId,
    pub dst: NodeId,
    pub size: u32,
    /// Data: packet sequence number. Ack: next expected sequence number.
    pub seq: u64,
    pub kind: PacketKind,
    pub sent_at: Seconds,
    /// Send time of the data packet that triggered this ack (timestamp echo).
    pub ts_echo: Seconds,
}

/// Serialization time of `bytes` on a link of `bandwidth` bits/second.
pub fn tx_time(bytes: u32, bandwidth: f64) -> Seconds {
    bytes as f64 * 8.0 / bandwidth
}

/// Result of starting a transmission on an idle link.
#[derive(Debug, Clone, PartialEq)]
pub struct TxPlan {
    pub pkt: Packet,
    pub tx_done_at: Seconds,
    pub arrive_at: Seconds,
}

#[derive(Debug, Clone)]
pub struct Link {
    pub from: NodeId,
    pub to: NodeId,
    /// bits per second
    pub bandwidth: f64,
    /// propagation delay, seconds
    pub delay: Seconds,
    pub queue: QueueState,
    pub busy_until: Option<Seconds>,
}

impl Link {
    pub fn new(from: NodeId, to: NodeId, bandwidth: f64, delay: Seconds, queue: QueueState) -> Self {
        assert!(bandwidth > 0.0 && delay >= 0.0, "invalid link parameters");
        Self {
            from,
            to,
            bandwidth,
            delay,
            queue,
            busy_until: None,
        }
    }

    pub fn is_idle(&self) -> bool {
        self.busy_until.is_none()
    }

    /// Offers `pkt` to the link's queue. A queued packet waits for
    /// [`Link::transmit_next`]; the caller starts transmission when the link is idle.
    pub fn enqueue(&mut self, pkt: Packet, now: Seconds, rng: &mut RngStream) -> Admission {
        self.queue.enqueue(pkt, now, rng)
    }

    /// Moves the head packet onto the wire. Returns `None` if the link is
    /// busy or the buffer is empty.
    pub fn transmit_next(&mut self, now: Seconds) -> Option<TxPlan> {
        if !self.is_idle() {
            return None;
        }
        let pkt = self.queue.dequeue(now)?;
        let tx_done_at = now + tx_time(pkt.size, self.bandwidth);
        self.busy_until = Some(tx_done_at);
        Some(TxPlan {
            arrive_at: tx_done_at + self.delay,
            tx_done_at,
            pkt,
        })
    }

    /// Marks the transmitter free again.
    pub fn tx_complete(&mut self) {
        self.busy_until = None;
    }
}

/// Links plus a static next-hop table.
#[derive(Debug, Clone)]
pub struct Topology {
    pub nodes: Vec<NodeId>,
    pub links: Vec<Link>,
    // next_hop[src_index][dst_index]
    next_hop: Vec<Vec<Option<LinkId>>>,
    index_of: Vec<Option<usize>>,
}

impl Topology {
    pub fn new(nodes: Vec<NodeId>, links: Vec<Link>) -> Self {
        let max_id = nodes.iter().map(|n| n.0 as usize).max().map_or(0, |m| m + 1);
        let mut index_of = vec![None; max_id];
        for (i, n) in nodes.iter().enumerate() {
            index_of[n.0 as usize] = Some(i);
        }
        let mut topo = Self {
            next_hop: vec![vec![None; nodes.len()]; nodes.len()],
            nodes,
            links,
            index_of,
        };
        topo.compute_routes();
        topo
    }

    fn idx(&self, n: NodeId) -> Option<usize> {
        self.index_of.get(n.0 as usize).copied().flatten()
    }

    // BFS from every node over declared links; ties resolve by link declaration order.
    fn compute_routes(&mut self) {
        let n = self.nodes.len();
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (li, l) in self.links.iter().enumerate() {
            if let (Some(a), Some(_)) = (self.idx(l.from), self.idx(l.to)) {
                out[a].push(li);
            }
        }
        for s in 0..n {
            let mut first: Vec<Option<LinkId>> = vec![None; n];
            let mut seen = vec![false; n];
            seen[s] = true;
            let mut frontier = VecDeque::new();
            for &li in &out[s] {
                let t = self.idx(self.links[li].to).unwrap();
                if !seen[t] {
                    seen[t] = true;
                    first[t] = Some(LinkId(li));
                    frontier.push_back(t);
                }
            }
            while let Some(u) = frontier.pop_front() {
                for &li in &out[u] {
                    let t = self.idx(self.links[li].to).unwrap();
                    if !seen[t] {
                        seen[t] = true;
                        first[t] = first[u];
                        frontier.push_back(t);
                    }
                }
            }
            self.next_hop[s] = first;
        }
    }

    pub fn next_hop(&self, at: NodeId, dst: NodeId) -> Result<LinkId, SimError> {
        self.idx(at)
            .zip(self.idx(dst))
            .and_then(|(a, d)| self.next_hop[a][d])
            .ok_or(SimError::NoRoute { from: at.0, to: dst.0 })
    }

    pub fn has_path(&self, from: NodeId, to: NodeId) -> bool {
        from == to || self.next_hop(from, to).is_ok()
    }

    /// The sequence of links a packet traverses from `from` to `to`.
    pub fn path(&self, from: NodeId, to: NodeId) -> Result<Vec<LinkId>, SimError> {
        let mut hops = Vec::new();
        let mut at = from;
        while at != to {
            let l = self.next_hop(at, to)?;
            hops.push(l);
            at = self.links[l.0].to;
            if hops.len() > self.links.len() {
                return Err(SimError::NoRoute { from: from.0, to: to.0 });
            }
        }
        Ok(hops)
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0]
    }

    pub fn link_mut(&mut self, id: LinkId) -> &mut Link {
        &mut self.links[id.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn pkt(uid: u64, size: u32) -> Packet {
        Packet {
            uid,
            flow_id: 1,
            src: NodeId(0),
            dst: NodeId(4),
            size,
            seq: uid,
            kind: PacketKind::Tcp,
            sent_at: 0.0,
            ts_echo: 0.0,
        }
    }

    fn droptail_link(bw: f64, delay: f64) -> Link {
        Link::new(NodeId(0), NodeId(3), bw, delay, QueueState::droptail(10))
    }

    #[test]
    fn serialization_time_at_100k() {
        assert!((tx_time(210, 100_000.0) - 0.0168).abs() < 1e-15);
    }

    #[test]
    fn arrival_includes_propagation_delay() {
        let mut l = droptail_link(1e6, 0.010);
        let mut rng = RngStream::new(1, 0);
        assert!(matches!(l.enqueue(pkt(0, 210), 0.5, &mut rng), Admission::Queued));
        let plan = l.transmit_next(0.5).unwrap();
        assert!((plan.tx_done_at - (0.5 + 0.00168)).abs() < 1e-12);
        assert!((plan.arrive_at - (0.5 + 0.00168 + 0.010)).abs() < 1e-12);
        assert!(!l.is_idle());
    }

    #[test]
    fn second_packet_waits_for_tx_complete() {
        let mut l = droptail_link(100_000.0, 0.0);
        let mut rng = RngStream::new(1, 0);
        l.enqueue(pkt(0, 210), 0.0, &mut rng);
        l.enqueue(pkt(1, 210), 0.0, &mut rng);
        let first = l.transmit_next(0.0).unwrap();
        assert!(l.transmit_next(0.001).is_none());
        l.tx_complete();
        let second = l.transmit_next(first.tx_done_at).unwrap();
        assert_eq!(second.pkt.uid, 1);
        assert!((second.tx_done_at - 2.0 * 0.0168).abs() < 1e-12);
    }

    fn five_node_topology() -> Topology {
        let nodes: Vec<_> = (0..5).map(NodeId).collect();
        let mut links = Vec::new();
        for s in 0..3 {
            links.push(Link::new(NodeId(s), NodeId(3), 2e6, 0.01, QueueState::droptail(10)));
            links.push(Link::new(NodeId(3), NodeId(s), 2e6, 0.01, QueueState::droptail(10)));
        }
        links.push(Link::new(NodeId(3), NodeId(4), 1e6, 0.02, QueueState::droptail(10)));
        links.push(Link::new(NodeId(4), NodeId(3), 1e6, 0.02, QueueState::droptail(10)));
        Topology::new(nodes, links)
    }

    #[test]
    fn static_routes_through_router() {
        let t = five_node_topology();
        let fwd = t.path(NodeId(1), NodeId(4)).unwrap();
        assert_eq!(fwd, vec![LinkId(2), LinkId(6)]);
        let rev = t.path(NodeId(4), NodeId(2)).unwrap();
        assert_eq!(rev, vec![LinkId(7), LinkId(5)]);
        assert!(t.has_path(NodeId(0), NodeId(1)));
    }

    #[test]
    fn missing_reverse_link_has_no_route() {
        let nodes = vec![NodeId(0), NodeId(1)];
        let links = vec![Link::new(NodeId(0), NodeId(1), 1e6, 0.0, QueueState::droptail(10))];
        let t = Topology::new(nodes, links);
        assert!(t.has_path(NodeId(0), NodeId(1)));
        assert!(matches!(
            t.next_hop(NodeId(1), NodeId(0)),
            Err(SimError::NoRoute { .. })
        ));
    }
}

//! Model exchange rules for the three collaboration strategies.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::index;
use rand::Rng;

use crate::error::Result;
use crate::forecaster::{average_params, ForecasterParams};

/// Server-side average weighted by each cloudlet's local node count.
pub fn fedavg(params: &[ForecasterParams], node_counts: &[usize]) -> Result<ForecasterParams> {
    let refs: Vec<&ForecasterParams> = params.iter().collect();
    let weights: Vec<f64> = node_counts.iter().map(|&n| n as f64).collect();
    average_params(&refs, &weights)
}

/// Every cloudlet averages its own pre-exchange parameters with those of its
/// neighbours, equal weights. All reads come from the snapshot `params`.
pub fn serverfree_exchange(
    params: &[ForecasterParams],
    adjacency: &[BTreeSet<usize>],
) -> Result<Vec<ForecasterParams>> {
    (0..params.len())
        .map(|c| {
            let group: Vec<&ForecasterParams> = std::iter::once(&params[c])
                .chain(adjacency[c].iter().map(|&n| &params[n]))
                .collect();
            average_params(&group, &vec![1.0; group.len()])
        })
        .collect()
}

/// Two-slot FIFO of received models.
#[derive(Debug, Clone, PartialEq)]
pub struct GossipBuffer {
    slots: VecDeque<ForecasterParams>,
}

impl GossipBuffer {
    pub const CAPACITY: usize = 2;

    pub fn new(initial: ForecasterParams) -> Self {
        let mut slots = VecDeque::with_capacity(Self::CAPACITY);
        slots.push_back(initial);
        Self { slots }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Insert, evicting the oldest model when full.
    pub fn push(&mut self, params: ForecasterParams) {
        if self.slots.len() == Self::CAPACITY {
            self.slots.pop_front();
        }
        self.slots.push_back(params);
    }

    /// Equal-weight average of the buffered models.
    pub fn average(&self) -> Result<ForecasterParams> {
        let refs: Vec<&ForecasterParams> = self.slots.iter().collect();
        average_params(&refs, &vec![1.0; refs.len()])
    }
}

/// `fanout` distinct peers other than `me`, uniformly over all cloudlets.
pub fn pick_peers<R: Rng + ?Sized>(rng: &mut R, me: usize, cloudlets: usize, fanout: usize) -> Vec<usize> {
    if cloudlets < 2 {
        return Vec::new();
    }
    let k = fanout.min(cloudlets - 1);
    index::sample(rng, cloudlets - 1, k)
        .into_iter()
        .map(|i| if i >= me { i + 1 } else { i })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecaster::ShapeTag;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p(v: &[f64]) -> ForecasterParams {
        let shape = ShapeTag {
            model: "t".into(),
            order: 1,
            lookback: 1,
            horizon: 1,
            len: v.len(),
        };
        ForecasterParams::from_flat(v.to_vec(), shape).unwrap()
    }

    #[test]
    fn fedavg_weights_by_node_count() {
        let g = fedavg(&[p(&[0.0, 4.0]), p(&[4.0, 0.0])], &[1, 3]).unwrap();
        assert_eq!(g.theta, vec![3.0, 1.0]);
        let same = fedavg(&[p(&[1.5]), p(&[1.5]), p(&[1.5])], &[2, 5, 1]).unwrap();
        assert_eq!(same.theta, vec![1.5]);
    }

    #[test]
    fn serverfree_midpoint_and_isolation() {
        let adj = vec![BTreeSet::from([1]), BTreeSet::from([0]), BTreeSet::new()];
        let out = serverfree_exchange(&[p(&[0.0]), p(&[2.0]), p(&[7.0])], &adj).unwrap();
        assert_eq!(out[0].theta, vec![1.0]);
        assert_eq!(out[1].theta, vec![1.0]);
        assert_eq!(out[2].theta, vec![7.0]);
    }

    #[test]
    fn gossip_buffer_fifo() {
        let mut b = GossipBuffer::new(p(&[1.0]));
        assert_eq!(b.average().unwrap().theta, vec![1.0]);
        b.push(p(&[3.0]));
        assert_eq!(b.average().unwrap().theta, vec![2.0]);
        b.push(p(&[5.0]));
        assert_eq!(b.len(), 2);
        assert_eq!(b.average().unwrap().theta, vec![4.0]);
    }

    #[test]
    fn peers_exclude_self() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let peers = pick_peers(&mut rng, 1, 4, 1);
            assert_eq!(peers.len(), 1);
            assert!(peers[0] != 1 && peers[0] < 4);
        }
        assert!(pick_peers(&mut rng, 0, 1, 1).is_empty());
        let mut all = pick_peers(&mut rng, 2, 3, 5);
        all.sort();
        assert_eq!(all, vec![0, 1]);
    }
}

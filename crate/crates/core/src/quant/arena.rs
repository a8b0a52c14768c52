use serde::{Deserialize, Serialize};

use super::QuantError;

/// A buffer of `size` bytes used from op step `first` through `last`
/// inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferRequest {
    pub size: usize,
    pub first: usize,
    pub last: usize,
}

impl BufferRequest {
    pub fn overlaps(&self, other: &BufferRequest) -> bool {
        self.first <= other.last && other.first <= self.last
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArenaPlan {
    pub total_bytes: usize,
    pub offsets: Vec<usize>,
    pub buffers: Vec<BufferRequest>,
}

impl ArenaPlan {
    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i] + self.buffers[i].size
    }

    /// Every pair of buffers alive at the same time occupies disjoint bytes,
    /// and everything fits in `total_bytes`.
    pub fn validate(&self) -> bool {
        let n = self.buffers.len();
        if self.offsets.len() != n {
            return false;
        }
        for i in 0..n {
            if self.range(i).end > self.total_bytes {
                return false;
            }
            for j in i + 1..n {
                let (a, b) = (self.range(i), self.range(j));
                let empty = a.is_empty() || b.is_empty();
                if !empty && self.buffers[i].overlaps(&self.buffers[j]) && a.start < b.end && b.start < a.end {
                    return false;
                }
            }
        }
        true
    }
}

/// Greedy placement: largest buffers first, each at the lowest offset that
/// clears every already placed buffer with an overlapping lifetime.
pub fn plan_buffers(requests: &[BufferRequest], budget: usize) -> Result<ArenaPlan, QuantError> {
    let mut order: Vec<usize> = (0..requests.len()).collect();
    order.sort_by(|&a, &b| requests[b].size.cmp(&requests[a].size).then(a.cmp(&b)));
    let mut offsets = vec![0usize; requests.len()];
    let mut placed: Vec<usize> = Vec::with_capacity(requests.len());
    let mut total = 0;
    for &i in &order {
        let mut busy: Vec<(usize, usize)> = placed
            .iter()
            .filter(|&&j| requests[j].overlaps(&requests[i]))
            .map(|&j| (offsets[j], offsets[j] + requests[j].size))
            .collect();
        busy.sort_unstable();
        let mut offset = 0;
        for (start, end) in busy {
            if offset + requests[i].size <= start {
                break;
            }
            offset = offset.max(end);
        }
        offsets[i] = offset;
        total = total.max(offset + requests[i].size);
        placed.push(i);
    }
    if total > budget {
        return Err(QuantError::BudgetExceeded {
            required: total,
            budget,
        });
    }
    Ok(ArenaPlan {
        total_bytes: total,
        offsets,
        buffers: requests.to_vec(),
    })
}

use crate::error::{Error, Result};

/// One truncated-BPTT block. `inputs[b]` and `targets[b]` are the `b`-th
/// parallel stream; targets are the inputs shifted one position ahead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub inputs: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
    /// Set on the first block of an epoch; carried state must be reset.
    pub epoch_start: bool,
}

impl Block {
    pub fn len(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self) -> usize {
        self.inputs.len()
    }

    /// Input ids of every stream at position `t`.
    pub fn inputs_at(&self, t: usize) -> Vec<usize> {
        self.inputs.iter().map(|s| s[t]).collect()
    }

    /// Targets in time-major order, `t·B + b`, matching stacked outputs.
    pub fn targets_time_major(&self) -> Vec<usize> {
        (0..self.len())
            .flat_map(|t| self.targets.iter().map(move |s| s[t]))
            .collect()
    }
}

/// The corpus cut into `batch` contiguous streams of `stream_len` ids each,
/// walked `bptt` positions at a time.
#[derive(Debug, Clone)]
pub struct BatchStream<'a> {
    ids: &'a [usize],
    batch: usize,
    bptt: usize,
    stream_len: usize,
    next: usize,
}

impl<'a> BatchStream<'a> {
    pub fn new(ids: &'a [usize], batch: usize, bptt: usize) -> Result<Self> {
        if batch == 0 || bptt == 0 {
            return Err(Error::config(format!(
                "batch size and bptt length must be positive, got {batch} and {bptt}"
            )));
        }
        if ids.len() < batch * (bptt + 1) {
            return Err(Error::Ingestion(format!(
                "corpus of {} tokens is too small for {batch} streams of {} positions",
                ids.len(),
                bptt + 1
            )));
        }
        Ok(BatchStream {
            ids,
            batch,
            bptt,
            stream_len: ids.len() / batch,
            next: 0,
        })
    }

    pub fn num_blocks(&self) -> usize {
        (self.stream_len - 1) / self.bptt
    }

    pub fn tokens_per_epoch(&self) -> usize {
        self.batch * self.bptt * self.num_blocks()
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Block;

    fn next(&mut self) -> Option<Block> {
        if self.next >= self.num_blocks() {
            return None;
        }
        let start = self.next * self.bptt;
        let mut inputs = Vec::with_capacity(self.batch);
        let mut targets = Vec::with_capacity(self.batch);
        for b in 0..self.batch {
            let base = b * self.stream_len + start;
            inputs.push(self.ids[base..base + self.bptt].to_vec());
            targets.push(self.ids[base + 1..base + self.bptt + 1].to_vec());
        }
        let block = Block {
            inputs,
            targets,
            epoch_start: self.next == 0,
        };
        self.next += 1;
        Some(block)
    }
}

pub fn batch_stream(ids: &[usize], batch: usize, bptt: usize) -> Result<BatchStream<'_>> {
    BatchStream::new(ids, batch, bptt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_block_layout() {
        let ids: Vec<usize> = (0..12).collect();
        let mut s = batch_stream(&ids, 2, 3).unwrap();
        let b = s.next().unwrap();
        assert_eq!(b.inputs, vec![vec![0, 1, 2], vec![6, 7, 8]]);
        assert_eq!(b.targets, vec![vec![1, 2, 3], vec![7, 8, 9]]);
        assert!(b.epoch_start);
        assert_eq!(b.targets_time_major(), vec![1, 7, 2, 8, 3, 9]);
        assert!(s.next().is_none());
    }

    #[test]
    fn too_small_is_ingestion_error() {
        let ids: Vec<usize> = (0..7).collect();
        assert!(matches!(batch_stream(&ids, 2, 3), Err(Error::Ingestion(_))));
    }

    proptest! {
        #[test]
        fn streams_reassemble(len in 8usize..400, batch in 1usize..6, bptt in 1usize..12) {
            prop_assume!(len >= batch * (bptt + 1));
            let ids: Vec<usize> = (0..len).collect();
            let stream = batch_stream(&ids, batch, bptt).unwrap();
            let per_epoch = stream.tokens_per_epoch();
            let blocks: Vec<Block> = stream.collect();
            prop_assert!(per_epoch <= len - batch);
            prop_assert_eq!(per_epoch, blocks.iter().map(|b| b.batch() * b.len()).sum::<usize>());
            let stream_len = len / batch;
            for b in 0..batch {
                let joined: Vec<usize> = blocks.iter().flat_map(|blk| blk.inputs[b].clone()).collect();
                let start = b * stream_len;
                prop_assert_eq!(&joined[..], &ids[start..start + joined.len()]);
                for blk in &blocks {
                    for t in 0..blk.len() {
                        prop_assert_eq!(blk.targets[b][t], blk.inputs[b][t] + 1);
                    }
                }
            }
            prop_assert!(blocks.iter().skip(1).all(|b| !b.epoch_start));
        }
    }
}

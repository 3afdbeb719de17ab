use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::Result;
use crate::record::Record;

pub(crate) type Source<'a> = Box<dyn Iterator<Item = Result<Record>> + Send + 'a>;

/// K-way merge of sorted sources. Sources are ranked by position, lowest
/// first = newest; for a key present in several sources only the newest
/// version is yielded.
pub(crate) struct MergeIter<'a> {
    sources: Vec<Source<'a>>,
    heap: BinaryHeap<Reverse<(Vec<u8>, usize)>>,
    heads: Vec<Option<Record>>,
    failed: bool,
}

impl<'a> MergeIter<'a> {
    pub fn new(sources: Vec<Source<'a>>) -> Result<Self> {
        let n = sources.len();
        let mut m = MergeIter {
            sources,
            heap: BinaryHeap::with_capacity(n),
            heads: vec![None; n],
            failed: false,
        };
        for i in 0..n {
            m.advance(i)?;
        }
        Ok(m)
    }

    fn advance(&mut self, i: usize) -> Result<()> {
        match self.sources[i].next() {
            Some(Ok(r)) => {
                self.heap.push(Reverse((r.key.clone(), i)));
                self.heads[i] = Some(r);
            }
            Some(Err(e)) => return Err(e),
            None => self.heads[i] = None,
        }
        Ok(())
    }

    fn pop(&mut self) -> Result<Option<Record>> {
        let Some(Reverse((key, i))) = self.heap.pop() else {
            return Ok(None);
        };
        let rec = self.heads[i].take().expect("heap entry has a head");
        self.advance(i)?;
        // Older versions of the same key sit right behind in the heap.
        while let Some(Reverse((k, _))) = self.heap.peek() {
            if *k != key {
                break;
            }
            let Reverse((_, j)) = self.heap.pop().unwrap();
            self.heads[j] = None;
            self.advance(j)?;
        }
        Ok(Some(rec))
    }
}

impl Iterator for MergeIter<'_> {
    type Item = Result<Record>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.pop() {
            Ok(r) => r.map(Ok),
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn src(items: &[(&str, &str)]) -> Source<'static> {
        let v: Vec<Result<Record>> = items
            .iter()
            .map(|(k, v)| {
                Ok(if v.is_empty() {
                    Record::tombstone(k.as_bytes().to_vec())
                } else {
                    Record::new(k.as_bytes().to_vec(), v.as_bytes().to_vec())
                })
            })
            .collect();
        Box::new(v.into_iter())
    }

    #[test]
    fn newest_version_wins() {
        let merged: Vec<Record> = MergeIter::new(vec![
            src(&[("b", "new"), ("d", "")]),
            src(&[("a", "old"), ("b", "old"), ("c", "old"), ("d", "old")]),
            src(&[("c", "oldest"), ("e", "x")]),
        ])
        .unwrap()
        .collect::<Result<_>>()
        .unwrap();
        let got: Vec<(String, String, bool)> = merged
            .iter()
            .map(|r| {
                (
                    String::from_utf8(r.key.clone()).unwrap(),
                    String::from_utf8(r.value.clone()).unwrap(),
                    r.tombstone,
                )
            })
            .collect();
        let want = [
            ("a", "old", false),
            ("b", "new", false),
            ("c", "old", false),
            ("d", "", true),
            ("e", "x", false),
        ];
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(want) {
            assert_eq!((g.0.as_str(), g.1.as_str(), g.2), w);
        }
    }
}

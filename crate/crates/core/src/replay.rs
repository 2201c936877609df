//! Bounded FIFO replay buffer with seeded uniform sampling.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::koopman::DataBatch;
use crate::numerics::Matrix;

pub const DEFAULT_CAPACITY: usize = 100_000;

/// One observed tuple `{x_t, u_t, c_t, x_{t+1}}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub cost: f64,
    pub x_next: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
    dims: Option<(usize, usize)>,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        ReplayBuffer::with_rng(capacity, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(capacity: usize, rng: ChaCha8Rng) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            items: VecDeque::new(),
            dims: None,
            rng,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Appends a transition, evicting the oldest once full.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        if !(t.cost >= 0.0) {
            return Err(Error::invalid(format!("stage cost {} must be >= 0", t.cost)));
        }
        if t.x.iter().chain(&t.u).chain(&t.x_next).any(|v| !v.is_finite()) {
            return Err(Error::invalid("transition has non-finite entries"));
        }
        check_len("successor state", t.x_next.len(), t.x.len())?;
        match self.dims {
            Some((n, m)) => {
                check_len("transition state", t.x.len(), n)?;
                check_len("transition input", t.u.len(), m)?;
            }
            None => self.dims = Some((t.x.len(), t.u.len())),
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        Ok(())
    }

    /// Draws `n_samples` distinct stored transitions uniformly at random.
    pub fn sample_batch(&mut self, n_samples: usize) -> Result<DataBatch> {
        if self.items.len() < n_samples || n_samples == 0 {
            return Err(Error::InsufficientData {
                available: self.items.len(),
                requested: n_samples,
            });
        }
        let picks = rand::seq::index::sample(&mut self.rng, self.items.len(), n_samples);
        let chosen: Vec<&Transition> = picks.iter().map(|i| &self.items[i]).collect();
        batch_from(&chosen)
    }
}

/// Column-wise assembly of transitions into a batch.
pub fn batch_from(ts: &[&Transition]) -> Result<DataBatch> {
    let first = ts.first().ok_or_else(|| Error::invalid("no transitions"))?;
    let (n, m) = (first.x.len(), first.u.len());
    let xs: Vec<&[f64]> = ts.iter().map(|t| t.x.as_slice()).collect();
    let us: Vec<&[f64]> = ts.iter().map(|t| t.u.as_slice()).collect();
    let xns: Vec<&[f64]> = ts.iter().map(|t| t.x_next.as_slice()).collect();
    DataBatch::new(
        Matrix::from_columns(n, &xs)?,
        Matrix::from_columns(n, &xns)?,
        Matrix::from_columns(m, &us)?,
        ts.iter().map(|t| t.cost).collect(),
    )
}

impl DataBatch {
    /// Splits the columns back into transitions.
    pub fn transitions(&self) -> Vec<Transition> {
        (0..self.len())
            .map(|j| Transition {
                x: self.states.column(j),
                u: self.inputs.column(j),
                cost: self.costs[j],
                x_next: self.next_states.column(j),
            })
            .collect()
    }
}

/// Writes transitions as comma-separated rows `x…, u…, cost, x_next…`
/// after a `# n=<n> m=<m>` header line.
pub fn write_dump<'a>(w: &mut impl Write, ts: impl IntoIterator<Item = &'a Transition>) -> Result<()> {
    let mut ts = ts.into_iter().peekable();
    let (n, m) = ts.peek().map_or((0, 0), |t| (t.x.len(), t.u.len()));
    writeln!(w, "# n={n} m={m}")?;
    for t in ts {
        let fields: Vec<String> = t
            .x
            .iter()
            .chain(&t.u)
            .chain(std::iter::once(&t.cost))
            .chain(&t.x_next)
            .map(|v| format!("{v:?}"))
            .collect();
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Parses a dump written by [`write_dump`]. Rows are numbered from 1,
/// counting the header.
pub fn read_dump(r: impl BufRead) -> Result<Vec<Transition>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::Parse { row: 1, msg: "empty dump".into() })?;
    let bad_header = || Error::Parse {
        row: 1,
        msg: format!("expected '# n=<n> m=<m>', got {header:?}"),
    };
    let mut dims = header.strip_prefix("# ").ok_or_else(bad_header)?.split(' ');
    let mut dim = |key: &str| -> Result<usize> {
        dims.next()
            .and_then(|f| f.strip_prefix(key))
            .and_then(|v| v.parse().ok())
            .ok_or_else(bad_header)
    };
    let n = dim("n=")?;
    let m = dim("m=")?;

    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse { row, msg: e.to_string() })?;
        if vals.len() != 2 * n + m + 1 {
            return Err(Error::Parse {
                row,
                msg: format!("{} fields, expected {}", vals.len(), 2 * n + m + 1),
            });
        }
        if vals.iter().any(|v| !v.is_finite()) || vals[n + m] < 0.0 {
            return Err(Error::Parse {
                row,
                msg: "non-finite value or negative cost".into(),
            });
        }
        out.push(Transition {
            x: vals[..n].to_vec(),
            u: vals[n..n + m].to_vec(),
            cost: vals[n + m],
            x_next: vals[n + m + 1..].to_vec(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(i: usize) -> Transition {
        Transition {
            x: vec![i as f64, 0.5],
            u: vec![-(i as f64)],
            cost: i as f64,
            x_next: vec![i as f64 + 1.0, 0.25],
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(3, 0);
        b.push(t(0)).unwrap();
        assert_eq!(b.len(), 1);
        for i in 1..4 {
            b.push(t(i)).unwrap();
        }
        assert_eq!(b.len(), 3);
        assert!(b.iter().all(|x| x.cost != 0.0));
        assert_eq!(b.iter().next().unwrap(), &t(1));
    }

    #[test]
    fn push_contract() {
        let mut b = ReplayBuffer::new(10, 0);
        b.push(t(1)).unwrap();
        let mut wrong = t(2);
        wrong.u.push(1.0);
        assert!(b.push(wrong).is_err());
        let mut neg = t(2);
        neg.cost = -1.0;
        assert!(b.push(neg).is_err());
        let mut nan = t(2);
        nan.x[0] = f64::NAN;
        assert!(b.push(nan).is_err());
    }

    #[test]
    fn exhaustive_draw_is_permutation() {
        let mut b = ReplayBuffer::new(10, 3);
        for i in 0..6 {
            b.push(t(i)).unwrap();
        }
        let batch = b.sample_batch(6).unwrap();
        let mut costs = batch.costs.clone();
        costs.sort_by(f64::total_cmp);
        assert_eq!(costs, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        // pairing preserved
        for tr in batch.transitions() {
            assert_eq!(tr, t(tr.cost as usize));
        }
        assert!(matches!(b.sample_batch(7), Err(Error::InsufficientData { available: 6, requested: 7 })));
    }

    #[test]
    fn sampling_is_deterministic() {
        let mut a = ReplayBuffer::new(100, 9);
        let mut b = ReplayBuffer::new(100, 9);
        for i in 0..50 {
            a.push(t(i)).unwrap();
            b.push(t(i)).unwrap();
        }
        for _ in 0..5 {
            assert_eq!(a.sample_batch(10).unwrap(), b.sample_batch(10).unwrap());
        }
    }

    #[test]
    fn single_draws_are_uniform() {
        let mut b = ReplayBuffer::new(4, 21);
        for i in 0..4 {
            b.push(t(i)).unwrap();
        }
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            counts[b.sample_batch(1).unwrap().costs[0] as usize] += 1;
        }
        for c in counts {
            let f = c as f64 / 10_000.0;
            assert!((0.22..=0.28).contains(&f), "{counts:?}");
        }
    }

    #[test]
    fn no_stale_reads_after_eviction() {
        let mut b = ReplayBuffer::new(5, 1);
        for i in 0..20 {
            b.push(t(i)).unwrap();
            if b.len() >= 3 {
                for c in b.sample_batch(3).unwrap().costs {
                    assert!(c as usize + 5 > i && c as usize <= i);
                }
            }
        }
    }

    #[test]
    fn dump_roundtrip_and_errors() {
        let ts: Vec<Transition> = (0..4).map(t).collect();
        let mut buf = Vec::new();
        write_dump(&mut buf, &ts).unwrap();
        assert_eq!(read_dump(buf.as_slice()).unwrap(), ts);

        let text = "# n=2 m=1\n1,2,3,4,5,6\n1,2,3\n";
        assert!(matches!(read_dump(text.as_bytes()), Err(Error::Parse { row: 3, .. })));
        let text = "# n=2 m=1\n1,2,x,4,5,6\n";
        assert!(matches!(read_dump(text.as_bytes()), Err(Error::Parse { row: 2, .. })));
        assert!(matches!(read_dump("n=2\n".as_bytes()), Err(Error::Parse { row: 1, .. })));
    }
}

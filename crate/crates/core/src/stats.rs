use rayon::prelude::*;

/// Running mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Moments {
    pub n: f64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0.0 {
            return;
        }
        if self.n == 0.0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n / n;
        self.m2 += other.m2 + d * d * self.n * other.n / n;
        self.n = n;
    }

    /// Standard deviation of the sample mean.
    pub fn std_of_mean(&self) -> f64 {
        if self.n < 2.0 {
            0.0
        } else {
            (self.m2 / (self.n - 1.0) / self.n).sqrt()
        }
    }
}

/// Items per work unit; fixed so the reduction order never depends on threads.
pub(crate) const CHUNK: usize = 256;

/// Maps fixed-size chunks of `0..count` in parallel and folds the partial
/// results left to right.
pub(crate) fn chunked_reduce<A, F, G>(count: usize, map: F, mut fold: G) -> Option<A>
where
    A: Send,
    F: Fn(std::ops::Range<usize>) -> A + Sync,
    G: FnMut(&mut A, A),
{
    let chunks = count.div_ceil(CHUNK);
    let parts: Vec<A> = (0..chunks)
        .into_par_iter()
        .map(|c| map(c * CHUNK..((c + 1) * CHUNK).min(count)))
        .collect();
    let mut iter = parts.into_iter();
    let mut acc = iter.next()?;
    for part in iter {
        fold(&mut acc, part);
    }
    Some(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.13).collect();
        let mut whole = Moments::default();
        xs.iter().for_each(|&x| whole.push(x));
        let merged = chunked_reduce(
            xs.len(),
            |r| {
                let mut m = Moments::default();
                xs[r].iter().for_each(|&x| m.push(x));
                m
            },
            |a, b| a.merge(&b),
        )
        .unwrap();
        assert!((whole.mean - merged.mean).abs() < 1e-12);
        assert!((whole.m2 - merged.m2).abs() < 1e-8);
    }

    #[test]
    fn constant_sample_has_zero_spread() {
        let mut m = Moments::default();
        for _ in 0..10 {
            m.push(2.5);
        }
        assert_eq!(m.std_of_mean(), 0.0);
    }
}

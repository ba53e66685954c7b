/// Packed strict upper triangle of an `n x n` symmetric matrix, row-major.
#[derive(Debug, Clone)]
pub(crate) struct Tri {
    n: usize,
    row_start: Vec<usize>,
}

impl Tri {
    pub fn new(n: usize) -> Self {
        let mut row_start = Vec::with_capacity(n);
        let mut acc = 0usize;
        for i in 0..n {
            row_start.push(acc);
            acc += n - i - 1;
        }
        Tri { n, row_start }
    }

    pub fn len(&self) -> usize {
        self.n * self.n.saturating_sub(1) / 2
    }

    /// Index of the unordered pair `{a, b}`, `a != b`.
    #[inline]
    pub fn idx(&self, a: usize, b: usize) -> usize {
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        self.row_start[i] + (j - i - 1)
    }

    /// Pairs in storage order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| (i + 1..self.n).map(move |j| (i, j)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packing_is_a_bijection() {
        for n in 0..7 {
            let t = Tri::new(n);
            let all: Vec<_> = t.pairs().collect();
            assert_eq!(all.len(), t.len());
            for (pos, &(i, j)) in all.iter().enumerate() {
                assert_eq!(t.idx(i, j), pos);
                assert_eq!(t.idx(j, i), pos);
            }
        }
    }
}

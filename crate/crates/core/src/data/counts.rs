//! Count-combination choice sets: each alternative is a vector of
//! per-mode frequencies with a fixed total (e.g. weekly trips by mode).

/// All non-negative integer tuples of length `modes` summing to `total`,
/// in lexicographic order.
pub fn enumerate_count_alternatives(total: u32, modes: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    if modes == 0 {
        return out;
    }
    let mut current = Vec::with_capacity(modes);
    fill(total, modes, &mut current, &mut out);
    out
}

fn fill(remaining: u32, modes: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if current.len() + 1 == modes {
        current.push(remaining);
        out.push(current.clone());
        current.pop();
        return;
    }
    for first in 0..=remaining {
        current.push(first);
        fill(remaining - first, modes, current, out);
        current.pop();
    }
}

/// `C(n, k)` in exact integer arithmetic.
pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_trips_three_modes_gives_21() {
        let alts = enumerate_count_alternatives(5, 3);
        assert_eq!(alts.len(), 21);
        assert_eq!(alts.first().unwrap(), &vec![0, 0, 5]);
        assert_eq!(alts.last().unwrap(), &vec![5, 0, 0]);
        assert!(alts.iter().all(|a| a.iter().sum::<u32>() == 5));
        assert!(alts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn degenerate_totals() {
        assert_eq!(enumerate_count_alternatives(0, 3), vec![vec![0, 0, 0]]);
        assert_eq!(
            enumerate_count_alternatives(1, 3),
            vec![vec![0, 0, 1], vec![0, 1, 0], vec![1, 0, 0]]
        );
        assert_eq!(enumerate_count_alternatives(4, 1), vec![vec![4]]);
    }

    #[test]
    fn sizes_match_stars_and_bars() {
        for total in 0..=10u32 {
            for modes in 1..=5usize {
                let n = enumerate_count_alternatives(total, modes).len() as u64;
                assert_eq!(n, binomial(total as u64 + modes as u64 - 1, modes as u64 - 1));
            }
        }
    }
}

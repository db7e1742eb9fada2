//! Up-set enumeration for small finite posets.

use crate::error::{Error, Result};

/// All up-sets (upward-closed subsets) of a poset on `0..len`, where
/// `greater(a, b)` means `a > b` strictly. `rank` must be a strictly monotone
/// function of the order (larger elements have larger rank). Each up-set is
/// returned as a membership vector. Fails once more than `cap` up-sets exist.
pub fn up_sets(
    len: usize,
    rank: impl Fn(usize) -> i64,
    greater: impl Fn(usize, usize) -> bool,
    cap: usize,
) -> Result<Vec<Vec<bool>>> {
    // Larger elements first, so every strict upper bound is decided earlier.
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(rank(i)), i));
    let above: Vec<Vec<usize>> = order
        .iter()
        .map(|&x| order.iter().copied().filter(|&y| greater(y, x)).collect())
        .collect();

    let mut out = Vec::new();
    let mut member = vec![false; len];
    extend(0, &order, &above, &mut member, &mut out, cap)?;
    Ok(out)
}

fn extend(
    pos: usize,
    order: &[usize],
    above: &[Vec<usize>],
    member: &mut Vec<bool>,
    out: &mut Vec<Vec<bool>>,
    cap: usize,
) -> Result<()> {
    if pos == order.len() {
        if out.len() >= cap {
            return Err(Error::CapExceeded {
                size: out.len() as u128 + 1,
                cap: cap as u128,
            });
        }
        out.push(member.clone());
        return Ok(());
    }
    let x = order[pos];
    extend(pos + 1, order, above, member, out, cap)?;
    if above[pos].iter().all(|&y| member[y]) {
        member[x] = true;
        extend(pos + 1, order, above, member, out, cap)?;
        member[x] = false;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boolean_lattice(m: usize) -> usize {
        let ge = |a: usize, b: usize| a != b && (a & b) == b;
        up_sets(1 << m, |i| i.count_ones() as i64, ge, 1 << 20)
            .unwrap()
            .len()
    }

    #[test]
    fn dedekind_numbers() {
        // Up-sets of the Boolean lattice 2^m are counted by Dedekind numbers.
        assert_eq!(boolean_lattice(0), 2);
        assert_eq!(boolean_lattice(1), 3);
        assert_eq!(boolean_lattice(2), 6);
        assert_eq!(boolean_lattice(3), 20);
        assert_eq!(boolean_lattice(4), 168);
    }

    #[test]
    fn chain_has_len_plus_one_up_sets() {
        let sets = up_sets(5, |i| i as i64, |a, b| a > b, 100).unwrap();
        assert_eq!(sets.len(), 6);
    }

    #[test]
    fn cap_is_enforced() {
        let r = up_sets(6, |_| 0, |_, _| false, 10);
        assert!(matches!(r, Err(Error::CapExceeded { .. })));
    }
}

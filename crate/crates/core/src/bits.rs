//! Small bit-twiddling helpers shared by the enumeration routines.

/// Mask with the given coordinates set.
pub(crate) fn mask_of(coords: &[usize]) -> u64 {
    coords.iter().fold(0u64, |m, &c| m | (1u64 << c))
}

/// Deposit bit `j` of `code` at coordinate `coords[j]`.
pub(crate) fn spread(code: u64, coords: &[usize]) -> u64 {
    let mut out = 0u64;
    for (j, &c) in coords.iter().enumerate() {
        if code >> j & 1 == 1 {
            out |= 1u64 << c;
        }
    }
    out
}

/// Inverse of [`spread`].
pub(crate) fn gather(bits: u64, coords: &[usize]) -> u64 {
    let mut out = 0u64;
    for (j, &c) in coords.iter().enumerate() {
        if bits >> c & 1 == 1 {
            out |= 1u64 << j;
        }
    }
    out
}

/// Like [`spread`], but `coords[0]` receives the most significant bit of the
/// `coords.len()`-bit code, so increasing codes walk assignments in
/// lexicographic order of the coordinate list.
pub(crate) fn spread_lex(code: u64, coords: &[usize]) -> u64 {
    let w = coords.len();
    let mut out = 0u64;
    for (j, &c) in coords.iter().enumerate() {
        if code >> (w - 1 - j) & 1 == 1 {
            out |= 1u64 << c;
        }
    }
    out
}

/// Inverse of [`spread_lex`].
#[cfg(test)]
pub(crate) fn gather_lex(bits: u64, coords: &[usize]) -> u64 {
    let w = coords.len();
    let mut out = 0u64;
    for (j, &c) in coords.iter().enumerate() {
        if bits >> c & 1 == 1 {
            out |= 1u64 << (w - 1 - j);
        }
    }
    out
}

/// Iterates all submasks of `mask` in increasing numeric order, starting at 0.
pub(crate) fn submasks(mask: u64) -> impl Iterator<Item = u64> {
    let mut next = Some(0u64);
    std::iter::from_fn(move || {
        let cur = next?;
        next = if cur == mask {
            None
        } else {
            Some((cur.wrapping_sub(mask)) & mask)
        };
        Some(cur)
    })
}

pub(crate) fn low_mask(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub(crate) fn combinations(n: usize, k: usize) -> impl Iterator<Item = Vec<usize>> {
    let mut cur: Option<Vec<usize>> = (k <= n).then(|| (0..k).collect());
    std::iter::from_fn(move || {
        let out = cur.clone()?;
        let c = cur.as_mut().unwrap();
        let mut i = k;
        loop {
            if i == 0 {
                cur = None;
                break;
            }
            i -= 1;
            if c[i] < n - k + i {
                c[i] += 1;
                for j in i + 1..k {
                    c[j] = c[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    })
}

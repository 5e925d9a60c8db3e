//! Unit-cost Levenshtein alignment between token sequences.

/// One step of an alignment, with indices into the source and target.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EditOp {
    Match { src: usize, tgt: usize },
    Substitute { src: usize, tgt: usize },
    Delete { src: usize },
    Insert { src: usize, tgt: usize },
}

impl EditOp {
    pub fn is_match(self) -> bool {
        matches!(self, EditOp::Match { .. })
    }
}

/// Minimal-cost alignment in left-to-right order. At each backtrace cell
/// the preference is match, then substitution, then deletion, then insertion.
pub fn align<S: PartialEq>(source: &[S], target: &[S]) -> Vec<EditOp> {
    let (n, m) = (source.len(), target.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let diag = d[(i - 1) * w + j - 1] + usize::from(source[i - 1] != target[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = diag.min(del).min(ins);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let diag = d[(i - 1) * w + j - 1];
            if source[i - 1] == target[j - 1] && here == diag {
                ops.push(EditOp::Match { src: i - 1, tgt: j - 1 });
                i -= 1;
                j -= 1;
                continue;
            }
            if source[i - 1] != target[j - 1] && here == diag + 1 {
                ops.push(EditOp::Substitute { src: i - 1, tgt: j - 1 });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            ops.push(EditOp::Delete { src: i - 1 });
            i -= 1;
        } else {
            ops.push(EditOp::Insert { src: i, tgt: j - 1 });
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

/// Unit-cost edit distance.
pub fn edit_distance<S: PartialEq>(source: &[S], target: &[S]) -> usize {
    align(source, target)
        .iter()
        .filter(|op| !op.is_match())
        .count()
}

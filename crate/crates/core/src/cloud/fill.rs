use super::GuidanceImage;
use crate::error::{Error, Result};
use crate::grid::{ClassMap, DepthMap};

/// Dense semantic/depth panorama obtained by copying, into every invalid
/// pixel, the values of its nearest valid pixel.
///
/// Distance is `sqrt(dy^2 + wrap(dx)^2)` where columns wrap around the seam
/// and rows do not. Ties resolve by smaller `dy`, then smaller wrapped `dx`,
/// then smaller source column, then smaller source row.
pub fn nn_fill(guide: &GuidanceImage) -> Result<(ClassMap, DepthMap)> {
    let (w, h) = (guide.valid.width(), guide.valid.height());
    // sorted valid columns per row
    let rows: Vec<Vec<usize>> = (0..h)
        .map(|y| (0..w).filter(|&x| *guide.valid.get(x, y)).collect())
        .collect();
    if rows.iter().all(Vec::is_empty) {
        return Err(Error::NoContext);
    }

    let mut sem = guide.sem.clone();
    let mut depth = guide.depth.clone();
    for y in 0..h {
        for x in 0..w {
            if *guide.valid.get(x, y) {
                continue;
            }
            let (sx, sy) = nearest_valid(&rows, w, h, x, y);
            sem.set(x, y, *guide.sem.get(sx, sy));
            depth.set(x, y, *guide.depth.get(sx, sy));
        }
    }
    Ok((sem, depth))
}

/// Ordering key of a candidate: (squared distance, dy, wrapped dx, x, y).
type Key = (usize, usize, usize, usize, usize);

fn nearest_valid(rows: &[Vec<usize>], w: usize, h: usize, x: usize, y: usize) -> (usize, usize) {
    let mut best: Option<Key> = None;
    for dy in 0..h {
        if let Some(b) = best {
            if dy * dy > b.0 {
                break;
            }
        }
        let mut consider = |row: usize| {
            if let Some((wdx, sx)) = nearest_in_row(&rows[row], w, x) {
                let key = (dy * dy + wdx * wdx, dy, wdx, sx, row);
                if best.is_none_or(|b| key < b) {
                    best = Some(key);
                }
            }
        };
        if y >= dy {
            consider(y - dy);
        }
        if dy > 0 && y + dy < h {
            consider(y + dy);
        }
    }
    let b = best.expect("at least one valid pixel exists");
    (b.3, b.4)
}

/// Smallest wrapped column distance from `x` to a valid column in a row,
/// with the smaller column index among equals.
fn nearest_in_row(cols: &[usize], w: usize, x: usize) -> Option<(usize, usize)> {
    if cols.is_empty() {
        return None;
    }
    let wrap = |c: usize| {
        let d = c.abs_diff(x);
        d.min(w - d)
    };
    let i = cols.partition_point(|&c| c < x);
    // candidates: neighbours around the insertion point plus both ends (seam)
    let candidates = [
        cols.get(i),
        i.checked_sub(1).and_then(|j| cols.get(j)),
        cols.first(),
        cols.last(),
    ];
    candidates
        .into_iter()
        .flatten()
        .map(|&c| (wrap(c), c))
        .min()
}

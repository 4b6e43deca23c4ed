use std::collections::VecDeque;
use std::ops::{Add, AddAssign};

use crate::error::{Error, Result};
use crate::maps::LabelMap;

/// Boundary match counts for one image at one threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MatchCounts {
    pub tp_pred: u64,
    pub total_pred: u64,
    pub tp_gt: u64,
    pub total_gt: u64,
}

impl MatchCounts {
    /// `1` when nothing was predicted.
    pub fn precision(&self) -> f64 {
        if self.total_pred == 0 {
            1.0
        } else {
            self.tp_pred as f64 / self.total_pred as f64
        }
    }

    /// `0` when there is no ground truth.
    pub fn recall(&self) -> f64 {
        if self.total_gt == 0 {
            0.0
        } else {
            self.tp_gt as f64 / self.total_gt as f64
        }
    }

    pub fn f_measure(&self) -> f64 {
        f_measure(self.precision(), self.recall())
    }
}

impl Add for MatchCounts {
    type Output = MatchCounts;

    fn add(self, o: MatchCounts) -> MatchCounts {
        MatchCounts {
            tp_pred: self.tp_pred + o.tp_pred,
            total_pred: self.total_pred + o.total_pred,
            tp_gt: self.tp_gt + o.tp_gt,
            total_gt: self.total_gt + o.total_gt,
        }
    }
}

impl AddAssign for MatchCounts {
    fn add_assign(&mut self, o: MatchCounts) {
        *self = *self + o;
    }
}

impl std::iter::Sum for MatchCounts {
    fn sum<I: Iterator<Item = MatchCounts>>(iter: I) -> Self {
        iter.fold(MatchCounts::default(), Add::add)
    }
}

/// Harmonic mean; `0` when both are zero.
pub fn f_measure(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Default matching radius: 0.75% of the image diagonal.
pub fn default_tolerance(width: usize, height: usize) -> f64 {
    0.0075 * ((width * width + height * height) as f64).sqrt()
}

/// Maximum bipartite matching (Hopcroft–Karp). `adj[u]` lists the right
/// vertices adjacent to left vertex `u`. Returns the partner of every left
/// vertex.
pub fn max_matching(adj: &[Vec<usize>], n_right: usize) -> Vec<Option<usize>> {
    const FREE: usize = usize::MAX;
    let n_left = adj.len();
    let mut match_l = vec![FREE; n_left];
    let mut match_r = vec![FREE; n_right];
    let mut dist = vec![0usize; n_left];
    loop {
        // BFS layering from free left vertices.
        let mut queue = VecDeque::new();
        for u in 0..n_left {
            if match_l[u] == FREE {
                dist[u] = 0;
                queue.push_back(u);
            } else {
                dist[u] = usize::MAX;
            }
        }
        let mut found = false;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                let m = match_r[v];
                if m == FREE {
                    found = true;
                } else if dist[m] == usize::MAX {
                    dist[m] = dist[u] + 1;
                    queue.push_back(m);
                }
            }
        }
        if !found {
            break;
        }
        // Layered DFS with an explicit stack of (vertex, next edge index).
        let mut next = vec![0usize; n_left];
        for root in 0..n_left {
            if match_l[root] != FREE {
                continue;
            }
            let mut stack = vec![root];
            while let Some(&u) = stack.last() {
                if next[u] == adj[u].len() {
                    dist[u] = usize::MAX;
                    stack.pop();
                    continue;
                }
                let v = adj[u][next[u]];
                next[u] += 1;
                let m = match_r[v];
                if m == FREE {
                    // Augment along the stack.
                    let mut v = v;
                    while let Some(u) = stack.pop() {
                        let prev = match_l[u];
                        match_l[u] = v;
                        match_r[v] = u;
                        v = prev;
                    }
                    break;
                } else if dist[m] == dist[u] + 1 {
                    stack.push(m);
                }
            }
        }
    }
    match_l.into_iter().map(|v| (v != FREE).then_some(v)).collect()
}

fn check_extents(pred: &LabelMap, gt: &LabelMap) -> Result<()> {
    if !gt.same_extent(pred.width(), pred.height()) {
        return Err(Error::shape(
            "correspond",
            format!("prediction {}x{} against ground truth {}x{}", pred.width(), pred.height(), gt.width(), gt.height()),
        ));
    }
    Ok(())
}

/// Which predicted pixels (in `pred.positions()` order) are matched, and the
/// matching size.
fn match_one(pred: &LabelMap, gt: &LabelMap, tolerance: f64) -> (Vec<bool>, u64) {
    let (w, h) = (gt.width(), gt.height());
    let mut gt_index = vec![usize::MAX; w * h];
    let mut n_gt = 0;
    for (x, y) in gt.positions() {
        gt_index[y * w + x] = n_gt;
        n_gt += 1;
    }
    let r = tolerance.floor() as isize;
    let t2 = tolerance * tolerance;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| ((dx * dx + dy * dy) as f64) <= t2)
        .collect();
    let adj: Vec<Vec<usize>> = pred
        .positions()
        .map(|(x, y)| {
            offsets
                .iter()
                .filter_map(|&(dx, dy)| {
                    let (gx, gy) = (x as isize + dx, y as isize + dy);
                    if gx < 0 || gy < 0 || gx >= w as isize || gy >= h as isize {
                        return None;
                    }
                    let j = gt_index[gy as usize * w + gx as usize];
                    (j != usize::MAX).then_some(j)
                })
                .collect()
        })
        .collect();
    let m = max_matching(&adj, n_gt);
    let matched: Vec<bool> = m.iter().map(Option::is_some).collect();
    let size = matched.iter().filter(|&&b| b).count() as u64;
    (matched, size)
}

/// One-to-one matching of predicted and ground-truth boundary pixels that
/// lie within `tolerance` pixels (Euclidean) of each other.
pub fn correspond(pred: &LabelMap, gt: &LabelMap, tolerance: f64) -> Result<MatchCounts> {
    correspond_multi(pred, std::slice::from_ref(gt), tolerance)
}

/// Matches against every annotator. A prediction is a true positive if any
/// annotator matches it; ground-truth counts add up over annotators.
pub fn correspond_multi(pred: &LabelMap, gts: &[LabelMap], tolerance: f64) -> Result<MatchCounts> {
    if gts.is_empty() {
        return Err(Error::invalid("correspond", "empty ground-truth set"));
    }
    if !(tolerance > 0.0) {
        return Err(Error::invalid("correspond", format!("tolerance {tolerance} must be positive")));
    }
    let total_pred = pred.count() as u64;
    let mut any = vec![false; total_pred as usize];
    let mut counts = MatchCounts { total_pred, ..Default::default() };
    for gt in gts {
        check_extents(pred, gt)?;
        let (matched, size) = match_one(pred, gt, tolerance);
        for (a, m) in any.iter_mut().zip(matched) {
            *a |= m;
        }
        counts.tp_gt += size;
        counts.total_gt += gt.count() as u64;
    }
    counts.tp_pred = any.iter().filter(|&&b| b).count() as u64;
    Ok(counts)
}

use rayon::prelude::*;

use super::binning::{BinnedMatrix, MISSING_BIN};
use super::model::{Node, Tree};
use super::GbdtConfig;

/// (residual sum, row count) per bin; the last slot holds missing values.
type Histogram = Vec<(f64, u32)>;

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    bin: usize,
    default_left: bool,
}

struct Leaf {
    node: usize,
    rows: Vec<u32>,
    hists: Vec<Histogram>,
    sum: f64,
    best: Option<Candidate>,
}

fn missing_slot(binned: &BinnedMatrix, f: usize) -> usize {
    binned.cuts[f].n_bins()
}

fn slot_of(bin: u8, missing: usize) -> usize {
    if bin == MISSING_BIN {
        missing
    } else {
        bin as usize
    }
}

fn build_hists(binned: &BinnedMatrix, residuals: &[f64], rows: &[u32]) -> Vec<Histogram> {
    (0..binned.columns.len())
        .into_par_iter()
        .map(|f| {
            let missing = missing_slot(binned, f);
            let col = &binned.columns[f];
            let mut h = vec![(0.0, 0u32); missing + 1];
            for &r in rows {
                let slot = &mut h[slot_of(col[r as usize], missing)];
                slot.0 += residuals[r as usize];
                slot.1 += 1;
            }
            h
        })
        .collect()
}

fn subtract(parent: &[Histogram], child: &[Histogram]) -> Vec<Histogram> {
    parent.iter().zip(child).map(|(p, c)| p.iter().zip(c).map(|(a, b)| (a.0 - b.0, a.1 - b.1)).collect()).collect()
}

fn best_split(hists: &[Histogram], sum: f64, count: u32, min_leaf: u32) -> Option<Candidate> {
    let parent_score = sum * sum / count as f64;
    let per_feature: Vec<Option<Candidate>> = hists
        .par_iter()
        .enumerate()
        .map(|(feature, h)| {
            let missing = h[h.len() - 1];
            let mut best: Option<Candidate> = None;
            let (mut ls, mut lc) = (0.0f64, 0u32);
            for (bin, &(s, c)) in h[..h.len() - 1].iter().enumerate() {
                ls += s;
                lc += c;
                for default_left in [false, true] {
                    let (sl, cl) = if default_left { (ls + missing.0, lc + missing.1) } else { (ls, lc) };
                    let (sr, cr) = (sum - sl, count - cl);
                    if cl < min_leaf || cr < min_leaf {
                        continue;
                    }
                    let gain = sl * sl / cl as f64 + sr * sr / cr as f64 - parent_score;
                    if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                        best = Some(Candidate { gain, feature, bin, default_left });
                    }
                }
            }
            best
        })
        .collect();
    per_feature.into_iter().flatten().fold(None, |acc: Option<Candidate>, c| match acc {
        Some(a) if a.gain >= c.gain => Some(a),
        _ => Some(c),
    })
}

fn goes_left(bin: u8, split_bin: usize, default_left: bool) -> bool {
    if bin == MISSING_BIN {
        default_left
    } else {
        bin as usize <= split_bin
    }
}

/// Grows one tree on the bagged rows and refits its leaves on all rows.
/// Returns the tree and its output for every training row.
pub(super) fn grow(binned: &BinnedMatrix, residuals: &[f64], bag: &[u32], config: &GbdtConfig) -> (Tree, Vec<f64>) {
    let min_leaf = config.min_samples_leaf as u32;
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    // Split bins alongside nodes, for routing binned rows.
    let mut split_bins: Vec<usize> = vec![0];

    let hists = build_hists(binned, residuals, bag);
    let sum: f64 = bag.iter().map(|&r| residuals[r as usize]).sum();
    let count = bag.len() as u32;
    let best = best_split(&hists, sum, count, min_leaf);
    let mut leaves = vec![Leaf { node: 0, rows: bag.to_vec(), hists, sum, best }];

    while leaves.len() < config.max_leaves {
        let pick = leaves.iter().enumerate().filter_map(|(i, l)| l.best.map(|b| (i, b.gain))).fold(
            None,
            |acc: Option<(usize, f64)>, (i, g)| match acc {
                Some((_, best)) if best >= g => acc,
                _ => Some((i, g)),
            },
        );
        let Some((idx, _)) = pick else { break };
        let leaf = leaves.swap_remove(idx);
        let split = leaf.best.expect("picked leaf has a split");
        let col = &binned.columns[split.feature];

        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) =
            leaf.rows.iter().partition(|&&r| goes_left(col[r as usize], split.bin, split.default_left));

        let (small, large_is_left) =
            if left_rows.len() <= right_rows.len() { (&left_rows, false) } else { (&right_rows, true) };
        let small_hists = build_hists(binned, residuals, small);
        let large_hists = subtract(&leaf.hists, &small_hists);
        let (left_hists, right_hists) =
            if large_is_left { (large_hists, small_hists) } else { (small_hists, large_hists) };

        let left_sum: f64 = left_rows.iter().map(|&r| residuals[r as usize]).sum();
        let right_sum = leaf.sum - left_sum;

        let left_node = nodes.len();
        nodes.push(Node::Leaf { value: 0.0 });
        nodes.push(Node::Leaf { value: 0.0 });
        split_bins.extend([0, 0]);
        let cuts = &binned.cuts[split.feature];
        let threshold = if split.bin < cuts.cuts.len() { cuts.threshold(split.bin) } else { f32::INFINITY };
        nodes[leaf.node] = Node::Split {
            feature: split.feature as u32,
            threshold,
            default_left: split.default_left,
            left: left_node as u32,
            right: left_node as u32 + 1,
        };
        split_bins[leaf.node] = split.bin;

        for (node, rows, hists, sum) in
            [(left_node, left_rows, left_hists, left_sum), (left_node + 1, right_rows, right_hists, right_sum)]
        {
            let count = rows.len() as u32;
            let best = best_split(&hists, sum, count, min_leaf);
            leaves.push(Leaf { node, rows, hists, sum, best });
        }
    }
    drop(leaves);

    // Route every training row and refit leaf values as mean residuals.
    let n = residuals.len();
    let mut row_leaf = vec![0u32; n];
    let mut stack = vec![(0usize, (0..n as u32).collect::<Vec<u32>>())];
    let mut leaf_sums = vec![(0.0f64, 0u32); nodes.len()];
    while let Some((node, rows)) = stack.pop() {
        match nodes[node] {
            Node::Leaf { .. } => {
                for &r in &rows {
                    row_leaf[r as usize] = node as u32;
                    leaf_sums[node].0 += residuals[r as usize];
                    leaf_sums[node].1 += 1;
                }
            }
            Node::Split { feature, default_left, left, right, .. } => {
                let col = &binned.columns[feature as usize];
                let bin = split_bins[node];
                let (l, r): (Vec<u32>, Vec<u32>) =
                    rows.iter().partition(|&&r| goes_left(col[r as usize], bin, default_left));
                stack.push((right as usize, r));
                stack.push((left as usize, l));
            }
        }
    }
    for (node, (s, c)) in nodes.iter_mut().zip(&leaf_sums) {
        if let Node::Leaf { value } = node {
            *value = if *c > 0 { s / *c as f64 } else { 0.0 };
        }
    }
    let outputs = row_leaf
        .iter()
        .map(|&l| match nodes[l as usize] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!("rows end at leaves"),
        })
        .collect();
    (Tree { nodes }, outputs)
}

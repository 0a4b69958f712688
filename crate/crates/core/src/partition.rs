//! Cluster tree over panel centroids and the block partition of the index
//! square into admissible (low-rank) and inadmissible (dense) rectangles.
//!
//! All index ranges refer to the permuted ordering produced by the cluster
//! tree, so every cluster is a contiguous slice.

use std::io::Write;
use std::ops::Range;

use crate::error::Result;
use crate::problem::{PanelMesh, Point3};

pub const DEFAULT_LEAF_SIZE: usize = 32;
pub const DEFAULT_ETA: f64 = 2.0;

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min: Point3,
    pub max: Point3,
}

impl BoundingBox {
    fn of<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Self {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in points {
            for ax in 0..3 {
                min[ax] = min[ax].min(p[ax]);
                max[ax] = max[ax].max(p[ax]);
            }
        }
        BoundingBox { min, max }
    }

    pub fn diameter(&self) -> f64 {
        (0..3)
            .map(|ax| (self.max[ax] - self.min[ax]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Euclidean distance between the boxes, 0 when they touch or overlap.
    pub fn distance(&self, other: &BoundingBox) -> f64 {
        (0..3)
            .map(|ax| {
                let gap = (self.min[ax] - other.max[ax])
                    .max(other.min[ax] - self.max[ax])
                    .max(0.0);
                gap * gap
            })
            .sum::<f64>()
            .sqrt()
    }

    fn longest_axis(&self) -> usize {
        let ext = [0, 1, 2].map(|ax| self.max[ax] - self.min[ax]);
        let mut best = 0;
        for ax in 1..3 {
            if ext[ax] > ext[best] {
                best = ax;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterNode {
    pub start: usize,
    pub end: usize,
    pub bbox: BoundingBox,
    pub children: Option<[usize; 2]>,
}

impl ClusterNode {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

/// Binary space partition of the panels. Node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTree {
    permutation: Vec<usize>,
    nodes: Vec<ClusterNode>,
    leaf_size: usize,
}

impl ClusterTree {
    /// `permutation[new] = original` panel index.
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn nodes(&self) -> &[ClusterNode] {
        &self.nodes
    }

    pub fn root(&self) -> &ClusterNode {
        &self.nodes[0]
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    pub fn leaves(&self) -> impl Iterator<Item = &ClusterNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }
}

/// Builds the tree by recursive median bisection along the longest box axis.
pub fn build_cluster_tree(mesh: &PanelMesh, leaf_size: usize) -> ClusterTree {
    let centroids: Vec<Point3> = mesh.panels().iter().map(|p| p.centroid).collect();
    cluster_points(&centroids, leaf_size)
}

pub fn cluster_points(points: &[Point3], leaf_size: usize) -> ClusterTree {
    assert!(leaf_size >= 1, "leaf size must be at least 1");
    assert!(!points.is_empty(), "cannot cluster an empty point set");
    let mut tree = ClusterTree {
        permutation: (0..points.len()).collect(),
        nodes: Vec::new(),
        leaf_size,
    };
    split(&mut tree, points, 0, points.len());
    tree
}

fn split(tree: &mut ClusterTree, points: &[Point3], start: usize, end: usize) -> usize {
    let bbox = BoundingBox::of(tree.permutation[start..end].iter().map(|&k| &points[k]));
    let id = tree.nodes.len();
    tree.nodes.push(ClusterNode {
        start,
        end,
        bbox,
        children: None,
    });
    if end - start <= tree.leaf_size {
        return id;
    }
    let axis = bbox.longest_axis();
    tree.permutation[start..end]
        .sort_by(|&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
    let mid = start + (end - start) / 2;
    let left = split(tree, points, start, mid);
    let right = split(tree, points, mid, end);
    tree.nodes[id].children = Some([left, right]);
    id
}

/// One rectangle `rows × cols` of the permuted index square.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Block {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
    pub admissible: bool,
}

impl Block {
    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.cols.len()
    }

    pub fn area(&self) -> usize {
        self.nrows() * self.ncols()
    }
}

/// Disjoint cover of `[0, N) × [0, N)` by blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPartition {
    n: usize,
    blocks: Vec<Block>,
}

impl BlockPartition {
    /// Wraps an explicit block list. No covering check is performed; use
    /// [`BlockPartition::covers_exactly`] to validate.
    pub fn from_blocks(n: usize, blocks: Vec<Block>) -> Self {
        BlockPartition { n, blocks }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn admissible_count(&self) -> usize {
        self.blocks.iter().filter(|b| b.admissible).count()
    }

    /// Sum of block areas; equals `N²` for a valid partition.
    pub fn covered_area(&self) -> u128 {
        self.blocks.iter().map(|b| b.area() as u128).sum()
    }

    /// Exhaustive check that every entry of the index square is covered by
    /// exactly one block. Memory is `N²` bits.
    pub fn covers_exactly(&self) -> bool {
        let n = self.n;
        let mut seen = vec![false; n * n];
        for b in &self.blocks {
            if b.rows.is_empty() || b.cols.is_empty() || b.rows.end > n || b.cols.end > n {
                return false;
            }
            for i in b.rows.clone() {
                for j in b.cols.clone() {
                    let cell = &mut seen[i * n + j];
                    if *cell {
                        return false;
                    }
                    *cell = true;
                }
            }
        }
        seen.into_iter().all(|c| c)
    }

    /// Writes `i_s i_e j_s j_e admissible`, one block per line.
    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<()> {
        for b in &self.blocks {
            writeln!(
                out,
                "{} {} {} {} {}",
                b.rows.start,
                b.rows.end,
                b.cols.start,
                b.cols.end,
                u8::from(b.admissible)
            )?;
        }
        Ok(())
    }
}

/// Admissible when the clusters are disjoint and the smaller one is at most
/// `eta` times their distance across.
pub fn is_admissible(s: &BoundingBox, t: &BoundingBox, eta: f64) -> bool {
    let dist = s.distance(t);
    dist > 0.0 && s.diameter().min(t.diameter()) <= eta * dist
}

/// Dual traversal of the cluster tree starting from (root, root).
pub fn build_block_partition(tree: &ClusterTree, eta: f64) -> BlockPartition {
    assert!(eta > 0.0, "eta must be positive");
    let mut blocks = Vec::new();
    let mut stack = vec![(0usize, 0usize)];
    while let Some((s, t)) = stack.pop() {
        let (ns, nt) = (&tree.nodes[s], &tree.nodes[t]);
        if is_admissible(&ns.bbox, &nt.bbox, eta) {
            blocks.push(Block {
                rows: ns.range(),
                cols: nt.range(),
                admissible: true,
            });
            continue;
        }
        match (ns.children, nt.children) {
            (None, None) => blocks.push(Block {
                rows: ns.range(),
                cols: nt.range(),
                admissible: false,
            }),
            (Some([a, b]), None) => stack.extend([(b, t), (a, t)]),
            (None, Some([c, d])) => stack.extend([(s, d), (s, c)]),
            (Some([a, b]), Some([c, d])) => stack.extend([(b, d), (b, c), (a, d), (a, c)]),
        }
    }
    BlockPartition {
        n: tree.len(),
        blocks,
    }
}

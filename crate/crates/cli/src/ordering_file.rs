//! Ordering export: one line per point, "point_index rank", both 1-based,
//! sorted by rank (the first line names the rank-1 point).

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use pointrank_core::sorter::Ordering;

pub fn save_ordering(ordering: &Ordering, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (rank0, point) in ordering.by_rank().iter().enumerate() {
        out.push_str(&format!("{} {}\n", point + 1, rank0 + 1));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Parse an ordering file back into 1-based ranks per point index.
pub fn load_ordering(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            bail!("{}: line {}: expected \"point_index rank\"", path.display(), lineno + 1);
        }
        let point: usize = fields[0]
            .parse()
            .map_err(|_| anyhow!("{}: line {}: bad point index", path.display(), lineno + 1))?;
        let rank: usize = fields[1]
            .parse()
            .map_err(|_| anyhow!("{}: line {}: bad rank", path.display(), lineno + 1))?;
        pairs.push((point, rank));
    }
    let n = pairs.len();
    let mut ranks = vec![0usize; n];
    for (point, rank) in pairs {
        if point == 0 || point > n || rank == 0 || rank > n {
            bail!("{}: point {point} / rank {rank} out of range for {n} lines", path.display());
        }
        if ranks[point - 1] != 0 {
            bail!("{}: point {point} listed twice", path.display());
        }
        ranks[point - 1] = rank;
    }
    Ok(ranks)
}

use std::ops::Range;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Contiguous partition of the covariate columns into K groups and the
/// response columns into J groups, in declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub covariate_sizes: Vec<usize>,
    pub response_sizes: Vec<usize>,
}

impl GroupSpec {
    pub fn new(covariate_sizes: Vec<usize>, response_sizes: Vec<usize>) -> Result<Self> {
        let spec = GroupSpec {
            covariate_sizes,
            response_sizes,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Equal-size groups; the last group absorbs any remainder.
    pub fn equal(p: usize, p_size: usize, q: usize, q_size: usize) -> Result<Self> {
        GroupSpec::new(equal_sizes(p, p_size)?, equal_sizes(q, q_size)?)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, sizes) in [("covariate", &self.covariate_sizes), ("response", &self.response_sizes)] {
            if sizes.is_empty() {
                return Err(Error::Config(format!("at least one {name} group is required")));
            }
            if let Some(g) = sizes.iter().position(|&s| s == 0) {
                return Err(Error::Config(format!("{name} group {} has size 0", g + 1)));
            }
        }
        Ok(())
    }

    /// Parses comma-separated sizes such as `"20,30,20"`.
    pub fn parse_sizes(text: &str) -> Result<Vec<usize>> {
        text.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| Error::Config(format!("invalid group size {s:?}")))
            })
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: GroupSpec = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid group spec JSON: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("group spec serializes")
    }

    pub fn num_covariate_groups(&self) -> usize {
        self.covariate_sizes.len()
    }

    pub fn num_response_groups(&self) -> usize {
        self.response_sizes.len()
    }

    pub fn total_covariates(&self) -> usize {
        self.covariate_sizes.iter().sum()
    }

    pub fn total_responses(&self) -> usize {
        self.response_sizes.iter().sum()
    }

    pub fn covariate_range(&self, k: usize) -> Range<usize> {
        range_of(&self.covariate_sizes, k)
    }

    pub fn response_range(&self, j: usize) -> Range<usize> {
        range_of(&self.response_sizes, j)
    }

    /// Response group that owns column `col`.
    pub fn response_group_of(&self, col: usize) -> Option<usize> {
        group_of(&self.response_sizes, col)
    }

    pub fn covariate_group_of(&self, col: usize) -> Option<usize> {
        group_of(&self.covariate_sizes, col)
    }

    /// Checks the partition against data with `p` covariates and `q` responses,
    /// naming the first group that does not fit.
    pub fn check_dims(&self, p: usize, q: usize) -> Result<()> {
        check_side("covariate", &self.covariate_sizes, p, "X")?;
        check_side("response", &self.response_sizes, q, "Y")
    }

    /// K×J pattern of blocks holding at least one nonzero coefficient.
    pub fn block_pattern(&self, b: ArrayView2<'_, f64>) -> Array2<bool> {
        let mut out = Array2::from_elem((self.num_covariate_groups(), self.num_response_groups()), false);
        for ((row, col), &v) in b.indexed_iter() {
            if v != 0.0 {
                if let (Some(k), Some(j)) = (self.covariate_group_of(row), self.response_group_of(col)) {
                    out[[k, j]] = true;
                }
            }
        }
        out
    }
}

fn equal_sizes(total: usize, size: usize) -> Result<Vec<usize>> {
    if size == 0 || total == 0 {
        return Err(Error::Config("group size and total must be positive".into()));
    }
    let mut sizes = vec![size; total / size];
    if !total.is_multiple_of(size) {
        sizes.push(total % size);
    }
    Ok(sizes)
}

fn range_of(sizes: &[usize], g: usize) -> Range<usize> {
    let start: usize = sizes[..g].iter().sum();
    start..start + sizes[g]
}

fn group_of(sizes: &[usize], col: usize) -> Option<usize> {
    let mut end = 0;
    for (g, &s) in sizes.iter().enumerate() {
        end += s;
        if col < end {
            return Some(g);
        }
    }
    None
}

fn check_side(name: &str, sizes: &[usize], cols: usize, matrix: &str) -> Result<()> {
    let mut end = 0;
    for (g, &s) in sizes.iter().enumerate() {
        let start = end;
        end += s;
        if end > cols {
            return Err(Error::Dimension(format!(
                "{name} group {} (columns {}-{}) extends past the {cols} columns of {matrix}",
                g + 1,
                start + 1,
                end
            )));
        }
    }
    if end < cols {
        return Err(Error::Dimension(format!(
            "{name} groups cover {end} columns but {matrix} has {cols}; columns {}-{cols} belong to no group",
            end + 1
        )));
    }
    Ok(())
}

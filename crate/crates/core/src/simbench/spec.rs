use serde::{Deserialize, Serialize};

use crate::blockmodel::GroupSpec;
use crate::error::{Error, Result};

/// How covariates and responses are partitioned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupSetting {
    /// Equal groups of `size`; a shorter trailing group takes any remainder.
    Equal { size: usize },
    /// Sizes cycle through `pattern`; the last group is truncated to fit.
    UnequalPattern { pattern: Vec<usize> },
    Explicit {
        covariate_sizes: Vec<usize>,
        response_sizes: Vec<usize>,
    },
}

impl GroupSetting {
    pub fn equal20() -> Self {
        GroupSetting::Equal { size: 20 }
    }

    /// Alternating 20, 30, 20, 30, ...
    pub fn unequal_pattern() -> Self {
        GroupSetting::UnequalPattern { pattern: vec![20, 30] }
    }

    pub fn group_spec(&self, p: usize, q: usize) -> Result<GroupSpec> {
        match self {
            GroupSetting::Equal { size } => GroupSpec::equal(p, *size, q, *size),
            GroupSetting::UnequalPattern { pattern } => {
                GroupSpec::new(cyclic_sizes(p, pattern)?, cyclic_sizes(q, pattern)?)
            }
            GroupSetting::Explicit {
                covariate_sizes,
                response_sizes,
            } => {
                let g = GroupSpec::new(covariate_sizes.clone(), response_sizes.clone())?;
                g.check_dims(p, q).map_err(|e| Error::Spec(e.to_string()))?;
                Ok(g)
            }
        }
    }
}

fn cyclic_sizes(total: usize, pattern: &[usize]) -> Result<Vec<usize>> {
    if pattern.is_empty() || pattern.contains(&0) {
        return Err(Error::Spec("group size pattern must be non-empty and positive".into()));
    }
    let mut sizes = Vec::new();
    let mut left = total;
    for &s in pattern.iter().cycle() {
        if left == 0 {
            break;
        }
        let s = s.min(left);
        sizes.push(s);
        left -= s;
    }
    Ok(sizes)
}

/// Number of active covariate blocks per response group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KjLaw {
    Fixed { k: usize },
    /// Drawn uniformly from `choices`, independently per response group.
    Random { choices: Vec<usize> },
}

/// Nonzero magnitudes uniform on `[-max, -min] ∪ [min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefLaw {
    pub min_abs: f64,
    pub max_abs: f64,
}

impl Default for CoefLaw {
    fn default() -> Self {
        CoefLaw {
            min_abs: 1.0,
            max_abs: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestSet {
    /// Extra rows drawn from the same law.
    Independent { rows: usize },
    /// The `n` rows are split; this fraction is held out for testing.
    TrainFraction { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSpec {
    /// Training rows.
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub groups: GroupSetting,
    pub kj_law: KjLaw,
    /// Percent of zero entries inside each active block.
    pub sparsity_level: f64,
    #[serde(default)]
    pub coef_law: CoefLaw,
    #[serde(default = "one")]
    pub noise_sd: f64,
    /// AR(1) correlation between adjacent covariates.
    #[serde(default = "half")]
    pub rho: f64,
    #[serde(default = "default_test")]
    pub test: TestSet,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn default_test() -> TestSet {
    TestSet::Independent { rows: 1000 }
}

impl SimulationSpec {
    /// n = 150, P = Q = 200, groups of 20, K_j uniform on {2, 3, 4}.
    pub fn standard(sparsity_level: f64) -> Self {
        SimulationSpec {
            n: 150,
            p: 200,
            q: 200,
            groups: GroupSetting::equal20(),
            kj_law: KjLaw::Random { choices: vec![2, 3, 4] },
            sparsity_level,
            coef_law: CoefLaw::default(),
            noise_sd: 1.0,
            rho: 0.5,
            test: default_test(),
            seed: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SimulationSpec =
            serde_json::from_str(text).map_err(|e| Error::Spec(format!("invalid simulation spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn group_spec(&self) -> Result<GroupSpec> {
        self.groups.group_spec(self.p, self.q)
    }

    /// Training and test row counts.
    pub fn row_split(&self) -> Result<(usize, usize)> {
        match self.test {
            TestSet::Independent { rows } => Ok((self.n, rows)),
            TestSet::TrainFraction { fraction } => {
                if !(fraction > 0.0 && fraction < 1.0) {
                    return Err(Error::Spec(format!("test fraction must lie in (0, 1), got {fraction}")));
                }
                let test = (self.n as f64 * fraction).round() as usize;
                Ok((self.n - test, test))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q == 0 {
            return Err(Error::Spec("P and Q must be positive".into()));
        }
        if !(0.0..100.0).contains(&self.sparsity_level) {
            return Err(Error::Spec(format!(
                "sparsity level must lie in [0, 100), got {}",
                self.sparsity_level
            )));
        }
        let law = self.coef_law;
        if !(law.min_abs > 0.0 && law.max_abs >= law.min_abs && law.max_abs.is_finite()) {
            return Err(Error::Spec("coefficient law needs 0 < min_abs <= max_abs".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Spec("noise_sd must be finite and non-negative".into()));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::Spec(format!("rho must lie in (-1, 1), got {}", self.rho)));
        }
        let (train, test) = self.row_split()?;
        if train < 4 || test == 0 {
            return Err(Error::Spec(format!("need >= 4 training rows and >= 1 test row, got {train} and {test}")));
        }
        let k = self.group_spec()?.num_covariate_groups();
        let max_kj = match &self.kj_law {
            KjLaw::Fixed { k } => *k,
            KjLaw::Random { choices } => {
                if choices.is_empty() {
                    return Err(Error::Spec("K_j choice set is empty".into()));
                }
                *choices.iter().max().unwrap()
            }
        };
        if max_kj > k {
            return Err(Error::Spec(format!("K_j = {max_kj} exceeds the {k} covariate groups")));
        }
        Ok(())
    }
}

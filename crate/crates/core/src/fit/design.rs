use crate::error::{Error, Result};

/// One categorical predictor with 0-based level codes.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalVar {
    pub name: String,
    pub levels: Vec<String>,
    codes: Vec<usize>,
    counts: Vec<usize>,
}

impl CategoricalVar {
    /// Every level in `levels` must be observed at least once.
    pub fn new(name: impl Into<String>, levels: Vec<String>, codes: Vec<usize>) -> Result<Self> {
        let name = name.into();
        let k = levels.len();
        let mut counts = vec![0usize; k];
        for &c in &codes {
            if c >= k {
                return Err(Error::invalid(format!("variable {name}: level code {c} out of range 0..{k}")));
            }
            counts[c] += 1;
        }
        if let Some(level) = counts.iter().position(|&c| c == 0) {
            return Err(Error::EmptyLevel { variable: name, level: levels[level].clone() });
        }
        Ok(Self { name, levels, codes, counts })
    }

    /// Levels named `0..k`.
    pub fn from_codes(name: impl Into<String>, codes: Vec<usize>, k: usize) -> Result<Self> {
        Self::new(name, (0..k).map(|l| l.to_string()).collect(), codes)
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn codes(&self) -> &[usize] {
        &self.codes
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }
}

/// Nesting of a child variable's levels inside a parent variable's levels.
#[derive(Clone, Debug, PartialEq)]
pub struct Hierarchy {
    pub parent: usize,
    pub child: usize,
    /// Child levels belonging to each parent level.
    pub groups: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    n: usize,
    vars: Vec<CategoricalVar>,
    continuous_names: Vec<String>,
    /// Centred continuous columns.
    z: Vec<Vec<f64>>,
    z_center: Vec<f64>,
    hierarchy: Option<Hierarchy>,
}

impl Design {
    /// Continuous columns are given raw and centred internally.
    pub fn new(vars: Vec<CategoricalVar>, continuous: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let n = vars
            .first()
            .map(|v| v.codes.len())
            .or_else(|| continuous.first().map(|c| c.1.len()))
            .ok_or_else(|| Error::invalid("design has no columns"))?;
        if n == 0 {
            return Err(Error::invalid("design has no rows"));
        }
        if let Some(v) = vars.iter().find(|v| v.codes.len() != n) {
            return Err(Error::invalid(format!("variable {} has {} rows, expected {n}", v.name, v.codes.len())));
        }
        let mut names = Vec::with_capacity(continuous.len());
        let mut z = Vec::with_capacity(continuous.len());
        let mut z_center = Vec::with_capacity(continuous.len());
        for (name, col) in continuous {
            if col.len() != n {
                return Err(Error::invalid(format!("column {name} has {} rows, expected {n}", col.len())));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("column {name}")));
            }
            let mean = col.iter().sum::<f64>() / n as f64;
            z.push(col.iter().map(|v| v - mean).collect());
            z_center.push(mean);
            names.push(name);
        }
        Ok(Self { n, vars, continuous_names: names, z, z_center, hierarchy: None })
    }

    /// Categorical variables only, levels named by index.
    pub fn from_codes(codes: Vec<Vec<usize>>) -> Result<Self> {
        let vars = codes
            .into_iter()
            .enumerate()
            .map(|(j, c)| {
                let k = c.iter().max().map_or(0, |m| m + 1);
                CategoricalVar::from_codes(format!("x{}", j + 1), c, k)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(vars, Vec::new())
    }

    /// Declares `child` as nested in `parent`. Every child level must occur
    /// with a single parent level.
    pub fn with_hierarchy(mut self, parent: usize, child: usize) -> Result<Self> {
        if parent >= self.vars.len() || child >= self.vars.len() || parent == child {
            return Err(Error::Hierarchy(format!("invalid variable pair ({parent}, {child})")));
        }
        let (pv, cv) = (&self.vars[parent], &self.vars[child]);
        let mut owner: Vec<Option<usize>> = vec![None; cv.n_levels()];
        for (&pc, &cc) in pv.codes.iter().zip(&cv.codes) {
            match owner[cc] {
                None => owner[cc] = Some(pc),
                Some(o) if o != pc => {
                    return Err(Error::Hierarchy(format!(
                        "level {} of {} occurs under both {} and {} of {}",
                        cv.levels[cc], cv.name, pv.levels[o], pv.levels[pc], pv.name
                    )))
                }
                Some(_) => {}
            }
        }
        let mut groups = vec![Vec::new(); pv.n_levels()];
        for (level, o) in owner.into_iter().enumerate() {
            groups[o.expect("every level is observed")].push(level);
        }
        self.hierarchy = Some(Hierarchy { parent, child, groups });
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn vars(&self) -> &[CategoricalVar] {
        &self.vars
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn n_continuous(&self) -> usize {
        self.z.len()
    }

    pub fn continuous_names(&self) -> &[String] {
        &self.continuous_names
    }

    /// Centred continuous column `l`.
    pub fn z(&self, l: usize) -> &[f64] {
        &self.z[l]
    }

    pub fn z_center(&self) -> &[f64] {
        &self.z_center
    }

    pub fn hierarchy(&self) -> Option<&Hierarchy> {
        self.hierarchy.as_ref()
    }

    pub fn total_levels(&self) -> usize {
        self.vars.iter().map(|v| v.n_levels()).sum()
    }

    /// Rows `rows` of the design. Levels absent from the subset are dropped;
    /// the returned maps send each original level to its new code.
    /// Continuous columns are re-centred on the subset.
    pub fn subset(&self, rows: &[usize]) -> Result<(Design, Vec<Vec<Option<usize>>>)> {
        let mut vars = Vec::with_capacity(self.vars.len());
        let mut maps = Vec::with_capacity(self.vars.len());
        for v in &self.vars {
            let mut map = vec![None; v.n_levels()];
            let mut levels = Vec::new();
            let mut codes = Vec::with_capacity(rows.len());
            for &r in rows {
                let old = v.codes[r];
                let new = *map[old].get_or_insert_with(|| {
                    levels.push(v.levels[old].clone());
                    levels.len() - 1
                });
                codes.push(new);
            }
            vars.push(CategoricalVar::new(v.name.clone(), levels, codes)?);
            maps.push(map);
        }
        let continuous = self
            .z
            .iter()
            .zip(&self.z_center)
            .zip(&self.continuous_names)
            .map(|((col, c), name)| (name.clone(), rows.iter().map(|&r| col[r] + c).collect()))
            .collect();
        let mut design = Design::new(vars, continuous)?;
        if let Some(h) = &self.hierarchy {
            design = design.with_hierarchy(h.parent, h.child)?;
        }
        Ok((design, maps))
    }

    /// Continuous columns with their original (uncentred) values.
    pub fn raw_continuous(&self) -> Vec<(String, Vec<f64>)> {
        self.z
            .iter()
            .zip(&self.z_center)
            .zip(&self.continuous_names)
            .map(|((col, c), name)| (name.clone(), col.iter().map(|v| v + c).collect()))
            .collect()
    }

    /// Design with every categorical level replaced by the code given in
    /// `relabel[j][old]`, which must be onto `0..new_k[j]`.
    pub fn relabel(&self, relabel: &[Vec<usize>], levels: Vec<Vec<String>>) -> Result<Design> {
        let vars = self
            .vars
            .iter()
            .zip(relabel)
            .zip(levels)
            .map(|((v, map), names)| {
                CategoricalVar::new(v.name.clone(), names, v.codes.iter().map(|&c| map[c]).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Design::new(vars, self.raw_continuous())
    }
}

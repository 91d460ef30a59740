//! Grid functions at one time ([`ScalarField`]) and on a uniform time mesh
//! ([`SpaceTimeField`]).

use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Profile, TorusGrid};

/// Tolerance on `h1 h2 sum(m) = 1` for fields tagged as densities.
pub const DENSITY_MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Arc<TorusGrid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<TorusGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "field has {} values, grid {} has {} nodes",
                values.len(),
                grid.describe(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite value at node {i}")));
        }
        Ok(ScalarField { grid, values })
    }

    /// Builds a field without the finiteness scan; callers guarantee the length.
    pub(crate) fn from_vec(grid: Arc<TorusGrid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        ScalarField { grid, values }
    }

    pub fn zeros(grid: Arc<TorusGrid>) -> Self {
        let n = grid.len();
        ScalarField::from_vec(grid, vec![0.0; n])
    }

    pub fn constant(grid: Arc<TorusGrid>, c: f64) -> Self {
        let n = grid.len();
        ScalarField::from_vec(grid, vec![c; n])
    }

    /// Samples `f(x1, x2)` at every node.
    pub fn from_fn(grid: Arc<TorusGrid>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|idx| {
                let (x1, x2) = grid.point(idx);
                f(x1, x2)
            })
            .collect();
        ScalarField::from_vec(grid, values)
    }

    /// Uniform probability density.
    pub fn uniform_density(grid: Arc<TorusGrid>) -> Self {
        ScalarField::constant(grid, 1.0)
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i1: usize, i2: usize) -> f64 {
        self.values[self.grid.index(i1, i2)]
    }

    /// `h1 h2 sum(f)`.
    pub fn integral(&self) -> f64 {
        self.grid.cell_area() * self.values.iter().sum::<f64>()
    }

    /// Discrete `L2` pairing `h1 h2 sum(f g)`.
    pub fn pairing(&self, other: &ScalarField) -> f64 {
        debug_assert!(self.grid.same_as(&other.grid));
        self.grid.cell_area()
            * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField::from_vec(
            self.grid.clone(),
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        debug_assert!(self.grid.same_as(&other.grid));
        ScalarField::from_vec(
            self.grid.clone(),
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn scaled(&self, s: f64) -> ScalarField {
        self.map(|v| s * v)
    }

    pub fn add(&self, other: &ScalarField) -> ScalarField {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> ScalarField {
        self.zip_map(other, |a, b| a - b)
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &ScalarField) -> ScalarField {
        self.zip_map(other, |a, b| a + s * b)
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Checks the density invariants: nonnegative values and unit mass.
    pub fn check_density(&self) -> Result<()> {
        if let Some(i) = self.values.iter().position(|&v| v < 0.0) {
            return Err(Error::NotADensity(format!(
                "negative value {} at node {i}",
                self.values[i]
            )));
        }
        let mass = self.integral();
        if (mass - 1.0).abs() > DENSITY_MASS_TOL {
            return Err(Error::NotADensity(format!("mass {mass:.15} differs from 1")));
        }
        Ok(())
    }

    /// Rescales a nonnegative field to unit mass.
    pub fn normalized_density(&self) -> Result<ScalarField> {
        if self.values.iter().any(|&v| v < 0.0) {
            return Err(Error::NotADensity("negative values".into()));
        }
        let mass = self.integral();
        if mass <= 0.0 {
            return Err(Error::NotADensity("zero mass".into()));
        }
        Ok(self.scaled(1.0 / mass))
    }

    /// Serializes as `# grid n1 n2 profile` followed by `i1,i2,value` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# grid {} {} {}",
            self.grid.n1(),
            self.grid.n2(),
            self.grid.profile()
        )?;
        for (idx, v) in self.values.iter().enumerate() {
            let (i1, i2) = self.grid.coords(idx);
            writeln!(w, "{i1},{i2},{}", fmt_f64(*v))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<ScalarField> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvalidInput("empty field file".into()))??;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 5 || parts[0] != "#" || parts[1] != "grid" {
            return Err(Error::InvalidInput(format!("bad header `{header}`")));
        }
        let parse_usize = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::InvalidInput(format!("bad size `{s}`")))
        };
        let n1 = parse_usize(parts[2])?;
        let n2 = parse_usize(parts[3])?;
        let profile: Profile = parts[4].parse()?;
        let grid = Arc::new(TorusGrid::new(n1, n2, profile)?);
        let mut values = vec![f64::NAN; grid.len()];
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(Error::InvalidInput(format!("bad row `{line}`")));
            }
            let i1 = parse_usize(cols[0])?;
            let i2 = parse_usize(cols[1])?;
            let v: f64 = cols[2]
                .trim()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad value in `{line}`")))?;
            if i1 >= n1 || i2 >= n2 {
                return Err(Error::InvalidInput(format!("node out of range in `{line}`")));
            }
            values[grid.index(i1, i2)] = v;
        }
        ScalarField::new(grid, values)
    }
}

/// Shortest round-trip formatting is not stable across languages; use a
/// fixed 17-significant-digit scientific form.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// One field per node of the uniform mesh `t0 + k (t_end - t0) / nt`, `k = 0..=nt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    t0: f64,
    t_end: f64,
    slices: Vec<ScalarField>,
}

impl SpaceTimeField {
    pub fn new(t0: f64, t_end: f64, slices: Vec<ScalarField>) -> Result<Self> {
        if slices.len() < 3 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 time steps, got {}",
                slices.len().saturating_sub(1)
            )));
        }
        if !(t_end > t0) {
            return Err(Error::InvalidInput(format!("empty time interval [{t0}, {t_end}]")));
        }
        let g = slices[0].grid().clone();
        for s in &slices[1..] {
            g.ensure_same(s.grid())?;
        }
        Ok(SpaceTimeField { t0, t_end, slices })
    }

    /// Time mesh of `nt` steps with every slice equal to `f`.
    pub fn constant_in_time(t0: f64, t_end: f64, nt: usize, f: &ScalarField) -> Result<Self> {
        SpaceTimeField::new(t0, t_end, vec![f.clone(); nt + 1])
    }

    pub fn zeros(grid: Arc<TorusGrid>, t0: f64, t_end: f64, nt: usize) -> Result<Self> {
        SpaceTimeField::constant_in_time(t0, t_end, nt, &ScalarField::zeros(grid))
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        self.slices[0].grid()
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn nt(&self) -> usize {
        self.slices.len() - 1
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.nt() as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt()
    }

    pub fn slice(&self, k: usize) -> &ScalarField {
        &self.slices[k]
    }

    pub fn slices(&self) -> &[ScalarField] {
        &self.slices
    }

    pub fn last(&self) -> &ScalarField {
        self.slices.last().expect("at least three slices")
    }

    pub fn into_slices(self) -> Vec<ScalarField> {
        self.slices
    }

    /// Same grid and same time mesh.
    pub fn same_mesh(&self, other: &SpaceTimeField) -> bool {
        self.grid().same_as(other.grid())
            && self.nt() == other.nt()
            && (self.t0 - other.t0).abs() < 1e-14
            && (self.t_end - other.t_end).abs() < 1e-14
    }

    pub fn ensure_same_mesh(&self, other: &SpaceTimeField) -> Result<()> {
        if self.same_mesh(other) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "mesh mismatch: [{}, {}] x {} steps on {} vs [{}, {}] x {} steps on {}",
                self.t0,
                self.t_end,
                self.nt(),
                self.grid().describe(),
                other.t0,
                other.t_end,
                other.nt(),
                other.grid().describe()
            )))
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.slices.iter().fold(0.0_f64, |m, s| m.max(s.sup_norm()))
    }

    pub fn max_abs_diff(&self, other: &SpaceTimeField) -> f64 {
        self.slices
            .iter()
            .zip(&other.slices)
            .fold(0.0_f64, |m, (a, b)| m.max(a.max_abs_diff(b)))
    }

    pub fn zip_map(&self, other: &SpaceTimeField, f: impl Fn(f64, f64) -> f64 + Copy) -> Self {
        SpaceTimeField {
            t0: self.t0,
            t_end: self.t_end,
            slices: self
                .slices
                .iter()
                .zip(&other.slices)
                .map(|(a, b)| a.zip_map(b, f))
                .collect(),
        }
    }

    pub fn map_slices(&self, f: impl Fn(&ScalarField) -> ScalarField) -> Self {
        SpaceTimeField {
            t0: self.t0,
            t_end: self.t_end,
            slices: self.slices.iter().map(f).collect(),
        }
    }

    /// Restriction to the slices `k..=nt`.
    pub fn tail_from(&self, k: usize) -> Result<SpaceTimeField> {
        SpaceTimeField::new(self.time(k), self.t_end, self.slices[k..].to_vec())
    }

    /// Writes one CSV per slice plus a `manifest.json` listing times and files.
    pub fn write_series(&self, dir: &std::path::Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.slices.len());
        for (k, s) in self.slices.iter().enumerate() {
            let name = format!("{stem}_{k:05}.csv");
            let file = std::fs::File::create(dir.join(&name))?;
            s.write_csv(std::io::BufWriter::new(file))?;
            entries.push(serde_json::json!({ "slice": k, "t": self.time(k), "file": name }));
        }
        let manifest = serde_json::json!({
            "field": stem,
            "t0": self.t0,
            "t_end": self.t_end,
            "nt": self.nt(),
            "grid": { "n1": self.grid().n1(), "n2": self.grid().n2(), "profile": self.grid().profile().name() },
            "slices": entries,
        });
        std::fs::write(
            dir.join(format!("{stem}_manifest.json")),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Arc<TorusGrid> {
        Arc::new(TorusGrid::new(8, 8, Profile::SinProfile).unwrap())
    }

    #[test]
    fn rejects_non_finite() {
        let mut v = vec![0.0; 64];
        v[5] = f64::NAN;
        assert!(ScalarField::new(grid(), v).is_err());
    }

    #[test]
    fn uniform_density_has_unit_mass() {
        let m = ScalarField::uniform_density(grid());
        m.check_density().unwrap();
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let f = ScalarField::from_fn(grid(), |x, y| (7.0 * x).sin() * y.exp() / 3.0);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# grid 8 8 SinProfile\n0,0,"));
        let g = ScalarField::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(f.values(), g.values());
    }

    #[test]
    fn space_time_needs_two_steps() {
        let f = ScalarField::zeros(grid());
        assert!(SpaceTimeField::new(0.0, 1.0, vec![f.clone(), f.clone()]).is_err());
        let st = SpaceTimeField::new(0.0, 1.0, vec![f.clone(), f.clone(), f]).unwrap();
        assert_eq!(st.nt(), 2);
        assert_eq!(st.time(1), 0.5);
    }
}

//! CSV ingestion, level dictionaries, and the JSON model file.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fit::{CategoricalVar, Coefficients, Design, Family};

/// Cells treated as missing.
pub const MISSING: [&str; 5] = ["", "NA", "na", "NaN", "null"];

fn is_missing(cell: &str) -> bool {
    MISSING.contains(&cell.trim())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColumnKind {
    Categorical,
    Continuous,
    Response,
}

/// Column typing instructions for [`read_csv`]. Columns not listed are
/// typed by inference (continuous if every present cell parses as a
/// number) unless `only_listed` is set, in which case they are ignored.
#[derive(Clone, Debug, Default)]
pub struct SchemaHints {
    pub response: String,
    pub categorical: Vec<String>,
    pub continuous: Vec<String>,
    pub only_listed: bool,
}

impl SchemaHints {
    pub fn new(response: impl Into<String>) -> Self {
        Self { response: response.into(), ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalColumn {
    pub name: String,
    /// Labels in order of first appearance; codes index into this.
    pub levels: Vec<String>,
    pub codes: Vec<usize>,
    /// Some level is observed only once.
    pub has_singleton: bool,
}

impl CategoricalColumn {
    fn from_cells(name: String, cells: Vec<String>) -> Self {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut levels = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        let codes = cells
            .into_iter()
            .map(|c| {
                let id = *index.entry(c.clone()).or_insert_with(|| {
                    levels.push(c);
                    counts.push(0);
                    levels.len() - 1
                });
                counts[id] += 1;
                id
            })
            .collect();
        let has_singleton = counts.contains(&1);
        Self { name, levels, codes, has_singleton }
    }
}

/// A parsed table: one response, categorical and continuous predictors,
/// columns kept in file order within each kind.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub response_name: String,
    pub response: Vec<f64>,
    pub categorical: Vec<CategoricalColumn>,
    pub continuous: Vec<(String, Vec<f64>)>,
    /// File order of all kept columns.
    pub columns: Vec<(String, ColumnKind)>,
    /// Rows removed because a used cell was missing.
    pub dropped_rows: usize,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn design(&self) -> Result<Design> {
        let vars = self
            .categorical
            .iter()
            .map(|c| CategoricalVar::new(c.name.clone(), c.levels.clone(), c.codes.clone()))
            .collect::<Result<Vec<_>>>()?;
        Design::new(vars, self.continuous.clone())
    }

    /// Names of categorical columns with a level observed once.
    pub fn singleton_flags(&self) -> Vec<&str> {
        self.categorical.iter().filter(|c| c.has_singleton).map(|c| c.name.as_str()).collect()
    }

    /// Writes the kept columns back out. Floats use the shortest
    /// representation that parses back to the same value.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.columns.iter().map(|(n, _)| n.as_str()))?;
        let cat: HashMap<&str, &CategoricalColumn> = self.categorical.iter().map(|c| (c.name.as_str(), c)).collect();
        let cont: HashMap<&str, &Vec<f64>> = self.continuous.iter().map(|(n, v)| (n.as_str(), v)).collect();
        for i in 0..self.n() {
            let row: Vec<String> = self
                .columns
                .iter()
                .map(|(name, kind)| match kind {
                    ColumnKind::Response => self.response[i].to_string(),
                    ColumnKind::Categorical => {
                        let c = cat[name.as_str()];
                        c.levels[c.codes[i]].clone()
                    }
                    ColumnKind::Continuous => cont[name.as_str()][i].to_string(),
                })
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Header and string cells of a CSV file.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn from_reader(r: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if header.is_empty() || header.iter().all(String::is_empty) {
            return Err(Error::Data("missing header row".into()));
        }
        let rows = rdr
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
        Ok(Self { header, rows })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        Self::from_reader(std::io::BufReader::new(f))
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub fn read_csv(path: impl AsRef<Path>, hints: &SchemaHints) -> Result<Dataset> {
    parse_table(&RawTable::from_path(path)?, hints)
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Types the columns of a raw table and drops incomplete rows.
pub fn parse_table(table: &RawTable, hints: &SchemaHints) -> Result<Dataset> {
    let response_col = table
        .column(&hints.response)
        .ok_or_else(|| Error::Data(format!("response column {:?} not found", hints.response)))?;
    for name in hints.categorical.iter().chain(&hints.continuous) {
        if table.column(name).is_none() {
            return Err(Error::Data(format!("column {name:?} not found")));
        }
        if *name == hints.response {
            return Err(Error::Data(format!("column {name:?} is the response")));
        }
    }
    if table.rows.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }

    let mut kinds: Vec<Option<ColumnKind>> = vec![None; table.header.len()];
    kinds[response_col] = Some(ColumnKind::Response);
    for (c, name) in table.header.iter().enumerate() {
        if c == response_col {
            continue;
        }
        kinds[c] = if hints.categorical.contains(name) {
            Some(ColumnKind::Categorical)
        } else if hints.continuous.contains(name) {
            Some(ColumnKind::Continuous)
        } else if hints.only_listed {
            None
        } else {
            let numeric = table
                .rows
                .iter()
                .filter_map(|r| r.get(c))
                .filter(|cell| !is_missing(cell))
                .all(|cell| parse_number(cell).is_some());
            Some(if numeric { ColumnKind::Continuous } else { ColumnKind::Categorical })
        };
    }
    let used: Vec<usize> = (0..kinds.len()).filter(|&c| kinds[c].is_some()).collect();

    let mut keep = Vec::new();
    for (i, row) in table.rows.iter().enumerate() {
        if row.len() != table.header.len() {
            return Err(Error::Data(format!("row {} has {} fields, expected {}", i + 2, row.len(), table.header.len())));
        }
        if used.iter().all(|&c| !is_missing(&row[c])) {
            keep.push(i);
        }
    }
    if keep.is_empty() {
        return Err(Error::Data("every row has a missing value".into()));
    }

    let numeric_column = |c: usize| -> Result<Vec<f64>> {
        keep.iter()
            .map(|&i| {
                let cell = &table.rows[i][c];
                parse_number(cell)
                    .ok_or_else(|| Error::Data(format!("row {}: {:?} in column {} is not a number", i + 2, cell, table.header[c])))
            })
            .collect()
    };

    let mut ds = Dataset {
        response_name: hints.response.clone(),
        response: numeric_column(response_col)?,
        categorical: Vec::new(),
        continuous: Vec::new(),
        columns: Vec::new(),
        dropped_rows: table.rows.len() - keep.len(),
    };
    for &c in &used {
        let name = table.header[c].clone();
        let kind = kinds[c].expect("used columns are typed");
        match kind {
            ColumnKind::Response => {}
            ColumnKind::Continuous => ds.continuous.push((name.clone(), numeric_column(c)?)),
            ColumnKind::Categorical => {
                let cells = keep.iter().map(|&i| table.rows[i][c].trim().to_string()).collect();
                ds.categorical.push(CategoricalColumn::from_cells(name.clone(), cells));
            }
        }
        ds.columns.push((name, kind));
    }
    Ok(ds)
}

pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelVariable {
    pub name: String,
    pub levels: Vec<String>,
    pub theta: Vec<f64>,
    /// Fused group of every level, numbered in increasing coefficient order.
    pub clusters: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelContinuous {
    pub name: String,
    pub beta: f64,
    pub center: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub objective: f64,
    pub sweeps: usize,
    pub converged: bool,
}

/// Everything needed to predict from a fit, in a stable text format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    /// SHA-256 of the response, family, variable names and level labels.
    pub fingerprint: String,
    pub family: Family,
    pub response: String,
    pub gamma: f64,
    pub lambda: f64,
    /// `(parent, child)` names for nested variables.
    pub hierarchy: Option<(String, String)>,
    pub intercept: f64,
    pub variables: Vec<ModelVariable>,
    pub continuous: Vec<ModelContinuous>,
    pub fit: FitInfo,
}

fn schema_fingerprint(response: &str, family: Family, vars: &[ModelVariable], cont: &[ModelContinuous]) -> String {
    let mut h = Sha256::new();
    let mut field = |s: &str| {
        h.update((s.len() as u64).to_le_bytes());
        h.update(s.as_bytes());
    };
    field(response);
    field(&family.to_string());
    for v in vars {
        field(&v.name);
        for l in &v.levels {
            field(l);
        }
    }
    for c in cont {
        field(&c.name);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Encoded prediction inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedRows {
    pub levels: Vec<Vec<Option<usize>>>,
    /// Raw continuous values per row.
    pub z: Vec<Vec<f64>>,
    /// Cells whose label was not seen in training.
    pub unseen: usize,
}

impl ModelFile {
    pub fn new(
        design: &Design,
        coef: &Coefficients,
        family: Family,
        response: impl Into<String>,
        gamma: f64,
        lambda: f64,
        fit: FitInfo,
    ) -> Self {
        let response = response.into();
        let variables: Vec<ModelVariable> = design
            .vars()
            .iter()
            .enumerate()
            .map(|(j, v)| ModelVariable {
                name: v.name.clone(),
                levels: v.levels.clone(),
                theta: coef.theta[j].clone(),
                clusters: coef.clusters(j),
            })
            .collect();
        let continuous: Vec<ModelContinuous> = design
            .continuous_names()
            .iter()
            .enumerate()
            .map(|(l, name)| ModelContinuous { name: name.clone(), beta: coef.beta[l], center: coef.z_center[l] })
            .collect();
        let hierarchy = design
            .hierarchy()
            .map(|h| (design.vars()[h.parent].name.clone(), design.vars()[h.child].name.clone()));
        Self {
            version: MODEL_VERSION,
            fingerprint: schema_fingerprint(&response, family, &variables, &continuous),
            family,
            response,
            gamma,
            lambda,
            hierarchy,
            intercept: coef.mu,
            variables,
            continuous,
            fit,
        }
    }

    pub fn coefficients(&self) -> Coefficients {
        Coefficients {
            mu: self.intercept,
            theta: self.variables.iter().map(|v| v.theta.clone()).collect(),
            beta: self.continuous.iter().map(|c| c.beta).collect(),
            z_center: self.continuous.iter().map(|c| c.center).collect(),
        }
    }

    fn check_finite(&self) -> Result<()> {
        let mut values = vec![self.gamma, self.lambda, self.intercept, self.fit.objective];
        values.extend(self.variables.iter().flat_map(|v| v.theta.iter().copied()));
        values.extend(self.continuous.iter().flat_map(|c| [c.beta, c.center]));
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model contains a non-finite value".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check_finite()?;
        let mut out = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedFloats::default());
        self.serialize(&mut ser)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let m: ModelFile = serde_json::from_slice(bytes)?;
        if m.version != MODEL_VERSION {
            return Err(Error::Model(format!("model file version {} (expected {MODEL_VERSION})", m.version)));
        }
        if m.fingerprint != schema_fingerprint(&m.response, m.family, &m.variables, &m.continuous) {
            return Err(Error::Model("fingerprint does not match the stored schema".into()));
        }
        if m.variables.iter().any(|v| v.theta.len() != v.levels.len() || v.clusters.len() != v.levels.len()) {
            return Err(Error::Model("coefficient and level counts differ".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Maps the predictor columns of `table` onto training codes. Every
    /// predictor column of the model must be present; the response is not
    /// needed.
    pub fn encode(&self, table: &RawTable) -> Result<EncodedRows> {
        let find = |name: &str| {
            table
                .column(name)
                .ok_or_else(|| Error::Model(format!("schema mismatch: column {name:?} missing from the data")))
        };
        let cat_cols = self.variables.iter().map(|v| find(&v.name)).collect::<Result<Vec<_>>>()?;
        let cont_cols = self.continuous.iter().map(|c| find(&c.name)).collect::<Result<Vec<_>>>()?;
        let dicts: Vec<HashMap<&str, usize>> = self
            .variables
            .iter()
            .map(|v| v.levels.iter().enumerate().map(|(k, l)| (l.as_str(), k)).collect())
            .collect();

        let mut out = EncodedRows { levels: Vec::new(), z: Vec::new(), unseen: 0 };
        for (i, row) in table.rows.iter().enumerate() {
            let mut levels = Vec::with_capacity(cat_cols.len());
            for (d, &c) in dicts.iter().zip(&cat_cols) {
                let code = d.get(row[c].trim()).copied();
                out.unseen += code.is_none() as usize;
                levels.push(code);
            }
            let z = cont_cols
                .iter()
                .map(|&c| {
                    parse_number(&row[c])
                        .ok_or_else(|| Error::Data(format!("row {}: column {} is not a number", i + 2, table.header[c])))
                })
                .collect::<Result<Vec<_>>>()?;
            out.levels.push(levels);
            out.z.push(z);
        }
        Ok(out)
    }
}

/// Pretty JSON with every float written as 17 significant digits.
#[derive(Default)]
struct FixedFloats<'a>(serde_json::ser::PrettyFormatter<'a>);

impl serde_json::ser::Formatter for FixedFloats<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> RawTable {
        RawTable::from_reader(text.as_bytes()).unwrap()
    }

    #[test]
    fn toy_first_appearance_ids() {
        let ds = parse_table(&table("y,g\n1.0,a\n2.0,b\n3.0,a\n"), &SchemaHints::new("y")).unwrap();
        assert_eq!(ds.categorical.len(), 1);
        let g = &ds.categorical[0];
        assert_eq!(g.levels, vec!["a", "b"]);
        assert_eq!(g.codes, vec![0, 1, 0]);
        assert!(g.has_singleton);
        assert_eq!(ds.singleton_flags(), vec!["g"]);
    }

    #[test]
    fn hints_take_precedence() {
        let t = table("y,code,x\n1,10,0.5\n2,20,1.5\n3,10,2.5\n");
        let inferred = parse_table(&t, &SchemaHints::new("y")).unwrap();
        assert_eq!(inferred.continuous.len(), 2);
        let hints = SchemaHints { categorical: vec!["code".into()], ..SchemaHints::new("y") };
        let ds = parse_table(&t, &hints).unwrap();
        assert_eq!(ds.categorical[0].levels, vec!["10", "20"]);
        assert_eq!(ds.continuous.len(), 1);
        let only = SchemaHints { only_listed: true, ..hints };
        assert!(parse_table(&t, &only).unwrap().continuous.is_empty());
    }

    #[test]
    fn missing_rows_dropped_and_errors() {
        let t = table("y,g,x\n1,a,0.1\nNA,b,0.2\n3,,0.3\n4,c,\n5,a,0.5\n");
        let ds = parse_table(&t, &SchemaHints::new("y")).unwrap();
        assert_eq!(ds.dropped_rows, 3);
        assert_eq!(ds.n(), 2);
        assert!(matches!(parse_table(&t, &SchemaHints::new("z")), Err(Error::Data(_))));
        assert!(matches!(parse_table(&table("y,g\n"), &SchemaHints::new("y")), Err(Error::Data(_))));
        assert!(matches!(parse_table(&table("y,g\nfoo,a\n"), &SchemaHints::new("y")), Err(Error::Data(_))));
    }

    #[test]
    fn dataset_csv_round_trip() {
        let t = table("g,y,x,h\n\"a,1\",0.1,3.25,u\nb,1e-300,-7,v\n\"a,1\",0.30000000000000004,2,u\n");
        let ds = parse_table(&t, &SchemaHints::new("y")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        ds.write_csv(&p).unwrap();
        let back = read_csv(&p, &SchemaHints::new("y")).unwrap();
        assert_eq!(back, ds);
        let q = dir.path().join("e.csv");
        back.write_csv(&q).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }

    fn toy_model() -> ModelFile {
        let ds = parse_table(&table("y,g,x\n1,a,0.5\n2,b,1\n3,a,2\n4,c,0.25\n"), &SchemaHints::new("y")).unwrap();
        let d = ds.design().unwrap();
        let mut c = Coefficients::zeros(&d, 2.5);
        c.theta[0] = vec![-1.0 / 3.0, 0.1, 1.0 / 7.0];
        c.beta[0] = std::f64::consts::PI;
        ModelFile::new(&d, &c, Family::Linear, "y", 8.0, 0.1, FitInfo { objective: 0.7, sweeps: 3, converged: true })
    }

    #[test]
    fn model_round_trip_is_byte_identical() {
        let m = toy_model();
        let bytes = m.to_bytes().unwrap();
        let back = ModelFile::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains("3.1415926535897931e0"));

        let d = Design::from_codes(vec![vec![0]]).unwrap();
        let mut empty = ModelFile::new(&d, &Coefficients::zeros(&d, 0.0), Family::Logistic, "y", 1.0, 0.0,
            FitInfo { objective: 0.0, sweeps: 0, converged: true });
        empty.variables.clear();
        empty.fingerprint = schema_fingerprint("y", Family::Logistic, &[], &[]);
        let b = empty.to_bytes().unwrap();
        assert_eq!(ModelFile::from_bytes(&b).unwrap().to_bytes().unwrap(), b);
    }

    #[test]
    fn model_errors() {
        let mut m = toy_model();
        m.variables[0].theta[1] = f64::NAN;
        assert!(matches!(m.to_bytes(), Err(Error::NonFinite(_))));

        let m = toy_model();
        let text = String::from_utf8(m.to_bytes().unwrap()).unwrap();
        let bumped = text.replacen("\"version\": 1", "\"version\": 2", 1);
        assert!(matches!(ModelFile::from_bytes(bumped.as_bytes()), Err(Error::Model(_))));
        let renamed = text.replacen("\"c\"", "\"d\"", 1);
        assert!(matches!(ModelFile::from_bytes(renamed.as_bytes()), Err(Error::Model(_))));
    }

    #[test]
    fn encoding_new_rows() {
        let m = toy_model();
        let e = m.encode(&table("x,g\n1,c\n2,zz\n3,a\n")).unwrap();
        assert_eq!(e.levels, vec![vec![Some(2)], vec![None], vec![Some(0)]]);
        assert_eq!(e.z, vec![vec![1.0], vec![2.0], vec![3.0]]);
        assert_eq!(e.unseen, 1);
        assert!(matches!(m.encode(&table("g\na\n")), Err(Error::Model(_))));
    }
}

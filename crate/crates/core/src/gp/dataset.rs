use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Human,
    Sim,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Human => "human",
            Source::Sim => "sim",
        })
    }
}

impl FromStr for Source {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "human" => Ok(Source::Human),
            "sim" => Ok(Source::Sim),
            other => Err(Error::Parse(format!("unknown comparison source `{other}`"))),
        }
    }
}

/// `winner` was preferred over `loser` (indices into the input table).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    pub winner: usize,
    pub loser: usize,
    pub source: Source,
}

/// Inputs and pairwise comparisons. Duplicate inputs are kept as separate rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDataset {
    dim: usize,
    inputs: Vec<Vec<f64>>,
    comparisons: Vec<Comparison>,
}

const INPUTS_SECTION: &str = "[inputs]";
const COMPARISONS_SECTION: &str = "[comparisons]";

impl PreferenceDataset {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            inputs: Vec::new(),
            comparisons: Vec::new(),
        }
    }

    pub fn from_parts(dim: usize, inputs: Vec<Vec<f64>>, comparisons: Vec<Comparison>) -> Result<Self> {
        let mut out = Self::new(dim);
        for x in inputs {
            out.add_input(x)?;
        }
        for c in comparisons {
            out.add_comparison(c.winner, c.loser, c.source)?;
        }
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn comparisons(&self) -> &[Comparison] {
        &self.comparisons
    }

    pub fn num_inputs(&self) -> usize {
        self.inputs.len()
    }

    pub fn num_comparisons(&self) -> usize {
        self.comparisons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comparisons.is_empty()
    }

    pub fn add_input(&mut self, x: Vec<f64>) -> Result<usize> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!("non-finite input {x:?}")));
        }
        self.inputs.push(x);
        Ok(self.inputs.len() - 1)
    }

    pub fn add_comparison(&mut self, winner: usize, loser: usize, source: Source) -> Result<()> {
        let n = self.inputs.len();
        for idx in [winner, loser] {
            if idx >= n {
                return Err(Error::IndexOutOfRange { index: idx, len: n });
            }
        }
        if winner == loser {
            return Err(Error::InvalidDataset(format!("comparison of input {winner} with itself")));
        }
        self.comparisons.push(Comparison {
            winner,
            loser,
            source,
        });
        Ok(())
    }

    /// Appends `a` and `b` as new inputs and one comparison oriented by
    /// `a_preferred`. Returns the indices of `a` and `b`.
    pub fn add_pair(&mut self, a: Vec<f64>, b: Vec<f64>, a_preferred: bool, source: Source) -> Result<(usize, usize)> {
        if a.len() != self.dim || b.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: if a.len() != self.dim { a.len() } else { b.len() },
            });
        }
        let ia = self.add_input(a)?;
        let ib = self.add_input(b)?;
        if a_preferred {
            self.add_comparison(ia, ib, source)?;
        } else {
            self.add_comparison(ib, ia, source)?;
        }
        Ok((ia, ib))
    }

    /// Sectioned CSV: an `[inputs]` table `index,xi_1..xi_d` followed by a
    /// `[comparisons]` table `preferred,other,source`.
    pub fn to_writer<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{INPUTS_SECTION}")?;
        let header: Vec<String> = std::iter::once("index".to_string())
            .chain((1..=self.dim).map(|d| format!("xi_{d}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (i, x) in self.inputs.iter().enumerate() {
            let row: Vec<String> = std::iter::once(i.to_string()).chain(x.iter().map(|v| v.to_string())).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        writeln!(w, "{COMPARISONS_SECTION}")?;
        writeln!(w, "preferred,other,source")?;
        for c in &self.comparisons {
            writeln!(w, "{},{},{}", c.winner, c.loser, c.source)?;
        }
        Ok(())
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let mut lines = Vec::new();
        for line in BufReader::new(r).lines() {
            let line = line?;
            let t = line.trim();
            if !t.is_empty() {
                lines.push(t.to_string());
            }
        }
        let split = lines
            .iter()
            .position(|l| l == COMPARISONS_SECTION)
            .ok_or_else(|| Error::Parse(format!("missing {COMPARISONS_SECTION} section")))?;
        if lines.first().map(String::as_str) != Some(INPUTS_SECTION) {
            return Err(Error::Parse(format!("dataset must start with {INPUTS_SECTION}")));
        }
        let input_lines = &lines[1..split];
        let comp_lines = &lines[split + 1..];

        let header = input_lines
            .first()
            .ok_or_else(|| Error::Parse("missing inputs header".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"index") || cols.len() < 2 {
            return Err(Error::Parse(format!("bad inputs header `{header}`")));
        }
        let dim = cols.len() - 1;
        let mut out = Self::new(dim);
        for (row, line) in input_lines[1..].iter().enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != dim + 1 {
                return Err(Error::Parse(format!("input row {row} has {} fields", fields.len())));
            }
            let idx: usize = fields[0].parse().map_err(|_| Error::Parse(format!("bad index `{}`", fields[0])))?;
            if idx != row {
                return Err(Error::Parse(format!("input indices must be 0..n in order, got {idx} at row {row}")));
            }
            let x = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{f}`"))))
                .collect::<Result<Vec<_>>>()?;
            out.add_input(x)?;
        }

        if comp_lines.first().map(String::as_str) != Some("preferred,other,source") {
            return Err(Error::Parse("comparisons header must be `preferred,other,source`".into()));
        }
        for line in &comp_lines[1..] {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::Parse(format!("bad comparison row `{line}`")));
            }
            let parse_idx = |f: &str| f.parse::<usize>().map_err(|_| Error::Parse(format!("bad index `{f}`")));
            out.add_comparison(parse_idx(fields[0])?, parse_idx(fields[1])?, fields[2].parse()?)?;
        }
        Ok(out)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.to_writer(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }
}

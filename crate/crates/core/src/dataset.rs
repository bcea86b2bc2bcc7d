//! Response-ranked observations with integer-coded covariate and group labels.
//!
//! Every statistic in this crate works on the ranks of the response only, so
//! a [`SlicedDataset`] stores the covariate `x` and the conditioning group `z`
//! already permuted into ascending response order, together with the tie
//! blocks (maximal runs of equal responses). Slice boundaries are only ever
//! placed between tie blocks.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

/// A categorical column encoded as dense indices `0..levels`, in original row
/// order. Labels are assigned in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Categorical {
    codes: Vec<u32>,
    labels: Vec<String>,
}

impl Categorical {
    pub fn from_labels<S: AsRef<str>>(values: &[S]) -> Result<Self> {
        let mut index: HashMap<&str, u32> = HashMap::new();
        let mut labels = Vec::new();
        let mut codes = Vec::with_capacity(values.len());
        for (row, v) in values.iter().enumerate() {
            let v = v.as_ref();
            if v.trim().is_empty() {
                return Err(Error::input(format!("missing categorical value at row {}", row + 1)));
            }
            let next = labels.len() as u32;
            let code = *index.entry(v).or_insert_with(|| {
                labels.push(v.to_string());
                next
            });
            codes.push(code);
        }
        Ok(Self { codes, labels })
    }

    /// Wraps codes that are already dense. Labels default to the decimal code.
    pub fn from_codes(codes: Vec<u32>, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::input("a categorical variable needs at least one level"));
        }
        if let Some(bad) = codes.iter().find(|&&c| c as usize >= levels) {
            return Err(Error::input(format!("code {bad} out of range for {levels} levels")));
        }
        let labels = (0..levels).map(|l| l.to_string()).collect();
        Ok(Self { codes, labels })
    }

    /// The constant single-level variable used for unconditional tests.
    pub fn constant(n: usize) -> Self {
        Self { codes: vec![0; n], labels: vec!["0".to_string()] }
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn levels(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Number of distinct levels that actually occur.
    pub fn observed_levels(&self) -> usize {
        let mut seen = vec![false; self.levels()];
        for &c in &self.codes {
            seen[c as usize] = true;
        }
        seen.into_iter().filter(|&s| s).count()
    }

    /// Joint configuration of several variables as one "super" variable.
    ///
    /// Uses the mixed-radix code of [`encode_super_variable`]; the label of a
    /// configuration joins the component labels with `:`.
    pub fn combine(parts: &[&Categorical]) -> Result<Self> {
        let views: Vec<(&[u32], usize)> = parts.iter().map(|p| (p.codes(), p.levels())).collect();
        let (codes, levels) = encode_super_variable(&views)?;
        let mut labels = Vec::with_capacity(levels);
        for code in 0..levels {
            let mut rest = code;
            let mut pieces = Vec::with_capacity(parts.len());
            for p in parts {
                pieces.push(p.labels[rest % p.levels()].as_str());
                rest /= p.levels();
            }
            labels.push(pieces.join(":"));
        }
        Ok(Self { codes, labels })
    }
}

/// Mixed-radix encoding `z = z1 + |Z1| z2 + |Z1||Z2| z3 + ...` of several
/// categorical variables observed on the same rows.
///
/// Returns the joint codes and the number of joint levels `prod |Zi|`.
pub fn encode_super_variable(parts: &[(&[u32], usize)]) -> Result<(Vec<u32>, usize)> {
    let Some(&(first, _)) = parts.first() else {
        return Err(Error::input("super-variable encoding needs at least one variable"));
    };
    let n = first.len();
    let mut levels: usize = 1;
    for &(codes, l) in parts {
        if codes.len() != n {
            return Err(Error::input(format!(
                "length mismatch in super-variable encoding: {} vs {n}",
                codes.len()
            )));
        }
        if l == 0 {
            return Err(Error::input("zero-level variable in super-variable encoding"));
        }
        if let Some(bad) = codes.iter().find(|&&c| c as usize >= l) {
            return Err(Error::input(format!("code {bad} out of range for {l} levels")));
        }
        levels = levels
            .checked_mul(l)
            .filter(|&v| v <= u32::MAX as usize)
            .ok_or_else(|| Error::capacity("super-variable has too many configurations"))?;
    }
    let mut out = vec![0u32; n];
    let mut radix: u32 = 1;
    for &(codes, l) in parts {
        for (o, &c) in out.iter_mut().zip(codes) {
            *o += c * radix;
        }
        radix = radix.wrapping_mul(l as u32);
    }
    Ok((out, levels))
}

/// Ascending order of a response column plus its tie structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranking {
    order: Vec<usize>,
    block_ends: Vec<usize>,
}

impl Ranking {
    pub fn from_response(y: &[f64]) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::input("no observations"));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite response at row {}", i + 1)));
        }
        let mut order: Vec<usize> = (0..y.len()).collect();
        // stable: ties keep row order
        order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
        let mut block_ends = Vec::new();
        for r in 1..order.len() {
            if y[order[r]] != y[order[r - 1]] {
                block_ends.push(r);
            }
        }
        block_ends.push(order.len());
        Ok(Self { order, block_ends })
    }

    /// A tie-free ranking of `n` observations already in response order.
    pub fn identity(n: usize) -> Self {
        Self { order: (0..n).collect(), block_ends: (1..=n).collect() }
    }

    pub fn n(&self) -> usize {
        self.order.len()
    }

    /// Row index of the observation at each rank.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Exclusive end rank of every tie block, ascending; the last entry is `n`.
    pub fn block_ends(&self) -> &[usize] {
        &self.block_ends
    }

    pub fn tie_blocks(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.block_ends
            .iter()
            .map(|&end| {
                let r = start..end;
                start = end;
                r
            })
            .collect()
    }

    /// Reorders a per-row column into rank order.
    pub fn gather<T: Copy>(&self, values: &[T]) -> Vec<T> {
        self.order.iter().map(|&i| values[i]).collect()
    }
}

/// Observations ranked by response with integer-coded `x` (tested covariate)
/// and `z` (conditioning group). `|Z| = 1` is the unconditional test.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicedDataset {
    x: Vec<u32>,
    x_levels: usize,
    z: Vec<u32>,
    z_levels: usize,
    ranking: Ranking,
    x_labels: Vec<String>,
    z_labels: Vec<String>,
}

impl SlicedDataset {
    /// Builds a dataset from per-row response values and categorical columns.
    pub fn new(y: &[f64], x: &Categorical, z: &Categorical) -> Result<Self> {
        if x.len() != y.len() || z.len() != y.len() {
            return Err(Error::input(format!(
                "column lengths differ: response {}, covariate {}, group {}",
                y.len(),
                x.len(),
                z.len()
            )));
        }
        let ranking = Ranking::from_response(y)?;
        Ok(Self {
            x: ranking.gather(x.codes()),
            x_levels: x.levels(),
            z: ranking.gather(z.codes()),
            z_levels: z.levels(),
            ranking,
            x_labels: x.labels().to_vec(),
            z_labels: z.labels().to_vec(),
        })
    }

    /// Convenience constructor from raw codes (row order).
    pub fn from_codes(
        y: &[f64],
        x: &[u32],
        x_levels: usize,
        z: Option<(&[u32], usize)>,
    ) -> Result<Self> {
        let x = Categorical::from_codes(x.to_vec(), x_levels)?;
        let z = match z {
            Some((codes, levels)) => Categorical::from_codes(codes.to_vec(), levels)?,
            None => Categorical::constant(y.len()),
        };
        Self::new(y, &x, &z)
    }

    /// Builds a dataset from columns that are already in rank order.
    pub fn from_ranked(
        ranking: Ranking,
        x: Vec<u32>,
        x_levels: usize,
        z: Vec<u32>,
        z_levels: usize,
    ) -> Result<Self> {
        let n = ranking.n();
        if x.len() != n || z.len() != n {
            return Err(Error::input("ranked columns must match the ranking length"));
        }
        if x_levels == 0 || z_levels == 0 {
            return Err(Error::input("levels must be positive"));
        }
        if x.iter().any(|&c| c as usize >= x_levels) || z.iter().any(|&c| c as usize >= z_levels) {
            return Err(Error::input("code out of range"));
        }
        Ok(Self {
            x,
            x_levels,
            z,
            z_levels,
            ranking,
            x_labels: (0..x_levels).map(|l| l.to_string()).collect(),
            z_labels: (0..z_levels).map(|l| l.to_string()).collect(),
        })
    }

    /// Same ranking and groups with a replacement covariate sequence (rank
    /// order). Used by the permutation layers.
    pub fn with_ranked_x(&self, x: Vec<u32>) -> Self {
        debug_assert_eq!(x.len(), self.n());
        Self { x, ..self.clone() }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn x(&self) -> &[u32] {
        &self.x
    }

    pub fn z(&self) -> &[u32] {
        &self.z
    }

    pub fn x_levels(&self) -> usize {
        self.x_levels
    }

    pub fn z_levels(&self) -> usize {
        self.z_levels
    }

    pub fn x_labels(&self) -> &[String] {
        &self.x_labels
    }

    pub fn z_labels(&self) -> &[String] {
        &self.z_labels
    }

    pub fn ranking(&self) -> &Ranking {
        &self.ranking
    }

    pub fn y_order(&self) -> &[usize] {
        self.ranking.order()
    }

    pub fn block_ends(&self) -> &[usize] {
        self.ranking.block_ends()
    }

    pub fn tie_blocks(&self) -> Vec<Range<usize>> {
        self.ranking.tie_blocks()
    }

    /// Count of each `(z, x)` configuration over the whole sample, z-major.
    pub fn cell_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.z_levels * self.x_levels];
        for (&x, &z) in self.x.iter().zip(&self.z) {
            counts[z as usize * self.x_levels + x as usize] += 1;
        }
        counts
    }

    /// Ranks belonging to each group `z = j`, ascending.
    pub fn group_positions(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.z_levels];
        for (r, &z) in self.z.iter().enumerate() {
            groups[z as usize].push(r);
        }
        groups
    }
}

/// Cumulative counts `cum[t][j][k]`: observations with rank `< t`, group `j`,
/// covariate level `k`. Row `t` runs over `0..=n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixCountTable {
    z_levels: usize,
    x_levels: usize,
    cum: Vec<u32>,
}

impl PrefixCountTable {
    pub fn new(d: &SlicedDataset) -> Self {
        Self::from_ranked(d.x(), d.x_levels(), d.z(), d.z_levels())
    }

    pub fn from_ranked(x: &[u32], x_levels: usize, z: &[u32], z_levels: usize) -> Self {
        let width = z_levels * x_levels;
        let n = x.len();
        let mut cum = vec![0u32; (n + 1) * width];
        for t in 0..n {
            let (prev, next) = cum.split_at_mut((t + 1) * width);
            let next = &mut next[..width];
            next.copy_from_slice(&prev[t * width..]);
            next[z[t] as usize * x_levels + x[t] as usize] += 1;
        }
        Self { z_levels, x_levels, cum }
    }

    pub fn n(&self) -> usize {
        self.cum.len() / self.width() - 1
    }

    pub fn z_levels(&self) -> usize {
        self.z_levels
    }

    pub fn x_levels(&self) -> usize {
        self.x_levels
    }

    pub(crate) fn data(&self) -> &[u32] {
        &self.cum
    }

    pub(crate) fn width(&self) -> usize {
        self.z_levels * self.x_levels
    }

    /// The `z`-major row of cumulative counts after the first `t` ranks.
    pub fn row(&self, t: usize) -> &[u32] {
        let w = self.width();
        &self.cum[t * w..(t + 1) * w]
    }

    pub fn get(&self, t: usize, j: usize, k: usize) -> u32 {
        self.row(t)[j * self.x_levels + k]
    }

    /// Count of `(z = j, x = k)` among ranks in the half-open range.
    pub fn segment(&self, ranks: Range<usize>, j: usize, k: usize) -> u32 {
        self.get(ranks.end, j, k) - self.get(ranks.start, j, k)
    }

    /// All `(j, k)` counts of a rank range, `z`-major.
    pub fn segment_counts(&self, ranks: Range<usize>) -> Vec<u32> {
        self.row(ranks.end).iter().zip(self.row(ranks.start)).map(|(a, b)| a - b).collect()
    }
}

/// Raw delimited text with a header row; every cell kept as a string.
#[derive(Debug, Clone)]
pub struct Table {
    headers: Vec<String>,
    columns: Vec<Vec<String>>,
}

impl Table {
    /// Reads a CSV/TSV file. Without an explicit delimiter, `.tsv` and `.tab`
    /// files are tab separated and everything else is comma separated.
    pub fn read_path(path: impl AsRef<Path>, delimiter: Option<u8>) -> Result<Self> {
        let path = path.as_ref();
        let delimiter = delimiter.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("tsv") || ext.eq_ignore_ascii_case("tab") => b'\t',
            _ => b',',
        });
        let file = std::fs::File::open(path)
            .map_err(|e| Error::input(format!("cannot open {}: {e}", path.display())))?;
        Self::from_reader(file, delimiter)
    }

    pub fn from_reader<R: std::io::Read>(reader: R, delimiter: u8) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().delimiter(delimiter).trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut columns = vec![Vec::new(); headers.len()];
        for record in rdr.records() {
            let record = record?;
            for (col, field) in columns.iter_mut().zip(record.iter()) {
                col.push(field.to_string());
            }
        }
        if columns.first().is_none_or(|c| c.is_empty()) {
            return Err(Error::input("table has no data rows"));
        }
        Ok(Self { headers, columns })
    }

    pub fn headers(&self) -> &[String] {
        &self.headers
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Result<&[String]> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::input(format!("missing column `{name}`")))
    }

    pub fn numeric(&self, name: &str) -> Result<Vec<f64>> {
        self.column(name)?
            .iter()
            .enumerate()
            .map(|(row, s)| {
                let v: f64 = s.parse().map_err(|_| {
                    Error::input(format!("column `{name}` row {}: `{s}` is not a number", row + 1))
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::input(format!("column `{name}` row {}: non-finite value", row + 1)))
                }
            })
            .collect()
    }

    pub fn categorical(&self, name: &str) -> Result<Categorical> {
        Categorical::from_labels(self.column(name)?)
            .map_err(|e| Error::input(format!("column `{name}`: {e}")))
    }
}

/// Ranks a table by its response column and super-encodes the covariate and
/// group columns. No group columns means the unconditional test.
pub fn load_table(
    table: &Table,
    response_col: &str,
    covariate_cols: &[&str],
    group_cols: &[&str],
) -> Result<SlicedDataset> {
    if covariate_cols.is_empty() {
        return Err(Error::input("at least one covariate column is required"));
    }
    let y = table.numeric(response_col)?;
    let covs = covariate_cols.iter().map(|c| table.categorical(c)).collect::<Result<Vec<_>>>()?;
    let groups = group_cols.iter().map(|c| table.categorical(c)).collect::<Result<Vec<_>>>()?;
    let x = if covs.len() == 1 { covs[0].clone() } else { Categorical::combine(&covs.iter().collect::<Vec<_>>())? };
    if x.observed_levels() < 2 {
        return Err(Error::degenerate(format!(
            "covariate {} has fewer than 2 distinct levels",
            covariate_cols.join(",")
        )));
    }
    let z = match groups.len() {
        0 => Categorical::constant(y.len()),
        1 => groups[0].clone(),
        _ => Categorical::combine(&groups.iter().collect::<Vec<_>>())?,
    };
    SlicedDataset::new(&y, &x, &z)
}

use super::{Result, WorkbookError, MAX_COLS, MAX_ROWS};

/// A1 notation for a 1-based (row, col) pair.
pub fn a1_ref(row: i64, col: i64) -> Result<String> {
    if row < 1 || col < 1 {
        return Err(WorkbookError::InvalidCoordinate { row, col });
    }
    Ok(format!("{}{}", column_letters(col as u64), row))
}

pub(crate) fn a1(row: u32, col: u32) -> String {
    format!("{}{}", column_letters(col as u64), row)
}

/// Bijective base-26 column name: 1 → `A`, 27 → `AA`.
pub fn column_letters(mut col: u64) -> String {
    let mut out = Vec::new();
    while col > 0 {
        let rem = ((col - 1) % 26) as u8;
        out.push(b'A' + rem);
        col = (col - 1) / 26;
    }
    out.reverse();
    String::from_utf8(out).unwrap()
}

/// Inverse of [`column_letters`], case-insensitive.
pub fn column_number(letters: &str) -> Option<u64> {
    if letters.is_empty() || letters.len() > 7 {
        return None;
    }
    letters.bytes().try_fold(0u64, |acc, b| {
        let b = b.to_ascii_uppercase();
        b.is_ascii_uppercase().then(|| acc * 26 + (b - b'A' + 1) as u64)
    })
}

/// Parses a single reference like `B7` or `$B$7` into (row, col).
pub fn parse_a1(s: &str) -> Result<(u32, u32)> {
    let bad = || WorkbookError::InvalidReference(s.to_string());
    let t = s.trim().replace('$', "");
    let split = t.find(|c: char| c.is_ascii_digit()).ok_or_else(bad)?;
    let (letters, digits) = t.split_at(split);
    let col = column_number(letters).ok_or_else(bad)?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
        return Err(bad());
    }
    let row: u64 = digits.parse().map_err(|_| bad())?;
    if row > MAX_ROWS as u64 || col > MAX_COLS as u64 {
        return Err(bad());
    }
    Ok((row as u32, col as u32))
}

/// Inclusive rectangular range, normalized so start ≤ end on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct CellRange {
    pub start_row: u32,
    pub start_col: u32,
    pub end_row: u32,
    pub end_col: u32,
}

impl CellRange {
    pub fn new(r1: u32, c1: u32, r2: u32, c2: u32) -> Self {
        CellRange {
            start_row: r1.min(r2),
            start_col: c1.min(c2),
            end_row: r1.max(r2),
            end_col: c1.max(c2),
        }
    }

    pub fn single(row: u32, col: u32) -> Self {
        Self::new(row, col, row, col)
    }

    pub fn rows(&self) -> u32 {
        self.end_row - self.start_row + 1
    }

    pub fn cols(&self) -> u32 {
        self.end_col - self.start_col + 1
    }

    pub fn contains(&self, row: u32, col: u32) -> bool {
        (self.start_row..=self.end_row).contains(&row) && (self.start_col..=self.end_col).contains(&col)
    }

    /// Row-major iteration over every coordinate.
    pub fn iter(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (self.start_row..=self.end_row)
            .flat_map(move |r| (self.start_col..=self.end_col).map(move |c| (r, c)))
    }
}

impl std::fmt::Display for CellRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}:{}",
            a1(self.start_row, self.start_col),
            a1(self.end_row, self.end_col)
        )
    }
}

/// A range with an optional sheet qualifier (`'P&L'!A1:B2`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RangeRef {
    pub sheet: Option<String>,
    pub range: CellRange,
}

/// Parses `A1`, `A1:C3` or a sheet-qualified form of either.
pub fn parse_range(s: &str) -> Result<RangeRef> {
    let s = s.trim();
    let (sheet, body) = match s.rfind('!') {
        Some(i) => {
            let name = &s[..i];
            let name = name
                .strip_prefix('\'')
                .and_then(|n| n.strip_suffix('\''))
                .map(|n| n.replace("''", "'"))
                .unwrap_or_else(|| name.to_string());
            (Some(name), &s[i + 1..])
        }
        None => (None, s),
    };
    let range = match body.split_once(':') {
        Some((a, b)) => {
            let (r1, c1) = parse_a1(a)?;
            let (r2, c2) = parse_a1(b)?;
            CellRange::new(r1, c1, r2, c2)
        }
        None => {
            let (r, c) = parse_a1(body)?;
            CellRange::single(r, c)
        }
    };
    Ok(RangeRef { sheet, range })
}

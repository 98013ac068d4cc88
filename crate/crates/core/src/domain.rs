//! Core vocabulary: season codes, size grid names, grids and planning groups.
//!
//! Season codes are three-digit fiscal half-years: the first two digits are
//! the year within the century, the last digit the half (1 = spring-summer,
//! 3 = fall-winter). Grids are addressed by index positions in their ordered
//! dimension lists, never by numeric size values, because waist sequences mix
//! step sizes.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Half {
    SpringSummer = 1,
    FallWinter = 3,
}

/// A fiscal half-year such as `193` (fall-winter 2019).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u16")]
pub struct SeasonCode {
    // Field order matters for the derived ordering: year first, then half.
    year_suffix: u8,
    half: Half,
}

impl SeasonCode {
    pub const MIN: SeasonCode = SeasonCode {
        year_suffix: 0,
        half: Half::SpringSummer,
    };

    pub const fn const_new(year_suffix: u8, half: Half) -> Option<Self> {
        if year_suffix > 99 {
            None
        } else {
            Some(SeasonCode { year_suffix, half })
        }
    }

    pub fn new(year_suffix: u8, half: Half) -> Result<Self> {
        if year_suffix > 99 {
            return Err(Error::MalformedSeason(
                year_suffix as i64 * 10 + half as i64,
            ));
        }
        Ok(SeasonCode { year_suffix, half })
    }

    pub fn year_suffix(self) -> u8 {
        self.year_suffix
    }

    pub fn half(self) -> Half {
        self.half
    }

    pub fn code(self) -> u16 {
        self.year_suffix as u16 * 10 + self.half as u16
    }

    /// The season immediately before this one. Wraps at the century.
    pub fn previous(self) -> SeasonCode {
        match self.half {
            Half::FallWinter => SeasonCode {
                year_suffix: self.year_suffix,
                half: Half::SpringSummer,
            },
            Half::SpringSummer => SeasonCode {
                year_suffix: (self.year_suffix + 99) % 100,
                half: Half::FallWinter,
            },
        }
    }

    pub fn next(self) -> SeasonCode {
        match self.half {
            Half::SpringSummer => SeasonCode {
                year_suffix: self.year_suffix,
                half: Half::FallWinter,
            },
            Half::FallWinter => SeasonCode {
                year_suffix: (self.year_suffix + 1) % 100,
                half: Half::SpringSummer,
            },
        }
    }

    /// Number of half-year steps from `earlier` to `self` (negative if `self` is earlier).
    pub fn steps_since(self, earlier: SeasonCode) -> i32 {
        self.ordinal() - earlier.ordinal()
    }

    fn ordinal(self) -> i32 {
        self.year_suffix as i32 * 2 + if self.half == Half::FallWinter { 1 } else { 0 }
    }
}

impl fmt::Display for SeasonCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:03}", self.code())
    }
}

impl TryFrom<i64> for SeasonCode {
    type Error = Error;

    fn try_from(code: i64) -> Result<Self> {
        parse_season(code)
    }
}

impl From<SeasonCode> for u16 {
    fn from(s: SeasonCode) -> u16 {
        s.code()
    }
}

impl FromStr for SeasonCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let code: i64 = s
            .trim()
            .parse()
            .map_err(|_| Error::Validation(format!("season {s:?} is not an integer")))?;
        parse_season(code)
    }
}

/// Decomposes a three-digit season code.
pub fn parse_season(code: i64) -> Result<SeasonCode> {
    if !(0..=999).contains(&code) {
        return Err(Error::MalformedSeason(code));
    }
    let half = match code % 10 {
        1 => Half::SpringSummer,
        3 => Half::FallWinter,
        _ => return Err(Error::MalformedSeason(code)),
    };
    Ok(SeasonCode {
        year_suffix: (code / 10) as u8,
        half,
    })
}

/// The `n` seasons strictly before `season`, most recent first.
pub fn previous_seasons(season: SeasonCode, n: usize) -> Vec<SeasonCode> {
    let mut out = Vec::with_capacity(n);
    let mut cur = season;
    for _ in 0..n {
        cur = cur.previous();
        out.push(cur);
    }
    out
}

/// Strips colons, dashes, commas and whitespace from a raw size label.
pub fn normalize_size_token(raw: &str) -> Result<String> {
    let out: String = raw
        .chars()
        .filter(|c| !matches!(c, ':' | '-' | ',') && !c.is_whitespace())
        .collect();
    if out.is_empty() {
        Err(Error::EmptyAfterNormalize(raw.to_string()))
    } else {
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    M,
    W,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    /// Tops: one size dimension.
    T,
    /// Bottoms: waist by length.
    B,
}

/// Grid size tier. The set is open: unknown tokens are kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Extension {
    Low,
    Medium,
    High,
    Youth,
    BigTall,
    Other(String),
}

impl Extension {
    pub fn parse(token: &str) -> Extension {
        let compact: String = token.chars().filter(|c| !c.is_whitespace()).collect();
        match compact.as_str() {
            "L" => Extension::Low,
            "M" => Extension::Medium,
            "H" => Extension::High,
            "Y" => Extension::Youth,
            "B&T" => Extension::BigTall,
            _ => {
                log::warn!("unrecognised size extension {token:?}");
                Extension::Other(token.to_string())
            }
        }
    }

    pub fn token(&self) -> &str {
        match self {
            Extension::Low => "L",
            Extension::Medium => "M",
            Extension::High => "H",
            Extension::Youth => "Y",
            Extension::BigTall => "B&T",
            Extension::Other(s) => s,
        }
    }
}

/// A size grid name such as `MB-511-H`: gender and category prefix,
/// merchandising description, size extension.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SizeGridName {
    pub gender: Gender,
    pub category: Category,
    pub descriptive: String,
    pub extension: Extension,
}

impl SizeGridName {
    /// Canonical rendering with plain dashes.
    pub fn render(&self) -> String {
        format!(
            "{}{}-{}-{}",
            match self.gender {
                Gender::M => 'M',
                Gender::W => 'W',
            },
            match self.category {
                Category::T => 'T',
                Category::B => 'B',
            },
            self.descriptive,
            self.extension.token()
        )
    }
}

impl fmt::Display for SizeGridName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl FromStr for SizeGridName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_grid_name(s)
    }
}

/// Splits a grid name on dashes (ASCII or en/em dash). The first token is the
/// gender/category prefix, the last the extension, everything between is the
/// descriptive text.
pub fn parse_grid_name(raw: &str) -> Result<SizeGridName> {
    let malformed = |reason: &str| Error::MalformedGridName {
        raw: raw.to_string(),
        reason: reason.to_string(),
    };
    let tokens: Vec<&str> = raw.split(['-', '\u{2013}', '\u{2014}']).collect();
    if tokens.len() < 3 {
        return Err(malformed("expected prefix-descriptive-extension"));
    }
    let prefix = tokens[0].trim();
    let extension = tokens[tokens.len() - 1].trim();
    let descriptive = tokens[1..tokens.len() - 1].join("-").trim().to_string();

    let mut pc = prefix.chars();
    let (g, c) = match (pc.next(), pc.next(), pc.next()) {
        (Some(g), Some(c), None) => (g, c),
        _ => return Err(malformed("prefix must be two letters")),
    };
    let gender = match g {
        'M' => Gender::M,
        'W' => Gender::W,
        _ => return Err(malformed("unknown gender token")),
    };
    let category = match c {
        'T' => Category::T,
        'B' => Category::B,
        _ => return Err(malformed("unknown category token")),
    };
    if descriptive.is_empty() {
        return Err(malformed("empty descriptive text"));
    }
    if extension.is_empty() {
        return Err(malformed("empty extension"));
    }
    Ok(SizeGridName {
        gender,
        category,
        descriptive,
        extension: Extension::parse(extension),
    })
}

/// One cell of a size grid. `i` indexes the first dimension, `j` the second.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SizeCell {
    pub dim1: String,
    pub dim2: Option<String>,
    pub i: usize,
    pub j: usize,
}

impl SizeCell {
    /// The normalized size token this cell is recorded under in KPI tables.
    pub fn token(&self) -> String {
        let raw = match &self.dim2 {
            Some(d2) => format!("{}{}", self.dim1, d2),
            None => self.dim1.clone(),
        };
        normalize_size_token(&raw).unwrap_or(raw)
    }

    pub fn manhattan(&self, other: &SizeCell) -> usize {
        self.i.abs_diff(other.i) + self.j.abs_diff(other.j)
    }

    pub fn chebyshev(&self, other: &SizeCell) -> usize {
        self.i.abs_diff(other.i).max(self.j.abs_diff(other.j))
    }
}

/// The candidate size matrix of one grid name.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeGrid {
    pub name: SizeGridName,
    raw_name: String,
    dim1_values: Vec<String>,
    dim2_values: Vec<String>,
    cells: Vec<SizeCell>,
    by_token: HashMap<String, usize>,
}

impl SizeGrid {
    pub fn new(raw_name: &str, dim1_values: Vec<String>, dim2_values: Vec<String>) -> Result<Self> {
        let name = parse_grid_name(raw_name)?;
        let invalid = |reason: String| Error::InvalidGrid {
            name: raw_name.to_string(),
            reason,
        };
        if dim1_values.is_empty() {
            return Err(invalid("first dimension is empty".into()));
        }
        for (label, values) in [("first", &dim1_values), ("second", &dim2_values)] {
            let unique: BTreeSet<&String> = values.iter().collect();
            if unique.len() != values.len() {
                return Err(invalid(format!("{label} dimension has duplicates")));
            }
        }

        let mut cells = Vec::with_capacity(dim1_values.len() * dim2_values.len().max(1));
        if dim2_values.is_empty() {
            for (i, d1) in dim1_values.iter().enumerate() {
                cells.push(SizeCell {
                    dim1: d1.clone(),
                    dim2: None,
                    i,
                    j: 0,
                });
            }
        } else {
            for (j, d2) in dim2_values.iter().enumerate() {
                for (i, d1) in dim1_values.iter().enumerate() {
                    cells.push(SizeCell {
                        dim1: d1.clone(),
                        dim2: Some(d2.clone()),
                        i,
                        j,
                    });
                }
            }
        }
        let mut by_token = HashMap::with_capacity(cells.len());
        for (idx, c) in cells.iter().enumerate() {
            if by_token.insert(c.token(), idx).is_some() {
                return Err(invalid(format!("size token {} is ambiguous", c.token())));
            }
        }
        Ok(SizeGrid {
            name,
            raw_name: raw_name.to_string(),
            dim1_values,
            dim2_values,
            cells,
            by_token,
        })
    }

    /// The grid name exactly as given in the source tables.
    pub fn raw_name(&self) -> &str {
        &self.raw_name
    }

    pub fn dim1_values(&self) -> &[String] {
        &self.dim1_values
    }

    pub fn dim2_values(&self) -> &[String] {
        &self.dim2_values
    }

    pub fn is_two_dimensional(&self) -> bool {
        !self.dim2_values.is_empty()
    }

    pub fn width(&self) -> usize {
        self.dim1_values.len()
    }

    pub fn height(&self) -> usize {
        self.dim2_values.len().max(1)
    }

    /// Cells in row-major order (second dimension outer).
    pub fn cells(&self) -> &[SizeCell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Position of cell `(i, j)` in [`cells`](Self::cells).
    pub fn index_of(&self, i: usize, j: usize) -> Option<usize> {
        if i < self.width() && j < self.height() {
            Some(j * self.width() + i)
        } else {
            None
        }
    }

    pub fn cell_at(&self, i: usize, j: usize) -> Option<&SizeCell> {
        self.index_of(i, j).map(|k| &self.cells[k])
    }

    /// Looks a cell up by its normalized size token.
    pub fn index_of_token(&self, token: &str) -> Option<usize> {
        self.by_token.get(token).copied()
    }

    pub fn find(&self, dim1: &str, dim2: Option<&str>) -> Option<&SizeCell> {
        let i = self.dim1_values.iter().position(|v| v == dim1)?;
        let j = match dim2 {
            Some(d2) if self.is_two_dimensional() => self.dim2_values.iter().position(|v| v == d2)?,
            None if !self.is_two_dimensional() => 0,
            _ => return None,
        };
        self.cell_at(i, j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    Wholesale,
    Retail,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Wholesale => "Wholesale",
            Channel::Retail => "Retail",
        }
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wholesale" => Ok(Channel::Wholesale),
            "retail" => Ok(Channel::Retail),
            other => Err(Error::Validation(format!("unknown channel {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PlanningGroup {
    pub name: String,
    pub channel: Channel,
    pub affiliate: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_observed_seasons() {
        let s = parse_season(193).unwrap();
        assert_eq!((s.year_suffix(), s.half()), (19, Half::FallWinter));
        let s = parse_season(171).unwrap();
        assert_eq!((s.year_suffix(), s.half()), (17, Half::SpringSummer));
        assert!(matches!(parse_season(190), Err(Error::MalformedSeason(190))));
        assert!(parse_season(1000).is_err());
    }

    #[test]
    fn previous_seasons_examples() {
        let codes = |s: u16, n| -> Vec<u16> {
            previous_seasons(parse_season(s as i64).unwrap(), n)
                .into_iter()
                .map(SeasonCode::code)
                .collect()
        };
        assert_eq!(codes(193, 4), vec![191, 183, 181, 173]);
        assert_eq!(codes(171, 1), vec![163]);
        assert_eq!(codes(201, 2), vec![193, 191]);
    }

    #[test]
    fn seasons_order_chronologically() {
        let seq: Vec<SeasonCode> = [163, 171, 173, 181, 183, 191, 193, 201, 203]
            .into_iter()
            .map(|c| parse_season(c).unwrap())
            .collect();
        assert!(seq.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(seq[8].steps_since(seq[0]), 8);
    }

    #[test]
    fn normalizes_size_tokens() {
        assert_eq!(normalize_size_token("32: 30").unwrap(), "3230");
        assert_eq!(normalize_size_token("M").unwrap(), "M");
        assert!(matches!(
            normalize_size_token(" -:, "),
            Err(Error::EmptyAfterNormalize(_))
        ));
    }

    #[test]
    fn parses_grid_names() {
        let g = parse_grid_name("WB-Youth Super Skinny-M").unwrap();
        assert_eq!(g.gender, Gender::W);
        assert_eq!(g.category, Category::B);
        assert_eq!(g.descriptive, "Youth Super Skinny");
        assert_eq!(g.extension, Extension::Medium);

        let g = parse_grid_name("MB-511-H").unwrap();
        assert_eq!((g.gender, g.category), (Gender::M, Category::B));
        assert_eq!(g.descriptive, "511");
        assert_eq!(g.extension, Extension::High);

        // en dashes as printed in planning documents
        let g = parse_grid_name("WB\u{2013}Youth Super Skinny\u{2013}M").unwrap();
        assert_eq!(g.render(), "WB-Youth Super Skinny-M");

        assert!(matches!(
            parse_grid_name("XZ-Foo-H"),
            Err(Error::MalformedGridName { .. })
        ));
        assert!(parse_grid_name("MB-H").is_err());
    }

    #[test]
    fn open_extension_set_is_kept() {
        let g = parse_grid_name("MB-501 Original-B&T").unwrap();
        assert_eq!(g.extension, Extension::BigTall);
        let g = parse_grid_name("MT-Graphic Tee-XL").unwrap();
        assert_eq!(g.extension, Extension::Other("XL".into()));
        assert_eq!(g.render(), "MT-Graphic Tee-XL");
    }

    #[test]
    fn grid_cells_are_cartesian() {
        let g = SizeGrid::new(
            "MB-511-H",
            vec!["28".into(), "29".into(), "30".into()],
            vec!["30".into(), "32".into()],
        )
        .unwrap();
        assert_eq!(g.len(), 6);
        let c = g.find("29", Some("32")).unwrap();
        assert_eq!((c.i, c.j), (1, 1));
        assert_eq!(g.index_of_token("2932"), Some(4));

        let tops = SizeGrid::new(
            "WT-Tee-M",
            ["XS", "S", "M", "L", "XL"].iter().map(|s| s.to_string()).collect(),
            vec![],
        )
        .unwrap();
        assert_eq!(tops.len(), 5);
        assert!(tops.cells().iter().all(|c| c.j == 0 && c.dim2.is_none()));

        assert!(SizeGrid::new("MB-511-H", vec!["28".into(), "28".into()], vec![]).is_err());
    }

    proptest! {
        #[test]
        fn previous_seasons_round_trip(year in 10u8..100, fw in any::<bool>(), n in 1usize..12) {
            let s = SeasonCode::new(year, if fw { Half::FallWinter } else { Half::SpringSummer }).unwrap();
            let prev = previous_seasons(s, n);
            prop_assert_eq!(prev.len(), n);
            prop_assert!(prev[0] < s);
            prop_assert!(prev.windows(2).all(|w| w[0] > w[1]));
            let mut back = *prev.last().unwrap();
            for _ in 0..n { back = back.next(); }
            prop_assert_eq!(back, s);
        }

        #[test]
        fn normalize_is_idempotent(raw in "[0-9A-Z :,\\-]{0,12}") {
            if let Ok(once) = normalize_size_token(&raw) {
                prop_assert_eq!(normalize_size_token(&once).unwrap(), once);
            }
        }

        #[test]
        fn grid_name_render_parse_identity(
            male in any::<bool>(),
            top in any::<bool>(),
            desc in "[A-Za-z0-9][A-Za-z0-9 ]{0,14}[A-Za-z0-9]",
            ext in prop::sample::select(vec!["L", "M", "H", "Y", "B&T"]),
        ) {
            let name = SizeGridName {
                gender: if male { Gender::M } else { Gender::W },
                category: if top { Category::T } else { Category::B },
                descriptive: desc,
                extension: Extension::parse(ext),
            };
            prop_assert_eq!(parse_grid_name(&name.render()).unwrap(), name);
        }

        #[test]
        fn grid_cell_count(w in 1usize..12, h in 0usize..8) {
            let d1: Vec<String> = (0..w).map(|k| format!("{}", 20 + k)).collect();
            let d2: Vec<String> = (0..h).map(|k| format!("{}", 60 + 2 * k)).collect();
            let g = SizeGrid::new("MB-Prop-M", d1, d2).unwrap();
            prop_assert_eq!(g.len(), w * h.max(1));
            for (k, c) in g.cells().iter().enumerate() {
                prop_assert_eq!(g.index_of(c.i, c.j), Some(k));
            }
        }
    }
}

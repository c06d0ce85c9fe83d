//! Synthetic patron identities sampled from SSA first-name and Census
//! surname tables, balanced over the 12-cell (sex, race/ethnicity) grid.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};

/// Minimum aggregate SSA count for a (name, sex) entry to be kept.
pub const MIN_NAME_COUNT: u64 = 6;
/// Cap on rejection-sampling rounds before reporting an unsatisfiable target.
pub const MAX_REJECTION_ROUNDS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    pub const ALL: [Sex; 2] = [Sex::Female, Sex::Male];

    pub fn label(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Race {
    White,
    Black,
    #[serde(rename = "Asian/PI")]
    AsianPacificIslander,
    #[serde(rename = "AIAN")]
    AmericanIndianAlaskaNative,
    TwoOrMore,
    Hispanic,
}

impl Race {
    pub const ALL: [Race; 6] = [
        Race::White,
        Race::Black,
        Race::AsianPacificIslander,
        Race::AmericanIndianAlaskaNative,
        Race::TwoOrMore,
        Race::Hispanic,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Race::White => "White",
            Race::Black => "Black",
            Race::AsianPacificIslander => "Asian/PI",
            Race::AmericanIndianAlaskaNative => "AIAN",
            Race::TwoOrMore => "TwoOrMore",
            Race::Hispanic => "Hispanic",
        }
    }

    pub fn index(self) -> usize {
        Race::ALL.iter().position(|r| *r == self).unwrap()
    }
}

impl fmt::Display for Race {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PatronType {
    Alumni,
    Faculty,
    Graduate,
    Undergraduate,
    Staff,
    Outside,
}

impl PatronType {
    pub const ALL: [PatronType; 6] = [
        PatronType::Alumni,
        PatronType::Faculty,
        PatronType::Graduate,
        PatronType::Undergraduate,
        PatronType::Staff,
        PatronType::Outside,
    ];

    /// Display name used in the email footer.
    pub fn display_name(self) -> &'static str {
        match self {
            PatronType::Alumni => "Alumni",
            PatronType::Faculty => "Faculty",
            PatronType::Graduate => "Graduate student",
            PatronType::Undergraduate => "Undergraduate student",
            PatronType::Staff => "Staff",
            PatronType::Outside => "Outside user",
        }
    }

    pub fn from_display_name(s: &str) -> Option<PatronType> {
        PatronType::ALL.iter().copied().find(|p| p.display_name() == s)
    }

    pub fn label(self) -> &'static str {
        match self {
            PatronType::Alumni => "Alumni",
            PatronType::Faculty => "Faculty",
            PatronType::Graduate => "Graduate",
            PatronType::Undergraduate => "Undergraduate",
            PatronType::Staff => "Staff",
            PatronType::Outside => "Outside",
        }
    }
}

impl fmt::Display for PatronType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FirstNameEntry {
    pub name: String,
    pub sex: Sex,
    pub count: u64,
}

/// First names aggregated over SSA yearly files, filtered at [`MIN_NAME_COUNT`].
///
/// A name string may appear twice, once per sex; the two rows are distinct
/// sampling atoms.
#[derive(Debug, Clone)]
pub struct FirstNameTable {
    pub entries: Vec<FirstNameEntry>,
}

impl FirstNameTable {
    fn per_sex(&self, sex: Sex) -> Vec<&FirstNameEntry> {
        self.entries.iter().filter(|e| e.sex == sex).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurnameEntry {
    pub surname: String,
    /// Probability vector over [`Race::ALL`], normalized to sum 1.
    pub race_dist: [f64; 6],
}

#[derive(Debug, Clone)]
pub struct SurnameTable {
    pub entries: Vec<SurnameEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticPatron {
    pub first_name: String,
    pub surname: String,
    pub sex: Sex,
    pub race: Race,
    pub patron_type: PatronType,
}

impl SyntheticPatron {
    pub fn full_name(&self) -> String {
        format!("{} {}", self.first_name, self.surname)
    }
}

/// Parses one SSA yearly file (`Name,S,Count` lines) into (name, sex, count)
/// triples. `source` names the file in error messages.
fn parse_ssa_content(content: &str, source: &str) -> Result<Vec<(String, Sex, u64)>> {
    let mut out = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (name, sex, count) = match (parts.next(), parts.next(), parts.next()) {
            (Some(n), Some(s), Some(c)) => (n.trim(), s.trim(), c.trim()),
            _ => {
                return Err(AuditError::Ingest {
                    file: source.to_string(),
                    line: i + 1,
                    message: "expected `name,sex,count`".to_string(),
                })
            }
        };
        let sex = match sex {
            "F" => Sex::Female,
            "M" => Sex::Male,
            other => {
                return Err(AuditError::Ingest {
                    file: source.to_string(),
                    line: i + 1,
                    message: format!("unknown sex code `{other}`"),
                })
            }
        };
        let count: u64 = count.parse().map_err(|_| AuditError::Ingest {
            file: source.to_string(),
            line: i + 1,
            message: format!("bad count `{count}`"),
        })?;
        out.push((name.to_string(), sex, count));
    }
    Ok(out)
}

/// Aggregates parsed SSA rows into a table, applying the count filter and
/// the deterministic (name, sex) ordering.
pub fn build_first_name_table(rows: Vec<(String, Sex, u64)>) -> Result<FirstNameTable> {
    let mut agg: BTreeMap<(String, Sex), u64> = BTreeMap::new();
    for (name, sex, count) in rows {
        *agg.entry((name, sex)).or_insert(0) += count;
    }
    let entries: Vec<FirstNameEntry> = agg
        .into_iter()
        .filter(|(_, count)| *count >= MIN_NAME_COUNT)
        .map(|((name, sex), count)| FirstNameEntry { name, sex, count })
        .collect();
    if entries.is_empty() {
        return Err(AuditError::Config(
            "no first names survive the minimum-count filter".to_string(),
        ));
    }
    for sex in Sex::ALL {
        if !entries.iter().any(|e| e.sex == sex) {
            return Err(AuditError::Config(format!(
                "no {sex} first names after filtering"
            )));
        }
    }
    Ok(FirstNameTable { entries })
}

/// Ingests a set of SSA `yobYYYY.txt` files.
pub fn ingest_ssa<P: AsRef<Path>>(files: &[P]) -> Result<FirstNameTable> {
    let mut rows = Vec::new();
    for path in files {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path)?;
        rows.extend(parse_ssa_content(&content, &path.to_string_lossy())?);
    }
    build_first_name_table(rows)
}

/// Ingests every `yobYYYY.txt` under `dir`.
pub fn ingest_ssa_dir<P: AsRef<Path>>(dir: P) -> Result<FirstNameTable> {
    let mut files: Vec<_> = std::fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("yob") && n.ends_with(".txt"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(AuditError::Config(format!(
            "no yobYYYY.txt files in {}",
            dir.as_ref().display()
        )));
    }
    ingest_ssa(&files)
}

/// Ingests embedded SSA-format content (used for the bundled sample data).
pub fn ingest_ssa_str(contents: &[(&str, &str)]) -> Result<FirstNameTable> {
    let mut rows = Vec::new();
    for (label, content) in contents {
        rows.extend(parse_ssa_content(content, label)?);
    }
    build_first_name_table(rows)
}

const PCT_SUM_TOLERANCE: f64 = 0.5;

/// Parses the Census surname CSV. The header must contain a surname column
/// and the six percentage columns; suppressed cells are marked `(S)` and
/// receive an equal share of the residual mass.
pub fn parse_census(content: &str, source: &str) -> Result<SurnameTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(content.as_bytes());
    let headers = reader.headers()?.clone();
    let lower: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();

    let find = |keys: &[&str]| -> Option<usize> {
        lower
            .iter()
            .position(|h| keys.iter().any(|k| h.contains(k)))
    };
    let name_col = find(&["name", "surname"])
        .ok_or_else(|| AuditError::Schema(format!("{source}: missing surname column")))?;
    // 2prace must be probed before white/black to avoid substring clashes.
    let race_cols: [usize; 6] = {
        let specs: [&[&str]; 6] = [
            &["2prace", "two"],
            &["hispanic"],
            &["aian"],
            &["api", "asian"],
            &["black"],
            &["white"],
        ];
        let mut found = [usize::MAX; 6];
        let mut taken = vec![false; lower.len()];
        for (si, keys) in specs.iter().enumerate() {
            let idx = lower
                .iter()
                .enumerate()
                .position(|(i, h)| !taken[i] && keys.iter().any(|k| h.contains(k)))
                .ok_or_else(|| {
                    AuditError::Schema(format!("{source}: missing column for {:?}", keys[0]))
                })?;
            taken[idx] = true;
            found[si] = idx;
        }
        // Reorder into Race::ALL order: white, black, api, aian, 2prace, hispanic.
        [found[5], found[4], found[3], found[2], found[0], found[1]]
    };

    let mut entries = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let surname = record
            .get(name_col)
            .unwrap_or_default()
            .trim()
            .to_string();
        if surname.is_empty() {
            continue;
        }
        let mut pct = [0.0f64; 6];
        let mut suppressed = [false; 6];
        for (slot, &col) in race_cols.iter().enumerate() {
            let cell = record.get(col).unwrap_or_default().trim();
            if cell == "(S)" || cell.is_empty() {
                suppressed[slot] = true;
            } else {
                pct[slot] = cell.parse().map_err(|_| AuditError::Ingest {
                    file: source.to_string(),
                    line: i + 2,
                    message: format!("bad percentage `{cell}` for {surname}"),
                })?;
                if pct[slot] < 0.0 {
                    return Err(AuditError::Ingest {
                        file: source.to_string(),
                        line: i + 2,
                        message: format!("negative percentage for {surname}"),
                    });
                }
            }
        }
        let known: f64 = pct.iter().sum();
        if known > 100.0 + PCT_SUM_TOLERANCE {
            return Err(AuditError::Ingest {
                file: source.to_string(),
                line: i + 2,
                message: format!("known percentages for {surname} sum to {known:.2} > 100"),
            });
        }
        let n_suppressed = suppressed.iter().filter(|s| **s).count();
        if n_suppressed > 0 {
            let residual = (100.0 - known).max(0.0) / n_suppressed as f64;
            for (slot, &s) in suppressed.iter().enumerate() {
                if s {
                    pct[slot] = residual;
                }
            }
        }
        let total: f64 = pct.iter().sum();
        if total <= 0.0 {
            continue;
        }
        let mut race_dist = [0.0f64; 6];
        for (slot, p) in pct.iter().enumerate() {
            race_dist[slot] = p / total;
        }
        entries.push(SurnameEntry { surname, race_dist });
    }

    if entries.is_empty() {
        return Err(AuditError::Config(format!("{source}: no usable surnames")));
    }
    for race in Race::ALL {
        if !entries.iter().any(|e| e.race_dist[race.index()] > 0.0) {
            return Err(AuditError::Config(format!(
                "{source}: no surname carries nonzero probability for {race}"
            )));
        }
    }
    Ok(SurnameTable { entries })
}

pub fn ingest_census<P: AsRef<Path>>(path: P) -> Result<SurnameTable> {
    let content = std::fs::read_to_string(path.as_ref())?;
    parse_census(&content, &path.as_ref().to_string_lossy())
}

fn weighted_pick<'a>(entries: &[&'a FirstNameEntry], rng: &mut ChaCha8Rng) -> &'a FirstNameEntry {
    let total: u64 = entries.iter().map(|e| e.count).sum();
    let mut target = rng.gen_range(0..total);
    for entry in entries {
        if target < entry.count {
            return entry;
        }
        target -= entry.count;
    }
    entries[entries.len() - 1]
}

fn sample_race_label(dist: &[f64; 6], rng: &mut ChaCha8Rng) -> Race {
    let mut target: f64 = rng.gen();
    for race in Race::ALL {
        let p = dist[race.index()];
        if target < p {
            return race;
        }
        target -= p;
    }
    Race::Hispanic
}

fn sample_patron_with(
    first_names: &FirstNameTable,
    surnames: &SurnameTable,
    target: (Sex, Race),
    rng: &mut ChaCha8Rng,
) -> Result<(String, String)> {
    let (sex, race) = target;
    let pool = first_names.per_sex(sex);
    if pool.is_empty() {
        return Err(AuditError::UnsatisfiableTarget(format!(
            "no first names recorded for sex {sex}"
        )));
    }
    let first = weighted_pick(&pool, rng).name.clone();

    // Rejection sampling restricted to surnames that can yield the target race.
    let eligible: Vec<&SurnameEntry> = surnames
        .entries
        .iter()
        .filter(|e| e.race_dist[race.index()] > 0.0)
        .collect();
    if eligible.is_empty() {
        return Err(AuditError::UnsatisfiableTarget(format!(
            "no surname has nonzero probability for race {race}"
        )));
    }
    for _ in 0..MAX_REJECTION_ROUNDS {
        let candidate = eligible[rng.gen_range(0..eligible.len())];
        if sample_race_label(&candidate.race_dist, rng) == race {
            return Ok((first, candidate.surname.clone()));
        }
    }
    Err(AuditError::UnsatisfiableTarget(format!(
        "rejection sampling for race {race} exceeded {MAX_REJECTION_ROUNDS} rounds"
    )))
}

/// Samples one patron for the given (sex, race) target, deterministic in `rng_seed`.
pub fn sample_patron(
    first_names: &FirstNameTable,
    surnames: &SurnameTable,
    target: (Sex, Race),
    rng_seed: u64,
) -> Result<SyntheticPatron> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (first_name, surname) = sample_patron_with(first_names, surnames, target, &mut rng)?;
    let patron_type = PatronType::ALL[rng.gen_range(0..PatronType::ALL.len())];
    Ok(SyntheticPatron {
        first_name,
        surname,
        sex: target.0,
        race: target.1,
        patron_type,
    })
}

/// Builds a cohort of `n` patrons with the 12 demographic cells filled to
/// ⌊n/12⌋ or ⌈n/12⌉ (round-robin remainder over a seed-shuffled cell order)
/// and patron types drawn uniformly.
pub fn build_cohort(
    first_names: &FirstNameTable,
    surnames: &SurnameTable,
    n: usize,
    rng_seed: u64,
) -> Result<Vec<SyntheticPatron>> {
    if n < 12 {
        return Err(AuditError::CohortSize(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let mut cells: Vec<(Sex, Race)> = Sex::ALL
        .iter()
        .flat_map(|&s| Race::ALL.iter().map(move |&r| (s, r)))
        .collect();
    // Seed-shuffled order decides which cells absorb the remainder.
    for i in (1..cells.len()).rev() {
        let j = rng.gen_range(0..=i);
        cells.swap(i, j);
    }

    let base = n / 12;
    let remainder = n % 12;
    let mut cohort = Vec::with_capacity(n);
    for (idx, &cell) in cells.iter().enumerate() {
        let quota = base + usize::from(idx < remainder);
        for _ in 0..quota {
            let (first_name, surname) =
                sample_patron_with(first_names, surnames, cell, &mut rng)?;
            cohort.push(SyntheticPatron {
                first_name,
                surname,
                sex: cell.0,
                race: cell.1,
                patron_type: PatronType::Undergraduate, // assigned below
            });
        }
    }

    // Uniform patron types, with a re-draw guard so every type appears in
    // any cohort large enough that a missing class signals a broken RNG.
    loop {
        for patron in cohort.iter_mut() {
            patron.patron_type = PatronType::ALL[rng.gen_range(0..PatronType::ALL.len())];
        }
        if n < 200
            || PatronType::ALL
                .iter()
                .all(|t| cohort.iter().any(|p| p.patron_type == *t))
        {
            break;
        }
    }
    Ok(cohort)
}

/// Serializes a cohort as JSON Lines.
pub fn cohort_to_jsonl(cohort: &[SyntheticPatron]) -> Result<String> {
    let mut out = String::new();
    for patron in cohort {
        out.push_str(&serde_json::to_string(patron)?);
        out.push('\n');
    }
    Ok(out)
}

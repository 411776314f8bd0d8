//! Behavior-log ingestion: the transaction model, CSV parsing and writing,
//! dataset statistics, and the synthetic log generator.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod synth;

pub use synth::{
    category_id, generate_synthetic, generate_synthetic_with_truth, item_id, user_id,
    PlantedInstance, PlantedPattern, SyntheticConfig, SyntheticLog, Tally,
};

/// One of the four behavior codes. Ordered click < collect < cart < payment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
#[repr(u8)]
pub enum BehaviorType {
    Click = 1,
    Collect = 2,
    Cart = 3,
    Payment = 4,
}

impl BehaviorType {
    pub const ALL: [BehaviorType; 4] = [
        BehaviorType::Click,
        BehaviorType::Collect,
        BehaviorType::Cart,
        BehaviorType::Payment,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(BehaviorType::Click),
            2 => Some(BehaviorType::Collect),
            3 => Some(BehaviorType::Cart),
            4 => Some(BehaviorType::Payment),
            _ => None,
        }
    }

    pub fn is_payment(self) -> bool {
        self == BehaviorType::Payment
    }
}

impl TryFrom<u8> for BehaviorType {
    type Error = String;

    fn try_from(code: u8) -> Result<Self, String> {
        BehaviorType::from_code(code)
            .ok_or_else(|| format!("behavior code {code} out of range 1-4"))
    }
}

impl From<BehaviorType> for u8 {
    fn from(b: BehaviorType) -> u8 {
        b.code()
    }
}

impl fmt::Display for BehaviorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// A timestamp truncated to the hour, written `YYYY-MM-DD HH`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Hour(NaiveDateTime);

impl Hour {
    pub fn new(date: NaiveDate, hour: u32) -> Option<Self> {
        date.and_hms_opt(hour, 0, 0).map(Hour)
    }

    pub fn start_of(date: NaiveDate) -> Self {
        Hour(date.and_hms_opt(0, 0, 0).expect("midnight exists"))
    }

    pub fn date(self) -> NaiveDate {
        self.0.date()
    }

    pub fn hour(self) -> u32 {
        self.0.hour()
    }

    pub fn datetime(self) -> NaiveDateTime {
        self.0
    }

    pub fn plus_hours(self, hours: i64) -> Self {
        Hour(self.0 + Duration::hours(hours))
    }

    pub fn minus_days(self, days: i64) -> Self {
        Hour(self.0 - Duration::days(days))
    }
}

impl FromStr for Hour {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let b = s.as_bytes();
        let shape_ok = b.len() == 13
            && b.iter().enumerate().all(|(i, &c)| match i {
                4 | 7 => c == b'-',
                10 => c == b' ',
                _ => c.is_ascii_digit(),
            });
        if !shape_ok {
            return Err(format!("timestamp {s:?} is not 'YYYY-MM-DD HH'"));
        }
        let date = NaiveDate::parse_from_str(&s[..10], "%Y-%m-%d")
            .map_err(|e| format!("timestamp {s:?}: {e}"))?;
        let hour: u32 = s[11..]
            .parse()
            .map_err(|_| format!("timestamp {s:?}: bad hour"))?;
        Hour::new(date, hour).ok_or_else(|| format!("timestamp {s:?}: hour out of range"))
    }
}

impl TryFrom<String> for Hour {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Hour> for String {
    fn from(h: Hour) -> String {
        h.to_string()
    }
}

impl fmt::Display for Hour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format("%Y-%m-%d %H"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transaction {
    pub user_id: String,
    pub item_id: String,
    pub category_id: String,
    pub behavior: BehaviorType,
    pub timestamp: Hour,
}

impl Transaction {
    pub fn new(
        user_id: impl Into<String>,
        item_id: impl Into<String>,
        category_id: impl Into<String>,
        behavior: BehaviorType,
        timestamp: Hour,
    ) -> Self {
        Transaction {
            user_id: user_id.into(),
            item_id: item_id.into(),
            category_id: category_id.into(),
            behavior,
            timestamp,
        }
    }
}

/// Role of one CSV column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Column {
    User,
    Item,
    Behavior,
    Category,
    Time,
    /// Read and discarded; written back empty under the given header name.
    Ignored(String),
}

impl Column {
    fn header_name(&self) -> &str {
        match self {
            Column::User => "user_id",
            Column::Item => "item_id",
            Column::Behavior => "behavior_type",
            Column::Category => "item_category",
            Column::Time => "time",
            Column::Ignored(name) => name,
        }
    }
}

/// Column order of a behavior-log CSV file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    columns: Vec<Column>,
}

impl Schema {
    /// `user_id,item_id,behavior_type,user_geohash,item_category,time`
    pub fn competition() -> Self {
        Schema {
            columns: vec![
                Column::User,
                Column::Item,
                Column::Behavior,
                Column::Ignored("user_geohash".into()),
                Column::Category,
                Column::Time,
            ],
        }
    }

    pub fn new(columns: Vec<Column>) -> Result<Self> {
        for required in [
            Column::User,
            Column::Item,
            Column::Behavior,
            Column::Category,
            Column::Time,
        ] {
            let n = columns.iter().filter(|c| **c == required).count();
            if n != 1 {
                return Err(Error::InvalidConfig(format!(
                    "schema must contain exactly one {} column, found {n}",
                    required.header_name()
                )));
            }
        }
        Ok(Schema { columns })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    fn position(&self, col: &Column) -> usize {
        self.columns
            .iter()
            .position(|c| c == col)
            .expect("validated schema")
    }
}

impl Default for Schema {
    fn default() -> Self {
        Schema::competition()
    }
}

/// Comma-separated roles: `user,item,behavior,category,time`; any other
/// name is an ignored column. `competition` names the default layout.
impl FromStr for Schema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "competition" {
            return Ok(Schema::competition());
        }
        let columns = s
            .split(',')
            .map(|name| match name.trim() {
                "user" | "user_id" => Column::User,
                "item" | "item_id" => Column::Item,
                "behavior" | "behavior_type" => Column::Behavior,
                "category" | "item_category" => Column::Category,
                "time" => Column::Time,
                other => Column::Ignored(other.to_string()),
            })
            .collect();
        Schema::new(columns)
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.columns.iter().map(Column::header_name).collect();
        f.write_str(&names.join(","))
    }
}

/// Parses a behavior-log CSV with a header row. Rows are returned in file
/// order; any malformed row aborts the parse.
pub fn parse_transactions<R: Read>(source: R, schema: &Schema) -> Result<Vec<Transaction>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);

    let header_len = reader
        .headers()
        .map_err(|e| Error::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .len();
    if header_len == 0 {
        return Err(Error::MalformedRow {
            line: 1,
            reason: "missing header row".into(),
        });
    }

    let width = schema.columns.len();
    let user = schema.position(&Column::User);
    let item = schema.position(&Column::Item);
    let behavior = schema.position(&Column::Behavior);
    let category = schema.position(&Column::Category);
    let time = schema.position(&Column::Time);

    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader
            .read_record(&mut record)
            .map_err(|e| Error::MalformedRow {
                line: e.position().map_or(0, |p| p.line()),
                reason: e.to_string(),
            })?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        let bad = |reason: String| Error::MalformedRow { line, reason };
        if record.len() != width {
            return Err(bad(format!(
                "expected {width} fields, found {}",
                record.len()
            )));
        }
        let field = |idx: usize, name: &str| -> Result<&str> {
            let v = &record[idx];
            if v.is_empty() {
                Err(bad(format!("missing {name}")))
            } else {
                Ok(v)
            }
        };
        let code_text = field(behavior, "behavior_type")?;
        let behavior = code_text
            .parse::<u8>()
            .ok()
            .and_then(BehaviorType::from_code)
            .ok_or_else(|| bad(format!("behavior {code_text:?} out of range 1-4")))?;
        let timestamp: Hour = field(time, "time")?.parse().map_err(bad)?;
        out.push(Transaction {
            user_id: field(user, "user_id")?.to_string(),
            item_id: field(item, "item_id")?.to_string(),
            category_id: field(category, "item_category")?.to_string(),
            behavior,
            timestamp,
        });
    }
    Ok(out)
}

/// Writes transactions as CSV in `schema` order; ignored columns are empty.
pub fn write_transactions<W: Write>(
    sink: W,
    transactions: &[Transaction],
    schema: &Schema,
) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().from_writer(sink);
    let to_io = |e: csv::Error| Error::io("<csv output>", e.into());
    writer
        .write_record(schema.columns.iter().map(Column::header_name))
        .map_err(to_io)?;
    let mut row: Vec<String> = Vec::with_capacity(schema.columns.len());
    for t in transactions {
        row.clear();
        for col in &schema.columns {
            row.push(match col {
                Column::User => t.user_id.clone(),
                Column::Item => t.item_id.clone(),
                Column::Behavior => t.behavior.to_string(),
                Column::Category => t.category_id.clone(),
                Column::Time => t.timestamp.to_string(),
                Column::Ignored(_) => String::new(),
            });
        }
        writer.write_record(&row).map_err(to_io)?;
    }
    writer.flush().map_err(|e| Error::io("<csv output>", e))
}

/// Counts over a log. `sparsity` is `nonzero_pairs / total_cells`, defined
/// as 0 for an empty log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_users: u64,
    pub n_items: u64,
    pub n_categories: u64,
    pub n_transactions: u64,
    pub nonzero_pairs: u64,
    pub total_cells: u64,
    pub sparsity: f64,
}

pub fn dataset_stats(transactions: &[Transaction]) -> DatasetStats {
    let mut users = HashSet::new();
    let mut items = HashSet::new();
    let mut categories = HashSet::new();
    let mut pairs = HashSet::new();
    for t in transactions {
        users.insert(t.user_id.as_str());
        items.insert(t.item_id.as_str());
        categories.insert(t.category_id.as_str());
        pairs.insert((t.user_id.as_str(), t.item_id.as_str()));
    }
    let total_cells = users.len() as u64 * items.len() as u64;
    let nonzero_pairs = pairs.len() as u64;
    DatasetStats {
        n_users: users.len() as u64,
        n_items: items.len() as u64,
        n_categories: categories.len() as u64,
        n_transactions: transactions.len() as u64,
        nonzero_pairs,
        total_cells,
        sparsity: if total_cells == 0 {
            0.0
        } else {
            nonzero_pairs as f64 / total_cells as f64
        },
    }
}

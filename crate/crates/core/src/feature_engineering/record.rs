use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One raw payment event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionRecord {
    pub account_id: String,
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
    pub amount: f64,
    pub location_code: String,
    pub merchant_type: String,
    pub channel: String,
    /// `Some(true)` for fraud, `Some(false)` for legitimate, `None` when unlabeled.
    pub label: Option<bool>,
}

impl TransactionRecord {
    pub fn validate(&self) -> Result<()> {
        if self.timestamp <= 0 {
            return Err(Error::Data(format!(
                "account {}: timestamp must be positive, got {}",
                self.account_id, self.timestamp
            )));
        }
        if !self.amount.is_finite() || self.amount < 0.0 {
            return Err(Error::Data(format!(
                "account {}: amount must be finite and non-negative, got {}",
                self.account_id, self.amount
            )));
        }
        Ok(())
    }

    /// Fractional hour of day (UTC) in `[0, 24)`.
    pub fn hour_of_day(&self) -> f64 {
        self.timestamp.rem_euclid(86_400) as f64 / 3600.0
    }

    pub fn categorical(&self, field: CategoricalField) -> &str {
        match field {
            CategoricalField::Location => &self.location_code,
            CategoricalField::Merchant => &self.merchant_type,
            CategoricalField::Channel => &self.channel,
        }
    }

    pub fn numeric(&self, field: NumericField) -> f64 {
        match field {
            NumericField::Amount => self.amount,
            NumericField::Hour => self.hour_of_day(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CategoricalField {
    #[serde(rename = "location_code")]
    Location,
    #[serde(rename = "merchant_type")]
    Merchant,
    #[serde(rename = "channel")]
    Channel,
}

impl CategoricalField {
    pub const ALL: [CategoricalField; 3] = [Self::Location, Self::Merchant, Self::Channel];

    pub fn name(self) -> &'static str {
        match self {
            Self::Location => "location_code",
            Self::Merchant => "merchant_type",
            Self::Channel => "channel",
        }
    }
}

impl FromStr for CategoricalField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("`{s}` is not a categorical field")))
    }
}

/// Continuous fields eligible for WOE discretisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericField {
    Amount,
    Hour,
}

impl NumericField {
    pub fn name(self) -> &'static str {
        match self {
            Self::Amount => "amount",
            Self::Hour => "hour",
        }
    }
}

impl FromStr for NumericField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "amount" => Ok(Self::Amount),
            "hour" => Ok(Self::Hour),
            _ => Err(Error::Config(format!("`{s}` is not a numeric field"))),
        }
    }
}

pub const CSV_HEADER: [&str; 7] = [
    "account_id",
    "timestamp",
    "amount",
    "location_code",
    "merchant_type",
    "channel",
    "label",
];

#[derive(Deserialize)]
struct CsvRow {
    account_id: String,
    timestamp: i64,
    amount: f64,
    location_code: String,
    merchant_type: String,
    channel: String,
    #[serde(default)]
    label: Option<u8>,
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<TransactionRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = &CSV_HEADER[..6];
    let got: Vec<&str> = headers.iter().collect();
    if got.len() < 6 || got[..6] != *expected || (got.len() == 7 && got[6] != "label") || got.len() > 7 {
        return Err(Error::Data(format!(
            "unexpected CSV header {got:?}; expected {}",
            CSV_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = row?;
        let label = match row.label {
            None => None,
            Some(0) => Some(false),
            Some(1) => Some(true),
            Some(v) => return Err(Error::Data(format!("row {}: label must be 0 or 1, got {v}", line + 1))),
        };
        let record = TransactionRecord {
            account_id: row.account_id,
            timestamp: row.timestamp,
            amount: row.amount,
            location_code: row.location_code,
            merchant_type: row.merchant_type,
            channel: row.channel,
            label,
        };
        record.validate()?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_records_path(path: &std::path::Path) -> Result<Vec<TransactionRecord>> {
    let file = std::fs::File::open(path)?;
    read_records(std::io::BufReader::new(file))
}

pub fn write_records<W: Write>(writer: W, records: &[TransactionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in records {
        let label = match r.label {
            None => String::new(),
            Some(l) => u8::from(l).to_string(),
        };
        w.write_record([
            r.account_id.as_str(),
            &r.timestamp.to_string(),
            &r.amount.to_string(),
            &r.location_code,
            &r.merchant_type,
            &r.channel,
            &label,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Transactions of one account, as indices into the caller's record slice,
/// in time order (ties keep input order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccountGroup {
    pub account_id: String,
    pub rows: Vec<usize>,
}

/// Groups records by account. Groups are ordered by account id.
pub fn group_by_account(records: &[TransactionRecord]) -> Vec<AccountGroup> {
    let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        map.entry(r.account_id.as_str()).or_default().push(i);
    }
    map.into_iter()
        .map(|(id, mut rows)| {
            // stable: equal timestamps keep file order
            rows.sort_by_key(|&i| records[i].timestamp);
            AccountGroup {
                account_id: id.to_string(),
                rows,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn rec(account: &str, t: i64, amount: f64) -> TransactionRecord {
        TransactionRecord {
            account_id: account.into(),
            timestamp: t,
            amount,
            location_code: "L1".into(),
            merchant_type: "M1".into(),
            channel: "pos".into(),
            label: Some(false),
        }
    }

    #[test]
    fn csv_round_trip_preserves_records() {
        let mut records = vec![rec("a", 100, 12.25), rec("b", 200, 0.1 + 0.2)];
        records[1].label = None;
        let mut buf = Vec::new();
        write_records(&mut buf, &records).unwrap();
        let back = read_records(buf.as_slice()).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn csv_without_label_column_is_accepted() {
        let text = "account_id,timestamp,amount,location_code,merchant_type,channel\na,10,5,L,M,pos\n";
        let records = read_records(text.as_bytes()).unwrap();
        assert_eq!(records[0].label, None);
    }

    #[test]
    fn csv_rejects_bad_header_and_values() {
        let text = "account,timestamp,amount,location_code,merchant_type,channel\n";
        assert!(matches!(read_records(text.as_bytes()), Err(Error::Data(_))));
        let text = "account_id,timestamp,amount,location_code,merchant_type,channel,label\na,10,-5,L,M,pos,0\n";
        assert!(matches!(read_records(text.as_bytes()), Err(Error::Data(_))));
        let text = "account_id,timestamp,amount,location_code,merchant_type,channel,label\na,0,5,L,M,pos,0\n";
        assert!(matches!(read_records(text.as_bytes()), Err(Error::Data(_))));
        let text = "account_id,timestamp,amount,location_code,merchant_type,channel,label\na,1,5,L,M,pos,2\n";
        assert!(matches!(read_records(text.as_bytes()), Err(Error::Data(_))));
    }

    #[test]
    fn grouping_is_stable_on_equal_timestamps() {
        let records = vec![rec("b", 5, 1.0), rec("a", 9, 2.0), rec("a", 3, 3.0), rec("a", 9, 4.0)];
        let groups = group_by_account(&records);
        assert_eq!(groups[0].account_id, "a");
        assert_eq!(groups[0].rows, vec![2, 1, 3]);
        assert_eq!(groups[1].rows, vec![0]);
    }

    #[test]
    fn hour_of_day_is_utc_fraction() {
        let r = rec("a", 86_400 * 3 + 5400, 1.0);
        assert_eq!(r.hour_of_day(), 1.5);
    }
}
